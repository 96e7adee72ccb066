//! Cosine matching, the template store and token vault, and the
//! enroll / verify / revoke-and-reissue operations.
//!
//! Both the store and the vault are append-only JSON-lines files whose first
//! line is a format header. Revocation appends a tombstone; nothing is
//! rewritten in place. Timestamps are logical (the event index in the file)
//! so that identical command sequences produce identical files.

use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;

use crate::error::{Error, Result};
use crate::hints::{hex_u128, IdentityToken, TokenFingerprint};
use crate::imaging::{format_ticks, parse_ticks, quantize_template, FeatureVector, GrayImage, TEMPLATE_DIM};
use crate::pipeline::System;

pub const STORE_FORMAT: &str = "colorvein-template-store";
pub const VAULT_FORMAT: &str = "colorvein-token-vault";
pub const FORMAT_VERSION: u32 = 1;

/// Cosine similarity of raw vectors.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::WrongLength {
            expected: a.len(),
            actual: b.len(),
        });
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum();
    let nb: f64 = b.iter().map(|x| x * x).sum();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroNorm);
    }
    // sqrt(na * nb) rather than sqrt(na) * sqrt(nb): for a == b the product
    // is na^2 and sqrt returns na exactly, so self-similarity is exactly 1
    Ok((dot / (na * nb).sqrt()).clamp(-1.0, 1.0))
}

/// Match score of two templates.
pub fn match_score(a: &FeatureVector, b: &FeatureVector) -> Result<f64> {
    cosine(&a.components(), &b.components())
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TemplateRecord {
    pub identity_id: String,
    pub application_id: String,
    pub token_fingerprint: TokenFingerprint,
    /// Re-quantized mean of the enrollment templates.
    pub template: FeatureVector,
    /// Logical timestamp: index of the store event that created the record.
    pub created_at: u64,
    pub version: u32,
}

#[derive(Serialize, Deserialize)]
struct FileHeader {
    format: String,
    version: u32,
}

#[derive(Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum LineKind {
    Template,
    Tombstone,
}

#[derive(Deserialize)]
struct Peek {
    kind: LineKind,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TemplateLine {
    kind: LineKind,
    identity_id: String,
    application_id: String,
    token_fingerprint: TokenFingerprint,
    template: Box<RawValue>,
    created_at: u64,
    version: u32,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TombstoneLine {
    kind: LineKind,
    identity_id: String,
    application_id: String,
    token_fingerprint: TokenFingerprint,
    created_at: u64,
}

fn line_kind(line: &str) -> Result<LineKind> {
    serde_json::from_str::<Peek>(line)
        .map(|p| p.kind)
        .map_err(|e| Error::format("store line", e.to_string()))
}

fn encode_template(t: &FeatureVector) -> Box<RawValue> {
    let body: Vec<String> = t.ticks().iter().map(|&v| format_ticks(v)).collect();
    RawValue::from_string(format!("[{}]", body.join(","))).expect("fixed-point list is valid JSON")
}

fn decode_template(raw: &RawValue) -> Result<FeatureVector> {
    let text = raw.get().trim();
    let inner = text
        .strip_prefix('[')
        .and_then(|s| s.strip_suffix(']'))
        .ok_or_else(|| Error::format("template", "expected a JSON array"))?;
    let parts: Vec<&str> = inner.split(',').map(str::trim).collect();
    if parts.len() != TEMPLATE_DIM {
        return Err(Error::WrongLength {
            expected: TEMPLATE_DIM,
            actual: parts.len(),
        });
    }
    let mut ticks = [0i32; TEMPLATE_DIM];
    for (t, p) in ticks.iter_mut().zip(&parts) {
        *t = parse_ticks(p).ok_or_else(|| Error::format("template", format!("component {p:?} is not 4-decimal fixed point")))?;
    }
    FeatureVector::from_ticks(ticks)
}

impl TemplateRecord {
    /// One store line.
    pub fn to_json(&self) -> String {
        serde_json::to_string(&TemplateLine {
            kind: LineKind::Template,
            identity_id: self.identity_id.clone(),
            application_id: self.application_id.clone(),
            token_fingerprint: self.token_fingerprint,
            template: encode_template(&self.template),
            created_at: self.created_at,
            version: self.version,
        })
        .expect("record serializes")
    }

    pub fn from_json(line: &str) -> Result<Self> {
        let l: TemplateLine =
            serde_json::from_str(line).map_err(|e| Error::format("template record", e.to_string()))?;
        if l.kind != LineKind::Template {
            return Err(Error::format("template record", "line is a tombstone"));
        }
        Ok(Self {
            identity_id: l.identity_id,
            application_id: l.application_id,
            token_fingerprint: l.token_fingerprint,
            template: decode_template(&l.template)?,
            created_at: l.created_at,
            version: l.version,
        })
    }
}

/// Appends lines to a JSON-lines file, writing the header on creation.
#[derive(Debug)]
struct JsonlFile {
    path: Option<PathBuf>,
}

impl JsonlFile {
    /// Opens (or creates) `path`, checks the header and returns the body
    /// lines.
    fn open(path: &Path, format: &str) -> Result<(Self, Vec<String>)> {
        if !path.exists() {
            let header = serde_json::to_string(&FileHeader {
                format: format.to_string(),
                version: FORMAT_VERSION,
            })
            .expect("header serializes");
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            fs::write(path, header + "\n").map_err(|e| Error::io(path, e))?;
            return Ok((Self { path: Some(path.to_path_buf()) }, Vec::new()));
        }
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = Vec::new();
        for line in BufReader::new(file).lines() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if !line.trim().is_empty() {
                lines.push(line);
            }
        }
        let header: FileHeader = lines
            .first()
            .ok_or_else(|| Error::format("store", format!("{} has no header", path.display())))
            .and_then(|h| serde_json::from_str(h).map_err(|e| Error::format("store", format!("header: {e}"))))?;
        if header.format != format || header.version != FORMAT_VERSION {
            return Err(Error::format(
                "store",
                format!(
                    "{} is {} v{}, expected {format} v{FORMAT_VERSION}",
                    path.display(),
                    header.format,
                    header.version
                ),
            ));
        }
        lines.remove(0);
        Ok((Self { path: Some(path.to_path_buf()) }, lines))
    }

    fn append(&self, line: &str) -> Result<()> {
        let Some(path) = &self.path else {
            return Ok(());
        };
        let mut f = OpenOptions::new().append(true).open(path).map_err(|e| Error::io(path, e))?;
        writeln!(f, "{line}").map_err(|e| Error::io(path, e))
    }
}

/// Template records plus tombstones, optionally backed by a file.
#[derive(Debug)]
pub struct TemplateStore {
    file: JsonlFile,
    records: Vec<TemplateRecord>,
    tombstoned: Vec<bool>,
    events: u64,
}

impl TemplateStore {
    pub fn in_memory() -> Self {
        Self {
            file: JsonlFile { path: None },
            records: Vec::new(),
            tombstoned: Vec::new(),
            events: 0,
        }
    }

    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let (file, lines) = JsonlFile::open(path.as_ref(), STORE_FORMAT)?;
        let mut store = Self {
            file,
            records: Vec::new(),
            tombstoned: Vec::new(),
            events: 0,
        };
        for line in lines {
            match line_kind(&line)? {
                LineKind::Template => {
                    store.records.push(TemplateRecord::from_json(&line)?);
                    store.tombstoned.push(false);
                }
                LineKind::Tombstone => {
                    let t: TombstoneLine =
                        serde_json::from_str(&line).map_err(|e| Error::format("store line", e.to_string()))?;
                    let i = store
                        .live_index(&t.identity_id, &t.application_id)
                        .filter(|&i| store.records[i].token_fingerprint == t.token_fingerprint)
                        .ok_or_else(|| {
                            Error::format(
                                "store",
                                format!("tombstone for unknown record {}/{}", t.identity_id, t.application_id),
                            )
                        })?;
                    store.tombstoned[i] = true;
                }
            }
            store.events += 1;
        }
        Ok(store)
    }

    fn live_index(&self, identity_id: &str, application_id: &str) -> Option<usize> {
        (0..self.records.len()).rev().find(|&i| {
            !self.tombstoned[i]
                && self.records[i].identity_id == identity_id
                && self.records[i].application_id == application_id
        })
    }

    pub fn live(&self, identity_id: &str, application_id: &str) -> Option<&TemplateRecord> {
        self.live_index(identity_id, application_id).map(|i| &self.records[i])
    }

    pub fn live_records(&self) -> impl Iterator<Item = &TemplateRecord> {
        self.records.iter().zip(&self.tombstoned).filter(|(_, &t)| !t).map(|(r, _)| r)
    }

    /// Whether a tombstoned record carries this fingerprint.
    pub fn is_revoked(&self, fp: &TokenFingerprint) -> bool {
        self.records
            .iter()
            .zip(&self.tombstoned)
            .any(|(r, &t)| t && r.token_fingerprint == *fp)
    }

    pub fn all_records(&self) -> &[TemplateRecord] {
        &self.records
    }

    /// Appends a new record, stamping `created_at`.
    pub fn insert(&mut self, mut record: TemplateRecord) -> Result<TemplateRecord> {
        if self.live(&record.identity_id, &record.application_id).is_some() {
            return Err(Error::DuplicateEnrollment {
                identity_id: record.identity_id,
                application_id: record.application_id,
            });
        }
        record.created_at = self.events;
        record.version = FORMAT_VERSION;
        self.file.append(&record.to_json())?;
        self.events += 1;
        self.records.push(record.clone());
        self.tombstoned.push(false);
        Ok(record)
    }

    /// Tombstones the live record and returns it.
    pub fn tombstone(&mut self, identity_id: &str, application_id: &str) -> Result<TemplateRecord> {
        let i = self.live_index(identity_id, application_id).ok_or_else(|| Error::MissingRecord {
            identity_id: identity_id.to_string(),
            application_id: application_id.to_string(),
        })?;
        let rec = &self.records[i];
        let line = TombstoneLine {
            kind: LineKind::Tombstone,
            identity_id: rec.identity_id.clone(),
            application_id: rec.application_id.clone(),
            token_fingerprint: rec.token_fingerprint,
            created_at: self.events,
        };
        self.file.append(&serde_json::to_string(&line).expect("tombstone serializes"))?;
        self.events += 1;
        self.tombstoned[i] = true;
        Ok(self.records[i].clone())
    }
}

/// A vault entry: the token plus the hint count it was issued with.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenRecord {
    pub identity_id: String,
    pub application_id: String,
    #[serde(with = "hex_u128")]
    pub seed: u128,
    pub m: usize,
}

impl TokenRecord {
    pub fn token(&self) -> IdentityToken {
        IdentityToken::new(&self.identity_id, &self.application_id, self.seed)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Revocation {
    revoked: TokenFingerprint,
    identity_id: String,
    application_id: String,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum VaultLine {
    Token(TokenRecord),
    Revocation(Revocation),
}

#[derive(Debug)]
pub struct TokenVault {
    file: JsonlFile,
    tokens: Vec<TokenRecord>,
    revoked: Vec<bool>,
}

impl TokenVault {
    pub fn in_memory() -> Self {
        Self {
            file: JsonlFile { path: None },
            tokens: Vec::new(),
            revoked: Vec::new(),
        }
    }

    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let (file, lines) = JsonlFile::open(path.as_ref(), VAULT_FORMAT)?;
        let mut vault = Self {
            file,
            tokens: Vec::new(),
            revoked: Vec::new(),
        };
        for line in lines {
            match serde_json::from_str(&line).map_err(|e| Error::format("vault line", e.to_string()))? {
                VaultLine::Token(t) => {
                    vault.tokens.push(t);
                    vault.revoked.push(false);
                }
                VaultLine::Revocation(r) => {
                    let i = vault
                        .tokens
                        .iter()
                        .position(|t| t.token().fingerprint() == r.revoked)
                        .ok_or_else(|| Error::format("vault", format!("revocation of unknown token {}", r.revoked)))?;
                    vault.revoked[i] = true;
                }
            }
        }
        Ok(vault)
    }

    fn live_index(&self, identity_id: &str, application_id: &str) -> Option<usize> {
        (0..self.tokens.len()).rev().find(|&i| {
            !self.revoked[i] && self.tokens[i].identity_id == identity_id && self.tokens[i].application_id == application_id
        })
    }

    pub fn live(&self, identity_id: &str, application_id: &str) -> Option<&TokenRecord> {
        self.live_index(identity_id, application_id).map(|i| &self.tokens[i])
    }

    /// Binds a token. Re-issuing the identical live token is a no-op;
    /// binding a different token while one is live is an error.
    pub fn issue(&mut self, token: &IdentityToken, m: usize) -> Result<()> {
        if let Some(live) = self.live(&token.identity_id, &token.application_id) {
            if live.token() == *token && live.m == m {
                return Ok(());
            }
            return Err(Error::DuplicateEnrollment {
                identity_id: token.identity_id.clone(),
                application_id: token.application_id.clone(),
            });
        }
        if self.tokens.iter().any(|t| t.token() == *token) {
            return Err(Error::Revoked(token.fingerprint().to_string()));
        }
        let rec = TokenRecord {
            identity_id: token.identity_id.clone(),
            application_id: token.application_id.clone(),
            seed: token.seed,
            m,
        };
        self.file
            .append(&serde_json::to_string(&VaultLine::Token(rec.clone())).expect("token serializes"))?;
        self.tokens.push(rec);
        self.revoked.push(false);
        Ok(())
    }

    pub fn revoke(&mut self, identity_id: &str, application_id: &str) -> Result<TokenRecord> {
        let i = self.live_index(identity_id, application_id).ok_or_else(|| Error::MissingToken {
            identity_id: identity_id.to_string(),
            application_id: application_id.to_string(),
        })?;
        let line = VaultLine::Revocation(Revocation {
            revoked: self.tokens[i].token().fingerprint(),
            identity_id: identity_id.to_string(),
            application_id: application_id.to_string(),
        });
        self.file.append(&serde_json::to_string(&line).expect("revocation serializes"))?;
        self.revoked[i] = true;
        Ok(self.tokens[i].clone())
    }
}

/// Component-wise mean of several templates, re-quantized.
pub fn aggregate(templates: &[FeatureVector]) -> Result<FeatureVector> {
    if templates.is_empty() {
        return Err(Error::Empty("enrollment templates"));
    }
    let mut sum = [0.0; TEMPLATE_DIM];
    for t in templates {
        sum.iter_mut().zip(t.components()).for_each(|(s, c)| *s += c);
    }
    let n = templates.len() as f64;
    quantize_template(&sum.map(|s| s / n))
}

fn enrollment_template(images: &[GrayImage], token: &IdentityToken, system: &System) -> Result<FeatureVector> {
    let templates: Vec<FeatureVector> = images.iter().map(|img| system.template(img, token)).collect::<Result<_>>()?;
    aggregate(&templates)
}

pub fn enroll(
    identity_id: &str,
    images: &[GrayImage],
    token: &IdentityToken,
    system: &System,
    store: &mut TemplateStore,
    vault: &mut TokenVault,
) -> Result<TemplateRecord> {
    if token.identity_id != identity_id {
        return Err(Error::InvalidParameter(format!(
            "token belongs to {:?}, not {identity_id:?}",
            token.identity_id
        )));
    }
    if store.live(identity_id, &token.application_id).is_some() {
        return Err(Error::DuplicateEnrollment {
            identity_id: identity_id.to_string(),
            application_id: token.application_id.clone(),
        });
    }
    let template = enrollment_template(images, token, system)?;
    vault.issue(token, system.params.m)?;
    store.insert(TemplateRecord {
        identity_id: identity_id.to_string(),
        application_id: token.application_id.clone(),
        token_fingerprint: token.fingerprint(),
        template,
        created_at: 0,
        version: FORMAT_VERSION,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verification {
    pub accepted: bool,
    pub score: f64,
}

fn score_against(
    probe: &GrayImage,
    token: &IdentityToken,
    m: usize,
    record: &TemplateRecord,
    threshold: f64,
    system: &System,
) -> Result<Verification> {
    let sys = System {
        model: system.model.clone(),
        params: crate::pipeline::PipelineParams { m, ..system.params },
    };
    let score = match_score(&sys.template(probe, token)?, &record.template)?;
    Ok(Verification {
        accepted: score >= threshold,
        score,
    })
}

/// Verifies `probe` against the live record of `(identity_id,
/// application_id)` using the vault's live token.
pub fn verify(
    probe: &GrayImage,
    identity_id: &str,
    application_id: &str,
    threshold: f64,
    system: &System,
    store: &TemplateStore,
    vault: &TokenVault,
) -> Result<Verification> {
    let tok = vault.live(identity_id, application_id).ok_or_else(|| Error::MissingToken {
        identity_id: identity_id.to_string(),
        application_id: application_id.to_string(),
    })?;
    let record = store.live(identity_id, application_id).ok_or_else(|| Error::MissingRecord {
        identity_id: identity_id.to_string(),
        application_id: application_id.to_string(),
    })?;
    let token = tok.token();
    if record.token_fingerprint != token.fingerprint() {
        return Err(Error::ProvenanceMismatch {
            expected: record.token_fingerprint.to_string(),
            actual: token.fingerprint().to_string(),
        });
    }
    score_against(probe, &token, tok.m, record, threshold, system)
}

/// Verifies with a presented token; revoked tokens are refused.
pub fn verify_token(
    probe: &GrayImage,
    token: &IdentityToken,
    threshold: f64,
    system: &System,
    store: &TemplateStore,
) -> Result<Verification> {
    let fp = token.fingerprint();
    if store.is_revoked(&fp) {
        return Err(Error::Revoked(fp.to_string()));
    }
    let record = store
        .live(&token.identity_id, &token.application_id)
        .filter(|r| r.token_fingerprint == fp)
        .ok_or_else(|| Error::MissingRecord {
            identity_id: token.identity_id.clone(),
            application_id: token.application_id.clone(),
        })?;
    score_against(probe, token, system.params.m, record, threshold, system)
}

/// Tombstones the live record and its token, binds a token with `new_seed`
/// and enrolls `images` under it.
pub fn revoke_reissue(
    identity_id: &str,
    application_id: &str,
    new_seed: u128,
    images: &[GrayImage],
    system: &System,
    store: &mut TemplateStore,
    vault: &mut TokenVault,
) -> Result<TemplateRecord> {
    let old = store.live(identity_id, application_id).ok_or_else(|| Error::MissingRecord {
        identity_id: identity_id.to_string(),
        application_id: application_id.to_string(),
    })?;
    let token = IdentityToken::new(identity_id, application_id, new_seed);
    if token.fingerprint() == old.token_fingerprint {
        return Err(Error::InvalidParameter("reissue needs a different seed".into()));
    }
    let template = enrollment_template(images, &token, system)?;
    store.tombstone(identity_id, application_id)?;
    if vault.live(identity_id, application_id).is_some() {
        vault.revoke(identity_id, application_id)?;
    }
    vault.issue(&token, system.params.m)?;
    store.insert(TemplateRecord {
        identity_id: identity_id.to_string(),
        application_id: application_id.to_string(),
        token_fingerprint: token.fingerprint(),
        template,
        created_at: 0,
        version: FORMAT_VERSION,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fv(head: &[i32]) -> FeatureVector {
        let mut t = [0; TEMPLATE_DIM];
        t[..head.len()].copy_from_slice(head);
        FeatureVector::from_ticks(t).unwrap()
    }

    #[test]
    fn score_examples() {
        let a = fv(&[10000, 20000, 30000]);
        assert_eq!(match_score(&a, &a).unwrap(), 1.0);
        assert_eq!(match_score(&fv(&[10000]), &fv(&[0, 10000])).unwrap(), 0.0);
        let s = match_score(&a, &fv(&[40000, 50000, 60000])).unwrap();
        assert!((s - 32.0 / 1078f64.sqrt()).abs() < 1e-15);
        assert!((s - 0.97463).abs() < 5e-6);
        assert!(matches!(match_score(&a, &fv(&[])), Err(Error::ZeroNorm)));
    }

    fn record(id: &str, seed: u128) -> TemplateRecord {
        TemplateRecord {
            identity_id: id.into(),
            application_id: "app".into(),
            token_fingerprint: IdentityToken::new(id, "app", seed).fingerprint(),
            template: fv(&[-12345, 100000, -100000, 1]),
            created_at: 0,
            version: FORMAT_VERSION,
        }
    }

    #[test]
    fn record_json_uses_fixed_point() {
        let r = record("alice", 1);
        let line = r.to_json();
        assert!(line.contains("[-1.2345,10.0000,-10.0000,0.0001,0.0000,"), "{line}");
        assert_eq!(TemplateRecord::from_json(&line).unwrap(), r);
        let bad = line.replace("-1.2345", "-1.23456");
        assert!(TemplateRecord::from_json(&bad).is_err());
    }

    #[test]
    fn store_persists_and_tombstones() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("store.jsonl");
        let mut s = TemplateStore::open(&p).unwrap();
        let a = s.insert(record("alice", 1)).unwrap();
        assert_eq!(a.created_at, 0);
        assert!(matches!(s.insert(record("alice", 2)), Err(Error::DuplicateEnrollment { .. })));
        s.insert(record("bob", 1)).unwrap();
        s.tombstone("alice", "app").unwrap();
        let b = s.insert(record("alice", 2)).unwrap();
        assert_eq!(b.created_at, 3);

        let reopened = TemplateStore::open(&p).unwrap();
        assert_eq!(reopened.live("alice", "app"), Some(&b));
        assert!(reopened.is_revoked(&a.token_fingerprint));
        assert_eq!(reopened.live_records().count(), 2);
        assert_eq!(reopened.all_records().len(), 3);
        let text = fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("{\"format\":\"colorvein-template-store\",\"version\":1}\n"));
    }

    #[test]
    fn vault_issue_revoke() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("vault.jsonl");
        let mut v = TokenVault::open(&p).unwrap();
        let t1 = IdentityToken::new("alice", "app", 0xabc);
        v.issue(&t1, 10).unwrap();
        v.issue(&t1, 10).unwrap();
        assert!(v.issue(&IdentityToken::new("alice", "app", 2), 10).is_err());
        v.revoke("alice", "app").unwrap();
        assert!(v.live("alice", "app").is_none());
        assert!(matches!(v.issue(&t1, 10), Err(Error::Revoked(_))));
        let t2 = IdentityToken::new("alice", "app", 2);
        v.issue(&t2, 10).unwrap();
        let re = TokenVault::open(&p).unwrap();
        assert_eq!(re.live("alice", "app").unwrap().token(), t2);
        let text = fs::read_to_string(&p).unwrap();
        assert!(text.contains(
            "{\"identity_id\":\"alice\",\"application_id\":\"app\",\"seed\":\"00000000000000000000000000000abc\",\"m\":10}"
        ));
    }

    #[test]
    fn wrong_header_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.jsonl");
        TokenVault::open(&p).unwrap();
        assert!(TemplateStore::open(&p).is_err());
    }
}
