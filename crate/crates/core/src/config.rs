//! Run configuration: flat `key = value` text with optional `[section]`
//! headers (a key `k` under `[s]` is addressed as `s.k`), overridable key by
//! key from the command line.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attacks::{KnownPositions, DEFAULT_ATTACK_PROBES};
use crate::embedding::{Distance, NegativeReference, TrainConfig};
use crate::error::{Error, Result};
use crate::metrics::DEFAULT_SCORE_BINS;
use crate::pipeline::{Corpus, PipelineParams, TokenPlan};
use crate::protocol::Scenario;
use crate::synthetic::{load_manifest, CorpusSpec, SyntheticCorpus};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Paths {
    pub store: Option<PathBuf>,
    pub vault: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProtocolConfig {
    pub scenario: Scenario,
    pub n_attack: usize,
    pub known_fractions: Vec<f64>,
    pub known_positions: KnownPositions,
    pub bins: usize,
    pub clip: bool,
    /// Hint-to-target Huber threshold reported by `colorize`.
    pub delta: f64,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            scenario: Scenario::Normal,
            n_attack: DEFAULT_ATTACK_PROBES,
            known_fractions: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            known_positions: KnownPositions::PerProbe,
            bins: DEFAULT_SCORE_BINS,
            clip: false,
            delta: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    /// Master seed: corpus generation, training order, protocols, attacks.
    pub seed: u64,
    /// Seed of the evaluation token plan.
    pub token_seed: u64,
    pub paths: Paths,
    pub corpus: CorpusSpec,
    pub pipeline: PipelineParams,
    pub train: TrainConfig,
    /// Other-application tokens per subject drawn for cross-app negatives.
    pub cross_app_tokens: usize,
    pub protocol: ProtocolConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            token_seed: 7,
            paths: Paths::default(),
            corpus: CorpusSpec {
                enrolled: 30,
                stolen_train: 5,
                stolen_test: 5,
                samples_per_subject: 8,
                enroll_samples: 4,
                dims: (64, 64),
                seed: 1,
            },
            pipeline: PipelineParams::default(),
            train: TrainConfig {
                seed: 1,
                ..TrainConfig::default()
            },
            cross_app_tokens: 16,
            protocol: ProtocolConfig::default(),
        }
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

fn parse_list(key: &str, v: &str) -> Result<Vec<f64>> {
    v.split(',').map(|x| parse(key, x.trim())).collect()
}

fn path(v: &str) -> Option<PathBuf> {
    (!v.is_empty()).then(|| PathBuf::from(v))
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

fn snake<T: Serialize>(v: &T) -> String {
    serde_json::to_value(v)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

fn from_snake<T: for<'de> Deserialize<'de>>(key: &str, v: &str) -> Result<T> {
    serde_json::from_value(serde_json::Value::String(v.to_string()))
        .map_err(|_| Error::Config(format!("{key}: unknown value {v:?}")))
}

impl RunConfig {
    /// Parses config text on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut section = String::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split(['#', ';']).next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.trim().to_string();
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            let key = if section.is_empty() {
                k.trim().to_string()
            } else {
                format!("{section}.{}", k.trim())
            };
            cfg.set(&key, v.trim())?;
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let p = path.as_ref();
        Self::parse(&std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?)
    }

    /// Sets one key (dotted form).
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "seed" => {
                self.seed = parse(key, v)?;
                self.corpus.seed = self.seed;
                self.train.seed = self.seed;
            }
            "token_seed" => self.token_seed = parse(key, v)?,
            "paths.store" => self.paths.store = path(v),
            "paths.vault" => self.paths.vault = path(v),
            "paths.manifest" => self.paths.manifest = path(v),
            "paths.checkpoint" => self.paths.checkpoint = path(v),
            "paths.out" => self.paths.out = path(v),
            "corpus.enrolled" => self.corpus.enrolled = parse(key, v)?,
            "corpus.stolen_train" => self.corpus.stolen_train = parse(key, v)?,
            "corpus.stolen_test" => self.corpus.stolen_test = parse(key, v)?,
            "corpus.samples_per_subject" => self.corpus.samples_per_subject = parse(key, v)?,
            "corpus.enroll_samples" => self.corpus.enroll_samples = parse(key, v)?,
            "corpus.height" => self.corpus.dims.0 = parse(key, v)?,
            "corpus.width" => self.corpus.dims.1 = parse(key, v)?,
            "pipeline.m" => self.pipeline.m = parse(key, v)?,
            "propagation.lambda_hint" => self.pipeline.propagation.lambda_hint = parse(key, v)?,
            "propagation.lambda_tone" => self.pipeline.propagation.lambda_tone = parse(key, v)?,
            "propagation.sigma" => self.pipeline.propagation.sigma = parse(key, v)?,
            "propagation.tolerance" => self.pipeline.propagation.tolerance = parse(key, v)?,
            "train.epochs" => self.train.epochs = parse(key, v)?,
            "train.batch_size" => self.train.batch_size = parse(key, v)?,
            "train.lr" => self.train.lr = parse(key, v)?,
            "train.beta1" => self.train.beta1 = parse(key, v)?,
            "train.beta2" => self.train.beta2 = parse(key, v)?,
            "train.epsilon" => self.train.epsilon = parse(key, v)?,
            "train.center_alpha" => self.train.center_alpha = parse(key, v)?,
            "train.margin" => self.train.sc.margin = parse(key, v)?,
            "train.lambda" => {
                let l = parse_list(key, v)?;
                self.train.sc.lambda = l
                    .try_into()
                    .map_err(|_| Error::Config(format!("{key}: expected three weights")))?;
            }
            "train.reference" => self.train.sc.reference = from_snake::<NegativeReference>(key, v)?,
            "train.distance" => self.train.sc.distance = from_snake::<Distance>(key, v)?,
            "train.cross_app_tokens" => self.cross_app_tokens = parse(key, v)?,
            "protocol.scenario" => self.protocol.scenario = v.parse()?,
            "protocol.n_attack" => self.protocol.n_attack = parse(key, v)?,
            "protocol.known_fractions" => self.protocol.known_fractions = parse_list(key, v)?,
            "protocol.known_positions" => self.protocol.known_positions = from_snake(key, v)?,
            "protocol.bins" => self.protocol.bins = parse(key, v)?,
            "protocol.clip" => self.protocol.clip = parse(key, v)?,
            "protocol.delta" => self.protocol.delta = parse(key, v)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Canonical text: every key, fixed order. Parsing it reproduces `self`.
    pub fn to_ini(&self) -> String {
        let c = self;
        let mut s = String::new();
        let _ = writeln!(s, "seed = {}\ntoken_seed = {}", c.seed, c.token_seed);
        let _ = writeln!(
            s,
            "\n[paths]\nstore = {}\nvault = {}\nmanifest = {}\ncheckpoint = {}\nout = {}",
            show_path(&c.paths.store),
            show_path(&c.paths.vault),
            show_path(&c.paths.manifest),
            show_path(&c.paths.checkpoint),
            show_path(&c.paths.out)
        );
        let k = &c.corpus;
        let _ = writeln!(
            s,
            "\n[corpus]\nenrolled = {}\nstolen_train = {}\nstolen_test = {}\nsamples_per_subject = {}\nenroll_samples = {}\nheight = {}\nwidth = {}",
            k.enrolled, k.stolen_train, k.stolen_test, k.samples_per_subject, k.enroll_samples, k.dims.0, k.dims.1
        );
        let _ = writeln!(s, "\n[pipeline]\nm = {}", c.pipeline.m);
        let p = &c.pipeline.propagation;
        let _ = writeln!(
            s,
            "\n[propagation]\nlambda_hint = {:?}\nlambda_tone = {:?}\nsigma = {:?}\ntolerance = {:?}",
            p.lambda_hint, p.lambda_tone, p.sigma, p.tolerance
        );
        let t = &c.train;
        let _ = writeln!(
            s,
            "\n[train]\nepochs = {}\nbatch_size = {}\nlr = {:?}\nbeta1 = {:?}\nbeta2 = {:?}\nepsilon = {:?}\ncenter_alpha = {:?}\nmargin = {:?}\nlambda = {:?},{:?},{:?}\nreference = {}\ndistance = {}\ncross_app_tokens = {}",
            t.epochs,
            t.batch_size,
            t.lr,
            t.beta1,
            t.beta2,
            t.epsilon,
            t.center_alpha,
            t.sc.margin,
            t.sc.lambda[0],
            t.sc.lambda[1],
            t.sc.lambda[2],
            snake(&t.sc.reference),
            snake(&t.sc.distance),
            c.cross_app_tokens
        );
        let q = &c.protocol;
        let fr: Vec<String> = q.known_fractions.iter().map(|f| format!("{f:?}")).collect();
        let _ = writeln!(
            s,
            "\n[protocol]\nscenario = {}\nn_attack = {}\nknown_fractions = {}\nknown_positions = {}\nbins = {}\nclip = {}\ndelta = {:?}",
            q.scenario,
            q.n_attack,
            fr.join(","),
            snake(&q.known_positions),
            q.bins,
            q.clip,
            q.delta
        );
        s
    }

    /// SHA-256 of the canonical text, hex.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_ini().as_bytes()))
    }

    /// Checks numeric parameters against the modules' preconditions and that
    /// referenced input files exist.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.pipeline.m == 0 {
            return bad("pipeline.m must be >= 1");
        }
        if self.cross_app_tokens == 0 {
            return bad("train.cross_app_tokens must be >= 1");
        }
        if self.protocol.n_attack == 0 {
            return bad("protocol.n_attack must be >= 1");
        }
        if self.protocol.bins < 10 {
            return bad("protocol.bins must be >= 10");
        }
        if self.protocol.known_fractions.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return bad("protocol.known_fractions must lie in [0, 1]");
        }
        if !(self.protocol.delta > 0.0) {
            return bad("protocol.delta must be > 0");
        }
        let (h, w) = self.corpus.dims;
        if h < 64 || w < 64 {
            return bad("corpus dims must be at least 64x64");
        }
        self.train.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.pipeline.propagation.validate().map_err(|e| Error::Config(e.to_string()))?;
        if let Some(m) = &self.paths.manifest {
            if !m.exists() {
                return Err(Error::Config(format!("manifest {} does not exist", m.display())));
            }
        }
        Ok(())
    }

    /// The manifest's dataset when a manifest is configured, else the
    /// synthetic corpus described by `[corpus]`.
    pub fn load_corpus(&self) -> Result<Corpus> {
        match &self.paths.manifest {
            Some(m) => Corpus::from_manifest(&load_manifest(m)?),
            None => Corpus::from_synthetic(&SyntheticCorpus::generate(self.corpus)?),
        }
    }

    pub fn token_plan(&self) -> TokenPlan {
        TokenPlan { seed: self.token_seed }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_text_round_trips() {
        let mut c = RunConfig::default();
        c.set("train.lambda", "1, 0.5, 0.25").unwrap();
        c.set("paths.store", "out/store.jsonl").unwrap();
        c.set("protocol.scenario", "cross_app").unwrap();
        c.set("train.reference", "other_centers").unwrap();
        let back = RunConfig::parse(&c.to_ini()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        assert_ne!(RunConfig::default().hash(), c.hash());
    }

    #[test]
    fn sections_comments_and_errors() {
        let c = RunConfig::parse("seed = 5 # master\n; comment\n[pipeline]\nm = 12\n[train]\nepochs=3\n").unwrap();
        assert_eq!((c.seed, c.corpus.seed, c.train.seed), (5, 5, 5));
        assert_eq!(c.pipeline.m, 12);
        assert_eq!(c.train.epochs, 3);
        assert!(RunConfig::parse("bogus = 1").is_err());
        assert!(RunConfig::parse("[pipeline]\nm = x").is_err());
        assert!(RunConfig::parse("novalue").is_err());
        assert!(RunConfig::parse("[train]\nlambda = 1,2").is_err());
        let mut c = RunConfig::default();
        c.validate().unwrap();
        c.pipeline.m = 0;
        assert!(c.validate().is_err());
    }
}
