//! Evaluation protocols: normal, stolen-token, cross-application,
//! revocability and linkability score sets over a trained system.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hints::IdentityToken;
use crate::imaging::FeatureVector;
use crate::matching::{aggregate, match_score};
use crate::metrics::privacy_leakage;
use crate::report::LeakageReport;
use crate::pipeline::{par_map, Corpus, System, TokenPlan, ENROLL_APPLICATION};
use crate::synthetic::{derive_seed, Split};

/// Token pairs per subject in the linkability protocol.
pub const LINKABILITY_TOKEN_PAIRS: usize = 5;
/// Non-mated comparisons drawn per mated comparison.
pub const NON_MATED_PER_MATED: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Normal,
    Stolen,
    CrossApp,
    Revocability,
    Linkability,
}

impl Scenario {
    pub const ALL: [Scenario; 5] = [
        Scenario::Normal,
        Scenario::Stolen,
        Scenario::CrossApp,
        Scenario::Revocability,
        Scenario::Linkability,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::Normal => "normal",
            Scenario::Stolen => "stolen",
            Scenario::CrossApp => "cross_app",
            Scenario::Revocability => "revocability",
            Scenario::Linkability => "linkability",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scenario {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown scenario {s:?}")))
    }
}

/// Scores of one protocol run. Lists a scenario does not produce stay empty.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreSet {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub genuine: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub impostor: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub pseudo_impostor: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub mated: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub non_mated: Vec<f64>,
}

impl ScoreSet {
    fn lists(&self) -> [(&'static str, &[f64]); 5] {
        [
            ("genuine", &self.genuine),
            ("impostor", &self.impostor),
            ("pseudo_impostor", &self.pseudo_impostor),
            ("mated", &self.mated),
            ("non_mated", &self.non_mated),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        if self.lists().iter().all(|(_, l)| l.is_empty()) {
            return Err(Error::Empty("score set"));
        }
        for (name, l) in self.lists() {
            if let Some(&s) = l.iter().find(|s| !(s.is_finite() && (-1.0..=1.0).contains(*s))) {
                return Err(Error::InvalidParameter(format!("{name} score {s} outside [-1, 1]")));
            }
        }
        Ok(())
    }

    /// CSV with columns `label,score`, lists in declaration order.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let err = |e: csv::Error| Error::format("score csv", e.to_string());
        w.write_record(["label", "score"]).map_err(err)?;
        for (name, l) in self.lists() {
            for s in l {
                w.write_record([name, &format!("{s:.6}")]).map_err(err)?;
            }
        }
        w.flush().map_err(|e| Error::format("score csv", e.to_string()))
    }
}

/// Enrolled subjects must not also appear in the stolen pool.
pub fn check_splits(corpus: &Corpus) -> Result<()> {
    let enrolled = corpus.by_subject(&[Split::EnrolledTrain, Split::EnrolledTest]);
    let stolen = corpus.by_subject(&[Split::StolenTrain, Split::StolenTest]);
    if let Some(s) = enrolled.keys().find(|s| stolen.contains_key(*s)) {
        return Err(Error::SplitViolation(format!("subject {s} is both enrolled and in the stolen pool")));
    }
    let train = corpus.by_subject(&[Split::StolenTrain]);
    let test = corpus.by_subject(&[Split::StolenTest]);
    if let Some(s) = train.keys().find(|s| test.contains_key(*s)) {
        return Err(Error::SplitViolation(format!("subject {s} is in both stolen train and stolen test")));
    }
    Ok(())
}

/// Enrollment templates and test probes of the enrolled pool, shared by the
/// protocols.
pub struct Evaluation<'a> {
    system: &'a System,
    corpus: &'a Corpus,
    tokens: TokenPlan,
    subjects: Vec<String>,
    /// Enrolled-test sample indices per subject.
    probes: Vec<Vec<usize>>,
    templates: Vec<FeatureVector>,
}

impl<'a> Evaluation<'a> {
    /// Enrolls every subject of the enrolled pool with its enrolled-train
    /// samples under its enrolled token.
    pub fn new(system: &'a System, corpus: &'a Corpus, tokens: TokenPlan) -> Result<Self> {
        check_splits(corpus)?;
        let train = corpus.by_subject(&[Split::EnrolledTrain]);
        let test = corpus.by_subject(&[Split::EnrolledTest]);
        let subjects: Vec<String> = corpus
            .enrolled_subjects()
            .into_iter()
            .filter(|s| train.contains_key(s) && test.contains_key(s))
            .collect();
        if subjects.len() < 2 {
            return Err(Error::TooFewSamples {
                what: "enrolled subjects with train and test samples".into(),
                needed: 2,
                got: subjects.len(),
            });
        }
        let templates = par_map(&subjects, |s| {
            let token = tokens.enrolled(s);
            let ts: Vec<FeatureVector> = train[s]
                .iter()
                .map(|&i| system.template_from_mask(corpus.mask(i)?, &token))
                .collect::<Result<_>>()?;
            aggregate(&ts)
        })?;
        let probes = subjects.iter().map(|s| test[s].clone()).collect();
        Ok(Self {
            system,
            corpus,
            tokens,
            subjects,
            probes,
            templates,
        })
    }

    pub fn subjects(&self) -> &[String] {
        &self.subjects
    }

    pub fn templates(&self) -> &[FeatureVector] {
        &self.templates
    }

    fn template(&self, idx: usize, token: &IdentityToken) -> Result<FeatureVector> {
        self.system.template_from_mask(self.corpus.mask(idx)?, token)
    }

    /// Every test probe under its own token against its own template
    /// (genuine) and against every other subject's template (impostor).
    fn normal(&self) -> Result<ScoreSet> {
        let jobs: Vec<(usize, usize)> = self
            .probes
            .iter()
            .enumerate()
            .flat_map(|(s, v)| v.iter().map(move |&i| (s, i)))
            .collect();
        let rows = par_map(&jobs, |&(s, i)| {
            let p = self.template(i, &self.tokens.enrolled(&self.subjects[s]))?;
            self.templates.iter().map(|t| match_score(&p, t)).collect::<Result<Vec<f64>>>()
        })?;
        let mut set = ScoreSet::default();
        for (&(s, _), row) in jobs.iter().zip(rows) {
            for (t, score) in row.into_iter().enumerate() {
                if t == s {
                    set.genuine.push(score);
                } else {
                    set.impostor.push(score);
                }
            }
        }
        Ok(set)
    }

    /// Scores against one subject's template: its own probes (genuine) and
    /// every other subject's probes under their own tokens (impostor).
    pub fn subject_scores(&self, subject: &str) -> Result<ScoreSet> {
        let s = self
            .subjects
            .iter()
            .position(|x| x == subject)
            .ok_or_else(|| Error::InvalidParameter(format!("{subject} is not an enrolled subject")))?;
        let jobs: Vec<(usize, usize)> = self
            .probes
            .iter()
            .enumerate()
            .flat_map(|(t, v)| v.iter().map(move |&i| (t, i)))
            .collect();
        let scores = par_map(&jobs, |&(t, i)| {
            match_score(&self.template(i, &self.tokens.enrolled(&self.subjects[t]))?, &self.templates[s])
        })?;
        let mut set = ScoreSet::default();
        for (&(t, _), score) in jobs.iter().zip(scores) {
            if t == s {
                set.genuine.push(score);
            } else {
                set.impostor.push(score);
            }
        }
        Ok(set)
    }

    /// Each stolen-test sample colorized under each victim's token, scored
    /// against the victim's template.
    fn stolen(&self) -> Result<Vec<f64>> {
        let pool = self.corpus.indices(Split::StolenTest);
        if pool.is_empty() {
            return Err(Error::TooFewSamples {
                what: "stolen-test samples".into(),
                needed: 1,
                got: 0,
            });
        }
        let jobs: Vec<(usize, usize)> = (0..self.subjects.len())
            .flat_map(|v| pool.iter().map(move |&i| (v, i)))
            .collect();
        par_map(&jobs, |&(v, i)| {
            let p = self.template(i, &self.tokens.enrolled(&self.subjects[v]))?;
            match_score(&p, &self.templates[v])
        })
    }

    /// Each test probe under a fresh token of the subject, against the
    /// subject's enrolled template.
    fn pseudo_impostor(&self, token_for: impl Fn(&str) -> IdentityToken + Sync) -> Result<Vec<f64>> {
        let jobs: Vec<(usize, usize)> = self
            .probes
            .iter()
            .enumerate()
            .flat_map(|(s, v)| v.iter().map(move |&i| (s, i)))
            .collect();
        par_map(&jobs, |&(s, i)| {
            let p = self.template(i, &token_for(&self.subjects[s]))?;
            match_score(&p, &self.templates[s])
        })
    }

    /// Mated pairs: two test samples of the same subject (consecutive,
    /// cyclically) under the two tokens of a pair. Non-mated pairs: a sample
    /// under token a against a random other subject's sample under that
    /// subject's token b of the same pair index.
    fn linkability(&self, seed: u64) -> Result<(Vec<f64>, Vec<f64>)> {
        let pair_token = |s: &str, k: usize, side: &str| {
            self.tokens
                .labeled(s, &format!("link-{side}-{k}"), &format!("link/{seed}/{side}/{k}"))
        };
        let jobs: Vec<(usize, usize, usize)> = (0..LINKABILITY_TOKEN_PAIRS)
            .flat_map(|k| {
                self.probes
                    .iter()
                    .enumerate()
                    .flat_map(move |(s, v)| (0..v.len()).map(move |j| (k, s, j)))
            })
            .collect();
        let pairs = par_map(&jobs, |&(k, s, j)| {
            let subject = &self.subjects[s];
            let a = self.template(self.probes[s][j], &pair_token(subject, k, "a"))?;
            let b = self.template(self.probes[s][j], &pair_token(subject, k, "b"))?;
            Ok((a, b))
        })?;
        let index: HashMap<(usize, usize, usize), usize> = jobs.iter().enumerate().map(|(n, &job)| (job, n)).collect();
        let at = |k: usize, s: usize, j: usize| &pairs[index[&(k, s, j)]];
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "linkability"));
        let (mut mated, mut non_mated) = (Vec::new(), Vec::new());
        for &(k, s, j) in &jobs {
            let n = self.probes[s].len();
            let a = &at(k, s, j).0;
            if n > 1 {
                mated.push(match_score(a, &at(k, s, (j + 1) % n).1)?);
            } else {
                mated.push(match_score(a, &at(k, s, j).1)?);
            }
            for _ in 0..NON_MATED_PER_MATED {
                let t = (s + rng.random_range(1..self.subjects.len())) % self.subjects.len();
                let jt = rng.random_range(0..self.probes[t].len());
                non_mated.push(match_score(a, &at(k, t, jt).1)?);
            }
        }
        Ok((mated, non_mated))
    }

    pub fn run(&self, scenario: Scenario, seed: u64) -> Result<ScoreSet> {
        let set = match scenario {
            Scenario::Normal => self.normal()?,
            Scenario::Stolen => ScoreSet {
                impostor: self.stolen()?,
                ..self.normal()?
            },
            Scenario::CrossApp => ScoreSet {
                pseudo_impostor: self.pseudo_impostor(|s| {
                    self.tokens
                        .labeled(s, &format!("app-eval-{seed}"), &format!("cross-eval/{seed}"))
                })?,
                ..self.normal()?
            },
            Scenario::Revocability => ScoreSet {
                pseudo_impostor: self.pseudo_impostor(|s| {
                    self.tokens.labeled(s, ENROLL_APPLICATION, &format!("reissue/{seed}"))
                })?,
                ..self.normal()?
            },
            Scenario::Linkability => {
                let (mated, non_mated) = self.linkability(seed)?;
                ScoreSet {
                    mated,
                    non_mated,
                    ..ScoreSet::default()
                }
            }
        };
        set.validate()?;
        Ok(set)
    }
}

/// One-shot convenience over [`Evaluation`].
pub fn run_protocol(system: &System, corpus: &Corpus, tokens: TokenPlan, scenario: Scenario, seed: u64) -> Result<ScoreSet> {
    Evaluation::new(system, corpus, tokens)?.run(scenario, seed)
}

/// Privacy leakage of every corpus sample's template (under its subject's
/// enrolled token) against the grayscale image and against the segmented
/// pattern.
pub fn leakage_report(system: &System, corpus: &Corpus, tokens: TokenPlan) -> Result<LeakageReport> {
    let idx: Vec<usize> = (0..corpus.len()).collect();
    let templates = par_map(&idx, |&i| {
        system.template_from_mask(corpus.mask(i)?, &tokens.enrolled(&corpus.sample(i).subject_id))
    })?;
    let gray: Vec<Vec<f64>> = corpus.samples().iter().map(|s| s.image.data().to_vec()).collect();
    let binary: Vec<Vec<f64>> = idx
        .iter()
        .map(|&i| Ok(corpus.mask(i)?.data().iter().map(|&b| f64::from(b)).collect()))
        .collect::<Result<_>>()?;
    Ok(LeakageReport {
        grayscale: privacy_leakage(&gray, &templates)?,
        binary: privacy_leakage(&binary, &templates)?,
    })
}
