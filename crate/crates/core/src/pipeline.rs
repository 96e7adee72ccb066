//! The protection pipeline (segment, derive and align hints, colorize, embed)
//! and the corpus plumbing shared by training, evaluation and the CLI.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, OnceLock};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::colorize::{colorize_pattern, ColorVein, PropagationParams};
use crate::embedding::{self, encode, Arch, EmbeddingModel, EncodedSample, Quintuple, TrainConfig, TrainOutcome};
use crate::error::{Error, Result};
use crate::extraction::segment;
use crate::hints::{align_hints, derive_hints, IdentityToken, TokenFingerprint};
use crate::imaging::{load_gray, BinaryPattern, FeatureVector, GrayImage};
use crate::synthetic::{derive_seed, DatasetManifest, Split, SyntheticCorpus};

pub const DEFAULT_HINT_COUNT: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineParams {
    /// Hint count `m`.
    pub m: usize,
    #[serde(skip, default)]
    pub propagation: PropagationParams,
}

impl Default for PipelineParams {
    fn default() -> Self {
        Self {
            m: DEFAULT_HINT_COUNT,
            propagation: PropagationParams::default(),
        }
    }
}

/// Colorizes a vein pattern under `token`: hints are derived on the pattern
/// itself and then aligned to it, so the recorded offset is normally zero.
pub fn protect(mask: &BinaryPattern, token: &IdentityToken, params: &PipelineParams) -> Result<ColorVein> {
    let hints = derive_hints(token, mask, params.m)?;
    let (aligned, offset) = align_hints(&hints, mask);
    colorize_pattern(mask, &aligned, offset, &params.propagation)
}

/// A trained extractor plus the pipeline parameters it was trained with.
#[derive(Clone, Debug)]
pub struct System {
    pub model: EmbeddingModel,
    pub params: PipelineParams,
}

impl System {
    pub fn protect_image(&self, image: &GrayImage, token: &IdentityToken) -> Result<ColorVein> {
        protect(&segment(image)?, token, &self.params)
    }

    pub fn template(&self, image: &GrayImage, token: &IdentityToken) -> Result<FeatureVector> {
        embedding::embed(&self.protect_image(image, token)?, &self.model)
    }

    pub fn template_from_mask(&self, mask: &BinaryPattern, token: &IdentityToken) -> Result<FeatureVector> {
        embedding::embed(&protect(mask, token, &self.params)?, &self.model)
    }

    /// Unquantized embedding.
    pub fn raw_embedding(&self, mask: &BinaryPattern, token: &IdentityToken) -> Result<Vec<f64>> {
        self.model.embed_raw(&encode(&protect(mask, token, &self.params)?))
    }
}

#[derive(Clone, Debug)]
pub struct CorpusSample {
    pub subject_id: String,
    pub sample_idx: usize,
    pub split: Split,
    pub image: GrayImage,
}

/// Images with split labels and lazily segmented masks.
#[derive(Debug)]
pub struct Corpus {
    samples: Vec<CorpusSample>,
    masks: Vec<OnceLock<BinaryPattern>>,
}

impl Corpus {
    pub fn new(mut samples: Vec<CorpusSample>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Empty("corpus"));
        }
        samples.sort_by(|a, b| (&a.subject_id, a.sample_idx).cmp(&(&b.subject_id, b.sample_idx)));
        let dims = samples[0].image.dims();
        if let Some(s) = samples.iter().find(|s| s.image.dims() != dims) {
            return Err(Error::DimensionMismatch {
                expected: dims,
                actual: s.image.dims(),
            });
        }
        let masks = samples.iter().map(|_| OnceLock::new()).collect();
        Ok(Self { samples, masks })
    }

    pub fn from_synthetic(corpus: &SyntheticCorpus) -> Result<Self> {
        Self::new(
            corpus
                .samples()
                .map(|(id, k, split, img)| CorpusSample {
                    subject_id: id.to_string(),
                    sample_idx: k,
                    split,
                    image: img.clone(),
                })
                .collect(),
        )
    }

    pub fn from_manifest(manifest: &DatasetManifest) -> Result<Self> {
        let mut samples = Vec::with_capacity(manifest.entries.len());
        for e in &manifest.entries {
            samples.push(CorpusSample {
                subject_id: e.subject_id.clone(),
                sample_idx: e.sample_idx,
                split: e.split,
                image: load_gray(&e.path, None)?,
            });
        }
        Self::new(samples)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.samples[0].image.dims()
    }

    pub fn sample(&self, i: usize) -> &CorpusSample {
        &self.samples[i]
    }

    pub fn samples(&self) -> &[CorpusSample] {
        &self.samples
    }

    /// Segmented pattern of sample `i`, computed once.
    pub fn mask(&self, i: usize) -> Result<&BinaryPattern> {
        if let Some(m) = self.masks[i].get() {
            return Ok(m);
        }
        let m = segment(&self.samples[i].image)?;
        Ok(self.masks[i].get_or_init(|| m))
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.samples.len()).filter(|&i| self.samples[i].split == split).collect()
    }

    /// Sample indices per subject of the given splits, subjects sorted.
    pub fn by_subject(&self, splits: &[Split]) -> BTreeMap<String, Vec<usize>> {
        let mut out: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, s) in self.samples.iter().enumerate() {
            if splits.contains(&s.split) {
                out.entry(s.subject_id.clone()).or_default().push(i);
            }
        }
        out
    }

    /// Sorted subject ids of the enrolled pool.
    pub fn enrolled_subjects(&self) -> Vec<String> {
        self.by_subject(&[Split::EnrolledTrain, Split::EnrolledTest]).into_keys().collect()
    }
}

/// Deterministic token assignment for evaluation runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenPlan {
    pub seed: u64,
}

pub const ENROLL_APPLICATION: &str = "app-0";

impl TokenPlan {
    fn seed128(&self, label: &str) -> u128 {
        let hi = derive_seed(self.seed, &format!("{label}/hi")) as u128;
        let lo = derive_seed(self.seed, &format!("{label}/lo")) as u128;
        (hi << 64) | lo
    }

    /// The subject's token for the enrolling application.
    pub fn enrolled(&self, subject: &str) -> IdentityToken {
        IdentityToken::new(subject, ENROLL_APPLICATION, self.seed128(&format!("enroll/{subject}")))
    }

    /// A token for `(subject, application)` keyed by an arbitrary label.
    pub fn labeled(&self, subject: &str, application: &str, label: &str) -> IdentityToken {
        IdentityToken::new(subject, application, self.seed128(&format!("{label}/{subject}")))
    }

    /// Token `j` (0-based) of a further application `app-{j+1}`.
    pub fn cross_app(&self, subject: &str, j: usize) -> IdentityToken {
        IdentityToken::new(
            subject,
            format!("app-{}", j + 1),
            self.seed128(&format!("cross/{subject}/{j}")),
        )
    }
}

/// Colorized, encoded samples keyed by (sample, token).
pub struct ColorizeCache<'c> {
    corpus: &'c Corpus,
    params: PipelineParams,
    map: HashMap<(usize, TokenFingerprint), Arc<[f64]>>,
}

impl<'c> ColorizeCache<'c> {
    pub fn new(corpus: &'c Corpus, params: PipelineParams) -> Self {
        Self {
            corpus,
            params,
            map: HashMap::new(),
        }
    }

    pub fn corpus(&self) -> &'c Corpus {
        self.corpus
    }

    pub fn encoded(&mut self, idx: usize, token: &IdentityToken) -> Result<EncodedSample> {
        let fp = token.fingerprint();
        let input = match self.map.get(&(idx, fp)) {
            Some(v) => v.clone(),
            None => {
                let cv = protect(self.corpus.mask(idx)?, token, &self.params)?;
                let v: Arc<[f64]> = encode(&cv).into();
                self.map.insert((idx, fp), v.clone());
                v
            }
        };
        let s = self.corpus.sample(idx);
        Ok(EncodedSample {
            subject_id: s.subject_id.clone(),
            sample_idx: s.sample_idx,
            token_fingerprint: fp,
            input,
        })
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// Draws training quintuples from the enrolled-train and stolen-train pools.
pub struct QuintupleBuilder<'c> {
    cache: ColorizeCache<'c>,
    tokens: TokenPlan,
    /// Enrolled subjects; the class id is the index.
    classes: Vec<String>,
    /// Enrolled-train sample indices per class.
    by_class: Vec<Vec<usize>>,
    stolen: Vec<usize>,
    cross_app_tokens: usize,
    seed: u64,
}

impl<'c> QuintupleBuilder<'c> {
    pub fn new(
        corpus: &'c Corpus,
        params: PipelineParams,
        tokens: TokenPlan,
        cross_app_tokens: usize,
        seed: u64,
    ) -> Result<Self> {
        let train = corpus.by_subject(&[Split::EnrolledTrain]);
        let classes = corpus.enrolled_subjects();
        let by_class: Vec<Vec<usize>> = classes.iter().map(|c| train.get(c).cloned().unwrap_or_default()).collect();
        if by_class.iter().filter(|v| !v.is_empty()).count() < 2 {
            return Err(Error::TooFewSamples {
                what: "enrolled classes with training samples".into(),
                needed: 2,
                got: by_class.iter().filter(|v| !v.is_empty()).count(),
            });
        }
        let stolen = corpus.indices(Split::StolenTrain);
        if stolen.is_empty() {
            return Err(Error::TooFewSamples {
                what: "stolen-train samples".into(),
                needed: 1,
                got: 0,
            });
        }
        if cross_app_tokens == 0 {
            return Err(Error::InvalidParameter("need at least one cross-application token".into()));
        }
        Ok(Self {
            cache: ColorizeCache::new(corpus, params),
            tokens,
            classes,
            by_class,
            stolen,
            cross_app_tokens,
            seed,
        })
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    /// Every enrolled-train sample is an anchor once, in shuffled order. The
    /// impostor is a random enrolled-train sample of another class under that
    /// class's token; the cross-application negative is the anchor pattern
    /// under one of the subject's other-application tokens; the stolen
    /// negative is a random stolen-train pattern under the anchor's token.
    pub fn epoch(&mut self, epoch: usize) -> Result<Vec<Quintuple>> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, &format!("quintuples/{epoch}")));
        let mut anchors: Vec<(usize, usize)> = self
            .by_class
            .iter()
            .enumerate()
            .flat_map(|(c, v)| v.iter().map(move |&i| (c, i)))
            .collect();
        anchors.shuffle(&mut rng);
        let populated: Vec<usize> = (0..self.classes.len()).filter(|&c| !self.by_class[c].is_empty()).collect();
        let mut out = Vec::with_capacity(anchors.len());
        for (class, idx) in anchors {
            let subject = &self.classes[class];
            let own = self.tokens.enrolled(subject);
            let other = loop {
                let c = populated[rng.random_range(0..populated.len())];
                if c != class {
                    break c;
                }
            };
            let imp_idx = self.by_class[other][rng.random_range(0..self.by_class[other].len())];
            let imp_token = self.tokens.enrolled(&self.classes[other]);
            let cross = self.tokens.cross_app(subject, rng.random_range(0..self.cross_app_tokens));
            let stolen_idx = self.stolen[rng.random_range(0..self.stolen.len())];
            out.push(Quintuple {
                class_id: class,
                anchor: self.cache.encoded(idx, &own)?,
                neg_impostor: self.cache.encoded(imp_idx, &imp_token)?,
                neg_cross_app: self.cache.encoded(idx, &cross)?,
                neg_stolen: self.cache.encoded(stolen_idx, &own)?,
            });
        }
        Ok(out)
    }
}

/// Trains an extractor on `corpus` and wraps it as a [`System`].
pub fn train_system(
    corpus: &Corpus,
    params: PipelineParams,
    tokens: TokenPlan,
    config: &TrainConfig,
    cross_app_tokens: usize,
) -> Result<(System, TrainOutcome)> {
    let mut builder = QuintupleBuilder::new(corpus, params, tokens, cross_app_tokens, config.seed)?;
    let (h, w) = corpus.dims();
    let arch = Arch::desk_scale(h, w, builder.classes().len());
    let outcome = embedding::train(arch, config, |e| builder.epoch(e))?;
    Ok((
        System {
            model: outcome.model.clone(),
            params,
        },
        outcome,
    ))
}

/// Worker count: `COLORVEIN_THREADS` if set, else the available parallelism.
pub fn thread_count() -> usize {
    std::env::var("COLORVEIN_THREADS")
        .ok()
        .and_then(|s| s.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Maps `f` over `items` on up to [`thread_count`] threads. Results come back
/// in input order, and the first error (by index) wins, so the outcome does
/// not depend on scheduling.
pub fn par_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> Result<R> + Sync) -> Result<Vec<R>> {
    let threads = thread_count().min(items.len()).max(1);
    if threads == 1 {
        return items.iter().map(&f).collect();
    }
    let chunk = items.len().div_ceil(threads);
    let f = &f;
    let parts: Vec<Vec<Result<R>>> = std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|c| s.spawn(move || c.iter().map(f).collect::<Vec<_>>()))
            .collect();
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
    });
    parts.into_iter().flatten().collect()
}
