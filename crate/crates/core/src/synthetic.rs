//! Seeded synthetic vein imagery with ground truth, and the manifest/split
//! machinery shared with real datasets.
//!
//! A subject is a random branching vessel tree. Each sample renders the tree
//! under a small rigid jitter as dark Gaussian-profile valleys on a smooth
//! textured background with additive noise. Ground truth marks pixels within
//! half a vessel width of the jittered skeleton.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::imaging::{save_binary_pgm, save_gray_pgm, BinaryPattern, GrayImage};

pub const MIN_SYNTH_SIDE: usize = 64;
pub const NOISE_SIGMA: f64 = 0.02;
pub const MAX_TRANSLATION: f64 = 5.0;
pub const MAX_ROTATION_DEG: f64 = 3.0;
const STEP: f64 = 2.0;

/// Derives an independent 64-bit seed for a labelled sub-stream.
pub fn derive_seed(master: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(label.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vessel {
    /// Polyline vertices `(x, y)` in pixel coordinates.
    pub points: Vec<(f64, f64)>,
    /// Visible vessel width in pixels.
    pub width: f64,
    /// Intensity drop at the centerline.
    pub depth: f64,
}

/// Skeleton of a subject: vessels plus background texture coefficients.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VesselTree {
    pub vessels: Vec<Vessel>,
    /// `(amplitude, fx, fy, phase)` sinusoids of the background texture.
    texture: Vec<(f64, f64, f64, f64)>,
    base_level: f64,
}

/// Rigid per-sample jitter about the image center.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Jitter {
    pub dx: f64,
    pub dy: f64,
    pub rotation_deg: f64,
}

impl Jitter {
    pub const IDENTITY: Jitter = Jitter {
        dx: 0.0,
        dy: 0.0,
        rotation_deg: 0.0,
    };
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSubject {
    pub subject_id: String,
    pub seed: u64,
    pub base_tree: VesselTree,
    pub jitters: Vec<Jitter>,
    pub samples: Vec<GrayImage>,
    pub ground_truth: Vec<BinaryPattern>,
}

fn random_tree(rng: &mut ChaCha8Rng, h: usize, w: usize) -> VesselTree {
    let (hf, wf) = (h as f64, w as f64);
    let n_vessels = rng.random_range(3..=7usize);
    let inside = |x: f64, y: f64| x >= -8.0 && y >= -8.0 && x <= wf + 8.0 && y <= hf + 8.0;
    let curl = Normal::new(0.0, 0.07).expect("valid normal");
    let mut vessels: Vec<Vessel> = Vec::with_capacity(n_vessels);

    // trunk crosses the image roughly along its long axis
    let (mut x, mut y, mut heading) = if w >= h {
        (-6.0, rng.random_range(0.25..0.75) * hf, rng.random_range(-0.3..0.3))
    } else {
        (
            rng.random_range(0.25..0.75) * wf,
            -6.0,
            std::f64::consts::FRAC_PI_2 + rng.random_range(-0.3..0.3),
        )
    };
    let mut pts = vec![(x, y)];
    while inside(x, y) && pts.len() < 4 * (h + w) {
        heading += curl.sample(rng);
        x += STEP * heading.cos();
        y += STEP * heading.sin();
        pts.push((x, y));
    }
    vessels.push(Vessel {
        points: pts,
        width: rng.random_range(5.0..=7.0),
        depth: rng.random_range(0.2..0.3),
    });

    let max_len = hf.max(wf);
    while vessels.len() < n_vessels {
        let parent = &vessels[rng.random_range(0..vessels.len())];
        let pts = &parent.points;
        if pts.len() < 6 {
            continue;
        }
        let k = rng.random_range(2..pts.len() - 2);
        let (px, py) = pts[k];
        if !(0.0..wf).contains(&px) || !(0.0..hf).contains(&py) {
            continue;
        }
        let (qx, qy) = pts[k + 1];
        let parent_heading = (qy - py).atan2(qx - px);
        let turn = rng.random_range(0.5..1.3) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let mut heading = parent_heading + turn;
        let len = rng.random_range(0.3..0.8) * max_len;
        let (mut x, mut y) = (px, py);
        let mut branch = vec![(x, y)];
        let mut travelled = 0.0;
        while inside(x, y) && travelled < len {
            heading += curl.sample(rng);
            x += STEP * heading.cos();
            y += STEP * heading.sin();
            travelled += STEP;
            branch.push((x, y));
        }
        let parent_width = parent.width;
        vessels.push(Vessel {
            points: branch,
            width: rng.random_range(3.0..=parent_width.min(6.0)),
            depth: rng.random_range(0.15..0.28),
        });
    }

    let texture = (0..4)
        .map(|_| {
            (
                rng.random_range(0.01..0.04),
                rng.random_range(-0.12..0.12),
                rng.random_range(-0.12..0.12),
                rng.random_range(0.0..std::f64::consts::TAU),
            )
        })
        .collect();
    VesselTree {
        vessels,
        texture,
        base_level: rng.random_range(0.5..0.7),
    }
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (vx, vy) = (b.0 - a.0, b.1 - a.1);
    let (wx, wy) = (p.0 - a.0, p.1 - a.1);
    let len2 = vx * vx + vy * vy;
    let t = if len2 > 0.0 {
        ((wx * vx + wy * vy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (dx, dy) = (wx - t * vx, wy - t * vy);
    (dx * dx + dy * dy).sqrt()
}

impl VesselTree {
    /// Renders the tree under `jitter`. Returns the noiseless image and the
    /// ground-truth mask.
    pub fn render(&self, h: usize, w: usize, jitter: Jitter) -> (Vec<f64>, Vec<bool>) {
        let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
        let theta = jitter.rotation_deg.to_radians();
        let (c, s) = (theta.cos(), theta.sin());
        let forward = |(x, y): (f64, f64)| -> (f64, f64) {
            let (rx, ry) = (x - cx, y - cy);
            (
                c * rx - s * ry + cx + jitter.dx,
                s * rx + c * ry + cy + jitter.dy,
            )
        };
        let inverse = |(x, y): (f64, f64)| -> (f64, f64) {
            let (rx, ry) = (x - cx - jitter.dx, y - cy - jitter.dy);
            (c * rx + s * ry + cx, -s * rx + c * ry + cy)
        };

        let mut image = vec![0.0; h * w];
        for yy in 0..h {
            for xx in 0..w {
                let (u, v) = inverse((xx as f64, yy as f64));
                let mut b = self.base_level;
                for &(a, fx, fy, ph) in &self.texture {
                    b += a * (fx * u + fy * v + ph).sin();
                }
                image[yy * w + xx] = b;
            }
        }

        let mut darkness = vec![0.0f64; h * w];
        let mut truth = vec![false; h * w];
        for vessel in &self.vessels {
            // width is the full width at half maximum of the valley profile
            let profile = vessel.width / (2.0 * (2.0 * std::f64::consts::LN_2).sqrt());
            let reach = (3.0 * profile).max(vessel.width / 2.0) + 1.0;
            let pts: Vec<(f64, f64)> = vessel.points.iter().map(|&p| forward(p)).collect();
            let mut best = vec![f64::INFINITY; h * w];
            for seg in pts.windows(2) {
                let (a, b) = (seg[0], seg[1]);
                let x0 = (a.0.min(b.0) - reach).floor().max(0.0) as usize;
                let x1 = (a.0.max(b.0) + reach).ceil().min(w as f64 - 1.0);
                let y0 = (a.1.min(b.1) - reach).floor().max(0.0) as usize;
                let y1 = (a.1.max(b.1) + reach).ceil().min(h as f64 - 1.0);
                if x1 < 0.0 || y1 < 0.0 {
                    continue;
                }
                for yy in y0..=y1 as usize {
                    for xx in x0..=x1 as usize {
                        let d = segment_distance((xx as f64, yy as f64), a, b);
                        let i = yy * w + xx;
                        if d < best[i] {
                            best[i] = d;
                        }
                    }
                }
            }
            for (i, &d) in best.iter().enumerate() {
                if d.is_finite() {
                    let dip = vessel.depth * (-(d * d) / (2.0 * profile * profile)).exp();
                    darkness[i] = darkness[i].max(dip);
                    if d <= vessel.width / 2.0 {
                        truth[i] = true;
                    }
                }
            }
        }
        for (p, d) in image.iter_mut().zip(&darkness) {
            *p -= d;
        }
        (image, truth)
    }
}

/// Generates a subject with `n_samples` jittered renderings of `dims = (height, width)`.
pub fn generate_subject(seed: u64, n_samples: usize, dims: (usize, usize)) -> Result<SyntheticSubject> {
    generate_subject_with_id(&format!("s{seed:016x}"), seed, n_samples, dims)
}

pub fn generate_subject_with_id(
    subject_id: &str,
    seed: u64,
    n_samples: usize,
    dims: (usize, usize),
) -> Result<SyntheticSubject> {
    let (h, w) = dims;
    if h < MIN_SYNTH_SIDE || w < MIN_SYNTH_SIDE {
        return Err(Error::InvalidParameter(format!(
            "synthetic dims {h}x{w} below {MIN_SYNTH_SIDE}x{MIN_SYNTH_SIDE}"
        )));
    }
    if n_samples == 0 {
        return Err(Error::InvalidParameter("n_samples must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "tree"));
    let tree = random_tree(&mut rng, h, w);
    let noise = Normal::new(0.0, NOISE_SIGMA).expect("valid normal");
    let mut jitters = Vec::with_capacity(n_samples);
    let mut samples = Vec::with_capacity(n_samples);
    let mut ground_truth = Vec::with_capacity(n_samples);
    for k in 0..n_samples {
        let mut srng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("sample-{k}")));
        let jitter = Jitter {
            dx: srng.random_range(-MAX_TRANSLATION..=MAX_TRANSLATION),
            dy: srng.random_range(-MAX_TRANSLATION..=MAX_TRANSLATION),
            rotation_deg: srng.random_range(-MAX_ROTATION_DEG..=MAX_ROTATION_DEG),
        };
        let (mut image, truth) = tree.render(h, w, jitter);
        for p in image.iter_mut() {
            *p += noise.sample(&mut srng);
        }
        samples.push(GrayImage::from_clamped(h, w, image)?);
        ground_truth.push(BinaryPattern::from_bools(h, w, &truth)?);
        jitters.push(jitter);
    }
    Ok(SyntheticSubject {
        subject_id: subject_id.to_string(),
        seed,
        base_tree: tree,
        jitters,
        samples,
        ground_truth,
    })
}

/// Dataset partition roles.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    EnrolledTrain,
    EnrolledTest,
    StolenTrain,
    StolenTest,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::EnrolledTrain => "enrolled_train",
            Split::EnrolledTest => "enrolled_test",
            Split::StolenTrain => "stolen_train",
            Split::StolenTest => "stolen_test",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "enrolled_train" => Split::EnrolledTrain,
            "enrolled_test" => Split::EnrolledTest,
            "stolen_train" => Split::StolenTrain,
            "stolen_test" => Split::StolenTest,
            _ => return None,
        })
    }

    fn pool(self) -> &'static str {
        match self {
            Split::EnrolledTrain | Split::EnrolledTest => "enrolled",
            Split::StolenTrain => "stolen_train",
            Split::StolenTest => "stolen_test",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub subject_id: String,
    pub sample_idx: usize,
    pub split: Split,
}

/// Dataset entries plus subject sets per split.
///
/// Enrolled subjects contribute samples to both `enrolled_train` and
/// `enrolled_test`; the three subject pools (enrolled, stolen train, stolen
/// test) are pairwise disjoint.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub enrolled_train: BTreeSet<String>,
    pub enrolled_test: BTreeSet<String>,
    pub stolen_train: BTreeSet<String>,
    pub stolen_test: BTreeSet<String>,
}

impl DatasetManifest {
    /// Validates pool disjointness and builds the split sets.
    pub fn from_entries(entries: Vec<ManifestEntry>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Empty("manifest has no entries"));
        }
        let mut pools: BTreeMap<&str, &'static str> = BTreeMap::new();
        for e in &entries {
            let pool = e.split.pool();
            if let Some(prev) = pools.insert(&e.subject_id, pool) {
                if prev != pool {
                    return Err(Error::SplitViolation(format!(
                        "subject {} appears in both the {prev} and {pool} pools",
                        e.subject_id
                    )));
                }
            }
        }
        let mut seen = BTreeSet::new();
        for e in &entries {
            if !seen.insert((&e.subject_id, e.sample_idx)) {
                return Err(Error::SplitViolation(format!(
                    "sample {} of subject {} listed twice",
                    e.sample_idx, e.subject_id
                )));
            }
        }
        let collect = |s: Split| {
            entries
                .iter()
                .filter(|e| e.split == s)
                .map(|e| e.subject_id.clone())
                .collect::<BTreeSet<_>>()
        };
        Ok(Self {
            enrolled_train: collect(Split::EnrolledTrain),
            enrolled_test: collect(Split::EnrolledTest),
            stolen_train: collect(Split::StolenTrain),
            stolen_test: collect(Split::StolenTest),
            entries,
        })
    }

    pub fn enrolled_subjects(&self) -> BTreeSet<String> {
        self.enrolled_train.union(&self.enrolled_test).cloned().collect()
    }

    pub fn entries_for(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        w.write_record(["path", "subject_id", "sample_idx", "split"])
            .map_err(|e| csv_err(path, e))?;
        for e in &self.entries {
            w.write_record([
                e.path.to_string_lossy().as_ref(),
                e.subject_id.as_str(),
                e.sample_idx.to_string().as_str(),
                e.split.as_str(),
            ])
            .map_err(|e| csv_err(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::format("manifest", format!("{}: {e}", path.display()))
}

/// Reads a manifest CSV (`path,subject_id,sample_idx,split`). Relative paths
/// resolve against the manifest's directory and must exist.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or(Path::new("."));
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.kind() {
        csv::ErrorKind::Io(_) => Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, e.to_string()),
        ),
        _ => csv_err(path, e),
    })?;
    let headers = reader.headers().map_err(|e| csv_err(path, e))?.clone();
    let expected = ["path", "subject_id", "sample_idx", "split"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(Error::format(
            "manifest",
            format!("expected header {expected:?}, found {headers:?}"),
        ));
    }
    let mut entries = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_err(path, e))?;
        let field = |i: usize| record.get(i).unwrap_or("").trim();
        let rel = PathBuf::from(field(0));
        let full = if rel.is_absolute() { rel } else { base.join(rel) };
        if !full.is_file() {
            return Err(Error::io(
                &full,
                std::io::Error::new(std::io::ErrorKind::NotFound, "listed in manifest"),
            ));
        }
        let sample_idx = field(2).parse().map_err(|_| {
            Error::format("manifest", format!("row {}: bad sample_idx {:?}", line + 2, field(2)))
        })?;
        let split = Split::parse(field(3)).ok_or_else(|| {
            Error::format("manifest", format!("row {}: unknown split {:?}", line + 2, field(3)))
        })?;
        entries.push(ManifestEntry {
            path: full,
            subject_id: field(1).to_string(),
            sample_idx,
            split,
        });
    }
    DatasetManifest::from_entries(entries)
}

/// Synthetic corpus layout: subject counts per pool.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub enrolled: usize,
    pub stolen_train: usize,
    pub stolen_test: usize,
    pub samples_per_subject: usize,
    /// Leading samples of each enrolled subject used for enrollment/training.
    pub enroll_samples: usize,
    pub dims: (usize, usize),
    pub seed: u64,
}

impl CorpusSpec {
    pub fn total_subjects(&self) -> usize {
        self.enrolled + self.stolen_train + self.stolen_test
    }
}

/// An in-memory synthetic corpus with its split assignment.
#[derive(Clone, Debug)]
pub struct SyntheticCorpus {
    pub spec: CorpusSpec,
    pub subjects: Vec<SyntheticSubject>,
    pub pools: Vec<(String, Split)>,
}

impl SyntheticCorpus {
    pub fn generate(spec: CorpusSpec) -> Result<Self> {
        if spec.enrolled == 0 || spec.enroll_samples == 0 || spec.enroll_samples >= spec.samples_per_subject {
            return Err(Error::InvalidParameter(
                "need enrolled subjects and 1 <= enroll_samples < samples_per_subject".into(),
            ));
        }
        let mut subjects = Vec::with_capacity(spec.total_subjects());
        let mut pools = Vec::with_capacity(spec.total_subjects());
        for i in 0..spec.total_subjects() {
            let id = format!("subj{i:04}");
            let seed = derive_seed(spec.seed, &id);
            subjects.push(generate_subject_with_id(&id, seed, spec.samples_per_subject, spec.dims)?);
            let pool = if i < spec.enrolled {
                Split::EnrolledTrain
            } else if i < spec.enrolled + spec.stolen_train {
                Split::StolenTrain
            } else {
                Split::StolenTest
            };
            pools.push((id, pool));
        }
        Ok(Self {
            spec,
            subjects,
            pools,
        })
    }

    /// Every rendered sample with its subject, index and split.
    pub fn samples(&self) -> impl Iterator<Item = (&str, usize, Split, &GrayImage)> {
        self.subjects.iter().enumerate().flat_map(move |(si, subject)| {
            subject
                .samples
                .iter()
                .enumerate()
                .map(move |(k, img)| (subject.subject_id.as_str(), k, self.split_of(si, k), img))
        })
    }

    fn split_of(&self, subject: usize, sample: usize) -> Split {
        match self.pools[subject].1 {
            Split::EnrolledTrain if sample >= self.spec.enroll_samples => Split::EnrolledTest,
            other => other,
        }
    }

    /// Writes `<id>_<k>.pgm`, `<id>_<k>_gt.pgm` and `manifest.csv` into `dir`.
    pub fn export(&self, dir: impl AsRef<Path>) -> Result<DatasetManifest> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut entries = Vec::new();
        for (si, subject) in self.subjects.iter().enumerate() {
            for (k, (img, gt)) in subject.samples.iter().zip(&subject.ground_truth).enumerate() {
                let name = format!("{}_{k}.pgm", subject.subject_id);
                save_gray_pgm(img, dir.join(&name))?;
                save_binary_pgm(gt, dir.join(format!("{}_{k}_gt.pgm", subject.subject_id)))?;
                entries.push(ManifestEntry {
                    path: PathBuf::from(name),
                    subject_id: subject.subject_id.clone(),
                    sample_idx: k,
                    split: self.split_of(si, k),
                });
            }
        }
        let manifest = DatasetManifest::from_entries(entries)?;
        manifest.write_csv(dir.join("manifest.csv"))?;
        Ok(manifest)
    }
}

/// Pearson correlation of two equally sized rasters.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        0.0
    } else {
        sab / (saa * sbb).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic() {
        let a = generate_subject(7, 2, (64, 64)).unwrap();
        let b = generate_subject(7, 2, (64, 64)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn tree_has_three_to_seven_branches_and_bounded_jitter() {
        for seed in 0..20 {
            let s = generate_subject(seed, 3, (64, 96)).unwrap();
            let n = s.base_tree.vessels.len();
            assert!((3..=7).contains(&n), "{n} vessels");
            for v in &s.base_tree.vessels {
                assert!((3.0..=7.0).contains(&v.width));
            }
            for j in &s.jitters {
                assert!(j.dx.hypot(j.dy) <= MAX_TRANSLATION * std::f64::consts::SQRT_2);
                assert!(j.dx.abs() <= MAX_TRANSLATION && j.dy.abs() <= MAX_TRANSLATION);
                assert!(j.rotation_deg.abs() <= MAX_ROTATION_DEG);
            }
        }
    }

    #[test]
    fn degenerate_dims_rejected() {
        assert!(generate_subject(1, 1, (32, 64)).is_err());
        assert!(generate_subject(1, 0, (64, 64)).is_err());
    }

    #[test]
    fn split_overlap_rejected() {
        let e = |s: &str, k, split| ManifestEntry {
            path: PathBuf::from("x"),
            subject_id: s.into(),
            sample_idx: k,
            split,
        };
        let err = DatasetManifest::from_entries(vec![
            e("a", 0, Split::EnrolledTrain),
            e("a", 1, Split::StolenTest),
        ]);
        assert!(matches!(err, Err(Error::SplitViolation(_))));
        assert!(DatasetManifest::from_entries(vec![
            e("a", 0, Split::EnrolledTrain),
            e("a", 1, Split::EnrolledTest),
            e("b", 0, Split::StolenTrain),
        ])
        .is_ok());
        assert!(matches!(
            DatasetManifest::from_entries(vec![]),
            Err(Error::Empty(_))
        ));
    }
}
