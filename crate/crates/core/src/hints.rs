//! Token-bound pseudo-random color space.
//!
//! An [`IdentityToken`] keys a ChaCha20 stream through SHA-256 of its fields.
//! Each derived quantity (hint positions, hint chroma, region lightness,
//! undertone) reads its own ChaCha stream, so adding hints never perturbs the
//! lightness or undertone.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::imaging::BinaryPattern;

/// Alignment search radius in pixels, horizontally and vertically.
pub const ALIGN_RADIUS: i64 = 30;

pub const REGION_LIGHTNESS_RANGE: (f64, f64) = (0.2, 0.9);

const STREAM_POSITIONS: u64 = 0;
const STREAM_CHROMA: u64 = 1;
const STREAM_LIGHTNESS: u64 = 2;
const STREAM_UNDERTONE: u64 = 3;

/// A cancelable identity: who, for which application, under which seed.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct IdentityToken {
    pub identity_id: String,
    pub application_id: String,
    #[serde(with = "hex_u128")]
    pub seed: u128,
}

/// Short public digest of a token; safe to store next to templates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TokenFingerprint(pub [u8; 16]);

impl fmt::Display for TokenFingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

impl std::str::FromStr for TokenFingerprint {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bytes = hex::decode(s).map_err(|e| Error::format("fingerprint", e.to_string()))?;
        let arr: [u8; 16] = bytes
            .try_into()
            .map_err(|_| Error::format("fingerprint", "expected 32 hex digits"))?;
        Ok(TokenFingerprint(arr))
    }
}

impl Serialize for TokenFingerprint {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for TokenFingerprint {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

pub(crate) mod hex_u128 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &u128, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format!("{v:032x}"))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u128, D::Error> {
        let s = String::deserialize(d)?;
        u128::from_str_radix(&s, 16).map_err(serde::de::Error::custom)
    }
}

fn absorb(h: &mut Sha256, field: &[u8]) {
    h.update((field.len() as u64).to_le_bytes());
    h.update(field);
}

impl IdentityToken {
    pub fn new(identity_id: impl Into<String>, application_id: impl Into<String>, seed: u128) -> Self {
        Self {
            identity_id: identity_id.into(),
            application_id: application_id.into(),
            seed,
        }
    }

    fn key(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        absorb(&mut h, b"colorvein/token/v1");
        absorb(&mut h, self.identity_id.as_bytes());
        absorb(&mut h, self.application_id.as_bytes());
        h.update(self.seed.to_be_bytes());
        h.finalize().into()
    }

    pub fn fingerprint(&self) -> TokenFingerprint {
        let mut h = Sha256::new();
        absorb(&mut h, b"colorvein/fingerprint/v1");
        h.update(self.key());
        let d = h.finalize();
        TokenFingerprint(d[..16].try_into().expect("digest has 32 bytes"))
    }

    fn stream(&self, id: u64) -> ChaCha20Rng {
        let mut rng = ChaCha20Rng::from_seed(self.key());
        rng.set_stream(id);
        rng
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hint {
    /// Column.
    pub x: usize,
    /// Row.
    pub y: usize,
    pub chroma_a: f64,
    pub chroma_b: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HintSet {
    pub hints: Vec<Hint>,
    pub region_lightness: f64,
    pub undertone: (f64, f64),
    pub token_fingerprint: TokenFingerprint,
}

impl HintSet {
    /// Number of hints on vein pixels of `mask`.
    pub fn on_vein_count(&self, mask: &BinaryPattern) -> usize {
        self.hints
            .iter()
            .filter(|h| mask.get_signed(h.y as i64, h.x as i64))
            .count()
    }
}

/// Derives `m` hints on vein pixels of `mask` plus region lightness and
/// undertone, all from the token's stream.
///
/// Positions are drawn at token-chosen quantiles of the row-major vein pixel
/// enumeration: every vein pixel is equally likely, and a small change of the
/// mask moves each hint only a little along the enumeration. Collisions probe
/// forward to the next free vein pixel.
pub fn derive_hints(token: &IdentityToken, mask: &BinaryPattern, m: usize) -> Result<HintSet> {
    if m == 0 {
        return Err(Error::InvalidParameter("hint count must be >= 1".into()));
    }
    let veins = mask.vein_pixels();
    if veins.len() < m {
        return Err(Error::InsufficientVeinPixels {
            available: veins.len(),
            requested: m,
        });
    }
    let n = veins.len();
    let mut taken = vec![false; n];
    let mut positions = token.stream(STREAM_POSITIONS);
    let mut chroma = token.stream(STREAM_CHROMA);
    let mut hints = Vec::with_capacity(m);
    for _ in 0..m {
        let u: f64 = positions.random();
        let mut idx = ((u * n as f64) as usize).min(n - 1);
        while taken[idx] {
            idx = (idx + 1) % n;
        }
        taken[idx] = true;
        let (y, x) = veins[idx];
        hints.push(Hint {
            x,
            y,
            chroma_a: chroma.random_range(-1.0..=1.0),
            chroma_b: chroma.random_range(-1.0..=1.0),
        });
    }
    let (lo, hi) = REGION_LIGHTNESS_RANGE;
    let region_lightness = token.stream(STREAM_LIGHTNESS).random_range(lo..=hi);
    let mut tone = token.stream(STREAM_UNDERTONE);
    let undertone = (tone.random_range(-1.0..=1.0), tone.random_range(-1.0..=1.0));
    Ok(HintSet {
        hints,
        region_lightness,
        undertone,
        token_fingerprint: token.fingerprint(),
    })
}

/// Offset `(dx, dy)` of an alignment.
pub type Offset = (i64, i64);

/// Orders candidate alignments: more on-vein hints first, then smaller
/// `|dx| + |dy|`, then row-major `(dy, dx)`.
pub fn alignment_order(a: (usize, Offset), b: (usize, Offset)) -> std::cmp::Ordering {
    let key = |(count, (dx, dy)): (usize, Offset)| (std::cmp::Reverse(count), dx.abs() + dy.abs(), dy, dx);
    key(a).cmp(&key(b))
}

/// Translates the hints within `+-30` pixels to maximize how many land on
/// vein pixels of `probe_mask`. Hints leaving the image are dropped.
pub fn align_hints(hset: &HintSet, probe_mask: &BinaryPattern) -> (HintSet, Offset) {
    let side = (2 * ALIGN_RADIUS + 1) as usize;
    let mut votes = vec![0usize; side * side];
    // each (hint, vein pixel) pair within the window votes for the offset
    // that would put the hint on that pixel
    for h in &hset.hints {
        let (hx, hy) = (h.x as i64, h.y as i64);
        let y0 = (hy - ALIGN_RADIUS).max(0);
        let y1 = (hy + ALIGN_RADIUS).min(probe_mask.height() as i64 - 1);
        let x0 = (hx - ALIGN_RADIUS).max(0);
        let x1 = (hx + ALIGN_RADIUS).min(probe_mask.width() as i64 - 1);
        for py in y0..=y1 {
            for px in x0..=x1 {
                if probe_mask.get(py as usize, px as usize) {
                    let (dx, dy) = (px - hx, py - hy);
                    votes[((dy + ALIGN_RADIUS) as usize) * side + (dx + ALIGN_RADIUS) as usize] += 1;
                }
            }
        }
    }
    let mut best = (votes[(ALIGN_RADIUS as usize) * side + ALIGN_RADIUS as usize], (0, 0));
    for (i, &count) in votes.iter().enumerate() {
        let dy = (i / side) as i64 - ALIGN_RADIUS;
        let dx = (i % side) as i64 - ALIGN_RADIUS;
        let cand = (count, (dx, dy));
        if alignment_order(cand, best).is_lt() {
            best = cand;
        }
    }
    let offset = best.1;
    (translate(hset, offset, probe_mask.dims()), offset)
}

/// Shifts hints by `(dx, dy)` and drops those leaving a `dims` raster.
pub fn translate(hset: &HintSet, (dx, dy): Offset, dims: (usize, usize)) -> HintSet {
    let hints = hset
        .hints
        .iter()
        .filter_map(|h| {
            let (x, y) = (h.x as i64 + dx, h.y as i64 + dy);
            (x >= 0 && y >= 0 && (y as usize) < dims.0 && (x as usize) < dims.1).then_some(Hint {
                x: x as usize,
                y: y as usize,
                ..*h
            })
        })
        .collect();
    HintSet {
        hints,
        ..hset.clone()
    }
}
