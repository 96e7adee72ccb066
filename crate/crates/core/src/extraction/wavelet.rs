//! Isotropic undecimated wavelet transform (a trous, B3-spline). Veins are
//! dark, so their detail coefficients are negative.

use crate::imaging::{convolve_separable, GrayImage};

const B3: [f64; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];

fn holey_kernel(level: usize) -> Vec<f64> {
    let gap = 1usize << (level - 1);
    let mut k = vec![0.0; 4 * gap + 1];
    for (i, &v) in B3.iter().enumerate() {
        k[i * gap] = v;
    }
    k
}

/// Detail planes `w_1..=w_max` of the transform.
pub(crate) fn iuwt(img: &GrayImage, max_level: usize) -> Vec<Vec<f64>> {
    let (h, w) = img.dims();
    let mut coarse = img.data().to_vec();
    let mut details = Vec::with_capacity(max_level);
    for level in 1..=max_level {
        let k = holey_kernel(level);
        let next = convolve_separable(&coarse, h, w, &k, &k);
        details.push(coarse.iter().zip(&next).map(|(c, n)| c - n).collect());
        coarse = next;
    }
    details
}

pub(super) fn iuwt_response(img: &GrayImage, levels: &[usize]) -> Vec<f64> {
    let top = levels.iter().copied().max().unwrap_or(1);
    let details = iuwt(img, top);
    let mut out = vec![0.0; img.height() * img.width()];
    for &l in levels {
        for (o, d) in out.iter_mut().zip(&details[l - 1]) {
            *o -= d;
        }
    }
    out.iter_mut().for_each(|v| *v = v.max(0.0));
    out
}
