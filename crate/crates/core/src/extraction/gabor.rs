//! Even-symmetric Gabor filter bank. A dark line correlates negatively with
//! the positive central lobe, so the response is the negated filter output,
//! maximized over orientations.

use crate::imaging::GrayImage;

/// Envelope width relative to the wavelength.
const SIGMA_PER_WAVELENGTH: f64 = 0.5;
/// Aspect ratio of the envelope (along-line / across-line extent).
const ASPECT: f64 = 0.7;

fn sigma(wavelength: f64) -> f64 {
    SIGMA_PER_WAVELENGTH * wavelength
}

pub(super) fn radius(wavelength: f64) -> usize {
    (2.5 * sigma(wavelength) / ASPECT).ceil() as usize
}

fn kernel(theta: f64, wavelength: f64) -> Vec<f64> {
    let s = sigma(wavelength);
    let r = radius(wavelength) as i64;
    let (c, sn) = (theta.cos(), theta.sin());
    let mut k = Vec::with_capacity(((2 * r + 1) * (2 * r + 1)) as usize);
    for y in -r..=r {
        for x in -r..=r {
            let (xf, yf) = (x as f64, y as f64);
            let across = xf * c + yf * sn;
            let along = -xf * sn + yf * c;
            let env = (-(across * across + ASPECT * ASPECT * along * along) / (2.0 * s * s)).exp();
            k.push(env * (2.0 * std::f64::consts::PI * across / wavelength).cos());
        }
    }
    // zero mean: no response to a constant image
    let mean = k.iter().sum::<f64>() / k.len() as f64;
    k.iter_mut().for_each(|v| *v -= mean);
    let l1: f64 = k.iter().map(|v| v.abs()).sum();
    k.iter_mut().for_each(|v| *v /= l1);
    k
}

pub(super) fn gabor_response(img: &GrayImage, orientations: usize, wavelength: f64) -> Vec<f64> {
    let (h, w) = img.dims();
    let data = img.data();
    let r = radius(wavelength) as i64;
    let side = (2 * r + 1) as usize;
    let mut out = vec![0.0f64; h * w];
    for o in 0..orientations {
        let theta = std::f64::consts::PI * o as f64 / orientations as f64;
        let k = kernel(theta, wavelength);
        for y in 0..h as i64 {
            for x in 0..w as i64 {
                let mut acc = 0.0;
                for ky in -r..=r {
                    let sy = (y + ky).clamp(0, h as i64 - 1) as usize;
                    let row = &data[sy * w..(sy + 1) * w];
                    let krow = &k[(ky + r) as usize * side..(ky + r + 1) as usize * side];
                    for (kx, &kv) in (-r..=r).zip(krow) {
                        let sx = (x + kx).clamp(0, w as i64 - 1) as usize;
                        acc += kv * row[sx];
                    }
                }
                let i = y as usize * w + x as usize;
                out[i] = out[i].max(-acc);
            }
        }
    }
    out
}
