//! Separable convolution helpers on row-major `f64` planes with replicated
//! borders.

/// Normalized 1-D Gaussian with radius `ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil().max(1.0) as i64;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

#[inline]
fn clamp_index(i: i64, n: usize) -> usize {
    i.clamp(0, n as i64 - 1) as usize
}

/// Convolves rows with `kx` then columns with `ky` (both odd length, centered).
pub fn convolve_separable(
    data: &[f64],
    height: usize,
    width: usize,
    kx: &[f64],
    ky: &[f64],
) -> Vec<f64> {
    let rx = (kx.len() / 2) as i64;
    let ry = (ky.len() / 2) as i64;
    let mut tmp = vec![0.0; data.len()];
    for y in 0..height {
        let row = &data[y * width..(y + 1) * width];
        for x in 0..width {
            let mut acc = 0.0;
            for (k, &w) in kx.iter().enumerate() {
                acc += w * row[clamp_index(x as i64 + k as i64 - rx, width)];
            }
            tmp[y * width + x] = acc;
        }
    }
    let mut out = vec![0.0; data.len()];
    for y in 0..height {
        for (k, &w) in ky.iter().enumerate() {
            let sy = clamp_index(y as i64 + k as i64 - ry, height);
            let src = &tmp[sy * width..(sy + 1) * width];
            let dst = &mut out[y * width..(y + 1) * width];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d += w * s;
            }
        }
    }
    out
}

pub fn gaussian_blur(data: &[f64], height: usize, width: usize, sigma: f64) -> Vec<f64> {
    let k = gaussian_kernel(sigma);
    convolve_separable(data, height, width, &k, &k)
}

/// 3x3 grey dilation.
pub fn max_filter3(data: &[f64], height: usize, width: usize) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    for y in 0..height {
        for x in 0..width {
            let mut m = f64::NEG_INFINITY;
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let sy = clamp_index(y as i64 + dy, height);
                    let sx = clamp_index(x as i64 + dx, width);
                    m = m.max(data[sy * width + sx]);
                }
            }
            out[y * width + x] = m;
        }
    }
    out
}

/// Binary dilation with a `(2r+1)x(2r+1)` square.
pub fn box_dilate(bits: &[bool], height: usize, width: usize, radius: usize) -> Vec<bool> {
    let r = radius as i64;
    let mut out = vec![false; bits.len()];
    for y in 0..height as i64 {
        for x in 0..width as i64 {
            if !bits[y as usize * width + x as usize] {
                continue;
            }
            for yy in (y - r).max(0)..=(y + r).min(height as i64 - 1) {
                for xx in (x - r).max(0)..=(x + r).min(width as i64 - 1) {
                    out[yy as usize * width + xx as usize] = true;
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_is_normalized_and_symmetric() {
        let k = gaussian_kernel(1.5);
        assert_eq!(k.len(), 11);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        for i in 0..k.len() / 2 {
            assert_eq!(k[i], k[k.len() - 1 - i]);
        }
    }

    #[test]
    fn blur_preserves_constant() {
        let data = vec![0.3; 100];
        let out = gaussian_blur(&data, 10, 10, 2.0);
        assert!(out.iter().all(|v| (v - 0.3).abs() < 1e-14));
    }
}
