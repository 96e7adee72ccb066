//! Curvature-based extractors: maximum curvature (MC) and principal
//! curvature (PC). Dark vessels are valleys, so positive curvature marks them.

use crate::imaging::{convolve_separable, max_filter3, GrayImage};

/// Sampled Gaussian and its first two derivatives, radius `ceil(3 sigma)`.
fn derivative_kernels(sigma: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let r = (3.0 * sigma).ceil() as i64;
    let s2 = sigma * sigma;
    let g: Vec<f64> = (-r..=r)
        .map(|i| (-((i * i) as f64) / (2.0 * s2)).exp())
        .collect();
    let norm: f64 = g.iter().sum();
    let g: Vec<f64> = g.iter().map(|v| v / norm).collect();
    // applied as correlation, so the first-derivative taps are not mirrored
    let d1: Vec<f64> = (-r..=r)
        .zip(&g)
        .map(|(i, &gv)| (i as f64) / s2 * gv)
        .collect();
    let mut d2: Vec<f64> = (-r..=r)
        .zip(&g)
        .map(|(i, &gv)| ((i * i) as f64 / (s2 * s2) - 1.0 / s2) * gv)
        .collect();
    // truncation leaves a small DC term; a second-derivative filter must not
    // respond to a constant
    let dc = d2.iter().sum::<f64>() / d2.len() as f64;
    d2.iter_mut().for_each(|v| *v -= dc);
    (g, d1, d2)
}

struct Derivatives {
    fx: Vec<f64>,
    fy: Vec<f64>,
    fxx: Vec<f64>,
    fyy: Vec<f64>,
    fxy: Vec<f64>,
}

fn derivatives(img: &GrayImage, sigma: f64) -> Derivatives {
    let (h, w) = img.dims();
    let (g, d1, d2) = derivative_kernels(sigma);
    let data = img.data();
    Derivatives {
        fx: convolve_separable(data, h, w, &d1, &g),
        fy: convolve_separable(data, h, w, &g, &d1),
        fxx: convolve_separable(data, h, w, &d2, &g),
        fyy: convolve_separable(data, h, w, &g, &d2),
        fxy: convolve_separable(data, h, w, &d1, &d1),
    }
}

/// `(dy, dx)` steps of the four profile directions.
const DIRECTIONS: [(i64, i64); 4] = [(0, 1), (1, 0), (1, 1), (1, -1)];

/// Visits every line of pixels along `step`, calling `f` with the flat indices
/// of one line in order.
fn for_each_line(h: usize, w: usize, step: (i64, i64), mut f: impl FnMut(&[usize])) {
    let (sy, sx) = step;
    let inside = |y: i64, x: i64| y >= 0 && x >= 0 && y < h as i64 && x < w as i64;
    let mut line = Vec::with_capacity(h.max(w));
    for y0 in 0..h as i64 {
        for x0 in 0..w as i64 {
            // a line starts where the previous pixel along the step is outside
            if inside(y0 - sy, x0 - sx) {
                continue;
            }
            line.clear();
            let (mut y, mut x) = (y0, x0);
            while inside(y, x) {
                line.push(y as usize * w + x as usize);
                y += sy;
                x += sx;
            }
            f(&line);
        }
    }
}

pub(super) fn maximum_curvature(img: &GrayImage, sigmas: &[f64]) -> Vec<f64> {
    let (h, w) = img.dims();
    let n = h * w;
    let mut centers = vec![0.0; n];
    let mut kappa = vec![0.0; n];
    for &sigma in sigmas {
        let d = derivatives(img, sigma);
        for (dir, &step) in DIRECTIONS.iter().enumerate() {
            for i in 0..n {
                let (f1, f2) = match dir {
                    0 => (d.fx[i], d.fxx[i]),
                    1 => (d.fy[i], d.fyy[i]),
                    2 => (
                        (d.fx[i] + d.fy[i]) / std::f64::consts::SQRT_2,
                        (d.fxx[i] + 2.0 * d.fxy[i] + d.fyy[i]) / 2.0,
                    ),
                    _ => (
                        (d.fy[i] - d.fx[i]) / std::f64::consts::SQRT_2,
                        (d.fxx[i] - 2.0 * d.fxy[i] + d.fyy[i]) / 2.0,
                    ),
                };
                kappa[i] = f2 / (1.0 + f1 * f1).powf(1.5);
            }
            // score each run of positive curvature at its peak: kappa_max * width
            for_each_line(h, w, step, |line| {
                let mut k = 0;
                while k < line.len() {
                    if kappa[line[k]] <= 0.0 {
                        k += 1;
                        continue;
                    }
                    let start = k;
                    let mut peak = line[k];
                    while k < line.len() && kappa[line[k]] > 0.0 {
                        if kappa[line[k]] > kappa[peak] {
                            peak = line[k];
                        }
                        k += 1;
                    }
                    let width = (k - start) as f64;
                    centers[peak] += kappa[peak] * width;
                }
            });
        }
    }

    // connect centers: a pixel keeps the weaker of its two sides' strongest
    // neighbors along some direction
    let at = |y: i64, x: i64| -> f64 {
        if y < 0 || x < 0 || y >= h as i64 || x >= w as i64 {
            0.0
        } else {
            centers[y as usize * w + x as usize]
        }
    };
    let mut connected = vec![0.0; n];
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let mut best: f64 = 0.0;
            for &(sy, sx) in &DIRECTIONS {
                let fwd = at(y + sy, x + sx).max(at(y + 2 * sy, x + 2 * sx));
                let back = at(y - sy, x - sx).max(at(y - 2 * sy, x - 2 * sx));
                best = best.max(fwd.min(back));
            }
            connected[y as usize * w + x as usize] = best.max(centers[y as usize * w + x as usize]);
        }
    }
    // centers are one pixel wide; widen to the vessel core
    max_filter3(&connected, h, w)
}

pub(super) fn principal_curvature(img: &GrayImage, sigmas: &[f64]) -> Vec<f64> {
    let (h, w) = img.dims();
    let n = h * w;
    let mut out = vec![0.0f64; n];
    for &sigma in sigmas {
        let d = derivatives(img, sigma);
        let max_mag = d
            .fx
            .iter()
            .zip(&d.fy)
            .map(|(gx, gy)| gx.hypot(*gy))
            .fold(0.0, f64::max);
        if max_mag <= 1e-12 {
            continue;
        }
        let gx: Vec<f64> = d.fx.iter().map(|v| v / max_mag).collect();
        let gy: Vec<f64> = d.fy.iter().map(|v| v / max_mag).collect();
        let diff = |field: &[f64], y: usize, x: usize, along_x: bool| -> f64 {
            let (a, b, span) = if along_x {
                let x0 = x.saturating_sub(1);
                let x1 = (x + 1).min(w - 1);
                (field[y * w + x1], field[y * w + x0], (x1 - x0) as f64)
            } else {
                let y0 = y.saturating_sub(1);
                let y1 = (y + 1).min(h - 1);
                (field[y1 * w + x], field[y0 * w + x], (y1 - y0) as f64)
            };
            (a - b) / span
        };
        for y in 0..h {
            for x in 0..w {
                let hxx = diff(&gx, y, x, true);
                let hyy = diff(&gy, y, x, false);
                let hxy = 0.5 * (diff(&gx, y, x, false) + diff(&gy, y, x, true));
                let tr = 0.5 * (hxx + hyy);
                let disc = (0.25 * (hxx - hyy) * (hxx - hyy) + hxy * hxy).sqrt();
                let lambda = tr + disc;
                let i = y * w + x;
                out[i] = out[i].max(lambda);
            }
        }
    }
    out
}
