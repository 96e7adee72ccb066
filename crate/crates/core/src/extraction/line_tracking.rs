//! Repeated line tracking (RLT): random walks that follow dark valleys; the
//! response is the number of times each pixel was tracked.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::imaging::{gaussian_blur, max_filter3, GrayImage};

const P_LEFT_RIGHT: f64 = 0.5;
const P_UP_DOWN: f64 = 0.25;

fn bilinear(data: &[f64], h: usize, w: usize, y: f64, x: f64) -> f64 {
    let y = y.clamp(0.0, (h - 1) as f64);
    let x = x.clamp(0.0, (w - 1) as f64);
    let (y0, x0) = (y.floor() as usize, x.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
    let (fy, fx) = (y - y0 as f64, x - x0 as f64);
    let top = data[y0 * w + x0] * (1.0 - fx) + data[y0 * w + x1] * fx;
    let bot = data[y1 * w + x0] * (1.0 - fx) + data[y1 * w + x1] * fx;
    top * (1.0 - fy) + bot * fy
}

pub(super) fn repeated_line_tracking(
    img: &GrayImage,
    iterations: usize,
    seed: u64,
    distance: usize,
    profile_width: usize,
) -> Vec<f64> {
    let (h, w) = img.dims();
    let data = gaussian_blur(img.data(), h, w, 1.0);
    let margin = (distance + profile_width / 2 + 1) as i64;
    let half = profile_width as f64 / 2.0;
    let r = distance as f64;

    // depth of the valley crossed when stepping from (y, x) towards (dy, dx)
    let valley = |y: i64, x: i64, dy: i64, dx: i64| -> f64 {
        let len = ((dy * dy + dx * dx) as f64).sqrt();
        let (sy, sx) = (dy as f64 / len, dx as f64 / len);
        let (py, px) = (y as f64 + r * sy, x as f64 + r * sx);
        // normal to the stepping direction
        let (ny, nx) = (sx, -sy);
        bilinear(&data, h, w, py + half * ny, px + half * nx)
            + bilinear(&data, h, w, py - half * ny, px - half * nx)
            - 2.0 * bilinear(&data, h, w, py, px)
    };

    let mut locus = vec![0.0; h * w];
    if (h as i64) <= 2 * margin || (w as i64) <= 2 * margin {
        return locus;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // generation stamps avoid clearing the visited map per walk
    let mut visited = vec![0u32; h * w];
    let mut candidates: Vec<(i64, i64)> = Vec::with_capacity(8);
    for walk in 1..=iterations as u32 {
        let mut y = rng.random_range(margin..h as i64 - margin);
        let mut x = rng.random_range(margin..w as i64 - margin);
        let dir_lr: i64 = if rng.random_bool(0.5) { 1 } else { -1 };
        let dir_ud: i64 = if rng.random_bool(0.5) { 1 } else { -1 };
        visited[y as usize * w + x as usize] = walk;
        loop {
            let u: f64 = rng.random();
            candidates.clear();
            if u < P_LEFT_RIGHT {
                candidates.extend((-1..=1).map(|dy| (dy, dir_lr)));
            } else if u < P_LEFT_RIGHT + P_UP_DOWN {
                candidates.extend((-1..=1).map(|dx| (dir_ud, dx)));
            } else {
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        if dy != 0 || dx != 0 {
                            candidates.push((dy, dx));
                        }
                    }
                }
            }
            let mut best: Option<((i64, i64), f64)> = None;
            for &(dy, dx) in &candidates {
                let (ny, nx) = (y + dy, x + dx);
                if ny < margin || nx < margin || ny >= h as i64 - margin || nx >= w as i64 - margin
                {
                    continue;
                }
                if visited[ny as usize * w + nx as usize] == walk {
                    continue;
                }
                let v = valley(y, x, dy, dx);
                if best.is_none_or(|(_, bv)| v > bv) {
                    best = Some(((ny, nx), v));
                }
            }
            match best {
                Some(((ny, nx), v)) if v > 0.0 => {
                    y = ny;
                    x = nx;
                    let i = y as usize * w + x as usize;
                    visited[i] = walk;
                    locus[i] += 1.0;
                }
                _ => break,
            }
        }
    }
    // tracks are one pixel wide; widen to the vessel core
    max_filter3(&locus, h, w)
}
