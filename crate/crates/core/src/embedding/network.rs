//! Small feed-forward network with hand-written backpropagation.
//!
//! Parameters live in one flat vector; [`Arch`] fixes the layout. Hidden
//! layers (3x3 "same"-padded convolutions or dense layers) are followed by
//! ReLU; the embedding layer by `scale * tanh`; the classifier head is linear
//! on the embedding.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    /// 3x3 convolution, padding 1.
    Conv { channels: usize, stride: usize },
    Dense { units: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Arch {
    /// `(channels, height, width)` of the input.
    pub input: (usize, usize, usize),
    pub hidden: Vec<LayerSpec>,
    pub embed_dim: usize,
    /// Embeddings are `scale * tanh(.)`.
    pub scale: f64,
    pub classes: usize,
}

impl Arch {
    /// Three stride-2 conv blocks (8/16/32 channels) and a 64-dim embedding
    /// over `L, a, b` planes.
    pub fn desk_scale(height: usize, width: usize, classes: usize) -> Self {
        Self {
            input: (3, height, width),
            hidden: vec![
                LayerSpec::Conv { channels: 8, stride: 2 },
                LayerSpec::Conv { channels: 16, stride: 2 },
                LayerSpec::Conv { channels: 32, stride: 2 },
            ],
            embed_dim: crate::imaging::TEMPLATE_DIM,
            scale: crate::imaging::TEMPLATE_BOUND,
            classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (c, h, w) = self.input;
        if c == 0 || h == 0 || w == 0 || self.embed_dim == 0 {
            return Err(Error::InvalidParameter("network dims must be non-zero".into()));
        }
        if self.classes < 2 {
            return Err(Error::InvalidParameter("need at least 2 classes".into()));
        }
        if !(self.scale > 0.0) {
            return Err(Error::InvalidParameter("embedding scale must be > 0".into()));
        }
        let mut seen_dense = false;
        for l in &self.hidden {
            match *l {
                LayerSpec::Conv { channels, stride } => {
                    if seen_dense {
                        return Err(Error::InvalidParameter("conv layer after dense layer".into()));
                    }
                    if channels == 0 || stride == 0 {
                        return Err(Error::InvalidParameter("conv channels and stride must be >= 1".into()));
                    }
                }
                LayerSpec::Dense { units } => {
                    seen_dense = true;
                    if units == 0 {
                        return Err(Error::InvalidParameter("dense units must be >= 1".into()));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn input_len(&self) -> usize {
        self.input.0 * self.input.1 * self.input.2
    }

    fn layers(&self) -> Vec<Layer> {
        let (mut c, mut h, mut w) = self.input;
        let mut offset = 0;
        let mut out = Vec::new();
        let mut push = |kind, n_in, n_out, relu, params, offset: &mut usize| {
            out.push(Layer { kind, n_in, n_out, relu, offset: *offset });
            *offset += params;
        };
        for l in &self.hidden {
            match *l {
                LayerSpec::Conv { channels, stride } => {
                    let (oh, ow) = ((h - 1) / stride + 1, (w - 1) / stride + 1);
                    let kind = Kind::Conv { cin: c, h, w, cout: channels, stride, oh, ow };
                    push(kind, c * h * w, channels * oh * ow, true, channels * (c * 9 + 1), &mut offset);
                    (c, h, w) = (channels, oh, ow);
                }
                LayerSpec::Dense { units } => {
                    let n = c * h * w;
                    push(Kind::Dense, n, units, true, units * (n + 1), &mut offset);
                    (c, h, w) = (units, 1, 1);
                }
            }
        }
        let n = c * h * w;
        push(Kind::Dense, n, self.embed_dim, false, self.embed_dim * (n + 1), &mut offset);
        push(Kind::Dense, self.embed_dim, self.classes, false, self.classes * (self.embed_dim + 1), &mut offset);
        out
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(Layer::params).sum()
    }
}

#[derive(Clone, Copy, Debug)]
enum Kind {
    Conv {
        cin: usize,
        h: usize,
        w: usize,
        cout: usize,
        stride: usize,
        oh: usize,
        ow: usize,
    },
    Dense,
}

#[derive(Clone, Copy, Debug)]
struct Layer {
    kind: Kind,
    n_in: usize,
    n_out: usize,
    relu: bool,
    offset: usize,
}

impl Layer {
    fn params(&self) -> usize {
        match self.kind {
            Kind::Conv { cin, cout, .. } => cout * (cin * 9 + 1),
            Kind::Dense => self.n_out * (self.n_in + 1),
        }
    }

    fn fan_in(&self) -> usize {
        match self.kind {
            Kind::Conv { cin, .. } => cin * 9,
            Kind::Dense => self.n_in,
        }
    }

    /// Weights first, biases last.
    fn split<'a>(&self, theta: &'a [f64]) -> (&'a [f64], &'a [f64]) {
        let p = &theta[self.offset..self.offset + self.params()];
        let bias = match self.kind {
            Kind::Conv { cout, .. } => cout,
            Kind::Dense => self.n_out,
        };
        p.split_at(p.len() - bias)
    }

    fn split_mut<'a>(&self, theta: &'a mut [f64]) -> (&'a mut [f64], &'a mut [f64]) {
        let n = self.params();
        let bias = match self.kind {
            Kind::Conv { cout, .. } => cout,
            Kind::Dense => self.n_out,
        };
        theta[self.offset..self.offset + n].split_at_mut(n - bias)
    }

    fn forward(&self, theta: &[f64], x: &[f64], out: &mut Vec<f64>) {
        let (wt, bias) = self.split(theta);
        out.clear();
        match self.kind {
            Kind::Dense => {
                out.extend(bias.iter().enumerate().map(|(o, &b)| {
                    b + wt[o * self.n_in..(o + 1) * self.n_in]
                        .iter()
                        .zip(x)
                        .map(|(a, b)| a * b)
                        .sum::<f64>()
                }));
            }
            Kind::Conv { cin, h, w, cout, stride, oh, ow } => {
                out.resize(cout * oh * ow, 0.0);
                for o in 0..cout {
                    let plane = &mut out[o * oh * ow..(o + 1) * oh * ow];
                    plane.iter_mut().for_each(|v| *v = bias[o]);
                    for i in 0..cin {
                        let src = &x[i * h * w..(i + 1) * h * w];
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let k = wt[((o * cin + i) * 3 + ky) * 3 + kx];
                                let (x0, x1) = valid_range(ow, w, stride, kx);
                                for oy in 0..oh {
                                    let iy = (oy * stride + ky) as isize - 1;
                                    if iy < 0 || iy >= h as isize {
                                        continue;
                                    }
                                    let row = &src[iy as usize * w..(iy as usize + 1) * w];
                                    let dst = &mut plane[oy * ow..(oy + 1) * ow];
                                    for ox in x0..x1 {
                                        dst[ox] += k * row[ox * stride + kx - 1];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    fn backward(&self, theta: &[f64], x: &[f64], dz: &[f64], grad: &mut [f64]) -> Vec<f64> {
        let (wt, _) = self.split(theta);
        let (gw, gb) = self.split_mut(grad);
        let mut dx = vec![0.0; self.n_in];
        match self.kind {
            Kind::Dense => {
                for (o, &d) in dz.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    gb[o] += d;
                    let row = &wt[o * self.n_in..(o + 1) * self.n_in];
                    let grow = &mut gw[o * self.n_in..(o + 1) * self.n_in];
                    for j in 0..self.n_in {
                        grow[j] += d * x[j];
                        dx[j] += d * row[j];
                    }
                }
            }
            Kind::Conv { cin, h, w, cout, stride, oh, ow } => {
                for o in 0..cout {
                    let plane = &dz[o * oh * ow..(o + 1) * oh * ow];
                    gb[o] += plane.iter().sum::<f64>();
                    for i in 0..cin {
                        let src = &x[i * h * w..(i + 1) * h * w];
                        let dsrc = &mut dx[i * h * w..(i + 1) * h * w];
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let widx = ((o * cin + i) * 3 + ky) * 3 + kx;
                                let k = wt[widx];
                                let (x0, x1) = valid_range(ow, w, stride, kx);
                                let mut acc = 0.0;
                                for oy in 0..oh {
                                    let iy = (oy * stride + ky) as isize - 1;
                                    if iy < 0 || iy >= h as isize {
                                        continue;
                                    }
                                    let base = iy as usize * w;
                                    let drow = &plane[oy * ow..(oy + 1) * ow];
                                    for ox in x0..x1 {
                                        let ix = base + ox * stride + kx - 1;
                                        acc += drow[ox] * src[ix];
                                        dsrc[ix] += drow[ox] * k;
                                    }
                                }
                                gw[widx] += acc;
                            }
                        }
                    }
                }
            }
        }
        dx
    }
}

/// Output columns `ox` whose input column `ox * stride + kx - 1` is in range.
fn valid_range(ow: usize, w: usize, stride: usize, kx: usize) -> (usize, usize) {
    let x0 = usize::from(kx == 0);
    // ox * stride + kx - 1 <= w - 1  <=>  ox <= (w - kx) / stride
    let x1 = if kx > w { 0 } else { ((w - kx) / stride + 1).min(ow) };
    (x0.min(x1), x1)
}

/// Activations kept for the backward pass.
#[derive(Clone, Debug)]
pub struct Tape {
    /// Input to each layer (the last entry is the classifier input, i.e. the
    /// embedding).
    inputs: Vec<Vec<f64>>,
    /// Pre-activation output of each layer.
    pre: Vec<Vec<f64>>,
}

impl Tape {
    pub fn embedding(&self) -> &[f64] {
        self.inputs.last().expect("network has layers")
    }

    pub fn logits(&self) -> &[f64] {
        self.pre.last().expect("network has layers")
    }
}

/// Flat parameters plus their layout.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingModel {
    arch: Arch,
    pub(crate) theta: Vec<f64>,
}

impl EmbeddingModel {
    /// He-normal hidden weights, Glorot-normal embedding and classifier
    /// weights, zero biases.
    pub fn init(arch: Arch, seed: u64) -> Result<Self> {
        arch.validate()?;
        let layers = arch.layers();
        let mut theta = vec![0.0; layers.iter().map(Layer::params).sum()];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for l in &layers {
            let std = if l.relu {
                (2.0 / l.fan_in() as f64).sqrt()
            } else {
                (2.0 / (l.fan_in() + l.n_out) as f64).sqrt()
            };
            let normal = Normal::new(0.0, std).expect("positive std");
            let (w, _) = l.split_mut(&mut theta);
            w.iter_mut().for_each(|v| *v = normal.sample(&mut rng));
        }
        Self::from_parts(arch, theta)
    }

    pub fn from_parts(arch: Arch, theta: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        let n = arch.param_count();
        if theta.len() != n {
            return Err(Error::WrongLength {
                expected: n,
                actual: theta.len(),
            });
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite network parameter".into()));
        }
        Ok(Self { arch, theta })
    }

    pub fn arch(&self) -> &Arch {
        &self.arch
    }

    pub fn params(&self) -> &[f64] {
        &self.theta
    }

    pub fn forward(&self, input: &[f64]) -> Result<Tape> {
        if input.len() != self.arch.input_len() {
            return Err(Error::WrongLength {
                expected: self.arch.input_len(),
                actual: input.len(),
            });
        }
        let layers = self.arch.layers();
        let n = layers.len();
        let mut inputs = Vec::with_capacity(n);
        let mut pre = Vec::with_capacity(n);
        let mut x = input.to_vec();
        for (idx, l) in layers.iter().enumerate() {
            let mut z = Vec::new();
            l.forward(&self.theta, &x, &mut z);
            let next = if l.relu {
                z.iter().map(|&v| v.max(0.0)).collect()
            } else if idx == n - 2 {
                z.iter().map(|&v| self.arch.scale * v.tanh()).collect()
            } else {
                z.clone()
            };
            inputs.push(std::mem::replace(&mut x, next));
            pre.push(z);
        }
        Ok(Tape { inputs, pre })
    }

    /// Embedding only.
    pub fn embed_raw(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.forward(input).map(|t| t.embedding().to_vec())
    }

    /// Backpropagates `d_embed` (w.r.t. the embedding) and `d_logits` into
    /// `grad`.
    pub fn backward(&self, tape: &Tape, d_embed: &[f64], d_logits: &[f64], grad: &mut [f64]) {
        let layers = self.arch.layers();
        let n = layers.len();
        let head = &layers[n - 1];
        let mut d = head.backward(&self.theta, &tape.inputs[n - 1], d_logits, grad);
        for (g, &e) in d.iter_mut().zip(d_embed) {
            *g += e;
        }
        // through scale * tanh(z): derivative scale * (1 - tanh^2)
        let s = self.arch.scale;
        for (g, &z) in d.iter_mut().zip(&tape.pre[n - 2]) {
            let t = z.tanh();
            *g *= s * (1.0 - t * t);
        }
        for idx in (0..n - 1).rev() {
            let l = &layers[idx];
            if l.relu {
                for (g, &z) in d.iter_mut().zip(&tape.pre[idx]) {
                    if z <= 0.0 {
                        *g = 0.0;
                    }
                }
            }
            let dx = l.backward(&self.theta, &tape.inputs[idx], &d, grad);
            if idx == 0 {
                break;
            }
            d = dx;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_conv() -> Arch {
        Arch {
            input: (2, 7, 6),
            hidden: vec![
                LayerSpec::Conv { channels: 3, stride: 2 },
                LayerSpec::Conv { channels: 2, stride: 1 },
                LayerSpec::Dense { units: 5 },
            ],
            embed_dim: 4,
            scale: 3.0,
            classes: 3,
        }
    }

    #[test]
    fn desk_scale_shapes() {
        let a = Arch::desk_scale(64, 64, 30);
        // 3->8: 8*(27+1); 8->16: 16*(72+1); 16->32: 32*(144+1); 8*8*32 -> 64; 64 -> 30
        let expected = 8 * 28 + 16 * 73 + 32 * 145 + 64 * (2048 + 1) + 30 * 65;
        assert_eq!(a.param_count(), expected);
        let net = EmbeddingModel::init(a, 0).unwrap();
        let x = vec![0.5; 3 * 64 * 64];
        let t = net.forward(&x).unwrap();
        assert_eq!(t.embedding().len(), 64);
        assert!(t.embedding().iter().all(|v| v.abs() <= 10.0));
        assert_eq!(t.logits().len(), 30);
    }

    #[test]
    fn conv_matches_direct_formula() {
        let arch = Arch {
            input: (1, 5, 4),
            hidden: vec![LayerSpec::Conv { channels: 1, stride: 2 }],
            embed_dim: 2,
            scale: 1.0,
            classes: 2,
        };
        let net = EmbeddingModel::init(arch, 3).unwrap();
        let x: Vec<f64> = (0..20).map(|i| (i as f64 * 0.37).sin()).collect();
        let t = net.forward(&x).unwrap();
        let conv = &t.pre[0];
        let w = &net.theta[..9];
        let b = net.theta[9];
        assert_eq!(conv.len(), 3 * 2);
        for oy in 0..3 {
            for ox in 0..2 {
                let mut acc = b;
                for ky in 0..3 {
                    for kx in 0..3 {
                        let (iy, ix) = (2 * oy as i64 + ky as i64 - 1, 2 * ox as i64 + kx as i64 - 1);
                        if (0..5).contains(&iy) && (0..4).contains(&ix) {
                            acc += w[ky * 3 + kx] * x[(iy * 4 + ix) as usize];
                        }
                    }
                }
                assert!((conv[oy * 2 + ox] - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let net = EmbeddingModel::init(tiny_conv(), 11).unwrap();
        let x: Vec<f64> = (0..84).map(|i| ((i * 7 % 13) as f64 / 13.0) - 0.3).collect();
        // objective: <u, embedding> + <v, logits>
        let u = [0.3, -0.7, 0.2, 0.5];
        let v = [1.0, -0.4, 0.25];
        let f = |n: &EmbeddingModel| {
            let t = n.forward(&x).unwrap();
            t.embedding().iter().zip(&u).map(|(a, b)| a * b).sum::<f64>()
                + t.logits().iter().zip(&v).map(|(a, b)| a * b).sum::<f64>()
        };
        let t = net.forward(&x).unwrap();
        let mut grad = vec![0.0; net.theta.len()];
        net.backward(&t, &u, &v, &mut grad);
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for i in 0..net.theta.len() {
            let mut p = net.clone();
            p.theta[i] += h;
            let mut m = net.clone();
            m.theta[i] -= h;
            let num = (f(&p) - f(&m)) / (2.0 * h);
            let err = (num - grad[i]).abs() / num.abs().max(grad[i].abs()).max(1e-6);
            worst = worst.max(err);
        }
        assert!(worst < 1e-5, "worst relative error {worst}");
    }

    #[test]
    fn rejects_bad_arch_and_input() {
        let mut a = tiny_conv();
        a.classes = 1;
        assert!(EmbeddingModel::init(a, 0).is_err());
        let net = EmbeddingModel::init(tiny_conv(), 0).unwrap();
        assert!(net.forward(&[0.0; 3]).is_err());
        let mut bad = tiny_conv();
        bad.hidden = vec![LayerSpec::Dense { units: 3 }, LayerSpec::Conv { channels: 2, stride: 1 }];
        assert!(bad.validate().is_err());
    }
}
