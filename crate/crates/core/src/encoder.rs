//! Permutation-invariant two-head encoder over measurement-matrix columns.
//!
//! Every column (one correspondence track, `3n` numbers) goes through a shared
//! MLP of widths 64 → 128 → 1024; a coordinate-wise max over columns gives the
//! global descriptor. The segmentation head sees `[local 64-d ; global]` per
//! column and emits one weight logit; the regression head maps the global
//! descriptor to `n∞`. All layers use ReLU except the two outputs.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::synth::rng_for;

pub const SHARED_WIDTHS: [usize; 3] = [64, 128, 1024];
pub const HEAD_WIDTH: usize = 128;

/// Affine layer `y = W·x + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl Dense {
    /// Xavier-uniform weights, zero bias.
    fn xavier<R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize) -> Self {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        Self { w: DMatrix::from_fn(fan_out, fan_in, |_, _| rng.random_range(-a..=a)), b: DVector::zeros(fan_out) }
    }

    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self { w: DMatrix::zeros(fan_out, fan_in), b: DVector::zeros(fan_out) }
    }

    fn forward(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut y = &self.w * x;
        for mut col in y.column_iter_mut() {
            col += &self.b;
        }
        y
    }

    fn len(&self) -> usize {
        self.w.len() + self.b.len()
    }

    /// Gradient of the layer given input `x` and upstream `dy`; returns `dx`.
    fn backward(&self, x: &DMatrix<f64>, dy: &DMatrix<f64>, grad: &mut Dense) -> DMatrix<f64> {
        grad.w += dy * x.transpose();
        grad.b += dy.column_sum();
        self.w.transpose() * dy
    }
}

fn relu(mut x: DMatrix<f64>) -> DMatrix<f64> {
    x.apply(|v| *v = v.max(0.0));
    x
}

fn relu_mask(dy: &mut DMatrix<f64>, y: &DMatrix<f64>) {
    dy.zip_apply(y, |d, v| {
        if v <= 0.0 {
            *d = 0.0;
        }
    });
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub shared: [Dense; 3],
    pub seg: [Dense; 2],
    pub cls: [Dense; 2],
}

/// Intermediate activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct EncoderCache {
    input: DMatrix<f64>,
    hidden: [DMatrix<f64>; 3],
    argmax: Vec<usize>,
    global: DMatrix<f64>,
    seg_in: DMatrix<f64>,
    seg_hidden: DMatrix<f64>,
    cls_hidden: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct EncoderOutput {
    pub logits: Vec<f64>,
    pub n_inf: [f64; 3],
    pub cache: EncoderCache,
}

impl EncoderParams {
    /// Xavier-uniform initialization. The two output layers start at zero, so
    /// the initial logits and `n∞` are exactly zero.
    pub fn new(input_dim: usize, seed: u64) -> Self {
        let mut rng = rng_for(seed, 0);
        let [a, b, c] = SHARED_WIDTHS;
        Self {
            shared: [Dense::xavier(&mut rng, input_dim, a), Dense::xavier(&mut rng, a, b), Dense::xavier(&mut rng, b, c)],
            seg: [Dense::xavier(&mut rng, a + c, HEAD_WIDTH), Dense::zeros(HEAD_WIDTH, 1)],
            cls: [Dense::xavier(&mut rng, c, HEAD_WIDTH), Dense::zeros(HEAD_WIDTH, 3)],
        }
    }

    /// Same architecture with every parameter randomized (the output layers
    /// included); used for smoke tests.
    pub fn random(input_dim: usize, seed: u64) -> Self {
        let mut p = Self::new(input_dim, seed);
        let mut rng = rng_for(seed, 1);
        p.seg[1] = Dense::xavier(&mut rng, HEAD_WIDTH, 1);
        p.cls[1] = Dense::xavier(&mut rng, HEAD_WIDTH, 3);
        p
    }

    pub fn input_dim(&self) -> usize {
        self.shared[0].w.ncols()
    }

    fn layers(&self) -> [&Dense; 7] {
        [&self.shared[0], &self.shared[1], &self.shared[2], &self.seg[0], &self.seg[1], &self.cls[0], &self.cls[1]]
    }

    fn layers_mut(&mut self) -> [&mut Dense; 7] {
        let [s0, s1, s2] = &mut self.shared;
        let [g0, g1] = &mut self.seg;
        let [c0, c1] = &mut self.cls;
        [s0, s1, s2, g0, g1, c0, c1]
    }

    pub fn n_params(&self) -> usize {
        self.layers().iter().map(|l| l.len()).sum()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in self.layers() {
            out.extend_from_slice(l.w.as_slice());
            out.extend_from_slice(l.b.as_slice());
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.n_params(), "flat parameter length");
        let mut off = 0;
        for l in self.layers_mut() {
            let (nw, nb) = (l.w.len(), l.b.len());
            l.w.as_mut_slice().copy_from_slice(&flat[off..off + nw]);
            l.b.as_mut_slice().copy_from_slice(&flat[off + nw..off + nw + nb]);
            off += nw + nb;
        }
    }

    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for l in z.layers_mut() {
            l.w.fill(0.0);
            l.b.fill(0.0);
        }
        z
    }

    /// Forward pass over the columns of `input` (`input_dim × m`).
    pub fn forward(&self, input: &DMatrix<f64>) -> EncoderOutput {
        assert_eq!(input.nrows(), self.input_dim(), "encoder input dimension");
        let h0 = relu(self.shared[0].forward(input));
        let h1 = relu(self.shared[1].forward(&h0));
        let h2 = relu(self.shared[2].forward(&h1));
        let width = h2.nrows();
        let mut argmax = vec![0usize; width];
        let mut global = DMatrix::zeros(width, 1);
        for r in 0..width {
            let row = h2.row(r);
            let mut best = 0;
            for c in 1..row.len() {
                if row[c] > row[best] {
                    best = c;
                }
            }
            argmax[r] = best;
            global[(r, 0)] = if row.is_empty() { 0.0 } else { row[best] };
        }
        let m = input.ncols();
        let mut seg_in = DMatrix::zeros(h0.nrows() + width, m);
        seg_in.rows_mut(0, h0.nrows()).copy_from(&h0);
        for c in 0..m {
            seg_in.view_mut((h0.nrows(), c), (width, 1)).copy_from(&global);
        }
        let seg_hidden = relu(self.seg[0].forward(&seg_in));
        let logits = self.seg[1].forward(&seg_hidden);
        let cls_hidden = relu(self.cls[0].forward(&global));
        let n = self.cls[1].forward(&cls_hidden);
        EncoderOutput {
            logits: logits.iter().copied().collect(),
            n_inf: [n[0], n[1], n[2]],
            cache: EncoderCache {
                input: input.clone(),
                hidden: [h0, h1, h2],
                argmax,
                global,
                seg_in,
                seg_hidden,
                cls_hidden,
            },
        }
    }

    /// Backpropagates `dL/dlogits` and `dL/dn∞` into a flat parameter gradient.
    pub fn backward(&self, cache: &EncoderCache, d_logits: &[f64], d_n: &[f64; 3]) -> Vec<f64> {
        let mut g = self.zeros_like();
        let m = cache.input.ncols();
        let a = cache.hidden[0].nrows();
        let width = cache.global.nrows();

        // Segmentation head.
        let dl = DMatrix::from_row_slice(1, m, d_logits);
        let mut d_sh = self.seg[1].backward(&cache.seg_hidden, &dl, &mut g.seg[1]);
        relu_mask(&mut d_sh, &cache.seg_hidden);
        let d_seg_in = self.seg[0].backward(&cache.seg_in, &d_sh, &mut g.seg[0]);
        let mut d_h0 = d_seg_in.rows(0, a).into_owned();
        let mut d_global = d_seg_in.rows(a, width).column_sum();

        // Regression head.
        let dn = DMatrix::from_column_slice(3, 1, d_n);
        let mut d_ch = self.cls[1].backward(&cache.cls_hidden, &dn, &mut g.cls[1]);
        relu_mask(&mut d_ch, &cache.cls_hidden);
        d_global += self.cls[0].backward(&cache.global, &d_ch, &mut g.cls[0]).column(0);

        // Max-pool routes the global gradient to the arg-max column.
        let mut d_h2 = DMatrix::zeros(width, m);
        if m > 0 {
            for r in 0..width {
                d_h2[(r, cache.argmax[r])] = d_global[r];
            }
        }
        relu_mask(&mut d_h2, &cache.hidden[2]);
        let mut d_h1 = self.shared[2].backward(&cache.hidden[1], &d_h2, &mut g.shared[2]);
        relu_mask(&mut d_h1, &cache.hidden[1]);
        d_h0 += self.shared[1].backward(&cache.hidden[0], &d_h1, &mut g.shared[1]);
        relu_mask(&mut d_h0, &cache.hidden[0]);
        self.shared[0].backward(&cache.input, &d_h0, &mut g.shared[0]);
        g.to_flat()
    }
}
