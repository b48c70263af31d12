//! Scene classifier, quality heads and the per-scene rescaling table.

use std::ops::Range;

use rand::Rng;

use super::backbone::{CONTENT_DIM, SEMANTIC_DIM};
use super::ops::{affine, affine_backward};
use super::params::{Init, ParamGroup, ParamStore};

/// Hidden width of the classifier for `patches` concatenated semantic
/// vectors.
pub fn classifier_hidden(patches: usize) -> usize {
    (2 * SEMANTIC_DIM * patches).min(1024)
}

/// One-hidden-layer MLP over concatenated per-patch semantic vectors.
#[derive(Debug, Clone)]
pub(crate) struct Classifier {
    w1: Range<usize>,
    b1: Range<usize>,
    w2: Range<usize>,
    b2: Range<usize>,
    hidden: usize,
    scenes: usize,
}

pub(crate) struct ClassifierCache {
    input: Vec<f32>,
    hidden: Vec<f32>,
}

impl Classifier {
    pub fn build(params: &mut ParamStore, patches: usize, scenes: usize, rng: &mut impl Rng) -> Self {
        let input = SEMANTIC_DIM * patches;
        let hidden = classifier_hidden(patches);
        let g = ParamGroup::Heads;
        let w1 = params.push("classifier.fc1.weight", &[hidden, input], g, Init::Normal((2.0 / input as f32).sqrt()), rng);
        let b1 = params.push("classifier.fc1.bias", &[hidden], g, Init::Zeros, rng);
        let w2 = params.push("classifier.fc2.weight", &[scenes, hidden], g, Init::Normal((1.0 / hidden as f32).sqrt()), rng);
        let b2 = params.push("classifier.fc2.bias", &[scenes], g, Init::Zeros, rng);
        Self { w1, b1, w2, b2, hidden, scenes }
    }

    pub fn forward(&self, p: &[f32], input: Vec<f32>) -> (Vec<f32>, ClassifierCache) {
        let mut h = affine(&p[self.w1.clone()], Some(&p[self.b1.clone()]), &input, self.hidden);
        for v in &mut h {
            *v = v.max(0.0);
        }
        let logits = affine(&p[self.w2.clone()], Some(&p[self.b2.clone()]), &h, self.scenes);
        (logits, ClassifierCache { input, hidden: h })
    }

    /// Returns the gradient with respect to the concatenated input.
    pub fn backward(&self, p: &[f32], cache: &ClassifierCache, d_logits: &[f32], grad: &mut [f32]) -> Vec<f32> {
        let (gw2, gb2) = split2(grad, &self.w2, &self.b2);
        let mut dh = affine_backward(&p[self.w2.clone()], &cache.hidden, d_logits, gw2, Some(gb2));
        for (d, h) in dh.iter_mut().zip(&cache.hidden) {
            if *h <= 0.0 {
                *d = 0.0;
            }
        }
        let (gw1, gb1) = split2(grad, &self.w1, &self.b1);
        affine_backward(&p[self.w1.clone()], &cache.input, &dh, gw1, Some(gb1))
    }
}

/// Disjoint mutable views of two parameter ranges, `a` before `b`.
fn split2<'a>(grad: &'a mut [f32], a: &Range<usize>, b: &Range<usize>) -> (&'a mut [f32], &'a mut [f32]) {
    debug_assert!(a.end <= b.start);
    let (lo, hi) = grad.split_at_mut(b.start);
    (&mut lo[a.clone()], &mut hi[..b.len()])
}

/// Target network widths: content features -> 16 -> 8 -> 1.
pub const TARGET_WIDTHS: [usize; 4] = [CONTENT_DIM, 16, 8, 1];

#[derive(Debug, Clone)]
struct HyperLayer {
    /// Generates the `[out, in]` weight matrix from the semantic vector.
    gen_w: Range<usize>,
    /// Generates the bias (`gen_b * s + bias`).
    gen_b: Range<usize>,
    bias: Range<usize>,
    inp: usize,
    out: usize,
}

/// Hypernetwork quality head: the semantic vector emits the weights of a
/// small target MLP that is applied to the content features.
#[derive(Debug, Clone)]
pub(crate) struct HyperHead {
    layers: Vec<HyperLayer>,
}

pub(crate) struct HyperCache {
    semantic: Vec<f32>,
    /// Input of each target layer.
    inputs: Vec<Vec<f32>>,
    /// Generated weights and biases of each target layer.
    weights: Vec<Vec<f32>>,
    /// Pre-activations of hidden layers.
    pre: Vec<Vec<f32>>,
}

impl HyperHead {
    pub fn build(params: &mut ParamStore, rng: &mut impl Rng) -> Self {
        let g = ParamGroup::Heads;
        let s_scale = (SEMANTIC_DIM as f32).sqrt();
        let mut layers = Vec::new();
        for i in 0..TARGET_WIDTHS.len() - 1 {
            let (inp, out) = (TARGET_WIDTHS[i], TARGET_WIDTHS[i + 1]);
            let std = (2.0 / inp as f32).sqrt() / s_scale;
            let n = i + 1;
            let gen_w = params.push(&format!("hyper.fc{n}.weight_gen"), &[out * inp, SEMANTIC_DIM], g, Init::Normal(std), rng);
            let gen_b = params.push(&format!("hyper.fc{n}.bias_gen"), &[out, SEMANTIC_DIM], g, Init::Normal(0.1 / s_scale), rng);
            let bias = params.push(&format!("hyper.fc{n}.bias"), &[out], g, Init::Zeros, rng);
            layers.push(HyperLayer { gen_w, gen_b, bias, inp, out });
        }
        Self { layers }
    }

    pub fn forward(&self, p: &[f32], semantic: &[f32], content: &[f32]) -> (f32, HyperCache) {
        let mut cache = HyperCache {
            semantic: semantic.to_vec(),
            inputs: Vec::new(),
            weights: Vec::new(),
            pre: Vec::new(),
        };
        let mut x = content.to_vec();
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let w = affine(&p[l.gen_w.clone()], None, semantic, l.out * l.inp);
            let b = affine(&p[l.gen_b.clone()], Some(&p[l.bias.clone()]), semantic, l.out);
            let z = affine(&w, Some(&b), &x, l.out);
            cache.inputs.push(x);
            cache.weights.push(w);
            if i == last {
                return (z[0], cache);
            }
            x = z.iter().map(|v| v.max(0.0)).collect();
            cache.pre.push(z);
        }
        unreachable!("head has at least one layer")
    }

    /// Returns gradients with respect to (semantic, content).
    pub fn backward(&self, p: &[f32], cache: &HyperCache, d_out: f32, grad: &mut [f32]) -> (Vec<f32>, Vec<f32>) {
        let s = &cache.semantic;
        let mut ds = vec![0.0; s.len()];
        let mut dz = vec![d_out];
        for (i, l) in self.layers.iter().enumerate().rev() {
            let mut dw = vec![0.0; l.out * l.inp];
            let mut db = vec![0.0; l.out];
            let mut dx = affine_backward(&cache.weights[i], &cache.inputs[i], &dz, &mut dw, Some(&mut db));
            let ds_w = affine_backward(&p[l.gen_w.clone()], s, &dw, &mut grad[l.gen_w.clone()], None);
            for (g, d) in grad[l.bias.clone()].iter_mut().zip(&db) {
                *g += d;
            }
            let ds_b = affine_backward(&p[l.gen_b.clone()], s, &db, &mut grad[l.gen_b.clone()], None);
            for ((acc, a), b) in ds.iter_mut().zip(&ds_w).zip(&ds_b) {
                *acc += a + b;
            }
            if i > 0 {
                for (d, z) in dx.iter_mut().zip(&cache.pre[i - 1]) {
                    if *z <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            dz = dx;
        }
        (ds, dz)
    }
}

/// Fixed-parameter fallback head: one linear unit on the content features.
#[derive(Debug, Clone)]
pub(crate) struct LinearProbe {
    pub w: Range<usize>,
    pub b: Range<usize>,
}

impl LinearProbe {
    pub fn build(params: &mut ParamStore, rng: &mut impl Rng) -> Self {
        let g = ParamGroup::Heads;
        let w = params.push("probe.weight", &[1, CONTENT_DIM], g, Init::Const(1.0 / CONTENT_DIM as f32), rng);
        let b = params.push("probe.bias", &[1], g, Init::Zeros, rng);
        Self { w, b }
    }

    pub fn forward(&self, p: &[f32], content: &[f32]) -> f32 {
        affine(&p[self.w.clone()], Some(&p[self.b.clone()]), content, 1)[0]
    }

    pub fn backward(&self, p: &[f32], content: &[f32], d_out: f32, grad: &mut [f32]) -> Vec<f32> {
        let (gw, gb) = split2(grad, &self.w, &self.b);
        affine_backward(&p[self.w.clone()], content, &[d_out], gw, Some(gb))
    }
}
