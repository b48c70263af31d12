//! Toy convolutional backbone: three strided conv + ReLU stages, each
//! globally average-pooled. Each patch is centred on its channel means
//! before the first stage. The pooled last stage followed by those means is
//! the semantic vector; the pooled outputs of all stages form the
//! multi-scale content features.
//! Global pooling makes the backbone size-agnostic, so one set of weights
//! serves every patch side that is a multiple of 224.

use std::ops::Range;

use rand::Rng;

use super::ops::{col2im, gemm, im2col, ConvGeom, View};
use super::params::{Init, ParamGroup, ParamStore};

pub const STAGE_CHANNELS: [usize; 3] = [8, 16, 32];
const STAGE_KERNELS: [(usize, usize, usize); 3] = [(4, 4, 0), (3, 2, 1), (3, 2, 1)];

pub const SEMANTIC_DIM: usize = STAGE_CHANNELS[2] + 3;
pub const CONTENT_DIM: usize = STAGE_CHANNELS[0] + STAGE_CHANNELS[1] + STAGE_CHANNELS[2];

#[derive(Debug, Clone)]
struct Conv {
    w: Range<usize>,
    b: Range<usize>,
    in_c: usize,
    out_c: usize,
    k: usize,
    stride: usize,
    pad: usize,
}

impl Conv {
    fn geom(&self, h: usize, w: usize) -> ConvGeom {
        ConvGeom {
            in_c: self.in_c,
            in_h: h,
            in_w: w,
            k: self.k,
            stride: self.stride,
            pad: self.pad,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct ToyBackbone {
    convs: Vec<Conv>,
}

/// Per-patch activations kept for the backward pass.
pub(crate) struct BackboneCache {
    geoms: Vec<ConvGeom>,
    cols: Vec<Vec<f32>>,
    acts: Vec<Vec<f32>>,
}

impl ToyBackbone {
    pub fn build(params: &mut ParamStore, rng: &mut impl Rng) -> Self {
        let mut convs = Vec::new();
        let mut in_c = 3;
        for (i, (&out_c, &(k, stride, pad))) in STAGE_CHANNELS.iter().zip(&STAGE_KERNELS).enumerate() {
            let fan_in = in_c * k * k;
            let std = (2.0 / fan_in as f32).sqrt();
            let w = params.push(&format!("backbone.conv{}.weight", i + 1), &[out_c, in_c, k, k], ParamGroup::Backbone, Init::Normal(std), rng);
            let b = params.push(&format!("backbone.conv{}.bias", i + 1), &[out_c], ParamGroup::Backbone, Init::Const(0.01), rng);
            convs.push(Conv { w, b, in_c, out_c, k, stride, pad });
            in_c = out_c;
        }
        Self { convs }
    }

    /// `input` is CHW with 3 channels. Returns (semantic, content, cache).
    pub fn forward(&self, params: &[f32], input: Vec<f32>, h: usize, w: usize) -> (Vec<f32>, Vec<f32>, BackboneCache) {
        let mut cache = BackboneCache {
            geoms: Vec::with_capacity(3),
            cols: Vec::with_capacity(3),
            acts: Vec::with_capacity(3),
        };
        let mut content = Vec::with_capacity(CONTENT_DIM);
        let mut x = input;
        let plane = h * w;
        let means: Vec<f32> = x
            .chunks_mut(plane)
            .map(|ch| {
                let m = ch.iter().sum::<f32>() / plane as f32;
                ch.iter_mut().for_each(|v| *v -= m);
                m
            })
            .collect();
        let (mut h, mut w) = (h, w);
        for conv in &self.convs {
            let g = conv.geom(h, w);
            let n = g.col_cols();
            let mut col = vec![0.0; g.col_rows() * n];
            im2col(&x, g, &mut col);
            let mut y = vec![0.0; conv.out_c * n];
            for (o, bias) in params[conv.b.clone()].iter().enumerate() {
                y[o * n..(o + 1) * n].fill(*bias);
            }
            gemm(1.0, &params[conv.w.clone()], View::rm(conv.out_c, g.col_rows()), &col, View::rm(g.col_rows(), n), 1.0, &mut y);
            for v in &mut y {
                *v = v.max(0.0);
            }
            content.extend(y.chunks(n).map(|c| c.iter().sum::<f32>() / n as f32));
            h = g.out_h();
            w = g.out_w();
            cache.geoms.push(g);
            cache.cols.push(col);
            x = y.clone();
            cache.acts.push(y);
        }
        let mut semantic = content[CONTENT_DIM - STAGE_CHANNELS[2]..].to_vec();
        semantic.extend(means);
        (semantic, content, cache)
    }

    /// Accumulates parameter gradients given gradients of the pooled outputs.
    pub fn backward(&self, params: &[f32], cache: &BackboneCache, d_semantic: &[f32], d_content: &[f32], grad: &mut [f32]) {
        let mut offsets = [0usize; 3];
        for i in 1..3 {
            offsets[i] = offsets[i - 1] + STAGE_CHANNELS[i - 1];
        }
        let mut carried: Option<Vec<f32>> = None;
        for (li, conv) in self.convs.iter().enumerate().rev() {
            let g = cache.geoms[li];
            let n = g.col_cols();
            let act = &cache.acts[li];
            let mut d_pre = carried.take().unwrap_or_else(|| vec![0.0; act.len()]);
            for o in 0..conv.out_c {
                let mut pooled = d_content[offsets[li] + o];
                if li == 2 {
                    pooled += d_semantic[o];
                }
                let pooled = pooled / n as f32;
                for v in &mut d_pre[o * n..(o + 1) * n] {
                    *v += pooled;
                }
            }
            for (d, a) in d_pre.iter_mut().zip(act) {
                if *a <= 0.0 {
                    *d = 0.0;
                }
            }
            let rows = g.col_rows();
            gemm(1.0, &d_pre, View::rm(conv.out_c, n), &cache.cols[li], View::rm_t(rows, n), 1.0, &mut grad[conv.w.clone()]);
            for (o, db) in grad[conv.b.clone()].iter_mut().enumerate() {
                *db += d_pre[o * n..(o + 1) * n].iter().sum::<f32>();
            }
            if li > 0 {
                let mut dcol = vec![0.0; rows * n];
                gemm(1.0, &params[conv.w.clone()], View::rm_t(conv.out_c, rows), &d_pre, View::rm(conv.out_c, n), 0.0, &mut dcol);
                let mut dx = vec![0.0; g.in_c * g.in_h * g.in_w];
                col2im(&dcol, g, &mut dx);
                carried = Some(dx);
            }
        }
    }
}

/// RGB raster to CHW floats in `[-1, 1]`.
pub(crate) fn to_chw(img: &image::RgbImage) -> Vec<f32> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut out = vec![0.0; 3 * w * h];
    for (i, px) in img.pixels().enumerate() {
        for c in 0..3 {
            out[c * w * h + i] = f32::from(px[c]) / 127.5 - 1.0;
        }
    }
    out
}
