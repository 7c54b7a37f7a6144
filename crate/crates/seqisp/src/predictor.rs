//! Image-conditioned parameter predictor.
//!
//! The input image is adaptively average-pooled to a fixed resolution, passed
//! through three stride-2 3x3 convolutions with leaky-ReLU activations,
//! reduced by concatenated global average and max pooling, and mapped through
//! a two-layer head to a latent vector and a 27-value decoder. A final tanh
//! rescales outputs from [-1,1] to [0,1], so zero weights predict the exact
//! midpoint of every parameter range.

use crate::image::Image;
use crate::kernels::TOTAL_PARAMS;
use crate::rng::{stream, Purpose};
use crate::tensor::{matvec_acc, matvec_t_acc, outer_acc, Tensor};

const LEAKY_SLOPE: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PredictorConfig {
    /// Base channel count C; the stages produce C, 2C, 4C maps.
    pub channels: usize,
    /// Latent dimension D.
    pub latent: usize,
    /// Hidden width of the two-layer head.
    pub head: usize,
    /// Side length the input is adaptively pooled to; must be divisible by 8.
    pub input_size: usize,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        PredictorConfig {
            channels: 16,
            latent: 64,
            head: 256,
            input_size: 64,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Predictor {
    pub cfg: PredictorConfig,
    conv1_w: Tensor, // C x 3 x 3 x 3
    conv1_b: Tensor,
    conv2_w: Tensor, // 2C x C x 3 x 3
    conv2_b: Tensor,
    conv3_w: Tensor, // 4C x 2C x 3 x 3
    conv3_b: Tensor,
    fc1_w: Tensor, // head x 8C
    fc1_b: Tensor,
    fc2_w: Tensor, // D x head
    fc2_b: Tensor,
    dec_w: Tensor, // 27 x D
    dec_b: Tensor,
}

/// One channel-major feature map.
#[derive(Clone, Debug)]
struct FeatureMap {
    channels: usize,
    size: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    fn zeros(channels: usize, size: usize) -> Self {
        FeatureMap {
            channels,
            size,
            data: vec![0.0; channels * size * size],
        }
    }

    #[inline]
    fn idx(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.size + y) * self.size + x
    }
}

pub struct PredictorCache {
    pooled: FeatureMap,
    pre: [FeatureMap; 3],
    act: [FeatureMap; 3],
    pooled_vec: Vec<f64>, // [avg, max] concatenated, 8C
    argmax: Vec<usize>,   // flat spatial index per channel
    fc1_pre: Vec<f64>,
    fc1_act: Vec<f64>,
    latent: Vec<f64>,
    dec_pre: Vec<f64>,
}

/// Adaptive average pooling of an H×W×3 image to a 3×S×S channel-major map.
/// Output cell (oy, ox) averages rows [oy·H/S, (oy+1)·H/S) rounded outward.
fn adaptive_pool(img: &Image, size: usize) -> FeatureMap {
    let h = img.height();
    let w = img.width();
    let mut out = FeatureMap::zeros(3, size);
    for oy in 0..size {
        let y0 = oy * h / size;
        let y1 = ((oy + 1) * h).div_ceil(size).max(y0 + 1).min(h);
        for ox in 0..size {
            let x0 = ox * w / size;
            let x1 = ((ox + 1) * w).div_ceil(size).max(x0 + 1).min(w);
            let count = ((y1 - y0) * (x1 - x0)) as f64;
            for c in 0..3 {
                let mut acc = 0.0;
                for y in y0..y1 {
                    for x in x0..x1 {
                        acc += img.get(y, x, c);
                    }
                }
                let i = out.idx(c, oy, ox);
                out.data[i] = acc / count;
            }
        }
    }
    out
}

/// 3x3 convolution, stride 2, zero padding of 1.
fn conv_forward(input: &FeatureMap, w: &Tensor, b: &Tensor) -> FeatureMap {
    let oc = w.dims()[0];
    let ic = w.dims()[1];
    debug_assert_eq!(ic, input.channels);
    let n = input.size;
    let m = (n - 1) / 2 + 1;
    let mut out = FeatureMap::zeros(oc, m);
    for o in 0..oc {
        let bias = b.data()[o];
        for y in 0..m {
            for x in 0..m {
                let mut acc = bias;
                for i in 0..ic {
                    for ky in 0..3 {
                        let yy = (2 * y + ky) as i64 - 1;
                        if yy < 0 || yy >= n as i64 {
                            continue;
                        }
                        for kx in 0..3 {
                            let xx = (2 * x + kx) as i64 - 1;
                            if xx < 0 || xx >= n as i64 {
                                continue;
                            }
                            let wv = w.data()[((o * ic + i) * 3 + ky) * 3 + kx];
                            acc += wv * input.data[input.idx(i, yy as usize, xx as usize)];
                        }
                    }
                }
                let idx = out.idx(o, y, x);
                out.data[idx] = acc;
            }
        }
    }
    out
}

/// Backward of [`conv_forward`]: accumulates dW/db and returns d(input).
fn conv_backward(
    input: &FeatureMap,
    w: &Tensor,
    d_out: &FeatureMap,
    dw: &mut Tensor,
    db: &mut Tensor,
) -> FeatureMap {
    let oc = w.dims()[0];
    let ic = w.dims()[1];
    let n = input.size;
    let m = d_out.size;
    let mut d_in = FeatureMap::zeros(ic, n);
    for o in 0..oc {
        for y in 0..m {
            for x in 0..m {
                let g = d_out.data[d_out.idx(o, y, x)];
                if g == 0.0 {
                    continue;
                }
                db.data_mut()[o] += g;
                for i in 0..ic {
                    for ky in 0..3 {
                        let yy = (2 * y + ky) as i64 - 1;
                        if yy < 0 || yy >= n as i64 {
                            continue;
                        }
                        for kx in 0..3 {
                            let xx = (2 * x + kx) as i64 - 1;
                            if xx < 0 || xx >= n as i64 {
                                continue;
                            }
                            let widx = ((o * ic + i) * 3 + ky) * 3 + kx;
                            let iidx = input.idx(i, yy as usize, xx as usize);
                            dw.data_mut()[widx] += g * input.data[iidx];
                            d_in.data[iidx] += g * w.data()[widx];
                        }
                    }
                }
            }
        }
    }
    d_in
}

fn leaky(map: &FeatureMap) -> FeatureMap {
    FeatureMap {
        channels: map.channels,
        size: map.size,
        data: map
            .data
            .iter()
            .map(|&v| if v > 0.0 { v } else { LEAKY_SLOPE * v })
            .collect(),
    }
}

impl Predictor {
    pub fn init(seed: u64, cfg: PredictorConfig) -> Self {
        assert!(cfg.input_size >= 8 && cfg.input_size % 8 == 0);
        let mut rng = stream(seed, Purpose::PredictorInit, 0, 0);
        let c = cfg.channels;
        let mut u = |dims: &[usize], fan_in: usize| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            Tensor::uniform(dims, -bound, bound, &mut rng)
        };
        Predictor {
            cfg,
            conv1_w: u(&[c, 3, 3, 3], 27),
            conv1_b: u(&[c], 27),
            conv2_w: u(&[2 * c, c, 3, 3], 9 * c),
            conv2_b: u(&[2 * c], 9 * c),
            conv3_w: u(&[4 * c, 2 * c, 3, 3], 18 * c),
            conv3_b: u(&[4 * c], 18 * c),
            fc1_w: u(&[cfg.head, 8 * c], 8 * c),
            fc1_b: u(&[cfg.head], 8 * c),
            fc2_w: u(&[cfg.latent, cfg.head], cfg.head),
            fc2_b: u(&[cfg.latent], cfg.head),
            dec_w: u(&[TOTAL_PARAMS, cfg.latent], cfg.latent),
            // zero decoder bias: training starts from near-midpoint params
            dec_b: Tensor::zeros(&[TOTAL_PARAMS]),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Predictor {
            cfg: self.cfg,
            conv1_w: self.conv1_w.zeros_like(),
            conv1_b: self.conv1_b.zeros_like(),
            conv2_w: self.conv2_w.zeros_like(),
            conv2_b: self.conv2_b.zeros_like(),
            conv3_w: self.conv3_w.zeros_like(),
            conv3_b: self.conv3_b.zeros_like(),
            fc1_w: self.fc1_w.zeros_like(),
            fc1_b: self.fc1_b.zeros_like(),
            fc2_w: self.fc2_w.zeros_like(),
            fc2_b: self.fc2_b.zeros_like(),
            dec_w: self.dec_w.zeros_like(),
            dec_b: self.dec_b.zeros_like(),
        }
    }

    pub fn tensors(&self) -> Vec<(&'static str, &Tensor)> {
        vec![
            ("conv1.weight", &self.conv1_w),
            ("conv1.bias", &self.conv1_b),
            ("conv2.weight", &self.conv2_w),
            ("conv2.bias", &self.conv2_b),
            ("conv3.weight", &self.conv3_w),
            ("conv3.bias", &self.conv3_b),
            ("fc1.weight", &self.fc1_w),
            ("fc1.bias", &self.fc1_b),
            ("fc2.weight", &self.fc2_w),
            ("fc2.bias", &self.fc2_b),
            ("decoder.weight", &self.dec_w),
            ("decoder.bias", &self.dec_b),
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        vec![
            ("conv1.weight", &mut self.conv1_w),
            ("conv1.bias", &mut self.conv1_b),
            ("conv2.weight", &mut self.conv2_w),
            ("conv2.bias", &mut self.conv2_b),
            ("conv3.weight", &mut self.conv3_w),
            ("conv3.bias", &mut self.conv3_b),
            ("fc1.weight", &mut self.fc1_w),
            ("fc1.bias", &mut self.fc1_b),
            ("fc2.weight", &mut self.fc2_w),
            ("fc2.bias", &mut self.fc2_b),
            ("decoder.weight", &mut self.dec_w),
            ("decoder.bias", &mut self.dec_b),
        ]
    }

    /// 27 raw parameters in [0,1].
    pub fn predict(&self, img: &Image) -> Vec<f64> {
        self.forward(img).0
    }

    pub fn forward(&self, img: &Image) -> (Vec<f64>, PredictorCache) {
        let pooled = adaptive_pool(img, self.cfg.input_size);

        let pre1 = conv_forward(&pooled, &self.conv1_w, &self.conv1_b);
        let act1 = leaky(&pre1);
        let pre2 = conv_forward(&act1, &self.conv2_w, &self.conv2_b);
        let act2 = leaky(&pre2);
        let pre3 = conv_forward(&act2, &self.conv3_w, &self.conv3_b);
        let act3 = leaky(&pre3);

        let ch = act3.channels;
        let cells = act3.size * act3.size;
        let mut pooled_vec = vec![0.0; 2 * ch];
        let mut argmax = vec![0usize; ch];
        for c in 0..ch {
            let slice = &act3.data[c * cells..(c + 1) * cells];
            let mut acc = 0.0;
            let mut best = 0usize;
            for (i, &v) in slice.iter().enumerate() {
                acc += v;
                if v > slice[best] {
                    best = i;
                }
            }
            pooled_vec[c] = acc / cells as f64;
            pooled_vec[ch + c] = slice[best];
            argmax[c] = best;
        }

        let mut fc1_pre = self.fc1_b.data().to_vec();
        matvec_acc(&self.fc1_w, &pooled_vec, &mut fc1_pre);
        let fc1_act: Vec<f64> = fc1_pre.iter().map(|&v| v.max(0.0)).collect();

        let mut latent = self.fc2_b.data().to_vec();
        matvec_acc(&self.fc2_w, &fc1_act, &mut latent);

        let mut dec_pre = self.dec_b.data().to_vec();
        matvec_acc(&self.dec_w, &latent, &mut dec_pre);

        let out: Vec<f64> = dec_pre.iter().map(|&v| (v.tanh() + 1.0) / 2.0).collect();
        (
            out,
            PredictorCache {
                pooled,
                pre: [pre1, pre2, pre3],
                act: [act1, act2, act3],
                pooled_vec,
                argmax,
                fc1_pre,
                fc1_act,
                latent,
                dec_pre,
            },
        )
    }

    /// Exact reverse-mode gradients of the 27 outputs dotted with `upstream`.
    /// Max-pool routes to the argmax cell (ties to the lowest index).
    pub fn backward(&self, cache: &PredictorCache, upstream: &[f64]) -> Predictor {
        assert_eq!(upstream.len(), TOTAL_PARAMS);
        let mut g = self.zeros_like();

        // out = (tanh(u)+1)/2
        let d_dec_pre: Vec<f64> = cache
            .dec_pre
            .iter()
            .zip(upstream)
            .map(|(&u, &up)| {
                let t = u.tanh();
                up * (1.0 - t * t) / 2.0
            })
            .collect();
        outer_acc(&mut g.dec_w, &d_dec_pre, &cache.latent);
        for (gb, d) in g.dec_b.data_mut().iter_mut().zip(&d_dec_pre) {
            *gb += d;
        }
        let mut d_latent = vec![0.0; self.cfg.latent];
        matvec_t_acc(&self.dec_w, &d_dec_pre, &mut d_latent);

        outer_acc(&mut g.fc2_w, &d_latent, &cache.fc1_act);
        for (gb, d) in g.fc2_b.data_mut().iter_mut().zip(&d_latent) {
            *gb += d;
        }
        let mut d_fc1_act = vec![0.0; self.cfg.head];
        matvec_t_acc(&self.fc2_w, &d_latent, &mut d_fc1_act);
        let d_fc1_pre: Vec<f64> = d_fc1_act
            .iter()
            .zip(&cache.fc1_pre)
            .map(|(&d, &p)| if p > 0.0 { d } else { 0.0 })
            .collect();
        outer_acc(&mut g.fc1_w, &d_fc1_pre, &cache.pooled_vec);
        for (gb, d) in g.fc1_b.data_mut().iter_mut().zip(&d_fc1_pre) {
            *gb += d;
        }
        let mut d_pooled_vec = vec![0.0; 2 * 4 * self.cfg.channels];
        matvec_t_acc(&self.fc1_w, &d_fc1_pre, &mut d_pooled_vec);

        // un-pool into the last activation map
        let act3 = &cache.act[2];
        let ch = act3.channels;
        let cells = act3.size * act3.size;
        let mut d_act = FeatureMap::zeros(ch, act3.size);
        for c in 0..ch {
            let davg = d_pooled_vec[c] / cells as f64;
            for i in 0..cells {
                d_act.data[c * cells + i] = davg;
            }
            d_act.data[c * cells + cache.argmax[c]] += d_pooled_vec[ch + c];
        }

        // three conv stages in reverse
        let mut d_map = d_act;
        for stage in (0..3).rev() {
            // leaky backward against the pre-activation
            let pre = &cache.pre[stage];
            for (d, &p) in d_map.data.iter_mut().zip(&pre.data) {
                if p <= 0.0 {
                    *d *= LEAKY_SLOPE;
                }
            }
            let input = if stage == 0 {
                &cache.pooled
            } else {
                &cache.act[stage - 1]
            };
            let (w, dw, db) = match stage {
                0 => (&self.conv1_w, &mut g.conv1_w, &mut g.conv1_b),
                1 => (&self.conv2_w, &mut g.conv2_w, &mut g.conv2_b),
                _ => (&self.conv3_w, &mut g.conv3_w, &mut g.conv3_b),
            };
            d_map = conv_backward(input, w, &d_map, dw, db);
        }
        g
    }
}
