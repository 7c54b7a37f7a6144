//! The ten ISP modules of the candidate pool.
//!
//! Each kernel exposes a forward map `forward(img, raw_params) -> Image` and
//! a reverse-mode `vjp(img, raw_params, upstream) -> KernelGradients`. Raw
//! parameters live in [0,1] and are rescaled to module-specific ranges
//! inside the kernel. All rescale maps are linear except gamma, which uses
//! the log-symmetric map 3^(2θ-1) so the midpoint is the identity exponent.
//!
//! VJPs are exact adjoints of the forward maps, with two documented
//! exceptions for Denoise: its strength gradient is a central finite
//! difference (step 1e-3) and its input gradient treats the NLM weights as
//! constants.

use crate::image::{luminance, rgb_to_hsv, Image, LUMINANCE_WEIGHTS};

/// Identifiers of the ten candidate modules, in the fixed parameter-vector
/// order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ModuleId {
    Exposure,
    Gamma,
    ToneMap,
    Contrast,
    Saturation,
    Desaturation,
    WhiteBalance,
    Denoise,
    SharpenBlur,
    ColorCorrection,
}

pub const MODULE_COUNT: usize = 10;

/// Total parameter count over all modules.
pub const TOTAL_PARAMS: usize = 27;

impl ModuleId {
    pub const ALL: [ModuleId; MODULE_COUNT] = [
        ModuleId::Exposure,
        ModuleId::Gamma,
        ModuleId::ToneMap,
        ModuleId::Contrast,
        ModuleId::Saturation,
        ModuleId::Desaturation,
        ModuleId::WhiteBalance,
        ModuleId::Denoise,
        ModuleId::SharpenBlur,
        ModuleId::ColorCorrection,
    ];

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&m| m == self).unwrap()
    }

    pub fn from_index(i: usize) -> Option<ModuleId> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ModuleId::Exposure => "Exposure",
            ModuleId::Gamma => "Gamma",
            ModuleId::ToneMap => "ToneMap",
            ModuleId::Contrast => "Contrast",
            ModuleId::Saturation => "Saturation",
            ModuleId::Desaturation => "Desaturation",
            ModuleId::WhiteBalance => "WhiteBalance",
            ModuleId::Denoise => "Denoise",
            ModuleId::SharpenBlur => "SharpenBlur",
            ModuleId::ColorCorrection => "ColorCorrection",
        }
    }

    pub fn from_name(name: &str) -> Option<ModuleId> {
        Self::ALL.iter().copied().find(|m| m.name() == name)
    }

    pub fn param_count(self) -> usize {
        match self {
            ModuleId::ToneMap => 8,
            ModuleId::WhiteBalance => 3,
            ModuleId::ColorCorrection => 9,
            _ => 1,
        }
    }

    /// Offset of this module's slice in the 27-value full parameter vector.
    pub fn param_offset(self) -> usize {
        let mut off = 0;
        for m in Self::ALL {
            if m == self {
                return off;
            }
            off += m.param_count();
        }
        unreachable!()
    }
}

/// Reverse-mode result of one kernel application.
#[derive(Clone, Debug)]
pub struct KernelGradients {
    pub d_input: Image,
    pub d_params: Vec<f64>,
}

/// Applies one module. `params` must have the module's parameter count.
pub fn kernel_forward(module: ModuleId, img: &Image, params: &[f64]) -> Image {
    assert_eq!(params.len(), module.param_count(), "{}", module.name());
    match module {
        ModuleId::Exposure => exposure_forward(img, params[0]),
        ModuleId::Gamma => gamma_forward(img, params[0]),
        ModuleId::ToneMap => tonemap_forward(img, params),
        ModuleId::Contrast => contrast_forward(img, params[0]),
        ModuleId::Saturation => saturation_forward(img, params[0]),
        ModuleId::Desaturation => desaturation_forward(img, params[0]),
        ModuleId::WhiteBalance => whitebalance_forward(img, params),
        ModuleId::Denoise => denoise_forward(img, params[0]),
        ModuleId::SharpenBlur => sharpenblur_forward(img, params[0]),
        ModuleId::ColorCorrection => ccm_forward(img, params),
    }
}

/// Exact adjoint of [`kernel_forward`] (see module docs for the Denoise
/// approximations).
pub fn kernel_vjp(
    module: ModuleId,
    img: &Image,
    params: &[f64],
    upstream: &Image,
) -> KernelGradients {
    assert_eq!(params.len(), module.param_count(), "{}", module.name());
    assert!(img.same_shape(upstream));
    match module {
        ModuleId::Exposure => exposure_vjp(img, params[0], upstream),
        ModuleId::Gamma => gamma_vjp(img, params[0], upstream),
        ModuleId::ToneMap => tonemap_vjp(img, params, upstream),
        ModuleId::Contrast => contrast_vjp(img, params[0], upstream),
        ModuleId::Saturation => saturation_vjp(img, params[0], upstream),
        ModuleId::Desaturation => desaturation_vjp(img, params[0], upstream),
        ModuleId::WhiteBalance => whitebalance_vjp(img, params, upstream),
        ModuleId::Denoise => denoise_vjp(img, params[0], upstream),
        ModuleId::SharpenBlur => sharpenblur_vjp(img, params[0], upstream),
        ModuleId::ColorCorrection => ccm_vjp(img, params, upstream),
    }
}

// ---- Exposure: gain 2^θ' with θ' in [-3.5, 3.5] ----

fn exposure_gain(theta: f64) -> f64 {
    (7.0 * theta - 3.5).exp2()
}

fn exposure_forward(img: &Image, theta: f64) -> Image {
    let gain = exposure_gain(theta);
    img.map(|v| gain * v)
}

fn exposure_vjp(img: &Image, theta: f64, up: &Image) -> KernelGradients {
    let gain = exposure_gain(theta);
    let d_input = up.map(|u| gain * u);
    let mut dot = 0.0;
    for (&u, &v) in up.data().iter().zip(img.data()) {
        dot += u * v;
    }
    let d_theta = std::f64::consts::LN_2 * 7.0 * gain * dot;
    KernelGradients {
        d_input,
        d_params: vec![d_theta],
    }
}

// ---- Gamma: exponent 3^(2θ-1) in [1/3, 3], base clamped to [0, inf) ----

fn gamma_exponent(theta: f64) -> f64 {
    3f64.powf(2.0 * theta - 1.0)
}

fn gamma_forward(img: &Image, theta: f64) -> Image {
    let e = gamma_exponent(theta);
    img.map(|v| v.max(0.0).powf(e))
}

fn gamma_vjp(img: &Image, theta: f64, up: &Image) -> KernelGradients {
    let e = gamma_exponent(theta);
    let de_dtheta = e * 3f64.ln() * 2.0;
    let mut d_input = img.zeros_like();
    let mut d_theta = 0.0;
    for i in 0..img.data().len() {
        let v = img.data()[i];
        let u = up.data()[i];
        if v > 0.0 {
            d_input.data_mut()[i] = u * e * v.powf(e - 1.0);
            d_theta += u * v.powf(e) * v.ln() * de_dtheta;
        }
    }
    KernelGradients {
        d_input,
        d_params: vec![d_theta],
    }
}

// ---- Tone mapping: 8 piecewise-linear basis functions ----

/// b_i(u) = max(0, min(u - (i-1)/8, 1/8)) for i in 1..=8.
pub fn tone_basis(u: f64, i: usize) -> f64 {
    debug_assert!((1..=8).contains(&i));
    (u - (i - 1) as f64 / 8.0).min(1.0 / 8.0).max(0.0)
}

fn tonemap_rescale(params: &[f64]) -> ([f64; 8], f64) {
    let mut tp = [0.0; 8];
    let mut z = 0.0;
    for (t, &p) in tp.iter_mut().zip(params) {
        *t = 0.5 + 1.5 * p;
        z += *t;
    }
    (tp, z)
}

fn tonemap_value(tp: &[f64; 8], z: f64, u: f64) -> f64 {
    let mut acc = 0.0;
    for (i, &t) in tp.iter().enumerate() {
        acc += t * tone_basis(u, i + 1);
    }
    8.0 * acc / z
}

fn tonemap_forward(img: &Image, params: &[f64]) -> Image {
    let (tp, z) = tonemap_rescale(params);
    img.map(|v| tonemap_value(&tp, z, v.clamp(0.0, 1.0)))
}

fn tonemap_vjp(img: &Image, params: &[f64], up: &Image) -> KernelGradients {
    let (tp, z) = tonemap_rescale(params);
    let mut d_input = img.zeros_like();
    let mut d_params = vec![0.0; 8];
    for i in 0..img.data().len() {
        let v = img.data()[i];
        let u_raw = up.data()[i];
        let u = v.clamp(0.0, 1.0);
        // Active linear segment; zero slope outside [0,1].
        if (0.0..=1.0).contains(&v) {
            let seg = ((u * 8.0) as usize).min(7);
            d_input.data_mut()[i] = u_raw * 8.0 * tp[seg] / z;
        }
        let out = tonemap_value(&tp, z, u);
        for (k, dp) in d_params.iter_mut().enumerate() {
            *dp += u_raw * 1.5 * (8.0 * tone_basis(u, k + 1) - out) / z;
        }
    }
    KernelGradients { d_input, d_params }
}

// ---- Contrast: blend with an S-curve-rescaled image ----

const CONTRAST_EPS: f64 = 1e-6;

fn contrast_forward(img: &Image, theta: f64) -> Image {
    let tc = 2.0 * theta - 1.0;
    let mut out = img.zeros_like();
    for y in 0..img.height() {
        for x in 0..img.width() {
            let p = img.pixel(y, x);
            let lum = luminance(p);
            let s = (1.0 - (std::f64::consts::PI * lum).cos()) / 2.0;
            let scale = s / (lum + CONTRAST_EPS);
            let mut q = [0.0; 3];
            for c in 0..3 {
                let reshaped = p[c] * scale;
                q[c] = (1.0 - tc) * p[c] + tc * reshaped;
            }
            out.set_pixel(y, x, q);
        }
    }
    out
}

fn contrast_vjp(img: &Image, theta: f64, up: &Image) -> KernelGradients {
    let tc = 2.0 * theta - 1.0;
    let mut d_input = img.zeros_like();
    let mut d_theta = 0.0;
    for y in 0..img.height() {
        for x in 0..img.width() {
            let p = img.pixel(y, x);
            let u = up.pixel(y, x);
            let lum = luminance(p);
            let denom = lum + CONTRAST_EPS;
            let s = (1.0 - (std::f64::consts::PI * lum).cos()) / 2.0;
            let s_prime = std::f64::consts::PI / 2.0 * (std::f64::consts::PI * lum).sin();
            let scale = s / denom;
            let dscale_dlum = (s_prime * denom - s) / (denom * denom);
            let up_dot_p = u[0] * p[0] + u[1] * p[1] + u[2] * p[2];
            let mut q = [0.0; 3];
            for c in 0..3 {
                d_theta += 2.0 * u[c] * (p[c] * scale - p[c]);
                q[c] = (1.0 - tc) * u[c]
                    + tc * (u[c] * scale + up_dot_p * dscale_dlum * LUMINANCE_WEIGHTS[c]);
            }
            d_input.set_pixel(y, x, q);
        }
    }
    KernelGradients {
        d_input,
        d_params: vec![d_theta],
    }
}

// ---- Saturation: HSV-space saturation boost, blended ----

fn saturation_enhance(s: f64, v: f64) -> f64 {
    s + 0.8 * (1.0 - s) * (0.5 - (0.5 - v).abs())
}

fn saturation_enhanced_pixel(p: [f64; 3]) -> [f64; 3] {
    let cl = [
        p[0].clamp(0.0, 1.0),
        p[1].clamp(0.0, 1.0),
        p[2].clamp(0.0, 1.0),
    ];
    let hsv = rgb_to_hsv(cl);
    crate::image::hsv_to_rgb(crate::image::HsvPixel {
        hue: hsv.hue,
        saturation: saturation_enhance(hsv.saturation, hsv.value),
        value: hsv.value,
    })
}

fn saturation_forward(img: &Image, theta: f64) -> Image {
    let mut out = img.zeros_like();
    for y in 0..img.height() {
        for x in 0..img.width() {
            let p = img.pixel(y, x);
            let enh = saturation_enhanced_pixel(p);
            let mut q = [0.0; 3];
            for c in 0..3 {
                q[c] = (1.0 - theta) * p[c] + theta * enh[c];
            }
            out.set_pixel(y, x, q);
        }
    }
    out
}

/// Per-pixel Jacobian-transpose product for the HSV enhancement path.
/// Subgradients at piecewise boundaries take the left branch.
fn saturation_enh_jt(p_clamped: [f64; 3], u: [f64; 3]) -> [f64; 3] {
    let [r, g, b] = p_clamped;

    // argmax / argmin with lowest-index tie-break
    let mut imax = 0;
    let mut imin = 0;
    for c in 1..3 {
        if p_clamped[c] > p_clamped[imax] {
            imax = c;
        }
        if p_clamped[c] < p_clamped[imin] {
            imin = c;
        }
    }
    let vmax = p_clamped[imax];
    let vmin = p_clamped[imin];
    let chroma = vmax - vmin;

    // dV, dS, dH as gradients w.r.t. the clamped rgb
    let mut d_v = [0.0; 3];
    d_v[imax] = 1.0;
    let mut d_s = [0.0; 3];
    let mut d_h = [0.0; 3];
    let sat;
    let hue;
    if chroma > 0.0 && vmax > 0.0 {
        sat = chroma / vmax;
        let mut d_c = [0.0; 3];
        d_c[imax] += 1.0;
        d_c[imin] -= 1.0;
        for c in 0..3 {
            d_s[c] = d_c[c] / vmax - (chroma / (vmax * vmax)) * d_v[c];
        }
        // hue sextant by max channel; the mod-6 shift has zero derivative
        let (num, e_pos, e_neg) = match imax {
            0 => (g - b, 1usize, 2usize),
            1 => (b - r, 2, 0),
            _ => (r - g, 0, 1),
        };
        let mut h6 = num / chroma;
        if imax == 0 && h6 < 0.0 {
            h6 += 6.0;
        }
        hue = (h6 + if imax == 0 { 0.0 } else { 2.0 * imax as f64 }) / 6.0;
        for c in 0..3 {
            let d_num = if c == e_pos {
                1.0
            } else if c == e_neg {
                -1.0
            } else {
                0.0
            };
            d_h[c] = (d_num / chroma - num / (chroma * chroma) * d_c[c]) / 6.0;
        }
    } else {
        sat = 0.0;
        hue = 0.0;
    }

    let depth = 0.5 - (0.5 - vmax).abs();
    // left-branch subgradient at V = 0.5
    let ddepth_dv = if vmax <= 0.5 { 1.0 } else { -1.0 };
    let s_enh = saturation_enhance(sat, vmax);
    let mut d_se = [0.0; 3];
    for c in 0..3 {
        d_se[c] = d_s[c] * (1.0 - 0.8 * depth) + d_v[c] * 0.8 * (1.0 - sat) * ddepth_dv;
    }

    // hsv_to_rgb partials inside the fixed sextant
    let h6 = hue.rem_euclid(1.0) * 6.0;
    let sextant = (h6.floor() as usize).min(5);
    let f = h6 - sextant as f64;
    let v = vmax;
    let s = s_enh;

    // gradients of f, lo = v(1-s), falling = v(1-s f), rising = v(1-s(1-f))
    let mut d_f = [0.0; 3];
    for c in 0..3 {
        d_f[c] = 6.0 * d_h[c];
    }
    let mut d_lo = [0.0; 3];
    let mut d_fall = [0.0; 3];
    let mut d_rise = [0.0; 3];
    for c in 0..3 {
        d_lo[c] = (1.0 - s) * d_v[c] - v * d_se[c];
        d_fall[c] = (1.0 - s * f) * d_v[c] - v * f * d_se[c] - v * s * d_f[c];
        d_rise[c] = (1.0 - s * (1.0 - f)) * d_v[c] - v * (1.0 - f) * d_se[c] + v * s * d_f[c];
    }

    let (dr, dg, db) = match sextant {
        0 => (d_v, d_rise, d_lo),
        1 => (d_fall, d_v, d_lo),
        2 => (d_lo, d_v, d_rise),
        3 => (d_lo, d_fall, d_v),
        4 => (d_rise, d_lo, d_v),
        _ => (d_v, d_lo, d_fall),
    };

    let mut out = [0.0; 3];
    for c in 0..3 {
        out[c] = u[0] * dr[c] + u[1] * dg[c] + u[2] * db[c];
    }
    out
}

fn saturation_vjp(img: &Image, theta: f64, up: &Image) -> KernelGradients {
    let mut d_input = img.zeros_like();
    let mut d_theta = 0.0;
    for y in 0..img.height() {
        for x in 0..img.width() {
            let p = img.pixel(y, x);
            let u = up.pixel(y, x);
            let cl = [
                p[0].clamp(0.0, 1.0),
                p[1].clamp(0.0, 1.0),
                p[2].clamp(0.0, 1.0),
            ];
            let enh = saturation_enhanced_pixel(p);
            let jt = saturation_enh_jt(cl, u);
            let mut q = [0.0; 3];
            for c in 0..3 {
                d_theta += u[c] * (enh[c] - p[c]);
                // the enhancement path flows through the input clamp
                let in_range = (0.0..=1.0).contains(&p[c]);
                q[c] = (1.0 - theta) * u[c] + theta * if in_range { jt[c] } else { 0.0 };
            }
            d_input.set_pixel(y, x, q);
        }
    }
    KernelGradients {
        d_input,
        d_params: vec![d_theta],
    }
}

// ---- Desaturation: blend with the grayscale image ----

fn desaturation_forward(img: &Image, theta: f64) -> Image {
    let mut out = img.zeros_like();
    for y in 0..img.height() {
        for x in 0..img.width() {
            let p = img.pixel(y, x);
            let lum = luminance(p);
            let mut q = [0.0; 3];
            for c in 0..3 {
                q[c] = (1.0 - theta) * p[c] + theta * lum;
            }
            out.set_pixel(y, x, q);
        }
    }
    out
}

fn desaturation_vjp(img: &Image, theta: f64, up: &Image) -> KernelGradients {
    let mut d_input = img.zeros_like();
    let mut d_theta = 0.0;
    for y in 0..img.height() {
        for x in 0..img.width() {
            let p = img.pixel(y, x);
            let u = up.pixel(y, x);
            let lum = luminance(p);
            let u_sum = u[0] + u[1] + u[2];
            let mut q = [0.0; 3];
            for c in 0..3 {
                d_theta += u[c] * (lum - p[c]);
                q[c] = (1.0 - theta) * u[c] + theta * LUMINANCE_WEIGHTS[c] * u_sum;
            }
            d_input.set_pixel(y, x, q);
        }
    }
    KernelGradients {
        d_input,
        d_params: vec![d_theta],
    }
}

// ---- White balance: luminance-preserving per-channel gains ----

const WB_LO: f64 = 1.0 / 1.1;
const WB_HI: f64 = 1.1;

fn wb_rescale(params: &[f64]) -> [f64; 3] {
    let mut tp = [0.0; 3];
    for (t, &p) in tp.iter_mut().zip(params) {
        *t = WB_LO + p * (WB_HI - WB_LO);
    }
    tp
}

fn wb_gains(tp: &[f64; 3]) -> ([f64; 3], f64) {
    let den = LUMINANCE_WEIGHTS[0] * tp[0] + LUMINANCE_WEIGHTS[1] * tp[1] + LUMINANCE_WEIGHTS[2] * tp[2];
    ([tp[0] / den, tp[1] / den, tp[2] / den], den)
}

fn whitebalance_forward(img: &Image, params: &[f64]) -> Image {
    let tp = wb_rescale(params);
    let (gains, _) = wb_gains(&tp);
    Image::from_fn(img.height(), img.width(), |y, x, c| {
        gains[c] * img.get(y, x, c)
    })
}

fn whitebalance_vjp(img: &Image, params: &[f64], up: &Image) -> KernelGradients {
    let tp = wb_rescale(params);
    let (gains, den) = wb_gains(&tp);
    let mut d_input = img.zeros_like();
    // per-channel Σ up·img dots
    let mut dots = [0.0; 3];
    for y in 0..img.height() {
        for x in 0..img.width() {
            for c in 0..3 {
                let u = up.get(y, x, c);
                dots[c] += u * img.get(y, x, c);
                d_input.set(y, x, c, u * gains[c]);
            }
        }
    }
    let mut d_params = vec![0.0; 3];
    let weighted: f64 = (0..3).map(|c| tp[c] * dots[c]).sum();
    for k in 0..3 {
        let d_tp = dots[k] / den - LUMINANCE_WEIGHTS[k] * weighted / (den * den);
        d_params[k] = d_tp * (WB_HI - WB_LO);
    }
    KernelGradients { d_input, d_params }
}

// ---- Denoise: non-local means, 7x7 window, 3x3 patches ----

const NLM_WINDOW: i64 = 3;
const NLM_PATCH: i64 = 1;
const NLM_STRENGTH_FLOOR: f64 = 1e-5;

fn nlm_strength(theta: f64) -> f64 {
    NLM_STRENGTH_FLOOR + (1.0 - NLM_STRENGTH_FLOOR) * theta
}

#[inline]
fn clamp_coord(v: i64, max: usize) -> usize {
    v.clamp(0, max as i64 - 1) as usize
}

/// Mean squared difference of the 3x3 RGB patches around (y0,x0) and (y1,x1),
/// with replicate padding.
fn nlm_patch_dist2(img: &Image, y0: i64, x0: i64, y1: i64, x1: i64) -> f64 {
    let h = img.height();
    let w = img.width();
    let mut acc = 0.0;
    for dy in -NLM_PATCH..=NLM_PATCH {
        for dx in -NLM_PATCH..=NLM_PATCH {
            let a = img.pixel(clamp_coord(y0 + dy, h), clamp_coord(x0 + dx, w));
            let b = img.pixel(clamp_coord(y1 + dy, h), clamp_coord(x1 + dx, w));
            for c in 0..3 {
                let d = a[c] - b[c];
                acc += d * d;
            }
        }
    }
    acc / 27.0
}

fn denoise_forward(img: &Image, theta: f64) -> Image {
    let strength = nlm_strength(theta);
    denoise_with_strength(img, strength)
}

fn denoise_with_strength(img: &Image, strength: f64) -> Image {
    let h = img.height();
    let w = img.width();
    let inv_s2 = 1.0 / (strength * strength);
    let mut out = img.zeros_like();
    for y in 0..h {
        for x in 0..w {
            let mut wsum = 0.0;
            let mut acc = [0.0; 3];
            for dy in -NLM_WINDOW..=NLM_WINDOW {
                for dx in -NLM_WINDOW..=NLM_WINDOW {
                    // window centers stay virtual; only pixel fetches clamp,
                    // treating the image as replicate-extended
                    let cy = y as i64 + dy;
                    let cx = x as i64 + dx;
                    let d2 = nlm_patch_dist2(img, y as i64, x as i64, cy, cx);
                    let wgt = (-d2 * inv_s2).exp();
                    let p = img.pixel(clamp_coord(cy, h), clamp_coord(cx, w));
                    wsum += wgt;
                    for c in 0..3 {
                        acc[c] += wgt * p[c];
                    }
                }
            }
            out.set_pixel(y, x, [acc[0] / wsum, acc[1] / wsum, acc[2] / wsum]);
        }
    }
    out
}

fn denoise_vjp(img: &Image, theta: f64, up: &Image) -> KernelGradients {
    let strength = nlm_strength(theta);
    let h = img.height();
    let w = img.width();
    let inv_s2 = 1.0 / (strength * strength);

    // Input gradient with the NLM weights treated as constants.
    let mut d_input = img.zeros_like();
    for y in 0..h {
        for x in 0..w {
            let mut wsum = 0.0;
            let mut weights = Vec::with_capacity(49);
            for dy in -NLM_WINDOW..=NLM_WINDOW {
                for dx in -NLM_WINDOW..=NLM_WINDOW {
                    let cy = y as i64 + dy;
                    let cx = x as i64 + dx;
                    let d2 = nlm_patch_dist2(img, y as i64, x as i64, cy, cx);
                    let wgt = (-d2 * inv_s2).exp();
                    weights.push((clamp_coord(cy, h), clamp_coord(cx, w), wgt));
                    wsum += wgt;
                }
            }
            let u = up.pixel(y, x);
            for (yy, xx, wgt) in weights {
                let wbar = wgt / wsum;
                for c in 0..3 {
                    let v = d_input.get(yy, xx, c);
                    d_input.set(yy, xx, c, v + wbar * u[c]);
                }
            }
        }
    }

    // Strength gradient by central finite difference on the raw parameter.
    let fd_step = 1e-3;
    let plus = denoise_with_strength(img, nlm_strength(theta + fd_step));
    let minus = denoise_with_strength(img, nlm_strength(theta - fd_step));
    let mut d_theta = 0.0;
    for i in 0..img.data().len() {
        d_theta += up.data()[i] * (plus.data()[i] - minus.data()[i]) / (2.0 * fd_step);
    }

    KernelGradients {
        d_input,
        d_params: vec![d_theta],
    }
}

// ---- Sharpen/Blur: blend with a 3x3 blur ----

/// Numerators of the 3x3 blur kernel; every tap is divided by 13.
const BLUR_NUMERATORS: [[f64; 3]; 3] = [[1.0, 1.0, 1.0], [1.0, 5.0, 1.0], [1.0, 1.0, 1.0]];
const BLUR_DENOM: f64 = 13.0;

fn sharpen_amount(theta: f64) -> f64 {
    1e-5 + (10.0 - 1e-5) * theta
}

fn blur3(img: &Image) -> Image {
    let h = img.height();
    let w = img.width();
    Image::from_fn(h, w, |y, x, c| {
        let mut acc = 0.0;
        for (dy, row) in BLUR_NUMERATORS.iter().enumerate() {
            for (dx, &k) in row.iter().enumerate() {
                let yy = clamp_coord(y as i64 + dy as i64 - 1, h);
                let xx = clamp_coord(x as i64 + dx as i64 - 1, w);
                acc += k * img.get(yy, xx, c);
            }
        }
        acc / BLUR_DENOM
    })
}

fn sharpenblur_forward(img: &Image, theta: f64) -> Image {
    let a = sharpen_amount(theta);
    let blur = blur3(img);
    Image::from_fn(img.height(), img.width(), |y, x, c| {
        a * img.get(y, x, c) + (1.0 - a) * blur.get(y, x, c)
    })
}

fn sharpenblur_vjp(img: &Image, theta: f64, up: &Image) -> KernelGradients {
    let a = sharpen_amount(theta);
    let h = img.height();
    let w = img.width();
    let blur = blur3(img);

    let mut d_theta = 0.0;
    for i in 0..img.data().len() {
        d_theta += up.data()[i] * (img.data()[i] - blur.data()[i]);
    }
    d_theta *= 10.0 - 1e-5;

    // Adjoint of replicate-padded convolution: scatter.
    let mut d_blur_in = img.zeros_like();
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let u = up.get(y, x, c);
                for (dy, row) in BLUR_NUMERATORS.iter().enumerate() {
                    for (dx, &k) in row.iter().enumerate() {
                        let yy = clamp_coord(y as i64 + dy as i64 - 1, h);
                        let xx = clamp_coord(x as i64 + dx as i64 - 1, w);
                        let v = d_blur_in.get(yy, xx, c);
                        d_blur_in.set(yy, xx, c, v + k * u / BLUR_DENOM);
                    }
                }
            }
        }
    }
    let d_input = Image::from_fn(h, w, |y, x, c| {
        a * up.get(y, x, c) + (1.0 - a) * d_blur_in.get(y, x, c)
    });

    KernelGradients {
        d_input,
        d_params: vec![d_theta],
    }
}

// ---- Color correction: row-normalized 3x3 matrix ----

const CCM_ROW_GUARD: f64 = 1e-3;

/// Sign-preserving row-sum guard; sign(0) = +1.
fn ccm_guard(s: f64) -> f64 {
    let sign = if s < 0.0 { -1.0 } else { 1.0 };
    sign * s.abs().max(CCM_ROW_GUARD)
}

fn ccm_matrices(params: &[f64]) -> ([[f64; 3]; 3], [f64; 3], [[f64; 3]; 3]) {
    let mut raw = [[0.0; 3]; 3];
    let mut sums = [0.0; 3];
    let mut norm = [[0.0; 3]; 3];
    for r in 0..3 {
        let mut s = 0.0;
        for c in 0..3 {
            raw[r][c] = 4.0 * params[r * 3 + c] - 2.0;
            s += raw[r][c];
        }
        sums[r] = ccm_guard(s);
        for c in 0..3 {
            norm[r][c] = raw[r][c] / sums[r];
        }
    }
    (raw, sums, norm)
}

fn ccm_forward(img: &Image, params: &[f64]) -> Image {
    let (_, _, n) = ccm_matrices(params);
    let mut out = img.zeros_like();
    for y in 0..img.height() {
        for x in 0..img.width() {
            let p = img.pixel(y, x);
            let mut q = [0.0; 3];
            for r in 0..3 {
                q[r] = n[r][0] * p[0] + n[r][1] * p[1] + n[r][2] * p[2];
            }
            out.set_pixel(y, x, q);
        }
    }
    out
}

fn ccm_vjp(img: &Image, params: &[f64], up: &Image) -> KernelGradients {
    let (raw, sums, n) = ccm_matrices(params);
    let mut raw_sums = [0.0; 3];
    for r in 0..3 {
        raw_sums[r] = raw[r][0] + raw[r][1] + raw[r][2];
    }
    let mut d_input = img.zeros_like();
    let mut d_params = vec![0.0; 9];
    for y in 0..img.height() {
        for x in 0..img.width() {
            let p = img.pixel(y, x);
            let u = up.pixel(y, x);
            let mut q = [0.0; 3];
            for c in 0..3 {
                q[c] = n[0][c] * u[0] + n[1][c] * u[1] + n[2][c] * u[2];
            }
            d_input.set_pixel(y, x, q);
            for r in 0..3 {
                let active = if raw_sums[r].abs() > CCM_ROW_GUARD {
                    1.0
                } else {
                    0.0
                };
                let m_dot_p = raw[r][0] * p[0] + raw[r][1] * p[1] + raw[r][2] * p[2];
                for k in 0..3 {
                    d_params[r * 3 + k] += 4.0
                        * u[r]
                        * (p[k] / sums[r] - active * m_dot_p / (sums[r] * sums[r]));
                }
            }
        }
    }
    KernelGradients { d_input, d_params }
}
