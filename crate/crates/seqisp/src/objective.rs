//! Task losses, the intensity penalty, the reward, and the two training
//! objectives.
//!
//! The reward is the improvement in task loss over the raw input minus a
//! penalty: R = L(I_in) − L(I_out) − P(I_out). The policy minimizes
//! −Ê[R·Σ log π]; the parameter path minimizes L(I_out) + P(I_out), which is
//! equivalent to maximizing the reward since L(I_in) is constant there.

use crate::error::{Error, Result};
use crate::image::{mean_intensity, mse, Image};

/// Named downstream tasks. Both desk-scale tasks score the output against a
/// per-sample target image with MSE; they differ in which dataset they are
/// meant for.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TaskKind {
    /// Enhancement toward a retouched reference.
    EnhanceMse,
    /// Restoration of a synthetically degraded image.
    SynthRestore,
}

impl TaskKind {
    pub fn name(self) -> &'static str {
        match self {
            TaskKind::EnhanceMse => "enhance_mse",
            TaskKind::SynthRestore => "synth_restore",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "enhance_mse" => Some(TaskKind::EnhanceMse),
            "synth_restore" => Some(TaskKind::SynthRestore),
            _ => None,
        }
    }

    pub fn loss(self, img: &Image, target: &Image) -> Result<f64> {
        mse(img, target)
    }

    /// d loss / d img = 2(img − target)/N.
    pub fn loss_grad(self, img: &Image, target: &Image) -> Result<Image> {
        if !img.same_shape(target) {
            return Err(Error::DimensionMismatch(format!(
                "loss_grad: {}x{} vs {}x{}",
                img.height(),
                img.width(),
                target.height(),
                target.width()
            )));
        }
        let n = img.data().len() as f64;
        Ok(Image::from_vec(
            img.height(),
            img.width(),
            img.data()
                .iter()
                .zip(target.data())
                .map(|(&o, &t)| 2.0 * (o - t) / n)
                .collect(),
        )?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PenaltyConfig {
    pub alpha1: f64,
    pub alpha2: f64,
    pub i_low: f64,
    pub i_high: f64,
    /// Optional length penalty λ_len · (number of modules); 0 disables it.
    pub length_penalty: f64,
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        PenaltyConfig {
            alpha1: 1.0,
            alpha2: 1.0,
            i_low: 0.01,
            i_high: 0.9,
            length_penalty: 0.0,
        }
    }
}

/// P = α1·[I_low − Ī]₊ + α2·[Ī − I_high]₊ + λ_len·seq_len.
pub fn penalty(output: &Image, cfg: &PenaltyConfig, seq_len: usize) -> f64 {
    let mean = mean_intensity(output);
    cfg.alpha1 * (cfg.i_low - mean).max(0.0)
        + cfg.alpha2 * (mean - cfg.i_high).max(0.0)
        + cfg.length_penalty * seq_len as f64
}

/// Gradient of the intensity penalty w.r.t. the output image. Inside an
/// active hinge the gradient is the constant ∓α/N; at the kink it is 0.
pub fn penalty_grad(output: &Image, cfg: &PenaltyConfig) -> Image {
    let mean = mean_intensity(output);
    let n = output.data().len() as f64;
    let mut per_value = 0.0;
    if mean < cfg.i_low {
        per_value -= cfg.alpha1 / n;
    }
    if mean > cfg.i_high {
        per_value += cfg.alpha2 / n;
    }
    Image::from_vec(
        output.height(),
        output.width(),
        vec![per_value; output.data().len()],
    )
    .unwrap()
}

/// R = L(I_in) − L(I_out) − P(I_out).
pub fn reward(
    input: &Image,
    output: &Image,
    task: TaskKind,
    target: &Image,
    cfg: &PenaltyConfig,
    seq_len: usize,
) -> Result<f64> {
    Ok(task.loss(input, target)? - task.loss(output, target)? - penalty(output, cfg, seq_len))
}

/// L_seq = −mean_b[(R_b − baseline)·Σ log π_b]; the baseline is the batch
/// mean when enabled, otherwise 0.
pub fn reinforce_loss(rewards: &[f64], sum_log_probs: &[f64], use_baseline: bool) -> f64 {
    assert_eq!(rewards.len(), sum_log_probs.len());
    let baseline = if use_baseline {
        rewards.iter().sum::<f64>() / rewards.len() as f64
    } else {
        0.0
    };
    let mut acc = 0.0;
    for (&r, &lp) in rewards.iter().zip(sum_log_probs) {
        acc += (r - baseline) * lp;
    }
    -acc / rewards.len() as f64
}

/// L_param = L(I_out) + P(I_out).
pub fn param_loss(
    output: &Image,
    task: TaskKind,
    target: &Image,
    cfg: &PenaltyConfig,
    seq_len: usize,
) -> Result<f64> {
    Ok(task.loss(output, target)? + penalty(output, cfg, seq_len))
}

/// Gradient image of L_param w.r.t. the output.
pub fn param_loss_grad(
    output: &Image,
    task: TaskKind,
    target: &Image,
    cfg: &PenaltyConfig,
) -> Result<Image> {
    let mut g = task.loss_grad(output, target)?;
    let pg = penalty_grad(output, cfg);
    for (a, &b) in g.data_mut().iter_mut().zip(pg.data()) {
        *a += b;
    }
    Ok(g)
}
