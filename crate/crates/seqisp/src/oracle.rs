//! Brute-force certifier: enumerate every valid sequence over a small pool
//! and optimize shared parameters by grid coordinate descent, yielding the
//! reference-best pipeline the learned policy is judged against.

use crate::error::{Error, Result};
use crate::image::Image;
use crate::kernels::ModuleId;
use crate::objective::{penalty, PenaltyConfig, TaskKind};
use crate::pipeline::{apply_pipeline, FullParamVector, PipelineSequence};

pub const ORACLE_GRID: usize = 21;
pub const ORACLE_ROUNDS: usize = 3;
const MAX_POOL: usize = 4;
const MAX_MODULE_PARAMS: usize = 3;

#[derive(Clone, Debug)]
pub struct OracleResult {
    pub best_sequence: PipelineSequence,
    pub best_params: FullParamVector,
    pub best_reward: f64,
    /// (sequence, optimized mean reward) for every enumerated sequence, in
    /// enumeration order.
    pub table: Vec<(PipelineSequence, f64)>,
}

/// All ordered arrangements of every subset of the pool (the empty sequence
/// included), in prefix order.
pub fn enumerate_sequences(pool: &[ModuleId]) -> Result<Vec<PipelineSequence>> {
    if pool.len() > MAX_POOL {
        return Err(Error::Oracle(format!(
            "pool of {} modules is too large to enumerate (max {MAX_POOL})",
            pool.len()
        )));
    }
    let mut out = Vec::new();
    let mut prefix = Vec::new();
    fn extend(
        pool: &[ModuleId],
        prefix: &mut Vec<ModuleId>,
        out: &mut Vec<PipelineSequence>,
    ) {
        out.push(PipelineSequence::new(prefix.clone()).unwrap());
        for &m in pool {
            if !prefix.contains(&m) {
                prefix.push(m);
                extend(pool, prefix, out);
                prefix.pop();
            }
        }
    }
    extend(pool, &mut prefix, &mut out);
    Ok(out)
}

fn mean_reward(
    seq: &PipelineSequence,
    params: &FullParamVector,
    eval_set: &[(Image, Image)],
    task: TaskKind,
    cfg: &PenaltyConfig,
    input_losses: &[f64],
) -> Result<f64> {
    let mut acc = 0.0;
    for ((input, target), &l_in) in eval_set.iter().zip(input_losses) {
        let (out, _) = apply_pipeline(input, seq, params);
        acc += l_in - task.loss(&out, target)? - penalty(&out, cfg, seq.len());
    }
    Ok(acc / eval_set.len() as f64)
}

/// Coordinate descent over each raw parameter of the sequence's modules on a
/// uniform grid in [0,1], maximizing the mean reward over the eval set with
/// one shared parameter vector. Starts at the grid midpoint; sweeps run in
/// sequence order, then parameter index; ties keep the lowest grid value.
pub fn optimize_params(
    seq: &PipelineSequence,
    eval_set: &[(Image, Image)],
    task: TaskKind,
    cfg: &PenaltyConfig,
    grid: usize,
    rounds: usize,
) -> Result<(FullParamVector, f64)> {
    for m in seq.steps() {
        if m.param_count() > MAX_MODULE_PARAMS {
            return Err(Error::Oracle(format!(
                "module {} has {} parameters; oracle pools are limited to {MAX_MODULE_PARAMS}",
                m.name(),
                m.param_count()
            )));
        }
    }
    assert!(grid >= 2);
    let input_losses: Vec<f64> = eval_set
        .iter()
        .map(|(input, target)| task.loss(input, target))
        .collect::<Result<_>>()?;

    let mut params = FullParamVector::midpoint();
    let mut best = mean_reward(seq, &params, eval_set, task, cfg, &input_losses)?;
    for _ in 0..rounds {
        for &m in seq.steps() {
            let off = m.param_offset();
            for k in 0..m.param_count() {
                for g in 0..grid {
                    let value = g as f64 / (grid - 1) as f64;
                    let mut candidate = params.clone();
                    candidate.values_mut()[off + k] = value;
                    let r = mean_reward(seq, &candidate, eval_set, task, cfg, &input_losses)?;
                    if r > best {
                        best = r;
                        params = candidate;
                    }
                }
            }
        }
    }
    Ok((params, best))
}

/// Optimizes every enumerable sequence and returns the full table plus the
/// best entry (first maximum in enumeration order).
pub fn oracle_best(
    pool: &[ModuleId],
    eval_set: &[(Image, Image)],
    task: TaskKind,
    cfg: &PenaltyConfig,
) -> Result<OracleResult> {
    let sequences = enumerate_sequences(pool)?;
    let mut table = Vec::with_capacity(sequences.len());
    let mut best: Option<(PipelineSequence, FullParamVector, f64)> = None;
    for seq in sequences {
        let (params, r) =
            optimize_params(&seq, eval_set, task, cfg, ORACLE_GRID, ORACLE_ROUNDS)?;
        if best.as_ref().map_or(true, |(_, _, b)| r > *b) {
            best = Some((seq.clone(), params, r));
        }
        table.push((seq, r));
    }
    let (best_sequence, best_params, best_reward) = best.unwrap();
    Ok(OracleResult {
        best_sequence,
        best_params,
        best_reward,
        table,
    })
}
