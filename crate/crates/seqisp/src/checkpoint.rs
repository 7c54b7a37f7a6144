//! Checkpoint container.
//!
//! Layout: the magic `SEQISP01`, then one record per named tensor —
//! name length (u32 LE), name bytes, rank (u32 LE), dims (u32 LE each),
//! values (f64 LE). The container holds both networks, both Adam states,
//! the iteration counter, the seeds, and the module pool, so loading
//! resumes a run bit-identically.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::kernels::ModuleId;
use crate::policy::{GruPolicy, ModulePool, Policy, PolicyDims, PolicyKind, TablePolicy};
use crate::predictor::{Predictor, PredictorConfig};
use crate::tensor::Tensor;
use crate::trainer::{AdamState, TrainConfig, TrainState};

pub const MAGIC: &[u8; 8] = b"SEQISP01";
const MAX_NAME_LEN: usize = 1 << 12;

fn split_u64(v: u64) -> [f64; 2] {
    [(v >> 32) as u32 as f64, v as u32 as f64]
}

fn join_u64(parts: &[f64]) -> Result<u64> {
    if parts.len() != 2 {
        return Err(Error::Checkpoint("u64 field needs two words".into()));
    }
    Ok(((parts[0] as u64) << 32) | (parts[1] as u64 & 0xffff_ffff))
}

fn push_tensor(out: &mut Vec<u8>, name: &str, tensor: &Tensor) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&(tensor.dims().len() as u32).to_le_bytes());
    for &d in tensor.dims() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in tensor.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn scalar(v: f64) -> Tensor {
    Tensor::from_vec(&[1], vec![v])
}

pub fn save_checkpoint(state: &TrainState, path: impl AsRef<Path>) -> Result<()> {
    let mut bytes = Vec::new();
    bytes.extend_from_slice(MAGIC);

    let kind = match state.policy.kind() {
        PolicyKind::Gru => 0.0,
        PolicyKind::Table => 1.0,
    };
    push_tensor(&mut bytes, "meta.policy_kind", &scalar(kind));
    push_tensor(&mut bytes, "meta.iteration", &scalar(state.iteration as f64));
    push_tensor(
        &mut bytes,
        "meta.seed",
        &Tensor::from_vec(&[2], split_u64(state.config.seed).to_vec()),
    );
    push_tensor(
        &mut bytes,
        "meta.data_seed",
        &Tensor::from_vec(&[2], split_u64(state.config.data_seed).to_vec()),
    );
    let pool_mask: Vec<f64> = ModuleId::ALL
        .iter()
        .map(|&m| if state.config.pool.contains(m) { 1.0 } else { 0.0 })
        .collect();
    push_tensor(
        &mut bytes,
        "meta.pool",
        &Tensor::from_vec(&[10], pool_mask),
    );
    push_tensor(
        &mut bytes,
        "meta.predictor_input_size",
        &scalar(state.config.predictor.input_size as f64),
    );

    for (name, t) in state.policy.tensors() {
        push_tensor(&mut bytes, &format!("policy.{name}"), t);
    }
    for (name, t) in state.predictor.tensors() {
        push_tensor(&mut bytes, &format!("predictor.{name}"), t);
    }

    push_tensor(
        &mut bytes,
        "adam.policy.step",
        &scalar(state.adam_policy.step as f64),
    );
    for (i, (name, _)) in state.policy.tensors().iter().enumerate() {
        push_tensor(
            &mut bytes,
            &format!("adam.policy.m.{name}"),
            &state.adam_policy.m[i],
        );
        push_tensor(
            &mut bytes,
            &format!("adam.policy.v.{name}"),
            &state.adam_policy.v[i],
        );
    }
    push_tensor(
        &mut bytes,
        "adam.predictor.step",
        &scalar(state.adam_predictor.step as f64),
    );
    for (i, (name, _)) in state.predictor.tensors().iter().enumerate() {
        push_tensor(
            &mut bytes,
            &format!("adam.predictor.m.{name}"),
            &state.adam_predictor.m[i],
        );
        push_tensor(
            &mut bytes,
            &format!("adam.predictor.v.{name}"),
            &state.adam_predictor.v[i],
        );
    }

    fs::write(path, bytes)?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint(format!(
                "truncated while reading {what} at offset {}",
                self.pos
            )));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn done(&self) -> bool {
        self.pos >= self.bytes.len()
    }
}

fn read_tensors(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Checkpoint(format!(
            "magic mismatch: expected {:?}",
            std::str::from_utf8(MAGIC).unwrap()
        )));
    }
    let mut reader = Reader {
        bytes,
        pos: MAGIC.len(),
    };
    let mut out = Vec::new();
    while !reader.done() {
        let name_len = reader.u32("name length")? as usize;
        if name_len == 0 || name_len > MAX_NAME_LEN {
            return Err(Error::Checkpoint(format!(
                "implausible tensor name length {name_len}"
            )));
        }
        let name = String::from_utf8(reader.take(name_len, "name")?.to_vec())
            .map_err(|_| Error::Checkpoint("tensor name is not utf-8".into()))?;
        let rank = reader.u32("rank")? as usize;
        if rank > 8 {
            return Err(Error::Checkpoint(format!("implausible rank {rank}")));
        }
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(reader.u32("dims")? as usize);
        }
        let len: usize = dims.iter().product();
        let raw = reader.take(len * 8, &format!("values of {name}"))?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        out.push((name, Tensor::from_vec(&dims, data)));
    }
    Ok(out)
}

/// Everything needed to resume training or run inference.
#[derive(Debug)]
pub struct Checkpoint {
    pub policy: Policy,
    pub predictor: Predictor,
    pub adam_policy: AdamState,
    pub adam_predictor: AdamState,
    pub iteration: u64,
    pub seed: u64,
    pub data_seed: u64,
    pub pool: ModulePool,
}

struct TensorMap {
    map: HashMap<String, Tensor>,
}

impl TensorMap {
    fn take(&mut self, name: &str) -> Result<Tensor> {
        self.map
            .remove(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))
    }

    fn take_scalar(&mut self, name: &str) -> Result<f64> {
        let t = self.take(name)?;
        if t.len() != 1 {
            return Err(Error::Checkpoint(format!("{name} is not a scalar")));
        }
        Ok(t.data()[0])
    }

    fn finish(self) -> Result<()> {
        if let Some(name) = self.map.keys().next() {
            return Err(Error::Checkpoint(format!("unknown tensor {name}")));
        }
        Ok(())
    }
}

fn fill_from(map: &mut TensorMap, prefix: &str, slots: Vec<(&'static str, &mut Tensor)>) -> Result<()> {
    for (name, slot) in slots {
        let key = format!("{prefix}.{name}");
        let t = map.take(&key)?;
        if t.dims() != slot.dims() {
            return Err(Error::Checkpoint(format!(
                "tensor {key} has dims {:?}, expected {:?}",
                t.dims(),
                slot.dims()
            )));
        }
        *slot = t;
    }
    Ok(())
}

fn load_adam(map: &mut TensorMap, prefix: &str, names: &[&'static str]) -> Result<AdamState> {
    let step = map.take_scalar(&format!("{prefix}.step"))? as u64;
    let mut m = Vec::with_capacity(names.len());
    let mut v = Vec::with_capacity(names.len());
    for name in names {
        m.push(map.take(&format!("{prefix}.m.{name}"))?);
        v.push(map.take(&format!("{prefix}.v.{name}"))?);
    }
    Ok(AdamState { m, v, step })
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let bytes = fs::read(path.as_ref())?;
    let tensors = read_tensors(&bytes)?;
    let mut map = TensorMap {
        map: tensors.into_iter().collect(),
    };

    let kind = map.take_scalar("meta.policy_kind")?;
    let iteration = map.take_scalar("meta.iteration")? as u64;
    let seed = join_u64(map.take("meta.seed")?.data())?;
    let data_seed = join_u64(map.take("meta.data_seed")?.data())?;
    let pool_mask = map.take("meta.pool")?;
    if pool_mask.len() != 10 {
        return Err(Error::Checkpoint("meta.pool must have 10 entries".into()));
    }
    let pool_modules: Vec<ModuleId> = ModuleId::ALL
        .iter()
        .copied()
        .zip(pool_mask.data())
        .filter(|(_, &v)| v != 0.0)
        .map(|(m, _)| m)
        .collect();
    let pool = ModulePool::from_modules(&pool_modules);
    let input_size = map.take_scalar("meta.predictor_input_size")? as usize;

    let mut policy = if kind == 0.0 {
        // architecture sizes come from the stored tensor shapes
        let dec_w = map
            .map
            .get("policy.decoder.weight")
            .ok_or_else(|| Error::Checkpoint("missing tensor policy.decoder.weight".into()))?;
        let tok = map
            .map
            .get("policy.token_embedding")
            .ok_or_else(|| Error::Checkpoint("missing tensor policy.token_embedding".into()))?;
        let step = map
            .map
            .get("policy.step_embedding")
            .ok_or_else(|| Error::Checkpoint("missing tensor policy.step_embedding".into()))?;
        let film_w1 = map
            .map
            .get("policy.film.w1")
            .ok_or_else(|| Error::Checkpoint("missing tensor policy.film.w1".into()))?;
        let dims = PolicyDims {
            hidden: dec_w.dims()[1],
            embed: tok.dims()[1],
            step_embed: step.dims()[1],
            film_hidden: film_w1.dims()[0],
        };
        Policy::Gru(GruPolicy::init(0, dims))
    } else if kind == 1.0 {
        Policy::Table(TablePolicy::init())
    } else {
        return Err(Error::Checkpoint(format!(
            "unknown policy kind {kind}"
        )));
    };
    fill_from(&mut map, "policy", policy.tensors_mut())?;

    let conv1 = map
        .map
        .get("predictor.conv1.weight")
        .ok_or_else(|| Error::Checkpoint("missing tensor predictor.conv1.weight".into()))?;
    let fc1 = map
        .map
        .get("predictor.fc1.weight")
        .ok_or_else(|| Error::Checkpoint("missing tensor predictor.fc1.weight".into()))?;
    let fc2 = map
        .map
        .get("predictor.fc2.weight")
        .ok_or_else(|| Error::Checkpoint("missing tensor predictor.fc2.weight".into()))?;
    let cfg = PredictorConfig {
        channels: conv1.dims()[0],
        latent: fc2.dims()[0],
        head: fc1.dims()[0],
        input_size,
    };
    let mut predictor = Predictor::init(0, cfg);
    fill_from(&mut map, "predictor", predictor.tensors_mut())?;

    let policy_names: Vec<&'static str> = policy.tensors().iter().map(|(n, _)| *n).collect();
    let adam_policy = load_adam(&mut map, "adam.policy", &policy_names)?;
    let predictor_names: Vec<&'static str> =
        predictor.tensors().iter().map(|(n, _)| *n).collect();
    let adam_predictor = load_adam(&mut map, "adam.predictor", &predictor_names)?;

    map.finish()?;

    Ok(Checkpoint {
        policy,
        predictor,
        adam_policy,
        adam_predictor,
        iteration,
        seed,
        data_seed,
        pool,
    })
}

/// Rebuilds a training state from a checkpoint; the config must agree with
/// the stored identity fields.
pub fn resume(ckpt: Checkpoint, config: TrainConfig) -> Result<TrainState> {
    if ckpt.seed != config.seed || ckpt.data_seed != config.data_seed {
        return Err(Error::Checkpoint(format!(
            "seed mismatch: checkpoint ({}, {}) vs config ({}, {})",
            ckpt.seed, ckpt.data_seed, config.seed, config.data_seed
        )));
    }
    if ckpt.pool != config.pool {
        return Err(Error::Checkpoint("module pool mismatch".into()));
    }
    if ckpt.policy.kind() != config.policy_kind {
        return Err(Error::Checkpoint("policy kind mismatch".into()));
    }
    Ok(TrainState {
        config,
        policy: ckpt.policy,
        predictor: ckpt.predictor,
        adam_policy: ckpt.adam_policy,
        adam_predictor: ckpt.adam_predictor,
        iteration: ckpt.iteration,
    })
}
