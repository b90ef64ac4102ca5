//! Versioned JSON checkpoints for network state.
//!
//! Format (version 1): `{ "version": 1, "spec": { ... }, "tensors": [
//! { "name", "shape", "data" }, ... ] }`. Tensors store every trainable
//! array in canonical order plus the batch-norm running statistics; data is
//! always written as f64.

use serde::{Deserialize, Serialize};

use super::{BnMode, Network, NetworkSpec};
use crate::error::{Error, Result};
use crate::scalar::{r64, to_f64, Real};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub spec: NetworkSpec,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl<R: Real> Network<R> {
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut tensors = Vec::new();
        self.for_each_tensor(|name, data| {
            tensors.push(TensorEntry {
                name,
                shape: vec![data.len()],
                data: data.iter().map(|&x| to_f64(x)).collect(),
            });
        });
        if let Some(bn) = self.input_bn_ref() {
            tensors.push(running_entry("bn_input.running_mean", bn.running_mean()));
            tensors.push(running_entry("bn_input.running_var", bn.running_var()));
        }
        for (l, bn) in self.hidden_bn_ref().iter().enumerate() {
            tensors.push(running_entry(
                &format!("bn_hidden{l}.running_mean"),
                bn.running_mean(),
            ));
            tensors.push(running_entry(
                &format!("bn_hidden{l}.running_var"),
                bn.running_var(),
            ));
        }
        Checkpoint {
            version: CHECKPOINT_VERSION,
            spec: *self.spec(),
            tensors,
        }
    }

    pub fn from_checkpoint(cp: &Checkpoint, seed_for_layout: u64) -> Result<Self> {
        if cp.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {}",
                cp.version
            )));
        }
        // Build a network of the right shape, then overwrite its state.
        let mut net = Network::<R>::init(cp.spec, R::one(), seed_for_layout)?;

        let find = |name: &str| -> Result<&TensorEntry> {
            cp.tensors
                .iter()
                .find(|t| t.name == name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))
        };

        let mut flat = Vec::with_capacity(net.param_count());
        let mut names = Vec::new();
        net.for_each_tensor(|name, data| names.push((name, data.len())));
        for (name, len) in names {
            let entry = find(&name)?;
            if entry.data.len() != len {
                return Err(Error::Checkpoint(format!(
                    "tensor {name} has {} entries, expected {len}",
                    entry.data.len()
                )));
            }
            flat.extend(entry.data.iter().map(|&x| r64::<R>(x)));
        }
        net.set_params(&flat);

        let as_vec = |entry: &TensorEntry| entry.data.iter().map(|&x| r64::<R>(x)).collect();
        if net.spec().bn_mode != BnMode::None {
            let mean = as_vec(find("bn_input.running_mean")?);
            let var = as_vec(find("bn_input.running_var")?);
            net.input_bn_mut()
                .expect("input BN present")
                .set_running(mean, var)?;
        }
        for l in 0..net.hidden_bn_ref().len() {
            let mean = as_vec(find(&format!("bn_hidden{l}.running_mean"))?);
            let var = as_vec(find(&format!("bn_hidden{l}.running_var"))?);
            net.hidden_bn_mut(l).set_running(mean, var)?;
        }
        Ok(net)
    }
}

fn running_entry<R: Real>(name: &str, data: &[R]) -> TensorEntry {
    TensorEntry {
        name: name.to_string(),
        shape: vec![data.len()],
        data: data.iter().map(|&x| to_f64(x)).collect(),
    }
}
