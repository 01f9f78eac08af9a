//! Mapping between live models and checkpoint tensor entries.

use std::path::Path;

use crate::compute::checkpoint::{self, CheckpointError, TensorEntry};
use crate::compute::Tensor;
use crate::classifier::ClassifierNet;
use crate::gates::{GateModelConfig, GateNet};

fn entry_of(name: &str, t: &Tensor<f32>) -> TensorEntry {
    TensorEntry {
        name: name.to_string(),
        dims: t.shape().iter().map(|&d| d as u32).collect(),
        data: t.data().to_vec(),
    }
}

/// Splits a 64-bit hash into four exactly-representable f32 values.
fn hash_entry(hash: u64) -> TensorEntry {
    let data = (0..4)
        .map(|i| ((hash >> (16 * i)) & 0xffff) as f32)
        .collect();
    TensorEntry {
        name: "meta/config_hash".into(),
        dims: vec![4],
        data,
    }
}

fn hash_of_entry(e: &TensorEntry) -> u64 {
    e.data
        .iter()
        .enumerate()
        .map(|(i, &v)| (v as u64) << (16 * i))
        .sum()
}

/// Full training state: values, running statistics, momentum buffers,
/// step counter and config fingerprint.
pub fn training_entries(
    gate: &GateNet<f32>,
    classifier: Option<&ClassifierNet<f32>>,
    step: usize,
    config_hash: u64,
) -> Vec<TensorEntry> {
    let mut entries = Vec::new();
    for p in gate.params() {
        entries.push(entry_of(&p.name, &p.value));
    }
    for (name, buf) in gate.buffers() {
        entries.push(entry_of(&name, buf));
    }
    if let Some(c) = classifier {
        for p in c.params() {
            entries.push(entry_of(&p.name, &p.value));
        }
        for (name, buf) in c.buffers() {
            entries.push(entry_of(&name, buf));
        }
    }
    for p in gate.params() {
        entries.push(entry_of(&format!("opt/{}", p.name), &p.momentum));
    }
    if let Some(c) = classifier {
        for p in c.params() {
            entries.push(entry_of(&format!("opt/{}", p.name), &p.momentum));
        }
    }
    entries.push(TensorEntry::scalar("meta/step", step as f32));
    entries.push(hash_entry(config_hash));
    entries
}

/// Inference export: gate-network values and running statistics only.
pub fn export_entries(gate: &GateNet<f32>) -> Vec<TensorEntry> {
    let mut entries = Vec::new();
    for p in gate.params() {
        entries.push(entry_of(&p.name, &p.value));
    }
    for (name, buf) in gate.buffers() {
        entries.push(entry_of(&name, buf));
    }
    entries
}

pub fn save_training(
    path: &Path,
    gate: &GateNet<f32>,
    classifier: Option<&ClassifierNet<f32>>,
    step: usize,
    config_hash: u64,
) -> Result<(), CheckpointError> {
    checkpoint::save(path, &training_entries(gate, classifier, step, config_hash))
}

pub fn save_export(path: &Path, gate: &GateNet<f32>) -> Result<(), CheckpointError> {
    checkpoint::save(path, &export_entries(gate))
}

struct EntryMap {
    entries: std::collections::HashMap<String, TensorEntry>,
}

impl EntryMap {
    fn load(path: &Path) -> Result<Self, CheckpointError> {
        let entries = checkpoint::load(path)?
            .into_iter()
            .map(|e| (e.name.clone(), e))
            .collect();
        Ok(EntryMap { entries })
    }

    fn assign(&self, name: &str, target: &mut Tensor<f32>) -> Result<(), CheckpointError> {
        let e = self
            .entries
            .get(name)
            .ok_or_else(|| CheckpointError::MissingTensor(name.to_string()))?;
        let got: Vec<usize> = e.dims.iter().map(|&d| d as usize).collect();
        if got != target.shape() {
            return Err(CheckpointError::WrongShape {
                name: name.to_string(),
                expected: target.shape().to_vec(),
                got,
            });
        }
        target.data_mut().copy_from_slice(&e.data);
        Ok(())
    }

    fn scalar(&self, name: &str) -> Result<f32, CheckpointError> {
        let e = self
            .entries
            .get(name)
            .ok_or_else(|| CheckpointError::MissingTensor(name.to_string()))?;
        Ok(e.data[0])
    }
}

/// Restores full training state saved by [`save_training`]. The config
/// hash must match the current configuration.
pub fn load_training(
    path: &Path,
    gate: &mut GateNet<f32>,
    mut classifier: Option<&mut ClassifierNet<f32>>,
    expected_hash: u64,
) -> Result<usize, CheckpointError> {
    let map = EntryMap::load(path)?;
    let stored = map
        .entries
        .get("meta/config_hash")
        .ok_or_else(|| CheckpointError::MissingTensor("meta/config_hash".into()))?;
    if hash_of_entry(stored) != expected_hash {
        return Err(CheckpointError::ConfigMismatch);
    }
    for p in gate.params_mut() {
        map.assign(&p.name.clone(), &mut p.value)?;
        map.assign(&format!("opt/{}", p.name), &mut p.momentum)?;
    }
    for (name, buf) in gate.buffers_mut() {
        map.assign(&name, buf)?;
    }
    if let Some(c) = classifier.as_deref_mut() {
        for p in c.params_mut() {
            map.assign(&p.name.clone(), &mut p.value)?;
            map.assign(&format!("opt/{}", p.name), &mut p.momentum)?;
        }
        for (name, buf) in c.buffers_mut() {
            map.assign(&name, buf)?;
        }
    }
    Ok(map.scalar("meta/step")? as usize)
}

/// Builds a gate network from any checkpoint that carries the gate
/// tensors (training checkpoint or inference export).
pub fn load_gate_net(path: &Path) -> Result<GateNet<f32>, CheckpointError> {
    let map = EntryMap::load(path)?;
    let mut gate = GateNet::<f32>::seeded(GateModelConfig::default(), 0);
    for p in gate.params_mut() {
        map.assign(&p.name.clone(), &mut p.value)?;
    }
    for (name, buf) in gate.buffers_mut() {
        map.assign(&name, buf)?;
    }
    Ok(gate)
}
