//! Checkpoint files: `u64` LE manifest length, manifest JSON, then every
//! tensor as little-endian `f32` in manifest order.

use std::path::Path;

use choreo_autograd::{Adam, AdamConfig, ParamStore, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const FORMAT: &str = "choreo-checkpoint/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub kind: String,
    pub config_hash: String,
    pub step: u64,
    pub tensors: Vec<TensorEntry>,
    /// Stage-specific state (configs, optimizer counters, usage counts).
    pub meta: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelCheckpoint {
    pub manifest: Manifest,
    pub tensors: Vec<Tensor<f32>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AdamState {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    names: Vec<String>,
}

fn data_err(path: &Path, msg: impl std::fmt::Display) -> CliError {
    CliError::Data(format!("{}: {msg}", path.display()))
}

impl ModelCheckpoint {
    pub fn new(kind: &str, config_hash: &str, step: u64) -> Self {
        Self {
            manifest: Manifest {
                format: FORMAT.to_string(),
                kind: kind.to_string(),
                config_hash: config_hash.to_string(),
                step,
                tensors: Vec::new(),
                meta: serde_json::Value::Object(Default::default()),
            },
            tensors: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor<f32>) {
        self.manifest.tensors.push(TensorEntry {
            name: name.into(),
            shape: t.shape().to_vec(),
        });
        self.tensors.push(t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.manifest
            .tensors
            .iter()
            .position(|e| e.name == name)
            .map(|i| &self.tensors[i])
    }

    pub fn set_meta<T: Serialize>(&mut self, key: &str, value: &T) {
        let v = serde_json::to_value(value).expect("meta serializes");
        self.manifest
            .meta
            .as_object_mut()
            .expect("meta is an object")
            .insert(key.to_string(), v);
    }

    pub fn meta<T: for<'de> Deserialize<'de>>(&self, key: &str) -> Result<T> {
        let v = self
            .manifest
            .meta
            .get(key)
            .ok_or_else(|| CliError::Data(format!("checkpoint meta lacks `{key}`")))?;
        serde_json::from_value(v.clone()).map_err(|e| CliError::Data(format!("checkpoint meta `{key}`: {e}")))
    }

    pub fn expect_kind(&self, kind: &str, path: &Path) -> Result<()> {
        if self.manifest.kind != kind {
            return Err(data_err(
                path,
                format!("expected a `{kind}` checkpoint, found `{}`", self.manifest.kind),
            ));
        }
        Ok(())
    }

    /// Stores every parameter as `prefix.name`.
    pub fn push_params(&mut self, prefix: &str, store: &ParamStore<f32>) {
        for (name, t) in store.iter() {
            self.push(format!("{prefix}.{name}"), t.clone());
        }
    }

    /// Parameters stored under `prefix.`, in file order.
    pub fn params(&self, prefix: &str) -> Result<ParamStore<f32>> {
        let mut store = ParamStore::new();
        let p = format!("{prefix}.");
        for (e, t) in self.manifest.tensors.iter().zip(&self.tensors) {
            if let Some(name) = e.name.strip_prefix(&p) {
                store.insert(name, t.clone())?;
            }
        }
        Ok(store)
    }

    pub fn push_adam(&mut self, prefix: &str, opt: &Adam<f32>) {
        let mut names = Vec::new();
        for (name, m, v) in opt.moments() {
            names.push(name.to_string());
            self.push(format!("{prefix}.m.{name}"), m.clone());
            self.push(format!("{prefix}.v.{name}"), v.clone());
        }
        self.set_meta(
            prefix,
            &AdamState {
                lr: opt.config.lr,
                beta1: opt.config.beta1,
                beta2: opt.config.beta2,
                eps: opt.config.eps,
                step: opt.step_count(),
                names,
            },
        );
    }

    pub fn adam(&self, prefix: &str) -> Result<Adam<f32>> {
        let st: AdamState = self.meta(prefix)?;
        let mut moments = Vec::with_capacity(st.names.len());
        for name in st.names {
            let find = |kind: &str| {
                self.get(&format!("{prefix}.{kind}.{name}"))
                    .cloned()
                    .ok_or_else(|| CliError::Data(format!("checkpoint lacks {prefix} moment `{name}`")))
            };
            moments.push((name.clone(), find("m")?, find("v")?));
        }
        let config = AdamConfig {
            lr: st.lr,
            beta1: st.beta1,
            beta2: st.beta2,
            eps: st.eps,
        };
        Ok(Adam::restore(config, st.step, moments))
    }

    pub fn encode(&self) -> Vec<u8> {
        let manifest = serde_json::to_vec(&self.manifest).expect("manifest serializes");
        let payload: usize = self.tensors.iter().map(|t| t.len()).sum();
        let mut out = Vec::with_capacity(8 + manifest.len() + 4 * payload);
        out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
        out.extend_from_slice(&manifest);
        for t in &self.tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        if bytes.len() < 8 {
            return Err(data_err(path, format!("truncated at offset {} (header)", bytes.len())));
        }
        let len = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes")) as usize;
        let end = 8usize
            .checked_add(len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| data_err(path, format!("manifest of {len} bytes exceeds file size {}", bytes.len())))?;
        let manifest: Manifest = serde_json::from_slice(&bytes[8..end])
            .map_err(|e| data_err(path, format!("manifest at offset 8: {e}")))?;
        if manifest.format != FORMAT {
            return Err(data_err(path, format!("unsupported format `{}`", manifest.format)));
        }
        let expected: usize = manifest.tensors.iter().map(|e| e.shape.iter().product::<usize>()).sum();
        let payload = &bytes[end..];
        if payload.len() != 4 * expected {
            return Err(data_err(
                path,
                format!(
                    "payload at offset {end} has {} bytes, manifest shapes need {}",
                    payload.len(),
                    4 * expected
                ),
            ));
        }
        let mut tensors = Vec::with_capacity(manifest.tensors.len());
        let mut at = 0;
        for e in &manifest.tensors {
            let n: usize = e.shape.iter().product();
            let data = payload[at..at + 4 * n]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            tensors.push(Tensor::new(&e.shape, data)?);
            at += 4 * n;
        }
        Ok(Self { manifest, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(choreo_core::write_atomic(path, &self.encode())?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| CliError::Core(choreo_core::CoreError::io(path, e)))?;
        Self::decode(&bytes, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use choreo_autograd::{Graph, GradMap};

    fn sample() -> ModelCheckpoint {
        let mut store = ParamStore::new();
        store.insert("a", Tensor::new(&[2, 2], vec![1.0, -0.5, 3.25, 1e-7]).unwrap()).unwrap();
        store.insert("b", Tensor::new(&[3], vec![0.1, 0.2, 0.3]).unwrap()).unwrap();
        let mut opt = Adam::new(AdamConfig { lr: 3e-4, ..AdamConfig::default() });
        let g = Graph::new();
        let bound = store.bind(&g, |_| true);
        let loss = bound.var("a").unwrap().sqr().sum().add(bound.var("b").unwrap().sum()).unwrap();
        let grads: GradMap<f32> = bound.gradients(&g.backward(loss).unwrap());
        drop(bound);
        opt.step(&mut store, &grads).unwrap();
        let mut c = ModelCheckpoint::new("test", "abc", 7);
        c.push_params("model", &store);
        c.push_adam("opt", &opt);
        c.set_meta("note", &0.1f64);
        c
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.ckpt");
        let c = sample();
        c.save(&p).unwrap();
        let first = std::fs::read(&p).unwrap();
        let back = ModelCheckpoint::load(&p).unwrap();
        assert_eq!(back, c);
        back.save(&p).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), first);
    }

    #[test]
    fn adam_state_round_trips() {
        let c = sample();
        let back = ModelCheckpoint::decode(&c.encode(), Path::new("x")).unwrap();
        let opt = back.adam("opt").unwrap();
        assert_eq!(opt.step_count(), 1);
        assert_eq!(opt.config.lr, 3e-4);
        assert_eq!(back.params("model").unwrap().get("a").unwrap(), c.get("model.a").unwrap());
    }

    #[test]
    fn payload_length_is_checked() {
        let mut bytes = sample().encode();
        bytes.pop();
        let err = ModelCheckpoint::decode(&bytes, Path::new("x.ckpt")).unwrap_err();
        assert!(err.to_string().contains("payload"), "{err}");
        assert!(ModelCheckpoint::decode(&[1, 2], Path::new("x")).is_err());
    }
}
