use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ParamError {
    #[error("duplicate parameter name: {0}")]
    Duplicate(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("checkpoint/store mismatch: {0}")]
    Mismatch(String),
}

/// Named parameter tensors in stable insertion order. The order doubles as
/// the index space for gradients and optimizer state. The `tag`
/// distinguishes stores when several lease onto one tape (network weights
/// vs architecture logits).
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    tag: u32,
    names: Vec<String>,
    values: Vec<ArrayD<f64>>,
    index: BTreeMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_tag(tag: u32) -> Self {
        ParamStore {
            tag,
            ..Self::default()
        }
    }

    pub fn tag(&self) -> u32 {
        self.tag
    }

    pub fn set_tag(&mut self, tag: u32) {
        self.tag = tag;
    }

    pub fn add(&mut self, name: &str, value: ArrayD<f64>) -> Result<usize, ParamError> {
        if self.index.contains_key(name) {
            return Err(ParamError::Duplicate(name.to_string()));
        }
        let idx = self.values.len();
        self.names.push(name.to_string());
        self.values.push(value);
        self.index.insert(name.to_string(), idx);
        Ok(idx)
    }

    /// He-normal initialized tensor; `fan_in` scales the std.
    pub fn add_he(
        &mut self,
        name: &str,
        shape: &[usize],
        fan_in: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<usize, ParamError> {
        let std = (2.0 / fan_in.max(1) as f64).sqrt();
        let value = ArrayD::from_shape_fn(IxDyn(shape), |_| {
            let z: f64 = rng.sample(StandardNormal);
            z * std
        });
        self.add(name, value)
    }

    pub fn add_zeros(&mut self, name: &str, shape: &[usize]) -> Result<usize, ParamError> {
        self.add(name, ArrayD::zeros(IxDyn(shape)))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, idx: usize) -> &ArrayD<f64> {
        &self.values[idx]
    }

    pub fn value_mut(&mut self, idx: usize) -> &mut ArrayD<f64> {
        &mut self.values[idx]
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.names[idx]
    }

    pub fn lookup(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn total_elements(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    /// Byte-equal copy of another store's values (same layout required).
    pub fn copy_values_from(&mut self, other: &ParamStore) -> Result<(), ParamError> {
        if self.names != other.names {
            return Err(ParamError::Mismatch("name layout differs".into()));
        }
        for (dst, src) in self.values.iter_mut().zip(other.values.iter()) {
            dst.clone_from(src);
        }
        Ok(())
    }

    pub fn equal_values(&self, other: &ParamStore) -> bool {
        self.names == other.names
            && self
                .values
                .iter()
                .zip(other.values.iter())
                .all(|(a, b)| a == b)
    }

    /// Binary checkpoint: magic, version, then (name, shape, f64 LE data)
    /// records in index order.
    pub fn save(&self, path: &Path) -> Result<(), ParamError> {
        let mut out = Vec::new();
        out.extend_from_slice(b"PSPW");
        out.extend_from_slice(&1u32.to_le_bytes());
        out.extend_from_slice(&(self.values.len() as u64).to_le_bytes());
        for (name, value) in self.names.iter().zip(self.values.iter()) {
            let nb = name.as_bytes();
            out.extend_from_slice(&(nb.len() as u16).to_le_bytes());
            out.extend_from_slice(nb);
            out.push(value.ndim() as u8);
            for d in value.shape() {
                out.extend_from_slice(&(*d as u64).to_le_bytes());
            }
            for v in value.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<ParamStore, ParamError> {
        let mut file = std::fs::File::open(path)?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes)?;
        let mut pos = 0usize;
        let take = |pos: &mut usize, n: usize| -> Result<&[u8], ParamError> {
            if *pos + n > bytes.len() {
                return Err(ParamError::Malformed("truncated".into()));
            }
            let s = &bytes[*pos..*pos + n];
            *pos += n;
            Ok(s)
        };
        if take(&mut pos, 4)? != b"PSPW" {
            return Err(ParamError::Malformed("bad magic".into()));
        }
        let version = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
        if version != 1 {
            return Err(ParamError::Malformed(format!("unsupported version {version}")));
        }
        let count = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()) as usize;
        let mut store = ParamStore::new();
        for _ in 0..count {
            let name_len = u16::from_le_bytes(take(&mut pos, 2)?.try_into().unwrap()) as usize;
            let name = String::from_utf8(take(&mut pos, name_len)?.to_vec())
                .map_err(|_| ParamError::Malformed("bad name".into()))?;
            let ndim = take(&mut pos, 1)?[0] as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()) as usize);
            }
            let n: usize = shape.iter().product();
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                data.push(f64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()));
            }
            let arr = ArrayD::from_shape_vec(IxDyn(&shape), data)
                .map_err(|e| ParamError::Malformed(e.to_string()))?;
            store.add(&name, arr)?;
        }
        Ok(store)
    }
}

/// Adam over a [`ParamStore`]. Parameters missing from a step's gradient set
/// keep their moment state untouched.
pub struct Adam {
    pub lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: Vec<u64>,
    m: Vec<ArrayD<f64>>,
    v: Vec<ArrayD<f64>>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: vec![0; store.len()],
            m: (0..store.len())
                .map(|i| ArrayD::zeros(store.value(i).raw_dim()))
                .collect(),
            v: (0..store.len())
                .map(|i| ArrayD::zeros(store.value(i).raw_dim()))
                .collect(),
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &[(usize, ArrayD<f64>)]) {
        for (idx, g) in grads {
            let idx = *idx;
            self.t[idx] += 1;
            let t = self.t[idx] as i32;
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            let param = store.value_mut(idx);
            let (b1, b2) = (self.beta1, self.beta2);
            let bc1 = 1.0 - b1.powi(t);
            let bc2 = 1.0 - b2.powi(t);
            let ms = m.as_slice_mut().unwrap();
            let vs = v.as_slice_mut().unwrap();
            let ps = param.as_slice_mut().unwrap();
            let gs = g.as_slice().unwrap();
            for i in 0..ps.len() {
                ms[i] = b1 * ms[i] + (1.0 - b1) * gs[i];
                vs[i] = b2 * vs[i] + (1.0 - b2) * gs[i] * gs[i];
                let mh = ms[i] / bc1;
                let vh = vs[i] / bc2;
                ps[i] -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}

#[allow(dead_code)]
fn unused_write_guard(_w: &mut dyn Write) {}
