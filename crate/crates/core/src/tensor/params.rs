//! Named parameter storage shared by all models.
//!
//! Parameters are f32 buffers registered in a deterministic order; `ParamId`
//! indexes are stable for the lifetime of the store, which is what the
//! optimizer state and checkpoint writer key on.

use std::collections::HashMap;

use sha2::{Digest, Sha256};

use crate::rngx::Rng;

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Clone, Copy, Debug)]
pub enum Init {
    Zeros,
    Ones,
    Const(f32),
    /// Gaussian with the given standard deviation.
    Normal(f32),
}

#[derive(Clone, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    by_name: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, shape: Vec<usize>, data: Vec<f32>) -> ParamId {
        assert_eq!(
            data.len(),
            shape.iter().product::<usize>(),
            "param {name}: data/shape mismatch"
        );
        assert!(
            !self.by_name.contains_key(name),
            "duplicate param name {name}"
        );
        let id = self.params.len();
        self.by_name.insert(name.to_string(), id);
        self.params.push(Param {
            name: name.to_string(),
            shape,
            data,
        });
        ParamId(id)
    }

    pub fn add_init(&mut self, name: &str, shape: Vec<usize>, init: Init, rng: &mut Rng) -> ParamId {
        let n: usize = shape.iter().product();
        let data = match init {
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::Const(c) => vec![c; n],
            Init::Normal(std) => (0..n).map(|_| rng.normal_f32() * std).collect(),
        };
        self.add(name, shape, data)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn data_mut(&mut self, id: ParamId) -> &mut Vec<f32> {
        &mut self.params[id.0].data
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Registration order, which is deterministic per model constructor.
    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    /// SHA-256 over every parameter whose name starts with `prefix`
    /// (name, shape and little-endian payload). Used by freezing audits.
    pub fn hash_prefix(&self, prefix: &str) -> [u8; 32] {
        let mut h = Sha256::new();
        for p in &self.params {
            if !p.name.starts_with(prefix) {
                continue;
            }
            h.update(p.name.as_bytes());
            h.update([0u8]);
            for &d in &p.shape {
                h.update((d as u64).to_le_bytes());
            }
            for &v in &p.data {
                h.update(v.to_le_bytes());
            }
        }
        h.finalize().into()
    }

    pub fn hash_all(&self) -> [u8; 32] {
        self.hash_prefix("")
    }
}
