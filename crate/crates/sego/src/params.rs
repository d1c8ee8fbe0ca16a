//! Named trainable parameters, their tape bindings, and checkpoint IO.
//!
//! Every sub-model registers its tensors under a stable dotted name; the
//! checkpoint is a little-endian binary container of those names, shapes
//! and raw values, plus a JSON metadata block so a model can be rebuilt
//! from the file alone. Round-trips are bit-exact at the stored precision.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::scalar::Scalar;
use crate::tape::{Tape, Var};

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("cannot write {path}: {source}")]
    Write {
        path: String,
        source: std::io::Error,
    },
    #[error("{path} is not a checkpoint: {detail}")]
    Corrupt { path: String, detail: String },
    #[error("checkpoint stores {found}-bit values but this model runs at {expected} bits")]
    Precision { expected: u8, found: u8 },
    #[error("checkpoint does not match the model: {0}")]
    Mismatch(String),
}

/// Handle to one named tensor in a `ParamStore`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone)]
struct ParamEntry<S> {
    name: String,
    shape: Vec<usize>,
    values: Vec<S>,
}

/// Flat bijective map from stable names to trainable tensors.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<S: Scalar> {
    entries: Vec<ParamEntry<S>>,
    index: HashMap<String, usize>,
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        ParamStore {
            entries: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn register(&mut self, name: &str, shape: &[usize], values: Vec<S>) -> ParamId {
        assert_eq!(
            shape.iter().product::<usize>(),
            values.len(),
            "parameter {name}: shape/value mismatch"
        );
        assert!(
            !self.index.contains_key(name),
            "parameter {name} registered twice"
        );
        let id = self.entries.len();
        self.index.insert(name.to_string(), id);
        self.entries.push(ParamEntry {
            name: name.to_string(),
            shape: shape.to_vec(),
            values,
        });
        ParamId(id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn shape(&self, id: ParamId) -> &[usize] {
        &self.entries[id.0].shape
    }

    pub fn values(&self, id: ParamId) -> &[S] {
        &self.entries[id.0].values
    }

    pub fn values_mut(&mut self, id: ParamId) -> &mut [S] {
        &mut self.entries[id.0].values
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    /// Total number of trainable scalars.
    pub fn total_count(&self) -> usize {
        self.entries.iter().map(|e| e.values.len()).sum()
    }

    /// Per-tensor counts in registration order.
    pub fn counts_by_name(&self) -> Vec<(String, usize)> {
        self.entries
            .iter()
            .map(|e| (e.name.clone(), e.values.len()))
            .collect()
    }

    /// Counts grouped by the first name segment (`embed`, `bilstm`, ...).
    pub fn counts_by_group(&self) -> Vec<(String, usize)> {
        let mut order: Vec<String> = Vec::new();
        let mut counts: HashMap<String, usize> = HashMap::new();
        for e in &self.entries {
            let group = e.name.split('.').next().unwrap_or(&e.name).to_string();
            if !counts.contains_key(&group) {
                order.push(group.clone());
            }
            *counts.entry(group).or_insert(0) += e.values.len();
        }
        order
            .into_iter()
            .map(|g| {
                let c = counts[&g];
                (g, c)
            })
            .collect()
    }

    /// Registers every parameter as a leaf on a fresh tape; the binding
    /// maps ids to tape nodes for this forward pass.
    pub fn bind(&self, tape: &mut Tape<S>) -> Binding {
        let vars = self
            .entries
            .iter()
            .map(|e| {
                tape.leaf(e.values.clone(), &e.shape)
                    .expect("registered shapes are valid")
            })
            .collect();
        Binding { vars }
    }

    // ── Checkpoint container ────────────────────────────────────────

    pub fn save(&self, path: &Path, meta_json: &str) -> Result<(), CheckpointError> {
        let mut out: Vec<u8> = Vec::new();
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.push(S::BITS);
        write_bytes(&mut out, meta_json.as_bytes());
        out.extend_from_slice(&(self.entries.len() as u64).to_le_bytes());
        for e in &self.entries {
            write_bytes(&mut out, e.name.as_bytes());
            out.extend_from_slice(&(e.shape.len() as u64).to_le_bytes());
            for &d in &e.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in &e.values {
                v.write_le(&mut out);
            }
        }
        fs::write(path, out).map_err(|source| CheckpointError::Write {
            path: path.display().to_string(),
            source,
        })
    }

    /// Reads a checkpoint saved at this precision. Returns the metadata
    /// block and the stored tensors.
    pub fn read(path: &Path) -> Result<(String, ParamStore<S>), CheckpointError> {
        let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let corrupt = |detail: &str| CheckpointError::Corrupt {
            path: path.display().to_string(),
            detail: detail.to_string(),
        };
        let mut cur = bytes.as_slice();
        let header = take(&mut cur, MAGIC.len() + 2).ok_or_else(|| corrupt("truncated header"))?;
        if &header[..MAGIC.len()] != MAGIC {
            return Err(corrupt("bad magic"));
        }
        if header[MAGIC.len()] != VERSION {
            return Err(corrupt("unknown version"));
        }
        let bits = header[MAGIC.len() + 1];
        if bits != S::BITS {
            return Err(CheckpointError::Precision {
                expected: S::BITS,
                found: bits,
            });
        }
        let meta = read_bytes(&mut cur).ok_or_else(|| corrupt("truncated metadata"))?;
        let meta = String::from_utf8(meta).map_err(|_| corrupt("metadata is not UTF-8"))?;
        let count = read_u64(&mut cur).ok_or_else(|| corrupt("truncated entry count"))? as usize;
        let mut store = ParamStore::new();
        for _ in 0..count {
            let name = read_bytes(&mut cur).ok_or_else(|| corrupt("truncated name"))?;
            let name = String::from_utf8(name).map_err(|_| corrupt("name is not UTF-8"))?;
            let ndim = read_u64(&mut cur).ok_or_else(|| corrupt("truncated rank"))? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(read_u64(&mut cur).ok_or_else(|| corrupt("truncated shape"))? as usize);
            }
            let numel: usize = shape.iter().product();
            let raw = take(&mut cur, numel * S::BYTES).ok_or_else(|| corrupt("truncated values"))?;
            let values = raw.chunks_exact(S::BYTES).map(S::read_le).collect();
            store.register(&name, &shape, values);
        }
        Ok((meta, store))
    }

    /// Copies values in from a loaded store, requiring an exact name and
    /// shape match in both directions. Mismatches list offending names.
    pub fn load_values_from(&mut self, loaded: &ParamStore<S>) -> Result<(), CheckpointError> {
        let mut missing = Vec::new();
        let mut bad_shape = Vec::new();
        for id in self.ids() {
            match loaded.id_of(self.name(id)) {
                None => missing.push(self.name(id).to_string()),
                Some(other) => {
                    if loaded.shape(other) != self.shape(id) {
                        bad_shape.push(format!(
                            "{} (model {:?}, checkpoint {:?})",
                            self.name(id),
                            self.shape(id),
                            loaded.shape(other)
                        ));
                    }
                }
            }
        }
        let extra: Vec<String> = loaded
            .entries
            .iter()
            .filter(|e| !self.index.contains_key(&e.name))
            .map(|e| e.name.clone())
            .collect();
        if !missing.is_empty() || !bad_shape.is_empty() || !extra.is_empty() {
            let mut parts = Vec::new();
            if !missing.is_empty() {
                parts.push(format!("missing from checkpoint: {}", missing.join(", ")));
            }
            if !bad_shape.is_empty() {
                parts.push(format!("shape mismatch: {}", bad_shape.join(", ")));
            }
            if !extra.is_empty() {
                parts.push(format!("unexpected in checkpoint: {}", extra.join(", ")));
            }
            return Err(CheckpointError::Mismatch(parts.join("; ")));
        }
        for id in self.ids() {
            let other = loaded.id_of(self.name(id)).expect("checked above");
            self.values_mut(id).copy_from_slice(loaded.values(other));
        }
        Ok(())
    }
}

const MAGIC: &[u8] = b"SEGOCKPT";
const VERSION: u8 = 1;

fn write_bytes(out: &mut Vec<u8>, bytes: &[u8]) {
    out.extend_from_slice(&(bytes.len() as u64).to_le_bytes());
    out.extend_from_slice(bytes);
}

fn take<'a>(cur: &mut &'a [u8], n: usize) -> Option<&'a [u8]> {
    if cur.len() < n {
        return None;
    }
    let (head, tail) = cur.split_at(n);
    *cur = tail;
    Some(head)
}

fn read_u64(cur: &mut &[u8]) -> Option<u64> {
    take(cur, 8).map(|b| u64::from_le_bytes(b.try_into().expect("eight bytes")))
}

fn read_bytes(cur: &mut &[u8]) -> Option<Vec<u8>> {
    let len = read_u64(cur)? as usize;
    take(cur, len).map(|b| b.to_vec())
}

/// Tape nodes for one forward pass, indexed by `ParamId`.
#[derive(Debug, Clone)]
pub struct Binding {
    vars: Vec<Var>,
}

impl Binding {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }
}

// ── Initialization ──────────────────────────────────────────────────

/// Uniform Xavier/Glorot draw for a weight matrix.
pub fn xavier<S: Scalar>(shape: &[usize], rng: &mut ChaCha8Rng) -> Vec<S> {
    let (fan_out, fan_in) = match shape {
        [o, i] => (*o, *i),
        [n] => (*n, *n),
        _ => panic!("xavier expects a matrix or vector shape"),
    };
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..shape.iter().product())
        .map(|_| S::from_f64(rng.gen_range(-bound..bound)))
        .collect()
}

pub fn uniform<S: Scalar>(n: usize, bound: f64, rng: &mut ChaCha8Rng) -> Vec<S> {
    (0..n).map(|_| S::from_f64(rng.gen_range(-bound..bound))).collect()
}

pub fn zeros<S: Scalar>(n: usize) -> Vec<S> {
    vec![S::zero(); n]
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn single_matrix_group_counts_twelve() {
        let mut store: ParamStore<f64> = ParamStore::new();
        store.register("demo.w", &[3, 4], zeros(12));
        assert_eq!(store.total_count(), 12);
        assert_eq!(store.counts_by_group(), vec![("demo".to_string(), 12)]);
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.ckpt");
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut store: ParamStore<f64> = ParamStore::new();
        store.register("a.w", &[2, 3], xavier(&[2, 3], &mut rng));
        store.register("a.b", &[3], uniform(3, 0.5, &mut rng));
        store.save(&path, "{\"k\":1}").unwrap();

        let (meta, loaded) = ParamStore::<f64>::read(&path).unwrap();
        assert_eq!(meta, "{\"k\":1}");
        let mut fresh: ParamStore<f64> = ParamStore::new();
        fresh.register("a.w", &[2, 3], zeros(6));
        fresh.register("a.b", &[3], zeros(3));
        fresh.load_values_from(&loaded).unwrap();
        for id in store.ids() {
            assert_eq!(store.values(id), fresh.values(id));
        }
    }

    #[test]
    fn shape_mismatch_on_load_names_the_parameter() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.ckpt");
        let mut store: ParamStore<f64> = ParamStore::new();
        store.register("grn.sent.w_r", &[2, 2], zeros(4));
        store.save(&path, "{}").unwrap();

        let (_, loaded) = ParamStore::<f64>::read(&path).unwrap();
        let mut other: ParamStore<f64> = ParamStore::new();
        other.register("grn.sent.w_r", &[3, 3], zeros(9));
        let err = other.load_values_from(&loaded).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("grn.sent.w_r"), "{msg}");
    }

    #[test]
    fn precision_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.ckpt");
        let mut store: ParamStore<f32> = ParamStore::new();
        store.register("x", &[1], vec![1.5f32]);
        store.save(&path, "{}").unwrap();
        let err = ParamStore::<f64>::read(&path).unwrap_err();
        assert!(matches!(err, CheckpointError::Precision { expected: 64, found: 32 }));
    }
}
