//! Named parameter storage and the checkpoint file format.
//!
//! A checkpoint is a flat, versioned text map from canonical parameter
//! names to shape plus row-major values. Values are written as the hex bit
//! pattern of each f64, so a load/save cycle is bit-exact.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::Rng;

const CHECKPOINT_HEADER: &str = "adasplit-checkpoint v1";

#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

/// Ordered collection of named parameters. Insertion order is the
/// canonical order used by checkpoints and gradient buffers.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    entries: Vec<Param>,
    by_name: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Register a parameter initialized uniformly in (-0.1, 0.1).
    pub fn add_uniform(&mut self, name: &str, rows: usize, cols: usize, rng: &mut Rng) -> usize {
        let values = (0..rows * cols).map(|_| rng.uniform(-0.1, 0.1)).collect();
        self.add(name, rows, cols, values)
    }

    /// Register a zero-initialized parameter (biases).
    pub fn add_zeros(&mut self, name: &str, rows: usize, cols: usize) -> usize {
        self.add(name, rows, cols, vec![0.0; rows * cols])
    }

    pub fn add(&mut self, name: &str, rows: usize, cols: usize, values: Vec<f64>) -> usize {
        assert_eq!(values.len(), rows * cols, "param {name} shape mismatch");
        assert!(
            !self.by_name.contains_key(name),
            "duplicate parameter name {name}"
        );
        let idx = self.entries.len();
        self.entries.push(Param {
            name: name.to_string(),
            rows,
            cols,
            values,
        });
        self.by_name.insert(name.to_string(), idx);
        idx
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn index_of(&self, name: &str) -> usize {
        *self
            .by_name
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn get(&self, name: &str) -> &Param {
        &self.entries[self.index_of(name)]
    }

    pub fn by_index(&self, idx: usize) -> &Param {
        &self.entries[idx]
    }

    pub fn by_index_mut(&mut self, idx: usize) -> &mut Param {
        &mut self.entries[idx]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.entries.iter()
    }

    /// Total scalar count across all parameters.
    pub fn num_values(&self) -> usize {
        self.entries.iter().map(|p| p.values.len()).sum()
    }

    /// Serialize to the checkpoint format with a metadata section.
    pub fn save(&self, path: &Path, meta: &BTreeMap<String, String>) -> Result<()> {
        let mut out = String::new();
        out.push_str(CHECKPOINT_HEADER);
        out.push('\n');
        for (k, v) in meta {
            writeln!(out, "meta {k} {v}").unwrap();
        }
        for p in &self.entries {
            writeln!(out, "param {} {} {}", p.name, p.rows, p.cols).unwrap();
            for row in p.values.chunks(p.cols) {
                let line: Vec<String> = row.iter().map(|v| format!("{:016x}", v.to_bits())).collect();
                out.push_str(&line.join(" "));
                out.push('\n');
            }
        }
        out.push_str("end\n");
        fs::write(path, out)?;
        Ok(())
    }

    /// Load a checkpoint; returns the store and its metadata map.
    pub fn load(path: &Path) -> Result<(ParamStore, BTreeMap<String, String>)> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Data(format!("cannot read checkpoint {}: {e}", path.display())))?;
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h == CHECKPOINT_HEADER => {}
            other => {
                return Err(Error::Data(format!(
                    "bad checkpoint header in {}: {:?}",
                    path.display(),
                    other
                )))
            }
        }
        let mut store = ParamStore::new();
        let mut meta = BTreeMap::new();
        let mut pending: Option<(String, usize, usize, Vec<f64>)> = None;
        for line in lines {
            if let Some(rest) = line.strip_prefix("meta ") {
                let (k, v) = rest
                    .split_once(' ')
                    .ok_or_else(|| Error::Data(format!("bad meta line: {line}")))?;
                meta.insert(k.to_string(), v.to_string());
            } else if let Some(rest) = line.strip_prefix("param ") {
                if let Some((name, rows, cols, values)) = pending.take() {
                    store.add(&name, rows, cols, values);
                }
                let mut it = rest.split_whitespace();
                let name = it
                    .next()
                    .ok_or_else(|| Error::Data("param line missing name".into()))?;
                let rows: usize = it
                    .next()
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| Error::Data(format!("bad param rows: {line}")))?;
                let cols: usize = it
                    .next()
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| Error::Data(format!("bad param cols: {line}")))?;
                pending = Some((name.to_string(), rows, cols, Vec::with_capacity(rows * cols)));
            } else if line == "end" {
                break;
            } else if let Some((_, _, _, values)) = pending.as_mut() {
                for tok in line.split_whitespace() {
                    let bits = u64::from_str_radix(tok, 16)
                        .map_err(|_| Error::Data(format!("bad value token {tok}")))?;
                    values.push(f64::from_bits(bits));
                }
            } else if !line.trim().is_empty() {
                return Err(Error::Data(format!("unexpected checkpoint line: {line}")));
            }
        }
        if let Some((name, rows, cols, values)) = pending.take() {
            if values.len() != rows * cols {
                return Err(Error::Data(format!(
                    "param {name} has {} values, expected {}",
                    values.len(),
                    rows * cols
                )));
            }
            store.add(&name, rows, cols, values);
        }
        Ok((store, meta))
    }
}

/// Gradient accumulation buffers aligned with a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct GradStore {
    bufs: Vec<Vec<f64>>,
}

impl GradStore {
    pub fn zeros_like(store: &ParamStore) -> Self {
        GradStore {
            bufs: store.iter().map(|p| vec![0.0; p.values.len()]).collect(),
        }
    }

    pub fn accumulate(&mut self, idx: usize, grad: &[f64]) {
        let buf = &mut self.bufs[idx];
        debug_assert_eq!(buf.len(), grad.len());
        for (b, &g) in buf.iter_mut().zip(grad.iter()) {
            *b += g;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for buf in &mut self.bufs {
            for g in buf.iter_mut() {
                *g *= factor;
            }
        }
    }

    pub fn get(&self, idx: usize) -> &[f64] {
        &self.bufs[idx]
    }

    pub fn global_norm(&self) -> f64 {
        self.bufs
            .iter()
            .flat_map(|b| b.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    /// Scale all gradients so the global norm does not exceed `max_norm`.
    pub fn clip_global_norm(&mut self, max_norm: f64) {
        let norm = self.global_norm();
        if norm > max_norm && norm > 0.0 {
            self.scale(max_norm / norm);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoint_round_trips_bit_exactly() {
        let mut rng = Rng::new(11);
        let mut store = ParamStore::new();
        store.add_uniform("w_q", 4, 4, &mut rng);
        store.add_uniform("embedding", 7, 3, &mut rng);
        store.add_zeros("bias", 1, 4);
        // awkward values that expose lossy formatting
        store.add("odd", 1, 3, vec![f64::MIN_POSITIVE, -0.1 + 0.2, 1e300]);

        let dir = std::env::temp_dir().join("adasplit_ckpt_test");
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("model.ckpt");
        let mut meta = BTreeMap::new();
        meta.insert("dim".to_string(), "4".to_string());
        store.save(&path, &meta).unwrap();

        let (loaded, loaded_meta) = ParamStore::load(&path).unwrap();
        assert_eq!(loaded_meta.get("dim").map(String::as_str), Some("4"));
        assert_eq!(loaded.len(), store.len());
        for (a, b) in store.iter().zip(loaded.iter()) {
            assert_eq!(a.name, b.name);
            assert_eq!((a.rows, a.cols), (b.rows, b.cols));
            for (x, y) in a.values.iter().zip(b.values.iter()) {
                assert_eq!(x.to_bits(), y.to_bits(), "param {} not bit-exact", a.name);
            }
        }

        // saving the loaded store must reproduce the file byte-for-byte
        let path2 = dir.join("model2.ckpt");
        loaded.save(&path2, &meta).unwrap();
        assert_eq!(fs::read(&path).unwrap(), fs::read(&path2).unwrap());
    }

    #[test]
    fn grad_store_clip() {
        let mut store = ParamStore::new();
        store.add("a", 1, 2, vec![0.0, 0.0]);
        let mut grads = GradStore::zeros_like(&store);
        grads.accumulate(0, &[3.0, 4.0]);
        assert!((grads.global_norm() - 5.0).abs() < 1e-12);
        grads.clip_global_norm(1.0);
        assert!((grads.global_norm() - 1.0).abs() < 1e-12);
        // clipping below the threshold is a no-op
        let before = grads.get(0).to_vec();
        grads.clip_global_norm(10.0);
        assert_eq!(before, grads.get(0));
    }
}
