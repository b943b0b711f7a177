//! Model parameter bundle: canonical names, initialization, checkpoint
//! metadata, and the per-tape binding that mounts parameters as leaves.
//!
//! Canonical parameter names (for `dim` d, policy hidden `ceil(d/2)`):
//!
//! | name | shape | role |
//! |------|-------|------|
//! | `item_embedding` | items x d | item table |
//! | `position_embedding` | max_len x d | learnable positions |
//! | `user_embedding` | users x d | user table |
//! | `encoder.b{k}.w_q/w_k/w_v` | d x d | attention projections |
//! | `encoder.b{k}.ffn_w1/ffn_w2` | d x d | feed-forward |
//! | `encoder.b{k}.ffn_b1/ffn_b2` | 1 x d | feed-forward biases |
//! | `state.w0` | 2d x d | global-state projection |
//! | `state.w_s`, `state.w_p` | d x d | per-sub-sequence state |
//! | `policy.w1/b1` | 2d x d, 1 x d | policy layer 1 |
//! | `policy.w2/b2` | d x h2, 1 x h2 | policy layer 2 |
//! | `policy.w3/b3` | h2 x 1, 1 x 1 | policy layer 3 |
//! | `gru.w_z/u_z/w_r/u_r` | d x 1 | scalar gates |
//! | `gru.w/u` | d x d | candidate |
//! | `lstm.*` | see below | vector-gate variant |
//!
//! The LSTM updater variant owns `lstm.w_i/u_i/b_i`, `..f..`, `..o..`,
//! `..c..` (input/hidden d x d, biases 1 x d). Average pooling owns no
//! parameters. Only the configured updater's parameters are registered.

use std::collections::BTreeMap;
use std::path::Path;

use crate::allocator::UpdaterKind;
use crate::autodiff::{ParamStore, Tape, TensorId};
use crate::encoder::EncoderMode;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Structural hyper-parameters baked into the parameter shapes.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelDims {
    pub num_users: usize,
    pub num_items: usize,
    pub dim: usize,
    pub max_len: usize,
    pub num_blocks: usize,
    pub encoder_mode: EncoderMode,
    pub updater: UpdaterKind,
}

impl ModelDims {
    pub fn policy_hidden(&self) -> usize {
        self.dim.div_ceil(2)
    }
}

/// Parameters plus the structural dims they were created for.
#[derive(Clone, Debug)]
pub struct Model {
    pub dims: ModelDims,
    pub params: ParamStore,
}

impl Model {
    /// Initialize all weights uniform(-0.1, 0.1), biases zero.
    pub fn init(dims: ModelDims, seed: u64) -> Model {
        let mut rng = Rng::new(seed);
        let d = dims.dim;
        let h2 = dims.policy_hidden();
        let mut p = ParamStore::new();
        p.add_uniform("item_embedding", dims.num_items, d, &mut rng);
        p.add_uniform("position_embedding", dims.max_len, d, &mut rng);
        p.add_uniform("user_embedding", dims.num_users, d, &mut rng);
        for k in 0..dims.num_blocks {
            p.add_uniform(&format!("encoder.b{k}.w_q"), d, d, &mut rng);
            p.add_uniform(&format!("encoder.b{k}.w_k"), d, d, &mut rng);
            p.add_uniform(&format!("encoder.b{k}.w_v"), d, d, &mut rng);
            p.add_uniform(&format!("encoder.b{k}.ffn_w1"), d, d, &mut rng);
            p.add_zeros(&format!("encoder.b{k}.ffn_b1"), 1, d);
            p.add_uniform(&format!("encoder.b{k}.ffn_w2"), d, d, &mut rng);
            p.add_zeros(&format!("encoder.b{k}.ffn_b2"), 1, d);
        }
        p.add_uniform("state.w0", 2 * d, d, &mut rng);
        p.add_uniform("state.w_s", d, d, &mut rng);
        p.add_uniform("state.w_p", d, d, &mut rng);
        p.add_uniform("policy.w1", 2 * d, d, &mut rng);
        p.add_zeros("policy.b1", 1, d);
        p.add_uniform("policy.w2", d, h2, &mut rng);
        p.add_zeros("policy.b2", 1, h2);
        p.add_uniform("policy.w3", h2, 1, &mut rng);
        p.add_zeros("policy.b3", 1, 1);
        match dims.updater {
            UpdaterKind::AttentionGru => {
                p.add_uniform("gru.w_z", d, 1, &mut rng);
                p.add_uniform("gru.u_z", d, 1, &mut rng);
                p.add_uniform("gru.w_r", d, 1, &mut rng);
                p.add_uniform("gru.u_r", d, 1, &mut rng);
                p.add_uniform("gru.w", d, d, &mut rng);
                p.add_uniform("gru.u", d, d, &mut rng);
            }
            UpdaterKind::Lstm => {
                for gate in ["i", "f", "o", "c"] {
                    p.add_uniform(&format!("lstm.w_{gate}"), d, d, &mut rng);
                    p.add_uniform(&format!("lstm.u_{gate}"), d, d, &mut rng);
                    p.add_zeros(&format!("lstm.b_{gate}"), 1, d);
                }
            }
            UpdaterKind::AveragePooling => {}
        }
        Model { dims, params: p }
    }

    pub fn meta(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        m.insert("num_users".into(), self.dims.num_users.to_string());
        m.insert("num_items".into(), self.dims.num_items.to_string());
        m.insert("dim".into(), self.dims.dim.to_string());
        m.insert("max_len".into(), self.dims.max_len.to_string());
        m.insert("num_blocks".into(), self.dims.num_blocks.to_string());
        m.insert("encoder_mode".into(), self.dims.encoder_mode.name().into());
        m.insert("updater".into(), self.dims.updater.name().into());
        m.insert("format".into(), "adasplit-model".into());
        m
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.params.save(path, &self.meta())
    }

    pub fn load(path: &Path) -> Result<Model> {
        let (params, meta) = ParamStore::load(path)?;
        let get = |key: &str| -> Result<String> {
            meta.get(key)
                .cloned()
                .ok_or_else(|| Error::Data(format!("checkpoint missing meta key {key}")))
        };
        let parse_usize = |key: &str| -> Result<usize> {
            get(key)?
                .parse()
                .map_err(|_| Error::Data(format!("bad checkpoint meta {key}")))
        };
        let dims = ModelDims {
            num_users: parse_usize("num_users")?,
            num_items: parse_usize("num_items")?,
            dim: parse_usize("dim")?,
            max_len: parse_usize("max_len")?,
            num_blocks: parse_usize("num_blocks")?,
            encoder_mode: EncoderMode::parse(&get("encoder_mode")?)?,
            updater: UpdaterKind::parse(&get("updater")?)?,
        };
        Ok(Model { dims, params })
    }
}

/// Mounts every parameter onto one tape and remembers the leaf ids so the
/// trainer can read gradients back out per name after backward.
pub struct TapeBinding {
    ids: Vec<TensorId>,
    names: Vec<String>,
}

impl TapeBinding {
    /// `trainable` controls whether leaves request gradients (evaluation
    /// mounts read-only).
    pub fn mount(tape: &mut Tape, model: &Model, trainable: bool) -> TapeBinding {
        let mut ids = Vec::with_capacity(model.params.len());
        let mut names = Vec::with_capacity(model.params.len());
        for p in model.params.iter() {
            ids.push(tape.leaf(p.values.clone(), p.rows, p.cols, trainable));
            names.push(p.name.clone());
        }
        TapeBinding { ids, names }
    }

    pub fn get(&self, model: &Model, name: &str) -> TensorId {
        self.ids[model.params.index_of(name)]
    }

    /// (store index, leaf id, name) triples for gradient extraction.
    pub fn iter(&self) -> impl Iterator<Item = (usize, TensorId, &str)> {
        self.ids
            .iter()
            .zip(self.names.iter())
            .enumerate()
            .map(|(i, (&id, name))| (i, id, name.as_str()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims() -> ModelDims {
        ModelDims {
            num_users: 3,
            num_items: 7,
            dim: 4,
            max_len: 5,
            num_blocks: 1,
            encoder_mode: EncoderMode::Bidirectional,
            updater: UpdaterKind::AttentionGru,
        }
    }

    #[test]
    fn init_is_seed_deterministic() {
        let a = Model::init(dims(), 9);
        let b = Model::init(dims(), 9);
        for (x, y) in a.params.iter().zip(b.params.iter()) {
            assert_eq!(x.values, y.values, "param {} differs", x.name);
        }
        let c = Model::init(dims(), 10);
        assert_ne!(
            a.params.get("item_embedding").values,
            c.params.get("item_embedding").values
        );
    }

    #[test]
    fn weights_in_range_biases_zero() {
        let m = Model::init(dims(), 1);
        for v in &m.params.get("policy.w1").values {
            assert!(v.abs() < 0.1);
        }
        assert!(m.params.get("policy.b1").values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn save_load_preserves_dims_and_values() {
        let m = Model::init(dims(), 4);
        let dir = std::env::temp_dir().join("adasplit_model_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("m.ckpt");
        m.save(&path).unwrap();
        let loaded = Model::load(&path).unwrap();
        assert_eq!(loaded.dims, m.dims);
        for (a, b) in m.params.iter().zip(loaded.params.iter()) {
            assert_eq!(a.values, b.values);
        }
    }

    #[test]
    fn lstm_variant_registers_its_own_params() {
        let mut d = dims();
        d.updater = UpdaterKind::Lstm;
        let m = Model::init(d, 1);
        assert_eq!(m.params.get("lstm.w_i").rows, 4);
        assert!(!m.params.iter().any(|p| p.name.starts_with("gru.")));
    }
}
