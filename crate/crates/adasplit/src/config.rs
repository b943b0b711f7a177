//! Experiment configuration: a flat `key = value` file format with `#`
//! comments, validated before any compute. Unknown keys are rejected, CLI
//! `--set key=value` flags override file values, and every run writes back
//! a resolved snapshot sufficient to reproduce it exactly.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::allocator::{AllocatorConfig, UpdaterKind};
use crate::dataio::{LastfmField, LoadOptions};
use crate::encoder::{EncoderConfig, EncoderMode};
use crate::error::{Error, Result};
use crate::eval::EvalOptions;
use crate::reward::{RewardConfig, Schedule};
use crate::synth::SyntheticConfig;
use crate::trainer::{NegSampling, ReturnBaseline, TrainConfig};

/// The tuned recipe behind `synth-check`: imitation warm-up over the
/// similarity router, an action-class return baseline for the short
/// policy-gradient phase, and a tight sub-sequence cap. See the README's
/// notes on allocator trainability for why these are not the global
/// defaults.
pub fn synth_check_recipe() -> ExperimentConfig {
    let mut config = ExperimentConfig::default();
    config.lr = 0.01;
    config.epochs = 26;
    config.rl_warmup_epochs = 26;
    config.warmup_tau = 0.4;
    config.h_max = 4;
    config.b1 = 1.2;
    config.return_baseline = crate::trainer::ReturnBaseline::ActionClass;
    // small-sample validation is noisy; never stop inside the warm-up
    config.patience = 40;
    config
}

/// Everything a run needs: data location, model and training knobs, eval
/// options, synthetic-check parameters, and output routing.
#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub data_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub seed: u64,
    pub dim: usize,
    pub num_blocks: usize,
    pub encoder_mode: EncoderMode,
    pub max_len: usize,
    pub updater: UpdaterKind,
    pub epsilon: f64,
    pub h_max: usize,
    pub lambda_o: f64,
    pub lambda_d: f64,
    pub schedule: Schedule,
    pub a1: f64,
    pub b1: f64,
    pub initial_lambda: f64,
    pub beta: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub neg_sampling: NegSampling,
    pub grad_clip: f64,
    pub patience: usize,
    pub return_baseline: ReturnBaseline,
    /// Initial epochs trained on the recommendation loss alone over
    /// similarity-greedy allocations; see `TrainConfig::rl_warmup_epochs`.
    pub rl_warmup_epochs: usize,
    /// Warm-up router creation threshold (cosine).
    pub warmup_tau: f64,
    pub exclude_seen: bool,
    pub min_count: usize,
    pub lastfm_field: LastfmField,
    pub collapse_repeats: bool,
    pub synth_interests: usize,
    pub synth_items_per_interest: usize,
    pub synth_users: usize,
    pub synth_seq_len: usize,
    pub synth_switch_prob: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            data_dir: None,
            out_dir: None,
            seed: 42,
            dim: 16,
            num_blocks: 1,
            encoder_mode: EncoderMode::Bidirectional,
            max_len: 10,
            updater: UpdaterKind::AttentionGru,
            epsilon: 0.5,
            h_max: 8,
            lambda_o: 0.1,
            lambda_d: 0.9,
            schedule: Schedule::Exponential,
            a1: 0.1,
            b1: 1.1,
            initial_lambda: 1.0,
            beta: 0.1,
            lr: 0.001,
            batch_size: 32,
            epochs: 30,
            neg_sampling: NegSampling::Full,
            grad_clip: 5.0,
            patience: 10,
            return_baseline: ReturnBaseline::None,
            rl_warmup_epochs: 0,
            warmup_tau: 0.5,
            exclude_seen: false,
            min_count: 5,
            lastfm_field: LastfmField::Artist,
            collapse_repeats: false,
            synth_interests: 3,
            synth_items_per_interest: 30,
            synth_users: 200,
            synth_seq_len: 20,
            synth_switch_prob: 0.2,
        }
    }
}

impl ExperimentConfig {
    /// Parse a config file and apply `overrides` (from `--set key=value`).
    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<ExperimentConfig> {
        Self::load_with_base(ExperimentConfig::default(), path, overrides)
    }

    /// Like [`ExperimentConfig::load`] but starting from a given base
    /// instead of the global defaults.
    pub fn load_with_base(
        base: ExperimentConfig,
        path: Option<&Path>,
        overrides: &[(String, String)],
    ) -> Result<ExperimentConfig> {
        let mut config = base;
        if let Some(path) = path {
            let text = fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
            for (lineno, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (key, value) = line.split_once('=').ok_or_else(|| {
                    Error::Config(format!("{}:{}: expected 'key = value'", path.display(), lineno + 1))
                })?;
                config.set(key.trim(), value.trim())?;
            }
        }
        for (key, value) in overrides {
            config.set(key, value)?;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("bad value '{value}' for key '{key}'")))
        }
        fn parse_bool(key: &str, value: &str) -> Result<bool> {
            match value {
                "true" | "1" | "yes" | "on" => Ok(true),
                "false" | "0" | "no" | "off" => Ok(false),
                _ => Err(Error::Config(format!("bad boolean '{value}' for key '{key}'"))),
            }
        }
        match key {
            "data_dir" => self.data_dir = Some(PathBuf::from(value)),
            "out_dir" => self.out_dir = Some(PathBuf::from(value)),
            "seed" => self.seed = parse(key, value)?,
            "dim" => self.dim = parse(key, value)?,
            "num_blocks" => self.num_blocks = parse(key, value)?,
            "encoder_mode" => self.encoder_mode = EncoderMode::parse(value)?,
            "max_len" => self.max_len = parse(key, value)?,
            "updater" => self.updater = UpdaterKind::parse(value)?,
            "epsilon" => self.epsilon = parse(key, value)?,
            "h_max" => self.h_max = parse(key, value)?,
            "lambda_o" => self.lambda_o = parse(key, value)?,
            "lambda_d" => self.lambda_d = parse(key, value)?,
            "schedule" => self.schedule = Schedule::parse(value)?,
            "a1" => self.a1 = parse(key, value)?,
            "b1" => self.b1 = parse(key, value)?,
            "initial_lambda" => self.initial_lambda = parse(key, value)?,
            "beta" => self.beta = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "neg_sample_size" => self.neg_sampling = NegSampling::parse(value)?,
            "grad_clip" => self.grad_clip = parse(key, value)?,
            "patience" => self.patience = parse(key, value)?,
            "return_baseline" => self.return_baseline = ReturnBaseline::parse(value)?,
            "rl_warmup_epochs" => self.rl_warmup_epochs = parse(key, value)?,
            "warmup_tau" => self.warmup_tau = parse(key, value)?,
            "exclude_seen" => self.exclude_seen = parse_bool(key, value)?,
            "min_count" => self.min_count = parse(key, value)?,
            "lastfm_field" => {
                self.lastfm_field = match value {
                    "artist" => LastfmField::Artist,
                    "track" => LastfmField::Track,
                    _ => return Err(Error::Config(format!("bad lastfm_field '{value}'"))),
                }
            }
            "collapse_repeats" => self.collapse_repeats = parse_bool(key, value)?,
            "synth_interests" => self.synth_interests = parse(key, value)?,
            "synth_items_per_interest" => self.synth_items_per_interest = parse(key, value)?,
            "synth_users" => self.synth_users = parse(key, value)?,
            "synth_seq_len" => self.synth_seq_len = parse(key, value)?,
            "synth_switch_prob" => self.synth_switch_prob = parse(key, value)?,
            other => {
                return Err(Error::Config(format!("unknown config key '{other}'")));
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Config("dim must be positive".into()));
        }
        if self.max_len < 3 {
            return Err(Error::Config("max_len must be >= 3".into()));
        }
        if self.h_max < 1 {
            return Err(Error::Config("h_max must be >= 1".into()));
        }
        if !self.epsilon.is_finite() {
            return Err(Error::Config("epsilon must be finite".into()));
        }
        self.train_config().validate()
    }

    pub fn encoder_config(&self) -> EncoderConfig {
        EncoderConfig {
            dim: self.dim,
            num_blocks: self.num_blocks,
            mode: self.encoder_mode,
            max_len: self.max_len,
        }
    }

    pub fn allocator_config(&self) -> AllocatorConfig {
        AllocatorConfig {
            epsilon: self.epsilon,
            h_max: self.h_max,
            updater: self.updater,
        }
    }

    pub fn reward_config(&self) -> RewardConfig {
        RewardConfig {
            lambda_o: self.lambda_o,
            lambda_d: self.lambda_d,
            schedule: self.schedule,
            a1: self.a1,
            b1: self.b1,
            initial_lambda: self.initial_lambda,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            beta: self.beta,
            lr: self.lr,
            batch_size: self.batch_size,
            epochs: self.epochs,
            neg_sampling: self.neg_sampling,
            seed: self.seed,
            encoder: self.encoder_config(),
            reward: self.reward_config(),
            allocator: self.allocator_config(),
            grad_clip: self.grad_clip,
            patience: self.patience,
            return_baseline: self.return_baseline,
            rl_warmup_epochs: self.rl_warmup_epochs,
            warmup_tau: self.warmup_tau,
            greedy_allocation: false,
        }
    }

    pub fn eval_options(&self) -> EvalOptions {
        EvalOptions {
            exclude_seen: self.exclude_seen,
            ..EvalOptions::default()
        }
    }

    pub fn load_options(&self) -> LoadOptions {
        LoadOptions {
            lastfm_field: self.lastfm_field,
            collapse_repeats: self.collapse_repeats,
        }
    }

    pub fn synthetic_config(&self) -> SyntheticConfig {
        SyntheticConfig {
            num_interests: self.synth_interests,
            items_per_interest: self.synth_items_per_interest,
            num_users: self.synth_users,
            seq_len: self.synth_seq_len,
            switch_prob: self.synth_switch_prob,
            seed: self.seed,
        }
    }

    /// Serialize every key so the run can be reproduced exactly.
    pub fn resolved_snapshot(&self) -> String {
        let mut map: BTreeMap<&str, String> = BTreeMap::new();
        if let Some(d) = &self.data_dir {
            map.insert("data_dir", d.display().to_string());
        }
        if let Some(d) = &self.out_dir {
            map.insert("out_dir", d.display().to_string());
        }
        map.insert("seed", self.seed.to_string());
        map.insert("dim", self.dim.to_string());
        map.insert("num_blocks", self.num_blocks.to_string());
        map.insert("encoder_mode", self.encoder_mode.name().to_string());
        map.insert("max_len", self.max_len.to_string());
        map.insert("updater", self.updater.name().to_string());
        map.insert("epsilon", format!("{}", self.epsilon));
        map.insert("h_max", self.h_max.to_string());
        map.insert("lambda_o", format!("{}", self.lambda_o));
        map.insert("lambda_d", format!("{}", self.lambda_d));
        map.insert("schedule", self.schedule.name().to_string());
        map.insert("a1", format!("{}", self.a1));
        map.insert("b1", format!("{}", self.b1));
        map.insert("initial_lambda", format!("{}", self.initial_lambda));
        map.insert("beta", format!("{}", self.beta));
        map.insert("lr", format!("{}", self.lr));
        map.insert("batch_size", self.batch_size.to_string());
        map.insert("epochs", self.epochs.to_string());
        map.insert("neg_sample_size", self.neg_sampling.name());
        map.insert("grad_clip", format!("{}", self.grad_clip));
        map.insert("patience", self.patience.to_string());
        map.insert("return_baseline", self.return_baseline.name().to_string());
        map.insert("rl_warmup_epochs", self.rl_warmup_epochs.to_string());
        map.insert("warmup_tau", format!("{}", self.warmup_tau));
        map.insert("exclude_seen", self.exclude_seen.to_string());
        map.insert("min_count", self.min_count.to_string());
        map.insert(
            "lastfm_field",
            match self.lastfm_field {
                LastfmField::Artist => "artist".to_string(),
                LastfmField::Track => "track".to_string(),
            },
        );
        map.insert("collapse_repeats", self.collapse_repeats.to_string());
        map.insert("synth_interests", self.synth_interests.to_string());
        map.insert("synth_items_per_interest", self.synth_items_per_interest.to_string());
        map.insert("synth_users", self.synth_users.to_string());
        map.insert("synth_seq_len", self.synth_seq_len.to_string());
        map.insert("synth_switch_prob", format!("{}", self.synth_switch_prob));

        let mut out = String::from("# adasplit resolved config\n");
        for (k, v) in map {
            writeln!(out, "{k} = {v}").unwrap();
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn tmpconfig(name: &str, contents: &str) -> PathBuf {
        let dir = std::env::temp_dir().join("adasplit_config_tests");
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join(name);
        let mut f = fs::File::create(&path).unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        path
    }

    #[test]
    fn defaults_validate() {
        let config = ExperimentConfig::default();
        assert!(config.validate().is_ok());
    }

    #[test]
    fn file_values_and_overrides() {
        let path = tmpconfig(
            "basic.conf",
            "# comment\nseed = 7\ndim = 8\nschedule = linear\nneg_sample_size = 128\n",
        );
        let overrides = vec![("dim".to_string(), "4".to_string())];
        let config = ExperimentConfig::load(Some(&path), &overrides).unwrap();
        assert_eq!(config.seed, 7);
        assert_eq!(config.dim, 4); // override wins
        assert_eq!(config.schedule, Schedule::Linear);
        assert_eq!(config.neg_sampling, NegSampling::Sampled(128));
    }

    #[test]
    fn unknown_key_rejected() {
        let path = tmpconfig("bad.conf", "not_a_key = 1\n");
        let err = ExperimentConfig::load(Some(&path), &[]).unwrap_err();
        assert!(err.to_string().contains("not_a_key"));
    }

    #[test]
    fn bad_value_rejected() {
        let path = tmpconfig("badval.conf", "dim = banana\n");
        assert!(ExperimentConfig::load(Some(&path), &[]).is_err());
    }

    #[test]
    fn invalid_combination_rejected() {
        let path = tmpconfig("badcombo.conf", "lambda_d = 1.5\n");
        assert!(ExperimentConfig::load(Some(&path), &[]).is_err());
    }

    #[test]
    fn snapshot_round_trips() {
        let mut config = ExperimentConfig::default();
        config.set("dim", "24").unwrap();
        config.set("schedule", "keep").unwrap();
        config.set("epsilon", "0.3").unwrap();
        let snapshot = config.resolved_snapshot();
        let path = tmpconfig("snap.conf", &snapshot);
        let reloaded = ExperimentConfig::load(Some(&path), &[]).unwrap();
        assert_eq!(reloaded.dim, 24);
        assert_eq!(reloaded.schedule, Schedule::Keep);
        assert_eq!(reloaded.epsilon, 0.3);
        assert_eq!(reloaded.resolved_snapshot(), snapshot);
    }
}
