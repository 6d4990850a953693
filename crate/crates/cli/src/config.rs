//! Plain-text run configuration: `key = value` lines, `#` comments.
//!
//! Every key has a default, unknown keys are rejected by name, and the
//! fully resolved table (file values plus command-line overrides) is echoed
//! into the output directory so a run directory always states exactly what
//! produced it.

use std::str::FromStr;

use tempograph_core::embedding::TrajectoryMode;
use tempograph_core::graph::split::SplitSpec;
use tempograph_core::graph::synthetic::{Generator, SyntheticSpec};
use tempograph_core::memory::MessageAggregation;
use tempograph_core::model::ModelConfig;
use tempograph_core::tasks::eval::EvalSetting;
use tempograph_core::tasks::sweep::SweepGrid;
use tempograph_core::tasks::train::TrainConfig;
use tempograph_core::trajectory::TeParams;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("bad value `{value}` for key `{key}`: {why}")]
    BadValue {
        key: String,
        value: String,
        why: String,
    },
    #[error("line {line}: expected `key = value`, got `{text}`")]
    Syntax { line: usize, text: String },
}

/// All run settings. Field-by-field documentation lives in [`RunConfig::KEYS`].
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub data_path: String,
    pub data_generator: Generator,
    pub data_sources: u32,
    pub data_targets: u32,
    pub data_events: u32,
    pub data_jitter: f64,
    pub data_label_threshold: Option<u32>,
    pub data_seed: u64,
    pub split_train: f64,
    pub split_val: f64,
    pub split_inductive_fraction: f64,
    pub split_inductive_seed: u64,
    pub model_d_mem: usize,
    pub model_d_time: usize,
    pub model_d_traj: usize,
    pub model_d_emb: usize,
    pub model_heads: usize,
    pub model_layers: usize,
    pub model_n_neighbors: usize,
    pub model_mode: TrajectoryMode,
    pub model_agg: MessageAggregation,
    pub te_alpha: f64,
    pub te_beta: f64,
    pub train_lr: f64,
    pub train_batch_size: usize,
    pub train_n_neg: usize,
    pub train_epochs: usize,
    pub train_patience: usize,
    pub eval_setting: EvalSetting,
    pub sweep_alphas: Vec<f64>,
    pub sweep_betas: Vec<f64>,
    pub sweep_dims: Vec<usize>,
    pub sweep_repeats: usize,
    pub expr_pair: (u32, u32),
    pub expr_t: f64,
    pub expr_levels: usize,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data_path: String::new(),
            data_generator: Generator::RecurrentBipartite,
            data_sources: 50,
            data_targets: 100,
            data_events: 2000,
            data_jitter: 0.25,
            data_label_threshold: None,
            data_seed: 0,
            split_train: 0.70,
            split_val: 0.15,
            split_inductive_fraction: 0.0,
            split_inductive_seed: 0,
            model_d_mem: 100,
            model_d_time: 100,
            model_d_traj: 100,
            model_d_emb: 100,
            model_heads: 2,
            model_layers: 1,
            model_n_neighbors: 10,
            model_mode: TrajectoryMode::Full,
            model_agg: MessageAggregation::MostRecent,
            te_alpha: 2.0,
            te_beta: 0.1,
            train_lr: 1e-4,
            train_batch_size: 200,
            train_n_neg: 5,
            train_epochs: 30,
            train_patience: 5,
            eval_setting: EvalSetting::Transductive,
            sweep_alphas: vec![1.0, 2.0],
            sweep_betas: vec![0.1, 1.0],
            sweep_dims: vec![4, 12, 20, 28],
            sweep_repeats: 1,
            expr_pair: (1, 3),
            expr_t: 3.0,
            expr_levels: 2,
            seed: 0,
        }
    }
}

impl RunConfig {
    /// Documented keys: `(name, default, meaning)`. The resolved echo and
    /// the unknown-key check both derive from this table.
    pub const KEYS: &'static [(&'static str, &'static str, &'static str)] = &[
        ("data.path", "", "CSV event log; empty selects the synthetic generator"),
        ("data.generator", "recurrent_bipartite", "synthetic generator (recurrent_bipartite | symmetric_cycle)"),
        ("data.sources", "50", "synthetic source-node count"),
        ("data.targets", "100", "synthetic target-node count"),
        ("data.events", "2000", "synthetic event count"),
        ("data.jitter", "0.25", "synthetic timestamp jitter in [0, 1)"),
        ("data.label_threshold", "", "label events 1 after this many source interactions; empty = unlabeled"),
        ("data.seed", "0", "synthetic generator seed"),
        ("split.train", "0.7", "fraction of events in the training span"),
        ("split.val", "0.15", "fraction of events in the validation span"),
        ("split.inductive_fraction", "0", "fraction of eval-span nodes withheld from training"),
        ("split.inductive_seed", "0", "seed for the withheld-node draw"),
        ("model.d_mem", "100", "memory state width"),
        ("model.d_time", "100", "time-encoding width"),
        ("model.d_traj", "100", "trajectory feature width"),
        ("model.d_emb", "100", "embedding width"),
        ("model.heads", "2", "attention heads"),
        ("model.layers", "1", "attention layers"),
        ("model.n_neighbors", "10", "neighbors kept per attention query"),
        ("model.mode", "full", "trajectory stream variant (full | raw-id | disabled)"),
        ("model.agg", "most-recent", "message aggregation (most-recent | mean)"),
        ("te.alpha", "2", "decay-encoding gain"),
        ("te.beta", "0.1", "decay-encoding rate"),
        ("train.lr", "0.0001", "Adam learning rate"),
        ("train.batch_size", "200", "events per training batch"),
        ("train.n_neg", "5", "negative destinations per positive during training"),
        ("train.epochs", "30", "maximum training epochs"),
        ("train.patience", "5", "epochs without val-AP improvement before stopping"),
        ("eval.setting", "transductive", "scored event class (transductive | inductive)"),
        ("sweep.alphas", "1,2", "sweep grid for te.alpha"),
        ("sweep.betas", "0.1,1", "sweep grid for te.beta"),
        ("sweep.dims", "4,12,20,28", "sweep grid for the uniform model width"),
        ("sweep.repeats", "1", "runs per sweep cell (seed varies per repeat)"),
        ("expr.pair", "1,3", "node pair probed by the expressiveness bench"),
        ("expr.t", "3", "probe time of the expressiveness bench"),
        ("expr.levels", "2", "computation-tree depth of the expressiveness bench"),
        ("seed", "0", "model initialization and sampling seed"),
    ];

    pub fn parse_text(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = RunConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: lineno + 1,
                text: line.to_string(),
            })?;
            cfg.apply(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    /// Applies one `key=value` assignment (file line or `--set` override).
    pub fn apply(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        fn parse<T: FromStr>(key: &str, value: &str, why: &str) -> Result<T, ConfigError> {
            value.parse().map_err(|_| ConfigError::BadValue {
                key: key.to_string(),
                value: value.to_string(),
                why: why.to_string(),
            })
        }
        fn parse_list<T: FromStr>(key: &str, value: &str, why: &str) -> Result<Vec<T>, ConfigError> {
            value
                .split(',')
                .map(|part| parse(key, part.trim(), why))
                .collect()
        }
        match key {
            "data.path" => self.data_path = value.to_string(),
            "data.generator" => {
                self.data_generator =
                    Generator::parse(value).map_err(|e| ConfigError::BadValue {
                        key: key.into(),
                        value: value.into(),
                        why: e.to_string(),
                    })?
            }
            "data.sources" => self.data_sources = parse(key, value, "expected integer")?,
            "data.targets" => self.data_targets = parse(key, value, "expected integer")?,
            "data.events" => self.data_events = parse(key, value, "expected integer")?,
            "data.jitter" => self.data_jitter = parse(key, value, "expected number")?,
            "data.label_threshold" => {
                self.data_label_threshold = if value.is_empty() {
                    None
                } else {
                    Some(parse(key, value, "expected integer or empty")?)
                }
            }
            "data.seed" => self.data_seed = parse(key, value, "expected integer")?,
            "split.train" => self.split_train = parse(key, value, "expected number")?,
            "split.val" => self.split_val = parse(key, value, "expected number")?,
            "split.inductive_fraction" => {
                self.split_inductive_fraction = parse(key, value, "expected number")?
            }
            "split.inductive_seed" => {
                self.split_inductive_seed = parse(key, value, "expected integer")?
            }
            "model.d_mem" => self.model_d_mem = parse(key, value, "expected integer")?,
            "model.d_time" => self.model_d_time = parse(key, value, "expected integer")?,
            "model.d_traj" => self.model_d_traj = parse(key, value, "expected integer")?,
            "model.d_emb" => self.model_d_emb = parse(key, value, "expected integer")?,
            "model.heads" => self.model_heads = parse(key, value, "expected integer")?,
            "model.layers" => self.model_layers = parse(key, value, "expected integer")?,
            "model.n_neighbors" => {
                self.model_n_neighbors = parse(key, value, "expected integer")?
            }
            "model.mode" => {
                self.model_mode = value.parse().map_err(|e: String| ConfigError::BadValue {
                    key: key.into(),
                    value: value.into(),
                    why: e,
                })?
            }
            "model.agg" => {
                self.model_agg = value.parse().map_err(|e: String| ConfigError::BadValue {
                    key: key.into(),
                    value: value.into(),
                    why: e,
                })?
            }
            "te.alpha" => self.te_alpha = parse(key, value, "expected number")?,
            "te.beta" => self.te_beta = parse(key, value, "expected number")?,
            "train.lr" => self.train_lr = parse(key, value, "expected number")?,
            "train.batch_size" => self.train_batch_size = parse(key, value, "expected integer")?,
            "train.n_neg" => self.train_n_neg = parse(key, value, "expected integer")?,
            "train.epochs" => self.train_epochs = parse(key, value, "expected integer")?,
            "train.patience" => self.train_patience = parse(key, value, "expected integer")?,
            "eval.setting" => {
                self.eval_setting = value.parse().map_err(|e: String| ConfigError::BadValue {
                    key: key.into(),
                    value: value.into(),
                    why: e,
                })?
            }
            "sweep.alphas" => self.sweep_alphas = parse_list(key, value, "expected numbers")?,
            "sweep.betas" => self.sweep_betas = parse_list(key, value, "expected numbers")?,
            "sweep.dims" => self.sweep_dims = parse_list(key, value, "expected integers")?,
            "sweep.repeats" => self.sweep_repeats = parse(key, value, "expected integer")?,
            "expr.pair" => {
                let parts: Vec<u32> = parse_list(key, value, "expected two node ids")?;
                if parts.len() != 2 {
                    return Err(ConfigError::BadValue {
                        key: key.into(),
                        value: value.into(),
                        why: "expected exactly two node ids".into(),
                    });
                }
                self.expr_pair = (parts[0], parts[1]);
            }
            "expr.t" => self.expr_t = parse(key, value, "expected number")?,
            "expr.levels" => self.expr_levels = parse(key, value, "expected integer")?,
            "seed" => self.seed = parse(key, value, "expected integer")?,
            other => return Err(ConfigError::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    /// The resolved `key=value` table, one line per documented key, in the
    /// documented order.
    pub fn echo(&self) -> String {
        let join_f = |v: &[f64]| {
            v.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        let join_u = |v: &[usize]| {
            v.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        let values: Vec<(&str, String)> = vec![
            ("data.path", self.data_path.clone()),
            ("data.generator", self.data_generator.name().to_string()),
            ("data.sources", self.data_sources.to_string()),
            ("data.targets", self.data_targets.to_string()),
            ("data.events", self.data_events.to_string()),
            ("data.jitter", self.data_jitter.to_string()),
            (
                "data.label_threshold",
                self.data_label_threshold
                    .map(|v| v.to_string())
                    .unwrap_or_default(),
            ),
            ("data.seed", self.data_seed.to_string()),
            ("split.train", self.split_train.to_string()),
            ("split.val", self.split_val.to_string()),
            (
                "split.inductive_fraction",
                self.split_inductive_fraction.to_string(),
            ),
            (
                "split.inductive_seed",
                self.split_inductive_seed.to_string(),
            ),
            ("model.d_mem", self.model_d_mem.to_string()),
            ("model.d_time", self.model_d_time.to_string()),
            ("model.d_traj", self.model_d_traj.to_string()),
            ("model.d_emb", self.model_d_emb.to_string()),
            ("model.heads", self.model_heads.to_string()),
            ("model.layers", self.model_layers.to_string()),
            ("model.n_neighbors", self.model_n_neighbors.to_string()),
            ("model.mode", self.model_mode.as_str().to_string()),
            ("model.agg", self.model_agg.as_str().to_string()),
            ("te.alpha", self.te_alpha.to_string()),
            ("te.beta", self.te_beta.to_string()),
            ("train.lr", self.train_lr.to_string()),
            ("train.batch_size", self.train_batch_size.to_string()),
            ("train.n_neg", self.train_n_neg.to_string()),
            ("train.epochs", self.train_epochs.to_string()),
            ("train.patience", self.train_patience.to_string()),
            ("eval.setting", self.eval_setting.as_str().to_string()),
            ("sweep.alphas", join_f(&self.sweep_alphas)),
            ("sweep.betas", join_f(&self.sweep_betas)),
            ("sweep.dims", join_u(&self.sweep_dims)),
            ("sweep.repeats", self.sweep_repeats.to_string()),
            ("expr.pair", format!("{},{}", self.expr_pair.0, self.expr_pair.1)),
            ("expr.t", self.expr_t.to_string()),
            ("expr.levels", self.expr_levels.to_string()),
            ("seed", self.seed.to_string()),
        ];
        debug_assert_eq!(values.len(), Self::KEYS.len());
        debug_assert!(
            values
                .iter()
                .map(|(k, _)| *k)
                .eq(Self::KEYS.iter().map(|(k, _, _)| *k)),
            "echo order must match the documented key table"
        );
        let mut out = String::new();
        for (k, v) in values {
            out.push_str(&format!("{k}={v}\n"));
        }
        out
    }

    pub fn synthetic_spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            generator: self.data_generator,
            sources: self.data_sources,
            targets: self.data_targets,
            events: self.data_events,
            jitter: self.data_jitter,
            label_threshold: self.data_label_threshold,
            seed: self.data_seed,
        }
    }

    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec {
            train_fraction: self.split_train,
            val_fraction: self.split_val,
        }
    }

    pub fn model_config(&self, feat_dim: usize) -> Result<ModelConfig, ConfigError> {
        let te = TeParams::new(self.te_alpha, self.te_beta).map_err(|e| ConfigError::BadValue {
            key: "te.alpha".into(),
            value: format!("{}/{}", self.te_alpha, self.te_beta),
            why: e.to_string(),
        })?;
        Ok(ModelConfig {
            feat_dim,
            d_mem: self.model_d_mem,
            d_time: self.model_d_time,
            d_traj: self.model_d_traj,
            d_emb: self.model_d_emb,
            heads: self.model_heads,
            layers: self.model_layers,
            n_neighbors: self.model_n_neighbors,
            te,
            msg_agg: self.model_agg,
            mode: self.model_mode,
            seed: self.seed,
        })
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lr: self.train_lr,
            batch_size: self.train_batch_size,
            n_neg: self.train_n_neg,
            epochs: self.train_epochs,
            patience: self.train_patience,
            seed: self.seed,
        }
    }

    pub fn sweep_grid(&self) -> SweepGrid {
        SweepGrid {
            alphas: self.sweep_alphas.clone(),
            betas: self.sweep_betas.clone(),
            dims: self.sweep_dims.clone(),
        }
    }
}
