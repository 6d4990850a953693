//! Hyperparameter sweeps over the decay settings and feature width.
//!
//! The sweep crosses `alpha x beta x d`, trains each cell over the requested
//! repeats (only the model seed varies between repeats), scores test AP, and
//! emits one CSV row per cell with the mean and population standard
//! deviation across repeats.

use serde::Serialize;

use crate::graph::split::{chronological_split, SplitSpec};
use crate::graph::synthetic::SyntheticSpec;
use crate::model::{GraphContext, Model, ModelConfig};
use crate::trajectory::TeParams;

use super::eval::{evaluate_link_prediction, EvalOptions, EvalSetting};
use super::train::{train_link_prediction, TrainConfig};
use super::TaskError;

/// Aggregate of one metric over repeated runs of one configuration.
#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub setting: String,
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    pub runs: Vec<f64>,
}

impl EvalReport {
    /// Validates that every run value is a proper probability-scale metric.
    /// The spread is the population standard deviation, so a single run
    /// reports zero.
    pub fn from_runs(setting: &str, metric: &str, runs: Vec<f64>) -> Result<Self, TaskError> {
        if runs.is_empty() {
            return Err(TaskError::Invalid("report needs at least one run".into()));
        }
        if runs.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(TaskError::Invalid(format!(
                "metric {metric} outside [0, 1]: {runs:?}"
            )));
        }
        let n = runs.len() as f64;
        let mean = runs.iter().sum::<f64>() / n;
        let var = runs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Ok(Self {
            setting: setting.to_string(),
            metric: metric.to_string(),
            mean,
            std: var.sqrt(),
            runs,
        })
    }
}

#[derive(Debug, Clone)]
pub struct SweepGrid {
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
    pub dims: Vec<usize>,
}

impl Default for SweepGrid {
    fn default() -> Self {
        Self {
            alphas: vec![1.0, 2.0],
            betas: vec![0.1, 1.0],
            dims: vec![4, 12, 20, 28],
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub grid: SweepGrid,
    /// Runs per cell; the model seed is `base_seed + repeat index`.
    pub repeats: usize,
    pub base_seed: u64,
    pub data: SyntheticSpec,
    pub split: SplitSpec,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub beta: f64,
    pub d: usize,
    #[serde(flatten)]
    pub report: EvalReport,
}

/// Full cross product of the grid, in `(alpha, beta, d)` iteration order.
pub fn run_sweep(cfg: &SweepConfig) -> Result<Vec<SweepRow>, TaskError> {
    if cfg.grid.alphas.is_empty() || cfg.grid.betas.is_empty() || cfg.grid.dims.is_empty() {
        return Err(TaskError::Invalid("sweep grid must not be empty".into()));
    }
    if cfg.repeats == 0 {
        return Err(TaskError::Invalid("sweep needs at least one repeat".into()));
    }
    let log = cfg.data.generate()?;
    let split = chronological_split(&log, cfg.split)?;
    let mut rows = Vec::new();
    for &alpha in &cfg.grid.alphas {
        for &beta in &cfg.grid.betas {
            for &d in &cfg.grid.dims {
                let mut runs = Vec::with_capacity(cfg.repeats);
                for r in 0..cfg.repeats {
                    runs.push(run_cell(&log, &split, cfg, alpha, beta, d, r as u64)?);
                }
                rows.push(SweepRow {
                    alpha,
                    beta,
                    d,
                    report: EvalReport::from_runs("transductive", "ap", runs)?,
                });
            }
        }
    }
    Ok(rows)
}

fn run_cell(
    log: &crate::graph::EventLog,
    split: &crate::graph::split::ChronoSplit<'_>,
    cfg: &SweepConfig,
    alpha: f64,
    beta: f64,
    d: usize,
    repeat: u64,
) -> Result<f64, TaskError> {
    let te = TeParams::new(alpha, beta).map_err(|e| TaskError::Invalid(e.to_string()))?;
    let model_cfg = ModelConfig {
        feat_dim: log.feat_dim(),
        d_mem: d,
        d_time: d,
        d_traj: d,
        d_emb: d,
        te,
        seed: cfg.base_seed.wrapping_add(repeat),
        ..ModelConfig::default()
    };
    let mut model = Model::new(model_cfg)?;
    model.set_context(GraphContext::build(log.view()));
    let train_cfg = TrainConfig {
        seed: cfg.base_seed.wrapping_add(repeat),
        ..cfg.train.clone()
    };
    let unseen = std::collections::BTreeSet::new();
    train_link_prediction(&mut model, split.train(), split.val(), &unseen, &train_cfg)?;
    let pool = crate::graph::sampling::destination_pool(split.train());
    let metrics = evaluate_link_prediction(
        &mut model,
        split.test(),
        &EvalOptions {
            batch_size: train_cfg.batch_size,
            seed: train_cfg.seed,
            pool: &pool,
            setting: EvalSetting::Transductive,
            unseen: &unseen,
            warmup: Some(split.val()),
        },
    )?;
    Ok(metrics.ap)
}

/// Plot-ready CSV, one row per grid cell.
pub fn rows_to_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("alpha,beta,d,setting,metric,mean,std\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.alpha, r.beta, r.d, r.report.setting, r.report.metric, r.report.mean, r.report.std
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_sweep_config() -> SweepConfig {
        SweepConfig {
            grid: SweepGrid {
                alphas: vec![1.0, 2.0],
                betas: vec![0.1],
                dims: vec![4],
            },
            repeats: 1,
            base_seed: 3,
            data: SyntheticSpec {
                sources: 5,
                targets: 10,
                events: 80,
                seed: 17,
                ..SyntheticSpec::default()
            },
            split: SplitSpec::default(),
            train: TrainConfig {
                lr: 1e-3,
                batch_size: 16,
                n_neg: 1,
                epochs: 2,
                patience: 5,
                seed: 0,
            },
        }
    }

    #[test]
    fn report_statistics_and_validation() {
        let r = EvalReport::from_runs("transductive", "ap", vec![0.5, 0.7]).unwrap();
        assert!((r.mean - 0.6).abs() < 1e-15);
        assert!((r.std - 0.1).abs() < 1e-15);
        let single = EvalReport::from_runs("transductive", "ap", vec![0.9]).unwrap();
        assert_eq!(single.std, 0.0);
        assert!(EvalReport::from_runs("transductive", "ap", vec![1.2]).is_err());
        assert!(EvalReport::from_runs("transductive", "ap", vec![]).is_err());
    }

    #[test]
    fn grid_produces_the_full_cross_product_in_order() {
        let cfg = tiny_sweep_config();
        let rows = run_sweep(&cfg).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!((rows[0].alpha, rows[0].beta, rows[0].d), (1.0, 0.1, 4));
        assert_eq!((rows[1].alpha, rows[1].beta, rows[1].d), (2.0, 0.1, 4));
        for row in &rows {
            assert!((0.0..=1.0).contains(&row.report.mean));
            assert_eq!(row.report.runs.len(), 1);
        }
    }

    #[test]
    fn csv_schema_is_stable() {
        let rows = vec![SweepRow {
            alpha: 2.0,
            beta: 0.1,
            d: 4,
            report: EvalReport::from_runs("transductive", "ap", vec![0.75]).unwrap(),
        }];
        let csv = rows_to_csv(&rows);
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("alpha,beta,d,setting,metric,mean,std"));
        assert_eq!(lines.next(), Some("2,0.1,4,transductive,ap,0.75,0"));
        assert_eq!(lines.next(), None);
    }

    #[test]
    fn empty_grid_is_rejected() {
        let mut cfg = tiny_sweep_config();
        cfg.grid.alphas.clear();
        assert!(matches!(run_sweep(&cfg), Err(TaskError::Invalid(_))));
    }
}
