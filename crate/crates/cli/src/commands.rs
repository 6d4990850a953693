//! Command implementations. Every command resolves its inputs from the run
//! configuration, computes deterministically, and writes its artifacts plus
//! `config.resolved` and `hashes.txt` into the output directory, nowhere
//! else.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use tempograph_core::embedding::TrajectoryMode;
use tempograph_core::expressiveness::distinguishability_report;
use tempograph_core::graph::ingest::ingest_csv;
use tempograph_core::graph::sampling::destination_pool;
use tempograph_core::graph::split::{chronological_split, mask_inductive_nodes, ChronoSplit};
use tempograph_core::graph::synthetic::gen_symmetric_cycle;
use tempograph_core::graph::{EventLog, NodeId};
use tempograph_core::model::{GraphContext, Model};
use tempograph_core::tasks::eval::{evaluate_link_prediction, EvalOptions};
use tempograph_core::tasks::sweep::{rows_to_csv, run_sweep, SweepConfig};
use tempograph_core::tasks::train::train_link_prediction;
use tempograph_core::Tape;

use crate::config::{ConfigError, RunConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(#[from] ConfigError),
    #[error("file not found: {}", .0.display())]
    MissingFile(PathBuf),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::MissingFile(_) => 3,
            CliError::Other(_) => 1,
        }
    }
}

macro_rules! from_as_other {
    ($($ty:ty),*) => {$(
        impl From<$ty> for CliError {
            fn from(e: $ty) -> Self {
                CliError::Other(e.to_string())
            }
        }
    )*};
}

from_as_other!(
    tempograph_core::tasks::TaskError,
    tempograph_core::model::ModelError,
    tempograph_core::graph::GraphError,
    tempograph_core::expressiveness::ExprError,
    std::io::Error,
    serde_json::Error
);

/// One metrics record; the file is JSON lines, one record each.
#[derive(Serialize)]
struct MetricLine<'a> {
    run_id: &'a str,
    epoch: usize,
    split: &'a str,
    setting: &'a str,
    metric: &'a str,
    value: f64,
}

/// Twelve hex chars of the config digest: stable across reruns of the same
/// resolved configuration, distinct between different ones.
fn run_id(echo: &str, command: &str) -> String {
    let mut h = Sha256::new();
    h.update(command.as_bytes());
    h.update(echo.as_bytes());
    format!("{:x}", h.finalize())[..12].to_string()
}

/// Writes every artifact, then a `hashes.txt` listing their SHA-256 digests.
fn write_run(out: &Path, files: &[(&str, Vec<u8>)]) -> Result<(), CliError> {
    std::fs::create_dir_all(out)?;
    let mut hashes = String::new();
    for (name, bytes) in files {
        std::fs::write(out.join(name), bytes)?;
        let mut h = Sha256::new();
        h.update(bytes);
        hashes.push_str(&format!("{:x}  {name}\n", h.finalize()));
    }
    std::fs::write(out.join("hashes.txt"), hashes)?;
    Ok(())
}

fn load_log(cfg: &RunConfig) -> Result<EventLog, CliError> {
    if cfg.data_path.is_empty() {
        Ok(cfg.synthetic_spec().generate()?)
    } else {
        let path = PathBuf::from(&cfg.data_path);
        if !path.exists() {
            return Err(CliError::MissingFile(path));
        }
        Ok(ingest_csv(&path)?)
    }
}

/// Train split after optional inductive masking, plus the withheld nodes.
struct TrainInputs {
    masked: Option<EventLog>,
    unseen: BTreeSet<NodeId>,
}

impl TrainInputs {
    fn resolve(cfg: &RunConfig, split: &ChronoSplit<'_>) -> Result<Self, CliError> {
        if cfg.split_inductive_fraction > 0.0 {
            let (masked, unseen) = mask_inductive_nodes(
                split,
                cfg.split_inductive_fraction,
                cfg.split_inductive_seed,
            )?;
            Ok(Self {
                masked: Some(masked),
                unseen,
            })
        } else {
            Ok(Self {
                masked: None,
                unseen: BTreeSet::new(),
            })
        }
    }

    fn view<'a>(&'a self, split: &ChronoSplit<'a>) -> tempograph_core::graph::LogView<'a> {
        match &self.masked {
            Some(log) => log.view(),
            None => split.train(),
        }
    }
}

fn checkpoint_bytes(model: &mut Model) -> Result<Vec<u8>, CliError> {
    // Flush buffered interactions so the serialized state is closed over
    // everything streamed so far, exactly like Model::save.
    let mut scratch = Tape::new();
    model.flush(&mut scratch)?;
    Ok(model.to_container().to_bytes())
}

pub fn cmd_train(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let echo = cfg.echo();
    let id = run_id(&echo, "train");
    let log = load_log(cfg)?;
    let split = chronological_split(&log, cfg.split_spec())?;
    let inputs = TrainInputs::resolve(cfg, &split)?;

    let mut model = Model::new(cfg.model_config(log.feat_dim())?)?;
    model.set_context(GraphContext::build(log.view()));
    let outcome = train_link_prediction(
        &mut model,
        inputs.view(&split),
        split.val(),
        &inputs.unseen,
        &cfg.train_config(),
    )?;

    let mut metrics = String::new();
    let mut push = |line: MetricLine| -> Result<(), CliError> {
        metrics.push_str(&serde_json::to_string(&line)?);
        metrics.push('\n');
        Ok(())
    };
    for rec in &outcome.epochs {
        push(MetricLine {
            run_id: &id,
            epoch: rec.epoch,
            split: "train",
            setting: "transductive",
            metric: "loss",
            value: rec.train_loss,
        })?;
        push(MetricLine {
            run_id: &id,
            epoch: rec.epoch,
            split: "val",
            setting: "transductive",
            metric: "ap",
            value: rec.val_ap,
        })?;
        push(MetricLine {
            run_id: &id,
            epoch: rec.epoch,
            split: "val",
            setting: "transductive",
            metric: "auc",
            value: rec.val_auc,
        })?;
    }
    let checkpoint = checkpoint_bytes(&mut model)?;
    write_run(
        out,
        &[
            ("config.resolved", echo.into_bytes()),
            ("metrics.jsonl", metrics.into_bytes()),
            ("checkpoint.bin", checkpoint),
        ],
    )?;
    println!(
        "trained {} epochs, best val AP {:.4} at epoch {}",
        outcome.epochs.len(),
        outcome.best_val_ap,
        outcome.best_epoch
    );
    Ok(())
}

pub fn cmd_eval(cfg: &RunConfig, out: &Path, checkpoint: &Path) -> Result<(), CliError> {
    if !checkpoint.exists() {
        return Err(CliError::MissingFile(checkpoint.to_path_buf()));
    }
    let echo = cfg.echo();
    let id = run_id(&echo, "eval");
    let log = load_log(cfg)?;
    let split = chronological_split(&log, cfg.split_spec())?;
    let inputs = TrainInputs::resolve(cfg, &split)?;

    let mut model = Model::load(checkpoint)?;
    model.set_context(GraphContext::build(log.view()));
    let pool = destination_pool(inputs.view(&split));
    let metrics = evaluate_link_prediction(
        &mut model,
        split.test(),
        &EvalOptions {
            batch_size: cfg.train_batch_size,
            seed: cfg.seed,
            pool: &pool,
            setting: cfg.eval_setting,
            unseen: &inputs.unseen,
            warmup: Some(split.val()),
        },
    )?;

    let mut lines = String::new();
    for (metric, value) in [("ap", metrics.ap), ("auc", metrics.auc)] {
        lines.push_str(&serde_json::to_string(&MetricLine {
            run_id: &id,
            epoch: 0,
            split: "test",
            setting: cfg.eval_setting.as_str(),
            metric,
            value,
        })?);
        lines.push('\n');
    }
    write_run(
        out,
        &[
            ("config.resolved", echo.into_bytes()),
            ("metrics.jsonl", lines.into_bytes()),
        ],
    )?;
    println!(
        "test {} AP {:.4} AUC {:.4} over {} scores",
        cfg.eval_setting.as_str(),
        metrics.ap,
        metrics.auc,
        2 * metrics.n_scored
    );
    Ok(())
}

pub fn cmd_sweep(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let echo = cfg.echo();
    let rows = run_sweep(&SweepConfig {
        grid: cfg.sweep_grid(),
        repeats: cfg.sweep_repeats,
        base_seed: cfg.seed,
        data: cfg.synthetic_spec(),
        split: cfg.split_spec(),
        train: cfg.train_config(),
    })?;
    let csv = rows_to_csv(&rows);
    write_run(
        out,
        &[
            ("config.resolved", echo.into_bytes()),
            ("sweep.csv", csv.into_bytes()),
        ],
    )?;
    println!("swept {} cells", rows.len());
    Ok(())
}

pub fn cmd_bench_expressiveness(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let echo = cfg.echo();
    let log = gen_symmetric_cycle();
    let entries = distinguishability_report(
        &log,
        &cfg.model_config(log.feat_dim())?,
        &[
            TrajectoryMode::Disabled,
            TrajectoryMode::RawId,
            TrajectoryMode::Full,
        ],
        (NodeId(cfg.expr_pair.0), NodeId(cfg.expr_pair.1)),
        cfg.expr_t,
        cfg.expr_levels,
        cfg.train_batch_size,
    )?;
    let report = serde_json::to_vec_pretty(&entries)?;
    write_run(
        out,
        &[
            ("config.resolved", echo.into_bytes()),
            ("report.json", report),
        ],
    )?;
    for e in &entries {
        println!(
            "{}: distance {:.6e}, anonymous isomorphic {}, with payloads {}",
            e.variant, e.distance, e.anon_isomorphic, e.nonanon_isomorphic
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct IngestSummary {
    events: usize,
    num_nodes: usize,
    feat_dim: usize,
    t_min: f64,
    t_max: f64,
    labeled_events: usize,
}

pub fn cmd_ingest(cfg: &RunConfig, out: &Path, path: &Path) -> Result<(), CliError> {
    if !path.exists() {
        return Err(CliError::MissingFile(path.to_path_buf()));
    }
    let log = ingest_csv(path)?;
    let summary = IngestSummary {
        events: log.len(),
        num_nodes: log.num_nodes(),
        feat_dim: log.feat_dim(),
        t_min: log.events().first().map(|e| e.t).unwrap_or(0.0),
        t_max: log.events().last().map(|e| e.t).unwrap_or(0.0),
        labeled_events: log.events().iter().filter(|e| e.label.is_some()).count(),
    };
    let json = serde_json::to_vec_pretty(&summary)?;
    write_run(
        out,
        &[
            ("config.resolved", cfg.echo().into_bytes()),
            ("ingest.json", json),
        ],
    )?;
    println!(
        "ingested {} events over {} nodes (features: {})",
        summary.events, summary.num_nodes, summary.feat_dim
    );
    Ok(())
}
