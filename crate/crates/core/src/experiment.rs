//! Run directories: configuration, data loading, training drivers and the
//! artifacts each run leaves behind.
//!
//! A run directory holds
//!
//! - `config.json`, the resolved [`RunConfig`]; feeding it back reproduces the run,
//! - `run_log.csv`, one row per evaluation (columns in [`RUN_LOG_COLUMNS`]),
//! - `metrics.json`, the final [`RunSummary`],
//! - `drs.json` / `drs.bin`, and `controller.json` / `controller.bin` when a
//!   controller was used.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::controller::{Controller, ControllerConfig};
use crate::data::synth::{self, SynthConfig};
use crate::data::{split_dataset, DatasetSplits, EncodedExample, Encoder, FeatureSchema, Task};
use crate::error::{Error, Result};
use crate::losses::{LossCatalog, LossHyper, LossKind};
use crate::metrics::MetricReport;
use crate::model::DrsConfig;
use crate::train::{evaluate, LogRow, TrainConfig, Trainer};

/// Fixed leading columns of `run_log.csv`. Per-candidate `alpha_<name>` and
/// `p_<name>` columns follow, then `tau` and `ms_per_step`.
pub const RUN_LOG_COLUMNS: [&str; 5] = ["step", "split", "auc", "logloss", "mse"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase")]
pub enum DataSource {
    Csv { schema: PathBuf, data: PathBuf },
    Synth(SynthConfig),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.8,
            validation: 0.1,
            test: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub data: DataSource,
    pub split: SplitRatios,
    pub model: DrsConfig,
    pub controller: ControllerConfig,
    /// Candidate names; empty means the task's default catalog.
    pub catalog: Vec<String>,
    pub loss: LossHyper,
    pub train: TrainConfig,
    pub output: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: DataSource::Synth(SynthConfig::default()),
            split: SplitRatios::default(),
            model: DrsConfig::default(),
            controller: ControllerConfig::default(),
            catalog: Vec::new(),
            loss: LossHyper::default(),
            train: TrainConfig::default(),
            output: PathBuf::from("runs/default"),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::from(e).with_path(path))?;
        serde_json::from_str(&text).map_err(|e| Error::from(e).with_path(path))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text).map_err(|e| Error::from(e).with_path(path))
    }

    /// Checks everything that can be checked without touching the data.
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.model.mlp.validate()?;
        self.controller.mlp.validate()?;
        self.loss.validate()?;
        if let DataSource::Synth(s) = &self.data {
            s.validate()?;
        }
        for name in &self.catalog {
            name.parse::<LossKind>()?;
        }
        if self.model.embedding_dim == 0 {
            return Err(Error::Config("embedding dimension must be positive".into()));
        }
        Ok(())
    }

    pub fn catalog_for(&self, task: Task) -> Result<LossCatalog> {
        if self.catalog.is_empty() {
            LossCatalog::builtin(task, &LossKind::defaults_for(task), self.loss)
        } else {
            LossCatalog::from_names(task, &self.catalog, self.loss)
        }
    }
}

/// Schema plus encoded examples for a data source.
pub fn load_data(source: &DataSource) -> Result<(FeatureSchema, Vec<EncodedExample>)> {
    match source {
        DataSource::Synth(cfg) => {
            let data = synth::generate(cfg)?;
            let examples = data.encoded();
            Ok((data.schema, examples))
        }
        DataSource::Csv { schema, data } => {
            let schema = FeatureSchema::load(schema)?;
            let examples = Encoder::new(&schema)?.read_csv(data)?;
            Ok((schema, examples))
        }
    }
}

pub fn split(cfg: &RunConfig, examples: Vec<EncodedExample>) -> Result<DatasetSplits> {
    let r = cfg.split;
    split_dataset(examples, (r.train, r.validation, r.test), cfg.train.seeds.split)
}

/// Creates `dir`, refusing to reuse a non-empty one unless `force` is set.
pub fn prepare_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        let occupied = fs::read_dir(dir).map_err(|e| Error::from(e).with_path(dir))?.next().is_some();
        if occupied && !force {
            return Err(Error::RunExists(dir.to_path_buf()));
        }
        if occupied {
            fs::remove_dir_all(dir).map_err(|e| Error::from(e).with_path(dir))?;
        }
    }
    fs::create_dir_all(dir).map_err(|e| Error::from(e).with_path(dir))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub mode: String,
    pub candidates: Vec<String>,
    pub validation: MetricReport,
    pub test: MetricReport,
    pub drs_updates: u64,
    pub controller_updates: u64,
    /// Mean training-batch selection probabilities over the whole run.
    pub mean_p: Vec<f64>,
    pub mean_alpha: Option<Vec<f64>>,
    pub frozen_controller: bool,
    pub wall_clock_s: f64,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub summary: RunSummary,
    pub history: Vec<LogRow>,
}

/// Trains from scratch and writes a complete run directory.
pub fn run_training(cfg: &RunConfig, force: bool) -> Result<RunOutcome> {
    cfg.validate()?;
    let (schema, examples) = load_data(&cfg.data)?;
    let catalog = cfg.catalog_for(schema.task)?;
    let splits = split(cfg, examples)?;
    prepare_dir(&cfg.output, force)?;
    cfg.save(&cfg.output.join("config.json"))?;
    let trainer = Trainer::new(
        cfg.train.clone(),
        &cfg.model,
        &cfg.controller,
        catalog,
        &schema.cardinalities(),
        &splits,
    )
    .map_err(|e| e.with_path(&cfg.output))?;
    drive(trainer, &cfg.output, &schema.hash())
}

/// Trains a fresh DRS under a frozen, previously trained controller.
pub fn run_transfer(controller_path: &Path, cfg: &RunConfig, force: bool) -> Result<RunOutcome> {
    cfg.validate()?;
    let controller = checkpoint::load_controller(controller_path)?.model;
    let (schema, examples) = load_data(&cfg.data)?;
    let catalog = if cfg.catalog.is_empty() {
        LossCatalog::from_names(schema.task, controller.candidates(), cfg.loss)?
    } else {
        cfg.catalog_for(schema.task)?
    };
    check_transfer(&controller, &catalog)?;
    let splits = split(cfg, examples)?;
    prepare_dir(&cfg.output, force)?;
    cfg.save(&cfg.output.join("config.json"))?;
    let trainer = Trainer::with_frozen_controller(
        cfg.train.clone(),
        &cfg.model,
        controller,
        catalog,
        &schema.cardinalities(),
        &splits,
    )
    .map_err(|e| e.with_path(&cfg.output))?;
    drive(trainer, &cfg.output, &schema.hash())
}

fn check_transfer(controller: &Controller, catalog: &LossCatalog) -> Result<()> {
    if controller.num_candidates() != catalog.len() {
        return Err(Error::Transfer(format!(
            "controller scores {} candidates but the catalog has {}",
            controller.num_candidates(),
            catalog.len()
        )));
    }
    if controller.task() != catalog.task() {
        return Err(Error::Transfer(format!(
            "controller was trained for {:?}, data is {:?}",
            controller.task(),
            catalog.task()
        )));
    }
    Ok(())
}

fn drive(mut trainer: Trainer<'_>, dir: &Path, schema_hash: &str) -> Result<RunOutcome> {
    let start = Instant::now();
    let save = |t: &Trainer<'_>| -> Result<()> {
        checkpoint::save_drs(&dir.join("drs.json"), t.drs(), Some(t.drs_optimizer()), Some(schema_hash))?;
        if let Some(c) = t.controller() {
            checkpoint::save_controller(&dir.join("controller.json"), c, t.controller_optimizer(), Some(schema_hash))?;
        }
        Ok(())
    };
    trainer.run_with(save).map_err(|e| e.with_path(dir))?;
    let wall_clock_s = start.elapsed().as_secs_f64();

    let names = trainer.catalog().names();
    let final_row = |split: &str| {
        trainer
            .history()
            .iter()
            .rev()
            .find(|r| r.split == split)
            .map(|r| r.metrics.clone())
            .expect("final evaluation logs both splits")
    };
    let summary = RunSummary {
        mode: trainer.config().mode.to_string(),
        candidates: names.clone(),
        validation: final_row("validation"),
        test: final_row("test"),
        drs_updates: trainer.step(),
        controller_updates: trainer.controller_updates(),
        mean_p: trainer.selection_totals().mean_p(),
        mean_alpha: trainer.selection_totals().mean_alpha(),
        frozen_controller: trainer.is_frozen(),
        wall_clock_s,
    };
    write_run_log(&dir.join("run_log.csv"), &names, trainer.history())?;
    let path = dir.join("metrics.json");
    fs::write(&path, serde_json::to_string_pretty(&summary)?).map_err(|e| Error::from(e).with_path(&path))?;
    let (_, _, history) = trainer.into_parts();
    Ok(RunOutcome {
        dir: dir.to_path_buf(),
        summary,
        history,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_run_log(path: &Path, names: &[String], rows: &[LogRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::from(e).with_path(path))?;
    let mut header: Vec<String> = RUN_LOG_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend(names.iter().map(|n| format!("alpha_{n}")));
    header.extend(names.iter().map(|n| format!("p_{n}")));
    header.push("tau".into());
    header.push("ms_per_step".into());
    w.write_record(&header)?;
    for row in rows {
        let mut rec = vec![
            row.step.to_string(),
            row.split.to_string(),
            opt(row.metrics.auc),
            opt(row.metrics.logloss),
            opt(row.metrics.mse),
        ];
        // Fixed modes train on one candidate; its probability is 1 and the rest 0.
        let p = if row.mean_p.len() == names.len() {
            row.mean_p.clone()
        } else {
            vec![f64::NAN; names.len()]
        };
        match &row.mean_alpha {
            Some(a) => rec.extend(a.iter().map(|x| x.to_string())),
            None => rec.extend(std::iter::repeat(String::new()).take(names.len())),
        }
        rec.extend(p.iter().map(|x| if x.is_nan() { String::new() } else { x.to_string() }));
        rec.push(row.tau.to_string());
        rec.push(row.ms_per_step.to_string());
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::from(e).with_path(path))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub frequency: u64,
    pub drs_updates: u64,
    pub controller_updates: u64,
    pub wall_clock_s: f64,
    pub validation_auc: Option<f64>,
    pub validation_logloss: Option<f64>,
    pub test_auc: Option<f64>,
    pub test_logloss: Option<f64>,
}

/// One run per update frequency under shared seeds, in `<output>/f<f>`,
/// plus a merged `<output>/sweep.csv`.
pub fn sweep_f(cfg: &RunConfig, frequencies: &[u64], force: bool) -> Result<Vec<SweepRow>> {
    if frequencies.len() < 2 {
        return Err(Error::Config("a frequency sweep needs at least two values".into()));
    }
    if !cfg.train.mode.uses_controller() {
        return Err(Error::Config(format!("mode {} has no controller to sweep", cfg.train.mode)));
    }
    let mut base = cfg.clone();
    for &f in frequencies {
        base.train.frequency = f;
        base.validate()?;
    }
    prepare_dir(&cfg.output, force)?;
    cfg.save(&cfg.output.join("config.json"))?;
    let mut rows = Vec::new();
    for &f in frequencies {
        let mut run = cfg.clone();
        run.train.frequency = f;
        run.output = cfg.output.join(format!("f{f}"));
        let s = run_training(&run, force)?.summary;
        rows.push(SweepRow {
            frequency: f,
            drs_updates: s.drs_updates,
            controller_updates: s.controller_updates,
            wall_clock_s: s.wall_clock_s,
            validation_auc: s.validation.auc,
            validation_logloss: s.validation.logloss,
            test_auc: s.test.auc,
            test_logloss: s.test.logloss,
        });
    }
    let path = cfg.output.join("sweep.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| Error::from(e).with_path(&path))?;
    for row in &rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::from(e).with_path(&path))?;
    Ok(rows)
}

/// Scores a saved DRS on a data source. The schema must match the one the
/// model was trained with.
pub fn evaluate_checkpoint(drs_path: &Path, source: &DataSource) -> Result<MetricReport> {
    let loaded = checkpoint::load_drs(drs_path)?;
    let (schema, examples) = load_data(source)?;
    if let Some(hash) = &loaded.schema_hash {
        if *hash != schema.hash() {
            return Err(Error::Data(format!(
                "schema hash {} does not match the checkpoint's {hash}",
                schema.hash()
            ))
            .with_path(drs_path));
        }
    }
    evaluate(&loaded.model, &examples)
}
