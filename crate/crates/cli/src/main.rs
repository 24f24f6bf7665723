use std::path::{Path, PathBuf};
use std::process::ExitCode;

use autoloss::controller::InputMode;
use autoloss::data::synth::{self, SynthConfig};
use autoloss::data::Task;
use autoloss::experiment::{self, DataSource, RunConfig};
use autoloss::model::ModelKind;
use autoloss::train::{LoopOrder, Seeds, SelectionMode};
use autoloss::{Error, ErrorClass};
use clap::{Args, Parser, Subcommand};

/// Loss-function search for CTR-style recommender models.
///
/// Exit codes: 0 success, 2 configuration error, 3 data error,
/// 4 numeric error, 5 I/O error.
#[derive(Parser)]
#[command(name = "autoloss", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a planted-signal synthetic dataset (data.csv + schema.json).
    Synth(SynthArgs),
    /// Train a DRS from scratch and write a run directory.
    Train(RunArgs),
    /// Score a saved DRS checkpoint on a dataset.
    Eval(EvalArgs),
    /// Train a fresh DRS under a frozen, previously trained controller.
    Transfer {
        /// Controller checkpoint (controller.json in a run directory).
        #[arg(long)]
        controller: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
    /// One run per controller update frequency, plus a merged sweep.csv.
    SweepF {
        /// Comma-separated update frequencies, e.g. 1,3,5,7,9,12,15.
        #[arg(long, value_delimiter = ',', required = true)]
        frequencies: Vec<u64>,
        #[command(flatten)]
        run: RunArgs,
    },
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 8)]
    fields: usize,
    /// One value for every field, or one per field (comma-separated).
    #[arg(long, value_delimiter = ',', default_value = "32")]
    cardinalities: Vec<usize>,
    #[arg(long, default_value_t = 50_000)]
    count: usize,
    /// binary, regression, or multiclass:<k>
    #[arg(long, default_value = "binary", value_parser = parse_task)]
    task: Task,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 4)]
    rank: usize,
    #[arg(long, default_value_t = 0.0)]
    label_noise: f64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct DataArgs {
    /// Directory holding data.csv and schema.json.
    #[arg(long, conflicts_with_all = ["schema", "data"])]
    data_dir: Option<PathBuf>,
    #[arg(long, requires = "data")]
    schema: Option<PathBuf>,
    #[arg(long, requires = "schema")]
    data: Option<PathBuf>,
}

impl DataArgs {
    fn source(&self) -> Option<DataSource> {
        if let Some(dir) = &self.data_dir {
            return Some(DataSource::Csv {
                schema: dir.join("schema.json"),
                data: dir.join("data.csv"),
            });
        }
        match (&self.schema, &self.data) {
            (Some(schema), Some(data)) => Some(DataSource::Csv {
                schema: schema.clone(),
                data: data.clone(),
            }),
            _ => None,
        }
    }
}

/// Flags override the matching fields of `--config` (or of the defaults).
#[derive(Args)]
struct RunArgs {
    /// JSON run configuration, e.g. a config.json from an earlier run.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    data: DataArgs,
    /// Run directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replace an existing run directory.
    #[arg(long)]
    force: bool,
    /// deepfm or ipnn
    #[arg(long)]
    model: Option<ModelKind>,
    #[arg(long)]
    embedding_dim: Option<usize>,
    /// Comma-separated candidate losses, e.g. focal,KL,hinge,CE
    #[arg(long, value_delimiter = ',')]
    catalog: Option<Vec<String>>,
    /// autoloss, al1, al2, or fixed:<loss>
    #[arg(long)]
    mode: Option<SelectionMode>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// DRS updates per controller update.
    #[arg(long)]
    frequency: Option<u64>,
    /// Virtual-step size for the second-order controller gradient (0 = first order).
    #[arg(long)]
    xi: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    controller_lr: Option<f64>,
    /// y_and_pred or pred_only
    #[arg(long)]
    controller_input: Option<InputMode>,
    /// drs_first or controller_first
    #[arg(long, value_parser = parse_order)]
    order: Option<LoopOrder>,
    /// Base seed; the split/init/shuffle/dropout/gumbel streams use base..base+4.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    eval_every: Option<u64>,
    #[arg(long)]
    checkpoint_every: Option<u64>,
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig, Error> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(source) = self.data.source() {
            cfg.data = source;
        }
        if let Some(out) = &self.out {
            cfg.output = out.clone();
        }
        if let Some(v) = self.model {
            cfg.model.kind = v;
        }
        if let Some(v) = self.embedding_dim {
            cfg.model.embedding_dim = v;
        }
        if let Some(v) = &self.catalog {
            cfg.catalog = v.clone();
        }
        let t = &mut cfg.train;
        if let Some(v) = &self.mode {
            t.mode = v.clone();
        }
        if let Some(v) = self.steps {
            t.steps = v;
        }
        if let Some(v) = self.batch_size {
            t.batch_size = v;
        }
        if let Some(v) = self.frequency {
            t.frequency = v;
        }
        if let Some(v) = self.xi {
            t.xi = v;
        }
        if let Some(v) = self.lr {
            t.drs_adam.lr = v;
        }
        if let Some(v) = self.controller_lr {
            t.controller_adam.lr = v;
        }
        if let Some(v) = self.order {
            t.order = v;
        }
        if let Some(v) = self.seed {
            t.seeds = Seeds::from_base(v);
        }
        if let Some(v) = self.eval_every {
            t.eval_every = v;
        }
        if let Some(v) = self.checkpoint_every {
            t.checkpoint_every = v;
        }
        if let Some(v) = self.controller_input {
            cfg.controller.input = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct EvalArgs {
    /// DRS checkpoint (drs.json in a run directory).
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    data: DataArgs,
}

fn parse_task(s: &str) -> Result<Task, String> {
    match s.to_ascii_lowercase().as_str() {
        "binary" => Ok(Task::Binary),
        "regression" => Ok(Task::Regression),
        other => other
            .strip_prefix("multiclass:")
            .and_then(|k| k.parse().ok())
            .map(|classes| Task::Multiclass { classes })
            .ok_or_else(|| format!("unknown task {s:?} (binary, regression, multiclass:<k>)")),
    }
}

fn parse_order(s: &str) -> Result<LoopOrder, String> {
    match s {
        "drs_first" => Ok(LoopOrder::DrsFirst),
        "controller_first" => Ok(LoopOrder::ControllerFirst),
        _ => Err(format!("unknown loop order {s:?} (drs_first, controller_first)")),
    }
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<(), Error> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn synth_cmd(a: &SynthArgs) -> Result<(), Error> {
    let cfg = SynthConfig {
        fields: a.fields,
        cardinalities: a.cardinalities.clone(),
        count: a.count,
        task: a.task,
        seed: a.seed,
        rank: a.rank,
        label_noise: a.label_noise,
        ..SynthConfig::default()
    };
    let data = synth::generate(&cfg)?;
    experiment::prepare_dir(&a.out, a.force)?;
    data.write_to_dir(&a.out)?;
    eprintln!("wrote {} examples to {}", data.len(), a.out.display());
    Ok(())
}

fn report_run(dir: &Path, summary: &experiment::RunSummary) -> Result<(), Error> {
    eprintln!("run written to {}", dir.display());
    print_json(summary)
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Synth(a) => synth_cmd(&a),
        Command::Train(a) => {
            let out = experiment::run_training(&a.resolve()?, a.force)?;
            report_run(&out.dir, &out.summary)
        }
        Command::Transfer { controller, run } => {
            let out = experiment::run_transfer(&controller, &run.resolve()?, run.force)?;
            report_run(&out.dir, &out.summary)
        }
        Command::SweepF { frequencies, run } => {
            let cfg = run.resolve()?;
            let rows = experiment::sweep_f(&cfg, &frequencies, run.force)?;
            eprintln!("sweep written to {}", cfg.output.join("sweep.csv").display());
            print_json(&rows)
        }
        Command::Eval(a) => {
            let source = a
                .data
                .source()
                .ok_or_else(|| Error::Config("eval needs --data-dir or --schema with --data".into()))?;
            print_json(&experiment::evaluate_checkpoint(&a.checkpoint, &source)?)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.class() {
                ErrorClass::Config => 2,
                ErrorClass::Data => 3,
                ErrorClass::Numeric => 4,
                ErrorClass::Io => 5,
            })
        }
    }
}
