//! Alternating bi-level training of the recommender (W) and the loss
//! controller (V).
//!
//! Each DRS update draws a training batch, scores every candidate loss,
//! weights them with the controller's selection probabilities and descends
//! on W only. Every `f` DRS updates the controller takes one step on a
//! validation batch, descending on V only. With `ξ > 0` the controller sees
//! the DRS after a virtual SGD step on a fresh training batch; that step is
//! never committed.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::controller::{
    column_means, gumbel_softmax, gumbel_softmax_backward, sample_gumbel, weighted_loss, Controller,
    ControllerConfig, TemperatureSchedule,
};
use crate::data::{Batch, BatchIterator, DatasetSplits, EncodedExample};
use crate::error::{Error, Result};
use crate::kernel::{Mode, ParamSet, Parameter, Tensor};
use crate::losses::{Builtin, CandidateLoss, LossCatalog, LossKind};
use crate::metrics::MetricReport;
use crate::model::{DrsConfig, DrsModel};
use crate::optim::{Adam, AdamConfig};

/// How selection probabilities `p` are produced.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum SelectionMode {
    /// Controller `α` through Gumbel-softmax.
    AutoLoss,
    /// Uniform `p = 1/n`, no controller.
    Al1,
    /// Controller `α` used directly, no Gumbel noise.
    Al2,
    /// A single loss from the catalog.
    Fixed(String),
}

impl SelectionMode {
    pub fn uses_controller(&self) -> bool {
        matches!(self, SelectionMode::AutoLoss | SelectionMode::Al2)
    }
}

impl FromStr for SelectionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        match lower.as_str() {
            "autoloss" => Ok(SelectionMode::AutoLoss),
            "al1" => Ok(SelectionMode::Al1),
            "al2" => Ok(SelectionMode::Al2),
            _ if lower.starts_with("fixed:") && s.len() > 6 => Ok(SelectionMode::Fixed(s[6..].to_string())),
            _ if lower.starts_with("fixed(") && lower.ends_with(')') && s.len() > 7 => {
                Ok(SelectionMode::Fixed(s[6..s.len() - 1].to_string()))
            }
            _ => Err(Error::Config(format!(
                "unknown mode {s:?} (expected autoloss, al1, al2 or fixed:<loss>)"
            ))),
        }
    }
}

impl fmt::Display for SelectionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SelectionMode::AutoLoss => f.write_str("autoloss"),
            SelectionMode::Al1 => f.write_str("al1"),
            SelectionMode::Al2 => f.write_str("al2"),
            SelectionMode::Fixed(name) => write!(f, "fixed:{name}"),
        }
    }
}

impl TryFrom<String> for SelectionMode {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<SelectionMode> for String {
    fn from(m: SelectionMode) -> String {
        m.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoopOrder {
    /// `f` DRS updates, then one controller update.
    DrsFirst,
    /// One controller update, then `f` DRS updates.
    ControllerFirst,
}

/// Independent seeds for every random stream of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub split: u64,
    pub init: u64,
    pub shuffle: u64,
    pub dropout: u64,
    pub gumbel: u64,
}

impl Seeds {
    pub fn from_base(base: u64) -> Self {
        Seeds {
            split: base,
            init: base.wrapping_add(1),
            shuffle: base.wrapping_add(2),
            dropout: base.wrapping_add(3),
            gumbel: base.wrapping_add(4),
        }
    }
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds::from_base(0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// Total DRS updates.
    pub steps: u64,
    pub drs_adam: AdamConfig,
    pub controller_adam: AdamConfig,
    /// DRS updates per controller update.
    pub frequency: u64,
    pub mode: SelectionMode,
    /// Virtual-step size; 0 is the first-order scheme.
    pub xi: f64,
    pub order: LoopOrder,
    pub temperature: TemperatureSchedule,
    /// Test-split evaluation cadence in DRS steps (0 = only at the end).
    pub eval_every: u64,
    /// Checkpoint cadence in DRS steps (0 = only at the end).
    pub checkpoint_every: u64,
    pub seeds: Seeds,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 256,
            steps: 5000,
            drs_adam: AdamConfig::default(),
            controller_adam: AdamConfig::default(),
            frequency: 7,
            mode: SelectionMode::AutoLoss,
            xi: 0.0,
            order: LoopOrder::DrsFirst,
            temperature: TemperatureSchedule::default(),
            eval_every: 500,
            checkpoint_every: 0,
            seeds: Seeds::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        if self.frequency == 0 {
            return bad("controller frequency must be at least 1".into());
        }
        if !(self.xi >= 0.0) || !self.xi.is_finite() {
            return bad(format!("virtual step ξ must be ≥ 0, got {}", self.xi));
        }
        self.drs_adam.validate()?;
        self.controller_adam.validate()?;
        self.temperature.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Drs,
    Controller,
}

/// Running sums of per-candidate `α` and `p` over training batches.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SelectionStats {
    pub alpha_sum: Vec<f64>,
    pub p_sum: Vec<f64>,
    pub batches: u64,
}

impl SelectionStats {
    fn new(n: usize, with_alpha: bool) -> Self {
        SelectionStats {
            alpha_sum: if with_alpha { vec![0.0; n] } else { Vec::new() },
            p_sum: vec![0.0; n],
            batches: 0,
        }
    }

    fn record(&mut self, alpha: Option<&[f64]>, p: &[f64]) {
        if let Some(a) = alpha {
            self.alpha_sum.iter_mut().zip(a).for_each(|(s, v)| *s += v);
        }
        self.p_sum.iter_mut().zip(p).for_each(|(s, v)| *s += v);
        self.batches += 1;
    }

    pub fn mean_alpha(&self) -> Option<Vec<f64>> {
        (!self.alpha_sum.is_empty() && self.batches > 0)
            .then(|| self.alpha_sum.iter().map(|s| s / self.batches as f64).collect())
    }

    pub fn mean_p(&self) -> Vec<f64> {
        let n = self.batches.max(1) as f64;
        self.p_sum.iter().map(|s| s / n).collect()
    }

    fn reset(&mut self) {
        self.alpha_sum.iter_mut().for_each(|v| *v = 0.0);
        self.p_sum.iter_mut().for_each(|v| *v = 0.0);
        self.batches = 0;
    }
}

/// One periodic evaluation row.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub step: u64,
    pub split: &'static str,
    pub metrics: MetricReport,
    /// Mean `α` per candidate over training batches since the previous row.
    pub mean_alpha: Option<Vec<f64>>,
    /// Mean `p` per candidate over training batches since the previous row.
    pub mean_p: Vec<f64>,
    pub tau: f64,
    pub ms_per_step: f64,
}

/// Outcome of one DRS update.
#[derive(Debug, Clone, PartialEq)]
pub struct DrsStep {
    pub loss: f64,
    pub mean_p: Vec<f64>,
    pub mean_alpha: Option<Vec<f64>>,
}

pub struct Trainer<'a> {
    cfg: TrainConfig,
    catalog: LossCatalog,
    drs: DrsModel,
    drs_opt: Adam,
    controller: Option<Controller>,
    controller_opt: Option<Adam>,
    frozen: bool,
    splits: &'a DatasetSplits,
    train_iter: BatchIterator<'a>,
    val_iter: BatchIterator<'a>,
    virtual_iter: BatchIterator<'a>,
    dropout_rng: ChaCha8Rng,
    gumbel_rng: ChaCha8Rng,
    step: u64,
    controller_updates: u64,
    trace: Vec<Phase>,
    window: SelectionStats,
    total: SelectionStats,
    history: Vec<LogRow>,
    last_log: (u64, Instant),
}

impl<'a> Trainer<'a> {
    /// Builds a fresh DRS (and controller, when the mode needs one) from the
    /// init seed. The DRS init does not depend on the mode.
    pub fn new(
        cfg: TrainConfig,
        drs_cfg: &DrsConfig,
        controller_cfg: &ControllerConfig,
        catalog: LossCatalog,
        cardinalities: &[usize],
        splits: &'a DatasetSplits,
    ) -> Result<Self> {
        cfg.validate()?;
        drs_cfg.mlp.validate()?;
        let task = catalog.task();
        let mut init = ChaCha8Rng::seed_from_u64(cfg.seeds.init);
        let drs = DrsModel::new(drs_cfg, task, cardinalities, &mut init)?;
        let controller = if cfg.mode.uses_controller() {
            Some(Controller::new(controller_cfg, task, catalog.names(), &mut init)?)
        } else {
            None
        };
        Self::assemble(cfg, catalog, drs, controller, false, splits)
    }

    /// Fresh DRS trained under a fixed, pre-trained controller.
    pub fn with_frozen_controller(
        cfg: TrainConfig,
        drs_cfg: &DrsConfig,
        controller: Controller,
        catalog: LossCatalog,
        cardinalities: &[usize],
        splits: &'a DatasetSplits,
    ) -> Result<Self> {
        cfg.validate()?;
        if !cfg.mode.uses_controller() {
            return Err(Error::Transfer(format!("mode {} does not use a controller", cfg.mode)));
        }
        if controller.num_candidates() != catalog.len() {
            return Err(Error::Transfer(format!(
                "controller scores {} candidates but the catalog has {}",
                controller.num_candidates(),
                catalog.len()
            )));
        }
        if controller.candidates() != catalog.names().as_slice() {
            return Err(Error::Transfer(format!(
                "controller candidates {:?} differ from catalog {:?}",
                controller.candidates(),
                catalog.names()
            )));
        }
        if controller.task() != catalog.task() {
            return Err(Error::Transfer(format!(
                "controller was trained for {:?}, not {:?}",
                controller.task(),
                catalog.task()
            )));
        }
        let mut init = ChaCha8Rng::seed_from_u64(cfg.seeds.init);
        let drs = DrsModel::new(drs_cfg, catalog.task(), cardinalities, &mut init)?;
        Self::assemble(cfg, catalog, drs, Some(controller), true, splits)
    }

    fn assemble(
        cfg: TrainConfig,
        catalog: LossCatalog,
        drs: DrsModel,
        controller: Option<Controller>,
        frozen: bool,
        splits: &'a DatasetSplits,
    ) -> Result<Self> {
        let catalog = match &cfg.mode {
            SelectionMode::Fixed(name) => match catalog.position(name) {
                Some(j) => catalog.select(j),
                None => {
                    let kind: LossKind = name.parse()?;
                    LossCatalog::new(catalog.task(), vec![Arc::new(Builtin::new(kind)) as Arc<dyn CandidateLoss>])?
                }
            },
            _ => catalog,
        };
        if cfg.mode.uses_controller() && catalog.len() < 2 {
            return Err(Error::Config("loss search needs at least 2 candidates".into()));
        }
        if splits.validation.is_empty() {
            return Err(Error::Config("validation split is empty".into()));
        }
        let b = cfg.batch_size;
        let seeds = cfg.seeds;
        let train_iter = BatchIterator::new(&splits.train, b, seeds.shuffle, true)?;
        let val_iter = BatchIterator::new(&splits.validation, b, seeds.shuffle.wrapping_add(1), true)?;
        let virtual_iter = BatchIterator::new(&splits.train, b, seeds.shuffle.wrapping_add(2), true)?;
        let drs_opt = Adam::new(cfg.drs_adam, &drs);
        let controller_opt = controller.as_ref().map(|c| Adam::new(cfg.controller_adam, c));
        let n = catalog.len();
        let with_alpha = controller.is_some();
        Ok(Trainer {
            catalog,
            drs,
            drs_opt,
            controller,
            controller_opt,
            frozen,
            splits,
            train_iter,
            val_iter,
            virtual_iter,
            dropout_rng: ChaCha8Rng::seed_from_u64(seeds.dropout),
            gumbel_rng: ChaCha8Rng::seed_from_u64(seeds.gumbel),
            step: 0,
            controller_updates: 0,
            trace: Vec::new(),
            window: SelectionStats::new(n, with_alpha),
            total: SelectionStats::new(n, with_alpha),
            history: Vec::new(),
            last_log: (0, Instant::now()),
            cfg,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn catalog(&self) -> &LossCatalog {
        &self.catalog
    }

    pub fn drs(&self) -> &DrsModel {
        &self.drs
    }

    pub fn drs_optimizer(&self) -> &Adam {
        &self.drs_opt
    }

    pub fn controller(&self) -> Option<&Controller> {
        self.controller.as_ref()
    }

    pub fn controller_optimizer(&self) -> Option<&Adam> {
        self.controller_opt.as_ref()
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn controller_updates(&self) -> u64 {
        self.controller_updates
    }

    pub fn trace(&self) -> &[Phase] {
        &self.trace
    }

    pub fn history(&self) -> &[LogRow] {
        &self.history
    }

    /// Selection statistics over every DRS update so far.
    pub fn selection_totals(&self) -> &SelectionStats {
        &self.total
    }

    pub fn tau(&self) -> f64 {
        self.cfg.temperature.at(self.step)
    }

    fn trains_controller(&self) -> bool {
        self.controller.is_some() && !self.frozen
    }

    /// One descent step on W. V is never touched.
    pub fn drs_update(&mut self, batch: &Batch) -> Result<DrsStep> {
        let tau = self.tau();
        let result = train_loss(
            &mut self.drs,
            batch,
            &self.catalog,
            &self.cfg.mode,
            self.controller.as_ref(),
            Streams {
                dropout: &mut self.dropout_rng,
                gumbel: &mut self.gumbel_rng,
            },
            tau,
        );
        let (loss, p, alpha) = match result {
            Ok(v) => v,
            Err(e) => {
                self.drs.zero_grads();
                return Err(e);
            }
        };
        self.drs_opt.step(&mut self.drs)?;
        let mean_p = column_means(&p);
        let mean_alpha = alpha.as_ref().map(column_means);
        self.window.record(mean_alpha.as_deref(), &mean_p);
        self.total.record(mean_alpha.as_deref(), &mean_p);
        self.step += 1;
        self.trace.push(Phase::Drs);
        Ok(DrsStep {
            loss,
            mean_p,
            mean_alpha,
        })
    }

    /// One descent step on V from a validation batch. Returns the
    /// validation loss. With `ξ = 0`, W is never touched.
    pub fn controller_update(&mut self, val_batch: &Batch) -> Result<f64> {
        if !self.trains_controller() {
            return Err(Error::Config("this run has no trainable controller".into()));
        }
        let tau = self.tau();
        let pred = if self.cfg.xi > 0.0 {
            let batch = self.virtual_iter.next().expect("cyclic iterator");
            let mut shadow = self.drs.clone();
            shadow.zero_grads();
            train_loss(
                &mut shadow,
                &batch,
                &self.catalog,
                &self.cfg.mode,
                self.controller.as_ref(),
                Streams {
                    dropout: &mut self.dropout_rng,
                    gumbel: &mut self.gumbel_rng,
                },
                tau,
            )?;
            let xi = self.cfg.xi;
            shadow.visit_mut(&mut |p: &mut Parameter| {
                for (w, g) in p.value.data_mut().iter_mut().zip(p.grad.data()) {
                    *w -= xi * g;
                }
                p.zero_grad();
            });
            shadow.predict(val_batch)?
        } else {
            self.drs.predict(val_batch)?
        };
        let losses = self.catalog.evaluate(&val_batch.labels, &pred)?;
        let mode = self.cfg.mode.clone();
        let controller = self.controller.as_mut().expect("checked above");
        let (alpha, cache) = controller.forward(&val_batch.labels, &pred, &mut Mode::Train(&mut self.dropout_rng))?;
        let (p, noise) = match mode {
            SelectionMode::AutoLoss => {
                let g = sample_gumbel(alpha.shape(), &mut self.gumbel_rng);
                (gumbel_softmax(&alpha, &g, tau)?, true)
            }
            _ => (alpha.clone(), false),
        };
        let w = weighted_loss(&p, &losses)?;
        if !w.value.is_finite() {
            return Err(Error::Numeric(format!("validation loss is {} at step {}", w.value, self.step)));
        }
        let d_log_alpha = if noise {
            gumbel_softmax_backward(&p, &w.grad_p, tau)?
        } else {
            let mut d = w.grad_p.clone();
            d.data_mut().iter_mut().zip(alpha.data()).for_each(|(g, a)| *g *= a);
            d
        };
        controller.update_running_stats(&cache);
        controller.backward_log_alpha(cache, &d_log_alpha)?;
        self.controller_opt.as_mut().expect("paired with controller").step(controller)?;
        self.controller_updates += 1;
        self.trace.push(Phase::Controller);
        Ok(w.value)
    }

    /// One loop iteration: a DRS update plus, every `f` DRS updates, a
    /// controller update (after or before, per the loop order).
    pub fn iterate(&mut self) -> Result<()> {
        let f = self.cfg.frequency;
        let ctrl = self.trains_controller();
        if ctrl && self.cfg.order == LoopOrder::ControllerFirst && self.step % f == 0 {
            let vb = self.val_iter.next().expect("cyclic iterator");
            self.controller_update(&vb)?;
        }
        let batch = self.train_iter.next().expect("cyclic iterator");
        self.drs_update(&batch)?;
        if ctrl && self.cfg.order == LoopOrder::DrsFirst && self.step % f == 0 {
            let vb = self.val_iter.next().expect("cyclic iterator");
            self.controller_update(&vb)?;
        }
        Ok(())
    }

    pub fn run(&mut self) -> Result<()> {
        self.run_with(|_| Ok(()))
    }

    /// Runs to the step budget. `checkpoint` is called at the configured
    /// cadence and after the final step; a failing step returns before the
    /// next call, so the last successful checkpoint survives.
    pub fn run_with(&mut self, mut checkpoint: impl FnMut(&Self) -> Result<()>) -> Result<()> {
        self.last_log = (self.step, Instant::now());
        while self.step < self.cfg.steps {
            self.iterate()?;
            if self.cfg.eval_every > 0 && self.step % self.cfg.eval_every == 0 && self.step < self.cfg.steps {
                self.log_eval(false)?;
            }
            if self.cfg.checkpoint_every > 0 && self.step % self.cfg.checkpoint_every == 0 && self.step < self.cfg.steps {
                checkpoint(self)?;
            }
        }
        self.log_eval(true)?;
        checkpoint(self)
    }

    fn log_eval(&mut self, last: bool) -> Result<()> {
        let (since, at) = self.last_log;
        let steps = (self.step - since).max(1);
        let ms = at.elapsed().as_secs_f64() * 1e3 / steps as f64;
        let tau = self.tau();
        let mean_alpha = self.window.mean_alpha();
        let mean_p = self.window.mean_p();
        let splits: &[(&'static str, &[EncodedExample])] = if last {
            &[("validation", &self.splits.validation), ("test", &self.splits.test)]
        } else {
            &[("test", &self.splits.test)]
        };
        for &(name, examples) in splits {
            let metrics = evaluate(&self.drs, examples)?;
            self.history.push(LogRow {
                step: self.step,
                split: name,
                metrics,
                mean_alpha: mean_alpha.clone(),
                mean_p: mean_p.clone(),
                tau,
                ms_per_step: ms,
            });
        }
        self.window.reset();
        self.last_log = (self.step, Instant::now());
        Ok(())
    }

    pub fn into_parts(self) -> (DrsModel, Option<Controller>, Vec<LogRow>) {
        (self.drs, self.controller, self.history)
    }
}

struct Streams<'r> {
    dropout: &'r mut ChaCha8Rng,
    gumbel: &'r mut ChaCha8Rng,
}

/// Selection probabilities for a batch whose predictions are `pred`, plus
/// `α` when a controller produced them. The controller runs in eval mode.
fn selection(
    mode: &SelectionMode,
    controller: Option<&Controller>,
    n: usize,
    labels: &[f64],
    pred: &Tensor,
    gumbel: &mut ChaCha8Rng,
    tau: f64,
) -> Result<(Tensor, Option<Tensor>)> {
    let b_n = labels.len();
    match (mode, controller) {
        (SelectionMode::Fixed(_), _) => Ok((Tensor::filled(&[b_n, 1], 1.0), None)),
        (SelectionMode::Al1, _) => Ok((Tensor::filled(&[b_n, n], 1.0 / n as f64), None)),
        (SelectionMode::Al2, Some(c)) => {
            let (alpha, _) = c.forward(labels, pred, &mut Mode::Eval)?;
            Ok((alpha.clone(), Some(alpha)))
        }
        (SelectionMode::AutoLoss, Some(c)) => {
            let (alpha, _) = c.forward(labels, pred, &mut Mode::Eval)?;
            let g = sample_gumbel(alpha.shape(), gumbel);
            Ok((gumbel_softmax(&alpha, &g, tau)?, Some(alpha)))
        }
        _ => Err(Error::Config(format!("mode {mode} needs a controller"))),
    }
}

/// Weighted training loss of `model` on `batch`, with its gradient
/// accumulated into `model` and its running statistics updated.
fn train_loss(
    model: &mut DrsModel,
    batch: &Batch,
    catalog: &LossCatalog,
    mode: &SelectionMode,
    controller: Option<&Controller>,
    streams: Streams<'_>,
    tau: f64,
) -> Result<(f64, Tensor, Option<Tensor>)> {
    let (pred, cache) = model.forward(batch, &mut Mode::Train(streams.dropout))?;
    let losses = catalog.evaluate(&batch.labels, &pred)?;
    let (p, alpha) = selection(mode, controller, catalog.len(), &batch.labels, &pred, streams.gumbel, tau)?;
    let w = weighted_loss(&p, &losses)?;
    if !w.value.is_finite() {
        return Err(Error::Numeric(format!("training loss is {}", w.value)));
    }
    let d_pred = losses.pred_grad(&w.grad_losses)?;
    model.update_running_stats(&cache);
    model.backward(cache, &d_pred)?;
    Ok((w.value, p, alpha))
}

/// Eval-mode metrics of `model` over `examples`.
pub fn evaluate(model: &DrsModel, examples: &[EncodedExample]) -> Result<MetricReport> {
    let preds = predict_all(model, examples)?;
    let labels: Vec<f64> = examples.iter().map(|e| e.label).collect();
    MetricReport::compute(model.task(), &labels, &preds)
}

pub fn predict_all(model: &DrsModel, examples: &[EncodedExample]) -> Result<Tensor> {
    let out = model.task().output_dim();
    let mut data = Vec::with_capacity(examples.len() * out);
    for batch in BatchIterator::sequential(examples, 2048)? {
        data.extend_from_slice(model.predict(&batch)?.data());
    }
    Tensor::new(vec![examples.len(), out], data)
}
