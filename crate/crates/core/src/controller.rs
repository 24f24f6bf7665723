//! Loss-selection controller and the Gumbel-softmax relaxation.

use std::fmt;
use std::str::FromStr;

use rand::distributions::Open01;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Task;
use crate::error::{Error, Result};
use crate::kernel::layers::{self, AffineCache, BranchHasher};
use crate::kernel::{Mode, ParamSet, Parameter, Tensor};
use crate::losses::{encode_target, CandidateLossMatrix};
use crate::mlp::{glorot_uniform, Mlp, MlpCache, MlpConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputMode {
    /// Encoded label concatenated with the prediction.
    YAndPred,
    PredOnly,
}

impl FromStr for InputMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "y_and_pred" => Ok(InputMode::YAndPred),
            "pred_only" => Ok(InputMode::PredOnly),
            other => Err(Error::Config(format!(
                "unknown controller input mode {other:?} (expected y_and_pred or pred_only)"
            ))),
        }
    }
}

impl fmt::Display for InputMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InputMode::YAndPred => "y_and_pred",
            InputMode::PredOnly => "pred_only",
        })
    }
}

/// Width of the label encoding fed to the controller.
pub fn label_width(task: Task) -> usize {
    match task {
        Task::Regression => 1,
        _ => task.classes().unwrap_or(2),
    }
}

pub fn input_width(task: Task, mode: InputMode) -> usize {
    let pred = task.output_dim();
    match mode {
        InputMode::YAndPred => label_width(task) + pred,
        InputMode::PredOnly => pred,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerConfig {
    pub input: InputMode,
    pub mlp: MlpConfig,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig {
            input: InputMode::YAndPred,
            mlp: MlpConfig::default(),
        }
    }
}

/// MLP mapping `(y, ŷ)` to per-example probabilities `α` over `n` candidates.
#[derive(Debug, Clone, PartialEq)]
pub struct Controller {
    config: ControllerConfig,
    task: Task,
    input: InputMode,
    candidates: Vec<String>,
    mlp: Mlp,
    head_weight: Parameter,
    head_bias: Parameter,
}

#[derive(Debug)]
pub struct ControllerCache {
    mlp: MlpCache,
    head: AffineCache,
    alpha: Tensor,
}

impl ControllerCache {
    pub fn alpha(&self) -> &Tensor {
        &self.alpha
    }

    pub fn hash_branches(&self, hasher: &mut BranchHasher) {
        self.mlp.hash_branches(hasher);
    }
}

impl Controller {
    pub fn new<R: Rng + ?Sized>(cfg: &ControllerConfig, task: Task, candidates: Vec<String>, rng: &mut R) -> Result<Self> {
        if candidates.len() < 2 {
            return Err(Error::Config(format!(
                "controller needs at least 2 candidate losses, got {}",
                candidates.len()
            )));
        }
        let mlp = Mlp::new("controller", input_width(task, cfg.input), &cfg.mlp, rng)?;
        let n = candidates.len();
        Ok(Controller {
            config: cfg.clone(),
            task,
            input: cfg.input,
            head_weight: Parameter::new("controller.head.weight", glorot_uniform(rng, mlp.output_dim(), n)),
            head_bias: Parameter::new("controller.head.bias", Tensor::zeros(&[n])),
            candidates,
            mlp,
        })
    }

    pub fn config(&self) -> &ControllerConfig {
        &self.config
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn input_mode(&self) -> InputMode {
        self.input
    }

    pub fn candidates(&self) -> &[String] {
        &self.candidates
    }

    pub fn num_candidates(&self) -> usize {
        self.candidates.len()
    }

    pub fn encode_input(&self, labels: &[f64], pred: &Tensor) -> Result<Tensor> {
        let out = self.task.output_dim();
        pred.expect_shape("controller input", &[labels.len(), out])?;
        if self.input == InputMode::PredOnly {
            return Ok(pred.clone());
        }
        let w = label_width(self.task);
        let mut data = Vec::with_capacity(labels.len() * (w + out));
        let mut y = vec![0.0; w];
        for (b, &label) in labels.iter().enumerate() {
            encode_target(self.task, label, &mut y)?;
            data.extend_from_slice(&y);
            data.extend_from_slice(pred.row(b));
        }
        Tensor::new(vec![labels.len(), w + out], data)
    }

    /// `α` for every example. `pred` is taken as a constant.
    pub fn forward(&self, labels: &[f64], pred: &Tensor, mode: &mut Mode<'_>) -> Result<(Tensor, ControllerCache)> {
        let x = self.encode_input(labels, pred)?;
        let (h, mlp) = self.mlp.forward(&x, mode)?;
        let (z, head) = layers::affine_forward(&h, &self.head_weight, &self.head_bias)?;
        let alpha = layers::softmax(&z);
        Ok((
            alpha.clone(),
            ControllerCache {
                mlp,
                head,
                alpha,
            },
        ))
    }

    pub fn update_running_stats(&mut self, cache: &ControllerCache) {
        self.mlp.update_running_stats(&cache.mlp);
    }

    /// Backpropagates `∂L/∂log α`.
    pub fn backward_log_alpha(&mut self, cache: ControllerCache, grad_log_alpha: &Tensor) -> Result<()> {
        let alpha = &cache.alpha;
        grad_log_alpha.expect_shape("controller backward", alpha.shape())?;
        // log α = z − logsumexp(z)
        let mut dz = grad_log_alpha.clone();
        for r in 0..alpha.rows() {
            let s: f64 = grad_log_alpha.row(r).iter().sum();
            for (d, a) in dz.row_mut(r).iter_mut().zip(alpha.row(r)) {
                *d -= a * s;
            }
        }
        let dh = layers::affine_backward(cache.head, &dz, &mut self.head_weight, &mut self.head_bias)?.input;
        self.mlp.backward(cache.mlp, &dh)?;
        Ok(())
    }

    /// Backpropagates `∂L/∂α`.
    pub fn backward(&mut self, cache: ControllerCache, grad_alpha: &Tensor) -> Result<()> {
        grad_alpha.expect_shape("controller backward", cache.alpha.shape())?;
        let mut g = grad_alpha.clone();
        for (d, a) in g.data_mut().iter_mut().zip(cache.alpha.data()) {
            *d *= a;
        }
        self.backward_log_alpha(cache, &g)
    }
}

impl ParamSet for Controller {
    fn visit(&self, f: &mut dyn FnMut(&Parameter)) {
        self.mlp.visit(f);
        f(&self.head_weight);
        f(&self.head_bias);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        self.mlp.visit_mut(f);
        f(&mut self.head_weight);
        f(&mut self.head_bias);
    }

    fn visit_buffers(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        self.mlp.visit_buffers(f);
    }

    fn visit_buffers_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.mlp.visit_buffers_mut(f);
    }
}

pub fn gumbel_from_uniform(u: f64) -> f64 {
    -(-u.ln()).ln()
}

/// i.i.d. standard Gumbel noise from uniforms on the open interval (0, 1).
pub fn sample_gumbel<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Tensor {
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        let u: f64 = rng.sample(Open01);
        *v = gumbel_from_uniform(u);
    }
    t
}

/// `τ(t) = max(floor, 1 − slope·t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemperatureSchedule {
    pub floor: f64,
    pub slope: f64,
}

impl Default for TemperatureSchedule {
    fn default() -> Self {
        TemperatureSchedule {
            floor: 0.01,
            slope: 0.00005,
        }
    }
}

impl TemperatureSchedule {
    pub fn at(&self, step: u64) -> f64 {
        self.floor.max(1.0 - self.slope * step as f64)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.floor > 0.0 && self.floor <= 1.0) || !(self.slope >= 0.0) || !self.slope.is_finite() {
            return Err(Error::Schedule(self.floor));
        }
        Ok(())
    }
}

pub fn temperature(step: u64) -> f64 {
    TemperatureSchedule::default().at(step)
}

/// `p = softmax((log α + g)/τ)` row-wise.
pub fn gumbel_softmax(alpha: &Tensor, noise: &Tensor, tau: f64) -> Result<Tensor> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::Schedule(tau));
    }
    noise.expect_shape("gumbel_softmax", alpha.shape())?;
    let mut logits = Tensor::zeros(alpha.shape());
    for ((l, &a), &g) in logits.data_mut().iter_mut().zip(alpha.data()).zip(noise.data()) {
        *l = (a.ln() + g) / tau;
    }
    Ok(layers::softmax(&logits))
}

/// `∂L/∂log α` from `∂L/∂p`, given the `p` returned by [`gumbel_softmax`].
pub fn gumbel_softmax_backward(p: &Tensor, grad_p: &Tensor, tau: f64) -> Result<Tensor> {
    grad_p.expect_shape("gumbel_softmax backward", p.shape())?;
    let mut out = Tensor::zeros(p.shape());
    for r in 0..p.rows() {
        let (pr, gr) = (p.row(r), grad_p.row(r));
        let dot: f64 = pr.iter().zip(gr).map(|(a, b)| a * b).sum();
        for ((o, a), g) in out.row_mut(r).iter_mut().zip(pr).zip(gr) {
            *o = a * (g - dot) / tau;
        }
    }
    Ok(out)
}

/// Per-example `argmax_i(log α_i + g_i)`; ties go to the lowest index.
pub fn hard_select(alpha: &Tensor, noise: &Tensor) -> Result<Vec<usize>> {
    noise.expect_shape("hard_select", alpha.shape())?;
    let n = alpha.cols();
    Ok((0..alpha.rows())
        .map(|r| {
            let mut best = 0;
            let mut best_v = f64::NEG_INFINITY;
            for i in 0..n {
                let v = alpha.row(r)[i].ln() + noise.row(r)[i];
                if v > best_v {
                    best = i;
                    best_v = v;
                }
            }
            best
        })
        .collect())
}

/// Batch-mean weighted loss `L = mean_b Σ_i p_bi ℓ_bi`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedLoss {
    pub value: f64,
    /// `∂L/∂p = ℓ/B`.
    pub grad_p: Tensor,
    /// `∂L/∂ℓ = p/B`.
    pub grad_losses: Tensor,
}

pub fn weighted_loss(p: &Tensor, losses: &CandidateLossMatrix) -> Result<WeightedLoss> {
    let l = &losses.losses;
    p.expect_shape("weighted_loss", l.shape())?;
    let b_n = l.rows();
    if b_n == 0 {
        return Err(Error::dimension("weighted_loss", p.shape(), &[1, l.cols()]));
    }
    let scale = 1.0 / b_n as f64;
    let mut value = 0.0;
    for r in 0..b_n {
        value += p.row(r).iter().zip(l.row(r)).map(|(a, b)| a * b).sum::<f64>();
    }
    Ok(WeightedLoss {
        value: value * scale,
        grad_p: l.scale(scale),
        grad_losses: p.scale(scale),
    })
}

/// Column means of a `B×n` matrix.
pub fn column_means(t: &Tensor) -> Vec<f64> {
    let mut out = vec![0.0; t.cols()];
    for r in 0..t.rows() {
        for (o, v) in out.iter_mut().zip(t.row(r)) {
            *o += v;
        }
    }
    let n = t.rows().max(1) as f64;
    out.iter_mut().for_each(|o| *o /= n);
    out
}
