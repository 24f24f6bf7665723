//! Candidate loss catalog and the per-example candidate loss matrix.
//!
//! Every loss sees the target and the prediction as distributions over the
//! output classes (binary tasks are expanded to `[1−ŷ, ŷ]`) or as a single
//! value for regression, and returns the loss with its gradient w.r.t. that
//! representation. [`LossCatalog::evaluate`] folds binary gradients back onto
//! the scalar prediction.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::data::Task;
use crate::error::{Error, Result};
use crate::kernel::{BranchHasher, Tensor};

pub const PRED_EPS: f64 = 1e-7;

pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(PRED_EPS, 1.0 - PRED_EPS)
}

/// Result of one per-example loss evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValue {
    pub value: f64,
    /// Identifies the non-smooth branch taken (0 for smooth losses).
    pub branch: u64,
}

impl LossValue {
    pub fn smooth(value: f64) -> Self {
        LossValue { value, branch: 0 }
    }
}

/// One candidate loss. Implementations must be pure.
pub trait CandidateLoss: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;
    fn supports(&self, task: Task) -> bool;
    /// Writes `∂ℓ/∂pred` into `grad` (same length as `pred`).
    fn eval(&self, target: &[f64], pred: &[f64], grad: &mut [f64]) -> LossValue;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LossKind {
    #[serde(rename = "CE")]
    CrossEntropy,
    #[serde(rename = "focal")]
    Focal,
    #[serde(rename = "hinge")]
    Hinge,
    #[serde(rename = "KL")]
    Kl,
    #[serde(rename = "MSE")]
    Mse,
    #[serde(rename = "MAE")]
    Mae,
    #[serde(rename = "Huber")]
    Huber,
}

impl LossKind {
    pub const ALL: [LossKind; 7] = [
        LossKind::CrossEntropy,
        LossKind::Focal,
        LossKind::Hinge,
        LossKind::Kl,
        LossKind::Mse,
        LossKind::Mae,
        LossKind::Huber,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::CrossEntropy => "CE",
            LossKind::Focal => "focal",
            LossKind::Hinge => "hinge",
            LossKind::Kl => "KL",
            LossKind::Mse => "MSE",
            LossKind::Mae => "MAE",
            LossKind::Huber => "Huber",
        }
    }

    pub fn is_classification(self) -> bool {
        matches!(self, LossKind::CrossEntropy | LossKind::Focal | LossKind::Hinge | LossKind::Kl)
    }

    /// Default catalog for a task: focal, KL, hinge, CE for classification
    /// and MSE, MAE, Huber for regression.
    pub fn defaults_for(task: Task) -> Vec<LossKind> {
        if task.is_classification() {
            vec![LossKind::Focal, LossKind::Kl, LossKind::Hinge, LossKind::CrossEntropy]
        } else {
            vec![LossKind::Mse, LossKind::Mae, LossKind::Huber]
        }
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        LossKind::ALL
            .into_iter()
            .find(|k| k.name().to_ascii_lowercase() == lower)
            .ok_or_else(|| Error::Config(format!("unknown loss {s:?}")))
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossHyper {
    pub focal_gamma: f64,
    pub huber_delta: f64,
}

impl Default for LossHyper {
    fn default() -> Self {
        LossHyper {
            focal_gamma: 2.0,
            huber_delta: 1.0,
        }
    }
}

impl LossHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.focal_gamma >= 0.0) || !self.focal_gamma.is_finite() {
            return Err(Error::Config(format!("focal gamma must be ≥ 0, got {}", self.focal_gamma)));
        }
        if !(self.huber_delta > 0.0) || !self.huber_delta.is_finite() {
            return Err(Error::Config(format!("huber delta must be > 0, got {}", self.huber_delta)));
        }
        Ok(())
    }
}

/// A built-in loss with its hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Builtin {
    pub kind: LossKind,
    pub hyper: LossHyper,
}

impl Builtin {
    pub fn new(kind: LossKind) -> Self {
        Builtin {
            kind,
            hyper: LossHyper::default(),
        }
    }
}

pub fn cross_entropy(target: &[f64], pred: &[f64], grad: &mut [f64]) -> f64 {
    let mut loss = 0.0;
    for ((&y, &p), g) in target.iter().zip(pred).zip(grad.iter_mut()) {
        let p = clamp_prob(p);
        *g = -y / p;
        if y != 0.0 {
            loss -= y * p.ln();
        }
    }
    loss
}

pub fn focal(target: &[f64], pred: &[f64], gamma: f64, grad: &mut [f64]) -> f64 {
    let mut loss = 0.0;
    for ((&y, &p), g) in target.iter().zip(pred).zip(grad.iter_mut()) {
        let p = clamp_prob(p);
        let q = 1.0 - p;
        let log_p = p.ln();
        let q_gamma = q.powf(gamma);
        let dq_gamma = if gamma == 0.0 { 0.0 } else { gamma * q.powf(gamma - 1.0) };
        *g = y * (dq_gamma * log_p - q_gamma / p);
        loss -= y * q_gamma * log_p;
    }
    loss
}

/// `max(0, 1 + max_{c≠t} ŷ_c − ŷ_t)` where `t` is the target's argmax.
pub fn categorical_hinge(target: &[f64], pred: &[f64], grad: &mut [f64]) -> LossValue {
    grad.iter_mut().for_each(|g| *g = 0.0);
    let t = argmax(target);
    let Some(rival) = (0..pred.len()).filter(|&c| c != t).max_by(|&a, &b| pred[a].total_cmp(&pred[b]).then(b.cmp(&a)))
    else {
        return LossValue::smooth(0.0);
    };
    let margin = 1.0 + pred[rival] - pred[t];
    let active = margin > 0.0;
    if active {
        grad[rival] = 1.0;
        grad[t] = -1.0;
    }
    LossValue {
        value: margin.max(0.0),
        branch: ((rival as u64) << 1) | active as u64,
    }
}

/// `KL(y ‖ ŷ)` with `0·log 0 = 0`.
pub fn kl_divergence(target: &[f64], pred: &[f64], grad: &mut [f64]) -> f64 {
    let mut loss = 0.0;
    for ((&y, &p), g) in target.iter().zip(pred).zip(grad.iter_mut()) {
        let p = clamp_prob(p);
        *g = -y / p;
        if y > 0.0 {
            loss += y * (y.ln() - p.ln());
        }
    }
    loss
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

impl CandidateLoss for Builtin {
    fn name(&self) -> &str {
        self.kind.name()
    }

    fn supports(&self, task: Task) -> bool {
        self.kind.is_classification() == task.is_classification()
    }

    fn eval(&self, target: &[f64], pred: &[f64], grad: &mut [f64]) -> LossValue {
        match self.kind {
            LossKind::CrossEntropy => LossValue::smooth(cross_entropy(target, pred, grad)),
            LossKind::Focal => LossValue::smooth(focal(target, pred, self.hyper.focal_gamma, grad)),
            LossKind::Hinge => categorical_hinge(target, pred, grad),
            LossKind::Kl => LossValue::smooth(kl_divergence(target, pred, grad)),
            LossKind::Mse => {
                let e = pred[0] - target[0];
                grad[0] = 2.0 * e;
                LossValue::smooth(e * e)
            }
            LossKind::Mae => {
                let e = pred[0] - target[0];
                grad[0] = if e > 0.0 {
                    1.0
                } else if e < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                LossValue {
                    value: e.abs(),
                    branch: (e > 0.0) as u64,
                }
            }
            LossKind::Huber => {
                let e = pred[0] - target[0];
                let delta = self.hyper.huber_delta;
                if e.abs() <= delta {
                    grad[0] = e;
                    LossValue {
                        value: 0.5 * e * e,
                        branch: 0,
                    }
                } else {
                    grad[0] = delta * e.signum();
                    LossValue {
                        value: delta * (e.abs() - 0.5 * delta),
                        branch: 1 + (e > 0.0) as u64,
                    }
                }
            }
        }
    }
}

/// Per-example candidate losses `B×n` and their gradients `B×n×out`, where
/// `out` is the prediction width (1 for binary and regression).
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateLossMatrix {
    pub losses: Tensor,
    pub grads: Tensor,
    /// Fingerprint of every non-smooth branch taken.
    pub branches: u64,
}

impl CandidateLossMatrix {
    pub fn batch_size(&self) -> usize {
        self.losses.rows()
    }

    pub fn candidates(&self) -> usize {
        self.losses.cols()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.batch_size()).map(|b| self.losses.row(b)[j]).collect()
    }

    /// `∂L/∂ŷ` given `∂L/∂ℓ` (`B×n`).
    pub fn pred_grad(&self, loss_grad: &Tensor) -> Result<Tensor> {
        loss_grad.expect_shape("pred_grad", self.losses.shape())?;
        let (b_n, n) = (self.batch_size(), self.candidates());
        let out = self.grads.shape()[2];
        let mut g = Tensor::zeros(&[b_n, out]);
        for b in 0..b_n {
            let row = g.row_mut(b);
            for j in 0..n {
                let w = loss_grad.data()[b * n + j];
                if w == 0.0 {
                    continue;
                }
                let src = &self.grads.data()[(b * n + j) * out..(b * n + j + 1) * out];
                for (r, s) in row.iter_mut().zip(src) {
                    *r += w * s;
                }
            }
        }
        Ok(g)
    }
}

/// Ordered candidate losses bound to a task.
#[derive(Debug, Clone)]
pub struct LossCatalog {
    task: Task,
    losses: Vec<Arc<dyn CandidateLoss>>,
}

impl LossCatalog {
    pub fn new(task: Task, losses: Vec<Arc<dyn CandidateLoss>>) -> Result<Self> {
        if losses.is_empty() {
            return Err(Error::Config("loss catalog is empty".into()));
        }
        for l in &losses {
            if !l.supports(task) {
                return Err(Error::Config(format!("loss {} does not support task {task:?}", l.name())));
            }
        }
        let mut names: Vec<&str> = losses.iter().map(|l| l.name()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("loss catalog names must be unique".into()));
        }
        Ok(LossCatalog { task, losses })
    }

    pub fn builtin(task: Task, kinds: &[LossKind], hyper: LossHyper) -> Result<Self> {
        hyper.validate()?;
        Self::new(
            task,
            kinds
                .iter()
                .map(|&kind| Arc::new(Builtin { kind, hyper }) as Arc<dyn CandidateLoss>)
                .collect(),
        )
    }

    pub fn from_names(task: Task, names: &[String], hyper: LossHyper) -> Result<Self> {
        let kinds = names.iter().map(|n| n.parse()).collect::<Result<Vec<LossKind>>>()?;
        Self::builtin(task, &kinds, hyper)
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn len(&self) -> usize {
        self.losses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.losses.is_empty()
    }

    pub fn names(&self) -> Vec<String> {
        self.losses.iter().map(|l| l.name().to_string()).collect()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.losses.iter().position(|l| l.name() == name)
    }

    pub fn get(&self, j: usize) -> &dyn CandidateLoss {
        self.losses[j].as_ref()
    }

    /// Single-entry catalog holding entry `j`.
    pub fn select(&self, j: usize) -> LossCatalog {
        LossCatalog {
            task: self.task,
            losses: vec![self.losses[j].clone()],
        }
    }

    /// Candidate loss matrix for labels `y` and predictions `ŷ`.
    pub fn evaluate(&self, labels: &[f64], pred: &Tensor) -> Result<CandidateLossMatrix> {
        let b_n = labels.len();
        let out = self.task.output_dim();
        pred.expect_shape("candidate losses", &[b_n, out])?;
        let n = self.len();
        let width = match self.task {
            Task::Binary => 2,
            _ => out,
        };
        let mut losses = Vec::with_capacity(b_n * n);
        let mut grads = Vec::with_capacity(b_n * n * out);
        let mut hasher = BranchHasher::default();
        let mut target = vec![0.0; width];
        let mut dist = vec![0.0; width];
        let mut g = vec![0.0; width];
        for (b, &y) in labels.iter().enumerate() {
            let row = pred.row(b);
            encode_target(self.task, y, &mut target)?;
            match self.task {
                Task::Binary => {
                    dist[0] = 1.0 - row[0];
                    dist[1] = row[0];
                }
                _ => dist.copy_from_slice(row),
            }
            for loss in &self.losses {
                let v = loss.eval(&target, &dist, &mut g);
                if !v.value.is_finite() || g.iter().any(|x| !x.is_finite()) {
                    return Err(Error::Numeric(format!("loss {} is not finite for example {b}", loss.name())));
                }
                hasher.push_u64(v.branch);
                losses.push(v.value);
                match self.task {
                    Task::Binary => grads.push(g[1] - g[0]),
                    _ => grads.extend_from_slice(&g),
                }
            }
        }
        Ok(CandidateLossMatrix {
            losses: Tensor::new(vec![b_n, n], losses)?,
            grads: Tensor::new(vec![b_n, n, out], grads)?,
            branches: hasher.finish(),
        })
    }
}

/// One-hot (classification, width 2 for binary) or scalar (regression) target.
pub fn encode_target(task: Task, label: f64, out: &mut [f64]) -> Result<()> {
    match task {
        Task::Regression => out[0] = label,
        _ => {
            let k = task.classes().unwrap_or(2);
            let c = label as usize;
            if label < 0.0 || label.fract() != 0.0 || c >= k {
                return Err(Error::Data(format!("label {label} is not a class index below {k}")));
            }
            out.iter_mut().for_each(|v| *v = 0.0);
            out[c] = 1.0;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::gradcheck::relative_error;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn eval(kind: LossKind, target: &[f64], pred: &[f64]) -> (f64, Vec<f64>) {
        let mut g = vec![0.0; pred.len()];
        let v = Builtin::new(kind).eval(target, pred, &mut g);
        (v.value, g)
    }

    fn random_dist(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
        let raw: Vec<f64> = (0..k).map(|_| rng.gen_range(0.05..1.0)).collect();
        let s: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / s).collect()
    }

    fn one_hot(k: usize, c: usize) -> Vec<f64> {
        (0..k).map(|i| (i == c) as u8 as f64).collect()
    }

    #[test]
    fn cross_entropy_of_uniform_binary_is_ln2() {
        let (v, _) = eval(LossKind::CrossEntropy, &[1.0, 0.0], &[0.5, 0.5]);
        assert!((v - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn focal_without_focusing_is_cross_entropy() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let f = Builtin {
            kind: LossKind::Focal,
            hyper: LossHyper {
                focal_gamma: 0.0,
                ..LossHyper::default()
            },
        };
        for _ in 0..20 {
            for _ in 0..16 {
                let p = random_dist(&mut rng, 4);
                let y = one_hot(4, rng.gen_range(0..4));
                let mut g1 = vec![0.0; 4];
                let mut g2 = vec![0.0; 4];
                let a = f.eval(&y, &p, &mut g1).value;
                let b = cross_entropy(&y, &p, &mut g2);
                assert!((a - b).abs() < 1e-12);
                for (x, z) in g1.iter().zip(&g2) {
                    assert!((x - z).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn regression_loss_values() {
        let (v, g) = eval(LossKind::Mse, &[3.0], &[1.0]);
        assert_eq!((v, g[0]), (4.0, -4.0));
        let (v, _) = eval(LossKind::Huber, &[0.0], &[0.5]);
        assert_eq!(v, 0.125);
        let (v, g) = eval(LossKind::Huber, &[0.0], &[3.0]);
        assert_eq!((v, g[0]), (2.5, 1.0));
        let (v, g) = eval(LossKind::Mae, &[2.0], &[-1.0]);
        assert_eq!((v, g[0]), (3.0, -1.0));
    }

    #[test]
    fn hinge_values_and_ties() {
        let (v, g) = eval(LossKind::Hinge, &[0.0, 1.0, 0.0], &[0.2, 0.5, 0.3]);
        assert!((v - 0.8).abs() < 1e-12);
        assert_eq!(g, vec![0.0, -1.0, 1.0]);
        // Equal rivals resolve to the lowest index.
        let (_, g) = eval(LossKind::Hinge, &[0.0, 0.0, 1.0], &[0.3, 0.3, 0.4]);
        assert_eq!(g, vec![1.0, 0.0, -1.0]);
    }

    fn numeric_grad(kind: LossKind, target: &[f64], pred: &[f64], h: f64) -> Option<Vec<f64>> {
        let base = {
            let mut g = vec![0.0; pred.len()];
            Builtin::new(kind).eval(target, pred, &mut g).branch
        };
        let mut out = Vec::new();
        for i in 0..pred.len() {
            let mut plus = pred.to_vec();
            let mut minus = pred.to_vec();
            plus[i] += h;
            minus[i] -= h;
            let mut g = vec![0.0; pred.len()];
            let vp = Builtin::new(kind).eval(target, &plus, &mut g);
            let vm = Builtin::new(kind).eval(target, &minus, &mut g);
            if vp.branch != base || vm.branch != base {
                return None;
            }
            out.push((vp.value - vm.value) / (2.0 * h));
        }
        Some(out)
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut checked = [0usize; 7];
        for trial in 0..200 {
            for (ki, kind) in LossKind::ALL.into_iter().enumerate() {
                let (target, pred) = if kind.is_classification() {
                    let k = 2 + trial % 4;
                    let target = if kind == LossKind::Kl && trial % 2 == 0 {
                        random_dist(&mut rng, k)
                    } else {
                        one_hot(k, rng.gen_range(0..k))
                    };
                    (target, random_dist(&mut rng, k))
                } else {
                    (vec![rng.gen_range(-3.0..3.0)], vec![rng.gen_range(-3.0..3.0)])
                };
                let (_, g) = eval(kind, &target, &pred);
                let Some(num) = numeric_grad(kind, &target, &pred, 1e-6) else {
                    continue;
                };
                for (a, n) in g.iter().zip(&num) {
                    // Kinked losses are piecewise linear, so the check is exact off-kink.
                    assert!(relative_error(*a, *n) < 1e-6, "{kind} {target:?} {pred:?}: {a} vs {n}");
                }
                checked[ki] += 1;
            }
        }
        assert!(checked.iter().all(|&c| c > 100), "{checked:?}");
    }

    #[test]
    fn perfect_prediction_zeroes_ce_and_kl_columns() {
        let catalog = LossCatalog::builtin(
            Task::Multiclass { classes: 3 },
            &LossKind::defaults_for(Task::Binary),
            LossHyper::default(),
        )
        .unwrap();
        let pred = Tensor::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 0.0, 1.0]]).unwrap();
        let m = catalog.evaluate(&[0.0, 2.0], &pred).unwrap();
        assert_eq!(m.losses.shape(), &[2, 4]);
        for j in [catalog.position("CE").unwrap(), catalog.position("KL").unwrap()] {
            for v in m.column(j) {
                assert!(v.abs() < 1e-6, "{v}");
            }
        }
    }

    #[test]
    fn matrix_columns_equal_individual_losses() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let task = Task::Binary;
        let kinds = LossKind::defaults_for(task);
        let catalog = LossCatalog::builtin(task, &kinds, LossHyper::default()).unwrap();
        let preds: Vec<f64> = (0..10).map(|_| rng.gen_range(0.01..0.99)).collect();
        let labels: Vec<f64> = (0..10).map(|_| rng.gen_range(0..2) as f64).collect();
        let m = catalog.evaluate(&labels, &Tensor::new(vec![10, 1], preds.clone()).unwrap()).unwrap();
        for (j, &kind) in kinds.iter().enumerate() {
            for b in 0..10 {
                let y = one_hot(2, labels[b] as usize);
                let (v, g) = eval(kind, &y, &[1.0 - preds[b], preds[b]]);
                assert_eq!(m.losses.row(b)[j], v);
                assert_eq!(m.grads.data()[b * 4 + j], g[1] - g[0]);
            }
        }
    }

    #[test]
    fn binary_folded_gradient_matches_finite_differences() {
        let catalog = LossCatalog::builtin(Task::Binary, &[LossKind::CrossEntropy, LossKind::Focal], LossHyper::default()).unwrap();
        let labels = [1.0, 0.0];
        let p = [0.3, 0.8];
        let at = |p: [f64; 2]| catalog.evaluate(&labels, &Tensor::new(vec![2, 1], p.to_vec()).unwrap()).unwrap();
        let m = at(p);
        let h = 1e-6;
        for b in 0..2 {
            let mut plus = p;
            let mut minus = p;
            plus[b] += h;
            minus[b] -= h;
            for j in 0..2 {
                let num = (at(plus).losses.row(b)[j] - at(minus).losses.row(b)[j]) / (2.0 * h);
                assert!(relative_error(m.grads.data()[b * 2 + j], num) < 1e-6);
            }
        }
    }

    #[test]
    fn incompatible_or_duplicate_catalogs_are_rejected() {
        let h = LossHyper::default();
        assert!(LossCatalog::builtin(Task::Binary, &[LossKind::Mse], h).is_err());
        assert!(LossCatalog::builtin(Task::Regression, &[LossKind::CrossEntropy], h).is_err());
        assert!(LossCatalog::builtin(Task::Binary, &[LossKind::Kl, LossKind::Kl], h).is_err());
        assert!(LossCatalog::builtin(Task::Binary, &[], h).is_err());
        assert!("cosine".parse::<LossKind>().is_err());
        assert_eq!("huber".parse::<LossKind>().unwrap(), LossKind::Huber);
        let names = vec!["CE".to_string(), "focal".to_string()];
        assert_eq!(LossCatalog::from_names(Task::Binary, &names, h).unwrap().names(), names);
    }

    #[test]
    fn pred_grad_combines_columns() {
        let catalog = LossCatalog::builtin(Task::Regression, &[LossKind::Mse, LossKind::Mae], LossHyper::default()).unwrap();
        let m = catalog.evaluate(&[1.0], &Tensor::new(vec![1, 1], vec![3.0]).unwrap()).unwrap();
        let g = m.pred_grad(&Tensor::new(vec![1, 2], vec![0.25, 0.75]).unwrap()).unwrap();
        assert_eq!(g.data(), &[0.25 * 4.0 + 0.75 * 1.0]);
    }

    proptest! {
        #[test]
        fn losses_are_finite_and_nonnegative_on_the_closed_unit_interval(
            p in prop::collection::vec(0.0f64..=1.0, 3),
            c in 0usize..3,
            edge in 0usize..4,
        ) {
            let mut p = p;
            if edge < 3 {
                p[edge] = if edge % 2 == 0 { 0.0 } else { 1.0 };
            }
            let y = one_hot(3, c);
            for kind in [LossKind::CrossEntropy, LossKind::Focal, LossKind::Hinge, LossKind::Kl] {
                let (v, g) = eval(kind, &y, &p);
                prop_assert!(v.is_finite() && v >= 0.0, "{} {}", kind, v);
                prop_assert!(g.iter().all(|x| x.is_finite()));
            }
        }

        #[test]
        fn ce_and_kl_differ_by_label_entropy(raw in prop::collection::vec(0.01f64..1.0, 4), q in prop::collection::vec(0.01f64..1.0, 4)) {
            let norm = |v: &[f64]| { let s: f64 = v.iter().sum(); v.iter().map(|x| x / s).collect::<Vec<_>>() };
            let (y, p) = (norm(&raw), norm(&q));
            let entropy: f64 = -y.iter().map(|v| v * v.ln()).sum::<f64>();
            let (ce, _) = eval(LossKind::CrossEntropy, &y, &p);
            let (kl, _) = eval(LossKind::Kl, &y, &p);
            prop_assert!((ce - kl - entropy).abs() < 1e-12);
            let y = one_hot(4, 1);
            let (ce, _) = eval(LossKind::CrossEntropy, &y, &p);
            let (kl, _) = eval(LossKind::Kl, &y, &p);
            prop_assert_eq!(ce, kl);
        }

        #[test]
        fn regression_losses_are_nonnegative(y in -1e3f64..1e3, p in -1e3f64..1e3) {
            for kind in [LossKind::Mse, LossKind::Mae, LossKind::Huber] {
                let (v, _) = eval(kind, &[y], &[p]);
                prop_assert!(v >= 0.0 && v.is_finite());
            }
        }
    }
}
