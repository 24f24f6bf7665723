//! Fixtures shared by the integration suites.
#![allow(dead_code)]

use std::sync::Arc;

use autoloss::data::synth::{generate, SynthConfig};
use autoloss::data::{split_dataset, DatasetSplits, Task};
use autoloss::losses::{categorical_hinge, cross_entropy, kl_divergence, Builtin, CandidateLoss, LossCatalog, LossKind, LossValue};
use autoloss::mlp::MlpConfig;
use autoloss::model::{DrsConfig, ModelKind};

/// Cross-entropy against a target with probability mass `eta` moved to the
/// wrong class. Never lower than the binary entropy of `eta`.
#[derive(Debug)]
pub struct NoisyCe {
    pub eta: f64,
}

impl CandidateLoss for NoisyCe {
    fn name(&self) -> &str {
        "CE_noisy"
    }
    fn supports(&self, task: Task) -> bool {
        task == Task::Binary
    }
    fn eval(&self, target: &[f64], pred: &[f64], grad: &mut [f64]) -> LossValue {
        let noisy: Vec<f64> = target.iter().map(|t| (1.0 - self.eta) * t + self.eta * (1.0 - t)).collect();
        LossValue::smooth(cross_entropy(&noisy, pred, grad))
    }
}

/// Hinge with the target class swapped: it rewards confident wrong answers.
#[derive(Debug)]
pub struct InvertedHinge;

impl CandidateLoss for InvertedHinge {
    fn name(&self) -> &str {
        "hinge_inverted"
    }
    fn supports(&self, task: Task) -> bool {
        task == Task::Binary
    }
    fn eval(&self, target: &[f64], pred: &[f64], grad: &mut [f64]) -> LossValue {
        let flipped: Vec<f64> = target.iter().rev().copied().collect();
        categorical_hinge(&flipped, pred, grad)
    }
}

/// KL plus a constant: same gradient as CE, always one unit more expensive.
#[derive(Debug)]
pub struct ShiftedKl {
    pub shift: f64,
}

impl CandidateLoss for ShiftedKl {
    fn name(&self) -> &str {
        "KL_shifted"
    }
    fn supports(&self, task: Task) -> bool {
        task == Task::Binary
    }
    fn eval(&self, target: &[f64], pred: &[f64], grad: &mut [f64]) -> LossValue {
        LossValue::smooth(kl_divergence(target, pred, grad) + self.shift)
    }
}

/// `{CE, corrupted CE, inverted hinge, shifted KL}`; CE is the only honest
/// candidate and sits at index 0.
pub fn rigged_catalog() -> LossCatalog {
    LossCatalog::new(
        Task::Binary,
        vec![
            Arc::new(Builtin::new(LossKind::CrossEntropy)),
            Arc::new(NoisyCe { eta: 0.4 }),
            Arc::new(InvertedHinge),
            Arc::new(ShiftedKl { shift: 1.0 }),
        ],
    )
    .unwrap()
}

pub const RIGGED_TRUE: usize = 0;

pub fn default_catalog() -> LossCatalog {
    LossCatalog::builtin(Task::Binary, &LossKind::defaults_for(Task::Binary), Default::default()).unwrap()
}

/// Planted-signal binary data, split 80/10/10.
pub fn planted(count: usize, seed: u64) -> (Vec<usize>, DatasetSplits) {
    let data = generate(&SynthConfig {
        count,
        seed,
        ..SynthConfig::default()
    })
    .unwrap();
    let cards = data.schema.cardinalities();
    (cards, split_dataset(data.encoded(), (0.8, 0.1, 0.1), seed).unwrap())
}

/// Small DRS for gradient checks and fast mechanics tests.
pub fn small_drs(kind: ModelKind) -> DrsConfig {
    DrsConfig {
        kind,
        embedding_dim: 4,
        mlp: MlpConfig {
            hidden: vec![16, 8],
            ..MlpConfig::default()
        },
        init_std: 0.3,
    }
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}
