//! Layer primitives with explicit forward/backward passes.
//!
//! Every forward returns the output together with a cache; the matching
//! backward consumes that cache by value, so a cache can only be used once.
//! Backward passes accumulate into `Parameter::grad`; zeroing is left to the
//! optimizer.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tensor::{Parameter, Tensor};
use crate::error::{Error, Result};

#[derive(Debug)]
pub struct AffineCache {
    input: Tensor,
}

#[derive(Debug, Clone)]
pub struct AffineGrads {
    pub input: Tensor,
    pub weight: Tensor,
    pub bias: Tensor,
}

/// `x·W + b` for `x: B×in`, `W: in×out`, `b: out`.
pub fn affine_forward(x: &Tensor, w: &Parameter, b: &Parameter) -> Result<(Tensor, AffineCache)> {
    let ws = w.value.shape();
    if ws.len() != 2 || x.shape().len() != 2 || x.cols() != ws[0] {
        return Err(Error::dimension("affine", x.shape(), ws));
    }
    if b.value.shape() != [ws[1]] {
        return Err(Error::dimension("affine bias", b.value.shape(), &[ws[1]]));
    }
    let mut out = x.matmul(&w.value)?;
    let bias = b.value.data();
    for r in 0..out.rows() {
        for (o, bv) in out.row_mut(r).iter_mut().zip(bias) {
            *o += bv;
        }
    }
    Ok((out, AffineCache { input: x.clone() }))
}

pub fn affine_backward(
    cache: AffineCache,
    grad_out: &Tensor,
    w: &mut Parameter,
    b: &mut Parameter,
) -> Result<AffineGrads> {
    let out_dim = w.value.shape()[1];
    if grad_out.shape() != [cache.input.rows(), out_dim] {
        return Err(Error::dimension(
            "affine backward",
            grad_out.shape(),
            &[cache.input.rows(), out_dim],
        ));
    }
    let dw = cache.input.t_matmul(grad_out)?;
    let mut db = Tensor::zeros(&[out_dim]);
    for r in 0..grad_out.rows() {
        for (acc, g) in db.data_mut().iter_mut().zip(grad_out.row(r)) {
            *acc += g;
        }
    }
    let dx = grad_out.matmul_t(&w.value)?;
    w.accumulate(&dw)?;
    b.accumulate(&db)?;
    Ok(AffineGrads {
        input: dx,
        weight: dw,
        bias: db,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
    Softmax,
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "identity" | "none" => Ok(Activation::Identity),
            "relu" => Ok(Activation::Relu),
            "sigmoid" => Ok(Activation::Sigmoid),
            "softmax" => Ok(Activation::Softmax),
            other => Err(Error::Config(format!("unknown activation kind {other:?}"))),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Activation::Identity => "identity",
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
            Activation::Softmax => "softmax",
        };
        f.write_str(s)
    }
}

#[derive(Debug)]
pub struct ActivationCache {
    kind: Activation,
    /// Input for relu, output for sigmoid/softmax.
    saved: Tensor,
}

impl ActivationCache {
    /// Folds the relu on/off pattern into `hasher`; other kinds are smooth.
    pub fn hash_branches(&self, hasher: &mut BranchHasher) {
        if self.kind == Activation::Relu {
            for &v in self.saved.data() {
                hasher.push(v > 0.0);
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable softmax of one row.
pub fn softmax_row(row: &[f64], out: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(row) {
        *o = (v - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Softmax along the last axis.
pub fn softmax(x: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(x.shape());
    for r in 0..x.rows() {
        softmax_row(x.row(r), out.row_mut(r));
    }
    out
}

pub fn activation_forward(kind: Activation, x: &Tensor) -> (Tensor, ActivationCache) {
    let out = match kind {
        Activation::Identity => x.clone(),
        Activation::Relu => x.map(|v| v.max(0.0)),
        Activation::Sigmoid => x.map(sigmoid),
        Activation::Softmax => softmax(x),
    };
    let saved = match kind {
        Activation::Relu => x.clone(),
        _ => out.clone(),
    };
    (out, ActivationCache { kind, saved })
}

pub fn activation_backward(cache: ActivationCache, grad_out: &Tensor) -> Result<Tensor> {
    grad_out.expect_shape("activation backward", cache.saved.shape())?;
    let mut grad = grad_out.clone();
    match cache.kind {
        Activation::Identity => {}
        Activation::Relu => {
            for (g, &x) in grad.data_mut().iter_mut().zip(cache.saved.data()) {
                if x <= 0.0 {
                    *g = 0.0;
                }
            }
        }
        Activation::Sigmoid => {
            for (g, &y) in grad.data_mut().iter_mut().zip(cache.saved.data()) {
                *g *= y * (1.0 - y);
            }
        }
        Activation::Softmax => {
            for r in 0..grad.rows() {
                let y = cache.saved.row(r);
                let dot: f64 = grad_out.row(r).iter().zip(y).map(|(g, p)| g * p).sum();
                for (g, &p) in grad.row_mut(r).iter_mut().zip(y) {
                    *g = p * (*g - dot);
                }
            }
        }
    }
    Ok(grad)
}

#[derive(Debug)]
pub struct DropoutCache {
    /// Per-unit multiplier: 0 or 1/(1-rate). `None` means identity.
    mask: Option<Vec<f64>>,
}

/// Inverted dropout; eval mode and `rate == 0` are exact identities.
pub fn dropout_forward<R: Rng + ?Sized>(
    x: &Tensor,
    rate: f64,
    train: bool,
    rng: &mut R,
) -> Result<(Tensor, DropoutCache)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!("dropout rate must lie in [0, 1), got {rate}")));
    }
    if !train || rate == 0.0 {
        return Ok((x.clone(), DropoutCache { mask: None }));
    }
    let keep = 1.0 / (1.0 - rate);
    let mask: Vec<f64> = (0..x.len())
        .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
        .collect();
    let mut out = x.clone();
    for (o, m) in out.data_mut().iter_mut().zip(&mask) {
        *o *= m;
    }
    Ok((out, DropoutCache { mask: Some(mask) }))
}

/// Eval-mode dropout: identity, consumes no randomness.
pub fn dropout_eval(x: &Tensor) -> (Tensor, DropoutCache) {
    (x.clone(), DropoutCache { mask: None })
}

pub fn dropout_backward(cache: DropoutCache, grad_out: &Tensor) -> Tensor {
    let mut grad = grad_out.clone();
    if let Some(mask) = cache.mask {
        for (g, m) in grad.data_mut().iter_mut().zip(&mask) {
            *g *= m;
        }
    }
    grad
}

pub const BATCHNORM_MOMENTUM: f64 = 0.9;
pub const BATCHNORM_EPS: f64 = 1e-7;

/// Per-feature batch normalization with learned scale/shift.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub scale: Parameter,
    pub shift: Parameter,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub momentum: f64,
    pub eps: f64,
}

#[derive(Debug)]
pub struct BatchNormCache {
    normalized: Tensor,
    inv_std: Vec<f64>,
    train: bool,
    batch_stats: Option<(Vec<f64>, Vec<f64>)>,
}

impl BatchNorm {
    pub fn new(name: &str, features: usize) -> Self {
        BatchNorm {
            scale: Parameter::new(format!("{name}.scale"), Tensor::filled(&[features], 1.0)),
            shift: Parameter::new(format!("{name}.shift"), Tensor::zeros(&[features])),
            running_mean: Tensor::zeros(&[features]),
            running_var: Tensor::filled(&[features], 1.0),
            momentum: BATCHNORM_MOMENTUM,
            eps: BATCHNORM_EPS,
        }
    }

    pub fn features(&self) -> usize {
        self.scale.value.len()
    }

    /// Train mode normalizes with batch statistics (returned in the cache, see
    /// [`BatchNorm::update_running_stats`]); eval mode uses the running statistics.
    pub fn forward(&self, x: &Tensor, train: bool) -> Result<(Tensor, BatchNormCache)> {
        self.check(x)?;
        if train {
            let (mean, var) = self.batch_stats(x)?;
            let (out, mut cache) = self.apply(x, &mean, &var, true);
            cache.batch_stats = Some((mean, var));
            Ok((out, cache))
        } else {
            Ok(self.apply(x, self.running_mean.data(), self.running_var.data(), false))
        }
    }

    /// Folds the batch statistics of a train-mode forward into the running
    /// statistics: `running = momentum·running + (1−momentum)·batch`.
    pub fn update_running_stats(&mut self, cache: &BatchNormCache) {
        if let Some((mean, var)) = &cache.batch_stats {
            for j in 0..mean.len() {
                let rm = &mut self.running_mean.data_mut()[j];
                *rm = self.momentum * *rm + (1.0 - self.momentum) * mean[j];
                let rv = &mut self.running_var.data_mut()[j];
                *rv = self.momentum * *rv + (1.0 - self.momentum) * var[j];
            }
        }
    }

    fn check(&self, x: &Tensor) -> Result<()> {
        if x.shape().len() != 2 || x.cols() != self.features() {
            return Err(Error::dimension("batchnorm", x.shape(), &[x.rows(), self.features()]));
        }
        Ok(())
    }

    fn batch_stats(&self, x: &Tensor) -> Result<(Vec<f64>, Vec<f64>)> {
        let rows = x.rows();
        if rows < 2 {
            return Err(Error::DegenerateBatch(rows));
        }
        let cols = x.cols();
        let mut mean = vec![0.0; cols];
        for r in 0..rows {
            for (m, v) in mean.iter_mut().zip(x.row(r)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= rows as f64);
        let mut var = vec![0.0; cols];
        for r in 0..rows {
            for ((s, v), m) in var.iter_mut().zip(x.row(r)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        var.iter_mut().for_each(|s| *s /= rows as f64);
        Ok((mean, var))
    }

    fn apply(&self, x: &Tensor, mean: &[f64], var: &[f64], train: bool) -> (Tensor, BatchNormCache) {
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        let mut normalized = x.clone();
        for r in 0..x.rows() {
            for (j, v) in normalized.row_mut(r).iter_mut().enumerate() {
                *v = (*v - mean[j]) * inv_std[j];
            }
        }
        let mut out = normalized.clone();
        let (gamma, beta) = (self.scale.value.data(), self.shift.value.data());
        for r in 0..out.rows() {
            for (j, v) in out.row_mut(r).iter_mut().enumerate() {
                *v = *v * gamma[j] + beta[j];
            }
        }
        (
            out,
            BatchNormCache {
                normalized,
                inv_std,
                train,
                batch_stats: None,
            },
        )
    }

    pub fn backward(&mut self, cache: BatchNormCache, grad_out: &Tensor) -> Result<Tensor> {
        grad_out.expect_shape("batchnorm backward", cache.normalized.shape())?;
        let rows = grad_out.rows();
        let cols = grad_out.cols();
        let mut dgamma = vec![0.0; cols];
        let mut dbeta = vec![0.0; cols];
        for r in 0..rows {
            for j in 0..cols {
                let g = grad_out.row(r)[j];
                dgamma[j] += g * cache.normalized.row(r)[j];
                dbeta[j] += g;
            }
        }
        self.scale.accumulate(&Tensor::vector(dgamma.clone()))?;
        self.shift.accumulate(&Tensor::vector(dbeta.clone()))?;

        let gamma = self.scale.value.data();
        let mut dx = Tensor::zeros(grad_out.shape());
        if cache.train {
            // Batch statistics depend on x: dx = γ/σ · (g − mean(g) − x̂·mean(g·x̂)).
            let n = rows as f64;
            for r in 0..rows {
                for j in 0..cols {
                    let g = grad_out.row(r)[j];
                    let xh = cache.normalized.row(r)[j];
                    dx.row_mut(r)[j] = gamma[j] * cache.inv_std[j] * (g - dbeta[j] / n - xh * dgamma[j] / n);
                }
            }
        } else {
            for r in 0..rows {
                for j in 0..cols {
                    dx.row_mut(r)[j] = grad_out.row(r)[j] * gamma[j] * cache.inv_std[j];
                }
            }
        }
        Ok(dx)
    }
}

/// FNV-1a accumulator over branch decisions of non-smooth ops (relu masks,
/// hinge/abs kinks). Two evaluations with equal hashes took the same branches.
#[derive(Debug, Clone)]
pub struct BranchHasher(u64);

impl Default for BranchHasher {
    fn default() -> Self {
        BranchHasher(0xcbf2_9ce4_8422_2325)
    }
}

impl BranchHasher {
    pub fn push(&mut self, bit: bool) {
        self.push_u64(bit as u64);
    }

    pub fn push_u64(&mut self, v: u64) {
        for byte in v.to_le_bytes() {
            self.0 ^= byte as u64;
            self.0 = self.0.wrapping_mul(0x0100_0000_01b3);
        }
    }

    pub fn finish(&self) -> u64 {
        self.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn affine_scalar_case() {
        let x = Tensor::new(vec![1, 1], vec![2.0]).unwrap();
        let w = Parameter::new("w", Tensor::new(vec![1, 1], vec![3.0]).unwrap());
        let b = Parameter::new("b", Tensor::vector(vec![1.0]));
        let (y, _) = affine_forward(&x, &w, &b).unwrap();
        assert_eq!(y.data(), &[7.0]);
    }

    #[test]
    fn affine_identity_weights_pass_input_through() {
        let x = Tensor::new(vec![2, 3], vec![1.0, -2.0, 3.0, 0.5, 0.0, -1.5]).unwrap();
        let mut eye = Tensor::zeros(&[3, 3]);
        for i in 0..3 {
            eye.data_mut()[i * 3 + i] = 1.0;
        }
        let w = Parameter::new("w", eye);
        let b = Parameter::new("b", Tensor::zeros(&[3]));
        let (y, _) = affine_forward(&x, &w, &b).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn affine_rejects_mismatched_shapes() {
        let x = Tensor::zeros(&[4, 3]);
        let w = Parameter::new("w", Tensor::zeros(&[2, 5]));
        let b = Parameter::new("b", Tensor::zeros(&[5]));
        let err = affine_forward(&x, &w, &b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[4, 3]") && msg.contains("[2, 5]"), "{msg}");
    }

    #[test]
    fn affine_backward_accumulates() {
        let x = Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap();
        let mut w = Parameter::new("w", Tensor::new(vec![2, 1], vec![0.5, -0.5]).unwrap());
        let mut b = Parameter::new("b", Tensor::zeros(&[1]));
        let g = Tensor::new(vec![1, 1], vec![1.0]).unwrap();
        for _ in 0..2 {
            let (_, cache) = affine_forward(&x, &w, &b).unwrap();
            affine_backward(cache, &g, &mut w, &mut b).unwrap();
        }
        assert_eq!(w.grad.data(), &[2.0, 4.0]);
        assert_eq!(b.grad.data(), &[2.0]);
    }

    #[test]
    fn activation_values() {
        let x = Tensor::vector(vec![-1.0, 2.0]);
        assert_eq!(activation_forward(Activation::Relu, &x).0.data(), &[0.0, 2.0]);
        assert_eq!(sigmoid(0.0), 0.5);
        let s = softmax(&Tensor::new(vec![1, 2], vec![0.0, 0.0]).unwrap());
        assert_eq!(s.data(), &[0.5, 0.5]);
        assert!("tanh".parse::<Activation>().is_err());
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let x = Tensor::new(vec![2, 3], vec![1000.0, -3.0, 2.0, -0.1, 0.2, 40.0]).unwrap();
        let s = softmax(&x);
        for r in 0..2 {
            assert!((s.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!(s.is_finite());
    }

    #[test]
    fn dropout_identity_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(dropout_forward(&x, 0.0, true, &mut rng).unwrap().0, x);
        assert_eq!(dropout_forward(&x, 0.7, false, &mut rng).unwrap().0, x);
        assert!(dropout_forward(&x, 1.0, true, &mut rng).is_err());
    }

    #[test]
    fn inverted_dropout_preserves_expectation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = Tensor::filled(&[1, 10], 3.0);
        let passes = 10_000;
        let mut total = 0.0;
        for _ in 0..passes {
            let (y, _) = dropout_forward(&x, 0.2, true, &mut rng).unwrap();
            total += y.data().iter().sum::<f64>();
        }
        let mean = total / (passes * 10) as f64;
        assert!((mean - 3.0).abs() / 3.0 < 0.01, "mean {mean}");
    }

    #[test]
    fn batchnorm_fixed_point() {
        // Columns are exactly zero-mean with unit population variance.
        let x = Tensor::new(vec![4, 2], vec![1.0, -1.0, -1.0, 1.0, 1.0, 1.0, -1.0, -1.0]).unwrap();
        let bn = BatchNorm::new("bn", 2);
        let (y, _) = bn.forward(&x, true).unwrap();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn batchnorm_rejects_single_row_in_train_mode() {
        let bn = BatchNorm::new("bn", 3);
        let x = Tensor::zeros(&[1, 3]);
        assert!(matches!(bn.forward(&x, true), Err(Error::DegenerateBatch(1))));
        assert!(bn.forward(&x, false).is_ok());
    }

    #[test]
    fn batchnorm_running_stats_use_momentum() {
        let mut bn = BatchNorm::new("bn", 1);
        let x = Tensor::new(vec![2, 1], vec![1.0, 3.0]).unwrap();
        let (_, cache) = bn.forward(&x, true).unwrap();
        bn.update_running_stats(&cache);
        assert!((bn.running_mean.data()[0] - 0.2).abs() < 1e-15);
        assert!((bn.running_var.data()[0] - (0.9 + 0.1 * 1.0)).abs() < 1e-15);
    }
}
