//! Central finite-difference oracle for analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::tensor::Parameter;
use super::ParamSet;
use crate::error::{Error, Result};

/// One loss evaluation. `branches` fingerprints every non-smooth branch the
/// evaluation took (see [`super::layers::BranchHasher`]); smooth losses use 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Probe {
    pub loss: f64,
    pub branches: u64,
}

impl Probe {
    pub fn smooth(loss: f64) -> Self {
        Probe { loss, branches: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    pub step: f64,
    /// Coordinates sampled per parameter tensor; smaller tensors are checked fully.
    pub coords_per_param: usize,
    pub seed: u64,
    /// Floor on the relative-error denominator. Raise it towards the
    /// finite-difference noise level (about `ε·|L| / step`) when some
    /// gradients are exactly zero, e.g. a bias feeding a batchnorm.
    pub scale_floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            step: 1e-5,
            coords_per_param: 24,
            seed: 0,
            scale_floor: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    /// Analytic and numeric value at the worst coordinate.
    pub worst_values: (f64, f64),
    pub checked: usize,
    pub skipped_kinks: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    relative_error_with_floor(analytic, numeric, 1e-8)
}

pub fn relative_error_with_floor(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(floor)
}

/// Compares analytic gradients against central differences.
///
/// `eval(model, true)` must evaluate the loss and accumulate its gradient
/// into the model's parameters; `eval(model, false)` only evaluates. Grads are
/// zeroed before the analytic pass. Coordinates whose ±step perturbation
/// changes the branch fingerprint (a relu or loss kink within `step`) are
/// skipped.
pub fn gradient_check<M, F>(model: &mut M, mut eval: F, cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    M: ParamSet,
    F: FnMut(&mut M, bool) -> Result<Probe>,
{
    if cfg.step <= 0.0 {
        return Err(Error::Config(format!("finite-difference step must be positive, got {}", cfg.step)));
    }
    model.zero_grads();
    let base = eval(model, true)?;
    if !base.loss.is_finite() {
        return Err(Error::Numeric(format!("non-finite loss {}", base.loss)));
    }

    let mut analytic: Vec<(String, Vec<f64>)> = Vec::new();
    model.visit(&mut |p: &Parameter| analytic.push((p.name.clone(), p.grad.data().to_vec())));
    model.zero_grads();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = GradCheckReport::default();
    for (slot, (name, grads)) in analytic.iter().enumerate() {
        let coords: Vec<usize> = if grads.len() <= cfg.coords_per_param {
            (0..grads.len()).collect()
        } else {
            let mut c = sample(&mut rng, grads.len(), cfg.coords_per_param).into_vec();
            c.sort_unstable();
            c
        };
        for idx in coords {
            let original = param_value(model, slot, idx);
            set_param_value(model, slot, idx, original + cfg.step);
            let plus = eval(model, false);
            set_param_value(model, slot, idx, original - cfg.step);
            let minus = eval(model, false);
            set_param_value(model, slot, idx, original);
            let (plus, minus) = (plus?, minus?);
            if !plus.loss.is_finite() || !minus.loss.is_finite() {
                return Err(Error::Numeric(format!("non-finite loss while perturbing {name}[{idx}]")));
            }
            if plus.branches != base.branches || minus.branches != base.branches {
                report.skipped_kinks += 1;
                continue;
            }
            let numeric = (plus.loss - minus.loss) / (2.0 * cfg.step);
            let err = relative_error_with_floor(grads[idx], numeric, cfg.scale_floor);
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = err;
                report.worst = Some((name.clone(), idx));
                report.worst_values = (grads[idx], numeric);
            }
        }
    }
    Ok(report)
}

fn param_value<M: ParamSet>(model: &mut M, slot: usize, idx: usize) -> f64 {
    let mut out = 0.0;
    let mut i = 0;
    model.visit(&mut |p: &Parameter| {
        if i == slot {
            out = p.value.data()[idx];
        }
        i += 1;
    });
    out
}

fn set_param_value<M: ParamSet>(model: &mut M, slot: usize, idx: usize, v: f64) {
    let mut i = 0;
    model.visit_mut(&mut |p: &mut Parameter| {
        if i == slot {
            p.value.data_mut()[idx] = v;
        }
        i += 1;
    });
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::layers::{self, Activation, BranchHasher};
    use crate::kernel::Tensor;
    use rand::Rng;

    struct Quadratic(Parameter);

    impl ParamSet for Quadratic {
        fn visit(&self, f: &mut dyn FnMut(&Parameter)) {
            f(&self.0)
        }
        fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
            f(&mut self.0)
        }
    }

    #[test]
    fn quadratic_norm_matches_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w: Vec<f64> = (0..12).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let mut model = Quadratic(Parameter::new("w", Tensor::new(vec![3, 4], w).unwrap()));
        let report = gradient_check(
            &mut model,
            |m, grad| {
                let loss = m.0.value.data().iter().map(|v| v * v).sum();
                if grad {
                    let g = m.0.value.scale(2.0);
                    m.0.accumulate(&g)?;
                }
                Ok(Probe::smooth(loss))
            },
            &GradCheckConfig::default(),
        )
        .unwrap();
        assert_eq!(report.checked, 12);
        assert!(report.max_rel_error < 1e-6, "{report:?}");
    }

    #[test]
    fn scale_floor_absorbs_roundoff_on_exact_zero_gradients() {
        // `(a² + b) − b` is flat in b, but finite differences in b see roundoff.
        let mut model = Quadratic(Parameter::new("w", Tensor::vector(vec![0.7, 0.3])));
        let eval = |m: &mut Quadratic, grad: bool| {
            let (a, b) = (m.0.value.data()[0], m.0.value.data()[1]);
            if grad {
                m.0.accumulate(&Tensor::vector(vec![2.0 * a, 0.0]))?;
            }
            Ok(Probe::smooth((a * a + b) - b))
        };
        let cfg = GradCheckConfig {
            scale_floor: 1e-6,
            ..GradCheckConfig::default()
        };
        let report = gradient_check(&mut model, eval, &cfg).unwrap();
        assert_eq!(report.checked, 2);
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    #[test]
    fn relu_kink_coordinates_are_skipped() {
        // loss = relu(w), evaluated right at the kink.
        let mut model = Quadratic(Parameter::new("w", Tensor::vector(vec![0.0, 1.0])));
        let report = gradient_check(
            &mut model,
            |m, grad| {
                let x = Tensor::new(vec![1, 2], m.0.value.data().to_vec()).unwrap();
                let (y, cache) = layers::activation_forward(Activation::Relu, &x);
                let mut h = BranchHasher::default();
                cache.hash_branches(&mut h);
                if grad {
                    let g = layers::activation_backward(cache, &Tensor::filled(&[1, 2], 1.0))?;
                    m.0.accumulate(&g.reshape(&[2])?)?;
                }
                Ok(Probe {
                    loss: y.data().iter().sum(),
                    branches: h.finish(),
                })
            },
            &GradCheckConfig::default(),
        )
        .unwrap();
        assert_eq!(report.skipped_kinks, 1);
        assert_eq!(report.checked, 1);
        assert!(report.max_rel_error < 1e-9);
    }

    #[test]
    fn non_finite_loss_is_an_error() {
        let mut model = Quadratic(Parameter::new("w", Tensor::vector(vec![1.0])));
        let res = gradient_check(&mut model, |_, _| Ok(Probe::smooth(f64::NAN)), &GradCheckConfig::default());
        assert!(matches!(res, Err(Error::Numeric(_))));
    }

    #[test]
    fn wrong_gradient_is_detected() {
        let mut model = Quadratic(Parameter::new("w", Tensor::vector(vec![1.5, -0.5])));
        let report = gradient_check(
            &mut model,
            |m, grad| {
                let loss = m.0.value.data().iter().map(|v| v * v).sum();
                if grad {
                    let g = m.0.value.scale(3.0);
                    m.0.accumulate(&g)?;
                }
                Ok(Probe::smooth(loss))
            },
            &GradCheckConfig::default(),
        )
        .unwrap();
        assert!((report.max_rel_error - 0.2).abs() < 1e-6);
    }
}
