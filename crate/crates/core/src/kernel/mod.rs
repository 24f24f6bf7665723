//! Dense float64 compute kernel: tensors, parameters, layers and a
//! finite-difference gradient oracle.

pub mod gradcheck;
pub mod layers;
mod tensor;

pub use gradcheck::{gradient_check, GradCheckConfig, GradCheckReport, Probe};
pub use layers::{Activation, BatchNorm, BranchHasher};
pub use tensor::{Parameter, Tensor};

use rand::{Rng, RngCore};

/// Forward-pass mode. Train mode owns a borrow of the dropout stream.
pub enum Mode<'a> {
    Train(&'a mut dyn RngCore),
    Eval,
}

impl Mode<'_> {
    pub fn is_train(&self) -> bool {
        matches!(self, Mode::Train(_))
    }
}

/// A model whose trainable parameters can be enumerated in a stable order.
///
/// The visiting order defines optimizer slots and checkpoint layout, so it
/// must never depend on runtime state.
pub trait ParamSet {
    fn visit(&self, f: &mut dyn FnMut(&Parameter));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter));

    /// Non-trainable state (batchnorm running statistics), in a stable order.
    fn visit_buffers(&self, _f: &mut dyn FnMut(&str, &Tensor)) {}
    fn visit_buffers_mut(&mut self, _f: &mut dyn FnMut(&str, &mut Tensor)) {}

    fn zero_grads(&mut self) {
        self.visit_mut(&mut |p| p.zero_grad());
    }

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |p| n += p.value.len());
        n
    }

    /// Snapshot of every parameter value, in visiting order.
    fn snapshot(&self) -> Vec<Tensor> {
        let mut out = Vec::new();
        self.visit(&mut |p| out.push(p.value.clone()));
        out
    }
}

/// Standard normal draw (Box–Muller, one output per call).
pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}
