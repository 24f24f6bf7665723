//! Fully-connected stack: affine → batchnorm → relu → dropout per hidden layer.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::layers::{
    self, Activation, ActivationCache, AffineCache, BatchNormCache, BranchHasher, DropoutCache,
};
use crate::kernel::{BatchNorm, Mode, Parameter, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub hidden: Vec<usize>,
    pub dropout: f64,
    pub batch_norm: bool,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            hidden: vec![128, 128],
            dropout: 0.2,
            batch_norm: true,
        }
    }
}

impl MlpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.iter().any(|&h| h == 0) {
            return Err(Error::Config("hidden layer sizes must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout rate must lie in [0, 1), got {}", self.dropout)));
        }
        Ok(())
    }
}

/// Glorot-uniform `fan_in × fan_out` matrix.
pub fn glorot_uniform<R: Rng + ?Sized>(rng: &mut R, fan_in: usize, fan_out: usize) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out).map(|_| rng.gen_range(-limit..limit)).collect();
    Tensor::new(vec![fan_in, fan_out], data).expect("shape matches data")
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseBlock {
    pub weight: Parameter,
    pub bias: Parameter,
    pub norm: Option<BatchNorm>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    input_dim: usize,
    dropout: f64,
    blocks: Vec<DenseBlock>,
}

#[derive(Debug)]
struct BlockCache {
    affine: AffineCache,
    norm: Option<BatchNormCache>,
    act: ActivationCache,
    drop: DropoutCache,
}

#[derive(Debug)]
pub struct MlpCache {
    blocks: Vec<BlockCache>,
}

impl MlpCache {
    pub fn hash_branches(&self, hasher: &mut BranchHasher) {
        for b in &self.blocks {
            b.act.hash_branches(hasher);
        }
    }
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(name: &str, input_dim: usize, cfg: &MlpConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        if input_dim == 0 {
            return Err(Error::Config(format!("{name}: input dimension must be positive")));
        }
        let mut blocks = Vec::with_capacity(cfg.hidden.len());
        let mut fan_in = input_dim;
        for (i, &width) in cfg.hidden.iter().enumerate() {
            let prefix = format!("{name}.{i}");
            blocks.push(DenseBlock {
                weight: Parameter::new(format!("{prefix}.weight"), glorot_uniform(rng, fan_in, width)),
                bias: Parameter::new(format!("{prefix}.bias"), Tensor::zeros(&[width])),
                norm: cfg.batch_norm.then(|| BatchNorm::new(&format!("{prefix}.bn"), width)),
            });
            fan_in = width;
        }
        Ok(Mlp {
            input_dim,
            dropout: cfg.dropout,
            blocks,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.blocks
            .last()
            .map_or(self.input_dim, |b| b.bias.value.len())
    }

    pub fn forward(&self, x: &Tensor, mode: &mut Mode<'_>) -> Result<(Tensor, MlpCache)> {
        if x.cols() != self.input_dim {
            return Err(Error::dimension("mlp input", x.shape(), &[x.rows(), self.input_dim]));
        }
        let mut h = x.clone();
        let mut caches = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (z, affine) = layers::affine_forward(&h, &block.weight, &block.bias)?;
            let (z, norm) = match &block.norm {
                Some(bn) => {
                    let (z, c) = bn.forward(&z, mode.is_train())?;
                    (z, Some(c))
                }
                None => (z, None),
            };
            let (a, act) = layers::activation_forward(Activation::Relu, &z);
            let (out, drop) = match mode {
                Mode::Train(rng) => layers::dropout_forward(&a, self.dropout, true, &mut **rng)?,
                Mode::Eval => layers::dropout_eval(&a),
            };
            caches.push(BlockCache { affine, norm, act, drop });
            h = out;
        }
        Ok((h, MlpCache { blocks: caches }))
    }

    /// Applies the batch statistics recorded by a train-mode forward.
    pub fn update_running_stats(&mut self, cache: &MlpCache) {
        for (block, c) in self.blocks.iter_mut().zip(&cache.blocks) {
            if let (Some(bn), Some(nc)) = (&mut block.norm, &c.norm) {
                bn.update_running_stats(nc);
            }
        }
    }

    pub fn backward(&mut self, cache: MlpCache, grad_out: &Tensor) -> Result<Tensor> {
        let mut grad = grad_out.clone();
        for (block, c) in self.blocks.iter_mut().zip(cache.blocks).rev() {
            grad = layers::dropout_backward(c.drop, &grad);
            grad = layers::activation_backward(c.act, &grad)?;
            if let (Some(bn), Some(nc)) = (&mut block.norm, c.norm) {
                grad = bn.backward(nc, &grad)?;
            }
            grad = layers::affine_backward(c.affine, &grad, &mut block.weight, &mut block.bias)?.input;
        }
        Ok(grad)
    }

    pub fn visit(&self, f: &mut dyn FnMut(&Parameter)) {
        for b in &self.blocks {
            f(&b.weight);
            f(&b.bias);
            if let Some(bn) = &b.norm {
                f(&bn.scale);
                f(&bn.shift);
            }
        }
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        for b in &mut self.blocks {
            f(&mut b.weight);
            f(&mut b.bias);
            if let Some(bn) = &mut b.norm {
                f(&mut bn.scale);
                f(&mut bn.shift);
            }
        }
    }

    pub fn visit_buffers(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        for b in &self.blocks {
            if let Some(bn) = &b.norm {
                let base = bn.scale.name.trim_end_matches(".scale");
                f(&format!("{base}.running_mean"), &bn.running_mean);
                f(&format!("{base}.running_var"), &bn.running_var);
            }
        }
    }

    pub fn visit_buffers_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        for b in &mut self.blocks {
            if let Some(bn) = &mut b.norm {
                let base = bn.scale.name.trim_end_matches(".scale").to_string();
                f(&format!("{base}.running_mean"), &mut bn.running_mean);
                f(&format!("{base}.running_var"), &mut bn.running_var);
            }
        }
    }
}
