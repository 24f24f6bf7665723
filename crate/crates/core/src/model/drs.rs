use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::interaction::{self, pair_count};
use crate::data::{Batch, Task};
use crate::error::{Error, Result};
use crate::kernel::layers::{self, ActivationCache, AffineCache, BranchHasher};
use crate::kernel::{standard_normal, Activation, Mode, ParamSet, Parameter, Tensor};
use crate::mlp::{glorot_uniform, Mlp, MlpCache, MlpConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    DeepFm,
    Ipnn,
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "deepfm" => Ok(ModelKind::DeepFm),
            "ipnn" => Ok(ModelKind::Ipnn),
            other => Err(Error::Config(format!("unknown model kind {other:?} (expected deepfm or ipnn)"))),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::DeepFm => "deepfm",
            ModelKind::Ipnn => "ipnn",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrsConfig {
    pub kind: ModelKind,
    pub embedding_dim: usize,
    pub mlp: MlpConfig,
    /// Std of the Gaussian init for embeddings and first-order weights.
    pub init_std: f64,
}

impl Default for DrsConfig {
    fn default() -> Self {
        DrsConfig {
            kind: ModelKind::DeepFm,
            embedding_dim: 16,
            mlp: MlpConfig::default(),
            init_std: 0.01,
        }
    }
}

/// DeepFM / IPNN recommender network.
///
/// DeepFM: `h_out = MLP(flatten E) + l_fm` (scalar broadcast over the MLP
/// output). IPNN: `h_out = MLP([⟨w,x⟩ ∥ pairwise products ∥ flatten E])`.
/// The head is an affine map followed by sigmoid (binary), softmax
/// (multiclass) or identity (regression).
#[derive(Debug, Clone, PartialEq)]
pub struct DrsModel {
    config: DrsConfig,
    kind: ModelKind,
    task: Task,
    dim: usize,
    embeddings: Vec<Parameter>,
    linear: Vec<Parameter>,
    mlp: Mlp,
    head_weight: Parameter,
    head_bias: Parameter,
}

#[derive(Debug)]
pub struct DrsCache {
    batch: Batch,
    embeddings: Tensor,
    mlp: MlpCache,
    head: AffineCache,
    output: ActivationCache,
}

impl DrsCache {
    pub fn hash_branches(&self, hasher: &mut BranchHasher) {
        self.mlp.hash_branches(hasher);
    }
}

pub fn head_activation(task: Task) -> Activation {
    match task {
        Task::Binary => Activation::Sigmoid,
        Task::Multiclass { .. } => Activation::Softmax,
        Task::Regression => Activation::Identity,
    }
}

impl DrsModel {
    pub fn new<R: Rng + ?Sized>(cfg: &DrsConfig, task: Task, cardinalities: &[usize], rng: &mut R) -> Result<Self> {
        let m = cardinalities.len();
        if m == 0 {
            return Err(Error::Config("model needs at least one field".into()));
        }
        if m < 2 {
            return Err(Error::DegenerateInteraction(m));
        }
        if cfg.embedding_dim == 0 {
            return Err(Error::Config("embedding size must be at least 1".into()));
        }
        if let Task::Multiclass { classes } = task {
            if classes < 2 {
                return Err(Error::Config(format!("multiclass head needs at least 2 classes, got {classes}")));
            }
        }
        let d = cfg.embedding_dim;
        let mut gaussian = |rows: usize, cols: usize| -> Tensor {
            let data = (0..rows * cols).map(|_| standard_normal(rng) * cfg.init_std).collect();
            Tensor::new(vec![rows, cols], data).expect("shape matches data")
        };
        let embeddings = cardinalities
            .iter()
            .enumerate()
            .map(|(i, &u)| Parameter::new(format!("embedding.{i}"), gaussian(u, d)))
            .collect();
        let linear = cardinalities
            .iter()
            .enumerate()
            .map(|(i, &u)| Parameter::new(format!("linear.{i}"), gaussian(u, 1)))
            .collect();
        let mlp_in = match cfg.kind {
            ModelKind::DeepFm => m * d,
            ModelKind::Ipnn => 1 + pair_count(m) + m * d,
        };
        let mlp = Mlp::new("mlp", mlp_in, &cfg.mlp, rng)?;
        let out = task.output_dim();
        let head_weight = Parameter::new("head.weight", glorot_uniform(rng, mlp.output_dim(), out));
        let head_bias = Parameter::new("head.bias", Tensor::zeros(&[out]));
        Ok(DrsModel {
            config: cfg.clone(),
            kind: cfg.kind,
            task,
            dim: d,
            embeddings,
            linear,
            mlp,
            head_weight,
            head_bias,
        })
    }

    pub fn config(&self) -> &DrsConfig {
        &self.config
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn num_fields(&self) -> usize {
        self.embeddings.len()
    }

    pub fn embedding_dim(&self) -> usize {
        self.dim
    }

    pub fn cardinalities(&self) -> Vec<usize> {
        self.embeddings.iter().map(|e| e.value.rows()).collect()
    }

    /// Forward pass. Train mode applies dropout and batch statistics; call
    /// [`DrsModel::update_running_stats`] with the cache to commit them.
    pub fn forward(&self, batch: &Batch, mode: &mut Mode<'_>) -> Result<(Tensor, DrsCache)> {
        let e = interaction::embed_lookup(batch, &self.embeddings)?;
        let (b_n, m, d) = (batch.len(), self.num_fields(), self.dim);
        let flat = e.clone().reshape(&[b_n, m * d])?;
        let lin = interaction::linear_term(batch, &self.linear)?;

        let (h_out, mlp_cache) = match self.kind {
            ModelKind::DeepFm => {
                let mut l_fm = interaction::pairwise_sum(&e)?;
                l_fm.add_assign(&lin)?;
                let (mut h, cache) = self.mlp.forward(&flat, mode)?;
                for r in 0..b_n {
                    let l = l_fm.data()[r];
                    h.row_mut(r).iter_mut().for_each(|v| *v += l);
                }
                (h, cache)
            }
            ModelKind::Ipnn => {
                let products = interaction::pairwise_inner_products(&e)?;
                let input = Tensor::concat_cols(&[&lin, &products, &flat])?;
                self.mlp.forward(&input, mode)?
            }
        };
        let (z, head) = layers::affine_forward(&h_out, &self.head_weight, &self.head_bias)?;
        let (pred, output) = layers::activation_forward(head_activation(self.task), &z);
        Ok((
            pred,
            DrsCache {
                batch: batch.clone(),
                embeddings: e,
                mlp: mlp_cache,
                head,
                output,
            },
        ))
    }

    /// Eval-mode prediction; never touches randomness or running statistics.
    pub fn predict(&self, batch: &Batch) -> Result<Tensor> {
        Ok(self.forward(batch, &mut Mode::Eval)?.0)
    }

    pub fn update_running_stats(&mut self, cache: &DrsCache) {
        self.mlp.update_running_stats(&cache.mlp);
    }

    /// Backpropagates `∂L/∂ŷ` and accumulates into every parameter gradient.
    pub fn backward(&mut self, cache: DrsCache, grad_pred: &Tensor) -> Result<()> {
        let dz = layers::activation_backward(cache.output, grad_pred)?;
        let dh = layers::affine_backward(cache.head, &dz, &mut self.head_weight, &mut self.head_bias)?.input;
        let (b_n, m, d) = (cache.batch.len(), self.num_fields(), self.dim);
        let e = &cache.embeddings;

        let de = match self.kind {
            ModelKind::DeepFm => {
                let dl_fm = Tensor::new(vec![b_n, 1], (0..b_n).map(|r| dh.row(r).iter().sum()).collect())?;
                interaction::linear_term_backward(&cache.batch, &dl_fm, &mut self.linear)?;
                let mut de = interaction::pairwise_sum_backward(e, &dl_fm)?;
                let dflat = self.mlp.backward(cache.mlp, &dh)?;
                de.add_assign(&dflat.reshape(&[b_n, m, d])?)?;
                de
            }
            ModelKind::Ipnn => {
                let dinput = self.mlp.backward(cache.mlp, &dh)?;
                let parts = dinput.split_cols(&[1, pair_count(m), m * d])?;
                interaction::linear_term_backward(&cache.batch, &parts[0], &mut self.linear)?;
                let mut de = interaction::pairwise_inner_products_backward(e, &parts[1])?;
                de.add_assign(&parts[2].clone().reshape(&[b_n, m, d])?)?;
                de
            }
        };
        interaction::embed_backward(&cache.batch, &de, &mut self.embeddings)
    }
}

impl ParamSet for DrsModel {
    fn visit(&self, f: &mut dyn FnMut(&Parameter)) {
        self.embeddings.iter().for_each(&mut *f);
        self.linear.iter().for_each(&mut *f);
        self.mlp.visit(f);
        f(&self.head_weight);
        f(&self.head_bias);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        self.embeddings.iter_mut().for_each(&mut *f);
        self.linear.iter_mut().for_each(&mut *f);
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
