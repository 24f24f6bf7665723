//! Planted-structure tabular generator.
//!
//! Every field value gets a first-order weight and a hidden rank-`r` factor;
//! the latent score of an example is the sum of first-order weights plus the
//! sum of pairwise factor inner products, which is exactly the function
//! class a factorization machine can represent. Labels are drawn from the
//! score with task-appropriate noise.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::encode::EncodedExample;
use super::schema::{FeatureSchema, FieldDescriptor, Task};
use crate::error::{Error, Result};
use crate::kernel::layers::sigmoid;
use crate::kernel::standard_normal;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub fields: usize,
    /// Raw distinct values per field; a single entry applies to every field.
    pub cardinalities: Vec<usize>,
    pub count: usize,
    pub task: Task,
    pub seed: u64,
    pub rank: usize,
    /// Standard deviation of the pairwise-interaction part of the score.
    pub interaction_scale: f64,
    /// Standard deviation of the first-order part of the score.
    pub linear_scale: f64,
    /// Probability of flipping a binary label after sampling.
    pub label_noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            fields: 8,
            cardinalities: vec![32],
            count: 50_000,
            task: Task::Binary,
            seed: 0,
            rank: 4,
            interaction_scale: 2.0,
            linear_scale: 1.0,
            label_noise: 0.0,
        }
    }
}

impl SynthConfig {
    fn cardinality(&self, field: usize) -> usize {
        if self.cardinalities.len() == 1 {
            self.cardinalities[0]
        } else {
            self.cardinalities[field]
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.fields == 0 {
            return bad("synthetic data needs at least one field".into());
        }
        if self.cardinalities.len() != 1 && self.cardinalities.len() != self.fields {
            return bad(format!(
                "{} cardinalities given for {} fields",
                self.cardinalities.len(),
                self.fields
            ));
        }
        if self.cardinalities.iter().any(|&c| c == 0) {
            return bad("cardinalities must be positive".into());
        }
        if self.count < 100 {
            return bad(format!("synthetic data needs at least 100 examples, got {}", self.count));
        }
        if self.rank == 0 {
            return bad("rank must be positive".into());
        }
        if !(0.0..0.5).contains(&self.label_noise) {
            return bad(format!("label noise must lie in [0, 0.5), got {}", self.label_noise));
        }
        if let Task::Multiclass { classes } = self.task {
            if classes < 2 {
                return bad("multiclass synthetic data needs at least 2 classes".into());
            }
        }
        Ok(())
    }
}

/// Generated dataset: raw string tokens per field plus the label column.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub schema: FeatureSchema,
    /// Row-major `count × fields` raw value ids (token `v{id}`).
    pub values: Vec<u32>,
    pub labels: Vec<f64>,
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthData> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let m = cfg.fields;
    let pairs = (m * (m - 1) / 2).max(1) as f64;

    // Per-entry std so that the interaction sum has std `interaction_scale`:
    // Var Σ_{i<j}⟨z_i,z_j⟩ = pairs · rank · σ⁴.
    let factor_std = (cfg.interaction_scale.powi(2) / (pairs * cfg.rank as f64)).powf(0.25);
    let linear_std = cfg.linear_scale / (m as f64).sqrt();
    let mut weights = Vec::with_capacity(m);
    let mut factors = Vec::with_capacity(m);
    for f in 0..m {
        let card = cfg.cardinality(f);
        weights.push((0..card).map(|_| standard_normal(&mut rng) * linear_std).collect::<Vec<_>>());
        factors.push(
            (0..card * cfg.rank)
                .map(|_| standard_normal(&mut rng) * factor_std)
                .collect::<Vec<_>>(),
        );
    }

    let score_std = (cfg.interaction_scale.powi(2) + cfg.linear_scale.powi(2)).sqrt();
    let mut values = Vec::with_capacity(cfg.count * m);
    let mut labels = Vec::with_capacity(cfg.count);
    let mut sum = vec![0.0; cfg.rank];
    for _ in 0..cfg.count {
        let row: Vec<u32> = (0..m).map(|f| rng.gen_range(0..cfg.cardinality(f)) as u32).collect();
        let mut linear = 0.0;
        let mut sq_norms = 0.0;
        sum.iter_mut().for_each(|s| *s = 0.0);
        for (f, &v) in row.iter().enumerate() {
            linear += weights[f][v as usize];
            let z = &factors[f][v as usize * cfg.rank..(v as usize + 1) * cfg.rank];
            for (s, zk) in sum.iter_mut().zip(z) {
                *s += zk;
                sq_norms += zk * zk;
            }
        }
        let pairwise = 0.5 * (sum.iter().map(|s| s * s).sum::<f64>() - sq_norms);
        let score = linear + pairwise;
        let label = match cfg.task {
            Task::Binary => {
                let mut y = (rng.gen::<f64>() < sigmoid(score)) as u8 as f64;
                if rng.gen::<f64>() < cfg.label_noise {
                    y = 1.0 - y;
                }
                y
            }
            Task::Multiclass { classes } => {
                let u: f64 = rng.gen_range(1e-12..1.0 - 1e-12);
                let latent = score + (u / (1.0 - u)).ln();
                ordinal_class(latent, classes, score_std) as f64
            }
            Task::Regression => score + 0.5 * standard_normal(&mut rng),
        };
        values.extend_from_slice(&row);
        labels.push(label);
    }

    let schema = FeatureSchema {
        task: cfg.task,
        label: "label".into(),
        label_values: None,
        fields: (0..m)
            .map(|f| FieldDescriptor::categorical(format!("f{f}"), (0..cfg.cardinality(f)).map(|v| format!("v{v}")).collect()))
            .collect(),
    };
    Ok(SynthData { schema, values, labels })
}

fn ordinal_class(latent: f64, classes: usize, spread: f64) -> usize {
    // k−1 evenly spaced thresholds across ±1.5 score std.
    (0..classes - 1)
        .filter(|&j| {
            let t = if classes == 2 {
                0.0
            } else {
                spread * (-1.5 + 3.0 * j as f64 / (classes - 2) as f64)
            };
            latent >= t
        })
        .count()
}

impl SynthData {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Encoded examples without a CSV round trip (vocabulary id = raw id + 1).
    pub fn encoded(&self) -> Vec<EncodedExample> {
        let m = self.schema.num_fields();
        self.labels
            .iter()
            .enumerate()
            .map(|(i, &label)| EncodedExample {
                indices: self.values[i * m..(i + 1) * m].iter().map(|v| v + 1).collect(),
                label,
            })
            .collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::from(e).with_path(path))?;
        let m = self.schema.num_fields();
        let mut header: Vec<String> = self.schema.fields.iter().map(|f| f.name.clone()).collect();
        header.push(self.schema.label.clone());
        w.write_record(&header)?;
        for (i, &label) in self.labels.iter().enumerate() {
            let mut record: Vec<String> = self.values[i * m..(i + 1) * m].iter().map(|v| format!("v{v}")).collect();
            record.push(match self.schema.task {
                Task::Regression => format!("{label}"),
                _ => format!("{}", label as usize),
            });
            w.write_record(&record)?;
        }
        w.flush().map_err(|e| Error::from(e).with_path(path))?;
        Ok(())
    }

    /// Writes `<dir>/data.csv` and `<dir>/schema.json`.
    pub fn write_to_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::from(e).with_path(dir))?;
        self.write_csv(&dir.join("data.csv"))?;
        self.schema.save(&dir.join("schema.json"))
    }
}

/// Copy of `examples` with labels permuted; destroys any feature/label signal.
pub fn shuffle_labels(examples: &[EncodedExample], seed: u64) -> Vec<EncodedExample> {
    let mut labels: Vec<f64> = examples.iter().map(|e| e.label).collect();
    labels.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    examples
        .iter()
        .zip(labels)
        .map(|(e, label)| EncodedExample {
            indices: e.indices.clone(),
            label,
        })
        .collect()
}
