use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Prediction task of a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Task {
    Binary,
    Multiclass { classes: usize },
    Regression,
}

impl Task {
    /// Width of the prediction head.
    pub fn output_dim(&self) -> usize {
        match self {
            Task::Binary | Task::Regression => 1,
            Task::Multiclass { classes } => *classes,
        }
    }

    /// Number of classes seen by classification losses (2 for binary).
    pub fn classes(&self) -> Option<usize> {
        match self {
            Task::Binary => Some(2),
            Task::Multiclass { classes } => Some(*classes),
            Task::Regression => None,
        }
    }

    pub fn is_classification(&self) -> bool {
        !matches!(self, Task::Regression)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FieldKind {
    /// Index 0 is reserved for out-of-vocabulary values; vocabulary entry `i`
    /// encodes to `i + 1`.
    Categorical { vocabulary: Vec<String> },
    /// Right-open buckets `(−∞,b₀), [b₀,b₁), …, [b_last,∞)`.
    Numeric { boundaries: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldDescriptor {
    pub name: String,
    #[serde(flatten)]
    pub kind: FieldKind,
}

impl FieldDescriptor {
    pub fn categorical(name: impl Into<String>, vocabulary: Vec<String>) -> Self {
        FieldDescriptor {
            name: name.into(),
            kind: FieldKind::Categorical { vocabulary },
        }
    }

    pub fn numeric(name: impl Into<String>, boundaries: Vec<f64>) -> Self {
        FieldDescriptor {
            name: name.into(),
            kind: FieldKind::Numeric { boundaries },
        }
    }

    /// Number of distinct encoded indices (`u_i`).
    pub fn cardinality(&self) -> usize {
        match &self.kind {
            FieldKind::Categorical { vocabulary } => vocabulary.len() + 1,
            FieldKind::Numeric { boundaries } => boundaries.len() + 1,
        }
    }

    fn validate(&self) -> Result<()> {
        match &self.kind {
            FieldKind::Categorical { vocabulary } => {
                if vocabulary.is_empty() {
                    return Err(Error::Config(format!("field {}: empty vocabulary", self.name)));
                }
                let mut seen = HashSet::new();
                for v in vocabulary {
                    if !seen.insert(v) {
                        return Err(Error::Config(format!("field {}: duplicate vocabulary entry {v:?}", self.name)));
                    }
                }
            }
            FieldKind::Numeric { boundaries } => {
                if boundaries.is_empty() {
                    return Err(Error::Config(format!("field {}: no bucket boundaries", self.name)));
                }
                if boundaries.iter().any(|b| !b.is_finite()) || boundaries.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(Error::Config(format!(
                        "field {}: boundaries must be finite and strictly ascending",
                        self.name
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub task: Task,
    /// Name of the label column.
    pub label: String,
    /// Optional raw label strings for multiclass tasks; position is the class id.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_values: Option<Vec<String>>,
    pub fields: Vec<FieldDescriptor>,
}

impl FeatureSchema {
    pub fn validate(&self) -> Result<()> {
        if self.fields.is_empty() {
            return Err(Error::Config("schema declares no feature fields".into()));
        }
        let mut names = HashSet::new();
        for f in &self.fields {
            if !names.insert(f.name.as_str()) {
                return Err(Error::Config(format!("duplicate field name {:?}", f.name)));
            }
            if f.name == self.label {
                return Err(Error::Config(format!("field {:?} collides with the label column", f.name)));
            }
            f.validate()?;
        }
        match self.task {
            Task::Multiclass { classes } if classes < 2 => {
                return Err(Error::Config(format!("multiclass task needs at least 2 classes, got {classes}")));
            }
            Task::Multiclass { classes } => {
                if let Some(values) = &self.label_values {
                    if values.len() != classes {
                        return Err(Error::Config(format!(
                            "label_values lists {} entries for {classes} classes",
                            values.len()
                        )));
                    }
                }
            }
            _ => {}
        }
        Ok(())
    }

    pub fn num_fields(&self) -> usize {
        self.fields.len()
    }

    pub fn cardinalities(&self) -> Vec<usize> {
        self.fields.iter().map(FieldDescriptor::cardinality).collect()
    }

    /// Hex SHA-256 of the canonical JSON form; identifies the schema in checkpoints.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("schema serializes");
        let digest = Sha256::digest(&canonical);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::from(e).with_path(path))?;
        let schema: FeatureSchema = serde_json::from_str(&text).map_err(|e| Error::from(e).with_path(path))?;
        schema.validate().map_err(|e| e.with_path(path))?;
        Ok(schema)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::from(e).with_path(path))
    }

    pub(crate) fn vocab_maps(&self) -> Vec<Option<HashMap<String, u32>>> {
        self.fields
            .iter()
            .map(|f| match &f.kind {
                FieldKind::Categorical { vocabulary } => Some(
                    vocabulary
                        .iter()
                        .enumerate()
                        .map(|(i, v)| (v.clone(), i as u32 + 1))
                        .collect(),
                ),
                FieldKind::Numeric { .. } => None,
            })
            .collect()
    }
}
