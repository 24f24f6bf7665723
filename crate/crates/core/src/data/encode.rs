use std::collections::HashMap;
use std::fs::File;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::schema::{FeatureSchema, FieldKind, Task};
use crate::error::{Error, Result};

/// One example as per-field indices plus its label. Class labels are stored
/// as their class id in `label`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedExample {
    pub indices: Vec<u32>,
    pub label: f64,
}

impl EncodedExample {
    pub fn class(&self) -> usize {
        self.label as usize
    }
}

/// Bucket index of `value` under right-open intervals
/// `(−∞,b₀), [b₀,b₁), …, [b_last,∞)`.
pub fn bucketize(value: f64, boundaries: &[f64]) -> Result<usize> {
    if value.is_nan() {
        return Err(Error::Data("cannot bucketize NaN".into()));
    }
    if boundaries.is_empty() {
        return Err(Error::Config("bucketize needs at least one boundary".into()));
    }
    Ok(boundaries.partition_point(|&b| b <= value))
}

/// Schema-bound encoder with prebuilt vocabulary lookups.
#[derive(Debug, Clone)]
pub struct Encoder {
    schema: FeatureSchema,
    vocab: Vec<Option<HashMap<String, u32>>>,
    label_lookup: Option<HashMap<String, usize>>,
}

impl Encoder {
    pub fn new(schema: &FeatureSchema) -> Result<Self> {
        schema.validate()?;
        let label_lookup = schema
            .label_values
            .as_ref()
            .map(|v| v.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect());
        Ok(Encoder {
            vocab: schema.vocab_maps(),
            schema: schema.clone(),
            label_lookup,
        })
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    /// Encodes one raw value of field `field`; unseen categories map to 0.
    pub fn encode_value(&self, field: usize, raw: &str) -> Result<u32> {
        let desc = &self.schema.fields[field];
        match (&desc.kind, &self.vocab[field]) {
            (FieldKind::Categorical { .. }, Some(map)) => Ok(map.get(raw.trim()).copied().unwrap_or(0)),
            (FieldKind::Numeric { boundaries }, _) => {
                let v: f64 = raw
                    .trim()
                    .parse()
                    .map_err(|_| Error::Data(format!("field {}: {raw:?} is not a number", desc.name)))?;
                bucketize(v, boundaries)
                    .map(|b| b as u32)
                    .map_err(|e| Error::Data(format!("field {}: {e}", desc.name)))
            }
            _ => unreachable!("vocabulary built for every categorical field"),
        }
    }

    pub fn encode_label(&self, raw: &str) -> Result<f64> {
        let raw = raw.trim();
        let bad = || Error::Data(format!("invalid label {raw:?} for task {:?}", self.schema.task));
        match self.schema.task {
            Task::Binary => match raw.parse::<f64>() {
                Ok(v) if v == 0.0 || v == 1.0 => Ok(v),
                _ => Err(bad()),
            },
            Task::Multiclass { classes } => {
                let class = match &self.label_lookup {
                    Some(map) => *map.get(raw).ok_or_else(bad)?,
                    None => raw.parse::<usize>().map_err(|_| bad())?,
                };
                if class >= classes {
                    return Err(bad());
                }
                Ok(class as f64)
            }
            Task::Regression => raw.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(bad),
        }
    }

    /// Encodes a row given as column name → raw value.
    pub fn encode_example(&self, row: &HashMap<String, String>) -> Result<EncodedExample> {
        let lookup = |name: &str| {
            row.get(name)
                .ok_or_else(|| Error::Data(format!("missing field {name:?}")))
        };
        let indices = self
            .schema
            .fields
            .iter()
            .enumerate()
            .map(|(i, f)| self.encode_value(i, lookup(&f.name)?))
            .collect::<Result<Vec<_>>>()?;
        let label = self.encode_label(lookup(&self.schema.label)?)?;
        Ok(EncodedExample { indices, label })
    }

    /// Reads a headered CSV file whose columns include every schema field and the label.
    pub fn read_csv(&self, path: &Path) -> Result<Vec<EncodedExample>> {
        let file = File::open(path).map_err(|e| Error::from(e).with_path(path))?;
        self.read_csv_from(file).map_err(|e| e.with_path(path))
    }

    pub fn read_csv_from<R: std::io::Read>(&self, reader: R) -> Result<Vec<EncodedExample>> {
        let mut rdr = csv::Reader::from_reader(reader);
        let header = rdr.headers()?.clone();
        let column = |name: &str| {
            header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::Data(format!("missing field {name:?} in CSV header")))
        };
        let field_cols = self
            .schema
            .fields
            .iter()
            .map(|f| column(&f.name))
            .collect::<Result<Vec<_>>>()?;
        let label_col = column(&self.schema.label)?;

        let mut out = Vec::new();
        for (line, record) in rdr.records().enumerate() {
            let record = record?;
            let at = |col: usize| {
                record
                    .get(col)
                    .ok_or_else(|| Error::Data(format!("row {}: missing column {col}", line + 2)))
            };
            let indices = field_cols
                .iter()
                .enumerate()
                .map(|(i, &c)| self.encode_value(i, at(c)?))
                .collect::<Result<Vec<_>>>()
                .map_err(|e| Error::Data(format!("row {}: {e}", line + 2)))?;
            let label = self
                .encode_label(at(label_col)?)
                .map_err(|e| Error::Data(format!("row {}: {e}", line + 2)))?;
            out.push(EncodedExample { indices, label });
        }
        Ok(out)
    }
}
