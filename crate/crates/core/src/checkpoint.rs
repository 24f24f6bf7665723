//! On-disk model state: a JSON header next to a flat little-endian f64 blob.
//!
//! The header names every tensor with its shape and element offset, so a
//! loader can rebuild the architecture from the header alone and then copy
//! values in by name. Values survive the round trip bit for bit.

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::controller::{Controller, ControllerConfig};
use crate::data::Task;
use crate::error::{Error, Result};
use crate::kernel::{ParamSet, Tensor};
use crate::model::{DrsConfig, DrsModel};
use crate::optim::{Adam, AdamConfig};

pub const FORMAT: &str = "autoloss-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Param,
    Buffer,
    AdamM,
    AdamV,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub role: Role,
    pub shape: Vec<usize>,
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelMeta {
    Drs {
        task: Task,
        config: DrsConfig,
        cardinalities: Vec<usize>,
    },
    Controller {
        task: Task,
        config: ControllerConfig,
        candidates: Vec<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerMeta {
    pub config: AdamConfig,
    pub step: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub format: String,
    pub version: u32,
    pub schema_hash: Option<String>,
    pub model: ModelMeta,
    pub optimizer: Option<OptimizerMeta>,
    pub data_file: String,
    pub total_elements: usize,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone)]
pub struct Loaded<M> {
    pub model: M,
    pub optimizer: Option<Adam>,
    pub schema_hash: Option<String>,
}

pub fn save_drs(path: &Path, model: &DrsModel, optimizer: Option<&Adam>, schema_hash: Option<&str>) -> Result<()> {
    let meta = ModelMeta::Drs {
        task: model.task(),
        config: model.config().clone(),
        cardinalities: model.cardinalities().to_vec(),
    };
    save(path, meta, model, optimizer, schema_hash)
}

pub fn save_controller(
    path: &Path,
    controller: &Controller,
    optimizer: Option<&Adam>,
    schema_hash: Option<&str>,
) -> Result<()> {
    let meta = ModelMeta::Controller {
        task: controller.task(),
        config: controller.config().clone(),
        candidates: controller.candidates().to_vec(),
    };
    save(path, meta, controller, optimizer, schema_hash)
}

pub fn load_drs(path: &Path) -> Result<Loaded<DrsModel>> {
    let (header, blob) = read(path)?;
    let mut model = match &header.model {
        ModelMeta::Drs {
            task,
            config,
            cardinalities,
        } => DrsModel::new(config, *task, cardinalities, &mut ChaCha8Rng::seed_from_u64(0))?,
        _ => return Err(Error::Checkpoint("expected a DRS checkpoint, found a controller".into()).with_path(path)),
    };
    let optimizer = fill(&header, &blob, &mut model).map_err(|e| e.with_path(path))?;
    Ok(Loaded {
        model,
        optimizer,
        schema_hash: header.schema_hash,
    })
}

pub fn load_controller(path: &Path) -> Result<Loaded<Controller>> {
    let (header, blob) = read(path)?;
    let mut model = match &header.model {
        ModelMeta::Controller {
            task,
            config,
            candidates,
        } => Controller::new(config, *task, candidates.clone(), &mut ChaCha8Rng::seed_from_u64(0))?,
        _ => return Err(Error::Checkpoint("expected a controller checkpoint, found a DRS".into()).with_path(path)),
    };
    let optimizer = fill(&header, &blob, &mut model).map_err(|e| e.with_path(path))?;
    Ok(Loaded {
        model,
        optimizer,
        schema_hash: header.schema_hash,
    })
}

/// Reads just the header, e.g. to inspect a controller's catalog.
pub fn read_header(path: &Path) -> Result<Header> {
    let text = fs::read_to_string(path).map_err(|e| Error::from(e).with_path(path))?;
    let header: Header = serde_json::from_str(&text).map_err(|e| Error::from(e).with_path(path))?;
    if header.format != FORMAT || header.version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint {} v{} (want {FORMAT} v{VERSION})",
            header.format, header.version
        ))
        .with_path(path));
    }
    Ok(header)
}

fn blob_path(path: &Path) -> PathBuf {
    path.with_extension("bin")
}

fn save<M: ParamSet>(
    path: &Path,
    model: ModelMeta,
    params: &M,
    optimizer: Option<&Adam>,
    schema_hash: Option<&str>,
) -> Result<()> {
    let mut tensors = Vec::new();
    let mut data: Vec<f64> = Vec::new();
    let mut push = |name: &str, role: Role, t: &Tensor| {
        tensors.push(TensorEntry {
            name: name.to_string(),
            role,
            shape: t.shape().to_vec(),
            offset: data.len(),
        });
        data.extend_from_slice(t.data());
    };
    let mut names = Vec::new();
    params.visit(&mut |p| {
        names.push(p.name.clone());
        push(&p.name, Role::Param, &p.value);
    });
    params.visit_buffers(&mut |name, t| push(name, Role::Buffer, t));
    if let Some(adam) = optimizer {
        if adam.m.len() != names.len() {
            return Err(Error::dimension("checkpoint adam slots", &[adam.m.len()], &[names.len()]));
        }
        for ((name, m), v) in names.iter().zip(&adam.m).zip(&adam.v) {
            push(name, Role::AdamM, m);
            push(name, Role::AdamV, v);
        }
    }
    let bin = blob_path(path);
    let header = Header {
        format: FORMAT.into(),
        version: VERSION,
        schema_hash: schema_hash.map(str::to_string),
        model,
        optimizer: optimizer.map(|a| OptimizerMeta {
            config: a.config,
            step: a.step,
        }),
        data_file: bin
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| Error::Checkpoint(format!("bad checkpoint path {}", path.display())))?
            .to_string(),
        total_elements: data.len(),
        tensors,
    };
    let mut bytes = Vec::with_capacity(data.len() * 8);
    for v in &data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(&bin, bytes).map_err(|e| Error::from(e).with_path(&bin))?;
    let json = serde_json::to_string_pretty(&header)?;
    fs::write(path, json).map_err(|e| Error::from(e).with_path(path))?;
    Ok(())
}

fn read(path: &Path) -> Result<(Header, Vec<f64>)> {
    let header = read_header(path)?;
    let bin = path.with_file_name(&header.data_file);
    let bytes = fs::read(&bin).map_err(|e| Error::from(e).with_path(&bin))?;
    if bytes.len() != header.total_elements * 8 {
        return Err(Error::Checkpoint(format!(
            "data file holds {} bytes, header expects {}",
            bytes.len(),
            header.total_elements * 8
        ))
        .with_path(&bin));
    }
    let blob = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Ok((header, blob))
}

fn slice<'a>(blob: &'a [f64], entry: &TensorEntry) -> Result<&'a [f64]> {
    let n: usize = entry.shape.iter().product();
    blob.get(entry.offset..entry.offset + n)
        .ok_or_else(|| Error::Checkpoint(format!("tensor {} runs past the data file", entry.name)))
}

fn find<'a>(header: &'a Header, name: &str, role: Role) -> Result<&'a TensorEntry> {
    header
        .tensors
        .iter()
        .find(|e| e.name == name && e.role == role)
        .ok_or_else(|| Error::Checkpoint(format!("missing {role:?} tensor {name}")))
}

fn copy_into(header: &Header, blob: &[f64], name: &str, role: Role, target: &mut Tensor) -> Result<()> {
    let entry = find(header, name, role)?;
    if entry.shape != target.shape() {
        return Err(Error::dimension("checkpoint tensor", &entry.shape, target.shape()));
    }
    target.data_mut().copy_from_slice(slice(blob, entry)?);
    Ok(())
}

fn fill<M: ParamSet>(header: &Header, blob: &[f64], model: &mut M) -> Result<Option<Adam>> {
    let mut result = Ok(());
    let mut names = Vec::new();
    model.visit_mut(&mut |p| {
        if result.is_ok() {
            result = copy_into(header, blob, &p.name, Role::Param, &mut p.value);
        }
        p.zero_grad();
        names.push(p.name.clone());
    });
    result?;
    let mut result = Ok(());
    model.visit_buffers_mut(&mut |name, t| {
        if result.is_ok() {
            result = copy_into(header, blob, name, Role::Buffer, t);
        }
    });
    result?;
    let expected = names.len() + header.tensors.iter().filter(|e| e.role == Role::Buffer).count();
    let stored = header.tensors.iter().filter(|e| matches!(e.role, Role::Param | Role::Buffer)).count();
    if stored != expected {
        return Err(Error::Checkpoint(format!(
            "checkpoint holds {stored} model tensors, architecture has {expected}"
        )));
    }
    let Some(meta) = &header.optimizer else {
        return Ok(None);
    };
    let mut adam = Adam::new(meta.config, model);
    adam.step = meta.step;
    for (i, name) in names.iter().enumerate() {
        copy_into(header, blob, name, Role::AdamM, &mut adam.m[i])?;
        copy_into(header, blob, name, Role::AdamV, &mut adam.v[i])?;
    }
    Ok(Some(adam))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controller::InputMode;
    use crate::data::Batch;
    use crate::kernel::Mode;
        use crate::mlp::MlpConfig;
    use crate::model::ModelKind;

    fn small_drs(kind: ModelKind) -> DrsModel {
        let cfg = DrsConfig {
            kind,
            embedding_dim: 4,
            mlp: MlpConfig {
                hidden: vec![6, 5],
                ..MlpConfig::default()
            },
            init_std: 0.1,
        };
        DrsModel::new(&cfg, Task::Binary, &[5, 7, 3], &mut ChaCha8Rng::seed_from_u64(9)).unwrap()
    }

    fn trained_drs(kind: ModelKind) -> (DrsModel, Adam) {
        let mut model = small_drs(kind);
        let mut adam = Adam::new(AdamConfig::default(), &model);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let batch = Batch {
            indices: vec![1, 2, 0, 4, 6, 2, 0, 3, 1, 2, 0, 2],
            fields: 3,
            labels: vec![1.0, 0.0, 1.0, 0.0],
        };
        for _ in 0..3 {
            let (pred, cache) = model.forward(&batch, &mut Mode::Train(&mut rng)).unwrap();
            model.update_running_stats(&cache);
            let grad = pred.map(|p| p - 0.5);
            model.backward(cache, &grad).unwrap();
            adam.step(&mut model).unwrap();
        }
        (model, adam)
    }

    #[test]
    fn drs_round_trip_is_bitwise() {
        for kind in [ModelKind::DeepFm, ModelKind::Ipnn] {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("drs.json");
            let (model, adam) = trained_drs(kind);
            save_drs(&path, &model, Some(&adam), Some("abc")).unwrap();
            let loaded = load_drs(&path).unwrap();
            assert_eq!(loaded.model, model);
            assert_eq!(loaded.optimizer.as_ref(), Some(&adam));
            assert_eq!(loaded.schema_hash.as_deref(), Some("abc"));
            let mut bufs = Vec::new();
            model.visit_buffers(&mut |_, t| bufs.push(t.clone()));
            let mut loaded_bufs = Vec::new();
            loaded.model.visit_buffers(&mut |_, t| loaded_bufs.push(t.clone()));
            assert_eq!(bufs, loaded_bufs);
        }
    }

    #[test]
    fn controller_round_trip_without_optimizer() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("controller.json");
        let cfg = ControllerConfig {
            input: InputMode::PredOnly,
            ..ControllerConfig::default()
        };
        let names = vec!["focal".to_string(), "CE".to_string(), "hinge".to_string()];
        let c = Controller::new(&cfg, Task::Binary, names.clone(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        save_controller(&path, &c, None, None).unwrap();
        let loaded = load_controller(&path).unwrap();
        assert_eq!(loaded.model, c);
        assert!(loaded.optimizer.is_none());
        assert_eq!(loaded.model.candidates(), names.as_slice());
        assert_eq!(loaded.model.input_mode(), InputMode::PredOnly);
    }

    #[test]
    fn kind_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("drs.json");
        save_drs(&path, &small_drs(ModelKind::DeepFm), None, None).unwrap();
        assert!(matches!(load_controller(&path), Err(Error::Context { .. })));
    }

    #[test]
    fn truncated_blob_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("drs.json");
        save_drs(&path, &small_drs(ModelKind::Ipnn), None, None).unwrap();
        let bin = path.with_extension("bin");
        let bytes = fs::read(&bin).unwrap();
        fs::write(&bin, &bytes[..bytes.len() - 8]).unwrap();
        let err = load_drs(&path).unwrap_err();
        assert!(err.to_string().contains("data file"), "{err}");
    }

    #[test]
    fn version_is_checked() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("drs.json");
        save_drs(&path, &small_drs(ModelKind::DeepFm), None, None).unwrap();
        let text = fs::read_to_string(&path).unwrap().replace("\"version\": 1", "\"version\": 99");
        fs::write(&path, text).unwrap();
        assert!(load_drs(&path).is_err());
    }
}
