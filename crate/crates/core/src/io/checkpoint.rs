//! Refiner checkpoints as an uncompressed `.npz` archive.
//!
//! Layout: `conv{i}_weight.npy` with shape `(out, in, k, k)` and
//! `conv{i}_bias.npy` with shape `(out,)`, both `<f8`, plus `meta.json`
//! holding the architecture, initializer record and a training-config
//! echo. Entry order and timestamps are fixed so identical parameters
//! produce identical bytes; `numpy.load` opens the file directly.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use zip::write::SimpleFileOptions;
use zip::{CompressionMethod, DateTime, ZipArchive, ZipWriter};

use super::npy::{self, Dtype, NpyError};
use crate::model::network::InitInfo;
use crate::model::{ConvTensors, FcnArchitecture, FcnParams, ModelError, TrainConfig};

pub const CHECKPOINT_FORMAT: u32 = 1;
const META: &str = "meta.json";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("archive error: {0}")]
    Archive(#[from] zip::result::ZipError),
    #[error("tensor {name}: {source}")]
    Tensor { name: String, source: NpyError },
    #[error("metadata: {0}")]
    Meta(#[from] serde_json::Error),
    #[error("unsupported checkpoint format {0}")]
    Format(u32),
    #[error("tensor {name} has shape {found:?}, expected {expected:?}")]
    Shape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format: u32,
    pub architecture: FcnArchitecture,
    pub init: InitInfo,
    pub train_config: Option<TrainConfig>,
}

fn entry_names(i: usize) -> (String, String) {
    (format!("conv{i}_weight.npy"), format!("conv{i}_bias.npy"))
}

pub fn save_checkpoint(
    path: impl AsRef<Path>,
    params: &FcnParams,
    config: Option<&TrainConfig>,
) -> Result<(), CheckpointError> {
    params.validate()?;
    let opts = SimpleFileOptions::default()
        .compression_method(CompressionMethod::Stored)
        .last_modified_time(DateTime::default());
    let mut zip = ZipWriter::new(File::create(path)?);
    let meta = CheckpointMeta {
        format: CHECKPOINT_FORMAT,
        architecture: params.arch.clone(),
        init: params.init.clone(),
        train_config: config.cloned(),
    };
    zip.start_file(META, opts)?;
    zip.write_all(serde_json::to_string_pretty(&meta)?.as_bytes())?;
    for (i, ((cin, cout, k), t)) in params.arch.conv_layers().zip(&params.convs).enumerate() {
        let (wname, bname) = entry_names(i);
        zip.start_file(wname, opts)?;
        zip.write_all(&npy::encode(Dtype::F8, &[cout, cin, k, k], &t.weight))?;
        zip.start_file(bname, opts)?;
        zip.write_all(&npy::encode(Dtype::F8, &[cout], &t.bias))?;
    }
    zip.finish()?;
    Ok(())
}

fn read_entry(zip: &mut ZipArchive<File>, name: &str) -> Result<Vec<u8>, CheckpointError> {
    let mut entry = zip.by_name(name)?;
    let mut bytes = Vec::with_capacity(entry.size() as usize);
    entry.read_to_end(&mut bytes)?;
    Ok(bytes)
}

fn read_tensor(zip: &mut ZipArchive<File>, name: &str, shape: &[usize]) -> Result<Vec<f64>, CheckpointError> {
    let bytes = read_entry(zip, name)?;
    let arr = npy::decode(&bytes).map_err(|source| CheckpointError::Tensor {
        name: name.to_string(),
        source,
    })?;
    if arr.shape != shape {
        return Err(CheckpointError::Shape {
            name: name.to_string(),
            expected: shape.to_vec(),
            found: arr.shape,
        });
    }
    Ok(arr.data)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(FcnParams, CheckpointMeta), CheckpointError> {
    let mut zip = ZipArchive::new(File::open(path)?)?;
    let meta: CheckpointMeta = serde_json::from_slice(&read_entry(&mut zip, META)?)?;
    if meta.format != CHECKPOINT_FORMAT {
        return Err(CheckpointError::Format(meta.format));
    }
    meta.architecture.validate()?;
    let shapes: Vec<_> = meta.architecture.conv_layers().collect();
    let mut convs = Vec::with_capacity(shapes.len());
    for (i, (cin, cout, k)) in shapes.into_iter().enumerate() {
        let (wname, bname) = entry_names(i);
        convs.push(ConvTensors {
            weight: read_tensor(&mut zip, &wname, &[cout, cin, k, k])?,
            bias: read_tensor(&mut zip, &bname, &[cout])?,
        });
    }
    let params = FcnParams {
        arch: meta.architecture.clone(),
        convs,
        init: meta.init.clone(),
    };
    params.validate()?;
    Ok((params, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_params;

    #[test]
    fn roundtrip_is_exact_and_byte_stable() {
        let dir = tempfile::tempdir().unwrap();
        let params = init_params(&FcnArchitecture::desk(), 11).unwrap();
        let config = TrainConfig::default();
        let a = dir.path().join("a.npz");
        let b = dir.path().join("b.npz");
        save_checkpoint(&a, &params, Some(&config)).unwrap();
        save_checkpoint(&b, &params, Some(&config)).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
        let (back, meta) = load_checkpoint(&a).unwrap();
        assert_eq!(back, params);
        assert_eq!(meta.train_config, Some(config));
    }

    #[test]
    fn rejects_non_archives() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.npz");
        std::fs::write(&p, b"nope").unwrap();
        assert!(matches!(load_checkpoint(&p), Err(CheckpointError::Archive(_))));
    }
}
