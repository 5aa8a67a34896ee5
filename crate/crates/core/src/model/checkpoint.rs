//! Checkpoint serialization.
//!
//! Layout: the magic bytes `ILVAE1`, a little-endian `u64` length followed by
//! the model configuration as JSON, then every parameter tensor in
//! declaration order as raw little-endian 64-bit floats.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use super::{AnyModel, ModelConfig, ModelError};

pub const CHECKPOINT_MAGIC: &[u8; 6] = b"ILVAE1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad checkpoint magic {found:?}")]
    BadMagic { found: Vec<u8> },
    #[error("malformed checkpoint config: {0}")]
    Json(#[from] serde_json::Error),
    #[error("checkpoint holds {got} parameter values, model expects {expected}")]
    WrongLength { expected: usize, got: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub fn save_model(path: &Path, model: &AnyModel) -> Result<(), CheckpointError> {
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(CHECKPOINT_MAGIC)?;
    let config = serde_json::to_vec(model.config())?;
    out.write_all(&(config.len() as u64).to_le_bytes())?;
    out.write_all(&config)?;
    let mut io_err: Option<std::io::Error> = None;
    model.visit(&mut |t| {
        if io_err.is_some() {
            return;
        }
        for v in t.data() {
            if let Err(e) = out.write_all(&v.to_le_bytes()) {
                io_err = Some(e);
                return;
            }
        }
    });
    if let Some(e) = io_err {
        return Err(e.into());
    }
    out.flush()?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<AnyModel, CheckpointError> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 6];
    reader.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic {
            found: magic.to_vec(),
        });
    }
    let mut len_bytes = [0u8; 8];
    reader.read_exact(&mut len_bytes)?;
    let json_len = u64::from_le_bytes(len_bytes) as usize;
    let mut config_bytes = vec![0u8; json_len];
    reader.read_exact(&mut config_bytes)?;
    let config: ModelConfig = serde_json::from_slice(&config_bytes)?;

    let mut model = AnyModel::from_config(&config, 0)?;
    let mut rest = Vec::new();
    reader.read_to_end(&mut rest)?;
    if rest.len() % 8 != 0 || rest.len() / 8 != model.param_len() {
        return Err(CheckpointError::WrongLength {
            expected: model.param_len(),
            got: rest.len() / 8,
        });
    }
    let mut offset = 0;
    model.visit_mut(&mut |t| {
        for v in t.data_mut() {
            *v = f64::from_le_bytes(rest[offset..offset + 8].try_into().expect("8 bytes"));
            offset += 8;
        }
    });
    Ok(model)
}
