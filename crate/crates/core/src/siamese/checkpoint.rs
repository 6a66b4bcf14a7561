//! Versioned JSON checkpoints. Floats are written in shortest round-trip
//! form, so a reload reproduces every weight bit for bit.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{SiameseError, SiameseModel};

pub const CHECKPOINT_FORMAT: &str = "linkrec-siamese";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Envelope<M> {
    format: String,
    version: u32,
    model: M,
}

pub fn to_json(model: &SiameseModel) -> Result<String, SiameseError> {
    serde_json::to_string(&Envelope {
        format: CHECKPOINT_FORMAT.to_string(),
        version: CHECKPOINT_VERSION,
        model,
    })
    .map_err(|e| SiameseError::Checkpoint(e.to_string()))
}

pub fn from_json(text: &str) -> Result<SiameseModel, SiameseError> {
    let env: Envelope<SiameseModel> =
        serde_json::from_str(text).map_err(|e| SiameseError::Checkpoint(e.to_string()))?;
    if env.format != CHECKPOINT_FORMAT {
        return Err(SiameseError::Checkpoint(format!("unexpected format {:?}", env.format)));
    }
    if env.version != CHECKPOINT_VERSION {
        return Err(SiameseError::Checkpoint(format!(
            "unsupported version {} (expected {CHECKPOINT_VERSION})",
            env.version
        )));
    }
    let m = env.model;
    let f = m.encoder.output_dim();
    let shapes_ok = m.dense.inputs == 2 * f
        && m.dense.outputs == m.config.hidden
        && m.head.inputs == m.config.hidden + m.config.features.scalar_count()
        && m.head.outputs == 2
        && m.norm.mean.len() == m.config.features.scalar_count()
        && m.param_groups().iter().all(|(_, g)| !g.is_empty())
        && m.dense.weight.len() == m.dense.inputs * m.dense.outputs
        && m.head.weight.len() == m.head.inputs * m.head.outputs;
    if !shapes_ok {
        return Err(SiameseError::Checkpoint("tensor shapes do not match the config".into()));
    }
    Ok(m)
}

pub fn save_checkpoint(model: &SiameseModel, path: impl AsRef<Path>) -> Result<(), SiameseError> {
    let path = path.as_ref();
    fs::write(path, to_json(model)?)
        .map_err(|e| SiameseError::Checkpoint(format!("{}: {e}", path.display())))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<SiameseModel, SiameseError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)
        .map_err(|e| SiameseError::Checkpoint(format!("{}: {e}", path.display())))?;
    from_json(&text)
}
