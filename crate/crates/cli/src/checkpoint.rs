//! Checkpoint container: a JSON manifest (model config, flags, parameter
//! names) followed by the parameter tensors as concatenated binary blobs.
//!
//! Layout: magic `ADCK`, u8 version (1), little-endian u64 JSON length, the
//! JSON manifest, then one tensor per parameter in manifest order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use adaradar_core::model::{ModelConfig, TransRadarNet};
use adaradar_core::tensor::{read_tensor_from, write_tensor_to, Dtype};

const MAGIC: &[u8; 4] = b"ADCK";
const VERSION: u8 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointMeta {
    model: ModelConfig,
    no_adaptive: bool,
    param_names: Vec<String>,
}

pub fn save_checkpoint(path: &Path, model: &TransRadarNet) -> Result<()> {
    let meta = CheckpointMeta {
        model: model.config.clone(),
        no_adaptive: model.no_adaptive,
        param_names: model.params.iter().map(|p| p.name.clone()).collect(),
    };
    let json = serde_json::to_vec(&meta)?;
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    w.write_all(MAGIC)?;
    w.write_all(&[VERSION])?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    for p in model.params.iter() {
        write_tensor_to(&mut w, &p.value, Dtype::F64)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<TransRadarNet> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut r = BufReader::new(file);
    let mut header = [0u8; 5];
    r.read_exact(&mut header)
        .with_context(|| format!("reading header of {}", path.display()))?;
    if &header[..4] != MAGIC {
        bail!("{}: not a checkpoint file (bad magic)", path.display());
    }
    if header[4] != VERSION {
        bail!("{}: unsupported checkpoint version {}", path.display(), header[4]);
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let mut json = vec![0u8; u64::from_le_bytes(len) as usize];
    r.read_exact(&mut json)
        .with_context(|| format!("reading manifest of {}", path.display()))?;
    let meta: CheckpointMeta = serde_json::from_slice(&json)
        .with_context(|| format!("parsing manifest of {}", path.display()))?;

    // Rebuild the architecture, then overwrite every parameter from the blobs.
    let mut model = TransRadarNet::new(meta.model, meta.no_adaptive, 0)?;
    if meta.param_names.len() != model.params.len() {
        bail!(
            "{}: manifest has {} parameters, model defines {}",
            path.display(),
            meta.param_names.len(),
            model.params.len()
        );
    }
    for name in &meta.param_names {
        let tensor = read_tensor_from(&mut r, path)?;
        model
            .params
            .set(name, tensor)
            .with_context(|| format!("restoring parameter {name}"))?;
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        bail!("{}: trailing bytes after parameter blobs", path.display());
    }
    Ok(model)
}
