//! On-disk dataset layout.
//!
//! A dataset directory holds `manifest.json` plus five tensor files per
//! sample: `<id>.{ra,rd,ad}.adrt` view stacks and `<id>.{mask_ra,mask_rd}.adrt`
//! label maps, all in the binary tensor format.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::synth::{generate_sample, slice_views, CubeDims, SceneGenConfig, ViewId, ViewStack};
use crate::tensor::{read_tensor, write_tensor, Dtype, Tensor};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleMeta {
    pub id: String,
    pub seed: u64,
    pub split: Split,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub dims: CubeDims,
    pub frames: usize,
    pub classes: usize,
    pub samples: Vec<SampleMeta>,
}

#[derive(Debug, Clone)]
pub struct Sample {
    pub meta: SampleMeta,
    pub ra: ViewStack,
    pub rd: ViewStack,
    pub ad: ViewStack,
    pub mask_ra: Tensor,
    pub mask_rd: Tensor,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: Manifest,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> Vec<&Sample> {
        self.samples
            .iter()
            .filter(|s| s.meta.split == split)
            .collect()
    }
}

fn sample_paths(dir: &Path, id: &str) -> [(PathBuf, &'static str); 5] {
    [
        (dir.join(format!("{id}.ra.adrt")), "ra"),
        (dir.join(format!("{id}.rd.adrt")), "rd"),
        (dir.join(format!("{id}.ad.adrt")), "ad"),
        (dir.join(format!("{id}.mask_ra.adrt")), "mask_ra"),
        (dir.join(format!("{id}.mask_rd.adrt")), "mask_rd"),
    ]
}

/// Write a dataset directory; files round-trip bit-identically.
pub fn write_dataset(dir: &Path, dataset: &Dataset) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CoreError::Io {
        path: dir.display().to_string(),
        source: e,
    })?;
    let manifest_json = serde_json::to_string_pretty(&dataset.manifest).map_err(|e| {
        CoreError::InvalidArgument(format!("manifest serialization failed: {e}"))
    })?;
    fs::write(dir.join("manifest.json"), manifest_json).map_err(|e| CoreError::Io {
        path: dir.join("manifest.json").display().to_string(),
        source: e,
    })?;
    for sample in &dataset.samples {
        let paths = sample_paths(dir, &sample.meta.id);
        let tensors = [
            &sample.ra.data,
            &sample.rd.data,
            &sample.ad.data,
            &sample.mask_ra,
            &sample.mask_rd,
        ];
        for ((path, _), tensor) in paths.iter().zip(tensors) {
            write_tensor(path, tensor, Dtype::F64)?;
        }
    }
    Ok(())
}

/// Load a dataset directory, verifying the manifest against the files on
/// disk. Missing or corrupt files error with the offending path.
pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let manifest_path = dir.join("manifest.json");
    let manifest_text = fs::read_to_string(&manifest_path).map_err(|e| CoreError::Io {
        path: manifest_path.display().to_string(),
        source: e,
    })?;
    let manifest: Manifest = serde_json::from_str(&manifest_text).map_err(|e| {
        CoreError::CorruptFile {
            path: manifest_path.display().to_string(),
            reason: e.to_string(),
        }
    })?;
    if manifest.version != MANIFEST_VERSION {
        return Err(CoreError::CorruptFile {
            path: manifest_path.display().to_string(),
            reason: format!("unsupported manifest version {}", manifest.version),
        });
    }

    // The manifest must agree with the tensor-file count on disk.
    let on_disk = fs::read_dir(dir)
        .map_err(|e| CoreError::Io {
            path: dir.display().to_string(),
            source: e,
        })?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().extension().map(|x| x == "adrt").unwrap_or(false))
        .count();
    let expected = manifest.samples.len() * 5;
    if on_disk != expected {
        return Err(CoreError::CorruptFile {
            path: dir.display().to_string(),
            reason: format!(
                "manifest lists {} samples ({expected} tensor files) but {on_disk} are on disk",
                manifest.samples.len()
            ),
        });
    }

    let mut samples = Vec::with_capacity(manifest.samples.len());
    for meta in &manifest.samples {
        let paths = sample_paths(dir, &meta.id);
        let mut tensors = Vec::with_capacity(5);
        for (path, _) in &paths {
            tensors.push(read_tensor(path)?);
        }
        let mask_rd = tensors.pop().unwrap();
        let mask_ra = tensors.pop().unwrap();
        let ad = tensors.pop().unwrap();
        let rd = tensors.pop().unwrap();
        let ra = tensors.pop().unwrap();
        samples.push(Sample {
            meta: meta.clone(),
            ra: ViewStack {
                view_id: ViewId::Ra,
                data: ra,
            },
            rd: ViewStack {
                view_id: ViewId::Rd,
                data: rd,
            },
            ad: ViewStack {
                view_id: ViewId::Ad,
                data: ad,
            },
            mask_ra,
            mask_rd,
        });
    }
    Ok(Dataset { manifest, samples })
}

/// Deterministically generate `n_samples` scenes and split them roughly
/// 80/10/10 into train/val/test.
pub fn generate_dataset(cfg: &SceneGenConfig, n_samples: usize, base_seed: u64) -> Result<Dataset> {
    if n_samples == 0 {
        return Err(CoreError::InvalidArgument("n_samples must be >= 1".into()));
    }
    let n_val = (n_samples / 10).max(1).min(n_samples.saturating_sub(1));
    let n_test = (n_samples / 10).min(n_samples.saturating_sub(n_val + 1));
    let n_train = n_samples - n_val - n_test;
    let mut samples = Vec::with_capacity(n_samples);
    let mut metas = Vec::with_capacity(n_samples);
    for i in 0..n_samples {
        let split = if i < n_train {
            Split::Train
        } else if i < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
        let seed = base_seed.wrapping_add(i as u64);
        let (_, cube) = generate_sample(cfg, seed)?;
        let (ra, rd, ad) = slice_views(&cube)?;
        let meta = SampleMeta {
            id: format!("s{i:04}"),
            seed,
            split,
        };
        metas.push(meta.clone());
        samples.push(Sample {
            meta,
            ra,
            rd,
            ad,
            mask_ra: cube.masks_ra,
            mask_rd: cube.masks_rd,
        });
    }
    Ok(Dataset {
        manifest: Manifest {
            version: MANIFEST_VERSION,
            dims: cfg.dims,
            frames: cfg.frames,
            classes: cfg.classes,
            samples: metas,
        },
        samples,
    })
}
