//! Inference outputs: predicted label maps as tensor files plus PGM previews.

use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context, Result};

use adaradar_core::metrics::argmax_classes;
use adaradar_core::model::TransRadarNet;
use adaradar_core::synth::dataset::Dataset;
use adaradar_core::tensor::{write_tensor, Dtype, Tensor};

/// Binary PGM (P5) preview of an integer label map, classes spread over the
/// grey range.
pub fn write_pgm(path: &Path, labels: &Tensor, k: usize) -> Result<()> {
    let s = labels.shape();
    if s.len() != 2 {
        bail!("PGM preview expects an [H, W] map, got {:?}", s);
    }
    let (h, w) = (s[0], s[1]);
    let scale = if k > 1 { 255.0 / (k - 1) as f64 } else { 255.0 };
    let mut file =
        fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    write!(file, "P5\n{w} {h}\n255\n")?;
    let bytes: Vec<u8> = labels
        .data()
        .iter()
        .map(|&v| (v * scale).round().clamp(0.0, 255.0) as u8)
        .collect();
    file.write_all(&bytes)?;
    Ok(())
}

/// Predict masks for one dataset sample and write
/// `<id>.pred_{rd,ra}.{adrt,pgm}` into `out_dir`.
pub fn infer_sample(
    model: &TransRadarNet,
    dataset: &Dataset,
    id: &str,
    out_dir: &Path,
) -> Result<()> {
    let sample = dataset
        .samples
        .iter()
        .find(|s| s.meta.id == id)
        .with_context(|| format!("sample {id} not found in dataset"))?;
    fs::create_dir_all(out_dir)?;
    let masks = model.forward_infer(&sample.ra.data, &sample.rd.data, &sample.ad.data)?;
    let k = model.config.k;
    let pred_rd = argmax_classes(&masks.rd_probs)?;
    let pred_ra = argmax_classes(&masks.ra_probs)?;
    write_tensor(&out_dir.join(format!("{id}.pred_rd.adrt")), &pred_rd, Dtype::F64)?;
    write_tensor(&out_dir.join(format!("{id}.pred_ra.adrt")), &pred_ra, Dtype::F64)?;
    write_pgm(&out_dir.join(format!("{id}.pred_rd.pgm")), &pred_rd, k)?;
    write_pgm(&out_dir.join(format!("{id}.pred_ra.pgm")), &pred_ra, k)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_has_correct_header_and_size() {
        let labels = Tensor::new(vec![2, 3], vec![0.0, 1.0, 2.0, 3.0, 0.0, 3.0]).unwrap();
        let path = std::env::temp_dir().join(format!("adaradar_pgm_{}.pgm", std::process::id()));
        write_pgm(&path, &labels, 4).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert!(bytes.starts_with(b"P5\n3 2\n255\n"));
        assert_eq!(bytes.len(), b"P5\n3 2\n255\n".len() + 6);
        assert_eq!(*bytes.last().unwrap(), 255);
        fs::remove_file(&path).unwrap();
    }
}
