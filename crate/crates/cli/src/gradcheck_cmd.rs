//! End-to-end gradient verification on a micro model.
//!
//! Builds a small model, renders one synthetic batch, and compares every
//! parameter's analytic gradient of the total loss against central finite
//! differences. Straight-through binarizations are checked along their soft
//! backward definition, and the learnable offsets are jittered off integer
//! interpolation breakpoints where only one-sided derivatives exist.

use anyhow::{bail, Result};

use adaradar_core::graph::{grad_check_with_tamper, GradCheckReport, GradTamper};
use adaradar_core::loss::{one_hot, total_loss, BinarizeMode, LossToggles, LossWeights};
use adaradar_core::model::{ModelConfig, TransRadarNet};
use adaradar_core::synth::{generate_sample, slice_views, CubeDims, SceneGenConfig};
use adaradar_core::tensor::Tensor;

use crate::trainer::last_frame;

pub const GRADCHECK_EPS: f64 = 1e-5;
pub const GRADCHECK_TOL: f64 = 1e-4;

/// The micro configuration used by the `gradcheck` command.
pub fn micro_config() -> ModelConfig {
    ModelConfig {
        t: 2,
        k: 3,
        dims: CubeDims { r: 16, a: 16, d: 8 },
        c_enc: 4,
        c_dec: 4,
        n_blocks: 1,
        heads: 4,
        k_h: 3,
        k_w: 3,
    }
}

/// Run the full-model gradient check; `tamper` is a test hook that corrupts
/// the analytic gradients so failures are observable.
pub fn run_gradcheck(
    cfg: &ModelConfig,
    seed: u64,
    tamper: Option<&GradTamper>,
) -> Result<GradCheckReport> {
    cfg.validate()?;
    let model = TransRadarNet::new(cfg.clone(), false, seed)?;

    let mut gen = SceneGenConfig::new(cfg.dims, cfg.t);
    gen.classes = cfg.k;
    gen.fg_cap = 0.2;
    gen.noise.speckle_level = 0.1;
    gen.noise.ghost_count = 1;
    let (_, cube) = generate_sample(&gen, seed)?;
    let (ra, rd, ad) = slice_views(&cube)?;
    let gt_rd = one_hot(&last_frame(&cube.masks_rd)?, cfg.k)?;
    let gt_ra = one_hot(&last_frame(&cube.masks_ra)?, cfg.k)?;

    let mut params = model.params.clone();
    // Move sampling offsets off the integer grid.
    for i in 0..cfg.n_blocks {
        for tap in ["delta_h", "delta_w"] {
            let name = format!("block{i}.{tap}");
            let t = params.get(&name).unwrap();
            let jittered = Tensor::new(
                t.shape().to_vec(),
                t.data().iter().map(|v| v + 0.3).collect(),
            )?;
            params.set(&name, jittered)?;
        }
    }

    let weights = LossWeights::default();
    let toggles = LossToggles::default();
    let ra_data = ra.data;
    let rd_data = rd.data;
    let ad_data = ad.data;
    let report = grad_check_with_tamper(
        &mut params,
        GRADCHECK_EPS,
        GRADCHECK_TOL,
        move |g, bound| {
            let (rd_p, ra_p) = model.forward(g, bound, &ra_data, &rd_data, &ad_data)?;
            let out = total_loss(
                g,
                rd_p,
                ra_p,
                &gt_rd,
                &gt_ra,
                &weights,
                &toggles,
                BinarizeMode::SoftReference,
            )?;
            Ok(out.total)
        },
        tamper,
    )?;
    Ok(report)
}

/// Command entry point: nonzero exit on failure, naming the worst parameter.
pub fn gradcheck_command(cfg: Option<ModelConfig>, seed: u64) -> Result<GradCheckReport> {
    let cfg = cfg.unwrap_or_else(micro_config);
    let report = run_gradcheck(&cfg, seed, None)?;
    println!("gradcheck {report}");
    if !report.passed {
        bail!(
            "gradient check failed: worst parameter {}[{}] rel err {:.3e}",
            report.worst_param,
            report.worst_index,
            report.worst_rel_err
        );
    }
    Ok(report)
}
