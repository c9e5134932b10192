//! Ablation runner: train one model per flag combination under a shared seed
//! and budget, and tabulate validation mIoU per view.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};

use adaradar_core::loss::LossToggles;
use adaradar_core::synth::dataset::Dataset;

use crate::config::{AblationFlags, AblationRow, TrainConfig};
use crate::trainer::train;

#[derive(Debug, Clone)]
pub struct AblationResult {
    pub name: String,
    pub flags: AblationFlags,
    pub val_miou_rd: f64,
    pub val_miou_ra: f64,
    pub final_total: f64,
    pub error: Option<String>,
}

fn toggles(oc: bool, cl: bool, sd: bool, mv: bool, coherence: bool) -> LossToggles {
    LossToggles {
        oc,
        cl,
        sd,
        mv,
        coherence,
    }
}

/// The loss-combination grid plus the no-adaptive architecture row.
pub fn default_matrix() -> Vec<AblationRow> {
    let rows = [
        ("oc+cl+mv", toggles(true, true, false, true, false), false),
        ("oc+cl+sd", toggles(true, true, true, false, false), false),
        ("cl+sd+mv", toggles(false, true, true, true, false), false),
        ("oc+sd+mv", toggles(true, false, true, true, false), false),
        ("oc+cl+sd+col", toggles(true, true, true, false, true), false),
        ("oc+cl+sd+mv", toggles(true, true, true, true, false), false),
        ("no_adaptive", toggles(true, true, true, true, false), true),
    ];
    rows.into_iter()
        .map(|(name, losses, no_adaptive)| AblationRow {
            name: name.to_string(),
            flags: AblationFlags {
                no_adaptive,
                losses,
            },
        })
        .collect()
}

/// Train every row with the shared base config; row failures are recorded
/// and the run continues.
pub fn run_ablation(
    base: &TrainConfig,
    dataset: &Dataset,
    rows: &[AblationRow],
) -> Vec<AblationResult> {
    let mut results = Vec::with_capacity(rows.len());
    for row in rows {
        let mut cfg = base.clone();
        cfg.ablation = row.flags;
        let outcome = train(&cfg, dataset);
        results.push(match outcome {
            Ok(out) => {
                let last = out.logs.last();
                AblationResult {
                    name: row.name.clone(),
                    flags: row.flags,
                    val_miou_rd: last.map(|l| l.val_miou_rd).unwrap_or(f64::NAN),
                    val_miou_ra: last.map(|l| l.val_miou_ra).unwrap_or(f64::NAN),
                    final_total: last.map(|l| l.loss.total).unwrap_or(f64::NAN),
                    error: None,
                }
            }
            Err(e) => AblationResult {
                name: row.name.clone(),
                flags: row.flags,
                val_miou_rd: f64::NAN,
                val_miou_ra: f64::NAN,
                final_total: f64::NAN,
                error: Some(e.to_string()),
            },
        });
    }
    results
}

pub fn results_csv(results: &[AblationResult]) -> String {
    let mut out =
        String::from("name,oc,cl,sd,col,mv,no_adaptive,val_miou_rd,val_miou_ra,final_total,status\n");
    for r in results {
        let t = &r.flags.losses;
        let mark = |b: bool| if b { "x" } else { "" };
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{:.4},{:.4},{:.6},{}\n",
            r.name,
            mark(t.oc),
            mark(t.cl),
            mark(t.sd),
            mark(t.coherence),
            mark(t.mv),
            mark(r.flags.no_adaptive),
            r.val_miou_rd,
            r.val_miou_ra,
            r.final_total,
            r.error.as_deref().unwrap_or("ok"),
        ));
    }
    out
}

pub fn write_results(path: &Path, results: &[AblationResult]) -> Result<()> {
    fs::write(path, results_csv(results)).with_context(|| format!("writing {}", path.display()))
}
