//! CSV and JSON artifacts written by the commands.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde_json::json;

use adaradar_core::metrics::MetricReport;

use crate::trainer::EpochLog;

pub fn write_log_csv(path: &Path, logs: &[EpochLog]) -> Result<()> {
    let mut out = String::from("epoch,lr,oc,cl,ca,sd,mv,coherence,total,val_miou_rd,val_miou_ra\n");
    for l in logs {
        out.push_str(&format!(
            "{},{:.8e},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.4},{:.4}\n",
            l.epoch,
            l.lr,
            l.loss.oc,
            l.loss.cl,
            l.loss.ca,
            l.loss.sd,
            l.loss.mv,
            l.loss.coherence,
            l.loss.total,
            l.val_miou_rd,
            l.val_miou_ra,
        ));
    }
    fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

/// Class column labels in the radar dataset order.
pub fn class_names(k: usize) -> Vec<String> {
    if k == 4 {
        ["bkg", "ped", "cycl", "car"].map(String::from).to_vec()
    } else {
        (0..k).map(|c| format!("class{c}")).collect()
    }
}

pub fn write_metrics(
    out_dir: &Path,
    rd: &MetricReport,
    ra: &MetricReport,
    k: usize,
) -> Result<()> {
    let payload = json!({ "rd": rd, "ra": ra });
    fs::write(
        out_dir.join("metrics.json"),
        serde_json::to_string_pretty(&payload)?,
    )
    .with_context(|| "writing metrics.json")?;

    let names = class_names(k).join(",");
    let mut csv = format!("view,metric,{names},mean\n");
    for (view, rep) in [("rd", rd), ("ra", ra)] {
        csv.push_str(&format!("{view},iou,{}\n", rep.iou_csv_row()));
        csv.push_str(&format!("{view},dice,{}\n", rep.dice_csv_row()));
    }
    fs::write(out_dir.join("metrics.csv"), csv).with_context(|| "writing metrics.csv")
}
