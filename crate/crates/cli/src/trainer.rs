//! Training loop and split evaluation.

use anyhow::{bail, Context, Result};
use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use adaradar_core::graph::Graph;
use adaradar_core::loss::{one_hot, total_loss, BinarizeMode, LossReport};
use adaradar_core::metrics::{argmax_classes, iou_dice, AbsentClass, ConfusionMatrix, MetricReport};
use adaradar_core::model::TransRadarNet;
use adaradar_core::synth::dataset::{Dataset, Sample, Split};
use adaradar_core::tensor::Tensor;

use crate::config::TrainConfig;
use crate::optim::{scheduled_lr, Adam};

#[derive(Debug, Clone)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub loss: LossReport,
    pub val_miou_rd: f64,
    pub val_miou_ra: f64,
}

pub struct TrainOutcome {
    /// The trained model with the best-validation parameters restored.
    pub model: TransRadarNet,
    pub logs: Vec<EpochLog>,
    pub best_val: f64,
}

/// The prediction target is the most recent frame of the mask stack.
pub fn last_frame(mask: &Tensor) -> Result<Tensor> {
    let s = mask.shape();
    if s.len() != 3 {
        bail!("mask must be [T, H, W], got {:?}", s);
    }
    let plane = s[1] * s[2];
    let t = s[0];
    Ok(Tensor::new(
        vec![s[1], s[2]],
        mask.data()[(t - 1) * plane..t * plane].to_vec(),
    )?)
}

fn check_dataset(cfg: &TrainConfig, dataset: &Dataset) -> Result<()> {
    let m = &dataset.manifest;
    if m.dims != cfg.model.dims {
        bail!(
            "dataset dims {:?} do not match model dims {:?}",
            m.dims,
            cfg.model.dims
        );
    }
    if m.frames != cfg.model.t {
        bail!("dataset has {} frames, model expects {}", m.frames, cfg.model.t);
    }
    if m.classes != cfg.model.k {
        bail!("dataset has {} classes, model expects {}", m.classes, cfg.model.k);
    }
    Ok(())
}

fn mean_reports(reports: &[LossReport]) -> LossReport {
    let n = reports.len().max(1) as f64;
    let mut out = LossReport::default();
    for r in reports {
        out.oc += r.oc / n;
        out.cl += r.cl / n;
        out.sd += r.sd / n;
        out.mv += r.mv / n;
        out.coherence += r.coherence / n;
        out.total += r.total / n;
    }
    out.ca = out.oc + out.cl;
    out
}

fn train_step(
    model: &mut TransRadarNet,
    adam: &mut Adam,
    samples: &[&Sample],
    cfg: &TrainConfig,
    lr: f64,
) -> Result<LossReport> {
    let k = cfg.model.k;
    let mut g = Graph::new();
    let bound = model.bind(&mut g);
    let mut totals = Vec::with_capacity(samples.len());
    let mut reports = Vec::with_capacity(samples.len());
    for s in samples {
        let gt_rd = one_hot(&last_frame(&s.mask_rd)?, k)?;
        let gt_ra = one_hot(&last_frame(&s.mask_ra)?, k)?;
        let (rd_p, ra_p) = model.forward(&mut g, &bound, &s.ra.data, &s.rd.data, &s.ad.data)?;
        let out = total_loss(
            &mut g,
            rd_p,
            ra_p,
            &gt_rd,
            &gt_ra,
            &cfg.loss,
            &cfg.ablation.losses,
            BinarizeMode::Hard,
        )?;
        if let Some(term) = out.report.non_finite_term() {
            bail!(
                "loss term {term} became non-finite on sample {} (aborting)",
                s.meta.id
            );
        }
        totals.push(out.total);
        reports.push(out.report);
    }
    let mut acc = totals[0];
    for &t in &totals[1..] {
        acc = g.add(acc, t)?;
    }
    let loss = g.mul_scalar(acc, 1.0 / samples.len() as f64);
    g.backward(loss)?;
    let grads: Vec<Option<Tensor>> = bound.vars().iter().map(|v| g.grad(*v)).collect();
    adam.step(&mut model.params, &grads, lr)?;
    Ok(mean_reports(&reports))
}

/// Train a model from scratch on the dataset's train split, evaluating the
/// val split each epoch and retaining the best-validation parameters.
/// Fully deterministic given the config seed.
pub fn train(cfg: &TrainConfig, dataset: &Dataset) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_dataset(cfg, dataset)?;
    let train_samples = dataset.split(Split::Train);
    if train_samples.is_empty() {
        bail!("train split is empty");
    }
    let val_samples = {
        let v = dataset.split(Split::Val);
        // Small datasets may have no val split; fall back to train metrics.
        if v.is_empty() {
            dataset.split(Split::Train)
        } else {
            v
        }
    };

    let mut model = TransRadarNet::new(cfg.model.clone(), cfg.ablation.no_adaptive, cfg.seed)?;
    let mut adam = Adam::new(&model.params);
    let mut logs = Vec::with_capacity(cfg.epochs);
    let mut best_val = f64::NEG_INFINITY;
    let mut best_params = model.params.clone();

    for epoch in 0..cfg.epochs {
        let lr = scheduled_lr(cfg.lr, cfg.scheduler.gamma, cfg.scheduler.step, epoch);
        let mut order: Vec<usize> = (0..train_samples.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(
            cfg.seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
        );
        order.shuffle(&mut rng);

        let mut batch_reports = Vec::new();
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| train_samples[i]).collect();
            let report = train_step(&mut model, &mut adam, &batch, cfg, lr)
                .with_context(|| format!("epoch {epoch}"))?;
            batch_reports.push(report);
        }

        let (rd_m, ra_m) = evaluate(&model, &val_samples)?;
        let mean_val = 0.5 * (rd_m.miou + ra_m.miou);
        // Ties keep the most recent parameters.
        if mean_val >= best_val {
            best_val = mean_val;
            best_params = model.params.clone();
        }
        logs.push(EpochLog {
            epoch,
            lr,
            loss: mean_reports(&batch_reports),
            val_miou_rd: rd_m.miou,
            val_miou_ra: ra_m.miou,
        });
    }

    if cfg.epochs > 0 {
        model.params = best_params;
    } else {
        best_val = 0.0;
    }
    Ok(TrainOutcome {
        model,
        logs,
        best_val,
    })
}

/// Aggregate confusion over a split (batch size 1) and report per-class
/// IoU/Dice for both heads.
pub fn evaluate(
    model: &TransRadarNet,
    samples: &[&Sample],
) -> Result<(MetricReport, MetricReport)> {
    if samples.is_empty() {
        bail!("evaluation split is empty");
    }
    let k = model.config.k;
    let mut cm_rd = ConfusionMatrix::new(k);
    let mut cm_ra = ConfusionMatrix::new(k);
    for s in samples {
        let masks = model.forward_infer(&s.ra.data, &s.rd.data, &s.ad.data)?;
        let pred_rd = argmax_classes(&masks.rd_probs)?;
        let pred_ra = argmax_classes(&masks.ra_probs)?;
        cm_rd.accumulate(&pred_rd, &last_frame(&s.mask_rd)?)?;
        cm_ra.accumulate(&pred_ra, &last_frame(&s.mask_ra)?)?;
    }
    Ok((
        iou_dice(&cm_rd, AbsentClass::ScoreOne),
        iou_dice(&cm_ra, AbsentClass::ScoreOne),
    ))
}

/// Metric reports for a constant all-background predictor on a split.
pub fn all_background_baseline(
    samples: &[&Sample],
    k: usize,
) -> Result<(MetricReport, MetricReport)> {
    if samples.is_empty() {
        bail!("evaluation split is empty");
    }
    let mut cm_rd = ConfusionMatrix::new(k);
    let mut cm_ra = ConfusionMatrix::new(k);
    for s in samples {
        let gt_rd = last_frame(&s.mask_rd)?;
        let gt_ra = last_frame(&s.mask_ra)?;
        cm_rd.accumulate(&Tensor::zeros(gt_rd.shape()), &gt_rd)?;
        cm_ra.accumulate(&Tensor::zeros(gt_ra.shape()), &gt_ra)?;
    }
    Ok((
        iou_dice(&cm_rd, AbsentClass::ScoreOne),
        iou_dice(&cm_ra, AbsentClass::ScoreOne),
    ))
}

/// Mean absolute gap between the max-pooled range profiles of the two heads,
/// averaged over samples.
pub fn mean_range_discrepancy(model: &TransRadarNet, samples: &[&Sample]) -> Result<f64> {
    if samples.is_empty() {
        bail!("no samples");
    }
    let mut acc = 0.0;
    for s in samples {
        let masks = model.forward_infer(&s.ra.data, &s.rd.data, &s.ad.data)?;
        let rd_m = max_over_last(&masks.rd_probs);
        let ra_m = max_over_last(&masks.ra_probs);
        let n = rd_m.len() as f64;
        acc += rd_m
            .iter()
            .zip(&ra_m)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / n;
    }
    Ok(acc / samples.len() as f64)
}

fn max_over_last(probs: &Tensor) -> Vec<f64> {
    let s = probs.shape();
    let (k, r, last) = (s[0], s[1], s[2]);
    let mut out = vec![f64::NEG_INFINITY; k * r];
    for c in 0..k {
        for rr in 0..r {
            for l in 0..last {
                let v = probs.data()[(c * r + rr) * last + l];
                if v > out[c * r + rr] {
                    out[c * r + rr] = v;
                }
            }
        }
    }
    out
}
