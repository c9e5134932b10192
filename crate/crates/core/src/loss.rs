//! Loss suite for imbalanced multi-view radar segmentation.
//!
//! Four terms: an object-centric focal weighting of binary cross-entropy
//! between foreground and background (OC), a class-agnostic localization
//! penalty on hard predictions (CL), a multi-class soft Dice (SD), and a
//! multi-view range-consistency penalty on max-pooled range profiles (MV).
//! The hard binarizations in OC/CL use straight-through estimators; gradient
//! checks therefore run in [`BinarizeMode::SoftReference`], which replaces
//! the hard forward with its soft backward surrogate.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

const LOG_EPS: f64 = 1e-12;
const DICE_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
    /// Foreground/background balance inside the OC term.
    pub delta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha1: 1.0,
            alpha2: 10.0,
            alpha3: 5.0,
            delta: 0.6,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.alpha1 < 0.0 || self.alpha2 < 0.0 || self.alpha3 < 0.0 {
            return Err(CoreError::InvalidArgument(
                "loss weights must be non-negative".into(),
            ));
        }
        if self.alpha1 == 0.0 && self.alpha2 == 0.0 && self.alpha3 == 0.0 {
            return Err(CoreError::InvalidArgument(
                "at least one loss weight must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.delta) {
            return Err(CoreError::InvalidArgument(format!(
                "delta must lie in [0, 1], got {}",
                self.delta
            )));
        }
        Ok(())
    }
}

/// Which loss terms participate in the total.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LossToggles {
    pub oc: bool,
    pub cl: bool,
    pub sd: bool,
    pub mv: bool,
    /// Mean-square coherence of pooled range profiles, an alternative to MV.
    pub coherence: bool,
}

impl Default for LossToggles {
    fn default() -> Self {
        LossToggles {
            oc: true,
            cl: true,
            sd: true,
            mv: true,
            coherence: false,
        }
    }
}

/// Hard straight-through binarization, or its soft surrogate for
/// finite-difference verification.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinarizeMode {
    Hard,
    SoftReference,
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct LossReport {
    pub oc: f64,
    pub cl: f64,
    pub ca: f64,
    pub sd: f64,
    pub mv: f64,
    pub coherence: f64,
    pub total: f64,
}

impl LossReport {
    /// Name of the first non-finite component, if any.
    pub fn non_finite_term(&self) -> Option<&'static str> {
        [
            ("oc", self.oc),
            ("cl", self.cl),
            ("sd", self.sd),
            ("mv", self.mv),
            ("coherence", self.coherence),
            ("total", self.total),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(n, _)| n)
    }
}

/// One-hot encode an `[H, W]` integer label map into `[K, H, W]`.
pub fn one_hot(labels: &Tensor, k: usize) -> Result<Tensor> {
    let s = labels.shape();
    if s.len() != 2 {
        return Err(CoreError::ShapeMismatch(format!(
            "one_hot: expected [H, W], got {s:?}"
        )));
    }
    let plane = s[0] * s[1];
    let mut out = vec![0.0; k * plane];
    for (i, &v) in labels.data().iter().enumerate() {
        let c = v as i64;
        if c < 0 || c >= k as i64 {
            return Err(CoreError::InvalidArgument(format!(
                "one_hot: label {c} out of range for K = {k}"
            )));
        }
        out[c as usize * plane + i] = 1.0;
    }
    Tensor::new(vec![k, s[0], s[1]], out)
}

fn check_prob_map(name: &str, g: &Graph, probs: Var) -> Result<(usize, usize, usize)> {
    let s = g.value(probs).shape();
    if s.len() != 3 {
        return Err(CoreError::ShapeMismatch(format!(
            "{name}: expected probabilities [K, H, W], got {s:?}"
        )));
    }
    if g.value(probs)
        .data()
        .iter()
        .any(|&v| !(-1e-6..=1.0 + 1e-6).contains(&v))
    {
        return Err(CoreError::InvalidArgument(format!(
            "{name}: probabilities outside [0, 1] beyond 1e-6"
        )));
    }
    Ok((s[0], s[1], s[2]))
}

fn check_gt(name: &str, shape: (usize, usize, usize), gt: &Tensor) -> Result<()> {
    if gt.shape() != [shape.0, shape.1, shape.2] {
        return Err(CoreError::ShapeMismatch(format!(
            "{name}: ground truth {:?} vs probabilities {:?}",
            gt.shape(),
            [shape.0, shape.1, shape.2]
        )));
    }
    Ok(())
}

/// Soft foreground probability `1 - probs[0]` as an `[H, W]` var.
fn foreground_prob(g: &mut Graph, probs: Var, h: usize, w: usize) -> Result<Var> {
    let p0 = g.slice_axis(probs, 0, 0, 1)?;
    let p0 = g.reshape(p0, &[h, w])?;
    let neg = g.mul_scalar(p0, -1.0);
    Ok(g.add_scalar(neg, 1.0))
}

/// Foreground indicator `1 - gt[0]` as plain data.
fn foreground_gt(gt: &Tensor, h: usize, w: usize) -> Tensor {
    let plane = h * w;
    let data = gt.data()[..plane].iter().map(|&v| 1.0 - v).collect();
    Tensor::new(vec![h, w], data).unwrap()
}

/// Object-centric focal loss: binary cross-entropy between foreground and
/// background, weighted `delta` towards the foreground region and gated per
/// pixel by `1 - hard_prediction` (the gate is detached; gradients flow only
/// through the soft probabilities). Each region's BCE is averaged within the
/// region; an empty region contributes zero.
pub fn oc_loss(g: &mut Graph, probs: Var, gt: &Tensor, delta: f64) -> Result<Var> {
    let (k, h, w) = check_prob_map("oc_loss", g, probs)?;
    check_gt("oc_loss", (k, h, w), gt)?;
    let p_fg = foreground_prob(g, probs, h, w)?;
    let y_fg = foreground_gt(gt, h, w);

    let hard = g.hard_threshold(p_fg, 0.5, false);
    let neg_hard = g.mul_scalar(hard, -1.0);
    let gate = g.add_scalar(neg_hard, 1.0);

    let pc = g.clamp(p_fg, LOG_EPS, 1.0);
    let ln_p = g.log(pc)?;
    let neg_p = g.mul_scalar(p_fg, -1.0);
    let one_minus_p = g.add_scalar(neg_p, 1.0);
    let omc = g.clamp(one_minus_p, LOG_EPS, 1.0);
    let ln_1mp = g.log(omc)?;

    let y_const = g.constant(y_fg.clone());
    let omy = Tensor::new(
        vec![h, w],
        y_fg.data().iter().map(|&v| 1.0 - v).collect(),
    )?;
    let omy_const = g.constant(omy.clone());

    let fg_part = g.mul(y_const, ln_p)?;
    let bg_part = g.mul(omy_const, ln_1mp)?;
    let s = g.add(fg_part, bg_part)?;
    let bce = g.mul_scalar(s, -1.0);
    let gated = g.mul(gate, bce)?;

    let n_fg = y_fg.sum();
    let n_bg = omy.sum();
    let mut loss: Option<Var> = None;
    if n_fg > 0.0 {
        let masked = g.mul(gated, y_const)?;
        let total = g.sum_all(masked);
        let term = g.mul_scalar(total, delta / n_fg);
        loss = Some(term);
    }
    if n_bg > 0.0 {
        let masked = g.mul(gated, omy_const)?;
        let total = g.sum_all(masked);
        let term = g.mul_scalar(total, (1.0 - delta) / n_bg);
        loss = Some(match loss {
            Some(acc) => g.add(acc, term)?,
            None => term,
        });
    }
    Ok(loss.unwrap_or_else(|| g.constant(Tensor::scalar(0.0))))
}

/// Class-agnostic localization loss `1 - TP / (TP + FN + FP)` on the
/// binarized foreground prediction. When neither ground truth nor prediction
/// contains foreground, the loss is defined as zero.
pub fn cl_loss(g: &mut Graph, probs: Var, gt: &Tensor, mode: BinarizeMode) -> Result<Var> {
    let (k, h, w) = check_prob_map("cl_loss", g, probs)?;
    check_gt("cl_loss", (k, h, w), gt)?;
    let p_fg = foreground_prob(g, probs, h, w)?;
    let y_fg = foreground_gt(gt, h, w);

    let b = match mode {
        BinarizeMode::Hard => g.hard_threshold(p_fg, 0.5, true),
        BinarizeMode::SoftReference => p_fg,
    };
    let y_const = g.constant(y_fg.clone());
    let omy = Tensor::new(vec![h, w], y_fg.data().iter().map(|&v| 1.0 - v).collect())?;
    let omy_const = g.constant(omy);
    let neg_b = g.mul_scalar(b, -1.0);
    let omb = g.add_scalar(neg_b, 1.0);

    let tp_map = g.mul(b, y_const)?;
    let fp_map = g.mul(b, omy_const)?;
    let fn_map = g.mul(omb, y_const)?;
    let tp = g.sum_all(tp_map);
    let fp = g.sum_all(fp_map);
    let fng = g.sum_all(fn_map);
    let partial = g.add(tp, fng)?;
    let denom = g.add(partial, fp)?;
    if g.value(denom).data()[0] == 0.0 {
        return Ok(g.constant(Tensor::scalar(0.0)));
    }
    let ratio = g.div(tp, denom)?;
    let neg = g.mul_scalar(ratio, -1.0);
    Ok(g.add_scalar(neg, 1.0))
}

/// Multi-class soft Dice over the continuous probability maps. A class with
/// no mass in either ground truth or prediction contributes zero.
pub fn sd_loss(g: &mut Graph, probs: Var, gt: &Tensor) -> Result<Var> {
    let (k, h, w) = check_prob_map("sd_loss", g, probs)?;
    check_gt("sd_loss", (k, h, w), gt)?;
    let plane = h * w;
    let mut acc: Option<Var> = None;
    for c in 0..k {
        let y_data = &gt.data()[c * plane..(c + 1) * plane];
        let sum_y2: f64 = y_data.iter().map(|v| v * v).sum();
        let p_c = g.slice_axis(probs, 0, c, 1)?;
        let p2 = g.mul(p_c, p_c)?;
        let sum_p2 = g.sum_all(p2);
        if sum_y2 == 0.0 && g.value(sum_p2).data()[0] == 0.0 {
            continue;
        }
        let y_const = g.constant(Tensor::new(vec![1, h, w], y_data.to_vec())?);
        let yp = g.mul(p_c, y_const)?;
        let num = g.sum_all(yp);
        let num2 = g.mul_scalar(num, 2.0);
        let den = g.add_scalar(sum_p2, sum_y2 + DICE_EPS);
        let ratio = g.div(num2, den)?;
        let neg = g.mul_scalar(ratio, -1.0);
        let term = g.add_scalar(neg, 1.0);
        acc = Some(match acc {
            Some(a) => g.add(a, term)?,
            None => term,
        });
    }
    Ok(match acc {
        Some(a) => g.mul_scalar(a, 1.0 / k as f64),
        None => g.constant(Tensor::scalar(0.0)),
    })
}

/// Max-pool both heads down to range profiles `[K, R]`.
fn pooled_range_profiles(g: &mut Graph, rd_probs: Var, ra_probs: Var) -> Result<(Var, Var)> {
    let (rs, as_) = (
        g.value(rd_probs).shape().to_vec(),
        g.value(ra_probs).shape().to_vec(),
    );
    if rs.len() != 3 || as_.len() != 3 || rs[0] != as_[0] || rs[1] != as_[1] {
        return Err(CoreError::ShapeMismatch(format!(
            "range pooling: heads must share [K, R, _], got {rs:?} vs {as_:?}"
        )));
    }
    let rd_m = g.max_over_axis(rd_probs, 2)?;
    let ra_m = g.max_over_axis(ra_probs, 2)?;
    Ok((rd_m, ra_m))
}

/// Multi-view range matching: unit-knee Huber between the max-pooled range
/// profiles of the two heads, averaged over K x R.
pub fn mv_loss(g: &mut Graph, rd_probs: Var, ra_probs: Var) -> Result<Var> {
    let (rd_m, ra_m) = pooled_range_profiles(g, rd_probs, ra_probs)?;
    let e = g.sub(rd_m, ra_m)?;
    let h = g.huber_unit(e);
    Ok(g.mean_all(h))
}

/// Mean-square coherence of the pooled range profiles (the baseline
/// alternative to [`mv_loss`], kept for ablations).
pub fn coherence_loss(g: &mut Graph, rd_probs: Var, ra_probs: Var) -> Result<Var> {
    let (rd_m, ra_m) = pooled_range_profiles(g, rd_probs, ra_probs)?;
    let e = g.sub(rd_m, ra_m)?;
    let sq = g.mul(e, e)?;
    Ok(g.mean_all(sq))
}

pub struct TotalLoss {
    pub total: Var,
    pub report: LossReport,
}

/// Weighted sum of the enabled terms over both heads:
/// `alpha1 * (OC + CL) + alpha2 * SD + alpha3 * MV`, with OC, CL and SD each
/// evaluated on the RD and RA heads and summed.
pub fn total_loss(
    g: &mut Graph,
    rd_probs: Var,
    ra_probs: Var,
    gt_rd: &Tensor,
    gt_ra: &Tensor,
    weights: &LossWeights,
    toggles: &LossToggles,
    mode: BinarizeMode,
) -> Result<TotalLoss> {
    weights.validate()?;
    let mut report = LossReport::default();
    let mut total: Option<Var> = None;
    let add_term = |g: &mut Graph, term: Var, weight: f64, total: &mut Option<Var>| -> Result<f64> {
        let value = g.value(term).data()[0];
        if weight != 0.0 {
            let weighted = g.mul_scalar(term, weight);
            *total = Some(match total.take() {
                Some(acc) => g.add(acc, weighted)?,
                None => weighted,
            });
        }
        Ok(value)
    };

    if toggles.oc {
        let rd = oc_loss(g, rd_probs, gt_rd, weights.delta)?;
        let ra = oc_loss(g, ra_probs, gt_ra, weights.delta)?;
        let sum = g.add(rd, ra)?;
        report.oc = add_term(g, sum, weights.alpha1, &mut total)?;
    }
    if toggles.cl {
        let rd = cl_loss(g, rd_probs, gt_rd, mode)?;
        let ra = cl_loss(g, ra_probs, gt_ra, mode)?;
        let sum = g.add(rd, ra)?;
        report.cl = add_term(g, sum, weights.alpha1, &mut total)?;
    }
    report.ca = report.oc + report.cl;
    if toggles.sd {
        let rd = sd_loss(g, rd_probs, gt_rd)?;
        let ra = sd_loss(g, ra_probs, gt_ra)?;
        let sum = g.add(rd, ra)?;
        report.sd = add_term(g, sum, weights.alpha2, &mut total)?;
    }
    if toggles.mv {
        let term = mv_loss(g, rd_probs, ra_probs)?;
        report.mv = add_term(g, term, weights.alpha3, &mut total)?;
    }
    if toggles.coherence {
        let term = coherence_loss(g, rd_probs, ra_probs)?;
        report.coherence = add_term(g, term, weights.alpha3, &mut total)?;
    }
    let total = total.unwrap_or_else(|| g.constant(Tensor::scalar(0.0)));
    report.total = g.value(total).data()[0];
    Ok(TotalLoss { total, report })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::grad_check;
    use crate::params::ParamSet;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn probs_const(g: &mut Graph, t: Tensor) -> Var {
        g.constant(t)
    }

    /// Fill [K, H, W] with a distribution placing `p_fg` mass on class 1.
    fn two_class_map(h: usize, w: usize, p_fg: f64) -> Tensor {
        let plane = h * w;
        let mut data = vec![0.0; 2 * plane];
        for i in 0..plane {
            data[i] = 1.0 - p_fg;
            data[plane + i] = p_fg;
        }
        Tensor::new(vec![2, h, w], data).unwrap()
    }

    fn labels(h: usize, w: usize, fg: &[(usize, usize)]) -> Tensor {
        let mut data = vec![0.0; h * w];
        for &(y, x) in fg {
            data[y * w + x] = 1.0;
        }
        Tensor::new(vec![h, w], data).unwrap()
    }

    #[test]
    fn oc_perfect_hard_prediction_is_zero() {
        let gt = one_hot(&labels(2, 2, &[(0, 0)]), 2).unwrap();
        let mut g = Graph::new();
        // Exact 0/1 foreground probabilities matching the ground truth.
        let mut data = vec![0.0; 8];
        data[0] = 0.0; // class 0 at fg pixel
        data[1] = 1.0;
        data[2] = 1.0;
        data[3] = 1.0;
        data[4] = 1.0; // class 1 at fg pixel
        let probs = probs_const(&mut g, Tensor::new(vec![2, 2, 2], data).unwrap());
        let loss = oc_loss(&mut g, probs, &gt, 0.6).unwrap();
        assert_eq!(g.value(loss).data()[0], 0.0);
    }

    #[test]
    fn oc_all_background_half_probability() {
        let gt = one_hot(&labels(3, 3, &[]), 2).unwrap();
        let mut g = Graph::new();
        let probs = probs_const(&mut g, two_class_map(3, 3, 0.5));
        let loss = oc_loss(&mut g, probs, &gt, 0.6).unwrap();
        let expect = 0.4 * (0.5f64.ln().abs());
        assert!((g.value(loss).data()[0] - expect).abs() < 1e-12);
        assert!((g.value(loss).data()[0] - 0.27726).abs() < 1e-4);
    }

    #[test]
    fn oc_delta_one_removes_background_term() {
        let gt = one_hot(&labels(3, 3, &[]), 2).unwrap();
        let mut g = Graph::new();
        let probs = probs_const(&mut g, two_class_map(3, 3, 0.5));
        let loss = oc_loss(&mut g, probs, &gt, 1.0).unwrap();
        assert_eq!(g.value(loss).data()[0], 0.0);
    }

    #[test]
    fn oc_rejects_invalid_probabilities() {
        let gt = one_hot(&labels(1, 1, &[]), 2).unwrap();
        let mut g = Graph::new();
        let probs = probs_const(&mut g, Tensor::new(vec![2, 1, 1], vec![1.5, -0.5]).unwrap());
        assert!(oc_loss(&mut g, probs, &gt, 0.6).is_err());
    }

    #[test]
    fn cl_perfect_prediction_is_zero() {
        let gt = one_hot(&labels(2, 2, &[(1, 1)]), 2).unwrap();
        let mut g = Graph::new();
        let mut data = vec![0.0; 8];
        for i in 0..4 {
            let fg = i == 3;
            data[i] = if fg { 0.0 } else { 1.0 };
            data[4 + i] = if fg { 1.0 } else { 0.0 };
        }
        let probs = probs_const(&mut g, Tensor::new(vec![2, 2, 2], data).unwrap());
        let loss = cl_loss(&mut g, probs, &gt, BinarizeMode::Hard).unwrap();
        assert_eq!(g.value(loss).data()[0], 0.0);
    }

    #[test]
    fn cl_counts_match_pixel_enumeration() {
        // 3x3 maps: gt has 5 foreground pixels, prediction hits 3 of them
        // plus 1 false positive -> TP=3, FN=2, FP=1 -> 1 - 3/6 = 0.5.
        let gt = one_hot(&labels(3, 3, &[(0, 0), (0, 1), (0, 2), (1, 0), (1, 1)]), 2).unwrap();
        let pred_fg = [(0usize, 0usize), (0, 1), (0, 2), (2, 2)];
        let mut data = vec![0.0; 18];
        for y in 0..3 {
            for x in 0..3 {
                let i = y * 3 + x;
                let fg = pred_fg.contains(&(y, x));
                data[i] = if fg { 0.1 } else { 0.9 };
                data[9 + i] = if fg { 0.9 } else { 0.1 };
            }
        }
        let mut g = Graph::new();
        let probs = probs_const(&mut g, Tensor::new(vec![2, 3, 3], data).unwrap());
        let loss = cl_loss(&mut g, probs, &gt, BinarizeMode::Hard).unwrap();
        assert!((g.value(loss).data()[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn cl_all_foreground_on_empty_gt_is_one() {
        let gt = one_hot(&labels(2, 2, &[]), 2).unwrap();
        let mut g = Graph::new();
        let probs = probs_const(&mut g, two_class_map(2, 2, 0.9));
        let loss = cl_loss(&mut g, probs, &gt, BinarizeMode::Hard).unwrap();
        assert_eq!(g.value(loss).data()[0], 1.0);
    }

    #[test]
    fn cl_empty_on_empty_is_zero() {
        let gt = one_hot(&labels(2, 2, &[]), 2).unwrap();
        let mut g = Graph::new();
        let probs = probs_const(&mut g, two_class_map(2, 2, 0.1));
        let loss = cl_loss(&mut g, probs, &gt, BinarizeMode::Hard).unwrap();
        assert_eq!(g.value(loss).data()[0], 0.0);
    }

    #[test]
    fn sd_exact_match_is_zero_and_empty_class_skipped() {
        let gt = one_hot(&labels(2, 2, &[(0, 1)]), 3).unwrap();
        let mut g = Graph::new();
        let probs = probs_const(&mut g, gt.clone());
        let loss = sd_loss(&mut g, probs, &gt).unwrap();
        // Classes 0 and 1 match exactly (tiny epsilon residue); class 2 is
        // absent from both and contributes nothing.
        assert!(g.value(loss).data()[0].abs() < 1e-8);
    }

    #[test]
    fn sd_single_pixel_hand_value() {
        let gt = one_hot(&labels(1, 1, &[]), 2).unwrap();
        let mut g = Graph::new();
        let probs = probs_const(&mut g, Tensor::new(vec![2, 1, 1], vec![0.8, 0.2]).unwrap());
        let loss = sd_loss(&mut g, probs, &gt).unwrap();
        let expect = 0.5 * ((1.0 - 1.6 / (1.64 + DICE_EPS)) + 1.0);
        assert!((g.value(loss).data()[0] - expect).abs() < 1e-12);
        assert!((g.value(loss).data()[0] - 0.51220).abs() < 1e-4);
    }

    #[test]
    fn sd_monotone_towards_ground_truth() {
        // Independent plain-f64 re-evaluation oracle.
        fn sd_oracle(p: &[f64], y: &[f64], k: usize, plane: usize) -> f64 {
            let mut acc = 0.0;
            for c in 0..k {
                let pc = &p[c * plane..(c + 1) * plane];
                let yc = &y[c * plane..(c + 1) * plane];
                let sy2: f64 = yc.iter().map(|v| v * v).sum();
                let sp2: f64 = pc.iter().map(|v| v * v).sum();
                if sy2 == 0.0 && sp2 == 0.0 {
                    continue;
                }
                let num: f64 = pc.iter().zip(yc).map(|(a, b)| a * b).sum();
                acc += 1.0 - 2.0 * num / (sy2 + sp2 + DICE_EPS);
            }
            acc / k as f64
        }

        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..20 {
            let (k, h, w) = (3usize, 4usize, 4usize);
            let plane = h * w;
            let label_data: Vec<f64> = (0..plane).map(|_| rng.gen_range(0..k) as f64).collect();
            let gt = one_hot(&Tensor::new(vec![h, w], label_data).unwrap(), k).unwrap();
            let mut p: Vec<f64> = (0..k * plane).map(|_| rng.gen_range(0.05..0.95)).collect();
            let before = sd_oracle(&p, gt.data(), k, plane);

            let idx = rng.gen_range(0..k * plane);
            let target = gt.data()[idx];
            if (p[idx] - target).abs() < 1e-6 {
                continue;
            }
            p[idx] += 0.5 * (target - p[idx]);
            let after = sd_oracle(&p, gt.data(), k, plane);
            assert!(
                after < before,
                "sd did not decrease: {before} -> {after}"
            );

            // Implementation agrees with the oracle on the perturbed point.
            let mut g = Graph::new();
            let probs = probs_const(&mut g, Tensor::new(vec![k, h, w], p.clone()).unwrap());
            let loss = sd_loss(&mut g, probs, &gt).unwrap();
            assert!((g.value(loss).data()[0] - after).abs() < 1e-12);
        }
    }

    #[test]
    fn mv_identical_and_permuted_maps() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let data: Vec<f64> = (0..2 * 3 * 4).map(|_| rng.gen_range(0.0..1.0)).collect();
        let rd = Tensor::new(vec![2, 3, 4], data.clone()).unwrap();
        let mut g = Graph::new();
        let rd_v = g.constant(rd.clone());
        let ra_v = g.constant(rd.clone());
        let loss = mv_loss(&mut g, rd_v, ra_v).unwrap();
        assert_eq!(g.value(loss).data()[0], 0.0);

        // Permuting the pooled-out axis leaves the loss unchanged and the
        // arguments are symmetric.
        let mut permuted = vec![0.0; data.len()];
        let order = [2usize, 0, 3, 1];
        for c in 0..2 {
            for r in 0..3 {
                for (dst, &src) in order.iter().enumerate() {
                    permuted[(c * 3 + r) * 4 + dst] = data[(c * 3 + r) * 4 + src];
                }
            }
        }
        let ra2 = Tensor::new(vec![2, 3, 4], permuted).unwrap();
        let other: Vec<f64> = (0..2 * 3 * 4).map(|_| rng.gen_range(0.0..1.0)).collect();
        let rd2 = Tensor::new(vec![2, 3, 4], other).unwrap();

        let mut g = Graph::new();
        let a = g.constant(rd2.clone());
        let b1 = g.constant(rd.clone());
        let b2 = g.constant(ra2);
        let l1 = mv_loss(&mut g, a, b1).unwrap();
        let l2 = mv_loss(&mut g, a, b2).unwrap();
        assert_eq!(g.value(l1).data()[0], g.value(l2).data()[0]);

        let l3 = mv_loss(&mut g, b1, a).unwrap();
        assert_eq!(g.value(l1).data()[0], g.value(l3).data()[0]);
    }

    #[test]
    fn mv_piecewise_values() {
        // Single-element maps isolate one Huber evaluation.
        let mut g = Graph::new();
        let rd = g.constant(Tensor::new(vec![1, 1, 1], vec![1.5]).unwrap());
        let ra = g.constant(Tensor::new(vec![1, 1, 1], vec![0.0]).unwrap());
        let loss = mv_loss(&mut g, rd, ra).unwrap();
        assert!((g.value(loss).data()[0] - 1.0).abs() < 1e-15);

        let rd = g.constant(Tensor::new(vec![1, 1, 1], vec![0.5]).unwrap());
        let ra = g.constant(Tensor::new(vec![1, 1, 1], vec![0.0]).unwrap());
        let loss = mv_loss(&mut g, rd, ra).unwrap();
        assert!((g.value(loss).data()[0] - 0.125).abs() < 1e-15);
    }

    #[test]
    fn mv_range_mismatch_errors() {
        let mut g = Graph::new();
        let rd = g.constant(Tensor::zeros(&[2, 3, 4]));
        let ra = g.constant(Tensor::zeros(&[2, 5, 4]));
        assert!(mv_loss(&mut g, rd, ra).is_err());
    }

    #[test]
    fn huber_continuity_at_unit_knee() {
        let eps = 1e-6;
        for side in [1.0 - eps, 1.0 + eps] {
            let mut g = Graph::new();
            let e = g.leaf(Tensor::scalar(side));
            let h = g.huber_unit(e);
            let value = g.value(h).data()[0];
            assert!((value - 0.5).abs() <= 1.001e-6, "value at {side}: {value}");
            g.backward(h).unwrap();
            let deriv = g.grad(e).unwrap().data()[0];
            assert!((deriv - 1.0).abs() <= 1.001e-6, "derivative at {side}: {deriv}");
        }
    }

    #[test]
    fn total_loss_weighting_and_report() {
        let gt_rd = one_hot(&labels(2, 3, &[(0, 0)]), 2).unwrap();
        let gt_ra = one_hot(&labels(2, 4, &[(1, 2)]), 2).unwrap();
        let mut g = Graph::new();
        let rd = probs_const(&mut g, two_class_map(2, 3, 0.3));
        let ra = probs_const(&mut g, two_class_map(2, 4, 0.7));
        let weights = LossWeights {
            alpha1: 1.0,
            alpha2: 10.0,
            alpha3: 5.0,
            delta: 0.6,
        };
        let out = total_loss(
            &mut g,
            rd,
            ra,
            &gt_rd,
            &gt_ra,
            &weights,
            &LossToggles::default(),
            BinarizeMode::Hard,
        )
        .unwrap();
        let r = out.report;
        assert!(r.oc >= 0.0 && r.cl >= 0.0 && r.sd >= 0.0 && r.mv >= 0.0);
        assert!((r.ca - (r.oc + r.cl)).abs() < 1e-12);
        let expect = 1.0 * (r.oc + r.cl) + 10.0 * r.sd + 5.0 * r.mv;
        assert!((r.total - expect).abs() < 1e-9);
        assert_eq!(g.value(out.total).data()[0], r.total);

        // alpha = (1, 0, 0) keeps only OC + CL.
        let weights = LossWeights {
            alpha1: 1.0,
            alpha2: 0.0,
            alpha3: 0.0,
            delta: 0.6,
        };
        let out = total_loss(
            &mut g,
            rd,
            ra,
            &gt_rd,
            &gt_ra,
            &weights,
            &LossToggles::default(),
            BinarizeMode::Hard,
        )
        .unwrap();
        assert!((out.report.total - (out.report.oc + out.report.cl)).abs() < 1e-12);
    }

    #[test]
    fn total_loss_zero_components_zero_total() {
        // Perfect one-hot predictions: every component is exactly zero.
        let gt = one_hot(&labels(2, 2, &[(0, 1)]), 2).unwrap();
        let mut g = Graph::new();
        let p = probs_const(&mut g, gt.clone());
        let out = total_loss(
            &mut g,
            p,
            p,
            &gt,
            &gt,
            &LossWeights::default(),
            &LossToggles::default(),
            BinarizeMode::Hard,
        )
        .unwrap();
        assert!(out.report.total.abs() < 1e-7, "total {}", out.report.total);
    }

    /// Gradient checks for every loss, driven through a softmax so the
    /// parameters are unconstrained logits. Straight-through binarization is
    /// checked along its soft backward definition.
    #[test]
    fn losses_pass_grad_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let (k, h, w) = (3usize, 4usize, 3usize);
        let gt = one_hot(
            &Tensor::new(
                vec![h, w],
                (0..h * w).map(|_| rng.gen_range(0..k) as f64).collect(),
            )
            .unwrap(),
            k,
        )
        .unwrap();
        let gt_ra = one_hot(
            &Tensor::new(
                vec![h, w],
                (0..h * w).map(|_| rng.gen_range(0..k) as f64).collect(),
            )
            .unwrap(),
            k,
        )
        .unwrap();
        let logits: Vec<f64> = (0..2 * k * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let softmax_probs = |g: &mut Graph, logits: Var, k: usize| -> crate::error::Result<Var> {
            let perm = g.permute(logits, &[1, 2, 0])?;
            let flat = g.reshape(perm, &[h * w, k])?;
            let sm = g.softmax_lastdim(flat)?;
            let back = g.reshape(sm, &[h, w, k])?;
            g.permute(back, &[2, 0, 1])
        };

        let mut ps = ParamSet::new();
        ps.add(
            "logits",
            Tensor::new(vec![2, k, h, w], logits).unwrap(),
        )
        .unwrap();

        let gt_rd = gt.clone();
        let report = grad_check(&mut ps, 1e-5, 1e-4, move |g, bound| {
            let all = bound.var("logits")?;
            let parts = g.split(all, 0, &[1, 1])?;
            let rd_l = g.reshape(parts[0], &[k, h, w])?;
            let ra_l = g.reshape(parts[1], &[k, h, w])?;
            let rd = softmax_probs(g, rd_l, k)?;
            let ra = softmax_probs(g, ra_l, k)?;
            let out = total_loss(
                g,
                rd,
                ra,
                &gt_rd,
                &gt_ra,
                &LossWeights::default(),
                &LossToggles {
                    coherence: true,
                    ..LossToggles::default()
                },
                BinarizeMode::SoftReference,
            )?;
            Ok(out.total)
        })
        .unwrap();
        assert!(report.passed, "{report}");
    }
}
