//! Adaptive-directional attention.
//!
//! A block runs two directional stages over a `[C, H, W]` feature map. The
//! column stage forms one token per column by summing modulated,
//! fractionally offset copies of neighbouring columns (channels folded into
//! the token), then applies multi-head self-attention; the row stage mirrors
//! it. Offsets and modulation weights are learnable; with k = 1, zero offset
//! and unit weight the sampling is an exact no-op and the block degrades to
//! plain axial attention.

use rand_chacha::ChaCha8Rng;

use crate::error::{CoreError, Result};
use crate::graph::{Graph, Var};
use crate::init::{he_uniform, offset_ladder};
use crate::params::{BoundParams, ParamSet};
use crate::tensor::Tensor;

fn shape3(g: &Graph, x: Var, who: &str) -> Result<(usize, usize, usize)> {
    let s = g.value(x).shape();
    if s.len() != 3 {
        return Err(CoreError::ShapeMismatch(format!(
            "{who}: expected [C, H, W], got {s:?}"
        )));
    }
    Ok((s[0], s[1], s[2]))
}

/// Reorder `[C, H, W]` into column tokens `[W, H*C]`.
pub fn fold_columns(g: &mut Graph, x: Var) -> Result<Var> {
    let (c, h, w) = shape3(g, x, "fold_columns")?;
    let p = g.permute(x, &[2, 1, 0])?;
    g.reshape(p, &[w, h * c])
}

/// Inverse of [`fold_columns`].
pub fn unfold_columns(g: &mut Graph, tokens: Var, c: usize, h: usize, w: usize) -> Result<Var> {
    let t = g.reshape(tokens, &[w, h, c])?;
    g.permute(t, &[2, 1, 0])
}

/// Reorder `[C, H, W]` into row tokens `[H, W*C]`.
pub fn fold_rows(g: &mut Graph, x: Var) -> Result<Var> {
    let (c, h, w) = shape3(g, x, "fold_rows")?;
    let p = g.permute(x, &[1, 2, 0])?;
    g.reshape(p, &[h, w * c])
}

/// Inverse of [`fold_rows`].
pub fn unfold_rows(g: &mut Graph, tokens: Var, c: usize, h: usize, w: usize) -> Result<Var> {
    let t = g.reshape(tokens, &[h, w, c])?;
    g.permute(t, &[2, 0, 1])
}

fn check_taps(g: &Graph, theta: Var, delta: Var, who: &str) -> Result<usize> {
    let k = g.value(theta).numel();
    if k == 0 || g.value(delta).numel() != k {
        return Err(CoreError::ShapeMismatch(format!(
            "{who}: theta and delta must share k >= 1 elements"
        )));
    }
    Ok(k)
}

/// Column sampling: token j = sum_k theta[k] * x(:, :, j + delta[k]), with
/// fractional column indices linearly interpolated and clamped at the
/// borders. Returns `[W, H*C]` tokens.
pub fn sample_columns(g: &mut Graph, x: Var, theta: Var, delta: Var) -> Result<Var> {
    let (_, _, w) = shape3(g, x, "sample_columns")?;
    let k = check_taps(g, theta, delta, "sample_columns")?;
    let ramp = g.constant(Tensor::ramp(w));
    let mut acc: Option<Var> = None;
    for i in 0..k {
        let th = g.index_elem(theta, i)?;
        let dh = g.index_elem(delta, i)?;
        let pos = g.shift_by_elem(ramp, dh)?;
        let gathered = g.linear_interp_gather(x, 2, pos)?;
        let term = g.scale_by_elem(gathered, th)?;
        acc = Some(match acc {
            Some(a) => g.add(a, term)?,
            None => term,
        });
    }
    fold_columns(g, acc.unwrap())
}

/// Row sampling, the mirror of [`sample_columns`]: token i =
/// sum_k theta[k] * x(:, i + delta[k], :). Returns `[H, W*C]` tokens.
pub fn sample_rows(g: &mut Graph, x: Var, theta: Var, delta: Var) -> Result<Var> {
    let (_, h, _) = shape3(g, x, "sample_rows")?;
    let k = check_taps(g, theta, delta, "sample_rows")?;
    let ramp = g.constant(Tensor::ramp(h));
    let mut acc: Option<Var> = None;
    for i in 0..k {
        let th = g.index_elem(theta, i)?;
        let dw = g.index_elem(delta, i)?;
        let pos = g.shift_by_elem(ramp, dw)?;
        let gathered = g.linear_interp_gather(x, 1, pos)?;
        let term = g.scale_by_elem(gathered, th)?;
        acc = Some(match acc {
            Some(a) => g.add(a, term)?,
            None => term,
        });
    }
    fold_rows(g, acc.unwrap())
}

/// Multi-head self-attention over `[N, d_model]` tokens: per head
/// softmax(q k^T / sqrt(d_k)) v, heads concatenated and output-projected.
/// No positional encoding and no feed-forward sublayer.
pub fn msa_forward(
    g: &mut Graph,
    tokens: Var,
    wq: Var,
    wk: Var,
    wv: Var,
    wo: Var,
    heads: usize,
) -> Result<Var> {
    let (out, _) = msa_forward_with_attn(g, tokens, wq, wk, wv, wo, heads)?;
    Ok(out)
}

/// [`msa_forward`] that also returns the per-head attention maps (rows of
/// each map sum to one), for inspection in tests.
pub fn msa_forward_with_attn(
    g: &mut Graph,
    tokens: Var,
    wq: Var,
    wk: Var,
    wv: Var,
    wo: Var,
    heads: usize,
) -> Result<(Var, Vec<Var>)> {
    let s = g.value(tokens).shape().to_vec();
    if s.len() != 2 {
        return Err(CoreError::ShapeMismatch(format!(
            "msa: expected [N, d_model] tokens, got {s:?}"
        )));
    }
    let d_model = s[1];
    if heads == 0 || d_model % heads != 0 {
        return Err(CoreError::InvalidArgument(format!(
            "msa: d_model {d_model} not divisible by {heads} heads"
        )));
    }
    let d_k = d_model / heads;
    let q = g.matmul(tokens, wq)?;
    let k = g.matmul(tokens, wk)?;
    let v = g.matmul(tokens, wv)?;
    let sizes = vec![d_k; heads];
    let qs = g.split(q, 1, &sizes)?;
    let ks = g.split(k, 1, &sizes)?;
    let vs = g.split(v, 1, &sizes)?;
    let scale = 1.0 / (d_k as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    let mut attns = Vec::with_capacity(heads);
    for hi in 0..heads {
        let kt = g.permute(ks[hi], &[1, 0])?;
        let scores = g.matmul(qs[hi], kt)?;
        let scaled = g.mul_scalar(scores, scale);
        let attn = g.softmax_lastdim(scaled)?;
        attns.push(attn);
        outs.push(g.matmul(attn, vs[hi])?);
    }
    let cat = g.concat(1, &outs)?;
    let out = g.matmul(cat, wo)?;
    Ok((out, attns))
}

/// One MSA stage: four named square projection matrices.
#[derive(Debug, Clone)]
pub struct MsaLayer {
    wq: String,
    wk: String,
    wv: String,
    wo: String,
    pub heads: usize,
    pub d_model: usize,
}

impl MsaLayer {
    pub fn new(
        ps: &mut ParamSet,
        rng: &mut ChaCha8Rng,
        prefix: &str,
        d_model: usize,
        heads: usize,
    ) -> Result<Self> {
        if heads == 0 || d_model % heads != 0 {
            return Err(CoreError::InvalidArgument(format!(
                "{prefix}: d_model {d_model} not divisible by {heads} heads"
            )));
        }
        let names = ["wq", "wk", "wv", "wo"].map(|n| format!("{prefix}.{n}"));
        for name in &names {
            ps.add(name, he_uniform(rng, &[d_model, d_model], d_model))?;
        }
        let [wq, wk, wv, wo] = names;
        Ok(MsaLayer {
            wq,
            wk,
            wv,
            wo,
            heads,
            d_model,
        })
    }

    pub fn forward(&self, g: &mut Graph, bound: &BoundParams, tokens: Var) -> Result<Var> {
        msa_forward(
            g,
            tokens,
            bound.var(&self.wq)?,
            bound.var(&self.wk)?,
            bound.var(&self.wv)?,
            bound.var(&self.wo)?,
            self.heads,
        )
    }
}

/// The adaptive-directional block: column sampling, MSA, row sampling, MSA,
/// with a residual connection around each MSA stage. In `adaptive: false`
/// mode the sampling stages are plain column/row folds (straight lines, no
/// offset or modulation).
#[derive(Debug, Clone)]
pub struct AdaBlock {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub k_h: usize,
    pub k_w: usize,
    pub adaptive: bool,
    theta_h: String,
    delta_h: String,
    theta_w: String,
    delta_w: String,
    pub msa_col: MsaLayer,
    pub msa_row: MsaLayer,
}

impl AdaBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        ps: &mut ParamSet,
        rng: &mut ChaCha8Rng,
        prefix: &str,
        c: usize,
        h: usize,
        w: usize,
        heads: usize,
        k_h: usize,
        k_w: usize,
        adaptive: bool,
    ) -> Result<Self> {
        if k_h == 0 || k_w == 0 {
            return Err(CoreError::InvalidArgument(format!(
                "{prefix}: k_h and k_w must be >= 1"
            )));
        }
        let theta_h = format!("{prefix}.theta_h");
        let delta_h = format!("{prefix}.delta_h");
        let theta_w = format!("{prefix}.theta_w");
        let delta_w = format!("{prefix}.delta_w");
        ps.add(&theta_h, Tensor::full(&[k_w], 1.0 / k_w as f64))?;
        ps.add(&delta_h, Tensor::new(vec![k_w], offset_ladder(k_w))?)?;
        ps.add(&theta_w, Tensor::full(&[k_h], 1.0 / k_h as f64))?;
        ps.add(&delta_w, Tensor::new(vec![k_h], offset_ladder(k_h))?)?;
        let msa_col = MsaLayer::new(ps, rng, &format!("{prefix}.msa_col"), h * c, heads)?;
        let msa_row = MsaLayer::new(ps, rng, &format!("{prefix}.msa_row"), w * c, heads)?;
        Ok(AdaBlock {
            c,
            h,
            w,
            k_h,
            k_w,
            adaptive,
            theta_h,
            delta_h,
            theta_w,
            delta_w,
            msa_col,
            msa_row,
        })
    }

    pub fn forward(&self, g: &mut Graph, bound: &BoundParams, x: Var) -> Result<Var> {
        let (c, h, w) = shape3(g, x, "block_forward")?;
        if (c, h, w) != (self.c, self.h, self.w) {
            return Err(CoreError::ShapeMismatch(format!(
                "block_forward: got [{c}, {h}, {w}], block built for [{}, {}, {}]",
                self.c, self.h, self.w
            )));
        }

        // Column stage: W tokens of size H*C.
        let t1 = if self.adaptive {
            let theta = bound.var(&self.theta_h)?;
            let delta = bound.var(&self.delta_h)?;
            sample_columns(g, x, theta, delta)?
        } else {
            fold_columns(g, x)?
        };
        let a1 = self.msa_col.forward(g, bound, t1)?;
        let r1 = g.add(t1, a1)?;
        let y1 = unfold_columns(g, r1, c, h, w)?;

        // Row stage: H tokens of size W*C.
        let t2 = if self.adaptive {
            let theta = bound.var(&self.theta_w)?;
            let delta = bound.var(&self.delta_w)?;
            sample_rows(g, y1, theta, delta)?
        } else {
            fold_rows(g, y1)?
        };
        let a2 = self.msa_row.forward(g, bound, t2)?;
        let r2 = g.add(t2, a2)?;
        unfold_rows(g, r2, c, h, w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::grad_check;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
    }

    fn tap_consts(g: &mut Graph, theta: &[f64], delta: &[f64]) -> (Var, Var) {
        let t = g.constant(Tensor::new(vec![theta.len()], theta.to_vec()).unwrap());
        let d = g.constant(Tensor::new(vec![delta.len()], delta.to_vec()).unwrap());
        (t, d)
    }

    #[test]
    fn identity_configuration_is_bit_exact_noop() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let x_t = rand_tensor(&mut rng, &[3, 4, 5], -2.0, 2.0);
        let mut g = Graph::new();
        let x = g.constant(x_t);
        let (theta, delta) = tap_consts(&mut g, &[1.0], &[0.0]);
        let sampled = sample_columns(&mut g, x, theta, delta).unwrap();
        let folded = fold_columns(&mut g, x).unwrap();
        for (a, b) in g.value(sampled).data().iter().zip(g.value(folded).data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        let sampled_r = sample_rows(&mut g, x, theta, delta).unwrap();
        let folded_r = fold_rows(&mut g, x).unwrap();
        assert_eq!(g.value(sampled_r).data(), g.value(folded_r).data());

        // Round trip through fold/unfold restores the map exactly.
        let back = unfold_columns(&mut g, folded, 3, 4, 5).unwrap();
        assert_eq!(g.value(back).data(), g.value(x).data());
        let back_r = unfold_rows(&mut g, folded_r, 3, 4, 5).unwrap();
        assert_eq!(g.value(back_r).data(), g.value(x).data());
    }

    #[test]
    fn zero_modulation_zeroes_output_and_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut g = Graph::new();
        let x = g.leaf(rand_tensor(&mut rng, &[2, 3, 4], -1.0, 1.0));
        let (theta, delta) = tap_consts(&mut g, &[0.0, 0.0], &[0.0, 1.0]);
        let tokens = sample_columns(&mut g, x, theta, delta).unwrap();
        assert!(g.value(tokens).data().iter().all(|&v| v == 0.0));
        let loss = g.sum_all(tokens);
        g.backward(loss).unwrap();
        assert!(g.grad(x).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hand_evaluated_two_tap_sampling_with_clamp() {
        // 1x1x3 map [a, b, c], taps delta = [0, 1], theta = [1/2, 1/2]:
        // columns become [(a+b)/2, (b+c)/2, c] with the last clamping.
        let (a, b, c) = (2.0, -3.0, 5.0);
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(vec![1, 1, 3], vec![a, b, c]).unwrap());
        let (theta, delta) = tap_consts(&mut g, &[0.5, 0.5], &[0.0, 1.0]);
        let tokens = sample_columns(&mut g, x, theta, delta).unwrap();
        assert_eq!(g.value(tokens).shape(), &[3, 1]);
        let got = g.value(tokens).data();
        assert!((got[0] - (a + b) / 2.0).abs() < 1e-15);
        assert!((got[1] - (b + c) / 2.0).abs() < 1e-15);
        assert!((got[2] - c).abs() < 1e-15);
    }

    #[test]
    fn row_sampling_mirrors_column_sampling_under_transpose() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let x_t = rand_tensor(&mut rng, &[3, 4, 6], -1.0, 1.0);
        let mut g = Graph::new();
        let x = g.constant(x_t);
        let (theta, delta) = tap_consts(&mut g, &[0.6, 0.4], &[-0.7, 1.3]);
        let xt = g.permute(x, &[0, 2, 1]).unwrap();
        let via_rows = sample_rows(&mut g, xt, theta, delta).unwrap();
        let via_cols = sample_columns(&mut g, x, theta, delta).unwrap();
        assert_eq!(g.value(via_rows).shape(), g.value(via_cols).shape());
        for (p, q) in g.value(via_rows).data().iter().zip(g.value(via_cols).data()) {
            assert_eq!(p.to_bits(), q.to_bits());
        }
    }

    #[test]
    fn msa_single_token_reduces_to_projected_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let d = 6;
        let mut g = Graph::new();
        let tokens = g.constant(rand_tensor(&mut rng, &[1, d], -1.0, 1.0));
        let wq = g.constant(rand_tensor(&mut rng, &[d, d], -0.5, 0.5));
        let wk = g.constant(rand_tensor(&mut rng, &[d, d], -0.5, 0.5));
        let wv = g.constant(rand_tensor(&mut rng, &[d, d], -0.5, 0.5));
        let wo = g.constant(rand_tensor(&mut rng, &[d, d], -0.5, 0.5));
        let out = msa_forward(&mut g, tokens, wq, wk, wv, wo, 2).unwrap();
        let v = g.matmul(tokens, wv).unwrap();
        let expect = g.matmul(v, wo).unwrap();
        for (a, b) in g.value(out).data().iter().zip(g.value(expect).data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn msa_is_permutation_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(45);
        let (n, d) = (5, 8);
        let tokens_t = rand_tensor(&mut rng, &[n, d], -1.0, 1.0);
        let perm = [3usize, 0, 4, 2, 1];
        let mut permuted = vec![0.0; n * d];
        for (dst, &src) in perm.iter().enumerate() {
            permuted[dst * d..(dst + 1) * d].copy_from_slice(&tokens_t.data()[src * d..(src + 1) * d]);
        }
        let mut g = Graph::new();
        let t1 = g.constant(tokens_t.clone());
        let t2 = g.constant(Tensor::new(vec![n, d], permuted).unwrap());
        let wq = g.constant(rand_tensor(&mut rng, &[d, d], -0.5, 0.5));
        let wk = g.constant(rand_tensor(&mut rng, &[d, d], -0.5, 0.5));
        let wv = g.constant(rand_tensor(&mut rng, &[d, d], -0.5, 0.5));
        let wo = g.constant(rand_tensor(&mut rng, &[d, d], -0.5, 0.5));
        let o1 = msa_forward(&mut g, t1, wq, wk, wv, wo, 4).unwrap();
        let o2 = msa_forward(&mut g, t2, wq, wk, wv, wo, 4).unwrap();
        for (dst, &src) in perm.iter().enumerate() {
            for j in 0..d {
                let a = g.value(o1).data()[src * d + j];
                let b = g.value(o2).data()[dst * d + j];
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn msa_matches_naive_two_token_oracle() {
        // Independent naive attention written directly over slices.
        fn naive(tokens: &[f64], n: usize, d: usize, heads: usize, mats: [&[f64]; 4]) -> Vec<f64> {
            let [wq, wk, wv, wo] = mats;
            let matmul = |a: &[f64], b: &[f64], m: usize, k: usize, nn: usize| {
                let mut out = vec![0.0; m * nn];
                for i in 0..m {
                    for p in 0..k {
                        for j in 0..nn {
                            out[i * nn + j] += a[i * k + p] * b[p * nn + j];
                        }
                    }
                }
                out
            };
            let q = matmul(tokens, wq, n, d, d);
            let k = matmul(tokens, wk, n, d, d);
            let v = matmul(tokens, wv, n, d, d);
            let dk = d / heads;
            let mut cat = vec![0.0; n * d];
            for h in 0..heads {
                for i in 0..n {
                    let mut scores = vec![0.0; n];
                    for j in 0..n {
                        let mut s = 0.0;
                        for c in 0..dk {
                            s += q[i * d + h * dk + c] * k[j * d + h * dk + c];
                        }
                        scores[j] = s / (dk as f64).sqrt();
                    }
                    let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let exps: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
                    let z: f64 = exps.iter().sum();
                    for c in 0..dk {
                        let mut acc = 0.0;
                        for j in 0..n {
                            acc += exps[j] / z * v[j * d + h * dk + c];
                        }
                        cat[i * d + h * dk + c] = acc;
                    }
                }
            }
            matmul(&cat, wo, n, d, d)
        }

        let mut rng = ChaCha8Rng::seed_from_u64(46);
        let (n, d, heads) = (2usize, 4usize, 2usize);
        let tokens_t = rand_tensor(&mut rng, &[n, d], -1.0, 1.0);
        let wq_t = rand_tensor(&mut rng, &[d, d], -0.7, 0.7);
        let wk_t = rand_tensor(&mut rng, &[d, d], -0.7, 0.7);
        let wv_t = rand_tensor(&mut rng, &[d, d], -0.7, 0.7);
        let wo_t = rand_tensor(&mut rng, &[d, d], -0.7, 0.7);
        let expect = naive(
            tokens_t.data(),
            n,
            d,
            heads,
            [wq_t.data(), wk_t.data(), wv_t.data(), wo_t.data()],
        );
        let mut g = Graph::new();
        let tokens = g.constant(tokens_t);
        let wq = g.constant(wq_t);
        let wk = g.constant(wk_t);
        let wv = g.constant(wv_t);
        let wo = g.constant(wo_t);
        let out = msa_forward(&mut g, tokens, wq, wk, wv, wo, heads).unwrap();
        for (a, b) in g.value(out).data().iter().zip(&expect) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        let (n, d, heads) = (6usize, 8usize, 4usize);
        let mut g = Graph::new();
        let tokens = g.constant(rand_tensor(&mut rng, &[n, d], -2.0, 2.0));
        let wq = g.constant(rand_tensor(&mut rng, &[d, d], -0.5, 0.5));
        let wk = g.constant(rand_tensor(&mut rng, &[d, d], -0.5, 0.5));
        let wv = g.constant(rand_tensor(&mut rng, &[d, d], -0.5, 0.5));
        let wo = g.constant(rand_tensor(&mut rng, &[d, d], -0.5, 0.5));
        let (_, attns) = msa_forward_with_attn(&mut g, tokens, wq, wk, wv, wo, heads).unwrap();
        assert_eq!(attns.len(), heads);
        for attn in attns {
            let t = g.value(attn);
            for r in 0..n {
                let s: f64 = t.data()[r * n..(r + 1) * n].iter().sum();
                assert!((s - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn block_preserves_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(48);
        for &(c, h, w) in &[(8usize, 8usize, 8usize), (16, 8, 4)] {
            let mut ps = ParamSet::new();
            let block = AdaBlock::new(&mut ps, &mut rng, "blk", c, h, w, 4, 3, 3, true).unwrap();
            let mut g = Graph::new();
            let bound = ps.bind(&mut g);
            let x = g.constant(rand_tensor(&mut rng, &[c, h, w], -1.0, 1.0));
            let y = block.forward(&mut g, &bound, x).unwrap();
            assert_eq!(g.value(y).shape(), &[c, h, w]);

            // Shape violations name the stage.
            let bad = g.constant(Tensor::zeros(&[c, h, w + 1]));
            let err = block.forward(&mut g, &bound, bad).unwrap_err();
            assert!(err.to_string().contains("block_forward"));
        }
    }

    #[test]
    fn zero_projections_with_residual_pass_input_through() {
        let mut rng = ChaCha8Rng::seed_from_u64(49);
        let (c, h, w) = (3usize, 4usize, 5usize);
        let mut ps = ParamSet::new();
        let block = AdaBlock::new(&mut ps, &mut rng, "blk", c, h, w, 1, 1, 1, true).unwrap();
        for name in ["blk.msa_col", "blk.msa_row"] {
            for m in ["wq", "wk", "wv", "wo"] {
                let full = format!("{name}.{m}");
                let shape = ps.get(&full).unwrap().shape().to_vec();
                ps.set(&full, Tensor::zeros(&shape)).unwrap();
            }
        }
        let mut g = Graph::new();
        let bound = ps.bind(&mut g);
        let x_t = rand_tensor(&mut rng, &[c, h, w], -1.0, 1.0);
        let x = g.constant(x_t.clone());
        let y = block.forward(&mut g, &bound, x).unwrap();
        // k = 1 ladder starts at offset 0 and theta = 1, so sampling is the
        // identity and zeroed MSA leaves only the residual path.
        for (a, b) in g.value(y).data().iter().zip(x_t.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn token_counts_match_directions() {
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        let (c, h, w) = (2usize, 5usize, 7usize);
        let mut g = Graph::new();
        let x = g.constant(rand_tensor(&mut rng, &[c, h, w], -1.0, 1.0));
        let cols = fold_columns(&mut g, x).unwrap();
        assert_eq!(g.value(cols).shape(), &[w, h * c]);
        let rows = fold_rows(&mut g, x).unwrap();
        assert_eq!(g.value(rows).shape(), &[h, w * c]);
    }

    #[test]
    fn full_block_passes_grad_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        let (c, h, w) = (4usize, 6usize, 5usize);
        let mut ps = ParamSet::new();
        let block = AdaBlock::new(&mut ps, &mut rng, "blk", c, h, w, 4, 3, 3, true).unwrap();
        // Keep sampling positions off the integer interpolation breakpoints,
        // where only one-sided derivatives exist.
        for name in ["blk.delta_h", "blk.delta_w"] {
            let t = ps.get(name).unwrap();
            let jittered = Tensor::new(
                t.shape().to_vec(),
                t.data().iter().map(|v| v + 0.3).collect(),
            )
            .unwrap();
            ps.set(name, jittered).unwrap();
        }
        ps.add("input", rand_tensor(&mut rng, &[c, h, w], -1.0, 1.0)).unwrap();
        let report = grad_check(&mut ps, 1e-5, 1e-4, |g, bound| {
            let x = bound.var("input")?;
            let y = block.forward(g, bound, x)?;
            let w_t = g.constant(Tensor::full(&[c, h, w], 0.37));
            let sq = g.mul(y, y)?;
            let weighted = g.mul(sq, w_t)?;
            Ok(g.mean_all(weighted))
        })
        .unwrap();
        assert!(report.passed, "{report}");
    }

    #[test]
    fn block_forward_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(52);
        let (c, h, w) = (4usize, 4usize, 4usize);
        let mut ps = ParamSet::new();
        let block = AdaBlock::new(&mut ps, &mut rng, "blk", c, h, w, 2, 2, 2, true).unwrap();
        let x_t = rand_tensor(&mut rng, &[c, h, w], -1.0, 1.0);
        let run = |ps: &ParamSet| {
            let mut g = Graph::new();
            let bound = ps.bind(&mut g);
            let x = g.constant(x_t.clone());
            let y = block.forward(&mut g, &bound, x).unwrap();
            g.value(y).data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        };
        assert_eq!(run(&ps), run(&ps));
    }
}
