//! The full multi-view segmentation network: three per-view encoders,
//! channel-wise latent fusion, a cascade of adaptive-directional attention
//! blocks, and two decoders emitting per-pixel class distributions for the
//! RD and RA planes.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::AdaBlock;
use crate::error::{CoreError, Result};
use crate::graph::{Graph, Var};
use crate::init::he_uniform;
use crate::params::{BoundParams, ParamSet};
use crate::synth::CubeDims;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Past frames per view (entering the encoders as channels).
    pub t: usize,
    /// Classes including background.
    pub k: usize,
    pub dims: CubeDims,
    /// Channels produced by each view encoder.
    pub c_enc: usize,
    /// Channels inside the decoders.
    pub c_dec: usize,
    pub n_blocks: usize,
    /// Attention heads.
    pub heads: usize,
    pub k_h: usize,
    pub k_w: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            t: 3,
            k: 4,
            dims: CubeDims { r: 64, a: 64, d: 16 },
            c_enc: 8,
            c_dec: 16,
            n_blocks: 2,
            heads: 4,
            k_h: 3,
            k_w: 3,
        }
    }
}

impl ModelConfig {
    /// Latent grid height R/4.
    pub fn h_d(&self) -> usize {
        self.dims.r / 4
    }

    /// Latent grid width max(A, D)/4.
    pub fn w_d(&self) -> usize {
        self.dims.a.max(self.dims.d) / 4
    }

    pub fn latent_channels(&self) -> usize {
        3 * self.c_enc
    }

    pub fn validate(&self) -> Result<()> {
        if self.t == 0 || self.n_blocks == 0 || self.c_enc == 0 || self.c_dec == 0 {
            return Err(CoreError::InvalidArgument(
                "t, n_blocks, c_enc, c_dec must be >= 1".into(),
            ));
        }
        if self.k < 2 {
            return Err(CoreError::InvalidArgument("K must be >= 2".into()));
        }
        let CubeDims { r, a, d } = self.dims;
        if r % 4 != 0 || a % 4 != 0 || d % 4 != 0 {
            return Err(CoreError::InvalidArgument(format!(
                "dims must be divisible by 4, got {:?}",
                self.dims
            )));
        }
        if a != r {
            return Err(CoreError::InvalidArgument(format!(
                "angle and range extents must match so all encoded views share a height (A {a} vs R {r})"
            )));
        }
        let d_col = self.h_d() * self.latent_channels();
        let d_row = self.w_d() * self.latent_channels();
        if self.heads == 0 || d_col % self.heads != 0 || d_row % self.heads != 0 {
            return Err(CoreError::InvalidArgument(format!(
                "token widths {d_col}/{d_row} not divisible by {} heads",
                self.heads
            )));
        }
        if self.k_h == 0 || self.k_w == 0 {
            return Err(CoreError::InvalidArgument("k_h and k_w must be >= 1".into()));
        }
        Ok(())
    }
}

/// Per-pixel class distributions for the two output planes.
#[derive(Debug, Clone)]
pub struct SegMasks {
    pub rd_probs: Tensor,
    pub ra_probs: Tensor,
}

#[derive(Debug, Clone)]
struct Conv2dLayer {
    w: String,
    b: String,
    stride: usize,
    pad: usize,
}

impl Conv2dLayer {
    #[allow(clippy::too_many_arguments)]
    fn new(
        ps: &mut ParamSet,
        rng: &mut ChaCha8Rng,
        prefix: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        let w = format!("{prefix}.w");
        let b = format!("{prefix}.b");
        ps.add(&w, he_uniform(rng, &[cout, cin, k, k], cin * k * k))?;
        ps.add(&b, Tensor::zeros(&[cout]))?;
        Ok(Conv2dLayer { w, b, stride, pad })
    }

    fn forward(&self, g: &mut Graph, bound: &BoundParams, x: Var) -> Result<Var> {
        g.conv2d(x, bound.var(&self.w)?, bound.var(&self.b)?, self.stride, self.pad)
    }
}

/// Two stride-2 stages (conv3x3 -> relu -> conv3x3 -> relu each), reducing
/// the view to a quarter of its resolution with T frames as input channels.
#[derive(Debug, Clone)]
pub struct ViewEncoder {
    convs: Vec<Conv2dLayer>,
    t: usize,
    in_h: usize,
    in_w: usize,
    name: String,
}

impl ViewEncoder {
    fn new(
        ps: &mut ParamSet,
        rng: &mut ChaCha8Rng,
        prefix: &str,
        t: usize,
        c_enc: usize,
        in_h: usize,
        in_w: usize,
    ) -> Result<Self> {
        let specs = [
            (t, c_enc, 2usize),
            (c_enc, c_enc, 1),
            (c_enc, c_enc, 2),
            (c_enc, c_enc, 1),
        ];
        let mut convs = Vec::with_capacity(4);
        for (i, (cin, cout, stride)) in specs.into_iter().enumerate() {
            convs.push(Conv2dLayer::new(
                ps,
                rng,
                &format!("{prefix}.c{}", i + 1),
                cin,
                cout,
                3,
                stride,
                1,
            )?);
        }
        Ok(ViewEncoder {
            convs,
            t,
            in_h,
            in_w,
            name: prefix.to_string(),
        })
    }

    /// Encode a `[1, T, H, W]` view stack into `[C_enc, H/4, W/4]`.
    pub fn forward(&self, g: &mut Graph, bound: &BoundParams, view: &Tensor) -> Result<Var> {
        let expect = [1, self.t, self.in_h, self.in_w];
        if view.shape() != expect {
            return Err(CoreError::ShapeMismatch(format!(
                "{}: expected {expect:?}, got {:?}",
                self.name,
                view.shape()
            )));
        }
        let x = g.constant(view.reshaped(vec![self.t, self.in_h, self.in_w])?);
        let mut cur = x;
        for conv in &self.convs {
            let c = conv.forward(g, bound, cur)?;
            cur = g.relu(c);
        }
        Ok(cur)
    }
}

/// Fuse encoded views into one latent block: resize RD and AD features along
/// the width axis to `w_d`, then concatenate channels in (AD, RD, RA) order.
pub fn fuse_latent(g: &mut Graph, ra_f: Var, rd_f: Var, ad_f: Var, w_d: usize) -> Result<Var> {
    let hs: Vec<usize> = [ra_f, rd_f, ad_f]
        .iter()
        .map(|&v| g.value(v).shape()[1])
        .collect();
    if hs[0] != hs[1] || hs[0] != hs[2] {
        return Err(CoreError::ShapeMismatch(format!(
            "fuse_latent: encoded heights differ: ra {}, rd {}, ad {}",
            hs[0], hs[1], hs[2]
        )));
    }
    let h = hs[0];
    let mut fused = Vec::with_capacity(3);
    for v in [ad_f, rd_f, ra_f] {
        let w = g.value(v).shape()[2];
        fused.push(if w == w_d {
            v
        } else {
            g.resize2d_linear(v, h, w_d)?
        });
    }
    g.concat(0, &fused)
}

/// Decoder branch: 1x1 channel reduction, two (resize x2 -> conv3x3 -> relu)
/// stages, exact resize to the target plane, 1x1 conv to K classes, and a
/// per-pixel softmax.
#[derive(Debug, Clone)]
struct Decoder {
    reduce: Conv2dLayer,
    conv1: Conv2dLayer,
    conv2: Conv2dLayer,
    head: Conv2dLayer,
    out_h: usize,
    out_w: usize,
    k: usize,
}

impl Decoder {
    #[allow(clippy::too_many_arguments)]
    fn new(
        ps: &mut ParamSet,
        rng: &mut ChaCha8Rng,
        prefix: &str,
        c_in: usize,
        c_dec: usize,
        k: usize,
        out_h: usize,
        out_w: usize,
    ) -> Result<Self> {
        Ok(Decoder {
            reduce: Conv2dLayer::new(ps, rng, &format!("{prefix}.reduce"), c_in, c_dec, 1, 1, 0)?,
            conv1: Conv2dLayer::new(ps, rng, &format!("{prefix}.up1"), c_dec, c_dec, 3, 1, 1)?,
            conv2: Conv2dLayer::new(ps, rng, &format!("{prefix}.up2"), c_dec, c_dec, 3, 1, 1)?,
            head: Conv2dLayer::new(ps, rng, &format!("{prefix}.head"), c_dec, k, 1, 1, 0)?,
            out_h,
            out_w,
            k,
        })
    }

    fn forward(&self, g: &mut Graph, bound: &BoundParams, latent: Var) -> Result<Var> {
        let x = self.reduce.forward(g, bound, latent)?;
        let s = g.value(x).shape().to_vec();
        let up1 = g.resize2d_linear(x, s[1] * 2, s[2] * 2)?;
        let c1 = self.conv1.forward(g, bound, up1)?;
        let r1 = g.relu(c1);
        let s1 = g.value(r1).shape().to_vec();
        let up2 = g.resize2d_linear(r1, s1[1] * 2, s1[2] * 2)?;
        let c2 = self.conv2.forward(g, bound, up2)?;
        let r2 = g.relu(c2);
        let s2 = g.value(r2).shape().to_vec();
        let sized = if s2[1] == self.out_h && s2[2] == self.out_w {
            r2
        } else {
            g.resize2d_linear(r2, self.out_h, self.out_w)?
        };
        let logits = self.head.forward(g, bound, sized)?;
        softmax_classes(g, logits, self.k, self.out_h, self.out_w)
    }
}

/// Softmax over the class axis of `[K, H, W]` logits.
fn softmax_classes(g: &mut Graph, logits: Var, k: usize, h: usize, w: usize) -> Result<Var> {
    let perm = g.permute(logits, &[1, 2, 0])?;
    let flat = g.reshape(perm, &[h * w, k])?;
    let sm = g.softmax_lastdim(flat)?;
    let back = g.reshape(sm, &[h, w, k])?;
    g.permute(back, &[2, 0, 1])
}

pub struct TransRadarNet {
    pub config: ModelConfig,
    pub params: ParamSet,
    pub no_adaptive: bool,
    enc_ra: ViewEncoder,
    enc_rd: ViewEncoder,
    enc_ad: ViewEncoder,
    blocks: Vec<AdaBlock>,
    dec_rd: Decoder,
    dec_ra: Decoder,
}

impl TransRadarNet {
    /// Build a model with He-uniform weights drawn deterministically from
    /// `seed`. `no_adaptive` swaps every block's sampling stages for straight
    /// column/row folds (the parameter set is unchanged).
    pub fn new(config: ModelConfig, no_adaptive: bool, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut ps = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let CubeDims { r, a, d } = config.dims;
        let enc_ra = ViewEncoder::new(&mut ps, &mut rng, "enc_ra", config.t, config.c_enc, r, a)?;
        let enc_rd = ViewEncoder::new(&mut ps, &mut rng, "enc_rd", config.t, config.c_enc, r, d)?;
        let enc_ad = ViewEncoder::new(&mut ps, &mut rng, "enc_ad", config.t, config.c_enc, a, d)?;
        let (c_lat, h_d, w_d) = (config.latent_channels(), config.h_d(), config.w_d());
        let mut blocks = Vec::with_capacity(config.n_blocks);
        for i in 0..config.n_blocks {
            blocks.push(AdaBlock::new(
                &mut ps,
                &mut rng,
                &format!("block{i}"),
                c_lat,
                h_d,
                w_d,
                config.heads,
                config.k_h,
                config.k_w,
                !no_adaptive,
            )?);
        }
        let dec_rd = Decoder::new(&mut ps, &mut rng, "dec_rd", c_lat, config.c_dec, config.k, r, d)?;
        let dec_ra = Decoder::new(&mut ps, &mut rng, "dec_ra", c_lat, config.c_dec, config.k, r, a)?;
        Ok(TransRadarNet {
            config,
            params: ps,
            no_adaptive,
            enc_ra,
            enc_rd,
            enc_ad,
            blocks,
            dec_rd,
            dec_ra,
        })
    }

    pub fn bind(&self, g: &mut Graph) -> BoundParams {
        self.params.bind(g)
    }

    /// Exact number of scalar parameters.
    pub fn param_count(&self) -> usize {
        self.params.total_elems()
    }

    /// Full forward pass: returns `(rd_probs [K, R, D], ra_probs [K, R, A])`.
    pub fn forward(
        &self,
        g: &mut Graph,
        bound: &BoundParams,
        ra: &Tensor,
        rd: &Tensor,
        ad: &Tensor,
    ) -> Result<(Var, Var)> {
        let ra_f = self.enc_ra.forward(g, bound, ra)?;
        let rd_f = self.enc_rd.forward(g, bound, rd)?;
        let ad_f = self.enc_ad.forward(g, bound, ad)?;
        let mut latent = fuse_latent(g, ra_f, rd_f, ad_f, self.config.w_d())?;
        for block in &self.blocks {
            latent = block.forward(g, bound, latent)?;
        }
        let rd_probs = self.dec_rd.forward(g, bound, latent)?;
        let ra_probs = self.dec_ra.forward(g, bound, latent)?;
        Ok((rd_probs, ra_probs))
    }

    /// Inference convenience: run a forward on a private graph and return the
    /// probability tensors.
    pub fn forward_infer(&self, ra: &Tensor, rd: &Tensor, ad: &Tensor) -> Result<SegMasks> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g);
        let (rd_v, ra_v) = self.forward(&mut g, &bound, ra, rd, ad)?;
        Ok(SegMasks {
            rd_probs: g.value(rd_v).clone(),
            ra_probs: g.value(ra_v).clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::grad_check;
    use crate::loss::{one_hot, total_loss, BinarizeMode, LossToggles, LossWeights};
    use rand::Rng;

    fn rand_view(rng: &mut ChaCha8Rng, t: usize, h: usize, w: usize) -> Tensor {
        let n = t * h * w;
        Tensor::new(
            vec![1, t, h, w],
            (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    }

    fn tiny_config() -> ModelConfig {
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

    #[test]
    fn encoder_quarters_resolution() {
        let mut ps = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        let enc = ViewEncoder::new(&mut ps, &mut rng, "enc", 3, 8, 64, 64).unwrap();
        let mut g = Graph::new();
        let bound = ps.bind(&mut g);
        let view = rand_view(&mut rng, 3, 64, 64);
        let out = enc.forward(&mut g, &bound, &view).unwrap();
        assert_eq!(g.value(out).shape(), &[8, 16, 16]);

        let mut ps = ParamSet::new();
        let enc = ViewEncoder::new(&mut ps, &mut rng, "enc", 3, 8, 64, 16).unwrap();
        let mut g = Graph::new();
        let bound = ps.bind(&mut g);
        let view = rand_view(&mut rng, 3, 64, 16);
        let out = enc.forward(&mut g, &bound, &view).unwrap();
        assert_eq!(g.value(out).shape(), &[8, 16, 4]);

        // Dim mismatch errors name the encoder.
        let bad = rand_view(&mut rng, 3, 32, 16);
        assert!(enc.forward(&mut g, &bound, &bad).is_err());
    }

    #[test]
    fn encoder_passes_grad_check() {
        let mut ps = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(62);
        let enc = ViewEncoder::new(&mut ps, &mut rng, "enc", 2, 3, 12, 8).unwrap();
        let view = rand_view(&mut rng, 2, 12, 8);
        let report = grad_check(&mut ps, 1e-5, 1e-4, move |g, bound| {
            let out = enc.forward(g, bound, &view)?;
            let sq = g.mul(out, out)?;
            Ok(g.mean_all(sq))
        })
        .unwrap();
        assert!(report.passed, "{report}");
    }

    #[test]
    fn fusion_shapes_and_channel_order() {
        let mut g = Graph::new();
        let ra = g.constant(Tensor::full(&[32, 16, 16], 3.0));
        let rd = g.constant(Tensor::full(&[32, 16, 16], 2.0));
        let ad = g.constant(Tensor::full(&[32, 16, 16], 1.0));
        let fused = fuse_latent(&mut g, ra, rd, ad, 16).unwrap();
        assert_eq!(g.value(fused).shape(), &[96, 16, 16]);
        // First block of channels is the AD input, untouched.
        assert!(g.value(fused).data()[..32 * 16 * 16].iter().all(|&v| v == 1.0));
        assert!(g.value(fused).data()[32 * 16 * 16..64 * 16 * 16]
            .iter()
            .all(|&v| v == 2.0));

        // Narrow maps are resized along the width axis before fusion.
        let rd_narrow = g.constant(Tensor::full(&[32, 16, 4], 2.0));
        let ad_narrow = g.constant(Tensor::full(&[32, 16, 4], 1.0));
        let fused = fuse_latent(&mut g, ra, rd_narrow, ad_narrow, 16).unwrap();
        assert_eq!(g.value(fused).shape(), &[96, 16, 16]);

        // Height mismatch is an error.
        let bad = g.constant(Tensor::full(&[32, 8, 16], 0.0));
        assert!(fuse_latent(&mut g, ra, bad, ad, 16).is_err());
    }

    #[test]
    fn forward_emits_valid_distributions() {
        let cfg = tiny_config();
        let model = TransRadarNet::new(cfg.clone(), false, 7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(63);
        let ra = rand_view(&mut rng, cfg.t, 16, 16);
        let rd = rand_view(&mut rng, cfg.t, 16, 8);
        let ad = rand_view(&mut rng, cfg.t, 16, 8);
        let masks = model.forward_infer(&ra, &rd, &ad).unwrap();
        assert_eq!(masks.rd_probs.shape(), &[3, 16, 8]);
        assert_eq!(masks.ra_probs.shape(), &[3, 16, 16]);
        for probs in [&masks.rd_probs, &masks.ra_probs] {
            let plane = probs.shape()[1] * probs.shape()[2];
            for p in 0..plane {
                let s: f64 = (0..3).map(|c| probs.data()[c * plane + p]).sum();
                assert!((s - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let cfg = tiny_config();
        let model = TransRadarNet::new(cfg.clone(), false, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(64);
        let ra = rand_view(&mut rng, cfg.t, 16, 16);
        let rd = rand_view(&mut rng, cfg.t, 16, 8);
        let ad = rand_view(&mut rng, cfg.t, 16, 8);
        let m1 = model.forward_infer(&ra, &rd, &ad).unwrap();
        let m2 = model.forward_infer(&ra, &rd, &ad).unwrap();
        for (a, b) in m1.rd_probs.data().iter().zip(m2.rd_probs.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn gradient_reaches_every_parameter() {
        let cfg = tiny_config();
        let model = TransRadarNet::new(cfg.clone(), false, 9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(65);
        let ra = rand_view(&mut rng, cfg.t, 16, 16);
        let rd = rand_view(&mut rng, cfg.t, 16, 8);
        let ad = rand_view(&mut rng, cfg.t, 16, 8);
        let gt_rd = one_hot(
            &Tensor::new(vec![16, 8], (0..128).map(|i| (i % 3) as f64).collect()).unwrap(),
            3,
        )
        .unwrap();
        let gt_ra = one_hot(
            &Tensor::new(vec![16, 16], (0..256).map(|i| ((i / 7) % 3) as f64).collect()).unwrap(),
            3,
        )
        .unwrap();
        let mut g = Graph::new();
        let bound = model.bind(&mut g);
        let (rd_p, ra_p) = model.forward(&mut g, &bound, &ra, &rd, &ad).unwrap();
        let out = total_loss(
            &mut g,
            rd_p,
            ra_p,
            &gt_rd,
            &gt_ra,
            &LossWeights::default(),
            &LossToggles::default(),
            BinarizeMode::Hard,
        )
        .unwrap();
        g.backward(out.total).unwrap();
        for (param, var) in model.params.iter().zip(bound.vars()) {
            let grad = g.grad(*var);
            assert!(grad.is_some(), "no gradient for {}", param.name);
            assert!(
                grad.unwrap().data().iter().any(|&v| v != 0.0),
                "all-zero gradient for {}",
                param.name
            );
        }
    }

    #[test]
    fn param_count_examples() {
        // A single 3x3 conv mapping 2 -> 4 channels with bias: 76 scalars.
        let mut ps = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(66);
        Conv2dLayer::new(&mut ps, &mut rng, "c", 2, 4, 3, 1, 1).unwrap();
        assert_eq!(ps.total_elems(), 3 * 3 * 2 * 4 + 4);

        // Adding a block adds exactly one block's worth of parameters.
        let mut counts = Vec::new();
        for n_blocks in [1usize, 2, 3] {
            let cfg = ModelConfig {
                n_blocks,
                ..tiny_config()
            };
            counts.push(TransRadarNet::new(cfg, false, 1).unwrap().param_count());
        }
        assert_eq!(counts[2] - counts[1], counts[1] - counts[0]);

        // Block parameters enumerate to the projection matrices plus the
        // modulation weights and offsets in both directions.
        let cfg = tiny_config();
        let model = TransRadarNet::new(cfg.clone(), false, 2).unwrap();
        let block_elems: usize = model
            .params
            .iter()
            .filter(|p| p.name.starts_with("block0."))
            .map(|p| p.value.numel())
            .sum();
        let d_col = cfg.h_d() * cfg.latent_channels();
        let d_row = cfg.w_d() * cfg.latent_channels();
        let expect = 4 * d_col * d_col + 4 * d_row * d_row + 2 * cfg.k_w + 2 * cfg.k_h;
        assert_eq!(block_elems, expect);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = tiny_config();
        cfg.k = 1;
        assert!(cfg.validate().is_err());
        let mut cfg = tiny_config();
        cfg.dims.a = 32; // A != R
        assert!(cfg.validate().is_err());
        let mut cfg = tiny_config();
        cfg.dims.d = 6; // not divisible by 4
        assert!(cfg.validate().is_err());
        let mut cfg = tiny_config();
        cfg.heads = 7;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn micro_end_to_end_grad_check() {
        // A very small end-to-end check; the acceptance suite runs the full
        // micro-model version. K = 3 keeps the untrained foreground
        // probability near 2/3, clear of the OC gate threshold at 0.5 (the
        // gate is a detached hard branch, so finite differences must not
        // straddle a flip).
        let cfg = ModelConfig {
            t: 1,
            k: 3,
            dims: CubeDims { r: 8, a: 8, d: 4 },
            c_enc: 2,
            c_dec: 2,
            n_blocks: 1,
            heads: 2,
            k_h: 2,
            k_w: 2,
        };
        let model = TransRadarNet::new(cfg.clone(), false, 3).unwrap();
        let mut params = model.params.clone();
        // Keep offsets off the integer interpolation breakpoints.
        for name in ["block0.delta_h", "block0.delta_w"] {
            let t = params.get(name).unwrap();
            let jittered =
                Tensor::new(t.shape().to_vec(), t.data().iter().map(|v| v + 0.3).collect())
                    .unwrap();
            params.set(name, jittered).unwrap();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(67);
        let ra = rand_view(&mut rng, 1, 8, 8);
        let rd = rand_view(&mut rng, 1, 8, 4);
        let ad = rand_view(&mut rng, 1, 8, 4);
        let gt_rd = one_hot(
            &Tensor::new(vec![8, 4], (0..32).map(|i| (i % 3) as f64).collect()).unwrap(),
            3,
        )
        .unwrap();
        let gt_ra = one_hot(
            &Tensor::new(vec![8, 8], (0..64).map(|i| ((i / 5) % 3) as f64).collect()).unwrap(),
            3,
        )
        .unwrap();
        let report = grad_check(&mut params, 1e-5, 1e-4, move |g, bound| {
            let (rd_p, ra_p) = model.forward(g, bound, &ra, &rd, &ad)?;
            let out = total_loss(
                g,
                rd_p,
                ra_p,
                &gt_rd,
                &gt_ra,
                &LossWeights::default(),
                &LossToggles::default(),
                BinarizeMode::SoftReference,
            )?;
            Ok(out.total)
        })
        .unwrap();
        assert!(report.passed, "{report}");
    }
}
