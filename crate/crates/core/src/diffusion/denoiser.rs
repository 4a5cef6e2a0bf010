use std::ops::Range;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::uniform_vec;
use crate::scalar::{all_finite, sigmoid, Scalar};

pub const NUM_BLOCKS: usize = 8;
pub const DILATIONS: [usize; 4] = [1, 2, 4, 8];
pub const STEP_FEATURES: usize = 32;
const KERNEL: usize = 3;

/// Sizes of the conditional denoiser.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DenoiserConfig {
    /// Length of the embedding vector being denoised.
    pub embed_dim: usize,
    /// Length of the historical condition `h̃` (0 disables it).
    pub hist_dim: usize,
    /// Length of the current context `c` (0 disables it).
    pub ctx_dim: usize,
    pub residual_channels: usize,
    /// Channels each condition is projected to before the 1×1 conditioner.
    pub cond_channels: usize,
    pub step_hidden: usize,
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("diffusion.embed_dim", self.embed_dim),
            ("diffusion.residual_channels", self.residual_channels),
            ("diffusion.cond_channels", self.cond_channels),
            ("diffusion.step_hidden", self.step_hidden),
        ] {
            if v == 0 {
                return Err(Error::invalid(name, "must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
struct BlockLayout {
    step_w: Range<usize>,
    step_b: Range<usize>,
    conv_w: Range<usize>,
    conv_b: Range<usize>,
    cond_w: Range<usize>,
    out_w: Range<usize>,
    out_b: Range<usize>,
}

/// Offsets of every tensor inside the flat parameter vector.
#[derive(Clone, Debug, PartialEq)]
struct Layout {
    in_w: Range<usize>,
    in_b: Range<usize>,
    step1_w: Range<usize>,
    step1_b: Range<usize>,
    step2_w: Range<usize>,
    step2_b: Range<usize>,
    hist_w: Range<usize>,
    hist_b: Range<usize>,
    ctx_w: Range<usize>,
    ctx_b: Range<usize>,
    blocks: Vec<BlockLayout>,
    skip_w: Range<usize>,
    skip_b: Range<usize>,
    final_w: Range<usize>,
    final_b: Range<usize>,
    len: usize,
}

impl Layout {
    fn new(cfg: &DenoiserConfig) -> Self {
        let (c, s, d, k) = (cfg.residual_channels, cfg.step_hidden, cfg.embed_dim, cfg.cond_channels);
        let mut at = 0;
        let mut take = |n: usize| {
            let r = at..at + n;
            at += n;
            r
        };
        let in_w = take(c);
        let in_b = take(c);
        let step1_w = take(s * STEP_FEATURES);
        let step1_b = take(s);
        let step2_w = take(s * s);
        let step2_b = take(s);
        let hist_w = take(k * d * cfg.hist_dim);
        let hist_b = take(k * d);
        let ctx_w = take(k * d * cfg.ctx_dim);
        let ctx_b = take(k * d);
        let blocks = (0..NUM_BLOCKS)
            .map(|_| BlockLayout {
                step_w: take(c * s),
                step_b: take(c),
                conv_w: take(2 * c * c * KERNEL),
                conv_b: take(2 * c),
                cond_w: take(2 * c * 2 * k),
                out_w: take(2 * c * c),
                out_b: take(2 * c),
            })
            .collect();
        let skip_w = take(c * c);
        let skip_b = take(c);
        let final_w = take(c);
        let final_b = take(1);
        Layout {
            in_w,
            in_b,
            step1_w,
            step1_b,
            step2_w,
            step2_b,
            hist_w,
            hist_b,
            ctx_w,
            ctx_b,
            blocks,
            skip_w,
            skip_b,
            final_w,
            final_b,
            len: at,
        }
    }
}

/// Parameters of the dilated residual denoiser `ε_θ(x_t, t, h̃, c)`, stored
/// as one flat vector. The embedding vector is treated as a one-channel
/// signal whose positions are the embedding coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct DenoiserParams<F> {
    cfg: DenoiserConfig,
    layout: Layout,
    data: Vec<F>,
}

/// Noise-level features for one diffusion step, shared by every position.
#[derive(Clone, Debug, PartialEq)]
pub struct StepFeatures<F> {
    t: usize,
    fourier: Vec<F>,
    s1_pre: Vec<F>,
    s1: Vec<F>,
    s2_pre: Vec<F>,
    s2: Vec<F>,
    /// Per-block channel offsets.
    per_block: Vec<Vec<F>>,
}

/// Projected conditions for one target position, shared by every step.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedCondition<F> {
    hist: Vec<F>,
    ctx: Vec<F>,
    /// `2K × D` conditioner input.
    cond: Vec<F>,
    /// Per-block `2C × D` conditioner contributions.
    per_block: Vec<Vec<F>>,
}

impl<F: Scalar> PreparedCondition<F> {
    pub fn conditioner(&self) -> &[F] {
        &self.cond
    }
}

#[derive(Clone, Debug)]
struct BlockCache<F> {
    y: Vec<F>,
    tanh: Vec<F>,
    sig: Vec<F>,
    gate: Vec<F>,
}

/// Forward intermediates of one prediction.
#[derive(Clone, Debug)]
pub struct ForwardCache<F> {
    x: Vec<F>,
    h0_pre: Vec<F>,
    blocks: Vec<BlockCache<F>>,
    skip_in: Vec<F>,
    skip_pre: Vec<F>,
}

#[inline]
fn swish<F: Scalar>(x: F) -> F {
    x * sigmoid(x)
}

#[inline]
fn swish_grad<F: Scalar>(x: F) -> F {
    let s = sigmoid(x);
    s * (F::one() + x * (F::one() - s))
}

/// `out[r] = b[r] + Σ_c w[r, c]·x[c]`
fn affine<F: Scalar>(w: &[F], b: &[F], x: &[F]) -> Vec<F> {
    let cols = x.len();
    b.iter()
        .enumerate()
        .map(|(r, &br)| br + crate::scalar::dot(&w[r * cols..(r + 1) * cols], x))
        .collect()
}

/// 1×1 convolution over a channel-major `[in_ch × len]` signal.
fn pointwise<F: Scalar>(w: &[F], bias: Option<&[F]>, x: &[F], in_ch: usize, out_ch: usize, len: usize) -> Vec<F> {
    let mut out = vec![F::zero(); out_ch * len];
    for o in 0..out_ch {
        let row = &mut out[o * len..(o + 1) * len];
        if let Some(b) = bias {
            row.iter_mut().for_each(|v| *v = b[o]);
        }
        for i in 0..in_ch {
            let w_oi = w[o * in_ch + i];
            if w_oi == F::zero() {
                continue;
            }
            for (v, &xi) in row.iter_mut().zip(&x[i * len..(i + 1) * len]) {
                *v += w_oi * xi;
            }
        }
    }
    out
}

/// Backward of [`pointwise`]: accumulates weight/bias grads and returns the
/// input gradient when `want_input`.
#[allow(clippy::too_many_arguments)]
fn pointwise_backward<F: Scalar>(
    w: &[F],
    x: &[F],
    g_out: &[F],
    in_ch: usize,
    out_ch: usize,
    len: usize,
    g_w: &mut [F],
    g_b: Option<&mut [F]>,
    want_input: bool,
) -> Option<Vec<F>> {
    if let Some(gb) = g_b {
        for o in 0..out_ch {
            gb[o] += g_out[o * len..(o + 1) * len].iter().copied().sum();
        }
    }
    let mut g_x = want_input.then(|| vec![F::zero(); in_ch * len]);
    for o in 0..out_ch {
        let go = &g_out[o * len..(o + 1) * len];
        for i in 0..in_ch {
            let xi = &x[i * len..(i + 1) * len];
            g_w[o * in_ch + i] += crate::scalar::dot(go, xi);
            if let Some(gx) = g_x.as_mut() {
                let w_oi = w[o * in_ch + i];
                for (g, &v) in gx[i * len..(i + 1) * len].iter_mut().zip(go) {
                    *g += w_oi * v;
                }
            }
        }
    }
    g_x
}

/// Transformer-style sinusoidal features of the step index.
pub fn step_fourier<F: Scalar>(t: usize) -> Vec<F> {
    let half = STEP_FEATURES / 2;
    let mut out = vec![F::zero(); STEP_FEATURES];
    for j in 0..half {
        let angle = t as f64 * 10_000f64.powf(-(j as f64) / half as f64);
        out[j] = F::of(angle.sin());
        out[half + j] = F::of(angle.cos());
    }
    out
}

impl<F: Scalar> DenoiserParams<F> {
    pub fn zeros(cfg: DenoiserConfig) -> Result<Self> {
        cfg.validate()?;
        let layout = Layout::new(&cfg);
        let data = vec![F::zero(); layout.len];
        Ok(DenoiserParams { cfg, layout, data })
    }

    /// Uniform fan-in initialization; the final projection starts at zero
    /// so an untrained model predicts zero noise.
    pub fn init<R: Rng + ?Sized>(cfg: DenoiserConfig, rng: &mut R) -> Result<Self> {
        let mut p = Self::zeros(cfg)?;
        let (c, s, k) = (p.cfg.residual_channels, p.cfg.step_hidden, p.cfg.cond_channels);
        let l = p.layout.clone();
        let mut fill = |r: &Range<usize>, fan_in: usize| {
            if fan_in > 0 {
                let v = uniform_vec(rng, r.len(), (1.0 / fan_in as f64).sqrt());
                p.data[r.clone()].copy_from_slice(&v);
            }
        };
        fill(&l.in_w, 1);
        fill(&l.step1_w, STEP_FEATURES);
        fill(&l.step2_w, s);
        fill(&l.hist_w, p.cfg.hist_dim);
        fill(&l.ctx_w, p.cfg.ctx_dim);
        for b in &l.blocks {
            fill(&b.step_w, s);
            fill(&b.conv_w, c * KERNEL);
            fill(&b.cond_w, 2 * k);
            fill(&b.out_w, c);
        }
        fill(&l.skip_w, c);
        Ok(p)
    }

    /// Rebuilds parameters from a flat vector, e.g. one read from a checkpoint.
    pub fn from_flat(cfg: DenoiserConfig, data: Vec<F>) -> Result<Self> {
        let mut p = Self::zeros(cfg)?;
        if data.len() != p.data.len() {
            return Err(Error::DimensionMismatch {
                what: "denoiser parameters",
                expected: p.data.len(),
                got: data.len(),
            });
        }
        p.data = data;
        Ok(p)
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.cfg
    }

    pub fn as_flat(&self) -> &[F] {
        &self.data
    }

    pub fn as_flat_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    fn p(&self, r: &Range<usize>) -> &[F] {
        &self.data[r.clone()]
    }

    pub fn step_features(&self, t: usize) -> StepFeatures<F> {
        let l = &self.layout;
        let fourier = step_fourier(t);
        let s1_pre = affine(self.p(&l.step1_w), self.p(&l.step1_b), &fourier);
        let s1: Vec<F> = s1_pre.iter().map(|&x| swish(x)).collect();
        let s2_pre = affine(self.p(&l.step2_w), self.p(&l.step2_b), &s1);
        let s2: Vec<F> = s2_pre.iter().map(|&x| swish(x)).collect();
        let per_block = l.blocks.iter().map(|b| affine(self.p(&b.step_w), self.p(&b.step_b), &s2)).collect();
        StepFeatures {
            t,
            fourier,
            s1_pre,
            s1,
            s2_pre,
            s2,
            per_block,
        }
    }

    /// Projects `h̃` and `c` to the conditioner and each block's 1×1 conv.
    pub fn prepare_condition(&self, hist: &[F], ctx: &[F]) -> Result<PreparedCondition<F>> {
        let cfg = &self.cfg;
        for (what, v, want) in [("historical condition", hist, cfg.hist_dim), ("context condition", ctx, cfg.ctx_dim)] {
            if v.len() != want {
                return Err(Error::DimensionMismatch {
                    what,
                    expected: want,
                    got: v.len(),
                });
            }
            if !all_finite(v) {
                return Err(Error::NonFinite(what.to_string()));
            }
        }
        let l = &self.layout;
        let (c, d, k) = (cfg.residual_channels, cfg.embed_dim, cfg.cond_channels);
        let mut cond = affine(self.p(&l.hist_w), self.p(&l.hist_b), hist);
        cond.extend(affine(self.p(&l.ctx_w), self.p(&l.ctx_b), ctx));
        let per_block = l
            .blocks
            .iter()
            .map(|b| pointwise(self.p(&b.cond_w), None, &cond, 2 * k, 2 * c, d))
            .collect();
        Ok(PreparedCondition {
            hist: hist.to_vec(),
            ctx: ctx.to_vec(),
            cond,
            per_block,
        })
    }

    /// Predicts the noise in `x_t`. Fails fast on non-finite input or on a
    /// non-finite activation, naming the step and block.
    pub fn forward(&self, x: &[F], step: &StepFeatures<F>, cond: &PreparedCondition<F>) -> Result<(Vec<F>, ForwardCache<F>)> {
        let cfg = &self.cfg;
        let (c, d) = (cfg.residual_channels, cfg.embed_dim);
        if x.len() != d {
            return Err(Error::DimensionMismatch {
                what: "denoiser input",
                expected: d,
                got: x.len(),
            });
        }
        if !all_finite(x) {
            return Err(Error::NonFinite(format!("denoiser input at step {}", step.t)));
        }
        let l = &self.layout;
        let h0_pre = pointwise(self.p(&l.in_w), Some(self.p(&l.in_b)), x, 1, c, d);
        let mut h: Vec<F> = h0_pre.iter().map(|&v| v.max(F::zero())).collect();
        let mut skip = vec![F::zero(); c * d];
        let mut caches = Vec::with_capacity(NUM_BLOCKS);
        let inv_sqrt2 = F::one() / F::of(2.0).sqrt();
        for (bi, b) in l.blocks.iter().enumerate() {
            let dil = DILATIONS[bi % DILATIONS.len()];
            let mut y = h.clone();
            for ch in 0..c {
                let off = step.per_block[bi][ch];
                y[ch * d..(ch + 1) * d].iter_mut().for_each(|v| *v += off);
            }
            // dilated conv along the embedding axis, zero padded, plus conditioner
            let mut z = cond.per_block[bi].clone();
            let w = self.p(&b.conv_w);
            let bias = self.p(&b.conv_b);
            for o in 0..2 * c {
                let zo = &mut z[o * d..(o + 1) * d];
                zo.iter_mut().for_each(|v| *v += bias[o]);
                for i in 0..c {
                    let yi = &y[i * d..(i + 1) * d];
                    for kk in 0..KERNEL {
                        let wk = w[(o * c + i) * KERNEL + kk];
                        if wk == F::zero() {
                            continue;
                        }
                        let shift = kk as isize - 1;
                        for p in 0..d {
                            let q = p as isize + shift * dil as isize;
                            if q >= 0 && (q as usize) < d {
                                zo[p] += wk * yi[q as usize];
                            }
                        }
                    }
                }
            }
            let tanh: Vec<F> = z[..c * d].iter().map(|v| v.tanh()).collect();
            let sig: Vec<F> = z[c * d..].iter().map(|&v| sigmoid(v)).collect();
            let gate: Vec<F> = tanh.iter().zip(&sig).map(|(&a, &s)| a * s).collect();
            let r = pointwise(self.p(&b.out_w), Some(self.p(&b.out_b)), &gate, c, 2 * c, d);
            for i in 0..c * d {
                h[i] = (h[i] + r[i]) * inv_sqrt2;
                skip[i] += r[c * d + i];
            }
            if !all_finite(&h) || !all_finite(&skip) {
                return Err(Error::NonFinite(format!("denoiser activation at step {}, block {bi}", step.t)));
            }
            caches.push(BlockCache { y, tanh, sig, gate });
        }
        let skip_scale = F::one() / F::of_usize(NUM_BLOCKS).sqrt();
        skip.iter_mut().for_each(|v| *v *= skip_scale);
        let skip_pre = pointwise(self.p(&l.skip_w), Some(self.p(&l.skip_b)), &skip, c, c, d);
        let act: Vec<F> = skip_pre.iter().map(|&v| v.max(F::zero())).collect();
        let out = pointwise(self.p(&l.final_w), Some(self.p(&l.final_b)), &act, c, 1, d);
        if !all_finite(&out) {
            return Err(Error::NonFinite(format!("denoiser output at step {}", step.t)));
        }
        Ok((
            out,
            ForwardCache {
                x: x.to_vec(),
                h0_pre,
                blocks: caches,
                skip_in: skip,
                skip_pre,
            },
        ))
    }

    /// Convenience: full prediction from raw inputs.
    pub fn predict(&self, x: &[F], t: usize, hist: &[F], ctx: &[F]) -> Result<Vec<F>> {
        let cond = self.prepare_condition(hist, ctx)?;
        Ok(self.forward(x, &self.step_features(t), &cond)?.0)
    }

    /// Accumulates `∂L/∂θ` into `grad` (same length as the parameters) given
    /// `∂L/∂ε̂`, and returns `∂L/∂h̃`.
    pub fn backward(&self, cache: &ForwardCache<F>, step: &StepFeatures<F>, cond: &PreparedCondition<F>, g_eps: &[F], grad: &mut [F]) -> Vec<F> {
        assert_eq!(grad.len(), self.data.len(), "gradient buffer length");
        let cfg = &self.cfg;
        let (c, d, k) = (cfg.residual_channels, cfg.embed_dim, cfg.cond_channels);
        let l = &self.layout;
        let zero = F::zero();

        // head: final 1x1 ← ReLU ← skip 1x1
        let act: Vec<F> = cache.skip_pre.iter().map(|&v| v.max(zero)).collect();
        let (gw, gb) = split2(grad, &l.final_w, &l.final_b);
        let g_act = pointwise_backward(self.p(&l.final_w), &act, g_eps, c, 1, d, gw, Some(gb), true).expect("input grad requested");
        let g_skip_pre: Vec<F> = g_act
            .iter()
            .zip(&cache.skip_pre)
            .map(|(&g, &v)| if v > zero { g } else { zero })
            .collect();
        let (gw, gb) = split2(grad, &l.skip_w, &l.skip_b);
        let mut g_skip =
            pointwise_backward(self.p(&l.skip_w), &cache.skip_in, &g_skip_pre, c, c, d, gw, Some(gb), true).expect("input grad requested");
        let skip_scale = F::one() / F::of_usize(NUM_BLOCKS).sqrt();
        g_skip.iter_mut().for_each(|v| *v *= skip_scale);

        let inv_sqrt2 = F::one() / F::of(2.0).sqrt();
        let mut g_h = vec![zero; c * d];
        let mut g_cond = vec![zero; 2 * k * d];
        let mut g_s2 = vec![zero; cfg.step_hidden];
        for (bi, b) in l.blocks.iter().enumerate().rev() {
            let bc = &cache.blocks[bi];
            let dil = DILATIONS[bi % DILATIONS.len()];
            // h_out = (h + res)/√2, skip += skip_part
            let mut g_r = Vec::with_capacity(2 * c * d);
            g_r.extend(g_h.iter().map(|&g| g * inv_sqrt2));
            g_r.extend_from_slice(&g_skip);
            let mut g_h_in: Vec<F> = g_h.iter().map(|&g| g * inv_sqrt2).collect();

            let (gw, gb) = split2(grad, &b.out_w, &b.out_b);
            let g_gate = pointwise_backward(self.p(&b.out_w), &bc.gate, &g_r, c, 2 * c, d, gw, Some(gb), true).expect("input grad requested");
            let mut g_z = vec![zero; 2 * c * d];
            for i in 0..c * d {
                let (a, s) = (bc.tanh[i], bc.sig[i]);
                g_z[i] = g_gate[i] * s * (F::one() - a * a);
                g_z[c * d + i] = g_gate[i] * a * s * (F::one() - s);
            }

            // conditioner 1x1 (no bias)
            let g_c = pointwise_backward(
                self.p(&b.cond_w),
                &cond.cond,
                &g_z,
                2 * k,
                2 * c,
                d,
                &mut grad[b.cond_w.clone()],
                None,
                true,
            )
            .expect("input grad requested");
            g_cond.iter_mut().zip(&g_c).for_each(|(a, &v)| *a += v);

            // dilated conv
            let w = self.p(&b.conv_w);
            let mut g_y = vec![zero; c * d];
            {
                let (gw, gb) = split2(grad, &b.conv_w, &b.conv_b);
                for o in 0..2 * c {
                    let go = &g_z[o * d..(o + 1) * d];
                    gb[o] += go.iter().copied().sum();
                    for i in 0..c {
                        let yi = &bc.y[i * d..(i + 1) * d];
                        for kk in 0..KERNEL {
                            let shift = (kk as isize - 1) * dil as isize;
                            let widx = (o * c + i) * KERNEL + kk;
                            let wk = w[widx];
                            let mut acc = zero;
                            for p in 0..d {
                                let q = p as isize + shift;
                                if q >= 0 && (q as usize) < d {
                                    let q = q as usize;
                                    acc += go[p] * yi[q];
                                    g_y[i * d + q] += wk * go[p];
                                }
                            }
                            gw[widx] += acc;
                        }
                    }
                }
            }

            // y = h + step offset
            let (gw, gb) = split2(grad, &b.step_w, &b.step_b);
            let s = cfg.step_hidden;
            let sw = self.p(&b.step_w);
            for ch in 0..c {
                let g_off: F = g_y[ch * d..(ch + 1) * d].iter().copied().sum();
                gb[ch] += g_off;
                for j in 0..s {
                    gw[ch * s + j] += g_off * step.s2[j];
                    g_s2[j] += sw[ch * s + j] * g_off;
                }
            }
            for (a, &v) in g_h_in.iter_mut().zip(&g_y) {
                *a += v;
            }
            g_h = g_h_in;
        }

        // input projection behind ReLU
        let g_pre: Vec<F> = g_h.iter().zip(&cache.h0_pre).map(|(&g, &v)| if v > zero { g } else { zero }).collect();
        let (gw, gb) = split2(grad, &l.in_w, &l.in_b);
        pointwise_backward(self.p(&l.in_w), &cache.x, &g_pre, 1, c, d, gw, Some(gb), false);

        // step MLP
        let g_s2_pre: Vec<F> = g_s2.iter().zip(&step.s2_pre).map(|(&g, &v)| g * swish_grad(v)).collect();
        let g_s1 = dense_backward(self.p(&l.step2_w), &step.s1, &g_s2_pre, grad, &l.step2_w, &l.step2_b, true);
        let g_s1_pre: Vec<F> = g_s1.iter().zip(&step.s1_pre).map(|(&g, &v)| g * swish_grad(v)).collect();
        dense_backward(self.p(&l.step1_w), &step.fourier, &g_s1_pre, grad, &l.step1_w, &l.step1_b, false);

        // condition projections
        let kd = k * d;
        dense_backward(self.p(&l.ctx_w), &cond.ctx, &g_cond[kd..], grad, &l.ctx_w, &l.ctx_b, false);
        dense_backward(self.p(&l.hist_w), &cond.hist, &g_cond[..kd], grad, &l.hist_w, &l.hist_b, true)
    }
}

/// Disjoint mutable views of a weight range and the bias range after it.
fn split2<'a, F>(grad: &'a mut [F], w: &Range<usize>, b: &Range<usize>) -> (&'a mut [F], &'a mut [F]) {
    debug_assert!(w.end <= b.start);
    let (lo, hi) = grad.split_at_mut(b.start);
    (&mut lo[w.clone()], &mut hi[..b.len()])
}

/// Backward of [`affine`]; returns the input gradient (empty unless requested).
fn dense_backward<F: Scalar>(w: &[F], x: &[F], g_out: &[F], grad: &mut [F], wr: &Range<usize>, br: &Range<usize>, want_input: bool) -> Vec<F> {
    let cols = x.len();
    let (gw, gb) = split2(grad, wr, br);
    let mut g_x = vec![F::zero(); if want_input { cols } else { 0 }];
    for (r, &g) in g_out.iter().enumerate() {
        gb[r] += g;
        if g == F::zero() {
            continue;
        }
        for j in 0..cols {
            gw[r * cols + j] += g * x[j];
            if want_input {
                g_x[j] += w[r * cols + j] * g;
            }
        }
    }
    g_x
}
