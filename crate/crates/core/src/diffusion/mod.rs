//! Conditional denoising diffusion over embedding vectors: noise schedule,
//! dilated residual denoiser, the noise + embedding training objective,
//! ancestral sampling and cosine decoding back to app ids.

mod decode;
mod denoiser;
mod schedule;

pub use decode::{decode_app, CosineDecoder};
pub use denoiser::{
    step_fourier, DenoiserConfig, DenoiserParams, ForwardCache, PreparedCondition, StepFeatures, DILATIONS, NUM_BLOCKS, STEP_FEATURES,
};
pub use schedule::{estimate_x0, forward_noise, make_schedule, reverse_update, NoiseSchedule};

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::normal_vec;
use crate::scalar::Scalar;

/// Objective weights.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    /// `α` in `λ_t = 1 − α·t/T`, within `[0, 1]`.
    pub lambda_alpha: f64,
    /// When false only the noise-prediction term is optimized.
    pub embedding_term: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda_alpha: 0.8,
            embedding_term: true,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda_alpha) {
            return Err(Error::invalid(
                "diffusion.lambda_alpha",
                format!("{} is outside [0, 1]", self.lambda_alpha),
            ));
        }
        Ok(())
    }
}

/// One training example in model space.
#[derive(Clone, Copy, Debug)]
pub struct LossInput<'a, F> {
    /// Clean vector fed to the forward process (`scale · a`).
    pub x0: &'a [F],
    /// Target embedding `a` in table space.
    pub target: &'a [F],
    /// Factor mapping table space to model space.
    pub scale: F,
    pub t: usize,
    pub eps: &'a [F],
    pub hist: &'a [F],
    pub ctx: &'a [F],
}

/// Loss terms of one example.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossValue<F> {
    pub total: F,
    pub noise: F,
    pub embedding: F,
}

/// `L = ‖ε − ε̂‖² + λ_t‖a − â‖²` with `â = x̂0/scale` from the single-shot
/// estimate. Adds `∂L/∂θ` into `grad` and returns the loss with `∂L/∂h̃`.
pub fn training_loss<F: Scalar>(
    params: &DenoiserParams<F>,
    sched: &NoiseSchedule<F>,
    input: &LossInput<'_, F>,
    cfg: &LossConfig,
    grad: &mut [F],
) -> Result<(LossValue<F>, Vec<F>)> {
    cfg.validate()?;
    let x_t = forward_noise(input.x0, input.t, input.eps, sched)?;
    let step = params.step_features(input.t);
    let cond = params.prepare_condition(input.hist, input.ctx)?;
    training_loss_prepared(params, sched, input, &x_t, &step, &cond, cfg, grad)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn training_loss_prepared<F: Scalar>(
    params: &DenoiserParams<F>,
    sched: &NoiseSchedule<F>,
    input: &LossInput<'_, F>,
    x_t: &[F],
    step: &StepFeatures<F>,
    cond: &PreparedCondition<F>,
    cfg: &LossConfig,
    grad: &mut [F],
) -> Result<(LossValue<F>, Vec<F>)> {
    let t = input.t;
    let (eps_hat, cache) = params.forward(x_t, step, cond)?;
    let two = F::of(2.0);
    let mut noise = F::zero();
    let mut g_eps: Vec<F> = Vec::with_capacity(eps_hat.len());
    for (&e, &h) in input.eps.iter().zip(&eps_hat) {
        noise += (e - h) * (e - h);
        g_eps.push(two * (h - e));
    }
    let mut embedding = F::zero();
    let mut total = noise;
    if cfg.embedding_term {
        let lambda = sched.lambda(t, F::of(cfg.lambda_alpha));
        let ab = sched.alpha_bar(t);
        // â = (x_t − √(1−ᾱ)ε̂)/(√ᾱ·s), so ∂â/∂ε̂ = −√(1−ᾱ)/(√ᾱ·s)
        let denom = ab.sqrt() * input.scale;
        let da = -(F::one() - ab).sqrt() / denom;
        let x0_hat = estimate_x0(x_t, t, &eps_hat, sched)?;
        for i in 0..eps_hat.len() {
            let diff = input.target[i] - x0_hat[i] / input.scale;
            embedding += diff * diff;
            g_eps[i] += lambda * two * diff * (-da);
        }
        total += lambda * embedding;
    }
    let g_hist = params.backward(&cache, step, cond, &g_eps, grad);
    Ok((LossValue { total, noise, embedding }, g_hist))
}

/// Forward-only value of [`training_loss`] for monitoring.
pub fn loss_value<F: Scalar>(
    params: &DenoiserParams<F>,
    sched: &NoiseSchedule<F>,
    input: &LossInput<'_, F>,
    cfg: &LossConfig,
) -> Result<LossValue<F>> {
    let x_t = forward_noise(input.x0, input.t, input.eps, sched)?;
    let eps_hat = params.predict(&x_t, input.t, input.hist, input.ctx)?;
    let noise: F = input.eps.iter().zip(&eps_hat).map(|(&e, &h)| (e - h) * (e - h)).sum();
    let mut embedding = F::zero();
    let mut total = noise;
    if cfg.embedding_term {
        let x0_hat = estimate_x0(&x_t, input.t, &eps_hat, sched)?;
        embedding = input
            .target
            .iter()
            .zip(&x0_hat)
            .map(|(&a, &x)| (a - x / input.scale) * (a - x / input.scale))
            .sum();
        total += sched.lambda(input.t, F::of(cfg.lambda_alpha)) * embedding;
    }
    Ok(LossValue { total, noise, embedding })
}

/// Step features for every `t` in `1..=T`, indexed by `t − 1`.
pub fn step_table<F: Scalar>(params: &DenoiserParams<F>, sched: &NoiseSchedule<F>) -> Vec<StepFeatures<F>> {
    (1..=sched.steps()).map(|t| params.step_features(t)).collect()
}

/// One reverse update with the model's noise prediction.
pub fn reverse_step<F: Scalar>(
    params: &DenoiserParams<F>,
    sched: &NoiseSchedule<F>,
    x_t: &[F],
    t: usize,
    hist: &[F],
    ctx: &[F],
    z: &[F],
) -> Result<Vec<F>> {
    let eps_hat = params.predict(x_t, t, hist, ctx)?;
    reverse_update(x_t, t, &eps_hat, z, sched)
}

/// Full ancestral chain from `x_T ~ N(0, I)` down to `x_0`.
pub fn sample<F: Scalar, R: Rng + ?Sized>(
    params: &DenoiserParams<F>,
    sched: &NoiseSchedule<F>,
    steps: &[StepFeatures<F>],
    cond: &PreparedCondition<F>,
    rng: &mut R,
) -> Result<Vec<F>> {
    let d = params.config().embed_dim;
    let mut x: Vec<F> = normal_vec(rng, d);
    let zeros = vec![F::zero(); d];
    for t in (1..=sched.steps()).rev() {
        let (eps_hat, _) = params.forward(&x, &steps[t - 1], cond)?;
        let z = if t > 1 { normal_vec(rng, d) } else { zeros.clone() };
        x = reverse_update(&x, t, &eps_hat, &z, sched)?;
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::Adam;
    use crate::rng::seeded;

    fn tiny(embed_dim: usize) -> DenoiserConfig {
        DenoiserConfig {
            embed_dim,
            hist_dim: 2,
            ctx_dim: 2,
            residual_channels: 4,
            cond_channels: 1,
            step_hidden: 8,
        }
    }

    #[test]
    fn lambda_alpha_is_range_checked() {
        let p = DenoiserParams::<f64>::zeros(tiny(2)).unwrap();
        let s = make_schedule(10, 1e-3, 0.2).unwrap();
        let mut g = vec![0.0; p.len()];
        let input = LossInput {
            x0: &[1.0, 0.0],
            target: &[1.0, 0.0],
            scale: 1.0,
            t: 3,
            eps: &[0.1, 0.2],
            hist: &[0.0, 0.0],
            ctx: &[0.0, 0.0],
        };
        let bad = LossConfig {
            lambda_alpha: 1.5,
            embedding_term: true,
        };
        assert!(training_loss(&p, &s, &input, &bad, &mut g).is_err());
        // zero model predicts ε̂ = 0, so the noise term is ‖ε‖²
        let (l, _) = training_loss(&p, &s, &input, &LossConfig::default(), &mut g).unwrap();
        assert!((l.noise - 0.05).abs() < 1e-12);
    }

    #[test]
    fn loss_gradient_matches_central_differences() {
        let mut rng = seeded(5);
        let mut p = DenoiserParams::<f64>::zeros(tiny(3)).unwrap();
        let v: Vec<f64> = normal_vec(&mut rng, p.len());
        p.as_flat_mut().iter_mut().zip(&v).for_each(|(a, &b)| *a = 0.4 * b);
        let s = make_schedule(20, 1e-3, 0.2).unwrap();
        let target = [0.3, -0.5, 0.2];
        let scale = 2.0;
        let x0: Vec<f64> = target.iter().map(|v| v * scale).collect();
        let eps: Vec<f64> = normal_vec(&mut rng, 3);
        let hist = [0.7, -0.1];
        let ctx = [0.2, 0.9];
        let input = LossInput {
            x0: &x0,
            target: &target,
            scale,
            t: 12,
            eps: &eps,
            hist: &hist,
            ctx: &ctx,
        };
        let cfg = LossConfig::default();
        let mut g = vec![0.0; p.len()];
        let (_, g_hist) = training_loss(&p, &s, &input, &cfg, &mut g).unwrap();
        let loss = |p: &DenoiserParams<f64>, hist: &[f64]| {
            let inp = LossInput { hist, ..input };
            training_loss(p, &s, &inp, &cfg, &mut vec![0.0; p.len()]).unwrap().0.total
        };
        let h = 1e-6;
        let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-6);
        for i in 0..p.len() {
            let mut a = p.clone();
            a.as_flat_mut()[i] += h;
            let mut b = p.clone();
            b.as_flat_mut()[i] -= h;
            let fd = (loss(&a, &hist) - loss(&b, &hist)) / (2.0 * h);
            assert!(rel(g[i], fd) < 1e-3, "param {i}: {} vs {fd}", g[i]);
        }
        for i in 0..2 {
            let mut a = hist;
            a[i] += h;
            let mut b = hist;
            b[i] -= h;
            let fd = (loss(&p, &a) - loss(&p, &b)) / (2.0 * h);
            assert!(rel(g_hist[i], fd) < 1e-3);
        }
    }

    #[test]
    fn zero_model_reverse_step_rescales() {
        let p = DenoiserParams::<f64>::zeros(tiny(2)).unwrap();
        let s = make_schedule(5, 0.01, 0.1).unwrap();
        let x = reverse_step(&p, &s, &[1.0, -2.0], 3, &[0.0; 2], &[0.0; 2], &[0.0; 2]).unwrap();
        let a = s.alpha(3).sqrt();
        assert!((x[0] - 1.0 / a).abs() < 1e-15 && (x[1] + 2.0 / a).abs() < 1e-15);
    }

    #[test]
    fn trained_on_a_point_mass_samples_near_it() {
        let mut rng = seeded(7);
        let cfg = DenoiserConfig {
            hist_dim: 0,
            ctx_dim: 0,
            ..tiny(2)
        };
        let mut p = DenoiserParams::<f64>::init(cfg, &mut rng).unwrap();
        let s = make_schedule(20, 1e-3, 0.3).unwrap();
        let v = [1.2, -0.8];
        let mut opt = Adam::new(p.len(), 3e-3);
        let loss_cfg = LossConfig {
            lambda_alpha: 0.8,
            embedding_term: false,
        };
        let mut g = vec![0.0; p.len()];
        for _ in 0..3000 {
            g.iter_mut().for_each(|x| *x = 0.0);
            for _ in 0..8 {
                let eps: Vec<f64> = normal_vec(&mut rng, 2);
                let t = rng.random_range(1..=20);
                let input = LossInput {
                    x0: &v,
                    target: &v,
                    scale: 1.0,
                    t,
                    eps: &eps,
                    hist: &[],
                    ctx: &[],
                };
                training_loss(&p, &s, &input, &loss_cfg, &mut g).unwrap();
            }
            g.iter_mut().for_each(|x| *x /= 8.0);
            opt.step(p.as_flat_mut(), &g);
        }
        let steps = step_table(&p, &s);
        let cond = p.prepare_condition(&[], &[]).unwrap();
        let n = 1000;
        let mut mean = [0.0; 2];
        for _ in 0..n {
            let x = sample(&p, &s, &steps, &cond, &mut rng).unwrap();
            mean[0] += x[0] / n as f64;
            mean[1] += x[1] / n as f64;
        }
        let err = ((mean[0] - v[0]).powi(2) + (mean[1] - v[1]).powi(2)).sqrt();
        let norm = (v[0] * v[0] + v[1] * v[1]).sqrt();
        assert!(err < 0.1 * norm, "mean {mean:?}");
    }
}
