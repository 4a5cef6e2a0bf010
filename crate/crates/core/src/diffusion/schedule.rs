use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Linear β schedule with cumulative products. Steps are 1-based: `beta(1)`
/// is the first corruption step and `alpha_bar(T)` the last.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule<F> {
    beta: Vec<F>,
    alpha: Vec<F>,
    alpha_bar: Vec<F>,
}

/// `β_t` interpolated linearly from `beta_start` to `beta_end` inclusive.
pub fn make_schedule<F: Scalar>(steps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule<F>> {
    if steps == 0 {
        return Err(Error::invalid("diffusion.steps", "must be at least 1"));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(Error::invalid(
            "diffusion.beta",
            format!("need 0 < beta_start <= beta_end < 1, got {beta_start} and {beta_end}"),
        ));
    }
    let beta: Vec<F> = (0..steps)
        .map(|i| {
            let frac = if steps == 1 { 0.0 } else { i as f64 / (steps - 1) as f64 };
            F::of(beta_start + (beta_end - beta_start) * frac)
        })
        .collect();
    let alpha: Vec<F> = beta.iter().map(|&b| F::one() - b).collect();
    let mut acc = F::one();
    let alpha_bar = alpha
        .iter()
        .map(|&a| {
            acc *= a;
            acc
        })
        .collect();
    Ok(NoiseSchedule { beta, alpha, alpha_bar })
}

impl<F: Scalar> NoiseSchedule<F> {
    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    #[inline]
    pub fn beta(&self, t: usize) -> F {
        self.beta[t - 1]
    }

    #[inline]
    pub fn alpha(&self, t: usize) -> F {
        self.alpha[t - 1]
    }

    #[inline]
    pub fn alpha_bar(&self, t: usize) -> F {
        self.alpha_bar[t - 1]
    }

    pub fn betas(&self) -> &[F] {
        &self.beta
    }

    pub fn alpha_bars(&self) -> &[F] {
        &self.alpha_bar
    }

    pub(crate) fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::InvalidArgument(format!("diffusion step {t} is outside [1, {}]", self.steps())));
        }
        Ok(())
    }

    /// Embedding-loss weight `λ_t = 1 − λα·t/T`.
    pub fn lambda(&self, t: usize, lambda_alpha: F) -> F {
        F::one() - lambda_alpha * F::of_usize(t) / F::of_usize(self.steps())
    }
}

fn same_len<F>(what: &'static str, a: &[F], b: &[F]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            what,
            expected: a.len(),
            got: b.len(),
        });
    }
    Ok(())
}

/// Closed-form corruption `x_t = √ᾱ_t·x0 + √(1−ᾱ_t)·ε`.
pub fn forward_noise<F: Scalar>(x0: &[F], t: usize, eps: &[F], sched: &NoiseSchedule<F>) -> Result<Vec<F>> {
    sched.check_step(t)?;
    same_len("noise", x0, eps)?;
    let ab = sched.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (F::one() - ab).sqrt());
    Ok(x0.iter().zip(eps).map(|(&x, &e)| a * x + b * e).collect())
}

/// Single-shot estimate `x̂0 = (x_t − √(1−ᾱ_t)·ε̂)/√ᾱ_t`.
pub fn estimate_x0<F: Scalar>(x_t: &[F], t: usize, eps_hat: &[F], sched: &NoiseSchedule<F>) -> Result<Vec<F>> {
    sched.check_step(t)?;
    same_len("noise estimate", x_t, eps_hat)?;
    let ab = sched.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (F::one() - ab).sqrt());
    Ok(x_t.iter().zip(eps_hat).map(|(&x, &e)| (x - b * e) / a).collect())
}

/// Posterior-mean update `x_{t−1} = (x_t − β_t/√(1−ᾱ_t)·ε̂)/√α_t + √β_t·z`;
/// `z` is ignored at `t = 1`.
pub fn reverse_update<F: Scalar>(x_t: &[F], t: usize, eps_hat: &[F], z: &[F], sched: &NoiseSchedule<F>) -> Result<Vec<F>> {
    sched.check_step(t)?;
    same_len("noise estimate", x_t, eps_hat)?;
    same_len("reverse noise", x_t, z)?;
    let coef = sched.beta(t) / (F::one() - sched.alpha_bar(t)).sqrt();
    let inv = F::one() / sched.alpha(t).sqrt();
    let sigma = if t == 1 { F::zero() } else { sched.beta(t).sqrt() };
    Ok(x_t
        .iter()
        .zip(eps_hat)
        .zip(z)
        .map(|((&x, &e), &zi)| inv * (x - coef * e) + sigma * zi)
        .collect())
}
