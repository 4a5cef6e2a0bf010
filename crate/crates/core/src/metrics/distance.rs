use crate::error::{Error, Result};
use crate::scalar::Scalar;

fn check_pair<F: Scalar>(p: &[F], q: &[F]) -> Result<()> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch {
            what: "metric arguments",
            expected: p.len(),
            got: q.len(),
        });
    }
    if p.is_empty() {
        return Err(Error::Empty("metric arguments"));
    }
    Ok(())
}

fn check_distribution<F: Scalar>(p: &[F]) -> Result<()> {
    let tol = F::epsilon().sqrt() * F::of(10.0);
    if p.iter().any(|&x| x < F::zero() || !x.is_finite()) {
        return Err(Error::InvalidArgument("distribution has negative or non-finite mass".into()));
    }
    let total: F = p.iter().copied().sum();
    if (total - F::one()).abs() > tol {
        return Err(Error::InvalidArgument(format!("distribution sums to {total}, not 1")));
    }
    Ok(())
}

/// Root mean squared error.
pub fn rmse<F: Scalar>(p: &[F], q: &[F]) -> Result<F> {
    check_pair(p, q)?;
    let s: F = p.iter().zip(q).map(|(&a, &b)| (a - b) * (a - b)).sum();
    Ok((s / F::of_usize(p.len())).sqrt())
}

/// Mean absolute error.
pub fn mae<F: Scalar>(p: &[F], q: &[F]) -> Result<F> {
    check_pair(p, q)?;
    let s: F = p.iter().zip(q).map(|(&a, &b)| (a - b).abs()).sum();
    Ok(s / F::of_usize(p.len()))
}

/// Jensen–Shannon divergence in nats, bounded by `ln 2`.
pub fn jsd<F: Scalar>(p: &[F], q: &[F]) -> Result<F> {
    check_pair(p, q)?;
    check_distribution(p)?;
    check_distribution(q)?;
    let half = F::of(0.5);
    let kl_to_mixture = |a: F, m: F| if a > F::zero() { a * (a / m).ln() } else { F::zero() };
    let mut total = F::zero();
    for (&a, &b) in p.iter().zip(q) {
        let m = half * (a + b);
        total += half * kl_to_mixture(a, m) + half * kl_to_mixture(b, m);
    }
    Ok(total.max(F::zero()))
}

/// Marginal total variation, `½ Σ |P_i − Q_i|`.
pub fn m_tv<F: Scalar>(p: &[F], q: &[F]) -> Result<F> {
    check_pair(p, q)?;
    let s: F = p.iter().zip(q).map(|(&a, &b)| (a - b).abs()).sum();
    Ok(F::of(0.5) * s)
}

/// 1-based ranks with ties sharing their average rank.
fn average_ranks<F: Scalar>(x: &[F]) -> Vec<F> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].partial_cmp(&x[b]).expect("finite ranks"));
    let mut ranks = vec![F::zero(); x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let avg = F::of((i + j) as f64 / 2.0 + 1.0);
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation (Pearson correlation of average ranks).
pub fn spearmanr<F: Scalar>(x: &[F], y: &[F]) -> Result<F> {
    check_pair(x, y)?;
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("spearmanr input".into()));
    }
    let rx = average_ranks(x);
    let ry = average_ranks(y);
    let n = F::of_usize(x.len());
    let mx = rx.iter().copied().sum::<F>() / n;
    let my = ry.iter().copied().sum::<F>() / n;
    let (mut sxy, mut sxx, mut syy) = (F::zero(), F::zero(), F::zero());
    for (&a, &b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == F::zero() || syy == F::zero() {
        return Err(Error::InvalidArgument("spearmanr is undefined for constant input".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).max(-F::one()).min(F::one()))
}

/// Continuous ranked probability score of the empirical CDF of `samples`
/// against observation `x`, integrated exactly over the step function.
pub fn crps<F: Scalar>(samples: &[F], x: F) -> Result<F> {
    if samples.is_empty() {
        return Err(Error::Empty("crps samples"));
    }
    if !x.is_finite() || samples.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("crps input".into()));
    }
    let mut s = samples.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).expect("finite samples"));
    let n = F::of_usize(s.len());

    let mut points = s.clone();
    points.push(x);
    points.sort_by(|a, b| a.partial_cmp(b).expect("finite"));

    let mut total = F::zero();
    let mut below = 0usize;
    for w in points.windows(2) {
        let (left, right) = (w[0], w[1]);
        while below < s.len() && s[below] <= left {
            below += 1;
        }
        let width = right - left;
        if width > F::zero() {
            let cdf = F::of_usize(below) / n;
            let step = if x <= left { F::one() } else { F::zero() };
            total += width * (cdf - step) * (cdf - step);
        }
    }
    Ok(total)
}
