use rand::seq::SliceRandom;
use rand::Rng;

use super::{EmbeddingDomain, EmbeddingTable};
use crate::corpus::AppId;
use crate::error::{Error, Result};
use crate::rng::{sub_rng, uniform_vec};
use crate::scalar::{dot, sigmoid, Scalar};

#[derive(Clone, Debug, PartialEq)]
pub struct SkipGramConfig {
    pub dim: usize,
    /// Context positions considered on each side of the centre.
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    /// Initial SGD step, decayed linearly to 1e-4 of itself.
    pub learning_rate: f64,
    pub init_bound: f64,
}

impl Default for SkipGramConfig {
    fn default() -> Self {
        SkipGramConfig {
            dim: 64,
            window: 5,
            negatives: 5,
            epochs: 5,
            learning_rate: 0.025,
            init_bound: 0.05,
        }
    }
}

impl SkipGramConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(Error::invalid("encoders.app_dim", "must be at least 2"));
        }
        if self.window == 0 {
            return Err(Error::invalid("encoders.window", "must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("encoders.skipgram_lr", "must be positive"));
        }
        Ok(())
    }
}

/// Gradients of [`sgns_loss`] with respect to each input vector.
#[derive(Clone, Debug, PartialEq)]
pub struct SgnsGrad<F> {
    pub center: Vec<F>,
    pub context: Vec<F>,
    pub negatives: Vec<Vec<F>>,
}

fn softplus<F: Scalar>(x: F) -> F {
    if x > F::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Negative-sampling loss `-ln σ(c·o) - Σ ln σ(-c·n)` for one centre vector
/// `c`, one observed context output vector `o` and sampled negatives `n`.
pub fn sgns_loss<F: Scalar>(center: &[F], context: &[F], negatives: &[&[F]]) -> (F, SgnsGrad<F>) {
    let pos = dot(center, context);
    let mut loss = softplus(-pos);
    let gp = sigmoid(pos) - F::one();
    let mut g_center: Vec<F> = context.iter().map(|&o| gp * o).collect();
    let g_context: Vec<F> = center.iter().map(|&c| gp * c).collect();
    let mut g_neg = Vec::with_capacity(negatives.len());
    for n in negatives {
        let s = dot(center, n);
        loss += softplus(s);
        let gn = sigmoid(s);
        for (g, &x) in g_center.iter_mut().zip(n.iter()) {
            *g += gn * x;
        }
        g_neg.push(center.iter().map(|&c| gn * c).collect());
    }
    (
        loss,
        SgnsGrad {
            center: g_center,
            context: g_context,
            negatives: g_neg,
        },
    )
}

/// Cumulative unigram^0.75 distribution for negative draws.
fn noise_cdf(counts: &[usize]) -> Vec<f64> {
    let mut acc = 0.0;
    counts
        .iter()
        .map(|&c| {
            acc += (c as f64).powf(0.75);
            acc
        })
        .collect()
}

fn draw(cdf: &[f64], rng: &mut impl Rng) -> usize {
    let total = *cdf.last().expect("non-empty vocabulary");
    let u = rng.random::<f64>() * total;
    cdf.partition_point(|&c| c <= u).min(cdf.len() - 1)
}

/// Trains app vectors with skip-gram and negative sampling over windows
/// inside each sequence. Every app in `[0, num_apps)` must occur.
pub fn train_app_embeddings<F: Scalar>(sequences: &[Vec<AppId>], num_apps: usize, cfg: &SkipGramConfig, seed: u64) -> Result<EmbeddingTable<F>> {
    cfg.validate()?;
    if num_apps == 0 {
        return Err(Error::Empty("app vocabulary"));
    }
    let mut counts = vec![0usize; num_apps];
    for s in sequences {
        for a in s {
            let i = a.index();
            if i >= num_apps {
                return Err(Error::UnknownId {
                    domain: "app",
                    id: a.to_string(),
                });
            }
            counts[i] += 1;
        }
    }
    let missing: Vec<usize> = (0..num_apps).filter(|&i| counts[i] == 0).collect();
    if !missing.is_empty() {
        return Err(Error::MissingIds { domain: "app", ids: missing });
    }

    let d = cfg.dim;
    let mut rng = sub_rng(seed, "skipgram", 0);
    let mut input: Vec<F> = uniform_vec(&mut rng, num_apps * d, cfg.init_bound);
    let mut output: Vec<F> = uniform_vec(&mut rng, num_apps * d, cfg.init_bound);
    let cdf = noise_cdf(&counts);

    let pairs_per_epoch: usize = sequences
        .iter()
        .map(|s| (0..s.len()).map(|i| i.min(cfg.window) + (s.len() - 1 - i).min(cfg.window)).sum::<usize>())
        .sum();
    let total_steps = (pairs_per_epoch * cfg.epochs).max(1) as f64;
    let mut step = 0usize;

    let mut order: Vec<usize> = (0..sequences.len()).collect();
    let mut neg_ids = Vec::with_capacity(cfg.negatives);
    let mut g_center = vec![F::zero(); d];
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for &si in &order {
            let seq = &sequences[si];
            for (i, c) in seq.iter().enumerate() {
                let c = c.index();
                let lo = i.saturating_sub(cfg.window);
                let hi = (i + cfg.window).min(seq.len() - 1);
                for (j, o) in seq.iter().enumerate().take(hi + 1).skip(lo) {
                    if j == i {
                        continue;
                    }
                    let o = o.index();
                    let lr = F::of(cfg.learning_rate * (1.0 - step as f64 / total_steps).max(1e-4));
                    step += 1;

                    neg_ids.clear();
                    for _ in 0..cfg.negatives {
                        let n = draw(&cdf, &mut rng);
                        if n != o {
                            neg_ids.push(n);
                        }
                    }

                    // Plain SGD on the shared rows, word2vec style: the centre
                    // update is accumulated and applied after the outputs move.
                    g_center.iter_mut().for_each(|g| *g = F::zero());
                    let cv = &input[c * d..(c + 1) * d];
                    for (target, &id) in std::iter::once((true, &o)).chain(neg_ids.iter().map(|n| (false, n))) {
                        let ov = &mut output[id * d..(id + 1) * d];
                        let s = sigmoid(dot(cv, ov));
                        let g = if target { s - F::one() } else { s };
                        for k in 0..d {
                            g_center[k] += g * ov[k];
                            ov[k] -= lr * g * cv[k];
                        }
                    }
                    let cv = &mut input[c * d..(c + 1) * d];
                    for k in 0..d {
                        cv[k] -= lr * g_center[k];
                    }
                }
            }
        }
    }
    if !crate::scalar::all_finite(&input) {
        return Err(Error::NonFinite("skip-gram app vectors".into()));
    }
    EmbeddingTable::from_flat(EmbeddingDomain::App, d, input)
}
