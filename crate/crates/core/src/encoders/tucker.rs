use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng;

use super::{EmbeddingDomain, EmbeddingTable, EntityKind, UrbanKG};
use crate::error::{Error, Result};
use crate::optim::Adam;
use crate::rng::{sub_rng, uniform_vec};
use crate::scalar::{all_finite, dot, Scalar};

#[derive(Clone, Debug, PartialEq)]
pub struct TuckerConfig {
    pub entity_dim: usize,
    pub relation_dim: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Corrupted tails per fact.
    pub negatives: usize,
    pub init_bound: f64,
}

impl Default for TuckerConfig {
    fn default() -> Self {
        TuckerConfig {
            entity_dim: 32,
            relation_dim: 32,
            epochs: 100,
            learning_rate: 0.01,
            batch_size: 32,
            negatives: 5,
            init_bound: 0.05,
        }
    }
}

/// Entity and relation vectors plus a `d_e × d_r × d_e` core tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct TuckerModel<F> {
    pub entity_dim: usize,
    pub relation_dim: usize,
    pub entities: Vec<F>,
    pub relations: Vec<F>,
    /// Row-major `core[i][j][k]` with `i` the head axis and `k` the tail axis.
    pub core: Vec<F>,
}

/// Dense gradient buffers shaped like a [`TuckerModel`].
#[derive(Clone, Debug, PartialEq)]
pub struct TuckerGrad<F> {
    pub entities: Vec<F>,
    pub relations: Vec<F>,
    pub core: Vec<F>,
}

impl<F: Scalar> TuckerGrad<F> {
    pub fn zeros_like(m: &TuckerModel<F>) -> Self {
        TuckerGrad {
            entities: vec![F::zero(); m.entities.len()],
            relations: vec![F::zero(); m.relations.len()],
            core: vec![F::zero(); m.core.len()],
        }
    }

    fn clear(&mut self) {
        for v in [&mut self.entities, &mut self.relations, &mut self.core] {
            v.iter_mut().for_each(|x| *x = F::zero());
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TuckerReport {
    /// Mean one-vs-all cross-entropy over training facts before training.
    pub initial_loss: f64,
    pub final_loss: f64,
    pub hits_at_1: f64,
}

fn softplus<F: Scalar>(x: F) -> F {
    if x > F::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

impl<F: Scalar> TuckerModel<F> {
    pub fn num_entities(&self) -> usize {
        self.entities.len() / self.entity_dim
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len() / self.relation_dim
    }

    pub fn entity(&self, e: usize) -> &[F] {
        &self.entities[e * self.entity_dim..(e + 1) * self.entity_dim]
    }

    pub fn relation(&self, r: usize) -> &[F] {
        &self.relations[r * self.relation_dim..(r + 1) * self.relation_dim]
    }

    fn check(&self, h: usize, r: usize, t: usize) -> Result<()> {
        for (id, n, dom) in [
            (h, self.num_entities(), "entity"),
            (t, self.num_entities(), "entity"),
            (r, self.num_relations(), "relation"),
        ] {
            if id >= n {
                return Err(Error::UnknownId {
                    domain: dom,
                    id: id.to_string(),
                });
            }
        }
        Ok(())
    }

    /// `W ×₁ e_h ×₂ w_r`: the tail-side vector whose dot product with a tail
    /// vector is the logit.
    fn head_relation(&self, h: usize, r: usize) -> Vec<F> {
        let (de, dr) = (self.entity_dim, self.relation_dim);
        let eh = self.entity(h);
        let wr = self.relation(r);
        let mut m = vec![F::zero(); de];
        for i in 0..de {
            for j in 0..dr {
                let c = eh[i] * wr[j];
                let row = &self.core[(i * dr + j) * de..(i * dr + j + 1) * de];
                for k in 0..de {
                    m[k] += c * row[k];
                }
            }
        }
        m
    }

    /// Trilinear logit `W ×₁ e_h ×₂ w_r ×₃ e_t`.
    pub fn score(&self, h: usize, r: usize, t: usize) -> Result<F> {
        self.check(h, r, t)?;
        Ok(dot(&self.head_relation(h, r), self.entity(t)))
    }

    pub fn probability(&self, h: usize, r: usize, t: usize) -> Result<F> {
        self.score(h, r, t).map(crate::scalar::sigmoid)
    }

    /// Logits for every entity as tail.
    pub fn score_tails(&self, h: usize, r: usize) -> Vec<F> {
        let m = self.head_relation(h, r);
        (0..self.num_entities()).map(|t| dot(&m, self.entity(t))).collect()
    }

    /// Fraction of `triples` whose true tail ranks within the top `k` of all
    /// entities. Ties count against the true tail. With `filtered`, other
    /// known true tails of the same `(h, r)` are skipped.
    pub fn hits_at(&self, triples: &[(usize, usize, usize)], k: usize, filtered: bool) -> f64 {
        if triples.is_empty() {
            return 0.0;
        }
        let known: HashSet<(usize, usize, usize)> = triples.iter().copied().collect();
        let hits = triples
            .iter()
            .filter(|&&(h, r, t)| {
                let s = self.score_tails(h, r);
                let better = (0..s.len())
                    .filter(|&e| e != t && s[e] >= s[t])
                    .filter(|&e| !(filtered && known.contains(&(h, r, e))))
                    .count();
                better < k
            })
            .count();
        hits as f64 / triples.len() as f64
    }

    /// Binary cross-entropy of `σ(score(h, r, t))` against labels for each
    /// `(tail, label)` pair; gradients are added into `grad`.
    pub fn accumulate_bce(&self, h: usize, r: usize, samples: &[(usize, bool)], grad: &mut TuckerGrad<F>) -> F {
        let (de, dr) = (self.entity_dim, self.relation_dim);
        let m = self.head_relation(h, r);
        let mut loss = F::zero();
        let mut gm = vec![F::zero(); de];
        for &(t, label) in samples {
            let s = dot(&m, self.entity(t));
            let (l, g) = if label {
                (softplus(-s), crate::scalar::sigmoid(s) - F::one())
            } else {
                (softplus(s), crate::scalar::sigmoid(s))
            };
            loss += l;
            let et = self.entity(t);
            let gt = &mut grad.entities[t * de..(t + 1) * de];
            for k in 0..de {
                gm[k] += g * et[k];
                gt[k] += g * m[k];
            }
        }
        let eh = self.entity(h);
        let wr = self.relation(r);
        for i in 0..de {
            let mut gh = F::zero();
            for j in 0..dr {
                let base = (i * dr + j) * de;
                let row = &self.core[base..base + de];
                let rg = dot(row, &gm);
                gh += wr[j] * rg;
                grad.relations[r * dr + j] += eh[i] * rg;
                let c = eh[i] * wr[j];
                for k in 0..de {
                    grad.core[base + k] += c * gm[k];
                }
            }
            grad.entities[h * de + i] += gh;
        }
        loss
    }

    /// Station rows as the location embedding table.
    pub fn station_table(&self, kg: &UrbanKG) -> Result<EmbeddingTable<F>> {
        let s = kg.count(EntityKind::BaseStation);
        EmbeddingTable::from_flat(EmbeddingDomain::Location, self.entity_dim, self.entities[..s * self.entity_dim].to_vec())
    }
}

/// One-vs-all cross-entropy of one fact: the true tail labelled 1, every
/// other entity 0, averaged over entities.
pub fn tucker_bce<F: Scalar>(model: &TuckerModel<F>, h: usize, r: usize, t: usize, grad: &mut TuckerGrad<F>) -> F {
    let samples: Vec<(usize, bool)> = (0..model.num_entities()).map(|e| (e, e == t)).collect();
    let mut local = TuckerGrad::zeros_like(model);
    let scale = F::one() / F::of_usize(samples.len());
    let loss = model.accumulate_bce(h, r, &samples, &mut local) * scale;
    for (dst, src) in [
        (&mut grad.entities, &local.entities),
        (&mut grad.relations, &local.relations),
        (&mut grad.core, &local.core),
    ] {
        for (d, &s) in dst.iter_mut().zip(src.iter()) {
            *d += s * scale;
        }
    }
    loss
}

fn mean_full_loss<F: Scalar>(model: &TuckerModel<F>, triples: &[(usize, usize, usize)]) -> f64 {
    let mut scratch = TuckerGrad::zeros_like(model);
    let total: f64 = triples
        .iter()
        .map(|&(h, r, t)| {
            let samples: Vec<(usize, bool)> = (0..model.num_entities()).map(|e| (e, e == t)).collect();
            model.accumulate_bce(h, r, &samples, &mut scratch).as_f64() / samples.len() as f64
        })
        .sum();
    total / triples.len() as f64
}

/// Fits TuckER to the graph by mini-batch Adam on binary cross-entropy with
/// uniformly corrupted tails. Returns the model, the station table and a
/// short training report.
pub fn train_tucker<F: Scalar>(kg: &UrbanKG, cfg: &TuckerConfig, seed: u64) -> Result<(TuckerModel<F>, EmbeddingTable<F>, TuckerReport)> {
    let n = kg.num_entities();
    if n < 2 {
        return Err(Error::invalid("kg", "at least two entities are needed to draw negatives"));
    }
    let triples = kg.triples();
    if triples.is_empty() {
        return Err(Error::Empty("knowledge graph facts"));
    }
    if cfg.entity_dim == 0 || cfg.relation_dim == 0 || cfg.batch_size == 0 {
        return Err(Error::invalid("encoders.tucker", "dimensions and batch size must be positive"));
    }
    let (de, dr) = (cfg.entity_dim, cfg.relation_dim);
    let nr = super::Relation::ALL.len();
    let mut rng = sub_rng(seed, "tucker", 0);
    let mut model = TuckerModel {
        entity_dim: de,
        relation_dim: dr,
        entities: uniform_vec(&mut rng, n * de, cfg.init_bound),
        relations: uniform_vec(&mut rng, nr * dr, cfg.init_bound),
        core: uniform_vec(&mut rng, de * dr * de, cfg.init_bound),
    };
    let initial_loss = mean_full_loss(&model, &triples);

    let known: HashSet<(usize, usize, usize)> = triples.iter().copied().collect();
    let mut opt_e = Adam::new(model.entities.len(), cfg.learning_rate);
    let mut opt_r = Adam::new(model.relations.len(), cfg.learning_rate);
    let mut opt_w = Adam::new(model.core.len(), cfg.learning_rate);
    let mut grad = TuckerGrad::zeros_like(&model);
    let mut order = triples.clone();
    let mut samples = Vec::with_capacity(cfg.negatives + 1);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            grad.clear();
            let mut loss = F::zero();
            for &(h, r, t) in batch {
                samples.clear();
                samples.push((t, true));
                for _ in 0..cfg.negatives {
                    // a handful of redraws avoids labelling a true fact as negative
                    let mut c = rng.random_range(0..n);
                    for _ in 0..8 {
                        if !known.contains(&(h, r, c)) {
                            break;
                        }
                        c = rng.random_range(0..n);
                    }
                    if !known.contains(&(h, r, c)) {
                        samples.push((c, false));
                    }
                }
                loss += model.accumulate_bce(h, r, &samples, &mut grad);
            }
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: b,
                    detail: "TuckER loss is not finite".into(),
                });
            }
            let scale = F::one() / F::of_usize(batch.len());
            for v in [&mut grad.entities, &mut grad.relations, &mut grad.core] {
                v.iter_mut().for_each(|g| *g *= scale);
            }
            opt_e.step(&mut model.entities, &grad.entities);
            opt_r.step(&mut model.relations, &grad.relations);
            opt_w.step(&mut model.core, &grad.core);
        }
    }
    if !(all_finite(&model.entities) && all_finite(&model.relations) && all_finite(&model.core)) {
        return Err(Error::NonFinite("TuckER parameters".into()));
    }
    let report = TuckerReport {
        initial_loss,
        final_loss: mean_full_loss(&model, &triples),
        hits_at_1: model.hits_at(&triples, 1, false),
    };
    let table = model.station_table(kg)?;
    Ok((model, table, report))
}
