//! Top-k metrics for next-app prediction with a single true app per event.
//!
//! `Recall@k` is macro-averaged over the apps that occur as truth, and
//! `F1@k` is the harmonic mean of `Acc@k` and `Recall@k`.

use std::collections::BTreeMap;

use crate::corpus::AppId;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct RankingReport {
    pub k_values: Vec<usize>,
    pub acc: Vec<f64>,
    pub mrr: Vec<f64>,
    pub ndcg: Vec<f64>,
    pub recall: Vec<f64>,
    pub f1: Vec<f64>,
}

impl RankingReport {
    fn at(&self, series: &[f64], k: usize) -> Option<f64> {
        self.k_values.iter().position(|&x| x == k).map(|i| series[i])
    }

    pub fn acc_at(&self, k: usize) -> Option<f64> {
        self.at(&self.acc, k)
    }

    pub fn mrr_at(&self, k: usize) -> Option<f64> {
        self.at(&self.mrr, k)
    }

    pub fn ndcg_at(&self, k: usize) -> Option<f64> {
        self.at(&self.ndcg, k)
    }

    /// `(name, k, value)` rows in a fixed order.
    pub fn rows(&self) -> Vec<(&'static str, usize, f64)> {
        let mut out = Vec::new();
        for (name, series) in [
            ("acc", &self.acc),
            ("mrr", &self.mrr),
            ("ndcg", &self.ndcg),
            ("recall", &self.recall),
            ("f1", &self.f1),
        ] {
            for (&k, &v) in self.k_values.iter().zip(series.iter()) {
                out.push((name, k, v));
            }
        }
        out
    }
}

pub fn ranking_metrics(predictions: &[Vec<AppId>], truth: &[AppId], k_values: &[usize]) -> Result<RankingReport> {
    if predictions.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            what: "predictions vs truth",
            expected: truth.len(),
            got: predictions.len(),
        });
    }
    if truth.is_empty() {
        return Err(Error::Empty("ranking metrics need at least one event"));
    }
    if k_values.contains(&0) {
        return Err(Error::InvalidArgument("k must be positive".into()));
    }
    // 1-based rank of the truth, if present
    let ranks: Vec<Option<usize>> = predictions
        .iter()
        .zip(truth)
        .map(|(p, t)| p.iter().position(|a| a == t).map(|r| r + 1))
        .collect();
    let n = truth.len() as f64;
    let mut report = RankingReport {
        k_values: k_values.to_vec(),
        acc: vec![],
        mrr: vec![],
        ndcg: vec![],
        recall: vec![],
        f1: vec![],
    };
    for &k in k_values {
        let mut hits = 0.0;
        let mut rr = 0.0;
        let mut dcg = 0.0;
        let mut per_app: BTreeMap<AppId, (f64, f64)> = BTreeMap::new();
        for (rank, t) in ranks.iter().zip(truth) {
            let entry = per_app.entry(*t).or_default();
            entry.1 += 1.0;
            if let Some(r) = rank.filter(|&r| r <= k) {
                hits += 1.0;
                rr += 1.0 / r as f64;
                dcg += 1.0 / ((r + 1) as f64).log2();
                entry.0 += 1.0;
            }
        }
        let acc = hits / n;
        let recall = per_app.values().map(|(h, c)| h / c).sum::<f64>() / per_app.len() as f64;
        report.acc.push(acc);
        report.mrr.push(rr / n);
        report.ndcg.push(dcg / n);
        report.recall.push(recall);
        report.f1.push(if acc + recall > 0.0 { 2.0 * acc * recall / (acc + recall) } else { 0.0 });
    }
    Ok(report)
}
