//! Generated-vs-real comparison report.
//!
//! RMSE, MAE, M-TV and CRPS are computed on popularity values expressed in
//! percent (×100); JSD and Spearman on the unscaled distributions. CRPS is
//! evaluated per id, using the generated corpus's per-user popularity
//! values as the ensemble and the real corpus's aggregate popularity as
//! the observation, then averaged over ids.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::{crps, jsd, m_tv, mae, per_user_popularity, popularity, rmse, spearmanr, Domain};
use crate::corpus::UserSequence;
use crate::error::Result;

pub const PERCENT: f64 = 100.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricSet {
    pub rmse: f64,
    pub mae: f64,
    pub jsd: f64,
    pub crps: f64,
    pub m_tv: f64,
    /// `None` when either distribution is constant.
    pub spearman: Option<f64>,
}

impl MetricSet {
    pub fn compute(real: &[UserSequence], generated: &[UserSequence], domain: Domain, universe: usize) -> Result<Self> {
        let p = popularity::<f64>(real, domain, universe)?.probs;
        let q = popularity::<f64>(generated, domain, universe)?.probs;
        let pct = |v: &[f64]| v.iter().map(|x| x * PERCENT).collect::<Vec<_>>();
        let (pp, qp) = (pct(&p), pct(&q));

        let users = per_user_popularity::<f64>(generated, domain, universe)?;
        let mut crps_sum = 0.0;
        for id in 0..universe {
            let ensemble: Vec<f64> = users.iter().map(|u| u[id] * PERCENT).collect();
            crps_sum += crps(&ensemble, pp[id])?;
        }

        Ok(MetricSet {
            rmse: rmse(&pp, &qp)?,
            mae: mae(&pp, &qp)?,
            jsd: jsd(&p, &q)?,
            crps: crps_sum / universe as f64,
            m_tv: m_tv(&pp, &qp)?,
            spearman: spearmanr(&p, &q).ok(),
        })
    }

    fn entries(&self) -> [(&'static str, Option<f64>); 6] {
        [
            ("rmse", Some(self.rmse)),
            ("mae", Some(self.mae)),
            ("jsd", Some(self.jsd)),
            ("crps", Some(self.crps)),
            ("m_tv", Some(self.m_tv)),
            ("spearmanr", self.spearman),
        ]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricEntry {
    pub metric: String,
    pub domain: String,
    pub value: f64,
}

/// Metric values plus free-form key-value sections for one comparison.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalReport {
    pub config_hash: Option<String>,
    pub entries: Vec<MetricEntry>,
    pub extras: BTreeMap<String, String>,
}

impl EvalReport {
    pub fn push(&mut self, metric: impl Into<String>, domain: impl Into<String>, value: f64) {
        self.entries.push(MetricEntry {
            metric: metric.into(),
            domain: domain.into(),
            value,
        });
    }

    pub fn get(&self, metric: &str, domain: &str) -> Option<f64> {
        self.entries.iter().find(|e| e.metric == metric && e.domain == domain).map(|e| e.value)
    }

    /// `metric<TAB>domain<TAB>value`, one metric per line.
    pub fn to_table(&self) -> String {
        let mut out = String::from("#metric\tdomain\tvalue\n");
        if let Some(h) = &self.config_hash {
            let _ = writeln!(out, "#config:{h}");
        }
        for e in &self.entries {
            let _ = writeln!(out, "{}\t{}\t{:.8}", e.metric, e.domain, e.value);
        }
        out
    }

    /// `key = value` lines, metrics first as `<domain>.<metric>`.
    pub fn to_key_value(&self) -> String {
        let mut out = String::new();
        if let Some(h) = &self.config_hash {
            let _ = writeln!(out, "config_hash = {h}");
        }
        for e in &self.entries {
            let _ = writeln!(out, "{}.{} = {:.8}", e.domain, e.metric, e.value);
        }
        for (k, v) in &self.extras {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}

/// Compares the app and (when `num_categories > 0`) category popularity of
/// two corpora.
pub fn evaluate(real: &[UserSequence], generated: &[UserSequence], num_apps: usize, num_categories: usize) -> Result<EvalReport> {
    let mut report = EvalReport::default();
    let mut domains = vec![(Domain::App, num_apps)];
    if num_categories > 0 {
        domains.push((Domain::Category, num_categories));
    }
    for (domain, universe) in domains {
        let set = MetricSet::compute(real, generated, domain, universe)?;
        for (name, value) in set.entries() {
            if let Some(v) = value {
                report.push(name, domain.to_string(), v);
            }
        }
    }
    Ok(report)
}
