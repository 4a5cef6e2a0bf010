use std::fmt;

use crate::corpus::{event_count, split_halves, AppId, UserSequence};
use crate::error::{Error, Result};
use crate::metrics::{ranking_metrics, RankingReport};

/// A next-app predictor: fit on sequences, then rank every app given the
/// apps seen so far in the current sequence.
pub trait NextAppPredictor {
    fn name(&self) -> &str;
    /// Replaces any previous fit.
    fn fit(&mut self, train: &[UserSequence], num_apps: usize) -> Result<()>;
    /// All `num_apps` ids, most likely first. `history` is non-empty.
    fn rank(&self, history: &[AppId]) -> Vec<AppId>;
}

fn rank_by(scores: &[f64]) -> Vec<AppId> {
    let mut ids: Vec<usize> = (0..scores.len()).collect();
    ids.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    ids.into_iter().map(|i| AppId(i as u32)).collect()
}

fn check_ids(train: &[UserSequence], num_apps: usize) -> Result<()> {
    match train.iter().flat_map(|s| s.events()).find(|e| e.app.index() >= num_apps) {
        Some(e) => Err(Error::UnknownId {
            domain: "app",
            id: e.app.to_string(),
        }),
        None => Ok(()),
    }
}

/// Ranks apps by overall training frequency, ignoring history.
#[derive(Clone, Debug, Default)]
pub struct FrequencyPredictor {
    ranking: Vec<AppId>,
}

impl NextAppPredictor for FrequencyPredictor {
    fn name(&self) -> &str {
        "frequency"
    }

    fn fit(&mut self, train: &[UserSequence], num_apps: usize) -> Result<()> {
        check_ids(train, num_apps)?;
        let mut counts = vec![0.0; num_apps];
        for e in train.iter().flat_map(|s| s.events()) {
            counts[e.app.index()] += 1.0;
        }
        self.ranking = rank_by(&counts);
        Ok(())
    }

    fn rank(&self, _history: &[AppId]) -> Vec<AppId> {
        self.ranking.clone()
    }
}

/// First-order Markov chain over consecutive apps with add-one smoothing;
/// ties fall back to overall frequency.
#[derive(Clone, Debug, Default)]
pub struct MarkovPredictor {
    num_apps: usize,
    transitions: Vec<f64>,
    frequency: Vec<f64>,
}

impl NextAppPredictor for MarkovPredictor {
    fn name(&self) -> &str {
        "markov"
    }

    fn fit(&mut self, train: &[UserSequence], num_apps: usize) -> Result<()> {
        check_ids(train, num_apps)?;
        self.num_apps = num_apps;
        self.transitions = vec![1.0; num_apps * num_apps];
        self.frequency = vec![0.0; num_apps];
        for s in train {
            let apps = s.apps();
            for a in &apps {
                self.frequency[a.index()] += 1.0;
            }
            for w in apps.windows(2) {
                self.transitions[w[0].index() * num_apps + w[1].index()] += 1.0;
            }
        }
        Ok(())
    }

    fn rank(&self, history: &[AppId]) -> Vec<AppId> {
        let n = self.num_apps;
        let Some(prev) = history.last().filter(|a| a.index() < n) else {
            return rank_by(&self.frequency);
        };
        let row = &self.transitions[prev.index() * n..(prev.index() + 1) * n];
        let mut ids: Vec<usize> = (0..n).collect();
        ids.sort_by(|&a, &b| {
            row[b]
                .total_cmp(&row[a])
                .then(self.frequency[b].total_cmp(&self.frequency[a]))
                .then(a.cmp(&b))
        });
        ids.into_iter().map(|i| AppId(i as u32)).collect()
    }
}

/// Fits `predictor` on `train` and scores it on every position after the
/// first of each test sequence.
pub fn evaluate_predictor(
    predictor: &mut dyn NextAppPredictor,
    train: &[UserSequence],
    test: &[UserSequence],
    num_apps: usize,
    k_values: &[usize],
) -> Result<RankingReport> {
    predictor.fit(train, num_apps)?;
    let mut predictions = Vec::new();
    let mut truth = Vec::new();
    for s in test {
        let apps = s.apps();
        for i in 1..apps.len() {
            let ranking = predictor.rank(&apps[..i]);
            let mut seen = vec![false; num_apps];
            let complete = ranking.len() == num_apps
                && ranking
                    .iter()
                    .all(|a| a.index() < num_apps && !std::mem::replace(&mut seen[a.index()], true));
            if !complete {
                return Err(Error::InvalidArgument(format!(
                    "predictor `{}` returned {} ids instead of a ranking of all {num_apps} apps",
                    predictor.name(),
                    ranking.len()
                )));
            }
            predictions.push(ranking);
            truth.push(apps[i]);
        }
    }
    ranking_metrics(&predictions, &truth, k_values)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Experiment {
    /// Train on real half A, test on real half A′.
    RealToReal,
    /// Train on generated B, test on generated B′.
    GeneratedToGenerated,
    /// Train on A plus B, test on A′.
    Augmented,
}

impl Experiment {
    pub const ALL: [Experiment; 3] = [Experiment::RealToReal, Experiment::GeneratedToGenerated, Experiment::Augmented];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::RealToReal => "exp1",
            Experiment::GeneratedToGenerated => "exp2",
            Experiment::Augmented => "exp3",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DownstreamRow {
    pub experiment: Experiment,
    pub predictor: String,
    pub train_events: usize,
    pub test_events: usize,
    pub report: RankingReport,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DownstreamTable {
    pub rows: Vec<DownstreamRow>,
}

impl DownstreamTable {
    pub fn get(&self, experiment: Experiment, predictor: &str) -> Option<&DownstreamRow> {
        self.rows.iter().find(|r| r.experiment == experiment && r.predictor == predictor)
    }

    /// Tab-separated `experiment, predictor, metric, k, value` rows.
    pub fn to_table(&self) -> String {
        let mut s = String::from("#experiment\tpredictor\tmetric\tk\tvalue\n");
        for r in &self.rows {
            for (metric, k, v) in r.report.rows() {
                s.push_str(&format!("{}\t{}\t{metric}\t{k}\t{v:.6}\n", r.experiment, r.predictor));
            }
        }
        s
    }
}

/// Runs the three train/test experiments. The real corpus is halved by user
/// into A and A′; `generate(A, A′)` must return (B, B′), corpora generated
/// along the trajectories of A and A′ by a model fitted on A only.
pub fn downstream_protocol<G>(
    real: &[UserSequence],
    split_seed: u64,
    predictors: &mut [Box<dyn NextAppPredictor>],
    k_values: &[usize],
    generate: G,
) -> Result<DownstreamTable>
where
    G: FnOnce(&[UserSequence], &[UserSequence]) -> Result<(Vec<UserSequence>, Vec<UserSequence>)>,
{
    let (a, a_prime) = split_halves(real, split_seed)?;
    let (b, b_prime) = generate(&a, &a_prime)?;
    let num_apps = [&a, &a_prime, &b, &b_prime]
        .iter()
        .flat_map(|d| d.iter().flat_map(|s| s.events()))
        .map(|e| e.app.index() + 1)
        .max()
        .ok_or(Error::Empty("downstream corpora"))?;
    let augmented: Vec<UserSequence> = a.iter().chain(&b).cloned().collect();
    let mut table = DownstreamTable::default();
    for exp in Experiment::ALL {
        let (train, test) = match exp {
            Experiment::RealToReal => (&a, &a_prime),
            Experiment::GeneratedToGenerated => (&b, &b_prime),
            Experiment::Augmented => (&augmented, &a_prime),
        };
        for p in predictors.iter_mut() {
            let report = evaluate_predictor(p.as_mut(), train, test, num_apps, k_values)?;
            table.rows.push(DownstreamRow {
                experiment: exp,
                predictor: p.name().to_string(),
                train_events: event_count(train),
                test_events: event_count(test),
                report,
            });
        }
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Event, StationId};

    fn seq(user: &str, apps: &[u32]) -> UserSequence {
        UserSequence::new(
            user,
            apps.iter()
                .enumerate()
                .map(|(i, &a)| Event {
                    timestamp: i as i64 * 60,
                    location: StationId(0),
                    app: AppId(a),
                    category: None,
                })
                .collect(),
        )
        .unwrap()
    }

    fn cycle_world(users: usize) -> Vec<UserSequence> {
        (0..users)
            .map(|u| seq(&format!("u{u}"), &(0..30).map(|i| ((i + u) % 3) as u32).collect::<Vec<_>>()))
            .collect()
    }

    #[test]
    fn markov_predicts_a_deterministic_cycle() {
        let data = cycle_world(6);
        let (a, a2) = split_halves(&data, 1).unwrap();
        let r = evaluate_predictor(&mut MarkovPredictor::default(), &a, &a2, 3, &[1]).unwrap();
        assert_eq!(r.acc_at(1), Some(1.0));
    }

    #[test]
    fn markov_smoothing_ranks_unseen_by_frequency() {
        let mut m = MarkovPredictor::default();
        m.fit(&[seq("u", &[0, 1, 2, 2, 2])], 4).unwrap();
        // from 0: 1 seen once, others tied at the prior; 2 is most frequent
        assert_eq!(m.rank(&[AppId(0)]), vec![AppId(1), AppId(2), AppId(0), AppId(3)]);
    }

    #[test]
    fn frequency_ranks_by_count_then_id() {
        let mut f = FrequencyPredictor::default();
        f.fit(&[seq("u", &[2, 2, 1, 0, 1])], 4).unwrap();
        assert_eq!(f.rank(&[]), vec![AppId(1), AppId(2), AppId(0), AppId(3)]);
    }

    struct Broken;

    impl NextAppPredictor for Broken {
        fn name(&self) -> &str {
            "broken"
        }

        fn fit(&mut self, _: &[UserSequence], _: usize) -> Result<()> {
            Ok(())
        }

        fn rank(&self, _: &[AppId]) -> Vec<AppId> {
            vec![AppId(0), AppId(0)]
        }
    }

    #[test]
    fn incomplete_ranking_is_an_error() {
        let data = cycle_world(2);
        assert!(evaluate_predictor(&mut Broken, &data, &data, 2, &[1]).is_err());
    }

    #[test]
    fn protocol_wiring() {
        let data = cycle_world(8);
        let mut preds: Vec<Box<dyn NextAppPredictor>> = vec![Box::new(FrequencyPredictor::default()), Box::new(MarkovPredictor::default())];
        // "generation" copies the trajectories' own apps
        let table = downstream_protocol(&data, 5, &mut preds, &[1, 3], |a, a2| Ok((a.to_vec(), a2.to_vec()))).unwrap();
        assert_eq!(table.rows.len(), 6);
        let e1 = table.get(Experiment::RealToReal, "markov").unwrap();
        let e3 = table.get(Experiment::Augmented, "markov").unwrap();
        assert_eq!(e3.train_events, 2 * e1.train_events);
        assert_eq!(e3.test_events, e1.test_events);
        assert_eq!(e1.report.acc_at(1), Some(1.0));
        assert!(table.to_table().contains("exp2\tfrequency\tacc\t3\t1.000000"));
    }
}
