use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;

use crate::corpus::{StationId, TimeZone, UserSequence};
use crate::error::{Error, Result};
use crate::rng::sub_rng;

const MAX_ITER: usize = 100;
const RESTARTS: usize = 10;

/// A K-means partition with its within-cluster sum of squares.
#[derive(Clone, Debug, PartialEq)]
pub struct KMeans {
    pub labels: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(p, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn plus_plus_init<R: Rng>(points: &[Vec<f64>], k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    while centroids.len() < k {
        let d: Vec<f64> = points.iter().map(|p| nearest(p, &centroids).1).collect();
        let total: f64 = d.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut idx = points.len() - 1;
            for (i, &w) in d.iter().enumerate() {
                if u < w {
                    idx = i;
                    break;
                }
                u -= w;
            }
            idx
        } else {
            rng.random_range(0..points.len())
        };
        centroids.push(points[pick].clone());
    }
    centroids
}

fn lloyd(points: &[Vec<f64>], mut centroids: Vec<Vec<f64>>) -> KMeans {
    let k = centroids.len();
    let dim = points[0].len();
    let mut labels = vec![usize::MAX; points.len()];
    for _ in 0..MAX_ITER {
        let mut changed = false;
        for (p, l) in points.iter().zip(labels.iter_mut()) {
            let (j, _) = nearest(p, &centroids);
            if *l != j {
                *l = j;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for (s, x) in sums[l].iter_mut().zip(p) {
                *s += x;
            }
        }
        for j in 0..k {
            if counts[j] > 0 {
                centroids[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            } else {
                // reseat an empty cluster on the point farthest from its centroid
                let far = (0..points.len())
                    .max_by(|&a, &b| sq_dist(&points[a], &centroids[labels[a]]).total_cmp(&sq_dist(&points[b], &centroids[labels[b]])))
                    .expect("non-empty");
                centroids[j] = points[far].clone();
                labels[far] = j;
            }
        }
    }
    for (p, l) in points.iter().zip(labels.iter_mut()) {
        *l = nearest(p, &centroids).0;
    }
    let inertia = points.iter().zip(&labels).map(|(p, &l)| sq_dist(p, &centroids[l])).sum();
    KMeans { labels, centroids, inertia }
}

/// K-means with k-means++ seeding, keeping the restart with the lowest
/// inertia. Deterministic for a given `seed`.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> Result<KMeans> {
    if k == 0 {
        return Err(Error::invalid("analysis.k_clusters", "must be positive"));
    }
    if k > points.len() {
        return Err(Error::invalid(
            "analysis.k_clusters",
            format!("{k} clusters requested for {} points", points.len()),
        ));
    }
    let dim = points[0].len();
    if let Some(p) = points.iter().find(|p| p.len() != dim) {
        return Err(Error::DimensionMismatch {
            what: "k-means point",
            expected: dim,
            got: p.len(),
        });
    }
    let mut best: Option<KMeans> = None;
    for r in 0..RESTARTS {
        let mut rng = sub_rng(seed, "kmeans", r as u64);
        let run = lloyd(points, plus_plus_init(points, k, &mut rng));
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn choose2(n: usize) -> f64 {
    n as f64 * (n as f64 - 1.0) / 2.0
}

/// Adjusted Rand index between two labelings of the same items. Returns 1
/// when both are the same trivial partition.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            what: "partition lengths",
            expected: a.len(),
            got: b.len(),
        });
    }
    if a.is_empty() {
        return Err(Error::Empty("adjusted rand index needs labels"));
    }
    let mut table: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut rows: BTreeMap<usize, usize> = BTreeMap::new();
    let mut cols: BTreeMap<usize, usize> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    let index: f64 = table.values().map(|&n| choose2(n)).sum();
    let sa: f64 = rows.values().map(|&n| choose2(n)).sum();
    let sb: f64 = cols.values().map(|&n| choose2(n)).sum();
    let expected = sa * sb / choose2(a.len()).max(1.0);
    let max = 0.5 * (sa + sb);
    if max == expected {
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}

/// One row per station in `stations`: its events' share in every
/// (hour of day, app) cell, flattened hour-major.
pub fn location_features(data: &[UserSequence], stations: &[StationId], num_apps: usize, tz: TimeZone) -> Vec<Vec<f64>> {
    let pos: BTreeMap<StationId, usize> = stations.iter().enumerate().map(|(i, &s)| (s, i)).collect();
    let mut rows = vec![vec![0.0; 24 * num_apps]; stations.len()];
    let mut totals = vec![0usize; stations.len()];
    for e in data.iter().flat_map(|s| s.events()) {
        if let Some(&i) = pos.get(&e.location) {
            if e.app.index() < num_apps {
                rows[i][tz.hour(e.timestamp) * num_apps + e.app.index()] += 1.0;
                totals[i] += 1;
            }
        }
    }
    for (row, &n) in rows.iter_mut().zip(&totals) {
        if n > 0 {
            row.iter_mut().for_each(|v| *v /= n as f64);
        }
    }
    rows
}

fn stations_of(data: &[UserSequence]) -> BTreeSet<StationId> {
    data.iter().flat_map(|s| s.events()).map(|e| e.location).collect()
}

/// Clusters stations by their usage profile separately in the real and the
/// generated corpus and returns the adjusted Rand index of the partitions.
pub fn location_cluster_agreement(real: &[UserSequence], generated: &[UserSequence], k: usize, seed: u64, tz: TimeZone) -> Result<f64> {
    let stations = stations_of(real);
    if stations != stations_of(generated) {
        return Err(Error::InvalidArgument("real and generated corpora visit different stations".into()));
    }
    let stations: Vec<StationId> = stations.into_iter().collect();
    if k > stations.len() {
        return Err(Error::invalid(
            "analysis.k_clusters",
            format!("{k} clusters requested for {} stations", stations.len()),
        ));
    }
    let num_apps = real
        .iter()
        .chain(generated)
        .flat_map(|s| s.events())
        .map(|e| e.app.index() + 1)
        .max()
        .unwrap_or(0);
    let a = kmeans(&location_features(real, &stations, num_apps, tz), k, seed)?;
    let b = kmeans(&location_features(generated, &stations, num_apps, tz), k, seed)?;
    adjusted_rand_index(&a.labels, &b.labels)
}
