use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;

use super::UserSequence;
use crate::error::{Error, Result};
use crate::rng;

/// User-level partition of a dataset.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DatasetSplit {
    pub train: Vec<UserSequence>,
    pub validation: Vec<UserSequence>,
    pub test: Vec<UserSequence>,
}

/// Shuffled distinct users, deterministic per seed.
fn shuffled_users(data: &[UserSequence], seed: u64, label: &str) -> Vec<String> {
    let users: BTreeSet<&str> = data.iter().map(|s| s.user_id()).collect();
    let mut users: Vec<String> = users.into_iter().map(str::to_string).collect();
    users.shuffle(&mut rng::sub_rng(seed, label, 0));
    users
}

/// Largest-remainder allocation of `n` users to the three ratios, with every
/// part non-empty.
fn allocate(n: usize, ratios: [f64; 3]) -> [usize; 3] {
    let exact: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
    let mut sizes = [0usize; 3];
    for (s, e) in sizes.iter_mut().zip(&exact) {
        *s = e.floor() as usize;
    }
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    let mut left = n - sizes.iter().sum::<usize>();
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        sizes[i] += 1;
        left -= 1;
    }
    for i in 0..3 {
        if sizes[i] == 0 {
            let donor = (0..3).max_by_key(|&j| (sizes[j], usize::MAX - j)).unwrap();
            sizes[donor] -= 1;
            sizes[i] += 1;
        }
    }
    sizes
}

fn gather(data: &[UserSequence], users: &[String]) -> Vec<UserSequence> {
    let wanted: BTreeSet<&str> = users.iter().map(String::as_str).collect();
    data.iter().filter(|s| wanted.contains(s.user_id())).cloned().collect()
}

/// Partitions users into train/validation/test with the given proportions.
pub fn split_dataset(data: &[UserSequence], ratios: [f64; 3], seed: u64) -> Result<DatasetSplit> {
    if ratios.iter().any(|&r| !r.is_finite() || r <= 0.0) {
        return Err(Error::invalid("split ratios", format!("{ratios:?} must all be positive")));
    }
    let total: f64 = ratios.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::invalid("split ratios", format!("{ratios:?} sum to {total}, not 1")));
    }
    let users = shuffled_users(data, seed, "split");
    if users.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "cannot form three non-empty splits from {} users",
            users.len()
        )));
    }
    let [a, b, _] = allocate(users.len(), ratios);
    Ok(DatasetSplit {
        train: gather(data, &users[..a]),
        validation: gather(data, &users[a..a + b]),
        test: gather(data, &users[a + b..]),
    })
}

/// Splits users into two equal halves (the first gets the extra user when odd).
pub fn split_halves(data: &[UserSequence], seed: u64) -> Result<(Vec<UserSequence>, Vec<UserSequence>)> {
    let users = shuffled_users(data, seed, "halves");
    if users.len() < 2 {
        return Err(Error::InvalidArgument("need at least two users to halve a dataset".into()));
    }
    let mid = users.len().div_ceil(2);
    Ok((gather(data, &users[..mid]), gather(data, &users[mid..])))
}

/// Sequences per user, keyed by user id.
pub(crate) fn by_user(data: &[UserSequence]) -> BTreeMap<&str, Vec<&UserSequence>> {
    let mut m: BTreeMap<&str, Vec<&UserSequence>> = BTreeMap::new();
    for s in data {
        m.entry(s.user_id()).or_default().push(s);
    }
    m
}
