use std::fmt;

use crate::corpus::{Event, UserSequence};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Domain {
    App,
    Category,
}

impl Domain {
    fn id(self, e: &Event) -> Option<usize> {
        match self {
            Domain::App => Some(e.app.index()),
            Domain::Category => e.category.map(|c| c.index()),
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Domain::App => "app",
            Domain::Category => "category",
        })
    }
}

/// Share of each id in the average daily usage of individual users.
#[derive(Clone, Debug, PartialEq)]
pub struct PopularityDistribution<F> {
    pub domain: Domain,
    pub probs: Vec<F>,
}

/// Average daily occurrences per id for every user. A user's days are its
/// sequences (one sequence per user-day).
fn daily_averages(data: &[UserSequence], domain: Domain, universe: usize) -> Result<Vec<Vec<f64>>> {
    let by_user = crate::corpus::split::by_user(data);
    let mut out = Vec::with_capacity(by_user.len());
    for seqs in by_user.values() {
        let mut counts = vec![0.0; universe];
        for e in seqs.iter().flat_map(|s| s.events()) {
            if let Some(id) = domain.id(e) {
                if id >= universe {
                    return Err(Error::UnknownId {
                        domain: "popularity",
                        id: id.to_string(),
                    });
                }
                counts[id] += 1.0;
            }
        }
        let days = seqs.len() as f64;
        out.push(counts.into_iter().map(|c| c / days).collect());
    }
    Ok(out)
}

/// Popularity over the fixed id universe `0..universe`; unseen ids get 0.
pub fn popularity<F: Scalar>(data: &[UserSequence], domain: Domain, universe: usize) -> Result<PopularityDistribution<F>> {
    if data.is_empty() {
        return Err(Error::Empty("popularity of an empty dataset"));
    }
    let mut total = vec![0.0; universe];
    for user in daily_averages(data, domain, universe)? {
        for (t, v) in total.iter_mut().zip(user) {
            *t += v;
        }
    }
    let mass: f64 = total.iter().sum();
    if mass <= 0.0 {
        return Err(Error::Empty("no events carry an id in this domain"));
    }
    Ok(PopularityDistribution {
        domain,
        probs: total.into_iter().map(|v| F::of(v / mass)).collect(),
    })
}

/// Each user's own normalized popularity vector.
pub fn per_user_popularity<F: Scalar>(data: &[UserSequence], domain: Domain, universe: usize) -> Result<Vec<Vec<F>>> {
    if data.is_empty() {
        return Err(Error::Empty("popularity of an empty dataset"));
    }
    Ok(daily_averages(data, domain, universe)?
        .into_iter()
        .filter_map(|v| {
            let mass: f64 = v.iter().sum();
            (mass > 0.0).then(|| v.into_iter().map(|x| F::of(x / mass)).collect())
        })
        .collect())
}
