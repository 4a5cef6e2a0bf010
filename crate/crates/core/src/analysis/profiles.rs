use std::collections::BTreeMap;

use crate::corpus::{AppId, TimeZone, UserSequence};
use crate::metrics::Domain;

/// Share of an id's events falling in each local hour of the day.
#[derive(Clone, Debug, PartialEq)]
pub struct HourlyProfile {
    pub id: usize,
    pub events: usize,
    pub probs: [f64; 24],
}

impl HourlyProfile {
    fn from_counts(id: usize, counts: [usize; 24]) -> Self {
        let events: usize = counts.iter().sum();
        let mut probs = [0.0; 24];
        if events > 0 {
            for (p, &c) in probs.iter_mut().zip(&counts) {
                *p = c as f64 / events as f64;
            }
        }
        HourlyProfile { id, events, probs }
    }
}

/// Profiles for every category (or app) with at least one event. Events
/// without a category are skipped in the category domain.
pub fn hourly_profiles(data: &[UserSequence], domain: Domain, tz: TimeZone) -> BTreeMap<usize, HourlyProfile> {
    let mut counts: BTreeMap<usize, [usize; 24]> = BTreeMap::new();
    for e in data.iter().flat_map(|s| s.events()) {
        let id = match domain {
            Domain::App => Some(e.app.index()),
            Domain::Category => e.category.map(|c| c.index()),
        };
        if let Some(id) = id {
            counts.entry(id).or_insert([0; 24])[tz.hour(e.timestamp)] += 1;
        }
    }
    counts.into_iter().map(|(id, c)| (id, HourlyProfile::from_counts(id, c))).collect()
}

/// Profile of a single app; all zeros when it never occurs.
pub fn app_hourly_profile(data: &[UserSequence], app: AppId, tz: TimeZone) -> HourlyProfile {
    let mut counts = [0usize; 24];
    for e in data.iter().flat_map(|s| s.events()).filter(|e| e.app == app) {
        counts[tz.hour(e.timestamp)] += 1;
    }
    HourlyProfile::from_counts(app.index(), counts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{CategoryId, Event, StationId};

    fn seq(events: &[(i64, u32, Option<u32>)]) -> UserSequence {
        UserSequence::new(
            "u",
            events
                .iter()
                .map(|&(ts, app, cat)| Event {
                    timestamp: ts,
                    location: StationId(0),
                    app: AppId(app),
                    category: cat.map(CategoryId),
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn point_mass_at_hour_nine() {
        let d = vec![seq(&[(9 * 3600, 0, Some(0)), (9 * 3600 + 100, 1, Some(0))])];
        let p = hourly_profiles(&d, Domain::Category, TimeZone::UTC);
        assert_eq!(p[&0].probs[9], 1.0);
        assert_eq!(p[&0].probs.iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn hand_tally_with_timezone() {
        // hours (UTC): 1, 1, 5, 23; with +2h: 3, 3, 7, 1
        let d = vec![seq(&[
            (3600, 0, Some(1)),
            (3700, 0, Some(1)),
            (5 * 3600, 1, Some(1)),
            (23 * 3600, 0, None),
        ])];
        let tz = TimeZone::new(7200).unwrap();
        let cats = hourly_profiles(&d, Domain::Category, tz);
        assert_eq!(cats.len(), 1);
        assert!((cats[&1].probs[3] - 2.0 / 3.0).abs() < 1e-15);
        assert!((cats[&1].probs[7] - 1.0 / 3.0).abs() < 1e-15);
        let app0 = app_hourly_profile(&d, AppId(0), tz);
        assert_eq!(app0.events, 3);
        assert!((app0.probs[1] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(app_hourly_profile(&d, AppId(9), tz).events, 0);
    }

    #[test]
    fn uniform_hours_give_uniform_profile() {
        let events: Vec<(i64, u32, Option<u32>)> = (0..24).map(|h| (h * 3600 + 10, 0, Some(0))).collect();
        let p = hourly_profiles(&[seq(&events)], Domain::App, TimeZone::UTC);
        assert!(p[&0].probs.iter().all(|&x| (x - 1.0 / 24.0).abs() < 1e-15));
    }
}
