//! Spatio-temporal app-usage data model, synthetic world generation,
//! record-file IO and user-level dataset splitting.

mod io;
pub(crate) mod split;
mod time;
mod world;

pub use io::{format_records, parse_records, read_dataset, read_dataset_with_meta, write_dataset, write_dataset_with_meta, RecordMeta};
pub use split::{split_dataset, split_halves, DatasetSplit};
pub use time::{half_hour_bin, TimeBin, TimeZone, BINS_PER_DAY, SECONDS_PER_BIN};
pub use world::{generate_world, Geography, PlantedRule, Poi, Station, World, WorldSpec};

use std::collections::BTreeSet;
use std::fmt;

use crate::error::{Error, Result};

macro_rules! id_type {
    ($(#[$m:meta])* $name:ident) => {
        $(#[$m])*
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
        pub struct $name(pub u32);

        impl $name {
            #[inline]
            pub fn index(self) -> usize {
                self.0 as usize
            }
        }

        impl From<usize> for $name {
            fn from(i: usize) -> Self {
                $name(i as u32)
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                self.0.fmt(f)
            }
        }
    };
}

id_type!(
    /// App identifier in `[0, N)`.
    AppId
);
id_type!(
    /// Base-station identifier; the location unit of trajectories.
    StationId
);
id_type!(CategoryId);

/// One app-usage event of a user; the user is held by the enclosing sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Event {
    /// Seconds since the Unix epoch (UTC).
    pub timestamp: i64,
    pub location: StationId,
    pub app: AppId,
    pub category: Option<CategoryId>,
}

/// A flattened `(user, event)` row as stored in record files.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UsageRecord {
    pub user_id: String,
    pub timestamp: i64,
    pub location_id: StationId,
    pub app_id: AppId,
    pub category_id: Option<CategoryId>,
}

/// A trajectory point `(t, l)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TrajectoryPoint {
    pub timestamp: i64,
    pub location: StationId,
}

/// Time-ordered usage events of a single user (one user-day by default).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UserSequence {
    user_id: String,
    events: Vec<Event>,
}

impl UserSequence {
    pub fn new(user_id: impl Into<String>, events: Vec<Event>) -> Result<Self> {
        let user_id = user_id.into();
        if events.is_empty() {
            return Err(Error::Empty("user sequence has no events"));
        }
        if let Some(w) = events.windows(2).position(|w| w[1].timestamp < w[0].timestamp) {
            return Err(Error::InvalidArgument(format!(
                "events of user {user_id} are not time-ordered at index {}",
                w + 1
            )));
        }
        if let Some(e) = events.iter().find(|e| e.timestamp < 0) {
            return Err(Error::InvalidArgument(format!("negative timestamp {}", e.timestamp)));
        }
        Ok(UserSequence { user_id, events })
    }

    pub fn user_id(&self) -> &str {
        &self.user_id
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// The app sequence `A_u`.
    pub fn apps(&self) -> Vec<AppId> {
        self.events.iter().map(|e| e.app).collect()
    }

    /// The trajectory `S_u`.
    pub fn trajectory(&self) -> Vec<TrajectoryPoint> {
        self.events
            .iter()
            .map(|e| TrajectoryPoint {
                timestamp: e.timestamp,
                location: e.location,
            })
            .collect()
    }

    /// Same trajectory and user with the apps replaced.
    pub fn with_apps(&self, apps: &[AppId], categories: &[Option<CategoryId>]) -> Result<Self> {
        if apps.len() != self.events.len() {
            return Err(Error::DimensionMismatch {
                what: "generated app sequence",
                expected: self.events.len(),
                got: apps.len(),
            });
        }
        let events = self
            .events
            .iter()
            .zip(apps)
            .map(|(e, &app)| Event {
                app,
                category: categories.get(app.index()).copied().flatten(),
                ..*e
            })
            .collect();
        Ok(UserSequence {
            user_id: self.user_id.clone(),
            events,
        })
    }

    pub fn records(&self) -> impl Iterator<Item = UsageRecord> + '_ {
        self.events.iter().map(move |e| UsageRecord {
            user_id: self.user_id.clone(),
            timestamp: e.timestamp,
            location_id: e.location,
            app_id: e.app,
            category_id: e.category,
        })
    }
}

/// Distinct user ids in `data`, sorted.
pub fn user_ids(data: &[UserSequence]) -> BTreeSet<&str> {
    data.iter().map(|s| s.user_id()).collect()
}

/// Number of distinct apps needed to cover every id in `data`.
pub fn app_universe(data: &[UserSequence]) -> usize {
    data.iter().flat_map(|s| s.events()).map(|e| e.app.index() + 1).max().unwrap_or(0)
}

pub fn event_count(data: &[UserSequence]) -> usize {
    data.iter().map(UserSequence::len).sum()
}
