//! Deterministic synthetic worlds with planted, recoverable usage patterns.
//!
//! A world is a geography (stations grouped into regions and business
//! areas, POIs, station adjacency) plus a population of users whose daily
//! sessions are placed by a diurnal activity curve. Each event's app is
//! drawn from the user's preference vector reweighted by the planted
//! time/place affinities; sequential rules and co-usage cliques override
//! the draw.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Geometric, Poisson};

use super::{AppId, CategoryId, Event, StationId, TimeZone, UserSequence, BINS_PER_DAY};
use crate::error::{Error, Result};
use crate::rng::{self, SeededRng};

/// A known ground-truth pattern injected into the generated corpus.
#[derive(Clone, Debug, PartialEq)]
pub enum PlantedRule {
    /// `app` is `weight` times more likely in `bins` than elsewhere.
    TimeAffinity { app: AppId, bins: Vec<usize>, weight: f64 },
    /// `app` is `weight` times more likely at stations of `region`.
    PlaceAffinity { app: AppId, region: usize, weight: f64 },
    /// After `from`, the next event of the sequence is `to` with probability `p`.
    Sequential { from: AppId, to: AppId, p: f64 },
    /// A session opens with all of `apps` (in random order) with probability `p`.
    CoUsage { apps: Vec<AppId>, p: f64 },
}

fn join<T: fmt::Display>(xs: &[T]) -> String {
    xs.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

impl fmt::Display for PlantedRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PlantedRule::TimeAffinity { app, bins, weight } => {
                write!(f, "time app={app} bins={} weight={weight}", join(bins))
            }
            PlantedRule::PlaceAffinity { app, region, weight } => {
                write!(f, "place app={app} region={region} weight={weight}")
            }
            PlantedRule::Sequential { from, to, p } => write!(f, "seq from={from} to={to} p={p}"),
            PlantedRule::CoUsage { apps, p } => write!(f, "clique apps={} p={p}", join(apps)),
        }
    }
}

fn parse_list(s: &str, field: &str) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for part in s.split(',').filter(|p| !p.is_empty()) {
        if let Some((a, b)) = part.split_once('-') {
            let a: usize = a.trim().parse().map_err(|_| Error::invalid(field, part))?;
            let b: usize = b.trim().parse().map_err(|_| Error::invalid(field, part))?;
            if b < a {
                return Err(Error::invalid(field, format!("empty range {part}")));
            }
            out.extend(a..=b);
        } else {
            out.push(part.trim().parse().map_err(|_| Error::invalid(field, part))?);
        }
    }
    Ok(out)
}

impl FromStr for PlantedRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut words = s.split_whitespace();
        let kind = words.next().ok_or_else(|| Error::invalid("rule", "empty rule"))?;
        let mut kv = std::collections::BTreeMap::new();
        for w in words {
            let (k, v) = w
                .split_once('=')
                .ok_or_else(|| Error::invalid("rule", format!("`{w}` is not key=value")))?;
            kv.insert(k, v);
        }
        let take = |key: &str| -> Result<&str> {
            kv.get(key)
                .copied()
                .ok_or_else(|| Error::invalid(format!("rule.{key}"), format!("missing in `{s}`")))
        };
        let num = |key: &str| -> Result<f64> {
            take(key)?
                .parse::<f64>()
                .map_err(|_| Error::invalid(format!("rule.{key}"), format!("not a number in `{s}`")))
        };
        let id = |key: &str| -> Result<u32> {
            take(key)?
                .parse::<u32>()
                .map_err(|_| Error::invalid(format!("rule.{key}"), format!("not an id in `{s}`")))
        };
        let allowed: &[&str] = match kind {
            "time" => &["app", "bins", "weight"],
            "place" => &["app", "region", "weight"],
            "seq" => &["from", "to", "p"],
            "clique" => &["apps", "p"],
            other => return Err(Error::invalid("rule", format!("unknown rule kind `{other}`"))),
        };
        if let Some(k) = kv.keys().find(|k| !allowed.contains(k)) {
            return Err(Error::UnknownField(format!("rule.{k}")));
        }
        Ok(match kind {
            "time" => PlantedRule::TimeAffinity {
                app: AppId(id("app")?),
                bins: parse_list(take("bins")?, "rule.bins")?,
                weight: num("weight")?,
            },
            "place" => PlantedRule::PlaceAffinity {
                app: AppId(id("app")?),
                region: id("region")? as usize,
                weight: num("weight")?,
            },
            "seq" => PlantedRule::Sequential {
                from: AppId(id("from")?),
                to: AppId(id("to")?),
                p: num("p")?,
            },
            _ => PlantedRule::CoUsage {
                apps: parse_list(take("apps")?, "rule.apps")?.into_iter().map(AppId::from).collect(),
                p: num("p")?,
            },
        })
    }
}

/// Parameters of a synthetic world.
#[derive(Clone, Debug, PartialEq)]
pub struct WorldSpec {
    pub seed: u64,
    pub num_users: usize,
    pub num_apps: usize,
    pub num_stations: usize,
    pub num_regions: usize,
    pub num_business_areas: usize,
    pub num_pois: usize,
    pub num_categories: usize,
    pub horizon_days: usize,
    /// Midnight (local) of the first simulated day, seconds since the epoch.
    pub start_epoch: i64,
    pub timezone: TimeZone,
    /// Mean number of usage sessions per user-day (Poisson).
    pub sessions_per_day: f64,
    /// Mean number of events per session (shifted geometric).
    pub events_per_session: f64,
    /// Zipf exponent of the global app popularity; app 0 is the most popular.
    pub popularity_exponent: f64,
    /// Log-normal spread of per-user app preferences.
    pub preference_spread: f64,
    pub planted_rules: Vec<PlantedRule>,
}

impl Default for WorldSpec {
    fn default() -> Self {
        WorldSpec {
            seed: 42,
            num_users: 200,
            num_apps: 50,
            num_stations: 30,
            num_regions: 5,
            num_business_areas: 8,
            num_pois: 60,
            num_categories: 10,
            horizon_days: 7,
            start_epoch: 1_461_024_000,
            timezone: TimeZone::UTC,
            sessions_per_day: 8.0,
            events_per_session: 4.0,
            popularity_exponent: 1.0,
            preference_spread: 0.5,
            planted_rules: Vec::new(),
        }
    }
}

impl WorldSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("num_users", self.num_users),
            ("num_apps", self.num_apps),
            ("num_stations", self.num_stations),
            ("num_regions", self.num_regions),
            ("num_business_areas", self.num_business_areas),
            ("num_categories", self.num_categories),
            ("horizon_days", self.horizon_days),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(Error::invalid(field, "must be at least 1"));
            }
        }
        if self.num_categories > self.num_apps {
            return Err(Error::invalid(
                "num_categories",
                format!("{} categories cannot be covered by {} apps", self.num_categories, self.num_apps),
            ));
        }
        if self.start_epoch < 86_400 {
            return Err(Error::invalid("start_epoch", "must be at least one day after the epoch"));
        }
        let reals = [
            ("sessions_per_day", self.sessions_per_day, 0.0),
            ("events_per_session", self.events_per_session, 1.0),
            ("popularity_exponent", self.popularity_exponent, 0.0),
            ("preference_spread", self.preference_spread, 0.0),
        ];
        for (field, v, min) in reals {
            if !v.is_finite() || v < min {
                return Err(Error::invalid(field, format!("{v} must be finite and >= {min}")));
            }
        }
        let app_ok = |field: &str, a: AppId| -> Result<()> {
            if a.index() >= self.num_apps {
                return Err(Error::invalid(field, format!("app {a} >= num_apps {}", self.num_apps)));
            }
            Ok(())
        };
        let prob_ok = |p: f64| -> Result<()> {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid("rule.p", format!("probability {p} outside [0,1]")));
            }
            Ok(())
        };
        let weight_ok = |w: f64| -> Result<()> {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::invalid("rule.weight", format!("{w} must be finite and >= 0")));
            }
            Ok(())
        };
        for rule in &self.planted_rules {
            match rule {
                PlantedRule::TimeAffinity { app, bins, weight } => {
                    app_ok("rule.app", *app)?;
                    weight_ok(*weight)?;
                    if bins.is_empty() || bins.iter().any(|&b| b >= BINS_PER_DAY) {
                        return Err(Error::invalid("rule.bins", format!("{bins:?} must be non-empty within [0,48)")));
                    }
                }
                PlantedRule::PlaceAffinity { app, region, weight } => {
                    app_ok("rule.app", *app)?;
                    weight_ok(*weight)?;
                    if *region >= self.num_regions {
                        return Err(Error::invalid("rule.region", format!("{region} >= num_regions")));
                    }
                }
                PlantedRule::Sequential { from, to, p } => {
                    app_ok("rule.from", *from)?;
                    app_ok("rule.to", *to)?;
                    prob_ok(*p)?;
                }
                PlantedRule::CoUsage { apps, p } => {
                    prob_ok(*p)?;
                    if apps.is_empty() {
                        return Err(Error::invalid("rule.apps", "clique needs at least one app"));
                    }
                    for a in apps {
                        app_ok("rule.apps", *a)?;
                    }
                    let mut sorted = apps.clone();
                    sorted.sort();
                    sorted.dedup();
                    if sorted.len() != apps.len() {
                        return Err(Error::invalid("rule.apps", "clique apps must be distinct"));
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Station {
    pub id: StationId,
    pub x: f64,
    pub y: f64,
    pub region: Option<usize>,
    pub business_area: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Poi {
    pub id: usize,
    pub station: StationId,
}

/// Urban layout from which the knowledge graph is built.
#[derive(Clone, Debug, PartialEq)]
pub struct Geography {
    pub stations: Vec<Station>,
    pub num_regions: usize,
    pub num_business_areas: usize,
    pub pois: Vec<Poi>,
    /// Undirected station adjacency, each pair listed once with `a < b`.
    pub adjacency: Vec<(StationId, StationId)>,
}

fn nearest(x: f64, y: f64, centers: &[(f64, f64)]) -> usize {
    let d = |c: &(f64, f64)| (c.0 - x).powi(2) + (c.1 - y).powi(2);
    (0..centers.len())
        .min_by(|&a, &b| d(&centers[a]).total_cmp(&d(&centers[b])).then(a.cmp(&b)))
        .expect("non-empty centers")
}

impl Geography {
    fn generate(spec: &WorldSpec, rng: &mut SeededRng) -> Geography {
        let mut point = || (rng.random::<f64>(), rng.random::<f64>());
        let pos: Vec<(f64, f64)> = (0..spec.num_stations).map(|_| point()).collect();
        let regions: Vec<(f64, f64)> = (0..spec.num_regions).map(|_| point()).collect();
        let areas: Vec<(f64, f64)> = (0..spec.num_business_areas).map(|_| point()).collect();
        let poi_pos: Vec<(f64, f64)> = (0..spec.num_pois).map(|_| point()).collect();

        let stations = pos
            .iter()
            .enumerate()
            .map(|(i, &(x, y))| Station {
                id: StationId::from(i),
                x,
                y,
                region: Some(nearest(x, y, &regions)),
                business_area: Some(nearest(x, y, &areas)),
            })
            .collect();
        let pois = poi_pos
            .iter()
            .enumerate()
            .map(|(i, &(x, y))| Poi {
                id: i,
                station: StationId::from(nearest(x, y, &pos)),
            })
            .collect();

        let mut adjacency = Vec::new();
        for i in 0..pos.len() {
            let mut others: Vec<usize> = (0..pos.len()).filter(|&j| j != i).collect();
            let d = |j: usize| (pos[j].0 - pos[i].0).powi(2) + (pos[j].1 - pos[i].1).powi(2);
            others.sort_by(|&a, &b| d(a).total_cmp(&d(b)).then(a.cmp(&b)));
            for &j in others.iter().take(2) {
                adjacency.push((StationId::from(i.min(j)), StationId::from(i.max(j))));
            }
        }
        adjacency.sort();
        adjacency.dedup();

        Geography {
            stations,
            num_regions: spec.num_regions,
            num_business_areas: spec.num_business_areas,
            pois,
            adjacency,
        }
    }

    pub fn region_of(&self, s: StationId) -> Option<usize> {
        self.stations.get(s.index()).and_then(|st| st.region)
    }
}

/// A generated world: geography, app→category map and usage sequences.
#[derive(Clone, Debug, PartialEq)]
pub struct World {
    pub spec: WorldSpec,
    pub geography: Geography,
    /// Category of each app, indexed by app id.
    pub categories: Vec<CategoryId>,
    /// One sequence per active user-day, ordered by user then day.
    pub sequences: Vec<UserSequence>,
}

impl World {
    pub fn category_map(&self) -> Vec<Option<CategoryId>> {
        self.categories.iter().copied().map(Some).collect()
    }
}

/// Relative session-start intensity for each half-hour bin of the day.
fn diurnal_weight(bin: usize) -> f64 {
    let hour = bin as f64 / 2.0;
    match hour {
        h if h < 6.0 => 0.15,
        h if h < 7.0 => 0.5,
        h if h < 9.0 => 1.0,
        h if h < 12.0 => 1.2,
        h if h < 14.0 => 1.5,
        h if h < 18.0 => 1.1,
        h if h < 22.0 => 1.6,
        h if h < 23.0 => 1.0,
        _ => 0.5,
    }
}

fn sample_weighted(weights: &[f64], excluded: Option<usize>, rng: &mut SeededRng) -> usize {
    let total: f64 = weights.iter().enumerate().filter(|(i, _)| Some(*i) != excluded).map(|(_, w)| w).sum();
    if total.is_nan() || total <= 0.0 {
        let candidates: Vec<usize> = (0..weights.len()).filter(|&i| Some(i) != excluded).collect();
        return *candidates.get(rng.random_range(0..candidates.len().max(1))).unwrap_or(&0);
    }
    let mut u = rng.random::<f64>() * total;
    let mut last = 0;
    for (i, &w) in weights.iter().enumerate() {
        if Some(i) == excluded || w <= 0.0 {
            continue;
        }
        last = i;
        if u < w {
            return i;
        }
        u -= w;
    }
    last
}

/// Context-dependent app weights shared by all users.
struct Affinities {
    /// `time[bin][app]`
    time: Vec<Vec<f64>>,
    /// `place[region][app]`
    place: Vec<Vec<f64>>,
    /// First sequential rule per antecedent app.
    sequential: Vec<Option<(AppId, f64)>>,
    cliques: Vec<(Vec<AppId>, f64)>,
}

impl Affinities {
    fn new(spec: &WorldSpec) -> Self {
        let n = spec.num_apps;
        let mut time = vec![vec![1.0; n]; BINS_PER_DAY];
        let mut place = vec![vec![1.0; n]; spec.num_regions];
        let mut sequential = vec![None; n];
        let mut cliques = Vec::new();
        for rule in &spec.planted_rules {
            match rule {
                PlantedRule::TimeAffinity { app, bins, weight } => {
                    for &b in bins {
                        time[b][app.index()] *= weight;
                    }
                }
                PlantedRule::PlaceAffinity { app, region, weight } => {
                    place[*region][app.index()] *= weight;
                }
                PlantedRule::Sequential { from, to, p } => {
                    sequential[from.index()].get_or_insert((*to, *p));
                }
                PlantedRule::CoUsage { apps, p } => cliques.push((apps.clone(), *p)),
            }
        }
        Affinities {
            time,
            place,
            sequential,
            cliques,
        }
    }
}

struct UserProfile {
    id: String,
    home: StationId,
    work: StationId,
    preference: Vec<f64>,
}

fn session_location(user: &UserProfile, day: usize, hour: usize, n_stations: usize, rng: &mut SeededRng) -> StationId {
    let weekday = day % 7 < 5;
    if weekday && (9..18).contains(&hour) {
        user.work
    } else if !(8..20).contains(&hour) {
        user.home
    } else if rng.random::<f64>() < 0.4 {
        StationId::from(rng.random_range(0..n_stations))
    } else {
        user.home
    }
}

/// Generates the full world for `spec`. Identical specs yield identical worlds.
pub fn generate_world(spec: &WorldSpec) -> Result<World> {
    spec.validate()?;
    let mut geo_rng = rng::sub_rng(spec.seed, "geography", 0);
    let geography = Geography::generate(spec, &mut geo_rng);

    let mut cat_rng = rng::sub_rng(spec.seed, "categories", 0);
    let mut order: Vec<usize> = (0..spec.num_apps).collect();
    order.shuffle(&mut cat_rng);
    let mut categories = vec![CategoryId(0); spec.num_apps];
    for (k, &app) in order.iter().enumerate() {
        categories[app] = if k < spec.num_categories {
            CategoryId::from(k)
        } else {
            CategoryId::from(cat_rng.random_range(0..spec.num_categories))
        };
    }

    let affinities = Affinities::new(spec);
    let base: Vec<f64> = (0..spec.num_apps).map(|a| ((a + 1) as f64).powf(-spec.popularity_exponent)).collect();
    let diurnal: Vec<f64> = (0..BINS_PER_DAY).map(diurnal_weight).collect();
    let sessions = Poisson::new(spec.sessions_per_day.max(1e-9)).map_err(|e| Error::invalid("sessions_per_day", e.to_string()))?;
    let extra_events = Geometric::new(1.0 / spec.events_per_session).map_err(|e| Error::invalid("events_per_session", e.to_string()))?;

    let mut sequences = Vec::new();
    let mut weights = vec![0.0; spec.num_apps];
    for u in 0..spec.num_users {
        let mut rng = rng::sub_rng(spec.seed, "user", u as u64);
        let user = UserProfile {
            id: format!("u{u:04}"),
            home: StationId::from(rng.random_range(0..spec.num_stations)),
            work: StationId::from(rng.random_range(0..spec.num_stations)),
            preference: base
                .iter()
                .map(|b| b * (spec.preference_spread * crate::rng::normal::<f64, _>(&mut rng)).exp())
                .collect(),
        };
        for day in 0..spec.horizon_days {
            let n_sessions = sessions.sample(&mut rng) as usize;
            let mut starts: Vec<i64> = (0..n_sessions)
                .map(|_| {
                    let bin = sample_weighted(&diurnal, None, &mut rng) as i64;
                    bin * 1800 + rng.random_range(0..1800)
                })
                .collect();
            starts.sort_unstable();

            let mut events: Vec<Event> = Vec::new();
            let mut clock: i64 = -1;
            let mut prev: Option<AppId> = None;
            let day_start = spec.start_epoch + day as i64 * 86_400 - i64::from(spec.timezone.offset_secs);
            for start in starts {
                let mut burst: Vec<AppId> = Vec::new();
                for (apps, p) in &affinities.cliques {
                    if rng.random::<f64>() < *p {
                        burst = apps.clone();
                        burst.shuffle(&mut rng);
                        break;
                    }
                }
                let len = (1 + extra_events.sample(&mut rng) as usize).max(burst.len());
                let mut t = start.max(clock + 1).min(86_399);
                let location = session_location(&user, day, (t / 3600) as usize, spec.num_stations, &mut rng);
                let region = geography.region_of(location).unwrap_or(0);
                for k in 0..len {
                    if k > 0 {
                        t = (t + rng.random_range(5..=120)).min(86_399);
                    }
                    let bin = (t / 1800) as usize;
                    let app = if k < burst.len() {
                        burst[k]
                    } else {
                        for (a, w) in weights.iter_mut().enumerate() {
                            *w = user.preference[a] * affinities.time[bin][a] * affinities.place[region][a];
                        }
                        match prev.and_then(|p| affinities.sequential[p.index()]) {
                            Some((to, p)) if rng.random::<f64>() < p => to,
                            Some((to, _)) if spec.num_apps > 1 => AppId::from(sample_weighted(&weights, Some(to.index()), &mut rng)),
                            _ => AppId::from(sample_weighted(&weights, None, &mut rng)),
                        }
                    };
                    events.push(Event {
                        timestamp: day_start + t,
                        location,
                        app,
                        category: Some(categories[app.index()]),
                    });
                    prev = Some(app);
                }
                clock = t;
            }
            if !events.is_empty() {
                sequences.push(UserSequence::new(user.id.clone(), events)?);
            }
        }
    }

    Ok(World {
        spec: spec.clone(),
        geography,
        categories,
        sequences,
    })
}
