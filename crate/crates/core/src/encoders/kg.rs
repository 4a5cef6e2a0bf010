use std::collections::BTreeSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use crate::corpus::Geography;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EntityKind {
    BaseStation,
    Region,
    BusinessArea,
    Poi,
}

impl EntityKind {
    const ALL: [EntityKind; 4] = [EntityKind::BaseStation, EntityKind::Region, EntityKind::BusinessArea, EntityKind::Poi];

    fn prefix(self) -> &'static str {
        match self {
            EntityKind::BaseStation => "station",
            EntityKind::Region => "region",
            EntityKind::BusinessArea => "area",
            EntityKind::Poi => "poi",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Entity {
    pub kind: EntityKind,
    pub index: usize,
}

impl Entity {
    pub fn station(i: usize) -> Self {
        Entity {
            kind: EntityKind::BaseStation,
            index: i,
        }
    }
}

impl fmt::Display for Entity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.kind.prefix(), self.index)
    }
}

impl FromStr for Entity {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (p, i) = s.split_once(':').ok_or_else(|| format!("entity `{s}` is not `kind:index`"))?;
        let kind = EntityKind::ALL
            .into_iter()
            .find(|k| k.prefix() == p)
            .ok_or_else(|| format!("unknown entity kind `{p}`"))?;
        let index = i.parse().map_err(|e| format!("bad entity index `{i}`: {e}"))?;
        Ok(Entity { kind, index })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Relation {
    /// station → region
    BaseLocateAt,
    /// station → business area
    BaseBelongTo,
    /// station → POI it serves
    ServedBy,
    /// station ↔ station
    BaseBorderBy,
}

impl Relation {
    pub const ALL: [Relation; 4] = [Relation::BaseLocateAt, Relation::BaseBelongTo, Relation::ServedBy, Relation::BaseBorderBy];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn tail_kind(self) -> EntityKind {
        match self {
            Relation::BaseLocateAt => EntityKind::Region,
            Relation::BaseBelongTo => EntityKind::BusinessArea,
            Relation::ServedBy => EntityKind::Poi,
            Relation::BaseBorderBy => EntityKind::BaseStation,
        }
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl FromStr for Relation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Relation::ALL
            .into_iter()
            .find(|r| r.to_string() == s)
            .ok_or_else(|| format!("unknown relation `{s}`"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Fact {
    pub head: Entity,
    pub relation: Relation,
    pub tail: Entity,
}

/// Typed urban knowledge graph over base stations, regions, business areas
/// and POIs. Entities are numbered densely in that kind order.
#[derive(Clone, Debug, PartialEq)]
pub struct UrbanKG {
    counts: [usize; 4],
    facts: Vec<Fact>,
}

impl UrbanKG {
    /// Validates endpoint types and ranges, symmetrizes borders and sorts.
    pub fn new(stations: usize, regions: usize, areas: usize, pois: usize, facts: impl IntoIterator<Item = Fact>) -> Result<Self> {
        let counts = [stations, regions, areas, pois];
        let mut set = BTreeSet::new();
        for f in facts {
            for (e, want) in [(f.head, EntityKind::BaseStation), (f.tail, f.relation.tail_kind())] {
                if e.kind != want || e.index >= counts[e.kind as usize] {
                    return Err(Error::invalid(
                        "kg",
                        format!("fact ({}, {}, {}) has an invalid endpoint {e}", f.head, f.relation, f.tail),
                    ));
                }
            }
            if f.relation == Relation::BaseBorderBy {
                if f.head == f.tail {
                    return Err(Error::invalid("kg", format!("station {} borders itself", f.head)));
                }
                set.insert(Fact {
                    head: f.tail,
                    relation: f.relation,
                    tail: f.head,
                });
            }
            set.insert(f);
        }
        Ok(UrbanKG {
            counts,
            facts: set.into_iter().collect(),
        })
    }

    pub fn facts(&self) -> &[Fact] {
        &self.facts
    }

    pub fn count(&self, kind: EntityKind) -> usize {
        self.counts[kind as usize]
    }

    pub fn num_entities(&self) -> usize {
        self.counts.iter().sum()
    }

    /// Dense index of an entity in `[0, num_entities)`.
    pub fn entity_index(&self, e: Entity) -> usize {
        self.counts[..e.kind as usize].iter().sum::<usize>() + e.index
    }

    /// Facts as dense `(head, relation, tail)` indices.
    pub fn triples(&self) -> Vec<(usize, usize, usize)> {
        self.facts
            .iter()
            .map(|f| (self.entity_index(f.head), f.relation.index(), self.entity_index(f.tail)))
            .collect()
    }
}

/// Builds the four-relation graph of a geography. Every station must lie in
/// a region; a missing business area only drops the corresponding fact.
pub fn build_urban_kg(geo: &Geography) -> Result<UrbanKG> {
    let mut facts = Vec::new();
    for (i, s) in geo.stations.iter().enumerate() {
        let head = Entity::station(i);
        let region = s
            .region
            .ok_or_else(|| Error::invalid("geography", format!("station {} has no region", s.id)))?;
        facts.push(Fact {
            head,
            relation: Relation::BaseLocateAt,
            tail: Entity {
                kind: EntityKind::Region,
                index: region,
            },
        });
        if let Some(a) = s.business_area {
            facts.push(Fact {
                head,
                relation: Relation::BaseBelongTo,
                tail: Entity {
                    kind: EntityKind::BusinessArea,
                    index: a,
                },
            });
        }
    }
    for p in &geo.pois {
        facts.push(Fact {
            head: Entity::station(p.station.index()),
            relation: Relation::ServedBy,
            tail: Entity {
                kind: EntityKind::Poi,
                index: p.id,
            },
        });
    }
    for &(a, b) in &geo.adjacency {
        facts.push(Fact {
            head: Entity::station(a.index()),
            relation: Relation::BaseBorderBy,
            tail: Entity::station(b.index()),
        });
    }
    UrbanKG::new(geo.stations.len(), geo.num_regions, geo.num_business_areas, geo.pois.len(), facts)
}

/// Writes an entity-count header then one `head\trelation\ttail` line per fact.
pub fn write_kg(path: impl AsRef<Path>, kg: &UrbanKG, config_hash: Option<&str>) -> Result<()> {
    let path = path.as_ref();
    let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    let mut body = || -> std::io::Result<()> {
        write!(w, "#entities:")?;
        for k in EntityKind::ALL {
            write!(w, " {}={}", k.prefix(), kg.count(k))?;
        }
        writeln!(w)?;
        if let Some(h) = config_hash {
            writeln!(w, "#config:{h}")?;
        }
        for f in &kg.facts {
            writeln!(w, "{}\t{}\t{}", f.head, f.relation, f.tail)?;
        }
        w.flush()
    };
    body().map_err(|e| Error::io(path, e))
}

pub fn read_kg(path: impl AsRef<Path>) -> Result<UrbanKG> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut counts = None;
    let mut facts = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let perr = |message: String| Error::Parse { line: n + 1, message };
        if let Some(rest) = line.strip_prefix("#entities:") {
            let mut c = [0usize; 4];
            for tok in rest.split_whitespace() {
                let (k, v) = tok.split_once('=').ok_or_else(|| perr(format!("bad entity count `{tok}`")))?;
                let kind = EntityKind::ALL
                    .into_iter()
                    .position(|x| x.prefix() == k)
                    .ok_or_else(|| perr(format!("unknown entity kind `{k}`")))?;
                c[kind] = v.parse().map_err(|e| perr(format!("bad count `{v}`: {e}")))?;
            }
            counts = Some(c);
            continue;
        }
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split('\t').collect();
        let [h, r, t] = parts[..] else {
            return Err(perr(format!("expected 3 fields, found {}", parts.len())));
        };
        facts.push(Fact {
            head: h.parse().map_err(perr)?,
            relation: r.parse().map_err(perr)?,
            tail: t.parse().map_err(perr)?,
        });
    }
    let [s, r, a, p] = counts.ok_or_else(|| Error::Parse {
        line: 1,
        message: "missing `#entities:` header".into(),
    })?;
    UrbanKG::new(s, r, a, p, facts)
}
