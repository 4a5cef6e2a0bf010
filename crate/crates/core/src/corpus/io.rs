//! Newline-delimited record files.
//!
//! ```text
//! #fields:user_id  timestamp  location_id  app_id  category_id
//! #tz:0
//! #config:3f9a0c1d2b4e5f60
//! u0000  1461052800  3  5  2
//! ```
//!
//! Columns are tab-separated. A missing category is written as `-`. Records are regrouped into one
//! sequence per user and local day on read.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{AppId, CategoryId, Event, StationId, TimeZone, UserSequence};
use crate::error::{Error, Result};

const FIELDS: [&str; 5] = ["user_id", "timestamp", "location_id", "app_id", "category_id"];

/// Header metadata carried by a record file.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RecordMeta {
    pub timezone: TimeZone,
    pub config_hash: Option<String>,
}

pub fn parse_records<R: BufRead>(reader: R) -> Result<(Vec<UserSequence>, RecordMeta)> {
    let mut meta = RecordMeta::default();
    let mut saw_fields = false;
    let mut by_user: BTreeMap<String, Vec<Event>> = BTreeMap::new();

    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            if rest.starts_with(' ') {
                continue;
            }
            let (key, value) = rest.split_once(':').ok_or_else(|| Error::Parse {
                line: lineno,
                message: format!("malformed header `{line}`"),
            })?;
            match key {
                "fields" => {
                    let names: Vec<&str> = value.split('\t').collect();
                    if let Some(bad) = names.iter().find(|n| !FIELDS.contains(n)) {
                        return Err(Error::UnknownField(bad.to_string()));
                    }
                    if names != FIELDS {
                        return Err(Error::Parse {
                            line: lineno,
                            message: format!("expected fields {}", FIELDS.join(",")),
                        });
                    }
                    saw_fields = true;
                }
                "tz" => {
                    let off = value.trim().parse::<i32>().map_err(|e| Error::Parse {
                        line: lineno,
                        message: format!("timezone offset: {e}"),
                    })?;
                    meta.timezone = TimeZone::new(off)?;
                }
                "config" => meta.config_hash = Some(value.trim().to_string()),
                other => return Err(Error::UnknownField(other.to_string())),
            }
            continue;
        }
        if !saw_fields {
            return Err(Error::Parse {
                line: lineno,
                message: "record before #fields header".into(),
            });
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != FIELDS.len() {
            return Err(Error::Parse {
                line: lineno,
                message: format!("expected {} fields, found {}", FIELDS.len(), cols.len()),
            });
        }
        let num = |idx: usize| -> Result<u64> {
            cols[idx].parse::<u64>().map_err(|_| Error::Parse {
                line: lineno,
                message: format!("{} `{}` is not a non-negative integer", FIELDS[idx], cols[idx]),
            })
        };
        if cols[0].is_empty() {
            return Err(Error::Parse {
                line: lineno,
                message: "empty user_id".into(),
            });
        }
        let timestamp = num(1)? as i64;
        let location = StationId(num(2)? as u32);
        let app = AppId(num(3)? as u32);
        let category = if cols[4] == "-" { None } else { Some(CategoryId(num(4)? as u32)) };
        by_user.entry(cols[0].to_string()).or_default().push(Event {
            timestamp,
            location,
            app,
            category,
        });
    }

    let mut sequences = Vec::new();
    for (user, mut events) in by_user {
        events.sort_by_key(|e| e.timestamp);
        let mut start = 0;
        for end in 1..=events.len() {
            let cut = end == events.len() || meta.timezone.day(events[end].timestamp) != meta.timezone.day(events[start].timestamp);
            if cut {
                sequences.push(UserSequence::new(user.clone(), events[start..end].to_vec())?);
                start = end;
            }
        }
    }
    Ok((sequences, meta))
}

pub fn format_records<W: Write>(mut w: W, data: &[UserSequence], meta: &RecordMeta) -> std::io::Result<()> {
    writeln!(w, "#fields:{}", FIELDS.join("\t"))?;
    writeln!(w, "#tz:{}", meta.timezone.offset_secs)?;
    if let Some(h) = &meta.config_hash {
        writeln!(w, "#config:{h}")?;
    }
    let mut order: Vec<&UserSequence> = data.iter().collect();
    order.sort_by(|a, b| a.user_id().cmp(b.user_id()).then(a.events()[0].timestamp.cmp(&b.events()[0].timestamp)));
    for seq in order {
        for e in seq.events() {
            write!(w, "{}\t{}\t{}\t{}\t", seq.user_id(), e.timestamp, e.location, e.app)?;
            match e.category {
                Some(c) => writeln!(w, "{c}")?,
                None => writeln!(w, "-")?,
            }
        }
    }
    w.flush()
}

pub fn read_dataset_with_meta(path: impl AsRef<Path>) -> Result<(Vec<UserSequence>, RecordMeta)> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_records(BufReader::new(f))
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Vec<UserSequence>> {
    Ok(read_dataset_with_meta(path)?.0)
}

pub fn write_dataset_with_meta(path: impl AsRef<Path>, data: &[UserSequence], meta: &RecordMeta) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    format_records(BufWriter::new(f), data, meta).map_err(|e| Error::io(path, e))
}

pub fn write_dataset(path: impl AsRef<Path>, data: &[UserSequence]) -> Result<()> {
    write_dataset_with_meta(path, data, &RecordMeta::default())
}
