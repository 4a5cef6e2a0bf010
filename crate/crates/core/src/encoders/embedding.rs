use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::scalar::{all_finite, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EmbeddingDomain {
    App,
    Location,
    Time,
}

impl EmbeddingDomain {
    pub fn name(self) -> &'static str {
        match self {
            EmbeddingDomain::App => "app",
            EmbeddingDomain::Location => "location",
            EmbeddingDomain::Time => "time",
        }
    }
}

impl fmt::Display for EmbeddingDomain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EmbeddingDomain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "app" => Ok(EmbeddingDomain::App),
            "location" => Ok(EmbeddingDomain::Location),
            "time" => Ok(EmbeddingDomain::Time),
            other => Err(Error::invalid("domain", format!("unknown embedding domain `{other}`"))),
        }
    }
}

/// Dense table with one row per id in `[0, len)`, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable<F> {
    domain: EmbeddingDomain,
    dim: usize,
    data: Vec<F>,
}

impl<F: Scalar> EmbeddingTable<F> {
    pub fn from_flat(domain: EmbeddingDomain, dim: usize, data: Vec<F>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dim", "must be positive"));
        }
        if !data.len().is_multiple_of(dim) {
            return Err(Error::DimensionMismatch {
                what: "embedding table",
                expected: dim * (data.len() / dim + 1),
                got: data.len(),
            });
        }
        if !all_finite(&data) {
            return Err(Error::NonFinite(format!("{domain} embedding table")));
        }
        Ok(EmbeddingTable { domain, dim, data })
    }

    pub fn from_rows(domain: EmbeddingDomain, rows: &[Vec<F>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        for r in rows {
            if r.len() != dim {
                return Err(Error::DimensionMismatch {
                    what: "embedding row",
                    expected: dim,
                    got: r.len(),
                });
            }
        }
        Self::from_flat(domain, dim, rows.concat())
    }

    pub fn domain(&self) -> EmbeddingDomain {
        self.domain
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Panics when `id` is out of range; use [`EmbeddingTable::get`] for
    /// untrusted ids.
    #[inline]
    pub fn row(&self, id: usize) -> &[F] {
        &self.data[id * self.dim..(id + 1) * self.dim]
    }

    pub fn get(&self, id: usize) -> Result<&[F]> {
        if id >= self.len() {
            return Err(Error::UnknownId {
                domain: self.domain.name(),
                id: id.to_string(),
            });
        }
        Ok(self.row(id))
    }

    pub fn rows(&self) -> impl Iterator<Item = &[F]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[F] {
        &self.data
    }

    /// Root mean square over all components.
    pub fn rms(&self) -> F {
        if self.data.is_empty() {
            return F::zero();
        }
        let ss: F = self.data.iter().map(|&x| x * x).sum();
        (ss / F::of_usize(self.data.len())).sqrt()
    }

    pub fn cast<G: Scalar>(&self) -> EmbeddingTable<G> {
        EmbeddingTable {
            domain: self.domain,
            dim: self.dim,
            data: self.data.iter().map(|x| G::of(x.as_f64())).collect(),
        }
    }
}

/// Writes `#domain:<name> #dim:<d>` then one `id\tv1\t...\tvd` row per id.
pub fn write_embeddings<F: Scalar>(path: impl AsRef<Path>, table: &EmbeddingTable<F>, config_hash: Option<&str>) -> Result<()> {
    let path = path.as_ref();
    let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    let mut body = || -> std::io::Result<()> {
        writeln!(w, "#domain:{} #dim:{}", table.domain, table.dim)?;
        if let Some(h) = config_hash {
            writeln!(w, "#config:{h}")?;
        }
        for (id, row) in table.rows().enumerate() {
            write!(w, "{id}")?;
            for v in row {
                // `{:?}` on f64 prints the shortest exact round-trip form
                write!(w, "\t{:?}", v.as_f64())?;
            }
            writeln!(w)?;
        }
        w.flush()
    };
    body().map_err(|e| Error::io(path, e))
}

/// Reads a table written by [`write_embeddings`]. Every id in `[0, max]`
/// must appear exactly once. Returns the table and the embedded config hash.
pub fn read_embeddings<F: Scalar>(path: impl AsRef<Path>) -> Result<(EmbeddingTable<F>, Option<String>)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingArtifact {
                kind: "embeddings",
                path: path.to_path_buf(),
            }
        } else {
            Error::io(path, e)
        }
    })?;
    let mut domain = None;
    let mut dim = None;
    let mut hash = None;
    let mut rows: Vec<Option<Vec<F>>> = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let lineno = n + 1;
        let parse_err = |message: String| Error::Parse { line: lineno, message };
        if let Some(rest) = line.strip_prefix("#config:") {
            hash = Some(rest.trim().to_string());
            continue;
        }
        if line.starts_with('#') {
            for tok in line.split_whitespace() {
                if let Some(v) = tok.strip_prefix("#domain:") {
                    domain = Some(v.parse::<EmbeddingDomain>()?);
                } else if let Some(v) = tok.strip_prefix("#dim:") {
                    dim = Some(v.parse::<usize>().map_err(|e| parse_err(format!("bad dim: {e}")))?);
                }
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let d = dim.ok_or_else(|| parse_err("row before `#dim:` header".into()))?;
        let mut fields = line.split('\t');
        let id: usize = fields.next().unwrap_or_default().parse().map_err(|e| parse_err(format!("bad id: {e}")))?;
        let v = fields
            .map(|f| f.parse::<f64>().map(F::of).map_err(|e| parse_err(format!("bad value `{f}`: {e}"))))
            .collect::<Result<Vec<F>>>()?;
        if v.len() != d {
            return Err(parse_err(format!("expected {d} values, found {}", v.len())));
        }
        if id >= rows.len() {
            rows.resize(id + 1, None);
        }
        if rows[id].replace(v).is_some() {
            return Err(parse_err(format!("duplicate id {id}")));
        }
    }
    let domain = domain.ok_or_else(|| Error::Parse {
        line: 1,
        message: "missing `#domain:` header".into(),
    })?;
    let dim = dim.ok_or_else(|| Error::Parse {
        line: 1,
        message: "missing `#dim:` header".into(),
    })?;
    let missing: Vec<usize> = rows.iter().enumerate().filter(|(_, r)| r.is_none()).map(|(i, _)| i).collect();
    if !missing.is_empty() {
        return Err(Error::MissingIds {
            domain: domain.name(),
            ids: missing,
        });
    }
    let data = rows.into_iter().flatten().flatten().collect();
    Ok((EmbeddingTable::from_flat(domain, dim, data)?, hash))
}
