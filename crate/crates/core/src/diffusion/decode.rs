use crate::corpus::AppId;
use crate::encoders::EmbeddingTable;
use crate::error::{Error, Result};
use crate::scalar::{dot, norm, Scalar};

/// Nearest app by cosine similarity, with unit-normalized rows cached.
#[derive(Clone, Debug, PartialEq)]
pub struct CosineDecoder<F> {
    dim: usize,
    unit_rows: Vec<F>,
}

impl<F: Scalar> CosineDecoder<F> {
    pub fn new(table: &EmbeddingTable<F>) -> Result<Self> {
        if table.is_empty() {
            return Err(Error::Empty("app table"));
        }
        let mut unit_rows = Vec::with_capacity(table.as_flat().len());
        for (id, row) in table.rows().enumerate() {
            let n = norm(row);
            if n == F::zero() {
                return Err(Error::InvalidArgument(format!("app {id} has a zero-norm embedding")));
            }
            unit_rows.extend(row.iter().map(|&x| x / n));
        }
        Ok(CosineDecoder { dim: table.dim(), unit_rows })
    }

    /// Arg-max cosine; ties go to the smallest id.
    pub fn decode(&self, a_hat: &[F]) -> Result<AppId> {
        if a_hat.len() != self.dim {
            return Err(Error::DimensionMismatch {
                what: "decoded vector",
                expected: self.dim,
                got: a_hat.len(),
            });
        }
        if !crate::scalar::all_finite(a_hat) {
            return Err(Error::NonFinite("decoded vector".into()));
        }
        if norm(a_hat) == F::zero() {
            return Err(Error::InvalidArgument("cannot decode a zero-norm vector".into()));
        }
        let mut best = 0;
        let mut best_score = F::neg_infinity();
        for (id, row) in self.unit_rows.chunks_exact(self.dim).enumerate() {
            let s = dot(row, a_hat);
            if s > best_score {
                best = id;
                best_score = s;
            }
        }
        Ok(AppId::from(best))
    }
}

/// One-off decoding against a table; build a [`CosineDecoder`] to reuse.
pub fn decode_app<F: Scalar>(a_hat: &[F], table: &EmbeddingTable<F>) -> Result<AppId> {
    CosineDecoder::new(table)?.decode(a_hat)
}
