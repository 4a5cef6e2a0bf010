use super::{EmbeddingDomain, EmbeddingTable};
use crate::corpus::BINS_PER_DAY;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const TEMPORAL_DIM: usize = 128;
pub const TEMPORAL_TAU: f64 = 10_000.0;

/// Sinusoidal encoding of a half-hour bin: `sin(i / τ^(j/64))` for
/// `j = 0..64`, followed by the matching cosines.
pub fn temporal_encoding<F: Scalar>(bin: usize) -> Result<Vec<F>> {
    if bin >= BINS_PER_DAY {
        return Err(Error::invalid("bin", format!("{bin} is outside [0, {BINS_PER_DAY})")));
    }
    let half = TEMPORAL_DIM / 2;
    let mut out = vec![F::zero(); TEMPORAL_DIM];
    for j in 0..half {
        let angle = bin as f64 / TEMPORAL_TAU.powf(j as f64 / half as f64);
        out[j] = F::of(angle.sin());
        out[half + j] = F::of(angle.cos());
    }
    Ok(out)
}

/// The full 48 × 128 time table.
pub fn temporal_table<F: Scalar>() -> EmbeddingTable<F> {
    let data = (0..BINS_PER_DAY).flat_map(|b| temporal_encoding(b).expect("bin in range")).collect();
    EmbeddingTable::from_flat(EmbeddingDomain::Time, TEMPORAL_DIM, data).expect("finite table")
}
