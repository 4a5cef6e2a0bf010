//! Representation tables feeding the generator: skip-gram app vectors,
//! TuckER-factorized urban knowledge graph for base stations, and the
//! closed-form sinusoidal time encoding.

mod embedding;
mod kg;
mod skipgram;
mod temporal;
mod tucker;

pub use embedding::{read_embeddings, write_embeddings, EmbeddingDomain, EmbeddingTable};
pub use kg::{build_urban_kg, read_kg, write_kg, Entity, EntityKind, Fact, Relation, UrbanKG};
pub use skipgram::{sgns_loss, train_app_embeddings, SgnsGrad, SkipGramConfig};
pub use temporal::{temporal_encoding, temporal_table, TEMPORAL_DIM, TEMPORAL_TAU};
pub use tucker::{train_tucker, tucker_bce, TuckerConfig, TuckerGrad, TuckerModel, TuckerReport};
