//! Representation similarity: linear CKA, block functional similarity and the offline table.

pub mod cka;
pub mod functional;
pub mod table;

pub use cka::{center_columns, linear_cka, minibatch_cka, LinearCka, SimilarityIndex};
pub use functional::{functional_similarity, span_similarity, FunctionalSimilarity, Span};
pub use table::{build_similarity_table, diagonal_statistic, on_diagonal, table_key, BuildStats, SimilarityTable, TableOptions};
