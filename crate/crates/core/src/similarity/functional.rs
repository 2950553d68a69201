use crate::error::{Error, Result};
use crate::numeric::Real;
use crate::similarity::table::SimilarityTable;
use crate::zoo::Block;

/// `S = s(input, input') + s(output, output')`, in `[0, 2]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct FunctionalSimilarity<T>(pub T);

impl<T: Real> FunctionalSimilarity<T> {
    pub fn value(self) -> T {
        self.0
    }
}

/// Block boundaries as `(model, first node, last node)`.
pub type Span = (usize, usize, usize);

/// Similarity of the inputs two blocks consume.
///
/// Blocks that both start at the raw probe input see the same images, so their input
/// similarity is 1. A raw-probe input against an internal feature has no table entry
/// and counts as 0.
pub fn input_similarity<T: Real>(table: &SimilarityTable<T>, a: Span, b: Span) -> Result<T> {
    match (a.1, b.1) {
        (0, 0) => Ok(T::one()),
        (0, _) | (_, 0) => Ok(T::zero()),
        (fa, fb) => lookup(table, a.0, fa - 1, b.0, fb - 1),
    }
}

fn lookup<T: Real>(table: &SimilarityTable<T>, i: usize, a: usize, j: usize, b: usize) -> Result<T> {
    table.get(i, a, j, b).ok_or(Error::MissingEntry {
        model_a: i,
        node_a: a,
        model_b: j,
        node_b: b,
    })
}

pub fn span_similarity<T: Real>(table: &SimilarityTable<T>, a: Span, b: Span) -> Result<T> {
    let s_in = input_similarity(table, a, b)?;
    let s_out = lookup(table, a.0, a.2, b.0, b.2)?;
    Ok(s_in + s_out)
}

pub fn functional_similarity<T: Real>(
    table: &SimilarityTable<T>,
    block_a: &Block,
    block_b: &Block,
) -> Result<FunctionalSimilarity<T>> {
    span_similarity(
        table,
        (block_a.model_index, block_a.first, block_a.last),
        (block_b.model_index, block_b.first, block_b.last),
    )
    .map(FunctionalSimilarity)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::zoo::uniform_model;

    fn table() -> SimilarityTable<f64> {
        // two models, 3 and 2 nodes
        let mut t = SimilarityTable::filled(vec![3, 2], 0.0);
        for i in 0..2 {
            for a in 0..t.len(i) {
                t.set(i, a, i, a, 1.0);
            }
        }
        t.set(0, 0, 1, 0, 0.6);
        t.set(0, 2, 1, 1, 0.8);
        t.set(0, 1, 1, 1, 0.3);
        t
    }

    #[test]
    fn block_with_itself_scores_two() {
        let t = table();
        let m = uniform_model("a", &[1, 1, 1]);
        let b = Block::new(&m, 0, 1, 1, 2);
        assert_eq!(functional_similarity(&t, &b, &b).unwrap().value(), 2.0);
        let first = Block::new(&m, 0, 0, 0, 1);
        assert_eq!(functional_similarity(&t, &first, &first).unwrap().value(), 2.0);
    }

    #[test]
    fn sum_of_input_and_output() {
        let t = table();
        let ma = uniform_model("a", &[1, 1, 1]);
        let mb = uniform_model("b", &[1, 1]);
        let a = Block::new(&ma, 0, 1, 1, 2);
        let b = Block::new(&mb, 1, 1, 1, 1);
        let s = functional_similarity(&t, &a, &b).unwrap().value();
        assert!((s - 1.4).abs() < 1e-15);
        assert_eq!(s, functional_similarity(&t, &b, &a).unwrap().value());
    }

    #[test]
    fn raw_input_against_internal_is_zero() {
        let t = table();
        let s = span_similarity(&t, (0, 0, 1), (1, 1, 1)).unwrap();
        assert_eq!(s, 0.3);
    }

    #[test]
    fn missing_entry_errors() {
        let t = table();
        assert!(matches!(
            span_similarity(&t, (0, 0, 5), (1, 0, 1)),
            Err(Error::MissingEntry { .. })
        ));
    }
}
