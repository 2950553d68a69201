//! Training-free expressivity score: log-determinant of the Hamming agreement kernel
//! over binarized activations of a probe batch.

use crate::error::Result;
use crate::formats::BinaryCodes;
use crate::linalg::Mat;
use crate::numeric::Real;

/// `K[a][b] = d − hamming(row_a, row_b)`, the number of agreeing code bits.
pub fn hamming_kernel<T: Real>(codes: &BinaryCodes) -> Mat<T> {
    let n = codes.rows();
    let d = codes.cols();
    let mut k = Mat::zeros(n, n);
    for a in 0..n {
        let ra = codes.row(a);
        for b in a..n {
            let rb = codes.row(b);
            let agree = ra.iter().zip(rb).filter(|(x, y)| x == y).count();
            let v = T::of_usize(agree);
            k[(a, b)] = v;
            k[(b, a)] = v;
        }
        debug_assert_eq!(k[(a, a)], T::of_usize(d));
    }
    k
}

/// Ridge used when the unregularized kernel is singular: `1e-6·d`.
pub fn default_ridge<T: Real>(d: usize) -> T {
    T::of(1e-6) * T::of_usize(d)
}

/// `ln|det(K + ridge·I)|` over the column-concatenated code segments; `-inf` when the
/// regularized kernel is still singular.
pub fn naswot_score<T: Real>(segments: &[&BinaryCodes], ridge: T) -> Result<T> {
    let codes = BinaryCodes::hstack(segments)?;
    Ok(score_codes(&codes, ridge))
}

pub fn score_codes<T: Real>(codes: &BinaryCodes, ridge: T) -> T {
    let mut k: Mat<T> = hamming_kernel(codes);
    if ridge != T::zero() {
        for i in 0..k.rows() {
            k[(i, i)] += ridge;
        }
    }
    let v = k.log_abs_det();
    if v.is_finite() {
        v
    } else {
        T::neg_infinity()
    }
}

/// Score at ridge 0 when finite, otherwise at [`default_ridge`].
pub fn score_codes_auto<T: Real>(codes: &BinaryCodes) -> T {
    let plain = score_codes(codes, T::zero());
    if plain.is_finite() {
        plain
    } else {
        score_codes(codes, default_ridge::<T>(codes.cols()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn codes(rows: &[&[u8]]) -> BinaryCodes {
        let d = rows[0].len();
        BinaryCodes::new(rows.len(), d, rows.iter().flat_map(|r| r.iter().copied()).collect()).unwrap()
    }

    #[test]
    fn two_row_hand_case() {
        let c = codes(&[&[1, 0, 1], &[1, 1, 0]]);
        let k: Mat<f64> = hamming_kernel(&c);
        assert_eq!(k.as_slice(), &[3., 1., 1., 3.]);
        let s: f64 = naswot_score(&[&c], 0.0).unwrap();
        assert!((s - 8f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn duplicate_rows_are_singular() {
        let c = codes(&[&[1, 0, 1], &[0, 1, 1], &[1, 0, 1]]);
        let s: f64 = naswot_score(&[&c], 0.0).unwrap();
        assert_eq!(s, f64::NEG_INFINITY);
        let r: f64 = score_codes_auto(&c);
        assert!(r.is_finite());
    }

    #[test]
    fn segments_concatenate() {
        let a = codes(&[&[1], &[1]]);
        let b = codes(&[&[0, 1], &[1, 0]]);
        let joined = codes(&[&[1, 0, 1], &[1, 1, 0]]);
        let s1: f64 = naswot_score(&[&a, &b], 0.0).unwrap();
        let s2: f64 = naswot_score(&[&joined], 0.0).unwrap();
        assert_eq!(s1, s2);
    }

    #[test]
    fn row_permutation_invariant() {
        let c = codes(&[&[1, 0, 1, 1], &[0, 1, 1, 0], &[1, 1, 0, 0]]);
        let p = c.select_rows(&[2, 0, 1]);
        let a: f64 = score_codes(&c, 0.0);
        let b: f64 = score_codes(&p, 0.0);
        assert!((a - b).abs() < 1e-12);
    }
}
