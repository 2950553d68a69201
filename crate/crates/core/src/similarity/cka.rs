//! Linear centered kernel alignment.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::numeric::Real;

/// Centered matrices with Frobenius norm below this are treated as degenerate.
pub const DEGENERATE_NORM: f64 = 1e-12;

/// Subtracts each column's mean.
pub fn center_columns<T: Real>(m: &Mat<T>) -> Result<Mat<T>> {
    let n = m.rows();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "centering needs at least 2 rows, got {n}"
        )));
    }
    let mut means = vec![T::zero(); m.cols()];
    for r in 0..n {
        for (acc, &v) in means.iter_mut().zip(m.row(r)) {
            *acc += v;
        }
    }
    let inv = T::one() / T::of_usize(n);
    for acc in &mut means {
        *acc *= inv;
    }
    let mut out = m.clone();
    for r in 0..n {
        for (v, &mu) in out.row_mut(r).iter_mut().zip(&means) {
            *v -= mu;
        }
    }
    Ok(out)
}

/// `‖YcᵀXc‖²_F / (‖XcXcᵀ‖_F · ‖YcYcᵀ‖_F)` on column-centered inputs.
///
/// When `n > max(d1, d2)` the feature-space products (`d×d`) are used so the
/// `n×n` Gram matrices are never formed.
pub fn linear_cka<T: Real>(x: &Mat<T>, y: &Mat<T>) -> Result<T> {
    if x.rows() != y.rows() {
        return Err(Error::DimensionMismatch(format!(
            "CKA inputs have {} and {} rows",
            x.rows(),
            y.rows()
        )));
    }
    let xc = center_columns(x)?;
    let yc = center_columns(y)?;
    let threshold = T::of(DEGENERATE_NORM);
    for m in [&xc, &yc] {
        let norm = m.frobenius();
        if !(norm >= threshold) {
            return Err(Error::DegenerateSimilarity {
                norm: norm.to_f64_lossy(),
            });
        }
    }
    let n = x.rows();
    let (num, den_x, den_y) = if n > x.cols().max(y.cols()) {
        let cross = yc.t_matmul(&xc);
        (
            cross.frobenius_sq(),
            xc.t_matmul(&xc).frobenius(),
            yc.t_matmul(&yc).frobenius(),
        )
    } else {
        let kx = xc.matmul_t(&xc);
        let ky = yc.matmul_t(&yc);
        let inner = kx
            .as_slice()
            .iter()
            .zip(ky.as_slice())
            .fold(T::zero(), |acc, (&a, &b)| acc + a * b);
        (inner, kx.frobenius(), ky.frobenius())
    };
    Ok(num / (den_x * den_y))
}

/// Unbiased HSIC estimator on two `n×n` Gram matrices (`n ≥ 4`).
pub fn hsic_unbiased<T: Real>(k: &Mat<T>, l: &Mat<T>) -> T {
    let n = k.rows();
    debug_assert!(n >= 4);
    let mut trace = T::zero();
    let mut sum_k = T::zero();
    let mut sum_l = T::zero();
    let mut row_k = vec![T::zero(); n];
    let mut row_l = vec![T::zero(); n];
    for a in 0..n {
        for b in 0..n {
            if a == b {
                continue;
            }
            let kv = k[(a, b)];
            let lv = l[(a, b)];
            trace += kv * lv;
            row_k[a] += kv;
            row_l[a] += lv;
        }
        sum_k += row_k[a];
        sum_l += row_l[a];
    }
    let cross: T = row_k.iter().zip(&row_l).map(|(&a, &b)| a * b).sum();
    let nf = T::of_usize(n);
    let one = T::one();
    let two = T::of(2.0);
    (trace + sum_k * sum_l / ((nf - one) * (nf - two)) - two * cross / (nf - two))
        / (nf * (nf - T::of(3.0)))
}

/// Ratio of unbiased HSIC estimates on one batch of rows.
pub fn unbiased_cka<T: Real>(x: &Mat<T>, y: &Mat<T>) -> Result<T> {
    let kx = x.matmul_t(x);
    let ky = y.matmul_t(y);
    let hxy = hsic_unbiased(&kx, &ky);
    let hxx = hsic_unbiased(&kx, &kx);
    let hyy = hsic_unbiased(&ky, &ky);
    let den = (hxx * hyy).sqrt();
    if !(hxx > T::zero() && hyy > T::zero() && den.is_finite()) {
        return Err(Error::DegenerateSimilarity {
            norm: den.to_f64_lossy(),
        });
    }
    Ok(hxy / den)
}

/// Mean of per-batch unbiased-HSIC CKA estimates over `num_batches` seeded draws.
///
/// Rows within a batch are sampled without replacement; batches are independent.
pub fn minibatch_cka<T: Real>(
    x: &Mat<T>,
    y: &Mat<T>,
    batch_size: usize,
    num_batches: usize,
    seed: u64,
) -> Result<T> {
    let n = x.rows();
    if y.rows() != n {
        return Err(Error::DimensionMismatch(format!(
            "CKA inputs have {} and {} rows",
            n,
            y.rows()
        )));
    }
    if batch_size > n {
        return Err(Error::InvalidArgument(format!(
            "batch size {batch_size} exceeds {n} rows"
        )));
    }
    if batch_size < 4 {
        return Err(Error::InvalidArgument(format!(
            "the unbiased estimator needs batch size >= 4, got {batch_size}"
        )));
    }
    if num_batches == 0 {
        return Err(Error::InvalidArgument("num_batches must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = T::zero();
    for _ in 0..num_batches {
        let mut idx = rand::seq::index::sample(&mut rng, n, batch_size).into_vec();
        idx.sort_unstable();
        total += unbiased_cka(&x.select_rows(&idx), &y.select_rows(&idx))?;
    }
    Ok(total / T::of_usize(num_batches))
}

/// Pluggable representation-similarity index.
pub trait SimilarityIndex<T: Real>: Sync {
    fn similarity(&self, x: &Mat<T>, y: &Mat<T>) -> Result<T>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LinearCka;

impl<T: Real> SimilarityIndex<T> for LinearCka {
    fn similarity(&self, x: &Mat<T>, y: &Mat<T>) -> Result<T> {
        linear_cka(x, y)
    }
}
