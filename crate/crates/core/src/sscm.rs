//! Spatial signs and the (generalized) spatial sign covariance matrix.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::location::{center_data, CenterSpec};
use crate::matrix::{DataMatrix, SpectralDecomposition, SymmetricPd};
use crate::weight::WeightFunction;

/// `x / ||x||`, and `0` at the origin.
pub fn spatial_sign(x: &DVector<f64>) -> DVector<f64> {
    let n = x.norm();
    if n > 0.0 {
        x / n
    } else {
        DVector::zeros(x.len())
    }
}

/// A positive semi-definite sign covariance matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SignMatrix {
    pub matrix: DMatrix<f64>,
    pub trace_value: f64,
}

impl SignMatrix {
    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        Ok(SpectralDecomposition::of_symmetric(&self.matrix)?.eigenvalues)
    }

    /// The matrix as a PD value, failing when the signs do not span `R^q`.
    pub fn to_pd(&self) -> Result<SymmetricPd> {
        positive_definite_or_rank_error(self.matrix.clone())
    }
}

/// `(1/n) sum S(x_i - mu) S(x_i - mu)^T`. Zero centered rows contribute a zero
/// matrix but still count in `n`, so the trace is `n_nonzero / n`.
pub fn sscm(x: &DataMatrix, center: &CenterSpec) -> Result<SignMatrix> {
    let centered = center_data(x, center)?;
    Ok(sscm_centered(&centered))
}

pub(crate) fn sscm_centered(x: &DataMatrix) -> SignMatrix {
    let q = x.q();
    let mut acc = DMatrix::zeros(q, q);
    for r in x.rows() {
        let s = spatial_sign(r);
        acc.ger(1.0, &s, &s, 1.0);
    }
    let matrix = acc / x.n() as f64;
    let trace_value = matrix.trace();
    SignMatrix { matrix, trace_value }
}

/// `(1/n) sum u(||x_i - mu||^2) (x_i - mu)(x_i - mu)^T`. Zero rows are skipped
/// (they contribute nothing for any weight with bounded `psi`).
pub fn generalized_sscm(x: &DataMatrix, u: &WeightFunction, center: &CenterSpec) -> Result<SymmetricPd> {
    let centered = center_data(x, center)?;
    let q = x.q();
    let mut acc = DMatrix::zeros(q, q);
    for r in centered.rows() {
        let s = r.norm_squared();
        if s > 0.0 {
            acc.ger(u.u(s), r, r, 1.0);
        }
    }
    positive_definite_or_rank_error(acc / centered.n() as f64)
}

pub(crate) fn positive_definite_or_rank_error(m: DMatrix<f64>) -> Result<SymmetricPd> {
    let q = m.nrows();
    match SymmetricPd::new(m.clone()) {
        Ok(pd) if pd.condition_number() < 1e14 => Ok(pd),
        Ok(_) | Err(Error::NotPositiveDefinite(_)) => {
            let eig = SpectralDecomposition::of_symmetric(&m)?;
            let top = eig.eigenvalues[0].max(f64::MIN_POSITIVE);
            let rank = eig.eigenvalues.iter().filter(|&&l| l > 1e-14 * top).count();
            Err(Error::RankDeficient { rank, dim: q })
        }
        Err(e) => Err(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn cross() -> DataMatrix {
        DataMatrix::from_rows(vec![
            vec![1.0, 0.0],
            vec![-1.0, 0.0],
            vec![0.0, 1.0],
            vec![0.0, -1.0],
        ])
        .unwrap()
    }

    fn random_data(n: usize, q: usize, seed: u64) -> DataMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DataMatrix::from_rows(
            (0..n)
                .map(|_| (0..q).map(|_| rng.sample(StandardNormal)).collect())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn sign_examples() {
        let s = spatial_sign(&DVector::from_vec(vec![3.0, 4.0]));
        assert!((s - DVector::from_vec(vec![0.6, 0.8])).norm() < 1e-15);
        assert_eq!(spatial_sign(&DVector::zeros(3)), DVector::zeros(3));
        let u = DVector::from_vec(vec![0.0, 1.0, 0.0]);
        assert_eq!(spatial_sign(&u), u);
    }

    #[test]
    fn sscm_examples() {
        let s = sscm(&cross(), &CenterSpec::origin(2)).unwrap();
        assert!((s.matrix - DMatrix::identity(2, 2) * 0.5).norm() < 1e-15);
        let x = DataMatrix::from_rows(vec![vec![1.0, 0.0], vec![-1.0, 0.0]]).unwrap();
        let s = sscm(&x, &CenterSpec::origin(2)).unwrap();
        assert!((&s.matrix - DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0])).norm() < 1e-15);
        assert!(s.to_pd().is_err());
    }

    #[test]
    fn sscm_trace_counts_nonzero_rows() {
        let x = DataMatrix::from_rows(vec![vec![1.0, 0.0], vec![0.0, 0.0], vec![0.0, 2.0]]).unwrap();
        let s = sscm(&x, &CenterSpec::origin(2)).unwrap();
        assert!((s.trace_value - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn sscm_matches_direct_sum() {
        let x = random_data(50, 3, 8);
        let s = sscm(&x, &CenterSpec::origin(3)).unwrap();
        let mut oracle = DMatrix::<f64>::zeros(3, 3);
        for r in x.rows() {
            let nn = r.norm_squared();
            for i in 0..3 {
                for j in 0..3 {
                    oracle[(i, j)] += r[i] * r[j] / nn / 50.0;
                }
            }
        }
        assert!((s.matrix - oracle).norm() < 1e-12);
    }

    #[test]
    fn generalized_examples() {
        let x = DataMatrix::from_rows(vec![vec![1.0, 0.0], vec![0.0, 0.0], vec![1.0, 3.0], vec![-2.0, 1.0]])
            .unwrap();
        let origin = CenterSpec::origin(2);
        let plain = sscm(&x, &origin).unwrap();
        let g = generalized_sscm(&x, &WeightFunction::tyler(1.0).unwrap(), &origin).unwrap();
        assert!((g.matrix() - &plain.matrix).norm() < 1e-15);

        let one = WeightFunction::custom(|_| 1.0, true).unwrap();
        let g = generalized_sscm(&x, &one, &origin).unwrap();
        assert!((g.matrix() - x.second_moment()).norm() < 1e-14);
    }

    #[test]
    fn generalized_matches_direct_sum() {
        let x = random_data(20, 3, 13);
        let w = WeightFunction::custom(|s| 1.0 / (1.0 + s), true).unwrap();
        let g = generalized_sscm(&x, &w, &CenterSpec::origin(3)).unwrap();
        let mut oracle = DMatrix::<f64>::zeros(3, 3);
        for r in x.rows() {
            let s: f64 = r.iter().map(|v| v * v).sum();
            oracle += r * r.transpose() / (1.0 + s) / 20.0;
        }
        assert!((g.matrix() - oracle).norm() < 1e-14);
    }

    #[test]
    fn fixed_center_resistance_bound() {
        let x = random_data(30, 3, 17);
        let clean = sscm(&x, &CenterSpec::origin(3)).unwrap();
        let m = 9;
        let mut rows: Vec<Vec<f64>> = x.rows().iter().map(|r| r.iter().copied().collect()).collect();
        for r in rows.iter_mut().take(m) {
            *r = vec![1e6, -1e6, 2e6];
        }
        let bad = sscm(&DataMatrix::from_rows(rows).unwrap(), &CenterSpec::origin(3)).unwrap();
        let worst = (bad.matrix - clean.matrix).amax();
        assert!(worst <= m as f64 / 30.0 + 1e-15);
    }

    #[test]
    fn leading_eigenvector_consistency() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let rows: Vec<Vec<f64>> = (0..10_000)
            .map(|_| {
                let a: f64 = rng.sample(StandardNormal);
                let b: f64 = rng.sample(StandardNormal);
                vec![2.0 * a, b]
            })
            .collect();
        let s = sscm(&DataMatrix::from_rows(rows).unwrap(), &CenterSpec::origin(2)).unwrap();
        let eig = SpectralDecomposition::of_symmetric(&s.matrix).unwrap();
        let v = eig.eigenvectors.column(0);
        let angle = v[0].abs().min(1.0).acos();
        assert!(angle < 0.1);
    }
}
