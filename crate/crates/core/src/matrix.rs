//! Data containers and the symmetric positive-definite matrix toolkit shared by
//! every estimator: spectral decomposition, condition numbers, the Riemannian
//! bias metric, shape normalization and general-position checks.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

const SYMMETRY_TOL: f64 = 1e-12;

/// `n` observations in `R^q`, stored row by row.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    rows: Vec<DVector<f64>>,
    q: usize,
}

impl DataMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let q = rows.first().map(Vec::len).unwrap_or(0);
        let rows = rows.into_iter().map(DVector::from_vec).collect();
        Self::from_vectors(rows, q)
    }

    pub fn from_vectors(rows: Vec<DVector<f64>>, q: usize) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Empty("data matrix has no rows".into()));
        }
        if q == 0 {
            return Err(Error::InvalidInput("dimension must be at least 1".into()));
        }
        for (i, r) in rows.iter().enumerate() {
            if r.len() != q {
                return Err(Error::InvalidInput(format!(
                    "row {i} has {} entries, expected {q}",
                    r.len()
                )));
            }
            if r.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput(format!("row {i} has a non-finite entry")));
            }
        }
        Ok(Self { rows, q })
    }

    /// Builds from an `n x q` matrix, one observation per row.
    pub fn from_matrix(m: &DMatrix<f64>) -> Result<Self> {
        let rows = m.row_iter().map(|r| r.transpose()).collect();
        Self::from_vectors(rows, m.ncols())
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn rows(&self) -> &[DVector<f64>] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &DVector<f64> {
        &self.rows[i]
    }

    pub fn n_nonzero(&self) -> usize {
        self.rows.iter().filter(|r| r.norm() > 0.0).count()
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n(), self.q, |i, j| self.rows[i][j])
    }

    /// The same sample with zero rows removed.
    pub fn nonzero(&self) -> Result<Self> {
        let rows: Vec<_> = self.rows.iter().filter(|r| r.norm() > 0.0).cloned().collect();
        if rows.is_empty() {
            return Err(Error::Empty("every observation is zero".into()));
        }
        Ok(Self { rows, q: self.q })
    }

    pub fn scaled(&self, c: f64) -> Self {
        self.map_rows(|r| r * c)
    }

    pub fn translated(&self, a: &DVector<f64>) -> Self {
        self.map_rows(|r| r + a)
    }

    /// Applies `x -> A x` to every observation; `A` must be square of order `q`.
    pub fn transformed(&self, a: &DMatrix<f64>) -> Self {
        self.map_rows(|r| a * r)
    }

    /// Applies `f` to every row; `f` must return vectors of one common length.
    pub fn map_rows(&self, f: impl Fn(&DVector<f64>) -> DVector<f64>) -> Self {
        let rows: Vec<DVector<f64>> = self.rows.iter().map(f).collect();
        let q = rows[0].len();
        debug_assert!(rows.iter().all(|r| r.len() == q));
        Self { rows, q }
    }

    pub fn select(&self, idx: &[usize]) -> Result<Self> {
        let rows: Vec<_> = idx.iter().map(|&i| self.rows[i].clone()).collect();
        Self::from_vectors(rows, self.q)
    }

    pub fn concat(&self, other: &DataMatrix) -> Result<Self> {
        if other.q != self.q {
            return Err(Error::DimensionMismatch { expected: self.q, found: other.q });
        }
        let mut rows = self.rows.clone();
        rows.extend(other.rows.iter().cloned());
        Ok(Self { rows, q: self.q })
    }

    /// `(1/n) sum x_i x_i^T`, without centering.
    pub fn second_moment(&self) -> DMatrix<f64> {
        let mut acc = DMatrix::zeros(self.q, self.q);
        for r in &self.rows {
            acc.ger(1.0, r, r, 1.0);
        }
        acc / self.n() as f64
    }

    /// Rank of the stacked observations.
    pub fn rank(&self) -> usize {
        let m = self.to_matrix();
        let svd = m.svd(false, false);
        let smax = svd.singular_values.max();
        if smax == 0.0 {
            return 0;
        }
        svd.singular_values.iter().filter(|&&s| s > 1e-10 * smax).count()
    }
}

/// Eigen decomposition of a symmetric matrix with eigenvalues sorted in
/// descending order and a deterministic sign for each eigenvector (its entry
/// of largest magnitude is positive).
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralDecomposition {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: DMatrix<f64>,
}

impl SpectralDecomposition {
    /// Decomposes a symmetric (not necessarily definite) matrix.
    pub fn of_symmetric(m: &DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::InvalidInput("matrix is not square".into()));
        }
        let asym = relative_asymmetry(m);
        if asym > SYMMETRY_TOL {
            return Err(Error::NotSymmetric(asym));
        }
        let sym = symmetrize(m);
        let q = sym.nrows();
        let eig = SymmetricEigen::try_new(sym, 1e-15, 10_000).ok_or(Error::EigenFailure)?;
        let mut order: Vec<usize> = (0..q).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let eigenvalues = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let mut eigenvectors = DMatrix::zeros(q, q);
        for (col, &i) in order.iter().enumerate() {
            let mut v = eig.eigenvectors.column(i).clone_owned();
            let lead = v.iter().copied().fold(0.0_f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
            if lead < 0.0 {
                v.neg_mut();
            }
            eigenvectors.set_column(col, &v);
        }
        Ok(Self { eigenvalues, eigenvectors })
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// `P f(Λ) P^T`.
    pub fn reconstruct_with(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let d = DVector::from_iterator(self.dim(), self.eigenvalues.iter().map(|&l| f(l)));
        let p = &self.eigenvectors;
        symmetrize(&(p * DMatrix::from_diagonal(&d) * p.transpose()))
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        self.reconstruct_with(|l| l)
    }
}

/// A symmetric positive-definite matrix. The spectral decomposition is
/// computed at construction and cached.
#[derive(Debug, Clone)]
pub struct SymmetricPd {
    m: DMatrix<f64>,
    spectral: SpectralDecomposition,
    inverse: OnceLock<DMatrix<f64>>,
}

impl PartialEq for SymmetricPd {
    fn eq(&self, other: &Self) -> bool {
        self.m == other.m
    }
}

impl SymmetricPd {
    /// Validates symmetry (relative tolerance 1e-12) and definiteness. The
    /// stored matrix is the symmetrized `(M + M^T)/2`.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() == 0 {
            return Err(Error::InvalidInput("empty matrix".into()));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("matrix has non-finite entries".into()));
        }
        let spectral = SpectralDecomposition::of_symmetric(&m)?;
        let smallest = *spectral.eigenvalues.last().unwrap();
        if !(smallest > 0.0) {
            return Err(Error::NotPositiveDefinite(smallest));
        }
        Ok(Self {
            m: symmetrize(&m),
            spectral,
            inverse: OnceLock::new(),
        })
    }

    pub fn identity(q: usize) -> Self {
        Self::new(DMatrix::identity(q, q)).expect("identity is positive definite")
    }

    pub fn from_diagonal(d: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_column_slice(d)))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.m
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn spectral(&self) -> &SpectralDecomposition {
        &self.spectral
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.spectral.eigenvalues
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.spectral.eigenvalues[0]
    }

    pub fn min_eigenvalue(&self) -> f64 {
        *self.spectral.eigenvalues.last().unwrap()
    }

    pub fn trace(&self) -> f64 {
        self.m.trace()
    }

    pub fn log_det(&self) -> f64 {
        self.spectral.eigenvalues.iter().map(|l| l.ln()).sum()
    }

    pub fn inverse(&self) -> &DMatrix<f64> {
        self.inverse
            .get_or_init(|| self.spectral.reconstruct_with(|l| 1.0 / l))
    }

    pub fn sqrt(&self) -> DMatrix<f64> {
        self.spectral.reconstruct_with(f64::sqrt)
    }

    pub fn inv_sqrt(&self) -> DMatrix<f64> {
        self.spectral.reconstruct_with(|l| 1.0 / l.sqrt())
    }

    /// `x^T M^{-1} x`.
    pub fn quad_inv(&self, x: &DVector<f64>) -> f64 {
        x.dot(&(self.inverse() * x))
    }

    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::new(&self.m * c)
    }

    /// `A M A^T`.
    pub fn congruence(&self, a: &DMatrix<f64>) -> Result<Self> {
        Self::new(symmetrize(&(a * &self.m * a.transpose())))
    }

    pub fn condition_number(&self) -> f64 {
        self.max_eigenvalue() / self.min_eigenvalue()
    }
}

pub(crate) fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn relative_asymmetry(m: &DMatrix<f64>) -> f64 {
    let norm = m.norm();
    if norm == 0.0 {
        return 0.0;
    }
    (m - m.transpose()).norm() / norm
}

pub fn spectral_decompose(m: &SymmetricPd) -> SpectralDecomposition {
    m.spectral().clone()
}

/// Ratio of the largest to the smallest eigenvalue.
pub fn condition_number(m: &SymmetricPd) -> f64 {
    m.condition_number()
}

/// `||log(V1^{-1/2} V2 V1^{-1/2})||_F`.
pub fn riemannian_distance(v1: &SymmetricPd, v2: &SymmetricPd) -> Result<f64> {
    if v1.dim() != v2.dim() {
        return Err(Error::DimensionMismatch { expected: v1.dim(), found: v2.dim() });
    }
    let w = v1.inv_sqrt();
    let inner = symmetrize(&(&w * v2.matrix() * &w));
    let eig = SpectralDecomposition::of_symmetric(&inner)?;
    Ok(eig
        .eigenvalues
        .iter()
        .map(|&mu| {
            let l = mu.max(f64::MIN_POSITIVE).ln();
            l * l
        })
        .sum::<f64>()
        .sqrt())
}

/// Normalizes to trace `q`: `q M / tr(M)`.
pub fn shape_of(m: &SymmetricPd) -> SymmetricPd {
    let q = m.dim() as f64;
    let mut s = m.matrix() * (q / m.trace());
    // one more pass so the trace is q to rounding
    let t = s.trace();
    s *= q / t;
    SymmetricPd::new(s).expect("positive rescaling of a PD matrix is PD")
}

/// Outcome of a general-position check.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GeneralPosition {
    pub holds: bool,
    /// True when the subset budget forced a randomized check.
    pub probabilistic: bool,
}

const GENERAL_POSITION_BUDGET: u128 = 1_000_000;
const GENERAL_POSITION_SAMPLES: usize = 10_000;

/// Whether every subset of `r <= q` observations spans an `r`-dimensional
/// subspace. It suffices to test subsets of size `min(n, q)`.
pub fn check_general_position(x: &DataMatrix) -> GeneralPosition {
    let n = x.n();
    let q = x.q();
    let k = n.min(q);
    let full_rank = |idx: &[usize]| -> bool {
        let m = DMatrix::from_fn(idx.len(), q, |i, j| x.row(idx[i])[j]);
        let sv = m.svd(false, false).singular_values;
        let smax = sv.max();
        smax > 0.0 && sv.min() > 1e-10 * smax
    };
    if binomial(n, k) <= GENERAL_POSITION_BUDGET {
        let holds = Combinations::new(n, k).all(|c| full_rank(&c));
        return GeneralPosition { holds, probabilistic: false };
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x6e65_7261_6c70_6f73);
    let holds = (0..GENERAL_POSITION_SAMPLES).all(|_| {
        let idx = index::sample(&mut rng, n, k).into_vec();
        full_rank(&idx)
    });
    GeneralPosition { holds, probabilistic: true }
}

/// Binomial coefficient, saturating at `u128::MAX`.
pub(crate) fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = match acc.checked_mul((n - i) as u128) {
            Some(v) => v / (i as u128 + 1),
            None => return u128::MAX,
        };
    }
    acc
}

/// Lexicographic `k`-subsets of `0..n`.
pub(crate) struct Combinations {
    idx: Vec<usize>,
    n: usize,
    done: bool,
}

impl Combinations {
    pub(crate) fn new(n: usize, k: usize) -> Self {
        Self {
            idx: (0..k).collect(),
            n,
            done: k > n,
        }
    }
}

impl Iterator for Combinations {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if self.done {
            return None;
        }
        let out = self.idx.clone();
        let k = self.idx.len();
        let mut i = k;
        loop {
            if i == 0 {
                self.done = true;
                break;
            }
            i -= 1;
            if self.idx[i] < self.n - k + i {
                self.idx[i] += 1;
                for j in i + 1..k {
                    self.idx[j] = self.idx[j - 1] + 1;
                }
                break;
            }
        }
        Some(out)
    }
}
