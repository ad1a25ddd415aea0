//! Fixed-point solvers for penalized and regularized M-estimating equations of
//! scatter.
//!
//! Three penalty forms are supported, all pulling toward a target `T`:
//!
//! * trace precision: `Sigma = (1/n) sum u(x'Sigma^{-1}x) x x' + eta T`
//! * Kullback-Leibler: `Sigma = (1-gamma)(1/n) sum u(x'Sigma^{-1}x) x x' + gamma T`
//! * regularized Tyler: `Sigma = (beta/n) sum x x' / (x'Sigma^{-1}x) + gamma T`
//!
//! A general target is handled by whitening `y = T^{-1/2} x`, solving with the
//! identity target, and mapping back with `T^{1/2} Sigma_Y T^{1/2}`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::location::RobustScale;
use crate::matrix::{binomial, symmetrize, Combinations, DataMatrix, SymmetricPd};
use crate::stats::lower_median;
use crate::weight::WeightFunction;

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Penalty {
    /// Trace-precision penalty with weight `eta >= 0`.
    Tp { eta: f64 },
    /// Kullback-Leibler penalty, `gamma` in `[0, 1]`.
    Kl { gamma: f64 },
    /// Distribution-free regularized Tyler equation, `0 <= beta < q`,
    /// `0 < gamma <= 1`.
    TylerBeta { beta: f64, gamma: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    Identity,
    /// `sigma^2 I` for a robust scale estimate.
    SigmaHat2(RobustScale),
    Matrix(SymmetricPd),
}

impl Target {
    pub fn matrix(&self, q: usize) -> Result<SymmetricPd> {
        match self {
            Target::Identity => Ok(SymmetricPd::identity(q)),
            Target::SigmaHat2(s) => SymmetricPd::identity(q).scaled(s.sigma2),
            Target::Matrix(m) => {
                if m.dim() != q {
                    return Err(Error::DimensionMismatch { expected: q, found: m.dim() });
                }
                Ok(m.clone())
            }
        }
    }

    pub fn label(&self) -> String {
        match self {
            Target::Identity => "identity".into(),
            Target::SigmaHat2(s) => format!("sigma2({})", s.sigma2),
            Target::Matrix(_) => "matrix".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PenaltySpec {
    pub kind: Penalty,
    pub target: Target,
}

impl PenaltySpec {
    pub fn new(kind: Penalty) -> Self {
        Self { kind, target: Target::Identity }
    }

    pub fn with_target(kind: Penalty, target: Target) -> Self {
        Self { kind, target }
    }

    pub fn tp(eta: f64) -> Self {
        Self::new(Penalty::Tp { eta })
    }

    pub fn kl(gamma: f64) -> Self {
        Self::new(Penalty::Kl { gamma })
    }

    pub fn tyler_beta(beta: f64, gamma: f64) -> Self {
        Self::new(Penalty::TylerBeta { beta, gamma })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { tol: DEFAULT_TOL, max_iter: DEFAULT_MAX_ITER }
    }
}

/// Solution of a penalized estimating equation with its diagnostics.
#[derive(Debug, Clone)]
pub struct ScatterEstimate {
    pub sigma: SymmetricPd,
    pub v: Option<SymmetricPd>,
    pub penalty: PenaltySpec,
    pub weight: WeightFunction,
    pub iterations: usize,
    /// Relative Frobenius change of the last iteration.
    pub final_step: f64,
    /// `||Sigma - RHS(Sigma)||_F / ||Sigma||_F` at the returned matrix.
    pub residual: f64,
    pub converged: bool,
    /// Observations used in the equation (zero rows dropped for Tyler weights).
    pub n_used: usize,
}

impl ScatterEstimate {
    pub fn ensure_converged(self) -> Result<Self> {
        if self.converged {
            Ok(self)
        } else {
            Err(Error::NotConverged { iterations: self.iterations, step: self.final_step })
        }
    }
}

/// Concentration of observations in data-spanned subspaces: for each
/// dimension `d < q`, the largest number of nonzero observations lying in a
/// `d`-dimensional subspace spanned by observations.
#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceProfile {
    pub n: usize,
    pub q: usize,
    /// `max_counts[d-1]` and a spanning witness for `d = 1..q-1`.
    pub max_counts: Vec<usize>,
    pub witnesses: Vec<Vec<usize>>,
    pub probabilistic: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ConditionA {
    Holds,
    Fails {
        dim: usize,
        count: usize,
        n: usize,
        /// Indices (into the nonzero observations) spanning the subspace.
        witness: Vec<usize>,
    },
}

impl ConditionA {
    pub fn holds(&self) -> bool {
        matches!(self, ConditionA::Holds)
    }
}

const SUBSPACE_BUDGET: u128 = 2_000_000;
const SUBSPACE_SAMPLES: usize = 200_000;

impl SubspaceProfile {
    pub fn new(x: &DataMatrix) -> Self {
        let q = x.q();
        let pts: Vec<DVector<f64>> = x.rows().iter().filter(|r| r.norm() > 0.0).cloned().collect();
        let n = pts.len();
        let total: u128 = (1..q).map(|d| binomial(n, d)).fold(0u128, |a, b| a.saturating_add(b));
        let probabilistic = total > SUBSPACE_BUDGET;
        let mut max_counts = Vec::with_capacity(q.saturating_sub(1));
        let mut witnesses = Vec::with_capacity(q.saturating_sub(1));
        for d in 1..q {
            let mut best = (0usize, Vec::new());
            let mut visit = |c: &[usize]| {
                if let Some(count) = span_count(&pts, c) {
                    if count > best.0 {
                        best = (count, c.to_vec());
                    }
                }
            };
            if d > n {
                max_counts.push(n);
                witnesses.push((0..n).collect());
                continue;
            }
            if probabilistic {
                use rand::seq::index;
                use rand::SeedableRng;
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x5eed_0000 + d as u64);
                for _ in 0..SUBSPACE_SAMPLES {
                    let c = index::sample(&mut rng, n, d).into_vec();
                    visit(&c);
                }
            } else {
                for c in Combinations::new(n, d) {
                    visit(&c);
                }
            }
            max_counts.push(best.0);
            witnesses.push(best.1);
        }
        Self { n, q, max_counts, witnesses, probabilistic }
    }

    /// `#{x_i in V}/n < dim(V)/beta` for every spanned `V` with `dim < q`.
    pub fn check(&self, beta: f64) -> ConditionA {
        if beta < 1.0 {
            return ConditionA::Holds;
        }
        for (i, &count) in self.max_counts.iter().enumerate() {
            let d = i + 1;
            if count as f64 * beta >= d as f64 * self.n as f64 {
                return ConditionA::Fails {
                    dim: d,
                    count,
                    n: self.n,
                    witness: self.witnesses[i].clone(),
                };
            }
        }
        ConditionA::Holds
    }
}

/// Number of points in the span of `pts[c]`, or `None` when those points are
/// linearly dependent (their span is covered at a lower dimension).
fn span_count(pts: &[DVector<f64>], c: &[usize]) -> Option<usize> {
    let q = pts[0].len();
    let d = c.len();
    let m = DMatrix::from_fn(q, d, |i, j| pts[c[j]][i]);
    let qr = m.qr();
    let r = qr.r();
    let rmax = (0..d).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    if (0..d).any(|i| r[(i, i)].abs() <= 1e-10 * rmax) {
        return None;
    }
    let basis = qr.q();
    let count = pts
        .iter()
        .filter(|p| {
            let proj = &basis * (basis.transpose() * *p);
            (*p - proj).norm() <= 1e-9 * p.norm()
        })
        .count();
    Some(count)
}

/// Condition A for the regularized Tyler equation at `beta`.
pub fn check_condition_a(x: &DataMatrix, beta: f64) -> ConditionA {
    if beta < 1.0 {
        return ConditionA::Holds;
    }
    SubspaceProfile::new(x).check(beta)
}

/// Coefficients of the fixed-point map on whitened data:
/// `Sigma <- scale (1/n) sum w(y'Sigma^{-1}y) y y' + shift I`.
struct FixedPointMap<'a> {
    rows: &'a [DVector<f64>],
    weight: &'a WeightFunction,
    scale: f64,
    shift: f64,
}

impl FixedPointMap<'_> {
    fn apply(&self, sigma_inv: &DMatrix<f64>) -> DMatrix<f64> {
        let q = sigma_inv.nrows();
        let mut acc = DMatrix::zeros(q, q);
        for y in self.rows {
            let s = y.dot(&(sigma_inv * y));
            let w = self.weight.u(s);
            acc.ger(w, y, y, 1.0);
        }
        let mut out = acc * (self.scale / self.rows.len() as f64);
        for i in 0..q {
            out[(i, i)] += self.shift;
        }
        symmetrize(&out)
    }
}

fn spd_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chol = m
        .clone()
        .cholesky()
        .ok_or(Error::NotPositiveDefinite(f64::NAN))?;
    Ok(chol.inverse())
}

pub fn solve_penalized(x: &DataMatrix, weight: &WeightFunction, penalty: &PenaltySpec) -> Result<ScatterEstimate> {
    solve_penalized_with(x, weight, penalty, &SolverOptions::default(), None)
}

/// As [`solve_penalized`], with explicit iteration controls and an optional
/// precomputed subspace profile of `x` for the existence check.
pub fn solve_penalized_with(
    x: &DataMatrix,
    weight: &WeightFunction,
    penalty: &PenaltySpec,
    opts: &SolverOptions,
    profile: Option<&SubspaceProfile>,
) -> Result<ScatterEstimate> {
    let q = x.q();
    let (weight, scale, shift) = match penalty.kind {
        Penalty::Tp { eta } => {
            if !(eta >= 0.0 && eta.is_finite()) {
                return Err(Error::Parameter(format!("eta must be non-negative, got {eta}")));
            }
            (weight.clone(), 1.0, eta)
        }
        Penalty::Kl { gamma } => {
            if !(0.0..=1.0).contains(&gamma) {
                return Err(Error::Parameter(format!("gamma must lie in [0, 1], got {gamma}")));
            }
            (weight.clone(), 1.0 - gamma, gamma)
        }
        Penalty::TylerBeta { beta, gamma } => {
            if !(beta >= 0.0 && beta < q as f64) {
                return Err(Error::Parameter(format!("beta must lie in [0, {q}), got {beta}")));
            }
            if !(gamma > 0.0 && gamma <= 1.0) {
                return Err(Error::Parameter(format!("gamma must lie in (0, 1], got {gamma}")));
            }
            if beta == 0.0 {
                let sigma = penalty.target.matrix(q)?.scaled(gamma)?;
                return Ok(ScatterEstimate {
                    sigma,
                    v: None,
                    penalty: penalty.clone(),
                    weight: WeightFunction::tyler(f64::MIN_POSITIVE)?,
                    iterations: 0,
                    final_step: 0.0,
                    residual: 0.0,
                    converged: true,
                    n_used: x.n_nonzero(),
                });
            }
            (WeightFunction::tyler(beta)?, 1.0, gamma)
        }
    };

    let data = if weight.is_tyler() { x.nonzero()? } else { x.clone() };

    // Tyler weights reduce every form to the regularized Tyler equation with
    // beta_eff = scale * kappa; its existence is governed by Condition A.
    if weight.is_tyler() && shift > 0.0 {
        let beta_eff = scale * weight.kappa();
        if beta_eff >= q as f64 {
            return Err(Error::Parameter(format!(
                "effective beta {beta_eff} must be below the dimension {q} for a penalized Tyler solution"
            )));
        }
        if beta_eff >= 1.0 {
            let cond = match profile {
                Some(p) => p.check(beta_eff),
                None => check_condition_a(&data, beta_eff),
            };
            if let ConditionA::Fails { dim, count, n, .. } = cond {
                return Err(Error::ConditionA { beta: beta_eff, dim, count, n });
            }
        }
    }
    if shift == 0.0 {
        let rank = data.rank();
        if rank < q {
            return Err(Error::RankDeficient { rank, dim: q });
        }
    }

    let target = penalty.target.matrix(q)?;
    let whitened_target = !matches!(penalty.target, Target::Identity);
    let work = if whitened_target { data.transformed(&target.inv_sqrt()) } else { data.clone() };

    let map = FixedPointMap { rows: work.rows(), weight: &weight, scale, shift };
    // Sigma_0 = T, i.e. the identity after whitening
    let mut sigma = DMatrix::identity(q, q);
    let mut step = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iter {
        let inv = spd_inverse(&sigma)?;
        let next = map.apply(&inv);
        iterations += 1;
        step = (&next - &sigma).norm() / next.norm();
        sigma = next;
        if !step.is_finite() {
            return Err(Error::NotConverged { iterations, step });
        }
        if step < opts.tol {
            converged = true;
            break;
        }
    }

    let sigma_x = if whitened_target {
        let half = target.sqrt();
        symmetrize(&(&half * &sigma * &half))
    } else {
        sigma
    };
    let sigma = SymmetricPd::new(sigma_x)?;
    let residual = {
        let inv = sigma.inverse();
        let rhs_map = FixedPointMap { rows: data.rows(), weight: &weight, scale, shift: 0.0 };
        let rhs = rhs_map.apply(inv) + target.matrix() * shift;
        (sigma.matrix() - rhs).norm() / sigma.matrix().norm()
    };
    let mut est = ScatterEstimate {
        sigma,
        v: None,
        penalty: penalty.clone(),
        weight,
        iterations,
        final_step: step,
        residual,
        converged,
        n_used: data.n(),
    };
    est.v = adjusted_v(&est).ok();
    Ok(est)
}

/// Removes the penalty's pull toward the target:
/// `Sigma - eta T` (trace precision) or `(Sigma - gamma T)/(1 - gamma)`.
pub fn adjusted_v(est: &ScatterEstimate) -> Result<SymmetricPd> {
    let q = est.sigma.dim();
    let t = est.penalty.target.matrix(q)?;
    let v = match est.penalty.kind {
        Penalty::Tp { eta } => est.sigma.matrix() - t.matrix() * eta,
        Penalty::Kl { gamma } | Penalty::TylerBeta { gamma, .. } => {
            if gamma >= 1.0 {
                return Err(Error::Parameter(
                    "gamma = 1 has no adjusted form; use the generalized SSCM".into(),
                ));
            }
            (est.sigma.matrix() - t.matrix() * gamma) / (1.0 - gamma)
        }
    };
    crate::sscm::positive_definite_or_rank_error(symmetrize(&v))
}

/// Unregularized Tyler shape (trace `q`), the `beta = q` end of the
/// regularized family. Requires Condition A at `beta = q`.
pub fn solve_tyler_shape(
    x: &DataMatrix,
    opts: &SolverOptions,
    profile: Option<&SubspaceProfile>,
) -> Result<ScatterEstimate> {
    let q = x.q();
    let data = x.nonzero()?;
    let cond = match profile {
        Some(p) => p.check(q as f64),
        None => check_condition_a(&data, q as f64),
    };
    if let ConditionA::Fails { dim, count, n, .. } = cond {
        return Err(Error::ConditionA { beta: q as f64, dim, count, n });
    }
    let weight = WeightFunction::tyler(q as f64)?;
    let map = FixedPointMap { rows: data.rows(), weight: &weight, scale: 1.0, shift: 0.0 };
    let qf = q as f64;
    let mut sigma = DMatrix::identity(q, q);
    let mut step = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iter {
        let inv = spd_inverse(&sigma)?;
        let mut next = map.apply(&inv);
        let tr = next.trace();
        next *= qf / tr;
        iterations += 1;
        step = (&next - &sigma).norm() / next.norm();
        sigma = next;
        if !step.is_finite() {
            return Err(Error::NotConverged { iterations, step });
        }
        if step < opts.tol {
            converged = true;
            break;
        }
    }
    let sigma = SymmetricPd::new(sigma)?;
    let residual = {
        let mut rhs = map.apply(sigma.inverse());
        let tr = rhs.trace();
        rhs *= qf / tr;
        (sigma.matrix() - rhs).norm() / sigma.matrix().norm()
    };
    Ok(ScatterEstimate {
        v: Some(sigma.clone()),
        sigma,
        penalty: PenaltySpec::new(Penalty::TylerBeta { beta: qf, gamma: 0.0 }),
        weight,
        iterations,
        final_step: step,
        residual,
        converged,
        n_used: data.n(),
    })
}

/// `sigma_beta^2 * shape` with `sigma_beta^2 = median{x' shape^{-1} x}/q`
/// (lower median, zero rows included).
pub fn scaled_scatter(shape: &SymmetricPd, x: &DataMatrix) -> Result<SymmetricPd> {
    if shape.dim() != x.q() {
        return Err(Error::DimensionMismatch { expected: shape.dim(), found: x.q() });
    }
    let forms: Vec<f64> = x.rows().iter().map(|r| shape.quad_inv(r)).collect();
    let med = lower_median(&forms).expect("data matrix is non-empty");
    if !(med > 0.0) {
        return Err(Error::DegenerateScale);
    }
    shape.scaled(med / x.q() as f64)
}
