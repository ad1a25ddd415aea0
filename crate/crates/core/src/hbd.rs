//! The median angular criterion `D(Z; S) = median_i d(z_i, S)` with
//! `d(z, S) = q log(z'S^{-1}z / z'z) + log det S`, its minimizer over shape
//! matrices (a high-breakdown affine-equivariant shape statistic), the
//! matching scale completion, and a location/scatter version obtained by
//! appending a constant coordinate.
//!
//! `D` uses the upper median. For even `n` the lower median lets `D` decrease
//! without bound on some configurations (two orthogonal pairs `+-e_1, +-e_2`
//! already do), so no minimizer would exist.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::location::CenterSpec;
use crate::matrix::{shape_of, symmetrize, DataMatrix, SymmetricPd};
use crate::nelder_mead::{minimize, NmOptions};
use crate::parallel::map_ordered;
use crate::penalized::{scaled_scatter, solve_penalized, solve_tyler_shape, PenaltySpec, SolverOptions};
use crate::sscm::sscm;
use crate::stats::upper_median;
use crate::tuning::{tilde_beta, EstimatorKind};
use crate::weight::WeightFunction;

pub const MAX_DIM: usize = 6;
const LOG_DIAG_LIMIT: f64 = 30.0;

pub fn d_value(z: &DVector<f64>, shape: &SymmetricPd) -> Result<f64> {
    if z.len() != shape.dim() {
        return Err(Error::DimensionMismatch { expected: shape.dim(), found: z.len() });
    }
    let nn = z.norm_squared();
    if nn == 0.0 {
        return Err(Error::InvalidInput("d is undefined at z = 0".into()));
    }
    Ok(shape.dim() as f64 * (shape.quad_inv(z) / nn).ln() + shape.log_det())
}

/// Upper median of `d` over the nonzero rows.
#[allow(non_snake_case)]
pub fn D_value(z: &DataMatrix, shape: &SymmetricPd) -> Result<f64> {
    let terms: Vec<f64> = z
        .rows()
        .iter()
        .filter(|r| r.norm_squared() > 0.0)
        .map(|r| d_value(r, shape))
        .collect::<Result<_>>()?;
    upper_median(&terms).ok_or_else(|| Error::Empty("every row is zero".into()))
}

#[derive(Debug, Clone)]
pub struct HbdOptions {
    pub restarts: usize,
    pub max_evals: usize,
    /// Extra local searches from the incumbent after the restarts.
    pub polish: usize,
    pub seed: u64,
}

impl Default for HbdOptions {
    fn default() -> Self {
        Self { restarts: 20, max_evals: 4000, polish: 3, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestartRecord {
    pub start: String,
    pub start_objective: f64,
    pub objective: f64,
    pub evaluations: usize,
}

#[derive(Debug, Clone)]
pub struct HbdResult {
    /// Trace `q`.
    pub shape: SymmetricPd,
    pub objective_value: f64,
    pub optimizer_trace: Vec<RestartRecord>,
    pub restarts: usize,
}

/// Cholesky factor with unit `(0,0)` entry, packed row-wise with log
/// diagonals; the fixed entry is omitted.
struct LogCholesky {
    q: usize,
}

impl LogCholesky {
    fn len(&self) -> usize {
        self.q * (self.q + 1) / 2 - 1
    }

    fn unpack(&self, theta: &[f64]) -> DMatrix<f64> {
        let mut l = DMatrix::zeros(self.q, self.q);
        l[(0, 0)] = 1.0;
        let mut k = 0;
        for i in 1..self.q {
            for j in 0..=i {
                l[(i, j)] = if i == j { theta[k].clamp(-LOG_DIAG_LIMIT, LOG_DIAG_LIMIT).exp() } else { theta[k] };
                k += 1;
            }
        }
        l
    }

    fn pack(&self, s: &SymmetricPd) -> Vec<f64> {
        let l = s.matrix().clone().cholesky().expect("PD matrix has a Cholesky factor").l();
        let l = &l / l[(0, 0)];
        let mut theta = Vec::with_capacity(self.len());
        for i in 1..self.q {
            for j in 0..=i {
                theta.push(if i == j { l[(i, j)].ln() } else { l[(i, j)] });
            }
        }
        theta
    }

    fn shape(&self, theta: &[f64]) -> Result<SymmetricPd> {
        let l = self.unpack(theta);
        let s = SymmetricPd::new(symmetrize(&(&l * l.transpose())))?;
        Ok(shape_of(&s))
    }
}

/// `D` evaluated through the factor: `x'S^{-1}x = ||L^{-1}x||^2`.
fn objective(lc: &LogCholesky, rows: &[DVector<f64>], theta: &[f64]) -> f64 {
    let l = lc.unpack(theta);
    let q = lc.q as f64;
    let log_det: f64 = 2.0 * (0..lc.q).map(|i| l[(i, i)].ln()).sum::<f64>();
    let mut terms = Vec::with_capacity(rows.len());
    for x in rows {
        let Some(y) = l.solve_lower_triangular(x) else {
            return f64::INFINITY;
        };
        terms.push(q * (y.norm_squared() / x.norm_squared()).ln() + log_det);
    }
    upper_median(&terms).unwrap_or(f64::INFINITY)
}

fn starting_shapes(x: &DataMatrix) -> Vec<(String, SymmetricPd)> {
    let q = x.q();
    let mut starts = vec![("identity".to_string(), SymmetricPd::identity(q))];
    if let Ok(s) = sscm(x, &CenterSpec::origin(q)).and_then(|s| s.to_pd()) {
        starts.push(("sscm".into(), shape_of(&s)));
    }
    if let Ok(t) = tilde_beta(x, EstimatorKind::SigmaShape) {
        starts.push((format!("tilde_beta({})", t.beta_star), t.shape));
    }
    if let Ok(est) = solve_tyler_shape(x, &SolverOptions::default(), None) {
        if est.converged {
            starts.push(("tyler".into(), est.sigma));
        }
    }
    for i in 1..2 * q {
        let beta = 0.5 * i as f64;
        let fit = WeightFunction::tyler(beta)
            .and_then(|w| solve_penalized(x, &w, &PenaltySpec::tyler_beta(beta, 0.5)));
        if let Ok(est) = fit {
            if est.converged {
                starts.push((format!("tyler_beta({beta})"), shape_of(&est.sigma)));
            }
        }
    }
    starts
}

/// Minimizes `D` over trace-`q` shapes by multi-start Nelder-Mead on a
/// log-Cholesky parameterization. Heuristic: the best of the restarts is
/// returned, with a record of each.
pub fn sigma_r(x: &DataMatrix, opts: &HbdOptions) -> Result<HbdResult> {
    let q = x.q();
    if q > MAX_DIM {
        return Err(Error::Parameter(format!("the median shape search supports q <= {MAX_DIM}, got {q}")));
    }
    let rank = x.rank();
    if rank < q {
        return Err(Error::RankDeficient { rank, dim: q });
    }
    let data = x.nonzero()?;
    let rows = data.rows();
    let lc = LogCholesky { q };
    let nm = NmOptions { max_evals: opts.max_evals, f_tol: 1e-10, x_tol: 1e-7, initial_step: 0.3 };

    let mut starts: Vec<(String, Vec<f64>)> =
        starting_shapes(&data).iter().map(|(name, s)| (name.clone(), lc.pack(s))).collect();
    starts.truncate(opts.restarts.max(1));
    // fill the remaining restarts with seeded perturbations of the best start
    let best_start = starts
        .iter()
        .min_by(|a, b| objective(&lc, rows, &a.1).total_cmp(&objective(&lc, rows, &b.1)))
        .map(|s| s.1.clone())
        .expect("identity start is always present");
    let mut k = 0u64;
    while starts.len() < opts.restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(k));
        let theta: Vec<f64> = best_start.iter().map(|t| t + 0.5 * rng.sample::<f64, _>(StandardNormal)).collect();
        starts.push((format!("perturbed({k})"), theta));
        k += 1;
    }

    let f = |t: &[f64]| objective(&lc, rows, t);
    let runs = map_ordered(&starts, |(name, theta)| {
        let r = minimize(f, theta, &nm);
        let record = RestartRecord {
            start: name.clone(),
            start_objective: f(theta),
            objective: r.f,
            evaluations: r.evals,
        };
        (record, r.x)
    });
    let mut trace: Vec<RestartRecord> = runs.iter().map(|(r, _)| r.clone()).collect();
    let mut best = runs
        .iter()
        .enumerate()
        .min_by(|(i, a), (j, b)| a.0.objective.total_cmp(&b.0.objective).then(i.cmp(j)))
        .map(|(_, r)| (r.0.objective, r.1.clone()))
        .expect("at least one restart");
    for p in 0..opts.polish {
        let r = minimize(f, &best.1, &NmOptions { initial_step: 0.1 / (p + 1) as f64, ..nm });
        trace.push(RestartRecord {
            start: format!("polish({p})"),
            start_objective: best.0,
            objective: r.f,
            evaluations: r.evals,
        });
        if r.f < best.0 {
            best = (r.f, r.x);
        }
    }
    let shape = lc.shape(&best.1)?;
    let objective_value = D_value(&data, &shape)?;
    Ok(HbdResult { shape, objective_value, restarts: trace.len(), optimizer_trace: trace })
}

/// `sigma_R^2 * shape` with `sigma_R^2 = median{x' shape^{-1} x}/q`.
pub fn sigma_sc_r(x: &DataMatrix, opts: &HbdOptions) -> Result<SymmetricPd> {
    let r = sigma_r(x, opts)?;
    scaled_scatter(&r.shape, x)
}

#[derive(Debug, Clone)]
pub struct AffineLocScatter {
    pub mu: DVector<f64>,
    pub sigma: SymmetricPd,
    pub alpha: f64,
    /// The scaled fit on the augmented rows `(x_i, 1)`.
    pub augmented: SymmetricPd,
}

impl AffineLocScatter {
    /// `[[Sigma + alpha mu mu', alpha mu], [alpha mu', alpha]]`.
    pub fn recompose(&self) -> DMatrix<f64> {
        let q = self.mu.len();
        let mut m = DMatrix::zeros(q + 1, q + 1);
        let top = self.sigma.matrix() + &self.mu * self.mu.transpose() * self.alpha;
        m.view_mut((0, 0), (q, q)).copy_from(&top);
        for i in 0..q {
            m[(i, q)] = self.alpha * self.mu[i];
            m[(q, i)] = self.alpha * self.mu[i];
        }
        m[(q, q)] = self.alpha;
        m
    }
}

/// Location and scatter from the scaled median-shape fit of `(x_i, 1)`.
pub fn affine_location_scatter(x: &DataMatrix, opts: &HbdOptions) -> Result<AffineLocScatter> {
    let q = x.q();
    let aug = x.map_rows(|r| {
        let mut v = DVector::from_element(q + 1, 1.0);
        v.rows_mut(0, q).copy_from(r);
        v
    });
    let m = sigma_sc_r(&aug, opts)?;
    let mm = m.matrix();
    let alpha = mm[(q, q)];
    if !(alpha > 0.0) {
        return Err(Error::InvalidInput(format!("augmented fit has alpha = {alpha}; the optimizer failed")));
    }
    let mu = mm.view((0, q), (q, 1)).clone_owned().column(0) / alpha;
    let sigma = symmetrize(&(mm.view((0, 0), (q, q)) - &mu * mu.transpose() * alpha));
    let sigma = SymmetricPd::new(sigma)?;
    Ok(AffineLocScatter { mu, sigma, alpha, augmented: m })
}
