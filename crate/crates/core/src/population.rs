//! Elliptical sampling and the population version of the penalized
//! Kullback-Leibler equation with target `I`.
//!
//! For `x = Sigma_o^{1/2} z` with `z` spherical, the population solution
//! shares eigenvectors with `Sigma_o` and its eigenvalues solve
//!
//! `lambda_j = (1-gamma) lambda_oj E[u(sum_k lambda_ok Z_k^2 / lambda_k) Z_j^2] + gamma`.
//!
//! The expectation is a Monte Carlo average over one frozen sample. The
//! sample is closed under cyclic shifts of the coordinates, which leaves the
//! spherical law unchanged and makes the average exactly symmetric in
//! coordinates with tied `lambda_o`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::parallel::map_ordered;
use crate::weight::WeightFunction;

pub const DEFAULT_DRAWS: usize = 100_000;
const TOL: f64 = 1e-9;
const MAX_ITER: usize = 5000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum Radial {
    /// `r^2 ~ chi^2_q`.
    Normal,
    /// Multivariate t with `dof` degrees of freedom.
    StudentT { dof: f64 },
    PointMass { r: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EllipticalModel {
    pub q: usize,
    /// Descending, positive.
    pub sigma_o_eigenvalues: Vec<f64>,
    pub radial: Radial,
    /// Orthonormal columns; `None` means the identity.
    pub eigenvectors: Option<DMatrix<f64>>,
}

impl EllipticalModel {
    pub fn new(eigenvalues: Vec<f64>, radial: Radial) -> Result<Self> {
        if eigenvalues.is_empty() {
            return Err(Error::InvalidInput("model needs at least one eigenvalue".into()));
        }
        if eigenvalues.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
            return Err(Error::Parameter("model eigenvalues must be positive".into()));
        }
        if eigenvalues.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::Parameter("model eigenvalues must be in descending order".into()));
        }
        match radial {
            Radial::StudentT { dof } if !(dof > 0.0) => {
                return Err(Error::Parameter(format!("degrees of freedom must be positive, got {dof}")))
            }
            Radial::PointMass { r } if !(r > 0.0) => {
                return Err(Error::Parameter(format!("radius must be positive, got {r}")))
            }
            _ => {}
        }
        Ok(Self { q: eigenvalues.len(), sigma_o_eigenvalues: eigenvalues, radial, eigenvectors: None })
    }

    pub fn with_eigenvectors(mut self, p: DMatrix<f64>) -> Result<Self> {
        if p.nrows() != self.q || p.ncols() != self.q {
            return Err(Error::DimensionMismatch { expected: self.q, found: p.nrows() });
        }
        if (p.transpose() * &p - DMatrix::identity(self.q, self.q)).amax() > 1e-10 {
            return Err(Error::InvalidInput("eigenvector matrix is not orthogonal".into()));
        }
        self.eigenvectors = Some(p);
        Ok(self)
    }

    /// `diag(10, 1, ..., 1)`.
    pub fn spiked(q: usize) -> Result<Self> {
        let mut ev = vec![1.0; q];
        ev[0] = 10.0;
        Self::new(ev, Radial::Normal)
    }

    /// Eigenvalues evenly spaced from 10 down to 1.
    pub fn linear(q: usize) -> Result<Self> {
        if q == 1 {
            return Self::new(vec![10.0], Radial::Normal);
        }
        Self::new((0..q).map(|j| 10.0 - 9.0 * j as f64 / (q - 1) as f64).collect(), Radial::Normal)
    }

    /// `Sigma_o = P Lambda_o P'`.
    pub fn sigma_o(&self) -> DMatrix<f64> {
        let d = DMatrix::from_diagonal(&DVector::from_column_slice(&self.sigma_o_eigenvalues));
        match &self.eigenvectors {
            Some(p) => p * d * p.transpose(),
            None => d,
        }
    }

    /// Draws `x = Sigma_o^{1/2} z`.
    pub fn sample(&self, n: usize, seed: u64) -> Vec<DVector<f64>> {
        let half = DMatrix::from_diagonal(&DVector::from_iterator(
            self.q,
            self.sigma_o_eigenvalues.iter().map(|l| l.sqrt()),
        ));
        let a = match &self.eigenvectors {
            Some(p) => p * half * p.transpose(),
            None => half,
        };
        sample_spherical(self, n, seed).into_iter().map(|z| &a * z).collect()
    }
}

/// `Z = r u` with `u` a normalized standard normal vector and `r` from the
/// radial law, independent of `u`.
pub fn sample_spherical(model: &EllipticalModel, n: usize, seed: u64) -> Vec<DVector<f64>> {
    let q = model.q;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chi_q = ChiSquared::new(q as f64).expect("q is positive");
    let chi_nu = match model.radial {
        Radial::StudentT { dof } => Some(ChiSquared::new(dof).expect("validated dof")),
        _ => None,
    };
    (0..n)
        .map(|_| {
            let mut u = DVector::from_fn(q, |_, _| rng.sample::<f64, _>(StandardNormal));
            while u.norm() == 0.0 {
                u = DVector::from_fn(q, |_, _| rng.sample::<f64, _>(StandardNormal));
            }
            u.normalize_mut();
            let r = match model.radial {
                Radial::Normal => chi_q.sample(&mut rng).sqrt(),
                Radial::StudentT { dof } => {
                    let w = chi_nu.as_ref().expect("set for t").sample(&mut rng) / dof;
                    (chi_q.sample(&mut rng) / w).sqrt()
                }
                Radial::PointMass { r } => r,
            };
            u * r
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct PopulationSolution {
    pub lambda: Vec<f64>,
    /// `(lambda - gamma)/(1 - gamma)`; `None` at `gamma = 1`.
    pub lambda_v: Option<Vec<f64>>,
    pub gamma: f64,
    pub weight: WeightFunction,
    pub mc_draws: usize,
    pub seed: u64,
    /// Largest relative change of the final iteration.
    pub residual: f64,
    pub iterations: usize,
    /// Monte Carlo covariance of `lambda`.
    pub lambda_cov: DMatrix<f64>,
}

impl PopulationSolution {
    pub fn condition_number(&self) -> f64 {
        self.lambda[0] / self.lambda[self.lambda.len() - 1]
    }

    pub fn condition_number_v(&self) -> Option<f64> {
        self.lambda_v.as_ref().map(|v| v[0] / v[v.len() - 1])
    }

    pub fn lambda_se(&self, j: usize) -> f64 {
        self.lambda_cov[(j, j)].max(0.0).sqrt()
    }

    /// Standard error of `lambda_i - lambda_j`.
    pub fn difference_se(&self, i: usize, j: usize) -> f64 {
        let c = &self.lambda_cov;
        (c[(i, i)] + c[(j, j)] - 2.0 * c[(i, j)]).max(0.0).sqrt()
    }

    /// Delta-method standard error of `lambda_i / lambda_j`.
    pub fn ratio_se(&self, i: usize, j: usize) -> f64 {
        ratio_se(&self.lambda, &self.lambda_cov, i, j)
    }

    /// Delta-method standard error of `lambda_v,i / lambda_v,j`.
    pub fn ratio_v_se(&self, i: usize, j: usize) -> Option<f64> {
        let v = self.lambda_v.as_ref()?;
        let s = 1.0 / (1.0 - self.gamma);
        Some(ratio_se(v, &(&self.lambda_cov * (s * s)), i, j))
    }
}

fn ratio_se(l: &[f64], c: &DMatrix<f64>, i: usize, j: usize) -> f64 {
    let (a, b) = (l[i], l[j]);
    let var = c[(i, i)] / (b * b) + a * a * c[(j, j)] / b.powi(4) - 2.0 * a * c[(i, j)] / b.powi(3);
    var.max(0.0).sqrt()
}

/// Base draws plus all cyclic coordinate shifts of each, `ceil(n/q) * q` in total.
fn frozen_sample(model: &EllipticalModel, n: usize, seed: u64) -> (Vec<Vec<f64>>, usize) {
    let q = model.q;
    let base = n.div_ceil(q).max(1);
    let draws = sample_spherical(model, base, seed);
    let mut out = Vec::with_capacity(base * q);
    for z in &draws {
        let sq: Vec<f64> = z.iter().map(|v| v * v).collect();
        for shift in 0..q {
            out.push((0..q).map(|j| sq[(j + shift) % q]).collect());
        }
    }
    (out, base)
}

/// Solves the eigenvalue system by fixed-point iteration from
/// `lambda = lambda_o`, on one frozen sample of about `n` draws.
pub fn solve_lambda_system(
    model: &EllipticalModel,
    weight: &WeightFunction,
    gamma: f64,
    n: usize,
    seed: u64,
) -> Result<PopulationSolution> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::Parameter(format!("gamma must lie in (0, 1], got {gamma}")));
    }
    if n == 0 {
        return Err(Error::Parameter("need at least one Monte Carlo draw".into()));
    }
    let q = model.q;
    let lo = &model.sigma_o_eigenvalues;
    let (sq, base) = frozen_sample(model, n, seed);
    let total = sq.len() as f64;

    let expectations = |lambda: &[f64]| -> Vec<f64> {
        let ratio: Vec<f64> = (0..q).map(|k| lo[k] / lambda[k]).collect();
        let mut acc = vec![0.0; q];
        for z2 in &sq {
            let s: f64 = z2.iter().zip(&ratio).map(|(z, r)| z * r).sum();
            let w = weight.u(s);
            for j in 0..q {
                acc[j] += w * z2[j];
            }
        }
        acc.iter().map(|a| a / total).collect()
    };

    let mut lambda = lo.clone();
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    while iterations < MAX_ITER {
        let e = expectations(&lambda);
        let next: Vec<f64> = (0..q).map(|j| (1.0 - gamma) * lo[j] * e[j] + gamma).collect();
        residual = next.iter().zip(&lambda).map(|(a, b)| ((a - b) / b).abs()).fold(0.0, f64::max);
        lambda = next;
        iterations += 1;
        if !residual.is_finite() {
            break;
        }
        if residual < TOL {
            break;
        }
    }
    if !(residual < TOL) {
        return Err(Error::NotConverged { iterations, step: residual });
    }

    // covariance of the per-base-draw averages (shifts of one draw are dependent)
    let ratio: Vec<f64> = (0..q).map(|k| lo[k] / lambda[k]).collect();
    let mut groups = DMatrix::<f64>::zeros(base, q);
    for (idx, z2) in sq.iter().enumerate() {
        let s: f64 = z2.iter().zip(&ratio).map(|(z, r)| z * r).sum();
        let w = weight.u(s);
        for j in 0..q {
            groups[(idx / q, j)] += w * z2[j] / q as f64;
        }
    }
    let means = groups.row_mean();
    let centered = DMatrix::from_fn(base, q, |i, j| groups[(i, j)] - means[j]);
    let cov_e = centered.transpose() * centered / ((base.max(2) - 1) as f64 * base as f64);
    let scale = DMatrix::from_diagonal(&DVector::from_iterator(q, lo.iter().map(|l| (1.0 - gamma) * l)));
    let lambda_cov = &scale * cov_e * &scale;

    let lambda_v = if gamma < 1.0 {
        let v: Vec<f64> = lambda.iter().map(|l| (l - gamma) / (1.0 - gamma)).collect();
        if let Some(j) = v.iter().position(|x| *x <= 0.0) {
            return Err(Error::InvalidInput(format!(
                "lambda_{} - gamma is not positive; Monte Carlo noise dominates at these parameters",
                j + 1
            )));
        }
        Some(v)
    } else {
        None
    };
    Ok(PopulationSolution {
        lambda,
        lambda_v,
        gamma,
        weight: weight.clone(),
        mc_draws: sq.len(),
        seed,
        residual,
        iterations,
        lambda_cov,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub model: String,
    pub q: usize,
    pub kappa: f64,
    pub gamma: f64,
    pub cn: Option<f64>,
    pub cn_v: Option<f64>,
    pub cn_se: Option<f64>,
    pub cn_v_se: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct NamedModel {
    pub name: String,
    pub model: EllipticalModel,
}

/// Condition numbers `lambda_1/lambda_q` and `lambda_v,1/lambda_v,q` under
/// `u(s) = kappa/(s + 2)` for every (model, kappa, gamma) cell. Cell `i`
/// uses seed `seed + i`.
pub fn population_table(
    models: &[NamedModel],
    kappas: &[f64],
    gammas: &[f64],
    n: usize,
    seed: u64,
) -> Vec<TableRow> {
    let cells: Vec<(usize, f64, f64)> = models
        .iter()
        .enumerate()
        .flat_map(|(m, _)| kappas.iter().flat_map(move |&k| gammas.iter().map(move |&g| (m, k, g))))
        .collect();
    let indexed: Vec<(usize, (usize, f64, f64))> = cells.into_iter().enumerate().collect();
    map_ordered(&indexed, |&(i, (m, kappa, gamma))| {
        let nm = &models[m];
        let q = nm.model.q;
        let q1 = q - 1;
        let solved = WeightFunction::t_shift(kappa, 2.0)
            .and_then(|w| solve_lambda_system(&nm.model, &w, gamma, n, seed.wrapping_add(i as u64)));
        match solved {
            Ok(s) => TableRow {
                model: nm.name.clone(),
                q,
                kappa,
                gamma,
                cn: Some(s.condition_number()),
                cn_v: s.condition_number_v(),
                cn_se: Some(s.ratio_se(0, q1)),
                cn_v_se: s.ratio_v_se(0, q1),
                error: None,
            },
            Err(e) => TableRow {
                model: nm.name.clone(),
                q,
                kappa,
                gamma,
                cn: None,
                cn_v: None,
                cn_se: None,
                cn_v_se: None,
                error: Some(e.to_string()),
            },
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normal_radius_moment() {
        let m = EllipticalModel::new(vec![1.0; 4], Radial::Normal).unwrap();
        let n = 20_000;
        let z = sample_spherical(&m, n, 1);
        let mean: f64 = z.iter().map(|v| v.norm_squared()).sum::<f64>() / n as f64;
        assert!((mean - 4.0).abs() < 3.0 * (8.0 / n as f64).sqrt());
    }

    #[test]
    fn point_mass_is_unit_norm() {
        let m = EllipticalModel::new(vec![1.0; 3], Radial::PointMass { r: 1.0 }).unwrap();
        assert!(sample_spherical(&m, 100, 2).iter().all(|z| (z.norm() - 1.0).abs() < 1e-14));
    }

    #[test]
    fn normal_covariance_is_identity() {
        let m = EllipticalModel::new(vec![1.0; 3], Radial::Normal).unwrap();
        let n = 20_000;
        let z = sample_spherical(&m, n, 3);
        let cov = z.iter().fold(DMatrix::<f64>::zeros(3, 3), |a, v| a + v * v.transpose()) / n as f64;
        assert!((cov - DMatrix::identity(3, 3)).amax() < 5.0 / (n as f64).sqrt());
    }

    #[test]
    fn student_t_second_moment() {
        // E||Z||^2 = q nu / (nu - 2)
        let m = EllipticalModel::new(vec![1.0; 3], Radial::StudentT { dof: 10.0 }).unwrap();
        let n = 50_000;
        let mean: f64 = sample_spherical(&m, n, 4).iter().map(|v| v.norm_squared()).sum::<f64>() / n as f64;
        assert!((mean - 3.75).abs() < 0.1);
    }

    #[test]
    fn tyler_identity_closed_form() {
        let m = EllipticalModel::new(vec![1.0; 5], Radial::Normal).unwrap();
        let w = WeightFunction::tyler(5.0).unwrap();
        let s = solve_lambda_system(&m, &w, 0.5, 10_000, 5).unwrap();
        for l in &s.lambda {
            assert!((l - 1.0).abs() < 1e-8);
        }
        for l in s.lambda_v.as_ref().unwrap() {
            assert!((l - 1.0).abs() < 1e-8);
        }
        let w = WeightFunction::tyler(3.0).unwrap();
        let s = solve_lambda_system(&m, &w, 0.2, 10_000, 6).unwrap();
        let expect = 0.2 * 5.0 / (5.0 - 0.8 * 3.0);
        assert!(s.lambda.iter().all(|l| (l - expect).abs() < 1e-8 * expect));
    }

    #[test]
    fn gamma_one_is_identity() {
        let m = EllipticalModel::spiked(5).unwrap();
        let w = WeightFunction::t_shift(3.0, 2.0).unwrap();
        let s = solve_lambda_system(&m, &w, 1.0, 1000, 7).unwrap();
        assert!(s.lambda.iter().all(|l| (l - 1.0).abs() < 1e-15));
        assert!(s.lambda_v.is_none());
        assert_eq!(s.condition_number(), 1.0);
    }

    #[test]
    fn tyler_condition_numbers_invariant_to_doubling() {
        let m = EllipticalModel::linear(4).unwrap();
        let m2 = EllipticalModel::new(m.sigma_o_eigenvalues.iter().map(|l| 2.0 * l).collect(), Radial::Normal).unwrap();
        let w = WeightFunction::tyler(2.0).unwrap();
        let a = solve_lambda_system(&m, &w, 0.5, 20_000, 8).unwrap();
        let b = solve_lambda_system(&m2, &w, 0.5, 20_000, 8).unwrap();
        assert!((a.condition_number() - b.condition_number()).abs() < 1e-7 * a.condition_number());
        let (va, vb) = (a.condition_number_v().unwrap(), b.condition_number_v().unwrap());
        assert!((va - vb).abs() < 1e-7 * va);
    }

    #[test]
    fn shifted_weight_is_not_scale_free() {
        let m = EllipticalModel::spiked(5).unwrap();
        let m2 = EllipticalModel::new(m.sigma_o_eigenvalues.iter().map(|l| 2.0 * l).collect(), Radial::Normal).unwrap();
        let w = WeightFunction::t_shift(3.0, 2.0).unwrap();
        let a = solve_lambda_system(&m, &w, 0.5, 20_000, 9).unwrap();
        let b = solve_lambda_system(&m2, &w, 0.5, 20_000, 9).unwrap();
        let rel = (a.condition_number() - b.condition_number()).abs() / a.condition_number();
        assert!(rel > 1e-3, "{rel}");
    }

    #[test]
    fn model_validation() {
        assert!(EllipticalModel::new(vec![1.0, 2.0], Radial::Normal).is_err());
        assert!(EllipticalModel::new(vec![1.0, -1.0], Radial::Normal).is_err());
        assert!(EllipticalModel::new(vec![1.0], Radial::StudentT { dof: 0.0 }).is_err());
        let l = EllipticalModel::linear(5).unwrap();
        assert_eq!(l.sigma_o_eigenvalues, vec![10.0, 7.75, 5.5, 3.25, 1.0]);
    }
}
