//! Cross-validation over the regularized Tyler path `beta in [0, q]`.
//!
//! Candidate fits are shape matrices (trace `q`); both criteria only see the
//! shape. The grid endpoints are handled specially: at `beta = 0` the
//! `Sigma` shape is the identity and the `V` shape is the SSCM shape (the
//! limit of `V_beta / beta`), and at `beta = q` both are the unregularized
//! Tyler shape.

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{shape_of, DataMatrix, SymmetricPd};
use crate::parallel::map_ordered;
use crate::penalized::{
    solve_penalized_with, solve_tyler_shape, PenaltySpec, SolverOptions, SubspaceProfile,
};
use crate::sscm::sscm_centered;
use crate::stats::{lower_median, mean};
use crate::weight::WeightFunction;

/// `gamma` used for interior fits; shapes do not depend on it.
const FIT_GAMMA: f64 = 0.5;
pub const GRID_STEP: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    SigmaShape,
    VShape,
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EstimatorKind::SigmaShape => "sigma",
            EstimatorKind::VShape => "v",
        })
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "sigma" | "sigma_shape" | "sigmashape" => Ok(EstimatorKind::SigmaShape),
            "v" | "v_shape" | "vshape" => Ok(EstimatorKind::VShape),
            other => Err(Error::InvalidInput(format!("unknown estimator kind '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    CvMean,
    CvMed,
    CvMedMean,
    CvMedMed,
    AcgMean,
    AcgMed,
}

impl Criterion {
    pub const ALL: [Criterion; 6] = [
        Criterion::CvMean,
        Criterion::CvMed,
        Criterion::CvMedMean,
        Criterion::CvMedMed,
        Criterion::AcgMean,
        Criterion::AcgMed,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Criterion::CvMean => "cvmean",
            Criterion::CvMed => "cvmed",
            Criterion::CvMedMean => "cvmedmean",
            Criterion::CvMedMed => "cvmedmed",
            Criterion::AcgMean => "acgmean",
            Criterion::AcgMed => "acgmed",
        }
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Criterion {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        // alternate names used for the same criteria
        match s.trim().to_ascii_lowercase().as_str() {
            "cvmean" => Ok(Criterion::CvMean),
            "cvmed" => Ok(Criterion::CvMed),
            "cvmedmean" | "cvmeanmed" => Ok(Criterion::CvMedMean),
            "cvmedmed" => Ok(Criterion::CvMedMed),
            "acgmean" | "acv" => Ok(Criterion::AcgMean),
            "acgmed" | "acvr" => Ok(Criterion::AcgMed),
            other => Err(Error::InvalidInput(format!("unknown criterion '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub n: usize,
    pub k: usize,
    /// Fold id in `1..=k` for each observation.
    pub assignment: Vec<usize>,
    pub seed: u64,
}

impl FoldPlan {
    pub fn fold_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.n).filter(|&i| self.assignment[i] == fold).collect()
    }

    pub fn training_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.n).filter(|&i| self.assignment[i] != fold).collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        (1..=self.k).map(|f| self.assignment.iter().filter(|&&a| a == f).count()).collect()
    }
}

/// Balanced random partition: a seeded shuffle, then position modulo `k`.
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::Parameter(format!("need at least two folds, got {k}")));
    }
    if k > n {
        return Err(Error::Parameter(format!("{k} folds exceed {n} observations")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut assignment = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        assignment[i] = pos % k + 1;
    }
    Ok(FoldPlan { n, k, assignment, seed })
}

/// `q log(x'S^{-1}x / x'x) + log det S` for every nonzero row.
pub fn angular_terms(shape: &SymmetricPd, sample: &DataMatrix) -> Result<Vec<f64>> {
    if shape.dim() != sample.q() {
        return Err(Error::DimensionMismatch { expected: shape.dim(), found: sample.q() });
    }
    let q = sample.q() as f64;
    let log_det = shape.log_det();
    let terms: Vec<f64> = sample
        .rows()
        .iter()
        .filter_map(|x| {
            let nn = x.norm_squared();
            (nn > 0.0).then(|| q * (shape.quad_inv(x) / nn).ln() + log_det)
        })
        .collect();
    if terms.is_empty() {
        return Err(Error::Empty("sample has no nonzero rows".into()));
    }
    Ok(terms)
}

/// Angular central Gaussian negative log-likelihood, averaged over the sample.
pub fn cv_value(shape: &SymmetricPd, sample: &DataMatrix) -> Result<f64> {
    Ok(mean(&angular_terms(shape, sample)?).expect("terms are non-empty"))
}

/// Median form of [`cv_value`].
pub fn cvr_value(shape: &SymmetricPd, sample: &DataMatrix) -> Result<f64> {
    Ok(lower_median(&angular_terms(shape, sample)?).expect("terms are non-empty"))
}

/// `0, 0.1, ..., q`.
pub fn beta_grid(q: usize) -> Vec<f64> {
    (0..=10 * q).map(|i| i as f64 / 10.0).collect()
}

/// `0, step, 2 step, ...` up to `q`, with `q` itself always included. Points
/// are rounded to 12 decimals so that decimal steps give decimal values.
pub fn grid_with_step(q: usize, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && step <= q as f64) {
        return Err(Error::Parameter(format!("grid step must lie in (0, {q}], got {step}")));
    }
    let steps = (q as f64 / step + 1e-9).floor() as usize;
    let mut grid: Vec<f64> = (0..=steps).map(|i| (i as f64 * step * 1e12).round() / 1e12).collect();
    if (grid[steps] - q as f64).abs() > 1e-9 {
        grid.push(q as f64);
    } else {
        grid[steps] = q as f64;
    }
    Ok(grid)
}

/// Shape fit at one grid value. `None` when the fit does not exist or does
/// not converge.
pub fn fit_shape(
    x: &DataMatrix,
    beta: f64,
    kind: EstimatorKind,
    profile: Option<&SubspaceProfile>,
    opts: &SolverOptions,
) -> Result<Option<SymmetricPd>> {
    let q = x.q() as f64;
    if beta < 0.0 || beta > q + 1e-12 {
        return Err(Error::Parameter(format!("beta {beta} outside [0, {q}]")));
    }
    if beta == 0.0 {
        return Ok(match kind {
            EstimatorKind::SigmaShape => Some(SymmetricPd::identity(x.q())),
            EstimatorKind::VShape => sscm_centered(x).to_pd().ok().map(|s| shape_of(&s)),
        });
    }
    if beta >= q - 1e-12 {
        return Ok(match solve_tyler_shape(x, opts, profile) {
            Ok(est) if est.converged => Some(est.sigma),
            Ok(_) | Err(Error::ConditionA { .. }) | Err(Error::NotConverged { .. }) => None,
            Err(Error::RankDeficient { .. }) | Err(Error::NotPositiveDefinite(_)) => None,
            Err(e) => return Err(e),
        });
    }
    let w = WeightFunction::tyler(beta)?;
    let est = match solve_penalized_with(x, &w, &PenaltySpec::tyler_beta(beta, FIT_GAMMA), opts, profile) {
        Ok(est) => est,
        Err(Error::ConditionA { .. }) | Err(Error::NotConverged { .. }) => return Ok(None),
        Err(e) => return Err(e),
    };
    if !est.converged {
        return Ok(None);
    }
    Ok(match kind {
        EstimatorKind::SigmaShape => Some(shape_of(&est.sigma)),
        EstimatorKind::VShape => est.v.as_ref().map(shape_of),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub beta: f64,
    /// `0` for the full-data fit, otherwise the held-out fold.
    pub fold: usize,
    pub ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvCurve {
    pub grid: Vec<f64>,
    pub kind: EstimatorKind,
    /// `scores[c.index()][j]` is criterion `c` at `grid[j]`.
    pub scores: Vec<Vec<Option<f64>>>,
    pub selected: Vec<Option<f64>>,
    pub plan: Option<FoldPlan>,
    pub fits: Vec<FitRecord>,
}

impl CvCurve {
    pub fn scores(&self, c: Criterion) -> &[Option<f64>] {
        &self.scores[c.index()]
    }

    pub fn selected(&self, c: Criterion) -> Option<f64> {
        self.selected[c.index()]
    }
}

/// Index of the smallest score; ties go to the first (smallest beta).
pub fn argmin_first(scores: &[Option<f64>]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (j, s) in scores.iter().enumerate() {
        if let Some(v) = s {
            if best.is_none_or(|(_, b)| *v < b) {
                best = Some((j, *v));
            }
        }
    }
    best.map(|(j, _)| j)
}

#[derive(Debug, Clone)]
pub struct CvOptions {
    pub k: usize,
    pub seed: u64,
    pub grid: Option<Vec<f64>>,
    pub solver: SolverOptions,
}

impl Default for CvOptions {
    fn default() -> Self {
        Self { k: 5, seed: 0, grid: None, solver: SolverOptions::default() }
    }
}

struct FoldData {
    train: DataMatrix,
    valid: DataMatrix,
    profile: SubspaceProfile,
}

/// The six cross-validation curves for already centered data.
pub fn cv_curves(x: &DataMatrix, kind: EstimatorKind, opts: &CvOptions) -> Result<CvCurve> {
    let n = x.n();
    if n < 2 * opts.k {
        return Err(Error::InvalidInput(format!(
            "{n} observations are too few for {} folds (need at least {})",
            opts.k,
            2 * opts.k
        )));
    }
    let grid = opts.grid.clone().unwrap_or_else(|| beta_grid(x.q()));
    let plan = kfold_split(n, opts.k, opts.seed)?;
    let folds: Vec<FoldData> = (1..=opts.k)
        .map(|f| {
            let train = x.select(&plan.training_indices(f))?;
            let valid = x.select(&plan.fold_indices(f))?;
            let profile = SubspaceProfile::new(&train);
            Ok(FoldData { train, valid, profile })
        })
        .collect::<Result<_>>()?;
    let full_profile = SubspaceProfile::new(x);

    // one task per (beta, fold), fold 0 being the full data
    let tasks: Vec<(usize, usize)> =
        (0..grid.len()).flat_map(|j| (0..=opts.k).map(move |f| (j, f))).collect();
    let results: Vec<Result<Option<Vec<f64>>>> = map_ordered(&tasks, |&(j, f)| {
        let (train, valid, profile) = if f == 0 {
            (x, x, &full_profile)
        } else {
            let fd = &folds[f - 1];
            (&fd.train, &fd.valid, &fd.profile)
        };
        match fit_shape(train, grid[j], kind, Some(profile), &opts.solver)? {
            Some(shape) => Ok(Some(angular_terms(&shape, valid)?)),
            None => Ok(None),
        }
    });

    let mut scores = vec![vec![None; grid.len()]; Criterion::ALL.len()];
    let mut fits = Vec::with_capacity(tasks.len());
    let mut it = tasks.iter().zip(results);
    for (j, &beta) in grid.iter().enumerate() {
        let mut per_fold: Vec<Option<Vec<f64>>> = Vec::with_capacity(opts.k);
        let mut full = None;
        for _ in 0..=opts.k {
            let (&(_, f), r) = it.next().expect("one result per task");
            let r = r?;
            fits.push(FitRecord { beta, fold: f, ok: r.is_some() });
            if f == 0 {
                full = r;
            } else {
                per_fold.push(r);
            }
        }
        if let Some(t) = &full {
            scores[Criterion::AcgMean.index()][j] = mean(t);
            scores[Criterion::AcgMed.index()][j] = lower_median(t);
        }
        if per_fold.iter().all(Option::is_some) {
            let per_fold: Vec<Vec<f64>> = per_fold.into_iter().flatten().collect();
            let means: Vec<f64> = per_fold.iter().filter_map(|t| mean(t)).collect();
            let medians: Vec<f64> = per_fold.iter().filter_map(|t| lower_median(t)).collect();
            let pooled: Vec<f64> = per_fold.concat();
            scores[Criterion::CvMean.index()][j] = mean(&means);
            scores[Criterion::CvMedMean.index()][j] = mean(&medians);
            scores[Criterion::CvMedMed.index()][j] = lower_median(&medians);
            scores[Criterion::CvMed.index()][j] = lower_median(&pooled);
        }
    }
    let selected = scores.iter().map(|s| argmin_first(s).map(|j| grid[j])).collect();
    Ok(CvCurve { grid, kind, scores, selected, plan: Some(plan), fits })
}

#[derive(Debug, Clone)]
pub struct TuningResult {
    pub beta_star: f64,
    pub criterion: Criterion,
    pub kind: EstimatorKind,
    pub shape: SymmetricPd,
    pub condition_number: f64,
    pub diagnostics: Vec<FitRecord>,
}

/// Picks the minimizing `beta` of a curve and refits the shape on all of `x`.
pub fn select_beta(curve: &CvCurve, criterion: Criterion, x: &DataMatrix) -> Result<TuningResult> {
    let j = argmin_first(curve.scores(criterion))
        .ok_or_else(|| Error::Empty(format!("every {criterion} score is missing")))?;
    let beta = curve.grid[j];
    let shape = fit_shape(x, beta, curve.kind, None, &SolverOptions::default())?
        .ok_or_else(|| Error::InvalidInput(format!("refit at beta = {beta} does not exist")))?;
    Ok(TuningResult {
        beta_star: beta,
        criterion,
        kind: curve.kind,
        condition_number: shape.condition_number(),
        shape,
        diagnostics: curve.fits.clone(),
    })
}

/// Full-sample curve only (the two `acg` criteria), no folds.
pub fn full_sample_curve(x: &DataMatrix, kind: EstimatorKind, grid: &[f64]) -> Result<CvCurve> {
    let profile = SubspaceProfile::new(x);
    let opts = SolverOptions::default();
    let terms: Vec<Result<Option<Vec<f64>>>> = map_ordered(grid, |&beta| {
        match fit_shape(x, beta, kind, Some(&profile), &opts)? {
            Some(shape) => Ok(Some(angular_terms(&shape, x)?)),
            None => Ok(None),
        }
    });
    let mut scores = vec![vec![None; grid.len()]; Criterion::ALL.len()];
    let mut fits = Vec::with_capacity(grid.len());
    for (j, t) in terms.into_iter().enumerate() {
        let t = t?;
        fits.push(FitRecord { beta: grid[j], fold: 0, ok: t.is_some() });
        if let Some(t) = t {
            scores[Criterion::AcgMean.index()][j] = mean(&t);
            scores[Criterion::AcgMed.index()][j] = lower_median(&t);
        }
    }
    let selected = scores.iter().map(|s| argmin_first(s).map(|j| grid[j])).collect();
    Ok(CvCurve { grid: grid.to_vec(), kind, scores, selected, plan: None, fits })
}

/// `beta~`: the minimizer of the median criterion of the full-data fit over
/// the grid.
pub fn tilde_beta(x: &DataMatrix, kind: EstimatorKind) -> Result<TuningResult> {
    tilde_beta_on_grid(x, kind, &beta_grid(x.q()))
}

pub fn tilde_beta_on_grid(x: &DataMatrix, kind: EstimatorKind, grid: &[f64]) -> Result<TuningResult> {
    let curve = full_sample_curve(x, kind, grid)?;
    select_beta(&curve, Criterion::AcgMed, x)
}

/// Rows of `x` multiplied by per-row positive constants.
pub fn rescale_rows(x: &DataMatrix, c: &[f64]) -> Result<DataMatrix> {
    if c.len() != x.n() {
        return Err(Error::DimensionMismatch { expected: x.n(), found: c.len() });
    }
    let rows: Vec<DVector<f64>> = x.rows().iter().zip(c).map(|(r, &ci)| r * ci).collect();
    DataMatrix::from_vectors(rows, x.q())
}
