//! Robust centering (spatial median, marginal medians, pairwise differences)
//! and the median-based scale `sigma^2`.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::DataMatrix;
use crate::stats::lower_median;

const WEISZFELD_TOL: f64 = 1e-10;
const WEISZFELD_MAX_ITER: usize = 10_000;
const COLLISION_TOL: f64 = 1e-12;
const PAIRWISE_BUDGET: usize = 1_000_000;

/// How to center the data before estimating scatter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "center", rename_all = "snake_case")]
pub enum CenterSpec {
    Known(Vec<f64>),
    SpatialMedian,
    MarginalMedian,
    PairwiseDifferences,
}

impl CenterSpec {
    pub fn origin(q: usize) -> Self {
        CenterSpec::Known(vec![0.0; q])
    }

    pub fn label(&self) -> String {
        match self {
            CenterSpec::Known(c) => format!("known({})", join(c)),
            CenterSpec::SpatialMedian => "spatial_median".into(),
            CenterSpec::MarginalMedian => "marginal_median".into(),
            CenterSpec::PairwiseDifferences => "pairwise_differences".into(),
        }
    }
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

/// Median-based estimate of `sigma^2` under the model `Sigma = sigma^2 I`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobustScale {
    pub sigma2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpatialMedian {
    pub center: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Coordinate-wise lower medians.
pub fn marginal_median(x: &DataMatrix) -> DVector<f64> {
    DVector::from_fn(x.q(), |j, _| {
        let col: Vec<f64> = x.rows().iter().map(|r| r[j]).collect();
        lower_median(&col).expect("data matrix is non-empty")
    })
}

#[cfg(test)]
fn objective(x: &DataMatrix, mu: &DVector<f64>) -> f64 {
    x.rows().iter().map(|r| (r - mu).norm()).sum()
}

/// Minimizer of `sum ||x_i - mu||` by Weiszfeld's iteration with the
/// Vardi-Zhang modification at data points, started from the marginal median.
pub fn spatial_median(x: &DataMatrix) -> SpatialMedian {
    let mut y = marginal_median(x);
    if x.n() == 1 {
        return SpatialMedian { center: x.row(0).clone(), iterations: 0, converged: true };
    }
    let q = x.q();
    for it in 1..=WEISZFELD_MAX_ITER {
        let mut num = DVector::zeros(q);
        let mut den = 0.0;
        let mut resultant = DVector::zeros(q);
        let mut coincident = 0usize;
        let mut spread = 0.0;
        for r in x.rows() {
            let diff = r - &y;
            let d = diff.norm();
            spread += d;
            if d <= COLLISION_TOL * (1.0 + y.norm()) {
                coincident += 1;
                continue;
            }
            num.axpy(1.0 / d, r, 1.0);
            den += 1.0 / d;
            resultant.axpy(1.0 / d, &diff, 1.0);
        }
        if den == 0.0 {
            // every point coincides with y
            return SpatialMedian { center: y, iterations: it, converged: true };
        }
        let t = num / den;
        let next = if coincident == 0 {
            t
        } else {
            let r = resultant.norm();
            let eta = coincident as f64;
            if r <= eta {
                // y is a data point satisfying the subgradient optimality test
                return SpatialMedian { center: y, iterations: it, converged: true };
            }
            let w = eta / r;
            t * (1.0 - w) + &y * w.min(1.0)
        };
        let step = (&next - &y).norm();
        let scale = y.norm() + spread / x.n() as f64;
        y = next;
        if step <= WEISZFELD_TOL * scale.max(f64::MIN_POSITIVE) {
            return SpatialMedian { center: y, iterations: it, converged: true };
        }
    }
    SpatialMedian { center: y, iterations: WEISZFELD_MAX_ITER, converged: false }
}

/// `median{(x_i - c)^T (x_i - c)} / q`, lower median.
pub fn robust_sigma2(x: &DataMatrix, center: &DVector<f64>) -> Result<RobustScale> {
    if center.len() != x.q() {
        return Err(Error::DimensionMismatch { expected: x.q(), found: center.len() });
    }
    let sq: Vec<f64> = x.rows().iter().map(|r| (r - center).norm_squared()).collect();
    let med = lower_median(&sq).expect("data matrix is non-empty");
    if !(med > 0.0) {
        return Err(Error::DegenerateScale);
    }
    Ok(RobustScale { sigma2: med / x.q() as f64 })
}

/// The location a centering spec subtracts, if it is a single vector.
pub fn resolve_center(x: &DataMatrix, spec: &CenterSpec) -> Result<Option<DVector<f64>>> {
    match spec {
        CenterSpec::Known(c) => {
            if c.len() != x.q() {
                return Err(Error::DimensionMismatch { expected: x.q(), found: c.len() });
            }
            Ok(Some(DVector::from_column_slice(c)))
        }
        CenterSpec::SpatialMedian => Ok(Some(spatial_median(x).center)),
        CenterSpec::MarginalMedian => Ok(Some(marginal_median(x))),
        CenterSpec::PairwiseDifferences => Ok(None),
    }
}

pub fn center_data(x: &DataMatrix, spec: &CenterSpec) -> Result<DataMatrix> {
    match resolve_center(x, spec)? {
        Some(c) => Ok(x.map_rows(|r| r - &c)),
        None => pairwise_differences(x),
    }
}

fn pairwise_differences(x: &DataMatrix) -> Result<DataMatrix> {
    let n = x.n();
    let count = n * n.saturating_sub(1) / 2;
    if count > PAIRWISE_BUDGET {
        return Err(Error::Budget(format!(
            "{count} pairwise differences exceed the limit of {PAIRWISE_BUDGET}"
        )));
    }
    if count == 0 {
        return Err(Error::Empty("pairwise differences need at least two rows".into()));
    }
    let mut rows = Vec::with_capacity(count);
    for i in 0..n {
        for j in i + 1..n {
            rows.push(x.row(i) - x.row(j));
        }
    }
    DataMatrix::from_vectors(rows, x.q())
}
