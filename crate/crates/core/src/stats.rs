//! Order-statistic medians.
//!
//! The lower median, the `ceil(n/2)`-th order statistic, is the default. The
//! median objective minimized over all shape matrices uses the upper median,
//! the `(floor(n/2)+1)`-th order statistic, which keeps it bounded below for
//! even `n`. The two coincide for odd `n`.

/// `ceil(n/2)`-th order statistic. Returns `None` for an empty slice.
pub fn lower_median(values: &[f64]) -> Option<f64> {
    order_statistic(values, values.len().div_ceil(2))
}

/// `(floor(n/2)+1)`-th order statistic. Returns `None` for an empty slice.
pub fn upper_median(values: &[f64]) -> Option<f64> {
    order_statistic(values, values.len() / 2 + 1)
}

/// The `k`-th smallest value, 1-based.
pub fn order_statistic(values: &[f64], k: usize) -> Option<f64> {
    if values.is_empty() || k == 0 || k > values.len() {
        return None;
    }
    let mut v = values.to_vec();
    let (_, kth, _) = v.select_nth_unstable_by(k - 1, f64::total_cmp);
    Some(*kth)
}

pub fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}
