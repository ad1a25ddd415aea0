//! Weight functions `u(s)` for M-estimators of scatter, with `psi(s) = s u(s)`
//! and `kappa = sup psi`.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Point at which `psi(infinity)` is evaluated.
pub const KAPPA_PROBE: f64 = 1e12;
const GRID_POINTS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightKind {
    /// `u(s) = kappa / s`.
    Tyler { kappa: f64 },
    /// `u(s) = kappa / (s + shift)`.
    TShift { kappa: f64, shift: f64 },
    Custom,
}

type WeightFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub struct WeightFunction {
    kind: WeightKind,
    custom: Option<WeightFn>,
    kappa: f64,
    non_increasing: bool,
}

impl fmt::Debug for WeightFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("WeightFunction")
            .field("kind", &self.kind)
            .field("kappa", &self.kappa)
            .field("non_increasing", &self.non_increasing)
            .finish()
    }
}

impl WeightFunction {
    pub fn tyler(kappa: f64) -> Result<Self> {
        if !(kappa > 0.0 && kappa.is_finite()) {
            return Err(Error::Parameter(format!("kappa must be positive, got {kappa}")));
        }
        Ok(Self {
            kind: WeightKind::Tyler { kappa },
            custom: None,
            kappa,
            non_increasing: true,
        })
    }

    pub fn t_shift(kappa: f64, shift: f64) -> Result<Self> {
        if !(kappa > 0.0 && kappa.is_finite()) {
            return Err(Error::Parameter(format!("kappa must be positive, got {kappa}")));
        }
        if !(shift > 0.0 && shift.is_finite()) {
            return Err(Error::Parameter(format!("shift must be positive, got {shift}")));
        }
        Ok(Self {
            kind: WeightKind::TShift { kappa, shift },
            custom: None,
            kappa,
            non_increasing: true,
        })
    }

    /// A user-supplied weight. `psi` is checked to be non-decreasing on a
    /// log-spaced grid, and `u` non-increasing when `non_increasing` is
    /// claimed. `kappa` is taken as `psi(1e12)`.
    pub fn custom(
        u: impl Fn(f64) -> f64 + Send + Sync + 'static,
        non_increasing: bool,
    ) -> Result<Self> {
        let u: WeightFn = Arc::new(u);
        let grid = log_grid();
        let mut prev_psi = f64::NEG_INFINITY;
        let mut prev_u = f64::INFINITY;
        for &s in &grid {
            let w = u(s);
            if !(w.is_finite() && w > 0.0) {
                return Err(Error::Parameter(format!("u({s:e}) = {w} is not a positive finite weight")));
            }
            let psi = s * w;
            if psi < prev_psi * (1.0 - 1e-12) {
                return Err(Error::Parameter(format!("psi decreases near s = {s:e}")));
            }
            if non_increasing && w > prev_u * (1.0 + 1e-12) {
                return Err(Error::Parameter(format!("u increases near s = {s:e}")));
            }
            prev_psi = psi;
            prev_u = w;
        }
        let kappa = KAPPA_PROBE * u(KAPPA_PROBE);
        Ok(Self {
            kind: WeightKind::Custom,
            custom: Some(u),
            kappa,
            non_increasing,
        })
    }

    pub fn kind(&self) -> WeightKind {
        self.kind
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn is_tyler(&self) -> bool {
        matches!(self.kind, WeightKind::Tyler { .. })
    }

    pub fn is_non_increasing(&self) -> bool {
        self.non_increasing
    }

    #[inline]
    pub fn u(&self, s: f64) -> f64 {
        match self.kind {
            WeightKind::Tyler { kappa } => kappa / s,
            WeightKind::TShift { kappa, shift } => kappa / (s + shift),
            WeightKind::Custom => (self.custom.as_ref().expect("custom weight has a closure"))(s),
        }
    }

    #[inline]
    pub fn psi(&self, s: f64) -> f64 {
        match self.kind {
            WeightKind::Tyler { kappa } => kappa,
            _ => s * self.u(s),
        }
    }

    /// Same family with `u(s)` replaced by `u(c s)`; used to relate the
    /// trace-precision and Kullback-Leibler forms.
    pub fn rescaled_argument(&self, c: f64) -> Result<Self> {
        match self.kind {
            WeightKind::Tyler { kappa } => Self::tyler(kappa / c),
            WeightKind::TShift { kappa, shift } => Self::t_shift(kappa / c, shift / c),
            WeightKind::Custom => {
                let inner = self.custom.clone().expect("custom weight has a closure");
                Self::custom(move |s| inner(c * s), self.non_increasing)
            }
        }
    }
}

fn log_grid() -> Vec<f64> {
    // 1e-6 .. 1e12
    (0..GRID_POINTS)
        .map(|i| 10f64.powf(-6.0 + 18.0 * i as f64 / (GRID_POINTS - 1) as f64))
        .collect()
}
