//! Phase variables and basis-function families.
//!
//! Gaussian bases drive the movement primitives; cubic radial bases are only
//! used to synthesize demonstration paths.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

/// Rows are time samples, columns are basis functions. Every row sums to one.
pub type BasisMatrix = DMatrix<f64>;

/// Relative rounding allowed past either end of `[0, T]`.
const PHASE_SLACK: f64 = 1e-9;

/// Normalized time `z = t / T`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseVariable {
    pub t: f64,
    pub duration: f64,
    pub z: f64,
}

impl PhaseVariable {
    pub fn new(t: f64, duration: f64) -> Result<Self> {
        ensure(duration.is_finite() && duration > 0.0, || {
            format!("duration must be positive, got {duration}")
        })?;
        let slack = duration * PHASE_SLACK;
        ensure(t.is_finite() && (-slack..=duration + slack).contains(&t), || {
            format!("time {t} outside [0, {duration}]")
        })?;
        // Exact endpoints regardless of rounding in t / T.
        let z = if t >= duration { 1.0 } else { (t / duration).max(0.0) };
        Ok(Self { t, duration, z })
    }
}

/// `k` Gaussian bumps over phase, normalized per evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianBasis {
    centers: Vec<f64>,
    /// Width in phase² units.
    h: f64,
}

impl GaussianBasis {
    /// `k` centers evenly spaced on `[0, 1]` with bandwidth `1 / k²`.
    pub fn new(k: usize) -> Result<Self> {
        ensure(k >= 1, || "basis count must be at least 1".into())?;
        Self::with_bandwidth(k, 1.0 / (k * k) as f64)
    }

    pub fn with_bandwidth(k: usize, h: f64) -> Result<Self> {
        ensure(k >= 1, || "basis count must be at least 1".into())?;
        let centers = if k == 1 {
            vec![0.5]
        } else {
            (0..k).map(|j| j as f64 / (k - 1) as f64).collect()
        };
        Self::from_centers(centers, h)
    }

    pub fn from_centers(centers: Vec<f64>, h: f64) -> Result<Self> {
        ensure(!centers.is_empty(), || "basis needs at least one center".into())?;
        ensure(h.is_finite() && h > 0.0, || format!("bandwidth must be positive, got {h}"))?;
        ensure(centers.iter().all(|c| c.is_finite()), || "non-finite center".into())?;
        ensure(centers.windows(2).all(|w| w[0] <= w[1]), || {
            "centers must be sorted ascending".into()
        })?;
        let overhang = 2.0 * h.sqrt();
        ensure(
            centers.iter().all(|&c| c >= -overhang && c <= 1.0 + overhang),
            || format!("centers must lie within [0, 1] up to an overhang of {overhang}"),
        )?;
        Ok(Self { centers, h })
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn bandwidth(&self) -> f64 {
        self.h
    }

    /// Unnormalized `exp(-(z - c)² / 2h)` for a single center.
    pub fn bump(&self, z: f64, center: f64) -> f64 {
        (-(z - center).powi(2) / (2.0 * self.h)).exp()
    }

    /// Normalized basis row at phase `z`.
    pub fn eval(&self, z: f64) -> Result<DVector<f64>> {
        ensure(z.is_finite(), || format!("non-finite phase {z}"))?;
        let raw = DVector::from_iterator(self.len(), self.centers.iter().map(|&c| self.bump(z, c)));
        let total = raw.sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::InvalidInput(format!(
                "degenerate basis row at z = {z} (all activations vanish)"
            )));
        }
        Ok(raw / total)
    }

    /// Basis row for absolute time `t` in a movement of length `duration`.
    pub fn eval_time(&self, t: f64, duration: f64) -> Result<DVector<f64>> {
        self.eval(PhaseVariable::new(t, duration)?.z)
    }

    /// Stacks [`eval_time`](Self::eval_time) rows for each sample time.
    pub fn matrix(&self, times: &[f64], duration: f64) -> Result<BasisMatrix> {
        ensure(!times.is_empty(), || "empty time list".into())?;
        ensure(times.windows(2).all(|w| w[0] <= w[1]), || "times must be sorted".into())?;
        let mut out = DMatrix::zeros(times.len(), self.len());
        for (i, &t) in times.iter().enumerate() {
            let row = self.eval_time(t, duration)?;
            out.row_mut(i).copy_from(&row.transpose());
        }
        Ok(out)
    }
}

/// Cubic radial basis `φ(x) = |x - c|³`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CubicRbf {
    centers: Vec<f64>,
}

impl CubicRbf {
    pub fn new(centers: Vec<f64>) -> Result<Self> {
        ensure(!centers.is_empty(), || "cubic RBF needs at least one center".into())?;
        ensure(centers.iter().all(|c| c.is_finite()), || "non-finite center".into())?;
        let mut sorted = centers.clone();
        sorted.sort_by(f64::total_cmp);
        ensure(sorted.windows(2).all(|w| w[0] != w[1]), || "centers must be distinct".into())?;
        Ok(Self { centers })
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn eval(&self, x: f64) -> Result<DVector<f64>> {
        ensure(x.is_finite(), || format!("non-finite input {x}"))?;
        Ok(DVector::from_iterator(
            self.len(),
            self.centers.iter().map(|&c| (x - c).abs().powi(3)),
        ))
    }
}
