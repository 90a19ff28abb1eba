//! Gronwall bounds, time series and the separation monitor.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::stepper::TrajectoryRecord;

/// `(a₃/r + a₂) e^{a₁}`: bound of `y(t + r)` when `y′ ≤ g y + h` with
/// window integrals `∫g ≤ a₁`, `∫h ≤ a₂`, `∫y ≤ a₃` over `[t, t + r]`.
pub fn uniform_gronwall_bound(a1: f64, a2: f64, a3: f64, r: f64) -> Result<f64> {
    if !(r > 0.0) {
        return Err(Error::InvalidParameter { name: "r", reason: format!("window length must be positive, got {r}") });
    }
    if a1 < 0.0 || a2 < 0.0 || a3 < 0.0 {
        return Err(Error::InvalidParameter { name: "a", reason: "window integrals must be non-negative".into() });
    }
    Ok((a3 / r + a2) * a1.exp())
}

/// `Q(γ, A₁, A₂) = (e^{γ/2} A₁ / (1 - e^{-γ/2}))² + 2e^γ A₂ / (1 - e^{-γ})`,
/// the asymptotic level for `y′ + γy ≤ g√y + h` with unit-window
/// integrals of `g`, `h` bounded by `A₁`, `A₂`.
pub fn decay_gronwall_q(gamma: f64, a1: f64, a2: f64) -> Result<f64> {
    if !(gamma > 0.0) {
        return Err(Error::InvalidParameter { name: "gamma", reason: format!("must be positive, got {gamma}") });
    }
    if a1 < 0.0 || a2 < 0.0 {
        return Err(Error::InvalidParameter { name: "A", reason: "window integrals must be non-negative".into() });
    }
    let first = (0.5 * gamma).exp() / (-(-0.5 * gamma).exp_m1()) * a1;
    Ok(first * first + 2.0 * gamma.exp() / (-(-gamma).exp_m1()) * a2)
}

/// Scalar diagnostics per recorded sample.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimeSeries {
    pub t: Vec<f64>,
    pub energy: Vec<f64>,
    pub mass: Vec<Vec<f64>>,
    pub chemical_norm: Vec<f64>,
    pub rate_dual_norm: Vec<f64>,
    pub h1_norm: Vec<f64>,
    pub margin: Vec<f64>,
    pub envelope: Vec<f64>,
}

impl TimeSeries {
    pub fn from_record(record: &TrajectoryRecord, envelope: impl Fn(f64) -> f64) -> Result<Self> {
        let s = &record.samples;
        if s.windows(2).any(|w| !(w[1].t > w[0].t)) {
            return Err(Error::Precondition("sample times must increase strictly".into()));
        }
        Ok(Self {
            t: s.iter().map(|x| x.t).collect(),
            energy: s.iter().map(|x| x.energy.total).collect(),
            mass: s.iter().map(|x| x.mass.components()).collect(),
            chemical_norm: s.iter().map(|x| x.chemical_norm).collect(),
            rate_dual_norm: s.iter().map(|x| x.rate_dual_norm).collect(),
            h1_norm: s.iter().map(|x| x.h1_norm).collect(),
            margin: s.iter().map(|x| x.margin).collect(),
            envelope: s.iter().map(|x| envelope(x.t)).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeparationMonitor {
    /// First sample time after which the margin never drops below `floor`.
    pub t_s: Option<f64>,
    pub floor: f64,
    pub margins: Vec<f64>,
    pub min_margin: f64,
}

/// `1 - max |nodal value|` per sample, and the time from which it stays
/// above `floor`.
pub fn separation_monitor(record: &TrajectoryRecord, floor: f64) -> SeparationMonitor {
    let margins: Vec<f64> = record.samples.iter().map(|s| s.margin).collect();
    let mut t_s = None;
    for (s, m) in record.samples.iter().zip(&margins).rev() {
        if *m < floor {
            break;
        }
        t_s = Some(s.t);
    }
    SeparationMonitor { t_s, floor, min_margin: margins.iter().copied().fold(f64::INFINITY, f64::min), margins }
}

/// Least-squares line `y ≈ a + b x`; returns `(a, b)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Option<(f64, f64)> {
    let n = x.len() as f64;
    if x.len() < 2 || x.len() != y.len() {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    if sxx == 0.0 {
        return None;
    }
    let b = sxy / sxx;
    Some((my - b * mx, b))
}

/// Fit of `y ≈ A e^{-r s} + B`: grid search in `r` with linear least
/// squares for `A`, `B`. Returns `(A, r, B, rss)`.
pub fn exponential_plateau_fit(s: &[f64], y: &[f64], rates: impl IntoIterator<Item = f64>) -> Option<(f64, f64, f64, f64)> {
    let mut best: Option<(f64, f64, f64, f64)> = None;
    for r in rates {
        let x: Vec<f64> = s.iter().map(|v| (-r * v).exp()).collect();
        let Some((b, a)) = linear_fit(&x, y) else { continue };
        let rss: f64 = x.iter().zip(y).map(|(xi, yi)| (a * xi + b - yi).powi(2)).sum();
        if best.is_none_or(|(_, _, _, r0)| rss < r0) {
            best = Some((a, r, b, rss));
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gronwall_formulas() {
        assert_eq!(uniform_gronwall_bound(0.0, 0.0, 2.5, 2.5).unwrap(), 1.0);
        assert!((uniform_gronwall_bound(2f64.ln(), 1.0, 1.0, 1.0).unwrap() - 4.0).abs() < 1e-15);
        assert!(uniform_gronwall_bound(1.0, 1.0, 1.0, 0.0).is_err());
        assert_eq!(decay_gronwall_q(1.0, 0.0, 0.0).unwrap(), 0.0);
        let e = std::f64::consts::E;
        let q = (e.sqrt() / (1.0 - 1.0 / e.sqrt())).powi(2);
        assert!((decay_gronwall_q(1.0, 1.0, 0.0).unwrap() - q).abs() < 1e-12);
        assert!((q - 17.56).abs() < 5e-3);
        assert!(decay_gronwall_q(0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn plateau_fit_recovers_rate() {
        let s = [4.0f64, 8.0, 16.0, 32.0];
        let y: Vec<f64> = s.iter().map(|v| 3.0 * (-0.3 * v).exp() + 2.0).collect();
        let (a, r, b, _) = exponential_plateau_fit(&s, &y, (1..=1000).map(|i| i as f64 * 1e-3)).unwrap();
        assert!((r - 0.3).abs() < 1e-9 && (a - 3.0).abs() < 1e-6 && (b - 2.0).abs() < 1e-6);
    }

    #[test]
    fn line_fit() {
        let (a, b) = linear_fit(&[0.0, 1.0, 2.0], &[1.0, 3.0, 5.0]).unwrap();
        assert!((a - 1.0).abs() < 1e-15 && (b - 2.0).abs() < 1e-15);
        assert!(linear_fit(&[1.0, 1.0], &[0.0, 1.0]).is_none());
    }
}
