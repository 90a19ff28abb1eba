//! Split potentials `W = W₁ + W₂` with a singular convex part on `(-1, 1)`
//! and a smooth perturbation, plus their Moreau–Yosida regularization.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Distance from `±1` at which the direct log formulas clamp their argument.
pub const ENDPOINT_CLAMP: f64 = 1e-15;

/// Convex part `W₁` with `W₁(0) = W₁′(0) = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ConvexPart {
    /// `(Θ/2)[(1+s)ln(1+s) + (1-s)ln(1-s)]` on `[-1, 1]`.
    LogEntropy { theta: f64 },
    /// `c s²/2` on all of ℝ. Only meant as a test double.
    Quadratic { coef: f64 },
}

/// Smooth part `W₂(s) = (c/2) s²`, Lipschitz derivative with constant `|c|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothPart {
    pub coef: f64,
}

impl SmoothPart {
    pub fn value(&self, s: f64) -> f64 {
        0.5 * self.coef * s * s
    }
    pub fn derivative(&self, s: f64) -> f64 {
        self.coef * s
    }
    pub fn lipschitz(&self) -> f64 {
        self.coef.abs()
    }
}

/// Result of solving `r + λW₁′(r) = s`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Resolvent {
    /// The root `r = (I + λW₁′)⁻¹(s)`.
    pub point: f64,
    /// `W₁′(r)`, evaluated without going through `point` so that it stays
    /// accurate when `r` is within rounding distance of `±1`.
    pub slope: f64,
    /// `r + λW₁′(r) - s`, evaluated in the solver's working variable.
    pub residual: f64,
    pub iterations: usize,
}

fn ln_cosh(y: f64) -> f64 {
    let a = y.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

/// Bracketed Newton iteration with bisection fallback for an increasing
/// function. Returns the root and the iteration count.
fn safeguarded_newton(
    f: impl Fn(f64) -> (f64, f64),
    mut lo: f64,
    mut hi: f64,
    tol: f64,
) -> (f64, usize) {
    let mut x = 0.5 * (lo + hi);
    if lo <= 0.0 && hi >= 0.0 {
        x = 0.0;
    }
    for it in 0..200 {
        let (fx, dfx) = f(x);
        if fx.abs() <= tol {
            return (x, it);
        }
        if fx > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let newton = x - fx / dfx;
        x = if newton > lo && newton < hi && dfx > 0.0 {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo <= f64::EPSILON * (1.0 + lo.abs().max(hi.abs())) {
            return (x, it + 1);
        }
    }
    (x, 200)
}

impl ConvexPart {
    pub fn is_singular(&self) -> bool {
        matches!(self, ConvexPart::LogEntropy { .. })
    }

    /// Lower bound `Θ` on `W₁″`.
    pub fn convexity_floor(&self) -> f64 {
        match *self {
            ConvexPart::LogEntropy { theta } => theta,
            ConvexPart::Quadratic { coef } => coef,
        }
    }

    fn check_domain(&self, s: f64) -> Result<()> {
        if self.is_singular() && !(s.abs() < 1.0) {
            return Err(Error::SingularDomain { value: s, node: None });
        }
        Ok(())
    }

    fn clamp(s: f64) -> f64 {
        s.clamp(-1.0 + ENDPOINT_CLAMP, 1.0 - ENDPOINT_CLAMP)
    }

    pub fn value(&self, s: f64) -> Result<f64> {
        self.check_domain(s)?;
        Ok(match *self {
            ConvexPart::LogEntropy { theta } => {
                let s = Self::clamp(s);
                0.5 * theta * ((1.0 + s) * (1.0 + s).ln() + (1.0 - s) * (1.0 - s).ln())
            }
            ConvexPart::Quadratic { coef } => 0.5 * coef * s * s,
        })
    }

    /// `W₁` on the closed interval, where the log part is continuous.
    pub fn value_closed(&self, s: f64) -> Result<f64> {
        match *self {
            ConvexPart::LogEntropy { theta } if s.abs() == 1.0 => Ok(theta * std::f64::consts::LN_2),
            _ => self.value(s),
        }
    }

    pub fn derivative(&self, s: f64) -> Result<f64> {
        self.check_domain(s)?;
        Ok(match *self {
            ConvexPart::LogEntropy { theta } => {
                // std's artanh loses accuracy near -1, so use oddness
                let s = Self::clamp(s);
                theta * s.signum() * s.abs().atanh()
            }
            ConvexPart::Quadratic { coef } => coef * s,
        })
    }

    pub fn second(&self, s: f64) -> Result<f64> {
        self.check_domain(s)?;
        Ok(match *self {
            ConvexPart::LogEntropy { theta } => {
                let s = Self::clamp(s);
                theta / ((1.0 - s) * (1.0 + s))
            }
            ConvexPart::Quadratic { coef } => coef,
        })
    }

    /// `(I + λW₁′)⁻¹(s)`.
    ///
    /// The log part is solved in the variable `y = artanh(r)`, where the
    /// equation `tanh(y) + λΘy = s` is smooth and the root stays
    /// representable even when `r` rounds to `±1`.
    pub fn resolvent(&self, lambda: f64, s: f64) -> Resolvent {
        let tol = 1e-12 * (1.0 + s.abs());
        match *self {
            ConvexPart::LogEntropy { theta } => {
                let k = lambda * theta;
                let f = |y: f64| {
                    let t = y.tanh();
                    (t + k * y - s, 1.0 - t * t + k)
                };
                let (lo, hi) = ((s - 1.0) / k, (s + 1.0) / k);
                let (y, iterations) = safeguarded_newton(f, lo, hi, tol);
                let point = y.tanh().clamp(-1.0 + f64::EPSILON / 2.0, 1.0 - f64::EPSILON / 2.0);
                Resolvent {
                    point,
                    slope: theta * y,
                    residual: f(y).0,
                    iterations,
                }
            }
            ConvexPart::Quadratic { coef } => {
                let f = |r: f64| (r + lambda * coef * r - s, 1.0 + lambda * coef);
                let (lo, hi) = (s.min(0.0), s.max(0.0));
                let (r, iterations) = safeguarded_newton(f, lo, hi, tol);
                Resolvent {
                    point: r,
                    slope: coef * r,
                    residual: f(r).0,
                    iterations,
                }
            }
        }
    }

    /// `W₁,λ(s) = |s - r|²/(2λ) + W₁(r)` at the resolvent point.
    pub fn yosida_value(&self, lambda: f64, s: f64) -> f64 {
        let res = self.resolvent(lambda, s);
        let w1 = match *self {
            ConvexPart::LogEntropy { theta } => {
                let y = res.slope / theta;
                theta * (y * y.tanh() - ln_cosh(y))
            }
            ConvexPart::Quadratic { coef } => 0.5 * coef * res.point * res.point,
        };
        0.5 * lambda * res.slope * res.slope + w1
    }

    /// `W₁,λ′(s) = (s - r)/λ`, which equals `W₁′(r)` at the root.
    pub fn yosida_derivative(&self, lambda: f64, s: f64) -> f64 {
        self.resolvent(lambda, s).slope
    }

    /// `W₁,λ″(s) = W₁″(r) / (1 + λW₁″(r))`.
    pub fn yosida_second(&self, lambda: f64, s: f64) -> f64 {
        match *self {
            ConvexPart::LogEntropy { theta } => {
                let y = self.resolvent(lambda, s).slope / theta;
                let sech2 = 1.0 / y.cosh().powi(2);
                theta / (sech2 + lambda * theta)
            }
            ConvexPart::Quadratic { coef } => coef / (1.0 + lambda * coef),
        }
    }

    /// Constants `(λ̄, C)` with `W₁,λ(s) ≥ s²/(4λ̄) - C` for all `λ < λ̄`.
    ///
    /// For the log part `W₁,λ(s) ≥ (|s|-1)²/(2λ)` when `|s| ≥ 1`, and
    /// `s² ≤ 2(|s|-1)² + 2` closes the bound with `C = 1/(2λ̄)`.
    /// The quadratic part only admits such constants when `c > 1`.
    pub fn growth_constants(&self) -> Option<(f64, f64)> {
        match *self {
            ConvexPart::LogEntropy { .. } => Some((0.5, 1.0)),
            ConvexPart::Quadratic { coef } if coef > 1.0 => {
                let lambda_bar = (1.0 / coef + 1.0) / 2.0;
                Some((lambda_bar.min(0.99), 0.0))
            }
            ConvexPart::Quadratic { .. } => None,
        }
    }
}

/// `W = W₁ + W₂` evaluated directly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitPotential {
    pub convex: ConvexPart,
    pub smooth: SmoothPart,
}

impl SplitPotential {
    /// Flory–Huggins potential `(Θ/2)[(1+s)ln(1+s) + (1-s)ln(1-s)] - (Θc/2)s²`.
    pub fn log(theta: f64, theta_c: f64) -> Self {
        Self {
            convex: ConvexPart::LogEntropy { theta },
            smooth: SmoothPart { coef: -theta_c },
        }
    }

    /// Polynomial test double `c s²/2 + (c₂/2) s²`.
    pub fn quadratic(coef: f64, smooth_coef: f64) -> Self {
        Self {
            convex: ConvexPart::Quadratic { coef },
            smooth: SmoothPart { coef: smooth_coef },
        }
    }

    /// `(W(s), W′(s))`.
    pub fn eval(&self, s: f64) -> Result<(f64, f64)> {
        Ok((
            self.convex.value(s)? + self.smooth.value(s),
            self.convex.derivative(s)? + self.smooth.derivative(s),
        ))
    }
}

/// Free-function form of [`SplitPotential::eval`].
pub fn eval_potential(p: &SplitPotential, s: f64) -> Result<(f64, f64)> {
    p.eval(s)
}

pub fn yosida_resolvent(p: &SplitPotential, lambda: f64, s: f64) -> Result<f64> {
    check_lambda(lambda)?;
    Ok(p.convex.resolvent(lambda, s).point)
}

pub fn yosida_derivative(p: &SplitPotential, lambda: f64, s: f64) -> Result<f64> {
    check_lambda(lambda)?;
    Ok(p.convex.yosida_derivative(lambda, s))
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidParameter {
            name: "lambda",
            reason: format!("regularization level must be positive, got {lambda}"),
        });
    }
    Ok(())
}

/// `W₁,λ + W₂`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct YosidaPotential {
    pub base: SplitPotential,
    pub lambda: f64,
}

impl YosidaPotential {
    pub fn new(base: SplitPotential, lambda: f64) -> Result<Self> {
        check_lambda(lambda)?;
        Ok(Self { base, lambda })
    }
}

/// The potential seen by the discrete scheme: the convex part is treated
/// implicitly and the smooth part explicitly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ModelPotential {
    Direct(SplitPotential),
    Yosida(YosidaPotential),
}

impl ModelPotential {
    pub fn split(&self) -> &SplitPotential {
        match self {
            ModelPotential::Direct(p) => p,
            ModelPotential::Yosida(y) => &y.base,
        }
    }

    /// Whether nodal values must stay inside `(-1, 1)`.
    pub fn requires_interior(&self) -> bool {
        matches!(self, ModelPotential::Direct(p) if p.convex.is_singular())
    }

    pub fn convex_value(&self, s: f64) -> Result<f64> {
        match self {
            ModelPotential::Direct(p) => p.convex.value(s),
            ModelPotential::Yosida(y) => Ok(y.base.convex.yosida_value(y.lambda, s)),
        }
    }

    pub fn convex_derivative(&self, s: f64) -> Result<f64> {
        match self {
            ModelPotential::Direct(p) => p.convex.derivative(s),
            ModelPotential::Yosida(y) => Ok(y.base.convex.yosida_derivative(y.lambda, s)),
        }
    }

    pub fn convex_second(&self, s: f64) -> Result<f64> {
        match self {
            ModelPotential::Direct(p) => p.convex.second(s),
            ModelPotential::Yosida(y) => Ok(y.base.convex.yosida_second(y.lambda, s)),
        }
    }

    pub fn smooth_value(&self, s: f64) -> f64 {
        self.split().smooth.value(s)
    }

    pub fn smooth_derivative(&self, s: f64) -> f64 {
        self.split().smooth.derivative(s)
    }

    pub fn value(&self, s: f64) -> Result<f64> {
        Ok(self.convex_value(s)? + self.smooth_value(s))
    }

    pub fn derivative(&self, s: f64) -> Result<f64> {
        Ok(self.convex_derivative(s)? + self.smooth_derivative(s))
    }

    pub fn second(&self, s: f64) -> Result<f64> {
        Ok(self.convex_second(s)? + self.split().smooth.coef)
    }

    /// Greatest lower bound of the potential over its domain, estimated on a
    /// fine grid of `[-1, 1]`. Used to shift energies to a non-negative scale.
    pub fn lower_bound(&self) -> f64 {
        let n = 20_000;
        (0..=n)
            .map(|i| -1.0 + 2.0 * i as f64 / n as f64)
            .filter_map(|s| {
                let s = s.clamp(-1.0 + 1e-12, 1.0 - 1e-12);
                self.value(s).ok()
            })
            .fold(f64::INFINITY, f64::min)
    }
}

/// Outcome of a domination check `|F₁′(αs)| ≤ κ₁|G₁′(s)| + κ₂`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DominationReport {
    /// `min_s (κ₁|G₁′(s)| + κ₂ - |F₁′(αs)|)`; negative means violated.
    pub worst_margin: f64,
    pub worst_at: f64,
    /// Smallest `κ₂` that would make the sample satisfy the bound.
    pub required_kappa2: f64,
    pub samples: usize,
}

impl DominationReport {
    pub fn satisfied(&self) -> bool {
        self.worst_margin >= 0.0
    }
}

/// Samples the domination inequality on a uniform grid: `(-1, 1)` for the
/// singular parts, `[-3, 3]` when a regularization level is given.
pub fn check_domination(
    f: &SplitPotential,
    g: &SplitPotential,
    alpha: f64,
    lambda: Option<f64>,
    kappa1: f64,
    kappa2: f64,
    sample_count: usize,
) -> Result<DominationReport> {
    if !(-1.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidParameter {
            name: "alpha",
            reason: format!("{alpha} outside [-1, 1]"),
        });
    }
    if let Some(l) = lambda {
        check_lambda(l)?;
    }
    let n = sample_count.max(2);
    let mut report = DominationReport {
        worst_margin: f64::INFINITY,
        worst_at: 0.0,
        required_kappa2: 0.0,
        samples: n,
    };
    for i in 0..n {
        let t = (i as f64 + 0.5) / n as f64;
        let (fa, ga, s) = match lambda {
            None => {
                let s = -1.0 + 2.0 * t;
                (f.convex.derivative(alpha * s)?, g.convex.derivative(s)?, s)
            }
            Some(l) => {
                let s = -3.0 + 6.0 * t;
                (
                    f.convex.yosida_derivative(l, alpha * s),
                    g.convex.yosida_derivative(l, s),
                    s,
                )
            }
        };
        let margin = kappa1 * ga.abs() + kappa2 - fa.abs();
        if margin < report.worst_margin {
            report.worst_margin = margin;
            report.worst_at = s;
        }
        report.required_kappa2 = report.required_kappa2.max(fa.abs() - kappa1 * ga.abs());
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fh() -> SplitPotential {
        SplitPotential::log(1.0, 2.0)
    }

    #[test]
    fn log_potential_values() {
        let (w, dw) = fh().eval(0.0).unwrap();
        assert_eq!((w, dw), (0.0, 0.0));
        // direct arithmetic: 0.5*(1.5 ln 1.5 + 0.5 ln 0.5) - 0.25, 0.5 ln 3 - 1
        let (w, dw) = fh().eval(0.5).unwrap();
        let expected_w = 0.5 * (1.5 * 1.5f64.ln() + 0.5 * 0.5f64.ln()) - 0.25;
        assert!((w - expected_w).abs() < 1e-15);
        assert!((w + 0.11919).abs() < 1e-5);
        assert!((dw - (0.5 * 3f64.ln() - 1.0)).abs() < 1e-15);
        assert!((dw + 0.45069).abs() < 1e-5);
        assert!(matches!(fh().eval(1.0), Err(Error::SingularDomain { .. })));
        assert!(fh().eval(-1.2).is_err());
    }

    #[test]
    fn singular_part_normalization_and_blowup() {
        let c = fh().convex;
        assert_eq!(c.value(0.0).unwrap(), 0.0);
        assert_eq!(c.derivative(0.0).unwrap(), 0.0);
        // W₁′ grows like (Θ/2)ln(2/(1-|s|)): unbounded, ln(10)/2 per decade
        let mut last = 0.0;
        for k in 1..=15 {
            let edge = 1.0 - 10f64.powi(-k);
            let d = c.derivative(edge).unwrap();
            assert!(d > last + 1.0);
            assert_eq!(c.derivative(-edge).unwrap(), -d);
            last = d;
        }
        assert!(c.derivative(1.0 - 1e-6).unwrap() > 7.0);
        for i in 1..2000 {
            let s = -1.0 + i as f64 / 1000.0;
            assert!(c.second(s).unwrap() >= c.convexity_floor());
        }
    }

    #[test]
    fn resolvent_examples() {
        let p = fh();
        for lambda in [1.0, 0.1, 1e-3] {
            assert_eq!(p.convex.resolvent(lambda, 0.0).point, 0.0);
        }
        let q = SplitPotential::quadratic(1.0, 0.0);
        assert!((yosida_resolvent(&q, 1.0, 2.0).unwrap() - 1.0).abs() < 1e-15);
        assert!((yosida_derivative(&q, 1.0, 2.0).unwrap() - 1.0).abs() < 1e-15);

        let res = p.convex.resolvent(0.1, 5.0);
        assert!(res.point > 0.0 && res.point < 1.0);
        assert!(res.residual.abs() <= 1e-12 * (1.0 + 5.0));
        assert!(yosida_resolvent(&p, -1.0, 0.3).is_err());
    }

    #[test]
    fn yosida_second_matches_finite_difference() {
        let c = fh().convex;
        let h = 1e-5;
        for lambda in [1.0, 0.1, 0.01] {
            for s in [-2.0, -0.7, 0.0, 0.3, 0.95, 1.5] {
                let fd = (c.yosida_derivative(lambda, s + h) - c.yosida_derivative(lambda, s - h)) / (2.0 * h);
                let exact = c.yosida_second(lambda, s);
                assert!((fd - exact).abs() <= 1e-5 * (1.0 + exact), "λ={lambda} s={s}: {fd} vs {exact}");
                assert!(exact >= 1.0 / (1.0 + 1.0) - 1e-12);
            }
        }
    }

    #[test]
    fn yosida_value_derivative_consistent() {
        let c = fh().convex;
        let h = 1e-6;
        for lambda in [1.0, 0.1, 0.01] {
            for s in [-2.5, -0.99, -0.2, 0.4, 0.999, 3.0] {
                let fd = (c.yosida_value(lambda, s + h) - c.yosida_value(lambda, s - h)) / (2.0 * h);
                let d = c.yosida_derivative(lambda, s);
                assert!((fd - d).abs() <= 1e-5 * (1.0 + d.abs()), "λ={lambda} s={s}: {fd} vs {d}");
            }
        }
    }

    #[test]
    fn domination_trivial_cases() {
        let p = fh();
        let r = check_domination(&p, &p, 1.0, None, 1.0, 0.0, 10_000).unwrap();
        assert!(r.satisfied());
        let r = check_domination(&p, &p, 0.0, None, 0.0, 0.0, 1000).unwrap();
        assert!(r.worst_margin >= 0.0);
        assert!(check_domination(&p, &p, 2.0, None, 1.0, 0.0, 10).is_err());
    }
}
