//! Scalar model parameters, the coupling weight function and the mass
//! functionals.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{BulkSurfaceField, FemOperators};

/// A coupling constant in `[0, ∞]`.
///
/// The infinite case is a separate variant so that no float infinity ever
/// reaches arithmetic.
///
/// Serialized as a plain number, or as the string `"infinity"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Coupling {
    Finite(f64),
    Infinite,
}

impl Serialize for Coupling {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Coupling::Finite(r) => s.serialize_f64(*r),
            Coupling::Infinite => s.serialize_str("infinity"),
        }
    }
}

impl<'de> Deserialize<'de> for Coupling {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Number(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Number(r) => Coupling::finite(r).map_err(serde::de::Error::custom),
            Raw::Text(t) if matches!(t.as_str(), "infinity" | "inf") => Ok(Coupling::Infinite),
            Raw::Text(t) => Err(serde::de::Error::custom(format!("expected a number or \"infinity\", got {t:?}"))),
        }
    }
}

impl Coupling {
    pub fn finite(r: f64) -> Result<Self> {
        if !(r >= 0.0) || !r.is_finite() {
            return Err(Error::InvalidParameter {
                name: "coupling",
                reason: format!("{r} is not a finite non-negative number"),
            });
        }
        Ok(Coupling::Finite(r))
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Coupling::Finite(r) if *r == 0.0)
    }

    pub fn is_infinite(&self) -> bool {
        matches!(self, Coupling::Infinite)
    }

    /// Which of the three regimes the constant selects.
    pub fn regime(&self) -> Regime {
        match self {
            Coupling::Infinite => Regime::Decoupled,
            Coupling::Finite(r) if *r == 0.0 => Regime::AffineTrace,
            Coupling::Finite(_) => Regime::Penalty,
        }
    }
}

impl std::fmt::Display for Coupling {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Coupling::Finite(r) => write!(f, "{r}"),
            Coupling::Infinite => f.write_str("infinity"),
        }
    }
}

/// The constraint structure selected by a coupling constant `r`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Regime {
    /// `r = 0`: the bulk trace equals the weighted surface field.
    AffineTrace,
    /// `r ∈ (0, ∞)`: trace mismatch is penalized with weight `1/r`.
    Penalty,
    /// `r = ∞`: no coupling term.
    Decoupled,
}

/// `χ(r) = 1/r` for `r ∈ (0, ∞)` and `0` for `r ∈ {0, ∞}`.
pub fn chi(r: Coupling) -> Result<f64> {
    match r {
        Coupling::Infinite => Ok(0.0),
        Coupling::Finite(v) if v < 0.0 || v.is_nan() => Err(Error::InvalidParameter {
            name: "r",
            reason: format!("chi is defined on [0, ∞], got {v}"),
        }),
        Coupling::Finite(v) if v == 0.0 => Ok(0.0),
        Coupling::Finite(v) => Ok(1.0 / v),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DomainGeometry {
    pub bulk_measure: f64,
    pub surface_measure: f64,
}

impl DomainGeometry {
    pub fn new(bulk_measure: f64, surface_measure: f64) -> Result<Self> {
        if !(bulk_measure > 0.0) || !(surface_measure > 0.0) {
            return Err(Error::InvalidParameter {
                name: "geometry",
                reason: format!("measures must be positive, got |Ω| = {bulk_measure}, |Γ| = {surface_measure}"),
            });
        }
        Ok(Self { bulk_measure, surface_measure })
    }
}

/// Prescribed mass, given as means.
///
/// For `L < ∞` the value is the generalized bulk-surface mean `m`; for
/// `L = ∞` it is the pair of separate means `(⟨φ⟩_Ω, ⟨ψ⟩_Γ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum MassTarget {
    Coupled(f64),
    Split(f64, f64),
}

/// Value of a mass functional: one number when `L < ∞`, two otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum MassValue {
    Coupled(f64),
    Split(f64, f64),
}

impl MassValue {
    /// Largest component-wise absolute difference.
    pub fn max_abs_diff(&self, other: &MassValue) -> f64 {
        match (self, other) {
            (MassValue::Coupled(a), MassValue::Coupled(b)) => (a - b).abs(),
            (MassValue::Split(a1, a2), MassValue::Split(b1, b2)) => {
                (a1 - b1).abs().max((a2 - b2).abs())
            }
            _ => f64::INFINITY,
        }
    }

    pub fn components(&self) -> Vec<f64> {
        match self {
            MassValue::Coupled(a) => vec![*a],
            MassValue::Split(a, b) => vec![*a, *b],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    pub k: Coupling,
    pub l: Coupling,
    pub alpha: f64,
    pub beta: f64,
    pub mass: MassTarget,
    pub chi_k: f64,
    pub chi_l: f64,
}

impl SystemParams {
    /// Validates the coupling constants (rule `A2`) and the mass target
    /// (rule `D1`) against the given geometry.
    pub fn new(
        k: Coupling,
        l: Coupling,
        alpha: f64,
        beta: f64,
        mass: MassTarget,
        geom: &DomainGeometry,
    ) -> Result<Self> {
        let params = Self {
            k,
            l,
            alpha,
            beta,
            mass,
            chi_k: chi(k)?,
            chi_l: chi(l)?,
        };
        params.validate(geom)?;
        Ok(params)
    }

    pub fn validate(&self, geom: &DomainGeometry) -> Result<()> {
        chi(self.k)?;
        chi(self.l)?;
        if !(-1.0..=1.0).contains(&self.alpha) {
            return Err(Error::Admissibility {
                rule: "A2",
                reason: format!("alpha = {} is outside [-1, 1]", self.alpha),
            });
        }
        if !self.beta.is_finite() {
            return Err(Error::Admissibility {
                rule: "A2",
                reason: format!("beta = {} is not finite", self.beta),
            });
        }
        let (omega, gamma) = (geom.bulk_measure, geom.surface_measure);
        let defect = self.alpha * self.beta * omega + gamma;
        if defect.abs() <= 1e-12 * (omega + gamma) {
            return Err(Error::Admissibility {
                rule: "A2",
                reason: format!("alpha*beta*|Ω| + |Γ| = {defect:e} vanishes"),
            });
        }
        let open = |v: f64| v > -1.0 && v < 1.0;
        match (self.l.is_infinite(), self.mass) {
            (false, MassTarget::Coupled(m)) => {
                if !open(m) || !open(self.beta * m) {
                    return Err(Error::Admissibility {
                        rule: "D1",
                        reason: format!("need m, beta*m in (-1, 1); got m = {m}, beta*m = {}", self.beta * m),
                    });
                }
            }
            (true, MassTarget::Split(m1, m2)) => {
                if !open(m1) || !open(m2) {
                    return Err(Error::Admissibility {
                        rule: "D1",
                        reason: format!("need m1, m2 in (-1, 1); got ({m1}, {m2})"),
                    });
                }
            }
            (false, MassTarget::Split(..)) => {
                return Err(Error::Admissibility {
                    rule: "D1",
                    reason: "L < ∞ requires a single mass value m".into(),
                })
            }
            (true, MassTarget::Coupled(_)) => {
                return Err(Error::Admissibility {
                    rule: "D1",
                    reason: "L = ∞ requires a pair of masses (m1, m2)".into(),
                })
            }
        }
        Ok(())
    }

    /// The denominator `β²|Ω| + |Γ|` of the generalized mean.
    pub fn mean_weight(&self, geom: &DomainGeometry) -> f64 {
        self.beta * self.beta * geom.bulk_measure + geom.surface_measure
    }

    /// The mass target in the total-mass convention of the conservation law.
    pub fn total_mass(&self, geom: &DomainGeometry) -> MassValue {
        match self.mass {
            MassTarget::Coupled(m) => MassValue::Coupled(m * self.mean_weight(geom)),
            MassTarget::Split(m1, m2) => {
                MassValue::Split(m1 * geom.bulk_measure, m2 * geom.surface_measure)
            }
        }
    }
}

fn check_dims(field: &BulkSurfaceField, ops: &FemOperators) -> Result<()> {
    if field.bulk.len() != ops.bulk_mass_lumped.len() {
        return Err(Error::DimensionMismatch {
            expected: ops.bulk_mass_lumped.len(),
            got: field.bulk.len(),
        });
    }
    if field.surface.len() != ops.surface_mass_lumped.len() {
        return Err(Error::DimensionMismatch {
            expected: ops.surface_mass_lumped.len(),
            got: field.surface.len(),
        });
    }
    Ok(())
}

/// Generalized bulk-surface mean (or the pair of separate means when `L = ∞`).
pub fn generalized_mean(
    field: &BulkSurfaceField,
    params: &SystemParams,
    geom: &DomainGeometry,
    ops: &FemOperators,
) -> Result<MassValue> {
    check_dims(field, ops)?;
    let bulk = ops.integrate_bulk(&field.bulk);
    let surface = ops.integrate_surface(&field.surface);
    Ok(if params.l.is_infinite() {
        MassValue::Split(bulk / geom.bulk_measure, surface / geom.surface_measure)
    } else {
        MassValue::Coupled((params.beta * bulk + surface) / params.mean_weight(geom))
    })
}

/// `β∫φ + ∫ψ` when `L < ∞`, `(∫φ, ∫ψ)` when `L = ∞`.
pub fn mass_functional(
    field: &BulkSurfaceField,
    params: &SystemParams,
    ops: &FemOperators,
) -> Result<MassValue> {
    check_dims(field, ops)?;
    let bulk = ops.integrate_bulk(&field.bulk);
    let surface = ops.integrate_surface(&field.surface);
    Ok(if params.l.is_infinite() {
        MassValue::Split(bulk, surface)
    } else {
        MassValue::Coupled(params.beta * bulk + surface)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chi_branches() {
        assert_eq!(chi(Coupling::Finite(0.0)).unwrap(), 0.0);
        assert_eq!(chi(Coupling::Finite(2.0)).unwrap(), 0.5);
        assert_eq!(chi(Coupling::Infinite).unwrap(), 0.0);
        assert!(chi(Coupling::Finite(-1.0)).is_err());
    }

    #[test]
    fn chi_times_r_is_one() {
        for r in [1e-8, 0.3, 1.0, 7.0, 1e9] {
            assert_eq!(chi(Coupling::Finite(r)).unwrap() * r, 1.0, "r = {r}");
        }
    }

    fn disk_geom() -> DomainGeometry {
        DomainGeometry::new(std::f64::consts::PI, 2.0 * std::f64::consts::PI).unwrap()
    }

    #[test]
    fn a2_rejects_vanishing_denominator() {
        let geom = disk_geom();
        // alpha*beta*pi + 2pi = 0 for alpha = 1, beta = -2
        let err = SystemParams::new(
            Coupling::Finite(1.0),
            Coupling::Finite(1.0),
            1.0,
            -2.0,
            MassTarget::Coupled(0.1),
            &geom,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Admissibility { rule: "A2", .. }));
        assert!(SystemParams::new(
            Coupling::Finite(1.0),
            Coupling::Finite(1.0),
            1.0,
            2.0,
            MassTarget::Coupled(0.1),
            &geom,
        )
        .is_ok());
    }

    #[test]
    fn d1_rules() {
        let geom = disk_geom();
        let mk = |beta, mass| {
            SystemParams::new(Coupling::Finite(1.0), Coupling::Finite(1.0), 1.0, beta, mass, &geom)
        };
        let err = mk(2.0, MassTarget::Coupled(0.6)).unwrap_err();
        assert!(matches!(err, Error::Admissibility { rule: "D1", .. }));
        assert!(mk(1.0, MassTarget::Split(0.0, 0.0)).is_err());
        let split = SystemParams::new(
            Coupling::Finite(1.0),
            Coupling::Infinite,
            1.0,
            1.0,
            MassTarget::Split(0.3, -0.9),
            &geom,
        );
        assert!(split.is_ok());
    }

    #[test]
    fn alpha_outside_interval_rejected() {
        let geom = disk_geom();
        let err = SystemParams::new(
            Coupling::Infinite,
            Coupling::Infinite,
            1.5,
            1.0,
            MassTarget::Split(0.0, 0.0),
            &geom,
        );
        assert!(err.is_err());
    }
}
