//! Everything about a run that does not change in time: operators,
//! parameters, potentials and the coupling forms.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fem::{BulkSurfaceField, Domain, FemOperators};
use crate::forms::{CouplingForm, EllipticSolver, LinearBackend};
use crate::params::{mass_functional, DomainGeometry, MassValue, Regime, SystemParams};
use crate::potential::ModelPotential;

#[derive(Debug)]
pub struct Model {
    pub ops: FemOperators,
    pub params: SystemParams,
    pub geom: DomainGeometry,
    /// `F` in the bulk.
    pub bulk_potential: ModelPotential,
    /// `G` on the surface.
    pub surface_potential: ModelPotential,
    /// `⟨·,·⟩_{K,α}`, the form of the chemical potential equation.
    pub form_k: CouplingForm,
    /// `⟨·,·⟩_{L,β}`, the form of the transport equation.
    pub form_l: CouplingForm,
    pub elliptic: EllipticSolver,
    /// Lumped mass on `[bulk, surface]`.
    pub mass: Vec<f64>,
}

/// Parts of the free energy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergyBreakdown {
    pub bulk_dirichlet: f64,
    pub bulk_potential: f64,
    pub surface_dirichlet: f64,
    pub surface_potential: f64,
    pub k_penalty: f64,
    pub total: f64,
}

impl Model {
    /// Validates the parameters against the discrete geometry and builds
    /// the forms.
    pub fn new(
        ops: FemOperators,
        params: SystemParams,
        bulk_potential: ModelPotential,
        surface_potential: ModelPotential,
        backend: LinearBackend,
    ) -> Result<Self> {
        let geom = ops.geometry();
        params.validate(&geom)?;
        let form_k = CouplingForm::new(&ops, params.k, params.alpha)?;
        let form_l = CouplingForm::new(&ops, params.l, params.beta)?;
        let elliptic = EllipticSolver::from_form(&ops, form_l.clone(), backend)?;
        let mass = ops.full_mass_lumped();
        Ok(Self { ops, params, geom, bulk_potential, surface_potential, form_k, form_l, elliptic, mass })
    }

    pub fn bulk_len(&self) -> usize {
        self.ops.bulk_len()
    }

    pub fn surface_len(&self) -> usize {
        self.ops.surface_len()
    }

    pub fn full_len(&self) -> usize {
        self.mass.len()
    }

    pub fn zeros(&self) -> BulkSurfaceField {
        BulkSurfaceField::zeros(self.bulk_len(), self.surface_len())
    }

    pub fn mass_of(&self, f: &BulkSurfaceField) -> Result<MassValue> {
        mass_functional(f, &self.params, &self.ops)
    }

    /// Lumped-quadrature free energy.
    pub fn energy(&self, f: &BulkSurfaceField) -> Result<EnergyBreakdown> {
        self.ops.check_field(f)?;
        let bulk_dirichlet = 0.5 * self.ops.bulk_stiffness.bilinear(&f.bulk, &f.bulk);
        let surface_dirichlet = 0.5 * self.ops.surface_stiffness.bilinear(&f.surface, &f.surface);
        let bulk_potential = self.ops.integrate_nonlinear(|s| self.bulk_potential.value(s), &f.bulk, Domain::Bulk)?;
        let surface_potential =
            self.ops.integrate_nonlinear(|s| self.surface_potential.value(s), &f.surface, Domain::Surface)?;
        let k_penalty = if self.params.chi_k == 0.0 {
            0.0
        } else {
            let a = self.params.alpha;
            0.5 * self.params.chi_k
                * (0..self.surface_len())
                    .map(|j| {
                        let d = a * f.surface[j] - f.bulk[self.ops.trace[j]];
                        self.ops.surface_mass_lumped[j] * d * d
                    })
                    .sum::<f64>()
        };
        let total = bulk_dirichlet + bulk_potential + surface_dirichlet + surface_potential + k_penalty;
        Ok(EnergyBreakdown { bulk_dirichlet, bulk_potential, surface_dirichlet, surface_potential, k_penalty, total })
    }

    /// `|Ω| inf F + |Γ| inf G`, a lower bound of the energy.
    pub fn energy_floor(&self) -> f64 {
        self.geom.bulk_measure * self.bulk_potential.lower_bound()
            + self.geom.surface_measure * self.surface_potential.lower_bound()
    }

    /// `W′` applied nodewise, bulk with `F`, surface with `G`.
    pub fn potential_derivative(&self, f: &BulkSurfaceField) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.full_len());
        for (i, &s) in f.bulk.iter().enumerate() {
            out.push(self.bulk_potential.derivative(s).map_err(|e| with_node(e, i))?);
        }
        for (j, &s) in f.surface.iter().enumerate() {
            out.push(self.surface_potential.derivative(s).map_err(|e| with_node(e, self.bulk_len() + j))?);
        }
        Ok(out)
    }

    /// `‖(μ,θ)‖_{L,β}`.
    pub fn chemical_norm(&self, w: &BulkSurfaceField) -> f64 {
        let flat = w.to_flat();
        self.form_l.apply(&flat, &flat).max(0.0).sqrt()
    }

    /// `‖u‖²_{H¹}` of both components.
    pub fn h1_norm_sq(&self, f: &BulkSurfaceField) -> f64 {
        self.ops.h1_norm_sq(f)
    }

    /// Checks nodal bounds, the trace constraint and the mass target.
    pub fn check_admissible(&self, f: &BulkSurfaceField, tol: f64) -> Result<()> {
        self.ops.check_field(f)?;
        if f.max_abs() > 1.0 {
            return Err(Error::Precondition(format!("nodal magnitude {} exceeds 1", f.max_abs())));
        }
        let defect = self.form_k.space.constraint_defect(&f.to_flat());
        if defect > tol {
            return Err(Error::ConstraintViolation { defect });
        }
        let target = self.params.total_mass(&self.geom);
        let diff = self.mass_of(f)?.max_abs_diff(&target);
        if diff > tol * self.mass_scale() {
            return Err(Error::Precondition(format!("mass differs from the target by {diff:e}")));
        }
        Ok(())
    }

    /// Normalization for mass drifts: `β²|Ω| + |Γ|`, or `max(|Ω|, |Γ|)` when `L = ∞`.
    pub fn mass_scale(&self) -> f64 {
        if self.params.l.is_infinite() {
            self.geom.bulk_measure.max(self.geom.surface_measure)
        } else {
            self.params.mean_weight(&self.geom)
        }
    }

    /// Directions along which the mass can be adjusted without leaving the
    /// constrained space: one for `L < ∞`, two for `L = ∞`.
    fn mass_directions(&self) -> Vec<Vec<f64>> {
        let nb = self.bulk_len();
        let n = self.full_len();
        let space = &self.form_k.space;
        let (a, b) = (self.params.alpha, self.params.beta);
        let surface_ones: Vec<f64> = (0..n).map(|i| if i < nb { 0.0 } else { 1.0 }).collect();
        if self.params.l.is_infinite() {
            // interior bulk dofs and surface dofs, prolonged through the constraint
            let mut interior: Vec<f64> = (0..n).map(|i| if i < nb { 1.0 } else { 0.0 }).collect();
            if space.regime() == Regime::AffineTrace {
                for &t in &self.ops.trace {
                    interior[t] = 0.0;
                }
            }
            vec![space.enforce(&interior), space.enforce(&surface_ones)]
        } else {
            let c = if space.regime() == Regime::AffineTrace { a } else { b };
            vec![(0..n).map(|i| if i < nb { c } else { 1.0 }).collect()]
        }
    }

    /// Shifts `f` along constraint-preserving constants to hit the mass
    /// target exactly.
    pub fn project_mass(&self, f: &BulkSurfaceField) -> Result<BulkSurfaceField> {
        let nb = self.bulk_len();
        let target = self.params.total_mass(&self.geom).components();
        let current = self.mass_of(f)?.components();
        let dirs = self.mass_directions();
        let dm: Vec<Vec<f64>> = dirs
            .iter()
            .map(|d| self.mass_of(&BulkSurfaceField::from_flat(nb, d)).map(|m| m.components()))
            .collect::<Result<_>>()?;
        let rhs: Vec<f64> = target.iter().zip(&current).map(|(t, c)| t - c).collect();
        let coef = if dirs.len() == 1 {
            vec![rhs[0] / dm[0][0]]
        } else {
            // dm[k][i]: mass component i of direction k
            let det = dm[0][0] * dm[1][1] - dm[1][0] * dm[0][1];
            vec![(rhs[0] * dm[1][1] - rhs[1] * dm[1][0]) / det, (dm[0][0] * rhs[1] - dm[0][1] * rhs[0]) / det]
        };
        let mut flat = f.to_flat();
        for (d, c) in dirs.iter().zip(coef) {
            for (v, di) in flat.iter_mut().zip(d) {
                *v += c * di;
            }
        }
        Ok(BulkSurfaceField::from_flat(nb, &flat))
    }

    /// Admissible random initial data: uniform noise, trace-constrained
    /// when `K = 0`, shifted to the mass target and scaled so that every
    /// nodal value stays within `bound`.
    pub fn random_initial(&self, amplitude: f64, bound: f64, seed: u64) -> Result<BulkSurfaceField> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise: Vec<f64> = (0..self.full_len()).map(|_| rng.random_range(-amplitude..=amplitude)).collect();
        let noise = self.form_k.space.enforce(&noise);
        let nb = self.bulk_len();
        let build = |s: f64| -> Result<BulkSurfaceField> {
            let scaled: Vec<f64> = noise.iter().map(|v| s * v).collect();
            self.project_mass(&BulkSurfaceField::from_flat(nb, &scaled))
        };
        let base = build(0.0)?;
        if base.max_abs() >= bound {
            return Err(Error::Precondition(format!(
                "the mass target needs nodal values of magnitude {} ≥ {bound}",
                base.max_abs()
            )));
        }
        let full = build(1.0)?;
        if full.max_abs() <= bound {
            return Ok(full);
        }
        // the field is affine in the noise scale, so bisect on it
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if build(mid)?.max_abs() <= bound {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        build(lo)
    }
}

fn with_node(e: Error, node: usize) -> Error {
    match e {
        Error::SingularDomain { value, .. } => Error::SingularDomain { value, node: Some(node) },
        other => other,
    }
}
