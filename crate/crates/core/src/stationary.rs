//! Stationary states: `−Δφ + F′(φ) = μ∞`, `−Δ_Γψ + G′(ψ) + α∂ₙφ = θ∞`
//! with the `K` coupling on the boundary and the mass constraint.
//!
//! The multipliers are unknowns of the Newton system; the closed-form
//! expressions obtained by testing with constants serve as cross-checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::BulkSurfaceField;
use crate::model::Model;
use crate::params::Regime;
use crate::sparse::{CsrMatrix, LuSolver};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NewtonConfig {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 200 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StationarySolution {
    #[serde(skip)]
    pub phi: BulkSurfaceField,
    /// Coefficients of the kernel basis of the `L` form.
    pub multipliers: Vec<f64>,
    pub mu_inf: f64,
    pub theta_inf: f64,
    /// Mass-scaled maximum norm of the field equations.
    pub residual: f64,
    pub mass_defect: f64,
    pub iterations: usize,
    pub residual_history: Vec<f64>,
    /// Largest `r_{k+1}/r_k²` over the last three iterations, when available.
    pub convergence_ratio: Option<f64>,
    pub separation: f64,
}

/// Residual of the stationary equations.
#[derive(Debug, Clone, PartialEq)]
pub struct StationaryResidual {
    /// Field equations on the constrained space, divided by the lumped mass.
    pub field: Vec<f64>,
    /// `mass(u) - target`, one or two entries.
    pub mass: Vec<f64>,
    pub norm: f64,
}

/// `(μ∞, θ∞)` from the multiplier coefficients.
pub fn chemical_constants(model: &Model, multipliers: &[f64]) -> (f64, f64) {
    if model.params.l.is_infinite() {
        (multipliers[0], multipliers[1])
    } else {
        (model.params.beta * multipliers[0], multipliers[0])
    }
}

struct System<'a> {
    model: &'a Model,
    /// `P_Uᵀ M k_i`.
    border: Vec<Vec<f64>>,
    target: Vec<f64>,
    mass_u: Vec<f64>,
    scale: f64,
}

impl<'a> System<'a> {
    fn new(model: &'a Model) -> Self {
        let space = &model.form_k.space;
        let border = model
            .form_l
            .kernel()
            .iter()
            .map(|k| space.restrict(&k.iter().zip(&model.mass).map(|(a, b)| a * b).collect::<Vec<_>>()))
            .collect();
        Self {
            model,
            border,
            target: model.params.total_mass(&model.geom).components(),
            mass_u: space.reduced_diagonal(&model.mass),
            scale: model.mass_scale(),
        }
    }

    fn residual(&self, z: &[f64], c: &[f64]) -> Result<StationaryResidual> {
        let m = self.model;
        let space = &m.form_k.space;
        let u = space.prolong(z);
        let phi = BulkSurfaceField::from_flat(m.bulk_len(), &u);
        let wp = m.potential_derivative(&phi)?;
        let mw: Vec<f64> = wp.iter().zip(&m.mass).map(|(a, b)| a * b).collect();
        let mut r = m.form_k.reduced.mul_vec(z);
        for (ri, v) in r.iter_mut().zip(space.restrict(&mw)) {
            *ri += v;
        }
        for (ci, b) in c.iter().zip(&self.border) {
            for (ri, bi) in r.iter_mut().zip(b) {
                *ri -= ci * bi;
            }
        }
        let field: Vec<f64> = r.iter().zip(&self.mass_u).map(|(a, b)| a / b).collect();
        let mass: Vec<f64> = m.mass_of(&phi)?.components().iter().zip(&self.target).map(|(a, b)| a - b).collect();
        let norm = field
            .iter()
            .map(|v| v.abs())
            .chain(mass.iter().map(|v| v.abs() / self.scale))
            .fold(0.0, f64::max);
        Ok(StationaryResidual { field, mass, norm })
    }

    /// Multipliers minimizing the mass-weighted residual for fixed `z`.
    fn fit_multipliers(&self, z: &[f64]) -> Result<Vec<f64>> {
        let nc = self.border.len();
        let r0 = self.residual(z, &vec![0.0; nc])?;
        // r = r0 - Σ c_i b_i / m in the weighted least-squares sense
        let g: Vec<f64> = r0.field.iter().zip(&self.mass_u).map(|(a, b)| a * b).collect();
        let mut gram = vec![vec![0.0; nc]; nc];
        let mut rhs = vec![0.0; nc];
        for i in 0..nc {
            for j in 0..nc {
                gram[i][j] = (0..g.len()).map(|k| self.border[i][k] * self.border[j][k] / self.mass_u[k]).sum();
            }
            rhs[i] = (0..g.len()).map(|k| self.border[i][k] * g[k] / self.mass_u[k]).sum();
        }
        Ok(solve_small(&gram, &rhs))
    }
}

fn solve_small(a: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    match b.len() {
        1 => vec![b[0] / a[0][0]],
        _ => {
            let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
            vec![(b[0] * a[1][1] - a[0][1] * b[1]) / det, (a[0][0] * b[1] - a[1][0] * b[0]) / det]
        }
    }
}

/// Residual of the stationary system at `candidate` with the given
/// multiplier coefficients.
pub fn stationary_residual(model: &Model, candidate: &BulkSurfaceField, multipliers: &[f64]) -> Result<StationaryResidual> {
    model.ops.check_field(candidate)?;
    let expected = model.form_l.kernel().len();
    if multipliers.len() != expected {
        return Err(Error::DimensionMismatch { expected, got: multipliers.len() });
    }
    let z = model.form_k.space.inject(&candidate.to_flat());
    System::new(model).residual(&z, multipliers)
}

/// Damped Newton on the bordered system for field and multipliers.
pub fn newton_solve(model: &Model, guess: &BulkSurfaceField, cfg: NewtonConfig) -> Result<StationarySolution> {
    model.check_admissible(guess, 1e-8)?;
    if guess.max_abs() >= 1.0 && model.bulk_potential.requires_interior() {
        return Err(Error::SingularDomain { value: guess.max_abs(), node: None });
    }
    let sys = System::new(model);
    let space = &model.form_k.space;
    let nu = space.dim();
    let nc = sys.border.len();
    let interior = model.bulk_potential.requires_interior() || model.surface_potential.requires_interior();

    let mut t: Vec<(usize, usize, f64)> = model.form_k.reduced.triplets().collect();
    for i in 0..nu {
        t.push((i, i, 0.0));
    }
    for (k, b) in sys.border.iter().enumerate() {
        for (i, &v) in b.iter().enumerate() {
            if v != 0.0 {
                t.push((i, nu + k, -v));
                t.push((nu + k, i, -v));
            }
        }
    }
    let base = CsrMatrix::from_triplets(nu + nc, nu + nc, &t);
    let diag: Vec<usize> = (0..nu).map(|i| base.position(i, i).unwrap()).collect();
    let solver = LuSolver::new(&base)?;

    let mut z = space.inject(&guess.to_flat());
    let mut c = sys.fit_multipliers(&z)?;
    let mut res = sys.residual(&z, &c)?;
    let mut history = vec![res.norm];
    let merit = |r: &StationaryResidual| -> f64 {
        r.field.iter().map(|v| v * v).sum::<f64>() + r.mass.iter().map(|v| (v / sys.scale).powi(2)).sum::<f64>()
    };
    let mut iterations = 0;
    let mut shift = 0.0f64;
    while res.norm > cfg.tol {
        if iterations == cfg.max_iter {
            return Err(Error::NonConvergence { iterations, residual: res.norm });
        }
        iterations += 1;
        let u = space.prolong(&z);
        let nb = model.bulk_len();
        let hess: Vec<f64> = u
            .iter()
            .enumerate()
            .map(|(i, &s)| {
                let p = if i < nb { &model.bulk_potential } else { &model.surface_potential };
                p.second(s).map(|d| d * model.mass[i])
            })
            .collect::<Result<_>>()?;
        let hess = space.reduced_diagonal(&hess);
        let rhs: Vec<f64> = res
            .field
            .iter()
            .zip(&sys.mass_u)
            .map(|(f, m)| -f * m)
            .chain(res.mass.iter().copied())
            .collect();
        let m0 = merit(&res);
        // Damped Newton first. When it stalls, switch to pseudo-transient
        // continuation: shift the Jacobian by σM (an implicit gradient-flow
        // step) and let σ follow the residual down. This tames nearly
        // singular modes such as rotations of a pattern on the disk.
        let mut accepted = None;
        loop {
            let mut j = base.clone();
            for (r, h) in hess.iter().enumerate() {
                j.values_mut()[diag[r]] += h + shift * sys.mass_u[r];
            }
            let delta = solver.factor(&j)?.solve(&rhs);
            let (dz, dc) = delta.split_at(nu);
            let mut alpha = 1.0f64;
            if interior {
                for (x, d) in u.iter().zip(space.prolong(dz)) {
                    if d != 0.0 {
                        let room = if d > 0.0 { 1.0 - x } else { 1.0 + x };
                        alpha = alpha.min(0.99 * room / d.abs());
                    }
                }
            }
            let trial = |alpha: f64| {
                let zt: Vec<f64> = z.iter().zip(dz).map(|(a, b)| a + alpha * b).collect();
                let ct: Vec<f64> = c.iter().zip(dc).map(|(a, b)| a + alpha * b).collect();
                sys.residual(&zt, &ct).ok().map(|r| (zt, ct, r))
            };
            if shift == 0.0 {
                for _ in 0..20 {
                    if let Some(t) = trial(alpha) {
                        if merit(&t.2) <= (1.0 - 1e-4 * alpha) * m0 || t.2.norm <= cfg.tol {
                            accepted = Some(t);
                            break;
                        }
                    }
                    alpha *= 0.5;
                }
                if accepted.is_some() {
                    break;
                }
                shift = 1.0;
                continue;
            }
            if let Some(t) = trial(alpha) {
                if t.2.norm <= 2.0 * res.norm {
                    // switched evolution relaxation
                    shift *= (t.2.norm / res.norm).max(0.1);
                    if shift < 1e-8 {
                        shift = 0.0;
                    }
                    accepted = Some(t);
                    break;
                }
            }
            shift *= 10.0;
            if shift > 1e12 {
                break;
            }
        }
        let Some((zt, ct, r)) = accepted else {
            return Err(Error::NonConvergence { iterations, residual: res.norm });
        };
        z = zt;
        c = ct;
        res = r;
        history.push(res.norm);
    }

    let phi = BulkSurfaceField::from_flat(model.bulk_len(), &space.prolong(&z));
    let (mu_inf, theta_inf) = chemical_constants(model, &c);
    let convergence_ratio = (history.len() >= 3).then(|| {
        history
            .windows(2)
            .rev()
            .take(3)
            .filter(|w| w[0] > 0.0)
            .map(|w| w[1] / (w[0] * w[0]))
            .fold(0.0, f64::max)
    });
    Ok(StationarySolution {
        separation: separation_width(&phi),
        mass_defect: res.mass.iter().fold(0.0, |m, v| m.max(v.abs())),
        phi,
        multipliers: c,
        mu_inf,
        theta_inf,
        residual: res.norm,
        iterations,
        residual_history: history,
        convergence_ratio,
    })
}

/// `1 - max |nodal value|`.
pub fn separation_width(phi: &BulkSurfaceField) -> f64 {
    1.0 - phi.max_abs()
}

/// Multiplier values predicted by testing the stationary system with
/// constants, and the largest disagreement with the Newton multipliers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MultiplierCheck {
    pub mu_formula: Option<f64>,
    pub theta_formula: Option<f64>,
    /// Relative disagreement, or the defect of the integral identity when
    /// the multipliers are not individually determined (`K = 0`, `L = ∞`).
    pub defect: f64,
}

pub fn multiplier_cross_check(model: &Model, sol: &StationarySolution) -> Result<MultiplierCheck> {
    let p = &model.params;
    let ops = &model.ops;
    let phi = &sol.phi;
    let fp: Vec<f64> = phi.bulk.iter().map(|&s| model.bulk_potential.derivative(s)).collect::<Result<_>>()?;
    let gp: Vec<f64> = phi.surface.iter().map(|&s| model.surface_potential.derivative(s)).collect::<Result<_>>()?;
    let int_f = ops.integrate_bulk(&fp);
    let int_g = ops.integrate_surface(&gp);
    let (omega, gamma) = (model.geom.bulk_measure, model.geom.surface_measure);
    let rel = |a: f64, b: f64| (a - b).abs() / (1.0 + b.abs());
    if !p.l.is_infinite() {
        let theta = (p.alpha * int_f + int_g) / (p.alpha * p.beta * omega + gamma);
        let mu = p.beta * theta;
        let defect = rel(theta, sol.theta_inf).max(rel(mu, sol.mu_inf));
        return Ok(MultiplierCheck { mu_formula: Some(mu), theta_formula: Some(theta), defect });
    }
    if model.form_k.regime() == Regime::AffineTrace {
        // ∫_Γ ∂ₙφ = ∫_Ω (F′ - μ∞) leaves one identity for two constants
        let lhs = p.alpha * int_f + int_g;
        let rhs = p.alpha * sol.mu_inf * omega + sol.theta_inf * gamma;
        return Ok(MultiplierCheck { mu_formula: None, theta_formula: None, defect: rel(lhs, rhs) });
    }
    // boundary flux ∂ₙφ = χ(K)(αψ - φ)
    let flux: f64 = (0..ops.surface_len())
        .map(|j| ops.surface_mass_lumped[j] * p.chi_k * (p.alpha * phi.surface[j] - phi.bulk[ops.trace[j]]))
        .sum();
    let mu = (int_f - flux) / omega;
    let theta = (int_g + p.alpha * flux) / gamma;
    let defect = rel(mu, sol.mu_inf).max(rel(theta, sol.theta_inf));
    Ok(MultiplierCheck { mu_formula: Some(mu), theta_formula: Some(theta), defect })
}

/// Largest `|dE(φ)[d]| / ‖d‖_{L²}` over random directions that keep the
/// trace constraint and the mass.
pub fn criticality_defect(model: &Model, phi: &BulkSurfaceField, directions: usize, seed: u64) -> Result<f64> {
    let u = phi.to_flat();
    let mut grad = model.form_k.matrix.mul_vec(&u);
    for ((g, w), m) in grad.iter_mut().zip(model.potential_derivative(phi)?).zip(&model.mass) {
        *g += m * w;
    }
    let nb = model.bulk_len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..directions {
        let noise: Vec<f64> = (0..u.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let d = model.form_k.space.enforce(&noise);
        // remove the mass change through the shift that `project_mass` applies
        let shifted = model.project_mass(&BulkSurfaceField::from_flat(nb, &d.iter().zip(&u).map(|(a, b)| a + b).collect::<Vec<_>>()))?;
        let d: Vec<f64> = shifted.to_flat().iter().zip(&u).map(|(a, b)| a - b).collect();
        let norm = d.iter().zip(&model.mass).map(|(x, m)| m * x * x).sum::<f64>().sqrt();
        let dd: f64 = d.iter().zip(&grad).map(|(a, b)| a * b).sum();
        worst = worst.max(dd.abs() / norm);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forms::LinearBackend;
    use crate::params::{Coupling, MassTarget, SystemParams};
    use crate::potential::{ModelPotential, SplitPotential};
    use crate::stepper::{SchemeConfig, Stepper};
    use crate::velocity::VelocityPair;
    use crate::{assemble, build_disk_mesh};

    fn model(radius: f64, k: Coupling, l: Coupling, mass: MassTarget, alpha: f64, beta: f64) -> Model {
        let ops = assemble(&build_disk_mesh(radius, 2).unwrap()).unwrap();
        let geom = ops.geometry();
        let params = SystemParams::new(k, l, alpha, beta, mass, &geom).unwrap();
        let p = ModelPotential::Direct(SplitPotential::log(1.0, 2.0));
        Model::new(ops, params, p, p, LinearBackend::Direct).unwrap()
    }

    #[test]
    fn constant_state_needs_no_iteration() {
        let m = model(1.0, Coupling::Finite(1.0), Coupling::Finite(1.0), MassTarget::Coupled(0.3), 1.0, 1.0);
        let phi = BulkSurfaceField::constant(m.bulk_len(), m.surface_len(), 0.3, 0.3);
        let fp = m.bulk_potential.derivative(0.3).unwrap();
        let r = stationary_residual(&m, &phi, &[fp]).unwrap();
        assert!(r.norm <= 1e-12, "{}", r.norm);
        let sol = newton_solve(&m, &phi, NewtonConfig::default()).unwrap();
        assert_eq!(sol.iterations, 0);
        assert!((sol.mu_inf - fp).abs() < 1e-12);
        assert!((sol.separation - 0.7).abs() < 1e-15);
        let r = stationary_residual(&m, &phi, &[0.0]).unwrap();
        assert!(r.norm > 0.1);
    }

    #[test]
    fn perturbed_start_converges_in_every_regime() {
        let cases = [
            (Coupling::Finite(1.0), Coupling::Finite(1.0), MassTarget::Coupled(0.2), 1.0, 1.0),
            (Coupling::Finite(0.0), Coupling::Finite(0.0), MassTarget::Coupled(0.1), 0.8, 1.2),
            (Coupling::Infinite, Coupling::Finite(1.0), MassTarget::Coupled(-0.1), 0.5, 1.0),
            (Coupling::Finite(2.0), Coupling::Infinite, MassTarget::Split(0.2, -0.3), 0.7, 1.0),
            (Coupling::Infinite, Coupling::Infinite, MassTarget::Split(0.2, -0.3), 1.0, 1.0),
            (Coupling::Finite(0.0), Coupling::Infinite, MassTarget::Split(0.1, 0.2), 0.5, 1.0),
        ];
        for (k, l, mass, a, b) in cases {
            let m = model(1.0, k, l, mass, a, b);
            let guess = m.random_initial(1e-3, 0.9, 5).unwrap();
            let sol = newton_solve(&m, &guess, NewtonConfig::default()).unwrap();
            assert!(sol.residual <= 1e-10 && sol.mass_defect <= 1e-10 * m.mass_scale());
            let check = multiplier_cross_check(&m, &sol).unwrap();
            assert!(check.defect <= 1e-8, "{k} {l}: {check:?}");
            assert!(criticality_defect(&m, &sol.phi, 5, 1).unwrap() <= 1e-8);
            // fixed point of the flow
            let mut st = Stepper::new(&m, SchemeConfig::default(), VelocityPair::zero(&m.ops)).unwrap();
            let s0 = st.initial_state(&sol.phi, 0.0).unwrap();
            let (s1, _) = st.step(&s0).unwrap();
            assert!(s1.phi.sub(&sol.phi).max_abs() <= 1e-9, "{k} {l}");
        }
    }

    #[test]
    fn separated_pattern_from_spinodal_data() {
        let m = model(3.0, Coupling::Finite(1.0), Coupling::Finite(1.0), MassTarget::Coupled(0.0), 1.0, 1.0);
        let phi = m.random_initial(0.3, 0.9, 2).unwrap();
        let mut st = Stepper::new(&m, SchemeConfig { dt: 0.05, ..Default::default() }, VelocityPair::zero(&m.ops)).unwrap();
        let rec = st.run(&phi, 0.0, 60.0, 100).unwrap();
        let sol = newton_solve(&m, &rec.final_state.phi, NewtonConfig::default()).unwrap();
        assert!(sol.separation > 0.0 && sol.separation < 0.9);
        let margin = rec.samples.last().unwrap().margin;
        assert!((margin - sol.separation).abs() <= 0.1 * sol.separation);
    }
}
