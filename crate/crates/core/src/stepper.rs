//! Backward Euler with convex splitting for the coupled system.
//!
//! One step solves, for `u = (φ,ψ)` in the `K`-constrained space and
//! `w = (μ,θ)` in the `L`-constrained space,
//!
//! ```text
//! (u - uⁿ, ζ) - dt (uⁿ v·∇ζ) + dt ⟨w, ζ⟩_{L,β} = 0
//! (w, η) = ⟨u, η⟩_{K,α} + (W₁′(u) + W₂′(uⁿ), η)
//! ```
//!
//! with lumped mass, by Newton's method on the monolithic system.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::BulkSurfaceField;
use crate::forms::ReducedSpace;
use crate::model::{EnergyBreakdown, Model};
use crate::params::MassValue;
use crate::sparse::{norm_inf, CsrMatrix, LdltSolver, LuSolver};
use crate::velocity::{convection_matrix, sample_norm, VelocityPair};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConvectionTreatment {
    /// `φⁿ` and `v(tⁿ)`.
    #[default]
    Explicit,
    /// `φⁿ⁺¹` and `v(tⁿ⁺¹)`.
    SemiImplicit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchemeConfig {
    pub dt: f64,
    pub convection: ConvectionTreatment,
    /// Bound on the mass-scaled residual in the maximum norm.
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    /// Upwind elements whose local Péclet number exceeds 2.
    pub upwind: bool,
    /// How many times a failed step may be split in half.
    pub max_halvings: u32,
}

impl Default for SchemeConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            convection: ConvectionTreatment::Explicit,
            newton_tol: 1e-10,
            newton_max_iter: 50,
            upwind: true,
            max_halvings: 4,
        }
    }
}

impl SchemeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::InvalidParameter { name: "dt", reason: format!("must be positive, got {}", self.dt) });
        }
        if !(self.newton_tol > 0.0) || self.newton_max_iter == 0 {
            return Err(Error::InvalidParameter {
                name: "newton",
                reason: "tolerance and iteration limit must be positive".into(),
            });
        }
        Ok(())
    }
}

/// Order parameters and chemical potentials at one time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    pub t: f64,
    /// `(φ, ψ)`.
    pub phi: BulkSurfaceField,
    /// `(μ, θ)` from the step that produced this state.
    pub mu: BulkSurfaceField,
    pub step: u64,
}

const CHECKPOINT_MAGIC: &str = "bsch-checkpoint 1";

impl SimState {
    /// Text dump storing every float as its IEEE bit pattern, so that
    /// reloading is exact.
    pub fn to_checkpoint(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{CHECKPOINT_MAGIC}");
        let _ = writeln!(out, "nodes {} {}", self.phi.bulk.len(), self.phi.surface.len());
        let _ = writeln!(out, "time {:016x} {}", self.t.to_bits(), self.step);
        for (name, v) in [
            ("phi", &self.phi.bulk),
            ("psi", &self.phi.surface),
            ("mu", &self.mu.bulk),
            ("theta", &self.mu.surface),
        ] {
            let _ = write!(out, "{name}");
            for x in v {
                let _ = write!(out, " {:016x}", x.to_bits());
            }
            out.push('\n');
        }
        out
    }

    pub fn from_checkpoint(text: &str) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        let mut lines = text.lines();
        if lines.next() != Some(CHECKPOINT_MAGIC) {
            return Err(bad("missing header"));
        }
        let dims: Vec<usize> = lines
            .next()
            .and_then(|l| l.strip_prefix("nodes "))
            .ok_or_else(|| bad("missing node counts"))?
            .split_whitespace()
            .map(|s| s.parse().map_err(|_| bad("bad node count")))
            .collect::<Result<_>>()?;
        if dims.len() != 2 {
            return Err(bad("expected two node counts"));
        }
        let time_line = lines.next().and_then(|l| l.strip_prefix("time ")).ok_or_else(|| bad("missing time"))?;
        let mut it = time_line.split_whitespace();
        let t = f64::from_bits(
            u64::from_str_radix(it.next().ok_or_else(|| bad("missing time"))?, 16).map_err(|_| bad("bad time"))?,
        );
        let step: u64 = it.next().ok_or_else(|| bad("missing step"))?.parse().map_err(|_| bad("bad step"))?;
        let mut read = |name: &str, len: usize| -> Result<Vec<f64>> {
            let line = lines.next().ok_or_else(|| bad("truncated"))?;
            let mut parts = line.split_whitespace();
            if parts.next() != Some(name) {
                return Err(Error::Checkpoint(format!("expected `{name}`")));
            }
            let v: Vec<f64> = parts
                .map(|p| u64::from_str_radix(p, 16).map(f64::from_bits).map_err(|_| bad("bad value")))
                .collect::<Result<_>>()?;
            if v.len() != len {
                return Err(Error::Checkpoint(format!("`{name}` has {} values, expected {len}", v.len())));
            }
            Ok(v)
        };
        let phi = BulkSurfaceField::new(read("phi", dims[0])?, read("psi", dims[1])?);
        let mu = BulkSurfaceField::new(read("mu", dims[0])?, read("theta", dims[1])?);
        Ok(Self { t, phi, mu, step })
    }
}

/// What happened during one step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepReport {
    pub newton_iterations: usize,
    pub residual: f64,
    pub upwinded: usize,
    /// Some nodal value left `(-1, 1)` (possible with the regularized potential).
    pub interior_breach: bool,
    /// Number of sub-steps used after halving.
    pub substeps: usize,
}

struct Jacobian {
    base: HashMap<u64, Vec<f64>>,
    pattern: CsrMatrix,
    solver: LuSolver,
    /// Used while the Jacobian is symmetric.
    ldlt: Option<LdltSolver>,
    diag: Vec<usize>,
}

/// Advances states of one model under one velocity.
pub struct Stepper<'a> {
    pub model: &'a Model,
    pub cfg: SchemeConfig,
    pub velocity: VelocityPair,
    /// Whether `run` keeps the sampled states.
    pub keep_states: bool,
    nu: usize,
    nw: usize,
    ak: CsrMatrix,
    al: CsrMatrix,
    /// `P_Uᵀ M P_W`.
    b: CsrMatrix,
    mass_u: Vec<f64>,
    mass_w: Vec<f64>,
    jac: Jacobian,
}

fn space_u(m: &Model) -> &ReducedSpace {
    &m.form_k.space
}

fn space_w(m: &Model) -> &ReducedSpace {
    &m.form_l.space
}

impl<'a> Stepper<'a> {
    pub fn new(model: &'a Model, cfg: SchemeConfig, velocity: VelocityPair) -> Result<Self> {
        cfg.validate()?;
        let (su, sw) = (space_u(model), space_w(model));
        let (nu, nw) = (su.dim(), sw.dim());
        let mass_diag = CsrMatrix::diagonal(&model.mass);
        let b = ReducedSpace::project(su, &mass_diag, sw);
        let ak = model.form_k.reduced.clone();
        let al = model.form_l.reduced.clone();

        // fixed pattern: every block, plus the convection coupling for the
        // semi-implicit variant
        let mut t: Vec<(usize, usize, f64)> = Vec::new();
        t.extend(ak.triplets().map(|(i, j, _)| (i, j, 0.0)));
        for i in 0..nu {
            t.push((i, i, 0.0));
        }
        t.extend(b.triplets().map(|(i, j, _)| (i, nu + j, 0.0)));
        t.extend(b.triplets().map(|(i, j, _)| (nu + j, i, 0.0)));
        t.extend(al.triplets().map(|(i, j, _)| (nu + i, nu + j, 0.0)));
        if cfg.convection == ConvectionTreatment::SemiImplicit {
            let n = model.full_len();
            let nb = model.bulk_len();
            let mut s: Vec<(usize, usize, f64)> = model.ops.bulk_stiffness.triplets().map(|(i, j, _)| (i, j, 1.0)).collect();
            s.extend(model.ops.surface_stiffness.triplets().map(|(i, j, _)| (nb + i, nb + j, 1.0)));
            let full = CsrMatrix::from_triplets(n, n, &s);
            let cross = ReducedSpace::project(sw, &full, su);
            t.extend(cross.triplets().map(|(i, j, _)| (nu + i, j, 0.0)));
        }
        let pattern = CsrMatrix::from_triplets(nu + nw, nu + nw, &t);
        let solver = LuSolver::new(&pattern)?;
        let diag = (0..nu).map(|i| pattern.position(i, i).unwrap()).collect();
        let ldlt = match cfg.convection {
            ConvectionTreatment::Explicit => LdltSolver::new(&pattern).ok(),
            ConvectionTreatment::SemiImplicit => None,
        };
        let jac = Jacobian { base: HashMap::new(), pattern, solver, ldlt, diag };

        Ok(Self {
            model,
            cfg,
            velocity,
            keep_states: true,
            nu,
            nw,
            ak,
            al,
            mass_u: su.reduced_diagonal(&model.mass),
            mass_w: sw.reduced_diagonal(&model.mass),
            b,
            jac,
        })
    }

    /// Jacobian entries that do not depend on the iterate.
    fn base_values(&mut self, dt: f64) -> Vec<f64> {
        let key = dt.to_bits();
        if let Some(v) = self.jac.base.get(&key) {
            return v.clone();
        }
        let nu = self.nu;
        let mut m = self.jac.pattern.clone();
        m.values_mut().iter_mut().for_each(|v| *v = 0.0);
        let add = |m: &mut CsrMatrix, i: usize, j: usize, v: f64| {
            let p = m.position(i, j).expect("entry in pattern");
            m.values_mut()[p] += v;
        };
        for (i, j, v) in self.ak.triplets() {
            add(&mut m, i, j, v);
        }
        for (i, j, v) in self.b.triplets() {
            add(&mut m, i, nu + j, -v);
            add(&mut m, nu + j, i, -v);
        }
        for (i, j, v) in self.al.triplets() {
            add(&mut m, nu + i, nu + j, -dt * v);
        }
        let values = m.values().to_vec();
        self.jac.base.insert(key, values.clone());
        values
    }

    /// Chemical potential consistent with `u` alone, used as the Newton
    /// starting point and for initial states.
    pub fn initial_chemical_potential(&self, phi: &BulkSurfaceField) -> Result<BulkSurfaceField> {
        let m = self.model;
        let u = phi.to_flat();
        let au = m.form_k.matrix.mul_vec(&u);
        let wp = m.potential_derivative(phi)?;
        let g: Vec<f64> = (0..u.len()).map(|i| au[i] / m.mass[i] + wp[i]).collect();
        Ok(BulkSurfaceField::from_flat(m.bulk_len(), &space_w(m).enforce(&g)))
    }

    /// One step of size `cfg.dt`, halving on failure.
    pub fn step(&mut self, state: &SimState) -> Result<(SimState, StepReport)> {
        let dt = self.cfg.dt;
        self.step_dt(state, dt, self.cfg.max_halvings)
    }

    /// One step of the given size, halving on failure.
    pub fn step_dt(&mut self, state: &SimState, dt: f64, halvings: u32) -> Result<(SimState, StepReport)> {
        match self.solve_step(state, dt) {
            Ok(r) => Ok(r),
            Err(e @ (Error::NonConvergence { .. } | Error::SingularDomain { .. } | Error::LinearSolver(_))) => {
                if halvings == 0 {
                    return Err(e);
                }
                let (mid, r1) = self.step_dt(state, 0.5 * dt, halvings - 1)?;
                let (mut end, r2) = self.step_dt(&mid, 0.5 * dt, halvings - 1)?;
                end.step = state.step + 1;
                end.t = state.t + dt;
                Ok((
                    end,
                    StepReport {
                        newton_iterations: r1.newton_iterations + r2.newton_iterations,
                        residual: r1.residual.max(r2.residual),
                        upwinded: r1.upwinded.max(r2.upwinded),
                        interior_breach: r1.interior_breach || r2.interior_breach,
                        substeps: r1.substeps + r2.substeps,
                    },
                ))
            }
            Err(e) => Err(e),
        }
    }

    fn solve_step(&mut self, state: &SimState, dt: f64) -> Result<(SimState, StepReport)> {
        let m = self.model;
        let (su, sw) = (space_u(m), space_w(m));
        let (nu, nw) = (self.nu, self.nw);
        let nb = m.bulk_len();
        let un = state.phi.to_flat();
        let t_new = state.t + dt;
        let semi = self.cfg.convection == ConvectionTreatment::SemiImplicit;

        let w2n: Vec<f64> = state
            .phi
            .bulk
            .iter()
            .map(|&s| m.bulk_potential.smooth_derivative(s))
            .chain(state.phi.surface.iter().map(|&s| m.surface_potential.smooth_derivative(s)))
            .collect();
        let sample = self.velocity.sample(if semi { t_new } else { state.t });
        let (conv, upwinded) = if sample.is_zero() {
            (None, 0)
        } else {
            let (c, n) = convection_matrix(&m.ops, &sample, self.cfg.upwind, 1.0);
            (Some(c), n)
        };

        // constant part of the transport rows
        let mut rhs_w: Vec<f64> = un.iter().zip(&m.mass).map(|(u, mm)| u * mm).collect();
        let mut conv_red: Option<CsrMatrix> = None;
        if let Some(c) = &conv {
            if semi {
                conv_red = Some(ReducedSpace::project(sw, c, su));
            } else {
                let cu = c.mul_vec(&un);
                for (r, v) in rhs_w.iter_mut().zip(cu) {
                    *r += dt * v;
                }
            }
        }
        let rhs_w = sw.restrict(&rhs_w);

        let mut zu = su.inject(&un);
        let mut zw = sw.inject(&self.initial_chemical_potential(&state.phi)?.to_flat());
        let base = self.base_values(dt);
        let interior = m.bulk_potential.requires_interior() || m.surface_potential.requires_interior();

        let mut residual = f64::INFINITY;
        for it in 0..=self.cfg.newton_max_iter {
            let u = su.prolong(&zu);
            let uf = BulkSurfaceField::from_flat(nb, &u);
            let mut d1 = Vec::with_capacity(u.len());
            let mut d2 = Vec::with_capacity(u.len());
            for (i, &s) in u.iter().enumerate() {
                let p = if i < nb { &m.bulk_potential } else { &m.surface_potential };
                d1.push(p.convex_derivative(s).map_err(|e| node_error(e, i))?);
                d2.push(p.convex_second(s).map_err(|e| node_error(e, i))?);
            }
            // F1 = A_K zu + P_Uᵀ M (W₁′(u) + W₂′(uⁿ)) - B zw
            let mut f1 = self.ak.mul_vec(&zu);
            let pot: Vec<f64> = (0..u.len()).map(|i| m.mass[i] * (d1[i] + w2n[i])).collect();
            let bz = self.b.mul_vec(&zw);
            for ((f, p), bzi) in f1.iter_mut().zip(su.restrict(&pot)).zip(bz) {
                *f += p - bzi;
            }
            // F2 = -Bᵀ zu - dt A_L zw + rhs (+ dt C zu)
            let btz = su_transpose_mul(&self.b, &zu, nw);
            let alz = self.al.mul_vec(&zw);
            let mut f2: Vec<f64> = (0..nw).map(|i| -btz[i] - dt * alz[i] + rhs_w[i]).collect();
            if let Some(cr) = &conv_red {
                for (f, v) in f2.iter_mut().zip(cr.mul_vec(&zu)) {
                    *f += dt * v;
                }
            }
            // F2 carries a factor dt; measuring it per unit time keeps slow
            // dynamics from stalling on an already-small residual.
            residual = f1
                .iter()
                .zip(&self.mass_u)
                .map(|(f, mm)| (f / mm).abs())
                .chain(f2.iter().zip(&self.mass_w).map(|(f, mm)| (f / (mm * dt)).abs()))
                .fold(0.0, f64::max);
            if !residual.is_finite() {
                return Err(Error::NonConvergence { iterations: it, residual });
            }
            if residual <= self.cfg.newton_tol {
                let phi = uf;
                let mu = BulkSurfaceField::from_flat(nb, &sw.prolong(&zw));
                let interior_breach = phi.max_abs() >= 1.0;
                let next = SimState { t: t_new, phi, mu, step: state.step + 1 };
                return Ok((
                    next,
                    StepReport { newton_iterations: it, residual, upwinded, interior_breach, substeps: 1 },
                ));
            }
            if it == self.cfg.newton_max_iter {
                break;
            }

            let mut jm = self.jac.pattern.clone();
            jm.values_mut().copy_from_slice(&base);
            let hess = su.reduced_diagonal(&(0..u.len()).map(|i| m.mass[i] * d2[i]).collect::<Vec<_>>());
            for (r, h) in hess.iter().enumerate() {
                jm.values_mut()[self.jac.diag[r]] += h;
            }
            if let Some(cr) = &conv_red {
                for (i, j, v) in cr.triplets() {
                    let p = jm.position(nu + i, j).expect("convection entry in pattern");
                    jm.values_mut()[p] += dt * v;
                }
            }
            let rhs: Vec<f64> = f1.iter().chain(&f2).map(|v| -v).collect();
            let delta = self.linear_solve(&jm, &rhs)?;
            let (du, dw) = delta.split_at(nu);
            let mut alpha = 1.0f64;
            if interior {
                let dfull = su.prolong(du);
                for (x, d) in u.iter().zip(&dfull) {
                    if *d != 0.0 {
                        let room = if *d > 0.0 { 1.0 - x } else { 1.0 + x };
                        alpha = alpha.min(0.99 * room / d.abs());
                    }
                }
            }
            for (z, d) in zu.iter_mut().zip(du) {
                *z += alpha * d;
            }
            for (z, d) in zw.iter_mut().zip(dw) {
                *z += alpha * d;
            }
        }
        Err(Error::NonConvergence { iterations: self.cfg.newton_max_iter, residual })
    }
}

impl Stepper<'_> {
    /// `LDLᵀ` when available, checked by its residual; LU otherwise.
    fn linear_solve(&self, jm: &CsrMatrix, rhs: &[f64]) -> Result<Vec<f64>> {
        if let Some(ldlt) = &self.jac.ldlt {
            if let Ok(f) = ldlt.factor(jm) {
                let x = f.solve(rhs);
                let r: Vec<f64> = jm.mul_vec(&x).iter().zip(rhs).map(|(a, b)| a - b).collect();
                if x.iter().all(|v| v.is_finite()) && norm_inf(&r) <= 1e-9 * norm_inf(rhs).max(1e-300) {
                    return Ok(x);
                }
            }
        }
        Ok(self.jac.solver.factor(jm)?.solve(rhs))
    }
}

/// `Bᵀ z` for `B` of size `nu × nw`.
fn su_transpose_mul(b: &CsrMatrix, z: &[f64], nw: usize) -> Vec<f64> {
    let mut out = vec![0.0; nw];
    for (i, j, v) in b.triplets() {
        out[j] += v * z[i];
    }
    out
}

fn node_error(e: Error, node: usize) -> Error {
    match e {
        Error::SingularDomain { value, .. } => Error::SingularDomain { value, node: Some(node) },
        other => other,
    }
}

/// Per-step bookkeeping for the energy inequality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepRecord {
    pub t: f64,
    pub energy: f64,
    /// `‖(μ,θ)‖²_{L,β}` at the new time.
    pub dissipation: f64,
    /// `∫φ v·∇μ + ∫ψ w·∇_Γθ` with all factors at the new time.
    pub work: f64,
    /// `‖(v,w)‖²_{L²}` at the new time.
    pub velocity_norm_sq: f64,
    pub newton_iterations: usize,
    pub upwinded: usize,
    /// `1 - max |nodal value|`.
    pub margin: f64,
}

/// Diagnostics at a recorded time.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Sample {
    pub t: f64,
    pub step: u64,
    pub energy: EnergyBreakdown,
    pub mass: MassValue,
    /// `‖(μ,θ)‖_{L,β}`.
    pub chemical_norm: f64,
    /// `‖(∂ₜφ, ∂ₜψ)‖_{L,β,∗}` of the last increment.
    pub rate_dual_norm: f64,
    pub velocity_norm: f64,
    pub margin: f64,
    pub h1_norm: f64,
}

/// A trajectory with per-step bookkeeping and sampled states.
#[derive(Debug, Clone, Serialize)]
pub struct TrajectoryRecord {
    pub tau: f64,
    pub dt: f64,
    pub initial_energy: f64,
    pub steps: Vec<StepRecord>,
    pub samples: Vec<Sample>,
    #[serde(skip)]
    pub states: Vec<SimState>,
    #[serde(skip)]
    pub final_state: SimState,
    pub upwind_active: bool,
    pub interior_breaches: usize,
    pub cfl_warning: Option<String>,
}

impl<'a> Stepper<'a> {
    pub fn initial_state(&self, phi: &BulkSurfaceField, tau: f64) -> Result<SimState> {
        Ok(SimState { t: tau, mu: self.initial_chemical_potential(phi)?, phi: phi.clone(), step: 0 })
    }

    fn work(&self, state: &SimState) -> (f64, f64) {
        let sample = self.velocity.sample(state.t);
        let vnorm = sample_norm(&sample, &self.model.ops);
        if sample.is_zero() {
            return (0.0, 0.0);
        }
        let (c, _) = convection_matrix(&self.model.ops, &sample, self.cfg.upwind, 1.0);
        let cu = c.mul_vec(&state.phi.to_flat());
        let w = state.mu.to_flat();
        (cu.iter().zip(&w).map(|(a, b)| a * b).sum(), vnorm * vnorm)
    }

    fn sample(&self, state: &SimState, prev: Option<&SimState>) -> Result<Sample> {
        let m = self.model;
        let rate_dual_norm = match prev {
            Some(p) => {
                let dt = state.t - p.t;
                let rate = state.phi.sub(&p.phi).scaled(1.0 / dt);
                m.elliptic.dual_norm(&rate)?
            }
            None => 0.0,
        };
        Ok(Sample {
            t: state.t,
            step: state.step,
            energy: m.energy(&state.phi)?,
            mass: m.mass_of(&state.phi)?,
            chemical_norm: m.chemical_norm(&state.mu),
            rate_dual_norm,
            velocity_norm: self.velocity.norm_at(&m.ops, state.t),
            margin: 1.0 - state.phi.max_abs(),
            h1_norm: m.h1_norm_sq(&state.phi).sqrt(),
        })
    }

    /// Runs from `initial` at time `tau` to `t_end`, sampling every
    /// `record_every` steps and at the end. The last step is shortened if
    /// `t_end - tau` is not a multiple of `dt`.
    pub fn run(&mut self, initial: &BulkSurfaceField, tau: f64, t_end: f64, record_every: usize) -> Result<TrajectoryRecord> {
        let state = self.initial_state(initial, tau)?;
        self.run_from(state, t_end, record_every)
    }

    pub fn run_from(&mut self, start: SimState, t_end: f64, record_every: usize) -> Result<TrajectoryRecord> {
        let m = self.model;
        let tau = start.t;
        if t_end < tau {
            return Err(Error::Precondition(format!("t_end {t_end} precedes tau {tau}")));
        }
        m.check_admissible(&start.phi, 1e-9)?;
        let dt = self.cfg.dt;
        let span = t_end - tau;
        let mut n_steps = (span / dt).floor() as u64;
        if span - n_steps as f64 * dt > 1e-9 * dt {
            n_steps += 1;
        }
        let cfl_warning = self.cfl_check(tau, t_end);
        let record_every = record_every.max(1) as u64;
        let initial_energy = m.energy(&start.phi)?.total;
        let mut record = TrajectoryRecord {
            tau,
            dt,
            initial_energy,
            steps: Vec::with_capacity(n_steps as usize),
            samples: vec![self.sample(&start, None)?],
            states: vec![start.clone()],
            final_state: start.clone(),
            upwind_active: false,
            interior_breaches: 0,
            cfl_warning,
        };
        let mut state = start;
        for k in 0..n_steps {
            let target = if k + 1 == n_steps { t_end } else { tau + (k + 1) as f64 * dt };
            let h = target - state.t;
            let (mut next, report) = self.step_dt(&state, h, self.cfg.max_halvings)?;
            next.t = target;
            next.step = state.step + 1;
            let energy = m.energy(&next.phi)?.total;
            let (work, vsq) = self.work(&next);
            record.steps.push(StepRecord {
                t: next.t,
                energy,
                dissipation: m.chemical_norm(&next.mu).powi(2),
                work,
                velocity_norm_sq: vsq,
                newton_iterations: report.newton_iterations,
                upwinded: report.upwinded,
                margin: 1.0 - next.phi.max_abs(),
            });
            record.upwind_active |= report.upwinded > 0;
            record.interior_breaches += report.interior_breach as usize;
            if m.bulk_potential.requires_interior() && next.phi.max_abs() >= 1.0 {
                return Err(Error::SingularDomain { value: next.phi.max_abs(), node: None });
            }
            if (k + 1) % record_every == 0 || k + 1 == n_steps {
                record.samples.push(self.sample(&next, Some(&state))?);
                if self.keep_states {
                    record.states.push(next.clone());
                }
            }
            state = next;
        }
        record.final_state = state;
        Ok(record)
    }

    fn cfl_check(&self, tau: f64, t_end: f64) -> Option<String> {
        let vmax = self.velocity.bulk.iter().map(|v| v[0].hypot(v[1])).chain(self.velocity.surface.iter().map(|w| w.abs())).fold(0.0, f64::max);
        let gmax = (0..=100)
            .map(|i| self.velocity.envelope_at(tau + (t_end - tau) * i as f64 / 100.0).abs())
            .fold(0.0, f64::max);
        let speed = vmax * gmax;
        let h = self.model.ops.h_max;
        (speed > 0.0 && self.cfg.dt > h / speed)
            .then(|| format!("explicit convection with dt = {} exceeds h/|v| = {:.3e}", self.cfg.dt, h / speed))
    }
}

impl TrajectoryRecord {
    /// Per-step residuals `E(tⁿ⁺¹) - E(tⁿ) + dt(D - W)`.
    pub fn step_residuals(&self) -> Vec<f64> {
        let mut prev_e = self.initial_energy;
        let mut prev_t = self.tau;
        self.steps
            .iter()
            .map(|s| {
                let h = s.t - prev_t;
                let r = s.energy - prev_e + h * (s.dissipation - s.work);
                prev_e = s.energy;
                prev_t = s.t;
                r
            })
            .collect()
    }

    /// Largest positive residual over all step intervals (maximum subarray).
    pub fn max_violation(&self) -> f64 {
        let mut best = 0.0f64;
        let mut run = 0.0f64;
        for r in self.step_residuals() {
            run = (run + r).max(r);
            best = best.max(run);
        }
        best
    }

    /// Cumulative `Σ dt ‖(μ,θ)‖²_{L,β}` and `Σ dt ‖(v,w)‖²`.
    pub fn cumulative_dissipation(&self) -> (f64, f64) {
        let mut prev_t = self.tau;
        let mut d = 0.0;
        let mut v = 0.0;
        for s in &self.steps {
            let h = s.t - prev_t;
            d += h * s.dissipation;
            v += h * s.velocity_norm_sq;
            prev_t = s.t;
        }
        (d, v)
    }
}

/// `E(t) + Σ dt(‖(μ,θ)‖² - work) - E(s)` between step indices `s ≤ t`
/// (index 0 is the initial time).
pub fn energy_inequality_residual(record: &TrajectoryRecord, s_index: usize, t_index: usize) -> Result<f64> {
    if s_index > t_index || t_index > record.steps.len() {
        return Err(Error::Precondition(format!("bad interval [{s_index}, {t_index}] for {} steps", record.steps.len())));
    }
    Ok(record.step_residuals()[s_index..t_index].iter().sum())
}
