//! Long-run experiments: pullback absorption, convergence to equilibrium
//! and continuous dependence on the velocity.

use rayon::prelude::*;
use serde::Serialize;

use crate::diagnostics::{exponential_plateau_fit, linear_fit};
use crate::error::{Error, Result};
use crate::fem::BulkSurfaceField;
use crate::model::Model;
use crate::stationary::{newton_solve, NewtonConfig, StationarySolution};
use crate::stepper::{SchemeConfig, SimState, Stepper, TrajectoryRecord};
use crate::velocity::{check_d5, DecayReport, VelocityPair};

/// `‖a - b‖²_{H¹}` of both components.
pub fn h1_distance_sq(model: &Model, a: &BulkSurfaceField, b: &BulkSurfaceField) -> f64 {
    model.h1_norm_sq(&a.sub(b))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PullbackRow {
    pub offset: f64,
    pub tau: f64,
    /// `‖(φ,ψ)(t)‖²_{H¹}` per member of the initial set.
    pub h1_sq: Vec<f64>,
    pub max_h1_sq: f64,
    /// Largest pairwise `H¹` distance at the fixed time.
    pub spread: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PullbackFit {
    pub amplitude: f64,
    pub rate: f64,
    pub plateau: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PullbackReport {
    pub t_fixed: f64,
    pub rows: Vec<PullbackRow>,
    /// `max_h1_sq(s) ≈ A e^{-r s} + B` over the offsets `s = t - τ`.
    pub fit: Option<PullbackFit>,
    /// The distance to the fitted plateau never grows with the offset.
    pub monotone: bool,
}

/// Runs every member of `initial` from `t_fixed - s` to `t_fixed` for each
/// offset `s`, all under the same velocity description.
pub fn pullback_experiment(
    model: &Model,
    cfg: SchemeConfig,
    velocity: &VelocityPair,
    initial: &[BulkSurfaceField],
    t_fixed: f64,
    offsets: &[f64],
) -> Result<PullbackReport> {
    if initial.is_empty() || offsets.is_empty() {
        return Err(Error::Precondition("pullback needs initial data and offsets".into()));
    }
    if offsets.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::Precondition("offsets must be positive".into()));
    }
    for f in initial {
        model.check_admissible(f, 1e-9)?;
    }
    let jobs: Vec<(usize, usize)> = (0..offsets.len()).flat_map(|i| (0..initial.len()).map(move |j| (i, j))).collect();
    let finals: Vec<BulkSurfaceField> = jobs
        .par_iter()
        .map(|&(i, j)| {
            let mut st = Stepper::new(model, cfg, velocity.clone())?;
            st.keep_states = false;
            let rec = st.run(&initial[j], t_fixed - offsets[i], t_fixed, usize::MAX)?;
            Ok(rec.final_state.phi)
        })
        .collect::<Result<_>>()?;
    let n = initial.len();
    let rows: Vec<PullbackRow> = offsets
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            let members = &finals[i * n..(i + 1) * n];
            let h1_sq: Vec<f64> = members.iter().map(|f| model.h1_norm_sq(f)).collect();
            let mut spread = 0.0f64;
            for a in 0..n {
                for b in a + 1..n {
                    spread = spread.max(h1_distance_sq(model, &members[a], &members[b]).sqrt());
                }
            }
            PullbackRow { offset: s, tau: t_fixed - s, max_h1_sq: h1_sq.iter().copied().fold(0.0, f64::max), h1_sq, spread }
        })
        .collect();
    let s: Vec<f64> = rows.iter().map(|r| r.offset).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.max_h1_sq).collect();
    let fit = (rows.len() >= 3)
        .then(|| exponential_plateau_fit(&s, &y, (1..=10_000).map(|k| k as f64 * 1e-3)))
        .flatten()
        .map(|(amplitude, rate, plateau, _)| PullbackFit { amplitude, rate, plateau });
    let monotone = match &fit {
        Some(f) => {
            let mut order: Vec<usize> = (0..rows.len()).collect();
            order.sort_by(|a, b| s[*a].total_cmp(&s[*b]));
            let excess: Vec<f64> = order.iter().map(|&i| (y[i] - f.plateau).abs()).collect();
            let scale = y.iter().copied().fold(0.0, f64::max);
            excess.windows(2).all(|w| w[1] <= w[0] + 1e-9 * scale)
        }
        None => false,
    };
    Ok(PullbackReport { t_fixed, rows, fit, monotone })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EquilibriumSpec {
    pub tau: f64,
    pub t_end: f64,
    pub record_every: usize,
    /// Exponent `a` of the integrability condition on the velocity.
    pub decay_rate: f64,
    /// The exponent fit uses samples after `tau + fit_start (t_end - tau)`.
    pub fit_start: f64,
    pub newton: NewtonConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExponentFit {
    /// Slope of `log|E - E*|` against `log‖(μ,θ)‖_{L,β}`.
    pub slope: f64,
    /// `1 - 1/slope`.
    pub varpi: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct EquilibriumReport {
    pub d5: DecayReport,
    /// Mean energy over the final 5% of samples.
    pub energy_limit: f64,
    /// Largest `|E - E*|` over that window.
    pub cauchy_window: f64,
    /// First sample time after which the energy never increases.
    pub energy_monotone_after: Option<f64>,
    /// Largest `‖(φ,ψ)(t) - (φ,ψ)(t_end)‖_{H¹}` over the final 10%.
    pub h1_increment_tail: f64,
    pub stationary: StationarySolution,
    pub terminal_margin: f64,
    /// `|margin - δ⋆| / δ⋆`.
    pub margin_gap: f64,
    pub fit: Option<ExponentFit>,
    #[serde(skip)]
    pub record: TrajectoryRecord,
}

fn concat(mut a: TrajectoryRecord, b: TrajectoryRecord) -> TrajectoryRecord {
    a.steps.extend(b.steps);
    a.samples.extend(b.samples.into_iter().skip(1));
    a.states.extend(b.states.into_iter().skip(1));
    a.final_state = b.final_state;
    a.upwind_active |= b.upwind_active;
    a.interior_breaches += b.interior_breaches;
    a.cfl_warning = a.cfl_warning.or(b.cfl_warning);
    a
}

/// Long run under a decaying velocity, followed by Newton refinement of
/// the terminal state and a fit of the energy–gradient exponent.
pub fn equilibrium_experiment(
    model: &Model,
    cfg: SchemeConfig,
    velocity: &VelocityPair,
    initial: &BulkSurfaceField,
    spec: EquilibriumSpec,
) -> Result<EquilibriumReport> {
    let horizon = spec.t_end - spec.tau;
    if !(horizon > 0.0) {
        return Err(Error::Precondition("t_end must exceed tau".into()));
    }
    let onset = velocity.envelope.decay_onset() - velocity.offset;
    let d5 = check_d5(velocity, &model.ops, spec.decay_rate, spec.t_end.max(onset + 1.0))?;
    if !d5.satisfied {
        return Err(Error::Precondition(format!("velocity does not satisfy D5 with a = {}", spec.decay_rate)));
    }
    let mut st = Stepper::new(model, cfg, velocity.clone())?;
    // align the split with the step grid
    let steps_total = (horizon / cfg.dt).round();
    let split = spec.tau + (0.9 * steps_total).floor() * cfg.dt;
    st.keep_states = false;
    let head = st.run(initial, spec.tau, split, spec.record_every)?;
    st.keep_states = true;
    let tail = st.run_from(head.final_state.clone(), spec.t_end, spec.record_every)?;
    let tail_states = tail.states.clone();
    let record = concat(head, tail);

    let final_phi = &record.final_state.phi;
    let h1_increment_tail = tail_states
        .iter()
        .map(|s| h1_distance_sq(model, &s.phi, final_phi).sqrt())
        .fold(0.0, f64::max);

    let samples = &record.samples;
    let window = ((samples.len() as f64) * 0.05).ceil().max(1.0) as usize;
    let last = &samples[samples.len() - window..];
    let energy_limit = last.iter().map(|s| s.energy.total).sum::<f64>() / window as f64;
    let cauchy_window = last.iter().map(|s| (s.energy.total - energy_limit).abs()).fold(0.0, f64::max);
    let mut energy_monotone_after = Some(samples[samples.len() - 1].t);
    for w in samples.windows(2).rev() {
        if w[1].energy.total > w[0].energy.total + 1e-12 * (1.0 + w[0].energy.total.abs()) {
            break;
        }
        energy_monotone_after = Some(w[0].t);
    }

    let stationary = newton_solve(model, final_phi, spec.newton)?;
    let terminal_margin = 1.0 - final_phi.max_abs();
    let margin_gap = (terminal_margin - stationary.separation).abs() / stationary.separation;

    let t_fit = spec.tau + spec.fit_start * horizon;
    let floor = 10.0 * spec.newton.tol;
    let (mut x, mut y) = (Vec::new(), Vec::new());
    for s in &samples[..samples.len() - window] {
        let gap = (s.energy.total - energy_limit).abs();
        if s.t >= t_fit && s.chemical_norm > floor && gap > 1e-12 * (1.0 + energy_limit.abs()) {
            x.push(s.chemical_norm.ln());
            y.push(gap.ln());
        }
    }
    let fit = linear_fit(&x, &y).map(|(_, slope)| ExponentFit { slope, varpi: 1.0 - 1.0 / slope, samples: x.len() });

    Ok(EquilibriumReport {
        d5,
        energy_limit,
        cauchy_window,
        energy_monotone_after,
        h1_increment_tail,
        stationary,
        terminal_margin,
        margin_gap,
        fit,
        record,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DependenceRow {
    pub epsilon: f64,
    /// `Σ dt ‖δv(tⁿ)‖²` over the run.
    pub perturbation_sq: f64,
    /// `‖(φ,ψ) - (φ̃,ψ̃)‖²_{L,β,∗}` at the end.
    pub difference_sq: f64,
    pub constant: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DependenceReport {
    pub rows: Vec<DependenceRow>,
    /// Ratios of consecutive fitted constants.
    pub ratios: Vec<f64>,
}

/// `base + ε δ` for two velocity pairs sharing the same envelope.
pub fn perturbed_velocity(base: &VelocityPair, delta: &VelocityPair, eps: f64) -> Result<VelocityPair> {
    if base.envelope != delta.envelope || base.offset != delta.offset {
        return Err(Error::Precondition("perturbation must share the envelope of the base velocity".into()));
    }
    let add = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x + eps * y).collect::<Vec<f64>>();
    Ok(VelocityPair {
        stream: add(&base.stream, &delta.stream),
        bulk: base.bulk.iter().zip(&delta.bulk).map(|(a, b)| [a[0] + eps * b[0], a[1] + eps * b[1]]).collect(),
        surface: add(&base.surface, &delta.surface),
        envelope: base.envelope,
        offset: base.offset,
    })
}

/// Same initial data, velocities `v` and `v + ε δv` for each `ε`.
pub fn velocity_dependence(
    model: &Model,
    cfg: SchemeConfig,
    base: &VelocityPair,
    delta: &VelocityPair,
    epsilons: &[f64],
    initial: &BulkSurfaceField,
    tau: f64,
    t_end: f64,
) -> Result<DependenceReport> {
    let run = |v: VelocityPair| -> Result<SimState> {
        let mut st = Stepper::new(model, cfg, v)?;
        st.keep_states = false;
        Ok(st.run(initial, tau, t_end, usize::MAX)?.final_state)
    };
    let reference = run(base.clone())?;
    let rows: Vec<DependenceRow> = epsilons
        .par_iter()
        .map(|&eps| {
            let v = perturbed_velocity(base, delta, eps)?;
            let mut st = Stepper::new(model, cfg, v)?;
            st.keep_states = false;
            let rec = st.run(initial, tau, t_end, usize::MAX)?;
            let mut prev = tau;
            let mut perturbation_sq = 0.0;
            let dnorm = delta.profile_norm(&model.ops);
            for s in &rec.steps {
                perturbation_sq += (s.t - prev) * (eps * delta.envelope_at(s.t) * dnorm).powi(2);
                prev = s.t;
            }
            let diff = rec.final_state.phi.sub(&reference.phi);
            let difference_sq = model.elliptic.dual_norm(&diff)?.powi(2);
            Ok(DependenceRow { epsilon: eps, perturbation_sq, difference_sq, constant: difference_sq / perturbation_sq })
        })
        .collect::<Result<_>>()?;
    let ratios = rows.windows(2).map(|w| w[1].constant / w[0].constant).collect();
    Ok(DependenceReport { rows, ratios })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InitialDependence {
    pub epsilon: f64,
    pub times: Vec<f64>,
    /// `‖difference(t)‖_{L,β,∗}` at the sample times.
    pub distances: Vec<f64>,
    /// Slope of `log(distance/ε)` against time.
    pub growth_rate: f64,
}

/// Two runs whose initial data differ by a mass-free perturbation of size
/// `ε` in the dual norm.
pub fn initial_data_dependence(
    model: &Model,
    cfg: SchemeConfig,
    velocity: &VelocityPair,
    initial: &BulkSurfaceField,
    direction: &BulkSurfaceField,
    epsilon: f64,
    tau: f64,
    t_end: f64,
    record_every: usize,
) -> Result<InitialDependence> {
    let nb = model.bulk_len();
    let d = model.form_k.space.enforce(&direction.to_flat());
    let shifted: Vec<f64> = initial.to_flat().iter().zip(&d).map(|(a, b)| a + b).collect();
    let d = model.project_mass(&BulkSurfaceField::from_flat(nb, &shifted))?.sub(initial);
    let size = model.elliptic.dual_norm(&d)?;
    if size == 0.0 {
        return Err(Error::Precondition("perturbation direction vanishes".into()));
    }
    let other = initial.axpy(epsilon / size, &d);
    let mut a = Stepper::new(model, cfg, velocity.clone())?;
    let mut b = Stepper::new(model, cfg, velocity.clone())?;
    let ra = a.run(initial, tau, t_end, record_every)?;
    let rb = b.run(&other, tau, t_end, record_every)?;
    let times: Vec<f64> = ra.states.iter().map(|s| s.t).collect();
    let distances: Vec<f64> = ra
        .states
        .iter()
        .zip(&rb.states)
        .map(|(x, y)| model.elliptic.dual_norm(&y.phi.sub(&x.phi)))
        .collect::<Result<_>>()?;
    let logs: Vec<f64> = distances.iter().map(|v| (v / epsilon).max(1e-300).ln()).collect();
    let growth_rate = linear_fit(&times, &logs).map(|(_, b)| b).unwrap_or(0.0);
    Ok(InitialDependence { epsilon, times, distances, growth_rate })
}
