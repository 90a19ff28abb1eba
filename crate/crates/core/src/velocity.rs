//! Prescribed divergence-free bulk velocity and tangential surface
//! velocity with a scalar time envelope.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::FemOperators;
use crate::mesh::BulkSurfaceMesh;
use crate::sparse::CsrMatrix;

/// Stream function `s` with `s = 0` on the boundary circle; the bulk
/// velocity is `∇^⊥ s = (∂_y s, -∂_x s)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum StreamProfile {
    None,
    /// `s = A(R² - r²)/2`, a rigid rotation with angular speed `A`.
    Rotation { amplitude: f64 },
    /// `s = A(R² - r²)xy`, four counter-rotating cells.
    Cellular { amplitude: f64 },
}

/// Scalar time factor `g(t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Envelope {
    Zero,
    Constant,
    /// `min(1, e^{-rate(t - onset)})`: constant before `onset`, then decaying.
    WindowExponential { rate: f64, onset: f64 },
    /// `e^{-rate(t - onset)}` for all `t`.
    Exponential { rate: f64, onset: f64 },
    /// Smooth bump supported on `(center - width, center + width)`.
    Bump { center: f64, width: f64 },
}

impl Envelope {
    pub fn value(&self, t: f64) -> f64 {
        match *self {
            Envelope::Zero => 0.0,
            Envelope::Constant => 1.0,
            Envelope::WindowExponential { rate, onset } => (-rate * (t - onset)).exp().min(1.0),
            Envelope::Exponential { rate, onset } => (-rate * (t - onset)).exp(),
            Envelope::Bump { center, width } => {
                let x = (t - center) / width;
                if x.abs() < 1.0 {
                    (1.0 - 1.0 / (1.0 - x * x)).exp()
                } else {
                    0.0
                }
            }
        }
    }

    /// Start of the non-increasing phase.
    pub fn decay_onset(&self) -> f64 {
        match *self {
            Envelope::WindowExponential { onset, .. } | Envelope::Exponential { onset, .. } => onset,
            Envelope::Bump { center, .. } => center,
            Envelope::Zero | Envelope::Constant => 0.0,
        }
    }

    /// `∫_h^∞ e^{a s} g(s) ds` in closed form, `None` when it diverges.
    fn weighted_tail(&self, a: f64, h: f64) -> Option<f64> {
        match *self {
            Envelope::Zero => Some(0.0),
            Envelope::Constant => None,
            Envelope::WindowExponential { rate, onset } | Envelope::Exponential { rate, onset } => {
                if rate <= a {
                    return None;
                }
                // assumes h ≥ onset, where both envelopes coincide
                Some((a * h - rate * (h - onset)).exp() / (rate - a))
            }
            Envelope::Bump { center, width } => {
                if h >= center + width {
                    Some(0.0)
                } else {
                    Some(adaptive_simpson(&|s| (a * s).exp() * self.value(s), h, center + width, 1e-13))
                }
            }
        }
    }
}

/// Velocity description: static spatial profiles times the envelope.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityPair {
    /// Nodal stream function, exactly zero on boundary nodes.
    pub stream: Vec<f64>,
    /// `∇^⊥ s` per triangle.
    pub bulk: Vec<[f64; 2]>,
    /// Tangential component per surface edge.
    pub surface: Vec<f64>,
    pub envelope: Envelope,
    /// Added to `t` before sampling (time-translated copies).
    pub offset: f64,
}

/// Velocity at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocitySample {
    pub bulk: Vec<[f64; 2]>,
    pub surface: Vec<f64>,
}

impl VelocitySample {
    pub fn is_zero(&self) -> bool {
        self.bulk.iter().all(|v| v[0] == 0.0 && v[1] == 0.0) && self.surface.iter().all(|&w| w == 0.0)
    }
}

/// How the surface velocity is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SurfaceProfile {
    /// Constant tangential speed along the polyline.
    Rotation { amplitude: f64 },
    /// Tangential component of the bulk velocity on the boundary elements,
    /// required when `K = 0`.
    BulkTrace,
}

impl VelocityPair {
    pub fn zero(ops: &FemOperators) -> Self {
        Self {
            stream: vec![0.0; ops.bulk_len()],
            bulk: vec![[0.0; 2]; ops.triangles.len()],
            surface: vec![0.0; ops.surface_len()],
            envelope: Envelope::Zero,
            offset: 0.0,
        }
    }

    /// Builds the pair from a stream profile on the given mesh.
    pub fn new(
        mesh: &BulkSurfaceMesh,
        ops: &FemOperators,
        profile: StreamProfile,
        surface: SurfaceProfile,
        envelope: Envelope,
    ) -> Self {
        let r2 = mesh.radius * mesh.radius;
        let stream: Vec<f64> = mesh
            .nodes
            .iter()
            .map(|p| {
                let bubble = r2 - p[0] * p[0] - p[1] * p[1];
                match profile {
                    StreamProfile::None => 0.0,
                    StreamProfile::Rotation { amplitude } => 0.5 * amplitude * bubble,
                    StreamProfile::Cellular { amplitude } => amplitude * bubble * p[0] * p[1],
                }
            })
            .collect();
        Self::from_stream(ops, stream, surface, envelope)
    }

    /// Builds the pair from arbitrary nodal stream values; boundary values
    /// are reset to zero.
    pub fn from_stream(ops: &FemOperators, mut stream: Vec<f64>, surface: SurfaceProfile, envelope: Envelope) -> Self {
        for &b in &ops.trace {
            stream[b] = 0.0;
        }
        let bulk: Vec<[f64; 2]> = ops
            .triangles
            .iter()
            .zip(&ops.element_grad)
            .map(|(t, g)| {
                let mut grad = [0.0; 2];
                for a in 0..3 {
                    grad[0] += stream[t[a]] * g[a][0];
                    grad[1] += stream[t[a]] * g[a][1];
                }
                [grad[1], -grad[0]]
            })
            .collect();
        let surface = match surface {
            SurfaceProfile::Rotation { amplitude } => vec![amplitude; ops.surface_len()],
            SurfaceProfile::BulkTrace => (0..ops.surface_len())
                .map(|e| {
                    let v = bulk[ops.edge_triangle[e]];
                    let tau = ops.edge_tangent[e];
                    v[0] * tau[0] + v[1] * tau[1]
                })
                .collect(),
        };
        Self { stream, bulk, surface, envelope, offset: 0.0 }
    }

    /// The same description sampled at `t + offset`.
    pub fn shifted(&self, offset: f64) -> Self {
        Self { offset: self.offset + offset, ..self.clone() }
    }

    pub fn envelope_at(&self, t: f64) -> f64 {
        self.envelope.value(t + self.offset)
    }

    pub fn sample(&self, t: f64) -> VelocitySample {
        let g = self.envelope_at(t);
        VelocitySample {
            bulk: self.bulk.iter().map(|v| [g * v[0], g * v[1]]).collect(),
            surface: self.surface.iter().map(|w| g * w).collect(),
        }
    }

    /// `‖(v, w)‖_{L²}` of the static profiles.
    pub fn profile_norm(&self, ops: &FemOperators) -> f64 {
        sample_norm(&VelocitySample { bulk: self.bulk.clone(), surface: self.surface.clone() }, ops)
    }

    pub fn norm_at(&self, ops: &FemOperators, t: f64) -> f64 {
        self.envelope_at(t).abs() * self.profile_norm(ops)
    }

    /// Largest `|∫ v·∇q|` over the nodal basis functions `q`.
    pub fn divergence_defect(&self, ops: &FemOperators) -> f64 {
        let mut d = vec![0.0; ops.bulk_len()];
        for ((t, g), (v, area)) in ops.triangles.iter().zip(&ops.element_grad).zip(self.bulk.iter().zip(&ops.element_area)) {
            for a in 0..3 {
                d[t[a]] += area * (v[0] * g[a][0] + v[1] * g[a][1]);
            }
        }
        d.into_iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// Largest normal flux `|v·n| h` through a boundary edge.
    pub fn boundary_flux(&self, ops: &FemOperators) -> f64 {
        (0..ops.surface_len())
            .map(|e| {
                let v = self.bulk[ops.edge_triangle[e]];
                let tau = ops.edge_tangent[e];
                ((v[0] * tau[1] - v[1] * tau[0]) * ops.edge_length[e]).abs()
            })
            .fold(0.0, f64::max)
    }
}

pub fn sample_velocity(pair: &VelocityPair, t: f64) -> VelocitySample {
    pair.sample(t)
}

pub fn sample_norm(v: &VelocitySample, ops: &FemOperators) -> f64 {
    let bulk: f64 = v.bulk.iter().zip(&ops.element_area).map(|(v, a)| a * (v[0] * v[0] + v[1] * v[1])).sum();
    let surface: f64 = v.surface.iter().zip(&ops.edge_length).map(|(w, h)| h * w * w).sum();
    (bulk + surface).sqrt()
}

/// Matrix `C` of the convection terms on `[bulk, surface]` vectors:
/// `(C u)_i = ∫_Ω φ v·∇ζ_i + ∫_Γ ψ w·∇_Γξ_i`.
///
/// Each element uses the mean of its nodal values, or the most upstream
/// nodal value when upwinding is enabled and the local Péclet number
/// `|v| h / (2 D)` with diffusivity `D` exceeds 2. Returns the number of
/// upwinded elements and edges.
pub fn convection_matrix(ops: &FemOperators, v: &VelocitySample, upwind: bool, diffusivity: f64) -> (CsrMatrix, usize) {
    let nb = ops.bulk_len();
    let n = nb + ops.surface_len();
    let mut t = Vec::with_capacity(9 * ops.triangles.len() + 4 * ops.surface_len());
    let mut upwinded = 0;
    for ((tri, g), (vel, area)) in ops.triangles.iter().zip(&ops.element_grad).zip(v.bulk.iter().zip(&ops.element_area)) {
        let flux = [0, 1, 2].map(|a| area * (vel[0] * g[a][0] + vel[1] * g[a][1]));
        let speed = vel[0].hypot(vel[1]);
        if speed == 0.0 {
            continue;
        }
        // the edge opposite node a has length 2|T||∇λ_a|
        let h = (0..3).map(|a| 2.0 * area * g[a][0].hypot(g[a][1])).fold(0.0, f64::max);
        let weights = if upwind && speed * h / (2.0 * diffusivity) > 2.0 {
            upwinded += 1;
            let up = (0..3).min_by(|&a, &b| flux[a].total_cmp(&flux[b])).unwrap();
            [0, 1, 2].map(|b| if b == up { 1.0 } else { 0.0 })
        } else {
            [1.0 / 3.0; 3]
        };
        for a in 0..3 {
            for b in 0..3 {
                if weights[b] != 0.0 {
                    t.push((tri[a], tri[b], flux[a] * weights[b]));
                }
            }
        }
    }
    let ns = ops.surface_len();
    for (e, &w) in v.surface.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let (a, b) = (nb + e, nb + (e + 1) % ns);
        let weights = if upwind && w.abs() * ops.edge_length[e] / (2.0 * diffusivity) > 2.0 {
            upwinded += 1;
            if w > 0.0 { [1.0, 0.0] } else { [0.0, 1.0] }
        } else {
            [0.5, 0.5]
        };
        // ∂_τ ξ_a = -1/h, ∂_τ ξ_b = 1/h, times the edge length h
        for (row, sign) in [(a, -1.0), (b, 1.0)] {
            t.push((row, a, sign * w * weights[0]));
            t.push((row, b, sign * w * weights[1]));
        }
    }
    (CsrMatrix::from_triplets(n, n, &t), upwinded)
}

/// Outcome of the decay check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecayReport {
    /// `∫_{T_dec}^{horizon} e^{as} ‖(v,w)(s)‖ ds` by adaptive quadrature.
    pub integral: f64,
    /// Closed-form tail beyond the horizon; `None` when divergent.
    pub tail: Option<f64>,
    pub monotone: bool,
    pub satisfied: bool,
}

/// Checks that `e^{at}‖(v,w)(t)‖` is integrable on `[T_dec, ∞)` and that
/// the envelope does not increase there.
pub fn check_d5(pair: &VelocityPair, ops: &FemOperators, a: f64, horizon: f64) -> Result<DecayReport> {
    let onset = pair.envelope.decay_onset() - pair.offset;
    if !(horizon > onset) {
        return Err(Error::Precondition(format!("horizon {horizon} must exceed the decay onset {onset}")));
    }
    let norm = pair.profile_norm(ops);
    if norm == 0.0 || pair.envelope == Envelope::Zero {
        return Ok(DecayReport { integral: 0.0, tail: Some(0.0), monotone: true, satisfied: true });
    }
    let integrand = |s: f64| (a * s).exp() * pair.envelope_at(s).abs() * norm;
    let integral = adaptive_simpson(&integrand, onset, horizon, 1e-12 * (1.0 + integrand(onset)));
    let tail = pair.envelope.weighted_tail(a, horizon + pair.offset).map(|v| v * norm * (-a * pair.offset).exp());
    let n = 10_000;
    let mut monotone = true;
    let mut prev = pair.envelope_at(onset).abs();
    for i in 1..=n {
        let g = pair.envelope_at(onset + (horizon - onset) * i as f64 / n as f64).abs();
        if g > prev * (1.0 + 1e-14) {
            monotone = false;
        }
        prev = g;
    }
    let satisfied = monotone && tail.is_some() && integral.is_finite();
    Ok(DecayReport { integral, tail, monotone, satisfied })
}

/// Adaptive Simpson quadrature.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(f: &dyn Fn(f64) -> f64, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        (m, fm, (b - a) / 6.0 * (fa + 4.0 * fm + fb))
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        whole: f64,
        m: f64,
        fm: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let (lm, flm, left) = simpson(f, a, fa, m, fm);
        let (rm, frm, right) = simpson(f, m, fm, b, fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        recurse(f, a, fa, m, fm, left, lm, flm, tol / 2.0, depth - 1)
            + recurse(f, m, fm, b, fb, right, rm, frm, tol / 2.0, depth - 1)
    }
    let (fa, fb) = (f(a), f(b));
    let (m, fm, whole) = simpson(f, a, fa, b, fb);
    recurse(f, a, fa, b, fb, whole, m, fm, tol, 50)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::assemble;
    use crate::mesh::build_disk_mesh;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup() -> (BulkSurfaceMesh, FemOperators) {
        let mesh = build_disk_mesh(1.0, 3).unwrap();
        let ops = assemble(&mesh).unwrap();
        (mesh, ops)
    }

    #[test]
    fn zero_envelope_gives_zero_fields() {
        let (mesh, ops) = setup();
        let p = VelocityPair::new(
            &mesh,
            &ops,
            StreamProfile::Rotation { amplitude: 1.0 },
            SurfaceProfile::Rotation { amplitude: 1.0 },
            Envelope::Zero,
        );
        for t in [-3.0, 0.0, 7.5] {
            assert!(p.sample(t).is_zero());
        }
    }

    #[test]
    fn exponential_factorization() {
        let (mesh, ops) = setup();
        let a = 0.7;
        let p = VelocityPair::new(
            &mesh,
            &ops,
            StreamProfile::Cellular { amplitude: 2.0 },
            SurfaceProfile::Rotation { amplitude: 0.5 },
            Envelope::WindowExponential { rate: a, onset: 1.0 },
        );
        let (t1, t2) = (1.5, 3.25);
        let n1 = sample_norm(&p.sample(t1), &ops);
        let n2 = sample_norm(&p.sample(t2), &ops);
        assert!((n2 - (-a * (t2 - t1)).exp() * n1).abs() < 1e-12 * n1);
    }

    #[test]
    fn stream_construction_is_discretely_divergence_free() {
        let (_, ops) = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10 {
            let s: Vec<f64> = (0..ops.bulk_len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let p = VelocityPair::from_stream(&ops, s, SurfaceProfile::BulkTrace, Envelope::Constant);
            assert!(p.divergence_defect(&ops) <= 1e-12);
            assert!(p.boundary_flux(&ops) <= 1e-12);
        }
    }

    #[test]
    fn d5_integral_matches_closed_form() {
        let (mesh, ops) = setup();
        let a = 0.8;
        let t_dec = 1.0;
        let p = VelocityPair::new(
            &mesh,
            &ops,
            StreamProfile::Rotation { amplitude: 1.0 },
            SurfaceProfile::Rotation { amplitude: 1.0 },
            Envelope::WindowExponential { rate: 2.0 * a, onset: t_dec },
        );
        let rep = check_d5(&p, &ops, a, 30.0).unwrap();
        assert!(rep.satisfied);
        let closed = p.norm_at(&ops, t_dec) * (a * t_dec).exp() / a;
        let total = rep.integral + rep.tail.unwrap();
        assert!((total - closed).abs() < 1e-8 * closed);
    }

    #[test]
    fn d5_verdicts() {
        let (mesh, ops) = setup();
        let mk = |env| {
            VelocityPair::new(
                &mesh,
                &ops,
                StreamProfile::Rotation { amplitude: 1.0 },
                SurfaceProfile::Rotation { amplitude: 1.0 },
                env,
            )
        };
        let zero = VelocityPair::zero(&ops);
        let rep = check_d5(&zero, &ops, 2.0, 5.0).unwrap();
        assert!(rep.satisfied && rep.integral == 0.0);
        let slow = mk(Envelope::Exponential { rate: 1.0, onset: 0.0 });
        assert!(!check_d5(&slow, &ops, 2.0, 5.0).unwrap().satisfied);
        let fast = mk(Envelope::Exponential { rate: 3.0, onset: 0.0 });
        let rep = check_d5(&fast, &ops, 2.0, 5.0).unwrap();
        assert!(rep.satisfied);
        let closed = fast.profile_norm(&ops) / (3.0 - 2.0);
        assert!((rep.integral + rep.tail.unwrap() - closed).abs() < 1e-8 * closed);
    }

    #[test]
    fn convection_of_constants_vanishes() {
        let (mesh, ops) = setup();
        let p = VelocityPair::new(
            &mesh,
            &ops,
            StreamProfile::Cellular { amplitude: 3.0 },
            SurfaceProfile::Rotation { amplitude: 1.0 },
            Envelope::Constant,
        );
        let nb = ops.bulk_len();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let phi: Vec<f64> = (0..nb + ops.surface_len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        for upwind in [false, true] {
            let (c, _) = convection_matrix(&ops, &p.sample(0.0), upwind, 0.01);
            let cv = c.mul_vec(&phi);
            let scale = cv.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            // testing with (β, 1) for β = 0.7, and with (1, 0), (0, 1)
            let beta_sum: f64 = cv[..nb].iter().map(|v| 0.7 * v).sum::<f64>() + cv[nb..].iter().sum::<f64>();
            assert!(beta_sum.abs() <= 1e-13 * scale * cv.len() as f64);
            assert!(cv[..nb].iter().sum::<f64>().abs() <= 1e-13 * scale * nb as f64);
            assert!(cv[nb..].iter().sum::<f64>().abs() <= 1e-13 * scale);
        }
    }

    #[test]
    fn upwinding_switches_on_high_peclet() {
        let (mesh, ops) = setup();
        let p = VelocityPair::new(
            &mesh,
            &ops,
            StreamProfile::Rotation { amplitude: 100.0 },
            SurfaceProfile::Rotation { amplitude: 100.0 },
            Envelope::Constant,
        );
        let (_, count) = convection_matrix(&ops, &p.sample(0.0), true, 1.0);
        assert!(count > 0);
        let (_, count) = convection_matrix(&ops, &p.sample(0.0), false, 1.0);
        assert_eq!(count, 0);
    }
}
