//! Checks against values computed independently inside the tests.

use bsch_core::diagnostics::{decay_gronwall_q, uniform_gronwall_bound};
use bsch_core::forms::LinearBackend;
use bsch_core::potential::ConvexPart;
use bsch_core::velocity::{Envelope, StreamProfile, SurfaceProfile, VelocityPair};
use bsch_core::*;

fn shoelace(points: &[[f64; 2]]) -> f64 {
    let n = points.len();
    0.5 * (0..n).map(|i| {
        let (a, b) = (points[i], points[(i + 1) % n]);
        a[0] * b[1] - b[0] * a[1]
    }).sum::<f64>()
}

#[test]
fn lumped_masses_match_polygon_measures() {
    for level in 0..4 {
        let mesh = build_disk_mesh(1.5, level).unwrap();
        let ops = assemble(&mesh).unwrap();
        let boundary: Vec<[f64; 2]> = mesh.boundary.iter().map(|&i| mesh.nodes[i]).collect();
        let n = boundary.len() as f64;
        let area: f64 = ops.bulk_mass_lumped.iter().sum();
        let perimeter: f64 = ops.surface_mass_lumped.iter().sum();
        // regular N-gon inscribed in the circle
        let exact_area = 0.5 * n * 1.5 * 1.5 * (2.0 * std::f64::consts::PI / n).sin();
        let exact_perimeter = 2.0 * n * 1.5 * (std::f64::consts::PI / n).sin();
        assert!((area - shoelace(&boundary)).abs() < 1e-12, "level {level}");
        assert!((area - exact_area).abs() < 1e-12);
        assert!((perimeter - exact_perimeter).abs() < 1e-12);
    }
}

#[test]
fn stiffness_is_exact_on_linear_functions() {
    let mesh = build_disk_mesh(1.0, 3).unwrap();
    let ops = assemble(&mesh).unwrap();
    let area: f64 = ops.bulk_mass_lumped.iter().sum();
    let x: Vec<f64> = mesh.nodes.iter().map(|p| p[0]).collect();
    let affine: Vec<f64> = mesh.nodes.iter().map(|p| 2.0 * p[0] - 3.0 * p[1] + 1.0).collect();
    assert!((ops.bulk_stiffness.bilinear(&x, &x) - area).abs() < 1e-12);
    assert!((ops.bulk_stiffness.bilinear(&affine, &affine) - 13.0 * area).abs() < 1e-11);
    let ones = vec![1.0; x.len()];
    assert!(ops.bulk_stiffness.mul_vec(&ones).iter().all(|v| v.abs() < 1e-12));
}

#[test]
fn surface_stiffness_matches_edge_differences() {
    let mesh = build_disk_mesh(1.0, 2).unwrap();
    let ops = assemble(&mesh).unwrap();
    let pts: Vec<[f64; 2]> = mesh.boundary.iter().map(|&i| mesh.nodes[i]).collect();
    let f: Vec<f64> = pts.iter().map(|p| p[1].atan2(p[0]).cos()).collect();
    let n = f.len();
    let direct: f64 = (0..n)
        .map(|j| {
            let (a, b) = (pts[j], pts[(j + 1) % n]);
            (f[(j + 1) % n] - f[j]).powi(2) / (a[0] - b[0]).hypot(a[1] - b[1])
        })
        .sum();
    assert!((ops.surface_stiffness.bilinear(&f, &f) - direct).abs() < 1e-12);
}

fn flory_huggins(s: f64) -> f64 {
    0.5 * ((1.0 + s) * (1.0 + s).ln() + (1.0 - s) * (1.0 - s).ln()) - s * s
}

#[test]
fn constant_state_is_steady_with_closed_form_energy() {
    let ops = assemble(&build_disk_mesh(1.0, 2).unwrap()).unwrap();
    let geom = ops.geometry();
    let params = SystemParams::new(Coupling::Finite(1.0), Coupling::Finite(1.0), 1.0, 1.0, MassTarget::Coupled(0.25), &geom).unwrap();
    let p = ModelPotential::Direct(SplitPotential::log(1.0, 2.0));
    let model = Model::new(ops, params, p, p, LinearBackend::Direct).unwrap();
    let phi = model.project_mass(&model.zeros()).unwrap();
    assert!(phi.to_flat().iter().all(|v| (v - 0.25).abs() < 1e-14));
    let expected = (geom.bulk_measure + geom.surface_measure) * flory_huggins(0.25);
    assert!((model.energy(&phi).unwrap().total - expected).abs() < 1e-12);
    let mut st = Stepper::new(&model, SchemeConfig { dt: 0.1, ..Default::default() }, VelocityPair::zero(&model.ops)).unwrap();
    let rec = st.run(&phi, 0.0, 1.0, 1).unwrap();
    assert!(rec.final_state.phi.sub(&phi).max_abs() < 1e-12);
}

fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn log_resolvent_matches_bisection() {
    let log = ConvexPart::LogEntropy { theta: 1.5 };
    for lambda in [1.0, 0.1, 1e-3] {
        for s in [-4.0, -1.0, -0.3, 0.0, 0.7, 1.0, 2.5] {
            let r = bisect(|r: f64| r + lambda * 1.5 * r.atanh() - s, -1.0 + 1e-16, 1.0 - 1e-16);
            let d = log.yosida_derivative(lambda, s);
            assert!((d - (s - r) / lambda).abs() <= 1e-9 * (1.0 + d.abs()), "{lambda} {s}");
            assert!((log.derivative(r.clamp(-0.999, 0.999)).unwrap() - 1.5 * r.clamp(-0.999, 0.999).atanh()).abs() < 1e-12);
        }
    }
}

#[test]
fn gronwall_constants() {
    let e = std::f64::consts::E;
    // Q(1, 1, 0) = (e^{1/2}/(1 - e^{-1/2}))²
    let q = decay_gronwall_q(1.0, 1.0, 0.0).unwrap();
    assert!((q - 17.56).abs() < 5e-3, "{q}");
    assert!((q - e / (1.0 - (-0.5f64).exp()).powi(2)).abs() < 1e-12);
    let q2 = decay_gronwall_q(2.0, 0.0, 1.0).unwrap();
    assert!((q2 - 2.0 * e * e / (1.0 - (-2.0f64).exp())).abs() < 1e-12);
    assert!((uniform_gronwall_bound(1.0, 0.5, 3.0, 2.0).unwrap() - 2.0 * e).abs() < 1e-12);
}

#[test]
fn rotation_is_divergence_free_and_conserves_mass() {
    let mesh = build_disk_mesh(1.0, 2).unwrap();
    let ops = assemble(&mesh).unwrap();
    let v = VelocityPair::new(&mesh, &ops, StreamProfile::Rotation { amplitude: 2.0 }, SurfaceProfile::Rotation { amplitude: 1.0 }, Envelope::Constant);
    assert!(v.divergence_defect(&ops) < 1e-12);
    assert!(v.boundary_flux(&ops).abs() < 1e-12);
    let geom = ops.geometry();
    let params = SystemParams::new(Coupling::Finite(1.0), Coupling::Infinite, 1.0, 1.0, MassTarget::Split(0.1, -0.2), &geom).unwrap();
    let p = ModelPotential::Direct(SplitPotential::log(1.0, 2.0));
    let model = Model::new(ops, params, p, p, LinearBackend::Direct).unwrap();
    let phi = model.random_initial(0.3, 0.9, 1).unwrap();
    let mut st = Stepper::new(&model, SchemeConfig { dt: 0.01, ..Default::default() }, v).unwrap();
    let rec = st.run(&phi, 0.0, 0.5, 5).unwrap();
    let m0 = rec.samples[0].mass.components();
    for s in &rec.samples {
        for (a, b) in s.mass.components().iter().zip(&m0) {
            assert!((a - b).abs() <= 1e-12 * model.mass_scale());
        }
    }
}
