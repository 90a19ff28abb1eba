use std::sync::OnceLock;

use proptest::prelude::*;

use bsch_core::diagnostics::{exponential_plateau_fit, uniform_gronwall_bound};
use bsch_core::forms::LinearBackend;
use bsch_core::potential::ConvexPart;
use bsch_core::velocity::VelocityPair;
use bsch_core::*;

const LOG: ConvexPart = ConvexPart::LogEntropy { theta: 1.0 };

fn model(l: Coupling) -> &'static Model {
    static FINITE: OnceLock<Model> = OnceLock::new();
    static INFINITE: OnceLock<Model> = OnceLock::new();
    let cell = if l.is_infinite() { &INFINITE } else { &FINITE };
    cell.get_or_init(|| {
        let ops = assemble(&build_disk_mesh(1.0, 1).unwrap()).unwrap();
        let mass = if l.is_infinite() { MassTarget::Split(0.1, -0.2) } else { MassTarget::Coupled(0.1) };
        let params = SystemParams::new(Coupling::Finite(1.0), l, 0.8, 1.2, mass, &ops.geometry()).unwrap();
        let p = ModelPotential::Direct(SplitPotential::log(1.0, 2.0));
        Model::new(ops, params, p, p, LinearBackend::Direct).unwrap()
    })
}

fn field(values: &[f64], m: &Model) -> BulkSurfaceField {
    BulkSurfaceField::from_flat(m.bulk_len(), &values[..m.full_len()])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn resolvent_solves_its_equation(s in -5.0f64..5.0, lambda in 1e-4f64..1.0) {
        let r = LOG.resolvent(lambda, s);
        prop_assert!(r.point.abs() < 1.0);
        prop_assert!(r.residual.abs() <= 1e-10 * (1.0 + s.abs()));
    }

    #[test]
    fn yosida_derivative_is_monotone(a in -3.0f64..3.0, b in -3.0f64..3.0, lambda in 1e-3f64..1.0) {
        let (s, t) = if a < b { (a, b) } else { (b, a) };
        prop_assert!(LOG.yosida_derivative(lambda, s) <= LOG.yosida_derivative(lambda, t) + 1e-12);
    }

    #[test]
    fn yosida_value_stays_below(s in -0.999f64..0.999, lambda in 1e-4f64..1.0) {
        prop_assert!(LOG.yosida_value(lambda, s) <= LOG.value(s).unwrap() + 1e-14);
    }

    #[test]
    fn mass_projection_hits_target(values in prop::collection::vec(-1.0f64..1.0, 200), inf in any::<bool>()) {
        let m = model(if inf { Coupling::Infinite } else { Coupling::Finite(1.0) });
        let p = m.project_mass(&field(&values, m)).unwrap();
        let target = m.params.total_mass(&m.geom).components();
        for (a, b) in m.mass_of(&p).unwrap().components().iter().zip(target) {
            prop_assert!((a - b).abs() <= 1e-12 * m.mass_scale());
        }
    }

    #[test]
    fn solution_operator_is_symmetric(a in prop::collection::vec(-1.0f64..1.0, 200), b in prop::collection::vec(-1.0f64..1.0, 200), inf in any::<bool>()) {
        let m = model(if inf { Coupling::Infinite } else { Coupling::Finite(1.0) });
        let s = &m.elliptic;
        let (f, g) = (s.project_compatible(&field(&a, m)), s.project_compatible(&field(&b, m)));
        let (sf, sg) = (s.solve_s(&f).unwrap(), s.solve_s(&g).unwrap());
        let (x, y) = (s.pairing(&sf, &g), s.pairing(&f, &sg));
        prop_assert!((x - y).abs() <= 1e-10 * (1.0 + x.abs()));
        // S is negative semi-definite in the lumped pairing
        prop_assert!(s.pairing(&sf, &f) <= 1e-12);
    }

    #[test]
    fn frozen_step_keeps_mass_and_lowers_energy(seed in 0u64..1000, dt in 1e-3f64..0.2, inf in any::<bool>()) {
        let m = model(if inf { Coupling::Infinite } else { Coupling::Finite(1.0) });
        let phi = m.random_initial(0.4, 0.9, seed).unwrap();
        let mut st = Stepper::new(m, SchemeConfig { dt, ..Default::default() }, VelocityPair::zero(&m.ops)).unwrap();
        let s0 = st.initial_state(&phi, 0.0).unwrap();
        let (s1, _) = st.step(&s0).unwrap();
        prop_assert!(m.energy(&s1.phi).unwrap().total <= m.energy(&phi).unwrap().total + 1e-10);
        for (a, b) in m.mass_of(&s1.phi).unwrap().components().iter().zip(m.mass_of(&phi).unwrap().components()) {
            prop_assert!((a - b).abs() <= 1e-12 * m.mass_scale());
        }
        prop_assert!(s1.phi.max_abs() < 1.0);
    }

    #[test]
    fn gronwall_bound_grows_with_inputs(a1 in 0.0f64..3.0, a2 in 0.0f64..3.0, a3 in 0.0f64..3.0, r in 0.1f64..3.0, d in 0.0f64..1.0) {
        let base = uniform_gronwall_bound(a1, a2, a3, r).unwrap();
        prop_assert!(uniform_gronwall_bound(a1 + d, a2, a3, r).unwrap() >= base);
        prop_assert!(uniform_gronwall_bound(a1, a2 + d, a3, r).unwrap() >= base);
        prop_assert!(uniform_gronwall_bound(a1, a2, a3 + d, r).unwrap() >= base);
    }

    #[test]
    fn plateau_fit_recovers_grid_rates(k in 1u32..500, amp in 0.1f64..5.0, plateau in -2.0f64..2.0) {
        let rate = k as f64 * 1e-3;
        let s = [4.0, 8.0, 16.0, 32.0];
        let y: Vec<f64> = s.iter().map(|v| amp * (-rate * v).exp() + plateau).collect();
        let (_, r, b, _) = exponential_plateau_fit(&s, &y, (1..=1000).map(|i| i as f64 * 1e-3)).unwrap();
        prop_assert!((r - rate).abs() < 1e-9);
        prop_assert!((b - plateau).abs() < 1e-6);
    }

    #[test]
    fn coupling_roundtrips_through_toml(v in prop_oneof![Just(None), (0.0f64..1e6).prop_map(Some)]) {
        #[derive(serde::Serialize, serde::Deserialize, PartialEq, Debug)]
        struct Doc { k: Coupling }
        let k = v.map_or(Coupling::Infinite, |x| Coupling::finite(x).unwrap());
        let text = toml::to_string(&Doc { k }).unwrap();
        prop_assert_eq!(toml::from_str::<Doc>(&text).unwrap(), Doc { k });
    }
}
