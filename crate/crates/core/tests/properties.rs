use std::sync::Arc;

use proptest::prelude::*;

use kcm_lab::bootstrap::bp_closure;
use kcm_lab::duality::{ExactDuality, SetDescriptor};
use kcm_lab::experiment::ExperimentConfig;
use kcm_lab::models::constraint_rate;
use kcm_lab::sim::{Record, build_timeline, evolve, evolve_final};
use kcm_lab::spectral::{
    MeasureVector, Restriction, build_state_space, chain, expm_transpose_apply, flux_imbalance, stationary_vector,
};
use kcm_lab::{BoundaryCondition, Configuration, ModelSpec, Site, TypeMap, Window};

fn bits(n: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = Vec<u8>> {
    prop::collection::vec(0u8..=1, n)
}

fn config_at(lo: Site, b: &[u8]) -> Configuration {
    Configuration::from_bits(Window::line(lo, lo + b.len() as Site - 1).unwrap(), b).unwrap()
}

fn site_models(q: f64) -> Vec<ModelSpec> {
    vec![
        ModelSpec::fa1f(q).unwrap(),
        ModelSpec::east(q).unwrap(),
        ModelSpec::east_polluted(q, TypeMap::periodic("EFF", 0).unwrap()).unwrap(),
        ModelSpec::delta_west(q, 0.3).unwrap(),
        ModelSpec::babp(q).unwrap(),
    ]
}

fn bc() -> impl Strategy<Value = BoundaryCondition> {
    prop_oneof![Just(BoundaryCondition::HEALTHY), Just(BoundaryCondition::INFECTED)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn flip_is_an_involution_and_toggles_parity(b in bits(1..=40), lo in -20i64..20, k in 0usize..40) {
        let eta = config_at(lo, &b);
        let x = lo + (k % b.len()) as Site;
        let f = eta.flip(x).unwrap();
        prop_assert_eq!(f.flip(x).unwrap(), eta.clone());
        prop_assert_eq!(f.count_infections().abs_diff(eta.count_infections()), 1);
        prop_assert_ne!(f.parity(), eta.parity());
    }

    #[test]
    fn fronts_ignore_healthy_padding(b in bits(1..=30), lo in -10i64..10, l in 0i64..5, r in 0i64..5) {
        let eta = config_at(lo, &b);
        let outer = Window::line(lo - l, lo + b.len() as Site - 1 + r).unwrap();
        prop_assert_eq!(eta.pad_healthy(outer).unwrap().fronts(), eta.fronts());
    }

    #[test]
    fn constraints_never_read_the_site(b in bits(1..=12), q in 0.05f64..0.95, k in 0usize..12, bc in bc()) {
        let eta = config_at(0, &b);
        let x = (k % b.len()) as Site;
        for m in site_models(q) {
            let c = constraint_rate(&m, &eta, &bc, x).unwrap();
            prop_assert_eq!(c, constraint_rate(&m, &eta.flip(x).unwrap(), &bc, x).unwrap());
            let allowed: &[f64] = match m.kind {
                kcm_lab::ModelKind::Babp => &[0.0, 1.0, 2.0],
                kcm_lab::ModelKind::DeltaWest => &[0.0, 0.3, 1.0, 1.3],
                _ => &[0.0, 1.0],
            };
            prop_assert!(allowed.iter().any(|a| (a - c).abs() < 1e-15), "{} gave {c}", m.kind);
        }
    }

    #[test]
    fn delta_west_interpolates(b in bits(1..=12), q in 0.05f64..0.95, k in 0usize..12, bc in bc()) {
        let eta = config_at(-3, &b);
        let x = -3 + (k % b.len()) as Site;
        let at = |m: ModelSpec| constraint_rate(&m, &eta, &bc, x).unwrap();
        prop_assert_eq!(at(ModelSpec::delta_west(q, 0.0).unwrap()), at(ModelSpec::east(q).unwrap()));
        prop_assert_eq!(at(ModelSpec::delta_west(q, 1.0).unwrap()), at(ModelSpec::babp(q).unwrap()));
    }

    #[test]
    fn bootstrap_closure_is_monotone_and_idempotent(
        b in bits(1..=24), mask in bits(24..=24), bc in bc(), which in 0usize..5,
    ) {
        let m = &site_models(0.5)[which];
        let eta = config_at(0, &b);
        // a smaller configuration: extra infections where the mask is 0
        let lower_bits: Vec<u8> = b.iter().zip(&mask).map(|(x, y)| x & y).collect();
        let lower = config_at(0, &lower_bits);
        let c = bp_closure(m, &eta, &bc).unwrap();
        prop_assert!(c.le(&eta));
        prop_assert_eq!(bp_closure(m, &c, &bc).unwrap(), c.clone());
        prop_assert!(bp_closure(m, &lower, &bc).unwrap().le(&c));
    }

    #[test]
    fn east_closure_is_a_step(b in bits(1..=30), lo in -10i64..10) {
        let eta = config_at(lo, &b);
        let c = bp_closure(&ModelSpec::east(0.5).unwrap(), &eta, &BoundaryCondition::HEALTHY).unwrap();
        let step: Vec<u8> = match b.iter().position(|&x| x == 0) {
            Some(v) => (0..b.len()).map(|i| u8::from(i < v)).collect(),
            None => b.clone(),
        };
        prop_assert_eq!(c, config_at(lo, &step));
    }

    #[test]
    fn dfp_conserves_parity(b in bits(2..=20), seed in any::<u64>(), lambda in 0.1f64..5.0, t in 0.0f64..5.0) {
        let m = ModelSpec::dfp(lambda).unwrap();
        let eta = config_at(0, &b);
        let tl = build_timeline(&m, eta.window(), t, seed).unwrap();
        let tr = evolve(&m, &eta, &BoundaryCondition::HEALTHY, &tl, Record::Events).unwrap();
        prop_assert_eq!(tr.final_config.parity(), eta.parity());
        prop_assert_eq!(tr.replay().unwrap(), tr.final_config);
    }

    #[test]
    fn evolution_is_a_function_of_the_timeline(b in bits(2..=16), seed in any::<u64>(), which in 0usize..5) {
        let m = &site_models(0.4)[which];
        let eta = config_at(0, &b);
        let tl = build_timeline(m, eta.window(), 3.0, seed).unwrap();
        let bc = BoundaryCondition::HEALTHY;
        let a = evolve(m, &eta, &bc, &tl, Record::Events).unwrap();
        prop_assert_eq!(&a, &evolve(m, &eta, &bc, &tl, Record::Events).unwrap());
        prop_assert_eq!(a.final_config.clone(), evolve_final(m, &eta, &bc, &tl).unwrap());
        // flipping the coin of an illegal ring changes nothing
        if let Some(e) = a.events.iter().find(|e| !e.legal) {
            let tl2 = tl.with_coin_flipped_at(e.site, e.clock, e.time).unwrap();
            prop_assert_eq!(&a, &evolve(m, &eta, &bc, &tl2, Record::Events).unwrap());
        }
    }

    #[test]
    fn semigroup_conserves_mass_and_equilibrium_balances(
        n in 2usize..=6, q in 0.1f64..0.9, t in 0.0f64..3.0, which in 0usize..5, bc in bc(),
    ) {
        let m = &site_models(q)[which];
        let g = chain(m, Window::sites(n).unwrap(), bc, Restriction::None).unwrap();
        let mut v = vec![0.0; g.dim()];
        v[g.dim() / 2] = 1.0;
        let w = expm_transpose_apply(&g, &v, t);
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        prop_assert!(w.iter().all(|&x| x > -1e-12));
        let space = Arc::new(build_state_space(m, Window::sites(n).unwrap(), bc, Restriction::None).unwrap());
        let pi = MeasureVector::equilibrium(space).unwrap();
        prop_assert!(flux_imbalance(&g, &pi) < 1e-12);
    }

    #[test]
    fn nonempty_restriction_stationary_is_conditioned_product(n in 2usize..=6, q in 0.1f64..0.9) {
        let m = ModelSpec::fa1f(q).unwrap();
        let g = chain(&m, Window::sites(n).unwrap(), BoundaryCondition::HEALTHY, Restriction::AtLeastOneInfection).unwrap();
        let mu = stationary_vector(&g).unwrap();
        let norm = 1.0 - (1.0 - q).powi(n as i32);
        for i in 0..g.dim() {
            let h = g.space().code(i).count_ones() as i32;
            let want = (1.0 - q).powi(h) * q.powi(n as i32 - h) / norm;
            prop_assert!((mu.weights()[i] - want).abs() < 1e-10);
        }
    }

    #[test]
    fn config_hash_ignores_line_order(pairs in prop::collection::btree_map("[a-z]{1,6}", "[a-z0-9.]{1,6}", 1..8)) {
        let fwd: String = pairs.iter().map(|(k, v)| format!("{k} = {v}\n")).collect();
        let rev: String = pairs.iter().rev().map(|(k, v)| format!("{k}={v}\n")).collect();
        let a = ExperimentConfig::parse(&fwd).unwrap();
        let b = ExperimentConfig::parse(&rev).unwrap();
        prop_assert_eq!(a.hash(), b.hash());
    }

    #[test]
    fn configuration_serde_round_trip(b in bits(1..=100), lo in -50i64..50) {
        let eta = config_at(lo, &b);
        let s = serde_json::to_string(&eta).unwrap();
        prop_assert_eq!(serde_json::from_str::<Configuration>(&s).unwrap(), eta);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn exact_dualities_hold_on_random_sets(
        lambda in 0.2f64..4.0,
        t in 0.0f64..0.8,
        b in prop::collection::btree_set(-2i64..=2, 0..=3),
        dual in prop::collection::btree_set(-2i64..=2, 0..=3),
    ) {
        let ex = ExactDuality::new(lambda, Window::line(-5, 5).unwrap()).unwrap();
        let b: Vec<Site> = b.into_iter().collect();
        let d: Vec<Site> = dual.into_iter().collect();
        let s = ex.self_duality(&b, &SetDescriptor::explicit(&d), t).unwrap();
        prop_assert!(s.abs_diff <= 1e-8, "{s:?}");
        let qd = ex.quasi_duality(&b, &SetDescriptor::explicit(&d), t).unwrap();
        prop_assert!(qd.abs_diff <= 1e-8, "{qd:?}");
    }
}
