use std::sync::Arc;

use proptest::prelude::*;
use pqcrit::bracket::{sup_tau, BracketFunction};
use pqcrit::config::KeyValueConfig;
use pqcrit::eigen::gap_report;
use pqcrit::fem::{
    assemble_potentials, energy, pair_operators, parse_fem_function, FemFunction, FemSpace, Regularization,
};
use pqcrit::mesh::{build_box_mesh, parse_mesh};
use pqcrit::thresholds::{threshold_p, threshold_pq};
use pqcrit::ProblemParams;

fn space() -> Arc<FemSpace> {
    FemSpace::new(build_box_mesh(3, &[3, 3, 3], &[1.0, 1.0, 1.0]).unwrap()).unwrap()
}

fn coeffs() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0f64..2.0, 8)
}

fn params() -> impl Strategy<Value = ProblemParams> {
    (3usize..=5, 1.2f64..2.6, 0.05f64..0.95, 0.1f64..10.0).prop_filter_map("p < N", |(n, p, frac, vol)| {
        if p >= n as f64 - 0.2 {
            return None;
        }
        let pstar = n as f64 * p / (n as f64 - p);
        ProblemParams::new(n, p, p + frac * (pstar - p), vol).ok()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn supremum_dominates_log_grid(
        a in 0.01f64..10.0, b in 0.01f64..10.0, c in 0.01f64..10.0,
        e1 in 0.1f64..3.0, e2 in 0.1f64..3.0,
    ) {
        // a τ^{-e1} - b τ^{-(e1+e2)} - c τ^{e2}
        let f = BracketFunction::from_pairs(&[(a, -e1), (-b, -(e1 + e2)), (-c, e2)]).unwrap();
        let s = sup_tau(&f, 1e-12).unwrap();
        prop_assert!(s.tau_star > 0.0);
        for i in 0..2000 {
            let t = (-14.0 + 28.0 * i as f64 / 1999.0f64).exp();
            prop_assert!(f.eval(t) <= s.value + 1e-9 * (1.0 + s.value.abs()));
        }
        prop_assert!((f.eval(s.tau_star) - s.value).abs() <= 1e-12 * (1.0 + s.value.abs()));
    }

    #[test]
    fn thresholds_monotone_and_pq_dominates(params in params(), lm in 0.5f64..200.0, q_frac in 0.05f64..0.95) {
        let a = threshold_p(1, lm, &params).unwrap();
        let b = threshold_p(1, 1.7 * lm, &params).unwrap();
        prop_assert!(b.threshold >= a.threshold);
        let q = 1.0 + q_frac * (params.p - 1.0);
        let pq = params.with_q(q).unwrap();
        let c = threshold_pq(1, lm, &pq).unwrap();
        prop_assert!(c.threshold >= a.threshold - 1e-12 * a.threshold.abs());
    }

    #[test]
    fn box_mesh_counts_and_volume(dims in prop::collection::vec(1usize..4, 3), lens in prop::collection::vec(0.1f64..3.0, 3)) {
        let m = build_box_mesh(3, &dims, &lens).unwrap();
        prop_assert_eq!(m.num_cells(), 6 * dims.iter().product::<usize>());
        let vol: f64 = lens.iter().product();
        prop_assert!((m.volume() - vol).abs() < 1e-12 * vol.max(1.0));
        let back = parse_mesh(&m.to_text()).unwrap();
        prop_assert_eq!(back.checksum(), m.checksum());
    }

    #[test]
    fn potentials_scale_and_energy_is_even(c in coeffs(), t in -3.0f64..3.0, lambda in 0.0f64..100.0) {
        let space = space();
        let u = FemFunction::new(space, c).unwrap();
        let params = ProblemParams::new(3, 2.0, 4.0, 1.0).unwrap().with_lambda(lambda).unwrap();
        let a = assemble_potentials(&u, &params).unwrap();
        let b = assemble_potentials(&u.scaled(t), &params).unwrap();
        let tol = |x: f64| 1e-10 * (1.0 + x.abs());
        prop_assert!((b.i_p - t.powi(2) * a.i_p).abs() <= tol(b.i_p));
        prop_assert!((b.g - t.powi(4) * a.g).abs() <= tol(b.g));
        prop_assert!((b.h - t.powi(6) * a.h).abs() <= tol(b.h));
        prop_assert!(a.i_p >= 0.0 && a.j_p >= 0.0 && a.g >= 0.0 && a.h >= 0.0);
        let e = energy(&u, &params, Regularization::default()).unwrap();
        let m = energy(&u.scaled(-1.0), &params, Regularization::default()).unwrap();
        prop_assert_eq!(e.e, m.e);
        prop_assert!((e.e - (e.i_p + e.f - lambda * e.g - e.h)).abs() <= 1e-12 * (1.0 + e.e.abs()));
    }

    #[test]
    fn pairings_are_odd_and_bounded(c in coeffs(), d in coeffs(), p in 1.5f64..2.9) {
        let space = space();
        let u = FemFunction::new(space.clone(), c).unwrap();
        let v = FemFunction::new(space.clone(), d).unwrap();
        let params = ProblemParams::new(3, p, p + 0.1, 1.0).unwrap();
        let reg = Regularization::off();
        let plus = pair_operators(&u, &v, &params, reg).unwrap();
        let minus = pair_operators(&u.scaled(-1.0), &v, &params, reg).unwrap();
        prop_assert_eq!(plus.a_p, -minus.a_p);
        prop_assert_eq!(plus.b_p, -minus.b_p);
        let nu = space.w_norm(u.coeffs(), p);
        let nv = space.w_norm(v.coeffs(), p);
        prop_assert!(plus.a_p <= nu.powf(p - 1.0) * nv + 1e-10);
    }

    #[test]
    fn fem_function_text_roundtrip(c in coeffs()) {
        let u = FemFunction::new(space(), c).unwrap();
        let parsed = parse_fem_function(&u.to_text()).unwrap();
        prop_assert_eq!(parsed.coeffs.as_slice(), u.coeffs());
    }

    #[test]
    fn config_text_roundtrip(entries in prop::collection::btree_map("[a-z][a-z0-9_.-]{0,8}", "[a-zA-Z0-9.,+-][a-zA-Z0-9 .,+-]{0,12}[a-zA-Z0-9.,+-]", 0..8)) {
        let mut cfg = KeyValueConfig::new();
        for (k, v) in &entries {
            cfg.set(k, v.clone()).unwrap();
        }
        let back = KeyValueConfig::parse(&cfg.to_text()).unwrap();
        prop_assert_eq!(back, cfg);
    }

    #[test]
    fn gap_flags_follow_gap_size(mut vals in prop::collection::vec(0.1f64..100.0, 2..10)) {
        vals.sort_by(f64::total_cmp);
        for g in gap_report(&vals) {
            let (a, b) = (vals[g.m - 1], vals[g.m]);
            prop_assert_eq!(g.gap, b - a);
            prop_assert_eq!(g.near_multiple, b - a < 1e-6 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn parsers_never_panic(text in "\\PC{0,200}") {
        let _ = parse_mesh(&text);
        let _ = parse_fem_function(&text);
        let _ = KeyValueConfig::parse(&text);
        let _ = pqcrit::eigen::parse_eigen_sequence(&text);
    }
}
