use horizon_core::config::Config;
use horizon_core::currents::{GridSpec, Orientation, PotentialGrid};
use horizon_core::ergodic::TimeDirection;
use horizon_core::experiments::parse_observable;
use horizon_core::green::{GreenParams, GreenSolver};
use horizon_core::report::{Cell, ExperimentReport};
use horizon_core::structure::certify_horizontal_like;
use horizon_core::{par, MapSpec, C64};
use proptest::prelude::*;

fn point(r: f64) -> impl Strategy<Value = [C64; 2]> {
    prop::array::uniform4(-r..r).prop_map(|[a, b, c, d]| [C64::new(a, b), C64::new(c, d)])
}

fn dist(a: &[C64], b: &[C64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn henon_inverse_undoes_forward(c in -0.5..0.5f64, a in 0.2..0.9f64, x in point(2.0)) {
        let m = MapSpec::henon_quadratic(c, a);
        let y = m.eval(&x);
        let back = m.eval_inverse(&y).unwrap();
        let scale = 1.0 + y.iter().map(|z| z.norm()).fold(0.0, f64::max);
        prop_assert!(dist(&back, &x) <= 1e-12 * scale * scale);
        // The inverse lists the vertical block first.
        let inv = m.inverse();
        let back = inv.eval(&[y[1], y[0]]);
        prop_assert!(dist(&[back[1], back[0]], &x) <= 1e-12 * scale * scale);
    }

    #[test]
    fn henon_jacobian_determinant_is_constant(a in 0.2..0.9f64, x in point(2.0)) {
        let m = MapSpec::henon_quadratic(0.0, a);
        let j = m.differential(&x);
        let det = j[(0, 0)] * j[(1, 1)] - j[(0, 1)] * j[(1, 0)];
        prop_assert!((det.norm() - a).abs() < 1e-12);
    }

    #[test]
    fn green_plus_is_nonnegative_and_equivariant(x in point(1.9)) {
        let m = MapSpec::henon_quadratic(0.0, 0.5);
        let g = GreenSolver::plus(&m).unwrap();
        let prm = GreenParams { n_max: 200, r_esc: None };
        let gx = g.eval(&x, &prm).unwrap();
        let gy = g.eval(&m.eval(&x), &prm).unwrap();
        prop_assert!(gx.value >= 0.0);
        let allowed = gy.error_bound + g.degree * gx.error_bound + 1e-12;
        prop_assert!((gy.value - g.degree * gx.value).abs() <= allowed);
    }

    #[test]
    fn indexed_map_matches_sequential(n in 0usize..500, seed in any::<u64>()) {
        let f = |i: usize| ((i as u64).wrapping_mul(seed | 1) as f64).sin();
        let par_out = par::map_indexed(n, f);
        let seq: Vec<f64> = (0..n).map(f).collect();
        prop_assert_eq!(par_out, seq);
    }

    #[test]
    fn compensated_sum_is_close_to_exact(xs in prop::collection::vec(-1e3..1e3f64, 0..400)) {
        let naive: f64 = xs.iter().sum();
        let bound = 1e-9 * (1.0 + xs.iter().map(|x| x.abs()).sum::<f64>());
        prop_assert!((par::ksum(xs.iter().copied()) - naive).abs() <= bound);
    }

    #[test]
    fn float_cells_round_trip(x in any::<f64>().prop_filter("finite", |x| x.is_finite())) {
        prop_assert_eq!(Cell::Num(x).render().parse::<f64>().unwrap(), x);
    }

    #[test]
    fn reports_never_hold_nonfinite_scalars(v in prop::num::f64::ANY) {
        let mut r = ExperimentReport::new("p", "m", 0);
        r.scalar("v", v);
        prop_assert_eq!(r.get("v").is_some(), v.is_finite());
        prop_assert_eq!(r.flags.contains_key("nonfinite.v"), !v.is_finite());
        let back: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        prop_assert!(back["scalars"]["v"].is_null() != v.is_finite());
    }

    #[test]
    fn config_rejects_unknown_keys(key in "[a-z]{3,10}") {
        let text = format!("[run]\nseed = 1\n[map]\nkind = henon\n{key} = 1\n");
        let known = ["kind", "c", "c_im", "a", "degree", "eps"].contains(&key.as_str());
        prop_assert_eq!(Config::parse(&text).is_ok(), known);
    }

    #[test]
    fn config_seed_round_trips(seed in any::<u64>()) {
        let c = Config::parse(&format!("[run]\nseed = {seed}\n")).unwrap();
        prop_assert_eq!(c.seed().unwrap(), seed);
    }

    #[test]
    fn real_part_observable_reads_coordinates(i in 0usize..2, x in point(5.0)) {
        let o = parse_observable(&format!("re:{i}"), 2).unwrap();
        prop_assert_eq!(o.eval(&x), x[i].re);
        let o = parse_observable(&format!("im:{i}"), 2).unwrap();
        prop_assert_eq!(o.eval(&x), x[i].im);
    }

    #[test]
    fn snapshots_round_trip(vals in prop::collection::vec(-10.0..10.0f64, 8 * 8 * 4 * 4)) {
        let spec = GridSpec::new(8, 4, 2.0, 2.0).unwrap();
        let g = PotentialGrid::assemble(Orientation::Horizontal, spec, vals, 1.0, "prop");
        let mut bytes = Vec::new();
        g.write_snapshot(&mut bytes).unwrap();
        let back = PotentialGrid::read_snapshot(bytes.as_slice()).unwrap();
        prop_assert_eq!(back.values, g.values);
        prop_assert_eq!(back.spec, g.spec);
        prop_assert_eq!(back.orientation, g.orientation);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn certificate_is_seed_deterministic_and_worker_independent(seed in any::<u64>()) {
        let m = MapSpec::henon_quadratic(0.0, 0.5);
        let cfg = Config::parse("[run]\nseed = 1\n[map]\nkind = henon\n").unwrap();
        let dom = cfg.domain_for(&m).unwrap();
        let a = certify_horizontal_like(&m, &dom, 5_000, seed).unwrap();
        par::set_sequential(true);
        let b = certify_horizontal_like(&m, &dom, 5_000, seed).unwrap();
        par::set_sequential(false);
        prop_assert_eq!(a.margin_v.to_bits(), b.margin_v.to_bits());
        prop_assert_eq!(a.samples_used, b.samples_used);
        prop_assert!(a.is_horizontal_like);
    }
}

#[test]
fn reversing_a_direction_twice_is_identity() {
    for d in [TimeDirection::Forward, TimeDirection::Backward] {
        assert_eq!(d.reversed().reversed(), d);
        assert_ne!(d.reversed(), d);
    }
}
