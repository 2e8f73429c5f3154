use std::sync::Arc;

use proptest::prelude::*;
use superito::pathspace::{path_distance, stop, stop_at_index};
use superito::simulator::simulate_total_masses;
use superito::{weak_distance, CirclePoint, FiniteMeasure, FourierField, SimParams, Trajectory};

fn field() -> impl Strategy<Value = FourierField<f64>> {
    (-2.0..2.0f64, prop::collection::vec(-1.0..1.0f64, 0..4), prop::collection::vec(-1.0..1.0f64, 0..4))
        .prop_map(|(a0, c, s)| FourierField::from_parts(a0, c, s))
}

fn measure() -> impl Strategy<Value = FiniteMeasure<f64>> {
    prop::collection::vec((0.0..1.0f64, 0.01..2.0f64), 1..8).prop_map(|atoms| {
        FiniteMeasure::new(atoms.into_iter().map(|(x, w)| (CirclePoint::new(x), w)).collect()).unwrap()
    })
}

fn path() -> impl Strategy<Value = Arc<Trajectory<f64>>> {
    prop::collection::vec(measure(), 2..10).prop_map(|snaps| {
        let n = snaps.len() - 1;
        let times = (0..=n).map(|k| k as f64 / n as f64).collect();
        Arc::new(Trajectory::new(times, snaps, 1.0).unwrap())
    })
}

proptest! {
    #[test]
    fn integration_is_linear_in_the_field(mu in measure(), f in field(), g in field(), a in -3.0..3.0f64) {
        let lhs = mu.integrate(&(&f.scale(a) + &g));
        let rhs = a * mu.integrate(&f) + mu.integrate(&g);
        prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()));
    }

    #[test]
    fn moments_agree_with_direct_integration(mu in measure(), f in field()) {
        let via_moments = mu.moments(8).dot(&f).unwrap();
        prop_assert!((via_moments - mu.integrate(&f)).abs() <= 1e-10 * (1.0 + via_moments.abs()));
    }

    #[test]
    fn product_matches_pointwise(f in field(), g in field(), x in 0.0..1.0f64) {
        let p = CirclePoint::new(x);
        let fg = f.product(&g).eval(p);
        prop_assert!((fg - f.eval(p) * g.eval(p)).abs() <= 1e-10);
    }

    #[test]
    fn weak_distance_is_a_pseudometric(a in measure(), b in measure(), c in measure()) {
        let (ab, ba) = (weak_distance(&a, &b), weak_distance(&b, &a));
        prop_assert!(weak_distance(&a, &a) == 0.0);
        prop_assert!((ab - ba).abs() <= 1e-12);
        prop_assert!(weak_distance(&a, &c) <= ab + weak_distance(&b, &c) + 1e-12);
    }

    #[test]
    fn csv_round_trip_keeps_integrals(mu in measure(), f in field()) {
        let back = FiniteMeasure::<f64>::from_csv(&mu.to_csv()).unwrap();
        prop_assert!((back.integrate(&f) - mu.integrate(&f)).abs() <= 1e-12);
    }

    #[test]
    fn stopping_composes(traj in path(), s in 0.0..1.0f64, u in 0.0..1.0f64) {
        let direct = stop(&traj, s.min(u)).unwrap();
        let composed = stop(&traj, s).unwrap().stop(u).unwrap();
        prop_assert!(direct.same_path(&composed));
        prop_assert!(path_distance(&direct, &composed) == 0.0);
    }

    #[test]
    fn stopped_path_freezes_after_the_stop(traj in path(), k in 0usize..10, u in 0.0..1.0f64) {
        let k = k.min(traj.last_index());
        let sp = stop_at_index(&traj, k);
        let t = traj.times()[k];
        prop_assert!(sp.lookup(u.max(t)) == *traj.snapshot(k));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn mass_only_run_matches_full_run(seed in 0u64..1000, rep in 0u64..8) {
        let params = SimParams::<f64>::new(100, 1.0, 0.5, 1.0 / 64.0).with_seed(seed);
        let full = superito::simulate_replicate(&params, rep).unwrap().total_masses();
        let fast = simulate_total_masses(&params, rep).unwrap();
        prop_assert_eq!(full.len(), fast.len());
        for (a, b) in full.iter().zip(&fast) {
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn replicates_are_reproducible(seed in 0u64..1000) {
        let params = SimParams::<f64>::new(50, 1.0, 0.25, 1.0 / 32.0).with_seed(seed);
        let a = superito::simulate_replicate(&params, 3).unwrap();
        let b = superito::simulate_replicate(&params, 3).unwrap();
        prop_assert_eq!(a.to_csv(), b.to_csv());
    }
}

#[test]
fn pure_heat_flow_conserves_mass() {
    let params = SimParams::<f64>::new(4000, 0.0, 0.5, 1.0 / 128.0).with_seed(5);
    let path = superito::simulate_replicate(&params, 0).unwrap();
    let masses = path.total_masses();
    assert!(masses.iter().all(|m| (m - 1.0).abs() < 1e-12));
}

#[test]
fn single_precision_paths_track_double_precision_masses() {
    let p32 = SimParams::<f32>::new(200, 1.0, 0.5, 1.0 / 64.0).with_seed(9);
    let p64 = SimParams::<f64>::new(200, 1.0, 0.5, 1.0 / 64.0).with_seed(9);
    let m32 = simulate_total_masses(&p32, 0).unwrap();
    let m64 = simulate_total_masses(&p64, 0).unwrap();
    for (a, b) in m32.iter().zip(&m64) {
        assert!((f64::from(*a) - b).abs() < 1e-5);
    }
}
