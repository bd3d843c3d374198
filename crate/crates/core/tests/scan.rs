mod common;

use proptest::prelude::*;
use rand::Rng;
use sweetspot::matching::EffectSequence;
use sweetspot::{find_sweet_spot, scan_max, z_statistic, Error, ScanConstraints};

use common::{exact_integer_scan, mixed_effects, naive_scan, rng};

#[test]
fn appendix_form_agrees_with_definition() {
    let mut r = rng(11);
    for _ in 0..50 {
        let n = r.random_range(2..40);
        let t: Vec<f64> = (0..n).map(|_| r.random_range(-3.0..3.0)).collect();
        let total: f64 = t.iter().sum();
        for i in 1..n {
            for j in i + 1..=n {
                let z = z_statistic(&t, i, j).unwrap();
                let len = (j - i + 1) as f64;
                let alt = t[i - 1..j].iter().sum::<f64>() - len / n as f64 * total;
                assert!((z - alt).abs() <= 1e-9 * (1.0 + alt.abs()), "({i},{j}): {z} vs {alt}");
            }
        }
    }
}

#[test]
fn matches_naive_scan_on_random_sequences() {
    let mut r = rng(12);
    let c = ScanConstraints::default();
    for _ in 0..300 {
        let n = r.random_range(2..=200);
        let (t, discrete) = mixed_effects(&mut r, n);
        let (i, j, z) = scan_max(&t, &c).unwrap();
        if discrete {
            let ti: Vec<i64> = t.iter().map(|&x| x as i64).collect();
            let (ei, ej, num) = exact_integer_scan(&ti, &c).unwrap();
            assert_eq!((i, j), (ei, ej));
            assert!((z - num as f64 / n as f64).abs() < 1e-9);
        } else {
            let (ni, nj, nz) = naive_scan(&t, &c).unwrap();
            assert_eq!((i, j), (ni, nj));
            assert!((z - nz).abs() < 1e-9);
        }
    }
}

#[test]
fn constraints_match_naive_scan() {
    let mut r = rng(13);
    for _ in 0..200 {
        let n = r.random_range(6..=60);
        let (t, discrete) = mixed_effects(&mut r, n);
        let c = ScanConstraints {
            min_len: r.random_range(2..=4),
            max_len: r.random_bool(0.5).then(|| r.random_range(4..=n)),
            stride: r.random_range(1..=3),
            min_fraction: r.random_bool(0.3).then_some(0.2),
            ..ScanConstraints::default()
        };
        let oracle = if discrete {
            let ti: Vec<i64> = t.iter().map(|&x| x as i64).collect();
            exact_integer_scan(&ti, &c).map(|(i, j, num)| (i, j, num as f64 / n as f64))
        } else {
            naive_scan(&t, &c)
        };
        match (scan_max(&t, &c), oracle) {
            (Ok((i, j, z)), Some((ni, nj, nz))) => {
                assert_eq!((i, j), (ni, nj));
                assert!((z - nz).abs() < 1e-9);
                assert_eq!((j - i) % c.stride, 0);
            }
            (Err(Error::Constraint(_)), None) => {}
            (got, want) => panic!("scan {got:?} vs naive {want:?}"),
        }
    }
}

#[test]
fn reported_statistic_is_z_at_the_location() {
    let mut r = rng(14);
    for _ in 0..50 {
        let n = r.random_range(2..100);
        let (t, _) = mixed_effects(&mut r, n);
        let seq = EffectSequence::from_effects(t.clone()).unwrap();
        let loc = find_sweet_spot(&seq, &ScanConstraints::default()).unwrap();
        assert_eq!(loc.z_hat, z_statistic(&t, loc.i_hat, loc.j_hat).unwrap());
        assert!(1 <= loc.i_hat && loc.i_hat < loc.j_hat && loc.j_hat <= n);
    }
}

#[test]
fn too_short_sequence_is_a_constraint_error() {
    let c = ScanConstraints { min_len: 5, ..Default::default() };
    assert!(matches!(scan_max(&[1.0, 2.0, 3.0], &c), Err(Error::Constraint(_))));
    assert!(matches!(scan_max(&[1.0], &ScanConstraints::default()), Err(Error::Constraint(_))));
}

fn integer_sequence() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec((-3i32..=3).prop_map(f64::from), 2..80)
}

proptest! {
    #[test]
    fn shift_leaves_location_unchanged(t in integer_sequence(), shift in -5i32..=5) {
        let c = ScanConstraints::default();
        let shifted: Vec<f64> = t.iter().map(|x| x + shift as f64).collect();
        prop_assert_eq!(scan_max(&t, &c).unwrap(), scan_max(&shifted, &c).unwrap());
    }

    #[test]
    fn positive_scale_scales_z(t in integer_sequence(), a in 1u32..8) {
        let c = ScanConstraints::default();
        let (i, j, z) = scan_max(&t, &c).unwrap();
        let scaled: Vec<f64> = t.iter().map(|x| x * a as f64).collect();
        let (si, sj, sz) = scan_max(&scaled, &c).unwrap();
        prop_assert_eq!((i, j), (si, sj));
        prop_assert!((sz - a as f64 * z).abs() < 1e-9);
    }

    #[test]
    fn reversal_mirrors_a_unique_maximizer(t in prop::collection::vec(-1.0f64..1.0, 2..60)) {
        let c = ScanConstraints::default();
        let n = t.len();
        let (i, j, z) = scan_max(&t, &c).unwrap();
        // only meaningful when no other interval comes close
        let runner_up = (1..n)
            .flat_map(|a| (a + 1..=n).map(move |b| (a, b)))
            .filter(|&(a, b)| (a, b) != (i, j))
            .map(|(a, b)| z_statistic(&t, a, b).unwrap())
            .fold(f64::NEG_INFINITY, f64::max);
        prop_assume!(z - runner_up > 1e-9);
        let reversed: Vec<f64> = t.iter().rev().copied().collect();
        let (ri, rj, rz) = scan_max(&reversed, &c).unwrap();
        prop_assert_eq!((ri, rj), (n + 1 - j, n + 1 - i));
        prop_assert!((rz - z).abs() < 1e-9);
    }

    #[test]
    fn z_hat_dominates_every_interval(t in prop::collection::vec(-2.0f64..2.0, 2..50)) {
        let (_, _, z) = scan_max(&t, &ScanConstraints::default()).unwrap();
        let n = t.len();
        for i in 1..n {
            for j in i + 1..=n {
                prop_assert!(z_statistic(&t, i, j).unwrap() <= z + 1e-12);
            }
        }
    }
}
