//! Welch test against an independent t-distribution oracle.

mod common;

use cachebench::stats::{t_two_sided_p, welch_t_test};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::oracle::oracle_p;

fn naive_welch(x: &[f64], y: &[f64]) -> (f64, f64) {
    let stat = |s: &[f64]| {
        let n = s.len() as f64;
        let m = s.iter().sum::<f64>() / n;
        let v = s.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0);
        (n, m, v)
    };
    let (nx, mx, vx) = stat(x);
    let (ny, my, vy) = stat(y);
    let se2 = vx / nx + vy / ny;
    let t = (mx - my) / se2.sqrt();
    let df = se2 * se2 / ((vx / nx).powi(2) / (nx - 1.0) + (vy / ny).powi(2) / (ny - 1.0));
    (t, df)
}

#[test]
fn oracle_sanity() {
    // df = 1 is Cauchy: P(|T| > 1) = 1/2
    assert!((oracle_p(1.0, 1.0) - 0.5).abs() < 1e-10);
    // df = 2 has the closed form 1 - t / sqrt(2 + t^2)
    for t in [0.3, 1.7, 4.0] {
        assert!((oracle_p(t, 2.0) - (1.0 - t / (2.0f64 + t * t).sqrt())).abs() < 1e-10);
    }
}

#[test]
fn p_values_match_oracle_on_random_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut worst = 0.0f64;
    for _ in 0..150 {
        let nx = rng.gen_range(2..60);
        let ny = rng.gen_range(2..60);
        let (mx, sx) = (rng.gen_range(-5.0..5.0), rng.gen_range(0.1..4.0));
        let (my, sy) = (rng.gen_range(-5.0..5.0), rng.gen_range(0.1..4.0));
        let x: Vec<f64> = (0..nx).map(|_| mx + sx * rng.gen_range(-1.7..1.7)).collect();
        let y: Vec<f64> = (0..ny).map(|_| my + sy * rng.gen_range(-1.7..1.7)).collect();
        let r = welch_t_test(&x, &y);
        let (t, df) = naive_welch(&x, &y);
        assert!((r.t_statistic - t).abs() <= 1e-9 * t.abs().max(1.0));
        assert!((r.degrees_of_freedom - df).abs() <= 1e-9 * df);
        let o = oracle_p(t, df);
        worst = worst.max((r.p_value - o).abs());
        assert!((r.p_value - o).abs() <= 1e-6, "t={t} df={df}: {} vs oracle {o}", r.p_value);
    }
    println!("worst |p - oracle| = {worst:e}");
}

#[test]
fn survival_matches_oracle_on_grid() {
    for df in [1.0, 2.5, 7.0, 30.0, 500.0, 1998.0] {
        for t in [0.01, 0.5, 1.0, 2.0, 3.5, 6.0] {
            let a = t_two_sided_p(t, df);
            assert!((a - oracle_p(t, df)).abs() <= 1e-9, "t={t} df={df}");
            assert_eq!(a, t_two_sided_p(-t, df));
        }
    }
}

proptest! {
    #[test]
    fn identical_samples_give_p_one(x in prop::collection::vec(-1e6f64..1e6, 2..50)) {
        prop_assert_eq!(welch_t_test(&x, &x).p_value, 1.0);
    }

    #[test]
    fn swapping_samples_flips_t(
        x in prop::collection::vec(0i32..500, 2..40),
        y in prop::collection::vec(0i32..500, 2..40),
    ) {
        let x: Vec<f64> = x.into_iter().map(f64::from).collect();
        let y: Vec<f64> = y.into_iter().map(f64::from).collect();
        let a = welch_t_test(&x, &y);
        let b = welch_t_test(&y, &x);
        prop_assert_eq!(a.p_value, b.p_value);
        prop_assert_eq!(a.t_statistic, -b.t_statistic);
    }
}

/// Moving one equal-variance sample further away never raises p.
#[test]
fn power_is_monotone_in_the_shift() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for _ in 0..1000 {
        let n = rng.gen_range(3..40);
        let spread = rng.gen_range(1..30);
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(0..spread) as f64).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.gen_range(0..spread) as f64).collect();
        let base = welch_t_test(&x, &y);
        let dir = if base.t_statistic > 0.0 { -1.0 } else { 1.0 };
        let mut last = base.p_value;
        for k in 1..8 {
            let shifted: Vec<f64> = y.iter().map(|v| v + dir * k as f64).collect();
            let p = welch_t_test(&x, &shifted).p_value;
            assert!(p <= last, "p rose from {last} to {p} at shift {k}");
            last = p;
        }
    }
}
