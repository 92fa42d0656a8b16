use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{Binomial, DiscreteCDF};

use thinkaudit_core::stats::{
    cluster_bootstrap_ci, nearest_rank, paired_difference_ci, BootstrapParams, ClusteredSample,
};

fn binary(hits: usize, n: usize) -> ClusteredSample {
    ClusteredSample::new((0..n).map(|i| (format!("a{i:02}"), (i < hits) as u8 as f64)).collect()).unwrap()
}

/// Independent brute-force bootstrap with a different generator.
fn brute_force(values: &[f64], reps: usize, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let n = values.len();
    let mut means: Vec<f64> = (0..reps)
        .map(|_| (0..n).map(|_| values[rng.gen_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    (
        means[(reps as f64 * 0.025) as usize],
        means[(reps as f64 * 0.975) as usize],
    )
}

#[test]
fn matches_brute_force_bootstrap() {
    for (hits, n) in [(36, 60), (50, 60), (22, 60), (5, 60)] {
        let sample = binary(hits, n);
        let ci = cluster_bootstrap_ci(&sample, &BootstrapParams::default()).unwrap();
        let values: Vec<f64> = (0..n).map(|i| (i < hits) as u8 as f64).collect();
        let (lo, hi) = brute_force(&values, 200_000, 3);
        assert!((ci.lo - lo).abs() <= 0.02, "{hits}/{n}: lo {} vs {lo}", ci.lo);
        assert!((ci.hi - hi).abs() <= 0.02, "{hits}/{n}: hi {} vs {hi}", ci.hi);
    }
}

#[test]
fn binary_bootstrap_tracks_binomial_quantiles() {
    // The resampled mean of a 0/1 sample is Binomial(n, p) / n.
    let n = 60;
    for hits in [12, 36, 50] {
        let p = hits as f64 / n as f64;
        let b = Binomial::new(p, n as u64).unwrap();
        let q = |level: f64| (0..=n as u64).find(|k| b.cdf(*k) >= level).unwrap() as f64 / n as f64;
        let ci = cluster_bootstrap_ci(&binary(hits, n), &BootstrapParams::default()).unwrap();
        assert!((ci.lo - q(0.025)).abs() <= 0.02, "{hits}: lo {} vs {}", ci.lo, q(0.025));
        assert!((ci.hi - q(0.975)).abs() <= 0.02, "{hits}: hi {} vs {}", ci.hi, q(0.975));
    }
}

#[test]
fn nearest_rank_on_known_data() {
    let sorted: Vec<f64> = (1..=2000).map(|i| i as f64).collect();
    assert_eq!(nearest_rank(&sorted, 0.025), 50.0);
    assert_eq!(nearest_rank(&sorted, 0.975), 1950.0);
    assert_eq!(nearest_rank(&[7.0], 0.5), 7.0);
}

#[test]
fn seed_changes_interval_but_not_shape() {
    let s = binary(36, 60);
    let a = cluster_bootstrap_ci(
        &s,
        &BootstrapParams {
            seed: 1,
            ..BootstrapParams::default()
        },
    )
    .unwrap();
    let b = cluster_bootstrap_ci(
        &s,
        &BootstrapParams {
            seed: 2,
            ..BootstrapParams::default()
        },
    )
    .unwrap();
    assert!(a.lo <= 0.6 && 0.6 <= a.hi && b.lo <= 0.6 && 0.6 <= b.hi);
    assert_eq!(
        a,
        cluster_bootstrap_ci(
            &s,
            &BootstrapParams {
                seed: 1,
                ..BootstrapParams::default()
            }
        )
        .unwrap()
    );
}

#[test]
fn paired_difference_of_identical_arms_is_zero() {
    let paired: Vec<_> = (0..30)
        .map(|i| (format!("a{i}"), (i % 2) as f64, (i % 2) as f64))
        .collect();
    let p = paired_difference_ci(&paired, &BootstrapParams::default()).unwrap();
    assert_eq!((p.mean_diff, p.ci.lo, p.ci.hi, p.excludes_zero), (0.0, 0.0, 0.0, false));
}

#[test]
fn rejects_degenerate_inputs() {
    assert!(cluster_bootstrap_ci(&binary(1, 1), &BootstrapParams::default()).is_err());
    assert!(ClusteredSample::new(vec![("a".into(), 1.0), ("a".into(), 0.0)]).is_err());
    assert!(ClusteredSample::new(vec![("a".into(), f64::NAN), ("b".into(), 0.0)]).is_err());
    let bad = BootstrapParams {
        level: 1.5,
        ..BootstrapParams::default()
    };
    assert!(cluster_bootstrap_ci(&binary(3, 6), &bad).is_err());
}
