//! Distributional checks for the sphere sampler and structured initializers.

use gapflow_core::geometry::{
    init_bipolar_circulant, sample_uniform_sphere_stream, ParallelLift,
};
use gapflow_core::metrics::gap_of_lift;
use gapflow_core::theory::{chi_square_critical_99, chi_square_statistic};
use proptest::prelude::*;

#[test]
fn pairwise_inner_products_have_zero_mean() {
    let n = 1_000_000usize;
    let d = 8;
    // one pair per row of two independent matrices
    let x = sample_uniform_sphere_stream(n, d, 20_240_101, 0).unwrap();
    let y = sample_uniform_sphere_stream(n, d, 20_240_101, 1).unwrap();
    let mut sum = 0.0;
    let mut sumsq = 0.0;
    for (rx, ry) in x.as_array().outer_iter().zip(y.as_array().outer_iter()) {
        let ip = rx.dot(&ry);
        sum += ip;
        sumsq += ip * ip;
    }
    let mean = sum / n as f64;
    let var = sumsq / n as f64 - mean * mean;
    let se = (var / n as f64).sqrt();
    assert!(
        mean.abs() <= 3.0 * se,
        "mean {mean:.3e} outside 3 standard errors {:.3e}",
        3.0 * se
    );
}

#[test]
fn d3_inner_products_are_uniform() {
    // for d = 3 the inner-product density is constant 1/2 on [-1, 1]
    let n = 1_000_000usize;
    let x = sample_uniform_sphere_stream(n, 3, 7, 0).unwrap();
    let y = sample_uniform_sphere_stream(n, 3, 7, 1).unwrap();
    let bins = 40usize;
    let mut observed = vec![0.0f64; bins];
    for (rx, ry) in x.as_array().outer_iter().zip(y.as_array().outer_iter()) {
        let ip = rx.dot(&ry).clamp(-1.0, 1.0);
        let b = (((ip + 1.0) / 2.0) * bins as f64) as usize;
        observed[b.min(bins - 1)] += 1.0;
    }
    let expected = vec![n as f64 / bins as f64; bins];
    let stat = chi_square_statistic(&observed, &expected).unwrap();
    let critical = chi_square_critical_99(bins - 1);
    assert!(
        stat <= critical,
        "chi-square {stat:.2} exceeds 1%-level critical {critical:.2}"
    );
}

#[test]
fn lift_gap_lower_bound() {
    // Delta >= 2|gamma| on random lifts; equality when the bases coincide
    for seed in 0..100u64 {
        let base_x = sample_uniform_sphere_stream(6, 4, seed, 0).unwrap();
        let base_y = sample_uniform_sphere_stream(6, 4, seed, 1).unwrap();
        let gamma = -0.9 + 1.8 * (seed as f64 / 99.0);
        let lift = ParallelLift::new(base_x, base_y, gamma).unwrap();
        let report = gap_of_lift(&lift).unwrap();
        assert!(
            report.delta >= 2.0 * gamma.abs() - 1e-12,
            "seed {seed}: delta {} below 2|gamma| {}",
            report.delta,
            2.0 * gamma.abs()
        );
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn bipolar_gram_identity_holds(
        n in 2usize..12,
        frac in 0.05f64..0.999,
    ) {
        let theta0 = frac * std::f64::consts::FRAC_PI_2;
        let (x, y, u) = init_bipolar_circulant(n, theta0).unwrap();
        let (s2, c2) = (theta0.sin().powi(2), theta0.cos().powi(2));
        for i in 0..n {
            for j in 0..n {
                let ip = x.as_array().row(i).dot(&y.as_array().row(j));
                let expect = s2 * u[(i + n - j) % n] - c2;
                prop_assert!((ip - expect).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn sampled_norms_are_exact(
        n in 1usize..8,
        d in 2usize..12,
        seed in 0u64..1000,
    ) {
        let x = sample_uniform_sphere_stream(n, d, seed, 0).unwrap();
        for row in x.as_array().outer_iter() {
            prop_assert!((row.dot(&row).sqrt() - 1.0).abs() <= 1e-12);
        }
    }
}
