//! Monte Carlo and quadrature oracles certifying the closed forms: Bessel
//! recurrences and half-order identities, the inner-product density, the
//! moment formulas, and the end-to-end gap lower bound on the scalar flow.

use gapflow_core::dynamics::{integrate_scalar, IntegratorOptions, SamplingSpec, StepSchedule};
use gapflow_core::geometry::stream_rng;
use gapflow_core::mitigate::TemperatureScheme;
use gapflow_core::theory::{
    bessel_i, chi_square_critical_99, chi_square_statistic, etf_margin, expectation_exp,
    expectation_z_exp, lemma1_beta_of_gamma, simpson, sphere_ip_density,
    sphere_ip_density_normalization, Thm1Constants,
};
use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;

#[test]
fn bessel_recurrence_on_declared_grid() {
    for &rho in &[0.5, 1.0, 2.5, 7.0] {
        for &a in &[0.1, 1.0, 10.0, 50.0] {
            let lo = bessel_i(rho - 1.0, a).unwrap();
            let mid = bessel_i(rho, a).unwrap();
            let hi = bessel_i(rho + 1.0, a).unwrap();
            let residual = (lo - hi - 2.0 * rho / a * mid) / lo;
            assert!(
                residual.abs() <= 1e-10,
                "rho={rho} a={a}: relative residual {residual:.3e}"
            );
        }
    }
}

#[test]
fn half_order_closed_forms() {
    for &a in &[0.1, 0.75, 1.0, 5.0, 20.0, 50.0] {
        let sinh_form = (2.0 / (std::f64::consts::PI * a)).sqrt() * a.sinh();
        let v = bessel_i(0.5, a).unwrap();
        assert!(
            ((v - sinh_form) / sinh_form).abs() <= 1e-10,
            "I_1/2({a}) = {v} vs {sinh_form}"
        );
    }
}

#[test]
fn density_normalizes_on_declared_dimensions() {
    for &d in &[2usize, 3, 4, 8, 32] {
        let total = sphere_ip_density_normalization(d).unwrap();
        assert!(
            (total - 1.0).abs() <= 1e-8,
            "d={d}: density integrates to {total}"
        );
    }
}

/// Direct sampler of the inner-product distribution: first coordinate of a
/// uniform point on S^{d-1} (equal in law to the inner product of two
/// independent uniform points).
fn sample_ip(d: usize, count: usize, seed: u64) -> Vec<f64> {
    let mut rng = stream_rng(seed, 0);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let mut norm2: f64 = 0.0;
        let mut first = 0.0;
        for k in 0..d {
            let g: f64 = rng.sample(StandardNormal);
            if k == 0 {
                first = g;
            }
            norm2 += g * g;
        }
        out.push(first / norm2.sqrt());
    }
    out
}

#[test]
fn moment_formulas_match_monte_carlo() {
    let count = 1_000_000usize;
    for &d in &[3usize, 8, 32] {
        let zs = sample_ip(d, count, 100 + d as u64);
        for &a in &[0.5, 2.0, 8.0] {
            let xi2 = expectation_exp(a, d).unwrap();
            let xi1 = expectation_z_exp(a, d).unwrap();
            let (mut s1, mut s2, mut q1, mut q2) = (0.0, 0.0, 0.0, 0.0);
            for &z in &zs {
                let e = (a * z).exp();
                s2 += e;
                q2 += e * e;
                s1 += z * e;
                q1 += z * e * z * e;
            }
            let n = count as f64;
            let mean2 = s2 / n;
            let se2 = ((q2 / n - mean2 * mean2) / n).sqrt();
            let mean1 = s1 / n;
            let se1 = ((q1 / n - mean1 * mean1) / n).sqrt();
            assert!(
                (mean2 - xi2).abs() <= 3.0 * se2,
                "d={d} a={a}: E[e^az] {mean2} vs {xi2} (3se {:.2e})",
                3.0 * se2
            );
            assert!(
                (mean1 - xi1).abs() <= 3.0 * se1,
                "d={d} a={a}: E[z e^az] {mean1} vs {xi1} (3se {:.2e})",
                3.0 * se1
            );
        }
    }
}

#[test]
fn density_matches_histogram_for_d8() {
    let count = 1_000_000usize;
    let d = 8usize;
    let zs = sample_ip(d, count, 55);
    let bins = 40usize;
    let mut observed = vec![0.0f64; bins];
    for &z in &zs {
        let b = (((z + 1.0) / 2.0) * bins as f64) as usize;
        observed[b.min(bins - 1)] += 1.0;
    }
    let mut expected = vec![0.0f64; bins];
    for (b, e) in expected.iter_mut().enumerate() {
        let lo = -1.0 + 2.0 * b as f64 / bins as f64;
        let hi = lo + 2.0 / bins as f64;
        *e = count as f64 * simpson(|z| sphere_ip_density(z, d).unwrap(), lo, hi, 64);
    }
    let stat = chi_square_statistic(&observed, &expected).unwrap();
    let critical = chi_square_critical_99(bins - 1);
    assert!(
        stat <= critical,
        "chi-square {stat:.2} exceeds 1%-level critical {critical:.2}"
    );
}

fn etf_gram(n: usize) -> Array2<f64> {
    let mut z = Array2::from_elem((n, n), -1.0 / (n as f64 - 1.0));
    for i in 0..n {
        z[[i, i]] = 1.0;
    }
    z
}

#[test]
fn gap_lower_bound_holds_along_scalar_flow() {
    // frozen simplex correlation, threshold initial scale; short-horizon
    // version of the end-to-end bound check
    let n = 64usize;
    let gamma0 = 0.5;
    let abar = etf_margin(n);
    let beta0 = (4.0 * (n as f64 - 1.0)).ln() / (abar * (1.0 - gamma0 * gamma0));
    let consts = Thm1Constants::new(n, abar, beta0, gamma0).unwrap();
    let z = etf_gram(n);
    let options = IntegratorOptions::new(
        StepSchedule::piecewise(vec![(10.0, 1e-3), (100.0, 1e-2), (1000.0, 1e-1)]).unwrap(),
        SamplingSpec::LogSpaced { per_decade: 10, t_min: 1e-2 },
    );
    let run = integrate_scalar(&z.view(), gamma0, beta0, &TemperatureScheme::LearnedExp, &options)
        .unwrap();
    assert!(run.diverged_at.is_none());
    for s in &run.record.samples {
        let lb = consts.lower_bound(s.t);
        assert!(
            s.gamma >= lb,
            "gamma {} fell below bound {} at t={}",
            s.gamma,
            lb,
            s.t
        );
        let expect = lemma1_beta_of_gamma(beta0, gamma0, s.gamma).unwrap();
        assert!(
            (s.beta / expect - 1.0).abs() <= 1e-3,
            "conservation drift at t={}",
            s.t
        );
    }
}
