//! Closed-form theoretical quantities and the Monte Carlo oracles that
//! certify them: the coupling conservation curve, the slow gap-closure lower
//! bound and its constants, the initial-repulsion bound built from modified
//! Bessel functions, the sphere inner-product density, and temperature
//! schedule decay rates.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry;
use crate::loss;

/// Maximum supported argument for the Bessel series.
pub const BESSEL_MAX_ARG: f64 = 200.0;

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

/// Natural log of the gamma function for x > 0 (Lanczos approximation).
pub fn log_gamma(x: f64) -> Result<f64> {
    if !(x > 0.0) {
        return Err(Error::invalid("x", format!("log_gamma needs x > 0, got {x}")));
    }
    if x < 0.5 {
        // reflection: Gamma(x) Gamma(1-x) = pi / sin(pi x)
        let refl = (std::f64::consts::PI / (std::f64::consts::PI * x).sin()).ln();
        return Ok(refl - log_gamma(1.0 - x)?);
    }
    let xm = x - 1.0;
    let mut acc = LANCZOS[0];
    for (i, &c) in LANCZOS.iter().enumerate().skip(1) {
        acc += c / (xm + i as f64);
    }
    let t = xm + LANCZOS_G + 0.5;
    Ok(0.5 * (2.0 * std::f64::consts::PI).ln() + (xm + 0.5) * t.ln() - t + acc.ln())
}

/// Modified Bessel function of the first kind, real order rho >= -1/2, by the
/// ascending series `sum_k (a/2)^{2k+rho} / (k! Gamma(k+rho+1))`, truncated
/// when a term drops below 1e-17 of the partial sum.
pub fn bessel_i(rho: f64, a: f64) -> Result<f64> {
    if !(a > 0.0 && a <= BESSEL_MAX_ARG) {
        return Err(Error::invalid(
            "a",
            format!("bessel_i needs 0 < a <= {BESSEL_MAX_ARG}, got {a}"),
        ));
    }
    if !(rho >= -0.5) {
        return Err(Error::invalid("rho", format!("bessel_i needs rho >= -1/2, got {rho}")));
    }
    let half = 0.5 * a;
    let half2 = half * half;
    let mut term = (rho * half.ln() - log_gamma(rho + 1.0)?).exp();
    let mut sum = term;
    for k in 0..4000u32 {
        let kf = k as f64;
        term *= half2 / ((kf + 1.0) * (kf + rho + 1.0));
        sum += term;
        if term < 1e-17 * sum {
            return Ok(sum);
        }
    }
    Err(Error::Numeric(format!("bessel series did not converge for rho={rho}, a={a}")))
}

/// Density of the inner product of two independent uniform points on
/// S^{d-1}: `f(z) = Gamma(d/2) / (sqrt(pi) Gamma((d-1)/2)) (1-z^2)^{(d-3)/2}`.
pub fn sphere_ip_density(z: f64, d: usize) -> Result<f64> {
    if d < 2 {
        return Err(Error::invalid("d", format!("density needs d >= 2, got {d}")));
    }
    if !(-1.0..=1.0).contains(&z) {
        return Err(Error::invalid("z", format!("expected |z| <= 1, got {z}")));
    }
    let c = (log_gamma(d as f64 / 2.0)? - log_gamma((d as f64 - 1.0) / 2.0)?).exp()
        / std::f64::consts::PI.sqrt();
    Ok(c * (1.0 - z * z).powf((d as f64 - 3.0) / 2.0))
}

/// Composite Simpson quadrature on [a, b] with `intervals` subintervals
/// (rounded up to even).
pub fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, intervals: usize) -> f64 {
    let n = if intervals % 2 == 0 { intervals } else { intervals + 1 };
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for k in 1..n {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + h * k as f64);
    }
    acc * h / 3.0
}

/// Integral of the inner-product density over [-1, 1], evaluated through the
/// substitution z = sin(u) so the d = 2 endpoint singularity disappears.
pub fn sphere_ip_density_normalization(d: usize) -> Result<f64> {
    if d < 2 {
        return Err(Error::invalid("d", format!("density needs d >= 2, got {d}")));
    }
    let c = (log_gamma(d as f64 / 2.0)? - log_gamma((d as f64 - 1.0) / 2.0)?).exp()
        / std::f64::consts::PI.sqrt();
    let p = d as f64 - 2.0;
    Ok(simpson(
        |u| c * u.cos().powf(p),
        -std::f64::consts::FRAC_PI_2,
        std::f64::consts::FRAC_PI_2,
        20_000,
    ))
}

/// `xi_2 = E[exp(a z)] = Gamma(d/2) (2/a)^rho I_rho(a)` with rho = (d-2)/2,
/// assembled in log space.
pub fn expectation_exp(a: f64, d: usize) -> Result<f64> {
    if d < 2 {
        return Err(Error::invalid("d", format!("expectation needs d >= 2, got {d}")));
    }
    let rho = (d as f64 - 2.0) / 2.0;
    let li = bessel_i(rho, a)?.ln();
    Ok((log_gamma(d as f64 / 2.0)? + rho * (2.0 / a).ln() + li).exp())
}

/// `xi_1 = E[z exp(a z)] = Gamma(d/2) (2/a)^rho (I_{rho-1}(a) - (2 rho/a) I_rho(a))`.
///
/// The bracket equals `I_{rho+1}(a)` by the three-term recurrence; that form
/// is used here because the direct difference cancels catastrophically for
/// small `a`.
pub fn expectation_z_exp(a: f64, d: usize) -> Result<f64> {
    if d < 2 {
        return Err(Error::invalid("d", format!("expectation needs d >= 2, got {d}")));
    }
    let rho = (d as f64 - 2.0) / 2.0;
    let li = bessel_i(rho + 1.0, a)?.ln();
    Ok((log_gamma(d as f64 / 2.0)? + rho * (2.0 / a).ln() + li).exp())
}

/// Evaluated initial-repulsion bound and its ingredients.
#[derive(Debug, Clone, Serialize)]
pub struct Thm2Bound {
    pub n: usize,
    pub d: usize,
    pub beta0: f64,
    pub gamma0: f64,
    pub delta: f64,
    pub a: f64,
    pub rho: f64,
    pub epsilon: f64,
    pub xi1: f64,
    pub xi2: f64,
    /// Finite-n high-probability lower bound on dDelta/dt at t = 0.
    pub bound: f64,
    /// True when the finite-n bound is negative (trivially satisfied).
    pub vacuous: bool,
    /// n -> infinity limit `4 beta0 gamma0 I_{rho+1}(a) / I_rho(a)`.
    pub asymptotic: f64,
}

/// Assemble the finite-n initial-repulsion bound
/// `4 b0 g0 ((xi1 - 2 e^a eps) / (xi2 + (e^a - e^-a) eps) - 2 eps)` with
/// `eps = sqrt(log((4n+1)/delta) / (2n))`, plus its asymptotic limit.
pub fn thm2_bound(n: usize, d: usize, beta0: f64, gamma0: f64, delta: f64) -> Result<Thm2Bound> {
    if n == 0 {
        return Err(Error::invalid("n", "need n >= 1"));
    }
    if !(beta0 > 0.0) {
        return Err(Error::invalid("beta0", "need beta0 > 0"));
    }
    if !(gamma0 > 0.0 && gamma0 < 1.0) {
        return Err(Error::invalid("gamma0", "need gamma0 in (0, 1)"));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid("delta", "need delta in (0, 1)"));
    }
    let a = beta0 * (1.0 - gamma0 * gamma0);
    let rho = (d as f64 - 2.0) / 2.0;
    let epsilon = (((4 * n + 1) as f64 / delta).ln() / (2.0 * n as f64)).sqrt();
    let xi1 = expectation_z_exp(a, d)?;
    let xi2 = expectation_exp(a, d)?;
    let ea = a.exp();
    let bound = 4.0 * beta0 * gamma0 * ((xi1 - 2.0 * ea * epsilon) / (xi2 + (ea - (-a).exp()) * epsilon) - 2.0 * epsilon);
    let asymptotic = 4.0 * beta0 * gamma0 * (bessel_i(rho + 1.0, a)? / bessel_i(rho, a)?);
    Ok(Thm2Bound {
        n,
        d,
        beta0,
        gamma0,
        delta,
        a,
        rho,
        epsilon,
        xi1,
        xi2,
        bound,
        vacuous: bound < 0.0,
        asymptotic,
    })
}

/// Conservation curve of the coupled (gamma, beta) flow under the
/// exponential parameterization:
/// `beta = beta0 sqrt(gamma0/gamma) exp((gamma^2 - gamma0^2)/4)`.
pub fn lemma1_beta_of_gamma(beta0: f64, gamma0: f64, gamma: f64) -> Result<f64> {
    if !(beta0 > 0.0) {
        return Err(Error::invalid("beta0", "need beta0 > 0"));
    }
    if !(gamma0 > 0.0 && gamma0 < 1.0) {
        return Err(Error::invalid("gamma0", "need gamma0 in (0, 1)"));
    }
    if !(gamma > 0.0 && gamma <= gamma0) {
        return Err(Error::invalid(
            "gamma",
            format!("need 0 < gamma <= gamma0, got {gamma}"),
        ));
    }
    Ok(beta0 * (gamma0 / gamma).sqrt() * ((gamma * gamma - gamma0 * gamma0) / 4.0).exp())
}

/// Constants of the slow gap-closure lower bound.
#[derive(Debug, Clone, Serialize)]
pub struct Thm1Constants {
    pub n: usize,
    pub alpha_bar: f64,
    pub beta0: f64,
    pub gamma0: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
}

impl Thm1Constants {
    /// `c1 = 2 a (n-1) b0 sqrt(g0)`, `c2 = a b0 sqrt(g0) (1-g0^2) e^{-g0^2/4}`,
    /// `c3 = 55 c1 / 2`, `c4 = c2 - 1/10`; requires c4 > 0.
    pub fn new(n: usize, alpha_bar: f64, beta0: f64, gamma0: f64) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidConstants("need n >= 2".to_string()));
        }
        if !(alpha_bar > 0.0 && beta0 > 0.0 && gamma0 > 0.0 && gamma0 < 1.0) {
            return Err(Error::InvalidConstants(
                "need alpha_bar > 0, beta0 > 0, gamma0 in (0, 1)".to_string(),
            ));
        }
        let c1 = 2.0 * alpha_bar * (n as f64 - 1.0) * beta0 * gamma0.sqrt();
        let c2 = alpha_bar
            * beta0
            * gamma0.sqrt()
            * (1.0 - gamma0 * gamma0)
            * (-gamma0 * gamma0 / 4.0).exp();
        let c3 = 55.0 * c1 / 2.0;
        let c4 = c2 - 0.1;
        if !(c4 > 0.0) {
            return Err(Error::InvalidConstants(format!(
                "c4 = c2 - 1/10 = {c4} must be positive"
            )));
        }
        Ok(Thm1Constants { n, alpha_bar, beta0, gamma0, c1, c2, c3, c4 })
    }

    /// Lower bound `c2 / log(c3 t + exp(c4 / sqrt(gamma0)))^2` on gamma(t).
    pub fn lower_bound(&self, t: f64) -> f64 {
        let l = (self.c3 * t + (self.c4 / self.gamma0.sqrt()).exp()).ln();
        self.c2 / (l * l)
    }
}

/// Gap decay rate of the simplified exponential model under a temperature
/// schedule: `b0 e^{-b0}` when constant, and the linear-schedule average
/// `[(b0+1)e^{-b0} - (b1+1)e^{-b1}] / (b1 - b0)` otherwise. The b1 -> b0
/// limit reduces to the constant rate.
pub fn schedule_decay_rate(beta0: f64, beta1: Option<f64>) -> Result<f64> {
    if !(beta0 > 0.0) {
        return Err(Error::invalid("beta0", "need beta0 > 0"));
    }
    match beta1 {
        None => Ok(beta0 * (-beta0).exp()),
        Some(b1) if b1 == beta0 => Ok(beta0 * (-beta0).exp()),
        Some(b1) => {
            if !(b1 > 0.0) {
                return Err(Error::invalid("beta1", "need beta1 > 0"));
            }
            Ok(((beta0 + 1.0) * (-beta0).exp() - (b1 + 1.0) * (-b1).exp()) / (b1 - beta0))
        }
    }
}

/// Result of the randomized initial-repulsion experiment.
#[derive(Debug, Clone, Serialize)]
pub struct Thm2McReport {
    pub bound: Thm2Bound,
    pub trials: usize,
    pub seed: u64,
    pub fraction_satisfying_bound: f64,
    pub fraction_positive: f64,
    pub trial_mean: f64,
    pub trial_std: f64,
    pub standard_error: f64,
    /// (trial_mean - asymptotic) / standard_error.
    pub mean_deviation_in_se: f64,
    /// (trial_mean - asymptotic) / asymptotic.
    pub mean_relative_deviation: f64,
}

/// Draw `trials` random configurations (rows uniform on the sphere), form
/// the parallel lift at gamma0, and record the initial gap velocity
/// `dDelta/dt|_0 = -4 b0 g0 g_align(Z, b0 (1 - g0^2))` for each.
pub fn mc_thm2_experiment(
    n: usize,
    d: usize,
    beta0: f64,
    gamma0: f64,
    delta: f64,
    trials: usize,
    seed: u64,
) -> Result<Thm2McReport> {
    if trials < 2 {
        return Err(Error::invalid("trials", "need at least 2 trials"));
    }
    let bound = thm2_bound(n, d, beta0, gamma0, delta)?;
    let a = bound.a;
    let values: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|t| -> Result<f64> {
            let x = geometry::sample_uniform_sphere_stream(n, d, seed, 2 * t as u64)?;
            let y = geometry::sample_uniform_sphere_stream(n, d, seed, 2 * t as u64 + 1)?;
            let z = x.as_array().dot(&y.as_array().t());
            Ok(-4.0 * beta0 * gamma0 * loss::g_align(&z.view(), a)?)
        })
        .collect::<Result<Vec<f64>>>()?;

    let tf = trials as f64;
    let mean = values.iter().sum::<f64>() / tf;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (tf - 1.0);
    let std = var.sqrt();
    let se = std / tf.sqrt();
    let satisfying = values.iter().filter(|&&v| v >= bound.bound).count() as f64 / tf;
    let positive = values.iter().filter(|&&v| v > 0.0).count() as f64 / tf;
    Ok(Thm2McReport {
        trials,
        seed,
        fraction_satisfying_bound: satisfying,
        fraction_positive: positive,
        trial_mean: mean,
        trial_std: std,
        standard_error: se,
        mean_deviation_in_se: (mean - bound.asymptotic) / se,
        mean_relative_deviation: (mean - bound.asymptotic) / bound.asymptotic,
        bound,
    })
}

/// Pearson chi-square statistic for observed counts against expected counts.
pub fn chi_square_statistic(observed: &[f64], expected: &[f64]) -> Result<f64> {
    if observed.len() != expected.len() || observed.is_empty() {
        return Err(Error::invalid("observed", "length mismatch or empty"));
    }
    let mut stat = 0.0;
    for (&o, &e) in observed.iter().zip(expected) {
        if e <= 0.0 {
            return Err(Error::invalid("expected", "nonpositive expected count"));
        }
        stat += (o - e) * (o - e) / e;
    }
    Ok(stat)
}

/// 99th percentile of the chi-square distribution with `df` degrees of
/// freedom (Wilson-Hilferty approximation; adequate for goodness-of-fit
/// gates at the 1% level).
pub fn chi_square_critical_99(df: usize) -> f64 {
    let k = df as f64;
    let z = 2.326_347_874_040_840_8; // standard normal 99th percentile
    let h = 2.0 / (9.0 * k);
    k * (1.0 - h + z * h.sqrt()).powi(3)
}

/// Margin of the simplex gram: `n / (n-1)`, the default tight margin for
/// frozen-correlation experiments.
pub fn etf_margin(n: usize) -> f64 {
    n as f64 / (n as f64 - 1.0)
}
