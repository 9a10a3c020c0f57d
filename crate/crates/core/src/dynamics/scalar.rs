//! Scalar (gamma, beta) flow on a frozen correlation matrix, and the
//! simplified exponential model of the gap coordinate.

use ndarray::ArrayView2;

use crate::error::{Error, Result};
use crate::loss::{g_align, FrozenAlignment};
use crate::metrics::margin;
use crate::mitigate::TemperatureScheme;

use super::{IntegratorOptions, Sampler, TrajectoryRecord, TrajectorySample};

/// State of the reduced parallel flow: the gap coordinate and the inverse
/// temperature, with the base correlation frozen.
#[derive(Debug, Clone, Copy)]
pub struct ScalarState {
    pub gamma: f64,
    pub beta: f64,
    pub t: f64,
}

/// Completed scalar run.
#[derive(Debug, Clone)]
pub struct ScalarRun {
    pub record: TrajectoryRecord,
    pub state: ScalarState,
    pub diverged_at: Option<f64>,
    /// Margin of the frozen correlation; callers should warn when <= 0.
    pub margin0: f64,
}

/// Flow field `dgamma = -2 beta gamma g`, `dbeta = (beta')^2 (1-gamma^2) g`
/// with `g = g_align(Z, beta (1-gamma^2))` and beta' per the scheme.
/// Under positive margin, dbeta >= 0 and dgamma <= 0.
pub fn scalar_vector_field(
    z: &ArrayView2<f64>,
    gamma: f64,
    beta: f64,
    scheme: &TemperatureScheme,
) -> Result<(f64, f64)> {
    if !(gamma > -1.0 && gamma < 1.0) {
        return Err(Error::invalid("gamma", format!("need |gamma| < 1, got {gamma}")));
    }
    if !(beta > 0.0) {
        return Err(Error::invalid("beta", format!("need beta > 0, got {beta}")));
    }
    let one_m = 1.0 - gamma * gamma;
    let g = g_align(z, beta * one_m)?;
    let bp = scheme.beta_prime_of_beta(beta);
    let lr = match *scheme {
        TemperatureScheme::ScaledLr { eta } => eta,
        _ => 1.0,
    };
    Ok((-2.0 * beta * gamma * g, lr * bp * bp * one_m * g))
}

/// Simplified exponential model of the gap coordinate:
/// `dgamma/dt = -2 beta gamma exp(-beta (1 - gamma^2))`.
pub fn simplified_exp_field(gamma: f64, beta: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::invalid("gamma", format!("need gamma in [0, 1), got {gamma}")));
    }
    if !(beta >= 0.0) {
        return Err(Error::invalid("beta", format!("need beta >= 0, got {beta}")));
    }
    Ok(-2.0 * beta * gamma * (-beta * (1.0 - gamma * gamma)).exp())
}

fn scalar_sample(
    frozen: &FrozenAlignment,
    margin0: f64,
    gamma: f64,
    beta: f64,
    t: f64,
    scheme: &TemperatureScheme,
    horizon: f64,
) -> TrajectorySample {
    let one_m = 1.0 - gamma * gamma;
    let a = beta * one_m;
    let g = frozen.evaluate(a);
    let bp = scheme.beta_prime_of_beta(beta);
    let lr = match *scheme {
        TemperatureScheme::ScaledLr { eta } => eta,
        _ => 1.0,
    };
    let dbeta = if scheme.is_learned() {
        lr * bp * bp * one_m * g
    } else {
        scheme.schedule_beta_dot(t, horizon)
    };
    TrajectorySample {
        t,
        loss: frozen.loss(a),
        gamma,
        beta,
        tau: 1.0 / beta,
        delta: 2.0 * gamma,
        margin: margin0,
        uniformity: f64::NAN,
        dbeta_dt: dbeta,
    }
}

/// RK4 integration of the scalar flow with the correlation matrix frozen.
/// Learned schemes evolve beta through its own equation; schedule-driven
/// schemes pin beta to the schedule each step.
pub fn integrate_scalar(
    z: &ArrayView2<f64>,
    gamma0: f64,
    beta0: f64,
    scheme: &TemperatureScheme,
    options: &IntegratorOptions,
) -> Result<ScalarRun> {
    scheme.validate()?;
    if !(gamma0 >= 0.0 && gamma0 < 1.0) {
        return Err(Error::invalid("gamma0", format!("need gamma0 in [0, 1), got {gamma0}")));
    }
    if !(beta0 > 0.0) {
        return Err(Error::invalid("beta0", "need beta0 > 0"));
    }
    let frozen = FrozenAlignment::new(z)?;
    let margin0 = margin(z)?;
    let horizon = options.schedule.horizon();
    let mut sampler = Sampler::new(options.sampling.clone(), horizon)?;

    let learned = scheme.is_learned();
    let lr = match *scheme {
        TemperatureScheme::ScaledLr { eta } => eta,
        _ => 1.0,
    };
    let beta_at = |t: f64| -> Result<f64> { Ok(scheme.value(0.0, t, horizon)?.beta) };

    let field = |gamma: f64, beta: f64| -> (f64, f64) {
        let one_m = 1.0 - gamma * gamma;
        let g = frozen.evaluate(beta * one_m);
        let bp = scheme.beta_prime_of_beta(beta);
        (-2.0 * beta * gamma * g, lr * bp * bp * one_m * g)
    };

    let mut record = TrajectoryRecord::default();
    let beta_init = if learned { beta0 } else { beta_at(0.0)? };
    record.push(scalar_sample(&frozen, margin0, gamma0, beta_init, 0.0, scheme, horizon))?;

    let mut gamma = gamma0;
    let mut beta = beta_init;
    let mut t_now = 0.0;
    let mut diverged_at = None;

    options.schedule.drive(|t, h, step_index| {
        let (gn, bn) = if learned {
            let (k1g, k1b) = field(gamma, beta);
            let h2 = 0.5 * h;
            let (k2g, k2b) = field(gamma + h2 * k1g, beta + h2 * k1b);
            let (k3g, k3b) = field(gamma + h2 * k2g, beta + h2 * k2b);
            let (k4g, k4b) = field(gamma + h * k3g, beta + h * k3b);
            (
                gamma + h / 6.0 * (k1g + 2.0 * k2g + 2.0 * k3g + k4g),
                beta + h / 6.0 * (k1b + 2.0 * k2b + 2.0 * k3b + k4b),
            )
        } else {
            // beta is an explicit function of time; integrate gamma alone
            let b1 = beta_at(t)?;
            let bmid = beta_at(t + 0.5 * h)?;
            let bend = beta_at(t + h)?;
            let k1 = field(gamma, b1).0;
            let k2 = field(gamma + 0.5 * h * k1, bmid).0;
            let k3 = field(gamma + 0.5 * h * k2, bmid).0;
            let k4 = field(gamma + h * k3, bend).0;
            (gamma + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4), bend)
        };
        if !gn.is_finite() || !bn.is_finite() {
            diverged_at = Some(t_now);
            return Ok(false);
        }
        gamma = gn;
        beta = bn;
        t_now = t + h;
        if sampler.should_sample(step_index, t_now) {
            record.push(scalar_sample(&frozen, margin0, gamma, beta, t_now, scheme, horizon))?;
        }
        Ok(true)
    })?;

    if diverged_at.is_none() && record.last().map(|s| s.t < t_now).unwrap_or(true) {
        record.push(scalar_sample(&frozen, margin0, gamma, beta, t_now, scheme, horizon))?;
    }

    Ok(ScalarRun {
        record,
        state: ScalarState { gamma, beta, t: t_now },
        diverged_at,
        margin0,
    })
}
