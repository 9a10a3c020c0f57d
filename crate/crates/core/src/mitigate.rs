//! Temperature-control schemes and modality-swapping transforms applied
//! inside the simulator loop.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{renormalize, stream_rng, FeatureMatrix, SWAP_STREAM_BASE};

/// Smallest temperature the learned schemes may reach; the learned inverse
/// temperature is capped at 1/TAU_MIN, mirroring the usual clamp.
pub const TAU_MIN: f64 = 0.01;

/// How the inverse temperature `beta` is produced during a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TemperatureScheme {
    /// `beta(nu) = exp(nu)`, learned.
    LearnedExp,
    /// `beta(nu) = exp(nu / s)` with s >= 1, learned.
    LearnedScaledExp { s: f64 },
    /// `beta(nu) = log(1 + exp(nu))`, learned.
    LearnedSoftplus,
    /// Frozen temperature `tau`.
    Fixed { tau: f64 },
    /// Temperature moves linearly from tau0 to tau1 over the run horizon.
    LinearSchedule { tau0: f64, tau1: f64 },
    /// As LearnedExp with the nu update scaled by eta.
    ScaledLr { eta: f64 },
}

/// One evaluation of a temperature scheme: the inverse temperature, its
/// derivative with respect to nu, and the learning-rate multiplier on nu.
#[derive(Debug, Clone, Copy)]
pub struct SchemeValue {
    pub beta: f64,
    pub beta_prime: f64,
    pub lr_scale: f64,
}

impl TemperatureScheme {
    pub fn validate(&self) -> Result<()> {
        match *self {
            TemperatureScheme::LearnedScaledExp { s } if !(s >= 1.0) => {
                Err(Error::invalid("s", format!("need s >= 1, got {s}")))
            }
            TemperatureScheme::Fixed { tau } if !(tau > 0.0) => {
                Err(Error::invalid("tau", format!("need tau > 0, got {tau}")))
            }
            TemperatureScheme::LinearSchedule { tau0, tau1 } if !(tau0 > 0.0 && tau1 > 0.0) => {
                Err(Error::invalid("tau0", format!("need tau0, tau1 > 0, got {tau0}, {tau1}")))
            }
            TemperatureScheme::ScaledLr { eta } if !(eta > 0.0) => {
                Err(Error::invalid("eta", format!("need eta > 0, got {eta}")))
            }
            _ => Ok(()),
        }
    }

    /// Whether nu is a learned parameter under this scheme.
    pub fn is_learned(&self) -> bool {
        !matches!(
            self,
            TemperatureScheme::Fixed { .. } | TemperatureScheme::LinearSchedule { .. }
        )
    }

    /// Evaluate the scheme at parameter `nu` and time `t` of a run of length
    /// `horizon`. Learned betas are capped at `1/TAU_MIN` with a zero
    /// derivative at the cap.
    pub fn value(&self, nu: f64, t: f64, horizon: f64) -> Result<SchemeValue> {
        self.validate()?;
        let cap = 1.0 / TAU_MIN;
        let capped = |beta: f64, beta_prime: f64, lr_scale: f64| {
            if beta >= cap {
                SchemeValue { beta: cap, beta_prime: 0.0, lr_scale }
            } else {
                SchemeValue { beta, beta_prime, lr_scale }
            }
        };
        Ok(match *self {
            TemperatureScheme::LearnedExp => {
                let b = nu.exp();
                capped(b, b, 1.0)
            }
            TemperatureScheme::LearnedScaledExp { s } => {
                let b = (nu / s).exp();
                capped(b, b / s, 1.0)
            }
            TemperatureScheme::LearnedSoftplus => {
                // log(1 + e^nu) computed stably
                let b = if nu > 30.0 { nu } else { nu.exp().ln_1p() };
                let sig = 1.0 / (1.0 + (-nu).exp());
                capped(b, sig, 1.0)
            }
            TemperatureScheme::Fixed { tau } => SchemeValue {
                beta: 1.0 / tau,
                beta_prime: 0.0,
                lr_scale: 0.0,
            },
            TemperatureScheme::LinearSchedule { tau0, tau1 } => {
                if horizon <= 0.0 {
                    return Err(Error::invalid(
                        "horizon",
                        "linear schedule needs a positive horizon",
                    ));
                }
                let tau = tau0 + (t / horizon).clamp(0.0, 1.0) * (tau1 - tau0);
                SchemeValue { beta: 1.0 / tau, beta_prime: 0.0, lr_scale: 0.0 }
            }
            TemperatureScheme::ScaledLr { eta } => {
                let b = nu.exp();
                capped(b, b, eta)
            }
        })
    }

    /// nu giving the requested initial temperature; zero for frozen schemes.
    pub fn initial_nu(&self, tau_init: f64) -> Result<f64> {
        if !(tau_init > 0.0) {
            return Err(Error::invalid("tau_init", "need tau_init > 0"));
        }
        let beta = 1.0 / tau_init;
        Ok(match *self {
            TemperatureScheme::LearnedExp | TemperatureScheme::ScaledLr { .. } => beta.ln(),
            TemperatureScheme::LearnedScaledExp { s } => s * beta.ln(),
            TemperatureScheme::LearnedSoftplus => (beta.exp() - 1.0).ln(),
            TemperatureScheme::Fixed { .. } | TemperatureScheme::LinearSchedule { .. } => 0.0,
        })
    }

    /// beta'(nu) expressed through beta itself; used by flows whose state
    /// carries beta rather than nu.
    pub fn beta_prime_of_beta(&self, beta: f64) -> f64 {
        match *self {
            TemperatureScheme::LearnedExp | TemperatureScheme::ScaledLr { .. } => beta,
            TemperatureScheme::LearnedScaledExp { s } => beta / s,
            TemperatureScheme::LearnedSoftplus => 1.0 - (-beta).exp(),
            TemperatureScheme::Fixed { .. } | TemperatureScheme::LinearSchedule { .. } => 0.0,
        }
    }

    /// Time derivative of beta for schedule-driven schemes (zero elsewhere;
    /// learned schemes evolve through nu instead).
    pub fn schedule_beta_dot(&self, t: f64, horizon: f64) -> f64 {
        match *self {
            TemperatureScheme::LinearSchedule { tau0, tau1 } if horizon > 0.0 && t <= horizon => {
                let tau = tau0 + (t / horizon) * (tau1 - tau0);
                -(tau1 - tau0) / horizon / (tau * tau)
            }
            _ => 0.0,
        }
    }
}

/// Modality swapping applied on a random fraction of integrator steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SwapScheme {
    None,
    /// Exchange each matrix entry independently with probability 1/2.
    Hard { p: f64 },
    /// Convexly mix each entry pair with an independent uniform weight.
    Soft { p: f64 },
}

impl SwapScheme {
    pub fn validate(&self) -> Result<()> {
        match *self {
            SwapScheme::None => Ok(()),
            SwapScheme::Hard { p } | SwapScheme::Soft { p } => {
                if (0.0..=1.0).contains(&p) {
                    Ok(())
                } else {
                    Err(Error::invalid("p", format!("need p in [0, 1], got {p}")))
                }
            }
        }
    }

    pub fn step_fraction(&self) -> f64 {
        match *self {
            SwapScheme::None => 0.0,
            SwapScheme::Hard { p } | SwapScheme::Soft { p } => p,
        }
    }
}

/// Per-step materialized swap: the mixing weights lambda (for hard swapping
/// a 0/1 mask) are treated as constants by the flow.
#[derive(Debug, Clone)]
pub struct SwapDraw {
    /// X' = lambda .* X + (1 - lambda) .* Y and symmetrically for Y'.
    pub lambda: Array2<f64>,
}

impl SwapDraw {
    pub fn hard(shape: (usize, usize), seed: u64, stream: u64) -> Self {
        let mut rng = stream_rng(seed, SWAP_STREAM_BASE + stream);
        let lambda =
            Array2::from_shape_fn(shape, |_| if rng.gen::<f64>() < 0.5 { 0.0 } else { 1.0 });
        SwapDraw { lambda }
    }

    pub fn soft(shape: (usize, usize), seed: u64, stream: u64) -> Self {
        let mut rng = stream_rng(seed, SWAP_STREAM_BASE + stream);
        let lambda = Array2::from_shape_fn(shape, |_| rng.gen::<f64>());
        SwapDraw { lambda }
    }

    /// Raw mixed matrices, before renormalization.
    pub fn apply_raw(&self, x: &Array2<f64>, y: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
        let lx = &self.lambda * x + (1.0 - &self.lambda) * y;
        let ly = &self.lambda * y + (1.0 - &self.lambda) * x;
        (lx, ly)
    }
}

fn swap_with(
    x: &FeatureMatrix,
    y: &FeatureMatrix,
    draw: &SwapDraw,
) -> Result<(FeatureMatrix, FeatureMatrix)> {
    let (xs, ys) = draw.apply_raw(x.as_array(), y.as_array());
    Ok((renormalize(&xs)?, renormalize(&ys)?))
}

/// Entrywise exchange with probability 1/2, rows renormalized afterward.
/// Identity when `active` is false. Deterministic per seed.
pub fn hard_swap(
    x: &FeatureMatrix,
    y: &FeatureMatrix,
    active: bool,
    seed: u64,
) -> Result<(FeatureMatrix, FeatureMatrix)> {
    check_same_shape(x, y)?;
    if !active {
        return Ok((x.clone(), y.clone()));
    }
    swap_with(x, y, &SwapDraw::hard((x.n(), x.d()), seed, 0))
}

/// Entrywise convex mixing with uniform weights, rows renormalized
/// afterward. Identity when `active` is false. Deterministic per seed.
pub fn soft_swap(
    x: &FeatureMatrix,
    y: &FeatureMatrix,
    active: bool,
    seed: u64,
) -> Result<(FeatureMatrix, FeatureMatrix)> {
    check_same_shape(x, y)?;
    if !active {
        return Ok((x.clone(), y.clone()));
    }
    swap_with(x, y, &SwapDraw::soft((x.n(), x.d()), seed, 0))
}

/// Soft swap with explicit mixing weights; test hook for degenerate lambdas.
pub fn soft_swap_with_lambda(
    x: &FeatureMatrix,
    y: &FeatureMatrix,
    lambda: &Array2<f64>,
) -> Result<(FeatureMatrix, FeatureMatrix)> {
    check_same_shape(x, y)?;
    if lambda.dim() != x.as_array().dim() {
        return Err(Error::invalid("lambda", "shape mismatch"));
    }
    swap_with(x, y, &SwapDraw { lambda: lambda.clone() })
}

fn check_same_shape(x: &FeatureMatrix, y: &FeatureMatrix) -> Result<()> {
    if x.n() != y.n() || x.d() != y.d() {
        return Err(Error::invalid("y", "shape mismatch with x"));
    }
    Ok(())
}

/// Independent Bernoulli(p) activity flags, one per integrator step.
/// Deterministic per seed.
pub fn swap_step_mask(p: f64, total_steps: usize, seed: u64) -> Result<Vec<bool>> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::invalid("p", format!("need p in [0, 1], got {p}")));
    }
    let mut rng = stream_rng(seed, SWAP_STREAM_BASE);
    Ok((0..total_steps).map(|_| rng.gen::<f64>() < p).collect())
}
