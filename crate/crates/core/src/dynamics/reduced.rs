//! Two-dimensional reduced-order systems: the circulant cross-section model,
//! its simplex specialization (exact sigmoid and exponential-bound forms),
//! and the gap-coordinate form with constant off-diagonal correlation.
//!
//! In these systems `scale` is the similarity multiplier (the inverse
//! temperature of the full flow).

use ndarray::Array1;

use crate::error::{Error, Result};

use super::{IntegratorOptions, Sampler, TrajectoryRecord, TrajectorySample};

/// Which reduced system to integrate.
#[derive(Debug, Clone, PartialEq)]
pub enum ReducedVariant {
    /// Polar angle theta with a circulant cross-section gram whose first row
    /// is `u`; the cross-section softmax is sum-normalized.
    ThetaCirculant { u: Array1<f64> },
    /// Simplex cross-section: dtheta = (s/2) sin(2 theta) sigmoid(-q),
    /// dscale = n s^2 sin^2(theta) sigmoid(-q), q = n s sin^2(theta)/(n-1).
    ThetaEtf { n: usize },
    /// The bound form of the simplex system with sigmoid(-q) replaced by
    /// exp(-q) and the sine factors replaced by their extreme values:
    /// dtheta = (s/2) exp(-q), dscale = (n s^2/4) exp(-q). Conserves
    /// `theta - (2/n) log(scale/scale0)`.
    ThetaEtfBound { n: usize },
    /// Gap-coordinate form: off-diagonal correlation rho,
    /// r = s (1-g^2)(1-rho) - log(n-1),
    /// dgamma = -((1-rho)/n) s g (1-g^2) sigmoid(-r),
    /// dscale = (1-rho) s^2 (1-g^2) sigmoid(-r).
    GammaRho { n: usize, rho: f64 },
}

impl ReducedVariant {
    fn validate(&self) -> Result<()> {
        match self {
            ReducedVariant::ThetaCirculant { u } => {
                if u.len() < 2 {
                    return Err(Error::invalid("u", "need at least two cross-section points"));
                }
                if (u[0] - 1.0).abs() > 1e-12 {
                    return Err(Error::invalid("u", "first circulant entry must be 1"));
                }
                Ok(())
            }
            ReducedVariant::ThetaEtf { n } | ReducedVariant::ThetaEtfBound { n } => {
                if *n < 2 {
                    Err(Error::invalid("n", "need n >= 2"))
                } else {
                    Ok(())
                }
            }
            ReducedVariant::GammaRho { n, rho } => {
                if *n < 2 {
                    Err(Error::invalid("n", "need n >= 2"))
                } else if !(*rho >= -1.0 && *rho <= 1.0) {
                    Err(Error::invalid("rho", "need rho in [-1, 1]"))
                } else {
                    Ok(())
                }
            }
        }
    }

    fn is_theta(&self) -> bool {
        !matches!(self, ReducedVariant::GammaRho { .. })
    }
}

/// Reduced state: the geometric coordinate (theta or gamma) and the scale.
#[derive(Debug, Clone, Copy)]
pub struct ReducedState {
    pub coord: f64,
    pub scale: f64,
    pub t: f64,
}

/// Completed reduced run.
#[derive(Debug, Clone)]
pub struct ReducedRun {
    pub record: TrajectoryRecord,
    pub state: ReducedState,
    pub diverged_at: Option<f64>,
    /// Max |theta - (2/n) log(scale/scale0) - theta0| over samples, recorded
    /// for the bound form.
    pub conservation_max: Option<f64>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Field of the selected reduced system at (coord, scale).
pub fn reduced_vector_field(variant: &ReducedVariant, coord: f64, scale: f64) -> Result<(f64, f64)> {
    variant.validate()?;
    if !(scale > 0.0) {
        return Err(Error::invalid("scale", format!("need scale > 0, got {scale}")));
    }
    if variant.is_theta() {
        if !(coord > 0.0 && coord < std::f64::consts::PI) {
            return Err(Error::invalid("coord", format!("need theta in (0, pi), got {coord}")));
        }
    } else if !(coord >= 0.0 && coord < 1.0) {
        return Err(Error::invalid("coord", format!("need gamma in [0, 1), got {coord}")));
    }
    Ok(match variant {
        ReducedVariant::ThetaCirculant { u } => {
            let n = u.len() as f64;
            let (s2, c2) = (coord.sin().powi(2), coord.cos().powi(2));
            // p_i proportional to exp(scale (sin^2 u_i - cos^2)), sums to 1
            let mut shift = f64::NEG_INFINITY;
            for &ui in u.iter() {
                shift = shift.max(scale * (s2 * ui - c2));
            }
            let mut norm = 0.0;
            let mut b = 0.0;
            for &ui in u.iter() {
                let e = (scale * (s2 * ui - c2) - shift).exp();
                norm += e;
                b += ui * e;
            }
            b /= norm;
            let drive = 1.0 - b;
            (
                scale / (2.0 * n) * (2.0 * coord).sin() * drive,
                scale * scale * s2 * drive,
            )
        }
        ReducedVariant::ThetaEtf { n } => {
            let nf = *n as f64;
            let s2 = coord.sin().powi(2);
            let q = nf * scale * s2 / (nf - 1.0);
            let sig = sigmoid(-q);
            (
                scale / 2.0 * (2.0 * coord).sin() * sig,
                nf * scale * scale * s2 * sig,
            )
        }
        ReducedVariant::ThetaEtfBound { n } => {
            let nf = *n as f64;
            let s2 = coord.sin().powi(2);
            let e = (-nf * scale * s2 / (nf - 1.0)).exp();
            (scale / 2.0 * e, nf * scale * scale / 4.0 * e)
        }
        ReducedVariant::GammaRho { n, rho } => {
            let nf = *n as f64;
            let one_m = 1.0 - coord * coord;
            let r = scale * one_m * (1.0 - rho) - (nf - 1.0).ln();
            let sig = sigmoid(-r);
            (
                -(1.0 - rho) / nf * scale * coord * one_m * sig,
                (1.0 - rho) * scale * scale * one_m * sig,
            )
        }
    })
}

fn reduced_sample(variant: &ReducedVariant, coord: f64, scale: f64, t: f64) -> Result<TrajectorySample> {
    let (dcoord, dscale) = reduced_vector_field(variant, coord, scale)?;
    let _ = dcoord;
    let (loss, delta, mar) = match variant {
        ReducedVariant::ThetaCirculant { u } => {
            let (s2, c2) = (coord.sin().powi(2), coord.cos().powi(2));
            let m: Vec<f64> = u.iter().map(|&ui| scale * (s2 * ui - c2)).collect();
            let mx = m.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + m.iter().map(|&v| (v - mx).exp()).sum::<f64>().ln();
            let max_off = u.iter().skip(1).cloned().fold(f64::NEG_INFINITY, f64::max);
            (lse - m[0], 2.0 * coord.cos(), s2 * (1.0 - max_off))
        }
        ReducedVariant::ThetaEtf { n } | ReducedVariant::ThetaEtfBound { n } => {
            let nf = *n as f64;
            let (s2, c2) = (coord.sin().powi(2), coord.cos().powi(2));
            let md = scale * (s2 - c2);
            let mo = scale * (-s2 / (nf - 1.0) - c2);
            let mx = md.max(mo);
            let lse = mx + ((md - mx).exp() + (nf - 1.0) * (mo - mx).exp()).ln();
            (lse - md, 2.0 * coord.cos(), s2 * nf / (nf - 1.0))
        }
        ReducedVariant::GammaRho { n, rho } => {
            let nf = *n as f64;
            let one_m = 1.0 - coord * coord;
            let md = scale * (one_m - coord * coord);
            let mo = scale * (one_m * rho - coord * coord);
            let mx = md.max(mo);
            let lse = mx + ((md - mx).exp() + (nf - 1.0) * (mo - mx).exp()).ln();
            (lse - md, 2.0 * coord, one_m * (1.0 - rho))
        }
    };
    Ok(TrajectorySample {
        t,
        loss,
        gamma: coord,
        beta: scale,
        tau: 1.0 / scale,
        delta,
        margin: mar,
        uniformity: f64::NAN,
        dbeta_dt: dscale,
    })
}

/// RK4 integration of a reduced system. For the bound form the run also
/// tracks the worst deviation from the conserved relation
/// `theta = (2/n) log(scale/scale0) + theta0`.
pub fn integrate_reduced(
    variant: &ReducedVariant,
    s0: ReducedState,
    options: &IntegratorOptions,
) -> Result<ReducedRun> {
    variant.validate()?;
    let horizon = options.schedule.horizon();
    let mut sampler = Sampler::new(options.sampling.clone(), horizon)?;

    let mut record = TrajectoryRecord::default();
    record.push(reduced_sample(variant, s0.coord, s0.scale, 0.0)?)?;

    let (coord0, scale0) = (s0.coord, s0.scale);
    let bound_form = matches!(variant, ReducedVariant::ThetaEtfBound { .. });
    let conservation = |coord: f64, scale: f64, n: usize| -> f64 {
        (coord - 2.0 / n as f64 * (scale / scale0).ln() - coord0).abs()
    };
    let mut conservation_max: Option<f64> = if bound_form { Some(0.0) } else { None };

    let mut coord = coord0;
    let mut scale = scale0;
    let mut t_now = 0.0;
    let mut diverged_at = None;

    options.schedule.drive(|t, h, step_index| {
        let (k1c, k1s) = reduced_vector_field(variant, coord, scale)?;
        let h2 = 0.5 * h;
        let (k2c, k2s) = reduced_vector_field(variant, coord + h2 * k1c, scale + h2 * k1s)?;
        let (k3c, k3s) = reduced_vector_field(variant, coord + h2 * k2c, scale + h2 * k2s)?;
        let (k4c, k4s) = reduced_vector_field(variant, coord + h * k3c, scale + h * k3s)?;
        let cn = coord + h / 6.0 * (k1c + 2.0 * k2c + 2.0 * k3c + k4c);
        let sn = scale + h / 6.0 * (k1s + 2.0 * k2s + 2.0 * k3s + k4s);
        if !cn.is_finite() || !sn.is_finite() {
            diverged_at = Some(t_now);
            return Ok(false);
        }
        coord = cn;
        scale = sn;
        t_now = t + h;
        if sampler.should_sample(step_index, t_now) {
            record.push(reduced_sample(variant, coord, scale, t_now)?)?;
            if let (Some(worst), ReducedVariant::ThetaEtfBound { n }) =
                (conservation_max.as_mut(), variant)
            {
                *worst = worst.max(conservation(coord, scale, *n));
            }
        }
        Ok(true)
    })?;

    if diverged_at.is_none() && record.last().map(|s| s.t < t_now).unwrap_or(true) {
        record.push(reduced_sample(variant, coord, scale, t_now)?)?;
        if let (Some(worst), ReducedVariant::ThetaEtfBound { n }) =
            (conservation_max.as_mut(), variant)
        {
            *worst = worst.max(conservation(coord, scale, *n));
        }
    }

    Ok(ReducedRun {
        record,
        state: ReducedState { coord, scale, t: t_now },
        diverged_at,
        conservation_max,
    })
}
