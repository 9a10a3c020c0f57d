//! Full unconstrained-features Riemannian flow on the product of spheres,
//! with learnable temperature and optional modality swapping.

use ndarray::{Array1, Array2, Axis};

use crate::error::{Error, Result};
use crate::geometry::{renormalize, FeatureMatrix};
use crate::loss::{g_align, grad_loss, sym_ce_loss};
use crate::metrics::{margin, modality_gap, uniformity};
use crate::mitigate::{swap_step_mask, SwapDraw, SwapScheme, TemperatureScheme};

use super::{IntegratorOptions, Sampler, TrajectoryRecord, TrajectorySample};

/// Flow state: both feature matrices on the sphere plus the temperature
/// parameter nu.
#[derive(Debug, Clone)]
pub struct UfmState {
    pub x: FeatureMatrix,
    pub y: FeatureMatrix,
    pub nu: f64,
    pub t: f64,
}

impl UfmState {
    pub fn new(x: FeatureMatrix, y: FeatureMatrix, nu: f64) -> Result<Self> {
        if x.n() != y.n() || x.d() != y.d() {
            return Err(Error::invalid("y", "shape mismatch with x"));
        }
        Ok(UfmState { x, y, nu, t: 0.0 })
    }
}

/// Completed (or aborted) run.
#[derive(Debug, Clone)]
pub struct UfmRun {
    pub record: TrajectoryRecord,
    pub state: UfmState,
    /// Last finite time if the integration produced non-finite values.
    pub diverged_at: Option<f64>,
}

/// Extra knobs for the full flow.
#[derive(Debug, Clone)]
pub struct UfmOptions {
    pub base: IntegratorOptions,
    /// Renormalize swapped rows before the loss (default on).
    pub renormalize_after_swap: bool,
}

impl UfmOptions {
    pub fn new(base: IntegratorOptions) -> Self {
        UfmOptions { base, renormalize_after_swap: true }
    }
}

struct FieldEval {
    dx: Array2<f64>,
    dy: Array2<f64>,
    dnu: f64,
}

/// The flow field at raw coordinates (rows need not be exactly unit at RK4
/// interior evaluations). `swap`, when present, is the fixed mixing map for
/// the current step; the gradient chains through it with the mixing weights
/// and row scales treated as constants.
fn eval_field(
    x: &Array2<f64>,
    y: &Array2<f64>,
    nu: f64,
    scheme: &TemperatureScheme,
    t: f64,
    horizon: f64,
    swap: Option<(&SwapDraw, bool)>,
) -> Result<FieldEval> {
    let sv = scheme.value(nu, t, horizon)?;
    let beta = sv.beta;

    let (eg_x, eg_y, galign) = match swap {
        None => {
            let z = x.dot(&y.t());
            let m = z.mapv(|v| beta * v);
            let g = grad_loss(&m.view())?;
            let eg_x = g.dot(y).mapv(|v| beta * v);
            let eg_y = g.t().dot(x).mapv(|v| beta * v);
            // g_align(Z, beta) without a second softmax pass
            let ga = -(&z * &g).sum();
            (eg_x, eg_y, ga)
        }
        Some((draw, renorm_rows)) => {
            let (mut xs, mut ys) = draw.apply_raw(x, y);
            let (mut sx, mut sy) = (Array1::ones(x.nrows()), Array1::ones(x.nrows()));
            if renorm_rows {
                for (i, mut row) in xs.outer_iter_mut().enumerate() {
                    let norm = row.dot(&row).sqrt();
                    if norm < 1e-300 {
                        return Err(Error::Degenerate(format!(
                            "swapped row {i} collapsed to zero"
                        )));
                    }
                    sx[i] = norm;
                    row.mapv_inplace(|v| v / norm);
                }
                for (i, mut row) in ys.outer_iter_mut().enumerate() {
                    let norm = row.dot(&row).sqrt();
                    if norm < 1e-300 {
                        return Err(Error::Degenerate(format!(
                            "swapped row {i} collapsed to zero"
                        )));
                    }
                    sy[i] = norm;
                    row.mapv_inplace(|v| v / norm);
                }
            }
            let z = xs.dot(&ys.t());
            let m = z.mapv(|v| beta * v);
            let g = grad_loss(&m.view())?;
            let mut ex = g.dot(&ys).mapv(|v| beta * v);
            let mut ey = g.t().dot(&xs).mapv(|v| beta * v);
            for i in 0..ex.nrows() {
                for j in 0..ex.ncols() {
                    ex[[i, j]] /= sx[i];
                    ey[[i, j]] /= sy[i];
                }
            }
            let lam = &draw.lambda;
            let eg_x = lam * &ex + (1.0 - lam) * &ey;
            let eg_y = lam * &ey + (1.0 - lam) * &ex;
            let ga = -(&z * &g).sum();
            (eg_x, eg_y, ga)
        }
    };

    // tangent projection of the negative gradient, rowwise
    let mut dx = eg_x;
    for (xrow, mut grow) in x.outer_iter().zip(dx.outer_iter_mut()) {
        let radial = xrow.dot(&grow);
        for (g, &xv) in grow.iter_mut().zip(xrow.iter()) {
            *g = radial * xv - *g;
        }
    }
    let mut dy = eg_y;
    for (yrow, mut grow) in y.outer_iter().zip(dy.outer_iter_mut()) {
        let radial = yrow.dot(&grow);
        for (g, &yv) in grow.iter_mut().zip(yrow.iter()) {
            *g = radial * yv - *g;
        }
    }
    let dnu = sv.lr_scale * sv.beta_prime * galign;
    Ok(FieldEval { dx, dy, dnu })
}

/// Flow field at a valid state: tangential velocities for both feature
/// matrices and the temperature-parameter velocity.
pub fn ufm_vector_field(
    state: &UfmState,
    scheme: &TemperatureScheme,
    horizon: f64,
) -> Result<(Array2<f64>, Array2<f64>, f64)> {
    let f = eval_field(
        state.x.as_array(),
        state.y.as_array(),
        state.nu,
        scheme,
        state.t,
        horizon,
        None,
    )?;
    Ok((f.dx, f.dy, f.dnu))
}

fn ufm_sample(
    x: &FeatureMatrix,
    y: &FeatureMatrix,
    nu: f64,
    t: f64,
    scheme: &TemperatureScheme,
    horizon: f64,
) -> Result<TrajectorySample> {
    let sv = scheme.value(nu, t, horizon)?;
    let z = x.as_array().dot(&y.as_array().t());
    let m = z.mapv(|v| sv.beta * v);
    let loss = sym_ce_loss(&m.view())?;
    let ga = g_align(&z.view(), sv.beta)?;
    let dnu = sv.lr_scale * sv.beta_prime * ga;
    let dbeta_dt = sv.beta_prime * dnu + scheme.schedule_beta_dot(t, horizon);
    let gap = modality_gap(x, y)?;
    let d = x.d();
    let cx_last = x.as_array().index_axis(Axis(1), d - 1).mean().unwrap();
    let cy_last = y.as_array().index_axis(Axis(1), d - 1).mean().unwrap();
    Ok(TrajectorySample {
        t,
        loss,
        gamma: 0.5 * (cx_last - cy_last),
        beta: sv.beta,
        tau: 1.0 / sv.beta,
        delta: gap.delta,
        margin: margin(&z.view()).unwrap_or(f64::NAN),
        uniformity: uniformity(x, y)?,
        dbeta_dt,
    })
}

fn self_check(
    x: &FeatureMatrix,
    y: &FeatureMatrix,
    nu: f64,
    t: f64,
    scheme: &TemperatureScheme,
    horizon: f64,
) -> Result<()> {
    for (name, m) in [("x", x), ("y", y)] {
        for (i, row) in m.as_array().outer_iter().enumerate() {
            let err = (row.dot(&row).sqrt() - 1.0).abs();
            if err > 1e-12 {
                return Err(Error::InvariantViolation(format!(
                    "{name} row {i} norm error {err:.3e} at t={t}"
                )));
            }
        }
    }
    let state = UfmState { x: x.clone(), y: y.clone(), nu, t };
    let (dx, dy, _) = ufm_vector_field(&state, scheme, horizon)?;
    for (name, m, d) in [("x", x, &dx), ("y", y, &dy)] {
        for (i, (row, drow)) in m.as_array().outer_iter().zip(d.outer_iter()).enumerate() {
            let ip = row.dot(&drow);
            if ip.abs() > 1e-10 {
                return Err(Error::InvariantViolation(format!(
                    "{name} row {i} tangency error {ip:.3e} at t={t}"
                )));
            }
        }
    }
    Ok(())
}

/// Classical RK4 with renormalization after every step. The swap transform
/// is drawn once per designated step and held fixed across the four stage
/// evaluations. Aborts (recording the last finite time) if the state leaves
/// the finite range.
pub fn integrate_ufm(
    s0: UfmState,
    scheme: &TemperatureScheme,
    swap: &SwapScheme,
    options: &UfmOptions,
    seed: u64,
) -> Result<UfmRun> {
    scheme.validate()?;
    swap.validate()?;
    let schedule = &options.base.schedule;
    let horizon = schedule.horizon();
    let mut sampler = Sampler::new(options.base.sampling.clone(), horizon)?;

    let mask = match swap {
        SwapScheme::None => Vec::new(),
        _ => swap_step_mask(swap.step_fraction(), schedule.total_steps(), seed)?,
    };

    let mut record = TrajectoryRecord::default();
    record.push(ufm_sample(&s0.x, &s0.y, s0.nu, 0.0, scheme, horizon)?)?;

    let mut x = s0.x.clone();
    let mut y = s0.y.clone();
    let mut nu = s0.nu;
    let mut t_now = 0.0;
    let mut diverged_at = None;

    let shape = (x.n(), x.d());
    let result = schedule.drive(|t, h, step_index| {
        let draw = match swap {
            SwapScheme::None => None,
            SwapScheme::Hard { .. } if mask[step_index] => {
                Some(SwapDraw::hard(shape, seed, 1 + step_index as u64))
            }
            SwapScheme::Soft { .. } if mask[step_index] => {
                Some(SwapDraw::soft(shape, seed, 1 + step_index as u64))
            }
            _ => None,
        };
        let sw = draw.as_ref().map(|d| (d, options.renormalize_after_swap));

        let xa = x.as_array();
        let ya = y.as_array();
        let k1 = eval_field(xa, ya, nu, scheme, t, horizon, sw)?;
        let h2 = 0.5 * h;
        let x2 = xa + &k1.dx.mapv(|v| v * h2);
        let y2 = ya + &k1.dy.mapv(|v| v * h2);
        let k2 = eval_field(&x2, &y2, nu + h2 * k1.dnu, scheme, t + h2, horizon, sw)?;
        let x3 = xa + &k2.dx.mapv(|v| v * h2);
        let y3 = ya + &k2.dy.mapv(|v| v * h2);
        let k3 = eval_field(&x3, &y3, nu + h2 * k2.dnu, scheme, t + h2, horizon, sw)?;
        let x4 = xa + &k3.dx.mapv(|v| v * h);
        let y4 = ya + &k3.dy.mapv(|v| v * h);
        let k4 = eval_field(&x4, &y4, nu + h * k3.dnu, scheme, t + h, horizon, sw)?;

        let sixth = h / 6.0;
        let xn = xa + &((&k1.dx + &(&k2.dx * 2.0) + &(&k3.dx * 2.0) + &k4.dx) * sixth);
        let yn = ya + &((&k1.dy + &(&k2.dy * 2.0) + &(&k3.dy * 2.0) + &k4.dy) * sixth);
        let nun = nu + sixth * (k1.dnu + 2.0 * k2.dnu + 2.0 * k3.dnu + k4.dnu);

        if !nun.is_finite() || xn.iter().any(|v| !v.is_finite()) || yn.iter().any(|v| !v.is_finite())
        {
            diverged_at = Some(t_now);
            return Ok(false);
        }
        x = renormalize(&xn)?;
        y = renormalize(&yn)?;
        nu = nun;
        t_now = t + h;

        if sampler.should_sample(step_index, t_now) {
            record.push(ufm_sample(&x, &y, nu, t_now, scheme, horizon)?)?;
            if options.base.self_check {
                self_check(&x, &y, nu, t_now, scheme, horizon)?;
            }
        }
        Ok(true)
    });
    result?;

    if diverged_at.is_none() {
        if record.last().map(|s| s.t < t_now).unwrap_or(true) {
            record.push(ufm_sample(&x, &y, nu, t_now, scheme, horizon)?)?;
        }
        if options.base.self_check {
            self_check(&x, &y, nu, t_now, scheme, horizon)?;
        }
    }

    Ok(UfmRun {
        record,
        state: UfmState { x, y, nu, t: t_now },
        diverged_at,
    })
}
