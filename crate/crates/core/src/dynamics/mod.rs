//! Numerical integration of the flows: the full unconstrained-features
//! Riemannian flow with learnable temperature, the scalar (gamma, beta)
//! parallel flow on a frozen correlation, the simplified exponential model,
//! and the two-dimensional reduced systems.
//!
//! All integrators use classical fixed-step RK4, optionally with a piecewise
//! step schedule for long horizons. Runs are deterministic for a given seed.

mod reduced;
mod scalar;
mod ufm;

pub use reduced::{
    integrate_reduced, reduced_vector_field, ReducedRun, ReducedState, ReducedVariant,
};
pub use scalar::{
    integrate_scalar, scalar_vector_field, simplified_exp_field, ScalarRun, ScalarState,
};
pub use ufm::{integrate_ufm, ufm_vector_field, UfmOptions, UfmRun, UfmState};

use serde::Serialize;

use crate::error::{Error, Result};

/// One sampled point of a trajectory. `gamma` carries the polar angle for
/// the angle-parameterized reduced systems; `uniformity` is NaN where no
/// feature matrices exist to measure.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct TrajectorySample {
    pub t: f64,
    pub loss: f64,
    pub gamma: f64,
    pub beta: f64,
    pub tau: f64,
    pub delta: f64,
    pub margin: f64,
    pub uniformity: f64,
    pub dbeta_dt: f64,
}

/// Time series of samples with strictly increasing t.
#[derive(Debug, Clone, Default)]
pub struct TrajectoryRecord {
    pub samples: Vec<TrajectorySample>,
    /// Time of the first sample with positive margin, if any.
    pub matched_at: Option<f64>,
}

impl TrajectoryRecord {
    pub fn push(&mut self, sample: TrajectorySample) -> Result<()> {
        if let Some(last) = self.samples.last() {
            if sample.t <= last.t {
                return Err(Error::InvariantViolation(format!(
                    "trajectory times must strictly increase: {} after {}",
                    sample.t, last.t
                )));
            }
        }
        if self.matched_at.is_none() && sample.margin > 0.0 {
            self.matched_at = Some(sample.t);
        }
        self.samples.push(sample);
        Ok(())
    }

    pub fn last(&self) -> Option<&TrajectorySample> {
        self.samples.last()
    }
}

/// Fixed-step schedule: a list of (t_end, dt) segments. Within a segment the
/// step is dt, shortened only to land exactly on the segment boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct StepSchedule {
    segments: Vec<(f64, f64)>,
}

impl StepSchedule {
    pub fn uniform(horizon: f64, dt: f64) -> Result<Self> {
        Self::piecewise(vec![(horizon, dt)])
    }

    pub fn piecewise(segments: Vec<(f64, f64)>) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::invalid("segments", "schedule must be nonempty"));
        }
        let mut prev = 0.0;
        for &(t_end, dt) in &segments {
            if !(t_end > prev) || !(dt > 0.0) || !t_end.is_finite() || !dt.is_finite() {
                return Err(Error::invalid(
                    "segments",
                    format!("bad segment (t_end={t_end}, dt={dt}) after t={prev}"),
                ));
            }
            prev = t_end;
        }
        Ok(StepSchedule { segments })
    }

    pub fn horizon(&self) -> f64 {
        self.segments.last().unwrap().0
    }

    pub fn segments(&self) -> &[(f64, f64)] {
        &self.segments
    }

    /// Total number of steps the schedule will take.
    pub fn total_steps(&self) -> usize {
        let mut total = 0usize;
        let mut t = 0.0;
        for &(t_end, dt) in &self.segments {
            let span = t_end - t;
            total += (span / dt).ceil().max(0.0) as usize;
            t = t_end;
        }
        total
    }

    /// Invoke `step(t, h, step_index)` for every step; `step` returns false
    /// to abort early.
    pub fn drive<F: FnMut(f64, f64, usize) -> Result<bool>>(&self, mut step: F) -> Result<()> {
        let mut t = 0.0;
        let mut index = 0usize;
        for &(t_end, dt) in &self.segments {
            while t < t_end - 1e-12 * t_end.max(1.0) {
                let h = dt.min(t_end - t);
                if !step(t, h, index)? {
                    return Ok(());
                }
                t += h;
                index += 1;
            }
            t = t_end;
        }
        Ok(())
    }
}

/// When to record samples along a run.
#[derive(Debug, Clone, PartialEq)]
pub enum SamplingSpec {
    /// Every k-th step (plus the initial and final states).
    Every { steps: usize },
    /// Logarithmically spaced targets from t_min to the horizon.
    LogSpaced { per_decade: usize, t_min: f64 },
}

impl SamplingSpec {
    fn validate(&self) -> Result<()> {
        match *self {
            SamplingSpec::Every { steps } if steps == 0 => {
                Err(Error::invalid("steps", "sampling stride must be positive"))
            }
            SamplingSpec::LogSpaced { per_decade, t_min } if per_decade == 0 || !(t_min > 0.0) => {
                Err(Error::invalid("sampling", "need per_decade >= 1 and t_min > 0"))
            }
            _ => Ok(()),
        }
    }
}

/// Stateful sampler; fires after a step has completed.
pub(crate) struct Sampler {
    spec: SamplingSpec,
    targets: Vec<f64>,
    next: usize,
}

impl Sampler {
    pub(crate) fn new(spec: SamplingSpec, horizon: f64) -> Result<Self> {
        spec.validate()?;
        let targets = match spec {
            SamplingSpec::Every { .. } => Vec::new(),
            SamplingSpec::LogSpaced { per_decade, t_min } => {
                let mut ts = Vec::new();
                let mut k = 0usize;
                loop {
                    let t = t_min * 10f64.powf(k as f64 / per_decade as f64);
                    if t > horizon * (1.0 + 1e-12) {
                        break;
                    }
                    ts.push(t);
                    k += 1;
                }
                ts
            }
        };
        Ok(Sampler { spec, targets, next: 0 })
    }

    pub(crate) fn should_sample(&mut self, step_index: usize, t: f64) -> bool {
        match self.spec {
            SamplingSpec::Every { steps } => (step_index + 1) % steps == 0,
            SamplingSpec::LogSpaced { .. } => {
                let mut fire = false;
                while self.next < self.targets.len() && t >= self.targets[self.next] - 1e-12 {
                    self.next += 1;
                    fire = true;
                }
                fire
            }
        }
    }
}

/// Options shared by all integrators.
#[derive(Debug, Clone)]
pub struct IntegratorOptions {
    pub schedule: StepSchedule,
    pub sampling: SamplingSpec,
    /// Re-verify sphere and tangency invariants at every sample; violations
    /// abort the run.
    pub self_check: bool,
}

impl IntegratorOptions {
    pub fn new(schedule: StepSchedule, sampling: SamplingSpec) -> Self {
        IntegratorOptions { schedule, sampling, self_check: false }
    }
}
