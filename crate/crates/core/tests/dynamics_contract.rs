//! Cross-model contracts: the reduced circulant system against the full
//! flow, the bound-form conservation and logarithmic growth cap, and the
//! mismatch phase portrait in miniature.

use gapflow_core::dynamics::{
    integrate_reduced, integrate_ufm, IntegratorOptions, ReducedState, ReducedVariant,
    SamplingSpec, StepSchedule, UfmOptions, UfmState,
};
use gapflow_core::geometry::{init_bipolar_circulant, permute_rows, sample_uniform_sphere_stream};
use gapflow_core::mitigate::{SwapScheme, TemperatureScheme};

#[test]
fn reduced_circulant_tracks_full_flow() {
    // short-horizon version of the fidelity check: the reduced system is
    // exact while the circulant symmetry holds
    let n = 10usize;
    let theta0 = std::f64::consts::PI / 16.0;
    let tau0: f64 = 1.0 / 0.07;
    let (x, y, u) = init_bipolar_circulant(n, theta0).unwrap();

    let schedule = StepSchedule::uniform(20.0, 1e-3).unwrap();
    let sampling = SamplingSpec::Every { steps: 200 };
    let full = integrate_ufm(
        UfmState::new(x, y, tau0.ln()).unwrap(),
        &TemperatureScheme::LearnedExp,
        &SwapScheme::None,
        &UfmOptions::new(IntegratorOptions::new(schedule.clone(), sampling.clone())),
        1,
    )
    .unwrap();
    let reduced = integrate_reduced(
        &ReducedVariant::ThetaCirculant { u },
        ReducedState { coord: theta0, scale: tau0, t: 0.0 },
        &IntegratorOptions::new(schedule, sampling),
    )
    .unwrap();

    assert!(full.diverged_at.is_none());
    assert!(reduced.diverged_at.is_none());
    assert_eq!(full.record.samples.len(), reduced.record.samples.len());
    let mut worst = 0.0f64;
    for (f, r) in full.record.samples.iter().zip(&reduced.record.samples) {
        // the gamma column holds (c_x - c_y)/2 in the last coordinate, which
        // is cos(theta) for the bipolar configuration
        let theta_full = f.gamma.clamp(-1.0, 1.0).acos();
        worst = worst.max((theta_full - r.gamma).abs());
    }
    assert!(worst <= 5e-2, "reduced-vs-full theta error {worst}");
    assert!(worst <= 1e-6, "symmetry should make the reduction exact, got {worst}");
}

#[test]
fn bound_form_stays_under_logarithmic_cap() {
    let n = 512usize;
    let tau0: f64 = 1.0 / 0.07;
    let theta0 = std::f64::consts::FRAC_PI_4;
    let variant = ReducedVariant::ThetaEtfBound { n };
    let options = IntegratorOptions::new(
        StepSchedule::piecewise(vec![(1.0, 1e-4), (10.0, 1e-3), (100.0, 1e-2), (1e4, 1e-1)])
            .unwrap(),
        SamplingSpec::LogSpaced { per_decade: 8, t_min: 1e-3 },
    );
    let run = integrate_reduced(
        &variant,
        ReducedState { coord: theta0, scale: tau0, t: 0.0 },
        &options,
    )
    .unwrap();
    assert!(run.diverged_at.is_none());
    assert!(run.conservation_max.unwrap() <= 1e-6);

    let nf = n as f64;
    let c3 = 55.0 * nf / 4.0;
    let c4 = nf / (2.0 * (nf - 1.0)) - 0.1;
    let tau_tilde =
        |t: f64| (t + (c4 * tau0).exp() / (c3 * c4)).ln() / c4 + (c3 * c4).ln() / c4;
    let mut max_ratio = 0.0f64;
    for s in &run.record.samples {
        assert!(
            s.beta <= tau_tilde(s.t) + 1e-9,
            "scale {} above cap {} at t={}",
            s.beta,
            tau_tilde(s.t),
            s.t
        );
        if s.t >= 1e2 {
            max_ratio = max_ratio.max(s.beta / (s.t + std::f64::consts::E).ln());
        }
    }
    // growth is at most logarithmic over the tail
    assert!(max_ratio.is_finite() && max_ratio > 0.0);
    assert!(max_ratio <= 2.0 / c4, "scale/log(t) ratio {max_ratio}");
}

#[test]
fn crossed_pairs_enlarge_then_close() {
    // five fully crossed pairs: the scale velocity starts negative, crosses
    // zero once, and the pairs match at finite time
    let (x, y, _) = init_bipolar_circulant(5, std::f64::consts::FRAC_PI_4).unwrap();
    let crossed = permute_rows(&x, &[1, 2, 3, 4, 0]).unwrap();
    let options = UfmOptions::new(IntegratorOptions::new(
        StepSchedule::piecewise(vec![(1.0, 1e-3), (10.0, 1e-2)]).unwrap(),
        SamplingSpec::LogSpaced { per_decade: 20, t_min: 1e-3 },
    ));
    let run = integrate_ufm(
        UfmState::new(crossed, y, (1.0f64 / 0.07).ln()).unwrap(),
        &TemperatureScheme::LearnedExp,
        &SwapScheme::None,
        &options,
        42,
    )
    .unwrap();
    assert!(run.diverged_at.is_none());
    let ds: Vec<f64> = run.record.samples.iter().map(|s| s.dbeta_dt).collect();
    assert!(ds[0] < 0.0, "initial scale velocity {} not negative", ds[0]);
    assert!(*ds.last().unwrap() > 0.0);
    let crossings = ds.windows(2).filter(|w| w[0].signum() != w[1].signum()).count();
    assert_eq!(crossings, 1, "expected one sign change, got {crossings}: {ds:?}");
    assert!(run.record.matched_at.is_some(), "pairs never matched");
    // the gap first widens, then shrinks
    let deltas: Vec<f64> = run.record.samples.iter().map(|s| s.delta).collect();
    let peak = deltas.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    assert!(peak > deltas[0]);
    assert!(*deltas.last().unwrap() < peak);
}

#[test]
fn contrapositive_of_matched_heating_along_samples() {
    // wherever the margin is positive the scale velocity must be positive
    let (x, y, _) = init_bipolar_circulant(5, std::f64::consts::FRAC_PI_4).unwrap();
    let crossed = permute_rows(&x, &[2, 3, 4, 0, 1]).unwrap();
    let options = UfmOptions::new(IntegratorOptions::new(
        StepSchedule::uniform(5.0, 1e-3).unwrap(),
        SamplingSpec::Every { steps: 50 },
    ));
    let run = integrate_ufm(
        UfmState::new(crossed, y, (1.0f64 / 0.07).ln()).unwrap(),
        &TemperatureScheme::LearnedExp,
        &SwapScheme::None,
        &options,
        0,
    )
    .unwrap();
    for s in &run.record.samples {
        if s.margin > 0.0 {
            assert!(
                s.dbeta_dt > 0.0,
                "matched configuration with nonpositive scale velocity at t={}",
                s.t
            );
        }
    }
}

#[test]
fn divergence_guard_reports_last_good_time() {
    // a absurdly large step on a stiff configuration must blow up finitely
    let x = sample_uniform_sphere_stream(4, 3, 1, 0).unwrap();
    let y = sample_uniform_sphere_stream(4, 3, 1, 1).unwrap();
    let options = UfmOptions::new(IntegratorOptions::new(
        StepSchedule::uniform(1e5, 1e4).unwrap(),
        SamplingSpec::Every { steps: 1 },
    ));
    let run = integrate_ufm(
        UfmState::new(x, y, 6.0).unwrap(),
        &TemperatureScheme::LearnedExp,
        &SwapScheme::None,
        &options,
        0,
    );
    // either the run survives (fields decayed) or it reports divergence with
    // a finite last-good time; it must not panic or return non-finite state
    if let Ok(run) = run {
        if let Some(t) = run.diverged_at {
            assert!(t.is_finite());
            assert!(run.state.nu.is_finite());
        } else {
            assert!(run.state.nu.is_finite());
        }
    }
}
