use gapflow_core::dynamics::*;
use gapflow_core::geometry::init_bipolar_circulant;
use gapflow_core::mitigate::{SwapScheme, TemperatureScheme};

fn main() {
    let n = 10usize;
    let theta0 = std::f64::consts::PI / 16.0;
    let tau0: f64 = 1.0 / 0.07;
    let (x, y, u) = init_bipolar_circulant(n, theta0).unwrap();
    let schedule = StepSchedule::uniform(100.0, 1e-3).unwrap();
    let sampling = SamplingSpec::Every { steps: 1000 };
    let full = integrate_ufm(
        UfmState::new(x, y, tau0.ln()).unwrap(),
        &TemperatureScheme::LearnedExp,
        &SwapScheme::None,
        &UfmOptions::new(IntegratorOptions::new(schedule.clone(), sampling.clone())),
        1,
    ).unwrap();
    let reduced = integrate_reduced(
        &ReducedVariant::ThetaCirculant { u },
        ReducedState { coord: theta0, scale: tau0, t: 0.0 },
        &IntegratorOptions::new(schedule, sampling),
    ).unwrap();
    let mut worst = 0.0f64;
    for (f, r) in full.record.samples.iter().zip(&reduced.record.samples) {
        let theta_full = f.gamma.clamp(-1.0, 1.0).acos();
        let e = (theta_full - r.gamma).abs();
        worst = worst.max(e);
        if (f.t * 10.0).round() % 100.0 == 0.0 {
            println!("t={:8.2} theta_full={:.6} theta_red={:.6} err={:.3e} beta_full={:.2} tau_red={:.2}",
                f.t, theta_full, r.gamma, e, f.beta, r.beta);
        }
    }
    println!("worst = {worst:.6e}");
}
