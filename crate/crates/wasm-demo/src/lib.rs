//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Each export has a plain Rust counterpart returning `Result<_, String>` so
//! the logic can be tested natively.

use factorvid::conditioning::ConditioningPack;
use factorvid::denoiser::GaussianOracle;
use factorvid::guidance::{GuidanceSpec, Strategy};
use factorvid::juice::{simulate_kappa_curve, AgreementClass};
use factorvid::sampler::{sample_many, SamplerConfig, TimestepSelection};
use factorvid::schedule::Snr;
use factorvid::{NoiseSchedule, PredictionKind, Shape};
use wasm_bindgen::prelude::*;

fn build_schedule(steps: usize, beta_start: f64, beta_end: f64, zero_terminal: bool) -> Result<NoiseSchedule, String> {
    let sched = NoiseSchedule::quad(steps, beta_start, beta_end).map_err(|e| e.to_string())?;
    if zero_terminal {
        sched.rescale_zero_terminal_snr().map_err(|e| e.to_string())
    } else {
        Ok(sched)
    }
}

/// Signal coefficients, noise coefficients and log10 SNR for t = 1..=steps,
/// concatenated. A zero SNR is reported as negative infinity.
pub fn schedule_curves(steps: usize, beta_start: f64, beta_end: f64, zero_terminal: bool) -> Result<Vec<f64>, String> {
    let sched = build_schedule(steps, beta_start, beta_end, zero_terminal)?;
    let mut out = Vec::with_capacity(3 * steps);
    out.extend((1..=steps).map(|t| sched.signal(t).unwrap()));
    out.extend((1..=steps).map(|t| sched.noise(t).unwrap()));
    out.extend((1..=steps).map(|t| match sched.snr(t).unwrap() {
        Snr::Finite(v) => v.log10(),
        Snr::Infinite => f64::INFINITY,
    }));
    Ok(out)
}

/// Final samples of the DDIM sampler driven by the exact Gaussian denoiser,
/// one scalar latent per seed `0..seeds`.
pub fn oracle_samples(
    mu: f64,
    sigma2: f64,
    inference_steps: usize,
    seeds: u64,
    timesteps: &str,
) -> Result<Vec<f64>, String> {
    let selection: TimestepSelection = timesteps.parse().map_err(|e: factorvid::Error| e.to_string())?;
    let sched = build_schedule(1000, 8.5e-4, 1.2e-2, true)?;
    let oracle = GaussianOracle::isotropic(mu, sigma2).map_err(|e| e.to_string())?;
    let shape = Shape::new(1, 1, 1, 1).map_err(|e| e.to_string())?;
    let cfg = SamplerConfig {
        num_inference_steps: inference_steps,
        prediction_kind: PredictionKind::V,
        timestep_selection: selection,
        seed: 0,
    };
    let guidance = GuidanceSpec::new(0.0, 1.0, Strategy::TextOnly).map_err(|e| e.to_string())?;
    let pack = ConditioningPack::unconditioned(shape);
    let seeds: Vec<u64> = (0..seeds).collect();
    let outs = sample_many(&cfg, &sched, &oracle, &pack, &guidance, shape, &seeds).map_err(|e| e.to_string())?;
    Ok(outs.iter().map(|v| v.data()[0]).collect())
}

/// Fleiss' kappa as complete-agreement items are swapped in; returns
/// `[fraction, kappa]` pairs flattened.
pub fn kappa_curve(items: usize, replacement: &str, points: usize) -> Result<Vec<f64>, String> {
    let class: AgreementClass = replacement.parse().map_err(|e: factorvid::Error| e.to_string())?;
    if points < 2 {
        return Err("need at least 2 points".into());
    }
    let fractions: Vec<f64> = (0..points).map(|i| i as f64 / (points - 1) as f64).collect();
    let curve = simulate_kappa_curve(items, class, &fractions).map_err(|e| e.to_string())?;
    Ok(curve.into_iter().flat_map(|(f, k)| [f, k]).collect())
}

#[wasm_bindgen(js_name = scheduleCurves)]
pub fn schedule_curves_js(
    steps: usize,
    beta_start: f64,
    beta_end: f64,
    zero_terminal: bool,
) -> Result<Vec<f64>, JsError> {
    schedule_curves(steps, beta_start, beta_end, zero_terminal).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = oracleSamples)]
pub fn oracle_samples_js(
    mu: f64,
    sigma2: f64,
    inference_steps: usize,
    seeds: u32,
    timesteps: &str,
) -> Result<Vec<f64>, JsError> {
    oracle_samples(mu, sigma2, inference_steps, seeds as u64, timesteps).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = kappaCurve)]
pub fn kappa_curve_js(items: usize, replacement: &str, points: usize) -> Result<Vec<f64>, JsError> {
    kappa_curve(items, replacement, points).map_err(|e| JsError::new(&e))
}
