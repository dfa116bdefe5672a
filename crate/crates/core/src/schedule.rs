//! Variance-preserving noise schedules and prediction-parameterization algebra.
//!
//! A schedule stores, for every timestep `t` in `1..=N`, a signal coefficient
//! `s[t]` and a noise coefficient `n[t]` with `s² + n² = 1`, so that the
//! forward process is `x_t = s[t]·x₀ + n[t]·ε`. Timestep `0` denotes clean data
//! (`s = 1`, `n = 0`) and is accepted wherever a coefficient lookup is needed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent::LatentVideo;

/// What a denoiser outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredictionKind {
    /// The added noise ε.
    Eps,
    /// The clean sample x₀.
    X0,
    /// The velocity `v = s·ε − n·x₀`.
    V,
}

impl std::str::FromStr for PredictionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "eps" | "epsilon" => Ok(Self::Eps),
            "x0" | "sample" => Ok(Self::X0),
            "v" | "v_prediction" => Ok(Self::V),
            other => Err(Error::InvalidSampler(format!("unknown prediction kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Quad,
}

/// SNR value, with a sentinel for a noise-free timestep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Snr {
    Finite(f64),
    Infinite,
}

impl Snr {
    pub fn value(self) -> f64 {
        match self {
            Snr::Finite(v) => v,
            Snr::Infinite => f64::INFINITY,
        }
    }
}

/// Per-timestep signal/noise coefficients. Immutable once built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScheduleDocument", into = "ScheduleDocument")]
pub struct NoiseSchedule {
    kind: ScheduleKind,
    beta_start: f64,
    beta_end: f64,
    zero_terminal: bool,
    signal: Vec<f64>,
    noise: Vec<f64>,
}

impl NoiseSchedule {
    /// Quadratic beta ramp: `β_t = (√β_start + (t−1)/(N−1)·(√β_end − √β_start))²`.
    pub fn quad(num_steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if num_steps < 2 {
            return Err(Error::InvalidSchedule(format!("num_steps must be >= 2, got {num_steps}")));
        }
        if !(beta_start > 0.0 && beta_start < beta_end && beta_end < 1.0) {
            return Err(Error::InvalidSchedule(format!(
                "require 0 < beta_start < beta_end < 1, got {beta_start} and {beta_end}"
            )));
        }
        let betas = quad_betas(num_steps, beta_start, beta_end);
        let mut signal = Vec::with_capacity(num_steps);
        let mut cumprod = 1.0f64;
        for beta in &betas {
            cumprod *= 1.0 - beta;
            signal.push(cumprod.sqrt());
        }
        let noise = signal.iter().map(|s| complement(*s)).collect();
        let sched = Self { kind: ScheduleKind::Quad, beta_start, beta_end, zero_terminal: false, signal, noise };
        sched.validate()?;
        Ok(sched)
    }

    /// Shift-and-scale the signal coefficients so the last one is exactly zero
    /// while the first is unchanged: `s'[t] = (s[t] − s[N])·s[1] / (s[1] − s[N])`.
    pub fn rescale_zero_terminal_snr(&self) -> Result<Self> {
        if self.zero_terminal {
            return Err(Error::AlreadyRescaled);
        }
        let first = self.signal[0];
        let last = *self.signal.last().expect("non-empty schedule");
        if first <= last {
            return Err(Error::DegenerateSchedule);
        }
        let scale = first / (first - last);
        let n = self.signal.len();
        let mut signal: Vec<f64> = self.signal.iter().map(|s| (s - last) * scale).collect();
        signal[0] = first;
        signal[n - 1] = 0.0;
        let noise = signal.iter().map(|s| complement(*s)).collect();
        let sched = Self { signal, noise, zero_terminal: true, ..self.clone() };
        sched.validate()?;
        Ok(sched)
    }

    pub fn num_steps(&self) -> usize {
        self.signal.len()
    }

    pub fn zero_terminal(&self) -> bool {
        self.zero_terminal
    }

    pub fn beta_start(&self) -> f64 {
        self.beta_start
    }

    pub fn beta_end(&self) -> f64 {
        self.beta_end
    }

    pub fn signal_coefs(&self) -> &[f64] {
        &self.signal
    }

    pub fn noise_coefs(&self) -> &[f64] {
        &self.noise
    }

    /// `(s[t], n[t])` for `t` in `0..=N`; `t = 0` is the clean sample.
    pub fn coefs(&self, t: usize) -> Result<(f64, f64)> {
        match t {
            0 => Ok((1.0, 0.0)),
            t if t <= self.num_steps() => Ok((self.signal[t - 1], self.noise[t - 1])),
            t => Err(Error::TimestepOutOfRange { t, max: self.num_steps() }),
        }
    }

    pub fn signal(&self, t: usize) -> Result<f64> {
        self.coefs(t).map(|c| c.0)
    }

    pub fn noise(&self, t: usize) -> Result<f64> {
        self.coefs(t).map(|c| c.1)
    }

    /// `s[t]² / n[t]²` for `t` in `1..=N`.
    pub fn snr(&self, t: usize) -> Result<Snr> {
        if t == 0 || t > self.num_steps() {
            return Err(Error::TimestepOutOfRange { t, max: self.num_steps() });
        }
        let (s, n) = self.coefs(t)?;
        if s == 0.0 {
            Ok(Snr::Finite(0.0))
        } else if n == 0.0 {
            Ok(Snr::Infinite)
        } else {
            Ok(Snr::Finite((s * s) / (n * n)))
        }
    }

    fn validate(&self) -> Result<()> {
        let n = self.signal.len();
        if n < 2 || self.noise.len() != n {
            return Err(Error::InvalidSchedule("coefficient arrays must have equal length >= 2".into()));
        }
        for t in 0..n {
            let (s, e) = (self.signal[t], self.noise[t]);
            if !(0.0..=1.0).contains(&s) || !(0.0..=1.0).contains(&e) {
                return Err(Error::InvalidSchedule(format!("coefficient out of [0,1] at t={}", t + 1)));
            }
            if (s * s + e * e - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidSchedule(format!("not variance preserving at t={}", t + 1)));
            }
            // The noise coefficient can saturate at 1.0 in f64 while the signal is still shrinking.
            if t > 0 && !(s < self.signal[t - 1] && e >= self.noise[t - 1]) {
                return Err(Error::InvalidSchedule(format!("coefficients not strictly monotone at t={}", t + 1)));
            }
        }
        let (last_s, last_n) = (self.signal[n - 1], self.noise[n - 1]);
        if self.zero_terminal && (last_s != 0.0 || last_n != 1.0) {
            return Err(Error::InvalidSchedule("zero-terminal schedule must end at s=0, n=1".into()));
        }
        if !self.zero_terminal && last_s <= 0.0 {
            return Err(Error::InvalidSchedule("non-rescaled schedule must keep s[N] > 0".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

pub(crate) fn quad_betas(num_steps: usize, beta_start: f64, beta_end: f64) -> Vec<f64> {
    let (a, b) = (beta_start.sqrt(), beta_end.sqrt());
    let denom = (num_steps - 1) as f64;
    (0..num_steps)
        .map(|i| {
            let r = a + (i as f64) / denom * (b - a);
            r * r
        })
        .collect()
}

fn complement(s: f64) -> f64 {
    (1.0 - s * s).max(0.0).sqrt()
}

/// JSON form of a schedule.
#[derive(Debug, Serialize, Deserialize)]
struct ScheduleDocument {
    num_steps: usize,
    beta_start: f64,
    beta_end: f64,
    schedule_kind: ScheduleKind,
    zero_terminal: bool,
    signal_coef: Vec<f64>,
    noise_coef: Vec<f64>,
}

impl From<NoiseSchedule> for ScheduleDocument {
    fn from(s: NoiseSchedule) -> Self {
        Self {
            num_steps: s.signal.len(),
            beta_start: s.beta_start,
            beta_end: s.beta_end,
            schedule_kind: s.kind,
            zero_terminal: s.zero_terminal,
            signal_coef: s.signal,
            noise_coef: s.noise,
        }
    }
}

impl TryFrom<ScheduleDocument> for NoiseSchedule {
    type Error = Error;

    fn try_from(d: ScheduleDocument) -> Result<Self> {
        if d.signal_coef.len() != d.num_steps {
            return Err(Error::InvalidSchedule(format!(
                "num_steps {} disagrees with {} coefficients",
                d.num_steps,
                d.signal_coef.len()
            )));
        }
        let sched = NoiseSchedule {
            kind: d.schedule_kind,
            beta_start: d.beta_start,
            beta_end: d.beta_end,
            zero_terminal: d.zero_terminal,
            signal: d.signal_coef,
            noise: d.noise_coef,
        };
        sched.validate()?;
        Ok(sched)
    }
}

/// Clean-sample and noise estimates recovered from a model output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Recovered {
    pub x0: f64,
    pub eps: f64,
}

/// Scalar core of [`convert_prediction`]. `t` is used only for diagnostics.
pub fn convert_scalar(s: f64, n: f64, x_t: f64, pred: f64, from: PredictionKind, t: usize) -> Result<Recovered> {
    match from {
        PredictionKind::V => Ok(Recovered { x0: s * x_t - n * pred, eps: n * x_t + s * pred }),
        PredictionKind::Eps => {
            if s == 0.0 {
                return Err(Error::ZeroSignal { t });
            }
            Ok(Recovered { x0: (x_t - n * pred) / s, eps: pred })
        }
        PredictionKind::X0 => {
            if n == 0.0 {
                return Err(Error::ZeroNoise { t });
            }
            Ok(Recovered { x0: pred, eps: (x_t - s * pred) / n })
        }
    }
}

/// Expresses `(x₀, ε)` in the requested parameterization.
pub fn express_scalar(s: f64, n: f64, x0: f64, eps: f64, kind: PredictionKind) -> f64 {
    match kind {
        PredictionKind::Eps => eps,
        PredictionKind::X0 => x0,
        PredictionKind::V => s * eps - n * x0,
    }
}

/// Converts a model output at timestep `t` into `(x̂₀, ε̂)`.
pub fn convert_prediction(
    sched: &NoiseSchedule,
    t: usize,
    x_t: &LatentVideo,
    pred: &LatentVideo,
    from: PredictionKind,
) -> Result<(LatentVideo, LatentVideo)> {
    x_t.ensure_same_shape(pred)?;
    let (s, n) = sched.coefs(t)?;
    match from {
        PredictionKind::Eps if s == 0.0 => return Err(Error::ZeroSignal { t }),
        PredictionKind::X0 if n == 0.0 => return Err(Error::ZeroNoise { t }),
        _ => {}
    }
    let mut x0 = Vec::with_capacity(x_t.data().len());
    let mut eps = Vec::with_capacity(x_t.data().len());
    for (&x, &p) in x_t.data().iter().zip(pred.data()) {
        let r = convert_scalar(s, n, x, p, from, t)?;
        x0.push(r.x0);
        eps.push(r.eps);
    }
    Ok((LatentVideo::from_vec(x_t.shape(), x0)?, LatentVideo::from_vec(x_t.shape(), eps)?))
}
