use crate::error::{Error, Result};
use crate::latent::LatentVideo;
use crate::schedule::{express_scalar, NoiseSchedule, PredictionKind};

use super::{check_request, Denoiser, DenoiserRequest};

/// A per-coordinate Gaussian prior parameter, either shared or one value per element.
#[derive(Debug, Clone, PartialEq)]
pub enum Prior {
    Scalar(f64),
    PerCoord(Vec<f64>),
}

impl Prior {
    fn at(&self, i: usize) -> f64 {
        match self {
            Prior::Scalar(v) => *v,
            Prior::PerCoord(v) => v[i],
        }
    }

    fn check_len(&self, len: usize, what: &str) -> Result<()> {
        match self {
            Prior::PerCoord(v) if v.len() != len => {
                Err(Error::InvalidShape(format!("{what} has {} values, latent has {len}", v.len())))
            }
            _ => Ok(()),
        }
    }
}

/// Exact denoiser for data drawn independently per coordinate from `N(μ, σ²)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianOracle {
    mu: Prior,
    sigma2: Prior,
}

impl GaussianOracle {
    pub fn new(mu: Prior, sigma2: Prior) -> Result<Self> {
        let ok = |p: &Prior, positive: bool| match p {
            Prior::Scalar(v) => v.is_finite() && (!positive || *v > 0.0),
            Prior::PerCoord(vs) => vs.iter().all(|v| v.is_finite() && (!positive || *v > 0.0)),
        };
        if !ok(&mu, false) {
            return Err(Error::InvalidShape("oracle mean must be finite".into()));
        }
        if !ok(&sigma2, true) {
            return Err(Error::InvalidShape("oracle variance must be positive and finite".into()));
        }
        Ok(Self { mu, sigma2 })
    }

    pub fn isotropic(mu: f64, sigma2: f64) -> Result<Self> {
        Self::new(Prior::Scalar(mu), Prior::Scalar(sigma2))
    }

    pub fn mu(&self) -> &Prior {
        &self.mu
    }

    pub fn sigma2(&self) -> &Prior {
        &self.sigma2
    }

    /// `E[x₀ | x_t] = (μ·n² + s·σ²·x_t) / (s²·σ² + n²)`, with the `n = 0` and
    /// `s = 0` limits returned exactly.
    pub fn posterior_mean_scalar(mu: f64, sigma2: f64, s: f64, n: f64, x_t: f64) -> f64 {
        if n == 0.0 {
            x_t
        } else if s == 0.0 {
            mu
        } else {
            (mu * n * n + s * sigma2 * x_t) / (s * s * sigma2 + n * n)
        }
    }
}

impl Denoiser for GaussianOracle {
    fn denoise(&self, req: &DenoiserRequest<'_>, sched: &NoiseSchedule, kind: PredictionKind) -> Result<LatentVideo> {
        check_request(req)?;
        let len = req.x_t.data().len();
        self.mu.check_len(len, "mu")?;
        self.sigma2.check_len(len, "sigma2")?;
        let (s, n) = sched.coefs(req.t)?;
        let data = req
            .x_t
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let x0 = Self::posterior_mean_scalar(self.mu.at(i), self.sigma2.at(i), s, n, x);
                let eps = if n == 0.0 { 0.0 } else { (x - s * x0) / n };
                express_scalar(s, n, x0, eps, kind)
            })
            .collect();
        LatentVideo::from_vec(req.x_t.shape(), data)
    }
}

/// Posterior-mean denoiser for an independent Gaussian prior, expressed in `kind`.
pub fn gaussian_oracle_denoise(
    req: &DenoiserRequest<'_>,
    mu: Prior,
    sigma2: Prior,
    sched: &NoiseSchedule,
    kind: PredictionKind,
) -> Result<LatentVideo> {
    GaussianOracle::new(mu, sigma2)?.denoise(req, sched, kind)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conditioning::ConditioningPack;
    use crate::denoiser::CondHandle;
    use crate::latent::Shape;

    #[test]
    fn limits_are_exact() {
        for x in [-3.7, 0.0, 0.1, 12.5] {
            assert_eq!(GaussianOracle::posterior_mean_scalar(0.3, 0.1, 1.0, 0.0, x), x);
            assert_eq!(GaussianOracle::posterior_mean_scalar(0.3, 0.1, 0.0, 1.0, x), 0.3);
        }
    }

    #[test]
    fn symmetric_point() {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let v = GaussianOracle::posterior_mean_scalar(0.0, 1.0, h, h, 1.0);
        assert!((v - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-8);
    }

    #[test]
    fn zero_terminal_step_returns_mu() {
        let sched = NoiseSchedule::quad(100, 1e-3, 2e-2).unwrap().rescale_zero_terminal_snr().unwrap();
        let shape = Shape::new(1, 1, 2, 2).unwrap();
        let x = LatentVideo::from_vec(shape, vec![1.0, -2.0, 0.5, 9.0]).unwrap();
        let pack = ConditioningPack::unconditioned(shape);
        let req = DenoiserRequest::new(&x, &pack, 100, CondHandle::Full).unwrap();
        let out =
            gaussian_oracle_denoise(&req, Prior::Scalar(2.0), Prior::Scalar(0.25), &sched, PredictionKind::X0).unwrap();
        assert!(out.data().iter().all(|&v| v == 2.0));
        let clean = DenoiserRequest::new(&x, &pack, 0, CondHandle::Full).unwrap();
        let out = gaussian_oracle_denoise(&clean, Prior::Scalar(2.0), Prior::Scalar(0.25), &sched, PredictionKind::X0)
            .unwrap();
        assert_eq!(out, x);
    }

    #[test]
    fn rejects_bad_priors() {
        assert!(GaussianOracle::isotropic(0.0, 0.0).is_err());
        assert!(GaussianOracle::isotropic(f64::NAN, 1.0).is_err());
        let sched = NoiseSchedule::quad(10, 1e-3, 2e-2).unwrap();
        let shape = Shape::new(1, 1, 1, 2).unwrap();
        let x = LatentVideo::zeros(shape);
        let pack = ConditioningPack::unconditioned(shape);
        let req = DenoiserRequest::new(&x, &pack, 3, CondHandle::Absent).unwrap();
        let o = GaussianOracle::new(Prior::PerCoord(vec![0.0; 3]), Prior::Scalar(1.0)).unwrap();
        assert!(o.denoise(&req, &sched, PredictionKind::V).is_err());
    }
}
