//! Input-function samplers: wrapped Gaussians and a fixed Fourier series.
//!
//! Sampled functions keep their closed form so they can be evaluated at
//! sensor locations, initial-condition collocation points and solver grids
//! without interpolation. Samplers are pure functions of (spec, rng state).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Distribution over input functions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum InputFunctionSpec {
    /// Bumps `exp(-d(x, mu)^2 / (2 sigma^2))` with `d` the periodic distance
    /// on the domain; `mu ~ U(mean_range)` reduced into the domain,
    /// `sigma ~ U(std_range)`. `shift` offsets the mean interval (test-time
    /// extrapolation). `components` > 1 sums that many bumps.
    WrappedGaussian {
        mean_range: (f64, f64),
        std_range: (f64, f64),
        #[serde(default)]
        shift: f64,
        #[serde(default = "one")]
        components: usize,
    },
    /// Nine-term series: four sine and four cosine modes with
    /// `w_i ~ U(weight_range)` plus a constant `w_9 ~ U(constant_range)`;
    /// `shift` offsets the constant term.
    FourierSeries {
        weight_range: (f64, f64),
        constant_range: (f64, f64),
        #[serde(default)]
        shift: f64,
    },
}

fn one() -> usize {
    1
}

impl InputFunctionSpec {
    /// The benchmark Gaussian family: means from `[2pi, 4pi]`, widths from
    /// `[0.3, 1]`.
    pub fn gaussian_default() -> Self {
        InputFunctionSpec::WrappedGaussian {
            mean_range: (2.0 * std::f64::consts::PI, 4.0 * std::f64::consts::PI),
            std_range: (0.3, 1.0),
            shift: 0.0,
            components: 1,
        }
    }

    /// The benchmark series family: `w_1..8 ~ U(-2, 2)`, `w_9 ~ U(0.1, 2)`.
    pub fn fourier_default() -> Self {
        InputFunctionSpec::FourierSeries {
            weight_range: (-2.0, 2.0),
            constant_range: (0.1, 2.0),
            shift: 0.0,
        }
    }

    /// Copy with the test-time shift applied.
    pub fn shifted(&self, delta: f64) -> Self {
        let mut s = self.clone();
        match &mut s {
            InputFunctionSpec::WrappedGaussian { shift, .. } => *shift += delta,
            InputFunctionSpec::FourierSeries { shift, .. } => *shift += delta,
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            InputFunctionSpec::WrappedGaussian {
                std_range,
                components,
                ..
            } => {
                if std_range.0 <= 0.0 {
                    return Err(Error::InvalidConfig("gaussian sigma must be > 0".into()));
                }
                if *components == 0 {
                    return Err(Error::InvalidConfig("need at least one component".into()));
                }
                Ok(())
            }
            InputFunctionSpec::FourierSeries { constant_range, .. } => {
                if constant_range.0 <= 0.0 {
                    return Err(Error::InvalidConfig(
                        "series constant term must stay positive".into(),
                    ));
                }
                Ok(())
            }
        }
    }
}

/// A concrete sampled input function in closed form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SampledFunction {
    Gaussian {
        domain: (f64, f64),
        /// (mean, sigma) per component.
        bumps: Vec<(f64, f64)>,
    },
    Fourier {
        /// `w_1..w_9` of [`fourier_series_eval`].
        weights: [f64; 9],
    },
}

impl SampledFunction {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            SampledFunction::Gaussian { domain, bumps } => {
                let len = domain.1 - domain.0;
                bumps
                    .iter()
                    .map(|&(mu, sigma)| {
                        let mut d = (x - mu).rem_euclid(len);
                        if d > 0.5 * len {
                            d = len - d;
                        }
                        (-d * d / (2.0 * sigma * sigma)).exp()
                    })
                    .sum()
            }
            SampledFunction::Fourier { weights } => fourier_series_eval(weights, x),
        }
    }

    pub fn eval_grid(&self, xs: &[f64]) -> Vec<f64> {
        xs.iter().map(|&x| self.eval(x)).collect()
    }
}

/// `w1 sin(pi x) + w2 sin(2pi x) + w3 sin(4pi x) + w4 sin(6pi x)
///  + w5 cos(pi x) + w6 cos(2pi x) + w7 cos(4pi x) + w8 cos(6pi x) + w9`.
pub fn fourier_series_eval(w: &[f64; 9], x: f64) -> f64 {
    use std::f64::consts::PI;
    w[0] * (PI * x).sin()
        + w[1] * (2.0 * PI * x).sin()
        + w[2] * (4.0 * PI * x).sin()
        + w[3] * (6.0 * PI * x).sin()
        + w[4] * (PI * x).cos()
        + w[5] * (2.0 * PI * x).cos()
        + w[6] * (4.0 * PI * x).cos()
        + w[7] * (6.0 * PI * x).cos()
        + w[8]
}

/// Draw one input function. The number of RNG draws per call is fixed by
/// the spec variant, so sample streams are stable.
pub fn sample_input(
    spec: &InputFunctionSpec,
    domain: (f64, f64),
    rng: &mut impl Rng,
) -> Result<SampledFunction> {
    spec.validate()?;
    match spec {
        InputFunctionSpec::WrappedGaussian {
            mean_range,
            std_range,
            shift,
            components,
        } => {
            let len = domain.1 - domain.0;
            let bumps = (0..*components)
                .map(|_| {
                    let mu_raw = rng.gen_range(mean_range.0 + shift..mean_range.1 + shift);
                    let mu = domain.0 + (mu_raw - domain.0).rem_euclid(len);
                    let sigma = rng.gen_range(std_range.0..std_range.1);
                    (mu, sigma)
                })
                .collect();
            Ok(SampledFunction::Gaussian { domain, bumps })
        }
        InputFunctionSpec::FourierSeries {
            weight_range,
            constant_range,
            shift,
        } => {
            let mut w = [0.0; 9];
            for slot in w.iter_mut().take(8) {
                *slot = rng.gen_range(weight_range.0..weight_range.1);
            }
            w[8] = rng.gen_range(constant_range.0..constant_range.1) + shift;
            Ok(SampledFunction::Fourier { weights: w })
        }
    }
}

/// `m` uniformly spaced sensor locations including both endpoints.
pub fn sensor_grid(domain: (f64, f64), m: usize) -> Vec<f64> {
    linspace(domain.0, domain.1, m)
}

pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let step = (hi - lo) / (n - 1) as f64;
    (0..n).map(|i| lo + step * i as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    const DOMAIN: (f64, f64) = (0.0, 2.0 * PI);

    #[test]
    fn flat_gaussian_limit() {
        // sigma -> large: u0 ~ 1 uniformly
        let f = SampledFunction::Gaussian {
            domain: DOMAIN,
            bumps: vec![(1.3, 1e3)],
        };
        for x in linspace(0.0, 2.0 * PI, 33) {
            assert!((f.eval(x) - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn wrapped_gaussian_is_periodic() {
        let f = SampledFunction::Gaussian {
            domain: DOMAIN,
            bumps: vec![(2.7, 0.4)],
        };
        assert!((f.eval(0.0) - f.eval(2.0 * PI)).abs() < 1e-15);
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let spec = InputFunctionSpec::gaussian_default();
        let a = sample_input(&spec, DOMAIN, &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
        let b = sample_input(&spec, DOMAIN, &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn constant_series_term_only() {
        let w = [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0];
        for x in linspace(0.0, 2.0, 21) {
            assert_eq!(fourier_series_eval(&w, x), 1.0);
        }
    }

    #[test]
    fn single_mode_series_value() {
        // only w2 = 1 (constant forced to 0): u(x) = sin(2 pi x), u(0.25) = 1
        let w = [0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        assert!((fourier_series_eval(&w, 0.25) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn series_triangle_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let spec = InputFunctionSpec::fourier_default();
        for _ in 0..50 {
            let f = sample_input(&spec, (0.0, 2.0), &mut rng).unwrap();
            for x in linspace(0.0, 2.0, 57) {
                assert!(f.eval(x).abs() <= 18.0);
            }
        }
    }

    #[test]
    fn shift_moves_gaussian_mean_interval() {
        let spec = InputFunctionSpec::gaussian_default().shifted(0.01);
        match spec {
            InputFunctionSpec::WrappedGaussian { shift, .. } => assert_eq!(shift, 0.01),
            _ => unreachable!(),
        }
    }

    #[test]
    fn invalid_sigma_rejected() {
        let spec = InputFunctionSpec::WrappedGaussian {
            mean_range: (0.0, 1.0),
            std_range: (0.0, 1.0),
            shift: 0.0,
            components: 1,
        };
        assert!(sample_input(&spec, DOMAIN, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }
}
