//! PDE families, reference solvers, and input-function samplers.
//!
//! A [`PdeFamily`] bundles the residual form, boundary condition, forcing,
//! domain and horizon of one solution operator. The same family drives both
//! the finite-difference data solvers in [`solver`] and the physics-informed
//! residual assembled in [`crate::pitune`], so generated data and the
//! training objective always describe the same equation.

pub mod dataset;
pub mod sampler;
pub mod solver;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Closed-form forcing `f(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum Forcing {
    Zero,
    /// `amp * sin(freq * x)`
    Sin { amp: f64, freq: f64 },
    /// `amp * cos(freq * x)`
    Cos { amp: f64, freq: f64 },
    /// `amp * exp(x)`
    Exp { amp: f64 },
    /// `amp * x^n`
    Power { amp: f64, n: i32 },
}

impl Forcing {
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            Forcing::Zero => 0.0,
            Forcing::Sin { amp, freq } => amp * (freq * x).sin(),
            Forcing::Cos { amp, freq } => amp * (freq * x).cos(),
            Forcing::Exp { amp } => amp * x.exp(),
            Forcing::Power { amp, n } => amp * x.powi(n),
        }
    }

    pub fn eval_grid(&self, xs: &[f64]) -> Vec<f64> {
        xs.iter().map(|&x| self.eval(x)).collect()
    }
}

/// Polynomial reaction `g(u) = c0 + c1 u + c2 u^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Reaction {
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
}

impl Reaction {
    pub fn new(c0: f64, c1: f64, c2: f64) -> Self {
        Reaction { c0, c1, c2 }
    }

    /// `g(u) = -u`
    pub fn linear_decay() -> Self {
        Reaction::new(0.0, -1.0, 0.0)
    }

    /// `g(u) = -5 u^2`
    pub fn strong_quadratic() -> Self {
        Reaction::new(0.0, 0.0, -5.0)
    }

    /// `g(u) = -u (1 - u)`
    pub fn logistic() -> Self {
        Reaction::new(0.0, -1.0, 1.0)
    }

    /// `g(u) = -(u - 0.5)(u - 1)`
    pub fn shifted_quadratic() -> Self {
        Reaction::new(-0.5, 1.5, -1.0)
    }

    pub fn eval(&self, u: f64) -> f64 {
        self.c0 + self.c1 * u + self.c2 * u * u
    }

    /// `g'(u)`, used for explicit step-size control.
    pub fn deriv(&self, u: f64) -> f64 {
        self.c1 + 2.0 * self.c2 * u
    }
}

/// Which reading of the nonlinear diffusion term the porous family uses.
///
/// `AsPrinted` keeps the residual `u_t - (u_xx)^m = f`, with the power taken
/// as the signed (odd) extension `sgn(s)|s|^m`. For odd `m` this is exactly
/// the plain power. For even `m` the plain power makes the equation
/// anti-diffusive wherever `u_xx < 0` and solutions blow up in finite time
/// under the benchmark initial conditions, so the signed extension is the
/// only solvable reading. `Classical` switches to the porous-medium form
/// `u_t - (sgn(u)|u|^m)_xx = f`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PorousForm {
    AsPrinted,
    Classical,
}

impl Default for PorousForm {
    fn default() -> Self {
        PorousForm::AsPrinted
    }
}

/// The equation kind plus its coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PdeKind {
    /// `u_t + nu (u^2/2)_x = mu u_xx`
    Burgers { nu: f64, mu: f64 },
    /// `u_t - (u_xx)^m = f` (or the classical form, see [`PorousForm`]).
    Porous {
        m: i32,
        #[serde(default)]
        form: PorousForm,
    },
    /// `u_t - u_xx + g(u) = f`
    DiffusionReaction { g: Reaction },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "bc", rename_all = "snake_case")]
pub enum BoundaryKind {
    Periodic,
    Dirichlet { left: f64, right: f64 },
}

/// One solution operator: equation, forcing, domain, horizon, boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdeFamily {
    #[serde(flatten)]
    pub kind: PdeKind,
    #[serde(default = "default_forcing")]
    pub forcing: Forcing,
    pub domain: (f64, f64),
    pub horizon: f64,
    #[serde(flatten)]
    pub bc: BoundaryKind,
}

fn default_forcing() -> Forcing {
    Forcing::Zero
}

impl PdeFamily {
    /// Viscous conservative-flux equation on `[0, 2pi]`, periodic, no forcing.
    pub fn burgers(nu: f64, mu: f64, horizon: f64) -> Self {
        PdeFamily {
            kind: PdeKind::Burgers { nu, mu },
            forcing: Forcing::Zero,
            domain: (0.0, 2.0 * std::f64::consts::PI),
            horizon,
            bc: BoundaryKind::Periodic,
        }
    }

    /// Nonlinear-diffusion equation of order `m` on `[0, 2]`, `T = 0.01`,
    /// periodic by default.
    pub fn porous(m: i32, forcing: Forcing) -> Self {
        PdeFamily {
            kind: PdeKind::Porous {
                m,
                form: PorousForm::AsPrinted,
            },
            forcing,
            domain: (0.0, 2.0),
            horizon: 0.01,
            bc: BoundaryKind::Periodic,
        }
    }

    /// Reaction-diffusion equation on `[0, 2]`, `T = 0.01`, Dirichlet
    /// boundary values pinned to 1.
    pub fn diffusion_reaction(g: Reaction, forcing: Forcing) -> Self {
        PdeFamily {
            kind: PdeKind::DiffusionReaction { g },
            forcing,
            domain: (0.0, 2.0),
            horizon: 0.01,
            bc: BoundaryKind::Dirichlet {
                left: 1.0,
                right: 1.0,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon <= 0.0 {
            return Err(Error::InvalidConfig("horizon must be positive".into()));
        }
        if self.domain.1 <= self.domain.0 {
            return Err(Error::InvalidConfig(format!(
                "degenerate domain [{}, {}]",
                self.domain.0, self.domain.1
            )));
        }
        match (&self.kind, &self.bc) {
            (PdeKind::Burgers { mu, .. }, BoundaryKind::Periodic) => {
                if *mu <= 0.0 {
                    return Err(Error::InvalidConfig("burgers needs mu > 0".into()));
                }
                Ok(())
            }
            (PdeKind::Burgers { .. }, _) => Err(Error::InvalidConfig(
                "burgers family is periodic".into(),
            )),
            (PdeKind::Porous { m, .. }, _) => {
                if !(1..=4).contains(m) {
                    return Err(Error::InvalidConfig(format!(
                        "porous order m = {m} outside 1..=4"
                    )));
                }
                Ok(())
            }
            (PdeKind::DiffusionReaction { .. }, BoundaryKind::Dirichlet { .. }) => Ok(()),
            (PdeKind::DiffusionReaction { .. }, _) => Err(Error::InvalidConfig(
                "diffusion-reaction family uses Dirichlet boundaries".into(),
            )),
        }
    }

    pub fn length(&self) -> f64 {
        self.domain.1 - self.domain.0
    }

    pub fn is_periodic(&self) -> bool {
        matches!(self.bc, BoundaryKind::Periodic)
    }
}

/// Signed (odd) power `sgn(s) |s|^m`; equals `s^m` for odd `m`.
pub fn signed_power(s: f64, m: i32) -> f64 {
    s.signum() * s.abs().powi(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation_catches_bad_families() {
        let mut fam = PdeFamily::burgers(0.5, 0.02, 1.0);
        fam.validate().unwrap();
        fam.horizon = 0.0;
        assert!(fam.validate().is_err());

        let mut fam = PdeFamily::porous(2, Forcing::Zero);
        fam.validate().unwrap();
        if let PdeKind::Porous { m, .. } = &mut fam.kind {
            *m = 7;
        }
        assert!(fam.validate().is_err());
    }

    #[test]
    fn reaction_polynomials_match_their_closed_forms() {
        let g = Reaction::shifted_quadratic();
        for u in [-1.0, 0.0, 0.5, 1.0, 2.0] {
            let direct = -(u - 0.5) * (u - 1.0);
            assert!((g.eval(u) - direct).abs() < 1e-14);
        }
        assert_eq!(Reaction::linear_decay().eval(2.0), -2.0);
        assert_eq!(Reaction::strong_quadratic().eval(2.0), -20.0);
        let logi = Reaction::logistic();
        assert!((logi.eval(0.25) - (-0.25 * 0.75)).abs() < 1e-15);
    }

    #[test]
    fn signed_power_is_odd_extension() {
        assert_eq!(signed_power(-2.0, 3), -8.0);
        assert_eq!(signed_power(-2.0, 2), -4.0);
        assert_eq!(signed_power(2.0, 2), 4.0);
        assert_eq!(signed_power(0.0, 2), 0.0);
    }

    #[test]
    fn forcing_closed_forms() {
        let f = Forcing::Sin {
            amp: 0.2,
            freq: 2.0 * std::f64::consts::PI,
        };
        assert!((f.eval(0.25) - 0.2).abs() < 1e-14);
        let f = Forcing::Power { amp: 1.0, n: 2 };
        assert_eq!(f.eval(3.0), 9.0);
    }
}
