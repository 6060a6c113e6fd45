//! Domain types and GLM primitives shared by every estimator.
//!
//! The causal structure has binary exposure `A`, binary mediator `M` (or a
//! second exposure `A2` in the time-varying setting), binary outcome `Y`,
//! discrete baseline covariates `Z`, and a binary confounder `U` that is
//! measured only in external data. All three conditional models are
//! Bernoulli-logit:
//!
//! ```text
//! logit P(U=1) = gamma0 + gamma_a*A + z'gamma_z
//! logit P(M=1) = beta0  + beta_a*A  + z'beta_z + beta_u*U
//! logit P(Y=1) = alpha0 + alpha_a*A + z'alpha_z + alpha_m*M + alpha_am*A*M + alpha_u*U
//! ```
//!
//! The flattened coefficient order is fixed as `theta_u || theta_m || theta_y`
//! with Z blocks in column order, so priors, gradients, and posterior draws
//! index consistently everywhere.

use serde::{Deserialize, Serialize};

use crate::error::{BdfError, Result};

/// Inverse logit link, saturating (without NaN) at the f64 boundaries.
#[inline]
pub fn logit_inv(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Probability clamp applied inside likelihood evaluation. Prevents
/// log-of-zero from extreme HMC proposals while perturbing the target
/// negligibly.
pub const PROB_CLAMP: f64 = 1e-12;

#[inline]
pub(crate) fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// Bernoulli log-likelihood `y*ln(p) + (1-y)*ln(1-p)`.
///
/// A probability of exactly 0 or 1 signals upstream saturation and is
/// rejected rather than silently returning infinity.
#[inline]
pub fn bernoulli_loglik(y: u8, p: f64) -> Result<f64> {
    if p <= 0.0 || p >= 1.0 {
        return Err(BdfError::ProbabilityBoundary(p));
    }
    Ok(if y == 1 { p.ln() } else { (1.0 - p).ln() })
}

/// Clamped variant used in hot likelihood loops.
#[inline]
pub(crate) fn bernoulli_loglik_clamped(y: u8, p: f64) -> f64 {
    let p = clamp_prob(p);
    if y == 1 {
        p.ln()
    } else {
        (1.0 - p).ln()
    }
}

/// Which conditional model a linear predictor belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    U,
    M,
    Y,
}

/// Structural switches for the parametric models.
///
/// `u_exposure_induced` controls whether `U` has `A` as a parent (and hence
/// whether `theta_u` carries a `gamma_a` coordinate); `include_am_interaction`
/// controls the `alpha_am` coordinate of `theta_y`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub z_dim: usize,
    pub include_am_interaction: bool,
    pub u_exposure_induced: bool,
}

impl ModelSpec {
    pub fn new(z_dim: usize, include_am_interaction: bool, u_exposure_induced: bool) -> Self {
        ModelSpec {
            z_dim,
            include_am_interaction,
            u_exposure_induced,
        }
    }

    pub fn dim_u(&self) -> usize {
        1 + usize::from(self.u_exposure_induced) + self.z_dim
    }

    pub fn dim_m(&self) -> usize {
        3 + self.z_dim
    }

    pub fn dim_y(&self) -> usize {
        4 + self.z_dim + usize::from(self.include_am_interaction)
    }

    /// Total flattened dimension `dim_u + dim_m + dim_y`.
    pub fn dim(&self) -> usize {
        self.dim_u() + self.dim_m() + self.dim_y()
    }

    /// Coefficient names in flattened order.
    pub fn coef_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.dim());
        names.push("gamma0".to_string());
        if self.u_exposure_induced {
            names.push("gamma_a".to_string());
        }
        for j in 1..=self.z_dim {
            names.push(format!("gamma_z{j}"));
        }
        names.push("beta0".to_string());
        names.push("beta_a".to_string());
        for j in 1..=self.z_dim {
            names.push(format!("beta_z{j}"));
        }
        names.push("beta_u".to_string());
        names.push("alpha0".to_string());
        names.push("alpha_a".to_string());
        for j in 1..=self.z_dim {
            names.push(format!("alpha_z{j}"));
        }
        names.push("alpha_m".to_string());
        if self.include_am_interaction {
            names.push("alpha_am".to_string());
        }
        names.push("alpha_u".to_string());
        names
    }
}

/// One observation's parent values for a linear predictor. Optional fields
/// may be absent when the role does not require them.
#[derive(Debug, Clone, Copy)]
pub struct RowParents<'a> {
    pub z: &'a [f64],
    pub a: f64,
    pub m: Option<f64>,
    pub u: Option<f64>,
}

/// Coefficient blocks in the fixed `theta_u || theta_m || theta_y` layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub spec: ModelSpec,
    pub theta_u: Vec<f64>,
    pub theta_m: Vec<f64>,
    pub theta_y: Vec<f64>,
}

impl ParamVector {
    pub fn new(spec: ModelSpec, theta_u: Vec<f64>, theta_m: Vec<f64>, theta_y: Vec<f64>) -> Result<Self> {
        if theta_u.len() != spec.dim_u() {
            return Err(BdfError::DimensionMismatch {
                expected: spec.dim_u(),
                got: theta_u.len(),
                context: "theta_u",
            });
        }
        if theta_m.len() != spec.dim_m() {
            return Err(BdfError::DimensionMismatch {
                expected: spec.dim_m(),
                got: theta_m.len(),
                context: "theta_m",
            });
        }
        if theta_y.len() != spec.dim_y() {
            return Err(BdfError::DimensionMismatch {
                expected: spec.dim_y(),
                got: theta_y.len(),
                context: "theta_y",
            });
        }
        Ok(ParamVector {
            spec,
            theta_u,
            theta_m,
            theta_y,
        })
    }

    pub fn zeros(spec: ModelSpec) -> Self {
        ParamVector {
            spec,
            theta_u: vec![0.0; spec.dim_u()],
            theta_m: vec![0.0; spec.dim_m()],
            theta_y: vec![0.0; spec.dim_y()],
        }
    }

    pub fn from_flat(spec: ModelSpec, flat: &[f64]) -> Result<Self> {
        if flat.len() != spec.dim() {
            return Err(BdfError::DimensionMismatch {
                expected: spec.dim(),
                got: flat.len(),
                context: "flattened parameter vector",
            });
        }
        let (u, rest) = flat.split_at(spec.dim_u());
        let (m, y) = rest.split_at(spec.dim_m());
        Ok(ParamVector {
            spec,
            theta_u: u.to_vec(),
            theta_m: m.to_vec(),
            theta_y: y.to_vec(),
        })
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.spec.dim());
        flat.extend_from_slice(&self.theta_u);
        flat.extend_from_slice(&self.theta_m);
        flat.extend_from_slice(&self.theta_y);
        flat
    }

    pub fn gamma0(&self) -> f64 {
        self.theta_u[0]
    }

    /// `gamma_a`, or 0 when the structure has no `A -> U` edge.
    pub fn gamma_a(&self) -> f64 {
        if self.spec.u_exposure_induced {
            self.theta_u[1]
        } else {
            0.0
        }
    }

    pub fn gamma_z(&self) -> &[f64] {
        let off = 1 + usize::from(self.spec.u_exposure_induced);
        &self.theta_u[off..]
    }

    pub fn beta0(&self) -> f64 {
        self.theta_m[0]
    }

    pub fn beta_a(&self) -> f64 {
        self.theta_m[1]
    }

    pub fn beta_z(&self) -> &[f64] {
        &self.theta_m[2..2 + self.spec.z_dim]
    }

    pub fn beta_u(&self) -> f64 {
        self.theta_m[2 + self.spec.z_dim]
    }

    pub fn alpha0(&self) -> f64 {
        self.theta_y[0]
    }

    pub fn alpha_a(&self) -> f64 {
        self.theta_y[1]
    }

    pub fn alpha_z(&self) -> &[f64] {
        &self.theta_y[2..2 + self.spec.z_dim]
    }

    pub fn alpha_m(&self) -> f64 {
        self.theta_y[2 + self.spec.z_dim]
    }

    /// `alpha_am`, or 0 when the model carries no A-M interaction.
    pub fn alpha_am(&self) -> f64 {
        if self.spec.include_am_interaction {
            self.theta_y[3 + self.spec.z_dim]
        } else {
            0.0
        }
    }

    pub fn alpha_u(&self) -> f64 {
        *self.theta_y.last().unwrap()
    }

    #[inline]
    pub fn eta_u(&self, a: f64, z: &[f64]) -> f64 {
        self.gamma0() + self.gamma_a() * a + dot(self.gamma_z(), z)
    }

    #[inline]
    pub fn eta_m(&self, a: f64, z: &[f64], u: f64) -> f64 {
        self.beta0() + self.beta_a() * a + dot(self.beta_z(), z) + self.beta_u() * u
    }

    #[inline]
    pub fn eta_y(&self, a: f64, z: &[f64], m: f64, u: f64) -> f64 {
        self.alpha0()
            + self.alpha_a() * a
            + dot(self.alpha_z(), z)
            + self.alpha_m() * m
            + self.alpha_am() * a * m
            + self.alpha_u() * u
    }

    /// Conditional mean `E[Y | a, z, m, u]`.
    #[inline]
    pub fn mean_y(&self, a: f64, z: &[f64], m: f64, u: f64) -> f64 {
        logit_inv(self.eta_y(a, z, m, u))
    }

    /// `P(U=1 | a, z)`.
    #[inline]
    pub fn prob_u(&self, a: f64, z: &[f64]) -> f64 {
        logit_inv(self.eta_u(a, z))
    }

    /// `P(M=1 | a, z, u)`.
    #[inline]
    pub fn prob_m(&self, a: f64, z: &[f64], u: f64) -> f64 {
        logit_inv(self.eta_m(a, z, u))
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Linear predictor for `role` given a row's parent values.
pub fn linear_predictor(role: Role, row: RowParents, theta: &ParamVector) -> Result<f64> {
    if row.z.len() != theta.spec.z_dim {
        return Err(BdfError::DimensionMismatch {
            expected: theta.spec.z_dim,
            got: row.z.len(),
            context: "z covariate vector",
        });
    }
    match role {
        Role::U => Ok(theta.eta_u(row.a, row.z)),
        Role::M => {
            let u = row.u.ok_or(BdfError::MissingParent {
                role: "M",
                parent: "u",
            })?;
            Ok(theta.eta_m(row.a, row.z, u))
        }
        Role::Y => {
            let m = row.m.ok_or(BdfError::MissingParent {
                role: "Y",
                parent: "m",
            })?;
            let u = row.u.ok_or(BdfError::MissingParent {
                role: "Y",
                parent: "u",
            })?;
            Ok(theta.eta_y(row.a, row.z, m, u))
        }
    }
}

/// An intervention regime. Causal contrasts compare two regimes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    /// Set the exposure deterministically, mediator left alone.
    SetExposure { a: u8 },
    /// Set both exposure and mediator deterministically (controlled direct
    /// effects).
    SetExposureAndMediator { a: u8, m: u8 },
    /// Set the exposure and draw the mediator from its distribution under
    /// exposure level `mediator_law_a` (randomized interventional analogs).
    RandomizedMediator { a: u8, mediator_law_a: u8 },
    /// Set both exposures of a two-period longitudinal regime.
    SetBothExposures { a1: u8, a2: u8 },
}

impl Regime {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Regime::SetExposure { a } => a <= 1,
            Regime::SetExposureAndMediator { a, m } => a <= 1 && m <= 1,
            Regime::RandomizedMediator { a, mediator_law_a } => a <= 1 && mediator_law_a <= 1,
            Regime::SetBothExposures { a1, a2 } => a1 <= 1 && a2 <= 1,
        };
        if ok {
            Ok(())
        } else {
            Err(BdfError::Config("regime levels must be in {0,1}".into()))
        }
    }
}
