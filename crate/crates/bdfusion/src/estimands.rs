//! Population causal-contrast posteriors computed from parameter draws.
//!
//! Two marginalization strategies are provided: a closed-form route that
//! standardizes over the covariate pattern table with Bayesian-bootstrap
//! weights, and a simulation route that follows the per-draw sampling
//! schemes unit by unit over the empirical covariate distribution.

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::data::{CovariatePatternTable, Dataset};
use crate::error::{BdfError, Result};
use crate::model::{ParamVector, Regime};
use crate::posterior::PosteriorDraws;
use crate::rng::substream_rng;

/// Which population contrast a result estimates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EstimandKind {
    Rnde,
    Rnie,
    Nde,
    Nie,
    Cde,
    AceTvc,
    TotalEffect,
}

/// Marginalization strategy that produced a result.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EstimandMethod {
    Sim,
    Cf,
}

/// Posterior summary of a population causal contrast.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimandResult {
    pub kind: EstimandKind,
    pub method: EstimandMethod,
    /// Posterior mean.
    pub point: f64,
    /// 2.5% quantile.
    pub ci_low: f64,
    /// 97.5% quantile.
    pub ci_high: f64,
    /// One population contrast per retained posterior draw.
    pub draws: Vec<f64>,
}

impl EstimandResult {
    fn summarize(kind: EstimandKind, method: EstimandMethod, draws: Vec<f64>) -> Self {
        let point = draws.iter().sum::<f64>() / draws.len() as f64;
        let ci_low = quantile(&draws, 0.025);
        let ci_high = quantile(&draws, 0.975);
        EstimandResult {
            kind,
            method,
            point,
            ci_low,
            ci_high,
            draws,
        }
    }

    pub fn width(&self) -> f64 {
        self.ci_high - self.ci_low
    }

    pub fn to_json(&self, include_draws: bool) -> Result<String> {
        if include_draws {
            Ok(serde_json::to_string_pretty(self)?)
        } else {
            let slim = EstimandResult {
                draws: Vec::new(),
                ..self.clone()
            };
            Ok(serde_json::to_string_pretty(&slim)?)
        }
    }
}

/// Equal-tailed quantile with linear interpolation (type 7).
pub fn quantile(values: &[f64], p: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n as f64 - 1.0) * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Nonnegative weights over observations or covariate patterns, summing to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapWeights(Vec<f64>);

impl BootstrapWeights {
    pub fn weights(&self) -> &[f64] {
        &self.0
    }
}

/// Sample Dirichlet(alpha) weights via the Gamma-normalization construction.
pub fn dirichlet_sample<R: Rng>(alpha: &[f64], rng: &mut R) -> Result<BootstrapWeights> {
    if alpha.is_empty() || alpha.iter().any(|&a| !(a > 0.0)) {
        return Err(BdfError::NonPositiveAlpha);
    }
    let mut draws = Vec::with_capacity(alpha.len());
    let mut total = 0.0;
    for &a in alpha {
        let g = Gamma::new(a, 1.0)
            .map_err(|_| BdfError::NonPositiveAlpha)?
            .sample(rng);
        draws.push(g);
        total += g;
    }
    if total <= 0.0 {
        // all-zero Gamma draws can occur for tiny alphas; fall back to uniform
        let k = alpha.len() as f64;
        return Ok(BootstrapWeights(vec![1.0 / k; alpha.len()]));
    }
    for d in &mut draws {
        *d /= total;
    }
    Ok(BootstrapWeights(draws))
}

/// Closed-form randomized natural direct effect for one covariate pattern:
///
/// ```text
/// sum_m p(m | a=0, z) * [ sum_u E[Y|1,u,m,z] p(u|1,z) - sum_u E[Y|0,u,m,z] p(u|0,z) ]
/// ```
///
/// with `p(m|a=0,z) = sum_u p(m|a=0,u,z) p(u|a=0,z)`.
pub fn rnde_closed_form(theta: &ParamVector, z: &[f64]) -> f64 {
    let pu0 = theta.prob_u(0.0, z);
    let pu1 = theta.prob_u(1.0, z);
    let mut total = 0.0;
    for m in [0.0, 1.0] {
        // mediator law under a = 0
        let pm1_given = |u: f64| theta.prob_m(0.0, z, u);
        let pm1 = pm1_given(0.0) * (1.0 - pu0) + pm1_given(1.0) * pu0;
        let pm = if m == 1.0 { pm1 } else { 1.0 - pm1 };
        let arm = |a: f64, pu: f64| {
            theta.mean_y(a, z, m, 0.0) * (1.0 - pu) + theta.mean_y(a, z, m, 1.0) * pu
        };
        total += pm * (arm(1.0, pu1) - arm(0.0, pu0));
    }
    total
}

/// Closed-form population contrast for a pair of fully deterministic regimes
/// (controlled direct effects and two-period exposures), exact sum over `u`.
pub fn deterministic_closed_form(theta: &ParamVector, z: &[f64], g: Regime, g_prime: Regime) -> Result<f64> {
    let arm = |r: Regime| -> Result<f64> {
        let (a, m) = match r {
            Regime::SetExposureAndMediator { a, m } => (f64::from(a), f64::from(m)),
            Regime::SetBothExposures { a1, a2 } => (f64::from(a1), f64::from(a2)),
            _ => return Err(BdfError::UnsupportedRegime("closed form requires deterministic regimes")),
        };
        let pu = theta.prob_u(a, z);
        Ok(theta.mean_y(a, z, m, 0.0) * (1.0 - pu) + theta.mean_y(a, z, m, 1.0) * pu)
    };
    Ok(arm(g)? - arm(g_prime)?)
}

/// Closed-form BDF estimate: per draw, Dirichlet weights over covariate
/// patterns times the pattern-level closed form.
pub fn bdf_cf_estimate(
    draws: &PosteriorDraws,
    patterns: &CovariatePatternTable,
    seed: u64,
) -> Result<EstimandResult> {
    cf_over_patterns(draws, patterns, seed, EstimandKind::Rnde, |theta, z| {
        Ok(rnde_closed_form(theta, z))
    })
}

/// Generic closed-form estimator over the pattern table.
pub fn cf_over_patterns<F>(
    draws: &PosteriorDraws,
    patterns: &CovariatePatternTable,
    seed: u64,
    kind: EstimandKind,
    phi: F,
) -> Result<EstimandResult>
where
    F: Fn(&ParamVector, &[f64]) -> Result<f64>,
{
    if patterns.is_empty() {
        return Err(BdfError::InvalidData("empty covariate pattern table".into()));
    }
    let alpha: Vec<f64> = patterns.xi().iter().map(|&c| c as f64).collect();
    let mut out = Vec::with_capacity(draws.n_draws());
    for b in 0..draws.n_draws() {
        let theta = draws.theta(b);
        let mut rng = substream_rng(seed, &[0xCF, b as u64]);
        let weights = dirichlet_sample(&alpha, &mut rng)?;
        let mut value = 0.0;
        for (k, &w) in weights.weights().iter().enumerate() {
            value += w * phi(&theta, patterns.pattern(k))?;
        }
        out.push(value);
    }
    Ok(EstimandResult::summarize(kind, EstimandMethod::Cf, out))
}

#[inline]
fn bern<R: Rng>(rng: &mut R, p: f64) -> f64 {
    if rng.gen::<f64>() < p {
        1.0
    } else {
        0.0
    }
}

/// Per-unit simulation scheme. Each variant fixes both the MC draw order and
/// which draws are shared between the two regimes, so paired comparisons
/// (e.g. the NDE + NIE decomposition) cancel exactly at shared seeds.
#[derive(Debug, Clone, Copy)]
enum SimScheme {
    /// Randomized-mediator regimes; independent `u` draws per regime.
    Randomized { g: RandomizedArm, g_prime: RandomizedArm },
    /// Deterministic regimes with exposure-induced `u` (TVC algorithm).
    Deterministic { g: (f64, f64), g_prime: (f64, f64) },
    /// Natural-mediator estimands with baseline `u` shared across regimes.
    Natural {
        a: f64,
        a_star: f64,
        kind: NaturalKind,
    },
    /// Controlled direct effect with baseline `u` shared across regimes.
    ControlledBaseline { a: f64, a_star: f64, m: f64 },
}

#[derive(Debug, Clone, Copy)]
struct RandomizedArm {
    a_set: f64,
    a_med: f64,
}

#[derive(Debug, Clone, Copy)]
enum NaturalKind {
    Nde,
    Nie,
    Total,
}

fn unit_contrast<R: Rng>(theta: &ParamVector, z: &[f64], scheme: SimScheme, rng: &mut R) -> f64 {
    match scheme {
        SimScheme::Randomized { g, g_prime } => {
            let mut arm = |r: RandomizedArm| {
                // The randomized mediator is drawn from its population law,
                // so its confounder draw is independent of the outcome's.
                let u_med = bern(rng, theta.prob_u(r.a_med, z));
                let u_y = bern(rng, theta.prob_u(r.a_set, z));
                let m = bern(rng, theta.prob_m(r.a_med, z, u_med));
                theta.mean_y(r.a_set, z, m, u_y)
            };
            let y_g = arm(g);
            let y_gp = arm(g_prime);
            y_g - y_gp
        }
        SimScheme::Deterministic { g, g_prime } => {
            let mut arm = |(a, m): (f64, f64)| {
                let u = bern(rng, theta.prob_u(a, z));
                theta.mean_y(a, z, m, u)
            };
            let y_g = arm(g);
            let y_gp = arm(g_prime);
            y_g - y_gp
        }
        SimScheme::Natural { a, a_star, kind } => {
            let u = bern(rng, theta.prob_u(0.0, z));
            let m_a = bern(rng, theta.prob_m(a, z, u));
            let m_astar = bern(rng, theta.prob_m(a_star, z, u));
            match kind {
                NaturalKind::Nde => theta.mean_y(a, z, m_astar, u) - theta.mean_y(a_star, z, m_astar, u),
                NaturalKind::Nie => theta.mean_y(a, z, m_a, u) - theta.mean_y(a, z, m_astar, u),
                NaturalKind::Total => theta.mean_y(a, z, m_a, u) - theta.mean_y(a_star, z, m_astar, u),
            }
        }
        SimScheme::ControlledBaseline { a, a_star, m } => {
            let u = bern(rng, theta.prob_u(0.0, z));
            theta.mean_y(a, z, m, u) - theta.mean_y(a_star, z, m, u)
        }
    }
}

fn sim_over_units(
    draws: &PosteriorDraws,
    main: &Dataset,
    seed: u64,
    kind: EstimandKind,
    scheme: SimScheme,
) -> EstimandResult {
    let n = main.n();
    let mut out = Vec::with_capacity(draws.n_draws());
    for b in 0..draws.n_draws() {
        let theta = draws.theta(b);
        let mut total = 0.0;
        for i in 0..n {
            let mut rng = substream_rng(seed, &[0x51, b as u64, i as u64]);
            total += unit_contrast(&theta, main.z_row(i), scheme, &mut rng);
        }
        out.push(total / n as f64);
    }
    EstimandResult::summarize(kind, EstimandMethod::Sim, out)
}

fn scheme_for_pair(g: Regime, g_prime: Regime) -> Result<(EstimandKind, SimScheme)> {
    g.validate()?;
    g_prime.validate()?;
    match (g, g_prime) {
        (
            Regime::RandomizedMediator { a: a1, mediator_law_a: l1 },
            Regime::RandomizedMediator { a: a2, mediator_law_a: l2 },
        ) => {
            let kind = if a1 != a2 && l1 == l2 {
                EstimandKind::Rnde
            } else if a1 == a2 && l1 != l2 {
                EstimandKind::Rnie
            } else {
                EstimandKind::Rnde
            };
            Ok((
                kind,
                SimScheme::Randomized {
                    g: RandomizedArm {
                        a_set: f64::from(a1),
                        a_med: f64::from(l1),
                    },
                    g_prime: RandomizedArm {
                        a_set: f64::from(a2),
                        a_med: f64::from(l2),
                    },
                },
            ))
        }
        (
            Regime::SetExposureAndMediator { a: a1, m: m1 },
            Regime::SetExposureAndMediator { a: a2, m: m2 },
        ) => Ok((
            EstimandKind::Cde,
            SimScheme::Deterministic {
                g: (f64::from(a1), f64::from(m1)),
                g_prime: (f64::from(a2), f64::from(m2)),
            },
        )),
        (
            Regime::SetBothExposures { a1, a2 },
            Regime::SetBothExposures { a1: b1, a2: b2 },
        ) => Ok((
            EstimandKind::AceTvc,
            SimScheme::Deterministic {
                g: (f64::from(a1), f64::from(a2)),
                g_prime: (f64::from(b1), f64::from(b2)),
            },
        )),
        _ => Err(BdfError::UnsupportedRegime(
            "regime pair must be of matching kinds (randomized_M, set_A_and_M, or set_A1_A2)",
        )),
    }
}

/// Simulation-based BDF estimate for a supported regime pair, marginalizing
/// over the empirical covariate distribution (one full pass over the main
/// data per draw).
pub fn bdf_sim_estimate(
    draws: &PosteriorDraws,
    main: &Dataset,
    regime_pair: (Regime, Regime),
    seed: u64,
) -> Result<EstimandResult> {
    let (kind, scheme) = scheme_for_pair(regime_pair.0, regime_pair.1)?;
    Ok(sim_over_units(draws, main, seed, kind, scheme))
}

/// rNDE regime pair comparing `a=1` to `a=0` with the mediator drawn from
/// its distribution under `a=0`.
pub fn rnde_regimes() -> (Regime, Regime) {
    (
        Regime::RandomizedMediator { a: 1, mediator_law_a: 0 },
        Regime::RandomizedMediator { a: 0, mediator_law_a: 0 },
    )
}

fn require_baseline_u(draws: &PosteriorDraws, estimand: &'static str) -> Result<()> {
    if draws.spec.u_exposure_induced {
        return Err(BdfError::NotIdentified {
            estimand,
            requirement: "U must not be exposure-induced (u_exposure_induced = false)",
        });
    }
    Ok(())
}

/// Natural direct effect `E[Y^{a M^{a*}} - Y^{a* M^{a*}}]`.
pub fn estimate_nde(
    draws: &PosteriorDraws,
    main: &Dataset,
    a: u8,
    a_star: u8,
    seed: u64,
) -> Result<EstimandResult> {
    require_baseline_u(draws, "NDE")?;
    Ok(sim_over_units(
        draws,
        main,
        seed,
        EstimandKind::Nde,
        SimScheme::Natural {
            a: f64::from(a),
            a_star: f64::from(a_star),
            kind: NaturalKind::Nde,
        },
    ))
}

/// Natural indirect effect `E[Y^{a M^{a}} - Y^{a M^{a*}}]`.
pub fn estimate_nie(
    draws: &PosteriorDraws,
    main: &Dataset,
    a: u8,
    a_star: u8,
    seed: u64,
) -> Result<EstimandResult> {
    require_baseline_u(draws, "NIE")?;
    Ok(sim_over_units(
        draws,
        main,
        seed,
        EstimandKind::Nie,
        SimScheme::Natural {
            a: f64::from(a),
            a_star: f64::from(a_star),
            kind: NaturalKind::Nie,
        },
    ))
}

/// Total effect `E[Y^{a M^{a}} - Y^{a* M^{a*}}]` under baseline `U`.
pub fn estimate_total_effect(
    draws: &PosteriorDraws,
    main: &Dataset,
    a: u8,
    a_star: u8,
    seed: u64,
) -> Result<EstimandResult> {
    require_baseline_u(draws, "total effect")?;
    Ok(sim_over_units(
        draws,
        main,
        seed,
        EstimandKind::TotalEffect,
        SimScheme::Natural {
            a: f64::from(a),
            a_star: f64::from(a_star),
            kind: NaturalKind::Total,
        },
    ))
}

/// Randomized interventional analog of the NIE: both regimes set `A = a`
/// while the mediator is drawn from its law under `a` versus `a*`, with
/// separate `u` draws per regime.
pub fn estimate_rnie(
    draws: &PosteriorDraws,
    main: &Dataset,
    a: u8,
    a_star: u8,
    seed: u64,
) -> Result<EstimandResult> {
    bdf_sim_estimate(
        draws,
        main,
        (
            Regime::RandomizedMediator { a, mediator_law_a: a },
            Regime::RandomizedMediator { a, mediator_law_a: a_star },
        ),
        seed,
    )
}

/// Controlled direct effect `E[Y^{am} - Y^{a*m}]`. With exposure-induced `U`
/// this routes through the two-period (TVC) algorithm; with baseline `U` the
/// confounder draw is shared across regimes.
pub fn estimate_cde(
    draws: &PosteriorDraws,
    main: &Dataset,
    a: u8,
    a_star: u8,
    m: u8,
    seed: u64,
) -> Result<EstimandResult> {
    if draws.spec.u_exposure_induced {
        let res = bdf_sim_estimate(
            draws,
            main,
            (
                Regime::SetExposureAndMediator { a, m },
                Regime::SetExposureAndMediator { a: a_star, m },
            ),
            seed,
        )?;
        Ok(EstimandResult { kind: EstimandKind::Cde, ..res })
    } else {
        Ok(sim_over_units(
            draws,
            main,
            seed,
            EstimandKind::Cde,
            SimScheme::ControlledBaseline {
                a: f64::from(a),
                a_star: f64::from(a_star),
                m: f64::from(m),
            },
        ))
    }
}

/// Average causal effect of a two-period exposure regime `(a1, a2)` versus
/// `(a1', a2')`, with the mediator slot of the outcome model playing the
/// role of the second exposure.
pub fn estimate_ace_tvc(
    draws: &PosteriorDraws,
    main: &Dataset,
    g: (u8, u8),
    g_prime: (u8, u8),
    seed: u64,
) -> Result<EstimandResult> {
    bdf_sim_estimate(
        draws,
        main,
        (
            Regime::SetBothExposures { a1: g.0, a2: g.1 },
            Regime::SetBothExposures { a1: g_prime.0, a2: g_prime.1 },
        ),
        seed,
    )
}

/// Closed-form ACE for the two-period setting over the pattern table.
pub fn estimate_ace_tvc_cf(
    draws: &PosteriorDraws,
    patterns: &CovariatePatternTable,
    g: (u8, u8),
    g_prime: (u8, u8),
    seed: u64,
) -> Result<EstimandResult> {
    let rg = Regime::SetBothExposures { a1: g.0, a2: g.1 };
    let rgp = Regime::SetBothExposures { a1: g_prime.0, a2: g_prime.1 };
    cf_over_patterns(draws, patterns, seed, EstimandKind::AceTvc, move |theta, z| {
        deterministic_closed_form(theta, z, rg, rgp)
    })
}

#[cfg(test)]
mod tests;
