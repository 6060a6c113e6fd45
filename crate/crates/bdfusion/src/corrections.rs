//! Naive MLE g-formula estimator and the delta-gamma (DG) and interaction
//! (IX) frequentist bias corrections, with nonparametric-bootstrap
//! confidence intervals.
//!
//! All bias components come from the external data and are held fixed while
//! the main data are bootstrapped; the comparators deliberately ignore the
//! external fits' own sampling uncertainty.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{CovariatePatternTable, Dataset};
use crate::error::{BdfError, Result};
use crate::estimands::quantile;
use crate::mle::{fit_logistic_mle, FitOptions};
use crate::model::{logit_inv, ModelSpec};
use crate::rng::substream_rng;

/// Which comparator produced a result.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CorrectionMethod {
    Naive,
    Dg,
    Ix,
}

/// Point estimate with a percentile bootstrap interval.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorrectionResult {
    pub method: CorrectionMethod,
    pub point: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_boot: usize,
}

/// How the external U and M bias components are fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SaturationMode {
    /// Saturated cell frequencies when every needed cell has enough
    /// observations, parametric logistic fits otherwise.
    Auto,
    /// Always parametric.
    Parametric,
    /// Always saturated; sparse cells error.
    Saturated,
}

#[derive(Debug, Clone, Copy)]
pub struct CorrectionOptions {
    pub n_boot: usize,
    pub seed: u64,
    pub saturation: SaturationMode,
    /// Minimum external cell count for saturated component fits.
    pub min_cell: usize,
}

impl Default for CorrectionOptions {
    fn default() -> Self {
        CorrectionOptions {
            n_boot: 200,
            seed: 0,
            saturation: SaturationMode::Auto,
            min_cell: 5,
        }
    }
}

fn zkey(z: &[f64]) -> Vec<i64> {
    z.iter().map(|&v| v as i64).collect()
}

/// Naive main-data fits: mediator and outcome logistic models without `u`.
/// A constant response column is handled as a degenerate fit rather than a
/// separation error, since the implied contrast is zero.
struct NaiveFits {
    m_coefs: Option<Vec<f64>>,
    y_coefs: Option<Vec<f64>>,
    m_const: f64,
    y_const: f64,
    include_am: bool,
}

fn is_constant(col: &[u8]) -> bool {
    col.iter().all(|&v| v == col[0])
}

impl NaiveFits {
    fn fit(main: &Dataset, spec: &ModelSpec) -> Result<Self> {
        let n = main.n();
        let zd = main.z_dim();
        let m_coefs = if is_constant(main.m()) {
            None
        } else {
            let m_design = DMatrix::from_fn(n, 2 + zd, |i, j| match j {
                0 => 1.0,
                1 => f64::from(main.a()[i]),
                _ => main.z_row(i)[j - 2],
            });
            Some(fit_logistic_mle(&m_design, main.m(), FitOptions::default(), "M (naive)")?.estimate)
        };
        let y_coefs = if is_constant(main.y()) {
            None
        } else {
            let yc = 3 + zd + usize::from(spec.include_am_interaction);
            let y_design = DMatrix::from_fn(n, yc, |i, j| {
                let a = f64::from(main.a()[i]);
                let m = f64::from(main.m()[i]);
                if j == 0 {
                    1.0
                } else if j == 1 {
                    a
                } else if j < 2 + zd {
                    main.z_row(i)[j - 2]
                } else if j == 2 + zd {
                    m
                } else {
                    a * m
                }
            });
            Some(fit_logistic_mle(&y_design, main.y(), FitOptions::default(), "Y (naive)")?.estimate)
        };
        Ok(NaiveFits {
            m_coefs,
            y_coefs,
            m_const: f64::from(main.m()[0]),
            y_const: f64::from(main.y()[0]),
            include_am: spec.include_am_interaction,
        })
    }

    fn prob_m(&self, a: f64, z: &[f64]) -> f64 {
        let Some(coefs) = &self.m_coefs else {
            return self.m_const;
        };
        let mut eta = coefs[0] + coefs[1] * a;
        for (j, &zj) in z.iter().enumerate() {
            eta += coefs[2 + j] * zj;
        }
        logit_inv(eta)
    }

    fn mean_y(&self, a: f64, z: &[f64], m: f64) -> f64 {
        let Some(coefs) = &self.y_coefs else {
            return self.y_const;
        };
        let zd = z.len();
        let mut eta = coefs[0] + coefs[1] * a;
        for (j, &zj) in z.iter().enumerate() {
            eta += coefs[2 + j] * zj;
        }
        eta += coefs[2 + zd] * m;
        if self.include_am {
            eta += coefs[3 + zd] * a * m;
        }
        logit_inv(eta)
    }

    /// Uncorrected rNDE at one covariate pattern: mediator law under `a = 0`
    /// times the outcome contrast at each mediator level.
    fn rnde_uc(&self, z: &[f64]) -> f64 {
        let pm1 = self.prob_m(0.0, z);
        let mut total = 0.0;
        for m in [0.0, 1.0] {
            let pm = if m == 1.0 { pm1 } else { 1.0 - pm1 };
            total += pm * (self.mean_y(1.0, z, m) - self.mean_y(0.0, z, m));
        }
        total
    }
}

/// `P(x = 1 | cell)` lookup fit on the external data: saturated empirical
/// frequencies or a parametric logistic model.
enum CellProb {
    Saturated(BTreeMap<Vec<i64>, f64>),
    Parametric(Vec<f64>),
}

impl CellProb {
    /// Evaluate at the cell key (saturated) or covariate row (parametric);
    /// `covs` excludes the intercept.
    fn prob(&self, key: &[i64], covs: &[f64]) -> Result<f64> {
        match self {
            CellProb::Saturated(map) => map.get(key).copied().ok_or_else(|| {
                BdfError::CellSparsity(format!("no external observations in cell {key:?}"))
            }),
            CellProb::Parametric(coefs) => {
                let mut eta = coefs[0];
                for (j, &c) in covs.iter().enumerate() {
                    eta += coefs[1 + j] * c;
                }
                Ok(logit_inv(eta))
            }
        }
    }
}

/// All external-data bias components, fit once and shared by DG and IX.
pub struct ExternalComponents {
    /// `P(U=1 | z, a, m)`, keyed `[z..., a, m]`.
    u_given_zam: CellProb,
    /// `P(U=1 | z)`, keyed `[z...]`.
    u_given_z: CellProb,
    /// `P(M=1 | z, a, u)`, keyed `[z..., a, u]`.
    m_given_zau: CellProb,
    /// Outcome model `y ~ 1 + a + z + m [+ am] + u`, always parametric.
    y_coefs: Vec<f64>,
    include_am: bool,
    /// True when sparse external cells forced a parametric fallback in
    /// [`SaturationMode::Auto`].
    pub parametric_fallback: bool,
}

fn saturated_table(
    external: &Dataset,
    key_of: impl Fn(usize) -> Vec<i64>,
    x_of: impl Fn(usize) -> u8,
    min_cell: usize,
) -> (BTreeMap<Vec<i64>, f64>, bool) {
    let mut counts: BTreeMap<Vec<i64>, (usize, usize)> = BTreeMap::new();
    for i in 0..external.n() {
        let e = counts.entry(key_of(i)).or_insert((0, 0));
        e.0 += 1;
        e.1 += usize::from(x_of(i));
    }
    let dense = counts.values().all(|&(n, _)| n >= min_cell);
    let map = counts
        .into_iter()
        .map(|(k, (n, s))| (k, s as f64 / n as f64))
        .collect();
    (map, dense)
}

impl ExternalComponents {
    pub fn fit(external: &Dataset, spec: &ModelSpec, opts: &CorrectionOptions) -> Result<Self> {
        let u = external
            .u()
            .ok_or_else(|| BdfError::InvalidData("external dataset must contain `u`".into()))?;
        let n = external.n();
        let zd = external.z_dim();

        let (u_zam_map, u_zam_dense) = saturated_table(
            external,
            |i| {
                let mut k = zkey(external.z_row(i));
                k.push(i64::from(external.a()[i]));
                k.push(i64::from(external.m()[i]));
                k
            },
            |i| u[i],
            opts.min_cell,
        );
        let (u_z_map, u_z_dense) =
            saturated_table(external, |i| zkey(external.z_row(i)), |i| u[i], opts.min_cell);
        let (m_zau_map, m_zau_dense) = saturated_table(
            external,
            |i| {
                let mut k = zkey(external.z_row(i));
                k.push(i64::from(external.a()[i]));
                k.push(i64::from(u[i]));
                k
            },
            |i| external.m()[i],
            opts.min_cell,
        );

        let all_dense = u_zam_dense && u_z_dense && m_zau_dense;
        let use_saturated = match opts.saturation {
            SaturationMode::Saturated => true,
            SaturationMode::Parametric => false,
            SaturationMode::Auto => all_dense,
        };
        let parametric_fallback = opts.saturation == SaturationMode::Auto && !all_dense;
        if parametric_fallback {
            eprintln!(
                "warning: sparse external cells (< {} observations); using parametric bias-component fits",
                opts.min_cell
            );
        }

        let (u_given_zam, u_given_z, m_given_zau) = if use_saturated {
            (
                CellProb::Saturated(u_zam_map),
                CellProb::Saturated(u_z_map),
                CellProb::Saturated(m_zau_map),
            )
        } else {
            // u ~ 1 + a + m + z
            let u_design = DMatrix::from_fn(n, 3 + zd, |i, j| match j {
                0 => 1.0,
                1 => f64::from(external.a()[i]),
                2 => f64::from(external.m()[i]),
                _ => external.z_row(i)[j - 3],
            });
            let u_fit = fit_logistic_mle(&u_design, u, FitOptions::default(), "U|z,a,m")?;
            // u ~ 1 + z
            let uz_design = DMatrix::from_fn(n, 1 + zd, |i, j| {
                if j == 0 {
                    1.0
                } else {
                    external.z_row(i)[j - 1]
                }
            });
            let uz_fit = fit_logistic_mle(&uz_design, u, FitOptions::default(), "U|z")?;
            // m ~ 1 + a + z + u
            let m_design = DMatrix::from_fn(n, 3 + zd, |i, j| {
                if j == 0 {
                    1.0
                } else if j == 1 {
                    f64::from(external.a()[i])
                } else if j < 2 + zd {
                    external.z_row(i)[j - 2]
                } else {
                    f64::from(u[i])
                }
            });
            let m_fit = fit_logistic_mle(&m_design, external.m(), FitOptions::default(), "M|z,a,u")?;
            (
                CellProb::Parametric(u_fit.estimate),
                CellProb::Parametric(uz_fit.estimate),
                CellProb::Parametric(m_fit.estimate),
            )
        };

        // y ~ 1 + a + z + m [+ am] + u, matching the naive outcome model
        // plus a u term
        let yc = 4 + zd + usize::from(spec.include_am_interaction);
        let y_design = DMatrix::from_fn(n, yc, |i, j| {
            let a = f64::from(external.a()[i]);
            let m = f64::from(external.m()[i]);
            if j == 0 {
                1.0
            } else if j == 1 {
                a
            } else if j < 2 + zd {
                external.z_row(i)[j - 2]
            } else if j == 2 + zd {
                m
            } else if spec.include_am_interaction && j == 3 + zd {
                a * m
            } else {
                f64::from(u[i])
            }
        });
        let y_fit = fit_logistic_mle(&y_design, external.y(), FitOptions::default(), "Y|z,a,m,u")?;

        Ok(ExternalComponents {
            u_given_zam,
            u_given_z,
            m_given_zau,
            y_coefs: y_fit.estimate,
            include_am: spec.include_am_interaction,
            parametric_fallback,
        })
    }

    /// Build components directly from parametric logistic coefficients,
    /// bypassing the external fit — useful for sensitivity analysis with
    /// user-specified bias parameters. Layouts (intercept first):
    /// `u_zam`: 1, a, m, z...; `u_z`: 1, z...; `m_zau`: 1, a, z..., u;
    /// `y_coefs`: 1, a, z..., m, [am], u.
    pub fn from_parametric(
        u_zam: Vec<f64>,
        u_z: Vec<f64>,
        m_zau: Vec<f64>,
        y_coefs: Vec<f64>,
        include_am: bool,
    ) -> Self {
        ExternalComponents {
            u_given_zam: CellProb::Parametric(u_zam),
            u_given_z: CellProb::Parametric(u_z),
            m_given_zau: CellProb::Parametric(m_zau),
            y_coefs,
            include_am,
            parametric_fallback: false,
        }
    }

    fn prob_u_zam(&self, z: &[f64], a: f64, m: f64) -> Result<f64> {
        let mut key = zkey(z);
        key.push(a as i64);
        key.push(m as i64);
        let mut covs = vec![a, m];
        covs.extend_from_slice(z);
        self.u_given_zam.prob(&key, &covs)
    }

    fn prob_u_z(&self, z: &[f64]) -> Result<f64> {
        self.u_given_z.prob(&zkey(z), z)
    }

    fn prob_m_zau(&self, z: &[f64], a: f64, u: f64) -> Result<f64> {
        let mut key = zkey(z);
        key.push(a as i64);
        key.push(u as i64);
        let mut covs = vec![a];
        covs.extend_from_slice(z);
        covs.push(u);
        self.m_given_zau.prob(&key, &covs)
    }

    fn mean_y(&self, z: &[f64], a: f64, m: f64, u: f64) -> f64 {
        let zd = z.len();
        let mut eta = self.y_coefs[0] + self.y_coefs[1] * a;
        for (j, &zj) in z.iter().enumerate() {
            eta += self.y_coefs[2 + j] * zj;
        }
        eta += self.y_coefs[2 + zd] * m;
        let mut c = 3 + zd;
        if self.include_am {
            eta += self.y_coefs[c] * a * m;
            c += 1;
        }
        eta += self.y_coefs[c] * u;
        logit_inv(eta)
    }

    /// DG bias at one covariate pattern:
    /// `B(z) = delta_{m=0}(z) * gamma_{m=0}(z)`, with the confounder shift
    /// `delta` contrasted across exposure arms at `m = 0` and the outcome
    /// gap `gamma` between confounder levels evaluated at `a = 0`.
    pub fn dg_bias(&self, z: &[f64]) -> Result<f64> {
        let delta = self.prob_u_zam(z, 1.0, 0.0)? - self.prob_u_zam(z, 0.0, 0.0)?;
        let gamma = self.mean_y(z, 0.0, 0.0, 1.0) - self.mean_y(z, 0.0, 0.0, 0.0);
        Ok(delta * gamma)
    }

    /// IX bias at one covariate pattern, comparing `a = 1` to `a* = 0`:
    /// the confounding gap between the observed-confounder standardization
    /// and the baseline-confounder standardization, summed over `(m, u)`.
    /// The mediator marginal `P(m | a*, z)` is taken as the mixture
    /// `sum_u P(m | a*, z, u) P(u | z)` so the two sums cancel exactly when
    /// the outcome model carries no `u` effect.
    pub fn ix_bias(&self, z: &[f64]) -> Result<f64> {
        let (a, a_star) = (1.0, 0.0);
        let pm1_mix = {
            let pu = self.prob_u_z(z)?;
            self.prob_m_zau(z, a_star, 1.0)? * pu + self.prob_m_zau(z, a_star, 0.0)? * (1.0 - pu)
        };
        let mut first = 0.0;
        let mut second = 0.0;
        let pu_z = self.prob_u_z(z)?;
        for m in [0.0, 1.0] {
            let pm_marg = if m == 1.0 { pm1_mix } else { 1.0 - pm1_mix };
            for u in [0.0, 1.0] {
                let pu_a = {
                    let p1 = self.prob_u_zam(z, a, m)?;
                    if u == 1.0 { p1 } else { 1.0 - p1 }
                };
                let pu_astar = {
                    let p1 = self.prob_u_zam(z, a_star, m)?;
                    if u == 1.0 { p1 } else { 1.0 - p1 }
                };
                first += (self.mean_y(z, a, m, u) * pu_a - self.mean_y(z, a_star, m, u) * pu_astar)
                    * pm_marg;
                let pm_u = {
                    let p1 = self.prob_m_zau(z, a_star, u)?;
                    if m == 1.0 { p1 } else { 1.0 - p1 }
                };
                let pu = if u == 1.0 { pu_z } else { 1.0 - pu_z };
                second += (self.mean_y(z, a, m, u) - self.mean_y(z, a_star, m, u)) * pm_u * pu;
            }
        }
        Ok(first - second)
    }
}

/// Population estimate on one (re)sample of the main data: the uncorrected
/// pattern-level rNDE minus the (fixed) bias term, standardized over the
/// empirical covariate law.
fn corrected_point(
    main: &Dataset,
    spec: &ModelSpec,
    bias: Option<(&ExternalComponents, CorrectionMethod)>,
) -> Result<f64> {
    let fits = NaiveFits::fit(main, spec)?;
    let table = CovariatePatternTable::from_dataset(main);
    let props = table.proportions();
    let mut total = 0.0;
    for (k, &p) in props.iter().enumerate() {
        let z = table.pattern(k);
        let mut value = fits.rnde_uc(z);
        if let Some((ext, method)) = bias {
            value -= match method {
                CorrectionMethod::Dg => ext.dg_bias(z)?,
                CorrectionMethod::Ix => ext.ix_bias(z)?,
                CorrectionMethod::Naive => 0.0,
            };
        }
        total += p * value;
    }
    Ok(total)
}

fn with_bootstrap(
    main: &Dataset,
    spec: &ModelSpec,
    bias: Option<(&ExternalComponents, CorrectionMethod)>,
    opts: &CorrectionOptions,
    method: CorrectionMethod,
) -> Result<CorrectionResult> {
    if opts.n_boot == 0 {
        return Err(BdfError::Config("n_boot must be at least 1".into()));
    }
    let point = corrected_point(main, spec, bias)?;
    let n = main.n();
    let replicates: Vec<Option<f64>> = (0..opts.n_boot)
        .into_par_iter()
        .map(|rep| {
            let mut rng = substream_rng(opts.seed, &[0xB007, rep as u64]);
            let idx: Vec<usize> = (0..n).map(|_| rand::Rng::gen_range(&mut rng, 0..n)).collect();
            let resample = main.subset(&idx).ok()?;
            corrected_point(&resample, spec, bias).ok()
        })
        .collect();
    let values: Vec<f64> = replicates.into_iter().flatten().collect();
    if values.len() < 2 {
        return Err(BdfError::Sampler(
            "bootstrap failed: fewer than 2 successful replicates".into(),
        ));
    }
    Ok(CorrectionResult {
        method,
        point,
        ci_low: quantile(&values, 0.025),
        ci_high: quantile(&values, 0.975),
        n_boot: opts.n_boot,
    })
}

/// Uncorrected g-formula rNDE from main-data MLE fits without `u`.
pub fn naive_rnde(main: &Dataset, spec: &ModelSpec, opts: &CorrectionOptions) -> Result<CorrectionResult> {
    with_bootstrap(main, spec, None, opts, CorrectionMethod::Naive)
}

/// Delta-gamma corrected rNDE; bias components from the external data.
pub fn dg_correction(
    main: &Dataset,
    external: &Dataset,
    spec: &ModelSpec,
    opts: &CorrectionOptions,
) -> Result<CorrectionResult> {
    check_coverage(main, external)?;
    let ext = ExternalComponents::fit(external, spec, opts)?;
    with_bootstrap(main, spec, Some((&ext, CorrectionMethod::Dg)), opts, CorrectionMethod::Dg)
}

/// Interaction-corrected rNDE; bias components from the external data.
pub fn ix_correction(
    main: &Dataset,
    external: &Dataset,
    spec: &ModelSpec,
    opts: &CorrectionOptions,
) -> Result<CorrectionResult> {
    check_coverage(main, external)?;
    let ext = ExternalComponents::fit(external, spec, opts)?;
    with_bootstrap(main, spec, Some((&ext, CorrectionMethod::Ix)), opts, CorrectionMethod::Ix)
}

/// Corrected rNDE with caller-supplied bias components, e.g. from
/// [`ExternalComponents::from_parametric`] for sensitivity analysis.
pub fn correction_with_components(
    main: &Dataset,
    spec: &ModelSpec,
    ext: &ExternalComponents,
    method: CorrectionMethod,
    opts: &CorrectionOptions,
) -> Result<CorrectionResult> {
    with_bootstrap(main, spec, Some((ext, method)), opts, method)
}

/// Every covariate pattern of the main data must appear in the external data
/// with observations at `m = 0` in both exposure arms, or the bias terms are
/// not estimable.
fn check_coverage(main: &Dataset, external: &Dataset) -> Result<()> {
    let mut seen: BTreeMap<Vec<i64>, [bool; 2]> = BTreeMap::new();
    for i in 0..external.n() {
        if external.m()[i] == 0 {
            let e = seen.entry(zkey(external.z_row(i))).or_insert([false; 2]);
            e[usize::from(external.a()[i])] = true;
        }
    }
    let table = CovariatePatternTable::from_dataset(main);
    let mut missing = Vec::new();
    for k in 0..table.len() {
        let key = zkey(table.pattern(k));
        let arms = seen.get(&key).copied().unwrap_or([false; 2]);
        for (a, present) in arms.iter().enumerate() {
            if !present {
                missing.push(format!("(z={key:?}, a={a}, m=0)"));
            }
        }
    }
    if missing.is_empty() {
        Ok(())
    } else {
        Err(BdfError::CellSparsity(format!(
            "external data have no observations in cells: {}",
            missing.join(", ")
        )))
    }
}
