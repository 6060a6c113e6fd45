//! Block multivariate-normal priors built from external-data MLE fits.
//!
//! Each block X in {U, M, Y} gets mean `theta_hat_X` and covariance
//! `Sigma_hat_X`. Variance inflation multiplies the covariance row/column of
//! every identifiable coordinate by `sigma` (diagonal by `sigma^2`), making
//! the marginal prior diffuse while preserving its correlations with the
//! unidentifiable bias coordinates.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{BdfError, Result};
use crate::mle::ExternalFits;
use crate::model::{ModelSpec, ParamVector};

const LN_2PI: f64 = 1.8378770664093453;

/// One Gaussian block with precomputed Cholesky factor.
#[derive(Debug, Clone)]
pub struct PriorBlock {
    pub mean: Vec<f64>,
    pub covariance: DMatrix<f64>,
    chol: Cholesky<f64, nalgebra::Dyn>,
    log_norm: f64,
}

impl PriorBlock {
    pub fn new(mean: Vec<f64>, covariance: DMatrix<f64>, block: &'static str) -> Result<Self> {
        let d = mean.len();
        if covariance.nrows() != d || covariance.ncols() != d {
            return Err(BdfError::DimensionMismatch {
                expected: d,
                got: covariance.nrows(),
                context: "prior block covariance",
            });
        }
        let max_asym = (0..d)
            .flat_map(|j| (0..d).map(move |k| (j, k)))
            .map(|(j, k)| (covariance[(j, k)] - covariance[(k, j)]).abs())
            .fold(0.0, f64::max);
        if max_asym > 1e-10 {
            return Err(BdfError::NotPositiveDefinite { block });
        }
        let chol =
            Cholesky::new(covariance.clone()).ok_or(BdfError::NotPositiveDefinite { block })?;
        let log_det: f64 = (0..d).map(|j| chol.l()[(j, j)].ln()).sum::<f64>() * 2.0;
        let log_norm = -0.5 * (d as f64 * LN_2PI + log_det);
        Ok(PriorBlock {
            mean,
            covariance,
            chol,
            log_norm,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Log-density at `x` (normalizing constant included).
    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(BdfError::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
                context: "prior block evaluation point",
            });
        }
        let diff = DVector::from_iterator(x.len(), x.iter().zip(&self.mean).map(|(a, b)| a - b));
        let solved = self.chol.solve(&diff);
        Ok(self.log_norm - 0.5 * diff.dot(&solved))
    }

    /// Gradient of the log-density: `-Sigma^{-1}(x - mean)`.
    pub fn grad_log_density(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(BdfError::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
                context: "prior block evaluation point",
            });
        }
        let diff = DVector::from_iterator(x.len(), x.iter().zip(&self.mean).map(|(a, b)| a - b));
        let solved = self.chol.solve(&diff);
        Ok(solved.iter().map(|v| -v).collect())
    }

    /// Sample from the block: `mean + L * standard_normals`.
    pub fn sample<R: rand::Rng>(&self, rng: &mut R) -> Vec<f64> {
        use rand_distr::{Distribution, StandardNormal};
        let d = self.dim();
        let z = DVector::from_iterator(d, (0..d).map(|_| StandardNormal.sample(rng)));
        let x = self.chol.l() * z;
        x.iter().zip(&self.mean).map(|(v, m)| v + m).collect()
    }

    pub fn marginal_sds(&self) -> Vec<f64> {
        (0..self.dim()).map(|j| self.covariance[(j, j)].sqrt()).collect()
    }
}

/// Per-block coordinate sets treated as identifiable (and thus inflatable).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdentifiableSets {
    pub u: Vec<usize>,
    pub m: Vec<usize>,
    pub y: Vec<usize>,
}

impl IdentifiableSets {
    /// Everything estimable without `U`: the whole U block and the bias
    /// coefficients `beta_u`, `alpha_u` are excluded.
    pub fn default_for(spec: &ModelSpec) -> Self {
        IdentifiableSets {
            u: Vec::new(),
            m: (0..spec.dim_m() - 1).collect(),
            y: (0..spec.dim_y() - 1).collect(),
        }
    }
}

/// Variance-inflation request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Inflation {
    pub sigma: f64,
    /// Defaults to [`IdentifiableSets::default_for`] when absent.
    pub indices: Option<IdentifiableSets>,
}

/// The full prior `pi(theta) = pi(theta_u) * pi(theta_m) * pi(theta_y)`.
#[derive(Debug, Clone)]
pub struct GaussianPrior {
    pub spec: ModelSpec,
    pub u: PriorBlock,
    pub m: PriorBlock,
    pub y: PriorBlock,
    pub inflation_factor: f64,
    pub inflated_indices: IdentifiableSets,
}

fn inflate_block(
    cov: &DMatrix<f64>,
    sigma: f64,
    indices: &[usize],
    block: &'static str,
) -> Result<DMatrix<f64>> {
    let d = cov.nrows();
    for &j in indices {
        if j >= d {
            return Err(BdfError::DimensionMismatch {
                expected: d,
                got: j,
                context: "inflation index",
            });
        }
    }
    let mut scale = vec![1.0; d];
    for &j in indices {
        scale[j] = sigma;
    }
    let mut out = cov.clone();
    for j in 0..d {
        for k in 0..d {
            out[(j, k)] *= scale[j] * scale[k];
        }
    }
    if Cholesky::new(out.clone()).is_none() {
        return Err(BdfError::InflationNotPositiveDefinite { block });
    }
    Ok(out)
}

/// Convert external MLE fits into the prior, optionally inflating the
/// variances of identifiable coordinates.
pub fn build_prior(
    fits: &ExternalFits,
    spec: &ModelSpec,
    inflate: Option<Inflation>,
) -> Result<GaussianPrior> {
    for (fit, dim, name) in [
        (&fits.u, spec.dim_u(), "U"),
        (&fits.m, spec.dim_m(), "M"),
        (&fits.y, spec.dim_y(), "Y"),
    ] {
        if !fit.converged {
            return Err(BdfError::Config(format!("{name} fit did not converge")));
        }
        if fit.estimate.len() != dim {
            return Err(BdfError::DimensionMismatch {
                expected: dim,
                got: fit.estimate.len(),
                context: "external fit dimension vs model spec",
            });
        }
    }
    let (sigma, indices) = match inflate {
        None => (1.0, IdentifiableSets::default_for(spec)),
        Some(inf) => {
            if inf.sigma < 1.0 || !inf.sigma.is_finite() {
                return Err(BdfError::Config("inflation sigma must be >= 1".into()));
            }
            (
                inf.sigma,
                inf.indices.unwrap_or_else(|| IdentifiableSets::default_for(spec)),
            )
        }
    };
    let cov_u = inflate_block(&fits.u.covariance, sigma, &indices.u, "U")?;
    let cov_m = inflate_block(&fits.m.covariance, sigma, &indices.m, "M")?;
    let cov_y = inflate_block(&fits.y.covariance, sigma, &indices.y, "Y")?;
    Ok(GaussianPrior {
        spec: *spec,
        u: PriorBlock::new(fits.u.estimate.clone(), cov_u, "U")?,
        m: PriorBlock::new(fits.m.estimate.clone(), cov_m, "M")?,
        y: PriorBlock::new(fits.y.estimate.clone(), cov_y, "Y")?,
        inflation_factor: sigma,
        inflated_indices: indices,
    })
}

impl GaussianPrior {
    /// Build directly from means and covariances (tests, synthetic targets).
    pub fn from_blocks(
        spec: ModelSpec,
        mean_u: Vec<f64>,
        cov_u: DMatrix<f64>,
        mean_m: Vec<f64>,
        cov_m: DMatrix<f64>,
        mean_y: Vec<f64>,
        cov_y: DMatrix<f64>,
    ) -> Result<Self> {
        Ok(GaussianPrior {
            spec,
            u: PriorBlock::new(mean_u, cov_u, "U")?,
            m: PriorBlock::new(mean_m, cov_m, "M")?,
            y: PriorBlock::new(mean_y, cov_y, "Y")?,
            inflation_factor: 1.0,
            inflated_indices: IdentifiableSets::default_for(&spec),
        })
    }

    pub fn dim(&self) -> usize {
        self.u.dim() + self.m.dim() + self.y.dim()
    }

    /// Prior mean in flattened order.
    pub fn mean_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim());
        out.extend_from_slice(&self.u.mean);
        out.extend_from_slice(&self.m.mean);
        out.extend_from_slice(&self.y.mean);
        out
    }

    /// Marginal prior standard deviations in flattened order.
    pub fn sd_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim());
        out.extend(self.u.marginal_sds());
        out.extend(self.m.marginal_sds());
        out.extend(self.y.marginal_sds());
        out
    }

    pub fn log_density(&self, theta: &ParamVector) -> Result<f64> {
        Ok(self.u.log_density(&theta.theta_u)?
            + self.m.log_density(&theta.theta_m)?
            + self.y.log_density(&theta.theta_y)?)
    }

    pub fn log_density_flat(&self, flat: &[f64]) -> Result<f64> {
        if flat.len() != self.dim() {
            return Err(BdfError::DimensionMismatch {
                expected: self.dim(),
                got: flat.len(),
                context: "prior evaluation point",
            });
        }
        let (u, rest) = flat.split_at(self.u.dim());
        let (m, y) = rest.split_at(self.m.dim());
        Ok(self.u.log_density(u)? + self.m.log_density(m)? + self.y.log_density(y)?)
    }

    pub fn grad_log_density(&self, theta: &ParamVector) -> Result<Vec<f64>> {
        self.grad_log_density_flat(&theta.to_flat())
    }

    pub fn grad_log_density_flat(&self, flat: &[f64]) -> Result<Vec<f64>> {
        if flat.len() != self.dim() {
            return Err(BdfError::DimensionMismatch {
                expected: self.dim(),
                got: flat.len(),
                context: "prior evaluation point",
            });
        }
        let (u, rest) = flat.split_at(self.u.dim());
        let (m, y) = rest.split_at(self.m.dim());
        let mut out = self.u.grad_log_density(u)?;
        out.extend(self.m.grad_log_density(m)?);
        out.extend(self.y.grad_log_density(y)?);
        Ok(out)
    }

    /// Draw one parameter vector from the prior.
    pub fn sample<R: rand::Rng>(&self, rng: &mut R) -> ParamVector {
        ParamVector {
            spec: self.spec,
            theta_u: self.u.sample(rng),
            theta_m: self.m.sample(rng),
            theta_y: self.y.sample(rng),
        }
    }

    /// Serialize as a JSON document. Only summary statistics are stored, so
    /// priors can be shared without sharing external microdata.
    pub fn to_json(&self) -> Result<String> {
        let doc = PriorDocument::from(self);
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let doc: PriorDocument = serde_json::from_str(json)?;
        doc.into_prior()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct BlockDocument {
    mean: Vec<f64>,
    covariance: Vec<Vec<f64>>,
}

fn mat_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

fn rows_to_mat(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(BdfError::InvalidData("covariance rows are not square".into()));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

/// On-disk JSON schema: `{block -> {mean, covariance}}` plus the model spec
/// and inflation record.
#[derive(Debug, Serialize, Deserialize)]
pub struct PriorDocument {
    spec: ModelSpec,
    u: BlockDocument,
    m: BlockDocument,
    y: BlockDocument,
    inflation_factor: f64,
    inflated_indices: IdentifiableSets,
}

impl From<&GaussianPrior> for PriorDocument {
    fn from(p: &GaussianPrior) -> Self {
        PriorDocument {
            spec: p.spec,
            u: BlockDocument {
                mean: p.u.mean.clone(),
                covariance: mat_to_rows(&p.u.covariance),
            },
            m: BlockDocument {
                mean: p.m.mean.clone(),
                covariance: mat_to_rows(&p.m.covariance),
            },
            y: BlockDocument {
                mean: p.y.mean.clone(),
                covariance: mat_to_rows(&p.y.covariance),
            },
            inflation_factor: p.inflation_factor,
            inflated_indices: p.inflated_indices.clone(),
        }
    }
}

impl PriorDocument {
    fn into_prior(self) -> Result<GaussianPrior> {
        Ok(GaussianPrior {
            spec: self.spec,
            u: PriorBlock::new(self.u.mean, rows_to_mat(&self.u.covariance)?, "U")?,
            m: PriorBlock::new(self.m.mean, rows_to_mat(&self.m.covariance)?, "M")?,
            y: PriorBlock::new(self.y.mean, rows_to_mat(&self.y.covariance)?, "Y")?,
            inflation_factor: self.inflation_factor,
            inflated_indices: self.inflated_indices,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mle::MleFit;
    use approx::assert_relative_eq;

    fn fake_fit(estimate: Vec<f64>, cov: DMatrix<f64>) -> MleFit {
        MleFit {
            estimate,
            covariance: cov,
            converged: true,
            iterations: 1,
            loglik: 0.0,
        }
    }

    fn toy_fits(spec: &ModelSpec) -> ExternalFits {
        // mildly correlated covariances
        let mk = |d: usize| {
            DMatrix::from_fn(d, d, |i, j| if i == j { 1.0 + 0.1 * i as f64 } else { 0.2 })
        };
        ExternalFits {
            u: fake_fit(vec![0.1; spec.dim_u()], mk(spec.dim_u())),
            m: fake_fit(vec![0.2; spec.dim_m()], mk(spec.dim_m())),
            y: fake_fit(vec![0.3; spec.dim_y()], mk(spec.dim_y())),
        }
    }

    #[test]
    fn no_inflation_is_identity() {
        let spec = ModelSpec::new(2, true, true);
        let fits = toy_fits(&spec);
        let p = build_prior(&fits, &spec, None).unwrap();
        assert_eq!(p.inflation_factor, 1.0);
        assert_eq!(p.m.mean, fits.m.estimate);
        assert_eq!(p.m.covariance, fits.m.covariance);
        // sigma = 1 with nonempty index set is also the identity
        let p1 = build_prior(
            &fits,
            &spec,
            Some(Inflation {
                sigma: 1.0,
                indices: None,
            }),
        )
        .unwrap();
        assert_eq!(p1.y.covariance, p.y.covariance);
    }

    #[test]
    fn inflation_scales_sd_and_preserves_correlation() {
        let spec = ModelSpec::new(2, true, true);
        let fits = toy_fits(&spec);
        let sigma = 1000.0;
        let j = 1; // inflate only coordinate 1 of the Y block
        let p = build_prior(
            &fits,
            &spec,
            Some(Inflation {
                sigma,
                indices: Some(IdentifiableSets {
                    u: vec![],
                    m: vec![],
                    y: vec![j],
                }),
            }),
        )
        .unwrap();
        let base = &fits.y.covariance;
        let infl = &p.y.covariance;
        let sd = |c: &DMatrix<f64>, i: usize| c[(i, i)].sqrt();
        assert_relative_eq!(sd(infl, j), sigma * sd(base, j), max_relative = 1e-12);
        for k in 0..spec.dim_y() {
            if k == j {
                continue;
            }
            let corr_base = base[(j, k)] / (sd(base, j) * sd(base, k));
            let corr_infl = infl[(j, k)] / (sd(infl, j) * sd(infl, k));
            assert_relative_eq!(corr_base, corr_infl, epsilon = 1e-12);
            assert_relative_eq!(sd(infl, k), sd(base, k), epsilon = 1e-12);
        }
    }

    #[test]
    fn log_density_at_mean_identity_covariance() {
        let spec = ModelSpec::new(0, true, true);
        let mk_id = |d: usize| DMatrix::identity(d, d);
        let p = GaussianPrior::from_blocks(
            spec,
            vec![0.0; spec.dim_u()],
            mk_id(spec.dim_u()),
            vec![0.0; spec.dim_m()],
            mk_id(spec.dim_m()),
            vec![0.0; spec.dim_y()],
            mk_id(spec.dim_y()),
        )
        .unwrap();
        let d = p.dim() as f64;
        let theta = ParamVector::zeros(spec);
        assert_relative_eq!(
            p.log_density(&theta).unwrap(),
            -0.5 * d * LN_2PI,
            epsilon = 1e-12
        );
        // one-sd shift changes log-density by -0.5
        let mut flat = theta.to_flat();
        flat[0] += 1.0;
        assert_relative_eq!(
            p.log_density_flat(&flat).unwrap() - p.log_density(&theta).unwrap(),
            -0.5,
            epsilon = 1e-12
        );
        // gradient at the mean is zero; shifted by e_j it is -e_j
        assert!(p.grad_log_density(&theta).unwrap().iter().all(|&g| g == 0.0));
        let g = p.grad_log_density_flat(&flat).unwrap();
        assert_relative_eq!(g[0], -1.0, epsilon = 1e-12);
        assert!(g[1..].iter().all(|&v| v.abs() < 1e-12));
    }

    #[test]
    fn log_density_matches_dense_inverse_oracle() {
        let spec = ModelSpec::new(2, true, true);
        let fits = toy_fits(&spec);
        let p = build_prior(&fits, &spec, None).unwrap();
        let flat: Vec<f64> = (0..p.dim()).map(|i| 0.3 * (i as f64) - 1.0).collect();
        let got = p.log_density_flat(&flat).unwrap();
        // direct evaluation with explicit matrix inverses
        let mut want = 0.0;
        let mut off = 0;
        for block in [&p.u, &p.m, &p.y] {
            let d = block.dim();
            let x = DVector::from_iterator(d, flat[off..off + d].iter().copied());
            let mu = DVector::from_vec(block.mean.clone());
            let inv = block.covariance.clone().try_inverse().unwrap();
            let det = block.covariance.determinant();
            let diff = x - mu;
            want += -0.5 * (d as f64 * LN_2PI + det.ln() + (diff.transpose() * inv * diff)[(0, 0)]);
            off += d;
        }
        assert_relative_eq!(got, want, epsilon = 1e-10);
    }

    #[test]
    fn grad_matches_finite_differences() {
        let spec = ModelSpec::new(2, true, true);
        let fits = toy_fits(&spec);
        let p = build_prior(&fits, &spec, None).unwrap();
        let flat: Vec<f64> = (0..p.dim()).map(|i| (i as f64).sin()).collect();
        let grad = p.grad_log_density_flat(&flat).unwrap();
        let h = 1e-5;
        for j in 0..p.dim() {
            let mut up = flat.clone();
            let mut dn = flat.clone();
            up[j] += h;
            dn[j] -= h;
            let fd = (p.log_density_flat(&up).unwrap() - p.log_density_flat(&dn).unwrap()) / (2.0 * h);
            assert_relative_eq!(grad[j], fd, max_relative = 1e-6, epsilon = 1e-9);
        }
    }

    #[test]
    fn json_roundtrip() {
        let spec = ModelSpec::new(2, false, true);
        let fits = toy_fits(&spec);
        let p = build_prior(&fits, &spec, Some(Inflation { sigma: 10.0, indices: None })).unwrap();
        let json = p.to_json().unwrap();
        let back = GaussianPrior::from_json(&json).unwrap();
        assert_eq!(back.inflation_factor, 10.0);
        let x: Vec<f64> = (0..p.dim()).map(|i| 0.1 * i as f64).collect();
        assert_relative_eq!(
            p.log_density_flat(&x).unwrap(),
            back.log_density_flat(&x).unwrap(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn sigma_below_one_rejected() {
        let spec = ModelSpec::new(2, true, true);
        let fits = toy_fits(&spec);
        assert!(build_prior(&fits, &spec, Some(Inflation { sigma: 0.5, indices: None })).is_err());
    }
}
