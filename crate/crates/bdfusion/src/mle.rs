//! Maximum-likelihood logistic fits on the external dataset.
//!
//! Point estimates and inverse-information covariance matrices from these
//! fits seed the Gaussian prior blocks and the frequentist bias corrections.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::data::Dataset;
use crate::error::{BdfError, Result};
use crate::model::{logit_inv, ModelSpec};

/// Coefficient magnitude beyond which we declare (quasi-)complete
/// separation: the logistic scale is saturated well before |eta| = 30.
pub const SEPARATION_LIMIT: f64 = 30.0;

/// Options for Newton-Raphson fitting.
#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    /// Convergence tolerance on the score max-norm.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            tol: 1e-8,
            max_iter: 50,
        }
    }
}

/// A converged logistic fit: estimate, inverse observed information, and
/// bookkeeping.
#[derive(Debug, Clone)]
pub struct MleFit {
    pub estimate: Vec<f64>,
    pub covariance: DMatrix<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub loglik: f64,
}

impl MleFit {
    pub fn standard_errors(&self) -> Vec<f64> {
        (0..self.estimate.len())
            .map(|j| self.covariance[(j, j)].sqrt())
            .collect()
    }
}

fn loglik_at(design: &DMatrix<f64>, response: &[u8], beta: &DVector<f64>) -> f64 {
    let eta = design * beta;
    let mut ll = 0.0;
    for (i, &y) in response.iter().enumerate() {
        let e = eta[i];
        // y*eta - log(1 + exp(eta)), stable in both tails
        let log1pexp = if e > 35.0 {
            e
        } else if e < -35.0 {
            e.exp()
        } else {
            e.exp().ln_1p()
        };
        ll += f64::from(y) * e - log1pexp;
    }
    ll
}

/// Cholesky factorization that also rejects numerically rank-deficient
/// information matrices (a tiny pivot factors "successfully" in floating
/// point but the resulting solves are garbage).
fn chol_checked(info: DMatrix<f64>, role: &'static str) -> Result<Cholesky<f64, nalgebra::Dyn>> {
    let chol = Cholesky::new(info).ok_or(BdfError::SingularInformation { role })?;
    let l = chol.l_dirty();
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    for j in 0..l.nrows() {
        let d = l[(j, j)].abs();
        lo = lo.min(d);
        hi = hi.max(d);
    }
    if !(lo > 1e-6 * hi) {
        return Err(BdfError::SingularInformation { role });
    }
    Ok(chol)
}

/// Newton-Raphson logistic regression with step-halving.
pub fn fit_logistic_mle(
    design: &DMatrix<f64>,
    response: &[u8],
    opts: FitOptions,
    role: &'static str,
) -> Result<MleFit> {
    let n = design.nrows();
    let p = design.ncols();
    if response.len() != n {
        return Err(BdfError::DimensionMismatch {
            expected: n,
            got: response.len(),
            context: "logistic response length",
        });
    }
    let mut beta = DVector::zeros(p);
    let mut ll = loglik_at(design, response, &beta);
    let mut converged = false;
    let mut iterations = 0;
    for iter in 1..=opts.max_iter {
        iterations = iter;
        let eta = design * &beta;
        let probs: Vec<f64> = eta.iter().map(|&e| logit_inv(e)).collect();
        // score = X'(y - p)
        let resid = DVector::from_iterator(
            n,
            response.iter().zip(&probs).map(|(&y, &pi)| f64::from(y) - pi),
        );
        let score = design.transpose() * &resid;
        if score.amax() < opts.tol {
            converged = true;
            break;
        }
        // observed information = X' W X with W = diag(p(1-p))
        let mut info = DMatrix::zeros(p, p);
        for i in 0..n {
            let w = probs[i] * (1.0 - probs[i]);
            let xi = design.row(i);
            for j in 0..p {
                let wx = w * xi[j];
                for k in j..p {
                    info[(j, k)] += wx * xi[k];
                }
            }
        }
        for j in 0..p {
            for k in 0..j {
                info[(j, k)] = info[(k, j)];
            }
        }
        let chol = chol_checked(info, role)?;
        let step = chol.solve(&score);
        // step-halving keeps the log-likelihood non-decreasing
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..20 {
            let candidate = &beta + scale * &step;
            let cand_ll = loglik_at(design, response, &candidate);
            // tolerate rounding at large n so polish steps near the optimum
            // are not rejected
            if cand_ll >= ll - 1e-10 * ll.abs().max(1.0) {
                beta = candidate;
                ll = cand_ll;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            // cannot improve further; treat current point as the optimum
            converged = score.amax() < opts.tol.max(1e-4);
            break;
        }
        if beta.amax() > SEPARATION_LIMIT {
            return Err(BdfError::Separation {
                role,
                limit: SEPARATION_LIMIT,
            });
        }
    }
    if !converged {
        return Err(BdfError::NoConvergence {
            role,
            iterations,
        });
    }
    // covariance = inverse observed information at the estimate
    let eta = design * &beta;
    let mut info = DMatrix::zeros(p, p);
    for i in 0..n {
        let pi = logit_inv(eta[i]);
        let w = pi * (1.0 - pi);
        let xi = design.row(i);
        for j in 0..p {
            let wx = w * xi[j];
            for k in j..p {
                info[(j, k)] += wx * xi[k];
            }
        }
    }
    for j in 0..p {
        for k in 0..j {
            info[(j, k)] = info[(k, j)];
        }
    }
    let chol = chol_checked(info, role)?;
    let covariance = chol.inverse();
    Ok(MleFit {
        estimate: beta.iter().copied().collect(),
        covariance,
        converged,
        iterations,
        loglik: ll,
    })
}

/// The three external-data fits corresponding to the U, M, and Y models.
#[derive(Debug, Clone)]
pub struct ExternalFits {
    pub u: MleFit,
    pub m: MleFit,
    pub y: MleFit,
}

/// Design matrix for the given role built from a dataset with observed `u`.
pub fn role_design(data: &Dataset, spec: &ModelSpec, role: crate::model::Role) -> Result<DMatrix<f64>> {
    let n = data.n();
    let u = data
        .u()
        .ok_or_else(|| BdfError::InvalidData("external dataset must contain a `u` column".into()))?;
    let ncols = match role {
        crate::model::Role::U => spec.dim_u(),
        crate::model::Role::M => spec.dim_m(),
        crate::model::Role::Y => spec.dim_y(),
    };
    let mut x = DMatrix::zeros(n, ncols);
    for i in 0..n {
        let z = data.z_row(i);
        if z.len() != spec.z_dim {
            return Err(BdfError::DimensionMismatch {
                expected: spec.z_dim,
                got: z.len(),
                context: "dataset z_dim vs model spec",
            });
        }
        let a = f64::from(data.a()[i]);
        let mut c = 0;
        x[(i, c)] = 1.0;
        c += 1;
        match role {
            crate::model::Role::U => {
                if spec.u_exposure_induced {
                    x[(i, c)] = a;
                    c += 1;
                }
                for &zj in z {
                    x[(i, c)] = zj;
                    c += 1;
                }
            }
            crate::model::Role::M => {
                x[(i, c)] = a;
                c += 1;
                for &zj in z {
                    x[(i, c)] = zj;
                    c += 1;
                }
                x[(i, c)] = f64::from(u[i]);
                c += 1;
            }
            crate::model::Role::Y => {
                x[(i, c)] = a;
                c += 1;
                for &zj in z {
                    x[(i, c)] = zj;
                    c += 1;
                }
                let m = f64::from(data.m()[i]);
                x[(i, c)] = m;
                c += 1;
                if spec.include_am_interaction {
                    x[(i, c)] = a * m;
                    c += 1;
                }
                x[(i, c)] = f64::from(u[i]);
                c += 1;
            }
        }
        debug_assert_eq!(c, ncols);
    }
    Ok(x)
}

/// Fit the U, M, and Y logistic models on the external dataset.
pub fn fit_external_models(external: &Dataset, spec: &ModelSpec) -> Result<ExternalFits> {
    let u_col = external
        .u()
        .ok_or_else(|| BdfError::InvalidData("external dataset must contain a `u` column".into()))?
        .to_vec();
    let opts = FitOptions::default();
    let xu = role_design(external, spec, crate::model::Role::U)?;
    let xm = role_design(external, spec, crate::model::Role::M)?;
    let xy = role_design(external, spec, crate::model::Role::Y)?;
    Ok(ExternalFits {
        u: fit_logistic_mle(&xu, &u_col, opts, "U")?,
        m: fit_logistic_mle(&xm, external.m(), opts, "M")?,
        y: fit_logistic_mle(&xy, external.y(), opts, "Y")?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn intercept_design(n: usize) -> DMatrix<f64> {
        DMatrix::from_element(n, 1, 1.0)
    }

    #[test]
    fn intercept_only_balanced() {
        let n = 100;
        let y: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
        let fit = fit_logistic_mle(&intercept_design(n), &y, FitOptions::default(), "test").unwrap();
        assert!(fit.converged);
        assert_relative_eq!(fit.estimate[0], 0.0, epsilon = 1e-8);
        assert_relative_eq!(fit.loglik, n as f64 * 0.5_f64.ln(), epsilon = 1e-8);
    }

    #[test]
    fn two_by_two_closed_form() {
        // x=0: 30 successes / 70 failures; x=1: 60 / 40.
        let mut x = Vec::new();
        let mut y = Vec::new();
        for _ in 0..30 {
            x.push(0.0);
            y.push(1u8);
        }
        for _ in 0..70 {
            x.push(0.0);
            y.push(0u8);
        }
        for _ in 0..60 {
            x.push(1.0);
            y.push(1u8);
        }
        for _ in 0..40 {
            x.push(1.0);
            y.push(0u8);
        }
        let n = x.len();
        let design = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { x[i] });
        let fit = fit_logistic_mle(&design, &y, FitOptions::default(), "test").unwrap();
        // saturated 2x2 log-odds oracle
        assert_relative_eq!(fit.estimate[0], (3.0_f64 / 7.0).ln(), epsilon = 1e-7);
        assert_relative_eq!(fit.estimate[1], 3.5_f64.ln(), epsilon = 1e-7);
    }

    #[test]
    fn perfect_separation_errors() {
        let x: Vec<f64> = (0..40).map(|i| if i < 20 { 0.0 } else { 1.0 }).collect();
        let y: Vec<u8> = x.iter().map(|&v| v as u8).collect();
        let design = DMatrix::from_fn(40, 2, |i, j| if j == 0 { 1.0 } else { x[i] });
        let err = fit_logistic_mle(&design, &y, FitOptions::default(), "test");
        assert!(matches!(
            err,
            Err(BdfError::Separation { .. }) | Err(BdfError::NoConvergence { .. })
        ));
    }

    #[test]
    fn rank_deficient_design_errors() {
        // duplicated column
        let design = DMatrix::from_fn(50, 2, |_, _| 1.0);
        let y: Vec<u8> = (0..50).map(|i| (i % 2) as u8).collect();
        let err = fit_logistic_mle(&design, &y, FitOptions::default(), "test");
        assert!(matches!(err, Err(BdfError::SingularInformation { .. })));
    }

    #[test]
    fn score_zero_and_fitted_mean_at_convergence() {
        let data = crate::simgen::generate_dataset(
            2000,
            &crate::simgen::GenCoefficients::transportable(),
            true,
            true,
            true,
            11,
        );
        let spec = ModelSpec::new(2, true, true);
        let design = role_design(&data, &spec, crate::model::Role::Y).unwrap();
        let fit = fit_logistic_mle(&design, data.y(), FitOptions::default(), "Y").unwrap();
        let beta = DVector::from_vec(fit.estimate.clone());
        let eta = &design * &beta;
        let probs: Vec<f64> = eta.iter().map(|&e| logit_inv(e)).collect();
        // intercept score equation: mean fitted prob == response mean
        let mean_p = probs.iter().sum::<f64>() / probs.len() as f64;
        let mean_y = data.y().iter().map(|&v| f64::from(v)).sum::<f64>() / data.n() as f64;
        assert_relative_eq!(mean_p, mean_y, epsilon = 1e-8);
        // full score max-norm below tolerance
        let resid = DVector::from_iterator(
            data.n(),
            data.y().iter().zip(&probs).map(|(&y, &pi)| f64::from(y) - pi),
        );
        let score = design.transpose() * resid;
        assert!(score.amax() < 1e-6);
    }

    #[test]
    fn covariance_matches_numerical_hessian() {
        let data = crate::simgen::generate_dataset(
            1500,
            &crate::simgen::GenCoefficients::transportable(),
            true,
            false,
            true,
            3,
        );
        let spec = ModelSpec::new(2, false, true);
        let design = role_design(&data, &spec, crate::model::Role::M).unwrap();
        let fit = fit_logistic_mle(&design, data.m(), FitOptions::default(), "M").unwrap();
        let p = fit.estimate.len();
        let h = 1e-5;
        let mut num_info = DMatrix::zeros(p, p);
        let f = |b: &[f64]| loglik_at(&design, data.m(), &DVector::from_vec(b.to_vec()));
        for j in 0..p {
            for k in 0..p {
                let mut bpp = fit.estimate.clone();
                let mut bpm = fit.estimate.clone();
                let mut bmp = fit.estimate.clone();
                let mut bmm = fit.estimate.clone();
                bpp[j] += h;
                bpp[k] += h;
                bpm[j] += h;
                bpm[k] -= h;
                bmp[j] -= h;
                bmp[k] += h;
                bmm[j] -= h;
                bmm[k] -= h;
                num_info[(j, k)] = -(f(&bpp) - f(&bpm) - f(&bmp) + f(&bmm)) / (4.0 * h * h);
            }
        }
        let obs_info = Cholesky::new(fit.covariance.clone()).unwrap().inverse();
        for j in 0..p {
            for k in 0..p {
                assert_relative_eq!(obs_info[(j, k)], num_info[(j, k)], max_relative = 1e-3);
            }
        }
        // covariance symmetric within 1e-10
        for j in 0..p {
            for k in 0..p {
                assert!((fit.covariance[(j, k)] - fit.covariance[(k, j)]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn external_fit_recovers_generative_beta_u() {
        let external = crate::simgen::generate_dataset(
            10_000,
            &crate::simgen::GenCoefficients::transportable(),
            true,
            false,
            true,
            42,
        );
        let spec = ModelSpec::new(2, false, true);
        let fits = fit_external_models(&external, &spec).unwrap();
        let beta_u_idx = spec.dim_m() - 1;
        let se = fits.m.standard_errors()[beta_u_idx];
        assert!(
            (fits.m.estimate[beta_u_idx] - 1.5).abs() < 3.0 * se,
            "beta_u = {} (se {se})",
            fits.m.estimate[beta_u_idx]
        );
    }

    #[test]
    fn external_constant_u_errors() {
        let data = crate::simgen::generate_dataset(
            500,
            &crate::simgen::GenCoefficients::transportable(),
            true,
            false,
            true,
            5,
        );
        let forced = data.with_u(vec![0; data.n()]).unwrap();
        let spec = ModelSpec::new(2, false, true);
        assert!(fit_external_models(&forced, &spec).is_err());
    }

    #[test]
    fn no_interaction_spec_has_no_am_column() {
        let data = crate::simgen::generate_dataset(
            400,
            &crate::simgen::GenCoefficients::transportable(),
            true,
            false,
            true,
            9,
        );
        let spec = ModelSpec::new(2, false, true);
        let xy = role_design(&data, &spec, crate::model::Role::Y).unwrap();
        assert_eq!(xy.ncols(), spec.dim_y());
        assert_eq!(xy.ncols(), 6);
    }
}
