//! U-marginalized posterior evaluation, HMC sampling, and convergence
//! diagnostics.

pub mod hmc;

use std::io::Write;

use crate::data::Dataset;
use crate::error::{BdfError, Result};
use crate::model::{bernoulli_loglik_clamped, clamp_prob, ModelSpec, ParamVector};
use crate::prior::GaussianPrior;

pub use hmc::{run_hmc, ChainRun, LogDensity, SamplerConfig};

/// One distinct observed row pattern with its multiplicity. The data are
/// discrete, so collapsing to weighted cells makes likelihood and gradient
/// cost independent of the sample size.
#[derive(Debug, Clone)]
pub(crate) struct CompactRow {
    z: Vec<f64>,
    a: f64,
    m: u8,
    y: u8,
    u: Option<u8>,
    weight: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct CompactRows {
    rows: Vec<CompactRow>,
}

impl CompactRows {
    pub(crate) fn from_dataset(data: &Dataset) -> Self {
        use std::collections::BTreeMap;
        // key on the exact bit patterns of z so continuous covariates
        // degrade gracefully to one cell per row
        let mut cells: BTreeMap<(Vec<u64>, u8, u8, u8, i8), (Vec<f64>, f64)> = BTreeMap::new();
        for i in 0..data.n() {
            let z = data.z_row(i);
            let zbits: Vec<u64> = z.iter().map(|v| v.to_bits()).collect();
            let u = data.u().map(|u| u[i]);
            let key = (
                zbits,
                data.a()[i],
                data.m()[i],
                data.y()[i],
                u.map_or(-1, |v| v as i8),
            );
            cells
                .entry(key)
                .or_insert_with(|| (z.to_vec(), 0.0))
                .1 += 1.0;
        }
        let rows = cells
            .into_iter()
            .map(|((_, a, m, y, u), (z, weight))| CompactRow {
                z,
                a: f64::from(a),
                m,
                y,
                u: (u >= 0).then_some(u as u8),
                weight,
            })
            .collect();
        CompactRows { rows }
    }
}

/// Observed-data log-likelihood on the main dataset, marginalizing the
/// missing binary confounder out of every row by log-sum-exp over u in
/// {0, 1}. When the dataset carries an observed `u` column the sum
/// degenerates to the complete-data likelihood.
pub fn log_marginal_likelihood(theta: &ParamVector, main: &Dataset, spec: &ModelSpec) -> Result<f64> {
    check_eval(theta, main, spec)?;
    Ok(marginal_loglik_inner(theta, &CompactRows::from_dataset(main)))
}

fn check_eval(theta: &ParamVector, data: &Dataset, spec: &ModelSpec) -> Result<()> {
    if theta.spec != *spec {
        return Err(BdfError::Config("theta spec does not match model spec".into()));
    }
    if data.z_dim() != spec.z_dim {
        return Err(BdfError::DimensionMismatch {
            expected: spec.z_dim,
            got: data.z_dim(),
            context: "dataset z_dim vs model spec",
        });
    }
    if theta.to_flat().iter().any(|v| !v.is_finite()) {
        return Err(BdfError::NonFinite("parameter vector"));
    }
    Ok(())
}

#[inline]
fn row_joint_loglik(theta: &ParamVector, z: &[f64], a: f64, m: u8, y: u8, u: u8) -> f64 {
    let uf = f64::from(u);
    bernoulli_loglik_clamped(y, theta.mean_y(a, z, f64::from(m), uf))
        + bernoulli_loglik_clamped(m, theta.prob_m(a, z, uf))
        + bernoulli_loglik_clamped(u, theta.prob_u(a, z))
}

fn marginal_loglik_inner(theta: &ParamVector, data: &CompactRows) -> f64 {
    let mut total = 0.0;
    for row in &data.rows {
        match row.u {
            Some(u) => {
                total += row.weight * row_joint_loglik(theta, &row.z, row.a, row.m, row.y, u);
            }
            None => {
                let l0 = row_joint_loglik(theta, &row.z, row.a, row.m, row.y, 0);
                let l1 = row_joint_loglik(theta, &row.z, row.a, row.m, row.y, 1);
                let hi = l0.max(l1);
                total += row.weight * (hi + ((l0 - hi).exp() + (l1 - hi).exp()).ln());
            }
        }
    }
    total
}

/// Accumulate the complete-data score for one row at confounder value `u`
/// with weight `w` into `grad` (flattened layout).
#[inline]
#[allow(clippy::too_many_arguments)]
fn add_weighted_score(
    theta: &ParamVector,
    spec: &ModelSpec,
    grad: &mut [f64],
    z: &[f64],
    a: f64,
    m: u8,
    y: u8,
    u: u8,
    w: f64,
) {
    let uf = f64::from(u);
    let mf = f64::from(m);
    let dim_u = spec.dim_u();
    let dim_m = spec.dim_m();
    // U model: (u - pi_u) * (1, [a], z)
    let resid_u = w * (uf - clamp_prob(theta.prob_u(a, z)));
    let mut c = 0;
    grad[c] += resid_u;
    c += 1;
    if spec.u_exposure_induced {
        grad[c] += resid_u * a;
        c += 1;
    }
    for &zj in z {
        grad[c] += resid_u * zj;
        c += 1;
    }
    debug_assert_eq!(c, dim_u);
    // M model: (m - pi_m) * (1, a, z, u)
    let resid_m = w * (mf - clamp_prob(theta.prob_m(a, z, uf)));
    grad[c] += resid_m;
    grad[c + 1] += resid_m * a;
    c += 2;
    for &zj in z {
        grad[c] += resid_m * zj;
        c += 1;
    }
    grad[c] += resid_m * uf;
    c += 1;
    debug_assert_eq!(c, dim_u + dim_m);
    // Y model: (y - pi_y) * (1, a, z, m, [am], u)
    let resid_y = w * (f64::from(y) - clamp_prob(theta.mean_y(a, z, mf, uf)));
    grad[c] += resid_y;
    grad[c + 1] += resid_y * a;
    c += 2;
    for &zj in z {
        grad[c] += resid_y * zj;
        c += 1;
    }
    grad[c] += resid_y * mf;
    c += 1;
    if spec.include_am_interaction {
        grad[c] += resid_y * a * mf;
        c += 1;
    }
    grad[c] += resid_y * uf;
}

fn marginal_loglik_and_grad(theta: &ParamVector, data: &CompactRows, spec: &ModelSpec) -> (f64, Vec<f64>) {
    let dim = spec.dim();
    let mut grad = vec![0.0; dim];
    let mut total = 0.0;
    for row in &data.rows {
        let (z, a, m, y, w) = (row.z.as_slice(), row.a, row.m, row.y, row.weight);
        match row.u {
            Some(u) => {
                total += w * row_joint_loglik(theta, z, a, m, y, u);
                add_weighted_score(theta, spec, &mut grad, z, a, m, y, u, w);
            }
            None => {
                let l0 = row_joint_loglik(theta, z, a, m, y, 0);
                let l1 = row_joint_loglik(theta, z, a, m, y, 1);
                let hi = l0.max(l1);
                let (e0, e1) = ((l0 - hi).exp(), (l1 - hi).exp());
                let denom = e0 + e1;
                total += w * (hi + denom.ln());
                // posterior-over-u mixture of complete-data scores
                add_weighted_score(theta, spec, &mut grad, z, a, m, y, 0, w * e0 / denom);
                add_weighted_score(theta, spec, &mut grad, z, a, m, y, 1, w * e1 / denom);
            }
        }
    }
    (total, grad)
}

/// Gradient of the log-posterior (marginal likelihood plus prior).
pub fn grad_log_posterior(
    theta: &ParamVector,
    main: &Dataset,
    spec: &ModelSpec,
    prior: &GaussianPrior,
) -> Result<Vec<f64>> {
    check_eval(theta, main, spec)?;
    let (_, mut grad) = marginal_loglik_and_grad(theta, &CompactRows::from_dataset(main), spec);
    let pg = prior.grad_log_density(theta)?;
    for (g, p) in grad.iter_mut().zip(pg) {
        *g += p;
    }
    Ok(grad)
}

/// The BDF posterior as an HMC target. `data` may be absent, in which case
/// the target is the prior alone.
pub struct PosteriorTarget<'a> {
    data: Option<CompactRows>,
    spec: ModelSpec,
    prior: &'a GaussianPrior,
}

impl<'a> PosteriorTarget<'a> {
    pub fn new(data: Option<&Dataset>, spec: ModelSpec, prior: &'a GaussianPrior) -> Self {
        PosteriorTarget {
            data: data.map(CompactRows::from_dataset),
            spec,
            prior,
        }
    }
}

impl hmc::LogDensity for PosteriorTarget<'_> {
    fn dim(&self) -> usize {
        self.prior.dim()
    }

    fn logp_grad(&self, x: &[f64]) -> Option<(f64, Vec<f64>)> {
        if x.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let lp_prior = self.prior.log_density_flat(x).ok()?;
        let gp = self.prior.grad_log_density_flat(x).ok()?;
        let (mut lp, mut grad) = match &self.data {
            Some(data) => {
                let theta = ParamVector::from_flat(self.spec, x).ok()?;
                marginal_loglik_and_grad(&theta, data, &self.spec)
            }
            None => (0.0, vec![0.0; x.len()]),
        };
        lp += lp_prior;
        for (g, p) in grad.iter_mut().zip(gp) {
            *g += p;
        }
        if lp.is_finite() {
            Some((lp, grad))
        } else {
            None
        }
    }

    fn init_mean(&self) -> Vec<f64> {
        self.prior.mean_flat()
    }

    fn init_sd(&self) -> Vec<f64> {
        self.prior.sd_flat()
    }
}

/// Retained posterior samples across chains, chain-major.
#[derive(Debug, Clone)]
pub struct PosteriorDraws {
    pub spec: ModelSpec,
    /// `B x dim`, chain-major (all of chain 0, then chain 1, ...).
    pub draws: Vec<Vec<f64>>,
    pub chain_id: Vec<usize>,
    pub warmup_discarded: usize,
    /// Per-parameter potential scale reduction; absent with one chain.
    pub rhat: Option<Vec<f64>>,
    pub accept_rate: Vec<f64>,
    /// Set when more than 10% of post-warmup trajectories diverged.
    pub divergence_warning: bool,
    pub seed: u64,
    pub chains: usize,
}

impl PosteriorDraws {
    pub fn n_draws(&self) -> usize {
        self.draws.len()
    }

    pub fn dim(&self) -> usize {
        self.spec.dim()
    }

    pub fn theta(&self, b: usize) -> ParamVector {
        ParamVector::from_flat(self.spec, &self.draws[b]).expect("stored draw has valid dimension")
    }

    pub fn max_rhat(&self) -> Option<f64> {
        self.rhat
            .as_ref()
            .map(|r| r.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b)))
    }

    /// One row per draw: chain, iter, then named coefficients.
    pub fn to_csv_writer<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header = vec!["chain".to_string(), "iter".to_string()];
        header.extend(self.spec.coef_names());
        wtr.write_record(&header)?;
        let mut iter_within = 0usize;
        let mut prev_chain = usize::MAX;
        for (b, draw) in self.draws.iter().enumerate() {
            let chain = self.chain_id[b];
            if chain != prev_chain {
                iter_within = 0;
                prev_chain = chain;
            }
            let mut rec = vec![chain.to_string(), iter_within.to_string()];
            rec.extend(draw.iter().map(|v| format!("{v:.17e}")));
            wtr.write_record(&rec)?;
            iter_within += 1;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Classic potential scale reduction for one parameter.
///
/// `R = sqrt( ((n-1)/n * W + B/n) / W )` with between/within variances over
/// chains of equal length. Zero within-chain variance yields infinity.
pub fn gelman_rubin_scalar(chains: &[&[f64]]) -> Result<f64> {
    if chains.len() < 2 {
        return Err(BdfError::Config("R-hat requires at least 2 chains".into()));
    }
    let n = chains[0].len();
    if n < 2 || chains.iter().any(|c| c.len() != n) {
        return Err(BdfError::Config("R-hat requires equal chain lengths >= 2".into()));
    }
    let m = chains.len() as f64;
    let nf = n as f64;
    let means: Vec<f64> = chains.iter().map(|c| c.iter().sum::<f64>() / nf).collect();
    let grand = means.iter().sum::<f64>() / m;
    let between = nf / (m - 1.0) * means.iter().map(|mu| (mu - grand).powi(2)).sum::<f64>();
    let within = chains
        .iter()
        .zip(&means)
        .map(|(c, mu)| c.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (nf - 1.0))
        .sum::<f64>()
        / m;
    if within <= 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok((((nf - 1.0) / nf * within + between / nf) / within).sqrt())
}

/// Per-parameter R-hat from chain-major draws.
pub fn gelman_rubin(draws: &[Vec<f64>], chain_id: &[usize], dim: usize) -> Result<Vec<f64>> {
    let n_chains = chain_id.iter().copied().max().map_or(0, |c| c + 1);
    if n_chains < 2 {
        return Err(BdfError::Config("R-hat requires at least 2 chains".into()));
    }
    let mut out = Vec::with_capacity(dim);
    for j in 0..dim {
        let mut per_chain: Vec<Vec<f64>> = vec![Vec::new(); n_chains];
        for (draw, &c) in draws.iter().zip(chain_id) {
            per_chain[c].push(draw[j]);
        }
        let views: Vec<&[f64]> = per_chain.iter().map(|v| v.as_slice()).collect();
        out.push(gelman_rubin_scalar(&views)?);
    }
    Ok(out)
}

/// Draw posterior samples of the parameter vector with HMC.
///
/// `main` may carry an observed `u` column, in which case the sampler
/// conditions on it (complete-data mode); `None` targets the prior alone.
pub fn sample_posterior(
    main: Option<&Dataset>,
    spec: &ModelSpec,
    prior: &GaussianPrior,
    cfg: &SamplerConfig,
) -> Result<PosteriorDraws> {
    if let Some(data) = main {
        if data.z_dim() != spec.z_dim {
            return Err(BdfError::DimensionMismatch {
                expected: spec.z_dim,
                got: data.z_dim(),
                context: "dataset z_dim vs model spec",
            });
        }
    }
    if prior.dim() != spec.dim() {
        return Err(BdfError::DimensionMismatch {
            expected: spec.dim(),
            got: prior.dim(),
            context: "prior dimension vs model spec",
        });
    }
    let target = PosteriorTarget::new(main, *spec, prior);
    let runs = hmc::run_hmc(&target, cfg)?;
    let kept = cfg.iters - cfg.warmup;
    let mut draws = Vec::with_capacity(cfg.chains * kept);
    let mut chain_id = Vec::with_capacity(cfg.chains * kept);
    let mut accept_rate = Vec::with_capacity(cfg.chains);
    let mut total_divergences = 0usize;
    for (c, run) in runs.into_iter().enumerate() {
        total_divergences += run.divergences;
        accept_rate.push(run.accept_rate);
        for q in run.draws {
            draws.push(q);
            chain_id.push(c);
        }
    }
    let divergence_warning = total_divergences as f64 > 0.1 * (cfg.chains * kept) as f64;
    let rhat = if cfg.chains >= 2 && kept >= 2 {
        Some(gelman_rubin(&draws, &chain_id, spec.dim())?)
    } else {
        None
    };
    Ok(PosteriorDraws {
        spec: *spec,
        draws,
        chain_id,
        warmup_discarded: cfg.chains * cfg.warmup,
        rhat,
        accept_rate,
        divergence_warning,
        seed: cfg.seed,
        chains: cfg.chains,
    })
}
