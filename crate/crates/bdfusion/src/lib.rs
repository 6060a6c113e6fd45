//! Bayesian data fusion for causal mediation analysis with an unmeasured
//! binary confounder.
//!
//! The main analysis data never observe the confounder `u`; an external
//! dataset that does observe it is converted into an informative Gaussian
//! prior via maximum likelihood. Hamiltonian Monte Carlo then samples the
//! `u`-marginalized posterior on the main data, and causal contrasts
//! (randomized and natural mediation effects, controlled direct effects, and
//! two-period exposure effects) are computed per posterior draw either in
//! closed form over the covariate pattern table or by per-unit simulation.
//! Frequentist delta-/plug-in bias corrections with bootstrap intervals are
//! included for comparison, along with a simulation-study harness.

pub mod cli;
pub mod corrections;
pub mod data;
pub mod error;
pub mod estimands;
pub mod mle;
pub mod model;
pub mod posterior;
pub mod prior;
pub mod rng;
pub mod simgen;

pub use corrections::{
    correction_with_components, dg_correction, ix_correction, naive_rnde, CorrectionMethod,
    CorrectionOptions, CorrectionResult, ExternalComponents, SaturationMode,
};
pub use data::{CovariatePatternTable, Dataset};
pub use error::{BdfError, Result};
pub use estimands::{
    bdf_cf_estimate, bdf_sim_estimate, estimate_ace_tvc, estimate_cde, estimate_nde,
    estimate_nie, estimate_rnie, estimate_total_effect, rnde_closed_form, EstimandKind,
    EstimandMethod, EstimandResult,
};
pub use mle::{fit_external_models, fit_logistic_mle, ExternalFits, FitOptions, MleFit};
pub use model::{logit_inv, ModelSpec, ParamVector, Regime, Role};
pub use posterior::{
    grad_log_posterior, log_marginal_likelihood, run_hmc, sample_posterior, ChainRun, LogDensity,
    PosteriorDraws, PosteriorTarget, SamplerConfig,
};
pub use prior::{build_prior, GaussianPrior, IdentifiableSets, Inflation};
pub use simgen::{
    generate_dataset, run_study, scenario_spec, true_rnde, truth_params, GenCoefficients,
    ScenarioConfig, StudyMethod, StudyReport,
};
