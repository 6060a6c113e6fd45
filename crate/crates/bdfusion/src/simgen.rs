//! Synthetic data generation and the simulation-study harness.
//!
//! The generating process is binary throughout: two independent Bernoulli(0.5)
//! covariates, a confounded exposure, an optionally exposure-induced latent
//! confounder, a mediator, and an outcome with an optional exposure-mediator
//! interaction.

use rand::Rng;

use crate::data::Dataset;
use crate::error::{BdfError, Result};
use crate::estimands::rnde_closed_form;
use crate::model::{logit_inv, ModelSpec, ParamVector};
use crate::posterior::SamplerConfig;
use crate::rng::substream_rng;

/// Confounder effect sizes shared by the mediator and outcome models.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GenCoefficients {
    /// Effect of `u` in the mediator model.
    pub beta_u: f64,
    /// Effect of `u` in the outcome model.
    pub alpha_u: f64,
}

impl GenCoefficients {
    /// Confounding structure matching the main data (transportable case).
    pub fn transportable() -> Self {
        GenCoefficients { beta_u: 1.5, alpha_u: 1.5 }
    }

    /// External world where `u` is inert (non-transportable case: the
    /// external fits then carry no information about the `u` effects).
    pub fn null_confounding() -> Self {
        GenCoefficients { beta_u: 0.0, alpha_u: 0.0 }
    }
}

/// The generating parameter vector, laid out on the matching [`ModelSpec`].
///
/// `delta_ua` switches on the exposure -> confounder path (coefficient 1.5);
/// `delta_yam` switches on the exposure-mediator interaction (coefficient 1).
pub fn truth_params(coefs: &GenCoefficients, delta_ua: bool, delta_yam: bool) -> ParamVector {
    let spec = ModelSpec::new(2, delta_yam, delta_ua);
    let mut theta_u = vec![-0.4];
    if delta_ua {
        theta_u.push(1.5);
    }
    theta_u.extend([0.0, 0.0]);
    let theta_m = vec![-1.5, 0.7, 0.3, 0.2, coefs.beta_u];
    let mut theta_y = vec![-2.0, 1.0, 0.3, 0.2, 0.8];
    if delta_yam {
        theta_y.push(1.0);
    }
    theta_y.push(coefs.alpha_u);
    ParamVector::new(spec, theta_u, theta_m, theta_y).expect("truth layout matches spec")
}

/// Model spec matching [`truth_params`] for the given scenario switches.
pub fn scenario_spec(delta_ua: bool, delta_yam: bool) -> ModelSpec {
    ModelSpec::new(2, delta_yam, delta_ua)
}

/// Draw `n` observations from the generating process. The confounder column
/// is attached when `keep_u` is set (external data) and dropped otherwise
/// (main data). Identical seeds give identical datasets.
pub fn generate_dataset(
    n: usize,
    coefs: &GenCoefficients,
    delta_ua: bool,
    delta_yam: bool,
    keep_u: bool,
    seed: u64,
) -> Dataset {
    let mut rng = substream_rng(seed, &[0xDA7A]);
    let mut z = Vec::with_capacity(2 * n);
    let mut a = Vec::with_capacity(n);
    let mut m = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut u = Vec::with_capacity(n);
    let bern = |rng: &mut rand::rngs::SmallRng, p: f64| u8::from(rng.gen::<f64>() < p);
    for _ in 0..n {
        let z1 = bern(&mut rng, 0.5);
        let z2 = bern(&mut rng, 0.5);
        let (z1f, z2f) = (f64::from(z1), f64::from(z2));
        let ai = bern(&mut rng, logit_inv(-0.2 + 0.5 * z1f + 0.7 * z2f));
        let af = f64::from(ai);
        let ui = bern(
            &mut rng,
            logit_inv(-0.4 + if delta_ua { 1.5 * af } else { 0.0 }),
        );
        let uf = f64::from(ui);
        let mi = bern(
            &mut rng,
            logit_inv(-1.5 + 0.3 * z1f + 0.2 * z2f + 0.7 * af + coefs.beta_u * uf),
        );
        let mf = f64::from(mi);
        let yi = bern(
            &mut rng,
            logit_inv(
                -2.0 + 0.3 * z1f + 0.2 * z2f + af + 0.8 * mf
                    + if delta_yam { af * mf } else { 0.0 }
                    + coefs.alpha_u * uf,
            ),
        );
        z.extend([z1f, z2f]);
        a.push(ai);
        m.push(mi);
        y.push(yi);
        u.push(ui);
    }
    Dataset::new(z, 2, a, m, y, keep_u.then_some(u), None).expect("generated columns are binary")
}

/// The true randomized natural direct effect of the generating process,
/// standardized over the Bernoulli(0.5) x Bernoulli(0.5) covariate law.
pub fn true_rnde(coefs: &GenCoefficients, delta_ua: bool, delta_yam: bool) -> f64 {
    let theta = truth_params(coefs, delta_ua, delta_yam);
    let mut total = 0.0;
    for z1 in [0.0, 1.0] {
        for z2 in [0.0, 1.0] {
            total += 0.25 * rnde_closed_form(&theta, &[z1, z2]);
        }
    }
    total
}

/// One simulation-study scenario. `n1` is the main (confounder-free) sample
/// and `n2` the external sample; following the study design the external
/// data are one tenth the size of the main data by default.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ScenarioConfig {
    /// Main dataset size.
    pub n1: usize,
    /// External dataset size.
    pub n2: usize,
    /// Exposure-induced confounder switch.
    pub delta_ua: bool,
    /// Exposure-mediator interaction switch.
    pub delta_yam: bool,
    /// When false the external data are generated with `beta_u = alpha_u = 0`
    /// while the main data keep 1.5, violating transportability.
    pub transportable: bool,
    pub replicates: usize,
    pub seed: u64,
    /// Bootstrap replicates for the frequentist comparators.
    pub n_boot: usize,
    pub sampler: SamplerConfig,
}

impl ScenarioConfig {
    pub fn new(n1: usize, delta_ua: bool, delta_yam: bool, transportable: bool) -> Self {
        ScenarioConfig {
            n1,
            n2: (n1 / 10).max(1),
            delta_ua,
            delta_yam,
            transportable,
            replicates: 200,
            seed: 0,
            n_boot: 200,
            sampler: SamplerConfig::default(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n1 == 0 || self.n2 == 0 || self.replicates == 0 || self.n_boot == 0 {
            return Err(BdfError::Config(
                "n1, n2, replicates, and n_boot must all be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// External-world confounder coefficients for this scenario.
    pub fn external_coefficients(&self) -> GenCoefficients {
        if self.transportable {
            GenCoefficients::transportable()
        } else {
            GenCoefficients::null_confounding()
        }
    }
}

/// The five estimators compared in the study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum StudyMethod {
    Naive,
    Dg,
    Ix,
    BdfSim,
    BdfCf,
}

impl StudyMethod {
    pub const ALL: [StudyMethod; 5] = [
        StudyMethod::Naive,
        StudyMethod::Dg,
        StudyMethod::Ix,
        StudyMethod::BdfSim,
        StudyMethod::BdfCf,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StudyMethod::Naive => "naive",
            StudyMethod::Dg => "dg",
            StudyMethod::Ix => "ix",
            StudyMethod::BdfSim => "bdf_sim",
            StudyMethod::BdfCf => "bdf_cf",
        }
    }
}

/// One method's outcome on one replicate. Failures are recorded, never
/// silently dropped.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ReplicateRecord {
    pub scenario: usize,
    pub replicate: usize,
    pub method: StudyMethod,
    pub point: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub covered: Option<bool>,
    pub error: Option<String>,
}

/// Aggregates for one method within one scenario.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct MethodSummary {
    pub method: StudyMethod,
    pub n_ok: usize,
    pub n_failed: usize,
    pub mean_bias: f64,
    /// Percentage of successful replicates whose interval covers the truth.
    pub coverage_pct: f64,
    pub mean_width: f64,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ScenarioSummary {
    pub config: ScenarioConfig,
    pub truth: f64,
    pub methods: Vec<MethodSummary>,
}

/// Full study output: per-scenario aggregates plus the per-replicate log.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct StudyReport {
    pub scenarios: Vec<ScenarioSummary>,
    pub records: Vec<ReplicateRecord>,
}

impl StudyReport {
    /// Summary CSV: one row per scenario x method.
    pub fn to_csv_writer<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record([
            "scenario",
            "n1",
            "n2",
            "delta_ua",
            "delta_yam",
            "transportable",
            "replicates",
            "truth",
            "method",
            "n_ok",
            "n_failed",
            "mean_bias",
            "coverage_pct",
            "mean_width",
        ])?;
        for (s, scen) in self.scenarios.iter().enumerate() {
            let c = &scen.config;
            for m in &scen.methods {
                wtr.write_record([
                    s.to_string(),
                    c.n1.to_string(),
                    c.n2.to_string(),
                    c.delta_ua.to_string(),
                    c.delta_yam.to_string(),
                    c.transportable.to_string(),
                    c.replicates.to_string(),
                    format!("{:.6}", scen.truth),
                    m.method.name().to_string(),
                    m.n_ok.to_string(),
                    m.n_failed.to_string(),
                    format!("{:.6}", m.mean_bias),
                    format!("{:.2}", m.coverage_pct),
                    format!("{:.6}", m.mean_width),
                ])?;
            }
        }
        wtr.flush()?;
        Ok(())
    }

    /// Per-replicate CSV log, full precision.
    pub fn records_to_csv_writer<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record([
            "scenario", "replicate", "method", "point", "ci_low", "ci_high", "covered", "error",
        ])?;
        let fmt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.17e}"));
        for r in &self.records {
            wtr.write_record([
                r.scenario.to_string(),
                r.replicate.to_string(),
                r.method.name().to_string(),
                fmt(r.point),
                fmt(r.ci_low),
                fmt(r.ci_high),
                r.covered.map_or(String::new(), |b| b.to_string()),
                r.error.clone().unwrap_or_default(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Convenience lookup of one aggregate cell.
    pub fn summary(&self, scenario: usize, method: StudyMethod) -> Option<&MethodSummary> {
        self.scenarios
            .get(scenario)?
            .methods
            .iter()
            .find(|m| m.method == method)
    }
}

fn run_replicate(cfg: &ScenarioConfig, scenario_idx: usize, rep: usize) -> Vec<ReplicateRecord> {
    use crate::corrections::{dg_correction, ix_correction, naive_rnde, CorrectionOptions};
    use crate::estimands::{bdf_cf_estimate, bdf_sim_estimate, rnde_regimes};
    use crate::mle::fit_external_models;
    use crate::prior::build_prior;

    let spec = scenario_spec(cfg.delta_ua, cfg.delta_yam);
    let rep_seed = crate::rng::substream_seed(cfg.seed, &[0x57, scenario_idx as u64, rep as u64]);
    let sub = |tag: u64| crate::rng::substream_seed(rep_seed, &[tag]);
    let main = generate_dataset(
        cfg.n1,
        &GenCoefficients::transportable(),
        cfg.delta_ua,
        cfg.delta_yam,
        false,
        sub(1),
    );
    let external = generate_dataset(
        cfg.n2,
        &cfg.external_coefficients(),
        cfg.delta_ua,
        cfg.delta_yam,
        true,
        sub(2),
    );

    let boot_opts = |tag: u64| CorrectionOptions {
        n_boot: cfg.n_boot,
        seed: sub(tag),
        ..CorrectionOptions::default()
    };
    let naive = naive_rnde(&main, &spec, &boot_opts(3)).map(|r| (r.point, r.ci_low, r.ci_high));
    let dg = dg_correction(&main, &external, &spec, &boot_opts(4))
        .map(|r| (r.point, r.ci_low, r.ci_high));
    let ix = ix_correction(&main, &external, &spec, &boot_opts(5))
        .map(|r| (r.point, r.ci_low, r.ci_high));

    // one posterior shared by both BDF estimators
    let bdf = (|| {
        let fits = fit_external_models(&external, &spec)?;
        let prior = build_prior(&fits, &spec, None)?;
        let sampler = SamplerConfig {
            seed: sub(6),
            ..cfg.sampler
        };
        let draws = crate::posterior::sample_posterior(Some(&main), &spec, &prior, &sampler)?;
        let sim = bdf_sim_estimate(&draws, &main, rnde_regimes(), sub(7))?;
        let table = crate::data::CovariatePatternTable::from_dataset(&main);
        let cf = bdf_cf_estimate(&draws, &table, sub(8))?;
        Ok::<_, BdfError>((
            (sim.point, sim.ci_low, sim.ci_high),
            (cf.point, cf.ci_low, cf.ci_high),
        ))
    })();
    let (bdf_sim, bdf_cf) = match bdf {
        Ok((s, c)) => (Ok(s), Ok(c)),
        Err(e) => {
            let msg = e.to_string();
            (
                Err(BdfError::Sampler(msg.clone())),
                Err(BdfError::Sampler(msg)),
            )
        }
    };

    let truth = true_rnde(&GenCoefficients::transportable(), cfg.delta_ua, cfg.delta_yam);
    let record = |method: StudyMethod, res: Result<(f64, f64, f64)>| match res {
        Ok((point, lo, hi)) => ReplicateRecord {
            scenario: scenario_idx,
            replicate: rep,
            method,
            point: Some(point),
            ci_low: Some(lo),
            ci_high: Some(hi),
            covered: Some(lo <= truth && truth <= hi),
            error: None,
        },
        Err(e) => ReplicateRecord {
            scenario: scenario_idx,
            replicate: rep,
            method,
            point: None,
            ci_low: None,
            ci_high: None,
            covered: None,
            error: Some(e.to_string()),
        },
    };
    vec![
        record(StudyMethod::Naive, naive),
        record(StudyMethod::Dg, dg),
        record(StudyMethod::Ix, ix),
        record(StudyMethod::BdfSim, bdf_sim),
        record(StudyMethod::BdfCf, bdf_cf),
    ]
}

/// Run every scenario of the grid, all five methods per replicate.
/// Replicates execute in parallel on independent RNG substreams, so the
/// report is reproducible bit-for-bit for a given configuration.
pub fn run_study(scenarios: &[ScenarioConfig]) -> Result<StudyReport> {
    use rayon::prelude::*;

    for cfg in scenarios {
        cfg.validate()?;
    }
    let jobs: Vec<(usize, usize)> = scenarios
        .iter()
        .enumerate()
        .flat_map(|(s, cfg)| (0..cfg.replicates).map(move |r| (s, r)))
        .collect();
    let records: Vec<ReplicateRecord> = jobs
        .par_iter()
        .flat_map_iter(|&(s, r)| run_replicate(&scenarios[s], s, r))
        .collect();

    let mut summaries = Vec::with_capacity(scenarios.len());
    for (s, cfg) in scenarios.iter().enumerate() {
        let truth = true_rnde(&GenCoefficients::transportable(), cfg.delta_ua, cfg.delta_yam);
        let methods = StudyMethod::ALL
            .iter()
            .map(|&method| {
                let rows: Vec<&ReplicateRecord> = records
                    .iter()
                    .filter(|r| r.scenario == s && r.method == method)
                    .collect();
                let ok: Vec<&&ReplicateRecord> =
                    rows.iter().filter(|r| r.error.is_none()).collect();
                let n_ok = ok.len();
                let n = n_ok.max(1) as f64;
                let mean_bias =
                    ok.iter().map(|r| r.point.unwrap() - truth).sum::<f64>() / n;
                let coverage_pct = 100.0
                    * ok.iter().filter(|r| r.covered == Some(true)).count() as f64
                    / n;
                let mean_width = ok
                    .iter()
                    .map(|r| r.ci_high.unwrap() - r.ci_low.unwrap())
                    .sum::<f64>()
                    / n;
                MethodSummary {
                    method,
                    n_ok,
                    n_failed: rows.len() - n_ok,
                    mean_bias,
                    coverage_pct,
                    mean_width,
                }
            })
            .collect();
        summaries.push(ScenarioSummary {
            config: cfg.clone(),
            truth,
            methods,
        });
    }
    Ok(StudyReport {
        scenarios: summaries,
        records,
    })
}

#[cfg(test)]
mod gen_tests {
    use super::*;

    #[test]
    fn generation_is_deterministic_in_the_seed() {
        let c = GenCoefficients::transportable();
        let d1 = generate_dataset(200, &c, true, true, true, 7);
        let d2 = generate_dataset(200, &c, true, true, true, 7);
        let d3 = generate_dataset(200, &c, true, true, true, 8);
        assert_eq!(d1, d2);
        assert_ne!(d1, d3);
    }

    #[test]
    fn keep_u_controls_the_confounder_column() {
        let c = GenCoefficients::transportable();
        assert!(generate_dataset(10, &c, false, false, true, 1).has_u());
        assert!(!generate_dataset(10, &c, false, false, false, 1).has_u());
    }

    #[test]
    fn empirical_rates_match_the_generating_process() {
        let c = GenCoefficients::transportable();
        let d = generate_dataset(50_000, &c, true, true, true, 42);
        let n = d.n() as f64;
        // Z1 marginal is 0.5
        let z1_mean: f64 = (0..d.n()).map(|i| d.z_row(i)[0]).sum::<f64>() / n;
        assert!((z1_mean - 0.5).abs() < 0.01, "z1 mean {z1_mean}");
        // U rate among a = 0 rows is logit_inv(-0.4)
        let (mut u_sum, mut n0) = (0.0, 0.0);
        for i in 0..d.n() {
            if d.a()[i] == 0 {
                u_sum += f64::from(d.u().unwrap()[i]);
                n0 += 1.0;
            }
        }
        let expect = logit_inv(-0.4);
        assert!((u_sum / n0 - expect).abs() < 0.015, "u|a=0 rate {}", u_sum / n0);
    }

    #[test]
    fn truth_params_layout_matches_spec() {
        let t = truth_params(&GenCoefficients::transportable(), true, true);
        assert_eq!(t.spec, scenario_spec(true, true));
        assert_eq!(t.gamma_a(), 1.5);
        assert_eq!(t.alpha_am(), 1.0);
        assert_eq!(t.beta_u(), 1.5);
        let t0 = truth_params(&GenCoefficients::null_confounding(), false, false);
        assert_eq!(t0.gamma_a(), 0.0);
        assert_eq!(t0.alpha_am(), 0.0);
        assert_eq!(t0.alpha_u(), 0.0);
        assert_eq!(t0.spec.dim(), 3 + 5 + 6);
    }

    #[test]
    fn true_rnde_is_positive_and_stable() {
        // direct A -> Y path is +1 on the logit scale, so the rNDE is
        // comfortably positive in every scenario
        for (ua, yam) in [(false, false), (false, true), (true, false), (true, true)] {
            let v = true_rnde(&GenCoefficients::transportable(), ua, yam);
            assert!(v > 0.05 && v < 0.5, "rnde {v} for ua={ua} yam={yam}");
        }
    }
}

#[cfg(test)]
mod study_tests {
    use super::*;

    fn tiny_scenario() -> ScenarioConfig {
        let mut cfg = ScenarioConfig::new(400, false, false, true);
        cfg.n2 = 120;
        cfg.replicates = 1;
        cfg.seed = 7;
        cfg.n_boot = 8;
        cfg.sampler = SamplerConfig {
            chains: 1,
            iters: 160,
            warmup: 80,
            ..SamplerConfig::default()
        };
        cfg
    }

    #[test]
    fn study_is_deterministic() {
        let cfg = tiny_scenario();
        let a = run_study(std::slice::from_ref(&cfg)).unwrap();
        let b = run_study(std::slice::from_ref(&cfg)).unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    }

    #[test]
    fn single_replicate_coverage_is_all_or_nothing() {
        let cfg = tiny_scenario();
        let report = run_study(&[cfg]).unwrap();
        assert_eq!(report.records.len(), StudyMethod::ALL.len());
        for m in StudyMethod::ALL {
            let s = report.summary(0, m).unwrap();
            assert_eq!(s.n_ok + s.n_failed, 1, "{}", m.name());
            if s.n_ok == 1 {
                assert!(s.coverage_pct == 0.0 || s.coverage_pct == 100.0);
                assert!(s.mean_width > 0.0);
            }
        }
    }

    #[test]
    fn invalid_config_is_rejected() {
        let mut cfg = tiny_scenario();
        cfg.replicates = 0;
        assert!(matches!(run_study(&[cfg]), Err(BdfError::Config(_))));
    }

    #[test]
    fn csv_emission_round_trips() {
        let cfg = tiny_scenario();
        let report = run_study(&[cfg]).unwrap();
        let mut summary = Vec::new();
        report.to_csv_writer(&mut summary).unwrap();
        let text = String::from_utf8(summary).unwrap();
        assert!(text.starts_with("scenario,n1,n2"));
        assert_eq!(text.lines().count(), 1 + StudyMethod::ALL.len());
        let mut log = Vec::new();
        report.records_to_csv_writer(&mut log).unwrap();
        assert_eq!(String::from_utf8(log).unwrap().lines().count(), 1 + report.records.len());
    }
}
