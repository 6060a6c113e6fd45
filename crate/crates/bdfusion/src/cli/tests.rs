use super::*;
use crate::corrections::CorrectionResult;

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("bdf_cli_{name}_{}", std::process::id()));
    if dir.exists() {
        std::fs::remove_dir_all(&dir).unwrap();
    }
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn simulate_args(out: &Path, n1: usize, transportable: bool) -> SimulateArgs {
    SimulateArgs {
        config: None,
        n1: Some(n1),
        n2: None,
        delta_ua: None,
        delta_yam: None,
        transportable: Some(transportable),
        seed: Some(11),
        out_dir: Some(out.to_path_buf()),
    }
}

#[test]
fn simulate_writes_deterministic_csv_pair() {
    let dir = scratch("simulate");
    let args = simulate_args(&dir, 150, true);
    assert_eq!(cmd_simulate(&args).unwrap(), EXIT_OK);
    let main = Dataset::from_csv_path(dir.join("main.csv")).unwrap();
    let external = Dataset::from_csv_path(dir.join("external.csv")).unwrap();
    assert_eq!(main.n(), 150);
    assert_eq!(external.n(), 15);
    assert!(main.u().is_none());
    assert!(external.u().is_some());
    assert!(dir.join("resolved_config.json").exists());

    let first = std::fs::read(dir.join("main.csv")).unwrap();
    cmd_simulate(&args).unwrap();
    assert_eq!(first, std::fs::read(dir.join("main.csv")).unwrap());
}

#[test]
fn simulate_csv_round_trips_through_dataset() {
    let dir = scratch("roundtrip");
    cmd_simulate(&simulate_args(&dir, 80, true)).unwrap();
    let external = Dataset::from_csv_path(dir.join("external.csv")).unwrap();
    let mut buf = Vec::new();
    external.to_csv_writer(&mut buf).unwrap();
    let again = Dataset::from_csv_reader(buf.as_slice()).unwrap();
    assert_eq!(external, again);
}

#[test]
fn fit_prior_then_estimate_runs_end_to_end() {
    let dir = scratch("pipeline");
    cmd_simulate(&SimulateArgs {
        n1: Some(500),
        n2: Some(400),
        ..simulate_args(&dir, 500, true)
    })
    .unwrap();
    let code = cmd_fit_prior(&FitPriorArgs {
        config: None,
        external: Some(dir.join("external.csv")),
        delta_ua: None,
        delta_yam: None,
        inflate_sigma: None,
        out_dir: Some(dir.clone()),
    })
    .unwrap();
    assert_eq!(code, EXIT_OK);
    let prior =
        GaussianPrior::from_json(&std::fs::read_to_string(dir.join("prior.json")).unwrap())
            .unwrap();
    assert_eq!(prior.spec.z_dim, 2);

    let code = cmd_estimate(&EstimateArgs {
        config: None,
        main: Some(dir.join("main.csv")),
        prior: Some(dir.join("prior.json")),
        estimand: Some(EstimandArg::Rnde),
        method: Some(MethodArg::Cf),
        seed: Some(3),
        chains: Some(2),
        iters: Some(300),
        warmup: Some(150),
        a: 1,
        a_star: 0,
        m_fixed: 0,
        allow_nonconverged: true,
        out_dir: Some(dir.clone()),
    })
    .unwrap();
    assert!(code == EXIT_OK || code == EXIT_CONVERGENCE_SUPPRESSED);
    let result: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("result.json")).unwrap()).unwrap();
    assert!(result["point"].is_number());
    assert!(dir.join("draws.csv").exists());
}

#[test]
fn correct_naive_writes_result() {
    let dir = scratch("correct");
    cmd_simulate(&simulate_args(&dir, 400, true)).unwrap();
    let code = cmd_correct(&CorrectArgs {
        config: None,
        main: Some(dir.join("main.csv")),
        external: None,
        correction: Some(CorrectionArg::Naive),
        delta_ua: None,
        delta_yam: None,
        n_boot: Some(10),
        seed: Some(5),
        out_dir: Some(dir.clone()),
    })
    .unwrap();
    assert_eq!(code, EXIT_OK);
    let result: CorrectionResult =
        serde_json::from_str(&std::fs::read_to_string(dir.join("result.json")).unwrap()).unwrap();
    assert!(result.ci_low <= result.point && result.point <= result.ci_high);
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = scratch("config");
    let cfg_path = dir.join("run.json");
    std::fs::write(&cfg_path, r#"{"n1": 40, "seed": 1, "transportable": true}"#).unwrap();
    let code = cmd_simulate(&SimulateArgs {
        config: Some(cfg_path),
        n1: Some(60),
        n2: None,
        delta_ua: None,
        delta_yam: None,
        transportable: None,
        seed: None,
        out_dir: Some(dir.clone()),
    })
    .unwrap();
    assert_eq!(code, EXIT_OK);
    let resolved: RunConfig = serde_json::from_str(
        &std::fs::read_to_string(dir.join("resolved_config.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(resolved.n1, Some(60));
    assert_eq!(resolved.seed, Some(1));
    assert_eq!(Dataset::from_csv_path(dir.join("main.csv")).unwrap().n(), 60);
}

#[test]
fn missing_required_option_is_a_config_error() {
    let args = SimulateArgs {
        config: None,
        n1: None,
        n2: None,
        delta_ua: None,
        delta_yam: None,
        transportable: None,
        seed: None,
        out_dir: None,
    };
    assert!(matches!(cmd_simulate(&args), Err(BdfError::Config(_))));
}

#[test]
fn study_outputs_are_reproducible_byte_for_byte() {
    let dir = scratch("study");
    let mut scenario = ScenarioConfig::new(200, false, false, true);
    scenario.n2 = 100;
    scenario.replicates = 2;
    scenario.n_boot = 5;
    scenario.seed = 9;
    scenario.sampler = SamplerConfig {
        chains: 1,
        iters: 120,
        warmup: 60,
        ..SamplerConfig::default()
    };
    let cfg_path = dir.join("study.json");
    let body = serde_json::json!({ "scenarios": [scenario] });
    std::fs::write(&cfg_path, serde_json::to_string_pretty(&body).unwrap()).unwrap();
    let args = StudyArgs {
        config: cfg_path,
        seed: None,
        out_dir: Some(dir.clone()),
    };
    assert_eq!(cmd_study(&args).unwrap(), EXIT_OK);
    let first = std::fs::read(dir.join("report.csv")).unwrap();
    assert_eq!(cmd_study(&args).unwrap(), EXIT_OK);
    assert_eq!(first, std::fs::read(dir.join("report.csv")).unwrap());
}
