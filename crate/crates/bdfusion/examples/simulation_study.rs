//! A small coverage study comparing all five estimators over repeated
//! draws from the generating process. Scale `replicates`, `n1`, and the
//! sampler settings up for publication-grade numbers; this configuration
//! finishes in a few minutes on a laptop.
//!
//! Run with: cargo run --release --example simulation_study

use bdfusion::{run_study, SamplerConfig, ScenarioConfig};

fn main() -> bdfusion::Result<()> {
    let mut transportable = ScenarioConfig::new(2_000, false, false, true);
    transportable.replicates = 10;
    transportable.n_boot = 100;
    transportable.seed = 30;
    transportable.sampler = SamplerConfig {
        chains: 2,
        iters: 800,
        warmup: 400,
        ..SamplerConfig::default()
    };
    let mut violated = ScenarioConfig {
        transportable: false,
        ..transportable.clone()
    };
    violated.seed = 31;

    let report = run_study(&[transportable, violated])?;
    for (s, scen) in report.scenarios.iter().enumerate() {
        println!(
            "scenario {s} (transportable = {}): truth {:.5}",
            scen.config.transportable, scen.truth
        );
        for m in &scen.methods {
            println!(
                "  {:<8} coverage {:>6.1}%  mean bias {:>+8.5}  mean width {:.5}",
                m.method.name(),
                m.coverage_pct,
                m.mean_bias,
                m.mean_width
            );
        }
    }

    let mut csv = Vec::new();
    report.to_csv_writer(&mut csv)?;
    std::fs::write("study_report.csv", csv)?;
    println!("\nwrote study_report.csv");
    Ok(())
}
