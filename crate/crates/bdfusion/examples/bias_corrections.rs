//! Frequentist comparators: the naive (confounder-ignoring) estimator and
//! the delta-gamma and iterated-expectation corrections that plug external
//! bias components into the main-data estimate, each with a percentile
//! bootstrap interval.
//!
//! Run with: cargo run --release --example bias_corrections

use bdfusion::{
    dg_correction, generate_dataset, ix_correction, naive_rnde, scenario_spec, true_rnde,
    CorrectionOptions, GenCoefficients,
};

fn main() -> bdfusion::Result<()> {
    let spec = scenario_spec(false, false);
    let coefs = GenCoefficients::transportable();
    let main = generate_dataset(10_000, &coefs, false, false, false, 20);
    let external = generate_dataset(1_000, &coefs, false, false, true, 21);

    let opts = CorrectionOptions { n_boot: 200, seed: 22, ..CorrectionOptions::default() };
    let naive = naive_rnde(&main, &spec, &opts)?;
    let dg = dg_correction(&main, &external, &spec, &opts)?;
    let ix = ix_correction(&main, &external, &spec, &opts)?;

    println!("true rNDE: {:.5}\n", true_rnde(&coefs, false, false));
    for (label, r) in [("naive", &naive), ("DG   ", &dg), ("IX   ", &ix)] {
        println!(
            "{label}  point {:.5}  95% CI [{:.5}, {:.5}]  width {:.5}",
            r.point,
            r.ci_low,
            r.ci_high,
            r.ci_high - r.ci_low
        );
    }
    println!("\nThe naive interval is narrow but centered off the truth; the");
    println!("corrections recenter it using the external confounder information.");
    Ok(())
}
