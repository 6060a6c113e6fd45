//! Sample the U-marginalized posterior by Hamiltonian Monte Carlo and
//! inspect convergence diagnostics.
//!
//! Run with: cargo run --release --example posterior_sampling

use bdfusion::{
    build_prior, fit_external_models, generate_dataset, sample_posterior, scenario_spec,
    GenCoefficients, SamplerConfig,
};

fn main() -> bdfusion::Result<()> {
    let spec = scenario_spec(false, false);
    let coefs = GenCoefficients::transportable();
    let main = generate_dataset(10_000, &coefs, false, false, false, 1);
    let external = generate_dataset(1_000, &coefs, false, false, true, 2);

    let fits = fit_external_models(&external, &spec)?;
    let prior = build_prior(&fits, &spec, None)?;
    let cfg = SamplerConfig { seed: 3, ..SamplerConfig::default() };
    let draws = sample_posterior(Some(&main), &spec, &prior, &cfg)?;

    println!(
        "{} retained draws from {} chains ({} warmup iterations discarded each)",
        draws.n_draws(),
        draws.chains,
        draws.warmup_discarded
    );
    for (c, rate) in draws.accept_rate.iter().enumerate() {
        println!("chain {c}: acceptance rate {rate:.3}");
    }
    let names = spec.coef_names();
    if let Some(rhat) = &draws.rhat {
        let (j, worst) = rhat
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap();
        println!("worst R-hat: {worst:.4} ({})", names[j]);
    }

    // Posterior means of the confounder effects, the coordinates the main
    // data alone cannot identify.
    let b = draws.n_draws() as f64;
    for label in ["beta_u", "alpha_u"] {
        let j = names.iter().position(|n| n == label).unwrap();
        let mean: f64 = draws.draws.iter().map(|d| d[j]).sum::<f64>() / b;
        println!("posterior mean {label}: {mean:.4} (truth 1.5)");
    }
    Ok(())
}
