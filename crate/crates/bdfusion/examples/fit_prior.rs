//! Fit the three external logistic models (U, M, Y) by maximum likelihood
//! and turn them into a Gaussian prior, optionally inflating the variances
//! of the identifiable coordinates so only the confounder-effect information
//! is carried forward.
//!
//! Run with: cargo run --example fit_prior

use bdfusion::{
    build_prior, fit_external_models, generate_dataset, scenario_spec, GenCoefficients, Inflation,
};

fn main() -> bdfusion::Result<()> {
    let spec = scenario_spec(false, false);
    let external = generate_dataset(1_000, &GenCoefficients::transportable(), false, false, true, 7);

    let fits = fit_external_models(&external, &spec)?;
    println!("{:<12} {:>10} {:>10}", "coefficient", "estimate", "std.err");
    let names = spec.coef_names();
    let mut k = 0;
    for fit in [&fits.u, &fits.m, &fits.y] {
        for (est, se) in fit.estimate.iter().zip(fit.standard_errors()) {
            println!("{:<12} {:>10.4} {:>10.4}", names[k], est, se);
            k += 1;
        }
    }

    let tight = build_prior(&fits, &spec, None)?;
    let diffuse = build_prior(&fits, &spec, Some(Inflation { sigma: 10.0, indices: None }))?;
    println!("\nprior marginal sd of the mediator intercept:");
    println!("  no inflation:    {:.4}", tight.sd_flat()[spec.dim_u()]);
    println!("  sigma = 10:      {:.4}", diffuse.sd_flat()[spec.dim_u()]);
    println!("\nserialized prior: {} bytes", tight.to_json()?.len());
    Ok(())
}
