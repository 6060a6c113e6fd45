//! Generate a main/external dataset pair from the built-in generating
//! process and write both as CSV.
//!
//! Run with: cargo run --example simulate_data

use bdfusion::{generate_dataset, true_rnde, GenCoefficients};

fn main() -> bdfusion::Result<()> {
    let coefs = GenCoefficients::transportable();
    let (delta_ua, delta_yam) = (false, false);

    // The main data never observe the confounder U; the external data do.
    let main = generate_dataset(10_000, &coefs, delta_ua, delta_yam, false, 42);
    let external = generate_dataset(1_000, &coefs, delta_ua, delta_yam, true, 43);

    main.to_csv_path("main.csv")?;
    external.to_csv_path("external.csv")?;

    println!("main.csv:     {} rows, u observed: {}", main.n(), main.u().is_some());
    println!("external.csv: {} rows, u observed: {}", external.n(), external.u().is_some());
    println!(
        "true rNDE of this generating process: {:.5}",
        true_rnde(&coefs, delta_ua, delta_yam)
    );
    Ok(())
}
