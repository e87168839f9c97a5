//! SIRT on a grains phantom with Poisson transmission noise, driven through
//! the text config format. Writes CSVs, images and SVG plots.

use std::error::Error;

use semistop::harness::{parse_config, run_experiment};

const CONFIG: &str = "
name = sirt-poisson
N = 48
angles = 3:3:180
pixel_size = 0.04
phantom = grains
noise = poisson
rho = 0.01
scheme = sirt
max_iters = 300
rules = dp, ftnl, upre, gcv, ncp
trace = girard
trace_samples = 2
";

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let mut cfg = parse_config(CONFIG)?;
    cfg.out = std::env::temp_dir().join("semistop-sirt-poisson");
    let outcome = run_experiment(&cfg)?;
    println!(
        "m = {}, measured rho = {:.4}, I0 = {:.3e}, surrogate eta = {:.4e}",
        outcome.m,
        outcome.rho,
        outcome.i0.unwrap_or(f64::NAN),
        outcome.eta
    );
    for row in &outcome.summary {
        let k = row.k_stop.map_or("-".to_string(), |k| k.to_string());
        let ratio = match (row.err_at_stop, row.min_err) {
            (Some(e), Some(m)) => format!("{:.3}", e / m),
            _ => "-".into(),
        };
        println!("{:>5}: k = {k:>4}  error/min = {ratio}", row.rule);
    }
    println!("outputs in {}", outcome.artifacts.dir.display());
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
