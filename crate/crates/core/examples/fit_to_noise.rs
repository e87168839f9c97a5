//! DP against FTNL. The plain discrepancy threshold τη√m ignores the degrees
//! of freedom the iterate has already absorbed; FTNL subtracts the trace of
//! the influence matrix and stops later, nearer the error minimum.

use std::error::Error;

use semistop::harness::{build_problem, parse_angles, ExperimentConfig, NoiseModel, OperatorCache};
use semistop::linops::{svd_spectrum, LinearOperator};
use semistop::solvers::{make_landweber, run, Relaxation, RunOptions};
use semistop::stoprules::{evaluate, Rule, RuleConfig};
use semistop::trace::ExactTrace;

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let mut cfg = ExperimentConfig::new(32, parse_angles("4:4:180")?);
    cfg.noise = NoiseModel::GaussianRelative { rho: 0.05 };
    let problem = build_problem(&cfg, &OperatorCache::new())?;
    let a = problem.operator();

    let scheme = make_landweber(a, Relaxation::Auto)?;
    let mut exact = ExactTrace::for_scheme(svd_spectrum(a)?, &scheme)?;
    let opts = RunOptions::new(1500).with_ground_truth(problem.phantom.image.clone());
    let (mut record, _) = run(a, problem.rhs(), &scheme, &opts, &mut [&mut exact])?;

    let rules = RuleConfig { tau: 1.0, ..RuleConfig::with_eta(problem.eta) };
    evaluate(&mut record, &[Rule::Dp, Rule::Ftnl], &rules)?;

    let (k_min, e_min) = record.min_error().unwrap();
    println!("m = {}, eta = {:.4e}, error minimum {e_min:.4} at k = {k_min}", a.rows(), problem.eta);
    for d in &record.decisions {
        match d.k_stop {
            Some(k) => println!("{:>4}: k = {k:4}, error {:.4}", d.rule, record.error_at(k).unwrap()),
            None => println!("{:>4}: did not fire", d.rule),
        }
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
