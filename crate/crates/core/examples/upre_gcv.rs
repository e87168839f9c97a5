//! UPRE and GCV from one run, with the trace term estimated by a shadow
//! iteration instead of the singular values.

use std::error::Error;

use semistop::harness::{build_problem, parse_angles, ExperimentConfig, NoiseModel, OperatorCache};
use semistop::solvers::{make_landweber, run, Relaxation, RunOptions};
use semistop::stoprules::{evaluate, Rule, RuleConfig};
use semistop::trace::{Aggregate, TraceEstimator, TraceMethod};

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let mut cfg = ExperimentConfig::new(32, parse_angles("2:2:180")?);
    cfg.noise = NoiseModel::GaussianRelative { rho: 0.05 };
    let problem = build_problem(&cfg, &OperatorCache::new())?;
    let a = problem.operator();

    let scheme = make_landweber(a, Relaxation::Auto)?;
    let mut shadow = TraceEstimator::new(TraceMethod::SantosDePierro, a, &scheme, 4, 0, Aggregate::Mean)?;
    let opts = RunOptions::new(1500).with_ground_truth(problem.phantom.image.clone());
    let (mut record, _) = run(a, problem.rhs(), &scheme, &opts, &mut [&mut shadow])?;
    evaluate(&mut record, &[Rule::Upre, Rule::Gcv], &RuleConfig::with_eta(problem.eta))?;

    let (k_min, e_min) = record.min_error().unwrap();
    println!("error minimum {e_min:.4} at k = {k_min}");
    for d in &record.decisions {
        if let Some(k) = d.k_stop {
            println!("{:>4}: minimum {:.4e} at k = {k}, error {:.4}", d.rule, d.value_at_stop, record.error_at(k).unwrap());
        }
    }
    let u = record.rule_series.upre.as_ref().unwrap();
    println!("U at k = 1, 50, 300: {:.3e} {:.3e} {:.3e}", u[0], u[49], u[299]);
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
