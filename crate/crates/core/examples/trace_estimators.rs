//! Exact t_k from the singular values next to the two shadow-iteration
//! estimators, each averaged over a handful of probes.

use std::error::Error;

use semistop::harness::{build_problem, parse_angles, ExperimentConfig, NoiseModel, OperatorCache};
use semistop::linops::svd_spectrum;
use semistop::solvers::{make_landweber, run, Observer, Relaxation, RunOptions};
use semistop::trace::{Aggregate, ExactTrace, TraceEstimator, TraceMethod};

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let mut cfg = ExperimentConfig::new(24, parse_angles("5:5:180")?);
    cfg.noise = NoiseModel::GaussianRelative { rho: 0.02 };
    let problem = build_problem(&cfg, &OperatorCache::new())?;
    let a = problem.operator();
    let scheme = make_landweber(a, Relaxation::Auto)?;

    let probes = 20;
    let mut exact = ExactTrace::for_scheme(svd_spectrum(a)?, &scheme)?;
    let mut girard = TraceEstimator::new(TraceMethod::Girard, a, &scheme, probes, 1, Aggregate::Mean)?;
    let mut sdp = TraceEstimator::new(TraceMethod::SantosDePierro, a, &scheme, probes, 2, Aggregate::Mean)?;
    let mut observers: [&mut dyn Observer<_>; 3] = [&mut exact, &mut girard, &mut sdp];
    let (record, _) = run(a, problem.rhs(), &scheme, &RunOptions::new(400), &mut observers)?;

    println!("{:>5} {:>10} {:>10} {:>10}", "k", "exact", "girard", "s-dp");
    for k in [1, 10, 50, 100, 200, 400] {
        let at = |m| record.trace(m).map(|t| t.values[k - 1]).unwrap();
        println!(
            "{k:>5} {:>10.2} {:>10.2} {:>10.2}",
            at(TraceMethod::Exact),
            at(TraceMethod::Girard),
            at(TraceMethod::SantosDePierro)
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
