//! The NCP rule needs neither η nor a trace estimate. It measures how far
//! the per-angle residual spectra are from white noise and stops at the
//! first (smoothed) increase of that distance.
//!
//! On small Landweber problems the distance often has an early dip before
//! its main valley, and the first-increase rule then stops in that dip. The
//! example prints both, then shows the online early stop agreeing with the
//! offline decision.

use std::error::Error;

use semistop::harness::{build_problem, parse_angles, ExperimentConfig, NoiseModel, OperatorCache};
use semistop::linops::LinearOperator;
use semistop::solvers::{make_landweber, run, Observer, Relaxation, RunOptions};
use semistop::stoprules::{evaluate, ncp_vector, EarlyStop, NcpObserver, Rule, RuleConfig};
use semistop::trace::probe_vector;

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let noise = ncp_vector(&probe_vector(90, 3, 0))?;
    let trend: Vec<f64> = (0..90).map(|i| i as f64).collect();
    println!(
        "distance to the white ramp: noise {:.3}, linear trend {:.3}",
        noise.distance_to_white(),
        ncp_vector(&trend)?.distance_to_white()
    );

    let mut cfg = ExperimentConfig::new(64, parse_angles("1:1:180")?);
    cfg.noise = NoiseModel::GaussianRelative { rho: 0.02 };
    let problem = build_problem(&cfg, &OperatorCache::new())?;
    let a = problem.operator();
    let scheme = make_landweber(a, Relaxation::Auto)?;
    let partition = problem.prepared.partition.clone();
    println!("{} rows in {} projections", a.rows(), partition.n_angles());

    let opts = RunOptions::new(600).with_ground_truth(problem.phantom.image.clone());
    let mut ncp = NcpObserver::new(partition.clone())?;
    let (mut record, _) = run(a, problem.rhs(), &scheme, &opts, &mut [&mut ncp])?;
    evaluate(&mut record, &[Rule::Ncp], &RuleConfig::default())?;

    let n = record.rule_series.ncp.clone().unwrap();
    let (k_min, e_min) = record.min_error().unwrap();
    let k_first = record.decisions[0].k_stop;
    let k_global = 1 + (0..n.len()).min_by(|&i, &j| n[i].total_cmp(&n[j])).unwrap();
    println!("error minimum {e_min:.4} at k = {k_min}");
    if let Some(k) = k_first {
        println!("first increase of N at k = {k}, error {:.4}", record.error_at(k).unwrap());
    }
    println!("smallest N at k = {k_global}, error {:.4}", record.error_at(k_global).unwrap());

    let mut ncp = NcpObserver::new(partition)?;
    let mut stop = EarlyStop::new(Rule::Ncp, RuleConfig::default())?;
    let mut observers: [&mut dyn Observer<_>; 2] = [&mut ncp, &mut stop];
    let (mut online, _) = run(a, problem.rhs(), &scheme, &opts, &mut observers)?;
    evaluate(&mut online, &[Rule::Ncp], &RuleConfig::default())?;
    // the halt comes a few iterations after the stop, once the rise is confirmed
    println!(
        "early stop halted at k = {:?} with decision k = {:?}",
        online.halted_at, online.decisions[0].k_stop
    );
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
