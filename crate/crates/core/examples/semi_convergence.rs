//! Landweber on noisy data: the residual keeps falling while the error
//! turns around. A small custom observer prints progress.

use std::error::Error;

use semistop::ctmodel::{add_gaussian_relative, build_system_matrix, make_phantom, parse_angle_range, Geometry, PhantomKind, Sinogram};
use semistop::linops::{LinearOperator, SparseOperator};
use semistop::solvers::{make_landweber, run, Iteration, Observer, Relaxation, RunOptions, RunRecord, Signal, SolverError};

struct Progress {
    every: usize,
}

impl Observer<SparseOperator> for Progress {
    fn name(&self) -> &str {
        "progress"
    }

    fn observe(&mut self, it: &Iteration<'_, SparseOperator>, _: &mut RunRecord) -> Result<Signal, SolverError> {
        if it.state.k % self.every == 0 {
            println!("k = {:5}  |r| = {:.4e}", it.state.k, it.state.residual_norm);
        }
        Ok(Signal::Continue)
    }
}

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let geometry = Geometry::with_default_detector(32, parse_angle_range(4.0, 4.0, 180.0)?)?;
    let full = build_system_matrix(&geometry)?;
    let phantom = make_phantom(32, PhantomKind::SheppLogan, 0)?;
    let clean = Sinogram::uniform(full.apply(&phantom.image)?, geometry.n_det)?;
    let noisy = add_gaussian_relative(&clean, 0.05, 7)?;
    let filtered = full.remove_zero_rows(&noisy.noisy.values)?;
    let (a, b) = (filtered.operator, filtered.rhs);

    let scheme = make_landweber(&a, Relaxation::Auto)?;
    println!("omega = {:.4e}", scheme.omega);
    let opts = RunOptions::new(3000).with_ground_truth(phantom.image.clone());
    let mut progress = Progress { every: 500 };
    let (record, _) = run(&a, &b, &scheme, &opts, &mut [&mut progress])?;

    let (k, e) = record.min_error().expect("ground truth was given");
    let last = record.error_at(record.iterations()).unwrap();
    println!("smallest error {e:.4} at k = {k}; after {} iterations it is {last:.4}", record.iterations());
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
