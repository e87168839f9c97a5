//! A `|` in a config value turns it into a grid axis. Every combination runs
//! in its own directory and one summary row is written per run.

use std::error::Error;

use semistop::harness::{parse_grid, run_grid};

const GRID: &str = "
N = 32
angles = 4:4:180 | 8:8:180
rho = 0.01 | 0.05
max_iters = 400
rules = gcv, ncp
trace = sdp
images = false
";

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let points = parse_grid(GRID)?;
    for p in &points {
        println!("point: {}", p.label());
    }
    let out = std::env::temp_dir().join("semistop-grid");
    let grid = run_grid(points, &out)?;
    print!("{}", std::fs::read_to_string(&grid.summary)?);
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
