//! Builds a parallel-beam system matrix, checks the adjoint, projects a
//! phantom and writes the sinogram and matrix to a scratch directory.

use std::error::Error;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use semistop::ctmodel::io::{write_pgm, write_sinogram_csv, PgmFormat};
use semistop::ctmodel::{build_system_matrix, make_phantom, parse_angle_range, Geometry, PhantomKind, Sinogram};
use semistop::linops::{dot, LinearOperator, SparseOperator};

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let angles = parse_angle_range(3.0, 3.0, 180.0)?;
    let geometry = Geometry::with_default_detector(64, angles)?;
    let a = build_system_matrix(&geometry)?;
    println!("A is {}x{} with {} nonzeros", a.rows(), a.cols(), a.nnz());

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let u: Vec<f64> = (0..a.cols()).map(|_| rng.random()).collect();
    let v: Vec<f64> = (0..a.rows()).map(|_| rng.random()).collect();
    let (l, r) = (dot(&a.apply(&u)?, &v), dot(&u, &a.apply_adjoint(&v)?));
    println!("<Au, v> = {l:.6e}, <u, A'v> = {r:.6e}");

    let phantom = make_phantom(64, PhantomKind::SheppLogan, 0)?;
    let sino = Sinogram::uniform(a.apply(&phantom.image)?, geometry.n_det)?;
    let filtered = a.remove_zero_rows(&sino.values)?;
    println!("{} of {} rows hit the image", filtered.kept.len(), a.rows());

    let dir = std::env::temp_dir().join("semistop-projector");
    std::fs::create_dir_all(&dir)?;
    write_pgm(&dir.join("phantom.pgm"), &phantom.image, 64, PgmFormat::Binary)?;
    write_sinogram_csv(&dir.join("sinogram.csv"), &sino)?;
    a.save_binary(dir.join("matrix.bin"))?;
    let back = SparseOperator::load_binary(dir.join("matrix.bin"))?;
    assert_eq!(back, a);
    println!("wrote {}", dir.display());
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
