use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::CtError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PhantomKind {
    SheppLogan,
    /// Random smooth blobs inside a cylinder, loosely resembling a porous sample.
    Grains,
    Disk,
}

impl FromStr for PhantomKind {
    type Err = CtError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "shepp-logan" | "shepplogan" | "shepp_logan" => Ok(PhantomKind::SheppLogan),
            "grains" => Ok(PhantomKind::Grains),
            "disk" => Ok(PhantomKind::Disk),
            other => Err(CtError::UnknownPhantom(other.to_string())),
        }
    }
}

impl fmt::Display for PhantomKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PhantomKind::SheppLogan => "shepp-logan",
            PhantomKind::Grains => "grains",
            PhantomKind::Disk => "disk",
        })
    }
}

/// Ground-truth image, row-major with row 0 at the top.
#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub image: Vec<f64>,
    pub side: usize,
    pub kind: PhantomKind,
}

// Modified Shepp-Logan (Toft): intensity, semi-axes a b, centre x0 y0, angle in degrees.
const SHEPP_LOGAN: [[f64; 6]; 10] = [
    [1.0, 0.69, 0.92, 0.0, 0.0, 0.0],
    [-0.8, 0.6624, 0.8740, 0.0, -0.0184, 0.0],
    [-0.2, 0.1100, 0.3100, 0.22, 0.0, -18.0],
    [-0.2, 0.1600, 0.4100, -0.22, 0.0, 18.0],
    [0.1, 0.2100, 0.2500, 0.0, 0.35, 0.0],
    [0.1, 0.0460, 0.0460, 0.0, 0.1, 0.0],
    [0.1, 0.0460, 0.0460, 0.0, -0.1, 0.0],
    [0.1, 0.0460, 0.0230, -0.08, -0.605, 0.0],
    [0.1, 0.0230, 0.0230, 0.0, -0.606, 0.0],
    [0.1, 0.0230, 0.0460, 0.06, -0.605, 0.0],
];

/// Pixel-centre coordinates in `[-1, 1]²`, y pointing up.
fn centre(side: usize, row: usize, col: usize) -> (f64, f64) {
    let h = 2.0 / side as f64;
    ((col as f64 + 0.5) * h - 1.0, 1.0 - (row as f64 + 0.5) * h)
}

fn sample(side: usize, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    let mut img = Vec::with_capacity(side * side);
    for row in 0..side {
        for col in 0..side {
            let (x, y) = centre(side, row, col);
            img.push(f(x, y));
        }
    }
    img
}

/// Clamps at zero and scales so the maximum is 1.
fn normalize(img: &mut [f64]) {
    img.iter_mut().for_each(|v| *v = v.max(0.0));
    let max = img.iter().cloned().fold(0.0, f64::max);
    if max > 0.0 {
        img.iter_mut().for_each(|v| *v /= max);
    }
}

fn shepp_logan(side: usize) -> Vec<f64> {
    let mut img = sample(side, |x, y| {
        SHEPP_LOGAN
            .iter()
            .filter(|e| {
                let [_, a, b, x0, y0, phi] = **e;
                let (s, c) = phi.to_radians().sin_cos();
                let (dx, dy) = (x - x0, y - y0);
                let u = dx * c + dy * s;
                let v = -dx * s + dy * c;
                (u / a).powi(2) + (v / b).powi(2) <= 1.0
            })
            .map(|e| e[0])
            .sum()
    });
    normalize(&mut img);
    img
}

fn grains(side: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = 24 + side / 4;
    let blobs: Vec<(f64, f64, f64, f64)> = (0..count)
        .map(|_| {
            let r = 0.8 * rng.random::<f64>().sqrt();
            let phi = std::f64::consts::TAU * rng.random::<f64>();
            let width = 0.04 + 0.1 * rng.random::<f64>();
            let amp = 0.3 + 0.7 * rng.random::<f64>();
            (r * phi.cos(), r * phi.sin(), width, amp)
        })
        .collect();
    let mut img = sample(side, |x, y| {
        if x * x + y * y > 0.95 * 0.95 {
            return 0.0;
        }
        let matrix = 0.15;
        matrix
            + blobs
                .iter()
                .map(|&(cx, cy, w, a)| a * (-((x - cx).powi(2) + (y - cy).powi(2)) / (2.0 * w * w)).exp())
                .sum::<f64>()
    });
    normalize(&mut img);
    img
}

/// Builds a ground-truth image; deterministic in `(side, kind, seed)`.
/// Only `grains` consumes the seed.
pub fn make_phantom(side: usize, kind: PhantomKind, seed: u64) -> Result<Phantom, CtError> {
    if side < 2 {
        return Err(CtError::InvalidGeometry(format!("phantom side {side} < 2")));
    }
    let image = match kind {
        PhantomKind::SheppLogan => shepp_logan(side),
        PhantomKind::Grains => grains(side, seed),
        PhantomKind::Disk => sample(side, |x, y| if x * x + y * y <= 0.6 * 0.6 { 1.0 } else { 0.0 }),
    };
    Ok(Phantom { image, side, kind })
}
