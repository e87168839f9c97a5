use std::f64::consts::SQRT_2;

use rayon::prelude::*;

use super::CtError;
use crate::linops::SparseOperator;

/// 2D parallel-beam scan of an `N×N` pixel image centred at the origin.
///
/// Pixel `j = row·N + col` with row 0 at the top. At angle `θ` a ray travels
/// along `(cos θ, sin θ)` and sits at signed offset `s` along the normal
/// `(−sin θ, cos θ)`; detector `d` has offset `(d − (n_det−1)/2)·det_spacing`.
#[derive(Debug, Clone, PartialEq)]
pub struct Geometry {
    pub image_side: usize,
    pub pixel_size: f64,
    pub n_det: usize,
    pub det_spacing: f64,
    /// Projection angles in degrees, each in `[0, 360)`.
    pub angles: Vec<f64>,
}

/// `round(√2·N)`: just enough unit-spaced detectors to cover the image
/// diagonal (91 for N = 64, 362 for N = 256).
pub fn default_detector_count(image_side: usize) -> usize {
    (SQRT_2 * image_side as f64).round() as usize
}

/// Expands an inclusive `start:step:stop` range in degrees.
pub fn parse_angle_range(start: f64, step: f64, stop: f64) -> Result<Vec<f64>, CtError> {
    if !(step > 0.0) || !start.is_finite() || !stop.is_finite() || stop < start {
        return Err(CtError::InvalidGeometry(format!(
            "bad angle range {start}:{step}:{stop}"
        )));
    }
    let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
    Ok((0..count).map(|i| start + i as f64 * step).collect())
}

impl Geometry {
    /// Unit pixels and unit detector spacing.
    pub fn new(image_side: usize, n_det: usize, angles: Vec<f64>) -> Result<Self, CtError> {
        let g = Geometry {
            image_side,
            pixel_size: 1.0,
            n_det,
            det_spacing: 1.0,
            angles,
        };
        g.validate()?;
        Ok(g)
    }

    /// Unit pixels with [`default_detector_count`] detectors.
    pub fn with_default_detector(image_side: usize, angles: Vec<f64>) -> Result<Self, CtError> {
        Self::new(image_side, default_detector_count(image_side), angles)
    }

    /// Rescales pixel size and detector spacing together.
    pub fn with_pixel_size(mut self, pixel_size: f64) -> Result<Self, CtError> {
        self.det_spacing *= pixel_size / self.pixel_size;
        self.pixel_size = pixel_size;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), CtError> {
        let fail = |msg: String| Err(CtError::InvalidGeometry(msg));
        if self.image_side < 2 {
            return fail(format!("image side {} < 2", self.image_side));
        }
        if self.n_det < 1 {
            return fail("need at least one detector pixel".into());
        }
        if !(self.pixel_size > 0.0 && self.pixel_size.is_finite()) {
            return fail(format!("pixel size {}", self.pixel_size));
        }
        if !(self.det_spacing > 0.0 && self.det_spacing.is_finite()) {
            return fail(format!("detector spacing {}", self.det_spacing));
        }
        if self.angles.is_empty() {
            return fail("no projection angles".into());
        }
        if let Some(a) = self.angles.iter().find(|a| !(0.0..360.0).contains(*a)) {
            return fail(format!("angle {a} outside [0, 360)"));
        }
        Ok(())
    }

    /// Number of pixels `n = N²`.
    pub fn n(&self) -> usize {
        self.image_side * self.image_side
    }

    /// Number of rays `m = n_det · |angles|`.
    pub fn m(&self) -> usize {
        self.n_det * self.angles.len()
    }

    pub fn detector_offset(&self, d: usize) -> f64 {
        (d as f64 - (self.n_det as f64 - 1.0) / 2.0) * self.det_spacing
    }

    /// Intersection lengths of one ray with the pixel grid, as `(pixel, length)`.
    pub fn trace_ray(&self, angle_deg: f64, offset: f64) -> Vec<(usize, f64)> {
        let mut out = Vec::new();
        siddon(self.image_side, self.pixel_size, angle_deg, offset, &mut out);
        out
    }
}

/// Cosine and sine of an angle in degrees, exact on multiples of 90°.
fn cos_sin_deg(deg: f64) -> (f64, f64) {
    let quarter = deg / 90.0;
    if quarter.fract() == 0.0 {
        match (quarter as i64).rem_euclid(4) {
            0 => (1.0, 0.0),
            1 => (0.0, 1.0),
            2 => (-1.0, 0.0),
            _ => (0.0, -1.0),
        }
    } else {
        let r = deg.to_radians();
        (r.cos(), r.sin())
    }
}

/// Siddon ray tracing through an `n×n` grid of square pixels.
fn siddon(n: usize, ps: f64, angle_deg: f64, s: f64, out: &mut Vec<(usize, f64)>) {
    out.clear();
    let half = 0.5 * n as f64 * ps;
    let (ux, uy) = cos_sin_deg(angle_deg);
    let (px, py) = (-s * uy, s * ux);

    // clip the line against the image square
    let mut t_lo = f64::NEG_INFINITY;
    let mut t_hi = f64::INFINITY;
    for (p, u) in [(px, ux), (py, uy)] {
        if u == 0.0 {
            if p.abs() >= half {
                return;
            }
        } else {
            let a = (-half - p) / u;
            let b = (half - p) / u;
            t_lo = t_lo.max(a.min(b));
            t_hi = t_hi.min(a.max(b));
        }
    }
    let eps = 1e-12 * ps;
    if t_hi - t_lo <= eps {
        return;
    }

    let mut ts = Vec::with_capacity(2 * n + 4);
    ts.push(t_lo);
    ts.push(t_hi);
    for (p, u) in [(px, ux), (py, uy)] {
        if u == 0.0 {
            continue;
        }
        for i in 0..=n {
            let t = (-half + i as f64 * ps - p) / u;
            if t > t_lo && t < t_hi {
                ts.push(t);
            }
        }
    }
    ts.sort_by(f64::total_cmp);

    let last = n - 1;
    for w in ts.windows(2) {
        let len = w[1] - w[0];
        if len <= eps {
            continue;
        }
        let tm = 0.5 * (w[0] + w[1]);
        let (x, y) = (px + tm * ux, py + tm * uy);
        let col = (((x + half) / ps).floor().max(0.0) as usize).min(last);
        let row = (((half - y) / ps).floor().max(0.0) as usize).min(last);
        let pix = row * n + col;
        match out.last_mut() {
            Some((p, l)) if *p == pix => *l += len,
            _ => out.push((pix, len)),
        }
    }
    out.sort_by_key(|&(p, _)| p);
    out.dedup_by(|b, a| {
        if a.0 == b.0 {
            a.1 += b.1;
            true
        } else {
            false
        }
    });
}

/// Line-length system matrix, rows ordered angle-major: row `ℓ·n_det + d`.
pub fn build_system_matrix(g: &Geometry) -> Result<SparseOperator, CtError> {
    g.validate()?;
    let rows: Vec<Vec<(usize, f64)>> = g
        .angles
        .par_iter()
        .flat_map_iter(|&theta| {
            let mut buf = Vec::new();
            (0..g.n_det)
                .map(|d| {
                    siddon(g.image_side, g.pixel_size, theta, g.detector_offset(d), &mut buf);
                    buf.clone()
                })
                .collect::<Vec<_>>()
        })
        .collect();
    let nnz = rows.iter().map(Vec::len).sum();
    let mut offsets = Vec::with_capacity(rows.len() + 1);
    let mut cols = Vec::with_capacity(nnz);
    let mut vals = Vec::with_capacity(nnz);
    offsets.push(0);
    for row in rows {
        for (j, v) in row {
            cols.push(j);
            vals.push(v);
        }
        offsets.push(cols.len());
    }
    SparseOperator::from_csr(g.m(), g.n(), offsets, cols, vals)
        .map_err(|e| CtError::InvalidGeometry(e.to_string()))
}
