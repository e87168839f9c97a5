//! Trace of the influence matrix, `t_k = trace(A A_k^#)`.
//!
//! The exact value is available for Landweber from the singular values. The
//! two Monte Carlo estimators each run a shadow iteration next to the main
//! one, on a random right-hand side or from a random start.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use thiserror::Error;

use crate::linops::{dot, LinearOperator, Spectrum};
use crate::solvers::{Iteration, IterationScheme, Observer, RunRecord, SchemeKind, Signal, SolverError, SolverState};

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("relaxation {omega} outside the convergence interval (0, {limit})")]
    RelaxationOutOfRange { omega: f64, limit: f64 },
    #[error("{0} requires a scheme with scalar D")]
    Unsupported(TraceMethod),
    #[error("exact trace is only available for Landweber")]
    NotLandweber,
    #[error("shadow run uses a different scheme than the main run")]
    SchemeMismatch,
    #[error("at least one probe is required")]
    NoSamples,
    #[error(transparent)]
    Solver(#[from] SolverError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TraceMethod {
    Exact,
    /// `(Aᵀw̄)ᵀ ξ̄⁽ᵏ⁾` with `ξ̄` iterated on right-hand side `w̄`.
    Girard,
    /// `n − wᵀξ⁽ᵏ⁾` with `ξ⁰ = w` iterated on a zero right-hand side.
    SantosDePierro,
}

impl fmt::Display for TraceMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TraceMethod::Exact => "exact",
            TraceMethod::Girard => "girard",
            TraceMethod::SantosDePierro => "santos-depierro",
        })
    }
}

impl FromStr for TraceMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "exact" => Ok(TraceMethod::Exact),
            "girard" => Ok(TraceMethod::Girard),
            "santos-depierro" | "sdp" | "santos_depierro" => Ok(TraceMethod::SantosDePierro),
            other => Err(format!("unknown trace method `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Aggregate {
    #[default]
    Mean,
    Median,
}

impl FromStr for Aggregate {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mean" => Ok(Aggregate::Mean),
            "median" => Ok(Aggregate::Median),
            other => Err(format!("unknown aggregate `{other}`")),
        }
    }
}

/// A `t_k` series; `values[i]` belongs to iteration `k = i + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceTrack {
    pub method: TraceMethod,
    pub samples: usize,
    pub values: Vec<f64>,
    /// `per_sample[probe][i]`, for the estimators.
    pub per_sample: Option<Vec<Vec<f64>>>,
    pub aggregate: Aggregate,
}

fn reduce(vals: &mut [f64], how: Aggregate) -> f64 {
    match how {
        Aggregate::Mean => vals.iter().sum::<f64>() / vals.len() as f64,
        Aggregate::Median => {
            vals.sort_by(f64::total_cmp);
            let h = vals.len() / 2;
            if vals.len() % 2 == 1 {
                vals[h]
            } else {
                0.5 * (vals[h - 1] + vals[h])
            }
        }
    }
}

/// Elementwise mean or median across probes. Tracks without per-probe data
/// are returned as they are.
pub fn aggregate(track: &TraceTrack) -> Vec<f64> {
    let Some(per) = &track.per_sample else {
        return track.values.clone();
    };
    let len = per.iter().map(Vec::len).min().unwrap_or(0);
    let mut col = Vec::with_capacity(per.len());
    (0..len)
        .map(|i| {
            col.clear();
            col.extend(per.iter().map(|p| p[i]));
            reduce(&mut col, track.aggregate)
        })
        .collect()
}

/// `t_k = Σ_i [1 − (1 − ωσ_i²)^k]` for Landweber.
pub fn exact_trace_landweber(spectrum: &Spectrum, omega: f64, k: usize) -> Result<f64, TraceError> {
    check_relaxation(spectrum, omega)?;
    let k = k as i32;
    Ok(spectrum
        .singular_values()
        .iter()
        .map(|&s| 1.0 - (1.0 - omega * s * s).powi(k))
        .sum())
}

fn check_relaxation(spectrum: &Spectrum, omega: f64) -> Result<(), TraceError> {
    let s = spectrum.max();
    let limit = if s > 0.0 { 2.0 / (s * s) } else { f64::INFINITY };
    if !(omega > 0.0 && omega < limit) {
        return Err(TraceError::RelaxationOutOfRange { omega, limit });
    }
    Ok(())
}

/// Standard normal probe; probe `index` uses its own stream of `seed`.
pub fn probe_vector(len: usize, seed: u64, index: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    (0..len).map(|_| StandardNormal.sample(&mut rng)).collect()
}

/// One probe's shadow iteration.
#[derive(Debug, Clone)]
pub struct ShadowState {
    pub method: TraceMethod,
    pub probe: Vec<f64>,
    pub xi: SolverState,
    /// `Aᵀw̄`, for the Girard estimator.
    pub z: Option<Vec<f64>>,
    rhs: Vec<f64>,
}

impl ShadowState {
    /// `ξ̄⁰ = 0` on right-hand side `w̄` (length m); costs one adjoint for `z`.
    pub fn girard<A: LinearOperator + ?Sized>(a: &A, probe: Vec<f64>) -> Result<Self, TraceError> {
        let z = a.apply_adjoint(&probe).map_err(|e| SolverError::Dimension(e.to_string()))?;
        Ok(ShadowState {
            method: TraceMethod::Girard,
            xi: SolverState::zero(a, &probe),
            z: Some(z),
            rhs: probe.clone(),
            probe,
        })
    }

    /// `ξ⁰ = w` (length n) on a zero right-hand side; costs one forward application.
    pub fn santos_depierro<A: LinearOperator + ?Sized>(a: &A, probe: Vec<f64>) -> Result<Self, TraceError> {
        let rhs = vec![0.0; a.rows()];
        Ok(ShadowState {
            method: TraceMethod::SantosDePierro,
            xi: SolverState::with_initial(a, &rhs, probe.clone())?,
            z: None,
            rhs,
            probe,
        })
    }

    /// Estimate for the current shadow iterate.
    pub fn estimate(&self) -> f64 {
        match self.method {
            TraceMethod::Girard => dot(self.z.as_deref().unwrap_or(&[]), &self.xi.x),
            _ => self.probe.len() as f64 - dot(&self.probe, &self.xi.x),
        }
    }

    /// One step of `scheme`, then the estimate at the new `k`.
    pub fn advance<A: LinearOperator + ?Sized>(
        &mut self,
        scheme: &IterationScheme,
        a: &A,
    ) -> Result<f64, TraceError> {
        scheme.step(a, &self.rhs, &mut self.xi)?;
        Ok(self.estimate())
    }
}

/// Advances a Girard shadow and returns `(Aᵀw̄)ᵀ ξ̄⁽ᵏ⁺¹⁾`.
pub fn girard_observe<A: LinearOperator + ?Sized>(
    shadow: &mut ShadowState,
    scheme: &IterationScheme,
    a: &A,
) -> Result<f64, TraceError> {
    if shadow.method != TraceMethod::Girard {
        return Err(TraceError::SchemeMismatch);
    }
    shadow.advance(scheme, a)
}

/// Advances a Santos-DePierro shadow and returns `n − wᵀξ⁽ᵏ⁺¹⁾`.
pub fn santos_depierro_observe<A: LinearOperator + ?Sized>(
    shadow: &mut ShadowState,
    scheme: &IterationScheme,
    a: &A,
) -> Result<f64, TraceError> {
    if scheme.scalar_d().is_none() {
        return Err(TraceError::Unsupported(TraceMethod::SantosDePierro));
    }
    if shadow.method != TraceMethod::SantosDePierro {
        return Err(TraceError::SchemeMismatch);
    }
    shadow.advance(scheme, a)
}

fn observer_error(name: &str, e: TraceError) -> SolverError {
    match e {
        TraceError::Solver(s) => s,
        other => SolverError::Observer {
            observer: name.to_string(),
            message: other.to_string(),
        },
    }
}

fn ensure_slot(record: &mut RunRecord, slot: &mut Option<usize>, track: TraceTrack) -> usize {
    *slot.get_or_insert_with(|| {
        record.traces.push(track);
        record.traces.len() - 1
    })
}

/// Pushes exact Landweber traces into the record.
pub struct ExactTrace {
    spectrum: Spectrum,
    omega: f64,
    slot: Option<usize>,
}

impl ExactTrace {
    pub fn new(spectrum: Spectrum, omega: f64) -> Result<Self, TraceError> {
        check_relaxation(&spectrum, omega)?;
        Ok(ExactTrace {
            spectrum,
            omega,
            slot: None,
        })
    }

    pub fn for_scheme(spectrum: Spectrum, scheme: &IterationScheme) -> Result<Self, TraceError> {
        if scheme.kind != SchemeKind::Landweber {
            return Err(TraceError::NotLandweber);
        }
        Self::new(spectrum, scheme.omega)
    }
}

impl<A: LinearOperator + ?Sized> Observer<A> for ExactTrace {
    fn name(&self) -> &str {
        "trace:exact"
    }

    fn observe(&mut self, it: &Iteration<'_, A>, record: &mut RunRecord) -> Result<Signal, SolverError> {
        if it.scheme.kind != SchemeKind::Landweber || it.scheme.omega != self.omega {
            return Err(observer_error("trace:exact", TraceError::SchemeMismatch));
        }
        let t = exact_trace_landweber(&self.spectrum, self.omega, it.state.k)
            .map_err(|e| observer_error("trace:exact", e))?;
        let i = ensure_slot(
            record,
            &mut self.slot,
            TraceTrack {
                method: TraceMethod::Exact,
                samples: 0,
                values: Vec::new(),
                per_sample: None,
                aggregate: Aggregate::Mean,
            },
        );
        record.traces[i].values.push(t);
        Ok(Signal::Continue)
    }
}

/// Runs one shadow iteration per probe alongside the main run.
pub struct TraceEstimator {
    method: TraceMethod,
    scheme: IterationScheme,
    shadows: Vec<ShadowState>,
    aggregate: Aggregate,
    slot: Option<usize>,
    scratch: Vec<f64>,
}

impl TraceEstimator {
    /// Probes are drawn from `seed`, one stream per probe index.
    pub fn new<A: LinearOperator + ?Sized>(
        method: TraceMethod,
        a: &A,
        scheme: &IterationScheme,
        samples: usize,
        seed: u64,
        aggregate: Aggregate,
    ) -> Result<Self, TraceError> {
        if samples == 0 {
            return Err(TraceError::NoSamples);
        }
        let shadows = (0..samples as u64)
            .map(|i| match method {
                TraceMethod::Girard => ShadowState::girard(a, probe_vector(a.rows(), seed, i)),
                TraceMethod::SantosDePierro => {
                    if scheme.scalar_d().is_none() {
                        return Err(TraceError::Unsupported(method));
                    }
                    ShadowState::santos_depierro(a, probe_vector(a.cols(), seed, i))
                }
                TraceMethod::Exact => Err(TraceError::Unsupported(method)),
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(TraceEstimator {
            method,
            scheme: scheme.clone(),
            shadows,
            aggregate,
            slot: None,
            scratch: Vec::with_capacity(samples),
        })
    }

    pub fn method(&self) -> TraceMethod {
        self.method
    }

    pub fn shadows(&self) -> &[ShadowState] {
        &self.shadows
    }
}

impl<A: LinearOperator + ?Sized> Observer<A> for TraceEstimator {
    fn name(&self) -> &str {
        match self.method {
            TraceMethod::Girard => "trace:girard",
            _ => "trace:santos-depierro",
        }
    }

    fn observe(&mut self, it: &Iteration<'_, A>, record: &mut RunRecord) -> Result<Signal, SolverError> {
        let name = <Self as Observer<A>>::name(self).to_string();
        if it.scheme != &self.scheme {
            return Err(observer_error(&name, TraceError::SchemeMismatch));
        }
        let (scheme, a, method) = (&self.scheme, it.operator, self.method);
        let estimates: Vec<f64> = self
            .shadows
            .par_iter_mut()
            .map(|s| match method {
                TraceMethod::Girard => girard_observe(s, scheme, a),
                _ => santos_depierro_observe(s, scheme, a),
            })
            .collect::<Result<_, _>>()
            .map_err(|e| observer_error(&name, e))?;

        let i = ensure_slot(
            record,
            &mut self.slot,
            TraceTrack {
                method,
                samples: self.shadows.len(),
                values: Vec::new(),
                per_sample: Some(vec![Vec::new(); self.shadows.len()]),
                aggregate: self.aggregate,
            },
        );
        let track = &mut record.traces[i];
        if let Some(per) = track.per_sample.as_mut() {
            for (p, &e) in per.iter_mut().zip(&estimates) {
                p.push(e);
            }
        }
        self.scratch.clear();
        self.scratch.extend_from_slice(&estimates);
        track.values.push(reduce(&mut self.scratch, self.aggregate));
        Ok(Signal::Continue)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linops::{svd_spectrum, SparseOperator};
    use crate::solvers::{make_landweber, make_sirt, run, Relaxation, RunOptions};
    use nalgebra::DMatrix;
    use rand::Rng;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn scalar_two() -> SparseOperator {
        SparseOperator::from_dense(&[vec![2.0]]).unwrap()
    }

    fn random_dense(m: usize, n: usize, seed: u64) -> SparseOperator {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..m)
            .map(|_| (0..n).map(|_| rng.random::<f64>()).collect())
            .collect();
        SparseOperator::from_dense(&rows).unwrap()
    }

    #[test]
    fn exact_scalar_values() {
        let s = Spectrum::new(vec![2.0]);
        assert!((exact_trace_landweber(&s, 0.1, 1).unwrap() - 0.4).abs() < 1e-15);
        assert!((exact_trace_landweber(&s, 0.1, 2).unwrap() - 0.64).abs() < 1e-15);
        assert_eq!(exact_trace_landweber(&s, 0.1, 0).unwrap(), 0.0);
        assert!(matches!(
            exact_trace_landweber(&s, 0.5, 1),
            Err(TraceError::RelaxationOutOfRange { .. })
        ));
        assert!(exact_trace_landweber(&s, 0.0, 1).is_err());
    }

    #[test]
    fn exact_is_monotone_and_tends_to_rank() {
        let a = random_dense(6, 9, 1);
        let sp = svd_spectrum(&a).unwrap();
        let w = 1.0 / sp.max().powi(2);
        let ts: Vec<f64> = (0..200).map(|k| exact_trace_landweber(&sp, w, k).unwrap()).collect();
        assert!(ts.windows(2).all(|p| p[1] >= p[0]));
        assert!(ts.iter().all(|&t| t <= 6.0 + 1e-12));
        let far = exact_trace_landweber(&sp, w, 1_000_000).unwrap();
        assert!((far - sp.rank(6, 9) as f64).abs() < 1e-6);
    }

    #[test]
    fn exact_matches_dense_influence_matrix() {
        let a = random_dense(12, 10, 5);
        let ad = a.to_dense();
        let sp = svd_spectrum(&a).unwrap();
        let w = 1.0 / sp.max().powi(2);
        let g = DMatrix::<f64>::identity(10, 10) - w * ad.transpose() * &ad;
        for k in [1usize, 5, 20] {
            let mut acc = DMatrix::<f64>::zeros(10, 10);
            let mut p = DMatrix::<f64>::identity(10, 10);
            for _ in 0..k {
                acc += &p;
                p = &g * p;
            }
            let influence = &ad * acc * (w * ad.transpose());
            let t = exact_trace_landweber(&sp, w, k).unwrap();
            assert!((influence.trace() - t).abs() < 1e-10);
        }
    }

    #[test]
    fn girard_scalar_recurrence() {
        let a = scalar_two();
        let s = make_landweber(&a, Relaxation::Fixed(0.1)).unwrap();
        let wbar = 1.5;
        let mut sh = ShadowState::girard(&a, vec![wbar]).unwrap();
        assert_eq!(sh.z.as_deref(), Some(&[3.0][..]));
        let t1 = girard_observe(&mut sh, &s, &a).unwrap();
        assert!((sh.xi.x[0] - 0.2 * wbar).abs() < 1e-15);
        assert!((t1 - 0.4 * wbar * wbar).abs() < 1e-14);
    }

    #[test]
    fn santos_depierro_scalar_recurrence() {
        let a = scalar_two();
        let s = make_landweber(&a, Relaxation::Fixed(0.1)).unwrap();
        let w = 0.7;
        let mut sh = ShadowState::santos_depierro(&a, vec![w]).unwrap();
        assert!((sh.estimate() - (1.0 - w * w)).abs() < 1e-15);
        for k in 1..=4 {
            let t = santos_depierro_observe(&mut sh, &s, &a).unwrap();
            assert!((t - (1.0 - 0.6f64.powi(k) * w * w)).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_probe_gives_zero() {
        let a = random_dense(5, 4, 2);
        let s = make_landweber(&a, Relaxation::Auto).unwrap();
        let mut sh = ShadowState::girard(&a, vec![0.0; 5]).unwrap();
        for _ in 0..5 {
            assert_eq!(girard_observe(&mut sh, &s, &a).unwrap(), 0.0);
        }
    }

    #[test]
    fn aggregate_mean_and_median() {
        let mut t = TraceTrack {
            method: TraceMethod::Girard,
            samples: 3,
            values: vec![],
            per_sample: Some(vec![vec![1.0], vec![2.0], vec![9.0]]),
            aggregate: Aggregate::Mean,
        };
        assert_eq!(aggregate(&t), vec![4.0]);
        t.aggregate = Aggregate::Median;
        assert_eq!(aggregate(&t), vec![2.0]);
        t.per_sample = Some(vec![vec![3.0, 4.0]]);
        assert_eq!(aggregate(&t), vec![3.0, 4.0]);
    }

    #[test]
    fn santos_depierro_rejects_sirt() {
        let a = random_dense(5, 4, 3);
        let s = make_sirt(&a);
        assert!(matches!(
            TraceEstimator::new(TraceMethod::SantosDePierro, &a, &s, 1, 0, Aggregate::Mean),
            Err(TraceError::Unsupported(TraceMethod::SantosDePierro))
        ));
        let mut sh = ShadowState::santos_depierro(&a, vec![1.0; 4]).unwrap();
        assert!(santos_depierro_observe(&mut sh, &s, &a).is_err());
    }

    #[test]
    fn shadow_equals_independent_run() {
        let a = random_dense(9, 7, 4);
        let s = make_sirt(&a);
        let probe = probe_vector(9, 11, 0);
        let mut sh = ShadowState::girard(&a, probe.clone()).unwrap();
        let mut main = SolverState::zero(&a, &probe);
        for _ in 0..25 {
            girard_observe(&mut sh, &s, &a).unwrap();
            s.step(&a, &probe, &mut main).unwrap();
            assert_eq!(sh.xi.x, main.x);
        }
    }

    #[test]
    fn estimator_observer_records_tracks() {
        let a = random_dense(10, 6, 6);
        let b = vec![1.0; 10];
        let s = make_landweber(&a, Relaxation::Auto).unwrap();
        let sp = svd_spectrum(&a).unwrap();
        let mut ex = ExactTrace::for_scheme(sp, &s).unwrap();
        let mut g = TraceEstimator::new(TraceMethod::Girard, &a, &s, 3, 1, Aggregate::Median).unwrap();
        let mut sd = TraceEstimator::new(TraceMethod::SantosDePierro, &a, &s, 2, 1, Aggregate::Mean).unwrap();
        let (rec, _) = run(&a, &b, &s, &RunOptions::new(8), &mut [&mut ex, &mut g, &mut sd]).unwrap();
        assert_eq!(rec.traces.len(), 3);
        for t in &rec.traces {
            assert_eq!(t.values.len(), 8);
        }
        let gt = rec.trace(TraceMethod::Girard).unwrap();
        assert_eq!(gt.per_sample.as_ref().unwrap().len(), 3);
        assert_eq!(aggregate(gt), gt.values);
        assert!(ExactTrace::for_scheme(Spectrum::new(vec![1.0]), &make_sirt(&a)).is_err());
    }

    #[test]
    fn estimator_detects_scheme_mismatch() {
        let a = random_dense(6, 4, 8);
        let s = make_landweber(&a, Relaxation::Auto).unwrap();
        let other = make_landweber(&a, Relaxation::Fixed(s.omega * 0.5)).unwrap();
        let mut g = TraceEstimator::new(TraceMethod::Girard, &a, &other, 1, 0, Aggregate::Mean).unwrap();
        assert!(run(&a, &[1.0; 6], &s, &RunOptions::new(2), &mut [&mut g]).is_err());
    }

    struct Counting<'a> {
        inner: &'a SparseOperator,
        applies: AtomicUsize,
        adjoints: AtomicUsize,
    }

    impl LinearOperator for Counting<'_> {
        fn rows(&self) -> usize {
            self.inner.rows()
        }
        fn cols(&self) -> usize {
            self.inner.cols()
        }
        fn apply_into(&self, x: &[f64], y: &mut [f64]) {
            self.applies.fetch_add(1, Ordering::Relaxed);
            self.inner.apply_into(x, y)
        }
        fn apply_adjoint_into(&self, y: &[f64], x: &mut [f64]) {
            self.adjoints.fetch_add(1, Ordering::Relaxed);
            self.inner.apply_adjoint_into(y, x)
        }
    }

    #[test]
    fn each_probe_costs_one_apply_and_one_adjoint_per_iteration() {
        let inner = random_dense(8, 5, 9);
        let a = Counting {
            inner: &inner,
            applies: AtomicUsize::new(0),
            adjoints: AtomicUsize::new(0),
        };
        let s = make_landweber(&inner, Relaxation::Auto).unwrap();
        let (probes, iters) = (3usize, 10usize);
        let mut g = TraceEstimator::new(TraceMethod::Girard, &a, &s, probes, 0, Aggregate::Mean).unwrap();
        let mut sd = TraceEstimator::new(TraceMethod::SantosDePierro, &a, &s, probes, 0, Aggregate::Mean).unwrap();
        // setup: one adjoint per Girard probe, one apply per Santos-DePierro probe
        assert_eq!(a.adjoints.load(Ordering::Relaxed), probes);
        assert_eq!(a.applies.load(Ordering::Relaxed), probes);
        a.adjoints.store(0, Ordering::Relaxed);
        a.applies.store(0, Ordering::Relaxed);
        run(&a, &[1.0; 8], &s, &RunOptions::new(iters), &mut [&mut g, &mut sd]).unwrap();
        let per_run = iters * (1 + 2 * probes);
        assert_eq!(a.applies.load(Ordering::Relaxed), per_run);
        assert_eq!(a.adjoints.load(Ordering::Relaxed), per_run);
    }

    #[test]
    fn probes_are_reproducible_and_distinct() {
        assert_eq!(probe_vector(20, 3, 1), probe_vector(20, 3, 1));
        assert_ne!(probe_vector(20, 3, 1), probe_vector(20, 3, 2));
        assert_ne!(probe_vector(20, 3, 1), probe_vector(20, 4, 1));
    }
}
