//! The diagonally scaled gradient iteration
//!
//! ```text
//! x⁽ᵏ⁺¹⁾ = x⁽ᵏ⁾ + D Aᵀ M (b − A x⁽ᵏ⁾)
//! ```
//!
//! with Landweber (`D = ω·I`, `M = I`) and SIRT (inverse column and row sums)
//! as the two concrete choices, plus the run driver that feeds observers.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use log::warn;
use thiserror::Error;

use crate::linops::{distance, estimate_spectral_norm, norm2, LinearOperator, POWER_ITERS, POWER_SEED};
use crate::stoprules::{RuleSeries, StopDecision};
use crate::trace::{TraceMethod, TraceTrack};

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("relaxation parameter must be positive, got {0}")]
    InvalidRelaxation(f64),
    #[error("operator is zero; no relaxation parameter can be derived")]
    ZeroOperator,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("iteration diverged at k = {k} (non-finite values)")]
    Divergence { k: usize },
    #[error("max_iters must be at least 1")]
    NoIterations,
    #[error("observer `{observer}` failed: {message}")]
    Observer { observer: String, message: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SchemeKind {
    Landweber,
    Sirt,
}

impl fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SchemeKind::Landweber => "landweber",
            SchemeKind::Sirt => "sirt",
        })
    }
}

impl FromStr for SchemeKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "landweber" => Ok(SchemeKind::Landweber),
            "sirt" => Ok(SchemeKind::Sirt),
            other => Err(format!("unknown scheme `{other}` (expected landweber or sirt)")),
        }
    }
}

/// Relaxation parameter: explicit, or `1/σ̂₁²` from power iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Relaxation {
    Auto,
    Fixed(f64),
}

/// Diagonals `D` (length n, relaxation folded in) and `M` (length m).
#[derive(Debug, Clone, PartialEq)]
pub struct IterationScheme {
    pub kind: SchemeKind,
    pub omega: f64,
    pub d: Vec<f64>,
    pub m: Vec<f64>,
}

/// Landweber: `D = ω·1`, `M = 1`.
pub fn make_landweber<A: LinearOperator + ?Sized>(
    a: &A,
    omega: Relaxation,
) -> Result<IterationScheme, SolverError> {
    let omega = match omega {
        Relaxation::Fixed(w) if w > 0.0 && w.is_finite() => w,
        Relaxation::Fixed(w) => return Err(SolverError::InvalidRelaxation(w)),
        Relaxation::Auto => {
            let est = estimate_spectral_norm(a, POWER_ITERS, POWER_SEED);
            if est.zero_operator || est.sigma == 0.0 {
                return Err(SolverError::ZeroOperator);
            }
            1.0 / (est.sigma * est.sigma)
        }
    };
    Ok(IterationScheme {
        kind: SchemeKind::Landweber,
        omega,
        d: vec![omega; a.cols()],
        m: vec![1.0; a.rows()],
    })
}

/// SIRT with `ω = 1`.
pub fn make_sirt<A: LinearOperator + ?Sized>(a: &A) -> IterationScheme {
    make_sirt_relaxed(a, 1.0).expect("unit relaxation is valid")
}

/// SIRT: `D = ω·diag(1/colsum)`, `M = diag(1/rowsum)`. Empty rows or columns
/// get a zero weight and a warning.
pub fn make_sirt_relaxed<A: LinearOperator + ?Sized>(
    a: &A,
    omega: f64,
) -> Result<IterationScheme, SolverError> {
    if !(omega > 0.0 && omega.is_finite()) {
        return Err(SolverError::InvalidRelaxation(omega));
    }
    let inv = |sums: Vec<f64>, what: &str| -> Vec<f64> {
        let zeros = sums.iter().filter(|&&s| s <= 0.0).count();
        if zeros > 0 {
            warn!("SIRT: {zeros} {what} with non-positive sum get zero weight");
        }
        sums.into_iter().map(|s| if s > 0.0 { 1.0 / s } else { 0.0 }).collect()
    };
    let m = inv(a.row_sums(), "rows");
    let d = inv(a.col_sums(), "columns").into_iter().map(|v| omega * v).collect();
    Ok(IterationScheme {
        kind: SchemeKind::Sirt,
        omega,
        d,
        m,
    })
}

impl IterationScheme {
    /// `Some(ω)` when `D = ω·I`.
    pub fn scalar_d(&self) -> Option<f64> {
        let first = *self.d.first()?;
        self.d.iter().all(|&v| v == first).then_some(first)
    }

    fn check<A: LinearOperator + ?Sized>(&self, a: &A, b: &[f64]) -> Result<(), SolverError> {
        if self.d.len() != a.cols() || self.m.len() != a.rows() || b.len() != a.rows() {
            return Err(SolverError::Dimension(format!(
                "operator {}x{}, D {}, M {}, b {}",
                a.rows(),
                a.cols(),
                self.d.len(),
                self.m.len(),
                b.len()
            )));
        }
        Ok(())
    }

    /// Advances `state` by one iteration on right-hand side `b`.
    ///
    /// Costs exactly one adjoint and one forward application.
    pub fn step<A: LinearOperator + ?Sized>(
        &self,
        a: &A,
        b: &[f64],
        state: &mut SolverState,
    ) -> Result<(), SolverError> {
        self.check(a, b)?;
        for ((w, &mi), &ri) in state.weighted.iter_mut().zip(&self.m).zip(&state.residual) {
            *w = mi * ri;
        }
        a.apply_adjoint_into(&state.weighted, &mut state.grad);
        for ((xj, &dj), &gj) in state.x.iter_mut().zip(&self.d).zip(&state.grad) {
            *xj += dj * gj;
        }
        a.apply_into(&state.x, &mut state.residual);
        for (r, &bi) in state.residual.iter_mut().zip(b) {
            *r = bi - *r;
        }
        state.k += 1;
        state.residual_norm = norm2(&state.residual);
        if !state.residual_norm.is_finite() || state.x.iter().any(|v| !v.is_finite()) {
            return Err(SolverError::Divergence { k: state.k });
        }
        Ok(())
    }
}

/// Current iterate `x⁽ᵏ⁾` with its residual `b − A x⁽ᵏ⁾`.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    pub x: Vec<f64>,
    pub k: usize,
    pub residual: Vec<f64>,
    pub residual_norm: f64,
    weighted: Vec<f64>,
    grad: Vec<f64>,
}

impl SolverState {
    /// `x⁰ = 0`, so the residual is `b` itself.
    pub fn zero<A: LinearOperator + ?Sized>(a: &A, b: &[f64]) -> Self {
        SolverState {
            x: vec![0.0; a.cols()],
            k: 0,
            residual: b.to_vec(),
            residual_norm: norm2(b),
            weighted: vec![0.0; a.rows()],
            grad: vec![0.0; a.cols()],
        }
    }

    /// Starts from an arbitrary `x⁰` (one forward application).
    pub fn with_initial<A: LinearOperator + ?Sized>(
        a: &A,
        b: &[f64],
        x0: Vec<f64>,
    ) -> Result<Self, SolverError> {
        if x0.len() != a.cols() || b.len() != a.rows() {
            return Err(SolverError::Dimension(format!(
                "x0 {} / b {} for a {}x{} operator",
                x0.len(),
                b.len(),
                a.rows(),
                a.cols()
            )));
        }
        let mut residual = vec![0.0; a.rows()];
        a.apply_into(&x0, &mut residual);
        for (r, &bi) in residual.iter_mut().zip(b) {
            *r = bi - *r;
        }
        Ok(SolverState {
            residual_norm: norm2(&residual),
            x: x0,
            k: 0,
            residual,
            weighted: vec![0.0; a.rows()],
            grad: vec![0.0; a.cols()],
        })
    }
}

// ---------------------------------------------------------------------------
// Run driver
// ---------------------------------------------------------------------------

/// What the driver hands to observers after each step.
pub struct Iteration<'a, A: ?Sized> {
    pub state: &'a SolverState,
    pub operator: &'a A,
    pub scheme: &'a IterationScheme,
    pub rhs: &'a [f64],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Signal {
    Continue,
    Stop,
}

/// Called synchronously, in registration order, after every iteration.
pub trait Observer<A: ?Sized> {
    fn name(&self) -> &str;

    fn observe(&mut self, it: &Iteration<'_, A>, record: &mut RunRecord) -> Result<Signal, SolverError>;
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub max_iters: usize,
    pub x0: Option<Vec<f64>>,
    pub ground_truth: Option<Vec<f64>>,
}

impl RunOptions {
    pub fn new(max_iters: usize) -> Self {
        RunOptions {
            max_iters,
            ..Default::default()
        }
    }

    pub fn with_ground_truth(mut self, truth: Vec<f64>) -> Self {
        self.ground_truth = Some(truth);
        self
    }
}

/// Everything recorded over a run; series entry `i` belongs to iteration `k = i + 1`.
#[derive(Debug, Clone, Default)]
pub struct RunRecord {
    /// Number of measurements `m`.
    pub m: usize,
    pub residual_norms: Vec<f64>,
    pub error_norms: Option<Vec<f64>>,
    pub traces: Vec<TraceTrack>,
    pub rule_series: RuleSeries,
    pub decisions: Vec<StopDecision>,
    /// Iteration at which an observer halted the run.
    pub halted_at: Option<usize>,
}

impl RunRecord {
    pub fn iterations(&self) -> usize {
        self.residual_norms.len()
    }

    pub fn trace(&self, method: TraceMethod) -> Option<&TraceTrack> {
        self.traces.iter().find(|t| t.method == method)
    }

    /// `(k, error)` at the smallest reconstruction error.
    pub fn min_error(&self) -> Option<(usize, f64)> {
        let errs = self.error_norms.as_ref()?;
        errs.iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, &e)| (i + 1, e))
    }

    pub fn error_at(&self, k: usize) -> Option<f64> {
        self.error_norms.as_ref()?.get(k.checked_sub(1)?).copied()
    }

    /// CSV with header `k,res_norm,err_norm,t_exact,t_girard,t_sdp,U,G,N`;
    /// absent series leave empty cells.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), SolverError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["k", "res_norm", "err_norm", "t_exact", "t_girard", "t_sdp", "U", "G", "N"])?;
        let cell = |s: Option<&Vec<f64>>, i: usize| -> String {
            s.and_then(|v| v.get(i)).map(|x| format!("{x:e}")).unwrap_or_default()
        };
        let tk = |m: TraceMethod| self.trace(m).map(|t| &t.values);
        for i in 0..self.iterations() {
            out.write_record([
                (i + 1).to_string(),
                format!("{:e}", self.residual_norms[i]),
                cell(self.error_norms.as_ref(), i),
                cell(tk(TraceMethod::Exact), i),
                cell(tk(TraceMethod::Girard), i),
                cell(tk(TraceMethod::SantosDePierro), i),
                cell(self.rule_series.upre.as_ref(), i),
                cell(self.rule_series.gcv.as_ref(), i),
                cell(self.rule_series.ncp.as_ref(), i),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<(), SolverError> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_csv(f)
    }
}

/// Iterates from `x⁰` (zero unless given) for `max_iters` steps, calling every
/// observer after each step. Observers only record by default; the run ends
/// early only if one of them returns [`Signal::Stop`].
pub fn run<A: LinearOperator + ?Sized>(
    a: &A,
    b: &[f64],
    scheme: &IterationScheme,
    opts: &RunOptions,
    observers: &mut [&mut dyn Observer<A>],
) -> Result<(RunRecord, SolverState), SolverError> {
    if opts.max_iters == 0 {
        return Err(SolverError::NoIterations);
    }
    scheme.check(a, b)?;
    let mut state = match &opts.x0 {
        Some(x0) => SolverState::with_initial(a, b, x0.clone())?,
        None => SolverState::zero(a, b),
    };
    if let Some(t) = &opts.ground_truth {
        if t.len() != a.cols() {
            return Err(SolverError::Dimension(format!(
                "ground truth has {} pixels, operator has {} columns",
                t.len(),
                a.cols()
            )));
        }
    }
    let mut record = RunRecord {
        m: a.rows(),
        residual_norms: Vec::with_capacity(opts.max_iters),
        error_norms: opts.ground_truth.as_ref().map(|_| Vec::with_capacity(opts.max_iters)),
        ..Default::default()
    };
    for _ in 0..opts.max_iters {
        scheme.step(a, b, &mut state)?;
        record.residual_norms.push(state.residual_norm);
        if let (Some(t), Some(errs)) = (&opts.ground_truth, record.error_norms.as_mut()) {
            errs.push(distance(&state.x, t));
        }
        let it = Iteration {
            state: &state,
            operator: a,
            scheme,
            rhs: b,
        };
        let mut halt = false;
        for obs in observers.iter_mut() {
            if obs.observe(&it, &mut record)? == Signal::Stop {
                halt = true;
            }
        }
        if halt {
            record.halted_at = Some(state.k);
            break;
        }
    }
    Ok((record, state))
}

/// Re-runs the plain iteration and returns copies of `x⁽ᵏ⁾` for each requested `k`.
pub fn iterates_at<A: LinearOperator + ?Sized>(
    a: &A,
    b: &[f64],
    scheme: &IterationScheme,
    ks: &[usize],
) -> Result<Vec<(usize, Vec<f64>)>, SolverError> {
    let mut wanted: Vec<usize> = ks.to_vec();
    wanted.sort_unstable();
    wanted.dedup();
    let mut state = SolverState::zero(a, b);
    let mut out = Vec::with_capacity(wanted.len());
    for &k in &wanted {
        while state.k < k {
            scheme.step(a, b, &mut state)?;
        }
        out.push((k, state.x.clone()));
    }
    Ok(out)
}
