//! Stopping rules over the `(‖ρ⁽ᵏ⁾‖, t_k)` stream: discrepancy principle,
//! fit-to-noise-level, UPRE, GCV, and the normalized cumulative periodogram.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use thiserror::Error;

use crate::ctmodel::AnglePartition;
use crate::linops::LinearOperator;
use crate::solvers::{Iteration, Observer, RunRecord, Signal, SolverError};
use crate::trace::TraceMethod;

#[derive(Debug, Error, PartialEq)]
pub enum RuleError {
    #[error("{0} needs a noise level eta > 0")]
    MissingEta(Rule),
    #[error("{0} needs a trace series; attach a trace observer")]
    MissingTrace(Rule),
    #[error("NCP series was not recorded; attach an NCP observer")]
    MissingNcp,
    #[error("segment of length {0} is too short for an NCP (need at least 4)")]
    TooShort(usize),
    #[error("trace term {t} reached m = {m}")]
    Exhausted { t: f64, m: usize },
    #[error("invalid rule configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Rule {
    Dp,
    Ftnl,
    Upre,
    Gcv,
    Ncp,
}

impl Rule {
    pub const ALL: [Rule; 5] = [Rule::Dp, Rule::Ftnl, Rule::Upre, Rule::Gcv, Rule::Ncp];

    pub fn needs_eta(self) -> bool {
        matches!(self, Rule::Dp | Rule::Ftnl | Rule::Upre)
    }

    pub fn needs_trace(self) -> bool {
        matches!(self, Rule::Ftnl | Rule::Upre | Rule::Gcv)
    }

    /// Default smoothing width for the local-minimum detector.
    pub fn default_window(self) -> usize {
        if self == Rule::Ncp {
            5
        } else {
            1
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Rule::Dp => "DP",
            Rule::Ftnl => "FTNL",
            Rule::Upre => "UPRE",
            Rule::Gcv => "GCV",
            Rule::Ncp => "NCP",
        })
    }
}

impl FromStr for Rule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "dp" => Ok(Rule::Dp),
            "ftnl" => Ok(Rule::Ftnl),
            "upre" => Ok(Rule::Upre),
            "gcv" => Ok(Rule::Gcv),
            "ncp" => Ok(Rule::Ncp),
            other => Err(format!("unknown rule `{other}` (dp, ftnl, upre, gcv, ncp)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RuleConfig {
    pub tau: f64,
    pub eta: Option<f64>,
    pub patience: usize,
    /// `None` uses [`Rule::default_window`].
    pub smooth_window: Option<usize>,
    /// `None` takes exact, then Girard, then Santos-DePierro, whichever was recorded.
    pub trace_source: Option<TraceMethod>,
}

impl Default for RuleConfig {
    fn default() -> Self {
        RuleConfig {
            tau: 1.02,
            eta: None,
            patience: 3,
            smooth_window: None,
            trace_source: None,
        }
    }
}

impl RuleConfig {
    pub fn with_eta(eta: f64) -> Self {
        RuleConfig {
            eta: Some(eta),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), RuleError> {
        if !(self.tau >= 1.0) {
            return Err(RuleError::Config(format!("tau = {} < 1", self.tau)));
        }
        if self.patience == 0 {
            return Err(RuleError::Config("patience must be >= 1".into()));
        }
        if let Some(w) = self.smooth_window {
            if w % 2 == 0 {
                return Err(RuleError::Config(format!("smooth_window = {w} is not odd")));
            }
        }
        Ok(())
    }

    pub fn window(&self, rule: Rule) -> usize {
        self.smooth_window.unwrap_or_else(|| rule.default_window())
    }

    fn eta_for(&self, rule: Rule) -> Result<f64, RuleError> {
        match self.eta {
            Some(e) if e > 0.0 => Ok(e),
            _ => Err(RuleError::MissingEta(rule)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StopDecision {
    pub rule: Rule,
    pub k_stop: Option<usize>,
    pub value_at_stop: f64,
    pub fired: bool,
}

impl StopDecision {
    fn not_fired(rule: Rule) -> Self {
        StopDecision {
            rule,
            k_stop: None,
            value_at_stop: f64::NAN,
            fired: false,
        }
    }
}

/// Rule curves, one entry per iteration.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RuleSeries {
    pub dp_threshold: Option<Vec<f64>>,
    pub ftnl_threshold: Option<Vec<f64>>,
    pub upre: Option<Vec<f64>>,
    pub gcv: Option<Vec<f64>>,
    pub ncp: Option<Vec<f64>>,
}

// ---------------------------------------------------------------------------
// Periodogram and NCP
// ---------------------------------------------------------------------------

/// Cached FFT plans for repeated periodograms of the same lengths.
pub struct Periodogram {
    planner: FftPlanner<f64>,
    buf: Vec<Complex<f64>>,
}

impl Periodogram {
    pub fn new() -> Self {
        Periodogram {
            planner: FftPlanner::new(),
            buf: Vec::new(),
        }
    }

    fn plan(&mut self, len: usize) -> Arc<dyn Fft<f64>> {
        self.planner.plan_fft_forward(len)
    }

    /// `|v̂_i|²` for `i = 0..=⌊m/2⌋` (DC first), unnormalized length-m transform.
    pub fn compute(&mut self, v: &[f64]) -> Vec<f64> {
        let fft = self.plan(v.len());
        self.buf.clear();
        self.buf.extend(v.iter().map(|&x| Complex::new(x, 0.0)));
        fft.process(&mut self.buf);
        self.buf[..=v.len() / 2].iter().map(|c| c.norm_sqr()).collect()
    }

    pub fn ncp_vector(&mut self, v: &[f64]) -> Result<NcpVector, RuleError> {
        if v.len() < 4 {
            return Err(RuleError::TooShort(v.len()));
        }
        let p = self.compute(v);
        Ok(NcpVector::from_periodogram(&p, v))
    }

    /// `‖c(v) − c_w‖₂`.
    pub fn ncp_distance(&mut self, v: &[f64]) -> Result<f64, RuleError> {
        let c = self.ncp_vector(v)?;
        Ok(c.distance_to_white())
    }

    /// Mean per-angle NCP distance of a residual.
    pub fn ncp_number(&mut self, residual: &[f64], partition: &AnglePartition) -> Result<f64, RuleError> {
        if residual.len() != partition.len() {
            return Err(RuleError::Config(format!(
                "residual of length {} for a partition of length {}",
                residual.len(),
                partition.len()
            )));
        }
        let mut sum = 0.0;
        for seg in partition.split(residual) {
            sum += self.ncp_distance(seg)?;
        }
        Ok(sum / partition.n_angles() as f64)
    }
}

impl Default for Periodogram {
    fn default() -> Self {
        Self::new()
    }
}

/// See [`Periodogram::compute`].
pub fn periodogram(v: &[f64]) -> Vec<f64> {
    Periodogram::new().compute(v)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NcpVector {
    /// `c_1..c_q`, `q = ⌊len/2⌋`.
    pub c: Vec<f64>,
    pub source_len: usize,
    /// Set when the signal had no power outside DC; `c` is then the white ramp.
    pub zero_power: bool,
}

impl NcpVector {
    fn from_periodogram(p: &[f64], v: &[f64]) -> Self {
        let q = v.len() / 2;
        let total: f64 = p[1..=q].iter().sum();
        let energy = v.len() as f64 * v.iter().map(|x| x * x).sum::<f64>();
        // FFT round-off leaves ~1e-32 relative power in the bins of a constant signal
        if !(total > 1e-26 * energy) {
            return NcpVector {
                c: white_ncp(q),
                source_len: v.len(),
                zero_power: true,
            };
        }
        let mut acc = 0.0;
        let mut c: Vec<f64> = p[1..=q]
            .iter()
            .map(|&x| {
                acc += x;
                (acc / total).min(1.0)
            })
            .collect();
        c[q - 1] = 1.0;
        NcpVector {
            c,
            source_len: v.len(),
            zero_power: false,
        }
    }

    pub fn distance_to_white(&self) -> f64 {
        let q = self.c.len() as f64;
        self.c
            .iter()
            .enumerate()
            .map(|(j, &c)| (c - (j + 1) as f64 / q).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

pub fn ncp_vector(v: &[f64]) -> Result<NcpVector, RuleError> {
    Periodogram::new().ncp_vector(v)
}

/// `(1/q, 2/q, …, 1)`.
pub fn white_ncp(q: usize) -> Vec<f64> {
    (1..=q).map(|j| j as f64 / q as f64).collect()
}

pub fn ncp_number(residual: &[f64], partition: &AnglePartition) -> Result<f64, RuleError> {
    Periodogram::new().ncp_number(residual, partition)
}

// ---------------------------------------------------------------------------
// Scalar rules
// ---------------------------------------------------------------------------

pub fn dp_threshold(eta: f64, m: usize, tau: f64) -> f64 {
    tau * eta * (m as f64).sqrt()
}

/// `‖ρ‖ ≤ τη√m`.
pub fn dp_check(res_norm: f64, eta: f64, m: usize, tau: f64) -> Result<bool, RuleError> {
    if !(eta > 0.0) {
        return Err(RuleError::MissingEta(Rule::Dp));
    }
    Ok(res_norm <= dp_threshold(eta, m, tau))
}

pub fn ftnl_threshold(eta: f64, m: usize, t_k: f64, tau: f64) -> Result<f64, RuleError> {
    if t_k >= m as f64 {
        return Err(RuleError::Exhausted { t: t_k, m });
    }
    Ok(tau * eta * (m as f64 - t_k).sqrt())
}

/// `‖ρ‖ ≤ τη√(m − t_k)`.
pub fn ftnl_check(res_norm: f64, eta: f64, m: usize, t_k: f64, tau: f64) -> Result<bool, RuleError> {
    if !(eta > 0.0) {
        return Err(RuleError::MissingEta(Rule::Ftnl));
    }
    Ok(res_norm <= ftnl_threshold(eta, m, t_k, tau)?)
}

/// `‖ρ‖² + 2η²t_k − η²m`.
pub fn upre_value(res_norm_sq: f64, eta: f64, m: usize, t_k: f64) -> Result<f64, RuleError> {
    if !(eta > 0.0) {
        return Err(RuleError::MissingEta(Rule::Upre));
    }
    let e2 = eta * eta;
    Ok(res_norm_sq + 2.0 * e2 * t_k - e2 * m as f64)
}

/// `‖ρ‖² / (m − t_k)²`.
pub fn gcv_value(res_norm_sq: f64, m: usize, t_k: f64) -> Result<f64, RuleError> {
    let dof = m as f64 - t_k;
    if dof <= 0.0 {
        return Err(RuleError::Exhausted { t: t_k, m });
    }
    Ok(res_norm_sq / (dof * dof))
}

// ---------------------------------------------------------------------------
// Local-minimum detection
// ---------------------------------------------------------------------------

/// Centred moving average at `i`, truncated on the left; `None` if the
/// window runs past the end.
fn smoothed_at(series: &[f64], i: usize, window: usize) -> Option<f64> {
    let h = window / 2;
    if i + h >= series.len() {
        return None;
    }
    let lo = i.saturating_sub(h);
    let s = &series[lo..=i + h];
    Some(s.iter().sum::<f64>() / s.len() as f64)
}

/// Centred moving average; indices whose window is incomplete on the right are dropped.
pub fn smooth(series: &[f64], window: usize) -> Vec<f64> {
    (0..series.len()).map_while(|i| smoothed_at(series, i, window)).collect()
}

fn rises_after(series: &[f64], i: usize, window: usize, patience: usize) -> bool {
    let mut prev = match smoothed_at(series, i, window) {
        Some(v) => v,
        None => return false,
    };
    for j in i + 1..=i + patience {
        match smoothed_at(series, j, window) {
            Some(v) if v > prev => prev = v,
            _ => return false,
        }
    }
    true
}

/// First `k*` after which the smoothed series rises for `patience`
/// consecutive steps. `value_at_stop` is the raw series value at `k*`.
pub fn detect_stop(rule: Rule, series: &[f64], window: usize, patience: usize) -> StopDecision {
    let window = window.max(1);
    for i in 0..series.len() {
        if i + patience + window / 2 >= series.len() {
            break;
        }
        if rises_after(series, i, window, patience) {
            return StopDecision {
                rule,
                k_stop: Some(i + 1),
                value_at_stop: series[i],
                fired: true,
            };
        }
    }
    StopDecision::not_fired(rule)
}

/// Incremental form of [`detect_stop`]: reports the same `k*` as soon as
/// enough of the series has arrived.
#[derive(Debug, Clone)]
pub struct StopDetector {
    rule: Rule,
    window: usize,
    patience: usize,
    series: Vec<f64>,
    decision: Option<StopDecision>,
}

impl StopDetector {
    pub fn new(rule: Rule, window: usize, patience: usize) -> Self {
        StopDetector {
            rule,
            window: window.max(1),
            patience,
            series: Vec::new(),
            decision: None,
        }
    }

    pub fn push(&mut self, value: f64) -> Option<&StopDecision> {
        self.series.push(value);
        if self.decision.is_none() {
            let lag = self.patience + self.window / 2;
            if self.series.len() > lag {
                let i = self.series.len() - 1 - lag;
                if rises_after(&self.series, i, self.window, self.patience) {
                    self.decision = Some(StopDecision {
                        rule: self.rule,
                        k_stop: Some(i + 1),
                        value_at_stop: self.series[i],
                        fired: true,
                    });
                }
            }
        }
        self.decision.as_ref()
    }

    pub fn decision(&self) -> StopDecision {
        self.decision.clone().unwrap_or_else(|| StopDecision::not_fired(self.rule))
    }
}

/// First `k` with `res_norms[k] ≤ thresholds[k]`; a NaN threshold ends the scan.
fn threshold_stop(rule: Rule, res_norms: &[f64], thresholds: &[f64]) -> StopDecision {
    for (i, (&r, &t)) in res_norms.iter().zip(thresholds).enumerate() {
        if t.is_nan() {
            break;
        }
        if r <= t {
            return StopDecision {
                rule,
                k_stop: Some(i + 1),
                value_at_stop: r,
                fired: true,
            };
        }
    }
    StopDecision::not_fired(rule)
}

// ---------------------------------------------------------------------------
// Evaluation over a run record
// ---------------------------------------------------------------------------

const TRACE_PREFERENCE: [TraceMethod; 3] = [TraceMethod::Exact, TraceMethod::Girard, TraceMethod::SantosDePierro];

/// The `t_k` series a rule should use under `cfg`.
pub fn trace_series<'a>(record: &'a RunRecord, cfg: &RuleConfig) -> Option<&'a [f64]> {
    let pick = |m: TraceMethod| record.trace(m).map(|t| t.values.as_slice());
    match cfg.trace_source {
        Some(m) => pick(m),
        None => TRACE_PREFERENCE.iter().find_map(|&m| pick(m)),
    }
}

/// Fills in `record.rule_series` and `record.decisions` for `rules`.
pub fn evaluate(record: &mut RunRecord, rules: &[Rule], cfg: &RuleConfig) -> Result<(), RuleError> {
    cfg.validate()?;
    let m = record.m;
    let res = record.residual_norms.clone();
    let res_sq: Vec<f64> = res.iter().map(|r| r * r).collect();
    let tk = trace_series(record, cfg).map(<[f64]>::to_vec);
    let need_tk = |rule: Rule| -> Result<&Vec<f64>, RuleError> {
        tk.as_ref().filter(|t| t.len() >= res.len()).ok_or(RuleError::MissingTrace(rule))
    };

    let mut decisions = Vec::with_capacity(rules.len());
    for &rule in rules {
        let window = cfg.window(rule);
        let decision = match rule {
            Rule::Dp => {
                let eta = cfg.eta_for(rule)?;
                let thr = vec![dp_threshold(eta, m, cfg.tau); res.len()];
                let d = threshold_stop(rule, &res, &thr);
                record.rule_series.dp_threshold = Some(thr);
                d
            }
            Rule::Ftnl => {
                let eta = cfg.eta_for(rule)?;
                let thr: Vec<f64> = need_tk(rule)?
                    .iter()
                    .take(res.len())
                    .map(|&t| ftnl_threshold(eta, m, t, cfg.tau).unwrap_or(f64::NAN))
                    .collect();
                let d = threshold_stop(rule, &res, &thr);
                record.rule_series.ftnl_threshold = Some(thr);
                d
            }
            Rule::Upre => {
                let eta = cfg.eta_for(rule)?;
                let t = need_tk(rule)?;
                let u = res_sq
                    .iter()
                    .zip(t)
                    .map(|(&r2, &t)| upre_value(r2, eta, m, t))
                    .collect::<Result<Vec<_>, _>>()?;
                let d = detect_stop(rule, &u, window, cfg.patience);
                record.rule_series.upre = Some(u);
                d
            }
            Rule::Gcv => {
                let t = need_tk(rule)?;
                let g: Vec<f64> = res_sq
                    .iter()
                    .zip(t)
                    .map(|(&r2, &t)| gcv_value(r2, m, t).unwrap_or(f64::INFINITY))
                    .collect();
                let d = detect_stop(rule, &g, window, cfg.patience);
                record.rule_series.gcv = Some(g);
                d
            }
            Rule::Ncp => {
                let n = record.rule_series.ncp.as_ref().ok_or(RuleError::MissingNcp)?;
                detect_stop(rule, n, window, cfg.patience)
            }
        };
        decisions.push(decision);
    }
    record.decisions = decisions;
    Ok(())
}

// ---------------------------------------------------------------------------
// Observers
// ---------------------------------------------------------------------------

/// Records `N⁽ᵏ⁾` from the live residual.
pub struct NcpObserver {
    partition: AnglePartition,
    periodogram: Periodogram,
}

impl NcpObserver {
    pub fn new(partition: AnglePartition) -> Result<Self, RuleError> {
        let shortest = partition.min_segment();
        if shortest < 4 {
            return Err(RuleError::TooShort(shortest));
        }
        Ok(NcpObserver {
            partition,
            periodogram: Periodogram::new(),
        })
    }
}

impl<A: LinearOperator + ?Sized> Observer<A> for NcpObserver {
    fn name(&self) -> &str {
        "rule:ncp"
    }

    fn observe(&mut self, it: &Iteration<'_, A>, record: &mut RunRecord) -> Result<Signal, SolverError> {
        let n = self
            .periodogram
            .ncp_number(&it.state.residual, &self.partition)
            .map_err(|e| SolverError::Observer {
                observer: "rule:ncp".into(),
                message: e.to_string(),
            })?;
        record.rule_series.ncp.get_or_insert_with(Vec::new).push(n);
        Ok(Signal::Continue)
    }
}

/// Halts the run as soon as `rule` fires. Register it after the trace and
/// NCP observers it reads from.
pub struct EarlyStop {
    rule: Rule,
    cfg: RuleConfig,
    detector: StopDetector,
}

impl EarlyStop {
    pub fn new(rule: Rule, cfg: RuleConfig) -> Result<Self, RuleError> {
        cfg.validate()?;
        if rule.needs_eta() {
            cfg.eta_for(rule)?;
        }
        Ok(EarlyStop {
            rule,
            detector: StopDetector::new(rule, cfg.window(rule), cfg.patience),
            cfg,
        })
    }

    fn latest(&self, record: &RunRecord, res_norm: f64) -> Result<Option<f64>, RuleError> {
        let m = record.m;
        let t = || -> Result<f64, RuleError> {
            trace_series(record, &self.cfg)
                .and_then(|s| s.last().copied())
                .ok_or(RuleError::MissingTrace(self.rule))
        };
        let eta = self.cfg.eta.unwrap_or(0.0);
        Ok(match self.rule {
            Rule::Dp => dp_check(res_norm, eta, m, self.cfg.tau)?.then_some(res_norm),
            Rule::Ftnl => match ftnl_check(res_norm, eta, m, t()?, self.cfg.tau) {
                Ok(hit) => hit.then_some(res_norm),
                Err(RuleError::Exhausted { .. }) => None,
                Err(e) => return Err(e),
            },
            Rule::Upre => Some(upre_value(res_norm * res_norm, eta, m, t()?)?),
            Rule::Gcv => Some(gcv_value(res_norm * res_norm, m, t()?).unwrap_or(f64::INFINITY)),
            Rule::Ncp => Some(
                record
                    .rule_series
                    .ncp
                    .as_ref()
                    .and_then(|s| s.last().copied())
                    .ok_or(RuleError::MissingNcp)?,
            ),
        })
    }
}

impl<A: LinearOperator + ?Sized> Observer<A> for EarlyStop {
    fn name(&self) -> &str {
        "early-stop"
    }

    fn observe(&mut self, it: &Iteration<'_, A>, record: &mut RunRecord) -> Result<Signal, SolverError> {
        let v = self.latest(record, it.state.residual_norm).map_err(|e| SolverError::Observer {
            observer: format!("early-stop:{}", self.rule),
            message: e.to_string(),
        })?;
        let fired = match self.rule {
            Rule::Dp | Rule::Ftnl => v.is_some(),
            _ => self.detector.push(v.unwrap_or(f64::NAN)).is_some(),
        };
        Ok(if fired { Signal::Stop } else { Signal::Continue })
    }
}
