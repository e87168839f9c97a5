//! Experiment runner: builds the CT problem from a config, runs the solver
//! with trace and rule observers attached, and writes CSV, PGM and SVG
//! artifacts.

mod config;
mod plots;
mod reproduce;

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use log::{info, warn};
use thiserror::Error;

use crate::ctmodel::{
    add_gaussian_relative, add_poisson_transmission, add_white_gaussian, build_system_matrix, calibrate_i0,
    io::{write_pgm, write_sinogram_csv, PgmFormat},
    make_phantom, AnglePartition, CtError, Geometry, NoiseRealization, Phantom, Sinogram,
};
use crate::linops::{svd_spectrum_capped, LinearOperator, LinopError, SparseOperator};
use crate::solvers::{
    iterates_at, make_landweber, make_sirt, run, IterationScheme, Observer, RunOptions, RunRecord, SchemeKind,
    SolverError,
};
use crate::stoprules::{evaluate, EarlyStop, NcpObserver, Rule, RuleError};
use crate::trace::{ExactTrace, TraceError, TraceEstimator, TraceMethod};

pub use config::{parse_angles, parse_config, parse_grid, AngleSpec, ExperimentConfig, GridPoint, NoiseModel, TraceChoice};
pub use plots::{emit_plots, render_svg, LinePlot, Marker, Series};
pub use reproduce::{ftnl_stop, reproduce, reproduce_config, sirt_grid, ReproduceReport, REPRODUCE_TAGS};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error at line {line}, key `{key}`: {message}")]
    Config { line: usize, key: String, message: String },
    #[error("missing required key `{0}`")]
    MissingKey(String),
    #[error("unknown reproduce tag `{0}` (expected one of {tags})", tags = REPRODUCE_TAGS.join(", "))]
    UnknownTag(String),
    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<HarnessError>,
    },
    #[error(transparent)]
    Ct(#[from] CtError),
    #[error(transparent)]
    Linop(#[from] LinopError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Rule(#[from] RuleError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl HarnessError {
    fn context(self, what: impl Into<String>) -> Self {
        HarnessError::Context {
            context: what.into(),
            source: Box::new(self),
        }
    }

    fn root(&self) -> &HarnessError {
        match self {
            HarnessError::Context { source, .. } => source.root(),
            other => other,
        }
    }

    /// 2 for configuration problems (including a relaxation the exact trace
    /// cannot use), 3 for divergence, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self.root() {
            HarnessError::Config { .. } | HarnessError::MissingKey(_) | HarnessError::UnknownTag(_) => 2,
            HarnessError::Trace(TraceError::RelaxationOutOfRange { .. }) => 2,
            HarnessError::Solver(SolverError::Divergence { .. }) => 3,
            HarnessError::Trace(TraceError::Solver(SolverError::Divergence { .. })) => 3,
            _ => 1,
        }
    }
}

trait Context<T> {
    fn ctx(self, what: &str) -> Result<T, HarnessError>;
}

impl<T, E: Into<HarnessError>> Context<T> for Result<T, E> {
    fn ctx(self, what: &str) -> Result<T, HarnessError> {
        self.map_err(|e| e.into().context(what))
    }
}

// ---------------------------------------------------------------------------
// Problem construction
// ---------------------------------------------------------------------------

/// System matrix with zero rows removed, and the angle partition of the survivors.
#[derive(Debug)]
pub struct PreparedOperator {
    pub operator: SparseOperator,
    pub kept: Vec<usize>,
    pub partition: AnglePartition,
    pub full_rows: usize,
}

#[derive(Debug, Clone, PartialEq)]
struct GeometryKey {
    side: usize,
    n_det: usize,
    angles: Vec<u64>,
    pixel: u64,
    deterministic: bool,
}

/// Shares built operators between runs with the same geometry.
#[derive(Default)]
pub struct OperatorCache {
    entries: Mutex<Vec<(GeometryKey, Arc<PreparedOperator>)>>,
}

impl OperatorCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, geometry: &Geometry, deterministic: bool) -> Result<Arc<PreparedOperator>, HarnessError> {
        let key = GeometryKey {
            side: geometry.image_side,
            n_det: geometry.n_det,
            angles: geometry.angles.iter().map(|a| a.to_bits()).collect(),
            pixel: geometry.pixel_size.to_bits(),
            deterministic,
        };
        let mut entries = self.entries.lock().expect("operator cache poisoned");
        if let Some((_, op)) = entries.iter().find(|(k, _)| *k == key) {
            return Ok(Arc::clone(op));
        }
        let op = Arc::new(prepare_operator(geometry, deterministic)?);
        entries.push((key, Arc::clone(&op)));
        Ok(op)
    }
}

pub fn prepare_operator(geometry: &Geometry, deterministic: bool) -> Result<PreparedOperator, HarnessError> {
    let mut full = build_system_matrix(geometry).ctx("building the system matrix")?;
    full.set_deterministic(deterministic);
    let filtered = full.remove_zero_rows(&vec![0.0; full.rows()])?;
    if filtered.empty {
        return Err(CtError::InvalidGeometry("no ray hits the image".into()).into());
    }
    let partition = AnglePartition::uniform(geometry.n_det, geometry.angles.len()).restrict(&filtered.kept);
    let mut operator = filtered.operator;
    operator.set_deterministic(deterministic);
    Ok(PreparedOperator {
        operator,
        kept: filtered.kept,
        partition,
        full_rows: full.rows(),
    })
}

/// Everything a run needs besides the scheme.
pub struct Problem {
    pub geometry: Geometry,
    pub prepared: Arc<PreparedOperator>,
    pub phantom: Phantom,
    /// Noise-free data on the surviving rows.
    pub clean: Sinogram,
    pub noise: NoiseRealization,
    /// η handed to the rules: explicit override, else the simulation's η,
    /// else the empirical surrogate.
    pub eta: f64,
}

impl Problem {
    pub fn operator(&self) -> &SparseOperator {
        &self.prepared.operator
    }

    pub fn rhs(&self) -> &[f64] {
        &self.noise.noisy.values
    }
}

pub fn build_problem(cfg: &ExperimentConfig, cache: &OperatorCache) -> Result<Problem, HarnessError> {
    let geometry = Geometry::new(cfg.image_side, cfg.n_det, cfg.angles.angles())?.with_pixel_size(cfg.pixel_size)?;
    let prepared = cache.get(&geometry, cfg.deterministic)?;
    let phantom = make_phantom(cfg.image_side, cfg.phantom, cfg.phantom_seed)?;
    let values = prepared.operator.apply(&phantom.image)?;
    let clean = Sinogram::new(values, prepared.partition.clone())?;
    let noise = match cfg.noise {
        NoiseModel::None => add_white_gaussian(&clean, 0.0, cfg.noise_seed)?,
        NoiseModel::Gaussian { eta } => add_white_gaussian(&clean, eta, cfg.noise_seed)?,
        NoiseModel::GaussianRelative { rho } => add_gaussian_relative(&clean, rho, cfg.noise_seed)?,
        NoiseModel::Poisson { rho } => {
            let i0 = calibrate_i0(&clean, rho, cfg.noise_seed).ctx("calibrating the source intensity")?;
            add_poisson_transmission(&clean, i0, cfg.noise_seed)?
        }
        NoiseModel::PoissonI0 { i0 } => add_poisson_transmission(&clean, i0, cfg.noise_seed)?,
    };
    if noise.clamped > 0 {
        warn!("{} rays recorded zero photons and were clamped", noise.clamped);
    }
    let eta = cfg.rule_cfg.eta.unwrap_or(noise.eta);
    Ok(Problem {
        geometry,
        prepared,
        phantom,
        clean,
        noise,
        eta,
    })
}

pub fn make_scheme(cfg: &ExperimentConfig, a: &SparseOperator) -> Result<IterationScheme, HarnessError> {
    Ok(match cfg.scheme {
        SchemeKind::Landweber => make_landweber(a, cfg.omega)?,
        SchemeKind::Sirt => match cfg.omega {
            crate::solvers::Relaxation::Auto => make_sirt(a),
            crate::solvers::Relaxation::Fixed(w) => crate::solvers::make_sirt_relaxed(a, w)?,
        },
    })
}

/// Trace methods actually attached for `cfg` on an `m×n` problem.
pub fn resolve_trace(cfg: &ExperimentConfig, m: usize, n: usize) -> Vec<TraceMethod> {
    match &cfg.trace {
        TraceChoice::None => Vec::new(),
        TraceChoice::Methods(ms) => ms.clone(),
        TraceChoice::Auto => match cfg.scheme {
            SchemeKind::Sirt => vec![TraceMethod::Girard],
            SchemeKind::Landweber if m.min(n) <= cfg.oracle_cap => vec![TraceMethod::Exact],
            SchemeKind::Landweber => vec![TraceMethod::SantosDePierro],
        },
    }
}

// ---------------------------------------------------------------------------
// Running
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub rule: Rule,
    pub k_stop: Option<usize>,
    pub value: f64,
    pub err_at_stop: Option<f64>,
    pub min_err: Option<f64>,
    pub min_err_k: Option<usize>,
}

#[derive(Debug, Clone, Default)]
pub struct ExperimentArtifacts {
    pub dir: PathBuf,
    pub run_csv: PathBuf,
    pub summary: PathBuf,
    pub images: Vec<PathBuf>,
    pub plots: Vec<PathBuf>,
    pub phantom: Option<PathBuf>,
    pub sinogram: Option<PathBuf>,
    pub matrix: Vec<PathBuf>,
}

/// Result of one experiment.
pub struct ExperimentOutcome {
    pub config: ExperimentConfig,
    pub artifacts: ExperimentArtifacts,
    pub record: RunRecord,
    pub summary: Vec<SummaryRow>,
    pub scheme: IterationScheme,
    /// Rows after zero-row removal.
    pub m: usize,
    pub n: usize,
    pub eta: f64,
    pub rho: f64,
    pub i0: Option<f64>,
}

impl ExperimentOutcome {
    pub fn row(&self, rule: Rule) -> Option<&SummaryRow> {
        self.summary.iter().find(|r| r.rule == rule)
    }
}

/// Runs the solver with every observer the config asks for, then evaluates the rules.
pub fn execute(cfg: &ExperimentConfig, problem: &Problem) -> Result<(RunRecord, IterationScheme), HarnessError> {
    let a = problem.operator();
    let (m, n) = (a.rows(), a.cols());
    let scheme = make_scheme(cfg, a)?;
    let methods = resolve_trace(cfg, m, n);
    let mut observers: Vec<Box<dyn Observer<SparseOperator>>> = Vec::new();
    for &method in &methods {
        observers.push(match method {
            TraceMethod::Exact => {
                let spectrum = svd_spectrum_capped(a, cfg.oracle_cap).ctx("exact trace needs the singular values")?;
                Box::new(ExactTrace::for_scheme(spectrum, &scheme)?)
            }
            other => Box::new(TraceEstimator::new(
                other,
                a,
                &scheme,
                cfg.trace_samples,
                cfg.trace_seed,
                cfg.aggregate,
            )?),
        });
    }
    if cfg.rules.contains(&Rule::Ncp) {
        observers.push(Box::new(NcpObserver::new(problem.prepared.partition.clone())?));
    }
    let mut rule_cfg = cfg.rule_cfg.clone();
    rule_cfg.eta = Some(problem.eta);
    if let Some(rule) = cfg.early_stop {
        observers.push(Box::new(EarlyStop::new(rule, rule_cfg.clone())?));
    }
    let opts = RunOptions::new(cfg.max_iters).with_ground_truth(problem.phantom.image.clone());
    let mut refs: Vec<&mut dyn Observer<SparseOperator>> = observers
        .iter_mut()
        .map(|b| b.as_mut() as &mut dyn Observer<SparseOperator>)
        .collect();
    let (mut record, _) = run(a, problem.rhs(), &scheme, &opts, &mut refs).ctx("running the solver")?;
    evaluate(&mut record, &cfg.rules, &rule_cfg).ctx("evaluating stopping rules")?;
    Ok((record, scheme))
}

pub fn summarize(record: &RunRecord) -> Vec<SummaryRow> {
    let min = record.min_error();
    record
        .decisions
        .iter()
        .map(|d| SummaryRow {
            rule: d.rule,
            k_stop: d.k_stop,
            value: d.value_at_stop,
            err_at_stop: d.k_stop.and_then(|k| record.error_at(k)),
            min_err: min.map(|m| m.1),
            min_err_k: min.map(|m| m.0),
        })
        .collect()
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn fmt_f(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v:e}")
    }
}

pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["rule", "k_stop", "value", "err_at_stop", "min_err", "min_err_k"])?;
    for r in rows {
        w.write_record([
            r.rule.to_string(),
            opt(r.k_stop),
            fmt_f(r.value),
            r.err_at_stop.map(fmt_f).unwrap_or_default(),
            r.min_err.map(fmt_f).unwrap_or_default(),
            opt(r.min_err_k),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome, HarnessError> {
    run_experiment_with(cfg, &OperatorCache::new())
}

pub fn run_experiment_with(cfg: &ExperimentConfig, cache: &OperatorCache) -> Result<ExperimentOutcome, HarnessError> {
    let dir = cfg.out.clone();
    fs::create_dir_all(&dir).ctx(&format!("creating {}", dir.display()))?;
    let problem = build_problem(cfg, cache)?;
    let a = problem.operator();
    info!(
        "{}: m = {} (of {}), n = {}, eta = {:.4e}, rho = {:.4}",
        cfg.name,
        a.rows(),
        problem.prepared.full_rows,
        a.cols(),
        problem.eta,
        problem.noise.rho
    );
    let (record, scheme) = execute(cfg, &problem)?;
    let summary = summarize(&record);

    let mut art = ExperimentArtifacts {
        run_csv: dir.join("run.csv"),
        summary: dir.join("summary.csv"),
        dir: dir.clone(),
        ..Default::default()
    };
    record.save_csv(&art.run_csv)?;
    write_summary(&art.summary, &summary)?;

    if cfg.images {
        let side = cfg.image_side;
        let p = dir.join("phantom.pgm");
        write_pgm(&p, &problem.phantom.image, side, PgmFormat::Binary)?;
        art.phantom = Some(p);
        let s = dir.join("sinogram.csv");
        write_sinogram_csv(&s, &problem.noise.noisy)?;
        art.sinogram = Some(s);

        let last = record.iterations();
        let mut wanted: Vec<(String, usize)> = summary
            .iter()
            .map(|r| match r.k_stop {
                Some(k) => (format!("recon_{}_k{k}.pgm", r.rule.to_string().to_lowercase()), k),
                None => (format!("recon_{}_nofire_k{last}.pgm", r.rule.to_string().to_lowercase()), last),
            })
            .collect();
        if let Some((k, _)) = record.min_error() {
            wanted.push((format!("recon_minerr_k{k}.pgm"), k));
        }
        let ks: Vec<usize> = wanted.iter().map(|w| w.1).collect();
        let snaps = iterates_at(a, problem.rhs(), &scheme, &ks)?;
        for (name, k) in wanted {
            let x = &snaps.iter().find(|s| s.0 == k).expect("requested iterate").1;
            let p = dir.join(name);
            write_pgm(&p, x, side, PgmFormat::Binary)?;
            art.images.push(p);
        }
    }
    if cfg.plots {
        art.plots = emit_plots(&record, &dir).ctx("writing plots")?;
    }
    if cfg.dump_matrix {
        let (t, b) = (dir.join("matrix.txt"), dir.join("matrix.bin"));
        a.save_text(&t)?;
        a.save_binary(&b)?;
        art.matrix = vec![t, b];
    }
    Ok(ExperimentOutcome {
        config: cfg.clone(),
        artifacts: art,
        m: a.rows(),
        n: a.cols(),
        eta: problem.eta,
        rho: problem.noise.rho,
        i0: problem.noise.i0,
        record,
        summary,
        scheme,
    })
}

// ---------------------------------------------------------------------------
// Grids
// ---------------------------------------------------------------------------

/// Worker cap from `SEMISTOP_WORKERS`, else the available parallelism.
pub fn worker_count() -> usize {
    std::env::var("SEMISTOP_WORKERS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&w| w > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

pub struct GridOutcome {
    pub runs: Vec<(GridPoint, ExperimentOutcome)>,
    pub summary: PathBuf,
}

fn safe_label(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '=' { c } else { '_' })
        .collect()
}

/// Runs every grid point in its own subdirectory of `out`, then writes
/// `grid_summary.csv` with one row per run.
pub fn run_grid(points: Vec<GridPoint>, out: &Path) -> Result<GridOutcome, HarnessError> {
    fs::create_dir_all(out)?;
    let cache = OperatorCache::new();
    let workers = worker_count().min(points.len()).max(1);
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<ExperimentOutcome, HarnessError>>>> =
        (0..points.len()).map(|_| Mutex::new(None)).collect();
    let mut points = points;
    for (i, p) in points.iter_mut().enumerate() {
        p.config.out = out.join(format!("{i:02}_{}", safe_label(&p.label())));
    }
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= points.len() {
                    break;
                }
                let res = run_experiment_with(&points[i].config, &cache)
                    .map_err(|e| e.context(format!("grid point {}", points[i].label())));
                *slots[i].lock().expect("grid slot poisoned") = Some(res);
            });
        }
    });
    let mut runs = Vec::with_capacity(points.len());
    for (p, slot) in points.into_iter().zip(slots) {
        let res = slot.into_inner().expect("grid slot poisoned").expect("every point ran");
        runs.push((p, res?));
    }
    let summary = out.join("grid_summary.csv");
    write_grid_summary(&summary, &runs)?;
    Ok(GridOutcome { runs, summary })
}

fn write_grid_summary(path: &Path, runs: &[(GridPoint, ExperimentOutcome)]) -> Result<(), HarnessError> {
    let keys: Vec<String> = runs.first().map(|(p, _)| p.params.iter().map(|kv| kv.0.clone()).collect()).unwrap_or_default();
    let mut rules: Vec<Rule> = runs.iter().flat_map(|(_, o)| o.summary.iter().map(|r| r.rule)).collect();
    rules.sort();
    rules.dedup();
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["run".to_string()];
    header.extend(keys.iter().cloned());
    header.extend(["m", "rho_measured", "min_err_k", "min_err"].map(String::from));
    for r in &rules {
        header.push(format!("{r}_k"));
        header.push(format!("{r}_err"));
    }
    w.write_record(&header)?;
    for (i, (p, o)) in runs.iter().enumerate() {
        let min = o.record.min_error();
        let mut row = vec![i.to_string()];
        row.extend(p.params.iter().map(|kv| kv.1.clone()));
        row.push(o.m.to_string());
        row.push(fmt_f(o.rho));
        row.push(opt(min.map(|m| m.0)));
        row.push(min.map(|m| fmt_f(m.1)).unwrap_or_default());
        for r in &rules {
            let s = o.row(*r);
            row.push(opt(s.and_then(|s| s.k_stop)));
            row.push(s.and_then(|s| s.err_at_stop).map(fmt_f).unwrap_or_default());
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(dir: &Path) -> ExperimentConfig {
        let mut cfg = parse_config("N = 12\nangles = 0:15:165\nmax_iters = 40\nrho = 0.02\ndeterministic = true").unwrap();
        cfg.out = dir.to_path_buf();
        cfg
    }

    #[test]
    fn run_writes_every_artifact() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny(dir.path());
        cfg.dump_matrix = true;
        let out = run_experiment(&cfg).unwrap();
        let art = &out.artifacts;
        for p in [&art.run_csv, &art.summary]
            .into_iter()
            .chain(&art.images)
            .chain(&art.plots)
            .chain(&art.matrix)
            .chain(art.phantom.iter())
            .chain(art.sinogram.iter())
        {
            assert!(p.exists(), "{}", p.display());
        }
        assert_eq!(out.summary.len(), 5);
        // one image per rule plus the min-error one
        assert_eq!(art.images.len(), 6);
        assert_eq!(out.record.iterations(), 40);
        let loaded = SparseOperator::load_binary(&art.matrix[1]).unwrap();
        assert_eq!(loaded.rows(), out.m);
    }

    #[test]
    fn exit_codes() {
        assert_eq!(HarnessError::MissingKey("N".into()).exit_code(), 2);
        let div = HarnessError::Solver(SolverError::Divergence { k: 3 }).context("run");
        assert_eq!(div.exit_code(), 3);
        assert_eq!(HarnessError::Io(std::io::Error::other("x")).exit_code(), 1);
    }

    #[test]
    fn divergent_relaxation_reports_divergence() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny(dir.path());
        cfg.omega = crate::solvers::Relaxation::Fixed(1e3);
        cfg.max_iters = 2000;
        cfg.trace = TraceChoice::None;
        cfg.rules = vec![Rule::Dp];
        let e = run_experiment(&cfg).err().expect("must diverge");
        assert_eq!(e.exit_code(), 3, "{e}");
    }

    #[test]
    fn early_stop_cuts_the_run() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny(dir.path());
        cfg.max_iters = 5000;
        cfg.rules = vec![Rule::Dp];
        cfg.early_stop = Some(Rule::Dp);
        let out = run_experiment(&cfg).unwrap();
        let k = out.summary[0].k_stop.unwrap();
        assert_eq!(out.record.halted_at, Some(k));
    }

    #[test]
    fn grid_runs_each_point() {
        let dir = tempfile::tempdir().unwrap();
        let pts = parse_grid("N = 10\nangles = 0:20:160 | 0:30:150\nrho = 0.01|0.05\nmax_iters = 15\nplots = false\nimages = false").unwrap();
        let g = run_grid(pts, dir.path()).unwrap();
        assert_eq!(g.runs.len(), 4);
        let text = fs::read_to_string(&g.summary).unwrap();
        assert_eq!(text.lines().count(), 5);
        assert!(text.lines().next().unwrap().starts_with("run,angles,rho,m,rho_measured"));
    }
}
