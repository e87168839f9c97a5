//! `key = value` experiment configs, with `|` alternatives for grids.

use std::collections::BTreeSet;
use std::path::PathBuf;

use crate::ctmodel::{default_detector_count, parse_angle_range, PhantomKind};
use crate::linops::ORACLE_CAP;
use crate::solvers::{Relaxation, SchemeKind};
use crate::stoprules::{Rule, RuleConfig};
use crate::trace::{Aggregate, TraceMethod};

use super::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AngleSpec {
    pub start: f64,
    pub step: f64,
    pub stop: f64,
}

impl AngleSpec {
    pub fn angles(&self) -> Vec<f64> {
        parse_angle_range(self.start, self.step, self.stop).expect("validated at parse time")
    }
}

impl std::fmt::Display for AngleSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}:{}", self.start, self.step, self.stop)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseModel {
    None,
    /// Absolute standard deviation.
    Gaussian { eta: f64 },
    /// `η = ρ‖b̄‖/√m`.
    GaussianRelative { rho: f64 },
    /// Source intensity calibrated to the target ρ.
    Poisson { rho: f64 },
    PoissonI0 { i0: f64 },
}

/// Which trace series to record.
#[derive(Debug, Clone, PartialEq)]
pub enum TraceChoice {
    /// Exact for small Landweber problems, Santos-DePierro for larger ones, Girard for SIRT.
    Auto,
    None,
    Methods(Vec<TraceMethod>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub name: String,
    pub image_side: usize,
    pub n_det: usize,
    pub angles: AngleSpec,
    pub pixel_size: f64,
    pub phantom: PhantomKind,
    pub phantom_seed: u64,
    pub noise: NoiseModel,
    pub noise_seed: u64,
    pub scheme: SchemeKind,
    pub omega: Relaxation,
    pub max_iters: usize,
    pub rules: Vec<Rule>,
    pub rule_cfg: RuleConfig,
    pub trace: TraceChoice,
    pub trace_samples: usize,
    pub trace_seed: u64,
    pub aggregate: Aggregate,
    pub out: PathBuf,
    pub early_stop: Option<Rule>,
    pub deterministic: bool,
    pub plots: bool,
    pub images: bool,
    pub dump_matrix: bool,
    /// Largest `min(m, n)` for which the exact trace is computed.
    pub oracle_cap: usize,
}

impl ExperimentConfig {
    /// Defaults for everything except the geometry.
    pub fn new(image_side: usize, angles: AngleSpec) -> Self {
        ExperimentConfig {
            name: "run".into(),
            image_side,
            n_det: default_detector_count(image_side),
            angles,
            pixel_size: 1.0,
            phantom: PhantomKind::SheppLogan,
            phantom_seed: 0,
            noise: NoiseModel::GaussianRelative { rho: 0.01 },
            noise_seed: 0,
            scheme: SchemeKind::Landweber,
            omega: Relaxation::Auto,
            max_iters: 500,
            rules: Rule::ALL.to_vec(),
            rule_cfg: RuleConfig::default(),
            trace: TraceChoice::Auto,
            trace_samples: 1,
            trace_seed: 0,
            aggregate: Aggregate::Mean,
            out: PathBuf::from("out"),
            early_stop: None,
            deterministic: false,
            plots: true,
            images: true,
            dump_matrix: false,
            oracle_cap: ORACLE_CAP,
        }
    }

    /// Sets the noise, phantom and probe seeds together.
    pub fn set_seed(&mut self, seed: u64) {
        self.noise_seed = seed;
        self.phantom_seed = seed;
        self.trace_seed = seed;
    }
}

const KEYS: &[&str] = &[
    "name",
    "N",
    "n_det",
    "angles",
    "pixel_size",
    "phantom",
    "phantom_seed",
    "noise",
    "eta",
    "rho",
    "i0",
    "noise_seed",
    "seed",
    "scheme",
    "omega",
    "max_iters",
    "rules",
    "tau",
    "patience",
    "smooth_window",
    "rule_eta",
    "trace",
    "trace_source",
    "trace_samples",
    "trace_seed",
    "aggregate",
    "out",
    "early_stop",
    "deterministic",
    "plots",
    "images",
    "dump_matrix",
    "oracle_cap",
];

/// One `key = value` line.
#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub line: usize,
    pub key: String,
    pub value: String,
}

fn lex(source: &str) -> Result<Vec<Entry>, HarnessError> {
    let mut out: Vec<Entry> = Vec::new();
    for (i, raw) in source.lines().enumerate() {
        let line = i + 1;
        let text = raw.split('#').next().unwrap_or("").trim();
        if text.is_empty() {
            continue;
        }
        let (key, value) = text.split_once('=').ok_or_else(|| HarnessError::Config {
            line,
            key: text.to_string(),
            message: "expected `key = value`".into(),
        })?;
        let key = key.trim().to_string();
        if !KEYS.contains(&key.as_str()) {
            return Err(HarnessError::Config {
                line,
                key,
                message: "unknown key".into(),
            });
        }
        if out.iter().any(|e| e.key == key) {
            return Err(HarnessError::Config {
                line,
                key,
                message: "duplicate key".into(),
            });
        }
        out.push(Entry {
            line,
            key,
            value: value.trim().to_string(),
        });
    }
    Ok(out)
}

fn err(e: &Entry, message: impl Into<String>) -> HarnessError {
    HarnessError::Config {
        line: e.line,
        key: e.key.clone(),
        message: message.into(),
    }
}

fn num<T: std::str::FromStr>(e: &Entry) -> Result<T, HarnessError>
where
    T::Err: std::fmt::Display,
{
    e.value.parse::<T>().map_err(|x| err(e, format!("`{}`: {x}", e.value)))
}

fn flag(e: &Entry) -> Result<bool, HarnessError> {
    match e.value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(err(e, format!("`{}` is not a boolean", e.value))),
    }
}

pub fn parse_angles(text: &str) -> Result<AngleSpec, String> {
    let parts: Vec<&str> = text.split(':').map(str::trim).collect();
    let [a, b, c] = parts[..] else {
        return Err(format!("`{text}` is not start:step:stop"));
    };
    let p = |s: &str| s.parse::<f64>().map_err(|e| format!("`{s}`: {e}"));
    let spec = AngleSpec {
        start: p(a)?,
        step: p(b)?,
        stop: p(c)?,
    };
    parse_angle_range(spec.start, spec.step, spec.stop).map_err(|e| e.to_string())?;
    Ok(spec)
}

fn list<T: std::str::FromStr<Err = String>>(e: &Entry) -> Result<Vec<T>, HarnessError> {
    e.value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(|m| err(e, m)))
        .collect()
}

fn build(entries: &[Entry]) -> Result<ExperimentConfig, HarnessError> {
    let get = |k: &str| entries.iter().find(|e| e.key == k);
    let n_entry = get("N").ok_or_else(|| HarnessError::MissingKey("N".into()))?;
    let side: usize = num(n_entry)?;
    if side < 2 {
        return Err(err(n_entry, "N must be at least 2"));
    }
    let a_entry = get("angles").ok_or_else(|| HarnessError::MissingKey("angles".into()))?;
    let angles = parse_angles(&a_entry.value).map_err(|m| err(a_entry, m))?;
    let mut cfg = ExperimentConfig::new(side, angles);

    if let Some(e) = get("seed") {
        cfg.set_seed(num(e)?);
    }
    let mut eta = None;
    let mut rho = None;
    let mut i0 = None;
    let mut noise_kind = None;
    for e in entries {
        match e.key.as_str() {
            "name" => cfg.name = e.value.clone(),
            "n_det" => cfg.n_det = num(e)?,
            "pixel_size" => cfg.pixel_size = num(e)?,
            "phantom" => cfg.phantom = e.value.parse().map_err(|x: crate::ctmodel::CtError| err(e, x.to_string()))?,
            "phantom_seed" => cfg.phantom_seed = num(e)?,
            "noise" => noise_kind = Some(e.value.to_ascii_lowercase()),
            "eta" => eta = Some(num::<f64>(e)?),
            "rho" => rho = Some(num::<f64>(e)?),
            "i0" => i0 = Some(num::<f64>(e)?),
            "noise_seed" => cfg.noise_seed = num(e)?,
            "scheme" => cfg.scheme = e.value.parse().map_err(|m: String| err(e, m))?,
            "omega" => {
                cfg.omega = if e.value.eq_ignore_ascii_case("auto") {
                    Relaxation::Auto
                } else {
                    Relaxation::Fixed(num(e)?)
                }
            }
            "max_iters" => cfg.max_iters = num(e)?,
            "rules" => {
                cfg.rules = if e.value.eq_ignore_ascii_case("none") {
                    Vec::new()
                } else {
                    let mut seen = BTreeSet::new();
                    list::<Rule>(e)?.into_iter().filter(|r| seen.insert(*r)).collect()
                }
            }
            "tau" => cfg.rule_cfg.tau = num(e)?,
            "patience" => cfg.rule_cfg.patience = num(e)?,
            "smooth_window" => cfg.rule_cfg.smooth_window = Some(num(e)?),
            "rule_eta" => cfg.rule_cfg.eta = Some(num(e)?),
            "trace" => {
                cfg.trace = match e.value.to_ascii_lowercase().as_str() {
                    "auto" => TraceChoice::Auto,
                    "none" => TraceChoice::None,
                    _ => TraceChoice::Methods(list(e)?),
                }
            }
            "trace_source" => cfg.rule_cfg.trace_source = Some(e.value.parse().map_err(|m: String| err(e, m))?),
            "trace_samples" => cfg.trace_samples = num(e)?,
            "trace_seed" => cfg.trace_seed = num(e)?,
            "aggregate" => cfg.aggregate = e.value.parse().map_err(|m: String| err(e, m))?,
            "out" => cfg.out = PathBuf::from(&e.value),
            "early_stop" => {
                cfg.early_stop = if e.value.eq_ignore_ascii_case("none") {
                    None
                } else {
                    Some(e.value.parse().map_err(|m: String| err(e, m))?)
                }
            }
            "deterministic" => cfg.deterministic = flag(e)?,
            "plots" => cfg.plots = flag(e)?,
            "images" => cfg.images = flag(e)?,
            "dump_matrix" => cfg.dump_matrix = flag(e)?,
            "oracle_cap" => cfg.oracle_cap = num(e)?,
            _ => {}
        }
    }

    let noise_entry = get("noise");
    cfg.noise = match noise_kind.as_deref().unwrap_or("gaussian") {
        "none" => NoiseModel::None,
        "gaussian" => match (eta, rho) {
            (Some(eta), None) => NoiseModel::Gaussian { eta },
            (None, Some(rho)) => NoiseModel::GaussianRelative { rho },
            (None, None) => NoiseModel::GaussianRelative { rho: 0.01 },
            (Some(_), Some(_)) => {
                return Err(HarnessError::Config {
                    line: get("rho").map_or(0, |e| e.line),
                    key: "rho".into(),
                    message: "give either eta or rho for gaussian noise".into(),
                })
            }
        },
        "poisson" => match (rho, i0) {
            (Some(rho), None) => NoiseModel::Poisson { rho },
            (None, Some(i0)) => NoiseModel::PoissonI0 { i0 },
            (None, None) => NoiseModel::Poisson { rho: 0.01 },
            (Some(_), Some(_)) => {
                return Err(HarnessError::Config {
                    line: get("i0").map_or(0, |e| e.line),
                    key: "i0".into(),
                    message: "give either rho or i0 for poisson noise".into(),
                })
            }
        },
        other => {
            let e = noise_entry.expect("noise kind came from an entry");
            return Err(err(e, format!("unknown noise model `{other}` (gaussian, poisson, none)")));
        }
    };
    validate(&cfg, entries)?;
    Ok(cfg)
}

fn validate(cfg: &ExperimentConfig, entries: &[Entry]) -> Result<(), HarnessError> {
    let at = |k: &str, msg: String| HarnessError::Config {
        line: entries.iter().find(|e| e.key == k).map_or(0, |e| e.line),
        key: k.into(),
        message: msg,
    };
    if cfg.n_det == 0 {
        return Err(at("n_det", "must be positive".into()));
    }
    if !(cfg.pixel_size > 0.0) {
        return Err(at("pixel_size", "must be positive".into()));
    }
    if cfg.max_iters == 0 {
        return Err(at("max_iters", "must be at least 1".into()));
    }
    if cfg.trace_samples == 0 {
        return Err(at("trace_samples", "must be at least 1".into()));
    }
    if let Relaxation::Fixed(w) = cfg.omega {
        if !(w > 0.0) {
            return Err(at("omega", format!("{w} is not positive")));
        }
    }
    match cfg.noise {
        NoiseModel::Gaussian { eta } if !(eta >= 0.0) => return Err(at("eta", "must be >= 0".into())),
        NoiseModel::GaussianRelative { rho } if !(rho >= 0.0) => return Err(at("rho", "must be >= 0".into())),
        NoiseModel::Poisson { rho } if !(rho > 0.0 && rho < 1.0) => return Err(at("rho", "must be in (0, 1)".into())),
        NoiseModel::PoissonI0 { i0 } if !(i0 > 0.0) => return Err(at("i0", "must be positive".into())),
        _ => {}
    }
    if let Some(w) = cfg.rule_cfg.smooth_window {
        if w % 2 == 0 {
            return Err(at("smooth_window", format!("{w} is not odd")));
        }
    }
    if !(cfg.rule_cfg.tau >= 1.0) {
        return Err(at("tau", "must be >= 1".into()));
    }
    if cfg.rule_cfg.patience == 0 {
        return Err(at("patience", "must be >= 1".into()));
    }
    if let TraceChoice::Methods(ms) = &cfg.trace {
        if cfg.scheme == SchemeKind::Sirt {
            if ms.contains(&TraceMethod::Exact) {
                return Err(at("trace", "exact trace is only available for landweber".into()));
            }
            if ms.contains(&TraceMethod::SantosDePierro) {
                return Err(at("trace", "santos-depierro needs a scalar D; use girard with sirt".into()));
            }
        }
    }
    if let Some(r) = cfg.early_stop {
        if !cfg.rules.contains(&r) {
            return Err(at("early_stop", format!("{r} is not among the enabled rules")));
        }
    }
    Ok(())
}

/// Parses a single experiment; `|` alternatives are rejected here.
pub fn parse_config(source: &str) -> Result<ExperimentConfig, HarnessError> {
    let entries = lex(source)?;
    if let Some(e) = entries.iter().find(|e| e.value.contains('|')) {
        return Err(err(e, "alternatives with `|` are only allowed in grid configs"));
    }
    build(&entries)
}

/// One grid point: the chosen alternative for every varying key.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPoint {
    pub params: Vec<(String, String)>,
    pub config: ExperimentConfig,
}

impl GridPoint {
    pub fn label(&self) -> String {
        if self.params.is_empty() {
            return "single".into();
        }
        self.params
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(",")
    }
}

/// Expands `|` alternatives into the Cartesian product, first key varying slowest.
pub fn parse_grid(source: &str) -> Result<Vec<GridPoint>, HarnessError> {
    let entries = lex(source)?;
    let options: Vec<Vec<String>> = entries
        .iter()
        .map(|e| e.value.split('|').map(|s| s.trim().to_string()).collect())
        .collect();
    let total: usize = options.iter().map(Vec::len).product();
    let mut points = Vec::with_capacity(total);
    for idx in 0..total {
        let mut rem = idx;
        let mut chosen = vec![String::new(); entries.len()];
        for i in (0..entries.len()).rev() {
            let n = options[i].len();
            chosen[i] = options[i][rem % n].clone();
            rem /= n;
        }
        let concrete: Vec<Entry> = entries
            .iter()
            .zip(&chosen)
            .map(|(e, v)| Entry {
                line: e.line,
                key: e.key.clone(),
                value: v.clone(),
            })
            .collect();
        let params = entries
            .iter()
            .zip(&options)
            .zip(&chosen)
            .filter(|((_, o), _)| o.len() > 1)
            .map(|((e, _), v)| (e.key.clone(), v.clone()))
            .collect();
        points.push(GridPoint {
            params,
            config: build(&concrete)?,
        });
    }
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn angle_specs() {
        assert_eq!(parse_angles("3:3:180").unwrap().angles().len(), 60);
        assert_eq!(parse_angles("8:8:180").unwrap().angles().len(), 22);
        assert!(parse_angles("3:3").is_err());
        assert!(parse_angles("0:0:10").is_err());
    }

    #[test]
    fn minimal_config_and_defaults() {
        let cfg = parse_config("N = 64\nangles = 3:3:180  # over-determined\n").unwrap();
        assert_eq!(cfg.image_side, 64);
        assert_eq!(cfg.n_det, 91);
        assert_eq!(cfg.angles.angles().len(), 60);
        assert_eq!(cfg.rule_cfg.tau, 1.02);
        assert_eq!(cfg.noise, NoiseModel::GaussianRelative { rho: 0.01 });
    }

    #[test]
    fn missing_n_is_named() {
        let e = parse_config("angles = 1:1:180").unwrap_err();
        assert!(e.to_string().contains("`N`"), "{e}");
    }

    #[test]
    fn unknown_key_names_line_and_key() {
        let e = parse_config("N = 8\nangles = 1:1:10\n\nbanana = 3\n").unwrap_err();
        let msg = e.to_string();
        assert!(msg.contains("line 4") && msg.contains("banana"), "{msg}");
    }

    #[test]
    fn full_config() {
        let text = "
            name = demo
            N = 32
            n_det = 40
            angles = 0:2:178
            phantom = grains
            noise = poisson
            rho = 0.05
            scheme = sirt
            max_iters = 50
            rules = gcv, ncp
            trace = girard
            trace_samples = 3
            aggregate = median
            early_stop = ncp
            deterministic = true
            seed = 9
        ";
        let cfg = parse_config(text).unwrap();
        assert_eq!(cfg.scheme, SchemeKind::Sirt);
        assert_eq!(cfg.noise, NoiseModel::Poisson { rho: 0.05 });
        assert_eq!(cfg.rules, vec![Rule::Gcv, Rule::Ncp]);
        assert_eq!(cfg.trace, TraceChoice::Methods(vec![TraceMethod::Girard]));
        assert_eq!(cfg.early_stop, Some(Rule::Ncp));
        assert_eq!(cfg.noise_seed, 9);
        assert_eq!(cfg.aggregate, Aggregate::Median);
    }

    #[test]
    fn invalid_combinations() {
        assert!(parse_config("N = 8\nangles = 1:1:10\nscheme = sirt\ntrace = sdp").is_err());
        assert!(parse_config("N = 8\nangles = 1:1:10\nrules = gcv\nearly_stop = ncp").is_err());
        assert!(parse_config("N = 8\nangles = 1:1:10\neta = 1\nrho = 0.1").is_err());
        assert!(parse_config("N = 8\nangles = 1:1:10\nsmooth_window = 4").is_err());
        assert!(parse_config("N = 8\nangles = 1:1:10\nN = 9").is_err());
        assert!(parse_config("N = 8\nangles = 1:1:10\nnoise = pink").is_err());
        assert!(parse_config("N = 8\nangles = 1:1:10 | 2:2:10").is_err());
    }

    #[test]
    fn grid_expansion() {
        let text = "N = 16\nangles = 0.5:0.5:180 | 1.5:1.5:180 | 4:4:180\nnoise = poisson\nrho = 0.0025|0.01|0.05\n";
        let pts = parse_grid(text).unwrap();
        assert_eq!(pts.len(), 9);
        assert_eq!(pts[0].params[0], ("angles".to_string(), "0.5:0.5:180".to_string()));
        assert_eq!(pts[1].params[1].1, "0.01");
        assert_eq!(pts[3].config.angles.angles().len(), 120);
        assert_eq!(pts[8].config.angles.angles().len(), 45);
        assert_eq!(pts[8].config.noise, NoiseModel::Poisson { rho: 0.05 });
        assert_eq!(pts[0].label(), "angles=0.5:0.5:180,rho=0.0025");
    }
}
