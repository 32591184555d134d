//! Command-line orchestration.
//!
//! Every run is driven by an [`ExperimentConfig`]. The effective config,
//! with the model resolved to inline matrices, is embedded in every file a
//! command writes: CSV files start with a `# config: {...}` line and JSON
//! files are `{"config": ..., "result": ...}`. Passing any such output back
//! through `--config` replays the run and rewrites the file byte for byte.
//!
//! Exit codes: 0 success, 1 usage or runtime error, 2 hypothesis failure in
//! `check`, 3 verification failure in `verify`.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::bounds::{run_verification, window_rates, RateWindow, VerifyPlan, DEFAULT_TOL};
use crate::cocycle::{log_norm_trajectory, lyapunov_spectrum, write_trajectory_csv};
use crate::error::{Error, Result};
use crate::memloss::{
    all_triples, best_rate, estimate_rate, matched_gap, write_curves_csv, CurveKind, DecayCurve, RateEstimate, RateMethod, Triple,
    MIN_RATE_POINTS,
};
use crate::memloss::{delta_curve, delta_tilde_curve};
use crate::model::{check_hypotheses, read_model, HmmModel, ModelSpec, DEFAULT_RANK_TOL};
use crate::perturb2::{binary_rate_bound, build_perturb, lambda1_birkhoff, SolveMode, DEFAULT_DEPTH};
use crate::simulate::{derive_seed, past_window, sample_path};

/// Environment variable overriding the output directory.
pub const OUT_DIR_ENV: &str = "HMM_MEMORY_OUT_DIR";

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_HYPOTHESIS: i32 = 2;
pub const EXIT_VERIFY: i32 = 3;

/// A model given inline or as a path to a `{"p": .., "q": ..}` file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelSource {
    Inline(ModelSpec),
    Path(PathBuf),
}

impl ModelSource {
    pub fn load(&self) -> Result<HmmModel> {
        match self {
            ModelSource::Inline(spec) => spec.build(),
            ModelSource::Path(p) => read_model(p),
        }
    }
}

fn default_n_max() -> usize {
    400
}
fn default_n_lyap() -> usize {
    1_000_000
}
fn default_tol() -> f64 {
    DEFAULT_TOL
}
fn default_windows() -> usize {
    20
}
fn default_path_len() -> usize {
    10_000
}
fn default_steps() -> usize {
    1_000_000
}
fn default_every() -> usize {
    1000
}
fn default_depth() -> usize {
    DEFAULT_DEPTH
}
fn default_rank_tol() -> f64 {
    DEFAULT_RANK_TOL
}
fn default_p0() -> f64 {
    0.9
}
fn default_p1() -> f64 {
    0.2
}
fn default_eps_grid() -> Vec<f64> {
    vec![0.005, 0.01, 0.02, 0.05, 0.1]
}
fn default_kind() -> CurveKind {
    CurveKind::Delta
}
fn default_rate_window() -> RateWindow {
    RateWindow::Half
}

/// Everything a subcommand needs. Only `seed` is mandatory; `model` is
/// required by every subcommand except `perturb-sweep`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelSource>,
    pub seed: u64,
    #[serde(default = "default_n_max")]
    pub n_max: usize,
    #[serde(default = "default_n_lyap")]
    pub n_lyap: usize,
    /// Restricts `decay` and `rates`; `None` means every triple.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub triples: Option<Vec<Triple>>,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default)]
    pub method: RateMethod,
    #[serde(default = "default_kind")]
    pub kind: CurveKind,
    #[serde(default = "default_windows")]
    pub windows: usize,
    #[serde(default = "default_rate_window")]
    pub rate_window: RateWindow,
    /// Length of the path written by `simulate`.
    #[serde(default = "default_path_len")]
    pub path_len: usize,
    /// Thinning of the running-exponent CSV.
    #[serde(default = "default_every")]
    pub every: usize,
    #[serde(default = "default_rank_tol")]
    pub rank_tol: f64,
    #[serde(default = "default_p0")]
    pub p0: f64,
    #[serde(default = "default_p1")]
    pub p1: f64,
    #[serde(default = "default_eps_grid")]
    pub eps_grid: Vec<f64>,
    /// Path length per ε in `perturb-sweep`.
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_depth")]
    pub depth: usize,
    #[serde(default)]
    pub mode: SolveMode,
    /// Output directory. Never embedded, so replays may write elsewhere.
    #[serde(default, skip_serializing)]
    pub output: Option<PathBuf>,
}

impl ExperimentConfig {
    /// A config with every default and no model.
    pub fn new(seed: u64) -> Self {
        serde_json::from_value(serde_json::json!({ "seed": seed })).expect("defaults are valid")
    }

    pub fn validate(&self) -> Result<()> {
        let positive_counts = [
            ("n_max", self.n_max),
            ("n_lyap", self.n_lyap),
            ("windows", self.windows),
            ("path_len", self.path_len),
            ("every", self.every),
            ("steps", self.steps),
            ("depth", self.depth),
        ];
        for (name, v) in positive_counts {
            if v == 0 {
                return Err(Error::Schema(format!("{name}: must be positive")));
            }
        }
        for (name, v) in [("tol", self.tol), ("rank_tol", self.rank_tol), ("p0", self.p0), ("p1", self.p1)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Schema(format!("{name}: must be positive, got {v}")));
            }
        }
        if self.n_max < 2 * MIN_RATE_POINTS {
            return Err(Error::Schema(format!("n_max: must be at least {}", 2 * MIN_RATE_POINTS)));
        }
        if self.eps_grid.is_empty() {
            return Err(Error::Schema("eps_grid: must not be empty".into()));
        }
        if let Some((i, e)) = self.eps_grid.iter().enumerate().find(|(_, e)| !(e.is_finite() && **e >= 0.0)) {
            return Err(Error::Schema(format!("eps_grid[{i}]: must be non-negative, got {e}")));
        }
        if let Some(t) = &self.triples {
            if t.is_empty() {
                return Err(Error::Schema("triples: must not be empty".into()));
            }
        }
        Ok(())
    }

    /// Replaces a model path by its inline matrices.
    pub fn resolve_model(&mut self) -> Result<()> {
        if let Some(ModelSource::Path(p)) = &self.model {
            let m = read_model(p)?;
            self.model = Some(ModelSource::Inline(ModelSpec::from(&m)));
        }
        Ok(())
    }

    pub fn model(&self) -> Result<HmmModel> {
        self.model
            .as_ref()
            .ok_or_else(|| Error::Schema("model: required by this subcommand".into()))?
            .load()
    }

    /// The config as embedded in outputs: keys sorted, output path dropped.
    pub fn to_embedded(&self) -> Value {
        sort_keys(serde_json::to_value(self).expect("config serializes"))
    }
}

/// Parses a config from JSON text. A previously written JSON report is
/// accepted too, in which case its `config` member is used.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let text = text.trim_start();
    let body = match text.strip_prefix("# config: ") {
        Some(rest) => rest.lines().next().unwrap_or(""),
        None => text,
    };
    let mut value: Value = serde_json::from_str(body).map_err(|e| Error::Schema(e.to_string()))?;
    if let Value::Object(map) = &value {
        if map.len() == 2 && map.contains_key("config") && map.contains_key("result") {
            value = map["config"].clone();
        }
    }
    let cfg: ExperimentConfig = serde_json::from_value(value).map_err(|e| Error::Schema(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Reads a config file, or the config embedded in a CSV or JSON output.
pub fn load_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    parse_config(&fs::read_to_string(path)?)
}

fn sort_keys(v: Value) -> Value {
    // serde_json's default map is ordered, so a round trip sorts the keys
    match v {
        Value::Object(m) => Value::Object(m.into_iter().map(|(k, v)| (k, sort_keys(v))).collect()),
        Value::Array(a) => Value::Array(a.into_iter().map(sort_keys).collect()),
        other => other,
    }
}

#[derive(Debug, Parser)]
#[command(name = "hmm-memory", version, about = "Loss of memory of hidden Markov chains")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Positivity and rank hypotheses of the model.
    Check,
    /// A stationary sample path, as t,x,z.
    Simulate,
    /// Lyapunov spectrum and running estimates.
    Lyapunov,
    /// Conditional-difference curves along one window.
    Decay,
    /// Decay rates of the curves along one window.
    Rates,
    /// Rates on many windows against the Lyapunov gap and its lower bound.
    Verify,
    /// Exponents of the binary flip model over a grid of ε.
    PerturbSweep,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Check => "check",
            Command::Simulate => "simulate",
            Command::Lyapunov => "lyapunov",
            Command::Decay => "decay",
            Command::Rates => "rates",
            Command::Verify => "verify",
            Command::PerturbSweep => "perturb-sweep",
        }
    }
}

/// Flags that override the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// Config file, or any output written by a previous run.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Model file {"p": [[..]], "q": [[..]]}.
    #[arg(long, global = true)]
    pub model: Option<PathBuf>,
    /// Output directory; falls back to $HMM_MEMORY_OUT_DIR, then ".".
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub n_max: Option<usize>,
    #[arg(long, global = true)]
    pub n_lyap: Option<usize>,
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    /// regression or tail-max.
    #[arg(long, global = true)]
    pub method: Option<RateMethod>,
    /// Use the observation-indexed curves.
    #[arg(long, global = true)]
    pub tilde: bool,
    #[arg(long, global = true)]
    pub windows: Option<usize>,
    /// Comma-separated triples such as 1-1-2,2-1-2.
    #[arg(long, global = true, value_delimiter = ',')]
    pub triples: Option<Vec<Triple>>,
    #[arg(long, global = true)]
    pub path_len: Option<usize>,
    /// Binary chain: probability of 0 → 0.
    #[arg(long, global = true)]
    pub p0: Option<f64>,
    /// Binary chain: probability of 1 → 0.
    #[arg(long, global = true)]
    pub p1: Option<f64>,
    #[arg(long, global = true, value_delimiter = ',')]
    pub eps_grid: Option<Vec<f64>>,
    #[arg(long, global = true)]
    pub steps: Option<usize>,
    #[arg(long, global = true)]
    pub depth: Option<usize>,
    #[arg(long, global = true, value_parser = parse_mode)]
    pub mode: Option<SolveMode>,
}

fn parse_mode(s: &str) -> std::result::Result<SolveMode, String> {
    match s {
        "rigorous" => Ok(SolveMode::Rigorous),
        "empirical" => Ok(SolveMode::Empirical),
        other => Err(format!("unknown mode {other:?}, expected rigorous or empirical")),
    }
}

impl Overrides {
    /// Merges the flags over the config file (if any) into one config.
    pub fn into_config(self) -> Result<ExperimentConfig> {
        let mut cfg = match (&self.config, self.seed) {
            (Some(path), _) => load_config(path)?,
            (None, Some(seed)) => ExperimentConfig::new(seed),
            (None, None) => return Err(Error::Schema("seed: required (use --seed or a config file)".into())),
        };
        macro_rules! set {
            ($($f:ident),*) => { $(if let Some(v) = self.$f { cfg.$f = v; })* };
        }
        set!(seed, n_max, n_lyap, tol, method, windows, path_len, p0, p1, eps_grid, steps, depth, mode);
        if let Some(m) = self.model {
            cfg.model = Some(ModelSource::Path(m));
        }
        if self.tilde {
            cfg.kind = CurveKind::DeltaTilde;
        }
        if self.triples.is_some() {
            cfg.triples = self.triples;
        }
        if self.out.is_some() {
            cfg.output = self.out;
        }
        cfg.validate()?;
        cfg.resolve_model()?;
        Ok(cfg)
    }
}

/// Output directory: the config's, else `$HMM_MEMORY_OUT_DIR`, else `.`.
pub fn output_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.output
        .clone()
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."))
}

/// Result of one subcommand.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub exit_code: i32,
    pub summary: String,
    pub files: Vec<PathBuf>,
}

struct Emitter {
    dir: PathBuf,
    config: Value,
    files: Vec<PathBuf>,
}

impl Emitter {
    fn new(cfg: &ExperimentConfig) -> Result<Self> {
        let dir = output_dir(cfg);
        fs::create_dir_all(&dir)?;
        Ok(Self {
            dir,
            config: cfg.to_embedded(),
            files: Vec::new(),
        })
    }

    fn csv(&mut self, name: &str, body: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
        let path = self.dir.join(name);
        let mut w = BufWriter::new(File::create(&path)?);
        writeln!(w, "# config: {}", serde_json::to_string(&self.config)?)?;
        body(&mut w)?;
        w.flush()?;
        self.files.push(path);
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, result: &T) -> Result<()> {
        let doc = serde_json::json!({ "config": self.config, "result": serde_json::to_value(result)? });
        let path = self.dir.join(name);
        let mut text = serde_json::to_string_pretty(&sort_keys(doc))?;
        text.push('\n');
        fs::write(&path, text)?;
        self.files.push(path);
        Ok(())
    }

    fn finish(self, exit_code: i32, summary: String) -> Outcome {
        Outcome {
            exit_code,
            summary,
            files: self.files,
        }
    }
}

/// Row of `rates.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub triple: String,
    pub tau_hat: f64,
    pub method: RateMethod,
    pub window: (usize, usize),
    pub r2: Option<f64>,
    pub all_censored: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatesResult {
    pub kind: CurveKind,
    /// Estimates with the configured method.
    pub rates: Vec<RateRow>,
    /// The same curves under the other method.
    pub alternative_rates: Vec<RateRow>,
    pub skipped: Vec<String>,
    pub best_triple: Option<String>,
    pub best_tau: Option<f64>,
    /// Finite-time gap over the same fit window.
    pub matched_gap: f64,
}

impl From<&RateEstimate> for RateRow {
    fn from(r: &RateEstimate) -> Self {
        RateRow {
            triple: r.triple.to_string(),
            tau_hat: r.tau_hat,
            method: r.method,
            window: r.window,
            r2: r.r_squared,
            all_censored: r.all_censored,
        }
    }
}

fn rates_with(curves: &[DecayCurve], lo: usize, hi: usize, method: RateMethod) -> Result<(Vec<RateEstimate>, Vec<String>)> {
    let mut rates = Vec::new();
    let mut skipped = Vec::new();
    for c in curves {
        match estimate_rate(c, lo, hi, method) {
            Ok(r) => rates.push(r),
            Err(Error::InsufficientPoints { .. }) => skipped.push(c.triple.to_string()),
            Err(e) => return Err(e),
        }
    }
    Ok((rates, skipped))
}

/// Row of `perturb_sweep.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub epsilon: f64,
    pub lambda1_qr: f64,
    pub lambda2_qr: f64,
    pub lambda1_birkhoff: f64,
    pub ledet_identity_residual: f64,
    pub rate_bound: f64,
    pub best_triple_tau: f64,
}

/// The single analysis window used by `decay` and `rates`: task 1 of the
/// seed, the same as the first window of `verify`.
fn analysis_curves(model: &HmmModel, cfg: &ExperimentConfig) -> Result<(crate::simulate::ObservationWindow, Vec<DecayCurve>)> {
    let path = sample_path(model, cfg.n_max - 1, derive_seed(cfg.seed, 1))?;
    let window = past_window(&path, cfg.n_max - 1)?;
    let triples = match &cfg.triples {
        Some(t) => t.clone(),
        None => all_triples(model, cfg.kind),
    };
    let curves = match cfg.kind {
        CurveKind::Delta => delta_curve(model, &window, &triples, cfg.n_max)?,
        CurveKind::DeltaTilde => delta_tilde_curve(model, &window, &triples, cfg.n_max)?,
    };
    Ok((window, curves))
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "none".into(), |v| format!("{v:.6}"))
}

/// Runs one subcommand with a fully merged config.
pub fn execute(command: Command, cfg: &ExperimentConfig) -> Result<Outcome> {
    cfg.validate()?;
    let mut out = Emitter::new(cfg)?;
    match command {
        Command::Check => {
            let model = cfg.model()?;
            let report = check_hypotheses(&model, cfg.rank_tol);
            out.json("check.json", &report)?;
            let ok = report.h1_holds && report.h2_holds;
            let summary = format!(
                "check: h1={} h2={} det_p={:.6} R={:.6} alpha={:.6}",
                report.h1_holds, report.h2_holds, report.det_p, report.r, report.alpha
            );
            Ok(out.finish(if ok { EXIT_OK } else { EXIT_HYPOTHESIS }, summary))
        }
        Command::Simulate => {
            let model = cfg.model()?;
            let path = sample_path(&model, cfg.path_len, cfg.seed)?;
            out.csv("path.csv", |w| path.write_csv(w))?;
            Ok(out.finish(EXIT_OK, format!("simulate: {} steps written to path.csv", path.len())))
        }
        Command::Lyapunov => {
            let model = cfg.model()?;
            let path = sample_path(&model, cfg.n_lyap, derive_seed(cfg.seed, 0))?;
            let est = lyapunov_spectrum(&model, &path, model.k(), cfg.n_lyap)?;
            let traj = log_norm_trajectory(&model, &path, model.k(), cfg.n_lyap)?;
            out.csv("lyapunov.csv", |w| write_trajectory_csv(&traj, cfg.every, w))?;
            out.json("lyapunov.json", &est)?;
            let summary = format!(
                "lyapunov: lambdas={:?} gap={} sum={:.6}",
                est.lambdas,
                fmt_opt(est.gap()),
                est.sum().0
            );
            Ok(out.finish(EXIT_OK, summary))
        }
        Command::Decay => {
            let model = cfg.model()?;
            let (_, curves) = analysis_curves(&model, cfg)?;
            out.csv("decay.csv", |w| write_curves_csv(&curves, w))?;
            let censored: usize = curves.iter().map(|c| c.points.iter().filter(|p| p.censored).count()).sum();
            let summary = format!(
                "decay: {} curves of length {} ({} censored points)",
                curves.len(),
                cfg.n_max,
                censored
            );
            Ok(out.finish(EXIT_OK, summary))
        }
        Command::Rates => {
            let model = cfg.model()?;
            let (window, curves) = analysis_curves(&model, cfg)?;
            let (lo, hi) = crate::memloss::default_rate_window(cfg.n_max);
            let other = match cfg.method {
                RateMethod::Regression => RateMethod::TailMax,
                RateMethod::TailMax => RateMethod::Regression,
            };
            let (rates, skipped) = rates_with(&curves, lo, hi, cfg.method)?;
            let (alternative, _) = rates_with(&curves, lo, hi, other)?;
            let best = best_rate(&rates);
            let result = RatesResult {
                kind: cfg.kind,
                best_triple: best.map(|r| r.triple.to_string()),
                best_tau: best.map(|r| r.tau_hat),
                rates: rates.iter().map(RateRow::from).collect(),
                alternative_rates: alternative.iter().map(RateRow::from).collect(),
                skipped,
                matched_gap: matched_gap(&model, &window, lo, hi)?,
            };
            out.json("rates.json", &result)?;
            let summary = format!(
                "rates: best {} tau={} matched_gap={:.6}",
                result.best_triple.as_deref().unwrap_or("none"),
                fmt_opt(result.best_tau),
                result.matched_gap
            );
            Ok(out.finish(EXIT_OK, summary))
        }
        Command::Verify => {
            let model = cfg.model()?;
            let plan = VerifyPlan {
                seed: cfg.seed,
                n_lyap: cfg.n_lyap,
                n_max: cfg.n_max,
                windows: cfg.windows,
                tol: cfg.tol,
                method: cfg.method,
                kind: cfg.kind,
                rate_window: cfg.rate_window,
            };
            let v = run_verification(&model, &plan)?;
            out.json("verify.json", &v)?;
            let r = &v.report;
            let summary = format!(
                "verify: {} gap={:.6} bound={:.6} theorem1_violations={} theorem2_fraction={:.2}",
                if r.passed() { "PASS" } else { "FAIL" },
                r.lyap_gap,
                r.prop_lower_bound,
                r.theorem1_violations.len(),
                r.theorem2_fraction
            );
            Ok(out.finish(if r.passed() { EXIT_OK } else { EXIT_VERIFY }, summary))
        }
        Command::PerturbSweep => {
            let rows = perturb_sweep(cfg)?;
            out.csv("perturb_sweep.csv", |w| {
                writeln!(
                    w,
                    "epsilon,lambda1_qr,lambda2_qr,lambda1_birkhoff,ledet_identity_residual,rate_bound,best_triple_tau"
                )?;
                for r in &rows {
                    writeln!(
                        w,
                        "{},{},{},{},{},{},{}",
                        r.epsilon,
                        r.lambda1_qr,
                        r.lambda2_qr,
                        r.lambda1_birkhoff,
                        r.ledet_identity_residual,
                        r.rate_bound,
                        r.best_triple_tau
                    )?;
                }
                Ok(())
            })?;
            let worst = rows.iter().map(|r| r.ledet_identity_residual.abs()).fold(0.0, f64::max);
            let summary = format!(
                "perturb-sweep: {} values of epsilon, max |ledet residual| = {worst:.3e}",
                rows.len()
            );
            Ok(out.finish(EXIT_OK, summary))
        }
    }
}

/// One row per `ε` of the grid, evaluated in parallel on seed task `i`.
pub fn perturb_sweep(cfg: &ExperimentConfig) -> Result<Vec<SweepRow>> {
    cfg.eps_grid
        .par_iter()
        .enumerate()
        .map(|(i, &eps)| -> Result<SweepRow> {
            let pm = build_perturb(cfg.p0, cfg.p1, eps)?;
            if cfg.mode == SolveMode::Rigorous && eps > pm.eps0 {
                return Err(Error::OutsideValidity { epsilon: eps, eps0: pm.eps0 });
            }
            let seed = derive_seed(cfg.seed, i as u64);
            let hmm = pm.to_hmm()?;
            let path = sample_path(&hmm, cfg.steps, seed)?;
            let est = lyapunov_spectrum(&hmm, &path, 2, cfg.steps)?;
            let birk = lambda1_birkhoff(&pm, cfg.steps, cfg.depth, seed)?;
            let bound = binary_rate_bound(&pm);

            let wpath = sample_path(&hmm, cfg.n_max - 1, derive_seed(seed, 1))?;
            let window = past_window(&wpath, cfg.n_max - 1)?;
            let (_, _, rates, _) = window_rates(&hmm, &window, cfg.kind, cfg.n_max, cfg.method, RateWindow::Auto)?;
            Ok(SweepRow {
                epsilon: eps,
                lambda1_qr: est.lambdas[0],
                lambda2_qr: est.lambdas[1],
                lambda1_birkhoff: birk.mean,
                ledet_identity_residual: est.lambdas[0] + est.lambdas[1] - bound.ledet,
                rate_bound: bound.leading_term,
                best_triple_tau: best_rate(&rates).map_or(f64::NEG_INFINITY, |r| r.tau_hat),
            })
        })
        .collect()
}

/// Parses `args`, runs the subcommand and reports on stdout/stderr.
/// Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let result = cli.overrides.into_config().and_then(|cfg| execute(cli.command, &cfg));
    match result {
        Ok(o) => {
            println!("{}", o.summary);
            o.exit_code
        }
        Err(e) => {
            eprintln!("hmm-memory {}: {e}", cli.command.name());
            EXIT_USAGE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_filled() {
        let cfg = parse_config(r#"{"seed": 7, "model": {"p": [[0.9,0.1],[0.2,0.8]], "q": [[0.9,0.1],[0.1,0.9]]}}"#)
            .unwrap();
        assert_eq!(cfg.n_max, 400);
        assert_eq!(cfg.n_lyap, 1_000_000);
        assert_eq!(cfg.tol, 0.05);
        assert_eq!(cfg.method, RateMethod::Regression);
        assert_eq!(cfg.mode, SolveMode::Empirical);
        assert_eq!(cfg.depth, 40);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = parse_config(r#"{"seed": 7, "n_maks": 10}"#).unwrap_err();
        assert!(matches!(&err, Error::Schema(m) if m.contains("n_maks")), "{err}");
    }

    #[test]
    fn seed_is_mandatory() {
        let err = parse_config(r#"{"n_max": 100}"#).unwrap_err();
        assert!(matches!(&err, Error::Schema(m) if m.contains("seed")), "{err}");
    }

    #[test]
    fn non_positive_fields_rejected() {
        for bad in [r#"{"seed":1,"n_max":0}"#, r#"{"seed":1,"tol":-0.1}"#, r#"{"seed":1,"eps_grid":[]}"#] {
            assert!(matches!(parse_config(bad), Err(Error::Schema(_))), "{bad}");
        }
        assert!(parse_config(r#"{"seed":1,"mode":"sloppy"}"#).is_err());
    }

    #[test]
    fn embedded_config_round_trips() {
        let mut cfg = ExperimentConfig::new(3);
        cfg.output = Some("somewhere".into());
        cfg.triples = Some(vec![Triple(1, 2, 1)]);
        let embedded = serde_json::to_string(&cfg.to_embedded()).unwrap();
        assert!(!embedded.contains("somewhere"));
        let back = parse_config(&format!("# config: {embedded}\nn,x\n")).unwrap();
        assert_eq!(back.output, None);
        assert_eq!(back.triples, cfg.triples);
        let report = format!(r#"{{"config": {embedded}, "result": {{}}}}"#);
        assert_eq!(parse_config(&report).unwrap().seed, 3);
    }

    #[test]
    fn embedded_keys_are_sorted() {
        let v = ExperimentConfig::new(1).to_embedded();
        let keys: Vec<&String> = v.as_object().unwrap().keys().collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
    }
}
