//! Command-line front end. Every subcommand builds a [`Report`]: a JSON value,
//! a human summary, and CSV/gnuplot artifacts that land under `--out`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::doubleroot::{find_pinched_verdicts, DoubleRootError};
use crate::frontbvp::{
    detect_transition, front_decay_rate, front_spectrum, solve_front_newton, solve_pulled_front, FrontError,
    FrontOptions, FrontProfile, FrontSpeed,
};
use crate::models::{get_model, reference_values, ModelError, ModelSpec, UserModel, REGISTRY};
use crate::polymat::ComovingDispersion;
use crate::simulate::{estimate_speed, run_comoving, run_invasion, run_linear, SimConfig, SimError, SimOutput};
use crate::spreading::{linear_spreading_speed, wavenumber_predictions, SpreadingError, SpreadingOptions, SpreadingResult};
use crate::wavetrain::{self, wake_wavenumbers, WaveTrainError};

#[derive(Error, Debug)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Spreading(#[from] SpreadingError),
    #[error(transparent)]
    DoubleRoot(#[from] DoubleRootError),
    #[error(transparent)]
    Simulate(#[from] SimError),
    #[error(transparent)]
    Front(#[from] FrontError),
    #[error(transparent)]
    WaveTrain(#[from] WaveTrainError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("{failed} of {total} sweep points failed")]
    SweepIncomplete { failed: usize, total: usize },
}

impl CliError {
    /// Process exit code; one per error family.
    pub fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 2,
            CliError::Model(_) | CliError::Front(FrontError::Model(_)) => 3,
            CliError::Spreading(_) | CliError::DoubleRoot(_) | CliError::Front(FrontError::Spreading(_)) => 4,
            CliError::Simulate(_) => 5,
            CliError::Front(_) => 6,
            CliError::WaveTrain(_) => 7,
            CliError::Io(_) => 8,
            CliError::SweepIncomplete { .. } => 9,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct RootsTask {
    /// Frame speed; the linear spreading speed when absent.
    pub speed: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SpectrumTask {
    pub speed: Option<f64>,
    /// Exponential weight; η_lin when both this and `speed` are absent, else 0.
    pub eta: Option<f64>,
    pub k_max: f64,
    pub n_k: usize,
}

impl Default for SpectrumTask {
    fn default() -> Self {
        SpectrumTask { speed: None, eta: None, k_max: 4.0, n_k: 401 }
    }
}

#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum SimMode {
    #[default]
    Invasion,
    Linear,
    Comoving,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateTask {
    pub mode: SimMode,
    /// Frame speed of comoving runs; c_lin when absent.
    pub frame_speed: Option<f64>,
    pub fit_window: Option<[f64; 2]>,
    pub run: SimConfig,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct FrontTask {
    pub length: f64,
    /// Fixed speed; a free-speed solve when absent.
    pub speed: Option<f64>,
    /// Initial speed of free-speed solves; 1.1·c_lin when absent, since seeds
    /// below c_lin can converge to slow truncation artifacts.
    pub speed_guess: Option<f64>,
    /// Solve at c_lin with the far-field/core ansatz.
    pub pulled: bool,
    /// Compute the weighted point spectrum with this weight.
    pub spectrum_eta: Option<f64>,
    pub n_eigs: usize,
    pub options: FrontOptions,
}

impl Default for FrontTask {
    fn default() -> Self {
        FrontTask {
            length: 60.0,
            speed: None,
            speed_guess: None,
            pulled: false,
            spectrum_eta: None,
            n_eigs: 20,
            options: FrontOptions::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct TransitionTask {
    /// Varied parameter; the first registry parameter when absent.
    pub param: Option<String>,
    pub bracket: Option<[f64; 2]>,
    pub length: f64,
    pub options: FrontOptions,
}

impl Default for TransitionTask {
    fn default() -> Self {
        TransitionTask { param: None, bracket: None, length: 60.0, options: FrontOptions::default() }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct WavenumberTask {
    pub p: u32,
    pub q: u32,
    pub k_range: Option<[f64; 2]>,
    pub options: wavetrain::ContinuationOptions,
}

impl Default for WavenumberTask {
    fn default() -> Self {
        WavenumberTask { p: 1, q: 1, k_range: None, options: wavetrain::ContinuationOptions::default() }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SweepTask {
    pub command: Option<String>,
    /// Axes as `name=lo:hi:n` or `name=v1,v2,...`; the last axis varies fastest.
    pub grid: Vec<String>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: Option<String>,
    pub params: BTreeMap<String, f64>,
    /// Takes precedence over `model`.
    pub user_model: Option<UserModel>,
    pub out: Option<PathBuf>,
    /// Reserved for randomized multi-starts; every current solver is deterministic.
    pub seed: u64,
    pub speed: SpreadingOptions,
    pub roots: RootsTask,
    pub spectrum: SpectrumTask,
    pub simulate: SimulateTask,
    pub front: FrontTask,
    pub transition: TransitionTask,
    pub wavenumber: WavenumberTask,
    pub sweep: SweepTask,
}

impl RunConfig {
    pub fn from_toml(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }

    /// JSON when the extension is `.json`, TOML otherwise.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
            Self::from_json(&text)
        } else {
            Self::from_toml(&text)
        }
    }

    pub fn model_spec(&self) -> Result<ModelSpec> {
        if let Some(u) = &self.user_model {
            return Ok(ModelSpec::from_user(u)?);
        }
        let name = self.model.as_deref().ok_or_else(|| CliError::Usage("no model selected (--model)".into()))?;
        Ok(get_model(name, &self.params)?)
    }
}

pub struct Artifact {
    pub name: String,
    pub contents: String,
}

pub struct Report {
    pub command: String,
    pub summary: String,
    pub result: Value,
    pub artifacts: Vec<Artifact>,
}

#[derive(Parser, Debug)]
#[command(name = "frontlab", version, about = "Spreading speeds, invasion fronts and wake patterns")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Registry model name.
    #[arg(long, global = true)]
    pub model: Option<String>,
    /// Parameter override, repeatable.
    #[arg(long = "param", value_name = "NAME=VALUE", value_parser = parse_param, global = true)]
    pub params: Vec<(String, f64)>,
    /// TOML or JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory for the JSON report, artifacts and manifest.json.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Linear spreading speed from the pinched double root.
    Speed {
        #[arg(long, num_args = 2, value_names = ["LO", "HI"], allow_negative_numbers = true)]
        bracket: Option<Vec<f64>>,
    },
    /// All double roots at a given frame speed with pinching verdicts.
    Roots {
        #[arg(long)]
        speed: Option<f64>,
    },
    /// Weighted essential spectrum in a comoving frame.
    Spectrum {
        #[arg(long)]
        speed: Option<f64>,
        #[arg(long, allow_negative_numbers = true)]
        eta: Option<f64>,
        #[arg(long)]
        k_max: Option<f64>,
        #[arg(long)]
        n_k: Option<usize>,
    },
    /// Direct simulation with front tracking and speed extrapolation.
    Simulate {
        #[arg(long)]
        length: Option<f64>,
        #[arg(long)]
        n_grid: Option<usize>,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long)]
        t_end: Option<f64>,
        /// Drop the nonlinearity.
        #[arg(long, conflicts_with = "comoving")]
        linear: bool,
        /// Run in a frame moving at this speed and report the drift.
        #[arg(long, allow_negative_numbers = true)]
        comoving: Option<f64>,
    },
    /// Traveling-front boundary-value solve.
    Front {
        #[arg(long)]
        length: Option<f64>,
        /// Fixed speed instead of a free-speed solve.
        #[arg(long, conflicts_with = "pulled")]
        speed: Option<f64>,
        #[arg(long)]
        pulled: bool,
        #[arg(long)]
        spectrum_eta: Option<f64>,
    },
    /// Pushed-to-pulled transition along one parameter.
    Transition {
        /// Varied parameter.
        #[arg(long)]
        vary: Option<String>,
        #[arg(long, num_args = 2, value_names = ["LO", "HI"], allow_negative_numbers = true)]
        bracket: Option<Vec<f64>>,
        #[arg(long)]
        length: Option<f64>,
    },
    /// Wavenumber selected in the wake by p:q resonance.
    Wavenumber {
        #[arg(long)]
        p: Option<u32>,
        #[arg(long)]
        q: Option<u32>,
        #[arg(long, num_args = 2, value_names = ["LO", "HI"])]
        k_range: Option<Vec<f64>>,
    },
    /// Registry models, their parameters and reference formulas.
    Models,
    /// Another subcommand mapped over a parameter grid.
    Sweep {
        #[arg(long)]
        command: Option<String>,
        /// `name=lo:hi:n` or `name=v1,v2,...`, repeatable.
        #[arg(long)]
        grid: Vec<String>,
    },
}

fn parse_param(s: &str) -> std::result::Result<(String, f64), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected NAME=VALUE, got '{s}'"))?;
    let v: f64 = v.trim().parse().map_err(|e| format!("bad value in '{s}': {e}"))?;
    Ok((k.trim().to_string(), v))
}

fn pair(v: &[f64]) -> [f64; 2] {
    [v[0], v[1]]
}

/// Merges the config file and the flags; returns the command name.
pub fn resolve(cli: &Cli) -> Result<(String, RunConfig)> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(m) = &cli.model {
        cfg.model = Some(m.clone());
        cfg.user_model = None;
    }
    for (k, v) in &cli.params {
        cfg.params.insert(k.clone(), *v);
    }
    if cli.out.is_some() {
        cfg.out = cli.out.clone();
    }
    let name = match &cli.command {
        Command::Speed { bracket } => {
            if let Some(b) = bracket {
                cfg.speed.c_bracket = Some(pair(b));
            }
            "speed"
        }
        Command::Roots { speed } => {
            cfg.roots.speed = speed.or(cfg.roots.speed);
            "roots"
        }
        Command::Spectrum { speed, eta, k_max, n_k } => {
            let t = &mut cfg.spectrum;
            t.speed = speed.or(t.speed);
            t.eta = eta.or(t.eta);
            t.k_max = k_max.unwrap_or(t.k_max);
            t.n_k = n_k.unwrap_or(t.n_k);
            "spectrum"
        }
        Command::Simulate { length, n_grid, dt, t_end, linear, comoving } => {
            let t = &mut cfg.simulate;
            if let Some(l) = length {
                // Keep the spacing when only the length is given.
                let h = t.run.domain_length / t.run.n_grid as f64;
                t.run.domain_length = *l;
                t.run.n_grid = n_grid.unwrap_or((l / h).round() as usize);
            } else if let Some(n) = n_grid {
                t.run.n_grid = *n;
            }
            t.run.dt = dt.unwrap_or(t.run.dt);
            t.run.t_end = t_end.unwrap_or(t.run.t_end);
            if *linear {
                t.mode = SimMode::Linear;
            }
            if let Some(c0) = comoving {
                t.mode = SimMode::Comoving;
                t.frame_speed = Some(*c0);
            }
            "simulate"
        }
        Command::Front { length, speed, pulled, spectrum_eta } => {
            let t = &mut cfg.front;
            t.length = length.unwrap_or(t.length);
            t.speed = speed.or(t.speed);
            t.pulled |= *pulled;
            t.spectrum_eta = spectrum_eta.or(t.spectrum_eta);
            "front"
        }
        Command::Transition { vary, bracket, length } => {
            let t = &mut cfg.transition;
            if vary.is_some() {
                t.param = vary.clone();
            }
            if let Some(b) = bracket {
                t.bracket = Some(pair(b));
            }
            t.length = length.unwrap_or(t.length);
            "transition"
        }
        Command::Wavenumber { p, q, k_range } => {
            let t = &mut cfg.wavenumber;
            t.p = p.unwrap_or(t.p);
            t.q = q.unwrap_or(t.q);
            if let Some(r) = k_range {
                t.k_range = Some(pair(r));
            }
            "wavenumber"
        }
        Command::Models => "models",
        Command::Sweep { command, grid } => {
            if command.is_some() {
                cfg.sweep.command = command.clone();
            }
            if !grid.is_empty() {
                cfg.sweep.grid = grid.clone();
            }
            "sweep"
        }
    };
    Ok((name.to_string(), cfg))
}

/// Runs one subcommand on a resolved config.
pub fn execute(command: &str, cfg: &RunConfig) -> Result<Report> {
    match command {
        "speed" => cmd_speed(cfg),
        "roots" => cmd_roots(cfg),
        "spectrum" => cmd_spectrum(cfg),
        "simulate" => cmd_simulate(cfg),
        "front" => cmd_front(cfg),
        "transition" => cmd_transition(cfg),
        "wavenumber" => cmd_wavenumber(cfg),
        "models" => cmd_models(),
        "sweep" => cmd_sweep(cfg),
        other => Err(CliError::Usage(format!("unknown command '{other}'"))),
    }
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("report types serialize")
}

fn csv_text(header: &[String], rows: &[Vec<String>]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
}

fn numeric_csv(header: &[&str], rows: impl IntoIterator<Item = Vec<f64>>) -> String {
    let header: Vec<String> = header.iter().map(|s| s.to_string()).collect();
    let rows: Vec<Vec<String>> = rows.into_iter().map(|r| r.iter().map(|v| v.to_string()).collect()).collect();
    csv_text(&header, &rows)
}

fn gnuplot(data: &str, xlabel: &str, ylabel: &str, plots: &[(usize, usize, &str)]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "set datafile separator ','");
    let _ = writeln!(s, "set xlabel '{xlabel}'");
    let _ = writeln!(s, "set ylabel '{ylabel}'");
    let clauses: Vec<String> = plots
        .iter()
        .map(|(x, y, title)| format!("'{data}' every ::1 using {x}:{y} with lines title '{title}'"))
        .collect();
    let _ = writeln!(s, "plot {}", clauses.join(", \\\n     "));
    s
}

fn artifact(name: &str, contents: String) -> Artifact {
    Artifact { name: name.to_string(), contents }
}

fn component_names(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|j| format!("{prefix}{j}")).collect()
}

fn profile_csv(x: &[f64], u: &[Vec<f64>], xname: &str) -> String {
    let mut header = vec![xname.to_string()];
    header.extend(component_names("u", u.len()));
    let rows: Vec<Vec<String>> = (0..x.len())
        .map(|i| std::iter::once(x[i]).chain(u.iter().map(|c| c[i])).map(|v| v.to_string()).collect())
        .collect();
    csv_text(&header, &rows)
}

fn profile_plot(data: &str, xname: &str, n: usize) -> String {
    let titles = component_names("u", n);
    let plots: Vec<(usize, usize, &str)> = titles.iter().enumerate().map(|(j, t)| (1, j + 2, t.as_str())).collect();
    gnuplot(data, xname, "u", &plots)
}

fn spreading(cfg: &RunConfig, model: &ModelSpec) -> Result<SpreadingResult> {
    Ok(linear_spreading_speed(&model.symbol, &cfg.speed)?)
}

pub fn cmd_speed(cfg: &RunConfig) -> Result<Report> {
    let model = cfg.model_spec()?;
    let sr = spreading(cfg, &model)?;
    let pred = wavenumber_predictions(&sr);
    let refs = reference_values(&model).unwrap_or_default();
    let mut summary = String::new();
    let _ = writeln!(summary, "model      {}", model.name);
    let _ = writeln!(summary, "c_lin      {:.10}", sr.c_lin);
    let _ = writeln!(summary, "omega_lin  {:.10}", sr.omega_lin);
    let _ = writeln!(summary, "nu_lin     {:.10} {:+.10}i", sr.nu_lin.re, sr.nu_lin.im);
    let _ = writeln!(summary, "eta_lin    {:.10}", sr.eta_lin);
    let _ = writeln!(summary, "k_lin      {:.10}", pred.k_lin);
    let _ = writeln!(summary, "k_node     {:.10}", pred.k_node);
    match sr.d_eff {
        Some(d) => {
            let _ = writeln!(summary, "d_eff      {:.10} {:+.10}i", d.re, d.im);
        }
        None => {
            let _ = writeln!(summary, "d_eff      undefined ({:?} source root)", sr.source_root.classification);
        }
    }
    if sr.cross_block_root {
        let _ = writeln!(summary, "note       source root couples uncoupled blocks {:?}", sr.block_speeds);
    }
    Ok(Report {
        command: "speed".into(),
        summary,
        result: json!({ "model": model.name, "params": model.params, "spreading": to_value(&sr),
                        "predictions": to_value(&pred), "references": to_value(&refs) }),
        artifacts: Vec::new(),
    })
}

pub fn cmd_roots(cfg: &RunConfig) -> Result<Report> {
    let model = cfg.model_spec()?;
    let c = match cfg.roots.speed {
        Some(c) => c,
        None => spreading(cfg, &model)?.c_lin,
    };
    let dr = ComovingDispersion::new(model.symbol.clone(), c);
    let roots = find_pinched_verdicts(&dr, &cfg.speed.tol, &cfg.speed.pinch)?;
    let mut summary = format!("{} double roots at c = {c:.10}\n", roots.len());
    let header: Vec<String> = ["lambda_re", "lambda_im", "nu_re", "nu_im", "classification", "pinched", "multiplicity"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let mut rows = Vec::new();
    for r in &roots {
        let verdict = match &r.pinched {
            crate::doubleroot::Pinching::Undetermined(_) => "Undetermined".to_string(),
            p => format!("{p:?}"),
        };
        let _ = writeln!(
            summary,
            "  lambda {:+.8} {:+.8}i  nu {:+.8} {:+.8}i  {:?} {}",
            r.lambda.re, r.lambda.im, r.nu.re, r.nu.im, r.classification, verdict
        );
        rows.push(vec![
            r.lambda.re.to_string(),
            r.lambda.im.to_string(),
            r.nu.re.to_string(),
            r.nu.im.to_string(),
            format!("{:?}", r.classification),
            verdict,
            r.multiplicity.to_string(),
        ]);
    }
    Ok(Report {
        command: "roots".into(),
        summary,
        result: json!({ "model": model.name, "params": model.params, "speed": c, "roots": to_value(&roots) }),
        artifacts: vec![artifact("roots.csv", csv_text(&header, &rows))],
    })
}

pub fn cmd_spectrum(cfg: &RunConfig) -> Result<Report> {
    let model = cfg.model_spec()?;
    let t = &cfg.spectrum;
    let (c, eta) = match (t.speed, t.eta) {
        (Some(c), e) => (c, e.unwrap_or(0.0)),
        (None, e) => {
            let sr = spreading(cfg, &model)?;
            (sr.c_lin, e.unwrap_or(sr.eta_lin))
        }
    };
    if t.n_k < 2 || !(t.k_max > 0.0) {
        return Err(CliError::Usage("spectrum needs n_k >= 2 and k_max > 0".into()));
    }
    let ks: Vec<f64> = (0..t.n_k).map(|i| -t.k_max + 2.0 * t.k_max * i as f64 / (t.n_k - 1) as f64).collect();
    let curve = ComovingDispersion::new(model.symbol.clone(), c).essential_spectrum(eta, &ks);
    let n = model.dim();
    let mut header = vec!["k"];
    let names: Vec<String> = (0..n).flat_map(|j| [format!("re{j}"), format!("im{j}")]).collect();
    header.extend(names.iter().map(|s| s.as_str()));
    let rows = curve.samples.iter().map(|s| {
        std::iter::once(s.k).chain(s.lambdas.iter().flat_map(|l| [l.re, l.im])).collect::<Vec<f64>>()
    });
    let titles = component_names("branch ", n);
    let plots: Vec<(usize, usize, &str)> =
        (0..n).map(|j| (2 * j + 2, 2 * j + 3, titles[j].as_str())).collect();
    let summary = format!("weighted spectrum at c = {c:.10}, eta = {eta:.10}: max Re = {:.6e}\n", curve.max_re);
    Ok(Report {
        command: "spectrum".into(),
        summary,
        result: json!({ "model": model.name, "params": model.params, "speed": c, "weight_eta": eta,
                        "max_re": curve.max_re }),
        artifacts: vec![
            artifact("spectrum.csv", numeric_csv(&header, rows)),
            artifact("spectrum.gp", gnuplot("spectrum.csv", "Re lambda", "Im lambda", &plots)),
        ],
    })
}

fn track_artifacts(out: &SimOutput, arts: &mut Vec<Artifact>) {
    let n = out.state.len();
    let rows = out.track.samples.iter().map(|s| vec![s.t, s.x]);
    arts.push(artifact("track.csv", numeric_csv(&["t", "x"], rows)));
    arts.push(artifact("track.gp", gnuplot("track.csv", "t", "front position", &[(1, 2, "x")])));
    arts.push(artifact("final.csv", profile_csv(&out.x, &out.state, "x")));
    arts.push(artifact("final.gp", profile_plot("final.csv", "x", n)));
    for (i, s) in out.snapshots.iter().enumerate() {
        let name = format!("snapshot_{i:03}.csv");
        arts.push(artifact(&name, profile_csv(&out.x, &s.u, "x")));
    }
}

pub fn cmd_simulate(cfg: &RunConfig) -> Result<Report> {
    let model = cfg.model_spec()?;
    let t = &cfg.simulate;
    // The prediction is optional: stable or degenerate symbols still simulate.
    let predicted = spreading(cfg, &model).ok();
    let mut arts = Vec::new();
    let mut summary = String::new();
    let result = match t.mode {
        SimMode::Invasion | SimMode::Linear => {
            let out = if t.mode == SimMode::Linear { run_linear(&model, &t.run)? } else { run_invasion(&model, &t.run)? };
            let est = estimate_speed(&out.track, t.fit_window)?;
            let rows = est.c_raw.iter().map(|s| vec![s.t, s.x]);
            arts.push(artifact("speed.csv", numeric_csv(&["t", "c_raw"], rows)));
            arts.push(artifact("speed.gp", gnuplot("speed.csv", "t", "speed", &[(1, 2, "c_raw")])));
            track_artifacts(&out, &mut arts);
            let _ = writeln!(summary, "c_ext      {:.8}", est.c_ext);
            let _ = writeln!(summary, "kappa_log  {:.6}", est.kappa_log);
            let _ = writeln!(summary, "c_raw_max  {:.8}", est.c_raw_max);
            let _ = writeln!(summary, "window     [{:.3}, {:.3}]", est.window[0], est.window[1]);
            if let Some(sr) = &predicted {
                let _ = writeln!(summary, "c_lin      {:.8} (c_ext - c_lin = {:+.3e})", sr.c_lin, est.c_ext - sr.c_lin);
            }
            let sens: Vec<Value> = out
                .sensitivity
                .iter()
                .map(|tr| match estimate_speed(tr, t.fit_window) {
                    Ok(e) => json!({ "delta": tr.delta, "c_ext": e.c_ext, "kappa_log": e.kappa_log }),
                    Err(err) => json!({ "delta": tr.delta, "error": err.to_string() }),
                })
                .collect();
            json!({ "estimate": to_value(&est), "threshold": out.track.delta, "t_final": out.t_final,
                    "sensitivity": sens })
        }
        SimMode::Comoving => {
            let c0 = match (t.frame_speed, &predicted) {
                (Some(c), _) => c,
                (None, Some(sr)) => sr.c_lin,
                (None, None) => return Err(CliError::Usage("comoving runs need a frame speed".into())),
            };
            let res = run_comoving(&model, c0, &t.run)?;
            let rows = res.positions.iter().map(|s| vec![s.t, s.x]);
            arts.push(artifact("track.csv", numeric_csv(&["t", "x"], rows)));
            arts.push(artifact("track.gp", gnuplot("track.csv", "t", "front position", &[(1, 2, "x")])));
            arts.push(artifact("final.csv", profile_csv(&res.x, &res.profile, "x")));
            arts.push(artifact("final.gp", profile_plot("final.csv", "x", res.profile.len())));
            let _ = writeln!(summary, "frame c0   {c0:.8}");
            let _ = writeln!(summary, "drift      {:+.6}", res.drift);
            let _ = writeln!(summary, "c estimate {:.8}", c0 + res.drift);
            if let Some(sr) = &predicted {
                let _ = writeln!(summary, "c_lin      {:.8}", sr.c_lin);
            }
            json!({ "c0": res.c0, "drift": res.drift, "speed": res.c0 + res.drift })
        }
    };
    Ok(Report {
        command: "simulate".into(),
        summary,
        result: json!({ "model": model.name, "params": model.params, "mode": to_value(&t.mode),
                        "c_lin": predicted.as_ref().map(|s| s.c_lin), "run": result }),
        artifacts: arts,
    })
}

fn front_artifacts(p: &FrontProfile, arts: &mut Vec<Artifact>) {
    arts.push(artifact("profile.csv", profile_csv(&p.xi, &p.u, "xi")));
    arts.push(artifact("profile.gp", profile_plot("profile.csv", "xi", p.u.len())));
}

pub fn cmd_front(cfg: &RunConfig) -> Result<Report> {
    let model = cfg.model_spec()?;
    let t = &cfg.front;
    let mut summary = String::new();
    let mut arts = Vec::new();
    let mut result = json!({ "model": model.name, "params": model.params, "length": t.length });
    let profile = if t.pulled {
        let sr = spreading(cfg, &model)?;
        let (p, d) = solve_pulled_front(&model, sr.c_lin, sr.eta_lin, t.length, None, &t.options)?;
        let verdict = if d.a > 0.0 { "pulled" } else { "pushed" };
        let _ = writeln!(summary, "c_lin      {:.10}", sr.c_lin);
        let _ = writeln!(summary, "a, b       {:+.6e}, {:+.6e} ({verdict})", d.a, d.b);
        let core: Vec<Vec<f64>> = d.core.clone();
        arts.push(artifact("core.csv", profile_csv(&p.xi, &core, "xi")));
        result["decomposition"] = to_value(&json!({ "a": d.a, "b": d.b, "eta_lin": d.eta_lin, "cut": d.cut,
                                                   "core_decay_rate": d.core_decay_rate, "verdict": verdict }));
        p
    } else {
        let speed = match t.speed {
            Some(c) => FrontSpeed::Fixed(c),
            None => FrontSpeed::Free(match t.speed_guess {
                Some(c) => c,
                None => spreading(cfg, &model).map(|s| 1.1 * s.c_lin).unwrap_or(1.0),
            }),
        };
        solve_front_newton(&model, t.length, speed, None, &t.options)?
    };
    let _ = writeln!(summary, "c          {:.10}", profile.c);
    let _ = writeln!(summary, "residual   {:.3e} after {} iterations", profile.residual, profile.iterations);
    result["c"] = json!(profile.c);
    result["residual"] = json!(profile.residual);
    result["iterations"] = json!(profile.iterations);
    result["boundary_value"] = json!(profile.boundary_value);
    match front_decay_rate(&model, &profile) {
        Ok(fit) => {
            let _ = writeln!(summary, "nu_tail    {:+.8} {:+.8}i ({:?})", fit.nu_tail.re, fit.nu_tail.im, fit.steepness);
            result["tail"] = to_value(&fit);
        }
        Err(e) => {
            let _ = writeln!(summary, "tail fit   unavailable: {e}");
            result["tail"] = Value::Null;
        }
    }
    if let Some(eta) = t.spectrum_eta {
        let sp = front_spectrum(&model, &profile, eta, t.n_eigs)?;
        let _ = writeln!(summary, "leading    {:+.8} {:+.8}i", sp.leading.re, sp.leading.im);
        let _ = writeln!(summary, "near zero  {:+.3e} (overlap with u' {:.7})", sp.nearest_zero.re, sp.translation_overlap);
        let rows = sp.eigenvalues.iter().map(|l| vec![l.re, l.im]);
        arts.push(artifact("eigenvalues.csv", numeric_csv(&["re", "im"], rows)));
        result["spectrum"] = to_value(&sp);
    }
    front_artifacts(&profile, &mut arts);
    Ok(Report { command: "front".into(), summary, result, artifacts: arts })
}

pub fn cmd_transition(cfg: &RunConfig) -> Result<Report> {
    let name = cfg
        .model
        .as_deref()
        .ok_or_else(|| CliError::Usage("transition needs a registry model (--model)".into()))?;
    let info = REGISTRY.iter().find(|m| m.name == name).ok_or_else(|| ModelError::UnknownModel(name.into()))?;
    let t = &cfg.transition;
    let param = match &t.param {
        Some(p) => p.clone(),
        None => info.params.first().map(|p| p.name.to_string()).ok_or_else(|| CliError::Usage("model has no parameters".into()))?,
    };
    let bracket = t.bracket.ok_or_else(|| CliError::Usage("transition needs --bracket LO HI".into()))?;
    let tr = detect_transition(name, &cfg.params, &param, bracket, t.length, &t.options)?;
    let mut summary = String::new();
    let _ = writeln!(summary, "{param}_*   {:.8}", tr.mu);
    let _ = writeln!(summary, "c          {:.8}", tr.c);
    let _ = writeln!(summary, "eta_lin    {:.8}", tr.eta);
    let _ = writeln!(summary, "solves     {}", tr.evaluations);
    let mut arts = Vec::new();
    front_artifacts(&tr.profile, &mut arts);
    Ok(Report {
        command: "transition".into(),
        summary,
        result: json!({ "model": name, "params": cfg.params, "param": param, "bracket": bracket,
                        "mu": tr.mu, "c": tr.c, "eta": tr.eta, "a_final": tr.decomposition.a,
                        "evaluations": tr.evaluations }),
        artifacts: arts,
    })
}

pub fn cmd_wavenumber(cfg: &RunConfig) -> Result<Report> {
    let model = cfg.model_spec()?;
    let t = &cfg.wavenumber;
    let sr = spreading(cfg, &model)?;
    let pred = wavenumber_predictions(&sr);
    let (curve, sols) = wake_wavenumbers(&model, &sr, t.p, t.q, t.k_range, &t.options)?;
    let mut summary = String::new();
    let _ = writeln!(summary, "c_lin      {:.10}  omega_lin {:.10}", sr.c_lin, sr.omega_lin);
    let _ = writeln!(summary, "k_lin      {:.10}  k_node {:.10}", pred.k_lin, pred.k_node);
    for s in &sols {
        let _ = writeln!(
            summary,
            "k          {:.10}  omega {:+.8}  comoving c_g {:+.6}{}",
            s.k,
            s.omega_nl,
            s.comoving_group_velocity,
            if s.admissible { "  selected" } else { "" }
        );
    }
    let rows = curve.samples.iter().map(|s| vec![s.k, s.omega, s.group_velocity]);
    let selected = sols.iter().find(|s| s.admissible).map(|s| s.k);
    Ok(Report {
        command: "wavenumber".into(),
        summary,
        result: json!({ "model": model.name, "params": model.params, "c_lin": sr.c_lin, "omega_lin": sr.omega_lin,
                        "predictions": to_value(&pred), "selected_k": selected, "solutions": to_value(&sols) }),
        artifacts: vec![
            artifact("dispersion.csv", numeric_csv(&["k", "omega", "group_velocity"], rows)),
            artifact("dispersion.gp", gnuplot("dispersion.csv", "k", "omega", &[(1, 2, "omega")])),
        ],
    })
}

pub fn cmd_models() -> Result<Report> {
    let mut summary = String::new();
    let mut list = Vec::new();
    for info in REGISTRY.iter() {
        let _ = writeln!(summary, "{}: {}", info.name, info.doc);
        for p in info.params {
            let _ = writeln!(summary, "    {:<8} = {:<8} {}", p.name, p.default, p.doc);
        }
        let refs = get_model(info.name, &BTreeMap::new()).map_err(CliError::from).and_then(|m| Ok(reference_values(&m)?));
        let refs_json = match &refs {
            Ok(r) => {
                for x in r {
                    let _ = writeln!(summary, "    ref {} = {} [{}]", x.quantity, x.value, x.formula);
                }
                to_value(r)
            }
            Err(e) => {
                let _ = writeln!(summary, "    ref unavailable: {e}");
                json!({ "error": e.to_string() })
            }
        };
        let params: Vec<Value> =
            info.params.iter().map(|p| json!({ "name": p.name, "default": p.default, "doc": p.doc })).collect();
        list.push(json!({ "name": info.name, "doc": info.doc, "params": params, "references": refs_json }));
    }
    Ok(Report { command: "models".into(), summary, result: Value::Array(list), artifacts: Vec::new() })
}

/// One sweep axis: `name=lo:hi:n` (inclusive, evenly spaced) or `name=v1,v2,...`.
pub fn parse_axis(s: &str) -> Result<(String, Vec<f64>)> {
    let bad = || CliError::Usage(format!("bad grid axis '{s}'"));
    let (name, spec) = s.split_once('=').ok_or_else(bad)?;
    let num = |t: &str| t.trim().parse::<f64>().map_err(|_| bad());
    let values = if spec.contains(':') {
        let parts: Vec<&str> = spec.split(':').collect();
        if parts.len() != 3 {
            return Err(bad());
        }
        let (lo, hi) = (num(parts[0])?, num(parts[1])?);
        let n: usize = parts[2].trim().parse().map_err(|_| bad())?;
        match n {
            0 => return Err(bad()),
            1 => vec![lo],
            _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
        }
    } else {
        spec.split(',').map(num).collect::<Result<Vec<f64>>>()?
    };
    Ok((name.trim().to_string(), values))
}

/// Cartesian product in row-major order (last axis fastest).
fn grid_points(axes: &[(String, Vec<f64>)]) -> Vec<Vec<f64>> {
    axes.iter().fold(vec![Vec::new()], |acc, (_, vals)| {
        acc.iter().flat_map(|p| vals.iter().map(move |v| [p.clone(), vec![*v]].concat())).collect()
    })
}

/// Scalar leaves of a JSON value with dotted keys; short numeric arrays
/// (complex numbers, brackets) become indexed columns, long arrays are dropped.
fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
    let key = |k: &str| if prefix.is_empty() { k.to_string() } else { format!("{prefix}.{k}") };
    match v {
        Value::Object(m) => m.iter().for_each(|(k, x)| flatten(&key(k), x, out)),
        Value::Array(a) if a.len() <= 4 && a.iter().all(|x| x.is_number()) => {
            a.iter().enumerate().for_each(|(i, x)| out.push((key(&i.to_string()), x.to_string())))
        }
        Value::Array(_) => {}
        Value::Null => out.push((prefix.to_string(), String::new())),
        Value::String(s) => out.push((prefix.to_string(), s.clone())),
        x => out.push((prefix.to_string(), x.to_string())),
    }
}

fn thread_count() -> usize {
    std::env::var("FRONTLAB_THREADS")
        .ok()
        .and_then(|s| s.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

pub fn cmd_sweep(cfg: &RunConfig) -> Result<Report> {
    let command = cfg.sweep.command.as_deref().ok_or_else(|| CliError::Usage("sweep needs --command".into()))?;
    if matches!(command, "sweep" | "models") {
        return Err(CliError::Usage(format!("cannot sweep '{command}'")));
    }
    if cfg.sweep.grid.is_empty() {
        return Err(CliError::Usage("sweep needs at least one --grid axis".into()));
    }
    let axes = cfg.sweep.grid.iter().map(|s| parse_axis(s)).collect::<Result<Vec<_>>>()?;
    let points = grid_points(&axes);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(thread_count())
        .build()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let runs: Vec<std::result::Result<Value, String>> = pool.install(|| {
        points
            .par_iter()
            .map(|p| {
                let mut sub = cfg.clone();
                for ((name, _), v) in axes.iter().zip(p) {
                    sub.params.insert(name.clone(), *v);
                }
                log::info!("sweep point {p:?}");
                execute(command, &sub).map(|r| r.result).map_err(|e| e.to_string())
            })
            .collect()
    });

    // Columns in order of first appearance, so the layout depends only on grid order.
    let mut columns: Vec<String> = axes.iter().map(|(n, _)| n.clone()).collect();
    let mut rows: Vec<BTreeMap<String, String>> = Vec::new();
    let mut records = Vec::new();
    let mut failed = 0;
    for (p, run) in points.iter().zip(&runs) {
        let mut row: BTreeMap<String, String> = axes.iter().zip(p).map(|((n, _), v)| (n.clone(), v.to_string())).collect();
        let mut leaves = Vec::new();
        match run {
            Ok(v) => flatten("", v, &mut leaves),
            Err(e) => {
                failed += 1;
                leaves.push(("error".to_string(), e.clone()));
            }
        }
        for (k, v) in leaves {
            if row.contains_key(&k) {
                continue;
            }
            if !columns.contains(&k) {
                columns.push(k.clone());
            }
            row.insert(k, v);
        }
        rows.push(row);
        let params: BTreeMap<&str, f64> = axes.iter().zip(p).map(|((n, _), v)| (n.as_str(), *v)).collect();
        records.push(match run {
            Ok(v) => json!({ "point": params, "result": v }),
            Err(e) => json!({ "point": params, "error": e }),
        });
    }
    let table: Vec<Vec<String>> =
        rows.iter().map(|r| columns.iter().map(|c| r.get(c).cloned().unwrap_or_default()).collect()).collect();
    let summary = format!("{command} over {} grid points ({failed} failed); columns: {}\n", points.len(), columns.len());
    let report = Report {
        command: "sweep".into(),
        summary,
        result: json!({ "command": command, "axes": to_value(&axes), "points": records }),
        artifacts: vec![artifact("sweep.csv", csv_text(&columns, &table))],
    };
    if failed > 0 {
        log::warn!("{failed} of {} sweep points failed", points.len());
    }
    Ok(report)
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    artifacts: Vec<&'a str>,
    config: &'a RunConfig,
}

/// Writes `result.json`, the artifacts and `manifest.json` into `dir`.
pub fn write_outputs(dir: &Path, report: &Report, cfg: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let result = serde_json::to_string_pretty(&report.result).expect("json values serialize");
    std::fs::write(dir.join("result.json"), result + "\n")?;
    std::fs::write(dir.join("summary.txt"), &report.summary)?;
    let mut names = vec!["result.json", "summary.txt"];
    for a in &report.artifacts {
        std::fs::write(dir.join(&a.name), &a.contents)?;
        names.push(&a.name);
    }
    let manifest = Manifest { command: &report.command, artifacts: names, config: cfg };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(dir.join("manifest.json"), text + "\n")?;
    Ok(())
}

fn run_cli(cli: &Cli) -> Result<()> {
    let (command, cfg) = resolve(cli)?;
    let report = execute(&command, &cfg)?;
    // A closed stdout (e.g. piped into `head`) is not an error of the run.
    let mut stdout = std::io::stdout().lock();
    let _ = stdout.write_all(report.summary.as_bytes());
    match &cfg.out {
        Some(dir) => write_outputs(dir, &report, &cfg)?,
        None => {
            let text = serde_json::to_string_pretty(&report.result).expect("json values serialize");
            let _ = writeln!(stdout, "{text}");
        }
    }
    if command == "sweep" {
        let failed = report.result["points"].as_array().map_or(0, |p| p.iter().filter(|x| x.get("error").is_some()).count());
        let total = report.result["points"].as_array().map_or(0, |p| p.len());
        if failed > 0 {
            return Err(CliError::SweepIncomplete { failed, total });
        }
    }
    Ok(())
}

/// Entry point of the binary; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run_cli(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.code()
        }
    }
}
