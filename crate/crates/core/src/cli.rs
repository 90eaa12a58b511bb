//! Batch harness: TOML experiment configs, initial-data presets, and the drivers
//! that write the columnar outputs, the fit report and the summary.

use std::f64::consts::PI;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::analysis::{expected_exponent, fit_decay, write_report, DecayFit, RateKind, Regime, ReportRow};
use crate::dynbc_heat::{self, DynBCParams, ScalarModeState};
use crate::error::{Error, Result};
use crate::fields::{added_mass_pairing, field_norm, read_decomposition, ModeDecomposition};
use crate::navier_stokes::{
    algebraic_tail_data, evolve_ns, kato_solve, kinetic_energy, step_ns, NonlinearConfig, NsMode, NsStepper,
};
use crate::output::{p_label, sci};
use crate::radial_grid::{build_grid, PhysicalParams, RadialGrid};
use crate::stokes::{
    asymptotic_momenta, evolve_sampled, geometric_times, init_stokes, step_stokes, StokesSeries, SAMPLE_RATIO,
};

/// Environment variable read by the binary to size the worker pool.
pub const THREADS_ENV: &str = "DISKFLOW_THREADS";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    EvolveStokes,
    EvolveNs,
    Kato,
    FitDecay,
    CompareAsymptotic,
    ModeHeat,
}

impl ExperimentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::EvolveStokes => "evolve-stokes",
            ExperimentKind::EvolveNs => "evolve-ns",
            ExperimentKind::Kato => "kato",
            ExperimentKind::FitDecay => "fit-decay",
            ExperimentKind::CompareAsymptotic => "compare-asymptotic",
            ExperimentKind::ModeHeat => "mode-heat",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhysicalSection {
    pub nu: f64,
    /// Disk mass; the preset supplies it when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m: Option<f64>,
    pub homogeneous: bool,
    /// Moment of inertia, only for `homogeneous = false`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inertia: Option<f64>,
}

impl Default for PhysicalSection {
    fn default() -> Self {
        Self { nu: 1.0, m: None, homogeneous: true, inertia: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    pub n_points: usize,
    pub r_max: f64,
    pub stretch: f64,
}

impl Default for GridSection {
    fn default() -> Self {
        Self { n_points: 2048, r_max: 120.0, stretch: 3.0 }
    }
}

/// Step size at time `t` is `clamp(growth·t, dt, dt_max)`; output times are
/// `t_first·ratio^j` up to `t_end`, plus the fit-window endpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimeSection {
    pub dt: f64,
    pub growth: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt_max: Option<f64>,
    pub t_end: f64,
    pub t_first: f64,
    pub ratio: f64,
}

impl Default for TimeSection {
    fn default() -> Self {
        Self { dt: 0.02, growth: 0.02, dt_max: None, t_end: 100.0, t_first: 1.0, ratio: SAMPLE_RATIO }
    }
}

impl TimeSection {
    pub fn dt_at(&self, t: f64) -> f64 {
        (self.growth * t).max(self.dt).min(self.dt_max.unwrap_or(f64::INFINITY))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectralSection {
    pub k_max: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_theta: Option<usize>,
    pub dealias: bool,
}

impl Default for SpectralSection {
    fn default() -> Self {
        Self { k_max: 4, n_theta: None, dealias: true }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitialDataSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    /// Field file in the decomposition format; its `r` column replaces the `[grid]` section.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub amplitude: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub kind: ExperimentKind,
    #[serde(default = "default_window")]
    pub window: [f64; 2],
    /// Evaluate the built-in checks and exit with status 2 when one fails.
    #[serde(default)]
    pub check: bool,
}

fn default_window() -> [f64; 2] {
    [10.0, 100.0]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NormsSection {
    pub p: Vec<f64>,
}

impl Default for NormsSection {
    fn default() -> Self {
        Self { p: vec![2.0] }
    }
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub physical: PhysicalSection,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub time: TimeSection,
    #[serde(default)]
    pub spectral: SpectralSection,
    pub initial_data: InitialDataSection,
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub norms: NormsSection,
}

/// Shipped initial data. Heat presets feed `mode-heat`, field presets everything else.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Preset {
    pub name: &'static str,
    pub summary: &'static str,
    pub heat: bool,
    pub field: bool,
    /// Default disk mass in units of π.
    pub m_over_pi: f64,
    pub amplitude: f64,
    pub sigma: f64,
    pub q: Option<f64>,
    pub min_k_max: usize,
}

pub const PRESETS: [Preset; 7] = [
    Preset {
        name: "unit-kick-k0",
        summary: "k=0 boundary system with l = 1 and a quiescent fluid",
        heat: true,
        field: false,
        m_over_pi: 2.0,
        amplitude: 1.0,
        sigma: 1.0,
        q: None,
        min_k_max: 1,
    },
    Preset {
        name: "w-bump-k1",
        summary: "swirl bump W = A r exp(-((r-1)/sigma)^2), also usable as k=1 heat data",
        heat: true,
        field: true,
        m_over_pi: 2.0,
        amplitude: 1.0,
        sigma: 1.0,
        q: None,
        min_k_max: 1,
    },
    Preset {
        name: "translating-disk",
        summary: "mode-1 bump Phi = -A r exp(-((r-1)/sigma)^2), disk moving along x",
        heat: false,
        field: true,
        m_over_pi: 2.0,
        amplitude: 1.0,
        sigma: 0.3,
        q: None,
        min_k_max: 1,
    },
    Preset {
        name: "neutral-buoyancy",
        summary: "translating-disk data with m = pi (zero total momentum)",
        heat: false,
        field: true,
        m_over_pi: 1.0,
        amplitude: 1.0,
        sigma: 0.3,
        q: None,
        min_k_max: 1,
    },
    Preset {
        name: "higher-modes-only",
        summary: "cos 2theta and cos 3theta stream bumps A (r-1)^2 exp(-((r-1)/sigma)^2)",
        heat: false,
        field: true,
        m_over_pi: 2.0,
        amplitude: 1.0,
        sigma: 1.0,
        q: None,
        min_k_max: 3,
    },
    Preset {
        name: "ns-small-q32",
        summary: "mode-2 data with velocity ~ r^(-2/q) far away, q = 3/2",
        heat: false,
        field: true,
        m_over_pi: 2.0,
        amplitude: 0.025,
        sigma: 1.0,
        q: Some(1.5),
        min_k_max: 2,
    },
    Preset {
        name: "kato-small",
        summary: "small compact data in modes 0, 1 and 2 for the fixed-point iteration",
        heat: false,
        field: true,
        m_over_pi: 2.0,
        amplitude: 1e-2,
        sigma: 0.3,
        q: None,
        min_k_max: 2,
    },
];

pub fn find_preset(name: &str) -> Result<&'static Preset> {
    PRESETS.iter().find(|p| p.name == name).ok_or_else(|| Error::PresetUnknown(name.to_string()))
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Parses a config; the error names the offending key.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let de = toml::Deserializer::parse(text).map_err(|e| Error::Config {
        key: e.span().map(|s| format!("line {}", line_of(text, s.start))).unwrap_or_else(|| "<document>".into()),
        msg: one_line(e.message()),
    })?;
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Error::Config { key: if path == "." { "<document>".into() } else { path }, msg: one_line(e.inner().message()) }
    })
}

fn cfg_err(key: &str, msg: impl Into<String>) -> Error {
    Error::Config { key: key.to_string(), msg: msg.into() }
}

/// Fills preset defaults and checks every value; the result is what gets echoed into outputs.
pub fn resolve(mut cfg: ExperimentConfig) -> Result<ExperimentConfig> {
    let kind = cfg.experiment.kind;
    let data = &mut cfg.initial_data;
    match (&data.preset, &data.file) {
        (Some(_), Some(_)) => return Err(cfg_err("initial_data", "give either `preset` or `file`, not both")),
        (None, None) => return Err(cfg_err("initial_data", "missing `preset` or `file`")),
        _ => {}
    }
    if let Some(name) = data.preset.clone() {
        let p = find_preset(&name)?;
        if kind == ExperimentKind::ModeHeat && !p.heat {
            return Err(cfg_err("initial_data.preset", format!("`{name}` is not scalar heat data")));
        }
        if kind != ExperimentKind::ModeHeat && !p.field {
            return Err(cfg_err("initial_data.preset", format!("`{name}` only feeds mode-heat")));
        }
        data.amplitude.get_or_insert(p.amplitude);
        data.sigma.get_or_insert(p.sigma);
        if let Some(q) = p.q {
            data.q.get_or_insert(q);
        }
        cfg.physical.m.get_or_insert(p.m_over_pi * PI);
        cfg.spectral.k_max = cfg.spectral.k_max.max(p.min_k_max);
    } else if kind == ExperimentKind::ModeHeat {
        return Err(cfg_err("initial_data.file", "mode-heat needs a heat preset"));
    }
    cfg.physical.m.get_or_insert(2.0 * PI);

    let positive = |key: &str, v: f64| if v > 0.0 && v.is_finite() { Ok(()) } else { Err(cfg_err(key, format!("must be positive, got {v}"))) };
    positive("physical.nu", cfg.physical.nu)?;
    positive("physical.m", cfg.physical.m.unwrap_or(0.0))?;
    match (cfg.physical.homogeneous, cfg.physical.inertia) {
        (true, Some(_)) => return Err(cfg_err("physical.inertia", "only allowed with homogeneous = false")),
        (false, None) => return Err(cfg_err("physical.inertia", "required when homogeneous = false")),
        (false, Some(j)) => positive("physical.inertia", j)?,
        _ => {}
    }
    if cfg.grid.n_points < 3 {
        return Err(cfg_err("grid.n_points", "need at least 3 nodes"));
    }
    if !(cfg.grid.r_max > 1.0) {
        return Err(cfg_err("grid.r_max", "must exceed the disk radius 1"));
    }
    if !(cfg.grid.stretch >= 0.0) {
        return Err(cfg_err("grid.stretch", "must be nonnegative"));
    }
    positive("time.dt", cfg.time.dt)?;
    if !(cfg.time.growth >= 0.0) {
        return Err(cfg_err("time.growth", "must be nonnegative"));
    }
    if let Some(m) = cfg.time.dt_max {
        if !(m >= cfg.time.dt) {
            return Err(cfg_err("time.dt_max", "must be at least time.dt"));
        }
    }
    positive("time.t_end", cfg.time.t_end)?;
    positive("time.t_first", cfg.time.t_first)?;
    if cfg.time.t_first > cfg.time.t_end {
        return Err(cfg_err("time.t_first", "must not exceed time.t_end"));
    }
    if !(cfg.time.ratio > 1.0) {
        return Err(cfg_err("time.ratio", "must exceed 1"));
    }
    if cfg.spectral.k_max < 1 {
        return Err(cfg_err("spectral.k_max", "must be at least 1"));
    }
    let [w0, w1] = cfg.experiment.window;
    if !(w0 >= 1.0 && w1 > w0) {
        return Err(cfg_err("experiment.window", "need 1 <= t_min < t_max"));
    }
    if cfg.norms.p.is_empty() || cfg.norms.p.iter().any(|p| !(*p >= 1.0)) {
        return Err(cfg_err("norms.p", "need a nonempty list of exponents >= 1"));
    }
    if let Some(a) = cfg.initial_data.amplitude {
        if !a.is_finite() {
            return Err(cfg_err("initial_data.amplitude", "must be finite"));
        }
    }
    if let Some(s) = cfg.initial_data.sigma {
        positive("initial_data.sigma", s)?;
    }
    if let Some(q) = cfg.initial_data.q {
        if !(q > 1.0 && q <= 2.0) {
            return Err(cfg_err("initial_data.q", "must lie in (1, 2]"));
        }
    }
    if matches!(kind, ExperimentKind::EvolveNs | ExperimentKind::Kato) {
        nonlinear_config(&cfg, NsMode::Imex).validate().map_err(|e| cfg_err("spectral", e.to_string()))?;
    }
    Ok(cfg)
}

/// Non-fatal remarks about the resolved config.
pub fn warnings(cfg: &ExperimentConfig) -> Vec<String> {
    let mut out = Vec::new();
    let need = 6.0 * (cfg.physical.nu * cfg.time.t_end).sqrt();
    if cfg.initial_data.file.is_none() && cfg.grid.r_max < need {
        out.push(format!(
            "r_max = {} is below 6 sqrt(nu t_end) = {need:.3}; the far-field boundary will pollute late times",
            cfg.grid.r_max
        ));
    }
    out
}

pub fn physical_params(cfg: &ExperimentConfig) -> Result<PhysicalParams> {
    let m = cfg.physical.m.unwrap_or(2.0 * PI);
    match cfg.physical.inertia {
        Some(j) if !cfg.physical.homogeneous => PhysicalParams::new(cfg.physical.nu, m, j),
        _ => PhysicalParams::homogeneous(cfg.physical.nu, m),
    }
}

fn nonlinear_config(cfg: &ExperimentConfig, mode: NsMode) -> NonlinearConfig {
    let mut c = NonlinearConfig::new(mode, cfg.spectral.k_max);
    c.dealias = cfg.spectral.dealias;
    if let Some(n) = cfg.spectral.n_theta {
        c.n_theta = n;
    }
    c
}

fn bump(r: f64, sigma: f64) -> f64 {
    (-((r - 1.0) / sigma).powi(2)).exp()
}

/// Field data of a preset on `grid`.
pub fn preset_field(name: &str, grid: Arc<RadialGrid>, k_max: usize, amplitude: f64, sigma: f64, q: Option<f64>) -> Result<ModeDecomposition> {
    let preset = find_preset(name)?;
    if !preset.field {
        return Err(Error::InvalidArgument(format!("preset `{name}` has no field form")));
    }
    let k_max = k_max.max(preset.min_k_max);
    if name == "ns-small-q32" {
        return algebraic_tail_data(grid, q.unwrap_or(1.5), amplitude, k_max);
    }
    let mut d = ModeDecomposition::zeros(grid.clone(), k_max);
    for (i, &r) in grid.nodes.iter().enumerate() {
        let e = bump(r, sigma);
        match name {
            "w-bump-k1" => d.w[i] = amplitude * r * e,
            "translating-disk" | "neutral-buoyancy" => d.phi[i] = -amplitude * r * e,
            "higher-modes-only" => {
                d.higher[0][0][i] = amplitude * (r - 1.0).powi(2) * e;
                d.higher[1][0][i] = amplitude * (r - 1.0).powi(2) * e;
            }
            "kato-small" => {
                d.phi[i] = -amplitude * r * e;
                d.w[i] = amplitude * r * e;
                d.higher[0][0][i] = 2.0 * amplitude * (r - 1.0).powi(2) * (-(r - 2.0) * (r - 2.0)).exp();
            }
            _ => unreachable!("field preset without data"),
        }
    }
    d.sync_rigid();
    Ok(d)
}

/// Scalar data of a heat preset with the matching boundary parameters.
pub fn preset_heat(name: &str, grid: &RadialGrid, params: &PhysicalParams, amplitude: f64, sigma: f64) -> Result<(ScalarModeState, DynBCParams)> {
    match name {
        "unit-kick-k0" => {
            let mut s = ScalarModeState::zeros(grid.n_points);
            s.ell = amplitude;
            Ok((s, DynBCParams::dynamic(0, params.alpha0, params.nu)?))
        }
        "w-bump-k1" => {
            let y: Vec<f64> = grid.nodes.iter().map(|&r| amplitude * r * bump(r, sigma)).collect();
            Ok((ScalarModeState::from_profile(y, 0.0), DynBCParams::dynamic(1, params.alpha_w, params.nu)?))
        }
        _ => Err(Error::InvalidArgument(format!("preset `{name}` has no heat form"))),
    }
}

/// One evaluated acceptance-style check.
#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self { name: name.to_string(), passed, detail }
    }
}

#[derive(Clone, Debug, Default)]
pub struct Outcome {
    pub summary: Vec<(String, String)>,
    pub checks: Vec<Check>,
    pub report: Vec<ReportRow>,
    pub files: Vec<PathBuf>,
    pub check_requested: bool,
}

impl Outcome {
    fn put(&mut self, key: &str, value: impl std::fmt::Display) {
        self.summary.push((key.to_string(), value.to_string()));
    }

    fn put_num(&mut self, key: &str, value: f64) {
        self.put(key, sci(value));
    }

    pub fn value(&self, key: &str) -> Option<&str> {
        self.summary.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    header: String,
    outcome: Outcome,
}

impl Ctx<'_> {
    fn create(&mut self, name: &str) -> Result<BufWriter<File>> {
        let path = self.cfg.output_dir.join(name);
        let mut f = BufWriter::new(File::create(&path)?);
        f.write_all(self.header.as_bytes())?;
        self.outcome.files.push(path);
        Ok(f)
    }
}

fn config_header(cfg: &ExperimentConfig) -> Result<String> {
    let body = toml::to_string(cfg).map_err(|e| Error::InvalidArgument(format!("config echo failed: {e}")))?;
    let mut h = format!("# diskflow {} resolved config\n", env!("CARGO_PKG_VERSION"));
    for line in body.lines() {
        h.push_str("# ");
        h.push_str(line);
        h.push('\n');
    }
    Ok(h)
}

/// Geometric output times merged with the fit-window endpoints that fall inside the run.
fn sample_times(cfg: &ExperimentConfig) -> Result<Vec<f64>> {
    let mut times = geometric_times(cfg.time.t_first, cfg.time.t_end, cfg.time.ratio)?;
    for w in cfg.experiment.window {
        if w > cfg.time.t_first && w < cfg.time.t_end {
            times.push(w);
        }
    }
    times.sort_by(f64::total_cmp);
    times.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * b.abs());
    Ok(times)
}

fn try_fit(series: &[(f64, f64)], window: [f64; 2], log: bool) -> Option<DecayFit> {
    fit_decay(series, (window[0], window[1]), log).ok()
}

fn value_at(series: &[(f64, f64)], t: f64) -> Option<f64> {
    series.iter().find(|(s, _)| (s - t).abs() <= 1e-9 * t.max(1.0)).map(|(_, v)| *v)
}

/// Loads a config file, runs it and writes every output into `output_dir`.
pub fn run(path: &Path) -> Result<Outcome> {
    let text = fs::read_to_string(path).map_err(|e| cfg_err("<file>", format!("{}: {e}", path.display())))?;
    let cfg = resolve(parse_config(&text)?)?;
    for w in warnings(&cfg) {
        eprintln!("warning: {w}");
    }
    run_config(&cfg)
}

/// Runs a resolved config.
pub fn run_config(cfg: &ExperimentConfig) -> Result<Outcome> {
    fs::create_dir_all(&cfg.output_dir)?;
    let mut ctx = Ctx { cfg, header: config_header(cfg)?, outcome: Outcome::default() };
    ctx.outcome.check_requested = cfg.experiment.check;
    ctx.outcome.put("experiment", cfg.experiment.kind.as_str());
    for w in warnings(cfg) {
        ctx.outcome.put("warning", w);
    }
    match cfg.experiment.kind {
        ExperimentKind::ModeHeat => mode_heat(&mut ctx)?,
        ExperimentKind::EvolveStokes | ExperimentKind::FitDecay | ExperimentKind::CompareAsymptotic => stokes_experiment(&mut ctx)?,
        ExperimentKind::EvolveNs => ns_experiment(&mut ctx)?,
        ExperimentKind::Kato => kato_experiment(&mut ctx)?,
    }
    if !ctx.outcome.report.is_empty() {
        let rows = ctx.outcome.report.clone();
        let mut f = ctx.create("report.txt")?;
        write_report(&mut f, &rows)?;
        f.flush()?;
    }
    let mut f = ctx.create("summary.txt")?;
    for (k, v) in &ctx.outcome.summary {
        writeln!(f, "{k} = {v}")?;
    }
    if cfg.experiment.check {
        for c in &ctx.outcome.checks {
            writeln!(f, "check {} = {} ({})", c.name, if c.passed { "pass" } else { "fail" }, c.detail)?;
        }
    }
    f.flush()?;
    Ok(ctx.outcome)
}

fn load_field(cfg: &ExperimentConfig) -> Result<ModeDecomposition> {
    let d = &cfg.initial_data;
    if let Some(path) = &d.file {
        let f = File::open(path).map_err(|e| cfg_err("initial_data.file", format!("{}: {e}", path.display())))?;
        let field = read_decomposition(&mut BufReader::new(f))?;
        return Ok(field.with_k_max(cfg.spectral.k_max));
    }
    let grid = Arc::new(build_grid(cfg.grid.n_points, cfg.grid.r_max, cfg.grid.stretch)?);
    let name = d.preset.as_deref().unwrap_or_default();
    preset_field(name, grid, cfg.spectral.k_max, d.amplitude.unwrap_or(1.0), d.sigma.unwrap_or(1.0), d.q)
}

fn mode_heat(ctx: &mut Ctx) -> Result<()> {
    let cfg = ctx.cfg;
    let params = physical_params(cfg)?;
    let grid = build_grid(cfg.grid.n_points, cfg.grid.r_max, cfg.grid.stretch)?;
    let d = &cfg.initial_data;
    let (s0, hp) = preset_heat(d.preset.as_deref().unwrap_or_default(), &grid, &params, d.amplitude.unwrap_or(1.0), d.sigma.unwrap_or(1.0))?;
    let conserves = hp.k == 0;
    let m0 = if conserves { Some(dynbc_heat::mass(&s0, &hp, &grid)?) } else { None };
    let lyap_ps = [1.0, 2.0, 4.0, 8.0];
    let mut lyap: Vec<f64> = lyap_ps.iter().map(|&p| dynbc_heat::lp_functional(&grid, &s0, &hp, p)).collect();
    let mut worst_increase = f64::NEG_INFINITY;
    let mut drift = 0.0_f64;
    let mut rows: Vec<(f64, f64, f64, Vec<f64>)> = Vec::new();
    let mut s = s0.clone();
    let mut j = 0usize;
    for &t in &sample_times(cfg)? {
        let (n, h) = dynbc_heat::step_count(t - s.t, cfg.time.dt_at(s.t));
        let t_start = s.t;
        for i in 0..n {
            let mut next = dynbc_heat::step(&grid, &s, &dynbc_heat::startup_params(&hp, j), h)?;
            next.t = t_start + (i + 1) as f64 * h;
            j += 1;
            for (k, &p) in lyap_ps.iter().enumerate() {
                let v = dynbc_heat::lp_functional(&grid, &next, &hp, p);
                if lyap[k] > 0.0 {
                    worst_increase = worst_increase.max((v - lyap[k]) / lyap[k]);
                }
                lyap[k] = v;
            }
            if let Some(m0) = m0 {
                drift = drift.max(((dynbc_heat::mass(&next, &hp, &grid)? - m0) / m0).abs());
            }
            s = next;
        }
        s.t = t;
        let mass = if conserves { dynbc_heat::mass(&s, &hp, &grid)? } else { f64::NAN };
        let norms = cfg.norms.p.iter().map(|&p| dynbc_heat::pair_norm(&grid, &s, &hp, p)).collect();
        rows.push((t, s.ell, mass, norms));
    }

    let mut f = ctx.create("heat.txt")?;
    let mut header = String::from("t, ell");
    if conserves {
        header.push_str(", mass");
    }
    for p in &cfg.norms.p {
        header.push_str(&format!(", norm_{}", p_label(*p)));
    }
    writeln!(f, "{header}")?;
    for (t, ell, mass, norms) in &rows {
        let mut cols = vec![sci(*t), sci(*ell)];
        if conserves {
            cols.push(sci(*mass));
        }
        cols.extend(norms.iter().map(|v| sci(*v)));
        writeln!(f, "{}", cols.join(", "))?;
    }
    f.flush()?;

    let o = &mut ctx.outcome;
    o.put("k", hp.k);
    o.put_num("alpha_tilde", hp.alpha_tilde);
    o.put("steps", j);
    o.put_num("t_final", s.t);
    o.put_num("ell_final", s.ell);
    o.put_num("lyapunov_max_relative_increase", worst_increase);
    o.checks.push(Check::new(
        "lyapunov-monotone",
        worst_increase <= 1e-10,
        format!("max relative increase {worst_increase:.3e} over p = 1, 2, 4, 8"),
    ));
    if let Some(m0) = m0 {
        o.put_num("mass_initial", m0);
        o.put_num("mass_relative_drift", drift);
        let ratio = 4.0 * PI * params.nu * s.t * s.ell / m0;
        o.put_num("self_similar_ratio", ratio);
        o.checks.push(Check::new("mass-conservation", drift <= 1e-10, format!("relative drift {drift:.3e}")));
        o.checks.push(Check::new("self-similar-boundary", (ratio - 1.0).abs() <= 0.1, format!("4 pi nu t ell / M = {ratio:.6}")));
    } else {
        let series: Vec<(f64, f64)> = rows.iter().map(|r| (r.0, r.1.abs())).collect();
        if let Some(fit) = try_fit(&series, cfg.experiment.window, false) {
            o.put_num("ell_exponent", fit.exponent);
            let pass = (fit.exponent + 2.0).abs() <= 0.2;
            o.checks.push(Check::new("ell-decay-k1", pass, format!("fitted exponent {:.4}, expected -2", fit.exponent)));
            o.report.push(ReportRow { experiment: "ell-decay-k1".into(), p: f64::NAN, q: f64::NAN, expected: -2.0, fitted: fit.exponent, residual: fit.residual, pass });
        }
    }
    Ok(())
}

fn stokes_experiment(ctx: &mut Ctx) -> Result<()> {
    let cfg = ctx.cfg;
    let kind = cfg.experiment.kind;
    let params = physical_params(cfg)?;
    let d0 = load_field(cfg)?;
    let s0 = init_stokes(&d0, &params)?;
    let mom = asymptotic_momenta(&s0)?;
    let mut ps = cfg.norms.p.clone();
    if !ps.contains(&2.0) {
        ps.push(2.0);
    }
    let profile_ps = if kind == ExperimentKind::CompareAsymptotic { cfg.norms.p.clone() } else { Vec::new() };
    let mut series = StokesSeries::new(ps.clone(), profile_ps.clone(), mom.m_vec);
    let mut added_mass_err = 0.0_f64;
    let last = evolve_sampled(&s0, &sample_times(cfg)?, &|t| cfg.time.dt_at(t), &mut |s| {
        series.record(s)?;
        let lhs = added_mass_pairing(&s.decomp);
        let rhs = -PI * s.decomp.rigid.ell[0];
        let err = if rhs != 0.0 { ((lhs - rhs) / rhs).abs() } else { lhs.abs() };
        added_mass_err = added_mass_err.max(err);
        Ok(())
    })?;

    let mut f = ctx.create("stokes.txt")?;
    series.write(&mut f)?;
    f.flush()?;

    let window = cfg.experiment.window;
    let col = |k: usize| -> Vec<(f64, f64)> { series.rows.iter().map(|r| (r.t, r.norms[k])).collect() };
    let ell_series: Vec<(f64, f64)> = series.rows.iter().map(|r| (r.t, r.ell[0].hypot(r.ell[1]))).collect();
    let omega_series: Vec<(f64, f64)> = series.rows.iter().map(|r| (r.t, r.omega.abs())).collect();
    let l2_idx = ps.iter().position(|p| *p == 2.0).unwrap_or(0);

    let o = &mut ctx.outcome;
    o.put("steps", last.steps);
    o.put_num("t_final", last.t);
    o.put_num("ell_x_final", last.decomp.rigid.ell[0]);
    o.put_num("ell_y_final", last.decomp.rigid.ell[1]);
    o.put_num("omega_final", last.decomp.rigid.omega);
    o.put_num("momentum_x", mom.m_vec[0]);
    o.put_num("momentum_y", mom.m_vec[1]);
    o.put_num("mass_phi", mom.m_phi);
    o.put_num("mass_psi", mom.m_psi);
    o.put_num("added_mass_max_error", added_mass_err);
    o.checks.push(Check::new("added-mass", added_mass_err <= 1e-8, format!("max relative error {added_mass_err:.3e}")));

    for (k, &p) in ps.iter().enumerate() {
        if let Some(fit) = try_fit(&col(k), window, false) {
            o.put_num(&format!("norm_L{}_exponent", p_label(p)), fit.exponent);
            if kind == ExperimentKind::FitDecay {
                let expected = expected_exponent(RateKind::Semigroup, p, 1.0, Regime::Long)?.exponent;
                let pass = fit.exponent <= expected + 0.05;
                o.report.push(ReportRow { experiment: "semigroup".into(), p, q: 1.0, expected, fitted: fit.exponent, residual: fit.residual, pass });
                o.checks.push(Check::new(&format!("semigroup-L{}", p_label(p)), pass, format!("fitted {:.4}, bound {expected:.4}", fit.exponent)));
            }
        }
    }
    let ell_fit = try_fit(&ell_series, window, false);
    let omega_fit = try_fit(&omega_series, window, false);
    if let Some(fit) = &ell_fit {
        o.put_num("ell_exponent", fit.exponent);
    }
    if let Some(fit) = &omega_fit {
        o.put_num("omega_exponent", fit.exponent);
    }

    let l2_fit = try_fit(&col(l2_idx), window, false);
    match cfg.initial_data.preset.as_deref() {
        Some("translating-disk") if kind != ExperimentKind::FitDecay => {
            let e = l2_fit.as_ref().map_or(f64::NAN, |f| f.exponent);
            o.checks.push(Check::new("semigroup-decay", (e + 0.5).abs() <= 0.05, format!("L2 exponent {e:.4}, expected -0.5")));
        }
        Some("w-bump-k1") => {
            let e = omega_fit.as_ref().map_or(f64::NAN, |f| f.exponent);
            o.checks.push(Check::new("omega-decay", (e + 2.0).abs() <= 0.2, format!("omega exponent {e:.4}, expected -2")));
        }
        Some("neutral-buoyancy") => {
            let e = ell_fit.as_ref().map_or(f64::NAN, |f| f.exponent);
            o.checks.push(Check::new("neutral-ell-decay", e <= -1.15, format!("ell exponent {e:.4}, need <= -1.15")));
        }
        Some("higher-modes-only") => {
            let e = l2_fit.as_ref().map_or(f64::NAN, |f| f.exponent);
            o.checks.push(Check::new("higher-mode-decay", e <= -1.2, format!("L2 exponent {e:.4}, need <= -1.2")));
        }
        _ => {}
    }

    if kind == ExperimentKind::CompareAsymptotic {
        let mnorm2 = mom.m_vec[0] * mom.m_vec[0] + mom.m_vec[1] * mom.m_vec[1];
        let ratio_at = |r: &crate::stokes::StokesRecord| {
            8.0 * PI * params.nu * r.t * (r.ell[0] * mom.m_vec[0] + r.ell[1] * mom.m_vec[1]) / mnorm2
        };
        let mut f = ctx.create("asymptotic.txt")?;
        let mut header = String::from("t, translation_ratio");
        for p in &profile_ps {
            header.push_str(&format!(", scaled_profile_err_L{}", p_label(*p)));
        }
        writeln!(f, "{header}")?;
        let mut scaled: Vec<Vec<(f64, f64)>> = vec![Vec::new(); profile_ps.len()];
        for r in &series.rows {
            let mut cols = vec![sci(r.t), sci(if mnorm2 > 0.0 { ratio_at(r) } else { f64::NAN })];
            for (k, &p) in profile_ps.iter().enumerate() {
                let e = r.t.powf(1.0 - 1.0 / p) * r.profile_errors[k];
                scaled[k].push((r.t, e));
                cols.push(sci(e));
            }
            writeln!(f, "{}", cols.join(", "))?;
        }
        f.flush()?;
        let o = &mut ctx.outcome;
        if let (Some(r), true) = (series.rows.last(), mnorm2 > 0.0) {
            let ratio = ratio_at(r);
            o.put_num("translation_ratio_final", ratio);
            o.checks.push(Check::new("translation-asymptotics", (ratio - 1.0).abs() <= 0.15, format!("8 pi nu t ell.M/|M|^2 = {ratio:.6} at t = {}", r.t)));
        }
        for (k, &p) in profile_ps.iter().enumerate() {
            let (a, b) = (value_at(&scaled[k], window[0]), value_at(&scaled[k], window[1]));
            if let (Some(a), Some(b)) = (a, b) {
                let label = p_label(p);
                o.put_num(&format!("profile_err_L{label}_start"), a);
                o.put_num(&format!("profile_err_L{label}_end"), b);
                if p == 2.0 {
                    o.checks.push(Check::new("profile-convergence", b <= 0.5 * a, format!("e({}) = {b:.4e}, e({}) = {a:.4e}", window[1], window[0])));
                }
            }
        }
    }
    Ok(())
}

fn ns_experiment(ctx: &mut Ctx) -> Result<()> {
    let cfg = ctx.cfg;
    let params = physical_params(cfg)?;
    let d0 = load_field(cfg)?;
    let mut lin = init_stokes(&d0, &params)?;
    let mut non = lin.clone();
    let mut stepper = NsStepper::new(nonlinear_config(cfg, NsMode::Imex))?;
    let bw = params.m / PI;
    let e0 = kinetic_energy(&non.decomp, &params)?;
    let mut e_prev = e0;
    let mut worst = f64::NEG_INFINITY;
    let ps = &cfg.norms.p;
    let mut rows: Vec<(f64, f64, Vec<f64>, Vec<f64>, [f64; 3])> = Vec::new();
    for &t in &sample_times(cfg)? {
        let (n, h) = dynbc_heat::step_count(t - non.t, cfg.time.dt_at(non.t));
        for _ in 0..n {
            non = step_ns(&non, &mut stepper, h)?;
            lin = step_stokes(&lin, h)?;
            let e = kinetic_energy(&non.decomp, &params)?;
            if e0 > 0.0 {
                worst = worst.max((e - e_prev) / e0);
            }
            e_prev = e;
        }
        non.t = t;
        lin.t = t;
        let diff = non.decomp.difference(&lin.decomp);
        let norms = ps.iter().map(|&p| field_norm(&non.decomp, p, bw)).collect::<Result<Vec<_>>>()?;
        let diffs = ps.iter().map(|&p| field_norm(&diff, p, bw)).collect::<Result<Vec<_>>>()?;
        let r = &non.decomp.rigid;
        rows.push((t, e_prev, norms, diffs, [r.ell[0], r.ell[1], r.omega]));
    }

    let mut f = ctx.create("ns.txt")?;
    let mut header = String::from("t, energy");
    for p in ps {
        header.push_str(&format!(", norm_L{}", p_label(*p)));
    }
    for p in ps {
        header.push_str(&format!(", diff_norm_L{}", p_label(*p)));
    }
    header.push_str(", ell_x, ell_y, omega");
    writeln!(f, "{header}")?;
    for (t, e, norms, diffs, rigid) in &rows {
        let mut cols = vec![sci(*t), sci(*e)];
        cols.extend(norms.iter().chain(diffs).chain(rigid).map(|v| sci(*v)));
        writeln!(f, "{}", cols.join(", "))?;
    }
    f.flush()?;

    let o = &mut ctx.outcome;
    o.put("steps", non.steps);
    o.put_num("t_final", non.t);
    o.put_num("energy_initial", e0);
    o.put_num("energy_final", e_prev);
    o.put_num("energy_max_relative_increase", worst);
    o.checks.push(Check::new("energy-inequality", worst <= 1e-8, format!("max per-step increase {worst:.3e} relative to E(0)")));
    let window = cfg.experiment.window;
    let q = cfg.initial_data.q;
    for (k, &p) in ps.iter().enumerate() {
        let base: Vec<(f64, f64)> = rows.iter().map(|r| (r.0, r.2[k])).collect();
        let diff: Vec<(f64, f64)> = rows.iter().map(|r| (r.0, r.3[k])).collect();
        let label = p_label(p);
        let (Some(bf), Some(df)) = (try_fit(&base, window, false), try_fit(&diff, window, false)) else { continue };
        o.put_num(&format!("norm_L{label}_exponent"), bf.exponent);
        o.put_num(&format!("diff_norm_L{label}_exponent"), df.exponent);
        let Some(q) = q else { continue };
        if let Ok(expected) = expected_exponent(RateKind::Semigroup, p, q, Regime::Long) {
            let pass = (bf.exponent - expected.exponent).abs() <= 0.05;
            o.report.push(ReportRow { experiment: "ns-base".into(), p, q, expected: expected.exponent, fitted: bf.exponent, residual: bf.residual, pass });
            if p == 2.0 {
                o.checks.push(Check::new("ns-base-decay", pass, format!("fitted {:.4}, expected {:.4}", bf.exponent, expected.exponent)));
            }
        }
        if let Ok(expected) = expected_exponent(RateKind::NsDiff, p, q, Regime::Long) {
            let diff_fit = try_fit(&diff, window, expected.log).unwrap_or(df);
            // an improvement over the base rate is only predicted below q = 2
            let (pass, detail) = if q < 2.0 {
                (diff_fit.exponent <= -0.25, format!("fitted {:.4}, need <= -0.25 (rate {:.4})", diff_fit.exponent, expected.exponent))
            } else {
                let gap = (diff_fit.exponent - bf.exponent).abs();
                (gap <= 0.15, format!("fitted {:.4} vs base {:.4}, need |gap| <= 0.15", diff_fit.exponent, bf.exponent))
            };
            o.report.push(ReportRow { experiment: "ns-diff".into(), p, q, expected: expected.exponent, fitted: diff_fit.exponent, residual: diff_fit.residual, pass });
            if p == 2.0 {
                o.checks.push(Check::new(if q < 2.0 { "ns-improved-decay" } else { "ns-no-improvement" }, pass, detail));
            }
        }
    }
    Ok(())
}

fn kato_experiment(ctx: &mut Ctx) -> Result<()> {
    let cfg = ctx.cfg;
    let params = physical_params(cfg)?;
    let d0 = load_field(cfg)?;
    let s0 = init_stokes(&d0, &params)?;
    let res = kato_solve(&s0, &nonlinear_config(cfg, NsMode::Kato), cfg.time.t_end, cfg.time.dt)?;
    let mut f = ctx.create("kato.txt")?;
    res.diagnostics.write(&mut f)?;
    f.flush()?;

    let mut stepper = NsStepper::new(nonlinear_config(cfg, NsMode::Imex))?;
    let imex = evolve_ns(&s0, &mut stepper, cfg.time.t_end, cfg.time.dt, &mut |_| Ok(()))?;
    let bw = params.m / PI;
    let kato_final = res.trajectory.last().expect("trajectory holds the initial state");
    let scale = field_norm(&imex.decomp, 2.0, bw)?;
    let gap = field_norm(&kato_final.difference(&imex.decomp), 2.0, bw)?;
    let rel = if scale > 0.0 { gap / scale } else { gap };

    let dg = &res.diagnostics;
    let monotone = dg.differences.windows(2).all(|w| w[1] < w[0]);
    let ratios_ok = dg.contraction_ratios.iter().all(|r| *r < 1.0);
    let o = &mut ctx.outcome;
    o.put("iterations", dg.differences.len());
    o.put("converged", dg.converged);
    o.put("contracted", dg.contracted);
    o.put_num("g0", dg.g_n[0]);
    o.put_num("c0_estimate", dg.c0_estimate);
    o.put("mu0_estimate", dg.mu0_estimate.map_or("none".to_string(), sci));
    o.put("contraction_ratios", dg.contraction_ratios.iter().map(|r| sci(*r)).collect::<Vec<_>>().join(" "));
    o.put_num("kato_imex_relative_gap", rel);
    o.checks.push(Check::new(
        "kato-contraction",
        ratios_ok && monotone && dg.contracted,
        format!("ratios < 1: {ratios_ok}, differences decreasing: {monotone}"),
    ));
    o.checks.push(Check::new("kato-vs-imex", rel <= 1e-3, format!("relative L2 gap {rel:.3e} at t = {}", cfg.time.t_end)));
    Ok(())
}

/// Prints the closed-form exponent for `print-expected`.
pub fn print_expected(kind: &str, p: f64, q: f64, regime: &str) -> Result<String> {
    let kind = match kind {
        "semigroup" => RateKind::Semigroup,
        "gradient" => RateKind::Gradient,
        "div-forcing" | "div_forcing" => RateKind::DivForcing,
        "ell-decay" | "ell_decay" => RateKind::EllDecay,
        "ns-diff" | "ns_diff" => RateKind::NsDiff,
        other => return Err(Error::InvalidArgument(format!("unknown rate kind `{other}`"))),
    };
    let regime = match regime {
        "long" => Regime::Long,
        "short" => Regime::Short,
        other => return Err(Error::InvalidArgument(format!("unknown regime `{other}`"))),
    };
    let e = expected_exponent(kind, p, q, regime)?;
    Ok(format!("exponent = {}\nlog_correction = {}", sci(e.exponent), e.log))
}
