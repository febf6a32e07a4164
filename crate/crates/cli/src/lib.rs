//! Config-driven experiment runner: reads a JSON experiment file, dispatches to
//! the library, and writes CSV/JSON reports plus gnuplot-ready data.
//!
//! Every output of a task is built in memory first and written only after the
//! task finishes, so a run that fails leaves no files behind.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod tasks;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use pathhjb::scenario::ScenarioConfig;
use serde::{Deserialize, Serialize};

pub use tasks::{
    DppParams, HabitDemoParams, HeatParams, ItoParams, NetParams, ProbeParams, SandwichParams, ShiftParams,
    SnellParams, ValidateParams, ValueParams,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Task {
    Validate,
    Value,
    Dpp,
    Sandwich,
    Probe,
    DemoHabit,
    DemoShift,
    Ito,
    Snell,
    Net,
    Heat,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Validate => "validate",
            Task::Value => "value",
            Task::Dpp => "dpp",
            Task::Sandwich => "sandwich",
            Task::Probe => "probe",
            Task::DemoHabit => "demo_habit",
            Task::DemoShift => "demo_shift",
            Task::Ito => "ito",
            Task::Snell => "snell",
            Task::Net => "net",
            Task::Heat => "heat",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Caps {
    /// Table entries, tree leaves and enumerated policies.
    pub dp: u64,
    /// Lattice paths enumerated by probes, nets and brute-force checks.
    pub lattice: u64,
}

impl Default for Caps {
    fn default() -> Self {
        Caps { dp: 1 << 22, lattice: 1 << 20 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub scenario: Option<ScenarioConfig>,
    /// Optional; when present it must match the task named on the command line.
    #[serde(default)]
    pub task: Option<Task>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub caps: Caps,
    #[serde(default)]
    pub validate: ValidateParams,
    #[serde(default)]
    pub value: ValueParams,
    #[serde(default)]
    pub dpp: DppParams,
    #[serde(default)]
    pub sandwich: SandwichParams,
    #[serde(default)]
    pub probe: ProbeParams,
    #[serde(default)]
    pub demo_habit: HabitDemoParams,
    #[serde(default)]
    pub demo_shift: ShiftParams,
    #[serde(default)]
    pub ito: ItoParams,
    #[serde(default)]
    pub snell: SnellParams,
    #[serde(default)]
    pub net: NetParams,
    #[serde(default)]
    pub heat: HeatParams,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, RunError> {
        serde_json::from_str(text).map_err(|e| RunError::Schema(e.to_string()))
    }
}

#[derive(Debug)]
pub enum RunError {
    Schema(String),
    Lib(pathhjb::Error),
    Write(String),
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunError::Schema(m) => write!(f, "config error: {m}"),
            RunError::Lib(e) => write!(f, "{e}"),
            RunError::Write(m) => write!(f, "write failed: {m}"),
        }
    }
}

impl std::error::Error for RunError {}

impl From<pathhjb::Error> for RunError {
    fn from(e: pathhjb::Error) -> Self {
        RunError::Lib(e)
    }
}

impl RunError {
    /// 2 schema or parameter error, 3 cap exceeded, 4 numeric failure, 5 i/o.
    pub fn exit_code(&self) -> i32 {
        use pathhjb::Error as E;
        match self {
            RunError::Schema(_) => 2,
            RunError::Write(_) => 5,
            RunError::Lib(e) => match e {
                E::CapExceeded { .. } => 3,
                E::Numeric(_) | E::Cfl { .. } | E::DecreasingConsumption(_) => 4,
                E::Io(_) => 5,
                _ => 2,
            },
        }
    }
}

/// One pass/fail check; `file` names the output holding the underlying data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub value: f64,
    pub bound: f64,
    pub file: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunReport {
    pub task: Task,
    pub pass: bool,
    pub seed: u64,
    pub checks: Vec<Check>,
    pub summary: BTreeMap<String, f64>,
    pub wall_time_s: f64,
    pub params: serde_json::Value,
    pub out_dir: PathBuf,
    pub files: Vec<String>,
}

/// What a task hands back before anything touches the disk.
#[derive(Default)]
pub struct TaskOutput {
    pub checks: Vec<Check>,
    pub summary: BTreeMap<String, f64>,
    pub files: Vec<(String, Vec<u8>)>,
}

impl TaskOutput {
    pub fn check(&mut self, name: &str, pass: bool, value: f64, bound: f64, file: &str) {
        self.checks.push(Check { name: name.into(), pass, value, bound, file: file.into() });
    }

    pub fn file(&mut self, name: impl Into<String>, bytes: Vec<u8>) {
        self.files.push((name.into(), bytes));
    }
}

/// Command-line overrides on top of the config file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub cap: Option<u64>,
    pub sweep: Option<Vec<String>>,
}

/// Reads and validates the config, runs `task`, and writes its outputs and
/// `report.json` under the output directory.
pub fn run(task: Task, config: &Path, over: &Overrides) -> Result<RunReport, RunError> {
    let text = std::fs::read_to_string(config).map_err(|e| RunError::Schema(format!("{}: {e}", config.display())))?;
    let mut cfg = ExperimentConfig::from_json(&text)?;
    if let Some(t) = cfg.task {
        if t != task {
            return Err(RunError::Schema(format!("config is for task {}, not {}", t.name(), task.name())));
        }
    }
    if let Some(seed) = over.seed {
        cfg.seed = seed;
    }
    if let Some(cap) = over.cap {
        cfg.caps.dp = cap;
        cfg.caps.lattice = cap;
    }
    if let Some(sw) = &over.sweep {
        cfg.sandwich.sweep = sw.clone();
    }
    let out = over.out.clone().or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from("out").join(task.name()));
    run_config(task, &cfg, &out)
}

pub fn run_config(task: Task, cfg: &ExperimentConfig, out: &Path) -> Result<RunReport, RunError> {
    let start = Instant::now();
    let result = tasks::dispatch(task, cfg)?;
    let wall = start.elapsed().as_secs_f64();
    let mut names: Vec<&String> = result.files.iter().map(|(n, _)| n).collect();
    names.sort();
    if names.windows(2).any(|w| w[0] == w[1]) || names.iter().any(|n| n.as_str() == "report.json") {
        return Err(RunError::Schema("task produced clashing file names".into()));
    }
    let mut report = RunReport {
        task,
        pass: result.checks.iter().all(|c| c.pass),
        seed: cfg.seed,
        checks: result.checks,
        summary: result.summary,
        wall_time_s: wall,
        params: serde_json::to_value(cfg).map_err(|e| RunError::Schema(e.to_string()))?,
        out_dir: out.to_path_buf(),
        files: names.iter().map(|s| s.to_string()).collect(),
    };
    report.files.push("report.json".into());
    write_all(out, &result.files)?;
    let json = serde_json::to_vec_pretty(&report).map_err(|e| RunError::Write(e.to_string()))?;
    write_all(out, &[("report.json".into(), json)])?;
    Ok(report)
}

fn write_all(dir: &Path, files: &[(String, Vec<u8>)]) -> Result<(), RunError> {
    let mut sorted: Vec<&(String, Vec<u8>)> = files.iter().collect();
    sorted.sort_by(|a, b| a.0.cmp(&b.0));
    for (name, bytes) in sorted {
        let path = dir.join(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| RunError::Write(format!("{}: {e}", parent.display())))?;
        }
        std::fs::write(&path, bytes).map_err(|e| RunError::Write(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}

/// A named `(x, y)` series for convergence plots.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub name: String,
    pub x_label: String,
    pub y_label: String,
    pub points: Vec<(f64, f64)>,
    /// Plot on log-log axes.
    pub log: bool,
}

#[derive(Serialize)]
struct ManifestEntry<'a> {
    file: String,
    x: &'a str,
    y: &'a str,
    rows: usize,
}

/// In-memory form of [`emit_convergence_data`]: one `<name>.dat` per series,
/// `convergence_manifest.json` and `convergence.gp`, in that order.
pub fn convergence_files(series: &[Series]) -> pathhjb::Result<Vec<(String, Vec<u8>)>> {
    use pathhjb::Error;
    if series.is_empty() {
        return Err(Error::InvalidParameter("no series to emit".into()));
    }
    let mut seen = std::collections::BTreeSet::new();
    let mut files = Vec::new();
    let mut manifest = Vec::new();
    let mut plots = Vec::new();
    for s in series {
        if s.name.is_empty() || !s.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
            return Err(Error::InvalidParameter(format!("series name {:?}", s.name)));
        }
        if !seen.insert(s.name.as_str()) {
            return Err(Error::InvalidParameter(format!("duplicate series {}", s.name)));
        }
        if s.points.is_empty() {
            return Err(Error::InvalidParameter(format!("series {} has no points", s.name)));
        }
        let mut body = String::new();
        for (x, y) in &s.points {
            body.push_str(&format!("{x:.17e} {y:.17e}\n"));
        }
        let file = format!("{}.dat", s.name);
        manifest.push(ManifestEntry { file: file.clone(), x: &s.x_label, y: &s.y_label, rows: s.points.len() });
        let log = if s.log { "set logscale xy\n" } else { "unset logscale\n" };
        plots.push(format!(
            "set output '{name}.png'\n{log}set xlabel '{x}'\nset ylabel '{y}'\nplot '{file}' using 1:2 with linespoints title '{name}'\n",
            name = s.name,
            x = s.x_label,
            y = s.y_label,
        ));
        files.push((file, body.into_bytes()));
    }
    files.push(("convergence_manifest.json".into(), serde_json::to_vec_pretty(&manifest)?));
    let script = format!("set terminal pngcairo size 800,600\n{}", plots.join("\n"));
    files.push(("convergence.gp".into(), script.into_bytes()));
    Ok(files)
}

/// Writes two-column whitespace data files, a manifest and a gnuplot script
/// into `dir`; returns the paths in write order.
pub fn emit_convergence_data(series: &[Series], dir: &Path) -> pathhjb::Result<Vec<PathBuf>> {
    let files = convergence_files(series)?;
    std::fs::create_dir_all(dir)?;
    let mut out = Vec::new();
    for (name, bytes) in files {
        let p = dir.join(name);
        std::fs::write(&p, bytes)?;
        out.push(p);
    }
    Ok(out)
}
