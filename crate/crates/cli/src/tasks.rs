//! Task bodies. Each returns its checks, summary values and output files
//! without touching the disk.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use pathhjb::approximation::{sandwich_gap_study, solve_hjb_slab, ApproxParams, MarkovFn, PdeGrid};
use pathhjb::control_value::{
    dpp_sweep, export_table, lipschitz_sweep, solve_value, supermartingale_gap, DPConfig, ValueTable,
};
use pathhjb::dynamics::{integrate_state, stability_check, sup_bound_check, time_regularity_excess, ControlPolicy};
use pathhjb::path_space::{build_epsilon_net, enumerate_class_lattice, GridPath, PathClassSpec, TimeGrid};
use pathhjb::rng::stream;
use pathhjb::scenario::builtin::{DriftableAbs, Habit, HabitParams};
use pathhjb::scenario::{
    eta_constant, eta_scaled_noise, habit_living_standard, shift_by_eta, validate_coefficients, ControlSet, EtaFn,
    NoiseMode, NoiseModel, NoiseTree, Scenario,
};
use pathhjb::viscosity::{
    ito_decompose, ito_decompose_martingale_first, ito_kunita_residual, reconstruction_residual, snell_envelope,
    viscosity_probe, write_probe_csv, CylinderTestFunction, FnField, ProbeReport, ProbeSide, RandomField,
    TimeTilted, ValueField,
};
use pathhjb::Error;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{convergence_files, ExperimentConfig, RunError, Series, Task, TaskOutput};

type Out = Result<TaskOutput, RunError>;

pub fn dispatch(task: Task, cfg: &ExperimentConfig) -> Out {
    match task {
        Task::Validate => validate(cfg),
        Task::Value => value(cfg),
        Task::Dpp => dpp(cfg),
        Task::Sandwich => sandwich(cfg),
        Task::Probe => probe(cfg),
        Task::DemoHabit => demo_habit(cfg),
        Task::DemoShift => demo_shift(cfg),
        Task::Ito => ito(cfg),
        Task::Snell => snell(cfg),
        Task::Net => net(cfg),
        Task::Heat => heat(cfg),
    }
}

fn scenario(cfg: &ExperimentConfig) -> Result<Scenario, RunError> {
    let sc = cfg.scenario.as_ref().ok_or_else(|| RunError::Schema("this task needs a scenario block".into()))?;
    Ok(sc.build()?)
}

fn dp(cfg: &ExperimentConfig, tolerance: f64) -> DPConfig {
    DPConfig { cap: cfg.caps.dp as u128, tolerance }
}

fn num(x: f64) -> String {
    format!("{x:.17e}")
}

fn csv_bytes(header: &[&str], rows: &[Vec<String>]) -> pathhjb::Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.to_string()))
}

fn json<T: Serialize>(v: &T) -> pathhjb::Result<Vec<u8>> {
    Ok(serde_json::to_vec_pretty(v)?)
}

fn check_cap(what: &'static str, size: u128, cap: u64) -> Result<(), RunError> {
    if size > cap as u128 {
        return Err(Error::CapExceeded { what, size, cap: cap as u128 }.into());
    }
    Ok(())
}

fn schema(msg: impl Into<String>) -> RunError {
    RunError::Schema(msg.into())
}

/// A full-length noise path: a uniformly drawn tree leaf, or a Gaussian path
/// from stream `index`.
fn sample_noise(s: &Scenario, rng: &mut impl Rng, index: u64) -> pathhjb::Result<GridPath> {
    let g = s.grid();
    match s.noise().mode {
        NoiseMode::QuantizedWalk => {
            let tree = s.tree();
            let total = tree.nodes_u128(g.steps());
            let node = (rng.gen::<u64>() as u128 % total) as usize;
            tree.path(g.steps(), node)
        }
        NoiseMode::GaussianMc => {
            s.noise().gaussian_path(&GridPath::constant(g, &vec![0.0; s.noise().dims], 0)?, index)
        }
    }
}

/// `x` advanced by `steps` random increments of Euclidean size at most `k·dt`.
fn random_extension(x: &GridPath, steps: usize, k: f64, rng: &mut impl Rng) -> pathhjb::Result<GridPath> {
    let d = x.dim();
    let h = k * x.grid().dt() / (d.max(1) as f64).sqrt();
    let mut y = x.clone();
    for _ in 0..steps {
        let inc: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..=1.0) * h).collect();
        y = y.advanced(&inc)?;
    }
    Ok(y)
}

// ---------------------------------------------------------------- validate

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ValidateParams {
    pub samples: usize,
    /// Random (policy, noise) pairs for the flow bounds.
    pub trajectories: usize,
    pub tolerance: f64,
}

impl Default for ValidateParams {
    fn default() -> Self {
        ValidateParams { samples: 200, trajectories: 200, tolerance: 1e-12 }
    }
}

fn validate(cfg: &ExperimentConfig) -> Out {
    let p = &cfg.validate;
    let s = scenario(cfg)?;
    let mut out = TaskOutput::default();
    let rep = validate_coefficients(&s, p.samples, cfg.seed);
    out.file("validation.json", json(&rep)?);
    let ratio = rep.max_ratio_drift.max(rep.max_ratio_running).max(rep.max_ratio_terminal);
    out.check("coefficient_bounds", rep.pass, ratio, rep.lipschitz, "validation.json");
    out.summary.insert("L".into(), rep.lipschitz);
    out.summary.insert("K".into(), rep.bound);

    let start = s.initial().anchor();
    let d = s.state_dim();
    let mut rows = Vec::new();
    let mut violations = 0usize;
    let mut worst = f64::NEG_INFINITY;
    for t in 0..p.trajectories {
        let mut rng = stream(cfg.seed, "cli_flow", t as u64);
        let w = sample_noise(&s, &mut rng, t as u64)?;
        let pol = ControlPolicy::pseudo_random(rng.gen(), s.controls().len());
        let tr = integrate_state(&s, &pol, &w, start, s.initial())?;
        let (lhs, rhs) = sup_bound_check(&s, &tr);
        let excess = time_regularity_excess(&s, &tr);
        let shift: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (dl, dr) = stability_check(&s, &pol, &w, s.initial(), &s.initial().translated(&shift))?;
        let bad = lhs > rhs + p.tolerance || excess > p.tolerance || dl > dr + p.tolerance;
        violations += bad as usize;
        worst = worst.max(lhs - rhs).max(excess).max(dl - dr);
        rows.push(vec![t.to_string(), num(lhs), num(rhs), num(excess), num(dl), num(dr), (!bad).to_string()]);
    }
    out.file(
        "flow_bounds.csv",
        csv_bytes(&["trial", "sup_norm", "sup_bound", "time_excess", "stability_lhs", "stability_rhs", "pass"], &rows)?,
    );
    out.check("flow_bounds", violations == 0, violations as f64, 0.0, "flow_bounds.csv");
    if p.trajectories > 0 {
        out.summary.insert("flow_worst_excess".into(), worst);
    }
    Ok(out)
}

// ---------------------------------------------------------------- value

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ValueParams {
    /// Dump every table layer under `table/`.
    pub export: bool,
    /// Pseudo-random policies for the supermartingale check; 0 skips it.
    pub policies: usize,
    /// Lattice levels for the Lipschitz sweep; 0 skips it.
    pub lipschitz_levels: usize,
    pub tolerance: f64,
    pub closed_form_tolerance: f64,
}

impl Default for ValueParams {
    fn default() -> Self {
        ValueParams { export: false, policies: 50, lipschitz_levels: 3, tolerance: 1e-10, closed_form_tolerance: 1e-9 }
    }
}

/// Driftable |x| with controls {−1, 0, 1} and no noise has the value
/// `max(|x(t)| − (T − t), 0)`.
fn closed_form_applies(s: &Scenario) -> bool {
    let mut pts: Vec<f64> = s.controls().points().iter().filter(|p| p.len() == 1).map(|p| p[0]).collect();
    pts.sort_by(f64::total_cmp);
    s.coefficients().name() == "driftable_abs"
        && s.noise().dims == 0
        && s.state_dim() == 1
        && s.controls().len() == 3
        && pts == [-1.0, 0.0, 1.0]
}

static EXPORT_COUNTER: AtomicUsize = AtomicUsize::new(0);

fn export_in_memory(tbl: &ValueTable) -> pathhjb::Result<Vec<(String, Vec<u8>)>> {
    let dir = std::env::temp_dir().join(format!(
        "pathhjb-export-{}-{}",
        std::process::id(),
        EXPORT_COUNTER.fetch_add(1, Ordering::SeqCst)
    ));
    let res = (|| {
        let mut files = Vec::new();
        for p in export_table(tbl, &dir)? {
            let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            files.push((format!("table/{name}"), std::fs::read(&p)?));
        }
        Ok(files)
    })();
    let _ = std::fs::remove_dir_all(&dir);
    res
}

fn value(cfg: &ExperimentConfig) -> Out {
    let p = &cfg.value;
    let s = scenario(cfg)?;
    let g = s.grid();
    let n = g.steps();
    let start = s.initial().anchor();
    let tbl = Arc::new(solve_value(&s, &dp(cfg, p.tolerance))?);
    let mut out = TaskOutput::default();
    out.summary.insert("root_value".into(), tbl.root_value());
    out.summary.insert("entries".into(), tbl.len() as f64);
    out.summary.insert("max_abs_value".into(), tbl.max_abs_value());

    let rows: Vec<Vec<String>> = tbl
        .layer(start)
        .iter()
        .map(|e| {
            vec![e.node.to_string(), e.ctrl_seq.to_string(), num(e.value), e.argmin.map_or(String::new(), |a| a.to_string())]
        })
        .collect();
    out.file("value_root.csv", csv_bytes(&["node", "ctrl_seq", "value", "argmin"], &rows)?);

    if closed_form_applies(&s) {
        let mut rows = Vec::new();
        let mut worst = 0.0f64;
        for i in start..=n {
            for e in tbl.layer(i) {
                let x = e.path.value(i, 0);
                let exact = (x.abs() - (g.horizon() - g.time(i))).max(0.0);
                let err = (e.value - exact).abs();
                worst = worst.max(err);
                rows.push(vec![i.to_string(), e.node.to_string(), num(x), num(e.value), num(exact), num(err)]);
            }
        }
        out.file("closed_form.csv", csv_bytes(&["step", "node", "x", "value", "closed_form", "error"], &rows)?);
        out.check("closed_form", worst <= p.closed_form_tolerance, worst, p.closed_form_tolerance, "closed_form.csv");
    }

    if p.policies > 0 && start < n {
        let mut rows = Vec::new();
        let mut min_gap = f64::INFINITY;
        for k in 0..p.policies {
            let seed = stream(cfg.seed, "cli_policy", k as u64).gen();
            let pol = ControlPolicy::pseudo_random(seed, s.controls().len());
            for a in start..n {
                for b in a + 1..=n {
                    let gap = supermartingale_gap(&tbl, &s, &pol, a, b)?;
                    min_gap = min_gap.min(gap);
                    rows.push(vec!["random".into(), k.to_string(), a.to_string(), b.to_string(), num(gap)]);
                }
            }
        }
        let opt = tbl.argmin_policy(&s);
        let mut opt_gap = 0.0f64;
        for a in start..=n {
            for b in a..=n {
                let gap = supermartingale_gap(&tbl, &s, &opt, a, b)?;
                opt_gap = opt_gap.max(gap.abs());
                rows.push(vec!["argmin".into(), "0".into(), a.to_string(), b.to_string(), num(gap)]);
            }
        }
        out.file("supermartingale.csv", csv_bytes(&["policy", "id", "from", "to", "gap"], &rows)?);
        out.check("supermartingale", min_gap >= -p.tolerance, min_gap, -p.tolerance, "supermartingale.csv");
        out.check("argmin_martingale", opt_gap <= p.tolerance, opt_gap, p.tolerance, "supermartingale.csv");
    }

    if p.lipschitz_levels > 0 {
        let rep = lipschitz_sweep(&tbl, &s, p.lipschitz_levels, cfg.caps.lattice as u128)?;
        out.file("lipschitz.json", json(&rep)?);
        out.check("lipschitz_ratio", rep.max_ratio <= rep.bound, rep.max_ratio, rep.bound, "lipschitz.json");
        out.check("value_bound", rep.max_abs_value <= rep.value_bound, rep.max_abs_value, rep.value_bound, "lipschitz.json");
    }

    if p.export {
        out.files.extend(export_in_memory(&tbl)?);
    }
    Ok(out)
}

// ---------------------------------------------------------------- dpp

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DppParams {
    pub tolerance: f64,
}

impl Default for DppParams {
    fn default() -> Self {
        DppParams { tolerance: 1e-10 }
    }
}

fn dpp(cfg: &ExperimentConfig) -> Out {
    let p = &cfg.dpp;
    let s = scenario(cfg)?;
    let c = dp(cfg, p.tolerance);
    let tbl = solve_value(&s, &c)?;
    let rows = dpp_sweep(&tbl, &s, &c)?;
    let worst = rows.iter().map(|r| r.residual).fold(0.0, f64::max);
    let mut out = TaskOutput::default();
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| vec![r.tau.to_string(), r.tau_hat.to_string(), r.node.to_string(), r.ctrl_seq.to_string(), num(r.residual)])
        .collect();
    out.file("dpp_residuals.csv", csv_bytes(&["tau", "tau_hat", "node", "ctrl_seq", "residual"], &body)?);
    out.check("dpp_residual", worst <= p.tolerance, worst, p.tolerance, "dpp_residuals.csv");
    out.summary.insert("residuals".into(), rows.len() as f64);
    out.summary.insert("max_residual".into(), worst);
    out.summary.insert("root_value".into(), tbl.root_value());
    Ok(out)
}

// ---------------------------------------------------------------- sandwich

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SandwichParams {
    pub eps: f64,
    pub delta: f64,
    pub k: f64,
    pub partition: usize,
    pub levels: usize,
    /// Mollifier width as a fraction of ε.
    pub width_ratio: f64,
    pub points: usize,
    /// Parameters halved from one point to the next: `eps`, `delta` or both.
    pub sweep: Vec<String>,
    /// PDE nodes in the noise direction; defaults to 1 without noise, 21 otherwise.
    pub ny: Option<usize>,
    pub nx: usize,
    /// Largest allowed ratio between fitted constants across the sweep.
    pub band: f64,
}

impl Default for SandwichParams {
    fn default() -> Self {
        SandwichParams {
            eps: 0.4,
            delta: 0.4,
            k: 1.0,
            partition: 2,
            levels: 1,
            width_ratio: 0.25,
            points: 3,
            sweep: vec!["eps".into(), "delta".into()],
            ny: None,
            nx: 41,
            band: 10.0,
        }
    }
}

fn sandwich(cfg: &ExperimentConfig) -> Out {
    let p = &cfg.sandwich;
    if p.points == 0 {
        return Err(schema("sandwich.points must be positive"));
    }
    if let Some(bad) = p.sweep.iter().find(|x| *x != "eps" && *x != "delta") {
        return Err(schema(format!("unknown sweep parameter {bad}")));
    }
    let s = scenario(cfg)?;
    let halve = |name: &str, v: f64, j: usize| if p.sweep.iter().any(|x| x == name) { v / 2f64.powi(j as i32) } else { v };
    let settings: Vec<ApproxParams> = (0..p.points)
        .map(|j| {
            let e = halve("eps", p.eps, j);
            ApproxParams::new(p.partition, e, p.k, halve("delta", p.delta, j), p.levels, p.width_ratio * e)
        })
        .collect::<pathhjb::Result<_>>()?;
    let c = dp(cfg, 1e-10);
    let tbl = solve_value(&s, &c)?;
    let ny = p.ny.unwrap_or(if s.noise().dims == 0 { 1 } else { 21 });
    let study = sandwich_gap_study(&s, &tbl, &settings, &PdeGrid::for_scenario(&s, ny, p.nx), &c)?;

    let mut out = TaskOutput::default();
    let rows: Vec<Vec<String>> = study
        .rows
        .iter()
        .enumerate()
        .map(|(j, r)| {
            vec![
                j.to_string(),
                num(r.eps),
                num(r.delta),
                num(r.k),
                num(r.max_upper_gap),
                num(r.max_lower_gap),
                num(r.gap),
                num(r.fitted_constant),
                r.violations.to_string(),
            ]
        })
        .collect();
    out.file(
        "sandwich.csv",
        csv_bytes(
            &["setting", "eps", "delta", "k", "max_upper_gap", "max_lower_gap", "gap", "fitted_constant", "violations"],
            &rows,
        )?,
    );
    let series = Series {
        name: "sandwich_gap".into(),
        x_label: "eps(1+k)+delta".into(),
        y_label: "max gap".into(),
        points: study.rows.iter().map(|r| (r.eps * (1.0 + r.k) + r.delta, r.gap)).collect(),
        log: true,
    };
    out.files.extend(convergence_files(&[series])?);
    let violations: usize = study.rows.iter().map(|r| r.violations).sum();
    out.check("sandwich_inequality", violations == 0, violations as f64, 0.0, "sandwich.csv");
    if p.points > 1 {
        out.check("gap_decreasing", study.decreasing, study.decreasing as u8 as f64, 1.0, "sandwich.csv");
        out.check("fitted_band", study.band_ratio < p.band, study.band_ratio, p.band, "sandwich.csv");
    }
    out.summary.insert("band_ratio".into(), study.band_ratio);
    out.summary.insert("root_value".into(), tbl.root_value());
    Ok(out)
}

// ---------------------------------------------------------------- probe

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TestFunctionConfig {
    /// `value`, or `value_tilted` (the value plus `∓c·(t − t_τ)` on the sub and super sides).
    pub name: String,
    pub c: f64,
}

impl Default for TestFunctionConfig {
    fn default() -> Self {
        TestFunctionConfig { name: "value".into(), c: 0.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeParams {
    pub points: usize,
    pub ks: Vec<f64>,
    pub levels: usize,
    pub shells: usize,
    pub tolerance: f64,
    pub test_function: TestFunctionConfig,
    /// Range of the extra time tilt `c` used for the shift check.
    pub shift_range: [f64; 2],
    pub shift_tolerance: f64,
}

impl Default for ProbeParams {
    fn default() -> Self {
        ProbeParams {
            points: 20,
            ks: vec![0.5, 1.0, 2.0],
            levels: 3,
            shells: 3,
            tolerance: 1e-6,
            test_function: TestFunctionConfig::default(),
            shift_range: [0.1, 2.0],
            shift_tolerance: 1e-9,
        }
    }
}

fn probe(cfg: &ExperimentConfig) -> Out {
    let p = &cfg.probe;
    if p.ks.is_empty() || p.ks.iter().any(|k| !(*k > 0.0)) {
        return Err(schema("probe.ks must be a nonempty list of positive numbers"));
    }
    if !(p.shift_range[0] < p.shift_range[1]) {
        return Err(schema("probe.shift_range must be increasing"));
    }
    let tf = &p.test_function;
    if tf.name != "value" && tf.name != "value_tilted" {
        return Err(Error::UnknownName(format!("test function {}", tf.name)).into());
    }
    let s = scenario(cfg)?;
    let g = s.grid();
    let n = g.steps();
    let start = s.initial().anchor();
    if start + 2 > n {
        return Err(Error::InvalidParameter("probes need at least two steps after the initial prefix".into()).into());
    }
    let tbl = Arc::new(solve_value(&s, &dp(cfg, 1e-10))?);
    let v: Arc<dyn RandomField> = Arc::new(ValueField::new(tbl, s.clone()));
    let tree = s.tree();
    let cap = cfg.caps.lattice as u128;

    let mut rows: Vec<(usize, ProbeReport)> = Vec::new();
    let mut shift_rows = Vec::new();
    let (mut sub_max, mut sup_min, mut shift_err) = (f64::NEG_INFINITY, f64::INFINITY, 0.0f64);
    for id in 0..p.points {
        let mut rng = stream(cfg.seed, "cli_probe", id as u64);
        let tau = rng.gen_range(start..=n - 2);
        let k = p.ks[rng.gen_range(0..p.ks.len())];
        let xi = random_extension(s.initial(), tau - start, k, &mut rng)?;
        let node = (rng.gen::<u64>() as u128 % tree.nodes_u128(tau)) as usize;
        let tilt = if tf.name == "value_tilted" { tf.c.abs() } else { 0.0 };
        let phi_sub: Arc<dyn RandomField> = Arc::new(TimeTilted::new(v.clone(), tau, -tilt));
        let phi_sup: Arc<dyn RandomField> = Arc::new(TimeTilted::new(v.clone(), tau, tilt));
        let run = |phi: &dyn RandomField, side| viscosity_probe(&*v, &s, phi, tau, &xi, node, k, p.levels, side, p.shells, cap);
        let sub = run(&*phi_sub, ProbeSide::Sub)?;
        let sup = run(&*phi_sup, ProbeSide::Super)?;
        let c = rng.gen_range(p.shift_range[0]..p.shift_range[1]);
        let sub_c = run(&TimeTilted::new(phi_sub.clone(), tau, -c), ProbeSide::Sub)?;
        let sup_c = run(&TimeTilted::new(phi_sup.clone(), tau, c), ProbeSide::Super)?;
        let err = (sup_c.margin - (sup.margin - c)).abs().max((sub_c.margin - (sub.margin + c)).abs());
        sub_max = sub_max.max(sub.margin);
        sup_min = sup_min.min(sup.margin);
        shift_err = shift_err.max(err);
        shift_rows.push(vec![
            id.to_string(),
            tau.to_string(),
            num(k),
            num(c),
            num(sub.margin),
            num(sub_c.margin),
            num(sup.margin),
            num(sup_c.margin),
            num(err),
        ]);
        rows.push((id, sub));
        rows.push((id, sup));
    }
    let mut out = TaskOutput::default();
    let mut buf = Vec::new();
    write_probe_csv(&rows, &mut buf)?;
    out.file("probes.csv", buf);
    out.file(
        "probe_shift.csv",
        csv_bytes(
            &["xi_id", "tau", "k", "c", "sub", "sub_shifted", "super", "super_shifted", "shift_error"],
            &shift_rows,
        )?,
    );
    if p.points > 0 {
        out.check("sub_margin", sub_max <= p.tolerance, sub_max, p.tolerance, "probes.csv");
        out.check("super_margin", sup_min >= -p.tolerance, sup_min, -p.tolerance, "probes.csv");
        out.check("shift_exact", shift_err <= p.shift_tolerance, shift_err, p.shift_tolerance, "probe_shift.csv");
    }
    Ok(out)
}

// ---------------------------------------------------------------- demo_habit

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HabitDemoParams {
    /// Noise leaves along which the optimal consumption is replayed.
    pub paths: usize,
    pub tolerance: f64,
}

impl Default for HabitDemoParams {
    fn default() -> Self {
        HabitDemoParams { paths: 8, tolerance: 1e-12 }
    }
}

fn demo_habit(cfg: &ExperimentConfig) -> Out {
    let p = &cfg.demo_habit;
    let sc = cfg.scenario.as_ref().ok_or_else(|| schema("demo_habit needs a scenario block"))?;
    if sc.coefficients.name != "habit" {
        return Err(schema(format!("demo_habit needs the habit coefficients, got {}", sc.coefficients.name)));
    }
    let hp: HabitParams = if sc.coefficients.params.is_null() {
        HabitParams::default()
    } else {
        serde_json::from_value(sc.coefficients.params.clone()).map_err(|e| schema(e.to_string()))?
    };
    let habit = Habit::new(hp.clone());
    let s = sc.build()?;
    let g = s.grid();
    let n = g.steps();
    let start = s.initial().anchor();
    let tbl = Arc::new(solve_value(&s, &dp(cfg, 1e-10))?);
    let pol = tbl.argmin_policy(&s);
    let tree = s.tree();
    let leaves = tree.nodes_u128(n);
    let paths = (p.paths as u128).min(leaves).max(1);

    let mut rows = Vec::new();
    let mut worst = 0.0f64;
    let mut final_c = 0.0;
    for j in 0..paths {
        let node = (j * leaves / paths) as usize;
        let w = tree.path(n, node)?;
        let tr = integrate_state(&s, &pol, &w, start, s.initial())?;
        for i in start..=n {
            let x = tr.path.truncate(i)?;
            let wi = w.truncate(i)?;
            let z = habit.living_standard(i, &x, &wi);
            let gamma: Vec<f64> = (0..=i).map(|t| habit.gamma(t, &wi)).collect();
            let kernel: Vec<Vec<f64>> =
                (0..=i).map(|t| (0..t).map(|r| (-hp.decay * (g.time(t) - g.time(r))).exp()).collect()).collect();
            let z2 = habit_living_standard(i, &x, &gamma, &kernel)?;
            worst = worst.max((z - z2).abs());
            let rate = if i < n { num(s.controls().point(tr.controls[i - start])[0]) } else { String::new() };
            rows.push(vec![
                j.to_string(),
                node.to_string(),
                i.to_string(),
                num(g.time(i)),
                num(x.value(i, 0)),
                rate,
                num(z),
            ]);
        }
        final_c += tr.path.value(n, 0);
    }
    let mut out = TaskOutput::default();
    out.file(
        "habit_paths.csv",
        csv_bytes(&["path", "node", "step", "t", "consumption", "rate", "living_standard"], &rows)?,
    );
    let root = tbl.root_value();
    let bound = s.constant_l() * (g.horizon() + 1.0);
    out.file("habit_value.csv", csv_bytes(&["root_value", "value_bound"], &[vec![num(root), num(bound)]])?);
    out.check("living_standard_agreement", worst <= p.tolerance, worst, p.tolerance, "habit_paths.csv");
    out.check("value_bound", root.abs() <= bound, root.abs(), bound, "habit_value.csv");
    out.summary.insert("root_value".into(), root);
    out.summary.insert("mean_terminal_consumption".into(), final_c / paths as f64);
    Ok(out)
}

// ---------------------------------------------------------------- demo_shift

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EtaParams {
    Constant { value: Vec<f64> },
    ScaledNoise { scale: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShiftParams {
    pub eta: EtaParams,
    pub samples: usize,
    pub tolerance: f64,
}

impl Default for ShiftParams {
    fn default() -> Self {
        ShiftParams { eta: EtaParams::Constant { value: vec![0.25] }, samples: 50, tolerance: 1e-10 }
    }
}

fn demo_shift(cfg: &ExperimentConfig) -> Out {
    let p = &cfg.demo_shift;
    let s = scenario(cfg)?;
    let d = s.state_dim();
    let (eta, back, constant): (EtaFn, EtaFn, Option<Vec<f64>>) = match &p.eta {
        EtaParams::Constant { value } => {
            let neg = value.iter().map(|v| -v).collect();
            (eta_constant(value.clone()), eta_constant(neg), Some(value.clone()))
        }
        EtaParams::ScaledNoise { scale } => {
            let neg = scale.iter().map(|v| -v).collect();
            (eta_scaled_noise(scale.clone()), eta_scaled_noise(neg), None)
        }
    };
    let len = match &p.eta {
        EtaParams::Constant { value } => value.len(),
        EtaParams::ScaledNoise { scale } => scale.len(),
    };
    if len != d {
        return Err(Error::Dimension { expected: d, got: len }.into());
    }
    let shifted = shift_by_eta(&s, eta);
    let round = shift_by_eta(&shifted, back);
    let (c0, c1) = (s.coefficients(), round.coefficients());
    let g = s.grid();
    let n = g.steps();
    let start = s.initial().anchor();
    let mut rows = Vec::new();
    let mut worst = 0.0f64;
    for j in 0..p.samples {
        let mut rng = stream(cfg.seed, "cli_shift", j as u64);
        let w = sample_noise(&s, &mut rng, j as u64)?;
        let x = random_extension(s.initial(), n - start, 1.0, &mut rng)?;
        let i = if start < n { rng.gen_range(start..n) } else { n };
        let (xi, wi) = (x.truncate(i)?, w.truncate(i)?);
        let u = s.controls().point(rng.gen_range(0..s.controls().len()));
        let drift = c0.drift(i, &xi, &wi, u).iter().zip(c1.drift(i, &xi, &wi, u)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let running = (c0.running_cost(i, &xi, &wi, u) - c1.running_cost(i, &xi, &wi, u)).abs();
        let terminal = (c0.terminal_cost(&x, &w) - c1.terminal_cost(&x, &w)).abs();
        worst = worst.max(drift).max(running).max(terminal);
        rows.push(vec![j.to_string(), i.to_string(), num(drift), num(running), num(terminal)]);
    }
    let mut out = TaskOutput::default();
    out.file("shift_roundtrip.csv", csv_bytes(&["sample", "step", "drift_err", "running_err", "terminal_err"], &rows)?);
    out.check("round_trip", worst <= p.tolerance, worst, p.tolerance, "shift_roundtrip.csv");

    let c = dp(cfg, 1e-10);
    let base = solve_value(&s, &c)?.root_value();
    let moved = solve_value(&shifted, &c)?.root_value();
    let mut row = vec![num(base), num(moved)];
    if let Some(h) = constant {
        let translated = solve_value(&s.with_initial(s.initial().translated(&h))?, &c)?.root_value();
        let diff = (moved - translated).abs();
        row.extend([num(translated), num(diff)]);
        out.check("translated_value", diff <= p.tolerance, diff, p.tolerance, "shift_value.csv");
        out.summary.insert("translated_root_value".into(), translated);
    } else {
        row.extend([String::new(), String::new()]);
    }
    out.file("shift_value.csv", csv_bytes(&["root_value", "shifted_root_value", "translated_root_value", "difference"], &[row])?);
    out.summary.insert("root_value".into(), base);
    out.summary.insert("shifted_root_value".into(), moved);
    Ok(out)
}

// ---------------------------------------------------------------- ito

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ItoParams {
    /// Random cylinder test functions decomposed on the tree.
    pub functions: usize,
    pub steps: usize,
    pub m: usize,
    pub terms: usize,
    pub tolerance: f64,
    /// Grid sizes for the `x(t)²` refinement; each a multiple of 4, each double the last.
    pub refinement: Vec<usize>,
    /// Allowed relative deviation of successive residual ratios from 2.
    pub slack: f64,
}

impl Default for ItoParams {
    fn default() -> Self {
        ItoParams {
            functions: 20,
            steps: 5,
            m: 1,
            terms: 3,
            tolerance: 1e-12,
            refinement: vec![8, 16, 32, 64],
            slack: 0.2,
        }
    }
}

fn xsq_residual(n: usize) -> pathhjb::Result<f64> {
    let g = TimeGrid::new(1.0, n)?;
    let u = ControlSet::new(vec![vec![0.8]])?;
    let s = Scenario::new(g, u, NoiseModel::quantized(g, 0), Arc::new(DriftableAbs::new(1.0)), GridPath::scalar(g, &[0.3])?)?;
    let f = FnField::new(|i, x, _| Ok(x.value(i, 0).powi(2)));
    let noise = NoiseTree::new(g, 0)?.path(n, 0)?;
    let xr = GridPath::scalar(g, &vec![0.3; n / 4 + 1])?;
    ito_kunita_residual(&f, &s, &ControlPolicy::constant(0), &noise, n / 4, 3 * n / 4, &xr, 1e-4)
}

fn ito(cfg: &ExperimentConfig) -> Out {
    let p = &cfg.ito;
    if p.steps < 2 {
        return Err(schema("ito.steps must be at least 2"));
    }
    if p.refinement.len() < 2 || p.refinement.iter().any(|n| *n == 0 || n % 4 != 0) || p.refinement.windows(2).any(|w| w[1] != 2 * w[0]) {
        return Err(schema("ito.refinement needs at least two doubling multiples of 4"));
    }
    let g = TimeGrid::new(1.0, p.steps)?;
    let tree = NoiseTree::new(g, p.m)?;
    check_cap("tree leaves", tree.nodes_u128(p.steps), cfg.caps.dp)?;
    let mut rows = Vec::new();
    let (mut res, mut diff) = (0.0f64, 0.0f64);
    for j in 0..p.functions {
        let mut rng = stream(cfg.seed, "cli_ito", j as u64);
        let cut = rng.gen_range(1..p.steps);
        let phi = CylinderTestFunction::random(rng.gen(), g, &[0, cut, p.steps], p.terms, 1, p.m)?;
        let r = rng.gen_range(0..p.steps);
        let vals: Vec<f64> = (0..=r).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let xr = GridPath::scalar(g, &vals)?;
        let a = ito_decompose(&phi, r, &xr, &tree)?;
        let b = ito_decompose_martingale_first(&phi, r, &xr, &tree)?;
        let (ra, rb, dd) = (reconstruction_residual(&a), reconstruction_residual(&b), a.max_difference(&b));
        res = res.max(ra).max(rb);
        diff = diff.max(dd);
        rows.push(vec![j.to_string(), r.to_string(), cut.to_string(), num(ra), num(rb), num(dd)]);
    }
    let mut out = TaskOutput::default();
    out.file(
        "ito_reconstruction.csv",
        csv_bytes(&["function", "r", "cut", "residual_drift_first", "residual_martingale_first", "order_difference"], &rows)?,
    );
    out.check("reconstruction", res <= p.tolerance, res, p.tolerance, "ito_reconstruction.csv");
    out.check("order_agreement", diff <= p.tolerance, diff, p.tolerance, "ito_reconstruction.csv");

    let resid: Vec<f64> = p.refinement.iter().map(|&n| xsq_residual(n)).collect::<pathhjb::Result<_>>()?;
    let mut worst = 0.0f64;
    let mut rows = Vec::new();
    for (j, (&n, &r)) in p.refinement.iter().zip(&resid).enumerate() {
        let ratio = if j > 0 { resid[j - 1] / r } else { f64::NAN };
        if j > 0 {
            worst = worst.max((ratio / 2.0 - 1.0).abs());
        }
        rows.push(vec![n.to_string(), num(1.0 / n as f64), num(r), if j > 0 { num(ratio) } else { String::new() }]);
    }
    out.file("ito_kunita.csv", csv_bytes(&["N", "dt", "residual", "ratio"], &rows)?);
    let series = Series {
        name: "ito_kunita".into(),
        x_label: "dt".into(),
        y_label: "residual".into(),
        points: p.refinement.iter().zip(&resid).map(|(&n, &r)| (1.0 / n as f64, r)).collect(),
        log: true,
    };
    out.files.extend(convergence_files(&[series])?);
    out.check("refinement_halving", worst <= p.slack, worst, p.slack, "ito_kunita.csv");
    Ok(out)
}

// ---------------------------------------------------------------- snell

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SnellParams {
    /// Random integer reward processes per tree.
    pub cases: usize,
    /// `[N, m]` pairs.
    pub trees: Vec<[usize; 2]>,
}

impl Default for SnellParams {
    fn default() -> Self {
        SnellParams { cases: 10, trees: vec![[1, 1], [2, 1], [3, 1], [4, 1], [2, 2]] }
    }
}

/// Number of stopping rules on a tree with `b` branches below depth `n` of `big_n`.
fn rule_count(b: usize, n: usize, big_n: usize) -> u128 {
    if n == big_n {
        return 1;
    }
    let sub = rule_count(b, n + 1, big_n);
    let mut acc: u128 = 1;
    for _ in 0..b {
        acc = acc.saturating_mul(sub);
    }
    acc.saturating_add(1)
}

/// Every stopping rule as the stopping step at each leaf.
fn all_rules(b: usize, n: usize, big_n: usize) -> Vec<Vec<usize>> {
    if n == big_n {
        return vec![vec![big_n]];
    }
    let leaves = b.pow((big_n - n) as u32);
    let sub = all_rules(b, n + 1, big_n);
    let mut out = vec![vec![n; leaves]];
    let mut idx = vec![0usize; b];
    loop {
        out.push(idx.iter().flat_map(|&i| sub[i].clone()).collect());
        let mut k = 0;
        loop {
            if k == b {
                return out;
            }
            idx[k] += 1;
            if idx[k] < sub.len() {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}

fn snell(cfg: &ExperimentConfig) -> Out {
    let p = &cfg.snell;
    let mut rows = Vec::new();
    let mut mismatches = 0usize;
    let mut case = 0u64;
    for &[n, m] in &p.trees {
        if n == 0 || m == 0 {
            return Err(schema("snell.trees entries need N ≥ 1 and m ≥ 1"));
        }
        let tree = NoiseTree::new(TimeGrid::new(1.0, n)?, m)?;
        let count = rule_count(tree.branches(), 0, n);
        check_cap("stopping rules", count, cfg.caps.lattice)?;
        let rules = all_rules(tree.branches(), 0, n);
        for _ in 0..p.cases {
            let mut rng = stream(cfg.seed, "cli_snell", case);
            let y: Vec<Vec<f64>> =
                (0..=n).map(|i| (0..tree.nodes(i)).map(|_| rng.gen_range(-50i32..50) as f64).collect()).collect();
            let brute = rules
                .iter()
                .map(|r| r.iter().enumerate().map(|(leaf, &t)| y[t][tree.ancestor(leaf, n, t)]).sum::<f64>() / tree.nodes(n) as f64)
                .fold(f64::NEG_INFINITY, f64::max);
            let root = snell_envelope(&y, &tree)?.root();
            let ok = root == brute;
            mismatches += (!ok) as usize;
            rows.push(vec![case.to_string(), n.to_string(), m.to_string(), rules.len().to_string(), num(root), num(brute), ok.to_string()]);
            case += 1;
        }
    }
    let mut out = TaskOutput::default();
    out.file("snell.csv", csv_bytes(&["case", "N", "m", "rules", "envelope_root", "brute_force", "match"], &rows)?);
    out.check("snell_optimality", mismatches == 0, mismatches as f64, 0.0, "snell.csv");
    out.summary.insert("cases".into(), case as f64);
    Ok(out)
}

// ---------------------------------------------------------------- net

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetParams {
    pub cases: usize,
}

impl Default for NetParams {
    fn default() -> Self {
        NetParams { cases: 10 }
    }
}

fn sup_dist(a: &GridPath, b: &GridPath) -> f64 {
    (0..=a.anchor())
        .map(|i| (0..a.dim()).map(|c| (a.value(i, c) - b.value(i, c)).powi(2)).sum::<f64>().sqrt())
        .fold(0.0, f64::max)
}

fn net(cfg: &ExperimentConfig) -> Out {
    let p = &cfg.net;
    let cap = cfg.caps.lattice as u128;
    let mut rows = Vec::new();
    let mut total_bad = 0usize;
    for case in 0..p.cases {
        let mut rng = stream(cfg.seed, "cli_net", case as u64);
        let n = rng.gen_range(3..=4);
        let g = TimeGrid::new(1.0, n)?;
        let k: f64 = rng.gen_range(0.5..2.0);
        let base = GridPath::scalar(g, &[rng.gen_range(-0.5..0.5)])?;
        let prefix = random_extension(&base, rng.gen_range(0..2), k, &mut rng)?;
        let spec = PathClassSpec::new(k, prefix, n)?;
        let delta: f64 = rng.gen_range(0.15..1.0);
        let levels = [3, 5][rng.gen_range(0..2)];
        let net = build_epsilon_net(&spec, delta, levels, cap)?;
        let lattice = enumerate_class_lattice(&spec, levels, cap)?;
        let r = net.radius();
        let centers = net.centers();
        let mut cells: Vec<Vec<usize>> = vec![Vec::new(); centers.len()];
        let mut bad = 0usize;
        for (idx, x) in lattice.iter().enumerate() {
            let owner = (0..centers.len()).find(|&j| sup_dist(x, &centers[j]) <= r);
            match owner {
                Some(o) if net.assign(x) == Some(o) => cells[o].push(idx),
                _ => bad += 1,
            }
        }
        let mut diameter = 0.0f64;
        for cell in &cells {
            for &a in cell {
                for &b in cell {
                    diameter = diameter.max(sup_dist(&lattice[a], &lattice[b]));
                }
            }
        }
        if diameter >= delta {
            bad += 1;
        }
        total_bad += bad;
        rows.push(vec![
            case.to_string(),
            n.to_string(),
            num(k),
            num(delta),
            levels.to_string(),
            lattice.len().to_string(),
            centers.len().to_string(),
            num(diameter),
            bad.to_string(),
        ]);
    }
    let mut out = TaskOutput::default();
    out.file(
        "net.csv",
        csv_bytes(&["case", "N", "k", "delta", "levels", "paths", "cells", "max_diameter", "violations"], &rows)?,
    );
    out.check("net_validity", total_bad == 0, total_bad as f64, 0.0, "net.csv");
    Ok(out)
}

// ---------------------------------------------------------------- heat

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeatParams {
    pub nx: Vec<usize>,
    /// Diffusion coefficient of the auxiliary noise.
    pub delta: f64,
    /// Variance of the Gaussian terminal bump.
    pub variance: f64,
    pub half_width: f64,
    pub min_order: f64,
}

impl Default for HeatParams {
    fn default() -> Self {
        HeatParams { nx: vec![41, 81, 161], delta: 0.6, variance: 0.25, half_width: 5.0, min_order: 0.9 }
    }
}

fn heat_error(p: &HeatParams, nx: usize) -> pathhjb::Result<f64> {
    let g = TimeGrid::new(1.0, 2)?;
    let pg = PdeGrid::new(0.0, p.half_width, 1, nx)?;
    let s2 = p.variance;
    let term: Vec<f64> = pg.x_nodes().iter().map(|&x| (-x * x / (2.0 * s2)).exp()).collect();
    let flat = MarkovFn::new(1, |_, _, _, _| 0.0, |_, _, _, _| 0.0);
    let layers = solve_hjb_slab(&flat, &pg, g, p.delta, 0, 2, term)?;
    let var = s2 + p.delta * p.delta;
    Ok(pg
        .x_nodes()
        .iter()
        .enumerate()
        .map(|(j, &x)| (layers[0][j] - (s2 / var).sqrt() * (-x * x / (2.0 * var)).exp()).abs())
        .fold(0.0, f64::max))
}

fn heat(cfg: &ExperimentConfig) -> Out {
    let p = &cfg.heat;
    if p.nx.len() < 2 || p.nx.iter().any(|&n| n < 3) {
        return Err(schema("heat.nx needs at least two grids of 3 or more nodes"));
    }
    let errs: Vec<f64> = p.nx.iter().map(|&n| heat_error(p, n)).collect::<pathhjb::Result<_>>()?;
    let dx: Vec<f64> = p.nx.iter().map(|&n| 2.0 * p.half_width / (n - 1) as f64).collect();
    let mut rows = Vec::new();
    let mut min_order = f64::INFINITY;
    for j in 0..errs.len() {
        let order = if j > 0 { (errs[j - 1] / errs[j]).ln() / (dx[j - 1] / dx[j]).ln() } else { f64::NAN };
        if j > 0 {
            min_order = min_order.min(order);
        }
        rows.push(vec![p.nx[j].to_string(), num(dx[j]), num(errs[j]), if j > 0 { num(order) } else { String::new() }]);
    }
    let mut out = TaskOutput::default();
    out.file("heat.csv", csv_bytes(&["nx", "dx", "error", "order"], &rows)?);
    let series = Series {
        name: "heat_error".into(),
        x_label: "dx".into(),
        y_label: "sup error".into(),
        points: dx.iter().copied().zip(errs.iter().copied()).collect(),
        log: true,
    };
    out.files.extend(convergence_files(&[series])?);
    out.check("pde_order", min_order >= p.min_order, min_order, p.min_order, "heat.csv");
    Ok(out)
}
