//! Acceptance run: one line per criterion, non-zero exit if any fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::Instant;

use pathhjb::approximation::{sandwich_gap_study, solve_hjb_slab, ApproxParams, MarkovFn, PdeGrid};
use pathhjb::control_value::{dpp_sweep, lipschitz_sweep, solve_value, supermartingale_gap, DPConfig};
use pathhjb::dynamics::{integrate_state, stability_check, sup_bound_check, time_regularity_excess, ControlPolicy};
use pathhjb::path_space::{build_epsilon_net, enumerate_class_lattice, GridPath, PathClassSpec, TimeGrid};
use pathhjb::scenario::{builtin, Coefficients, ControlSet, NoiseModel, NoiseTree, Scenario};
use pathhjb::viscosity::{
    ito_decompose, ito_decompose_martingale_first, ito_kunita_residual, reconstruction_residual, snell_envelope,
    viscosity_probe, CylinderTestFunction, FnField, ProbeSide, TimeTilted, ValueField,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = (bool, String);

fn grid(t: f64, n: usize) -> TimeGrid {
    TimeGrid::new(t, n).unwrap()
}

fn scenario(g: TimeGrid, controls: &[f64], m: usize, c: Arc<dyn Coefficients>, x0: f64) -> Scenario {
    let u = ControlSet::new(controls.iter().map(|&v| vec![v]).collect()).unwrap();
    Scenario::new(g, u, NoiseModel::quantized(g, m), c, GridPath::scalar(g, &[x0]).unwrap()).unwrap()
}

fn driftable(n: usize, x0: f64) -> Scenario {
    scenario(grid(1.0, n), &[-1.0, 0.0, 1.0], 0, Arc::new(builtin::DriftableAbs::new(1.0)), x0)
}

fn cylinder(n: usize, seed: u64, controls: &[f64], x0: f64) -> Scenario {
    scenario(grid(1.0, n), controls, 1, Arc::new(builtin::RandomCylinder::generate(seed, 1.0, 1)), x0)
}

fn sci(v: &[f64]) -> String {
    format!("[{}]", v.iter().map(|x| format!("{x:.3e}")).collect::<Vec<_>>().join(", "))
}

fn dp() -> DPConfig {
    DPConfig::default()
}

fn closed_form(t: f64, x: f64) -> f64 {
    (x.abs() - (1.0 - t)).max(0.0)
}

fn best_open_loop(n: usize, from: usize, x: f64) -> f64 {
    let dt = 1.0 / n as f64;
    let len = n - from;
    let mut best = f64::INFINITY;
    for code in 0..3usize.pow(len as u32) {
        let mut c = code;
        let mut y = x;
        for _ in 0..len {
            y += ((c % 3) as f64 - 1.0) * dt;
            c /= 3;
        }
        best = best.min(y.abs());
    }
    best
}

fn c01_closed_form() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut worst_enum = 0.0f64;
    let mut nodes = 0;
    for x0 in [0.0, 0.5, -1.0 / 6.0, 1.0] {
        let s = driftable(6, x0);
        let t = solve_value(&s, &dp()).unwrap();
        let g = s.grid();
        for i in 0..=6 {
            for e in t.layer(i) {
                let x = e.path.value(i, 0);
                worst = worst.max((e.value - closed_form(g.time(i), x)).abs());
                worst_enum = worst_enum.max((e.value - best_open_loop(6, i, x)).abs());
                nodes += 1;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    (
        worst <= 1e-9 && worst_enum <= 1e-9 && secs < 10.0,
        format!("{nodes} nodes, max err {worst:.2e}, open-loop err {worst_enum:.2e}, {secs:.2}s"),
    )
}

fn c02_dpp() -> Outcome {
    let start = Instant::now();
    let s = cylinder(4, 6, &[-1.0, 1.0], 0.1);
    let t = solve_value(&s, &dp()).unwrap();
    let rows = dpp_sweep(&t, &s, &dp()).unwrap();
    let worst = rows.iter().map(|r| r.residual).fold(0.0, f64::max);
    let secs = start.elapsed().as_secs_f64();
    (worst <= 1e-10 && secs < 60.0, format!("{} residuals, max {worst:.2e}, {secs:.2}s", rows.len()))
}

fn c03_flow_bounds() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut violations = 0;
    let mut worst = f64::NEG_INFINITY;
    for trial in 0..1000u64 {
        let n = 5;
        let s = scenario(
            grid(1.0, n),
            &[-1.0, 0.0, 1.0],
            1,
            Arc::new(builtin::RandomCylinder::generate(trial % 25, 1.0, 1)),
            rng.gen_range(-1.0..1.0),
        );
        let tree = s.tree();
        let w = tree.path(n, rng.gen_range(0..tree.nodes(n))).unwrap();
        let pol = ControlPolicy::pseudo_random(rng.gen(), 3);
        let tr = integrate_state(&s, &pol, &w, 0, s.initial()).unwrap();
        let (lhs, rhs) = sup_bound_check(&s, &tr);
        let excess = time_regularity_excess(&s, &tr);
        let xi_hat = GridPath::scalar(s.grid(), &[rng.gen_range(-1.0..1.0)]).unwrap();
        let (dl, dr) = stability_check(&s, &pol, &w, s.initial(), &xi_hat).unwrap();
        worst = worst.max(lhs - rhs).max(excess).max(dl - dr);
        if lhs > rhs + 1e-12 || excess > 1e-12 || dl > dr + 1e-12 {
            violations += 1;
        }
    }
    (violations == 0, format!("1000 triples, {violations} violations, worst excess {worst:.2e}"))
}

fn c04_supermartingale() -> Outcome {
    let s = cylinder(4, 3, &[-1.0, 1.0], 0.1);
    let t = Arc::new(solve_value(&s, &dp()).unwrap());
    let mut min_gap = f64::INFINITY;
    for seed in 0..200 {
        let pol = ControlPolicy::pseudo_random(seed, 2);
        for a in 0..4 {
            for b in a + 1..=4 {
                min_gap = min_gap.min(supermartingale_gap(&t, &s, &pol, a, b).unwrap());
            }
        }
    }
    let opt = t.argmin_policy(&s);
    let mut opt_gap = 0.0f64;
    for a in 0..=4 {
        for b in a..=4 {
            opt_gap = opt_gap.max(supermartingale_gap(&t, &s, &opt, a, b).unwrap().abs());
        }
    }
    (
        min_gap >= -1e-10 && opt_gap <= 1e-10,
        format!("200 policies, min gap {min_gap:.2e}; argmin policy |gap| ≤ {opt_gap:.2e}"),
    )
}

fn c05_lipschitz() -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    for (name, s) in [("driftable_abs", driftable(4, 0.0)), ("random_cylinder", cylinder(4, 12, &[-1.0, 1.0], 0.1))] {
        let t = solve_value(&s, &dp()).unwrap();
        let rep = lipschitz_sweep(&t, &s, 3, 1 << 20).unwrap();
        ok &= rep.pass && rep.max_ratio <= rep.bound && rep.max_abs_value <= rep.value_bound;
        lines.push(format!(
            "{name}: {} pairs, ratio {:.3} ≤ {:.3}, |V| {:.3} ≤ {:.3}",
            rep.pairs, rep.max_ratio, rep.bound, rep.max_abs_value, rep.value_bound
        ));
    }
    (ok, lines.join("; "))
}

fn c06_ito_exactness() -> Outcome {
    let g = grid(1.0, 5);
    let tree = NoiseTree::new(g, 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut res, mut diff) = (0.0f64, 0.0f64);
    for seed in 0..20u64 {
        let cut = rng.gen_range(1..5);
        let phi = CylinderTestFunction::random(seed, g, &[0, cut, 5], 3, 1, 1).unwrap();
        let r = rng.gen_range(0..5);
        let vals: Vec<f64> = (0..=r).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let xr = GridPath::scalar(g, &vals).unwrap();
        let a = ito_decompose(&phi, r, &xr, &tree).unwrap();
        let b = ito_decompose_martingale_first(&phi, r, &xr, &tree).unwrap();
        res = res.max(reconstruction_residual(&a)).max(reconstruction_residual(&b));
        diff = diff.max(a.max_difference(&b));
    }
    (res <= 1e-12 && diff <= 1e-12, format!("20 functions, residual {res:.2e}, order difference {diff:.2e}"))
}

fn xsq_residual(n: usize) -> f64 {
    let g = grid(1.0, n);
    let s = scenario(g, &[0.8], 0, Arc::new(builtin::DriftableAbs::new(1.0)), 0.3);
    let u = FnField::new(|i, x, _| Ok(x.value(i, 0).powi(2)));
    let noise = NoiseTree::new(g, 0).unwrap().path(n, 0).unwrap();
    let xr = GridPath::scalar(g, &vec![0.3; n / 4 + 1]).unwrap();
    ito_kunita_residual(&u, &s, &ControlPolicy::constant(0), &noise, n / 4, 3 * n / 4, &xr, 1e-4).unwrap()
}

fn c07_ito_kunita() -> Outcome {
    let r: Vec<f64> = [8, 16, 32, 64].iter().map(|&n| xsq_residual(n)).collect();
    let ratios: Vec<f64> = r.windows(2).map(|w| w[0] / w[1]).collect();
    (
        ratios.iter().all(|q| (q - 2.0).abs() <= 0.4),
        format!("residuals {}, ratios {ratios:.3?}", sci(&r)),
    )
}

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

fn c08_snell() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut cases = 0;
    let mut mismatches = 0;
    for (n, m) in [(1, 1), (2, 1), (3, 1), (4, 1), (2, 2)] {
        let tree = NoiseTree::new(grid(1.0, n), m).unwrap();
        let rules = all_rules(tree.branches(), 0, n);
        for _ in 0..10 {
            let y: Vec<Vec<f64>> =
                (0..=n).map(|i| (0..tree.nodes(i)).map(|_| rng.gen_range(-50i32..50) as f64).collect()).collect();
            let brute = rules
                .iter()
                .map(|r| {
                    r.iter().enumerate().map(|(leaf, &t)| y[t][tree.ancestor(leaf, n, t)]).sum::<f64>()
                        / tree.nodes(n) as f64
                })
                .fold(f64::NEG_INFINITY, f64::max);
            cases += 1;
            if snell_envelope(&y, &tree).unwrap().root() != brute {
                mismatches += 1;
            }
        }
    }
    (mismatches == 0, format!("{cases} reward processes, {mismatches} mismatches"))
}

fn pairwise_sup(a: &GridPath, b: &GridPath) -> f64 {
    (0..=a.anchor())
        .map(|i| (0..a.dim()).map(|c| (a.value(i, c) - b.value(i, c)).powi(2)).sum::<f64>().sqrt())
        .fold(0.0, f64::max)
}

fn c09_net() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut bad = 0;
    let mut summary = Vec::new();
    for _ in 0..10 {
        let n = rng.gen_range(3..=4);
        let g = grid(1.0, n);
        let k: f64 = rng.gen_range(0.5..2.0);
        let prefix = rng.gen_range(0..2);
        let mut vals = vec![rng.gen_range(-0.5..0.5)];
        for _ in 0..prefix {
            let last: f64 = *vals.last().unwrap();
            vals.push(last + rng.gen_range(-k..k) * g.dt());
        }
        let spec = PathClassSpec::new(k, GridPath::scalar(g, &vals).unwrap(), n).unwrap();
        let delta: f64 = rng.gen_range(0.15..1.0);
        let levels = [3, 5][rng.gen_range(0..2)];
        let net = build_epsilon_net(&spec, delta, levels, 1 << 16).unwrap();
        let lattice = enumerate_class_lattice(&spec, levels, 1 << 16).unwrap();
        let r = net.radius();
        let centers = net.centers();
        let mut cells: Vec<Vec<usize>> = vec![Vec::new(); centers.len()];
        for (idx, p) in lattice.iter().enumerate() {
            let owners: Vec<usize> = (0..centers.len())
                .filter(|&j| pairwise_sup(p, &centers[j]) <= r && (0..j).all(|i| pairwise_sup(p, &centers[i]) > r))
                .collect();
            if owners.len() != 1 || net.assign(p) != Some(owners[0]) {
                bad += 1;
                continue;
            }
            cells[owners[0]].push(idx);
        }
        for cell in &cells {
            for &a in cell {
                for &b in cell {
                    if pairwise_sup(&lattice[a], &lattice[b]) >= delta {
                        bad += 1;
                    }
                }
            }
        }
        summary.push(format!("{}/{}", lattice.len(), centers.len()));
    }
    (bad == 0, format!("10 specs (paths/cells {}), {bad} violations", summary.join(" ")))
}

fn heat_error(nx: usize, delta: f64) -> f64 {
    let g = grid(1.0, 2);
    let pg = PdeGrid::new(0.0, 5.0, 1, nx).unwrap();
    let s2 = 0.25f64;
    let term: Vec<f64> = pg.x_nodes().iter().map(|&x| (-x * x / (2.0 * s2)).exp()).collect();
    let flat = MarkovFn::new(1, |_, _, _, _| 0.0, |_, _, _, _| 0.0);
    let layers = solve_hjb_slab(&flat, &pg, g, delta, 0, 2, term).unwrap();
    let var = s2 + delta * delta;
    pg.x_nodes()
        .iter()
        .enumerate()
        .map(|(j, &x)| (layers[0][j] - (s2 / var).sqrt() * (-x * x / (2.0 * var)).exp()).abs())
        .fold(0.0, f64::max)
}

fn c10_heat_order() -> Outcome {
    let start = Instant::now();
    let errs: Vec<f64> = [41, 81, 161].iter().map(|&n| heat_error(n, 0.6)).collect();
    let orders: Vec<f64> = errs.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
    let secs = start.elapsed().as_secs_f64();
    (
        orders.iter().all(|&o| o >= 0.9) && secs < 60.0,
        format!("errors {}, orders {orders:.2?}, {secs:.2}s", sci(&errs)),
    )
}

fn c11_sandwich() -> Outcome {
    let mut ok = true;
    let mut lines = Vec::new();
    let cases = [
        ("driftable_abs", driftable(4, 0.25), 1usize, 81usize),
        ("random_cylinder", cylinder(4, 7, &[-1.0, 1.0], 0.1), 21, 41),
    ];
    for (name, s, ny, nx) in cases {
        let tbl = solve_value(&s, &dp()).unwrap();
        let settings: Vec<ApproxParams> =
            [0.4, 0.2, 0.1].iter().map(|&e| ApproxParams::new(2, e, 1.0, e, 1, e / 4.0).unwrap()).collect();
        let study = sandwich_gap_study(&s, &tbl, &settings, &PdeGrid::for_scenario(&s, ny, nx), &dp()).unwrap();
        let violations: usize = study.rows.iter().map(|r| r.violations).sum();
        ok &= violations == 0 && study.decreasing && study.band_ratio < 10.0;
        let gaps: Vec<f64> = study.rows.iter().map(|r| r.gap).collect();
        lines.push(format!(
            "{name}: gaps {gaps:.3?}, band {:.2}, {violations} violations",
            study.band_ratio
        ));
    }
    (ok, lines.join("; "))
}

fn c12_probes() -> Outcome {
    let s = cylinder(4, 11, &[-1.0, 1.0], 0.1);
    let tbl = Arc::new(solve_value(&s, &dp()).unwrap());
    let v = ValueField::new(tbl, s.clone());
    let g = s.grid();
    let tree = s.tree();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let (mut sub_max, mut sup_min, mut shift_err) = (f64::NEG_INFINITY, f64::INFINITY, 0.0f64);
    for _ in 0..20 {
        let tau = rng.gen_range(0..=2usize);
        let k = [0.5, 1.0, 2.0][rng.gen_range(0..3)];
        let mut vals = vec![0.1];
        for _ in 0..tau {
            let last: f64 = *vals.last().unwrap();
            vals.push(last + rng.gen_range(-k..k) * g.dt());
        }
        let xi = GridPath::scalar(g, &vals).unwrap();
        let node = rng.gen_range(0..tree.nodes(tau));
        let sub = viscosity_probe(&v, &s, &v, tau, &xi, node, k, 3, ProbeSide::Sub, 3, 1 << 16).unwrap();
        let sup = viscosity_probe(&v, &s, &v, tau, &xi, node, k, 3, ProbeSide::Super, 3, 1 << 16).unwrap();
        sub_max = sub_max.max(sub.margin);
        sup_min = sup_min.min(sup.margin);
        let c: f64 = rng.gen_range(0.1..2.0);
        let up = TimeTilted::new(Arc::new(v.clone()), tau, c);
        let down = TimeTilted::new(Arc::new(v.clone()), tau, -c);
        let sup_c = viscosity_probe(&v, &s, &up, tau, &xi, node, k, 3, ProbeSide::Super, 3, 1 << 16).unwrap();
        let sub_c = viscosity_probe(&v, &s, &down, tau, &xi, node, k, 3, ProbeSide::Sub, 3, 1 << 16).unwrap();
        shift_err = shift_err.max((sup_c.margin - (sup.margin - c)).abs()).max((sub_c.margin - (sub.margin + c)).abs());
    }
    (
        sub_max <= 1e-6 && sup_min >= -1e-6 && shift_err <= 1e-9,
        format!("20 points, max sub margin {sub_max:.2e}, min super margin {sup_min:.2e}, shift error {shift_err:.2e}"),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 12] = [
        ("closed-form value match", c01_closed_form),
        ("DPP exactness", c02_dpp),
        ("flow bounds", c03_flow_bounds),
        ("supermartingale property", c04_supermartingale),
        ("Lipschitz bound", c05_lipschitz),
        ("Itô decomposition exactness", c06_ito_exactness),
        ("Itô–Kunita refinement", c07_ito_kunita),
        ("Snell optimality", c08_snell),
        ("ε-net validity", c09_net),
        ("PDE solver order", c10_heat_order),
        ("sandwich validity", c11_sandwich),
        ("viscosity probes", c12_probes),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let (pass, detail) = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            (false, format!("panicked: {}", msg.unwrap_or_default()))
        });
        if !pass {
            failed += 1;
        }
        println!("criterion {:>2} {:<28} {}  {}", i + 1, name, if pass { "PASS" } else { "FAIL" }, detail);
    }
    println!("{} of {} criteria pass", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
