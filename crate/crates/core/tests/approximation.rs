use std::sync::Arc;

use pathhjb::approximation::{
    build_cylinder_approximation, build_sandwich, compare_sandwich, estimate_approx_error, estimate_gradient_bound,
    project_path, projection_error, sandwich_gap_study, solve_hjb_slab, solve_linear_bsde, solve_markovian_hjb,
    ApproxParams, MarkovFn, PdeGrid,
};
use pathhjb::control_value::{solve_value, DPConfig};
use pathhjb::path_space::{enumerate_class_lattice, GridPath, PathClassSpec, TimeGrid};
use pathhjb::scenario::{builtin, Coefficients, ControlSet, FnCoefficients, NoiseModel, NoiseTree, Scenario};
use pathhjb::Error;
use rand::{Rng, SeedableRng};

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

fn cylinder(n: usize, seed: u64) -> Scenario {
    scenario(grid(1.0, n), &[-1.0, 1.0], 1, Arc::new(builtin::RandomCylinder::generate(seed, 1.0, 1)), 0.1)
}

fn clipped(n: usize) -> Scenario {
    let c = FnCoefficients::new("clipped", 1, 1.0, 1.0)
        .with_drift(|_, _, _, v| v.to_vec())
        .with_running(|i, x, _, _| x.value(i, 0).clamp(-1.0, 1.0))
        .with_terminal(|x, _| x.value(x.anchor(), 0).clamp(-1.0, 1.0));
    scenario(grid(1.0, n), &[-1.0, 0.0, 1.0], 0, Arc::new(c), 0.6)
}

fn params(partition: usize, levels: usize, width: f64, delta: f64) -> ApproxParams {
    ApproxParams::new(partition, 0.5, 1.0, delta, levels, width).unwrap()
}

fn lattice(s: &Scenario, k: f64, levels: usize, end: usize) -> Vec<GridPath> {
    let spec = PathClassSpec::new(k, s.initial().clone(), end).unwrap();
    enumerate_class_lattice(&spec, levels, 1 << 20).unwrap()
}

#[test]
fn params_are_validated() {
    assert!(ApproxParams::new(2, 0.5, 1.0, 0.3, 1, 0.1).is_ok());
    for (eps, delta, width) in [(0.0, 0.3, 0.1), (0.5, 0.0, 0.1), (0.5, 1.0, 0.1), (0.5, 0.3, -0.1)] {
        assert!(matches!(ApproxParams::new(2, eps, 1.0, delta, 1, width), Err(Error::InvalidParameter(_))));
    }
}

#[test]
fn projection_cases() {
    let g = grid(1.0, 8);
    let c = GridPath::constant(g, &[0.7], 8).unwrap();
    let p = project_path(&c, 1).unwrap();
    assert_eq!(p.anchor(), 8);
    assert!((0..=8).all(|i| p.value(i, 0) == 0.7));
    assert_eq!(projection_error(&c, 1).unwrap(), 0.0);

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    let vals: Vec<f64> = (0..=8).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let x = GridPath::scalar(g, &vals).unwrap();
    let p = project_path(&x, 3).unwrap();
    for i in 0..=8 {
        assert_eq!(p.value(i, 0), x.value(i, 0));
    }

    // slope-k line: the hold error reaches k·T/2^M at the end of each hold cell
    for (k, m) in [(1.0, 0), (2.0, 1), (0.5, 2), (3.0, 3)] {
        let vals: Vec<f64> = (0..=8).map(|i| 0.2 + k * g.time(i)).collect();
        let x = GridPath::scalar(g, &vals).unwrap();
        let err = projection_error(&x, m).unwrap();
        let expected = k * 1.0 / f64::powi(2.0, m as i32);
        assert!((err - expected).abs() < 1e-12, "k={k} m={m}: {err} vs {expected}");
        let p = project_path(&x, m).unwrap();
        let hold = 8 >> m;
        for i in 0..8 {
            assert_eq!(p.value(i, 0), x.value(i / hold * hold, 0));
        }
        assert_eq!(p.value(8, 0), x.value(8, 0));
    }

    // class members: the error never exceeds k·T/2^M
    let s = driftable(4, 0.0);
    for x in lattice(&s, 1.5, 3, 4) {
        for m in 0..=2 {
            assert!(projection_error(&x, m).unwrap() <= 1.5 / f64::powi(2.0, m as i32) + 1e-12);
        }
    }
    assert!(project_path(&x_short(), 1).is_err());
}

fn x_short() -> GridPath {
    // three steps do not split into two dyadic cells
    GridPath::scalar(grid(1.0, 3), &[0.0, 0.1]).unwrap()
}

#[test]
fn lookback_hints_are_honest() {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
    let g = grid(1.0, 6);
    let coeffs: Vec<Arc<dyn Coefficients>> = vec![
        Arc::new(builtin::DriftableAbs::new(1.0)),
        Arc::new(builtin::RandomCylinder::generate(5, 1.0, 1)),
    ];
    for c in coeffs {
        let m = c.noise_dim();
        for _ in 0..50 {
            let step = rng.gen_range(0..=6);
            let xs: Vec<f64> = (0..=step).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let ws: Vec<Vec<f64>> = (0..=step).map(|_| (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
            let keep_x = c.path_lookback(step).unwrap();
            let keep_w = c.noise_lookback(step).unwrap();
            let xs2: Vec<f64> =
                xs.iter().enumerate().map(|(j, &v)| if keep_x.contains(&j) { v } else { v + 5.0 }).collect();
            let ws2: Vec<Vec<f64>> = ws
                .iter()
                .enumerate()
                .map(|(j, r)| if keep_w.contains(&j) { r.clone() } else { r.iter().map(|v| v - 3.0).collect() })
                .collect();
            let (x, x2) = (GridPath::scalar(g, &xs).unwrap(), GridPath::scalar(g, &xs2).unwrap());
            let (w, w2) = (GridPath::from_rows(g, &ws).unwrap(), GridPath::from_rows(g, &ws2).unwrap());
            if step < 6 {
                for v in [-1.0, 1.0] {
                    assert_eq!(c.drift(step, &x, &w, &[v]), c.drift(step, &x2, &w2, &[v]));
                    assert_eq!(c.running_cost(step, &x, &w, &[v]), c.running_cost(step, &x2, &w2, &[v]));
                }
            } else {
                assert_eq!(c.terminal_cost(&x, &w), c.terminal_cost(&x2, &w2));
            }
        }
    }
}

#[test]
fn fixed_point_has_zero_errors() {
    let s = cylinder(4, 9);
    let cyl = build_cylinder_approximation(&s, &params(4, 2, 0.0, 0.3)).unwrap();
    let rep = estimate_approx_error(&s, &cyl, 1.0, 3, 1 << 20).unwrap();
    for row in rep.running.iter().chain(&rep.drift) {
        assert!(row.iter().all(|&e| e == 0.0));
    }
    assert!(rep.terminal.iter().all(|&e| e == 0.0));
    assert_eq!(rep.combined, 0.0);
    assert!(rep.pass);
}

#[test]
fn construction_rejects_misaligned_partitions() {
    let s = cylinder(4, 9);
    assert!(build_cylinder_approximation(&s, &params(3, 0, 0.0, 0.3)).is_err());
    assert!(build_cylinder_approximation(&s, &params(2, 2, 0.0, 0.3)).is_err());
    assert!(build_cylinder_approximation(&s, &params(2, 1, 0.0, 0.3)).is_ok());
}

#[test]
fn cylinder_freezes_at_hold_points() {
    let s = cylinder(4, 21);
    let cyl = build_cylinder_approximation(&s, &params(2, 1, 0.0, 0.3)).unwrap();
    let c = s.coefficients();
    let g = s.grid();
    let x = GridPath::scalar(g, &[0.1, 0.3, -0.2, 0.4, 0.0]).unwrap();
    let w = GridPath::scalar(g, &[0.0, 0.5, 0.0, -0.5, 0.0]).unwrap();
    for i in 0..4 {
        let held: Vec<f64> = (0..=i).map(|l| if l == i { x.value(i, 0) } else { x.value(l / 2 * 2, 0) }).collect();
        let wheld: Vec<f64> = (0..=i).map(|l| if l == i { w.value(i, 0) } else { w.value(l / 2 * 2, 0) }).collect();
        let (xh, wh) = (GridPath::scalar(g, &held).unwrap(), GridPath::scalar(g, &wheld).unwrap());
        let (xi, wi) = (x.truncate(i).unwrap(), w.truncate(i).unwrap());
        for v in [-1.0, 1.0] {
            assert_eq!(cyl.drift(i, &xi, &wi, &[v]), c.drift(i, &xh, &wh, &[v]));
            assert_eq!(cyl.running_cost(i, &xi, &wi, &[v]), c.running_cost(i, &xh, &wh, &[v]));
        }
    }
    assert_eq!(cyl.lipschitz(), c.lipschitz());
}

#[test]
fn mollified_clip_error_is_within_width() {
    let s = clipped(4);
    for w in [0.4, 0.2, 0.1, 0.05] {
        let cyl = build_cylinder_approximation(&s, &params(4, 0, w, 0.3)).unwrap();
        let rep = estimate_approx_error(&s, &cyl, 1.0, 3, 1 << 20).unwrap();
        let worst = rep.running.iter().flatten().chain(&rep.terminal).fold(0.0f64, |a, &b| a.max(b));
        assert!(worst <= w + 1e-12, "width {w}: {worst}");
        assert!(worst > 0.0);
        // drift is v in both
        assert!(rep.drift.iter().flatten().all(|&e| e == 0.0));

        // brute-force recomputation of the sup error at each step
        for i in 0..4 {
            let mut sup = 0.0f64;
            for x in lattice(&s, 1.0, 3, i) {
                let wp = GridPath::from_rows(s.grid(), &vec![vec![]; i + 1]).unwrap();
                for v in s.controls().points() {
                    let e = (cyl.running_cost(i, &x, &wp, v) - s.coefficients().running_cost(i, &x, &wp, v)).abs();
                    sup = sup.max(e);
                }
            }
            assert!((sup - rep.running[i][0]).abs() < 1e-15);
        }
        // combined L² size 2w at most, so the pass flag follows the threshold
        let tight = ApproxParams::new(4, w, 1.0, 0.3, 0, w).unwrap();
        let cyl = build_cylinder_approximation(&s, &tight).unwrap();
        let rep = estimate_approx_error(&s, &cyl, 1.0, 3, 1 << 20).unwrap();
        assert!(rep.combined <= 2.0 * w + 1e-12);
        assert_eq!(rep.pass, rep.combined < w * 2.0);
    }
}

#[test]
fn refinement_never_increases_errors() {
    let s = clipped(4);
    let mut last: Option<Vec<f64>> = None;
    for (nc, w) in [(1, 0.4), (2, 0.2), (4, 0.1)] {
        let cyl = build_cylinder_approximation(&s, &params(nc, 0, w, 0.3)).unwrap();
        let rep = estimate_approx_error(&s, &cyl, 1.0, 3, 1 << 20).unwrap();
        let flat: Vec<f64> =
            rep.running.iter().flatten().chain(rep.drift.iter().flatten()).chain(&rep.terminal).copied().collect();
        if let Some(prev) = &last {
            for (a, b) in prev.iter().zip(&flat) {
                assert!(*b <= *a + 1e-15, "{b} > {a}");
            }
        }
        last = Some(flat);
    }
}

#[test]
fn larger_class_never_lowers_errors() {
    let s = cylinder(4, 33);
    let cyl = build_cylinder_approximation(&s, &params(2, 1, 0.1, 0.3)).unwrap();
    let a = estimate_approx_error(&s, &cyl, 1.0, 3, 1 << 20).unwrap();
    // 5 levels at 2k contain the 3-level lattice at k
    let b = estimate_approx_error(&s, &cyl, 2.0, 5, 1 << 20).unwrap();
    for (ra, rb) in a.running.iter().zip(&b.running).chain(a.drift.iter().zip(&b.drift)) {
        for (x, y) in ra.iter().zip(rb) {
            assert!(y >= x);
        }
    }
    for (x, y) in a.terminal.iter().zip(&b.terminal) {
        assert!(y >= x);
    }
    assert!(b.combined >= a.combined);
    assert!(matches!(estimate_approx_error(&s, &cyl, 1.0, 3, 10), Err(Error::CapExceeded { .. })));
}

#[test]
fn bsde_cases() {
    let g = grid(1.0, 3);
    let t1 = NoiseTree::new(g, 1).unwrap();

    let sol = solve_linear_bsde(&vec![2.5; 8], &vec![vec![0.0; 1], vec![0.0; 2], vec![0.0; 4]], &t1).unwrap();
    for (i, row) in sol.y.iter().enumerate() {
        assert_eq!(row.len(), 1 << i);
        assert!(row.iter().all(|&y| y == 2.5));
    }
    assert!(sol.z.iter().flatten().flatten().all(|&z| z == 0.0));

    // deterministic driver, zero terminal
    let gfun = |t: f64| 1.0 + t * t;
    let driver: Vec<Vec<f64>> = (0..3).map(|i| vec![gfun(g.time(i)); 1 << i]).collect();
    let sol = solve_linear_bsde(&vec![0.0; 8], &driver, &t1).unwrap();
    for i in 0..=3 {
        let expected: f64 = (i..3).map(|j| gfun(g.time(j)) * g.dt()).sum();
        assert!(sol.y[i].iter().all(|&y| (y - expected).abs() < 1e-14));
    }
    assert!(sol.z.iter().flatten().flatten().all(|&z| z.abs() < 1e-14));

    // Y = W on a two-step tree, Z = 1
    let g2 = grid(1.0, 2);
    let t2 = NoiseTree::new(g2, 1).unwrap();
    let term: Vec<f64> = t2.layer(2).unwrap().iter().map(|w| w.value(2, 0)).collect();
    let sol = solve_linear_bsde(&term, &[vec![0.0], vec![0.0; 2]], &t2).unwrap();
    for i in 0..=2 {
        for (node, w) in t2.layer(i).unwrap().iter().enumerate() {
            assert!((sol.y[i][node] - w.value(i, 0)).abs() < 1e-14);
        }
    }
    assert!(sol.z.iter().flatten().flatten().all(|&z| (z - 1.0).abs() < 1e-14));
}

#[test]
fn bsde_tree_identity_and_representation() {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
    for m in [0usize, 1, 2] {
        let g = grid(0.7, 3);
        let tree = NoiseTree::new(g, m).unwrap();
        let b = tree.branches();
        let term: Vec<f64> = (0..tree.nodes(3)).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let driver: Vec<Vec<f64>> = (0..3).map(|i| (0..tree.nodes(i)).map(|_| rng.gen_range(0.0..1.0)).collect()).collect();
        let sol = solve_linear_bsde(&term, &driver, &tree).unwrap();
        assert_eq!(sol.y[3], term);
        for i in 0..3 {
            for node in 0..tree.nodes(i) {
                let kids: Vec<f64> = (0..b).map(|k| sol.y[i + 1][tree.child(node, k)]).collect();
                let mean = kids.iter().sum::<f64>() / b as f64;
                assert!((sol.y[i][node] - mean - driver[i][node] * g.dt()).abs() < 1e-14);
                assert_eq!(sol.z[i][node].len(), m);
                for c in 0..m {
                    let proj: f64 = (0..b).map(|k| kids[k] * tree.increment(k)[c]).sum::<f64>() / b as f64 / g.dt();
                    assert!((sol.z[i][node][c] - proj).abs() < 1e-12);
                }
                if m == 1 {
                    for k in 0..b {
                        let rebuilt = mean + sol.z[i][node][0] * tree.increment(k)[0];
                        assert!((rebuilt - kids[k]).abs() < 1e-14);
                    }
                }
            }
        }
    }
    let tree = NoiseTree::new(grid(1.0, 2), 1).unwrap();
    assert!(solve_linear_bsde(&[0.0; 3], &[vec![0.0], vec![0.0; 2]], &tree).is_err());
}

fn flat_problem(run: f64) -> MarkovFn {
    MarkovFn::new(1, |_, _, _, _| 0.0, move |_, _, _, _| run)
}

#[test]
fn pde_constant_and_forcing() {
    let g = grid(1.0, 4);
    let pg = PdeGrid::new(2.0, 3.0, 9, 21).unwrap();
    let n = pg.ny() * pg.nx();
    let layers = solve_hjb_slab(&flat_problem(0.0), &pg, g, 0.5, 0, 4, vec![1.25; n]).unwrap();
    assert_eq!(layers.len(), 5);
    for l in &layers {
        assert!(l.iter().all(|&u| (u - 1.25).abs() < 1e-14));
    }
    let layers = solve_hjb_slab(&flat_problem(1.0), &pg, g, 0.5, 1, 4, vec![-0.5; n]).unwrap();
    for (k, l) in layers.iter().enumerate() {
        let expected = -0.5 + (1.0 - g.time(k + 1));
        assert!(l.iter().all(|&u| (u - expected).abs() < 1e-12));
    }
}

fn heat_error(nx: usize, delta: f64) -> f64 {
    let g = grid(1.0, 2);
    let pg = PdeGrid::new(0.0, 5.0, 1, nx).unwrap();
    let s2 = 0.25f64;
    let term: Vec<f64> = pg.x_nodes().iter().map(|&x| (-x * x / (2.0 * s2)).exp()).collect();
    let layers = solve_hjb_slab(&flat_problem(0.0), &pg, g, delta, 0, 2, term).unwrap();
    let var = s2 + delta * delta;
    let mut err = 0.0f64;
    for (j, &x) in pg.x_nodes().iter().enumerate() {
        let exact = (s2 / var).sqrt() * (-x * x / (2.0 * var)).exp();
        err = err.max((layers[0][j] - exact).abs());
    }
    err
}

#[test]
fn pde_heat_refinement_order() {
    let errs: Vec<f64> = [41, 81, 161].iter().map(|&n| heat_error(n, 0.6)).collect();
    for w in errs.windows(2) {
        let order = (w[0] / w[1]).log2();
        assert!(order >= 0.9, "{errs:?}");
    }
}

#[test]
fn pde_drift_transports() {
    // β = 1, f = 0: u(t, x) = G(x + (T − t)) away from the boundary
    let g = grid(1.0, 2);
    let pg = PdeGrid::new(0.0, 4.0, 1, 401).unwrap();
    let p = MarkovFn::new(1, |_, _, _, _| 1.0, |_, _, _, _| 0.0);
    let term: Vec<f64> = pg.x_nodes().iter().map(|&x| (x / 2.0).tanh()).collect();
    let layers = solve_hjb_slab(&p, &pg, g, 0.05, 0, 2, term).unwrap();
    for (j, &x) in pg.x_nodes().iter().enumerate() {
        if x.abs() < 2.0 {
            assert!((layers[0][j] - ((x + 1.0) / 2.0).tanh()).abs() < 0.02);
        }
    }
}

#[test]
fn pde_cfl_violation_is_reported() {
    let g = grid(1.0, 2);
    let mut pg = PdeGrid::new(0.0, 1.0, 1, 101).unwrap();
    pg.substeps = Some(1);
    let n = pg.nx();
    assert!(matches!(solve_hjb_slab(&flat_problem(0.0), &pg, g, 0.5, 0, 2, vec![0.0; n]), Err(Error::Cfl { .. })));
    assert!(PdeGrid::new(0.0, 1.0, 1, 1).is_err());
}

#[test]
fn field_constant_and_forcing() {
    let g = grid(1.0, 4);
    let c = FnCoefficients::new("const", 1, 2.0, 0.0).with_terminal(|_, _| 1.5);
    let s = scenario(g, &[0.0], 0, Arc::new(c), 0.2);
    let cyl = build_cylinder_approximation(&s, &params(2, 1, 0.0, 0.3)).unwrap();
    let field = solve_markovian_hjb(&cyl, &params(2, 1, 0.0, 0.3), &PdeGrid::for_scenario(&s, 1, 41)).unwrap();
    let w = |i: usize| GridPath::from_rows(g, &vec![vec![]; i + 1]).unwrap();
    for i in 0..=4 {
        for x in lattice(&s, 1.0, 3, i) {
            assert!((field.value(i, &x, &w(i)).unwrap() - 1.5).abs() < 1e-12);
        }
    }
    assert_eq!(estimate_gradient_bound(&field), 0.0);

    let c = FnCoefficients::new("unit", 1, 2.0, 0.0).with_running(|_, _, _, _| 1.0).with_terminal(|_, _| 0.5);
    let s = scenario(g, &[0.0], 0, Arc::new(c), 0.2);
    let cyl = build_cylinder_approximation(&s, &params(2, 1, 0.0, 0.3)).unwrap();
    let field = solve_markovian_hjb(&cyl, &params(2, 1, 0.0, 0.3), &PdeGrid::for_scenario(&s, 1, 41)).unwrap();
    for i in 0..=4 {
        for x in lattice(&s, 1.0, 3, i) {
            assert!((field.value(i, &x, &w(i)).unwrap() - (0.5 + 1.0 - g.time(i))).abs() < 1e-12);
        }
    }
}

#[test]
fn gradient_bound_cases() {
    let g = grid(1.0, 4);
    for a in [0.7f64, -1.3] {
        let c = FnCoefficients::new("lin", 1, 10.0, a.abs()).with_terminal(move |x, _| a * x.value(x.anchor(), 0));
        let s = scenario(g, &[0.0], 0, Arc::new(c), 0.0);
        let p = params(2, 1, 0.0, 0.4);
        let field = solve_markovian_hjb(&build_cylinder_approximation(&s, &p).unwrap(), &p, &PdeGrid::for_scenario(&s, 1, 41))
            .unwrap();
        assert!((estimate_gradient_bound(&field) - a.abs()).abs() < 1e-12);
    }
    let s = driftable(4, 0.0);
    for nx in [21, 41, 81] {
        let p = params(2, 1, 0.1, 0.3);
        let field = solve_markovian_hjb(&build_cylinder_approximation(&s, &p).unwrap(), &p, &PdeGrid::for_scenario(&s, 1, nx))
            .unwrap();
        let lt = estimate_gradient_bound(&field);
        assert!(lt > 0.5 && lt <= 1.0 + 1e-12, "nx {nx}: {lt}");
    }
}

#[test]
fn field_reads_frozen_samples() {
    // G depends on the held value x(T/2): the field must track it through the slabs
    let g = grid(1.0, 4);
    let c = FnCoefficients::new("lag", 1, 1.0, 1.0).with_terminal(|x, _| x.value(2, 0).clamp(-1.0, 1.0));
    let s = scenario(g, &[0.0], 0, Arc::new(c), 0.2);
    let p = params(2, 1, 0.0, 0.2);
    let field = solve_markovian_hjb(&build_cylinder_approximation(&s, &p).unwrap(), &p, &PdeGrid::for_scenario(&s, 1, 81))
        .unwrap();
    let w = |i: usize| GridPath::from_rows(g, &vec![vec![]; i + 1]).unwrap();
    for x in lattice(&s, 1.0, 3, 3) {
        let v = field.value(3, &x, &w(3)).unwrap();
        assert!((v - x.value(2, 0)).abs() < 1e-12);
    }
    // before T/2 the held value is still moving: u(t, x) = E[clip(x + δB)] ≈ x
    for x in lattice(&s, 1.0, 3, 1) {
        let v = field.value(1, &x, &w(1)).unwrap();
        assert!((v - x.value(1, 0)).abs() < 5e-3, "{v} vs {}", x.value(1, 0));
    }
}

fn dp() -> DPConfig {
    DPConfig::default()
}

#[test]
fn sandwich_brackets_driftable_value() {
    let s = driftable(4, 0.25);
    let tbl = solve_value(&s, &dp()).unwrap();
    let p = ApproxParams::new(2, 0.2, 1.0, 0.2, 1, 0.05).unwrap();
    let cyl = build_cylinder_approximation(&s, &p).unwrap();
    let rep = estimate_approx_error(&s, &cyl, p.k, p.lattice_levels, 1 << 20).unwrap();
    let field = solve_markovian_hjb(&cyl, &p, &PdeGrid::for_scenario(&s, 1, 81)).unwrap();
    let aux = NoiseTree::new(s.grid(), 1).unwrap();
    let sw = build_sandwich(&field, &s, &p, &rep, &aux).unwrap();
    assert!(sw.c1 > 0.0 && sw.c2 == 4.0 * 1.0 * (sw.c1 + 1.0));
    for pt in &sw.points {
        let env = sw.y.y[pt.step][pt.w_node] + p.delta * sw.c2 * sw.yb.y[pt.step][pt.b_node];
        assert!((pt.upper - pt.lower - 2.0 * env).abs() < 1e-12);
        assert!(pt.upper >= pt.lower);
    }
    let chk = compare_sandwich(&sw, &tbl, &s, 1e-8).unwrap();
    assert_eq!(chk.points, sw.points.len());
    assert_eq!(chk.violations, 0, "{chk:?}");
    assert!(chk.pass);
    // terminal envelope dominates G on its own
    for pt in sw.points.iter().filter(|p| p.step == 4) {
        assert!(pt.lower <= pt.path.value(4, 0).abs() + 1e-12);
        assert!(pt.upper >= pt.path.value(4, 0).abs() - 1e-12);
    }
}

#[test]
fn sandwich_without_errors_is_the_delta_envelope() {
    let s = cylinder(4, 12);
    let p = ApproxParams::new(4, 0.2, 1.0, 0.1, 2, 0.0).unwrap();
    let cyl = build_cylinder_approximation(&s, &p).unwrap();
    let rep = estimate_approx_error(&s, &cyl, p.k, p.lattice_levels, 1 << 20).unwrap();
    assert_eq!(rep.combined, 0.0);
    let field = solve_markovian_hjb(&cyl, &p, &PdeGrid::for_scenario(&s, 21, 21)).unwrap();
    let aux = NoiseTree::new(s.grid(), 1).unwrap();
    let sw = build_sandwich(&field, &s, &p, &rep, &aux).unwrap();
    assert!(sw.y.y.iter().flatten().all(|&y| y == 0.0));
    for pt in &sw.points {
        let gap = pt.upper - pt.lower;
        assert!((gap - 2.0 * p.delta * sw.c2 * sw.yb.y[pt.step][pt.b_node]).abs() < 1e-12);
        assert!((0.5 * (pt.upper + pt.lower) - pt.center).abs() < 1e-12);
    }
}

#[test]
fn sandwich_brackets_random_cylinder_value() {
    let s = cylinder(4, 7);
    let tbl = solve_value(&s, &dp()).unwrap();
    let p = ApproxParams::new(2, 0.2, 1.0, 0.2, 1, 0.05).unwrap();
    let cyl = build_cylinder_approximation(&s, &p).unwrap();
    let rep = estimate_approx_error(&s, &cyl, p.k, p.lattice_levels, 1 << 20).unwrap();
    let field = solve_markovian_hjb(&cyl, &p, &PdeGrid::for_scenario(&s, 41, 41)).unwrap();
    let aux = NoiseTree::new(s.grid(), 1).unwrap();
    let sw = build_sandwich(&field, &s, &p, &rep, &aux).unwrap();
    let chk = compare_sandwich(&sw, &tbl, &s, 1e-8).unwrap();
    assert_eq!(chk.violations, 0, "{chk:?}");
}

#[test]
fn gap_study_shrinks_with_eps_and_delta() {
    let s = driftable(4, 0.25);
    let tbl = solve_value(&s, &dp()).unwrap();
    let settings: Vec<ApproxParams> = [0.4, 0.2, 0.1]
        .iter()
        .map(|&e| ApproxParams::new(2, e, 1.0, e, 1, e / 4.0).unwrap())
        .collect();
    let study = sandwich_gap_study(&s, &tbl, &settings, &PdeGrid::for_scenario(&s, 1, 81), &dp()).unwrap();
    assert_eq!(study.rows.len(), 3);
    for w in study.rows.windows(2) {
        assert!(w[1].gap < w[0].gap, "{:?}", study.rows);
    }
    assert!(study.rows.iter().all(|r| r.violations == 0));
    assert!(study.band_ratio < 10.0, "{}", study.band_ratio);
    for r in &study.rows {
        assert!((r.fitted_constant - r.gap / (r.eps * (1.0 + r.k) + r.delta)).abs() < 1e-15);
        assert_eq!(r.gap, r.max_upper_gap.max(r.max_lower_gap));
    }

    let one = sandwich_gap_study(&s, &tbl, &settings[..1], &PdeGrid::for_scenario(&s, 1, 81), &dp()).unwrap();
    assert_eq!(one.rows[0], study.rows[0]);
    assert_eq!(one.band_ratio, 1.0);
}
