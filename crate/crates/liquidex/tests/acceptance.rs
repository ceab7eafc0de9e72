//! Acceptance suite: one test per criterion, each printing a PASS line
//! (visible with `cargo test --test acceptance -- --nocapture`).

use std::time::Instant;

use liquidex::benchmark::{
    average_drift, mc_policy_value_bridge, DriftWeighting, FullInfoSolution,
};
use liquidex::boundary::{
    boundary_transforms, gamma_operator, solve_boundary, BoundaryTransforms, MonotoneBoundary,
    SolverConfig,
};
use liquidex::dynamics::RngStreamSpec;
use liquidex::execution::{default_horizon, paired_policy_comparison};
use liquidex::params::{derive, ModelParams};
use liquidex::value::{
    control_value, full_info_marginal, marginal_value, value_of_information, vhat,
    QuadratureConfig,
};

fn p1() -> ModelParams {
    ModelParams {
        mu0: -0.01,
        mu1: 0.007,
        sigma: 0.17,
        r: 0.07,
        kappa: 3.0,
        alpha: 0.5,
        pi0: 0.6,
    }
}

/// P2: the efficient-learning parameter set (value-of-information study).
fn p2() -> ModelParams {
    ModelParams {
        mu0: -0.012,
        mu1: 0.01,
        sigma: 0.15,
        r: 0.15,
        kappa: 1.0,
        alpha: 0.5,
        pi0: 0.3,
    }
}

/// P3: the inefficient-learning parameter set (high volatility).
fn p3() -> ModelParams {
    ModelParams {
        mu0: -0.012,
        mu1: 0.01,
        sigma: 0.5,
        r: 0.2,
        kappa: 1.0,
        alpha: 0.5,
        pi0: 0.5,
    }
}

fn default_solve(p: &ModelParams, seed: u64) -> (MonotoneBoundary, BoundaryTransforms, bool) {
    let cfg = SolverConfig {
        seed,
        ..SolverConfig::default()
    };
    let (b_inv, log) = solve_boundary(p, &cfg).expect("solve failed");
    let t = boundary_transforms(p, &b_inv).expect("transforms failed");
    (b_inv, t, log.converged)
}

fn quad(p: &ModelParams) -> QuadratureConfig {
    QuadratureConfig::for_params(p, 1e-3).unwrap()
}

/// Analytic partial derivatives of the closed-form full-information value,
/// branch by branch.
fn w_derivs(sol: &FullInfoSolution, x: f64, y: f64) -> (f64, f64, f64, f64) {
    let p = &sol.params;
    let (n, xs, al) = (sol.n, sol.x_star, p.alpha);
    let a_lim = sol.a_limit();
    let a = |y: f64| a_lim * (1.0 - (-al * n * y).exp());
    let a1 = |y: f64| a_lim * al * n * (-al * n * y).exp();
    let a2 = |y: f64| -a_lim * (al * n) * (al * n) * (-al * n * y).exp();
    if x < xs {
        let w = a(y) * (n * x).exp();
        (w, n * w, n * n * w, a1(y) * (n * x).exp())
    } else {
        let jump = (x - xs) / al;
        if y <= jump {
            let w = x.exp() / al * (1.0 - (-al * y).exp()) - p.kappa * y;
            let wx = x.exp() / al * (1.0 - (-al * y).exp());
            let wy = x.exp() * (-al * y).exp() - p.kappa;
            (w, wx, wx, wy)
        } else {
            let enx = (n * xs).exp();
            let w = a(y - jump) * enx + (x.exp() - xs.exp()) / al - p.kappa / al * (x - xs);
            let wx = -a1(y - jump) / al * enx + x.exp() / al - p.kappa / al;
            let wxx = a2(y - jump) / (al * al) * enx + x.exp() / al;
            let wy = a1(y - jump) * enx;
            (w, wx, wxx, wy)
        }
    }
}

#[test]
fn criterion_1_full_info_benchmark() {
    let start = Instant::now();
    let p = p1();
    // Part A: HJB residual of the closed form, analytic derivatives, on a
    // 100 x 20 grid per region and per drift.
    for mu in [p.mu0, p.mu1] {
        let sol = FullInfoSolution::new(&p, mu).unwrap();
        let xs = sol.x_star;
        for (x_lo, x_hi, waiting) in [(xs - 2.0, xs - 1e-6, true), (xs + 1e-6, xs + 1.5, false)] {
            for i in 0..100 {
                let x = x_lo + (x_hi - x_lo) * i as f64 / 99.0;
                for j in 0..20 {
                    let y = 0.05 + 8.0 * j as f64 / 19.0;
                    let (w, wx, wxx, wy) = w_derivs(&sol, x, y);
                    let scale = w.abs().max(1.0);
                    let lw = 0.5 * p.sigma * p.sigma * wxx + mu * wx - p.r * w;
                    let grad = (x.exp() - p.kappa) - p.alpha * wx - wy;
                    if waiting {
                        assert!(lw.abs() / scale <= 1e-6, "L w = {lw} at ({x}, {y})");
                        assert!(grad / scale <= 1e-6, "gradient {grad} at ({x}, {y})");
                    } else {
                        assert!(grad.abs() / scale <= 1e-6, "gradient {grad} at ({x}, {y})");
                        assert!(lw / scale <= 1e-6, "L w = {lw} at ({x}, {y})");
                    }
                }
            }
        }
    }
    // Part B: Monte-Carlo payoff of the reflected policy vs the closed form
    // at three (x, y) points (one per branch of the value function). The
    // within-step supremum is sampled exactly, so there is no step-size bias
    // beyond the O(r dt) discount timing.
    let horizon = default_horizon(&p, 1e-3);
    let dt = 1e-3;
    for (mu, dx, y) in [(p.mu1, 0.3, 0.5), (p.mu0, 0.1, 0.4), (p.mu1, -0.05, 0.5)] {
        let sol = FullInfoSolution::new(&p, mu).unwrap();
        let x = sol.x_star + dx;
        let w = sol.value(x, y).unwrap();
        let (mean, se) = mc_policy_value_bridge(&sol, x, y, 100_000, horizon, dt, 1001).unwrap();
        assert!(
            (mean - w).abs() <= 3.0 * se + 1e-9,
            "MC {mean} +- {se} vs closed form {w} at mu = {mu}, x = {x}, y = {y}"
        );
    }
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed <= 120.0, "runtime {elapsed:.1}s over 2 min budget");
    println!("[criterion 1] PASS: HJB residual <= 1e-6 and MC payoff within 3 se ({elapsed:.1}s)");
}

#[test]
fn criterion_2_boundary_solve_defaults() {
    let start = Instant::now();
    let p = p1();
    let cfg = SolverConfig::default();
    let (b_inv, log) = solve_boundary(&p, &cfg).unwrap();
    assert!(log.converged, "not converged at default settings");
    assert!(log.iterations.len() <= 50);
    // Monotone with pinned endpoints.
    assert_eq!(b_inv.values[0], 0.0);
    assert_eq!(*b_inv.values.last().unwrap(), cfg.clamp_hi);
    assert!(b_inv.values.windows(2).all(|w| w[0] <= w[1]));
    // Fixed-point residual at 5 fresh-seed probe nodes.
    let n = b_inv.grid.len();
    for (k, frac) in [0.2, 0.35, 0.5, 0.65, 0.8].iter().enumerate() {
        let i = ((n - 1) as f64 * frac) as usize;
        let mut rng = RngStreamSpec::new(5_000 + k as u64, 0).rng();
        let (est, se) =
            gamma_operator(&p, b_inv.values[i], b_inv.grid[i], &b_inv, cfg.mc_samples, &mut rng)
                .unwrap();
        assert!(
            (est - b_inv.values[i]).abs() <= 3.0 * se,
            "node {i}: Gamma = {est} vs b_inv = {} (se {se})",
            b_inv.values[i]
        );
    }
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed <= 600.0, "runtime {elapsed:.1}s over 10 min budget");
    println!("[criterion 2] PASS: converged, residual within 3 se at 5 probes ({elapsed:.1}s)");
}

#[test]
fn criterion_3_bounds_and_transforms() {
    let p = p1();
    let d = derive(&p).unwrap();
    let (b_inv, t, converged) = default_solve(&p, 11);
    assert!(converged);
    // Sandwich and monotonicity of a(pi) at every grid node.
    for (g, v) in t.a.grid.iter().zip(&t.a.values) {
        assert!(
            (d.x0_star - 1e-9..=d.x1_star + 1e-9).contains(v),
            "a({g}) = {v} outside [{}, {}]",
            d.x0_star,
            d.x1_star
        );
    }
    assert!(t.a.values.windows(2).all(|w| w[0] <= w[1]));
    // b / b_inv round trip on strictly increasing segments.
    let mut rng = RngStreamSpec::new(12, 0).rng();
    for _ in 0..200 {
        let phi = rand::Rng::gen_range(&mut rng, 0.05..50.0);
        let x = t.b.eval(phi);
        if x > t.b.values[0] && x < *t.b.values.last().unwrap() {
            let back = b_inv.eval(x);
            assert!(
                (back - phi).abs() <= 1e-6 * (1.0 + phi),
                "round trip b_inv(b({phi})) = {back}"
            );
        }
    }
    println!("[criterion 3] PASS: x0* <= a <= x1*, a nondecreasing, b/b_inv round trip");
}

#[test]
fn criterion_4_comparative_statics() {
    let p = p1();
    let pis = [0.2, 0.4, 0.6, 0.8];
    let seeds = [11u64, 23, 37];
    // a(pi) per parameter set, averaged over seeds, with a cross-seed
    // standard error; the solver itself uses common random numbers across
    // its own iterations, and sharing the seed list across parameter sets
    // gives paired comparisons.
    let stats = |p: &ModelParams| -> Vec<(f64, f64)> {
        let runs: Vec<BoundaryTransforms> = seeds
            .iter()
            .map(|&s| {
                let (_, t, conv) = default_solve(p, s);
                assert!(conv);
                t
            })
            .collect();
        pis.iter()
            .map(|&pi| {
                let vals: Vec<f64> = runs.iter().map(|t| t.a.eval(pi)).collect();
                let m = vals.iter().sum::<f64>() / vals.len() as f64;
                let var = vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>()
                    / (vals.len() - 1) as f64;
                (m, (var / vals.len() as f64).sqrt())
            })
            .collect()
    };
    let check = |lo: &[(f64, f64)], hi: &[(f64, f64)], what: &str| {
        for (k, &pi) in pis.iter().enumerate() {
            let slack = 3.0 * (lo[k].1 * lo[k].1 + hi[k].1 * hi[k].1).sqrt();
            assert!(
                hi[k].0 >= lo[k].0 - slack,
                "{what} at pi = {pi}: {} vs {} (slack {slack})",
                lo[k].0,
                hi[k].0
            );
        }
    };
    let base = stats(&p);
    let mut q = p;
    q.mu1 = 0.005;
    let mu_lo = stats(&q);
    q.mu1 = 0.01;
    let mu_hi = stats(&q);
    check(&mu_lo, &base, "a nondecreasing mu1 0.005 -> 0.007");
    check(&base, &mu_hi, "a nondecreasing mu1 0.007 -> 0.01");
    let mut q = p;
    q.r = 0.10;
    let r_hi = stats(&q);
    check(&r_hi, &base, "a nonincreasing r 0.07 -> 0.10");
    println!("[criterion 4] PASS: a(pi) monotone in mu1 and r within 3 combined se");
}

#[test]
fn criterion_5_value_function_properties() {
    let p = p1();
    let d = derive(&p).unwrap();
    // A denser grid and more samples than the solver default: boundary
    // location error is first-order in the stop-region obstacle check, so
    // the 1e-3 margin needs the boundary accurate to a few 1e-4 in x.
    // 50 nodes / 1e5 samples leave ~2e-3 of deficit near the steep end.
    let cfg = SolverConfig {
        seed: 11,
        grid_size: 200,
        mc_samples: 2_000_000,
        tol: 4e-3,
        ..SolverConfig::default()
    };
    let (b_inv, log) = solve_boundary(&p, &cfg).unwrap();
    assert!(log.converged);
    let t = boundary_transforms(&p, &b_inv).unwrap();
    let q = quad(&p);
    let nx = 40;
    let npi = 20;
    let x_lo = d.x0_star - 1.0;
    let x_hi = d.x1_star + 0.5;
    let mut grid = vec![vec![0.0f64; npi]; nx];
    for i in 0..nx {
        let x = x_lo + (x_hi - x_lo) * i as f64 / (nx - 1) as f64;
        for j in 0..npi {
            let pi = 0.02 + 0.96 * j as f64 / (npi - 1) as f64;
            let v = marginal_value(&p, x, pi, &t.c, &q).unwrap();
            // Obstacle bound.
            let obstacle = (x.exp() - p.kappa).max(0.0);
            assert!(v >= obstacle - 1e-3, "v({x}, {pi}) = {v} below obstacle {obstacle}");
            // Sandwich between the known-drift marginals, with slack for the
            // Monte-Carlo boundary location and the quadrature tolerance.
            let v0 = full_info_marginal(&p, p.mu0, x).unwrap();
            let v1 = full_info_marginal(&p, p.mu1, x).unwrap();
            let slack = 5e-3 * v.abs().max(1.0);
            assert!(
                v >= v0 - slack && v <= v1 + slack,
                "sandwich fails at ({x}, {pi}): {v0} <= {v} <= {v1}"
            );
            grid[i][j] = v;
        }
    }
    // Monotone in x and pi. Near the boundary the numerical surface carries
    // the same first-order boundary-location error that the obstacle check
    // budgets at 1e-3, and a grid step can cross the boundary, so allow
    // twice that here.
    let mono_tol = 2e-3;
    for i in 0..nx {
        for j in 0..npi {
            if i + 1 < nx {
                assert!(grid[i + 1][j] >= grid[i][j] - mono_tol, "not monotone in x");
            }
            if j + 1 < npi {
                assert!(grid[i][j + 1] >= grid[i][j] - mono_tol, "not monotone in pi");
            }
        }
    }
    // Numerical smooth fit: one-sided x-derivatives of vhat across the
    // boundary c(z) agree within 5% at 5 z-probes.
    let h = 5e-3;
    for k in 0..5 {
        let idx = 2 + k * (t.c.grid.len() - 5) / 5;
        let z = t.c.grid[idx];
        let xc = t.c.values[idx];
        if xc <= d.x0_star + 2.0 * h || xc >= d.x1_star - 2.0 * h {
            continue;
        }
        let f = |x: f64| vhat(&p, x, z, &t.c, &q).unwrap();
        let left = (f(xc) - f(xc - h)) / h;
        let right = (f(xc + h) - f(xc)) / h;
        let denom = left.abs().max(right.abs()).max(1e-9);
        assert!(
            (left - right).abs() / denom <= 0.05,
            "smooth fit at z = {z}: left {left} vs right {right}"
        );
    }
    println!("[criterion 5] PASS: obstacle, monotonicity, sandwich, smooth fit");
}

#[test]
fn criterion_6_oracle_triangle() {
    let start = Instant::now();
    let p = p1();
    let (_, t, converged) = default_solve(&p, 11);
    assert!(converged);
    let q = quad(&p);
    let d = derive(&p).unwrap();
    let n_paths = 10_000;
    let dt = 0.01;
    let horizon = default_horizon(&p, 1e-3);
    for (k, (dx, y, pi)) in [(-0.1, 1.0, 0.6), (-0.3, 2.0, 0.4), (0.05, 0.5, 0.5)]
        .into_iter()
        .enumerate()
    {
        let x = d.x0_star + dx + 0.5 * (d.x1_star - d.x0_star);
        let mut pp = p;
        pp.pi0 = pi;
        let v_quad = control_value(&p, x, y, pi, &t.c, &q).unwrap();
        let cmp = paired_policy_comparison(
            &pp,
            x,
            y,
            &t.b,
            DriftWeighting::PriorMean,
            n_paths,
            horizon,
            dt,
            77 + k as u64,
        )
        .unwrap();
        // Simulated optimal payoff vs the quadrature value.
        assert!(
            (cmp.optimal.mean - v_quad).abs()
                <= 3.0 * cmp.optimal.std_error + 1e-3 * v_quad.abs().max(1.0),
            "point {k}: simulated {} +- {} vs quadrature {v_quad}",
            cmp.optimal.mean,
            cmp.optimal.std_error
        );
        // Dominance over the pre-committed policy (paired on shared paths).
        assert!(
            cmp.mean_diff >= -3.0 * cmp.se_diff,
            "point {k}: optimal below precommitted: {} +- {}",
            cmp.mean_diff,
            cmp.se_diff
        );
        // Dominance over immediate full liquidation.
        let immediate = x.exp() / p.alpha * (1.0 - (-p.alpha * y).exp()) - p.kappa * y;
        assert!(
            cmp.optimal.mean >= immediate - 3.0 * cmp.optimal.std_error,
            "point {k}: optimal {} below immediate {immediate}",
            cmp.optimal.mean
        );
    }
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed <= 300.0, "runtime {elapsed:.1}s over 5 min budget");
    println!("[criterion 6] PASS: simulation/quadrature/dominance triangle ({elapsed:.1}s)");
}

#[test]
fn criterion_7_small_alpha_consistency() {
    let mut p = p1();
    p.alpha = 1e-6;
    let d = derive(&p).unwrap();
    let (_, t, converged) = default_solve(&p, 11);
    assert!(converged);
    let q = quad(&p);
    for (dx, y, pi) in [
        (-0.8, 1.0, 0.6),
        (-0.4, 2.0, 0.3),
        (-0.2, 0.5, 0.5),
        (-0.1, 5.0, 0.7),
        (-0.05, 1.0, 0.4),
    ] {
        let x = d.x1_star + dx;
        let v = control_value(&p, x, y, pi, &t.c, &q).unwrap();
        let yv = y * marginal_value(&p, x, pi, &t.c, &q).unwrap();
        assert!(
            (v - yv).abs() <= 1e-4 * yv.abs().max(1e-12),
            "alpha -> 0: V = {v} vs y*v = {yv} at ({x}, {y}, {pi})"
        );
    }
    println!("[criterion 7] PASS: V = y * v within 1e-4 relative at alpha = 1e-6");
}

#[test]
fn criterion_8_value_of_information() {
    // Gap statistics across the x-grid with a cross-seed error bar. The P3
    // gap is O(1e-4), so this uses a dense boundary grid (the interpolation
    // error of a 50-node boundary exceeds the signal) and a tightened
    // quadrature.
    let gaps = |p: &ModelParams, y: f64| -> Vec<(f64, f64, f64)> {
        let d = derive(p).unwrap();
        let mut q = QuadratureConfig::for_params(p, 1e-4).unwrap();
        q.n_time = 800;
        q.n_space = 96;
        q.space_width = 10.0;
        let seeds = [11u64, 23, 37];
        let runs: Vec<BoundaryTransforms> = seeds
            .iter()
            .map(|&s| {
                let cfg = SolverConfig {
                    seed: s,
                    grid_size: 400,
                    ..SolverConfig::default()
                };
                let (b_inv, log) = solve_boundary(p, &cfg).unwrap();
                assert!(log.converged);
                boundary_transforms(p, &b_inv).unwrap()
            })
            .collect();
        (0..12)
            .map(|i| {
                let x = (d.x0_star - 0.8) + (d.x1_star - 0.05 - (d.x0_star - 0.8)) * i as f64 / 11.0;
                let vals: Vec<f64> = runs
                    .iter()
                    .map(|t| {
                        value_of_information(p, x, y, p.pi0, &t.c, &q, DriftWeighting::PriorMean)
                            .unwrap()
                    })
                    .collect();
                let m = vals.iter().sum::<f64>() / vals.len() as f64;
                let var = vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>()
                    / (vals.len() - 1) as f64;
                (x, m, (var / vals.len() as f64).sqrt())
            })
            .collect()
    };
    // P2, efficient learning: the gap is nonnegative across the grid.
    for (x, g, se) in gaps(&p2(), 1.0) {
        assert!(
            g >= -3.0 * se,
            "P2 gap at x = {x}: {g} +- {se} below tolerance"
        );
    }
    // P3, inefficient learning: the gap changes sign across the grid
    // (positive at low prices, negative near the target price).
    let g3 = gaps(&p3(), 1.0);
    let has_pos = g3.iter().any(|&(_, g, se)| g > 3.0 * se);
    let has_neg = g3.iter().any(|&(_, g, se)| g < -3.0 * se);
    assert!(
        has_pos && has_neg,
        "P3 gap does not attain both signs: {g3:?}"
    );
    println!("[criterion 8] PASS: P2 gap >= 0, P3 gap attains both signs");
}

#[test]
fn criterion_9_cli_determinism() {
    use std::process::Command;
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("config.json");
    std::fs::write(
        &cfg_path,
        r#"{
  "params": {"mu0": -0.01, "mu1": 0.007, "sigma": 0.17, "r": 0.07,
             "kappa": 3.0, "alpha": 0.5, "pi0": 0.6},
  "solver": {"grid_size": 20, "mc_samples": 20000, "tol": 0.02,
             "max_iter": 40, "damping": 1.0, "clamp_hi": 400.0,
             "crn": true, "seed": 7},
  "quadrature": {"t_max": 131.9, "n_time": 96, "n_space": 64, "space_width": 8.0},
  "value_grids": {"x": {"min": 1.3, "max": 1.75, "n": 4},
                  "pi": {"min": 0.2, "max": 0.8, "n": 3},
                  "y": {"min": 1.0, "max": 1.0, "n": 1}},
  "simulation": {"n_paths": 50, "horizon": 30.0, "dt": 0.01,
                 "x0": 1.5, "y0": 1.0, "policy": "optimal"},
  "drift_weighting": "prior-mean",
  "output_dir": "unused",
  "seed": 7
}"#,
    )
    .unwrap();
    let bin = env!("CARGO_BIN_EXE_liquidex");
    let run = |threads: &str, out: &std::path::Path| {
        for args in [
            vec!["solve"],
            vec!["value", "--boundary"],
            vec!["simulate", "--boundary"],
        ] {
            let mut cmd = Command::new(bin);
            cmd.arg(args[0])
                .arg("--config")
                .arg(&cfg_path)
                .arg("--out")
                .arg(out)
                .arg("--threads")
                .arg(threads);
            if args.len() > 1 {
                cmd.arg(args[1]).arg(out.join("boundary.csv"));
            }
            let st = cmd.output().unwrap();
            assert!(
                st.status.success(),
                "{} failed: {}",
                args[0],
                String::from_utf8_lossy(&st.stderr)
            );
        }
    };
    let out1 = dir.path().join("t1");
    let out8 = dir.path().join("t8");
    run("1", &out1);
    run("8", &out8);
    for f in ["boundary.csv", "value.csv", "simulation.csv"] {
        let a = std::fs::read(out1.join(f)).unwrap();
        let b = std::fs::read(out8.join(f)).unwrap();
        assert_eq!(a, b, "{f} differs between 1 and 8 threads");
    }
    println!("[criterion 9] PASS: byte-identical CSV outputs for 1 and 8 threads");
}
