//! Acceptance criteria, one line per criterion. Runs as a plain binary so
//! the lines show up in `cargo test` output.

mod common;

use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::Rng;
use rcqueue::diffusion::{fclt_check_with_delta, stationary_moments, FcltCase};
use rcqueue::distributions::ModelParams;
use rcqueue::fluid::{classify_v, classify_w, hitting_time, Load, Stability};
use rcqueue::oracle::run_suite;
use rcqueue::ratefn::{
    closed_form, optimal_decomposition, rate_w_positive, variational_oracle, zero_cost_path,
    RateCase, RateParams, Scheme,
};
use rcqueue::recursion::{
    fluid_driving_input, simulate_w_rep, simulate_w_with_draws, Estimator, TailEvent, TailOptions,
};
use rcqueue::reflection::{comparison_holds, map_m_reflected, reflect, reflect_theta};
use rcqueue::tailprob::{endpoint_target, estimate_decay, DecayEstimate, Trend};
use rcqueue::{Grid, PiecewiseLinearPath, StepPath};

struct Outcome {
    pass: bool,
    detail: String,
}

fn run(id: u32, name: &str, budget: Duration, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let out = f();
    let elapsed = start.elapsed();
    let in_time = elapsed <= budget;
    let pass = out.pass && in_time;
    println!(
        "criterion {id:>2} {name:<34} {} ({}; {:.1}s of {}s)",
        if pass { "PASS" } else { "FAIL" },
        out.detail,
        elapsed.as_secs_f64(),
        budget.as_secs()
    );
    pass
}

fn reflection_suite() -> Outcome {
    let mut rng = common::rng(1);
    let (mut bad_inv, mut bad_bits, mut bad_picard) = (0, 0, 0);
    let mut worst = 0.0_f64;
    for _ in 0..10_000 {
        let x = common::random_step_path(&mut rng, 512);
        let theta = rng.random_range(-2.0..2.0);
        let r = reflect(&x).unwrap();
        let rel = r.complementarity() / (1.0 + r.z.sup_norm() * r.l.sup_norm().max(1.0));
        if !(r.z.is_nonnegative() && r.l.is_nondecreasing() && rel <= 1e-8) {
            bad_inv += 1;
        }
        if reflect_theta(&x, 0.0).unwrap() != r {
            bad_bits += 1;
        }
        let forward = reflect_theta(&x, theta).unwrap().z;
        let picard = reflect(&map_m_reflected(&x, theta).unwrap()).unwrap().z;
        let d = forward.sup_distance(&picard).unwrap();
        worst = worst.max(d);
        if d > 1e-10 {
            bad_picard += 1;
        }
    }
    Outcome {
        pass: bad_inv + bad_bits + bad_picard == 0,
        detail: format!(
            "invariant failures {bad_inv}, theta=0 mismatches {bad_bits}, picard failures {bad_picard}, worst gap {worst:.2e}"
        ),
    }
}

fn comparison_suite() -> Outcome {
    let mut rng = common::rng(2);
    let mut failures = 0;
    for _ in 0..10_000 {
        let x = common::random_step_path(&mut rng, 512);
        let mut acc = 0.0;
        let y: Vec<f64> = (0..x.len())
            .map(|_| {
                if rng.random_bool(0.3) {
                    acc += rng.random_range(0.0..0.5);
                }
                acc
            })
            .collect();
        let y = StepPath::new(*x.grid(), y).unwrap();
        if !comparison_holds(&x, &y).unwrap() {
            failures += 1;
        }
    }
    Outcome {
        pass: failures == 0,
        detail: format!("{failures} of 10000 pairs violate the comparison"),
    }
}

// (mu, theta, W stable point, W initial-condition flag, V stable point)
type TableRow = (f64, f64, Option<f64>, bool, Option<f64>);

const TABLES: [TableRow; 9] = [
    (1.5, 0.5, Some(3.0), false, Some(3.0)),
    (1.5, 0.0, None, false, None),
    (1.5, -2.0, None, false, None),
    (0.0, 0.5, Some(0.0), false, Some(0.0)),
    (0.0, 0.0, Some(0.0), false, Some(0.0)),
    (0.0, -2.0, None, false, None),
    (-1.0, 0.5, Some(0.0), false, Some(-2.0)),
    (-1.0, 0.0, Some(0.0), false, None),
    (-1.0, -2.0, Some(0.0), true, None),
];

fn fluid_suite() -> Outcome {
    let base = ModelParams::gaussian(1.0, 2.0, 1.0, 1.0, 0.0, 3.0).unwrap();
    let closed = |t: f64| 0.5 * (1.0 - (-2.0 * t).exp());
    let close_runs = (0..200u64)
        .filter(|&seed| {
            let out = simulate_w_rep(&base, 10_000, seed, 0).unwrap();
            let g = out.fluid_view.grid();
            let target = StepPath::from_fn(*g, closed).unwrap();
            out.fluid_view.sup_distance(&target).unwrap() <= 0.05
        })
        .count();

    let drain = ModelParams::gaussian(-1.0, 1.0, 1.0, 1.0, 2.0, 3.0).unwrap();
    let t0 = hitting_time(-1.0, 1.0, 2.0).unwrap();
    let t0_ref = 3f64.ln();
    let hits = (0..200u64)
        .filter(|&seed| {
            let out = simulate_w_rep(&drain, 10_000, seed, 0).unwrap();
            let g = *out.fluid_view.grid();
            out.fluid_view
                .values()
                .iter()
                .position(|&w| w == 0.0)
                .is_some_and(|k| (g.time(k) - t0).abs() <= 0.05)
        })
        .count();

    let table_ok = TABLES.iter().all(|&(mu, theta, w_point, icd, v_point)| {
        let w = classify_w(mu, theta);
        let v = classify_v(mu, theta);
        let load = if mu > 0.0 {
            Load::Overloaded
        } else if mu == 0.0 {
            Load::Critical
        } else {
            Load::Underloaded
        };
        w.stable_point() == w_point
            && w.initial_condition_dependent == icd
            && (!icd || w.unstable_fixed_point == Some(mu / theta))
            && v.stable_point() == v_point
            && w.load == load
            && matches!(w.stability, Stability::Stable(_)) == w_point.is_some()
    });
    Outcome {
        pass: close_runs >= 190 && hits == 200 && (t0 - t0_ref).abs() < 1e-12 && table_ok,
        detail: format!(
            "fluid within 0.05 in {close_runs}/200, hitting time within 0.05 of {t0:.4} in {hits}/200, tables {}",
            if table_ok { "match" } else { "differ" }
        ),
    }
}

fn exactness_suite() -> Outcome {
    let mut rng = common::rng(4);
    let mut worst = 0.0_f64;
    for draw in 0..100u64 {
        let mu = rng.random_range(-2.0..2.0);
        let theta = rng.random_range(-1.0..3.0);
        let params = ModelParams::gaussian(
            mu,
            theta,
            rng.random_range(0.2..2.0),
            rng.random_range(0.0..2.0),
            rng.random_range(0.0..1.0),
            rng.random_range(0.5..2.0),
        )
        .unwrap()
        .with_r(rng.random_range(-1.0..1.0));
        let (out, draws) = simulate_w_with_draws(&params, 1000, 40 + draw, 0).unwrap();
        let xi = fluid_driving_input(&out, &draws, theta).unwrap();
        let pair = reflect_theta(&xi, theta).unwrap();
        let lbar = out.l_path.scale(1.0 / 1000.0).unwrap();
        let scale_z = out.fluid_view.sup_norm().max(1e-12);
        let scale_l = lbar.sup_norm().max(scale_z);
        let ez = pair.z.sup_distance(&out.fluid_view).unwrap() / scale_z;
        let el = pair.l.sup_distance(&lbar).unwrap() / scale_l;
        worst = worst.max(ez).max(el);
    }
    Outcome {
        pass: worst <= 1e-9,
        detail: format!("worst relative deviation {worst:.2e} over 100 draws"),
    }
}

fn rate_suite() -> Outcome {
    let mut rng = common::rng(5);
    let mut worst_gap = 0.0_f64;
    let mut not_shrinking = 0;
    let mut worst_zero = 0.0_f64;
    for case in RateCase::ALL {
        for _ in 0..50 {
            let p = common::random_rate_params(&mut rng, case);
            let phi = common::random_phi(&mut rng, case, &p, 200);
            let closed = closed_form(&phi, &p, case).unwrap();
            let oracle = variational_oracle(&phi, &p, case).unwrap();
            let gap = (closed - oracle).abs() / closed;
            worst_gap = worst_gap.max(gap);
            let fine = phi.refine(2).unwrap();
            let fine_gap = (closed_form(&fine, &p, case).unwrap()
                - variational_oracle(&fine, &p, case).unwrap())
            .abs()
                / closed;
            if fine_gap >= gap && gap > 1e-13 {
                not_shrinking += 1;
            }
        }
        for _ in 0..50 {
            let mut p = common::random_rate_params(&mut rng, case);
            if case.is_reflected() {
                p.r = p.r.abs();
            }
            let grid = Grid::new(1.0, 200).unwrap();
            let mid = zero_cost_path(&p, grid, Scheme::Midpoint).unwrap();
            let euler = zero_cost_path(&p, grid, Scheme::Euler).unwrap();
            worst_zero = worst_zero
                .max(closed_form(&mid, &p, case).unwrap())
                .max(variational_oracle(&euler, &p, case).unwrap());
            if case == RateCase::WZero {
                // drained to zero by a negative drift, then held there
                let q = RateParams { r: -p.r.abs() - 0.5, ..p };
                let x = StepPath::from_fn(grid, |t| q.initial + q.r * t).unwrap();
                let z = reflect_theta(&x, q.theta).unwrap().z;
                let held = PiecewiseLinearPath::new(grid, z.into_values()).unwrap();
                worst_zero = worst_zero.max(variational_oracle(&held, &q, case).unwrap());
            }
        }
    }
    Outcome {
        pass: worst_gap <= 0.01 && not_shrinking == 0 && worst_zero <= 1e-10,
        detail: format!(
            "worst gap {worst_gap:.2e}, {not_shrinking} paths without shrinkage, worst zero-cost score {worst_zero:.1e}"
        ),
    }
}

fn decomposition_suite() -> Outcome {
    let mut rng = common::rng(6);
    let (mut worst, mut residual_bad) = (0.0_f64, 0);
    for _ in 0..50 {
        let p = common::random_rate_params(&mut rng, RateCase::WPos);
        let phi = common::random_phi(&mut rng, RateCase::WPos, &p, 200);
        let d = optimal_decomposition(&phi, &p).unwrap();
        let rate = rate_w_positive(&phi, &p).unwrap();
        worst = worst.max((d.cost(&p) - rate).abs() / rate);
        if !d.residual_ok() {
            residual_bad += 1;
        }
    }
    Outcome {
        pass: worst <= 1e-8 && residual_bad == 0,
        detail: format!("worst relative cost gap {worst:.2e}, residuals over tolerance {residual_bad}"),
    }
}

fn fclt_suite() -> Outcome {
    let params = ModelParams::gaussian(1.0, 1.0, 1.0, 1.0, 1.0, 8.0).unwrap();
    let rp = RateParams {
        mu: 1.0,
        theta: 1.0,
        sigma_x: 1.0,
        sigma_theta: 1.0,
        r: 0.0,
        initial: 0.0,
    };
    let (m, s2) = stationary_moments(&rp, 2.0).unwrap();
    let rep = fclt_check_with_delta(&params, 2.0, 10_000, 8.0, 2000, 7, 0.5).unwrap();
    let mo = rep.moments;
    let z_mean = (mo.empirical_mean - m) / mo.se_mean;
    let z_var = (mo.empirical_var - s2) / mo.se_var;
    let moments_ok = z_mean.abs() <= 4.0 && z_var.abs() <= 4.0 && rep.case == FcltCase::I;

    let neg = ModelParams::gaussian(-0.02, 1.0, 1.0, 1.0, 0.0, 8.0).unwrap().with_beta(0.2);
    let probs: Vec<f64> = [1_000u64, 10_000]
        .iter()
        .map(|&n| {
            fclt_check_with_delta(&neg, 0.0, n, 8.0, 2000, 8, 0.5)
                .unwrap()
                .sup_exceed_md
                .unwrap()
        })
        .collect();
    let collapse_ok = probs[1] < probs[0] && probs[1] < 0.01;
    Outcome {
        pass: moments_ok && collapse_ok,
        detail: format!(
            "mean {:.4} (z {z_mean:.2}), var {:.4} (z {z_var:.2}) vs ({m}, {s2}); P(sup md > 0.5) {:?}",
            mo.empirical_mean, mo.empirical_var, probs
        ),
    }
}

fn describe(est: &DecayEstimate) -> String {
    est.rates
        .iter()
        .zip(&est.rate_lower_bounds)
        .map(|(r, lb)| match (r, lb) {
            (Some(r), _) => format!("{r:.3}"),
            (None, Some(lb)) => format!(">{lb:.3}"),
            _ => "-".into(),
        })
        .collect::<Vec<_>>()
        .join(", ")
}

fn tail_suite() -> Outcome {
    let params = ModelParams::gaussian(0.0, 0.0, 1.0, 0.0, 0.0, 1.0).unwrap().with_beta(0.2);
    let event = TailEvent::EndpointExceed(1.0);
    let ladder = [1_000u64, 10_000, 100_000];
    let rw = RateParams {
        mu: 0.0,
        theta: 0.0,
        sigma_x: 1.0,
        sigma_theta: 0.0,
        r: 0.0,
        initial: 0.0,
    };
    let target = endpoint_target(&rw, 1.0, RateCase::WZero, 1.0).unwrap();
    let shifted = TailOptions {
        estimator: Estimator::MeanShift,
        md_drift: None,
    };
    let is = estimate_decay(&params, event, &ladder, 100_000, 11, shifted).unwrap();
    let plain = estimate_decay(&params, event, &ladder, 100_000, 11, TailOptions::default()).unwrap();
    let top = is.last_rate().unwrap_or(f64::NAN);
    Outcome {
        pass: (0.35..=0.65).contains(&top)
            && is.trend == Trend::TowardTarget
            && (target - 0.5).abs() < 1e-10,
        detail: format!(
            "target {target:.4}; mean-shift rates [{}] trend {:?}; plain rates [{}]",
            describe(&is),
            is.trend,
            describe(&plain)
        ),
    }
}

fn oracle_suite() -> Outcome {
    let rows = run_suite(1000, 9);
    let summary: Vec<String> = rows
        .iter()
        .map(|r| format!("{} {}/{}", r.suite, r.instances - r.failures, r.instances))
        .collect();
    Outcome {
        pass: rows.iter().all(|r| r.passed()),
        detail: summary.join(", "),
    }
}

fn determinism_suite() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_rcqueue");
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let input = d.join("x.csv");
    std::fs::write(&input, "t,value\n0,0.5\n0.25,-0.25\n0.5,0.75\n0.75,-1.0\n1,0.2\n").unwrap();
    let phi = d.join("phi.csv");
    std::fs::write(&phi, "t,phi\n0,0\n0.25,0.5\n0.5,0\n0.75,0\n1,1\n").unwrap();
    let rw_cfg = d.join("rw.toml");
    std::fs::write(
        &rw_cfg,
        "mu = 0.0\nr = 0.2\nT = 1.0\nseed = 3\n[theta]\nfamily = \"point\"\nparams = [0.5]\n[x]\nfamily = \"normal\"\nparams = [0.0, 1.0]\n",
    )
    .unwrap();
    let input_s = input.to_str().unwrap();
    let phi_s = phi.to_str().unwrap();
    let cfg_s = rw_cfg.to_str().unwrap();
    let commands: Vec<Vec<&str>> = vec![
        vec!["simulate", "--n", "200", "--reps", "3", "--scaling", "md", "--seed", "5"],
        vec!["simulate", "--n", "100", "--reps", "2", "--linear", "--scaling", "diffusion"],
        vec!["reflect", "--op", "r", "--in", input_s],
        vec!["reflect", "--op", "m", "--theta", "0.7", "--in", input_s],
        vec!["reflect", "--op", "rtheta", "--theta", "0.7", "--in", input_s],
        vec!["fluid", "--classify"],
        vec!["fluid", "--path", "--steps", "50"],
        vec!["fluid", "--convergence", "--n-ladder", "50,200", "--reps", "5", "--seed", "2"],
        vec!["rate", "--case", "w-zero", "--phi", phi_s, "--config", cfg_s],
        vec!["fclt", "--case", "i", "--n", "200", "--t", "1", "--reps", "20", "--seed", "4"],
        vec!["fclt", "--case", "ii", "--n", "200", "--t", "1", "--reps", "20"],
        vec!["fclt", "--case", "iii", "--n", "200", "--t", "1", "--reps", "20"],
        vec!["mdp-tail", "--event", "endpoint:a=0.5", "--n-ladder", "100,400", "--reps", "500"],
        vec![
            "mdp-tail", "--event", "sup:a=0.5", "--n-ladder", "100,400", "--reps", "500",
            "--estimator", "mean-shift", "--beta", "0.25",
        ],
        vec!["oracle", "--suite", "all", "--instances", "50"],
    ];
    let mut differing = Vec::new();
    for (i, args) in commands.iter().enumerate() {
        let outputs: Vec<Vec<u8>> = (0..2)
            .map(|k| {
                let out = d.join(format!("out_{i}_{k}.csv"));
                let status = Command::new(bin)
                    .args(args)
                    .arg("--out")
                    .arg(&out)
                    .output()
                    .unwrap();
                assert!(status.status.success(), "{args:?}: {}", String::from_utf8_lossy(&status.stderr));
                std::fs::read(&out).unwrap()
            })
            .collect();
        if outputs[0] != outputs[1] || outputs[0].is_empty() {
            differing.push(args[0]);
        }
    }
    Outcome {
        pass: differing.is_empty(),
        detail: format!("{} commands, differing: {differing:?}", commands.len()),
    }
}

fn main() -> ExitCode {
    let min = |m: u64| Duration::from_secs(60 * m);
    let results = [
        run(1, "reflection suite", min(1), reflection_suite),
        run(2, "comparison lemma", Duration::from_secs(30), comparison_suite),
        run(3, "fluid reproduction", min(5), fluid_suite),
        run(4, "operator-simulator exactness", min(1), exactness_suite),
        run(5, "closed form vs oracle", min(5), rate_suite),
        run(6, "optimal decomposition", min(1), decomposition_suite),
        run(7, "FCLT moments", min(10), fclt_suite),
        run(8, "MDP tail sanity", min(10), tail_suite),
        run(9, "oracle suite", min(1), oracle_suite),
        run(10, "CLI determinism", min(5), determinism_suite),
    ];
    let passed = results.iter().filter(|&&p| p).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed == results.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
