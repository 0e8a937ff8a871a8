use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use rcqueue::config::RunConfig;
use rcqueue::diffusion::{fclt_check, FcltCase};
use rcqueue::distributions::ModelParams;
use rcqueue::fluid::{classify_v, classify_w, fluid_convergence_report, fluid_v, fluid_w, Process};
use rcqueue::oracle::{run_suite, DEFAULT_INSTANCES};
use rcqueue::ratefn::{rate_report, RateCase, RateParams};
use rcqueue::recursion::{
    simulate_v_rep, simulate_w_rep, Estimator, TailEvent, TailOptions,
};
use rcqueue::reflection::{map_m, reflect, reflect_theta};
use rcqueue::tailprob::estimate_decay;
use rcqueue::{Error, Grid, PiecewiseLinearPath, Result, StepPath};

#[derive(Parser)]
#[command(name = "rcqueue", version, about = "Queues with random, waiting-time dependent coefficients")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML run configuration; built-in defaults are used when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the seed from the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Output CSV; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the recursion and print one scaled view per replication.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1000)]
        n: u64,
        #[arg(long, default_value_t = 1)]
        reps: usize,
        #[arg(long, value_enum, default_value_t = Scaling::Fluid)]
        scaling: Scaling,
        /// Simulate the unreflected recursion instead.
        #[arg(long)]
        linear: bool,
    },
    /// Apply a reflection operator to a `t,value` path.
    Reflect {
        #[arg(long, value_enum)]
        op: ReflectOp,
        #[arg(long, default_value_t = 0.0)]
        theta: f64,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fluid-limit classification, closed-form paths and convergence ladders.
    Fluid {
        #[command(flatten)]
        common: Common,
        /// Stability of both fluid limits (the default output).
        #[arg(long, conflicts_with_all = ["path", "convergence"])]
        classify: bool,
        /// Closed-form fluid paths `t,w,v` on a grid of `--steps` cells.
        #[arg(long, conflicts_with = "convergence")]
        path: bool,
        #[arg(long, default_value_t = 1000)]
        steps: usize,
        #[arg(long)]
        convergence: bool,
        #[arg(long, value_delimiter = ',', default_value = "100,1000,10000")]
        n_ladder: Vec<u64>,
        #[arg(long, default_value_t = 50)]
        reps: usize,
        #[arg(long, value_enum, default_value_t = ProcessArg::W)]
        process: ProcessArg,
    },
    /// Rate function of a piecewise-linear path: closed form, oracle, decomposition.
    Rate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        case: RateCase,
        /// Two-column CSV `t,phi` on a uniform grid starting at 0.
        #[arg(long)]
        phi: PathBuf,
        /// Required start `phi(0)`; defaults to the path's own start.
        #[arg(long)]
        initial: Option<f64>,
    },
    /// Queue at diffusion scale against its limit diffusion.
    Fclt {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        case: FcltCase,
        #[arg(long, default_value_t = 10_000)]
        n: u64,
        #[arg(long, default_value_t = 8.0)]
        t: f64,
        #[arg(long, default_value_t = 2000)]
        reps: usize,
        /// Drift correction `eta`; defaults to the case preset or the config.
        #[arg(long)]
        eta: Option<f64>,
    },
    /// Moderate-deviation tail probabilities along an `n` ladder.
    MdpTail {
        #[command(flatten)]
        common: Common,
        /// `endpoint:a=1.0` or `sup:a=1.0`.
        #[arg(long, default_value = "endpoint:a=1.0")]
        event: String,
        #[arg(long, value_delimiter = ',', default_value = "1000,10000,100000")]
        n_ladder: Vec<u64>,
        #[arg(long, default_value_t = 100_000)]
        reps: u64,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long, value_enum, default_value_t = EstimatorArg::Plain)]
        estimator: EstimatorArg,
    },
    /// Brute-force cross-checks on small random instances.
    Oracle {
        #[arg(long, default_value = "all")]
        suite: String,
        #[arg(long, default_value_t = DEFAULT_INSTANCES)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Scaling {
    Raw,
    Fluid,
    Diffusion,
    Md,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReflectOp {
    R,
    M,
    Rtheta,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProcessArg {
    W,
    V,
}

#[derive(Clone, Copy, ValueEnum)]
enum EstimatorArg {
    Plain,
    MeanShift,
}

const DEFAULT_CONFIG: &str = r#"
mu = 1.0
r = 0.0
beta = 0.2
T = 2.0
w0 = 0.0
seed = 42

[theta]
family = "normal"
params = [2.0, 1.0]

[x]
family = "normal"
params = [0.0, 1.0]
"#;

const RW_CONFIG: &str = r#"
mu = 0.0
beta = 0.2
T = 1.0
seed = 42

[theta]
family = "point"
params = [0.0]

[x]
family = "normal"
params = [0.0, 1.0]
"#;

fn load_config(common: &Common, fallback: &str) -> Result<(RunConfig, ModelParams, u64)> {
    let cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::parse(fallback)?,
    };
    let params = cfg.model_params()?;
    let seed = common.seed.unwrap_or(cfg.seed);
    Ok((cfg, params, seed))
}

/// In the initial-condition-dependent cell the start must lie below the
/// unstable fixed point.
fn enforce_start(params: &ModelParams) -> Result<()> {
    let class = classify_w(params.mu, params.theta());
    if class.initial_condition_dependent {
        if let Some(fp) = class.unstable_fixed_point {
            if params.w0 >= fp {
                return Err(Error::Precondition(format!(
                    "mu < 0, theta < 0 needs w0 < mu/theta = {fp}, got {}",
                    params.w0
                )));
            }
        }
    }
    Ok(())
}

fn sink(out: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(path) => Box::new(BufWriter::new(File::create(path)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn csv_writer(out: &Option<PathBuf>) -> Result<csv::Writer<Box<dyn Write>>> {
    Ok(csv::Writer::from_writer(sink(out)?))
}

fn simulate(common: &Common, n: u64, reps: usize, scaling: Scaling, linear: bool) -> Result<()> {
    let (_, params, seed) = load_config(common, DEFAULT_CONFIG)?;
    enforce_start(&params)?;
    let paths: Vec<StepPath> = (0..reps as u64)
        .into_par_iter()
        .map(|rep| -> Result<StepPath> {
            if linear {
                let out = simulate_v_rep(&params, n, seed, rep, params.w0)?;
                Ok(match scaling {
                    Scaling::Raw => out.v_path,
                    Scaling::Fluid => out.fluid_view,
                    Scaling::Diffusion => out.diffusion_view,
                    Scaling::Md => out.md_view,
                })
            } else {
                let out = simulate_w_rep(&params, n, seed, rep)?;
                Ok(match scaling {
                    Scaling::Raw => out.w_path,
                    Scaling::Fluid => out.fluid_view,
                    Scaling::Diffusion => out.diffusion_view,
                    Scaling::Md => out.md_view,
                })
            }
        })
        .collect::<Result<_>>()?;
    let mut w = csv_writer(&common.out)?;
    w.write_record(["rep", "t", "value"])?;
    for (rep, path) in paths.iter().enumerate() {
        for (t, v) in path.grid().times().zip(path.values()) {
            w.serialize((rep, t, v))?;
        }
    }
    w.flush()?;
    Ok(())
}

fn reflect_cmd(op: ReflectOp, theta: f64, input: &Path, out: &Option<PathBuf>) -> Result<()> {
    let x = StepPath::read_csv(File::open(input)?)?;
    let mut w = csv_writer(out)?;
    match op {
        ReflectOp::M => {
            let y = map_m(&x, theta)?;
            w.write_record(["t", "value"])?;
            for (t, v) in y.grid().times().zip(y.values()) {
                w.serialize((t, v))?;
            }
        }
        ReflectOp::R | ReflectOp::Rtheta => {
            let pair = match op {
                ReflectOp::R => reflect(&x)?,
                _ => reflect_theta(&x, theta)?,
            };
            w.write_record(["t", "z", "l"])?;
            for ((t, z), l) in pair.z.grid().times().zip(pair.z.values()).zip(pair.l.values()) {
                w.serialize((t, z, l))?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn stability_fields(c: &rcqueue::fluid::RegimeClassification) -> (String, String, String) {
    let point = c
        .stable_point()
        .or(c.unstable_fixed_point)
        .map(|v| v.to_string())
        .unwrap_or_default();
    let stability = if c.stable_point().is_some() { "stable" } else { "unstable" };
    (format!("{:?}", c.load).to_lowercase(), stability.to_string(), point)
}

#[allow(clippy::too_many_arguments)]
fn fluid_cmd(
    common: &Common,
    classify: bool,
    path: bool,
    steps: usize,
    convergence: bool,
    n_ladder: &[u64],
    reps: usize,
    process: ProcessArg,
) -> Result<()> {
    let (_, params, seed) = load_config(common, DEFAULT_CONFIG)?;
    let (mu, theta) = (params.mu, params.theta());
    let mut w = csv_writer(&common.out)?;
    if classify || !(path || convergence) {
        w.write_record(["process", "load", "stability", "fixed_point", "initial_condition_dependent"])?;
        for (name, c) in [("w", classify_w(mu, theta)), ("v", classify_v(mu, theta))] {
            let (load, stability, point) = stability_fields(&c);
            w.write_record([name, &load, &stability, &point, &c.initial_condition_dependent.to_string()])?;
        }
    }
    if path {
        let grid = Grid::new(params.horizon, steps)?;
        let fw = fluid_w(mu, theta, params.w0, grid)?;
        let fv = fluid_v(mu, theta, params.w0, grid)?;
        w.write_record(["t", "w", "v"])?;
        for ((t, a), b) in grid.times().zip(fw.values()).zip(fv.values()) {
            w.serialize((t, a, b))?;
        }
    }
    if convergence {
        enforce_start(&params)?;
        let process = match process {
            ProcessArg::W => Process::W,
            ProcessArg::V => Process::V,
        };
        let rows = fluid_convergence_report(&params, process, n_ladder, reps, seed)?;
        w.write_record(["n", "mean_sup_error", "se", "q50", "q90"])?;
        for r in rows {
            w.serialize((r.n, r.mean_sup_error, r.se, r.q50, r.q90))?;
        }
    }
    w.flush()?;
    Ok(())
}

fn rate_cmd(common: &Common, case: RateCase, phi_path: &Path, initial: Option<f64>) -> Result<()> {
    let (_, params, _) = load_config(common, DEFAULT_CONFIG)?;
    let step = StepPath::read_csv(File::open(phi_path)?)?;
    let phi = PiecewiseLinearPath::new(*step.grid(), step.values().to_vec())?;
    let p = RateParams {
        mu: params.mu,
        theta: params.theta(),
        sigma_x: params.sigma_x(),
        sigma_theta: params.sigma_theta(),
        r: params.r,
        initial: initial.unwrap_or(phi.initial()),
    };
    let report = rate_report(&phi, &p, case)?;
    let mut err = io::stderr().lock();
    writeln!(err, "case = {}", report.case)?;
    writeln!(err, "closed_form = {}", report.value_closed_form)?;
    writeln!(err, "variational = {}", report.value_variational)?;
    writeln!(err, "relative_gap = {}", report.gap)?;
    if let Some(d) = &report.decomposition {
        writeln!(err, "decomposition_cost = {}", d.cost(&p))?;
        writeln!(err, "constraint_residual = {}", d.constraint_residual)?;
        writeln!(err, "residual_tolerance = {}", d.residual_tolerance)?;
    }
    let mut w = csv_writer(&common.out)?;
    w.write_record(["t", "phi", "psi1", "psi2", "y"])?;
    if let Some(d) = &report.decomposition {
        for (k, t) in phi.grid().times().enumerate() {
            let y = d.y.as_ref().map(|y| y.node_values()[k].to_string()).unwrap_or_default();
            w.write_record([
                t.to_string(),
                phi.node_values()[k].to_string(),
                d.psi1.node_values()[k].to_string(),
                d.psi2.node_values()[k].to_string(),
                y,
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Parameters for each case when no configuration is given.
fn fclt_preset(case: FcltCase) -> Result<(ModelParams, f64)> {
    match case {
        FcltCase::I => Ok((ModelParams::gaussian(1.0, 1.0, 1.0, 1.0, 1.0, 8.0)?, 2.0)),
        FcltCase::Ii => Ok((ModelParams::gaussian(0.0, 0.0, 1.0, 1.0, 0.0, 8.0)?, -1.0)),
        FcltCase::Iii => Ok((ModelParams::gaussian(-0.02, 1.0, 1.0, 1.0, 0.0, 8.0)?.with_beta(0.2), 0.0)),
    }
}

fn fclt_cmd(common: &Common, case: FcltCase, n: u64, t: f64, reps: usize, eta: Option<f64>) -> Result<()> {
    let (params, preset_eta, seed) = match &common.config {
        Some(_) => {
            let (cfg, params, seed) = load_config(common, DEFAULT_CONFIG)?;
            (params, cfg.eta, seed)
        }
        None => {
            let (params, e) = fclt_preset(case)?;
            (params, e, common.seed.unwrap_or(42))
        }
    };
    let detected = FcltCase::detect(params.mu, params.theta())?;
    if detected != case {
        return Err(Error::RegimeMismatch(format!(
            "parameters fall in case {detected:?}, not {case:?}"
        )));
    }
    let report = fclt_check(&params, eta.unwrap_or(preset_eta), n, t, reps, seed)?;
    let m = &report.moments;
    let mut err = io::stderr().lock();
    writeln!(
        err,
        "mean = {} (target {}, z = {:.3}); var = {} (target {}, z = {:.3}); ks = {:.4}; regulated = {}",
        m.empirical_mean,
        m.target_mean,
        m.z_scores.mean,
        m.empirical_var,
        m.target_var,
        m.z_scores.var,
        report.ks_statistic,
        report.regulated_fraction
    )?;
    if let (Some(d), Some(md)) = (report.sup_exceed_diffusion, report.sup_exceed_md) {
        writeln!(err, "P(sup > {}) diffusion view = {d}, md view = {md}", report.delta)?;
    }
    let mut w = csv_writer(&common.out)?;
    w.write_record(["source", "rep", "value"])?;
    for (rep, v) in report.queue_samples.iter().enumerate() {
        w.serialize(("queue", rep, v))?;
    }
    for (rep, v) in report.diffusion_samples.iter().enumerate() {
        w.serialize(("diffusion", rep, v))?;
    }
    w.flush()?;
    Ok(())
}

fn parse_event(s: &str) -> Result<TailEvent> {
    let bad = || Error::InvalidParameter(format!("event must look like `endpoint:a=1.0` or `sup:a=1.0`, got `{s}`"));
    let (kind, rest) = s.split_once(':').ok_or_else(bad)?;
    let a: f64 = rest
        .strip_prefix("a=")
        .ok_or_else(bad)?
        .parse()
        .map_err(|_| bad())?;
    match kind {
        "endpoint" => Ok(TailEvent::EndpointExceed(a)),
        "sup" => Ok(TailEvent::SupExceed(a)),
        _ => Err(bad()),
    }
}

fn mdp_tail_cmd(
    common: &Common,
    event: &str,
    n_ladder: &[u64],
    reps: u64,
    beta: Option<f64>,
    estimator: EstimatorArg,
) -> Result<()> {
    let (_, mut params, seed) = load_config(common, RW_CONFIG)?;
    if let Some(b) = beta {
        params = params.with_beta(b);
        params.validate()?;
    }
    enforce_start(&params)?;
    let event = parse_event(event)?;
    let options = TailOptions {
        estimator: match estimator {
            EstimatorArg::Plain => Estimator::Plain,
            EstimatorArg::MeanShift => Estimator::MeanShift,
        },
        md_drift: None,
    };
    let est = estimate_decay(&params, event, n_ladder, reps, seed, options)?;
    let mut err = io::stderr().lock();
    if let Some(target) = est.target {
        writeln!(err, "target = {target}; trend = {:?}", est.trend)?;
        // expected count at the smallest rung, from the target rate
        let b0 = est.b_n[0];
        let expected = reps as f64 * (-target * b0 * b0).exp();
        if options.estimator == Estimator::Plain && expected < 10.0 && target > 0.0 {
            let a = event.level();
            let suggested = a * ((reps as f64 / 10.0).ln().max(0.0) / (target * b0 * b0)).sqrt();
            writeln!(
                err,
                "warning: about {expected:.2} hits expected at n = {}; try a <= {suggested:.3} or --estimator mean-shift",
                est.n_ladder[0]
            )?;
        }
    }
    let mut w = csv_writer(&common.out)?;
    w.write_record(["n", "b_n", "p_hat", "se", "rate", "censored"])?;
    for i in 0..est.n_ladder.len() {
        let se = est.se[i].map(|v| v.to_string()).unwrap_or_default();
        let rate = est.rates[i]
            .or(est.rate_lower_bounds[i])
            .map(|v| v.to_string())
            .unwrap_or_default();
        w.write_record([
            est.n_ladder[i].to_string(),
            est.b_n[i].to_string(),
            est.p_hats[i].to_string(),
            se,
            rate,
            est.censored[i].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn oracle_cmd(suite: &str, instances: usize, seed: u64, out: &Option<PathBuf>) -> Result<bool> {
    let rows = run_suite(instances, seed);
    let selected: Vec<_> = rows.into_iter().filter(|r| suite == "all" || r.suite == suite).collect();
    if selected.is_empty() {
        return Err(Error::InvalidParameter(format!("unknown suite `{suite}`")));
    }
    let mut w = csv_writer(out)?;
    w.write_record(["suite", "instances", "failures", "status"])?;
    for r in &selected {
        w.serialize((&r.suite, r.instances, r.failures, r.status()))?;
    }
    w.flush()?;
    Ok(selected.iter().all(|r| r.passed()))
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Simulate {
            common,
            n,
            reps,
            scaling,
            linear,
        } => simulate(&common, n, reps, scaling, linear)?,
        Command::Reflect {
            op,
            theta,
            input,
            out,
        } => reflect_cmd(op, theta, &input, &out)?,
        Command::Fluid {
            common,
            classify,
            path,
            steps,
            convergence,
            n_ladder,
            reps,
            process,
        } => fluid_cmd(&common, classify, path, steps, convergence, &n_ladder, reps, process)?,
        Command::Rate {
            common,
            case,
            phi,
            initial,
        } => rate_cmd(&common, case, &phi, initial)?,
        Command::Fclt {
            common,
            case,
            n,
            t,
            reps,
            eta,
        } => fclt_cmd(&common, case, n, t, reps, eta)?,
        Command::MdpTail {
            common,
            event,
            n_ladder,
            reps,
            beta,
            estimator,
        } => mdp_tail_cmd(&common, &event, &n_ladder, reps, beta, estimator)?,
        Command::Oracle {
            suite,
            instances,
            seed,
            out,
        } => return oracle_cmd(&suite, instances, seed, &out),
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
