use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use homog::config::{eps_to_k, RunConfig};
use homog::corrector::CorrectorConfig;
use homog::gridio;
use homog::harness::{cmat_json, run_on_problem, solve_rhs, Problem, SweepReport};
use homog::krylov::KrylovConfig;
use homog::smoothing::SmoothingKind;
use homog::spectral::Spectral;
use homog::{Complex64 as C64, TorusFunction};
use serde_json::json;

#[derive(Parser)]
#[command(
    name = "homog",
    version,
    about = "Periodic homogenization solver and rate harness"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the cell problems and write g⁰, V, W and the cell fields.
    Cell {
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Write the shifted effective operator as JSON.
    Effective {
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Solve `(B_ε − ζQ₀^ε)u = f` on the torus.
    Solve(SolveArgs),
    /// Run the configured sweep and write report, tables and plots.
    Sweep {
        config: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Run the sweep and print one line per verdict.
    Verify {
        config: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Run a built-in demo configuration (`list` prints the names).
    Demo {
        name: String,
        #[command(flatten)]
        run: RunArgs,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Also render log-log plots.
    #[arg(long)]
    plots: bool,
    /// Smoothing used by the corrector: steklov, fourier or none.
    #[arg(long)]
    smoothing: Option<SmoothingKind>,
    /// Apply Λ^ε without smoothing in the corrector.
    #[arg(long)]
    drop_s_lambda: bool,
    /// Apply Λ̃^ε without smoothing in the corrector.
    #[arg(long = "drop-s-lambdatilde")]
    drop_s_lambda_tilde: bool,
}

impl RunArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        apply_corrector_flags(
            &mut cfg.corrector,
            self.smoothing,
            self.drop_s_lambda,
            self.drop_s_lambda_tilde,
        );
    }
}

fn apply_corrector_flags(
    c: &mut CorrectorConfig,
    smoothing: Option<SmoothingKind>,
    drop_l: bool,
    drop_lt: bool,
) {
    if let Some(s) = smoothing {
        c.smoothing = s;
    }
    c.drop_s_lambda |= drop_l;
    c.drop_s_lambda_tilde |= drop_lt;
}

#[derive(Args)]
struct SolveArgs {
    config: PathBuf,
    /// Scale ε = 1/K.
    #[arg(long)]
    eps: f64,
    /// Spectral parameter as `re,im`.
    #[arg(long, default_value = "-1,0", allow_hyphen_values = true)]
    zeta: String,
    /// Right-hand-side Fourier mode `m1[,m2..][:re[:im[:component]]]`; repeatable.
    #[arg(long = "mode", allow_hyphen_values = true)]
    modes: Vec<String>,
    /// Right-hand side as a grid file on the torus.
    #[arg(long, conflicts_with = "modes")]
    rhs: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

fn load_config(path: &Path) -> Result<(RunConfig, PathBuf)> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let cfg = RunConfig::from_json(&text).with_context(|| format!("parsing {}", path.display()))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((cfg, base))
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?)
        .with_context(|| format!("writing {}", path.display()))
}

fn cell(config: &Path, out: &Path) -> Result<()> {
    let (cfg, base) = load_config(config)?;
    let problem = Problem::build(&cfg, &base)?;
    std::fs::create_dir_all(out)?;
    let c = &problem.cell;
    gridio::write_field(&out.join("lambda.csv"), &c.lambda)?;
    gridio::write_field(&out.join("lambda_tilde.csv"), &c.lambda_tilde)?;
    gridio::write_field(&out.join("g_tilde.csv"), &c.g_tilde)?;
    write_json(
        &out.join("cell.json"),
        &json!({
            "g0": cmat_json(&c.g0),
            "v": cmat_json(&c.v),
            "w": cmat_json(&c.w),
            "residuals": c.residuals,
            "fields": ["lambda.csv", "lambda_tilde.csv", "g_tilde.csv"],
        }),
    )?;
    println!("g0 = {}", c.g0);
    Ok(())
}

fn effective(config: &Path, out: &Path) -> Result<()> {
    let (cfg, base) = load_config(config)?;
    let problem = Problem::build(&cfg, &base)?;
    std::fs::create_dir_all(out)?;
    let e = &problem.eff;
    write_json(
        &out.join("effective.json"),
        &json!({
            "g0": cmat_json(&e.g0),
            "v": cmat_json(&e.v),
            "w": cmat_json(&e.w),
            "abar": e.abar.iter().map(cmat_json).collect::<Vec<_>>(),
            "qbar": cmat_json(&e.qbar),
            "q0bar": cmat_json(&e.q0bar),
            "c5": e.c5,
            "lambda0": e.lambda0,
            "calibration": problem.calibration,
            "ground_state_eigenvalue": problem.ground_state.as_ref().map(|g| g.omega.lambda_min),
        }),
    )?;
    println!("c5 = {:.6e}, lambda0 = {:.6e}", e.c5, e.lambda0);
    Ok(())
}

fn parse_zeta(s: &str) -> Result<C64> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .with_context(|| format!("bad ζ '{s}'"))?;
    match parts.as_slice() {
        [re] => Ok(C64::new(*re, 0.0)),
        [re, im] => Ok(C64::new(*re, *im)),
        _ => bail!("ζ must be 're' or 're,im'"),
    }
}

/// One `--mode` entry: integer mode, amplitude and component.
#[derive(Debug, PartialEq)]
struct ModeTerm {
    mode: Vec<i64>,
    amp: C64,
    comp: usize,
}

fn parse_mode(s: &str) -> Result<ModeTerm> {
    let mut parts = s.split(':');
    let mode = parts
        .next()
        .unwrap_or_default()
        .split(',')
        .map(|t| t.trim().parse::<i64>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .with_context(|| format!("bad mode '{s}'"))?;
    let num = |t: Option<&str>, d: f64| -> Result<f64> {
        t.map_or(Ok(d), |t| {
            t.trim()
                .parse()
                .with_context(|| format!("bad number in '{s}'"))
        })
    };
    let re = num(parts.next(), 1.0)?;
    let im = num(parts.next(), 0.0)?;
    let comp = parts
        .next()
        .map_or(Ok(0), |t| t.trim().parse())
        .with_context(|| format!("bad component in '{s}'"))?;
    if parts.next().is_some() {
        bail!("mode '{s}' has too many fields");
    }
    Ok(ModeTerm {
        mode,
        amp: C64::new(re, im),
        comp,
    })
}

fn rhs_from_modes(torus: &homog::TorusGrid, n: usize, terms: &[ModeTerm]) -> Result<TorusFunction> {
    let mut f = TorusFunction::zeros(torus.clone(), n);
    for t in terms {
        if t.mode.len() != torus.dim() || t.comp >= n {
            bail!(
                "mode {:?} (component {}) does not fit a {}-d, {n}-component problem",
                t.mode,
                t.comp,
                torus.dim()
            );
        }
        let half: Vec<i64> = torus.points().iter().map(|&p| p as i64 / 2).collect();
        if t.mode.iter().zip(&half).any(|(m, h)| *m < -h || *m >= *h) {
            bail!("mode {:?} is outside the torus grid", t.mode);
        }
        let wave = TorusFunction::plane_wave(torus.clone(), n, t.comp, &t.mode);
        f.axpy(t.amp, &wave);
    }
    Ok(f)
}

fn solve(args: &SolveArgs) -> Result<()> {
    let (cfg, base) = load_config(&args.config)?;
    let zeta = parse_zeta(&args.zeta)?;
    let k = eps_to_k(args.eps)?;
    let problem = Problem::build(&cfg, &base)?;
    let torus = problem.torus(k)?;
    let n = problem.coeffs.b.n();
    let f = match (&args.rhs, args.modes.is_empty()) {
        (Some(path), _) => gridio::read_function(path, &torus)?,
        (None, false) => {
            let terms = args
                .modes
                .iter()
                .map(|s| parse_mode(s))
                .collect::<Result<Vec<_>>>()?;
            rhs_from_modes(&torus, n, &terms)?
        }
        (None, true) => bail!("give a right-hand side with --mode or --rhs"),
    };
    let krylov = KrylovConfig {
        rtol: cfg.solver.rtol,
        maxiter: cfg.solver.maxiter,
        restart: cfg.solver.restart,
    };
    let (u, stats) = solve_rhs(&problem, k, zeta, &f, krylov)?;
    let op = problem.operator(k)?;
    let residual = {
        let r = op.apply(zeta, &u)?.sub(&f);
        let sp = Spectral::new(&torus);
        r.norms_with(&sp).l2 / f.norms_with(&sp).l2.max(f64::MIN_POSITIVE)
    };
    std::fs::create_dir_all(&args.out)?;
    gridio::write_function(&args.out.join("solution.csv"), &u)?;
    write_json(
        &args.out.join("solve.json"),
        &json!({
            "eps": args.eps,
            "k": k,
            "zeta": [zeta.re, zeta.im],
            "iterations": stats.iterations,
            "converged": stats.converged,
            "krylov_residual": stats.residual,
            "residual": residual,
            "points": torus.points(),
            "periods": torus.periods(),
        }),
    )?;
    println!(
        "{} iterations, relative residual {residual:.3e}",
        stats.iterations
    );
    Ok(())
}

fn print_verdicts(report: &SweepReport) {
    for v in &report.verdicts {
        println!(
            "{} {}/{}: {:.4} in [{:.4}, {:.4}]",
            if v.pass { "PASS" } else { "FAIL" },
            v.spec.as_str(),
            v.check,
            v.value,
            v.lo,
            v.hi,
        );
    }
}

fn run(cfg: RunConfig, base: &Path, run: &RunArgs, verbose: bool) -> Result<bool> {
    let mut cfg = cfg;
    run.apply(&mut cfg);
    let problem = Problem::build(&cfg, base)?;
    let report = run_on_problem(&cfg, &problem)?;
    homog::report::write_report(&report, &run.out, run.plots)?;
    if verbose {
        print_verdicts(&report);
    }
    let failed = report.verdicts.iter().filter(|v| !v.pass).count();
    println!(
        "{}: {} verdicts, {failed} failed; report in {}",
        report.name,
        report.verdicts.len(),
        run.out.display()
    );
    Ok(report.all_pass)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Cell { config, out } => cell(config, out).map(|_| true),
        Command::Effective { config, out } => effective(config, out).map(|_| true),
        Command::Solve(args) => solve(args).map(|_| true),
        Command::Sweep { config, run: r } => {
            load_config(config).and_then(|(c, b)| run(c, &b, r, false))
        }
        Command::Verify { config, run: r } => {
            load_config(config).and_then(|(c, b)| run(c, &b, r, true))
        }
        Command::Demo { name, run: r } if name == "list" => {
            let _ = r;
            for n in homog::demos::DEMO_NAMES {
                println!("{n}");
            }
            Ok(true)
        }
        Command::Demo { name, run: r } => homog::demos::demo_config(name)
            .map_err(anyhow::Error::from)
            .and_then(|c| run(c, Path::new("."), r, true)),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
