//! Command-line driver: simulate flows, verify the interior estimates on
//! stored trajectories, print the explicit constants, rescale trajectories,
//! and probe growth ratios and quadratic fits.
//!
//! Exit codes: 0 = success / all checks pass; 1 = a requested check failed;
//! 2 = usage or validation error; 3 = runtime error.

use lmcflow::estimates::{
    check_jacobi, gradient_bound_check, height_bound_check, hessian_bound_check,
    hessian_bound_constant, main_constant, theta_monotonicity_check, CheckStatus, EstimateReport,
    KorevaarParams,
};
use lmcflow::flow::Trajectory;
use lmcflow::grid::{make_ball_mask, GridSpec};
use lmcflow::io::load_trajectory;
use lmcflow::liouville::{growth_ratio, quadratic_fit, rescale, RescaleSpec};
use lmcflow::runner::{barrier_check, run, stationary_run, RunConfig};
use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const USAGE: &str = "\
usage:
  lmcflow simulate --config <file> --out <dir>
  lmcflow verify <jacobi|height|gradient|hessian|barrier|monotone>
          --traj <dir> [check params]
      jacobi:   --mask-radius <r>
      height:   --R <r>
      gradient: --R <r> --M <oscillation>
      hessian:  --alpha <a> --gamma <g> --K <k>
      barrier:  --R <r> [--samples <n>] [--seed <s>]
      monotone: (no parameters)
  lmcflow constants --n <int> [--alpha <a> --gamma <g> --K <k>]
  lmcflow rescale --traj <dir> --lambda <l> [--x0 <c1,c2,..>] --out <dir>
          [--target-half-width <a>] [--target-nodes <m>]
  lmcflow probe growth --traj <dir> --r0 <r> [--mask-radius <r>] [--csv <file>]
  lmcflow probe quadfit --traj <dir> [--mask-radius <r>] [--time <t>]
  lmcflow stationary --config <file> --out <dir>
";

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    match dispatch(&args) {
        Ok(code) => code,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            eprintln!("{USAGE}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}

enum CliError {
    Usage(String),
    Runtime(String),
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn runtime(msg: impl std::fmt::Display) -> CliError {
    CliError::Runtime(msg.to_string())
}

struct Flags(HashMap<String, String>);

impl Flags {
    fn parse(args: &[String]) -> Result<Self, CliError> {
        let mut map = HashMap::new();
        let mut i = 0;
        while i < args.len() {
            let key = args[i]
                .strip_prefix("--")
                .ok_or_else(|| usage(format!("expected a --flag, got '{}'", args[i])))?;
            let value = args
                .get(i + 1)
                .ok_or_else(|| usage(format!("flag --{key} needs a value")))?;
            map.insert(key.to_string(), value.clone());
            i += 2;
        }
        Ok(Flags(map))
    }

    fn str(&self, key: &str) -> Result<&str, CliError> {
        self.0
            .get(key)
            .map(|s| s.as_str())
            .ok_or_else(|| usage(format!("missing required flag --{key}")))
    }

    fn f64(&self, key: &str) -> Result<f64, CliError> {
        self.str(key)?
            .parse()
            .map_err(|_| usage(format!("flag --{key} must be a number")))
    }

    fn f64_or(&self, key: &str, default: f64) -> Result<f64, CliError> {
        match self.0.get(key) {
            Some(s) => s.parse().map_err(|_| usage(format!("flag --{key} must be a number"))),
            None => Ok(default),
        }
    }

    fn usize_or(&self, key: &str, default: usize) -> Result<usize, CliError> {
        match self.0.get(key) {
            Some(s) => s.parse().map_err(|_| usage(format!("flag --{key} must be an integer"))),
            None => Ok(default),
        }
    }

    fn u64_or(&self, key: &str, default: u64) -> Result<u64, CliError> {
        match self.0.get(key) {
            Some(s) => s.parse().map_err(|_| usage(format!("flag --{key} must be an integer"))),
            None => Ok(default),
        }
    }

    fn opt(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(|s| s.as_str())
    }
}

fn load_traj_flag(flags: &Flags) -> Result<Trajectory, CliError> {
    let dir = flags.str("traj")?;
    load_trajectory(Path::new(dir)).map_err(runtime)
}

fn read_config(flags: &Flags) -> Result<RunConfig, CliError> {
    let path = flags.str("config")?;
    let text = std::fs::read_to_string(path)
        .map_err(|e| usage(format!("cannot read config {path}: {e}")))?;
    RunConfig::from_json(&text).map_err(|e| usage(e.to_string()))
}

fn print_report(report: &EstimateReport) -> Result<ExitCode, CliError> {
    println!("{}", serde_json::to_string_pretty(report).map_err(runtime)?);
    Ok(match report.status {
        CheckStatus::Pass => ExitCode::SUCCESS,
        CheckStatus::Fail => ExitCode::from(1),
        CheckStatus::NotApplicable => ExitCode::SUCCESS,
    })
}

fn dispatch(args: &[String]) -> Result<ExitCode, CliError> {
    let (command, rest) = args.split_first().ok_or_else(|| usage("no command given"))?;
    match command.as_str() {
        "simulate" => {
            let flags = Flags::parse(rest)?;
            let config = read_config(&flags)?;
            let out = PathBuf::from(flags.str("out")?);
            let summary = run(&config, &out).map_err(|e| match e {
                lmcflow::runner::RunnerError::Validation(m) => usage(m),
                other => runtime(other),
            })?;
            println!(
                "{}",
                serde_json::to_string_pretty(&summary).map_err(runtime)?
            );
            Ok(if summary.exit_code == 0 { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
        "verify" => {
            let (check, rest) =
                rest.split_first().ok_or_else(|| usage("verify needs a check name"))?;
            let flags = Flags::parse(rest)?;
            let traj = load_traj_flag(&flags)?;
            let report = match check.as_str() {
                "jacobi" => {
                    let radius = flags.f64("mask-radius")?;
                    let grid = *traj.grid();
                    let mask = make_ball_mask(grid, &[0.0; 3][..grid.dim()], radius)
                        .map_err(runtime)?;
                    check_jacobi(&traj, &mask).map_err(runtime)?
                }
                "height" => height_bound_check(&traj, flags.f64("R")?).map_err(runtime)?,
                "gradient" => {
                    gradient_bound_check(&traj, flags.f64("R")?, flags.f64("M")?)
                        .map_err(runtime)?
                }
                "hessian" => {
                    let params = KorevaarParams {
                        alpha: flags.f64("alpha")?,
                        gamma: flags.f64("gamma")?,
                        k: flags.f64("K")?,
                    };
                    hessian_bound_check(&traj, &params).map_err(runtime)?
                }
                "barrier" => barrier_check(
                    traj.grid().dim(),
                    flags.f64("R")?,
                    flags.usize_or("samples", 100_000)?,
                    flags.u64_or("seed", 0)?,
                )
                .map_err(runtime)?,
                "monotone" => theta_monotonicity_check(&traj).map_err(runtime)?,
                other => return Err(usage(format!("unknown check '{other}'"))),
            };
            print_report(&report)
        }
        "constants" => {
            let flags = Flags::parse(rest)?;
            let n = flags.usize_or("n", 0)?;
            if n == 0 {
                return Err(usage("constants needs --n <int>"));
            }
            let mc = main_constant(n).map_err(runtime)?;
            let mut out = serde_json::to_value(mc).map_err(runtime)?;
            if let Some(alpha) = flags.opt("alpha") {
                let params = KorevaarParams {
                    alpha: alpha.parse().map_err(|_| usage("--alpha must be a number"))?,
                    gamma: flags.f64("gamma")?,
                    k: flags.f64("K")?,
                };
                let c = hessian_bound_constant(n, &params).map_err(runtime)?;
                out.as_object_mut()
                    .expect("constants serialize to an object")
                    .insert("constant_at_params".into(), serde_json::json!(c));
            }
            println!("{}", serde_json::to_string_pretty(&out).map_err(runtime)?);
            Ok(ExitCode::SUCCESS)
        }
        "rescale" => {
            let flags = Flags::parse(rest)?;
            let traj = load_traj_flag(&flags)?;
            let lambda = flags.f64("lambda")?;
            let dim = traj.grid().dim();
            let x0: Vec<f64> = match flags.opt("x0") {
                Some(s) => s
                    .split(',')
                    .map(|p| p.trim().parse::<f64>())
                    .collect::<Result<_, _>>()
                    .map_err(|_| usage("--x0 must be a comma-separated point"))?,
                None => vec![0.0; dim],
            };
            if x0.len() != dim {
                return Err(usage(format!("--x0 needs {dim} components")));
            }
            let half_width =
                flags.f64_or("target-half-width", traj.grid().half_width() / lambda)?;
            let nodes = flags.usize_or("target-nodes", traj.grid().nodes_per_axis())?;
            let target = GridSpec::new(dim, half_width, nodes).map_err(runtime)?;
            let spec = RescaleSpec::new(lambda, x0).map_err(runtime)?;
            let out_dir = PathBuf::from(flags.str("out")?);
            let rescaled = rescale(&traj, &spec, target).map_err(runtime)?;
            std::fs::create_dir_all(&out_dir).map_err(runtime)?;
            let manifest = lmcflow::io::save_trajectory(&rescaled, &out_dir).map_err(runtime)?;
            println!("{}", serde_json::to_string_pretty(&manifest).map_err(runtime)?);
            Ok(ExitCode::SUCCESS)
        }
        "probe" => {
            let (kind, rest) =
                rest.split_first().ok_or_else(|| usage("probe needs growth|quadfit"))?;
            let flags = Flags::parse(rest)?;
            let traj = load_traj_flag(&flags)?;
            let grid = *traj.grid();
            match kind.as_str() {
                "growth" => {
                    let r0 = flags.f64("r0")?;
                    let radius = flags.f64_or(
                        "mask-radius",
                        grid.half_width() * (grid.dim() as f64).sqrt(),
                    )?;
                    let mask = make_ball_mask(grid, &[0.0; 3][..grid.dim()], radius)
                        .map_err(runtime)?;
                    let report = growth_ratio(&traj, r0, &mask).map_err(runtime)?;
                    if let Some(path) = flags.opt("csv") {
                        std::fs::write(path, report.to_csv()).map_err(runtime)?;
                    }
                    println!("{}", serde_json::to_string_pretty(&report).map_err(runtime)?);
                }
                "quadfit" => {
                    let radius = flags.f64_or("mask-radius", grid.half_width())?;
                    let mask = make_ball_mask(grid, &[0.0; 3][..grid.dim()], radius)
                        .map_err(runtime)?;
                    let k = match flags.opt("time") {
                        Some(t) => {
                            let t: f64 =
                                t.parse().map_err(|_| usage("--time must be a number"))?;
                            traj.index_at_time(t, traj.snapshot_dt().max(1e-12))
                                .ok_or_else(|| usage(format!("no snapshot near t = {t}")))?
                        }
                        None => traj.len() - 1,
                    };
                    let fit = quadratic_fit(traj.snapshot(k), &mask).map_err(runtime)?;
                    println!("{}", serde_json::to_string_pretty(&fit).map_err(runtime)?);
                }
                other => return Err(usage(format!("unknown probe '{other}'"))),
            }
            Ok(ExitCode::SUCCESS)
        }
        "stationary" => {
            let flags = Flags::parse(rest)?;
            let config = read_config(&flags)?;
            let out = PathBuf::from(flags.str("out")?);
            let summary = stationary_run(&config, &out).map_err(|e| match e {
                lmcflow::runner::RunnerError::Validation(m) => usage(m),
                other => runtime(other),
            })?;
            println!("{}", serde_json::to_string_pretty(&summary).map_err(runtime)?);
            Ok(ExitCode::SUCCESS)
        }
        other => Err(usage(format!("unknown command '{other}'"))),
    }
}
