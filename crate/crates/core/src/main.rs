use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use wz_she_lab::experiments::{
    constants_estimate, run_timed, write_outputs, ExperimentConfig, EXPERIMENTS,
};
use wz_she_lab::homogenization::{transition_sweep, write_sweep_csv, HomogenizationRun};
use wz_she_lab::noise::{mollify, sample_white_noise, GridSpec};
use wz_she_lab::rng::{derive_key, label_hash};
use wz_she_lab::she::{chaos_second_moment, exp_local_time_moment, limit_second_moment, solve_she_ito, ItoParams};
use wz_she_lab::solver::{c_eps, feynman_kac, solve_fd, FdParams, InitialCondition};
use wz_she_lab::stats::{par_map, EstimateWithCI};
use wz_she_lab::{Covariance, CovarianceTable, LabError, Result};

/// Worker threads for the data-parallel loops. Results do not depend on it.
const WORKERS_ENV: &str = "WZ_WORKERS";

#[derive(Parser)]
#[command(name = "wz-she-lab", version, about = "Wong-Zakai approximations of the 1D stochastic heat equation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Scheme {
    Fd,
    Fk,
}

#[derive(Clone, Copy, ValueEnum)]
enum SheMethod {
    Ito,
    Chaos,
    Localtime,
}

#[derive(Subcommand)]
enum Command {
    /// Run a named experiment and write its report.
    Run {
        experiment: Option<String>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// List the experiments and exit.
        #[arg(long)]
        list: bool,
        /// Reduced replication (smoke run).
        #[arg(long)]
        quick: bool,
    },
    /// Estimate c_* and sigma_*^2 and print them as JSON.
    Constants {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Solve the mollified equation on one noise realization.
    Solve {
        #[arg(long)]
        eps: f64,
        #[arg(long)]
        t: f64,
        #[arg(long, value_enum, default_value = "fd")]
        scheme: Scheme,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Write the full FD field as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Second moment of the limiting equation at x = 0 with u0 = 1.
    She {
        #[arg(long)]
        t: f64,
        #[arg(long, default_value_t = 12)]
        kmax: usize,
        #[arg(long, value_enum, default_value = "chaos")]
        method: SheMethod,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Fluctuation sweep of the scale family; CSV on stdout or --out.
    Homog {
        #[arg(long, num_args = 1.., required = true)]
        alpha: Vec<f64>,
        #[arg(long, num_args = 1.., required = true)]
        eps: Vec<f64>,
        #[arg(long, default_value_t = 200)]
        reps: usize,
        #[arg(long, default_value_t = 0.5)]
        t: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dump the covariance table (t, x, R) as CSV.
    Covariance {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write one white-noise realization in the binary replay format.
    Noise {
        #[arg(long)]
        t: f64,
        #[arg(long, default_value_t = 1.0)]
        half_width: f64,
        #[arg(long, default_value_t = 1e-3)]
        dt: f64,
        #[arg(long, default_value_t = 0.02)]
        dx: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(path: Option<&PathBuf>, experiment: Option<&str>) -> Result<ExperimentConfig> {
    let mut c = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            let mut v: serde_json::Value = serde_json::from_str(&text)?;
            // The positional experiment wins over the file.
            if let (Some(e), Some(obj)) = (experiment, v.as_object_mut()) {
                obj.insert("experiment".into(), json!(e));
            }
            ExperimentConfig::from_json(&v.to_string())?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(e) = experiment {
        c.experiment = e.to_string();
    }
    Ok(c)
}

fn init_workers() -> Result<()> {
    if let Ok(v) = std::env::var(WORKERS_ENV) {
        let n: usize = v
            .parse()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| LabError::Config(format!("{WORKERS_ENV} must be a positive integer, got `{v}`")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| LabError::Config(e.to_string()))?;
    }
    Ok(())
}

fn print_json(v: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("json"));
}

fn estimate_json(e: &EstimateWithCI) -> serde_json::Value {
    let (lo, hi) = e.ci95();
    json!({ "mean": e.mean, "se": e.se, "n": e.n, "ci95": [lo, hi] })
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run { experiment, config, seed, out, list, quick } => {
            if list {
                for (name, about) in EXPERIMENTS {
                    println!("{name:<16}{about}");
                }
                return Ok(true);
            }
            let name = experiment.ok_or_else(|| LabError::Config("missing experiment name (see --list)".into()))?;
            let mut c = load_config(config.as_ref(), Some(&name))?;
            if let Some(s) = seed {
                c.seed = s;
            }
            if quick {
                c = c.quick();
            }
            let (report, elapsed) = run_timed(&c)?;
            let dir = out.or_else(|| c.output.dir.clone().map(PathBuf::from));
            match dir {
                Some(d) => write_outputs(&d, &report, elapsed)?,
                None => println!("{}", report.to_json()),
            }
            for check in &report.verdict.checks {
                eprintln!("[{}] {}: {}", if check.pass { "pass" } else { "FAIL" }, check.name, check.detail);
            }
            eprintln!("{}: {} in {:.1}s", report.experiment, if report.verdict.pass { "pass" } else { "FAIL" }, elapsed.as_secs_f64());
            Ok(report.verdict.pass)
        }
        Command::Constants { config, seed } => {
            let c = load_config(config.as_ref(), None)?;
            let spec = c.spec()?;
            let key = derive_key(seed.unwrap_or(c.seed), label_hash("constants"));
            let e = constants_estimate(&CovarianceTable::build(spec), spec, &c.constants, key)?;
            print_json(&json!({
                "c_star": e.c_star,
                "c_star_se": e.c_star_se,
                "sigma_star_sq": e.sigma_star_sq,
                "sigma_star_sq_se": e.sigma_star_sq_se,
                "sigma_prime_sq": e.sigma_prime_sq,
                "sigma_prime_sq_se": e.sigma_prime_sq_se,
                "phi_spec": e.phi_spec,
            }));
            Ok(true)
        }
        Command::Solve { eps, t, scheme, seed, config, csv } => {
            let c = load_config(config.as_ref(), None)?;
            let s = &c.solver;
            let spec = c.spec()?;
            let table = CovarianceTable::build(spec);
            let kernel = wz_she_lab::functionals::ClarkOconeKernel::build(&table, c.constants.a_step, c.constants.x_step)?;
            let sigma = wz_she_lab::functionals::sigma_prime_sq_mc(&kernel, c.convergence.sigma_paths, derive_key(seed, label_hash("sigma")));
            let ce = c_eps(eps, wz_she_lab::functionals::c_star_quadrature(&table), sigma.mean)?;
            let half = s.probes.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            let grid = GridSpec::buffered(t, half, s.noise_dt, s.noise_dx, spec.t_halfwidth * eps * eps)?;
            let field = mollify(&sample_white_noise(&grid, seed)?, &spec, eps)?;
            let probes: Vec<serde_json::Value> = match scheme {
                Scheme::Fd => {
                    let sol = solve_fd(&field, ce, &s.u0, &FdParams::on_field(&field, t, s.solver_dt))?;
                    if let Some(p) = &csv {
                        sol.write_csv(BufWriter::new(File::create(p)?))?;
                    }
                    s.probes.iter().map(|&x| json!({ "x": x, "value": sol.at(x), "exact": true })).collect()
                }
                Scheme::Fk => s
                    .probes
                    .iter()
                    .map(|&x| {
                        let e = feynman_kac(&field, ce, &s.u0, t, x, s.fk_paths, s.fk_dt, derive_key(seed, label_hash("fk")))?;
                        Ok(json!({ "x": x, "estimate": estimate_json(&e) }))
                    })
                    .collect::<Result<_>>()?,
            };
            let scheme = match scheme {
                Scheme::Fd => "fd",
                Scheme::Fk => "fk",
            };
            print_json(&json!({ "eps": eps, "t": t, "seed": seed, "c_eps": ce, "scheme": scheme, "probes": probes }));
            Ok(true)
        }
        Command::She { t, kmax, method, seed, config } => {
            let c = load_config(config.as_ref(), None)?;
            let sm = &c.second_moment;
            let closed = exp_local_time_moment(t);
            let (name, value) = match method {
                SheMethod::Chaos => ("chaos", json!({ "value": chaos_second_moment(t, kmax), "exact": true, "kmax": kmax })),
                SheMethod::Localtime => {
                    let e = limit_second_moment(t, 0.0, &InitialCondition::one(), sm.lt_pairs, sm.lt_dt, sm.delta, seed)?;
                    ("localtime", estimate_json(&e))
                }
                SheMethod::Ito => {
                    let grid = GridSpec::buffered(t, 0.0, sm.ito_dt, sm.ito_dx, 0.0)?;
                    let u0 = InitialCondition::one();
                    let s: Result<Vec<f64>> = par_map(sm.ito_realizations, |r| {
                        let noise = sample_white_noise(&grid, derive_key(seed, r as u64))?;
                        let sol = solve_she_ito(&noise, &u0, &ItoParams { t, rows_per_step: 1 })?;
                        let u = sol.at(0.0).ok_or_else(|| LabError::OutOfDomain("x = 0".into()))?;
                        Ok(u * u)
                    })
                    .into_iter()
                    .collect();
                    ("ito", estimate_json(&EstimateWithCI::from_samples(&s?)))
                }
            };
            print_json(&json!({ "t": t, "x": 0.0, "closed_form": closed, "method": name, "second_moment": value }));
            Ok(true)
        }
        Command::Homog { alpha, eps, reps, t, seed, config, out } => {
            let c = load_config(config.as_ref(), None)?;
            let spec = c.spec()?;
            let table = CovarianceTable::build(spec);
            let kernel = wz_she_lab::functionals::ClarkOconeKernel::build(&table, c.constants.a_step, c.constants.x_step)?;
            let sigma = wz_she_lab::functionals::sigma_prime_sq_mc(&kernel, c.homogenization.sigma_paths, derive_key(seed, label_hash("sigma")));
            let run = HomogenizationRun { t, probes: c.homogenization.probes.clone(), realizations: reps, seed };
            let rows = transition_sweep(&alpha, &eps, wz_she_lab::functionals::c_star_quadrature(&table), sigma.mean, &spec, &run)?;
            match out {
                Some(p) => write_sweep_csv(&rows, BufWriter::new(File::create(p)?))?,
                None => write_sweep_csv(&rows, std::io::stdout().lock())?,
            }
            Ok(true)
        }
        Command::Covariance { config, out } => {
            let c = load_config(config.as_ref(), None)?;
            let table = CovarianceTable::build(c.spec()?);
            let mut w: Box<dyn Write> = match out {
                Some(p) => Box::new(BufWriter::new(File::create(p)?)),
                None => Box::new(std::io::stdout().lock()),
            };
            writeln!(w, "t,x,R")?;
            let (ts, xs) = (table.t_support(), table.x_support());
            let (nt, nx) = (40usize, 80usize);
            for i in 0..=nt {
                let s = -ts + 2.0 * ts * i as f64 / nt as f64;
                for j in 0..=nx {
                    let x = -xs + 2.0 * xs * j as f64 / nx as f64;
                    writeln!(w, "{s},{x},{}", table.time_factor(s) * table.space_factor(x))?;
                }
            }
            w.flush()?;
            Ok(true)
        }
        Command::Noise { t, half_width, dt, dx, seed, out } => {
            let grid = GridSpec::buffered(t, half_width, dt, dx, 0.0)?;
            let noise = sample_white_noise(&grid, seed)?;
            noise.write_binary(BufWriter::new(File::create(&out)?))?;
            eprintln!("{} cells ({} x {}) -> {}", grid.len(), grid.nt(), grid.nx(), out.display());
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = init_workers() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
