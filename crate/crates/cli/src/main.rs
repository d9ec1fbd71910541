use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use hinfsearch::experiment::{run_experiment, Algorithm, ExperimentConfig, GeneratorSpec, Outcome};
use hinfsearch::hinf::norm::hinf_norm_grid;
use hinfsearch::hinf::riccati::{hinf_feasible, hinf_norm_bisect, verify_bounded_real};
use hinfsearch::lti::{assemble_closed_loop, spectral_radius, Plant, Policy};
use hinfsearch::modelfree::{power_iteration_norm, EstimatorConfig};
use hinfsearch::problem::{gen_random_problem, parse_matrix, Problem};

const THREADS_ENV: &str = "HINFSEARCH_THREADS";

#[derive(Parser)]
#[command(name = "hinfsearch", version, about = "Direct policy search for H-infinity state feedback")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one solver and write trace.csv, summary.json and config.json.
    Solve(SolveArgs),
    /// Evaluate J(K) by frequency sweep and by Riccati bisection.
    Eval(GainArgs),
    /// Certify J(K) by bisection and report the certificate residuals.
    Certify {
        #[command(flatten)]
        gain: GainArgs,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
    },
    /// Estimate J(K) from simulated rollouts.
    Estimate {
        #[command(flatten)]
        gain: GainArgs,
        /// Window length N.
        #[arg(long = "horizon", short = 'N', default_value_t = 100)]
        horizon: usize,
        #[arg(long, default_value_t = 50)]
        power_iters: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Draw a random instance and print it as a problem file.
    Gen {
        #[arg(long)]
        nx: usize,
        #[arg(long)]
        nu: usize,
        #[arg(long)]
        seed: u64,
        /// Write here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a solver over several seeds or random instances in parallel.
    Bench(BenchArgs),
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long)]
    problem: Option<PathBuf>,
    #[arg(long)]
    algo: Option<Algorithm>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON experiment configuration; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    jstar: Option<f64>,
}

#[derive(Args)]
struct GainArgs {
    #[arg(long)]
    problem: PathBuf,
    /// Gain as rows separated by `;`, entries by `,`. Defaults to the
    /// problem's K0.
    #[arg(long, allow_hyphen_values = true)]
    gain: Option<String>,
}

#[derive(Args)]
struct BenchArgs {
    /// Problem file. Without it, random instances are drawn.
    #[arg(long)]
    problem: Option<PathBuf>,
    #[arg(long)]
    algo: Option<Algorithm>,
    /// First seed; runs use `seed, seed + 1, ...`.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 8)]
    runs: u64,
    #[arg(long, default_value_t = 3)]
    nx: usize,
    #[arg(long, default_value_t = 1)]
    nu: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    jstar: Option<f64>,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Solve(args) => solve(args),
        Command::Eval(args) => eval(&args),
        Command::Certify { gain, tol } => certify(&gain, tol),
        Command::Estimate {
            gain,
            horizon,
            power_iters,
            seed,
        } => estimate(&gain, horizon, power_iters, seed),
        Command::Gen { nx, nu, seed, out } => generate(nx, nu, seed, out.as_deref()),
        Command::Bench(args) => bench(args),
    }
}

fn read_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display()))?;
            Ok(ExperimentConfig::from_json(&text)?)
        }
        None => Ok(ExperimentConfig::default()),
    }
}

fn report(outcome: &Outcome) {
    let s = &outcome.summary;
    let rel = s.rel_err.map_or(String::new(), |r| format!(" rel_err={r:.6e}"));
    println!(
        "{} {} seed={} J={:.10}{rel} iterations={} oracle_calls={} status={}",
        s.problem, s.algorithm, s.seed, s.final_cost, s.iterations, s.oracle_calls, s.status
    );
}

fn solve(args: SolveArgs) -> Result<ExitCode> {
    let mut cfg = read_config(args.config.as_deref())?;
    if let Some(p) = args.problem {
        cfg.problem = Some(p);
        cfg.generate = None;
    }
    if let Some(a) = args.algo {
        cfg.algorithm = a;
    }
    if args.seed.is_some() {
        cfg.seed = args.seed;
    }
    if args.out.is_some() {
        cfg.out = args.out;
    }
    if args.jstar.is_some() {
        cfg.j_star = args.jstar;
    }
    let outcome = run_experiment(&cfg)?;
    report(&outcome);
    Ok(if outcome.success() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    })
}

fn load_gain(args: &GainArgs) -> Result<(Plant, Policy)> {
    let problem = Problem::load(&args.problem)?;
    let k = match &args.gain {
        Some(text) => Policy::new(parse_matrix("gain", text)?),
        None => match problem.k0 {
            Some(k) => k,
            None => bail!("no --gain given and the problem file has no K0"),
        },
    };
    problem.plant.check_gain(k.gain())?;
    let rho = spectral_radius(&problem.plant.closed_loop_matrix(k.gain())?)?;
    if rho >= 1.0 {
        bail!("policy not stabilizing: rho={rho}");
    }
    Ok((problem.plant, k))
}

fn eval(args: &GainArgs) -> Result<ExitCode> {
    let (plant, k) = load_gain(args)?;
    let cl = assemble_closed_loop(&plant, &k)?;
    let grid = hinf_norm_grid(&cl, 1024, 1e-10)?;
    let bisect = hinf_norm_bisect(&plant, &k, 1e-8)?;
    println!("rho={:.10}", cl.spectral_radius());
    println!("grid={:.12} peak_frequency={:.10}", grid.value, grid.peak_frequency);
    println!("bisection={:.12}", bisect.value);
    println!("difference={:.3e}", (grid.value - bisect.value).abs());
    Ok(ExitCode::SUCCESS)
}

fn certify(args: &GainArgs, tol: f64) -> Result<ExitCode> {
    let (plant, k) = load_gain(args)?;
    let cl = assemble_closed_loop(&plant, &k)?;
    let bisect = hinf_norm_bisect(&plant, &k, tol)?;
    let gamma = bisect.value + tol;
    let cert = hinf_feasible(&plant, &k, gamma)?;
    let grid = hinf_norm_grid(&cl, 1024, 1e-10)?;
    println!("bisection={:.12} tol={tol:e}", bisect.value);
    println!("grid={:.12} difference={:.3e}", grid.value, (grid.value - bisect.value).abs());
    match &cert.p {
        Some(p) => {
            let lmi = verify_bounded_real(&cl, gamma, p)?;
            println!("certified_gamma={gamma:.12}");
            println!("riccati_residual={:.3e}", cert.residual);
            println!("bounded_real_max_eig={lmi:.3e}");
            Ok(ExitCode::SUCCESS)
        }
        None => {
            println!("certificate not found at gamma={gamma:.12}");
            Ok(ExitCode::from(2))
        }
    }
}

fn estimate(args: &GainArgs, horizon: usize, power_iters: usize, seed: u64) -> Result<ExitCode> {
    let (plant, k) = load_gain(args)?;
    let cl = assemble_closed_loop(&plant, &k)?;
    let cfg = EstimatorConfig {
        horizon,
        power_iters,
        init_seed: seed,
        ..Default::default()
    };
    let est = power_iteration_norm(&cl, &cfg)?;
    let grid = hinf_norm_grid(&cl, 1024, 1e-10)?;
    println!("estimate={est:.12} horizon={horizon}");
    println!("grid={:.12} rel_gap={:.3e}", grid.value, (grid.value - est) / grid.value);
    Ok(ExitCode::SUCCESS)
}

fn generate(nx: usize, nu: usize, seed: u64, out: Option<&Path>) -> Result<ExitCode> {
    let g = gen_random_problem(nx, nu, seed)?;
    let problem = Problem {
        name: Some(format!("random-{nx}x{nu}-{seed}")),
        plant: g.plant,
        k0: Some(g.k0),
        j_star: None,
    };
    let text = problem.to_json() + "\n";
    match out {
        Some(path) => fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))?,
        None => print!("{text}"),
    }
    eprintln!("initial gain found after {} draws", g.attempts);
    Ok(ExitCode::SUCCESS)
}

fn thread_cap() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Some(n)),
            _ => bail!("{THREADS_ENV} must be a positive integer, got `{v}`"),
        },
        Err(_) => Ok(None),
    }
}

fn bench(args: BenchArgs) -> Result<ExitCode> {
    let base = read_config(args.config.as_deref())?;
    let configs: Vec<ExperimentConfig> = (0..args.runs)
        .map(|i| {
            let seed = args.seed + i;
            let mut cfg = base.clone();
            cfg.seed = Some(seed);
            cfg.algorithm = args.algo.unwrap_or(base.algorithm);
            if args.jstar.is_some() {
                cfg.j_star = args.jstar;
            }
            match &args.problem {
                Some(p) => {
                    cfg.problem = Some(p.clone());
                    cfg.generate = None;
                }
                None => {
                    cfg.problem = None;
                    cfg.generate = Some(GeneratorSpec {
                        n_x: args.nx,
                        n_u: args.nu,
                        seed,
                    });
                }
            }
            cfg.out = Some(args.out.join(format!("run-{seed}")));
            cfg
        })
        .collect();

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_cap()? {
        pool = pool.num_threads(n);
    }
    let pool = pool.build()?;
    let results: Vec<_> = pool.install(|| configs.par_iter().map(run_experiment).collect());

    fs::create_dir_all(&args.out)?;
    let mut table = String::from("seed,final_J,rel_err,iterations,oracle_calls,status\n");
    let mut columns = Vec::new();
    let mut all_ok = true;
    for (cfg, res) in configs.iter().zip(results) {
        let seed = cfg.seed.expect("set above");
        match res {
            Ok(outcome) => {
                report(&outcome);
                all_ok &= outcome.success();
                let s = &outcome.summary;
                let rel = s.rel_err.map_or(String::new(), |r| format!("{r:.16e}"));
                table += &format!(
                    "{seed},{:.16e},{rel},{},{},{}\n",
                    s.final_cost, s.iterations, s.oracle_calls, s.status
                );
                columns.push(outcome.trace.costs());
            }
            Err(e) => {
                eprintln!("seed {seed}: {e}");
                all_ok = false;
                table += &format!("{seed},,,,,error\n");
                columns.push(Vec::new());
            }
        }
    }
    fs::write(args.out.join("bench.csv"), table)?;
    fs::write(args.out.join("bench.dat"), plot_layout(&columns))?;
    Ok(if all_ok { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

/// Whitespace-separated columns `n J_1 J_2 ...`, padded with `?`, which
/// gnuplot treats as missing.
fn plot_layout(columns: &[Vec<f64>]) -> String {
    let rows = columns.iter().map(Vec::len).max().unwrap_or(0);
    let mut out = format!("# n {}\n", (1..=columns.len()).map(|i| format!("J_{i}")).collect::<Vec<_>>().join(" "));
    for n in 0..rows {
        out += &n.to_string();
        for col in columns {
            match col.get(n) {
                Some(v) => out += &format!(" {v:.16e}"),
                None => out += " ?",
            }
        }
        out.push('\n');
    }
    out
}
