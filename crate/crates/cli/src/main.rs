use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pdmp::bench::{
    convergence_diagnostics, default_interval, replicate_estimate, run_experiment, RateCheckOptions,
};
use pdmp::config::{validate_grid_points, ConfigError, RunConfig};
use pdmp::density::select_model;
use pdmp::jumprate::{estimate_rate, write_grid_tsv, EvalGrid, MIN_TRANSITIONS};
use pdmp::simulate::{simulate_chain, JumpChain};

#[derive(Debug, Parser)]
#[command(name = "pdmp", version, about = "Simulate PDMP jump chains and estimate their jump rate")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed; overrides experiment.base_seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides io.output_dir.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker thread bound; overrides experiment.threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Odd number of evaluation points on the interval; overrides io.grid_points.
    #[arg(long = "grid-points", global = true)]
    grid_points: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a jump chain and write it with reconstructed jump times.
    Simulate {
        /// Number of transitions; overrides experiment.n.
        #[arg(long)]
        n: Option<usize>,
    },
    /// Fit the density estimator and evaluate the jump-rate estimator on the interval.
    Estimate {
        /// Chain file to read; a chain is simulated from the config otherwise.
        #[arg(long)]
        chain: Option<PathBuf>,
        /// Number of transitions when simulating; overrides experiment.n.
        #[arg(long)]
        n: Option<usize>,
        /// Leave the lambda_true column out of the grid file.
        #[arg(long)]
        no_truth: bool,
    },
    /// Run the replicated experiment and write the summary table.
    Bench,
    /// Stationarity, D_hat rate and tail-condition checks.
    Diagnose,
}

#[derive(Debug)]
enum CliError {
    Config(ConfigError),
    Core(pdmp::Error),
    Io(PathBuf, std::io::Error),
    Numerical(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(ConfigError::Io { .. }) => 4,
            CliError::Config(_) => 2,
            CliError::Core(pdmp::Error::Io(_)) | CliError::Io(..) => 4,
            CliError::Core(e) if e.is_numerical() => 3,
            CliError::Core(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(e) => write!(f, "{e}"),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Io(p, e) => write!(f, "{}: {e}", p.display()),
            CliError::Numerical(m) => write!(f, "{m}"),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e)
    }
}

impl From<pdmp::Error> for CliError {
    fn from(e: pdmp::Error) -> Self {
        CliError::Core(e)
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

/// Loads the config and applies flag overrides (flag > file > default).
fn load_config(cli: &Cli) -> Result<RunConfig> {
    let path = cli.config.as_ref().ok_or_else(|| {
        CliError::Config(ConfigError::Invalid {
            field: "--config".into(),
            message: "a config file is required".into(),
        })
    })?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.experiment.base_seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.io.output_dir = out.clone();
    }
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(ConfigError::Invalid {
                field: "--threads".into(),
                message: "must be >= 1".into(),
            }
            .into());
        }
        cfg.experiment.threads = Some(t);
    }
    if let Some(g) = cli.grid_points {
        validate_grid_points(g)?;
        cfg.io.grid_points = g;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::Io(dir.to_path_buf(), e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Io(path.to_path_buf(), e))
}

fn write_effective(cfg: &RunConfig, out: &Path) -> Result<()> {
    let eff = cfg.effective().unwrap_or_else(|_| cfg.clone());
    let path = out.join("effective_config.toml");
    fs::create_dir_all(out).map_err(|e| CliError::Io(out.to_path_buf(), e))?;
    fs::write(&path, eff.to_toml_string()).map_err(|e| CliError::Io(path, e))
}

fn slug(name: &str) -> String {
    let s: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
        .collect();
    s.trim_matches('_').to_string()
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    let out = cfg.io.output_dir.clone();
    match cli.command {
        Command::Simulate { n } => cmd_simulate(&cfg, n.unwrap_or(cfg.experiment.n), &out),
        Command::Estimate { chain, n, no_truth } => {
            cmd_estimate(&cfg, chain.as_deref(), n.unwrap_or(cfg.experiment.n), !no_truth, &out)
        }
        Command::Bench => cmd_bench(&cfg, &out),
        Command::Diagnose => cmd_diagnose(&cfg, &out),
    }
}

fn cmd_simulate(cfg: &RunConfig, n: usize, out: &Path) -> Result<()> {
    let model = cfg.model_spec()?;
    let seed = cfg.experiment.base_seed;
    log::info!("simulating {n} transitions of `{}` with seed {seed}", model.name);
    let chain = simulate_chain(&model, cfg.experiment.z0, n, seed)?.with_times()?;
    let path = out.join("chain.tsv");
    chain.write_to(create(&path)?)?;
    write_effective(cfg, out)?;
    let (lo, hi) = chain
        .z
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &z| (a.min(z), b.max(z)));
    let t_n = chain.times.as_ref().and_then(|t| t.last().copied()).unwrap_or(0.0);
    println!("n={} min_z={lo} max_z={hi} T_n={t_n} file={}", chain.n(), path.display());
    Ok(())
}

fn cmd_estimate(cfg: &RunConfig, chain_path: Option<&Path>, n: usize, truth: bool, out: &Path) -> Result<()> {
    let chain = match chain_path {
        Some(p) => {
            let f = File::open(p).map_err(|e| CliError::Io(p.to_path_buf(), e))?;
            JumpChain::read_from(BufReader::new(f))?
        }
        None => simulate_chain(&cfg.model_spec()?, cfg.experiment.z0, n, cfg.experiment.base_seed)?,
    };
    if chain.n() < MIN_TRANSITIONS {
        return Err(CliError::Numerical(format!(
            "n = {} too small for threshold 1/ln(n): need at least {MIN_TRANSITIONS} transitions",
            chain.n()
        )));
    }
    let interval = match cfg.estimation.interval {
        Some(_) => cfg.interval()?,
        None => default_interval(&chain.model).ok_or_else(|| ConfigError::Invalid {
            field: "estimation.interval".into(),
            message: "required: the chain's model matches no preset".into(),
        })?,
    };
    let grid = EvalGrid::new(interval, cfg.io.grid_points)?;
    let fit = select_model(chain.observations(), &cfg.basis(), cfg.penalty()?)?;
    let est = estimate_rate(&fit, &chain, &grid)?;

    fit.write_to(create(&out.join("fit.txt"))?)?;
    let rate = chain.model.rate.clone();
    let truth_fn = truth.then_some(move |y: f64| rate.rate(y));
    write_grid_tsv(&est, truth_fn, create(&out.join("grid.tsv"))?)?;
    write_effective(cfg, out)?;
    let risk = if truth {
        pdmp::jumprate::l2_risk(&grid, &est.values, |y| chain.model.rate.rate(y))
            .map(|r| format!(" risk={r}"))
            .unwrap_or_default()
    } else {
        String::new()
    };
    println!(
        "n={} m_hat={} D_mhat={} threshold={}{risk} dir={}",
        chain.n(),
        fit.m_hat,
        fit.d_hat(),
        est.threshold,
        out.display()
    );
    Ok(())
}

fn cmd_bench(cfg: &RunConfig, out: &Path) -> Result<()> {
    let ex = cfg.experiment_config()?;
    log::info!(
        "bench `{}`: n = {:?}, {} replicates",
        ex.model.name,
        ex.n_values,
        ex.replicates
    );
    let table = run_experiment(&ex, cfg.experiment.threads)?;
    let path = out.join(format!("bench_{}.csv", slug(&ex.model.name)));
    table.write_csv(create(&path)?, cfg.io.record_timing)?;
    write_effective(cfg, out)?;
    if cfg.io.write_grids {
        let rate = ex.model.rate.clone();
        for &n in &ex.n_values {
            for i in 0..ex.replicates {
                let est = match replicate_estimate(&ex, n, i) {
                    Ok(e) => e,
                    Err(e) => {
                        log::warn!("no grid for n = {n}, replicate {i}: {e}");
                        continue;
                    }
                };
                let p = out.join("grids").join(format!("n{n}_r{i}.tsv"));
                let r = rate.clone();
                write_grid_tsv(&est, Some(move |y: f64| r.rate(y)), create(&p)?)?;
            }
        }
    }
    for row in table.ok_rows() {
        println!(
            "n={} D_mhat={} D_mopt={} risk={} oracle={} time_s={}",
            row.n, row.mean_d_mhat, row.mean_d_mopt, row.mean_risk, row.oracle_ratio, row.mean_time_seconds
        );
    }
    println!("file={}", path.display());
    let failed = table.failures();
    if failed > 0 {
        return Err(CliError::Numerical(format!("{failed} of {} rows failed", table.rows.len())));
    }
    Ok(())
}

fn cmd_diagnose(cfg: &RunConfig, out: &Path) -> Result<()> {
    let ex = cfg.experiment_config()?;
    let opts = RateCheckOptions::default();
    let report = convergence_diagnostics(&ex, &opts)?;
    let mut text = String::new();
    use std::fmt::Write as _;
    let h = &report.half_chain;
    writeln!(text, "half_chain_m\t{}", h.m).unwrap();
    writeln!(text, "half_chain_distance\t{}", h.distance).unwrap();
    writeln!(text, "half_chain_iid_reference\t{}", h.iid_reference).unwrap();
    let r = &report.rate;
    writeln!(text, "d_hat_y0\t{}", r.y0).unwrap();
    writeln!(text, "d_hat_reference\t{}", r.reference).unwrap();
    for (n, e) in r.n_values.iter().zip(&r.rmse) {
        writeln!(text, "d_hat_rmse_n{n}\t{e}").unwrap();
    }
    writeln!(text, "d_hat_slope\t{}", r.slope).unwrap();
    writeln!(text, "tail_condition\t{:?}", report.tail).unwrap();
    for w in &report.warnings {
        writeln!(text, "warning\t{w}").unwrap();
    }
    let path = out.join("diagnose.tsv");
    fs::create_dir_all(out).map_err(|e| CliError::Io(out.to_path_buf(), e))?;
    fs::write(&path, &text).map_err(|e| CliError::Io(path.clone(), e))?;
    print!("{text}");
    Ok(())
}
