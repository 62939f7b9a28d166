use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use cpfsim::pool::{resolve_threads, Pool};
use cpfsim::render::render_svg;
use cpfsim::validate::{self, SUITES};
use cpfsim::{runner, CliError, CpfGrid, ExperimentConfig};

#[derive(Parser)]
#[command(name = "cpfsim", version, about = "Conditional past-future correlation sweeps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate the grid described by a config file.
    Run {
        config: PathBuf,
        /// Master seed, overrides `mc.seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Trajectory count, overrides `mc.n_traj`.
        #[arg(long)]
        traj: Option<usize>,
        /// Worker threads; falls back to CPFSIM_THREADS, then all cores.
        #[arg(long)]
        threads: Option<usize>,
        /// Exit 0 even if some cells have an impossible conditioning outcome.
        #[arg(long)]
        allow_degenerate: bool,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
        /// Output file; stdout when neither this nor the config names one.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Run validation suites and print one JSON line per check.
    Validate {
        /// One of the suites; all of them when omitted.
        suite: Option<String>,
        /// Bath size for cross-path, sample count for randomized suites.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        traj: Option<usize>,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Draw a grid CSV as an SVG heatmap.
    Render {
        grid: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn run(
    config: &Path,
    seed: Option<u64>,
    traj: Option<usize>,
    threads: Option<usize>,
    allow_degenerate: bool,
    format: Format,
    output: Option<PathBuf>,
) -> Result<ExitCode, CliError> {
    let cfg = ExperimentConfig::load(config)?.with_overrides(seed, traj)?;
    let pool = Pool::new(resolve_threads(threads));
    let start = Instant::now();
    let grid = runner::run(&cfg, &pool)?;
    eprintln!(
        "cpfsim: {} cells in {:.3} s on {} threads",
        grid.cells.len(),
        start.elapsed().as_secs_f64(),
        pool.threads()
    );
    let render = |f: Format| match f {
        Format::Csv => grid.to_csv_string(),
        Format::Json => grid.to_json_string(),
    };
    let mut wrote = false;
    if let Some(path) = &output {
        write_file(path, &render(format))?;
        wrote = true;
    }
    if let Some(path) = &cfg.output.csv {
        write_file(path, &render(Format::Csv))?;
        wrote = true;
    }
    if let Some(path) = &cfg.output.json {
        write_file(path, &render(Format::Json))?;
        wrote = true;
    }
    if let Some(path) = &cfg.output.svg {
        write_file(path, &render_svg(&grid))?;
    }
    if !wrote {
        print!("{}", render(format));
    }
    let failed: Vec<_> = grid.failed_cells().collect();
    for (t, tau, cell) in &failed {
        eprintln!("cpfsim: cell t={t} tau={tau}: {}", cell.error.as_deref().unwrap_or("not evaluated"));
    }
    if !failed.is_empty() && !allow_degenerate {
        eprintln!("cpfsim: {} degenerate cells (pass --allow-degenerate to accept)", failed.len());
        return Ok(ExitCode::from(3));
    }
    Ok(ExitCode::SUCCESS)
}

fn validate_cmd(
    suite: Option<String>,
    n: Option<usize>,
    seed: Option<u64>,
    traj: Option<usize>,
    threads: Option<usize>,
) -> ExitCode {
    let defaults = validate::Options::default();
    let opts = validate::Options { n, seed: seed.unwrap_or(defaults.seed), n_traj: traj.unwrap_or(defaults.n_traj) };
    let pool = Pool::new(resolve_threads(threads));
    let suites: Vec<String> = match suite {
        Some(s) => vec![s],
        None => SUITES.iter().map(|s| s.to_string()).collect(),
    };
    let mut all_pass = true;
    for s in &suites {
        match validate::run_suite(s, &opts, &pool) {
            Ok(checks) => {
                for c in checks {
                    all_pass &= c.pass;
                    println!("{}", serde_json::to_string(&c).expect("check serializes"));
                }
            }
            Err(e) => {
                all_pass = false;
                println!("{}", serde_json::json!({"suite": s, "check": "suite ran", "pass": false, "error": e.to_string()}));
            }
        }
    }
    if all_pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, seed, traj, threads, allow_degenerate, format, output } => {
            run(&config, seed, traj, threads, allow_degenerate, format, output)
        }
        Command::Validate { suite, n, seed, traj, threads } => Ok(validate_cmd(suite, n, seed, traj, threads)),
        Command::Render { grid, output } => {
            CpfGrid::read_csv(&grid).and_then(|g| write_file(&output, &render_svg(&g))).map(|_| ExitCode::SUCCESS)
        }
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("cpfsim: {e}");
            match e {
                CliError::Parse(_) | CliError::Field { .. } => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
