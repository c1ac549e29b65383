use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use oneshot_cli::{config, CliError};

/// Run a one-shot information-theory experiment from a JSON config.
#[derive(Parser, Debug)]
#[command(name = "oneshot", version)]
struct Args {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Override the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (defaults to all cores).
    #[arg(long, env = "ONESHOT_THREADS")]
    threads: Option<usize>,
    /// Output directory for report.json and trials.csv.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Also write the per-trial log trials.csv.
    #[arg(long)]
    csv: bool,
}

fn execute(args: &Args) -> Result<i32, CliError> {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", args.config.display())))?;
    let mut cfg = config::parse(&text)?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    let threads = match args.threads {
        Some(0) => return Err(CliError::Config("--threads must be positive".into())),
        Some(n) => n,
        None => std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
    };
    let report = oneshot_cli::run(&cfg, threads)?;
    std::fs::create_dir_all(&args.out)?;
    let json_path = args.out.join("report.json");
    report.write_json(&json_path)?;
    if args.csv {
        report.write_csv(&args.out.join("trials.csv"))?;
    }
    for b in report.outcome.bounds.iter().filter(|b| b.violated()) {
        eprintln!("bound violated: {} (value {:e} > bound {:e})", b.name, b.value, b.bound);
    }
    println!("{} {} -> {}", cfg.experiment.name(), report.status(), json_path.display());
    Ok(report.exit_code())
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(&args) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
