use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tikhonov_gamma::cli::{self, EXIT_FAIL, EXIT_IO, EXIT_OK};

#[derive(Parser)]
#[command(version, about = "Run Tikhonov approximation and Gamma-convergence studies")]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a study and write its report.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Report path; overrides `output.path`. Standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides `output.seed`.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Check a config and list every problem in it.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

fn load(path: &PathBuf) -> Result<cli::StudyConfig, u8> {
    let text = fs::read_to_string(path).map_err(|e| {
        eprintln!("cannot read {}: {e}", path.display());
        EXIT_IO as u8
    })?;
    cli::parse_config(&text).map_err(|errs| {
        eprintln!("{}: invalid config", path.display());
        for issue in &errs.0 {
            eprintln!("  {issue}");
        }
        EXIT_FAIL as u8
    })
}

fn run(config: PathBuf, out: Option<PathBuf>, seed: Option<u64>) -> Result<u8, u8> {
    let cfg = load(&config)?;
    let outcome = cli::run_study(&cfg, seed);
    for note in &outcome.notes {
        eprintln!("{}: {note}", cfg.study.label());
    }
    let target = out.or_else(|| cfg.output.path.as_ref().map(PathBuf::from));
    let written = match &target {
        Some(p) => fs::File::create(p).and_then(|f| {
            let mut w = BufWriter::new(f);
            cli::write_report(&outcome.rows, cfg.output.format, &mut w)?;
            w.flush()
        }),
        None => {
            let mut w = io::stdout().lock();
            cli::write_report(&outcome.rows, cfg.output.format, &mut w).and_then(|_| w.flush())
        }
    };
    if let Err(e) = written {
        let dest = target.map_or("standard output".to_string(), |p| p.display().to_string());
        eprintln!("cannot write report to {dest}: {e}");
        return Err(EXIT_IO as u8);
    }
    Ok(outcome.exit_code as u8)
}

fn main() -> ExitCode {
    let args = Args::parse();
    let code = match args.command {
        Command::Run { config, out, seed } => run(config, out, seed),
        Command::Validate { config } => load(&config).map(|cfg| {
            println!("{}: ok ({} levels)", cfg.study.label(), cfg.schedule.levels.len());
            EXIT_OK as u8
        }),
    };
    ExitCode::from(code.unwrap_or_else(|c| c))
}
