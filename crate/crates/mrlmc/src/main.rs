use std::io::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mrlmc::commands::{self, SplitPart};
use mrlmc::io::write_text;
use mrlmc::{CliError, Result};

#[derive(Parser)]
#[command(name = "mrlmc", version, about = "Multimodal fNIRS/EEG representation learning toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Channel selection, band-pass filtering and resampling.
    Preprocess {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: PathBuf,
    },
    /// Train a model and write metrics, loss trace, checkpoint and config.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on the split its training run used.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitPart,
    },
    /// Loss-term ablation table (CSV).
    Ablate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated training seeds; defaults to the config's seed.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
    },
    /// N_scale x N_trans x N_head grid (CSV).
    Sweep {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference check of every hand-written gradient.
    Gradcheck {
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Export per-record v, u, z_f and z_e vectors as CSV.
    Embed {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Output file; stdout if omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn json(value: &impl serde::Serialize) -> String {
    serde_json::to_string_pretty(value).expect("serializable report")
}

fn run(command: Command) -> Result<bool> {
    match command {
        Command::Synth { spec, out } => {
            let n = commands::synth(&spec, &out)?;
            println!("wrote {n} records to {}", out.display());
        }
        Command::Preprocess { input, out, config } => {
            let n = commands::preprocess(&input, &out, &config)?;
            println!("wrote {n} records to {}", out.display());
        }
        Command::Train { data, config, out } => {
            let o = commands::train(&data, &config, &out)?;
            println!(
                "best epoch {} (val F1 {:.4}), test accuracy {:.4}, test F1 {:.4}",
                o.best_epoch, o.best_val_f1, o.test.accuracy, o.test.f1
            );
        }
        Command::Eval { checkpoint, data, split } => {
            println!("{}", json(&commands::eval(&checkpoint, &data, split)?));
        }
        Command::Ablate { data, config, out, seeds } => {
            for r in commands::ablate(&data, &config, &out, &seeds)? {
                println!("{:<10} F1 {:.4}", r.name, r.mean(|m| m.f1));
            }
        }
        Command::Sweep { data, config, out } => {
            let rows = commands::sweep(&data, &config, &out)?;
            let ok = rows.iter().filter(|r| matches!(r.status, commands::CellStatus::Ok(..))).count();
            println!("{ok} of {} grid points trained, table in {}", rows.len(), out.display());
        }
        Command::Gradcheck { config } => {
            let checks = commands::gradcheck(config.as_deref())?;
            for c in &checks {
                println!(
                    "{:<18} max_rel_err {:.3e}  coords {:>4}  kinks {:>3}  {}",
                    c.name,
                    c.max_rel_err,
                    c.coords,
                    c.kinks,
                    if c.passed() { "ok" } else { "FAILED" }
                );
            }
            return Ok(checks.iter().all(|c| c.passed()));
        }
        Command::Embed { checkpoint, data, out } => {
            let csv = commands::embed(&checkpoint, &data)?;
            match out {
                Some(path) => write_text(&path, &csv)?,
                None => {
                    let mut stdout = std::io::stdout().lock();
                    match stdout.write_all(csv.as_bytes()).and_then(|_| stdout.flush()) {
                        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => {
                            return Err(CliError::io(std::path::Path::new("<stdout>"), e))
                        }
                        _ => {}
                    }
                }
            }
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
