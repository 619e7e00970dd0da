use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use isac_sim::harness::{
    compare_placements, compare_signal_types, emit_comparison, emit_reports, parse_scenario, run_scenario, Format,
    HarnessError,
};

#[derive(Parser)]
#[command(name = "isac-sim", version, about = "Secure mono-static ISAC sensing simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its reports.
    Run {
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the scenario's master_seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Comma-separated list of csv, jsonl.
        #[arg(long, default_value = "csv,jsonl", value_delimiter = ',')]
        format: Vec<Format>,
    },
    /// Build a comparison table from a base scenario.
    Compare {
        table: Table,
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Parse and validate a scenario file.
    Validate { scenario: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum Table {
    Placements,
    Signals,
}

fn execute(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Run { scenario, out, seed, format } => {
            let mut s = parse_scenario(&scenario)?;
            if let Some(seed) = seed {
                s.master_seed = seed;
            }
            let report = run_scenario(&s)?;
            for path in emit_reports(&report, &out, &format)? {
                println!("wrote {}", path.display());
            }
            let agg = &report.aggregate;
            println!(
                "{}: {} occasions, detection probability {}, {} false alarms, {} fronthaul bits",
                report.scenario,
                agg.n_occasions,
                agg.detection_probability.map_or("n/a".into(), |p| format!("{p:.3}")),
                agg.false_alarms,
                agg.fronthaul_bits
            );
        }
        Command::Compare { table, scenario, out } => {
            let s = parse_scenario(&scenario)?;
            let path = match table {
                Table::Placements => emit_comparison(&compare_placements(&s)?, &out, "placements")?,
                Table::Signals => emit_comparison(&compare_signal_types(&s)?, &out, "signals")?,
            };
            let text = std::fs::read_to_string(&path).map_err(|e| HarnessError::Io { path: path.clone(), source: e })?;
            print!("{text}");
            println!("wrote {}", path.display());
        }
        Command::Validate { scenario } => {
            let s = parse_scenario(&scenario)?;
            println!("{}: ok ({} occasions, {:?})", s.name, s.n_occasions, s.placement);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
