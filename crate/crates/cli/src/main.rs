use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use icci_cli::{run, Experiment, Mode, Overrides};
use icci_sc::modulation::constellation_table;

#[derive(Debug, Parser)]
#[command(name = "icci", version, about = "ICCI and separate-coding experiment runner")]
struct Args {
    /// What to run.
    #[arg(value_enum, required_unless_present = "dump_constellations")]
    mode: Option<Mode>,
    /// Experiment spec (TOML).
    #[arg(long, required_unless_present = "dump_constellations")]
    spec: Option<PathBuf>,
    /// Output directory, overriding the spec.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Experiment seed, overriding the spec.
    #[arg(long)]
    seed: Option<u64>,
    /// Zero wall-clock columns so repeated runs produce identical files.
    #[arg(long)]
    deterministic: bool,
    /// Print the modulation constellations as CSV and exit.
    #[arg(long)]
    dump_constellations: bool,
}

fn main() -> ExitCode {
    let args = Args::parse();
    if args.dump_constellations {
        print!("{}", constellation_table());
        return ExitCode::SUCCESS;
    }
    let (Some(mode), Some(spec)) = (args.mode, args.spec) else {
        unreachable!("clap enforces mode and spec");
    };
    let overrides = Overrides {
        out: args.out,
        seed: args.seed,
        deterministic: args.deterministic,
    };
    let result = Experiment::load(&spec, &overrides).and_then(|exp| {
        if let Some(declared) = exp.spec.mode.filter(|&m| m != mode) {
            return Err(icci_cli::CliError::Spec(format!("spec declares mode {declared:?}, requested {mode:?}")));
        }
        run(mode, &exp)
    });
    match result {
        Ok(outcome) => {
            for p in &outcome.written {
                println!("wrote {}", p.display());
            }
            if let Some(s) = outcome.summary {
                print!("{s}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
