use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use threat_pinn::trainer::Profile;
use threat_pinn_cli::{commands, CliError};

#[derive(Parser)]
#[command(name = "threat-pinn", version, about = "Minimum threat-exposure paths: PINN trainer and shooting baseline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProfileArg {
    Full,
    Desk,
}

impl From<ProfileArg> for Profile {
    fn from(p: ProfileArg) -> Self {
        match p {
            ProfileArg::Full => Profile::Full,
            ProfileArg::Desk => Profile::Desk,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train a PINN for the scenario and write model, log, trajectory and loss report.
    Train {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, value_enum, default_value = "full")]
        profile: ProfileArg,
        /// Overrides the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Solve a static-field scenario by multi-start shooting.
    Shoot {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Train and shoot on random endpoint pairs in the scenario's field.
    Compare {
        /// A scenario file, or a directory whose *.toml files are cycled through.
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, value_enum, default_value = "full")]
        profile: ProfileArg,
        #[arg(long, default_value_t = 50)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Export plot tables for the training run stored in --out-dir.
    Plotdata {
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Check a scenario file against the schema.
    Validate {
        #[arg(long)]
        scenario: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train {
            scenario,
            profile,
            seed,
            out_dir,
        } => {
            let r = commands::train(&scenario, profile.into(), seed, &out_dir)?;
            println!(
                "trained {} epochs; cost {}; max |H| {}",
                r.epochs, r.cost, r.max_abs_hamiltonian
            );
            for (k, l) in r.losses.iter().enumerate() {
                println!("L{} = {l}", k + 1);
            }
        }
        Command::Shoot { scenario, out_dir } => {
            let r = commands::shoot(&scenario, &out_dir)?;
            println!(
                "psi0 {} arrival {} cost {} miss {} converged {}",
                r.psi0, r.arrival, r.cost, r.miss, r.converged
            );
        }
        Command::Compare {
            scenario,
            profile,
            trials,
            seed,
            out_dir,
        } => {
            let r = commands::compare(&scenario, profile.into(), trials, seed, &out_dir)?;
            println!("{} trials, {} failed", r.trials, r.failures);
            for (k, s) in r.losses.iter().enumerate() {
                if let (Some(m), Some(sd)) = (s.mean, s.std) {
                    println!("L{}: mean {m} std {sd}", k + 1);
                }
            }
            if let (Some(m), Some(sd)) = (r.delta.mean, r.delta.std) {
                println!("delta: mean {m} std {sd} (n = {})", r.delta.n);
            }
        }
        Command::Plotdata { out_dir } => {
            commands::plotdata(&out_dir)?;
            println!("wrote {}", out_dir.join(commands::PLOT_DIR).display());
        }
        Command::Validate { scenario } => {
            commands::validate(&scenario)?;
            println!("{}: ok", scenario.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
