use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rishm_cli::{cmd_accuracy, cmd_gen, cmd_report, cmd_run, median, CliError, CliResult, RunRequest, OUT_DIR_ENV};
use rishm_core::controller::Variant;
use rishm_core::scenario::Scale;

#[derive(Parser)]
#[command(name = "rishm", version, about = "Surrogate-assisted directional sensor deployment benchmark")]
struct Cli {
    /// Worker threads for runs and evaluation (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Output directory.
    #[arg(long, global = true, env = OUT_DIR_ENV, default_value = ".")]
    out: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a benchmark instance.
    Gen {
        #[arg(long)]
        scale: Scale,
        #[arg(long)]
        seed: u64,
        /// ESRI ASCII elevation grid to use instead of synthetic terrain.
        #[arg(long)]
        dem: Option<PathBuf>,
    },
    /// Optimize an instance with one or more variants and seeds.
    Run {
        #[arg(long)]
        instance: PathBuf,
        /// Comma-separated: rishm, rishm_wo_global, rishm_wo_local, ga_only, random_search.
        #[arg(long, value_delimiter = ',', default_value = "rishm")]
        variant: Vec<Variant>,
        /// Comma-separated seeds.
        #[arg(long, value_delimiter = ',', default_value = "0", conflicts_with = "repetitions")]
        seed: Vec<u64>,
        /// Shorthand for seeds 0..R.
        #[arg(long)]
        repetitions: Option<u64>,
        #[arg(long, default_value_t = 2000)]
        max_fes: u64,
        #[arg(long)]
        pop_size: Option<usize>,
    },
    /// Summarise result files and merge their convergence traces.
    Report {
        #[arg(required = true)]
        files: Vec<PathBuf>,
        /// Allow results from several instances, summarised per instance.
        #[arg(long)]
        group: bool,
    },
    /// Held-out pairwise accuracy of the ranking surrogate.
    Accuracy {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0")]
        seed: Vec<u64>,
    },
}

fn execute(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::usage(e.to_string()))?;
    }
    match cli.command {
        Command::Gen { scale, seed, dem } => {
            let path = cmd_gen(scale, seed, dem.as_deref(), &cli.out)?;
            println!("{}", path.display());
        }
        Command::Run {
            instance,
            variant,
            seed,
            repetitions,
            max_fes,
            pop_size,
        } => {
            let seeds = match repetitions {
                Some(0) => return Err(CliError::usage("--repetitions must be at least 1")),
                Some(r) => (0..r).collect(),
                None => seed,
            };
            let req = RunRequest {
                instance,
                variants: variant,
                seeds,
                max_fes,
                pop_size,
                out_dir: cli.out,
            };
            for (path, r) in cmd_run(&req)? {
                println!(
                    "{} seed {}: best {:.6} coverage {:.4} after {} evaluations -> {}",
                    r.config.variant,
                    r.config.seed,
                    r.final_best(),
                    r.best.objective.coverage_fraction,
                    r.evaluations,
                    path.display()
                );
            }
        }
        Command::Report { files, group } => {
            let out = cmd_report(&files, group, &cli.out)?;
            print!("{}", out.table);
            println!(
                "wrote {} and {} ({} rows)",
                out.summary_csv.display(),
                out.convergence_csv.display(),
                out.convergence_rows
            );
        }
        Command::Accuracy { instance, seed } => {
            let reports = cmd_accuracy(&instance, &seed, &cli.out)?;
            let mut acc = Vec::new();
            for (path, r) in &reports {
                println!(
                    "seed {}: held-out accuracy {:.2}% (train {:.2}%, {} offspring) -> {}",
                    r.seed,
                    100.0 * r.test_accuracy,
                    100.0 * r.train_accuracy,
                    r.test_size,
                    path.display()
                );
                acc.push(r.test_accuracy);
            }
            println!("median held-out accuracy {:.2}%", 100.0 * median(&acc));
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
            ExitCode::from(e.kind.exit_code() as u8)
        }
    }
}
