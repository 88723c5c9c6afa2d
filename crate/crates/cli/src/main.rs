use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mixforge::{Error, Result};
use mixforge_cli::commands::{ablation_header, print_table, CHECKPOINT_DIR, METRICS_FILE};
use mixforge_cli::{cmd_ablate_k, cmd_augment, cmd_eval, cmd_train, exit_code, load_config, RunConfig};

#[derive(Parser)]
#[command(name = "mixforge", version, about = "Mix-based augmentation pipelines and desk-scale training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Export augmented batches as .npy tensors.
    Augment {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1)]
        count: usize,
    },
    /// Train and write a checkpoint plus per-epoch metrics.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Clean and corrupted test error of a checkpoint.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Train and evaluate once per stack width.
    AblateK {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', required = true)]
        k: Vec<usize>,
    },
}

fn load(common: &Common) -> Result<RunConfig> {
    let mut config = load_config(&common.config)?;
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(out) = &common.out {
        config.out_dir = out.clone();
    }
    Ok(config)
}

fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var("MIXFORGE_THREADS") else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("MIXFORGE_THREADS must be a positive integer, got {value:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Error::Config(e.to_string()))
}

fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    let mut stdout = std::io::stdout().lock();
    match cli.command {
        Command::Augment { common, count } => {
            let config = load(&common)?;
            for manifest in cmd_augment(&config, count)? {
                println!("{}", manifest.path().display());
            }
        }
        Command::Train { common } => {
            let config = load(&common)?;
            let trained = cmd_train(&config)?;
            let header: Vec<String> = ["epoch", "lr", "train_loss", "test_error"].map(String::from).to_vec();
            let rows: Vec<Vec<String>> = trained
                .log
                .iter()
                .map(|m| {
                    vec![
                        m.epoch.to_string(),
                        format!("{:.6}", m.lr),
                        format!("{:.6}", m.train_loss),
                        format!("{:.6}", m.test_error),
                    ]
                })
                .collect();
            print_table(&mut stdout, &header, &rows)?;
            println!("checkpoint: {}", config.out_dir.join(CHECKPOINT_DIR).display());
            println!("metrics: {}", config.out_dir.join(METRICS_FILE).display());
        }
        Command::Eval { common, checkpoint } => {
            let config = load(&common)?;
            let report = cmd_eval(&config, &checkpoint)?;
            print_table(&mut stdout, &report.header(), &[report.row()])?;
        }
        Command::AblateK { common, k } => {
            let config = load(&common)?;
            let rows = cmd_ablate_k(&config, &k)?;
            let cells: Vec<Vec<String>> = rows.iter().map(|r| r.cells()).collect();
            print_table(&mut stdout, &ablation_header(&rows), &cells)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
