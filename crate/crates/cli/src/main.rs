use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use s2dm::disentangler::LossSet;
use s2dm::pipeline::{
    cmd_ablate, cmd_eval, cmd_export_pca, cmd_gen_data, cmd_train_stage1, cmd_train_stage2,
    RunConfig,
};
use s2dm::Error;

#[derive(Parser)]
#[command(
    name = "s2dm",
    version,
    about = "Semantic/syntactic disentanglement for zero-shot span extraction"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Flat TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `out_dir`.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Overrides `seed` (and `S2DM_SEED`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// `key=value` overrides of config keys, in TOML syntax.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the parallel corpus, STS items and MRC sets.
    GenData,
    /// Train the disentangler on parallel data with the encoder frozen.
    TrainStage1,
    /// Fine-tune span heads on source-language questions.
    TrainStage2,
    /// Zero-shot evaluation and analysis reports.
    Eval,
    /// Stage 1 plus evaluation over a grid of loss sets.
    Ablate {
        /// `;`-separated loss sets such as `rl+kl+wpl;rl+kl+crl+sdl+wpl`.
        #[arg(long)]
        subsets: Option<String>,
        /// Train the listed subsets without the paired branch.
        #[arg(long)]
        single_network: bool,
    },
    /// Write a PCA projection of held-out sentence vectors.
    ExportPca {
        #[arg(long, default_value = "y")]
        vector: String,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn resolve(common: &Common) -> Result<RunConfig, Error> {
    let mut table: toml::Table = match &common.config {
        Some(path) => {
            if !path.exists() {
                return Err(Error::Missing(path.clone()));
            }
            toml::from_str(&std::fs::read_to_string(path)?)
                .map_err(|e| Error::config(e.to_string()))?
        }
        None => toml::Table::new(),
    };
    if let Ok(s) = std::env::var("S2DM_SEED") {
        let seed: i64 = s
            .parse()
            .map_err(|_| Error::config(format!("S2DM_SEED={s:?} is not an integer")))?;
        table.insert("seed".into(), toml::Value::Integer(seed));
    }
    for kv in &common.overrides {
        let (key, _) = kv
            .split_once('=')
            .ok_or_else(|| Error::config(format!("override {kv:?} lacks '='")))?;
        let parsed: toml::Table = toml::from_str(kv)
            .or_else(|_| toml::from_str(&format!("{key} = {:?}", &kv[key.len() + 1..])))
            .map_err(|e| Error::config(format!("override {kv:?}: {e}")))?;
        table.extend(parsed);
    }
    if let Some(seed) = common.seed {
        table.insert("seed".into(), toml::Value::Integer(seed as i64));
    }
    if let Some(dir) = &common.out_dir {
        table.insert(
            "out_dir".into(),
            toml::Value::String(dir.display().to_string()),
        );
    }
    RunConfig::from_toml(&toml::to_string(&table).map_err(|e| Error::config(e.to_string()))?)
}

fn run(cli: Cli) -> Result<(), Error> {
    let cfg = resolve(&cli.common)?;
    match cli.command {
        Command::GenData => {
            let dir = cmd_gen_data(&cfg)?;
            println!("wrote {}", dir.display());
        }
        Command::TrainStage1 => {
            let logs = cmd_train_stage1(&cfg)?;
            if let (Some(first), Some(last)) = (logs.first(), logs.last()) {
                println!(
                    "stage 1: {} steps, total loss {:.4} -> {:.4}",
                    logs.len(),
                    first.total,
                    last.total
                );
            }
        }
        Command::TrainStage2 => {
            let (s2dm, base) = cmd_train_stage2(&cfg)?;
            println!("stage 2: s2dm losses {:?}", s2dm.epoch_losses);
            println!("stage 2: baseline losses {:?}", base.epoch_losses);
        }
        Command::Eval => {
            for r in cmd_eval(&cfg)? {
                println!(
                    "{:<26} {:<6} {:<2} {:<9} {:>9.4} (n={})",
                    r.metric, r.langs, r.vector, r.model, r.value, r.samples
                );
            }
        }
        Command::Ablate {
            subsets,
            single_network,
        } => {
            let cells = subsets
                .map(|s| {
                    s.split(';')
                        .map(|part| {
                            Ok((
                                part.trim().to_string(),
                                part.parse::<LossSet>()?,
                                !single_network,
                            ))
                        })
                        .collect::<Result<Vec<_>, Error>>()
                })
                .transpose()?;
            for c in cmd_ablate(&cfg, cells)? {
                println!(
                    "{:<16} retrieval y {:.3} z {:.3}  sts y {:.3} z {:.3}",
                    c.name,
                    c.metrics.retrieval_y,
                    c.metrics.retrieval_z,
                    c.metrics.sts_y,
                    c.metrics.sts_z
                );
            }
        }
        Command::ExportPca { vector, output } => {
            let path = output
                .unwrap_or_else(|| cfg.out_dir.join("eval").join(format!("pca.{vector}.csv")));
            let ratio = cmd_export_pca(&cfg, &vector, &path)?;
            println!(
                "wrote {} ({:.1}% variance in 2 components)",
                path.display(),
                100.0 * ratio
            );
        }
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Numeric { .. } => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
