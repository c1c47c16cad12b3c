use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use spire_core::eval::{EvalOptions, Metric};
use spire_core::experiment::{
    cmd_ablate, cmd_eval, cmd_generate, cmd_report, cmd_train, dataset_dir, exit_code, registry, resolve_out_root, AblationSpec,
    ExperimentConfig, OUT_ENV,
};
use spire_core::synthgen::Preset;
use spire_core::{Result, SpireError};

#[derive(Parser, Debug)]
#[command(name = "spire", version, about = "Shared/private latent benchmark: generate, train, evaluate, ablate, report")]
struct Cli {
    /// Output root (falls back to $SPIRE_OUT, then the config's out_dir).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for independent seeds or variants.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic preset's dataset container.
    Generate {
        #[arg(long)]
        preset: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Exact container directory (default: <out>/data/<preset>_seed<seed>).
        #[arg(long)]
        dir: Option<PathBuf>,
    },
    /// Train one run directory per seed.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long, conflicts_with = "seeds")]
        seed: Option<u64>,
        /// Registry variant to train instead of the full model.
        #[arg(long, default_value = "SPIRE_synth")]
        variant: String,
        /// Continue interrupted runs from their last checkpoint.
        #[arg(long)]
        resume: bool,
    },
    /// Evaluate finished runs.
    Eval {
        #[arg(required = false)]
        runs: Vec<PathBuf>,
        /// Dataset container overriding each run's own data.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "cca,fve,recon")]
        metrics: Vec<String>,
        /// Report directory (default: <out>/eval).
        #[arg(long)]
        report_dir: Option<PathBuf>,
    },
    /// Train and evaluate ablation variants against the full model.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        /// Variant names; `all` runs the whole registry.
        #[arg(long, value_delimiter = ',', default_value = "abl_no_w_align")]
        variants: Vec<String>,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Summarise eval directories per dataset regime.
    Report {
        evals: Vec<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "D0,D1,D2")]
        regimes: Vec<String>,
    },
    /// List registry variants.
    Variants,
}

fn metrics(names: &[String]) -> Result<Vec<Metric>> {
    names.iter().map(|n| n.parse()).collect()
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { preset, seed, dir } => {
            let preset: Preset = preset.parse()?;
            let dir = dir.unwrap_or_else(|| dataset_dir(&resolve_out_root(cli.out.as_deref(), None), preset, seed));
            cmd_generate(preset, seed, &dir)?;
            println!("{}", dir.display());
        }
        Command::Train {
            config,
            seeds,
            seed,
            variant,
            resume,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let seeds = seeds.or(seed.map(|s| vec![s])).unwrap_or_else(|| cfg.seeds.clone());
            let root = resolve_out_root(cli.out.as_deref(), Some(&cfg));
            let spec = AblationSpec::parse(&variant)?;
            let mut first_err = None;
            for (s, res) in cmd_train(&cfg, &spec, &seeds, &root, resume, cli.threads)? {
                match res {
                    Ok(dir) => println!("{}", dir.display()),
                    Err(e) => {
                        eprintln!("seed {s}: {e}");
                        first_err.get_or_insert(e);
                    }
                }
            }
            if let Some(e) = first_err {
                return Err(e);
            }
        }
        Command::Eval {
            runs,
            dataset,
            metrics: names,
            report_dir,
        } => {
            let opts = EvalOptions {
                metrics: metrics(&names)?,
                ..EvalOptions::default()
            };
            let out = report_dir.unwrap_or_else(|| resolve_out_root(cli.out.as_deref(), None).join("eval"));
            let report = cmd_eval(&runs, dataset.as_deref(), &opts, &out)?;
            print!("{}", report.to_text());
            println!("written to {}", out.display());
        }
        Command::Ablate { config, variants, seeds } => {
            let cfg = ExperimentConfig::load(&config)?;
            let seeds = seeds.unwrap_or_else(|| cfg.seeds.clone());
            let specs = if variants.iter().any(|v| v == "all") {
                registry()
            } else {
                variants.iter().map(|v| AblationSpec::parse(v)).collect::<Result<Vec<_>>>()?
            };
            let root = resolve_out_root(cli.out.as_deref(), Some(&cfg));
            let table = cmd_ablate(&cfg, &specs, &seeds, &root, cli.threads, &cfg.eval)?;
            print!("{}", table.to_text());
        }
        Command::Report { evals, regimes } => {
            if evals.is_empty() {
                return Err(SpireError::Argument("no eval directories given".into()));
            }
            let (_, text) = cmd_report(&evals, &regimes)?;
            print!("{text}");
            let root = resolve_out_root(cli.out.as_deref(), None);
            write_text(&root.join("report.txt"), &text)?;
        }
        Command::Variants => {
            for v in registry() {
                println!("{}", v.name);
            }
        }
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    spire_core::container::ensure_dir(path.parent().unwrap_or(Path::new(".")))?;
    std::fs::write(path, text).map_err(|e| SpireError::io(path, e))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let _ = OUT_ENV;
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
