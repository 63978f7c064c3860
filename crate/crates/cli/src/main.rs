use std::path::PathBuf;
use std::process::ExitCode;

use augsynth::curriculum::real_train_counts;
use augsynth::datamodel::load_manifest;
use augsynth::generator::GeneratorInterface;
use augsynth::harness::{
    cfg_sweep_table, dropout_table, emit_report, fewshot_table, fid_score, longtail_table, ExperimentConfig,
    ScalarKind, Workspace, RESULT_CFG_SWEEP, RESULT_DROPOUT_SWEEP, RESULT_FEWSHOT, RESULT_FID, RESULT_LONGTAIL,
};
use augsynth::{Error, Result, Scalar};
use clap::{Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "augsynth", version, about = "Augmentation-conditioned synthetic data experiments")]
struct Cli {
    /// Experiment config file (TOML).
    #[arg(long, global = true, conflicts_with = "preset")]
    config: Option<PathBuf>,

    /// Built-in preset to use when no config file is given.
    #[arg(long, global = true, default_value = "desk-10class")]
    preset: String,

    /// Override the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Override the experiment seeds, e.g. `--seeds 0,1,2`.
    #[arg(long, global = true, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,

    /// More log output; repeat for debug.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Materialise the dataset and one long-tail subset per seed.
    BuildLt,
    /// Train the image encoder and the diffusion model.
    TrainGenerator,
    /// Run the generation campaigns of the long-tail experiment.
    Generate,
    /// Train the long-tail classifiers.
    Train,
    /// Few-shot last-layer fine-tuning.
    Finetune,
    /// Evaluate the long-tail classifiers by shot category.
    Eval,
    /// FID of each synthetic set, or between two manifests.
    Fid {
        #[arg(long, requires = "b")]
        a: Option<PathBuf>,
        #[arg(long, requires = "a")]
        b: Option<PathBuf>,
    },
    /// Long-tail pipeline per CFG scale.
    SweepCfg {
        #[arg(long, value_delimiter = ',')]
        scales: Option<Vec<f64>>,
    },
    /// Generation diversity and FID per dropout probability.
    SweepDropout {
        #[arg(long, value_delimiter = ',')]
        ps: Option<Vec<f64>>,
    },
    /// Write tables and plots from stored results.
    Report {
        /// Defaults to `<out>/report`.
        #[arg(long)]
        dir: Option<PathBuf>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::BuildLt => "build-lt",
            Command::TrainGenerator => "train-generator",
            Command::Generate => "generate",
            Command::Train => "train",
            Command::Finetune => "finetune",
            Command::Eval => "eval",
            Command::Fid { .. } => "fid",
            Command::SweepCfg { .. } => "sweep-cfg",
            Command::SweepDropout { .. } => "sweep-dropout",
            Command::Report { .. } => "report",
        }
    }
}

fn resolve_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::preset(&cli.preset)?,
    };
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    if let Some(seeds) = &cli.seeds {
        cfg.seeds = seeds.clone();
    }
    match &cli.command {
        Command::SweepCfg { scales: Some(s) } => cfg.sweeps.cfg_scales = s.clone(),
        Command::SweepDropout { ps: Some(p) } => cfg.sweeps.dropout_ps = p.clone(),
        _ => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run<S: Scalar>(cfg: ExperimentConfig, command: &Command) -> Result<()> {
    let ws = Workspace::<S>::from_config(cfg)?;
    let snapshot = ws.write_resolved(command.name())?;
    log::info!("resolved config written to {}", snapshot.display());
    let cfg = ws.config().clone();
    match command {
        Command::BuildLt => {
            for &seed in &cfg.seeds {
                let lt = ws.longtail(seed)?;
                println!("seed {seed}: train counts {:?}", real_train_counts(&lt));
            }
        }
        Command::TrainGenerator => {
            let enc = ws.encoder()?;
            println!("encoder {}", augsynth::augcond::ImageEncoder::encoder_id(enc));
            let g = ws.generator()?;
            println!("generator {}", g.generator_id());
            if let Some(h) = ws.generator_history()? {
                for e in h {
                    println!("epoch {:3} loss {:.5} null {:.3}", e.epoch, e.loss, e.null_fraction);
                }
            }
        }
        Command::Generate => {
            for &seed in &cfg.seeds {
                for &m in &cfg.longtail.methods {
                    let (ds, _, stats) = ws.longtail_synthetic(m, cfg.longtail.cfg_scale, seed)?;
                    println!(
                        "seed {seed} {m}: {} images, {} newly generated, {} retries",
                        ds.len(),
                        stats.generated,
                        stats.retries
                    );
                }
            }
        }
        Command::Train => {
            let res = ws.run_longtail()?;
            println!("{} classifiers trained", res.rows.len());
        }
        Command::Eval => {
            let res = ws.run_longtail()?;
            ws.save_result(RESULT_LONGTAIL, &res)?;
            print!("{}", longtail_table(&res));
        }
        Command::Fid { a: Some(a), b: Some(b) } => {
            let da = load_manifest::<S>(a)?;
            let db = load_manifest::<S>(b)?;
            println!("{:.6}", fid_score(&ws.features(&da)?, &ws.features(&db)?)?);
        }
        Command::Fid { .. } => {
            let rows = ws.run_fid()?;
            ws.save_result(RESULT_FID, &rows)?;
            for r in rows {
                println!("seed {} {}: {:.4}", r.seed, r.method, r.fid);
            }
        }
        Command::Finetune => {
            let res = ws.run_fewshot()?;
            ws.save_result(RESULT_FEWSHOT, &res)?;
            print!("{}", fewshot_table(&res));
        }
        Command::SweepCfg { .. } => {
            let res = ws.run_cfg_sweep(&cfg.sweeps.cfg_scales)?;
            ws.save_result(RESULT_CFG_SWEEP, &res)?;
            print!("{}", cfg_sweep_table(&res));
        }
        Command::SweepDropout { .. } => {
            let res = ws.run_dropout_sweep(&cfg.sweeps.dropout_ps)?;
            ws.save_result(RESULT_DROPOUT_SWEEP, &res)?;
            print!("{}", dropout_table(&res));
        }
        Command::Report { dir } => {
            let dir = dir.clone().unwrap_or_else(|| ws.path("report"));
            for p in emit_report(&ws.report_input()?, &dir)? {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = resolve_config(&cli).and_then(|cfg| match cfg.scalar {
        ScalarKind::F32 => run::<f32>(cfg, &cli.command),
        ScalarKind::F64 => run::<f64>(cfg, &cli.command),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_status(&e))
        }
    }
}

fn exit_status(e: &Error) -> u8 {
    e.class().exit_code() as u8
}
