//! The `sepkit` command line.
//!
//! Every verb takes an optional TOML config (`--config`), any number of
//! `--set section.key=value` overrides and writes only under `--out`, where it
//! also leaves a `run.meta` recording the config hash, seed and version.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::datagen::{build_corpus, Manifest, Split};
use crate::error::{Error, Result};
use crate::metrics::{AssignMode, CorpusReport};
use crate::neural::{Checkpoint, Stage};
use crate::pipeline::{
    evaluate_system, run_experiment, separate_file, train_stage, Dataset, ExperimentReport, RunConfig, System,
};

pub const SEED_ENV: &str = "SEPKIT_SEED";

#[derive(Parser, Debug)]
#[command(name = "sepkit", version, about = "Monaural speech separation toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// TOML run configuration.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Override a config value, e.g. `--set train.lambda=0.1`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Seed; takes precedence over SEPKIT_SEED and the config file.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, short, default_value = "out")]
    pub out: PathBuf,
    /// Worker thread cap (0 = all cores).
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Repeat for more logging.
    #[arg(long, short, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Synthesize the corpus: WAV tree plus manifest.jsonl.
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Train one stage.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = parse_stage)]
        stage: Stage,
        #[arg(long)]
        manifest: PathBuf,
        /// Checkpoint of the preceding stage.
        #[arg(long)]
        init: Option<PathBuf>,
    },
    /// Separate one mixture WAV.
    Separate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
    },
    /// Score a checkpoint (or the oracle masks) on a manifest split.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
        /// Omit to score ideal phase-sensitive masks.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_parser = parse_mode, default_value = "optimal")]
        mode: AssignMode,
        #[arg(long, value_parser = parse_split, default_value = "test")]
        split: Split,
    },
    /// Train and score every system for every seed.
    Experiment {
        #[command(flatten)]
        common: Common,
        /// Corpus to use; synthesized in memory from the config when absent.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Re-render a saved experiment or evaluation report.
    Report {
        #[command(flatten)]
        common: Common,
        /// `report.json` from `experiment` or `records.jsonl` from `evaluate`.
        #[arg(long)]
        input: PathBuf,
    },
}

fn parse_stage(s: &str) -> std::result::Result<Stage, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_mode(s: &str) -> std::result::Result<AssignMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_split(s: &str) -> std::result::Result<Split, String> {
    Split::ALL
        .into_iter()
        .find(|x| x.as_str() == s)
        .ok_or_else(|| format!("unknown split {s:?}"))
}

#[derive(Serialize)]
struct RunMeta<'a> {
    verb: &'a str,
    config_hash: String,
    seed: u64,
    version: &'a str,
    config: &'a RunConfig,
}

impl Common {
    /// File config, then overrides, then SEPKIT_SEED, then `--seed`.
    fn resolve(&self) -> Result<(RunConfig, Option<u64>)> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::desk(),
        };
        for o in &self.overrides {
            cfg.set(o)?;
        }
        let env_seed = match std::env::var(SEED_ENV) {
            Ok(v) => Some(
                v.trim()
                    .parse::<u64>()
                    .map_err(|_| Error::ConfigParse(format!("{SEED_ENV}={v:?} is not an integer")))?,
            ),
            Err(_) => None,
        };
        let seed = self.seed.or(env_seed);
        if let Some(j) = self.jobs {
            cfg.train.jobs = j;
        }
        cfg.validate()?;
        Ok((cfg, seed))
    }
}

fn write_meta(out: &Path, verb: &str, cfg: &RunConfig, seed: u64) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let meta = RunMeta {
        verb,
        config_hash: cfg.hash(),
        seed,
        version: env!("CARGO_PKG_VERSION"),
        config: cfg,
    };
    let p = out.join("run.meta");
    std::fs::write(&p, serde_json::to_string_pretty(&meta).expect("meta serializes")).map_err(|e| Error::io(&p, e))
}

fn write_file(path: &Path, body: &str) -> Result<()> {
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
}

fn load_dataset(manifest: &Path, cfg: &RunConfig) -> Result<Dataset> {
    let m = Manifest::load(manifest)?;
    Dataset::from_manifest(&m, cfg.corpus.sample_rate, &cfg.stft)
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::GenData { common } => {
            init_logging(common.verbose);
            let (mut cfg, seed) = common.resolve()?;
            if let Some(s) = seed {
                cfg.corpus.master_seed = s;
            }
            let m = build_corpus(&cfg.corpus, &common.out)?;
            write_meta(&common.out, "gen-data", &cfg, cfg.corpus.master_seed)?;
            println!("wrote {} utterances to {}", m.records.len(), common.out.display());
        }
        Command::Train {
            common,
            stage,
            manifest,
            init,
        } => {
            init_logging(common.verbose);
            let (mut cfg, seed) = common.resolve()?;
            if let Some(s) = seed {
                cfg.train.seed = s;
            }
            cfg.train.stage = stage;
            let data = load_dataset(&manifest, &cfg)?;
            let init = init.map(Checkpoint::load).transpose()?;
            let out = train_stage(&cfg.train, &cfg.arch, stage, &data, init.as_ref())?;
            std::fs::create_dir_all(&common.out).map_err(|e| Error::io(&common.out, e))?;
            let ckpt = common.out.join(format!("{stage}.ckpt"));
            out.checkpoint.save(&ckpt)?;
            let log: String = out
                .log
                .iter()
                .map(|e| serde_json::to_string(e).expect("log serializes") + "\n")
                .collect();
            write_file(&common.out.join(format!("{stage}.log.jsonl")), &log)?;
            write_meta(&common.out, "train", &cfg, cfg.train.seed)?;
            println!("{}", ckpt.display());
        }
        Command::Separate {
            common,
            checkpoint,
            input,
        } => {
            init_logging(common.verbose);
            let (cfg, seed) = common.resolve()?;
            let ckpt = Checkpoint::load(&checkpoint)?;
            let paths = separate_file(
                &ckpt,
                &input,
                &common.out,
                &cfg.stft,
                cfg.corpus.sample_rate,
                cfg.train.kmeans_max_iter,
            )?;
            write_meta(&common.out, "separate", &cfg, seed.unwrap_or(cfg.train.seed))?;
            for p in paths {
                println!("{}", p.display());
            }
        }
        Command::Evaluate {
            common,
            manifest,
            checkpoint,
            mode,
            split,
        } => {
            init_logging(common.verbose);
            let (cfg, seed) = common.resolve()?;
            let data = load_dataset(&manifest, &cfg)?;
            let ckpt = checkpoint.map(Checkpoint::load).transpose()?;
            let kseed = seed.unwrap_or(cfg.train.seed);
            let (system, name) = match &ckpt {
                None => (System::IpsmOracle, "IPSM oracle".to_string()),
                Some(c) if c.stage == Stage::Dc => (System::DcKmeans(c, kseed, cfg.train.kmeans_max_iter), "DC+K-means".to_string()),
                Some(c) => (System::Model(c), c.stage.to_string()),
            };
            let report = evaluate_system(system, &name, data.split(split), &cfg.stft, &[mode])?;
            std::fs::create_dir_all(&common.out).map_err(|e| Error::io(&common.out, e))?;
            write_file(&common.out.join("report.txt"), &report.to_text())?;
            write_file(&common.out.join("records.jsonl"), &report.to_jsonl())?;
            write_meta(&common.out, "evaluate", &cfg, kseed)?;
            print!("{}", report.to_text());
        }
        Command::Experiment { common, manifest } => {
            init_logging(common.verbose);
            let (mut cfg, seed) = common.resolve()?;
            if let Some(s) = seed {
                cfg.experiment.seeds = vec![s];
            }
            let data = match manifest {
                Some(m) => load_dataset(&m, &cfg)?,
                None => Dataset::generate(&cfg.corpus, &cfg.stft)?,
            };
            let report = run_experiment(&cfg, &data, Some(&common.out.join("checkpoints")))?;
            report.save(&common.out)?;
            write_meta(&common.out, "experiment", &cfg, cfg.experiment.seeds[0])?;
            print!("{}", report.table());
        }
        Command::Report { common, input } => {
            init_logging(common.verbose);
            let text = std::fs::read_to_string(&input).map_err(|e| Error::io(&input, e))?;
            let rendered = if input.extension().is_some_and(|e| e == "jsonl") {
                let records = text
                    .lines()
                    .filter(|l| !l.trim().is_empty())
                    .map(serde_json::from_str)
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|e| Error::ConfigParse(format!("{}: {e}", input.display())))?;
                CorpusReport::from_records(records).to_text()
            } else {
                serde_json::from_str::<ExperimentReport>(&text)
                    .map_err(|e| Error::ConfigParse(format!("{}: {e}", input.display())))?
                    .table()
            };
            std::fs::create_dir_all(&common.out).map_err(|e| Error::io(&common.out, e))?;
            write_file(&common.out.join("report.txt"), &rendered)?;
            print!("{rendered}");
        }
    }
    Ok(())
}

/// Exit status for an error: 2 for configuration and usage problems, 1
/// for everything that went wrong while running.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidConfig(_) | Error::ConfigParse(_) | Error::UnsupportedSourceCount(_) => 2,
        _ => 1,
    }
}

/// Parses `args` (including the program name) and runs the verb.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
