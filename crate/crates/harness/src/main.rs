use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ovo_core::autodiff::Tensor;
use ovo_core::cohort::{self, default_modalities, CohortSpec};
use ovo_core::fusion::Task;
use ovo_core::{Error, Result};
use ovo_harness::attribution::attribute;
use ovo_harness::checkpoint::Checkpoint;
use ovo_harness::config::{Regime, RunConfig};
use ovo_harness::data::RunData;
use ovo_harness::emit::{dump_embeddings, emit, report};
use ovo_harness::sweep::{enumerate_subsets, subset_key, sweep, SweepPlan};
use ovo_harness::train::{finetune, pretrain};

#[derive(Parser)]
#[command(name = "ovo", version, about = "Contrastive multimodal pre-training experiments on synthetic cohorts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic cohort file.
    Generate {
        #[arg(long, default_value_t = 400)]
        patients: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Signal fractions of the five default modalities.
        #[arg(long, value_delimiter = ',', default_value = "0.9,0.7,0.5,0.3,0.1")]
        signal_fractions: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Contrastive pre-training; writes a checkpoint.
    Pretrain {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Train a classifier under the configured regime.
    Finetune {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Grid over modality subsets, regimes and seeds.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated regimes; defaults to the config's.
        #[arg(long, value_delimiter = ',')]
        regimes: Vec<String>,
        /// Seed range `a..b` (end exclusive) or `a..=b`.
        #[arg(long)]
        seeds: Option<String>,
        /// Sweep all 26 subsets of the config's five modalities.
        #[arg(long)]
        all_subsets: bool,
        /// Write held-out embeddings of every pre-trained model.
        #[arg(long)]
        dump_embeddings: bool,
    },
    /// Integrated Gradients attribution of a fine-tuned checkpoint.
    Attribute {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Re-aggregate a row CSV.
    Report {
        #[arg(long)]
        rows: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Overrides for the fields of a run file.
#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    regime: Option<String>,
    #[arg(long)]
    task: Option<String>,
    #[arg(long, value_delimiter = ',')]
    modalities: Option<Vec<String>>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

impl RunArgs {
    fn load(&self) -> Result<RunConfig> {
        let mut c = RunConfig::load(&self.config)?;
        if let Some(s) = self.seed {
            c.seed = s;
        }
        if let Some(r) = &self.regime {
            c.regime = Regime::parse(r)?;
        }
        if let Some(t) = &self.task {
            c.task = match t.as_str() {
                "binary" => Task::Binary,
                "multilabel" => Task::Multilabel,
                other => return Err(Error::Config(format!("unknown task `{other}`"))),
            };
        }
        if let Some(m) = &self.modalities {
            c = c.with_subset(m);
        }
        if let Some(v) = self.learning_rate {
            c.learning_rate = v;
        }
        if let Some(v) = self.batch_size {
            c.batch_size = v;
        }
        if let Some(v) = self.max_epochs {
            c.max_epochs = v;
        }
        if let Some(v) = self.patience {
            c.patience = v;
        }
        if let Some(p) = &self.checkpoint {
            c.checkpoint = Some(p.clone());
        }
        if let Some(p) = &self.output_dir {
            c.output_dir = p.clone();
        }
        // relative cohort paths resolve against the run file
        if let (ovo_harness::CohortSource::Path(p), Some(dir)) = (&mut c.cohort, self.config.parent()) {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        }
        c.validate()?;
        Ok(c)
    }
}

fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    let bad = || Error::Config(format!("seed range `{s}` is not `a..b` or `a..=b`"));
    let num = |t: &str| t.trim().parse::<u64>().map_err(|_| bad());
    if let Some((a, b)) = s.split_once("..=") {
        return Ok((num(a)?..=num(b)?).collect());
    }
    if let Some((a, b)) = s.split_once("..") {
        let v: Vec<u64> = (num(a)?..num(b)?).collect();
        return if v.is_empty() { Err(bad()) } else { Ok(v) };
    }
    Ok(vec![num(s)?])
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let text = serde_json::to_string_pretty(value).expect("serializable");
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn run_name(cfg: &RunConfig) -> String {
    format!("{}_{}_seed{}", cfg.regime.as_str(), subset_key(&cfg.modalities), cfg.seed)
}

fn load_checkpoint(cfg: &RunConfig) -> Result<Option<Checkpoint>> {
    cfg.checkpoint.as_deref().map(Checkpoint::load).transpose()
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate {
            patients,
            seed,
            signal_fractions,
            out,
        } => {
            let sf: [f64; 5] = signal_fractions
                .try_into()
                .map_err(|v: Vec<f64>| Error::Config(format!("need 5 signal fractions, got {}", v.len())))?;
            let c = cohort::generate(&CohortSpec::new(patients, default_modalities(sf), seed))?;
            cohort::save(&c, &out)?;
            println!("wrote {} patients to {}", c.len(), out.display());
        }
        Command::Pretrain { run } => {
            let cfg = run.load()?.with_regime(Regime::ContrastivePretrain);
            let data = RunData::load(&cfg)?;
            let out = pretrain(&cfg, &data)?;
            let path = cfg.output_dir.join(format!("{}.ckpt.json", run_name(&cfg)));
            out.checkpoint.save(&path)?;
            for (e, l) in out.epoch_losses.iter().enumerate() {
                println!("epoch {e} loss {l:.6}");
            }
            println!(
                "pool loss {:.6} -> {:.6}, held-out top-5 alignment {:.4}",
                out.initial_pool_loss, out.final_pool_loss, out.alignment_top5
            );
            if let Some(l) = &out.checkpoint.lambda {
                println!("lambda {l:?}");
            }
            println!("checkpoint {}", path.display());
        }
        Command::Finetune { run } => {
            let cfg = run.load()?;
            let data = RunData::load(&cfg)?;
            let ckpt = load_checkpoint(&cfg)?;
            let out = finetune(&cfg, &data, ckpt.as_ref())?;
            let stem = cfg.output_dir.join(run_name(&cfg));
            out.checkpoint.save(&stem.with_extension("ckpt.json"))?;
            write_json(&stem.with_extension("metrics.json"), &out.metrics)?;
            println!(
                "best epoch {} of {}; test auroc {:.4} auprc {:.4}",
                out.best_epoch, out.epochs_run, out.metrics.auroc, out.metrics.auprc
            );
        }
        Command::Sweep {
            run,
            regimes,
            seeds,
            all_subsets,
            dump_embeddings: dump,
        } => {
            let cfg = run.load()?;
            let cohort = cfg.cohort.load()?;
            let plan = SweepPlan {
                subsets: if all_subsets { enumerate_subsets(&cfg.modalities)? } else { vec![cfg.modalities.clone()] },
                regimes: if regimes.is_empty() {
                    vec![cfg.regime]
                } else {
                    regimes.iter().map(|r| Regime::parse(r)).collect::<Result<_>>()?
                },
                seeds: match &seeds {
                    Some(s) => parse_seeds(s)?,
                    None => vec![cfg.seed],
                },
            };
            let dir = cfg.output_dir.clone();
            let mut hook = |c: &RunConfig, d: &RunData, o: &ovo_harness::train::PretrainOutcome| -> Result<()> {
                let idx = d.held_out();
                let emb = o.model.embeddings(&d.inputs(&idx)?)?;
                let named: Vec<(String, Tensor)> = d.modalities.iter().cloned().zip(emb).collect();
                let path = dir.join("embeddings").join(format!("{}.csv", run_name(c)));
                dump_embeddings(&path, &d.patient_ids(&idx), &named)
            };
            let result = sweep(&cfg, &cohort, &plan, if dump { Some(&mut hook) } else { None })?;
            let files = emit(&result, &cfg, &cfg.output_dir)?;
            let failed = result.rows.iter().filter(|r| r.status != ovo_harness::sweep::RunStatus::Ok).count();
            println!(
                "{} runs ({failed} failed), {} aggregates -> {}",
                result.rows.len(),
                result.aggregates.len(),
                files.aggregate.display()
            );
        }
        Command::Attribute { run } => {
            let cfg = run.load()?;
            let ckpt = load_checkpoint(&cfg)?
                .ok_or_else(|| Error::Config("attribute needs --checkpoint of a fine-tuned model".into()))?;
            let data = RunData::new(&ckpt.config, cfg.cohort.load()?)?;
            let model = ckpt.restore(&data)?;
            let report = attribute(&model, &data, &data.split.finetune.test, cfg.ig_steps)?;
            let path = cfg.output_dir.join(format!("{}.attribution.json", run_name(&ckpt.config)));
            write_json(&path, &report)?;
            for (m, s) in report.modalities.iter().zip(&report.scores) {
                println!("{m} {s:.4}");
            }
        }
        Command::Report { rows, out } => {
            let agg = report(&rows, &out)?;
            println!("{} aggregates -> {}", agg.len(), out.display());
        }
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Divergence { .. } => 3,
        Error::Io { .. } => 4,
        _ => 2,
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
