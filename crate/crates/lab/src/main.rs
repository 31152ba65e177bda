use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;
use unlearn_core::data::{synthesize, SplitDataset};
use unlearn_core::info::{info_report, tradeoff_sweep, InfoBoundReport};
use unlearn_core::model::ModelState;
use unlearn_core::readout::{forget_loss, ReadoutReport};
use unlearn_core::scrub::{
    finetune_baseline, inverse_fisher, original, scrub_fisher_baseline, scrub_ntk, Method, ScrubOutcome,
};
use unlearn_lab::checkpoint::{checkpoint_path, load_checkpoint, save_checkpoint};
use unlearn_lab::experiment::{
    ntk_options, pretrain, query_sets, readout_report, run_experiment, summarize, train_with_path, tradeoff_rows,
    CellFailure, TRADEOFF_HEADER,
};
use unlearn_lab::io::{load_dataset, save_dataset, write_csv_with_header};
use unlearn_lab::{ExperimentConfig, LabError, Result};

/// Machine-unlearning lab: synthetic data, NTK scrubbing, baselines and audits.
#[derive(Debug, Parser)]
#[command(name = "unlearn", version)]
struct Cli {
    /// Config file of `key = value` lines (see the `config` module docs).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set finetune.epochs=50`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Run seed (dataset seed for `synth`; sole run seed for `run`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides `output_dir`.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    /// Dataset file from `synth`; regenerated from the config when absent.
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the dataset and its forget/retain partition.
    Synth {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Pretrain and train the original model on D.
    Train {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Apply one method to a trained model.
    Scrub {
        #[arg(long)]
        method: String,
        /// Checkpoint of the original model; trained on the fly when absent.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        noise_scale: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Readouts and information bounds of a checkpoint, as JSON.
    Audit {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        model: Option<PathBuf>,
        /// Checkpoint of the retrained model.
        #[arg(long)]
        reference: Option<PathBuf>,
    },
    /// Noise-scale trade-off of a checkpoint against the retrained reference.
    Sweep {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Full multi-seed benchmark.
    Run,
    /// Re-aggregate `readouts.csv` of a finished run into a summary table.
    Report {
        #[arg(long)]
        dir: Option<PathBuf>,
    },
}

struct Context {
    cfg: ExperimentConfig,
    seed: u64,
    data_path: Option<PathBuf>,
}

impl Context {
    fn data(&self) -> Result<SplitDataset> {
        match &self.data_path {
            Some(p) => load_dataset(p),
            None => Ok(synthesize(&self.cfg.dataset_spec())?),
        }
    }

    fn model(&self, path: Option<&Path>, data: &SplitDataset) -> Result<ModelState> {
        match path {
            Some(p) => {
                let (o, _) = load_checkpoint(p)?;
                Ok(ModelState::new(o.arch, o.realized_weights, o.anchor, o.seed)?)
            }
            None => {
                let w0 = pretrain(&self.cfg, self.seed)?;
                Ok(train_with_path(&self.cfg, &w0, &data.train, self.seed)?.0)
            }
        }
    }

    fn retrained(&self, path: Option<&Path>, anchor: &[f64], data: &SplitDataset) -> Result<ScrubOutcome> {
        match path {
            Some(p) => Ok(load_checkpoint(p)?.0),
            None => {
                let (m, _) = train_with_path(&self.cfg, anchor, &data.retain(), self.seed)?;
                Ok(ScrubOutcome::deterministic(Method::Retrain, &m, m.w.clone())?)
            }
        }
    }
}

/// Retrained weights with inverse-Fisher noise at `scale`.
fn noisy_reference(retrained: &ScrubOutcome, data: &SplitDataset, scale: f64) -> Result<ScrubOutcome> {
    let cov = inverse_fisher(&retrained.arch, &retrained.shifted_weights, &data.retain().inputs)?;
    Ok(ScrubOutcome::new(
        Method::Retrain,
        retrained.arch.clone(),
        retrained.anchor.clone(),
        retrained.shifted_weights.clone(),
        cov,
        scale,
        retrained.seed,
    )?)
}

#[derive(Serialize)]
struct AuditReport {
    readouts: ReadoutReport,
    bounds: Option<InfoBoundReport>,
}

fn execute(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p, &cli.overrides)?,
        None => ExperimentConfig::parse("", &cli.overrides)?,
    };
    if let Some(dir) = cli.output_dir {
        cfg.output_dir = dir;
    }
    let seed = cli.seed.unwrap_or(cfg.seeds[0]);
    let ctx = Context { seed, data_path: cli.data, cfg: cfg.clone() };
    let out_dir = cfg.output_dir.clone();
    let hash = cfg.hash();

    match cli.command {
        Command::Synth { out } => {
            let mut cfg = cfg;
            if let Some(s) = cli.seed {
                cfg.dataset.seed = s;
            }
            let data = synthesize(&cfg.dataset_spec())?;
            let path = out.unwrap_or_else(|| out_dir.join("dataset.json"));
            save_dataset(&path, &data)?;
            println!("{}", path.display());
        }
        Command::Train { out } => {
            let data = ctx.data()?;
            let model = ctx.model(None, &data)?;
            let path = out.unwrap_or_else(|| checkpoint_path(&out_dir.join("checkpoints"), Method::Original, seed));
            save_checkpoint(&path, &original(&model)?, &hash)?;
            println!("{}", path.display());
        }
        Command::Scrub { method, model, noise_scale, out } => {
            let method = Method::parse(&method).ok_or_else(|| {
                LabError::Usage(format!("unknown method `{method}`; expected one of original, finetune, fisher, ntk, retrain"))
            })?;
            let data = ctx.data()?;
            let model = ctx.model(model.as_deref(), &data)?;
            let scale = noise_scale.unwrap_or(cfg.scrub.noise_scale);
            let outcome = match method {
                Method::Original => original(&model)?,
                Method::Finetune => finetune_baseline(&model, &data, &cfg.finetune.to_train_config(), seed)?,
                Method::Fisher => scrub_fisher_baseline(&model, &data, scale, seed)?,
                Method::Ntk => {
                    let opts = ntk_options(&cfg, data.retain_indices.len());
                    scrub_ntk(&model, &data, &unlearn_core::scrub::NtkScrubOptions { noise_scale: scale, ..opts }, seed)?
                }
                Method::Retrain => ctx.retrained(None, &model.w0, &data)?,
            };
            let path = out.unwrap_or_else(|| checkpoint_path(&out_dir.join("checkpoints"), method, seed));
            save_checkpoint(&path, &outcome, &hash)?;
            println!("{}", path.display());
        }
        Command::Audit { checkpoint, model, reference } => {
            let data = ctx.data()?;
            let (outcome, _) = load_checkpoint(&checkpoint)?;
            let original = ctx.model(model.as_deref(), &data)?;
            let retrained = ctx.retrained(reference.as_deref(), &original.w0, &data)?;
            let threshold = forget_loss(&original.arch, &original.w, &data.forget())?;
            let readouts = readout_report(&cfg, &data, &outcome, &retrained, threshold, seed)?;
            let bounds = if outcome.noise_scale > 0.0 && !outcome.noise_cov.is_zero() {
                let reference = noisy_reference(&retrained, &data, outcome.noise_scale)?;
                let (queries, sets) = query_sets(&cfg, &data);
                let set_refs: Vec<_> = sets.iter().collect();
                Some(info_report(&[(&outcome, &reference)], &queries, &set_refs)?)
            } else {
                None
            };
            let text = serde_json::to_string_pretty(&AuditReport { readouts, bounds }).expect("report serializes");
            println!("{text}");
        }
        Command::Sweep { checkpoint, reference, out } => {
            let data = ctx.data()?;
            let (outcome, _) = load_checkpoint(&checkpoint)?;
            let retrained = ctx.retrained(reference.as_deref(), &outcome.anchor, &data)?;
            let reference = noisy_reference(&retrained, &data, 0.0)?;
            let (queries, _) = query_sets(&cfg, &data);
            let rows = tradeoff_sweep(&[(&outcome, &reference)], &cfg.scrub.noise_grid, &queries, &data.test)?;
            let path = out.unwrap_or_else(|| out_dir.join(format!("sweep_{}_seed{}.csv", outcome.method.name(), outcome.seed)));
            write_csv_with_header(&path, &TRADEOFF_HEADER, &tradeoff_rows(&rows))?;
            println!("{}", path.display());
        }
        Command::Run => {
            let mut cfg = cfg;
            if let Some(s) = cli.seed {
                cfg.seeds = vec![s];
            }
            let (manifest, _) = run_experiment(&cfg)?;
            for f in &manifest.failures {
                eprintln!("warning: {} seed {} failed: {}", f.method.name(), f.seed, f.error);
            }
            println!("{}", cfg.output_dir.join("manifest.json").display());
        }
        Command::Report { dir } => {
            let dir = dir.unwrap_or(out_dir);
            let path = dir.join("readouts.csv");
            let (reports, failures) = read_readouts(&path)?;
            let band = unlearn_core::readout::GreenBand::from_reports(
                &reports.iter().filter(|r| r.method == Method::Retrain).cloned().collect::<Vec<_>>(),
            )
            .ok();
            let mut w = csv::Writer::from_writer(std::io::stdout());
            for row in summarize(&reports, &failures, band.as_ref()) {
                w.serialize(row)?;
            }
            w.flush().map_err(|e| LabError::io("<stdout>", e))?;
        }
    }
    Ok(())
}

fn read_readouts(path: &Path) -> Result<(Vec<ReadoutReport>, Vec<CellFailure>)> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| LabError::format(path, e))?;
    let mut reports = Vec::new();
    let mut failures = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let bad = |what: &str| LabError::format(path, format!("bad {what} in row {:?}", rec.position().map(|p| p.line())));
        let method = Method::parse(&rec[0]).ok_or_else(|| bad("method"))?;
        let seed: u64 = rec[1].parse().map_err(|_| bad("seed"))?;
        if &rec[10] != "ok" {
            failures.push(CellFailure { method, seed, error: rec[10].to_string() });
            continue;
        }
        let num = |i: usize| rec[i].parse::<f64>().map_err(|_| bad(unlearn_lab::experiment::READOUT_HEADER[i]));
        reports.push(ReadoutReport {
            method,
            seed,
            err_df: num(3)?,
            err_dr: num(4)?,
            err_test: num(5)?,
            relearn_epochs: rec[6].parse().map_err(|_| bad("relearn_epochs"))?,
            attack_accuracy: num(7)?,
            activation_l1_df: num(8)?,
            activation_l1_dr: num(9)?,
        });
    }
    Ok((reports, failures))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
