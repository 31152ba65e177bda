//! Multi-seed benchmark: pretrain, train on `D`, apply every method, audit,
//! and write the result tables.
//!
//! Output files (all under `output_dir`, column orders fixed):
//!
//! * `summary.csv`: `method, seeds, <readout>_mean, <readout>_std` for
//!   `err_df, err_dr, err_test, relearn_epochs, attack_accuracy,
//!   activation_l1_df, activation_l1_dr`, then `<readout>_band` (`inside`,
//!   `streisand` or `leaking` against the retrain band) for the first five,
//!   then `failures`.
//! * `readouts.csv`: `method, seed, noise_scale, err_df, err_dr, err_test,
//!   relearn_epochs, attack_accuracy, activation_l1_df, activation_l1_dr,
//!   status`. Failed cells have empty readouts and the error in `status`.
//! * `info.csv`: `method, noise_scale, seeds, white_box_nats,
//!   white_box_mean_term, white_box_cov_term, black_box_nats,
//!   black_box_mean_term, black_box_cov_term, queries`.
//! * `per_query.csv`: `method, query_set, query_index, nats` with
//!   `query_set` one of `df, dr, test`.
//! * `tradeoff_ntk.csv`, `tradeoff_fisher.csv`: `lambda_noise,
//!   white_box_nats, black_box_nats, mean_term, cov_term, test_error,
//!   white_box_std, black_box_std, test_error_std`; the split terms are
//!   those of the white-box bound.
//! * `interpolation.csv`: `seed, alpha, l1_df, l1_dr`.
//! * `pca_paths.csv`: `path_id, step, pc1, pc2`; `pca_meta.json` holds the
//!   explained variance.
//! * `green_band.json`, `checkpoints/<method>_seed<s>.json`,
//!   `manifest.json`, and `timings.json` (the only non-deterministic file).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use unlearn_core::data::{pretrain_task, synthesize, SplitDataset};
use unlearn_core::info::{info_report, mean_std, tradeoff_sweep, InfoBoundReport, TradeoffRow};
use unlearn_core::model::{train_from, ModelState, TrainConfig};
use unlearn_core::numerics::DenseMatrix;
use unlearn_core::readout::{
    activation_distance, error_readouts, forget_loss, interpolation_curve, membership_attack, relearn_time,
    BandPosition, GreenBand, InterpolationRow, Readout, ReadoutReport,
};
use unlearn_core::scrub::{
    finetune_baseline, inverse_fisher, original, scrub_fisher_baseline, scrub_ntk_report, Method, NtkScrubOptions,
    ScrubOutcome,
};

use crate::checkpoint::{checkpoint_path, save_checkpoint};
use crate::config::ExperimentConfig;
use crate::error::{LabError, Result};
use crate::io::{write_csv, write_csv_with_header, write_json, write_text};
use crate::pca::{project_paths, PcaProjection};

/// Everything produced for one run seed before auditing.
#[derive(Debug, Clone)]
pub struct SeedModels {
    pub seed: u64,
    pub original: ModelState,
    /// Weights after every epoch of training on `D`, starting at `w0`.
    pub path_d: Vec<Vec<f64>>,
    /// Same for training on `D_r`.
    pub path_dr: Vec<Vec<f64>>,
    pub outcomes: BTreeMap<Method, std::result::Result<ScrubOutcome, String>>,
    /// The retrained weights with inverse-Fisher noise: the reference
    /// distribution of the information bounds.
    pub reference: Option<ScrubOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub method: Method,
    pub seed: u64,
    pub error: String,
}

/// In-memory results of [`execute`].
#[derive(Debug, Clone)]
pub struct RunResults {
    pub data: SplitDataset,
    pub ridge: f64,
    /// Noise scale of the Fisher baseline, chosen to match the NTK scrub's
    /// forget error.
    pub fisher_noise_scale: f64,
    pub seeds: Vec<SeedModels>,
    pub readouts: Vec<(Method, u64, std::result::Result<ReadoutReport, String>)>,
    pub green_band: Option<GreenBand>,
    pub info: BTreeMap<Method, InfoBoundReport>,
    pub tradeoff: BTreeMap<Method, Vec<TradeoffRow>>,
    pub interpolation: Vec<(u64, Vec<InterpolationRow>)>,
    pub pca: Option<PcaProjection>,
    pub failures: Vec<CellFailure>,
    pub timings: BTreeMap<String, f64>,
}

impl RunResults {
    pub fn outcome(&self, method: Method, seed: u64) -> Option<&ScrubOutcome> {
        self.seeds.iter().find(|s| s.seed == seed)?.outcomes.get(&method)?.as_ref().ok()
    }

    /// Successful readouts of one method in seed order.
    pub fn reports(&self, method: Method) -> Vec<&ReadoutReport> {
        self.readouts.iter().filter(|(m, _, _)| *m == method).filter_map(|(_, _, r)| r.as_ref().ok()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointEntry {
    pub method: Method,
    pub seed: u64,
    pub path: PathBuf,
}

/// Index of a finished run. Paths are relative to the output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub ridge: f64,
    pub fisher_noise_scale: f64,
    pub checkpoints: Vec<CheckpointEntry>,
    pub reports: BTreeMap<String, PathBuf>,
    pub failures: Vec<CellFailure>,
    /// Wall-clock seconds per stage live in this separate file so the
    /// manifest itself stays reproducible.
    pub timings: PathBuf,
}

/// Evenly spaced row indices, `count` of them (fewer if `len` is smaller).
pub fn spread_indices(len: usize, count: usize) -> Vec<usize> {
    let count = count.min(len);
    (0..count).map(|i| i * len / count).collect()
}

pub fn ntk_options(cfg: &ExperimentConfig, retain_len: usize) -> NtkScrubOptions {
    NtkScrubOptions {
        ridge: cfg.scrub.ridge.unwrap_or(retain_len as f64 * cfg.finetune.weight_decay),
        noise_scale: cfg.scrub.noise_scale,
        linearize_at: cfg.scrub.linearize_at,
        trapezium: cfg.scrub.trapezium,
        curvature: cfg.scrub.curvature,
        loss: cfg.finetune.loss,
    }
}

/// Pretrained anchor `w0` for a run seed.
pub fn pretrain(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<f64>> {
    let arch = cfg.arch_spec();
    let task = pretrain_task(&cfg.dataset_spec(), cfg.dataset.pretrain_seed)?;
    let init = arch.init_weights(seed);
    let zeros = vec![0.0; init.len()];
    let m = train_from(&arch, &init, &zeros, &task, &cfg.pretrain.to_train_config(), seed, None)?;
    Ok(m.w)
}

/// Trains from `w0` with the fine-tuning protocol and records every epoch.
pub fn train_with_path(
    cfg: &ExperimentConfig,
    w0: &[f64],
    set: &unlearn_core::model::LabeledSet,
    seed: u64,
) -> Result<(ModelState, Vec<Vec<f64>>)> {
    let mut path = vec![w0.to_vec()];
    let mut record = |_: usize, w: &[f64]| {
        path.push(w.to_vec());
        true
    };
    let m = train_from(&cfg.arch_spec(), w0, w0, set, &cfg.finetune.to_train_config(), seed, Some(&mut record))?;
    Ok((m, path))
}

/// Trains the original model and applies every method at its default
/// noise scale. The Fisher baseline is returned with scale 0 and re-noised
/// once its scale is chosen.
pub fn train_seed(cfg: &ExperimentConfig, data: &SplitDataset, seed: u64) -> Result<SeedModels> {
    let w0 = pretrain(cfg, seed)?;
    let (model, path_d) = train_with_path(cfg, &w0, &data.train, seed)?;
    let retain = data.retain();
    let ft = TrainConfig { epochs: cfg.scrub.finetune_epochs, stop_at_zero_error: false, ..cfg.finetune.to_train_config() };
    let msg = |e: unlearn_core::Error| e.to_string();

    let mut outcomes = BTreeMap::new();
    outcomes.insert(Method::Original, original(&model).map_err(msg));
    outcomes.insert(Method::Finetune, finetune_baseline(&model, data, &ft, seed).map_err(msg));
    outcomes.insert(Method::Fisher, scrub_fisher_baseline(&model, data, 0.0, seed).map_err(msg));
    let opts = ntk_options(cfg, retain.len());
    outcomes.insert(Method::Ntk, scrub_ntk_report(&model, data, &opts, seed).map(|r| r.outcome).map_err(msg));

    let (path_dr, reference) = match train_with_path(cfg, &w0, &retain, seed) {
        Ok((m, path)) => {
            let retrained = ScrubOutcome::deterministic(Method::Retrain, &m, m.w.clone());
            let reference = inverse_fisher(&m.arch, &m.w, &retain.inputs).and_then(|cov| {
                ScrubOutcome::new(Method::Retrain, m.arch.clone(), w0.clone(), m.w.clone(), cov, cfg.scrub.noise_scale, seed)
            });
            outcomes.insert(Method::Retrain, retrained.map_err(msg));
            (path, reference.ok())
        }
        Err(e) => {
            outcomes.insert(Method::Retrain, Err(e.to_string()));
            (Vec::new(), None)
        }
    };
    Ok(SeedModels { seed, original: model, path_d, path_dr, outcomes, reference })
}

/// Smallest grid scale whose seed-mean `err_Df` reaches `target`; the
/// largest grid value if none does.
pub fn match_fisher_scale(fisher: &[&ScrubOutcome], data: &SplitDataset, grid: &[f64], target: f64) -> Result<f64> {
    let last = *grid.last().ok_or_else(|| LabError::Config("empty fisher grid".into()))?;
    for &scale in grid {
        let mut errs = Vec::with_capacity(fisher.len());
        for f in fisher {
            errs.push(error_readouts(&f.with_noise_scale(scale)?, data)?.0);
        }
        if mean_std(&errs).0 >= target {
            return Ok(scale);
        }
    }
    Ok(last)
}

/// Readouts of one outcome. `threshold` is the original model's `D_f` loss
/// and `retrained` the same-seed retrain reference.
pub fn readout_report(
    cfg: &ExperimentConfig,
    data: &SplitDataset,
    outcome: &ScrubOutcome,
    retrained: &ScrubOutcome,
    threshold: f64,
    seed: u64,
) -> Result<ReadoutReport> {
    let (err_df, err_dr, err_test) = error_readouts(outcome, data)?;
    let forget = data.forget();
    let relearn_epochs = relearn_time(
        outcome,
        &data.train,
        &forget,
        &cfg.finetune.to_train_config(),
        threshold,
        cfg.readout.relearn_max_epochs,
        seed,
    )?;
    let attack_accuracy = membership_attack(outcome, data, cfg.readout.attack)?;
    Ok(ReadoutReport {
        method: outcome.method,
        seed,
        err_df,
        err_dr,
        err_test,
        relearn_epochs,
        attack_accuracy,
        activation_l1_df: activation_distance(outcome, retrained, &forget.inputs)?,
        activation_l1_dr: activation_distance(outcome, retrained, &data.retain().inputs)?,
    })
}

/// Query inputs: `(bound queries from D_f, [per-query sets D_f, D_r, test])`.
pub fn query_sets(cfg: &ExperimentConfig, data: &SplitDataset) -> (DenseMatrix, [DenseMatrix; 3]) {
    let pick = |x: &DenseMatrix, n: usize| x.select_rows(&spread_indices(x.rows(), n));
    let df = data.forget().inputs;
    let dr = data.retain().inputs;
    let bound = pick(&df, cfg.queries.from_df);
    (bound.clone(), [bound, pick(&dr, cfg.queries.from_dr), pick(&data.test.inputs, cfg.queries.from_test)])
}

fn timed<T>(timings: &mut BTreeMap<String, f64>, stage: &str, f: impl FnOnce() -> T) -> T {
    let start = Instant::now();
    let out = f();
    timings.insert(stage.to_string(), start.elapsed().as_secs_f64());
    out
}

/// Runs the whole benchmark in memory.
pub fn execute(cfg: &ExperimentConfig) -> Result<RunResults> {
    cfg.validate()?;
    let mut timings = BTreeMap::new();
    let data = synthesize(&cfg.dataset_spec())?;
    let ridge = ntk_options(cfg, data.retain_indices.len()).ridge;

    let trained: Vec<Result<SeedModels>> =
        timed(&mut timings, "train_and_scrub", || cfg.seeds.par_iter().map(|&s| train_seed(cfg, &data, s)).collect());
    let mut failures = Vec::new();
    let mut seeds = Vec::new();
    for (seed, t) in cfg.seeds.iter().zip(trained) {
        match t {
            Ok(s) => seeds.push(s),
            Err(e) => failures.extend(Method::ALL.map(|method| CellFailure { method, seed: *seed, error: e.to_string() })),
        }
    }

    // Fisher noise matched to the NTK scrub's forgetting.
    let fisher_noise_scale = timed(&mut timings, "fisher_match", || -> Result<f64> {
        let ntk_err: Vec<f64> = seeds
            .iter()
            .filter_map(|s| s.outcomes[&Method::Ntk].as_ref().ok())
            .map(|o| error_readouts(o, &data).map(|e| e.0))
            .collect::<std::result::Result<_, _>>()?;
        let fisher: Vec<&ScrubOutcome> = seeds.iter().filter_map(|s| s.outcomes[&Method::Fisher].as_ref().ok()).collect();
        if ntk_err.is_empty() || fisher.is_empty() {
            return Ok(cfg.scrub.noise_scale);
        }
        match_fisher_scale(&fisher, &data, &cfg.scrub.fisher_grid, mean_std(&ntk_err).0)
    })?;
    for s in &mut seeds {
        if let Some(Ok(f)) = s.outcomes.get(&Method::Fisher) {
            let renoised = f.with_noise_scale(fisher_noise_scale).map_err(|e| e.to_string());
            s.outcomes.insert(Method::Fisher, renoised);
        }
    }

    let cells: Vec<(usize, Method)> = (0..seeds.len()).flat_map(|i| Method::ALL.map(|m| (i, m))).collect();
    let readouts: Vec<(Method, u64, std::result::Result<ReadoutReport, String>)> = timed(&mut timings, "readouts", || {
        cells
            .par_iter()
            .map(|&(i, method)| {
                let s = &seeds[i];
                let report = (|| -> std::result::Result<ReadoutReport, String> {
                    let outcome = s.outcomes[&method].as_ref().map_err(Clone::clone)?;
                    let retrained = s.outcomes[&Method::Retrain].as_ref().map_err(|e| format!("retrain failed: {e}"))?;
                    let threshold = forget_loss(&s.original.arch, &s.original.w, &data.forget()).map_err(|e| e.to_string())?;
                    readout_report(cfg, &data, outcome, retrained, threshold, s.seed).map_err(|e| e.to_string())
                })();
                (method, s.seed, report)
            })
            .collect()
    });
    for (method, seed, r) in &readouts {
        if let Err(error) = r {
            if !failures.iter().any(|f: &CellFailure| f.method == *method && f.seed == *seed) {
                failures.push(CellFailure { method: *method, seed: *seed, error: error.clone() });
            }
        }
    }
    let retrain_reports: Vec<ReadoutReport> =
        readouts.iter().filter(|(m, _, _)| *m == Method::Retrain).filter_map(|(_, _, r)| r.clone().ok()).collect();
    let green_band = GreenBand::from_reports(&retrain_reports).ok();

    let (bound_queries, per_query) = query_sets(cfg, &data);
    let per_query_refs: Vec<&DenseMatrix> = per_query.iter().collect();
    let pairs_for = |method: Method, scale: f64| -> Vec<(ScrubOutcome, ScrubOutcome)> {
        seeds
            .iter()
            .filter_map(|s| {
                let o = s.outcomes[&method].as_ref().ok()?;
                let r = s.reference.as_ref()?.with_noise_scale(scale).ok()?;
                Some((o.clone(), r))
            })
            .collect()
    };
    let audited = [(Method::Ntk, cfg.scrub.noise_scale), (Method::Fisher, fisher_noise_scale)];
    let (info, tradeoff) = timed(&mut timings, "bounds_and_sweeps", || {
        let results: Vec<(Method, Option<InfoBoundReport>, Option<Vec<TradeoffRow>>)> = audited
            .par_iter()
            .map(|&(method, scale)| {
                let owned = pairs_for(method, scale);
                let pairs: Vec<(&ScrubOutcome, &ScrubOutcome)> = owned.iter().map(|(a, b)| (a, b)).collect();
                if pairs.is_empty() {
                    return (method, None, None);
                }
                let info = info_report(&pairs, &bound_queries, &per_query_refs).ok();
                let sweep = tradeoff_sweep(&pairs, &cfg.scrub.noise_grid, &bound_queries, &data.test).ok();
                (method, info, sweep)
            })
            .collect();
        let mut info = BTreeMap::new();
        let mut tradeoff = BTreeMap::new();
        for (m, i, t) in results {
            if let Some(i) = i {
                info.insert(m, i);
            }
            if let Some(t) = t {
                tradeoff.insert(m, t);
            }
        }
        (info, tradeoff)
    });

    let forget_x = data.forget().inputs;
    let retain_x = data.retain().inputs;
    let interpolation: Vec<(u64, Vec<InterpolationRow>)> = timed(&mut timings, "interpolation", || {
        seeds
            .iter()
            .filter_map(|s| {
                let ntk = s.outcomes[&Method::Ntk].as_ref().ok()?;
                let retrained = s.outcomes[&Method::Retrain].as_ref().ok()?;
                let rows = interpolation_curve(
                    &s.original.arch,
                    &s.original.w,
                    &ntk.shifted_weights,
                    retrained,
                    &forget_x,
                    &retain_x,
                    cfg.readout.interpolation_steps,
                )
                .ok()?;
                Some((s.seed, rows))
            })
            .collect()
    });

    let pca = seeds.iter().find_map(|s| {
        let ntk = s.outcomes[&Method::Ntk].as_ref().ok()?;
        let steps = cfg.readout.interpolation_steps;
        let scrub_path: Vec<Vec<f64>> = (0..steps)
            .map(|k| {
                let a = k as f64 / (steps - 1) as f64;
                s.original.w.iter().zip(&ntk.shifted_weights).map(|(x, y)| x + a * (y - x)).collect()
            })
            .collect();
        let paths = vec![
            ("train_d".to_string(), s.path_d.clone()),
            ("train_dr".to_string(), s.path_dr.clone()),
            ("scrub_ntk".to_string(), scrub_path),
        ];
        project_paths(&paths).ok()
    });

    Ok(RunResults {
        data,
        ridge,
        fisher_noise_scale,
        seeds,
        readouts,
        green_band,
        info,
        tradeoff,
        interpolation,
        pca,
        failures,
        timings,
    })
}

/// One row of `summary.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: Method,
    pub seeds: usize,
    pub err_df_mean: f64,
    pub err_df_std: f64,
    pub err_dr_mean: f64,
    pub err_dr_std: f64,
    pub err_test_mean: f64,
    pub err_test_std: f64,
    pub relearn_epochs_mean: f64,
    pub relearn_epochs_std: f64,
    pub attack_accuracy_mean: f64,
    pub attack_accuracy_std: f64,
    pub activation_l1_df_mean: f64,
    pub activation_l1_df_std: f64,
    pub activation_l1_dr_mean: f64,
    pub activation_l1_dr_std: f64,
    pub err_df_band: Option<BandPosition>,
    pub err_dr_band: Option<BandPosition>,
    pub err_test_band: Option<BandPosition>,
    pub relearn_epochs_band: Option<BandPosition>,
    pub attack_accuracy_band: Option<BandPosition>,
    pub failures: usize,
}

/// Mean and spread per method over successful seeds, with positions
/// relative to `band` when one is available.
pub fn summarize(reports: &[ReadoutReport], failures: &[CellFailure], band: Option<&GreenBand>) -> Vec<SummaryRow> {
    Method::ALL
        .iter()
        .map(|&method| {
            let rs: Vec<&ReadoutReport> = reports.iter().filter(|r| r.method == method).collect();
            let stat = |f: &dyn Fn(&ReadoutReport) -> f64| mean_std(&rs.iter().map(|r| f(r)).collect::<Vec<_>>());
            let (err_df_mean, err_df_std) = stat(&|r| r.err_df);
            let (err_dr_mean, err_dr_std) = stat(&|r| r.err_dr);
            let (err_test_mean, err_test_std) = stat(&|r| r.err_test);
            let (relearn_epochs_mean, relearn_epochs_std) = stat(&|r| r.relearn_epochs as f64);
            let (attack_accuracy_mean, attack_accuracy_std) = stat(&|r| r.attack_accuracy);
            let (activation_l1_df_mean, activation_l1_df_std) = stat(&|r| r.activation_l1_df);
            let (activation_l1_dr_mean, activation_l1_dr_std) = stat(&|r| r.activation_l1_dr);
            let pos = |r: Readout, v: f64| band.filter(|_| !rs.is_empty()).map(|b| b.position(r, v));
            SummaryRow {
                method,
                seeds: rs.len(),
                err_df_band: pos(Readout::ErrDf, err_df_mean),
                err_dr_band: pos(Readout::ErrDr, err_dr_mean),
                err_test_band: pos(Readout::ErrTest, err_test_mean),
                relearn_epochs_band: pos(Readout::RelearnEpochs, relearn_epochs_mean),
                attack_accuracy_band: pos(Readout::AttackAccuracy, attack_accuracy_mean),
                err_df_mean,
                err_df_std,
                err_dr_mean,
                err_dr_std,
                err_test_mean,
                err_test_std,
                relearn_epochs_mean,
                relearn_epochs_std,
                attack_accuracy_mean,
                attack_accuracy_std,
                activation_l1_df_mean,
                activation_l1_df_std,
                activation_l1_dr_mean,
                activation_l1_dr_std,
                failures: failures.iter().filter(|f| f.method == method).count(),
            }
        })
        .collect()
}

pub const READOUT_HEADER: [&str; 11] = [
    "method",
    "seed",
    "noise_scale",
    "err_df",
    "err_dr",
    "err_test",
    "relearn_epochs",
    "attack_accuracy",
    "activation_l1_df",
    "activation_l1_dr",
    "status",
];

pub const TRADEOFF_HEADER: [&str; 9] = [
    "lambda_noise",
    "white_box_nats",
    "black_box_nats",
    "mean_term",
    "cov_term",
    "test_error",
    "white_box_std",
    "black_box_std",
    "test_error_std",
];

fn readout_rows(results: &RunResults) -> Vec<Vec<String>> {
    results
        .readouts
        .iter()
        .map(|(method, seed, r)| {
            let scale = results.outcome(*method, *seed).map(|o| o.noise_scale.to_string()).unwrap_or_default();
            let mut row = vec![method.name().to_string(), seed.to_string(), scale];
            match r {
                Ok(r) => {
                    row.extend(
                        [r.err_df, r.err_dr, r.err_test, r.relearn_epochs as f64, r.attack_accuracy, r.activation_l1_df, r.activation_l1_dr]
                            .map(|v| v.to_string()),
                    );
                    row.push("ok".to_string());
                }
                Err(e) => {
                    row.extend(std::iter::repeat_n(String::new(), 7));
                    row.push(e.clone());
                }
            }
            row
        })
        .collect()
}

#[derive(Serialize)]
struct InfoRow {
    method: Method,
    noise_scale: f64,
    seeds: usize,
    white_box_nats: f64,
    white_box_mean_term: f64,
    white_box_cov_term: f64,
    black_box_nats: f64,
    black_box_mean_term: f64,
    black_box_cov_term: f64,
    queries: usize,
}

#[derive(Serialize)]
struct PerQueryRow {
    method: Method,
    query_set: &'static str,
    query_index: usize,
    nats: f64,
}

#[derive(Serialize)]
struct InterpolationCsvRow {
    seed: u64,
    alpha: f64,
    l1_df: f64,
    l1_dr: f64,
}

#[derive(Serialize)]
struct PcaMeta {
    explained_variance: [f64; 2],
    explained_total: f64,
    snapshots: usize,
}

pub fn tradeoff_rows(rows: &[TradeoffRow]) -> Vec<Vec<String>> {
    rows.iter()
        .map(|r| {
            [r.lambda_noise, r.white_box_nats, r.black_box_nats, r.mean_term, r.cov_term, r.test_error, r.white_box_std, r.black_box_std, r.test_error_std]
                .map(|v| v.to_string())
                .to_vec()
        })
        .collect()
}

/// Writes every artifact of `results` under `cfg.output_dir`.
pub fn write_outputs(cfg: &ExperimentConfig, results: &RunResults) -> Result<RunManifest> {
    let dir = &cfg.output_dir;
    let hash = cfg.hash();
    let mut reports = BTreeMap::new();
    let mut add = |name: &str, rel: &str| -> PathBuf {
        reports.insert(name.to_string(), PathBuf::from(rel));
        dir.join(rel)
    };

    write_text(&add("config", "config.toml"), &cfg.to_text())?;
    let ok: Vec<ReadoutReport> = results.readouts.iter().filter_map(|(_, _, r)| r.clone().ok()).collect();
    write_csv(&add("summary", "summary.csv"), &summarize(&ok, &results.failures, results.green_band.as_ref()))?;
    write_csv_with_header(&add("readouts", "readouts.csv"), &READOUT_HEADER, &readout_rows(results))?;
    if let Some(band) = &results.green_band {
        write_json(&add("green_band", "green_band.json"), band)?;
    }

    let scale_of = |m: Method| if m == Method::Fisher { results.fisher_noise_scale } else { cfg.scrub.noise_scale };
    let info_rows: Vec<InfoRow> = results
        .info
        .iter()
        .map(|(&method, r)| InfoRow {
            method,
            noise_scale: scale_of(method),
            seeds: r.seeds_averaged,
            white_box_nats: r.white_box_nats,
            white_box_mean_term: r.white_box.mean_term,
            white_box_cov_term: r.white_box.cov_term,
            black_box_nats: r.black_box_nats,
            black_box_mean_term: r.black_box.mean_term,
            black_box_cov_term: r.black_box.cov_term,
            queries: cfg.queries.from_df.min(results.data.forget_indices.len()),
        })
        .collect();
    write_csv(&add("info", "info.csv"), &info_rows)?;
    let per_query: Vec<PerQueryRow> = results
        .info
        .iter()
        .flat_map(|(&method, r)| {
            ["df", "dr", "test"].into_iter().zip(&r.per_query_nats).flat_map(move |(set, vals)| {
                vals.iter().enumerate().map(move |(i, &nats)| PerQueryRow { method, query_set: set, query_index: i, nats })
            })
        })
        .collect();
    write_csv(&add("per_query", "per_query.csv"), &per_query)?;

    for (method, name) in [(Method::Ntk, "tradeoff_ntk"), (Method::Fisher, "tradeoff_fisher")] {
        let rows = results.tradeoff.get(&method).map(|r| tradeoff_rows(r)).unwrap_or_default();
        write_csv_with_header(&add(name, &format!("{name}.csv")), &TRADEOFF_HEADER, &rows)?;
    }

    let interp: Vec<InterpolationCsvRow> = results
        .interpolation
        .iter()
        .flat_map(|(seed, rows)| rows.iter().map(|r| InterpolationCsvRow { seed: *seed, alpha: r.alpha, l1_df: r.l1_df, l1_dr: r.l1_dr }))
        .collect();
    write_csv(&add("interpolation", "interpolation.csv"), &interp)?;

    if let Some(pca) = &results.pca {
        write_csv(&add("pca_paths", "pca_paths.csv"), &pca.points)?;
        let meta = PcaMeta {
            explained_variance: pca.explained_variance,
            explained_total: pca.explained_variance.iter().sum(),
            snapshots: pca.points.len(),
        };
        write_json(&add("pca_meta", "pca_meta.json"), &meta)?;
    }

    let mut checkpoints = Vec::new();
    for s in &results.seeds {
        for (&method, o) in &s.outcomes {
            if let Ok(o) = o {
                let rel = checkpoint_path(Path::new("checkpoints"), method, s.seed);
                save_checkpoint(&dir.join(&rel), o, &hash)?;
                checkpoints.push(CheckpointEntry { method, seed: s.seed, path: rel });
            }
        }
    }

    let timings = PathBuf::from("timings.json");
    write_json(&dir.join(&timings), &results.timings)?;
    let manifest = RunManifest {
        config_hash: hash,
        ridge: results.ridge,
        fisher_noise_scale: results.fisher_noise_scale,
        checkpoints,
        reports,
        failures: results.failures.clone(),
        timings,
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

/// [`execute`] followed by [`write_outputs`].
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<(RunManifest, RunResults)> {
    let results = execute(cfg)?;
    let manifest = write_outputs(cfg, &results)?;
    Ok((manifest, results))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spread_indices_cover_range() {
        assert_eq!(spread_indices(100, 4), vec![0, 25, 50, 75]);
        assert_eq!(spread_indices(3, 10), vec![0, 1, 2]);
        assert!(spread_indices(0, 5).is_empty());
    }

    #[test]
    fn single_seed_band_is_a_point() {
        let r = ReadoutReport {
            method: Method::Retrain,
            seed: 0,
            err_df: 0.2,
            err_dr: 0.0,
            err_test: 0.1,
            relearn_epochs: 3,
            attack_accuracy: 0.4,
            activation_l1_df: 0.0,
            activation_l1_dr: 0.0,
        };
        let band = GreenBand::from_reports(std::slice::from_ref(&r)).unwrap();
        let rows = summarize(&[r], &[], Some(&band));
        let retrain = rows.iter().find(|x| x.method == Method::Retrain).unwrap();
        assert_eq!(retrain.err_df_std, 0.0);
        assert_eq!(retrain.attack_accuracy_band, Some(BandPosition::Inside));
        let ntk = rows.iter().find(|x| x.method == Method::Ntk).unwrap();
        assert_eq!(ntk.seeds, 0);
        assert_eq!(ntk.err_df_band, None);
    }
}
