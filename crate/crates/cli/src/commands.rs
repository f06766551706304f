//! The five verbs. Each writes its outputs plus `config.json` and
//! `manifest.json` into the output directory and returns what it computed.

use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use pdgmm_core::checkpoint;
use pdgmm_core::csvio::{format_f64, read_table};
use pdgmm_core::evalsep::{marginal_report, match_sources, mean_std, MarginalPairing, MatchResult};
use pdgmm_core::model::PdgmmVae;
use pdgmm_core::objective::LossBreakdown;
use pdgmm_core::par::map_jobs;
use pdgmm_core::prior::PriorSnapshot;
use pdgmm_core::synthgen::{Dataset, MixingKind, SPEC_FILE, Y_FILE, Z_FILE};
use pdgmm_core::trainer::{TrainRecord, Trainer};
use pdgmm_core::{Error, Matrix};
use serde::{Deserialize, Serialize};

use crate::config::{Experiment, ExperimentConfig};
use crate::error::{CliError, CliResult};
use crate::manifest::{now_ms, RunManifest};
use crate::plot::{color, Figure, Panel};

pub const CONFIG_FILE: &str = "config.json";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CHECKPOINT_DIR: &str = "checkpoint";
pub const LAST_GOOD_DIR: &str = "last_good";
pub const MATCH_FILE: &str = "match.json";
pub const DENSITIES_FILE: &str = "densities.json";
pub const COMPARISON_CSV: &str = "comparison.csv";
pub const COMPARISON_JSON: &str = "comparison.json";
pub const SWEEP_CSV: &str = "sweep.csv";
pub const SWEEP_JSON: &str = "sweep.json";

/// Samples drawn in the source-overlay plot.
const OVERLAY_SAMPLES: usize = 300;

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> CliResult<PathBuf> {
    fs::write(path, contents).map_err(|e| CliError::io(path, e))?;
    Ok(path.to_path_buf())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<PathBuf> {
    write_file(path, serde_json::to_string_pretty(value)? + "\n")
}

fn config_value(cfg: &ExperimentConfig) -> serde_json::Value {
    serde_json::to_value(cfg).expect("config serializes")
}

/// Correlation summary shared by `summary.json`, `match.json` and sweeps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchSummary {
    pub assignment: Vec<usize>,
    pub signs: Vec<i8>,
    pub abs_corrs: Vec<f64>,
    pub mean_abs_corr: f64,
    pub min_abs_corr: f64,
    pub correlation: Vec<Vec<f64>>,
}

impl From<MatchResult> for MatchSummary {
    fn from(m: MatchResult) -> Self {
        Self {
            mean_abs_corr: m.mean_abs_corr(),
            min_abs_corr: m.min_abs_corr(),
            assignment: m.assignment,
            signs: m.signs,
            abs_corrs: m.abs_corrs,
            correlation: m.correlation,
        }
    }
}

fn match_model(model: &PdgmmVae, ds: &Dataset) -> CliResult<MatchSummary> {
    let mu = model.posterior_means(&ds.y)?;
    Ok(match_sources(&ds.z_true, &mu)?.into())
}

// ---------------------------------------------------------------- generate

pub fn generate(cfg: &ExperimentConfig, out_dir: &Path) -> CliResult<Dataset> {
    let started = now_ms();
    cfg.validate()?;
    create_dir(out_dir)?;
    let ds = Dataset::generate(&cfg.data)?;
    ds.write_dir(out_dir)?;
    let config = write_file(&out_dir.join(CONFIG_FILE), cfg.to_json())?;
    let mut manifest = RunManifest::new("generate", cfg.seed, config_value(cfg), started);
    manifest.dataset = [Y_FILE, Z_FILE, SPEC_FILE]
        .iter()
        .map(|f| out_dir.join(f))
        .collect();
    manifest.outputs.push(config);
    manifest.write(out_dir)?;
    Ok(ds)
}

pub fn generate_line(ds: &Dataset, dir: &Path) -> String {
    let kind = match ds.mixing.kind {
        MixingKind::Linear => "linear",
        MixingKind::Tanh2 => "tanh2",
    };
    format!(
        "generated {kind} dataset: T={} n={} m={} seed={} -> {}",
        ds.samples(),
        ds.z_true.cols(),
        ds.y.cols(),
        ds.seed,
        dir.display()
    )
}

// ------------------------------------------------------------------- train

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub epochs_run: usize,
    pub converged_at: Option<usize>,
    pub final_loss: Option<LossBreakdown>,
    pub posterior_var: Vec<f64>,
    pub prior: PriorSnapshot,
    pub matching: MatchSummary,
}

pub struct TrainOutcome {
    pub model: PdgmmVae,
    pub record: TrainRecord,
    pub summary: TrainSummary,
}

fn check_dataset(cfg: &ExperimentConfig, ds: &Dataset) -> CliResult<()> {
    if ds.z_true.cols() != cfg.train.sources {
        return Err(CliError::Usage(format!(
            "dataset has {} sources but train.sources is {}",
            ds.z_true.cols(),
            cfg.train.sources
        )));
    }
    if ds.y.cols() != cfg.data.observed {
        return Err(CliError::Usage(format!(
            "dataset has {} observed columns but data.observed is {}",
            ds.y.cols(),
            cfg.data.observed
        )));
    }
    Ok(())
}

pub fn train(cfg: &ExperimentConfig, data_dir: &Path, out_dir: &Path) -> CliResult<TrainOutcome> {
    let started = now_ms();
    cfg.validate()?;
    let ds = Dataset::read_dir(data_dir)?;
    check_dataset(cfg, &ds)?;
    create_dir(out_dir)?;
    info!(
        "training {} epochs on T={} (batch {:?})",
        cfg.train.epochs,
        ds.samples(),
        cfg.train.batch_size
    );
    let trainer = Trainer::new(cfg.train.clone()).abort_checkpoint(out_dir.join(LAST_GOOD_DIR));
    let (model, record) = trainer.fit(&ds.y, Some(&ds.z_true))?;

    let summary = TrainSummary {
        epochs_run: record.losses.len(),
        converged_at: record.converged_at,
        final_loss: record.entries.last().map(|e| e.loss),
        posterior_var: model.posterior_variances(),
        prior: model.prior.snapshot(),
        matching: match_model(&model, &ds)?,
    };
    let ckpt = out_dir.join(CHECKPOINT_DIR);
    checkpoint::write(&ckpt, &model)?;
    let log = write_file(&out_dir.join(TRAIN_LOG_FILE), record.to_csv())?;
    let sum = write_json(&out_dir.join(SUMMARY_FILE), &summary)?;
    let config = write_file(&out_dir.join(CONFIG_FILE), cfg.to_json())?;

    let mut manifest = RunManifest::new("train", cfg.seed, config_value(cfg), started);
    manifest.dataset = [Y_FILE, Z_FILE, SPEC_FILE]
        .iter()
        .map(|f| data_dir.join(f))
        .collect();
    manifest.checkpoints = [
        checkpoint::MANIFEST_FILE,
        checkpoint::WEIGHTS_FILE,
        checkpoint::PRIOR_FILE,
    ]
    .iter()
    .map(|f| ckpt.join(f))
    .collect();
    manifest.outputs = vec![log, sum, config];
    manifest.write(out_dir)?;
    Ok(TrainOutcome {
        model,
        record,
        summary,
    })
}

pub fn train_line(s: &TrainSummary) -> String {
    let corrs: Vec<String> = s
        .matching
        .abs_corrs
        .iter()
        .map(|c| format!("{c:.4}"))
        .collect();
    format!(
        "trained {} epochs: |corr| = [{}], mean {:.4}",
        s.epochs_run,
        corrs.join(", "),
        s.matching.mean_abs_corr
    )
}

// -------------------------------------------------------------------- eval

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensitySummary {
    pub source: usize,
    pub prior_dim: usize,
    pub tv_distance: f64,
    pub bins: usize,
    pub table: PathBuf,
}

pub struct EvalOutcome {
    pub matching: MatchSummary,
    pub densities: Vec<DensitySummary>,
}

/// Evaluates a checkpoint against a dataset. `train_log`, when given, adds
/// the training-curve plot.
pub fn eval(
    checkpoint_dir: &Path,
    data_dir: &Path,
    out_dir: &Path,
    train_log: Option<&Path>,
) -> CliResult<EvalOutcome> {
    let started = now_ms();
    let model = checkpoint::read(checkpoint_dir)?;
    let ds = Dataset::read_dir(data_dir)?;
    if model.observed() != ds.y.cols() || model.sources() != ds.z_true.cols() {
        return Err(CliError::Usage(format!(
            "checkpoint expects m={} n={}, dataset has m={} n={}",
            model.observed(),
            model.sources(),
            ds.y.cols(),
            ds.z_true.cols()
        )));
    }
    create_dir(out_dir)?;
    let mu = model.posterior_means(&ds.y)?;
    let matching: MatchSummary = match_sources(&ds.z_true, &mu)?.into();
    let variances = model.posterior_variances();
    let mut outputs = vec![write_json(&out_dir.join(MATCH_FILE), &matching)?];

    let mut densities = Vec::new();
    let mut density_fig = Figure::new("True and estimated source distributions (z-scored)", 3);
    for (j, &est) in matching.assignment.iter().enumerate() {
        let pairing = MarginalPairing {
            prior_dim: est,
            posterior_var: variances[est],
            sign: f64::from(matching.signs[j]),
        };
        let report = marginal_report(&model.prior, pairing, &ds.z_true.column(j), &mu.column(est))?;
        let table = write_file(
            &out_dir.join(format!("density_source{}.csv", j + 1)),
            report.to_csv(),
        )?;
        outputs.push(table.clone());
        density_fig = density_fig.panel(
            Panel::new(
                format!("source {} (TV {:.3})", j + 1, report.tv_distance),
                "z-scored value",
            )
            .line(
                "learned prior",
                report.grid.clone(),
                report.learned_density.clone(),
                color(0),
            )
            .dashed(
                "true",
                report.grid.clone(),
                report.true_hist.clone(),
                color(2),
            )
            .line(
                "estimated",
                report.grid.clone(),
                report.est_hist.clone(),
                color(1),
            ),
        );
        densities.push(DensitySummary {
            source: j + 1,
            prior_dim: est + 1,
            tv_distance: report.tv_distance,
            bins: report.bins,
            table,
        });
    }
    outputs.push(write_json(&out_dir.join(DENSITIES_FILE), &densities)?);
    outputs.push(write_file(
        &out_dir.join("densities.svg"),
        density_fig.to_svg(),
    )?);
    outputs.push(write_file(
        &out_dir.join("sources.svg"),
        overlay_figure(&ds.z_true, &mu, &matching, &variances)?.to_svg(),
    )?);
    if let Some(log) = train_log {
        outputs.push(write_file(
            &out_dir.join("training.svg"),
            training_figure(log)?.to_svg(),
        )?);
    }

    let mut manifest = RunManifest::new(
        "eval",
        ds.seed,
        serde_json::json!({
            "checkpoint": checkpoint_dir,
            "data_dir": data_dir,
            "train_log": train_log,
        }),
        started,
    );
    manifest.dataset = [Y_FILE, Z_FILE, SPEC_FILE]
        .iter()
        .map(|f| data_dir.join(f))
        .collect();
    manifest.checkpoints = vec![checkpoint_dir.join(checkpoint::MANIFEST_FILE)];
    manifest.outputs = outputs;
    manifest.write(out_dir)?;
    Ok(EvalOutcome {
        matching,
        densities,
    })
}

fn zscored(v: &[f64]) -> CliResult<(Vec<f64>, f64)> {
    let (m, s) = mean_std(v);
    if !(s > 0.0) {
        return Err(Error::DegenerateColumn { column: 0 }.into());
    }
    Ok((v.iter().map(|x| (x - m) / s).collect(), s))
}

fn overlay_figure(
    z_true: &Matrix,
    mu: &Matrix,
    m: &MatchSummary,
    variances: &[f64],
) -> CliResult<Figure> {
    let shown = z_true.rows().min(OVERLAY_SAMPLES);
    let x: Vec<f64> = (0..shown).map(|t| t as f64).collect();
    let mut fig = Figure::new(
        "Sources: true vs posterior mean with ±2σ bands (z-scored)",
        1,
    );
    for (j, &est) in m.assignment.iter().enumerate() {
        let (truth, _) = zscored(&z_true.column(j))?;
        let (e, sd) = zscored(&mu.column(est))?;
        let sign = f64::from(m.signs[j]);
        let e: Vec<f64> = e[..shown].iter().map(|v| sign * v).collect();
        let half = 2.0 * variances[est].sqrt() / sd;
        fig = fig.panel(
            Panel::new(
                format!("source {} (|corr| {:.4})", j + 1, m.abs_corrs[j]),
                "sample",
            )
            .band(
                x.clone(),
                e.iter().map(|v| v - half).collect(),
                e.iter().map(|v| v + half).collect(),
                color(1),
            )
            .line("true", x.clone(), truth[..shown].to_vec(), color(0))
            .line("estimate", x.clone(), e, color(1)),
        );
    }
    Ok(fig)
}

/// Training-curve panels from a `train_log.csv`.
pub fn training_figure(log: &Path) -> CliResult<Figure> {
    let (header, table) = read_table(log)?;
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .map(|i| table.column(i))
    };
    let epoch = col("epoch")
        .ok_or_else(|| CliError::Usage(format!("{}: no epoch column", log.display())))?;
    let group = |title: &str, prefix: &str, log_y: bool| {
        let mut p = Panel::new(title, "epoch");
        p.log_y = log_y;
        let cols = header
            .iter()
            .enumerate()
            .filter(|(_, h)| h.starts_with(prefix));
        for (k, (i, h)) in cols.enumerate() {
            p = p.line(
                h.trim_start_matches(prefix),
                epoch.clone(),
                table.column(i),
                color(k),
            );
        }
        p
    };
    let total = col("total").unwrap_or_default();
    let mut loss =
        Panel::new("total loss", "epoch").line("total", epoch.clone(), total.clone(), color(0));
    loss.log_y = total.iter().all(|v| *v > 0.0) && !total.is_empty();
    Ok(Figure::new("Training dynamics", 3)
        .panel(loss)
        .panel(group("posterior variances", "sigma2_", true))
        .panel(group("GMM means", "prior_mean_", false))
        .panel(group("GMM variances", "prior_var_", true))
        .panel(group("GMM weights", "prior_weight_", false))
        .panel(group("per-source max |corr|", "abs_corr_", false)))
}

// --------------------------------------------------------------- reproduce

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub source: usize,
    pub reference: f64,
    pub achieved: f64,
    pub difference: f64,
}

pub struct ReproduceOutcome {
    pub train: TrainOutcome,
    pub eval: EvalOutcome,
    pub comparison: Vec<ComparisonRow>,
}

pub fn comparison_csv(rows: &[ComparisonRow]) -> String {
    let mut s = String::from("source,reference,achieved,difference\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{}\n",
            r.source,
            format_f64(r.reference),
            format_f64(r.achieved),
            format_f64(r.difference)
        ));
    }
    s
}

/// generate → train → eval under `out_dir/{data,train,eval}` plus a
/// comparison table against the published correlations.
pub fn reproduce(
    experiment: Experiment,
    cfg: &ExperimentConfig,
    out_dir: &Path,
) -> CliResult<ReproduceOutcome> {
    let started = now_ms();
    let data_dir = out_dir.join("data");
    let train_dir = out_dir.join("train");
    let eval_dir = out_dir.join("eval");
    generate(cfg, &data_dir)?;
    let train_out = train(cfg, &data_dir, &train_dir)?;
    let log = train_dir.join(TRAIN_LOG_FILE);
    let eval_out = eval(
        &train_dir.join(CHECKPOINT_DIR),
        &data_dir,
        &eval_dir,
        Some(&log),
    )?;

    let reference = experiment.reference_correlations();
    let comparison: Vec<ComparisonRow> = eval_out
        .matching
        .abs_corrs
        .iter()
        .enumerate()
        .take(reference.len())
        .map(|(j, &achieved)| ComparisonRow {
            source: j + 1,
            reference: reference[j],
            achieved,
            difference: achieved - reference[j],
        })
        .collect();
    let csv = write_file(&out_dir.join(COMPARISON_CSV), comparison_csv(&comparison))?;
    let json = write_json(&out_dir.join(COMPARISON_JSON), &comparison)?;
    let mut manifest = RunManifest::new(
        &format!("reproduce {}", experiment.name()),
        cfg.seed,
        config_value(cfg),
        started,
    );
    manifest.dataset = vec![
        data_dir.join(Y_FILE),
        data_dir.join(Z_FILE),
        data_dir.join(SPEC_FILE),
    ];
    manifest.checkpoints = vec![train_dir
        .join(CHECKPOINT_DIR)
        .join(checkpoint::MANIFEST_FILE)];
    manifest.outputs = vec![csv, json, log, eval_dir.join(MATCH_FILE)];
    manifest.write(out_dir)?;
    Ok(ReproduceOutcome {
        train: train_out,
        eval: eval_out,
        comparison,
    })
}

pub fn comparison_table(experiment: Experiment, rows: &[ComparisonRow]) -> String {
    let mut s = format!(
        "{} experiment\n source  reference  achieved  difference\n",
        experiment.name()
    );
    for r in rows {
        s.push_str(&format!(
            " {:>6}  {:>9.4}  {:>8.4}  {:>+10.4}\n",
            r.source, r.reference, r.achieved, r.difference
        ));
    }
    s
}

// -------------------------------------------------------------- seed-sweep

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub seed: u64,
    pub epochs_run: usize,
    pub matching: MatchSummary,
}

/// Full generate/train/eval per seed, seeds run concurrently on the
/// current rayon pool. Runs share no state.
pub fn seed_sweep(
    base: &ExperimentConfig,
    seeds: &[u64],
    out_dir: &Path,
) -> CliResult<Vec<SweepEntry>> {
    let started = now_ms();
    create_dir(out_dir)?;
    let results = map_jobs(seeds.to_vec(), |seed| -> CliResult<SweepEntry> {
        let cfg = ExperimentConfig {
            seed,
            ..base.clone()
        }
        .resolved();
        let dir = out_dir.join(format!("seed_{seed}"));
        let data = dir.join("data");
        let train_dir = dir.join("train");
        generate(&cfg, &data)?;
        let t = train(&cfg, &data, &train_dir)?;
        info!("seed {seed}: {}", train_line(&t.summary));
        Ok(SweepEntry {
            seed,
            epochs_run: t.summary.epochs_run,
            matching: t.summary.matching,
        })
    });
    let entries = results.into_iter().collect::<CliResult<Vec<_>>>()?;

    let n = entries.first().map_or(0, |e| e.matching.abs_corrs.len());
    let mut csv = String::from("seed");
    for j in 1..=n {
        csv.push_str(&format!(",abs_corr_{j}"));
    }
    csv.push_str(",mean_abs_corr,min_abs_corr\n");
    for e in &entries {
        csv.push_str(&e.seed.to_string());
        for c in &e.matching.abs_corrs {
            csv.push(',');
            csv.push_str(&format_f64(*c));
        }
        csv.push_str(&format!(
            ",{},{}\n",
            format_f64(e.matching.mean_abs_corr),
            format_f64(e.matching.min_abs_corr)
        ));
    }
    let csv_path = write_file(&out_dir.join(SWEEP_CSV), csv)?;
    let json_path = write_json(&out_dir.join(SWEEP_JSON), &entries)?;
    let mut manifest = RunManifest::new("seed-sweep", base.seed, config_value(base), started);
    manifest.outputs = vec![csv_path, json_path];
    manifest.write(out_dir)?;
    Ok(entries)
}
