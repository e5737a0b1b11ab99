//! End-to-end evaluation: data, frozen ranker scores, calibrator fits on the
//! validation split, and metrics on the unbiased test split.
//!
//! Output layout under the output directory:
//!
//! ```text
//! config.json                      resolved configuration
//! data/{train,validation,test}.csv
//! data/rho.csv, data/omega.csv     synthetic ground truth
//! data/idmap.json                  file sources only
//! ranker/model.json                when scores come from the ranker
//! scores/{validation,test}.csv
//! propensity.csv
//! models/<family>_<loss>.json
//! fits/<family>_<loss>_fitlog.csv  parametric families
//! probs/<family>_<loss>.csv
//! metrics/<family>_<loss>.json, metrics/raw_ranking.json
//! reliability/<family>_<loss>.{csv,svg}
//! report/score_summary.csv, report/score_histogram.csv
//! summary.csv
//! manifest.json                    sha256 of every artifact above
//! ```
//!
//! Nothing time-dependent is written, so identical config and seed give
//! byte-identical trees.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::calibrators::{check_monotone, CalibratorModel, Family, ScoreRange};
use crate::dataset::{
    load_interactions, split_train_validation, write_interactions, write_json, FileFormat, IdMap,
    InteractionDataset, LabelMode, Role, ScoreEntry, ScoreTable, SplitConfig,
};
use crate::fitting::{fit_calibrator, CalibrationData, FitOptions, FitResult, LossKind, LossSpec};
use crate::metrics::{group_by_user, ndcg_recall, reliability, MetricReport};
use crate::propensity::{clip, estimate_popularity, PropensityTable};
use crate::ranker::{score_all, train_bpr, TrainConfig};
use crate::report::{report_score_distributions, DEFAULT_HISTOGRAM_BINS};
use crate::synthetic::{generate_world, sample_world, SyntheticConfig, SyntheticWorld};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "source")]
pub enum DataSource {
    Synthetic {
        #[serde(default)]
        world: SyntheticConfig,
    },
    /// `user,item,value` files; `test` holds unbiased labels.
    Files {
        train: PathBuf,
        test: PathBuf,
        #[serde(default)]
        format: Option<FileFormat>,
        #[serde(default)]
        label_mode: LabelMode,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreSource {
    /// Train the BPR ranker on the training split.
    Ranker,
    /// Use the synthetic world's own scores.
    World,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PropensitySource {
    /// Clipped popularity of the training split.
    Popularity,
    /// The synthetic world's exposure probabilities.
    True,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PropensityConfig {
    pub source: PropensitySource,
    pub exponent: f64,
    pub floor: f64,
}

impl Default for PropensityConfig {
    fn default() -> Self {
        Self {
            source: PropensitySource::Popularity,
            exponent: crate::propensity::DEFAULT_EXPONENT,
            floor: crate::propensity::DEFAULT_FLOOR,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricConfig {
    /// Bins for ECE and MCE.
    pub ece_bins: usize,
    /// Bins for reliability tables and diagrams.
    pub diagram_bins: usize,
    pub ks: Vec<usize>,
    /// Also write the two-sided reliability variant.
    pub two_sided: bool,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            ece_bins: crate::metrics::DEFAULT_METRIC_BINS,
            diagram_bins: crate::metrics::DEFAULT_DIAGRAM_BINS,
            ks: vec![1, 3, 5],
            two_sided: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default = "default_data")]
    pub data: DataSource,
    #[serde(default = "default_scores")]
    pub scores: ScoreSource,
    #[serde(default)]
    pub ranker: TrainConfig,
    #[serde(default = "default_validation_fraction")]
    pub validation_fraction: f64,
    #[serde(default = "default_families")]
    pub families: Vec<Family>,
    #[serde(default = "default_losses")]
    pub losses: Vec<LossKind>,
    #[serde(default)]
    pub propensity: PropensityConfig,
    #[serde(default)]
    pub metrics: MetricConfig,
    #[serde(default)]
    pub fit: FitSettings,
}

/// Optimizer settings exposed in the config.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitSettings {
    pub max_iterations: usize,
    pub relative_tolerance: f64,
    pub histogram_bins: usize,
}

impl Default for FitSettings {
    fn default() -> Self {
        let o = FitOptions::default();
        Self {
            max_iterations: o.max_iterations,
            relative_tolerance: o.relative_tolerance,
            histogram_bins: o.histogram_bins,
        }
    }
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}
fn default_data() -> DataSource {
    DataSource::Synthetic {
        world: SyntheticConfig::default(),
    }
}
fn default_scores() -> ScoreSource {
    ScoreSource::Ranker
}
fn default_validation_fraction() -> f64 {
    0.1
}
fn default_families() -> Vec<Family> {
    Family::ALL.to_vec()
}
fn default_losses() -> Vec<LossKind> {
    vec![LossKind::Naive, LossKind::Uerm]
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: default_output(),
            data: default_data(),
            scores: default_scores(),
            ranker: TrainConfig::default(),
            validation_fraction: default_validation_fraction(),
            families: default_families(),
            losses: default_losses(),
            propensity: PropensityConfig::default(),
            metrics: MetricConfig::default(),
            fit: FitSettings::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.families.is_empty() {
            return bad("at least one calibrator family is required");
        }
        if self.losses.is_empty() {
            return bad("at least one loss kind is required");
        }
        if self.metrics.ks.is_empty() || self.metrics.ks.contains(&0) {
            return bad("metrics.ks must be non-empty positive cutoffs");
        }
        if self.metrics.ece_bins == 0 || self.metrics.diagram_bins == 0 {
            return bad("metric bin counts must be positive");
        }
        let synthetic = matches!(self.data, DataSource::Synthetic { .. });
        if !synthetic {
            if self.losses.contains(&LossKind::Ideal) {
                return bad("the ideal loss needs true preferences and only runs on synthetic data");
            }
            if self.scores == ScoreSource::World {
                return bad("world scores are only available for synthetic data");
            }
            if self.propensity.source == PropensitySource::True {
                return bad("true propensities are only available for synthetic data");
            }
        }
        if let DataSource::Files { train, test, .. } = &self.data {
            for p in [train, test] {
                if !p.exists() {
                    return Err(Error::InvalidConfig(format!("{} does not exist", p.display())));
                }
            }
        }
        Ok(())
    }
}

/// Independent per-stage seed derived from the global seed.
pub fn stage_seed(seed: u64, stage: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stage);
    rng.next_u64()
}

/// One row of `summary.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub family: Family,
    pub loss: LossKind,
    pub metrics: MetricReport,
    /// ECE against true preferences (synthetic data only).
    pub ece_vs_rho: Option<f64>,
    pub fit: Option<FitResult>,
    pub monotone: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutcome {
    pub rows: Vec<SummaryRow>,
    /// Ranking metrics of the raw test scores.
    pub raw_ndcg: BTreeMap<usize, f64>,
    pub raw_recall: BTreeMap<usize, f64>,
    pub output_dir: PathBuf,
}

struct Artifacts {
    root: PathBuf,
    written: Vec<PathBuf>,
}

impl Artifacts {
    fn new(root: &Path) -> Result<Self> {
        std::fs::create_dir_all(root)?;
        Ok(Self {
            root: root.to_path_buf(),
            written: Vec::new(),
        })
    }

    /// Absolute path for `rel`, creating parent directories and recording it.
    fn path(&mut self, rel: &str) -> Result<PathBuf> {
        let p = self.root.join(rel);
        if let Some(parent) = p.parent() {
            std::fs::create_dir_all(parent)?;
        }
        self.written.push(PathBuf::from(rel));
        Ok(p)
    }

    fn write_manifest(&mut self, extra: serde_json::Value) -> Result<()> {
        let mut entries = BTreeMap::new();
        for rel in &self.written {
            let bytes = std::fs::read(self.root.join(rel))?;
            let key = rel.to_string_lossy().replace('\\', "/");
            entries.insert(key, hex::encode(Sha256::digest(&bytes)));
        }
        let manifest = serde_json::json!({ "artifacts": entries, "checks": extra });
        write_json(&self.root.join("manifest.json"), &manifest)
    }
}

fn sha256_of_scores(scores: &[f64]) -> String {
    let mut h = Sha256::new();
    for s in scores {
        h.update(s.to_le_bytes());
    }
    hex::encode(h.finalize())
}

struct Prepared {
    validation: InteractionDataset,
    test: InteractionDataset,
    propensities: PropensityTable,
    world: Option<SyntheticWorld>,
    validation_scores: Vec<f64>,
    test_scores: Vec<f64>,
}

/// Runs every stage, writing artifacts under `cfg.output_dir` as they are produced.
///
/// A failing stage aborts the run with a stage-tagged error; files already
/// written are left in place.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineOutcome> {
    cfg.validate().map_err(|e| e.at_stage("config"))?;
    let mut out = Artifacts::new(&cfg.output_dir).map_err(|e| e.at_stage("config"))?;
    write_json(&out.path("config.json")?, cfg).map_err(|e| e.at_stage("config"))?;

    let prepared = prepare(cfg, &mut out)?;
    let Prepared {
        validation,
        test,
        propensities,
        world,
        validation_scores,
        test_scores,
    } = prepared;
    let test_hash_before = sha256_of_scores(&test_scores);

    // Constraints cover every score the calibrators will be applied to.
    let all_scores: Vec<f64> = validation_scores.iter().chain(&test_scores).copied().collect();
    let range = ScoreRange::of(&all_scores).map_err(|e| e.at_stage("fit"))?;

    let data = CalibrationData::new(
        validation_scores.clone(),
        validation.records().iter().map(|r| r.label).collect(),
        validation.records().iter().map(|r| r.item).collect(),
    )
    .map_err(|e| e.at_stage("fit"))?;
    let validation_rho: Option<Vec<f64>> = world.as_ref().map(|w| {
        validation.records().iter().map(|r| w.rho[w.index(r.user, r.item)]).collect()
    });
    let opts = FitOptions {
        range: Some(range),
        max_iterations: cfg.fit.max_iterations,
        relative_tolerance: cfg.fit.relative_tolerance,
        histogram_bins: cfg.fit.histogram_bins,
        ..FitOptions::default()
    };

    let jobs: Vec<(Family, LossKind)> = cfg
        .families
        .iter()
        .flat_map(|&f| cfg.losses.iter().map(move |&l| (f, l)))
        .collect();
    let fitted: Vec<Result<(CalibratorModel, Option<FitResult>)>> = jobs
        .par_iter()
        .map(|&(family, loss)| {
            let spec = match loss {
                LossKind::Naive => LossSpec::naive(),
                LossKind::Uerm => LossSpec::uerm(propensities.clone()),
                LossKind::Ideal => LossSpec::ideal(validation_rho.clone().ok_or(
                    Error::IncompleteLossSpec("ideal loss needs true preferences"),
                )?),
            };
            fit_calibrator(family, &data, &spec, &opts)
        })
        .collect();

    if sha256_of_scores(&test_scores) != test_hash_before {
        return Err(Error::InvalidArgument("test scores changed during fitting".into()).at_stage("fit"));
    }

    // Ranking metrics of the raw scores, the reference for every calibrated ranking.
    let test_users: Vec<u32> = test.records().iter().map(|r| r.user).collect();
    let test_items: Vec<u32> = test.records().iter().map(|r| r.item).collect();
    let test_labels: Vec<bool> = test.records().iter().map(|r| r.label).collect();
    let test_targets: Vec<f64> = test_labels.iter().map(|&y| f64::from(u8::from(y))).collect();
    let test_rho: Option<Vec<f64>> = world.as_ref().map(|w| {
        test.records().iter().map(|r| w.rho[w.index(r.user, r.item)]).collect()
    });
    let ranking = |scores: &[f64]| -> Result<(BTreeMap<usize, f64>, BTreeMap<usize, f64>)> {
        let grouped = group_by_user(&test_users, &test_items, scores, &test_labels)?;
        ndcg_recall(&grouped, &cfg.metrics.ks)
    };
    let (raw_ndcg, raw_recall) = ranking(&test_scores).map_err(|e| e.at_stage("evaluate"))?;
    write_json(
        &out.path("metrics/raw_ranking.json")?,
        &serde_json::json!({ "ndcg_at_k": raw_ndcg, "recall_at_k": raw_recall }),
    )
    .map_err(|e| e.at_stage("evaluate"))?;

    let mut rows = Vec::with_capacity(jobs.len());
    for (&(family, loss), result) in jobs.iter().zip(fitted) {
        let name = format!("{}_{}", family.name(), loss.name());
        let (model, fit) = result.map_err(|e| {
            Error::InvalidArgument(format!("{name}: {e}")).at_stage("fit")
        })?;
        let stage = |e: Error| e.at_stage("evaluate");
        let model_rel = format!("models/{name}.json");
        write_json(&out.path(&model_rel)?, &model).map_err(stage)?;
        if let Some(f) = &fit {
            f.write_trace_csv(&out.path(&format!("fits/{name}_fitlog.csv"))?).map_err(stage)?;
        }

        let probs = model.transform_all(&test_scores);
        let mut csv = String::from("user,item,score,prob,model\n");
        for (k, r) in test.records().iter().enumerate() {
            let _ = writeln!(csv, "{},{},{},{},{}", r.user, r.item, test_scores[k], probs[k], model_rel);
        }
        std::fs::write(out.path(&format!("probs/{name}.csv"))?, csv).map_err(|e| stage(e.into()))?;

        let mut report = MetricReport::evaluate(&probs, &test_targets, cfg.metrics.ece_bins).map_err(stage)?;
        let (ndcg, recall) = ranking(&probs).map_err(stage)?;
        report.ndcg_at_k = Some(ndcg);
        report.recall_at_k = Some(recall);
        let ece_vs_rho = match &test_rho {
            Some(rho) => Some(crate::metrics::ece(&probs, rho, cfg.metrics.ece_bins).map_err(stage)?),
            None => None,
        };
        write_json(&out.path(&format!("metrics/{name}.json"))?, &report).map_err(stage)?;

        let table = reliability(&probs, &test_targets, cfg.metrics.diagram_bins).map_err(stage)?;
        table.write_csv(&out.path(&format!("reliability/{name}.csv"))?).map_err(stage)?;
        std::fs::write(out.path(&format!("reliability/{name}.svg"))?, table.to_svg(&name))
            .map_err(|e| stage(e.into()))?;
        if cfg.metrics.two_sided {
            table
                .two_sided()
                .write_csv(&out.path(&format!("reliability/{name}_two_sided.csv"))?)
                .map_err(stage)?;
        }

        let monotone = match &model {
            CalibratorModel::Parametric(p) => check_monotone(p, range.min, range.max),
            CalibratorModel::Binned(_) => true,
        };
        rows.push(SummaryRow {
            family,
            loss,
            metrics: report,
            ece_vs_rho,
            fit,
            monotone,
        });
    }

    std::fs::write(out.path("summary.csv")?, summary_csv(&rows, &cfg.metrics.ks))
        .map_err(|e| Error::from(e).at_stage("report"))?;
    let dist = report_score_distributions(
        &validation_scores,
        &validation.records().iter().map(|r| r.label).collect::<Vec<_>>(),
        DEFAULT_HISTOGRAM_BINS,
    )
    .map_err(|e| e.at_stage("report"))?;
    let (summary_path, hist_path) = (out.path("report/score_summary.csv")?, out.path("report/score_histogram.csv")?);
    dist.write(&summary_path, &hist_path).map_err(|e| e.at_stage("report"))?;

    out.write_manifest(serde_json::json!({
        "test_scores_sha256_before_fit": test_hash_before,
        "test_scores_sha256_after_fit": sha256_of_scores(&test_scores),
    }))
    .map_err(|e| e.at_stage("report"))?;

    Ok(PipelineOutcome {
        rows,
        raw_ndcg,
        raw_recall,
        output_dir: cfg.output_dir.clone(),
    })
}

fn prepare(cfg: &PipelineConfig, out: &mut Artifacts) -> Result<Prepared> {
    let data_stage = |e: Error| e.at_stage("data");
    let (full_train, test, world, ids) = match &cfg.data {
        DataSource::Synthetic { world: wcfg } => {
            let world = generate_world(wcfg, stage_seed(cfg.seed, 1)).map_err(data_stage)?;
            let sample = sample_world(&world, stage_seed(cfg.seed, 2)).map_err(data_stage)?;
            out.path("data/rho.csv")?;
            out.path("data/omega.csv")?;
            world.write_ground_truth(&out.root.join("data")).map_err(data_stage)?;
            (sample.train, sample.test, Some(world), None)
        }
        DataSource::Files {
            train,
            test,
            format,
            label_mode,
        } => {
            let mut ids = IdMap::new();
            let fmt = |p: &Path| format.unwrap_or_else(|| FileFormat::from_path(p));
            let tr = load_interactions(train, fmt(train), *label_mode, Role::Train, &mut ids)
                .map_err(data_stage)?;
            let te = load_interactions(test, fmt(test), *label_mode, Role::TestUnbiased, &mut ids)
                .map_err(data_stage)?;
            let (nu, ni) = (ids.num_users(), ids.num_items());
            let tr = tr.with_dimensions(nu, ni).map_err(data_stage)?;
            let te = te.with_dimensions(nu, ni).map_err(data_stage)?;
            ids.save(&out.path("data/idmap.json")?).map_err(data_stage)?;
            (tr, te, None, Some(ids))
        }
    };
    let split = SplitConfig {
        validation_fraction: cfg.validation_fraction,
        seed: stage_seed(cfg.seed, 3),
    };
    let (train, validation) = split_train_validation(&full_train, &split).map_err(data_stage)?;
    for (name, ds) in [("train", &train), ("validation", &validation), ("test", &test)] {
        write_interactions(ds, &out.path(&format!("data/{name}.csv"))?, FileFormat::Csv, ids.as_ref())
            .map_err(data_stage)?;
    }

    let prop_stage = |e: Error| e.at_stage("propensity");
    let propensities = match cfg.propensity.source {
        PropensitySource::Popularity => {
            let raw = estimate_popularity(&train, cfg.propensity.exponent).map_err(prop_stage)?;
            clip(&raw, cfg.propensity.floor).map_err(prop_stage)?
        }
        PropensitySource::True => {
            let w = world.as_ref().expect("validated: synthetic data");
            PropensityTable::from_values(w.omega.clone()).map_err(prop_stage)?
        }
    };
    propensities.write_csv(&out.path("propensity.csv")?).map_err(prop_stage)?;

    let score_stage = |e: Error| e.at_stage("score");
    let mut pairs = validation.pairs();
    pairs.extend(test.pairs());
    let table = match cfg.scores {
        ScoreSource::Ranker => {
            let rcfg = TrainConfig {
                seed: stage_seed(cfg.seed, 4),
                ..cfg.ranker
            };
            let model = train_bpr(&train, &rcfg).map_err(|e| e.at_stage("train"))?;
            model.save(&out.path("ranker/model.json")?).map_err(|e| e.at_stage("train"))?;
            score_all(&model, &pairs).map_err(score_stage)?
        }
        ScoreSource::World => {
            let w = world.as_ref().expect("validated: synthetic data");
            let entries = pairs
                .iter()
                .map(|&(user, item)| ScoreEntry {
                    user,
                    item,
                    score: w.scores[w.index(user, item)],
                })
                .collect();
            ScoreTable::new(entries).map_err(score_stage)?
        }
    };
    let validation_scores = table.scores_for(&validation).map_err(score_stage)?;
    let test_scores = table.scores_for(&test).map_err(score_stage)?;
    write_scores(&validation, &validation_scores, &out.path("scores/validation.csv")?).map_err(score_stage)?;
    write_scores(&test, &test_scores, &out.path("scores/test.csv")?).map_err(score_stage)?;

    Ok(Prepared {
        validation,
        test,
        propensities,
        world,
        validation_scores,
        test_scores,
    })
}

fn write_scores(ds: &InteractionDataset, scores: &[f64], path: &Path) -> Result<()> {
    let entries = ds
        .records()
        .iter()
        .zip(scores)
        .map(|(r, &score)| ScoreEntry {
            user: r.user,
            item: r.item,
            score,
        })
        .collect();
    ScoreTable::new(entries)?.write_csv(path)
}

fn summary_csv(rows: &[SummaryRow], ks: &[usize]) -> String {
    let mut out = String::from("family,loss,ece,mce,nll,ece_vs_rho");
    for k in ks {
        let _ = write!(out, ",ndcg@{k}");
    }
    for k in ks {
        let _ = write!(out, ",recall@{k}");
    }
    out.push_str(",risk,iterations,converged,monotone\n");
    for r in rows {
        let m = &r.metrics;
        let _ = write!(
            out,
            "{},{},{},{},{},{}",
            r.family.name(),
            r.loss.name(),
            m.ece,
            m.mce,
            m.nll,
            r.ece_vs_rho.map(|v| v.to_string()).unwrap_or_default()
        );
        for map in [&m.ndcg_at_k, &m.recall_at_k] {
            for k in ks {
                let v = map.as_ref().and_then(|m| m.get(k)).map(|v| v.to_string()).unwrap_or_default();
                let _ = write!(out, ",{v}");
            }
        }
        match &r.fit {
            Some(f) => {
                let _ = write!(out, ",{},{},{}", f.final_risk, f.iterations, f.converged);
            }
            None => out.push_str(",,,"),
        }
        let _ = writeln!(out, ",{}", r.monotone);
    }
    out
}
