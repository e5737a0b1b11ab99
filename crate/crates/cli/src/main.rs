//! `rankcal` command-line driver.
//!
//! Log verbosity follows `RUST_LOG` (default `info`).

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use rankcal::calibrators::{CalibratorModel, Family, ScoreRange};
use rankcal::dataset::{
    load_interactions, split_train_validation, write_interactions, FileFormat, IdMap, InteractionDataset,
    LabelMode, Role, ScoreEntry, ScoreTable, SplitConfig,
};
use rankcal::fitting::{fit_calibrator, CalibrationData, FitOptions, LossKind, LossSpec};
use rankcal::metrics::{group_by_user, ndcg_recall, reliability, MetricReport};
use rankcal::pipeline::{run_pipeline, PipelineConfig};
use rankcal::propensity::{clip, estimate_popularity, PropensityTable};
use rankcal::ranker::{score_all, train_bpr, MFModel, TrainConfig};
use rankcal::report::report_score_distributions;
use rankcal::synthetic::{generate_world, sample_world, scores_from_world, SyntheticConfig};

#[derive(Parser)]
#[command(name = "rankcal", version, about = "Calibrate personalized ranking scores")]
struct Cli {
    /// JSON configuration for the subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed overriding the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct LabelArgs {
    /// Interaction file (`user,item,value`) providing labels.
    #[arg(long)]
    labels: PathBuf,
    /// Id map written by `train`; without it ids must be non-negative integers.
    #[arg(long)]
    idmap: Option<PathBuf>,
    /// Treat values as ratings with this positive threshold instead of 0/1 labels.
    #[arg(long)]
    rating_threshold: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic world and one sample of it.
    Simulate,
    /// Split a training file and train the BPR ranker on it.
    Train {
        #[arg(long)]
        train: PathBuf,
        #[arg(long, default_value_t = 0.1)]
        validation_fraction: f64,
        #[arg(long)]
        idmap: Option<PathBuf>,
        #[arg(long)]
        rating_threshold: Option<f64>,
        #[arg(long, default_value_t = rankcal::propensity::DEFAULT_EXPONENT)]
        propensity_exponent: f64,
        #[arg(long, default_value_t = rankcal::propensity::DEFAULT_FLOOR)]
        propensity_floor: f64,
    },
    /// Score every pair of an interaction file with a trained ranker.
    Score {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        idmap: Option<PathBuf>,
    },
    /// Fit one calibrator on scored validation pairs.
    Calibrate {
        #[arg(long)]
        scores: PathBuf,
        #[command(flatten)]
        labels: LabelArgs,
        #[arg(long, default_value = "gaussian")]
        family: Family,
        #[arg(long, default_value = "naive")]
        loss: LossKind,
        /// `item,propensity` table, required for the uerm loss.
        #[arg(long)]
        propensity: Option<PathBuf>,
        /// Lower end of the monotonicity range (defaults to the data minimum).
        #[arg(long, allow_negative_numbers = true)]
        range_min: Option<f64>,
        #[arg(long, allow_negative_numbers = true)]
        range_max: Option<f64>,
    },
    /// Apply a calibrator to scored test pairs and compute metrics.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        scores: PathBuf,
        #[command(flatten)]
        labels: LabelArgs,
        #[arg(long, default_value_t = 15)]
        bins: usize,
        #[arg(long, default_value_t = 10)]
        diagram_bins: usize,
        #[arg(long, value_delimiter = ',', default_value = "1,3,5")]
        ks: Vec<usize>,
    },
    /// Summarize class-conditional score distributions.
    Report {
        #[arg(long)]
        scores: PathBuf,
        #[command(flatten)]
        labels: LabelArgs,
        #[arg(long, default_value_t = rankcal::report::DEFAULT_HISTOGRAM_BINS)]
        bins: usize,
    },
    /// Run the whole evaluation protocol from one configuration.
    Pipeline,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate => simulate(cli.config.as_deref(), cli.seed.unwrap_or(0), &cli.out),
        Command::Train {
            train,
            validation_fraction,
            idmap,
            rating_threshold,
            propensity_exponent,
            propensity_floor,
        } => {
            let mut cfg: TrainConfig = read_config(cli.config.as_deref())?;
            if let Some(seed) = cli.seed {
                cfg.seed = seed;
            }
            fs::create_dir_all(&cli.out)?;
            let mode = label_mode(rating_threshold);
            let mut ids = id_map(idmap.as_deref(), &[&train])?;
            let full = load_interactions(&train, FileFormat::from_path(&train), mode, Role::Train, &mut ids)?;
            let split = SplitConfig {
                validation_fraction,
                seed: cfg.seed,
            };
            let (tr, val) = split_train_validation(&full, &split)?;
            let model = train_bpr(&tr, &cfg)?;
            model.save(&cli.out.join("model.json"))?;
            ids.save(&cli.out.join("idmap.json"))?;
            write_interactions(&tr, &cli.out.join("train.csv"), FileFormat::Csv, Some(&ids))?;
            write_interactions(&val, &cli.out.join("validation.csv"), FileFormat::Csv, Some(&ids))?;
            let table = clip(&estimate_popularity(&tr, propensity_exponent)?, propensity_floor)?;
            table.write_csv(&cli.out.join("propensity.csv"))?;
            log::info!("trained on {} records, held out {} for validation", tr.len(), val.len());
            Ok(())
        }
        Command::Score { model, pairs, idmap } => {
            let model = MFModel::load(&model)?;
            let mut ids = id_map(idmap.as_deref(), &[&pairs])?;
            // Only the pairs matter here, so accept any value column.
            let any_value = LabelMode::Rating { threshold: f64::INFINITY };
            let ds = load_interactions(&pairs, FileFormat::from_path(&pairs), any_value, Role::TestUnbiased, &mut ids)?;
            let table = score_all(&model, &ds.pairs())?;
            fs::create_dir_all(&cli.out)?;
            table.write_csv(&cli.out.join("scores.csv"))?;
            Ok(())
        }
        Command::Calibrate {
            scores,
            labels,
            family,
            loss,
            propensity,
            range_min,
            range_max,
        } => {
            let (table, ds) = scored_labels(&scores, &labels)?;
            let s = table.scores_for(&ds)?;
            let data = CalibrationData::new(
                s.clone(),
                ds.records().iter().map(|r| r.label).collect(),
                ds.records().iter().map(|r| r.item).collect(),
            )?;
            let spec = match loss {
                LossKind::Naive => LossSpec::naive(),
                LossKind::Uerm => {
                    let path = propensity.context("--propensity is required for the uerm loss")?;
                    LossSpec::uerm(PropensityTable::read_csv(&path)?)
                }
                LossKind::Ideal => bail!("the ideal loss needs true preferences; use `pipeline` on synthetic data"),
            };
            let observed = ScoreRange::of(&s)?;
            let range = ScoreRange::new(
                range_min.unwrap_or(observed.min),
                range_max.unwrap_or(observed.max),
            )?;
            let opts = FitOptions {
                range: Some(range),
                ..FitOptions::default()
            };
            let (model, fit) = fit_calibrator(family, &data, &spec, &opts)?;
            fs::create_dir_all(&cli.out)?;
            let name = format!("{}_{}", family.name(), loss.name());
            write_pretty(&cli.out.join(format!("{name}.json")), &model)?;
            if let Some(fit) = fit {
                fit.write_trace_csv(&cli.out.join(format!("{name}_fitlog.csv")))?;
                write_pretty(&cli.out.join(format!("{name}_fit.json")), &fit)?;
                if !fit.converged {
                    log::warn!("{name}: optimizer stopped after {} iterations without converging", fit.iterations);
                }
            }
            Ok(())
        }
        Command::Evaluate {
            model,
            scores,
            labels,
            bins,
            diagram_bins,
            ks,
        } => {
            let model: CalibratorModel = serde_json::from_str(&fs::read_to_string(&model)?)
                .with_context(|| format!("reading calibrator {}", model.display()))?;
            let (table, ds) = scored_labels(&scores, &labels)?;
            let s = table.scores_for(&ds)?;
            let probs = model.transform_all(&s);
            let y: Vec<bool> = ds.records().iter().map(|r| r.label).collect();
            let targets: Vec<f64> = y.iter().map(|&v| f64::from(u8::from(v))).collect();
            let mut report = MetricReport::evaluate(&probs, &targets, bins)?;
            let users: Vec<u32> = ds.records().iter().map(|r| r.user).collect();
            let items: Vec<u32> = ds.records().iter().map(|r| r.item).collect();
            let (ndcg, recall) = ndcg_recall(&group_by_user(&users, &items, &probs, &y)?, &ks)?;
            report.ndcg_at_k = Some(ndcg);
            report.recall_at_k = Some(recall);
            fs::create_dir_all(&cli.out)?;
            write_pretty(&cli.out.join("metrics.json"), &report)?;
            let rel = reliability(&probs, &targets, diagram_bins)?;
            rel.write_csv(&cli.out.join("reliability.csv"))?;
            fs::write(cli.out.join("reliability.svg"), rel.to_svg(model.family().name()))?;
            let entries: Vec<ScoreEntry> = ds
                .records()
                .iter()
                .zip(&probs)
                .map(|(r, &p)| ScoreEntry { user: r.user, item: r.item, score: p })
                .collect();
            ScoreTable::new(entries)?.write_csv(&cli.out.join("probs.csv"))?;
            println!("ece={} mce={} nll={}", report.ece, report.mce, report.nll);
            Ok(())
        }
        Command::Report { scores, labels, bins } => {
            let (table, ds) = scored_labels(&scores, &labels)?;
            let s = table.scores_for(&ds)?;
            let y: Vec<bool> = ds.records().iter().map(|r| r.label).collect();
            let dist = report_score_distributions(&s, &y, bins)?;
            fs::create_dir_all(&cli.out)?;
            dist.write(&cli.out.join("score_summary.csv"), &cli.out.join("score_histogram.csv"))?;
            Ok(())
        }
        Command::Pipeline => {
            let mut cfg: PipelineConfig = read_config(cli.config.as_deref())?;
            if let Some(seed) = cli.seed {
                cfg.seed = seed;
            }
            cfg.output_dir = cli.out.clone();
            let outcome = run_pipeline(&cfg)?;
            for row in &outcome.rows {
                log::info!(
                    "{:>9} {:>5}: ece {:.5} mce {:.5} nll {:.5}",
                    row.family.name(),
                    row.loss.name(),
                    row.metrics.ece,
                    row.metrics.mce,
                    row.metrics.nll
                );
            }
            println!("{}", cli.out.join("summary.csv").display());
            Ok(())
        }
    }
}

fn simulate(config: Option<&Path>, seed: u64, out: &Path) -> Result<()> {
    let cfg: SyntheticConfig = read_config(config)?;
    let world = generate_world(&cfg, seed)?;
    let sample = sample_world(&world, seed.wrapping_add(1))?;
    fs::create_dir_all(out)?;
    write_interactions(&sample.train, &out.join("train.csv"), FileFormat::Csv, None)?;
    write_interactions(&sample.test, &out.join("test.csv"), FileFormat::Csv, None)?;
    world.write_ground_truth(out)?;
    scores_from_world(&world)?.write_csv(&out.join("scores.csv"))?;
    write_pretty(&out.join("world_config.json"), &cfg)?;
    log::info!(
        "{} users x {} items: {} train clicks, {} test positives",
        cfg.num_users,
        cfg.num_items,
        sample.train.num_positives(),
        sample.test.num_positives()
    );
    Ok(())
}

fn read_config<T: serde::de::DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))
        }
    }
}

fn write_pretty<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn label_mode(threshold: Option<f64>) -> LabelMode {
    match threshold {
        Some(threshold) => LabelMode::Rating { threshold },
        None => LabelMode::Binary,
    }
}

/// Loads `path`, or builds an identity map when every id in `files` is an integer.
fn id_map(path: Option<&Path>, files: &[&Path]) -> Result<IdMap> {
    if let Some(p) = path {
        return Ok(IdMap::load(p)?);
    }
    let (mut users, mut items) = (0u32, 0u32);
    for f in files {
        let mut reader = csv::ReaderBuilder::new()
            .delimiter(if FileFormat::from_path(f) == FileFormat::Tsv { b'\t' } else { b',' })
            .trim(csv::Trim::All)
            .from_path(f)
            .with_context(|| format!("opening {}", f.display()))?;
        for row in reader.records() {
            let row = row?;
            let parse = |k: usize| row.get(k).and_then(|v| v.parse::<u32>().ok());
            match (parse(0), parse(1)) {
                (Some(u), Some(i)) => {
                    users = users.max(u + 1);
                    items = items.max(i + 1);
                }
                _ => {
                    log::info!("{} has non-integer ids; assigning dense ids in file order", f.display());
                    return Ok(IdMap::new());
                }
            }
        }
    }
    Ok(IdMap::identity(users, items))
}

fn scored_labels(scores: &Path, labels: &LabelArgs) -> Result<(ScoreTable, InteractionDataset)> {
    let table = ScoreTable::read_csv(scores)?;
    let mut ids = id_map(labels.idmap.as_deref(), &[&labels.labels])?;
    let ds = load_interactions(
        &labels.labels,
        FileFormat::from_path(&labels.labels),
        label_mode(labels.rating_threshold),
        Role::Validation,
        &mut ids,
    )?;
    Ok((table, ds))
}
