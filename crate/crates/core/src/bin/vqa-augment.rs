use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use vqa_augment::augment::{augment_manifest, AugmentationPlan};
use vqa_augment::dataset::{load_manifest, save_manifest, validate_rows, DatasetRow, Split, SplitSpec};
use vqa_augment::features::{synth_features, write_store, FeatureStore};
use vqa_augment::harness::{bias_report, evaluate, run_matrix, table_plans, type_count_table, AccuracyTable, TypeAccuracyTable};
use vqa_augment::model::{load_checkpoint, save_checkpoint, ModelConfig};
use vqa_augment::synthetic::{synthetic_corpus, SyntheticConfig};
use vqa_augment::text::{detect_embedding_dim, load_embeddings, EmbeddingTable};
use vqa_augment::training::{train_with, TrainConfig};
use vqa_augment::{Error, Result};

/// Data augmentation and ST-VQA training for multiple-choice VideoQA.
#[derive(Parser)]
#[command(name = "vqa-augment", version)]
struct Cli {
    /// Seed for augmentation, initialization and shuffling.
    #[arg(long, global = true, env = "VQA_SEED")]
    seed: Option<u64>,
    /// TOML config file; environment variables and flags override it.
    #[arg(long, global = true, env = "VQA_CONFIG")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a manifest against the row schema.
    Validate { manifest: PathBuf },
    /// Question-type counts and label-position bias.
    Stats(StatsArgs),
    /// Augment the train rows of a manifest.
    Augment(AugmentArgs),
    /// Write synthetic features for every clip in a manifest.
    SynthFeatures(SynthFeaturesArgs),
    /// Write a synthetic manifest, embedding table and feature store.
    SynthData(SynthDataArgs),
    /// Train a model and write its checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the test rows of a manifest.
    Eval(EvalArgs),
    /// Train and evaluate every augmentation row on every split.
    Matrix(MatrixArgs),
}

#[derive(Args)]
struct StatsArgs {
    manifest: PathBuf,
    /// Split files whose train rows are pooled for the bias report.
    #[arg(long = "split")]
    splits: Vec<PathBuf>,
}

#[derive(Args)]
struct AugmentArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    plan: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Directory for new flipped clips [default: the --features directory].
    #[arg(long)]
    features_out: Option<PathBuf>,
    /// Write the augmentation report as JSON.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct SynthFeaturesArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 8)]
    frames: usize,
    #[arg(long, default_value_t = 4096)]
    appearance_dim: usize,
    #[arg(long, default_value_t = 4096)]
    motion_dim: usize,
}

#[derive(Args)]
struct SynthDataArgs {
    /// Output directory; receives manifest.jsonl, embeddings.txt and features/.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 200)]
    rows: usize,
    #[arg(long, default_value_t = 0.25)]
    test_fraction: f64,
    #[arg(long, default_value_t = 30)]
    vocab_size: usize,
    #[arg(long, default_value_t = 8)]
    embed_dim: usize,
    #[arg(long, default_value_t = 4)]
    frames: usize,
    #[arg(long, default_value_t = 4)]
    appearance_dim: usize,
    #[arg(long, default_value_t = 4)]
    motion_dim: usize,
}

#[derive(Args)]
struct DataArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    features: PathBuf,
    /// Whitespace-separated `token v1 ... vE` file.
    #[arg(long)]
    embeddings: PathBuf,
}

#[derive(Args, Default)]
struct HyperArgs {
    #[arg(long, env = "VQA_LEARNING_RATE")]
    learning_rate: Option<f64>,
    #[arg(long, env = "VQA_BATCH_SIZE")]
    batch_size: Option<usize>,
    #[arg(long, env = "VQA_EPOCHS")]
    epochs: Option<usize>,
    #[arg(long, env = "VQA_BETA1")]
    beta1: Option<f64>,
    #[arg(long, env = "VQA_BETA2")]
    beta2: Option<f64>,
    #[arg(long, env = "VQA_EPSILON")]
    epsilon: Option<f64>,
    /// Encoder width H (each stacked LSTM has H/2 units).
    #[arg(long, env = "VQA_HIDDEN")]
    hidden: Option<usize>,
    /// Attention width h.
    #[arg(long, env = "VQA_ATTN_HIDDEN")]
    attn_hidden: Option<usize>,
    /// Frame cap; 0 keeps every frame.
    #[arg(long, env = "VQA_MAX_FRAMES")]
    max_frames: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    hyper: HyperArgs,
    /// Augmentation plan applied to the train rows before training.
    #[arg(long)]
    plan: Option<PathBuf>,
    /// Checkpoint written with the best-epoch parameters.
    #[arg(long)]
    checkpoint: PathBuf,
    /// JSONL metrics log, one record appended per epoch.
    #[arg(long)]
    metrics: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 0)]
    max_frames: usize,
    #[arg(long, default_value_t = 0)]
    split_index: usize,
    /// Write the report as JSON.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct MatrixArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    hyper: HyperArgs,
    /// Split files (JSON with split_index, train_ids, test_ids); up to three.
    #[arg(long = "split")]
    splits: Vec<PathBuf>,
    /// Without --split, draw this many seeded random splits.
    #[arg(long, default_value_t = 3)]
    auto_splits: usize,
    #[arg(long, default_value_t = 0.25)]
    test_fraction: f64,
    /// Resampled copies per row in the resampling rows.
    #[arg(long, default_value_t = 1)]
    copies: usize,
    /// Output directory for table2/table3 text and CSV and matrix.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    seed: Option<u64>,
    train: FileTrain,
    model: FileModel,
}

#[derive(Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct FileTrain {
    learning_rate: Option<f64>,
    batch_size: Option<usize>,
    epochs: Option<usize>,
    beta1: Option<f64>,
    beta2: Option<f64>,
    epsilon: Option<f64>,
}

#[derive(Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct FileModel {
    hidden: Option<usize>,
    attn_hidden: Option<usize>,
    max_frames: Option<usize>,
}

struct Settings {
    seed: Option<u64>,
    file: FileConfig,
}

impl Settings {
    fn load(cli: &Cli) -> Result<Self> {
        let file = match &cli.config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
            }
            None => FileConfig::default(),
        };
        Ok(Self { seed: cli.seed, file })
    }

    fn seed(&self) -> Option<u64> {
        self.seed.or(self.file.seed)
    }

    fn train_config(&self, h: &HyperArgs) -> TrainConfig {
        let d = TrainConfig::default();
        let f = &self.file.train;
        TrainConfig {
            learning_rate: h.learning_rate.or(f.learning_rate).unwrap_or(d.learning_rate),
            batch_size: h.batch_size.or(f.batch_size).unwrap_or(d.batch_size),
            epochs: h.epochs.or(f.epochs).unwrap_or(d.epochs),
            seed: self.seed().unwrap_or(d.seed),
            beta1: h.beta1.or(f.beta1).unwrap_or(d.beta1),
            beta2: h.beta2.or(f.beta2).unwrap_or(d.beta2),
            epsilon: h.epsilon.or(f.epsilon).unwrap_or(d.epsilon),
        }
    }

    fn model_config(&self, h: &HyperArgs, table: &EmbeddingTable, store: &FeatureStore) -> Result<ModelConfig> {
        let d = ModelConfig::reference();
        let f = &self.file.model;
        let (da, dm) = store
            .dims()
            .ok_or_else(|| Error::Config("feature store is empty".into()))?;
        let cfg = ModelConfig {
            embed_dim: table.dim(),
            video_dim: da + dm,
            hidden: h.hidden.or(f.hidden).unwrap_or(d.hidden),
            attn_hidden: h.attn_hidden.or(f.attn_hidden).unwrap_or(d.attn_hidden),
            max_frames: h.max_frames.or(f.max_frames).unwrap_or(d.max_frames),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

struct Data {
    rows: Vec<DatasetRow>,
    store: FeatureStore,
    table: EmbeddingTable,
}

fn load_data(a: &DataArgs) -> Result<Data> {
    let rows = load_manifest(&a.manifest)?;
    let store = FeatureStore::open(&a.features)?;
    let table = load_embeddings(&a.embeddings, detect_embedding_dim(&a.embeddings)?)?;
    Ok(Data { rows, store, table })
}

fn load_plan(path: &Path, seed: Option<u64>) -> Result<AugmentationPlan> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let plan = AugmentationPlan::from_toml(&text)?;
    Ok(match seed {
        Some(s) => plan.with_seed(s),
        None => plan,
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn to_json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("report serializes") + "\n"
}

fn run(cli: Cli) -> Result<()> {
    let settings = Settings::load(&cli)?;
    match cli.command {
        Command::Validate { manifest } => {
            let rows = load_manifest(&manifest)?;
            validate_rows(&rows)?;
            println!("{}: {} rows ok", manifest.display(), rows.len());
        }
        Command::Stats(a) => {
            let rows = load_manifest(&a.manifest)?;
            validate_rows(&rows)?;
            let test: Vec<DatasetRow> = rows.iter().filter(|r| r.split == Split::Test).cloned().collect();
            println!("all rows\n{}", type_count_table(&rows));
            if !test.is_empty() {
                println!("test rows\n{}", type_count_table(&test));
            }
            let train = if a.splits.is_empty() {
                rows.iter().filter(|r| r.split == Split::Train).cloned().collect()
            } else {
                let mut pooled = Vec::new();
                for path in &a.splits {
                    pooled.extend(SplitSpec::load(path)?.apply(&rows)?.0);
                }
                pooled
            };
            println!("label positions over {} train rows\n{}", train.len(), bias_report(&train).to_text());
        }
        Command::Augment(a) => {
            let rows = load_manifest(&a.manifest)?;
            let plan = load_plan(&a.plan, settings.seed())?;
            let store = FeatureStore::open(&a.features)?.with_flip_seed(plan.seed);
            let out = augment_manifest(&rows, &store, &plan)?;
            save_manifest(&a.out, &out.rows)?;
            let dir = a.features_out.as_ref().unwrap_or(&a.features);
            let written = write_store(dir, &out.new_clips)?;
            if let Some(path) = &a.report {
                write_text(path, &to_json(&out.report))?;
            }
            println!(
                "{} -> {} rows; {written} flipped clips written to {}",
                rows.len(),
                out.rows.len(),
                dir.display()
            );
        }
        Command::SynthFeatures(a) => {
            let rows = load_manifest(&a.manifest)?;
            let seed = settings.seed().unwrap_or(0);
            let mut ids: Vec<&str> = rows.iter().map(|r| r.clip_id.as_str()).collect();
            ids.sort_unstable();
            ids.dedup();
            let clips: Vec<_> = ids
                .iter()
                .map(|id| synth_features(id, a.frames, (a.appearance_dim, a.motion_dim), seed))
                .collect();
            let n = write_store(&a.out, &clips)?;
            println!("{n} clips written to {}", a.out.display());
        }
        Command::SynthData(a) => {
            let cfg = SyntheticConfig {
                rows: a.rows,
                vocab_size: a.vocab_size,
                embed_dim: a.embed_dim,
                frames: a.frames,
                feature_dims: (a.appearance_dim, a.motion_dim),
                test_fraction: a.test_fraction,
                seed: settings.seed().unwrap_or(0),
                ..SyntheticConfig::default()
            };
            if cfg.vocab_size < 8 {
                return Err(Error::Config("vocab_size must be at least 8".into()));
            }
            let corpus = synthetic_corpus(&cfg)?;
            fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
            save_manifest(a.out.join("manifest.jsonl"), &corpus.rows)?;
            corpus.table.save(a.out.join("embeddings.txt"))?;
            let clips: Vec<_> = corpus
                .store
                .clip_ids()
                .iter()
                .map(|id| corpus.store.load_clip(id))
                .collect::<Result<_>>()?;
            write_store(a.out.join("features"), &clips)?;
            println!("{} rows written to {}", corpus.rows.len(), a.out.display());
        }
        Command::Train(a) => {
            let data = load_data(&a.data)?;
            let config = settings.train_config(&a.hyper);
            let model = settings.model_config(&a.hyper, &data.table, &data.store)?;
            let (mut train_rows, test_rows): (Vec<DatasetRow>, Vec<DatasetRow>) =
                data.rows.iter().cloned().partition(|r| r.split == Split::Train);
            let mut store = data.store.clone();
            if let Some(path) = &a.plan {
                let plan = load_plan(path, settings.seed())?;
                let store_in = data.store.clone().with_flip_seed(plan.seed);
                let aug = augment_manifest(&train_rows, &store_in, &plan)?;
                store = store_in.with_overlay(aug.new_clips)?;
                train_rows = aug.rows;
            }
            let mut log = match &a.metrics {
                Some(path) => Some(
                    OpenOptions::new()
                        .create(true)
                        .append(true)
                        .open(path)
                        .map_err(|e| Error::io(path, e))?,
                ),
                None => None,
            };
            let metrics_path = a.metrics.clone().unwrap_or_default();
            let outcome = train_with(&train_rows, &test_rows, &store, &data.table, &model, &config, |m| {
                println!(
                    "epoch {:>4}  loss {:.4}  train {:.2}%  test {}",
                    m.epoch,
                    m.train_loss,
                    100.0 * m.train_acc,
                    m.test_acc.map_or("-".into(), |t| format!("{:.2}%", 100.0 * t))
                );
                if let Some(f) = log.as_mut() {
                    let line = serde_json::to_string(m).expect("metrics serialize");
                    writeln!(f, "{line}").map_err(|e| Error::io(&metrics_path, e))?;
                }
                Ok(())
            });
            let outcome = match outcome {
                Err(Error::Diverged { epoch, step, what, last_good }) => {
                    save_checkpoint(&a.checkpoint, &last_good)?;
                    eprintln!("last good parameters saved to {}", a.checkpoint.display());
                    return Err(Error::Diverged { epoch, step, what, last_good });
                }
                other => other?,
            };
            save_checkpoint(&a.checkpoint, &outcome.params)?;
            println!(
                "best epoch {} -> {}",
                outcome.best_epoch.map_or("-".into(), |e| e.to_string()),
                a.checkpoint.display()
            );
        }
        Command::Eval(a) => {
            let data = load_data(&a.data)?;
            let params = load_checkpoint::<f32>(&a.checkpoint)?;
            let model = ModelConfig::from_params(&params, a.max_frames);
            params.validate(&model)?;
            let test: Vec<DatasetRow> = data.rows.iter().filter(|r| r.split == Split::Test).cloned().collect();
            let report = evaluate(&params, &test, &data.store, &data.table, &model, a.split_index)?;
            print!("{}", report.to_text());
            if let Some(path) = &a.report {
                write_text(path, &to_json(&report))?;
            }
        }
        Command::Matrix(a) => {
            let data = load_data(&a.data)?;
            let config = settings.train_config(&a.hyper);
            let model = settings.model_config(&a.hyper, &data.table, &data.store)?;
            let seed = settings.seed().unwrap_or(0);
            let splits: Vec<SplitSpec> = if a.splits.is_empty() {
                (0..a.auto_splits.min(3))
                    .map(|i| SplitSpec::random(i, &data.rows, a.test_fraction, seed))
                    .collect()
            } else {
                a.splits.iter().map(SplitSpec::load).collect::<Result<_>>()?
            };
            let plans = table_plans(a.copies, seed);
            let store = data.store.with_flip_seed(seed);
            let result = run_matrix(&data.rows, &splits, &plans, &store, &data.table, &model, &config)?;
            let t2 = AccuracyTable::from_matrix(&result);
            let t3 = TypeAccuracyTable::from_matrix(&result);
            fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
            write_text(&a.out.join("table2.txt"), &t2.to_text())?;
            write_text(&a.out.join("table2.csv"), &t2.to_csv())?;
            write_text(&a.out.join("table3.txt"), &t3.to_text())?;
            write_text(&a.out.join("table3.csv"), &t3.to_csv())?;
            write_text(&a.out.join("matrix.json"), &to_json(&result))?;
            print!("{}\n{}", t2.to_text(), t3.to_text());
            for cell in result.cells.iter().filter(|c| c.error.is_some()) {
                eprintln!(
                    "cell {} / split {} failed: {}",
                    cell.plan_label.trim(),
                    cell.split_index,
                    cell.error.as_deref().unwrap_or_default()
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

