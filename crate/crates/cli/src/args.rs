//! Command-line flags. Every flag maps onto one configuration key; the
//! same keys may come from a `--config` file, which flags override.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use stsm_core::kv::{fmt_f64, KvDoc};

#[derive(Debug, Parser)]
#[command(name = "stsmamba", version, about = "Sparse deformable Mamba land-cover classifier")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic patch dataset.
    Generate(GenerateArgs),
    /// Train a model on a dataset.
    Train(TrainArgs),
    /// Score a checkpoint on one dataset split.
    Eval(EvalArgs),
    /// Train and score the 3x3 temporal/spectral sparsity grid.
    Ablate(AblateArgs),
    /// Classify every interior pixel of a scene and write a palette image.
    PredictMap(PredictMapArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Generate(_) => "generate",
            Command::Train(_) => "train",
            Command::Eval(_) => "eval",
            Command::Ablate(_) => "ablate",
            Command::PredictMap(_) => "predict-map",
        }
    }
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Key-value configuration file; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SceneArgs {
    #[arg(long)]
    pub scene_height: Option<usize>,
    #[arg(long)]
    pub scene_width: Option<usize>,
    #[arg(long)]
    pub scene_time_steps: Option<usize>,
    #[arg(long)]
    pub noise_level: Option<f64>,
    #[arg(long)]
    pub mixing_width: Option<usize>,
    #[arg(long)]
    pub region_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub scene: SceneArgs,
    /// Samples per class in every split.
    #[arg(long)]
    pub per_class: Option<usize>,
    #[arg(long)]
    pub train_per_class: Option<usize>,
    #[arg(long)]
    pub val_per_class: Option<usize>,
    #[arg(long)]
    pub test_per_class: Option<usize>,
    #[arg(long)]
    pub patch: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long)]
    pub time_steps: Option<usize>,
    #[arg(long)]
    pub channels: Option<usize>,
    #[arg(long)]
    pub stem_features: Option<usize>,
    #[arg(long)]
    pub height: Option<usize>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    #[arg(long)]
    pub state_dim: Option<usize>,
    #[arg(long)]
    pub conv_width: Option<usize>,
    #[arg(long)]
    pub expand: Option<usize>,
    #[arg(long)]
    pub lambda_temporal: Option<f64>,
    #[arg(long)]
    pub lambda_spectral: Option<f64>,
    #[arg(long)]
    pub lambda_spatial: Option<f64>,
    #[arg(long)]
    pub blocks: Option<usize>,
    #[arg(long)]
    pub num_classes: Option<usize>,
    #[arg(long)]
    pub score_scaling: Option<bool>,
}

#[derive(Debug, Args)]
pub struct TrainLoopArgs {
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Seed for the batch shuffles; defaults to --seed.
    #[arg(long)]
    pub train_seed: Option<u64>,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    #[arg(long)]
    pub micro_batch: Option<usize>,
    #[arg(long)]
    pub target_val_oa: Option<f64>,
    #[arg(long)]
    pub patience: Option<usize>,
    /// Wall-clock training budget in seconds; runs that hit it are not reproducible.
    #[arg(long)]
    pub max_seconds: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Dataset directory.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub train: TrainLoopArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// train, val or test.
    #[arg(long)]
    pub split: Option<String>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Comma-separated sparsity ratios shared by both grid axes.
    #[arg(long)]
    pub ratios: Option<String>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub train: TrainLoopArgs,
}

#[derive(Debug, Args)]
pub struct PredictMapArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Dataset whose scene settings are the starting point.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[command(flatten)]
    pub scene: SceneArgs,
}

fn put<T: ToString>(doc: &mut KvDoc, key: &str, v: Option<T>) {
    if let Some(v) = v {
        doc.set(key, v.to_string());
    }
}

fn put_f64(doc: &mut KvDoc, key: &str, v: Option<f64>) {
    put(doc, key, v.map(fmt_f64));
}

fn put_path(doc: &mut KvDoc, key: &str, v: &Option<PathBuf>) {
    put(doc, key, v.as_ref().map(|p| p.display().to_string()));
}

impl CommonArgs {
    fn write(&self, doc: &mut KvDoc) {
        put(doc, "seed", self.seed);
        put_path(doc, "paths.out", &self.out);
    }
}

impl SceneArgs {
    fn write(&self, doc: &mut KvDoc) {
        put(doc, "data.scene.height", self.scene_height);
        put(doc, "data.scene.width", self.scene_width);
        put(doc, "data.scene.time_steps", self.scene_time_steps);
        put_f64(doc, "data.scene.noise_level", self.noise_level);
        put(doc, "data.scene.mixing_width", self.mixing_width);
        put(doc, "data.scene.region_size", self.region_size);
    }
}

impl ModelArgs {
    fn write(&self, doc: &mut KvDoc) {
        put(doc, "model.time_steps", self.time_steps);
        put(doc, "model.channels", self.channels);
        put(doc, "model.stem_features", self.stem_features);
        put(doc, "model.height", self.height);
        put(doc, "model.width", self.width);
        put(doc, "model.hidden_dim", self.hidden_dim);
        put(doc, "model.state_dim", self.state_dim);
        put(doc, "model.conv_width", self.conv_width);
        put(doc, "model.expand", self.expand);
        put_f64(doc, "model.lambda_temporal", self.lambda_temporal);
        put_f64(doc, "model.lambda_spectral", self.lambda_spectral);
        put_f64(doc, "model.lambda_spatial", self.lambda_spatial);
        put(doc, "model.blocks", self.blocks);
        put(doc, "model.num_classes", self.num_classes);
        put(doc, "model.score_scaling", self.score_scaling);
    }
}

impl TrainLoopArgs {
    fn write(&self, doc: &mut KvDoc) {
        put(doc, "train.batch_size", self.batch_size);
        put(doc, "train.epochs", self.epochs);
        put_f64(doc, "train.learning_rate", self.learning_rate);
        put(doc, "train.seed", self.train_seed);
        put(doc, "train.checkpoint_every", self.checkpoint_every);
        put(doc, "train.micro_batch", self.micro_batch);
        put_f64(doc, "train.target_val_oa", self.target_val_oa);
        put(doc, "train.patience", self.patience);
        put_f64(doc, "train.max_seconds", self.max_seconds);
    }
}

impl Command {
    pub fn common(&self) -> &CommonArgs {
        match self {
            Command::Generate(a) => &a.common,
            Command::Train(a) => &a.common,
            Command::Eval(a) => &a.common,
            Command::Ablate(a) => &a.common,
            Command::PredictMap(a) => &a.common,
        }
    }

    /// Configuration keys set on the command line.
    pub fn flag_overrides(&self) -> KvDoc {
        let mut doc = KvDoc::new();
        self.common().write(&mut doc);
        match self {
            Command::Generate(a) => {
                a.scene.write(&mut doc);
                for key in ["data.counts.train", "data.counts.val", "data.counts.test"] {
                    put(&mut doc, key, a.per_class);
                }
                put(&mut doc, "data.counts.train", a.train_per_class);
                put(&mut doc, "data.counts.val", a.val_per_class);
                put(&mut doc, "data.counts.test", a.test_per_class);
                put(&mut doc, "data.patch", a.patch);
            }
            Command::Train(a) => {
                put_path(&mut doc, "paths.data", &a.data);
                a.model.write(&mut doc);
                a.train.write(&mut doc);
            }
            Command::Eval(a) => {
                put_path(&mut doc, "paths.data", &a.data);
                put_path(&mut doc, "paths.checkpoint", &a.checkpoint);
                put(&mut doc, "eval.split", a.split.clone());
            }
            Command::Ablate(a) => {
                put_path(&mut doc, "paths.data", &a.data);
                put(&mut doc, "ablate.ratios", a.ratios.clone());
                a.model.write(&mut doc);
                a.train.write(&mut doc);
            }
            Command::PredictMap(a) => {
                put_path(&mut doc, "paths.data", &a.data);
                put_path(&mut doc, "paths.checkpoint", &a.checkpoint);
                a.scene.write(&mut doc);
            }
        }
        doc
    }
}
