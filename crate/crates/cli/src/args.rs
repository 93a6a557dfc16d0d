use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use stylenet::data::DatasetKind;
use stylenet::grid::ImageFormat;
use stylenet::train::{Precision, Preset, TrainConfig};

#[derive(Debug, Parser)]
#[command(name = "stylenet", version, about = "Train and probe a classifier with a style memory and a decoder")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum DatasetArg {
    Mnist,
    EmnistLetters,
}

impl From<DatasetArg> for DatasetKind {
    fn from(d: DatasetArg) -> Self {
        match d {
            DatasetArg::Mnist => DatasetKind::Mnist,
            DatasetArg::EmnistLetters => DatasetKind::EmnistLetters,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PresetArg {
    Paper,
    Desk,
}

impl From<PresetArg> for Preset {
    fn from(p: PresetArg) -> Self {
        match p {
            PresetArg::Paper => Preset::Paper,
            PresetArg::Desk => Preset::Desk,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Pgm,
    Png,
}

impl From<FormatArg> for ImageFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Pgm => ImageFormat::Pgm,
            FormatArg::Png => ImageFormat::Png,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PrecisionArg {
    Single,
    Double,
}

impl From<PrecisionArg> for Precision {
    fn from(p: PrecisionArg) -> Self {
        match p {
            PrecisionArg::Single => Precision::Single,
            PrecisionArg::Double => Precision::Double,
        }
    }
}

#[derive(Debug, Args)]
pub struct Global {
    /// Dataset to train on or probe.
    #[arg(long, global = true, value_enum, default_value = "mnist")]
    pub dataset: DatasetArg,
    /// Directory holding the IDX files (optionally gzipped).
    #[arg(long, global = true, default_value = "data")]
    pub data_dir: PathBuf,
    /// Checkpoint path [default: <out>/stylenet-<dataset>.ckpt].
    #[arg(long, global = true)]
    pub checkpoint: Option<PathBuf>,
    /// Output directory for logs, metrics and images.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Weight of the reconstruction loss.
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    /// Adam learning rate.
    #[arg(long, global = true)]
    pub lr: Option<f64>,
    #[arg(long, global = true)]
    pub epochs: Option<u32>,
    #[arg(long, global = true)]
    pub batch_size: Option<usize>,
    /// Standard deviation of the training input noise.
    #[arg(long, global = true)]
    pub sigma: Option<f64>,
    /// Hyperparameter preset; individual flags override it.
    #[arg(long, global = true, value_enum, default_value = "paper")]
    pub preset: PresetArg,
    #[arg(long, global = true, value_enum, default_value = "pgm")]
    pub format: FormatArg,
    /// Use only the first N test samples.
    #[arg(long, global = true)]
    pub test_limit: Option<usize>,
}

impl Global {
    pub fn kind(&self) -> DatasetKind {
        self.dataset.into()
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint
            .clone()
            .unwrap_or_else(|| self.out.join(format!("stylenet-{}.ckpt", self.kind().name())))
    }

    pub fn train_config(&self, precision: Precision) -> TrainConfig {
        let mut c = TrainConfig::for_preset(self.preset.into());
        c.seed = self.seed;
        c.precision = precision;
        if let Some(a) = self.alpha {
            c.alpha = a;
        }
        if let Some(lr) = self.lr {
            c.learning_rate = lr;
        }
        if let Some(e) = self.epochs {
            c.epochs = e;
        }
        if let Some(b) = self.batch_size {
            c.batch_size = b;
        }
        if let Some(s) = self.sigma {
            c.sigma = s;
        }
        c
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model, writing checkpoints and a per-epoch log.
    Train {
        /// Continue from the checkpoint if it exists.
        #[arg(long)]
        resume: bool,
        /// Save the checkpoint every N epochs (and always after the last).
        #[arg(long, default_value_t = 1)]
        checkpoint_every: u32,
        /// Also keep a numbered copy of every saved checkpoint.
        #[arg(long)]
        keep_snapshots: bool,
        /// Use only the first N training samples.
        #[arg(long)]
        train_limit: Option<usize>,
        #[arg(long, value_enum, default_value = "single")]
        precision: PrecisionArg,
    },
    /// Score the test set and write per-sample and summary metrics.
    Eval,
    /// Originals above their reconstructions.
    Reconstruct {
        /// Test-set indices [default: the first --count samples].
        #[arg(long, value_delimiter = ',')]
        indices: Vec<usize>,
        #[arg(long, default_value_t = 10)]
        count: usize,
    },
    /// Reconstructions with the predicted class vector and with the true
    /// one-hot label.
    Correct {
        /// Test-set indices [default: the first --count misclassified].
        #[arg(long, value_delimiter = ',')]
        indices: Vec<usize>,
        #[arg(long, default_value_t = 10)]
        count: usize,
    },
    /// Nearest neighbors of query samples in image space and style space.
    Neighbors {
        /// Query indices [default: --count indices drawn from the seed].
        #[arg(long, value_delimiter = ',')]
        queries: Vec<usize>,
        #[arg(long, default_value_t = 5)]
        count: usize,
        #[arg(short, long, default_value_t = 97)]
        k: usize,
    },
    /// Decode convex combinations of two style memories.
    Interpolate {
        /// First endpoint (weight lambda) [default: drawn from the seed].
        #[arg(long)]
        from: Option<usize>,
        /// Second endpoint [default: the next sample with the same label].
        #[arg(long)]
        to: Option<usize>,
        /// Class fed to the decoder [default: label of --from].
        #[arg(long)]
        class: Option<usize>,
        /// Mixing weights in [0, 1] [default: 0.1,0.2,...,1.0].
        #[arg(long, value_delimiter = ',')]
        lambdas: Vec<f64>,
    },
    /// Decode one sample's style memory under other class labels.
    Transfer {
        /// Source index [default: drawn from the seed].
        #[arg(long)]
        from: Option<usize>,
        /// Target classes [default: all].
        #[arg(long, value_delimiter = ',')]
        classes: Vec<usize>,
    },
}
