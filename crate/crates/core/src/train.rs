//! Joint training (`L_y + alpha * L_r`, batch mean) and evaluation.

use rand::Rng;

use crate::data::{inject_noise_with, noise_rng, BatchIterator, Dataset, NoiseRng};
use crate::error::{Error, Result};
use crate::model::{argmax, decode_batch, encode_batch, forward_backward, Arch, LossBreakdown, ModelParams, Objective};
use crate::optim::adam_step;
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    /// 250 epochs at learning rate 1e-5.
    Paper,
    /// 10 epochs at learning rate 1e-3.
    Desk,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::Paper => "paper",
            Preset::Desk => "desk",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "paper" => Some(Preset::Paper),
            "desk" => Some(Preset::Desk),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    Single,
    Double,
}

impl Precision {
    pub fn name(self) -> &'static str {
        match self {
            Precision::Single => "f32",
            Precision::Double => "f64",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "f32" => Some(Precision::Single),
            "f64" => Some(Precision::Double),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub alpha: f64,
    pub learning_rate: f64,
    pub epochs: u32,
    pub batch_size: usize,
    pub sigma: f64,
    pub seed: u64,
    pub precision: Precision,
    pub preset: Preset,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::paper()
    }
}

impl TrainConfig {
    pub fn paper() -> Self {
        Self {
            alpha: 0.05,
            learning_rate: 1e-5,
            epochs: 250,
            batch_size: 100,
            sigma: 0.1,
            seed: 0,
            precision: Precision::Single,
            preset: Preset::Paper,
        }
    }

    pub fn desk() -> Self {
        Self {
            learning_rate: 1e-3,
            epochs: 10,
            preset: Preset::Desk,
            ..Self::paper()
        }
    }

    pub fn for_preset(preset: Preset) -> Self {
        match preset {
            Preset::Paper => Self::paper(),
            Preset::Desk => Self::desk(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let problem = if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            Some(format!("alpha must be >= 0, got {}", self.alpha))
        } else if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            Some(format!("learning rate must be > 0, got {}", self.learning_rate))
        } else if self.epochs == 0 {
            Some("epochs must be >= 1".to_string())
        } else if self.batch_size == 0 {
            Some("batch size must be >= 1".to_string())
        } else if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            Some(format!("noise sigma must be >= 0, got {}", self.sigma))
        } else {
            None
        };
        match problem {
            Some(p) => Err(Error::InvalidArgument(p)),
            None => Ok(()),
        }
    }

    pub fn objective(&self) -> Objective {
        Objective::joint(self.alpha)
    }
}

/// A labelled mini-batch of clean images.
#[derive(Clone, Debug)]
pub struct Batch<T> {
    pub images: Tensor<T>,
    pub labels: Vec<usize>,
}

/// One Adam update on the batch-mean objective. Metrics are measured before
/// the update.
pub fn optimize_step<T: Real>(
    params: &mut ModelParams<T>,
    input: &Tensor<T>,
    target: &Tensor<T>,
    labels: &[usize],
    objective: &Objective,
) -> Result<LossBreakdown> {
    let (metrics, grads) = forward_backward(params, input, target, labels, objective)?;
    if !metrics.joint.is_finite() || grads.tensors.iter().any(|g| !g.all_finite()) {
        let norms = params
            .layer_norms()
            .iter()
            .map(|(n, v)| format!("{n}={v:.4e}"))
            .collect::<Vec<_>>()
            .join(" ");
        return Err(Error::NonFinite {
            step: params.step_count() + 1,
            diagnostics: format!(
                "L_y={} L_r={} joint={}; layer norms: {norms}",
                metrics.classifier, metrics.reconstruction, metrics.joint
            ),
        });
    }
    let (values, states) = params.adam_mut();
    for ((value, state), grad) in values.iter_mut().zip(states.iter_mut()).zip(&grads.tensors) {
        adam_step(value, grad, state)?;
    }
    Ok(metrics)
}

/// Injects input noise, then takes one [`optimize_step`] with the clean
/// images as reconstruction targets.
pub fn train_step<T: Real>(
    params: &mut ModelParams<T>,
    batch: &Batch<T>,
    config: &TrainConfig,
    rng: &mut impl Rng,
) -> Result<LossBreakdown> {
    if batch.labels.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let noisy = inject_noise_with(&batch.images, config.sigma, rng)?;
    optimize_step(params, &noisy, &batch.images, &batch.labels, &config.objective())
}

/// Averages over one epoch of training batches.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: u32,
    pub classifier: f64,
    pub reconstruction: f64,
    pub joint: f64,
    pub train_accuracy: f64,
}

/// Model parameters together with the training configuration and progress.
#[derive(Clone, Debug, PartialEq)]
pub struct Trainer<T = f32> {
    pub params: ModelParams<T>,
    pub config: TrainConfig,
    pub epochs_done: u32,
    pub dataset_id: String,
}

impl<T: Real> Trainer<T> {
    pub fn new(arch: Arch, config: TrainConfig, dataset_id: impl Into<String>) -> Result<Self> {
        config.validate()?;
        let params = ModelParams::init(arch, config.seed, config.learning_rate)?;
        Ok(Self {
            params,
            config,
            epochs_done: 0,
            dataset_id: dataset_id.into(),
        })
    }

    /// Generator for a given 1-based epoch: the configured seed on ChaCha
    /// stream `epoch` (stream 0 initializes the weights). Shuffling and
    /// noise for the epoch both draw from it, so resuming at any epoch
    /// boundary replays the exact same stream.
    pub fn epoch_rng(&self, epoch: u32) -> NoiseRng {
        let mut rng = noise_rng(self.config.seed);
        rng.set_stream(u64::from(epoch));
        rng
    }

    pub fn is_finished(&self) -> bool {
        self.epochs_done >= self.config.epochs
    }

    pub fn run_epoch(&mut self, train: &Dataset) -> Result<EpochMetrics> {
        self.run_epoch_with(train, |_, _| {})
    }

    /// Runs the next epoch, calling `progress(batch_index, num_batches)`
    /// after every step.
    pub fn run_epoch_with(&mut self, train: &Dataset, mut progress: impl FnMut(usize, usize)) -> Result<EpochMetrics> {
        if train.is_empty() {
            return Err(Error::InvalidArgument("training set is empty".into()));
        }
        if train.num_classes() != self.params.arch().num_classes {
            return Err(Error::InvalidArgument(format!(
                "dataset has {} classes, model has {}",
                train.num_classes(),
                self.params.arch().num_classes
            )));
        }
        let epoch = self.epochs_done + 1;
        let mut rng = self.epoch_rng(epoch);
        let batches = BatchIterator::new(train.len(), self.config.batch_size, &mut rng)?;
        let total = batches.num_batches();
        let (mut ly, mut lr, mut joint, mut correct) = (0.0, 0.0, 0.0, 0usize);
        for (i, indices) in batches.enumerate() {
            let (images, labels) = train.batch::<T>(&indices);
            let batch = Batch { images, labels };
            let m = train_step(&mut self.params, &batch, &self.config, &mut rng)?;
            let w = m.batch as f64;
            ly += m.classifier * w;
            lr += m.reconstruction * w;
            joint += m.joint * w;
            correct += m.correct;
            progress(i + 1, total);
        }
        self.epochs_done = epoch;
        let n = train.len() as f64;
        Ok(EpochMetrics {
            epoch,
            classifier: ly / n,
            reconstruction: lr / n,
            joint: joint / n,
            train_accuracy: correct as f64 / n,
        })
    }
}

/// Per-sample outcome of evaluating a dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleRecord {
    pub index: usize,
    pub label: usize,
    pub prediction: usize,
    pub confidence: f64,
    pub reconstruction_loss: f64,
    pub style: Vec<f64>,
}

impl SampleRecord {
    pub fn is_correct(&self) -> bool {
        self.label == self.prediction
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub mean_reconstruction: f64,
    pub records: Vec<SampleRecord>,
}

impl Evaluation {
    /// Builds the summary from records.
    pub fn from_records(records: Vec<SampleRecord>) -> Self {
        let n = records.len().max(1) as f64;
        let correct = records.iter().filter(|r| r.is_correct()).count();
        let mean_reconstruction = records.iter().map(|r| r.reconstruction_loss).sum::<f64>() / n;
        Self {
            accuracy: correct as f64 / n,
            mean_reconstruction,
            records,
        }
    }
}

const EVAL_CHUNK: usize = 250;

/// Classifies and reconstructs every sample from its clean image.
pub fn evaluate<T: Real>(params: &ModelParams<T>, dataset: &Dataset) -> Result<Evaluation> {
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("cannot evaluate an empty dataset".into()));
    }
    let mut records = Vec::with_capacity(dataset.len());
    let all: Vec<usize> = (0..dataset.len()).collect();
    for chunk in all.chunks(EVAL_CHUNK) {
        let (images, labels) = dataset.batch::<T>(chunk);
        let enc = encode_batch(params, &images)?;
        let dec = decode_batch(params, &enc.y, &enc.m)?;
        for (r, (&index, &label)) in chunk.iter().zip(&labels).enumerate() {
            let y = enc.y.row(r);
            let prediction = argmax(y);
            let lr = dec
                .output
                .row(r)
                .iter()
                .zip(images.row(r))
                .map(|(&a, &b)| {
                    let d = (a - b).to_f64().unwrap_or(f64::NAN);
                    d * d
                })
                .sum();
            records.push(SampleRecord {
                index,
                label,
                prediction,
                confidence: y[prediction].to_f64().unwrap_or(f64::NAN),
                reconstruction_loss: lr,
                style: enc.m.row(r).iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect(),
            });
        }
    }
    Ok(Evaluation::from_records(records))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{random_images, Slot};

    fn toy_dataset(n: usize, side: usize, classes: usize, seed: u64) -> Dataset {
        let mut rng = noise_rng(seed);
        let images = Tensor::from_fn(&[n, 1, side, side], |_| rng.gen::<f32>());
        let labels = (0..n).map(|i| i % classes).collect();
        Dataset::new(images, labels, classes, "toy").unwrap()
    }

    #[test]
    fn presets() {
        let p = TrainConfig::paper();
        assert_eq!((p.alpha, p.learning_rate, p.epochs, p.batch_size, p.sigma), (0.05, 1e-5, 250, 100, 0.1));
        let d = TrainConfig::desk();
        assert_eq!((d.alpha, d.learning_rate, d.epochs, d.batch_size), (0.05, 1e-3, 10, 100));
        assert_eq!(TrainConfig::default(), p);
    }

    #[test]
    fn config_validation() {
        let bad = [
            TrainConfig { alpha: -1.0, ..TrainConfig::desk() },
            TrainConfig { learning_rate: 0.0, ..TrainConfig::desk() },
            TrainConfig { epochs: 0, ..TrainConfig::desk() },
            TrainConfig { batch_size: 0, ..TrainConfig::desk() },
            TrainConfig { sigma: -0.5, ..TrainConfig::desk() },
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }

    #[test]
    fn train_step_updates_every_parameter_once() {
        let arch = Arch::tiny(3);
        let mut params = ModelParams::<f64>::init(arch, 1, 1e-3).unwrap();
        let before = params.clone();
        let batch = Batch {
            images: random_images(&arch, 4, &mut noise_rng(2)),
            labels: vec![0, 1, 2, 0],
        };
        let m = train_step(&mut params, &batch, &TrainConfig::desk(), &mut noise_rng(3)).unwrap();
        assert_eq!(m.batch, 4);
        assert!(m.joint.is_finite());
        for slot in Slot::ALL {
            assert_eq!(params.adam(slot).step_count, 1);
            if !slot.name().ends_with("bias") {
                assert_ne!(params.get(slot), before.get(slot), "{}", slot.name());
            }
        }
    }

    #[test]
    fn frozen_batch_loss_strictly_decreases() {
        let arch = Arch::standard(10);
        let mut params = ModelParams::<f32>::init(arch, 0, 1e-3).unwrap();
        let x = random_images::<f32>(&arch, 10, &mut noise_rng(5));
        let labels: Vec<usize> = (0..10).collect();
        let objective = TrainConfig::desk().objective();
        let mut prev = f64::INFINITY;
        for step in 0..50 {
            let m = optimize_step(&mut params, &x, &x, &labels, &objective).unwrap();
            assert!(m.joint < prev, "step {step}: {} after {prev}", m.joint);
            prev = m.joint;
        }
    }

    #[test]
    fn empty_batch_rejected() {
        let arch = Arch::tiny(3);
        let mut params = ModelParams::<f64>::init(arch, 1, 1e-3).unwrap();
        let batch = Batch {
            images: Tensor::zeros(&[1, 1, 8, 8]),
            labels: vec![],
        };
        assert!(train_step(&mut params, &batch, &TrainConfig::desk(), &mut noise_rng(3)).is_err());
    }

    #[test]
    fn non_finite_loss_aborts_with_layer_norms() {
        let arch = Arch::tiny(3);
        let mut params = ModelParams::<f64>::init(arch, 1, 1e-3).unwrap();
        params.get_mut(Slot::Fc1W).data_mut()[0] = f64::NAN;
        let x = random_images::<f64>(&arch, 2, &mut noise_rng(2));
        let err = optimize_step(&mut params, &x, &x, &[0, 1], &Objective::joint(0.05)).unwrap_err();
        assert_eq!(err.category(), "non-finite");
        assert!(err.to_string().contains("fc1.weight="), "{err}");
    }

    #[test]
    fn training_is_reproducible_and_resumable() {
        let arch = Arch::tiny(3);
        let data = toy_dataset(20, 8, 3, 5);
        let config = TrainConfig {
            epochs: 3,
            batch_size: 6,
            seed: 17,
            ..TrainConfig::desk()
        };
        let mut a = Trainer::<f64>::new(arch, config.clone(), data.id()).unwrap();
        let mut b = a.clone();
        for _ in 0..3 {
            a.run_epoch(&data).unwrap();
        }
        b.run_epoch(&data).unwrap();
        let mut resumed = b.clone();
        for _ in 0..2 {
            resumed.run_epoch(&data).unwrap();
        }
        assert_eq!(a, resumed);
        assert!(a.is_finished());
    }

    #[test]
    fn evaluation_accuracy_extremes_and_permutation_invariance() {
        let arch = Arch::tiny(3);
        let params = ModelParams::<f64>::init(arch, 4, 1e-3).unwrap();
        let data = toy_dataset(12, 8, 3, 6);
        let eval = evaluate(&params, &data).unwrap();
        assert_eq!(eval.records.len(), 12);

        let predictions: Vec<usize> = eval.records.iter().map(|r| r.prediction).collect();
        let all_right = Dataset::new(data.images().clone(), predictions.clone(), 3, "right").unwrap();
        assert_eq!(evaluate(&params, &all_right).unwrap().accuracy, 1.0);
        let wrong: Vec<usize> = predictions.iter().map(|p| (p + 1) % 3).collect();
        let all_wrong = Dataset::new(data.images().clone(), wrong, 3, "wrong").unwrap();
        assert_eq!(evaluate(&params, &all_wrong).unwrap().accuracy, 0.0);

        let perm: Vec<usize> = (0..12).rev().collect();
        let shuffled = evaluate(&params, &data.subset(&perm)).unwrap();
        assert_eq!(shuffled.accuracy, eval.accuracy);
        assert!((shuffled.mean_reconstruction - eval.mean_reconstruction).abs() < 1e-12);
    }
}
