//! Analyses run on a trained model: paired reconstructions, label
//! correction, nearest neighbors in image and style space, style
//! interpolation and transfer, and reconstruction error as a
//! misclassification signal.

use std::cmp::Ordering;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{argmax, decode, decode_batch, encode, encode_batch, LatentCode, ModelParams};
use crate::nn::one_hot;
use crate::tensor::{squared_distance, Real, Tensor};
use crate::train::{Evaluation, SampleRecord};

/// Neighbor count used by the neighbor analysis.
pub const DEFAULT_NEIGHBORS: usize = 97;

fn to_f64<T: Real>(v: T) -> f64 {
    v.to_f64().unwrap_or(f64::NAN)
}

/// Originals and their reconstructions, one column per requested index.
#[derive(Clone, Debug, PartialEq)]
pub struct PairedReconstructions<T = f32> {
    pub indices: Vec<usize>,
    pub originals: Vec<Tensor<T>>,
    pub reconstructions: Vec<Tensor<T>>,
    pub predictions: Vec<usize>,
    pub reconstruction_losses: Vec<f64>,
}

impl<T: Real> PairedReconstructions<T> {
    /// Tiles in grid order: originals row, then reconstructions row.
    pub fn tiles(&self) -> Vec<&Tensor<T>> {
        self.originals.iter().chain(&self.reconstructions).collect()
    }
}

fn check_indices(dataset: &Dataset, indices: &[usize]) -> Result<()> {
    if indices.is_empty() {
        return Err(Error::InvalidArgument("no sample indices given".into()));
    }
    if let Some(&bad) = indices.iter().find(|&&i| i >= dataset.len()) {
        return Err(Error::InvalidArgument(format!(
            "sample index {bad} out of range for {} samples",
            dataset.len()
        )));
    }
    Ok(())
}

/// `decode(encode(x))` for each selected sample, using the network's own
/// class vector and style memory.
pub fn reconstruct_samples<T: Real>(
    params: &ModelParams<T>,
    dataset: &Dataset,
    indices: &[usize],
) -> Result<PairedReconstructions<T>> {
    check_indices(dataset, indices)?;
    let (images, _) = dataset.batch::<T>(indices);
    let enc = encode_batch(params, &images)?;
    let dec = decode_batch(params, &enc.y, &enc.m)?;
    let shape = {
        let s = params.arch().input_side;
        [1, s, s]
    };
    let mut out = PairedReconstructions {
        indices: indices.to_vec(),
        originals: Vec::with_capacity(indices.len()),
        reconstructions: Vec::with_capacity(indices.len()),
        predictions: Vec::with_capacity(indices.len()),
        reconstruction_losses: Vec::with_capacity(indices.len()),
    };
    for r in 0..indices.len() {
        out.originals.push(Tensor::new(&shape, images.row(r).to_vec())?);
        out.reconstructions.push(Tensor::new(&shape, dec.output.row(r).to_vec())?);
        out.predictions.push(argmax(enc.y.row(r)));
        out.reconstruction_losses.push(squared_distance(dec.output.row(r), images.row(r)));
    }
    Ok(out)
}

/// Result of replacing the predicted class vector with the true one-hot.
#[derive(Clone, Debug, PartialEq)]
pub struct Correction<T = f32> {
    pub code: LatentCode<T>,
    pub predicted_recon: Tensor<T>,
    pub corrected_recon: Tensor<T>,
    pub prediction: usize,
    pub confidence: f64,
}

/// Decodes `x` twice with the same style memory: once with the predicted
/// class vector and once with the one-hot of `true_label`.
pub fn correct_and_reconstruct<T: Real>(
    params: &ModelParams<T>,
    x: &Tensor<T>,
    true_label: usize,
) -> Result<Correction<T>> {
    let classes = params.arch().num_classes;
    if true_label >= classes {
        return Err(Error::InvalidArgument(format!(
            "label {true_label} outside the {classes}-class range"
        )));
    }
    let (code, _) = encode(params, x)?;
    let prediction = argmax(code.y.data());
    let confidence = to_f64(code.y.data()[prediction]);
    let predicted_recon = decode(params, &code)?;
    let corrected = LatentCode::new(one_hot(true_label, classes), code.m.clone());
    let corrected_recon = decode(params, &corrected)?;
    Ok(Correction {
        code,
        predicted_recon,
        corrected_recon,
        prediction,
        confidence,
    })
}

/// Decodes a style memory under the one-hot of `target_class`.
pub fn transfer_style<T: Real>(params: &ModelParams<T>, target_class: usize, m: &Tensor<T>) -> Result<Tensor<T>> {
    let classes = params.arch().num_classes;
    if target_class >= classes {
        return Err(Error::InvalidArgument(format!(
            "class {target_class} outside the {classes}-class range"
        )));
    }
    decode(params, &LatentCode::new(one_hot(target_class, classes), m.clone()))
}

/// `lambda * m1 + (1 - lambda) * m2`.
pub fn blend_styles<T: Real>(m1: &Tensor<T>, m2: &Tensor<T>, lambda: f64) -> Result<Tensor<T>> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidArgument(format!("lambda {lambda} outside [0, 1]")));
    }
    m1.expect_same_shape(m2, "interpolate")?;
    let l = T::lit(lambda);
    let r = T::one() - l;
    let data = m1.data().iter().zip(m2.data()).map(|(&a, &b)| l * a + r * b).collect();
    Tensor::new(m1.shape(), data)
}

/// `0.1, 0.2, ..., 1.0`.
pub fn default_lambda_grid() -> Vec<f64> {
    (1..=10).map(|i| f64::from(i) / 10.0).collect()
}

/// Decoded frames along the segment between two style memories.
#[derive(Clone, Debug, PartialEq)]
pub struct InterpolationTrack<T = f32> {
    pub class: usize,
    pub m1: Tensor<T>,
    pub m2: Tensor<T>,
    pub lambdas: Vec<f64>,
    pub styles: Vec<Tensor<T>>,
    pub frames: Vec<Tensor<T>>,
}

pub fn interpolate_styles<T: Real>(
    params: &ModelParams<T>,
    class: usize,
    m1: &Tensor<T>,
    m2: &Tensor<T>,
    lambdas: &[f64],
) -> Result<InterpolationTrack<T>> {
    if lambdas.is_empty() {
        return Err(Error::InvalidArgument("empty lambda grid".into()));
    }
    let mut styles = Vec::with_capacity(lambdas.len());
    let mut frames = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let m = blend_styles(m1, m2, lambda)?;
        frames.push(transfer_style(params, class, &m)?);
        styles.push(m);
    }
    Ok(InterpolationTrack {
        class,
        m1: m1.clone(),
        m2: m2.clone(),
        lambdas: lambdas.to_vec(),
        styles,
        frames,
    })
}

/// Which representation neighbor distances are measured in.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Space {
    Image,
    Style,
}

impl Space {
    pub fn name(self) -> &'static str {
        match self {
            Space::Image => "image",
            Space::Style => "style",
        }
    }
}

/// Flattened pixels and style memories for every sample of a dataset.
#[derive(Clone, Debug)]
pub struct NeighborIndex {
    pixels: Vec<Vec<f64>>,
    styles: Vec<Vec<f64>>,
    labels: Vec<usize>,
    num_classes: usize,
}

impl NeighborIndex {
    pub fn new(pixels: Vec<Vec<f64>>, styles: Vec<Vec<f64>>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if pixels.len() != styles.len() || pixels.len() != labels.len() {
            return Err(Error::InvalidArgument(format!(
                "{} images, {} style memories and {} labels",
                pixels.len(),
                styles.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::InvalidArgument(format!("label {bad} outside {num_classes} classes")));
        }
        Ok(Self {
            pixels,
            styles,
            labels,
            num_classes,
        })
    }

    /// Uses the clean-input style memories recorded by an evaluation.
    pub fn from_evaluation(dataset: &Dataset, evaluation: &Evaluation) -> Result<Self> {
        let mut records: Vec<&SampleRecord> = evaluation.records.iter().collect();
        records.sort_by_key(|r| r.index);
        if records.len() != dataset.len() || records.iter().enumerate().any(|(i, r)| r.index != i) {
            return Err(Error::InvalidArgument(
                "evaluation does not cover the dataset one record per sample".into(),
            ));
        }
        let pixels = (0..dataset.len())
            .map(|i| dataset.pixels(i).iter().map(|&p| f64::from(p)).collect())
            .collect();
        let styles = records.iter().map(|r| r.style.clone()).collect();
        Self::new(pixels, styles, dataset.labels().to_vec(), dataset.num_classes())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn image_distance(&self, a: usize, b: usize) -> f64 {
        squared_distance(&self.pixels[a], &self.pixels[b]).sqrt()
    }

    pub fn style_distance(&self, a: usize, b: usize) -> f64 {
        squared_distance(&self.styles[a], &self.styles[b]).sqrt()
    }

    fn distance(&self, space: Space, a: usize, b: usize) -> f64 {
        match space {
            Space::Image => self.image_distance(a, b),
            Space::Style => self.style_distance(a, b),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NeighborReport {
    pub query: usize,
    pub space: Space,
    /// Sorted by ascending distance in `space`, ties by index.
    pub neighbors: Vec<usize>,
    pub image_distances: Vec<f64>,
    pub style_distances: Vec<f64>,
    pub mean_image_distance: f64,
    pub mean_style_distance: f64,
    pub class_histogram: Vec<usize>,
}

impl NeighborReport {
    /// Neighbors sharing the query's label.
    pub fn query_class_count(&self, index: &NeighborIndex) -> usize {
        self.class_histogram[index.labels[self.query]]
    }
}

/// Exact `k` nearest neighbors of `query`, excluding the query itself.
pub fn nearest_neighbors(index: &NeighborIndex, query: usize, space: Space, k: usize) -> Result<NeighborReport> {
    if query >= index.len() {
        return Err(Error::InvalidArgument(format!(
            "query {query} out of range for {} samples",
            index.len()
        )));
    }
    if k == 0 || k >= index.len() {
        return Err(Error::InvalidArgument(format!(
            "k = {k} must be in 1..{} for {} samples",
            index.len(),
            index.len()
        )));
    }
    let mut ranked: Vec<(f64, usize)> = (0..index.len())
        .filter(|&i| i != query)
        .map(|i| (index.distance(space, query, i), i))
        .collect();
    ranked.sort_by(|&a, &b| rank_order(a, b));
    ranked.truncate(k);

    let neighbors: Vec<usize> = ranked.iter().map(|&(_, i)| i).collect();
    let image_distances: Vec<f64> = neighbors.iter().map(|&i| index.image_distance(query, i)).collect();
    let style_distances: Vec<f64> = neighbors.iter().map(|&i| index.style_distance(query, i)).collect();
    let mut class_histogram = vec![0; index.num_classes];
    for &i in &neighbors {
        class_histogram[index.labels[i]] += 1;
    }
    Ok(NeighborReport {
        query,
        space,
        mean_image_distance: image_distances.iter().sum::<f64>() / k as f64,
        mean_style_distance: style_distances.iter().sum::<f64>() / k as f64,
        neighbors,
        image_distances,
        style_distances,
        class_histogram,
    })
}

/// Precision and recall of flagging samples whose reconstruction loss is at
/// least `threshold` as misclassified.
#[derive(Clone, Debug, PartialEq)]
pub struct ThresholdPoint {
    pub threshold: f64,
    pub flagged: usize,
    /// `None` when nothing is flagged.
    pub precision: Option<f64>,
    /// `None` when there are no misclassified samples.
    pub recall: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MisclassificationReport {
    pub correct: usize,
    pub misclassified: usize,
    pub mean_correct: Option<f64>,
    pub mean_misclassified: Option<f64>,
    pub sweep: Vec<ThresholdPoint>,
}

impl MisclassificationReport {
    /// `mean_misclassified / mean_correct`, when both exist.
    pub fn ratio(&self) -> Option<f64> {
        Some(self.mean_misclassified? / self.mean_correct?)
    }

    /// True when there are no misclassified samples to detect.
    pub fn is_degenerate(&self) -> bool {
        self.misclassified == 0
    }
}

const SWEEP_STEPS: usize = 20;

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

/// Partitions records by correctness and sweeps loss thresholds taken at
/// evenly spaced quantiles of the observed losses.
pub fn misclassification_detector(records: &[SampleRecord]) -> Result<MisclassificationReport> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("no evaluation records".into()));
    }
    let (right, wrong): (Vec<&SampleRecord>, Vec<&SampleRecord>) = records.iter().partition(|r| r.is_correct());
    let right_losses: Vec<f64> = right.iter().map(|r| r.reconstruction_loss).collect();
    let wrong_losses: Vec<f64> = wrong.iter().map(|r| r.reconstruction_loss).collect();

    let mut sorted: Vec<f64> = records.iter().map(|r| r.reconstruction_loss).collect();
    sorted.sort_by(f64::total_cmp);
    let mut thresholds: Vec<f64> = (0..=SWEEP_STEPS)
        .map(|q| sorted[(q * (sorted.len() - 1) + SWEEP_STEPS / 2) / SWEEP_STEPS])
        .collect();
    thresholds.dedup();

    let sweep = thresholds
        .into_iter()
        .map(|threshold| {
            let flagged = records.iter().filter(|r| r.reconstruction_loss >= threshold).count();
            let hits = wrong_losses.iter().filter(|&&l| l >= threshold).count();
            ThresholdPoint {
                threshold,
                flagged,
                precision: (flagged > 0).then(|| hits as f64 / flagged as f64),
                recall: (!wrong_losses.is_empty()).then(|| hits as f64 / wrong_losses.len() as f64),
            }
        })
        .collect();
    Ok(MisclassificationReport {
        correct: right.len(),
        misclassified: wrong.len(),
        mean_correct: mean(&right_losses),
        mean_misclassified: mean(&wrong_losses),
        sweep,
    })
}

/// `count` distinct indices below `len`, drawn uniformly from `seed` and
/// returned in ascending order.
pub fn spread_indices(len: usize, count: usize, seed: u64) -> Vec<usize> {
    use rand::seq::index::sample;
    let mut rng = crate::data::noise_rng(seed);
    let mut picked = sample(&mut rng, len, count.min(len)).into_vec();
    picked.sort_unstable();
    picked
}

/// Orders neighbor pairs the same way [`nearest_neighbors`] does.
pub fn rank_order(a: (f64, usize), b: (f64, usize)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}
