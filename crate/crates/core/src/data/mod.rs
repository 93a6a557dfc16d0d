//! Dataset ingestion: IDX parsing, in-memory datasets, batching and input
//! noise.

pub mod idx;
mod noise;

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub use idx::{parse_idx_images, parse_idx_labels, LabelEncoding};
pub use noise::{inject_noise, inject_noise_with, noise_rng, NoiseRng};

/// Side length of every supported image.
pub const IMAGE_SIDE: usize = 28;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DatasetKind {
    Mnist,
    EmnistLetters,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl DatasetKind {
    pub fn num_classes(self) -> usize {
        match self {
            DatasetKind::Mnist => 10,
            DatasetKind::EmnistLetters => 26,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DatasetKind::Mnist => "mnist",
            DatasetKind::EmnistLetters => "emnist-letters",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "mnist" => Some(DatasetKind::Mnist),
            "emnist-letters" => Some(DatasetKind::EmnistLetters),
            _ => None,
        }
    }

    pub fn label_encoding(self) -> LabelEncoding {
        match self {
            DatasetKind::Mnist => LabelEncoding::ZeroBased { num_classes: 10 },
            DatasetKind::EmnistLetters => LabelEncoding::OneBased { num_classes: 26 },
        }
    }

    /// Base file names (images, labels) without any `.gz` suffix.
    pub fn file_names(self, split: Split) -> (&'static str, &'static str) {
        match (self, split) {
            (DatasetKind::Mnist, Split::Train) => ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
            (DatasetKind::Mnist, Split::Test) => ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
            (DatasetKind::EmnistLetters, Split::Train) => (
                "emnist-letters-train-images-idx3-ubyte",
                "emnist-letters-train-labels-idx1-ubyte",
            ),
            (DatasetKind::EmnistLetters, Split::Test) => (
                "emnist-letters-test-images-idx3-ubyte",
                "emnist-letters-test-labels-idx1-ubyte",
            ),
        }
    }

    /// Label used in figures and reports ("0".."9" or "a".."z").
    pub fn class_name(self, class: usize) -> String {
        match self {
            DatasetKind::Mnist => class.to_string(),
            DatasetKind::EmnistLetters => char::from(b'a' + class as u8).to_string(),
        }
    }
}

/// Images with class labels.
#[derive(Clone, Debug)]
pub struct Dataset {
    images: Tensor<f32>,
    labels: Vec<usize>,
    num_classes: usize,
    id: String,
}

impl Dataset {
    pub fn new(images: Tensor<f32>, labels: Vec<usize>, num_classes: usize, id: impl Into<String>) -> Result<Self> {
        let n = match *images.shape() {
            [n, 1, _, _] => n,
            ref other => {
                return Err(Error::shape("dataset", format!("images must be [N, 1, H, W], got {other:?}")))
            }
        };
        if n != labels.len() {
            return Err(Error::shape("dataset", format!("{n} images but {} labels", labels.len())));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::InvalidArgument(format!("label {l} outside {num_classes} classes")));
        }
        if let Some(p) = images.data().iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::InvalidArgument(format!("pixel {p} outside [0, 1]")));
        }
        Ok(Self {
            images,
            labels,
            num_classes,
            id: id.into(),
        })
    }

    /// Loads one split from `dir`, reading `<name>` or `<name>.gz`.
    pub fn load(dir: &Path, kind: DatasetKind, split: Split) -> Result<Self> {
        let (img_name, lbl_name) = kind.file_names(split);
        let img_path = locate(dir, img_name);
        let lbl_path = locate(dir, lbl_name);
        let (img_path, lbl_path) = match (img_path, lbl_path) {
            (Some(i), Some(l)) => (i, l),
            _ => {
                return Err(Error::MissingData {
                    dir: dir.to_path_buf(),
                    expected: format!("{img_name}[.gz] and {lbl_name}[.gz]"),
                })
            }
        };
        let mut images = parse_idx_images(&read_maybe_gz(&img_path)?)?;
        let labels = parse_idx_labels(&read_maybe_gz(&lbl_path)?, kind.label_encoding())?;
        if kind == DatasetKind::EmnistLetters {
            let n = images.shape()[0];
            for i in 0..n {
                let oriented = orient_emnist(images.row(i));
                images.row_mut(i).copy_from_slice(&oriented);
            }
        }
        let split_name = match split {
            Split::Train => "train",
            Split::Test => "test",
        };
        Self::new(images, labels, kind.num_classes(), format!("{}-{split_name}", kind.name()))
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn images(&self) -> &Tensor<f32> {
        &self.images
    }

    pub fn image_shape(&self) -> [usize; 3] {
        let s = self.images.shape();
        [s[1], s[2], s[3]]
    }

    pub fn pixels(&self, index: usize) -> &[f32] {
        self.images.row(index)
    }

    /// A single image as a `[1, H, W]` tensor.
    pub fn image<T: Real>(&self, index: usize) -> Tensor<T> {
        let [c, h, w] = self.image_shape();
        Tensor::from_fn(&[c, h, w], |i| T::lit(f64::from(self.pixels(index)[i])))
    }

    /// Gathers the given samples into a `[B, 1, H, W]` batch.
    pub fn batch<T: Real>(&self, indices: &[usize]) -> (Tensor<T>, Vec<usize>) {
        let [c, h, w] = self.image_shape();
        let stride = c * h * w;
        let mut data = Vec::with_capacity(indices.len() * stride);
        for &i in indices {
            data.extend(self.pixels(i).iter().map(|&p| T::lit(f64::from(p))));
        }
        let images = Tensor::new(&[indices.len(), c, h, w], data).expect("batch shape");
        (images, indices.iter().map(|&i| self.labels[i]).collect())
    }

    /// The first `n` samples (or all, if fewer).
    pub fn head(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        let idx: Vec<usize> = (0..n).collect();
        self.subset(&idx)
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let (images, labels) = self.batch::<f32>(indices);
        Dataset {
            images,
            labels,
            num_classes: self.num_classes,
            id: format!("{}[{}]", self.id, indices.len()),
        }
    }
}

fn locate(dir: &Path, name: &str) -> Option<PathBuf> {
    [dir.join(name), dir.join(format!("{name}.gz"))]
        .into_iter()
        .find(|p| p.is_file())
}

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    if path.extension().is_some_and(|e| e == "gz") {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::io(format!("decompressing {}", path.display()), e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

/// Transposes a square image. EMNIST stores its images transposed relative
/// to the MNIST orientation; this undoes that.
pub fn orient_emnist<T: Copy>(pixels: &[T]) -> Vec<T> {
    let side = (pixels.len() as f64).sqrt() as usize;
    assert_eq!(side * side, pixels.len(), "orient_emnist expects a square image");
    let mut out = pixels.to_vec();
    for r in 0..side {
        for c in 0..side {
            out[c * side + r] = pixels[r * side + c];
        }
    }
    out
}

/// Shuffled mini-batch index sequence for one epoch.
///
/// Every sample appears exactly once per epoch; the final batch may be
/// short.
#[derive(Clone, Debug)]
pub struct BatchIterator {
    order: Vec<usize>,
    batch_size: usize,
    cursor: usize,
}

impl BatchIterator {
    pub fn new(len: usize, batch_size: usize, rng: &mut impl Rng) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be positive".into()));
        }
        let mut order: Vec<usize> = (0..len).collect();
        order.shuffle(rng);
        Ok(Self {
            order,
            batch_size,
            cursor: 0,
        })
    }

    pub fn num_batches(&self) -> usize {
        self.order.len().div_ceil(self.batch_size)
    }
}

impl Iterator for BatchIterator {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if self.cursor >= self.order.len() {
            return None;
        }
        let end = (self.cursor + self.batch_size).min(self.order.len());
        let batch = self.order[self.cursor..end].to_vec();
        self.cursor = end;
        Some(batch)
    }
}
