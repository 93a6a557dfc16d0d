//! Classification, reconstruction and joint objectives.

use crate::error::{Error, Result};
use crate::nn::activation::{log_softmax, softmax};
use crate::tensor::{Real, Tensor};

/// Index of the hot entry of a one-hot vector.
pub fn one_hot_index<T: Real>(target: &Tensor<T>) -> Result<usize> {
    let mut hot = None;
    for (i, &v) in target.data().iter().enumerate() {
        if v == T::one() && hot.is_none() {
            hot = Some(i);
        } else if v != T::zero() {
            return Err(Error::InvalidArgument(format!(
                "target is not one-hot: entry {i} is {v}"
            )));
        }
    }
    hot.ok_or_else(|| Error::InvalidArgument("target is not one-hot: no entry equals 1".into()))
}

pub fn one_hot<T: Real>(class: usize, num_classes: usize) -> Tensor<T> {
    Tensor::from_fn(&[num_classes], |i| if i == class { T::one() } else { T::zero() })
}

/// Categorical cross-entropy `-sum(y_t * ln y)` of a one-hot target against a
/// probability vector.
pub fn classifier_loss<T: Real>(target: &Tensor<T>, probs: &Tensor<T>) -> Result<T> {
    target.expect_same_shape(probs, "classifier_loss")?;
    let class = one_hot_index(target)?;
    Ok(-probs.data()[class].max(T::min_positive_value()).ln())
}

/// Cross-entropy evaluated on logits through `log_softmax`.
///
/// Returns per-sample losses, the batch mean, and the gradient of the mean
/// with respect to the logits.
pub struct CrossEntropy<T> {
    pub per_sample: Vec<T>,
    pub mean: T,
    pub grad_logits: Tensor<T>,
}

pub fn cross_entropy_with_logits<T: Real>(logits: &Tensor<T>, labels: &[usize]) -> Result<CrossEntropy<T>> {
    let (rows, classes) = match *logits.shape() {
        [c] => (1, c),
        [b, c] => (b, c),
        ref other => {
            return Err(Error::shape(
                "cross_entropy_with_logits",
                format!("logits must be [k] or [B, k], got {other:?}"),
            ))
        }
    };
    if labels.len() != rows {
        return Err(Error::shape(
            "cross_entropy_with_logits",
            format!("{} labels for {rows} rows of logits", labels.len()),
        ));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::InvalidArgument(format!(
            "label {bad} out of range for {classes} classes"
        )));
    }
    let logp = log_softmax(logits);
    let mut grad = softmax(logits);
    let scale = T::one() / T::lit(rows as f64);
    let mut per_sample = Vec::with_capacity(rows);
    for (r, &label) in labels.iter().enumerate() {
        per_sample.push(-logp.row(r)[label]);
        let g = grad.row_mut(r);
        g[label] -= T::one();
        for v in g.iter_mut() {
            *v *= scale;
        }
    }
    let mean = per_sample.iter().copied().sum::<T>() * scale;
    Ok(CrossEntropy {
        per_sample,
        mean,
        grad_logits: grad,
    })
}

/// Squared Euclidean distance `||x_hat - x||^2`, summed over every element.
pub fn reconstruction_loss<T: Real>(x_hat: &Tensor<T>, x: &Tensor<T>) -> Result<T> {
    x_hat.expect_same_shape(x, "reconstruction_loss")?;
    Ok(x_hat
        .data()
        .iter()
        .zip(x.data())
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum())
}

/// `L_y + alpha * L_r`.
pub fn joint_loss<T: Real>(classifier: T, reconstruction: T, alpha: T) -> Result<T> {
    if !(alpha >= T::zero()) {
        return Err(Error::InvalidArgument(format!(
            "reconstruction weight must be non-negative, got {alpha}"
        )));
    }
    Ok(classifier + alpha * reconstruction)
}
