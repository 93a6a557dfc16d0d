//! Central finite differences, used to verify every hand-written backward
//! pass.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;
use crate::model::{evaluate_objective, forward_backward, random_images, Arch, ModelParams, Objective, Slot};
use crate::tensor::Tensor;

/// Step used for central differences.
pub const STEP: f64 = 1e-5;

/// Magnitude below which errors are measured absolutely rather than
/// relatively.
pub const FLOOR: f64 = 1e-6;

/// Gradient of `f` at `at` by central differences with step [`STEP`].
pub fn numeric_gradient(at: &Tensor<f64>, mut f: impl FnMut(&Tensor<f64>) -> f64) -> Tensor<f64> {
    let mut probe = at.clone();
    let mut grad = at.zeros_like();
    for i in 0..at.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + STEP;
        let plus = f(&probe);
        probe.data_mut()[i] = orig - STEP;
        let minus = f(&probe);
        probe.data_mut()[i] = orig;
        grad.data_mut()[i] = (plus - minus) / (2.0 * STEP);
    }
    grad
}

/// Largest entrywise `|a - b| / max(|a|, |b|, FLOOR)`.
pub fn max_relative_error(analytic: &Tensor<f64>, numeric: &Tensor<f64>) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape());
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(FLOOR))
        .fold(0.0, f64::max)
}

/// Standard-normal tensor from a fixed seed.
pub fn random_tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| StandardNormal.sample(&mut rng))
}

/// Worst relative error per parameter slot between the analytic gradient of
/// the joint objective and central differences, on the tiny architecture
/// in `f64`. Input and target are the same clean batch.
pub fn model_gradient_errors(
    num_classes: usize,
    seed: u64,
    objective: &Objective,
) -> Result<Vec<(Slot, f64)>> {
    let arch = Arch::tiny(num_classes);
    let mut params = ModelParams::<f64>::init(arch, seed, 1e-3)?;
    for slot in Slot::ALL.into_iter().filter(|s| s.is_bias()) {
        let noise = random_tensor(&arch.shape_of(slot), seed ^ 0xb1a5 ^ slot.index() as u64);
        *params.get_mut(slot) = noise.map(|v| 0.1 * v);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let batch = 3;
    let images = random_images::<f64>(&arch, batch, &mut rng);
    let labels: Vec<usize> = (0..batch).map(|_| rng.gen_range(0..num_classes)).collect();
    let (_, grads) = forward_backward(&params, &images, &images, &labels, objective)?;

    let mut errors = Vec::with_capacity(Slot::ALL.len());
    for slot in Slot::ALL {
        let mut probe_params = params.clone();
        let numeric = numeric_gradient(params.get(slot), |w| {
            *probe_params.get_mut(slot) = w.clone();
            evaluate_objective(&probe_params, &images, &images, &labels, objective)
                .map(|l| l.joint)
                .unwrap_or(f64::NAN)
        });
        errors.push((slot, max_relative_error(grads.get(slot), &numeric)));
    }
    Ok(errors)
}
