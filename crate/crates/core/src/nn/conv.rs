//! Strided 5x5 convolution and its transpose.
//!
//! Both operators share one geometry: kernel 5, stride 2, symmetric zero
//! padding 2. A convolution maps `H` to `ceil(H / 2)`; the transposed
//! convolution maps `h` to `2h` and is the exact adjoint of a convolution
//! applied to a `2h` input.
//!
//! Inputs are `[C, H, W]` (single sample) or `[B, C, H, W]` (batch).
//! Internally everything is lowered to `im2col` plus one GEMM per sample.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub const KERNEL: usize = 5;
pub const STRIDE: usize = 2;
pub const PADDING: usize = 2;

/// Channel counts of a convolution (or transposed convolution) layer.
///
/// Weights are always stored as `[conv_out, conv_in, 5, 5]` where `conv_in`
/// and `conv_out` refer to the forward convolution. For a transposed
/// convolution from `in_channels` to `out_channels` that means the weight
/// shape is `[in_channels, out_channels, 5, 5]`, which is what lets a
/// convolution and its transpose share one weight tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
}

impl ConvSpec {
    pub fn new(in_channels: usize, out_channels: usize) -> Self {
        Self {
            in_channels,
            out_channels,
        }
    }

    pub fn conv_weight_shape(&self) -> [usize; 4] {
        [self.out_channels, self.in_channels, KERNEL, KERNEL]
    }

    pub fn deconv_weight_shape(&self) -> [usize; 4] {
        [self.in_channels, self.out_channels, KERNEL, KERNEL]
    }
}

/// Spatial extent after one strided convolution.
pub fn conv_out_extent(input: usize) -> usize {
    (input + 2 * PADDING - KERNEL) / STRIDE + 1
}

#[derive(Clone, Copy, Debug)]
struct Geometry {
    batch: usize,
    channels: usize,
    height: usize,
    width: usize,
    batched: bool,
}

fn geometry<T: Real>(t: &Tensor<T>, channels: usize, context: &'static str) -> Result<Geometry> {
    let (batch, c, h, w, batched) = match *t.shape() {
        [c, h, w] => (1, c, h, w, false),
        [b, c, h, w] => (b, c, h, w, true),
        ref other => {
            return Err(Error::shape(
                context,
                format!("expected [C, H, W] or [B, C, H, W], got {other:?}"),
            ))
        }
    };
    if c != channels {
        return Err(Error::shape(
            context,
            format!("channel dimension is {c}, layer expects {channels}"),
        ));
    }
    Ok(Geometry {
        batch,
        channels: c,
        height: h,
        width: w,
        batched,
    })
}

fn output_tensor<T: Real>(g: Geometry, channels: usize, h: usize, w: usize) -> Tensor<T> {
    if g.batched {
        Tensor::zeros(&[g.batch, channels, h, w])
    } else {
        Tensor::zeros(&[channels, h, w])
    }
}

fn check_params<T: Real>(
    weights: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    weight_shape: [usize; 4],
    bias_len: usize,
    context: &'static str,
) -> Result<()> {
    weights.expect_shape(&weight_shape, context, "weights")?;
    if let Some(b) = bias {
        b.expect_shape(&[bias_len], context, "bias")?;
    }
    Ok(())
}

/// Lowers one `[C, H, W]` image into a `[C * 25, Ho * Wo]` patch matrix.
fn im2col<T: Real>(img: &[T], c: usize, h: usize, w: usize, cols: &mut [T]) {
    let (oh, ow) = (conv_out_extent(h), conv_out_extent(w));
    let n = oh * ow;
    debug_assert_eq!(cols.len(), c * KERNEL * KERNEL * n);
    for ch in 0..c {
        let plane = &img[ch * h * w..(ch + 1) * h * w];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = ((ch * KERNEL + ky) * KERNEL + kx) * n;
                for oy in 0..oh {
                    let iy = (oy * STRIDE + ky) as isize - PADDING as isize;
                    let dst = &mut cols[row + oy * ow..row + (oy + 1) * ow];
                    if iy < 0 || iy >= h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * STRIDE + kx) as isize - PADDING as isize;
                        *d = if ix < 0 || ix >= w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Scatter-adds a patch matrix back onto a `[C, H, W]` image (adjoint of
/// [`im2col`]).
fn col2im<T: Real>(cols: &[T], c: usize, h: usize, w: usize, img: &mut [T]) {
    let (oh, ow) = (conv_out_extent(h), conv_out_extent(w));
    let n = oh * ow;
    for ch in 0..c {
        let plane = &mut img[ch * h * w..(ch + 1) * h * w];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = ((ch * KERNEL + ky) * KERNEL + kx) * n;
                for oy in 0..oh {
                    let iy = (oy * STRIDE + ky) as isize - PADDING as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = &cols[row + oy * ow..row + (oy + 1) * ow];
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, &s) in src.iter().enumerate() {
                        let ix = (ox * STRIDE + kx) as isize - PADDING as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] += s;
                        }
                    }
                }
            }
        }
    }
}

fn add_channel_bias<T: Real>(out: &mut [T], bias: &[T], plane: usize) {
    for (chunk, &b) in out.chunks_mut(plane).zip(bias.iter().cycle()) {
        for v in chunk {
            *v += b;
        }
    }
}

fn accumulate_channel_sums<T: Real>(grad: &[T], plane: usize, acc: &mut [T]) {
    let channels = acc.len();
    for (i, chunk) in grad.chunks(plane).enumerate() {
        acc[i % channels] += chunk.iter().copied().sum::<T>();
    }
}

/// Strided convolution: `[C_in, H, W] -> [C_out, ceil(H/2), ceil(W/2)]`.
pub fn conv2d_forward<T: Real>(
    input: &Tensor<T>,
    spec: ConvSpec,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    const CTX: &str = "conv2d_forward";
    let g = geometry(input, spec.in_channels, CTX)?;
    check_params(weights, Some(bias), spec.conv_weight_shape(), spec.out_channels, CTX)?;
    let (oh, ow) = (conv_out_extent(g.height), conv_out_extent(g.width));
    let patch = g.channels * KERNEL * KERNEL;
    let n = oh * ow;
    let mut out = output_tensor(g, spec.out_channels, oh, ow);
    let mut cols = vec![T::zero(); patch * n];
    let in_stride = g.channels * g.height * g.width;
    let out_stride = spec.out_channels * n;
    for b in 0..g.batch {
        im2col(
            &input.data()[b * in_stride..(b + 1) * in_stride],
            g.channels,
            g.height,
            g.width,
            &mut cols,
        );
        let dst = &mut out.data_mut()[b * out_stride..(b + 1) * out_stride];
        T::gemm(
            spec.out_channels,
            patch,
            n,
            T::one(),
            weights.data(),
            false,
            &cols,
            false,
            T::zero(),
            dst,
        );
        add_channel_bias(dst, bias.data(), n);
    }
    Ok(out)
}

/// Gradients of a convolution with respect to its input, weights and bias.
pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Backward pass of [`conv2d_forward`]. `cached_input` is the tensor the
/// forward pass consumed.
pub fn conv2d_backward<T: Real>(
    grad_out: &Tensor<T>,
    cached_input: &Tensor<T>,
    spec: ConvSpec,
    weights: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    const CTX: &str = "conv2d_backward";
    let g = geometry(cached_input, spec.in_channels, CTX)?;
    check_params(weights, None, spec.conv_weight_shape(), spec.out_channels, CTX)?;
    let (oh, ow) = (conv_out_extent(g.height), conv_out_extent(g.width));
    let expected = output_tensor::<T>(g, spec.out_channels, oh, ow);
    grad_out.expect_shape(expected.shape(), CTX, "grad_out")?;

    let patch = g.channels * KERNEL * KERNEL;
    let n = oh * ow;
    let mut grad_input = cached_input.zeros_like();
    let mut grad_w = weights.zeros_like();
    let mut grad_b = Tensor::zeros(&[spec.out_channels]);
    let mut cols = vec![T::zero(); patch * n];
    let mut dcols = vec![T::zero(); patch * n];
    let in_stride = g.channels * g.height * g.width;
    let out_stride = spec.out_channels * n;
    for b in 0..g.batch {
        let x = &cached_input.data()[b * in_stride..(b + 1) * in_stride];
        let go = &grad_out.data()[b * out_stride..(b + 1) * out_stride];
        im2col(x, g.channels, g.height, g.width, &mut cols);
        // dW += dY * cols^T
        T::gemm(
            spec.out_channels,
            n,
            patch,
            T::one(),
            go,
            false,
            &cols,
            true,
            T::one(),
            grad_w.data_mut(),
        );
        // dcols = W^T * dY
        T::gemm(
            patch,
            spec.out_channels,
            n,
            T::one(),
            weights.data(),
            true,
            go,
            false,
            T::zero(),
            &mut dcols,
        );
        col2im(
            &dcols,
            g.channels,
            g.height,
            g.width,
            &mut grad_input.data_mut()[b * in_stride..(b + 1) * in_stride],
        );
        accumulate_channel_sums(go, n, grad_b.data_mut());
    }
    Ok(ConvGrads {
        input: grad_input,
        weights: grad_w,
        bias: grad_b,
    })
}

/// Transposed convolution: `[C_in, h, w] -> [C_out, 2h, 2w]`.
///
/// With a zero bias this is the adjoint of [`conv2d_forward`] on a
/// `[C_out, 2h, 2w]` input using the same weight tensor.
pub fn deconv2d_forward<T: Real>(
    input: &Tensor<T>,
    spec: ConvSpec,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    const CTX: &str = "deconv2d_forward";
    let g = geometry(input, spec.in_channels, CTX)?;
    check_params(weights, Some(bias), spec.deconv_weight_shape(), spec.out_channels, CTX)?;
    let (oh, ow) = (2 * g.height, 2 * g.width);
    let patch = spec.out_channels * KERNEL * KERNEL;
    let n = g.height * g.width;
    let mut out = output_tensor(g, spec.out_channels, oh, ow);
    let mut cols = vec![T::zero(); patch * n];
    let in_stride = g.channels * n;
    let out_stride = spec.out_channels * oh * ow;
    for b in 0..g.batch {
        let x = &input.data()[b * in_stride..(b + 1) * in_stride];
        T::gemm(
            patch,
            spec.in_channels,
            n,
            T::one(),
            weights.data(),
            true,
            x,
            false,
            T::zero(),
            &mut cols,
        );
        let dst = &mut out.data_mut()[b * out_stride..(b + 1) * out_stride];
        col2im(&cols, spec.out_channels, oh, ow, dst);
        add_channel_bias(dst, bias.data(), oh * ow);
    }
    Ok(out)
}

/// Backward pass of [`deconv2d_forward`].
pub fn deconv2d_backward<T: Real>(
    grad_out: &Tensor<T>,
    cached_input: &Tensor<T>,
    spec: ConvSpec,
    weights: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    const CTX: &str = "deconv2d_backward";
    let g = geometry(cached_input, spec.in_channels, CTX)?;
    check_params(weights, None, spec.deconv_weight_shape(), spec.out_channels, CTX)?;
    let (oh, ow) = (2 * g.height, 2 * g.width);
    let expected = output_tensor::<T>(g, spec.out_channels, oh, ow);
    grad_out.expect_shape(expected.shape(), CTX, "grad_out")?;

    let patch = spec.out_channels * KERNEL * KERNEL;
    let n = g.height * g.width;
    let mut grad_input = cached_input.zeros_like();
    let mut grad_w = weights.zeros_like();
    let mut grad_b = Tensor::zeros(&[spec.out_channels]);
    let mut gcols = vec![T::zero(); patch * n];
    let in_stride = g.channels * n;
    let out_stride = spec.out_channels * oh * ow;
    for b in 0..g.batch {
        let x = &cached_input.data()[b * in_stride..(b + 1) * in_stride];
        let go = &grad_out.data()[b * out_stride..(b + 1) * out_stride];
        im2col(go, spec.out_channels, oh, ow, &mut gcols);
        // dx = W * im2col(dY)
        T::gemm(
            spec.in_channels,
            patch,
            n,
            T::one(),
            weights.data(),
            false,
            &gcols,
            false,
            T::zero(),
            &mut grad_input.data_mut()[b * in_stride..(b + 1) * in_stride],
        );
        // dW += x * im2col(dY)^T
        T::gemm(
            spec.in_channels,
            n,
            patch,
            T::one(),
            x,
            false,
            &gcols,
            true,
            T::one(),
            grad_w.data_mut(),
        );
        accumulate_channel_sums(go, oh * ow, grad_b.data_mut());
    }
    Ok(ConvGrads {
        input: grad_input,
        weights: grad_w,
        bias: grad_b,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{max_relative_error, numeric_gradient, random_tensor};

    #[test]
    fn output_extents_follow_ceil_half_rule() {
        for (input, expected) in [(28, 14), (14, 7), (7, 4), (8, 4), (1, 1), (5, 3)] {
            assert_eq!(conv_out_extent(input), expected, "input {input}");
        }
    }

    #[test]
    fn mnist_shapes() {
        let spec1 = ConvSpec::new(1, 32);
        let x = Tensor::<f32>::zeros(&[1, 28, 28]);
        let w = Tensor::zeros(&spec1.conv_weight_shape());
        let y = conv2d_forward(&x, spec1, &w, &Tensor::zeros(&[32])).unwrap();
        assert_eq!(y.shape(), &[32, 14, 14]);

        let spec2 = ConvSpec::new(32, 64);
        let w2 = Tensor::zeros(&spec2.conv_weight_shape());
        let z = conv2d_forward(&y, spec2, &w2, &Tensor::zeros(&[64])).unwrap();
        assert_eq!(z.shape(), &[64, 7, 7]);

        let dspec = ConvSpec::new(64, 32);
        let dw = Tensor::zeros(&dspec.deconv_weight_shape());
        let u = deconv2d_forward(&z, dspec, &dw, &Tensor::zeros(&[32])).unwrap();
        assert_eq!(u.shape(), &[32, 14, 14]);
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let spec = ConvSpec::new(2, 3);
        let x = random_tensor(&[2, 9, 9], 11);
        let w = Tensor::<f64>::zeros(&spec.conv_weight_shape());
        let y = conv2d_forward(&x, spec, &w, &Tensor::zeros(&[3])).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn deconv_of_zero_input_is_bias() {
        let spec = ConvSpec::new(3, 2);
        let w = random_tensor(&spec.deconv_weight_shape(), 5);
        let bias = Tensor::from_vec(vec![0.25, -1.5]);
        let y = deconv2d_forward(&Tensor::<f64>::zeros(&[3, 4, 4]), spec, &w, &bias).unwrap();
        assert_eq!(y.shape(), &[2, 8, 8]);
        assert!(y.data()[..64].iter().all(|&v| v == 0.25));
        assert!(y.data()[64..].iter().all(|&v| v == -1.5));
    }

    #[test]
    fn rejects_wrong_channel_count_naming_the_dimension() {
        let spec = ConvSpec::new(3, 2);
        let err = conv2d_forward(
            &Tensor::<f64>::zeros(&[2, 6, 6]),
            spec,
            &Tensor::zeros(&spec.conv_weight_shape()),
            &Tensor::zeros(&[2]),
        )
        .unwrap_err();
        assert!(err.to_string().contains("channel dimension is 2"), "{err}");

        let err = conv2d_forward(
            &Tensor::<f64>::zeros(&[3, 6, 6]),
            spec,
            &Tensor::zeros(&[2, 3, 3, 3]),
            &Tensor::zeros(&[2]),
        )
        .unwrap_err();
        assert!(err.to_string().contains("weights"), "{err}");
    }

    #[test]
    fn backward_rejects_mismatched_grad_out() {
        let spec = ConvSpec::new(1, 2);
        let x = Tensor::<f64>::zeros(&[1, 6, 6]);
        let w = Tensor::zeros(&spec.conv_weight_shape());
        assert!(conv2d_backward(&Tensor::zeros(&[2, 4, 4]), &x, spec, &w).is_err());
    }

    #[test]
    fn zero_grad_out_gives_zero_gradients() {
        let spec = ConvSpec::new(1, 2);
        let x = random_tensor(&[1, 6, 6], 3);
        let w = random_tensor(&spec.conv_weight_shape(), 4);
        let g = conv2d_backward(&Tensor::zeros(&[2, 3, 3]), &x, spec, &w).unwrap();
        for t in [&g.input, &g.weights, &g.bias] {
            assert!(t.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn bias_gradient_is_channel_sum() {
        let spec = ConvSpec::new(1, 2);
        let x = random_tensor(&[2, 1, 6, 6], 3);
        let w = random_tensor(&spec.conv_weight_shape(), 4);
        let go = random_tensor(&[2, 2, 3, 3], 5);
        let g = conv2d_backward(&go, &x, spec, &w).unwrap();
        for c in 0..2 {
            let expected: f64 = (0..2)
                .flat_map(|b| go.data()[(b * 2 + c) * 9..(b * 2 + c + 1) * 9].iter())
                .sum();
            assert!((g.bias.data()[c] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn adjoint_identity_holds() {
        for seed in 0..5 {
            let spec = ConvSpec::new(3, 4);
            let w = random_tensor(&spec.conv_weight_shape(), seed);
            let x = random_tensor(&[3, 10, 10], seed + 100);
            let u = random_tensor(&[4, 5, 5], seed + 200);
            let cx = conv2d_forward(&x, spec, &w, &Tensor::zeros(&[4])).unwrap();
            let du = deconv2d_forward(&u, ConvSpec::new(4, 3), &w, &Tensor::zeros(&[3])).unwrap();
            let lhs = cx.dot(&u).unwrap();
            let rhs = x.dot(&du).unwrap();
            assert!((lhs - rhs).abs() < 1e-10, "seed {seed}: {lhs} vs {rhs}");
        }
    }

    #[test]
    fn conv_backward_matches_finite_differences() {
        let spec = ConvSpec::new(1, 2);
        for seed in 0..5 {
            let x = random_tensor(&[1, 6, 6], seed);
            let w = random_tensor(&spec.conv_weight_shape(), seed + 10);
            let b = random_tensor(&[2], seed + 20);
            let probe = random_tensor(&[2, 3, 3], seed + 30);
            let g = conv2d_backward(&probe, &x, spec, &w).unwrap();
            let loss = |x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>| {
                conv2d_forward(x, spec, w, b).unwrap().dot(&probe).unwrap()
            };
            let nx = numeric_gradient(&x, |t| loss(t, &w, &b));
            let nw = numeric_gradient(&w, |t| loss(&x, t, &b));
            let nb = numeric_gradient(&b, |t| loss(&x, &w, t));
            assert!(max_relative_error(&g.input, &nx) < 1e-4);
            assert!(max_relative_error(&g.weights, &nw) < 1e-4);
            assert!(max_relative_error(&g.bias, &nb) < 1e-4);
        }
    }

    #[test]
    fn deconv_backward_matches_finite_differences() {
        let spec = ConvSpec::new(2, 3);
        for seed in 0..5 {
            let x = random_tensor(&[2, 2, 3, 3], seed);
            let w = random_tensor(&spec.deconv_weight_shape(), seed + 10);
            let b = random_tensor(&[3], seed + 20);
            let probe = random_tensor(&[2, 3, 6, 6], seed + 30);
            let g = deconv2d_backward(&probe, &x, spec, &w).unwrap();
            let loss = |x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>| {
                deconv2d_forward(x, spec, w, b).unwrap().dot(&probe).unwrap()
            };
            let nx = numeric_gradient(&x, |t| loss(t, &w, &b));
            let nw = numeric_gradient(&w, |t| loss(&x, t, &b));
            let nb = numeric_gradient(&b, |t| loss(&x, &w, t));
            assert!(max_relative_error(&g.input, &nx) < 1e-4);
            assert!(max_relative_error(&g.weights, &nw) < 1e-4);
            assert!(max_relative_error(&g.bias, &nb) < 1e-4);
        }
    }
}
