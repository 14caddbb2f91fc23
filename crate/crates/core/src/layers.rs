//! Differentiable layer primitives.
//!
//! Every forward function has a matching `*_backward` that returns exact
//! adjoints. Convolutions are "valid" (no padding); feature maps are laid out
//! as `[channels, depth, height, width]`.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{argmax_slice, Shape, Tensor, TensorError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LayerError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("geometry error: {0}")]
    Geometry(&'static str),
    #[error("input has {input} channels but kernels expect {kernel}")]
    Channels { input: usize, kernel: usize },
    #[error("pool window {window:?} does not divide input extents {input}")]
    PoolDivisibility { window: [usize; 3], input: Shape },
    #[error("non-finite value in {0} input")]
    NonFinite(&'static str),
    #[error("malformed one-hot vector: {0:?}")]
    OneHot(Vec<f64>),
}

/// 3D convolution parameters: kernels `[out, in, D_r, H_r, W_r]`, bias `[out]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conv3dParams {
    pub kernels: Tensor,
    pub bias: Tensor,
    pub stride: [usize; 3],
}

/// Affine layer parameters: weight `[out, in]`, bias `[out]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseParams {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Gradient of a layer: w.r.t. its input and each of its parameters in
/// declaration order (kernels/weight first, then bias).
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub d_input: Tensor,
    pub d_params: Vec<Tensor>,
}

/// Flat indices (into the pooled input) of each window's winner.
pub type PoolIndices = Vec<usize>;

fn dims4(t: &Tensor, op: &'static str) -> Result<[usize; 4], LayerError> {
    match *t.dims() {
        [a, b, c, d] => Ok([a, b, c, d]),
        _ => Err(TensorError::Rank {
            op,
            expected: 4,
            got: t.shape().clone(),
        }
        .into()),
    }
}

struct ConvGeometry {
    in_ch: usize,
    input: [usize; 3],
    out_ch: usize,
    kernel: [usize; 3],
    stride: [usize; 3],
    output: [usize; 3],
}

impl Conv3dParams {
    pub fn new(kernels: Tensor, bias: Tensor, stride: [usize; 3]) -> Result<Self, LayerError> {
        if kernels.rank() != 5 {
            return Err(TensorError::Rank {
                op: "conv3d kernels",
                expected: 5,
                got: kernels.shape().clone(),
            }
            .into());
        }
        if bias.dims() != [kernels.dims()[0]] {
            return Err(kernels.mismatch("conv3d bias", &bias).into());
        }
        if stride.contains(&0) {
            return Err(LayerError::Geometry("stride must be positive"));
        }
        Ok(Conv3dParams { kernels, bias, stride })
    }

    /// Output extents `[out, D', H', W']` for an input of `[in, D, H, W]`.
    pub fn output_dims(&self, input: &[usize]) -> Result<[usize; 4], LayerError> {
        let g = self.geometry(input)?;
        Ok([g.out_ch, g.output[0], g.output[1], g.output[2]])
    }

    fn geometry(&self, input: &[usize]) -> Result<ConvGeometry, LayerError> {
        let &[in_ch, d, h, w] = input else {
            return Err(LayerError::Geometry("conv3d input must be [channels, D, H, W]"));
        };
        let k = self.kernels.dims();
        let (out_ch, k_in) = (k[0], k[1]);
        if k_in != in_ch {
            return Err(LayerError::Channels {
                input: in_ch,
                kernel: k_in,
            });
        }
        let kernel = [k[2], k[3], k[4]];
        let extents = [d, h, w];
        let mut output = [0; 3];
        for axis in 0..3 {
            if kernel[axis] > extents[axis] {
                return Err(LayerError::Geometry("kernel larger than input"));
            }
            let span = extents[axis] - kernel[axis];
            if !span.is_multiple_of(self.stride[axis]) {
                return Err(LayerError::Geometry("stride does not divide input extent"));
            }
            output[axis] = span / self.stride[axis] + 1;
        }
        Ok(ConvGeometry {
            in_ch,
            input: extents,
            out_ch,
            kernel,
            stride: self.stride,
            output,
        })
    }
}

impl DenseParams {
    pub fn new(weight: Tensor, bias: Tensor) -> Result<Self, LayerError> {
        if weight.rank() != 2 || bias.dims() != [weight.dims()[0]] {
            return Err(weight.mismatch("dense bias", &bias).into());
        }
        Ok(DenseParams { weight, bias })
    }

    pub fn in_features(&self) -> usize {
        self.weight.dims()[1]
    }

    pub fn out_features(&self) -> usize {
        self.weight.dims()[0]
    }
}

/// Valid 3D convolution plus bias, without activation.
pub fn conv3d(input: &Tensor, p: &Conv3dParams) -> Result<Tensor, LayerError> {
    dims4(input, "conv3d")?;
    let g = p.geometry(input.dims())?;
    let [od, oh, ow] = g.output;
    let [_, ih, iw] = g.input;
    let [kd, kh, kw] = g.kernel;
    let [sd, sh, sw] = g.stride;
    let plane = od * oh * ow;
    let x = input.data();
    let k = p.kernels.data();
    let mut out = vec![0.0; g.out_ch * plane];

    for o in 0..g.out_ch {
        let out_o = &mut out[o * plane..(o + 1) * plane];
        out_o.fill(p.bias.data()[o]);
        for c in 0..g.in_ch {
            let x_c = &x[c * g.input.iter().product::<usize>()..];
            for dz in 0..kd {
                for dy in 0..kh {
                    for dx in 0..kw {
                        let w = k[((((o * g.in_ch + c) * kd + dz) * kh + dy) * kw) + dx];
                        for z in 0..od {
                            for y in 0..oh {
                                let row_out = &mut out_o[(z * oh + y) * ow..(z * oh + y + 1) * ow];
                                let base = ((z * sd + dz) * ih + (y * sh + dy)) * iw + dx;
                                for (xo, r) in row_out.iter_mut().enumerate() {
                                    *r += w * x_c[base + xo * sw];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(Tensor::new(vec![g.out_ch, od, oh, ow], out)?)
}

/// Adjoint of [`conv3d`]: gradients of `sum(d_output * conv3d(input, p))`
/// w.r.t. input, kernels and bias.
pub fn conv3d_backward(input: &Tensor, p: &Conv3dParams, d_output: &Tensor) -> Result<LayerGrad, LayerError> {
    dims4(input, "conv3d_backward")?;
    let g = p.geometry(input.dims())?;
    let [od, oh, ow] = g.output;
    if d_output.dims() != [g.out_ch, od, oh, ow] {
        return Err(LayerError::Tensor(TensorError::ShapeMismatch {
            op: "conv3d_backward",
            left: Shape::new(vec![g.out_ch, od, oh, ow])?,
            right: d_output.shape().clone(),
        }));
    }
    let [_, ih, iw] = g.input;
    let [kd, kh, kw] = g.kernel;
    let [sd, sh, sw] = g.stride;
    let plane = od * oh * ow;
    let in_plane: usize = g.input.iter().product();
    let x = input.data();
    let k = p.kernels.data();
    let dy_all = d_output.data();

    let mut d_input = vec![0.0; input.len()];
    let mut d_kernels = vec![0.0; p.kernels.len()];
    let mut d_bias = vec![0.0; g.out_ch];

    for o in 0..g.out_ch {
        let dy_o = &dy_all[o * plane..(o + 1) * plane];
        d_bias[o] = dy_o.iter().fold(0.0, |a, &v| a + v);
        for c in 0..g.in_ch {
            let x_c = &x[c * in_plane..(c + 1) * in_plane];
            let dx_c = &mut d_input[c * in_plane..(c + 1) * in_plane];
            for dz in 0..kd {
                for dy in 0..kh {
                    for dx in 0..kw {
                        let ki = ((((o * g.in_ch + c) * kd + dz) * kh + dy) * kw) + dx;
                        let w = k[ki];
                        let mut acc = 0.0;
                        for z in 0..od {
                            for y in 0..oh {
                                let grad_row = &dy_o[(z * oh + y) * ow..(z * oh + y + 1) * ow];
                                let base = ((z * sd + dz) * ih + (y * sh + dy)) * iw + dx;
                                for (xo, &gv) in grad_row.iter().enumerate() {
                                    let idx = base + xo * sw;
                                    acc += gv * x_c[idx];
                                    dx_c[idx] += w * gv;
                                }
                            }
                        }
                        d_kernels[ki] = acc;
                    }
                }
            }
        }
    }
    Ok(LayerGrad {
        d_input: Tensor::from_shape(input.shape().clone(), d_input)?,
        d_params: vec![
            Tensor::from_shape(p.kernels.shape().clone(), d_kernels)?,
            Tensor::from_shape(p.bias.shape().clone(), d_bias)?,
        ],
    })
}

/// Non-overlapping 3D max pooling (stride = window). Ties go to the lowest
/// flat index inside each window.
pub fn maxpool3d(input: &Tensor, window: [usize; 3]) -> Result<(Tensor, PoolIndices), LayerError> {
    let [ch, d, h, w] = dims4(input, "maxpool3d")?;
    let extents = [d, h, w];
    if (0..3).any(|a| window[a] == 0 || extents[a] % window[a] != 0) {
        return Err(LayerError::PoolDivisibility {
            window,
            input: input.shape().clone(),
        });
    }
    let [pd, ph, pw] = window;
    let (od, oh, ow) = (d / pd, h / ph, w / pw);
    let x = input.data();
    let mut out = Vec::with_capacity(ch * od * oh * ow);
    let mut indices = Vec::with_capacity(out.capacity());
    for c in 0..ch {
        for z in 0..od {
            for y in 0..oh {
                for xo in 0..ow {
                    let mut best = (usize::MAX, f64::NEG_INFINITY);
                    // scan in increasing flat index so the first maximum wins
                    for dz in 0..pd {
                        for dy in 0..ph {
                            for dx in 0..pw {
                                let idx = ((c * d + z * pd + dz) * h + y * ph + dy) * w + xo * pw + dx;
                                if best.0 == usize::MAX || x[idx] > best.1 {
                                    best = (idx, x[idx]);
                                }
                            }
                        }
                    }
                    out.push(best.1);
                    indices.push(best.0);
                }
            }
        }
    }
    Ok((Tensor::new(vec![ch, od, oh, ow], out)?, indices))
}

/// Routes each output gradient to the input position that won its window.
pub fn maxpool3d_backward(input_shape: &Shape, indices: &PoolIndices, d_output: &Tensor) -> Result<Tensor, LayerError> {
    if indices.len() != d_output.len() {
        return Err(LayerError::Geometry("pool index map does not match d_output"));
    }
    let mut d_input = vec![0.0; input_shape.numel()];
    for (&idx, &g) in indices.iter().zip(d_output.data()) {
        d_input[idx] += g;
    }
    Ok(Tensor::from_shape(input_shape.clone(), d_input)?)
}

pub fn relu(input: &Tensor) -> Tensor {
    input.map(|v| if v > 0.0 { v } else { 0.0 })
}

/// Masks `d_output` by `input > 0`; the subgradient at exactly 0 is 0.
pub fn relu_backward(input: &Tensor, d_output: &Tensor) -> Result<Tensor, LayerError> {
    if input.shape() != d_output.shape() {
        return Err(input.mismatch("relu_backward", d_output).into());
    }
    let data = input
        .data()
        .iter()
        .zip(d_output.data())
        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
        .collect();
    Ok(Tensor::from_shape(input.shape().clone(), data)?)
}

/// `weight · input + bias` for a rank-1 input.
pub fn dense(input: &Tensor, p: &DenseParams) -> Result<Tensor, LayerError> {
    if input.rank() != 1 || input.len() != p.in_features() {
        return Err(p.weight.mismatch("dense", input).into());
    }
    let n_in = p.in_features();
    let w = p.weight.data();
    let x = input.data();
    let out = p
        .bias
        .data()
        .iter()
        .enumerate()
        .map(|(o, &b)| {
            let row = &w[o * n_in..(o + 1) * n_in];
            row.iter().zip(x).fold(0.0, |acc, (&wv, &xv)| acc + wv * xv) + b
        })
        .collect();
    Ok(Tensor::vector(out))
}

pub fn dense_backward(input: &Tensor, p: &DenseParams, d_output: &Tensor) -> Result<LayerGrad, LayerError> {
    if input.rank() != 1 || input.len() != p.in_features() {
        return Err(p.weight.mismatch("dense_backward", input).into());
    }
    if d_output.dims() != p.bias.dims() {
        return Err(p.bias.mismatch("dense_backward", d_output).into());
    }
    let n_in = p.in_features();
    let w = p.weight.data();
    let x = input.data();
    let mut d_input = vec![0.0; n_in];
    let mut d_weight = vec![0.0; w.len()];
    for (o, &g) in d_output.data().iter().enumerate() {
        let row = &w[o * n_in..(o + 1) * n_in];
        let d_row = &mut d_weight[o * n_in..(o + 1) * n_in];
        for i in 0..n_in {
            d_row[i] = g * x[i];
            d_input[i] += row[i] * g;
        }
    }
    Ok(LayerGrad {
        d_input: Tensor::vector(d_input),
        d_params: vec![
            Tensor::from_shape(p.weight.shape().clone(), d_weight)?,
            d_output.clone(),
        ],
    })
}

/// Numerically stable softmax of a rank-1 tensor.
pub fn softmax(input: &Tensor) -> Result<Tensor, LayerError> {
    if input.rank() != 1 {
        return Err(TensorError::Rank {
            op: "softmax",
            expected: 1,
            got: input.shape().clone(),
        }
        .into());
    }
    if !input.is_finite() {
        return Err(LayerError::NonFinite("softmax"));
    }
    let max = input.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = input.data().iter().map(|&v| libm::exp(v - max)).collect();
    let total = exps.iter().fold(0.0, |a, &v| a + v);
    Ok(Tensor::vector(exps.into_iter().map(|e| e / total).collect()))
}

/// Vector-Jacobian product of softmax: given `v = softmax(β)` and `dL/dv`,
/// returns `dL/dβ = v ⊙ (dv − ⟨dv, v⟩)`.
pub fn softmax_backward(output: &Tensor, d_output: &Tensor) -> Result<Tensor, LayerError> {
    if output.shape() != d_output.shape() {
        return Err(output.mismatch("softmax_backward", d_output).into());
    }
    let dot = output
        .data()
        .iter()
        .zip(d_output.data())
        .fold(0.0, |a, (&v, &g)| a + v * g);
    let data = output
        .data()
        .iter()
        .zip(d_output.data())
        .map(|(&v, &g)| v * (g - dot))
        .collect();
    Ok(Tensor::from_shape(output.shape().clone(), data)?)
}

/// Position of the single 1 in a one-hot vector.
pub fn one_hot_index(onehot: &Tensor) -> Result<usize, LayerError> {
    let d = onehot.data();
    let ones = d.iter().filter(|&&v| v == 1.0).count();
    let zeros = d.iter().filter(|&&v| v == 0.0).count();
    if onehot.rank() != 1 || ones != 1 || ones + zeros != d.len() {
        return Err(LayerError::OneHot(d.to_vec()));
    }
    Ok(d.iter().position(|&v| v == 1.0).expect("counted above"))
}

/// Softmax cross-entropy against a one-hot target. Returns the loss
/// `-log softmax(logits)[target]` and `softmax(logits) - onehot`.
pub fn softmax_cross_entropy(logits: &Tensor, onehot: &Tensor) -> Result<(f64, Tensor), LayerError> {
    if logits.shape() != onehot.shape() {
        return Err(logits.mismatch("softmax_cross_entropy", onehot).into());
    }
    let target = one_hot_index(onehot)?;
    cross_entropy_at(logits, target)
}

pub(crate) fn cross_entropy_at(logits: &Tensor, target: usize) -> Result<(f64, Tensor), LayerError> {
    let probs = softmax(logits)?;
    let d = logits.data();
    let max = d.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + libm::log(d.iter().fold(0.0, |a, &v| a + libm::exp(v - max)));
    let loss = lse - d[target];
    let mut grad = probs.into_data();
    grad[target] -= 1.0;
    Ok((loss, Tensor::vector(grad)))
}

/// `cross_entropy - ln(K)` for `K` classes, as `log1p(mean(expm1(z_j - z_t)))`.
/// Near uniform logits the value is small, so it carries rounding error at
/// its own scale rather than at the scale of `ln(K)`.
pub(crate) fn centered_cross_entropy(logits: &Tensor, target: usize) -> f64 {
    let d = logits.data();
    let mean = d.iter().map(|&v| libm::expm1(v - d[target])).sum::<f64>() / d.len() as f64;
    libm::log1p(mean)
}

/// Class index with the highest logit (lowest index on ties).
pub fn harden(logits: &Tensor) -> usize {
    argmax_slice(logits.data()).unwrap_or(0)
}
