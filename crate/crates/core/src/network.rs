//! The four models: the 3D-CNN representation learner, the scene
//! understanding heads, multiplicative fusion and the drowsiness detector.
//!
//! All parameters live in [`Params`], which doubles as the gradient container
//! (a gradient is a `Params` of the same layout). Registry order is stable and
//! is what checkpoints, SGD and the gradient checker iterate over.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::labels::{scene_one_hots, Condition, ConditionLabels, Drowsiness, LabelError, SceneKind};
use crate::layers::{
    centered_cross_entropy, conv3d, conv3d_backward, cross_entropy_at, dense, dense_backward, harden, maxpool3d,
    maxpool3d_backward, one_hot_index, relu, relu_backward, softmax, softmax_backward, Conv3dParams, DenseParams,
    LayerError, PoolIndices,
};
use crate::tensor::{Shape, Tensor, TensorError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NetworkError {
    #[error(transparent)]
    Layer(#[from] LayerError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Label(#[from] LabelError),
    #[error("invalid network config: {0}")]
    Config(String),
    #[error("clip extents {got} do not match network input {expected}")]
    InputExtents { expected: Shape, got: Shape },
    #[error("parameter registry mismatch: {0}")]
    Registry(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub channels: usize,
    pub kernel: [usize; 3],
    #[serde(default = "unit_stride")]
    pub stride: [usize; 3],
}

fn unit_stride() -> [usize; 3] {
    [1, 1, 1]
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    /// `[channels, T, H, W]` of an input clip.
    pub input: [usize; 4],
    pub conv: Vec<ConvSpec>,
    /// 0-based indices of conv layers followed by a max pool.
    pub pool_after: Vec<usize>,
    pub pool_window: [usize; 3],
    /// Widths of the two hidden layers of every scene head.
    pub head_hidden: [usize; 2],
    /// Common projection width `d` of the fusion product.
    pub fusion_width: usize,
    /// Width `M` of the condition-adaptive representation.
    pub fusion_out: usize,
    pub detector_hidden: Vec<usize>,
    pub seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        let c = |channels, kernel| ConvSpec {
            channels,
            kernel,
            stride: [1; 3],
        };
        NetworkConfig {
            input: [1, 5, 32, 32],
            conv: vec![
                c(8, [3, 3, 3]),
                c(8, [3, 3, 3]),
                c(16, [1, 3, 3]),
                c(16, [1, 3, 3]),
                c(32, [1, 1, 1]),
                c(32, [1, 1, 1]),
            ],
            pool_after: vec![1, 3],
            pool_window: [1, 2, 2],
            head_hidden: [128, 64],
            fusion_width: 64,
            fusion_out: 64,
            detector_hidden: vec![64],
            seed: 0,
        }
    }
}

impl NetworkConfig {
    /// Small configuration for finite-difference checks: input `[1,5,8,8]`,
    /// every width at most 8, under 2k parameters.
    pub fn tiny() -> Self {
        let c = |channels, kernel| ConvSpec {
            channels,
            kernel,
            stride: [1; 3],
        };
        NetworkConfig {
            input: [1, 5, 8, 8],
            conv: vec![
                c(4, [3, 3, 3]),
                c(4, [3, 3, 3]),
                c(6, [1, 1, 1]),
                c(6, [1, 1, 1]),
                c(8, [1, 1, 1]),
                c(8, [1, 1, 1]),
            ],
            pool_after: vec![1, 3],
            pool_window: [1, 2, 2],
            head_hidden: [8, 8],
            fusion_width: 8,
            fusion_out: 8,
            detector_hidden: vec![8],
            seed: 0,
        }
    }

    /// Default architecture on full-resolution `224 x 224` frames.
    pub fn full_resolution() -> Self {
        NetworkConfig {
            input: [1, 5, 224, 224],
            ..Self::default()
        }
    }

    /// Feature-map extents after every conv layer (post-pool where a pool
    /// follows). The last entry is the representation shape.
    pub fn layer_shapes(&self) -> Result<Vec<[usize; 4]>, NetworkError> {
        if self.input.contains(&0) {
            return Err(NetworkError::Config("input extents must be positive".into()));
        }
        if self.conv.is_empty() {
            return Err(NetworkError::Config("at least one conv layer required".into()));
        }
        if let Some(&i) = self.pool_after.iter().find(|&&i| i >= self.conv.len()) {
            return Err(NetworkError::Config(format!("pool after missing conv layer {i}")));
        }
        let mut shape = self.input;
        let mut out = Vec::with_capacity(self.conv.len());
        for (i, spec) in self.conv.iter().enumerate() {
            if spec.channels == 0 {
                return Err(NetworkError::Config(format!("conv{} has zero channels", i + 1)));
            }
            let mut next = [spec.channels, 0, 0, 0];
            for axis in 0..3 {
                let (ext, k, s) = (shape[axis + 1], spec.kernel[axis], spec.stride[axis]);
                if k == 0 || s == 0 || k > ext || (ext - k) % s != 0 {
                    return Err(NetworkError::Config(format!(
                        "conv{} kernel {:?} stride {:?} does not fit input {:?}",
                        i + 1,
                        spec.kernel,
                        spec.stride,
                        shape
                    )));
                }
                next[axis + 1] = (ext - k) / s + 1;
            }
            if self.pool_after.contains(&i) {
                for axis in 0..3 {
                    let w = self.pool_window[axis];
                    if w == 0 || next[axis + 1] % w != 0 {
                        return Err(NetworkError::Config(format!(
                            "pool window {:?} does not divide conv{} output {:?}",
                            self.pool_window,
                            i + 1,
                            next
                        )));
                    }
                    next[axis + 1] /= w;
                }
            }
            out.push(next);
            shape = next;
        }
        Ok(out)
    }

    pub fn representation_shape(&self) -> Result<[usize; 4], NetworkError> {
        Ok(*self.layer_shapes()?.last().expect("non-empty"))
    }

    pub fn validate(&self) -> Result<(), NetworkError> {
        self.layer_shapes()?;
        if self.head_hidden.contains(&0)
            || self.fusion_width == 0
            || self.fusion_out == 0
            || self.detector_hidden.contains(&0)
        {
            return Err(NetworkError::Config("dense widths must be positive".into()));
        }
        Ok(())
    }

    /// Multiply-accumulate counts of one forward pass.
    pub fn op_count(&self) -> Result<OpCount, NetworkError> {
        let shapes = self.layer_shapes()?;
        let mut conv = Vec::with_capacity(self.conv.len());
        let mut conv_bound = Vec::with_capacity(self.conv.len());
        let mut in_shape = self.input;
        for (i, spec) in self.conv.iter().enumerate() {
            let kvol: usize = spec.kernel.iter().product();
            let mut out_units = spec.channels;
            for axis in 0..3 {
                out_units *= (in_shape[axis + 1] - spec.kernel[axis]) / spec.stride[axis] + 1;
            }
            conv.push(out_units * in_shape[0] * kvol);
            let in_vol: usize = in_shape[1..].iter().product();
            conv_bound.push(in_vol * kvol * in_shape[0] * spec.channels);
            in_shape = shapes[i];
        }
        let features: usize = in_shape.iter().product();
        let mut dense_macs = 0;
        for kind in SceneKind::ALL {
            let widths = [features, self.head_hidden[0], self.head_hidden[1], kind.classes()];
            dense_macs += widths.windows(2).map(|w| w[0] * w[1]).sum::<usize>();
        }
        let scene_inputs: usize = SceneKind::ALL.iter().map(|k| k.classes()).sum();
        let fusion =
            self.fusion_width * (features + scene_inputs) + 4 * self.fusion_width + self.fusion_out * self.fusion_width;
        let mut det_widths = vec![self.fusion_out];
        det_widths.extend(&self.detector_hidden);
        det_widths.push(Drowsiness::count());
        dense_macs += det_widths.windows(2).map(|w| w[0] * w[1]).sum::<usize>();
        Ok(OpCount {
            conv,
            conv_bound,
            dense: dense_macs,
            fusion,
        })
    }
}

/// Forward-pass cost accounting.
///
/// `conv_bound[i]` is `W_i H_i D_i n_i m_i k_i` scaled by the channel counts:
/// input volume times kernel volume times in/out channels. The exact count
/// `conv[i]` only visits valid output positions, so `conv[i] <= conv_bound[i]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCount {
    pub conv: Vec<usize>,
    pub conv_bound: Vec<usize>,
    pub dense: usize,
    pub fusion: usize,
}

impl OpCount {
    pub fn total(&self) -> usize {
        self.conv.iter().sum::<usize>() + self.dense + self.fusion
    }
}

/// Coarse grouping of parameters, used by phase filters and reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ParamGroup {
    Representation,
    Scene(SceneKind),
    Fusion,
    Detector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionParams {
    /// `[d, W_a·H_a·D_a·C_a]`
    pub w_fea: Tensor,
    /// Condition projections `[d, L]`, ordered as [`SceneKind::ALL`].
    pub w_scene: [Tensor; 4],
    /// `[M, d]`
    pub w_fu: Tensor,
    /// `[M]`
    pub b_fu: Tensor,
}

/// Every trainable tensor of the framework.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub rep: Vec<Conv3dParams>,
    /// Three dense stages per head, ordered as [`SceneKind::ALL`].
    pub heads: [Vec<DenseParams>; 4],
    pub fusion: FusionParams,
    pub detector: Vec<DenseParams>,
}

impl Params {
    /// All-zero parameters with the layout of `config`.
    pub fn zeros(config: &NetworkConfig) -> Result<Params, NetworkError> {
        config.validate()?;
        let z = |dims: Vec<usize>| Tensor::zeros(dims).map_err(NetworkError::from);
        let dense_zero = |i: usize, o: usize| -> Result<DenseParams, NetworkError> {
            Ok(DenseParams::new(z(vec![o, i])?, z(vec![o])?)?)
        };

        let mut rep = Vec::with_capacity(config.conv.len());
        let mut in_ch = config.input[0];
        for spec in &config.conv {
            let [kd, kh, kw] = spec.kernel;
            rep.push(Conv3dParams::new(
                z(vec![spec.channels, in_ch, kd, kh, kw])?,
                z(vec![spec.channels])?,
                spec.stride,
            )?);
            in_ch = spec.channels;
        }

        let features: usize = config.representation_shape()?.iter().product();
        let [h1, h2] = config.head_hidden;
        let head = |classes: usize| -> Result<Vec<DenseParams>, NetworkError> {
            Ok(vec![
                dense_zero(features, h1)?,
                dense_zero(h1, h2)?,
                dense_zero(h2, classes)?,
            ])
        };
        let heads = [
            head(SceneKind::ALL[0].classes())?,
            head(SceneKind::ALL[1].classes())?,
            head(SceneKind::ALL[2].classes())?,
            head(SceneKind::ALL[3].classes())?,
        ];

        let d = config.fusion_width;
        let fusion = FusionParams {
            w_fea: z(vec![d, features])?,
            w_scene: [
                z(vec![d, SceneKind::ALL[0].classes()])?,
                z(vec![d, SceneKind::ALL[1].classes()])?,
                z(vec![d, SceneKind::ALL[2].classes()])?,
                z(vec![d, SceneKind::ALL[3].classes()])?,
            ],
            w_fu: z(vec![config.fusion_out, d])?,
            b_fu: z(vec![config.fusion_out])?,
        };

        let mut detector = Vec::new();
        let mut width = config.fusion_out;
        for &h in &config.detector_hidden {
            detector.push(dense_zero(width, h)?);
            width = h;
        }
        detector.push(dense_zero(width, Drowsiness::count())?);

        Ok(Params {
            rep,
            heads,
            fusion,
            detector,
        })
    }

    /// A zero tensor for every parameter, used as a gradient accumulator.
    pub fn zeros_like(&self) -> Params {
        let mut out = self.clone();
        for t in out.tensors_mut() {
            t.data_mut().fill(0.0);
        }
        out
    }

    /// Registry: `(name, group)` for every tensor, in [`Params::tensors`] order.
    pub fn registry(&self) -> Vec<(String, ParamGroup)> {
        let mut out = Vec::new();
        for i in 0..self.rep.len() {
            for part in ["kernels", "bias"] {
                out.push((format!("rep.conv{}.{part}", i + 1), ParamGroup::Representation));
            }
        }
        for kind in SceneKind::ALL {
            for stage in ["h1", "h2", "out"] {
                for part in ["weight", "bias"] {
                    out.push((
                        format!("head.{}.{stage}.{part}", kind.short_name()),
                        ParamGroup::Scene(kind),
                    ));
                }
            }
        }
        out.push(("fusion.w_fea".into(), ParamGroup::Fusion));
        for kind in SceneKind::ALL {
            out.push((format!("fusion.w_{}", kind.short_name()), ParamGroup::Fusion));
        }
        out.push(("fusion.w_fu".into(), ParamGroup::Fusion));
        out.push(("fusion.b_fu".into(), ParamGroup::Fusion));
        let n_hidden = self.detector.len() - 1;
        for i in 0..self.detector.len() {
            let stage = if i == n_hidden {
                String::from("out")
            } else {
                format!("h{}", i + 1)
            };
            for part in ["weight", "bias"] {
                out.push((format!("det.{stage}.{part}"), ParamGroup::Detector));
            }
        }
        out
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for c in &self.rep {
            out.push(&c.kernels);
            out.push(&c.bias);
        }
        for head in &self.heads {
            for l in head {
                out.push(&l.weight);
                out.push(&l.bias);
            }
        }
        out.push(&self.fusion.w_fea);
        out.extend(self.fusion.w_scene.iter());
        out.push(&self.fusion.w_fu);
        out.push(&self.fusion.b_fu);
        for l in &self.detector {
            out.push(&l.weight);
            out.push(&l.bias);
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for c in &mut self.rep {
            out.push(&mut c.kernels);
            out.push(&mut c.bias);
        }
        for head in &mut self.heads {
            for l in head {
                out.push(&mut l.weight);
                out.push(&mut l.bias);
            }
        }
        out.push(&mut self.fusion.w_fea);
        out.extend(self.fusion.w_scene.iter_mut());
        out.push(&mut self.fusion.w_fu);
        out.push(&mut self.fusion.b_fu);
        for l in &mut self.detector {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// FNV-1a over the bit patterns of every value, in registry order.
    pub fn checksum(&self) -> u64 {
        crate::hash::fnv1a_f64(self.tensors().into_iter().flat_map(|t| t.data()))
    }

    /// Checksum restricted to parameters whose group passes `filter`.
    pub fn checksum_where(&self, filter: impl Fn(ParamGroup) -> bool) -> u64 {
        let groups = self.registry();
        crate::hash::fnv1a_f64(
            self.tensors()
                .into_iter()
                .zip(groups)
                .filter(|(_, (_, g))| filter(*g))
                .flat_map(|(t, _)| t.data()),
        )
    }

    fn glorot(&mut self, rng: &mut ChaCha8Rng) {
        let groups = self.registry();
        for (t, (name, _)) in self.tensors_mut().into_iter().zip(groups) {
            if name.ends_with("bias") || name.ends_with("b_fu") {
                continue;
            }
            if is_condition_projection(&name) {
                for v in t.data_mut() {
                    *v = 1.0 + rng.random_range(-GATE_INIT_SPREAD..GATE_INIT_SPREAD);
                }
                continue;
            }
            let (fan_in, fan_out) = match *t.dims() {
                [o, i] => (i, o),
                [o, i, kd, kh, kw] => (i * kd * kh * kw, o * kd * kh * kw),
                _ => unreachable!("weights are rank 2 or 5"),
            };
            let s = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
            for v in t.data_mut() {
                *v = rng.random_range(-s..s);
            }
        }
    }
}

/// Half-width of the uniform noise around 1 used to initialize the
/// condition projections `W_gl, W_h, W_m, W_e`. A one-hot input selects one
/// column, so with Glorot scaling each factor of the five-way product would
/// be about 0.2 and the product, hence every fusion gradient, would vanish.
/// Starting near 1 keeps the product at the scale of `W_fea·a`; the spread
/// lets each condition reweight it from the first joint step. With a
/// narrow spread the detector commits to clusters of `a` alone, and the
/// fusion softmax saturates before the conditions can separate them.
pub const GATE_INIT_SPREAD: f64 = 0.5;

fn is_condition_projection(name: &str) -> bool {
    matches!(name, "fusion.w_gl" | "fusion.w_h" | "fusion.w_m" | "fusion.w_e")
}

/// Network output for one clip, end to end.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    /// Hardened scene categories (0-based), ordered as [`SceneKind::ALL`].
    pub scene: [usize; 4],
    pub drowsy_class: usize,
    /// `[non-drowsiness, drowsiness]`
    pub probabilities: [f64; 2],
}

impl Prediction {
    pub fn drowsy_probability(&self) -> f64 {
        self.probabilities[1]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionOutput {
    /// Unnormalized condition-adaptive representation.
    pub beta: Tensor,
    /// `softmax(beta)`
    pub v: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub logits: Tensor,
    pub probabilities: Tensor,
    pub class: usize,
}

/// Per-clip loss terms (before any weighting).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ClipLosses {
    pub scene: [f64; 4],
    pub detection: f64,
}

impl ClipLosses {
    pub fn scene_sum(&self) -> f64 {
        self.scene.iter().sum()
    }
}

/// Intermediate values of the representation learner.
#[derive(Debug, Clone)]
pub struct RepCache {
    conv_inputs: Vec<Tensor>,
    pre_activations: Vec<Tensor>,
    pools: Vec<Option<(Shape, PoolIndices)>>,
}

struct MlpCache {
    inputs: Vec<Tensor>,
    pre_activations: Vec<Tensor>,
}

struct FusionCache {
    a: Tensor,
    scene: [Tensor; 4],
    /// `W_fea a`, then the four condition projections.
    projections: [Tensor; 5],
    product: Tensor,
    v: Tensor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    config: NetworkConfig,
    params: Params,
}

impl Network {
    /// Glorot-uniform weights and zero biases, except the four condition
    /// projections of the fusion stage, which start as near-unit gates
    /// (see [`GATE_INIT_SPREAD`]). Seeded by `config.seed`.
    pub fn new(config: NetworkConfig) -> Result<Network, NetworkError> {
        let mut params = Params::zeros(&config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        params.glorot(&mut rng);
        Ok(Network { config, params })
    }

    pub fn zeros(config: NetworkConfig) -> Result<Network, NetworkError> {
        let params = Params::zeros(&config)?;
        Ok(Network { config, params })
    }

    /// Rebuild from `(name, tensor)` pairs; every registry entry must appear
    /// exactly once with its exact shape.
    pub fn from_registry(config: NetworkConfig, entries: Vec<(String, Tensor)>) -> Result<Network, NetworkError> {
        let mut params = Params::zeros(&config)?;
        let names = params.registry();
        if names.len() != entries.len() {
            return Err(NetworkError::Registry(format!(
                "expected {} entries, got {}",
                names.len(),
                entries.len()
            )));
        }
        for ((slot, (name, _)), (got_name, tensor)) in params.tensors_mut().into_iter().zip(names).zip(entries) {
            if got_name != name {
                return Err(NetworkError::Registry(format!("expected {name}, got {got_name}")));
            }
            if tensor.shape() != slot.shape() {
                return Err(NetworkError::Registry(format!(
                    "{name}: expected shape {}, got {}",
                    slot.shape(),
                    tensor.shape()
                )));
            }
            *slot = tensor;
        }
        Ok(Network { config, params })
    }

    pub fn from_params(config: NetworkConfig, params: Params) -> Result<Network, NetworkError> {
        let template = Params::zeros(&config)?;
        for (a, b) in template.tensors().into_iter().zip(params.tensors()) {
            if a.shape() != b.shape() {
                return Err(NetworkError::Registry(format!("shape {} vs {}", a.shape(), b.shape())));
            }
        }
        Ok(Network { config, params })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    pub fn input_shape(&self) -> Shape {
        Shape::new(self.config.input.to_vec()).expect("validated config")
    }

    fn check_clip(&self, clip: &Tensor) -> Result<(), NetworkError> {
        if clip.dims() != self.config.input {
            return Err(NetworkError::InputExtents {
                expected: self.input_shape(),
                got: clip.shape().clone(),
            });
        }
        Ok(())
    }

    /// Spatio-temporal representation: ReLU activations of the last conv
    /// layer, shape `[C_a, D_a, H_a, W_a]`.
    pub fn rep_forward(&self, clip: &Tensor) -> Result<Tensor, NetworkError> {
        Ok(self.rep_forward_cached(clip)?.0)
    }

    pub fn rep_forward_cached(&self, clip: &Tensor) -> Result<(Tensor, RepCache), NetworkError> {
        self.check_clip(clip)?;
        let n = self.params.rep.len();
        let mut cache = RepCache {
            conv_inputs: Vec::with_capacity(n),
            pre_activations: Vec::with_capacity(n),
            pools: Vec::with_capacity(n),
        };
        let mut x = clip.clone();
        for (i, layer) in self.params.rep.iter().enumerate() {
            let z = conv3d(&x, layer)?;
            let mut y = relu(&z);
            let pool = if self.config.pool_after.contains(&i) {
                let (pooled, idx) = maxpool3d(&y, self.config.pool_window)?;
                let shape = y.shape().clone();
                y = pooled;
                Some((shape, idx))
            } else {
                None
            };
            cache.conv_inputs.push(x);
            cache.pre_activations.push(z);
            cache.pools.push(pool);
            x = y;
        }
        Ok((x, cache))
    }

    /// Backpropagates `d_a` through the representation learner, adding the
    /// parameter gradients into `grads`.
    pub fn rep_backward(&self, cache: &RepCache, d_a: Tensor, grads: &mut Params) -> Result<(), NetworkError> {
        let mut d = d_a;
        for i in (0..self.params.rep.len()).rev() {
            if let Some((shape, idx)) = &cache.pools[i] {
                d = maxpool3d_backward(shape, idx, &d)?;
            }
            let dz = relu_backward(&cache.pre_activations[i], &d)?;
            let g = conv3d_backward(&cache.conv_inputs[i], &self.params.rep[i], &dz)?;
            grads.rep[i].kernels.axpy(1.0, &g.d_params[0])?;
            grads.rep[i].bias.axpy(1.0, &g.d_params[1])?;
            d = g.d_input;
        }
        Ok(())
    }

    fn features(&self) -> usize {
        self.params.fusion.w_fea.dims()[1]
    }

    fn check_flat(&self, a: &Tensor) -> Result<Tensor, NetworkError> {
        if a.len() != self.features() {
            return Err(TensorError::ShapeMismatch {
                op: "representation",
                left: Shape::new(vec![self.features()])?,
                right: a.shape().clone(),
            }
            .into());
        }
        Ok(a.flatten())
    }

    /// Logits of the four scene heads (lengths 5, 3, 3, 2). `a` may be the
    /// representation tensor or its flattening.
    pub fn scene_forward(&self, a: &Tensor) -> Result<[Tensor; 4], NetworkError> {
        let x = self.check_flat(a)?;
        let mut out: [Tensor; 4] = [(); 4].map(|_| Tensor::vector(vec![0.0]));
        for (slot, head) in out.iter_mut().zip(&self.params.heads) {
            *slot = mlp_forward(head, &x)?.0;
        }
        Ok(out)
    }

    /// Multiplicative fusion followed by softmax normalization. `scene` holds
    /// one-hot vectors: ground truth in training, hardened predictions at
    /// inference.
    pub fn fuse(&self, a: &Tensor, scene: &[Tensor; 4]) -> Result<FusionOutput, NetworkError> {
        let x = self.check_flat(a)?;
        let (beta, cache) = self.fuse_cached(x, scene)?;
        Ok(FusionOutput { beta, v: cache.v })
    }

    fn fuse_cached(&self, a: Tensor, scene: &[Tensor; 4]) -> Result<(Tensor, FusionCache), NetworkError> {
        let f = &self.params.fusion;
        for (t, kind) in scene.iter().zip(SceneKind::ALL) {
            if t.len() != kind.classes() {
                return Err(LayerError::OneHot(t.data().into()).into());
            }
            one_hot_index(t)?;
        }
        let col = |t: &Tensor| t.reshape(vec![t.len(), 1]);
        let proj = |w: &Tensor, x: &Tensor| -> Result<Tensor, NetworkError> { Ok(w.matmul(&col(x)?)?.flatten()) };
        let projections = [
            proj(&f.w_fea, &a)?,
            proj(&f.w_scene[0], &scene[0])?,
            proj(&f.w_scene[1], &scene[1])?,
            proj(&f.w_scene[2], &scene[2])?,
            proj(&f.w_scene[3], &scene[3])?,
        ];
        let mut product = projections[0].clone();
        for p in &projections[1..] {
            product = product.ewise_mul(p)?;
        }
        let beta = proj(&f.w_fu, &product)?.add(&f.b_fu)?;
        let v = softmax(&beta)?;
        Ok((
            beta,
            FusionCache {
                a,
                scene: scene.clone(),
                projections,
                product,
                v,
            },
        ))
    }

    fn fusion_backward(
        &self,
        cache: &FusionCache,
        d_v: &Tensor,
        grads: &mut FusionParams,
    ) -> Result<Tensor, NetworkError> {
        let f = &self.params.fusion;
        let d_beta = softmax_backward(&cache.v, d_v)?;
        grads.b_fu.axpy(1.0, &d_beta)?;
        outer_add(&mut grads.w_fu, &d_beta, &cache.product);
        let d_product = matvec_t(&f.w_fu, &d_beta);

        let mut d_a = None;
        for k in 0..5 {
            // d(product)/d(p_k) = product of the other four factors
            let mut d_pk = d_product.clone();
            for (j, p) in cache.projections.iter().enumerate() {
                if j != k {
                    d_pk = d_pk.ewise_mul(p)?;
                }
            }
            if k == 0 {
                outer_add(&mut grads.w_fea, &d_pk, &cache.a);
                d_a = Some(matvec_t(&f.w_fea, &d_pk));
            } else {
                outer_add(&mut grads.w_scene[k - 1], &d_pk, &cache.scene[k - 1]);
            }
        }
        Ok(d_a.expect("k = 0 visited"))
    }

    /// Detector logits and softmax probabilities over
    /// `[non-drowsiness, drowsiness]`.
    pub fn detect(&self, v: &Tensor) -> Result<Detection, NetworkError> {
        let m = self.config.fusion_out;
        if v.rank() != 1 || v.len() != m {
            return Err(TensorError::ShapeMismatch {
                op: "detect",
                left: Shape::new(vec![m])?,
                right: v.shape().clone(),
            }
            .into());
        }
        let logits = mlp_forward(&self.params.detector, v)?.0;
        let probabilities = softmax(&logits)?;
        let class = harden(&logits);
        Ok(Detection {
            logits,
            probabilities,
            class,
        })
    }

    /// Full inference: representation, scene heads, argmax hardening, fusion
    /// and detection.
    pub fn predict_clip(&self, clip: &Tensor) -> Result<Prediction, NetworkError> {
        let a = self.rep_forward(clip)?.flatten();
        let logits = self.scene_forward(&a)?;
        let scene = [
            harden(&logits[0]),
            harden(&logits[1]),
            harden(&logits[2]),
            harden(&logits[3]),
        ];
        let fused = self.fuse(&a, &scene_one_hots(scene)?)?;
        let det = self.detect(&fused.v)?;
        Ok(Prediction {
            scene,
            drowsy_class: det.class,
            probabilities: [det.probabilities.data()[0], det.probabilities.data()[1]],
        })
    }

    /// Forward and backward pass for one labeled clip.
    ///
    /// Scene cross-entropies are scaled by `scene_weight` and the detection
    /// cross-entropy by `detection_weight` before backpropagation; gradients
    /// are added into `grads`. A branch whose weight is exactly zero is not
    /// backpropagated at all, so its parameters receive no contribution.
    /// Fusion consumes the ground-truth scene one-hots.
    pub fn accumulate_gradients(
        &self,
        clip: &Tensor,
        labels: &ConditionLabels,
        scene_weight: f64,
        detection_weight: f64,
        grads: &mut Params,
    ) -> Result<ClipLosses, NetworkError> {
        let (a, rep_cache) = self.rep_forward_cached(clip)?;
        let rep_shape = a.shape().clone();
        let a = a.flatten();
        let mut d_a = Tensor::zeros_like(&a);
        let mut losses = ClipLosses::default();

        for (k, target) in labels.scene_indices().into_iter().enumerate() {
            let head = &self.params.heads[k];
            let (logits, cache) = mlp_forward(head, &a)?;
            let (loss, d_logits) = cross_entropy_at(&logits, target)?;
            losses.scene[k] = loss;
            if scene_weight != 0.0 {
                let d_logits = d_logits.map(|g| g * scene_weight);
                let d_in = mlp_backward(head, &cache, d_logits, &mut grads.heads[k])?;
                d_a.axpy(1.0, &d_in)?;
            }
        }

        let (_, fusion_cache) = self.fuse_cached(a, &labels.scene_one_hots())?;
        let (det_logits, det_cache) = mlp_forward(&self.params.detector, &fusion_cache.v)?;
        let (det_loss, d_det) = cross_entropy_at(&det_logits, labels.drowsy.index())?;
        losses.detection = det_loss;
        if detection_weight != 0.0 {
            let d_det = d_det.map(|g| g * detection_weight);
            let d_v = mlp_backward(&self.params.detector, &det_cache, d_det, &mut grads.detector)?;
            let d_in = self.fusion_backward(&fusion_cache, &d_v, &mut grads.fusion)?;
            d_a.axpy(1.0, &d_in)?;
        }

        if scene_weight != 0.0 || detection_weight != 0.0 {
            let d_a = Tensor::from_shape(rep_shape, d_a.into_data())?;
            self.rep_backward(&rep_cache, d_a, grads)?;
        }
        Ok(losses)
    }

    /// Unweighted loss terms for one clip (no backward pass).
    pub fn clip_losses(&self, clip: &Tensor, labels: &ConditionLabels) -> Result<ClipLosses, NetworkError> {
        self.clip_losses_with(clip, labels, |z, t| Ok(cross_entropy_at(z, t)?.0))
    }

    /// [`Network::clip_losses`] with each term less `ln(K)` of its head.
    /// Same derivatives, smaller values, so finite differences of it carry
    /// less rounding noise.
    pub fn centered_clip_losses(&self, clip: &Tensor, labels: &ConditionLabels) -> Result<ClipLosses, NetworkError> {
        self.clip_losses_with(clip, labels, |z, t| Ok(centered_cross_entropy(z, t)))
    }

    fn clip_losses_with(
        &self,
        clip: &Tensor,
        labels: &ConditionLabels,
        ce: impl Fn(&Tensor, usize) -> Result<f64, NetworkError>,
    ) -> Result<ClipLosses, NetworkError> {
        let a = self.rep_forward(clip)?.flatten();
        let logits = self.scene_forward(&a)?;
        let mut losses = ClipLosses::default();
        for (k, target) in labels.scene_indices().into_iter().enumerate() {
            losses.scene[k] = ce(&logits[k], target)?;
        }
        let fused = self.fuse(&a, &labels.scene_one_hots())?;
        let det = mlp_forward(&self.params.detector, &fused.v)?.0;
        losses.detection = ce(&det, labels.drowsy.index())?;
        Ok(losses)
    }
}

/// Dense stack with ReLU after every layer but the last.
fn mlp_forward(layers: &[DenseParams], x: &Tensor) -> Result<(Tensor, MlpCache), NetworkError> {
    let mut cache = MlpCache {
        inputs: Vec::with_capacity(layers.len()),
        pre_activations: Vec::with_capacity(layers.len()),
    };
    let mut h = x.clone();
    for (i, layer) in layers.iter().enumerate() {
        let z = dense(&h, layer)?;
        cache.inputs.push(h);
        h = if i + 1 < layers.len() { relu(&z) } else { z.clone() };
        cache.pre_activations.push(z);
    }
    Ok((h, cache))
}

fn mlp_backward(
    layers: &[DenseParams],
    cache: &MlpCache,
    d_out: Tensor,
    grads: &mut [DenseParams],
) -> Result<Tensor, NetworkError> {
    let mut d = d_out;
    for i in (0..layers.len()).rev() {
        if i + 1 < layers.len() {
            d = relu_backward(&cache.pre_activations[i], &d)?;
        }
        let g = dense_backward(&cache.inputs[i], &layers[i], &d)?;
        grads[i].weight.axpy(1.0, &g.d_params[0])?;
        grads[i].bias.axpy(1.0, &g.d_params[1])?;
        d = g.d_input;
    }
    Ok(d)
}

/// `acc += u vᵀ` for `acc` of shape `[u.len(), v.len()]`.
fn outer_add(acc: &mut Tensor, u: &Tensor, v: &Tensor) {
    let n = v.len();
    let vd = v.data();
    for (row, &ui) in acc.data_mut().chunks_exact_mut(n).zip(u.data()) {
        if ui == 0.0 {
            continue;
        }
        for (r, &vj) in row.iter_mut().zip(vd) {
            *r += ui * vj;
        }
    }
}

/// `wᵀ g` for `w` of shape `[out, in]`.
fn matvec_t(w: &Tensor, g: &Tensor) -> Tensor {
    let n = w.dims()[1];
    let mut out = vec![0.0; n];
    for (row, &gi) in w.data().chunks_exact(n).zip(g.data()) {
        for (o, &wv) in out.iter_mut().zip(row) {
            *o += wv * gi;
        }
    }
    Tensor::vector(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labels::{Eye, GlassesIllum, Head, Mouth};

    fn random_clip(config: &NetworkConfig, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = config.input.iter().product();
        Tensor::new(
            config.input.to_vec(),
            (0..n).map(|_| rng.random_range(0.0..1.0)).collect(),
        )
        .unwrap()
    }

    fn labels() -> ConditionLabels {
        ConditionLabels {
            glasses_illum: GlassesIllum::NightGlasses,
            head: Head::Nodding,
            mouth: Mouth::Talking,
            eye: Eye::Sleepy,
            drowsy: Drowsiness::Drowsy,
        }
    }

    #[test]
    fn default_geometry() {
        let c = NetworkConfig::default();
        assert_eq!(c.representation_shape().unwrap(), [32, 1, 5, 5]);
        assert_eq!(c.conv.len(), 6);
        assert_eq!(c.pool_after.len(), 2);
        assert_eq!(
            NetworkConfig::full_resolution().representation_shape().unwrap(),
            [32, 1, 53, 53]
        );
        assert!(NetworkConfig::tiny().validate().is_ok());
    }

    /// Shape propagation by direct arithmetic on the decided architecture.
    #[test]
    fn representation_shape_oracle() {
        let (mut t, mut h, mut w) = (5usize, 32usize, 32usize);
        let kernels = [[3, 3, 3], [3, 3, 3], [1, 3, 3], [1, 3, 3], [1, 1, 1], [1, 1, 1]];
        for (i, k) in kernels.iter().enumerate() {
            t = t - k[0] + 1;
            h = h - k[1] + 1;
            w = w - k[2] + 1;
            if i == 1 || i == 3 {
                h /= 2;
                w /= 2;
            }
        }
        let net = Network::new(NetworkConfig::default()).unwrap();
        let a = net.rep_forward(&random_clip(net.config(), 1)).unwrap();
        assert_eq!(a.dims(), &[32, t, h, w]);
    }

    #[test]
    fn invalid_configs_rejected() {
        let c = NetworkConfig {
            pool_window: [1, 3, 3],
            ..NetworkConfig::default()
        };
        assert!(matches!(c.validate(), Err(NetworkError::Config(_))));
        let c = NetworkConfig {
            input: [1, 2, 32, 32],
            ..NetworkConfig::default()
        };
        assert!(c.validate().is_err());
        let c = NetworkConfig {
            pool_after: vec![9],
            ..NetworkConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn zero_clip_zero_bias_gives_zero_representation() {
        let net = Network::new(NetworkConfig::default()).unwrap();
        let clip = Tensor::zeros(net.config().input.to_vec()).unwrap();
        assert!(net.rep_forward(&clip).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rep_forward_is_deterministic_and_checks_extents() {
        let net = Network::new(NetworkConfig::tiny()).unwrap();
        let clip = random_clip(net.config(), 2);
        let a1 = net.rep_forward(&clip).unwrap();
        let a2 = net.rep_forward(&clip.clone()).unwrap();
        assert_eq!(a1, a2);
        let bad = Tensor::zeros(vec![1, 5, 9, 8]).unwrap();
        assert!(matches!(net.rep_forward(&bad), Err(NetworkError::InputExtents { .. })));
    }

    #[test]
    fn scene_heads_have_table_widths() {
        let net = Network::new(NetworkConfig::tiny()).unwrap();
        let a = net.rep_forward(&random_clip(net.config(), 3)).unwrap();
        let logits = net.scene_forward(&a).unwrap();
        assert_eq!(logits.iter().map(|t| t.len()).collect::<Vec<_>>(), [5, 3, 3, 2]);

        let zero = Network::zeros(NetworkConfig::tiny()).unwrap();
        let logits = zero.scene_forward(&Tensor::zeros(vec![8]).unwrap()).unwrap();
        assert!(logits.iter().all(|t| t.data().iter().all(|&v| v == 0.0)));
        assert!(zero.scene_forward(&Tensor::zeros(vec![7]).unwrap()).is_err());
    }

    #[test]
    fn registry_is_complete_and_unique() {
        let net = Network::new(NetworkConfig::default()).unwrap();
        let reg = net.params().registry();
        assert_eq!(reg.len(), net.params().tensors().len());
        let mut names: Vec<_> = reg.iter().map(|(n, _)| n.clone()).collect();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), reg.len());
        assert_eq!(reg.len(), 12 + 24 + 7 + 4);
        assert!(names.contains(&"fusion.w_gl".into()));
        assert!(names.contains(&"det.out.weight".into()));
        // detector output has exactly two units
        assert_eq!(net.params().detector.last().unwrap().out_features(), 2);
    }

    #[test]
    fn tiny_parameter_budget() {
        let net = Network::new(NetworkConfig::tiny()).unwrap();
        assert!(net.params().parameter_count() < 20_000);
    }

    #[test]
    fn from_registry_round_trip_and_rejections() {
        let net = Network::new(NetworkConfig::tiny()).unwrap();
        let entries: Vec<_> = net
            .params()
            .registry()
            .into_iter()
            .zip(net.params().tensors())
            .map(|((n, _), t)| (n, t.clone()))
            .collect();
        let back = Network::from_registry(NetworkConfig::tiny(), entries.clone()).unwrap();
        assert_eq!(back, net);

        let mut renamed = entries.clone();
        renamed[0].0 = "bogus".into();
        assert!(Network::from_registry(NetworkConfig::tiny(), renamed).is_err());
        let mut reshaped = entries.clone();
        reshaped[1].1 = Tensor::zeros(vec![99]).unwrap();
        assert!(Network::from_registry(NetworkConfig::tiny(), reshaped).is_err());
        assert!(Network::from_registry(NetworkConfig::tiny(), entries[1..].to_vec()).is_err());
    }

    #[test]
    fn fusion_annihilation_gives_bias() {
        let mut net = Network::new(NetworkConfig::tiny()).unwrap();
        net.params_mut().fusion.b_fu = Tensor::vector((0..8).map(|i| i as f64 * 0.1).collect());
        // zero column for head category 2 makes W_h L_h vanish
        let w_h = &mut net.params_mut().fusion.w_scene[1];
        for r in 0..8 {
            w_h.data_mut()[r * 3 + 2] = 0.0;
        }
        let a = net.rep_forward(&random_clip(net.config(), 4)).unwrap();
        let out = net.fuse(&a, &scene_one_hots([0, 2, 1, 1]).unwrap()).unwrap();
        assert_eq!(out.beta, net.params().fusion.b_fu);
    }

    #[test]
    fn fusion_identity_weights() {
        let mut c = NetworkConfig::tiny();
        c.fusion_width = 2;
        c.fusion_out = 2;
        let mut net = Network::zeros(c).unwrap();
        // a = [1, 2, 0, ...] projected by a selector onto [1, 2]
        let f = &mut net.params_mut().fusion;
        f.w_fea.data_mut()[0] = 1.0;
        f.w_fea.data_mut()[8 + 1] = 1.0;
        for w in &mut f.w_scene {
            w.data_mut().fill(1.0);
        }
        f.w_fu = Tensor::eye(2).unwrap();
        let mut a = vec![0.0; 8];
        a[0] = 1.0;
        a[1] = 2.0;
        let out = net
            .fuse(&Tensor::vector(a), &scene_one_hots([3, 0, 2, 1]).unwrap())
            .unwrap();
        assert_eq!(out.beta.data(), &[1.0, 2.0]);
        assert_eq!(out.v, softmax(&Tensor::vector(vec![1.0, 2.0])).unwrap());
    }

    #[test]
    fn fusion_rejects_malformed_one_hot() {
        let net = Network::new(NetworkConfig::tiny()).unwrap();
        let a = Tensor::zeros(vec![8]).unwrap();
        let mut hot = scene_one_hots([0, 0, 0, 0]).unwrap();
        hot[2] = Tensor::vector(vec![0.5, 0.5, 0.0]);
        assert!(net.fuse(&a, &hot).is_err());
        hot[2] = Tensor::vector(vec![1.0, 0.0]);
        assert!(net.fuse(&a, &hot).is_err());
    }

    #[test]
    fn zero_network_is_symmetric() {
        let net = Network::zeros(NetworkConfig::tiny()).unwrap();
        let det = net.detect(&Tensor::zeros(vec![8]).unwrap()).unwrap();
        assert_eq!(det.probabilities.data(), &[0.5, 0.5]);
        let p = net.predict_clip(&random_clip(net.config(), 5)).unwrap();
        assert_eq!(p.probabilities, [0.5, 0.5]);
        assert_eq!(p.drowsy_class, 0);
        assert!(net.detect(&Tensor::zeros(vec![7]).unwrap()).is_err());
    }

    #[test]
    fn detect_equal_logits_gives_half() {
        let mut net = Network::zeros(NetworkConfig::tiny()).unwrap();
        for t in [-3.0, 0.0, 42.0] {
            net.params_mut().detector.last_mut().unwrap().bias = Tensor::vector(vec![t, t]);
            let det = net.detect(&Tensor::full(vec![8], 0.3).unwrap()).unwrap();
            assert_eq!(det.probabilities.data(), &[0.5, 0.5]);
        }
    }

    #[test]
    fn predict_clip_hardens_scene_logits() {
        // head-condition logits [0.2, 0.2, 0.6] harden to 001
        let mut net = Network::zeros(NetworkConfig::tiny()).unwrap();
        net.params_mut().heads[1][2].bias = Tensor::vector(vec![0.2, 0.2, 0.6]);
        net.params_mut().heads[0][2].bias = Tensor::vector(vec![0.0, 0.0, 0.0, 0.0, 1.0]);
        let p = net.predict_clip(&random_clip(net.config(), 6)).unwrap();
        assert_eq!(p.scene, [4, 2, 0, 0]);
        let p2 = net.predict_clip(&random_clip(net.config(), 6)).unwrap();
        assert_eq!(p, p2);
    }

    #[test]
    fn hardened_and_ground_truth_fusion_differ_only_through_labels() {
        let net = Network::new(NetworkConfig::tiny()).unwrap();
        let clip = random_clip(net.config(), 7);
        let a = net.rep_forward(&clip).unwrap().flatten();
        let logits = net.scene_forward(&a).unwrap();
        let hard = [
            harden(&logits[0]),
            harden(&logits[1]),
            harden(&logits[2]),
            harden(&logits[3]),
        ];
        let truth = labels();
        let (_, c_truth) = net.fuse_cached(a.clone(), &truth.scene_one_hots()).unwrap();
        let (_, c_pred) = net.fuse_cached(a.clone(), &scene_one_hots(hard).unwrap()).unwrap();
        assert_eq!(c_truth.a, c_pred.a);
        assert_eq!(c_truth.projections[0], c_pred.projections[0]);
        // if the hardened labels coincide with the truth, everything matches
        if hard == truth.scene_indices() {
            assert_eq!(c_truth.v, c_pred.v);
        }
        let p = net.predict_clip(&clip).unwrap();
        assert_eq!(p.scene, hard);
    }

    #[test]
    fn op_count_matches_enumeration() {
        let c = NetworkConfig::default();
        let ops = c.op_count().unwrap();
        // enumerate conv1 MACs directly
        let mut n = 0usize;
        for _o in 0..8 {
            for _z in 0..3 {
                for _y in 0..30 {
                    for _x in 0..30 {
                        n += 27;
                    }
                }
            }
        }
        assert_eq!(ops.conv[0], n);
        assert!(ops.conv.iter().zip(&ops.conv_bound).all(|(a, b)| a <= b));
        // heads: 800 features
        let heads: usize = [5, 3, 3, 2].iter().map(|k| 800 * 128 + 128 * 64 + 64 * k).sum();
        assert_eq!(ops.dense, heads + 64 * 64 + 64 * 2);
        assert!(ops.total() > ops.conv.iter().sum::<usize>());
    }

    #[test]
    fn glorot_bounds_and_seed_determinism() {
        let a = Network::new(NetworkConfig::tiny()).unwrap();
        let b = Network::new(NetworkConfig::tiny()).unwrap();
        assert_eq!(a, b);
        let mut c2 = NetworkConfig::tiny();
        c2.seed = 1;
        assert_ne!(Network::new(c2).unwrap().params().checksum(), a.params().checksum());
        let w = &a.params().heads[0][0].weight;
        let s = (6.0f64 / (8 + 8) as f64).sqrt();
        assert!(w.data().iter().all(|v| v.abs() < s));
        assert!(a.params().rep[0].bias.data().iter().all(|&v| v == 0.0));
    }
}
