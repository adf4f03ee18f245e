//! Small convolutional/fully-connected networks with reverse-mode
//! gradients, deterministic initialization, optimizers, and binary
//! checkpoints.
//!
//! Networks are plain data: building one from the same spec and seed
//! twice yields bitwise-identical parameters, and a forward pass is a
//! pure function of (network, batch). Training mutates parameters only
//! through [`optimizer_step`].

mod checkpoint;
pub mod grad_check;
mod layer;
mod optim;

pub use checkpoint::{load_checkpoint, load_checkpoint_expecting, save_checkpoint};
pub use optim::{optimizer_step, OptMethod, OptimizerState};

use crate::error::{Error, Result};
use crate::losses::LossBreakdown;
use crate::tensor::Tensor;
use layer::ConvDims;
use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Elementwise activation kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Linear,
}

/// One layer of a [`NetworkSpec`]. Convolutions use "same"-style zero
/// padding (`out = ceil(in / stride)`); pooling is non-overlapping.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    Conv {
        kernel: (usize, usize),
        channels: usize,
        stride: usize,
    },
    MaxPool {
        window: usize,
    },
    FullyConnected {
        width: usize,
    },
    Activation(Activation),
}

/// Shape of the data flowing between layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerShape {
    Spatial { h: usize, w: usize, c: usize },
    Flat(usize),
}

impl LayerShape {
    fn features(&self) -> usize {
        match *self {
            LayerShape::Spatial { h, w, c } => h * w * c,
            LayerShape::Flat(n) => n,
        }
    }
}

/// Architecture description: input shape, ordered layers, and the width
/// of the final coding layer.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    /// Input image shape (height, width, channels).
    pub input: (usize, usize, usize),
    pub layers: Vec<LayerSpec>,
    /// Required width of the final layer output (the hash code length).
    pub code_width: usize,
}

pub const DEFAULT_CODE_WIDTH: usize = 128;

impl NetworkSpec {
    /// The heavy network: four conv/pool stages then two fully connected
    /// layers ending in a linear coding layer.
    pub fn teacher(input_hw: usize) -> Self {
        use LayerSpec as L;
        NetworkSpec {
            input: (input_hw, input_hw, 1),
            layers: vec![
                L::Conv { kernel: (3, 3), channels: 16, stride: 1 },
                L::Activation(Activation::Relu),
                L::MaxPool { window: 2 },
                L::Conv { kernel: (3, 3), channels: 32, stride: 1 },
                L::Activation(Activation::Relu),
                L::MaxPool { window: 2 },
                L::Conv { kernel: (3, 3), channels: 64, stride: 1 },
                L::Activation(Activation::Relu),
                L::MaxPool { window: 2 },
                L::Conv { kernel: (3, 3), channels: 64, stride: 1 },
                L::Activation(Activation::Relu),
                L::MaxPool { window: 2 },
                L::FullyConnected { width: 512 },
                L::Activation(Activation::Relu),
                L::FullyConnected { width: DEFAULT_CODE_WIDTH },
            ],
            code_width: DEFAULT_CODE_WIDTH,
        }
    }

    /// The light network: two conv/pool stages then three fully connected
    /// layers, the last being the linear coding layer.
    pub fn student(input_hw: usize) -> Self {
        use LayerSpec as L;
        NetworkSpec {
            input: (input_hw, input_hw, 1),
            layers: vec![
                L::Conv { kernel: (3, 3), channels: 16, stride: 1 },
                L::Activation(Activation::Relu),
                L::MaxPool { window: 2 },
                L::Conv { kernel: (3, 3), channels: 32, stride: 1 },
                L::Activation(Activation::Relu),
                L::MaxPool { window: 2 },
                L::FullyConnected { width: 512 },
                L::Activation(Activation::Relu),
                L::FullyConnected { width: 256 },
                L::Activation(Activation::Relu),
                L::FullyConnected { width: DEFAULT_CODE_WIDTH },
            ],
            code_width: DEFAULT_CODE_WIDTH,
        }
    }

    /// Checks layer chain compatibility and returns the shape after each
    /// layer. Fails when shapes do not chain or the final width differs
    /// from `code_width`.
    pub fn validate(&self) -> Result<Vec<LayerShape>> {
        let (h, w, c) = self.input;
        if h == 0 || w == 0 || c == 0 {
            return Err(Error::Spec(format!("input shape {:?} has a zero extent", self.input)));
        }
        if self.layers.is_empty() {
            return Err(Error::Spec("network has no layers".to_string()));
        }
        let mut shape = LayerShape::Spatial { h, w, c };
        let mut shapes = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            shape = match (layer, shape) {
                (
                    &LayerSpec::Conv { kernel: (kh, kw), channels, stride },
                    LayerShape::Spatial { h, w, .. },
                ) => {
                    if kh == 0 || kw == 0 || channels == 0 || stride == 0 {
                        return Err(Error::Spec(format!("layer {i}: conv has a zero parameter")));
                    }
                    let (oh, _) = layer::conv_extent(h, kh, stride);
                    let (ow, _) = layer::conv_extent(w, kw, stride);
                    LayerShape::Spatial { h: oh, w: ow, c: channels }
                }
                (&LayerSpec::Conv { .. }, LayerShape::Flat(_)) => {
                    return Err(Error::Spec(format!(
                        "layer {i}: conv cannot follow a fully connected layer"
                    )));
                }
                (&LayerSpec::MaxPool { window }, LayerShape::Spatial { h, w, c }) => {
                    if window == 0 {
                        return Err(Error::Spec(format!("layer {i}: pool window is zero")));
                    }
                    let (oh, ow) = (h / window, w / window);
                    if oh == 0 || ow == 0 {
                        return Err(Error::Spec(format!(
                            "layer {i}: pool window {window} exceeds input {h}x{w}"
                        )));
                    }
                    LayerShape::Spatial { h: oh, w: ow, c }
                }
                (&LayerSpec::MaxPool { .. }, LayerShape::Flat(_)) => {
                    return Err(Error::Spec(format!(
                        "layer {i}: pool cannot follow a fully connected layer"
                    )));
                }
                (&LayerSpec::FullyConnected { width }, s) => {
                    if width == 0 {
                        return Err(Error::Spec(format!("layer {i}: zero-width layer")));
                    }
                    let _ = s.features();
                    LayerShape::Flat(width)
                }
                (&LayerSpec::Activation(_), s) => s,
            };
            shapes.push(shape);
        }
        match shape {
            LayerShape::Flat(width) if width == self.code_width => Ok(shapes),
            other => Err(Error::Spec(format!(
                "final layer shape {other:?} does not produce the code width {}",
                self.code_width
            ))),
        }
    }

    /// Number of trainable parameters.
    pub fn parameter_count(&self) -> Result<usize> {
        let shapes = self.validate()?;
        let mut count = 0usize;
        let mut prev = LayerShape::Spatial {
            h: self.input.0,
            w: self.input.1,
            c: self.input.2,
        };
        for (layer, shape) in self.layers.iter().zip(&shapes) {
            match layer {
                LayerSpec::Conv { kernel: (kh, kw), channels, .. } => {
                    let c_in = match prev {
                        LayerShape::Spatial { c, .. } => c,
                        LayerShape::Flat(_) => unreachable!(),
                    };
                    count += kh * kw * c_in * channels + channels;
                }
                LayerSpec::FullyConnected { width } => {
                    count += prev.features() * width + width;
                }
                _ => {}
            }
            prev = *shape;
        }
        Ok(count)
    }
}

/// A named trainable tensor.
#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    /// Index of the owning layer in the spec.
    pub layer: usize,
    pub value: Tensor,
}

/// Gradients aligned one-to-one with [`Network::params`].
#[derive(Debug, Clone)]
pub struct Gradients {
    pub entries: Vec<(String, Tensor)>,
}

/// A built network: spec plus initialized parameters.
#[derive(Debug, Clone)]
pub struct Network {
    spec: NetworkSpec,
    shapes: Vec<LayerShape>,
    params: Vec<Param>,
    seed: u64,
}

/// An objective over the network's output feature batch. Implementations
/// return the loss value, its per-term breakdown, and the gradient with
/// respect to the features.
pub trait FeatureObjective {
    fn label(&self) -> &'static str;
    fn eval(&self, features: &Tensor) -> Result<(f64, LossBreakdown, Tensor)>;
    /// Distance (in feature/derived-quantity units) to the nearest
    /// non-differentiable point of the objective; used by the gradient
    /// checker to skip samples near kinks.
    fn kink_margin(&self, _features: &Tensor) -> Result<f64> {
        Ok(f64::INFINITY)
    }
}

/// Builds a network with deterministic uniform initialization:
/// weights in [-s, s] with `s = sqrt(6 / (fan_in + fan_out))`, zero biases.
pub fn build_network(spec: &NetworkSpec, seed: u64) -> Result<Network> {
    let shapes = spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = Vec::new();
    let mut prev = LayerShape::Spatial {
        h: spec.input.0,
        w: spec.input.1,
        c: spec.input.2,
    };
    for (i, layer) in spec.layers.iter().enumerate() {
        match layer {
            LayerSpec::Conv { kernel: (kh, kw), channels, .. } => {
                let c_in = match prev {
                    LayerShape::Spatial { c, .. } => c,
                    LayerShape::Flat(_) => unreachable!("validated"),
                };
                let fan_in = kh * kw * c_in;
                let fan_out = kh * kw * channels;
                let weight = init_uniform(vec![*kh, *kw, c_in, *channels], fan_in, fan_out, &mut rng);
                params.push(Param { name: format!("layer{i}.weight"), layer: i, value: weight });
                params.push(Param {
                    name: format!("layer{i}.bias"),
                    layer: i,
                    value: Tensor::zeros(vec![*channels]),
                });
            }
            LayerSpec::FullyConnected { width } => {
                let fan_in = prev.features();
                let weight = init_uniform(vec![fan_in, *width], fan_in, *width, &mut rng);
                params.push(Param { name: format!("layer{i}.weight"), layer: i, value: weight });
                params.push(Param {
                    name: format!("layer{i}.bias"),
                    layer: i,
                    value: Tensor::zeros(vec![*width]),
                });
            }
            _ => {}
        }
        prev = shapes[i];
    }
    Ok(Network { spec: spec.clone(), shapes, params, seed })
}

fn init_uniform(shape: Vec<usize>, fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let dist = Uniform::new_inclusive(-s, s).expect("valid init range");
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| dist.sample(rng)).collect();
    Tensor::from_vec(shape, data).expect("init shape")
}

/// Per-layer forward caches needed for the backward pass.
struct ForwardCaches {
    /// activations[0] is the input batch; activations[i + 1] is the
    /// output of layer i.
    activations: Vec<Tensor>,
    pool_argmax: Vec<Option<Vec<u32>>>,
}

impl Network {
    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    /// Mutable access to one parameter tensor. Exposed for optimizer
    /// updates and finite-difference probing.
    pub fn param_mut(&mut self, idx: usize) -> &mut Tensor {
        &mut self.params[idx].value
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Sum of all parameter bit patterns; cheap identity check for
    /// frozen-network assertions.
    pub fn param_checksum(&self) -> u64 {
        let mut acc = 0u64;
        for p in &self.params {
            for v in p.value.data() {
                acc = acc.wrapping_mul(0x100000001b3).wrapping_add(v.to_bits());
            }
        }
        acc
    }

    fn check_batch(&self, batch: &Tensor) -> Result<usize> {
        let (h, w, c) = self.spec.input;
        if batch.rank() != 4 || batch.dim(1) != h || batch.dim(2) != w || batch.dim(3) != c {
            return Err(Error::Input(format!(
                "batch shape {:?} does not match network input {:?}",
                batch.shape(),
                (h, w, c)
            )));
        }
        Ok(batch.dim(0))
    }

    /// Forward pass: maps a batch [n, h, w, c] to features [n, code_width].
    pub fn forward(&self, batch: &Tensor) -> Result<Tensor> {
        let (out, _) = self.forward_impl(batch, false)?;
        if !out.is_finite() {
            return Err(Error::Numeric("non-finite value in forward output".to_string()));
        }
        Ok(out)
    }

    fn forward_impl(&self, batch: &Tensor, keep: bool) -> Result<(Tensor, ForwardCaches)> {
        let n = self.check_batch(batch)?;
        let n_layers = self.spec.layers.len();
        let mut caches = ForwardCaches {
            activations: Vec::with_capacity(if keep { n_layers + 1 } else { 0 }),
            pool_argmax: vec![None; n_layers],
        };
        let mut current = batch.clone();
        let mut prev_shape = LayerShape::Spatial {
            h: self.spec.input.0,
            w: self.spec.input.1,
            c: self.spec.input.2,
        };
        let mut param_idx = 0usize;
        for (i, l) in self.spec.layers.iter().enumerate() {
            if let LayerSpec::Activation(a) = l {
                if !keep {
                    // mutate in place; nothing downstream needs the input
                    apply_activation(*a, current.data_mut());
                    prev_shape = self.shapes[i];
                    continue;
                }
            }
            let out = match l {
                LayerSpec::Conv { kernel: (kh, kw), channels, stride } => {
                    let (h, w, c) = spatial(prev_shape);
                    let dims = ConvDims::new(n, h, w, c, *kh, *kw, *channels, *stride);
                    let weight = &self.params[param_idx].value;
                    let bias = &self.params[param_idx + 1].value;
                    param_idx += 2;
                    let data = layer::conv_forward(&dims, current.data(), weight.data(), bias.data());
                    Tensor::from_vec(vec![n, dims.oh, dims.ow, *channels], data)?
                }
                LayerSpec::MaxPool { window } => {
                    let (h, w, c) = spatial(prev_shape);
                    let (data, arg) = layer::maxpool_forward(n, h, w, c, *window, current.data());
                    caches.pool_argmax[i] = Some(arg);
                    Tensor::from_vec(vec![n, h / window, w / window, c], data)?
                }
                LayerSpec::FullyConnected { width } => {
                    let fan_in = prev_shape.features();
                    let weight = &self.params[param_idx].value;
                    let bias = &self.params[param_idx + 1].value;
                    param_idx += 2;
                    let data =
                        layer::fc_forward(n, fan_in, *width, current.data(), weight.data(), bias.data());
                    Tensor::from_vec(vec![n, *width], data)?
                }
                LayerSpec::Activation(a) => {
                    let mut out = current.clone();
                    apply_activation(*a, out.data_mut());
                    out
                }
            };
            prev_shape = self.shapes[i];
            if keep {
                // the old `current` is this layer's input; stash it
                caches.activations.push(std::mem::replace(&mut current, out));
            } else {
                current = out;
            }
        }
        if keep {
            let features = Tensor::from_vec(vec![n, self.spec.code_width], current.data().to_vec())?;
            caches.activations.push(current);
            Ok((features, caches))
        } else {
            let features = Tensor::from_vec(vec![n, self.spec.code_width], current.into_data())?;
            Ok((features, caches))
        }
    }

    /// Loss value, per-term breakdown, and parameter gradients for the
    /// given objective composed with the forward pass. Parameters with no
    /// influence on the loss receive exactly-zero gradients.
    pub fn gradients(
        &self,
        batch: &Tensor,
        objective: &dyn FeatureObjective,
    ) -> Result<(f64, LossBreakdown, Gradients)> {
        let n = self.check_batch(batch)?;
        let (features, caches) = self.forward_impl(batch, true)?;
        let (loss, breakdown, dfeat) = objective.eval(&features)?;
        if !loss.is_finite() {
            let layer = caches
                .activations
                .iter()
                .position(|a| !a.is_finite())
                .map(|i| {
                    if i == 0 {
                        "input batch".to_string()
                    } else {
                        format!("layer {}", i - 1)
                    }
                })
                .unwrap_or_else(|| "loss function".to_string());
            return Err(Error::Numeric(format!(
                "non-finite loss (first non-finite value in {layer})"
            )));
        }

        let mut grads: Vec<Option<Tensor>> = vec![None; self.params.len()];
        let mut delta = dfeat.into_data();
        // parameter cursor positioned past the end; walk layers backwards
        let mut param_idx = self.params.len();
        let mut prev_shapes: Vec<LayerShape> = Vec::with_capacity(self.spec.layers.len());
        let mut s = LayerShape::Spatial {
            h: self.spec.input.0,
            w: self.spec.input.1,
            c: self.spec.input.2,
        };
        for i in 0..self.spec.layers.len() {
            prev_shapes.push(s);
            s = self.shapes[i];
        }
        for (i, l) in self.spec.layers.iter().enumerate().rev() {
            let input = &caches.activations[i];
            let output = &caches.activations[i + 1];
            match l {
                LayerSpec::Conv { kernel: (kh, kw), channels, stride } => {
                    param_idx -= 2;
                    let (h, w, c) = spatial(prev_shapes[i]);
                    let dims = ConvDims::new(n, h, w, c, *kh, *kw, *channels, *stride);
                    let weight = &self.params[param_idx].value;
                    let (dinput, dweight, dbias) =
                        layer::conv_backward(&dims, input.data(), weight.data(), &delta, i > 0);
                    grads[param_idx] = Some(Tensor::from_vec(weight.shape().to_vec(), dweight)?);
                    grads[param_idx + 1] = Some(Tensor::from_vec(vec![*channels], dbias)?);
                    layer::give_scratch(std::mem::replace(&mut delta, dinput));
                }
                LayerSpec::MaxPool { .. } => {
                    let arg = caches.pool_argmax[i].as_ref().expect("pool cache");
                    let dinput = layer::maxpool_backward(&delta, arg, input.len());
                    layer::give_scratch(std::mem::replace(&mut delta, dinput));
                }
                LayerSpec::FullyConnected { width } => {
                    param_idx -= 2;
                    let fan_in = prev_shapes[i].features();
                    let weight = &self.params[param_idx].value;
                    let (dinput, dweight, dbias) =
                        layer::fc_backward(n, fan_in, *width, input.data(), weight.data(), &delta);
                    grads[param_idx] = Some(Tensor::from_vec(weight.shape().to_vec(), dweight)?);
                    grads[param_idx + 1] = Some(Tensor::from_vec(vec![*width], dbias)?);
                    layer::give_scratch(std::mem::replace(&mut delta, dinput));
                }
                LayerSpec::Activation(a) => match a {
                    Activation::Relu => {
                        for (d, &y) in delta.iter_mut().zip(output.data()) {
                            if y <= 0.0 {
                                *d = 0.0;
                            }
                        }
                    }
                    Activation::Tanh => {
                        for (d, &y) in delta.iter_mut().zip(output.data()) {
                            *d *= 1.0 - y * y;
                        }
                    }
                    Activation::Linear => {}
                },
            }
        }
        debug_assert_eq!(param_idx, 0);
        let entries = self
            .params
            .iter()
            .zip(grads)
            .map(|(p, g)| (p.name.clone(), g.expect("gradient for every parameter")))
            .collect();
        Ok((loss, breakdown, Gradients { entries }))
    }

    /// Smallest margin to a network non-smoothness on this batch: distance
    /// of any relu pre-activation to zero and of any pooling window's top
    /// two values to a tie. Used to discard finite-difference samples that
    /// straddle kinks.
    pub fn nonsmooth_margin(&self, batch: &Tensor) -> Result<f64> {
        let n = self.check_batch(batch)?;
        let (_, caches) = self.forward_impl(batch, true)?;
        let mut margin = f64::INFINITY;
        let mut prev_shape = LayerShape::Spatial {
            h: self.spec.input.0,
            w: self.spec.input.1,
            c: self.spec.input.2,
        };
        for (i, l) in self.spec.layers.iter().enumerate() {
            let input = &caches.activations[i];
            match l {
                LayerSpec::Activation(Activation::Relu) => {
                    for &v in input.data() {
                        margin = margin.min(v.abs());
                    }
                }
                LayerSpec::MaxPool { window } => {
                    let (h, w, c) = spatial(prev_shape);
                    margin = margin.min(pool_tie_margin(n, h, w, c, *window, input.data()));
                }
                _ => {}
            }
            prev_shape = self.shapes[i];
        }
        Ok(margin)
    }
}

fn pool_tie_margin(n: usize, h: usize, w: usize, c: usize, window: usize, input: &[f64]) -> f64 {
    let mut margin = f64::INFINITY;
    for img in 0..n {
        for oy in 0..h / window {
            for ox in 0..w / window {
                for ch in 0..c {
                    let mut top = f64::NEG_INFINITY;
                    let mut second = f64::NEG_INFINITY;
                    for ky in 0..window {
                        for kx in 0..window {
                            let idx = ((img * h + oy * window + ky) * w + ox * window + kx) * c + ch;
                            let v = input[idx];
                            if v > top {
                                second = top;
                                top = v;
                            } else if v > second {
                                second = v;
                            }
                        }
                    }
                    if second.is_finite() {
                        margin = margin.min(top - second);
                    }
                }
            }
        }
    }
    margin
}

fn spatial(s: LayerShape) -> (usize, usize, usize) {
    match s {
        LayerShape::Spatial { h, w, c } => (h, w, c),
        LayerShape::Flat(_) => unreachable!("validated spatial layer"),
    }
}

fn apply_activation(a: Activation, data: &mut [f64]) {
    match a {
        Activation::Relu => {
            for v in data {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
        Activation::Tanh => {
            for v in data {
                *v = v.tanh();
            }
        }
        Activation::Linear => {}
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::{dhn_loss_grad, LossConfig, PairLabels};

    struct DhnObj {
        labels: PairLabels,
        cfg: LossConfig,
    }

    impl FeatureObjective for DhnObj {
        fn label(&self) -> &'static str {
            "dhn"
        }
        fn eval(&self, features: &Tensor) -> Result<(f64, LossBreakdown, Tensor)> {
            dhn_loss_grad(features, &self.labels, &self.cfg)
        }
    }

    fn tiny_spec() -> NetworkSpec {
        use LayerSpec as L;
        NetworkSpec {
            input: (6, 6, 1),
            layers: vec![
                L::Conv { kernel: (3, 3), channels: 2, stride: 1 },
                L::Activation(Activation::Tanh),
                L::MaxPool { window: 2 },
                L::FullyConnected { width: 4 },
            ],
            code_width: 4,
        }
    }

    #[test]
    fn same_spec_seed_identical_parameters() {
        let spec = NetworkSpec::student(64);
        let a = build_network(&spec, 42).unwrap();
        let b = build_network(&spec, 42).unwrap();
        for (pa, pb) in a.params().iter().zip(b.params()) {
            assert_eq!(pa.value.data(), pb.value.data());
        }
        let c = build_network(&spec, 43).unwrap();
        assert_ne!(a.param_checksum(), c.param_checksum());
    }

    #[test]
    fn student_spec_on_64_input_outputs_128() {
        let spec = NetworkSpec::student(64);
        let net = build_network(&spec, 0).unwrap();
        let batch = Tensor::zeros(vec![3, 64, 64, 1]);
        let out = net.forward(&batch).unwrap();
        assert_eq!(out.shape(), &[3, 128]);
    }

    #[test]
    fn teacher_spec_on_64_input_outputs_128() {
        let spec = NetworkSpec::teacher(64);
        let net = build_network(&spec, 0).unwrap();
        let batch = Tensor::zeros(vec![2, 64, 64, 1]);
        let out = net.forward(&batch).unwrap();
        assert_eq!(out.shape(), &[2, 128]);
    }

    #[test]
    fn incompatible_chain_is_spec_error() {
        use LayerSpec::*;
        // conv after fully connected cannot chain
        let spec = NetworkSpec {
            input: (8, 8, 1),
            layers: vec![
                FullyConnected { width: 16 },
                Conv { kernel: (3, 3), channels: 4, stride: 1 },
            ],
            code_width: 16,
        };
        assert!(matches!(spec.validate(), Err(Error::Spec(_))));

        // final width must equal the code width
        let spec = NetworkSpec {
            input: (8, 8, 1),
            layers: vec![FullyConnected { width: 16 }],
            code_width: 128,
        };
        assert!(matches!(spec.validate(), Err(Error::Spec(_))));
    }

    #[test]
    fn identity_fc_reproduces_input() {
        use LayerSpec::*;
        let spec = NetworkSpec {
            input: (1, 1, 4),
            layers: vec![FullyConnected { width: 4 }],
            code_width: 4,
        };
        let mut net = build_network(&spec, 0).unwrap();
        // overwrite with the identity
        let w = net.param_mut(0);
        w.data_mut().fill(0.0);
        for i in 0..4 {
            w.data_mut()[i * 4 + i] = 1.0;
        }
        let batch = Tensor::from_vec(vec![2, 1, 1, 4], vec![1.0, -2.0, 3.0, 0.5, 0.0, 7.0, -1.0, 2.0])
            .unwrap();
        let out = net.forward(&batch).unwrap();
        assert_eq!(out.data(), batch.data());
    }

    #[test]
    fn batch_of_seven_keeps_rows() {
        let spec = NetworkSpec::student(32);
        let net = build_network(&spec, 9).unwrap();
        let batch = Tensor::zeros(vec![7, 32, 32, 1]);
        let out = net.forward(&batch).unwrap();
        assert_eq!(out.shape(), &[7, 128]);
    }

    #[test]
    fn zero_parameters_zero_output() {
        let spec = tiny_spec();
        let mut net = build_network(&spec, 1).unwrap();
        for i in 0..net.params().len() {
            net.param_mut(i).data_mut().fill(0.0);
        }
        let batch = Tensor::from_vec(vec![1, 6, 6, 1], (0..36).map(|v| v as f64 / 36.0).collect())
            .unwrap();
        let out = net.forward(&batch).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shape_mismatch_is_input_error() {
        let net = build_network(&tiny_spec(), 1).unwrap();
        let batch = Tensor::zeros(vec![1, 5, 6, 1]);
        assert!(matches!(net.forward(&batch), Err(Error::Input(_))));
    }

    #[test]
    fn gradients_zero_at_quantization_minimum() {
        use LayerSpec::*;
        // linear 2 -> 2 identity network; features already exactly +-1
        let spec = NetworkSpec {
            input: (1, 1, 2),
            layers: vec![FullyConnected { width: 2 }],
            code_width: 2,
        };
        let mut net = build_network(&spec, 0).unwrap();
        let w = net.param_mut(0);
        w.data_mut().copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
        let batch = Tensor::from_vec(vec![2, 1, 1, 2], vec![1.0, -1.0, -1.0, 1.0]).unwrap();

        struct QuantObj;
        impl FeatureObjective for QuantObj {
            fn label(&self) -> &'static str {
                "quantization"
            }
            fn eval(&self, f: &Tensor) -> Result<(f64, LossBreakdown, Tensor)> {
                let (v, g) = crate::losses::quantization_loss_grad(f)?;
                Ok((v, LossBreakdown { quantization: v, ..Default::default() }, g))
            }
        }
        let (loss, _, grads) = net.gradients(&batch, &QuantObj).unwrap();
        assert_eq!(loss, 0.0);
        for (_, g) in &grads.entries {
            assert!(g.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn gradients_shapes_match_parameters() {
        let spec = tiny_spec();
        let net = build_network(&spec, 3).unwrap();
        let batch = Tensor::from_vec(
            vec![4, 6, 6, 1],
            (0..4 * 36).map(|v| ((v * 37) % 100) as f64 / 100.0 - 0.5).collect(),
        )
        .unwrap();
        let obj = DhnObj {
            labels: PairLabels::from_labels(&["a", "a", "b", "b"]),
            cfg: LossConfig { margin: 4.0, ..LossConfig::default() },
        };
        let (_, _, grads) = net.gradients(&batch, &obj).unwrap();
        assert_eq!(grads.entries.len(), net.params().len());
        for ((name, g), p) in grads.entries.iter().zip(net.params()) {
            assert_eq!(name, &p.name);
            assert_eq!(g.shape(), p.value.shape());
        }
    }
}
