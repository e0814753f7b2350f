//! Three-layer residual CNN for complex-image deblurring.
//!
//! The network maps the two real channels (real, imaginary) of a frame
//! through conv 9x9 / ReLU -> conv 5x5 / ReLU -> conv 1x1 and adds the
//! input back: output = input + stack(input). Channel widths are fixed
//! at 2 -> 64 -> 32 -> 2. Gradients are exact reverse-mode derivatives
//! of the L1 + gradient-difference loss through the whole stack.

pub mod conv;
pub mod loss;
pub mod train;

pub use conv::{conv2d, conv2d_backward, ConvLayer, ConvSpec, Tensor};
pub use loss::{loss, loss_and_grad};
pub use train::{train, EpochLog, TrainConfig, TrainSample};

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::image::ComplexImage;
use crate::rng::Rng;

/// Minimum spatial extent the 9x9 first layer supports.
pub const MIN_SIDE: usize = 9;

/// Fixed architecture: (in, out, kernel, relu) per layer.
const ARCH: [(usize, usize, usize, bool); 3] = [
    (2, 64, 9, true),
    (64, 32, 5, true),
    (32, 2, 1, false),
];

#[derive(Clone, Debug, PartialEq)]
pub struct CnnModel {
    layers: Vec<ConvLayer>,
}

/// Per-layer parameter gradients, same shapes as the layer parameters.
#[derive(Clone, Debug)]
pub struct LayerGrads {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

pub(crate) struct ForwardCache {
    input: Tensor,
    activations: Vec<Tensor>,
}

impl CnnModel {
    /// Standard architecture with He initialization (fan-in scaled
    /// normal weights, zero biases) from the given generator.
    pub fn standard(rng: &mut Rng) -> Self {
        let layers = ARCH
            .iter()
            .map(|&(cin, cout, k, relu)| {
                let spec = ConvSpec {
                    in_channels: cin,
                    out_channels: cout,
                    kernel: k,
                    has_relu: relu,
                };
                let mut layer = ConvLayer::zeros(spec);
                let std = (2.0 / (cin * k * k) as f64).sqrt();
                for w in layer.weights.iter_mut() {
                    *w = rng.normal(0.0, std);
                }
                layer
            })
            .collect();
        Self { layers }
    }

    /// Standard architecture with all parameters zero (the identity map).
    pub fn zeros() -> Self {
        let layers = ARCH
            .iter()
            .map(|&(cin, cout, k, relu)| {
                ConvLayer::zeros(ConvSpec {
                    in_channels: cin,
                    out_channels: cout,
                    kernel: k,
                    has_relu: relu,
                })
            })
            .collect();
        Self { layers }
    }

    /// Rebuild from explicit layers (checkpoint loading); validates the
    /// channel chain.
    pub fn from_layers(layers: Vec<ConvLayer>) -> Result<Self> {
        if layers.len() != ARCH.len() {
            return Err(Error::Format(format!(
                "expected {} layers, got {}",
                ARCH.len(),
                layers.len()
            )));
        }
        for (layer, &(cin, cout, k, _)) in layers.iter().zip(&ARCH) {
            if layer.spec.in_channels != cin
                || layer.spec.out_channels != cout
                || layer.spec.kernel != k
            {
                return Err(Error::Format(format!(
                    "layer ({}, {}, {}) does not match the fixed architecture",
                    layer.spec.in_channels, layer.spec.out_channels, layer.spec.kernel
                )));
            }
            if layer.weights.len() != layer.spec.weight_count()
                || layer.bias.len() != layer.spec.out_channels
            {
                return Err(Error::Format("layer parameter lengths".into()));
            }
            if !layer
                .weights
                .iter()
                .chain(&layer.bias)
                .all(|v| v.is_finite())
            {
                return Err(Error::NonFinite("model parameters".into()));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[ConvLayer] {
        &self.layers
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.n_params()).sum()
    }

    /// Forward pass: output = input + conv-stack(input).
    pub fn forward(&self, img: &ComplexImage) -> Result<ComplexImage> {
        let (out, _) = self.forward_tensor(&image_to_tensor(img), false)?;
        tensor_to_image(&out)
    }

    /// Inference entry point; identical to [`CnnModel::forward`].
    pub fn infer(&self, img: &ComplexImage) -> Result<ComplexImage> {
        self.forward(img)
    }

    fn forward_tensor(&self, input: &Tensor, keep_cache: bool) -> Result<(Tensor, Option<ForwardCache>)> {
        if input.height < MIN_SIDE || input.width < MIN_SIDE {
            return Err(Error::InvalidParameter(format!(
                "input {}x{} below the {MIN_SIDE}-pixel minimum",
                input.height, input.width
            )));
        }
        let mut activations = Vec::with_capacity(self.layers.len());
        let mut current = input.clone();
        for layer in &self.layers {
            let mut out = conv::conv2d(&current, layer)?;
            if layer.spec.has_relu {
                conv::relu_inplace(&mut out);
            }
            if keep_cache {
                activations.push(out.clone());
            }
            current = out;
        }
        // skip connection
        for (v, i) in current.data.iter_mut().zip(&input.data) {
            *v += i;
        }
        let cache = keep_cache.then(|| ForwardCache {
            input: input.clone(),
            activations,
        });
        Ok((current, cache))
    }

    /// Loss and exact parameter gradients for one (input, target) pair.
    pub fn backward(
        &self,
        img: &ComplexImage,
        target: &ComplexImage,
        lambda_gdl: f64,
    ) -> Result<(f64, Vec<LayerGrads>)> {
        let input = image_to_tensor(img);
        let target_t = image_to_tensor(target);
        let (pred, cache) = self.forward_tensor(&input, true)?;
        let cache = cache.expect("cache requested");
        let (loss_value, grad) = loss::loss_and_grad(&pred, &target_t, lambda_gdl, true)?;
        let mut grad_out = grad.expect("gradient requested");

        // the skip connection routes the loss gradient to the stack
        // output unchanged; input gradients are not needed
        let mut grads = vec![
            LayerGrads {
                weights: Vec::new(),
                bias: Vec::new(),
            };
            self.layers.len()
        ];
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            // ReLU subgradient: zero where the activation was clipped
            if layer.spec.has_relu {
                let act = &cache.activations[l];
                for (g, a) in grad_out.data.iter_mut().zip(&act.data) {
                    if *a <= 0.0 {
                        *g = 0.0;
                    }
                }
            }
            let layer_input = if l == 0 {
                &cache.input
            } else {
                &cache.activations[l - 1]
            };
            let g = conv::conv2d_backward(layer_input, layer, &grad_out, l > 0)?;
            grads[l] = LayerGrads {
                weights: g.weights,
                bias: g.bias,
            };
            if l > 0 {
                grad_out = g.input.expect("input gradient requested");
            }
        }
        Ok((loss_value, grads))
    }
}

/// Split a complex image into its (real, imaginary) channel pair.
pub fn image_to_tensor(img: &ComplexImage) -> Tensor {
    let (h, w) = (img.height(), img.width());
    let mut t = Tensor::zeros(2, h, w);
    for (i, v) in img.data().iter().enumerate() {
        t.data[i] = v.re;
        t.data[h * w + i] = v.im;
    }
    t
}

/// Reassemble a 2-channel tensor into a complex image.
pub fn tensor_to_image(t: &Tensor) -> Result<ComplexImage> {
    if t.channels != 2 {
        return Err(Error::DimensionMismatch(format!(
            "expected 2 channels, got {}",
            t.channels
        )));
    }
    let n = t.height * t.width;
    let data: Vec<Complex64> = (0..n)
        .map(|i| Complex64::new(t.data[i], t.data[n + i]))
        .collect();
    ComplexImage::new(t.height, t.width, data)
}
