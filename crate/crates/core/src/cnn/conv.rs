//! Real-valued tensors and 2D convolution (cross-correlation) kernels.
//!
//! Same-size outputs via zero padding of (k-1)/2. The hot path is a
//! register-tiled microkernel (4 output channels x 8 columns) with the
//! kernel size monomorphized so the tap loop fully unrolls; odd sizes
//! outside the production set fall back to a plain reference loop.

use crate::error::{Error, Result};

/// C x H x W tensor of f64, channel-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.height * self.width;
        &mut self.data[c * n..(c + 1) * n]
    }
}

/// One convolutional layer: odd square kernel, optional ReLU.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub has_relu: bool,
}

impl ConvSpec {
    pub fn validate(&self) -> Result<()> {
        if self.kernel % 2 == 0 || self.kernel == 0 {
            return Err(Error::InvalidParameter(format!(
                "kernel size {} must be odd",
                self.kernel
            )));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::InvalidParameter("channel counts must be >= 1".into()));
        }
        Ok(())
    }

    pub fn weight_count(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel * self.kernel
    }
}

/// Layer weights (out x in x k x k, row-major) and per-output biases.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer {
    pub spec: ConvSpec,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvLayer {
    pub fn zeros(spec: ConvSpec) -> Self {
        Self {
            spec,
            weights: vec![0.0; spec.weight_count()],
            bias: vec![0.0; spec.out_channels],
        }
    }

    #[inline]
    pub fn weight(&self, o: usize, c: usize, ky: usize, kx: usize) -> f64 {
        let k = self.spec.kernel;
        self.weights[((o * self.spec.in_channels + c) * k + ky) * k + kx]
    }

    pub fn n_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

/// columns per register tile
const XB: usize = 16;
/// output channels per register tile
const OB: usize = 4;

/// copy of the input with `pad` zero columns on each side of every row,
/// so every kernel tap is in bounds for every output column
fn pad_columns(input: &Tensor, pad: usize) -> Tensor {
    let (h, w) = (input.height, input.width);
    let wp = w + 2 * pad;
    let mut out = Tensor::zeros(input.channels, h, wp);
    for c in 0..input.channels {
        let src = input.plane(c);
        let dst = out.plane_mut(c);
        for y in 0..h {
            dst[y * wp + pad..y * wp + pad + w].copy_from_slice(&src[y * w..y * w + w]);
        }
    }
    out
}

fn check_conv_shapes(input: &Tensor, layer: &ConvLayer) -> Result<()> {
    let spec = &layer.spec;
    spec.validate()?;
    if input.channels != spec.in_channels {
        return Err(Error::DimensionMismatch(format!(
            "input channels {} vs layer {}",
            input.channels, spec.in_channels
        )));
    }
    if input.height < spec.kernel || input.width < spec.kernel {
        return Err(Error::DimensionMismatch(format!(
            "input {}x{} smaller than kernel {}",
            input.height, input.width, spec.kernel
        )));
    }
    Ok(())
}

/// Same-size 2D cross-correlation with zero padding:
/// out[o] = bias[o] + sum_c input[c] (x) weight[o][c].
pub fn conv2d(input: &Tensor, layer: &ConvLayer) -> Result<Tensor> {
    check_conv_shapes(input, layer)?;
    if layer.spec.kernel == 1 {
        return Ok(conv2d_pointwise(input, layer));
    }
    if input.width < XB || layer.spec.out_channels % OB != 0 {
        return Ok(conv2d_general(input, layer));
    }
    match layer.spec.kernel {
        3 => Ok(conv2d_fast::<3>(input, layer)),
        5 => Ok(conv2d_fast::<5>(input, layer)),
        9 => Ok(conv2d_fast::<9>(input, layer)),
        _ => Ok(conv2d_general(input, layer)),
    }
}

/// 1x1 kernels are a per-pixel channel mix.
fn conv2d_pointwise(input: &Tensor, layer: &ConvLayer) -> Tensor {
    let spec = &layer.spec;
    let (h, w) = (input.height, input.width);
    let mut out = Tensor::zeros(spec.out_channels, h, w);
    for o in 0..spec.out_channels {
        let plane = out.plane_mut(o);
        plane.iter_mut().for_each(|v| *v = layer.bias[o]);
        for c in 0..spec.in_channels {
            let coeff = layer.weights[o * spec.in_channels + c];
            for (dst, src) in plane.iter_mut().zip(input.plane(c)) {
                *dst = coeff.mul_add(*src, *dst);
            }
        }
    }
    out
}

/// scalar zero-padded sum for one output element
#[inline]
fn conv_at(input: &Tensor, layer: &ConvLayer, o: usize, y: usize, x: usize) -> f64 {
    let spec = &layer.spec;
    let (h, w) = (input.height, input.width);
    let k = spec.kernel;
    let pad = (k - 1) / 2;
    let mut acc = layer.bias[o];
    for c in 0..spec.in_channels {
        let src = input.plane(c);
        for ky in 0..k {
            let yy = y as isize + ky as isize - pad as isize;
            if yy < 0 || yy >= h as isize {
                continue;
            }
            let row = yy as usize * w;
            for kx in 0..k {
                let xx = x as isize + kx as isize - pad as isize;
                if xx < 0 || xx >= w as isize {
                    continue;
                }
                acc += layer.weight(o, c, ky, kx) * src[row + xx as usize];
            }
        }
    }
    acc
}

fn conv2d_general(input: &Tensor, layer: &ConvLayer) -> Tensor {
    let (h, w) = (input.height, input.width);
    let mut out = Tensor::zeros(layer.spec.out_channels, h, w);
    for o in 0..layer.spec.out_channels {
        for y in 0..h {
            for x in 0..w {
                out.plane_mut(o)[y * w + x] = conv_at(input, layer, o, y, x);
            }
        }
    }
    out
}

fn conv2d_fast<const K: usize>(input: &Tensor, layer: &ConvLayer) -> Tensor {
    let spec = &layer.spec;
    let (h, w) = (input.height, input.width);
    let pad = (K - 1) / 2;
    let mut out = Tensor::zeros(spec.out_channels, h, w);
    let plane_len = h * w;

    let padded = pad_columns(input, pad);
    let wp = w + 2 * pad;
    // tile start columns; the final tile is clamped so it overlaps its
    // predecessor instead of spilling into a scalar remainder
    let mut tile_starts: Vec<usize> = (0..w / XB).map(|t| t * XB).collect();
    if w % XB != 0 {
        tile_starts.push(w - XB);
    }

    let mut packed = vec![0.0f64; spec.in_channels * K * K * OB];
    let mut o0 = 0;
    while o0 < spec.out_channels {
        // contiguous [c][ky][kx][oi] layout for streaming access
        for c in 0..spec.in_channels {
            for ky in 0..K {
                for kx in 0..K {
                    for oi in 0..OB {
                        packed[((c * K + ky) * K + kx) * OB + oi] = layer.weights
                            [((o0 + oi) * spec.in_channels + c) * K * K + ky * K + kx];
                    }
                }
            }
        }
        for y in 0..h {
            let ky_lo = pad.saturating_sub(y);
            let ky_hi = K.min(h + pad - y);
            for &x0 in &tile_starts {
                let mut acc0 = [layer.bias[o0]; XB];
                let mut acc1 = [layer.bias[o0 + 1]; XB];
                let mut acc2 = [layer.bias[o0 + 2]; XB];
                let mut acc3 = [layer.bias[o0 + 3]; XB];
                for c in 0..spec.in_channels {
                    let src = padded.plane(c);
                    let pk = &packed[c * K * K * OB..(c + 1) * K * K * OB];
                    for ky in ky_lo..ky_hi {
                        let row = (y + ky - pad) * wp;
                        let seg = &src[row + x0..row + x0 + K - 1 + XB];
                        let pk_row = &pk[ky * K * OB..(ky + 1) * K * OB];
                        for kx in 0..K {
                            let iv = &seg[kx..kx + XB];
                            let wv = &pk_row[kx * OB..kx * OB + OB];
                            let (w0, w1, w2, w3) = (wv[0], wv[1], wv[2], wv[3]);
                            for xi in 0..XB {
                                let v = iv[xi];
                                acc0[xi] = w0.mul_add(v, acc0[xi]);
                                acc1[xi] = w1.mul_add(v, acc1[xi]);
                                acc2[xi] = w2.mul_add(v, acc2[xi]);
                                acc3[xi] = w3.mul_add(v, acc3[xi]);
                            }
                        }
                    }
                }
                for (oi, acc_o) in [acc0, acc1, acc2, acc3].iter().enumerate() {
                    let dst = &mut out.data[(o0 + oi) * plane_len + y * w + x0..];
                    dst[..XB].copy_from_slice(acc_o);
                }
            }
        }
        o0 += OB;
    }
    out
}

/// Gradients of one layer given the upstream output gradient.
pub struct ConvGrads {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    /// gradient with respect to the layer input, when requested
    pub input: Option<Tensor>,
}

/// Backward pass of [`conv2d`]: weight, bias, and (optionally) input
/// gradients for the zero-padded cross-correlation.
pub fn conv2d_backward(
    input: &Tensor,
    layer: &ConvLayer,
    grad_out: &Tensor,
    need_input_grad: bool,
) -> Result<ConvGrads> {
    let spec = &layer.spec;
    if grad_out.channels != spec.out_channels
        || grad_out.height != input.height
        || grad_out.width != input.width
    {
        return Err(Error::DimensionMismatch("conv backward shapes".into()));
    }

    let (gw, gb) = match spec.kernel {
        1 => backward_weights::<1>(input, layer, grad_out),
        3 => backward_weights::<3>(input, layer, grad_out),
        5 => backward_weights::<5>(input, layer, grad_out),
        9 => backward_weights::<9>(input, layer, grad_out),
        _ => backward_weights_general(input, layer, grad_out),
    };

    // the input gradient is a convolution of grad_out with the
    // channel-transposed, spatially flipped kernel
    let gin = if need_input_grad {
        let k = spec.kernel;
        let swapped_spec = ConvSpec {
            in_channels: spec.out_channels,
            out_channels: spec.in_channels,
            kernel: k,
            has_relu: false,
        };
        let mut swapped = ConvLayer::zeros(swapped_spec);
        for o in 0..spec.out_channels {
            for c in 0..spec.in_channels {
                for ky in 0..k {
                    for kx in 0..k {
                        swapped.weights[((c * spec.out_channels + o) * k + ky) * k + kx] =
                            layer.weight(o, c, k - 1 - ky, k - 1 - kx);
                    }
                }
            }
        }
        Some(conv2d(grad_out, &swapped)?)
    } else {
        None
    };
    Ok(ConvGrads {
        weights: gw,
        bias: gb,
        input: gin,
    })
}

/// dW[o][c][ky][kx] = sum_{y,x} gout[o][y][x] * in[c][y+ky-pad][x+kx-pad],
/// with per-kx vector partial sums so the reduction lanes stay independent.
fn backward_weights<const K: usize>(
    input: &Tensor,
    layer: &ConvLayer,
    grad_out: &Tensor,
) -> (Vec<f64>, Vec<f64>) {
    let spec = &layer.spec;
    let (h, w) = (input.height, input.width);
    let pad = (K - 1) / 2;
    let mut gw = vec![0.0; spec.weight_count()];
    let mut gb = vec![0.0; spec.out_channels];

    // zero-pad both operands to a tile multiple: the zero upstream
    // gradient columns kill every out-of-range product, so the inner
    // loop needs no boundary handling at all
    let wt = w.div_ceil(XB) * XB;
    let wb = wt + 2 * pad;
    let mut gpad = Tensor::zeros(grad_out.channels, h, wt);
    for o in 0..grad_out.channels {
        let src = grad_out.plane(o);
        let dst = gpad.plane_mut(o);
        for y in 0..h {
            dst[y * wt..y * wt + w].copy_from_slice(&src[y * w..y * w + w]);
        }
    }
    let mut ipad = Tensor::zeros(input.channels, h, wb);
    for c in 0..input.channels {
        let src = input.plane(c);
        let dst = ipad.plane_mut(c);
        for y in 0..h {
            dst[y * wb + pad..y * wb + pad + w].copy_from_slice(&src[y * w..y * w + w]);
        }
    }

    for o in 0..spec.out_channels {
        let gplane = gpad.plane(o);
        gb[o] = grad_out.plane(o).iter().sum();
        for c in 0..spec.in_channels {
            let iplane = ipad.plane(c);
            for ky in 0..K {
                let y0 = pad.saturating_sub(ky);
                let y1 = h.min(h + pad - ky);
                let mut part = [[0.0f64; XB]; K];
                for y in y0..y1 {
                    let a = &gplane[y * wt..y * wt + wt];
                    let brow = (y + ky - pad) * wb;
                    let mut x = 0;
                    while x < wt {
                        let av: &[f64] = &a[x..x + XB];
                        let seg = &iplane[brow + x..brow + x + K - 1 + XB];
                        for kx in 0..K {
                            let bv = &seg[kx..kx + XB];
                            // local copy keeps the accumulator lanes
                            // independent so the loop vectorizes
                            let mut p: [f64; XB] = part[kx];
                            for xi in 0..XB {
                                p[xi] = av[xi].mul_add(bv[xi], p[xi]);
                            }
                            part[kx] = p;
                        }
                        x += XB;
                    }
                }
                for (kx, p) in part.iter().enumerate() {
                    gw[((o * spec.in_channels + c) * K + ky) * K + kx] = p.iter().sum();
                }
            }
        }
    }
    (gw, gb)
}

fn backward_weights_general(
    input: &Tensor,
    layer: &ConvLayer,
    grad_out: &Tensor,
) -> (Vec<f64>, Vec<f64>) {
    let spec = &layer.spec;
    let (h, w) = (input.height, input.width);
    let k = spec.kernel;
    let pad = (k - 1) / 2;
    let mut gw = vec![0.0; spec.weight_count()];
    let mut gb = vec![0.0; spec.out_channels];
    for o in 0..spec.out_channels {
        let gplane = grad_out.plane(o);
        gb[o] = gplane.iter().sum();
        for c in 0..spec.in_channels {
            let iplane = input.plane(c);
            for ky in 0..k {
                for kx in 0..k {
                    let mut acc = 0.0;
                    for y in 0..h {
                        let yy = y as isize + ky as isize - pad as isize;
                        if yy < 0 || yy >= h as isize {
                            continue;
                        }
                        for x in 0..w {
                            let xx = x as isize + kx as isize - pad as isize;
                            if xx < 0 || xx >= w as isize {
                                continue;
                            }
                            acc += gplane[y * w + x] * iplane[yy as usize * w + xx as usize];
                        }
                    }
                    gw[((o * spec.in_channels + c) * k + ky) * k + kx] = acc;
                }
            }
        }
    }
    (gw, gb)
}

/// In-place ReLU.
pub fn relu_inplace(t: &mut Tensor) {
    for v in t.data.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}
