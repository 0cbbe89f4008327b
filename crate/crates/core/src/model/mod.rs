//! Pre-quantized CNN models and int8 datasets.
//!
//! Activations are laid out height × width × channels (batch of one),
//! convolution weights as `[out_channel][kernel_h][kernel_w][in_channel]`
//! and dense weights as `[out][in]`. Quantization is per tensor.

mod dataset;
mod fixture;
mod manifest;
mod validate;

pub use dataset::{load_dataset, save_dataset, Dataset, DATASET_MAGIC};
pub use fixture::{generate_fixture, FixtureParams};
pub use manifest::{load_model, save_model};
pub use validate::{accumulator_bound, validate_model, Violation};

use serde::{Deserialize, Serialize};

/// Ordered tensor extents. Rank 3 is `[height, width, channels]`, rank 1 is a flat vector.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TensorShape(Vec<usize>);

impl TensorShape {
    pub fn new(dims: Vec<usize>) -> Self {
        Self(dims)
    }

    pub fn hwc(h: usize, w: usize, c: usize) -> Self {
        Self(vec![h, w, c])
    }

    pub fn flat(n: usize) -> Self {
        Self(vec![n])
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    /// Number of elements.
    pub fn len(&self) -> usize {
        self.0.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(height, width, channels)` for rank-3 shapes.
    pub fn as_hwc(&self) -> Option<(usize, usize, usize)> {
        match self.0[..] {
            [h, w, c] => Some((h, w, c)),
            _ => None,
        }
    }

    pub(crate) fn is_well_formed(&self) -> bool {
        matches!(self.rank(), 1 | 3) && self.0.iter().all(|&d| d >= 1)
    }
}

impl std::fmt::Display for TensorShape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|d| d.to_string()).collect();
        f.write_str(&parts.join("x"))
    }
}

/// Affine int8 quantization: `real = scale * (q - zero_point)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantParams {
    pub scale: f64,
    pub zero_point: i32,
}

impl QuantParams {
    pub fn new(scale: f64, zero_point: i32) -> Self {
        Self { scale, zero_point }
    }

    /// Value added to every raw input before multiplication.
    pub fn input_offset(&self) -> i32 {
        -self.zero_point
    }
}

/// Fixed-point requantization pair: the real ratio is `multiplier * 2^-(31 + shift)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Requant {
    pub multiplier: i32,
    pub shift: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedTensor {
    pub shape: TensorShape,
    pub data: Vec<i8>,
    pub quant: QuantParams,
}

impl QuantizedTensor {
    pub fn new(shape: TensorShape, data: Vec<i8>, quant: QuantParams) -> Self {
        debug_assert_eq!(shape.len(), data.len());
        Self { shape, data, quant }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayerSpec {
    pub in_shape: TensorShape,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride_h: usize,
    pub stride_w: usize,
    pub pad_top: usize,
    pub pad_left: usize,
    pub pad_bottom: usize,
    pub pad_right: usize,
    /// `[out_channel][kernel_h][kernel_w][in_channel]`
    pub weights: Vec<i8>,
    pub bias: Vec<i32>,
    pub in_quant: QuantParams,
    pub out_quant: QuantParams,
    pub weight_scale: f64,
    pub requant: Requant,
    pub act_min: i8,
    pub act_max: i8,
}

impl ConvLayerSpec {
    pub fn in_dims(&self) -> (usize, usize, usize) {
        self.in_shape.as_hwc().unwrap_or((0, 0, 0))
    }

    pub fn in_channels(&self) -> usize {
        self.in_dims().2
    }

    /// Products per output element, `kernel_h * kernel_w * in_channels`.
    pub fn kernel_len(&self) -> usize {
        self.kernel_h * self.kernel_w * self.in_channels()
    }

    pub fn out_h(&self) -> usize {
        out_extent(self.in_dims().0, self.pad_top + self.pad_bottom, self.kernel_h, self.stride_h)
    }

    pub fn out_w(&self) -> usize {
        out_extent(self.in_dims().1, self.pad_left + self.pad_right, self.kernel_w, self.stride_w)
    }

    pub fn out_shape(&self) -> TensorShape {
        TensorShape::hwc(self.out_h(), self.out_w(), self.out_channels)
    }

    /// Output spatial positions, `out_h * out_w`.
    pub fn out_positions(&self) -> usize {
        self.out_h() * self.out_w()
    }

    pub fn channel_weights(&self, c: usize) -> &[i8] {
        let k = self.kernel_len();
        &self.weights[c * k..(c + 1) * k]
    }

    /// Unskipped MAC count, `H_out * W_out * C_out * C_in * kh * kw`.
    pub fn mac_count(&self) -> u64 {
        (self.out_positions() * self.out_channels * self.kernel_len()) as u64
    }

    /// Splits a receptive-field index into `(ky, kx, cin)`.
    pub fn split_index(&self, i: usize) -> (usize, usize, usize) {
        let cin = self.in_channels();
        (i / (self.kernel_w * cin), (i / cin) % self.kernel_w, i % cin)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoolLayerSpec {
    pub in_shape: TensorShape,
    pub pool_h: usize,
    pub pool_w: usize,
    pub stride_h: usize,
    pub stride_w: usize,
}

impl PoolLayerSpec {
    pub fn out_shape(&self) -> TensorShape {
        let (h, w, c) = self.in_shape.as_hwc().unwrap_or((0, 0, 0));
        TensorShape::hwc(
            out_extent(h, 0, self.pool_h, self.stride_h),
            out_extent(w, 0, self.pool_w, self.stride_w),
            c,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayerSpec {
    /// Any well-formed shape; the input is consumed flattened.
    pub in_shape: TensorShape,
    pub out_features: usize,
    /// `[out][in]`
    pub weights: Vec<i8>,
    pub bias: Vec<i32>,
    pub in_quant: QuantParams,
    pub out_quant: QuantParams,
    pub weight_scale: f64,
    pub requant: Requant,
    pub act_min: i8,
    pub act_max: i8,
}

impl DenseLayerSpec {
    pub fn in_features(&self) -> usize {
        self.in_shape.len()
    }

    pub fn out_shape(&self) -> TensorShape {
        TensorShape::flat(self.out_features)
    }

    pub fn mac_count(&self) -> u64 {
        (self.in_features() * self.out_features) as u64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv2d(ConvLayerSpec),
    MaxPool(PoolLayerSpec),
    Dense(DenseLayerSpec),
}

impl Layer {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Conv2d(_) => "conv2d",
            Layer::MaxPool(_) => "maxpool",
            Layer::Dense(_) => "dense",
        }
    }

    pub fn in_shape(&self) -> &TensorShape {
        match self {
            Layer::Conv2d(l) => &l.in_shape,
            Layer::MaxPool(l) => &l.in_shape,
            Layer::Dense(l) => &l.in_shape,
        }
    }

    pub fn out_shape(&self) -> TensorShape {
        match self {
            Layer::Conv2d(l) => l.out_shape(),
            Layer::MaxPool(l) => l.out_shape(),
            Layer::Dense(l) => l.out_shape(),
        }
    }

    /// Quantization of the layer input; `None` for layers that pass it through.
    pub fn in_quant(&self) -> Option<QuantParams> {
        match self {
            Layer::Conv2d(l) => Some(l.in_quant),
            Layer::Dense(l) => Some(l.in_quant),
            Layer::MaxPool(_) => None,
        }
    }

    pub fn out_quant(&self) -> Option<QuantParams> {
        match self {
            Layer::Conv2d(l) => Some(l.out_quant),
            Layer::Dense(l) => Some(l.out_quant),
            Layer::MaxPool(_) => None,
        }
    }

    /// Exact (unskipped) MAC count.
    pub fn mac_count(&self) -> u64 {
        match self {
            Layer::Conv2d(l) => l.mac_count(),
            Layer::MaxPool(_) => 0,
            Layer::Dense(l) => l.mac_count(),
        }
    }

    /// Stored weight count.
    pub fn param_count(&self) -> usize {
        match self {
            Layer::Conv2d(l) => l.weights.len() + l.bias.len(),
            Layer::MaxPool(_) => 0,
            Layer::Dense(l) => l.weights.len() + l.bias.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub name: String,
    pub layers: Vec<Layer>,
    pub num_classes: usize,
}

impl Model {
    /// Conv layers as `(model layer index, spec)`, in network order.
    /// The position within this sequence is the conv ordinal used by
    /// significance maps, configs and skip plans.
    pub fn conv_layers(&self) -> impl Iterator<Item = (usize, &ConvLayerSpec)> {
        self.layers.iter().enumerate().filter_map(|(i, l)| match l {
            Layer::Conv2d(c) => Some((i, c)),
            _ => None,
        })
    }

    pub fn conv_count(&self) -> usize {
        self.conv_layers().count()
    }

    pub fn input_shape(&self) -> &TensorShape {
        self.layers[0].in_shape()
    }

    /// Quantization of the network input, taken from the first quantized layer.
    pub fn input_quant(&self) -> QuantParams {
        self.layers
            .iter()
            .find_map(Layer::in_quant)
            .unwrap_or(QuantParams::new(1.0, 0))
    }

    /// `(conv, pool, dense)` layer counts.
    pub fn topology(&self) -> (usize, usize, usize) {
        self.layers.iter().fold((0, 0, 0), |(c, p, d), l| match l {
            Layer::Conv2d(_) => (c + 1, p, d),
            Layer::MaxPool(_) => (c, p + 1, d),
            Layer::Dense(_) => (c, p, d + 1),
        })
    }

    pub fn exact_conv_macs(&self) -> u64 {
        self.conv_layers().map(|(_, c)| c.mac_count()).sum()
    }

    pub fn exact_total_macs(&self) -> u64 {
        self.layers.iter().map(Layer::mac_count).sum()
    }
}

fn out_extent(input: usize, pad: usize, kernel: usize, stride: usize) -> usize {
    if stride == 0 {
        return 0;
    }
    (input + pad)
        .checked_sub(kernel)
        .map_or(0, |span| span / stride + 1)
}
