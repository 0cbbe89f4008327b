//! Random generators and deliberately naive reference implementations.
#![allow(dead_code)]

use axkern::model::{ConvLayerSpec, DenseLayerSpec, QuantParams, QuantizedTensor, Requant, TensorShape};
use rand::Rng;

pub fn random_quant(rng: &mut impl Rng) -> QuantParams {
    QuantParams::new(rng.random_range(0.001..0.1), rng.random_range(-128..=127))
}

pub fn random_requant(rng: &mut impl Rng) -> Requant {
    Requant {
        multiplier: rng.random_range(1 << 30..=i32::MAX),
        shift: rng.random_range(0..=14),
    }
}

fn random_act_range(rng: &mut impl Rng) -> (i8, i8) {
    let a: i8 = rng.random();
    let b: i8 = rng.random();
    (a.min(b), a.max(b))
}

/// A small conv layer with arbitrary geometry, any int8 weights and a random bias.
pub fn random_conv(rng: &mut impl Rng) -> ConvLayerSpec {
    let h = rng.random_range(1..=7);
    let w = rng.random_range(1..=7);
    let cin = rng.random_range(1..=4);
    let (pt, pl, pb, pr) = (
        rng.random_range(0..=2),
        rng.random_range(0..=2),
        rng.random_range(0..=2),
        rng.random_range(0..=2),
    );
    let kernel_h = rng.random_range(1..=(h + pt + pb).min(4));
    let kernel_w = rng.random_range(1..=(w + pl + pr).min(4));
    let cout = rng.random_range(1..=6);
    let k = kernel_h * kernel_w * cin;
    let weights: Vec<i8> = (0..cout * k)
        .map(|_| if rng.random_bool(0.15) { 0 } else { rng.random() })
        .collect();
    let bias = (0..cout).map(|_| rng.random_range(-(1 << 20)..=(1 << 20))).collect();
    let (act_min, act_max) = random_act_range(rng);
    ConvLayerSpec {
        in_shape: TensorShape::hwc(h, w, cin),
        out_channels: cout,
        kernel_h,
        kernel_w,
        stride_h: rng.random_range(1..=2),
        stride_w: rng.random_range(1..=2),
        pad_top: pt,
        pad_left: pl,
        pad_bottom: pb,
        pad_right: pr,
        weights,
        bias,
        in_quant: random_quant(rng),
        out_quant: random_quant(rng),
        weight_scale: 0.01,
        requant: random_requant(rng),
        act_min,
        act_max,
    }
}

pub fn random_dense(rng: &mut impl Rng) -> DenseLayerSpec {
    let n = rng.random_range(1..=64);
    let out = rng.random_range(1..=10);
    let (act_min, act_max) = random_act_range(rng);
    DenseLayerSpec {
        in_shape: TensorShape::flat(n),
        out_features: out,
        weights: (0..n * out).map(|_| rng.random()).collect(),
        bias: (0..out).map(|_| rng.random_range(-(1 << 20)..=(1 << 20))).collect(),
        in_quant: random_quant(rng),
        out_quant: random_quant(rng),
        weight_scale: 0.01,
        requant: random_requant(rng),
        act_min,
        act_max,
    }
}

pub fn random_input(rng: &mut impl Rng, shape: &TensorShape, quant: QuantParams) -> QuantizedTensor {
    let data = (0..shape.len()).map(|_| rng.random()).collect();
    QuantizedTensor::new(shape.clone(), data, quant)
}

/// Random skip lists: each product independently skipped with probability `p`.
pub fn random_skips(rng: &mut impl Rng, layer: &ConvLayerSpec, p: f64) -> Vec<Vec<u32>> {
    (0..layer.out_channels)
        .map(|_| {
            (0..layer.kernel_len() as u32)
                .filter(|_| rng.random_bool(p))
                .collect()
        })
        .collect()
}

/// Fixed-point rescale written independently with 128-bit intermediates.
pub fn naive_requant(acc: i32, rq: Requant, zp: i32, lo: i8, hi: i8) -> i8 {
    let prod = acc as i128 * rq.multiplier as i128;
    let t = 31 + rq.shift;
    let half = 1i128 << (t - 1);
    let mag = (prod.abs() + half) >> t;
    let q = if prod < 0 { -mag } else { mag };
    (q + zp as i128).clamp(lo as i128, hi as i128) as i8
}

/// Input value at padded coordinates `(y, x)` minus the zero point, or 0 in padding.
fn padded(layer: &ConvLayerSpec, input: &QuantizedTensor, y: isize, x: isize, c: usize) -> i64 {
    let (h, w, cin) = layer.in_dims();
    if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
        return 0;
    }
    input.data[(y as usize * w + x as usize) * cin + c] as i64 - layer.in_quant.zero_point as i64
}

/// Raw accumulators `[oy][ox][c]` by the textbook loop, skipping `(c, i)` when `skip(c, i)`.
pub fn naive_conv_acc(layer: &ConvLayerSpec, input: &QuantizedTensor, skip: impl Fn(usize, usize) -> bool) -> Vec<i64> {
    let (_, _, cin) = layer.in_dims();
    let (oh, ow) = (layer.out_h(), layer.out_w());
    let mut out = Vec::with_capacity(oh * ow * layer.out_channels);
    for oy in 0..oh {
        for ox in 0..ow {
            for c in 0..layer.out_channels {
                let mut acc = layer.bias[c] as i64;
                for ky in 0..layer.kernel_h {
                    for kx in 0..layer.kernel_w {
                        for ci in 0..cin {
                            let i = (ky * layer.kernel_w + kx) * cin + ci;
                            if skip(c, i) {
                                continue;
                            }
                            let y = (oy * layer.stride_h + ky) as isize - layer.pad_top as isize;
                            let x = (ox * layer.stride_w + kx) as isize - layer.pad_left as isize;
                            let wgt = layer.weights[c * layer.kernel_len() + i] as i64;
                            acc += wgt * padded(layer, input, y, x, ci);
                        }
                    }
                }
                out.push(acc);
            }
        }
    }
    out
}

pub fn naive_conv(layer: &ConvLayerSpec, input: &QuantizedTensor) -> Vec<i8> {
    naive_conv_acc(layer, input, |_, _| false)
        .into_iter()
        .map(|a| {
            naive_requant(
                i32::try_from(a).expect("accumulator fits i32"),
                layer.requant,
                layer.out_quant.zero_point,
                layer.act_min,
                layer.act_max,
            )
        })
        .collect()
}

pub fn naive_dense(layer: &DenseLayerSpec, input: &QuantizedTensor) -> Vec<i8> {
    let n = layer.in_shape.len();
    (0..layer.out_features)
        .map(|o| {
            let mut acc = layer.bias[o] as i64;
            for i in 0..n {
                acc += layer.weights[o * n + i] as i64 * (input.data[i] as i64 - layer.in_quant.zero_point as i64);
            }
            naive_requant(acc as i32, layer.requant, layer.out_quant.zero_point, layer.act_min, layer.act_max)
        })
        .collect()
}

/// Mean of each weight index's input over every sample and output position,
/// gathered through an explicit im2col matrix.
pub fn naive_means(layer: &ConvLayerSpec, inputs: &[QuantizedTensor]) -> Vec<f64> {
    let (_, _, cin) = layer.in_dims();
    let k = layer.kernel_len();
    let mut rows: Vec<Vec<i64>> = Vec::new();
    for x in inputs {
        for oy in 0..layer.out_h() {
            for ox in 0..layer.out_w() {
                let mut row = vec![0; k];
                for ky in 0..layer.kernel_h {
                    for kx in 0..layer.kernel_w {
                        for ci in 0..cin {
                            let y = (oy * layer.stride_h + ky) as isize - layer.pad_top as isize;
                            let xx = (ox * layer.stride_w + kx) as isize - layer.pad_left as isize;
                            row[(ky * layer.kernel_w + kx) * cin + ci] = padded(layer, x, y, xx, ci);
                        }
                    }
                }
                rows.push(row);
            }
        }
    }
    (0..k)
        .map(|i| rows.iter().map(|r| r[i] as f64).sum::<f64>() / rows.len() as f64)
        .collect()
}

/// O(n^2) non-dominated check: maximize accuracy, minimize MACs.
pub fn brute_front(points: &[(f64, u64)]) -> Vec<bool> {
    points
        .iter()
        .map(|&(a, m)| {
            !points
                .iter()
                .any(|&(b, n)| b >= a && n <= m && (b > a || n < m))
        })
        .collect()
}
