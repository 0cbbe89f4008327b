//! Deterministic synthetic models and datasets.
//!
//! Samples are noisy copies of one random prototype image per class. Conv
//! weights are random non-zero int8 values with a forced fraction set to
//! exactly zero. Biases and requantization are calibrated on the generated
//! samples so each conv channel stays active after ReLU, and the final dense
//! layer is a nearest-centroid classifier over the last feature map.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{
    ConvLayerSpec, Dataset, DenseLayerSpec, Layer, Model, PoolLayerSpec, QuantParams,
    QuantizedTensor, Requant, TensorShape,
};
use crate::qinfer::{conv2d_accumulators, dense_accumulators, maxpool, quantize_multiplier, ConvProgram};

#[derive(Debug, Clone, PartialEq)]
pub struct FixtureParams {
    /// Minimum fraction of each conv layer's weights forced to exactly zero.
    pub zero_weight_fraction: f64,
    pub seed: u64,
    pub num_classes: usize,
    /// Input `(height, width, channels)`.
    pub input: (usize, usize, usize),
    /// Output channels of each 3x3 conv layer (at most three). The first
    /// two conv layers are followed by a 2x2 max-pool.
    pub conv_channels: Vec<usize>,
    pub samples_per_class: usize,
    /// Standard deviation of the per-pixel noise, in raw int8 units.
    pub noise: f64,
}

impl Default for FixtureParams {
    fn default() -> Self {
        Self {
            zero_weight_fraction: 0.0,
            seed: 0,
            num_classes: 4,
            input: (16, 16, 1),
            conv_channels: vec![4, 8, 8],
            samples_per_class: 64,
            noise: 96.0,
        }
    }
}

const CALIBRATION_SAMPLES: usize = 64;
const INPUT_ZERO_POINT: i32 = -128;

/// Builds a fixture model and a labeled dataset. Identical params give identical output.
///
/// Panics if `zero_weight_fraction` is outside `[0, 1]`, there are more than
/// three conv layers, or any size parameter is zero.
pub fn generate_fixture(params: &FixtureParams) -> (Model, Dataset) {
    let p = params.zero_weight_fraction;
    assert!((0.0..=1.0).contains(&p), "zero_weight_fraction {p} outside [0, 1]");
    assert!(params.conv_channels.len() <= 3, "at most three conv layers");
    assert!(params.num_classes >= 1 && params.samples_per_class >= 1);
    let (h, w, c) = params.input;
    assert!(h >= 1 && w >= 1 && c >= 1);

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let shape = TensorShape::hwc(h, w, c);
    let n_pixels = shape.len();

    let prototypes: Vec<Vec<i8>> = (0..params.num_classes)
        .map(|_| (0..n_pixels).map(|_| rng.random_range(-128..=127)).collect())
        .collect();
    let noise = Normal::new(0.0, params.noise.max(0.0)).expect("finite noise");
    let total = params.num_classes * params.samples_per_class;
    let mut data = Vec::with_capacity(total * n_pixels);
    let mut labels = Vec::with_capacity(total);
    for k in 0..total {
        let class = k % params.num_classes;
        for &v in &prototypes[class] {
            let x = v as f64 + noise.sample(&mut rng);
            data.push(x.round().clamp(-128.0, 127.0) as i8);
        }
        labels.push(class as u8);
    }
    let dataset = Dataset::new(shape.clone(), data, labels).expect("consistent fixture dataset");

    let input_quant = QuantParams::new(1.0 / 255.0, INPUT_ZERO_POINT);
    let mut acts: Vec<QuantizedTensor> = (0..total).map(|k| dataset.tensor(k, input_quant)).collect();
    let mut layers = Vec::new();
    let weight_scale = 1.0 / 64.0;

    for (i, &cout) in params.conv_channels.iter().enumerate() {
        let in_shape = acts[0].shape.clone();
        let in_quant = acts[0].quant;
        let cin = in_shape.dims()[2];
        let k = 9 * cin;
        let mut weights: Vec<i8> = (0..cout * k)
            .map(|_| {
                let m = rng.random_range(1..=96i8);
                if rng.random_bool(0.5) { m } else { -m }
            })
            .collect();
        let zeros = (p * weights.len() as f64).ceil() as usize;
        let mut idx: Vec<usize> = (0..weights.len()).collect();
        idx.shuffle(&mut rng);
        for &j in idx.iter().take(zeros) {
            weights[j] = 0;
        }
        let mut layer = ConvLayerSpec {
            in_shape,
            out_channels: cout,
            kernel_h: 3,
            kernel_w: 3,
            stride_h: 1,
            stride_w: 1,
            pad_top: 1,
            pad_left: 1,
            pad_bottom: 1,
            pad_right: 1,
            weights,
            bias: vec![0; cout],
            in_quant,
            out_quant: in_quant,
            weight_scale,
            requant: Requant { multiplier: 1 << 30, shift: 0 },
            act_min: INPUT_ZERO_POINT as i8,
            act_max: 127,
        };

        // Per-channel accumulator samples with zero bias.
        let program = ConvProgram::exact(&layer);
        let mut per_channel: Vec<Vec<i32>> = vec![Vec::new(); cout];
        for a in acts.iter().take(CALIBRATION_SAMPLES) {
            let acc = conv2d_accumulators(&layer, &program, a).expect("fixture conv");
            for (j, v) in acc.into_iter().enumerate() {
                per_channel[j % cout].push(v);
            }
        }
        let mut peak = 1i64;
        for (ch, vals) in per_channel.iter_mut().enumerate() {
            vals.sort_unstable();
            let b = -percentile(vals, 0.4);
            layer.bias[ch] = b;
            let hi = percentile(vals, 0.995) as i64 + b as i64;
            peak = peak.max(hi);
        }
        let ratio = (255.0 / peak as f64).min(0.999);
        layer.requant = quantize_multiplier(ratio).expect("ratio in (0, 1)");
        layer.out_quant = QuantParams::new(in_quant.scale * weight_scale / ratio, INPUT_ZERO_POINT);

        let program = ConvProgram::exact(&layer);
        let mut counters = Default::default();
        acts = acts
            .iter()
            .map(|a| crate::qinfer::conv2d_with(&layer, &program, a, &mut counters).expect("fixture conv"))
            .collect();
        layers.push(Layer::Conv2d(layer));

        if i < 2 {
            let (ih, iw, _) = acts[0].shape.as_hwc().unwrap();
            if ih >= 2 && iw >= 2 {
                let pool = PoolLayerSpec {
                    in_shape: acts[0].shape.clone(),
                    pool_h: 2,
                    pool_w: 2,
                    stride_h: 2,
                    stride_w: 2,
                };
                acts = acts.iter().map(|a| maxpool(&pool, a).expect("fixture pool")).collect();
                layers.push(Layer::MaxPool(pool));
            }
        }
    }

    layers.push(Layer::Dense(centroid_head(&acts, dataset.labels(), params.num_classes)));

    let model = Model {
        name: format!("fixture-p{p}-s{}", params.seed),
        layers,
        num_classes: params.num_classes,
    };
    (model, dataset)
}

/// Dense layer scoring `w_c . f - ||mu_c||^2 / 2` style nearest-centroid logits.
fn centroid_head(acts: &[QuantizedTensor], labels: &[u8], classes: usize) -> DenseLayerSpec {
    let in_shape = acts[0].shape.clone();
    let in_quant = acts[0].quant;
    let n = in_shape.len();
    let offset = in_quant.input_offset() as f64;

    let mut centroids = vec![vec![0f64; n]; classes];
    let mut counts = vec![0usize; classes];
    for (a, &l) in acts.iter().zip(labels) {
        counts[l as usize] += 1;
        for (m, &v) in centroids[l as usize].iter_mut().zip(&a.data) {
            *m += v as f64 + offset;
        }
    }
    for (c, cnt) in centroids.iter_mut().zip(&counts) {
        c.iter_mut().for_each(|m| *m /= (*cnt).max(1) as f64);
    }
    let grand: Vec<f64> = (0..n)
        .map(|i| centroids.iter().map(|c| c[i]).sum::<f64>() / classes as f64)
        .collect();
    let max_diff = centroids
        .iter()
        .flat_map(|c| c.iter().zip(&grand).map(|(m, g)| (m - g).abs()))
        .fold(0f64, f64::max)
        .max(1e-9);
    let alpha = 127.0 / max_diff;

    let mut weights = Vec::with_capacity(classes * n);
    let mut bias = Vec::with_capacity(classes);
    for c in &centroids {
        let row: Vec<i8> = c
            .iter()
            .zip(&grand)
            .map(|(m, g)| (alpha * (m - g)).round().clamp(-127.0, 127.0) as i8)
            .collect();
        let b: f64 = row
            .iter()
            .zip(c.iter().zip(&grand))
            .map(|(&w, (m, g))| w as f64 * (m + g) / 2.0)
            .sum();
        bias.push(-b.round() as i32);
        weights.extend(row);
    }

    let mut spec = DenseLayerSpec {
        in_shape,
        out_features: classes,
        weights,
        bias,
        in_quant,
        out_quant: QuantParams::new(1.0, 0),
        weight_scale: 1.0 / 64.0,
        requant: Requant { multiplier: 1 << 30, shift: 0 },
        act_min: -128,
        act_max: 127,
    };
    let peak = acts
        .iter()
        .flat_map(|a| dense_accumulators(&spec, a).expect("fixture dense"))
        .map(|v| (v as i64).abs())
        .max()
        .unwrap_or(1)
        .max(1);
    let ratio = (100.0 / peak as f64).min(0.999);
    spec.requant = quantize_multiplier(ratio).expect("ratio in (0, 1)");
    spec.out_quant = QuantParams::new(in_quant.scale * spec.weight_scale / ratio, 0);
    spec
}

fn percentile(sorted: &[i32], q: f64) -> i32 {
    if sorted.is_empty() {
        return 0;
    }
    sorted[((sorted.len() - 1) as f64 * q).round() as usize]
}
