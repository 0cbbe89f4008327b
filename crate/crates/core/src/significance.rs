//! Calibration statistics and per-product significance scores.
//!
//! For every conv layer the mean offset-adjusted input feeding each
//! receptive-field index `i = (ky, kx, cin)` is captured over all calibration
//! samples and all output positions. The significance of product `i` in output
//! channel `c` is
//!
//! ```text
//! S_i = | E[a_i] * w_ci / sum_j E[a_j] * w_cj |
//! ```
//!
//! with the bias excluded. A channel whose denominator is exactly zero gets
//! [`RETAIN`] for every product.
//!
//! Means are carried as exact integer sums over a shared count, so the zero
//! test on the denominator is exact and merging shards is order-independent.

use std::path::Path;

use rayon::prelude::*;

use crate::binio::{read_file, write_file, Reader, Writer};
use crate::error::{Error, Result};
use crate::model::{ConvLayerSpec, Dataset, Layer, Model, QuantizedTensor};
use crate::qinfer::{check_dataset, Network};

/// Significance of a product that must never be skipped.
pub const RETAIN: f64 = f64::INFINITY;

pub const SIGNIFICANCE_MAGIC: [u8; 4] = *b"AXSG";
const VERSION: u16 = 1;

/// Exact activation sums for one conv layer: `E[a_i] = sums[i] / count`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerStats {
    pub sums: Vec<i64>,
    /// Samples times output positions.
    pub count: u64,
}

impl LayerStats {
    pub fn new(sums: Vec<i64>, count: u64) -> Self {
        Self { sums, count }
    }

    fn zeros(k: usize) -> Self {
        Self {
            sums: vec![0; k],
            count: 0,
        }
    }

    pub fn mean(&self, i: usize) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.sums[i] as f64 / self.count as f64
        }
    }

    pub fn means(&self) -> Vec<f64> {
        (0..self.sums.len()).map(|i| self.mean(i)).collect()
    }

    pub fn merge(&mut self, other: &LayerStats) {
        for (a, b) in self.sums.iter_mut().zip(&other.sums) {
            *a += b;
        }
        self.count += other.count;
    }
}

/// Mean conv-layer inputs, indexed by conv ordinal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExpectedInputs {
    pub layers: Vec<LayerStats>,
    pub sample_count: usize,
}

impl ExpectedInputs {
    fn empty(m: &Model) -> Self {
        Self {
            layers: m.conv_layers().map(|(_, c)| LayerStats::zeros(c.kernel_len())).collect(),
            sample_count: 0,
        }
    }

    fn merge(mut self, other: ExpectedInputs) -> Self {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.merge(b);
        }
        self.sample_count += other.sample_count;
        self
    }
}

/// Adds the receptive-field sums of one conv input to `stats`.
pub(crate) fn accumulate_field_sums(layer: &ConvLayerSpec, input: &QuantizedTensor, stats: &mut LayerStats) {
    let (h, w, cin) = layer.in_dims();
    let offset = layer.in_quant.input_offset() as i64;
    let (oh, ow) = (layer.out_h(), layer.out_w());
    for ky in 0..layer.kernel_h {
        for kx in 0..layer.kernel_w {
            let base_i = (ky * layer.kernel_w + kx) * cin;
            for oy in 0..oh {
                let iy = (oy * layer.stride_h + ky) as isize - layer.pad_top as isize;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for ox in 0..ow {
                    let ix = (ox * layer.stride_w + kx) as isize - layer.pad_left as isize;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let px = (iy as usize * w + ix as usize) * cin;
                    for ci in 0..cin {
                        stats.sums[base_i + ci] += input.data[px + ci] as i64 + offset;
                    }
                }
            }
        }
    }
    stats.count += (oh * ow) as u64;
}

/// Runs exact inference over the first `min(max_samples, |calib|)` samples and
/// records the mean offset-adjusted input of every conv weight index.
/// Padded positions count as zero.
pub fn capture_activation_stats(m: &Model, calib: &Dataset, max_samples: usize) -> Result<ExpectedInputs> {
    if max_samples == 0 {
        return Err(Error::Config("max_samples must be at least 1".into()));
    }
    check_dataset(m, calib).or_else(|e| match e {
        // Labels are irrelevant for calibration.
        Error::LabelOutOfRange { .. } => Ok(()),
        other => Err(other),
    })?;
    let net = Network::exact(m)?;
    let quant = m.input_quant();
    let n = max_samples.min(calib.len());

    // conv ordinal for each model layer
    let mut ordinal = vec![None; m.layers.len()];
    for (ord, (idx, _)) in m.conv_layers().enumerate() {
        ordinal[idx] = Some(ord);
    }

    (0..n)
        .into_par_iter()
        .map(|k| -> Result<ExpectedInputs> {
            let mut stats = ExpectedInputs::empty(m);
            net.forward_with(&calib.tensor(k, quant), |idx, input| {
                if let (Some(ord), Layer::Conv2d(c)) = (ordinal[idx], &m.layers[idx]) {
                    accumulate_field_sums(c, input, &mut stats.layers[ord]);
                }
            })?;
            stats.sample_count = 1;
            Ok(stats)
        })
        .try_reduce(|| ExpectedInputs::empty(m), |a, b| Ok(a.merge(b)))
}

/// Significance scores of one conv layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerSignificance {
    pub kernel_len: usize,
    /// Output spatial positions of the layer, used for MAC accounting.
    pub out_positions: u64,
    /// `channels[c][i]`: non-negative score or [`RETAIN`].
    pub channels: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignificanceSummary {
    pub min: f64,
    pub median: f64,
    pub max: f64,
    pub retained_channels: usize,
    pub retained_products: usize,
}

impl LayerSignificance {
    /// Min / median / max over finite scores and RETAIN counts.
    pub fn summary(&self) -> SignificanceSummary {
        let mut finite: Vec<f64> = self.channels.iter().flatten().copied().filter(|s| s.is_finite()).collect();
        finite.sort_by(f64::total_cmp);
        let retained_channels = self.channels.iter().filter(|c| c.iter().any(|s| s.is_infinite())).count();
        let (min, median, max) = if finite.is_empty() {
            (f64::NAN, f64::NAN, f64::NAN)
        } else {
            let mid = finite.len() / 2;
            let median = if finite.len().is_multiple_of(2) {
                (finite[mid - 1] + finite[mid]) / 2.0
            } else {
                finite[mid]
            };
            (finite[0], median, finite[finite.len() - 1])
        };
        SignificanceSummary {
            min,
            median,
            max,
            retained_channels,
            retained_products: self.channels.iter().flatten().filter(|s| s.is_infinite()).count(),
        }
    }
}

/// Per-layer significance, indexed by conv ordinal.
#[derive(Debug, Clone, PartialEq)]
pub struct SignificanceMap {
    pub layers: Vec<LayerSignificance>,
}

/// Scores every product of every output channel of `layer`.
pub fn compute_significance(layer: &ConvLayerSpec, stats: &LayerStats) -> Result<LayerSignificance> {
    let k = layer.kernel_len();
    if stats.sums.len() != k {
        return Err(Error::Config(format!(
            "statistics cover {} weight indices, layer has {k}",
            stats.sums.len()
        )));
    }
    let channels = (0..layer.out_channels)
        .map(|c| {
            let products: Vec<i128> = layer
                .channel_weights(c)
                .iter()
                .zip(&stats.sums)
                .map(|(&w, &s)| w as i128 * s as i128)
                .collect();
            let denom: i128 = products.iter().sum();
            if denom == 0 {
                vec![RETAIN; k]
            } else {
                let d = denom as f64;
                products.iter().map(|&p| (p as f64 / d).abs()).collect()
            }
        })
        .collect();
    Ok(LayerSignificance {
        kernel_len: k,
        out_positions: layer.out_positions() as u64,
        channels,
    })
}

/// Significance for every conv layer of `m`.
pub fn significance_map(m: &Model, e: &ExpectedInputs) -> Result<SignificanceMap> {
    if e.layers.len() != m.conv_count() {
        return Err(Error::Config(format!(
            "statistics for {} conv layers, model has {}",
            e.layers.len(),
            m.conv_count()
        )));
    }
    let layers = m
        .conv_layers()
        .zip(&e.layers)
        .map(|((_, c), s)| compute_significance(c, s))
        .collect::<Result<_>>()?;
    Ok(SignificanceMap { layers })
}

impl SignificanceMap {
    /// `"AXSG" | version u16 | layers u32 | per layer: channels u32, kernel_len u32,
    /// out_positions u64, channels * kernel_len f64` (little-endian, RETAIN as +Inf).
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.bytes(&SIGNIFICANCE_MAGIC).u16(VERSION).u32(self.layers.len() as u32);
        for l in &self.layers {
            w.u32(l.channels.len() as u32).u32(l.kernel_len as u32).u64(l.out_positions);
            for &s in l.channels.iter().flatten() {
                w.f64(s);
            }
        }
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, "significance file");
        r.magic(SIGNIFICANCE_MAGIC)?;
        r.version(VERSION)?;
        let n = r.u32()? as usize;
        let mut layers = Vec::with_capacity(n.min(1024));
        for _ in 0..n {
            let cout = r.u32()? as usize;
            let k = r.u32()? as usize;
            let out_positions = r.u64()?;
            let mut channels = Vec::with_capacity(cout.min(1 << 16));
            for _ in 0..cout {
                let ch = (0..k).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
                if ch.iter().any(|s| s.is_nan() || *s < 0.0 || *s == f64::NEG_INFINITY) {
                    return Err(Error::Format {
                        what: "significance file",
                        detail: "scores must be non-negative or +Inf".into(),
                    });
                }
                channels.push(ch);
            }
            layers.push(LayerSignificance {
                kernel_len: k,
                out_positions,
                channels,
            });
        }
        r.finish()?;
        Ok(Self { layers })
    }
}

pub fn save_significance(map: &SignificanceMap, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &map.to_bytes())
}

pub fn load_significance(path: impl AsRef<Path>) -> Result<SignificanceMap> {
    SignificanceMap::from_bytes(&read_file(path.as_ref())?)
}
