use super::{dual_mac, pack_weight_pair, requantize_with, LayerCounters};
use crate::error::{Error, Result};
use crate::model::{
    accumulator_bound, ConvLayerSpec, DenseLayerSpec, PoolLayerSpec, QuantParams, QuantizedTensor,
    TensorShape,
};

/// Two retained products executed as one dual-MAC.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairOp {
    pub first: u32,
    pub second: u32,
    pub packed: i32,
}

/// Trailing retained product when a channel keeps an odd number.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SingleOp {
    pub index: u32,
    pub weight: i8,
}

/// Retained products of one output channel, paired greedily in ascending
/// weight-index order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ChannelProgram {
    pub pairs: Vec<PairOp>,
    pub single: Option<SingleOp>,
}

impl ChannelProgram {
    pub fn from_retained(weights: &[i8], retained: impl IntoIterator<Item = u32>) -> Self {
        let idx: Vec<u32> = retained.into_iter().collect();
        let mut chunks = idx.chunks_exact(2);
        let pairs = chunks
            .by_ref()
            .map(|p| PairOp {
                first: p[0],
                second: p[1],
                packed: pack_weight_pair(weights[p[0] as usize], weights[p[1] as usize]),
            })
            .collect();
        let single = chunks.remainder().first().map(|&i| SingleOp {
            index: i,
            weight: weights[i as usize],
        });
        Self { pairs, single }
    }

    pub fn retained(&self) -> u64 {
        2 * self.pairs.len() as u64 + self.single.is_some() as u64
    }

    /// Retained weight indices in ascending order.
    pub fn retained_indices(&self) -> impl Iterator<Item = u32> + '_ {
        self.pairs
            .iter()
            .flat_map(|p| [p.first, p.second])
            .chain(self.single.map(|s| s.index))
    }

    fn accumulate(&self, bias: i32, field: &[i16]) -> i32 {
        let mut acc = bias;
        for p in &self.pairs {
            acc = dual_mac(acc, p.packed, field[p.first as usize], field[p.second as usize]);
        }
        if let Some(s) = self.single {
            acc = acc.wrapping_add(field[s.index as usize] as i32 * s.weight as i32);
        }
        acc
    }
}

/// Per-channel programs for one conv layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConvProgram {
    pub channels: Vec<ChannelProgram>,
}

impl ConvProgram {
    pub fn exact(layer: &ConvLayerSpec) -> Self {
        let k = layer.kernel_len() as u32;
        Self {
            channels: (0..layer.out_channels)
                .map(|c| ChannelProgram::from_retained(layer.channel_weights(c), 0..k))
                .collect(),
        }
    }

    /// `skips[c]` lists the omitted weight indices of channel `c`.
    pub fn with_skips(layer: &ConvLayerSpec, skips: &[Vec<u32>]) -> Result<Self> {
        if skips.len() != layer.out_channels {
            return Err(Error::Config(format!(
                "skip sets cover {} channels, layer has {}",
                skips.len(),
                layer.out_channels
            )));
        }
        let k = layer.kernel_len();
        let mut channels = Vec::with_capacity(skips.len());
        for (c, skip) in skips.iter().enumerate() {
            let mut omitted = vec![false; k];
            for &i in skip {
                let slot = omitted.get_mut(i as usize).ok_or_else(|| {
                    Error::Config(format!("skip index {i} out of range for channel {c} (kernel length {k})"))
                })?;
                *slot = true;
            }
            let retained = (0..k as u32).filter(|&i| !omitted[i as usize]);
            channels.push(ChannelProgram::from_retained(layer.channel_weights(c), retained));
        }
        Ok(Self { channels })
    }

    /// Retained products summed over channels, i.e. MACs per output position.
    pub fn retained_per_position(&self) -> u64 {
        self.channels.iter().map(ChannelProgram::retained).sum()
    }

    pub fn pairs(&self) -> u64 {
        self.channels.iter().map(|c| c.pairs.len() as u64).sum()
    }

    pub fn singles(&self) -> u64 {
        self.channels.iter().filter(|c| c.single.is_some()).count() as u64
    }
}

fn check_input(layer_idx: usize, shape: &TensorShape, quant: QuantParams, input: &QuantizedTensor) -> Result<()> {
    if &input.shape != shape || input.data.len() != shape.len() {
        return Err(Error::ShapeMismatch {
            layer: layer_idx,
            expected: shape.dims().to_vec(),
            actual: input.shape.dims().to_vec(),
        });
    }
    if input.quant != quant {
        return Err(Error::QuantMismatch {
            layer: layer_idx,
            expected: quant,
            actual: input.quant,
        });
    }
    Ok(())
}

pub(crate) fn check_conv_bound(layer_idx: usize, layer: &ConvLayerSpec) -> Result<()> {
    let bound = accumulator_bound(&layer.weights, &layer.bias, layer.kernel_len(), layer.in_quant.zero_point);
    if bound > i32::MAX as i64 {
        return Err(Error::AccumulatorOverflow { layer: layer_idx, bound });
    }
    Ok(())
}

pub(crate) fn check_dense_bound(layer_idx: usize, layer: &DenseLayerSpec) -> Result<()> {
    let bound = accumulator_bound(&layer.weights, &layer.bias, layer.in_features(), layer.in_quant.zero_point);
    if bound > i32::MAX as i64 {
        return Err(Error::AccumulatorOverflow { layer: layer_idx, bound });
    }
    Ok(())
}

pub(crate) fn conv2d_exact_bound_check(layer: &ConvLayerSpec) -> Result<()> {
    check_conv_bound(0, layer)
}

/// Exact convolution. Checks the accumulator bound on every call; use
/// [`conv2d_with`] with a prepared program in hot loops.
pub fn conv2d_exact(layer: &ConvLayerSpec, input: &QuantizedTensor, counters: &mut LayerCounters) -> Result<QuantizedTensor> {
    check_conv_bound(0, layer)?;
    conv2d_with(layer, &ConvProgram::exact(layer), input, counters)
}

/// Convolution executing only the products kept by `program`.
pub fn conv2d_with(
    layer: &ConvLayerSpec,
    program: &ConvProgram,
    input: &QuantizedTensor,
    counters: &mut LayerCounters,
) -> Result<QuantizedTensor> {
    let acc = conv2d_accumulators(layer, program, input)?;
    let cout = layer.out_channels;
    let data = acc
        .iter()
        .map(|&a| requantize_with(a, layer.requant, layer.out_quant.zero_point, layer.act_min, layer.act_max))
        .collect::<Vec<_>>();
    debug_assert_eq!(data.len(), layer.out_positions() * cout);
    let positions = layer.out_positions() as u64;
    counters.mac_count += positions * program.retained_per_position();
    counters.dual_mac_pairs += positions * program.pairs();
    Ok(QuantizedTensor::new(layer.out_shape(), data, layer.out_quant))
}

/// Raw int32 accumulators in output layout `[oy][ox][c]`, before requantization.
pub fn conv2d_accumulators(layer: &ConvLayerSpec, program: &ConvProgram, input: &QuantizedTensor) -> Result<Vec<i32>> {
    check_input(0, &layer.in_shape, layer.in_quant, input)?;
    if program.channels.len() != layer.out_channels {
        return Err(Error::Config("conv program does not match layer channel count".into()));
    }
    let (h, w, cin) = layer.in_dims();
    let (oh, ow) = (layer.out_h(), layer.out_w());
    let offset = layer.in_quant.input_offset() as i16;
    let mut field = vec![0i16; layer.kernel_len()];
    let mut out = Vec::with_capacity(oh * ow * layer.out_channels);

    for oy in 0..oh {
        for ox in 0..ow {
            let mut f = 0;
            for ky in 0..layer.kernel_h {
                let iy = (oy * layer.stride_h + ky) as isize - layer.pad_top as isize;
                for kx in 0..layer.kernel_w {
                    let ix = (ox * layer.stride_w + kx) as isize - layer.pad_left as isize;
                    let slot = &mut field[f..f + cin];
                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                        slot.fill(0);
                    } else {
                        let base = (iy as usize * w + ix as usize) * cin;
                        for (dst, &src) in slot.iter_mut().zip(&input.data[base..base + cin]) {
                            *dst = src as i16 + offset;
                        }
                    }
                    f += cin;
                }
            }
            for (c, prog) in program.channels.iter().enumerate() {
                out.push(prog.accumulate(layer.bias[c], &field));
            }
        }
    }
    Ok(out)
}

/// Window maximum, no padding; quantization passes through.
pub fn maxpool(spec: &PoolLayerSpec, input: &QuantizedTensor) -> Result<QuantizedTensor> {
    if input.shape != spec.in_shape {
        return Err(Error::ShapeMismatch {
            layer: 0,
            expected: spec.in_shape.dims().to_vec(),
            actual: input.shape.dims().to_vec(),
        });
    }
    let (_, w, c) = spec.in_shape.as_hwc().unwrap_or((0, 0, 0));
    let out_shape = spec.out_shape();
    let (oh, ow, _) = out_shape.as_hwc().unwrap_or((0, 0, 0));
    let mut data = Vec::with_capacity(out_shape.len());
    for oy in 0..oh {
        for ox in 0..ow {
            for ch in 0..c {
                let mut m = i8::MIN;
                for py in 0..spec.pool_h {
                    for px in 0..spec.pool_w {
                        let iy = oy * spec.stride_h + py;
                        let ix = ox * spec.stride_w + px;
                        m = m.max(input.data[(iy * w + ix) * c + ch]);
                    }
                }
                data.push(m);
            }
        }
    }
    Ok(QuantizedTensor::new(out_shape, data, input.quant))
}

/// Raw dense accumulators, one per output feature.
pub fn dense_accumulators(spec: &DenseLayerSpec, input: &QuantizedTensor) -> Result<Vec<i32>> {
    check_input(0, &spec.in_shape, spec.in_quant, input)?;
    let n = spec.in_features();
    let offset = spec.in_quant.input_offset();
    Ok(spec
        .weights
        .chunks_exact(n)
        .zip(&spec.bias)
        .map(|(row, &b)| {
            row.iter()
                .zip(&input.data)
                .fold(b, |acc, (&w, &a)| acc.wrapping_add((a as i32 + offset) * w as i32))
        })
        .collect())
}

pub fn dense(spec: &DenseLayerSpec, input: &QuantizedTensor, counters: &mut LayerCounters) -> Result<QuantizedTensor> {
    let acc = dense_accumulators(spec, input)?;
    let data = acc
        .into_iter()
        .map(|a| requantize_with(a, spec.requant, spec.out_quant.zero_point, spec.act_min, spec.act_max))
        .collect();
    counters.mac_count += spec.mac_count();
    Ok(QuantizedTensor::new(spec.out_shape(), data, spec.out_quant))
}
