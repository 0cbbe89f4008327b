use super::{Layer, Model, QuantParams, Requant};

/// One broken invariant. `layer` is `None` for model-level problems.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub layer: Option<usize>,
    pub message: String,
}

impl Violation {
    fn at(layer: usize, message: impl Into<String>) -> Self {
        Self {
            layer: Some(layer),
            message: message.into(),
        }
    }

    fn model(message: impl Into<String>) -> Self {
        Self {
            layer: None,
            message: message.into(),
        }
    }
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.layer {
            Some(l) => write!(f, "layer {l}: {}", self.message),
            None => write!(f, "model: {}", self.message),
        }
    }
}

/// Largest possible `|accumulator|` over every output channel.
///
/// Offset-adjusted inputs span `[-128 - zp, 127 - zp]`, so the bound is
/// `max_c |bias_c| + max|a + offset| * sum_i |w_ci|`.
pub fn accumulator_bound(weights: &[i8], bias: &[i32], per_channel: usize, in_zero_point: i32) -> i64 {
    if per_channel == 0 {
        return bias.iter().map(|b| (*b as i64).abs()).max().unwrap_or(0);
    }
    let max_in = (127 - in_zero_point as i64).max(in_zero_point as i64 + 128);
    weights
        .chunks(per_channel)
        .zip(bias)
        .map(|(w, b)| {
            let wsum: i64 = w.iter().map(|&x| (x as i64).abs()).sum();
            (*b as i64).abs() + max_in * wsum
        })
        .max()
        .unwrap_or(0)
}

/// Checks every structural and numeric invariant of `m`. An empty list means valid.
pub fn validate_model(m: &Model) -> Vec<Violation> {
    let mut out = Vec::new();

    if m.num_classes == 0 {
        out.push(Violation::model("num_classes must be at least 1"));
    }
    if m.layers.is_empty() {
        out.push(Violation::model("model has no layers"));
        return out;
    }
    if !m.layers.iter().any(|l| l.in_quant().is_some()) {
        out.push(Violation::model("model has no conv2d or dense layer"));
    }

    for (idx, layer) in m.layers.iter().enumerate() {
        check_layer(idx, layer, &mut out);
    }

    // Shape and quantization chaining.
    let mut carried_quant: Option<QuantParams> = None;
    for (idx, pair) in m.layers.windows(2).enumerate() {
        let produced = pair[0].out_shape();
        if &produced != pair[1].in_shape() {
            out.push(Violation::at(
                idx,
                format!(
                    "output shape {produced} does not match layer {} input shape {}",
                    idx + 1,
                    pair[1].in_shape()
                ),
            ));
        }
    }
    for (idx, layer) in m.layers.iter().enumerate() {
        if let (Some(prev), Some(cur)) = (carried_quant, layer.in_quant()) {
            if prev != cur {
                out.push(Violation::at(
                    idx,
                    "in_quant differs from the preceding layer's out_quant",
                ));
            }
        }
        if let Some(q) = layer.out_quant() {
            carried_quant = Some(q);
        }
    }

    let last = m.layers.last().unwrap().out_shape();
    if last.len() != m.num_classes {
        out.push(Violation::at(
            m.layers.len() - 1,
            format!(
                "final output has {} elements but num_classes is {}",
                last.len(),
                m.num_classes
            ),
        ));
    }
    out
}

fn check_layer(idx: usize, layer: &Layer, out: &mut Vec<Violation>) {
    let shape = layer.in_shape();
    if !shape.is_well_formed() {
        out.push(Violation::at(
            idx,
            format!("input shape {shape:?} must have rank 1 or 3 with extents >= 1"),
        ));
    }
    match layer {
        Layer::Conv2d(c) => {
            if shape.rank() != 3 {
                out.push(Violation::at(idx, "conv2d input must be height x width x channels"));
                return;
            }
            for (name, v) in [
                ("out_channels", c.out_channels),
                ("kernel_h", c.kernel_h),
                ("kernel_w", c.kernel_w),
                ("stride_h", c.stride_h),
                ("stride_w", c.stride_w),
            ] {
                if v == 0 {
                    out.push(Violation::at(idx, format!("{name} must be at least 1")));
                }
            }
            if c.kernel_h > 0 && c.kernel_w > 0 && c.stride_h > 0 && c.stride_w > 0 && c.out_positions() == 0 {
                out.push(Violation::at(idx, "kernel does not fit the padded input"));
            }
            check_params(
                idx,
                ParamCheck {
                    weights: c.weights.len(),
                    expected_weights: c.out_channels * c.kernel_len(),
                    bias: c.bias.len(),
                    outputs: c.out_channels,
                    in_quant: c.in_quant,
                    out_quant: c.out_quant,
                    weight_scale: c.weight_scale,
                    requant: c.requant,
                    act: (c.act_min, c.act_max),
                },
                out,
            );
            if c.weights.len() == c.out_channels * c.kernel_len() && c.bias.len() == c.out_channels {
                let bound = accumulator_bound(&c.weights, &c.bias, c.kernel_len(), c.in_quant.zero_point);
                if bound > i32::MAX as i64 {
                    out.push(Violation::at(idx, format!("worst-case accumulator {bound} exceeds int32")));
                }
            }
        }
        Layer::MaxPool(p) => {
            if shape.rank() != 3 {
                out.push(Violation::at(idx, "maxpool input must be height x width x channels"));
                return;
            }
            for (name, v) in [
                ("pool_h", p.pool_h),
                ("pool_w", p.pool_w),
                ("stride_h", p.stride_h),
                ("stride_w", p.stride_w),
            ] {
                if v == 0 {
                    out.push(Violation::at(idx, format!("{name} must be at least 1")));
                }
            }
            if p.out_shape().is_empty() {
                out.push(Violation::at(idx, "pool window larger than input"));
            }
        }
        Layer::Dense(d) => {
            if d.out_features == 0 {
                out.push(Violation::at(idx, "out_features must be at least 1"));
            }
            check_params(
                idx,
                ParamCheck {
                    weights: d.weights.len(),
                    expected_weights: d.out_features * d.in_features(),
                    bias: d.bias.len(),
                    outputs: d.out_features,
                    in_quant: d.in_quant,
                    out_quant: d.out_quant,
                    weight_scale: d.weight_scale,
                    requant: d.requant,
                    act: (d.act_min, d.act_max),
                },
                out,
            );
            if d.weights.len() == d.out_features * d.in_features() && d.bias.len() == d.out_features {
                let bound = accumulator_bound(&d.weights, &d.bias, d.in_features(), d.in_quant.zero_point);
                if bound > i32::MAX as i64 {
                    out.push(Violation::at(idx, format!("worst-case accumulator {bound} exceeds int32")));
                }
            }
        }
    }
}

struct ParamCheck {
    weights: usize,
    expected_weights: usize,
    bias: usize,
    outputs: usize,
    in_quant: QuantParams,
    out_quant: QuantParams,
    weight_scale: f64,
    requant: Requant,
    act: (i8, i8),
}

fn check_params(idx: usize, p: ParamCheck, out: &mut Vec<Violation>) {
    if p.weights != p.expected_weights {
        out.push(Violation::at(
            idx,
            format!("weight count {} does not match expected {}", p.weights, p.expected_weights),
        ));
    }
    if p.bias != p.outputs {
        out.push(Violation::at(
            idx,
            format!("bias length {} does not match {} output channels", p.bias, p.outputs),
        ));
    }
    for (name, q) in [("in_quant", p.in_quant), ("out_quant", p.out_quant)] {
        if !(q.scale.is_finite() && q.scale > 0.0) {
            out.push(Violation::at(idx, format!("{name} scale must be positive")));
        }
        if !(-128..=127).contains(&q.zero_point) {
            out.push(Violation::at(idx, format!("{name} zero_point outside int8 range")));
        }
    }
    if !(p.weight_scale.is_finite() && p.weight_scale > 0.0) {
        out.push(Violation::at(idx, "weight_scale must be positive"));
    }
    if p.requant.multiplier < (1 << 30) {
        out.push(Violation::at(idx, "requant multiplier below 2^30"));
    }
    if p.requant.shift > 31 {
        out.push(Violation::at(idx, "requant shift above 31"));
    }
    if p.act.0 > p.act.1 {
        out.push(Violation::at(idx, "act_min exceeds act_max"));
    }
}

