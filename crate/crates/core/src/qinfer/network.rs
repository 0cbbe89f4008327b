use super::conv::{check_conv_bound, check_dense_bound, conv2d_with, dense, maxpool, ConvProgram};
use super::OpCounters;
use crate::error::{Error, Result};
use crate::model::{Dataset, Layer, Model, QuantizedTensor};

/// Result of one forward pass.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Inference {
    pub class: usize,
    pub logits: Vec<i8>,
    pub counters: OpCounters,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
    /// Counters of a single inference; they do not depend on the input.
    pub counters: OpCounters,
}

/// A model with one prepared program per conv layer.
#[derive(Debug, Clone)]
pub struct Network<'m> {
    model: &'m Model,
    /// Indexed by conv ordinal.
    programs: Vec<ConvProgram>,
}

impl<'m> Network<'m> {
    pub fn exact(model: &'m Model) -> Result<Self> {
        let programs = model.conv_layers().map(|(_, c)| ConvProgram::exact(c)).collect();
        Self::with_programs(model, programs)
    }

    /// `programs` is indexed by conv ordinal.
    pub fn with_programs(model: &'m Model, programs: Vec<ConvProgram>) -> Result<Self> {
        if programs.len() != model.conv_count() {
            return Err(Error::Config(format!(
                "{} conv programs for {} conv layers",
                programs.len(),
                model.conv_count()
            )));
        }
        for (idx, layer) in model.layers.iter().enumerate() {
            match layer {
                Layer::Conv2d(c) => check_conv_bound(idx, c)?,
                Layer::Dense(d) => check_dense_bound(idx, d)?,
                Layer::MaxPool(_) => {}
            }
        }
        for ((_, c), p) in model.conv_layers().zip(&programs) {
            if p.channels.len() != c.out_channels {
                return Err(Error::Config("conv program does not match layer channel count".into()));
            }
        }
        Ok(Self { model, programs })
    }

    pub fn model(&self) -> &'m Model {
        self.model
    }

    pub fn programs(&self) -> &[ConvProgram] {
        &self.programs
    }

    /// Runs the network, calling `observe(layer_index, layer_input)` before each layer.
    pub fn forward_with(
        &self,
        x: &QuantizedTensor,
        mut observe: impl FnMut(usize, &QuantizedTensor),
    ) -> Result<(QuantizedTensor, OpCounters)> {
        let mut counters = OpCounters::with_layers(self.model.layers.len());
        let mut conv_ord = 0;
        let mut cur = std::borrow::Cow::Borrowed(x);
        for (idx, layer) in self.model.layers.iter().enumerate() {
            observe(idx, &cur);
            let next = match layer {
                Layer::Conv2d(c) => {
                    let p = &self.programs[conv_ord];
                    conv_ord += 1;
                    conv2d_with(c, p, &cur, &mut counters.layers[idx])
                }
                Layer::MaxPool(p) => {
                    if let Some(q) = expected_quant(self.model, idx) {
                        if cur.quant != q {
                            return Err(Error::QuantMismatch {
                                layer: idx,
                                expected: q,
                                actual: cur.quant,
                            });
                        }
                    }
                    maxpool(p, &cur)
                }
                Layer::Dense(d) => dense(d, &cur, &mut counters.layers[idx]),
            }
            .map_err(|e| e.at_layer(idx))?;
            cur = std::borrow::Cow::Owned(next);
        }
        Ok((cur.into_owned(), counters))
    }

    pub fn infer(&self, x: &QuantizedTensor) -> Result<Inference> {
        let (out, counters) = self.forward_with(x, |_, _| {})?;
        Ok(Inference {
            class: argmax(&out.data),
            logits: out.data,
            counters,
        })
    }

    pub fn evaluate(&self, d: &Dataset) -> Result<Evaluation> {
        check_dataset(self.model, d)?;
        let quant = self.model.input_quant();
        let mut correct = 0;
        let mut counters = None;
        for k in 0..d.len() {
            let r = self.infer(&d.tensor(k, quant))?;
            if r.class == d.label(k) as usize {
                correct += 1;
            }
            counters.get_or_insert(r.counters);
        }
        Ok(Evaluation {
            accuracy: correct as f64 / d.len() as f64,
            correct,
            total: d.len(),
            counters: counters.unwrap_or_default(),
        })
    }
}

/// Quantization a pool layer should see: the out_quant of the nearest
/// preceding quantized layer, or the model input quantization.
fn expected_quant(model: &Model, idx: usize) -> Option<crate::model::QuantParams> {
    model.layers[..idx]
        .iter()
        .rev()
        .find_map(Layer::out_quant)
        .or_else(|| Some(model.input_quant()))
}

pub(crate) fn check_dataset(model: &Model, d: &Dataset) -> Result<()> {
    if d.shape() != model.input_shape() {
        return Err(Error::ShapeMismatch {
            layer: 0,
            expected: model.input_shape().dims().to_vec(),
            actual: d.shape().dims().to_vec(),
        });
    }
    if let Some((index, &label)) = d
        .labels()
        .iter()
        .enumerate()
        .find(|(_, &l)| l as usize >= model.num_classes)
    {
        return Err(Error::LabelOutOfRange {
            index,
            label,
            num_classes: model.num_classes,
        });
    }
    Ok(())
}

/// Index of the largest logit, lowest index on ties.
pub(crate) fn argmax(v: &[i8]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Exact inference of one input.
pub fn infer(m: &Model, x: &QuantizedTensor) -> Result<Inference> {
    Network::exact(m)?.infer(x)
}

/// Exact top-1 accuracy over `d`.
pub fn evaluate(m: &Model, d: &Dataset) -> Result<Evaluation> {
    Network::exact(m)?.evaluate(d)
}

#[cfg(test)]
mod tests {
    use super::argmax;

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[5, 5, 5]), 0);
        assert_eq!(argmax(&[1, 7, 7, 2]), 1);
        assert_eq!(argmax(&[-128]), 0);
    }
}
