//! Threshold configurations, skip plans and approximate inference.
//!
//! Product `i` of channel `c` is omitted when its layer is enabled and
//! `S_i <= tau`; [`RETAIN`](crate::significance::RETAIN) scores are never
//! omitted. The approximate accumulator is the exact one minus the omitted
//! products, bias untouched.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::binio::{read_file, write_file, Reader, Writer};
use crate::error::{Error, Result};
use crate::model::{ConvLayerSpec, Dataset, Model, QuantizedTensor};
use crate::qinfer::{conv2d_with, ConvProgram, LayerCounters, Network};
use crate::significance::SignificanceMap;

pub const SKIP_PLAN_MAGIC: [u8; 4] = *b"AXSP";
const VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerApprox {
    pub enabled: bool,
    pub tau: f64,
}

impl LayerApprox {
    pub const EXACT: LayerApprox = LayerApprox {
        enabled: false,
        tau: 0.0,
    };
}

/// Per-conv-layer thresholds, indexed by conv ordinal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApproxConfig {
    pub layers: Vec<LayerApprox>,
}

impl ApproxConfig {
    pub fn exact(conv_layers: usize) -> Self {
        Self {
            layers: vec![LayerApprox::EXACT; conv_layers],
        }
    }

    /// Layers whose bit is set in `mask` share `tau`.
    pub fn uniform(conv_layers: usize, mask: u64, tau: f64) -> Self {
        Self {
            layers: (0..conv_layers)
                .map(|i| {
                    if mask >> i & 1 == 1 {
                        LayerApprox { enabled: true, tau }
                    } else {
                        LayerApprox::EXACT
                    }
                })
                .collect(),
        }
    }

    /// `None` leaves a layer exact.
    pub fn per_layer(taus: &[Option<f64>]) -> Self {
        Self {
            layers: taus
                .iter()
                .map(|t| match t {
                    Some(tau) => LayerApprox { enabled: true, tau: *tau },
                    None => LayerApprox::EXACT,
                })
                .collect(),
        }
    }

    /// Bit `i` set when conv layer `i` is enabled.
    pub fn layer_mask(&self) -> u64 {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.enabled)
            .fold(0, |m, (i, _)| m | 1 << i)
    }

    pub fn is_exact(&self) -> bool {
        self.layers.iter().all(|l| !l.enabled)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, l) in self.layers.iter().enumerate() {
            if !(l.tau.is_finite() && l.tau >= 0.0) {
                return Err(Error::Config(format!("layer {i}: tau {} must be finite and >= 0", l.tau)));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        write_file(path.as_ref(), text.as_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = read_file(path.as_ref())?;
        let cfg: ApproxConfig = serde_json::from_slice(&bytes)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Omitted weight indices of one conv layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSkip {
    /// Sorted omitted indices per output channel. An empty list of channels
    /// means the layer runs exact.
    pub channels: Vec<Vec<u32>>,
    pub out_positions: u64,
}

impl LayerSkip {
    pub fn skipped_per_position(&self) -> u64 {
        self.channels.iter().map(|c| c.len() as u64).sum()
    }

    /// Omitted MACs per inference, `out_positions * sum_c |skip_c|`.
    pub fn skipped_macs(&self) -> u64 {
        self.out_positions * self.skipped_per_position()
    }

    fn program(&self, layer: &ConvLayerSpec) -> Result<ConvProgram> {
        if self.channels.is_empty() {
            return Ok(ConvProgram::exact(layer));
        }
        ConvProgram::with_skips(layer, &self.channels)
    }
}

/// Skip sets for every conv layer, indexed by conv ordinal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkipPlan {
    pub layers: Vec<LayerSkip>,
}

impl SkipPlan {
    /// Plan that omits nothing.
    pub fn exact(m: &Model) -> Self {
        Self {
            layers: m
                .conv_layers()
                .map(|(_, c)| LayerSkip {
                    channels: vec![Vec::new(); c.out_channels],
                    out_positions: c.out_positions() as u64,
                })
                .collect(),
        }
    }

    pub fn skipped_macs(&self) -> u64 {
        self.layers.iter().map(LayerSkip::skipped_macs).sum()
    }

    /// One executable program per conv layer; fails if the plan does not fit `m`.
    pub fn programs(&self, m: &Model) -> Result<Vec<ConvProgram>> {
        if self.layers.len() != m.conv_count() {
            return Err(Error::Config(format!(
                "skip plan covers {} conv layers, model has {}",
                self.layers.len(),
                m.conv_count()
            )));
        }
        m.conv_layers()
            .zip(&self.layers)
            .map(|((idx, c), s)| {
                if !s.channels.is_empty() && s.out_positions != c.out_positions() as u64 {
                    return Err(Error::Config(format!(
                        "layer {idx}: plan assumes {} output positions, layer has {}",
                        s.out_positions,
                        c.out_positions()
                    )));
                }
                s.program(c)
            })
            .collect()
    }

    pub fn network<'m>(&self, m: &'m Model) -> Result<Network<'m>> {
        Network::with_programs(m, self.programs(m)?)
    }

    /// Audit listing, one `layer/channel: idx,idx,...` line per channel with omissions.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (l, layer) in self.layers.iter().enumerate() {
            for (c, skip) in layer.channels.iter().enumerate() {
                if skip.is_empty() {
                    continue;
                }
                let idx: Vec<String> = skip.iter().map(u32::to_string).collect();
                let _ = writeln!(s, "{l}/{c}: {}", idx.join(","));
            }
        }
        s
    }

    /// `"AXSP" | version u16 | layers u32 | per layer: channels u32, out_positions u64,
    /// per channel: count u32, count x u32 indices` (little-endian).
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.bytes(&SKIP_PLAN_MAGIC).u16(VERSION).u32(self.layers.len() as u32);
        for l in &self.layers {
            w.u32(l.channels.len() as u32).u64(l.out_positions);
            for c in &l.channels {
                w.u32(c.len() as u32);
                for &i in c {
                    w.u32(i);
                }
            }
        }
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, "skip plan");
        r.magic(SKIP_PLAN_MAGIC)?;
        r.version(VERSION)?;
        let n = r.u32()?;
        let mut layers = Vec::new();
        for _ in 0..n {
            let cout = r.u32()?;
            let out_positions = r.u64()?;
            let mut channels = Vec::new();
            for _ in 0..cout {
                let k = r.u32()?;
                let idx = (0..k).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
                if idx.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(Error::Format {
                        what: "skip plan",
                        detail: "indices must be strictly ascending".into(),
                    });
                }
                channels.push(idx);
            }
            layers.push(LayerSkip { channels, out_positions });
        }
        r.finish()?;
        Ok(Self { layers })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path.as_ref(), &self.to_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&read_file(path.as_ref())?)
    }
}

/// Omits index `i` of channel `c` iff the layer is enabled, `S_i <= tau`
/// and `S_i` is not RETAIN.
pub fn build_skip_plan(sig: &SignificanceMap, cfg: &ApproxConfig) -> Result<SkipPlan> {
    cfg.validate()?;
    let mut layers = Vec::with_capacity(cfg.layers.len());
    for (i, la) in cfg.layers.iter().enumerate() {
        let layer = match (sig.layers.get(i), la.enabled) {
            (None, true) => return Err(Error::MissingSignificance(i)),
            (None, false) => LayerSkip {
                channels: Vec::new(),
                out_positions: 0,
            },
            (Some(ls), enabled) => LayerSkip {
                channels: ls
                    .channels
                    .iter()
                    .map(|ch| {
                        if !enabled {
                            return Vec::new();
                        }
                        ch.iter()
                            .enumerate()
                            .filter(|(_, &s)| s.is_finite() && s <= la.tau)
                            .map(|(j, _)| j as u32)
                            .collect()
                    })
                    .collect(),
                out_positions: ls.out_positions,
            },
        };
        layers.push(layer);
    }
    Ok(SkipPlan { layers })
}

/// Convolution with the indices in `skip[c]` omitted from channel `c`.
pub fn conv2d_skipped(
    layer: &ConvLayerSpec,
    input: &QuantizedTensor,
    skip: &[Vec<u32>],
    counters: &mut LayerCounters,
) -> Result<QuantizedTensor> {
    let program = ConvProgram::with_skips(layer, skip)?;
    crate::qinfer::conv2d_exact_bound_check(layer)?;
    conv2d_with(layer, &program, input, counters)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigEval {
    pub accuracy: f64,
    pub correct: usize,
    /// Retained conv MACs per inference.
    pub conv_macs: u64,
    /// Retained MACs of all layers per inference.
    pub total_macs: u64,
    /// `1 - conv_macs / exact conv MACs`.
    pub mac_reduction: f64,
    /// Dual-MAC statements in unpacked conv code (per channel, not per position).
    pub retained_pairs: u64,
    /// Trailing single MACs in unpacked conv code.
    pub retained_singles: u64,
}

/// Runs the approximate network over `d`.
pub fn evaluate_config(m: &Model, plan: &SkipPlan, d: &Dataset) -> Result<ConfigEval> {
    let net = plan.network(m)?;
    let ev = net.evaluate(d)?;
    let conv_macs: u64 = m
        .conv_layers()
        .map(|(idx, _)| ev.counters.layers[idx].mac_count)
        .sum();
    let exact = m.exact_conv_macs();
    let mac_reduction = if exact == 0 {
        0.0
    } else {
        1.0 - conv_macs as f64 / exact as f64
    };
    Ok(ConfigEval {
        accuracy: ev.accuracy,
        correct: ev.correct,
        conv_macs,
        total_macs: ev.counters.total_macs(),
        mac_reduction,
        retained_pairs: net.programs().iter().map(ConvProgram::pairs).sum(),
        retained_singles: net.programs().iter().map(ConvProgram::singles).sum(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::significance::{LayerSignificance, RETAIN};

    fn sig_of(channels: Vec<Vec<f64>>) -> SignificanceMap {
        SignificanceMap {
            layers: vec![LayerSignificance {
                kernel_len: channels[0].len(),
                out_positions: 4,
                channels,
            }],
        }
    }

    fn skips(sig: &SignificanceMap, tau: f64) -> Vec<Vec<u32>> {
        build_skip_plan(sig, &ApproxConfig::uniform(1, 1, tau)).unwrap().layers[0]
            .channels
            .clone()
    }

    #[test]
    fn threshold_rule() {
        let a = sig_of(vec![vec![1.0, 0.5, 0.5]]);
        assert_eq!(skips(&a, 0.0), vec![Vec::<u32>::new()]);
        assert_eq!(skips(&a, 0.5), vec![vec![1, 2]]);
        let b = sig_of(vec![vec![0.0, 0.4, 0.6]]);
        assert_eq!(skips(&b, 0.0), vec![vec![0]]);
    }

    #[test]
    fn retain_is_never_skipped() {
        let a = sig_of(vec![vec![RETAIN, RETAIN], vec![0.1, 0.9]]);
        assert_eq!(skips(&a, 1e300), vec![vec![], vec![0, 1]]);
    }

    #[test]
    fn disabled_layer_is_untouched() {
        let a = sig_of(vec![vec![0.0, 0.0]]);
        let plan = build_skip_plan(&a, &ApproxConfig::uniform(1, 0, 0.5)).unwrap();
        assert_eq!(plan.skipped_macs(), 0);
    }

    #[test]
    fn missing_significance_for_enabled_layer() {
        let a = sig_of(vec![vec![0.5, 0.5]]);
        let err = build_skip_plan(&a, &ApproxConfig::uniform(2, 0b10, 0.1)).unwrap_err();
        assert!(matches!(err, Error::MissingSignificance(1)));
        // disabled layer without significance is fine
        assert!(build_skip_plan(&a, &ApproxConfig::uniform(2, 0b01, 0.1)).is_ok());
    }

    #[test]
    fn derived_totals() {
        let a = sig_of(vec![vec![0.0, 0.2, 0.8], vec![0.1, 0.1, 0.8]]);
        let plan = build_skip_plan(&a, &ApproxConfig::uniform(1, 1, 0.15)).unwrap();
        assert_eq!(plan.layers[0].skipped_per_position(), 3);
        assert_eq!(plan.skipped_macs(), 12);
        assert_eq!(plan.to_text(), "0/0: 0\n0/1: 0,1\n");
    }

    #[test]
    fn binary_round_trip() {
        let a = sig_of(vec![vec![0.0, 0.2, 0.8], vec![0.1, 0.1, 0.8]]);
        let plan = build_skip_plan(&a, &ApproxConfig::uniform(1, 1, 0.15)).unwrap();
        assert_eq!(SkipPlan::from_bytes(&plan.to_bytes()).unwrap(), plan);
        let mut b = plan.to_bytes();
        b[1] = 0;
        assert!(SkipPlan::from_bytes(&b).is_err());
    }

    #[test]
    fn negative_tau_rejected() {
        let a = sig_of(vec![vec![0.5, 0.5]]);
        assert!(build_skip_plan(&a, &ApproxConfig::uniform(1, 1, -0.1)).is_err());
        assert!(build_skip_plan(&a, &ApproxConfig::uniform(1, 1, f64::NAN)).is_err());
    }

    #[test]
    fn layer_mask_bits() {
        let c = ApproxConfig::per_layer(&[Some(0.1), None, Some(0.0)]);
        assert_eq!(c.layer_mask(), 0b101);
        assert!(!c.is_exact());
        assert!(ApproxConfig::exact(3).is_exact());
    }
}
