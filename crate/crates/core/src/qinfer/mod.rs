//! Bit-exact int8 inference engine with per-layer operation counters.
//!
//! Accumulation follows `acc = bias + sum_i (a_i + input_offset) * w_i` with
//! padded positions contributing an offset-adjusted zero. The accumulator is
//! mapped back to int8 by [`requantize`]. Emitted C kernels reproduce this
//! arithmetic exactly.

mod conv;
mod network;

pub(crate) use conv::conv2d_exact_bound_check;
pub use conv::{
    conv2d_accumulators, conv2d_exact, conv2d_with, dense, dense_accumulators, maxpool,
    ChannelProgram, ConvProgram, PairOp, SingleOp,
};
pub(crate) use network::check_dataset;
pub use network::{evaluate, infer, Evaluation, Inference, Network};

use crate::error::{Error, Result};
use crate::model::Requant;

/// Counters for one layer of one inference.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LayerCounters {
    /// One MAC is one `a_i * w_i` product accumulated; a dual-MAC counts as two.
    pub mac_count: u64,
    pub dual_mac_pairs: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct OpCounters {
    /// Indexed by model layer.
    pub layers: Vec<LayerCounters>,
}

impl OpCounters {
    pub fn with_layers(n: usize) -> Self {
        Self {
            layers: vec![LayerCounters::default(); n],
        }
    }

    pub fn total_macs(&self) -> u64 {
        self.layers.iter().map(|l| l.mac_count).sum()
    }

    pub fn total_dual_mac_pairs(&self) -> u64 {
        self.layers.iter().map(|l| l.dual_mac_pairs).sum()
    }
}

/// Maps an int32 accumulator to int8:
/// `clamp(out_zp + round(acc * M / 2^(31 + shift)), act_min, act_max)`,
/// rounding half away from zero, product in 64 bits.
pub fn requantize(acc: i32, multiplier: i32, shift: u32, out_zp: i32, act_min: i8, act_max: i8) -> i8 {
    let total_shift = 31 + shift;
    let prod = acc as i64 * multiplier as i64;
    let half = 1i64 << (total_shift - 1);
    let mag = (prod.unsigned_abs() + half as u64) >> total_shift;
    let scaled = if prod < 0 { -(mag as i64) } else { mag as i64 };
    (out_zp as i64 + scaled).clamp(act_min as i64, act_max as i64) as i8
}

pub(crate) fn requantize_with(acc: i32, rq: Requant, out_zp: i32, act_min: i8, act_max: i8) -> i8 {
    requantize(acc, rq.multiplier, rq.shift, out_zp, act_min, act_max)
}

/// Fixed-point form of a real ratio in `(0, 1)`: `M` in `[2^30, 2^31)` with
/// `ratio ~= M * 2^-(31 + shift)`.
pub fn quantize_multiplier(ratio: f64) -> Result<Requant> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::RatioOutOfRange(ratio));
    }
    // ratio = q * 2^-shift with q in [0.5, 1)
    let mut shift = (-ratio.log2()).floor() as i32;
    let mut q = ratio * 2f64.powi(shift);
    while q < 0.5 {
        q *= 2.0;
        shift += 1;
    }
    while q >= 1.0 {
        q /= 2.0;
        shift -= 1;
    }
    let mut m = (q * (1u64 << 31) as f64).round() as i64;
    if m == 1i64 << 31 {
        m /= 2;
        shift -= 1;
    }
    if !(0..=31).contains(&shift) {
        return Err(Error::RatioOutOfRange(ratio));
    }
    Ok(Requant {
        multiplier: m as i32,
        shift: shift as u32,
    })
}

/// Packs two int8 weights into one 32-bit dual-MAC operand: `w1` sign-extended
/// in the high halfword, `w2` sign-extended in the low halfword.
pub fn pack_weight_pair(w1: i8, w2: i8) -> i32 {
    ((w1 as i32) << 16) | (w2 as i16 as u16 as i32)
}

/// Two signed 16x16 multiplies accumulated into `acc` (SMLAD semantics):
/// `acc + hi(packed) * a1 + lo(packed) * a2`, wrapping.
pub fn dual_mac(acc: i32, packed: i32, a1: i16, a2: i16) -> i32 {
    let hi = (packed >> 16) as i16 as i32;
    let lo = packed as i16 as i32;
    acc.wrapping_add(hi * a1 as i32)
        .wrapping_add(lo * a2 as i32)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn packs_the_hardwired_pair() {
        assert_eq!(pack_weight_pair(64, 20), 4194324);
        assert_eq!(pack_weight_pair(0, 0), 0);
        assert_eq!(pack_weight_pair(-1, 0), -65536);
        assert_eq!(pack_weight_pair(0, -1), 0xFFFF);
        assert_eq!(pack_weight_pair(-128, -128), ((-128i32) << 16) | 0xFF80);
    }

    #[test]
    fn dual_mac_hardwired_pair() {
        assert_eq!(dual_mac(0, 4194324, 1, 1), 84);
        assert_eq!(dual_mac(100, 4194324, 1, 1), 184);
        assert_eq!(dual_mac(-7, 123456789, 0, 0), -7);
    }

    #[test]
    fn requantize_zero_and_clamp() {
        assert_eq!(requantize(0, 1 << 30, 0, 3, -128, 127), 3);
        assert_eq!(requantize(0, 1_500_000_000, 7, -5, -128, 127), -5);
        // ratio ~ 1: M = 2^31 - 1, shift 0
        assert_eq!(requantize(i32::MAX - 3, i32::MAX, 0, 0, -128, 127), 127);
        assert_eq!(requantize(i32::MIN, i32::MAX, 0, 0, -128, 127), -128);
        assert_eq!(requantize(10, 1 << 30, 0, 0, 0, 3), 3);
    }

    #[test]
    fn requantize_rounds_half_away_from_zero() {
        // ratio 0.5
        assert_eq!(requantize(3, 1 << 30, 0, 0, -128, 127), 2);
        assert_eq!(requantize(-3, 1 << 30, 0, 0, -128, 127), -2);
        assert_eq!(requantize(5, 1 << 30, 0, 0, -128, 127), 3);
        assert_eq!(requantize(-5, 1 << 30, 0, 0, -128, 127), -3);
        assert_eq!(requantize(4, 1 << 30, 0, 0, -128, 127), 2);
    }

    #[test]
    fn quantize_multiplier_powers_of_two() {
        assert_eq!(
            quantize_multiplier(0.5).unwrap(),
            Requant { multiplier: 1 << 30, shift: 0 }
        );
        assert_eq!(
            quantize_multiplier(0.25).unwrap(),
            Requant { multiplier: 1 << 30, shift: 1 }
        );
    }

    #[test]
    fn quantize_multiplier_point_three() {
        let rq = quantize_multiplier(0.3).unwrap();
        assert!((1 << 30..=i32::MAX).contains(&rq.multiplier));
        let back = rq.multiplier as f64 * 2f64.powi(-(31 + rq.shift as i32));
        assert!(((back - 0.3) / 0.3).abs() < 2f64.powi(-30));
        // 0.3 = 0.6 * 2^-1 -> M = round(0.6 * 2^31)
        assert_eq!(rq.shift, 1);
        assert_eq!(rq.multiplier, (0.6f64 * 2f64.powi(31)).round() as i32);
    }

    #[test]
    fn quantize_multiplier_rejects_out_of_range() {
        for r in [0.0, -0.1, 1.0, 1.5, f64::NAN, 1e-12] {
            assert!(quantize_multiplier(r).is_err(), "{r}");
        }
    }
}
