mod common;

use axkern::approx::conv2d_skipped;
use axkern::model::{
    generate_fixture, ConvLayerSpec, Dataset, FixtureParams, Layer, Model, PoolLayerSpec, QuantizedTensor, TensorShape,
};
use axkern::qinfer::{
    conv2d_accumulators, conv2d_exact, dense, maxpool, ConvProgram, LayerCounters, Network,
};
use axkern::significance::{capture_activation_stats, compute_significance, significance_map, RETAIN};
use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[test]
fn conv_matches_nested_loops() {
    let mut r = rng(1);
    for _ in 0..150 {
        let layer = random_conv(&mut r);
        let x = random_input(&mut r, &layer.in_shape, layer.in_quant);
        let mut counters = LayerCounters::default();
        let y = conv2d_exact(&layer, &x, &mut counters).unwrap();
        assert_eq!(y.data, naive_conv(&layer, &x), "{layer:?}");
        assert_eq!(y.shape, layer.out_shape());
        assert_eq!(counters.mac_count, layer.mac_count());
    }
}

#[test]
fn dense_matches_nested_loops() {
    let mut r = rng(2);
    for _ in 0..150 {
        let layer = random_dense(&mut r);
        let x = random_input(&mut r, &layer.in_shape, layer.in_quant);
        let mut counters = LayerCounters::default();
        let y = dense(&layer, &x, &mut counters).unwrap();
        assert_eq!(y.data, naive_dense(&layer, &x));
        assert_eq!(counters.mac_count, (layer.in_shape.len() * layer.out_features) as u64);
    }
}

#[test]
fn maxpool_matches_window_max() {
    let mut r = rng(3);
    for _ in 0..100 {
        let (h, w, c) = (r.random_range(1..=9), r.random_range(1..=9), r.random_range(1..=3));
        let spec = PoolLayerSpec {
            in_shape: TensorShape::hwc(h, w, c),
            pool_h: r.random_range(1..=h.min(3)),
            pool_w: r.random_range(1..=w.min(3)),
            stride_h: r.random_range(1..=3),
            stride_w: r.random_range(1..=3),
        };
        let q = random_quant(&mut r);
        let x = random_input(&mut r, &spec.in_shape, q);
        let y = maxpool(&spec, &x).unwrap();
        let (oh, ow, _) = y.shape.as_hwc().unwrap();
        assert_eq!(oh, (h - spec.pool_h) / spec.stride_h + 1);
        assert_eq!(ow, (w - spec.pool_w) / spec.stride_w + 1);
        for oy in 0..oh {
            for ox in 0..ow {
                for ch in 0..c {
                    let mut m = i8::MIN;
                    for py in 0..spec.pool_h {
                        for px in 0..spec.pool_w {
                            let (iy, ix) = (oy * spec.stride_h + py, ox * spec.stride_w + px);
                            m = m.max(x.data[(iy * w + ix) * c + ch]);
                        }
                    }
                    assert_eq!(y.data[(oy * ow + ox) * c + ch], m);
                }
            }
        }
        assert_eq!(y.quant, x.quant);
    }
}

#[test]
fn skipped_conv_matches_oracle_with_skips() {
    let mut r = rng(4);
    for _ in 0..150 {
        let layer = random_conv(&mut r);
        let p = r.random_range(0.0..1.0);
        let skips = random_skips(&mut r, &layer, p);
        let x = random_input(&mut r, &layer.in_shape, layer.in_quant);
        let mut counters = LayerCounters::default();
        let y = conv2d_skipped(&layer, &x, &skips, &mut counters).unwrap();
        let expected: Vec<i8> = naive_conv_acc(&layer, &x, |c, i| skips[c].contains(&(i as u32)))
            .into_iter()
            .map(|a| naive_requant(a as i32, layer.requant, layer.out_quant.zero_point, layer.act_min, layer.act_max))
            .collect();
        assert_eq!(y.data, expected);
        let skipped: usize = skips.iter().map(Vec::len).sum();
        let per_pos = (layer.out_channels * layer.kernel_len() - skipped) as u64;
        assert_eq!(counters.mac_count, per_pos * layer.out_positions() as u64);
    }
}

#[test]
fn program_pairs_retained_indices_in_order() {
    let mut r = rng(5);
    for _ in 0..100 {
        let layer = random_conv(&mut r);
        let skips = random_skips(&mut r, &layer, 0.4);
        let prog = ConvProgram::with_skips(&layer, &skips).unwrap();
        for (c, ch) in prog.channels.iter().enumerate() {
            let expected: Vec<u32> = (0..layer.kernel_len() as u32).filter(|i| !skips[c].contains(i)).collect();
            let got: Vec<u32> = ch.retained_indices().collect();
            assert_eq!(got, expected);
            assert_eq!(ch.pairs.len(), expected.len() / 2);
            assert_eq!(ch.single.is_some(), expected.len() % 2 == 1);
        }
        let acc = conv2d_accumulators(&layer, &prog, &random_input(&mut r, &layer.in_shape, layer.in_quant));
        assert!(acc.is_ok());
    }
}

fn single_conv_model(layer: &ConvLayerSpec) -> Model {
    Model {
        name: "single".into(),
        num_classes: layer.out_shape().len(),
        layers: vec![Layer::Conv2d(layer.clone())],
    }
}

#[test]
fn significance_matches_im2col_means() {
    let mut r = rng(6);
    for _ in 0..60 {
        let layer = random_conv(&mut r);
        let n = r.random_range(1..=5);
        let inputs: Vec<QuantizedTensor> =
            (0..n).map(|_| random_input(&mut r, &layer.in_shape, layer.in_quant)).collect();
        let data: Vec<i8> = inputs.iter().flat_map(|x| x.data.clone()).collect();
        let d = Dataset::new(layer.in_shape.clone(), data, vec![0; n]).unwrap();
        let m = single_conv_model(&layer);
        let e = capture_activation_stats(&m, &d, usize::MAX).unwrap();
        let means = naive_means(&layer, &inputs);
        for (i, &mu) in means.iter().enumerate() {
            assert!((e.layers[0].mean(i) - mu).abs() <= 1e-9 * (1.0 + mu.abs()));
        }
        let sig = compute_significance(&layer, &e.layers[0]).unwrap();
        for c in 0..layer.out_channels {
            let w = layer.channel_weights(c);
            let denom: f64 = w.iter().zip(&means).map(|(&w, &m)| w as f64 * m).sum();
            let exact_zero = w
                .iter()
                .zip(&e.layers[0].sums)
                .map(|(&w, &s)| w as i128 * s as i128)
                .sum::<i128>()
                == 0;
            for i in 0..layer.kernel_len() {
                let s = sig.channels[c][i];
                if exact_zero {
                    assert_eq!(s, RETAIN);
                } else {
                    let oracle = (means[i] * w[i] as f64 / denom).abs();
                    assert!((s - oracle).abs() <= 1e-9 * (1.0 + oracle), "{s} vs {oracle}");
                }
            }
        }
    }
}

#[test]
fn max_samples_limits_calibration() {
    let (m, d) = generate_fixture(&FixtureParams {
        samples_per_class: 4,
        ..FixtureParams::default()
    });
    let one = capture_activation_stats(&m, &d, 1).unwrap();
    let all = capture_activation_stats(&m, &d, usize::MAX).unwrap();
    assert_eq!(one.sample_count, 1);
    assert_eq!(all.sample_count, d.len());
    assert!(significance_map(&m, &one).is_ok());
    assert!(capture_activation_stats(&m, &d, 0).is_err());
}

#[test]
fn fixture_network_matches_layerwise_oracle() {
    let (m, d) = generate_fixture(&FixtureParams {
        zero_weight_fraction: 0.3,
        samples_per_class: 3,
        ..FixtureParams::default()
    });
    let net = Network::exact(&m).unwrap();
    for k in 0..d.len() {
        let mut x = d.tensor(k, m.input_quant());
        for layer in &m.layers {
            x = match layer {
                Layer::Conv2d(c) => {
                    let data = naive_conv(c, &x);
                    QuantizedTensor::new(c.out_shape(), data, c.out_quant)
                }
                Layer::MaxPool(p) => maxpool(p, &x).unwrap(),
                Layer::Dense(dl) => {
                    let data = naive_dense(dl, &x);
                    QuantizedTensor::new(dl.out_shape(), data, dl.out_quant)
                }
            };
        }
        let inf = net.infer(&d.tensor(k, m.input_quant())).unwrap();
        assert_eq!(inf.logits, x.data);
        let best = x.data.iter().enumerate().fold(0, |b, (i, &v)| if v > x.data[b] { i } else { b });
        assert_eq!(inf.class, best);
        assert_eq!(inf.counters.total_macs(), m.exact_total_macs());
    }
}
