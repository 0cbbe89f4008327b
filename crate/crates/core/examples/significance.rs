//! Mean-input significance of every conv product and the skip plans it yields.

use axkern::approx::{build_skip_plan, ApproxConfig};
use axkern::model::{generate_fixture, FixtureParams};
use axkern::significance::{capture_activation_stats, significance_map};

fn main() -> axkern::Result<()> {
    let (model, data) = generate_fixture(&FixtureParams {
        zero_weight_fraction: 0.3,
        ..FixtureParams::default()
    });
    let expected = capture_activation_stats(&model, &data, 128)?;
    let sig = significance_map(&model, &expected)?;

    for (ord, layer) in sig.layers.iter().enumerate() {
        let s = layer.summary();
        println!(
            "conv {ord}: {} channels x {} products, S min {:.4} median {:.4} max {:.4}, {} retained channels",
            layer.channels.len(),
            layer.kernel_len,
            s.min,
            s.median,
            s.max,
            s.retained_channels
        );
    }

    let n = model.conv_count();
    for tau in [0.0, 0.02, 0.05, 0.1] {
        let plan = build_skip_plan(&sig, &ApproxConfig::uniform(n, (1 << n) - 1, tau))?;
        println!(
            "tau {tau:<4}: skips {:>5} of {} conv MACs",
            plan.skipped_macs(),
            model.exact_conv_macs()
        );
    }
    let plan = build_skip_plan(&sig, &ApproxConfig::uniform(n, 1, 0.05))?;
    println!("\nskip lists for conv 0 at tau 0.05 (layer/channel: indices):\n{}", plan.to_text());
    Ok(())
}
