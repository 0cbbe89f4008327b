//! Emits the unpacked C bundle for an approximate plan.
//!
//! ```text
//! cargo run --example codegen_bundle -- out_dir
//! ```

use axkern::approx::{build_skip_plan, ApproxConfig};
use axkern::codegen::{emit_network, estimate_footprint, CodegenOptions};
use axkern::model::{generate_fixture, FixtureParams};
use axkern::significance::{capture_activation_stats, significance_map};

fn main() -> axkern::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(Into::into)
        .unwrap_or_else(|| std::env::temp_dir().join("axkern_bundle"));
    let (model, data) = generate_fixture(&FixtureParams {
        zero_weight_fraction: 0.3,
        ..FixtureParams::default()
    });
    let sig = significance_map(&model, &capture_activation_stats(&model, &data, 128)?)?;
    let plan = build_skip_plan(&sig, &ApproxConfig::uniform(model.conv_count(), 0b111, 0.03))?;

    let opts = CodegenOptions::default();
    let bundle = emit_network(&model, &plan, &opts)?;
    for k in &bundle.kernels {
        println!(
            "{:<12} {:>4} dual-MAC + {} single per position, ~{} bytes",
            k.symbol, k.retained_pairs, k.retained_single_macs, k.estimated_flash_bytes
        );
    }
    let fp = estimate_footprint(&bundle, &opts.cost, 256 * 1024)?;
    println!("flash estimate {} bytes ({:.2}% of 256 KiB)", fp.flash_bytes, 100.0 * fp.utilization);

    bundle.write_to(&out)?;
    println!("wrote {:?} to {}", bundle.files().iter().map(|(n, _)| n.as_str()).collect::<Vec<_>>(), out.display());
    let first = &bundle.kernels[0].source_text;
    println!("\n{}", first.lines().take(40).collect::<Vec<_>>().join("\n"));
    Ok(())
}
