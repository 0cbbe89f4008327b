//! Loads a model manifest (or generates the default fixture) and prints per-layer counts.
//!
//! ```text
//! cargo run --example inspect_model -- path/to/model.json
//! ```

use axkern::model::{generate_fixture, load_model, FixtureParams};

fn main() -> axkern::Result<()> {
    let model = match std::env::args().nth(1) {
        Some(path) => load_model(path)?,
        None => generate_fixture(&FixtureParams::default()).0,
    };
    let (c, p, d) = model.topology();
    println!("{}: topology {c}-{p}-{d}, {} classes", model.name, model.num_classes);
    for (i, layer) in model.layers.iter().enumerate() {
        println!(
            "  {i}: {:<8} {:>10} -> {:<10} params {:>6}  MACs {:>8}",
            layer.kind(),
            layer.in_shape().to_string(),
            layer.out_shape().to_string(),
            layer.param_count(),
            layer.mac_count()
        );
    }
    println!("conv MACs {}, total MACs {}", model.exact_conv_macs(), model.exact_total_macs());
    Ok(())
}
