//! The whole flow in process: fixture, significance, exploration, selection, emission.

use axkern::approx::{build_skip_plan, evaluate_config};
use axkern::codegen::{emit_network, CodegenOptions};
use axkern::dse::{baseline_accuracy, run_dse, select_config, DsePlanSpec};
use axkern::model::{generate_fixture, save_dataset, save_model, FixtureParams};
use axkern::significance::{capture_activation_stats, significance_map};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("axkern_pipeline");
    let (model, data) = generate_fixture(&FixtureParams {
        zero_weight_fraction: 0.3,
        ..FixtureParams::default()
    });
    let (calib, eval) = data.split_at(128)?;
    std::fs::create_dir_all(&dir)?;
    save_model(&model, dir.join("model.json"))?;
    save_dataset(&calib, dir.join("calib.axds"))?;
    save_dataset(&eval, dir.join("eval.axds"))?;

    let sig = significance_map(&model, &capture_activation_stats(&model, &calib, usize::MAX)?)?;
    let spec = DsePlanSpec::default();
    let points = run_dse(&model, &sig, &spec, &eval)?;
    let baseline = baseline_accuracy(&points).unwrap_or(0.0);
    let front = points.iter().filter(|p| p.on_front).count();
    println!("{} configs explored, {front} on the front, baseline {baseline}", points.len());

    let config = select_config(&points, baseline, 0.01, &spec.cost);
    let plan = build_skip_plan(&sig, &config)?;
    let ev = evaluate_config(&model, &plan, &eval)?;
    println!(
        "selected {:?}: accuracy {} with {:.1}% fewer conv MACs",
        config.layers.iter().map(|l| l.tau).collect::<Vec<_>>(),
        ev.accuracy,
        100.0 * ev.mac_reduction
    );

    let bundle = emit_network(&model, &plan, &CodegenOptions::default())?;
    bundle.write_to(dir.join("c"))?;
    println!("artifacts in {}", dir.display());
    Ok(())
}
