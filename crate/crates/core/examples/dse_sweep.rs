//! Design-space exploration in per-layer mode and selection under a loss budget.

use axkern::dse::{baseline_accuracy, run_dse, select_point, DseMode, DsePlanSpec};
use axkern::model::{generate_fixture, FixtureParams};
use axkern::significance::{capture_activation_stats, significance_map};

fn main() -> axkern::Result<()> {
    let (model, data) = generate_fixture(&FixtureParams {
        zero_weight_fraction: 0.3,
        seed: 3,
        ..FixtureParams::default()
    });
    let (calib, eval) = data.split_at(128)?;
    let sig = significance_map(&model, &capture_activation_stats(&model, &calib, usize::MAX)?)?;

    let spec = DsePlanSpec {
        mode: DseMode::PerLayer,
        tau_step: 0.02,
        ..DsePlanSpec::default()
    };
    let points = run_dse(&model, &sig, &spec, &eval)?;
    let baseline = baseline_accuracy(&points).unwrap_or(0.0);
    println!("{} configs, baseline accuracy {baseline}", points.len());

    let mut front: Vec<_> = points.iter().filter(|p| p.on_front).collect();
    front.sort_by_key(|p| std::cmp::Reverse(p.conv_mac_total));
    for p in &front {
        let taus: Vec<String> = p
            .config
            .layers
            .iter()
            .map(|l| if l.enabled { format!("{:.2}", l.tau) } else { "exact".into() })
            .collect();
        println!(
            "  #{:<4} [{}] accuracy {:.4} conv MACs {:>6} reduction {:.3}",
            p.config_id,
            taus.join(", "),
            p.accuracy,
            p.conv_mac_total,
            p.mac_reduction
        );
    }
    for loss in [0.0, 0.02, 0.1] {
        if let Some(p) = select_point(&points, baseline, loss, &spec.cost) {
            println!("max loss {loss}: config #{} ({:.3} fewer conv MACs)", p.config_id, p.mac_reduction);
        }
    }
    Ok(())
}
