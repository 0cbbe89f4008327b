//! Exhaustive design-space exploration over conv-layer subsets and
//! significance thresholds, with Pareto extraction over
//! (accuracy up, conv MACs down).

use std::io::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::approx::{build_skip_plan, evaluate_config, ApproxConfig, LayerApprox};
use crate::error::{Error, Result};
use crate::model::{Dataset, Model};
use crate::significance::SignificanceMap;

/// Slack when comparing an accuracy against `baseline - max_loss`.
pub const ACCURACY_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum DseMode {
    /// One shared threshold over every non-empty subset of conv layers.
    Uniform,
    /// Independent threshold (or exact) per conv layer, capped.
    PerLayer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DsePlanSpec {
    pub mode: DseMode,
    pub tau_min: f64,
    pub tau_max: f64,
    pub tau_step: f64,
    /// Layer bitmasks to enumerate in uniform mode; `None` means every non-empty subset.
    pub subsets: Option<Vec<u64>>,
    /// Maximum number of configs (including the exact one) in per-layer mode.
    pub cap: usize,
    /// Worker threads; 0 lets the pool decide.
    pub threads: usize,
    pub cost: CostModel,
}

impl Default for DsePlanSpec {
    fn default() -> Self {
        Self {
            mode: DseMode::Uniform,
            tau_min: 0.0,
            tau_max: 0.1,
            tau_step: 0.01,
            subsets: None,
            cap: 100_000,
            threads: 0,
            cost: CostModel::default(),
        }
    }
}

impl DsePlanSpec {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.tau_min, self.tau_max, self.tau_step].iter().all(|v| v.is_finite());
        if !finite || self.tau_min < 0.0 || self.tau_min > self.tau_max || self.tau_step <= 0.0 {
            return Err(Error::Config(format!(
                "need 0 <= tau_min <= tau_max and tau_step > 0 (got {}, {}, {})",
                self.tau_min, self.tau_max, self.tau_step
            )));
        }
        if self.cap == 0 {
            return Err(Error::Config("cap must be at least 1".into()));
        }
        self.cost.validate()
    }

    /// `tau_min + k * tau_step` for every `k` that stays within `tau_max`,
    /// each snapped to the nearest 12-decimal value.
    pub fn tau_grid(&self) -> Vec<f64> {
        let n = ((self.tau_max - self.tau_min) / self.tau_step + 1e-9).floor() as usize;
        (0..=n)
            .map(|k| {
                let v = self.tau_min + k as f64 * self.tau_step;
                format!("{v:.12}").parse().unwrap_or(v)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Enumeration {
    pub configs: Vec<ApproxConfig>,
    /// Per-layer mode hit the cap before covering the full cross product.
    pub truncated: bool,
}

/// Every config to evaluate, the exact one first.
///
/// Uniform mode orders by subset bitmask ascending, then tau ascending.
/// Per-layer mode counts through each layer's choices `[exact, grid...]`
/// with the last conv layer varying fastest.
pub fn enumerate_configs(m: &Model, spec: &DsePlanSpec) -> Result<Enumeration> {
    spec.validate()?;
    let n = m.conv_count();
    if n > 63 {
        return Err(Error::Config("more than 63 conv layers".into()));
    }
    let grid = spec.tau_grid();
    let mut configs = vec![ApproxConfig::exact(n)];
    let mut truncated = false;

    match spec.mode {
        DseMode::Uniform => {
            let subsets: Vec<u64> = match &spec.subsets {
                Some(s) => {
                    let mut s = s.clone();
                    s.sort_unstable();
                    s.dedup();
                    if let Some(bad) = s.iter().find(|&&b| b == 0 || b >> n != 0) {
                        return Err(Error::Config(format!("layer subset {bad:#b} is empty or out of range")));
                    }
                    s
                }
                None => (1..1u64 << n).collect(),
            };
            for mask in subsets {
                for &tau in &grid {
                    configs.push(ApproxConfig::uniform(n, mask, tau));
                }
            }
        }
        DseMode::PerLayer => {
            let radix = grid.len() + 1;
            let mut digits = vec![0usize; n];
            loop {
                // advance odometer, last layer fastest
                let mut pos = n;
                loop {
                    if pos == 0 {
                        return Ok(Enumeration { configs, truncated });
                    }
                    pos -= 1;
                    digits[pos] += 1;
                    if digits[pos] < radix {
                        break;
                    }
                    digits[pos] = 0;
                }
                if configs.len() >= spec.cap {
                    truncated = true;
                    break;
                }
                configs.push(ApproxConfig {
                    layers: digits
                        .iter()
                        .map(|&d| {
                            if d == 0 {
                                LayerApprox::EXACT
                            } else {
                                LayerApprox { enabled: true, tau: grid[d - 1] }
                            }
                        })
                        .collect(),
                });
            }
        }
    }
    Ok(Enumeration { configs, truncated })
}

/// One evaluated configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ParetoPoint {
    /// Position in the enumeration order.
    pub config_id: usize,
    pub config: ApproxConfig,
    pub accuracy: f64,
    pub conv_mac_total: u64,
    pub total_macs: u64,
    pub mac_reduction: f64,
    pub retained_pairs: u64,
    pub retained_singles: u64,
    /// Layers in the model, for the per-layer cycle overhead.
    pub layer_count: usize,
    pub on_front: bool,
}

/// Evaluates every enumerated config on `d` and flags the Pareto front.
/// Output order and content do not depend on `spec.threads`.
pub fn run_dse(m: &Model, sig: &SignificanceMap, spec: &DsePlanSpec, d: &Dataset) -> Result<Vec<ParetoPoint>> {
    let configs = enumerate_configs(m, spec)?.configs;
    for cfg in &configs {
        if let Some((i, _)) = cfg
            .layers
            .iter()
            .enumerate()
            .find(|(i, l)| l.enabled && *i >= sig.layers.len())
        {
            return Err(Error::MissingSignificance(i));
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let points = pool.install(|| {
        configs
            .into_par_iter()
            .enumerate()
            .map(|(config_id, config)| {
                let plan = build_skip_plan(sig, &config)?;
                let ev = evaluate_config(m, &plan, d)?;
                Ok(ParetoPoint {
                    config_id,
                    config,
                    accuracy: ev.accuracy,
                    conv_mac_total: ev.conv_macs,
                    total_macs: ev.total_macs,
                    mac_reduction: ev.mac_reduction,
                    retained_pairs: ev.retained_pairs,
                    retained_singles: ev.retained_singles,
                    layer_count: m.layers.len(),
                    on_front: false,
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(pareto_front(points))
}

/// Non-dominated flags for `(accuracy, macs)` pairs, maximizing accuracy and
/// minimizing MACs. Points tied on both axes share the same flag.
pub fn front_flags(objectives: &[(f64, u64)]) -> Vec<bool> {
    let mut order: Vec<usize> = (0..objectives.len()).collect();
    order.sort_by(|&a, &b| {
        objectives[a]
            .1
            .cmp(&objectives[b].1)
            .then(objectives[b].0.total_cmp(&objectives[a].0))
    });
    let mut flags = vec![false; objectives.len()];
    // best accuracy among strictly fewer MACs
    let mut best_before = f64::NEG_INFINITY;
    let mut i = 0;
    while i < order.len() {
        let macs = objectives[order[i]].1;
        let group_best = objectives[order[i]].0;
        let mut j = i;
        while j < order.len() && objectives[order[j]].1 == macs {
            let acc = objectives[order[j]].0;
            flags[order[j]] = acc == group_best && acc > best_before;
            j += 1;
        }
        best_before = best_before.max(group_best);
        i = j;
    }
    flags
}

/// Sets `on_front` on every point.
pub fn pareto_front(mut points: Vec<ParetoPoint>) -> Vec<ParetoPoint> {
    let obj: Vec<(f64, u64)> = points.iter().map(|p| (p.accuracy, p.conv_mac_total)).collect();
    for (p, f) in points.iter_mut().zip(front_flags(&obj)) {
        p.on_front = f;
    }
    points
}

/// Linear desk-scale proxies for board cycles and program flash.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostModel {
    pub cycles_per_mac: f64,
    pub layer_overhead_cycles: f64,
    /// Flash per retained dual-MAC statement; a trailing single MAC costs half, rounded up.
    pub bytes_per_pair: u64,
    pub flash_base_bytes: u64,
}

impl Default for CostModel {
    fn default() -> Self {
        Self {
            cycles_per_mac: 1.0,
            layer_overhead_cycles: 0.0,
            bytes_per_pair: 8,
            flash_base_bytes: 4096,
        }
    }
}

impl CostModel {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !ok(self.cycles_per_mac) || !ok(self.layer_overhead_cycles) {
            return Err(Error::Config("cost model coefficients must be finite and non-negative".into()));
        }
        Ok(())
    }

    /// `sum over layers of (overhead + cycles_per_mac * MACs)`.
    pub fn cycles(&self, total_macs: u64, layers: usize) -> f64 {
        layers as f64 * self.layer_overhead_cycles + self.cycles_per_mac * total_macs as f64
    }

    pub fn single_mac_bytes(&self) -> u64 {
        self.bytes_per_pair.div_ceil(2)
    }

    pub fn flash(&self, pairs: u64, singles: u64) -> u64 {
        self.flash_base_bytes + self.bytes_per_pair * pairs + self.single_mac_bytes() * singles
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostEstimate {
    pub cycles: f64,
    pub flash_bytes: u64,
}

pub fn estimate_cost(point: &ParetoPoint, m: &Model, cost: &CostModel) -> CostEstimate {
    CostEstimate {
        cycles: cost.cycles(point.total_macs, m.layers.len()),
        flash_bytes: cost.flash(point.retained_pairs, point.retained_singles),
    }
}

/// What [`select_index`] needs to know about a candidate.
#[derive(Debug, Clone, Copy)]
pub struct Candidate {
    pub on_front: bool,
    pub accuracy: f64,
    pub cycles: f64,
    pub macs: u64,
    pub ordinal: usize,
}

/// Index of the front candidate within the accuracy budget with the fewest
/// modeled cycles (then fewer MACs, then lower ordinal).
pub fn select_index<T>(items: &[T], baseline_accuracy: f64, max_loss: f64, key: impl Fn(&T) -> Candidate) -> Option<usize> {
    let floor = baseline_accuracy - max_loss - ACCURACY_EPS;
    items
        .iter()
        .enumerate()
        .map(|(i, t)| (i, key(t)))
        .filter(|(_, c)| c.on_front && c.accuracy >= floor)
        .min_by(|(_, a), (_, b)| {
            a.cycles
                .total_cmp(&b.cycles)
                .then(a.macs.cmp(&b.macs))
                .then(a.ordinal.cmp(&b.ordinal))
        })
        .map(|(i, _)| i)
}

/// The selected point, or `None` when no front point meets the accuracy budget.
pub fn select_point<'a>(front: &'a [ParetoPoint], baseline_accuracy: f64, max_loss: f64, cost: &CostModel) -> Option<&'a ParetoPoint> {
    select_index(front, baseline_accuracy, max_loss, |p| Candidate {
        on_front: p.on_front,
        accuracy: p.accuracy,
        cycles: cost.cycles(p.total_macs, p.layer_count),
        macs: p.total_macs,
        ordinal: p.config_id,
    })
    .map(|i| &front[i])
}

/// Like [`select_point`] but falls back to the all-exact config.
pub fn select_config(front: &[ParetoPoint], baseline_accuracy: f64, max_loss: f64, cost: &CostModel) -> ApproxConfig {
    match select_point(front, baseline_accuracy, max_loss, cost) {
        Some(p) => p.config.clone(),
        None => ApproxConfig::exact(front.first().map_or(0, |p| p.config.layers.len())),
    }
}

/// Accuracy of the all-exact point.
pub fn baseline_accuracy(points: &[ParetoPoint]) -> Option<f64> {
    points.iter().find(|p| p.config.is_exact()).map(|p| p.accuracy)
}

/// One row of the results CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct DseRecord {
    pub config_id: usize,
    pub config: ApproxConfig,
    pub accuracy: f64,
    pub conv_macs: u64,
    pub total_macs: u64,
    pub mac_reduction: f64,
    pub est_cycles: f64,
    pub est_flash: u64,
    pub on_front: bool,
}

pub fn to_records(points: &[ParetoPoint], m: &Model, cost: &CostModel) -> Vec<DseRecord> {
    points
        .iter()
        .map(|p| {
            let est = estimate_cost(p, m, cost);
            DseRecord {
                config_id: p.config_id,
                config: p.config.clone(),
                accuracy: p.accuracy,
                conv_macs: p.conv_mac_total,
                total_macs: p.total_macs,
                mac_reduction: p.mac_reduction,
                est_cycles: est.cycles,
                est_flash: est.flash_bytes,
                on_front: p.on_front,
            }
        })
        .collect()
}

/// Writes the results CSV:
/// `config_id,layer_mask,tau_0..tau_{n-1},accuracy,conv_macs,total_macs,mac_reduction,est_cycles,est_flash,on_front`.
/// Disabled layers leave their tau field empty.
pub fn write_records(records: &[DseRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)?;
    let n = records.first().map_or(0, |r| r.config.layers.len());
    let mut header = vec!["config_id".to_string(), "layer_mask".to_string()];
    header.extend((0..n).map(|i| format!("tau_{i}")));
    header.extend(
        ["accuracy", "conv_macs", "total_macs", "mac_reduction", "est_cycles", "est_flash", "on_front"]
            .map(String::from),
    );
    w.write_record(&header)?;
    for r in records {
        let mut row = vec![r.config_id.to_string(), r.config.layer_mask().to_string()];
        row.extend(r.config.layers.iter().map(|l| if l.enabled { l.tau.to_string() } else { String::new() }));
        row.extend([
            r.accuracy.to_string(),
            r.conv_macs.to_string(),
            r.total_macs.to_string(),
            r.mac_reduction.to_string(),
            r.est_cycles.to_string(),
            r.est_flash.to_string(),
            r.on_front.to_string(),
        ]);
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn export_results(points: &[ParetoPoint], m: &Model, cost: &CostModel, path: impl AsRef<Path>) -> Result<()> {
    write_records(&to_records(points, m, cost), path)
}

pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<DseRecord>> {
    let mut r = csv::ReaderBuilder::new().from_path(path.as_ref())?;
    let header = r.headers()?.clone();
    let n_tau = header.iter().filter(|h| h.starts_with("tau_")).count();
    if header.len() != n_tau + 9 || &header[0] != "config_id" || &header[1] != "layer_mask" {
        return Err(Error::Format {
            what: "results csv",
            detail: "unexpected header".into(),
        });
    }
    let bad = |detail: String| Error::Format {
        what: "results csv",
        detail,
    };
    let mut out = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let field = |i: usize| rec.get(i).unwrap_or("");
        let num = |i: usize| -> Result<f64> {
            field(i).parse().map_err(|_| bad(format!("row {line}: bad number {:?}", field(i))))
        };
        let int = |i: usize| -> Result<u64> {
            field(i).parse().map_err(|_| bad(format!("row {line}: bad integer {:?}", field(i))))
        };
        let mask = int(1)?;
        let mut layers = Vec::with_capacity(n_tau);
        for i in 0..n_tau {
            let f = field(2 + i);
            let enabled = mask >> i & 1 == 1;
            if enabled == f.is_empty() {
                return Err(bad(format!("row {line}: tau_{i} disagrees with layer_mask")));
            }
            layers.push(if enabled {
                LayerApprox { enabled, tau: num(2 + i)? }
            } else {
                LayerApprox::EXACT
            });
        }
        let b = 2 + n_tau;
        out.push(DseRecord {
            config_id: int(0)? as usize,
            config: ApproxConfig { layers },
            accuracy: num(b)?,
            conv_macs: int(b + 1)?,
            total_macs: int(b + 2)?,
            mac_reduction: num(b + 3)?,
            est_cycles: num(b + 4)?,
            est_flash: int(b + 5)?,
            on_front: field(b + 6)
                .parse()
                .map_err(|_| bad(format!("row {line}: bad flag {:?}", field(b + 6))))?,
        });
    }
    Ok(out)
}

/// Whitespace-separated plot data: `mac_reduction accuracy on_front config_id`,
/// front points in a second block sorted by MAC reduction.
pub fn write_plot_data(records: &[DseRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut s = Vec::new();
    let io = |e| Error::io(path, e);
    writeln!(s, "# all configurations: mac_reduction accuracy on_front config_id").map_err(io)?;
    for r in records {
        writeln!(s, "{} {} {} {}", r.mac_reduction, r.accuracy, r.on_front as u8, r.config_id).map_err(io)?;
    }
    writeln!(s, "\n\n# pareto front").map_err(io)?;
    let mut front: Vec<&DseRecord> = records.iter().filter(|r| r.on_front).collect();
    front.sort_by(|a, b| a.mac_reduction.total_cmp(&b.mac_reduction).then(a.config_id.cmp(&b.config_id)));
    for r in front {
        writeln!(s, "{} {} 1 {}", r.mac_reduction, r.accuracy, r.config_id).map_err(io)?;
    }
    crate::binio::write_file(path, &s)
}
