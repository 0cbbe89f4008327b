//! C99 emission of fully unpacked, constant-weight convolution kernels.
//!
//! Each conv layer becomes one function in `<prefix>_layer<k>.c`. The
//! receptive-field dimension is unpacked: retained products of each output
//! channel appear as straight-line dual-MAC statements carrying the packed
//! weight pair as a literal, plus one single MAC when the retained count is
//! odd. Skipped products do not appear at all. Pool and dense layers are
//! plain loops over constant arrays in `<prefix>_net.c`, and
//! `<prefix>_net.h` declares buffers, layer functions and the entry point
//!
//! ```c
//! int32_t <prefix>_infer(const int8_t input[<PREFIX>_IN_LEN], int8_t logits_out[<PREFIX>_NUM_CLASSES]);
//! ```
//!
//! which returns the argmax class (lowest index on ties). The emitted
//! arithmetic matches [`crate::qinfer`] bit for bit.

mod c;
mod kernel;

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use crate::approx::SkipPlan;
use crate::binio::write_file;
use crate::dse::CostModel;
use crate::error::{Error, Result};
use crate::model::{validate_model, ConvLayerSpec, DenseLayerSpec, Layer, Model, PoolLayerSpec};
use crate::qinfer::ConvProgram;

use c::{helpers, i32_lit, initializer, is_identifier};

#[derive(Debug, Clone, PartialEq)]
pub struct CodegenOptions {
    /// Prefix for every emitted symbol and file name; must be a C identifier.
    pub prefix: String,
    pub cost: CostModel,
}

impl Default for CodegenOptions {
    fn default() -> Self {
        Self {
            prefix: "axk".into(),
            cost: CostModel::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EmittedKernel {
    /// Model layer index.
    pub layer_id: usize,
    pub symbol: String,
    pub file_name: String,
    pub source_text: String,
    /// Dual-MAC statements per output position.
    pub retained_pairs: u64,
    pub retained_single_macs: u64,
    /// Flash attributed to the unpacked statements (excludes the base cost).
    pub estimated_flash_bytes: u64,
}

impl EmittedKernel {
    /// MACs per output position: `2 * pairs + singles`.
    pub fn retained_macs(&self) -> u64 {
        2 * self.retained_pairs + self.retained_single_macs
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EmissionBundle {
    pub prefix: String,
    pub kernels: Vec<EmittedKernel>,
    pub header: String,
    pub net_source: String,
    /// Every external and file-local function/array symbol, in emission order.
    pub symbols: Vec<String>,
    pub in_len: usize,
    pub num_classes: usize,
}

impl EmissionBundle {
    pub fn header_name(&self) -> String {
        format!("{}_net.h", self.prefix)
    }

    pub fn net_name(&self) -> String {
        format!("{}_net.c", self.prefix)
    }

    /// `(file name, contents)` for every file, header first.
    pub fn files(&self) -> Vec<(String, &str)> {
        let mut v = vec![
            (self.header_name(), self.header.as_str()),
            (self.net_name(), self.net_source.as_str()),
        ];
        v.extend(self.kernels.iter().map(|k| (k.file_name.clone(), k.source_text.as_str())));
        v
    }

    /// Names of the `.c` files to compile.
    pub fn c_files(&self) -> Vec<String> {
        self.files()
            .into_iter()
            .map(|(n, _)| n)
            .filter(|n| n.ends_with(".c"))
            .collect()
    }

    pub fn write_to(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, text) in self.files() {
            write_file(&dir.join(name), text.as_bytes())?;
        }
        Ok(())
    }

    pub fn retained_pairs(&self) -> u64 {
        self.kernels.iter().map(|k| k.retained_pairs).sum()
    }

    pub fn retained_single_macs(&self) -> u64 {
        self.kernels.iter().map(|k| k.retained_single_macs).sum()
    }
}

fn check_prefix(prefix: &str) -> Result<()> {
    if !is_identifier(prefix) {
        return Err(Error::InvalidPrefix(prefix.to_string()));
    }
    Ok(())
}

/// Emits the unpacked kernel for one conv layer with `skip[c]` omitted from channel `c`.
pub fn emit_layer_kernel(
    layer: &ConvLayerSpec,
    skip: &[Vec<u32>],
    layer_id: usize,
    opts: &CodegenOptions,
) -> Result<EmittedKernel> {
    check_prefix(&opts.prefix)?;
    let program = if skip.is_empty() {
        ConvProgram::exact(layer)
    } else {
        ConvProgram::with_skips(layer, skip)?
    };
    Ok(kernel_from_program(layer, &program, layer_id, opts))
}

fn kernel_from_program(layer: &ConvLayerSpec, program: &ConvProgram, layer_id: usize, opts: &CodegenOptions) -> EmittedKernel {
    let p = &opts.prefix;
    let pairs = program.pairs();
    let singles = program.singles();
    EmittedKernel {
        layer_id,
        symbol: format!("{p}_layer{layer_id}"),
        file_name: format!("{p}_layer{layer_id}.c"),
        source_text: kernel::conv_source(p, layer_id, layer, program),
        retained_pairs: pairs,
        retained_single_macs: singles,
        estimated_flash_bytes: opts.cost.bytes_per_pair * pairs + opts.cost.single_mac_bytes() * singles,
    }
}

/// Emits the whole network for `plan`.
pub fn emit_network(m: &Model, plan: &SkipPlan, opts: &CodegenOptions) -> Result<EmissionBundle> {
    check_prefix(&opts.prefix)?;
    let violations = validate_model(m);
    if !violations.is_empty() {
        return Err(Error::Invalid(violations));
    }
    let programs = plan.programs(m)?;
    let p = opts.prefix.as_str();
    let up = p.to_ascii_uppercase();
    let n_layers = m.layers.len();
    let in_len = m.input_shape().len();
    let buf_len = m.layers[..n_layers - 1]
        .iter()
        .map(|l| l.out_shape().len())
        .max()
        .unwrap_or(0);

    let mut symbols = Vec::new();
    let mut kernels = Vec::new();
    let mut conv_ord = 0;
    for (idx, layer) in m.layers.iter().enumerate() {
        symbols.push(format!("{p}_layer{idx}"));
        match layer {
            Layer::Conv2d(c) => {
                kernels.push(kernel_from_program(c, &programs[conv_ord], idx, opts));
                conv_ord += 1;
            }
            Layer::Dense(_) => {
                symbols.push(format!("{p}_l{idx}_w"));
                symbols.push(format!("{p}_l{idx}_b"));
            }
            Layer::MaxPool(_) => {}
        }
    }
    symbols.extend(["infer", "smlad", "smla", "ld", "requant"].map(|s| format!("{p}_{s}")));
    if buf_len > 0 {
        symbols.extend(["buf0", "buf1"].map(|s| format!("{p}_{s}")));
    }
    let mut seen = BTreeSet::new();
    for s in &symbols {
        if !seen.insert(s) {
            return Err(Error::SymbolCollision(s.clone()));
        }
    }

    // header
    let mut h = String::new();
    let _ = writeln!(h, "/* {} generated network: {} */", p, m.name.replace("*/", "* /"));
    let _ = writeln!(h, "#ifndef {up}_NET_H\n#define {up}_NET_H\n\n#include <stdint.h>\n");
    let _ = writeln!(h, "#define {up}_IN_LEN {in_len}");
    let _ = writeln!(h, "#define {up}_NUM_CLASSES {}", m.num_classes);
    if buf_len > 0 {
        let _ = writeln!(h, "#define {up}_BUF_LEN {buf_len}\n");
        let _ = writeln!(h, "extern int8_t {p}_buf0[{up}_BUF_LEN];");
        let _ = writeln!(h, "extern int8_t {p}_buf1[{up}_BUF_LEN];");
    }
    h.push('\n');
    for k in &kernels {
        let _ = writeln!(h, "void {}(const int8_t *in, int8_t *out);", k.symbol);
    }
    let _ = writeln!(
        h,
        "int32_t {p}_infer(const int8_t input[{up}_IN_LEN], int8_t logits_out[{up}_NUM_CLASSES]);\n"
    );
    h.push_str(&helpers(p));
    let _ = writeln!(h, "\n#endif /* {up}_NET_H */");

    // network source
    let mut s = String::new();
    let _ = writeln!(s, "/* {p} network entry point, pool and dense layers */");
    let _ = writeln!(s, "#include \"{p}_net.h\"\n");
    if buf_len > 0 {
        let _ = writeln!(s, "int8_t {p}_buf0[{up}_BUF_LEN];\nint8_t {p}_buf1[{up}_BUF_LEN];\n");
    }
    for (idx, layer) in m.layers.iter().enumerate() {
        match layer {
            Layer::MaxPool(pl) => s.push_str(&pool_source(p, idx, pl)),
            Layer::Dense(d) => s.push_str(&dense_source(p, idx, d)),
            Layer::Conv2d(_) => {}
        }
    }
    let _ = writeln!(
        s,
        "int32_t {p}_infer(const int8_t input[{up}_IN_LEN], int8_t logits_out[{up}_NUM_CLASSES])\n{{"
    );
    s.push_str("    int32_t best = 0;\n    int32_t i;\n");
    for idx in 0..n_layers {
        let src = if idx == 0 { "input".to_string() } else { format!("{p}_buf{}", (idx - 1) % 2) };
        let dst = if idx == n_layers - 1 { "logits_out".to_string() } else { format!("{p}_buf{}", idx % 2) };
        let _ = writeln!(s, "    {p}_layer{idx}({src}, {dst});");
    }
    let _ = writeln!(s, "    for (i = 1; i < {up}_NUM_CLASSES; ++i) {{");
    s.push_str("        if (logits_out[i] > logits_out[best]) {\n            best = i;\n        }\n    }\n");
    s.push_str("    return best;\n}\n");

    Ok(EmissionBundle {
        prefix: p.to_string(),
        kernels,
        header: h,
        net_source: s,
        symbols,
        in_len,
        num_classes: m.num_classes,
    })
}

fn pool_source(p: &str, idx: usize, pl: &PoolLayerSpec) -> String {
    let (_, w, c) = pl.in_shape.as_hwc().unwrap_or((0, 0, 0));
    let (oh, ow, _) = pl.out_shape().as_hwc().unwrap_or((0, 0, 0));
    format!(
        "static void {p}_layer{idx}(const int8_t *in, int8_t *out)
{{
    int oy;
    int ox;
    int c;
    int py;
    int px;
    for (oy = 0; oy < {oh}; ++oy) {{
        for (ox = 0; ox < {ow}; ++ox) {{
            for (c = 0; c < {c}; ++c) {{
                int8_t m = -128;
                for (py = 0; py < {ph}; ++py) {{
                    for (px = 0; px < {pw}; ++px) {{
                        const int8_t v = in[((oy * {sh} + py) * {w} + (ox * {sw} + px)) * {c} + c];
                        if (v > m) {{
                            m = v;
                        }}
                    }}
                }}
                out[(oy * {ow} + ox) * {c} + c] = m;
            }}
        }}
    }}
}}

",
        ph = pl.pool_h,
        pw = pl.pool_w,
        sh = pl.stride_h,
        sw = pl.stride_w,
    )
}

fn dense_source(p: &str, idx: usize, d: &DenseLayerSpec) -> String {
    let n = d.in_features();
    let o = d.out_features;
    let bias: Vec<String> = d.bias.iter().map(|&b| i32_lit(b)).collect();
    format!(
        "static const int8_t {p}_l{idx}_w[{len}] = {{
{w}
}};

static const int32_t {p}_l{idx}_b[{o}] = {{
{b}
}};

static void {p}_layer{idx}(const int8_t *in, int8_t *out)
{{
    int o;
    int i;
    for (o = 0; o < {o}; ++o) {{
        int32_t acc = {p}_l{idx}_b[o];
        for (i = 0; i < {n}; ++i) {{
            acc += ((int32_t)in[i] + {offset}) * (int32_t){p}_l{idx}_w[o * {n} + i];
        }}
        out[o] = {p}_requant(acc, {mult}, {shift}, {zp}, {lo}, {hi});
    }}
}}

",
        len = d.weights.len(),
        w = initializer(&d.weights, 16, "    "),
        b = initializer(&bias, 8, "    "),
        offset = d.in_quant.input_offset(),
        mult = i32_lit(d.requant.multiplier),
        shift = 31 + d.requant.shift,
        zp = d.out_quant.zero_point,
        lo = d.act_min,
        hi = d.act_max,
    )
}

/// Estimated program flash against a budget.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Footprint {
    pub flash_bytes: u64,
    pub fits: bool,
    pub utilization: f64,
}

fn footprint(pairs: u64, singles: u64, cost: &CostModel, flash_budget: u64) -> Result<Footprint> {
    if flash_budget == 0 {
        return Err(Error::Config("flash budget must be positive".into()));
    }
    let flash_bytes = cost.flash(pairs, singles);
    Ok(Footprint {
        flash_bytes,
        fits: flash_bytes <= flash_budget,
        utilization: flash_bytes as f64 / flash_budget as f64,
    })
}

/// `base + bytes_per_pair * pairs + ceil(bytes_per_pair / 2) * singles`.
pub fn estimate_footprint(bundle: &EmissionBundle, cost: &CostModel, flash_budget: u64) -> Result<Footprint> {
    footprint(bundle.retained_pairs(), bundle.retained_single_macs(), cost, flash_budget)
}

/// Same estimate without emitting source.
pub fn estimate_plan_footprint(m: &Model, plan: &SkipPlan, cost: &CostModel, flash_budget: u64) -> Result<Footprint> {
    let programs = plan.programs(m)?;
    footprint(
        programs.iter().map(ConvProgram::pairs).sum(),
        programs.iter().map(ConvProgram::singles).sum(),
        cost,
        flash_budget,
    )
}

/// Number of multiply-accumulate statements in emitted source text.
pub fn count_mac_statements(prefix: &str, source: &str) -> usize {
    source.matches(&format!("acc = {prefix}_smlad(acc,")).count()
        + source.matches(&format!("acc = {prefix}_smla(acc,")).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::approx::LayerSkip;
    use crate::model::{generate_fixture, FixtureParams};

    fn fixture() -> Model {
        generate_fixture(&FixtureParams {
            zero_weight_fraction: 0.3,
            samples_per_class: 1,
            ..FixtureParams::default()
        })
        .0
    }

    #[test]
    fn exact_plan_has_every_product() {
        let m = fixture();
        let b = emit_network(&m, &SkipPlan::exact(&m), &CodegenOptions::default()).unwrap();
        assert_eq!(b.kernels.len(), 3);
        for (k, (idx, c)) in b.kernels.iter().zip(m.conv_layers()) {
            assert_eq!(k.layer_id, idx);
            assert_eq!(k.retained_macs(), (c.out_channels * c.kernel_len()) as u64);
            assert_eq!(count_mac_statements("axk", &k.source_text) as u64, k.retained_pairs + k.retained_single_macs);
        }
        let names: Vec<String> = b.files().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names, ["axk_net.h", "axk_net.c", "axk_layer0.c", "axk_layer2.c", "axk_layer4.c"]);
        assert!(b.header.contains("#define AXK_IN_LEN 256"));
        assert!(b.header.contains("#define AXK_NUM_CLASSES 4"));
        assert!(b.net_source.contains("int32_t axk_infer(const int8_t input[AXK_IN_LEN], int8_t logits_out[AXK_NUM_CLASSES])"));
    }

    #[test]
    fn skipped_products_vanish_from_source() {
        let m = fixture();
        let (_, c) = m.conv_layers().next().unwrap();
        let k = c.kernel_len() as u32;
        // channel 0 keeps only index 4; channel 1 keeps 0 and 1
        let skip = vec![(0..k).filter(|&i| i != 4).collect(), (2..k).collect(), vec![], vec![]];
        let e = emit_layer_kernel(c, &skip, 0, &CodegenOptions::default()).unwrap();
        let oc0 = &e.source_text[e.source_text.find("/* oc 0 */").unwrap()..e.source_text.find("/* oc 1 */").unwrap()];
        assert_eq!(count_mac_statements("axk", oc0), 1);
        assert!(oc0.contains(&format!("axk_smla(acc, {}, a4)", c.weights[4])));
        let oc1 = &e.source_text[e.source_text.find("/* oc 1 */").unwrap()..e.source_text.find("/* oc 2 */").unwrap()];
        assert!(oc1.contains(&format!("axk_smlad(acc, {}, a0, a1)", pack_literal(c.weights[k as usize], c.weights[k as usize + 1]))));
        assert_eq!(count_mac_statements("axk", oc1), 1);
    }

    fn pack_literal(w1: i8, w2: i8) -> String {
        i32_lit(crate::qinfer::pack_weight_pair(w1, w2))
    }

    #[test]
    fn fully_skipped_layer_loads_nothing() {
        let m = fixture();
        let (_, c) = m.conv_layers().next().unwrap();
        let all: Vec<u32> = (0..c.kernel_len() as u32).collect();
        let e = emit_layer_kernel(c, &vec![all; c.out_channels], 0, &CodegenOptions::default()).unwrap();
        assert_eq!(e.retained_macs(), 0);
        assert!(!e.source_text.contains("axk_ld("));
        assert!(!e.source_text.contains("const int iy"));
        assert_eq!(e.estimated_flash_bytes, 0);
    }

    #[test]
    fn bad_prefix_rejected() {
        let m = fixture();
        for p in ["", "9abc", "a-b", "int", "static"] {
            let opts = CodegenOptions {
                prefix: p.into(),
                ..CodegenOptions::default()
            };
            assert!(matches!(emit_network(&m, &SkipPlan::exact(&m), &opts), Err(Error::InvalidPrefix(_))), "{p}");
        }
        let opts = CodegenOptions {
            prefix: "net_7".into(),
            ..CodegenOptions::default()
        };
        let b = emit_network(&m, &SkipPlan::exact(&m), &opts).unwrap();
        assert!(b.header.contains("#ifndef NET_7_NET_H"));
        assert!(b.symbols.iter().all(|s| s.starts_with("net_7_")));
    }

    #[test]
    fn footprint_follows_cost_model() {
        let m = fixture();
        let mut plan = SkipPlan::exact(&m);
        let cost = CostModel::default();
        let exact = emit_network(&m, &plan, &CodegenOptions::default()).unwrap();
        let f = estimate_footprint(&exact, &cost, 1 << 20).unwrap();
        assert_eq!(f.flash_bytes, cost.flash(exact.retained_pairs(), exact.retained_single_macs()));
        assert_eq!(estimate_plan_footprint(&m, &plan, &cost, 1 << 20).unwrap(), f);
        assert!(f.fits);
        assert!(!estimate_footprint(&exact, &cost, cost.flash_base_bytes).unwrap().fits);
        assert!(estimate_footprint(&exact, &cost, 0).is_err());

        let (_, c) = m.conv_layers().next().unwrap();
        plan.layers[0] = LayerSkip {
            channels: vec![vec![0, 1, 2]; c.out_channels],
            out_positions: c.out_positions() as u64,
        };
        let smaller = estimate_plan_footprint(&m, &plan, &cost, 1 << 20).unwrap();
        assert!(smaller.flash_bytes < f.flash_bytes);
    }

    #[test]
    fn int32_min_bias_is_valid_c() {
        assert_eq!(i32_lit(i32::MIN), "(-2147483647 - 1)");
        assert_eq!(i32_lit(-5), "-5");
    }
}
