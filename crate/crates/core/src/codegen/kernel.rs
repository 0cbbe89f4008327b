use std::collections::BTreeSet;
use std::fmt::Write as _;

use super::c::i32_lit;
use crate::model::ConvLayerSpec;
use crate::qinfer::ConvProgram;

/// Source of one unpacked conv layer function. Spatial loops remain; every
/// retained product of every output channel is a straight-line statement
/// with its weight (or packed weight pair) as a literal.
pub(crate) fn conv_source(p: &str, layer_id: usize, layer: &ConvLayerSpec, program: &ConvProgram) -> String {
    let (h, w, cin) = layer.in_dims();
    let (oh, ow, cout) = (layer.out_h(), layer.out_w(), layer.out_channels);
    let offset = layer.in_quant.input_offset();
    let padded = layer.pad_top + layer.pad_left + layer.pad_bottom + layer.pad_right > 0;
    let used: BTreeSet<u32> = program.channels.iter().flat_map(|c| c.retained_indices()).collect();
    let rq = layer.requant;

    let mut s = String::new();
    let _ = writeln!(
        s,
        "/* layer {layer_id}: conv2d {}x{}x{} -> {oh}x{ow}x{cout}, kernel {}x{}, stride {}x{}, pad {},{},{},{} */",
        h, w, cin, layer.kernel_h, layer.kernel_w, layer.stride_h, layer.stride_w,
        layer.pad_top, layer.pad_left, layer.pad_bottom, layer.pad_right
    );
    let _ = writeln!(
        s,
        "/* retained per position: {} dual-MAC, {} single MAC, {} of {} products */",
        program.pairs(),
        program.singles(),
        program.retained_per_position(),
        cout * layer.kernel_len()
    );
    let _ = writeln!(s, "#include \"{p}_net.h\"\n");
    let _ = writeln!(s, "void {p}_layer{layer_id}(const int8_t *in, int8_t *out)\n{{");
    s.push_str("    int oy;\n    int ox;\n");
    let _ = writeln!(s, "    for (oy = 0; oy < {oh}; ++oy) {{");
    let _ = writeln!(s, "        for (ox = 0; ox < {ow}; ++ox) {{");
    let ind = "            ";
    let _ = writeln!(s, "{ind}int8_t *o = out + (oy * {ow} + ox) * {cout};");
    s.push_str(&format!("{ind}int32_t acc;\n"));

    if !used.is_empty() {
        if padded {
            let _ = writeln!(s, "{ind}const int iy = oy * {} - {};", layer.stride_h, layer.pad_top);
            let _ = writeln!(s, "{ind}const int ix = ox * {} - {};", layer.stride_w, layer.pad_left);
        } else {
            let _ = writeln!(
                s,
                "{ind}const int8_t *px = in + (oy * {} * {w} + ox * {}) * {cin};",
                layer.stride_h, layer.stride_w
            );
        }
        for &i in &used {
            let (ky, kx, ci) = layer.split_index(i as usize);
            if padded {
                let _ = writeln!(
                    s,
                    "{ind}const int16_t a{i} = {p}_ld(in, iy + {ky}, ix + {kx}, {ci}, {h}, {w}, {cin}, {offset});"
                );
            } else {
                let _ = writeln!(
                    s,
                    "{ind}const int16_t a{i} = (int16_t)((int32_t)px[{}] + {offset});",
                    (ky * w + kx) * cin + ci
                );
            }
        }
    }

    for (c, ch) in program.channels.iter().enumerate() {
        let _ = writeln!(s, "{ind}/* oc {c} */");
        let _ = writeln!(s, "{ind}acc = {};", i32_lit(layer.bias[c]));
        for pair in &ch.pairs {
            let _ = writeln!(
                s,
                "{ind}acc = {p}_smlad(acc, {}, a{}, a{});",
                i32_lit(pair.packed),
                pair.first,
                pair.second
            );
        }
        if let Some(single) = ch.single {
            let _ = writeln!(s, "{ind}acc = {p}_smla(acc, {}, a{});", single.weight, single.index);
        }
        let _ = writeln!(
            s,
            "{ind}o[{c}] = {p}_requant(acc, {}, {}, {}, {}, {});",
            i32_lit(rq.multiplier),
            31 + rq.shift,
            layer.out_quant.zero_point,
            layer.act_min,
            layer.act_max
        );
    }
    s.push_str("        }\n    }\n}\n");
    s
}
