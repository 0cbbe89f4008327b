//! Compiles emitted bundles with the host C compiler and compares them with
//! the simulator. Skips (with a note) when no compiler is available.

use std::path::{Path, PathBuf};
use std::process::Command;

use axkern::approx::{build_skip_plan, SkipPlan};
use axkern::codegen::{emit_network, CodegenOptions, EmissionBundle};
use axkern::dse::{run_dse, DsePlanSpec};
use axkern::model::{generate_fixture, FixtureParams, Model, QuantizedTensor};
use axkern::significance::{capture_activation_stats, significance_map};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const HARNESS: &str = r#"#include <stdio.h>
#include <stdint.h>
#include "axk_net.h"

int main(int argc, char **argv)
{
    int8_t in[AXK_IN_LEN];
    int8_t logits[AXK_NUM_CLASSES];
    unsigned char cls[4];
    int32_t c;
    FILE *f;
    if (argc != 3) {
        return 2;
    }
    f = fopen(argv[1], "rb");
    if (f == NULL) {
        return 2;
    }
    if (fread(in, 1, sizeof in, f) != sizeof in || fgetc(f) != EOF) {
        fclose(f);
        return 2;
    }
    fclose(f);
    c = axk_infer(in, logits);
    cls[0] = (unsigned char)(c & 0xff);
    cls[1] = (unsigned char)((c >> 8) & 0xff);
    cls[2] = (unsigned char)((c >> 16) & 0xff);
    cls[3] = (unsigned char)((c >> 24) & 0xff);
    f = fopen(argv[2], "wb");
    if (f == NULL) {
        return 2;
    }
    if (fwrite(logits, 1, sizeof logits, f) != sizeof logits || fwrite(cls, 1, 4, f) != 4) {
        fclose(f);
        return 2;
    }
    return fclose(f) == 0 ? 0 : 2;
}
"#;

fn compiler() -> Option<String> {
    for cc in [std::env::var("CC").unwrap_or_default().as_str(), "cc", "gcc", "clang"] {
        if !cc.is_empty() && Command::new(cc).arg("--version").output().is_ok_and(|o| o.status.success()) {
            return Some(cc.to_string());
        }
    }
    None
}

fn build(cc: &str, bundle: &EmissionBundle, dir: &Path) -> PathBuf {
    bundle.write_to(dir).unwrap();
    std::fs::write(dir.join("harness.c"), HARNESS).unwrap();
    let exe = dir.join("harness");
    let mut cmd = Command::new(cc);
    cmd.current_dir(dir)
        .args(["-std=c99", "-pedantic", "-Wall", "-Wextra", "-Werror", "-O1", "-o"])
        .arg(&exe)
        .arg("harness.c");
    cmd.args(bundle.c_files());
    let out = cmd.output().unwrap();
    assert!(
        out.status.success(),
        "compile failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    exe
}

fn run_case(exe: &Path, dir: &Path, input: &[i8]) -> (Vec<i8>, u32) {
    let inp = dir.join("case.in");
    let outp = dir.join("case.out");
    std::fs::write(&inp, input.iter().map(|&v| v as u8).collect::<Vec<_>>()).unwrap();
    let st = Command::new(exe).arg(&inp).arg(&outp).status().unwrap();
    assert!(st.success());
    let bytes = std::fs::read(&outp).unwrap();
    let n = bytes.len() - 4;
    let cls = u32::from_le_bytes(bytes[n..].try_into().unwrap());
    (bytes[..n].iter().map(|&b| b as i8).collect(), cls)
}

fn mismatches(m: &Model, plan: &SkipPlan, exe: &Path, dir: &Path, cases: usize, seed: u64) -> usize {
    let net = plan.network(m).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bad = 0;
    for k in 0..cases {
        let data: Vec<i8> = if k == 0 {
            vec![0; m.input_shape().len()]
        } else {
            (0..m.input_shape().len()).map(|_| rng.random()).collect()
        };
        let x = QuantizedTensor::new(m.input_shape().clone(), data.clone(), m.input_quant());
        let sim = net.infer(&x).unwrap();
        let (logits, cls) = run_case(exe, dir, &data);
        if logits != sim.logits || cls as usize != sim.class {
            bad += 1;
        }
    }
    bad
}

#[test]
fn compiled_bundle_matches_simulator() {
    let Some(cc) = compiler() else {
        eprintln!("no C compiler found; skipping");
        return;
    };
    let (m, d) = generate_fixture(&FixtureParams {
        zero_weight_fraction: 0.3,
        ..FixtureParams::default()
    });
    let (calib, eval) = d.split_at(128).unwrap();
    let sig = significance_map(&m, &capture_activation_stats(&m, &calib, usize::MAX).unwrap()).unwrap();
    let points = run_dse(&m, &sig, &DsePlanSpec::default(), &eval).unwrap();
    let mut front: Vec<_> = points.iter().filter(|p| p.on_front && !p.config.is_exact()).collect();
    front.sort_by_key(|p| p.conv_mac_total);
    let mut plans = vec![SkipPlan::exact(&m)];
    plans.push(build_skip_plan(&sig, &front[0].config).unwrap());
    plans.push(build_skip_plan(&sig, &front[front.len() - 1].config).unwrap());

    let opts = CodegenOptions::default();
    let tmp = tempfile::tempdir().unwrap();
    for (i, plan) in plans.iter().enumerate() {
        let dir = tmp.path().join(format!("plan{i}"));
        let bundle = emit_network(&m, plan, &opts).unwrap();
        let exe = build(&cc, &bundle, &dir);
        assert_eq!(mismatches(&m, plan, &exe, &dir, 100, i as u64), 0, "plan {i}");
    }

    // A single mutated literal must be caught.
    let plan = &plans[1];
    let mut bundle = emit_network(&m, plan, &opts).unwrap();
    let k = &mut bundle.kernels[0];
    let pos = k.source_text.find("acc = axk_smlad(acc, ").unwrap() + "acc = axk_smlad(acc, ".len();
    let end = pos + k.source_text[pos..].find(',').unwrap();
    let lit: i64 = k.source_text[pos..end].trim_start_matches('(').parse().unwrap();
    k.source_text.replace_range(pos..end, &(lit + 65536).to_string());
    let dir = tmp.path().join("mutated");
    let exe = build(&cc, &bundle, &dir);
    assert!(mismatches(&m, plan, &exe, &dir, 100, 9) >= 1);

    // Truncated input is rejected by the harness.
    let bad = dir.join("short.in");
    std::fs::write(&bad, [0u8; 3]).unwrap();
    let st = Command::new(&exe).arg(&bad).arg(dir.join("x.out")).status().unwrap();
    assert_eq!(st.code(), Some(2));
}

#[test]
fn c_dual_mac_helper_covers_every_pair() {
    let Some(cc) = compiler() else {
        eprintln!("no C compiler found; skipping");
        return;
    };
    let m = generate_fixture(&FixtureParams::default()).0;
    let bundle = emit_network(&m, &SkipPlan::exact(&m), &CodegenOptions::default()).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    bundle.write_to(tmp.path()).unwrap();
    let mut table = String::from("static const int32_t packed[65536] = {\n");
    for w1 in i8::MIN..=i8::MAX {
        for w2 in i8::MIN..=i8::MAX {
            table.push_str(&format!("{},\n", axkern::qinfer::pack_weight_pair(w1, w2)));
        }
    }
    table.push_str("};\n");
    let src = format!(
        r#"#include <stdio.h>
#include "axk_net.h"
{table}
int main(void)
{{
    static const int16_t xs[] = {{ -255, -128, -1, 0, 1, 127, 255 }};
    long bad = 0;
    int k;
    for (k = 0; k < 65536; ++k) {{
        const int32_t w1 = (k >> 8) - 128;
        const int32_t w2 = (k & 255) - 128;
        int i;
        int j;
        for (i = 0; i < 7; ++i) {{
            for (j = 0; j < 7; ++j) {{
                if (axk_smlad(7, packed[k], xs[i], xs[j]) != 7 + w1 * xs[i] + w2 * xs[j]) {{
                    ++bad;
                }}
            }}
        }}
    }}
    printf("%ld\n", bad);
    return bad != 0;
}}
"#
    );
    std::fs::write(tmp.path().join("pairs.c"), src).unwrap();
    let exe = tmp.path().join("pairs");
    let out = Command::new(&cc)
        .current_dir(tmp.path())
        .args(["-std=c99", "-pedantic", "-Wall", "-Wextra", "-Werror", "-O1", "-o"])
        .arg(&exe)
        .arg("pairs.c")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = Command::new(&exe).output().unwrap();
    assert!(run.status.success(), "mismatches: {}", String::from_utf8_lossy(&run.stdout));
}
