//! C99 text helpers shared by the emitters.

use std::fmt::Write as _;

const C_KEYWORDS: &[&str] = &[
    "auto", "break", "case", "char", "const", "continue", "default", "do", "double", "else", "enum",
    "extern", "float", "for", "goto", "if", "inline", "int", "long", "register", "restrict", "return",
    "short", "signed", "sizeof", "static", "struct", "switch", "typedef", "union", "unsigned", "void",
    "volatile", "while", "_Bool", "_Complex", "_Imaginary",
];

pub(crate) fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
        && !C_KEYWORDS.contains(&s)
}

/// Decimal literal valid for any int32 value, including `INT32_MIN`.
pub(crate) fn i32_lit(v: i32) -> String {
    if v == i32::MIN {
        "(-2147483647 - 1)".to_string()
    } else {
        v.to_string()
    }
}

/// Comma-separated initializer body, `per_line` values per line.
pub(crate) fn initializer<T: ToString>(values: &[T], per_line: usize, indent: &str) -> String {
    let mut s = String::new();
    for (i, chunk) in values.chunks(per_line).enumerate() {
        if i > 0 {
            s.push('\n');
        }
        s.push_str(indent);
        let parts: Vec<String> = chunk.iter().map(ToString::to_string).collect();
        let _ = write!(s, "{}", parts.join(", "));
        s.push(',');
    }
    s
}

/// Inline helpers placed in the bundle header. They reproduce the simulator's
/// dual-MAC, single-MAC, padded load and requantization arithmetic.
pub(crate) fn helpers(p: &str) -> String {
    format!(
        r#"/* Two signed 16x16 products: high halfword of w times x plus low halfword times y. */
static inline int32_t {p}_smlad(int32_t acc, int32_t w, int32_t x, int32_t y)
{{
    int32_t lo = (int32_t)((uint32_t)w & 0xFFFFu);
    int32_t hi = (w - lo) / 65536;
    if (lo >= 0x8000) {{
        lo -= 0x10000;
    }}
    return acc + hi * x + lo * y;
}}

static inline int32_t {p}_smla(int32_t acc, int32_t w, int32_t x)
{{
    return acc + w * x;
}}

/* Offset-adjusted activation; positions outside the input read as zero. */
static inline int16_t {p}_ld(const int8_t *in, int y, int x, int c, int h, int w, int ch, int32_t offset)
{{
    if (y < 0 || x < 0 || y >= h || x >= w) {{
        return 0;
    }}
    return (int16_t)((int32_t)in[(y * w + x) * ch + c] + offset);
}}

/* clamp(zp + round(acc * mult / 2^shift), lo, hi), rounding half away from zero. */
static inline int8_t {p}_requant(int32_t acc, int32_t mult, int shift, int32_t zp, int32_t lo, int32_t hi)
{{
    int64_t prod = (int64_t)acc * (int64_t)mult;
    uint64_t mag = prod < 0 ? (uint64_t)0 - (uint64_t)prod : (uint64_t)prod;
    int64_t r;
    mag = (mag + ((uint64_t)1 << (shift - 1))) >> shift;
    r = prod < 0 ? -(int64_t)mag : (int64_t)mag;
    r += zp;
    if (r < lo) {{
        r = lo;
    }}
    if (r > hi) {{
        r = hi;
    }}
    return (int8_t)r;
}}
"#
    )
}
