//! Packing two int8 weights into one 32-bit constant and the dual MAC that consumes it.

use axkern::qinfer::{dual_mac, pack_weight_pair};

fn main() {
    let (w1, w2) = (64i8, 20i8);
    let packed = pack_weight_pair(w1, w2);
    println!("pack({w1}, {w2}) = {packed} (0x{packed:08x})");

    let (a1, a2) = (3i16, -7i16);
    let acc = dual_mac(100, packed, a1, a2);
    println!("100 + {w1}*{a1} + {w2}*{a2} = {acc}");

    for (w1, w2) in [(-1i8, -1i8), (-128, 127), (127, -128), (0, -94)] {
        let p = pack_weight_pair(w1, w2);
        println!("pack({w1:>4}, {w2:>4}) = {p:>11}  high {:>4}  low {:>4}", p >> 16, p as i16);
    }
}
