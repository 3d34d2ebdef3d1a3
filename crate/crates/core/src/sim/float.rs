//! IEEE-754 semantics for the float opcodes the simulator accepts.

/// Result bits of a float arithmetic opcode on `ty` (32 or 64 bits), or `None`
/// when the opcode is not modelled.
pub(super) fn arith(op: &str, bits: u8, a: &[u64]) -> Option<u64> {
    if bits == 32 {
        let x: Vec<f32> = a.iter().map(|&b| f32::from_bits(b as u32)).collect();
        let r = match (op, x.len()) {
            ("add", 2) => x[0] + x[1],
            ("sub", 2) => x[0] - x[1],
            ("mul", 2) => x[0] * x[1],
            ("div", 2) => x[0] / x[1],
            ("fma" | "mad", 3) => x[0].mul_add(x[1], x[2]),
            ("min", 2) => x[0].min(x[1]),
            ("max", 2) => x[0].max(x[1]),
            ("neg", 1) => -x[0],
            ("abs", 1) => x[0].abs(),
            ("sqrt", 1) => x[0].sqrt(),
            ("rcp", 1) => 1.0 / x[0],
            ("rsqrt", 1) => 1.0 / x[0].sqrt(),
            _ => return None,
        };
        Some(r.to_bits() as u64)
    } else {
        let x: Vec<f64> = a.iter().map(|&b| f64::from_bits(b)).collect();
        let r = match (op, x.len()) {
            ("add", 2) => x[0] + x[1],
            ("sub", 2) => x[0] - x[1],
            ("mul", 2) => x[0] * x[1],
            ("div", 2) => x[0] / x[1],
            ("fma" | "mad", 3) => x[0].mul_add(x[1], x[2]),
            ("min", 2) => x[0].min(x[1]),
            ("max", 2) => x[0].max(x[1]),
            ("neg", 1) => -x[0],
            ("abs", 1) => x[0].abs(),
            ("sqrt", 1) => x[0].sqrt(),
            ("rcp", 1) => 1.0 / x[0],
            ("rsqrt", 1) => 1.0 / x[0].sqrt(),
            _ => return None,
        };
        Some(r.to_bits())
    }
}

fn as_f64(bits: u64, width: u8) -> f64 {
    if width == 32 {
        f32::from_bits(bits as u32) as f64
    } else {
        f64::from_bits(bits)
    }
}

/// Float comparison for `setp`; unordered variants end in `u`.
pub(super) fn compare(cmp: &str, width: u8, a: u64, b: u64) -> Option<bool> {
    let (x, y) = (as_f64(a, width), as_f64(b, width));
    let unordered = x.is_nan() || y.is_nan();
    Some(match cmp {
        "eq" => !unordered && x == y,
        "ne" => !unordered && x != y,
        "lt" => !unordered && x < y,
        "le" => !unordered && x <= y,
        "gt" => !unordered && x > y,
        "ge" => !unordered && x >= y,
        "equ" => unordered || x == y,
        "neu" => unordered || x != y,
        "ltu" => unordered || x < y,
        "leu" => unordered || x <= y,
        "gtu" => unordered || x > y,
        "geu" => unordered || x >= y,
        "num" => !unordered,
        "nan" => unordered,
        _ => return None,
    })
}

/// Convert a float of `sw` bits to a float of `dw` bits (round to nearest).
pub(super) fn float_to_float(v: u64, sw: u8, dw: u8) -> u64 {
    let x = as_f64(v, sw);
    if dw == 32 {
        (x as f32).to_bits() as u64
    } else {
        x.to_bits()
    }
}

/// Integer to float, rounding to nearest.
pub(super) fn int_to_float(v: u64, signed: bool, dw: u8) -> u64 {
    match (signed, dw) {
        (true, 32) => (v as i64 as f32).to_bits() as u64,
        (true, _) => (v as i64 as f64).to_bits(),
        (false, 32) => (v as f32).to_bits() as u64,
        (false, _) => (v as f64).to_bits(),
    }
}

/// Float to integer with the given rounding option, saturating; NaN becomes 0.
pub(super) fn float_to_int(v: u64, sw: u8, rnd: &str, signed: bool, dw: u8) -> u64 {
    let x = as_f64(v, sw);
    if x.is_nan() {
        return 0;
    }
    let r = match rnd {
        "rni" => x.round_ties_even(),
        "rmi" => x.floor(),
        "rpi" => x.ceil(),
        _ => x.trunc(),
    };
    let mask = if dw == 64 { u64::MAX } else { (1u64 << dw) - 1 };
    if signed {
        let lo = -(2f64.powi(dw as i32 - 1));
        let hi = 2f64.powi(dw as i32 - 1) - 1.0;
        (r.clamp(lo, hi) as i64 as u64) & mask
    } else {
        let hi = 2f64.powi(dw as i32) - 1.0;
        (r.clamp(0.0, hi) as u64) & mask
    }
}
