//! Bundled PTX kernels used by tests, benches and the CLI self-checks.

use std::fmt::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ptx::{Kernel, ScalarType};
use crate::sim::{BufferInit, Dim3, Workload};

pub const ADD: &str = include_str!("../fixtures/add.ptx");
pub const VECADD: &str = include_str!("../fixtures/vecadd.ptx");
pub const SHFL: &str = include_str!("../fixtures/shfl.ptx");
pub const JACOBI: &str = include_str!("../fixtures/jacobi.ptx");
pub const GAMEOFLIFE: &str = include_str!("../fixtures/gameoflife.ptx");
pub const LAPLACIAN: &str = include_str!("../fixtures/stencil3d.ptx");
pub const BLUR1D: &str = include_str!("../fixtures/blur1d.ptx");
/// Hand-written kernel already containing a predicated shuffle sequence.
pub const SHUFFLED: &str = include_str!("../fixtures/shuffled.ptx");

/// Malformed inputs with the 1-based line each error must point at.
pub const MALFORMED: &[(&str, &str, u32)] = &[
    ("missing_semicolon", include_str!("../fixtures/malformed/missing_semicolon.ptx"), 8),
    ("undeclared_register", include_str!("../fixtures/malformed/undeclared_register.ptx"), 9),
    ("unknown_label", include_str!("../fixtures/malformed/unknown_label.ptx"), 11),
    ("bad_address", include_str!("../fixtures/malformed/bad_address.ptx"), 10),
];

pub const ALL: &[(&str, &str)] = &[
    ("add", ADD),
    ("vecadd", VECADD),
    ("shfl", SHFL),
    ("jacobi", JACOBI),
    ("gameoflife", GAMEOFLIFE),
    ("laplacian", LAPLACIAN),
    ("blur1d", BLUR1D),
];

/// A straight-line-heavy kernel with `groups` windows of five overlapping loads
/// and two data-dependent branches. `groups = 48` gives roughly 500 statements.
pub fn large_kernel(groups: usize) -> String {
    let mut s = String::new();
    s.push_str(".version 7.6\n.target sm_70\n.address_size 64\n\n");
    s.push_str(".visible .entry large(\n\t.param .u64 out,\n\t.param .u64 in,\n\t.param .u32 n\n)\n{\n");
    let _ = writeln!(s, "\t.reg .pred \t%p<4>;");
    let _ = writeln!(s, "\t.reg .b32 \t%r<6>;");
    let _ = writeln!(s, "\t.reg .b64 \t%rd<12>;");
    let _ = writeln!(s, "\t.reg .f32 \t%f<{}>;\n", groups * 10 + 4);
    s.push_str(concat!(
        "\tld.param.u64 \t%rd1, [out];\n",
        "\tld.param.u64 \t%rd2, [in];\n",
        "\tld.param.u32 \t%r1, [n];\n",
        "\tmov.u32 \t%r2, %ctaid.x;\n",
        "\tmov.u32 \t%r3, %ntid.x;\n",
        "\tmov.u32 \t%r4, %tid.x;\n",
        "\tmul.wide.u32 \t%rd3, %r2, %r3;\n",
        "\tcvt.u64.u32 \t%rd4, %r4;\n",
        "\tadd.s64 \t%rd5, %rd3, %rd4;\n",
        "\tcvt.u64.u32 \t%rd6, %r1;\n",
        "\tsetp.ge.u64 \t%p1, %rd5, %rd6;\n",
        "\t@%p1 bra \t$L__EXIT;\n",
        "\tcvta.to.global.u64 \t%rd7, %rd2;\n",
        "\tshl.b64 \t%rd8, %rd5, 2;\n",
        "\tadd.s64 \t%rd9, %rd7, %rd8;\n",
        "\tmov.f32 \t%f0, 0f00000000;\n",
    ));
    let mut acc = 0usize;
    for g in 0..groups {
        let base = g * 10 + 1;
        for k in 0..5 {
            let off = 4 * (g * 2 + k);
            let _ = writeln!(s, "\tld.global.f32 \t%f{}, [%rd9+{}];", base + k, off);
        }
        for k in 0..5 {
            let dst = base + 5 + k;
            let _ = writeln!(s, "\tadd.f32 \t%f{dst}, %f{acc}, %f{};", base + k);
            acc = dst;
        }
        if g == groups / 3 || g == 2 * groups / 3 {
            let p = if g == groups / 3 { 2 } else { 3 };
            let _ = writeln!(s, "\tsetp.gt.f32 \t%p{p}, %f{acc}, 0f00000000;");
            let _ = writeln!(s, "\t@%p{p} bra \t$L__SKIP{g};");
            let _ = writeln!(s, "\tneg.f32 \t%f{acc}, %f{acc};");
            let _ = writeln!(s, "$L__SKIP{g}:");
        }
    }
    s.push_str(concat!(
        "\tcvta.to.global.u64 \t%rd10, %rd1;\n",
        "\tadd.s64 \t%rd11, %rd10, %rd8;\n",
    ));
    let _ = writeln!(s, "\tst.global.f32 \t[%rd11], %f{acc};");
    s.push_str("$L__EXIT:\n\tret;\n}\n");
    s
}

/// Differential-testing launch for a fixture kernel: every buffer random,
/// grids small enough to simulate quickly. Integer scalars size the data to
/// the launch (`ny`, `nz` short; everything else one past the thread count
/// plus a halo). Any `f` flag buffer holds 0/1 words so warps diverge, and the
/// game-of-life input holds 0/1 cells so neighbour counts reach the rule.
pub fn workload(k: &Kernel, grid: Dim3, block: Dim3, seed: u64) -> Workload {
    let mut w = Workload::new(grid, block);
    let extent = grid.x as u64 * block.x as u64 + 2;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (i, p) in k.params.iter().enumerate() {
        let bits = match p.ty {
            ScalarType::F32 => Some((0.25f32 * (i as f32 + 1.0)).to_bits() as u64),
            ScalarType::F64 => Some((0.25f64 * (i as f64 + 1.0)).to_bits()),
            t if t.bits() == 64 => None,
            _ => Some(match p.name.as_str() {
                "ny" => 6,
                "nz" => 4,
                _ => extent,
            }),
        };
        match bits {
            Some(b) => w = w.scalar(&p.name, b),
            None if p.name == "f" || (k.name == "gameoflife" && p.name == "in") => {
                let words: Vec<u8> = (0..8 * extent)
                    .flat_map(|_| (rng.gen::<bool>() as u32).to_le_bytes())
                    .collect();
                w = w.buffer(&p.name, BufferInit::Bytes(words));
            }
            None => w = w.buffer(&p.name, BufferInit::Random(seed.wrapping_mul(31).wrapping_add(i as u64))),
        }
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ptx::parse_module;

    #[test]
    fn large_kernel_size() {
        let m = parse_module(&large_kernel(48)).unwrap();
        let n = m.kernels[0].instructions().count();
        assert!((480..=560).contains(&n), "{n}");
    }
}
