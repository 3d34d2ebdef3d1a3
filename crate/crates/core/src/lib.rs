//! Warp-shuffle synthesis for PTX kernels.

pub mod cfg;
pub mod emulator;
pub mod fixtures;
pub mod pipeline;
pub mod sim;
pub mod ptx;
pub mod solver;
pub mod symexpr;
pub mod synth;
