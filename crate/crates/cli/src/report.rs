//! Machine-readable report and its human-readable table.

use std::fmt::Write;

use ptxasw_core::pipeline::KernelStats;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub tool: &'static str,
    pub version: &'static str,
    /// SHA-256 of the input file, lowercase hex.
    pub input_sha256: String,
    pub kernels: Vec<KernelStats>,
}

impl Report {
    pub fn new(input: &[u8], kernels: Vec<KernelStats>) -> Report {
        Report {
            tool: "ptxasw",
            version: env!("CARGO_PKG_VERSION"),
            input_sha256: Sha256::digest(input).iter().fold(String::new(), |mut s, b| {
                let _ = write!(s, "{b:02x}");
                s
            }),
            kernels,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One row per kernel: shuffles over global loads and mean |N|.
    pub fn table(&self) -> String {
        let width = self.kernels.iter().map(|k| k.kernel.len()).max().unwrap_or(0).max(6);
        let mut s = format!("{:<width$}  {:>12}  {:>6}  {:>10}\n", "Kernel", "Shuffle/Load", "Delta", "Time (ms)");
        for k in &self.kernels {
            let ratio = format!("{} / {}", k.shuffles_emitted, k.loads_scanned);
            let delta = k.mean_abs_delta.map_or("-".to_string(), |d| format!("{d:.2}"));
            let _ = writeln!(s, "{:<width$}  {ratio:>12}  {delta:>6}  {:>10.1}", k.kernel, k.analysis_ms);
        }
        s
    }
}

/// JSON Schema of [`Report`].
pub fn schema() -> Value {
    let count = json!({ "type": "integer", "minimum": 0 });
    json!({
        "$schema": "https://json-schema.org/draft/2020-12/schema",
        "title": "ptxasw report",
        "type": "object",
        "required": ["tool", "version", "input_sha256", "kernels"],
        "properties": {
            "tool": { "type": "string" },
            "version": { "type": "string" },
            "input_sha256": { "type": "string", "pattern": "^[0-9a-f]{64}$" },
            "kernels": {
                "type": "array",
                "items": {
                    "type": "object",
                    "required": [
                        "kernel", "loads_scanned", "candidates", "shuffles_emitted", "movs_emitted",
                        "mode", "analysis_ms", "flows", "pruned_flows", "truncated_flows", "solver"
                    ],
                    "properties": {
                        "kernel": { "type": "string" },
                        "loads_scanned": count,
                        "candidates": count,
                        "shuffles_emitted": count,
                        "movs_emitted": count,
                        "mean_abs_delta": { "type": "number", "minimum": 1 },
                        "mode": { "enum": ["full", "no-load", "no-corner"] },
                        "analysis_ms": { "type": "number", "exclusiveMinimum": 0 },
                        "flows": count,
                        "pruned_flows": count,
                        "truncated_flows": count,
                        "solver": {
                            "type": "object",
                            "required": ["queries", "internal_decided", "external_calls", "external_decided", "unknown"],
                            "properties": {
                                "queries": count,
                                "internal_decided": count,
                                "external_calls": count,
                                "external_decided": count,
                                "unknown": count
                            }
                        }
                    }
                }
            }
        }
    })
}
