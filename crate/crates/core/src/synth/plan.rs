use std::collections::{BTreeMap, HashSet};

use super::{Edit, Mode, ShuffleCandidate, SynthesisPlan};

/// Lanes of a full warp whose partner at distance `delta` lies outside the warp.
fn corner_lanes(delta: i32) -> u32 {
    delta.unsigned_abs().min(32)
}

/// Greedy selection in program order. A load is never both a source and a
/// destination, so every shuffle reads a value that was loaded from memory.
pub fn select_plan(kernel: &str, candidates: &[ShuffleCandidate], mode: Mode) -> SynthesisPlan {
    let mut by_dst: BTreeMap<usize, Vec<&ShuffleCandidate>> = BTreeMap::new();
    for c in candidates {
        by_dst.entry(c.dst_index).or_default().push(c);
    }
    let mut sources: HashSet<usize> = HashSet::new();
    let mut dests: HashSet<usize> = HashSet::new();
    let mut edits = Vec::new();
    for (d, group) in by_dst {
        if sources.contains(&d) {
            continue;
        }
        let best = group
            .into_iter()
            .filter(|c| !dests.contains(&c.src_index))
            .min_by_key(|c| {
                (
                    corner_lanes(c.delta),
                    c.delta > 0,
                    !sources.contains(&c.src_index),
                    c.src_index,
                )
            });
        if let Some(c) = best {
            sources.insert(c.src_index);
            dests.insert(d);
            edits.push(Edit {
                dst: c.dst,
                src: c.src,
                dst_index: d,
                src_index: c.src_index,
                delta: c.delta,
            });
        }
    }
    SynthesisPlan {
        kernel: kernel.to_string(),
        mode,
        edits,
    }
}
