//! Control-flow graph over a kernel body: basic blocks, dominators,
//! post-dominators, natural loops and register liveness.

use std::collections::{BTreeSet, HashMap};

use crate::ptx::{Instruction, Kernel, Statement};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    /// Body index of the first statement.
    pub start: usize,
    /// One past the last statement.
    pub end: usize,
    pub succs: Vec<usize>,
    pub preds: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Loop {
    pub header: usize,
    /// Blocks of the natural loop, header included.
    pub blocks: BTreeSet<usize>,
    /// Innermost enclosing loop.
    pub parent: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct Cfg {
    pub blocks: Vec<Block>,
    /// Block containing each body index.
    pub block_of: Vec<usize>,
    /// Immediate dominator; the entry block is its own.
    pub idom: Vec<usize>,
    /// Immediate post-dominator; `None` means the virtual exit.
    pub ipdom: Vec<Option<usize>>,
    pub loops: Vec<Loop>,
    /// Registers live on entry to each block.
    pub live_in: Vec<BTreeSet<String>>,
    /// Registers live on exit from each block.
    pub live_out: Vec<BTreeSet<String>>,
    rpo: Vec<usize>,
}

impl Cfg {
    pub fn build(k: &Kernel) -> Cfg {
        let body = &k.body;
        let n = body.len();
        let mut leader = vec![false; n.max(1)];
        if n > 0 {
            leader[0] = true;
        }
        for (i, s) in body.iter().enumerate() {
            match s {
                Statement::Label(_) => leader[i] = true,
                Statement::Instruction(inst) if (inst.is_branch() || inst.is_exit())
                    && i + 1 < n => {
                        leader[i + 1] = true;
                    }
                _ => {}
            }
        }
        let mut blocks = Vec::new();
        let mut block_of = vec![0; n];
        let mut start = 0;
        for i in 0..n {
            if i > start && leader[i] {
                blocks.push(Block {
                    start,
                    end: i,
                    succs: Vec::new(),
                    preds: Vec::new(),
                });
                start = i;
            }
            block_of[i] = blocks.len();
        }
        if n > 0 {
            blocks.push(Block {
                start,
                end: n,
                succs: Vec::new(),
                preds: Vec::new(),
            });
        }
        let labels: HashMap<&str, usize> = body
            .iter()
            .enumerate()
            .filter_map(|(i, s)| match s {
                Statement::Label(l) => Some((l.as_str(), i)),
                _ => None,
            })
            .collect();
        let nb = blocks.len();
        for b in 0..nb {
            let last = body[blocks[b].start..blocks[b].end]
                .iter()
                .rev()
                .find_map(Statement::as_instruction);
            let mut succs = Vec::new();
            let fall = (b + 1 < nb).then_some(b + 1);
            match last {
                Some(inst) if inst.is_exit() && inst.guard.is_none() => {}
                Some(inst) if inst.is_branch() => {
                    if let Some(t) = inst.branch_target().and_then(|l| labels.get(l)) {
                        succs.push(block_of[*t]);
                    }
                    if inst.guard.is_some() {
                        succs.extend(fall);
                    }
                }
                _ => succs.extend(fall),
            }
            succs.dedup();
            for &s in &succs {
                blocks[s].preds.push(b);
            }
            blocks[b].succs = succs;
        }
        let mut cfg = Cfg {
            blocks,
            block_of,
            idom: Vec::new(),
            ipdom: Vec::new(),
            loops: Vec::new(),
            live_in: Vec::new(),
            live_out: Vec::new(),
            rpo: Vec::new(),
        };
        cfg.compute_dominators();
        cfg.compute_post_dominators();
        cfg.compute_loops();
        cfg.compute_liveness(k);
        cfg
    }

    fn compute_dominators(&mut self) {
        let nb = self.blocks.len();
        if nb == 0 {
            return;
        }
        let mut seen = vec![false; nb];
        let mut post = Vec::new();
        let mut stack = vec![(0usize, 0usize)];
        seen[0] = true;
        while let Some((b, i)) = stack.pop() {
            if i < self.blocks[b].succs.len() {
                stack.push((b, i + 1));
                let s = self.blocks[b].succs[i];
                if !seen[s] {
                    seen[s] = true;
                    stack.push((s, 0));
                }
            } else {
                post.push(b);
            }
        }
        self.rpo = post.into_iter().rev().collect();
        let order: Vec<usize> = {
            let mut o = vec![usize::MAX; nb];
            for (i, &b) in self.rpo.iter().enumerate() {
                o[b] = i;
            }
            o
        };
        let preds: Vec<Vec<usize>> = self.blocks.iter().map(|b| b.preds.clone()).collect();
        self.idom = iterative_idom(nb, 0, &self.rpo, &order, &preds);
    }

    fn compute_post_dominators(&mut self) {
        let nb = self.blocks.len();
        // Reverse graph with a virtual exit node `nb`.
        let exit = nb;
        let mut rpreds: Vec<Vec<usize>> = vec![Vec::new(); nb + 1];
        let mut rsuccs: Vec<Vec<usize>> = vec![Vec::new(); nb + 1];
        for (b, blk) in self.blocks.iter().enumerate() {
            if blk.succs.is_empty() {
                rsuccs[exit].push(b);
                rpreds[b].push(exit);
            }
            for &s in &blk.succs {
                rsuccs[s].push(b);
                rpreds[b].push(s);
            }
        }
        let mut seen = vec![false; nb + 1];
        let mut post = Vec::new();
        let mut stack = vec![(exit, 0usize)];
        seen[exit] = true;
        while let Some((b, i)) = stack.pop() {
            if i < rsuccs[b].len() {
                stack.push((b, i + 1));
                let s = rsuccs[b][i];
                if !seen[s] {
                    seen[s] = true;
                    stack.push((s, 0));
                }
            } else {
                post.push(b);
            }
        }
        let rpo: Vec<usize> = post.into_iter().rev().collect();
        let mut order = vec![usize::MAX; nb + 1];
        for (i, &b) in rpo.iter().enumerate() {
            order[b] = i;
        }
        let ip = iterative_idom(nb + 1, exit, &rpo, &order, &rpreds);
        self.ipdom = (0..nb)
            .map(|b| {
                let d = ip[b];
                (d != exit && d != usize::MAX).then_some(d)
            })
            .collect();
    }

    fn compute_loops(&mut self) {
        let mut by_header: HashMap<usize, BTreeSet<usize>> = HashMap::new();
        for (u, blk) in self.blocks.iter().enumerate() {
            for &h in &blk.succs {
                if self.dominates(h, u) {
                    let body = by_header.entry(h).or_insert_with(|| BTreeSet::from([h]));
                    let mut stack = vec![u];
                    while let Some(x) = stack.pop() {
                        if body.insert(x) {
                            stack.extend(self.blocks[x].preds.iter().copied());
                        }
                    }
                }
            }
        }
        let mut loops: Vec<Loop> = by_header
            .into_iter()
            .map(|(header, blocks)| Loop {
                header,
                blocks,
                parent: None,
            })
            .collect();
        loops.sort_by_key(|l| self.blocks[l.header].start);
        for i in 0..loops.len() {
            let parent = (0..loops.len())
                .filter(|&j| {
                    j != i
                        && loops[j].blocks.len() > loops[i].blocks.len()
                        && loops[j].blocks.is_superset(&loops[i].blocks)
                })
                .min_by_key(|&j| loops[j].blocks.len());
            loops[i].parent = parent;
        }
        self.loops = loops;
    }

    fn compute_liveness(&mut self, k: &Kernel) {
        let nb = self.blocks.len();
        let mut uses: Vec<BTreeSet<String>> = vec![BTreeSet::new(); nb];
        let mut defs: Vec<BTreeSet<String>> = vec![BTreeSet::new(); nb];
        for (b, blk) in self.blocks.iter().enumerate() {
            for s in &k.body[blk.start..blk.end] {
                let Some(inst) = s.as_instruction() else {
                    continue;
                };
                for u in reads(inst) {
                    if !defs[b].contains(u) {
                        uses[b].insert(u.to_string());
                    }
                }
                if inst.guard.is_none() {
                    for d in inst.defs() {
                        defs[b].insert(d.to_string());
                    }
                }
            }
        }
        let mut live_in: Vec<BTreeSet<String>> = vec![BTreeSet::new(); nb];
        let mut live_out: Vec<BTreeSet<String>> = vec![BTreeSet::new(); nb];
        let mut changed = true;
        while changed {
            changed = false;
            for b in (0..nb).rev() {
                let mut out = BTreeSet::new();
                for &s in &self.blocks[b].succs {
                    out.extend(live_in[s].iter().cloned());
                }
                let mut inn = uses[b].clone();
                inn.extend(out.iter().filter(|r| !defs[b].contains(*r)).cloned());
                if inn != live_in[b] || out != live_out[b] {
                    live_in[b] = inn;
                    live_out[b] = out;
                    changed = true;
                }
            }
        }
        self.live_in = live_in;
        self.live_out = live_out;
    }

    /// Whether block `a` dominates block `b`. Unreachable blocks are dominated by nothing.
    pub fn dominates(&self, a: usize, b: usize) -> bool {
        let mut x = b;
        if self.idom.get(x).copied() == Some(usize::MAX) {
            return false;
        }
        loop {
            if x == a {
                return true;
            }
            let d = self.idom[x];
            if d == x || d == usize::MAX {
                return false;
            }
            x = d;
        }
    }

    pub fn post_dominates(&self, a: usize, b: usize) -> bool {
        let mut x = Some(b);
        while let Some(y) = x {
            if y == a {
                return true;
            }
            x = self.ipdom[y];
        }
        false
    }

    /// Statement-level dominance: body index `a` executes before `b` on every path to `b`.
    pub fn stmt_dominates(&self, a: usize, b: usize) -> bool {
        let (ba, bb) = (self.block_of[a], self.block_of[b]);
        if ba == bb {
            a <= b
        } else {
            self.dominates(ba, bb)
        }
    }

    /// Innermost loop containing block `b`.
    pub fn innermost_loop(&self, b: usize) -> Option<usize> {
        (0..self.loops.len())
            .filter(|&l| self.loops[l].blocks.contains(&b))
            .min_by_key(|&l| self.loops[l].blocks.len())
    }

    /// Loop whose header is block `b`.
    pub fn loop_at_header(&self, b: usize) -> Option<usize> {
        self.loops.iter().position(|l| l.header == b)
    }

    /// Blocks reachable from `from` (inclusive).
    pub fn reachable_from(&self, from: usize) -> BTreeSet<usize> {
        let mut seen = BTreeSet::new();
        let mut stack = vec![from];
        while let Some(b) = stack.pop() {
            if seen.insert(b) {
                stack.extend(self.blocks[b].succs.iter().copied());
            }
        }
        seen
    }

    /// Body index where execution reconverges after the block containing `idx`,
    /// or `None` for kernel exit.
    pub fn reconvergence_point(&self, idx: usize) -> Option<usize> {
        self.ipdom[self.block_of[idx]].map(|b| self.blocks[b].start)
    }
}

/// Registers an instruction reads, counting the old value of a guarded destination.
pub fn reads(inst: &Instruction) -> Vec<&str> {
    let mut r = inst.uses();
    if inst.guard.is_some() {
        r.extend(inst.defs());
    }
    r
}

/// Cooper-Harvey-Kennedy iterative immediate dominators. Unreachable nodes get `usize::MAX`.
fn iterative_idom(
    n: usize,
    entry: usize,
    rpo: &[usize],
    order: &[usize],
    preds: &[Vec<usize>],
) -> Vec<usize> {
    let mut idom = vec![usize::MAX; n];
    idom[entry] = entry;
    let mut changed = true;
    while changed {
        changed = false;
        for &b in rpo.iter().skip(1) {
            let mut new: Option<usize> = None;
            for &p in &preds[b] {
                if idom[p] == usize::MAX {
                    continue;
                }
                new = Some(match new {
                    None => p,
                    Some(q) => {
                        let (mut x, mut y) = (p, q);
                        while x != y {
                            while order[x] > order[y] {
                                x = idom[x];
                            }
                            while order[y] > order[x] {
                                y = idom[y];
                            }
                        }
                        x
                    }
                });
            }
            if let Some(d) = new {
                if idom[b] != d {
                    idom[b] = d;
                    changed = true;
                }
            }
        }
    }
    idom
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::ptx::parse_module;

    fn cfg_of(src: &str) -> (Kernel, Cfg) {
        let k = parse_module(src).unwrap().kernels.remove(0);
        let c = Cfg::build(&k);
        (k, c)
    }

    #[test]
    fn jacobi_has_one_loop() {
        let (k, c) = cfg_of(fixtures::JACOBI);
        assert_eq!(c.loops.len(), 1);
        let header = c.loops[0].header;
        let start = c.blocks[header].start;
        assert_eq!(k.body[start], Statement::Label("$L__LOOP".into()));
        // The loop body reads the row stride defined before it.
        assert!(c.live_in[header].contains("%rd11"));
        assert!(c.live_in[header].contains("%rd13"));
        assert!(!c.live_in[header].contains("%f4"));
    }

    #[test]
    fn nested_loops_have_parents() {
        let (_, c) = cfg_of(fixtures::LAPLACIAN);
        assert_eq!(c.loops.len(), 2);
        let outer = c.loops.iter().position(|l| l.parent.is_none()).unwrap();
        let inner = 1 - outer;
        assert_eq!(c.loops[inner].parent, Some(outer));
        assert!(c.loops[outer].blocks.is_superset(&c.loops[inner].blocks));
    }

    #[test]
    fn divergent_branch_reconverges_at_join() {
        let (k, c) = cfg_of(fixtures::GAMEOFLIFE);
        let bra = k
            .body
            .iter()
            .position(|s| {
                s.as_instruction()
                    .is_some_and(|i| i.branch_target() == Some("$L__DEAD"))
            })
            .unwrap();
        let join = c.reconvergence_point(bra).unwrap();
        assert_eq!(k.body[join], Statement::Label("$L__NEXT".into()));
        let exit_bra = k
            .body
            .iter()
            .position(|s| s.as_instruction().is_some_and(|i| i.branch_target() == Some("$L__EXIT")))
            .unwrap();
        let j = c.reconvergence_point(exit_bra).unwrap();
        assert_eq!(k.body[j], Statement::Label("$L__EXIT".into()));
    }

    #[test]
    fn dominance_in_straight_line_code() {
        let (k, c) = cfg_of(fixtures::ADD);
        let loads: Vec<usize> = k
            .body
            .iter()
            .enumerate()
            .filter(|(_, s)| s.as_instruction().is_some_and(|i| i.is_global_load()))
            .map(|(i, _)| i)
            .collect();
        assert_eq!(loads.len(), 3);
        assert!(c.stmt_dominates(loads[0], loads[1]));
        assert!(c.stmt_dominates(loads[1], loads[2]));
        assert!(!c.stmt_dominates(loads[2], loads[1]));
        assert!(c.loops.is_empty());
    }
}
