//! Dominators, post-dominators (with a synthesized virtual exit), and
//! dominance frontiers, via the iterative algorithm of Cooper, Harvey, and
//! Kennedy over (reverse) post-order.

use super::*;
use std::collections::{BTreeMap, BTreeSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Post,
}

/// Block-level CFG of one function, indexed by block position.
#[derive(Debug, Clone)]
pub struct Cfg {
    pub n: usize,
    pub succs: Vec<Vec<usize>>,
    pub preds: Vec<Vec<usize>>,
}

impl Cfg {
    pub fn of(f: &FunctionIR) -> Cfg {
        let n = f.blocks.len();
        let mut succs = vec![Vec::new(); n];
        let mut preds = vec![Vec::new(); n];
        for (bi, b) in f.blocks.iter().enumerate() {
            for lbl in b.successor_labels() {
                let ti = f.block_index(lbl).expect("verified label");
                succs[bi].push(ti);
                preds[ti].push(bi);
            }
        }
        Cfg { n, succs, preds }
    }

    /// Post-order over the graph from `entry` following `succs`.
    pub fn postorder(&self, entry: usize) -> Vec<usize> {
        let mut seen = vec![false; self.n];
        let mut order = Vec::new();
        // iterative DFS with explicit edge cursor
        let mut stack: Vec<(usize, usize)> = vec![(entry, 0)];
        seen[entry] = true;
        while let Some(&mut (b, ref mut cursor)) = stack.last_mut() {
            if *cursor < self.succs[b].len() {
                let s = self.succs[b][*cursor];
                *cursor += 1;
                if !seen[s] {
                    seen[s] = true;
                    stack.push((s, 0));
                }
            } else {
                order.push(b);
                stack.pop();
            }
        }
        order
    }

    /// Transitive reachability via >= 1 edge, as bitsets per block.
    pub fn reach_closure(&self) -> Vec<Vec<bool>> {
        let mut reach = vec![vec![false; self.n]; self.n];
        for b in 0..self.n {
            // BFS from each block
            let mut stack: Vec<usize> = self.succs[b].clone();
            while let Some(x) = stack.pop() {
                if !reach[b][x] {
                    reach[b][x] = true;
                    stack.extend(self.succs[x].iter().copied());
                }
            }
        }
        reach
    }
}

#[derive(Debug, Clone)]
pub struct DominatorInfo {
    pub direction: Direction,
    /// Immediate dominator per block; absent for the entry (forward) and for
    /// blocks whose immediate post-dominator is the virtual exit (post).
    pub idom: BTreeMap<BlockId, BlockId>,
    pub frontier: BTreeMap<BlockId, BTreeSet<BlockId>>,
    /// Block ids in function order, for index mapping.
    blocks: Vec<BlockId>,
}

impl DominatorInfo {
    /// Does `a` dominate `b` (reflexively)? For post direction this is
    /// post-dominance.
    pub fn dominates(&self, a: BlockId, b: BlockId) -> bool {
        let mut cur = b;
        loop {
            if cur == a {
                return true;
            }
            match self.idom.get(&cur) {
                Some(&up) => cur = up,
                None => return false,
            }
        }
    }

    pub fn blocks(&self) -> &[BlockId] {
        &self.blocks
    }
}

/// Internal solver over an arbitrary rooted graph given as preds + an RPO.
fn idom_fixpoint(n: usize, root: usize, preds: &[Vec<usize>], rpo: &[usize]) -> Vec<Option<usize>> {
    let mut rpo_num = vec![usize::MAX; n];
    for (k, &b) in rpo.iter().enumerate() {
        rpo_num[b] = k;
    }
    let mut idom: Vec<Option<usize>> = vec![None; n];
    idom[root] = Some(root);
    let intersect = |idom: &[Option<usize>], mut a: usize, mut b: usize| {
        while a != b {
            while rpo_num[a] > rpo_num[b] {
                a = idom[a].expect("processed");
            }
            while rpo_num[b] > rpo_num[a] {
                b = idom[b].expect("processed");
            }
        }
        a
    };
    let mut changed = true;
    while changed {
        changed = false;
        for &b in rpo.iter().skip(1) {
            let mut new_idom: Option<usize> = None;
            for &p in &preds[b] {
                if idom[p].is_none() {
                    continue;
                }
                new_idom = Some(match new_idom {
                    None => p,
                    Some(cur) => intersect(&idom, cur, p),
                });
            }
            if new_idom.is_some() && idom[b] != new_idom {
                idom[b] = new_idom;
                changed = true;
            }
        }
    }
    idom[root] = None;
    idom
}

fn frontiers(n: usize, preds: &[Vec<usize>], idom: &[Option<usize>], root: usize) -> Vec<BTreeSet<usize>> {
    let mut df = vec![BTreeSet::new(); n];
    for b in 0..n {
        if b != root && idom[b].is_none() {
            continue; // unreachable
        }
        if preds[b].len() >= 2 {
            for &p in &preds[b] {
                let mut runner = p;
                loop {
                    if Some(runner) == idom[b] || (idom[b].is_none() && runner == root) {
                        break;
                    }
                    df[runner].insert(b);
                    match idom[runner] {
                        Some(up) => runner = up,
                        None => break,
                    }
                }
            }
        }
    }
    df
}

/// Strongly connected components of the CFG (Tarjan), used to find exit-free
/// cycles for virtual-exit synthesis.
fn cfg_sccs(cfg: &Cfg) -> Vec<Vec<usize>> {
    struct St<'a> {
        cfg: &'a Cfg,
        index: usize,
        idx: Vec<Option<usize>>,
        low: Vec<usize>,
        on: Vec<bool>,
        stack: Vec<usize>,
        out: Vec<Vec<usize>>,
    }
    fn go(v: usize, st: &mut St) {
        st.idx[v] = Some(st.index);
        st.low[v] = st.index;
        st.index += 1;
        st.stack.push(v);
        st.on[v] = true;
        for &w in &st.cfg.succs[v].clone() {
            if st.idx[w].is_none() {
                go(w, st);
                st.low[v] = st.low[v].min(st.low[w]);
            } else if st.on[w] {
                st.low[v] = st.low[v].min(st.idx[w].unwrap());
            }
        }
        if st.low[v] == st.idx[v].unwrap() {
            let mut comp = Vec::new();
            loop {
                let w = st.stack.pop().unwrap();
                st.on[w] = false;
                comp.push(w);
                if w == v {
                    break;
                }
            }
            st.out.push(comp);
        }
    }
    let mut st = St {
        cfg,
        index: 0,
        idx: vec![None; cfg.n],
        low: vec![0; cfg.n],
        on: vec![false; cfg.n],
        stack: Vec::new(),
        out: Vec::new(),
    };
    for v in 0..cfg.n {
        if st.idx[v].is_none() {
            go(v, &mut st);
        }
    }
    st.out
}

/// Compute dominators or post-dominators of a verified function.
///
/// For the post direction a virtual exit node is synthesized with edges from
/// every ret block and, for every exit-free cycle, from its lowest-id block.
pub fn compute_dominators(f: &FunctionIR, direction: Direction) -> DominatorInfo {
    let cfg = Cfg::of(f);
    let n = cfg.n;
    let blocks: Vec<BlockId> = f.blocks.iter().map(|b| b.id).collect();

    let (idom_raw, df_raw) = match direction {
        Direction::Forward => {
            let po = cfg.postorder(0);
            let rpo: Vec<usize> = po.into_iter().rev().collect();
            let idom = idom_fixpoint(n, 0, &cfg.preds, &rpo);
            let df = frontiers(n, &cfg.preds, &idom, 0);
            (idom, df)
        }
        Direction::Post => {
            // build the reversed graph with virtual exit at index n
            let vx = n;
            let mut fwd_succs: Vec<Vec<usize>> = cfg.succs.clone();
            fwd_succs.push(Vec::new());
            let ret_blocks: Vec<usize> = f
                .blocks
                .iter()
                .enumerate()
                .filter(|(_, b)| b.terminator().op == Opcode::Ret)
                .map(|(i, _)| i)
                .collect();
            for &r in &ret_blocks {
                fwd_succs[r].push(vx);
            }
            // exit-free cycles: cyclic SCCs that cannot reach any ret block
            let mut reaches_ret = vec![false; n + 1];
            {
                let mut stack = ret_blocks.clone();
                for &r in &ret_blocks {
                    reaches_ret[r] = true;
                }
                while let Some(b) = stack.pop() {
                    for p in 0..n {
                        if cfg.succs[p].contains(&b) && !reaches_ret[p] {
                            reaches_ret[p] = true;
                            stack.push(p);
                        }
                    }
                }
            }
            for comp in cfg_sccs(&cfg) {
                let cyclic = comp.len() > 1
                    || cfg.succs[comp[0]].contains(&comp[0]);
                if cyclic && comp.iter().all(|&b| !reaches_ret[b]) {
                    let designated = *comp.iter().min().unwrap();
                    fwd_succs[designated].push(vx);
                }
            }
            // reversed edges
            let m = n + 1;
            let mut rsuccs = vec![Vec::new(); m];
            let mut rpreds = vec![Vec::new(); m];
            for (b, ss) in fwd_succs.iter().enumerate() {
                for &s in ss {
                    rsuccs[s].push(b);
                    rpreds[b].push(s);
                }
            }
            let rcfg = Cfg { n: m, succs: rsuccs, preds: rpreds };
            let po = rcfg.postorder(vx);
            let rpo: Vec<usize> = po.into_iter().rev().collect();
            let idom = idom_fixpoint(m, vx, &rcfg.preds, &rpo);
            let df = frontiers(m, &rcfg.preds, &idom, vx);
            let mut idom_out: Vec<Option<usize>> = idom[..n].to_vec();
            for e in idom_out.iter_mut() {
                if *e == Some(vx) {
                    *e = None;
                }
            }
            let df_out: Vec<BTreeSet<usize>> = df[..n]
                .iter()
                .map(|s| s.iter().copied().filter(|&x| x < n).collect())
                .collect();
            (idom_out, df_out)
        }
    };

    let mut idom = BTreeMap::new();
    for (b, d) in idom_raw.iter().enumerate() {
        if let Some(d) = d {
            idom.insert(blocks[b], blocks[*d]);
        }
    }
    let mut frontier = BTreeMap::new();
    for (b, s) in df_raw.iter().enumerate() {
        frontier.insert(blocks[b], s.iter().map(|&x| blocks[x]).collect());
    }
    DominatorInfo { direction, idom, frontier, blocks }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::parse_module;

    #[test]
    fn straight_line_chain() {
        let m = parse_module(
            "func @main() -> i64 { bb0: br bb1\nbb1: br bb2\nbb2: ret 0 }",
        )
        .unwrap();
        let f = &m.functions[0];
        let d = compute_dominators(f, Direction::Forward);
        let b = |i: usize| f.blocks[i].id;
        assert_eq!(d.idom.get(&b(2)), Some(&b(1)));
        assert_eq!(d.idom.get(&b(1)), Some(&b(0)));
        assert_eq!(d.idom.get(&b(0)), None);
    }

    #[test]
    fn diamond_frontier() {
        let m = parse_module(
            "func @main(%c: i1) -> i64 {
bb0:
  brcond %c, bb1, bb2
bb1:
  br bb3
bb2:
  br bb3
bb3:
  ret 0
}",
        )
        .unwrap();
        let f = &m.functions[0];
        let d = compute_dominators(f, Direction::Forward);
        let b = |i: usize| f.blocks[i].id;
        assert_eq!(d.frontier[&b(1)], [b(3)].into_iter().collect());
        assert_eq!(d.idom.get(&b(3)), Some(&b(0)));
        // post-dominance: join post-dominates everything
        let pd = compute_dominators(f, Direction::Post);
        assert!(pd.dominates(b(3), b(0)));
        assert!(!pd.dominates(b(1), b(0)));
    }

    #[test]
    fn infinite_loop_gets_virtual_exit_edge() {
        let m = parse_module(
            "func @main() -> i64 { bb0: br bb1\nbb1: br bb2\nbb2: br bb1 }",
        )
        .unwrap();
        let f = &m.functions[0];
        let pd = compute_dominators(f, Direction::Post);
        // the designated block (lowest id of the cycle) is bb1; bb0's
        // immediate post-dominator chain must reach it
        assert!(pd.dominates(f.blocks[1].id, f.blocks[0].id));
    }
}
