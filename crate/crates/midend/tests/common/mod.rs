//! Shared helpers for the integration suites: corpus loading, random CFG and
//! graph generators, and the independent oracles the derived expectations are
//! frozen against.

#![allow(dead_code)]

use midend::ir::*;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use std::path::PathBuf;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn corpus_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/corpus")
}

pub fn corpus_files() -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(corpus_dir())
        .expect("corpus dir")
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().map(|x| x == "ir").unwrap_or(false))
        .collect();
    v.sort();
    v
}

pub struct CorpusProgram {
    pub name: String,
    pub module: ModuleIR,
    pub inputs: Vec<Vec<i64>>,
}

pub fn load_corpus() -> Vec<CorpusProgram> {
    corpus_files()
        .into_iter()
        .map(|p| {
            let text = std::fs::read_to_string(&p).unwrap();
            let module = parse_module(&text)
                .unwrap_or_else(|e| panic!("{}: {}", p.display(), e));
            let diags = verify_module(&module);
            assert!(diags.is_empty(), "{}: {:?}", p.display(), diags);
            let mut inputs: Vec<Vec<i64>> = module
                .metadata_values("args")
                .map(|t| {
                    if t.trim().is_empty() {
                        Vec::new()
                    } else {
                        t.split(',').map(|x| x.trim().parse::<i64>().unwrap()).collect()
                    }
                })
                .collect();
            if inputs.is_empty() {
                inputs.push(Vec::new());
            }
            CorpusProgram {
                name: p.file_stem().unwrap().to_string_lossy().to_string(),
                module,
                inputs,
            }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// random generators
// ---------------------------------------------------------------------------

/// A random single-function module whose CFG has `n` reachable blocks.
/// Terminators are br/brcond/ret over trivially-dominating values, so every
/// module verifies.
pub fn random_cfg_module(seed: u64, max_blocks: usize) -> ModuleIR {
    let mut r = rng(seed);
    let n = r.gen_range(2..=max_blocks.max(2));
    // block 0 is the entry (never a branch target); block i gets a spanning
    // edge from an earlier block with successor room, so everything stays
    // reachable and no block exceeds two successors
    let mut succs: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 1..n {
        let candidates: Vec<usize> = (0..i).filter(|&j| succs[j].len() < 2).collect();
        let j = candidates[r.gen_range(0..candidates.len())];
        succs[j].push(i);
    }
    // sprinkle extra edges (including back edges) where there is room
    for _ in 0..n {
        let b = r.gen_range(0..n);
        if succs[b].len() < 2 {
            let t = r.gen_range(1..n);
            succs[b].push(t);
        }
    }
    // emit text
    let mut src = String::from("func @main(%x: i64) -> i64 {\n");
    for b in 0..n {
        src.push_str(&format!("b{}:\n", b));
        src.push_str(&format!("  %v{} = add %x, {}\n", b, b));
        match succs[b].len() {
            0 => src.push_str(&format!("  ret %v{}\n", b)),
            1 => src.push_str(&format!("  br b{}\n", succs[b][0])),
            _ => {
                src.push_str(&format!("  %c{} = slt %v{}, {}\n", b, b, r.gen_range(-5..50)));
                src.push_str(&format!("  brcond %c{}, b{}, b{}\n", b, succs[b][0], succs[b][1]));
            }
        }
    }
    src.push_str("}\n");
    let m = parse_module(&src).unwrap();
    // unreachable blocks cannot occur (spanning wiring), but a block that
    // only falls on a cycle may make verify reject nothing; double-check
    debug_assert!(verify_module(&m).is_empty(), "{}", src);
    m
}

/// Random directed graph as an edge list over n nodes.
pub fn random_digraph(seed: u64, n: usize, extra_edges: usize) -> Vec<(usize, usize)> {
    let mut r = rng(seed);
    let mut edges = Vec::new();
    for _ in 0..extra_edges {
        let a = r.gen_range(0..n);
        let b = r.gen_range(0..n);
        edges.push((a, b));
    }
    edges.sort();
    edges.dedup();
    edges
}

// ---------------------------------------------------------------------------
// oracles
// ---------------------------------------------------------------------------

/// Naive iterative dominator fixpoint by set intersection, O(V^2 E).
pub fn naive_dominators(n: usize, preds: &[Vec<usize>], entry: usize) -> Vec<Option<usize>> {
    let full: Vec<bool> = vec![true; n];
    let mut dom: Vec<Vec<bool>> = vec![full; n];
    dom[entry] = vec![false; n];
    dom[entry][entry] = true;
    let mut changed = true;
    while changed {
        changed = false;
        for b in 0..n {
            if b == entry {
                continue;
            }
            let mut acc: Option<Vec<bool>> = None;
            for &p in &preds[b] {
                acc = Some(match acc {
                    None => dom[p].clone(),
                    Some(a) => a.iter().zip(&dom[p]).map(|(x, y)| *x && *y).collect(),
                });
            }
            let mut next = acc.unwrap_or_else(|| vec![false; n]);
            next[b] = true;
            if next != dom[b] {
                dom[b] = next;
                changed = true;
            }
        }
    }
    // immediate dominator: the strict dominator dominated by all others
    let mut idom = vec![None; n];
    for b in 0..n {
        if b == entry {
            continue;
        }
        let strict: Vec<usize> = (0..n).filter(|&d| d != b && dom[b][d]).collect();
        idom[b] = strict
            .iter()
            .copied()
            .find(|&d| strict.iter().all(|&o| o == d || dom[d][o]));
    }
    idom
}

/// Mutual-reachability partition: the brute-force SCC oracle.
pub fn brute_scc_partition(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<usize>> {
    let mut reach = vec![vec![false; n]; n];
    for &(a, b) in edges {
        reach[a][b] = true;
    }
    for k in 0..n {
        for i in 0..n {
            if reach[i][k] {
                for j in 0..n {
                    if reach[k][j] {
                        reach[i][j] = true;
                    }
                }
            }
        }
    }
    let mut comp = vec![usize::MAX; n];
    let mut next = 0;
    for v in 0..n {
        if comp[v] != usize::MAX {
            continue;
        }
        comp[v] = next;
        for w in v + 1..n {
            if comp[w] == usize::MAX && reach[v][w] && reach[w][v] {
                comp[w] = next;
            }
        }
        next += 1;
    }
    let mut out = vec![Vec::new(); next];
    for v in 0..n {
        out[comp[v]].push(v);
    }
    out
}

/// Union-find connected components (island oracle).
pub fn union_find_components(n: usize, edges: &[(usize, usize)]) -> Vec<usize> {
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut Vec<usize>, x: usize) -> usize {
        if p[x] != x {
            let r = find(p, p[x]);
            p[x] = r;
        }
        p[x]
    }
    for &(a, b) in edges {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra] = rb;
        }
    }
    (0..n).map(|x| find(&mut parent, x)).collect()
}
