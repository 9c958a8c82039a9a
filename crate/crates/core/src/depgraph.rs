//! State-variable dependency graph and transaction-sequence templates.
//!
//! A function that writes a variable another function reads should run
//! first. A function that reads and writes a branch-tested variable can
//! advance the state by running again, so it gets duplicated.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::package::{AccessKind, ContractPackage, FunctionAbi};

pub const DEFAULT_MAX_DUP: usize = 3;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DependencyGraph {
    pub writes: BTreeMap<String, BTreeSet<String>>,
    pub reads: BTreeMap<String, BTreeSet<String>>,
    pub branch_reads: BTreeMap<String, BTreeSet<String>>,
    pub raw_self: BTreeSet<(String, String)>,
}

impl DependencyGraph {
    fn set<'a>(m: &'a BTreeMap<String, BTreeSet<String>>, f: &str) -> Option<&'a BTreeSet<String>> {
        m.get(f)
    }

    pub fn writes_of(&self, f: &str) -> impl Iterator<Item = &String> {
        Self::set(&self.writes, f).into_iter().flatten()
    }

    pub fn reads_var(&self, f: &str, v: &str) -> bool {
        Self::set(&self.reads, f).is_some_and(|s| s.contains(v))
    }

    /// True if `f` writes some variable `h` reads.
    pub fn feeds(&self, f: &str, h: &str) -> bool {
        self.writes_of(f).any(|v| self.reads_var(h, v))
    }

    pub fn is_stateful(&self, f: &str) -> bool {
        self.writes.contains_key(f) || self.reads.contains_key(f)
    }

    pub fn raw_vars<'a>(&'a self, f: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.raw_self
            .iter()
            .filter(move |(g, _)| g == f)
            .map(|(_, v)| v.as_str())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("graph serializes")
    }
}

/// Derives the graph from the package's access facts.
pub fn build_graph(pkg: &ContractPackage) -> DependencyGraph {
    let mut g = DependencyGraph::default();
    for fact in &pkg.access_facts {
        let (f, v) = (fact.function.clone(), fact.state_var.clone());
        match fact.kind {
            AccessKind::Read => {
                g.reads.entry(f).or_default().insert(v);
            }
            AccessKind::Write => {
                g.writes.entry(f).or_default().insert(v);
            }
            AccessKind::ReadInBranchCondition => {
                g.branch_reads.entry(f).or_default().insert(v);
            }
            AccessKind::RawSelfDependency => {
                g.raw_self.insert((f, v));
            }
        }
    }
    g
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SequenceTemplate {
    pub calls: Vec<String>,
    /// Indices of calls added by [`mutate_sequence`] or [`revisit_readers`].
    pub duplicated_at: BTreeSet<usize>,
}

impl SequenceTemplate {
    fn insert(&mut self, at: usize, f: String) {
        self.calls.insert(at, f);
        self.duplicated_at = self
            .duplicated_at
            .iter()
            .map(|&i| if i >= at { i + 1 } else { i })
            .collect();
        self.duplicated_at.insert(at);
    }
}

/// Constructor first, then every stateful function so that writers precede
/// their readers. Functions on a common dependency cycle keep declaration
/// order relative to each other, as do otherwise unconstrained functions.
pub fn order_sequence(g: &DependencyGraph, abi: &[FunctionAbi]) -> SequenceTemplate {
    let mut calls = Vec::new();
    if let Some(c) = abi.iter().find(|f| f.is_constructor) {
        calls.push(c.name.clone());
    }
    let fns: Vec<&str> = abi
        .iter()
        .filter(|f| !f.is_constructor && g.is_stateful(&f.name))
        .map(|f| f.name.as_str())
        .collect();
    let n = fns.len();
    let adj: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).filter(|&j| j != i && g.feeds(fns[i], fns[j])).collect())
        .collect();

    let comp = strongly_connected(&adj);
    let ncomp = comp.iter().copied().max().map_or(0, |m| m + 1);
    // members in declaration order; a component's rank is its first member
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); ncomp];
    for (i, &c) in comp.iter().enumerate() {
        members[c].push(i);
    }
    let mut indeg = vec![0usize; ncomp];
    let mut cadj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); ncomp];
    for i in 0..n {
        for &j in &adj[i] {
            if comp[i] != comp[j] && cadj[comp[i]].insert(comp[j]) {
                indeg[comp[j]] += 1;
            }
        }
    }
    let mut ready: BTreeSet<(usize, usize)> = (0..ncomp)
        .filter(|&c| indeg[c] == 0)
        .map(|c| (members[c][0], c))
        .collect();
    while let Some((_, c)) = ready.pop_first() {
        for &i in &members[c] {
            calls.push(fns[i].to_string());
        }
        for &d in &cadj[c] {
            indeg[d] -= 1;
            if indeg[d] == 0 {
                ready.insert((members[d][0], d));
            }
        }
    }
    SequenceTemplate {
        calls,
        duplicated_at: BTreeSet::new(),
    }
}

/// Tarjan's algorithm; returns the component index of every node.
fn strongly_connected(adj: &[Vec<usize>]) -> Vec<usize> {
    struct St<'a> {
        adj: &'a [Vec<usize>],
        index: Vec<Option<usize>>,
        low: Vec<usize>,
        on: Vec<bool>,
        stack: Vec<usize>,
        comp: Vec<usize>,
        next: usize,
        ncomp: usize,
    }
    fn visit(s: &mut St, v: usize) {
        s.index[v] = Some(s.next);
        s.low[v] = s.next;
        s.next += 1;
        s.stack.push(v);
        s.on[v] = true;
        for k in 0..s.adj[v].len() {
            let w = s.adj[v][k];
            match s.index[w] {
                None => {
                    visit(s, w);
                    s.low[v] = s.low[v].min(s.low[w]);
                }
                Some(iw) if s.on[w] => s.low[v] = s.low[v].min(iw),
                _ => {}
            }
        }
        if Some(s.low[v]) == s.index[v] {
            loop {
                let w = s.stack.pop().expect("node on stack");
                s.on[w] = false;
                s.comp[w] = s.ncomp;
                if w == v {
                    break;
                }
            }
            s.ncomp += 1;
        }
    }
    let n = adj.len();
    let mut s = St {
        adj,
        index: vec![None; n],
        low: vec![0; n],
        on: vec![false; n],
        stack: Vec::new(),
        comp: vec![0; n],
        next: 0,
        ncomp: 0,
    };
    for v in 0..n {
        if s.index[v].is_none() {
            visit(&mut s, v);
        }
    }
    s.comp
}

/// Duplicates every function with a read-after-write dependency on a
/// branch-tested variable: one more call, placed right before the first
/// later call (after the function's last occurrence) that reads the
/// variable, or at the end. A function never appears more than `max_dup`
/// times.
pub fn mutate_sequence(t: &SequenceTemplate, g: &DependencyGraph, max_dup: usize) -> SequenceTemplate {
    let mut out = t.clone();
    let mut seen = BTreeSet::new();
    let order: Vec<String> = t
        .calls
        .iter()
        .skip(1)
        .filter(|f| seen.insert(f.as_str()))
        .cloned()
        .collect();
    for f in order {
        let vars: Vec<&str> = g
            .raw_vars(&f)
            .filter(|v| g.branch_reads.values().any(|s| s.contains(*v)))
            .collect();
        if vars.is_empty() {
            continue;
        }
        if out.calls.iter().filter(|c| **c == f).count() >= max_dup {
            continue;
        }
        let last = out.calls.iter().rposition(|c| *c == f).expect("f is in the template");
        let at = (last + 1..out.calls.len())
            .find(|&i| {
                let h = &out.calls[i];
                *h != f && vars.iter().any(|v| g.reads_var(h, v))
            })
            .unwrap_or(out.calls.len());
        out.insert(at, f);
    }
    out
}

/// After each duplicated call, re-runs the earlier readers of what it
/// writes that do not already run later, so they observe the advanced state.
pub fn revisit_readers(t: &SequenceTemplate, g: &DependencyGraph) -> SequenceTemplate {
    let mut out = t.clone();
    let dups: Vec<String> = t.duplicated_at.iter().map(|&i| t.calls[i].clone()).collect();
    for f in dups {
        let Some(d) = out.calls.iter().rposition(|c| *c == f) else {
            continue;
        };
        let mut seen = BTreeSet::new();
        let readers: Vec<String> = out.calls[1..d]
            .iter()
            .filter(|h| **h != f && seen.insert(h.as_str()))
            .filter(|h| g.feeds(&f, h))
            .filter(|h| !out.calls[d + 1..].contains(h))
            .cloned()
            .collect();
        for (k, h) in readers.into_iter().enumerate() {
            out.insert(d + 1 + k, h);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contracts;
    use crate::frontend::compile_source;

    fn crowdsale() -> (ContractPackage, DependencyGraph) {
        let pkg = compile_source(contracts::CROWDSALE).unwrap();
        let g = build_graph(&pkg);
        (pkg, g)
    }

    #[test]
    fn crowdsale_graph() {
        let (_, g) = crowdsale();
        let w: Vec<_> = g.writes["invest"].iter().map(String::as_str).collect();
        assert_eq!(w, ["invested", "invests", "phase"]);
        assert!(g.reads["withdraw"].contains("phase"));
        assert!(g.reads["withdraw"].contains("invested"));
    }

    #[test]
    fn crowdsale_order_and_mutation() {
        let (pkg, g) = crowdsale();
        let s = order_sequence(&g, &pkg.functions);
        assert_eq!(s.calls, ["constructor", "invest", "refund", "withdraw"]);
        let m = mutate_sequence(&s, &g, DEFAULT_MAX_DUP);
        assert_eq!(m.calls, ["constructor", "invest", "refund", "invest", "withdraw"]);
        assert_eq!(m.duplicated_at, BTreeSet::from([3]));
        let r = revisit_readers(&m, &g);
        assert_eq!(
            r.calls,
            ["constructor", "invest", "refund", "invest", "refund", "withdraw"]
        );
    }

    #[test]
    fn stateless_contract_has_empty_graph() {
        let pkg = compile_source(contracts::STATELESS).unwrap();
        let g = build_graph(&pkg);
        assert_eq!(g, DependencyGraph::default());
        assert_eq!(order_sequence(&g, &pkg.functions).calls, ["constructor"]);
    }

    #[test]
    fn branch_reader_is_recorded() {
        let src = "contract C { uint256 v; fn f() { v = 1; } fn g() { if (v == 1) { revert; } } }";
        let g = build_graph(&compile_source(src).unwrap());
        assert_eq!(g.branch_reads["g"], BTreeSet::from(["v".to_string()]));
    }

    #[test]
    fn independent_functions_keep_declaration_order() {
        let src = "contract C { uint256 a; uint256 b; fn g() { b = 1; } fn f() { a = 1; } }";
        let pkg = compile_source(src).unwrap();
        let t = order_sequence(&build_graph(&pkg), &pkg.functions);
        assert_eq!(t.calls, ["constructor", "g", "f"]);
    }

    #[test]
    fn two_cycle_falls_back_to_declaration_order() {
        // h writes w read by f, f writes v read by h
        let src = "contract C { uint256 v; uint256 w; \
                   fn h() { w = v; } fn f() { v = w; } }";
        let pkg = compile_source(src).unwrap();
        let g = build_graph(&pkg);
        assert!(g.feeds("f", "h") && g.feeds("h", "f"));
        let t = order_sequence(&g, &pkg.functions);
        assert_eq!(t.calls, ["constructor", "h", "f"]);
    }

    #[test]
    fn self_only_reader_is_appended() {
        let src = "contract C { uint256 v; uint256 x; \
                   fn f() { if (v < 3) { v += 1; } } fn g() { x = 1; } }";
        let pkg = compile_source(src).unwrap();
        let g = build_graph(&pkg);
        let t = order_sequence(&g, &pkg.functions);
        assert_eq!(t.calls, ["constructor", "f", "g"]);
        let m = mutate_sequence(&t, &g, DEFAULT_MAX_DUP);
        assert_eq!(m.calls, ["constructor", "f", "g", "f"]);
    }

    #[test]
    fn no_raw_means_no_change() {
        let src = "contract C { uint256 v; fn f() { v = 1; } fn g() { if (v == 1) { revert; } } }";
        let pkg = compile_source(src).unwrap();
        let g = build_graph(&pkg);
        let t = order_sequence(&g, &pkg.functions);
        assert_eq!(mutate_sequence(&t, &g, DEFAULT_MAX_DUP), t);
    }

    #[test]
    fn duplication_is_bounded() {
        let (pkg, g) = crowdsale();
        let mut t = order_sequence(&g, &pkg.functions);
        for _ in 0..10 {
            t = mutate_sequence(&t, &g, DEFAULT_MAX_DUP);
        }
        assert_eq!(t.calls.iter().filter(|c| *c == "invest").count(), DEFAULT_MAX_DUP);
    }
}
