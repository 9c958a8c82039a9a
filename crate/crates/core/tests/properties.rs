use std::collections::BTreeSet;

use num_bigint::BigUint;
use proptest::collection::{btree_set, vec};
use proptest::prelude::*;
use statefuzz::cfg::BranchId;
use statefuzz::contracts;
use statefuzz::depgraph::{order_sequence, DependencyGraph};
use statefuzz::energy::{allocate, update_energy, BranchWeight, BranchWeightTable};
use statefuzz::frontend::compile_source;
use statefuzz::maskmut::{canonicalize, mutate, ok_to_mutate, Kind, Mutation, MutationMask, KINDS};
use statefuzz::package::FunctionAbi;
use statefuzz::vm::{decode_stream, encode_stream, TxInput};
use statefuzz::word::{abs_diff, Word};

fn kind() -> impl Strategy<Value = Kind> {
    prop::sample::select(KINDS.to_vec())
}

fn word() -> impl Strategy<Value = Word> {
    prop::array::uniform32(any::<u8>()).prop_map(Word::from_be_bytes)
}

fn big(w: &Word) -> BigUint {
    BigUint::from_bytes_be(&w.to_be_bytes::<32>())
}

/// A stream and an in-bounds mutation of it.
fn stream_and_mutation() -> impl Strategy<Value = (Vec<u8>, Mutation)> {
    (vec(any::<u8>(), 1..200), kind(), any::<prop::sample::Index>(), 1usize..40, vec(any::<u8>(), 40))
        .prop_map(|(t, x, at, n, bytes)| {
            let i = at.index(t.len());
            let n = if x == Kind::I { n } else { n.min(t.len() - i) };
            let payload = if x == Kind::D { Vec::new() } else { bytes[..n].to_vec() };
            (t, Mutation { x, n, i, payload })
        })
}

proptest! {
    #[test]
    fn mutants_keep_their_length((t, m) in stream_and_mutation()) {
        let out = canonicalize(mutate(&t, &m).unwrap(), t.len());
        prop_assert_eq!(out.len(), t.len());
        // bytes before the anchor never change
        prop_assert_eq!(&out[..m.i], &t[..m.i]);
    }

    #[test]
    fn out_of_range_mutations_are_refused(t in vec(any::<u8>(), 0..50), extra in 1usize..10) {
        let m = Mutation::delete(t.len(), extra);
        prop_assert!(mutate(&t, &m).is_err());
    }

    #[test]
    fn full_and_empty_masks((t, m) in stream_and_mutation()) {
        let len = t.len() + m.n;
        prop_assert!(ok_to_mutate(&MutationMask::full(len), &m));
        prop_assert!(!ok_to_mutate(&MutationMask::empty(len), &m));
    }

    #[test]
    fn mask_check_is_per_position(
        len in 1usize..64,
        allowed in btree_set((0usize..64, 0usize..4), 0..200),
        x in kind(),
        i in 0usize..64,
        n in 1usize..8,
    ) {
        let mut mask = MutationMask::empty(len);
        for &(p, k) in &allowed {
            if p < len {
                mask.insert(p, KINDS[k]);
            }
        }
        let m = Mutation { x, n, i, payload: Vec::new() };
        let expect = (i..i + n).all(|j| j < len && mask.kinds(j).contains(&x));
        prop_assert_eq!(ok_to_mutate(&mask, &m), expect);
    }

    #[test]
    fn allocation_sums_to_budget(
        weights in vec((0u64..50, prop::bool::ANY), 1..60),
        budget in 0u64..1_000_000,
    ) {
        let mut t = BranchWeightTable::default();
        for (k, (w1, vuln)) in weights.iter().enumerate() {
            t.entries.insert(BranchId(k, k + 1), BranchWeight { w1: *w1, w2: if *vuln { 4 } else { 0 }, ..BranchWeight::default() });
        }
        allocate(&mut t, budget);
        prop_assert_eq!(t.entries.values().map(|w| w.allocated_energy).sum::<u64>(), budget);
        if budget >= weights.len() as u64 {
            prop_assert!(t.entries.values().all(|w| w.allocated_energy >= 1));
        }
        prop_assert!(t.entries.values().all(|w| w.spent_energy == 0));
    }

    #[test]
    fn energy_update_is_bounded(e in 0u64..1000, refund in 0u64..10, cap in 0u64..1000, new in any::<bool>()) {
        let next = update_energy(new, e, refund, cap);
        prop_assert!(next <= e.saturating_sub(1).max(cap));
        if !new {
            prop_assert_eq!(next, e.saturating_sub(1));
        }
    }

    #[test]
    fn abs_diff_matches_bigint(a in word(), b in word()) {
        let (x, y) = (big(&a), big(&b));
        let want = if x > y { &x - &y } else { &y - &x };
        prop_assert_eq!(big(&abs_diff(a, b)), want);
        prop_assert_eq!(abs_diff(a, b), abs_diff(b, a));
    }

    #[test]
    fn streams_round_trip(txs in vec((word(), word(), vec(word(), 0..3)), 0..6)) {
        let pkg = compile_source(contracts::CROWDSALE).unwrap();
        // invest takes one argument; the rest take none
        let names = ["invest", "refund", "withdraw"];
        let inputs: Vec<TxInput> = txs
            .into_iter()
            .enumerate()
            .map(|(k, (sender, value, args))| {
                let f = names[k % 3];
                let arity = pkg.function(f).unwrap().params.len();
                TxInput { function: f.into(), sender, value, args: args.into_iter().chain(std::iter::repeat(Word::ZERO)).take(arity).collect() }
            })
            .collect();
        let calls: Vec<String> = inputs.iter().map(|t| t.function.clone()).collect();
        let stream = encode_stream(&inputs);
        prop_assert_eq!(decode_stream(&pkg, &calls, &stream), inputs);
    }

    #[test]
    fn writers_precede_acyclic_readers(
        facts in vec((btree_set(0usize..4, 0..3), btree_set(0usize..4, 0..3)), 1..7),
    ) {
        let mut g = DependencyGraph::default();
        let mut abi = vec![FunctionAbi { name: "constructor".into(), params: vec![], payable: false, entry_offset: 0, is_constructor: true }];
        for (k, (w, r)) in facts.iter().enumerate() {
            let f = format!("f{k}");
            let names = |s: &BTreeSet<usize>| s.iter().map(|v| format!("v{v}")).collect::<BTreeSet<_>>();
            if !w.is_empty() { g.writes.insert(f.clone(), names(w)); }
            if !r.is_empty() { g.reads.insert(f.clone(), names(r)); }
            abi.push(FunctionAbi { name: f, params: vec![], payable: false, entry_offset: 0, is_constructor: false });
        }
        let t = order_sequence(&g, &abi);
        let n = facts.len();
        let edge = |a: usize, b: usize| a != b && !facts[a].0.is_disjoint(&facts[b].1);
        let mut reach: Vec<Vec<bool>> = (0..n).map(|a| (0..n).map(|b| edge(a, b)).collect()).collect();
        for k in 0..n { for a in 0..n { for b in 0..n { if reach[a][k] && reach[k][b] { reach[a][b] = true; } } } }
        let pos = |k: usize| t.calls.iter().position(|c| *c == format!("f{k}"));
        for a in 0..n {
            for b in 0..n {
                if edge(a, b) && !reach[b][a] {
                    prop_assert!(pos(a).unwrap() < pos(b).unwrap(), "f{} after f{} in {:?}", a, b, t.calls);
                }
            }
            // stateless functions are left out, stateful ones appear once
            let stateful = !facts[a].0.is_empty() || !facts[a].1.is_empty();
            let count = t.calls.iter().filter(|c| **c == format!("f{a}")).count();
            prop_assert_eq!(count, usize::from(stateful));
        }
    }
}
