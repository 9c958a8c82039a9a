//! Branch weights from a pre-fuzz run and the energy budget derived from them.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::cfg::BranchId;
use crate::corpus::SeedQueue;
use crate::depgraph::SequenceTemplate;
use crate::opcode::{disassemble, Opcode};
use crate::package::ContractPackage;
use crate::vm::{self, TxInput, TxTrace};
use crate::word::Word;

pub const W2_CONST: u64 = 4;
pub const REFUND_NEW: u64 = 2;

const VULNERABLE: [Opcode; 10] = [
    Opcode::Call,
    Opcode::DelegateCall,
    Opcode::Timestamp,
    Opcode::Number,
    Opcode::Balance,
    Opcode::SelfDestruct,
    Opcode::Origin,
    Opcode::Add,
    Opcode::Sub,
    Opcode::Mul,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct VulnerableInstLoc {
    pub pc: usize,
    pub kind: Opcode,
}

pub fn vulnerable_instructions(pkg: &ContractPackage) -> Vec<VulnerableInstLoc> {
    disassemble(&pkg.bytecode)
        .into_iter()
        .filter_map(|(pc, i)| i.map(|i| (pc, i.op)))
        .filter(|(_, op)| VULNERABLE.contains(op))
        .map(|(pc, kind)| VulnerableInstLoc { pc, kind })
        .collect()
}

/// Instructions reachable from `block` in the CFG, ignoring conditions.
pub fn prefix_inference(pkg: &ContractPackage, block: usize) -> BTreeSet<usize> {
    pkg.cfg.reachable_pcs(block)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct BranchWeight {
    pub nested_score: u64,
    pub w1: u64,
    pub w2: u64,
    pub allocated_energy: u64,
    pub spent_energy: u64,
}

impl BranchWeight {
    pub fn share(&self) -> u64 {
        1 + self.w1 + self.w2
    }

    pub fn remaining(&self) -> u64 {
        self.allocated_energy - self.spent_energy
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BranchWeightTable {
    pub entries: BTreeMap<BranchId, BranchWeight>,
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct Row<'a> {
    branch_id: String,
    #[serde(flatten)]
    weight: &'a BranchWeight,
}

impl BranchWeightTable {
    /// Every branch of the package at weight zero.
    pub fn zeroed(pkg: &ContractPackage) -> BranchWeightTable {
        BranchWeightTable {
            entries: pkg.cfg.branches().into_iter().map(|b| (b, BranchWeight::default())).collect(),
        }
    }

    pub fn weight(&self, b: &BranchId) -> u64 {
        self.entries.get(b).map_or(0, |w| w.w1 + w.w2)
    }

    pub fn total_allocated(&self) -> u64 {
        self.entries.values().map(|w| w.allocated_energy).sum()
    }

    pub fn to_json(&self) -> String {
        let rows: Vec<Row> = self
            .entries
            .iter()
            .map(|(b, w)| Row {
                branch_id: b.to_string(),
                weight: w,
            })
            .collect();
        serde_json::to_string_pretty(&rows).expect("table serializes")
    }
}

/// Zero arguments, one wei to payable functions, the deployer for the
/// constructor and the second account for everything else.
pub fn prefuzz_seed(pkg: &ContractPackage, template: &SequenceTemplate, cfg: &vm::VmConfig) -> Vec<TxInput> {
    let deployer = cfg.accounts.first().copied().unwrap_or_else(vm::owner_address);
    let other = cfg.accounts.get(1).copied().unwrap_or(deployer);
    template
        .calls
        .iter()
        .filter_map(|name| pkg.function(name))
        .map(|f| TxInput {
            function: f.name.clone(),
            sender: if f.is_constructor { deployer } else { other },
            value: Word::from(f.payable as u8),
            args: vec![Word::ZERO; f.params.len()],
        })
        .collect()
}

/// Weights every branch of `pkg` from the path in `traces`.
///
/// The nesting score counts every `JUMPI` passed so far along the path;
/// both arms of a `JUMPI` get the largest score seen at it. The
/// vulnerability weight comes from condition-blind reachability, so arms
/// the path never took are weighted too.
pub fn branch_weighted(
    pkg: &ContractPackage,
    traces: &[TxTrace],
    inst_locs: &[VulnerableInstLoc],
    w2_const: u64,
) -> BranchWeightTable {
    let mut table = BranchWeightTable::zeroed(pkg);
    let mut nested_score = 0u64;
    let mut at_jumpi: BTreeMap<usize, u64> = BTreeMap::new();
    for t in traces {
        for e in &t.branch_events {
            nested_score += 1;
            let s = at_jumpi.entry(e.branch_id.src()).or_default();
            *s = (*s).max(nested_score);
        }
    }
    let locs: BTreeSet<usize> = inst_locs.iter().map(|l| l.pc).collect();
    for (b, w) in table.entries.iter_mut() {
        if let Some(s) = at_jumpi.get(&b.src()) {
            w.nested_score = *s;
            w.w1 = *s;
        }
        if prefix_inference(pkg, b.dst()).iter().any(|pc| locs.contains(pc)) {
            w.w2 = w2_const;
        }
    }
    table
}

/// Splits `budget` across branches in proportion to `1 + w1 + w2`.
///
/// Shares are floored and the remainder goes to the heaviest branch. If the
/// budget allows, branches left with nothing take one unit each from the
/// largest allocation.
pub fn allocate(table: &mut BranchWeightTable, budget: u64) {
    let total: u128 = table.entries.values().map(|w| w.share() as u128).sum();
    if total == 0 {
        return;
    }
    let mut given = 0u64;
    for w in table.entries.values_mut() {
        w.allocated_energy = (budget as u128 * w.share() as u128 / total) as u64;
        w.spent_energy = 0;
        given += w.allocated_energy;
    }
    let heaviest = *table
        .entries
        .iter()
        .rev()
        .max_by_key(|(_, w)| w.share())
        .map(|(b, _)| b)
        .expect("non-empty");
    table.entries.get_mut(&heaviest).unwrap().allocated_energy += budget - given;

    if budget >= table.entries.len() as u64 {
        let starved: Vec<BranchId> = table
            .entries
            .iter()
            .filter(|(_, w)| w.allocated_energy == 0)
            .map(|(b, _)| *b)
            .collect();
        for b in starved {
            let donor = *table
                .entries
                .iter()
                .rev()
                .max_by_key(|(_, w)| w.allocated_energy)
                .map(|(b, _)| b)
                .unwrap();
            table.entries.get_mut(&donor).unwrap().allocated_energy -= 1;
            table.entries.get_mut(&b).unwrap().allocated_energy = 1;
        }
    }
}

/// One unit per execution, `refund` back for new coverage, never above
/// `cap` unless already there.
pub fn update_energy(new_coverage: bool, energy: u64, refund: u64, cap: u64) -> u64 {
    let base = energy.saturating_sub(1);
    if new_coverage {
        (base + refund).min(cap.max(base))
    } else {
        base
    }
}

/// Seed ids, heaviest covered branch first, admission order on ties.
pub fn seed_priority(queue: &SeedQueue, table: &BranchWeightTable) -> Vec<u64> {
    let mut keyed: Vec<(u64, u64)> = queue
        .seeds
        .iter()
        .map(|s| (s.id, s.covered.iter().map(|b| table.weight(b)).max().unwrap_or(0)))
        .collect();
    keyed.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    keyed.into_iter().map(|(id, _)| id).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contracts;
    use crate::depgraph::{build_graph, order_sequence};
    use crate::frontend::compile_source;
    use crate::vm::{execute_fresh, VmConfig};

    fn table_of(shares: &[(u64, u64)]) -> BranchWeightTable {
        BranchWeightTable {
            entries: shares
                .iter()
                .enumerate()
                .map(|(i, (w1, w2))| {
                    (
                        BranchId(i, i + 1),
                        BranchWeight {
                            w1: *w1,
                            w2: *w2,
                            ..Default::default()
                        },
                    )
                })
                .collect(),
        }
    }

    fn allocation(t: &BranchWeightTable) -> Vec<u64> {
        t.entries.values().map(|w| w.allocated_energy).collect()
    }

    #[test]
    fn allocation_examples() {
        let mut t = table_of(&[(0, 0), (0, 0)]);
        allocate(&mut t, 10);
        assert_eq!(allocation(&t), [5, 5]);
        let mut t = table_of(&[(0, 0), (0, 4)]);
        allocate(&mut t, 12);
        assert_eq!(allocation(&t), [2, 10]);
        let mut t = table_of(&[(3, 4)]);
        allocate(&mut t, 17);
        assert_eq!(allocation(&t), [17]);
    }

    #[test]
    fn starved_branches_get_one_unit() {
        let mut t = table_of(&[(0, 0), (0, 0), (50, 4)]);
        allocate(&mut t, 20);
        assert!(allocation(&t).iter().all(|&a| a >= 1));
        assert_eq!(t.total_allocated(), 20);
    }

    #[test]
    fn energy_updates() {
        assert_eq!(update_energy(false, 5, 2, 100), 4);
        assert_eq!(update_energy(true, 5, 2, 6), 6);
        assert_eq!(update_energy(true, 5, 2, 100), 6);
        assert_eq!(update_energy(true, 6, 2, 6), 6);
        assert_eq!(update_energy(false, 1, 2, 6), 0);
    }

    #[test]
    fn guess_inner_arm_is_vulnerable() {
        let pkg = compile_source(contracts::GUESS_NUMBER).unwrap();
        let locs = vulnerable_instructions(&pkg);
        let table = branch_weighted(&pkg, &[], &locs, W2_CONST);
        let adds: Vec<usize> = pkg
            .pcs_at_line(11)
            .into_iter()
            .filter(|pc| pkg.bytecode[*pc] == Opcode::Add.to_byte())
            .collect();
        assert!(!adds.is_empty());
        let inner = pkg.cfg.block_of(adds[0]).unwrap().start;
        let arm = table.entries.keys().find(|b| b.dst() == inner).unwrap();
        assert_eq!(table.entries[arm].w2, W2_CONST);
    }

    #[test]
    fn nesting_score_counts_jumpis_along_the_path() {
        let pkg = compile_source(contracts::CROWDSALE).unwrap();
        let t = order_sequence(&build_graph(&pkg), &pkg.functions);
        let cfg = VmConfig::default();
        let seq = prefuzz_seed(&pkg, &t, &cfg);
        let exec = execute_fresh(&pkg, &cfg, &seq, 0).unwrap();
        let table = branch_weighted(&pkg, &exec.traces, &vulnerable_instructions(&pkg), W2_CONST);
        let mut scores: Vec<u64> = exec
            .traces
            .iter()
            .flat_map(|t| t.branch_events.iter())
            .map(|e| table.entries[&e.branch_id].nested_score)
            .collect();
        let n = scores.len() as u64;
        scores.dedup();
        assert_eq!(scores, (1..=n).collect::<Vec<_>>());
        // the line-31 send is reachable from withdraw's guard
        let send = pkg.pcs_at_line(31);
        let guard = exec.traces.last().unwrap().branch_events[0].branch_id.src();
        assert!(prefix_inference(&pkg, guard).iter().any(|pc| send.contains(pc)));
    }

    #[test]
    fn priority_prefers_heavier_seeds() {
        use crate::corpus::Seed;
        use std::sync::Arc;
        let t = table_of(&[(0, 0), (0, 4)]);
        let mut q = SeedQueue::new(t.entries.keys().copied().collect());
        let mut light = Seed::new(Arc::new(SequenceTemplate::default()), vec![], 0);
        light.covered.insert(BranchId(0, 1));
        let mut heavy = light.clone();
        heavy.covered = BTreeSet::from([BranchId(1, 2)]);
        q.select_seeds(vec![light, heavy]);
        assert_eq!(seed_priority(&q, &t), [1, 0]);
        assert!(seed_priority(&SeedQueue::new(BTreeSet::new()), &t).is_empty());
    }
}
