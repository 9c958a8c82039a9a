//! Control-flow graph recovery from bytecode.
//!
//! Blocks start at offset 0, at every `JUMPDEST`, and after every
//! terminator (`JUMP`, `JUMPI`, `STOP`, `REVERT`, `SELFDESTRUCT`). Jump
//! targets are resolved from the `PUSH` immediately preceding the jump,
//! which is the only form the compiler emits.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::opcode::{disassemble, Instruction, Opcode};
use crate::word;

/// A basic-block transition taken by a `JUMPI`: (source block, destination block).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BranchId(pub usize, pub usize);

impl BranchId {
    pub fn src(&self) -> usize {
        self.0
    }
    pub fn dst(&self) -> usize {
        self.1
    }
}

impl fmt::Display for BranchId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}->{}", self.0, self.1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct BasicBlock {
    pub start: usize,
    /// Exclusive end offset.
    pub end: usize,
    /// Offsets of the instructions in the block.
    pub instructions: Vec<usize>,
    pub successors: Vec<usize>,
    /// pc of the terminating `JUMPI`, if the block ends in one.
    pub jumpi: Option<usize>,
    /// For a `JUMPI` block: (taken target, fallthrough).
    pub branch_targets: Option<(usize, usize)>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cfg {
    pub blocks: Vec<BasicBlock>,
}

impl Cfg {
    pub fn build(code: &[u8]) -> Cfg {
        let ins = disassemble(code);
        let mut leaders = BTreeSet::new();
        leaders.insert(0usize);
        for (pc, i) in &ins {
            match i {
                Some(i) if i.op == Opcode::JumpDest => {
                    leaders.insert(*pc);
                }
                Some(i) if i.op.is_terminator() => {
                    leaders.insert(i.next_pc());
                }
                None => {
                    leaders.insert(pc + 1);
                }
                _ => {}
            }
        }
        leaders.retain(|l| *l < code.len());

        let starts: Vec<usize> = leaders.iter().copied().collect();
        let by_pc: BTreeMap<usize, Option<&Instruction>> =
            ins.iter().map(|(pc, i)| (*pc, i.as_ref())).collect();
        let is_jumpdest = |t: usize| matches!(by_pc.get(&t), Some(Some(i)) if i.op == Opcode::JumpDest);

        let mut blocks = Vec::new();
        for (k, &start) in starts.iter().enumerate() {
            let end = starts.get(k + 1).copied().unwrap_or(code.len());
            let members: Vec<(usize, Option<&Instruction>)> =
                by_pc.range(start..end).map(|(pc, i)| (*pc, *i)).collect();
            let instructions = members.iter().map(|(pc, _)| *pc).collect();
            let last = members.last().and_then(|(_, i)| *i);
            let prev_push = |idx: usize| -> Option<usize> {
                if idx == 0 {
                    return None;
                }
                match members[idx - 1].1 {
                    Some(p) if matches!(p.op, Opcode::Push(_)) => {
                        let w = word::from_be(&p.immediate);
                        if w > crate::word::Word::from(usize::MAX as u64) {
                            None
                        } else {
                            Some(w.to::<u64>() as usize)
                        }
                    }
                    _ => None,
                }
            };
            let mut successors = Vec::new();
            let mut jumpi = None;
            let mut branch_targets = None;
            match last {
                Some(i) if i.op == Opcode::Jump => {
                    if let Some(t) = prev_push(members.len() - 1).filter(|t| is_jumpdest(*t)) {
                        successors.push(t);
                    }
                }
                Some(i) if i.op == Opcode::JumpI => {
                    jumpi = Some(i.pc);
                    let fall = i.next_pc();
                    let target = prev_push(members.len() - 1).filter(|t| is_jumpdest(*t));
                    if let Some(t) = target {
                        successors.push(t);
                    }
                    if fall < code.len() && Some(fall) != target {
                        successors.push(fall);
                    }
                    if let Some(t) = target {
                        if fall < code.len() && fall != t {
                            branch_targets = Some((t, fall));
                        }
                    }
                }
                Some(i) if i.op.is_terminator() => {}
                _ => {
                    if end < code.len() && last.is_some() {
                        successors.push(end);
                    }
                }
            }
            blocks.push(BasicBlock {
                start,
                end,
                instructions,
                successors,
                jumpi,
                branch_targets,
            });
        }
        Cfg { blocks }
    }

    pub fn block(&self, start: usize) -> Option<&BasicBlock> {
        self.blocks
            .binary_search_by_key(&start, |b| b.start)
            .ok()
            .map(|i| &self.blocks[i])
    }

    /// The block containing `pc`.
    pub fn block_of(&self, pc: usize) -> Option<&BasicBlock> {
        let idx = self.blocks.partition_point(|b| b.start <= pc);
        if idx == 0 {
            return None;
        }
        let b = &self.blocks[idx - 1];
        (pc < b.end).then_some(b)
    }

    pub fn is_block_start(&self, pc: usize) -> bool {
        self.block(pc).is_some()
    }

    /// Every `JUMPI` edge of the program.
    pub fn branches(&self) -> BTreeSet<BranchId> {
        let mut out = BTreeSet::new();
        for b in &self.blocks {
            if let Some((t, f)) = b.branch_targets {
                out.insert(BranchId(b.start, t));
                out.insert(BranchId(b.start, f));
            }
        }
        out
    }

    /// The other arm of a `JUMPI` edge.
    pub fn sibling(&self, b: BranchId) -> Option<BranchId> {
        let (t, f) = self.block(b.0)?.branch_targets?;
        if b.1 == t {
            Some(BranchId(b.0, f))
        } else if b.1 == f {
            Some(BranchId(b.0, t))
        } else {
            None
        }
    }

    /// Blocks reachable from `start` (inclusive), ignoring branch conditions.
    pub fn reachable_blocks(&self, start: usize) -> BTreeSet<usize> {
        let mut seen = BTreeSet::new();
        let mut work = vec![start];
        while let Some(b) = work.pop() {
            if !seen.insert(b) {
                continue;
            }
            if let Some(block) = self.block(b) {
                work.extend(block.successors.iter().copied());
            }
        }
        seen.retain(|b| self.block(*b).is_some());
        seen
    }

    /// Instruction offsets reachable from `start` (inclusive).
    pub fn reachable_pcs(&self, start: usize) -> BTreeSet<usize> {
        self.reachable_blocks(start)
            .into_iter()
            .filter_map(|b| self.block(b))
            .flat_map(|b| b.instructions.iter().copied())
            .collect()
    }

    /// Static nesting depth of every `JUMPI` block: one plus the number of
    /// distinct `JUMPI` blocks it is (transitively) control dependent on.
    pub fn nesting_depths(&self) -> BTreeMap<usize, usize> {
        let pdom = self.postdominators();
        // Direct control dependence: y depends on a iff y postdominates a
        // successor of a but does not strictly postdominate a.
        let mut deps: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
        for a in &self.blocks {
            if a.successors.len() < 2 {
                continue;
            }
            let a_pdom = &pdom[&a.start];
            for s in &a.successors {
                if let Some(sp) = pdom.get(s) {
                    for y in sp {
                        if *y == EXIT {
                            continue;
                        }
                        let strictly = *y != a.start && a_pdom.contains(y);
                        if !strictly {
                            deps.entry(*y).or_default().insert(a.start);
                        }
                    }
                }
            }
        }
        let mut out = BTreeMap::new();
        for b in self.blocks.iter().filter(|b| b.branch_targets.is_some()) {
            let mut ancestors = BTreeSet::new();
            let mut work: Vec<usize> = deps.get(&b.start).into_iter().flatten().copied().collect();
            while let Some(a) = work.pop() {
                if a == b.start || !ancestors.insert(a) {
                    continue;
                }
                work.extend(deps.get(&a).into_iter().flatten().copied());
            }
            let enclosing = ancestors
                .iter()
                .filter(|a| self.block(**a).is_some_and(|x| x.branch_targets.is_some()))
                .count();
            out.insert(b.start, enclosing + 1);
        }
        out
    }

    fn postdominators(&self) -> BTreeMap<usize, BTreeSet<usize>> {
        let all: BTreeSet<usize> = self
            .blocks
            .iter()
            .map(|b| b.start)
            .chain(std::iter::once(EXIT))
            .collect();
        let mut pdom: BTreeMap<usize, BTreeSet<usize>> =
            self.blocks.iter().map(|b| (b.start, all.clone())).collect();
        pdom.insert(EXIT, BTreeSet::from([EXIT]));
        let succs = |b: &BasicBlock| -> Vec<usize> {
            let s: Vec<usize> = b
                .successors
                .iter()
                .copied()
                .filter(|s| self.block(*s).is_some())
                .collect();
            if s.is_empty() {
                vec![EXIT]
            } else {
                s
            }
        };
        let mut changed = true;
        while changed {
            changed = false;
            for b in self.blocks.iter().rev() {
                let mut acc: Option<BTreeSet<usize>> = None;
                for s in succs(b) {
                    let sp = &pdom[&s];
                    acc = Some(match acc {
                        None => sp.clone(),
                        Some(a) => a.intersection(sp).copied().collect(),
                    });
                }
                let mut new = acc.unwrap_or_default();
                new.insert(b.start);
                if new != pdom[&b.start] {
                    pdom.insert(b.start, new);
                    changed = true;
                }
            }
        }
        pdom
    }
}

const EXIT: usize = usize::MAX;
