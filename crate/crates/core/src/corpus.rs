//! Seeds, branch distances and the seed queue.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::cfg::{BranchId, Cfg};
use crate::depgraph::SequenceTemplate;
use crate::vm::trace::{CmpEvent, CmpOp, TxTrace};
use crate::package::ContractPackage;
use crate::vm::{encode_stream, TxInput};
use crate::word::Word;

pub const DEFAULT_QUEUE_CAP: usize = 1024;

/// Replayable form of a seed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SeedFile {
    pub package_hash: String,
    pub template: Vec<String>,
    /// `sender ‖ value ‖ args` of each transaction, hex encoded.
    pub raw_bytes: Vec<String>,
    pub exec_seed: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum SeedFileError {
    #[error("malformed seed file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("seed file has {calls} calls but {txs} transactions")]
    Shape { calls: usize, txs: usize },
    #[error("transaction {0}: {1}")]
    Hex(usize, hex::FromHexError),
    #[error("seed was recorded against package {recorded}, not {actual}")]
    PackageMismatch { recorded: String, actual: String },
}

impl SeedFile {
    pub fn new(pkg_hash: &str, inputs: &[TxInput], exec_seed: u64) -> SeedFile {
        SeedFile {
            package_hash: pkg_hash.to_string(),
            template: inputs.iter().map(|t| t.function.clone()).collect(),
            raw_bytes: inputs.iter().map(|t| hex::encode(t.raw_bytes())).collect(),
            exec_seed,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("seed serializes")
    }

    pub fn from_json(s: &str) -> Result<SeedFile, SeedFileError> {
        Ok(serde_json::from_str(s)?)
    }

    /// Decodes the transactions, checking the package first.
    pub fn inputs(&self, pkg: &ContractPackage) -> Result<Vec<TxInput>, SeedFileError> {
        let actual = pkg.hash();
        if actual != self.package_hash {
            return Err(SeedFileError::PackageMismatch {
                recorded: self.package_hash.clone(),
                actual,
            });
        }
        if self.template.len() != self.raw_bytes.len() {
            return Err(SeedFileError::Shape {
                calls: self.template.len(),
                txs: self.raw_bytes.len(),
            });
        }
        let mut stream = Vec::new();
        for (i, h) in self.raw_bytes.iter().enumerate() {
            stream.extend(hex::decode(h).map_err(|e| SeedFileError::Hex(i, e))?);
        }
        Ok(crate::vm::decode_stream(pkg, &self.template, &stream))
    }
}

/// How far an input is from flipping a branch; zero means satisfied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Distance(pub Word);

impl Distance {
    pub const SATISFIED: Distance = Distance(Word::ZERO);

    pub fn is_satisfied(&self) -> bool {
        self.0.is_zero()
    }
}

/// A transaction sequence with concrete inputs and what running it showed.
#[derive(Debug, Clone)]
pub struct Seed {
    /// Admission order within a campaign.
    pub id: u64,
    pub template: Arc<SequenceTemplate>,
    pub inputs: Vec<TxInput>,
    /// RNG seed for call-outcome injection when this seed runs.
    pub exec_seed: u64,
    pub covered: BTreeSet<BranchId>,
    pub min_distances: BTreeMap<BranchId, Distance>,
}

impl Seed {
    pub fn new(template: Arc<SequenceTemplate>, inputs: Vec<TxInput>, exec_seed: u64) -> Seed {
        Seed {
            id: 0,
            template,
            inputs,
            exec_seed,
            covered: BTreeSet::new(),
            min_distances: BTreeMap::new(),
        }
    }

    pub fn stream(&self) -> Vec<u8> {
        encode_stream(&self.inputs)
    }

    /// Records coverage and distances to every branch in `uncovered`.
    pub fn observe(&mut self, cfg: &Cfg, traces: &[TxTrace], uncovered: &BTreeSet<BranchId>) {
        self.covered = crate::vm::coverage_of(traces);
        self.min_distances = distances(cfg, traces, uncovered);
    }
}

fn sat_plus_one(w: Word) -> Word {
    w.saturating_add(Word::from(1u8))
}

/// Distance for the comparison `c` to evaluate to `want`.
fn cmp_distance(events: &[CmpEvent], c: &CmpEvent, want: bool, depth: usize) -> Word {
    let (a, b) = (c.a, c.b);
    match (c.op, want) {
        (CmpOp::EQ, true) => crate::word::abs_diff(a, b),
        (CmpOp::EQ, false) => Word::from((a == b) as u8),
        (CmpOp::LT, true) => {
            if a < b {
                Word::ZERO
            } else {
                sat_plus_one(a - b)
            }
        }
        (CmpOp::LT, false) => {
            if a >= b {
                Word::ZERO
            } else {
                b - a
            }
        }
        (CmpOp::GT, true) => {
            if a > b {
                Word::ZERO
            } else {
                sat_plus_one(b - a)
            }
        }
        (CmpOp::GT, false) => {
            if a <= b {
                Word::ZERO
            } else {
                a - b
            }
        }
        (CmpOp::ISZERO, _) => match c.operand {
            // ISZERO true means the operand comparison is false
            Some(i) if depth < 64 => cmp_distance(events, &events[i as usize], !want, depth + 1),
            _ => {
                if want {
                    a
                } else {
                    Word::from(a.is_zero() as u8)
                }
            }
        },
    }
}

/// Distance of one trace to arm `b`, minimised over every execution of
/// its `JUMPI`. `None` if that `JUMPI` never ran.
pub fn branch_distance(cfg: &Cfg, trace: &TxTrace, b: BranchId) -> Option<Distance> {
    let (taken_target, _) = cfg.block(b.src())?.branch_targets?;
    let want_taken = b.dst() == taken_target;
    trace
        .branch_events
        .iter()
        .filter(|e| e.branch_id.src() == b.src())
        .map(|e| {
            if e.branch_id == b {
                return Word::ZERO;
            }
            match e.cond_provenance {
                Some(p) => {
                    let c = &trace.cmp_events[p as usize];
                    cmp_distance(&trace.cmp_events, c, want_taken, 0)
                }
                None => Word::from(1u8),
            }
        })
        .min()
        .map(Distance)
}

pub fn distances(
    cfg: &Cfg,
    traces: &[TxTrace],
    targets: &BTreeSet<BranchId>,
) -> BTreeMap<BranchId, Distance> {
    let mut srcs: BTreeSet<usize> = BTreeSet::new();
    for t in traces {
        srcs.extend(t.branch_events.iter().map(|e| e.branch_id.src()));
    }
    let mut out = BTreeMap::new();
    for b in targets.iter().filter(|b| srcs.contains(&b.src())) {
        if let Some(d) = traces.iter().filter_map(|t| branch_distance(cfg, t, *b)).min() {
            out.insert(*b, d);
        }
    }
    out
}

/// Seeds retained for fuzzing, plus global coverage bookkeeping.
#[derive(Debug, Clone)]
pub struct SeedQueue {
    pub seeds: Vec<Seed>,
    pub global_coverage: BTreeSet<BranchId>,
    pub uncovered: BTreeSet<BranchId>,
    /// Best distance seen for each uncovered branch and the seed holding it.
    pub best: BTreeMap<BranchId, (Distance, u64)>,
    pub cap: usize,
    next_id: u64,
}

/// Why a seed entered the queue.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Admission {
    pub id: u64,
    pub new_branches: BTreeSet<BranchId>,
    pub closer_to: Vec<BranchId>,
}

impl SeedQueue {
    pub fn new(all_branches: BTreeSet<BranchId>) -> SeedQueue {
        SeedQueue {
            seeds: Vec::new(),
            global_coverage: BTreeSet::new(),
            uncovered: all_branches,
            best: BTreeMap::new(),
            cap: DEFAULT_QUEUE_CAP,
            next_id: 0,
        }
    }

    pub fn get(&self, id: u64) -> Option<&Seed> {
        self.seeds.iter().find(|s| s.id == id)
    }

    /// True if the seed currently holds the best distance for some
    /// uncovered branch.
    pub fn holds_best(&self, id: u64) -> bool {
        self.best
            .iter()
            .any(|(b, (_, s))| *s == id && self.uncovered.contains(b))
    }

    /// Uncovered branches for which `id` holds the best distance.
    pub fn best_targets(&self, id: u64) -> Vec<BranchId> {
        self.best
            .iter()
            .filter(|(b, (_, s))| *s == id && self.uncovered.contains(b))
            .map(|(b, _)| *b)
            .collect()
    }

    /// Whether `seed` covers a branch not yet globally covered.
    pub fn is_novel(&self, seed: &Seed) -> bool {
        !seed.covered.is_subset(&self.global_coverage)
    }

    /// Whether `seed` beats the queue's best distance for an uncovered branch.
    pub fn is_closer(&self, seed: &Seed) -> bool {
        seed.min_distances.iter().any(|(b, d)| {
            self.uncovered.contains(b) && self.best.get(b).is_none_or(|(bd, _)| d < bd)
        })
    }

    /// Admits executed seeds: every seed that covers something new, and for
    /// each uncovered branch the seed with the smallest distance if it beats
    /// the queue's best. Ties go to the earlier seed.
    pub fn select_seeds(&mut self, executed: Vec<Seed>) -> Vec<Admission> {
        let mut admitted: Vec<(usize, Admission)> = Vec::new();
        let mut taken = vec![false; executed.len()];
        for (i, s) in executed.iter().enumerate() {
            let new: BTreeSet<BranchId> = s.covered.difference(&self.global_coverage).copied().collect();
            if !new.is_empty() {
                self.global_coverage.extend(new.iter().copied());
                for b in &new {
                    self.uncovered.remove(b);
                    self.best.remove(b);
                }
                taken[i] = true;
                admitted.push((
                    i,
                    Admission {
                        id: 0,
                        new_branches: new,
                        closer_to: Vec::new(),
                    },
                ));
            }
        }
        let mut closer: BTreeMap<usize, Vec<BranchId>> = BTreeMap::new();
        let mut new_best: Vec<(BranchId, Distance, usize)> = Vec::new();
        for b in &self.uncovered {
            let mut arg: Option<(Distance, usize)> = None;
            for (i, s) in executed.iter().enumerate() {
                if let Some(d) = s.min_distances.get(b) {
                    if arg.is_none_or(|(ad, _)| *d < ad) {
                        arg = Some((*d, i));
                    }
                }
            }
            if let Some((d, i)) = arg {
                if self.best.get(b).is_none_or(|(bd, _)| d < *bd) {
                    closer.entry(i).or_default().push(*b);
                    new_best.push((*b, d, i));
                }
            }
        }
        for (i, bs) in closer {
            if let Some((_, a)) = admitted.iter_mut().find(|(j, _)| *j == i) {
                a.closer_to = bs;
            } else {
                taken[i] = true;
                admitted.push((
                    i,
                    Admission {
                        id: 0,
                        new_branches: BTreeSet::new(),
                        closer_to: bs,
                    },
                ));
            }
        }
        admitted.sort_by_key(|(i, _)| *i);
        let mut ids = vec![0u64; executed.len()];
        let mut out = Vec::new();
        for (i, mut seed) in executed.into_iter().enumerate() {
            if !taken[i] {
                continue;
            }
            seed.id = self.next_id;
            self.next_id += 1;
            ids[i] = seed.id;
            self.seeds.push(seed);
        }
        for (b, d, i) in new_best {
            self.best.insert(b, (d, ids[i]));
        }
        for (i, mut a) in admitted {
            a.id = ids[i];
            out.push(a);
        }
        self.evict();
        out
    }

    fn evict(&mut self) {
        while self.seeds.len() > self.cap {
            let mut count: BTreeMap<BranchId, usize> = BTreeMap::new();
            for s in &self.seeds {
                for b in &s.covered {
                    *count.entry(*b).or_default() += 1;
                }
            }
            let victim = self
                .seeds
                .iter()
                .enumerate()
                .filter(|(_, s)| !self.holds_best(s.id))
                .min_by_key(|(_, s)| (s.covered.iter().filter(|b| count[b] == 1).count(), s.id))
                .map(|(i, _)| i)
                .unwrap_or(0);
            self.seeds.remove(victim);
        }
    }
}
