//! Byte-level mutation of transaction streams under a mutation mask.
//!
//! A mask records, per stream position, which mutation kinds were observed
//! to keep a seed on its target: still hitting the branch it was chosen for,
//! or getting closer to some uncovered branch. Positions with an empty entry
//! are never the anchor of a mutation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cfg::BranchId;
use crate::corpus::{Admission, Seed, SeedQueue};
use crate::depgraph::SequenceTemplate;
use crate::energy::{update_energy, BranchWeightTable};
use crate::opcode::{disassemble, Opcode};
use crate::package::ContractPackage;
use crate::vm::WORD_BYTES;
use crate::word::{self, Word};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Kind {
    /// Overwrite.
    O,
    /// Insert.
    I,
    /// Replace with an interesting value.
    R,
    /// Delete.
    D,
}

pub const KINDS: [Kind; 4] = [Kind::O, Kind::I, Kind::R, Kind::D];

impl Kind {
    fn bit(self) -> u8 {
        1 << (self as u8)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mutation {
    pub x: Kind,
    pub n: usize,
    pub i: usize,
    /// Written bytes for O and R, inserted bytes for I, empty for D.
    pub payload: Vec<u8>,
}

impl Mutation {
    pub fn delete(i: usize, n: usize) -> Mutation {
        Mutation {
            x: Kind::D,
            n,
            i,
            payload: Vec::new(),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MutateError {
    #[error("mutation of {n} bytes at {i} is out of bounds for a {len}-byte stream")]
    OutOfBounds { i: usize, n: usize, len: usize },
    #[error("payload has {got} bytes, expected {n}")]
    Payload { n: usize, got: usize },
}

/// Applies `m` to `t`. I and D change the length; see [`canonicalize`].
pub fn mutate(t: &[u8], m: &Mutation) -> Result<Vec<u8>, MutateError> {
    let oob = MutateError::OutOfBounds {
        i: m.i,
        n: m.n,
        len: t.len(),
    };
    if m.n == 0 {
        return Err(oob);
    }
    if m.x != Kind::D && m.payload.len() != m.n {
        return Err(MutateError::Payload {
            n: m.n,
            got: m.payload.len(),
        });
    }
    let mut out = t.to_vec();
    match m.x {
        Kind::I => {
            if m.i > t.len() {
                return Err(oob);
            }
            out.splice(m.i..m.i, m.payload.iter().copied());
        }
        Kind::O | Kind::R | Kind::D => {
            if m.i + m.n > t.len() {
                return Err(oob);
            }
            if m.x == Kind::D {
                out.drain(m.i..m.i + m.n);
            } else {
                out[m.i..m.i + m.n].copy_from_slice(&m.payload);
            }
        }
    }
    Ok(out)
}

/// Pads with zeros or truncates at the end so the stream decodes to the
/// same calls as before.
pub fn canonicalize(mut t: Vec<u8>, len: usize) -> Vec<u8> {
    t.resize(len, 0);
    t
}

/// Allowed mutation kinds per stream position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MutationMask {
    pub per_position: Vec<u8>,
}

impl MutationMask {
    pub fn empty(len: usize) -> MutationMask {
        MutationMask {
            per_position: vec![0; len],
        }
    }

    pub fn full(len: usize) -> MutationMask {
        MutationMask {
            per_position: vec![0b1111; len],
        }
    }

    pub fn len(&self) -> usize {
        self.per_position.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_position.is_empty()
    }

    pub fn allows(&self, i: usize, x: Kind) -> bool {
        self.per_position.get(i).is_some_and(|m| m & x.bit() != 0)
    }

    pub fn insert(&mut self, i: usize, x: Kind) {
        self.per_position[i] |= x.bit();
    }

    pub fn kinds(&self, i: usize) -> Vec<Kind> {
        KINDS.iter().copied().filter(|k| self.allows(i, *k)).collect()
    }
}

impl fmt::Display for MutationMask {
    /// One row per 32-byte word, one `OIRD` cell per byte.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (w, chunk) in self.per_position.chunks(WORD_BYTES).enumerate() {
            write!(f, "{:5}:", w * WORD_BYTES)?;
            for m in chunk {
                let cell: String = KINDS
                    .iter()
                    .map(|k| if m & k.bit() != 0 { format!("{k:?}") } else { ".".into() })
                    .collect();
                write!(f, " {cell}")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// True iff `m.x` is allowed at every position in `[m.i, m.i + m.n)`.
pub fn ok_to_mutate(mask: &MutationMask, m: &Mutation) -> bool {
    (m.i..m.i + m.n.max(1)).all(|j| mask.allows(j, m.x))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct NestedBranchInfo {
    pub branch_id: BranchId,
    pub nested_score: usize,
}

/// Covered branches under at least two conditionals.
pub fn nested_hit(depths: &BTreeMap<usize, usize>, covered: &BTreeSet<BranchId>) -> BTreeSet<NestedBranchInfo> {
    covered
        .iter()
        .filter_map(|b| {
            let d = *depths.get(&b.src())?;
            (d >= 2).then_some(NestedBranchInfo {
                branch_id: *b,
                nested_score: d,
            })
        })
        .collect()
}

/// Values the R operator writes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dictionary {
    pub values: Vec<Word>,
}

impl Dictionary {
    pub fn base() -> Dictionary {
        let one = Word::from(1u8);
        Dictionary {
            values: vec![
                Word::ZERO,
                one,
                Word::from(2u8),
                Word::from(0xffu8),
                Word::from(0xffffu16),
                Word::from(u64::MAX),
                one << 255,
                Word::MAX,
            ],
        }
    }

    /// The base values plus every `PUSH` operand that is not a jump target.
    pub fn with_constants(pkg: &ContractPackage) -> Dictionary {
        let mut d = Dictionary::base();
        d.extend(harvest_constants(pkg));
        d
    }

    pub fn extend(&mut self, values: impl IntoIterator<Item = Word>) {
        for v in values {
            if !self.values.contains(&v) {
                self.values.push(v);
            }
        }
    }
}

pub fn harvest_constants(pkg: &ContractPackage) -> Vec<Word> {
    let ins: Vec<_> = disassemble(&pkg.bytecode)
        .into_iter()
        .filter_map(|(_, i)| i)
        .collect();
    let mut out = Vec::new();
    for (k, i) in ins.iter().enumerate() {
        if !matches!(i.op, Opcode::Push(_)) {
            continue;
        }
        let jumps = ins
            .get(k + 1)
            .is_some_and(|n| matches!(n.op, Opcode::Jump | Opcode::JumpI));
        let v = word::from_be(&i.immediate);
        if !jumps && !out.contains(&v) {
            out.push(v);
        }
    }
    out
}

/// Runs candidate streams. Implementations decode each stream against the
/// template, execute it and return one observed seed per stream, in order.
pub trait Executor {
    fn run(&mut self, template: &Arc<SequenceTemplate>, streams: Vec<Vec<u8>>) -> Vec<Seed>;

    /// Wall-clock budget exhausted.
    fn expired(&self) -> bool {
        false
    }
}

fn random_bytes<R: Rng>(rng: &mut R, n: usize) -> Vec<u8> {
    (0..n).map(|_| rng.gen()).collect()
}

/// R rewrites from `i` to the end of its word with the matching tail of a
/// dictionary value, preferring values that change something.
fn replace_at<R: Rng>(t: &[u8], i: usize, dict: &Dictionary, rng: &mut R) -> Mutation {
    let off = i % WORD_BYTES;
    let n = (WORD_BYTES - off).min(t.len() - i);
    let tail = |v: &Word| word::to_be(v)[off..off + n].to_vec();
    let differs: Vec<&Word> = dict.values.iter().filter(|v| tail(v) != t[i..i + n]).collect();
    let v = differs.choose(rng).copied().unwrap_or(&dict.values[0]);
    Mutation {
        x: Kind::R,
        n,
        i,
        payload: tail(v),
    }
}

fn build<R: Rng>(t: &[u8], x: Kind, i: usize, n: usize, dict: &Dictionary, rng: &mut R) -> Mutation {
    match x {
        Kind::O => {
            let n = n.min(t.len() - i);
            Mutation {
                x,
                n,
                i,
                payload: t[i..i + n].iter().map(|b| b ^ 0xff).collect(),
            }
        }
        Kind::I => Mutation {
            x,
            n,
            i,
            payload: random_bytes(rng, n),
        },
        Kind::R => replace_at(t, i, dict, rng),
        Kind::D => Mutation::delete(i, n.min(t.len() - i)),
    }
}

/// One probe per position and kind, all with the same size `n`.
pub fn mask_probes<R: Rng>(t: &[u8], dict: &Dictionary, rng: &mut R) -> Vec<Mutation> {
    if t.is_empty() {
        return Vec::new();
    }
    let n = rng.gen_range(1..=t.len());
    let mut out = Vec::with_capacity(4 * t.len());
    for i in 0..t.len() {
        for x in KINDS {
            out.push(build(t, x, i, n, dict, rng));
        }
    }
    out
}

/// Whether a probe result keeps the parent on target.
fn keeps_target(parent: &Seed, probe: &Seed, target: BranchId, uncovered: &BTreeSet<BranchId>) -> bool {
    if probe.covered.contains(&target) {
        return true;
    }
    probe.min_distances.iter().any(|(b, d)| {
        uncovered.contains(b) && parent.min_distances.get(b).is_none_or(|pd| d < pd)
    })
}

/// Mask for `seed` toward `target`. Also returns the executed probes.
pub fn compute_mask<E: Executor, R: Rng>(
    seed: &Seed,
    target: BranchId,
    uncovered: &BTreeSet<BranchId>,
    dict: &Dictionary,
    exec: &mut E,
    rng: &mut R,
) -> (MutationMask, Vec<Seed>) {
    let t = seed.stream();
    let probes = mask_probes(&t, dict, rng);
    let streams: Vec<Vec<u8>> = probes
        .iter()
        .map(|m| canonicalize(mutate(&t, m).expect("probe in bounds"), t.len()))
        .collect();
    let results = exec.run(&seed.template, streams);
    let mut mask = MutationMask::empty(t.len());
    for (m, r) in probes.iter().zip(&results) {
        if keeps_target(seed, r, target, uncovered) {
            mask.insert(m.i, m.x);
        }
    }
    (mask, results)
}

#[derive(Debug, Clone)]
pub struct MutationConfig {
    pub use_mask: bool,
    /// Most units one seed may spend on mutants per round.
    pub per_seed_cap: u64,
    pub refund: u64,
    pub batch: usize,
    /// Keep every emitted mutation in [`RoundStats::log`].
    pub record: bool,
}

impl Default for MutationConfig {
    fn default() -> Self {
        MutationConfig {
            use_mask: true,
            per_seed_cap: 256,
            refund: crate::energy::REFUND_NEW,
            batch: 64,
            record: false,
        }
    }
}

/// An emitted mutant, for auditing.
#[derive(Debug, Clone)]
pub struct Emitted {
    pub parent: u64,
    pub mutation: Mutation,
    pub mutant: Vec<u8>,
}

#[derive(Debug, Clone, Default)]
pub struct RoundStats {
    pub executions: u64,
    pub probes: u64,
    pub mutants: u64,
    pub rejected: u64,
    pub masks_computed: u64,
    pub admitted: Vec<Admission>,
    pub log: Vec<Emitted>,
    pub masks: BTreeMap<u64, MutationMask>,
}

/// Long-lived state of the mutation stage.
pub struct Mutator<'a> {
    pub depths: &'a BTreeMap<usize, usize>,
    pub dict: &'a Dictionary,
    pub cfg: MutationConfig,
    mask_cache: BTreeMap<(u64, BranchId), MutationMask>,
}

/// The branch a seed is mutated toward, if it is worth mutating at all.
pub fn pick_target(
    seed: &Seed,
    queue: &SeedQueue,
    table: &BranchWeightTable,
    depths: &BTreeMap<usize, usize>,
) -> Option<BranchId> {
    let by_weight = |bs: &mut dyn Iterator<Item = BranchId>| {
        bs.fold(None::<BranchId>, |best, b| match best {
            Some(c) if table.weight(&c) >= table.weight(&b) => Some(c),
            _ => Some(b),
        })
    };
    if let Some(b) = by_weight(&mut queue.best_targets(seed.id).into_iter()) {
        return Some(b);
    }
    let nested = nested_hit(depths, &seed.covered);
    if let Some(n) = nested.iter().max_by_key(|n| (n.nested_score, std::cmp::Reverse(n.branch_id))) {
        return Some(n.branch_id);
    }
    by_weight(&mut seed.covered.iter().copied().filter(|b| table.entries.get(b).is_some_and(|w| w.w2 > 0)))
}

impl<'a> Mutator<'a> {
    pub fn new(depths: &'a BTreeMap<usize, usize>, dict: &'a Dictionary, cfg: MutationConfig) -> Mutator<'a> {
        Mutator {
            depths,
            dict,
            cfg,
            mask_cache: BTreeMap::new(),
        }
    }

    /// Admits `s` if it covers something new, otherwise keeps it for the
    /// next selection if it beats a best distance. Returns whether it was new.
    fn absorb(&self, s: Seed, queue: &mut SeedQueue, pending: &mut Vec<Seed>, stats: &mut RoundStats) -> bool {
        if queue.is_novel(&s) {
            stats.admitted.extend(queue.select_seeds(vec![s]));
            true
        } else {
            if queue.is_closer(&s) {
                pending.push(s);
            }
            false
        }
    }

    /// Mutates each worthwhile seed in `order` until its energy runs out.
    /// Every execution, probes included, costs one unit of `budget` and of
    /// the target branch's allocation.
    #[allow(clippy::too_many_arguments)]
    pub fn mutation_round<E: Executor, R: Rng>(
        &mut self,
        order: &[u64],
        queue: &mut SeedQueue,
        table: &mut BranchWeightTable,
        budget: &mut u64,
        pending: &mut Vec<Seed>,
        exec: &mut E,
        rng: &mut R,
    ) -> RoundStats {
        let mut stats = RoundStats::default();
        for &id in order {
            if *budget == 0 || exec.expired() {
                break;
            }
            let Some(seed) = queue.get(id).cloned() else { continue };
            let Some(target) = pick_target(&seed, queue, table, self.depths) else {
                continue;
            };
            if table.entries.get(&target).is_none_or(|w| w.remaining() == 0) {
                continue;
            }
            let stream = seed.stream();
            if stream.is_empty() {
                continue;
            }
            let charge = |table: &mut BranchWeightTable, budget: &mut u64| {
                *budget -= 1;
                let w = table.entries.get_mut(&target).unwrap();
                w.spent_energy = (w.spent_energy + 1).min(w.allocated_energy);
            };

            let mask = if !self.cfg.use_mask {
                MutationMask::full(stream.len())
            } else if let Some(m) = self.mask_cache.get(&(id, target)) {
                m.clone()
            } else {
                if *budget < 4 * stream.len() as u64 {
                    *budget = 0;
                    break;
                }
                let uncovered = queue.uncovered.clone();
                let (mask, probes) = compute_mask(&seed, target, &uncovered, self.dict, exec, rng);
                stats.masks_computed += 1;
                for p in probes {
                    charge(table, budget);
                    stats.probes += 1;
                    stats.executions += 1;
                    self.absorb(p, queue, pending, &mut stats);
                }
                self.mask_cache.insert((id, target), mask.clone());
                mask
            };
            if self.cfg.record {
                stats.masks.insert(id, mask.clone());
            }

            let cap = table.entries[&target].allocated_energy;
            let mut energy = table.entries[&target].remaining().min(self.cfg.per_seed_cap);
            let mut sweep: Vec<(usize, Kind)> = (0..stream.len())
                .flat_map(|i| KINDS.into_iter().map(move |x| (i, x)))
                .collect();
            sweep.shuffle(rng);
            let mut sweep = sweep.into_iter();
            while energy > 0 && *budget > 0 && !exec.expired() {
                let want = (self.cfg.batch as u64).min(energy).min(*budget) as usize;
                let mut batch: Vec<(Mutation, Vec<u8>)> = Vec::with_capacity(want);
                for (i, x) in sweep.by_ref() {
                    let n = match x {
                        Kind::O => *[1usize, 2, 4].choose(rng).unwrap(),
                        _ => *[1usize, 2, 4, 8, 16, 32].choose(rng).unwrap(),
                    };
                    let m = build(&stream, x, i, n, self.dict, rng);
                    if !ok_to_mutate(&mask, &m) {
                        stats.rejected += 1;
                        continue;
                    }
                    let child = canonicalize(mutate(&stream, &m).expect("in bounds"), stream.len());
                    batch.push((m, child));
                    if batch.len() == want {
                        break;
                    }
                }
                if batch.is_empty() {
                    break;
                }
                let streams: Vec<Vec<u8>> = batch.iter().map(|(_, c)| c.clone()).collect();
                let results = exec.run(&seed.template, streams);
                for ((m, child), r) in batch.into_iter().zip(results) {
                    charge(table, budget);
                    stats.mutants += 1;
                    stats.executions += 1;
                    if self.cfg.record {
                        stats.log.push(Emitted {
                            parent: id,
                            mutation: m,
                            mutant: child,
                        });
                    }
                    let new = self.absorb(r, queue, pending, &mut stats);
                    energy = update_energy(new, energy, self.cfg.refund, cap);
                }
            }
        }
        stats
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn o(i: usize, payload: &[u8]) -> Mutation {
        Mutation {
            x: Kind::O,
            n: payload.len(),
            i,
            payload: payload.to_vec(),
        }
    }

    #[test]
    fn operator_examples() {
        assert_eq!(mutate(&[0, 0], &o(0, &[0xff])).unwrap(), [0xff, 0]);
        let d = mutate(&[0xaa, 0xbb], &Mutation::delete(1, 1)).unwrap();
        assert_eq!(canonicalize(d, 2), [0xaa, 0]);
        let ins = Mutation {
            x: Kind::I,
            n: 2,
            i: 2,
            payload: vec![1, 2],
        };
        assert_eq!(mutate(&[9, 9], &ins).unwrap(), [9, 9, 1, 2]);
        assert!(mutate(&[0], &o(1, &[1])).is_err());
        assert!(mutate(&[0, 0], &Mutation::delete(1, 2)).is_err());
    }

    #[test]
    fn ok_to_mutate_is_a_conjunction() {
        let mut mask = MutationMask::empty(3);
        mask.insert(0, Kind::O);
        assert!(ok_to_mutate(&mask, &o(0, &[1])));
        assert!(!ok_to_mutate(&mask, &Mutation::delete(0, 1)));
        assert!(!ok_to_mutate(&mask, &o(0, &[1, 2])));
        mask.insert(1, Kind::O);
        assert!(ok_to_mutate(&mask, &o(0, &[1, 2])));
    }

    #[test]
    fn probes_cover_every_position_and_kind() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = vec![7u8; 70];
        let probes = mask_probes(&t, &Dictionary::base(), &mut rng);
        assert_eq!(probes.len(), 4 * t.len());
        for m in &probes {
            let out = mutate(&t, m).unwrap();
            assert_eq!(canonicalize(out, t.len()).len(), t.len());
        }
        assert!(mask_probes(&[], &Dictionary::base(), &mut rng).is_empty());
    }

    #[test]
    fn replace_writes_word_tails() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let d = Dictionary {
            values: vec![Word::from(0x1234u16)],
        };
        let t = vec![0u8; 64];
        let m = replace_at(&t, 32 + 30, &d, &mut rng);
        assert_eq!((m.n, m.payload.clone()), (2, vec![0x12, 0x34]));
        let m = replace_at(&t, 32, &d, &mut rng);
        let out = mutate(&t, &m).unwrap();
        assert_eq!(word::from_be(&out[32..]), Word::from(0x1234u16));
    }

    #[test]
    fn harvest_finds_the_wager_constant() {
        let pkg = crate::frontend::compile_source(crate::contracts::GUESS_NUMBER).unwrap();
        let c = harvest_constants(&pkg);
        assert!(c.contains(&Word::from(88u128 * crate::word::FINNEY)));
        assert!(c.contains(&Word::from(42u8)));
        // label pushes feed jumps and are left out
        let jumpdests: Vec<Word> = pkg
            .cfg
            .blocks
            .iter()
            .filter(|b| pkg.bytecode[b.start] == Opcode::JumpDest.to_byte())
            .map(|b| Word::from(b.start))
            .collect();
        assert!(jumpdests.iter().any(|d| !c.contains(d)));
        let dict = Dictionary::with_constants(&pkg);
        assert!(dict.values.len() > Dictionary::base().values.len());
    }
}
