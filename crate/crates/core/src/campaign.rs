//! End-to-end fuzzing campaigns.
//!
//! One round selects seeds from everything executed since the last round,
//! orders the queue by branch weight and runs the mask-guided mutation
//! stage. Executions are batched; a batch runs on the worker pool and is
//! processed in submission order, and every per-execution RNG seed is drawn
//! before the batch starts, so the worker count never changes a result.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cfg::BranchId;
use crate::corpus::{Seed, SeedFile, SeedFileError, SeedQueue};
use crate::depgraph::{self, build_graph, order_sequence, DependencyGraph, SequenceTemplate};
use crate::energy::{self, BranchWeightTable};
use crate::frontend::{self, CompileError};
use crate::maskmut::{Dictionary, Executor, MutationConfig, MutationMask, Mutator};
use crate::oracles::{self, BugClass, CampaignSummary, Hit, OracleOptions};
use crate::package::{ContractPackage, ValueType};
use crate::vm::{self, decode_stream, execute_fresh, TxInput, TxTrace, VmConfig};
use crate::word::{self, Word};

#[derive(Debug, Clone)]
pub struct CampaignConfig {
    pub time_budget: Duration,
    /// Total executions, initial seeds and probes included.
    pub energy_budget: u64,
    pub rng_seed: u64,
    pub max_dup: usize,
    pub w2_const: u64,
    pub refund_new: u64,
    pub per_seed_cap: u64,
    /// Initial seeds generated per sender account.
    pub seeds_per_sender: usize,
    /// 1 runs everything on the calling thread.
    pub workers: usize,
    pub batch: usize,
    pub seq_mutation: bool,
    pub use_mask: bool,
    pub use_energy: bool,
    /// Add `PUSH` operands to the replacement dictionary.
    pub harvest_constants: bool,
    pub se_include_ordering: bool,
    pub vm: VmConfig,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        CampaignConfig {
            time_budget: Duration::from_secs(600),
            energy_budget: 50_000,
            rng_seed: 0,
            max_dup: depgraph::DEFAULT_MAX_DUP,
            w2_const: energy::W2_CONST,
            refund_new: energy::REFUND_NEW,
            per_seed_cap: 256,
            seeds_per_sender: 4,
            workers: 1,
            batch: 64,
            seq_mutation: true,
            use_mask: true,
            use_energy: true,
            harvest_constants: true,
            se_include_ordering: false,
            vm: VmConfig {
                record_steps: false,
                ..VmConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Finding {
    pub bug_class: BugClass,
    pub pc: usize,
    pub line: Option<u32>,
    pub function: Option<String>,
    pub evidence: String,
    pub witness: SeedFile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RoundRecord {
    pub round: u64,
    pub executions: u64,
    pub covered_branches: usize,
    pub coverage_percent: f64,
    pub queue_size: usize,
    #[serde(skip)]
    pub elapsed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CampaignReport {
    pub contract: String,
    pub rng_seed: u64,
    pub template: Vec<String>,
    pub branch_coverage_percent: f64,
    pub total_branches: usize,
    pub covered_branch_ids: Vec<String>,
    pub findings: Vec<Finding>,
    pub executions: u64,
    pub rounds: Vec<RoundRecord>,
    pub wall_clock: f64,
}

#[derive(Serialize)]
struct CsvRow {
    round: u64,
    elapsed_seconds: f64,
    executions: u64,
    covered_branches: usize,
    coverage_percent: f64,
}

impl CampaignReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// The report without its wall-clock field, for comparing runs.
    pub fn deterministic_json(&self) -> String {
        let mut v = serde_json::to_value(self).expect("report serializes");
        v.as_object_mut().unwrap().remove("wallClock");
        serde_json::to_string_pretty(&v).unwrap()
    }

    pub fn coverage_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rounds {
            w.serialize(CsvRow {
                round: r.round,
                elapsed_seconds: r.elapsed,
                executions: r.executions,
                covered_branches: r.covered_branches,
                coverage_percent: r.coverage_percent,
            })
            .expect("row serializes");
        }
        String::from_utf8(w.into_inner().expect("in-memory writer")).unwrap()
    }

    pub fn covers(&self, b: BranchId) -> bool {
        self.covered_branch_ids.contains(&b.to_string())
    }

    pub fn has_finding(&self, class: BugClass, line: u32) -> bool {
        self.findings.iter().any(|f| f.bug_class == class && f.line == Some(line))
    }
}

/// Everything a campaign produced, beyond the report.
#[derive(Debug, Clone)]
pub struct CampaignOutcome {
    pub report: CampaignReport,
    pub graph: DependencyGraph,
    pub template: SequenceTemplate,
    pub weights: BranchWeightTable,
    /// First mask computed, with the stream it was computed for.
    pub first_mask: Option<(Vec<u8>, MutationMask)>,
    /// The queued seed covering the most branches.
    pub best_seed: Option<SeedFile>,
}

#[derive(Debug, Error)]
pub enum CampaignError {
    #[error("{0}")]
    Compile(#[from] CompileError),
    #[error(transparent)]
    Seed(#[from] SeedFileError),
    #[error(transparent)]
    Vm(#[from] vm::VmError),
}

enum Pool {
    Sequential,
    #[cfg(feature = "parallel")]
    Threads(rayon::ThreadPool),
}

impl Pool {
    fn new(workers: usize) -> Pool {
        #[cfg(feature = "parallel")]
        if workers != 1 {
            if let Ok(p) = rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
                return Pool::Threads(p);
            }
        }
        let _ = workers;
        Pool::Sequential
    }

    fn map<T: Sync, U: Send>(&self, items: &[T], f: impl Fn(&T) -> U + Sync + Send) -> Vec<U> {
        match self {
            Pool::Sequential => items.iter().map(f).collect(),
            #[cfg(feature = "parallel")]
            Pool::Threads(p) => {
                use rayon::prelude::*;
                p.install(|| items.par_iter().map(f).collect())
            }
        }
    }
}

/// Runs each job from a fresh chain. Results come back in job order.
pub fn execute_batch(
    pkg: &ContractPackage,
    cfg: &VmConfig,
    jobs: &[(Vec<TxInput>, u64)],
    workers: usize,
) -> Vec<Vec<TxTrace>> {
    Pool::new(workers).map(jobs, |(seq, es)| {
        execute_fresh(pkg, cfg, seq, *es).map(|e| e.traces).unwrap_or_default()
    })
}

struct Observed {
    seed: Seed,
    hits: Vec<Hit>,
    released: bool,
}

/// Executes candidate streams, checks every oracle and records findings.
pub struct CampaignExecutor {
    pkg: Arc<ContractPackage>,
    pkg_hash: String,
    vm: VmConfig,
    oracle: OracleOptions,
    all_branches: BTreeSet<BranchId>,
    rng: ChaCha8Rng,
    pool: Pool,
    batch: usize,
    deadline: Instant,
    pub executions: u64,
    pub findings: BTreeMap<(BugClass, usize), Finding>,
    pub released: bool,
}

impl CampaignExecutor {
    pub fn new(pkg: Arc<ContractPackage>, cfg: &CampaignConfig, deadline: Instant) -> CampaignExecutor {
        CampaignExecutor {
            pkg_hash: pkg.hash(),
            all_branches: pkg.cfg.branches(),
            vm: cfg.vm.clone(),
            oracle: OracleOptions {
                attacker: cfg.vm.attacker,
                se_include_ordering: cfg.se_include_ordering,
            },
            rng: ChaCha8Rng::seed_from_u64(cfg.rng_seed ^ 0x9e37_79b9_7f4a_7c15),
            pool: Pool::new(cfg.workers),
            batch: cfg.batch.max(1),
            deadline,
            executions: 0,
            findings: BTreeMap::new(),
            released: false,
            pkg,
        }
    }

    fn observe(&self, template: &Arc<SequenceTemplate>, inputs: Vec<TxInput>, exec_seed: u64) -> Observed {
        let mut seed = Seed::new(template.clone(), inputs, exec_seed);
        match execute_fresh(&self.pkg, &self.vm, &seed.inputs, exec_seed) {
            Ok(exec) => {
                seed.observe(&self.pkg.cfg, &exec.traces, &self.all_branches);
                Observed {
                    hits: oracles::check_traces(&exec.traces, &self.oracle),
                    released: oracles::releases_ether(&exec.traces),
                    seed,
                }
            }
            Err(_) => Observed {
                seed,
                hits: Vec::new(),
                released: false,
            },
        }
    }

    /// Executes concrete input sequences.
    pub fn run_inputs(&mut self, template: &Arc<SequenceTemplate>, inputs: Vec<Vec<TxInput>>) -> Vec<Seed> {
        let mut out = Vec::with_capacity(inputs.len());
        let mut it = inputs.into_iter().peekable();
        while it.peek().is_some() {
            let chunk: Vec<(Vec<TxInput>, u64)> = it.by_ref().take(self.batch).map(|i| (i, self.rng.gen())).collect();
            let this = &*self;
            let observed = this.pool.map(&chunk, |(i, es)| this.observe(template, i.clone(), *es));
            for o in observed {
                self.record(o.hits, &o.seed);
                self.released |= o.released;
                self.executions += 1;
                out.push(o.seed);
            }
        }
        out
    }

    fn record(&mut self, hits: Vec<Hit>, seed: &Seed) {
        for h in hits {
            self.findings.entry((h.class, h.pc)).or_insert_with(|| Finding {
                bug_class: h.class,
                pc: h.pc,
                line: self.pkg.line_of(h.pc),
                function: h.tx.map(|i| seed.inputs[i].function.clone()),
                evidence: h.evidence,
                witness: SeedFile::new(&self.pkg_hash, &seed.inputs, seed.exec_seed),
            });
        }
    }

    pub fn add_ef(&mut self, witness: &Seed) {
        let summary = CampaignSummary {
            released: self.released,
        };
        let hits = oracles::check_ef(&self.pkg, &summary);
        self.record(hits, witness);
    }
}

impl Executor for CampaignExecutor {
    fn run(&mut self, template: &Arc<SequenceTemplate>, streams: Vec<Vec<u8>>) -> Vec<Seed> {
        let inputs = streams
            .iter()
            .map(|s| decode_stream(&self.pkg, &template.calls, s))
            .collect();
        self.run_inputs(template, inputs)
    }

    fn expired(&self) -> bool {
        Instant::now() >= self.deadline
    }
}

fn random_magnitude<R: Rng>(rng: &mut R, max_bytes: usize) -> Word {
    let n = rng.gen_range(1..=max_bytes);
    let bytes: Vec<u8> = (0..n).map(|_| rng.gen()).collect();
    word::from_be(&bytes)
}

fn random_uint<R: Rng>(rng: &mut R, dict: &Dictionary) -> Word {
    match rng.gen_range(0..10) {
        0 | 1 => Word::from(rng.gen_range(0u8..=16)),
        2 | 3 => *dict.values.choose(rng).unwrap(),
        _ => random_magnitude(rng, 32),
    }
}

/// One random instantiation of `template`. The deployer sends the
/// constructor; every other call comes from `sender` half the time and from
/// a random account otherwise.
pub fn random_inputs<R: Rng>(
    pkg: &ContractPackage,
    template: &SequenceTemplate,
    vm: &VmConfig,
    sender: Word,
    rng: &mut R,
) -> Vec<TxInput> {
    let deployer = vm.accounts.first().copied().unwrap_or_else(vm::owner_address);
    let base = Dictionary::base();
    let mut addresses = vm.accounts.clone();
    addresses.push(vm.attacker);
    addresses.push(vm::contract_address());
    let mut senders = vm.accounts.clone();
    if !senders.contains(&vm.attacker) {
        senders.push(vm.attacker);
    }
    template
        .calls
        .iter()
        .filter_map(|c| pkg.function(c))
        .map(|f| TxInput {
            function: f.name.clone(),
            sender: if f.is_constructor {
                deployer
            } else if rng.gen_bool(0.5) {
                sender
            } else {
                *senders.choose(rng).unwrap()
            },
            value: if f.payable {
                random_magnitude(rng, 12)
            } else {
                Word::ZERO
            },
            args: f
                .params
                .iter()
                .map(|p| match p.ty {
                    ValueType::Address if rng.gen_bool(0.8) => *addresses.choose(rng).unwrap(),
                    ValueType::Bool => Word::from(rng.gen_bool(0.5) as u8),
                    _ => random_uint(rng, &base),
                })
                .collect(),
        })
        .collect()
}

/// The sequence template a campaign fuzzes.
pub fn campaign_template(pkg: &ContractPackage, g: &DependencyGraph, cfg: &CampaignConfig) -> SequenceTemplate {
    let base = order_sequence(g, &pkg.functions);
    if cfg.seq_mutation {
        depgraph::revisit_readers(&depgraph::mutate_sequence(&base, g, cfg.max_dup), g)
    } else {
        base
    }
}

pub fn run_campaign_source(src: &str, cfg: &CampaignConfig) -> Result<CampaignOutcome, CampaignError> {
    let pkg = frontend::compile_source(src)?;
    Ok(run_campaign(&pkg, cfg))
}

fn percent(covered: usize, total: usize) -> f64 {
    if total == 0 {
        100.0
    } else {
        covered as f64 * 100.0 / total as f64
    }
}

pub fn run_campaign(pkg: &ContractPackage, cfg: &CampaignConfig) -> CampaignOutcome {
    let start = Instant::now();
    let pkg = Arc::new(pkg.clone());
    let mut exec = CampaignExecutor::new(pkg.clone(), cfg, start + cfg.time_budget);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);

    let graph = build_graph(&pkg);
    let template = Arc::new(campaign_template(&pkg, &graph, cfg));
    let all = pkg.cfg.branches();
    let depths = pkg.cfg.nesting_depths();
    let mut dict = if cfg.harvest_constants {
        Dictionary::with_constants(&pkg)
    } else {
        Dictionary::base()
    };
    // lets R swap senders and address arguments
    dict.extend(cfg.vm.accounts.iter().chain([&cfg.vm.attacker, &vm::contract_address()]).copied());
    let locs = energy::vulnerable_instructions(&pkg);

    // pre-fuzz weighting
    let prefuzz = energy::prefuzz_seed(&pkg, &template, &cfg.vm);
    let prefuzz_seed = exec.run_inputs(&template, vec![prefuzz]).remove(0);
    let weigh = |inputs: &[TxInput], es: u64| -> BranchWeightTable {
        if !cfg.use_energy {
            return BranchWeightTable::zeroed(&pkg);
        }
        let traces = execute_fresh(&pkg, &cfg.vm, inputs, es).map(|e| e.traces).unwrap_or_default();
        energy::branch_weighted(&pkg, &traces, &locs, cfg.w2_const)
    };
    let mut table = weigh(&prefuzz_seed.inputs, prefuzz_seed.exec_seed);

    // initial seeds; the same generator refills the corpus when a round stalls
    let mut seen: BTreeSet<Vec<u8>> = BTreeSet::new();
    let mut fresh = |rng: &mut ChaCha8Rng, room: u64| -> Vec<Vec<TxInput>> {
        let mut out = Vec::new();
        for _ in 0..cfg.seeds_per_sender {
            for &s in &cfg.vm.accounts {
                let inputs = random_inputs(&pkg, &template, &cfg.vm, s, rng);
                if seen.insert(vm::encode_stream(&inputs)) {
                    out.push(inputs);
                }
            }
        }
        out.truncate(room as usize);
        out
    };
    let initial = fresh(&mut rng, cfg.energy_budget.saturating_sub(exec.executions));
    let mut pending = exec.run_inputs(&template, initial);
    pending.insert(0, prefuzz_seed.clone());

    let mut budget = cfg.energy_budget.saturating_sub(exec.executions);
    energy::allocate(&mut table, budget);
    let mut queue = SeedQueue::new(all.clone());
    let mut mutator = Mutator::new(
        &depths,
        &dict,
        MutationConfig {
            use_mask: cfg.use_mask,
            per_seed_cap: cfg.per_seed_cap,
            refund: cfg.refund_new,
            batch: cfg.batch.max(1),
            record: false,
        },
    );
    let mut rounds = Vec::new();
    let mut first_mask = None;
    let mut weighed_at = 0usize;
    let mut stalled = false;
    let mut round = 0u64;
    loop {
        queue.select_seeds(std::mem::take(&mut pending));
        let covered = queue.global_coverage.len();
        rounds.push(RoundRecord {
            round,
            executions: exec.executions,
            covered_branches: covered,
            coverage_percent: percent(covered, all.len()),
            queue_size: queue.seeds.len(),
            elapsed: start.elapsed().as_secs_f64(),
        });
        round += 1;
        if budget == 0 || exec.expired() {
            break;
        }
        if cfg.use_energy && covered * 10 >= weighed_at * 11 && covered > weighed_at {
            if weighed_at > 0 {
                let best = queue.seeds.iter().max_by_key(|s| (s.covered.len(), std::cmp::Reverse(s.id)));
                if let Some(best) = best {
                    let fresh = weigh(&best.inputs, best.exec_seed);
                    for (b, w) in fresh.entries {
                        let e = table.entries.get_mut(&b).unwrap();
                        (e.nested_score, e.w1, e.w2) = (w.nested_score, w.w1, w.w2);
                    }
                    energy::allocate(&mut table, budget);
                }
            }
            weighed_at = covered;
        }
        let order = if cfg.use_energy {
            energy::seed_priority(&queue, &table)
        } else {
            queue.seeds.iter().map(|s| s.id).collect()
        };
        mutator.cfg.record = first_mask.is_none();
        let stats = mutator.mutation_round(&order, &mut queue, &mut table, &mut budget, &mut pending, &mut exec, &mut rng);
        if first_mask.is_none() {
            if let Some((id, m)) = stats.masks.into_iter().find(|_| stats.masks_computed > 0) {
                first_mask = queue.get(id).map(|s| (s.stream(), m));
            }
        }
        let mut executed = stats.executions;
        if queue.global_coverage.len() == covered && budget > 0 && !exec.expired() {
            let before = exec.executions;
            let batch = fresh(&mut rng, budget);
            pending.extend(exec.run_inputs(&template, batch));
            executed += exec.executions - before;
            budget -= exec.executions - before;
        }
        if executed == 0 {
            if stalled {
                break;
            }
            stalled = true;
            energy::allocate(&mut table, budget);
        } else {
            stalled = false;
        }
    }

    exec.add_ef(&prefuzz_seed);
    let covered = queue.global_coverage.clone();
    let best_seed = queue
        .seeds
        .iter()
        .max_by_key(|s| (s.covered.len(), std::cmp::Reverse(s.id)))
        .map(|s| SeedFile::new(&pkg.hash(), &s.inputs, s.exec_seed));
    let report = CampaignReport {
        contract: pkg.name.clone(),
        rng_seed: cfg.rng_seed,
        template: template.calls.clone(),
        branch_coverage_percent: percent(covered.len(), all.len()),
        total_branches: all.len(),
        covered_branch_ids: covered.iter().map(|b| b.to_string()).collect(),
        findings: exec.findings.values().cloned().collect(),
        executions: exec.executions,
        rounds,
        wall_clock: start.elapsed().as_secs_f64(),
    };
    CampaignOutcome {
        report,
        graph,
        template: (*template).clone(),
        weights: table,
        first_mask,
        best_seed,
    }
}

/// Re-executes a recorded seed.
pub fn replay(
    seed: &SeedFile,
    pkg: &ContractPackage,
    vm: &VmConfig,
    opts: &OracleOptions,
) -> Result<(Vec<TxTrace>, Vec<Hit>), CampaignError> {
    let inputs = seed.inputs(pkg)?;
    let exec = execute_fresh(pkg, vm, &inputs, seed.exec_seed)?;
    let hits = oracles::check_traces(&exec.traces, opts);
    Ok((exec.traces, hits))
}
