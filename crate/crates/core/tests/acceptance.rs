// Acceptance suite. Prints one PASS/FAIL line per criterion and exits
// non-zero if any failed. Tolerances are the constants below.

use std::collections::BTreeSet;
use std::sync::Arc;
use std::time::{Duration, Instant};

use num_bigint::BigUint;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statefuzz::campaign::{self, CampaignConfig, CampaignExecutor, CampaignReport};
use statefuzz::cfg::BranchId;
use statefuzz::contracts;
use statefuzz::corpus::{Seed, SeedQueue};
use statefuzz::depgraph::{self, build_graph, DependencyGraph, SequenceTemplate};
use statefuzz::energy::{self, BranchWeight, BranchWeightTable};
use statefuzz::frontend::compile_source;
use statefuzz::maskmut::{pick_target, Dictionary, Executor, MutationConfig, Mutator};
use statefuzz::oracles::{self, BugClass};
use statefuzz::package::{ContractPackage, FunctionAbi};
use statefuzz::vm::trace::ArithOp;
use statefuzz::vm::{execute_fresh, owner_address, TxInput, VmConfig};
use statefuzz::word::Word;

const SEEDS: u64 = 10;
const CROWDSALE_SECONDS: f64 = 30.0;
const NO_SEQ_MAX_PERCENT: f64 = 90.0;
const NO_SEQ_MIN_SEEDS: usize = 9;
const GUESS_MIN_SEEDS: usize = 8;
const FACT_SETS: u64 = 500;
const MASK_SEEDS: u64 = 200;
const ALLOC_TABLES: u64 = 100;
const IO_PAIRS: usize = 10_000;
const SUITE_LIMIT: Duration = Duration::from_secs(600);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn run(cfg: &CampaignConfig, src: &str) -> CampaignReport {
    campaign::run_campaign_source(src, cfg).expect("bundled contract compiles").report
}

fn crowdsale() -> Outcome {
    let mut full = 0;
    let mut slowest = 0f64;
    let mut low = 0;
    let mut no_seq = Vec::new();
    for seed in 1..=SEEDS {
        let cfg = CampaignConfig {
            rng_seed: seed,
            time_budget: Duration::from_secs_f64(CROWDSALE_SECONDS),
            ..CampaignConfig::default()
        };
        let r = run(&cfg, contracts::CROWDSALE);
        slowest = slowest.max(r.wall_clock);
        if r.branch_coverage_percent >= 100.0 && r.findings.iter().any(|f| f.line == Some(31)) && r.wall_clock <= CROWDSALE_SECONDS {
            full += 1;
        }
        let r = run(
            &CampaignConfig {
                seq_mutation: false,
                ..cfg
            },
            contracts::CROWDSALE,
        );
        no_seq.push(r.branch_coverage_percent);
        if r.branch_coverage_percent <= NO_SEQ_MAX_PERCENT {
            low += 1;
        }
    }
    outcome(
        full == SEEDS && low >= NO_SEQ_MIN_SEEDS,
        format!(
            "{full}/{SEEDS} seeds reach 100% with the line-31 finding (slowest {slowest:.2}s); \
             without sequence mutation {low}/{SEEDS} stay <= {NO_SEQ_MAX_PERCENT}% {no_seq:?}"
        ),
    )
}

/// The arm of the line-6 test that leads into the line-9 test.
fn wager_branch(pkg: &ContractPackage) -> BranchId {
    let inner: BTreeSet<usize> = pkg.pcs_at_line(9).into_iter().collect();
    pkg.cfg
        .branches()
        .into_iter()
        .filter(|b| {
            let jumpi = pkg.cfg.block(b.src()).and_then(|blk| blk.jumpi);
            jumpi.and_then(|pc| pkg.line_of(pc)) == Some(6)
        })
        .find(|b| pkg.cfg.reachable_pcs(b.dst()).iter().any(|pc| inner.contains(pc)))
        .expect("guess_number has a wager test")
}

fn guess_number() -> Outcome {
    let pkg = compile_source(contracts::GUESS_NUMBER).unwrap();
    let target = wager_branch(&pkg);
    let (mut with, mut without) = (0, 0);
    for seed in 1..=SEEDS {
        let cfg = CampaignConfig {
            rng_seed: seed,
            ..CampaignConfig::default()
        };
        if campaign::run_campaign(&pkg, &cfg).report.covers(target) {
            with += 1;
        }
        let bare = CampaignConfig {
            use_mask: false,
            harvest_constants: false,
            ..cfg
        };
        if campaign::run_campaign(&pkg, &bare).report.covers(target) {
            without += 1;
        }
    }
    outcome(
        with >= GUESS_MIN_SEEDS && without == 0,
        format!("branch {target} covered on {with}/{SEEDS} seeds with mask and constants, {without}/{SEEDS} without"),
    )
}

fn random_graph(rng: &mut ChaCha8Rng) -> (DependencyGraph, Vec<FunctionAbi>) {
    let nf = rng.gen_range(2..=8);
    let nv = rng.gen_range(1..=5);
    let abi_of = |name: String, ctor: bool| FunctionAbi {
        name,
        params: Vec::new(),
        payable: false,
        entry_offset: 0,
        is_constructor: ctor,
    };
    let mut abi = vec![abi_of("constructor".into(), true)];
    let mut g = DependencyGraph::default();
    for i in 0..nf {
        let f = format!("f{i}");
        let pick = |rng: &mut ChaCha8Rng| -> BTreeSet<String> {
            (0..nv).filter(|_| rng.gen_bool(0.3)).map(|v| format!("v{v}")).collect()
        };
        let (w, r) = (pick(rng), pick(rng));
        if !w.is_empty() {
            g.writes.insert(f.clone(), w);
        }
        if !r.is_empty() {
            g.reads.insert(f.clone(), r);
        }
        abi.push(abi_of(f, false));
    }
    (g, abi)
}

/// Writer-precedes-reader violations in `t`, judged by a transitive closure
/// computed from the raw write/read sets.
fn order_violations(g: &DependencyGraph, abi: &[FunctionAbi], t: &SequenceTemplate) -> usize {
    let fns: Vec<&str> = abi.iter().filter(|f| !f.is_constructor).map(|f| f.name.as_str()).collect();
    let n = fns.len();
    let edge = |a: &str, b: &str| {
        let w = g.writes.get(a).cloned().unwrap_or_default();
        let r = g.reads.get(b).cloned().unwrap_or_default();
        a != b && !w.is_disjoint(&r)
    };
    let mut reach = vec![vec![false; n]; n];
    for i in 0..n {
        for j in 0..n {
            reach[i][j] = edge(fns[i], fns[j]);
        }
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if reach[i][k] && reach[k][j] {
                    reach[i][j] = true;
                }
            }
        }
    }
    let pos = |f: &str| t.calls.iter().position(|c| c == f);
    let mut bad = 0;
    for i in 0..n {
        for j in 0..n {
            if edge(fns[i], fns[j]) && !reach[j][i] {
                match (pos(fns[i]), pos(fns[j])) {
                    (Some(a), Some(b)) if a < b => {}
                    _ => bad += 1,
                }
            }
        }
    }
    bad
}

fn sequence_order() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut violations = 0;
    let mut pairs = 0;
    for _ in 0..FACT_SETS {
        let (g, abi) = random_graph(&mut rng);
        let t = depgraph::order_sequence(&g, &abi);
        violations += order_violations(&g, &abi, &t);
        pairs += abi.iter().filter(|f| g.is_stateful(&f.name)).count();
        if t.calls.first().map(String::as_str) != Some("constructor") {
            violations += 1;
        }
    }
    outcome(
        violations == 0,
        format!("{FACT_SETS} random fact sets ({pairs} stateful functions), {violations} violations"),
    )
}

struct Counting<'a> {
    inner: &'a mut CampaignExecutor,
    streams: u64,
}

impl Executor for Counting<'_> {
    fn run(&mut self, template: &Arc<SequenceTemplate>, streams: Vec<Vec<u8>>) -> Vec<Seed> {
        self.streams += streams.len() as u64;
        self.inner.run(template, streams)
    }
}

fn mask_discipline() -> Outcome {
    let pkg = Arc::new(compile_source(contracts::GUESS_NUMBER).unwrap());
    let cfg = CampaignConfig::default();
    let template = Arc::new(campaign::campaign_template(&pkg, &build_graph(&pkg), &cfg));
    let depths = pkg.cfg.nesting_depths();
    let dict = Dictionary::with_constants(&pkg);
    let mut exec = CampaignExecutor::new(pkg.clone(), &cfg, Instant::now() + Duration::from_secs(3600));
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut emitted, mut anchored_empty, mut outside, mut probe_mismatch, mut masked) = (0u64, 0u64, 0u64, 0u64, 0u64);
    for k in 0..MASK_SEEDS {
        let sender = cfg.vm.accounts[k as usize % cfg.vm.accounts.len()];
        let inputs = campaign::random_inputs(&pkg, &template, &cfg.vm, sender, &mut rng);
        let seed = exec.run_inputs(&template, vec![inputs]).remove(0);
        let len = seed.stream().len() as u64;
        let mut queue = SeedQueue::new(pkg.cfg.branches());
        let id = queue.select_seeds(vec![seed])[0].id;
        let mut table = BranchWeightTable::zeroed(&pkg);
        energy::allocate(&mut table, 1_000_000);
        if pick_target(queue.get(id).unwrap(), &queue, &table, &depths).is_none() {
            continue;
        }
        let mut mutator = Mutator::new(
            &depths,
            &dict,
            MutationConfig {
                record: true,
                ..MutationConfig::default()
            },
        );
        let mut budget = 4 * len + 256;
        let mut pending = Vec::new();
        let mut counting = Counting {
            inner: &mut exec,
            streams: 0,
        };
        let stats = mutator.mutation_round(&[id], &mut queue, &mut table, &mut budget, &mut pending, &mut counting, &mut rng);
        masked += 1;
        if stats.masks_computed != 1 || stats.probes != 4 * len || counting.streams != stats.probes + stats.mutants {
            probe_mismatch += 1;
        }
        let mask = &stats.masks[&id];
        for e in &stats.log {
            emitted += 1;
            if mask.kinds(e.mutation.i).is_empty() {
                anchored_empty += 1;
            }
            let span = e.mutation.i..e.mutation.i + e.mutation.n.max(1);
            if span.clone().any(|j| j >= mask.len() || !mask.allows(j, e.mutation.x)) {
                outside += 1;
            }
        }
    }
    outcome(
        anchored_empty == 0 && outside == 0 && probe_mismatch == 0 && masked > 0,
        format!(
            "{masked}/{MASK_SEEDS} seeds masked, {emitted} mutants, {anchored_empty} at empty positions, \
             {outside} outside the mask, {probe_mismatch} probe-count mismatches"
        ),
    )
}

fn allocation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut off = 0;
    for _ in 0..ALLOC_TABLES {
        let mut t = BranchWeightTable::default();
        for b in 0..rng.gen_range(1..=40) {
            t.entries.insert(
                BranchId(b, b + 1),
                BranchWeight {
                    w1: rng.gen_range(0..20),
                    w2: if rng.gen_bool(0.3) { energy::W2_CONST } else { 0 },
                    ..BranchWeight::default()
                },
            );
        }
        let budget = rng.gen_range(0..200_000);
        energy::allocate(&mut t, budget);
        if t.entries.values().map(|w| w.allocated_energy).sum::<u64>() != budget {
            off += 1;
        }
    }
    let mut two = BranchWeightTable::default();
    two.entries.insert(BranchId(0, 1), BranchWeight::default());
    two.entries.insert(
        BranchId(0, 2),
        BranchWeight {
            w2: 4,
            ..BranchWeight::default()
        },
    );
    energy::allocate(&mut two, 12);
    let split: Vec<u64> = two.entries.values().map(|w| w.allocated_energy).collect();
    outcome(
        off == 0 && split == [2, 10],
        format!("{off}/{ALLOC_TABLES} tables off budget; weights {{0,4}} with budget 12 give {split:?}"),
    )
}

const ARITH: &str = "contract Arith {
    uint256 s;
    uint256 d;
    uint256 p;
    fn f(a: uint256, b: uint256) {
        s = a + b;
        d = a - b;
        p = a * b;
    }
}";

fn big(w: &Word) -> BigUint {
    BigUint::from_bytes_be(&w.to_be_bytes::<32>())
}

fn random_word(rng: &mut ChaCha8Rng) -> Word {
    let mut b = [0u8; 32];
    let n = rng.gen_range(0..=32);
    rng.fill(&mut b[32 - n..]);
    Word::from_be_bytes(b)
}

/// Wrap flags and stored results checked against arbitrary precision.
fn io_wraparound() -> usize {
    let pkg = compile_source(ARITH).unwrap();
    let vm = VmConfig {
        record_steps: false,
        ..VmConfig::default()
    };
    let modulus = BigUint::from(1u8) << 256;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut bad = 0;
    for _ in 0..IO_PAIRS {
        let (a, b) = (random_word(&mut rng), random_word(&mut rng));
        let deploy = TxInput {
            function: "constructor".into(),
            sender: owner_address(),
            value: Word::ZERO,
            args: Vec::new(),
        };
        let tx = TxInput {
            function: "f".into(),
            sender: owner_address(),
            value: Word::ZERO,
            args: vec![a, b],
        };
        let e = execute_fresh(&pkg, &vm, &[deploy, tx], 0).unwrap();
        let t = &e.traces[1];
        if t.reverted {
            bad += 1;
            continue;
        }
        let (x, y) = (big(&a), big(&b));
        let expect = [
            (ArithOp::ADD, (&x + &y) >= modulus, (&x + &y) % &modulus),
            (ArithOp::SUB, x < y, (&x + &modulus - &y) % &modulus),
            (ArithOp::MUL, (&x * &y) >= modulus, (&x * &y) % &modulus),
        ];
        let mut any = false;
        for (slot, (op, wraps, value)) in expect.into_iter().enumerate() {
            any |= wraps;
            let flagged = t.wrap_events.iter().any(|w| w.op == op && w.wrapped);
            if flagged != wraps || big(&e.state.slot(slot as u64)) != value {
                bad += 1;
            }
        }
        if oracles::check_io(t).is_empty() == any {
            bad += 1;
        }
    }
    bad
}

fn oracle_fixtures() -> Outcome {
    let mut tp = 0;
    let mut fp = 0;
    let mut misses = Vec::new();
    for (class, vuln, patched) in contracts::ORACLE_FIXTURES {
        let class: BugClass = class.parse().unwrap();
        let cfg = CampaignConfig {
            rng_seed: 1,
            time_budget: Duration::from_secs(60),
            ..CampaignConfig::default()
        };
        if run(&cfg, vuln).findings.iter().any(|f| f.bug_class == class) {
            tp += 1;
        } else {
            misses.push(format!("{class} missed"));
        }
        let stray: Vec<String> = run(&cfg, patched).findings.iter().map(|f| f.bug_class.to_string()).collect();
        if !stray.is_empty() {
            fp += 1;
            misses.push(format!("{class} patched reports {stray:?}"));
        }
    }
    let io_bad = io_wraparound();
    outcome(
        tp == 9 && fp == 0 && io_bad == 0,
        format!("{tp}/9 true positives, {fp}/9 patched fixtures with findings, {io_bad}/{IO_PAIRS} wraparound mismatches {misses:?}"),
    )
}

fn determinism() -> Outcome {
    let mut same = 0;
    let runs: Vec<(&str, u64)> = vec![("crowdsale", 7), ("guess_number", 11), ("re_vuln", 2)];
    for (name, seed) in &runs {
        let cfg = CampaignConfig {
            rng_seed: *seed,
            workers: 1,
            ..CampaignConfig::default()
        };
        let src = contracts::by_name(name).unwrap();
        let a = run(&cfg, src).deterministic_json();
        let b = run(&cfg, src).deterministic_json();
        let parallel = run(
            &CampaignConfig {
                workers: 4,
                ..cfg.clone()
            },
            src,
        )
        .deterministic_json();
        if a == b && a == parallel {
            same += 1;
        }
    }
    outcome(
        same == runs.len(),
        format!("{same}/{} contracts give identical reports across repeated and 4-worker runs", runs.len()),
    )
}

fn main() {
    let start = Instant::now();
    let criteria: Vec<(&str, fn() -> Outcome)> = vec![
        ("1 crowdsale coverage", crowdsale),
        ("2 guess-number wager", guess_number),
        ("3 writer before reader", sequence_order),
        ("4 mask discipline", mask_discipline),
        ("5 energy allocation", allocation),
        ("6 oracles", oracle_fixtures),
        ("7 determinism", determinism),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let t = Instant::now();
        let o = f();
        println!("{} {name}: {} ({:.1}s)", if o.pass { "PASS" } else { "FAIL" }, o.detail, t.elapsed().as_secs_f64());
        failed += usize::from(!o.pass);
    }
    let total = start.elapsed();
    let ok = total <= SUITE_LIMIT;
    println!(
        "{} 8 suite runtime: {:.1}s of {}s",
        if ok { "PASS" } else { "FAIL" },
        total.as_secs_f64(),
        SUITE_LIMIT.as_secs()
    );
    failed += usize::from(!ok);
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
