//! Instrumented interpreter for compiled contracts.
//!
//! A sequence of transactions runs against one [`ChainState`]; each
//! transaction yields a [`TxTrace`]. External calls move ether to plain
//! accounts; a call forwarding more than 2300 gas to the attacker account
//! re-enters the calling function once. Call outcomes are drawn from a
//! per-execution RNG so a recorded `exec_seed` replays exactly.

mod interp;
pub mod taint;
pub mod trace;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::package::ContractPackage;
use crate::word::{self, Word};

pub use taint::Taint;
pub use trace::{coverage_of, dump_json, dump_text, TxTrace};

/// Size of every encoded field (sender, value, each argument).
pub const WORD_BYTES: usize = 32;

/// Gas stipend at or below which a call cannot re-enter.
pub const STIPEND: u64 = 2300;

fn addr(tag: u8) -> Word {
    word::from_be(&[tag; 20])
}

pub fn owner_address() -> Word {
    addr(0x11)
}

pub fn user_address() -> Word {
    addr(0x22)
}

pub fn attacker_address() -> Word {
    addr(0xaa)
}

pub fn contract_address() -> Word {
    addr(0xcc)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct VmConfig {
    /// Sender accounts; the first deploys the contract.
    pub accounts: Vec<Word>,
    pub attacker: Word,
    pub initial_balance: Word,
    pub step_limit: usize,
    /// Make value transfers fail with probability 1/2.
    pub call_failures: bool,
    /// Record every executed instruction in `TxTrace::steps`.
    pub record_steps: bool,
}

impl Default for VmConfig {
    fn default() -> Self {
        VmConfig {
            accounts: vec![owner_address(), user_address(), attacker_address()],
            attacker: attacker_address(),
            initial_balance: Word::from(1u8) << 96,
            step_limit: 100_000,
            call_failures: true,
            record_steps: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockEnv {
    pub timestamp: Word,
    pub number: Word,
}

impl Default for BlockEnv {
    fn default() -> Self {
        BlockEnv {
            timestamp: Word::from(1_700_000_000u64),
            number: Word::from(1_000u64),
        }
    }
}

/// One call with concrete inputs.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TxInput {
    pub function: String,
    pub sender: Word,
    pub value: Word,
    pub args: Vec<Word>,
}

impl TxInput {
    /// Encoded width for a function taking `arity` arguments.
    pub fn width(arity: usize) -> usize {
        WORD_BYTES * (2 + arity)
    }

    /// `sender ‖ value ‖ args`, each a big-endian 32-byte word.
    pub fn raw_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(Self::width(self.args.len()));
        out.extend_from_slice(&word::to_be(&self.sender));
        out.extend_from_slice(&word::to_be(&self.value));
        for a in &self.args {
            out.extend_from_slice(&word::to_be(a));
        }
        out
    }

    /// Inverse of [`TxInput::raw_bytes`]; `raw` must be exactly `width(arity)` long.
    pub fn from_raw(function: &str, raw: &[u8]) -> TxInput {
        debug_assert_eq!(raw.len() % WORD_BYTES, 0);
        let words: Vec<Word> = raw.chunks(WORD_BYTES).map(word::from_be).collect();
        TxInput {
            function: function.to_string(),
            sender: words[0],
            value: words[1],
            args: words[2..].to_vec(),
        }
    }
}

/// Concatenated encoding of a whole sequence.
pub fn encode_stream(inputs: &[TxInput]) -> Vec<u8> {
    inputs.iter().flat_map(|t| t.raw_bytes()).collect()
}

/// Splits `stream` back into transactions for `calls`, padding with zeros or
/// truncating so every call gets exactly its encoded width.
pub fn decode_stream(pkg: &ContractPackage, calls: &[String], stream: &[u8]) -> Vec<TxInput> {
    let mut at = 0;
    let mut out = Vec::with_capacity(calls.len());
    for name in calls {
        let arity = pkg.function(name).map_or(0, |f| f.params.len());
        let w = TxInput::width(arity);
        let mut buf = vec![0u8; w];
        if at < stream.len() {
            let n = (stream.len() - at).min(w);
            buf[..n].copy_from_slice(&stream[at..at + n]);
        }
        at += w;
        out.push(TxInput::from_raw(name, &buf));
    }
    out
}

/// State that persists across the transactions of a sequence.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainState {
    pub storage: BTreeMap<Word, Word>,
    pub mappings: BTreeMap<(Word, Word), Word>,
    #[serde(skip)]
    pub storage_taint: BTreeMap<Word, Taint>,
    #[serde(skip)]
    pub mapping_taint: BTreeMap<(Word, Word), Taint>,
    pub balances: BTreeMap<Word, Word>,
    pub deployed: bool,
    pub destroyed: bool,
    pub block: BlockEnv,
}

impl ChainState {
    pub fn new(cfg: &VmConfig, block: BlockEnv) -> ChainState {
        let mut balances = BTreeMap::new();
        for a in &cfg.accounts {
            balances.insert(*a, cfg.initial_balance);
        }
        balances.insert(cfg.attacker, cfg.initial_balance);
        ChainState {
            balances,
            block,
            ..ChainState::default()
        }
    }

    pub fn balance(&self, a: &Word) -> Word {
        self.balances.get(a).copied().unwrap_or(Word::ZERO)
    }

    pub fn slot(&self, slot: u64) -> Word {
        self.storage.get(&Word::from(slot)).copied().unwrap_or(Word::ZERO)
    }

    pub fn mapping(&self, slot: u64, key: Word) -> Word {
        self.mappings.get(&(Word::from(slot), key)).copied().unwrap_or(Word::ZERO)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum VmError {
    #[error("unknown function `{0}`")]
    UnknownFunction(String),
    #[error("function `{function}` expects {expected} arguments, got {got}")]
    Arity {
        function: String,
        expected: usize,
        got: usize,
    },
}

/// Result of running a sequence.
#[derive(Debug, Clone)]
pub struct Execution {
    pub traces: Vec<TxTrace>,
    pub state: ChainState,
}

/// Runs `seq` from `state`. Each transaction advances the block number by
/// one and the timestamp by 15 seconds before it executes.
pub fn execute_sequence(
    pkg: &ContractPackage,
    cfg: &VmConfig,
    seq: &[TxInput],
    state: ChainState,
    exec_seed: u64,
) -> Result<Execution, VmError> {
    for tx in seq {
        let f = pkg
            .function(&tx.function)
            .ok_or_else(|| VmError::UnknownFunction(tx.function.clone()))?;
        if f.params.len() != tx.args.len() {
            return Err(VmError::Arity {
                function: tx.function.clone(),
                expected: f.params.len(),
                got: tx.args.len(),
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(exec_seed);
    let mut state = state;
    let mut traces = Vec::with_capacity(seq.len());
    for tx in seq {
        state.block.number += Word::from(1u8);
        state.block.timestamp += Word::from(15u8);
        traces.push(interp::execute_tx(pkg, cfg, &mut state, tx, &mut rng));
    }
    Ok(Execution { traces, state })
}

/// Convenience wrapper starting from a fresh chain.
pub fn execute_fresh(
    pkg: &ContractPackage,
    cfg: &VmConfig,
    seq: &[TxInput],
    exec_seed: u64,
) -> Result<Execution, VmError> {
    execute_sequence(pkg, cfg, seq, ChainState::new(cfg, BlockEnv::default()), exec_seed)
}
