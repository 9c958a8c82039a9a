//! Bug oracles over executed traces.
//!
//! Each check is a pure function of one transaction trace (EF alone looks at
//! the package and a campaign summary). Events on reverted paths are ignored.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::opcode::{disassemble, Opcode};
use crate::package::ContractPackage;
use crate::vm::taint;
use crate::vm::trace::{CallKind, SinkEvent, SinkKind, TxTrace};
use crate::word::Word;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum BugClass {
    /// Block state dependency.
    BD,
    /// Unprotected delegatecall.
    UD,
    /// Ether frozen.
    EF,
    /// Integer overflow or underflow.
    IO,
    /// Reentrancy.
    RE,
    /// Unprotected selfdestruct.
    US,
    /// Strict balance equality.
    SE,
    /// Authorization through tx.origin.
    TO,
    /// Unhandled exception.
    UE,
}

pub const ALL_CLASSES: [BugClass; 9] = [
    BugClass::BD,
    BugClass::UD,
    BugClass::EF,
    BugClass::IO,
    BugClass::RE,
    BugClass::US,
    BugClass::SE,
    BugClass::TO,
    BugClass::UE,
];

impl fmt::Display for BugClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for BugClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ALL_CLASSES
            .iter()
            .find(|c| c.to_string().eq_ignore_ascii_case(s))
            .copied()
            .ok_or_else(|| format!("unknown bug class `{s}`"))
    }
}

/// One oracle hit inside a sequence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Hit {
    pub class: BugClass,
    pub pc: usize,
    /// Index of the transaction in the sequence; `None` for EF.
    pub tx: Option<usize>,
    pub evidence: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OracleOptions {
    pub attacker: Word,
    /// Report balance comparisons with `<` and `>` too.
    pub se_include_ordering: bool,
}

impl Default for OracleOptions {
    fn default() -> Self {
        OracleOptions {
            attacker: crate::vm::attacker_address(),
            se_include_ordering: false,
        }
    }
}

fn hit(class: BugClass, pc: usize, evidence: String) -> Hit {
    Hit {
        class,
        pc,
        tx: None,
        evidence,
    }
}

fn live_sinks<'a>(t: &'a TxTrace, kinds: &'a [SinkKind], flag: u16) -> impl Iterator<Item = &'a SinkEvent> + 'a {
    t.sinks
        .iter()
        .filter(move |s| kinds.contains(&s.kind) && s.taint.has(flag) && t.frame_live(s.frame))
}

pub fn check_bd(t: &TxTrace) -> Vec<Hit> {
    let strong: Vec<Hit> = live_sinks(t, &[SinkKind::JumpiCond, SinkKind::CallValue, SinkKind::CallArgs], taint::BLOCKSTATE)
        .map(|s| hit(BugClass::BD, s.pc, format!("block state reaches {:?} at step {}", s.kind, s.step)))
        .collect();
    if !strong.is_empty() {
        return strong;
    }
    live_sinks(t, &[SinkKind::CmpOperand], taint::BLOCKSTATE)
        .map(|s| hit(BugClass::BD, s.pc, format!("block state compared at step {}", s.step)))
        .collect()
}

pub fn check_ud(t: &TxTrace) -> Vec<Hit> {
    live_sinks(t, &[SinkKind::DelegateTarget], taint::PARAM)
        .filter(|d| {
            !t.sinks.iter().any(|g| {
                g.kind == SinkKind::JumpiCond && g.frame == d.frame && g.step < d.step && g.taint.has(taint::CALLER)
            })
        })
        .map(|d| hit(BugClass::UD, d.pc, format!("parameter-controlled delegatecall at step {} without sender guard", d.step)))
        .collect()
}

pub fn check_io(t: &TxTrace) -> Vec<Hit> {
    let mut out = Vec::new();
    for s in live_sinks(t, &[SinkKind::StoreValue, SinkKind::CallValue, SinkKind::JumpiCond], taint::WRAP) {
        for &w in &s.taint.wraps {
            let Some(e) = t.wrap_events.get(w as usize) else { continue };
            if e.wrapped && !out.iter().any(|h: &Hit| h.pc == e.pc) {
                out.push(hit(
                    BugClass::IO,
                    e.pc,
                    format!("{:?} {:#x}, {:#x} wrapped and reached {:?} at step {}", e.op, e.a, e.b, s.kind, s.step),
                ));
            }
        }
    }
    out
}

pub fn check_re(t: &TxTrace) -> Vec<Hit> {
    let mut out = Vec::new();
    for c in &t.call_events {
        let Some(nested) = c.reentered_frame else { continue };
        if !c.gas_above_2300 || !t.frame_live(c.frame) || !t.frame_live(nested) {
            continue;
        }
        let inner = t.call_events.iter().find(|i| {
            i.kind == CallKind::CALL && i.frame == nested && i.succeeded && !i.value.is_zero()
        });
        if let Some(i) = inner {
            out.push(hit(
                BugClass::RE,
                c.pc,
                format!("re-entered frame {nested} sent {:#x} again at step {}", i.value, i.step),
            ));
        }
    }
    out
}

pub fn check_us(t: &TxTrace, opts: &OracleOptions) -> Vec<Hit> {
    if t.sender != opts.attacker {
        return Vec::new();
    }
    t.call_events
        .iter()
        .filter(|c| c.kind == CallKind::SELFDESTRUCT && t.frame_live(c.frame))
        .map(|c| hit(BugClass::US, c.pc, format!("attacker destroyed the contract at step {}", c.step)))
        .collect()
}

pub fn check_se(t: &TxTrace, opts: &OracleOptions) -> Vec<Hit> {
    let mut flag = taint::BALANCE_EQ;
    if opts.se_include_ordering {
        flag |= taint::BALANCE_ORD;
    }
    t.sinks
        .iter()
        .filter(|s| s.kind == SinkKind::JumpiCond && s.taint.flags & flag != 0 && t.frame_live(s.frame))
        .map(|s| hit(BugClass::SE, s.pc, format!("balance comparison decides a jump at step {}", s.step)))
        .collect()
}

pub fn check_to(t: &TxTrace) -> Vec<Hit> {
    live_sinks(t, &[SinkKind::JumpiCond], taint::ORIGIN)
        .filter_map(|g| {
            let write = t
                .storage_events
                .iter()
                .find(|e| e.kind.is_write() && e.frame == g.frame && e.step > g.step)
                .map(|e| format!("storage write at step {}", e.step));
            let send = t
                .call_events
                .iter()
                .find(|c| c.kind == CallKind::CALL && c.frame == g.frame && c.step > g.step && !c.value.is_zero())
                .map(|c| format!("value transfer at step {}", c.step));
            let guarded = write.or(send)?;
            Some(hit(BugClass::TO, g.pc, format!("tx origin guard at step {} protects {guarded}", g.step)))
        })
        .collect()
}

pub fn check_ue(t: &TxTrace) -> Vec<Hit> {
    t.call_events
        .iter()
        .filter(|c| c.kind == CallKind::CALL && !c.succeeded && !c.result_checked && t.frame_live(c.frame))
        .map(|c| hit(BugClass::UE, c.pc, format!("call at step {} failed and its result was ignored", c.step)))
        .collect()
}

/// All per-transaction oracles over a sequence, in a fixed order.
pub fn check_traces(traces: &[TxTrace], opts: &OracleOptions) -> Vec<Hit> {
    let mut out = Vec::new();
    for (i, t) in traces.iter().enumerate() {
        if t.reverted {
            continue;
        }
        let hits = [
            check_bd(t),
            check_ud(t),
            check_io(t),
            check_re(t),
            check_us(t, opts),
            check_se(t, opts),
            check_to(t),
            check_ue(t),
        ];
        for mut h in hits.into_iter().flatten() {
            h.tx = Some(i);
            out.push(h);
        }
    }
    out
}

/// Whether any kept path released ether or code.
pub fn releases_ether(traces: &[TxTrace]) -> bool {
    traces.iter().any(|t| {
        t.call_events
            .iter()
            .any(|c| t.frame_live(c.frame) && (c.kind != CallKind::CALL || c.succeeded))
    })
}

/// What the EF oracle needs from a finished campaign.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CampaignSummary {
    pub released: bool,
}

/// EF: ether can come in but nothing executed or reachable lets it out.
pub fn check_ef(pkg: &ContractPackage, summary: &CampaignSummary) -> Vec<Hit> {
    let Some(payable) = pkg.functions.iter().find(|f| f.payable) else {
        return Vec::new();
    };
    if summary.released {
        return Vec::new();
    }
    let releasing: BTreeSet<usize> = disassemble(&pkg.bytecode)
        .into_iter()
        .filter_map(|(pc, i)| i.map(|i| (pc, i.op)))
        .filter(|(_, op)| matches!(op, Opcode::Call | Opcode::DelegateCall | Opcode::SelfDestruct))
        .map(|(pc, _)| pc)
        .collect();
    let reachable = pkg.functions.iter().any(|f| {
        crate::energy::prefix_inference(pkg, f.entry_offset)
            .iter()
            .any(|pc| releasing.contains(pc))
    });
    if reachable {
        return Vec::new();
    }
    vec![hit(
        BugClass::EF,
        payable.entry_offset,
        format!("`{}` accepts ether and no instruction can release it", payable.name),
    )]
}
