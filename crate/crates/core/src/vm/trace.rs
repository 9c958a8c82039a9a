//! Execution traces and their text/JSON dumps.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::cfg::BranchId;
use crate::opcode::Opcode;
use crate::word::Word;

use super::taint::Taint;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    pub pc: usize,
    #[serde(with = "op_name")]
    pub op: Opcode,
    /// Top of stack after the instruction, if any.
    pub top: Option<Word>,
    pub frame: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct BranchEvent {
    pub step: u32,
    pub branch_id: BranchId,
    pub pc: usize,
    pub taken: bool,
    /// Index into `cmp_events` of the comparison that produced the condition.
    pub cond_provenance: Option<u32>,
    pub frame: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CmpOp {
    LT,
    GT,
    EQ,
    ISZERO,
}

/// A comparison `a op b` where `a` was the top of stack. For `ISZERO`, `b` is
/// zero and `operand` points at the comparison that produced `a`, if any.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CmpEvent {
    pub step: u32,
    pub pc: usize,
    pub op: CmpOp,
    pub a: Word,
    pub b: Word,
    pub operand: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StorageKind {
    SLOAD,
    SSTORE,
    MAPLOAD,
    MAPSTORE,
}

impl StorageKind {
    pub fn is_write(self) -> bool {
        matches!(self, StorageKind::SSTORE | StorageKind::MAPSTORE)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StorageEvent {
    pub step: u32,
    pub slot: Word,
    pub key: Option<Word>,
    pub kind: StorageKind,
    pub value: Word,
    pub frame: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CallKind {
    CALL,
    DELEGATECALL,
    SELFDESTRUCT,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CallEvent {
    pub step: u32,
    pub pc: usize,
    pub kind: CallKind,
    pub target: Word,
    pub value: Word,
    pub gas_above_2300: bool,
    pub succeeded: bool,
    /// Whether the call's result flag reached a `JUMPI` later in the
    /// transaction. Filled in when the transaction ends.
    pub result_checked: bool,
    pub frame: u32,
    /// Frame opened by the re-entrant invocation this call triggered.
    pub reentered_frame: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ArithOp {
    ADD,
    SUB,
    MUL,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WrapEvent {
    pub step: u32,
    pub pc: usize,
    pub op: ArithOp,
    pub a: Word,
    pub b: Word,
    pub wrapped: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SinkKind {
    JumpiCond,
    CmpOperand,
    CallValue,
    CallArgs,
    StoreValue,
    DelegateTarget,
}

/// A tainted value reaching an instruction the oracles watch.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SinkEvent {
    pub step: u32,
    pub pc: usize,
    pub kind: SinkKind,
    pub taint: Taint,
    pub frame: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Frame {
    pub id: u32,
    pub depth: u32,
    pub function: String,
    pub caller: Word,
    pub reverted: bool,
}

/// Everything observed while executing one transaction.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TxTrace {
    pub function: String,
    pub sender: Word,
    pub value: Word,
    pub reverted: bool,
    /// Why the transaction reverted, when it did.
    pub revert_reason: Option<String>,
    pub steps: Vec<Step>,
    pub branch_events: Vec<BranchEvent>,
    pub cmp_events: Vec<CmpEvent>,
    pub storage_events: Vec<StorageEvent>,
    pub call_events: Vec<CallEvent>,
    pub wrap_events: Vec<WrapEvent>,
    pub sinks: Vec<SinkEvent>,
    pub frames: Vec<Frame>,
}

impl TxTrace {
    pub fn frame_reverted(&self, id: u32) -> bool {
        self.frames.get(id as usize).is_none_or(|f| f.reverted)
    }

    /// Whether an event in frame `id` happened on a path that was kept.
    pub fn frame_live(&self, id: u32) -> bool {
        !self.reverted && !self.frame_reverted(id)
    }

    pub fn coverage(&self) -> BTreeSet<BranchId> {
        self.branch_events.iter().map(|e| e.branch_id).collect()
    }
}

/// Set of branch transitions exercised by `traces`.
pub fn coverage_of<'a>(traces: impl IntoIterator<Item = &'a TxTrace>) -> BTreeSet<BranchId> {
    let mut out = BTreeSet::new();
    for t in traces {
        out.extend(t.branch_events.iter().map(|e| e.branch_id));
    }
    out
}

fn hex(w: &Word) -> String {
    format!("{w:#x}")
}

/// Line-oriented dump: one event per line, grouped by transaction.
pub fn dump_text(traces: &[TxTrace]) -> String {
    let mut s = String::new();
    for (i, t) in traces.iter().enumerate() {
        let _ = writeln!(
            s,
            "tx {i} {} sender={} value={} reverted={}",
            t.function,
            hex(&t.sender),
            hex(&t.value),
            t.reverted
        );
        for f in &t.frames {
            let _ = writeln!(
                s,
                "  frame {} depth={} fn={} caller={} reverted={}",
                f.id,
                f.depth,
                f.function,
                hex(&f.caller),
                f.reverted
            );
        }
        for st in &t.steps {
            let top = st.top.as_ref().map(hex).unwrap_or_else(|| "-".into());
            let _ = writeln!(s, "  step pc={} op={} top={} frame={}", st.pc, st.op, top, st.frame);
        }
        for b in &t.branch_events {
            let prov = b.cond_provenance.map(|p| p.to_string()).unwrap_or_else(|| "-".into());
            let _ = writeln!(
                s,
                "  branch {} pc={} taken={} cmp={}",
                b.branch_id, b.pc, b.taken, prov
            );
        }
        for (k, c) in t.cmp_events.iter().enumerate() {
            let _ = writeln!(
                s,
                "  cmp #{k} pc={} {:?} a={} b={}",
                c.pc,
                c.op,
                hex(&c.a),
                hex(&c.b)
            );
        }
        for e in &t.storage_events {
            let key = e.key.as_ref().map(hex).unwrap_or_else(|| "-".into());
            let _ = writeln!(
                s,
                "  storage {:?} slot={} key={} value={}",
                e.kind,
                hex(&e.slot),
                key,
                hex(&e.value)
            );
        }
        for c in &t.call_events {
            let _ = writeln!(
                s,
                "  call {:?} pc={} target={} value={} gasAbove2300={} succeeded={} checked={}",
                c.kind,
                c.pc,
                hex(&c.target),
                hex(&c.value),
                c.gas_above_2300,
                c.succeeded,
                c.result_checked
            );
        }
        for w in t.wrap_events.iter().filter(|w| w.wrapped) {
            let _ = writeln!(s, "  wrap {:?} pc={}", w.op, w.pc);
        }
        for k in &t.sinks {
            let _ = writeln!(
                s,
                "  sink {:?} pc={} tags={}",
                k.kind,
                k.pc,
                k.taint.names().join("|")
            );
        }
    }
    s
}

pub fn dump_json(traces: &[TxTrace]) -> String {
    serde_json::to_string_pretty(traces).expect("traces serialize")
}

mod op_name {
    use serde::{Deserialize, Deserializer, Serializer};

    use crate::opcode::Opcode;

    pub fn serialize<S: Serializer>(op: &Opcode, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&op.name())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Opcode, D::Error> {
        let s = String::deserialize(d)?;
        Opcode::from_name(&s).ok_or_else(|| serde::de::Error::custom(format!("unknown opcode {s}")))
    }
}
