use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::cfg::BranchId;
use crate::opcode::Opcode;
use crate::package::ContractPackage;
use crate::word::{self, Word};

use super::taint::{self, Taint};
use super::trace::*;
use super::{ChainState, TxInput, VmConfig, STIPEND};

const STACK_LIMIT: usize = 1024;
/// Outer invocation plus one re-entrant invocation.
const MAX_DEPTH: u32 = 2;

#[derive(Debug, Clone)]
struct Slot {
    v: Word,
    t: Taint,
    /// Comparison event that produced this value.
    prov: Option<u32>,
}

impl Slot {
    fn plain(v: Word) -> Slot {
        Slot {
            v,
            t: Taint::default(),
            prov: None,
        }
    }

    fn tainted(v: Word, flags: u16) -> Slot {
        Slot {
            v,
            t: Taint::flag(flags),
            prov: None,
        }
    }
}

struct Machine<'a> {
    pkg: &'a ContractPackage,
    cfg: &'a VmConfig,
    state: &'a mut ChainState,
    trace: &'a mut TxTrace,
    rng: &'a mut ChaCha8Rng,
    origin: Word,
    steps: usize,
}

enum Halt {
    Stop,
    Revert(String),
}

pub(super) fn execute_tx(
    pkg: &ContractPackage,
    cfg: &VmConfig,
    state: &mut ChainState,
    tx: &TxInput,
    rng: &mut ChaCha8Rng,
) -> TxTrace {
    let mut trace = TxTrace {
        function: tx.function.clone(),
        sender: tx.sender,
        value: tx.value,
        ..TxTrace::default()
    };
    let fi = pkg.function_index(&tx.function).expect("checked by caller");
    let f = &pkg.functions[fi];
    if state.destroyed {
        return trace;
    }
    let precheck = if f.is_constructor && state.deployed {
        Some("constructor already ran")
    } else if !f.is_constructor && !state.deployed {
        Some("contract not deployed")
    } else if !f.payable && !tx.value.is_zero() {
        Some("value sent to non-payable function")
    } else if tx.value > state.balance(&tx.sender) {
        Some("insufficient sender balance")
    } else {
        None
    };
    if let Some(reason) = precheck {
        trace.reverted = true;
        trace.revert_reason = Some(reason.into());
        return trace;
    }

    // event ids index the trace that produced them, so they stay behind
    for t in state.storage_taint.values_mut().chain(state.mapping_taint.values_mut()) {
        t.calls.clear();
        t.wraps.clear();
        t.flags &= !(taint::WRAP | taint::CALLRESULT);
    }
    let snapshot = state.clone();
    let this = super::contract_address();
    transfer(state, tx.sender, this, tx.value);
    let mut m = Machine {
        pkg,
        cfg,
        state,
        trace: &mut trace,
        rng,
        origin: tx.sender,
        steps: 0,
    };
    match m.run_frame(fi, &tx.args, tx.sender, tx.value, 0) {
        Halt::Stop => {
            if f.is_constructor {
                state.deployed = true;
            }
        }
        Halt::Revert(reason) => {
            *state = snapshot;
            trace.reverted = true;
            trace.revert_reason = Some(reason);
        }
    }
    // a call result counts as checked once it influenced any JUMPI
    for k in 0..trace.call_events.len() {
        let id = k as u32;
        trace.call_events[k].result_checked = trace
            .sinks
            .iter()
            .any(|s| s.kind == SinkKind::JumpiCond && s.taint.calls.contains(&id));
    }
    trace
}

fn transfer(state: &mut ChainState, from: Word, to: Word, value: Word) {
    if value.is_zero() {
        return;
    }
    let fb = state.balance(&from);
    state.balances.insert(from, fb - value);
    let tb = state.balance(&to);
    state.balances.insert(to, tb.wrapping_add(value));
}

impl Machine<'_> {
    fn step_index(&self) -> u32 {
        self.steps as u32
    }

    fn sink(&mut self, pc: usize, kind: SinkKind, t: &Taint, frame: u32) {
        if t.is_clean() {
            return;
        }
        self.trace.sinks.push(SinkEvent {
            step: self.step_index(),
            pc,
            kind,
            taint: t.clone(),
            frame,
        });
    }

    fn run_frame(&mut self, fi: usize, args: &[Word], caller: Word, value: Word, depth: u32) -> Halt {
        let frame = self.trace.frames.len() as u32;
        let function = &self.pkg.functions[fi];
        self.trace.frames.push(Frame {
            id: frame,
            depth,
            function: function.name.clone(),
            caller,
            reverted: false,
        });
        let snapshot = (depth > 0).then(|| self.state.clone());
        let halt = self.interpret(function.entry_offset, fi, args, caller, value, depth, frame);
        if let Halt::Revert(_) = halt {
            self.trace.frames[frame as usize].reverted = true;
            if let Some(s) = snapshot {
                *self.state = s;
            }
        }
        halt
    }

    #[allow(clippy::too_many_arguments)]
    fn interpret(
        &mut self,
        entry: usize,
        fi: usize,
        args: &[Word],
        caller: Word,
        value: Word,
        depth: u32,
        frame: u32,
    ) -> Halt {
        let code = &self.pkg.bytecode;
        let mut stack: Vec<Slot> = Vec::with_capacity(32);
        let mut pc = entry;
        macro_rules! pop {
            () => {
                match stack.pop() {
                    Some(s) => s,
                    None => return Halt::Revert(format!("stack underflow at pc {pc}")),
                }
            };
        }
        loop {
            if self.steps >= self.cfg.step_limit {
                return Halt::Revert("step limit exceeded".into());
            }
            if pc >= code.len() {
                return Halt::Stop;
            }
            let Some(op) = Opcode::from_byte(code[pc]) else {
                return Halt::Revert(format!("invalid opcode {:#04x} at pc {pc}", code[pc]));
            };
            let imm_len = op.immediate_len();
            if pc + 1 + imm_len > code.len() {
                return Halt::Revert(format!("truncated immediate at pc {pc}"));
            }
            let imm = &code[pc + 1..pc + 1 + imm_len];
            let step = self.step_index();
            let mut next = pc + 1 + imm_len;
            let mut halt = None;

            match op {
                Opcode::Stop => halt = Some(Halt::Stop),
                Opcode::Revert => halt = Some(Halt::Revert("REVERT".into())),
                Opcode::JumpDest => {}
                Opcode::Push(_) => stack.push(Slot::plain(word::from_be(imm))),
                Opcode::Arg => {
                    let i = imm[0] as usize;
                    let Some(a) = args.get(i) else {
                        return Halt::Revert(format!("missing argument {i}"));
                    };
                    stack.push(Slot::tainted(*a, taint::PARAM));
                }
                Opcode::Pop => {
                    pop!();
                }
                Opcode::Dup(n) => {
                    let n = n as usize;
                    if stack.len() < n {
                        return Halt::Revert(format!("stack underflow at pc {pc}"));
                    }
                    let s = stack[stack.len() - n].clone();
                    stack.push(s);
                }
                Opcode::Swap(n) => {
                    let n = n as usize;
                    if stack.len() < n + 1 {
                        return Halt::Revert(format!("stack underflow at pc {pc}"));
                    }
                    let top = stack.len() - 1;
                    stack.swap(top, top - n);
                }
                Opcode::Add | Opcode::Sub | Opcode::Mul => {
                    let a = pop!();
                    let b = pop!();
                    let (r, wrapped, aop) = match op {
                        Opcode::Add => {
                            let (r, o) = a.v.overflowing_add(b.v);
                            (r, o, ArithOp::ADD)
                        }
                        Opcode::Sub => {
                            let (r, o) = a.v.overflowing_sub(b.v);
                            (r, o, ArithOp::SUB)
                        }
                        _ => {
                            let (r, o) = a.v.overflowing_mul(b.v);
                            (r, o, ArithOp::MUL)
                        }
                    };
                    let mut t = a.t.union(&b.t);
                    if wrapped {
                        t.flags |= taint::WRAP;
                        t.wraps.push(self.trace.wrap_events.len() as u32);
                    }
                    self.trace.wrap_events.push(WrapEvent {
                        step,
                        pc,
                        op: aop,
                        a: a.v,
                        b: b.v,
                        wrapped,
                    });
                    stack.push(Slot { v: r, t, prov: None });
                }
                Opcode::Lt | Opcode::Gt | Opcode::Eq => {
                    let a = pop!();
                    let b = pop!();
                    let (r, cop) = match op {
                        Opcode::Lt => (a.v < b.v, CmpOp::LT),
                        Opcode::Gt => (a.v > b.v, CmpOp::GT),
                        _ => (a.v == b.v, CmpOp::EQ),
                    };
                    let mut t = a.t.union(&b.t);
                    self.sink(pc, SinkKind::CmpOperand, &t, frame);
                    if t.has(taint::BALANCE) {
                        t.flags |= if cop == CmpOp::EQ {
                            taint::BALANCE_EQ
                        } else {
                            taint::BALANCE_ORD
                        };
                    }
                    let id = self.trace.cmp_events.len() as u32;
                    self.trace.cmp_events.push(CmpEvent {
                        step,
                        pc,
                        op: cop,
                        a: a.v,
                        b: b.v,
                        operand: None,
                    });
                    stack.push(Slot {
                        v: word::from_bool(r),
                        t,
                        prov: Some(id),
                    });
                }
                Opcode::IsZero => {
                    let a = pop!();
                    let id = self.trace.cmp_events.len() as u32;
                    self.trace.cmp_events.push(CmpEvent {
                        step,
                        pc,
                        op: CmpOp::ISZERO,
                        a: a.v,
                        b: Word::ZERO,
                        operand: a.prov,
                    });
                    stack.push(Slot {
                        v: word::from_bool(a.v.is_zero()),
                        t: a.t,
                        prov: Some(id),
                    });
                }
                Opcode::And | Opcode::Or => {
                    let a = pop!();
                    let b = pop!();
                    let r = if op == Opcode::And { a.v & b.v } else { a.v | b.v };
                    stack.push(Slot {
                        v: r,
                        t: a.t.union(&b.t),
                        prov: None,
                    });
                }
                Opcode::Not => {
                    let a = pop!();
                    stack.push(Slot {
                        v: !a.v,
                        t: a.t,
                        prov: None,
                    });
                }
                Opcode::Balance => {
                    let b = self.state.balance(&super::contract_address());
                    stack.push(Slot::tainted(b, taint::BALANCE));
                }
                Opcode::Origin => stack.push(Slot::tainted(self.origin, taint::ORIGIN)),
                Opcode::Caller => stack.push(Slot::tainted(caller, taint::CALLER)),
                Opcode::CallValue => stack.push(Slot::plain(value)),
                Opcode::Timestamp => {
                    stack.push(Slot::tainted(self.state.block.timestamp, taint::BLOCKSTATE))
                }
                Opcode::Number => {
                    stack.push(Slot::tainted(self.state.block.number, taint::BLOCKSTATE))
                }
                Opcode::SLoad => {
                    let slot = pop!().v;
                    let v = self.state.storage.get(&slot).copied().unwrap_or(Word::ZERO);
                    let t = self.state.storage_taint.get(&slot).cloned().unwrap_or_default();
                    self.trace.storage_events.push(StorageEvent {
                        step,
                        slot,
                        key: None,
                        kind: StorageKind::SLOAD,
                        value: v,
                        frame,
                    });
                    stack.push(Slot { v, t, prov: None });
                }
                Opcode::SStore => {
                    let slot = pop!().v;
                    let val = pop!();
                    self.sink(pc, SinkKind::StoreValue, &val.t, frame);
                    self.trace.storage_events.push(StorageEvent {
                        step,
                        slot,
                        key: None,
                        kind: StorageKind::SSTORE,
                        value: val.v,
                        frame,
                    });
                    self.state.storage.insert(slot, val.v);
                    if val.t.is_clean() {
                        self.state.storage_taint.remove(&slot);
                    } else {
                        self.state.storage_taint.insert(slot, val.t);
                    }
                }
                Opcode::MapLoad => {
                    let slot = pop!().v;
                    let key = pop!().v;
                    let v = self.state.mappings.get(&(slot, key)).copied().unwrap_or(Word::ZERO);
                    let t = self
                        .state
                        .mapping_taint
                        .get(&(slot, key))
                        .cloned()
                        .unwrap_or_default();
                    self.trace.storage_events.push(StorageEvent {
                        step,
                        slot,
                        key: Some(key),
                        kind: StorageKind::MAPLOAD,
                        value: v,
                        frame,
                    });
                    stack.push(Slot { v, t, prov: None });
                }
                Opcode::MapStore => {
                    let slot = pop!().v;
                    let key = pop!().v;
                    let val = pop!();
                    self.sink(pc, SinkKind::StoreValue, &val.t, frame);
                    self.trace.storage_events.push(StorageEvent {
                        step,
                        slot,
                        key: Some(key),
                        kind: StorageKind::MAPSTORE,
                        value: val.v,
                        frame,
                    });
                    self.state.mappings.insert((slot, key), val.v);
                    if val.t.is_clean() {
                        self.state.mapping_taint.remove(&(slot, key));
                    } else {
                        self.state.mapping_taint.insert((slot, key), val.t);
                    }
                }
                Opcode::Jump => {
                    let dest = pop!().v;
                    match self.jump_target(dest) {
                        Some(d) => next = d,
                        None => return Halt::Revert(format!("invalid jump at pc {pc}")),
                    }
                }
                Opcode::JumpI => {
                    let dest = pop!().v;
                    let cond = pop!();
                    self.sink(pc, SinkKind::JumpiCond, &cond.t, frame);
                    let taken = !cond.v.is_zero();
                    if taken {
                        match self.jump_target(dest) {
                            Some(d) => next = d,
                            None => return Halt::Revert(format!("invalid jump at pc {pc}")),
                        }
                    }
                    let src = self.pkg.cfg.block_of(pc).map_or(pc, |b| b.start);
                    self.trace.branch_events.push(BranchEvent {
                        step,
                        branch_id: BranchId(src, next),
                        pc,
                        taken,
                        cond_provenance: cond.prov,
                        frame,
                    });
                }
                Opcode::Call => {
                    let gas = pop!();
                    let target = pop!();
                    let amount = pop!();
                    self.sink(pc, SinkKind::CallValue, &amount.t, frame);
                    self.sink(pc, SinkKind::CallArgs, &target.t.union(&gas.t), frame);
                    let this = super::contract_address();
                    let gas_above = gas.v > Word::from(STIPEND);
                    let succeeded = if amount.v > self.state.balance(&this) {
                        false
                    } else {
                        !(self.cfg.call_failures && self.rng.gen_bool(0.5))
                    };
                    let k = self.trace.call_events.len();
                    self.trace.call_events.push(CallEvent {
                        step,
                        pc,
                        kind: CallKind::CALL,
                        target: target.v,
                        value: amount.v,
                        gas_above_2300: gas_above,
                        succeeded,
                        result_checked: false,
                        frame,
                        reentered_frame: None,
                    });
                    if succeeded {
                        transfer(self.state, this, target.v, amount.v);
                        if gas_above && target.v == self.cfg.attacker && depth + 1 < MAX_DEPTH {
                            let nested = self.trace.frames.len() as u32;
                            self.trace.call_events[k].reentered_frame = Some(nested);
                            self.steps += 1;
                            // the re-entrant frame's outcome never fails the outer call
                            let _ = self.run_frame(fi, args, self.cfg.attacker, Word::ZERO, depth + 1);
                        }
                    }
                    stack.push(Slot {
                        v: word::from_bool(succeeded),
                        t: Taint {
                            flags: taint::CALLRESULT,
                            calls: vec![k as u32],
                            wraps: vec![],
                        },
                        prov: None,
                    });
                }
                Opcode::DelegateCall => {
                    let target = pop!();
                    self.sink(pc, SinkKind::DelegateTarget, &target.t, frame);
                    let k = self.trace.call_events.len();
                    self.trace.call_events.push(CallEvent {
                        step,
                        pc,
                        kind: CallKind::DELEGATECALL,
                        target: target.v,
                        value: Word::ZERO,
                        gas_above_2300: true,
                        succeeded: true,
                        result_checked: false,
                        frame,
                        reentered_frame: None,
                    });
                    stack.push(Slot {
                        v: word::from_bool(true),
                        t: Taint {
                            flags: taint::CALLRESULT,
                            calls: vec![k as u32],
                            wraps: vec![],
                        },
                        prov: None,
                    });
                }
                Opcode::SelfDestruct => {
                    let to = pop!().v;
                    let this = super::contract_address();
                    let bal = self.state.balance(&this);
                    self.trace.call_events.push(CallEvent {
                        step,
                        pc,
                        kind: CallKind::SELFDESTRUCT,
                        target: to,
                        value: bal,
                        gas_above_2300: false,
                        succeeded: true,
                        result_checked: false,
                        frame,
                        reentered_frame: None,
                    });
                    transfer(self.state, this, to, bal);
                    self.state.destroyed = true;
                    halt = Some(Halt::Stop);
                }
            }
            if stack.len() > STACK_LIMIT {
                return Halt::Revert("stack overflow".into());
            }
            if self.cfg.record_steps {
                self.trace.steps.push(Step {
                    pc,
                    op,
                    top: stack.last().map(|s| s.v),
                    frame,
                });
            }
            self.steps += 1;
            if let Some(h) = halt {
                return h;
            }
            pc = next;
        }
    }

    fn jump_target(&self, dest: Word) -> Option<usize> {
        let d: usize = dest.try_into().ok()?;
        (self.pkg.bytecode.get(d) == Some(&Opcode::JumpDest.to_byte())).then_some(d)
    }
}
