//! Lowering of a checked contract to VM bytecode.
//!
//! Every function gets its own code region that starts with a `JUMPDEST`
//! (its ABI entry) and ends in `STOP`. Locals live on the operand stack and
//! are read with `DUPn`. Jumps always take the form `PUSH2 target; JUMP(I)`.

use std::collections::HashMap;

use crate::opcode::Opcode;
use crate::package::{FunctionAbi, Param, StateVarDecl, VarType};
use crate::word::{self, Word};

use super::ast::*;
use super::{Diagnostic, DiagnosticKind};

/// Gas forwarded by `send(to, amount)` without an explicit gas argument.
pub const DEFAULT_CALL_GAS: u64 = 100_000;

pub struct Output {
    pub bytecode: Vec<u8>,
    pub functions: Vec<FunctionAbi>,
    pub state_vars: Vec<StateVarDecl>,
    pub source_map: Vec<(usize, u32)>,
}

#[derive(Clone, Copy)]
struct Label(usize);

struct Gen<'a> {
    code: Vec<u8>,
    source_map: Vec<(usize, u32)>,
    line: u32,
    labels: Vec<Option<usize>>,
    fixups: Vec<(usize, Label)>,
    slots: HashMap<&'a str, (u64, VarType)>,
    params: HashMap<&'a str, u8>,
    /// Local name and the stack height (1-based) of its slot.
    locals: Vec<(String, usize)>,
    height: usize,
    terminated: bool,
}

pub fn generate(c: &Contract) -> Result<Output, Diagnostic> {
    let mut state_vars = Vec::new();
    let mut slots = HashMap::new();
    for (i, v) in c.state_vars.iter().enumerate() {
        slots.insert(v.name.as_str(), (i as u64, v.ty));
        state_vars.push(StateVarDecl {
            name: v.name.clone(),
            ty: v.ty,
            storage_slot: i as u64,
        });
    }
    let mut g = Gen {
        code: Vec::new(),
        source_map: Vec::new(),
        line: c.span.line,
        labels: Vec::new(),
        fixups: Vec::new(),
        slots,
        params: HashMap::new(),
        locals: Vec::new(),
        height: 0,
        terminated: false,
    };

    let synthesized;
    let mut ordered: Vec<&Function> = Vec::new();
    match c.functions.iter().find(|f| f.is_constructor()) {
        Some(ctor) => ordered.push(ctor),
        None => {
            synthesized = Function {
                name: "constructor".into(),
                params: vec![],
                payable: false,
                body: vec![],
                span: c.span,
            };
            ordered.push(&synthesized);
        }
    }
    ordered.extend(c.functions.iter().filter(|f| !f.is_constructor()));

    let mut functions = Vec::new();
    for f in ordered {
        g.params = f
            .params
            .iter()
            .enumerate()
            .map(|(i, p)| (p.name.as_str(), i as u8))
            .collect();
        g.locals.clear();
        g.height = 0;
        g.terminated = false;
        g.line = f.span.line;
        let entry = g.code.len();
        g.op(Opcode::JumpDest);
        g.block(&f.body)?;
        if !g.terminated {
            g.op(Opcode::Stop);
        }
        functions.push(FunctionAbi {
            name: f.name.clone(),
            params: f
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    ty: p.ty,
                })
                .collect(),
            payable: f.payable,
            entry_offset: entry,
            is_constructor: f.is_constructor(),
        });
    }

    if g.code.len() > u16::MAX as usize {
        return Err(Diagnostic {
            kind: DiagnosticKind::Semantic,
            span: c.span,
            message: "contract too large".into(),
        });
    }
    for (at, label) in std::mem::take(&mut g.fixups) {
        let target = g.labels[label.0].expect("every label is placed") as u16;
        g.code[at..at + 2].copy_from_slice(&target.to_be_bytes());
    }
    // declaration order for the ABI, constructor included where it was written
    let pos = |name: &str| c.functions.iter().position(|f| f.name == name).unwrap_or(0);
    functions.sort_by_key(|f| pos(&f.name));
    Ok(Output {
        bytecode: g.code,
        functions,
        state_vars,
        source_map: g.source_map,
    })
}

impl<'a> Gen<'a> {
    fn mark(&mut self) {
        self.source_map.push((self.code.len(), self.line));
    }

    fn op(&mut self, op: Opcode) {
        self.mark();
        self.code.push(op.to_byte());
        self.height = (self.height as isize + stack_effect(op)) as usize;
    }

    fn push_word(&mut self, w: Word) {
        let n = word::byte_len(&w);
        self.mark();
        self.code.push(Opcode::Push(n as u8).to_byte());
        self.code.extend_from_slice(&word::to_be(&w)[32 - n..]);
        self.height += 1;
    }

    fn push_u64(&mut self, v: u64) {
        self.push_word(Word::from(v));
    }

    fn new_label(&mut self) -> Label {
        self.labels.push(None);
        Label(self.labels.len() - 1)
    }

    fn place(&mut self, l: Label) {
        self.labels[l.0] = Some(self.code.len());
        self.op(Opcode::JumpDest);
        self.terminated = false;
    }

    fn push_label(&mut self, l: Label) {
        self.mark();
        self.code.push(Opcode::Push(2).to_byte());
        self.fixups.push((self.code.len(), l));
        self.code.extend_from_slice(&[0, 0]);
        self.height += 1;
    }

    fn jump(&mut self, l: Label) {
        self.push_label(l);
        self.op(Opcode::Jump);
    }

    fn jumpi(&mut self, l: Label) {
        self.push_label(l);
        self.op(Opcode::JumpI);
    }

    fn block(&mut self, stmts: &[Stmt]) -> Result<(), Diagnostic> {
        let mark = self.locals.len();
        let h0 = self.height;
        for s in stmts {
            if self.terminated {
                break;
            }
            self.stmt(s)?;
        }
        let declared = self.locals.len() - mark;
        self.locals.truncate(mark);
        if !self.terminated {
            for _ in 0..declared {
                self.op(Opcode::Pop);
            }
        } else {
            self.height = h0;
        }
        Ok(())
    }

    fn stmt(&mut self, s: &Stmt) -> Result<(), Diagnostic> {
        self.line = s.span.line;
        match &s.kind {
            StmtKind::Assign { target, op, value } => {
                let name = target.name();
                let (slot, _) = self.slots[name];
                let key = match target {
                    LValue::Index(_, k) => Some(k),
                    LValue::Var(_) => None,
                };
                match op {
                    AssignOp::Set => self.expr(value)?,
                    AssignOp::Add | AssignOp::Sub => {
                        // new = old (+|-) value; SUB computes top - second
                        self.expr(value)?;
                        self.load_slot(slot, key)?;
                        self.line = s.span.line;
                        self.op(if *op == AssignOp::Add { Opcode::Add } else { Opcode::Sub });
                    }
                }
                self.line = s.span.line;
                match key {
                    Some(k) => {
                        self.expr(k)?;
                        self.line = s.span.line;
                        self.push_u64(slot);
                        self.op(Opcode::MapStore);
                    }
                    None => {
                        self.push_u64(slot);
                        self.op(Opcode::SStore);
                    }
                }
            }
            StmtKind::Let { name, value } => {
                self.expr(value)?;
                self.locals.push((name.clone(), self.height));
            }
            StmtKind::If { cond, then, els } => {
                self.expr(cond)?;
                self.line = s.span.line;
                self.op(Opcode::IsZero);
                let end = self.new_label();
                match els {
                    None => {
                        self.jumpi(end);
                        self.block(then)?;
                        self.line = s.span.line;
                        self.place(end);
                    }
                    Some(els) => {
                        let else_l = self.new_label();
                        self.jumpi(else_l);
                        let h = self.height;
                        self.block(then)?;
                        let then_terminated = self.terminated;
                        if !then_terminated {
                            self.jump(end);
                        }
                        self.height = h;
                        self.line = s.span.line;
                        self.place(else_l);
                        self.block(els)?;
                        let else_terminated = self.terminated;
                        self.height = h;
                        self.place(end);
                        if then_terminated && else_terminated {
                            // the join is unreachable; keep the block well formed
                            self.op(Opcode::Stop);
                            self.terminated = true;
                        }
                    }
                }
            }
            StmtKind::Require(cond) => {
                self.expr(cond)?;
                self.line = s.span.line;
                let ok = self.new_label();
                self.jumpi(ok);
                let h = self.height;
                self.op(Opcode::Revert);
                self.height = h;
                self.place(ok);
            }
            StmtKind::Send(call) => {
                self.send(call)?;
                self.op(Opcode::Pop);
            }
            StmtKind::DCall(target) => {
                self.expr(target)?;
                self.line = s.span.line;
                self.op(Opcode::DelegateCall);
                self.op(Opcode::Pop);
            }
            StmtKind::SelfDestruct(target) => {
                self.expr(target)?;
                self.line = s.span.line;
                self.op(Opcode::SelfDestruct);
                self.terminated = true;
            }
            StmtKind::Revert => {
                self.op(Opcode::Revert);
                self.terminated = true;
            }
        }
        Ok(())
    }

    fn load_slot(&mut self, slot: u64, key: Option<&Expr>) -> Result<(), Diagnostic> {
        match key {
            Some(k) => {
                self.expr(k)?;
                self.push_u64(slot);
                self.op(Opcode::MapLoad);
            }
            None => {
                self.push_u64(slot);
                self.op(Opcode::SLoad);
            }
        }
        Ok(())
    }

    fn send(&mut self, call: &SendCall) -> Result<(), Diagnostic> {
        let line = self.line;
        self.expr(&call.amount)?;
        self.expr(&call.to)?;
        self.line = line;
        self.push_word(call.gas.unwrap_or(Word::from(DEFAULT_CALL_GAS)));
        self.op(Opcode::Call);
        Ok(())
    }

    fn expr(&mut self, e: &Expr) -> Result<(), Diagnostic> {
        match &e.kind {
            ExprKind::Num(n) => self.push_word(*n),
            ExprKind::Bool(b) => self.push_word(word::from_bool(*b)),
            ExprKind::Builtin(b) => self.op(match b {
                Builtin::MsgSender => Opcode::Caller,
                Builtin::MsgValue => Opcode::CallValue,
                Builtin::MsgOrigin => Opcode::Origin,
                Builtin::BlockTimestamp => Opcode::Timestamp,
                Builtin::BlockNumber => Opcode::Number,
                Builtin::BalanceThis => Opcode::Balance,
            }),
            ExprKind::Ident(n) => {
                if let Some((_, at)) = self.locals.iter().rev().find(|(l, _)| l == n) {
                    let depth = self.height + 1 - at;
                    if depth > 16 {
                        return Err(Diagnostic {
                            kind: DiagnosticKind::Semantic,
                            span: e.span,
                            message: format!("local `{n}` is too deep in the stack"),
                        });
                    }
                    self.op(Opcode::Dup(depth as u8));
                } else if let Some(idx) = self.params.get(n.as_str()).copied() {
                    self.mark();
                    self.code.push(Opcode::Arg.to_byte());
                    self.code.push(idx);
                    self.height += 1;
                } else {
                    let (slot, _) = self.slots[n.as_str()];
                    self.load_slot(slot, None)?;
                }
            }
            ExprKind::Index(n, k) => {
                let (slot, _) = self.slots[n.as_str()];
                self.load_slot(slot, Some(k))?;
            }
            ExprKind::Not(inner) => {
                self.expr(inner)?;
                self.op(Opcode::IsZero);
            }
            ExprKind::Binary(op, a, b) => match op {
                BinOp::And | BinOp::Or => {
                    let end = self.new_label();
                    self.expr(a)?;
                    self.op(Opcode::Dup(1));
                    if *op == BinOp::And {
                        self.op(Opcode::IsZero);
                    }
                    self.jumpi(end);
                    self.op(Opcode::Pop);
                    self.expr(b)?;
                    self.place(end);
                }
                _ => {
                    // operands are pushed right-to-left so `a` ends on top
                    self.expr(b)?;
                    self.expr(a)?;
                    let (code, negate) = match op {
                        BinOp::Add => (Opcode::Add, false),
                        BinOp::Sub => (Opcode::Sub, false),
                        BinOp::Mul => (Opcode::Mul, false),
                        BinOp::Lt => (Opcode::Lt, false),
                        BinOp::Gt => (Opcode::Gt, false),
                        BinOp::Le => (Opcode::Gt, true),
                        BinOp::Ge => (Opcode::Lt, true),
                        BinOp::Eq => (Opcode::Eq, false),
                        BinOp::Ne => (Opcode::Eq, true),
                        BinOp::And | BinOp::Or => unreachable!(),
                    };
                    self.op(code);
                    if negate {
                        self.op(Opcode::IsZero);
                    }
                }
            },
            ExprKind::Send(call) => self.send(call)?,
        }
        Ok(())
    }
}

fn stack_effect(op: Opcode) -> isize {
    use Opcode::*;
    match op {
        Stop | JumpDest | Revert | IsZero | Not | SLoad => 0,
        Add | Mul | Sub | Lt | Gt | Eq | And | Or | Pop | Jump | MapLoad => -1,
        SStore | JumpI => -2,
        MapStore => -3,
        Balance | Origin | Caller | CallValue | Timestamp | Number | Push(_) | Dup(_) | Arg => 1,
        Swap(_) => 0,
        Call => -2,
        DelegateCall => 0,
        SelfDestruct => -1,
    }
}
