//! Name resolution, type checking, and state-variable access facts.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::package::{AccessFact, AccessKind, ValueType, VarType};

use super::ast::*;
use super::{Diagnostic, DiagnosticKind, Span};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Ty {
    Uint,
    Addr,
    Bool,
    /// Integer literal; usable as uint256 or address.
    Lit,
}

impl Ty {
    fn of_value(t: ValueType) -> Ty {
        match t {
            ValueType::Uint256 => Ty::Uint,
            ValueType::Address => Ty::Addr,
            ValueType::Bool => Ty::Bool,
        }
    }

    fn fits(self, want: Ty) -> bool {
        self == want || (self == Ty::Lit && matches!(want, Ty::Uint | Ty::Addr))
    }

    fn unify(a: Ty, b: Ty) -> Option<Ty> {
        match (a, b) {
            _ if a == b => Some(a),
            (Ty::Lit, t) | (t, Ty::Lit) if matches!(t, Ty::Uint | Ty::Addr) => Some(t),
            _ => None,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Ty::Uint | Ty::Lit => "uint256",
            Ty::Addr => "address",
            Ty::Bool => "bool",
        }
    }
}

#[derive(Default)]
struct FnAccess {
    reads: BTreeSet<String>,
    writes: BTreeSet<String>,
    branch_reads: BTreeSet<String>,
}

struct Checker<'a> {
    state: HashMap<&'a str, VarType>,
    params: HashMap<&'a str, ValueType>,
    scopes: Vec<HashMap<String, Ty>>,
    diags: Vec<Diagnostic>,
    access: FnAccess,
}

pub fn check(c: &Contract) -> Result<Vec<AccessFact>, Vec<Diagnostic>> {
    let mut diags = Vec::new();
    let mut state = HashMap::new();
    for v in &c.state_vars {
        if state.insert(v.name.as_str(), v.ty).is_some() {
            diags.push(dup(v.span, "state variable", &v.name));
        }
    }
    let mut seen_fns = BTreeSet::new();
    for f in &c.functions {
        if !seen_fns.insert(f.name.as_str()) {
            diags.push(dup(f.span, "function", &f.name));
        }
        if state.contains_key(f.name.as_str()) {
            diags.push(dup(f.span, "name", &f.name));
        }
    }

    let mut per_fn: Vec<(String, FnAccess)> = Vec::new();
    for f in &c.functions {
        let mut params = HashMap::new();
        for p in &f.params {
            if params.insert(p.name.as_str(), p.ty).is_some() {
                diags.push(dup(p.span, "parameter", &p.name));
            }
            if state.contains_key(p.name.as_str()) {
                diags.push(dup(p.span, "name (shadows a state variable)", &p.name));
            }
        }
        let mut ck = Checker {
            state: state.clone(),
            params,
            scopes: vec![HashMap::new()],
            diags: Vec::new(),
            access: FnAccess::default(),
        };
        ck.block(&f.body);
        diags.append(&mut ck.diags);
        per_fn.push((f.name.clone(), ck.access));
    }
    if !diags.is_empty() {
        return Err(diags);
    }

    let branch_read_anywhere: BTreeSet<&String> =
        per_fn.iter().flat_map(|(_, a)| a.branch_reads.iter()).collect();
    let mut facts = BTreeMap::new();
    for (name, a) in &per_fn {
        let mut push = |v: &String, kind| {
            facts.insert(
                (name.clone(), v.clone(), kind),
                AccessFact {
                    function: name.clone(),
                    state_var: v.clone(),
                    kind,
                },
            );
        };
        for v in &a.reads {
            push(v, AccessKind::Read);
        }
        for v in &a.writes {
            push(v, AccessKind::Write);
        }
        for v in &a.branch_reads {
            push(v, AccessKind::ReadInBranchCondition);
        }
        for v in a.reads.intersection(&a.writes) {
            if branch_read_anywhere.contains(v) {
                push(v, AccessKind::RawSelfDependency);
            }
        }
    }
    // keep declaration order of functions, then variable and kind order
    let order: HashMap<&str, usize> = c
        .functions
        .iter()
        .enumerate()
        .map(|(i, f)| (f.name.as_str(), i))
        .collect();
    let mut out: Vec<AccessFact> = facts.into_values().collect();
    out.sort_by_key(|f| (order[f.function.as_str()], f.state_var.clone(), f.kind));
    Ok(out)
}

fn dup(span: Span, what: &str, name: &str) -> Diagnostic {
    Diagnostic {
        kind: DiagnosticKind::Duplicate,
        span,
        message: format!("duplicate {what} `{name}`"),
    }
}

impl<'a> Checker<'a> {
    fn err(&mut self, span: Span, msg: String) {
        self.diags.push(Diagnostic {
            kind: DiagnosticKind::Semantic,
            span,
            message: msg,
        });
    }

    fn local(&self, name: &str) -> Option<Ty> {
        self.scopes.iter().rev().find_map(|s| s.get(name).copied())
    }

    fn block(&mut self, stmts: &[Stmt]) {
        self.scopes.push(HashMap::new());
        for s in stmts {
            self.stmt(s);
        }
        self.scopes.pop();
    }

    fn stmt(&mut self, s: &Stmt) {
        match &s.kind {
            StmtKind::Assign { target, op, value } => {
                let name = target.name();
                let vt = self.expr(value, false);
                if self.params.contains_key(name) || self.local(name).is_some() {
                    self.err(s.span, format!("cannot assign to `{name}`: only state variables are assignable"));
                    return;
                }
                let Some(var_ty) = self.state.get(name).copied() else {
                    self.err(s.span, format!("unresolved name `{name}`"));
                    return;
                };
                let slot_ty = match (target, var_ty) {
                    (LValue::Index(_, k), VarType::Mapping) => {
                        let kt = self.expr(k, false);
                        if !kt.is_some_and(|t| t.fits(Ty::Addr)) {
                            self.err(k.span, "mapping key must be an address".into());
                        }
                        Ty::Uint
                    }
                    (LValue::Index(..), _) => {
                        self.err(s.span, format!("`{name}` is not a mapping"));
                        return;
                    }
                    (LValue::Var(_), VarType::Mapping) => {
                        self.err(s.span, format!("cannot assign a whole mapping `{name}`"));
                        return;
                    }
                    (LValue::Var(_), t) => Ty::of_value(match t {
                        VarType::Uint256 => ValueType::Uint256,
                        VarType::Address => ValueType::Address,
                        VarType::Bool => ValueType::Bool,
                        VarType::Mapping => unreachable!(),
                    }),
                };
                if *op != AssignOp::Set {
                    if slot_ty != Ty::Uint {
                        self.err(s.span, "compound assignment needs uint256".into());
                    }
                    self.access.reads.insert(name.to_string());
                }
                self.access.writes.insert(name.to_string());
                if let Some(vt) = vt {
                    if !vt.fits(slot_ty) {
                        self.err(
                            value.span,
                            format!("type mismatch: `{name}` is {} but value is {}", slot_ty.name(), vt.name()),
                        );
                    }
                }
            }
            StmtKind::Let { name, value } => {
                let t = self.expr(value, false);
                if self.state.contains_key(name.as_str())
                    || self.params.contains_key(name.as_str())
                    || self.local(name).is_some()
                {
                    self.diags.push(dup(s.span, "local", name));
                }
                let t = match t {
                    Some(Ty::Lit) => Ty::Uint,
                    Some(t) => t,
                    None => Ty::Uint,
                };
                self.scopes.last_mut().unwrap().insert(name.clone(), t);
            }
            StmtKind::If { cond, then, els } => {
                self.cond(cond);
                self.block(then);
                if let Some(e) = els {
                    self.block(e);
                }
            }
            StmtKind::Require(cond) => self.cond(cond),
            StmtKind::Send(call) => {
                self.send(call, false);
            }
            StmtKind::DCall(e) | StmtKind::SelfDestruct(e) => {
                if let Some(t) = self.expr(e, false) {
                    if !t.fits(Ty::Addr) {
                        self.err(e.span, format!("expected address, found {}", t.name()));
                    }
                }
            }
            StmtKind::Revert => {}
        }
    }

    fn cond(&mut self, e: &Expr) {
        if let Some(t) = self.expr(e, true) {
            if t != Ty::Bool {
                self.err(e.span, format!("condition must be bool, found {}", t.name()));
            }
        }
    }

    fn send(&mut self, call: &SendCall, in_branch: bool) -> Option<Ty> {
        if let Some(t) = self.expr(&call.to, in_branch) {
            if !t.fits(Ty::Addr) {
                self.err(call.to.span, "send target must be an address".into());
            }
        }
        if let Some(t) = self.expr(&call.amount, in_branch) {
            if !t.fits(Ty::Uint) {
                self.err(call.amount.span, "send amount must be uint256".into());
            }
        }
        Some(Ty::Bool)
    }

    fn read_state(&mut self, name: &str, in_branch: bool) {
        self.access.reads.insert(name.to_string());
        if in_branch {
            self.access.branch_reads.insert(name.to_string());
        }
    }

    fn expr(&mut self, e: &Expr, in_branch: bool) -> Option<Ty> {
        match &e.kind {
            ExprKind::Num(_) => Some(Ty::Lit),
            ExprKind::Bool(_) => Some(Ty::Bool),
            ExprKind::Builtin(b) => Some(match b {
                Builtin::MsgSender | Builtin::MsgOrigin => Ty::Addr,
                _ => Ty::Uint,
            }),
            ExprKind::Ident(n) => {
                if let Some(t) = self.local(n) {
                    return Some(t);
                }
                if let Some(t) = self.params.get(n.as_str()) {
                    return Some(Ty::of_value(*t));
                }
                match self.state.get(n.as_str()).copied() {
                    Some(VarType::Mapping) => {
                        self.err(e.span, format!("mapping `{n}` must be indexed"));
                        None
                    }
                    Some(t) => {
                        self.read_state(n, in_branch);
                        Some(match t {
                            VarType::Uint256 => Ty::Uint,
                            VarType::Address => Ty::Addr,
                            VarType::Bool => Ty::Bool,
                            VarType::Mapping => unreachable!(),
                        })
                    }
                    None => {
                        self.err(e.span, format!("unresolved name `{n}`"));
                        None
                    }
                }
            }
            ExprKind::Index(n, k) => {
                let kt = self.expr(k, in_branch);
                match self.state.get(n.as_str()) {
                    Some(VarType::Mapping) => {
                        self.read_state(n, in_branch);
                        if !kt.is_some_and(|t| t.fits(Ty::Addr)) {
                            self.err(k.span, "mapping key must be an address".into());
                        }
                        Some(Ty::Uint)
                    }
                    Some(_) => {
                        self.err(e.span, format!("`{n}` is not a mapping"));
                        None
                    }
                    None => {
                        self.err(e.span, format!("unresolved name `{n}`"));
                        None
                    }
                }
            }
            ExprKind::Not(inner) => {
                let t = self.expr(inner, in_branch)?;
                if t != Ty::Bool {
                    self.err(inner.span, format!("`!` needs bool, found {}", t.name()));
                }
                Some(Ty::Bool)
            }
            ExprKind::Binary(op, a, b) => {
                let ta = self.expr(a, in_branch);
                let tb = self.expr(b, in_branch);
                let (ta, tb) = (ta?, tb?);
                match op {
                    BinOp::Add | BinOp::Sub | BinOp::Mul | BinOp::Lt | BinOp::Gt | BinOp::Le | BinOp::Ge => {
                        for (t, x) in [(ta, a), (tb, b)] {
                            if !t.fits(Ty::Uint) {
                                self.err(x.span, format!("expected uint256, found {}", t.name()));
                            }
                        }
                        Some(if matches!(op, BinOp::Add | BinOp::Sub | BinOp::Mul) {
                            if ta == Ty::Lit && tb == Ty::Lit {
                                Ty::Lit
                            } else {
                                Ty::Uint
                            }
                        } else {
                            Ty::Bool
                        })
                    }
                    BinOp::Eq | BinOp::Ne => {
                        if Ty::unify(ta, tb).is_none() {
                            self.err(e.span, format!("cannot compare {} with {}", ta.name(), tb.name()));
                        }
                        Some(Ty::Bool)
                    }
                    BinOp::And | BinOp::Or => {
                        for (t, x) in [(ta, a), (tb, b)] {
                            if t != Ty::Bool {
                                self.err(x.span, format!("expected bool, found {}", t.name()));
                            }
                        }
                        Some(Ty::Bool)
                    }
                }
            }
            ExprKind::Send(call) => self.send(call, in_branch),
        }
    }
}
