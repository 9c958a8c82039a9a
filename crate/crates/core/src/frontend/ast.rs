use crate::package::{ValueType, VarType};
use crate::word::Word;

use super::Span;

#[derive(Debug, Clone)]
pub struct Contract {
    pub name: String,
    pub span: Span,
    pub state_vars: Vec<StateVar>,
    pub functions: Vec<Function>,
}

#[derive(Debug, Clone)]
pub struct StateVar {
    pub name: String,
    pub ty: VarType,
    pub span: Span,
}

#[derive(Debug, Clone)]
pub struct Function {
    pub name: String,
    pub params: Vec<ParamDecl>,
    pub payable: bool,
    pub body: Vec<Stmt>,
    pub span: Span,
}

impl Function {
    pub fn is_constructor(&self) -> bool {
        self.name == "constructor"
    }
}

#[derive(Debug, Clone)]
pub struct ParamDecl {
    pub name: String,
    pub ty: ValueType,
    pub span: Span,
}

#[derive(Debug, Clone)]
pub struct Stmt {
    pub kind: StmtKind,
    pub span: Span,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AssignOp {
    Set,
    Add,
    Sub,
}

#[derive(Debug, Clone)]
pub enum LValue {
    Var(String),
    Index(String, Expr),
}

impl LValue {
    pub fn name(&self) -> &str {
        match self {
            LValue::Var(n) | LValue::Index(n, _) => n,
        }
    }
}

#[derive(Debug, Clone)]
pub enum StmtKind {
    Assign { target: LValue, op: AssignOp, value: Expr },
    Let { name: String, value: Expr },
    If { cond: Expr, then: Vec<Stmt>, els: Option<Vec<Stmt>> },
    Require(Expr),
    /// `send(...)` used as a statement; the success flag is discarded.
    Send(SendCall),
    DCall(Expr),
    SelfDestruct(Expr),
    Revert,
}

#[derive(Debug, Clone)]
pub struct SendCall {
    pub to: Box<Expr>,
    pub amount: Box<Expr>,
    pub gas: Option<Word>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Lt,
    Gt,
    Le,
    Ge,
    Eq,
    Ne,
    And,
    Or,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Builtin {
    MsgSender,
    MsgValue,
    MsgOrigin,
    BlockTimestamp,
    BlockNumber,
    BalanceThis,
}

#[derive(Debug, Clone)]
pub struct Expr {
    pub kind: ExprKind,
    pub span: Span,
}

#[derive(Debug, Clone)]
pub enum ExprKind {
    Num(Word),
    Bool(bool),
    Ident(String),
    Index(String, Box<Expr>),
    Builtin(Builtin),
    Not(Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Send(SendCall),
}

impl Expr {
    /// Calls `f` on every identifier referenced by this expression,
    /// including mapping names.
    pub fn visit_idents<'a>(&'a self, f: &mut dyn FnMut(&'a str)) {
        match &self.kind {
            ExprKind::Ident(n) => f(n),
            ExprKind::Index(n, k) => {
                f(n);
                k.visit_idents(f);
            }
            ExprKind::Not(e) => e.visit_idents(f),
            ExprKind::Binary(_, a, b) => {
                a.visit_idents(f);
                b.visit_idents(f);
            }
            ExprKind::Send(s) => {
                s.to.visit_idents(f);
                s.amount.visit_idents(f);
            }
            ExprKind::Num(_) | ExprKind::Bool(_) | ExprKind::Builtin(_) => {}
        }
    }
}
