use crate::package::{ValueType, VarType};

use super::ast::*;
use super::lexer::{Tok, Token};
use super::{Diagnostic, DiagnosticKind, Span};

pub struct Parser {
    toks: Vec<Token>,
    pos: usize,
}

type PResult<T> = Result<T, Diagnostic>;

impl Parser {
    pub fn new(toks: Vec<Token>) -> Parser {
        Parser { toks, pos: 0 }
    }

    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn peek_at(&self, k: usize) -> &Tok {
        let i = (self.pos + k).min(self.toks.len() - 1);
        &self.toks[i].tok
    }

    fn span(&self) -> Span {
        self.toks[self.pos].span
    }

    fn next(&mut self) -> Token {
        let t = self.toks[self.pos].clone();
        if self.pos < self.toks.len() - 1 {
            self.pos += 1;
        }
        t
    }

    fn eat(&mut self, t: &Tok) -> bool {
        if self.peek() == t {
            self.next();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, t: Tok, what: &str) -> PResult<Span> {
        if *self.peek() == t {
            Ok(self.next().span)
        } else {
            Err(self.error(&format!("expected {what}")))
        }
    }

    fn error(&self, msg: &str) -> Diagnostic {
        let found = match self.peek() {
            Tok::Eof => "end of input".to_string(),
            t => format!("{t:?}"),
        };
        Diagnostic {
            kind: DiagnosticKind::Syntax,
            span: self.span(),
            message: format!("{msg}, found {found}"),
        }
    }

    fn ident(&mut self, what: &str) -> PResult<(String, Span)> {
        match self.peek().clone() {
            Tok::Ident(n) => {
                let s = self.next().span;
                Ok((n, s))
            }
            _ => Err(self.error(&format!("expected {what}"))),
        }
    }

    pub fn contract(&mut self) -> PResult<Contract> {
        let span = self.expect(Tok::Contract, "contract")?;
        let (name, _) = self.ident("contract name")?;
        self.expect(Tok::LBrace, "`{`")?;
        let mut state_vars = Vec::new();
        let mut functions = Vec::new();
        loop {
            match self.peek() {
                Tok::RBrace => {
                    self.next();
                    break;
                }
                Tok::Fn | Tok::Payable => functions.push(self.function()?),
                Tok::Uint256 | Tok::Address | Tok::Bool | Tok::Mapping => {
                    let span = self.span();
                    let ty = self.var_type()?;
                    let (name, _) = self.ident("state variable name")?;
                    self.expect(Tok::Semi, "`;`")?;
                    state_vars.push(StateVar { name, ty, span });
                }
                _ => return Err(self.error("expected state variable, function or `}`")),
            }
        }
        if *self.peek() != Tok::Eof {
            return Err(self.error("expected end of input after contract"));
        }
        Ok(Contract {
            name,
            span,
            state_vars,
            functions,
        })
    }

    fn var_type(&mut self) -> PResult<VarType> {
        Ok(match self.next().tok {
            Tok::Uint256 => VarType::Uint256,
            Tok::Address => VarType::Address,
            Tok::Bool => VarType::Bool,
            Tok::Mapping => {
                self.expect(Tok::LParen, "`(`")?;
                self.expect(Tok::Address, "`address` mapping key")?;
                self.expect(Tok::Arrow, "`=>`")?;
                self.expect(Tok::Uint256, "`uint256` mapping value")?;
                self.expect(Tok::RParen, "`)`")?;
                VarType::Mapping
            }
            _ => {
                self.pos -= 1;
                return Err(self.error("expected type"));
            }
        })
    }

    fn value_type(&mut self) -> PResult<ValueType> {
        Ok(match self.peek() {
            Tok::Uint256 => ValueType::Uint256,
            Tok::Address => ValueType::Address,
            Tok::Bool => ValueType::Bool,
            _ => return Err(self.error("expected parameter type")),
        })
        .inspect(|_| {
            self.next();
        })
    }

    fn function(&mut self) -> PResult<Function> {
        let span = self.span();
        let payable = self.eat(&Tok::Payable);
        self.expect(Tok::Fn, "`fn`")?;
        let (name, _) = self.ident("function name")?;
        self.expect(Tok::LParen, "`(`")?;
        let mut params = Vec::new();
        if !self.eat(&Tok::RParen) {
            loop {
                let (pname, pspan) = self.ident("parameter name")?;
                self.expect(Tok::Colon, "`:`")?;
                let ty = self.value_type()?;
                params.push(ParamDecl {
                    name: pname,
                    ty,
                    span: pspan,
                });
                if self.eat(&Tok::RParen) {
                    break;
                }
                self.expect(Tok::Comma, "`,` or `)`")?;
            }
        }
        let body = self.block()?;
        Ok(Function {
            name,
            params,
            payable,
            body,
            span,
        })
    }

    fn block(&mut self) -> PResult<Vec<Stmt>> {
        self.expect(Tok::LBrace, "`{`")?;
        let mut out = Vec::new();
        while !self.eat(&Tok::RBrace) {
            if *self.peek() == Tok::Eof {
                return Err(self.error("expected `}`"));
            }
            out.push(self.stmt()?);
        }
        Ok(out)
    }

    fn stmt(&mut self) -> PResult<Stmt> {
        let span = self.span();
        let kind = match self.peek().clone() {
            Tok::If => {
                self.next();
                self.expect(Tok::LParen, "`(`")?;
                let cond = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                let then = self.block()?;
                let els = if self.eat(&Tok::Else) {
                    if *self.peek() == Tok::If {
                        Some(vec![self.stmt()?])
                    } else {
                        Some(self.block()?)
                    }
                } else {
                    None
                };
                return Ok(Stmt {
                    kind: StmtKind::If { cond, then, els },
                    span,
                });
            }
            Tok::Require => {
                self.next();
                self.expect(Tok::LParen, "`(`")?;
                let e = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                StmtKind::Require(e)
            }
            Tok::Send => StmtKind::Send(self.send_call()?),
            Tok::DCall => {
                self.next();
                self.expect(Tok::LParen, "`(`")?;
                let e = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                StmtKind::DCall(e)
            }
            Tok::SelfDestruct => {
                self.next();
                self.expect(Tok::LParen, "`(`")?;
                let e = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                StmtKind::SelfDestruct(e)
            }
            Tok::Revert => {
                self.next();
                StmtKind::Revert
            }
            Tok::Let => {
                self.next();
                let (name, _) = self.ident("local name")?;
                self.expect(Tok::Assign, "`=`")?;
                let value = self.expr()?;
                StmtKind::Let { name, value }
            }
            Tok::Ident(name) => {
                self.next();
                let target = if self.eat(&Tok::LBracket) {
                    let k = self.expr()?;
                    self.expect(Tok::RBracket, "`]`")?;
                    LValue::Index(name, k)
                } else {
                    LValue::Var(name)
                };
                let op = match self.next().tok {
                    Tok::Assign => AssignOp::Set,
                    Tok::PlusAssign => AssignOp::Add,
                    Tok::MinusAssign => AssignOp::Sub,
                    _ => {
                        self.pos -= 1;
                        return Err(self.error("expected assignment operator"));
                    }
                };
                let value = self.expr()?;
                StmtKind::Assign { target, op, value }
            }
            _ => return Err(self.error("expected statement")),
        };
        self.expect(Tok::Semi, "`;`")?;
        Ok(Stmt { kind, span })
    }

    fn send_call(&mut self) -> PResult<SendCall> {
        self.expect(Tok::Send, "`send`")?;
        self.expect(Tok::LParen, "`(`")?;
        let to = self.expr()?;
        self.expect(Tok::Comma, "`,`")?;
        let amount = self.expr()?;
        let gas = if self.eat(&Tok::Comma) {
            match self.next().tok {
                Tok::Num(n) => Some(n),
                _ => {
                    self.pos -= 1;
                    return Err(self.error("expected gas literal"));
                }
            }
        } else {
            None
        };
        self.expect(Tok::RParen, "`)`")?;
        Ok(SendCall {
            to: Box::new(to),
            amount: Box::new(amount),
            gas,
        })
    }

    pub fn expr(&mut self) -> PResult<Expr> {
        self.binary(0)
    }

    fn binary(&mut self, level: usize) -> PResult<Expr> {
        const LEVELS: &[&[(Tok, BinOp)]] = &[
            &[(Tok::OrOr, BinOp::Or)],
            &[(Tok::AndAnd, BinOp::And)],
            &[(Tok::EqEq, BinOp::Eq), (Tok::NotEq, BinOp::Ne)],
            &[
                (Tok::Lt, BinOp::Lt),
                (Tok::Gt, BinOp::Gt),
                (Tok::Le, BinOp::Le),
                (Tok::Ge, BinOp::Ge),
            ],
            &[(Tok::Plus, BinOp::Add), (Tok::Minus, BinOp::Sub)],
            &[(Tok::Star, BinOp::Mul)],
        ];
        if level == LEVELS.len() {
            return self.unary();
        }
        let mut lhs = self.binary(level + 1)?;
        loop {
            let Some(op) = LEVELS[level]
                .iter()
                .find(|(t, _)| t == self.peek())
                .map(|(_, op)| *op)
            else {
                return Ok(lhs);
            };
            let span = self.next().span;
            let rhs = self.binary(level + 1)?;
            lhs = Expr {
                kind: ExprKind::Binary(op, Box::new(lhs), Box::new(rhs)),
                span,
            };
        }
    }

    fn unary(&mut self) -> PResult<Expr> {
        let span = self.span();
        if self.eat(&Tok::Bang) {
            let e = self.unary()?;
            return Ok(Expr {
                kind: ExprKind::Not(Box::new(e)),
                span,
            });
        }
        self.primary()
    }

    fn primary(&mut self) -> PResult<Expr> {
        let span = self.span();
        let kind = match self.peek().clone() {
            Tok::Num(n) => {
                self.next();
                ExprKind::Num(n)
            }
            Tok::True => {
                self.next();
                ExprKind::Bool(true)
            }
            Tok::False => {
                self.next();
                ExprKind::Bool(false)
            }
            Tok::LParen => {
                self.next();
                let e = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                return Ok(e);
            }
            Tok::Send => ExprKind::Send(self.send_call()?),
            Tok::Ident(name) => {
                self.next();
                match (name.as_str(), self.peek()) {
                    ("msg", Tok::Dot) | ("block", Tok::Dot) => {
                        self.next();
                        let (field, _) = self.ident("field name")?;
                        let b = match (name.as_str(), field.as_str()) {
                            ("msg", "sender") => Builtin::MsgSender,
                            ("msg", "value") => Builtin::MsgValue,
                            ("msg", "origin") => Builtin::MsgOrigin,
                            ("block", "timestamp") => Builtin::BlockTimestamp,
                            ("block", "number") => Builtin::BlockNumber,
                            _ => {
                                return Err(Diagnostic {
                                    kind: DiagnosticKind::Syntax,
                                    span,
                                    message: format!("unknown builtin `{name}.{field}`"),
                                })
                            }
                        };
                        ExprKind::Builtin(b)
                    }
                    ("balance", Tok::LParen) if *self.peek_at(1) == Tok::Ident("this".into()) => {
                        self.next();
                        self.next();
                        self.expect(Tok::RParen, "`)`")?;
                        ExprKind::Builtin(Builtin::BalanceThis)
                    }
                    (_, Tok::LBracket) => {
                        self.next();
                        let k = self.expr()?;
                        self.expect(Tok::RBracket, "`]`")?;
                        ExprKind::Index(name, Box::new(k))
                    }
                    _ => ExprKind::Ident(name),
                }
            }
            _ => return Err(self.error("expected expression")),
        };
        Ok(Expr { kind, span })
    }
}
