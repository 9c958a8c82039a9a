//! CLite: the contract language accepted by the fuzzer.
//!
//! ```text
//! contract Name {
//!     uint256 total;
//!     mapping(address => uint256) balances;
//!
//!     fn constructor() { total = 0; }
//!     payable fn deposit(note: uint256) {
//!         balances[msg.sender] += msg.value;
//!         if (balances[msg.sender] > 1 ether) { send(msg.sender, 1 wei); }
//!     }
//! }
//! ```
//!
//! Besides the statement forms in the grammar (assignment, `if`/`else`,
//! `require`, `send`, `dcall`, `selfdestruct`, `revert`) the language has
//! immutable `let` locals, `+=`/`-=`, the relational operators `<= >= !=`,
//! denominated literals (`wei`, `finney`, `ether`), hex literals, and an
//! optional third `send` argument giving a literal gas stipend. `send`
//! evaluates to its success flag, so `require(send(a, v, 2300));` checks it.

mod ast;
mod check;
mod codegen;
mod lexer;
mod parser;

use std::fmt;

use thiserror::Error;

use crate::cfg::Cfg;
use crate::package::ContractPackage;

pub use ast::Contract;
pub use codegen::DEFAULT_CALL_GAS;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Span {
    pub line: u32,
    pub col: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiagnosticKind {
    Lexical,
    Syntax,
    Duplicate,
    Semantic,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub kind: DiagnosticKind,
    pub span: Span,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            DiagnosticKind::Lexical => "lexical error",
            DiagnosticKind::Syntax => "syntax error",
            DiagnosticKind::Duplicate => "duplicate declaration",
            DiagnosticKind::Semantic => "semantic error",
        };
        write!(f, "{}:{}: {kind}: {}", self.span.line, self.span.col, self.message)
    }
}

#[derive(Debug, Error)]
#[error("{}", render(.0))]
pub struct CompileError(pub Vec<Diagnostic>);

fn render(d: &[Diagnostic]) -> String {
    d.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("\n")
}

/// Lexes and parses `src` into a syntax tree.
pub fn parse(src: &str) -> Result<Contract, CompileError> {
    let toks = lexer::lex(src).map_err(|d| CompileError(vec![d]))?;
    parser::Parser::new(toks)
        .contract()
        .map_err(|d| CompileError(vec![d]))
}

/// Checks and lowers a parsed contract.
pub fn compile(c: &Contract) -> Result<ContractPackage, CompileError> {
    let access_facts = check::check(c).map_err(CompileError)?;
    let out = codegen::generate(c).map_err(|d| CompileError(vec![d]))?;
    let cfg = Cfg::build(&out.bytecode);
    let pkg = ContractPackage {
        name: c.name.clone(),
        bytecode: out.bytecode,
        functions: out.functions,
        state_vars: out.state_vars,
        access_facts,
        cfg,
        source_map: out.source_map,
    };
    debug_assert!(pkg.validate().is_ok());
    Ok(pkg)
}

pub fn compile_source(src: &str) -> Result<ContractPackage, CompileError> {
    compile(&parse(src)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_input_expects_contract() {
        let err = parse("").unwrap_err();
        assert_eq!(err.0[0].kind, DiagnosticKind::Syntax);
        assert!(err.0[0].message.starts_with("expected contract"));
    }

    #[test]
    fn duplicate_functions_are_rejected() {
        let err = compile_source("contract C { fn f() {} fn f() {} }").unwrap_err();
        assert!(err.0.iter().any(|d| d.kind == DiagnosticKind::Duplicate));
    }

    #[test]
    fn constructor_is_synthesized() {
        let pkg = compile_source("contract C { fn f() {} }").unwrap();
        assert_eq!(pkg.functions.len(), 2);
        assert!(pkg.functions[0].is_constructor);
        assert!(pkg.access_facts.is_empty());
    }

    #[test]
    fn codegen_is_deterministic() {
        let src = "contract C { uint256 x; fn f(a: uint256) { if (a > x) { x = a; } else { x += 1; } } }";
        assert_eq!(compile_source(src).unwrap(), compile_source(src).unwrap());
    }

    #[test]
    fn unresolved_name_is_semantic_error() {
        let err = compile_source("contract C { fn f() { y = 1; } }").unwrap_err();
        assert_eq!(err.0[0].kind, DiagnosticKind::Semantic);
    }
}
