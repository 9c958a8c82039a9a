//! Instruction set of the contract VM.
//!
//! A small EVM-flavoured subset. Opcode byte values follow the EVM where an
//! equivalent instruction exists; `ARG`, `MAPLOAD` and `MAPSTORE` are local
//! extensions that replace calldata and hashed-slot mapping access.

use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Opcode {
    Stop,
    Add,
    Mul,
    Sub,
    Lt,
    Gt,
    Eq,
    IsZero,
    And,
    Or,
    Not,
    Balance,
    Origin,
    Caller,
    CallValue,
    Timestamp,
    Number,
    Pop,
    SLoad,
    SStore,
    Jump,
    JumpI,
    JumpDest,
    /// `PUSHn`, n in 1..=32.
    Push(u8),
    /// `DUPn`, n in 1..=16.
    Dup(u8),
    /// `SWAPn`, n in 1..=16.
    Swap(u8),
    /// Push the n-th call argument; one immediate byte.
    Arg,
    MapLoad,
    MapStore,
    Call,
    DelegateCall,
    Revert,
    SelfDestruct,
}

impl Opcode {
    pub fn from_byte(b: u8) -> Option<Opcode> {
        use Opcode::*;
        Some(match b {
            0x00 => Stop,
            0x01 => Add,
            0x02 => Mul,
            0x03 => Sub,
            0x10 => Lt,
            0x11 => Gt,
            0x14 => Eq,
            0x15 => IsZero,
            0x16 => And,
            0x17 => Or,
            0x19 => Not,
            0x31 => Balance,
            0x32 => Origin,
            0x33 => Caller,
            0x34 => CallValue,
            0x42 => Timestamp,
            0x43 => Number,
            0x50 => Pop,
            0x54 => SLoad,
            0x55 => SStore,
            0x56 => Jump,
            0x57 => JumpI,
            0x5b => JumpDest,
            0x60..=0x7f => Push(b - 0x5f),
            0x80..=0x8f => Dup(b - 0x7f),
            0x90..=0x9f => Swap(b - 0x8f),
            0xc0 => MapLoad,
            0xc1 => MapStore,
            0xc2 => Arg,
            0xf1 => Call,
            0xf4 => DelegateCall,
            0xfd => Revert,
            0xff => SelfDestruct,
            _ => return None,
        })
    }

    pub fn to_byte(self) -> u8 {
        use Opcode::*;
        match self {
            Stop => 0x00,
            Add => 0x01,
            Mul => 0x02,
            Sub => 0x03,
            Lt => 0x10,
            Gt => 0x11,
            Eq => 0x14,
            IsZero => 0x15,
            And => 0x16,
            Or => 0x17,
            Not => 0x19,
            Balance => 0x31,
            Origin => 0x32,
            Caller => 0x33,
            CallValue => 0x34,
            Timestamp => 0x42,
            Number => 0x43,
            Pop => 0x50,
            SLoad => 0x54,
            SStore => 0x55,
            Jump => 0x56,
            JumpI => 0x57,
            JumpDest => 0x5b,
            Push(n) => 0x5f + n,
            Dup(n) => 0x7f + n,
            Swap(n) => 0x8f + n,
            MapLoad => 0xc0,
            MapStore => 0xc1,
            Arg => 0xc2,
            Call => 0xf1,
            DelegateCall => 0xf4,
            Revert => 0xfd,
            SelfDestruct => 0xff,
        }
    }

    pub fn from_name(name: &str) -> Option<Opcode> {
        (0..=255u8)
            .filter_map(Opcode::from_byte)
            .find(|op| op.name() == name)
    }

    /// Number of immediate bytes following the opcode.
    pub fn immediate_len(self) -> usize {
        match self {
            Opcode::Push(n) => n as usize,
            Opcode::Arg => 1,
            _ => 0,
        }
    }

    /// Instructions that end a basic block.
    pub fn is_terminator(self) -> bool {
        matches!(
            self,
            Opcode::Jump | Opcode::JumpI | Opcode::Stop | Opcode::Revert | Opcode::SelfDestruct
        )
    }

    pub fn name(self) -> String {
        use Opcode::*;
        match self {
            Push(n) => format!("PUSH{n}"),
            Dup(n) => format!("DUP{n}"),
            Swap(n) => format!("SWAP{n}"),
            other => {
                let s = match other {
                    Stop => "STOP",
                    Add => "ADD",
                    Mul => "MUL",
                    Sub => "SUB",
                    Lt => "LT",
                    Gt => "GT",
                    Eq => "EQ",
                    IsZero => "ISZERO",
                    And => "AND",
                    Or => "OR",
                    Not => "NOT",
                    Balance => "BALANCE",
                    Origin => "ORIGIN",
                    Caller => "CALLER",
                    CallValue => "CALLVALUE",
                    Timestamp => "TIMESTAMP",
                    Number => "NUMBER",
                    Pop => "POP",
                    SLoad => "SLOAD",
                    SStore => "SSTORE",
                    Jump => "JUMP",
                    JumpI => "JUMPI",
                    JumpDest => "JUMPDEST",
                    Arg => "ARG",
                    MapLoad => "MAPLOAD",
                    MapStore => "MAPSTORE",
                    Call => "CALL",
                    DelegateCall => "DELEGATECALL",
                    Revert => "REVERT",
                    SelfDestruct => "SELFDESTRUCT",
                    Push(_) | Dup(_) | Swap(_) => unreachable!(),
                };
                s.to_string()
            }
        }
    }
}

impl fmt::Display for Opcode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

/// One decoded instruction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instruction {
    pub pc: usize,
    pub op: Opcode,
    pub immediate: Vec<u8>,
}

impl Instruction {
    /// Encoded size in bytes.
    pub fn size(&self) -> usize {
        1 + self.immediate.len()
    }

    pub fn next_pc(&self) -> usize {
        self.pc + self.size()
    }
}

/// Linear sweep disassembly. Unknown bytes decode as `None` entries so that
/// offsets stay aligned with the raw code.
pub fn disassemble(code: &[u8]) -> Vec<(usize, Option<Instruction>)> {
    let mut out = Vec::new();
    let mut pc = 0;
    while pc < code.len() {
        match Opcode::from_byte(code[pc]) {
            Some(op) => {
                let n = op.immediate_len();
                let end = (pc + 1 + n).min(code.len());
                let mut immediate = code[pc + 1..end].to_vec();
                immediate.resize(n, 0);
                out.push((pc, Some(Instruction { pc, op, immediate })));
                pc += 1 + n;
            }
            None => {
                out.push((pc, None));
                pc += 1;
            }
        }
    }
    out
}
