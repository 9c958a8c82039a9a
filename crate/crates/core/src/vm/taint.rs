//! Whole-word taint tags carried alongside stack values and storage.

use serde::{Deserialize, Serialize};

pub const BLOCKSTATE: u16 = 1 << 0;
pub const BALANCE: u16 = 1 << 1;
pub const ORIGIN: u16 = 1 << 2;
pub const CALLRESULT: u16 = 1 << 3;
pub const CALLER: u16 = 1 << 4;
pub const PARAM: u16 = 1 << 5;
pub const WRAP: u16 = 1 << 6;
/// A balance value went through `EQ`.
pub const BALANCE_EQ: u16 = 1 << 7;
/// A balance value went through `LT` or `GT`.
pub const BALANCE_ORD: u16 = 1 << 8;

const NAMES: [(u16, &str); 9] = [
    (BLOCKSTATE, "BLOCKSTATE"),
    (BALANCE, "BALANCE"),
    (ORIGIN, "ORIGIN"),
    (CALLRESULT, "CALLRESULT"),
    (CALLER, "CALLER"),
    (PARAM, "PARAM"),
    (WRAP, "WRAP"),
    (BALANCE_EQ, "BALANCE_EQ"),
    (BALANCE_ORD, "BALANCE_ORD"),
];

/// Tag set. `calls` and `wraps` index the trace's call and wrap events that
/// contributed `CALLRESULT` and `WRAP` respectively.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Taint {
    pub flags: u16,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub calls: Vec<u32>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub wraps: Vec<u32>,
}

impl Taint {
    pub fn flag(flags: u16) -> Taint {
        Taint {
            flags,
            ..Taint::default()
        }
    }

    pub fn has(&self, flag: u16) -> bool {
        self.flags & flag != 0
    }

    pub fn is_clean(&self) -> bool {
        self.flags == 0
    }

    pub fn union(&self, other: &Taint) -> Taint {
        if other.is_clean() {
            return self.clone();
        }
        if self.is_clean() {
            return other.clone();
        }
        let mut out = self.clone();
        out.flags |= other.flags;
        for c in &other.calls {
            if !out.calls.contains(c) {
                out.calls.push(*c);
            }
        }
        for w in &other.wraps {
            if !out.wraps.contains(w) {
                out.wraps.push(*w);
            }
        }
        out
    }

    pub fn names(&self) -> Vec<&'static str> {
        NAMES
            .iter()
            .filter(|(f, _)| self.flags & f != 0)
            .map(|(_, n)| *n)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn union_merges_flags_and_ids() {
        let a = Taint {
            flags: CALLRESULT,
            calls: vec![0],
            wraps: vec![],
        };
        let b = Taint {
            flags: WRAP | CALLRESULT,
            calls: vec![0, 2],
            wraps: vec![5],
        };
        let u = a.union(&b);
        assert_eq!(u.flags, WRAP | CALLRESULT);
        assert_eq!(u.calls, vec![0, 2]);
        assert_eq!(u.wraps, vec![5]);
        assert_eq!(u.names(), vec!["CALLRESULT", "WRAP"]);
    }
}
