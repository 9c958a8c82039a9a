//! The compiled contract unit shared by every analysis and by the VM.
//!
//! A package serializes to a single JSON document:
//!
//! ```json
//! {
//!   "name": "Crowdsale",
//!   "bytecode": "5b6064...",
//!   "functions": [{"name": "invest", "params": [{"name": "donations", "ty": "uint256"}],
//!                  "payable": false, "entryOffset": 12, "isConstructor": false}],
//!   "stateVars": [{"name": "goal", "ty": "uint256", "storageSlot": 0}],
//!   "accessFacts": [{"function": "invest", "stateVar": "goal", "kind": "Read"}],
//!   "cfg": {"blocks": [...]},
//!   "sourceMap": [[0, 9], [3, 10]]
//! }
//! ```
//!
//! `sourceMap` pairs each instruction offset with a 1-based source line.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::cfg::Cfg;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueType {
    Uint256,
    Address,
    Bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VarType {
    Uint256,
    Address,
    Bool,
    /// `mapping(address => uint256)`
    Mapping,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub ty: ValueType,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FunctionAbi {
    pub name: String,
    pub params: Vec<Param>,
    pub payable: bool,
    pub entry_offset: usize,
    pub is_constructor: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct StateVarDecl {
    pub name: String,
    pub ty: VarType,
    pub storage_slot: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AccessKind {
    Read,
    Write,
    ReadInBranchCondition,
    RawSelfDependency,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AccessFact {
    pub function: String,
    pub state_var: String,
    pub kind: AccessKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ContractPackage {
    pub name: String,
    #[serde(with = "hex_bytes")]
    pub bytecode: Vec<u8>,
    pub functions: Vec<FunctionAbi>,
    pub state_vars: Vec<StateVarDecl>,
    pub access_facts: Vec<AccessFact>,
    pub cfg: Cfg,
    #[serde(default)]
    pub source_map: Vec<(usize, u32)>,
}

#[derive(Debug, Error)]
pub enum PackageError {
    #[error("malformed package JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("package invariant violated: {0}")]
    Invalid(String),
}

impl ContractPackage {
    pub fn function(&self, name: &str) -> Option<&FunctionAbi> {
        self.functions.iter().find(|f| f.name == name)
    }

    pub fn function_index(&self, name: &str) -> Option<usize> {
        self.functions.iter().position(|f| f.name == name)
    }

    pub fn constructor(&self) -> &FunctionAbi {
        self.functions
            .iter()
            .find(|f| f.is_constructor)
            .expect("validated package has a constructor")
    }

    pub fn state_var(&self, name: &str) -> Option<&StateVarDecl> {
        self.state_vars.iter().find(|v| v.name == name)
    }

    pub fn has_fact(&self, function: &str, var: &str, kind: AccessKind) -> bool {
        self.access_facts
            .iter()
            .any(|f| f.function == function && f.state_var == var && f.kind == kind)
    }

    /// Source line of the instruction at `pc`, if known.
    pub fn line_of(&self, pc: usize) -> Option<u32> {
        self.source_map
            .binary_search_by_key(&pc, |(p, _)| *p)
            .ok()
            .map(|i| self.source_map[i].1)
    }

    /// Offsets of instructions compiled from source line `line`.
    pub fn pcs_at_line(&self, line: u32) -> Vec<usize> {
        self.source_map
            .iter()
            .filter(|(_, l)| *l == line)
            .map(|(p, _)| *p)
            .collect()
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("package serializes");
        hex::encode(Sha256::digest(json))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("package serializes")
    }

    pub fn from_json(s: &str) -> Result<ContractPackage, PackageError> {
        let pkg: ContractPackage = serde_json::from_str(s)?;
        pkg.validate()?;
        Ok(pkg)
    }

    pub fn validate(&self) -> Result<(), PackageError> {
        let bad = |m: String| Err(PackageError::Invalid(m));
        let ctors = self.functions.iter().filter(|f| f.is_constructor).count();
        if ctors != 1 {
            return bad(format!("expected exactly one constructor, found {ctors}"));
        }
        let mut names = BTreeSet::new();
        for f in &self.functions {
            if !names.insert(&f.name) {
                return bad(format!("duplicate function `{}`", f.name));
            }
            if !self.cfg.is_block_start(f.entry_offset) {
                return bad(format!("entry of `{}` is not a block start", f.name));
            }
            let mut pnames = BTreeSet::new();
            for p in &f.params {
                if !pnames.insert(&p.name) {
                    return bad(format!("duplicate parameter `{}` in `{}`", p.name, f.name));
                }
            }
        }
        let mut slots = BTreeSet::new();
        for v in &self.state_vars {
            if !slots.insert(v.storage_slot) {
                return bad(format!("storage slot {} used twice", v.storage_slot));
            }
        }
        for fact in &self.access_facts {
            if self.function(&fact.function).is_none() || self.state_var(&fact.state_var).is_none() {
                return bad(format!("fact references unknown names: {fact:?}"));
            }
        }
        Ok(())
    }
}

mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        hex::decode(s.trim_start_matches("0x")).map_err(serde::de::Error::custom)
    }
}
