//! Initial-state description files.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::ir::Gpr;

use super::state::{MachineState, SecretRegion};

/// A 64-bit number written as a JSON integer (negative values wrap) or as a
/// decimal or `0x`-prefixed string.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "NumRepr", into = "u64")]
pub struct Num(pub u64);

#[derive(Deserialize)]
#[serde(untagged)]
enum NumRepr {
    U(u64),
    I(i64),
    S(String),
}

impl TryFrom<NumRepr> for Num {
    type Error = String;

    fn try_from(r: NumRepr) -> Result<Num, String> {
        match r {
            NumRepr::U(v) => Ok(Num(v)),
            NumRepr::I(v) => Ok(Num(v as u64)),
            NumRepr::S(s) => parse_num(&s).map(Num),
        }
    }
}

impl From<Num> for u64 {
    fn from(n: Num) -> u64 {
        n.0
    }
}

pub fn parse_num(s: &str) -> Result<u64, String> {
    let t = s.trim();
    let (neg, body) = match t.strip_prefix('-') {
        Some(b) => (true, b),
        None => (false, t),
    };
    let v = match body.strip_prefix("0x").or_else(|| body.strip_prefix("0X")) {
        Some(hex) => u64::from_str_radix(hex, 16),
        None => body.parse::<u64>(),
    }
    .map_err(|_| format!("not a number: `{}`", s))?;
    Ok(if neg { v.wrapping_neg() } else { v })
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemoryInit {
    pub address: Num,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub bytes: Vec<u8>,
    /// Little-endian 64-bit words written after `bytes`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub words: Vec<Num>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionInit {
    pub start: Num,
    pub length: Num,
}

/// Registers, memory preloads and secret regions. Schema version 1.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InitState {
    #[serde(default = "schema_one")]
    pub schema: u32,
    #[serde(default)]
    pub registers: BTreeMap<String, Num>,
    #[serde(default)]
    pub memory: Vec<MemoryInit>,
    #[serde(default)]
    pub secret_regions: Vec<RegionInit>,
}

fn schema_one() -> u32 {
    1
}

#[derive(Debug, thiserror::Error)]
pub enum InitError {
    #[error("invalid initial state: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported schema version {0} (expected 1)")]
    Schema(u32),
    #[error("unknown register `{0}`")]
    UnknownRegister(String),
}

impl InitState {
    pub fn from_json(text: &str) -> Result<InitState, InitError> {
        let s: InitState = serde_json::from_str(text)?;
        s.check()?;
        Ok(s)
    }

    pub fn check(&self) -> Result<(), InitError> {
        if self.schema != 1 {
            return Err(InitError::Schema(self.schema));
        }
        for name in self.registers.keys() {
            Gpr::lookup(name.trim_start_matches('%'))
                .ok_or_else(|| InitError::UnknownRegister(name.clone()))?;
        }
        Ok(())
    }

    pub fn to_machine(&self) -> Result<MachineState, InitError> {
        self.check()?;
        let mut s = MachineState::default();
        for (name, v) in &self.registers {
            let r = Gpr::lookup(name.trim_start_matches('%'))
                .ok_or_else(|| InitError::UnknownRegister(name.clone()))?;
            s.set_reg(r.gpr, v.0);
        }
        for m in &self.memory {
            let mut a = m.address.0;
            for &b in &m.bytes {
                s.memory.insert(a, b);
                a = a.wrapping_add(1);
            }
            for w in &m.words {
                s.store_u64(a, w.0);
                a = a.wrapping_add(8);
            }
        }
        s.secret_regions = self
            .secret_regions
            .iter()
            .map(|r| SecretRegion {
                start: r.start.0,
                length: r.length.0,
            })
            .collect();
        Ok(s)
    }

    pub fn set_register(&mut self, r: Gpr, v: u64) {
        self.registers
            .insert(r.name(crate::ir::Width::B64).to_string(), Num(v));
    }

    pub fn write_words(&mut self, address: u64, words: &[u64]) {
        self.memory.push(MemoryInit {
            address: Num(address),
            bytes: Vec::new(),
            words: words.iter().copied().map(Num).collect(),
        });
    }
}
