use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::ir::{Flags, Gpr};

/// Where the stack pointer starts when an initial state does not set it.
pub const DEFAULT_STACK: u64 = 0x7fff_0000;

/// A half-open byte range `[start, start + length)` whose contents are secret.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SecretRegion {
    pub start: u64,
    pub length: u64,
}

impl SecretRegion {
    pub fn overlaps(&self, start: u64, len: u64) -> bool {
        let end = self.start.saturating_add(self.length);
        start < end && self.start < start.saturating_add(len)
    }
}

/// Architectural state plus taint labels.
///
/// Taint is tracked per 64-bit register and per 8-byte-aligned memory word.
/// A word with no explicit taint entry is tainted iff it overlaps a secret
/// region.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MachineState {
    pub gpr: [u64; 16],
    pub flags: Flags,
    pub memory: BTreeMap<u64, u8>,
    pub reg_taint: [bool; 16],
    pub flags_taint: bool,
    pub mem_taint: BTreeMap<u64, bool>,
    pub secret_regions: Vec<SecretRegion>,
}

impl Default for MachineState {
    fn default() -> Self {
        let mut gpr = [0; 16];
        gpr[Gpr::Rsp.index()] = DEFAULT_STACK;
        MachineState {
            gpr,
            flags: Flags::default(),
            memory: BTreeMap::new(),
            reg_taint: [false; 16],
            flags_taint: false,
            mem_taint: BTreeMap::new(),
            secret_regions: Vec::new(),
        }
    }
}

impl MachineState {
    pub fn reg(&self, r: Gpr) -> u64 {
        self.gpr[r.index()]
    }

    pub fn set_reg(&mut self, r: Gpr, v: u64) {
        self.gpr[r.index()] = v;
    }

    pub fn taint(&self, r: Gpr) -> bool {
        self.reg_taint[r.index()]
    }

    pub fn set_taint(&mut self, r: Gpr, t: bool) {
        self.reg_taint[r.index()] = t;
    }

    pub fn read_bytes(&self, addr: u64, len: u32) -> u64 {
        (0..len as u64).fold(0u64, |acc, i| {
            let b = self.memory.get(&addr.wrapping_add(i)).copied().unwrap_or(0);
            acc | (b as u64) << (8 * i)
        })
    }

    pub fn write_bytes(&mut self, addr: u64, len: u32, value: u64) {
        for i in 0..len as u64 {
            self.memory
                .insert(addr.wrapping_add(i), (value >> (8 * i)) as u8);
        }
    }

    pub fn load_u64(&self, addr: u64) -> u64 {
        self.read_bytes(addr, 8)
    }

    pub fn store_u64(&mut self, addr: u64, value: u64) {
        self.write_bytes(addr, 8, value)
    }

    fn words(addr: u64, len: u32) -> impl Iterator<Item = u64> {
        let first = addr & !7;
        let last = addr.wrapping_add(len.max(1) as u64 - 1) & !7;
        (0..=last.wrapping_sub(first) / 8).map(move |k| first.wrapping_add(8 * k))
    }

    pub fn word_taint(&self, word: u64) -> bool {
        match self.mem_taint.get(&word) {
            Some(&t) => t,
            None => self.secret_regions.iter().any(|r| r.overlaps(word, 8)),
        }
    }

    /// Taint of the bytes `[addr, addr + len)`.
    pub fn mem_range_taint(&self, addr: u64, len: u32) -> bool {
        Self::words(addr, len).any(|w| self.word_taint(w))
    }

    /// Records the taint of a store. A full aligned word takes the new label;
    /// a partial write can only add taint.
    pub fn set_mem_taint(&mut self, addr: u64, len: u32, taint: bool) {
        for w in Self::words(addr, len).collect::<Vec<_>>() {
            let covers = addr <= w && addr.wrapping_add(len as u64) >= w + 8;
            let t = if covers { taint } else { taint || self.word_taint(w) };
            self.mem_taint.insert(w, t);
        }
    }

    /// Memory with zero bytes dropped, so that "never written" and "written
    /// zero" compare equal.
    pub fn memory_image(&self) -> BTreeMap<u64, u8> {
        self.memory
            .iter()
            .filter(|(_, &v)| v != 0)
            .map(|(&a, &v)| (a, v))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AccessKind {
    Load,
    Store,
}

/// One architectural memory access.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemEvent {
    pub kind: AccessKind,
    pub address: u64,
    pub width: u32,
    pub address_taint: bool,
    /// Issued by an instruction a pass inserted.
    #[serde(skip_serializing_if = "std::ops::Not::not", default)]
    pub synthetic: bool,
    /// Index of the instruction in the flattened program.
    pub pc: usize,
}
