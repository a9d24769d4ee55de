//! The four hardening transformations and their shared insertion machinery.

mod insert;
mod loads;
mod safety;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cfg::{Cfg, EdgeKind};
use crate::ir::{Gpr, Instruction, Opcode, Operand, Program, StructureError, Width};
use crate::liveness::flags_liveness;
use crate::reserved::{verify_reserved, Violation};

pub use loads::{select_hardened_loads, LoadSite};
pub use safety::{check_flags_safety, FlagsHazard};

use insert::Rewriter;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PassKind {
    #[serde(rename = "lfence")]
    Lfence,
    #[serde(rename = "lahf")]
    LahfDep,
    #[serde(rename = "slh")]
    SlhCmov,
    #[serde(rename = "argdep")]
    ArgDep,
}

impl PassKind {
    pub const ALL: [PassKind; 4] = [
        PassKind::Lfence,
        PassKind::LahfDep,
        PassKind::SlhCmov,
        PassKind::ArgDep,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PassKind::Lfence => "lfence",
            PassKind::LahfDep => "lahf",
            PassKind::SlhCmov => "slh",
            PassKind::ArgDep => "argdep",
        }
    }
}

impl fmt::Display for PassKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PassKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PassKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown pass `{}` (expected lfence, lahf, slh or argdep)", s))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PassConfig {
    pub kind: PassKind,
    pub dep_register: Gpr,
    /// Source of zeros for the mask CMOV; only the SLH pass uses it.
    pub zero_register: Gpr,
    pub instrument_both_edges: bool,
    /// Instrument only the taken edge, as the textbook listings draw it.
    pub figure_fidelity: bool,
}

impl PassConfig {
    pub fn new(kind: PassKind) -> Self {
        PassConfig {
            kind,
            dep_register: Gpr::R15,
            zero_register: Gpr::R14,
            instrument_both_edges: true,
            figure_fidelity: false,
        }
    }

    pub fn validate(&self) -> Result<(), PassError> {
        let bad = |why: String| Err(PassError::InvalidConfig(why));
        for (what, r) in [("dep", self.dep_register), ("zero", self.zero_register)] {
            if matches!(r, Gpr::Rax | Gpr::Rsp) {
                return bad(format!("{} register cannot be %{}", what, r));
            }
        }
        if self.dep_register == self.zero_register {
            return bad(format!(
                "dep and zero registers must differ (both %{})",
                self.dep_register
            ));
        }
        Ok(())
    }

    pub fn both_edges(&self) -> bool {
        self.instrument_both_edges && !self.figure_fidelity
    }

    /// Registers the pass writes and therefore requires the input to leave
    /// alone.
    pub fn reserved(&self) -> Vec<Gpr> {
        match self.kind {
            PassKind::Lfence => Vec::new(),
            PassKind::LahfDep | PassKind::ArgDep => vec![self.dep_register],
            PassKind::SlhCmov => vec![self.dep_register, self.zero_register],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SkippedBranch {
    pub function: String,
    pub line: Option<u32>,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct PassReport {
    pub branches_instrumented: usize,
    pub edges_instrumented: usize,
    pub loads_instrumented: usize,
    /// Inserted instructions, not counting trampoline jumps.
    pub instructions_inserted: usize,
    /// Sites wrapped in PUSHF/POPF because flags were live there.
    pub flags_conflicts_resolved: usize,
    pub trampoline_jumps: usize,
    /// Bare `pop %rax` on uninstrumented LAHF edges that keep the stack balanced.
    pub balance_pops: usize,
    /// Functions that received the SLH mask initialization.
    pub functions_initialized: usize,
    /// XORs of comparison arguments into the dependency register.
    pub argument_xors: usize,
    pub skipped_branches: Vec<SkippedBranch>,
}

impl PassReport {
    /// Instruction count predicted from the report's site counts.
    pub fn closed_form(&self, kind: PassKind) -> usize {
        let (b, e, l, c) = (
            self.branches_instrumented,
            self.edges_instrumented,
            self.loads_instrumented,
            self.flags_conflicts_resolved,
        );
        match kind {
            PassKind::Lfence => e,
            PassKind::LahfDep => b + 3 * e + self.balance_pops + 2 * l + 2 * c,
            PassKind::SlhCmov => 2 * self.functions_initialized + e + l + 2 * c,
            PassKind::ArgDep => self.argument_xors + 2 * l + 2 * c,
        }
    }

    fn absorb(&mut self, other: PassReport) {
        self.branches_instrumented += other.branches_instrumented;
        self.edges_instrumented += other.edges_instrumented;
        self.loads_instrumented += other.loads_instrumented;
        self.instructions_inserted += other.instructions_inserted;
        self.flags_conflicts_resolved += other.flags_conflicts_resolved;
        self.trampoline_jumps += other.trampoline_jumps;
        self.balance_pops += other.balance_pops;
        self.functions_initialized += other.functions_initialized;
        self.argument_xors += other.argument_xors;
        self.skipped_branches.extend(other.skipped_branches);
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum PassError {
    #[error("invalid pass configuration: {0}")]
    InvalidConfig(String),
    #[error("input uses reserved registers: {}", join_violations(.0))]
    Reserved(Vec<Violation>),
    #[error(transparent)]
    Structure(#[from] StructureError),
    #[error("function `{0}` falls through its last instruction; cannot append trampolines")]
    OpenEnded(String),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

pub fn harden(program: &Program, config: &PassConfig) -> Result<(Program, PassReport), PassError> {
    config.validate()?;
    let reserved = config.reserved();
    if !reserved.is_empty() {
        let v = verify_reserved(program, &reserved);
        if !v.is_empty() {
            return Err(PassError::Reserved(v));
        }
    }
    let mut report = PassReport::default();
    let mut functions = Vec::with_capacity(program.functions.len());
    for f in &program.functions {
        let cfg = Cfg::build(f)?;
        let mut rw = Rewriter::new(f, &cfg);
        let r = instrument(&cfg, config, &mut rw);
        functions.push(rw.finish()?);
        report.absorb(r);
    }
    Ok((
        Program {
            source: program.source.clone(),
            functions,
        },
        report,
    ))
}

pub fn harden_lfence(p: &Program, c: &PassConfig) -> Result<(Program, PassReport), PassError> {
    harden(p, &PassConfig { kind: PassKind::Lfence, ..c.clone() })
}

pub fn harden_lahf(p: &Program, c: &PassConfig) -> Result<(Program, PassReport), PassError> {
    harden(p, &PassConfig { kind: PassKind::LahfDep, ..c.clone() })
}

pub fn harden_slh(p: &Program, c: &PassConfig) -> Result<(Program, PassReport), PassError> {
    harden(p, &PassConfig { kind: PassKind::SlhCmov, ..c.clone() })
}

pub fn harden_argdep(p: &Program, c: &PassConfig) -> Result<(Program, PassReport), PassError> {
    harden(p, &PassConfig { kind: PassKind::ArgDep, ..c.clone() })
}

fn reg(r: Gpr) -> Operand {
    Operand::Reg(r.full())
}

fn push_rax() -> Instruction {
    Instruction::new(Opcode::Push, Width::B64, vec![reg(Gpr::Rax)])
}

fn pop_rax() -> Instruction {
    Instruction::new(Opcode::Pop, Width::B64, vec![reg(Gpr::Rax)])
}

fn mov_imm(v: i64, r: Gpr) -> Instruction {
    Instruction::new(Opcode::Mov, Width::B64, vec![Operand::Imm(v), reg(r)])
}

fn pushf() -> Instruction {
    Instruction::new(Opcode::Pushf, Width::B64, Vec::new())
}

fn popf() -> Instruction {
    Instruction::new(Opcode::Popf, Width::B64, Vec::new())
}

/// Wraps a flags-clobbering sequence so the flags survive it.
fn wrapped(seq: Vec<Instruction>) -> Vec<Instruction> {
    let mut out = vec![pushf()];
    out.extend(seq);
    out.push(popf());
    out
}

fn instrument(cfg: &Cfg, config: &PassConfig, rw: &mut Rewriter) -> PassReport {
    let live = flags_liveness(cfg);
    let dep = config.dep_register;
    let mut report = PassReport::default();

    // Loads first, so that their masks precede any edge code that shares
    // an insertion point.
    let mask = |d: Gpr| -> Vec<Instruction> {
        match config.kind {
            PassKind::Lfence => Vec::new(),
            PassKind::SlhCmov => vec![Instruction::rr(Opcode::And, dep, d)],
            PassKind::LahfDep | PassKind::ArgDep => vec![
                Instruction::rr(Opcode::Xor, dep, d),
                Instruction::rr(Opcode::Xor, dep, d),
            ],
        }
    };
    if config.kind != PassKind::Lfence {
        for site in select_hardened_loads(cfg) {
            let block = &cfg.blocks[site.block];
            let mut p = site.index + 1;
            let at = loop {
                if !live.before(site.block, p) {
                    break Some(p);
                }
                if p == block.insts.len() {
                    break None;
                }
                let next = &block.insts[p];
                if next.is_terminator()
                    || next.reg_reads().contains(&site.dest)
                    || next.reg_writes().contains(&site.dest)
                {
                    break None;
                }
                p += 1;
            };
            let seq = mask(site.dest);
            report.loads_instrumented += 1;
            match at {
                Some(p) => rw.insert_before(site.block, p, seq),
                None => {
                    report.flags_conflicts_resolved += 1;
                    rw.insert_before(site.block, site.index + 1, wrapped(seq));
                }
            }
        }
    }

    let branch_blocks: Vec<usize> = cfg
        .blocks
        .iter()
        .filter(|b| b.ends_in_cond_branch())
        .map(|b| b.id)
        .collect();

    if config.kind == PassKind::ArgDep {
        for &b in &branch_blocks {
            let block = &cfg.blocks[b];
            let jcc = block.insts.len() - 1;
            let setter = (0..jcc).rev().find(|&i| block.insts[i].writes_flags());
            let usable = setter.filter(|&i| {
                use Opcode::*;
                matches!(
                    block.insts[i].op,
                    Cmp | Test | Add | Sub | Imul | Xor | And | Or
                )
            });
            let Some(s) = usable else {
                report.skipped_branches.push(SkippedBranch {
                    function: cfg.function.clone(),
                    line: block.insts[jcc].line(),
                    reason: match setter {
                        Some(i) => format!("flags come from `{}`", block.insts[i]),
                        None => "no flag-setting instruction in the branch's block".into(),
                    },
                });
                continue;
            };
            let seq: Vec<Instruction> = block.insts[s]
                .operands
                .iter()
                .filter_map(Operand::as_reg)
                .map(|r| Instruction::rr(Opcode::Xor, r.gpr, dep))
                .collect();
            report.branches_instrumented += 1;
            report.argument_xors += seq.len();
            rw.insert_before(b, s, seq);
        }
        report.instructions_inserted = rw.inserted();
        return report;
    }

    if config.kind == PassKind::SlhCmov && !branch_blocks.is_empty() {
        rw.insert_at_function_entry(vec![mov_imm(-1, dep), mov_imm(0, config.zero_register)]);
        report.functions_initialized += 1;
    }

    for &b in &branch_blocks {
        let block = &cfg.blocks[b];
        let jcc = block.insts.len() - 1;
        let cc = block.insts[jcc].op.cond().expect("conditional branch");
        report.branches_instrumented += 1;
        if config.kind == PassKind::LahfDep {
            rw.insert_before(b, jcc, vec![push_rax()]);
        }
        for e in cfg.successors(b) {
            let instrumented = e.kind == EdgeKind::Taken || config.both_edges();
            let target_live = live.block_entry(e.to);
            let seq = if !instrumented {
                if config.kind == PassKind::LahfDep {
                    report.balance_pops += 1;
                    vec![pop_rax()]
                } else {
                    continue;
                }
            } else {
                report.edges_instrumented += 1;
                match config.kind {
                    PassKind::Lfence => vec![Instruction::nullary(Opcode::Lfence)],
                    PassKind::SlhCmov => {
                        let c = if e.kind == EdgeKind::Taken { cc.invert() } else { cc };
                        vec![Instruction::rr(Opcode::Cmov(c), config.zero_register, dep)]
                    }
                    PassKind::LahfDep => {
                        let x = vec![Instruction::rr(Opcode::Xor, Gpr::Rax, dep)];
                        let x = if target_live {
                            report.flags_conflicts_resolved += 1;
                            wrapped(x)
                        } else {
                            x
                        };
                        let mut seq = vec![Instruction::nullary(Opcode::Lahf)];
                        seq.extend(x);
                        seq.push(pop_rax());
                        seq
                    }
                    PassKind::ArgDep => unreachable!(),
                }
            };
            match e.kind {
                EdgeKind::Fallthrough => rw.insert_after(b, jcc, seq),
                _ if cfg.entry_count(e.to) == 1 => rw.insert_at_head(e.to, seq),
                _ => {
                    rw.trampoline(b, jcc, seq);
                    report.trampoline_jumps += 1;
                }
            }
        }
    }
    report.instructions_inserted = rw.inserted();
    report
}
