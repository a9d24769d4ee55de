//! Speculative timing simulator with a cache-trace leak oracle.
//!
//! Instructions are fetched in order, `issue_width` per cycle, and a taken
//! control transfer ends the fetch group. Each instruction issues at the
//! first cycle with a free slot at or after the time its inputs are ready.
//! A conditional branch whose flags are not ready when it is fetched is
//! predicted; a misprediction runs the wrong path on a copy of the machine
//! until the branch resolves, and the loads it issues stay in the cache.

mod config;

use std::collections::{HashMap, HashSet};

use serde::Serialize;

use crate::interp::{step, AccessKind, Cpu, ExecError, Flow, Image, MachineState, MemEvent};
use crate::ir::{Opcode, Program};

pub use config::{line_of, MispredictPolicy, SimInput, TimingConfig, LINE_BYTES};

/// Upper bound on wrong-path instructions per misprediction.
const WRONG_PATH_LIMIT: usize = 4096;
const NEVER: u64 = u64::MAX / 4;

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SimEvent {
    pub issue_cycle: u64,
    pub kind: AccessKind,
    pub address: u64,
    pub line: u64,
    pub speculative: bool,
    pub squashed: bool,
    pub address_taint: bool,
    pub pc: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct BranchRecord {
    pub site: usize,
    pub pc: usize,
    pub fetch_cycle: u64,
    pub flags_ready: u64,
    pub resolve_cycle: u64,
    pub speculated: bool,
    pub mispredicted: bool,
    /// Issue cycle of the first instruction on the mispredicted path.
    pub first_wrong_issue: Option<u64>,
    /// The branch itself executed on a wrong path.
    pub on_wrong_path: bool,
}

/// When one dynamic instruction issued (`None`: fetched but never issued
/// before its path was squashed).
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct IssueRecord {
    pub pc: usize,
    pub fetch_cycle: u64,
    pub issue_cycle: Option<u64>,
    pub complete_cycle: Option<u64>,
    pub squashed: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct SpecTrace {
    pub events: Vec<SimEvent>,
    pub branches: Vec<BranchRecord>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct LeakReport {
    pub leaks: Vec<SimEvent>,
    pub leaked: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimMetrics {
    pub cycles: u64,
    pub dynamic_instructions: u64,
    pub ipc: f64,
}

#[derive(Clone, Debug)]
pub struct SimOutcome {
    pub trace: SpecTrace,
    pub leak: LeakReport,
    pub metrics: SimMetrics,
    pub final_state: MachineState,
    /// Committed instruction indices, in order.
    pub path: Vec<usize>,
    pub issues: Vec<IssueRecord>,
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum SimError {
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error("invalid timing: {0}")]
    Timing(String),
    #[error("policy has no direction for branch site {0}")]
    PolicyMissingSite(usize),
    #[error("branch site {0} was never reached")]
    BranchNotReached(usize),
}

/// Timing state of one path; copied when a wrong path starts.
#[derive(Clone)]
struct Ctx {
    cpu: Cpu,
    reg_ready: [u64; 16],
    flags_ready: u64,
    mem_ready: HashMap<u64, u64>,
    fetch: u64,
    fetched_in_cycle: u32,
    fence_floor: u64,
    max_completion: u64,
    /// Resolve cycles of speculated branches that may still be in flight.
    pending: Vec<u64>,
    spec_until: u64,
}

struct Sim<'a> {
    image: &'a Image,
    timing: &'a TimingConfig,
    policy: &'a MispredictPolicy,
    slots: HashMap<u64, u32>,
    warm: HashSet<u64>,
    events: Vec<SimEvent>,
    branches: Vec<BranchRecord>,
    issues: Vec<IssueRecord>,
}

enum Stop {
    Halt,
    Deadline,
}

impl Sim<'_> {
    fn fetch(&self, ctx: &mut Ctx) -> u64 {
        let f = ctx.fetch;
        ctx.fetched_in_cycle += 1;
        if ctx.fetched_in_cycle == self.timing.issue_width {
            ctx.fetch += 1;
            ctx.fetched_in_cycle = 0;
        }
        f
    }

    fn end_group(ctx: &mut Ctx) {
        if ctx.fetched_in_cycle > 0 {
            ctx.fetch += 1;
            ctx.fetched_in_cycle = 0;
        }
    }

    fn redirect(ctx: &mut Ctx, t: u64) {
        if t > ctx.fetch || (t == ctx.fetch && ctx.fetched_in_cycle > 0) {
            ctx.fetch = t;
            ctx.fetched_in_cycle = 0;
        }
    }

    fn claim(&mut self, ready: u64, deadline: u64) -> Option<u64> {
        let mut c = ready;
        while c < deadline {
            let used = self.slots.entry(c).or_insert(0);
            if *used < self.timing.issue_width {
                *used += 1;
                return Some(c);
            }
            c += 1;
        }
        None
    }

    /// Runs one path until it halts (committed path) or fetch reaches
    /// `deadline` (wrong path). Returns the first issue cycle on the path.
    fn run(
        &mut self,
        ctx: &mut Ctx,
        deadline: u64,
        wrong: bool,
        path: &mut Vec<usize>,
        step_limit: u64,
    ) -> Result<(Stop, Option<u64>), SimError> {
        let mut first_issue: Option<u64> = None;
        let mut executed = 0usize;
        loop {
            if wrong && (ctx.fetch >= deadline || executed >= WRONG_PATH_LIMIT) {
                return Ok((Stop::Deadline, first_issue));
            }
            if !wrong && path.len() as u64 >= step_limit {
                return Err(ExecError::StepLimit(step_limit).into());
            }
            let pc = ctx.cpu.pc;
            let Some(inst) = self.image.insts.get(pc) else {
                if wrong {
                    return Ok((Stop::Deadline, first_issue));
                }
                return Err(ExecError::FellOffEnd { pc }.into());
            };
            let inst = inst.clone();
            let reads: Vec<_> = inst.reg_reads();
            let mut ready = reads
                .iter()
                .map(|r| ctx.reg_ready[r.index()])
                .max()
                .unwrap_or(0);
            if inst.reads_flags() {
                ready = ready.max(ctx.flags_ready);
            }
            let info = match step(self.image, &mut ctx.cpu) {
                Ok(i) => i,
                Err(_) if wrong => return Ok((Stop::Deadline, first_issue)),
                Err(e) => return Err(e.into()),
            };
            executed += 1;
            if !wrong {
                path.push(pc);
            }
            let f = self.fetch(ctx);

            if let Opcode::Jcc(_) = inst.op {
                let taken = info.taken.unwrap_or(false);
                let exec = ready.max(ctx.fence_floor).max(f);
                let resolve = exec.saturating_add(self.timing.branch_resolve_extra);
                ctx.max_completion = ctx.max_completion.max(resolve.min(NEVER));
                ctx.pending.retain(|&r| r > f);
                let site = self.image.site(pc).expect("conditional branch has a site");
                let speculate = exec > f
                    && (ctx.pending.len() as u32) < self.timing.max_spec_depth
                    && resolve < NEVER;
                // A perfect predictor runs ahead without opening a window.
                let oracle = *self.policy == MispredictPolicy::Never;
                let mut record = BranchRecord {
                    site,
                    pc,
                    fetch_cycle: f,
                    flags_ready: ready,
                    resolve_cycle: resolve,
                    speculated: speculate && !oracle,
                    mispredicted: false,
                    first_wrong_issue: None,
                    on_wrong_path: wrong,
                };
                if speculate {
                    let predicted = self
                        .policy
                        .predict(site, taken)
                        .ok_or(SimError::PolicyMissingSite(site))?;
                    ctx.pending.push(resolve);
                    if !oracle {
                        ctx.spec_until = ctx.spec_until.max(resolve);
                    }
                    if predicted != taken {
                        record.mispredicted = true;
                        let idx = self.branches.len();
                        self.branches.push(record);
                        let mut shadow = ctx.clone();
                        shadow.cpu.pc = if predicted {
                            self.image
                                .label(inst.target().unwrap_or_default())
                                .ok_or_else(|| ExecError::UnresolvedLabel(
                                    inst.target().unwrap_or_default().to_string(),
                                ))?
                        } else {
                            pc + 1
                        };
                        if predicted {
                            Self::end_group(&mut shadow);
                        }
                        let (_, first) =
                            self.run(&mut shadow, deadline.min(resolve), true, path, step_limit)?;
                        self.branches[idx].first_wrong_issue = first;
                        Self::redirect(ctx, resolve);
                        if first_issue.is_none() {
                            first_issue = first;
                        }
                        continue;
                    }
                } else if exec > f {
                    Self::redirect(ctx, resolve);
                }
                self.branches.push(record);
                if taken {
                    Self::end_group(ctx);
                }
                continue;
            }

            let loads: Vec<&MemEvent> =
                info.events.iter().filter(|e| e.kind == AccessKind::Load).collect();
            for e in &loads {
                let words = (e.address & !7)..=(e.address + e.width as u64 - 1) & !7;
                for w in words.step_by(8) {
                    if let Some(&t) = ctx.mem_ready.get(&w) {
                        ready = ready.max(t);
                    }
                }
            }
            ready = ready.max(f).max(ctx.fence_floor);
            if inst.op == Opcode::Lfence {
                ready = ready.max(ctx.max_completion);
            }
            let issue = if inst.op == Opcode::Jmp {
                Some(ready.max(f)).filter(|&c| c < deadline)
            } else {
                self.claim(ready, deadline)
            };
            let latency = match loads.first() {
                Some(e) => {
                    let line = line_of(e.address);
                    let base = if self.warm.contains(&line) {
                        self.timing.lat_load_warm
                    } else {
                        self.timing.lat_load_cold
                    };
                    let alu = !matches!(
                        inst.op,
                        Opcode::Mov | Opcode::Pop | Opcode::Popf | Opcode::Ret
                    );
                    base + if alu { self.timing.lat_alu } else { 0 }
                }
                None if inst.op == Opcode::Jmp => 0,
                None => self.timing.lat_alu,
            };
            let complete = issue.map_or(NEVER, |c| c + latency);
            self.issues.push(IssueRecord {
                pc,
                fetch_cycle: f,
                issue_cycle: issue,
                complete_cycle: issue.map(|_| complete),
                squashed: wrong,
            });
            if let Some(c) = issue {
                first_issue.get_or_insert(c);
                ctx.max_completion = ctx.max_completion.max(complete);
                for e in &info.events {
                    if e.kind == AccessKind::Load || !wrong {
                        self.warm.insert(line_of(e.address));
                    }
                    self.events.push(SimEvent {
                        issue_cycle: c,
                        kind: e.kind,
                        address: e.address,
                        line: line_of(e.address),
                        speculative: wrong || c < ctx.spec_until,
                        squashed: wrong,
                        address_taint: e.address_taint,
                        pc,
                    });
                }
            }
            for r in inst.reg_writes() {
                ctx.reg_ready[r.index()] = complete;
            }
            if inst.writes_flags() {
                ctx.flags_ready = complete;
            }
            for e in info.events.iter().filter(|e| e.kind == AccessKind::Store) {
                let words = (e.address & !7)..=(e.address + e.width as u64 - 1) & !7;
                for w in words.step_by(8) {
                    ctx.mem_ready.insert(w, complete);
                }
            }
            if inst.op == Opcode::Lfence {
                ctx.fence_floor = complete;
            }
            match info.flow {
                Flow::Halt => return Ok((Stop::Halt, first_issue)),
                Flow::Jump(_) => Self::end_group(ctx),
                Flow::Next => {}
            }
        }
    }
}

/// Simulates `entry` to completion under the given timing and adversary.
pub fn simulate(
    program: &Program,
    entry: &str,
    init: &MachineState,
    timing: &TimingConfig,
    policy: &MispredictPolicy,
    step_limit: u64,
) -> Result<SimOutcome, SimError> {
    timing.validate().map_err(SimError::Timing)?;
    let image = Image::new(program);
    let pc = program
        .function(entry)
        .and_then(|_| image.label(entry))
        .ok_or_else(|| ExecError::UnknownEntry(entry.to_string()))?;
    let mut sim = Sim {
        image: &image,
        timing,
        policy,
        slots: HashMap::new(),
        warm: timing.warm_lines.iter().map(|n| line_of(n.0)).collect(),
        events: Vec::new(),
        branches: Vec::new(),
        issues: Vec::new(),
    };
    let mut ctx = Ctx {
        cpu: Cpu {
            state: init.clone(),
            pc,
            depth: 0,
        },
        reg_ready: [0; 16],
        flags_ready: 0,
        mem_ready: HashMap::new(),
        fetch: 0,
        fetched_in_cycle: 0,
        fence_floor: 0,
        max_completion: 0,
        pending: Vec::new(),
        spec_until: 0,
    };
    let mut path = Vec::new();
    sim.run(&mut ctx, NEVER, false, &mut path, step_limit)?;
    let last_fetch = ctx.fetch + u64::from(ctx.fetched_in_cycle > 0);
    let cycles = ctx.max_completion.max(last_fetch).max(1);
    let mut events = sim.events;
    events.sort_by_key(|e| e.issue_cycle);
    let leaks: Vec<SimEvent> = events
        .iter()
        .filter(|e| e.squashed && e.address_taint)
        .cloned()
        .collect();
    let dynamic_instructions = path.len() as u64;
    Ok(SimOutcome {
        trace: SpecTrace {
            events,
            branches: sim.branches,
        },
        leak: LeakReport {
            leaked: !leaks.is_empty(),
            leaks,
        },
        metrics: SimMetrics {
            cycles,
            dynamic_instructions,
            ipc: dynamic_instructions as f64 / cycles as f64,
        },
        final_state: ctx.cpu.state,
        path,
        issues: sim.issues,
    })
}

/// Cycles between the first wrong-path issue after branch `site` and that
/// branch's resolution, for its first mispredicted execution (0 when nothing
/// issued or the branch never mispredicted).
pub fn speculation_window(
    program: &Program,
    entry: &str,
    site: usize,
    init: &MachineState,
    timing: &TimingConfig,
    policy: &MispredictPolicy,
    step_limit: u64,
) -> Result<u64, SimError> {
    let out = simulate(program, entry, init, timing, policy, step_limit)?;
    let mut reached = false;
    for b in out.trace.branches.iter().filter(|b| b.site == site && !b.on_wrong_path) {
        reached = true;
        if b.mispredicted {
            return Ok(b
                .first_wrong_issue
                .map_or(0, |first| b.resolve_cycle.saturating_sub(first)));
        }
    }
    if reached {
        Ok(0)
    } else {
        Err(SimError::BranchNotReached(site))
    }
}

#[cfg(test)]
mod tests;
