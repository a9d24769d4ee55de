//! Architectural interpreter with taint tracking: the reference semantics.

mod init;
mod semantics;
mod state;

use std::collections::BTreeMap;

use serde::Serialize;

use crate::ir::{Gpr, Program};

pub use init::{parse_num, InitError, InitState, MemoryInit, Num, RegionInit};
pub use semantics::{step, Cpu, Flow, Image, StepInfo, CODE_BASE};
pub use state::{AccessKind, MachineState, MemEvent, SecretRegion, DEFAULT_STACK};

/// Bytes below the final stack pointer that count as dead scratch space when
/// comparing memory images.
pub const DEAD_STACK_WINDOW: u64 = 1 << 20;

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum ExecError {
    #[error("no function named `{0}`")]
    UnknownEntry(String),
    #[error("step limit of {0} instructions exhausted")]
    StepLimit(u64),
    #[error("execution ran past the last instruction (index {pc})")]
    FellOffEnd { pc: usize },
    #[error("instruction {pc}: stack pointer {rsp:#x} is not 8-byte aligned")]
    MisalignedStack { pc: usize, rsp: u64 },
    #[error("instruction {pc}: return to non-code address {address:#x}")]
    BadReturn { pc: usize, address: u64 },
    #[error("undefined label `{0}`")]
    UnresolvedLabel(String),
    #[error("instruction {pc}: unsupported `{instruction}`")]
    Unsupported { pc: usize, instruction: String },
}

#[derive(Clone, Debug)]
pub struct ExecResult {
    pub final_state: MachineState,
    pub dynamic_instructions: u64,
    pub mem_events: Vec<MemEvent>,
    /// Executed instruction indices, in order.
    pub path: Vec<usize>,
}

/// The part of an execution that hardening must not change.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Observable {
    pub gpr: Vec<(Gpr, u64)>,
    pub memory: BTreeMap<u64, u8>,
    pub events: Vec<(AccessKind, u64, u32)>,
}

impl ExecResult {
    /// Registers outside `excluded`, memory outside the dead stack window,
    /// and the memory accesses of non-inserted instructions.
    pub fn observable(&self, excluded: &[Gpr]) -> Observable {
        let s = &self.final_state;
        let rsp = s.reg(Gpr::Rsp);
        let dead = rsp.saturating_sub(DEAD_STACK_WINDOW)..rsp;
        Observable {
            gpr: Gpr::ALL
                .iter()
                .filter(|r| !excluded.contains(r))
                .map(|&r| (r, s.reg(r)))
                .collect(),
            memory: s
                .memory_image()
                .into_iter()
                .filter(|(a, _)| !dead.contains(a))
                .collect(),
            events: self
                .mem_events
                .iter()
                .filter(|e| !e.synthetic)
                .map(|e| (e.kind, e.address, e.width))
                .collect(),
        }
    }
}

/// Runs `entry` until it returns, executing at most `step_limit` instructions.
pub fn exec(
    program: &Program,
    entry: &str,
    init: &MachineState,
    step_limit: u64,
) -> Result<ExecResult, ExecError> {
    let image = Image::new(program);
    let pc = program
        .function(entry)
        .and_then(|_| image.label(entry))
        .ok_or_else(|| ExecError::UnknownEntry(entry.to_string()))?;
    let mut cpu = Cpu {
        state: init.clone(),
        pc,
        depth: 0,
    };
    let mut mem_events = Vec::new();
    let mut path = Vec::new();
    loop {
        if path.len() as u64 >= step_limit {
            return Err(ExecError::StepLimit(step_limit));
        }
        path.push(cpu.pc);
        let info = step(&image, &mut cpu)?;
        mem_events.extend(info.events);
        if info.flow == Flow::Halt {
            break;
        }
    }
    Ok(ExecResult {
        final_state: cpu.state,
        dynamic_instructions: path.len() as u64,
        mem_events,
        path,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::parse_asm;
    use crate::ir::Flags;
    use proptest::prelude::*;

    fn run(src: &str, init: &MachineState) -> ExecResult {
        let p = parse_asm(src).unwrap().program;
        let entry = p.functions[0].name.clone();
        exec(&p, &entry, init, 10_000).unwrap()
    }

    fn with_regs(regs: &[(Gpr, u64)]) -> MachineState {
        let mut s = MachineState::default();
        for &(r, v) in regs {
            s.set_reg(r, v);
        }
        s
    }

    #[test]
    fn double_xor_is_identity() {
        let init = with_regs(&[(Gpr::Rax, 0xdead_beef), (Gpr::R15, 0x1234_5678_9abc)]);
        let r = run("f:\n\txorq %r15, %rax\n\txorq %r15, %rax\n\tret\n", &init);
        assert_eq!(r.final_state.reg(Gpr::Rax), 0xdead_beef);
        assert!(!r.final_state.flags.zf);
    }

    #[test]
    fn and_with_all_ones_is_identity() {
        let init = with_regs(&[(Gpr::Rcx, 0x55aa), (Gpr::R15, u64::MAX)]);
        let r = run("f:\n\tandq %r15, %rcx\n\tret\n", &init);
        assert_eq!(r.final_state.reg(Gpr::Rcx), 0x55aa);
    }

    #[test]
    fn bounds_checked_gadget_touches_bar_of_secret() {
        // if (i < size) { secret = foo[i]; baz = bar[secret]; }
        let src = "f:\n\tcmpq %rsi, %rdi\n\tjae .Lout\n\tmovq (%rdx,%rdi,8), %rax\n\tmovq (%rcx,%rax,1), %rbx\n.Lout:\n\tret\n";
        let mut init = with_regs(&[
            (Gpr::Rdi, 0),
            (Gpr::Rsi, 16),
            (Gpr::Rdx, 0x3000),
            (Gpr::Rcx, 0x10000),
        ]);
        init.store_u64(0x3000, 5);
        let r = run(src, &init);
        let last = r.mem_events.last().unwrap();
        assert_eq!((last.kind, last.address), (AccessKind::Load, 0x10005));
        assert_eq!(r.dynamic_instructions, 5);
    }

    #[test]
    fn compare_sets_signed_and_unsigned_flags() {
        let init = with_regs(&[(Gpr::Rax, u64::MAX)]);
        let r = run("f:\n\tcmpq $1, %rax\n\tret\n", &init);
        let f = r.final_state.flags;
        assert!(f.sf && !f.cf && !f.of && !f.zf);
        let r = run("f:\n\tcmpl $1, %eax\n\taddb $1, %al\n\tret\n", &init);
        assert!(r.final_state.flags.zf && r.final_state.flags.cf);
        assert_eq!(r.final_state.reg(Gpr::Rax), u64::MAX & !0xff);
    }

    #[test]
    fn thirty_two_bit_writes_zero_extend() {
        let init = with_regs(&[(Gpr::Rax, u64::MAX)]);
        let r = run("f:\n\tmovl $7, %eax\n\tmovw $1, %bx\n\tret\n", &init);
        assert_eq!(r.final_state.reg(Gpr::Rax), 7);
        assert_eq!(r.final_state.reg(Gpr::Rbx), 1);
    }

    #[test]
    fn lahf_sahf_round_trip() {
        let mut init = MachineState::default();
        init.flags = Flags { cf: true, zf: true, sf: false, pf: true, af: false, of: true };
        let r = run("f:\n\tlahf\n\tsahf\n\tret\n", &init);
        assert_eq!(r.final_state.flags, init.flags);
        assert_eq!(r.final_state.reg(Gpr::Rax) >> 8, 0x47);
    }

    #[test]
    fn push_pop_and_calls_balance() {
        let src = "\t.globl f, g\nf:\n\tpushq %rbx\n\tcall g\n\tpopq %rbx\n\tret\ng:\n\tpushfq\n\tmovq $9, %rbx\n\tpopfq\n\tret\n";
        let init = with_regs(&[(Gpr::Rbx, 3)]);
        let r = run(src, &init);
        assert_eq!(r.final_state.reg(Gpr::Rbx), 3);
        assert_eq!(r.final_state.reg(Gpr::Rsp), DEFAULT_STACK);
        assert_eq!(r.dynamic_instructions, 8);
    }

    #[test]
    fn misaligned_stack_is_an_error() {
        let p = parse_asm("f:\n\tpushq %rax\n\tret\n").unwrap().program;
        let init = with_regs(&[(Gpr::Rsp, 0x1004)]);
        assert!(matches!(
            exec(&p, "f", &init, 10),
            Err(ExecError::MisalignedStack { .. })
        ));
    }

    #[test]
    fn step_limit_is_enforced() {
        let p = parse_asm("f:\n.L:\n\tjmp .L\n").unwrap().program;
        let r = exec(&p, "f", &MachineState::default(), 50);
        assert_eq!(r.unwrap_err(), ExecError::StepLimit(50));
    }

    #[test]
    fn taint_flows_from_secret_to_address() {
        let src = "f:\n\tmovq (%rdx), %rax\n\tmovq (%rcx,%rax,8), %rbx\n\txorq %rax, %rax\n\tret\n";
        let mut init = with_regs(&[(Gpr::Rdx, 0x5000), (Gpr::Rcx, 0x10000)]);
        init.secret_regions.push(SecretRegion { start: 0x5000, length: 8 });
        let r = run(src, &init);
        assert!(!r.mem_events[0].address_taint);
        assert!(r.mem_events[1].address_taint);
        assert!(r.final_state.taint(Gpr::Rbx));
        assert!(!r.final_state.taint(Gpr::Rax));
    }

    #[test]
    fn masking_with_untainted_zero_clears_taint() {
        let src = "f:\n\tmovq (%rdx), %rax\n\tandq %r15, %rax\n\tret\n";
        let mut init = with_regs(&[(Gpr::Rdx, 0x5000), (Gpr::R15, 0)]);
        init.secret_regions.push(SecretRegion { start: 0x5000, length: 64 });
        let r = run(src, &init);
        assert!(!r.final_state.taint(Gpr::Rax));
    }

    proptest! {
        #[test]
        fn untainted_inputs_stay_untainted(a in any::<u64>(), b in any::<u64>(), c in any::<u64>()) {
            let src = "f:\n\tmovq %rdi, (%rsi)\n\taddq (%rsi), %rax\n\timulq %rbx, %rax\n\tcmpq %rax, %rbx\n\tcmovlq %rax, %rcx\n\tlahf\n\tpushq %rax\n\tpopq %rdx\n\tret\n";
            let init = with_regs(&[(Gpr::Rax, a), (Gpr::Rbx, b), (Gpr::Rdi, c), (Gpr::Rsi, 0x2000)]);
            let r1 = run(src, &init);
            let r2 = run(src, &init);
            prop_assert!(r1.final_state.reg_taint.iter().all(|t| !t));
            prop_assert!(r1.mem_events.iter().all(|e| !e.address_taint));
            prop_assert_eq!(r1.final_state, r2.final_state);
        }

        #[test]
        fn double_xor_any_values(s in any::<u64>(), k in any::<u64>()) {
            let init = with_regs(&[(Gpr::Rax, s), (Gpr::R15, k)]);
            let r = run("f:\n\txorq %r15, %rax\n\txorq %r15, %rax\n\tret\n", &init);
            prop_assert_eq!(r.final_state.reg(Gpr::Rax), s);
        }
    }
}
