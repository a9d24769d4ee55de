use serde::Serialize;

use crate::ir::{Gpr, Program};

/// An instruction that touches a register the hardening passes reserve.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub function: String,
    pub line: Option<u32>,
    pub register: Gpr,
    pub instruction: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {}: ", l)?,
            None => write!(f, "{}: ", self.function)?,
        }
        write!(f, "`{}` uses reserved register %{}", self.instruction, self.register)
    }
}

/// Every (instruction, register) pair, in source order, where the program
/// reads or writes a reserved register.
pub fn verify_reserved(program: &Program, reserved: &[Gpr]) -> Vec<Violation> {
    let mut out = Vec::new();
    for f in &program.functions {
        for inst in f.instructions() {
            let mut regs = inst.mentioned_registers();
            regs.extend(inst.reg_reads());
            regs.extend(inst.reg_writes());
            regs.sort();
            regs.dedup();
            for r in regs.into_iter().filter(|r| reserved.contains(r)) {
                out.push(Violation {
                    function: f.name.clone(),
                    line: inst.line(),
                    register: r,
                    instruction: inst.to_string().replace('\t', " "),
                });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::parse_asm;

    fn prog(src: &str) -> Program {
        parse_asm(src).unwrap().program
    }

    #[test]
    fn clean_program_passes() {
        let p = prog("f:\n\tmovq %rax, %rbx\n\taddq $1, %rbx\n\tret\n");
        assert!(verify_reserved(&p, &[Gpr::R15]).is_empty());
    }

    #[test]
    fn single_use_is_reported() {
        let p = prog("f:\n\txorq %r15, %rax\n\tret\n");
        let v = verify_reserved(&p, &[Gpr::R15]);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].line, Some(2));
        assert_eq!(v[0].register, Gpr::R15);
    }

    #[test]
    fn violations_in_source_order() {
        let p = prog("f:\n\tmovq $1, %r15\n\tmovl $2, %r14d\n\tnop\n\taddq %rax, %r15\n\tret\n");
        let v = verify_reserved(&p, &[Gpr::R14, Gpr::R15]);
        let got: Vec<_> = v.iter().map(|v| (v.line.unwrap(), v.register)).collect();
        assert_eq!(got, vec![(2, Gpr::R15), (3, Gpr::R14), (5, Gpr::R15)]);
    }

    #[test]
    fn address_registers_count() {
        let p = prog("f:\n\tmovq (%rax,%r15,8), %rbx\n\tret\n");
        assert_eq!(verify_reserved(&p, &[Gpr::R15]).len(), 1);
    }
}
