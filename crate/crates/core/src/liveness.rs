//! Backward may-analysis of flags liveness.
//!
//! Flags are one bit: every instrumentation instruction clobbers the whole
//! arithmetic flag set, so per-flag precision is not needed.

use crate::cfg::{BlockId, Cfg};
use crate::ir::Opcode;

/// `live[b][i]` is the liveness at the point before instruction `i` of block
/// `b`; index `insts.len()` is the point at the block's end.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FlagsLiveness {
    live: Vec<Vec<bool>>,
}

impl FlagsLiveness {
    pub fn before(&self, block: BlockId, index: usize) -> bool {
        self.live[block][index]
    }

    pub fn after(&self, block: BlockId, index: usize) -> bool {
        self.live[block][index + 1]
    }

    pub fn block_entry(&self, block: BlockId) -> bool {
        self.live[block][0]
    }

    pub fn points(&self, block: BlockId) -> &[bool] {
        &self.live[block]
    }
}

pub fn flags_liveness(cfg: &Cfg) -> FlagsLiveness {
    let mut live: Vec<Vec<bool>> = cfg
        .blocks
        .iter()
        .map(|b| vec![false; b.insts.len() + 1])
        .collect();
    loop {
        let mut changed = false;
        for b in cfg.blocks.iter().rev() {
            let out = match b.insts.last().map(|i| i.op) {
                Some(Opcode::Ret) => false,
                _ => cfg.successors(b.id).any(|e| live[e.to][0]),
            };
            let points = &mut live[b.id];
            let n = b.insts.len();
            if points[n] != out {
                points[n] = out;
                changed = true;
            }
            for i in (0..n).rev() {
                let inst = &b.insts[i];
                let v = inst.reads_flags() || (points[i + 1] && !inst.writes_flags());
                if points[i] != v {
                    points[i] = v;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    FlagsLiveness { live }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::parse_asm;

    fn analyze(src: &str) -> (Cfg, FlagsLiveness) {
        let p = parse_asm(src).unwrap().program;
        let cfg = Cfg::build(&p.functions[0]).unwrap();
        let l = flags_liveness(&cfg);
        (cfg, l)
    }

    #[test]
    fn live_between_compare_and_branch() {
        let (_, l) = analyze("f:\n\tcmpq $1, %rax\n\tjl .L\n\tret\n.L:\n\tret\n");
        assert!(!l.before(0, 0));
        assert!(l.after(0, 0));
    }

    #[test]
    fn xor_after_branch_kills() {
        let (_, l) = analyze("f:\n\tcmpq $1, %rax\n\tjl .L\n\txorq %rbx, %rcx\n\tmovq %rcx, %rdx\n\tret\n.L:\n\tret\n");
        // After the branch, in the fallthrough block, the point before xor.
        assert!(!l.block_entry(1));
        assert!(!l.after(1, 0));
    }

    #[test]
    fn diamond_join_predecessor_is_live() {
        // b0: cmp; jne b2 | b1: nop; jmp b3 | b2: cmovl ...; jmp b3 | b3: ret
        let src = "f:\n\tcmpq $1, %rax\n\tjne .Lb\n\tnop\n\tjmp .Lj\n.Lb:\n\tcmovlq %rbx, %rcx\n\tjmp .Lj\n.Lj:\n\tret\n";
        let (cfg, l) = analyze(src);
        assert_eq!(cfg.blocks.len(), 4);
        // Hand-run backward dataflow:
        //   b3 in = false; b2 in = true (cmov reads); b1 in = false;
        //   b0 end = b1.in | b2.in = true; point after cmp = true.
        assert!(!l.block_entry(3));
        assert!(l.block_entry(2));
        assert!(!l.block_entry(1));
        assert!(l.points(0)[2]);
        assert!(l.after(0, 0));
        assert!(!l.before(0, 0));
    }

    #[test]
    fn loop_carried_flags() {
        // Flags set before the loop and read at the loop head stay live
        // around the back edge only where no writer intervenes.
        let src = "f:\n\tcmpq $0, %rax\n.Ltop:\n\tcmovneq %rbx, %rcx\n\tnop\n\tjmp .Ltop\n";
        let (_, l) = analyze(src);
        assert!(l.block_entry(1));
        assert!(l.points(1)[2]);
        assert!(l.after(0, 0));
    }
}
