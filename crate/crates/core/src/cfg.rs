//! Basic blocks and control-flow edges, built per function.

use std::collections::HashMap;

use serde::Serialize;

use crate::ir::{Function, Instruction, Item, Opcode, Program, StructureError};

pub type BlockId = usize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeKind {
    Taken,
    Fallthrough,
    Unconditional,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct Edge {
    pub from: BlockId,
    pub to: BlockId,
    pub kind: EdgeKind,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Block {
    pub id: BlockId,
    /// Labels defined immediately before the first instruction.
    pub labels: Vec<String>,
    pub insts: Vec<Instruction>,
}

impl Block {
    pub fn terminator(&self) -> Option<&Instruction> {
        self.insts.last().filter(|i| i.is_terminator())
    }

    pub fn ends_in_cond_branch(&self) -> bool {
        self.terminator().is_some_and(|t| t.is_cond_branch())
    }
}

/// Control-flow graph of one function.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Cfg {
    pub function: String,
    pub blocks: Vec<Block>,
    pub edges: Vec<Edge>,
    pub entry: BlockId,
}

impl Cfg {
    /// Splits a function into blocks: a block starts at the first instruction
    /// and at every label, and ends after every branch, call or return.
    pub fn build(func: &Function) -> Result<Cfg, StructureError> {
        let mut blocks: Vec<Block> = Vec::new();
        let mut cur = Block {
            id: 0,
            labels: Vec::new(),
            insts: Vec::new(),
        };
        for item in &func.body {
            match item {
                Item::Label(l) => {
                    if !cur.insts.is_empty() {
                        let id = blocks.len() + 1;
                        blocks.push(std::mem::replace(
                            &mut cur,
                            Block {
                                id,
                                labels: Vec::new(),
                                insts: Vec::new(),
                            },
                        ));
                    }
                    cur.labels.push(l.clone());
                }
                Item::Inst(inst) => {
                    cur.insts.push(inst.clone());
                    if inst.is_terminator() {
                        let id = blocks.len() + 1;
                        blocks.push(std::mem::replace(
                            &mut cur,
                            Block {
                                id,
                                labels: Vec::new(),
                                insts: Vec::new(),
                            },
                        ));
                    }
                }
            }
        }
        if !cur.labels.is_empty() || !cur.insts.is_empty() || blocks.is_empty() {
            blocks.push(cur);
        }

        let mut by_label: HashMap<&str, BlockId> = HashMap::new();
        for b in &blocks {
            for l in &b.labels {
                by_label.insert(l, b.id);
            }
        }
        let resolve = |inst: &Instruction, label: &str| {
            by_label
                .get(label)
                .copied()
                .ok_or_else(|| StructureError::UnresolvedLabel {
                    label: label.to_string(),
                    line: inst.line().unwrap_or(0),
                })
        };

        let mut edges = Vec::new();
        let n = blocks.len();
        for b in &blocks {
            let next = (b.id + 1 < n).then_some(b.id + 1);
            match b.insts.last() {
                Some(t) if matches!(t.op, Opcode::Jcc(_)) => {
                    let to = resolve(t, t.target().unwrap_or_default())?;
                    edges.push(Edge {
                        from: b.id,
                        to,
                        kind: EdgeKind::Taken,
                    });
                    if let Some(nx) = next {
                        edges.push(Edge {
                            from: b.id,
                            to: nx,
                            kind: EdgeKind::Fallthrough,
                        });
                    }
                }
                Some(t) if t.op == Opcode::Jmp => {
                    let to = resolve(t, t.target().unwrap_or_default())?;
                    edges.push(Edge {
                        from: b.id,
                        to,
                        kind: EdgeKind::Unconditional,
                    });
                }
                Some(t) if t.op == Opcode::Ret => {}
                _ => {
                    if let Some(nx) = next {
                        edges.push(Edge {
                            from: b.id,
                            to: nx,
                            kind: EdgeKind::Fallthrough,
                        });
                    }
                }
            }
        }

        Ok(Cfg {
            function: func.name.clone(),
            blocks,
            edges,
            entry: 0,
        })
    }

    pub fn successors(&self, b: BlockId) -> impl Iterator<Item = &Edge> + '_ {
        self.edges.iter().filter(move |e| e.from == b)
    }

    pub fn predecessors(&self, b: BlockId) -> impl Iterator<Item = &Edge> + '_ {
        self.edges.iter().filter(move |e| e.to == b)
    }

    /// Number of ways control can enter `b`; the entry block counts the
    /// function call as one.
    pub fn entry_count(&self, b: BlockId) -> usize {
        self.predecessors(b).count() + usize::from(b == self.entry)
    }

    pub fn block_of_label(&self, label: &str) -> Option<BlockId> {
        self.blocks
            .iter()
            .find(|b| b.labels.iter().any(|l| l == label))
            .map(|b| b.id)
    }

    /// Blocks reachable in one or more steps from any block ending in a
    /// conditional branch.
    pub fn reachable_from_branches(&self) -> Vec<bool> {
        let mut seen = vec![false; self.blocks.len()];
        let mut stack: Vec<BlockId> = self
            .blocks
            .iter()
            .filter(|b| b.ends_in_cond_branch())
            .flat_map(|b| self.successors(b.id).map(|e| e.to))
            .collect();
        while let Some(b) = stack.pop() {
            if std::mem::replace(&mut seen[b], true) {
                continue;
            }
            stack.extend(self.successors(b).map(|e| e.to));
        }
        seen
    }

    /// Instructions in layout order.
    pub fn instructions(&self) -> impl Iterator<Item = &Instruction> {
        self.blocks.iter().flat_map(|b| b.insts.iter())
    }
}

/// Builds one CFG per function.
pub fn build_cfg(program: &Program) -> Result<Vec<Cfg>, StructureError> {
    program.functions.iter().map(Cfg::build).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::parse_asm;

    fn cfg_of(src: &str) -> Cfg {
        let p = parse_asm(src).unwrap().program;
        Cfg::build(&p.functions[0]).unwrap()
    }

    #[test]
    fn straight_line_is_one_block() {
        let cfg = cfg_of("f:\n\tmovq $1, %rax\n\taddq %rax, %rbx\n\tnop\n");
        assert_eq!(cfg.blocks.len(), 1);
        assert!(cfg.edges.is_empty());
    }

    #[test]
    fn forward_branch_diamond() {
        let cfg = cfg_of("f:\n\tcmpq %rax, %rbx\n\tjl L\n\tmovq $1, %rax\nL:\n\tret\n");
        assert_eq!(cfg.blocks.len(), 3);
        let mut edges = cfg.edges.clone();
        edges.sort_by_key(|e| (e.from, e.to, e.kind as u8));
        assert_eq!(
            edges,
            vec![
                Edge { from: 0, to: 1, kind: EdgeKind::Fallthrough },
                Edge { from: 0, to: 2, kind: EdgeKind::Taken },
                Edge { from: 1, to: 2, kind: EdgeKind::Fallthrough },
            ]
        );
        assert!(cfg.successors(2).next().is_none());
    }

    #[test]
    fn figure_gadget_blocks() {
        // movq; cmpq; jl | ret | .Lbody: movq; movq; addq; ret
        let src = "victim:\n\tmovq (%rdi), %rax\n\tcmpq $42, %rax\n\tjl .Lbody\n\tret\n.Lbody:\n\tmovq (%rsi,%rax,8), %rcx\n\tmovq $100, %rdx\n\taddq (%rcx), %rdx\n\tret\n";
        let cfg = cfg_of(src);
        assert_eq!(cfg.blocks.len(), 3);
        let out: Vec<_> = cfg.successors(0).map(|e| (e.to, e.kind)).collect();
        assert_eq!(out.len(), 2);
        assert!(out.contains(&(2, EdgeKind::Taken)));
        assert!(out.contains(&(1, EdgeKind::Fallthrough)));
    }

    #[test]
    fn blocks_reproduce_layout() {
        let src = "\t.globl f, g\nf:\n\tcmpq %rax, %rbx\n.La:\n\tjne .Lb\n\tcall g\n\tnop\n.Lb:\n\tjmp .La\ng:\n\tret\n";
        let p = parse_asm(src).unwrap().program;
        let cfg = Cfg::build(&p.functions[0]).unwrap();
        let flat: Vec<_> = cfg.instructions().cloned().collect();
        let orig: Vec<_> = p.functions[0].instructions().cloned().collect();
        assert_eq!(flat, orig);
        // Call ends a block and falls through.
        let call_block = cfg.blocks.iter().find(|b| b.insts.last().unwrap().op == Opcode::Call).unwrap();
        assert_eq!(cfg.successors(call_block.id).count(), 1);
    }

    #[test]
    fn unresolved_label_is_an_error() {
        let p = Program {
            source: "t".into(),
            functions: vec![Function {
                name: "f".into(),
                body: vec![Item::Inst(Instruction::jump(Opcode::Jmp, ".Lnowhere"))],
            }],
        };
        assert!(matches!(
            Cfg::build(&p.functions[0]),
            Err(StructureError::UnresolvedLabel { .. })
        ));
    }
}
