use std::collections::{HashMap, HashSet};

use crate::cfg::{BlockId, Cfg};
use crate::ir::{Function, Instruction, Item, Opcode, Operand};

use super::PassError;

/// Collects insertions against the original item list of one function and
/// applies them in one pass, so positions never shift while planning.
pub(super) struct Rewriter<'a> {
    func: &'a Function,
    /// Item index of every block instruction.
    pos: Vec<Vec<usize>>,
    /// Item index just past a block's labels.
    head: Vec<usize>,
    prologue: Vec<Instruction>,
    inserts: Vec<(usize, Vec<Instruction>)>,
    retarget: HashMap<usize, String>,
    trampolines: Vec<Item>,
    labels: HashSet<String>,
    inserted: usize,
}

impl<'a> Rewriter<'a> {
    pub fn new(func: &'a Function, cfg: &Cfg) -> Self {
        let n = cfg.blocks.len();
        let mut pos = vec![Vec::new(); n];
        let mut head = vec![0; n];
        let mut b = 0;
        for (k, item) in func.body.iter().enumerate() {
            match item {
                Item::Label(_) => {
                    if !pos[b].is_empty() {
                        b += 1;
                    }
                    head[b] = k + 1;
                }
                Item::Inst(inst) => {
                    if pos[b].is_empty() && head[b] == 0 {
                        head[b] = k;
                    }
                    pos[b].push(k);
                    if inst.is_terminator() {
                        b += 1;
                        if b == n {
                            break;
                        }
                    }
                }
            }
        }
        debug_assert!(cfg
            .blocks
            .iter()
            .all(|blk| blk.insts.len() == pos[blk.id].len()));
        let mut labels: HashSet<String> = func.labels().map(str::to_string).collect();
        labels.insert(func.name.clone());
        Rewriter {
            func,
            pos,
            head,
            prologue: Vec::new(),
            inserts: Vec::new(),
            retarget: HashMap::new(),
            trampolines: Vec::new(),
            labels,
            inserted: 0,
        }
    }

    fn add(&mut self, at: usize, seq: Vec<Instruction>) {
        self.inserted += seq.len();
        self.inserts.push((at, seq));
    }

    /// Before instruction `i` of block `b`; `i` may equal the block length.
    pub fn insert_before(&mut self, b: BlockId, i: usize, seq: Vec<Instruction>) {
        let at = match self.pos[b].get(i) {
            Some(&k) => k,
            None => self.pos[b].last().map_or(self.head[b], |k| k + 1),
        };
        self.add(at, seq);
    }

    pub fn insert_after(&mut self, b: BlockId, i: usize, seq: Vec<Instruction>) {
        let at = self.pos[b][i] + 1;
        self.add(at, seq);
    }

    pub fn insert_at_head(&mut self, b: BlockId, seq: Vec<Instruction>) {
        let at = self.head[b];
        self.add(at, seq);
    }

    pub fn insert_at_function_entry(&mut self, seq: Vec<Instruction>) {
        self.inserted += seq.len();
        self.prologue.extend(seq);
    }

    /// Routes the taken edge of the branch at `(b, i)` through a fresh label
    /// at the end of the function that runs `seq` and jumps on.
    pub fn trampoline(&mut self, b: BlockId, i: usize, seq: Vec<Instruction>) {
        let k = self.pos[b][i];
        let Item::Inst(jcc) = &self.func.body[k] else {
            unreachable!("block positions index instructions")
        };
        let target = jcc.target().unwrap_or_default().to_string();
        let stem: String = self
            .func
            .name
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
            .collect();
        let label = (0..)
            .map(|n| format!(".Ltramp_{}_{}", stem, n))
            .find(|l| !self.labels.contains(l))
            .expect("unbounded label supply");
        self.labels.insert(label.clone());
        self.retarget.insert(k, label.clone());
        self.inserted += seq.len();
        self.trampolines.push(Item::Label(label));
        self.trampolines.extend(seq.into_iter().map(Item::Inst));
        self.trampolines
            .push(Item::Inst(Instruction::jump(Opcode::Jmp, target)));
    }

    pub fn inserted(&self) -> usize {
        self.inserted
    }

    pub fn finish(mut self) -> Result<Function, PassError> {
        if !self.trampolines.is_empty()
            && self.func.instructions().last().is_some_and(|i| i.falls_through())
        {
            return Err(PassError::OpenEnded(self.func.name.clone()));
        }
        self.inserts.sort_by_key(|(at, _)| *at);
        let mut pending = self.inserts.into_iter().peekable();
        let mut body: Vec<Item> = self.prologue.into_iter().map(Item::Inst).collect();
        for (k, item) in self.func.body.iter().enumerate() {
            while let Some((_, seq)) = pending.next_if(|(at, _)| *at == k) {
                body.extend(seq.into_iter().map(Item::Inst));
            }
            match (item, self.retarget.get(&k)) {
                (Item::Inst(inst), Some(label)) => {
                    let mut inst = inst.clone();
                    inst.operands = vec![Operand::Label(label.clone())];
                    body.push(Item::Inst(inst));
                }
                _ => body.push(item.clone()),
            }
        }
        for (_, seq) in pending {
            body.extend(seq.into_iter().map(Item::Inst));
        }
        body.extend(self.trampolines);
        Ok(Function {
            name: self.func.name.clone(),
            body,
        })
    }
}
