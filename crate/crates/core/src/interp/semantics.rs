//! Single-instruction semantics shared by the interpreter and the
//! speculative simulator.

use std::collections::HashMap;

use crate::ir::{Flags, Gpr, Instruction, Item, MemRef, Opcode, Operand, Program, Register, Width};

use super::state::{AccessKind, MachineState, MemEvent};
use super::ExecError;

/// Return addresses pushed by CALL are `CODE_BASE + index of the next
/// instruction`.
pub const CODE_BASE: u64 = 0x40_0000;

/// A program laid out as one instruction array.
#[derive(Clone, Debug)]
pub struct Image {
    pub insts: Vec<Instruction>,
    labels: HashMap<String, usize>,
    /// Ordinal of each conditional branch among all conditional branches,
    /// indexed by instruction position.
    sites: Vec<Option<usize>>,
    site_count: usize,
}

impl Image {
    pub fn new(program: &Program) -> Image {
        let mut insts = Vec::new();
        let mut labels = HashMap::new();
        for f in &program.functions {
            labels.insert(f.name.clone(), insts.len());
            for item in &f.body {
                match item {
                    Item::Label(l) => {
                        labels.insert(l.clone(), insts.len());
                    }
                    Item::Inst(i) => insts.push(i.clone()),
                }
            }
        }
        let mut site_count = 0;
        let sites = insts
            .iter()
            .map(|i| {
                i.is_cond_branch().then(|| {
                    site_count += 1;
                    site_count - 1
                })
            })
            .collect();
        Image {
            insts,
            labels,
            sites,
            site_count,
        }
    }

    pub fn label(&self, name: &str) -> Option<usize> {
        self.labels.get(name).copied()
    }

    pub fn site(&self, pc: usize) -> Option<usize> {
        self.sites.get(pc).copied().flatten()
    }

    pub fn site_count(&self) -> usize {
        self.site_count
    }
}

/// Architectural state plus the position in the program.
#[derive(Clone, Debug)]
pub struct Cpu {
    pub state: MachineState,
    pub pc: usize,
    /// Calls not yet returned from; a RET at depth 0 ends execution.
    pub depth: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Flow {
    Next,
    Jump(usize),
    Halt,
}

#[derive(Clone, Debug)]
pub struct StepInfo {
    pub flow: Flow,
    pub events: Vec<MemEvent>,
    /// Direction of a conditional branch.
    pub taken: Option<bool>,
}

fn sign_bit(v: u64, w: Width) -> bool {
    (v >> (w.bits() - 1)) & 1 == 1
}

fn sign_extend(v: u64, w: Width) -> i64 {
    let shift = 64 - w.bits();
    ((v << shift) as i64) >> shift
}

fn result_flags(res: u64, w: Width) -> Flags {
    Flags {
        zf: res & w.mask() == 0,
        sf: sign_bit(res, w),
        pf: (res as u8).count_ones() % 2 == 0,
        ..Flags::default()
    }
}

fn add_flags(a: u64, b: u64, res: u64, w: Width) -> Flags {
    Flags {
        cf: (a as u128 + b as u128) > w.mask() as u128,
        of: sign_bit(a, w) == sign_bit(b, w) && sign_bit(res, w) != sign_bit(a, w),
        af: (a ^ b ^ res) & 0x10 != 0,
        ..result_flags(res, w)
    }
}

fn sub_flags(a: u64, b: u64, res: u64, w: Width) -> Flags {
    Flags {
        cf: a < b,
        of: sign_bit(a, w) != sign_bit(b, w) && sign_bit(res, w) != sign_bit(a, w),
        af: (a ^ b ^ res) & 0x10 != 0,
        ..result_flags(res, w)
    }
}

struct Exec<'a> {
    cpu: &'a mut Cpu,
    pc: usize,
    synthetic: bool,
    events: Vec<MemEvent>,
}

impl Exec<'_> {
    fn address(&self, m: &MemRef) -> (u64, bool) {
        let s = &self.cpu.state;
        let mut a = m.disp as u64;
        let mut t = false;
        if let Some(b) = m.base {
            a = a.wrapping_add(s.reg(b));
            t |= s.taint(b);
        }
        if let Some((i, scale)) = m.index {
            a = a.wrapping_add(s.reg(i).wrapping_mul(scale as u64));
            t |= s.taint(i);
        }
        (a, t)
    }

    fn event(&mut self, kind: AccessKind, address: u64, width: u32, address_taint: bool) {
        self.events.push(MemEvent {
            kind,
            address,
            width,
            address_taint,
            synthetic: self.synthetic,
            pc: self.pc,
        });
    }

    fn load(&mut self, addr: u64, len: u32, addr_taint: bool) -> (u64, bool) {
        self.event(AccessKind::Load, addr, len, addr_taint);
        let s = &self.cpu.state;
        (s.read_bytes(addr, len), addr_taint || s.mem_range_taint(addr, len))
    }

    fn store(&mut self, addr: u64, len: u32, addr_taint: bool, v: u64, t: bool) {
        self.event(AccessKind::Store, addr, len, addr_taint);
        let s = &mut self.cpu.state;
        s.write_bytes(addr, len, v);
        s.set_mem_taint(addr, len, t);
    }

    fn read(&mut self, op: &Operand, w: Width) -> (u64, bool) {
        match op {
            Operand::Imm(v) => (*v as u64 & w.mask(), false),
            Operand::Reg(r) => (
                self.cpu.state.reg(r.gpr) & r.width.mask(),
                self.cpu.state.taint(r.gpr),
            ),
            Operand::Mem(m) => {
                let (a, at) = self.address(m);
                self.load(a, w.bytes(), at)
            }
            Operand::Label(_) => (0, false),
        }
    }

    fn write_reg(&mut self, r: Register, v: u64, t: bool) {
        let s = &mut self.cpu.state;
        let old = s.reg(r.gpr);
        let (nv, nt) = match r.width {
            Width::B64 => (v, t),
            Width::B32 => (v & 0xffff_ffff, t),
            w => ((old & !w.mask()) | (v & w.mask()), t || s.taint(r.gpr)),
        };
        s.set_reg(r.gpr, nv);
        s.set_taint(r.gpr, nt);
    }

    fn write(&mut self, op: &Operand, w: Width, v: u64, t: bool) {
        match op {
            Operand::Reg(r) => self.write_reg(*r, v, t),
            Operand::Mem(m) => {
                let (a, at) = self.address(m);
                self.store(a, w.bytes(), at, v & w.mask(), t);
            }
            _ => {}
        }
    }

    fn check_stack(&self) -> Result<u64, ExecError> {
        let rsp = self.cpu.state.reg(Gpr::Rsp);
        if rsp % 8 != 0 {
            return Err(ExecError::MisalignedStack { pc: self.pc, rsp });
        }
        Ok(rsp)
    }

    fn push(&mut self, v: u64, t: bool) -> Result<(), ExecError> {
        let rsp = self.check_stack()?.wrapping_sub(8);
        self.cpu.state.set_reg(Gpr::Rsp, rsp);
        self.store(rsp, 8, self.cpu.state.taint(Gpr::Rsp), v, t);
        Ok(())
    }

    fn pop(&mut self) -> Result<(u64, bool), ExecError> {
        let rsp = self.check_stack()?;
        let r = self.load(rsp, 8, self.cpu.state.taint(Gpr::Rsp));
        self.cpu.state.set_reg(Gpr::Rsp, rsp.wrapping_add(8));
        Ok(r)
    }
}

fn target(image: &Image, inst: &Instruction) -> Result<usize, ExecError> {
    let l = inst.target().unwrap_or_default();
    image
        .label(l)
        .ok_or_else(|| ExecError::UnresolvedLabel(l.to_string()))
}

/// Executes the instruction at `cpu.pc` and advances the program counter.
pub fn step(image: &Image, cpu: &mut Cpu) -> Result<StepInfo, ExecError> {
    let pc = cpu.pc;
    let inst = image
        .insts
        .get(pc)
        .ok_or(ExecError::FellOffEnd { pc })?;
    let w = inst.width;
    let ops = &inst.operands;
    let mut x = Exec {
        cpu,
        pc,
        synthetic: inst.is_synthetic(),
        events: Vec::new(),
    };
    let mut flow = Flow::Next;
    let mut taken = None;
    use Opcode::*;
    match inst.op {
        Mov => {
            let (v, t) = x.read(&ops[0], w);
            x.write(&ops[1], w, v, t);
        }
        Lea => {
            let (a, t) = x.address(ops[0].as_mem().expect("lea takes memory"));
            x.write(&ops[1], w, a & w.mask(), t);
        }
        Add | Sub | Imul | Xor | And | Or | Cmp | Test => {
            let (b, tb) = x.read(&ops[0], w);
            let (a, ta) = x.read(&ops[1], w);
            let (res, flags) = match inst.op {
                Add => {
                    let r = a.wrapping_add(b) & w.mask();
                    (r, add_flags(a, b, r, w))
                }
                Sub | Cmp => {
                    let r = a.wrapping_sub(b) & w.mask();
                    (r, sub_flags(a, b, r, w))
                }
                Imul => {
                    let p = sign_extend(a, w) as i128 * sign_extend(b, w) as i128;
                    let r = p as u64 & w.mask();
                    let over = sign_extend(r, w) as i128 != p;
                    (r, Flags { cf: over, of: over, ..result_flags(r, w) })
                }
                Xor => {
                    let r = a ^ b;
                    (r, result_flags(r, w))
                }
                And | Test => {
                    let r = a & b;
                    (r, result_flags(r, w))
                }
                _ => {
                    let r = a | b;
                    (r, result_flags(r, w))
                }
            };
            let zero_operand = (a == 0 && !ta) || (b == 0 && !tb);
            let t = if inst.is_zero_idiom() {
                false
            } else if matches!(inst.op, And | Test | Imul) && zero_operand {
                false
            } else {
                ta || tb
            };
            x.cpu.state.flags = flags;
            x.cpu.state.flags_taint = t;
            if !matches!(inst.op, Cmp | Test) {
                x.write(&ops[1], w, res, t);
            }
        }
        Push => {
            let (v, t) = x.read(&ops[0], Width::B64);
            x.push(v, t)?;
        }
        Pop => {
            let (v, t) = x.pop()?;
            x.write(&ops[0], Width::B64, v, t);
        }
        Pushf => {
            let s = &x.cpu.state;
            let (v, t) = (s.flags.to_rflags(), s.flags_taint);
            x.push(v, t)?;
        }
        Popf => {
            let (v, t) = x.pop()?;
            x.cpu.state.flags = Flags::from_rflags(v);
            x.cpu.state.flags_taint = t;
        }
        Lahf => {
            let s = &mut x.cpu.state;
            let ah = s.flags.to_rflags() & 0xd7;
            let rax = (s.reg(Gpr::Rax) & !0xff00) | ah << 8;
            let t = s.taint(Gpr::Rax) || s.flags_taint;
            s.set_reg(Gpr::Rax, rax);
            s.set_taint(Gpr::Rax, t);
        }
        Sahf => {
            let s = &mut x.cpu.state;
            let ah = (s.reg(Gpr::Rax) >> 8) & 0xd7;
            let of = s.flags.of;
            s.flags = Flags {
                of,
                ..Flags::from_rflags(ah)
            };
            s.flags_taint = s.taint(Gpr::Rax);
        }
        Cmov(cc) => {
            let (v, t) = x.read(&ops[0], w);
            let ft = x.cpu.state.flags_taint;
            let Operand::Reg(d) = ops[1] else {
                return Err(ExecError::Unsupported {
                    pc,
                    instruction: inst.to_string(),
                });
            };
            if cc.eval(&x.cpu.state.flags) {
                x.write_reg(d, v, t || ft);
            } else {
                let old = x.cpu.state.reg(d.gpr);
                let dt = x.cpu.state.taint(d.gpr);
                let keep = if w == Width::B32 { old & 0xffff_ffff } else { old };
                x.cpu.state.set_reg(d.gpr, keep);
                x.cpu.state.set_taint(d.gpr, dt || ft);
            }
        }
        Jcc(cc) => {
            let t = cc.eval(&x.cpu.state.flags);
            taken = Some(t);
            if t {
                flow = Flow::Jump(target(image, inst)?);
            }
        }
        Jmp => flow = Flow::Jump(target(image, inst)?),
        Call => {
            let to = target(image, inst)?;
            x.push(CODE_BASE + pc as u64 + 1, false)?;
            x.cpu.depth += 1;
            flow = Flow::Jump(to);
        }
        Ret => {
            if x.cpu.depth == 0 {
                flow = Flow::Halt;
            } else {
                let (v, _) = x.pop()?;
                let to = v.wrapping_sub(CODE_BASE);
                if to >= image.insts.len() as u64 {
                    return Err(ExecError::BadReturn { pc, address: v });
                }
                x.cpu.depth -= 1;
                flow = Flow::Jump(to as usize);
            }
        }
        Lfence | Nop => {}
    }
    let events = std::mem::take(&mut x.events);
    cpu.pc = match flow {
        Flow::Next => pc + 1,
        Flow::Jump(t) => t,
        Flow::Halt => pc,
    };
    Ok(StepInfo {
        flow,
        events,
        taken,
    })
}
