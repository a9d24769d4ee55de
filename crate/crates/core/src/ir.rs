//! Typed representation of the supported x86-64 instruction subset.

use std::fmt;

use serde::{Deserialize, Serialize};

/// The sixteen general-purpose registers, numbered as in the ModRM encoding.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gpr {
    Rax,
    Rcx,
    Rdx,
    Rbx,
    Rsp,
    Rbp,
    Rsi,
    Rdi,
    R8,
    R9,
    R10,
    R11,
    R12,
    R13,
    R14,
    R15,
}

impl Gpr {
    pub const ALL: [Gpr; 16] = [
        Gpr::Rax,
        Gpr::Rcx,
        Gpr::Rdx,
        Gpr::Rbx,
        Gpr::Rsp,
        Gpr::Rbp,
        Gpr::Rsi,
        Gpr::Rdi,
        Gpr::R8,
        Gpr::R9,
        Gpr::R10,
        Gpr::R11,
        Gpr::R12,
        Gpr::R13,
        Gpr::R14,
        Gpr::R15,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Gpr> {
        Gpr::ALL.get(i).copied()
    }

    /// Register name at the given width, without the `%` sigil.
    pub fn name(self, width: Width) -> &'static str {
        const NAMES: [[&str; 4]; 16] = [
            ["al", "ax", "eax", "rax"],
            ["cl", "cx", "ecx", "rcx"],
            ["dl", "dx", "edx", "rdx"],
            ["bl", "bx", "ebx", "rbx"],
            ["spl", "sp", "esp", "rsp"],
            ["bpl", "bp", "ebp", "rbp"],
            ["sil", "si", "esi", "rsi"],
            ["dil", "di", "edi", "rdi"],
            ["r8b", "r8w", "r8d", "r8"],
            ["r9b", "r9w", "r9d", "r9"],
            ["r10b", "r10w", "r10d", "r10"],
            ["r11b", "r11w", "r11d", "r11"],
            ["r12b", "r12w", "r12d", "r12"],
            ["r13b", "r13w", "r13d", "r13"],
            ["r14b", "r14w", "r14d", "r14"],
            ["r15b", "r15w", "r15d", "r15"],
        ];
        NAMES[self.index()][width.ordinal()]
    }

    /// Looks up a register by its AT&T name (no `%`), at any width.
    pub fn lookup(name: &str) -> Option<Register> {
        let lower = name.to_ascii_lowercase();
        for gpr in Gpr::ALL {
            for width in Width::ALL {
                if gpr.name(width) == lower {
                    return Some(Register::new(gpr, width));
                }
            }
        }
        None
    }

    pub fn full(self) -> Register {
        Register::new(self, Width::B64)
    }
}

impl fmt::Display for Gpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name(Width::B64))
    }
}

/// Operand size.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Width {
    B8,
    B16,
    B32,
    B64,
}

impl Width {
    pub const ALL: [Width; 4] = [Width::B8, Width::B16, Width::B32, Width::B64];

    fn ordinal(self) -> usize {
        match self {
            Width::B8 => 0,
            Width::B16 => 1,
            Width::B32 => 2,
            Width::B64 => 3,
        }
    }

    pub fn bits(self) -> u32 {
        8 << self.ordinal()
    }

    pub fn bytes(self) -> u32 {
        self.bits() / 8
    }

    pub fn mask(self) -> u64 {
        match self {
            Width::B64 => u64::MAX,
            w => (1u64 << w.bits()) - 1,
        }
    }

    pub fn suffix(self) -> char {
        match self {
            Width::B8 => 'b',
            Width::B16 => 'w',
            Width::B32 => 'l',
            Width::B64 => 'q',
        }
    }

    pub fn from_suffix(c: char) -> Option<Width> {
        match c {
            'b' => Some(Width::B8),
            'w' => Some(Width::B16),
            'l' => Some(Width::B32),
            'q' => Some(Width::B64),
            _ => None,
        }
    }
}

/// A general-purpose register viewed at a particular width. All widths of one
/// register alias the same 64-bit storage.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Register {
    pub gpr: Gpr,
    pub width: Width,
}

impl Register {
    pub fn new(gpr: Gpr, width: Width) -> Self {
        Register { gpr, width }
    }
}

impl fmt::Display for Register {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "%{}", self.gpr.name(self.width))
    }
}

/// Condition codes usable by `Jcc` and `CMOVcc`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CondCode {
    E,
    NE,
    L,
    LE,
    G,
    GE,
    B,
    BE,
    A,
    AE,
    S,
    NS,
    O,
    NO,
}

impl CondCode {
    pub const ALL: [CondCode; 14] = [
        CondCode::E,
        CondCode::NE,
        CondCode::L,
        CondCode::LE,
        CondCode::G,
        CondCode::GE,
        CondCode::B,
        CondCode::BE,
        CondCode::A,
        CondCode::AE,
        CondCode::S,
        CondCode::NS,
        CondCode::O,
        CondCode::NO,
    ];

    pub fn invert(self) -> CondCode {
        use CondCode::*;
        match self {
            E => NE,
            NE => E,
            L => GE,
            GE => L,
            LE => G,
            G => LE,
            B => AE,
            AE => B,
            BE => A,
            A => BE,
            S => NS,
            NS => S,
            O => NO,
            NO => O,
        }
    }

    /// Canonical lowercase suffix (`jl`, `cmovge`, ...).
    pub fn suffix(self) -> &'static str {
        use CondCode::*;
        match self {
            E => "e",
            NE => "ne",
            L => "l",
            LE => "le",
            G => "g",
            GE => "ge",
            B => "b",
            BE => "be",
            A => "a",
            AE => "ae",
            S => "s",
            NS => "ns",
            O => "o",
            NO => "no",
        }
    }

    /// Accepts canonical suffixes and the usual assembler aliases.
    pub fn from_suffix(s: &str) -> Option<CondCode> {
        use CondCode::*;
        Some(match s {
            "e" | "z" => E,
            "ne" | "nz" => NE,
            "l" | "nge" => L,
            "le" | "ng" => LE,
            "g" | "nle" => G,
            "ge" | "nl" => GE,
            "b" | "c" | "nae" => B,
            "be" | "na" => BE,
            "a" | "nbe" => A,
            "ae" | "nb" | "nc" => AE,
            "s" => S,
            "ns" => NS,
            "o" => O,
            "no" => NO,
            _ => return None,
        })
    }

    pub fn eval(self, f: &Flags) -> bool {
        use CondCode::*;
        match self {
            E => f.zf,
            NE => !f.zf,
            L => f.sf != f.of,
            GE => f.sf == f.of,
            LE => f.zf || f.sf != f.of,
            G => !f.zf && f.sf == f.of,
            B => f.cf,
            AE => !f.cf,
            BE => f.cf || f.zf,
            A => !f.cf && !f.zf,
            S => f.sf,
            NS => !f.sf,
            O => f.of,
            NO => !f.of,
        }
    }
}

/// Arithmetic status flags.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Flags {
    pub cf: bool,
    pub pf: bool,
    pub af: bool,
    pub zf: bool,
    pub sf: bool,
    pub of: bool,
}

impl Flags {
    /// RFLAGS image as pushed by PUSHF (reserved bit 1 always set).
    pub fn to_rflags(self) -> u64 {
        (self.cf as u64)
            | 1 << 1
            | (self.pf as u64) << 2
            | (self.af as u64) << 4
            | (self.zf as u64) << 6
            | (self.sf as u64) << 7
            | (self.of as u64) << 11
    }

    pub fn from_rflags(v: u64) -> Flags {
        Flags {
            cf: v & 1 != 0,
            pf: v & (1 << 2) != 0,
            af: v & (1 << 4) != 0,
            zf: v & (1 << 6) != 0,
            sf: v & (1 << 7) != 0,
            of: v & (1 << 11) != 0,
        }
    }
}

/// `disp(base, index, scale)`. Addressing is always 64-bit.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MemRef {
    pub disp: i64,
    pub base: Option<Gpr>,
    /// Index register and its scale (1, 2, 4 or 8).
    pub index: Option<(Gpr, u8)>,
}

impl MemRef {
    pub fn base(base: Gpr) -> Self {
        MemRef {
            disp: 0,
            base: Some(base),
            index: None,
        }
    }

    pub fn registers(&self) -> impl Iterator<Item = Gpr> + '_ {
        self.base.into_iter().chain(self.index.map(|(r, _)| r))
    }
}

impl fmt::Display for MemRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.base.is_none() && self.index.is_none() {
            return write!(f, "{}", self.disp);
        }
        if self.disp != 0 {
            write!(f, "{}", self.disp)?;
        }
        f.write_str("(")?;
        if let Some(b) = self.base {
            write!(f, "%{}", b)?;
        }
        if let Some((i, s)) = self.index {
            write!(f, ",%{},{}", i, s)?;
        }
        f.write_str(")")
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Operand {
    Imm(i64),
    Reg(Register),
    Mem(MemRef),
    Label(String),
}

impl Operand {
    pub fn as_reg(&self) -> Option<Register> {
        match self {
            Operand::Reg(r) => Some(*r),
            _ => None,
        }
    }

    pub fn as_mem(&self) -> Option<&MemRef> {
        match self {
            Operand::Mem(m) => Some(m),
            _ => None,
        }
    }

    /// Registers the operand mentions, including address registers.
    pub fn registers(&self) -> Vec<Gpr> {
        match self {
            Operand::Reg(r) => vec![r.gpr],
            Operand::Mem(m) => m.registers().collect(),
            _ => Vec::new(),
        }
    }
}

impl fmt::Display for Operand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Operand::Imm(v) => write!(f, "${}", v),
            Operand::Reg(r) => write!(f, "{}", r),
            Operand::Mem(m) => write!(f, "{}", m),
            Operand::Label(l) => f.write_str(l),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Opcode {
    Mov,
    Lea,
    Add,
    Sub,
    Imul,
    Xor,
    And,
    Or,
    Cmp,
    Test,
    Push,
    Pop,
    Lahf,
    Sahf,
    Pushf,
    Popf,
    Cmov(CondCode),
    Jcc(CondCode),
    Jmp,
    Call,
    Ret,
    Lfence,
    Nop,
}

impl Opcode {
    pub fn arity(self) -> usize {
        use Opcode::*;
        match self {
            Lahf | Sahf | Pushf | Popf | Ret | Lfence | Nop => 0,
            Push | Pop | Jcc(_) | Jmp | Call => 1,
            Mov | Lea | Add | Sub | Imul | Xor | And | Or | Cmp | Test | Cmov(_) => 2,
        }
    }

    pub fn cond(self) -> Option<CondCode> {
        match self {
            Opcode::Cmov(c) | Opcode::Jcc(c) => Some(c),
            _ => None,
        }
    }

    /// Whether the printed mnemonic carries a width suffix.
    pub fn takes_suffix(self) -> bool {
        use Opcode::*;
        !matches!(self, Lahf | Sahf | Lfence | Nop | Ret | Jcc(_) | Jmp | Call)
    }

    pub fn base_mnemonic(self) -> String {
        use Opcode::*;
        match self {
            Mov => "mov".into(),
            Lea => "lea".into(),
            Add => "add".into(),
            Sub => "sub".into(),
            Imul => "imul".into(),
            Xor => "xor".into(),
            And => "and".into(),
            Or => "or".into(),
            Cmp => "cmp".into(),
            Test => "test".into(),
            Push => "push".into(),
            Pop => "pop".into(),
            Lahf => "lahf".into(),
            Sahf => "sahf".into(),
            Pushf => "pushf".into(),
            Popf => "popf".into(),
            Cmov(c) => format!("cmov{}", c.suffix()),
            Jcc(c) => format!("j{}", c.suffix()),
            Jmp => "jmp".into(),
            Call => "call".into(),
            Ret => "ret".into(),
            Lfence => "lfence".into(),
            Nop => "nop".into(),
        }
    }

    pub fn writes_flags(self) -> bool {
        use Opcode::*;
        matches!(
            self,
            Add | Sub | Imul | Xor | And | Or | Cmp | Test | Sahf | Popf | Call
        )
    }

    pub fn reads_flags(self) -> bool {
        use Opcode::*;
        matches!(self, Jcc(_) | Cmov(_) | Lahf | Pushf)
    }
}

/// 1-based position of a lexeme in the source text.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SourceSpan {
    pub line: u32,
    pub column: u32,
    pub length: u32,
}

impl fmt::Display for SourceSpan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.column)
    }
}

/// One instruction. `span` is `None` for instructions synthesized by a pass.
///
/// Equality ignores the span: two instructions are equal when they encode
/// the same operation.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Instruction {
    pub op: Opcode,
    pub width: Width,
    pub operands: Vec<Operand>,
    pub span: Option<SourceSpan>,
}

impl PartialEq for Instruction {
    fn eq(&self, other: &Self) -> bool {
        self.op == other.op && self.width == other.width && self.operands == other.operands
    }
}

impl Eq for Instruction {}

impl Instruction {
    pub fn new(op: Opcode, width: Width, operands: Vec<Operand>) -> Self {
        Instruction {
            op,
            width,
            operands,
            span: None,
        }
    }

    pub fn nullary(op: Opcode) -> Self {
        Instruction::new(op, Width::B64, Vec::new())
    }

    /// `op %src, %dst` on full 64-bit registers.
    pub fn rr(op: Opcode, src: Gpr, dst: Gpr) -> Self {
        Instruction::new(
            op,
            Width::B64,
            vec![Operand::Reg(src.full()), Operand::Reg(dst.full())],
        )
    }

    pub fn jump(op: Opcode, label: impl Into<String>) -> Self {
        Instruction::new(op, Width::B64, vec![Operand::Label(label.into())])
    }

    pub fn is_synthetic(&self) -> bool {
        self.span.is_none()
    }

    pub fn line(&self) -> Option<u32> {
        self.span.map(|s| s.line)
    }

    pub fn mnemonic(&self) -> String {
        let mut m = self.op.base_mnemonic();
        if self.op.takes_suffix() {
            m.push(self.width.suffix());
        }
        m
    }

    pub fn mem_operand(&self) -> Option<&MemRef> {
        self.operands.iter().find_map(Operand::as_mem)
    }

    pub fn target(&self) -> Option<&str> {
        match (self.op, self.operands.first()) {
            (Opcode::Jcc(_) | Opcode::Jmp | Opcode::Call, Some(Operand::Label(l))) => Some(l),
            _ => None,
        }
    }

    pub fn is_cond_branch(&self) -> bool {
        matches!(self.op, Opcode::Jcc(_))
    }

    /// Ends a basic block.
    pub fn is_terminator(&self) -> bool {
        matches!(
            self.op,
            Opcode::Jcc(_) | Opcode::Jmp | Opcode::Call | Opcode::Ret
        )
    }

    /// Control can continue to the next instruction in layout order.
    pub fn falls_through(&self) -> bool {
        !matches!(self.op, Opcode::Jmp | Opcode::Ret)
    }

    pub fn reads_flags(&self) -> bool {
        self.op.reads_flags()
    }

    pub fn writes_flags(&self) -> bool {
        self.op.writes_flags()
    }

    /// `xor %r, %r` / `sub %r, %r`: result is zero regardless of inputs.
    pub fn is_zero_idiom(&self) -> bool {
        matches!(self.op, Opcode::Xor | Opcode::Sub)
            && matches!(
                (&self.operands[..], ()),
                ([Operand::Reg(a), Operand::Reg(b)], ()) if a.gpr == b.gpr
            )
    }

    /// The register written by a load: an explicit memory source operand
    /// feeding a register destination. LEA and stack pops are not loads.
    pub fn load_dest(&self) -> Option<Gpr> {
        use Opcode::*;
        match (self.op, &self.operands[..]) {
            (Mov | Add | Sub | Imul | Xor | And | Or | Cmov(_), [Operand::Mem(_), Operand::Reg(d)]) => {
                Some(d.gpr)
            }
            _ => None,
        }
    }

    /// Reads memory (explicitly or through the stack).
    pub fn reads_memory(&self) -> bool {
        use Opcode::*;
        match self.op {
            Pop | Popf | Ret => true,
            Lea | Jcc(_) | Jmp | Call => false,
            Mov => matches!(self.operands.first(), Some(Operand::Mem(_))),
            Push => matches!(self.operands.first(), Some(Operand::Mem(_))),
            _ => self.mem_operand().is_some(),
        }
    }

    /// Writes memory (explicitly or through the stack).
    pub fn writes_memory(&self) -> bool {
        use Opcode::*;
        match self.op {
            Push | Pushf | Call => true,
            Mov | Add | Sub | Imul | Xor | And | Or | Pop => {
                matches!(self.operands.last(), Some(Operand::Mem(_)))
            }
            _ => false,
        }
    }

    /// Every general-purpose register the instruction reads, implicit ones
    /// included.
    pub fn reg_reads(&self) -> Vec<Gpr> {
        use Opcode::*;
        let mut out = Vec::new();
        let addr = |o: &Operand, out: &mut Vec<Gpr>| {
            if let Operand::Mem(m) = o {
                out.extend(m.registers());
            }
        };
        let value = |o: &Operand, out: &mut Vec<Gpr>| match o {
            Operand::Reg(r) => out.push(r.gpr),
            Operand::Mem(m) => out.extend(m.registers()),
            _ => {}
        };
        match self.op {
            Mov | Lea => {
                value(&self.operands[0], &mut out);
                match &self.operands[1] {
                    Operand::Reg(r) if matches!(r.width, Width::B8 | Width::B16) => out.push(r.gpr),
                    o => addr(o, &mut out),
                }
            }
            Add | Sub | Imul | Xor | And | Or | Cmp | Test | Cmov(_) => {
                if !self.is_zero_idiom() {
                    value(&self.operands[0], &mut out);
                    value(&self.operands[1], &mut out);
                }
            }
            Push => {
                value(&self.operands[0], &mut out);
                out.push(Gpr::Rsp);
            }
            Pop => {
                out.push(Gpr::Rsp);
                match &self.operands[0] {
                    Operand::Reg(r) if matches!(r.width, Width::B8 | Width::B16) => out.push(r.gpr),
                    o => addr(o, &mut out),
                }
            }
            Lahf | Sahf => out.push(Gpr::Rax),
            Pushf | Popf | Call | Ret => out.push(Gpr::Rsp),
            Jcc(_) | Jmp | Lfence | Nop => {}
        }
        out.sort();
        out.dedup();
        out
    }

    /// Every general-purpose register the instruction writes.
    pub fn reg_writes(&self) -> Vec<Gpr> {
        use Opcode::*;
        let mut out = Vec::new();
        match self.op {
            Mov | Lea | Add | Sub | Imul | Xor | And | Or | Cmov(_) => {
                if let Operand::Reg(r) = &self.operands[1] {
                    out.push(r.gpr);
                }
            }
            Push | Pushf | Popf | Call | Ret => out.push(Gpr::Rsp),
            Pop => {
                out.push(Gpr::Rsp);
                if let Operand::Reg(r) = &self.operands[0] {
                    out.push(r.gpr);
                }
            }
            Lahf => out.push(Gpr::Rax),
            Cmp | Test | Sahf | Jcc(_) | Jmp | Lfence | Nop => {}
        }
        out.sort();
        out.dedup();
        out
    }

    /// Registers named anywhere in the operand list.
    pub fn mentioned_registers(&self) -> Vec<Gpr> {
        let mut out: Vec<Gpr> = self.operands.iter().flat_map(|o| o.registers()).collect();
        out.sort();
        out.dedup();
        out
    }
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.mnemonic())?;
        for (i, op) in self.operands.iter().enumerate() {
            f.write_str(if i == 0 { " " } else { ", " })?;
            write!(f, "{}", op)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Item {
    Label(String),
    Inst(Instruction),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Function {
    pub name: String,
    pub body: Vec<Item>,
}

impl Function {
    pub fn instructions(&self) -> impl Iterator<Item = &Instruction> {
        self.body.iter().filter_map(|it| match it {
            Item::Inst(i) => Some(i),
            Item::Label(_) => None,
        })
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.body.iter().filter_map(|it| match it {
            Item::Label(l) => Some(l.as_str()),
            Item::Inst(_) => None,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Program {
    pub source: String,
    pub functions: Vec<Function>,
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum StructureError {
    #[error("label `{label}` is defined more than once")]
    DuplicateLabel { label: String },
    #[error("line {line}: undefined label `{label}`")]
    UnresolvedLabel { label: String, line: u32 },
    #[error("line {line}: branch to `{label}` leaves function `{function}`")]
    CrossFunctionBranch {
        label: String,
        function: String,
        line: u32,
    },
}

impl Program {
    pub fn function(&self, name: &str) -> Option<&Function> {
        self.functions.iter().find(|f| f.name == name)
    }

    pub fn instructions(&self) -> impl Iterator<Item = &Instruction> {
        self.functions.iter().flat_map(|f| f.instructions())
    }

    pub fn instruction_count(&self) -> usize {
        self.instructions().count()
    }

    /// Label uniqueness and branch-target resolution. Jcc/JMP targets must be
    /// local labels of the enclosing function; CALL targets must name a function.
    pub fn validate(&self) -> Result<(), Vec<StructureError>> {
        use std::collections::{HashMap, HashSet};
        let mut errors = Vec::new();
        let mut owner: HashMap<&str, &str> = HashMap::new();
        for f in &self.functions {
            for l in std::iter::once(f.name.as_str()).chain(f.labels()) {
                if owner.insert(l, &f.name).is_some() {
                    errors.push(StructureError::DuplicateLabel { label: l.into() });
                }
            }
        }
        let functions: HashSet<&str> = self.functions.iter().map(|f| f.name.as_str()).collect();
        for f in &self.functions {
            for inst in f.instructions() {
                let Some(target) = inst.target() else { continue };
                let line = inst.line().unwrap_or(0);
                match owner.get(target) {
                    None => errors.push(StructureError::UnresolvedLabel {
                        label: target.into(),
                        line,
                    }),
                    Some(_) if inst.op == Opcode::Call => {
                        if !functions.contains(target) {
                            errors.push(StructureError::UnresolvedLabel {
                                label: target.into(),
                                line,
                            });
                        }
                    }
                    Some(_) if !f.labels().any(|l| l == target) => {
                        errors.push(StructureError::CrossFunctionBranch {
                            label: target.into(),
                            function: f.name.clone(),
                            line,
                        });
                    }
                    Some(_) => {}
                }
            }
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(errors)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn invert_is_an_involution() {
        for c in CondCode::ALL {
            assert_eq!(c.invert().invert(), c);
            assert_ne!(c.invert(), c);
        }
    }

    #[test]
    fn inverted_condition_is_the_negation() {
        for bits in 0u8..16 {
            let f = Flags {
                cf: bits & 1 != 0,
                zf: bits & 2 != 0,
                sf: bits & 4 != 0,
                of: bits & 8 != 0,
                ..Flags::default()
            };
            for c in CondCode::ALL {
                assert_eq!(c.eval(&f), !c.invert().eval(&f), "{:?} {:?}", c, f);
            }
        }
    }

    #[test]
    fn register_lookup_covers_all_widths() {
        assert_eq!(Gpr::lookup("eax"), Some(Register::new(Gpr::Rax, Width::B32)));
        assert_eq!(Gpr::lookup("r15"), Some(Register::new(Gpr::R15, Width::B64)));
        assert_eq!(Gpr::lookup("r9b"), Some(Register::new(Gpr::R9, Width::B8)));
        assert_eq!(Gpr::lookup("sil"), Some(Register::new(Gpr::Rsi, Width::B8)));
        assert_eq!(Gpr::lookup("ah"), None);
    }

    #[test]
    fn zero_idiom_detection() {
        let x = Instruction::rr(Opcode::Xor, Gpr::Rax, Gpr::Rax);
        assert!(x.is_zero_idiom());
        assert!(x.reg_reads().is_empty());
        let y = Instruction::rr(Opcode::Xor, Gpr::Rax, Gpr::Rbx);
        assert!(!y.is_zero_idiom());
        assert_eq!(y.reg_reads(), vec![Gpr::Rax, Gpr::Rbx]);
    }

    proptest! {
        #[test]
        fn rflags_image_round_trips(cf: bool, pf: bool, af: bool, zf: bool, sf: bool, of: bool) {
            let f = Flags { cf, pf, af, zf, sf, of };
            prop_assert_eq!(Flags::from_rflags(f.to_rflags()), f);
        }
    }
}
