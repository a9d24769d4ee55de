//! Line-oriented parser for the AT&T subset.
//!
//! ```text
//! line    := label ':' | directive | mnemonic (operand (',' operand)*)?
//! operand := '$' int | '%' reg | int? '(' ('%' base)? (',' '%' index (',' scale)?)? ')'
//!          | int | labelref
//! ```

use std::collections::{HashMap, HashSet};

use serde::Serialize;

use crate::ir::{
    CondCode, Function, Gpr, Instruction, Item, MemRef, Opcode, Operand, Program, Register,
    SourceSpan, Width,
};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, thiserror::Error)]
#[error("{span}: {message}")]
pub struct ParseError {
    pub span: SourceSpan,
    pub message: String,
    /// What the parser was looking for.
    pub expected: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Warning {
    pub line: u32,
    pub message: String,
}

#[derive(Clone, Debug)]
pub struct Parsed {
    pub program: Program,
    pub warnings: Vec<Warning>,
}

/// A slice of one source line with its 1-based starting column.
#[derive(Clone, Copy)]
struct Piece<'a> {
    text: &'a [char],
    line: u32,
    col: u32,
}

impl<'a> Piece<'a> {
    fn span(&self) -> SourceSpan {
        SourceSpan {
            line: self.line,
            column: self.col,
            length: self.text.len().max(1) as u32,
        }
    }

    fn string(&self) -> String {
        self.text.iter().collect()
    }

    fn sub(&self, start: usize, end: usize) -> Piece<'a> {
        Piece {
            text: &self.text[start..end],
            line: self.line,
            col: self.col + start as u32,
        }
    }

    fn trim(&self) -> Piece<'a> {
        let start = self
            .text
            .iter()
            .position(|c| !c.is_whitespace())
            .unwrap_or(self.text.len());
        let end = self
            .text
            .iter()
            .rposition(|c| !c.is_whitespace())
            .map_or(start, |e| e + 1);
        self.sub(start, end.max(start))
    }

    fn is_empty(&self) -> bool {
        self.text.is_empty()
    }

    fn error(&self, message: impl Into<String>, expected: &str) -> ParseError {
        ParseError {
            span: self.span(),
            message: message.into(),
            expected: expected.into(),
        }
    }

    /// Splits on commas outside parentheses.
    fn split_commas(&self) -> Vec<Piece<'a>> {
        let mut out = Vec::new();
        let mut depth = 0i32;
        let mut start = 0;
        for (i, c) in self.text.iter().enumerate() {
            match c {
                '(' => depth += 1,
                ')' => depth -= 1,
                ',' if depth == 0 => {
                    out.push(self.sub(start, i));
                    start = i + 1;
                }
                _ => {}
            }
        }
        out.push(self.sub(start, self.text.len()));
        out
    }
}

enum Stmt {
    Label(String, SourceSpan),
    Inst(Instruction),
}

struct LabelRef {
    label: String,
    span: SourceSpan,
    is_call: bool,
    stmt: usize,
}

fn is_ident_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_' || c == '.' || c == '$'
}

fn is_ident_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '.' || c == '$'
}

fn is_ident(s: &[char]) -> bool {
    !s.is_empty() && is_ident_start(s[0]) && s[1..].iter().all(|&c| is_ident_char(c))
}

fn parse_int(s: &str) -> Option<i128> {
    let (neg, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s.strip_prefix('+').unwrap_or(s)),
    };
    if body.is_empty() || body.starts_with(['-', '+']) {
        return None;
    }
    let v = if let Some(hex) = body.strip_prefix("0x").or_else(|| body.strip_prefix("0X")) {
        if hex.is_empty() || hex.len() > 16 {
            return None;
        }
        i128::from_str_radix(hex, 16).ok()?
    } else {
        if body.len() > 20 || !body.chars().all(|c| c.is_ascii_digit()) {
            return None;
        }
        body.parse::<i128>().ok()?
    };
    Some(if neg { -v } else { v })
}

fn decode_mnemonic(m: &str) -> Option<(Opcode, Option<Width>)> {
    use Opcode::*;
    let fixed = match m {
        "lahf" => Some((Lahf, None)),
        "sahf" => Some((Sahf, None)),
        "lfence" => Some((Lfence, None)),
        "nop" => Some((Nop, None)),
        "ret" | "retq" => Some((Ret, None)),
        "call" | "callq" => Some((Call, None)),
        "jmp" | "jmpq" => Some((Jmp, None)),
        "pushf" => Some((Pushf, None)),
        "pushfq" => Some((Pushf, Some(Width::B64))),
        "popf" => Some((Popf, None)),
        "popfq" => Some((Popf, Some(Width::B64))),
        _ => None,
    };
    if fixed.is_some() {
        return fixed;
    }
    if let Some(cc) = m.strip_prefix("cmov") {
        if let Some(c) = CondCode::from_suffix(cc) {
            return Some((Cmov(c), None));
        }
        let mut chars = cc.chars();
        let last = chars.next_back()?;
        let w = Width::from_suffix(last)?;
        return CondCode::from_suffix(chars.as_str()).map(|c| (Cmov(c), Some(w)));
    }
    if let Some(cc) = m.strip_prefix('j') {
        if let Some(c) = CondCode::from_suffix(cc) {
            return Some((Jcc(c), None));
        }
    }
    let base = |s: &str| -> Option<Opcode> {
        Some(match s {
            "mov" => Mov,
            "lea" => Lea,
            "add" => Add,
            "sub" => Sub,
            "imul" => Imul,
            "xor" => Xor,
            "and" => And,
            "or" => Or,
            "cmp" => Cmp,
            "test" => Test,
            "push" => Push,
            "pop" => Pop,
            _ => return None,
        })
    };
    if let Some(op) = base(m) {
        return Some((op, None));
    }
    let mut chars = m.chars();
    let last = chars.next_back()?;
    let w = Width::from_suffix(last)?;
    base(chars.as_str()).map(|op| (op, Some(w)))
}

fn parse_register(p: Piece) -> Result<Register, ParseError> {
    let name: String = p.text.iter().skip(1).collect();
    Gpr::lookup(&name).ok_or_else(|| p.error(format!("unknown register `{}`", p.string()), "register"))
}

fn parse_memory(p: Piece) -> Result<MemRef, ParseError> {
    let open = p.text.iter().position(|&c| c == '(').unwrap_or(p.text.len());
    let disp_piece = p.sub(0, open).trim();
    let disp = if disp_piece.is_empty() {
        0
    } else {
        let s = disp_piece.string();
        let v = parse_int(&s).ok_or_else(|| {
            disp_piece.error(
                format!("malformed displacement `{}` (symbolic addresses are not supported)", s),
                "integer displacement",
            )
        })?;
        i32::try_from(v).map_err(|_| {
            disp_piece.error(format!("displacement `{}` does not fit in 32 bits", s), "32-bit displacement")
        })? as i64
    };
    if open == p.text.len() {
        return Ok(MemRef {
            disp,
            base: None,
            index: None,
        });
    }
    if p.text.last() != Some(&')') {
        return Err(p.error(format!("malformed memory operand `{}`", p.string()), "`)`"));
    }
    let inner = p.sub(open + 1, p.text.len() - 1);
    if inner.text.iter().any(|&c| c == '(' || c == ')') {
        return Err(p.error(format!("malformed memory operand `{}`", p.string()), "memory operand"));
    }
    let parts: Vec<Piece> = inner.split_commas().into_iter().map(|q| q.trim()).collect();
    if parts.len() > 3 {
        return Err(p.error(format!("malformed memory operand `{}`", p.string()), "memory operand"));
    }
    let reg64 = |q: Piece, what: &str| -> Result<Gpr, ParseError> {
        if q.text.first() != Some(&'%') {
            return Err(q.error(format!("expected {} register, found `{}`", what, q.string()), "register"));
        }
        let r = parse_register(q)?;
        if r.width != Width::B64 {
            return Err(q.error(
                format!("{} register `{}` must be 64-bit", what, q.string()),
                "64-bit register",
            ));
        }
        Ok(r.gpr)
    };
    let base = if parts[0].is_empty() {
        None
    } else {
        Some(reg64(parts[0], "base")?)
    };
    let index = match parts.get(1) {
        None => None,
        Some(q) if q.is_empty() => {
            return Err(q.error(format!("missing index register in `{}`", p.string()), "index register"))
        }
        Some(q) => {
            let idx = reg64(*q, "index")?;
            if idx == Gpr::Rsp {
                return Err(q.error("`%rsp` cannot be an index register", "index register"));
            }
            let scale = match parts.get(2) {
                None => 1,
                Some(s) => {
                    let text = s.string();
                    match parse_int(&text) {
                        Some(v @ (1 | 2 | 4 | 8)) => v as u8,
                        _ => {
                            return Err(s.error(
                                format!("scale must be 1, 2, 4, or 8 (found `{}`)", text),
                                "scale",
                            ))
                        }
                    }
                }
            };
            Some((idx, scale))
        }
    };
    if base.is_none() && index.is_none() {
        return Err(p.error(format!("memory operand `{}` has no registers", p.string()), "register"));
    }
    Ok(MemRef { disp, base, index })
}

/// Parses an operand; immediates are returned unchecked as i128.
fn parse_operand(p: Piece) -> Result<(Operand, Option<i128>), ParseError> {
    let s = p.string();
    match p.text.first() {
        None => Err(p.error("missing operand", "operand")),
        Some('$') => {
            let v = parse_int(&s[1..]).ok_or_else(|| {
                p.error(format!("malformed immediate `{}`", s), "integer immediate")
            })?;
            Ok((Operand::Imm(0), Some(v)))
        }
        Some('%') => Ok((Operand::Reg(parse_register(p)?), None)),
        Some('*') => Err(p.error(format!("indirect operand `{}` is not supported", s), "operand")),
        _ if p.text.contains(&'(') || parse_int(&s).is_some() => {
            Ok((Operand::Mem(parse_memory(p)?), None))
        }
        _ if is_ident(p.text) => Ok((Operand::Label(s), None)),
        _ => Err(p.error(format!("malformed operand `{}`", s), "operand")),
    }
}

fn fits_imm(v: i128, width: Width, mov_to_reg: bool) -> Option<i64> {
    let ok = match width {
        Width::B64 if mov_to_reg => v >= i64::MIN as i128 && v <= u64::MAX as i128,
        Width::B64 => v >= i32::MIN as i128 && v <= i32::MAX as i128,
        w => {
            let bits = w.bits();
            v >= -(1i128 << (bits - 1)) && v < (1i128 << bits)
        }
    };
    ok.then_some(v as u64 as i64)
}

fn build_instruction(stmt: Piece, mnem: Piece, ops: &[Piece]) -> Result<Instruction, ParseError> {
    use Opcode::*;
    let m = mnem.string().to_ascii_lowercase();
    let (op, suffix) = decode_mnemonic(&m)
        .ok_or_else(|| mnem.error(format!("unknown mnemonic `{}`", mnem.string()), "mnemonic"))?;

    let mut operands = Vec::with_capacity(ops.len());
    let mut imms = Vec::with_capacity(ops.len());
    for o in ops {
        let (operand, imm) = parse_operand(*o)?;
        operands.push(operand);
        imms.push(imm);
    }
    if operands.len() != op.arity() {
        return Err(stmt.error(
            format!(
                "`{}` takes {} operand(s), found {}",
                mnem.string(),
                op.arity(),
                operands.len()
            ),
            "operand count",
        ));
    }

    let kind = |i: usize| -> char {
        match (&operands[i], imms[i]) {
            (_, Some(_)) => 'i',
            (Operand::Reg(_), _) => 'r',
            (Operand::Mem(_), _) => 'm',
            (Operand::Label(_), _) => 'l',
            (Operand::Imm(_), _) => 'i',
        }
    };
    let shape: String = (0..operands.len()).map(kind).collect();
    let shape_ok = match op {
        Jcc(_) | Jmp | Call => shape == "l",
        Mov | Add | Sub | Xor | And | Or | Cmp => {
            matches!(shape.as_str(), "ir" | "im" | "rr" | "rm" | "mr")
        }
        Test => matches!(shape.as_str(), "ir" | "im" | "rr" | "rm" | "mr"),
        Lea => shape == "mr",
        Imul | Cmov(_) => matches!(shape.as_str(), "rr" | "mr") || (op == Imul && shape == "ir"),
        Push => matches!(shape.as_str(), "i" | "r" | "m"),
        Pop => matches!(shape.as_str(), "r" | "m"),
        _ => shape.is_empty(),
    };
    if !shape_ok {
        let what = if shape.matches('m').count() > 1 {
            "at most one memory operand is allowed".to_string()
        } else if matches!(op, Cmov(_)) && shape.starts_with('i') {
            format!("`{}` cannot take an immediate source", mnem.string())
        } else {
            format!("invalid operand combination for `{}`", mnem.string())
        };
        let at = ops.first().copied().unwrap_or(stmt);
        let full = ops
            .first()
            .zip(ops.last())
            .map(|(a, b)| Piece {
                text: &stmt.text[(a.col - stmt.col) as usize..(b.col - stmt.col) as usize + b.text.len()],
                line: stmt.line,
                col: a.col,
            })
            .unwrap_or(at);
        return Err(full.error(what, "operands"));
    }

    // Width: suffix, else the data registers.
    let data_regs: Vec<(usize, Register)> = operands
        .iter()
        .enumerate()
        .filter_map(|(i, o)| o.as_reg().map(|r| (i, r)))
        .collect();
    let width = match (op, suffix) {
        (Jcc(_) | Jmp | Call | Ret | Lahf | Sahf | Lfence | Nop, _) => Width::B64,
        (_, Some(w)) => w,
        (Push | Pop | Pushf | Popf, None) => Width::B64,
        (_, None) => match data_regs.first() {
            Some((_, r)) => r.width,
            None => {
                return Err(mnem.error(
                    format!("ambiguous operand size for `{}`; add a width suffix", mnem.string()),
                    "width suffix",
                ))
            }
        },
    };
    for (i, r) in &data_regs {
        if r.width != width {
            return Err(ops[*i].error(
                format!(
                    "operand `{}` does not match the {}-bit operation size",
                    ops[*i].string(),
                    width.bits()
                ),
                "register of matching width",
            ));
        }
    }
    let width_ok = match op {
        Push | Pop | Pushf | Popf => width == Width::B64,
        Imul | Cmov(_) | Lea => width != Width::B8,
        _ => true,
    };
    if !width_ok {
        return Err(mnem.error(
            format!("`{}` does not support {}-bit operands", mnem.string(), width.bits()),
            "operand size",
        ));
    }

    for (i, imm) in imms.iter().enumerate() {
        if let Some(v) = imm {
            let mov_to_reg = op == Mov && matches!(operands[1], Operand::Reg(_));
            let w = if op == Push { Width::B64 } else { width };
            let value = fits_imm(*v, w, mov_to_reg).ok_or_else(|| {
                ops[i].error(
                    format!("immediate `{}` out of range for a {}-bit operation", ops[i].string(), w.bits()),
                    "immediate in range",
                )
            })?;
            operands[i] = Operand::Imm(value);
        }
    }

    Ok(Instruction {
        op,
        width,
        operands,
        span: Some(stmt.span()),
    })
}

/// Parses a whole file. Directives other than `.text`, `.globl` and
/// `.global` are skipped with a warning and are not preserved.
pub fn parse_named(source: &str, text: &str) -> Result<Parsed, Vec<ParseError>> {
    let mut errors = Vec::new();
    let mut warnings = Vec::new();
    let mut stmts: Vec<Stmt> = Vec::new();
    let mut globals: HashSet<String> = HashSet::new();
    let mut refs: Vec<LabelRef> = Vec::new();

    let lines: Vec<Vec<char>> = text
        .split('\n')
        .map(|l| l.strip_suffix('\r').unwrap_or(l).chars().collect())
        .collect();

    for (ln, chars) in lines.iter().enumerate() {
        let line_no = (ln + 1) as u32;
        let end = chars.iter().position(|&c| c == '#').unwrap_or(chars.len());
        let mut rest = Piece {
            text: &chars[..end],
            line: line_no,
            col: 1,
        }
        .trim();

        // Leading `label:` definitions.
        while let Some(colon) = rest.text.iter().position(|&c| c == ':') {
            let name = rest.sub(0, colon);
            if !is_ident(name.text) {
                break;
            }
            stmts.push(Stmt::Label(name.string(), name.span()));
            rest = rest.sub(colon + 1, rest.text.len()).trim();
        }
        if rest.is_empty() {
            continue;
        }

        let word_end = rest
            .text
            .iter()
            .position(|c| c.is_whitespace())
            .unwrap_or(rest.text.len());
        let head = rest.sub(0, word_end);
        let tail = rest.sub(word_end, rest.text.len()).trim();

        if head.text[0] == '.' {
            let name = head.string();
            match name.as_str() {
                ".text" => {}
                ".globl" | ".global" => {
                    for g in tail.split_commas() {
                        let g = g.trim();
                        if is_ident(g.text) {
                            globals.insert(g.string());
                        } else {
                            errors.push(g.error(format!("malformed symbol name `{}`", g.string()), "symbol"));
                        }
                    }
                }
                _ => warnings.push(Warning {
                    line: line_no,
                    message: format!("ignored directive `{}`", name),
                }),
            }
            continue;
        }

        let ops: Vec<Piece> = if tail.is_empty() {
            Vec::new()
        } else {
            tail.split_commas().into_iter().map(|p| p.trim()).collect()
        };
        match build_instruction(rest, head, &ops) {
            Ok(inst) => {
                if let (Some(label), Some(piece)) = (inst.target(), ops.first()) {
                    refs.push(LabelRef {
                        label: label.to_string(),
                        span: piece.span(),
                        is_call: inst.op == Opcode::Call,
                        stmt: stmts.len(),
                    });
                }
                stmts.push(Stmt::Inst(inst));
            }
            Err(e) => errors.push(e),
        }
    }

    // Group into functions.
    let mut functions: Vec<Function> = Vec::new();
    let mut owner: HashMap<String, usize> = HashMap::new();
    let mut stmt_fn: Vec<Option<usize>> = Vec::with_capacity(stmts.len());
    for stmt in stmts {
        match stmt {
            Stmt::Label(name, span) => {
                if owner.contains_key(&name) {
                    errors.push(ParseError {
                        span,
                        message: format!("label `{}` is defined more than once", name),
                        expected: "unique label".into(),
                    });
                    stmt_fn.push(functions.len().checked_sub(1));
                    continue;
                }
                if globals.contains(&name) || functions.is_empty() {
                    owner.insert(name.clone(), functions.len());
                    functions.push(Function {
                        name,
                        body: Vec::new(),
                    });
                } else {
                    let f = functions.len() - 1;
                    owner.insert(name.clone(), f);
                    functions[f].body.push(Item::Label(name));
                }
                stmt_fn.push(functions.len().checked_sub(1));
            }
            Stmt::Inst(inst) => match functions.last_mut() {
                Some(f) => {
                    f.body.push(Item::Inst(inst));
                    stmt_fn.push(Some(functions.len() - 1));
                }
                None => {
                    errors.push(ParseError {
                        span: inst.span.unwrap_or(SourceSpan {
                            line: 1,
                            column: 1,
                            length: 1,
                        }),
                        message: format!("instruction `{}` appears before any label", inst.mnemonic()),
                        expected: "function label".into(),
                    });
                    stmt_fn.push(None);
                }
            },
        }
    }

    for r in refs {
        let here = stmt_fn.get(r.stmt).copied().flatten();
        match owner.get(&r.label) {
            None => errors.push(ParseError {
                span: r.span,
                message: format!("undefined label `{}`", r.label),
                expected: "defined label".into(),
            }),
            Some(&f) if r.is_call => {
                if functions[f].name != r.label {
                    errors.push(ParseError {
                        span: r.span,
                        message: format!("call target `{}` is not a function", r.label),
                        expected: "function name".into(),
                    });
                }
            }
            Some(&f) => {
                if Some(f) != here || functions[f].name == r.label {
                    errors.push(ParseError {
                        span: r.span,
                        message: format!("branch target `{}` is outside the current function", r.label),
                        expected: "local label".into(),
                    });
                }
            }
        }
    }

    if errors.is_empty() {
        Ok(Parsed {
            program: Program {
                source: source.to_string(),
                functions,
            },
            warnings,
        })
    } else {
        errors.sort_by_key(|e| (e.span.line, e.span.column));
        Err(errors)
    }
}

pub fn parse_asm(text: &str) -> Result<Parsed, Vec<ParseError>> {
    parse_named("<input>", text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(src: &str) -> Instruction {
        let p = parse_asm(&format!("f:\n\t{}\n.Lt:\n", src)).unwrap().program;
        let inst = p.functions[0].instructions().next().unwrap().clone();
        inst
    }

    fn err(src: &str) -> ParseError {
        parse_asm(&format!("f:\n{}\n", src)).unwrap_err().remove(0)
    }

    #[test]
    fn compare_with_immediate() {
        let i = one("cmpq $42, %rdi");
        assert_eq!(i.op, Opcode::Cmp);
        assert_eq!(i.width, Width::B64);
        assert_eq!(
            i.operands,
            vec![Operand::Imm(42), Operand::Reg(Register::new(Gpr::Rdi, Width::B64))]
        );
    }

    #[test]
    fn scaled_index_load() {
        let i = one("movq (%rax,%rbx,8), %rcx");
        assert_eq!(
            i.operands[0],
            Operand::Mem(MemRef {
                disp: 0,
                base: Some(Gpr::Rax),
                index: Some((Gpr::Rbx, 8)),
            })
        );
        assert_eq!(i.load_dest(), Some(Gpr::Rcx));
    }

    #[test]
    fn bad_scale_points_at_the_scale() {
        let e = err("movq (%rax,%rbx,3), %rcx");
        assert!(e.message.contains("scale must be 1, 2, 4, or 8"), "{}", e.message);
        assert!(e.message.contains("`3`"));
        assert_eq!(e.span.line, 2);
        assert_eq!(e.span.column, 17);
        assert_eq!(e.expected, "scale");
    }

    #[test]
    fn unknown_mnemonic_names_the_lexeme() {
        let e = err("  frobq %rax");
        assert!(e.message.contains("`frobq`"));
        assert_eq!((e.span.line, e.span.column, e.span.length), (2, 3, 5));
    }

    #[test]
    fn undefined_label_is_reported_at_the_reference() {
        let e = err("\tjl .Lmissing");
        assert!(e.message.contains(".Lmissing"));
        assert_eq!(e.span.column, 5);
    }

    #[test]
    fn width_inference_and_ambiguity() {
        assert_eq!(one("mov %eax, %ebx").width, Width::B32);
        assert!(err("\tmov $1, (%rax)").message.contains("ambiguous"));
        assert!(err("\tmovq %eax, %rbx").message.contains("does not match"));
    }

    #[test]
    fn cmov_rejects_immediate_source() {
        assert!(err("\tcmovgeq $0, %r15").message.contains("immediate"));
    }

    #[test]
    fn mnemonic_aliases() {
        assert_eq!(one("jz .Lt").op, Opcode::Jcc(CondCode::E));
        assert_eq!(one("cmovnbeq %rax, %rbx").op, Opcode::Cmov(CondCode::A));
        assert_eq!(one("cmovl %eax, %ebx").op, Opcode::Cmov(CondCode::L));
        assert_eq!(one("cmovll %eax, %ebx").width, Width::B32);
        assert_eq!(one("retq").op, Opcode::Ret);
        assert_eq!(one("pushfq").op, Opcode::Pushf);
    }

    #[test]
    fn directives_are_skipped_with_warnings() {
        let parsed = parse_asm("\t.text\n\t.globl f\n\t.p2align 4\nf:\n\t.cfi_startproc\n\tret\n").unwrap();
        assert_eq!(parsed.warnings.len(), 2);
        assert_eq!(parsed.program.functions[0].name, "f");
    }

    #[test]
    fn globl_labels_start_functions() {
        let p = parse_asm("\t.globl a, b\na:\n\tnop\n.L1:\n\tret\nb:\n\tret\n").unwrap().program;
        assert_eq!(p.functions.len(), 2);
        assert_eq!(p.functions[0].body.len(), 3);
    }

    #[test]
    fn crlf_and_comments() {
        let p = parse_asm("f:\r\n\tnop # comment\r\n\tret\r\n").unwrap().program;
        assert_eq!(p.instruction_count(), 2);
    }

    #[test]
    fn immediate_ranges() {
        assert_eq!(one("movq $-1, %r15").operands[0], Operand::Imm(-1));
        assert_eq!(one("movq $0xffffffffffffffff, %r15").operands[0], Operand::Imm(-1));
        assert!(err("\taddq $0x100000000, %rax").message.contains("out of range"));
        assert_eq!(one("movb $255, %al").operands[0], Operand::Imm(255));
    }

    #[test]
    fn memory_forms() {
        let m = |s: &str| one(&format!("movq {}, %rax", s)).operands[0].clone();
        assert_eq!(m("-8(%rbp)"), Operand::Mem(MemRef { disp: -8, base: Some(Gpr::Rbp), index: None }));
        assert_eq!(m("0x10(,%rbx,4)"), Operand::Mem(MemRef { disp: 16, base: None, index: Some((Gpr::Rbx, 4)) }));
        assert_eq!(m("4096"), Operand::Mem(MemRef { disp: 4096, base: None, index: None }));
        assert!(err("\tmovq (%rax, %rbx, 8, 1), %rax").message.contains("malformed"));
        assert!(err("\tmovq (%rax), (%rbx)").message.contains("one memory operand"));
    }
}
