//! Text boundary: AT&T-syntax parsing and canonical printing.

mod parse;

pub use parse::{parse_asm, parse_named, ParseError, Parsed, Warning};

use std::fmt::Write;

use crate::ir::{Item, Program};

/// Canonical form: `.text` once, then per function a `.globl` line and the
/// function label, one tab-indented instruction per line, labels flush-left.
pub fn print_asm(program: &Program) -> String {
    let mut out = String::from("\t.text\n");
    for f in &program.functions {
        let _ = writeln!(out, "\t.globl\t{}", f.name);
        let _ = writeln!(out, "{}:", f.name);
        for item in &f.body {
            match item {
                Item::Label(l) => {
                    let _ = writeln!(out, "{}:", l);
                }
                Item::Inst(i) => {
                    let _ = writeln!(out, "\t{}", i);
                }
            }
        }
    }
    out
}
