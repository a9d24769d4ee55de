//! Bounds-check-bypass hardening for a subset of x86-64 assembly.
//!
//! Four rewriting passes (LFENCE serialization, LAHF-based dependency,
//! speculative load hardening, dependency on comparison arguments), an
//! architectural interpreter used as the reference semantics, and a
//! speculative timing simulator that detects secret-dependent cache
//! accesses on squashed paths.

pub mod cfg;
pub mod corpus;
pub mod frontend;
pub mod interp;
pub mod ir;
pub mod liveness;
pub mod metrics;
pub mod passes;
pub mod reserved;
pub mod specsim;

pub use cfg::{build_cfg, Cfg};
pub use frontend::{parse_asm, parse_named, print_asm, ParseError};
pub use ir::{CondCode, Gpr, Instruction, Opcode, Operand, Program, Register, Width};
pub use liveness::{flags_liveness, FlagsLiveness};
pub use reserved::{verify_reserved, Violation};
