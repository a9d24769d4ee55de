use serde::Serialize;

use crate::cfg::Cfg;
use crate::ir::{Opcode, Program, StructureError};
use crate::liveness::flags_liveness;

/// An inserted flags writer whose flags some later instruction still reads.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct FlagsHazard {
    pub function: String,
    pub block: usize,
    pub index: usize,
    pub instruction: String,
}

/// Re-runs flags liveness on hardened code. Every inserted flags writer must
/// leave dead flags behind it, unless it sits inside an inserted PUSHF/POPF
/// pair, in which case the POPF is the writer that matters. A POPF without
/// its PUSHF in the same block is also a hazard.
pub fn check_flags_safety(program: &Program) -> Result<Vec<FlagsHazard>, StructureError> {
    let mut out = Vec::new();
    for f in &program.functions {
        let cfg = Cfg::build(f)?;
        let live = flags_liveness(&cfg);
        for b in &cfg.blocks {
            let mut open_wraps = 0usize;
            for (i, inst) in b.insts.iter().enumerate() {
                if !inst.is_synthetic() {
                    continue;
                }
                let hazard = match inst.op {
                    Opcode::Pushf => {
                        open_wraps += 1;
                        false
                    }
                    Opcode::Popf => match open_wraps.checked_sub(1) {
                        Some(n) => {
                            open_wraps = n;
                            false
                        }
                        None => true,
                    },
                    _ => inst.writes_flags() && live.after(b.id, i),
                };
                if hazard {
                    out.push(FlagsHazard {
                        function: f.name.clone(),
                        block: b.id,
                        index: i,
                        instruction: inst.to_string(),
                    });
                }
            }
        }
    }
    Ok(out)
}
