//! Instruction accounting and benchmark reports over the simulator.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::interp::MachineState;
use crate::ir::Program;
use crate::passes::{harden, PassConfig, PassKind};
use crate::specsim::{simulate, MispredictPolicy, TimingConfig};

/// Static instruction count; labels and directives do not count.
pub fn count_static(program: &Program) -> usize {
    program.instruction_count()
}

/// The unhardened program or one pass applied to it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Native,
    #[serde(untagged)]
    Hardened(PassKind),
}

impl Variant {
    pub fn all() -> Vec<Variant> {
        std::iter::once(Variant::Native)
            .chain(PassKind::ALL.into_iter().map(Variant::Hardened))
            .collect()
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Variant::Native => f.write_str("native"),
            Variant::Hardened(k) => write!(f, "{}", k),
        }
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "native" {
            Ok(Variant::Native)
        } else {
            s.parse().map(Variant::Hardened)
        }
    }
}

/// One program of a benchmark run.
#[derive(Clone, Debug)]
pub struct BenchProgram {
    pub id: String,
    pub program: Program,
    pub entry: String,
    pub init: MachineState,
    /// Extra cache lines resident for this program only.
    pub warm_lines: Vec<u64>,
}

#[derive(Clone, Debug)]
pub struct BenchConfig {
    pub timing: TimingConfig,
    pub policy: MispredictPolicy,
    pub step_limit: u64,
    /// Register choices and edge mode; `kind` is replaced per variant.
    pub pass: PassConfig,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            timing: TimingConfig::default(),
            policy: MispredictPolicy::Never,
            step_limit: 1_000_000,
            pass: PassConfig::new(PassKind::Lfence),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellStatus {
    Ok,
    Failed,
}

/// One (program, variant) cell. Measurements are absent for failed cells;
/// ratios are absent when the native cell failed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub program: String,
    pub variant: Variant,
    pub status: CellStatus,
    pub static_instructions: Option<u64>,
    pub dynamic_instructions: Option<u64>,
    pub cycles: Option<u64>,
    pub ipc: Option<f64>,
    pub overhead_vs_native: Option<f64>,
    pub instr_increase_vs_native: Option<f64>,
    pub error: Option<String>,
}

/// Geometric means of the per-program ratios of one variant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub variant: Variant,
    pub programs: usize,
    pub geomean_overhead: Option<f64>,
    pub geomean_instr_increase: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub results: Vec<BenchResult>,
    pub summary: Vec<VariantSummary>,
}

/// Geometric mean; the terms are sorted first so the result does not depend
/// on their order.
pub fn geomean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut logs: Vec<f64> = values.iter().map(|v| v.ln()).collect();
    logs.sort_by(f64::total_cmp);
    Some((logs.iter().sum::<f64>() / logs.len() as f64).exp())
}

struct Measured {
    static_instructions: u64,
    dynamic_instructions: u64,
    cycles: u64,
    ipc: f64,
}

fn measure(p: &BenchProgram, variant: Variant, config: &BenchConfig) -> Result<Measured, String> {
    let program = match variant {
        Variant::Native => p.program.clone(),
        Variant::Hardened(kind) => {
            let pc = PassConfig {
                kind,
                ..config.pass.clone()
            };
            harden(&p.program, &pc).map_err(|e| e.to_string())?.0
        }
    };
    let timing = config.timing.clone().warm(p.warm_lines.iter().copied());
    let out = simulate(
        &program,
        &p.entry,
        &p.init,
        &timing,
        &config.policy,
        config.step_limit,
    )
    .map_err(|e| e.to_string())?;
    Ok(Measured {
        static_instructions: count_static(&program) as u64,
        dynamic_instructions: out.metrics.dynamic_instructions,
        cycles: out.metrics.cycles,
        ipc: out.metrics.ipc,
    })
}

/// Simulates every program natively and under each requested pass. A failing
/// cell is recorded and the run continues.
pub fn run_bench(corpus: &[BenchProgram], variants: &[PassKind], config: &BenchConfig) -> BenchReport {
    let mut seen = std::collections::HashSet::new();
    let variants: Vec<Variant> = std::iter::once(Variant::Native)
        .chain(variants.iter().copied().map(Variant::Hardened))
        .filter(|v| seen.insert(*v))
        .collect();
    let mut results = Vec::new();
    for p in corpus {
        let native = measure(p, Variant::Native, config);
        for &v in &variants {
            let cell = if v == Variant::Native {
                native.as_ref().map_err(Clone::clone).map(|m| Measured { ..*m })
            } else {
                measure(p, v, config)
            };
            results.push(match cell {
                Ok(m) => {
                    let base = native.as_ref().ok();
                    BenchResult {
                        program: p.id.clone(),
                        variant: v,
                        status: CellStatus::Ok,
                        static_instructions: Some(m.static_instructions),
                        dynamic_instructions: Some(m.dynamic_instructions),
                        cycles: Some(m.cycles),
                        ipc: Some(m.ipc),
                        overhead_vs_native: base.map(|b| m.cycles as f64 / b.cycles as f64),
                        instr_increase_vs_native: base.map(|b| {
                            m.dynamic_instructions as f64 / b.dynamic_instructions.max(1) as f64
                        }),
                        error: None,
                    }
                }
                Err(e) => BenchResult {
                    program: p.id.clone(),
                    variant: v,
                    status: CellStatus::Failed,
                    static_instructions: None,
                    dynamic_instructions: None,
                    cycles: None,
                    ipc: None,
                    overhead_vs_native: None,
                    instr_increase_vs_native: None,
                    error: Some(e),
                },
            });
        }
    }
    let summary = variants
        .iter()
        .map(|&v| {
            let rows: Vec<&BenchResult> = results
                .iter()
                .filter(|r| r.variant == v && r.overhead_vs_native.is_some())
                .collect();
            let over: Vec<f64> = rows.iter().filter_map(|r| r.overhead_vs_native).collect();
            let inc: Vec<f64> = rows.iter().filter_map(|r| r.instr_increase_vs_native).collect();
            VariantSummary {
                variant: v,
                programs: rows.len(),
                geomean_overhead: geomean(&over),
                geomean_instr_increase: geomean(&inc),
            }
        })
        .collect();
    BenchReport { results, summary }
}

impl BenchReport {
    pub fn failed_cells(&self) -> usize {
        self.results
            .iter()
            .filter(|r| r.status == CellStatus::Failed)
            .count()
    }

    pub fn cell(&self, program: &str, variant: Variant) -> Option<&BenchResult> {
        self.results
            .iter()
            .find(|r| r.program == program && r.variant == variant)
    }

    pub fn summary_for(&self, variant: Variant) -> Option<&VariantSummary> {
        self.summary.iter().find(|s| s.variant == variant)
    }

    /// One row per cell, columns in `BenchResult` field order, followed by
    /// one `geomean` row per variant.
    pub fn to_csv(&self) -> Result<String, csv::Error> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.results {
            w.serialize(r)?;
        }
        for s in &self.summary {
            w.serialize(BenchResult {
                program: "geomean".into(),
                variant: s.variant,
                status: CellStatus::Ok,
                static_instructions: None,
                dynamic_instructions: None,
                cycles: None,
                ipc: None,
                overhead_vs_native: s.geomean_overhead,
                instr_increase_vs_native: s.geomean_instr_increase,
                error: None,
            })?;
        }
        let bytes = w.into_inner().map_err(|e| e.into_error())?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Cycle overhead and IPC per program, one column per variant.
    pub fn to_markdown(&self) -> String {
        let variants: Vec<Variant> = self.summary.iter().map(|s| s.variant).collect();
        let mut programs: Vec<&str> = Vec::new();
        for r in &self.results {
            if !programs.contains(&r.program.as_str()) {
                programs.push(&r.program);
            }
        }
        let header = |out: &mut String| {
            out.push_str("| program |");
            for v in &variants {
                out.push_str(&format!(" {} |", v));
            }
            out.push_str("\n|---|");
            for _ in &variants {
                out.push_str("---:|");
            }
            out.push('\n');
        };
        let mut out = String::from("## Cycle overhead vs native\n\n");
        header(&mut out);
        for p in &programs {
            out.push_str(&format!("| {} |", p));
            for &v in &variants {
                let cell = match self.cell(p, v) {
                    Some(BenchResult {
                        overhead_vs_native: Some(o),
                        ..
                    }) => format!("{:.3}", o),
                    _ => "failed".into(),
                };
                out.push_str(&format!(" {} |", cell));
            }
            out.push('\n');
        }
        out.push_str("| **geomean** |");
        for s in &self.summary {
            match s.geomean_overhead {
                Some(g) => out.push_str(&format!(" **{:.3}** |", g)),
                None => out.push_str(" n/a |"),
            }
        }
        out.push_str("\n\n## IPC\n\n");
        header(&mut out);
        for p in &programs {
            out.push_str(&format!("| {} |", p));
            for &v in &variants {
                match self.cell(p, v).and_then(|r| r.ipc) {
                    Some(i) => out.push_str(&format!(" {:.3} |", i)),
                    None => out.push_str(" failed |"),
                }
            }
            out.push('\n');
        }
        out.push_str(
            "\nSimulated cycle ratios come from a small dataflow model. For scale only, \
             hardware measurements of these mitigations on a full benchmark suite report \
             roughly 440% slowdown for LFENCE insertion and about 60% for the dependency \
             schemes. The two scales are not comparable.\n",
        );
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::parse_asm;
    use proptest::prelude::*;

    fn bench(id: &str, src: &str) -> BenchProgram {
        let program = parse_asm(src).unwrap().program;
        BenchProgram {
            id: id.into(),
            entry: program.functions[0].name.clone(),
            program,
            init: MachineState::default(),
            warm_lines: Vec::new(),
        }
    }

    const LOOP: &str = "k:\n\tmovq $0, %rcx\n.Ltop:\n\tmovq (%rdi,%rcx,8), %rax\n\taddq %rax, %rbx\n\taddq $1, %rcx\n\tcmpq $8, %rcx\n\tjl .Ltop\n\tret\n";

    #[test]
    fn empty_function_counts_zero() {
        let p = parse_asm("f:\n").unwrap().program;
        assert_eq!(count_static(&p), 0);
    }

    #[test]
    fn native_row_has_unit_ratios() {
        let r = run_bench(&[bench("loop", LOOP)], &PassKind::ALL, &BenchConfig::default());
        assert_eq!(r.results.len(), 5);
        assert_eq!(r.failed_cells(), 0);
        let n = r.cell("loop", Variant::Native).unwrap();
        assert_eq!(n.overhead_vs_native, Some(1.0));
        assert_eq!(n.instr_increase_vs_native, Some(1.0));
        for k in PassKind::ALL {
            let c = r.cell("loop", Variant::Hardened(k)).unwrap();
            assert!(c.dynamic_instructions >= n.dynamic_instructions, "{}", k);
        }
        let lf = r.summary_for(Variant::Hardened(PassKind::Lfence)).unwrap();
        assert!(lf.geomean_overhead.unwrap() > 1.0);
    }

    #[test]
    fn failing_cell_does_not_stop_the_run() {
        let uses_r15 = bench("r15", "k:\n\tcmpq $1, %r15\n\tjne .La\n.La:\n\tret\n");
        let r = run_bench(&[uses_r15, bench("loop", LOOP)], &PassKind::ALL, &BenchConfig::default());
        assert_eq!(r.results.len(), 10);
        let bad = r.cell("r15", Variant::Hardened(PassKind::SlhCmov)).unwrap();
        assert_eq!(bad.status, CellStatus::Failed);
        assert!(bad.error.as_deref().unwrap().contains("r15"));
        assert_eq!(r.cell("r15", Variant::Hardened(PassKind::Lfence)).unwrap().status, CellStatus::Ok);
        assert_eq!(r.failed_cells(), 3);
    }

    #[test]
    fn csv_has_stable_header_and_geomean_rows() {
        let r = run_bench(&[bench("loop", LOOP)], &[PassKind::Lfence], &BenchConfig::default());
        let text = r.to_csv().unwrap();
        let mut rd = csv::Reader::from_reader(text.as_bytes());
        let header: Vec<String> = rd.headers().unwrap().iter().map(String::from).collect();
        assert_eq!(
            header,
            [
                "program",
                "variant",
                "status",
                "static_instructions",
                "dynamic_instructions",
                "cycles",
                "ipc",
                "overhead_vs_native",
                "instr_increase_vs_native",
                "error"
            ]
        );
        let rows: Vec<BenchResult> = rd.deserialize().collect::<Result<_, _>>().unwrap();
        assert_eq!(rows.len(), 4);
        assert_eq!(rows[3].program, "geomean");
        assert_eq!(rows[1].variant, Variant::Hardened(PassKind::Lfence));
    }

    #[test]
    fn markdown_lists_every_variant() {
        let r = run_bench(&[bench("loop", LOOP)], &PassKind::ALL, &BenchConfig::default());
        let md = r.to_markdown();
        for v in Variant::all() {
            assert!(md.contains(&format!(" {} |", v)), "{}", v);
        }
        assert!(md.contains("**geomean**"));
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::all() {
            assert_eq!(v.to_string().parse::<Variant>().unwrap(), v);
            let j = serde_json::to_string(&v).unwrap();
            assert_eq!(j, format!("\"{}\"", v));
            assert_eq!(serde_json::from_str::<Variant>(&j).unwrap(), v);
        }
    }

    proptest! {
        #[test]
        fn geomean_is_order_independent(mut xs in proptest::collection::vec(0.01f64..100.0, 1..20), seed: u64) {
            let a = geomean(&xs).unwrap();
            let n = xs.len();
            for i in 0..n {
                xs.swap(i, (seed as usize).wrapping_mul(i + 7) % n);
            }
            prop_assert_eq!(a.to_bits(), geomean(&xs).unwrap().to_bits());
            let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = xs.iter().cloned().fold(0.0, f64::max);
            prop_assert!(a >= lo * (1.0 - 1e-12) && a <= hi * (1.0 + 1e-12));
        }
    }
}
