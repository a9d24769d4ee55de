//! The bundled attack gadgets and benchmark kernels.
//!
//! Every program is a `.s` file with a `.json` sidecar of the same stem
//! describing its entry point, input vectors and cache setup.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::frontend::{parse_named, ParseError};
use crate::interp::{InitError, InitState, MachineState, Num};
use crate::ir::Program;
use crate::metrics::BenchProgram;
use crate::specsim::{line_of, TimingConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntryKind {
    Gadget,
    Kernel,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusMeta {
    pub schema: u32,
    pub entry: String,
    pub kind: EntryKind,
    pub description: String,
    /// Workload family, for kernels.
    #[serde(default)]
    pub regime: Option<String>,
    /// Inputs used for semantic comparison; kernels use the first one for
    /// benchmarking.
    pub vectors: Vec<InitState>,
    /// The out-of-bounds input, for gadgets.
    #[serde(default)]
    pub attack: Option<InitState>,
    /// Lines the attack wants cached (the secret); cold runs leave them out.
    #[serde(default)]
    pub attack_lines: Vec<Num>,
    /// Lines cached in every run.
    #[serde(default)]
    pub warm_lines: Vec<Num>,
    #[serde(default)]
    pub expect_native_leak: bool,
}

#[derive(Clone, Debug)]
pub struct CorpusEntry {
    pub id: String,
    pub source: String,
    pub program: Program,
    pub meta: CorpusMeta,
}

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("{id}: {}", .errors.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("\n"))]
    Parse { id: String, errors: Vec<ParseError> },
    #[error("{id}: metadata: {source}")]
    Meta { id: String, source: InitError },
    #[error("{id}: {message}")]
    Invalid { id: String, message: String },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

macro_rules! bundled {
    ($dir:literal: $($name:literal),* $(,)?) => {
        &[$(
            (
                $name,
                include_str!(concat!("../corpus/", $dir, "/", $name, ".s")),
                include_str!(concat!("../corpus/", $dir, "/", $name, ".json")),
            ),
        )*]
    };
}

const GADGETS: &[(&str, &str, &str)] = bundled!("gadgets":
    "g01_figure_gadget",
    "g02_cold_bound",
    "g03_memory_lhs",
    "g04_store_leak",
    "g05_nested_checks",
    "g06_index_loop",
    "g07_called_victim",
    "g08_signed_check",
    "g09_masked_index",
    "g10_dword_index",
    "g11_flags_reuse",
    "g12_pointer_chase",
    "g13_add_from_memory",
    "g14_do_while",
    "g15_register_bound",
);

const KERNELS: &[(&str, &str, &str)] = bundled!("kernels":
    "k01_ilp_chains",
    "k02_serial_chain",
    "k03_tight_compare",
    "k04_string_match",
    "k05_histogram",
    "k06_dot_product",
    "k07_matrix_row",
    "k08_linear_search",
    "k09_prefix_sum",
    "k10_bounded_gather",
    "k11_branchy_max",
    "k12_word_count",
    "k13_nested_loops",
);

impl CorpusEntry {
    pub fn from_parts(id: &str, source: &str, meta_json: &str) -> Result<CorpusEntry, CorpusError> {
        let program = parse_named(&format!("{}.s", id), source)
            .map_err(|errors| CorpusError::Parse {
                id: id.to_string(),
                errors,
            })?
            .program;
        let meta: CorpusMeta = serde_json::from_str(meta_json).map_err(|e| CorpusError::Meta {
            id: id.to_string(),
            source: e.into(),
        })?;
        let invalid = |message: String| CorpusError::Invalid {
            id: id.to_string(),
            message,
        };
        if meta.schema != 1 {
            return Err(invalid(format!("unsupported schema {}", meta.schema)));
        }
        if program.function(&meta.entry).is_none() {
            return Err(invalid(format!("entry `{}` is not defined", meta.entry)));
        }
        if meta.vectors.is_empty() {
            return Err(invalid("no input vectors".into()));
        }
        for v in meta.vectors.iter().chain(&meta.attack) {
            v.check().map_err(|source| CorpusError::Meta {
                id: id.to_string(),
                source,
            })?;
        }
        Ok(CorpusEntry {
            id: id.to_string(),
            source: source.to_string(),
            program,
            meta,
        })
    }

    pub fn vectors(&self) -> Vec<MachineState> {
        self.meta
            .vectors
            .iter()
            .map(|v| v.to_machine().expect("checked at load"))
            .collect()
    }

    pub fn attack(&self) -> Option<MachineState> {
        self.meta
            .attack
            .as_ref()
            .map(|v| v.to_machine().expect("checked at load"))
    }

    /// `timing` with this entry's warm lines, plus the attack lines when
    /// `attack_warm` is set.
    pub fn timing(&self, timing: &TimingConfig, attack_warm: bool) -> TimingConfig {
        let mut lines: Vec<u64> = self.meta.warm_lines.iter().map(|n| line_of(n.0)).collect();
        if attack_warm {
            lines.extend(self.meta.attack_lines.iter().map(|n| line_of(n.0)));
        }
        timing.clone().warm(lines)
    }

    pub fn bench_program(&self) -> BenchProgram {
        BenchProgram {
            id: self.id.clone(),
            program: self.program.clone(),
            entry: self.meta.entry.clone(),
            init: self.vectors().swap_remove(0),
            warm_lines: self.meta.warm_lines.iter().map(|n| n.0).collect(),
        }
    }
}

fn load_bundled(list: &[(&str, &str, &str)]) -> Vec<CorpusEntry> {
    list.iter()
        .map(|(id, s, j)| {
            CorpusEntry::from_parts(id, s, j).unwrap_or_else(|e| panic!("bundled corpus: {}", e))
        })
        .collect()
}

pub fn gadgets() -> Vec<CorpusEntry> {
    load_bundled(GADGETS)
}

pub fn kernels() -> Vec<CorpusEntry> {
    load_bundled(KERNELS)
}

pub fn all() -> Vec<CorpusEntry> {
    let mut v = gadgets();
    v.extend(kernels());
    v
}

/// Loads every `<stem>.s` with a `<stem>.json` beside it, sorted by stem.
pub fn load_dir(dir: &Path) -> Result<Vec<CorpusEntry>, CorpusError> {
    let io = |path: &Path, source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut stems: Vec<_> = fs::read_dir(dir)
        .map_err(|e| io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "s"))
        .collect();
    stems.sort();
    let mut out = Vec::new();
    for s in stems {
        let meta = s.with_extension("json");
        if !meta.exists() {
            continue;
        }
        let id = s.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        let src = fs::read_to_string(&s).map_err(|e| io(&s, e))?;
        let json = fs::read_to_string(&meta).map_err(|e| io(&meta, e))?;
        out.push(CorpusEntry::from_parts(&id, &src, &json)?);
    }
    Ok(out)
}
