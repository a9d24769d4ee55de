use std::collections::HashSet;

use bcbguard::corpus::{self, CorpusEntry};
use bcbguard::interp::{exec, Image, MachineState};
use bcbguard::ir::Gpr;
use bcbguard::metrics::{run_bench, BenchConfig, Variant};
use bcbguard::passes::{harden, PassConfig, PassKind};
use bcbguard::specsim::{simulate, MispredictPolicy, TimingConfig};
use proptest::prelude::*;

fn gadgets() -> &'static [CorpusEntry] {
    static G: std::sync::OnceLock<Vec<CorpusEntry>> = std::sync::OnceLock::new();
    G.get_or_init(corpus::gadgets)
}

fn policy(bits: u32, sites: usize, named: u8) -> MispredictPolicy {
    match named % 3 {
        0 => MispredictPolicy::Never,
        1 => MispredictPolicy::AlwaysWrong,
        _ => MispredictPolicy::Chosen {
            directions: (0..sites).map(|s| (s, bits >> s & 1 == 1)).collect(),
        },
    }
}

fn randomized(g: &CorpusEntry, vector: usize, index: u64) -> MachineState {
    let mut vs = g.vectors();
    vs.extend(g.attack());
    let mut s = vs.swap_remove(vector % vs.len());
    if g.meta.entry == "victim" && s.reg(Gpr::Rdi) != 0x1000 {
        s.set_reg(Gpr::Rdi, index);
    }
    s
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn hardening_preserves_observable_state(
        gi in 0usize..64, vector in 0usize..8, index in prop_oneof![0u64..32, 0u64..0x1000, any::<u64>()], k in 0usize..4,
    ) {
        let g = &gadgets()[gi % gadgets().len()];
        let s = randomized(g, vector, index);
        let (h, _) = harden(&g.program, &PassConfig::new(PassKind::ALL[k])).unwrap();
        let a = exec(&g.program, &g.meta.entry, &s, 100_000);
        let b = exec(&h, &g.meta.entry, &s, 100_000);
        match (a, b) {
            (Ok(a), Ok(b)) => prop_assert_eq!(
                a.observable(&[Gpr::R14, Gpr::R15]),
                b.observable(&[Gpr::R14, Gpr::R15])
            ),
            (Err(a), Err(b)) => prop_assert_eq!(a, b),
            (a, b) => prop_assert!(false, "native {:?} vs hardened {:?}", a.err(), b.err()),
        }
    }

    #[test]
    fn committed_path_is_architectural(
        gi in 0usize..64, vector in 0usize..8, index in 0u64..0x1000,
        bits: u32, named: u8, width in 1u32..6, depth in 0u32..6, cold in 1u64..300,
        k in 0usize..5,
    ) {
        let g = &gadgets()[gi % gadgets().len()];
        let s = randomized(g, vector, index);
        let p = if k == 4 { g.program.clone() } else {
            harden(&g.program, &PassConfig::new(PassKind::ALL[k])).unwrap().0
        };
        let sites = Image::new(&p).site_count();
        let timing = TimingConfig {
            issue_width: width,
            max_spec_depth: depth,
            lat_load_cold: cold,
            ..g.timing(&TimingConfig::default(), bits & 1 == 0)
        };
        let pol = policy(bits, sites, named);
        let reference = exec(&p, &g.meta.entry, &s, 100_000).unwrap();
        let out = simulate(&p, &g.meta.entry, &s, &timing, &pol, 100_000).unwrap();
        prop_assert_eq!(&out.path, &reference.path);
        prop_assert_eq!(out.final_state.gpr, reference.final_state.gpr);
        prop_assert_eq!(out.final_state.memory_image(), reference.final_state.memory_image());
        prop_assert!(out.metrics.ipc <= f64::from(width) + 1e-9);
        prop_assert!(out.trace.events.windows(2).all(|w| w[0].issue_cycle <= w[1].issue_cycle));
        prop_assert!(out.trace.events.iter().all(|e| !e.squashed || e.speculative));
        prop_assert_eq!(out.leak.leaked, !out.leak.leaks.is_empty());
        if pol == MispredictPolicy::Never || depth == 0 {
            prop_assert!(out.trace.events.iter().all(|e| !e.speculative));
            prop_assert!(!out.leak.leaked);
        }
    }

    #[test]
    fn an_lfence_never_saves_cycles(gi in 0usize..64, vector in 0usize..8, index in 0u64..64) {
        let g = &gadgets()[gi % gadgets().len()];
        let s = randomized(g, vector, index);
        let (h, _) = harden(&g.program, &PassConfig::new(PassKind::Lfence)).unwrap();
        let t = g.timing(&TimingConfig::default(), true);
        let a = simulate(&g.program, &g.meta.entry, &s, &t, &MispredictPolicy::Never, 100_000).unwrap();
        let b = simulate(&h, &g.meta.entry, &s, &t, &MispredictPolicy::Never, 100_000).unwrap();
        prop_assert!(b.metrics.cycles >= a.metrics.cycles);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn geomean_ignores_corpus_order(seed: u64) {
        let mut programs: Vec<_> = corpus::kernels().iter().take(5).map(|k| k.bench_program()).collect();
        let base = run_bench(&programs, &PassKind::ALL, &BenchConfig::default());
        let n = programs.len();
        for i in 0..n {
            programs.swap(i, (seed.rotate_left(i as u32) as usize) % n);
        }
        let shuffled = run_bench(&programs, &PassKind::ALL, &BenchConfig::default());
        prop_assert_eq!(base.summary, shuffled.summary);
    }
}

/// Wrong-path instructions that consume a masked load issue no earlier than
/// the flags of the mispredicted branch.
#[test]
fn masked_loads_wait_for_the_branch_condition() {
    for g in gadgets() {
        let attack = g.attack().unwrap();
        let timing = g.timing(&TimingConfig::default(), true);
        for kind in [PassKind::LahfDep, PassKind::SlhCmov] {
            let (h, _) = harden(&g.program, &PassConfig::new(kind)).unwrap();
            let image = Image::new(&h);
            if image.site_count() != 1 {
                continue;
            }
            let out = simulate(&h, &g.meta.entry, &attack, &timing, &MispredictPolicy::AlwaysWrong, 100_000)
                .unwrap();
            let Some(branch) = out.trace.branches.iter().find(|b| b.mispredicted) else {
                continue;
            };
            let mut masked: HashSet<Gpr> = HashSet::new();
            for r in out.issues.iter().filter(|r| r.squashed) {
                let inst = &image.insts[r.pc];
                if inst.is_synthetic() {
                    continue;
                }
                if let Some(c) = r.issue_cycle {
                    if inst.reg_reads().iter().any(|x| masked.contains(x)) {
                        assert!(
                            c >= branch.flags_ready,
                            "{} {}: `{}` issued at {} before flags at {}",
                            g.id, kind, inst, c, branch.flags_ready
                        );
                    }
                }
                if let Some(d) = inst.load_dest() {
                    masked.insert(d);
                }
            }
        }
    }
}

#[test]
fn hardened_variants_never_execute_fewer_instructions() {
    let programs: Vec<_> = corpus::kernels().iter().map(|k| k.bench_program()).collect();
    let report = run_bench(&programs, &PassKind::ALL, &BenchConfig::default());
    assert_eq!(report.failed_cells(), 0);
    for p in &programs {
        let native = report.cell(&p.id, Variant::Native).unwrap();
        assert_eq!(native.overhead_vs_native, Some(1.0));
        assert_eq!(native.instr_increase_vs_native, Some(1.0));
        for k in PassKind::ALL {
            let c = report.cell(&p.id, Variant::Hardened(k)).unwrap();
            assert!(c.dynamic_instructions >= native.dynamic_instructions, "{} {}", p.id, k);
        }
    }
}

#[test]
fn bench_is_deterministic() {
    let programs: Vec<_> = corpus::kernels().iter().map(|k| k.bench_program()).collect();
    let a = run_bench(&programs, &PassKind::ALL, &BenchConfig::default());
    let b = run_bench(&programs, &PassKind::ALL, &BenchConfig::default());
    assert_eq!(a.to_csv().unwrap(), b.to_csv().unwrap());
    assert_eq!(a.to_json(), b.to_json());
}

#[test]
fn every_corpus_entry_loads_from_disk_too() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("corpus/gadgets");
    let disk = corpus::load_dir(&dir).unwrap();
    let bundled = corpus::gadgets();
    assert_eq!(disk.len(), bundled.len());
    for (a, b) in disk.iter().zip(&bundled) {
        assert_eq!(a.id, b.id);
        assert_eq!(a.program.functions, b.program.functions);
    }
}

#[test]
fn corpus_sizes() {
    assert!(corpus::gadgets().len() >= 12);
    assert!(corpus::kernels().len() >= 12);
    let regimes: HashSet<_> = corpus::kernels()
        .into_iter()
        .filter_map(|k| k.meta.regime)
        .collect();
    for r in ["ilp", "tight-loop", "load-dense", "serial"] {
        assert!(regimes.contains(r), "{}", r);
    }
}
