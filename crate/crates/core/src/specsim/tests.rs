use super::*;
use crate::frontend::parse_asm;
use crate::interp::{exec, SecretRegion};
use crate::ir::Gpr;
use crate::passes::{harden, PassConfig, PassKind};
use proptest::prelude::*;

// if (i < *size) { s = foo[i]; bar[s]; } with the bound in memory.
const COLD_BOUND: &str = "victim:\n\tcmpq (%rsi), %rdi\n\tjae .Lout\n\tmovq (%rdx,%rdi,8), %rax\n\tmovq (%rcx,%rax,1), %rbx\n.Lout:\n\tret\n";

// The same check against a register bound.
const REG_BOUND: &str = "victim:\n\tcmpq %rsi, %rdi\n\tjae .Lout\n\tmovq (%rdx,%rdi,8), %rax\n\tmovq (%rcx,%rax,1), %rbx\n.Lout:\n\tret\n";

fn prog(src: &str) -> Program {
    parse_asm(src).unwrap().program
}

fn attack_state(bound_in_memory: bool) -> MachineState {
    let mut s = MachineState::default();
    s.set_reg(Gpr::Rdi, 0x400);
    if bound_in_memory {
        s.set_reg(Gpr::Rsi, 0x2000);
        s.store_u64(0x2000, 16);
    } else {
        s.set_reg(Gpr::Rsi, 16);
    }
    s.set_reg(Gpr::Rdx, 0x3000);
    s.set_reg(Gpr::Rcx, 0x10000);
    s.store_u64(0x5000, 0x2a);
    s.secret_regions.push(SecretRegion {
        start: 0x5000,
        length: 8,
    });
    s
}

fn timing() -> TimingConfig {
    TimingConfig::default().warm([0x5000, 0x10000, 0x7fff_0000])
}

fn sim(p: &Program, s: &MachineState, policy: &MispredictPolicy) -> SimOutcome {
    simulate(p, "victim", s, &timing(), policy, 100_000).unwrap()
}

#[test]
fn cold_bound_gadget_leaks_when_mispredicted() {
    let p = prog(COLD_BOUND);
    let out = sim(&p, &attack_state(true), &MispredictPolicy::AlwaysWrong);
    assert!(out.leak.leaked);
    let leak = &out.leak.leaks[0];
    assert_eq!(leak.address, 0x1002a);
    assert!(leak.squashed && leak.speculative);
    assert_eq!(out.path.len(), 3);
}

#[test]
fn never_policy_squashes_nothing() {
    let p = prog(COLD_BOUND);
    let out = sim(&p, &attack_state(true), &MispredictPolicy::Never);
    assert!(!out.leak.leaked);
    assert!(out.trace.events.iter().all(|e| !e.squashed && !e.speculative));
    assert!(out.trace.branches.iter().all(|b| !b.speculated));
}

#[test]
fn zero_depth_disables_speculation() {
    let p = prog(COLD_BOUND);
    let t = TimingConfig {
        max_spec_depth: 0,
        ..timing()
    };
    let out = simulate(&p, "victim", &attack_state(true), &t, &MispredictPolicy::AlwaysWrong, 1000)
        .unwrap();
    assert!(out.trace.events.iter().all(|e| !e.speculative && !e.squashed));
    assert!(out.trace.branches.iter().all(|b| !b.speculated));
}

#[test]
fn hardened_gadget_does_not_leak() {
    let p = prog(COLD_BOUND);
    for kind in [PassKind::Lfence, PassKind::LahfDep, PassKind::SlhCmov] {
        let (h, _) = harden(&p, &PassConfig::new(kind)).unwrap();
        let out = sim(&h, &attack_state(true), &MispredictPolicy::AlwaysWrong);
        assert!(!out.leak.leaked, "{}", kind);
    }
}

#[test]
fn argdep_with_register_bound_has_tiny_window() {
    let p = prog(REG_BOUND);
    let (h, _) = harden(&p, &PassConfig::new(PassKind::ArgDep)).unwrap();
    let mut s = attack_state(false);
    s.set_reg(Gpr::R15, 0);
    let w = speculation_window(&h, "victim", 0, &s, &timing(), &MispredictPolicy::AlwaysWrong, 1000)
        .unwrap();
    assert!(w <= 2, "window {}", w);
    assert!(!sim(&h, &s, &MispredictPolicy::AlwaysWrong).leak.leaked);
}

#[test]
fn window_of_unreached_site_is_an_error() {
    let p = prog("victim:\n\tret\n");
    let e = speculation_window(
        &p,
        "victim",
        0,
        &MachineState::default(),
        &timing(),
        &MispredictPolicy::AlwaysWrong,
        10,
    );
    assert_eq!(e, Err(SimError::BranchNotReached(0)));
}

#[test]
fn chosen_policy_must_cover_reached_sites() {
    let p = prog(COLD_BOUND);
    let policy = MispredictPolicy::Chosen {
        directions: Default::default(),
    };
    let e = simulate(&p, "victim", &attack_state(true), &timing(), &policy, 100).unwrap_err();
    assert_eq!(e, SimError::PolicyMissingSite(0));
}

#[test]
fn chosen_policy_matches_named_policies() {
    let p = prog(COLD_BOUND);
    let s = attack_state(true);
    let wrong = MispredictPolicy::Chosen {
        directions: [(0, false)].into_iter().collect(),
    };
    assert_eq!(
        sim(&p, &s, &wrong).trace,
        sim(&p, &s, &MispredictPolicy::AlwaysWrong).trace
    );
    assert_eq!(MispredictPolicy::enumerate(2).count(), 4);
}

#[test]
fn lfence_waits_for_older_work() {
    let p = prog("f:\n\tmovq (%rdi), %rax\n\tlfence\n\taddq $1, %rbx\n\tret\n");
    let out = simulate(
        &p,
        "f",
        &MachineState::default(),
        &TimingConfig::default(),
        &MispredictPolicy::Never,
        100,
    )
    .unwrap();
    let add = &out.issues[2];
    assert!(add.issue_cycle.unwrap() >= 201, "{:?}", out.issues);
}

#[test]
fn taken_branch_ends_fetch_group() {
    let p = prog("f:\n\tjmp .La\n.La:\n\tnop\n\tret\n");
    let out = simulate(
        &p,
        "f",
        &MachineState::default(),
        &TimingConfig::default(),
        &MispredictPolicy::Never,
        100,
    )
    .unwrap();
    assert_eq!(out.issues[0].fetch_cycle, 0);
    assert_eq!(out.issues[1].fetch_cycle, 1);
}

#[test]
fn policy_json_round_trips() {
    let p: MispredictPolicy =
        serde_json::from_str(r#"{"kind":"chosen","directions":{"0":true,"3":false}}"#).unwrap();
    let text = serde_json::to_string(&p).unwrap();
    assert_eq!(serde_json::from_str::<MispredictPolicy>(&text).unwrap(), p);
    assert!(serde_json::from_str::<TimingConfig>(r#"{"bogus":1}"#).is_err());
    let t: TimingConfig = serde_json::from_str(r#"{"warm_lines":["0x1008"]}"#).unwrap();
    assert_eq!(t.warm_lines.iter().next().unwrap().0, 0x1008);
}

#[test]
fn sim_input_parses_flattened_state() {
    let s = SimInput::from_json(
        r#"{"registers":{"rdi":"0x10"},"warm_lines":[4096],"policy":{"kind":"always_wrong"}}"#,
    )
    .unwrap();
    assert_eq!(s.policy, Some(MispredictPolicy::AlwaysWrong));
    assert_eq!(s.warm_lines[0].0, 4096);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn committed_path_matches_interpreter(i in 0u64..64, bound in 0u64..64, wrong: bool) {
        let p = prog(COLD_BOUND);
        let mut s = attack_state(true);
        s.set_reg(Gpr::Rdi, i);
        s.store_u64(0x2000, bound);
        let policy = if wrong { MispredictPolicy::AlwaysWrong } else { MispredictPolicy::Never };
        let out = sim(&p, &s, &policy);
        let r = exec(&p, "victim", &s, 1000).unwrap();
        prop_assert_eq!(&out.path, &r.path);
        prop_assert_eq!(out.final_state.gpr, r.final_state.gpr);
        let committed: Vec<_> = out
            .trace
            .events
            .iter()
            .filter(|e| !e.squashed)
            .map(|e| e.address)
            .collect();
        let reference: Vec<_> = r.mem_events.iter().map(|e| e.address).collect();
        prop_assert_eq!(committed, reference);
    }

    #[test]
    fn adding_an_lfence_never_speeds_up(i in 0u64..64, bound in 0u64..64) {
        let p = prog(COLD_BOUND);
        let (h, _) = harden(&p, &PassConfig::new(PassKind::Lfence)).unwrap();
        let mut s = attack_state(true);
        s.set_reg(Gpr::Rdi, i);
        s.store_u64(0x2000, bound);
        let a = sim(&p, &s, &MispredictPolicy::Never).metrics.cycles;
        let b = sim(&h, &s, &MispredictPolicy::Never).metrics.cycles;
        prop_assert!(b >= a);
    }
}
