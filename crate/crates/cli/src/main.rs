use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bcbguard::corpus::{self, CorpusEntry};
use bcbguard::interp::{exec, parse_num, InitState, MachineState, SecretRegion};
use bcbguard::metrics::{run_bench, BenchConfig, BenchProgram};
use bcbguard::passes::{harden, PassConfig, PassError, PassKind};
use bcbguard::specsim::{simulate, MispredictPolicy, SimError, SimInput, TimingConfig};
use bcbguard::{parse_named, print_asm, verify_reserved, Gpr, Program};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

const EXIT_FAILURE: u8 = 1;
const EXIT_PARSE: u8 = 2;
const EXIT_RESERVED: u8 = 3;
const EXIT_IO: u8 = 4;
const EXIT_LEAK: u8 = 10;
const EXIT_BENCH: u8 = 11;

/// Bounds-check-bypass hardening for x86-64 assembly.
#[derive(Parser, Debug)]
#[command(name = "bcbguard", version, arg_required_else_help = true)]
struct Cli {
    /// Print the default timing, policy and pass settings as JSON and exit.
    #[arg(long)]
    print_defaults: bool,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Rewrite an assembly file with one hardening pass.
    Harden(HardenArgs),
    /// Run a function on the reference interpreter.
    Exec(ExecArgs),
    /// Run a function on the speculative timing simulator.
    Simulate(SimulateArgs),
    /// Simulate a corpus natively and under each pass.
    Bench(BenchArgs),
    /// Check reserved-register use and print/parse round trip without writing anything.
    Verify(VerifyArgs),
}

#[derive(Args, Debug, Clone)]
struct PassFlags {
    /// Register that carries the artificial dependency.
    #[arg(long, value_name = "REG", default_value = "r15", value_parser = parse_gpr)]
    dep_reg: Gpr,
    /// Register that holds zero for the SLH mask update.
    #[arg(long, value_name = "REG", default_value = "r14", value_parser = parse_gpr)]
    zero_reg: Gpr,
    /// Instrument both edges of every branch (the default).
    #[arg(long, conflicts_with = "figure_fidelity")]
    both_edges: bool,
    /// Instrument only the taken edge.
    #[arg(long)]
    figure_fidelity: bool,
}

impl PassFlags {
    fn config(&self, kind: PassKind) -> PassConfig {
        PassConfig {
            kind,
            dep_register: self.dep_reg,
            zero_register: self.zero_reg,
            instrument_both_edges: true,
            figure_fidelity: self.figure_fidelity,
        }
    }
}

#[derive(Args, Debug)]
struct HardenArgs {
    #[arg(long, value_parser = parse_pass)]
    pass: PassKind,
    #[command(flatten)]
    flags: PassFlags,
    /// Assembly input.
    input: PathBuf,
    /// Where to write the hardened assembly (default: stdout).
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Where to write the pass report as JSON (default: stdout when `-o` is
    /// given, stderr otherwise).
    #[arg(long, value_name = "FILE")]
    report: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct StateFlags {
    /// Function to run (default: the first one in the file).
    #[arg(long)]
    entry: Option<String>,
    /// Initial-state JSON file.
    #[arg(long, value_name = "FILE")]
    init: Option<PathBuf>,
    /// Mark memory secret, as START:LEN (repeatable).
    #[arg(long, value_name = "START:LEN", value_parser = parse_region)]
    secret: Vec<SecretRegion>,
    #[arg(long, default_value_t = 1_000_000)]
    step_limit: u64,
}

#[derive(Args, Debug)]
struct ExecArgs {
    input: PathBuf,
    #[command(flatten)]
    state: StateFlags,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    input: PathBuf,
    #[command(flatten)]
    state: StateFlags,
    /// Timing JSON file.
    #[arg(long, value_name = "FILE")]
    timing: Option<PathBuf>,
    /// `never`, `always-wrong`, or a policy JSON file.
    #[arg(long, value_name = "POLICY")]
    policy: Option<String>,
    /// Cache lines resident before the run.
    #[arg(long, value_name = "ADDR[,ADDR...]", value_delimiter = ',', value_parser = parse_num)]
    warm: Vec<u64>,
    /// Harden the input with this pass before simulating.
    #[arg(long, value_parser = parse_pass)]
    pass: Option<PassKind>,
    #[command(flatten)]
    flags: PassFlags,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Json,
    Csv,
    Md,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// Directory of `.s` files with `.json` sidecars (default: the bundled
    /// kernels).
    corpus: Option<PathBuf>,
    /// Passes to compare against native (repeatable; default: all four).
    #[arg(long, value_parser = parse_pass)]
    pass: Vec<PassKind>,
    #[command(flatten)]
    flags: PassFlags,
    #[arg(long, value_enum, default_value = "md")]
    format: Format,
    #[arg(long, value_name = "FILE")]
    timing: Option<PathBuf>,
    #[arg(long, value_name = "POLICY")]
    policy: Option<String>,
    #[arg(short, long)]
    output: Option<PathBuf>,
    #[arg(long, default_value_t = 1_000_000)]
    step_limit: u64,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// Check the registers this pass reserves (default: r15 and r14).
    #[arg(long, value_parser = parse_pass)]
    pass: Option<PassKind>,
    #[command(flatten)]
    flags: PassFlags,
}

fn parse_gpr(s: &str) -> Result<Gpr, String> {
    Gpr::lookup(s.trim_start_matches('%'))
        .filter(|r| r.gpr.name(bcbguard::Width::B64) == s.trim_start_matches('%').to_ascii_lowercase())
        .map(|r| r.gpr)
        .ok_or_else(|| format!("not a 64-bit register: `{}`", s))
}

fn parse_pass(s: &str) -> Result<PassKind, String> {
    s.parse()
}

fn parse_region(s: &str) -> Result<SecretRegion, String> {
    let (a, b) = s.split_once(':').ok_or("expected START:LEN")?;
    Ok(SecretRegion {
        start: parse_num(a)?,
        length: parse_num(b)?,
    })
}

/// A failure with its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Failure {
            code,
            message: message.into(),
        }
    }
}

type Outcome = Result<u8, Failure>;

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::new(EXIT_IO, format!("{}: {}", path.display(), e)))
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| Failure::new(EXIT_IO, format!("{}: {}", path.display(), e)))
}

fn load_program(path: &Path) -> Result<Program, Failure> {
    let text = read(path)?;
    match parse_named(&path.display().to_string(), &text) {
        Ok(p) => {
            for w in &p.warnings {
                eprintln!("{}:{}: warning: {}", path.display(), w.line, w.message);
            }
            Ok(p.program)
        }
        Err(errors) => Err(Failure::new(
            EXIT_PARSE,
            errors
                .iter()
                .map(|e| format!("{}:{}", path.display(), e))
                .collect::<Vec<_>>()
                .join("\n"),
        )),
    }
}

fn pass_failure(e: PassError) -> Failure {
    match e {
        PassError::Reserved(v) => Failure::new(
            EXIT_RESERVED,
            v.iter()
                .map(|x| format!("reserved register: {}", x))
                .collect::<Vec<_>>()
                .join("\n"),
        ),
        PassError::InvalidConfig(m) => Failure::new(EXIT_PARSE, m),
        other => Failure::new(EXIT_FAILURE, other.to_string()),
    }
}

fn entry_of(program: &Program, entry: &Option<String>) -> Result<String, Failure> {
    match entry {
        Some(e) => Ok(e.clone()),
        None => program
            .functions
            .first()
            .map(|f| f.name.clone())
            .ok_or_else(|| Failure::new(EXIT_FAILURE, "the input defines no functions")),
    }
}

fn load_sim_input(state: &StateFlags) -> Result<SimInput, Failure> {
    let mut input = match &state.init {
        Some(p) => SimInput::from_json(&read(p)?).map_err(|e| Failure::new(EXIT_PARSE, format!("{}: {}", p.display(), e)))?,
        None => SimInput::default(),
    };
    input.init.secret_regions.extend(state.secret.iter().map(|r| bcbguard::interp::RegionInit {
        start: bcbguard::interp::Num(r.start),
        length: bcbguard::interp::Num(r.length),
    }));
    Ok(input)
}

fn machine(input: &InitState) -> Result<MachineState, Failure> {
    input.to_machine().map_err(|e| Failure::new(EXIT_PARSE, e.to_string()))
}

fn load_timing(path: &Option<PathBuf>, fallback: Option<TimingConfig>) -> Result<TimingConfig, Failure> {
    let t = match path {
        Some(p) => serde_json::from_str(&read(p)?)
            .map_err(|e| Failure::new(EXIT_PARSE, format!("{}: {}", p.display(), e)))?,
        None => fallback.unwrap_or_default(),
    };
    let t: TimingConfig = t;
    t.validate().map_err(|e| Failure::new(EXIT_PARSE, e))?;
    Ok(t)
}

fn load_policy(arg: &Option<String>, fallback: Option<MispredictPolicy>) -> Result<MispredictPolicy, Failure> {
    match arg {
        None => Ok(fallback.unwrap_or_default()),
        Some(s) => match MispredictPolicy::parse_name(s) {
            Some(p) => Ok(p),
            None => {
                let p = Path::new(s);
                serde_json::from_str(&read(p)?)
                    .map_err(|e| Failure::new(EXIT_PARSE, format!("{}: {}", p.display(), e)))
            }
        },
    }
}

/// Writes to stdout; a closed pipe ends output silently.
fn out(text: &str) -> Result<(), Failure> {
    match std::io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Failure::new(EXIT_IO, e.to_string())),
        _ => Ok(()),
    }
}

fn json_line(value: serde_json::Value) -> String {
    serde_json::to_string(&value).expect("json serializes")
}

fn cmd_harden(a: &HardenArgs) -> Outcome {
    let config = a.flags.config(a.pass);
    config.validate().map_err(pass_failure)?;
    let program = load_program(&a.input)?;
    let (hardened, report) = harden(&program, &config).map_err(pass_failure)?;
    let text = print_asm(&hardened);
    let report = serde_json::to_string_pretty(&report).expect("report serializes");
    match &a.output {
        Some(out) => write(out, &text)?,
        None => out(&text)?,
    }
    match (&a.report, &a.output) {
        (Some(r), _) => write(r, &(report + "\n"))?,
        (None, Some(_)) => out(&(report + "\n"))?,
        (None, None) => eprintln!("{}", report),
    }
    Ok(0)
}

fn cmd_exec(a: &ExecArgs) -> Outcome {
    let input = load_sim_input(&a.state)?;
    let program = load_program(&a.input)?;
    let entry = entry_of(&program, &a.state.entry)?;
    let init = machine(&input.init)?;
    let r = exec(&program, &entry, &init, a.state.step_limit)
        .map_err(|e| Failure::new(EXIT_FAILURE, e.to_string()))?;
    let s = &r.final_state;
    let registers: serde_json::Map<String, serde_json::Value> = Gpr::ALL
        .iter()
        .map(|g| (g.to_string(), json!(format!("{:#x}", s.reg(*g)))))
        .collect();
    let memory: serde_json::Map<String, serde_json::Value> = s
        .memory_image()
        .into_iter()
        .map(|(a, b)| (format!("{:#x}", a), json!(b)))
        .collect();
    let result = json!({
        "entry": entry,
        "dynamic_instructions": r.dynamic_instructions,
        "registers": registers,
        "flags": s.flags,
        "memory": memory,
        "mem_events": r.mem_events,
    });
    out(&(serde_json::to_string_pretty(&result).expect("json serializes") + "\n"))?;
    Ok(0)
}

fn cmd_simulate(a: &SimulateArgs) -> Outcome {
    let config = a.pass.map(|k| a.flags.config(k));
    if let Some(c) = &config {
        c.validate().map_err(pass_failure)?;
    }
    let input = load_sim_input(&a.state)?;
    let timing = load_timing(&a.timing, input.timing.clone())?
        .warm(input.warm_lines.iter().map(|n| n.0).chain(a.warm.iter().copied()));
    let policy = load_policy(&a.policy, input.policy.clone())?;
    let mut program = load_program(&a.input)?;
    if let Some(c) = &config {
        program = harden(&program, c).map_err(pass_failure)?.0;
    }
    let entry = entry_of(&program, &a.state.entry)?;
    let init = machine(&input.init)?;
    let sim = simulate(&program, &entry, &init, &timing, &policy, a.state.step_limit).map_err(|e| match e {
        SimError::Timing(m) => Failure::new(EXIT_PARSE, m),
        other => Failure::new(EXIT_FAILURE, other.to_string()),
    })?;
    let emit = |v| out(&(json_line(v) + "\n"));
    for b in &sim.trace.branches {
        emit(json!({ "branch": b }))?;
    }
    for e in &sim.trace.events {
        emit(json!({ "event": e }))?;
    }
    emit(json!({ "leak_report": sim.leak }))?;
    emit(json!({ "metrics": sim.metrics }))?;
    Ok(if sim.leak.leaked { EXIT_LEAK } else { 0 })
}

fn bench_corpus(dir: &Option<PathBuf>) -> Result<Vec<CorpusEntry>, Failure> {
    match dir {
        None => Ok(corpus::kernels()),
        Some(d) => {
            if !d.is_dir() {
                return Err(Failure::new(EXIT_IO, format!("{}: not a directory", d.display())));
            }
            let entries = corpus::load_dir(d).map_err(|e| match e {
                corpus::CorpusError::Io { .. } => Failure::new(EXIT_IO, e.to_string()),
                other => Failure::new(EXIT_PARSE, other.to_string()),
            })?;
            if entries.is_empty() {
                return Err(Failure::new(EXIT_IO, format!("{}: no programs with metadata", d.display())));
            }
            Ok(entries)
        }
    }
}

fn cmd_bench(a: &BenchArgs) -> Outcome {
    let passes = if a.pass.is_empty() { PassKind::ALL.to_vec() } else { a.pass.clone() };
    let pass = a.flags.config(passes[0]);
    pass.validate().map_err(pass_failure)?;
    let timing = load_timing(&a.timing, None)?;
    let policy = load_policy(&a.policy, None)?;
    let entries = bench_corpus(&a.corpus)?;
    let programs: Vec<BenchProgram> = entries.iter().map(CorpusEntry::bench_program).collect();
    let config = BenchConfig {
        timing,
        policy,
        step_limit: a.step_limit,
        pass,
    };
    let report = run_bench(&programs, &passes, &config);
    let text = match a.format {
        Format::Json => report.to_json() + "\n",
        Format::Csv => report
            .to_csv()
            .map_err(|e| Failure::new(EXIT_FAILURE, e.to_string()))?,
        Format::Md => report.to_markdown(),
    };
    match &a.output {
        Some(p) => write(p, &text)?,
        None => out(&text)?,
    }
    for r in report.results.iter().filter(|r| r.error.is_some()) {
        eprintln!(
            "{} {}: {}",
            r.program,
            r.variant,
            r.error.as_deref().unwrap_or_default()
        );
    }
    Ok(if report.failed_cells() > 0 { EXIT_BENCH } else { 0 })
}

fn cmd_verify(a: &VerifyArgs) -> Outcome {
    let reserved = match a.pass {
        Some(k) => {
            let c = a.flags.config(k);
            c.validate().map_err(pass_failure)?;
            c.reserved()
        }
        None => vec![a.flags.dep_reg, a.flags.zero_reg],
    };
    let mut code = 0;
    for path in &a.inputs {
        let program = match load_program(path) {
            Ok(p) => p,
            Err(f) => {
                eprintln!("{}", f.message);
                code = code.max(f.code);
                continue;
            }
        };
        let text = print_asm(&program);
        let round_trip = parse_named("<printed>", &text)
            .map(|p| p.program.functions == program.functions)
            .unwrap_or(false);
        let violations = verify_reserved(&program, &reserved);
        for v in &violations {
            eprintln!("{}: reserved register: {}", path.display(), v);
        }
        if !round_trip {
            eprintln!("{}: printed program does not parse back identically", path.display());
            code = code.max(EXIT_FAILURE);
        }
        if !violations.is_empty() {
            code = code.max(EXIT_RESERVED);
        }
        out(&format!(
            "{}: {} instructions, {} reserved-register uses, round trip {}\n",
            path.display(),
            program.instruction_count(),
            violations.len(),
            if round_trip { "ok" } else { "FAILED" }
        ))?;
    }
    Ok(code)
}

fn print_defaults() -> Outcome {
    let defaults = json!({
        "timing": TimingConfig::default(),
        "policy": MispredictPolicy::default(),
        "pass": PassConfig::new(PassKind::Lfence),
    });
    out(&(serde_json::to_string_pretty(&defaults).expect("json serializes") + "\n"))?;
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        _ if cli.print_defaults => print_defaults(),
        Some(Command::Harden(a)) => cmd_harden(a),
        Some(Command::Exec(a)) => cmd_exec(a),
        Some(Command::Simulate(a)) => cmd_simulate(a),
        Some(Command::Bench(a)) => cmd_bench(a),
        Some(Command::Verify(a)) => cmd_verify(a),
        None => Err(Failure::new(EXIT_PARSE, "no command given")),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
