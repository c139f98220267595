use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anondesa::explore::{explore, ExploreError, Limits};
use anondesa::sched::execute_schedule;
use anondesa::verify::{check_equivariance_seeded, run_checks, CHECK_NAMES};
use anondesa::*;
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

/// Simulate and verify desanonymization of anonymous shared registers.
#[derive(Parser)]
#[command(name = "anondesa", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one (or a batch of) simulations and check the result.
    Run(RunArgs),
    /// Explore every interleaving of a small system.
    Explore(ExploreArgs),
    /// List the register counts usable with n processes.
    Mtable(MtableArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    V1,
    V2,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Literal,
    Indexed,
}

#[derive(Clone, Copy, ValueEnum)]
enum SchedArg {
    Rr,
    Random,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    FixedIndex,
    SeededRandom,
}

#[derive(Clone, Copy, ValueEnum)]
enum MutantArg {
    SkipDesaBroadcast,
    SkipBottomSweep,
    DoubleIncrement,
    IdentityOrder,
    BitReset,
    ScanUpdatesCt,
}

impl From<MutantArg> for Mutant {
    fn from(m: MutantArg) -> Self {
        match m {
            MutantArg::SkipDesaBroadcast => Mutant::SkipDesaBroadcast,
            MutantArg::SkipBottomSweep => Mutant::SkipBottomSweep,
            MutantArg::DoubleIncrement => Mutant::DoubleIncrement,
            MutantArg::IdentityOrder => Mutant::IdentityOrder,
            MutantArg::BitReset => Mutant::BitReset,
            MutantArg::ScanUpdatesCt => Mutant::ScanUpdatesCt,
        }
    }
}

#[derive(Args)]
struct SystemArgs {
    /// Number of processes.
    #[arg(long)]
    n: usize,
    /// Number of registers.
    #[arg(long)]
    m: usize,
    #[arg(long, value_enum, default_value = "v1")]
    variant: VariantArg,
    #[arg(long, value_enum, default_value = "indexed")]
    v2_mode: ModeArg,
    /// Where contenders put their single write.
    #[arg(long, value_enum, default_value = "fixed-index")]
    contender: PolicyArg,
    /// Scheduler seed; also feeds the seeded contender policy.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Seed for the adversary permutations (defaults to --seed).
    #[arg(long, conflicts_with = "perm_file")]
    perm_seed: Option<u64>,
    /// JSON array of n arrays of m 1-based indices.
    #[arg(long)]
    perm_file: Option<PathBuf>,
    /// Run with m outside M(n).
    #[arg(long)]
    allow_infeasible: bool,
    /// Inject a deliberate protocol bug.
    #[arg(long, value_enum)]
    mutate: Option<MutantArg>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    sys: SystemArgs,
    #[arg(long, value_enum, default_value = "random")]
    scheduler: SchedArg,
    /// Step budget (defaults to 2000·n·m).
    #[arg(long)]
    budget: Option<u64>,
    /// Write the trace as JSON lines.
    #[arg(long, conflicts_with = "parallel_seeds")]
    trace_out: Option<PathBuf>,
    /// `all` or a comma-separated list of check names.
    #[arg(long, default_value = "all")]
    checks: String,
    /// Run this many consecutive seeds starting at --seed, in parallel.
    #[arg(long)]
    parallel_seeds: Option<u64>,
    /// Print a JSON report.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct ExploreArgs {
    #[command(flatten)]
    sys: SystemArgs,
    #[arg(long, default_value_t = Limits::default().max_states)]
    max_states: usize,
    /// Directory for counterexample traces.
    #[arg(long)]
    cex_dir: Option<PathBuf>,
}

#[derive(Args)]
struct MtableArgs {
    #[arg(long)]
    n: usize,
    /// List the members of M(n) up to this value.
    #[arg(long, required_unless_present = "next")]
    max: Option<usize>,
    /// Print the smallest member of M(n) above this value.
    #[arg(long)]
    next: Option<usize>,
    #[arg(long)]
    json: bool,
}

/// Exit status: 0 all good, 1 a check failed or the budget ran out, 2 bad input.
#[derive(Debug)]
enum Failure {
    Violation,
    Usage(String),
}

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Usage(e.to_string())
    }
}

type CmdResult = Result<(), Failure>;

fn build(sys: &SystemArgs) -> Result<(Config, Setup), Failure> {
    let variant = match sys.variant {
        VariantArg::V1 => Variant::V1,
        VariantArg::V2 => Variant::V2,
    };
    let mut cfg = Config::new(sys.n, sys.m, variant)
        .with_mode(match sys.v2_mode {
            ModeArg::Literal => V2Mode::Literal,
            ModeArg::Indexed => V2Mode::Indexed,
        })
        .with_policy(match sys.contender {
            PolicyArg::FixedIndex => ContenderPolicy::FixedIndex,
            PolicyArg::SeededRandom => ContenderPolicy::SeededRandom,
        })
        .with_seed(sys.seed);
    if sys.allow_infeasible {
        cfg = cfg.allowing_infeasible();
    }
    if let Some(m) = sys.mutate {
        cfg = cfg.with_mutant(m.into());
    }
    cfg.validate()?;
    let setup = match &sys.perm_file {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
            let perms: Vec<Permutation> =
                serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
            Setup::with_perms(perms)
        }
        None => Setup::random(sys.n, sys.m, sys.perm_seed.unwrap_or(sys.seed)),
    };
    setup.validate(&cfg)?;
    Ok((cfg, setup))
}

fn parse_checks(spec: &str) -> Result<Option<Vec<String>>, Failure> {
    if spec == "all" {
        return Ok(None);
    }
    let names: Vec<String> = spec.split(',').map(|s| s.trim().to_string()).collect();
    for name in &names {
        if name != "equivariance" && !CHECK_NAMES.contains(&name.as_str()) {
            return Err(Failure::Usage(format!(
                "unknown check {name:?}; known: {}, equivariance",
                CHECK_NAMES.join(", ")
            )));
        }
    }
    Ok(Some(names))
}

#[derive(Serialize)]
struct RunReport {
    seed: u64,
    outcome: Outcome,
    steps: u64,
    max_wait: u64,
    passed: bool,
    checks: Vec<CheckResult>,
}

fn run_one(
    cfg: &Config,
    setup: &Setup,
    sched: Scheduler,
    only: Option<&[String]>,
) -> Result<(RunReport, Trace), Failure> {
    let r = run(cfg, setup, sched)?;
    let mut checks = run_checks(cfg, setup, &r, only);
    if only.is_none_or(|o| o.iter().any(|s| s == "equivariance")) {
        checks.push(check_equivariance_seeded(cfg, setup, sched, cfg.seed));
    }
    let seed = match sched {
        Scheduler::Random(s) => s,
        Scheduler::RoundRobin => cfg.seed,
    };
    let passed = r.completed() && checks.iter().all(|c| c.passed);
    let report = RunReport {
        seed,
        outcome: r.outcome,
        steps: r.steps,
        max_wait: r.max_wait,
        passed,
        checks,
    };
    Ok((report, r.trace))
}

fn print_report(r: &RunReport) {
    println!("seed {}: {:?} after {} steps", r.seed, r.outcome, r.steps);
    for c in &r.checks {
        match &c.detail {
            None => println!("  PASS {}", c.name),
            Some(d) => println!("  FAIL {}: {d}", c.name),
        }
    }
}

fn cmd_run(a: RunArgs) -> CmdResult {
    let (mut cfg, setup) = build(&a.sys)?;
    if let Some(b) = a.budget {
        cfg = cfg.with_budget(b);
    }
    let only = parse_checks(&a.checks)?;
    let sched_for = |seed: u64| match a.scheduler {
        SchedArg::Rr => Scheduler::RoundRobin,
        SchedArg::Random => Scheduler::Random(seed),
    };

    let reports: Vec<RunReport> = match a.parallel_seeds {
        Some(k) => {
            let seeds: Vec<u64> = (a.sys.seed..a.sys.seed + k).collect();
            let results: Result<Vec<RunReport>, Failure> = seeds
                .par_iter()
                .map(|&seed| {
                    let cfg = cfg.clone().with_seed(seed);
                    let setup = match a.sys.perm_file {
                        Some(_) => setup.clone(),
                        None => Setup::random(cfg.n, cfg.m, a.sys.perm_seed.unwrap_or(seed)),
                    };
                    run_one(&cfg, &setup, sched_for(seed), only.as_deref()).map(|(r, _)| r)
                })
                .collect();
            results?
        }
        None => {
            let (report, trace) = run_one(&cfg, &setup, sched_for(a.sys.seed), only.as_deref())?;
            if let Some(path) = &a.trace_out {
                let file = File::create(path).map_err(|e| format!("{}: {e}", path.display()))?;
                let mut out = BufWriter::new(file);
                trace.write_jsonl(&mut out)?;
                out.flush()?;
            }
            vec![report]
        }
    };

    let passed = reports.iter().all(|r| r.passed);
    if a.json {
        if a.parallel_seeds.is_some() {
            #[derive(Serialize)]
            struct Batch<'a> {
                runs: usize,
                passed: usize,
                reports: &'a [RunReport],
            }
            let batch = Batch {
                runs: reports.len(),
                passed: reports.iter().filter(|r| r.passed).count(),
                reports: &reports,
            };
            println!("{}", serde_json::to_string_pretty(&batch)?);
        } else {
            println!("{}", serde_json::to_string_pretty(&reports[0])?);
        }
    } else if a.parallel_seeds.is_some() {
        let ok = reports.iter().filter(|r| r.passed).count();
        println!("{ok}/{} runs passed", reports.len());
        for r in reports.iter().filter(|r| !r.passed) {
            print_report(r);
        }
    } else {
        print_report(&reports[0]);
    }
    if passed {
        Ok(())
    } else {
        Err(Failure::Violation)
    }
}

fn write_counterexample(
    dir: &Path,
    k: usize,
    cfg: &Config,
    setup: &Setup,
    schedule: &[usize],
) -> io::Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let mut trace = Trace::default();
    // A faulting step is the last one of the schedule; its partial trace is kept.
    let _ = execute_schedule(cfg, setup, schedule, &mut trace);
    let path = dir.join(format!("cex-{k}.jsonl"));
    let mut out = BufWriter::new(File::create(&path)?);
    trace.write_jsonl(&mut out)?;
    out.flush()?;
    Ok(path)
}

fn cmd_explore(a: ExploreArgs) -> CmdResult {
    let (cfg, setup) = build(&a.sys)?;
    let limits = Limits {
        max_states: a.max_states,
        ..Limits::default()
    };
    let report = match explore(&cfg, &setup, limits) {
        Ok(r) => r,
        Err(e @ ExploreError::TooLarge { .. }) | Err(e @ ExploreError::Config(_)) => {
            return Err(e.into())
        }
    };
    let mut files = Vec::new();
    if let Some(dir) = &a.cex_dir {
        for (k, v) in report.violations.iter().enumerate() {
            files.push(write_counterexample(dir, k, &cfg, &setup, &v.schedule)?);
        }
    }
    #[derive(Serialize)]
    struct Out<'a> {
        #[serde(flatten)]
        report: &'a ExplorationReport,
        passed: bool,
        counterexample_files: Vec<PathBuf>,
    }
    let out = Out {
        report: &report,
        passed: report.passed(),
        counterexample_files: files,
    };
    println!("{}", serde_json::to_string_pretty(&out)?);
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::Violation)
    }
}

fn cmd_mtable(a: MtableArgs) -> CmdResult {
    if a.n < 2 {
        return Err(Failure::Usage(format!("M(n) needs n ≥ 2, got {}", a.n)));
    }
    if let Some(max) = a.max {
        let members: Vec<usize> = (0..=max).filter(|&m| is_in_m(a.n, m)).collect();
        if a.json {
            let v = serde_json::json!({ "n": a.n, "max": max, "members": members });
            println!("{v}");
        } else {
            let list: Vec<String> = members.iter().map(usize::to_string).collect();
            println!("M({}) up to {max}: {{{}}}", a.n, list.join(", "));
        }
    }
    if let Some(after) = a.next {
        let next = next_in_m(a.n, after);
        if a.json {
            println!(
                "{}",
                serde_json::json!({ "n": a.n, "after": after, "next": next })
            );
        } else {
            println!("{next}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.cmd {
        Cmd::Run(a) => cmd_run(a),
        Cmd::Explore(a) => cmd_explore(a),
        Cmd::Mtable(a) => cmd_mtable(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Violation) => ExitCode::from(1),
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
