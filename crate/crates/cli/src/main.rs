use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use handoff_core::authz::{AuthorizationCache, InteractivePrompt, PathAuthorizer, ScriptedPolicy};
use handoff_core::bench::{self, Suite};
use handoff_core::mediator::{AuthState, Mode};
use handoff_core::scenario::format::PhasePolicy;
use handoff_core::scenario::{self, ReplayError, RunOptions, RunReport, WorkloadParams};

const WINDOW_ENV: &str = "HANDOFF_WINDOW_MS";

const EXIT_INVALID: u8 = 2;
const EXIT_ATTACK: u8 = 3;
const EXIT_DIVERGED: u8 = 4;

#[derive(Parser)]
#[command(
    name = "handoff",
    version,
    about = "Delegation-path authorization simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Entrust,
    FirstUse,
    Unmediated,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Entrust => Mode::Entrust,
            ModeArg::FirstUse => Mode::FirstUse,
            ModeArg::Unmediated => Mode::Unmediated,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and report prompts, decisions and attack outcomes.
    Run {
        file: PathBuf,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        /// Main-phase policy file, replacing the scenario's.
        #[arg(long)]
        policy: Option<PathBuf>,
        /// Ask on the terminal instead of applying a policy.
        #[arg(long, conflicts_with = "policy")]
        interactive: bool,
        /// Time window in ms. Falls back to the scenario, then HANDOFF_WINDOW_MS.
        #[arg(long)]
        window_ms: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Write a replayable trace here.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Authorization cache to start from; updated after the run.
        #[arg(long)]
        cache: Option<PathBuf>,
        /// Print the full report as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Run a scenario under both authorization models and tabulate.
    Compare {
        file: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        json: bool,
    },
    /// Generate a synthetic workload scenario.
    Gen {
        out: PathBuf,
        /// Number of input events.
        #[arg(long)]
        n: Option<usize>,
        /// Input gap bounds in ms, as LO,HI.
        #[arg(long, value_parser = parse_gaps)]
        gaps: Option<(u64, u64)>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run one benchmark suite.
    Bench {
        #[arg(value_parser = parse_suite)]
        suite: Suite,
    },
    /// Re-run a trace and check every record matches.
    Replay { trace: PathBuf },
}

fn parse_gaps(s: &str) -> Result<(u64, u64), String> {
    let (lo, hi) = s.split_once(',').ok_or("expected LO,HI")?;
    let lo = lo.trim().parse::<u64>().map_err(|e| e.to_string())?;
    let hi = hi.trim().parse::<u64>().map_err(|e| e.to_string())?;
    if lo > hi {
        return Err(format!("{lo} > {hi}"));
    }
    Ok((lo, hi))
}

fn parse_suite(s: &str) -> Result<Suite, String> {
    s.parse()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            let diverged = matches!(
                err.downcast_ref::<ReplayError>(),
                Some(ReplayError::TraceDivergence { .. })
            );
            ExitCode::from(if diverged {
                EXIT_DIVERGED
            } else {
                EXIT_INVALID
            })
        }
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn load(path: &Path) -> Result<scenario::Scenario> {
    scenario::parse(&read(path)?).with_context(|| format!("loading {}", path.display()))
}

fn env_window() -> Result<Option<u64>> {
    match std::env::var(WINDOW_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .with_context(|| format!("{WINDOW_ENV}={v:?}")),
        Err(_) => Ok(None),
    }
}

fn dispatch(command: Command) -> Result<u8> {
    match command {
        Command::Run {
            file,
            mode,
            policy,
            interactive,
            window_ms,
            seed,
            trace,
            cache,
            json,
        } => {
            let s = load(&file)?;
            let policy = match policy {
                Some(p) => {
                    let text = read(&p)?;
                    let parsed = ScriptedPolicy::parse(&text)
                        .with_context(|| format!("policy {}", p.display()))?;
                    Some(PhasePolicy {
                        text,
                        policy: Some(parsed),
                    })
                }
                None => None,
            };
            let auth = match &cache {
                Some(p) if p.exists() => {
                    let bytes = fs::read(p).with_context(|| format!("reading {}", p.display()))?;
                    let imported = AuthorizationCache::import(&bytes)
                        .with_context(|| format!("cache {}", p.display()))?;
                    Some(AuthState {
                        paths: PathAuthorizer::with_cache(imported, false),
                        ..AuthState::default()
                    })
                }
                _ => None,
            };
            let authorizer = interactive.then(|| {
                Box::new(InteractivePrompt::new(
                    std::io::stdin().lock(),
                    std::io::stderr(),
                )) as Box<dyn handoff_core::authz::Authorizer>
            });
            let out = scenario::run(
                &s,
                RunOptions {
                    mode: mode.map(Mode::from),
                    window_ms,
                    fallback_window_ms: env_window()?,
                    seed,
                    policy,
                    authorizer,
                    auth,
                    trace: trace.is_some(),
                    ..RunOptions::default()
                },
            )?;
            if let (Some(path), Some(t)) = (&trace, &out.trace) {
                fs::write(path, t.to_text())
                    .with_context(|| format!("writing {}", path.display()))?;
            }
            if let Some(path) = &cache {
                fs::write(path, out.auth.paths.cache().export())
                    .with_context(|| format!("writing {}", path.display()))?;
            }
            if json {
                println!("{}", serde_json::to_string_pretty(&out.report)?);
            } else {
                print!("{}", summary(&out.report));
            }
            Ok(if out.report.expectations_met() {
                0
            } else {
                EXIT_ATTACK
            })
        }
        Command::Compare { file, seed, json } => {
            let c = scenario::compare_modes(&load(&file)?, seed)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&c)?);
            } else {
                print!("{}", c.table());
            }
            Ok(
                if c.entrust.expectations_met() && c.first_use.expectations_met() {
                    0
                } else {
                    EXIT_ATTACK
                },
            )
        }
        Command::Gen { out, n, gaps, seed } => {
            let defaults = WorkloadParams::default();
            let params = WorkloadParams {
                n_inputs: n.unwrap_or(defaults.n_inputs),
                gap_range_ms: gaps.unwrap_or(defaults.gap_range_ms),
                seed: seed.unwrap_or(defaults.seed),
                ..defaults
            };
            let g = scenario::generate(&params)?;
            fs::write(&out, g.to_text()).with_context(|| format!("writing {}", out.display()))?;
            let a = &g.allocation;
            println!(
                "wrote {}: {} inputs, {} handoffs, {} requests",
                out.display(),
                params.n_inputs,
                a.handoffs,
                a.requests
            );
            Ok(0)
        }
        Command::Bench { suite } => {
            print!("{}", bench::run_suite(suite)?);
            Ok(0)
        }
        Command::Replay { trace } => {
            let text = read(&trace)?;
            let records = text.lines().filter(|l| !l.trim().is_empty()).count() - 1;
            let report = scenario::replay(&text)?;
            println!("{records} records identical");
            print!("{}", summary(&report));
            Ok(0)
        }
    }
}

fn summary(r: &RunReport) -> String {
    let mut out = format!(
        "scenario {} ({}, window {} ms)\n",
        r.scenario,
        serde_json::to_value(r.mode)
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_default(),
        r.window_ms
    );
    for p in &r.prompts {
        out.push_str(&format!("prompt t={} {:?}: {}\n", p.t, p.verdict, p.text));
    }
    out.push_str(&format!(
        "events {}  prompts {} + {}  allowed {}  denied {}  rejected {}\n",
        r.events, r.preliminary_prompts, r.main_prompts, r.allowed, r.denied, r.rejected
    ));
    if r.stats.total_events > 0 {
        out.push_str(&format!(
            "delayed {} ({:.2}%)  max delay {} ms\n",
            r.stats.delayed_events,
            r.stats.delayed_fraction() * 100.0,
            r.stats.max_delay_ms
        ));
    }
    for a in &r.attacks {
        out.push_str(&format!(
            "attack {} {} {}: {}\n",
            a.program,
            a.op,
            a.sensor,
            if a.succeeded { "succeeded" } else { "blocked" }
        ));
    }
    for e in &r.expectations {
        out.push_str(&format!(
            "{} {}: expected {}, got {}\n",
            if e.passed { "ok  " } else { "FAIL" },
            e.what,
            e.expected,
            e.actual
        ));
    }
    out
}
