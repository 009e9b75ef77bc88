//! Command-line front end: `validate`, `extract`, `compose`, `check`,
//! `explore` and `simulate` over `.bta` thread files.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::bta::{parse_spec, ThreadSpec};
use crate::composition::{explore, CompositionConfig, DEFAULT_STATE_BOUND};
use crate::equivalence::{check_thread, EquivConfig};
use crate::extraction::extract_lts;
use crate::lts::{Label, LabelKind, Lts};
use crate::protocol::Mode;
use crate::sim::{simulate, sweep, write_csv, Environment, SimConfig};
use crate::strategy::SelectionStrategy;

pub const EXIT_OK: i32 = 0;
pub const EXIT_NEGATIVE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "instream", version, about = "Instruction stream protocol verification and simulation lab")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse a thread file and report whether it is closed.
    Validate { input: PathBuf },
    /// Write the thread's own transition system as JSON.
    Extract {
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the composed protocol system as JSON, with `j` hidden.
    Compose {
        input: PathBuf,
        #[command(flatten)]
        proto: ProtoArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare the thread with the composed protocol system.
    Check {
        input: PathBuf,
        #[command(flatten)]
        proto: ProtoArgs,
        #[command(flatten)]
        equiv: EquivArgs,
        /// Print the verdict as JSON.
        #[arg(long)]
        json: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Explore the composed system and list its deadlock states.
    Explore {
        input: PathBuf,
        #[command(flatten)]
        proto: ProtoArgs,
        /// Exit with 1 when a deadlock not caused by `D` is found.
        #[arg(long)]
        fail_on_deadlock: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the latency simulation and write one CSV row per run.
    Simulate {
        input: PathBuf,
        #[command(flatten)]
        sim: SimArgs,
    },
}

#[derive(Debug, Args)]
pub struct ProtoArgs {
    #[arg(long, default_value_t = 1)]
    pub maxlen: u32,
    #[arg(long, default_value_t = 1)]
    pub capacity_msg: usize,
    #[arg(long, default_value_t = 1)]
    pub capacity_reply: usize,
    /// `safe` or `strict`.
    #[arg(long, default_value = "safe")]
    pub mode: Mode,
    /// `breadth`, `prob50` or `prob95`, optionally with `+wildcard`.
    #[arg(long, default_value = "breadth")]
    pub strategy: SelectionStrategy,
    #[arg(long, default_value_t = DEFAULT_STATE_BOUND)]
    pub state_bound: usize,
}

impl ProtoArgs {
    fn config(&self) -> CompositionConfig {
        CompositionConfig {
            maxlen: self.maxlen,
            capacity_msg: self.capacity_msg,
            capacity_reply: self.capacity_reply,
            mode: self.mode,
            strategy: self.strategy,
            state_bound: self.state_bound,
            ..Default::default()
        }
    }
}

#[derive(Debug, Args)]
pub struct EquivArgs {
    /// Label kinds hidden on the thread side, comma separated, or `none`.
    #[arg(long, default_value = "stp")]
    pub lhs_abstract: KindSet,
    /// Label kinds hidden on the protocol side, comma separated, or `none`.
    #[arg(long, default_value = "jact,stp")]
    pub rhs_abstract: KindSet,
    #[arg(long)]
    pub divergence_sensitive: bool,
}

#[derive(Debug, Args)]
pub struct SimArgs {
    /// One or more run-ahead bounds, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "1")]
    pub maxlen: Vec<u32>,
    /// One or more strategies, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "breadth")]
    pub strategy: Vec<SelectionStrategy>,
    /// One or more seeds, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub seed: Vec<u64>,
    /// `all-true`, `all-false`, `fixed:TFT..`, `random` or `prob`.
    #[arg(long, default_value = "all-true")]
    pub env: Environment,
    #[arg(long, default_value_t = 4)]
    pub latency_msg: u64,
    #[arg(long, default_value_t = 4)]
    pub latency_reply: u64,
    #[arg(long, default_value_t = 1)]
    pub exec_time: u64,
    /// Maximum number of events per run.
    #[arg(long, default_value_t = 100_000)]
    pub horizon: usize,
    /// Messages in transit at once; defaults to maxlen + 2.
    #[arg(long)]
    pub capacity_msg: Option<usize>,
    /// CSV destination; standard output when absent.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Event log destination; only for a single run.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

/// Comma-separated label kinds; `none` is the empty set.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KindSet(pub BTreeSet<LabelKind>);

impl std::str::FromStr for KindSet {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.trim().is_empty() || s == "none" {
            return Ok(KindSet(BTreeSet::new()));
        }
        s.split(',').map(|k| k.trim().parse()).collect::<Result<_, _>>().map(KindSet)
    }
}

struct Failure {
    code: i32,
    message: String,
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_USAGE,
        message: message.into(),
    }
}

fn load(path: &Path) -> Result<ThreadSpec, Failure> {
    let text = fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    parse_spec(&text).map_err(|e| usage(format!("{}:\n{e}", path.display())))
}

fn emit(out: Option<&Path>, text: &str, stdout: &mut dyn Write) -> Result<(), Failure> {
    match out {
        Some(p) => fs::write(p, text).map_err(|e| usage(format!("{}: {e}", p.display()))),
        None => stdout.write_all(text.as_bytes()).map_err(|e| usage(e.to_string())),
    }
}

/// Runs one invocation; `args` includes the program name. Returns the
/// process exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                let _ = stderr.write_all(text.as_bytes());
                EXIT_USAGE
            } else {
                let _ = stdout.write_all(text.as_bytes());
                EXIT_OK
            };
        }
    };
    match dispatch(cli.command, stdout) {
        Ok(code) => code,
        Err(f) => {
            let _ = writeln!(stderr, "error: {}", f.message);
            f.code
        }
    }
}

fn dispatch(command: Command, stdout: &mut dyn Write) -> Result<i32, Failure> {
    match command {
        Command::Validate { input } => {
            let spec = load(&input)?;
            let text = format!(
                "ok: {} equations, start {}\n",
                spec.len(),
                spec.name(spec.start())
            );
            emit(None, &text, stdout)?;
            Ok(EXIT_OK)
        }
        Command::Extract { input, out } => {
            let spec = load(&input)?;
            let lts = extract_lts(spec.handle());
            emit(out.as_deref(), &(lts.to_json_string() + "\n"), stdout)?;
            Ok(EXIT_OK)
        }
        Command::Compose { input, proto, out } => {
            let spec = load(&input)?;
            let ex = explore(spec.handle(), &proto.config()).map_err(compose_failure)?;
            emit(out.as_deref(), &(ex.lts.to_json_string() + "\n"), stdout)?;
            Ok(EXIT_OK)
        }
        Command::Check {
            input,
            proto,
            equiv,
            json,
            out,
        } => {
            let spec = load(&input)?;
            let cfg = EquivConfig {
                lhs_abstraction: equiv.lhs_abstract.0,
                rhs_abstraction: equiv.rhs_abstract.0,
                divergence_sensitive: equiv.divergence_sensitive,
                ..Default::default()
            };
            let outcome = check_thread(spec.handle(), &proto.config(), &cfg).map_err(compose_failure)?;
            let text = if json {
                outcome.verdict.to_json_string() + "\n"
            } else {
                format!(
                    "{}\nthread: {} states, protocol: {} states\n",
                    outcome.verdict, outcome.extraction.states, outcome.composition.states
                )
            };
            emit(out.as_deref(), &text, stdout)?;
            Ok(if outcome.verdict.equivalent { EXIT_OK } else { EXIT_NEGATIVE })
        }
        Command::Explore {
            input,
            proto,
            fail_on_deadlock,
            out,
        } => {
            let spec = load(&input)?;
            let ex = explore(spec.handle(), &proto.config()).map_err(compose_failure)?;
            let report = DeadlockReport::new(&ex.lts);
            let mut text = String::new();
            let stats = ex.lts.stats();
            let r = &ex.report;
            let _ = writeln!(text, "states: {}", stats.states);
            let _ = writeln!(text, "transitions: {}", stats.transitions);
            let _ = writeln!(text, "terminating: {}", stats.terminating);
            let _ = writeln!(text, "deadlocks: {}", report.unexplained.len());
            let _ = writeln!(text, "deadlocks after i: {}", report.after_inaction.len());
            let _ = writeln!(
                text,
                "invariants: ok over {} states (max unacked {}, max pending acks {}, max message ack {}, max prefix {})",
                r.states_checked, r.max_generator_unacked, r.max_pending_acks, r.max_message_ack, r.max_frontier_prefix
            );
            for &s in &report.unexplained {
                let _ = writeln!(text, "deadlock s{s}: {}", ex.describe(s));
            }
            for &s in &report.after_inaction {
                let _ = writeln!(text, "deadlock after i s{s}: {}", ex.describe(s));
            }
            emit(out.as_deref(), &text, stdout)?;
            Ok(if fail_on_deadlock && !report.unexplained.is_empty() {
                EXIT_NEGATIVE
            } else {
                EXIT_OK
            })
        }
        Command::Simulate { input, sim } => {
            let spec = load(&input)?;
            let base = SimConfig {
                environment: sim.env.clone(),
                latency_msg: sim.latency_msg,
                latency_reply: sim.latency_reply,
                exec_time: sim.exec_time,
                horizon: sim.horizon,
                capacity: sim.capacity_msg,
                ..Default::default()
            };
            let name = input
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            let rows = sweep(&name, spec.handle(), &base, &sim.maxlen, &sim.strategy, &sim.seed)
                .map_err(|e| usage(e.to_string()))?;
            if let Some(log) = &sim.log {
                if rows.len() != 1 {
                    return Err(usage("--log needs exactly one maxlen, strategy and seed"));
                }
                let cfg = SimConfig {
                    maxlen: sim.maxlen[0],
                    strategy: sim.strategy[0],
                    seed: sim.seed[0],
                    ..base
                };
                let run = simulate(spec.handle(), &cfg).map_err(|e| usage(e.to_string()))?;
                emit(Some(log), &run.log_text(), stdout)?;
            }
            let mut buf = Vec::new();
            write_csv(&rows, &mut buf).map_err(|e| usage(e.to_string()))?;
            emit(sim.csv.as_deref(), &String::from_utf8_lossy(&buf), stdout)?;
            Ok(EXIT_OK)
        }
    }
}

fn compose_failure(e: crate::composition::ComposeError) -> Failure {
    use crate::composition::ComposeError;
    let code = match e {
        ComposeError::Violation { .. } => EXIT_NEGATIVE,
        ComposeError::StateBound { .. } => EXIT_USAGE,
    };
    Failure {
        code,
        message: e.to_string(),
    }
}

/// Deadlocks of a composed system after termination normalization, split
/// by whether the thread's own `i` step precedes them.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DeadlockReport {
    pub unexplained: Vec<usize>,
    pub after_inaction: Vec<usize>,
}

impl DeadlockReport {
    /// Redirecting `stp` to a terminating sink leaves a state stuck
    /// exactly when it is reachable without `stp` and stuck here, so the
    /// report is read off the original numbering.
    pub fn new(lts: &Lts) -> DeadlockReport {
        let reach = |skip: &[Label]| {
            let out = lts.outgoing();
            let mut seen = vec![false; lts.num_states()];
            let mut stack = vec![lts.initial()];
            seen[lts.initial()] = true;
            while let Some(s) = stack.pop() {
                for &(l, t) in &out[s] {
                    if !skip.contains(lts.label(l)) && !seen[t] {
                        seen[t] = true;
                        stack.push(t);
                    }
                }
            }
            seen
        };
        let no_stp = reach(&[Label::Stp]);
        let no_stp_no_i = reach(&[Label::Stp, Label::IAct]);
        let mut report = DeadlockReport::default();
        for s in lts.deadlock_states() {
            if no_stp_no_i[s] {
                report.unexplained.push(s);
            } else if no_stp[s] {
                report.after_inaction.push(s);
            }
        }
        report
    }
}
