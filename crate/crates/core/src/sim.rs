//! Discrete-event simulation of the protocol with transmission and
//! execution latencies.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::bta::{Instr, ThreadHandle};
use crate::lts::Label;
use crate::protocol::{
    updcm, updpr, ExecUnitState, Generator, GeneratorState, InstructionMessage, MessageFate, Mode, ProtocolConfig,
    ProtocolViolation,
};
use crate::strategy::SelectionStrategy;

/// Source of the replies to basic actions.
#[derive(Clone, Debug, PartialEq)]
pub enum Environment {
    AllTrue,
    AllFalse,
    /// Replies in order, repeated cyclically.
    Fixed(Vec<bool>),
    /// Fair coin from the configured seed.
    Random,
    /// `true` with the action's probability, from the configured seed.
    Prob,
}

impl fmt::Display for Environment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Environment::AllTrue => f.write_str("all-true"),
            Environment::AllFalse => f.write_str("all-false"),
            Environment::Fixed(seq) => {
                f.write_str("fixed:")?;
                for &r in seq {
                    f.write_str(if r { "T" } else { "F" })?;
                }
                Ok(())
            }
            Environment::Random => f.write_str("random"),
            Environment::Prob => f.write_str("prob"),
        }
    }
}

impl FromStr for Environment {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "all-true" | "true" => Ok(Environment::AllTrue),
            "all-false" | "false" => Ok(Environment::AllFalse),
            "random" => Ok(Environment::Random),
            "prob" => Ok(Environment::Prob),
            _ => {
                let seq = s
                    .strip_prefix("fixed:")
                    .ok_or_else(|| format!("unknown environment `{s}`"))?;
                let replies = seq
                    .chars()
                    .map(|c| match c {
                        'T' => Ok(true),
                        'F' => Ok(false),
                        other => Err(format!("bad reply `{other}` in `{s}`")),
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                if replies.is_empty() {
                    return Err("fixed environment needs at least one reply".into());
                }
                Ok(Environment::Fixed(replies))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    pub maxlen: u32,
    pub strategy: SelectionStrategy,
    pub latency_msg: u64,
    pub latency_reply: u64,
    pub exec_time: u64,
    pub environment: Environment,
    pub seed: u64,
    /// Maximum number of processed events.
    pub horizon: usize,
    /// Messages in transit at once; `None` means `maxlen + 2`.
    pub capacity: Option<usize>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            maxlen: 1,
            strategy: SelectionStrategy::BREADTH,
            latency_msg: 4,
            latency_reply: 4,
            exec_time: 1,
            environment: Environment::AllTrue,
            seed: 0,
            horizon: 100_000,
            capacity: None,
        }
    }
}

impl SimConfig {
    fn capacity(&self) -> usize {
        self.capacity.unwrap_or(self.maxlen as usize + 2)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Terminated,
    Dead,
    /// The horizon was reached first.
    Horizon,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Metrics {
    pub busy: u64,
    pub idle: u64,
    pub total: u64,
    pub utilization: f64,
    pub msgs: u64,
    pub replies: u64,
    /// Messages found stale on arrival plus stored entries pruned by a
    /// reply.
    pub discarded: u64,
    /// Basic actions executed.
    pub steps: u64,
    pub outcome: Outcome,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SimEventKind {
    Send(String),
    Arrive { msg: String, stale: bool },
    Start(String),
    Complete { action: String, reply: bool, pruned: usize },
    ReplyArrive(bool),
    Stop,
    Dead,
    GeneratorDone,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SimEvent {
    pub time: u64,
    pub kind: SimEventKind,
}

impl fmt::Display for SimEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ", self.time)?;
        let b = |r: bool| if r { "T" } else { "F" };
        match &self.kind {
            SimEventKind::Send(m) => write!(f, "send {m}"),
            SimEventKind::Arrive { msg, stale } => {
                write!(f, "arrive {msg}{}", if *stale { " stale" } else { "" })
            }
            SimEventKind::Start(a) => write!(f, "start {a}"),
            SimEventKind::Complete { action, reply, pruned } => {
                write!(f, "complete {action} reply {} pruned {pruned}", b(*reply))
            }
            SimEventKind::ReplyArrive(r) => write!(f, "reply {}", b(*r)),
            SimEventKind::Stop => f.write_str("stop"),
            SimEventKind::Dead => f.write_str("dead"),
            SimEventKind::GeneratorDone => f.write_str("generator done"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SimRun {
    pub metrics: Metrics,
    pub log: Vec<SimEvent>,
    /// Visible actions of the run in the labels of the composed system:
    /// requests, replies from the services, `stp` and `i`.
    pub visible: Vec<Label>,
}

impl SimRun {
    pub fn log_text(&self) -> String {
        self.log.iter().map(|e| format!("{e}\n")).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("degenerate run: horizon of {horizon} events exhausted before any instruction was executed")]
    Degenerate { horizon: usize },
    #[error("protocol violation during simulation: {0}")]
    Protocol(#[from] ProtocolViolation),
    #[error("horizon must be positive")]
    ZeroHorizon,
    #[error("execution time must be positive")]
    ZeroExecTime,
}

// tie order at equal times: arrivals, completions, replies
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum Kind {
    MessageArrival,
    ExecCompletion,
    ReplyArrival,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
struct Key {
    time: u64,
    kind: Kind,
    seq: u64,
}

struct Sim<'a> {
    cfg: &'a SimConfig,
    thread: ThreadHandle<'a>,
    gen: Generator<'a>,
    gen_state: Option<GeneratorState>,
    eu: ExecUnitState,
    /// Running instruction and its start time.
    running: Option<(Instr, u64)>,
    in_transit: VecDeque<InstructionMessage>,
    replies_in_transit: VecDeque<bool>,
    queue: BinaryHeap<Reverse<Key>>,
    seq: u64,
    rng: ChaCha8Rng,
    env_pos: usize,
    log: Vec<SimEvent>,
    visible: Vec<Label>,
    metrics: Metrics,
    finished: Option<Outcome>,
    now: u64,
}

impl<'a> Sim<'a> {
    fn schedule(&mut self, time: u64, kind: Kind) {
        self.seq += 1;
        self.queue.push(Reverse(Key {
            time,
            kind,
            seq: self.seq,
        }));
    }

    fn event(&mut self, kind: SimEventKind) {
        self.log.push(SimEvent { time: self.now, kind });
    }

    fn reply_for(&mut self, instr: Instr) -> bool {
        match &self.cfg.environment {
            Environment::AllTrue => true,
            Environment::AllFalse => false,
            Environment::Fixed(seq) => {
                let r = seq[self.env_pos % seq.len()];
                self.env_pos += 1;
                r
            }
            Environment::Random => self.rng.random_bool(0.5),
            Environment::Prob => {
                let p = match instr {
                    Instr::Basic(a) => self.thread.spec.probability(a),
                    _ => 0.5,
                };
                self.rng.random_bool(p.clamp(0.0, 1.0))
            }
        }
    }

    /// Sends as long as something is selectable and the channel has room.
    fn generator_sends(&mut self) -> Result<(), SimError> {
        loop {
            let Some(state) = &self.gen_state else {
                return Ok(());
            };
            if state.frontier.is_empty() {
                self.gen_state = None;
                self.event(SimEventKind::GeneratorDone);
                return Ok(());
            }
            if self.in_transit.len() >= self.cfg.capacity() {
                return Ok(());
            }
            let Some(&i) = self.gen.select(state).first() else {
                return Ok(());
            };
            let entry = state.frontier[i].clone();
            let msg = self.gen.message_for(&entry, state);
            let next = self.gen.updpm(&entry, state)?;
            self.gen_state = Some(next);
            self.metrics.msgs += 1;
            let text = msg_text(&msg, self.thread);
            self.event(SimEventKind::Send(text));
            self.in_transit.push_back(msg);
            self.schedule(self.now + self.cfg.latency_msg, Kind::MessageArrival);
        }
    }

    /// Starts the due instruction if the unit is free.
    fn try_execute(&mut self) {
        if self.running.is_some() || self.finished.is_some() {
            return;
        }
        let Some(&(_, instr)) = self.eu.store.iter().find(|(u, _)| u.is_empty()) else {
            return;
        };
        let spec = self.thread.spec;
        match instr {
            Instr::Basic(a) => {
                self.running = Some((instr, self.now));
                self.event(SimEventKind::Start(spec.action(a).to_string()));
                self.visible.push(Label::snd_f(spec.action(a)));
                self.schedule(self.now + self.cfg.exec_time, Kind::ExecCompletion);
            }
            Instr::Stop => {
                self.event(SimEventKind::Stop);
                self.visible.push(Label::Stp);
                self.finished = Some(Outcome::Terminated);
            }
            Instr::Dead => {
                self.event(SimEventKind::Dead);
                self.visible.push(Label::IAct);
                self.finished = Some(Outcome::Dead);
            }
        }
    }

    fn handle(&mut self, key: Key) -> Result<(), SimError> {
        let pcfg = self.gen.config().clone();
        match key.kind {
            Kind::MessageArrival => {
                let msg = self.in_transit.pop_front().expect("arrival without message");
                let (next, fate) = updcm(&msg, &self.eu, &pcfg)?;
                self.eu = next;
                let stale = fate == MessageFate::Stale;
                if stale {
                    self.metrics.discarded += 1;
                }
                let text = msg_text(&msg, self.thread);
                self.event(SimEventKind::Arrive { msg: text, stale });
                self.try_execute();
            }
            Kind::ExecCompletion => {
                let (instr, start) = self.running.take().expect("completion without execution");
                let reply = self.reply_for(instr);
                let (next, pruned) = updpr(reply, &self.eu, &pcfg)?;
                self.eu = next;
                self.metrics.busy += self.now - start;
                self.metrics.steps += 1;
                self.metrics.discarded += pruned as u64;
                self.metrics.replies += 1;
                let Instr::Basic(a) = instr else {
                    unreachable!("only basic actions run")
                };
                let action = self.thread.spec.action(a);
                self.visible.push(Label::rcv_f(&action.focus, reply));
                self.event(SimEventKind::Complete {
                    action: action.to_string(),
                    reply,
                    pruned,
                });
                self.replies_in_transit.push_back(reply);
                self.schedule(self.now + self.cfg.latency_reply, Kind::ReplyArrival);
                self.try_execute();
            }
            Kind::ReplyArrival => {
                let reply = self.replies_in_transit.pop_front().expect("reply without send");
                self.event(SimEventKind::ReplyArrive(reply));
                if let Some(state) = &self.gen_state {
                    self.gen_state = Some(self.gen.updcr(reply, state)?);
                }
            }
        }
        self.generator_sends()
    }
}

fn msg_text(msg: &InstructionMessage, thread: ThreadHandle<'_>) -> String {
    format!("<{},{},{}>", msg.ack, msg.prefix, thread.spec.ext_action(msg.instr))
}

/// Runs one simulation. The generator sends eagerly and computes in zero
/// time; only transmission and execution take time.
pub fn simulate(thread: ThreadHandle<'_>, cfg: &SimConfig) -> Result<SimRun, SimError> {
    if cfg.horizon == 0 {
        return Err(SimError::ZeroHorizon);
    }
    if cfg.exec_time == 0 {
        return Err(SimError::ZeroExecTime);
    }
    let pcfg = ProtocolConfig {
        maxlen: cfg.maxlen,
        mode: Mode::Safe,
        strategy: cfg.strategy,
    };
    let gen = Generator::new(thread.spec, pcfg);
    let mut sim = Sim {
        cfg,
        thread,
        gen_state: Some(gen.initial(thread.node)),
        gen,
        eu: ExecUnitState::new(),
        running: None,
        in_transit: VecDeque::new(),
        replies_in_transit: VecDeque::new(),
        queue: BinaryHeap::new(),
        seq: 0,
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        env_pos: 0,
        log: Vec::new(),
        visible: Vec::new(),
        metrics: Metrics {
            busy: 0,
            idle: 0,
            total: 0,
            utilization: 0.0,
            msgs: 0,
            replies: 0,
            discarded: 0,
            steps: 0,
            outcome: Outcome::Horizon,
        },
        finished: None,
        now: 0,
    };
    sim.generator_sends()?;
    let mut processed = 0;
    while sim.finished.is_none() {
        if processed == cfg.horizon {
            break;
        }
        let Some(Reverse(key)) = sim.queue.pop() else {
            break;
        };
        sim.now = key.time;
        sim.handle(key)?;
        processed += 1;
    }
    let executed_any = sim.metrics.steps > 0 || sim.finished.is_some();
    if !executed_any {
        return Err(SimError::Degenerate { horizon: cfg.horizon });
    }
    let mut m = sim.metrics;
    // an action cut off by the horizon counts as busy up to now
    if let Some((_, start)) = sim.running {
        m.busy += sim.now - start;
    }
    m.total = sim.now;
    m.idle = m.total - m.busy;
    m.utilization = if m.total == 0 { 0.0 } else { m.busy as f64 / m.total as f64 };
    m.outcome = sim.finished.unwrap_or(Outcome::Horizon);
    Ok(SimRun {
        metrics: m,
        log: sim.log,
        visible: sim.visible,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub thread: String,
    pub maxlen: u32,
    pub strategy: SelectionStrategy,
    pub seed: u64,
    pub env: Environment,
    pub metrics: Metrics,
}

/// One row per `(maxlen, strategy, seed)`, in that nesting order.
pub fn sweep(
    name: &str,
    thread: ThreadHandle<'_>,
    base: &SimConfig,
    maxlens: &[u32],
    strategies: &[SelectionStrategy],
    seeds: &[u64],
) -> Result<Vec<SweepRow>, SimError> {
    let mut rows = Vec::new();
    for &maxlen in maxlens {
        for &strategy in strategies {
            for &seed in seeds {
                let cfg = SimConfig {
                    maxlen,
                    strategy,
                    seed,
                    ..base.clone()
                };
                let run = simulate(thread, &cfg)?;
                rows.push(SweepRow {
                    thread: name.to_string(),
                    maxlen,
                    strategy,
                    seed,
                    env: cfg.environment.clone(),
                    metrics: run.metrics,
                });
            }
        }
    }
    Ok(rows)
}

pub const CSV_HEADER: [&str; 12] = [
    "thread",
    "maxlen",
    "strategy",
    "seed",
    "env",
    "busy",
    "idle",
    "total",
    "utilization",
    "msgs",
    "replies",
    "discarded",
];

pub fn write_csv<W: Write>(rows: &[SweepRow], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in rows {
        let m = &r.metrics;
        w.write_record([
            r.thread.clone(),
            r.maxlen.to_string(),
            r.strategy.to_string(),
            r.seed.to_string(),
            r.env.to_string(),
            m.busy.to_string(),
            m.idle.to_string(),
            m.total.to_string(),
            format!("{:.6}", m.utilization),
            m.msgs.to_string(),
            m.replies.to_string(),
            m.discarded.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn csv_string(rows: &[SweepRow]) -> String {
    let mut buf = Vec::new();
    write_csv(rows, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("csv is utf-8")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bta::parse_spec;
    use crate::corpus::{linear_thread, skewed_loop};

    #[test]
    fn stop_thread_runs_no_action() {
        let spec = parse_spec("X = S").unwrap();
        let run = simulate(spec.handle(), &SimConfig::default()).unwrap();
        let m = &run.metrics;
        assert_eq!(m.busy, 0);
        assert_eq!(m.msgs, 1);
        assert_eq!(m.outcome, Outcome::Terminated);
        assert_eq!(m.total, 4);
        assert_eq!(run.visible, vec![Label::Stp]);
    }

    #[test]
    fn ping_pong_idle_time() {
        let spec = linear_thread(8);
        let cfg = SimConfig {
            maxlen: 0,
            strategy: SelectionStrategy::BREADTH.with_wildcard(true),
            ..Default::default()
        };
        let m = simulate(spec.handle(), &cfg).unwrap().metrics;
        // first message 4, then per step 1 busy + 8 round trip
        assert_eq!(m.steps, 8);
        assert_eq!(m.busy, 8);
        assert_eq!(m.total, 4 + 8 * 9);
        assert_eq!(m.busy + m.idle, m.total);
    }

    #[test]
    fn run_ahead_overlaps_latency() {
        let spec = linear_thread(8);
        let base = SimConfig {
            strategy: SelectionStrategy::BREADTH.with_wildcard(true),
            ..Default::default()
        };
        let u = |maxlen| {
            simulate(spec.handle(), &SimConfig { maxlen, ..base.clone() })
                .unwrap()
                .metrics
                .utilization
        };
        assert!(u(2) > u(0));
    }

    #[test]
    fn deterministic_csv() {
        let spec = skewed_loop(0.9);
        let base = SimConfig {
            environment: Environment::Prob,
            horizon: 2_000,
            ..Default::default()
        };
        let strategies = [SelectionStrategy::BREADTH, SelectionStrategy::PROB95];
        let a = sweep("loop", spec.handle(), &base, &[0, 1, 2], &strategies, &[1, 2]).unwrap();
        let b = sweep("loop", spec.handle(), &base, &[0, 1, 2], &strategies, &[1, 2]).unwrap();
        assert_eq!(a.len(), 12);
        assert_eq!(csv_string(&a), csv_string(&b));
        assert!(csv_string(&a).starts_with(
            "thread,maxlen,strategy,seed,env,busy,idle,total,utilization,msgs,replies,discarded\n"
        ));
        assert!(sweep("loop", spec.handle(), &base, &[], &strategies, &[1]).unwrap().is_empty());
    }

    #[test]
    fn accounting_holds() {
        let spec = parse_spec("X = f.m ? Y : X\nY = g.n ? X : Z\nZ = S").unwrap();
        for seed in 0..20 {
            for maxlen in 0..4 {
                let cfg = SimConfig {
                    maxlen,
                    environment: Environment::Random,
                    seed,
                    horizon: 500,
                    ..Default::default()
                };
                let m = simulate(spec.handle(), &cfg).unwrap().metrics;
                assert_eq!(m.busy + m.idle, m.total);
                assert!(m.discarded <= m.msgs);
                assert!(m.msgs >= m.steps);
                assert!((0.0..=1.0).contains(&m.utilization));
            }
        }
    }

    #[test]
    fn degenerate_horizon() {
        let spec = parse_spec("X = f.m ? X : X").unwrap();
        let cfg = SimConfig {
            horizon: 1,
            latency_msg: 10,
            ..Default::default()
        };
        // the only event in reach is the first arrival, which starts but
        // does not finish an action
        assert_eq!(
            simulate(spec.handle(), &cfg).unwrap_err(),
            SimError::Degenerate { horizon: 1 }
        );
        let cfg = SimConfig {
            horizon: 0,
            ..Default::default()
        };
        assert_eq!(simulate(spec.handle(), &cfg).unwrap_err(), SimError::ZeroHorizon);
    }

    #[test]
    fn environment_names() {
        for s in ["all-true", "all-false", "random", "prob", "fixed:TFT"] {
            assert_eq!(s.parse::<Environment>().unwrap().to_string(), s);
        }
        assert!("fixed:".parse::<Environment>().is_err());
        assert!("sometimes".parse::<Environment>().is_err());
    }
}
