//! Explicit-state product of generator, channels and execution unit under
//! the communication function, with encapsulation and abstraction.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::hash::BuildHasherDefault;

use indexmap::IndexSet;
use rustc_hash::{FxHashMap, FxHasher};
use serde::Serialize;
use thiserror::Error;

use crate::bta::{Instr, ThreadHandle, ThreadSpec};
use crate::lts::{Label, LabelKind, Lts};
use crate::protocol::{
    check_exec_unit, check_generator, eu_steps, ChannelState, EuSlot, ExecUnitState, GenSlot, Generator,
    InstructionMessage, Mode, Phase, ProtoAction, ProtocolConfig, ProtocolViolation,
};
use crate::strategy::SelectionStrategy;

pub const DEFAULT_STATE_BOUND: usize = 1_000_000;

#[derive(Clone, Debug, PartialEq)]
pub struct CompositionConfig {
    pub maxlen: u32,
    pub capacity_msg: usize,
    pub capacity_reply: usize,
    pub mode: Mode,
    pub strategy: SelectionStrategy,
    /// Kinds renamed to tau in the product.
    pub abstraction: BTreeSet<LabelKind>,
    pub state_bound: usize,
}

impl Default for CompositionConfig {
    fn default() -> Self {
        CompositionConfig {
            maxlen: 1,
            capacity_msg: 1,
            capacity_reply: 1,
            mode: Mode::Safe,
            strategy: SelectionStrategy::BREADTH,
            abstraction: BTreeSet::from([LabelKind::JAct]),
            state_bound: DEFAULT_STATE_BOUND,
        }
    }
}

impl CompositionConfig {
    pub fn protocol(&self) -> ProtocolConfig {
        ProtocolConfig {
            maxlen: self.maxlen,
            mode: self.mode,
            strategy: self.strategy,
        }
    }
}

/// State of `ISG ∥ CHM ∥ CHR ∥ ISEU`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SystemState {
    pub gen: GenSlot,
    pub chm: ChannelState<InstructionMessage>,
    pub chr: ChannelState<bool>,
    pub eu: EuSlot,
}

impl SystemState {
    pub fn is_terminated(&self) -> bool {
        self.gen == GenSlot::Terminated
            && self.chm.is_empty()
            && self.chr.is_empty()
            && self.eu == EuSlot::Terminated
    }
}

impl SystemState {
    /// Stable one-line summary with the spec's variable and action names,
    /// as used in traces: `isg=(n,{(prefix,X),..}) chm=[..] chr=[..] iseu=(n,{(prefix,f.m),..},phase)`.
    pub fn render(&self, spec: &ThreadSpec) -> String {
        let instr = |i: Instr| match i {
            Instr::Basic(a) => spec.action(a).to_string(),
            Instr::Stop => "S".to_string(),
            Instr::Dead => "D".to_string(),
        };
        let mut out = String::new();
        match &self.gen {
            GenSlot::Active(g) => {
                let _ = write!(out, "isg=({},{{", g.unacked);
                for (i, e) in g.frontier.iter().enumerate() {
                    let sep = if i > 0 { "," } else { "" };
                    let _ = write!(out, "{sep}({},{})", e.prefix, spec.node_name(e.node));
                }
                out.push_str("})");
            }
            GenSlot::Terminated => out.push_str("isg=done"),
        }
        out.push_str(" chm=[");
        for (i, m) in self.chm.iter().enumerate() {
            let sep = if i > 0 { "," } else { "" };
            let _ = write!(out, "{sep}<{},{},{}>", m.ack, m.prefix, instr(m.instr));
        }
        out.push_str("] chr=[");
        for r in self.chr.iter() {
            out.push(if *r { 'T' } else { 'F' });
        }
        out.push_str("] ");
        match &self.eu {
            EuSlot::Running(e) => {
                let _ = write!(out, "iseu=({},{{", e.pending_acks());
                for (i, (u, a)) in e.store.iter().enumerate() {
                    let sep = if i > 0 { "," } else { "" };
                    let _ = write!(out, "{sep}({u},{})", instr(*a));
                }
                let _ = match e.phase {
                    Phase::Idle => write!(out, "}},idle)"),
                    Phase::Awaiting(a) => write!(out, "}},awaiting {})", spec.action(a)),
                    Phase::Replying(r) => write!(out, "}},replying {})", if r { 'T' } else { 'F' }),
                };
            }
            EuSlot::Terminated => out.push_str("iseu=stopped"),
            EuSlot::Dead => out.push_str("iseu=dead"),
        }
        out
    }
}

/// Communication function: a send and a receive of the same datum on the
/// same channel yield `j`; every other pair is blocked.
pub fn gamma(a: &Label, b: &Label) -> Option<Label> {
    let hit = match (a, b) {
        (Label::SndMsg { channel: c, msg: m }, Label::RcvMsg { channel: d, msg: n })
        | (Label::RcvMsg { channel: d, msg: n }, Label::SndMsg { channel: c, msg: m }) => c == d && m == n,
        (Label::SndReply { channel: c, reply: r }, Label::RcvReply { channel: d, reply: s })
        | (Label::RcvReply { channel: d, reply: s }, Label::SndReply { channel: c, reply: r }) => {
            c == d && r == s
        }
        _ => false,
    };
    hit.then_some(Label::JAct)
}

#[derive(Debug, Clone, Error)]
pub enum ComposeError {
    #[error("exploration exceeded the state bound of {bound} states")]
    StateBound { bound: usize },
    #[error("{violation}\n{trace}")]
    Violation {
        violation: ProtocolViolation,
        /// Path to the offending state in the trace text format.
        trace: String,
    },
}

/// Extremes observed over every explored state.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct InvariantReport {
    pub states_checked: usize,
    pub max_generator_unacked: u32,
    pub max_pending_acks: u32,
    pub max_message_ack: u32,
    pub max_frontier_prefix: usize,
}

const UNSET: u32 = u32::MAX;

type FxIndexSet<T> = IndexSet<T, BuildHasherDefault<FxHasher>>;

/// Component states seen during exploration, numbered in order of first
/// appearance. A product state is a quadruple of these numbers.
#[derive(Clone, Debug, Default)]
struct Tables {
    gens: FxIndexSet<GenSlot>,
    eus: FxIndexSet<EuSlot>,
    msgs: FxIndexSet<InstructionMessage>,
    chms: FxIndexSet<ChannelState<u32>>,
    chrs: FxIndexSet<ChannelState<bool>>,
}

impl Tables {
    fn state(&self, [g, m, r, e]: [u32; 4]) -> SystemState {
        let ids = &self.chms[m as usize];
        let mut chm = ChannelState::new(ids.capacity());
        for &id in ids.iter() {
            chm = chm.accept(self.msgs[id as usize].clone()).expect("same capacity");
        }
        SystemState {
            gen: self.gens[g as usize].clone(),
            chm,
            chr: self.chrs[r as usize].clone(),
            eu: self.eus[e as usize].clone(),
        }
    }
}

/// Output of [`explore`]: the LTS, whose state `i` is [`Exploration::state`]`(i)`.
#[derive(Clone, Debug)]
pub struct Exploration {
    pub lts: Lts,
    pub report: InvariantReport,
    spec: ThreadSpec,
    tables: Tables,
    packed: Vec<[u32; 4]>,
}

impl Exploration {
    pub fn num_states(&self) -> usize {
        self.packed.len()
    }

    pub fn state(&self, i: usize) -> SystemState {
        self.tables.state(self.packed[i])
    }

    /// [`SystemState::render`] of state `i`.
    pub fn describe(&self, i: usize) -> String {
        self.state(i).render(&self.spec)
    }
}

pub fn compose(thread: ThreadHandle<'_>, cfg: &CompositionConfig) -> Result<Lts, ComposeError> {
    explore(thread, cfg).map(|e| e.lts)
}

#[derive(Clone, Copy)]
enum GenMove {
    Send { msg: u32, next: u32 },
    Receive { reply: bool, next: u32 },
    Lone { label: u32, next: u32 },
}

#[derive(Clone, Copy)]
enum EuMove {
    Take { next: u32 },
    Reply { reply: bool, next: u32 },
    Lone { label: u32, next: u32 },
}

struct Explorer<'a> {
    thread: ThreadHandle<'a>,
    cfg: &'a CompositionConfig,
    pcfg: ProtocolConfig,
    gen: Generator<'a>,
    t: Tables,
    lts: Lts,
    labels: FxHashMap<ProtoAction, u32>,
    report: InvariantReport,
    // per component id
    gen_unacked: Vec<Option<u32>>,
    eu_pending: Vec<Option<u32>>,
    chm_acks: Vec<u32>,
    chm_rest: Vec<u32>,
    chr_rest: Vec<u32>,
    chm_push: FxHashMap<(u32, u32), u32>,
    chr_push: FxHashMap<(u32, bool), u32>,
    gen_memo: FxHashMap<(u32, Option<bool>, bool), Vec<GenMove>>,
    eu_memo: FxHashMap<(u32, Option<u32>), Vec<EuMove>>,
}

impl<'a> Explorer<'a> {
    fn label(&mut self, a: ProtoAction) -> u32 {
        if let Some(&id) = self.labels.get(&a) {
            return id;
        }
        let l = a.to_label(self.thread.spec);
        let hidden = l.kind().is_some_and(|k| self.cfg.abstraction.contains(&k));
        let id = self.lts.label_id(if hidden { Label::Tau } else { l }) as u32;
        self.labels.insert(a, id);
        id
    }

    fn gen_id(&mut self, slot: GenSlot) -> Result<u32, ProtocolViolation> {
        let (id, fresh) = self.t.gens.insert_full(slot);
        if fresh {
            let unacked = match &self.t.gens[id] {
                GenSlot::Active(g) => {
                    check_generator(g, &self.pcfg)?;
                    let r = &mut self.report;
                    r.max_generator_unacked = r.max_generator_unacked.max(g.unacked);
                    if let Some(l) = g.frontier.iter().map(|e| e.len()).max() {
                        r.max_frontier_prefix = r.max_frontier_prefix.max(l);
                    }
                    Some(g.unacked)
                }
                GenSlot::Terminated => None,
            };
            self.gen_unacked.push(unacked);
        }
        Ok(id as u32)
    }

    fn eu_id(&mut self, slot: EuSlot) -> Result<u32, ProtocolViolation> {
        let (id, fresh) = self.t.eus.insert_full(slot);
        if fresh {
            let pending = match &self.t.eus[id] {
                EuSlot::Running(e) => {
                    check_exec_unit(e, &self.pcfg)?;
                    self.report.max_pending_acks = self.report.max_pending_acks.max(e.pending_acks());
                    Some(e.pending_acks())
                }
                _ => None,
            };
            self.eu_pending.push(pending);
        }
        Ok(id as u32)
    }

    fn msg_id(&mut self, msg: InstructionMessage) -> Result<u32, ProtocolViolation> {
        if msg.ack > self.pcfg.counter_bound() || msg.prefix.len() > self.pcfg.maxlen as usize {
            return Err(ProtocolViolation::Invariant(format!(
                "message <{},{}> outside the message space",
                msg.ack, msg.prefix
            )));
        }
        self.report.max_message_ack = self.report.max_message_ack.max(msg.ack);
        Ok(self.t.msgs.insert_full(msg).0 as u32)
    }

    fn chm_id(&mut self, ch: ChannelState<u32>) -> u32 {
        let (id, fresh) = self.t.chms.insert_full(ch);
        if fresh {
            let acks = self.t.chms[id].iter().map(|&m| self.t.msgs[m as usize].ack).sum();
            self.chm_acks.push(acks);
            self.chm_rest.push(UNSET);
        }
        id as u32
    }

    fn chr_id(&mut self, ch: ChannelState<bool>) -> u32 {
        let (id, fresh) = self.t.chrs.insert_full(ch);
        if fresh {
            self.chr_rest.push(UNSET);
        }
        id as u32
    }

    /// Message channel `m` after accepting message `msg`, if not full.
    fn chm_accept(&mut self, m: u32, msg: u32) -> Option<u32> {
        if let Some(&id) = self.chm_push.get(&(m, msg)) {
            return Some(id);
        }
        let ch = self.t.chms[m as usize].accept(msg)?;
        let id = self.chm_id(ch);
        self.chm_push.insert((m, msg), id);
        Some(id)
    }

    /// Message channel `m` without its head; `m` must be nonempty.
    fn chm_deliver(&mut self, m: u32) -> u32 {
        if self.chm_rest[m as usize] == UNSET {
            let (_, rest) = self.t.chms[m as usize].deliver().expect("nonempty channel");
            let id = self.chm_id(rest);
            self.chm_rest[m as usize] = id;
        }
        self.chm_rest[m as usize]
    }

    fn chr_accept(&mut self, r: u32, reply: bool) -> Option<u32> {
        if let Some(&id) = self.chr_push.get(&(r, reply)) {
            return Some(id);
        }
        let ch = self.t.chrs[r as usize].accept(reply)?;
        let id = self.chr_id(ch);
        self.chr_push.insert((r, reply), id);
        Some(id)
    }

    fn chr_deliver(&mut self, r: u32) -> u32 {
        if self.chr_rest[r as usize] == UNSET {
            let (_, rest) = self.t.chrs[r as usize].deliver().expect("nonempty channel");
            let id = self.chr_id(rest);
            self.chr_rest[r as usize] = id;
        }
        self.chr_rest[r as usize]
    }

    fn gen_moves(&mut self, g: u32, offered: Option<bool>, may_send: bool) -> Result<Vec<GenMove>, ProtocolViolation> {
        if let Some(m) = self.gen_memo.get(&(g, offered, may_send)) {
            return Ok(m.clone());
        }
        let steps = self.gen.enabled_steps(&self.t.gens[g as usize], offered, may_send)?;
        let mut moves = Vec::with_capacity(steps.len());
        for (a, slot) in steps {
            let next = self.gen_id(slot)?;
            moves.push(match a {
                ProtoAction::SndMsg(_, m) => GenMove::Send {
                    msg: self.msg_id(m)?,
                    next,
                },
                ProtoAction::RcvReply(_, reply) => GenMove::Receive { reply, next },
                other => GenMove::Lone {
                    label: self.label(other),
                    next,
                },
            });
        }
        self.gen_memo.insert((g, offered, may_send), moves.clone());
        Ok(moves)
    }

    fn eu_moves(&mut self, e: u32, offered: Option<u32>) -> Result<Vec<EuMove>, ProtocolViolation> {
        if let Some(m) = self.eu_memo.get(&(e, offered)) {
            return Ok(m.clone());
        }
        let msg = offered.map(|id| self.t.msgs[id as usize].clone());
        let steps = eu_steps(&self.t.eus[e as usize], msg.as_ref(), &self.pcfg)?;
        let mut moves = Vec::with_capacity(steps.len());
        for (a, slot) in steps {
            let next = self.eu_id(slot)?;
            moves.push(match a {
                ProtoAction::RcvMsg(..) => EuMove::Take { next },
                ProtoAction::SndReply(_, reply) => EuMove::Reply { reply, next },
                other => EuMove::Lone {
                    label: self.label(other),
                    next,
                },
            });
        }
        self.eu_memo.insert((e, offered), moves.clone());
        Ok(moves)
    }

    /// Successors of a product state: lone steps of components outside
    /// the encapsulated set, then handshakes on channels 1 to 4. `None`
    /// labels a handshake.
    fn successors(&mut self, [g, m, r, e]: [u32; 4]) -> Result<Vec<(Option<u32>, [u32; 4])>, ProtocolViolation> {
        let chm = &self.t.chms[m as usize];
        let (chm_head, chm_full) = (chm.head().copied(), chm.is_full());
        let chr_head = self.t.chrs[r as usize].head().copied();
        let gen_moves = self.gen_moves(g, chr_head, !chm_full)?;
        let eu_moves = self.eu_moves(e, chm_head)?;
        let mut out = Vec::new();
        for mv in &gen_moves {
            if let GenMove::Lone { label, next } = *mv {
                out.push((Some(label), [next, m, r, e]));
            }
        }
        for mv in &eu_moves {
            if let EuMove::Lone { label, next } = *mv {
                out.push((Some(label), [g, m, r, next]));
            }
        }
        for mv in &gen_moves {
            if let GenMove::Send { msg, next } = *mv {
                if let Some(ch) = self.chm_accept(m, msg) {
                    out.push((None, [next, ch, r, e]));
                }
            }
        }
        if chm_head.is_some() {
            for mv in &eu_moves {
                if let EuMove::Take { next } = *mv {
                    let rest = self.chm_deliver(m);
                    out.push((None, [g, rest, r, next]));
                }
            }
        }
        for mv in &eu_moves {
            if let EuMove::Reply { reply, next } = *mv {
                if let Some(ch) = self.chr_accept(r, reply) {
                    out.push((None, [g, m, ch, next]));
                }
            }
        }
        if let Some(reply) = chr_head {
            for mv in &gen_moves {
                if let GenMove::Receive { reply: got, next } = *mv {
                    if got == reply {
                        let rest = self.chr_deliver(r);
                        out.push((None, [next, m, rest, e]));
                    }
                }
            }
        }
        Ok(out)
    }

    /// Every reply the unit has not had acknowledged is in the reply
    /// channel, counted by the generator, or acknowledged by a message in
    /// transit.
    fn check_conservation(&self, [g, m, r, e]: [u32; 4]) -> Result<(), ProtocolViolation> {
        if let (Some(unacked), Some(pending)) = (self.gen_unacked[g as usize], self.eu_pending[e as usize]) {
            let accounted = self.t.chrs[r as usize].len() as u32 + unacked + self.chm_acks[m as usize];
            if accounted != pending {
                return Err(ProtocolViolation::Invariant(format!(
                    "reply conservation: unit has {pending} pending, accounted {accounted}"
                )));
            }
        }
        Ok(())
    }

    fn terminated(&self, [g, m, r, e]: [u32; 4]) -> bool {
        self.t.gens[g as usize] == GenSlot::Terminated
            && self.t.chms[m as usize].is_empty()
            && self.t.chrs[r as usize].is_empty()
            && self.t.eus[e as usize] == EuSlot::Terminated
    }
}

/// Breadth-first construction of `τ_I(∂_H(ISG_p ∥ CHM ∥ CHR ∥ ISEU))`,
/// checking the protocol invariants in every visited state.
pub fn explore(thread: ThreadHandle<'_>, cfg: &CompositionConfig) -> Result<Exploration, ComposeError> {
    let pcfg = cfg.protocol();
    let mut x = Explorer {
        thread,
        cfg,
        pcfg,
        gen: Generator::new(thread.spec, pcfg),
        t: Tables::default(),
        lts: Lts::new(),
        labels: FxHashMap::default(),
        report: InvariantReport::default(),
        gen_unacked: Vec::new(),
        eu_pending: Vec::new(),
        chm_acks: Vec::new(),
        chm_rest: Vec::new(),
        chr_rest: Vec::new(),
        chm_push: FxHashMap::default(),
        chr_push: FxHashMap::default(),
        gen_memo: FxHashMap::default(),
        eu_memo: FxHashMap::default(),
    };
    let j_label = x.lts.label_id(if cfg.abstraction.contains(&LabelKind::JAct) {
        Label::Tau
    } else {
        Label::JAct
    }) as u32;

    let mut seen: FxIndexSet<[u32; 4]> = FxIndexSet::default();
    let mut parent: Vec<Option<(u32, u32)>> = vec![None];
    let violation = |v: ProtocolViolation, at: usize, x: &Explorer<'_>, seen: &FxIndexSet<[u32; 4]>, parent: &[Option<(u32, u32)>]| {
        ComposeError::Violation {
            violation: v,
            trace: render_path(at, x.thread.spec, &x.t, &x.lts, seen, parent),
        }
    };
    let init = (|| {
        let g = x.gen_id(GenSlot::Active(x.gen.initial(thread.node)))?;
        let e = x.eu_id(EuSlot::Running(ExecUnitState::new()))?;
        Ok::<_, ProtocolViolation>([g, x.chm_id(ChannelState::new(cfg.capacity_msg)), x.chr_id(ChannelState::new(cfg.capacity_reply)), e])
    })();
    let init = init.map_err(|v| ComposeError::Violation {
        violation: v,
        trace: String::new(),
    })?;
    seen.insert(init);

    let mut edges: Vec<(u32, u32, u32)> = Vec::new();
    let mut current = 0;
    while current < seen.len() {
        let state = seen[current];
        let succ = x
            .check_conservation(state)
            .and_then(|_| x.successors(state))
            .map_err(|v| violation(v, current, &x, &seen, &parent))?;
        for (label, next) in succ {
            let label = label.unwrap_or(j_label);
            let (idx, fresh) = seen.insert_full(next);
            if fresh {
                if seen.len() > cfg.state_bound {
                    return Err(ComposeError::StateBound { bound: cfg.state_bound });
                }
                parent.push(Some((current as u32, label)));
            }
            edges.push((current as u32, label, idx as u32));
        }
        current += 1;
    }

    for &s in seen.iter() {
        x.lts.add_state(String::new(), x.terminated(s));
    }
    x.lts.set_initial(0);
    for (from, label, to) in edges {
        x.lts.add_transition_id(from as usize, label as usize, to as usize);
    }
    x.report.states_checked = seen.len();
    Ok(Exploration {
        lts: x.lts,
        report: x.report,
        spec: thread.spec.clone(),
        tables: x.t,
        packed: seen.into_iter().collect(),
    })
}

fn render_path(
    target: usize,
    spec: &ThreadSpec,
    t: &Tables,
    lts: &Lts,
    seen: &FxIndexSet<[u32; 4]>,
    parent: &[Option<(u32, u32)>],
) -> String {
    let mut steps = Vec::new();
    let mut at = target;
    while let Some((p, label)) = parent[at] {
        steps.push((lts.label(label as usize).to_string(), at));
        at = p as usize;
    }
    steps.reverse();
    let mut out = format!("init : {}\n", t.state(seen[0]).render(spec));
    for (label, s) in steps {
        out.push_str(&format!("{label} : {}\n", t.state(seen[s]).render(spec)));
    }
    out
}

/// Trace text format: one step per line, `<label> : <state summary>`.
/// `path` lists `(label, state)` pairs from the initial state on.
pub fn format_trace(exploration: &Exploration, path: &[(usize, usize)]) -> String {
    let mut out = format!("init : {}\n", exploration.describe(exploration.lts.initial()));
    for &(label, s) in path {
        out.push_str(&format!("{} : {}\n", exploration.lts.label(label), exploration.describe(s)));
    }
    out
}
