use std::fmt;

use crate::bta::{Minimization, Node, ThreadSpec};
use crate::strategy::{select, wildcard_expand, AnnotatedEntry};

use super::{InstructionMessage, Mode, ProtoAction, ProtocolConfig, ProtocolViolation};

/// `(n, R)`: replies received since the last acknowledgement, and the
/// threads still to be sent together with the replies they wait for.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GeneratorState {
    pub unacked: u32,
    /// Sorted, without duplicates.
    pub frontier: Vec<AnnotatedEntry>,
}

impl GeneratorState {
    pub fn new(unacked: u32, mut frontier: Vec<AnnotatedEntry>) -> Self {
        frontier.sort();
        frontier.dedup();
        GeneratorState { unacked, frontier }
    }
}

impl fmt::Display for GeneratorState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{{", self.unacked)?;
        for (i, e) in self.frontier.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "({},{:?})", e.prefix, e.node)?;
        }
        f.write_str("})")
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum GenSlot {
    Active(GeneratorState),
    /// After `j`; in safe mode it still consumes replies.
    Terminated,
}

/// Generator for one thread under one configuration.
#[derive(Clone, Debug)]
pub struct Generator<'a> {
    spec: &'a ThreadSpec,
    identity: Option<Minimization>,
    cfg: ProtocolConfig,
}

impl<'a> Generator<'a> {
    pub fn new(spec: &'a ThreadSpec, cfg: ProtocolConfig) -> Self {
        let identity = cfg.strategy.wildcard.then(|| spec.minimize());
        Generator {
            spec,
            identity,
            cfg,
        }
    }

    pub fn config(&self) -> &ProtocolConfig {
        &self.cfg
    }

    pub fn spec(&self) -> &'a ThreadSpec {
        self.spec
    }

    /// `ISG_p = ISG⟨0, {⟨ε, p⟩}⟩`.
    pub fn initial(&self, node: Node) -> GeneratorState {
        GeneratorState::new(0, vec![AnnotatedEntry::root(node)])
    }

    /// State after sending the message for `entry`.
    pub fn updpm(
        &self,
        entry: &AnnotatedEntry,
        state: &GeneratorState,
    ) -> Result<GeneratorState, ProtocolViolation> {
        let pos = state
            .frontier
            .binary_search(entry)
            .map_err(|_| ProtocolViolation::EntryNotInFrontier(entry.prefix.to_string()))?;
        let mut frontier = state.frontier.clone();
        frontier.remove(pos);
        frontier.extend(wildcard_expand(entry, self.spec, self.identity.as_ref()));
        Ok(GeneratorState::new(0, frontier))
    }

    /// State after consuming `reply`: matching entries lose their first
    /// position, the rest (and entries already due) are dropped.
    pub fn updcr(&self, reply: bool, state: &GeneratorState) -> Result<GeneratorState, ProtocolViolation> {
        let unacked = state.unacked + 1;
        if unacked > self.cfg.counter_bound() {
            return Err(ProtocolViolation::CounterOverflow {
                counter: "generator unacked",
                value: unacked,
                bound: self.cfg.counter_bound(),
            });
        }
        let frontier = state
            .frontier
            .iter()
            .filter(|e| e.prefix.head().is_some_and(|s| s.matches(reply)))
            .map(|e| AnnotatedEntry {
                prefix: e.prefix.tail_n(1).expect("nonempty"),
                actions: e.actions[1..].iter().copied().collect(),
                node: e.node,
            })
            .collect();
        Ok(GeneratorState::new(unacked, frontier))
    }

    /// Indices into `state.frontier` that may be sent now, preferred first.
    pub fn select(&self, state: &GeneratorState) -> Vec<usize> {
        select(
            &state.frontier,
            &self.cfg.strategy,
            self.cfg.maxlen as usize,
            |a| self.spec.probability(a),
        )
    }

    pub fn message_for(&self, entry: &AnnotatedEntry, state: &GeneratorState) -> InstructionMessage {
        InstructionMessage::new(state.unacked, entry.prefix.clone(), self.spec.instr(entry.node))
    }

    fn receive_enabled(&self, state: &GeneratorState, selected: &[usize]) -> bool {
        match self.cfg.mode {
            Mode::Strict => !selected.is_empty(),
            Mode::Safe => !state.frontier.is_empty(),
        }
    }

    /// Outgoing steps: `snd_1` per selected entry, `rcv_4(e)` when
    /// receiving is enabled and `offered` is the reply at the head of the
    /// reply channel, `j` on an empty frontier.
    pub fn steps(
        &self,
        slot: &GenSlot,
        offered: Option<bool>,
    ) -> Result<Vec<(ProtoAction, GenSlot)>, ProtocolViolation> {
        self.enabled_steps(slot, offered, true)
    }

    /// As [`Generator::steps`], leaving out sends when `may_send` is false
    /// (the message channel is full).
    pub fn enabled_steps(
        &self,
        slot: &GenSlot,
        offered: Option<bool>,
        may_send: bool,
    ) -> Result<Vec<(ProtoAction, GenSlot)>, ProtocolViolation> {
        let mut out = Vec::new();
        let state = match slot {
            GenSlot::Active(s) => s,
            GenSlot::Terminated => {
                if let (Mode::Safe, Some(reply)) = (self.cfg.mode, offered) {
                    out.push((ProtoAction::RcvReply(4, reply), GenSlot::Terminated));
                }
                return Ok(out);
            }
        };
        if state.frontier.is_empty() {
            out.push((ProtoAction::JAct, GenSlot::Terminated));
            return Ok(out);
        }
        let selected = self.select(state);
        for &i in selected.iter().filter(|_| may_send) {
            let entry = &state.frontier[i];
            let msg = self.message_for(entry, state);
            let next = self.updpm(entry, state)?;
            out.push((ProtoAction::SndMsg(1, msg), GenSlot::Active(next)));
        }
        if let Some(reply) = offered.filter(|_| self.receive_enabled(state, &selected)) {
            let next = self.updcr(reply, state)?;
            out.push((ProtoAction::RcvReply(4, reply), GenSlot::Active(next)));
        }
        Ok(out)
    }
}

/// Reachable-state invariants of a generator state.
pub fn check_generator(state: &GeneratorState, cfg: &ProtocolConfig) -> Result<(), ProtocolViolation> {
    let fail = |m: String| Err(ProtocolViolation::Invariant(m));
    if state.unacked > cfg.counter_bound() {
        return fail(format!("generator unacked {} exceeds {}", state.unacked, cfg.counter_bound()));
    }
    for (i, e) in state.frontier.iter().enumerate() {
        if e.len() > cfg.maxlen as usize + 1 {
            return fail(format!("frontier prefix {} longer than maxlen+1", e.prefix));
        }
        if e.actions.len() != e.prefix.len() {
            return fail(format!("entry {} carries {} actions", e.prefix, e.actions.len()));
        }
        if !cfg.strategy.wildcard && e.prefix.has_star() {
            return fail(format!("wildcard in frontier prefix {}", e.prefix));
        }
        for other in &state.frontier[i + 1..] {
            if e.prefix.is_prefix_of(&other.prefix) || other.prefix.is_prefix_of(&e.prefix) {
                return fail(format!("frontier prefixes {} and {} are comparable", e.prefix, other.prefix));
            }
        }
    }
    if cfg.strategy.is_breadth_first() {
        let lens = state.frontier.iter().map(AnnotatedEntry::len);
        if let (Some(lo), Some(hi)) = (lens.clone().min(), lens.max()) {
            if hi - lo > 1 {
                return fail(format!("breadth-first frontier spans lengths {lo}..{hi}"));
            }
        }
    }
    Ok(())
}
