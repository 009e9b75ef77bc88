use std::fmt;

use smallvec::SmallVec;

use crate::bta::{ActionId, Instr};

use super::{InstructionMessage, ProtoAction, ProtocolConfig, ProtocolViolation, ReplySeq};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Phase {
    Idle,
    /// A request for this action has been sent to its focus.
    Awaiting(ActionId),
    /// The reply has arrived and is about to be forwarded on channel 3.
    Replying(bool),
}

/// `(n, S)`. The `n` pending acknowledgements are kept as the replies
/// themselves, oldest first, so that a message computed against an older
/// reply history can be recognised as belonging to a pruned branch.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ExecUnitState {
    pub replies: SmallVec<[bool; 6]>,
    /// Sorted, without duplicates.
    pub store: Vec<(ReplySeq, Instr)>,
    pub phase: Phase,
}

impl Default for ExecUnitState {
    fn default() -> Self {
        Self::new()
    }
}

impl ExecUnitState {
    /// `ISEU = ISEU′⟨0, ∅⟩`.
    pub fn new() -> Self {
        ExecUnitState {
            replies: SmallVec::new(),
            store: Vec::new(),
            phase: Phase::Idle,
        }
    }

    pub fn with(replies: &[bool], store: Vec<(ReplySeq, Instr)>) -> Self {
        let mut s = ExecUnitState {
            replies: replies.iter().copied().collect(),
            store,
            phase: Phase::Idle,
        };
        s.store.sort();
        s.store.dedup();
        s
    }

    pub fn pending_acks(&self) -> u32 {
        self.replies.len() as u32
    }
}

impl fmt::Display for ExecUnitState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{{", self.pending_acks())?;
        for (i, (u, a)) in self.store.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "({u},{a:?})")?;
        }
        write!(f, "}},{:?})", self.phase)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EuSlot {
    Running(ExecUnitState),
    Terminated,
    Dead,
}

/// What became of a received message.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MessageFate {
    Stored,
    /// Its prefix contradicts a reply already produced.
    Stale,
}

/// Consumes a message: `ack` pending replies are acknowledged, and the
/// prefix is rebased onto the replies the generator had not yet seen.
pub fn updcm(
    msg: &InstructionMessage,
    state: &ExecUnitState,
    cfg: &ProtocolConfig,
) -> Result<(ExecUnitState, MessageFate), ProtocolViolation> {
    let pending = state.pending_acks();
    if msg.ack > pending {
        return Err(ProtocolViolation::NegativeAckBalance { ack: msg.ack, pending });
    }
    if !cfg.strategy.wildcard && msg.prefix.has_star() {
        return Err(ProtocolViolation::UnexpectedWildcard(msg.prefix.to_string()));
    }
    let mut next = state.clone();
    next.replies.drain(..msg.ack as usize);
    let unseen = &next.replies[..];
    let strip = unseen.len();
    if !msg.prefix.matches_replies(unseen) {
        return Ok((next, MessageFate::Stale));
    }
    let Some(rest) = msg.prefix.tail_n(strip) else {
        // the unit went past this instruction without executing it
        return Err(ProtocolViolation::StripPastEnd {
            prefix: msg.prefix.to_string(),
            strip: strip as u32,
        });
    };
    let entry = (rest, msg.instr);
    if let Err(pos) = next.store.binary_search(&entry) {
        next.store.insert(pos, entry);
    }
    Ok((next, MessageFate::Stored))
}

/// Records a produced reply: entries whose next position matches lose it,
/// the others (including the one just executed) are dropped. Returns the
/// number of entries pruned by the mismatch.
pub fn updpr(
    reply: bool,
    state: &ExecUnitState,
    cfg: &ProtocolConfig,
) -> Result<(ExecUnitState, usize), ProtocolViolation> {
    let pending = state.pending_acks() + 1;
    if pending > cfg.counter_bound() {
        return Err(ProtocolViolation::CounterOverflow {
            counter: "execution unit pending acks",
            value: pending,
            bound: cfg.counter_bound(),
        });
    }
    let mut next = state.clone();
    next.replies.push(reply);
    let mut pruned = 0;
    next.store = state
        .store
        .iter()
        .filter_map(|(u, a)| match u.head() {
            Some(s) if s.matches(reply) => Some((u.tail_n(1).expect("nonempty"), *a)),
            Some(_) => {
                pruned += 1;
                None
            }
            None => None,
        })
        .collect();
    next.store.sort();
    Ok((next, pruned))
}

/// Whether `instr` is due now: `⟨ε, instr⟩ ∈ S`.
pub fn enable(instr: Instr, store: &[(ReplySeq, Instr)]) -> bool {
    store.iter().any(|(u, a)| u.is_empty() && *a == instr)
}

/// Outgoing steps of the execution unit; `offered` is the message at the
/// head of the message channel, if any.
pub fn eu_steps(
    slot: &EuSlot,
    offered: Option<&InstructionMessage>,
    cfg: &ProtocolConfig,
) -> Result<Vec<(ProtoAction, EuSlot)>, ProtocolViolation> {
    let EuSlot::Running(state) = slot else {
        return Ok(Vec::new());
    };
    let mut out = Vec::new();
    if let (Some(msg), Phase::Idle | Phase::Awaiting(_)) = (offered, state.phase) {
        let (next, _) = updcm(msg, state, cfg)?;
        out.push((ProtoAction::RcvMsg(2, msg.clone()), EuSlot::Running(next)));
    }
    match state.phase {
        Phase::Idle => {
            for (u, instr) in &state.store {
                if !u.is_empty() {
                    continue;
                }
                match *instr {
                    Instr::Basic(a) => {
                        let mut next = state.clone();
                        next.phase = Phase::Awaiting(a);
                        out.push((ProtoAction::SndF(a), EuSlot::Running(next)));
                    }
                    Instr::Stop => out.push((ProtoAction::Stp, EuSlot::Terminated)),
                    Instr::Dead => out.push((ProtoAction::IAct, EuSlot::Dead)),
                }
            }
        }
        Phase::Awaiting(a) => {
            for reply in [true, false] {
                let mut next = state.clone();
                next.phase = Phase::Replying(reply);
                out.push((ProtoAction::RcvF(a, reply), EuSlot::Running(next)));
            }
        }
        Phase::Replying(reply) => {
            let (mut next, _) = updpr(reply, state, cfg)?;
            next.phase = Phase::Idle;
            out.push((ProtoAction::SndReply(3, reply), EuSlot::Running(next)));
        }
    }
    Ok(out)
}

/// Reachable-state invariants of an execution unit state.
pub fn check_exec_unit(state: &ExecUnitState, cfg: &ProtocolConfig) -> Result<(), ProtocolViolation> {
    let fail = |m: String| Err(ProtocolViolation::Invariant(m));
    if state.pending_acks() > cfg.counter_bound() {
        return fail(format!(
            "execution unit pending acks {} exceed {}",
            state.pending_acks(),
            cfg.counter_bound()
        ));
    }
    let due = state.store.iter().filter(|(u, _)| u.is_empty()).count();
    if due > 1 {
        return fail(format!("{due} store entries with empty prefix"));
    }
    for (u, _) in &state.store {
        if u.len() > cfg.maxlen as usize {
            return fail(format!("store prefix {u} longer than maxlen"));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::Mode;
    use crate::strategy::SelectionStrategy;

    fn cfg(maxlen: u32, wildcard: bool) -> ProtocolConfig {
        ProtocolConfig {
            maxlen,
            mode: Mode::Safe,
            strategy: SelectionStrategy::BREADTH.with_wildcard(wildcard),
        }
    }

    fn seq(s: &str) -> ReplySeq {
        s.parse().unwrap()
    }

    const A: Instr = Instr::Basic(ActionId(0));
    const B: Instr = Instr::Basic(ActionId(1));

    #[test]
    fn updcm_strips_unseen_replies() {
        let c = cfg(2, false);
        let s = ExecUnitState::with(&[true, true], vec![]);
        let (next, fate) = updcm(&InstructionMessage::new(1, seq("TF"), A), &s, &c).unwrap();
        assert_eq!(fate, MessageFate::Stored);
        assert_eq!(next, ExecUnitState::with(&[true], vec![(seq("F"), A)]));

        let (next, _) = updcm(&InstructionMessage::new(0, seq(""), Instr::Stop), &ExecUnitState::new(), &c).unwrap();
        assert_eq!(next, ExecUnitState::with(&[], vec![(seq(""), Instr::Stop)]));

        let s = ExecUnitState::with(&[true], vec![]);
        let (next, _) = updcm(&InstructionMessage::new(0, seq("T"), A), &s, &c).unwrap();
        assert_eq!(next, ExecUnitState::with(&[true], vec![(seq(""), A)]));
    }

    #[test]
    fn updcm_discards_pruned_branch() {
        let c = cfg(2, false);
        let s = ExecUnitState::with(&[true], vec![]);
        let (next, fate) = updcm(&InstructionMessage::new(0, seq("F"), B), &s, &c).unwrap();
        assert_eq!(fate, MessageFate::Stale);
        assert!(next.store.is_empty());
        assert_eq!(next.pending_acks(), 1);
        // the acknowledgement still counts
        let (next, fate) = updcm(&InstructionMessage::new(1, seq("F"), B), &s, &c).unwrap();
        assert_eq!(fate, MessageFate::Stored);
        assert_eq!(next.pending_acks(), 0);
    }

    #[test]
    fn updcm_errors() {
        let c = cfg(2, false);
        let s = ExecUnitState::with(&[true], vec![]);
        assert!(matches!(
            updcm(&InstructionMessage::new(2, seq(""), A), &s, &c),
            Err(ProtocolViolation::NegativeAckBalance { .. })
        ));
        let s = ExecUnitState::with(&[true, true], vec![]);
        assert!(matches!(
            updcm(&InstructionMessage::new(0, seq("T"), A), &s, &c),
            Err(ProtocolViolation::StripPastEnd { .. })
        ));
        assert!(matches!(
            updcm(&InstructionMessage::new(0, seq("*"), A), &ExecUnitState::new(), &c),
            Err(ProtocolViolation::UnexpectedWildcard(_))
        ));
    }

    #[test]
    fn updpr_filters_by_reply() {
        let c = cfg(2, true);
        let s = ExecUnitState::with(&[], vec![(seq("T"), A), (seq("F"), B)]);
        let (next, pruned) = updpr(true, &s, &c).unwrap();
        assert_eq!(next, ExecUnitState::with(&[true], vec![(seq(""), A)]));
        assert_eq!(pruned, 1);

        let s = ExecUnitState::with(&[], vec![(seq(""), A)]);
        let (next, pruned) = updpr(false, &s, &c).unwrap();
        assert_eq!(next, ExecUnitState::with(&[false], vec![]));
        assert_eq!(pruned, 0);

        let s = ExecUnitState::with(&[], vec![(seq("*T"), A)]);
        let (next, _) = updpr(true, &s, &c).unwrap();
        assert_eq!(next, ExecUnitState::with(&[true], vec![(seq("T"), A)]));

        let full = ExecUnitState::with(&[true, true, true], vec![]);
        assert!(updpr(true, &full, &c).is_err());
    }

    #[test]
    fn enable_needs_empty_prefix() {
        assert!(enable(A, &[(seq(""), A)]));
        assert!(!enable(A, &[(seq("T"), A)]));
        assert!(!enable(Instr::Stop, &[]));
    }

    #[test]
    fn steps_by_phase() {
        let c = cfg(1, false);
        let idle = EuSlot::Running(ExecUnitState::with(&[], vec![(seq(""), A)]));
        let steps = eu_steps(&idle, None, &c).unwrap();
        assert_eq!(steps.len(), 1);
        assert_eq!(steps[0].0, ProtoAction::SndF(ActionId(0)));
        let EuSlot::Running(waiting) = &steps[0].1 else { panic!() };
        assert_eq!(waiting.phase, Phase::Awaiting(ActionId(0)));

        let stop = EuSlot::Running(ExecUnitState::with(&[], vec![(seq(""), Instr::Stop)]));
        assert_eq!(eu_steps(&stop, None, &c).unwrap(), vec![(ProtoAction::Stp, EuSlot::Terminated)]);
        let dead = EuSlot::Running(ExecUnitState::with(&[], vec![(seq(""), Instr::Dead)]));
        assert_eq!(eu_steps(&dead, None, &c).unwrap(), vec![(ProtoAction::IAct, EuSlot::Dead)]);

        // awaiting: both replies, plus message reception
        let msg = InstructionMessage::new(0, seq("T"), B);
        let steps = eu_steps(&steps[0].1, Some(&msg), &c).unwrap();
        assert_eq!(steps.len(), 3);
        let (_, replying) = steps.iter().find(|(a, _)| *a == ProtoAction::RcvF(ActionId(0), true)).unwrap();
        // replying: only the forward on channel 3
        let steps = eu_steps(replying, Some(&msg), &c).unwrap();
        assert_eq!(steps.len(), 1);
        assert_eq!(steps[0].0, ProtoAction::SndReply(3, true));
        let EuSlot::Running(after) = &steps[0].1 else { panic!() };
        assert_eq!(after.phase, Phase::Idle);
        assert_eq!(after.pending_acks(), 1);
    }

    #[test]
    fn invariant_single_due_entry() {
        let c = cfg(1, false);
        let bad = ExecUnitState::with(&[], vec![(seq(""), A), (seq(""), B)]);
        assert!(check_exec_unit(&bad, &c).is_err());
        assert!(check_exec_unit(&ExecUnitState::with(&[], vec![(seq(""), A)]), &c).is_ok());
    }
}
