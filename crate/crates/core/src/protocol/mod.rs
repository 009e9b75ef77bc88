//! The instruction stream protocol: generator, the two transmission
//! channels and the execution unit, as pure step functions.

mod channel;
mod exec_unit;
mod generator;

pub use channel::{chm_steps, chr_steps, ChannelState};
pub use exec_unit::{check_exec_unit, enable, eu_steps, updcm, updpr, EuSlot, ExecUnitState, MessageFate, Phase};
pub use generator::{check_generator, GenSlot, Generator, GeneratorState};

use std::fmt;
use std::str::FromStr;

use smallvec::SmallVec;
use thiserror::Error;

use crate::bta::{ActionId, Instr, ThreadSpec};
use crate::lts::{Label, MessageRepr};
use crate::strategy::SelectionStrategy;

/// One position of a reply sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Sym {
    T,
    F,
    /// Either reply.
    Star,
}

impl Sym {
    pub fn from_reply(reply: bool) -> Sym {
        if reply {
            Sym::T
        } else {
            Sym::F
        }
    }

    pub fn matches(self, reply: bool) -> bool {
        match self {
            Sym::T => reply,
            Sym::F => !reply,
            Sym::Star => true,
        }
    }

    fn as_char(self) -> char {
        match self {
            Sym::T => 'T',
            Sym::F => 'F',
            Sym::Star => '*',
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ReplySeq(SmallVec<[Sym; 6]>);

impl ReplySeq {
    pub fn new() -> Self {
        ReplySeq(SmallVec::new())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = Sym> + '_ {
        self.0.iter().copied()
    }

    pub fn head(&self) -> Option<Sym> {
        self.0.first().copied()
    }

    pub fn pushed(&self, sym: Sym) -> ReplySeq {
        let mut s = self.clone();
        s.0.push(sym);
        s
    }

    /// `tail^n`; `None` when `n` exceeds the length.
    pub fn tail_n(&self, n: usize) -> Option<ReplySeq> {
        (n <= self.len()).then(|| ReplySeq(self.0[n..].iter().copied().collect()))
    }

    pub fn is_prefix_of(&self, other: &ReplySeq) -> bool {
        other.0.starts_with(&self.0)
    }

    pub fn has_star(&self) -> bool {
        self.0.contains(&Sym::Star)
    }

    /// Whether the leading positions match the given replies.
    pub fn matches_replies(&self, replies: &[bool]) -> bool {
        self.0.iter().zip(replies).all(|(s, &r)| s.matches(r))
    }
}

impl fmt::Display for ReplySeq {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return f.write_str("ε");
        }
        for s in &self.0 {
            write!(f, "{}", s.as_char())?;
        }
        Ok(())
    }
}

impl FromStr for ReplySeq {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "ε" {
            return Ok(ReplySeq::new());
        }
        s.chars()
            .map(|c| match c {
                'T' => Ok(Sym::T),
                'F' => Ok(Sym::F),
                '*' => Ok(Sym::Star),
                other => Err(format!("bad reply symbol `{other}`")),
            })
            .collect::<Result<SmallVec<_>, _>>()
            .map(ReplySeq)
    }
}

impl FromIterator<Sym> for ReplySeq {
    fn from_iter<I: IntoIterator<Item = Sym>>(iter: I) -> Self {
        ReplySeq(iter.into_iter().collect())
    }
}

/// `(ack, prefix, instr)`: acknowledges `ack` replies and carries `instr`,
/// to be executed after the replies `prefix`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct InstructionMessage {
    pub ack: u32,
    pub prefix: ReplySeq,
    pub instr: Instr,
}

impl InstructionMessage {
    pub fn new(ack: u32, prefix: ReplySeq, instr: Instr) -> Self {
        InstructionMessage { ack, prefix, instr }
    }

    pub fn repr(&self, spec: &ThreadSpec) -> MessageRepr {
        MessageRepr {
            ack: self.ack,
            prefix: if self.prefix.is_empty() {
                String::new()
            } else {
                self.prefix.to_string()
            },
            instr: spec.ext_action(self.instr).to_string(),
        }
    }
}

/// How the generator's receive branch is guarded.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum Mode {
    /// Receives only while some entry is selectable, as the recursive
    /// equation reads literally. Deadlocks once every entry is beyond the
    /// run-ahead bound.
    Strict,
    /// Receives whenever the frontier is nonempty, and keeps draining
    /// replies after the frontier has run empty.
    #[default]
    Safe,
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "safe" => Ok(Mode::Safe),
            "strict" => Ok(Mode::Strict),
            other => Err(format!("unknown mode `{other}`")),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Strict => "strict",
            Mode::Safe => "safe",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProtocolConfig {
    pub maxlen: u32,
    pub mode: Mode,
    pub strategy: SelectionStrategy,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            maxlen: 1,
            mode: Mode::Safe,
            strategy: SelectionStrategy::BREADTH,
        }
    }
}

impl ProtocolConfig {
    /// Largest value the reply counters can reach. The generator may
    /// receive a reply for every message it sent ahead plus the one for
    /// the current instruction before it sends again.
    pub fn counter_bound(&self) -> u32 {
        self.maxlen + 1
    }
}

/// Action of a single protocol component, before synchronisation.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum ProtoAction {
    SndMsg(u8, InstructionMessage),
    RcvMsg(u8, InstructionMessage),
    SndReply(u8, bool),
    RcvReply(u8, bool),
    /// Request to the service of the action's focus.
    SndF(ActionId),
    /// Reply from the focus of the dispatched action.
    RcvF(ActionId, bool),
    Stp,
    IAct,
    JAct,
}

impl ProtoAction {
    pub fn to_label(&self, spec: &ThreadSpec) -> Label {
        match self {
            ProtoAction::SndMsg(c, m) => Label::SndMsg {
                channel: *c,
                msg: m.repr(spec),
            },
            ProtoAction::RcvMsg(c, m) => Label::RcvMsg {
                channel: *c,
                msg: m.repr(spec),
            },
            ProtoAction::SndReply(c, r) => Label::SndReply {
                channel: *c,
                reply: *r,
            },
            ProtoAction::RcvReply(c, r) => Label::RcvReply {
                channel: *c,
                reply: *r,
            },
            ProtoAction::SndF(a) => Label::snd_f(spec.action(*a)),
            ProtoAction::RcvF(a, r) => Label::rcv_f(&spec.action(*a).focus, *r),
            ProtoAction::Stp => Label::Stp,
            ProtoAction::IAct => Label::IAct,
            ProtoAction::JAct => Label::JAct,
        }
    }

    /// Member of the encapsulated set.
    pub fn is_channel(&self) -> bool {
        matches!(
            self,
            ProtoAction::SndMsg(..) | ProtoAction::RcvMsg(..) | ProtoAction::SndReply(..) | ProtoAction::RcvReply(..)
        )
    }
}

/// A reachable-state invariant or a precondition of an update function
/// failed.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProtocolViolation {
    #[error("entry {0} is not in the frontier")]
    EntryNotInFrontier(String),
    #[error("{counter} would reach {value}, bound is {bound}")]
    CounterOverflow {
        counter: &'static str,
        value: u32,
        bound: u32,
    },
    #[error("message acknowledges {ack} replies but only {pending} are pending")]
    NegativeAckBalance { ack: u32, pending: u32 },
    #[error("live message with prefix {prefix} would be stripped by {strip}")]
    StripPastEnd { prefix: String, strip: u32 },
    #[error("wildcard symbol in {0} while wildcards are disabled")]
    UnexpectedWildcard(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
}
