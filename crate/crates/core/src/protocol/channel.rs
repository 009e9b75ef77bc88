use std::collections::VecDeque;

use super::{InstructionMessage, ProtoAction};

/// Reliable FIFO channel. Capacity 1 is the one-place buffer
/// `Σ rcv_i(d) · snd_j(d) · CH`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ChannelState<T> {
    capacity: usize,
    buffer: VecDeque<T>,
}

impl<T: Clone> ChannelState<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1, "channel capacity must be positive");
        ChannelState {
            capacity,
            buffer: VecDeque::with_capacity(capacity),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.buffer.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buffer.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.buffer.len() >= self.capacity
    }

    pub fn head(&self) -> Option<&T> {
        self.buffer.front()
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.buffer.iter()
    }

    /// `None` when full.
    pub fn accept(&self, item: T) -> Option<Self> {
        if self.is_full() {
            return None;
        }
        let mut next = self.clone();
        next.buffer.push_back(item);
        Some(next)
    }

    /// Head item and the remaining channel; `None` when empty.
    pub fn deliver(&self) -> Option<(T, Self)> {
        let mut next = self.clone();
        let item = next.buffer.pop_front()?;
        Some((item, next))
    }
}

fn steps<T: Clone>(
    ch: &ChannelState<T>,
    universe: &[T],
    rcv: impl Fn(T) -> ProtoAction,
    snd: impl Fn(T) -> ProtoAction,
) -> Vec<(ProtoAction, ChannelState<T>)> {
    let mut out = Vec::new();
    if let Some((item, next)) = ch.deliver() {
        out.push((snd(item), next));
    }
    for item in universe {
        if let Some(next) = ch.accept(item.clone()) {
            out.push((rcv(item.clone()), next));
        }
    }
    out
}

/// Steps of the message channel: `rcv_1(d)` for each `d` of `universe`
/// while not full, `snd_2` of the head while nonempty.
pub fn chm_steps(
    ch: &ChannelState<InstructionMessage>,
    universe: &[InstructionMessage],
) -> Vec<(ProtoAction, ChannelState<InstructionMessage>)> {
    steps(ch, universe, |d| ProtoAction::RcvMsg(1, d), |d| ProtoAction::SndMsg(2, d))
}

/// Steps of the reply channel, on channels 3 (in) and 4 (out).
pub fn chr_steps(ch: &ChannelState<bool>) -> Vec<(ProtoAction, ChannelState<bool>)> {
    steps(ch, &[true, false], |e| ProtoAction::RcvReply(3, e), |e| ProtoAction::SndReply(4, e))
}
