//! Finite labelled transition systems with a termination predicate.

use std::borrow::Cow;
use std::collections::{BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use indexmap::IndexSet;
use serde::{Deserialize, Serialize};

use crate::bta::BasicAction;

/// Instruction message as it appears in a channel label.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MessageRepr {
    pub ack: u32,
    pub prefix: String,
    pub instr: String,
}

impl fmt::Display for MessageRepr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "<{},{},{}>", self.ack, self.prefix, self.instr)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Label {
    /// `snd_i(d)` on a message channel (1 or 2).
    SndMsg { channel: u8, msg: MessageRepr },
    RcvMsg { channel: u8, msg: MessageRepr },
    /// `snd_i(e)` on a reply channel (3 or 4).
    SndReply { channel: u8, reply: bool },
    RcvReply { channel: u8, reply: bool },
    SndF { focus: String, method: String },
    RcvF { focus: String, reply: bool },
    Stp,
    #[serde(rename = "i")]
    IAct,
    #[serde(rename = "j")]
    JAct,
    Tau,
}

impl Label {
    pub fn snd_f(action: &BasicAction) -> Label {
        Label::SndF {
            focus: action.focus.clone(),
            method: action.method.clone(),
        }
    }

    pub fn rcv_f(focus: &str, reply: bool) -> Label {
        Label::RcvF {
            focus: focus.to_string(),
            reply,
        }
    }

    /// `None` for the silent step.
    pub fn kind(&self) -> Option<LabelKind> {
        Some(match self {
            Label::SndMsg { .. } => LabelKind::SndMsg,
            Label::RcvMsg { .. } => LabelKind::RcvMsg,
            Label::SndReply { .. } => LabelKind::SndReply,
            Label::RcvReply { .. } => LabelKind::RcvReply,
            Label::SndF { .. } => LabelKind::SndF,
            Label::RcvF { .. } => LabelKind::RcvF,
            Label::Stp => LabelKind::Stp,
            Label::IAct => LabelKind::IAct,
            Label::JAct => LabelKind::JAct,
            Label::Tau => return None,
        })
    }

    pub fn is_tau(&self) -> bool {
        matches!(self, Label::Tau)
    }

    /// Member of the encapsulated set: any send or receive on channels 1-4.
    pub fn is_channel(&self) -> bool {
        matches!(
            self,
            Label::SndMsg { .. } | Label::RcvMsg { .. } | Label::SndReply { .. } | Label::RcvReply { .. }
        )
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let b = |r: &bool| if *r { "T" } else { "F" };
        match self {
            Label::SndMsg { channel, msg } => write!(f, "snd_{channel}({msg})"),
            Label::RcvMsg { channel, msg } => write!(f, "rcv_{channel}({msg})"),
            Label::SndReply { channel, reply } => write!(f, "snd_{channel}({})", b(reply)),
            Label::RcvReply { channel, reply } => write!(f, "rcv_{channel}({})", b(reply)),
            Label::SndF { focus, method } => write!(f, "snd_{focus}({method})"),
            Label::RcvF { focus, reply } => write!(f, "rcv_{focus}({})", b(reply)),
            Label::Stp => f.write_str("stp"),
            Label::IAct => f.write_str("i"),
            Label::JAct => f.write_str("j"),
            Label::Tau => f.write_str("tau"),
        }
    }
}

/// Label families that can be hidden by abstraction. The silent step is
/// not a kind.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LabelKind {
    SndMsg,
    RcvMsg,
    SndReply,
    RcvReply,
    SndF,
    RcvF,
    Stp,
    IAct,
    JAct,
}

impl FromStr for LabelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "snd_msg" => LabelKind::SndMsg,
            "rcv_msg" => LabelKind::RcvMsg,
            "snd_reply" => LabelKind::SndReply,
            "rcv_reply" => LabelKind::RcvReply,
            "snd_f" => LabelKind::SndF,
            "rcv_f" => LabelKind::RcvF,
            "stp" => LabelKind::Stp,
            "i" | "iact" => LabelKind::IAct,
            "j" | "jact" => LabelKind::JAct,
            other => return Err(format!("unknown label kind `{other}`")),
        })
    }
}

impl fmt::Display for LabelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LabelKind::SndMsg => "snd_msg",
            LabelKind::RcvMsg => "rcv_msg",
            LabelKind::SndReply => "snd_reply",
            LabelKind::RcvReply => "rcv_reply",
            LabelKind::SndF => "snd_f",
            LabelKind::RcvF => "rcv_f",
            LabelKind::Stp => "stp",
            LabelKind::IAct => "i",
            LabelKind::JAct => "j",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Transition {
    pub from: usize,
    pub label: usize,
    pub to: usize,
}

/// States are dense indices; `names` gives their textual ids. An empty
/// name stands for `s<index>`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Lts {
    pub(crate) names: Vec<String>,
    pub(crate) terminating: Vec<bool>,
    pub(crate) initial: usize,
    pub(crate) labels: IndexSet<Label>,
    pub(crate) transitions: Vec<Transition>,
}

impl Default for Lts {
    fn default() -> Self {
        Self::new()
    }
}

impl Lts {
    /// An empty LTS; the first added state becomes initial.
    pub fn new() -> Self {
        Lts {
            names: Vec::new(),
            terminating: Vec::new(),
            initial: 0,
            labels: IndexSet::new(),
            transitions: Vec::new(),
        }
    }

    pub fn add_state(&mut self, name: impl Into<String>, terminating: bool) -> usize {
        self.names.push(name.into());
        self.terminating.push(terminating);
        self.names.len() - 1
    }

    pub fn set_initial(&mut self, s: usize) {
        assert!(s < self.names.len(), "initial state out of range");
        self.initial = s;
    }

    pub fn set_terminating(&mut self, s: usize, terminating: bool) {
        self.terminating[s] = terminating;
    }

    pub fn label_id(&mut self, label: Label) -> usize {
        self.labels.insert_full(label).0
    }

    pub fn add_transition(&mut self, from: usize, label: Label, to: usize) {
        let label = self.label_id(label);
        self.add_transition_id(from, label, to);
    }

    pub fn add_transition_id(&mut self, from: usize, label: usize, to: usize) {
        debug_assert!(from < self.names.len() && to < self.names.len());
        debug_assert!(label < self.labels.len());
        self.transitions.push(Transition { from, label, to });
    }

    pub fn num_states(&self) -> usize {
        self.names.len()
    }

    pub fn initial(&self) -> usize {
        self.initial
    }

    pub fn name(&self, s: usize) -> Cow<'_, str> {
        match self.names[s].as_str() {
            "" => Cow::Owned(format!("s{s}")),
            n => Cow::Borrowed(n),
        }
    }

    pub fn is_terminating(&self, s: usize) -> bool {
        self.terminating[s]
    }

    pub fn labels(&self) -> &IndexSet<Label> {
        &self.labels
    }

    pub fn label(&self, id: usize) -> &Label {
        &self.labels[id]
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn outgoing(&self) -> Vec<Vec<(usize, usize)>> {
        let mut out = vec![Vec::new(); self.num_states()];
        for t in &self.transitions {
            out[t.from].push((t.label, t.to));
        }
        out
    }

    /// Same structure with labels of the given kinds renamed to tau.
    pub fn hide(&self, kinds: &BTreeSet<LabelKind>) -> Lts {
        let mut out = Lts {
            names: self.names.clone(),
            terminating: self.terminating.clone(),
            initial: self.initial,
            labels: IndexSet::new(),
            transitions: Vec::with_capacity(self.transitions.len()),
        };
        let map: Vec<usize> = self
            .labels
            .iter()
            .map(|l| match l.kind() {
                Some(k) if kinds.contains(&k) => out.label_id(Label::Tau),
                _ => out.label_id(l.clone()),
            })
            .collect();
        for t in &self.transitions {
            out.transitions.push(Transition {
                from: t.from,
                label: map[t.label],
                to: t.to,
            });
        }
        out
    }

    /// Restriction to the states reachable from the initial state,
    /// renumbered in breadth-first order.
    pub fn reachable(&self) -> Lts {
        let mut start = vec![0usize; self.num_states() + 1];
        for t in &self.transitions {
            start[t.from + 1] += 1;
        }
        for i in 0..self.num_states() {
            start[i + 1] += start[i];
        }
        let mut fill = start.clone();
        let mut targets = vec![0usize; self.transitions.len()];
        for t in &self.transitions {
            targets[fill[t.from]] = t.to;
            fill[t.from] += 1;
        }
        let mut index = vec![usize::MAX; self.num_states()];
        let mut order = vec![self.initial];
        index[self.initial] = 0;
        let mut queue = VecDeque::from([self.initial]);
        while let Some(s) = queue.pop_front() {
            for &t in &targets[start[s]..start[s + 1]] {
                if index[t] == usize::MAX {
                    index[t] = order.len();
                    order.push(t);
                    queue.push_back(t);
                }
            }
        }
        let mut out = Lts::new();
        for &s in &order {
            out.add_state(self.names[s].clone(), self.terminating[s]);
        }
        out.set_initial(0);
        let mut map = vec![usize::MAX; self.labels.len()];
        for t in &self.transitions {
            if index[t.from] != usize::MAX {
                if map[t.label] == usize::MAX {
                    map[t.label] = out.label_id(self.labels[t.label].clone());
                }
                out.transitions.push(Transition {
                    from: index[t.from],
                    label: map[t.label],
                    to: index[t.to],
                });
            }
        }
        out
    }

    /// States with no outgoing transition that are not terminating.
    pub fn deadlock_states(&self) -> Vec<usize> {
        let mut has_out = vec![false; self.num_states()];
        for t in &self.transitions {
            has_out[t.from] = true;
        }
        (0..self.num_states())
            .filter(|&s| !has_out[s] && !self.terminating[s])
            .collect()
    }

    pub fn stats(&self) -> LtsStats {
        let deadlocks = self.deadlock_states();
        // states reachable without passing an inaction step
        let out_edges = self.outgoing();
        let mut seen = vec![false; self.num_states()];
        let mut stack = vec![self.initial];
        seen[self.initial] = true;
        while let Some(s) = stack.pop() {
            for &(l, t) in &out_edges[s] {
                if self.labels[l] != Label::IAct && !seen[t] {
                    seen[t] = true;
                    stack.push(t);
                }
            }
        }
        let unexplained = deadlocks.iter().copied().filter(|&s| seen[s]).collect();
        LtsStats {
            states: self.num_states(),
            transitions: self.transitions.len(),
            terminating: self.terminating.iter().filter(|&&t| t).count(),
            deadlock_states: deadlocks,
            unexplained_deadlocks: unexplained,
        }
    }

    pub fn to_json(&self) -> LtsJson {
        let names: Vec<String> = (0..self.num_states()).map(|s| self.name(s).into_owned()).collect();
        LtsJson {
            initial: names[self.initial].clone(),
            terminating: (0..self.num_states())
                .filter(|&s| self.terminating[s])
                .map(|s| names[s].clone())
                .collect(),
            transitions: self
                .transitions
                .iter()
                .map(|t| JsonTransition {
                    from: names[t.from].clone(),
                    label: self.labels[t.label].clone(),
                    to: names[t.to].clone(),
                })
                .collect(),
            states: names,
        }
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&self.to_json()).expect("lts serializes")
    }

    pub fn from_json(json: &LtsJson) -> Result<Lts, String> {
        let mut lts = Lts::new();
        let mut index = std::collections::HashMap::new();
        for name in &json.states {
            let s = lts.add_state(name.clone(), false);
            if index.insert(name.clone(), s).is_some() {
                return Err(format!("duplicate state id {name}"));
            }
        }
        let find = |n: &str| index.get(n).copied().ok_or_else(|| format!("unknown state {n}"));
        lts.set_initial(find(&json.initial)?);
        for n in &json.terminating {
            let s = find(n)?;
            lts.set_terminating(s, true);
        }
        for t in &json.transitions {
            let (from, to) = (find(&t.from)?, find(&t.to)?);
            lts.add_transition(from, t.label.clone(), to);
        }
        Ok(lts)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LtsJson {
    pub states: Vec<String>,
    pub initial: String,
    pub terminating: Vec<String>,
    pub transitions: Vec<JsonTransition>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct JsonTransition {
    pub from: String,
    pub label: Label,
    pub to: String,
}

/// Counts over an explicit LTS.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct LtsStats {
    pub states: usize,
    pub transitions: usize,
    pub terminating: usize,
    /// Stuck, non-terminating states.
    pub deadlock_states: Vec<usize>,
    /// Deadlock states reachable without any `i` step, i.e. not explained
    /// by the thread itself reaching `D`.
    pub unexplained_deadlocks: Vec<usize>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_label_tags() {
        let l = Label::SndF {
            focus: "f".into(),
            method: "m".into(),
        };
        assert_eq!(
            serde_json::to_string(&l).unwrap(),
            r#"{"kind":"snd_f","focus":"f","method":"m"}"#
        );
        assert_eq!(serde_json::to_string(&Label::JAct).unwrap(), r#"{"kind":"j"}"#);
    }

    #[test]
    fn json_round_trip() {
        let mut lts = Lts::new();
        let a = lts.add_state("a", false);
        let b = lts.add_state("b", true);
        lts.add_transition(a, Label::Stp, b);
        let back = Lts::from_json(&lts.to_json()).unwrap();
        assert_eq!(back, lts);
    }

    #[test]
    fn hide_and_reachable() {
        let mut lts = Lts::new();
        let a = lts.add_state("a", false);
        let b = lts.add_state("b", false);
        let c = lts.add_state("c", true);
        let _orphan = lts.add_state("z", false);
        lts.add_transition(a, Label::JAct, b);
        lts.add_transition(b, Label::Stp, c);
        let hidden = lts.hide(&BTreeSet::from([LabelKind::JAct]));
        assert_eq!(hidden.label(hidden.transitions()[0].label), &Label::Tau);
        let r = lts.reachable();
        assert_eq!(r.num_states(), 3);
        assert_eq!(lts.stats().deadlock_states, vec![3]);
    }

    #[test]
    fn kind_names_parse() {
        for k in ["stp", "j", "jact", "i", "snd_f", "rcv_f"] {
            assert!(k.parse::<LabelKind>().is_ok());
        }
        assert!("tau".parse::<LabelKind>().is_err());
    }
}
