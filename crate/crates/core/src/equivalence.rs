//! Rooted branching bisimilarity between finite LTSs, with termination
//! normalization and distinguishing traces.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;

use indexmap::IndexSet;
use rustc_hash::FxHashMap;
use serde::Serialize;
use thiserror::Error;

use crate::bta::ThreadHandle;
use crate::composition::{explore, ComposeError, CompositionConfig, InvariantReport};
use crate::extraction::extract_lts;
use crate::lts::{Label, LabelKind, Lts, LtsStats, Transition};

pub const ORACLE_STATE_BOUND: usize = 300;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EquivConfig {
    pub lhs_abstraction: BTreeSet<LabelKind>,
    pub rhs_abstraction: BTreeSet<LabelKind>,
    /// Check the root condition on the initial states.
    pub rooted: bool,
    /// Put a fresh silent step in front of both systems before checking,
    /// as in `τ·x = τ·y`.
    pub tau_prefix: bool,
    pub divergence_sensitive: bool,
}

impl Default for EquivConfig {
    fn default() -> Self {
        EquivConfig {
            lhs_abstraction: BTreeSet::from([LabelKind::Stp]),
            rhs_abstraction: BTreeSet::from([LabelKind::JAct, LabelKind::Stp]),
            rooted: true,
            tau_prefix: true,
            divergence_sensitive: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Lhs,
    Rhs,
}

impl Side {
    fn other(self) -> Side {
        match self {
            Side::Lhs => Side::Rhs,
            Side::Rhs => Side::Lhs,
        }
    }
}

/// What fails after the trace has been performed.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Obligation {
    /// `side` can terminate, the other side cannot.
    Termination { side: Side },
    /// `side` is stuck while the other side can still act or terminate.
    Deadlock { side: Side },
    /// `label` is possible on `side` only.
    MissingBranch { label: Label, side: Side },
    /// A silent step changes the branching potential on one side only.
    Inert,
    /// The sides differ in divergence only.
    Divergence,
    /// The initial states are equivalent but do not match step for step.
    Root,
}

impl fmt::Display for Obligation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let side = |s: &Side| match s {
            Side::Lhs => "extraction side",
            Side::Rhs => "protocol side",
        };
        match self {
            Obligation::Termination { side: s } => write!(f, "termination: only the {} can terminate", side(s)),
            Obligation::Deadlock { side: s } => write!(f, "deadlock: the {} is stuck", side(s)),
            Obligation::MissingBranch { label, side: s } => {
                write!(f, "missing branch: only the {} can do {label}", side(s))
            }
            Obligation::Inert => f.write_str("branching: a silent step is not matched"),
            Obligation::Divergence => f.write_str("divergence: only one side can diverge"),
            Obligation::Root => f.write_str("root: an initial step is not matched"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Counterexample {
    /// Visible labels leading to the discrepancy.
    pub trace: Vec<Label>,
    pub obligation: Obligation,
}

impl fmt::Display for Counterexample {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("trace:")?;
        if self.trace.is_empty() {
            f.write_str(" (empty)")?;
        }
        for l in &self.trace {
            write!(f, " {l}")?;
        }
        write!(f, "\nobligation: {}", self.obligation)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EquivVerdict {
    pub equivalent: bool,
    pub counterexample: Option<Counterexample>,
}

#[derive(Serialize)]
struct VerdictJson<'a> {
    equivalent: bool,
    counterexample: Option<Vec<String>>,
    obligation: Option<&'a Obligation>,
}

impl EquivVerdict {
    pub fn to_json_string(&self) -> String {
        let json = VerdictJson {
            equivalent: self.equivalent,
            counterexample: self
                .counterexample
                .as_ref()
                .map(|c| c.trace.iter().map(Label::to_string).collect()),
            obligation: self.counterexample.as_ref().map(|c| &c.obligation),
        };
        serde_json::to_string_pretty(&json).expect("verdict serializes")
    }
}

impl fmt::Display for EquivVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.counterexample {
            None => f.write_str("equivalent"),
            Some(c) => write!(f, "not equivalent\n{c}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OracleError {
    #[error("oracle bound exceeded: {states} states, bound is {bound}")]
    BoundExceeded { states: usize, bound: usize },
    #[error("the oracle decides the divergence-insensitive relation only")]
    DivergenceUnsupported,
}

/// Redirects every `stp` step to one fresh terminating sink and drops the
/// states that become unreachable.
pub fn normalize_termination(lts: &Lts) -> Lts {
    let Some(stp) = lts.labels.get_index_of(&Label::Stp) else {
        return lts.clone();
    };
    if !lts.transitions.iter().any(|t| t.label == stp) {
        return lts.clone();
    }
    let mut out = lts.clone();
    let sink = out.add_state("stp-sink", true);
    for t in &mut out.transitions {
        if t.label == stp {
            t.to = sink;
        }
    }
    out.reachable()
}

fn tau_prefixed(lts: &Lts) -> Lts {
    let mut out = Lts::new();
    let root = out.add_state("root", false);
    out.names.extend(lts.names.iter().cloned());
    out.terminating.extend_from_slice(&lts.terminating);
    out.set_initial(root);
    out.add_transition(root, Label::Tau, lts.initial() + 1);
    let map: Vec<usize> = lts.labels.iter().map(|l| out.label_id(l.clone())).collect();
    out.transitions.extend(lts.transitions.iter().map(|t| Transition {
        from: t.from + 1,
        label: map[t.label],
        to: t.to + 1,
    }));
    out
}

/// One side as the checker sees it: normalized, abstracted, optionally
/// prefixed.
pub fn prepare(lts: &Lts, abstraction: &BTreeSet<LabelKind>, tau_prefix: bool) -> Lts {
    let hidden = normalize_termination(lts).hide(abstraction);
    if tau_prefix {
        tau_prefixed(&hidden)
    } else {
        hidden
    }
}

const TAU: u32 = 0;

/// Adjacency in compressed rows: the sorted, duplicate-free successors of
/// `x` are `edges[start[x]..start[x + 1]]`.
struct Csr {
    start: Vec<u32>,
    edges: Vec<(u32, u32)>,
}

impl Csr {
    /// From `(source, label, target)` triples over `n` nodes.
    fn build(n: usize, triples: Vec<(u32, u32, u32)>) -> Csr {
        let mut start = vec![0u32; n + 1];
        for &(x, _, _) in &triples {
            start[x as usize + 1] += 1;
        }
        for i in 0..n {
            start[i + 1] += start[i];
        }
        let mut fill = start.clone();
        let mut edges = vec![(0, 0); triples.len()];
        for (x, l, t) in triples {
            edges[fill[x as usize] as usize] = (l, t);
            fill[x as usize] += 1;
        }
        // sort each row, then squeeze out duplicates
        let mut w = 0usize;
        for x in 0..n {
            let (a, b) = (start[x] as usize, start[x + 1] as usize);
            edges[a..b].sort_unstable();
            start[x] = w as u32;
            for i in a..b {
                if i == a || edges[i] != edges[i - 1] {
                    edges[w] = edges[i];
                    w += 1;
                }
            }
        }
        start[n] = w as u32;
        edges.truncate(w);
        Csr { start, edges }
    }

    fn len(&self) -> usize {
        self.start.len() - 1
    }
}

impl std::ops::Index<usize> for Csr {
    type Output = [(u32, u32)];

    fn index(&self, x: usize) -> &[(u32, u32)] {
        &self.edges[self.start[x] as usize..self.start[x + 1] as usize]
    }
}

/// Disjoint union of the two sides with shared label numbering; label 0
/// is the silent step.
struct Union {
    succ: Csr,
    term: Vec<bool>,
    labels: IndexSet<Label>,
    roots: [usize; 2],
}

impl Union {
    fn new(a: &Lts, b: &Lts) -> Union {
        let mut labels = IndexSet::new();
        labels.insert(Label::Tau);
        let n = a.num_states() + b.num_states();
        let mut triples = Vec::with_capacity(a.transitions().len() + b.transitions().len());
        let mut term = Vec::with_capacity(n);
        for (offset, l) in [(0, a), (a.num_states(), b)] {
            for s in 0..l.num_states() {
                term.push(l.is_terminating(s));
            }
            let map: Vec<u32> = l.labels().iter().map(|x| labels.insert_full(x.clone()).0 as u32).collect();
            for t in l.transitions() {
                triples.push(((offset + t.from) as u32, map[t.label], (offset + t.to) as u32));
            }
        }
        let succ = Csr::build(n, triples);
        Union {
            succ,
            term,
            labels,
            roots: [a.initial(), a.num_states() + b.initial()],
        }
    }

    fn len(&self) -> usize {
        self.succ.len()
    }

    fn tau_closure(&self, s: usize) -> Vec<usize> {
        let mut seen = vec![s];
        let mut stack = vec![s];
        let mut mark = FxHashMap::default();
        mark.insert(s, ());
        while let Some(x) = stack.pop() {
            for &(l, t) in &self.succ[x] {
                if l == TAU && mark.insert(t as usize, ()).is_none() {
                    seen.push(t as usize);
                    stack.push(t as usize);
                }
            }
        }
        seen
    }
}

/// Strongly connected components of the silent-step graph, in an order
/// where every component comes after all components it reaches.
fn tau_sccs(u: &Union) -> (Vec<u32>, usize) {
    let n = u.len();
    let mut index = vec![u32::MAX; n];
    let mut low = vec![0u32; n];
    let mut on_stack = vec![false; n];
    let mut comp = vec![u32::MAX; n];
    let mut stack = Vec::new();
    let mut next = 0u32;
    let mut ncomp = 0u32;
    let mut call: Vec<(usize, usize)> = Vec::new();
    for start in 0..n {
        if index[start] != u32::MAX {
            continue;
        }
        call.push((start, 0));
        index[start] = next;
        low[start] = next;
        next += 1;
        stack.push(start);
        on_stack[start] = true;
        while let Some(&mut (v, ref mut i)) = call.last_mut() {
            let edges = &u.succ[v];
            let mut descended = false;
            while *i < edges.len() {
                let (l, w) = edges[*i];
                *i += 1;
                if l != TAU {
                    // rows are sorted and the silent label is 0
                    *i = edges.len();
                    continue;
                }
                let w = w as usize;
                if index[w] == u32::MAX {
                    index[w] = next;
                    low[w] = next;
                    next += 1;
                    stack.push(w);
                    on_stack[w] = true;
                    call.push((w, 0));
                    descended = true;
                    break;
                } else if on_stack[w] {
                    low[v] = low[v].min(index[w]);
                }
            }
            if descended {
                continue;
            }
            call.pop();
            if let Some(&(p, _)) = call.last() {
                low[p] = low[p].min(low[v]);
            }
            if low[v] == index[v] {
                loop {
                    let w = stack.pop().expect("tarjan stack");
                    on_stack[w] = false;
                    comp[w] = ncomp;
                    if w == v {
                        break;
                    }
                }
                ncomp += 1;
            }
        }
    }
    (comp, ncomp as usize)
}

const TERM_MARK: (u32, u32) = (u32::MAX, 0);
const DIV_MARK: (u32, u32) = (u32::MAX - 1, 0);

/// Coarsest branching bisimulation on the union, one block id per state.
fn branching_partition(u: &Union, divergence: bool) -> Vec<u32> {
    let (comp, ncomp) = tau_sccs(u);
    // quotient by silent cycles; components are numbered sinks first
    let mut ctriples = Vec::new();
    let mut cterm = vec![false; ncomp];
    let mut cdiv = vec![false; ncomp];
    for s in 0..u.len() {
        let c = comp[s] as usize;
        cterm[c] |= u.term[s];
        for &(l, t) in &u.succ[s] {
            let d = comp[t as usize];
            if l == TAU && d as usize == c {
                cdiv[c] = true;
            } else {
                ctriples.push((c as u32, l, d));
            }
        }
    }
    let csucc = Csr::build(ncomp, ctriples);

    let mut block = vec![0u32; ncomp];
    let mut nblocks = 1usize;
    // signatures of one round, back to back in `flat`
    let mut flat: Vec<(u32, u32)> = Vec::new();
    let mut range = vec![(0usize, 0usize); ncomp];
    let mut scratch: Vec<(u32, u32)> = Vec::new();
    let mut div = vec![false; ncomp];
    let mut next_block = vec![0u32; ncomp];
    loop {
        flat.clear();
        for c in 0..ncomp {
            scratch.clear();
            let mut d = cdiv[c];
            if cterm[c] {
                scratch.push(TERM_MARK);
            }
            for &(l, t) in &csucc[c] {
                let t = t as usize;
                if l == TAU && block[t] == block[c] {
                    let (a, b) = range[t];
                    scratch.extend_from_slice(&flat[a..b]);
                    d |= div[t];
                } else {
                    scratch.push((l, block[t]));
                }
            }
            if divergence && d {
                scratch.push(DIV_MARK);
            }
            scratch.sort_unstable();
            scratch.dedup();
            div[c] = d;
            range[c] = (flat.len(), flat.len() + scratch.len());
            flat.extend_from_slice(&scratch);
        }
        let mut ids: FxHashMap<(u32, &[(u32, u32)]), u32> = FxHashMap::default();
        ids.reserve(nblocks * 2);
        for c in 0..ncomp {
            let fresh = ids.len() as u32;
            let (a, b) = range[c];
            next_block[c] = *ids.entry((block[c], &flat[a..b])).or_insert(fresh);
        }
        let count = ids.len();
        std::mem::swap(&mut block, &mut next_block);
        if count == nblocks {
            break;
        }
        nblocks = count;
    }
    (0..u.len()).map(|s| block[comp[s] as usize]).collect()
}

/// Strict step matching of the two roots against the partition.
fn root_condition(u: &Union, block: &[u32]) -> bool {
    let [r1, r2] = u.roots;
    let covered = |a: usize, b: usize| {
        u.succ[a]
            .iter()
            .all(|&(l, t)| u.succ[b].iter().any(|&(m, w)| m == l && block[w as usize] == block[t as usize]))
    };
    u.term[r1] == u.term[r2] && covered(r1, r2) && covered(r2, r1)
}

/// Decides whether the extraction-side `lhs` and the protocol-side `rhs`
/// are (rooted) branching bisimilar after normalization and abstraction.
pub fn branching_bisim(lhs: &Lts, rhs: &Lts, cfg: &EquivConfig) -> EquivVerdict {
    let a = prepare(lhs, &cfg.lhs_abstraction, cfg.tau_prefix);
    let b = prepare(rhs, &cfg.rhs_abstraction, cfg.tau_prefix);
    let u = Union::new(&a, &b);
    let block = branching_partition(&u, cfg.divergence_sensitive);
    let [r1, r2] = u.roots;
    let related = block[r1] == block[r2];
    if related && (!cfg.rooted || root_condition(&u, &block)) {
        return EquivVerdict {
            equivalent: true,
            counterexample: None,
        };
    }
    let cex = if related {
        Counterexample {
            trace: Vec::new(),
            obligation: Obligation::Root,
        }
    } else {
        find_counterexample(&u, &block).unwrap_or_else(|| {
            let plain = branching_partition(&u, false);
            Counterexample {
                trace: Vec::new(),
                obligation: if cfg.divergence_sensitive && plain[r1] == plain[r2] {
                    Obligation::Divergence
                } else {
                    Obligation::Inert
                },
            }
        })
    };
    debug_assert!(counterexample_replays(&a, &b, &cex), "counterexample does not replay: {cex}");
    EquivVerdict {
        equivalent: false,
        counterexample: Some(cex),
    }
}

struct WeakInfo {
    closure: Vec<Vec<usize>>,
}

impl WeakInfo {
    fn new(u: &Union) -> WeakInfo {
        WeakInfo {
            closure: (0..u.len()).map(|s| u.tau_closure(s)).collect(),
        }
    }

    fn terminates(&self, u: &Union, s: usize) -> bool {
        self.closure[s].iter().any(|&x| u.term[x])
    }

    fn actions(&self, u: &Union, s: usize) -> BTreeSet<u32> {
        self.closure[s]
            .iter()
            .flat_map(|&x| u.succ[x].iter().map(|&(l, _)| l))
            .filter(|&l| l != TAU)
            .collect()
    }

    /// `{t | s ⇒ s' -l-> t}`.
    fn after(&self, u: &Union, s: usize, l: u32) -> Vec<usize> {
        let mut out: Vec<usize> = self.closure[s]
            .iter()
            .flat_map(|&x| u.succ[x].iter().filter(move |&&(m, _)| m == l).map(|&(_, t)| t as usize))
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }
}

fn local_obligation(u: &Union, w: &WeakInfo, p: usize, q: usize) -> Option<Obligation> {
    let (tp, tq) = (w.terminates(u, p), w.terminates(u, q));
    if tp != tq {
        return Some(Obligation::Termination {
            side: if tp { Side::Lhs } else { Side::Rhs },
        });
    }
    let (ap, aq) = (w.actions(u, p), w.actions(u, q));
    if ap == aq {
        return None;
    }
    if !tp && (ap.is_empty() || aq.is_empty()) {
        return Some(Obligation::Deadlock {
            side: if ap.is_empty() { Side::Lhs } else { Side::Rhs },
        });
    }
    let mut diff: Vec<(&Label, Side)> = ap
        .difference(&aq)
        .map(|&l| (&u.labels[l as usize], Side::Lhs))
        .chain(aq.difference(&ap).map(|&l| (&u.labels[l as usize], Side::Rhs)))
        .collect();
    diff.sort();
    let (label, side) = diff[0];
    Some(Obligation::MissingBranch {
        label: label.clone(),
        side,
    })
}

/// Shortest visible trace from the roots to a pair of inequivalent states
/// that differ locally, by 0-1 breadth-first search over such pairs.
fn find_counterexample(u: &Union, block: &[u32]) -> Option<Counterexample> {
    let w = WeakInfo::new(u);
    let [r1, r2] = u.roots;
    let mut parent: FxHashMap<(usize, usize), Option<((usize, usize), Option<u32>)>> = FxHashMap::default();
    let mut dist: FxHashMap<(usize, usize), usize> = FxHashMap::default();
    let mut deque = VecDeque::from([((r1, r2), 0usize)]);
    dist.insert((r1, r2), 0);
    parent.insert((r1, r2), None);
    let mut done: FxHashMap<(usize, usize), ()> = FxHashMap::default();

    while let Some((pair, d)) = deque.pop_front() {
        if done.insert(pair, ()).is_some() {
            continue;
        }
        let (p, q) = pair;
        if let Some(obligation) = local_obligation(u, &w, p, q) {
            let mut trace = Vec::new();
            let mut at = pair;
            while let Some(Some((prev, label))) = parent.get(&at) {
                if let Some(l) = label {
                    trace.push(u.labels[*l as usize].clone());
                }
                at = *prev;
            }
            trace.reverse();
            return Some(Counterexample { trace, obligation });
        }
        let mut relax = |next: (usize, usize), label: Option<u32>, deque: &mut VecDeque<((usize, usize), usize)>| {
            if block[next.0] == block[next.1] {
                return;
            }
            let nd = d + usize::from(label.is_some());
            if dist.get(&next).is_none_or(|&old| nd < old) {
                dist.insert(next, nd);
                parent.insert(next, Some((pair, label)));
                if label.is_some() {
                    deque.push_back((next, nd));
                } else {
                    deque.push_front((next, nd));
                }
            }
        };
        for &(l, t) in &u.succ[p] {
            let t = t as usize;
            if l == TAU {
                relax((t, q), None, &mut deque);
            } else {
                for q2 in w.after(u, q, l) {
                    relax((t, q2), Some(l), &mut deque);
                }
            }
        }
        for &(l, t) in &u.succ[q] {
            let t = t as usize;
            if l == TAU {
                relax((p, t), None, &mut deque);
            } else {
                for p2 in w.after(u, p, l) {
                    relax((p2, t), Some(l), &mut deque);
                }
            }
        }
    }
    None
}

/// Weak trace successors of the initial state of a prepared LTS.
fn replay(lts: &Lts, trace: &[Label]) -> (Union, Vec<usize>) {
    let u = Union::new(lts, &Lts::new());
    let mut current = u.tau_closure(u.roots[0]);
    for label in trace {
        let Some(l) = u.labels.get_index_of(label) else {
            return (u, Vec::new());
        };
        let mut next = BTreeSet::new();
        for &s in &current {
            for &(m, t) in &u.succ[s] {
                if m as usize == l {
                    next.extend(u.tau_closure(t as usize));
                }
            }
        }
        current = next.into_iter().collect();
    }
    (u, current)
}

/// Whether the counterexample's trace is possible on both prepared sides
/// and its obligation is observable there.
pub fn counterexample_replays(lhs: &Lts, rhs: &Lts, cex: &Counterexample) -> bool {
    let (ua, sa) = replay(lhs, &cex.trace);
    let (ub, sb) = replay(rhs, &cex.trace);
    if sa.is_empty() || sb.is_empty() {
        return false;
    }
    let wa = WeakInfo::new(&ua);
    let wb = WeakInfo::new(&ub);
    let sets = |side: Side| match side {
        Side::Lhs => (&ua, &wa, &sa),
        Side::Rhs => (&ub, &wb, &sb),
    };
    let can = |side: Side, s: usize, label: &Label| {
        let (u, w, _) = sets(side);
        u.labels.get_index_of(label).is_some_and(|l| !w.after(u, s, l as u32).is_empty())
    };
    let stuck = |side: Side, s: usize| {
        let (u, w, _) = sets(side);
        !w.terminates(u, s) && w.actions(u, s).is_empty()
    };
    let terminates = |side: Side, s: usize| {
        let (u, w, _) = sets(side);
        w.terminates(u, s)
    };
    let any = |side: Side, f: &dyn Fn(usize) -> bool| sets(side).2.iter().any(|&s| f(s));
    match &cex.obligation {
        Obligation::Termination { side } => {
            any(*side, &|s| terminates(*side, s)) && any(side.other(), &|s| !terminates(side.other(), s))
        }
        Obligation::Deadlock { side } => {
            any(*side, &|s| stuck(*side, s)) && any(side.other(), &|s| !stuck(side.other(), s))
        }
        Obligation::MissingBranch { label, side } => {
            any(*side, &|s| can(*side, s, label)) && any(side.other(), &|s| !can(side.other(), s, label))
        }
        Obligation::Inert | Obligation::Divergence | Obligation::Root => true,
    }
}

/// Greatest-fixpoint computation of branching bisimilarity by repeated
/// removal of pairs that violate the transfer conditions. Slow; meant as
/// an independent check of [`branching_bisim`].
pub fn naive_bisim_oracle(lhs: &Lts, rhs: &Lts, cfg: &EquivConfig) -> Result<bool, OracleError> {
    if cfg.divergence_sensitive {
        return Err(OracleError::DivergenceUnsupported);
    }
    let a = prepare(lhs, &cfg.lhs_abstraction, cfg.tau_prefix);
    let b = prepare(rhs, &cfg.rhs_abstraction, cfg.tau_prefix);
    let n = a.num_states() + b.num_states();
    if n > ORACLE_STATE_BOUND {
        return Err(OracleError::BoundExceeded {
            states: n,
            bound: ORACLE_STATE_BOUND,
        });
    }
    let u = Union::new(&a, &b);
    let closure: Vec<Vec<usize>> = (0..n).map(|s| u.tau_closure(s)).collect();
    let mut rel = vec![true; n * n];
    let r = |rel: &[bool], x: usize, y: usize| rel[x * n + y];

    // one direction of the transfer condition for (p, q)
    let simulates = |rel: &[bool], p: usize, q: usize| -> bool {
        if u.term[p] && !closure[q].iter().any(|&q2| u.term[q2] && r(rel, p, q2)) {
            return false;
        }
        u.succ[p].iter().all(|&(l, p1)| {
            let p1 = p1 as usize;
            (l == TAU && r(rel, p1, q))
                || closure[q].iter().any(|&q2| {
                    r(rel, p, q2) && u.succ[q2].iter().any(|&(m, q1)| m == l && r(rel, p1, q1 as usize))
                })
        })
    };
    loop {
        let mut changed = false;
        for p in 0..n {
            for q in 0..n {
                if rel[p * n + q] && !(simulates(&rel, p, q) && simulates(&rel, q, p)) {
                    rel[p * n + q] = false;
                    rel[q * n + p] = false;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    let [r1, r2] = u.roots;
    if !r(&rel, r1, r2) {
        return Ok(false);
    }
    if !cfg.rooted {
        return Ok(true);
    }
    let covered = |x: usize, y: usize| {
        u.succ[x]
            .iter()
            .all(|&(l, t)| u.succ[y].iter().any(|&(m, w)| m == l && r(&rel, t as usize, w as usize)))
    };
    Ok(u.term[r1] == u.term[r2] && covered(r1, r2) && covered(r2, r1))
}

/// Everything one run of the full pipeline produces.
#[derive(Clone, Debug)]
pub struct CheckOutcome {
    pub verdict: EquivVerdict,
    pub extraction: LtsStats,
    pub composition: LtsStats,
    pub invariants: InvariantReport,
}

/// Extract, compose, normalize and compare one thread. The composition is
/// built without abstraction; `equiv.rhs_abstraction` decides what is
/// hidden.
pub fn check_thread(
    thread: ThreadHandle<'_>,
    comp: &CompositionConfig,
    equiv: &EquivConfig,
) -> Result<CheckOutcome, ComposeError> {
    let lhs = extract_lts(thread);
    let cfg = CompositionConfig {
        abstraction: BTreeSet::new(),
        ..comp.clone()
    };
    let ex = explore(thread, &cfg)?;
    let verdict = branching_bisim(&lhs, &ex.lts, equiv);
    Ok(CheckOutcome {
        verdict,
        extraction: lhs.stats(),
        composition: ex.lts.stats(),
        invariants: ex.report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::composition::compose;

    fn act(name: &str) -> Label {
        Label::rcv_f(name, true)
    }

    /// Builds an LTS from `(from, label, to)` triples; `None` is tau.
    fn lts(n: usize, term: &[usize], edges: &[(usize, Option<&str>, usize)]) -> Lts {
        let mut l = Lts::new();
        for s in 0..n {
            l.add_state(format!("s{s}"), term.contains(&s));
        }
        for &(f, a, t) in edges {
            l.add_transition(f, a.map_or(Label::Tau, act), t);
        }
        l
    }

    fn plain() -> EquivConfig {
        EquivConfig {
            lhs_abstraction: BTreeSet::new(),
            rhs_abstraction: BTreeSet::new(),
            ..Default::default()
        }
    }

    #[test]
    fn tau_law_pair_is_equivalent() {
        let l1 = lts(4, &[], &[(0, Some("a"), 1), (1, None, 2), (2, Some("b"), 3)]);
        let l2 = lts(3, &[], &[(0, Some("a"), 1), (1, Some("b"), 2)]);
        let v = branching_bisim(&l1, &l2, &plain());
        assert!(v.equivalent, "{v}");
        assert_eq!(naive_bisim_oracle(&l1, &l2, &plain()), Ok(true));
    }

    #[test]
    fn choice_distribution_is_not_equivalent() {
        let l1 = lts(4, &[], &[(0, Some("a"), 1), (1, Some("b"), 2), (1, Some("c"), 3)]);
        let l2 = lts(
            5,
            &[],
            &[(0, Some("a"), 1), (0, Some("a"), 2), (1, Some("b"), 3), (2, Some("c"), 4)],
        );
        let v = branching_bisim(&l1, &l2, &plain());
        assert!(!v.equivalent);
        let cex = v.counterexample.unwrap();
        assert_eq!(cex.trace, vec![act("a")]);
        assert!(matches!(cex.obligation, Obligation::MissingBranch { side: Side::Lhs, .. }));
        let cfg = plain();
        let a = prepare(&l1, &cfg.lhs_abstraction, cfg.tau_prefix);
        let b = prepare(&l2, &cfg.rhs_abstraction, cfg.tau_prefix);
        assert!(counterexample_replays(&a, &b, &cex));
        assert_eq!(naive_bisim_oracle(&l1, &l2, &plain()), Ok(false));
    }

    #[test]
    fn root_condition_separates_tau_a_from_a() {
        let l1 = lts(3, &[], &[(0, None, 1), (1, Some("a"), 2)]);
        let l2 = lts(2, &[], &[(0, Some("a"), 1)]);
        let unrooted = EquivConfig {
            tau_prefix: false,
            ..plain()
        };
        let v = branching_bisim(&l1, &l2, &unrooted);
        assert!(!v.equivalent);
        assert_eq!(v.counterexample.unwrap().obligation, Obligation::Root);
        assert_eq!(naive_bisim_oracle(&l1, &l2, &unrooted), Ok(false));
        let loose = EquivConfig { rooted: false, ..unrooted };
        assert!(branching_bisim(&l1, &l2, &loose).equivalent);
        // with the common prefix both are τ·a
        assert!(branching_bisim(&l1, &l2, &plain()).equivalent);
    }

    #[test]
    fn inert_tau_versus_choice() {
        // τ·a + b against a + b
        let l1 = lts(4, &[], &[(0, None, 1), (1, Some("a"), 2), (0, Some("b"), 3)]);
        let l2 = lts(3, &[], &[(0, Some("a"), 1), (0, Some("b"), 2)]);
        let v = branching_bisim(&l1, &l2, &plain());
        assert!(!v.equivalent);
        let cex = v.counterexample.unwrap();
        assert!(cex.trace.is_empty());
        assert_eq!(
            cex.obligation,
            Obligation::MissingBranch {
                label: act("b"),
                side: Side::Rhs
            }
        );
        assert_eq!(naive_bisim_oracle(&l1, &l2, &plain()), Ok(false));
    }

    #[test]
    fn termination_is_observed() {
        let l1 = lts(2, &[1], &[(0, Some("a"), 1)]);
        let l2 = lts(2, &[], &[(0, Some("a"), 1)]);
        let v = branching_bisim(&l1, &l2, &plain());
        assert_eq!(
            v.counterexample.unwrap(),
            Counterexample {
                trace: vec![act("a")],
                obligation: Obligation::Termination { side: Side::Lhs }
            }
        );
    }

    #[test]
    fn divergence_flag() {
        // a·δ against a·(τ loop)
        let l1 = lts(2, &[], &[(0, Some("a"), 1)]);
        let l2 = lts(2, &[], &[(0, Some("a"), 1), (1, None, 1)]);
        assert!(branching_bisim(&l1, &l2, &plain()).equivalent);
        let sensitive = EquivConfig {
            divergence_sensitive: true,
            ..plain()
        };
        let v = branching_bisim(&l1, &l2, &sensitive);
        assert!(!v.equivalent);
        assert_eq!(v.counterexample.unwrap().obligation, Obligation::Divergence);
        assert_eq!(
            naive_bisim_oracle(&l1, &l2, &sensitive),
            Err(OracleError::DivergenceUnsupported)
        );
    }

    #[test]
    fn normalize_redirects_stp() {
        let mut l = Lts::new();
        let s0 = l.add_state("a", false);
        let s1 = l.add_state("b", false);
        let s2 = l.add_state("c", false);
        l.add_transition(s0, Label::Stp, s1);
        l.add_transition(s1, Label::Tau, s2);
        let n = normalize_termination(&l);
        assert_eq!(n.num_states(), 2);
        assert!(n.is_terminating(1));
        assert!(n.deadlock_states().is_empty());

        let no_stp = lts(2, &[], &[(0, Some("a"), 1)]);
        assert_eq!(normalize_termination(&no_stp), no_stp);
    }

    #[test]
    fn target_equation_on_branch_thread() {
        use crate::bta::parse_spec;
        use crate::protocol::Mode;
        let spec = parse_spec("X = f.m ? Y : Z\nY = S\nZ = D").unwrap();
        for maxlen in 0..3 {
            for mode in [Mode::Safe, Mode::Strict] {
                let comp = CompositionConfig {
                    maxlen,
                    mode,
                    ..Default::default()
                };
                let out = check_thread(spec.handle(), &comp, &EquivConfig::default()).unwrap();
                assert_eq!(out.verdict.equivalent, mode == Mode::Safe || maxlen > 0, "{maxlen} {mode}: {}", out.verdict);
            }
        }
        let lhs = extract_lts(spec.handle());
        let rhs = compose(spec.handle(), &CompositionConfig::default()).unwrap();
        assert_eq!(naive_bisim_oracle(&lhs, &rhs, &EquivConfig::default()), Ok(true));
    }

    #[test]
    fn oracle_bound() {
        let big = lts(200, &[], &[]);
        assert!(matches!(
            naive_bisim_oracle(&big, &big, &plain()),
            Err(OracleError::BoundExceeded { .. })
        ));
    }

    #[test]
    fn verdict_json() {
        let l1 = lts(2, &[1], &[(0, Some("a"), 1)]);
        let l2 = lts(2, &[], &[(0, Some("a"), 1)]);
        let json: serde_json::Value =
            serde_json::from_str(&branching_bisim(&l1, &l2, &plain()).to_json_string()).unwrap();
        assert_eq!(json["equivalent"], false);
        assert_eq!(json["counterexample"][0], "rcv_a(T)");
    }
}
