//! Selection and expansion policies for the instruction stream generator.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use smallvec::SmallVec;

use crate::bta::{ActionId, Instr, Minimization, Node, ThreadSpec};
use crate::protocol::{ReplySeq, Sym};

/// Generator frontier entry: the replies after which `node` must be
/// performed, together with the instructions whose replies they are.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AnnotatedEntry {
    pub prefix: ReplySeq,
    pub actions: SmallVec<[ActionId; 6]>,
    pub node: Node,
}

impl AnnotatedEntry {
    pub fn root(node: Node) -> Self {
        AnnotatedEntry {
            prefix: ReplySeq::new(),
            actions: SmallVec::new(),
            node,
        }
    }

    pub fn len(&self) -> usize {
        self.prefix.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prefix.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Selection {
    /// Minimum-length entries within the run-ahead bound.
    BreadthFirst,
    /// Entries whose replies happen with at least `threshold`. With
    /// `breadth_first` the minimum-length restriction still applies.
    ProbThreshold { threshold: f64, breadth_first: bool },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SelectionStrategy {
    pub selection: Selection,
    /// Send one `*` message instead of two when both branches are the same
    /// thread.
    pub wildcard: bool,
}

impl Default for SelectionStrategy {
    fn default() -> Self {
        Self::BREADTH
    }
}

impl SelectionStrategy {
    pub const BREADTH: SelectionStrategy = SelectionStrategy {
        selection: Selection::BreadthFirst,
        wildcard: false,
    };
    pub const PROB50: SelectionStrategy = SelectionStrategy {
        selection: Selection::ProbThreshold {
            threshold: 0.50,
            breadth_first: true,
        },
        wildcard: false,
    };
    pub const PROB95: SelectionStrategy = SelectionStrategy {
        selection: Selection::ProbThreshold {
            threshold: 0.95,
            breadth_first: false,
        },
        wildcard: false,
    };

    pub fn with_wildcard(mut self, on: bool) -> Self {
        self.wildcard = on;
        self
    }

    pub fn is_breadth_first(&self) -> bool {
        match self.selection {
            Selection::BreadthFirst => true,
            Selection::ProbThreshold { breadth_first, .. } => breadth_first,
        }
    }
}

impl fmt::Display for SelectionStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.selection {
            Selection::BreadthFirst => f.write_str("breadth")?,
            Selection::ProbThreshold {
                threshold,
                breadth_first,
            } => {
                if breadth_first && threshold == 0.50 {
                    f.write_str("prob50")?
                } else if !breadth_first && threshold == 0.95 {
                    f.write_str("prob95")?
                } else {
                    write!(f, "prob{threshold}{}", if breadth_first { "bf" } else { "" })?
                }
            }
        }
        if self.wildcard {
            f.write_str("+wildcard")?;
        }
        Ok(())
    }
}

impl FromStr for SelectionStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (base, wildcard) = match s.split_once('+') {
            Some((b, "wildcard")) => (b, true),
            Some((_, m)) => return Err(format!("unknown strategy modifier `{m}`")),
            None => (s, false),
        };
        let strategy = match base {
            "breadth" => Self::BREADTH,
            "prob50" => Self::PROB50,
            "prob95" => Self::PROB95,
            "wildcard" if !wildcard => Self::BREADTH.with_wildcard(true),
            other => return Err(format!("unknown strategy `{other}`")),
        };
        Ok(strategy.with_wildcard(wildcard || strategy.wildcard))
    }
}

/// Probability that the entry's replies happen, given per-action
/// probabilities of the reply `true`. `*` positions contribute 1.
pub fn residual_probability(entry: &AnnotatedEntry, prob: impl Fn(ActionId) -> f64) -> f64 {
    debug_assert_eq!(entry.prefix.len(), entry.actions.len());
    entry
        .prefix
        .iter()
        .zip(&entry.actions)
        .map(|(sym, &a)| match sym {
            Sym::T => prob(a),
            Sym::F => 1.0 - prob(a),
            Sym::Star => 1.0,
        })
        .product()
}

// guards against products such as 0.95 * 1.0 landing a hair under 0.95
const PROB_EPS: f64 = 1e-12;

/// Indices of the selectable frontier entries, most preferred first.
/// `frontier` is assumed sorted.
pub fn select(
    frontier: &[AnnotatedEntry],
    strategy: &SelectionStrategy,
    maxlen: usize,
    prob: impl Fn(ActionId) -> f64,
) -> Vec<usize> {
    let min_len = frontier.iter().map(AnnotatedEntry::len).min().unwrap_or(0);
    let breadth_ok = |e: &AnnotatedEntry| e.len() == min_len && e.len() <= maxlen;
    match strategy.selection {
        Selection::BreadthFirst => (0..frontier.len())
            .filter(|&i| breadth_ok(&frontier[i]))
            .collect(),
        Selection::ProbThreshold {
            threshold,
            breadth_first,
        } => {
            let mut picked: Vec<(usize, f64)> = frontier
                .iter()
                .enumerate()
                .filter(|(_, e)| {
                    if breadth_first {
                        breadth_ok(e)
                    } else {
                        e.len() <= maxlen
                    }
                })
                .map(|(i, e)| (i, residual_probability(e, &prob)))
                .filter(|&(i, p)| frontier[i].is_empty() || p >= threshold - PROB_EPS)
                .collect();
            picked.sort_by(|a, b| {
                b.1.partial_cmp(&a.1)
                    .unwrap_or(Ordering::Equal)
                    .then(frontier[a.0].len().cmp(&frontier[b.0].len()))
                    .then(frontier[a.0].prefix.cmp(&frontier[b.0].prefix))
            });
            picked.into_iter().map(|(i, _)| i).collect()
        }
    }
}

/// Children of an entry whose thread performs a basic action: one `*`
/// child when both continuations are the same thread (and wildcards are
/// on), two children otherwise. Entries for `S`/`D` have no children.
pub fn wildcard_expand(
    entry: &AnnotatedEntry,
    spec: &ThreadSpec,
    identity: Option<&Minimization>,
) -> SmallVec<[AnnotatedEntry; 2]> {
    let Instr::Basic(action) = spec.instr(entry.node) else {
        return SmallVec::new();
    };
    let on_true = spec.thrt(entry.node);
    let on_false = spec.thrf(entry.node);
    let mut actions = entry.actions.clone();
    actions.push(action);
    let child = |sym: Sym, node: Node| AnnotatedEntry {
        prefix: entry.prefix.pushed(sym),
        actions: actions.clone(),
        node,
    };
    match identity {
        Some(m) if m.same(on_true, on_false) => smallvec::smallvec![child(Sym::Star, on_true)],
        _ => smallvec::smallvec![child(Sym::T, on_true), child(Sym::F, on_false)],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bta::{parse_spec, VarId};

    fn entry(prefix: &str, node: u32) -> AnnotatedEntry {
        let prefix: ReplySeq = prefix.parse().unwrap();
        let actions = (0..prefix.len()).map(|_| ActionId(0)).collect();
        AnnotatedEntry {
            prefix,
            actions,
            node: Node::Var(VarId(node)),
        }
    }

    #[test]
    fn strategy_names_round_trip() {
        for name in ["breadth", "prob50", "prob95", "breadth+wildcard", "prob95+wildcard"] {
            let s: SelectionStrategy = name.parse().unwrap();
            assert_eq!(s.to_string(), name);
        }
        assert!("depth".parse::<SelectionStrategy>().is_err());
        assert!("breadth+fast".parse::<SelectionStrategy>().is_err());
    }

    #[test]
    fn residual_probability_products() {
        let mut e = AnnotatedEntry::root(Node::Dead);
        assert_eq!(residual_probability(&e, |_| 0.8), 1.0);
        e.prefix = "T".parse().unwrap();
        e.actions.push(ActionId(0));
        assert_eq!(residual_probability(&e, |_| 0.8), 0.8);
        e.prefix = "TF".parse().unwrap();
        e.actions.push(ActionId(1));
        let p = residual_probability(&e, |a| if a.0 == 0 { 0.8 } else { 0.6 });
        assert!((p - 0.32).abs() < 1e-12);
        e.prefix = "*F".parse().unwrap();
        let p = residual_probability(&e, |a| if a.0 == 0 { 0.8 } else { 0.6 });
        assert!((p - 0.4).abs() < 1e-12);
    }

    #[test]
    fn breadth_first_selection() {
        let mut f = vec![entry("T", 0), entry("F", 1), entry("TT", 2)];
        f.sort();
        let got: Vec<_> = select(&f, &SelectionStrategy::BREADTH, 2, |_| 0.5)
            .into_iter()
            .map(|i| f[i].prefix.to_string())
            .collect();
        assert_eq!(got, vec!["T", "F"]);
        assert!(select(&[entry("TT", 0)], &SelectionStrategy::BREADTH, 1, |_| 0.5).is_empty());
    }

    #[test]
    fn prob50_keeps_likely_branch() {
        let f = vec![entry("T", 0), entry("F", 1)];
        let got = select(&f, &SelectionStrategy::PROB50, 2, |_| 0.8);
        assert_eq!(got, vec![0]);
        // at 0.5 both branches qualify
        assert_eq!(select(&f, &SelectionStrategy::PROB50, 2, |_| 0.5).len(), 2);
    }

    #[test]
    fn prob95_drops_breadth_restriction() {
        let mut f = vec![entry("TT", 0), entry("F", 1)];
        f.sort();
        let got = select(&f, &SelectionStrategy::PROB95, 2, |_| 0.99);
        assert_eq!(got.len(), 1);
        assert_eq!(f[got[0]].prefix.to_string(), "TT");
        // empty prefix always selected
        let f = vec![entry("", 0)];
        assert_eq!(select(&f, &SelectionStrategy::PROB95, 0, |_| 0.5), vec![0]);
    }

    #[test]
    fn expands_identical_branches_once() {
        let spec = parse_spec("X = f.m ? Y : Y\nY = S").unwrap();
        let m = spec.minimize();
        let root = AnnotatedEntry::root(spec.start_node());
        let kids = wildcard_expand(&root, &spec, Some(&m));
        assert_eq!(kids.len(), 1);
        assert_eq!(kids[0].prefix.to_string(), "*");
        assert_eq!(kids[0].actions.as_slice(), &[ActionId(0)]);
        assert_eq!(wildcard_expand(&root, &spec, None).len(), 2);

        let spec = parse_spec("X = f.m ? Y : Z\nY = g.n ? Y : Y\nZ = g.n ? Z : Z").unwrap();
        let m = spec.minimize();
        let kids = wildcard_expand(&AnnotatedEntry::root(spec.start_node()), &spec, Some(&m));
        assert_eq!(kids.len(), 1, "bisimilar branches count as identical");

        let spec = parse_spec("X = f.m ? Y : Z\nY = S\nZ = D").unwrap();
        let m = spec.minimize();
        let kids = wildcard_expand(&AnnotatedEntry::root(spec.start_node()), &spec, Some(&m));
        assert_eq!(kids.len(), 2);
    }
}
