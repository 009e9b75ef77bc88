//! Thread corpora for the acceptance suites and the simulator.

use std::collections::{BTreeMap, VecDeque};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bta::{BasicAction, RhsSpec, ThreadSpec};
use crate::lts::{Label, Lts};

pub const RANDOM_CORPUS_SEED: u64 = 0x5eed_2007;

#[derive(Clone, Debug)]
pub struct CorpusEntry {
    pub name: String,
    pub spec: ThreadSpec,
}

fn alphabet() -> [BasicAction; 2] {
    [BasicAction::new("f", "m"), BasicAction::new("g", "n")]
}

fn var_name(i: usize) -> String {
    format!("X{i}")
}

/// Right-hand side choices over `n` variables, as `(kind, action, t, f)`
/// with kind 0 = S, 1 = D, 2 = postconditional.
fn choices(n: usize) -> Vec<(u8, usize, usize, usize)> {
    let mut out = vec![(0, 0, 0, 0), (1, 0, 0, 0)];
    for a in 0..2 {
        for t in 0..n {
            for f in 0..n {
                out.push((2, a, t, f));
            }
        }
    }
    out
}

/// Whether breadth-first traversal from `X0` (true branch first) visits
/// every variable, in index order.
fn is_canonical(rhs: &[(u8, usize, usize, usize)]) -> bool {
    let mut order = vec![0usize];
    let mut seen = vec![false; rhs.len()];
    seen[0] = true;
    let mut queue = VecDeque::from([0usize]);
    while let Some(v) = queue.pop_front() {
        let (kind, _, t, f) = rhs[v];
        if kind != 2 {
            continue;
        }
        for w in [t, f] {
            if !seen[w] {
                seen[w] = true;
                order.push(w);
                queue.push_back(w);
            }
        }
    }
    order.len() == rhs.len() && order.iter().enumerate().all(|(i, &v)| i == v)
}

fn build(rhs: &[(u8, usize, usize, usize)]) -> ThreadSpec {
    let alpha = alphabet();
    let equations = rhs
        .iter()
        .enumerate()
        .map(|(i, &(kind, a, t, f))| {
            let r = match kind {
                0 => RhsSpec::Terminate,
                1 => RhsSpec::Deadlock,
                _ => RhsSpec::post(alpha[a].clone(), var_name(t), var_name(f)),
            };
            (var_name(i), r)
        })
        .collect();
    ThreadSpec::new(equations, None, BTreeMap::new()).expect("generated spec is closed")
}

/// Every spec with at most `max_equations` equations over `f.m` and
/// `g.n` in which all variables are reachable from the start, one per
/// renaming class: variables are numbered in breadth-first order.
pub fn enumerate_specs(max_equations: usize) -> Vec<CorpusEntry> {
    let mut out = Vec::new();
    for n in 1..=max_equations {
        let ch = choices(n);
        let mut idx = vec![0usize; n];
        loop {
            let rhs: Vec<_> = idx.iter().map(|&i| ch[i]).collect();
            if is_canonical(&rhs) {
                out.push(CorpusEntry {
                    name: format!("enum-{n}-{}", out.len()),
                    spec: build(&rhs),
                });
            }
            // odometer increment
            let mut k = 0;
            while k < n {
                idx[k] += 1;
                if idx[k] < ch.len() {
                    break;
                }
                idx[k] = 0;
                k += 1;
            }
            if k == n {
                break;
            }
        }
    }
    out
}

/// `count` specs with 1 to `max_equations` equations drawn from a seeded
/// generator. Unreachable equations are kept.
pub fn random_specs(count: usize, max_equations: usize, seed: u64) -> Vec<CorpusEntry> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let n = rng.random_range(1..=max_equations);
            let rhs: Vec<_> = (0..n)
                .map(|_| {
                    // branches dominate so that threads get some depth
                    let kind = match rng.random_range(0..10) {
                        0 => 0,
                        1 => 1,
                        _ => 2,
                    };
                    (kind, rng.random_range(0..2), rng.random_range(0..n), rng.random_range(0..n))
                })
                .collect();
            CorpusEntry {
                name: format!("random-{i}"),
                spec: build(&rhs),
            }
        })
        .collect()
}

/// The corpus of the target-equation suite: all enumerated specs with at
/// most three equations plus 50 random ones with at most five.
pub fn standard_corpus() -> Vec<CorpusEntry> {
    let mut c = enumerate_specs(3);
    c.extend(random_specs(50, 5, RANDOM_CORPUS_SEED));
    c
}

/// `X0 = f.m ? X1 : X1, ..., X{d-1} = .. ? Xd : Xd, Xd = S`, alternating
/// the two actions.
pub fn linear_thread(depth: usize) -> ThreadSpec {
    let rhs: Vec<_> = (0..=depth)
        .map(|i| if i == depth { (0, 0, 0, 0) } else { (2, i % 2, i + 1, i + 1) })
        .collect();
    build(&rhs)
}

/// `X = f.m ? Y : Z`, `Y = S`, `Z = D`.
pub fn branch_thread() -> ThreadSpec {
    ThreadSpec::new(
        vec![
            ("X".into(), RhsSpec::post(BasicAction::new("f", "m"), "Y", "Z")),
            ("Y".into(), RhsSpec::Terminate),
            ("Z".into(), RhsSpec::Deadlock),
        ],
        None,
        BTreeMap::new(),
    )
    .expect("closed")
}

/// A loop that continues on `true` with probability `p` and stops on
/// `false`: `X0 = f.m ? X1 : X2`, `X1 = g.n ? X0 : X2`, `X2 = S`.
pub fn skewed_loop(p: f64) -> ThreadSpec {
    build(&[(2, 0, 1, 2), (2, 1, 0, 2), (0, 0, 0, 0)]).with_uniform_probability(p)
}

fn small_label(i: usize) -> Label {
    match i {
        0 => Label::Tau,
        1 => Label::snd_f(&BasicAction::new("a", "m")),
        _ => Label::snd_f(&BasicAction::new("b", "m")),
    }
}

/// Random LTS over `tau`, `a.m` and `b.m` with 1 to `max_states` states,
/// up to three outgoing steps per state and a few terminating states.
pub fn random_lts<R: Rng>(rng: &mut R, max_states: usize) -> Lts {
    let n = rng.random_range(1..=max_states.max(1));
    let mut l = Lts::new();
    for _ in 0..n {
        l.add_state(String::new(), rng.random_bool(0.2));
    }
    for s in 0..n {
        for _ in 0..rng.random_range(0..=3) {
            l.add_transition(s, small_label(rng.random_range(0..3)), rng.random_range(0..n));
        }
    }
    l
}

/// Applies one rewrite that preserves rooted branching bisimilarity
/// below the root: a step `s -a-> t` becomes `s -a-> m -tau-> t` with a
/// fresh `m`, or a state gets a copy that takes over some incoming steps.
fn rewrite<R: Rng>(rng: &mut R, l: &Lts) -> Lts {
    let mut out = l.clone();
    let ts = l.transitions().to_vec();
    if ts.is_empty() {
        return out;
    }
    if rng.random_bool(0.5) {
        let k = rng.random_range(0..ts.len());
        let m = out.add_state(String::new(), false);
        let tau = out.label_id(Label::Tau);
        out.transitions[k].to = m;
        out.add_transition_id(m, tau, ts[k].to);
    } else {
        let s = ts[rng.random_range(0..ts.len())].to;
        let copy = out.add_state(String::new(), l.is_terminating(s));
        for t in ts.iter().filter(|t| t.from == s) {
            out.add_transition_id(copy, t.label, t.to);
        }
        for t in out.transitions.iter_mut() {
            if t.to == s && t.from != copy && rng.random_bool(0.5) {
                t.to = copy;
            }
        }
    }
    out
}

/// Random renumbering of the states; the initial state follows along.
fn shuffle<R: Rng>(rng: &mut R, l: &Lts) -> Lts {
    let n = l.num_states();
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    let mut out = Lts::new();
    let mut inv = vec![0; n];
    for (new, &old) in perm.iter().enumerate() {
        inv[old] = new;
    }
    for &old in &perm {
        out.add_state(String::new(), l.is_terminating(old));
    }
    out.set_initial(inv[l.initial()]);
    for t in l.transitions() {
        out.add_transition(inv[t.from], l.label(t.label).clone(), inv[t.to]);
    }
    out
}

/// Seeded pairs with at most `max_states` states each. Half are
/// independent draws; the other half are a draw and a rewritten,
/// renumbered copy, which is mutated once with probability one half.
pub fn random_lts_pairs(count: usize, max_states: usize, seed: u64) -> Vec<(Lts, Lts)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            if rng.random_bool(0.5) {
                return (random_lts(&mut rng, max_states), random_lts(&mut rng, max_states));
            }
            let base_max = max_states.saturating_sub(3).max(1);
            let a = random_lts(&mut rng, base_max);
            let mut b = a.clone();
            for _ in 0..rng.random_range(0..=3) {
                if b.num_states() < max_states {
                    b = rewrite(&mut rng, &b);
                }
            }
            if rng.random_bool(0.5) && !b.transitions.is_empty() {
                let k = rng.random_range(0..b.transitions.len());
                let label = b.label_id(small_label(rng.random_range(0..3)));
                b.transitions[k].label = label;
            }
            (a, shuffle(&mut rng, &b))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    /// Counts renaming classes of all-reachable specs by brute force:
    /// canonical form is the least encoding over all permutations that
    /// fix the start variable.
    fn brute_force_count(n: usize) -> usize {
        fn perms(items: Vec<usize>) -> Vec<Vec<usize>> {
            if items.is_empty() {
                return vec![vec![]];
            }
            let mut out = Vec::new();
            for i in 0..items.len() {
                let mut rest = items.clone();
                let x = rest.remove(i);
                for mut p in perms(rest) {
                    p.insert(0, x);
                    out.push(p);
                }
            }
            out
        }
        let ch = choices(n);
        let ps: Vec<Vec<usize>> = perms((1..n).collect())
            .into_iter()
            .map(|p| std::iter::once(0).chain(p).collect())
            .collect();
        let reachable_all = |rhs: &[(u8, usize, usize, usize)]| {
            let mut seen = vec![false; n];
            let mut stack = vec![0];
            seen[0] = true;
            while let Some(v) = stack.pop() {
                if rhs[v].0 == 2 {
                    for w in [rhs[v].2, rhs[v].3] {
                        if !seen[w] {
                            seen[w] = true;
                            stack.push(w);
                        }
                    }
                }
            }
            seen.iter().all(|&s| s)
        };
        let mut classes = BTreeSet::new();
        let total = ch.len().pow(n as u32);
        for code in 0..total {
            let mut c = code;
            let rhs: Vec<_> = (0..n)
                .map(|_| {
                    let r = ch[c % ch.len()];
                    c /= ch.len();
                    r
                })
                .collect();
            if !reachable_all(&rhs) {
                continue;
            }
            let canon = ps
                .iter()
                .map(|p| {
                    // p maps old index -> new index
                    let mut renamed = vec![(0u8, 0usize, 0usize, 0usize); n];
                    for (old, &(k, a, t, f)) in rhs.iter().enumerate() {
                        renamed[p[old]] = if k == 2 { (k, a, p[t], p[f]) } else { (k, 0, 0, 0) };
                    }
                    renamed
                })
                .min()
                .unwrap();
            classes.insert(canon);
        }
        classes.len()
    }

    #[test]
    fn enumeration_matches_brute_force_orbits() {
        let specs = enumerate_specs(3);
        for n in 1..=3 {
            let ours = specs.iter().filter(|e| e.spec.len() == n).count();
            assert_eq!(ours, brute_force_count(n), "n = {n}");
        }
        assert_eq!(specs.len(), 2064);
    }

    #[test]
    fn random_corpus_is_seeded() {
        let a = random_specs(50, 5, RANDOM_CORPUS_SEED);
        let b = random_specs(50, 5, RANDOM_CORPUS_SEED);
        assert_eq!(a.len(), 50);
        assert!(a.iter().zip(&b).all(|(x, y)| x.spec == y.spec));
        assert!(a.iter().all(|e| (1..=5).contains(&e.spec.len())));
    }

    #[test]
    fn lts_pairs_are_small_and_seeded() {
        let a = random_lts_pairs(40, 10, 7);
        let b = random_lts_pairs(40, 10, 7);
        assert_eq!(a, b);
        assert!(a.iter().all(|(x, y)| x.num_states() <= 10 && y.num_states() <= 10));
    }

    #[test]
    fn linear_thread_shape() {
        let spec = linear_thread(8);
        assert_eq!(spec.len(), 9);
        assert_eq!(spec.residuals(spec.start_node()).len(), 9);
        let m = spec.minimize();
        for v in spec.vars() {
            let node = crate::bta::Node::Var(v);
            assert!(m.same(spec.thrt(node), spec.thrf(node)));
        }
    }
}
