use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use instream_core::bta::{parse_spec, print_spec, Node};
use instream_core::composition::CompositionConfig;
use instream_core::corpus::{random_lts, random_specs};
use instream_core::equivalence::{branching_bisim, check_thread, EquivConfig};
use instream_core::lts::LabelKind;
use instream_core::protocol::{GenSlot, Generator, Mode, ProtocolConfig};
use instream_core::sim::{simulate, Environment, SimConfig};
use instream_core::strategy::{select, AnnotatedEntry, Selection, SelectionStrategy};

fn plain() -> EquivConfig {
    EquivConfig {
        lhs_abstraction: BTreeSet::new(),
        rhs_abstraction: BTreeSet::new(),
        ..Default::default()
    }
}

fn all_nodes(spec: &instream_core::ThreadSpec) -> Vec<Node> {
    spec.vars().map(Node::Var).chain([Node::Dead]).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn print_parse_round_trip(seed in any::<u64>()) {
        for e in random_specs(4, 5, seed) {
            let text = print_spec(&e.spec);
            let back = parse_spec(&text).unwrap();
            prop_assert_eq!(&back, &e.spec);
        }
    }

    #[test]
    fn minimize_is_idempotent(seed in any::<u64>()) {
        for e in random_specs(4, 5, seed) {
            let once = e.spec.minimize();
            let twice = once.spec().minimize();
            prop_assert_eq!(once.spec().len(), twice.spec().len());
            // already minimal: distinct equations stay distinct threads
            let vars: Vec<_> = once.spec().vars().collect();
            for &a in &vars {
                for &b in &vars {
                    prop_assert_eq!(twice.same(Node::Var(a), Node::Var(b)), a == b);
                }
            }
        }
    }

    #[test]
    fn thread_equality_is_an_equivalence(seed in any::<u64>()) {
        for e in random_specs(3, 5, seed) {
            let m = e.spec.minimize();
            let nodes = all_nodes(&e.spec);
            for &a in &nodes {
                prop_assert!(m.same(a, a));
                for &b in &nodes {
                    prop_assert_eq!(m.same(a, b), m.same(b, a));
                    for &c in &nodes {
                        if m.same(a, b) && m.same(b, c) {
                            prop_assert!(m.same(a, c));
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn bisim_is_reflexive_and_symmetric(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_lts(&mut rng, 10);
        let b = random_lts(&mut rng, 10);
        prop_assert!(branching_bisim(&a, &a, &plain()).equivalent);
        prop_assert_eq!(
            branching_bisim(&a, &b, &plain()).equivalent,
            branching_bisim(&b, &a, &plain()).equivalent
        );
    }

    #[test]
    fn hiding_absent_kinds_changes_nothing(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_lts(&mut rng, 10);
        let b = random_lts(&mut rng, 10);
        let with_j = EquivConfig {
            lhs_abstraction: [LabelKind::JAct].into(),
            rhs_abstraction: [LabelKind::JAct].into(),
            ..plain()
        };
        prop_assert_eq!(
            branching_bisim(&a, &b, &plain()).equivalent,
            branching_bisim(&a, &b, &with_j).equivalent
        );
    }

    #[test]
    fn zero_threshold_breadth_first_selects_like_breadth(
        lens in proptest::collection::vec(0usize..4, 1..8),
        maxlen in 0usize..4,
        p in 0.0f64..=1.0,
    ) {
        let frontier: Vec<AnnotatedEntry> = lens
            .iter()
            .enumerate()
            .map(|(i, &len)| {
                let mut e = AnnotatedEntry::root(Node::Var(instream_core::bta::VarId(i as u32)));
                for k in 0..len {
                    e.prefix = e.prefix.pushed(if (i >> k) & 1 == 1 {
                        instream_core::protocol::Sym::T
                    } else {
                        instream_core::protocol::Sym::F
                    });
                    e.actions.push(instream_core::bta::ActionId(0));
                }
                e
            })
            .collect();
        let zero = SelectionStrategy {
            selection: Selection::ProbThreshold { threshold: 0.0, breadth_first: true },
            wildcard: false,
        };
        let a: BTreeSet<_> = select(&frontier, &SelectionStrategy::BREADTH, maxlen, |_| p).into_iter().collect();
        let b: BTreeSet<_> = select(&frontier, &zero, maxlen, |_| p).into_iter().collect();
        prop_assert_eq!(&a, &b);
        for s in [SelectionStrategy::PROB50, SelectionStrategy::PROB95] {
            let got: BTreeSet<_> = select(&frontier, &s, maxlen, |_| p).into_iter().collect();
            for (i, e) in frontier.iter().enumerate() {
                if e.is_empty() {
                    prop_assert!(got.contains(&i));
                }
            }
        }
    }

    #[test]
    fn strict_steps_are_safe_steps(seed in any::<u64>(), maxlen in 0u32..3, reply in any::<bool>()) {
        for e in random_specs(3, 4, seed) {
            let cfg = |mode| ProtocolConfig { maxlen, mode, strategy: SelectionStrategy::BREADTH };
            let safe = Generator::new(&e.spec, cfg(Mode::Safe));
            let strict = Generator::new(&e.spec, cfg(Mode::Strict));
            let s0 = GenSlot::Active(safe.initial(e.spec.start_node()));
            let mut states = vec![s0];
            // a few layers of the safe generator on its own; with a reply
            // always on offer it can receive more than it sent, so states
            // past the counter bound are dropped
            for _ in 0..3 {
                let mut next = Vec::new();
                for s in &states {
                    let (Ok(a), Ok(b)) = (safe.steps(s, Some(reply)), strict.steps(s, Some(reply))) else {
                        continue;
                    };
                    for step in &b {
                        prop_assert!(a.contains(step));
                    }
                    next.extend(a.into_iter().map(|(_, t)| t));
                }
                states = next;
            }
        }
    }

    #[test]
    fn simulation_accounting(seed in any::<u64>(), maxlen in 0u32..3, wildcard in any::<bool>()) {
        for e in random_specs(3, 5, seed) {
            let cfg = SimConfig {
                maxlen,
                strategy: SelectionStrategy::BREADTH.with_wildcard(wildcard),
                environment: Environment::Random,
                seed,
                horizon: 2_000,
                ..Default::default()
            };
            if let Ok(run) = simulate(e.spec.handle(), &cfg) {
                let m = &run.metrics;
                prop_assert_eq!(m.busy + m.idle, m.total);
                prop_assert!((0.0..=1.0).contains(&m.utilization));
                prop_assert!(m.discarded <= m.msgs);
                prop_assert!(m.msgs >= m.steps);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn random_threads_satisfy_the_target_equation(seed in any::<u64>(), maxlen in 0u32..3, cap in 1usize..3) {
        for e in random_specs(2, 4, seed) {
            let comp = CompositionConfig { maxlen, capacity_msg: cap, capacity_reply: cap, ..Default::default() };
            let out = check_thread(e.spec.handle(), &comp, &EquivConfig::default()).unwrap();
            prop_assert!(out.verdict.equivalent, "{}: {}", print_spec(&e.spec), out.verdict);
        }
    }
}
