//! Process extraction: the behaviour of a thread as an LTS of requests to
//! and replies from its services.

use std::collections::HashMap;

use crate::bta::{Node, Rhs, ThreadHandle};
use crate::lts::{Label, Lts};

/// Builds the LTS of `⟨|t|⟩c`, keeping `stp` visible.
///
/// Each residual thread gets one state; postconditional residuals get an
/// extra state that awaits the reply. `S` steps with `stp` into a shared
/// terminating sink, `D` steps with `i` into a shared dead sink.
pub fn extract_lts(thread: ThreadHandle<'_>) -> Lts {
    let spec = thread.spec;
    let residuals = spec.residuals(thread.node);
    let mut lts = Lts::new();
    let mut state_of: HashMap<Node, usize> = HashMap::new();

    // start state first so it is numbered 0
    let mut order: Vec<Node> = vec![thread.node];
    order.extend(residuals.iter().copied().filter(|&n| n != thread.node));
    for &n in &order {
        let s = lts.add_state(spec.node_name(n), false);
        state_of.insert(n, s);
    }
    lts.set_initial(state_of[&thread.node]);

    let mut stop_sink = None;
    let mut dead_sink = None;
    for &n in &order {
        let s = state_of[&n];
        let rhs = match n {
            Node::Var(v) => spec.rhs(v),
            Node::Dead => Rhs::Deadlock,
        };
        match rhs {
            Rhs::Terminate => {
                let sink = *stop_sink.get_or_insert_with(|| lts.add_state("stop", true));
                lts.add_transition(s, Label::Stp, sink);
            }
            Rhs::Deadlock => {
                let sink = *dead_sink.get_or_insert_with(|| lts.add_state("dead", false));
                lts.add_transition(s, Label::IAct, sink);
            }
            Rhs::Post {
                action,
                on_true,
                on_false,
            } => {
                let a = spec.action(action);
                let wait = lts.add_state(format!("{}/wait", spec.node_name(n)), false);
                lts.add_transition(s, Label::snd_f(a), wait);
                lts.add_transition(wait, Label::rcv_f(&a.focus, true), state_of[&Node::Var(on_true)]);
                lts.add_transition(wait, Label::rcv_f(&a.focus, false), state_of[&Node::Var(on_false)]);
            }
        }
    }
    lts
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bta::parse_spec;

    #[test]
    fn stop_thread() {
        let s = parse_spec("X = S").unwrap();
        let lts = extract_lts(s.handle());
        assert_eq!(lts.num_states(), 2);
        assert_eq!(lts.transitions().len(), 1);
        assert_eq!(lts.label(lts.transitions()[0].label), &Label::Stp);
        assert!(lts.is_terminating(lts.transitions()[0].to));
        let stats = lts.stats();
        assert_eq!((stats.states, stats.transitions, stats.terminating), (2, 1, 1));
        assert!(stats.deadlock_states.is_empty());
    }

    #[test]
    fn dead_thread() {
        let s = parse_spec("X = D").unwrap();
        let lts = extract_lts(s.handle());
        assert_eq!(lts.num_states(), 2);
        assert_eq!(lts.label(lts.transitions()[0].label), &Label::IAct);
        let stats = lts.stats();
        assert_eq!((stats.states, stats.transitions, stats.terminating), (2, 1, 0));
        assert_eq!(stats.deadlock_states.len(), 1);
    }

    #[test]
    fn branch_thread_counts() {
        // X -snd-> wait -T-> Y -stp-> stop ; wait -F-> Z -i-> dead
        let s = parse_spec("X = f.m ? Y : Z\nY = S\nZ = D").unwrap();
        let lts = extract_lts(s.handle());
        assert_eq!(lts.num_states(), 6);
        assert_eq!(lts.transitions().len(), 5);
        let out = lts.outgoing();
        let wait = out[lts.initial()][0].1;
        assert_eq!(out[wait].len(), 2);
    }
}
