//! Regular threads as flattened guarded recursive specifications.
//!
//! Every equation has one of three right-hand sides: `S` (termination), `D`
//! (inaction), or a single postconditional composition `f.m ? X : Y` whose
//! branches are variable references. Guardedness is therefore a syntactic
//! property, and the residual threads of a thread are exactly the equation
//! names reachable from it.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt;

use thiserror::Error;

/// A basic action `focus.method`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BasicAction {
    pub focus: String,
    pub method: String,
}

impl BasicAction {
    pub fn new(focus: impl Into<String>, method: impl Into<String>) -> Self {
        BasicAction {
            focus: focus.into(),
            method: method.into(),
        }
    }

    /// Parses `focus.method`; both parts lowercase alphanumeric and nonempty.
    pub fn parse(text: &str) -> Option<Self> {
        let (focus, method) = text.split_once('.')?;
        if is_action_part(focus) && is_action_part(method) {
            Some(BasicAction::new(focus, method))
        } else {
            None
        }
    }
}

fn is_action_part(s: &str) -> bool {
    !s.is_empty()
        && s
            .chars()
            .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit())
}

impl fmt::Display for BasicAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.focus, self.method)
    }
}

/// Instruction as seen by the protocol: a basic action or one of the two
/// special instructions.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ExtAction {
    Basic(BasicAction),
    Stop,
    Dead,
}

impl fmt::Display for ExtAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExtAction::Basic(a) => a.fmt(f),
            ExtAction::Stop => f.write_str("stop"),
            ExtAction::Dead => f.write_str("dead"),
        }
    }
}

/// Index into a spec's interned action table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ActionId(pub u32);

/// Index of an equation in a spec.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VarId(pub u32);

/// A thread state: an equation of the spec, or the canonical `D` that
/// `thrt`/`thrf` yield on `S` and `D`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Node {
    Var(VarId),
    Dead,
}

/// Interned instruction, used inside protocol states.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Instr {
    Basic(ActionId),
    Stop,
    Dead,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Rhs {
    Terminate,
    Deadlock,
    Post {
        action: ActionId,
        on_true: VarId,
        on_false: VarId,
    },
}

/// Right-hand side by name, used to build specs programmatically.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RhsSpec {
    Terminate,
    Deadlock,
    Post {
        action: BasicAction,
        on_true: String,
        on_false: String,
    },
}

impl RhsSpec {
    pub fn post(action: BasicAction, on_true: impl Into<String>, on_false: impl Into<String>) -> Self {
        RhsSpec::Post {
            action,
            on_true: on_true.into(),
            on_false: on_false.into(),
        }
    }
}

/// Probability used for actions without an `@prob` annotation.
pub const DEFAULT_PROBABILITY: f64 = 0.5;

#[derive(Clone, Debug, PartialEq)]
pub struct ThreadSpec {
    names: Vec<String>,
    equations: Vec<Rhs>,
    start: VarId,
    actions: Vec<BasicAction>,
    probs: BTreeMap<BasicAction, f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SpecError {
    #[error("unknown variable {name} at line {line}")]
    UnknownVariable { name: String, line: usize },
    #[error("duplicate equation for {name} at line {line}")]
    DuplicateEquation { name: String, line: usize },
    #[error("malformed action {text} at line {line}")]
    MalformedAction { text: String, line: usize },
    #[error("missing start variable")]
    MissingStart,
    #[error("unknown start variable {name} at line {line}")]
    UnknownStart { name: String, line: usize },
    #[error("invalid variable name {text} at line {line}")]
    BadName { text: String, line: usize },
    #[error("invalid probability {text} at line {line}")]
    BadProbability { text: String, line: usize },
    #[error("syntax error at line {line}: {message}")]
    Syntax { line: usize, message: String },
}

/// Nonempty list of problems found while reading a spec.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub struct ParseErrors(pub Vec<SpecError>);

impl fmt::Display for ParseErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{e}")?;
        }
        Ok(())
    }
}

fn is_var_name(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    s != "S" && s != "D" && chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '\'')
}

impl ThreadSpec {
    /// Builds a spec from named equations. Line numbers in errors are the
    /// 1-based position of the equation in `equations`.
    pub fn new(
        equations: Vec<(String, RhsSpec)>,
        start: Option<&str>,
        probs: BTreeMap<BasicAction, f64>,
    ) -> Result<Self, ParseErrors> {
        let lines: Vec<usize> = (1..=equations.len()).collect();
        Self::build(equations, &lines, start.map(|s| (s.to_string(), 0)), probs)
    }

    fn build(
        equations: Vec<(String, RhsSpec)>,
        lines: &[usize],
        start: Option<(String, usize)>,
        probs: BTreeMap<BasicAction, f64>,
    ) -> Result<Self, ParseErrors> {
        let mut errors = Vec::new();
        let mut index: HashMap<&str, u32> = HashMap::new();
        for (i, (name, _)) in equations.iter().enumerate() {
            if !is_var_name(name) {
                errors.push(SpecError::BadName {
                    text: name.clone(),
                    line: lines[i],
                });
            }
            if index.insert(name.as_str(), i as u32).is_some() {
                errors.push(SpecError::DuplicateEquation {
                    name: name.clone(),
                    line: lines[i],
                });
            }
        }
        // duplicates keep the first definition
        let mut index: HashMap<&str, u32> = HashMap::new();
        for (i, (name, _)) in equations.iter().enumerate() {
            index.entry(name.as_str()).or_insert(i as u32);
        }

        let mut actions: Vec<BasicAction> = Vec::new();
        let mut action_ids: HashMap<BasicAction, u32> = HashMap::new();
        let mut rhs = Vec::with_capacity(equations.len());
        for (i, (_, spec)) in equations.iter().enumerate() {
            let r = match spec {
                RhsSpec::Terminate => Rhs::Terminate,
                RhsSpec::Deadlock => Rhs::Deadlock,
                RhsSpec::Post {
                    action,
                    on_true,
                    on_false,
                } => {
                    let mut lookup = |n: &str| match index.get(n) {
                        Some(&v) => VarId(v),
                        None => {
                            errors.push(SpecError::UnknownVariable {
                                name: n.to_string(),
                                line: lines[i],
                            });
                            VarId(0)
                        }
                    };
                    let t = lookup(on_true);
                    let f = lookup(on_false);
                    let id = *action_ids.entry(action.clone()).or_insert_with(|| {
                        actions.push(action.clone());
                        actions.len() as u32 - 1
                    });
                    Rhs::Post {
                        action: ActionId(id),
                        on_true: t,
                        on_false: f,
                    }
                }
            };
            rhs.push(r);
        }

        let start = match start {
            Some((name, line)) => match index.get(name.as_str()) {
                Some(&v) => Some(VarId(v)),
                None => {
                    errors.push(SpecError::UnknownStart { name, line });
                    None
                }
            },
            None if equations.is_empty() => {
                errors.push(SpecError::MissingStart);
                None
            }
            None => Some(VarId(0)),
        };

        for (a, &p) in &probs {
            if !(0.0..=1.0).contains(&p) || p.is_nan() {
                errors.push(SpecError::BadProbability {
                    text: format!("{a} {p}"),
                    line: 0,
                });
            }
        }

        if !errors.is_empty() {
            return Err(ParseErrors(errors));
        }
        Ok(ThreadSpec {
            names: equations.into_iter().map(|(n, _)| n).collect(),
            equations: rhs,
            start: start.expect("start checked above"),
            actions,
            probs,
        })
    }

    pub fn len(&self) -> usize {
        self.equations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.equations.is_empty()
    }

    pub fn start(&self) -> VarId {
        self.start
    }

    pub fn start_node(&self) -> Node {
        Node::Var(self.start)
    }

    pub fn handle(&self) -> ThreadHandle<'_> {
        ThreadHandle {
            spec: self,
            node: self.start_node(),
        }
    }

    pub fn handle_at(&self, node: Node) -> ThreadHandle<'_> {
        ThreadHandle { spec: self, node }
    }

    pub fn var(&self, name: &str) -> Option<VarId> {
        self.names.iter().position(|n| n == name).map(|i| VarId(i as u32))
    }

    pub fn name(&self, v: VarId) -> &str {
        &self.names[v.0 as usize]
    }

    pub fn node_name(&self, node: Node) -> &str {
        match node {
            Node::Var(v) => self.name(v),
            Node::Dead => "D",
        }
    }

    pub fn rhs(&self, v: VarId) -> Rhs {
        self.equations[v.0 as usize]
    }

    pub fn vars(&self) -> impl Iterator<Item = VarId> {
        (0..self.equations.len() as u32).map(VarId)
    }

    pub fn actions(&self) -> &[BasicAction] {
        &self.actions
    }

    pub fn action(&self, id: ActionId) -> &BasicAction {
        &self.actions[id.0 as usize]
    }

    pub fn probabilities(&self) -> &BTreeMap<BasicAction, f64> {
        &self.probs
    }

    /// Probability that `id` is answered with `true`.
    pub fn probability(&self, id: ActionId) -> f64 {
        self.probs
            .get(self.action(id))
            .copied()
            .unwrap_or(DEFAULT_PROBABILITY)
    }

    /// Same thread with every action of the alphabet given probability `p`.
    pub fn with_uniform_probability(&self, p: f64) -> ThreadSpec {
        let mut spec = self.clone();
        spec.probs = self.actions.iter().map(|a| (a.clone(), p)).collect();
        spec
    }

    pub fn with_probabilities(&self, probs: BTreeMap<BasicAction, f64>) -> ThreadSpec {
        let mut spec = self.clone();
        spec.probs = probs;
        spec
    }

    fn node_rhs(&self, node: Node) -> Rhs {
        match node {
            Node::Var(v) => self.rhs(v),
            Node::Dead => Rhs::Deadlock,
        }
    }

    pub fn instr(&self, node: Node) -> Instr {
        match self.node_rhs(node) {
            Rhs::Terminate => Instr::Stop,
            Rhs::Deadlock => Instr::Dead,
            Rhs::Post { action, .. } => Instr::Basic(action),
        }
    }

    pub fn ext_action(&self, instr: Instr) -> ExtAction {
        match instr {
            Instr::Basic(a) => ExtAction::Basic(self.action(a).clone()),
            Instr::Stop => ExtAction::Stop,
            Instr::Dead => ExtAction::Dead,
        }
    }

    pub fn act(&self, node: Node) -> ExtAction {
        self.ext_action(self.instr(node))
    }

    pub fn thrt(&self, node: Node) -> Node {
        match self.node_rhs(node) {
            Rhs::Post { on_true, .. } => Node::Var(on_true),
            _ => Node::Dead,
        }
    }

    pub fn thrf(&self, node: Node) -> Node {
        match self.node_rhs(node) {
            Rhs::Post { on_false, .. } => Node::Var(on_false),
            _ => Node::Dead,
        }
    }

    /// Least set containing `node` and closed under both branches of its
    /// postconditional members.
    pub fn residuals(&self, node: Node) -> BTreeSet<Node> {
        let mut seen = BTreeSet::from([node]);
        let mut queue = VecDeque::from([node]);
        while let Some(n) = queue.pop_front() {
            if let Rhs::Post {
                on_true, on_false, ..
            } = self.node_rhs(n)
            {
                for next in [Node::Var(on_true), Node::Var(on_false)] {
                    if seen.insert(next) {
                        queue.push_back(next);
                    }
                }
            }
        }
        seen
    }

    /// Coarsest partition of the thread graph that respects node labels
    /// and both successors.
    pub fn minimize(&self) -> Minimization {
        let n = self.equations.len();
        // index n stands for the canonical D
        let label = |i: usize| -> (u8, u32) {
            match if i == n { Rhs::Deadlock } else { self.equations[i] } {
                Rhs::Terminate => (0, 0),
                Rhs::Deadlock => (1, 0),
                Rhs::Post { action, .. } => (2, action.0),
            }
        };
        let succ = |i: usize| -> Option<(usize, usize)> {
            if i == n {
                return None;
            }
            match self.equations[i] {
                Rhs::Post {
                    on_true, on_false, ..
                } => Some((on_true.0 as usize, on_false.0 as usize)),
                _ => None,
            }
        };

        let mut block: Vec<u32> = renumber((0..=n).map(label).collect::<Vec<_>>());
        loop {
            let sigs: Vec<_> = (0..=n)
                .map(|i| {
                    let s = succ(i).map(|(t, f)| (block[t], block[f]));
                    (block[i], s)
                })
                .collect();
            let next = renumber(sigs);
            let stable = max_block(&next) == max_block(&block);
            block = next;
            if stable {
                break;
            }
        }

        // classes numbered by first equation index
        let mut class_of_block: HashMap<u32, u32> = HashMap::new();
        let mut class = vec![0u32; n + 1];
        let mut representatives = Vec::new();
        for i in 0..=n {
            let next_id = class_of_block.len() as u32;
            let c = *class_of_block.entry(block[i]).or_insert_with(|| {
                representatives.push(i);
                next_id
            });
            class[i] = c;
        }

        let mut eqs = Vec::new();
        let mut class_to_var = HashMap::new();
        for &rep in &representatives {
            if rep < n {
                class_to_var.insert(class[rep], eqs.len() as u32);
                eqs.push(rep);
            }
        }
        let var_of = |i: usize| VarId(class_to_var[&class[i]]);
        let mut names = Vec::new();
        let mut equations = Vec::new();
        let mut actions: Vec<BasicAction> = Vec::new();
        let mut action_ids: HashMap<ActionId, ActionId> = HashMap::new();
        for &rep in &eqs {
            names.push(self.names[rep].clone());
            equations.push(match self.equations[rep] {
                Rhs::Post {
                    action,
                    on_true,
                    on_false,
                } => {
                    let id = *action_ids.entry(action).or_insert_with(|| {
                        actions.push(self.action(action).clone());
                        ActionId(actions.len() as u32 - 1)
                    });
                    Rhs::Post {
                        action: id,
                        on_true: var_of(on_true.0 as usize),
                        on_false: var_of(on_false.0 as usize),
                    }
                }
                other => other,
            });
        }
        let spec = ThreadSpec {
            names,
            equations,
            start: var_of(self.start.0 as usize),
            actions,
            probs: self.probs.clone(),
        };
        Minimization {
            class,
            var_of_class: class_to_var,
            spec,
        }
    }
}

fn renumber<K: std::hash::Hash + Eq>(keys: Vec<K>) -> Vec<u32> {
    let mut ids: HashMap<K, u32> = HashMap::new();
    let mut out = Vec::with_capacity(keys.len());
    for k in keys {
        let next = ids.len() as u32;
        out.push(*ids.entry(k).or_insert(next));
    }
    out
}

fn max_block(b: &[u32]) -> u32 {
    b.iter().copied().max().unwrap_or(0)
}

/// Result of [`ThreadSpec::minimize`]: the minimal spec plus the mapping
/// from original states to equivalence classes.
#[derive(Clone, Debug)]
pub struct Minimization {
    class: Vec<u32>,
    var_of_class: HashMap<u32, u32>,
    spec: ThreadSpec,
}

impl Minimization {
    pub fn spec(&self) -> &ThreadSpec {
        &self.spec
    }

    pub fn class(&self, node: Node) -> u32 {
        match node {
            Node::Var(v) => self.class[v.0 as usize],
            Node::Dead => *self.class.last().expect("sentinel present"),
        }
    }

    /// State of the minimized spec denoting the same thread, if any. The
    /// canonical `D` has no image when the spec has no `D` equation.
    pub fn map(&self, node: Node) -> Option<Node> {
        self.var_of_class
            .get(&self.class(node))
            .map(|&v| Node::Var(VarId(v)))
    }

    /// Thread identity: equal iff both nodes fall in the same class.
    pub fn same(&self, a: Node, b: Node) -> bool {
        self.class(a) == self.class(b)
    }
}

/// A thread: a spec together with one of its states.
#[derive(Clone, Copy, Debug)]
pub struct ThreadHandle<'a> {
    pub spec: &'a ThreadSpec,
    pub node: Node,
}

impl PartialEq for ThreadHandle<'_> {
    fn eq(&self, other: &Self) -> bool {
        std::ptr::eq(self.spec, other.spec) && self.node == other.node
    }
}

impl Eq for ThreadHandle<'_> {}

impl<'a> ThreadHandle<'a> {
    pub fn act(&self) -> ExtAction {
        self.spec.act(self.node)
    }

    pub fn thrt(&self) -> ThreadHandle<'a> {
        self.spec.handle_at(self.spec.thrt(self.node))
    }

    pub fn thrf(&self) -> ThreadHandle<'a> {
        self.spec.handle_at(self.spec.thrf(self.node))
    }

    pub fn residuals(&self) -> Vec<ThreadHandle<'a>> {
        self.spec
            .residuals(self.node)
            .into_iter()
            .map(|n| self.spec.handle_at(n))
            .collect()
    }

    pub fn name(&self) -> &'a str {
        self.spec.node_name(self.node)
    }
}

/// Reads the `.bta` format.
pub fn parse_spec(text: &str) -> Result<ThreadSpec, ParseErrors> {
    let mut errors = Vec::new();
    let mut equations = Vec::new();
    let mut lines = Vec::new();
    let mut start: Option<(String, usize)> = None;
    let mut probs = BTreeMap::new();

    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = match raw.find('#') {
            Some(p) => &raw[..p],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let words: Vec<&str> = line.split_whitespace().collect();
        if words[0] == "@start" {
            if words.len() != 2 {
                errors.push(syntax(line_no, "expected `@start NAME`"));
            } else if start.is_some() {
                errors.push(syntax(line_no, "repeated @start"));
            } else {
                start = Some((words[1].to_string(), line_no));
            }
            continue;
        }
        if words[0] == "@prob" {
            if words.len() != 3 {
                errors.push(syntax(line_no, "expected `@prob focus.method FLOAT`"));
                continue;
            }
            let Some(action) = BasicAction::parse(words[1]) else {
                errors.push(SpecError::MalformedAction {
                    text: words[1].to_string(),
                    line: line_no,
                });
                continue;
            };
            match words[2].parse::<f64>() {
                Ok(p) if (0.0..=1.0).contains(&p) => {
                    if probs.insert(action, p).is_some() {
                        errors.push(syntax(line_no, "repeated @prob for the same action"));
                    }
                }
                _ => errors.push(SpecError::BadProbability {
                    text: words[2].to_string(),
                    line: line_no,
                }),
            }
            continue;
        }
        if words[0].starts_with('@') {
            errors.push(syntax(line_no, &format!("unknown directive {}", words[0])));
            continue;
        }
        match parse_equation(line, line_no) {
            Ok(eq) => {
                equations.push(eq);
                lines.push(line_no);
            }
            Err(e) => errors.push(e),
        }
    }

    if !errors.is_empty() {
        // closedness is still reported alongside syntax problems
        if let Err(ParseErrors(mut more)) =
            ThreadSpec::build(equations, &lines, start, BTreeMap::new())
        {
            more.retain(|e| !matches!(e, SpecError::MissingStart));
            errors.extend(more);
        }
        errors.sort_by_key(error_line);
        return Err(ParseErrors(errors));
    }
    ThreadSpec::build(equations, &lines, start, probs)
}

fn error_line(e: &SpecError) -> usize {
    match e {
        SpecError::UnknownVariable { line, .. }
        | SpecError::DuplicateEquation { line, .. }
        | SpecError::MalformedAction { line, .. }
        | SpecError::UnknownStart { line, .. }
        | SpecError::BadName { line, .. }
        | SpecError::BadProbability { line, .. }
        | SpecError::Syntax { line, .. } => *line,
        SpecError::MissingStart => usize::MAX,
    }
}

fn syntax(line: usize, message: &str) -> SpecError {
    SpecError::Syntax {
        line,
        message: message.to_string(),
    }
}

fn parse_equation(line: &str, line_no: usize) -> Result<(String, RhsSpec), SpecError> {
    let (lhs, rhs) = line
        .split_once('=')
        .ok_or_else(|| syntax(line_no, "expected `NAME = ...`"))?;
    let name = lhs.trim();
    if !is_var_name(name) {
        return Err(SpecError::BadName {
            text: name.to_string(),
            line: line_no,
        });
    }
    let rhs = rhs.trim();
    let spec = match rhs {
        "S" => RhsSpec::Terminate,
        "D" => RhsSpec::Deadlock,
        _ => {
            let (action, branches) = rhs
                .split_once('?')
                .ok_or_else(|| syntax(line_no, "expected `S`, `D` or `f.m ? X : Y`"))?;
            let (t, f) = branches
                .split_once(':')
                .ok_or_else(|| syntax(line_no, "expected `:` between branches"))?;
            let action_text = action.trim();
            let action = BasicAction::parse(action_text).ok_or_else(|| {
                SpecError::MalformedAction {
                    text: action_text.to_string(),
                    line: line_no,
                }
            })?;
            let (t, f) = (t.trim(), f.trim());
            for b in [t, f] {
                if !is_var_name(b) {
                    return Err(SpecError::BadName {
                        text: b.to_string(),
                        line: line_no,
                    });
                }
            }
            RhsSpec::post(action, t, f)
        }
    };
    Ok((name.to_string(), spec))
}

/// Canonical rendering; `parse_spec(&print_spec(s))` reproduces `s`.
pub fn print_spec(spec: &ThreadSpec) -> String {
    let mut out = String::new();
    for v in spec.vars() {
        out.push_str(spec.name(v));
        out.push_str(" = ");
        match spec.rhs(v) {
            Rhs::Terminate => out.push('S'),
            Rhs::Deadlock => out.push('D'),
            Rhs::Post {
                action,
                on_true,
                on_false,
            } => {
                out.push_str(&format!(
                    "{} ? {} : {}",
                    spec.action(action),
                    spec.name(on_true),
                    spec.name(on_false)
                ));
            }
        }
        out.push('\n');
    }
    if spec.start.0 != 0 {
        out.push_str(&format!("@start {}\n", spec.name(spec.start)));
    }
    for (a, p) in &spec.probs {
        out.push_str(&format!("@prob {a} {p}\n"));
    }
    out
}

impl fmt::Display for ThreadSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&print_spec(self))
    }
}

impl std::str::FromStr for ThreadSpec {
    type Err = ParseErrors;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_spec(s)
    }
}
