//! The scheduled probabilistic Kripke structure of a program.
//!
//! Built breadth-first from the initial configuration. Each non-terminal
//! state asks the scheduler for a distribution over enabled threads and
//! expands every chosen thread with [`semantics::step`]; an edge carries
//! scheduler weight times branch mass. States are never merged, so the
//! structure is a tree and every root-to-leaf path is one trace.

use std::collections::VecDeque;
use std::fmt::Write as _;

use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};

use crate::dist::{format_ratio, ratio_string, Rational, SecretDist};
use crate::error::Error;
use crate::lang::{parse_stmt, stmt_source, ProgramDecl};
use crate::sched::{HistoryStep, SchedulerPolicy};
use crate::semantics::{self, Config};

#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub config: Config,
    pub parent: Option<usize>,
    /// Scheduling history leading here, as seen by the policy.
    pub history: Vec<HistoryStep>,
}

impl State {
    pub fn is_terminal(&self) -> bool {
        self.config.is_terminated()
    }

    pub fn depth(&self) -> usize {
        self.history.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub probability: Rational,
    pub thread: usize,
    pub command: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pks {
    pub states: Vec<State>,
    pub edges: Vec<Edge>,
    /// Outgoing edge indices per state, in construction order.
    children: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trace {
    pub states: Vec<usize>,
    pub probability: Rational,
    pub o_sequence: Vec<u64>,
}

/// Builds the structure under the uniform prior over the declared domain.
pub fn build_pks(prog: &ProgramDecl, policy: &SchedulerPolicy, budget: usize) -> Result<Pks, Error> {
    let prior = SecretDist::uniform(prog.domain.values())?;
    build_pks_with_prior(prog, prior, policy, budget)
}

/// Builds the structure from an explicit prior. Leakage values computed on
/// non-uniform priors are not guaranteed to be non-negative.
pub fn build_pks_with_prior(
    prog: &ProgramDecl,
    prior: SecretDist,
    policy: &SchedulerPolicy,
    budget: usize,
) -> Result<Pks, Error> {
    if budget == 0 {
        return Err(Error::BudgetExhausted { budget, trace: "[]".into() });
    }
    let root = State {
        config: Config { program: Some(prog.body.clone()), o_value: prog.initial_o, posterior: prior },
        parent: None,
        history: Vec::new(),
    };
    let mut pks = Pks { states: vec![root], edges: Vec::new(), children: vec![Vec::new()] };
    let mut queue = VecDeque::from([0usize]);

    while let Some(idx) = queue.pop_front() {
        let state = &pks.states[idx];
        if state.is_terminal() {
            continue;
        }
        if state.depth() >= budget {
            return Err(Error::BudgetExhausted { budget, trace: pks.describe_path(idx) });
        }
        let enabled = semantics::enabled_threads(&state.config);
        let decision = policy.decide(&state.history, &enabled)?;
        let mut expansions = Vec::new();
        for (weight, thread) in decision {
            if weight.is_zero() {
                continue;
            }
            let outcome = semantics::step(&state.config, thread, budget).map_err(|e| match e {
                Error::Eval { source, .. } => Error::Eval { trace: pks.describe_path(idx), source },
                Error::BudgetExhausted { budget, .. } => {
                    Error::BudgetExhausted { budget, trace: pks.describe_path(idx) }
                }
                other => other,
            })?;
            if !outcome.total().is_one() {
                return Err(Error::Pks(format!(
                    "branch masses at state {idx} sum to {}",
                    format_ratio(&outcome.total())
                )));
            }
            expansions.push((weight, outcome));
        }
        let history = state.history.clone();
        for (weight, outcome) in expansions {
            for branch in outcome.branches {
                let to = pks.states.len();
                let mut h = history.clone();
                h.push(HistoryStep { thread: outcome.executed_thread, o_value: branch.next.o_value });
                pks.states.push(State { config: branch.next, parent: Some(idx), history: h });
                pks.children.push(Vec::new());
                pks.children[idx].push(pks.edges.len());
                pks.edges.push(Edge {
                    from: idx,
                    to,
                    probability: &weight * &branch.probability,
                    thread: outcome.executed_thread,
                    command: branch.label,
                });
                queue.push_back(to);
            }
        }
    }
    Ok(pks)
}

impl Pks {
    pub fn initial(&self) -> &State {
        &self.states[0]
    }

    pub fn prior(&self) -> &SecretDist {
        &self.states[0].config.posterior
    }

    pub fn num_states(&self) -> usize {
        self.states.len()
    }

    pub fn outgoing(&self, state: usize) -> impl Iterator<Item = &Edge> {
        self.children[state].iter().map(move |&e| &self.edges[e])
    }

    pub fn terminal_states(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.states.len()).filter(|&i| self.states[i].is_terminal())
    }

    fn incoming(&self, state: usize) -> Option<&Edge> {
        self.edges.iter().find(|e| e.to == state)
    }

    /// Human-readable path from the root, used in error messages.
    fn describe_path(&self, state: usize) -> String {
        let mut steps = Vec::new();
        let mut cur = state;
        while let Some(parent) = self.states[cur].parent {
            let cmd = self.incoming(cur).map(|e| format!("t{}: {}", e.thread, e.command)).unwrap_or_default();
            steps.push(cmd);
            cur = parent;
        }
        steps.reverse();
        let shown: Vec<&String> = steps.iter().take(12).collect();
        let mut text = format!("[{}", shown.iter().map(|s| s.as_str()).collect::<Vec<_>>().join("; "));
        if steps.len() > shown.len() {
            let _ = write!(text, "; ... {} more", steps.len() - shown.len());
        }
        text.push(']');
        text
    }

    /// Checks the structural invariants: a tree rooted at state 0, every
    /// non-terminal state's outgoing mass exactly 1, leaves terminated.
    pub fn check(&self) -> Result<(), Error> {
        let mut incoming = vec![0usize; self.states.len()];
        for e in &self.edges {
            if e.from >= self.states.len() || e.to >= self.states.len() {
                return Err(Error::Pks(format!("edge {} -> {} out of range", e.from, e.to)));
            }
            if e.probability <= Rational::zero() {
                return Err(Error::Pks(format!(
                    "edge {} -> {} has probability {}",
                    e.from,
                    e.to,
                    format_ratio(&e.probability)
                )));
            }
            incoming[e.to] += 1;
        }
        if incoming[0] != 0 {
            return Err(Error::Pks("initial state has an incoming edge".into()));
        }
        for (i, n) in incoming.iter().enumerate().skip(1) {
            if *n != 1 {
                return Err(Error::Pks(format!("state {i} has {n} incoming edges")));
            }
        }
        for (i, s) in self.states.iter().enumerate() {
            let total: Rational = self.outgoing(i).map(|e| &e.probability).sum();
            if s.is_terminal() {
                if !total.is_zero() {
                    return Err(Error::Pks(format!("terminal state {i} has successors")));
                }
            } else if !total.is_one() {
                return Err(Error::Pks(format!("outgoing mass of state {i} is {}", format_ratio(&total))));
            }
        }
        Ok(())
    }

    /// All root-to-leaf paths, depth-first in child order.
    pub fn traces(&self) -> Vec<Trace> {
        let mut out = Vec::new();
        let mut stack = vec![(0usize, vec![0usize], Rational::one())];
        while let Some((state, path, p)) = stack.pop() {
            let kids: Vec<&Edge> = self.outgoing(state).collect();
            if kids.is_empty() {
                let o_sequence = path.iter().map(|&i| self.states[i].config.o_value).collect();
                out.push(Trace { states: path, probability: p, o_sequence });
                continue;
            }
            for e in kids.into_iter().rev() {
                let mut next = path.clone();
                next.push(e.to);
                stack.push((e.to, next, &p * &e.probability));
            }
        }
        out
    }

    /// Commands along a trace, as `(thread, command)` pairs.
    pub fn trace_commands(&self, trace: &Trace) -> Vec<(usize, String)> {
        trace
            .states
            .windows(2)
            .map(|w| {
                let e = self.outgoing(w[0]).find(|e| e.to == w[1]).expect("consecutive trace states are linked");
                (e.thread, e.command.clone())
            })
            .collect()
    }

    pub fn final_posterior<'a>(&'a self, trace: &Trace) -> &'a SecretDist {
        &self.states[*trace.states.last().expect("traces are non-empty")].config.posterior
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&PksJson::from(self)).expect("serializable")
    }

    pub fn from_json(text: &str) -> Result<Self, Error> {
        let raw: PksJson = serde_json::from_str(text).map_err(|e| Error::Pks(format!("bad PKS JSON: {e}")))?;
        raw.into_pks()
    }
}

pub fn enumerate_traces(pks: &Pks) -> Vec<Trace> {
    pks.traces()
}

fn dot_escape(text: &str) -> String {
    text.replace('\\', "\\\\").replace('"', "\\\"")
}

/// Graphviz rendering. Nodes show state number, `O` value and belief;
/// edges show exact probability, thread and command.
pub fn to_dot(pks: &Pks) -> String {
    let mut out = String::from("digraph pks {\n    node [shape=circle, fontsize=10];\n    edge [fontsize=9];\n");
    for (i, s) in pks.states.iter().enumerate() {
        let shape = if s.is_terminal() { ", shape=doublecircle" } else { "" };
        let label = format!("{i}\\nO={}\\n{}", s.config.o_value, dot_escape(&s.config.posterior.to_string()));
        let _ = writeln!(out, "    s{i} [label=\"{label}\"{shape}];");
    }
    for e in &pks.edges {
        let label = format!("{}\\nt{}: {}", format_ratio(&e.probability), e.thread, dot_escape(&e.command));
        let _ = writeln!(out, "    s{} -> s{} [label=\"{label}\"];", e.from, e.to);
    }
    out.push_str("}\n");
    out
}

#[derive(Serialize, Deserialize)]
struct StateJson {
    id: usize,
    o_value: u64,
    program: Option<String>,
    posterior: SecretDist,
    terminal: bool,
}

#[derive(Serialize, Deserialize)]
struct EdgeJson {
    from: usize,
    to: usize,
    #[serde(with = "ratio_string")]
    probability: Rational,
    thread: usize,
    command: String,
}

#[derive(Serialize, Deserialize)]
struct PksJson {
    states: Vec<StateJson>,
    edges: Vec<EdgeJson>,
}

impl From<&Pks> for PksJson {
    fn from(pks: &Pks) -> Self {
        PksJson {
            states: pks
                .states
                .iter()
                .enumerate()
                .map(|(id, s)| StateJson {
                    id,
                    o_value: s.config.o_value,
                    program: s.config.program.as_ref().map(stmt_source),
                    posterior: s.config.posterior.clone(),
                    terminal: s.is_terminal(),
                })
                .collect(),
            edges: pks
                .edges
                .iter()
                .map(|e| EdgeJson {
                    from: e.from,
                    to: e.to,
                    probability: e.probability.clone(),
                    thread: e.thread,
                    command: e.command.clone(),
                })
                .collect(),
        }
    }
}

impl PksJson {
    fn into_pks(self) -> Result<Pks, Error> {
        let n = self.states.len();
        if n == 0 {
            return Err(Error::Pks("no states".into()));
        }
        let mut states = Vec::with_capacity(n);
        for (i, s) in self.states.into_iter().enumerate() {
            if s.id != i {
                return Err(Error::Pks(format!("state ids must be 0..{n} in order")));
            }
            let program = match s.program {
                Some(src) => Some(parse_stmt(&src)?),
                None => None,
            };
            states.push(State {
                config: Config { program, o_value: s.o_value, posterior: s.posterior },
                parent: None,
                history: Vec::new(),
            });
        }
        let mut children = vec![Vec::new(); n];
        let mut edges = Vec::with_capacity(self.edges.len());
        for (k, e) in self.edges.into_iter().enumerate() {
            if e.from >= n || e.to >= n {
                return Err(Error::Pks(format!("edge {} -> {} out of range", e.from, e.to)));
            }
            if states[e.to].parent.is_some() || e.to == 0 {
                return Err(Error::Pks(format!("state {} has more than one parent", e.to)));
            }
            states[e.to].parent = Some(e.from);
            children[e.from].push(k);
            edges.push(Edge {
                from: e.from,
                to: e.to,
                probability: e.probability,
                thread: e.thread,
                command: e.command,
            });
        }
        // histories from the root, which also rejects unreachable states
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for &k in &children[i] {
                let e = &edges[k];
                let mut h = states[i].history.clone();
                h.push(HistoryStep { thread: e.thread, o_value: states[e.to].config.o_value });
                states[e.to].history = h;
                seen[e.to] = true;
                stack.push(e.to);
            }
        }
        if let Some(orphan) = seen.iter().position(|s| !s) {
            return Err(Error::Pks(format!("state {orphan} is unreachable")));
        }
        Ok(Pks { states, edges, children })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::ratio;
    use crate::lang::parse;
    use crate::sched::uniform_scheduler;
    use crate::semantics::DEFAULT_BUDGET;

    const CASE_STUDY: &str = "secret S : 3; public O := 0;\n\
        if (O = 1) then { O := S / 4; } else { O := S mod 2; } || O := 1;\n\
        O := S mod 4;";

    fn build(src: &str, policy: &SchedulerPolicy) -> Pks {
        build_pks(&parse(src).unwrap(), policy, DEFAULT_BUDGET).unwrap()
    }

    #[test]
    fn single_assignment() {
        let pks = build("secret S : 3; public O := 0; O := 0;", &uniform_scheduler());
        assert_eq!(pks.num_states(), 2);
        assert_eq!(pks.edges.len(), 1);
        assert!(pks.edges[0].probability.is_one());
        let traces = pks.traces();
        assert_eq!(traces.len(), 1);
        assert!(traces[0].probability.is_one());
        pks.check().unwrap();
    }

    #[test]
    fn case_study_structure() {
        let pks = build(CASE_STUDY, &uniform_scheduler());
        pks.check().unwrap();
        assert_eq!(pks.num_states(), 20);
        assert_eq!(pks.edges.len(), 19);
        let from_root: Vec<Rational> = pks.outgoing(0).map(|e| e.probability.clone()).collect();
        let mut sorted = from_root.clone();
        sorted.sort();
        assert_eq!(sorted, vec![ratio(1, 4), ratio(1, 4), ratio(1, 2)]);
        let traces = pks.traces();
        assert_eq!(traces.len(), 12);
        let total: Rational = traces.iter().map(|t| &t.probability).sum();
        assert!(total.is_one());
        // C2 first, S / 4 gives 0, then S mod 4 gives 0
        let t = traces.iter().find(|t| t.o_sequence == vec![0, 1, 0, 0]).unwrap();
        assert_eq!(t.probability, ratio(1, 16));
        assert_eq!(pks.final_posterior(t), &SecretDist::point(0));
    }

    #[test]
    fn budget_guard_names_the_trace() {
        let p = parse("secret S : 1; public O := 0; while (S < 5) do { O := O + 1; }").unwrap();
        let err = build_pks(&p, &uniform_scheduler(), 20).unwrap_err();
        match err {
            Error::BudgetExhausted { budget, trace } => {
                assert_eq!(budget, 20);
                assert!(trace.contains("O := O + 1"), "{trace}");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn eval_error_names_the_trace() {
        let p = parse("secret S : 2; public O := 0; O := 1; O := 3 / S;").unwrap();
        match build_pks(&p, &uniform_scheduler(), 100).unwrap_err() {
            Error::Eval { trace, .. } => assert!(trace.contains("t0: O := 1"), "{trace}"),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn dot_output() {
        let pks = build("secret S : 3; public O := 0; O := 0;", &uniform_scheduler());
        let dot = to_dot(&pks);
        assert!(dot.starts_with("digraph pks {"));
        assert!(dot.contains("s0 -> s1 [label=\"1\\nt0: O := 0\"]"), "{dot}");
        let pks = build(CASE_STUDY, &uniform_scheduler());
        let dot = to_dot(&pks);
        assert_eq!(dot.matches(" -> ").count(), 19);
        assert_eq!(
            dot.lines()
                .filter(|l| l.trim_start().starts_with('s') && l.contains("[label") && !l.contains("->"))
                .count(),
            20
        );
    }

    #[test]
    fn json_round_trip_and_rejection() {
        let pks = build(CASE_STUDY, &uniform_scheduler());
        let back = Pks::from_json(&pks.to_json()).unwrap();
        assert_eq!(back, pks);
        let mut v: serde_json::Value = serde_json::from_str(&pks.to_json()).unwrap();
        v["edges"][1]["to"] = serde_json::json!(1);
        assert!(Pks::from_json(&v.to_string()).is_err());
    }
}
