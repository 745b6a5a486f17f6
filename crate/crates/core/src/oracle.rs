//! Brute-force reference: runs the program concretely for every secret and
//! every scheduler resolution, then rebuilds trace probabilities and
//! beliefs by weighting runs with the prior.
//!
//! Shares only the syntax tree with the main pipeline. Expressions are
//! evaluated in 128-bit arithmetic and range-checked afterwards.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use num_traits::{One, Zero};

use crate::dist::{format_ratio, Rational, Secret, SecretDist};
use crate::error::{Error, EvalError};
use crate::lang::{BinOp, Expr, ProgramDecl, Stmt, Var};
use crate::pks::Pks;
use crate::sched::{HistoryStep, SchedulerPolicy};

/// One execution for a fixed secret and a fixed sequence of scheduler picks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConcreteRun {
    pub secret: Secret,
    pub scheduler_choices: Vec<usize>,
    /// Command executed at each step, in the same notation as PKS edges.
    pub commands: Vec<String>,
    /// `O` before the first step and after each step.
    pub o_sequence: Vec<u64>,
    /// Product of the scheduler weights along the run.
    pub probability_given_secret: Rational,
}

/// What the attacker is assumed to see of a run.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum Observation {
    /// Thread, command and resulting `O` of every step.
    PathAware(Vec<(usize, String, u64)>),
    /// The `O` values only.
    Values(Vec<u64>),
}

impl ConcreteRun {
    pub fn path_key(&self) -> Observation {
        Observation::PathAware(
            self.scheduler_choices
                .iter()
                .zip(&self.commands)
                .zip(&self.o_sequence[1..])
                .map(|((t, c), o)| (*t, c.clone(), *o))
                .collect(),
        )
    }

    pub fn value_key(&self) -> Observation {
        Observation::Values(self.o_sequence.clone())
    }
}

fn arith(op: BinOp, a: u128, b: u128) -> Option<u128> {
    Some(match op {
        BinOp::Add => a + b,
        BinOp::Sub => a.saturating_sub(b),
        BinOp::Mul => a.checked_mul(b)?,
        BinOp::Div => a.checked_div(b)?,
        BinOp::Mod => a.checked_rem(b)?,
        BinOp::And => a & b,
        BinOp::Or => a | b,
        BinOp::Xor => a ^ b,
        BinOp::Shl if a == 0 => 0,
        BinOp::Shl if b >= 64 => return None,
        BinOp::Shl => a << b,
        BinOp::Shr if b >= 64 => 0,
        BinOp::Shr => a >> b,
        BinOp::Eq => (a == b) as u128,
        BinOp::Ne => (a != b) as u128,
        BinOp::Lt => (a < b) as u128,
        BinOp::Le => (a <= b) as u128,
        BinOp::Gt => (a > b) as u128,
        BinOp::Ge => (a >= b) as u128,
    })
}

fn value(e: &Expr, o: u64, s: Secret) -> Result<u64, EvalError> {
    let (l, op, r) = match e {
        Expr::Const(n) => return Ok(*n),
        Expr::Var(Var::O) => return Ok(o),
        Expr::Var(Var::S) => return Ok(s),
        Expr::Binary(op, l, r) => (l, *op, r),
    };
    let a = u128::from(value(l, o, s)?);
    let b = u128::from(value(r, o, s)?);
    match arith(op, a, b) {
        Some(v) => u64::try_from(v).map_err(|_| EvalError::Overflow(e.to_string())),
        None if matches!(op, BinOp::Div | BinOp::Mod) => Err(EvalError::DivisionByZero(e.to_string())),
        None => Err(EvalError::Overflow(e.to_string())),
    }
}

fn threads(stmt: &Stmt) -> usize {
    match stmt {
        Stmt::Par(l, r) => threads(l) + threads(r),
        Stmt::Seq(head, _) => threads(head),
        _ => 1,
    }
}

enum Stop {
    Eval(EvalError),
    OutOfSteps,
}

/// Effect of one scheduler turn on a thread.
struct Turn {
    o: u64,
    rest: Option<Stmt>,
    command: Option<String>,
}

fn turn(stmt: &Stmt, thread: usize, o: u64, s: Secret, guards_left: &mut usize) -> Result<Turn, Stop> {
    let eval = |e: &Expr| value(e, o, s).map_err(Stop::Eval);
    match stmt {
        Stmt::Skip => Ok(Turn { o, rest: None, command: Some("skip".into()) }),
        Stmt::Assign(e) => Ok(Turn { o: eval(e)?, rest: None, command: Some(format!("O := {e}")) }),
        Stmt::Par(l, r) => {
            let left = threads(l);
            let (inner, idx, other, on_left) =
                if thread < left { (l, thread, r, true) } else { (r, thread - left, l, false) };
            let t = turn(inner, idx, o, s, guards_left)?;
            let rest = match t.rest {
                None => (**other).clone(),
                Some(x) if on_left => Stmt::Par(Box::new(x), other.clone()),
                Some(x) => Stmt::Par(other.clone(), Box::new(x)),
            };
            Ok(Turn { o: t.o, rest: Some(rest), command: t.command })
        }
        Stmt::Seq(head, tail) => {
            let t = turn(head, thread, o, s, guards_left)?;
            if t.rest.is_none() && t.command.is_none() {
                return turn(tail, 0, t.o, s, guards_left);
            }
            let rest = match t.rest {
                None => (**tail).clone(),
                Some(h) => Stmt::Seq(Box::new(h), tail.clone()),
            };
            Ok(Turn { o: t.o, rest: Some(rest), command: t.command })
        }
        Stmt::If(g, a, b) => {
            let holds = eval(g)? != 0;
            let next = if holds { a } else { b };
            if !g.reads_secret() {
                spend(guards_left)?;
                return turn(next, 0, o, s, guards_left);
            }
            let tag = if holds { "[then]" } else { "[else]" };
            Ok(Turn { o, rest: Some((**next).clone()), command: Some(format!("if ({g}) {tag}")) })
        }
        Stmt::While(g, body) => {
            let holds = eval(g)? != 0;
            let again = Stmt::Seq(body.clone(), Box::new(stmt.clone()));
            match (g.reads_secret(), holds) {
                (true, true) => Ok(Turn { o, rest: Some(again), command: Some(format!("while ({g}) [enter]")) }),
                (true, false) => Ok(Turn { o, rest: None, command: Some(format!("while ({g}) [exit]")) }),
                (false, true) => {
                    spend(guards_left)?;
                    turn(&again, 0, o, s, guards_left)
                }
                (false, false) => {
                    spend(guards_left)?;
                    Ok(Turn { o, rest: None, command: None })
                }
            }
        }
    }
}

fn spend(left: &mut usize) -> Result<(), Stop> {
    if *left == 0 {
        return Err(Stop::OutOfSteps);
    }
    *left -= 1;
    Ok(())
}

fn describe(secret: Secret, choices: &[usize]) -> String {
    format!("[secret {secret}, threads {choices:?}]")
}

/// Every run over the prior's support and every positive-weight scheduler
/// resolution, depth-first.
pub fn oracle_enumerate(
    prog: &ProgramDecl,
    policy: &SchedulerPolicy,
    prior: &SecretDist,
    budget: usize,
) -> Result<Vec<ConcreteRun>, Error> {
    let mut runs = Vec::new();
    for secret in prior.support() {
        let start = ConcreteRun {
            secret,
            scheduler_choices: Vec::new(),
            commands: Vec::new(),
            o_sequence: vec![prog.initial_o],
            probability_given_secret: Rational::one(),
        };
        let mut pending = vec![(Some(prog.body.clone()), start)];
        while let Some((code, run)) = pending.pop() {
            let Some(code) = code else {
                runs.push(run);
                continue;
            };
            if run.commands.len() >= budget {
                return Err(Error::BudgetExhausted { budget, trace: describe(secret, &run.scheduler_choices) });
            }
            let history: Vec<HistoryStep> = run
                .scheduler_choices
                .iter()
                .zip(&run.o_sequence[1..])
                .map(|(t, o)| HistoryStep { thread: *t, o_value: *o })
                .collect();
            let enabled: Vec<usize> = (0..threads(&code)).collect();
            let o = *run.o_sequence.last().expect("non-empty");
            let mut children = Vec::new();
            for (w, t) in policy.decide(&history, &enabled)? {
                let mut left = budget;
                let done = turn(&code, t, o, secret, &mut left).map_err(|stop| {
                    let mut choices = run.scheduler_choices.clone();
                    choices.push(t);
                    match stop {
                        Stop::Eval(source) => Error::Eval { trace: describe(secret, &choices), source },
                        Stop::OutOfSteps => Error::BudgetExhausted { budget, trace: describe(secret, &choices) },
                    }
                })?;
                let mut next = run.clone();
                next.scheduler_choices.push(t);
                next.commands.push(done.command.unwrap_or_else(|| crate::semantics::SILENT_LABEL.to_string()));
                next.o_sequence.push(done.o);
                next.probability_given_secret *= w;
                children.push((done.rest, next));
            }
            pending.extend(children.into_iter().rev());
        }
    }
    Ok(runs)
}

/// Groups runs by an observation, giving each group's total mass and the
/// belief conditioned on it.
pub fn group_runs(
    runs: &[ConcreteRun],
    prior: &SecretDist,
    key: impl Fn(&ConcreteRun) -> Observation,
) -> Result<BTreeMap<Observation, (Rational, SecretDist)>, Error> {
    let mut mass: BTreeMap<Observation, BTreeMap<Secret, Rational>> = BTreeMap::new();
    for run in runs {
        let w = prior.prob(run.secret) * &run.probability_given_secret;
        if w.is_zero() {
            continue;
        }
        *mass.entry(key(run)).or_default().entry(run.secret).or_insert_with(Rational::zero) += w;
    }
    mass.into_iter()
        .map(|(k, row)| {
            let total: Rational = row.values().sum();
            let post = SecretDist::from_weights(row)?;
            Ok((k, (total, post)))
        })
        .collect()
}

/// Belief after an observation: prior times run weight over matching runs.
pub fn oracle_posterior(
    runs: &[ConcreteRun],
    prior: &SecretDist,
    observation: &Observation,
) -> Result<SecretDist, Error> {
    let weights: Vec<(Secret, Rational)> = runs
        .iter()
        .filter(|r| match observation {
            Observation::PathAware(_) => &r.path_key() == observation,
            Observation::Values(_) => &r.value_key() == observation,
        })
        .map(|r| (r.secret, prior.prob(r.secret) * &r.probability_given_secret))
        .collect();
    if weights.iter().all(|(_, w)| w.is_zero()) {
        return Err(Error::ZeroMassEvent);
    }
    SecretDist::from_weights(weights)
}

/// Path-aware observations of the PKS traces with their probability and
/// final belief.
pub fn pks_observations(pks: &Pks) -> BTreeMap<Observation, (Rational, SecretDist)> {
    pks.traces()
        .into_iter()
        .map(|t| {
            let steps = pks
                .trace_commands(&t)
                .into_iter()
                .zip(&t.o_sequence[1..])
                .map(|((thread, cmd), o)| (thread, cmd, *o))
                .collect();
            (Observation::PathAware(steps), (t.probability.clone(), pks.final_posterior(&t).clone()))
        })
        .collect()
}

fn render(obs: &Observation) -> String {
    match obs {
        Observation::PathAware(steps) => {
            let parts: Vec<String> = steps.iter().map(|(t, c, o)| format!("t{t}: {c} -> O={o}")).collect();
            format!("[{}]", parts.join("; "))
        }
        Observation::Values(v) => format!("{v:?}"),
    }
}

fn render_side(side: Option<&(Rational, SecretDist)>) -> String {
    match side {
        Some((p, d)) => format!("p={} posterior={d}", format_ratio(p)),
        None => "absent".to_string(),
    }
}

/// Compares the PKS against oracle runs. On disagreement returns a diff
/// whose first entry is the shortest disagreeing trace.
pub fn compare_with_pks(pks: &Pks, runs: &[ConcreteRun]) -> Result<(), String> {
    let expected = group_runs(runs, pks.prior(), ConcreteRun::path_key).map_err(|e| e.to_string())?;
    let actual = pks_observations(pks);
    let keys: BTreeSet<&Observation> = expected.keys().chain(actual.keys()).collect();
    let mut diffs: Vec<&Observation> = keys.into_iter().filter(|k| expected.get(*k) != actual.get(*k)).collect();
    diffs.sort_by_key(|k| match k {
        Observation::PathAware(s) => s.len(),
        Observation::Values(v) => v.len(),
    });
    if diffs.is_empty() {
        return Ok(());
    }
    let mut out = format!("{} trace(s) disagree\n", diffs.len());
    for k in diffs {
        let _ = writeln!(out, "trace {}", render(k));
        let _ = writeln!(out, "  pks:    {}", render_side(actual.get(k)));
        let _ = writeln!(out, "  oracle: {}", render_side(expected.get(k)));
    }
    Err(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::ratio;
    use crate::lang::parse;
    use crate::pks::build_pks;
    use crate::sched::{priority_scheduler, uniform_scheduler};
    use crate::semantics::{eval_expr, DEFAULT_BUDGET};
    use proptest::prelude::*;

    const CASE_STUDY: &str = "secret S : 3; public O := 0;\n\
        if (O = 1) then { O := S / 4; } else { O := S mod 2; } || O := 1;\n\
        O := S mod 4;";

    fn runs(src: &str, policy: &SchedulerPolicy) -> (ProgramDecl, SecretDist, Vec<ConcreteRun>) {
        let p = parse(src).unwrap();
        let prior = SecretDist::uniform(p.domain.values()).unwrap();
        let r = oracle_enumerate(&p, policy, &prior, DEFAULT_BUDGET).unwrap();
        (p, prior, r)
    }

    #[test]
    fn run_counts() {
        let (_, _, r) = runs(CASE_STUDY, &uniform_scheduler());
        assert_eq!(r.len(), 16);
        let (_, _, r) = runs("secret S : 3; public O := 0; O := S & 1; O := S;", &uniform_scheduler());
        assert_eq!(r.len(), 8);
        let (_, _, r) = runs("secret S : 2; public O := 0; O := S / 2 || O := S mod 2;", &uniform_scheduler());
        assert_eq!(r.len(), 8);
    }

    #[test]
    fn value_trace_beliefs() {
        let (_, prior, r) = runs(CASE_STUDY, &uniform_scheduler());
        let post = |seq: &[u64]| oracle_posterior(&r, &prior, &Observation::Values(seq.to_vec())).unwrap();
        assert_eq!(post(&[0, 1, 1, 1]), SecretDist::from_probs([(1, ratio(1, 3)), (5, ratio(2, 3))]).unwrap());
        assert_eq!(post(&[0, 0, 1, 0]), SecretDist::from_probs([(0, ratio(1, 2)), (4, ratio(1, 2))]).unwrap());
        assert_eq!(post(&[0, 1, 0, 0]), SecretDist::point(0));
        assert!(oracle_posterior(&r, &prior, &Observation::Values(vec![9])).is_err());
    }

    #[test]
    fn total_weight_is_one() {
        let (_, prior, r) = runs(CASE_STUDY, &uniform_scheduler());
        let total: Rational = r.iter().map(|x| prior.prob(x.secret) * &x.probability_given_secret).sum();
        assert!(total.is_one());
    }

    #[test]
    fn agrees_with_pks() {
        for src in [
            CASE_STUDY,
            "secret S : 2; public O := 0; O := S / 2 || O := S mod 2;",
            "secret S : 3; public O := 0; while (O < S) do { O := O + 1; }",
            "secret S : 3; public O := 2; while (O > 0) do { O := O - 1; } || if (S > 3) then { O := 7; }",
        ] {
            for policy in [uniform_scheduler(), priority_scheduler(vec![1, 0])] {
                let (p, prior, r) = runs(src, &policy);
                let pks = build_pks(&p, &policy, DEFAULT_BUDGET).unwrap();
                assert_eq!(pks.prior(), &prior);
                compare_with_pks(&pks, &r).unwrap();
            }
        }
    }

    #[test]
    fn detects_corruption() {
        let (p, _, r) = runs(CASE_STUDY, &uniform_scheduler());
        let mut pks = build_pks(&p, &uniform_scheduler(), DEFAULT_BUDGET).unwrap();
        let last = pks.edges.len() - 1;
        pks.edges[last].probability = ratio(1, 3);
        let diff = compare_with_pks(&pks, &r).unwrap_err();
        assert!(diff.contains("disagree"), "{diff}");
    }

    proptest! {
        #[test]
        fn evaluators_agree(a in 0u64..1 << 20, b in 0u64..64, s in 0u64..256, which in 0usize..19) {
            let ops = [BinOp::Add, BinOp::Sub, BinOp::Mul, BinOp::Div, BinOp::Mod, BinOp::And, BinOp::Or, BinOp::Xor,
                BinOp::Shl, BinOp::Shr, BinOp::Eq, BinOp::Ne, BinOp::Lt, BinOp::Le, BinOp::Gt, BinOp::Ge,
                BinOp::Sub, BinOp::Mul, BinOp::Shl];
            let e = Expr::binary(ops[which], Expr::binary(BinOp::Mul, Expr::Const(a), Expr::Var(Var::S)), Expr::Const(b));
            prop_assert_eq!(value(&e, 0, s), eval_expr(&e, 0, s));
        }
    }
}
