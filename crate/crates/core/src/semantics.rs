//! Small-step execution of a configuration as a transformer of the
//! attacker's belief.
//!
//! One scheduled step runs a single atomic command of one thread. The
//! command is run concretely for every secret still in the posterior's
//! support; secrets that produce the same observable result (new `O`
//! value, executed command, and continuation) form one branch, whose
//! probability is their posterior mass and whose posterior is the belief
//! conditioned on that result.
//!
//! Guards that only read `O` are resolved silently as part of the step that
//! picks their thread: every secret agrees on them, so they carry no
//! information and take no scheduler turn. Guards that read `S` are atomic
//! steps of their own.

use std::collections::{BTreeSet, HashMap};

use crate::dist::{Rational, Secret, SecretDist};
use crate::error::{Error, EvalError};
use crate::lang::{BinOp, Expr, Stmt, Var};

/// Default bound on steps per trace.
pub const DEFAULT_BUDGET: usize = 10_000;

/// A state of the probabilistic Kripke structure.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Config {
    /// Remaining code; `None` once every thread has terminated.
    pub program: Option<Stmt>,
    pub o_value: u64,
    pub posterior: SecretDist,
}

impl Config {
    pub fn is_terminated(&self) -> bool {
        self.program.is_none()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub probability: Rational,
    pub next: Config,
    /// The executed command as the attacker sees it, e.g. `O := S mod 2`
    /// or `if (S = 3) [then]`.
    pub label: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub executed_thread: usize,
    /// Branches ordered by resulting `O` value, then label.
    pub branches: Vec<Branch>,
}

impl StepOutcome {
    pub fn total(&self) -> Rational {
        self.branches.iter().map(|b| &b.probability).sum()
    }
}

/// Number of threads with a pending redex. `Seq` exposes only its first
/// component; `Par` exposes both sides, left before right.
pub fn thread_count(stmt: &Stmt) -> usize {
    match stmt {
        Stmt::Seq(first, _) => thread_count(first),
        Stmt::Par(l, r) => thread_count(l) + thread_count(r),
        _ => 1,
    }
}

pub fn enabled_threads(c: &Config) -> Vec<usize> {
    match &c.program {
        Some(p) => (0..thread_count(p)).collect(),
        None => Vec::new(),
    }
}

/// Evaluates an expression over non-negative integers. Subtraction
/// truncates at zero, comparisons yield 0 or 1.
pub fn eval_expr(e: &Expr, o: u64, s: Secret) -> Result<u64, EvalError> {
    match e {
        Expr::Const(n) => Ok(*n),
        Expr::Var(Var::S) => Ok(s),
        Expr::Var(Var::O) => Ok(o),
        Expr::Binary(op, l, r) => {
            let a = eval_expr(l, o, s)?;
            let b = eval_expr(r, o, s)?;
            let overflow = || EvalError::Overflow(e.to_string());
            Ok(match op {
                BinOp::Add => a.checked_add(b).ok_or_else(overflow)?,
                BinOp::Sub => a.saturating_sub(b),
                BinOp::Mul => a.checked_mul(b).ok_or_else(overflow)?,
                BinOp::Div => a.checked_div(b).ok_or_else(|| EvalError::DivisionByZero(e.to_string()))?,
                BinOp::Mod => a.checked_rem(b).ok_or_else(|| EvalError::DivisionByZero(e.to_string()))?,
                BinOp::And => a & b,
                BinOp::Or => a | b,
                BinOp::Xor => a ^ b,
                BinOp::Shl => {
                    if a == 0 {
                        0
                    } else if b >= 64 || a.leading_zeros() < b as u32 {
                        return Err(overflow());
                    } else {
                        a << b
                    }
                }
                BinOp::Shr => {
                    if b >= 64 {
                        0
                    } else {
                        a >> b
                    }
                }
                BinOp::Eq => u64::from(a == b),
                BinOp::Ne => u64::from(a != b),
                BinOp::Lt => u64::from(a < b),
                BinOp::Le => u64::from(a <= b),
                BinOp::Gt => u64::from(a > b),
                BinOp::Ge => u64::from(a >= b),
            })
        }
    }
}

#[derive(Debug)]
enum Fault {
    Eval(EvalError),
    Budget,
}

impl From<EvalError> for Fault {
    fn from(e: EvalError) -> Self {
        Fault::Eval(e)
    }
}

/// Result of running one thread for one concrete secret.
struct Fired {
    o: u64,
    rest: Option<Stmt>,
    /// `None` when only silent guard resolution happened.
    label: Option<String>,
}

fn fire(stmt: &Stmt, thread: usize, o: u64, s: Secret, fuel: &mut usize) -> Result<Fired, Fault> {
    match stmt {
        Stmt::Seq(first, second) => {
            let f = fire(first, thread, o, s, fuel)?;
            match (f.rest, f.label) {
                // the first component vanished silently: keep going
                (None, None) => fire(second, 0, f.o, s, fuel),
                (None, label) => Ok(Fired { o: f.o, rest: Some((**second).clone()), label }),
                (Some(r), label) => Ok(Fired { o: f.o, rest: Some(Stmt::seq(r, (**second).clone())), label }),
            }
        }
        Stmt::Par(l, r) => {
            let nl = thread_count(l);
            if thread < nl {
                let f = fire(l, thread, o, s, fuel)?;
                let rest = match f.rest {
                    None => (**r).clone(),
                    Some(l2) => Stmt::par(l2, (**r).clone()),
                };
                Ok(Fired { o: f.o, rest: Some(rest), label: f.label })
            } else {
                let f = fire(r, thread - nl, o, s, fuel)?;
                let rest = match f.rest {
                    None => (**l).clone(),
                    Some(r2) => Stmt::par((**l).clone(), r2),
                };
                Ok(Fired { o: f.o, rest: Some(rest), label: f.label })
            }
        }
        Stmt::Skip => Ok(Fired { o, rest: None, label: Some("skip".into()) }),
        Stmt::Assign(e) => Ok(Fired { o: eval_expr(e, o, s)?, rest: None, label: Some(format!("O := {e}")) }),
        Stmt::If(g, then, otherwise) => {
            let taken = eval_expr(g, o, s)? != 0;
            let branch = if taken { then } else { otherwise };
            if g.reads_secret() {
                let tag = if taken { "then" } else { "else" };
                Ok(Fired { o, rest: Some((**branch).clone()), label: Some(format!("if ({g}) [{tag}]")) })
            } else {
                burn(fuel)?;
                fire(branch, 0, o, s, fuel)
            }
        }
        Stmt::While(g, body) => {
            let taken = eval_expr(g, o, s)? != 0;
            let unrolled = Stmt::seq((**body).clone(), stmt.clone());
            if g.reads_secret() {
                if taken {
                    Ok(Fired { o, rest: Some(unrolled), label: Some(format!("while ({g}) [enter]")) })
                } else {
                    Ok(Fired { o, rest: None, label: Some(format!("while ({g}) [exit]")) })
                }
            } else {
                burn(fuel)?;
                if taken {
                    fire(&unrolled, 0, o, s, fuel)
                } else {
                    Ok(Fired { o, rest: None, label: None })
                }
            }
        }
    }
}

fn burn(fuel: &mut usize) -> Result<(), Fault> {
    if *fuel == 0 {
        return Err(Fault::Budget);
    }
    *fuel -= 1;
    Ok(())
}

/// Label for a step in which the chosen thread only resolved guards and
/// terminated without executing a command.
pub const SILENT_LABEL: &str = "(silent)";

/// Executes one atomic step of `thread`. `budget` bounds the silent guard
/// resolutions the step may perform.
pub fn step(c: &Config, thread: usize, budget: usize) -> Result<StepOutcome, Error> {
    let enabled = enabled_threads(c);
    let program = match &c.program {
        Some(p) if thread < enabled.len() => p,
        _ => return Err(Error::NotEnabled { thread, enabled }),
    };

    type Key = (u64, Option<Stmt>, String);
    let mut index: HashMap<Key, usize> = HashMap::new();
    let mut groups: Vec<(Key, BTreeSet<Secret>)> = Vec::new();
    for s in c.posterior.support() {
        let mut fuel = budget;
        let fired = fire(program, thread, c.o_value, s, &mut fuel).map_err(|f| match f {
            Fault::Eval(source) => Error::Eval { trace: String::new(), source },
            Fault::Budget => Error::BudgetExhausted { budget, trace: String::new() },
        })?;
        let label = fired.label.unwrap_or_else(|| SILENT_LABEL.to_string());
        let key = (fired.o, fired.rest, label);
        match index.get(&key) {
            Some(&i) => {
                groups[i].1.insert(s);
            }
            None => {
                index.insert(key.clone(), groups.len());
                groups.push((key, BTreeSet::from([s])));
            }
        }
    }

    let mut branches = Vec::with_capacity(groups.len());
    for ((o_value, program, label), members) in groups {
        let (posterior, probability) = c.posterior.condition(|s| members.contains(&s))?;
        branches.push(Branch { probability, next: Config { program, o_value, posterior }, label });
    }
    branches
        .sort_by(|a, b| (a.next.o_value, &a.label, &a.next.program).cmp(&(b.next.o_value, &b.label, &b.next.program)));
    Ok(StepOutcome { executed_thread: thread, branches })
}
