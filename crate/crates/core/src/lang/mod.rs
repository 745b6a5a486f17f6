//! Abstract syntax of the analyzed language: one secret variable `S`, one
//! public variable `O`, assignments to `O`, conditionals, loops, sequencing
//! and parallel composition.

mod parser;
mod printer;

use std::collections::BTreeSet;
use std::fmt;

pub use parser::{parse, parse_stmt};
pub use printer::{pretty_print, stmt_source};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Var {
    /// The secret (high) variable.
    S,
    /// The public (low) variable.
    O,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Mod,
    And,
    Or,
    Xor,
    Shl,
    Shr,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl BinOp {
    /// Binding strength, C-like. Larger binds tighter.
    pub fn precedence(self) -> u8 {
        use BinOp::*;
        match self {
            Or => 1,
            Xor => 2,
            And => 3,
            Eq | Ne => 4,
            Lt | Le | Gt | Ge => 5,
            Shl | Shr => 6,
            Add | Sub => 7,
            Mul | Div | Mod => 8,
        }
    }

    pub fn symbol(self) -> &'static str {
        use BinOp::*;
        match self {
            Add => "+",
            Sub => "-",
            Mul => "*",
            Div => "/",
            Mod => "mod",
            And => "&",
            Or => "|",
            Xor => "^",
            Shl => "<<",
            Shr => ">>",
            Eq => "=",
            Ne => "!=",
            Lt => "<",
            Le => "<=",
            Gt => ">",
            Ge => ">=",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Expr {
    Const(u64),
    Var(Var),
    Binary(BinOp, Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn binary(op: BinOp, lhs: Expr, rhs: Expr) -> Expr {
        Expr::Binary(op, Box::new(lhs), Box::new(rhs))
    }

    pub fn reads(&self, var: Var) -> bool {
        match self {
            Expr::Const(_) => false,
            Expr::Var(v) => *v == var,
            Expr::Binary(_, l, r) => l.reads(var) || r.reads(var),
        }
    }

    pub fn reads_secret(&self) -> bool {
        self.reads(Var::S)
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        printer::write_expr(f, self, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stmt {
    Skip,
    /// `O := e`. The secret is read-only, so the target is implicit.
    Assign(Expr),
    Seq(Box<Stmt>, Box<Stmt>),
    If(Expr, Box<Stmt>, Box<Stmt>),
    While(Expr, Box<Stmt>),
    Par(Box<Stmt>, Box<Stmt>),
}

impl Stmt {
    pub fn seq(first: Stmt, second: Stmt) -> Stmt {
        Stmt::Seq(Box::new(first), Box::new(second))
    }

    pub fn par(left: Stmt, right: Stmt) -> Stmt {
        Stmt::Par(Box::new(left), Box::new(right))
    }

    pub fn if_(guard: Expr, then: Stmt, otherwise: Stmt) -> Stmt {
        Stmt::If(guard, Box::new(then), Box::new(otherwise))
    }

    pub fn while_(guard: Expr, body: Stmt) -> Stmt {
        Stmt::While(guard, Box::new(body))
    }

    pub fn contains_par(&self) -> bool {
        match self {
            Stmt::Skip | Stmt::Assign(_) => false,
            Stmt::Par(..) => true,
            Stmt::Seq(a, b) | Stmt::If(_, a, b) => a.contains_par() || b.contains_par(),
            Stmt::While(_, b) => b.contains_par(),
        }
    }
}

impl fmt::Display for Stmt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&stmt_source(self))
    }
}

/// The finite set of values the secret may take.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum SecretDomain {
    /// `{0, ..., 2^bits - 1}`
    Width(u32),
    Values(BTreeSet<u64>),
}

/// Widest secret the declaration syntax accepts. Analysis enumerates the
/// whole domain, so anything near this bound is already impractical.
pub const MAX_SECRET_BITS: u32 = 32;

impl SecretDomain {
    pub fn values(&self) -> Vec<u64> {
        match self {
            SecretDomain::Width(bits) => (0..(1u64 << bits)).collect(),
            SecretDomain::Values(set) => set.iter().copied().collect(),
        }
    }

    pub fn size(&self) -> u64 {
        match self {
            SecretDomain::Width(bits) => 1u64 << bits,
            SecretDomain::Values(set) => set.len() as u64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ProgramDecl {
    pub domain: SecretDomain,
    /// Value of `O` before the first step; known to the attacker.
    pub initial_o: u64,
    pub body: Stmt,
}

impl ProgramDecl {
    pub fn is_sequential(&self) -> bool {
        !self.body.contains_par()
    }
}
