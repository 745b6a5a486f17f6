use std::fmt::{self, Write};

use super::{Expr, ProgramDecl, SecretDomain, Stmt, Var};

const INDENT: &str = "    ";

pub(super) fn write_expr(f: &mut dyn Write, e: &Expr, parent_prec: u8) -> fmt::Result {
    match e {
        Expr::Const(n) => write!(f, "{n}"),
        Expr::Var(Var::S) => f.write_str("S"),
        Expr::Var(Var::O) => f.write_str("O"),
        Expr::Binary(op, l, r) => {
            let prec = op.precedence();
            let wrap = prec < parent_prec;
            if wrap {
                f.write_char('(')?;
            }
            write_expr(f, l, prec)?;
            write!(f, " {} ", op.symbol())?;
            // operators are left-associative: an equal-precedence right
            // operand needs parentheses
            write_expr(f, r, prec + 1)?;
            if wrap {
                f.write_char(')')?;
            }
            Ok(())
        }
    }
}

/// Renders a program in the concrete syntax accepted by [`super::parse`].
pub fn pretty_print(prog: &ProgramDecl) -> String {
    let mut out = String::new();
    match &prog.domain {
        SecretDomain::Width(bits) => {
            let _ = writeln!(out, "secret S : {bits};");
        }
        SecretDomain::Values(vals) => {
            let list: Vec<String> = vals.iter().map(u64::to_string).collect();
            let _ = writeln!(out, "secret S in {{{}}};", list.join(", "));
        }
    }
    let _ = writeln!(out, "public O := {};", prog.initial_o);
    out.push_str(&stmt_source(&prog.body));
    out
}

/// Renders a statement list, one statement per line.
pub fn stmt_source(s: &Stmt) -> String {
    let mut lines = Vec::new();
    list(s, 0, &mut lines);
    lines.join("\n")
}

fn list(s: &Stmt, depth: usize, lines: &mut Vec<String>) {
    let mut cur = s;
    loop {
        match cur {
            Stmt::Seq(first, rest) => {
                statement(first, depth, lines);
                cur = rest;
            }
            other => {
                statement(other, depth, lines);
                return;
            }
        }
    }
}

fn statement(s: &Stmt, depth: usize, lines: &mut Vec<String>) {
    let mut text = String::new();
    atom(s, depth, &mut text);
    if !text.ends_with('}') {
        text.push(';');
    }
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            lines.push(format!("{}{}", INDENT.repeat(depth), line));
        } else {
            lines.push(line.to_string());
        }
    }
}

fn block(s: &Stmt, depth: usize, out: &mut String) {
    let mut inner = Vec::new();
    list(s, depth + 1, &mut inner);
    out.push_str("{\n");
    for l in inner {
        out.push_str(&l);
        out.push('\n');
    }
    out.push_str(&INDENT.repeat(depth));
    out.push('}');
}

/// A nested `Seq` is always braced so its grouping survives re-parsing.
fn atom(s: &Stmt, depth: usize, out: &mut String) {
    match s {
        Stmt::Skip => out.push_str("skip"),
        Stmt::Assign(e) => {
            let _ = write!(out, "O := {e}");
        }
        Stmt::Seq(..) => block(s, depth, out),
        Stmt::If(g, t, e) => {
            let _ = write!(out, "if ({g}) then ");
            block(t, depth, out);
            out.push_str(" else ");
            block(e, depth, out);
        }
        Stmt::While(g, b) => {
            let _ = write!(out, "while ({g}) do ");
            block(b, depth, out);
        }
        Stmt::Par(l, r) => {
            if matches!(**l, Stmt::Par(..)) {
                block(l, depth, out);
            } else {
                atom(l, depth, out);
            }
            out.push_str(" || ");
            atom(r, depth, out);
        }
    }
}
