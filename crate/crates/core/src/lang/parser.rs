use std::collections::BTreeSet;

use super::{BinOp, Expr, ProgramDecl, SecretDomain, Stmt, Var, MAX_SECRET_BITS};
use crate::error::ParseError;

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Ident(String),
    Int(u64),
    Semi,
    Colon,
    Assign,
    LBrace,
    RBrace,
    LParen,
    RParen,
    Comma,
    ParBar,
    Op(BinOp),
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Int(n) => format!("`{n}`"),
            Tok::Semi => "`;`".into(),
            Tok::Colon => "`:`".into(),
            Tok::Assign => "`:=`".into(),
            Tok::LBrace => "`{`".into(),
            Tok::RBrace => "`}`".into(),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::Comma => "`,`".into(),
            Tok::ParBar => "`||`".into(),
            Tok::Op(op) => format!("`{}`", op.symbol()),
            Tok::Eof => "end of input".into(),
        }
    }
}

#[derive(Debug, Clone)]
struct Spanned {
    tok: Tok,
    line: usize,
    column: usize,
}

fn err(line: usize, column: usize, message: impl Into<String>) -> ParseError {
    ParseError { line, column, message: message.into() }
}

fn lex(source: &str) -> Result<Vec<Spanned>, ParseError> {
    let chars: Vec<char> = source.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);

    while i < chars.len() {
        let c = chars[i];
        let (start_line, start_col) = (line, col);
        let peek = chars.get(i + 1).copied();
        let push = |tok: Tok, len: usize, out: &mut Vec<Spanned>| {
            out.push(Spanned { tok, line: start_line, column: start_col });
            len
        };
        let advance = match c {
            '\n' => {
                i += 1;
                line += 1;
                col = 1;
                continue;
            }
            c if c.is_whitespace() => 1,
            '#' => {
                while i < chars.len() && chars[i] != '\n' {
                    i += 1;
                }
                continue;
            }
            ';' => push(Tok::Semi, 1, &mut out),
            ',' => push(Tok::Comma, 1, &mut out),
            '{' => push(Tok::LBrace, 1, &mut out),
            '}' => push(Tok::RBrace, 1, &mut out),
            '(' => push(Tok::LParen, 1, &mut out),
            ')' => push(Tok::RParen, 1, &mut out),
            ':' if peek == Some('=') => push(Tok::Assign, 2, &mut out),
            ':' => push(Tok::Colon, 1, &mut out),
            '|' if peek == Some('|') => push(Tok::ParBar, 2, &mut out),
            '|' => push(Tok::Op(BinOp::Or), 1, &mut out),
            '&' => push(Tok::Op(BinOp::And), 1, &mut out),
            '^' => push(Tok::Op(BinOp::Xor), 1, &mut out),
            '+' => push(Tok::Op(BinOp::Add), 1, &mut out),
            '-' => push(Tok::Op(BinOp::Sub), 1, &mut out),
            '*' => push(Tok::Op(BinOp::Mul), 1, &mut out),
            '/' => push(Tok::Op(BinOp::Div), 1, &mut out),
            '%' => push(Tok::Op(BinOp::Mod), 1, &mut out),
            '=' if peek == Some('=') => push(Tok::Op(BinOp::Eq), 2, &mut out),
            '=' => push(Tok::Op(BinOp::Eq), 1, &mut out),
            '!' if peek == Some('=') => push(Tok::Op(BinOp::Ne), 2, &mut out),
            '<' if peek == Some('<') => push(Tok::Op(BinOp::Shl), 2, &mut out),
            '<' if peek == Some('=') => push(Tok::Op(BinOp::Le), 2, &mut out),
            '<' => push(Tok::Op(BinOp::Lt), 1, &mut out),
            '>' if peek == Some('>') => push(Tok::Op(BinOp::Shr), 2, &mut out),
            '>' if peek == Some('=') => push(Tok::Op(BinOp::Ge), 2, &mut out),
            '>' => push(Tok::Op(BinOp::Gt), 1, &mut out),
            c if c.is_ascii_digit() => {
                let mut j = i;
                while j < chars.len() && (chars[j].is_ascii_alphanumeric() || chars[j] == '_') {
                    j += 1;
                }
                let text: String = chars[i..j].iter().filter(|c| **c != '_').collect();
                let lower = text.to_ascii_lowercase();
                let parsed = if let Some(hex) = lower.strip_prefix("0x") {
                    u64::from_str_radix(hex, 16)
                } else if let Some(bin) = lower.strip_prefix("0b") {
                    u64::from_str_radix(bin, 2)
                } else {
                    lower.parse::<u64>()
                };
                let n = parsed.map_err(|_| err(line, col, format!("invalid integer literal `{text}`")))?;
                push(Tok::Int(n), j - i, &mut out)
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let mut j = i;
                while j < chars.len() && (chars[j].is_ascii_alphanumeric() || chars[j] == '_') {
                    j += 1;
                }
                let word: String = chars[i..j].iter().collect();
                let tok = if word == "mod" { Tok::Op(BinOp::Mod) } else { Tok::Ident(word) };
                push(tok, j - i, &mut out)
            }
            other => return Err(err(line, col, format!("unexpected character `{other}`"))),
        };
        i += advance;
        col += advance;
    }
    out.push(Spanned { tok: Tok::Eof, line, column: col });
    Ok(out)
}

const KEYWORDS: &[&str] = &["secret", "public", "in", "if", "then", "else", "while", "do", "skip"];

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn here(&self) -> (usize, usize) {
        let t = &self.toks[self.pos];
        (t.line, t.column)
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].tok.clone();
        if t != Tok::Eof {
            self.pos += 1;
        }
        t
    }

    fn error(&self, message: impl Into<String>) -> ParseError {
        let (l, c) = self.here();
        err(l, c, message)
    }

    fn unexpected(&self, wanted: &str) -> ParseError {
        self.error(format!("expected {wanted}, found {}", self.peek().describe()))
    }

    fn expect(&mut self, tok: Tok) -> Result<(), ParseError> {
        if *self.peek() == tok {
            self.bump();
            Ok(())
        } else {
            Err(self.unexpected(&tok.describe()))
        }
    }

    fn at_keyword(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Ident(w) if w == kw)
    }

    fn keyword(&mut self, kw: &str) -> Result<(), ParseError> {
        if self.at_keyword(kw) {
            self.bump();
            Ok(())
        } else {
            Err(self.unexpected(&format!("`{kw}`")))
        }
    }

    fn int(&mut self) -> Result<u64, ParseError> {
        match self.peek() {
            Tok::Int(n) => {
                let n = *n;
                self.bump();
                Ok(n)
            }
            _ => Err(self.unexpected("an integer")),
        }
    }

    fn program(&mut self) -> Result<ProgramDecl, ParseError> {
        self.keyword("secret")?;
        self.variable_name("S")?;
        let domain = if *self.peek() == Tok::Colon {
            self.bump();
            let (l, c) = self.here();
            let bits = self.int()?;
            if bits == 0 || bits > MAX_SECRET_BITS as u64 {
                return Err(err(l, c, format!("secret width must be between 1 and {MAX_SECRET_BITS} bits")));
            }
            SecretDomain::Width(bits as u32)
        } else if self.at_keyword("in") {
            self.bump();
            self.expect(Tok::LBrace)?;
            let mut values = BTreeSet::new();
            if *self.peek() == Tok::RBrace {
                return Err(self.error("secret domain must be non-empty"));
            }
            loop {
                values.insert(self.int()?);
                if *self.peek() == Tok::Comma {
                    self.bump();
                } else {
                    break;
                }
            }
            self.expect(Tok::RBrace)?;
            SecretDomain::Values(values)
        } else {
            return Err(self.unexpected("`:` or `in`"));
        };
        self.expect(Tok::Semi)?;
        self.keyword("public")?;
        self.variable_name("O")?;
        self.expect(Tok::Assign)?;
        let initial_o = self.int()?;
        self.expect(Tok::Semi)?;
        let body = self.stmts()?;
        if *self.peek() != Tok::Eof {
            return Err(self.unexpected("a statement"));
        }
        Ok(ProgramDecl { domain, initial_o, body })
    }

    fn variable_name(&mut self, name: &str) -> Result<(), ParseError> {
        match self.peek() {
            Tok::Ident(w) if w == name => {
                self.bump();
                Ok(())
            }
            _ => Err(self.unexpected(&format!("`{name}` (only one secret `S` and one public `O` are supported)"))),
        }
    }

    /// Statement list up to a closing brace or end of input, folded into
    /// right-nested `Seq`s.
    fn stmts(&mut self) -> Result<Stmt, ParseError> {
        let mut items = Vec::new();
        while !matches!(self.peek(), Tok::RBrace | Tok::Eof) {
            items.push(self.stmt()?);
        }
        let mut iter = items.into_iter().rev();
        let Some(last) = iter.next() else {
            return Ok(Stmt::Skip);
        };
        Ok(iter.fold(last, |acc, s| Stmt::seq(s, acc)))
    }

    fn stmt(&mut self) -> Result<Stmt, ParseError> {
        let s = self.par()?;
        let closed_by_brace = self.pos > 0 && self.toks[self.pos - 1].tok == Tok::RBrace;
        if *self.peek() == Tok::Semi {
            self.bump();
        } else if !closed_by_brace {
            return Err(self.unexpected("`;`"));
        }
        Ok(s)
    }

    fn par(&mut self) -> Result<Stmt, ParseError> {
        let left = self.atom()?;
        if *self.peek() == Tok::ParBar {
            self.bump();
            let right = self.par()?;
            Ok(Stmt::par(left, right))
        } else {
            Ok(left)
        }
    }

    fn atom(&mut self) -> Result<Stmt, ParseError> {
        let (l, c) = self.here();
        match self.peek().clone() {
            Tok::LBrace => self.block(),
            Tok::Ident(w) => match w.as_str() {
                "skip" => {
                    self.bump();
                    Ok(Stmt::Skip)
                }
                "if" => {
                    self.bump();
                    let guard = self.expr()?;
                    self.keyword("then")?;
                    let then = self.block()?;
                    let otherwise = if self.at_keyword("else") {
                        self.bump();
                        if self.at_keyword("if") {
                            self.atom()?
                        } else {
                            self.block()?
                        }
                    } else {
                        Stmt::Skip
                    };
                    Ok(Stmt::if_(guard, then, otherwise))
                }
                "while" => {
                    self.bump();
                    let guard = self.expr()?;
                    self.keyword("do")?;
                    let body = self.block()?;
                    Ok(Stmt::while_(guard, body))
                }
                "O" => {
                    self.bump();
                    self.expect(Tok::Assign)?;
                    Ok(Stmt::Assign(self.expr()?))
                }
                "S" => Err(err(l, c, "cannot assign to the secret variable `S`")),
                kw if KEYWORDS.contains(&kw) => Err(self.unexpected("a statement")),
                other => Err(err(l, c, format!("undeclared variable `{other}`"))),
            },
            _ => Err(self.unexpected("a statement")),
        }
    }

    fn block(&mut self) -> Result<Stmt, ParseError> {
        self.expect(Tok::LBrace)?;
        let body = self.stmts()?;
        self.expect(Tok::RBrace)?;
        Ok(body)
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        self.binary(1)
    }

    fn binary(&mut self, min_prec: u8) -> Result<Expr, ParseError> {
        let mut lhs = self.primary()?;
        while let Tok::Op(op) = *self.peek() {
            if op.precedence() < min_prec {
                break;
            }
            self.bump();
            let rhs = self.binary(op.precedence() + 1)?;
            lhs = Expr::binary(op, lhs, rhs);
        }
        Ok(lhs)
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        let (l, c) = self.here();
        match self.peek().clone() {
            Tok::Int(n) => {
                self.bump();
                Ok(Expr::Const(n))
            }
            Tok::LParen => {
                self.bump();
                let e = self.expr()?;
                self.expect(Tok::RParen)?;
                Ok(e)
            }
            Tok::Ident(w) => match w.as_str() {
                "S" => {
                    self.bump();
                    Ok(Expr::Var(Var::S))
                }
                "O" => {
                    self.bump();
                    Ok(Expr::Var(Var::O))
                }
                kw if KEYWORDS.contains(&kw) => Err(self.unexpected("an expression")),
                other => Err(err(l, c, format!("undeclared variable `{other}`"))),
            },
            _ => Err(self.unexpected("an expression")),
        }
    }
}

/// Parses a complete program file: the two declarations followed by the
/// statement list.
pub fn parse(source: &str) -> Result<ProgramDecl, ParseError> {
    let mut p = Parser { toks: lex(source)?, pos: 0 };
    p.program()
}

/// Parses a bare statement list without declarations.
pub fn parse_stmt(source: &str) -> Result<Stmt, ParseError> {
    let mut p = Parser { toks: lex(source)?, pos: 0 };
    let s = p.stmts()?;
    if *p.peek() != Tok::Eof {
        return Err(p.unexpected("a statement"));
    }
    Ok(s)
}
