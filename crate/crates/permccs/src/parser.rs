//! Concrete syntax: lexer, recursive-descent parsers, printers and JSON traces.
//!
//! Printing is the inverse of parsing: `parse(print(x)) == x` for every
//! value the parsers can produce.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::confined::{well_resourced, CanonSystem, Narrative, Perm, PermSet, Polarity, System};
use crate::logic::{EnvError, Formula, PermEnv};
use crate::process::{CanonProcess, ProcStep};
use crate::proof::{Inst, ProofTree, Rule, Sequent};
use crate::syntax::{BoolExpr, DefError, DefTable, Expr, Name, Process, RawDef, Subst};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("{line}:{col}: {msg}")]
    Syntax { line: usize, col: usize, msg: String },
    #[error("{line}:{col}: duplicate permission `{perm}`")]
    DuplicatePermission { line: usize, col: usize, perm: String },
    #[error("system is not well-resourced: parallel components share permissions")]
    NotWellResourced,
    #[error(transparent)]
    Def(#[from] DefError),
    #[error(transparent)]
    Env(#[from] EnvError),
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Tok {
    Ident(String),
    Int(i64),
    Str(String),
    Sym(&'static str),
    Eof,
}

const SYMS: [&str; 29] = [
    "|->", "|-", "||", "&&", "=>", "<=", ">=", "!=", "==", "(", ")", "{", "}", "[", "]", "<", ">", ",", ".", ";", ":",
    "!", "?", "|", "=", "+", "-", "*", "/",
];

const KEYWORDS: [&str; 13] = ["if", "then", "else", "new", "not", "true", "false", "emp", "any", "blk", "def", "env", "bool"];

fn lex(src: &str) -> Result<Vec<(Tok, usize, usize)>, ParseError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);
    let err = |line, col, msg: String| ParseError::Syntax { line, col, msg };
    while i < chars.len() {
        let c = chars[i];
        if c == '\n' {
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        if c == '#' {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }
        let (l0, c0) = (line, col);
        if c.is_ascii_digit() {
            let start = i;
            while i < chars.len() && chars[i].is_ascii_digit() {
                i += 1;
            }
            let s: String = chars[start..i].iter().collect();
            let v = s.parse::<i64>().map_err(|_| err(l0, c0, format!("integer `{s}` out of range")))?;
            col += i - start;
            out.push((Tok::Int(v), l0, c0));
            continue;
        }
        if c.is_alphabetic() || c == '_' || c == '%' {
            let start = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || matches!(chars[i], '_' | '%' | '\'')) {
                i += 1;
            }
            col += i - start;
            out.push((Tok::Ident(chars[start..i].iter().collect()), l0, c0));
            continue;
        }
        if c == '"' {
            let mut s = String::new();
            i += 1;
            col += 1;
            loop {
                match chars.get(i) {
                    None => return Err(err(l0, c0, "unterminated string".into())),
                    Some('"') => {
                        i += 1;
                        col += 1;
                        break;
                    }
                    Some('\\') => {
                        match chars.get(i + 1) {
                            Some('n') => s.push('\n'),
                            Some(&e) => s.push(e),
                            None => return Err(err(l0, c0, "unterminated string".into())),
                        }
                        i += 2;
                        col += 2;
                    }
                    Some(&ch) => {
                        if ch == '\n' {
                            line += 1;
                            col = 0;
                        }
                        s.push(ch);
                        i += 1;
                        col += 1;
                    }
                }
            }
            out.push((Tok::Str(s), l0, c0));
            continue;
        }
        let rest: String = chars[i..chars.len().min(i + 3)].iter().collect();
        match SYMS.iter().find(|s| rest.starts_with(**s)) {
            Some(s) => {
                i += s.len();
                col += s.len();
                out.push((Tok::Sym(s), l0, c0));
            }
            None => return Err(err(l0, c0, format!("unexpected character `{c}`"))),
        }
    }
    out.push((Tok::Eof, line, col));
    Ok(out)
}

struct Parser {
    toks: Vec<(Tok, usize, usize)>,
    pos: usize,
}

type PResult<T> = Result<T, ParseError>;

impl Parser {
    fn new(src: &str) -> PResult<Parser> {
        Ok(Parser { toks: lex(src)?, pos: 0 })
    }

    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn peek_at(&self, k: usize) -> &Tok {
        &self.toks[(self.pos + k).min(self.toks.len() - 1)].0
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].0.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn err<T>(&self, msg: impl Into<String>) -> PResult<T> {
        let (_, line, col) = &self.toks[self.pos];
        Err(ParseError::Syntax { line: *line, col: *col, msg: msg.into() })
    }

    fn is_sym(&self, s: &str) -> bool {
        matches!(self.peek(), Tok::Sym(x) if *x == s)
    }

    fn is_kw(&self, s: &str) -> bool {
        matches!(self.peek(), Tok::Ident(x) if x == s)
    }

    fn eat_sym(&mut self, s: &str) -> bool {
        if self.is_sym(s) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn eat_kw(&mut self, s: &str) -> bool {
        if self.is_kw(s) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect_sym(&mut self, s: &str) -> PResult<()> {
        if self.eat_sym(s) {
            Ok(())
        } else {
            self.err(format!("expected `{s}`, found {}", describe(self.peek())))
        }
    }

    fn expect_kw(&mut self, s: &str) -> PResult<()> {
        if self.eat_kw(s) {
            Ok(())
        } else {
            self.err(format!("expected `{s}`, found {}", describe(self.peek())))
        }
    }

    fn expect_eof(&mut self) -> PResult<()> {
        if *self.peek() == Tok::Eof {
            Ok(())
        } else {
            self.err(format!("unexpected {}", describe(self.peek())))
        }
    }

    fn name(&mut self) -> PResult<Name> {
        match self.peek().clone() {
            Tok::Ident(s) if !KEYWORDS.contains(&s.as_str()) => {
                self.bump();
                Ok(Name::from(s))
            }
            t => self.err(format!("expected a name, found {}", describe(&t))),
        }
    }

    fn names_until(&mut self, close: &str) -> PResult<Vec<Name>> {
        let mut out = Vec::new();
        if self.eat_sym(close) {
            return Ok(out);
        }
        loop {
            out.push(self.name()?);
            if self.eat_sym(close) {
                return Ok(out);
            }
            self.expect_sym(",")?;
        }
    }

    // Expressions ----------------------------------------------------------

    fn starts_term(&self) -> bool {
        match self.peek() {
            Tok::Int(_) => true,
            Tok::Ident(s) => !KEYWORDS.contains(&s.as_str()),
            Tok::Sym(s) => *s == "-" || *s == "(",
            _ => false,
        }
    }

    fn term(&mut self) -> PResult<Expr> {
        match self.peek().clone() {
            Tok::Int(v) => {
                self.bump();
                Ok(Expr::Lit(v))
            }
            Tok::Sym("-") => {
                self.bump();
                match self.bump() {
                    Tok::Int(v) => Ok(Expr::Lit(-v)),
                    _ => self.err("expected an integer after unary `-`"),
                }
            }
            Tok::Sym("(") => {
                self.bump();
                let e = self.expr()?;
                self.expect_sym(")")?;
                Ok(e)
            }
            _ => Ok(Expr::Var(self.name()?)),
        }
    }

    fn expr(&mut self) -> PResult<Expr> {
        let mut e = self.term()?;
        loop {
            if self.eat_sym("+") {
                e = Expr::Add(Box::new(e), Box::new(self.term()?));
            } else if self.eat_sym("-") {
                e = Expr::Sub(Box::new(e), Box::new(self.term()?));
            } else {
                return Ok(e);
            }
        }
    }

    fn exprs_until(&mut self, close: &str) -> PResult<Vec<Expr>> {
        let mut out = Vec::new();
        if self.eat_sym(close) {
            return Ok(out);
        }
        loop {
            out.push(self.expr()?);
            if self.eat_sym(close) {
                return Ok(out);
            }
            self.expect_sym(",")?;
        }
    }

    // Booleans --------------------------------------------------------------

    fn bool_expr(&mut self) -> PResult<BoolExpr> {
        let a = self.bool_or()?;
        if self.eat_sym("=>") {
            return Ok(BoolExpr::implies(a, self.bool_expr()?));
        }
        Ok(a)
    }

    fn bool_or(&mut self) -> PResult<BoolExpr> {
        let mut a = self.bool_and()?;
        while self.eat_sym("||") {
            a = BoolExpr::or(a, self.bool_and()?);
        }
        Ok(a)
    }

    fn bool_and(&mut self) -> PResult<BoolExpr> {
        let mut a = self.bool_not()?;
        while self.eat_sym("&&") {
            a = BoolExpr::and(a, self.bool_not()?);
        }
        Ok(a)
    }

    fn bool_not(&mut self) -> PResult<BoolExpr> {
        if self.eat_kw("not") || self.eat_sym("!") {
            return Ok(BoolExpr::not(self.bool_not()?));
        }
        self.bool_atom()
    }

    fn bool_atom(&mut self) -> PResult<BoolExpr> {
        if self.eat_kw("true") {
            return Ok(BoolExpr::tt());
        }
        if self.eat_kw("false") {
            return Ok(BoolExpr::ff());
        }
        if self.is_sym("(") {
            let save = self.pos;
            self.bump();
            if let Ok(b) = self.bool_expr() {
                if self.eat_sym(")") && !self.at_cmp() && !self.is_sym("+") && !self.is_sym("-") {
                    return Ok(b);
                }
            }
            self.pos = save;
        }
        let a = self.expr()?;
        let op = match self.peek() {
            Tok::Sym(s) if self.at_cmp() => *s,
            t => return self.err(format!("expected a comparison, found {}", describe(t))),
        };
        self.bump();
        let b = self.expr()?;
        Ok(match op {
            "<=" => BoolExpr::leq(a, b),
            ">=" => BoolExpr::leq(b, a),
            "<" => BoolExpr::lt(a, b),
            ">" => BoolExpr::lt(b, a),
            "=" | "==" => BoolExpr::eq(a, b),
            _ => BoolExpr::not(BoolExpr::eq(a, b)),
        })
    }

    fn at_cmp(&self) -> bool {
        matches!(self.peek(), Tok::Sym("<=" | ">=" | "<" | ">" | "=" | "==" | "!="))
    }

    // Processes -------------------------------------------------------------

    fn process(&mut self) -> PResult<Process> {
        let p = self.prefix()?;
        if self.is_sym("|") {
            self.bump();
            return Ok(Process::Par(Arc::new(p), Arc::new(self.process()?)));
        }
        Ok(p)
    }

    fn prefix(&mut self) -> PResult<Process> {
        if let Tok::Int(0) = self.peek() {
            self.bump();
            return Ok(Process::Nil);
        }
        if self.eat_sym("(") {
            let p = self.process()?;
            self.expect_sym(")")?;
            return Ok(p);
        }
        if self.eat_kw("if") {
            let b = self.bool_expr()?;
            self.expect_kw("then")?;
            let p = self.prefix()?;
            self.expect_kw("else")?;
            let q = self.prefix()?;
            return Ok(Process::If(b, Arc::new(p), Arc::new(q)));
        }
        if self.eat_kw("new") {
            let cs = self.new_names()?;
            let p = self.prefix()?;
            return Ok(Process::new_all(&cs, p));
        }
        let c = self.name()?;
        if self.eat_sym("!") {
            let args = if self.eat_sym("(") {
                self.exprs_until(")")?
            } else if self.starts_term() && !self.is_sym("(") {
                vec![self.term()?]
            } else {
                vec![]
            };
            return Ok(Process::Out(c, args));
        }
        if self.eat_sym("?") {
            let xs = if self.eat_sym("(") { self.names_until(")")? } else { vec![] };
            let body = if self.eat_sym(".") { self.prefix()? } else { Process::Nil };
            return Ok(Process::In(c, xs, Arc::new(body)));
        }
        if self.eat_sym("(") {
            let args = self.exprs_until(")")?;
            let mut ren = Vec::new();
            if self.eat_sym("[") && !self.eat_sym("]") {
                loop {
                    let actual = self.name()?;
                    self.expect_sym("/")?;
                    let formal = self.name()?;
                    ren.push((actual, formal));
                    if self.eat_sym("]") {
                        break;
                    }
                    self.expect_sym(",")?;
                }
            }
            return Ok(Process::Call(c, args, ren));
        }
        self.err(format!("expected `!`, `?` or `(` after `{c}`"))
    }

    fn new_names(&mut self) -> PResult<Vec<Name>> {
        let mut cs = vec![self.name()?];
        while self.eat_sym(",") {
            cs.push(self.name()?);
        }
        self.expect_sym(".")?;
        Ok(cs)
    }

    // Systems ---------------------------------------------------------------

    fn perms_until(&mut self, close: &str) -> PResult<PermSet> {
        let mut out = PermSet::new();
        if self.eat_sym(close) {
            return Ok(out);
        }
        loop {
            let (line, col) = (self.toks[self.pos].1, self.toks[self.pos].2);
            let c = self.name()?;
            let pol = if self.eat_sym("?") {
                Polarity::In
            } else if self.eat_sym("!") {
                Polarity::Out
            } else {
                return self.err("expected `?` or `!` after a permission channel");
            };
            let p = Perm { chan: c, pol };
            if !out.insert(p.clone()) {
                return Err(ParseError::DuplicatePermission { line, col, perm: p.to_string() });
            }
            if self.eat_sym(close) {
                return Ok(out);
            }
            self.expect_sym(",")?;
        }
    }

    fn system(&mut self) -> PResult<System> {
        let s = self.sys_prefix()?;
        if self.eat_sym("||") || self.eat_sym("|") {
            return Ok(System::Par(Arc::new(s), Arc::new(self.system()?)));
        }
        Ok(s)
    }

    fn sys_prefix(&mut self) -> PResult<System> {
        if self.eat_sym("<") {
            let e = self.perms_until(">")?;
            let p = if self.eat_sym("{") {
                let p = self.process()?;
                self.expect_sym("}")?;
                p
            } else {
                self.prefix()?
            };
            return Ok(System::Leaf(e, p));
        }
        if self.eat_kw("new") {
            let cs = self.new_names()?;
            let s = self.sys_prefix()?;
            return Ok(System::new_all(&cs, s));
        }
        if self.eat_sym("(") {
            let s = self.system()?;
            self.expect_sym(")")?;
            return Ok(s);
        }
        self.err(format!("expected a system, found {}", describe(self.peek())))
    }

    // Formulas and environments ----------------------------------------------

    fn formula(&mut self) -> PResult<Formula> {
        let a = self.formula_atom()?;
        if self.eat_sym("*") {
            return Ok(Formula::sep(a, self.formula()?));
        }
        Ok(a)
    }

    fn formula_atom(&mut self) -> PResult<Formula> {
        if self.eat_kw("emp") {
            return Ok(Formula::Emp);
        }
        if self.eat_kw("any") {
            return Ok(Formula::Any);
        }
        if self.eat_kw("blk") {
            return Ok(Formula::Blk(self.name()?));
        }
        if self.eat_sym("(") {
            let f = self.formula()?;
            self.expect_sym(")")?;
            return Ok(f);
        }
        let c = self.name()?;
        self.expect_sym("|->")?;
        let es = if self.eat_sym("(") { self.exprs_until(")")? } else { vec![self.term()?] };
        Ok(Formula::State(c, es))
    }

    fn env(&mut self) -> PResult<PermEnv> {
        let mut map = BTreeMap::new();
        if self.is_sym("{") && matches!(self.peek_at(1), Tok::Sym("}")) {
            self.bump();
            self.bump();
            return Ok(PermEnv::new(map)?);
        }
        loop {
            let c = self.name()?;
            self.expect_sym(":")?;
            self.expect_sym("{")?;
            let e = self.perms_until("}")?;
            if map.insert(c.clone(), e).is_some() {
                return self.err(format!("channel `{c}` bound twice in environment"));
            }
            let more = self.is_sym(";")
                && matches!(self.peek_at(1), Tok::Ident(s) if !KEYWORDS.contains(&s.as_str()))
                && matches!(self.peek_at(2), Tok::Sym(":"));
            if !more {
                break;
            }
            self.bump();
        }
        Ok(PermEnv::new(map)?)
    }

    fn sequent_parts(&mut self) -> PResult<(Option<PermEnv>, Option<BoolExpr>, Formula, System, Formula)> {
        let env = if self.eat_kw("env") {
            let e = self.env()?;
            self.eat_sym(";");
            Some(e)
        } else {
            None
        };
        let cond = if self.eat_kw("bool") {
            let b = self.bool_expr()?;
            self.eat_sym(";");
            Some(b)
        } else {
            None
        };
        self.expect_sym("|-")?;
        self.expect_sym("{")?;
        let pre = self.formula()?;
        self.expect_sym("}")?;
        let sys = self.system()?;
        self.expect_sym("{")?;
        let post = self.formula()?;
        self.expect_sym("}")?;
        Ok((env, cond, pre, sys, post))
    }

    // Definitions and proofs -------------------------------------------------

    fn definition(&mut self) -> PResult<RawDef> {
        self.expect_kw("def")?;
        let name = self.name()?;
        let params = if self.eat_sym("(") { self.names_until(")")? } else { vec![] };
        let chans = if self.eat_sym("[") { Some(self.names_until("]")?) } else { None };
        self.expect_sym("=")?;
        let body = self.process()?;
        self.eat_sym(";");
        Ok(RawDef { name, params, chans, body })
    }

    fn definitions(&mut self) -> PResult<Vec<RawDef>> {
        let mut out = Vec::new();
        while self.is_kw("def") {
            out.push(self.definition()?);
        }
        Ok(out)
    }

    fn string_as<T>(&self, s: &str, f: impl FnOnce(&mut Parser) -> PResult<T>) -> PResult<T> {
        let mut p = Parser::new(s)?;
        let v = f(&mut p)?;
        p.expect_eof()?;
        Ok(v)
    }

    fn proof(&mut self, defs: &DefTable, env: &PermEnv, cond: &BoolExpr) -> PResult<ProofTree> {
        self.expect_sym("(")?;
        let rule_name = match self.bump() {
            Tok::Ident(s) => s,
            t => return self.err(format!("expected a rule name, found {}", describe(&t))),
        };
        let Some(rule) = Rule::from_name(&rule_name) else {
            return self.err(format!("unknown rule `{rule_name}`"));
        };
        let mut inst = Inst::default();
        let mut seq = None;
        while self.eat_sym(":") {
            let key = match self.bump() {
                Tok::Ident(s) => s,
                t => return self.err(format!("expected a key, found {}", describe(&t))),
            };
            match key.as_str() {
                "seq" => {
                    let s = self.string()?;
                    let (e, b, pre, sys, post) = self.string_as(&s, |p| p.sequent_parts())?;
                    seq = Some(Sequent::new(
                        e.unwrap_or_else(|| env.clone()),
                        b.unwrap_or_else(|| cond.clone()),
                        pre,
                        resolve_system(defs, &sys)?,
                        post,
                    ));
                }
                "chans" => {
                    inst.chans = if self.eat_sym("(") { self.names_until(")")? } else { vec![self.name()?] };
                }
                "var" => inst.var = Some(self.name_or_string()?),
                "from" => inst.from = Some(self.name_or_string()?),
                "to" => inst.to = Some(self.name_or_string()?),
                "expr" => {
                    inst.expr = Some(match self.peek().clone() {
                        Tok::Str(s) => {
                            self.bump();
                            self.string_as(&s, |p| p.expr())?
                        }
                        _ => self.term()?,
                    })
                }
                "cut" => {
                    let s = self.string()?;
                    inst.cut = Some(self.string_as(&s, |p| p.formula())?);
                }
                "frame" => {
                    let s = self.string()?;
                    inst.frame = Some(self.string_as(&s, |p| p.formula())?);
                }
                other => return self.err(format!("unknown key `:{other}`")),
            }
        }
        let Some(conclusion) = seq else {
            return self.err(format!("`{rule_name}` node lacks `:seq`"));
        };
        let mut premises = Vec::new();
        while self.is_sym("(") {
            premises.push(self.proof(defs, &conclusion.env, &conclusion.cond)?);
        }
        self.expect_sym(")")?;
        Ok(ProofTree { rule, conclusion, inst, premises })
    }

    fn string(&mut self) -> PResult<String> {
        match self.bump() {
            Tok::Str(s) => Ok(s),
            t => self.err(format!("expected a string, found {}", describe(&t))),
        }
    }

    fn name_or_string(&mut self) -> PResult<Name> {
        match self.peek().clone() {
            Tok::Str(s) => {
                self.bump();
                Ok(Name::from(s))
            }
            _ => self.name(),
        }
    }
}

fn describe(t: &Tok) -> String {
    match t {
        Tok::Ident(s) => format!("`{s}`"),
        Tok::Int(v) => format!("`{v}`"),
        Tok::Str(s) => format!("string \"{s}\""),
        Tok::Sym(s) => format!("`{s}`"),
        Tok::Eof => "end of input".into(),
    }
}

fn whole<T>(src: &str, f: impl FnOnce(&mut Parser) -> PResult<T>) -> PResult<T> {
    let mut p = Parser::new(src)?;
    let v = f(&mut p)?;
    p.expect_eof()?;
    Ok(v)
}

/// Resolves every call in a system against `defs`.
pub fn resolve_system(defs: &DefTable, s: &System) -> PResult<System> {
    Ok(match s {
        System::Leaf(e, p) => System::Leaf(e.clone(), defs.resolve(p)?),
        System::Par(a, b) => System::Par(Arc::new(resolve_system(defs, a)?), Arc::new(resolve_system(defs, b)?)),
        System::New(c, t) => System::New(c.clone(), Arc::new(resolve_system(defs, t)?)),
    })
}

fn checked_system(s: System) -> PResult<System> {
    if well_resourced(&s) {
        Ok(s)
    } else {
        Err(ParseError::NotWellResourced)
    }
}

pub fn parse_expr(src: &str) -> Result<Expr, ParseError> {
    whole(src, |p| p.expr())
}

pub fn parse_bool(src: &str) -> Result<BoolExpr, ParseError> {
    whole(src, |p| p.bool_expr())
}

/// A process with unresolved calls.
pub fn parse_process(src: &str) -> Result<Process, ParseError> {
    whole(src, |p| p.process())
}

/// A well-resourced system with unresolved calls.
pub fn parse_system(src: &str) -> Result<System, ParseError> {
    checked_system(whole(src, |p| p.system())?)
}

pub fn parse_formula(src: &str) -> Result<Formula, ParseError> {
    whole(src, |p| p.formula())
}

pub fn parse_env(src: &str) -> Result<PermEnv, ParseError> {
    whole(src, |p| p.env())
}

pub fn parse_defs(src: &str) -> Result<DefTable, ParseError> {
    Ok(DefTable::build(whole(src, |p| p.definitions())?)?)
}

/// Definitions followed by a main process, calls resolved.
pub fn parse_program(src: &str) -> Result<(DefTable, Process), ParseError> {
    let (raw, main) = whole(src, |p| {
        let d = p.definitions()?;
        Ok((d, p.process()?))
    })?;
    let defs = DefTable::build(raw)?;
    let main = defs.resolve(&main)?;
    Ok((defs, main))
}

/// Definitions followed by a main system, calls resolved.
pub fn parse_system_file(src: &str) -> Result<(DefTable, System), ParseError> {
    let (raw, main) = whole(src, |p| {
        let d = p.definitions()?;
        Ok((d, p.system()?))
    })?;
    let defs = DefTable::build(raw)?;
    let main = checked_system(resolve_system(&defs, &main)?)?;
    Ok((defs, main))
}

/// A full sequent; missing `env` and `bool` default to `{}` and `true`.
pub fn parse_sequent(src: &str, defs: &DefTable) -> Result<Sequent, ParseError> {
    let (e, b, pre, sys, post) = whole(src, |p| p.sequent_parts())?;
    Ok(Sequent::new(e.unwrap_or_default(), b.unwrap_or_else(BoolExpr::tt), pre, resolve_system(defs, &sys)?, post))
}

/// Definitions followed by one proof tree. Nodes inherit `env` and `bool`
/// from their parent when their `:seq` omits them.
pub fn parse_proof_file(src: &str) -> Result<(DefTable, ProofTree), ParseError> {
    let mut p = Parser::new(src)?;
    let defs = DefTable::build(p.definitions()?)?;
    let t = p.proof(&defs, &PermEnv::empty(), &BoolExpr::tt())?;
    p.expect_eof()?;
    Ok((defs, t))
}

pub fn parse_proof(src: &str, defs: &DefTable) -> Result<ProofTree, ParseError> {
    whole(src, |p| p.proof(defs, &PermEnv::empty(), &BoolExpr::tt()))
}

// ---------------------------------------------------------------------------
// Printing

pub fn print_expr(e: &Expr) -> String {
    match e {
        Expr::Lit(v) => v.to_string(),
        Expr::Var(x) => x.to_string(),
        Expr::Add(a, b) => format!("{} + {}", print_expr(a), print_operand(b)),
        Expr::Sub(a, b) => format!("{} - {}", print_expr(a), print_operand(b)),
    }
}

fn print_operand(e: &Expr) -> String {
    match e {
        Expr::Add(..) | Expr::Sub(..) => format!("({})", print_expr(e)),
        _ => print_expr(e),
    }
}

fn print_exprs(es: &[Expr]) -> String {
    es.iter().map(print_expr).collect::<Vec<_>>().join(", ")
}

/// Sugared view of a boolean, recovering the derived connectives.
enum BView<'a> {
    True,
    False,
    Cmp(&'static str, &'a Expr, &'a Expr),
    Implies(&'a BoolExpr, &'a BoolExpr),
    Or(&'a BoolExpr, &'a BoolExpr),
    And(&'a BoolExpr, &'a BoolExpr),
    Not(&'a BoolExpr),
}

fn view(b: &BoolExpr) -> BView<'_> {
    use BoolExpr::*;
    match b {
        Leq(Expr::Lit(0), Expr::Lit(1)) => BView::True,
        Leq(Expr::Lit(1), Expr::Lit(0)) => BView::False,
        Leq(x, y) => BView::Cmp("<=", x, y),
        And(l, r) => match (&**l, &**r) {
            (Leq(a, b), Leq(c, d)) if a == d && b == c => BView::Cmp("=", a, b),
            _ => BView::And(l, r),
        },
        Not(inner) => match &**inner {
            And(l, r) => match (&**l, &**r) {
                (Leq(a, b), Leq(c, d)) if a == d && b == c => BView::Cmp("!=", a, b),
                (Not(a), Not(c)) => BView::Or(a, c),
                (a, Not(c)) => BView::Implies(a, c),
                _ => BView::Not(inner),
            },
            Leq(x, y) => BView::Cmp(">", x, y),
            _ => BView::Not(inner),
        },
    }
}

fn bool_prec(b: &BoolExpr) -> u8 {
    match view(b) {
        BView::Implies(..) => 0,
        BView::Or(..) => 1,
        BView::And(..) => 2,
        BView::Not(..) => 3,
        _ => 4,
    }
}

fn print_bool_at(b: &BoolExpr, min: u8) -> String {
    let s = match view(b) {
        BView::True => "true".into(),
        BView::False => "false".into(),
        BView::Cmp(op, x, y) => format!("{} {op} {}", print_expr(x), print_expr(y)),
        BView::Implies(x, y) => format!("{} => {}", print_bool_at(x, 1), print_bool_at(y, 0)),
        BView::Or(x, y) => format!("{} || {}", print_bool_at(x, 1), print_bool_at(y, 2)),
        BView::And(x, y) => format!("{} && {}", print_bool_at(x, 2), print_bool_at(y, 3)),
        BView::Not(x) => format!("not {}", print_bool_at(x, 3)),
    };
    if bool_prec(b) < min {
        format!("({s})")
    } else {
        s
    }
}

pub fn print_bool(b: &BoolExpr) -> String {
    print_bool_at(b, 0)
}

pub fn print_process(p: &Process) -> String {
    match p {
        Process::Par(a, b) => format!("{} | {}", print_prefix(a), print_process(b)),
        _ => print_prefix(p),
    }
}

fn print_prefix(p: &Process) -> String {
    match p {
        Process::Nil => "0".into(),
        Process::Out(c, es) => format!("{c}!({})", print_exprs(es)),
        Process::In(c, xs, q) => {
            let xs: Vec<String> = xs.iter().map(|x| x.to_string()).collect();
            match &**q {
                Process::Nil => format!("{c}?({})", xs.join(", ")),
                q => format!("{c}?({}).{}", xs.join(", "), print_prefix(q)),
            }
        }
        Process::If(b, q, r) => format!("if {} then {} else {}", print_bool(b), print_prefix(q), print_prefix(r)),
        Process::New(c, q) => format!("new {c}.{}", print_prefix(q)),
        Process::Call(k, es, ren) => {
            let ren: Vec<String> = ren.iter().filter(|(a, f)| a != f).map(|(a, f)| format!("{a}/{f}")).collect();
            if ren.is_empty() {
                format!("{k}({})", print_exprs(es))
            } else {
                format!("{k}({})[{}]", print_exprs(es), ren.join(", "))
            }
        }
        Process::Par(..) => format!("({})", print_process(p)),
    }
}

pub fn print_perms(e: &PermSet) -> String {
    e.iter().map(|p| p.to_string()).collect::<Vec<_>>().join(", ")
}

pub fn print_system(s: &System) -> String {
    match s {
        System::Par(a, b) => format!("{} || {}", print_sys_prefix(a), print_system(b)),
        _ => print_sys_prefix(s),
    }
}

fn print_sys_prefix(s: &System) -> String {
    match s {
        System::Leaf(e, p) => format!("<{}>{{{}}}", print_perms(e), print_process(p)),
        System::New(c, t) => format!("new {c}.{}", print_sys_prefix(t)),
        System::Par(..) => format!("({})", print_system(s)),
    }
}

pub fn print_formula(f: &Formula) -> String {
    match f {
        Formula::Emp => "emp".into(),
        Formula::Any => "any".into(),
        Formula::Blk(c) => format!("blk {c}"),
        Formula::State(c, es) => format!("{c}|->({})", print_exprs(es)),
        Formula::Sep(a, b) => {
            let l = if matches!(**a, Formula::Sep(..)) { format!("({})", print_formula(a)) } else { print_formula(a) };
            format!("{l} * {}", print_formula(b))
        }
    }
}

pub fn print_env(g: &PermEnv) -> String {
    if g.is_empty() {
        return "{}".into();
    }
    g.iter().map(|(c, e)| format!("{c} : {{{}}}", print_perms(e))).collect::<Vec<_>>().join("; ")
}

pub fn print_sequent(s: &Sequent) -> String {
    format!(
        "env {}; bool {} |- {{{}}} {} {{{}}}",
        print_env(&s.env),
        print_bool(&s.cond),
        print_formula(&s.pre),
        print_system(&s.sys),
        print_formula(&s.post)
    )
}

pub fn print_subst(s: &Subst) -> String {
    let items: Vec<String> = s.iter().map(|(x, e)| format!("{x} = {}", print_expr(e))).collect();
    format!("{{{}}}", items.join(", "))
}

fn quote(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

pub fn print_def(name: &Name, params: &[Name], chans: &[Name], body: &Process) -> String {
    let ps: Vec<String> = params.iter().map(|x| x.to_string()).collect();
    let cs: Vec<String> = chans.iter().map(|x| x.to_string()).collect();
    format!("def {name}({})[{}] = {}", ps.join(", "), cs.join(", "), print_process(body))
}

pub fn print_defs(defs: &DefTable) -> String {
    defs.iter().map(|(k, d)| print_def(k, &d.params, &d.chans, &d.body) + "\n").collect()
}

fn print_proof_into(t: &ProofTree, parent: Option<&Sequent>, depth: usize, out: &mut String) {
    let pad = "  ".repeat(depth);
    let c = &t.conclusion;
    let mut head = String::new();
    if parent.is_none_or(|p| p.env != c.env) {
        head.push_str(&format!("env {}; ", print_env(&c.env)));
    }
    if parent.is_none_or(|p| p.cond != c.cond) {
        head.push_str(&format!("bool {} ", print_bool(&c.cond)));
    }
    let seq = format!(
        "{head}|- {{{}}} {} {{{}}}",
        print_formula(&c.pre),
        print_system(&c.sys),
        print_formula(&c.post)
    );
    out.push_str(&format!("{pad}({} :seq {}", t.rule, quote(&seq)));
    let i = &t.inst;
    if !i.chans.is_empty() {
        let cs: Vec<String> = i.chans.iter().map(|c| c.to_string()).collect();
        out.push_str(&format!(" :chans ({})", cs.join(", ")));
    }
    if let Some(v) = &i.var {
        out.push_str(&format!(" :var {}", quote(v.as_str())));
    }
    if let Some(e) = &i.expr {
        out.push_str(&format!(" :expr {}", quote(&print_expr(e))));
    }
    if let Some(f) = &i.cut {
        out.push_str(&format!(" :cut {}", quote(&print_formula(f))));
    }
    if let Some(f) = &i.frame {
        out.push_str(&format!(" :frame {}", quote(&print_formula(f))));
    }
    if let Some(v) = &i.from {
        out.push_str(&format!(" :from {}", quote(v.as_str())));
    }
    if let Some(v) = &i.to {
        out.push_str(&format!(" :to {}", quote(v.as_str())));
    }
    for p in &t.premises {
        out.push('\n');
        print_proof_into(p, Some(c), depth + 1, out);
    }
    out.push(')');
}

pub fn print_proof(t: &ProofTree) -> String {
    let mut s = String::new();
    print_proof_into(t, None, 0, &mut s);
    s.push('\n');
    s
}

pub fn print_canon_process(c: &CanonProcess) -> String {
    print_process(&c.to_process())
}

pub fn print_canon_system(c: &CanonSystem) -> String {
    print_system(&c.to_system())
}

macro_rules! display_via {
    ($t:ty, $f:ident) => {
        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&$f(self))
            }
        }
    };
}

display_via!(Expr, print_expr);
display_via!(BoolExpr, print_bool);
display_via!(Process, print_process);
display_via!(System, print_system);
display_via!(Formula, print_formula);
display_via!(PermEnv, print_env);
display_via!(Sequent, print_sequent);

// ---------------------------------------------------------------------------
// JSON traces

#[derive(Clone, Debug, Serialize, PartialEq, Eq)]
pub struct TraceEntry {
    pub step: usize,
    pub rule: String,
    #[serde(rename = "redex-path")]
    pub redex_path: Vec<usize>,
    pub system: String,
}

pub fn process_trace_json(initial: &CanonProcess, steps: &[ProcStep]) -> serde_json::Value {
    let mut out = vec![TraceEntry { step: 0, rule: "init".into(), redex_path: vec![], system: print_canon_process(initial) }];
    for (i, s) in steps.iter().enumerate() {
        out.push(TraceEntry {
            step: i + 1,
            rule: s.rule.name().into(),
            redex_path: s.redex.clone(),
            system: print_canon_process(&s.result),
        });
    }
    serde_json::to_value(out).expect("trace entries serialize")
}

pub fn narrative_json(n: &Narrative) -> serde_json::Value {
    let mut out = vec![TraceEntry { step: 0, rule: "init".into(), redex_path: vec![], system: print_canon_system(&n.initial) }];
    for (i, s) in n.trace.iter().enumerate() {
        out.push(TraceEntry {
            step: i + 1,
            rule: s.rule.name().into(),
            redex_path: s.redex.clone(),
            system: print_canon_system(&s.system),
        });
    }
    serde_json::to_value(out).expect("trace entries serialize")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expressions_roundtrip() {
        for src in ["x + 1 - y", "x - (y + 2)", "-3", "x4 + x4", "(a - b) - c"] {
            let e = parse_expr(src).unwrap();
            assert_eq!(parse_expr(&print_expr(&e)).unwrap(), e, "{src}");
        }
        assert_eq!(parse_expr("1 - -2").unwrap(), Expr::sub(Expr::lit(1), Expr::lit(-2)));
    }

    #[test]
    fn booleans_desugar_and_resugar() {
        assert_eq!(parse_bool("x < 3").unwrap(), BoolExpr::not(BoolExpr::leq(Expr::lit(3), Expr::var("x"))));
        assert_eq!(parse_bool("x > 9").unwrap(), BoolExpr::not(BoolExpr::leq(Expr::var("x"), Expr::lit(9))));
        assert_eq!(parse_bool("not (x <= 9)").unwrap(), parse_bool("x > 9").unwrap());
        for src in [
            "x <= 9",
            "x = y && y != 3",
            "a <= 1 || b <= 2 => c <= 3",
            "not (a <= 1 && b <= 2)",
            "(x + 1) <= 3 && true",
            "false || not x = 1",
            "(a <= 1 => b <= 1) => c <= 1",
        ] {
            let b = parse_bool(src).unwrap();
            assert_eq!(parse_bool(&print_bool(&b)).unwrap(), b, "{src} printed as {}", print_bool(&b));
        }
        assert_eq!(print_bool(&parse_bool("x >= 2").unwrap()), "2 <= x");
    }

    #[test]
    fn processes_roundtrip() {
        let src = "c1?(x1).if x1 <= 9 then (c3!(x1) | c1?(x3).(c1!(x1, x3) | c4!())) else c4!(x1)";
        let p = parse_process(src).unwrap();
        assert_eq!(parse_process(&print_process(&p)).unwrap(), p);
        let q = parse_process("new c3.(Fltr() | Dbl()) | K(1, x)[a/b, c/d] | c! | d!5 | e?.0 | f?").unwrap();
        assert_eq!(parse_process(&print_process(&q)).unwrap(), q);
    }

    #[test]
    fn systems_roundtrip_and_check_resources() {
        let s = parse_system("<c1?, c2?, c4!>{Prg()} || <c1!>c1!(2) || new d.<d?, d!>{d!() | d?()}").unwrap();
        assert_eq!(parse_system(&print_system(&s)).unwrap(), s);
        assert!(matches!(parse_system("<c!, c!>{0}"), Err(ParseError::DuplicatePermission { .. })));
        assert_eq!(parse_system("<c!>{0} || <c!>{0}"), Err(ParseError::NotWellResourced));
    }

    #[test]
    fn formulas_envs_and_sequents() {
        let f = parse_formula("c1|->(x, x + x) * c4|->() * (blk c3 * any) * emp").unwrap();
        assert_eq!(parse_formula(&print_formula(&f)).unwrap(), f);
        assert_eq!(parse_formula("c|->5").unwrap(), Formula::state("c", vec![Expr::lit(5)]));
        let g = parse_env("c1 : {c1!}; c2 : {c2!}; c4 : {c4!, c1?}").unwrap();
        assert_eq!(parse_env(&print_env(&g)).unwrap(), g);
        assert_eq!(parse_env("{}").unwrap(), PermEnv::empty());
        assert!(matches!(parse_env("c : {c?, c!}"), Err(ParseError::Env(_))));
        let seq = parse_sequent(
            "env c : {c!}; bool x <= 9 |- {c|->x} <c?>{c?(y).0} {emp}",
            &DefTable::empty(),
        )
        .unwrap();
        assert_eq!(parse_sequent(&print_sequent(&seq), &DefTable::empty()).unwrap(), seq);
    }

    #[test]
    fn programs_resolve_calls() {
        let (defs, p) = parse_program("def K(x)[a] = a!(x)\n K(1)[b/a]").unwrap();
        assert!(defs.get(&Name::new("K")).is_some());
        assert_eq!(p, Process::Call(Name::new("K"), vec![Expr::lit(1)], vec![(Name::new("b"), Name::new("a"))]));
        assert!(matches!(parse_program("K(1)"), Err(ParseError::Def(DefError::UnknownDefinition(_)))));
    }

    #[test]
    fn syntax_errors_have_positions() {
        let e = parse_process("c!(1) |\n  ?").unwrap_err();
        assert!(matches!(e, ParseError::Syntax { line: 2, col: 3, .. }), "{e}");
    }
}
