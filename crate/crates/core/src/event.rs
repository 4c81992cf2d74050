//! Event and constraint grammar.
//!
//! ```text
//! event      := 'P(' conj ['|' conj] ')'
//! conj       := atom ('&' atom)*
//! atom       := node ['(' node '=' int (',' node '=' int)* ')'] '=' int
//! constraint := sum ('>=' | '<=' | '=') sum
//! sum        := ['-'] term (('+' | '-') term)*
//! term       := factor ('*' factor)*
//! factor     := number | 'D' | event | '(' sum ')'
//! ```
//!
//! `D` is the reserved budget symbol. Products are only allowed when at most
//! one side mentions a probability.

use std::collections::BTreeMap;
use std::fmt;

use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Dag;
use crate::scalar::rational_from_decimal;

/// `node(do...) = value`
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Atom {
    pub node: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub intervention: BTreeMap<String, u8>,
    pub value: u8,
}

impl Atom {
    pub fn new(node: &str, value: u8) -> Self {
        Atom { node: node.into(), intervention: BTreeMap::new(), value }
    }

    pub fn under(node: &str, intervention: &[(&str, u8)], value: u8) -> Self {
        Atom {
            node: node.into(),
            intervention: intervention.iter().map(|(n, v)| (n.to_string(), *v)).collect(),
            value,
        }
    }

    pub fn is_counterfactual(&self) -> bool {
        !self.intervention.is_empty()
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.node)?;
        if !self.intervention.is_empty() {
            let parts: Vec<String> = self.intervention.iter().map(|(n, v)| format!("{n}={v}")).collect();
            write!(f, "({})", parts.join(","))?;
        }
        write!(f, "={}", self.value)
    }
}

/// Conjunction of atoms, optionally conditioned on another conjunction.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Event {
    pub joint: Vec<Atom>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub given: Vec<Atom>,
}

impl Event {
    pub fn joint(atoms: Vec<Atom>) -> Self {
        Event { joint: atoms, given: Vec::new() }
    }

    pub fn conditional(joint: Vec<Atom>, given: Vec<Atom>) -> Self {
        Event { joint, given }
    }

    pub fn is_conditional(&self) -> bool {
        !self.given.is_empty()
    }

    pub fn atoms(&self) -> impl Iterator<Item = &Atom> {
        self.joint.iter().chain(&self.given)
    }

    /// Check nodes, value domains and self-interventions against a DAG.
    pub fn validate(&self, dag: &Dag) -> Result<()> {
        for atom in self.atoms() {
            check_node(dag, &atom.node, atom.value as i64)?;
            for (n, &v) in &atom.intervention {
                check_node(dag, n, v as i64)?;
            }
            if let Some(&forced) = atom.intervention.get(&atom.node) {
                if forced != atom.value {
                    return Err(Error::InconsistentEvent(format!(
                        "{atom} intervenes on {} and asks for a different value",
                        atom.node
                    )));
                }
            }
        }
        Ok(())
    }
}

fn check_node(dag: &Dag, node: &str, value: i64) -> Result<()> {
    if !dag.contains(node) {
        return Err(Error::UnknownNode(node.to_string()));
    }
    if dag.is_hidden(node) {
        return Err(Error::HiddenInEvent(node.to_string()));
    }
    if value < 0 || value >= dag.cardinality(node) as i64 {
        return Err(Error::ValueOutOfDomain { node: node.to_string(), value });
    }
    Ok(())
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let j: Vec<String> = self.joint.iter().map(|a| a.to_string()).collect();
        write!(f, "P({}", j.join(" & "))?;
        if !self.given.is_empty() {
            let g: Vec<String> = self.given.iter().map(|a| a.to_string()).collect();
            write!(f, " | {}", g.join(" & "))?;
        }
        f.write_str(")")
    }
}

/// Polynomial in the budget symbol `D`; entry `i` is the coefficient of `D^i`.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BudgetPoly(pub Vec<BigRational>);

impl BudgetPoly {
    pub fn constant(c: BigRational) -> Self {
        BudgetPoly(vec![c]).trimmed()
    }

    pub fn d() -> Self {
        BudgetPoly(vec![BigRational::zero(), BigRational::one()])
    }

    fn trimmed(mut self) -> Self {
        while self.0.last().is_some_and(|c| c.is_zero()) {
            self.0.pop();
        }
        self
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|c| c.is_zero())
    }

    pub fn mentions_d(&self) -> bool {
        self.0.iter().skip(1).any(|c| !c.is_zero())
    }

    pub fn add(&self, o: &Self) -> Self {
        let n = self.0.len().max(o.0.len());
        let z = BigRational::zero();
        BudgetPoly((0..n).map(|i| self.0.get(i).unwrap_or(&z) + o.0.get(i).unwrap_or(&z)).collect())
            .trimmed()
    }

    pub fn neg(&self) -> Self {
        BudgetPoly(self.0.iter().map(|c| -c.clone()).collect())
    }

    pub fn mul(&self, o: &Self) -> Self {
        if self.0.is_empty() || o.0.is_empty() {
            return BudgetPoly::default();
        }
        let mut out = vec![BigRational::zero(); self.0.len() + o.0.len() - 1];
        for (i, a) in self.0.iter().enumerate() {
            for (j, b) in o.0.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        BudgetPoly(out).trimmed()
    }

    /// Substitute `D := delta`.
    pub fn at(&self, delta: &BigRational) -> BigRational {
        self.0.iter().rev().fold(BigRational::zero(), |acc, c| acc * delta + c)
    }
}

/// Linear combination of event probabilities with budget-polynomial weights.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LinearExpr {
    pub constant: BudgetPoly,
    pub terms: Vec<(BudgetPoly, Event)>,
}

impl LinearExpr {
    fn scalar(c: BudgetPoly) -> Self {
        LinearExpr { constant: c, terms: Vec::new() }
    }

    fn add(mut self, o: LinearExpr) -> Self {
        self.constant = self.constant.add(&o.constant);
        self.terms.extend(o.terms);
        self
    }

    fn neg(self) -> Self {
        LinearExpr {
            constant: self.constant.neg(),
            terms: self.terms.into_iter().map(|(c, e)| (c.neg(), e)).collect(),
        }
    }

    fn scale(self, k: &BudgetPoly) -> Self {
        LinearExpr {
            constant: self.constant.mul(k),
            terms: self.terms.into_iter().map(|(c, e)| (c.mul(k), e)).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Comparison {
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = "=")]
    Eq,
}

/// Parsed constraint, normalized to `expr (cmp) 0`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Constraint {
    pub expr: LinearExpr,
    pub cmp: Comparison,
}

impl Constraint {
    pub fn events(&self) -> impl Iterator<Item = &Event> {
        self.expr.terms.iter().map(|(_, e)| e)
    }

    pub fn validate(&self, dag: &Dag) -> Result<()> {
        for e in self.events() {
            e.validate(dag)?;
        }
        let conditions: Vec<&Vec<Atom>> = self.events().map(|e| &e.given).collect();
        if conditions.iter().any(|g| !g.is_empty()) && conditions.windows(2).any(|w| w[0] != w[1]) {
            return Err(Error::UnsupportedConstraint(
                "conditional probabilities in one constraint must share the same condition".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Num(String),
    LParen,
    RParen,
    Eq,
    Ge,
    Le,
    Amp,
    Bar,
    Comma,
    Plus,
    Minus,
    Star,
}

fn tokenize(text: &str) -> Result<Vec<(usize, Tok)>> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        let start = i;
        let tok = match c {
            ' ' | '\t' | '\n' | '\r' => {
                i += 1;
                continue;
            }
            '(' => Tok::LParen,
            ')' => Tok::RParen,
            '&' => Tok::Amp,
            '|' => Tok::Bar,
            ',' => Tok::Comma,
            '+' => Tok::Plus,
            '-' => Tok::Minus,
            '*' => Tok::Star,
            '=' => Tok::Eq,
            '>' | '<' => {
                if bytes.get(i + 1) == Some(&b'=') {
                    i += 2;
                    out.push((start, if c == '>' { Tok::Ge } else { Tok::Le }));
                    continue;
                }
                return Err(Error::Syntax { pos: i, msg: format!("expected `{c}=`") });
            }
            c if c.is_ascii_alphabetic() => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                out.push((start, Tok::Ident(text[start..i].to_string())));
                continue;
            }
            c if c.is_ascii_digit() || c == '.' => {
                while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                    i += 1;
                }
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && (bytes[j] == b'-' || bytes[j] == b'+') {
                        j += 1;
                    }
                    if j < bytes.len() && bytes[j].is_ascii_digit() {
                        i = j;
                        while i < bytes.len() && bytes[i].is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                out.push((start, Tok::Num(text[start..i].to_string())));
                continue;
            }
            other => return Err(Error::Syntax { pos: i, msg: format!("unexpected character {other:?}") }),
        };
        i += 1;
        out.push((start, tok));
    }
    Ok(out)
}

struct Parser<'a> {
    toks: Vec<(usize, Tok)>,
    pos: usize,
    end: usize,
    _text: &'a str,
}

impl<'a> Parser<'a> {
    fn new(text: &'a str) -> Result<Self> {
        Ok(Parser { toks: tokenize(text)?, pos: 0, end: text.len(), _text: text })
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(_, t)| t)
    }

    fn peek2(&self) -> Option<&Tok> {
        self.toks.get(self.pos + 1).map(|(_, t)| t)
    }

    fn offset(&self) -> usize {
        self.toks.get(self.pos).map(|(p, _)| *p).unwrap_or(self.end)
    }

    fn err<T>(&self, msg: impl Into<String>) -> Result<T> {
        Err(Error::Syntax { pos: self.offset(), msg: msg.into() })
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<()> {
        if self.peek() == Some(&want) {
            self.pos += 1;
            Ok(())
        } else {
            self.err(format!("expected {what}"))
        }
    }

    fn ident(&mut self) -> Result<String> {
        match self.peek() {
            Some(Tok::Ident(s)) => {
                let s = s.clone();
                self.pos += 1;
                Ok(s)
            }
            _ => self.err("expected node name"),
        }
    }

    fn int(&mut self) -> Result<i64> {
        match self.peek() {
            Some(Tok::Num(s)) => match s.parse::<i64>() {
                Ok(v) => {
                    self.pos += 1;
                    Ok(v)
                }
                Err(_) => self.err(format!("expected integer value, found {s}")),
            },
            _ => self.err("expected integer value"),
        }
    }

    fn value(&mut self, node: &str) -> Result<u8> {
        let v = self.int()?;
        if !(0..=255).contains(&v) {
            return Err(Error::ValueOutOfDomain { node: node.to_string(), value: v });
        }
        Ok(v as u8)
    }

    fn atom(&mut self) -> Result<Atom> {
        let node = self.ident()?;
        let mut intervention = BTreeMap::new();
        if self.peek() == Some(&Tok::LParen) {
            self.pos += 1;
            loop {
                let n = self.ident()?;
                self.expect(Tok::Eq, "`=` in intervention")?;
                let v = self.value(&n)?;
                if intervention.insert(n.clone(), v).is_some() {
                    return self.err(format!("node {n} intervened twice"));
                }
                match self.peek() {
                    Some(Tok::Comma) => self.pos += 1,
                    Some(Tok::RParen) => {
                        self.pos += 1;
                        break;
                    }
                    _ => return self.err("expected `,` or `)` in intervention"),
                }
            }
        }
        self.expect(Tok::Eq, "`=` after node")?;
        let value = self.value(&node)?;
        Ok(Atom { node, intervention, value })
    }

    fn conj(&mut self) -> Result<Vec<Atom>> {
        let mut atoms = vec![self.atom()?];
        while self.peek() == Some(&Tok::Amp) {
            self.pos += 1;
            atoms.push(self.atom()?);
        }
        Ok(atoms)
    }

    fn event(&mut self) -> Result<Event> {
        match self.peek() {
            Some(Tok::Ident(s)) if s == "P" => self.pos += 1,
            _ => return self.err("expected `P(`"),
        }
        self.expect(Tok::LParen, "`(` after P")?;
        let joint = self.conj()?;
        let given = if self.peek() == Some(&Tok::Bar) {
            self.pos += 1;
            self.conj()?
        } else {
            Vec::new()
        };
        self.expect(Tok::RParen, "`)` closing the probability")?;
        Ok(Event { joint, given })
    }

    fn sum(&mut self) -> Result<LinearExpr> {
        let mut acc = if self.peek() == Some(&Tok::Minus) {
            self.pos += 1;
            self.term()?.neg()
        } else {
            self.term()?
        };
        loop {
            match self.peek() {
                Some(Tok::Plus) => {
                    self.pos += 1;
                    acc = acc.add(self.term()?);
                }
                Some(Tok::Minus) => {
                    self.pos += 1;
                    acc = acc.add(self.term()?.neg());
                }
                _ => return Ok(acc),
            }
        }
    }

    fn term(&mut self) -> Result<LinearExpr> {
        let mut acc = self.factor()?;
        while self.peek() == Some(&Tok::Star) {
            let at = self.offset();
            self.pos += 1;
            let rhs = self.factor()?;
            acc = match (acc.terms.is_empty(), rhs.terms.is_empty()) {
                (true, _) => rhs.scale(&acc.constant),
                (_, true) => acc.scale(&rhs.constant),
                _ => {
                    return Err(Error::UnsupportedConstraint(format!(
                        "product of probabilities at position {at}"
                    )))
                }
            };
        }
        Ok(acc)
    }

    fn factor(&mut self) -> Result<LinearExpr> {
        match self.peek().cloned() {
            Some(Tok::Num(s)) => {
                let v = rational_from_decimal(&s)
                    .ok_or(Error::Syntax { pos: self.offset(), msg: format!("bad number {s}") })?;
                self.pos += 1;
                Ok(LinearExpr::scalar(BudgetPoly::constant(v)))
            }
            Some(Tok::Ident(s)) if s == "D" => {
                self.pos += 1;
                Ok(LinearExpr::scalar(BudgetPoly::d()))
            }
            Some(Tok::Ident(s)) if s == "P" && self.peek2() == Some(&Tok::LParen) => {
                let e = self.event()?;
                Ok(LinearExpr {
                    constant: BudgetPoly::default(),
                    terms: vec![(BudgetPoly::constant(BigRational::one()), e)],
                })
            }
            Some(Tok::LParen) => {
                self.pos += 1;
                let inner = self.sum()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(inner)
            }
            Some(Tok::Minus) => {
                self.pos += 1;
                Ok(self.factor()?.neg())
            }
            _ => self.err("expected number, `D`, `P(...)` or `(`"),
        }
    }

    fn finish(&self) -> Result<()> {
        if self.pos < self.toks.len() {
            return self.err("unexpected trailing input");
        }
        Ok(())
    }
}

/// Parse an event without checking it against a graph.
pub fn parse_event_syntax(text: &str) -> Result<Event> {
    let mut p = Parser::new(text)?;
    let e = p.event()?;
    p.finish()?;
    Ok(e)
}

/// Parse an event and validate nodes and values against `dag`.
pub fn parse_event(text: &str, dag: &Dag) -> Result<Event> {
    let e = parse_event_syntax(text)?;
    e.validate(dag)?;
    Ok(e)
}

/// Parse a constraint without checking it against a graph.
pub fn parse_constraint_syntax(text: &str) -> Result<Constraint> {
    let mut p = Parser::new(text)?;
    let lhs = p.sum()?;
    let cmp = match p.peek() {
        Some(Tok::Ge) => Comparison::Ge,
        Some(Tok::Le) => Comparison::Le,
        Some(Tok::Eq) => Comparison::Eq,
        _ => return p.err("expected `>=`, `<=` or `=`"),
    };
    p.pos += 1;
    let rhs = p.sum()?;
    p.finish()?;
    let mut expr = lhs.add(rhs.neg());
    // merge repeated events
    let mut merged: Vec<(BudgetPoly, Event)> = Vec::new();
    for (c, e) in expr.terms {
        match merged.iter_mut().find(|(_, m)| *m == e) {
            Some((mc, _)) => *mc = mc.add(&c),
            None => merged.push((c, e)),
        }
    }
    merged.retain(|(c, _)| !c.is_zero());
    expr.terms = merged;
    if expr.terms.is_empty() {
        return Err(Error::UnsupportedConstraint("constraint mentions no probability".into()));
    }
    Ok(Constraint { expr, cmp })
}

/// Parse a constraint and validate it against `dag`.
pub fn parse_constraint(text: &str, dag: &Dag) -> Result<Constraint> {
    let c = parse_constraint_syntax(text)?;
    c.validate(dag)?;
    Ok(c)
}

/// `true` when `c` only ever tightens as `D` shrinks, i.e. the weights of
/// the budget polynomial have the sign that loosens `expr >= 0` as `D` grows.
pub fn budget_is_one_sided(c: &Constraint) -> bool {
    let deg1 = |p: &BudgetPoly| p.0.len() <= 2;
    if !deg1(&c.expr.constant) || c.expr.terms.iter().any(|(w, _)| w.mentions_d()) {
        return false;
    }
    let slope = c.expr.constant.0.get(1).cloned().unwrap_or_else(BigRational::zero);
    match c.cmp {
        Comparison::Ge => !slope.is_negative(),
        Comparison::Le => !slope.is_positive(),
        Comparison::Eq => slope.is_zero(),
    }
}
