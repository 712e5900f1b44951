//! DNF constraint formulas extracted from a one-class tree.
//!
//! A formula is true when the constraint is violated. Each conjunction is a
//! rule on its own: conjunctions are evaluated in ascending order of literal
//! count, the first satisfied one is credited, and per-conjunction counters
//! record how often each rule is checked and how often it fires.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureBounds;
use crate::octree::{Tree, TreeNode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Op {
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = "<=")]
    Le,
}

impl Op {
    pub fn symbol(self) -> &'static str {
        match self {
            Op::Lt => "<",
            Op::Gt => ">",
            Op::Ge => ">=",
            Op::Le => "<=",
        }
    }

    pub fn holds(self, value: f64, threshold: f64) -> bool {
        match self {
            Op::Lt => value < threshold,
            Op::Gt => value > threshold,
            Op::Ge => value >= threshold,
            Op::Le => value <= threshold,
        }
    }

    fn is_lower_bound(self) -> bool {
        matches!(self, Op::Gt | Op::Ge)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Literal {
    pub dim: usize,
    pub op: Op,
    pub threshold: f64,
}

impl Literal {
    pub fn new(dim: usize, op: Op, threshold: f64) -> Self {
        Self { dim, op, threshold }
    }

    pub fn holds(&self, point: &[f64]) -> bool {
        self.op.holds(point[self.dim], self.threshold)
    }

    /// Whether `self` implies `other` for literals on the same (dim, op).
    fn tighter_than(&self, other: &Literal) -> bool {
        if self.op.is_lower_bound() {
            self.threshold >= other.threshold
        } else {
            self.threshold <= other.threshold
        }
    }
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "phi{} {} {}", self.dim, self.op.symbol(), self.threshold)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Conjunction {
    literals: Vec<Literal>,
}

impl Conjunction {
    /// Builds a conjunction, keeping the tightest literal per (dim, op) in the
    /// position of its first occurrence.
    pub fn new(literals: impl IntoIterator<Item = Literal>) -> Result<Self> {
        let mut out = Self {
            literals: Vec::new(),
        };
        for lit in literals {
            out.push(lit)?;
        }
        if out.literals.is_empty() {
            return Err(Error::Domain("conjunction needs at least one literal".into()));
        }
        Ok(out)
    }

    fn push(&mut self, lit: Literal) -> Result<()> {
        if !lit.threshold.is_finite() {
            return Err(Error::Domain(format!("literal threshold {} is not finite", lit.threshold)));
        }
        match self
            .literals
            .iter_mut()
            .find(|l| l.dim == lit.dim && l.op == lit.op)
        {
            Some(existing) => {
                if lit.tighter_than(existing) {
                    existing.threshold = lit.threshold;
                }
            }
            None => self.literals.push(lit),
        }
        Ok(())
    }

    pub fn literals(&self) -> &[Literal] {
        &self.literals
    }

    pub fn complexity(&self) -> usize {
        self.literals.len()
    }

    pub fn max_dim(&self) -> usize {
        self.literals.iter().map(|l| l.dim).max().unwrap_or(0)
    }

    pub fn holds(&self, point: &[f64]) -> bool {
        self.literals.iter().all(|l| l.holds(point))
    }

    /// Whether some point satisfies every literal.
    pub fn satisfiable(&self) -> bool {
        let mut dims: Vec<usize> = self.literals.iter().map(|l| l.dim).collect();
        dims.sort_unstable();
        dims.dedup();
        dims.into_iter().all(|j| {
            // (value, strict) of the tightest lower and upper bound.
            let mut lower = (f64::NEG_INFINITY, false);
            let mut upper = (f64::INFINITY, false);
            for l in self.literals.iter().filter(|l| l.dim == j) {
                match l.op {
                    Op::Gt | Op::Ge => {
                        let strict = l.op == Op::Gt;
                        if l.threshold > lower.0 || (l.threshold == lower.0 && strict) {
                            lower = (l.threshold, strict);
                        }
                    }
                    Op::Lt | Op::Le => {
                        let strict = l.op == Op::Lt;
                        if l.threshold < upper.0 || (l.threshold == upper.0 && strict) {
                            upper = (l.threshold, strict);
                        }
                    }
                }
            }
            lower.0 < upper.0 || (lower.0 == upper.0 && !lower.1 && !upper.1)
        })
    }
}

impl fmt::Display for Conjunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, lit) in self.literals.iter().enumerate() {
            if i > 0 {
                f.write_str(" /\\ ")?;
            }
            write!(f, "{lit}")?;
        }
        Ok(())
    }
}

/// Disjunction of conjunctions, stored in evaluation order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DnfFormula {
    k: usize,
    conjunctions: Vec<Conjunction>,
}

impl DnfFormula {
    /// Orders `conjunctions` by complexity, keeping the given order among
    /// equals.
    pub fn new(k: usize, mut conjunctions: Vec<Conjunction>) -> Result<Self> {
        if let Some(c) = conjunctions.iter().find(|c| c.max_dim() >= k) {
            return Err(Error::Domain(format!(
                "conjunction `{c}` refers to a dimension outside k = {k}"
            )));
        }
        conjunctions.sort_by_key(Conjunction::complexity);
        Ok(Self { k, conjunctions })
    }

    pub fn empty(k: usize) -> Self {
        Self {
            k,
            conjunctions: Vec::new(),
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn conjunctions(&self) -> &[Conjunction] {
        &self.conjunctions
    }

    pub fn len(&self) -> usize {
        self.conjunctions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.conjunctions.is_empty()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("formula serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Raw {
            k: usize,
            conjunctions: Vec<RawConjunction>,
        }
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct RawConjunction {
            literals: Vec<Literal>,
        }
        let raw: Raw = serde_json::from_str(text)
            .map_err(|e| Error::parse(e.line(), e.column(), e.to_string()))?;
        let conjunctions = raw
            .conjunctions
            .into_iter()
            .map(|c| Conjunction::new(c.literals))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| Error::Schema(e.to_string()))?;
        DnfFormula::new(raw.k, conjunctions).map_err(|e| Error::Schema(e.to_string()))
    }
}

impl fmt::Display for DnfFormula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&render_text(self))
    }
}

/// Converts the tree into a formula that is true outside its leaf boxes.
///
/// For every dimension the two bound rules `phi_j < min_j` and
/// `phi_j > max_j` come first. Each internal node then contributes one
/// conjunction per gap around its children's intervals, prefixed by the
/// strict path conditions leading to it. Unsatisfiable and duplicate
/// conjunctions are dropped.
pub fn extract_formula(tree: &Tree, bounds: &FeatureBounds) -> Result<DnfFormula> {
    if bounds.dim() != tree.k {
        return Err(Error::Domain(format!(
            "bounds have dimension {}, tree has {}",
            bounds.dim(),
            tree.k
        )));
    }
    let mut out = Vec::new();
    for j in 0..tree.k {
        out.push(Conjunction::new([Literal::new(j, Op::Lt, bounds.min[j])])?);
        out.push(Conjunction::new([Literal::new(j, Op::Gt, bounds.max[j])])?);
    }
    gap_rules(&tree.root, &[], &mut out)?;
    let mut kept: Vec<Conjunction> = Vec::with_capacity(out.len());
    for c in out {
        if c.satisfiable() && !kept.contains(&c) {
            kept.push(c);
        }
    }
    DnfFormula::new(tree.k, kept)
}

fn gap_rules(node: &TreeNode, path: &[Literal], out: &mut Vec<Conjunction>) -> Result<()> {
    let Some(j) = node.split_dim else {
        return Ok(());
    };
    let with = |extra: &[Literal]| Conjunction::new(path.iter().chain(extra).copied());
    let children = &node.children;
    if let Some(first) = children.first() {
        out.push(with(&[Literal::new(j, Op::Lt, first.lo)])?);
    }
    for pair in children.windows(2) {
        if pair[0].hi < pair[1].lo {
            out.push(with(&[
                Literal::new(j, Op::Gt, pair[0].hi),
                Literal::new(j, Op::Lt, pair[1].lo),
            ])?);
        }
    }
    if let Some(last) = children.last() {
        out.push(with(&[Literal::new(j, Op::Gt, last.hi)])?);
    }
    for child in children {
        let mut inner = Conjunction {
            literals: path.to_vec(),
        };
        inner.push(Literal::new(j, Op::Gt, child.lo))?;
        inner.push(Literal::new(j, Op::Lt, child.hi))?;
        gap_rules(&child.node, &inner.literals, out)?;
    }
    Ok(())
}

/// How conjunction counters are updated during evaluation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Counting {
    /// Stop at the first satisfied conjunction; only checked conjunctions are
    /// counted as evaluated.
    #[default]
    ShortCircuit,
    /// Check every conjunction; each satisfied one counts a violation.
    Exhaustive,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConjunctionStats {
    pub evaluations: Vec<u64>,
    pub violations: Vec<u64>,
}

impl ConjunctionStats {
    pub fn new(n: usize) -> Self {
        Self {
            evaluations: vec![0; n],
            violations: vec![0; n],
        }
    }

    pub fn for_formula(formula: &DnfFormula) -> Self {
        Self::new(formula.len())
    }

    pub fn len(&self) -> usize {
        self.evaluations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.evaluations.is_empty()
    }

    pub fn ratio(&self, i: usize) -> f64 {
        if self.evaluations[i] == 0 {
            0.0
        } else {
            self.violations[i] as f64 / self.evaluations[i] as f64
        }
    }

    /// Adds another sink's counters into this one.
    pub fn merge(&mut self, other: &ConjunctionStats) -> Result<()> {
        if other.len() != self.len() {
            return Err(Error::Domain(format!(
                "cannot merge stats of {} conjunctions into {}",
                other.len(),
                self.len()
            )));
        }
        for i in 0..self.len() {
            self.evaluations[i] += other.evaluations[i];
            self.violations[i] += other.violations[i];
        }
        Ok(())
    }

    fn check_aligned(&self, formula: &DnfFormula) -> Result<()> {
        if self.len() != formula.len() || self.violations.len() != self.evaluations.len() {
            return Err(Error::Domain(format!(
                "stats cover {} conjunctions, formula has {}",
                self.len(),
                formula.len()
            )));
        }
        if self.violations.iter().zip(&self.evaluations).any(|(v, e)| v > e) {
            return Err(Error::Domain("stats have more violations than evaluations".into()));
        }
        Ok(())
    }

    pub fn to_csv(&self, formula: &DnfFormula) -> Result<String> {
        self.check_aligned(formula)?;
        let mut out = String::from("conjunction_id,complexity,evaluations,violations,ratio\n");
        for (i, c) in formula.conjunctions().iter().enumerate() {
            out.push_str(&format!(
                "{i},{},{},{},{:?}\n",
                c.complexity(),
                self.evaluations[i],
                self.violations[i],
                self.ratio(i)
            ));
        }
        Ok(out)
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        match lines.next() {
            Some((_, header))
                if header.trim() == "conjunction_id,complexity,evaluations,violations,ratio" => {}
            Some((i, _)) => return Err(Error::parse(i + 1, 1, "unexpected stats header")),
            None => return Err(Error::parse(1, 1, "empty stats file")),
        }
        let mut stats = ConjunctionStats::default();
        for (i, line) in lines {
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 5 {
                return Err(Error::parse(i + 1, 1, format!("expected 5 fields, got {}", fields.len())));
            }
            let num = |col: usize| -> Result<u64> {
                fields[col].parse().map_err(|_| {
                    Error::parse(i + 1, col + 1, format!("`{}` is not a counter", fields[col]))
                })
            };
            if num(0)? as usize != stats.len() {
                return Err(Error::parse(i + 1, 1, "conjunction ids must count up from 0"));
            }
            stats.evaluations.push(num(2)?);
            stats.violations.push(num(3)?);
        }
        Ok(stats)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Evaluation {
    pub violated: bool,
    /// Index of the first satisfied conjunction.
    pub credited: Option<usize>,
}

pub fn evaluate(
    formula: &DnfFormula,
    point: &[f64],
    stats: Option<&mut ConjunctionStats>,
) -> Result<Evaluation> {
    evaluate_with(formula, point, stats, Counting::ShortCircuit)
}

pub fn evaluate_with(
    formula: &DnfFormula,
    point: &[f64],
    mut stats: Option<&mut ConjunctionStats>,
    counting: Counting,
) -> Result<Evaluation> {
    if point.len() != formula.k {
        return Err(Error::Domain(format!(
            "point has dimension {}, formula expects {}",
            point.len(),
            formula.k
        )));
    }
    if let Some(s) = stats.as_deref() {
        s.check_aligned(formula)?;
    }
    let mut credited = None;
    for (i, c) in formula.conjunctions.iter().enumerate() {
        let fired = c.holds(point);
        if let Some(s) = stats.as_deref_mut() {
            s.evaluations[i] += 1;
            if fired && (credited.is_none() || counting == Counting::Exhaustive) {
                s.violations[i] += 1;
            }
        }
        if fired && credited.is_none() {
            credited = Some(i);
            if counting == Counting::ShortCircuit {
                break;
            }
        }
    }
    Ok(Evaluation {
        violated: credited.is_some(),
        credited,
    })
}

/// 1 when the point violates the formula, else 0.
pub fn cost(formula: &DnfFormula, point: &[f64], stats: Option<&mut ConjunctionStats>) -> Result<u8> {
    Ok(evaluate(formula, point, stats)?.violated as u8)
}

/// Keeps the conjunctions whose violation/evaluation ratio reaches
/// `threshold`; never-evaluated conjunctions are dropped.
pub fn prune(formula: &DnfFormula, stats: &ConjunctionStats, threshold: f64) -> Result<DnfFormula> {
    if !(threshold >= 0.0) || !threshold.is_finite() {
        return Err(Error::Domain(format!(
            "prune threshold must be a non-negative number, got {threshold}"
        )));
    }
    stats.check_aligned(formula)?;
    let kept = formula
        .conjunctions
        .iter()
        .enumerate()
        .filter(|&(i, _)| stats.evaluations[i] > 0 && stats.ratio(i) >= threshold)
        .map(|(_, c)| c.clone())
        .collect();
    Ok(DnfFormula {
        k: formula.k,
        conjunctions: kept,
    })
}

/// Text form: conjunctions joined by ` \/ `, literals by ` /\ `; the empty
/// formula is `false`.
pub fn render_text(formula: &DnfFormula) -> String {
    if formula.is_empty() {
        return "false".into();
    }
    formula
        .conjunctions
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(" \\/ ")
}

/// Parses the text form; `k` is one more than the largest dimension used.
pub fn parse_text(text: &str) -> Result<DnfFormula> {
    let conjunctions = Parser::new(text).formula()?;
    let k = conjunctions.iter().map(|c| c.max_dim() + 1).max().unwrap_or(0);
    DnfFormula::new(k, conjunctions)
}

/// Parses the text form for a feature space of dimension `k`.
pub fn parse_text_with_dim(text: &str, k: usize) -> Result<DnfFormula> {
    let conjunctions = Parser::new(text).formula()?;
    DnfFormula::new(k, conjunctions)
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Var(usize),
    Op(Op),
    Num(f64),
    And,
    Or,
    Open,
    Close,
    False,
}

struct Parser<'a> {
    text: &'a str,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn new(text: &'a str) -> Self {
        Self { text, pos: 0 }
    }

    fn error(&self, at: usize, message: impl Into<String>) -> Error {
        let before = &self.text[..at];
        let line = before.matches('\n').count() + 1;
        let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
        Error::parse(line, column, message)
    }

    fn skip_ws(&mut self) {
        let rest = &self.text[self.pos..];
        self.pos += rest.len() - rest.trim_start().len();
    }

    /// Next token and its start offset, without consuming it.
    fn peek(&mut self) -> Result<Option<(Token, usize, usize)>> {
        self.skip_ws();
        let start = self.pos;
        let rest = &self.text[start..];
        let Some(ch) = rest.chars().next() else {
            return Ok(None);
        };
        let fixed: &[(&str, Token)] = &[
            ("/\\", Token::And),
            ("\\/", Token::Or),
            ("∧", Token::And),
            ("∨", Token::Or),
            (">=", Token::Op(Op::Ge)),
            ("<=", Token::Op(Op::Le)),
            ("≥", Token::Op(Op::Ge)),
            ("≤", Token::Op(Op::Le)),
            ("<", Token::Op(Op::Lt)),
            (">", Token::Op(Op::Gt)),
            ("(", Token::Open),
            (")", Token::Close),
        ];
        for (s, tok) in fixed {
            if rest.starts_with(s) {
                return Ok(Some((tok.clone(), start, s.len())));
            }
        }
        if ch.is_ascii_alphabetic() {
            let word_len = rest
                .find(|c: char| !c.is_ascii_alphanumeric() && c != '_')
                .unwrap_or(rest.len());
            let word = &rest[..word_len];
            if word == "false" {
                return Ok(Some((Token::False, start, word_len)));
            }
            if let Some(digits) = word.strip_prefix("phi") {
                if let Ok(j) = digits.parse::<usize>() {
                    if !digits.starts_with('+') {
                        return Ok(Some((Token::Var(j), start, word_len)));
                    }
                }
            }
            return Err(self.error(start, format!("unknown identifier `{word}`")));
        }
        if ch.is_ascii_digit() || ch == '-' || ch == '+' || ch == '.' {
            let len = rest
                .find(|c: char| {
                    !(c.is_ascii_digit() || matches!(c, '.' | 'e' | 'E' | '-' | '+'))
                })
                .unwrap_or(rest.len());
            let word = &rest[..len];
            return match word.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(Some((Token::Num(v), start, len))),
                _ => Err(self.error(start, format!("invalid number `{word}`"))),
            };
        }
        Err(self.error(start, format!("unexpected character `{ch}`")))
    }

    fn next(&mut self) -> Result<Option<(Token, usize)>> {
        Ok(self.peek()?.map(|(tok, start, len)| {
            self.pos = start + len;
            (tok, start)
        }))
    }

    fn expect(&mut self, what: &str) -> Result<(Token, usize)> {
        let at = self.pos;
        match self.next()? {
            Some(t) => Ok(t),
            None => Err(self.error(at.max(self.pos), format!("expected {what}, found end of input"))),
        }
    }

    fn formula(&mut self) -> Result<Vec<Conjunction>> {
        if let Some((Token::False, _, _)) = self.peek()? {
            self.next()?;
            return match self.next()? {
                None => Ok(Vec::new()),
                Some((_, at)) => Err(self.error(at, "unexpected input after `false`")),
            };
        }
        let mut out = vec![self.conjunction()?];
        loop {
            match self.next()? {
                None => return Ok(out),
                Some((Token::Or, _)) => out.push(self.conjunction()?),
                Some((_, at)) => return Err(self.error(at, "expected `\\/` or end of input")),
            }
        }
    }

    fn conjunction(&mut self) -> Result<Conjunction> {
        let start = self.pos;
        let mut literals = Vec::new();
        self.factor(&mut literals)?;
        while let Some((Token::And, _, _)) = self.peek()? {
            self.next()?;
            self.factor(&mut literals)?;
        }
        Conjunction::new(literals).map_err(|e| self.error(start, e.to_string()))
    }

    fn factor(&mut self, literals: &mut Vec<Literal>) -> Result<()> {
        match self.expect("a literal")? {
            (Token::Open, _) => {
                let inner = self.conjunction()?;
                literals.extend_from_slice(inner.literals());
                match self.expect("`)`")? {
                    (Token::Close, _) => Ok(()),
                    (_, at) => Err(self.error(at, "expected `)`")),
                }
            }
            (Token::Var(dim), _) => {
                let op = match self.expect("a comparison")? {
                    (Token::Op(op), _) => op,
                    (_, at) => return Err(self.error(at, "expected a comparison operator")),
                };
                match self.expect("a number")? {
                    (Token::Num(threshold), _) => {
                        literals.push(Literal::new(dim, op, threshold));
                        Ok(())
                    }
                    (_, at) => Err(self.error(at, "expected a number")),
                }
            }
            (_, at) => Err(self.error(at, "expected a literal such as `phi0 < 0.5`")),
        }
    }
}
