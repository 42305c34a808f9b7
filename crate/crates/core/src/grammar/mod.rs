//! Rule-indexed grammar IR, EBNF front end and repetition state compression.

mod compress;
mod parse;

use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

pub use compress::{compress_repetitions, expand_bounded, DEFAULT_REP_THRESHOLD};
pub use parse::parse_ebnf;

use crate::dispatch::TagDispatchSpec;
use crate::error::GrammarError;
use crate::hash::fnv1a;

/// Right-hand side of a rule.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RuleExpr {
    Empty,
    Bytes(Vec<u8>),
    /// Inclusive byte ranges, optionally negated.
    Class { ranges: Vec<(u8, u8)>, negated: bool },
    Seq(Vec<RuleExpr>),
    Choice(Vec<RuleExpr>),
    Ref(String),
    /// `body{min,max}`; `max == None` is unbounded.
    Repeat { body: Box<RuleExpr>, min: u32, max: Option<u32> },
    /// Counted tail left behind by [`compress_repetitions`]; the engine tracks
    /// the repeat count in the parser state instead of in the FSM.
    RepeatTail {
        body: Box<RuleExpr>,
        min: u32,
        max: Option<u32>,
        threshold: u32,
    },
    TagDispatch(TagDispatchSpec),
}

impl RuleExpr {
    pub fn lit(s: &str) -> Self {
        RuleExpr::Bytes(s.as_bytes().to_vec())
    }

    pub fn rule(name: &str) -> Self {
        RuleExpr::Ref(name.to_string())
    }

    pub fn class(ranges: &[(u8, u8)]) -> Self {
        RuleExpr::Class {
            ranges: ranges.to_vec(),
            negated: false,
        }
    }

    pub fn repeat(body: RuleExpr, min: u32, max: Option<u32>) -> Self {
        RuleExpr::Repeat {
            body: Box::new(body),
            min,
            max,
        }
    }

    /// `Seq` that flattens trivial cases.
    pub fn seq(mut items: Vec<RuleExpr>) -> Self {
        items.retain(|e| *e != RuleExpr::Empty);
        match items.len() {
            0 => RuleExpr::Empty,
            1 => items.pop().unwrap(),
            _ => RuleExpr::Seq(items),
        }
    }

    pub fn choice(mut items: Vec<RuleExpr>) -> Self {
        match items.len() {
            0 => RuleExpr::Empty,
            1 => items.pop().unwrap(),
            _ => RuleExpr::Choice(items),
        }
    }

    pub fn visit(&self, f: &mut impl FnMut(&RuleExpr)) {
        f(self);
        match self {
            RuleExpr::Seq(xs) | RuleExpr::Choice(xs) => xs.iter().for_each(|x| x.visit(f)),
            RuleExpr::Repeat { body, .. } | RuleExpr::RepeatTail { body, .. } => body.visit(f),
            _ => {}
        }
    }

    pub fn node_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_| n += 1);
        n
    }

    /// Rule names referenced directly by this expression (including TagDispatch targets).
    pub fn references(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.collect_refs(&mut out);
        out
    }

    fn collect_refs<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            RuleExpr::Ref(r) => out.push(r),
            RuleExpr::Seq(xs) | RuleExpr::Choice(xs) => xs.iter().for_each(|x| x.collect_refs(out)),
            RuleExpr::Repeat { body, .. } | RuleExpr::RepeatTail { body, .. } => body.collect_refs(out),
            RuleExpr::TagDispatch(spec) => out.extend(spec.pairs.iter().map(|(_, r)| r.as_str())),
            _ => {}
        }
    }

    /// Nullability given nullability of referenced rules.
    pub fn nullable(&self, rule_nullable: &dyn Fn(&str) -> bool) -> bool {
        match self {
            RuleExpr::Empty => true,
            RuleExpr::Bytes(b) => b.is_empty(),
            RuleExpr::Class { .. } => false,
            RuleExpr::Seq(xs) => xs.iter().all(|x| x.nullable(rule_nullable)),
            RuleExpr::Choice(xs) => xs.iter().any(|x| x.nullable(rule_nullable)),
            RuleExpr::Ref(r) => rule_nullable(r),
            RuleExpr::Repeat { body, min, .. } | RuleExpr::RepeatTail { body, min, .. } => {
                *min == 0 || body.nullable(rule_nullable)
            }
            RuleExpr::TagDispatch(spec) => spec.stop_strs.is_empty(),
        }
    }

    fn productive(&self, rule_productive: &dyn Fn(&str) -> bool) -> bool {
        match self {
            RuleExpr::Empty | RuleExpr::Bytes(_) | RuleExpr::TagDispatch(_) => true,
            RuleExpr::Class { .. } => !class_ranges(self).is_empty(),
            RuleExpr::Seq(xs) => xs.iter().all(|x| x.productive(rule_productive)),
            RuleExpr::Choice(xs) => xs.iter().any(|x| x.productive(rule_productive)),
            RuleExpr::Ref(r) => rule_productive(r),
            RuleExpr::Repeat { body, min, .. } | RuleExpr::RepeatTail { body, min, .. } => {
                *min == 0 || body.productive(rule_productive)
            }
        }
    }
}

/// Positive, sorted, merged byte ranges of a `Class` expression.
pub fn class_ranges(expr: &RuleExpr) -> Vec<(u8, u8)> {
    let RuleExpr::Class { ranges, negated } = expr else {
        return Vec::new();
    };
    let mut set = [false; 256];
    for &(lo, hi) in ranges {
        for b in lo..=hi {
            set[b as usize] = true;
        }
    }
    if *negated {
        set.iter_mut().for_each(|s| *s = !*s);
    }
    ranges_of(&set)
}

pub(crate) fn ranges_of(set: &[bool; 256]) -> Vec<(u8, u8)> {
    let mut out = Vec::new();
    let mut b = 0usize;
    while b < 256 {
        if set[b] {
            let start = b;
            while b + 1 < 256 && set[b + 1] {
                b += 1;
            }
            out.push((start as u8, b as u8));
        }
        b += 1;
    }
    out
}

/// A named set of production rules with a designated root.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grammar {
    rules: Vec<(String, RuleExpr)>,
    root: String,
    digest: u64,
}

/// One problem found by [`Grammar::validate`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Diagnostic {
    pub rule: String,
    pub kind: DiagnosticKind,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DiagnosticKind {
    UnknownRule(String),
    DuplicateRule,
    NullableRepetitionBody,
    InvalidBounds,
    MisplacedTagDispatch,
    InvalidTagDispatch(crate::error::DispatchError),
    UnproductiveRule,
}

impl Grammar {
    /// Builds and checks a grammar. Unproductive rules are reported by
    /// [`validate`](Self::validate) but are not an error here.
    pub fn new(rules: Vec<(String, RuleExpr)>, root: &str) -> Result<Self, GrammarError> {
        let g = Self::new_unchecked(rules, root);
        g.check()?;
        Ok(g)
    }

    pub fn new_unchecked(rules: Vec<(String, RuleExpr)>, root: &str) -> Self {
        let digest = fnv1a(format!("{root}\n{rules:?}").as_bytes());
        Grammar {
            rules,
            root: root.to_string(),
            digest,
        }
    }

    pub(crate) fn with_digest(mut self, digest: u64) -> Self {
        self.digest = digest;
        self
    }

    pub fn rules(&self) -> &[(String, RuleExpr)] {
        &self.rules
    }

    pub fn root(&self) -> &str {
        &self.root
    }

    /// Digest of the source text (or of the rule list for programmatic grammars).
    pub fn digest(&self) -> u64 {
        self.digest
    }

    pub fn rule(&self, name: &str) -> Option<&RuleExpr> {
        self.rules.iter().find(|(n, _)| n == name).map(|(_, e)| e)
    }

    pub fn root_expr(&self) -> &RuleExpr {
        self.rule(&self.root).expect("root rule exists")
    }

    pub fn is_tag_dispatch(&self) -> bool {
        matches!(self.root_expr(), RuleExpr::TagDispatch(_))
    }

    fn check(&self) -> Result<(), GrammarError> {
        if self.rules.is_empty() {
            return Err(GrammarError::Empty);
        }
        for d in self.validate() {
            return Err(match d.kind {
                DiagnosticKind::UnknownRule(r) => GrammarError::UnknownRule(r),
                DiagnosticKind::DuplicateRule => GrammarError::DuplicateRule(d.rule),
                DiagnosticKind::NullableRepetitionBody => GrammarError::NullableRepetitionBody(d.rule),
                DiagnosticKind::InvalidBounds => GrammarError::InvalidBounds(d.rule),
                DiagnosticKind::MisplacedTagDispatch => GrammarError::MisplacedTagDispatch(d.rule),
                DiagnosticKind::InvalidTagDispatch(e) => GrammarError::Dispatch(e),
                DiagnosticKind::UnproductiveRule => continue,
            });
        }
        Ok(())
    }

    /// Empty iff every structural invariant holds and every rule is productive.
    pub fn validate(&self) -> Vec<Diagnostic> {
        let mut diags = Vec::new();
        let mut names = HashSet::new();
        let diag = |rule: &str, kind| Diagnostic {
            rule: rule.to_string(),
            kind,
        };
        for (name, _) in &self.rules {
            if !names.insert(name.as_str()) {
                diags.push(diag(name, DiagnosticKind::DuplicateRule));
            }
        }
        if !names.contains(self.root.as_str()) {
            diags.push(diag(&self.root, DiagnosticKind::UnknownRule(self.root.clone())));
        }
        let nullable = self.nullable_rules();
        let is_nullable = |r: &str| nullable.contains(r);
        let root_dispatch = matches!(self.rule(&self.root), Some(RuleExpr::TagDispatch(_)));
        for (name, expr) in &self.rules {
            for r in expr.references() {
                if !names.contains(r) {
                    diags.push(diag(name, DiagnosticKind::UnknownRule(r.to_string())));
                }
            }
            // A TagDispatch root is driven by the matcher and cannot be nested.
            if root_dispatch && expr.references().contains(&self.root.as_str()) {
                diags.push(diag(name, DiagnosticKind::MisplacedTagDispatch));
            }
            if let RuleExpr::TagDispatch(spec) = expr {
                if *name != self.root {
                    diags.push(diag(name, DiagnosticKind::MisplacedTagDispatch));
                }
                if let Err(e) = spec.validate() {
                    diags.push(diag(name, DiagnosticKind::InvalidTagDispatch(e)));
                }
            }
            expr.visit(&mut |e| match e {
                RuleExpr::Repeat { body, min, max } | RuleExpr::RepeatTail { body, min, max, .. } => {
                    if body.nullable(&is_nullable) {
                        diags.push(diag(name, DiagnosticKind::NullableRepetitionBody));
                    }
                    if max.is_some_and(|m| m < *min) {
                        diags.push(diag(name, DiagnosticKind::InvalidBounds));
                    }
                }
                RuleExpr::Seq(xs) | RuleExpr::Choice(xs) if xs.iter().any(|x| matches!(x, RuleExpr::TagDispatch(_))) => {
                    diags.push(diag(name, DiagnosticKind::MisplacedTagDispatch));
                }
                _ => {}
            });
        }
        let productive = self.productive_rules();
        for (name, _) in &self.rules {
            if !productive.contains(name.as_str()) {
                diags.push(diag(name, DiagnosticKind::UnproductiveRule));
            }
        }
        diags
    }

    pub fn nullable_rules(&self) -> HashSet<&str> {
        let mut set: HashSet<&str> = HashSet::new();
        loop {
            let before = set.len();
            for (name, expr) in &self.rules {
                if !set.contains(name.as_str()) && expr.nullable(&|r| set.contains(r)) {
                    set.insert(name);
                }
            }
            if set.len() == before {
                return set;
            }
        }
    }

    fn productive_rules(&self) -> HashSet<&str> {
        let mut set: HashSet<&str> = HashSet::new();
        loop {
            let before = set.len();
            for (name, expr) in &self.rules {
                if !set.contains(name.as_str()) && expr.productive(&|r| set.contains(r)) {
                    set.insert(name);
                }
            }
            if set.len() == before {
                return set;
            }
        }
    }

    pub(crate) fn map_exprs(&self, mut f: impl FnMut(&RuleExpr) -> RuleExpr) -> Grammar {
        Grammar {
            rules: self.rules.iter().map(|(n, e)| (n.clone(), f(e))).collect(),
            root: self.root.clone(),
            digest: self.digest,
        }
    }

    /// Rule index lookup table.
    pub fn index(&self) -> HashMap<&str, usize> {
        self.rules.iter().enumerate().map(|(i, (n, _))| (n.as_str(), i)).collect()
    }
}

impl fmt::Display for Grammar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (name, expr) in &self.rules {
            writeln!(f, "{name} ::= {}", ExprDisplay(expr, 0))?;
        }
        Ok(())
    }
}

struct ExprDisplay<'a>(&'a RuleExpr, u8);

fn write_lit(f: &mut fmt::Formatter<'_>, bytes: &[u8]) -> fmt::Result {
    f.write_str("\"")?;
    for &b in bytes {
        match b {
            b'"' => f.write_str("\\\"")?,
            b'\\' => f.write_str("\\\\")?,
            b'\n' => f.write_str("\\n")?,
            0x20..=0x7e => write!(f, "{}", b as char)?,
            _ => write!(f, "\\x{b:02x}")?,
        }
    }
    f.write_str("\"")
}

fn write_class_byte(f: &mut fmt::Formatter<'_>, b: u8) -> fmt::Result {
    match b {
        b']' | b'\\' | b'-' | b'^' => write!(f, "\\{}", b as char),
        0x21..=0x7e => write!(f, "{}", b as char),
        _ => write!(f, "\\x{b:02x}"),
    }
}

impl fmt::Display for ExprDisplay<'_> {
    /// Precedence levels: 0 = choice, 1 = sequence, 2 = atom.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let prec = self.1;
        let paren = |f: &mut fmt::Formatter<'_>, need: bool, inner: &dyn Fn(&mut fmt::Formatter<'_>) -> fmt::Result| {
            if need {
                f.write_str("(")?;
                inner(f)?;
                f.write_str(")")
            } else {
                inner(f)
            }
        };
        match self.0 {
            RuleExpr::Empty => f.write_str("\"\""),
            RuleExpr::Bytes(b) => write_lit(f, b),
            RuleExpr::Class { ranges, negated } => {
                f.write_str("[")?;
                if *negated {
                    f.write_str("^")?;
                }
                for &(lo, hi) in ranges {
                    write_class_byte(f, lo)?;
                    if hi != lo {
                        f.write_str("-")?;
                        write_class_byte(f, hi)?;
                    }
                }
                f.write_str("]")
            }
            RuleExpr::Ref(r) => f.write_str(r),
            RuleExpr::Seq(xs) => paren(f, prec > 1, &|f| {
                for (i, x) in xs.iter().enumerate() {
                    if i > 0 {
                        f.write_str(" ")?;
                    }
                    write!(f, "{}", ExprDisplay(x, 2))?;
                }
                Ok(())
            }),
            RuleExpr::Choice(xs) => paren(f, prec > 0, &|f| {
                for (i, x) in xs.iter().enumerate() {
                    if i > 0 {
                        f.write_str(" | ")?;
                    }
                    write!(f, "{}", ExprDisplay(x, 1))?;
                }
                Ok(())
            }),
            RuleExpr::Repeat { body, min, max } => {
                write!(f, "{}", ExprDisplay(body, 3))?;
                match max {
                    Some(m) => write!(f, "{{{min},{m}}}"),
                    None => write!(f, "{{{min},}}"),
                }
            }
            RuleExpr::RepeatTail { body, min, max, threshold } => {
                write!(f, "{}", ExprDisplay(body, 3))?;
                match max {
                    Some(m) => write!(f, "{{{min},{m}}}"),
                    None => write!(f, "{{{min},}}"),
                }?;
                write!(f, "/*tail t={threshold}*/")
            }
            RuleExpr::TagDispatch(spec) => {
                f.write_str("TagDispatch(")?;
                for (i, (tag, rule)) in spec.pairs.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    f.write_str("(")?;
                    write_lit(f, tag)?;
                    write!(f, ", {rule})")?;
                }
                if !spec.stop_strs.is_empty() || !spec.loop_after_dispatch {
                    f.write_str(" ;")?;
                    for s in &spec.stop_strs {
                        f.write_str(" stop=")?;
                        write_lit(f, s)?;
                    }
                    if !spec.loop_after_dispatch {
                        f.write_str(" loop=false")?;
                    }
                }
                f.write_str(")")
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validate_reports_unproductive_rule() {
        let g = Grammar::new(vec![("a".into(), RuleExpr::rule("a"))], "a").unwrap();
        let d = g.validate();
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].kind, DiagnosticKind::UnproductiveRule);
    }

    #[test]
    fn validate_reports_nullable_repetition_body() {
        let g = Grammar::new_unchecked(
            vec![(
                "root".into(),
                RuleExpr::repeat(RuleExpr::choice(vec![RuleExpr::lit("a"), RuleExpr::Empty]), 0, Some(3)),
            )],
            "root",
        );
        assert!(g
            .validate()
            .iter()
            .any(|d| d.kind == DiagnosticKind::NullableRepetitionBody));
        assert!(matches!(
            Grammar::new(g.rules().to_vec(), "root"),
            Err(GrammarError::NullableRepetitionBody(_))
        ));
    }

    #[test]
    fn json_lite_is_clean() {
        let g = parse_ebnf(crate::corpus::JSON_LITE).unwrap();
        assert_eq!(g.validate(), vec![]);
    }

    #[test]
    fn display_reparses_to_same_grammar() {
        let src = r#"root ::= "a\"b" [^a-c\]] sub{2,5} ( "x" | sub )* "\xff"
sub ::= [0-9]+ | "z" "#;
        let g = parse_ebnf(src).unwrap();
        let again = parse_ebnf(&g.to_string()).unwrap();
        assert_eq!(g.rules(), again.rules());
    }
}
