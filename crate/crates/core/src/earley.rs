//! Incremental byte-level Earley parser over compiled rule FSMs.
//!
//! An item's dot is a canonical FSM state of its rule. Items of a repetition
//! tail also carry the number of completed body matches. Charts are stored
//! flat and rollback truncates whole positions.

use rustc_hash::FxHashSet;
use serde::{Deserialize, Serialize};

use crate::compile::{CompiledGrammar, RuleKind};
use crate::error::ParserError;
use crate::fsm::Edge;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Item {
    pub origin: u32,
    pub rule: u32,
    pub state: u32,
    /// Completed body matches of a repetition tail; 0 for other rules.
    pub k: u32,
    /// Item belongs to the start derivation (the augmented start rule's
    /// child, or the seed of a local simulation).
    pub seed: bool,
}

impl Item {
    fn at(self, state: u32) -> Item {
        Item { state, ..self }
    }
}

/// Earley recognizer state.
#[derive(Clone, Debug)]
pub struct Parser<'g> {
    g: &'g CompiledGrammar,
    items: Vec<Item>,
    /// `starts[p]` is the index of the first item of chart `p`; one extra entry
    /// closes the last chart.
    starts: Vec<usize>,
    /// (awaited rule, target state, item index), sorted per chart.
    waits: Vec<(u32, u32, u32)>,
    wait_starts: Vec<usize>,
    /// Whether a seed item is complete at each position.
    goal: Vec<bool>,
    /// Seed items of a tail rule ignore the count bounds.
    relaxed: bool,
    seen: FxHashSet<Item>,
}

impl<'g> Parser<'g> {
    /// Parser for the grammar's root rule.
    ///
    /// Panics when the root is a TagDispatch; use [`crate::matcher::Matcher`].
    pub fn new(g: &'g CompiledGrammar) -> Self {
        assert!(g.dispatch.is_none(), "TagDispatch roots are driven by the matcher");
        Self::for_rule(g, g.root)
    }

    /// Parser whose start symbol is `rule`.
    pub fn for_rule(g: &'g CompiledGrammar, rule: u32) -> Self {
        Self::seeded(g, rule, g.rule(rule).fsm.initial, false)
    }

    /// Parser started inside `rule` at `state`, with no outer context. The
    /// seed completes whenever the rule could complete. With `relaxed`, a tail
    /// seed behaves as an unbounded repetition with no minimum.
    pub fn seeded(g: &'g CompiledGrammar, rule: u32, state: u32, relaxed: bool) -> Self {
        let mut p = Parser {
            g,
            items: Vec::new(),
            starts: vec![0],
            waits: Vec::new(),
            wait_starts: vec![0],
            goal: vec![false],
            relaxed,
            seen: FxHashSet::default(),
        };
        p.add(Item {
            origin: 0,
            rule,
            state,
            k: 0,
            seed: true,
        });
        p.close();
        p
    }

    pub fn grammar(&self) -> &'g CompiledGrammar {
        self.g
    }

    /// Number of bytes consumed.
    pub fn position(&self) -> usize {
        self.starts.len() - 2
    }

    pub fn chart(&self, p: usize) -> &[Item] {
        &self.items[self.starts[p]..self.starts[p + 1]]
    }

    pub fn current(&self) -> &[Item] {
        self.chart(self.position())
    }

    pub fn charts(&self) -> Vec<Vec<Item>> {
        (0..=self.position()).map(|p| self.chart(p).to_vec()).collect()
    }

    pub fn item_count(&self) -> usize {
        self.items.len()
    }

    pub fn can_terminate(&self) -> bool {
        self.goal[self.position()]
    }

    /// Whether the seed completed after `p` bytes.
    pub fn completed_at(&self, p: usize) -> bool {
        self.goal[p]
    }

    pub fn checkpoint(&self) -> usize {
        self.position()
    }

    pub fn rollback(&mut self, marker: usize) -> Result<(), ParserError> {
        let position = self.position();
        if marker > position {
            return Err(ParserError::InvalidMarker { marker, position });
        }
        self.truncate(marker);
        Ok(())
    }

    /// Unchecked rollback.
    pub(crate) fn truncate(&mut self, marker: usize) {
        self.starts.truncate(marker + 2);
        self.items.truncate(self.starts[marker + 1]);
        self.wait_starts.truncate(marker + 2);
        self.waits.truncate(self.wait_starts[marker + 1]);
        self.goal.truncate(marker + 1);
    }

    /// Items of the current chart that can consume a byte.
    pub fn scannable_items(&self) -> Vec<Item> {
        self.current()
            .iter()
            .copied()
            .filter(|&it| self.can_advance(it) && self.g.rule(it.rule).fsm.has_terminal(it.state))
            .collect()
    }

    fn kind(&self, rule: u32) -> RuleKind {
        self.g.rule(rule).kind
    }

    fn is_relaxed(&self, it: Item) -> bool {
        self.relaxed && it.seed
    }

    /// Whether the item may follow edges out of its state.
    fn can_advance(&self, it: Item) -> bool {
        match self.kind(it.rule) {
            RuleKind::Tail { max: Some(max), .. } if it.state == 0 && !self.is_relaxed(it) => it.k < max,
            RuleKind::Dispatch => false,
            _ => true,
        }
    }

    fn is_complete(&self, it: Item) -> bool {
        match self.kind(it.rule) {
            RuleKind::Normal => self.g.rule(it.rule).fsm.is_final(it.state),
            RuleKind::Tail { min, .. } => it.state == 0 && (self.is_relaxed(it) || it.k >= min),
            RuleKind::Dispatch => false,
        }
    }

    fn add(&mut self, it: Item) {
        if self.seen.insert(it) {
            self.items.push(it);
        }
    }

    /// Predict/complete closure of the last chart, then seals it.
    fn close(&mut self) {
        let pos = self.starts.len() - 1;
        let mut i = self.starts[pos];
        let mut goal = false;
        while i < self.items.len() {
            let it = self.items[i];
            let rule = self.g.rule(it.rule);
            if let RuleKind::Tail { min, max, .. } = rule.kind {
                if it.state != 0 && rule.fsm.is_final(it.state) {
                    let k = if self.is_relaxed(it) {
                        0
                    } else if max.is_none() {
                        (it.k + 1).min(min)
                    } else {
                        it.k + 1
                    };
                    self.add(Item { state: 0, k, ..it });
                }
            }
            if self.is_complete(it) {
                if it.seed {
                    goal = true;
                } else if it.origin as usize != pos {
                    self.complete_into(it);
                }
            }
            if self.can_advance(it) {
                for e in &rule.fsm.edges[it.state as usize] {
                    match *e {
                        Edge::Rule { rule: b, target } => {
                            self.waits.push((b, target, i as u32));
                            self.add(Item {
                                origin: pos as u32,
                                rule: b,
                                state: self.g.rule(b).fsm.initial,
                                k: 0,
                                seed: false,
                            });
                            if self.g.rule(b).nullable {
                                self.add(it.at(target));
                            }
                        }
                        Edge::Epsilon { target } => self.add(it.at(target)),
                        Edge::Terminal { .. } => {}
                    }
                }
            }
            i += 1;
        }
        let w = self.wait_starts[pos];
        self.waits[w..].sort_unstable();
        self.starts.push(self.items.len());
        self.wait_starts.push(self.waits.len());
        self.goal[pos] = goal;
        self.seen.clear();
    }

    fn complete_into(&mut self, done: Item) {
        let o = done.origin as usize;
        let ws = &self.waits[self.wait_starts[o]..self.wait_starts[o + 1]];
        let lo = self.wait_starts[o] + ws.partition_point(|w| w.0 < done.rule);
        let hi = self.wait_starts[o] + ws.partition_point(|w| w.0 <= done.rule);
        for n in lo..hi {
            let (_, target, idx) = self.waits[n];
            let parent = self.items[idx as usize];
            self.add(parent.at(target));
        }
    }

    /// Scans `b`. On rejection the parser is left unchanged.
    pub fn advance(&mut self, b: u8) -> bool {
        let pos = self.position();
        let (lo, hi) = (self.starts[pos], self.starts[pos + 1]);
        for i in lo..hi {
            let it = self.items[i];
            if !self.can_advance(it) {
                continue;
            }
            for e in &self.g.rule(it.rule).fsm.edges[it.state as usize] {
                if let Edge::Terminal { lo, hi, target } = *e {
                    if lo <= b && b <= hi {
                        self.add(it.at(target));
                    }
                }
            }
        }
        if self.items.len() == hi {
            self.seen.clear();
            return false;
        }
        self.goal.push(false);
        self.close();
        true
    }

    /// Advances over every byte of `bytes`; on failure rolls back to the
    /// starting position and returns the number of bytes accepted.
    pub fn advance_all(&mut self, bytes: &[u8]) -> Result<(), usize> {
        let start = self.position();
        for (n, &b) in bytes.iter().enumerate() {
            if !self.advance(b) {
                self.truncate(start);
                return Err(n);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compile::{compile, CompileOptions};
    use crate::grammar::parse_ebnf;

    fn cg(src: &str) -> CompiledGrammar {
        compile(&parse_ebnf(src).unwrap(), &CompileOptions::default()).unwrap()
    }

    fn accepts(g: &CompiledGrammar, s: &str) -> bool {
        let mut p = Parser::new(g);
        s.bytes().all(|b| p.advance(b)) && p.can_terminate()
    }

    #[test]
    fn literal() {
        let g = cg("root ::= \"ab\"");
        let mut p = Parser::new(&g);
        assert_eq!(p.current().len(), 1);
        assert!(!p.can_terminate());
        assert!(p.advance(b'a'));
        let before = p.charts();
        assert!(!p.advance(b'c'));
        assert_eq!(p.charts(), before);
        assert!(p.advance(b'b'));
        assert!(p.can_terminate());
    }

    #[test]
    fn prediction_cascades() {
        let g = cg("root ::= sub \"x\"\nsub ::= \"y\"");
        let p = Parser::new(&g);
        let sub = g.rule_id("sub").unwrap();
        assert!(p.current().iter().any(|it| it.rule == sub));
        let sc = p.scannable_items();
        assert_eq!(sc.len(), 1);
        assert_eq!(sc[0].rule, sub);
    }

    #[test]
    fn right_and_left_recursion() {
        let g = cg("root ::= \"a\" root | \"b\"");
        assert!(accepts(&g, "aab"));
        assert!(!accepts(&g, "aa"));
        let g = cg("root ::= root \"a\" | \"a\"");
        let p = Parser::new(&g);
        assert!(p.current().len() <= 4);
        assert!(accepts(&g, "aaa"));
        assert!(!accepts(&g, ""));
    }

    #[test]
    fn nullable_rules_complete() {
        let g = cg("root ::= a b \"c\"\na ::= \"x\"?\nb ::= a a");
        for s in ["c", "xc", "xxc", "xxxc"] {
            assert!(accepts(&g, s), "{s}");
        }
        assert!(!accepts(&g, "xxxxc"));
    }

    #[test]
    fn tail_counts_repetitions() {
        let g = cg("root ::= \"x\"{10,14} \";\"");
        for n in 0..18 {
            let s = format!("{};", "x".repeat(n));
            assert_eq!(accepts(&g, &s), (10..=14).contains(&n), "{n}");
        }
        let tail = g.rules.iter().position(|r| matches!(r.kind, RuleKind::Tail { .. })).unwrap() as u32;
        let mut p = Parser::new(&g);
        for _ in 0..9 {
            p.advance(b'x');
        }
        let ks: Vec<u32> = p.current().iter().filter(|it| it.rule == tail && it.state == 0).map(|it| it.k).collect();
        assert_eq!(ks, vec![1]);
    }

    #[test]
    fn unbounded_tail() {
        let g = cg("root ::= [0-9]{12,} \".\"");
        assert!(!accepts(&g, &format!("{}.", "7".repeat(11))));
        assert!(accepts(&g, &format!("{}.", "7".repeat(12))));
        assert!(accepts(&g, &format!("{}.", "7".repeat(40))));
    }

    #[test]
    fn rollback_restores_charts() {
        let g = cg("root ::= (\"a\" | \"b\" root){1,20}");
        let mut p = Parser::new(&g);
        p.advance_all(b"ba").unwrap();
        let snap = p.charts();
        let m = p.checkpoint();
        p.advance_all(b"bbaa").unwrap();
        p.rollback(m).unwrap();
        assert_eq!(p.charts(), snap);
        p.rollback(m).unwrap();
        assert_eq!(p.charts(), snap);
        p.advance_all(b"bbaa").unwrap();
        let again = p.charts();
        p.rollback(0).unwrap();
        assert_eq!(p.charts(), Parser::new(&g).charts());
        p.advance_all(b"babbaa").unwrap();
        assert_eq!(p.charts(), again);
        assert_eq!(p.rollback(99), Err(ParserError::InvalidMarker { marker: 99, position: 6 }));
    }

    #[test]
    fn failed_advance_all_rolls_back() {
        let g = cg("root ::= \"abc\"");
        let mut p = Parser::new(&g);
        assert_eq!(p.advance_all(b"abx"), Err(2));
        assert_eq!(p.position(), 0);
    }

    #[test]
    fn no_duplicate_items() {
        let g = cg("root ::= x x\nx ::= \"a\" | \"a\" x | x \"a\"");
        let mut p = Parser::new(&g);
        p.advance_all(b"aaaa").unwrap();
        for c in p.charts() {
            let mut d = c.clone();
            d.sort();
            d.dedup();
            assert_eq!(d.len(), c.len());
        }
    }

    #[test]
    fn seeded_mid_rule() {
        let g = cg("root ::= \"ab\" \"cd\"");
        let r = g.root;
        let mut p = Parser::for_rule(&g, r);
        p.advance(b'a');
        let s = p.current()[0].state;
        let mut q = Parser::seeded(&g, r, s, false);
        assert!(q.advance_all(b"bcd").is_ok());
        assert!(q.can_terminate());
    }
}
