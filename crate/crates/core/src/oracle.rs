//! Cache-free reference implementation used as ground truth.
//!
//! The grammar is lowered to plain BNF (repetitions unrolled, no FSMs, no
//! hashing) and recognized with a textbook Earley parser. TagDispatch roots are
//! driven by naive suffix matching instead of an AC automaton.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::dispatch::TagDispatchSpec;
use crate::error::OracleError;
use crate::grammar::{class_ranges, Grammar, RuleExpr};
use crate::maskcache::MaskCache;
use crate::matcher::Matcher;
use crate::vocab::{TokenId, TokenMask, Vocabulary};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Sym {
    T([u64; 4]),
    N(u32),
}

fn byte_in(set: &[u64; 4], b: u8) -> bool {
    set[(b >> 6) as usize] >> (b & 63) & 1 == 1
}

fn byte_set(ranges: &[(u8, u8)]) -> [u64; 4] {
    let mut s = [0u64; 4];
    for &(lo, hi) in ranges {
        for b in lo..=hi {
            s[(b >> 6) as usize] |= 1 << (b & 63);
        }
    }
    s
}

#[derive(Debug)]
struct Bnf {
    lhs: Vec<u32>,
    rhs: Vec<Vec<Sym>>,
    by_lhs: Vec<Vec<u32>>,
    nullable: Vec<bool>,
}

impl Bnf {
    fn lower(g: &Grammar) -> (Bnf, Vec<String>) {
        let names: Vec<String> = g.rules().iter().map(|(n, _)| n.clone()).collect();
        let mut b = Lowering {
            names: &names,
            alts: vec![Vec::new(); names.len()],
        };
        for (i, (_, e)) in g.rules().iter().enumerate() {
            if !matches!(e, RuleExpr::TagDispatch(_)) {
                b.alts[i] = b.lower(e);
            }
        }
        let mut bnf = Bnf {
            lhs: Vec::new(),
            rhs: Vec::new(),
            by_lhs: vec![Vec::new(); b.alts.len()],
            nullable: vec![false; b.alts.len()],
        };
        for (nt, alts) in b.alts.into_iter().enumerate() {
            for rhs in alts {
                bnf.by_lhs[nt].push(bnf.lhs.len() as u32);
                bnf.lhs.push(nt as u32);
                bnf.rhs.push(rhs);
            }
        }
        loop {
            let mut changed = false;
            for p in 0..bnf.lhs.len() {
                let a = bnf.lhs[p] as usize;
                if !bnf.nullable[a]
                    && bnf.rhs[p]
                        .iter()
                        .all(|s| matches!(s, Sym::N(n) if bnf.nullable[*n as usize]))
                {
                    bnf.nullable[a] = true;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        (bnf, names)
    }
}

struct Lowering<'a> {
    names: &'a [String],
    alts: Vec<Vec<Vec<Sym>>>,
}

impl Lowering<'_> {
    fn fresh(&mut self, alts: Vec<Vec<Sym>>) -> Sym {
        self.alts.push(alts);
        Sym::N((self.alts.len() - 1) as u32)
    }

    fn as_sym(&mut self, e: &RuleExpr) -> Vec<Sym> {
        let mut alts = self.lower(e);
        if alts.len() == 1 {
            alts.pop().unwrap()
        } else {
            vec![self.fresh(alts)]
        }
    }

    fn lower(&mut self, e: &RuleExpr) -> Vec<Vec<Sym>> {
        match e {
            RuleExpr::Empty => vec![vec![]],
            RuleExpr::Bytes(bs) => vec![bs.iter().map(|&b| Sym::T(byte_set(&[(b, b)]))).collect()],
            RuleExpr::Class { .. } => vec![vec![Sym::T(byte_set(&class_ranges(e)))]],
            RuleExpr::Ref(r) => {
                let i = self.names.iter().position(|n| n == r).expect("validated reference");
                vec![vec![Sym::N(i as u32)]]
            }
            RuleExpr::Seq(xs) => vec![xs.iter().flat_map(|x| self.as_sym(x)).collect()],
            RuleExpr::Choice(xs) => xs.iter().flat_map(|x| self.lower(x)).collect(),
            RuleExpr::Repeat { body, min, max } | RuleExpr::RepeatTail { body, min, max, .. } => {
                let b = self.lower(body);
                let b = self.fresh(b);
                let mut seq = vec![b; *min as usize];
                match max {
                    None => {
                        let star = self.alts.len() as u32;
                        self.alts.push(vec![vec![], vec![b, Sym::N(star)]]);
                        seq.push(Sym::N(star));
                    }
                    Some(max) if *max > *min => {
                        let mut opt = self.fresh(vec![vec![], vec![b]]);
                        for _ in *min + 1..*max {
                            opt = self.fresh(vec![vec![], vec![b, opt]]);
                        }
                        seq.push(opt);
                    }
                    Some(_) => {}
                }
                vec![seq]
            }
            RuleExpr::TagDispatch(_) => unreachable!("TagDispatch only appears as a root body"),
        }
    }
}

type Item = (u32, u32, u32); // (production, dot, origin)

/// Textbook Earley recognizer over the lowered BNF, one item set per position.
#[derive(Clone, Debug)]
pub struct RefParser<'a> {
    bnf: &'a Bnf,
    start: u32,
    sets: Vec<Vec<Item>>,
}

impl<'a> RefParser<'a> {
    fn new(bnf: &'a Bnf, start: u32) -> Self {
        let mut p = RefParser {
            bnf,
            start,
            sets: vec![Vec::new()],
        };
        let seed = bnf.by_lhs[start as usize].iter().map(|&q| (q, 0, 0)).collect();
        p.close(seed);
        p
    }

    /// Number of consumed bytes.
    pub fn len(&self) -> usize {
        self.sets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn close(&mut self, seed: Vec<Item>) {
        let j = self.sets.len() - 1;
        let bnf = self.bnf;
        let mut seen: HashSet<Item> = HashSet::new();
        let mut items: Vec<Item> = Vec::new();
        for it in seed {
            if seen.insert(it) {
                items.push(it);
            }
        }
        let mut k = 0;
        while k < items.len() {
            let (p, dot, origin) = items[k];
            k += 1;
            let mut found: Vec<Item> = Vec::new();
            match bnf.rhs[p as usize].get(dot as usize) {
                Some(Sym::N(b)) => {
                    found.extend(bnf.by_lhs[*b as usize].iter().map(|&q| (q, 0, j as u32)));
                    if bnf.nullable[*b as usize] {
                        found.push((p, dot + 1, origin));
                    }
                }
                Some(Sym::T(_)) => {}
                None => {
                    let a = Sym::N(bnf.lhs[p as usize]);
                    let waiting = if origin as usize == j {
                        &items[..]
                    } else {
                        &self.sets[origin as usize][..]
                    };
                    found.extend(
                        waiting
                            .iter()
                            .filter(|&&(q, d, _)| bnf.rhs[q as usize].get(d as usize) == Some(&a))
                            .map(|&(q, d, o)| (q, d + 1, o)),
                    );
                }
            }
            for it in found {
                if seen.insert(it) {
                    items.push(it);
                }
            }
        }
        *self.sets.last_mut().unwrap() = items;
    }

    /// Consumes `b` if some item can scan it; otherwise leaves the parser unchanged.
    pub fn push(&mut self, b: u8) -> bool {
        let bnf = self.bnf;
        let seed: Vec<Item> = self
            .sets
            .last()
            .unwrap()
            .iter()
            .filter(|&&(p, dot, _)| matches!(bnf.rhs[p as usize].get(dot as usize), Some(Sym::T(s)) if byte_in(s, b)))
            .map(|&(p, dot, o)| (p, dot + 1, o))
            .collect();
        if seed.is_empty() {
            return false;
        }
        self.sets.push(Vec::new());
        self.close(seed);
        true
    }

    pub fn truncate(&mut self, len: usize) {
        self.sets.truncate(len + 1);
    }

    /// Whether the consumed bytes form a complete sentence.
    pub fn complete(&self) -> bool {
        self.sets.last().unwrap().iter().any(|&(p, dot, o)| {
            o == 0 && self.bnf.lhs[p as usize] == self.start && dot as usize == self.bnf.rhs[p as usize].len()
        })
    }
}

/// Reference recognizer for a whole grammar, including TagDispatch roots.
pub struct ReferenceRecognizer {
    bnf: Bnf,
    root: u32,
    dispatch: Option<(TagDispatchSpec, Vec<u32>)>,
}

impl ReferenceRecognizer {
    pub fn new(g: &Grammar) -> Self {
        Self::for_rule(g, g.root())
    }

    /// Recognizer whose start symbol is `rule`.
    pub fn for_rule(g: &Grammar, rule: &str) -> Self {
        let (bnf, names) = Bnf::lower(g);
        let idx = |n: &str| names.iter().position(|x| x == n).expect("rule exists") as u32;
        let dispatch = match g.rule(rule) {
            Some(RuleExpr::TagDispatch(spec)) => {
                let subs = spec.pairs.iter().map(|(_, r)| idx(r)).collect();
                Some((spec.clone(), subs))
            }
            _ => None,
        };
        ReferenceRecognizer {
            bnf,
            root: idx(rule),
            dispatch,
        }
    }

    pub fn start(&self) -> RefState<'_> {
        match &self.dispatch {
            None => RefState::Plain(RefParser::new(&self.bnf, self.root)),
            Some((spec, subs)) => RefState::Dispatch(RefDispatch {
                spec,
                subs,
                bnf: &self.bnf,
                max_pat: spec.patterns().iter().map(Vec::len).max().unwrap_or(0),
                log: vec![Mode::Dispatching(Vec::new())],
                episodes: Vec::new(),
            }),
        }
    }

    pub fn accepts(&self, input: &[u8]) -> bool {
        let mut s = self.start();
        input.iter().all(|&b| s.push(b)) && s.can_terminate()
    }

    /// Whether `input` can be extended to a sentence.
    pub fn accepts_prefix(&self, input: &[u8]) -> bool {
        let mut s = self.start();
        input.iter().all(|&b| s.push(b))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Mode {
    /// Bytes since the last reset, trimmed to the longest pattern length.
    Dispatching(Vec<u8>),
    Dispatched(usize),
    Terminated,
}

/// Naive TagDispatch driver: pattern detection by suffix comparison.
pub struct RefDispatch<'a> {
    spec: &'a TagDispatchSpec,
    subs: &'a [u32],
    bnf: &'a Bnf,
    max_pat: usize,
    /// Mode after each consumed byte; `log[0]` is the initial mode.
    log: Vec<Mode>,
    /// Dispatched episodes: (position at which the tag ended, sub-parser).
    episodes: Vec<(usize, RefParser<'a>)>,
}

impl RefDispatch<'_> {
    fn pos(&self) -> usize {
        self.log.len() - 1
    }

    fn push(&mut self, b: u8) -> bool {
        let mode = self.log.last().unwrap().clone();
        let next = match mode {
            Mode::Terminated => return false,
            Mode::Dispatching(buf) => self.dispatching_step(buf, b),
            Mode::Dispatched(i) => {
                let sub = &mut self.episodes.last_mut().unwrap().1;
                if sub.push(b) {
                    Mode::Dispatched(i)
                } else if sub.complete() {
                    if !self.spec.loop_after_dispatch {
                        return false;
                    }
                    self.dispatching_step(Vec::new(), b)
                } else {
                    return false;
                }
            }
        };
        self.log.push(next);
        true
    }

    fn dispatching_step(&mut self, mut buf: Vec<u8>, b: u8) -> Mode {
        buf.push(b);
        if buf.len() > self.max_pat {
            buf.remove(0);
        }
        let tags = self.spec.pairs.iter().map(|(t, _)| t);
        let hit = tags
            .chain(&self.spec.stop_strs)
            .enumerate()
            .filter(|(_, p)| buf.ends_with(p))
            .max_by_key(|(_, p)| p.len())
            .map(|(i, _)| i);
        match hit {
            Some(i) if i < self.spec.pairs.len() => {
                let pos = self.pos() + 1;
                self.episodes.push((pos, RefParser::new(self.bnf, self.subs[i])));
                Mode::Dispatched(i)
            }
            Some(_) => Mode::Terminated,
            None => Mode::Dispatching(buf),
        }
    }

    fn truncate(&mut self, len: usize) {
        self.log.truncate(len + 1);
        while self.episodes.last().is_some_and(|(start, _)| *start > len) {
            self.episodes.pop();
        }
        if let (Some(Mode::Dispatched(_)), Some((start, sub))) = (self.log.last(), self.episodes.last_mut()) {
            sub.truncate(len - *start);
        }
    }

    fn can_terminate(&self) -> bool {
        match self.log.last().unwrap() {
            Mode::Terminated => true,
            Mode::Dispatching(_) => self.spec.stop_strs.is_empty(),
            Mode::Dispatched(_) => {
                self.episodes.last().unwrap().1.complete()
                    && (self.spec.stop_strs.is_empty() || !self.spec.loop_after_dispatch)
            }
        }
    }
}

/// Incremental handle on a reference run.
pub enum RefState<'a> {
    Plain(RefParser<'a>),
    Dispatch(RefDispatch<'a>),
}

impl RefState<'_> {
    pub fn push(&mut self, b: u8) -> bool {
        match self {
            RefState::Plain(p) => p.push(b),
            RefState::Dispatch(d) => d.push(b),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            RefState::Plain(p) => p.len(),
            RefState::Dispatch(d) => d.pos(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn truncate(&mut self, len: usize) {
        match self {
            RefState::Plain(p) => p.truncate(len),
            RefState::Dispatch(d) => d.truncate(len),
        }
    }

    pub fn can_terminate(&self) -> bool {
        match self {
            RefState::Plain(p) => p.complete(),
            RefState::Dispatch(d) => d.can_terminate(),
        }
    }
}

/// Mask of tokens allowed after the bytes already pushed into `s`.
pub fn mask_from_state(s: &mut RefState, vocab: &Vocabulary) -> TokenMask {
    let mut mask = TokenMask::new(vocab.size(), false);
    let base = s.len();
    let mut path: Vec<u8> = Vec::new();
    for &id in vocab.sorted_ids() {
        let v = vocab.token(id);
        let keep = path.iter().zip(v).take_while(|(a, b)| a == b).count();
        path.truncate(keep);
        s.truncate(base + keep);
        while path.len() < v.len() && s.push(v[path.len()]) {
            path.push(v[path.len()]);
        }
        if path.len() == v.len() {
            mask.insert(id as usize);
        }
    }
    s.truncate(base);
    if vocab.size() > 0 && s.can_terminate() {
        mask.insert(vocab.eos() as usize);
    }
    mask
}

/// Ground-truth mask: token `v` is allowed iff `prefix . v` is a viable
/// prefix; EOS iff `prefix` is a sentence.
pub fn oracle_mask(g: &Grammar, prefix: &[u8], vocab: &Vocabulary) -> Result<TokenMask, OracleError> {
    let rec = ReferenceRecognizer::new(g);
    let mut s = rec.start();
    if let Some(i) = prefix.iter().position(|&b| !s.push(b)) {
        return Err(OracleError::InvalidPrefix(i));
    }
    Ok(mask_from_state(&mut s, vocab))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct OracleStep {
    pub position: usize,
    #[serde(serialize_with = "ser_mask")]
    pub mask: TokenMask,
    /// Tokens on which the engine and the oracle disagree.
    pub mismatches: Vec<TokenId>,
}

fn ser_mask<S: serde::Serializer>(m: &TokenMask, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&m.serialize())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct OracleReport {
    pub steps: Vec<OracleStep>,
    /// Sampled tokens, one per step (the last may be EOS).
    pub tokens: Vec<TokenId>,
    pub agreed: bool,
}

/// Decodes up to `steps` tokens, sampling uniformly from the oracle mask,
/// and compares the engine mask with the oracle mask before every sample.
pub fn diff_trace(cache: &mut MaskCache, steps: usize, seed: u64) -> OracleReport {
    diff_trace_from(cache, b"", steps, seed).expect("empty prefix")
}

/// Like [`diff_trace`], after forcing `prefix` on both sides.
pub fn diff_trace_from(cache: &mut MaskCache, prefix: &[u8], steps: usize, seed: u64) -> Result<OracleReport, OracleError> {
    let g = cache.grammar();
    let vocab = cache.vocab();
    let rec = ReferenceRecognizer::new(&g.source);
    let mut r = rec.start();
    let mut m = Matcher::new(g);
    for (i, &b) in prefix.iter().enumerate() {
        if !r.push(b) {
            return Err(OracleError::InvalidPrefix(i));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = OracleReport {
        steps: Vec::new(),
        tokens: Vec::new(),
        agreed: m.advance_all(prefix).is_ok(),
    };
    if !report.agreed {
        return Ok(report);
    }
    for _ in 0..steps {
        let expected = mask_from_state(&mut r, vocab);
        let got = cache.generate_mask(&mut m);
        let mismatches: Vec<TokenId> = (0..vocab.size())
            .filter(|&t| expected.get(t) != got.get(t))
            .map(|t| t as TokenId)
            .collect();
        report.agreed &= mismatches.is_empty();
        report.steps.push(OracleStep {
            position: r.len(),
            mask: expected.clone(),
            mismatches,
        });
        let allowed: Vec<usize> = expected.iter().collect();
        let Some(&t) = allowed.get(rng.gen_range(0..allowed.len().max(1))) else {
            break;
        };
        let t = t as TokenId;
        report.tokens.push(t);
        if t == vocab.eos() {
            break;
        }
        for &b in vocab.token(t) {
            assert!(r.push(b), "oracle rejected a token from its own mask");
        }
        if m.advance_all(vocab.token(t)).is_err() {
            report.agreed = false;
            break;
        }
    }
    Ok(report)
}
