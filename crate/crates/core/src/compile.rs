//! Grammar compilation: compression, tail lifting, per-rule FSMs, structural
//! hashes, nullability and lookahead assertions.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::dispatch::{AcAutomaton, TagDispatchSpec};
use crate::error::GrammarError;
use crate::fsm::{build_fsm, canonicalize, determinize, hash_grammar, minimize, Edge, Fsm, HashKind, DEFAULT_STATE_CAP};
use crate::grammar::{compress_repetitions, Grammar, RuleExpr, DEFAULT_REP_THRESHOLD};
use crate::hash::{fnv1a, hash_all, hash_combine};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompileOptions {
    /// Repetition compression threshold; `None` disables compression.
    pub rep_threshold: Option<u32>,
    pub state_cap: usize,
}

impl Default for CompileOptions {
    fn default() -> Self {
        CompileOptions {
            rep_threshold: Some(DEFAULT_REP_THRESHOLD),
            state_cap: DEFAULT_STATE_CAP,
        }
    }
}

impl CompileOptions {
    pub fn uncompressed() -> Self {
        CompileOptions {
            rep_threshold: None,
            ..Self::default()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RuleKind {
    Normal,
    /// Counted repetition of the rule body. State 0 is the pivot between
    /// repetitions; final states are body-final states.
    Tail { min: u32, max: Option<u32>, threshold: u32 },
    /// TagDispatch root; its FSM is empty and parsing is driven by the matcher.
    Dispatch,
}

/// Bytes that may follow the completion of a rule, as up-to-two-byte prefixes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lookahead {
    /// No constraint.
    pub any: bool,
    /// Each path admits text whose first byte is in `.0` and, when the text is
    /// longer than one byte, whose second byte is in `.1` (if present).
    pub paths: Vec<([u64; 4], Option<[u64; 4]>)>,
    pub hash: u64,
}

fn in_set(set: &[u64; 4], b: u8) -> bool {
    set[(b >> 6) as usize] >> (b & 63) & 1 == 1
}

fn add_range(set: &mut [u64; 4], lo: u8, hi: u8) {
    for b in lo..=hi {
        set[(b >> 6) as usize] |= 1 << (b & 63);
    }
}

impl Lookahead {
    pub fn any() -> Self {
        Self::build(true, Vec::new())
    }

    fn build(any: bool, mut paths: Vec<([u64; 4], Option<[u64; 4]>)>) -> Self {
        if any {
            paths.clear();
        }
        paths.sort();
        paths.dedup();
        let mut h = fnv1a(if any { b"lookahead:any" } else { b"lookahead" });
        for (a, b) in &paths {
            h = hash_all(h, a);
            h = match b {
                Some(b) => hash_all(hash_combine(h, 1), b),
                None => hash_combine(h, 0),
            };
        }
        Lookahead { any, paths, hash: h }
    }

    /// Whether `rest` (non-empty text after the rule completes) is compatible.
    pub fn admits(&self, rest: &[u8]) -> bool {
        if self.any {
            return true;
        }
        self.paths.iter().any(|(a, b)| {
            in_set(a, rest[0])
                && match (b, rest.get(1)) {
                    (Some(b), Some(&c)) => in_set(b, c),
                    _ => true,
                }
        })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CompiledRule {
    pub name: String,
    pub kind: RuleKind,
    /// Canonically numbered FSM.
    pub fsm: Fsm,
    pub key_hash: u64,
    pub ref_hash: u64,
    pub hash_kind: HashKind,
    /// False when determinization hit the state cap.
    pub deterministic: bool,
    pub nullable: bool,
    pub lookahead: Lookahead,
}

#[derive(Clone, Debug)]
pub struct DispatchInfo {
    pub spec: TagDispatchSpec,
    pub ac: AcAutomaton,
    /// Rule id of each tag's grammar, in tag order.
    pub sub_rules: Vec<u32>,
}

/// A grammar ready for parsing and mask generation.
#[derive(Clone, Debug)]
pub struct CompiledGrammar {
    pub rules: Vec<CompiledRule>,
    pub root: u32,
    pub source: Grammar,
    pub options: CompileOptions,
    pub dispatch: Option<DispatchInfo>,
    names: HashMap<String, u32>,
}

const TAIL_MARK: &[u8] = b"repetition-tail";
const DISPATCH_MARK: &[u8] = b"tag-dispatch";
const UNBOUNDED: u64 = u64::MAX;

impl CompiledGrammar {
    pub fn rule_id(&self, name: &str) -> Option<u32> {
        self.names.get(name).copied()
    }

    pub fn rule(&self, id: u32) -> &CompiledRule {
        &self.rules[id as usize]
    }

    pub fn fsm_states(&self) -> usize {
        self.rules.iter().map(|r| r.fsm.num_states()).sum()
    }

    /// Hash of the whole grammar: the root's reference hash, or for a
    /// TagDispatch root, the tags and the hashes of their grammars.
    pub fn grammar_hash(&self) -> u64 {
        self.rule(self.root).ref_hash
    }

    /// (rule, state) pairs whose state has at least one terminal edge.
    pub fn scannable_states(&self) -> Vec<(u32, u32)> {
        let mut out = Vec::new();
        for (r, rule) in self.rules.iter().enumerate() {
            for s in 0..rule.fsm.num_states() as u32 {
                if rule.fsm.has_terminal(s) {
                    out.push((r as u32, s));
                }
            }
        }
        out
    }

    /// JSON description of the compiled rules for debugging.
    pub fn dump_json(&self) -> serde_json::Value {
        let rules: Vec<serde_json::Value> = self
            .rules
            .iter()
            .map(|r| {
                let edges: Vec<Vec<serde_json::Value>> = r
                    .fsm
                    .edges
                    .iter()
                    .map(|es| {
                        es.iter()
                            .map(|e| match *e {
                                Edge::Terminal { lo, hi, target } => {
                                    serde_json::json!({"lo": lo, "hi": hi, "target": target})
                                }
                                Edge::Rule { rule, target } => {
                                    serde_json::json!({"rule": self.rules[rule as usize].name, "target": target})
                                }
                                Edge::Epsilon { target } => serde_json::json!({"epsilon": true, "target": target}),
                            })
                            .collect()
                    })
                    .collect();
                serde_json::json!({
                    "name": r.name,
                    "kind": r.kind,
                    "states": r.fsm.num_states(),
                    "finals": (0..r.fsm.num_states()).filter(|&s| r.fsm.finals[s]).collect::<Vec<_>>(),
                    "edges": edges,
                    "key_hash": format!("{:016x}", r.key_hash),
                    "ref_hash": format!("{:016x}", r.ref_hash),
                    "hash_kind": r.hash_kind,
                    "deterministic": r.deterministic,
                    "nullable": r.nullable,
                })
            })
            .collect();
        serde_json::json!({
            "root": self.rules[self.root as usize].name,
            "rep_threshold": self.options.rep_threshold,
            "rules": rules,
        })
    }
}

struct Lifted {
    rules: Vec<(String, RuleExpr, RuleKind)>,
}

impl Lifted {
    fn lift(&mut self, owner: &str, e: &RuleExpr, counter: &mut u32) -> RuleExpr {
        match e {
            RuleExpr::Seq(xs) => RuleExpr::Seq(xs.iter().map(|x| self.lift(owner, x, counter)).collect()),
            RuleExpr::Choice(xs) => RuleExpr::Choice(xs.iter().map(|x| self.lift(owner, x, counter)).collect()),
            RuleExpr::Repeat { body, min, max } => RuleExpr::Repeat {
                body: Box::new(self.lift(owner, body, counter)),
                min: *min,
                max: *max,
            },
            RuleExpr::RepeatTail {
                body,
                min,
                max,
                threshold,
            } => {
                let name = format!("{owner}#rep{counter}");
                *counter += 1;
                let body = self.lift(owner, body, counter);
                self.rules.push((
                    name.clone(),
                    body,
                    RuleKind::Tail {
                        min: *min,
                        max: *max,
                        threshold: *threshold,
                    },
                ));
                RuleExpr::Ref(name)
            }
            other => other.clone(),
        }
    }
}

/// Adds a fresh initial pivot state copying the body's initial edges.
fn add_pivot(body: &Fsm) -> Fsm {
    let mut f = body.clone();
    let p = f.add_state();
    let init = f.edges[f.initial as usize].clone();
    f.edges[p as usize] = init;
    f.initial = p;
    f
}

/// Determinizes and minimizes, or keeps the NFA when the state cap is hit.
fn reduce(f: &Fsm, cap: usize) -> (Fsm, bool) {
    match determinize(f, cap) {
        (d, true) => (minimize(&d), true),
        other => other,
    }
}

pub fn compile(g: &Grammar, options: &CompileOptions) -> Result<CompiledGrammar, GrammarError> {
    Grammar::new(g.rules().to_vec(), g.root())?;
    let compressed = match options.rep_threshold {
        Some(t) => compress_repetitions(g, t)?,
        None => g.clone(),
    };
    let mut lifted = Lifted { rules: Vec::new() };
    let mut base = Vec::new();
    for (name, e) in compressed.rules() {
        let mut counter = 0;
        let kind = if matches!(e, RuleExpr::TagDispatch(_)) {
            RuleKind::Dispatch
        } else {
            RuleKind::Normal
        };
        base.push((name.clone(), lifted.lift(name, e, &mut counter), kind));
    }
    base.extend(lifted.rules);
    let names: HashMap<String, u32> = base.iter().enumerate().map(|(i, (n, _, _))| (n.clone(), i as u32)).collect();
    let resolve = |n: &str| names[n];

    let mut fsms = Vec::with_capacity(base.len());
    let mut deterministic = Vec::with_capacity(base.len());
    let mut marks = Vec::with_capacity(base.len());
    let mut ref_marks = Vec::with_capacity(base.len());
    for (_, e, kind) in &base {
        let (fsm, det, mark, ref_mark) = match *kind {
            RuleKind::Normal => {
                let (f, ok) = reduce(&build_fsm(e, &resolve), options.state_cap);
                (f, ok, None, None)
            }
            RuleKind::Tail { min, max, threshold } => {
                let (f, ok) = reduce(&build_fsm(e, &resolve), options.state_cap);
                let mark = hash_combine(fnv1a(TAIL_MARK), threshold as u64);
                let bounds = hash_combine(hash_combine(mark, min as u64), max.map_or(UNBOUNDED, u64::from));
                (add_pivot(&f), ok, Some(mark), Some(bounds))
            }
            RuleKind::Dispatch => {
                let RuleExpr::TagDispatch(spec) = e else { unreachable!() };
                let mut f = Fsm::new();
                // Referenced grammars as edges so they hash before the root.
                for (_, r) in &spec.pairs {
                    let t = f.add_state();
                    f.add_edge(0, Edge::Rule { rule: names[r], target: t });
                    f.finals[t as usize] = true;
                }
                let mut h = fnv1a(DISPATCH_MARK);
                for (tag, _) in &spec.pairs {
                    h = hash_combine(h, fnv1a(tag));
                }
                for s in &spec.stop_strs {
                    h = hash_combine(hash_combine(h, 1), fnv1a(s));
                }
                h = hash_combine(h, spec.loop_after_dispatch as u64);
                (f, true, Some(h), None)
            }
        };
        fsms.push(fsm);
        deterministic.push(det);
        marks.push(mark);
        ref_marks.push(ref_mark);
    }
    let hashes = hash_grammar(&fsms, &marks, &ref_marks);
    let ref_hash = |r: u32| hashes[r as usize].reference;
    let fsms: Vec<Fsm> = fsms.iter().map(|f| canonicalize(f, &ref_hash)).collect();
    let nullable = nullable_rules(&fsms, &base);
    let lookaheads = lookaheads(&fsms, &base);
    let rules = base
        .iter()
        .enumerate()
        .map(|(i, (name, _, kind))| CompiledRule {
            name: name.clone(),
            kind: *kind,
            fsm: fsms[i].clone(),
            key_hash: hashes[i].key,
            ref_hash: hashes[i].reference,
            hash_kind: hashes[i].kind,
            deterministic: deterministic[i],
            nullable: nullable[i],
            lookahead: lookaheads[i].clone(),
        })
        .collect();
    let root = names[g.root()];
    let dispatch = match g.root_expr() {
        RuleExpr::TagDispatch(spec) => Some(DispatchInfo {
            spec: spec.clone(),
            ac: spec.automaton()?,
            sub_rules: spec.pairs.iter().map(|(_, r)| names[r]).collect(),
        }),
        _ => None,
    };
    Ok(CompiledGrammar {
        rules,
        root,
        source: g.clone(),
        options: *options,
        dispatch,
        names,
    })
}

fn nullable_rules(fsms: &[Fsm], base: &[(String, RuleExpr, RuleKind)]) -> Vec<bool> {
    let mut nullable = vec![false; fsms.len()];
    loop {
        let mut changed = false;
        for (r, f) in fsms.iter().enumerate() {
            if nullable[r] {
                continue;
            }
            let yes = match base[r].2 {
                RuleKind::Tail { min, .. } => min == 0,
                RuleKind::Dispatch => false,
                RuleKind::Normal => {
                    let mut seen = vec![false; f.num_states()];
                    let mut stack = vec![f.initial];
                    seen[f.initial as usize] = true;
                    let mut found = false;
                    while let Some(s) = stack.pop() {
                        if f.is_final(s) {
                            found = true;
                            break;
                        }
                        for e in &f.edges[s as usize] {
                            let pass = match *e {
                                Edge::Epsilon { .. } => true,
                                Edge::Rule { rule, .. } => nullable[rule as usize],
                                Edge::Terminal { .. } => false,
                            };
                            let t = e.target() as usize;
                            if pass && !seen[t] {
                                seen[t] = true;
                                stack.push(t as u32);
                            }
                        }
                    }
                    found
                }
            };
            if yes {
                nullable[r] = true;
                changed = true;
            }
        }
        if !changed {
            return nullable;
        }
    }
}

/// First-byte set of a follow, and the second-byte set when it is fixed.
type LookPath = ([u64; 4], Option<[u64; 4]>);

/// Union over referencing sites of the two-byte follow of each site.
fn lookaheads(fsms: &[Fsm], base: &[(String, RuleExpr, RuleKind)]) -> Vec<Lookahead> {
    let n = fsms.len();
    let mut any = vec![false; n];
    let mut paths: Vec<Vec<LookPath>> = vec![Vec::new(); n];
    for (p, f) in fsms.iter().enumerate() {
        let is_tail = matches!(base[p].2, RuleKind::Tail { .. });
        let is_dispatch = matches!(base[p].2, RuleKind::Dispatch);
        let open = |s: u32| {
            f.is_final(s)
                || f.edges[s as usize]
                    .iter()
                    .any(|e| !matches!(e, Edge::Terminal { .. }))
        };
        for es in &f.edges {
            for e in es {
                let Edge::Rule { rule, target: t } = *e else { continue };
                let r = rule as usize;
                if is_dispatch || (is_tail && f.is_final(t)) || open(t) {
                    any[r] = true;
                    continue;
                }
                let mut groups: Vec<(u32, [u64; 4])> = Vec::new();
                for e2 in &f.edges[t as usize] {
                    if let Edge::Terminal { lo, hi, target } = *e2 {
                        match groups.iter_mut().find(|(x, _)| *x == target) {
                            Some((_, set)) => add_range(set, lo, hi),
                            None => {
                                let mut set = [0; 4];
                                add_range(&mut set, lo, hi);
                                groups.push((target, set));
                            }
                        }
                    }
                }
                for (t2, first) in groups {
                    let second = if open(t2) || (is_tail && f.is_final(t2)) {
                        None
                    } else {
                        let mut set = [0; 4];
                        for e3 in &f.edges[t2 as usize] {
                            if let Edge::Terminal { lo, hi, .. } = *e3 {
                                add_range(&mut set, lo, hi);
                            }
                        }
                        Some(set)
                    };
                    paths[r].push((first, second));
                }
            }
        }
    }
    (0..n).map(|r| Lookahead::build(any[r], std::mem::take(&mut paths[r]))).collect()
}
