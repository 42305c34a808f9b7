//! Per-rule finite state machines and their structural hashes.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::FsmError;
use crate::grammar::{class_ranges, RuleExpr};
use crate::hash::{fnv1a, hash_combine, CYCLE_SENTINEL, SENTINEL_K};

pub const DEFAULT_STATE_CAP: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Edge {
    Terminal { lo: u8, hi: u8, target: u32 },
    Rule { rule: u32, target: u32 },
    Epsilon { target: u32 },
}

impl Edge {
    pub fn target(&self) -> u32 {
        match *self {
            Edge::Terminal { target, .. } | Edge::Rule { target, .. } | Edge::Epsilon { target } => target,
        }
    }

    fn with_target(self, t: u32) -> Edge {
        match self {
            Edge::Terminal { lo, hi, .. } => Edge::Terminal { lo, hi, target: t },
            Edge::Rule { rule, .. } => Edge::Rule { rule, target: t },
            Edge::Epsilon { .. } => Edge::Epsilon { target: t },
        }
    }
}

/// Input symbol of an FSM: a byte or a completed rule.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sym {
    Byte(u8),
    Rule(u32),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fsm {
    pub initial: u32,
    pub finals: Vec<bool>,
    pub edges: Vec<Vec<Edge>>,
}

impl Fsm {
    pub fn new() -> Self {
        Fsm {
            initial: 0,
            finals: vec![false],
            edges: vec![Vec::new()],
        }
    }

    pub fn num_states(&self) -> usize {
        self.edges.len()
    }

    pub fn add_state(&mut self) -> u32 {
        self.edges.push(Vec::new());
        self.finals.push(false);
        (self.edges.len() - 1) as u32
    }

    pub fn add_edge(&mut self, from: u32, e: Edge) {
        self.edges[from as usize].push(e);
    }

    pub fn is_final(&self, s: u32) -> bool {
        self.finals[s as usize]
    }

    pub fn edge_count(&self) -> usize {
        self.edges.iter().map(Vec::len).sum()
    }

    pub fn has_terminal(&self, s: u32) -> bool {
        self.edges[s as usize].iter().any(|e| matches!(e, Edge::Terminal { .. }))
    }

    pub fn has_epsilon(&self) -> bool {
        self.edges.iter().flatten().any(|e| matches!(e, Edge::Epsilon { .. }))
    }

    pub fn referenced_rules(&self) -> impl Iterator<Item = u32> + '_ {
        self.edges.iter().flatten().filter_map(|e| match e {
            Edge::Rule { rule, .. } => Some(*rule),
            _ => None,
        })
    }

    /// No epsilon edges and, per state, disjoint terminal ranges and at most one edge per rule.
    pub fn is_deterministic(&self) -> bool {
        self.edges.iter().all(|es| {
            let mut ranges: Vec<(u8, u8)> = Vec::new();
            let mut rules: Vec<u32> = Vec::new();
            for e in es {
                match *e {
                    Edge::Epsilon { .. } => return false,
                    Edge::Terminal { lo, hi, .. } => ranges.push((lo, hi)),
                    Edge::Rule { rule, .. } => rules.push(rule),
                }
            }
            ranges.sort();
            rules.sort();
            ranges.windows(2).all(|w| w[0].1 < w[1].0) && rules.windows(2).all(|w| w[0] != w[1])
        })
    }

    fn closure(&self, set: &mut Vec<u32>) {
        let mut i = 0;
        while i < set.len() {
            for e in &self.edges[set[i] as usize] {
                if let Edge::Epsilon { target } = *e {
                    if !set.contains(&target) {
                        set.push(target);
                    }
                }
            }
            i += 1;
        }
        set.sort_unstable();
    }

    /// Whether the symbol sequence leads from the initial state to a final state.
    pub fn accepts(&self, input: &[Sym]) -> bool {
        let mut cur = vec![self.initial];
        self.closure(&mut cur);
        for sym in input {
            let mut next = Vec::new();
            for &s in &cur {
                for e in &self.edges[s as usize] {
                    let hit = match (*e, *sym) {
                        (Edge::Terminal { lo, hi, .. }, Sym::Byte(b)) => lo <= b && b <= hi,
                        (Edge::Rule { rule, .. }, Sym::Rule(r)) => rule == r,
                        _ => false,
                    };
                    if hit && !next.contains(&e.target()) {
                        next.push(e.target());
                    }
                }
            }
            self.closure(&mut next);
            if next.is_empty() {
                return false;
            }
            cur = next;
        }
        cur.iter().any(|&s| self.is_final(s))
    }
}

impl Default for Fsm {
    fn default() -> Self {
        Self::new()
    }
}

/// Thompson-style construction with a single final state. Rule references are
/// resolved to indices through `resolve`.
pub fn build_fsm(body: &RuleExpr, resolve: &dyn Fn(&str) -> u32) -> Fsm {
    let mut f = Fsm::new();
    let end = build_from(&mut f, body, 0, resolve);
    f.finals[end as usize] = true;
    f
}

fn build_from(f: &mut Fsm, e: &RuleExpr, from: u32, resolve: &dyn Fn(&str) -> u32) -> u32 {
    match e {
        RuleExpr::Empty => from,
        RuleExpr::Bytes(bs) => bs.iter().fold(from, |cur, &b| {
            let t = f.add_state();
            f.add_edge(cur, Edge::Terminal { lo: b, hi: b, target: t });
            t
        }),
        RuleExpr::Class { .. } => {
            let t = f.add_state();
            for (lo, hi) in class_ranges(e) {
                f.add_edge(from, Edge::Terminal { lo, hi, target: t });
            }
            t
        }
        RuleExpr::Seq(xs) => xs.iter().fold(from, |cur, x| build_from(f, x, cur, resolve)),
        RuleExpr::Choice(xs) => {
            let end = f.add_state();
            for x in xs {
                let s = f.add_state();
                f.add_edge(from, Edge::Epsilon { target: s });
                let t = build_from(f, x, s, resolve);
                f.add_edge(t, Edge::Epsilon { target: end });
            }
            end
        }
        RuleExpr::Ref(name) => {
            let t = f.add_state();
            f.add_edge(
                from,
                Edge::Rule {
                    rule: resolve(name),
                    target: t,
                },
            );
            t
        }
        RuleExpr::Repeat { body, min, max } | RuleExpr::RepeatTail { body, min, max, .. } => {
            let mut cur = from;
            for _ in 0..*min {
                cur = build_from(f, body, cur, resolve);
            }
            match max {
                None => {
                    let lp = f.add_state();
                    f.add_edge(cur, Edge::Epsilon { target: lp });
                    let s = f.add_state();
                    f.add_edge(lp, Edge::Epsilon { target: s });
                    let t = build_from(f, body, s, resolve);
                    f.add_edge(t, Edge::Epsilon { target: lp });
                    lp
                }
                Some(max) => {
                    let end = f.add_state();
                    for _ in *min..*max {
                        f.add_edge(cur, Edge::Epsilon { target: end });
                        let s = f.add_state();
                        f.add_edge(cur, Edge::Epsilon { target: s });
                        cur = build_from(f, body, s, resolve);
                    }
                    f.add_edge(cur, Edge::Epsilon { target: end });
                    end
                }
            }
        }
        RuleExpr::TagDispatch(_) => unreachable!("TagDispatch is compiled by the dispatch module"),
    }
}

/// Subset construction over bytes and rule labels. Returns the input unchanged
/// with `false` when more than `cap` states would be needed.
pub fn determinize(f: &Fsm, cap: usize) -> (Fsm, bool) {
    let mut start = vec![f.initial];
    f.closure(&mut start);
    let mut ids: HashMap<Vec<u32>, u32> = HashMap::from([(start.clone(), 0)]);
    let mut subsets = vec![start];
    let mut out = Fsm::new();
    let mut i = 0;
    while i < subsets.len() {
        let set = subsets[i].clone();
        out.finals[i] = set.iter().any(|&s| f.is_final(s));
        let mut terms: Vec<(u8, u8, u32)> = Vec::new();
        let mut rules: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
        for &s in &set {
            for e in &f.edges[s as usize] {
                match *e {
                    Edge::Terminal { lo, hi, target } => terms.push((lo, hi, target)),
                    Edge::Rule { rule, target } => rules.entry(rule).or_default().push(target),
                    Edge::Epsilon { .. } => {}
                }
            }
        }
        let mut new_edges: Vec<Edge> = Vec::new();
        let mut intern = |mut t: Vec<u32>, subsets: &mut Vec<Vec<u32>>, out: &mut Fsm| -> u32 {
            f.closure(&mut t);
            t.dedup();
            *ids.entry(t.clone()).or_insert_with(|| {
                subsets.push(t);
                out.add_state()
            })
        };
        let mut points: Vec<u16> = terms
            .iter()
            .flat_map(|&(lo, hi, _)| [lo as u16, hi as u16 + 1])
            .collect();
        points.sort_unstable();
        points.dedup();
        for w in points.windows(2) {
            let (a, b) = (w[0], w[1] - 1);
            let targets: Vec<u32> = terms
                .iter()
                .filter(|&&(lo, hi, _)| lo as u16 <= a && b <= hi as u16)
                .map(|&(_, _, t)| t)
                .collect();
            if targets.is_empty() {
                continue;
            }
            let t = intern(targets, &mut subsets, &mut out);
            match new_edges.last_mut() {
                Some(Edge::Terminal { hi, target, .. }) if *target == t && *hi as u16 + 1 == a => *hi = b as u8,
                _ => new_edges.push(Edge::Terminal {
                    lo: a as u8,
                    hi: b as u8,
                    target: t,
                }),
            }
        }
        for (rule, targets) in rules {
            let t = intern(targets, &mut subsets, &mut out);
            new_edges.push(Edge::Rule { rule, target: t });
        }
        out.edges[i] = new_edges;
        if subsets.len() > cap {
            return (f.clone(), false);
        }
        i += 1;
    }
    (out, true)
}

/// Merges equivalent states of a deterministic FSM (partition refinement).
/// Unreachable states are dropped; the result is not canonically numbered.
pub fn minimize(f: &Fsm) -> Fsm {
    debug_assert!(!f.has_epsilon());
    let n = f.num_states();
    let mut class: Vec<u32> = f.finals.iter().map(|&b| b as u32).collect();
    type Sig = (u32, Vec<(u8, u8, u32)>, Vec<(u32, u32)>);
    let signature = |s: usize, class: &[u32]| -> Sig {
        let mut terms: Vec<(u8, u8, u32)> = Vec::new();
        let mut rules = Vec::new();
        let mut es: Vec<(u8, u8, u32)> = Vec::new();
        for e in &f.edges[s] {
            match *e {
                Edge::Terminal { lo, hi, target } => es.push((lo, hi, class[target as usize])),
                Edge::Rule { rule, target } => rules.push((rule, class[target as usize])),
                Edge::Epsilon { .. } => {}
            }
        }
        es.sort_unstable();
        for (lo, hi, c) in es {
            match terms.last_mut() {
                Some((_, h, tc)) if *tc == c && *h as u16 + 1 == lo as u16 => *h = hi,
                _ => terms.push((lo, hi, c)),
            }
        }
        rules.sort_unstable();
        (class[s], terms, rules)
    };
    let mut count = class.iter().copied().collect::<std::collections::HashSet<_>>().len();
    loop {
        let mut ids: HashMap<Sig, u32> = HashMap::new();
        let next: Vec<u32> = (0..n)
            .map(|s| {
                let sig = signature(s, &class);
                let k = ids.len() as u32;
                *ids.entry(sig).or_insert(k)
            })
            .collect();
        class = next;
        if ids.len() == count {
            break;
        }
        count = ids.len();
    }
    let mut out = Fsm {
        initial: class[f.initial as usize],
        finals: vec![false; count],
        edges: vec![Vec::new(); count],
    };
    let mut done = vec![false; count];
    for s in 0..n {
        let c = class[s] as usize;
        if done[c] {
            continue;
        }
        done[c] = true;
        out.finals[c] = f.finals[s];
        let (_, terms, rules) = signature(s, &class);
        out.edges[c] = terms
            .into_iter()
            .map(|(lo, hi, target)| Edge::Terminal { lo, hi, target })
            .chain(rules.into_iter().map(|(rule, target)| Edge::Rule { rule, target }))
            .collect();
    }
    out
}

/// Outgoing edges of `s` in Algorithm 1 order: terminals by (range, target),
/// rule references by (referenced hash, target), then epsilons by target.
fn sorted_edges(f: &Fsm, s: u32, rule_hash: &dyn Fn(u32) -> u64) -> Vec<Edge> {
    let key = |e: &Edge| match *e {
        Edge::Terminal { lo, hi, target } => (0u8, lo as u64, hi as u64, target),
        Edge::Rule { rule, target } => (1, rule_hash(rule), 0, target),
        Edge::Epsilon { target } => (2, 0, 0, target),
    };
    let mut es = f.edges[s as usize].clone();
    es.sort_by_key(key);
    es
}

/// BFS from the initial state over sorted edges: the numbering used by the hash.
fn bfs_order(f: &Fsm, rule_hash: &dyn Fn(u32) -> u64) -> (Vec<u32>, Vec<Option<u32>>) {
    let mut ids: Vec<Option<u32>> = vec![None; f.num_states()];
    let mut order = vec![f.initial];
    ids[f.initial as usize] = Some(0);
    let mut q = VecDeque::from([f.initial]);
    while let Some(s) = q.pop_front() {
        for e in sorted_edges(f, s, rule_hash) {
            let t = e.target();
            if ids[t as usize].is_none() {
                ids[t as usize] = Some(order.len() as u32);
                order.push(t);
                q.push_back(t);
            }
        }
    }
    (order, ids)
}

/// Renumbers states in BFS order, drops unreachable states and sorts each edge list.
pub fn canonicalize(f: &Fsm, rule_hash: &dyn Fn(u32) -> u64) -> Fsm {
    let (order, ids) = bfs_order(f, rule_hash);
    let mut out = Fsm {
        initial: 0,
        finals: order.iter().map(|&s| f.is_final(s)).collect(),
        edges: Vec::with_capacity(order.len()),
    };
    for &s in &order {
        out.edges.push(
            sorted_edges(f, s, rule_hash)
                .into_iter()
                .map(|e| e.with_target(ids[e.target() as usize].unwrap()))
                .collect(),
        );
    }
    out
}

/// Algorithm 1 over `f`, with referenced rule hashes taken from `env`.
pub fn hash_fsm(f: &Fsm, env: &dyn Fn(u32) -> Option<u64>) -> Result<u64, FsmError> {
    if let Some(r) = f.referenced_rules().find(|&r| env(r).is_none()) {
        return Err(FsmError::UnhashedReference(r));
    }
    let rh = |r: u32| env(r).unwrap();
    let (order, ids) = bfs_order(f, &rh);
    let mut h = 0u64;
    for &s in &order {
        h = hash_combine(h, f.is_final(s) as u64);
        h = hash_combine(hash_combine(h, SENTINEL_K), SENTINEL_K);
        for e in sorted_edges(f, s, &rh) {
            h = match e {
                Edge::Terminal { lo, hi, .. } => hash_combine(hash_combine(h, lo as u64), hi as u64),
                Edge::Rule { rule, .. } => hash_combine(hash_combine(h, SENTINEL_K), rh(rule)),
                Edge::Epsilon { .. } => hash_combine(hash_combine(h, SENTINEL_K), SENTINEL_K),
            };
            h = hash_combine(h, ids[e.target() as usize].unwrap() as u64);
        }
    }
    Ok(h)
}

/// Algorithm 2: `out[i]` folds `local` rotated to start at `i`.
pub fn hash_cycle(local: &[u64]) -> Vec<u64> {
    let n = local.len();
    (0..n)
        .map(|i| (0..n).fold(0u64, |h, j| hash_combine(h, local[(i + j) % n])))
        .collect()
}

static UNIQUE: AtomicU64 = AtomicU64::new(1);

/// A hash value that is never produced twice in this process.
pub fn fresh_unique_hash() -> u64 {
    let n = UNIQUE.fetch_add(1, Ordering::Relaxed);
    hash_combine(fnv1a(b"unique"), n) | 1
}

/// How a rule's hash was obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum HashKind {
    Acyclic,
    SimpleCycle,
    Unique,
}

/// Hashes of one rule: `key` identifies the rule's own FSM (cache keys),
/// `reference` is what referencing rules see.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleHash {
    pub key: u64,
    pub reference: u64,
    pub kind: HashKind,
}

/// Hashes every rule FSM: acyclic rules bottom-up, simple cycles through the
/// sentinel and [`hash_cycle`], other strongly connected components uniquely.
/// `marks[r]` is mixed into rule `r`'s Algorithm 1 result to form its key;
/// `ref_marks[r]` is additionally mixed in to form its reference hash.
pub fn hash_grammar(fsms: &[Fsm], marks: &[Option<u64>], ref_marks: &[Option<u64>]) -> Vec<RuleHash> {
    let n = fsms.len();
    let succ: Vec<Vec<u32>> = fsms.iter().map(|f| f.referenced_rules().collect()).collect();
    let mut out: Vec<Option<RuleHash>> = vec![None; n];
    let mix = |h: u64, m: Option<u64>| match m {
        Some(m) => hash_combine(h, m),
        None => h,
    };
    for members in tarjan(&succ) {
        let in_scc = |r: u32| members.contains(&r);
        let cyclic = members.len() > 1 || succ[members[0] as usize].contains(&members[0]);
        if !cyclic {
            let r = members[0] as usize;
            let h = hash_fsm(&fsms[r], &|x| out[x as usize].map(|h| h.reference)).expect("dependencies hashed first");
            let key = mix(h, marks[r]);
            out[r] = Some(RuleHash {
                key,
                reference: mix(key, ref_marks[r]),
                kind: HashKind::Acyclic,
            });
            continue;
        }
        let simple = members
            .iter()
            .all(|&m| succ[m as usize].iter().filter(|&&x| in_scc(x)).count() == 1);
        if !simple {
            for &m in &members {
                let h = fresh_unique_hash();
                out[m as usize] = Some(RuleHash {
                    key: h,
                    reference: h,
                    kind: HashKind::Unique,
                });
            }
            continue;
        }
        let mut cycle = vec![members[0]];
        loop {
            let last = *cycle.last().unwrap();
            let next = *succ[last as usize].iter().find(|&&x| in_scc(x)).unwrap();
            if next == cycle[0] {
                break;
            }
            cycle.push(next);
        }
        let local: Vec<u64> = cycle
            .iter()
            .map(|&m| {
                let env = |x: u32| {
                    if in_scc(x) {
                        Some(CYCLE_SENTINEL)
                    } else {
                        out[x as usize].map(|h| h.reference)
                    }
                };
                let h = hash_fsm(&fsms[m as usize], &env).expect("dependencies hashed first");
                mix(mix(h, marks[m as usize]), ref_marks[m as usize])
            })
            .collect();
        for (&m, h) in cycle.iter().zip(hash_cycle(&local)) {
            out[m as usize] = Some(RuleHash {
                key: h,
                reference: h,
                kind: HashKind::SimpleCycle,
            });
        }
    }
    out.into_iter().map(Option::unwrap).collect()
}

/// Strongly connected components, dependencies before dependents.
fn tarjan(succ: &[Vec<u32>]) -> Vec<Vec<u32>> {
    struct St<'a> {
        succ: &'a [Vec<u32>],
        index: Vec<Option<u32>>,
        low: Vec<u32>,
        on_stack: Vec<bool>,
        stack: Vec<u32>,
        next: u32,
        out: Vec<Vec<u32>>,
    }
    // Iterative to stay safe on deep rule chains.
    let n = succ.len();
    let mut st = St {
        succ,
        index: vec![None; n],
        low: vec![0; n],
        on_stack: vec![false; n],
        stack: Vec::new(),
        next: 0,
        out: Vec::new(),
    };
    for root in 0..n as u32 {
        if st.index[root as usize].is_some() {
            continue;
        }
        let mut call: Vec<(u32, usize)> = vec![(root, 0)];
        st.index[root as usize] = Some(st.next);
        st.low[root as usize] = st.next;
        st.next += 1;
        st.stack.push(root);
        st.on_stack[root as usize] = true;
        while let Some(&mut (v, ref mut i)) = call.last_mut() {
            if let Some(&w) = st.succ[v as usize].get(*i) {
                *i += 1;
                match st.index[w as usize] {
                    None => {
                        st.index[w as usize] = Some(st.next);
                        st.low[w as usize] = st.next;
                        st.next += 1;
                        st.stack.push(w);
                        st.on_stack[w as usize] = true;
                        call.push((w, 0));
                    }
                    Some(wi) if st.on_stack[w as usize] => {
                        st.low[v as usize] = st.low[v as usize].min(wi);
                    }
                    _ => {}
                }
                continue;
            }
            call.pop();
            if let Some(&(u, _)) = call.last() {
                st.low[u as usize] = st.low[u as usize].min(st.low[v as usize]);
            }
            if Some(st.low[v as usize]) == st.index[v as usize] {
                let mut comp = Vec::new();
                loop {
                    let w = st.stack.pop().unwrap();
                    st.on_stack[w as usize] = false;
                    comp.push(w);
                    if w == v {
                        break;
                    }
                }
                comp.sort_unstable();
                st.out.push(comp);
            }
        }
    }
    st.out
}

/// Structural equality of the canonical forms, comparing referenced rules by hash.
pub fn isomorphic(a: &Fsm, b: &Fsm, ha: &dyn Fn(u32) -> u64, hb: &dyn Fn(u32) -> u64) -> bool {
    let ca = canonicalize(a, ha);
    let cb = canonicalize(b, hb);
    if ca.finals != cb.finals {
        return false;
    }
    ca.edges.iter().zip(&cb.edges).all(|(ea, eb)| {
        ea.len() == eb.len()
            && ea.iter().zip(eb).all(|(x, y)| match (*x, *y) {
                (Edge::Rule { rule: r1, target: t1 }, Edge::Rule { rule: r2, target: t2 }) => {
                    t1 == t2 && ha(r1) == hb(r2)
                }
                _ => x == y,
            })
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::parse_ebnf;

    fn expr(src: &str) -> RuleExpr {
        parse_ebnf(&format!("root ::= {src}")).unwrap().root_expr().clone()
    }

    fn no_refs(_: &str) -> u32 {
        unreachable!()
    }

    fn bytes(s: &str) -> Vec<Sym> {
        s.bytes().map(Sym::Byte).collect()
    }

    fn dfa(src: &str) -> Fsm {
        let (d, ok) = determinize(&build_fsm(&expr(src), &no_refs), DEFAULT_STATE_CAP);
        assert!(ok);
        d
    }

    fn env0(_: u32) -> Option<u64> {
        None
    }

    #[test]
    fn minimize_merges_equivalent_suffixes() {
        let d = dfa("\"ax\" | \"bx\" | \"cy\"");
        let m = minimize(&d);
        assert!(m.num_states() < d.num_states());
        assert_eq!(m.num_states(), 4);
        for w in ["ax", "bx", "cy", "ay", "a", "", "cyx"] {
            assert_eq!(m.accepts(&bytes(w)), d.accepts(&bytes(w)), "{w}");
        }
        assert_eq!(minimize(&m).num_states(), m.num_states());
    }

    #[test]
    fn literal_chain() {
        let f = build_fsm(&expr("\"ab\""), &no_refs);
        assert_eq!(f.num_states(), 3);
        assert_eq!(f.edge_count(), 2);
    }

    #[test]
    fn class_is_one_edge() {
        let f = build_fsm(&expr("[a-c]"), &no_refs);
        assert_eq!(f.num_states(), 2);
        assert_eq!(f.edges[0], vec![Edge::Terminal { lo: b'a', hi: b'c', target: 1 }]);
    }

    #[test]
    fn choice_nfa_accepts_both_paths() {
        let f = build_fsm(&expr("\"a\" | \"a\" \"b\""), &no_refs);
        assert!(f.accepts(&bytes("a")) && f.accepts(&bytes("ab")));
        assert!(!f.accepts(&bytes("b")));
        assert!(!f.is_deterministic());
    }

    #[test]
    fn subset_construction_of_a_or_ab() {
        let d = dfa("\"a\" | \"ab\"");
        assert!(d.is_deterministic());
        assert_eq!(d.num_states(), 3);
        assert!(!d.finals[0] && d.finals[1] && d.finals[2]);
        assert_eq!(d.edges[0], vec![Edge::Terminal { lo: b'a', hi: b'a', target: 1 }]);
        assert_eq!(d.edges[1], vec![Edge::Terminal { lo: b'b', hi: b'b', target: 2 }]);
    }

    #[test]
    fn deterministic_input_is_a_fixpoint() {
        let d = dfa("\"ab\"");
        let (d2, _) = determinize(&d, DEFAULT_STATE_CAP);
        assert_eq!(d, d2);
    }

    #[test]
    fn rule_only_fsm_unchanged() {
        let mut f = Fsm::new();
        let t = f.add_state();
        f.add_edge(0, Edge::Rule { rule: 3, target: t });
        f.finals[1] = true;
        assert_eq!(determinize(&f, DEFAULT_STATE_CAP).0, f);
    }

    #[test]
    fn blowup_returns_original() {
        let f = build_fsm(&expr("[ab]* \"a\" [ab] [ab] [ab] [ab] [ab]"), &no_refs);
        let (g, ok) = determinize(&f, 16);
        assert!(!ok);
        assert_eq!(g, f);
        assert!(determinize(&f, DEFAULT_STATE_CAP).1);
    }

    #[test]
    fn overlapping_ranges_are_split() {
        let d = dfa("[a-m] \"x\" | [h-z] \"y\"");
        assert!(d.is_deterministic());
        for s in ["ax", "hx", "hy", "zy"] {
            assert!(d.accepts(&bytes(s)), "{s}");
        }
        assert!(!d.accepts(&bytes("ay")) && !d.accepts(&bytes("zx")));
    }

    #[test]
    fn permuted_numbering_same_hash() {
        let a = dfa("\"ab\"");
        let mut b = Fsm::new();
        let (s1, s2) = (b.add_state(), b.add_state());
        // initial 0 -a-> 2 -b-> 1
        b.add_edge(0, Edge::Terminal { lo: b'a', hi: b'a', target: s2 });
        b.add_edge(s2, Edge::Terminal { lo: b'b', hi: b'b', target: s1 });
        b.finals[s1 as usize] = true;
        assert_eq!(hash_fsm(&a, &env0).unwrap(), hash_fsm(&b, &env0).unwrap());
        assert_ne!(hash_fsm(&a, &env0).unwrap(), hash_fsm(&dfa("\"ac\""), &env0).unwrap());
    }

    #[test]
    fn rule_references_distinguish_hashes() {
        let f = build_fsm(&RuleExpr::rule("x"), &|_| 0);
        let g = build_fsm(&RuleExpr::rule("y"), &|_| 1);
        let env = |r: u32| Some([11u64, 22][r as usize]);
        assert_ne!(hash_fsm(&f, &env).unwrap(), hash_fsm(&g, &env).unwrap());
        assert_eq!(hash_fsm(&f, &env0), Err(FsmError::UnhashedReference(0)));
    }

    #[test]
    fn cycle_folds() {
        assert_eq!(hash_cycle(&[5]), vec![hash_combine(0, 5)]);
        let out = hash_cycle(&[5, 9]);
        assert_ne!(out[0], out[1]);
        let rot = hash_cycle(&[9, 5]);
        assert_eq!(rot, vec![out[1], out[0]]);
    }

    fn grammar_fsms(src: &str) -> (Vec<String>, Vec<Fsm>) {
        let g = parse_ebnf(src).unwrap();
        let idx = g.index();
        let names = g.rules().iter().map(|(n, _)| n.clone()).collect();
        let fsms = g
            .rules()
            .iter()
            .map(|(_, e)| determinize(&build_fsm(e, &|r| idx[r] as u32), DEFAULT_STATE_CAP).0)
            .collect();
        (names, fsms)
    }

    #[test]
    fn hashing_grammars() {
        let (_, fsms) = grammar_fsms("root ::= \"a\" sub\nsub ::= \"b\"");
        let hs = hash_grammar(&fsms, &[None; 2], &[None; 2]);
        assert_eq!(hs[0].kind, HashKind::Acyclic);
        let env = |r: u32| Some(hs[r as usize].reference);
        assert_eq!(hs[0].key, hash_fsm(&fsms[0], &env).unwrap());

        let (_, fsms) = grammar_fsms("root ::= A\nA ::= \"a\" B?\nB ::= \"b\" A?");
        let hs = hash_grammar(&fsms, &[None; 3], &[None; 3]);
        assert_eq!(hs[1].kind, HashKind::SimpleCycle);
        assert_eq!(hs[2].kind, HashKind::SimpleCycle);
        assert_ne!(hs[1].key, hs[2].key);

        let (_, fsms) = grammar_fsms("root ::= x y\nx ::= \"x\" [0-9]\ny ::= \"x\" [0-9]");
        let hs = hash_grammar(&fsms, &[None; 3], &[None; 3]);
        assert_eq!(hs[1].key, hs[2].key);

        let (_, fsms) = grammar_fsms("root ::= A\nA ::= \"a\" A B | \"c\"\nB ::= \"b\" A");
        let hs = hash_grammar(&fsms, &[None; 3], &[None; 3]);
        assert_eq!(hs[1].kind, HashKind::Unique);
        let (_, again) = grammar_fsms("root ::= A\nA ::= \"a\" A B | \"c\"\nB ::= \"b\" A");
        assert_ne!(hash_grammar(&again, &[None; 3], &[None; 3])[1].key, hs[1].key);
    }

    #[test]
    fn canonical_form_is_bfs_numbered() {
        let d = dfa("\"x\" (\"a\" | \"bc\")");
        let c = canonicalize(&d, &|_| 0);
        assert_eq!(canonicalize(&c, &|_| 0), c);
        assert!(isomorphic(&d, &c, &|_| 0, &|_| 0));
        assert!(!isomorphic(&d, &dfa("\"x\" (\"a\" | \"bd\")"), &|_| 0, &|_| 0));
    }
}
