//! TagDispatch: Aho-Corasick tag matching and the AC to EBNF expansion.

use std::collections::{HashSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::DispatchError;
use crate::grammar::{ranges_of, Grammar, RuleExpr};

/// Tag/grammar pairs plus stop strings of a `TagDispatch(...)` root.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TagDispatchSpec {
    pub pairs: Vec<(Vec<u8>, String)>,
    pub stop_strs: Vec<Vec<u8>>,
    pub loop_after_dispatch: bool,
}

impl TagDispatchSpec {
    pub fn new(pairs: Vec<(&str, &str)>, stop_strs: Vec<&str>) -> Self {
        TagDispatchSpec {
            pairs: pairs
                .into_iter()
                .map(|(t, g)| (t.as_bytes().to_vec(), g.to_string()))
                .collect(),
            stop_strs: stop_strs.into_iter().map(|s| s.as_bytes().to_vec()).collect(),
            loop_after_dispatch: true,
        }
    }

    pub fn validate(&self) -> Result<(), DispatchError> {
        let mut seen = HashSet::new();
        for s in self.pairs.iter().map(|(t, _)| t).chain(&self.stop_strs) {
            if s.is_empty() {
                return Err(DispatchError::EmptyTag);
            }
            if !seen.insert(s) {
                return Err(DispatchError::DuplicateTag(String::from_utf8_lossy(s).into_owned()));
            }
        }
        Ok(())
    }

    /// Tags followed by stop strings; AC pattern ids index into this list.
    pub fn patterns(&self) -> Vec<Vec<u8>> {
        self.pairs
            .iter()
            .map(|(t, _)| t.clone())
            .chain(self.stop_strs.iter().cloned())
            .collect()
    }

    pub fn automaton(&self) -> Result<AcAutomaton, DispatchError> {
        self.validate()?;
        AcAutomaton::new(&self.patterns())
    }
}

/// Aho-Corasick automaton with BFS node numbering and a full transition table.
#[derive(Clone, Debug)]
pub struct AcAutomaton {
    patterns: Vec<Vec<u8>>,
    goto: Vec<Vec<(u8, u32)>>,
    fail: Vec<u32>,
    depth: Vec<u32>,
    /// Pattern ids ending at each node, longest first.
    outputs: Vec<Vec<u32>>,
    delta: Vec<u32>,
}

pub const AC_ROOT: u32 = 0;

impl AcAutomaton {
    pub fn new<S: AsRef<[u8]>>(patterns: &[S]) -> Result<Self, DispatchError> {
        let mut seen = HashSet::new();
        for p in patterns {
            let p = p.as_ref();
            if p.is_empty() {
                return Err(DispatchError::EmptyTag);
            }
            if !seen.insert(p) {
                return Err(DispatchError::DuplicateTag(String::from_utf8_lossy(p).into_owned()));
            }
        }
        // Trie in insertion order; renumbered breadth-first below.
        let mut trie: Vec<Vec<(u8, usize)>> = vec![Vec::new()];
        let mut term: Vec<Option<u32>> = vec![None];
        for (id, p) in patterns.iter().enumerate() {
            let mut n = 0;
            for &b in p.as_ref() {
                n = match trie[n].iter().find(|(c, _)| *c == b) {
                    Some(&(_, m)) => m,
                    None => {
                        trie.push(Vec::new());
                        term.push(None);
                        let m = trie.len() - 1;
                        trie[n].push((b, m));
                        m
                    }
                };
            }
            term[n] = Some(id as u32);
        }
        let mut order = vec![0usize];
        let mut new_id = vec![0u32; trie.len()];
        let mut i = 0;
        while i < order.len() {
            let n = order[i];
            let mut kids = trie[n].clone();
            kids.sort();
            for (_, m) in kids {
                new_id[m] = order.len() as u32;
                order.push(m);
            }
            i += 1;
        }
        let count = order.len();
        let mut goto = vec![Vec::new(); count];
        let mut own = vec![None; count];
        let mut depth = vec![0u32; count];
        for (new, &old) in order.iter().enumerate() {
            let mut kids: Vec<(u8, u32)> = trie[old].iter().map(|&(b, m)| (b, new_id[m])).collect();
            kids.sort();
            for &(_, m) in &kids {
                depth[m as usize] = depth[new] + 1;
            }
            goto[new] = kids;
            own[new] = term[old];
        }
        let mut fail = vec![AC_ROOT; count];
        let mut delta = vec![AC_ROOT; count * 256];
        let mut outputs: Vec<Vec<u32>> = vec![Vec::new(); count];
        let mut queue = VecDeque::from([AC_ROOT]);
        while let Some(n) = queue.pop_front() {
            let n = n as usize;
            let mut out: Vec<u32> = own[n].into_iter().collect();
            if n != 0 {
                out.extend(outputs[fail[n] as usize].iter().copied());
            }
            outputs[n] = out;
            for b in 0..256usize {
                delta[n * 256 + b] = if n == 0 { AC_ROOT } else { delta[fail[n] as usize * 256 + b] };
            }
            for &(b, m) in &goto[n] {
                fail[m as usize] = if n == 0 { AC_ROOT } else { delta[fail[n] as usize * 256 + b as usize] };
                delta[n * 256 + b as usize] = m;
                queue.push_back(m);
            }
        }
        Ok(AcAutomaton {
            patterns: patterns.iter().map(|p| p.as_ref().to_vec()).collect(),
            goto,
            fail,
            depth,
            outputs,
            delta,
        })
    }

    pub fn nodes(&self) -> usize {
        self.goto.len()
    }

    pub fn patterns(&self) -> &[Vec<u8>] {
        &self.patterns
    }

    pub fn goto_edges(&self, n: u32) -> &[(u8, u32)] {
        &self.goto[n as usize]
    }

    pub fn fail(&self, n: u32) -> u32 {
        self.fail[n as usize]
    }

    pub fn depth(&self, n: u32) -> u32 {
        self.depth[n as usize]
    }

    pub fn outputs(&self, n: u32) -> &[u32] {
        &self.outputs[n as usize]
    }

    #[inline]
    pub fn next(&self, n: u32, b: u8) -> u32 {
        self.delta[n as usize * 256 + b as usize]
    }

    /// Feeds one byte; returns the new node and the patterns ending there, longest first.
    pub fn feed(&self, n: u32, b: u8) -> (u32, &[u32]) {
        let m = self.next(n, b);
        (m, self.outputs(m))
    }

    pub fn goto_count(&self) -> usize {
        self.goto.iter().map(Vec::len).sum()
    }
}

/// Size metrics of the AC automaton and of its EBNF expansion.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AcStats {
    pub states: usize,
    /// Goto edges plus one failure link per non-root node.
    pub transitions: usize,
    /// Number of expression nodes across all rules of the expansion.
    pub ebnf_size: usize,
    /// Length of the printed EBNF text.
    pub ebnf_bytes: usize,
}

/// Rules recognizing text that ends at the first occurrence of any pattern of `a`.
/// Rule `{prefix}{n}` corresponds to node `n`; returns the rules and the root name.
pub fn ac_rules(a: &AcAutomaton, prefix: &str) -> (Vec<(String, RuleExpr)>, String) {
    let name = |n: u32| format!("{prefix}{n}");
    let mut rules = Vec::with_capacity(a.nodes());
    for n in 0..a.nodes() as u32 {
        if !a.outputs(n).is_empty() {
            rules.push((name(n), RuleExpr::Empty));
            continue;
        }
        let mut targets: Vec<u32> = Vec::new();
        let mut sets: Vec<[bool; 256]> = Vec::new();
        for b in 0..=255u8 {
            let m = a.next(n, b);
            let i = match targets.iter().position(|&t| t == m) {
                Some(i) => i,
                None => {
                    targets.push(m);
                    sets.push([false; 256]);
                    targets.len() - 1
                }
            };
            sets[i][b as usize] = true;
        }
        let alts = targets
            .iter()
            .zip(&sets)
            .map(|(&t, set)| RuleExpr::Seq(vec![byte_set_expr(set), RuleExpr::Ref(name(t))]))
            .collect();
        rules.push((name(n), RuleExpr::choice(alts)));
    }
    (rules, name(AC_ROOT))
}

fn byte_set_expr(set: &[bool; 256]) -> RuleExpr {
    let ranges = ranges_of(set);
    if let [(lo, hi)] = ranges[..] {
        if lo == hi {
            return RuleExpr::Bytes(vec![lo]);
        }
    }
    let mut inverse = [false; 256];
    for (i, v) in set.iter().enumerate() {
        inverse[i] = !v;
    }
    let inv = ranges_of(&inverse);
    if inv.len() < ranges.len() {
        RuleExpr::Class {
            ranges: inv,
            negated: true,
        }
    } else {
        RuleExpr::Class { ranges, negated: false }
    }
}

/// The EBNF expansion of an AC automaton with its size metrics.
pub fn ac_to_ebnf(a: &AcAutomaton) -> (Grammar, AcStats) {
    let (rules, root) = ac_rules(a, "ac");
    let g = Grammar::new_unchecked(rules, &root);
    let ebnf_size = g.rules().iter().map(|(_, e)| e.node_count()).sum();
    let stats = AcStats {
        states: a.nodes(),
        transitions: a.goto_count() + a.nodes() - 1,
        ebnf_size,
        ebnf_bytes: g.to_string().len(),
    };
    (g, stats)
}

/// Distinct random tags `<name>` whose lengths sum to exactly `total_len`
/// (at least 3 bytes per tag).
pub fn gen_tags(total_len: usize, seed: u64) -> Vec<String> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    let mut left = total_len;
    while left >= 3 {
        let mut n = rng.gen_range(6..=14).min(left);
        if left - n < 3 {
            n = left;
        }
        let body: String = (0..n - 2).map(|_| rng.gen_range(b'a'..=b'z') as char).collect();
        let tag = format!("<{body}>");
        if seen.insert(tag.clone()) {
            left -= n;
            out.push(tag);
        }
    }
    out
}

/// Rules for "any text up to and including the first `stop`".
pub fn text_until_rules(stop: &[u8], prefix: &str) -> (Vec<(String, RuleExpr)>, String) {
    let a = AcAutomaton::new(&[stop]).expect("non-empty stop string");
    ac_rules(&a, prefix)
}
