//! Adaptive token mask cache.
//!
//! Each scannable FSM state gets an entry that splits the vocabulary into
//! accepted, rejected and uncertain tokens by simulating every token against
//! the state's rule alone. Entries live in a pool keyed by the rule's
//! structural hash, so grammars sharing a rule body share entries. At runtime
//! the accepted sets are unioned and uncertain tokens are checked by trial
//! advance and rollback on the full parser.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};

use crate::compile::{CompiledGrammar, Lookahead, RuleKind};
use crate::earley::Parser;
use crate::error::CacheError;
use crate::matcher::{Matcher, Mode};
use crate::vocab::{TokenId, TokenMask, Vocabulary};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CacheKey {
    pub fsm_hash: u64,
    pub dot: u32,
    /// The state belongs to a compressed repetition tail.
    pub rep_phase: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskCacheEntry {
    pub accepted: TokenMask,
    /// Uncertain tokens other than EOS, in vocabulary byte order.
    pub uncertain: Vec<TokenId>,
    /// Tokens moved from uncertain to rejected by the lookahead.
    pub pruned: Vec<TokenId>,
    /// Offsets at which the rule completes inside each uncertain or pruned token.
    pub boundaries: HashMap<TokenId, Vec<u16>>,
    pub lookahead: u64,
    /// Accepted tokens, longest first (tail entries only).
    by_len: Vec<TokenId>,
}

impl MaskCacheEntry {
    fn empty(size: usize, lookahead: u64) -> Self {
        MaskCacheEntry {
            accepted: TokenMask::new(size, false),
            uncertain: Vec::new(),
            pruned: Vec::new(),
            boundaries: HashMap::new(),
            lookahead,
            by_len: Vec::new(),
        }
    }

    pub fn uncertain_mask(&self, vocab: &Vocabulary) -> TokenMask {
        let mut m = TokenMask::new(vocab.size(), false);
        for &t in &self.uncertain {
            m.insert(t as usize);
        }
        if vocab.size() > 0 {
            m.insert(vocab.eos() as usize);
        }
        m
    }

    pub fn rejected_mask(&self, vocab: &Vocabulary) -> TokenMask {
        let mut m = TokenMask::new(vocab.size(), true);
        m.subtract(&self.accepted);
        m.subtract(&self.uncertain_mask(vocab));
        m
    }

    /// Accepted, rejected and uncertain sets are disjoint, cover the
    /// vocabulary, and EOS is never accepted.
    pub fn is_partition(&self, vocab: &Vocabulary) -> bool {
        let u = self.uncertain_mask(vocab);
        let r = self.rejected_mask(vocab);
        let mut all = self.accepted.clone();
        all.union_with(&u);
        all.union_with(&r);
        !self.accepted.intersects(&u)
            && !self.accepted.intersects(&r)
            && !u.intersects(&r)
            && all.count() == vocab.size()
            && (vocab.size() == 0 || !self.accepted.get(vocab.eos() as usize))
    }
}

fn lcp(a: &[u8], b: &[u8]) -> usize {
    a.iter().zip(b).take_while(|(x, y)| x == y).count()
}

fn classify(la: &Lookahead, token: &[u8], bounds: &[u16]) -> bool {
    la.any || bounds.iter().any(|&i| la.admits(&token[i as usize..]))
}

/// Simulates every token from `dot` of `rule` with no outer context.
pub fn compute_entry(
    g: &CompiledGrammar,
    rule: u32,
    dot: u32,
    vocab: &Vocabulary,
) -> Result<MaskCacheEntry, CacheError> {
    let r = g.rule(rule);
    if !r.fsm.has_terminal(dot) {
        return Err(CacheError::NotScannable {
            rule: r.name.clone(),
            dot,
        });
    }
    let is_tail = matches!(r.kind, RuleKind::Tail { .. });
    let la = &r.lookahead;
    let mut e = MaskCacheEntry::empty(vocab.size(), la.hash);
    let mut p = Parser::seeded(g, rule, dot, is_tail);
    let mut path: Vec<u8> = Vec::new();
    for &id in vocab.sorted_ids() {
        let v = vocab.token(id);
        let keep = lcp(&path, v);
        path.truncate(keep);
        p.truncate(keep);
        while path.len() < v.len() && p.advance(v[path.len()]) {
            path.push(v[path.len()]);
        }
        let n = path.len();
        if n == v.len() {
            e.accepted.insert(id as usize);
            continue;
        }
        let bounds: Vec<u16> = (0..=n).filter(|&i| p.completed_at(i)).map(|i| i as u16).collect();
        if bounds.is_empty() {
            continue;
        }
        if classify(la, v, &bounds) {
            e.uncertain.push(id);
        } else {
            e.pruned.push(id);
        }
        e.boundaries.insert(id, bounds);
    }
    if is_tail {
        e.by_len = e.accepted.iter().map(|t| t as TokenId).collect();
        e.by_len.sort_by_key(|&t| std::cmp::Reverse(vocab.token(t).len()));
    }
    Ok(e)
}

/// Re-derives the lookahead-dependent part of `e` for lookahead `to`.
pub fn adapt_entry(e: &MaskCacheEntry, to: &Lookahead, vocab: &Vocabulary) -> MaskCacheEntry {
    if e.lookahead == to.hash {
        return e.clone();
    }
    let mut out = MaskCacheEntry {
        uncertain: Vec::new(),
        pruned: Vec::new(),
        lookahead: to.hash,
        ..e.clone()
    };
    let mut recheck: Vec<TokenId> = e.uncertain.iter().chain(&e.pruned).copied().collect();
    recheck.sort_by(|&a, &b| vocab.token(a).cmp(vocab.token(b)).then(a.cmp(&b)));
    for id in recheck {
        if classify(to, vocab.token(id), &e.boundaries[&id]) {
            out.uncertain.push(id);
        } else {
            out.pruned.push(id);
        }
    }
    out
}

#[derive(Clone, Debug)]
pub enum Lookup {
    PerfectHit(Arc<MaskCacheEntry>),
    PartialHit(Arc<MaskCacheEntry>),
    Miss,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolStats {
    pub keys: u64,
    pub entries: u64,
    pub perfect_hits: u64,
    pub partial_hits: u64,
    pub misses: u64,
    pub jit_deferred: u64,
}

impl PoolStats {
    pub fn lookups(&self) -> u64 {
        self.perfect_hits + self.partial_hits + self.misses
    }
}

/// Cross-grammar pool of cache entries for one vocabulary.
#[derive(Debug, Default)]
pub struct CachePool {
    map: RwLock<HashMap<CacheKey, Vec<Arc<MaskCacheEntry>>>>,
    perfect: AtomicU64,
    partial: AtomicU64,
    misses: AtomicU64,
    deferred: AtomicU64,
}

impl CachePool {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn lookup(&self, key: &CacheKey, lookahead: u64) -> Lookup {
        let map = self.map.read();
        let res = match map.get(key) {
            Some(es) => match es.iter().find(|e| e.lookahead == lookahead) {
                Some(e) => Lookup::PerfectHit(e.clone()),
                None => Lookup::PartialHit(es[0].clone()),
            },
            None => Lookup::Miss,
        };
        let counter = match res {
            Lookup::PerfectHit(_) => &self.perfect,
            Lookup::PartialHit(_) => &self.partial,
            Lookup::Miss => &self.misses,
        };
        counter.fetch_add(1, Ordering::Relaxed);
        res
    }

    /// Inserts or replaces the entry for (`key`, entry lookahead).
    pub fn insert(&self, key: CacheKey, entry: Arc<MaskCacheEntry>) {
        let mut map = self.map.write();
        let es = map.entry(key).or_default();
        match es.iter_mut().find(|e| e.lookahead == entry.lookahead) {
            Some(slot) => *slot = entry,
            None => es.push(entry),
        }
    }

    pub fn add_deferred(&self, n: u64) {
        self.deferred.fetch_add(n, Ordering::Relaxed);
    }

    pub fn stats(&self) -> PoolStats {
        let map = self.map.read();
        PoolStats {
            keys: map.len() as u64,
            entries: map.values().map(|v| v.len() as u64).sum(),
            perfect_hits: self.perfect.load(Ordering::Relaxed),
            partial_hits: self.partial.load(Ordering::Relaxed),
            misses: self.misses.load(Ordering::Relaxed),
            jit_deferred: self.deferred.load(Ordering::Relaxed),
        }
    }

    pub fn reset_stats(&self) {
        for c in [&self.perfect, &self.partial, &self.misses, &self.deferred] {
            c.store(0, Ordering::Relaxed);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct JitConfig {
    /// Entries precompiled eagerly when JIT is enabled.
    pub k: usize,
    /// With JIT disabled every entry is precompiled.
    pub enabled: bool,
}

impl JitConfig {
    pub fn aot() -> Self {
        JitConfig { k: 0, enabled: false }
    }

    pub fn jit(k: usize) -> Self {
        JitConfig { k, enabled: true }
    }
}

/// Mask generation for one compiled grammar backed by a shared pool.
pub struct MaskCache<'a> {
    g: &'a CompiledGrammar,
    vocab: &'a Vocabulary,
    pool: &'a CachePool,
    local: HashMap<(u32, u32), Arc<MaskCacheEntry>>,
    /// Recompute every pool hit and panic if it differs.
    pub verify_hits: bool,
}

impl<'a> MaskCache<'a> {
    pub fn new(g: &'a CompiledGrammar, vocab: &'a Vocabulary, pool: &'a CachePool) -> Self {
        MaskCache {
            g,
            vocab,
            pool,
            local: HashMap::new(),
            verify_hits: false,
        }
    }

    pub fn grammar(&self) -> &'a CompiledGrammar {
        self.g
    }

    pub fn vocab(&self) -> &'a Vocabulary {
        self.vocab
    }

    pub fn pool(&self) -> &'a CachePool {
        self.pool
    }

    pub fn key(&self, rule: u32, dot: u32) -> CacheKey {
        let r = self.g.rule(rule);
        CacheKey {
            fsm_hash: r.key_hash,
            dot,
            rep_phase: matches!(r.kind, RuleKind::Tail { .. }),
        }
    }

    /// Entry for (`rule`, `dot`): local memo, then pool, then computed.
    pub fn entry(&mut self, rule: u32, dot: u32) -> Arc<MaskCacheEntry> {
        if let Some(e) = self.local.get(&(rule, dot)) {
            return e.clone();
        }
        let key = self.key(rule, dot);
        let la = &self.g.rule(rule).lookahead;
        let e = match self.pool.lookup(&key, la.hash) {
            Lookup::PerfectHit(e) => e,
            Lookup::PartialHit(e) => {
                let e = Arc::new(adapt_entry(&e, la, self.vocab));
                self.pool.insert(key, e.clone());
                e
            }
            Lookup::Miss => {
                let e = Arc::new(compute_entry(self.g, rule, dot, self.vocab).expect("scannable state"));
                debug_assert!(e.is_partition(self.vocab));
                self.pool.insert(key, e.clone());
                e
            }
        };
        if self.verify_hits {
            let fresh = compute_entry(self.g, rule, dot, self.vocab).expect("scannable state");
            assert_eq!(e.accepted, fresh.accepted, "cached entry differs for {key:?}");
            assert_eq!(e.uncertain, fresh.uncertain, "cached entry differs for {key:?}");
        }
        self.local.insert((rule, dot), e.clone());
        e
    }

    /// Scannable (rule, state) pairs with their estimated compute cost.
    pub fn costs(&self) -> Vec<((u32, u32), u64)> {
        let v = self.vocab.size() as u64;
        self.g
            .scannable_states()
            .into_iter()
            .map(|(r, s)| ((r, s), v * reachable(&self.g.rule(r).fsm, s) as u64))
            .collect()
    }

    /// Precompiles the `k` costliest entries, or all of them with JIT off.
    /// Returns the number of entries made available.
    pub fn precompile(&mut self, cfg: JitConfig) -> usize {
        let mut costs = self.costs();
        costs.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        let take = if cfg.enabled { cfg.k.min(costs.len()) } else { costs.len() };
        for &((r, s), _) in &costs[..take] {
            self.entry(r, s);
        }
        self.pool.add_deferred((costs.len() - take) as u64);
        take
    }

    pub fn cached_entries(&self) -> usize {
        self.local.len()
    }

    /// Allowed-token mask for the matcher's current position.
    pub fn generate_mask(&mut self, m: &mut Matcher) -> TokenMask {
        let size = self.vocab.size();
        let mut mask = TokenMask::new(size, false);
        let mut cand = TokenMask::new(size, false);
        match m.mode() {
            Mode::Plain | Mode::Dispatched(_) => {
                // Largest remaining capacity per tail state.
                let mut groups: Vec<((u32, u32), Option<u32>)> = Vec::new();
                for it in m.scannable_items() {
                    let cap = match self.g.rule(it.rule).kind {
                        RuleKind::Tail { max: Some(max), .. } => Some(max - it.k),
                        _ => None,
                    };
                    match groups.iter_mut().find(|(k, _)| *k == (it.rule, it.state)) {
                        Some((_, c)) => *c = c.zip(cap).map(|(a, b)| a.max(b)),
                        None => groups.push(((it.rule, it.state), cap)),
                    }
                }
                for ((r, s), cap) in groups {
                    let e = self.entry(r, s);
                    match cap {
                        Some(cap) if e.by_len.first().is_some_and(|&t| self.vocab.token(t).len() > cap as usize) => {
                            let mut acc = e.accepted.clone();
                            for &t in e.by_len.iter().take_while(|&&t| self.vocab.token(t).len() > cap as usize) {
                                acc.remove(t as usize);
                                cand.insert(t as usize);
                            }
                            mask.union_with(&acc);
                        }
                        _ => mask.union_with(&e.accepted),
                    }
                    for &t in &e.uncertain {
                        cand.insert(t as usize);
                    }
                }
                if matches!(m.mode(), Mode::Dispatched(_)) {
                    let d = self.g.dispatch.as_ref().unwrap();
                    if d.spec.loop_after_dispatch && m.active_parser().unwrap().can_terminate() {
                        // Any token may leave the sub-grammar and re-enter free text.
                        cand = TokenMask::new(size, true);
                    }
                }
            }
            Mode::Dispatching(node) => {
                let ac = &self.g.dispatch.as_ref().unwrap().ac;
                for &id in self.vocab.sorted_ids() {
                    let mut n = node;
                    let mut hit = false;
                    for &b in self.vocab.token(id) {
                        let (next, outs) = ac.feed(n, b);
                        if !outs.is_empty() {
                            hit = true;
                            break;
                        }
                        n = next;
                    }
                    if hit {
                        cand.insert(id as usize);
                    } else {
                        mask.insert(id as usize);
                    }
                }
            }
            Mode::Terminated => {}
        }
        if size > 0 {
            cand.remove(self.vocab.eos() as usize);
        }
        cand.subtract(&mask);
        trial(m, self.vocab, &cand, &mut mask);
        if size > 0 && m.can_terminate() {
            mask.insert(self.vocab.eos() as usize);
        }
        mask
    }
}

/// Adds to `mask` every token of `cand` that the matcher accepts in full,
/// sharing work between tokens with common prefixes.
fn trial(m: &mut Matcher, vocab: &Vocabulary, cand: &TokenMask, mask: &mut TokenMask) {
    if cand.count() == 0 {
        return;
    }
    let base = m.position();
    let mut path: Vec<u8> = Vec::new();
    for &id in vocab.sorted_ids() {
        if !cand.get(id as usize) {
            continue;
        }
        let v = vocab.token(id);
        let keep = lcp(&path, v);
        path.truncate(keep);
        m.truncate(base + keep);
        while path.len() < v.len() && m.advance(v[path.len()]) {
            path.push(v[path.len()]);
        }
        if path.len() == v.len() {
            mask.insert(id as usize);
        }
    }
    m.truncate(base);
}

fn reachable(f: &crate::fsm::Fsm, s: u32) -> usize {
    let mut seen = vec![false; f.num_states()];
    let mut stack = vec![s];
    seen[s as usize] = true;
    let mut n = 0;
    while let Some(x) = stack.pop() {
        n += 1;
        for e in &f.edges[x as usize] {
            let t = e.target() as usize;
            if !seen[t] {
                seen[t] = true;
                stack.push(t as u32);
            }
        }
    }
    n
}
