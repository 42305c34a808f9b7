mod common;

use std::sync::Arc;

use common::compiled;
use gramdash::maskcache::{compute_entry, CachePool, JitConfig, MaskCache};
use gramdash::matcher::Matcher;
use gramdash::oracle::{diff_trace, oracle_mask};
use gramdash::{parse_ebnf, CompileOptions, OracleError, Vocabulary};

fn vocab(toks: &[&str]) -> Vocabulary {
    Vocabulary::from_strs(toks).unwrap()
}

fn names(v: &Vocabulary, m: &gramdash::TokenMask) -> Vec<String> {
    m.iter()
        .map(|t| {
            if t == v.eos() as usize {
                "<eos>".to_string()
            } else {
                String::from_utf8_lossy(v.token(t as u32)).into_owned()
            }
        })
        .collect()
}

#[test]
fn oracle_mask_examples() {
    let v = vocab(&["a", "b", "ab", "ba", "bba", "x", "aa"]);
    let g = parse_ebnf("root ::= \"a\" | \"b\" root").unwrap();
    assert_eq!(names(&v, &oracle_mask(&g, b"", &v).unwrap()), ["a", "b", "ba", "bba"]);
    let g = parse_ebnf("root ::= \"ab\"").unwrap();
    assert_eq!(names(&v, &oracle_mask(&g, b"ab", &v).unwrap()), ["<eos>"]);
    assert_eq!(oracle_mask(&g, b"ax", &v), Err(OracleError::InvalidPrefix(1)));
}

#[test]
fn oracle_mask_is_deterministic() {
    let v = Vocabulary::synthetic(300, 2);
    let g = gramdash::corpus::text_grammar("json_lite").unwrap();
    assert_eq!(oracle_mask(&g, b"{\"a\":[1,", &v), oracle_mask(&g, b"{\"a\":[1,", &v));
}

#[test]
fn empty_sentence_grammar_allows_only_eos() {
    let v = vocab(&["a", "b"]);
    let c = compiled(&parse_ebnf("root ::= \"\"").unwrap(), &CompileOptions::default());
    let pool = CachePool::new();
    let mut cache = MaskCache::new(&c, &v, &pool);
    let rep = diff_trace(&mut cache, 1, 0);
    assert!(rep.agreed);
    assert_eq!(rep.steps.len(), 1);
    assert_eq!(names(&v, &rep.steps[0].mask), ["<eos>"]);
}

#[test]
fn corrupted_entry_is_caught() {
    let v = vocab(&["a", "b", "ab", "x"]);
    let c = compiled(&parse_ebnf("root ::= \"a\" | \"b\" root").unwrap(), &CompileOptions::default());
    let pool = CachePool::new();
    let root = c.root;
    let key = MaskCache::new(&c, &v, &pool).key(root, 0);
    let mut bad = compute_entry(&c, root, 0, &v).unwrap();
    assert!(!bad.accepted.get(3));
    bad.accepted.insert(3);
    pool.insert(key, Arc::new(bad));
    let mut cache = MaskCache::new(&c, &v, &pool);
    let rep = diff_trace(&mut cache, 5, 0);
    assert!(!rep.agreed);
    assert_eq!(rep.steps[0].mismatches, vec![3]);
}

#[test]
fn pool_hits_match_fresh_computation() {
    let v = Vocabulary::synthetic(400, 5);
    let pool = CachePool::new();
    let grammars = ["tools_1", "tools_5", "tool_args", "json_lite", "kv_list"];
    for name in grammars {
        let g = gramdash::corpus::grammar(name).unwrap();
        let c = compiled(&g, &CompileOptions::default());
        let mut cache = MaskCache::new(&c, &v, &pool);
        cache.verify_hits = true;
        cache.precompile(JitConfig::aot());
        for seed in 0..3 {
            assert!(diff_trace(&mut cache, 10, seed).agreed, "{name}");
        }
    }
    let s = pool.stats();
    assert!(s.perfect_hits + s.partial_hits > 0);
}

#[test]
fn jit_fills_lazily() {
    let v = Vocabulary::synthetic(300, 5);
    let c = compiled(&gramdash::corpus::text_grammar("json_lite").unwrap(), &CompileOptions::default());
    let pool = CachePool::new();
    let mut cache = MaskCache::new(&c, &v, &pool);
    assert_eq!(cache.precompile(JitConfig::jit(0)), 0);
    assert_eq!(cache.cached_entries(), 0);
    let mut m = Matcher::new(&c);
    let mask = cache.generate_mask(&mut m);
    assert!(mask.count() >= 1);
    assert!(cache.cached_entries() > 0);
    assert_eq!(pool.stats().jit_deferred as usize, cache.costs().len());
}
