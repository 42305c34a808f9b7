#![allow(dead_code)]

use gramdash::corpus::TEXT_GRAMMARS;
use gramdash::matcher::Matcher;
use gramdash::oracle::{RefState, ReferenceRecognizer};
use gramdash::{compile, parse_ebnf, CompileOptions, CompiledGrammar, Grammar};

/// A four-byte alphabet for each text grammar.
pub fn alphabet(name: &str) -> &'static [u8] {
    match name {
        "json_lite" => b"[\"1,",
        "right_rec" | "left_rec" => b"abxa",
        "balanced" => b"()x(",
        "arith" => b"1+(*",
        "nullable_chain" => b"xyzq",
        "mutual" => b"abcb",
        "digits_bounded" => b"12,x",
        "long_rep" => b"<a>b",
        "rep_low_min" => b"abc;",
        "rep_unbounded_min" => b"xy.z",
        "nested_rep" => b"[1]x",
        "kv_list" => b"a=1;",
        "ambiguous" => b"abaa",
        "keywords" => b"in t",
        "tool_args" => b"{\"a:",
        n if n.starts_with("tools_") => b"<|a>",
        _ => b"abcd",
    }
}

pub fn text_corpus() -> Vec<(&'static str, Grammar)> {
    TEXT_GRAMMARS.iter().map(|(n, s)| (*n, parse_ebnf(s).unwrap())).collect()
}

pub fn option_grid() -> Vec<CompileOptions> {
    vec![
        CompileOptions::default(),
        CompileOptions::uncompressed(),
        CompileOptions {
            rep_threshold: Some(2),
            ..CompileOptions::default()
        },
    ]
}

/// Walks every string up to `max_len` over `alphabet`, comparing prefix
/// acceptance and termination of the engine against the reference. Returns
/// the number of strings compared and the first disagreement.
pub fn compare_parsers(g: &Grammar, c: &CompiledGrammar, alphabet: &[u8], max_len: usize) -> (u64, Option<Vec<u8>>) {
    fn walk(
        e: &mut Matcher,
        r: &mut RefState,
        buf: &mut Vec<u8>,
        alphabet: &[u8],
        max_len: usize,
        n: &mut u64,
    ) -> Option<Vec<u8>> {
        *n += 1;
        if e.can_terminate() != r.can_terminate() {
            return Some(buf.clone());
        }
        if buf.len() == max_len {
            return None;
        }
        let mut seen = [false; 256];
        for &b in alphabet {
            if std::mem::replace(&mut seen[b as usize], true) {
                continue;
            }
            let (x, y) = (e.advance(b), r.push(b));
            buf.push(b);
            if x != y {
                return Some(buf.clone());
            }
            if x {
                if let Some(bad) = walk(e, r, buf, alphabet, max_len, n) {
                    return Some(bad);
                }
                e.rollback(buf.len() - 1).unwrap();
                r.truncate(buf.len() - 1);
            } else {
                // Dead prefix: every extension is rejected by both.
                let rest = max_len - buf.len();
                let distinct = seen_count(alphabet) as u64;
                *n += (0..=rest as u32).map(|i| distinct.pow(i)).sum::<u64>();
            }
            buf.pop();
        }
        None
    }
    fn seen_count(a: &[u8]) -> usize {
        let mut v = a.to_vec();
        v.sort();
        v.dedup();
        v.len()
    }
    let rec = ReferenceRecognizer::new(g);
    let mut r = rec.start();
    let mut e = Matcher::new(c);
    let mut n = 0;
    let bad = walk(&mut e, &mut r, &mut Vec::new(), alphabet, max_len, &mut n);
    (n, bad)
}

pub fn compiled(g: &Grammar, o: &CompileOptions) -> CompiledGrammar {
    compile(g, o).unwrap()
}
