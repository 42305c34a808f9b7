//! Repetition state compression.
//!
//! `R{min,max}` with a small `max` is expanded in place. Larger repetitions
//! keep `t` explicit copies of `R` followed by a counted [`RuleExpr::RepeatTail`],
//! so the number of FSM states no longer grows with the bounds.

use crate::error::GrammarError;

use super::{Grammar, RuleExpr};

pub const DEFAULT_REP_THRESHOLD: u32 = 8;

/// Rewrites every repetition in `g` with threshold `t` (`t >= 1`).
///
/// * `max <= t`: explicit expansion.
/// * `min >= t`, bounded: `R^t` then `Tail{min-t, max-t}`.
/// * `min < t < max`: `Expand(min, t-1) | R^t Tail{0, max-t}`.
/// * unbounded: kept as a plain `R{min,}` loop when `min <= t`, otherwise
///   `R^t Tail{min-t, }`.
pub fn compress_repetitions(g: &Grammar, t: u32) -> Result<Grammar, GrammarError> {
    assert!(t >= 1, "repetition threshold must be at least 1");
    let nullable = g.nullable_rules();
    let is_nullable = |r: &str| nullable.contains(r);
    for (name, expr) in g.rules() {
        let mut bad = false;
        expr.visit(&mut |e| {
            if let RuleExpr::Repeat { body, .. } | RuleExpr::RepeatTail { body, .. } = e {
                bad |= body.nullable(&is_nullable);
            }
        });
        if bad {
            return Err(GrammarError::NullableRepetitionBody(name.clone()));
        }
    }
    Ok(g.map_exprs(|e| compress_expr(e, t)))
}

fn compress_expr(e: &RuleExpr, t: u32) -> RuleExpr {
    match e {
        RuleExpr::Seq(xs) => RuleExpr::Seq(xs.iter().map(|x| compress_expr(x, t)).collect()),
        RuleExpr::Choice(xs) => RuleExpr::Choice(xs.iter().map(|x| compress_expr(x, t)).collect()),
        RuleExpr::RepeatTail {
            body,
            min,
            max,
            threshold,
        } => RuleExpr::RepeatTail {
            body: Box::new(compress_expr(body, t)),
            min: *min,
            max: *max,
            threshold: *threshold,
        },
        RuleExpr::Repeat { body, min, max } => {
            let body = compress_expr(body, t);
            let (min, max) = (*min, *max);
            match max {
                Some(max) if max <= t => expand_bounded(&body, min, max),
                None if min <= t => RuleExpr::repeat(body, min, None),
                _ => {
                    let tail = |tmin: u32| RuleExpr::RepeatTail {
                        body: Box::new(body.clone()),
                        min: tmin,
                        max: max.map(|m| m - t),
                        threshold: t,
                    };
                    let mut mandatory: Vec<RuleExpr> = (0..t).map(|_| body.clone()).collect();
                    if min >= t {
                        mandatory.push(tail(min - t));
                        RuleExpr::Seq(mandatory)
                    } else {
                        mandatory.push(tail(0));
                        RuleExpr::Choice(vec![expand_bounded(&body, min, t - 1), RuleExpr::Seq(mandatory)])
                    }
                }
            }
        }
        other => other.clone(),
    }
}

/// Explicit expansion of `body{min,max}` using `max` copies: `min` mandatory
/// copies followed by nested optionals.
pub fn expand_bounded(body: &RuleExpr, min: u32, max: u32) -> RuleExpr {
    debug_assert!(min <= max);
    let mut optional = RuleExpr::Empty;
    for _ in min..max {
        optional = RuleExpr::Choice(vec![RuleExpr::seq(vec![body.clone(), optional]), RuleExpr::Empty]);
    }
    let mut items: Vec<RuleExpr> = (0..min).map(|_| body.clone()).collect();
    items.push(optional);
    RuleExpr::seq(items)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::parse_ebnf;
    use crate::oracle::{RefState, ReferenceRecognizer};

    fn single(src: &str, t: u32) -> RuleExpr {
        let g = parse_ebnf(src).unwrap();
        compress_repetitions(&g, t).unwrap().root_expr().clone()
    }

    fn has_tail(e: &RuleExpr) -> bool {
        let mut found = false;
        e.visit(&mut |x| found |= matches!(x, RuleExpr::RepeatTail { .. } | RuleExpr::Repeat { .. }));
        found
    }

    fn copies(e: &RuleExpr, body: &RuleExpr) -> usize {
        let mut n = 0;
        e.visit(&mut |x| {
            if x == body {
                n += 1
            }
        });
        n
    }

    #[test]
    fn small_max_is_fully_expanded() {
        let e = single("root ::= \"r\"{1,2}", 3);
        assert!(!has_tail(&e));
        // r (r)? : one mandatory copy then one optional copy
        assert_eq!(
            e,
            RuleExpr::seq(vec![
                RuleExpr::lit("r"),
                RuleExpr::Choice(vec![RuleExpr::lit("r"), RuleExpr::Empty])
            ])
        );
    }

    #[test]
    fn large_min_keeps_t_copies_and_a_tail() {
        let e = single("root ::= \"r\"{5,9}", 3);
        let r = RuleExpr::lit("r");
        assert_eq!(
            e,
            RuleExpr::Seq(vec![
                r.clone(),
                r.clone(),
                r.clone(),
                RuleExpr::RepeatTail {
                    body: Box::new(r),
                    min: 2,
                    max: Some(6),
                    threshold: 3
                }
            ])
        );
    }

    /// All accepted strings up to `max_len`, exploring only viable prefixes.
    fn language(g: &Grammar, alphabet: &[u8], max_len: usize) -> Vec<Vec<u8>> {
        fn walk(s: &mut RefState, buf: &mut Vec<u8>, alphabet: &[u8], max_len: usize, out: &mut Vec<Vec<u8>>) {
            if s.can_terminate() {
                out.push(buf.clone());
            }
            if buf.len() == max_len {
                return;
            }
            for &b in alphabet {
                if s.push(b) {
                    buf.push(b);
                    walk(s, buf, alphabet, max_len, out);
                    buf.pop();
                    s.truncate(buf.len());
                }
            }
        }
        let rec = ReferenceRecognizer::new(g);
        let mut out = Vec::new();
        walk(&mut rec.start(), &mut Vec::new(), alphabet, max_len, &mut out);
        out.sort();
        out
    }

    #[test]
    fn low_min_branch_preserves_language() {
        let g = parse_ebnf("root ::= \"x\"{1,9}").unwrap();
        let c = compress_repetitions(&g, 3).unwrap();
        let expected: Vec<Vec<u8>> = (1..=9).map(|k| vec![b'x'; k]).collect();
        assert_eq!(language(&g, b"xy", 10), expected);
        assert_eq!(language(&c, b"xy", 10), expected);
    }

    #[test]
    fn language_preserved_on_small_corpus() {
        let corpus = [
            "root ::= (\"a\" | \"bc\"){2,7} \"d\"?",
            "root ::= [ab]{0,11}",
            "root ::= (\"a\" [bc]){3,} | \"d\"{4,}",
            "root ::= x{1,5} \"c\"\nx ::= \"a\" | \"b\" x{0,9}",
        ];
        for src in corpus {
            let g = parse_ebnf(src).unwrap();
            for t in [1, 2, 3, 5] {
                let c = compress_repetitions(&g, t).unwrap();
                assert_eq!(language(&g, b"abcd", 12), language(&c, b"abcd", 12), "{src} t={t}");
            }
        }
    }

    #[test]
    fn copies_bounded_by_twice_threshold() {
        for (min, max) in [(0, 100), (3, 500), (7, 8), (50, 60), (0, 9), (2, 12)] {
            let src = format!("root ::= \"q\"{{{min},{max}}}");
            let e = single(&src, 4);
            assert!(copies(&e, &RuleExpr::lit("q")) <= 2 * 4 + 1, "{src}");
        }
    }

    #[test]
    fn idempotent() {
        let g = parse_ebnf("root ::= (\"a\"{2,20} [x-z]{30,}){0,40} \"b\"*").unwrap();
        let once = compress_repetitions(&g, 3).unwrap();
        let twice = compress_repetitions(&once, 3).unwrap();
        assert_eq!(once, twice);
    }
}
