mod common;

use common::*;
use gramdash::maskcache::{CachePool, MaskCache};
use gramdash::oracle::{diff_trace, diff_trace_from};
use gramdash::toolgrammar::{build_tool_dispatch, gen_tool_pool, ToolFormat};
use gramdash::Vocabulary;

#[test]
fn engine_masks_match_oracle_on_text_corpus() {
    let vocab = Vocabulary::synthetic(500, 11);
    for (name, g) in text_corpus() {
        for o in option_grid() {
            let c = compiled(&g, &o);
            let pool = CachePool::new();
            let mut cache = MaskCache::new(&c, &vocab, &pool);
            for seed in 0..10 {
                let rep = diff_trace(&mut cache, 30, seed);
                let bad = rep.steps.iter().find(|s| !s.mismatches.is_empty());
                assert!(
                    rep.agreed,
                    "{name} {o:?} seed {seed}: trace {:?} step {:?}",
                    rep.tokens.iter().map(|&t| String::from_utf8_lossy(vocab.token(t)).into_owned()).collect::<Vec<_>>(),
                    bad.map(|s| (s.position, s.mismatches.iter().map(|&t| String::from_utf8_lossy(vocab.token(t)).into_owned()).collect::<Vec<_>>()))
                );
            }
        }
    }
}

/// Prefixes that enter each dispatch branch of a tool grammar.
fn branch_prefixes(g: &gramdash::Grammar) -> Vec<Vec<u8>> {
    let mut out = vec![Vec::new()];
    if let Some(gramdash::RuleExpr::TagDispatch(spec)) = g.rule(g.root()) {
        for (tag, _) in &spec.pairs {
            let mut p = b"Sure. ".to_vec();
            p.extend_from_slice(tag);
            out.push(p);
        }
    }
    out
}

#[test]
fn engine_masks_match_oracle_on_tool_grammars() {
    let vocab = Vocabulary::synthetic(500, 11);
    for (name, n, fmt) in gramdash::corpus::TOOL_GRAMMARS {
        let tools = gen_tool_pool(*n, 3);
        let g = build_tool_dispatch(&tools[..(*n).min(3)], *fmt).unwrap();
        for o in option_grid() {
            let c = compiled(&g, &o);
            let pool = CachePool::new();
            let mut cache = MaskCache::new(&c, &vocab, &pool);
            for (i, p) in branch_prefixes(&g).iter().enumerate() {
                for seed in 0..3 {
                    let rep = diff_trace_from(&mut cache, p, 40, seed).unwrap();
                    assert!(rep.agreed, "{name} {o:?} branch {i} seed {seed}");
                }
            }
        }
    }
}

#[test]
fn two_tools_constrain_their_own_arguments() {
    use gramdash::toolgrammar::{SchemaNode, ToolSpec};
    let tools = vec![
        ToolSpec {
            name: "a".into(),
            params: SchemaNode::Object(vec![("n".into(), SchemaNode::Int)]),
        },
        ToolSpec {
            name: "b".into(),
            params: SchemaNode::Object(vec![("f".into(), SchemaNode::Bool)]),
        },
    ];
    let g = build_tool_dispatch(&tools, ToolFormat::Llama).unwrap();
    let c = compiled(&g, &gramdash::CompileOptions::default());
    let vocab = Vocabulary::from_strs(&["<function=a>", "<function=b>", "{\"n\":", "{\"f\":", "7", "true", "}", "</function>", "x"]).unwrap();
    let pool = CachePool::new();
    let mut cache = MaskCache::new(&c, &vocab, &pool);
    let allowed = |cache: &mut MaskCache, prefix: &[u8]| {
        let rep = diff_trace_from(cache, prefix, 1, 0).unwrap();
        assert!(rep.agreed);
        rep.steps[0].mask.iter().map(|t| String::from_utf8_lossy(vocab.token(t as u32)).into_owned()).collect::<Vec<_>>()
    };
    assert_eq!(allowed(&mut cache, b"<function=a>"), vec!["{\"n\":"]);
    assert_eq!(allowed(&mut cache, b"<function=b>"), vec!["{\"f\":"]);
    assert_eq!(allowed(&mut cache, b"<function=a>{\"n\":"), vec!["7"]);
    assert_eq!(allowed(&mut cache, b"<function=b>{\"f\":"), vec!["true"]);
}
