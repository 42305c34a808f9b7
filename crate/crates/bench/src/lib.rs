//! Fixtures shared by the criterion benchmarks.

use gramdash::maskcache::MaskCache;
use gramdash::matcher::Matcher;
use gramdash::toolgrammar::{build_tool_dispatch, gen_tool_pool, sample_value, SchemaNode, ToolFormat};
use gramdash::{CompiledGrammar, Grammar, TokenId, Vocabulary};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const VOCAB_SIZE: usize = 2000;

pub fn vocab() -> Vocabulary {
    Vocabulary::synthetic(VOCAB_SIZE, 12)
}

/// An object with two bounded string fields.
pub fn bounded_schema(max_len: u32) -> SchemaNode {
    let s = |lo| SchemaNode::Str {
        min_len: Some(lo),
        max_len: Some(max_len),
    };
    SchemaNode::Object(vec![("title".into(), s(1)), ("body".into(), s(0))])
}

pub fn tool_grammar(n: usize, format: ToolFormat) -> Grammar {
    build_tool_dispatch(&gen_tool_pool(n, 42), format).expect("generated tools compile")
}

/// A token trace for a value sampled from `schema`.
pub fn schema_trace(schema: &SchemaNode, vocab: &Vocabulary, seed: u64) -> Vec<TokenId> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let text = sample_value(schema, &mut rng);
    vocab.tokenize_greedy(text.as_bytes()).expect("vocabulary covers printable ASCII")
}

/// Generates one mask per token of `trace`, advancing the matcher after
/// each. Returns the total number of allowed tokens.
pub fn decode(c: &CompiledGrammar, vocab: &Vocabulary, cache: &mut MaskCache, trace: &[TokenId]) -> usize {
    let mut m = Matcher::new(c);
    let mut allowed = 0;
    for &t in trace {
        allowed += cache.generate_mask(&mut m).count();
        m.advance_all(vocab.token(t)).expect("trace token is allowed");
    }
    allowed
}
