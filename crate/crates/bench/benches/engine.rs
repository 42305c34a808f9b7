use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use gramdash::dispatch::gen_tags;
use gramdash::maskcache::{CachePool, JitConfig, MaskCache};
use gramdash::toolgrammar::{schema_to_grammar, ToolFormat};
use gramdash::{compile, AcAutomaton, CompileOptions};
use gramdash_bench::{bounded_schema, decode, schema_trace, tool_grammar, vocab};

fn preprocess(c: &mut Criterion) {
    let v = vocab();
    let g = schema_to_grammar(&bounded_schema(200)).unwrap();
    let opts = CompileOptions::default();
    let mut group = c.benchmark_group("preprocess");
    group.sample_size(10);
    for (name, jit) in [("aot", JitConfig::aot()), ("jit0", JitConfig::jit(0))] {
        group.bench_function(name, |b| {
            b.iter(|| {
                let cg = compile(&g, &opts).unwrap();
                let pool = CachePool::new();
                black_box(MaskCache::new(&cg, &v, &pool).precompile(jit))
            })
        });
    }
    group.finish();
}

fn compression(c: &mut Criterion) {
    let mut group = c.benchmark_group("compile_bounded_string");
    group.sample_size(10);
    for max in [100u32, 500] {
        let g = schema_to_grammar(&bounded_schema(max)).unwrap();
        for (name, opts) in [("compressed", CompileOptions::default()), ("uncompressed", CompileOptions::uncompressed())] {
            group.bench_with_input(BenchmarkId::new(name, max), &g, |b, g| b.iter(|| black_box(compile(g, &opts).unwrap().fsm_states())));
        }
    }
    group.finish();
}

fn masks(c: &mut Criterion) {
    let v = vocab();
    let schema = bounded_schema(200);
    let cg = compile(&schema_to_grammar(&schema).unwrap(), &CompileOptions::default()).unwrap();
    let trace = schema_trace(&schema, &v, 3);
    let mut group = c.benchmark_group("decode_schema_value");
    group.sample_size(20);
    group.bench_function("warm_pool", |b| {
        let pool = CachePool::new();
        let mut cache = MaskCache::new(&cg, &v, &pool);
        cache.precompile(JitConfig::aot());
        b.iter(|| black_box(decode(&cg, &v, &mut cache, &trace)))
    });
    group.bench_function("cold_jit", |b| {
        b.iter(|| {
            let pool = CachePool::new();
            let mut cache = MaskCache::new(&cg, &v, &pool);
            black_box(decode(&cg, &v, &mut cache, &trace))
        })
    });
    group.finish();
}

fn tool_dispatch(c: &mut Criterion) {
    let v = vocab();
    let mut group = c.benchmark_group("tool_grammar_compile");
    group.sample_size(10);
    for n in [5usize, 20] {
        for format in [ToolFormat::Llama, ToolFormat::HarmonyLite] {
            let g = tool_grammar(n, format);
            let id = BenchmarkId::new(format!("{format:?}"), n);
            group.bench_with_input(id, &g, |b, g| {
                b.iter(|| {
                    let cg = compile(g, &CompileOptions::default()).unwrap();
                    let pool = CachePool::new();
                    black_box(MaskCache::new(&cg, &v, &pool).precompile(JitConfig::jit(0)))
                })
            });
        }
    }
    group.finish();
}

fn aho_corasick(c: &mut Criterion) {
    let mut group = c.benchmark_group("ac_build");
    for total in [200usize, 1000] {
        let tags = gen_tags(total, 17);
        group.bench_with_input(BenchmarkId::from_parameter(total), &tags, |b, tags| b.iter(|| black_box(AcAutomaton::new(tags).unwrap().nodes())));
    }
    group.finish();
}

criterion_group!(benches, preprocess, compression, masks, tool_dispatch, aho_corasick);
criterion_main!(benches);
