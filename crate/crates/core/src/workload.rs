//! Tool-calling workloads: per-request grammars drawn from a tool pool,
//! with structure and substructure reuse rates and timings.

use std::collections::HashSet;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::compile::{compile, CompileOptions};
use crate::maskcache::{CacheKey, CachePool, JitConfig, MaskCache, PoolStats};
use crate::matcher::Matcher;
use crate::toolgrammar::{build_tool_dispatch, gen_tool_pool, ToolFormat, ToolSpec};
use crate::vocab::Vocabulary;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkloadMode {
    /// Every request uses the same tools.
    Static,
    /// Each request samples its tools uniformly from the pool.
    Dynamic,
}

impl std::str::FromStr for WorkloadMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "static" => Ok(WorkloadMode::Static),
            "dynamic" => Ok(WorkloadMode::Dynamic),
            other => Err(format!("unknown workload mode {other:?}")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub pool_size: usize,
    pub tools_per_request: usize,
    pub requests: usize,
    pub mode: WorkloadMode,
    pub seed: u64,
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<(), String> {
        if self.tools_per_request == 0 || self.tools_per_request > self.pool_size {
            return Err(format!(
                "tools_per_request must be in 1..={}, got {}",
                self.pool_size, self.tools_per_request
            ));
        }
        Ok(())
    }

    /// Tool lists of every request, in request order.
    pub fn requests(&self) -> Vec<Vec<ToolSpec>> {
        let pool = gen_tool_pool(self.pool_size, self.seed);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x5eed);
        (0..self.requests)
            .map(|_| match self.mode {
                WorkloadMode::Static => pool[..self.tools_per_request].to_vec(),
                WorkloadMode::Dynamic => pool.choose_multiple(&mut rng, self.tools_per_request).cloned().collect(),
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchOptions {
    pub format: ToolFormat,
    pub compile: CompileOptions,
    pub jit: JitConfig,
    /// Masks generated per request after compilation.
    pub tokens_per_request: usize,
    /// Worker threads; 1 runs everything on the calling thread.
    pub threads: usize,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions {
            format: ToolFormat::Llama,
            compile: CompileOptions::default(),
            jit: JitConfig::aot(),
            tokens_per_request: 8,
            threads: threads_from_env(),
        }
    }
}

/// Thread count from `GRAMDASH_THREADS`, else the available parallelism.
pub fn threads_from_env() -> usize {
    std::env::var("GRAMDASH_THREADS")
        .ok()
        .and_then(|s| s.parse().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    pub p50: f64,
    pub p90: f64,
    pub p99: f64,
    pub max: f64,
}

impl Summary {
    pub fn of(xs: &[f64]) -> Summary {
        if xs.is_empty() {
            return Summary::default();
        }
        let mut v = xs.to_vec();
        v.sort_by(f64::total_cmp);
        let q = |p: f64| v[((v.len() - 1) as f64 * p).round() as usize];
        Summary {
            count: v.len(),
            mean: v.iter().sum::<f64>() / v.len() as f64,
            p50: q(0.5),
            p90: q(0.9),
            p99: q(0.99),
            max: v[v.len() - 1],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub spec: WorkloadSpec,
    pub structure_reuse_rate: f64,
    pub substructure_reuse_rate: f64,
    pub compile_ms_per_request: Vec<f64>,
    pub compile_ms: Summary,
    pub per_token_us: Summary,
    pub pool: PoolStats,
}

struct RequestResult {
    grammar_hash: u64,
    keys: Vec<CacheKey>,
    compile_ms: f64,
    token_us: Vec<f64>,
}

fn run_request(tools: &[ToolSpec], idx: usize, vocab: &Vocabulary, pool: &CachePool, opts: &BenchOptions, seed: u64) -> RequestResult {
    let t0 = Instant::now();
    let g = build_tool_dispatch(tools, opts.format).expect("generated tools compile");
    let c = compile(&g, &opts.compile).expect("tool grammar compiles");
    let mut cache = MaskCache::new(&c, vocab, pool);
    cache.precompile(opts.jit);
    let compile_ms = t0.elapsed().as_secs_f64() * 1e3;

    let mut keys: Vec<((u32, u32), CacheKey)> = c.scannable_states().into_iter().map(|(r, s)| ((r, s), cache.key(r, s))).collect();
    keys.sort_by_key(|&(rs, _)| rs);

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ idx as u64);
    let mut m = Matcher::new(&c);
    let tool = tools.choose(&mut rng).unwrap();
    m.advance_all(format!("<function={}>", tool.name).as_bytes()).expect("tag is a valid prefix");
    let mut token_us = Vec::with_capacity(opts.tokens_per_request);
    for _ in 0..opts.tokens_per_request {
        let t = Instant::now();
        let mask = cache.generate_mask(&mut m);
        token_us.push(t.elapsed().as_secs_f64() * 1e6);
        let allowed: Vec<usize> = mask.iter().filter(|&t| t != vocab.eos() as usize).collect();
        if allowed.is_empty() {
            break;
        }
        let pick = allowed[rng.gen_range(0..allowed.len())];
        m.advance_all(vocab.token(pick as u32)).expect("masked token advances");
    }
    RequestResult {
        grammar_hash: c.grammar_hash(),
        keys: keys.into_iter().map(|(_, k)| k).collect(),
        compile_ms,
        token_us,
    }
}

/// Runs the workload against one shared pool. Substructure reuse counts the
/// distinct keys of each request that an earlier request already produced,
/// so the rates depend only on the spec, not on thread interleaving.
pub fn run_workload(spec: &WorkloadSpec, vocab: &Vocabulary, opts: &BenchOptions) -> Result<BenchReport, String> {
    spec.validate()?;
    let reqs = spec.requests();
    let pool = CachePool::new();
    let run = |(i, tools): (usize, &Vec<ToolSpec>)| run_request(tools, i, vocab, &pool, opts, spec.seed);
    let results: Vec<RequestResult> = if opts.threads <= 1 {
        reqs.iter().enumerate().map(run).collect()
    } else {
        let tp = rayon::ThreadPoolBuilder::new()
            .num_threads(opts.threads)
            .build()
            .map_err(|e| e.to_string())?;
        tp.install(|| reqs.par_iter().enumerate().map(run).collect())
    };

    let mut grammars = HashSet::new();
    let mut keys = HashSet::new();
    let (mut repeated, mut hits, mut lookups) = (0usize, 0usize, 0usize);
    for r in &results {
        repeated += usize::from(!grammars.insert(r.grammar_hash));
        let mine: HashSet<CacheKey> = r.keys.iter().copied().collect();
        lookups += mine.len();
        hits += mine.iter().filter(|k| keys.contains(*k)).count();
        keys.extend(mine);
    }
    let frac = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let compile_ms_per_request: Vec<f64> = results.iter().map(|r| r.compile_ms).collect();
    let tokens: Vec<f64> = results.iter().flat_map(|r| r.token_us.iter().copied()).collect();
    Ok(BenchReport {
        spec: *spec,
        structure_reuse_rate: frac(repeated, results.len()),
        substructure_reuse_rate: frac(hits, lookups),
        compile_ms: Summary::of(&compile_ms_per_request),
        compile_ms_per_request,
        per_token_us: Summary::of(&tokens),
        pool: pool.stats(),
    })
}

/// Median wall time of `reps` runs of `f` after `warmup` discarded runs.
pub fn median_time(warmup: usize, reps: usize, mut f: impl FnMut()) -> Duration {
    for _ in 0..warmup {
        f();
    }
    let mut ts: Vec<Duration> = (0..reps.max(1))
        .map(|_| {
            let t = Instant::now();
            f();
            t.elapsed()
        })
        .collect();
    ts.sort();
    ts[ts.len() / 2]
}
