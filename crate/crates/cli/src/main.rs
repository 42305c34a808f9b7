use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use gramdash::maskcache::{CachePool, JitConfig, MaskCache};
use gramdash::matcher::Matcher;
use gramdash::oracle::diff_trace_from;
use gramdash::toolgrammar::{build_tool_dispatch, gen_tool_pool, ToolFormat, ToolSpec};
use gramdash::vocab::escape_bytes;
use gramdash::workload::{run_workload, threads_from_env, BenchOptions, WorkloadMode, WorkloadSpec};
use gramdash::{ac_to_ebnf, compile, parse_ebnf, AcAutomaton, CompileOptions, CompiledGrammar, Grammar, TokenId, VocabFormat, Vocabulary};
use serde_json::{json, Value};

/// Exit status of a command whose check (oracle agreement, replay) failed.
const CHECK_FAILED: u8 = 2;

#[derive(Parser)]
#[command(name = "gramdash", version, about = "Grammar-constrained decoding engine")]
struct Cli {
    /// Machine-readable JSON output.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Compile a grammar into a bundle and print its statistics.
    Compile(CompileArgs),
    /// Print the allowed tokens after a byte prefix.
    Mask(MaskArgs),
    /// Replay a token trace, checking every token against the mask.
    Replay(ReplayArgs),
    /// Compare engine masks with the reference oracle along a random decode.
    OracleDiff(OracleArgs),
    /// Aho-Corasick and EBNF expansion sizes for a tag set.
    AcStats(AcArgs),
    /// Tool-calling workload: reuse rates and timings.
    Bench(BenchArgs),
    /// Write a synthetic vocabulary file.
    GenVocab(GenVocabArgs),
    /// Write a generated tool pool as a JSON tool spec file.
    GenTools(GenToolsArgs),
}

#[derive(Args)]
struct GrammarArgs {
    /// EBNF file, `corpus:NAME` for a built-in grammar, or a JSON tool spec file.
    grammar: String,
    /// Tool-calling format for tool spec files.
    #[arg(long, default_value = "llama")]
    format: ToolFormat,
    /// Repetition compression threshold.
    #[arg(long, default_value_t = 8, conflicts_with = "no_compress")]
    rep_threshold: u32,
    /// Disable repetition compression.
    #[arg(long)]
    no_compress: bool,
}

#[derive(Args)]
struct VocabArgs {
    /// Vocabulary file; a synthetic vocabulary is used when absent.
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Vocabulary file format (jsonl or tsv); guessed from the extension.
    #[arg(long)]
    vocab_format: Option<VocabFormat>,
    /// Size of the synthetic vocabulary.
    #[arg(long, default_value_t = 500)]
    vocab_size: usize,
    #[arg(long, default_value_t = 0)]
    vocab_seed: u64,
}

#[derive(Args)]
struct CompileArgs {
    #[command(flatten)]
    g: GrammarArgs,
    #[command(flatten)]
    v: VocabArgs,
    /// Precompile every mask cache entry (default).
    #[arg(long, conflicts_with = "jit")]
    aot: bool,
    /// Precompile only the K costliest entries and fill the rest on demand.
    #[arg(long, value_name = "K")]
    jit: Option<usize>,
    /// Include the per-rule FSMs in the printed statistics.
    #[arg(long)]
    dump_fsm: bool,
    /// Bundle output path.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct MaskArgs {
    #[command(flatten)]
    g: GrammarArgs,
    #[command(flatten)]
    v: VocabArgs,
    /// Bytes already generated.
    #[arg(long, default_value = "")]
    prefix: String,
    /// Maximum number of allowed tokens to list.
    #[arg(long, default_value_t = 50)]
    limit: usize,
}

#[derive(Args)]
struct ReplayArgs {
    #[command(flatten)]
    g: GrammarArgs,
    #[command(flatten)]
    v: VocabArgs,
    /// JSON array of token ids, or an object with a `tokens` array.
    #[arg(long)]
    trace: PathBuf,
}

#[derive(Args)]
struct OracleArgs {
    #[command(flatten)]
    g: GrammarArgs,
    #[command(flatten)]
    v: VocabArgs,
    #[arg(long, default_value_t = 50)]
    steps: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Bytes forced before sampling starts.
    #[arg(long, default_value = "")]
    prefix: String,
}

#[derive(Args)]
struct AcArgs {
    /// File with one tag per line.
    tags: Option<PathBuf>,
    /// Generate tag sets with these total lengths instead (comma separated).
    #[arg(long, value_delimiter = ',', conflicts_with = "tags")]
    generate: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value_t = 100)]
    pool: usize,
    #[arg(long, default_value_t = 20)]
    tools: usize,
    #[arg(long, default_value_t = 100)]
    requests: usize,
    #[arg(long, default_value = "dynamic")]
    mode: WorkloadMode,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value = "llama")]
    format: ToolFormat,
    /// JIT with K eager entries; AOT when absent.
    #[arg(long, value_name = "K")]
    jit: Option<usize>,
    /// Masks generated per request.
    #[arg(long, default_value_t = 8)]
    tokens: usize,
    #[arg(long, default_value_t = 500)]
    vocab_size: usize,
    /// Run single-threaded.
    #[arg(long)]
    serial: bool,
}

#[derive(Args)]
struct GenVocabArgs {
    #[arg(long, default_value_t = 500)]
    size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "jsonl")]
    format: VocabFormat,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct GenToolsArgs {
    #[arg(long, default_value_t = 100)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(short, long)]
    output: PathBuf,
}

fn load_grammar(a: &GrammarArgs) -> Result<Grammar> {
    if let Some(name) = a.grammar.strip_prefix("corpus:") {
        return gramdash::corpus::grammar(name).with_context(|| format!("no built-in grammar {name:?}"));
    }
    let text = std::fs::read_to_string(&a.grammar).with_context(|| format!("reading {}", a.grammar))?;
    if a.grammar.ends_with(".json") {
        let tools: Vec<ToolSpec> = serde_json::from_str(&text).context("parsing tool spec file")?;
        return Ok(build_tool_dispatch(&tools, a.format)?);
    }
    Ok(parse_ebnf(&text)?)
}

fn compile_opts(a: &GrammarArgs) -> CompileOptions {
    if a.no_compress {
        CompileOptions::uncompressed()
    } else {
        CompileOptions {
            rep_threshold: Some(a.rep_threshold),
            ..CompileOptions::default()
        }
    }
}

fn load_vocab(a: &VocabArgs) -> Result<Vocabulary> {
    match &a.vocab {
        None => Ok(Vocabulary::synthetic(a.vocab_size, a.vocab_seed)),
        Some(p) => {
            let fmt = match a.vocab_format {
                Some(f) => f,
                None if p.extension().is_some_and(|e| e == "tsv") => VocabFormat::Tsv,
                None => VocabFormat::Jsonl,
            };
            Vocabulary::load(p, fmt).with_context(|| format!("loading {}", p.display()))
        }
    }
}

fn token_text(v: &Vocabulary, t: TokenId) -> String {
    if t == v.eos() {
        "<eos>".into()
    } else {
        escape_bytes(v.token(t))
    }
}

fn print(json: bool, v: &Value, text: impl FnOnce() -> String) {
    if json {
        println!("{v}");
    } else {
        println!("{}", text());
    }
}

fn cmd_compile(a: &CompileArgs, json: bool) -> Result<u8> {
    let g = load_grammar(&a.g)?;
    let vocab = load_vocab(&a.v)?;
    let t0 = Instant::now();
    let c = compile(&g, &compile_opts(&a.g))?;
    let pool = CachePool::new();
    let mut cache = MaskCache::new(&c, &vocab, &pool);
    let jit = a.jit.map_or(JitConfig::aot(), JitConfig::jit);
    let precompiled = cache.precompile(jit);
    let compile_ms = t0.elapsed().as_secs_f64() * 1e3;

    let total_keys = c.scannable_states().len();
    let mut hashes: Vec<u64> = c.rules.iter().map(|r| r.key_hash).collect();
    hashes.sort_unstable();
    hashes.dedup();
    let mut stats = json!({
        "rules": c.rules.len(),
        "fsm_states": c.fsm_states(),
        "hashes": hashes.len(),
        "grammar_hash": format!("{:016x}", c.grammar_hash()),
        "scannable_keys": total_keys,
        "precompiled_entries": precompiled,
        "compile_ms": compile_ms,
    });
    if a.dump_fsm {
        stats["fsm"] = c.dump_json();
    }
    if let Some(out) = &a.output {
        std::fs::write(out, serde_json::to_vec(&bundle(&c, &g, &mut cache, &vocab))?)
            .with_context(|| format!("writing {}", out.display()))?;
    }
    print(json, &stats, || {
        let mut s = format!(
            "rules {}  fsm states {}  distinct hashes {}  precompiled {}/{}  {:.2} ms",
            c.rules.len(),
            c.fsm_states(),
            hashes.len(),
            precompiled,
            total_keys,
            compile_ms
        );
        if a.dump_fsm {
            s.push('\n');
            s.push_str(&serde_json::to_string_pretty(&stats["fsm"]).unwrap());
        }
        s
    });
    Ok(0)
}

/// Versioned JSON container: grammar text, FSMs with hashes, and the
/// entries that were precompiled.
fn bundle(c: &CompiledGrammar, g: &Grammar, cache: &mut MaskCache, vocab: &Vocabulary) -> Value {
    let mut entries = Vec::new();
    for (r, s) in c.scannable_states() {
        let key = cache.key(r, s);
        if let gramdash::maskcache::Lookup::PerfectHit(e) = cache.pool().lookup(&key, c.rule(r).lookahead.hash) {
            entries.push(json!({
                "rule": c.rule(r).name,
                "state": s,
                "accepted": e.accepted.serialize(),
                "uncertain": e.uncertain,
                "pruned": e.pruned,
            }));
        }
    }
    json!({
        "format": "gramdash-bundle",
        "version": 1,
        "grammar": g.to_string(),
        "options": c.options,
        "vocab_size": vocab.size(),
        "fsms": c.dump_json(),
        "entries": entries,
    })
}

fn cmd_mask(a: &MaskArgs, json: bool) -> Result<u8> {
    let g = load_grammar(&a.g)?;
    let vocab = load_vocab(&a.v)?;
    let c = compile(&g, &compile_opts(&a.g))?;
    let pool = CachePool::new();
    let mut cache = MaskCache::new(&c, &vocab, &pool);
    let mut m = Matcher::new(&c);
    if let Err(n) = m.advance_all(a.prefix.as_bytes()) {
        bail!("prefix rejected at byte {n}");
    }
    let t = Instant::now();
    let mask = cache.generate_mask(&mut m);
    let mask_us = t.elapsed().as_secs_f64() * 1e6;
    let allowed: Vec<String> = mask.iter().take(a.limit).map(|t| token_text(&vocab, t as TokenId)).collect();
    let v = json!({
        "position": m.position(),
        "allowed_count": mask.count(),
        "allowed": allowed,
        "mask": mask.serialize(),
        "mask_us": mask_us,
    });
    print(json, &v, || {
        format!(
            "{} of {} tokens allowed ({mask_us:.1} us): {}",
            mask.count(),
            vocab.size(),
            allowed.join(" | ")
        )
    });
    Ok(0)
}

fn cmd_replay(a: &ReplayArgs, _json: bool) -> Result<u8> {
    let g = load_grammar(&a.g)?;
    let vocab = load_vocab(&a.v)?;
    let text = std::fs::read_to_string(&a.trace).with_context(|| format!("reading {}", a.trace.display()))?;
    let v: Value = serde_json::from_str(&text).context("parsing trace")?;
    let tokens: Vec<TokenId> = serde_json::from_value(v.get("tokens").cloned().unwrap_or(v)).context("trace must list token ids")?;
    let c = compile(&g, &compile_opts(&a.g))?;
    let pool = CachePool::new();
    let mut cache = MaskCache::new(&c, &vocab, &pool);
    let mut m = Matcher::new(&c);
    for (step, &t) in tokens.iter().enumerate() {
        if t as usize >= vocab.size() {
            bail!("step {step}: token id {t} out of range");
        }
        let start = Instant::now();
        let mask = cache.generate_mask(&mut m);
        let mask_us = start.elapsed().as_secs_f64() * 1e6;
        let accepted = mask.get(t as usize);
        println!(
            "{}",
            json!({"step": step, "token": t, "accepted": accepted, "mask_us": mask_us, "allowed_count": mask.count()})
        );
        if !accepted {
            eprintln!("step {step}: token {t} ({}) is not allowed", token_text(&vocab, t));
            return Ok(CHECK_FAILED);
        }
        if t == vocab.eos() {
            break;
        }
        m.advance_all(vocab.token(t)).expect("allowed token advances");
    }
    Ok(0)
}

fn cmd_oracle_diff(a: &OracleArgs, json: bool) -> Result<u8> {
    if a.steps == 0 {
        bail!("--steps must be at least 1");
    }
    let g = load_grammar(&a.g)?;
    let vocab = load_vocab(&a.v)?;
    let c = compile(&g, &compile_opts(&a.g))?;
    let pool = CachePool::new();
    let mut cache = MaskCache::new(&c, &vocab, &pool);
    let rep = diff_trace_from(&mut cache, a.prefix.as_bytes(), a.steps, a.seed)?;
    let bad: Vec<Value> = rep
        .steps
        .iter()
        .enumerate()
        .filter(|(_, s)| !s.mismatches.is_empty())
        .map(|(i, s)| json!({"step": i, "position": s.position, "tokens": s.mismatches}))
        .collect();
    if json {
        println!("{}", serde_json::to_string(&rep)?);
    } else {
        println!(
            "{} steps, {} tokens sampled, agreed: {}",
            rep.steps.len(),
            rep.tokens.len(),
            rep.agreed
        );
        for b in &bad {
            println!("mismatch {b}");
        }
    }
    Ok(if rep.agreed { 0 } else { CHECK_FAILED })
}

fn ac_row(tags: &[String]) -> Result<Value> {
    let a = AcAutomaton::new(tags)?;
    let (_, s) = ac_to_ebnf(&a);
    Ok(json!({
        "tags": tags.len(),
        "total_length": tags.iter().map(String::len).sum::<usize>(),
        "ac_states": s.states,
        "ac_transitions": s.transitions,
        "ebnf_size": s.ebnf_size,
        "ebnf_bytes": s.ebnf_bytes,
    }))
}

/// Least-squares slope and R^2 of `ys` against `xs`.
fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    (sxy / sxx, if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) })
}

fn cmd_ac_stats(a: &AcArgs, json: bool) -> Result<u8> {
    let rows: Vec<Value> = match &a.tags {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            let tags: Vec<String> = text.lines().filter(|l| !l.is_empty()).map(str::to_string).collect();
            vec![ac_row(&tags)?]
        }
        None if !a.generate.is_empty() => a
            .generate
            .iter()
            .map(|&n| ac_row(&gramdash::dispatch::gen_tags(n, a.seed)))
            .collect::<Result<_>>()?,
        None => bail!("give a tags file or --generate LENGTHS"),
    };
    let mut out = json!({ "rows": rows });
    if rows.len() >= 2 {
        let xs: Vec<f64> = rows.iter().map(|r| r["total_length"].as_f64().unwrap()).collect();
        let ys: Vec<f64> = rows.iter().map(|r| r["ebnf_size"].as_f64().unwrap()).collect();
        let (slope, r2) = linear_fit(&xs, &ys);
        out["fit"] = json!({"slope": slope, "r2": r2, "monotone": ys.windows(2).all(|w| w[1] > w[0])});
    }
    print(json, &out, || {
        let mut s = String::from("total_length  tags  ac_states  ac_transitions  ebnf_size  ebnf_bytes");
        for r in &rows {
            s.push_str(&format!(
                "\n{:>12}  {:>4}  {:>9}  {:>14}  {:>9}  {:>10}",
                r["total_length"].to_string(),
                r["tags"].to_string(),
                r["ac_states"].to_string(),
                r["ac_transitions"].to_string(),
                r["ebnf_size"].to_string(),
                r["ebnf_bytes"].to_string()
            ));
        }
        if let Some(f) = out.get("fit") {
            s.push_str(&format!("\nslope {:.3}  R^2 {:.4}  monotone {}", f["slope"], f["r2"], f["monotone"]));
        }
        s
    });
    Ok(0)
}

fn cmd_bench(a: &BenchArgs, json: bool) -> Result<u8> {
    let spec = WorkloadSpec {
        pool_size: a.pool,
        tools_per_request: a.tools,
        requests: a.requests,
        mode: a.mode,
        seed: a.seed,
    };
    let opts = BenchOptions {
        format: a.format,
        compile: CompileOptions::default(),
        jit: a.jit.map_or(JitConfig::aot(), JitConfig::jit),
        tokens_per_request: a.tokens,
        threads: if a.serial { 1 } else { threads_from_env() },
    };
    let vocab = Vocabulary::synthetic(a.vocab_size, a.seed);
    let r = run_workload(&spec, &vocab, &opts).map_err(anyhow::Error::msg)?;
    print(json, &serde_json::to_value(&r)?, || {
        format!(
            "{:?} workload, {} requests of {} tools from {}\n\
             structure reuse     {:.1}%\n\
             substructure reuse  {:.1}%\n\
             compile ms/request  median {:.2}  p90 {:.2}  max {:.2}\n\
             mask us/token       median {:.1}  p90 {:.1}  p99 {:.1}\n\
             pool                {} keys, {} perfect hits, {} partial hits, {} misses",
            a.mode,
            a.requests,
            a.tools,
            a.pool,
            100.0 * r.structure_reuse_rate,
            100.0 * r.substructure_reuse_rate,
            r.compile_ms.p50,
            r.compile_ms.p90,
            r.compile_ms.max,
            r.per_token_us.p50,
            r.per_token_us.p90,
            r.per_token_us.p99,
            r.pool.keys,
            r.pool.perfect_hits,
            r.pool.partial_hits,
            r.pool.misses
        )
    });
    Ok(0)
}

fn write(path: &Path, data: &str) -> Result<()> {
    std::fs::write(path, data).with_context(|| format!("writing {}", path.display()))
}

fn run(cli: &Cli) -> Result<u8> {
    match &cli.cmd {
        Cmd::Compile(a) => cmd_compile(a, cli.json),
        Cmd::Mask(a) => cmd_mask(a, cli.json),
        Cmd::Replay(a) => cmd_replay(a, cli.json),
        Cmd::OracleDiff(a) => cmd_oracle_diff(a, cli.json),
        Cmd::AcStats(a) => cmd_ac_stats(a, cli.json),
        Cmd::Bench(a) => cmd_bench(a, cli.json),
        Cmd::GenVocab(a) => {
            let v = Vocabulary::synthetic(a.size, a.seed);
            write(
                &a.output,
                &match a.format {
                    VocabFormat::Jsonl => v.to_jsonl(),
                    VocabFormat::Tsv => v.to_tsv(),
                },
            )?;
            Ok(0)
        }
        Cmd::GenTools(a) => {
            write(&a.output, &serde_json::to_string_pretty(&gen_tool_pool(a.n, a.seed))?)?;
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
