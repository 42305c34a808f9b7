//! Grammars built from tool specifications: a JSON-schema subset compiled to
//! EBNF rules, and TagDispatch assemblers for tool-calling formats.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::dispatch::{text_until_rules, TagDispatchSpec};
use crate::error::ToolError;
use crate::grammar::{Grammar, RuleExpr};

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum SchemaNode {
    /// Properties in output order; all are required.
    Object(Vec<(String, SchemaNode)>),
    Str { min_len: Option<u32>, max_len: Option<u32> },
    Num,
    Int,
    Bool,
    Enum(Vec<String>),
    Array {
        items: Box<SchemaNode>,
        min_items: Option<u32>,
        max_items: Option<u32>,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub name: String,
    #[serde(with = "schema_json")]
    pub params: SchemaNode,
}

mod schema_json {
    use super::SchemaNode;
    use serde::{de::Error, Deserialize, Deserializer, Serializer};
    use serde_json::Value;

    pub fn serialize<S: Serializer>(s: &SchemaNode, ser: S) -> Result<S::Ok, S::Error> {
        serde::Serialize::serialize(&s.to_json(), ser)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> Result<SchemaNode, D::Error> {
        let v = Value::deserialize(de)?;
        SchemaNode::from_json(&v).map_err(D::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolFormat {
    Llama,
    HarmonyLite,
}

impl std::str::FromStr for ToolFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "llama" => Ok(ToolFormat::Llama),
            "harmony_lite" | "harmony-lite" => Ok(ToolFormat::HarmonyLite),
            other => Err(format!("unknown tool format {other:?}")),
        }
    }
}

fn bound(v: &Value, key: &str) -> Result<Option<u32>, ToolError> {
    match v.get(key) {
        None => Ok(None),
        Some(x) => x
            .as_u64()
            .and_then(|n| u32::try_from(n).ok())
            .map(Some)
            .ok_or_else(|| ToolError::InvalidSchema(format!("{key} must be a non-negative integer"))),
    }
}

fn check_keys(v: &Value, allowed: &[&str]) -> Result<(), ToolError> {
    let obj = v
        .as_object()
        .ok_or_else(|| ToolError::InvalidSchema("schema must be an object".into()))?;
    match obj.keys().find(|k| !allowed.contains(&k.as_str()) && *k != "description") {
        Some(k) => Err(ToolError::UnsupportedKeyword(k.clone())),
        None => Ok(()),
    }
}

fn check_bounds(lo: Option<u32>, hi: Option<u32>) -> Result<(), ToolError> {
    match (lo, hi) {
        (Some(a), Some(b)) if a > b => Err(ToolError::InvalidSchema(format!("min {a} > max {b}"))),
        _ => Ok(()),
    }
}

impl SchemaNode {
    /// Parses the supported subset of JSON Schema.
    pub fn from_json(v: &Value) -> Result<SchemaNode, ToolError> {
        if let Some(vals) = v.get("enum") {
            check_keys(v, &["enum", "type"])?;
            let vals = vals
                .as_array()
                .filter(|a| !a.is_empty())
                .ok_or_else(|| ToolError::InvalidSchema("enum must be a non-empty array".into()))?;
            let lits = vals
                .iter()
                .map(|x| x.as_str().map(str::to_string))
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| ToolError::InvalidSchema("enum values must be strings".into()))?;
            return Ok(SchemaNode::Enum(lits));
        }
        let ty = v
            .get("type")
            .and_then(Value::as_str)
            .ok_or_else(|| ToolError::InvalidSchema("missing \"type\"".into()))?;
        match ty {
            "object" => {
                check_keys(v, &["type", "properties", "required"])?;
                let mut props = Vec::new();
                if let Some(p) = v.get("properties") {
                    let p = p
                        .as_object()
                        .ok_or_else(|| ToolError::InvalidSchema("properties must be an object".into()))?;
                    for (k, s) in p {
                        props.push((k.clone(), SchemaNode::from_json(s)?));
                    }
                }
                Ok(SchemaNode::Object(props))
            }
            "string" => {
                check_keys(v, &["type", "minLength", "maxLength"])?;
                let (min_len, max_len) = (bound(v, "minLength")?, bound(v, "maxLength")?);
                check_bounds(min_len, max_len)?;
                Ok(SchemaNode::Str { min_len, max_len })
            }
            "number" => check_keys(v, &["type"]).map(|_| SchemaNode::Num),
            "integer" => check_keys(v, &["type"]).map(|_| SchemaNode::Int),
            "boolean" => check_keys(v, &["type"]).map(|_| SchemaNode::Bool),
            "array" => {
                check_keys(v, &["type", "items", "minItems", "maxItems"])?;
                let items = v
                    .get("items")
                    .ok_or_else(|| ToolError::InvalidSchema("array without items".into()))?;
                let (min_items, max_items) = (bound(v, "minItems")?, bound(v, "maxItems")?);
                check_bounds(min_items, max_items)?;
                Ok(SchemaNode::Array {
                    items: Box::new(SchemaNode::from_json(items)?),
                    min_items,
                    max_items,
                })
            }
            other => Err(ToolError::UnsupportedKeyword(format!("type={other}"))),
        }
    }

    pub fn to_json(&self) -> Value {
        let mut v = match self {
            SchemaNode::Object(props) => {
                let mut p = serde_json::Map::new();
                for (k, s) in props {
                    p.insert(k.clone(), s.to_json());
                }
                let req: Vec<&str> = props.iter().map(|(k, _)| k.as_str()).collect();
                json!({"type": "object", "properties": p, "required": req})
            }
            SchemaNode::Str { .. } => json!({"type": "string"}),
            SchemaNode::Num => json!({"type": "number"}),
            SchemaNode::Int => json!({"type": "integer"}),
            SchemaNode::Bool => json!({"type": "boolean"}),
            SchemaNode::Enum(vals) => json!({ "enum": vals }),
            SchemaNode::Array { items, .. } => json!({"type": "array", "items": items.to_json()}),
        };
        let (lo, hi, lo_key, hi_key) = match self {
            SchemaNode::Str { min_len, max_len } => (*min_len, *max_len, "minLength", "maxLength"),
            SchemaNode::Array {
                min_items, max_items, ..
            } => (*min_items, *max_items, "minItems", "maxItems"),
            _ => (None, None, "", ""),
        };
        if let Some(x) = lo {
            v[lo_key] = json!(x);
        }
        if let Some(x) = hi {
            v[hi_key] = json!(x);
        }
        v
    }

    /// Whether any string length or array item bound is present.
    pub fn has_bounds(&self) -> bool {
        match self {
            SchemaNode::Object(props) => props.iter().any(|(_, s)| s.has_bounds()),
            SchemaNode::Str { min_len, max_len } => min_len.is_some() || max_len.is_some(),
            SchemaNode::Array {
                items,
                min_items,
                max_items,
            } => min_items.is_some() || max_items.is_some() || items.has_bounds(),
            _ => false,
        }
    }
}

/// JSON string literal bytes for `s` (only `"` and `\` are escaped).
fn json_str(s: &str) -> String {
    let mut out = String::from("\"");
    for c in s.chars() {
        if c == '"' || c == '\\' {
            out.push('\\');
        }
        out.push(c);
    }
    out.push('"');
    out
}

/// Accumulates rules, sharing the primitive value rules.
struct Builder {
    rules: Vec<(String, RuleExpr)>,
    names: HashSet<String>,
}

impl Builder {
    fn new() -> Self {
        Builder {
            rules: Vec::new(),
            names: HashSet::new(),
        }
    }

    fn add(&mut self, name: &str, e: RuleExpr) {
        if self.names.insert(name.to_string()) {
            self.rules.push((name.to_string(), e));
        }
    }

    fn shared(&mut self, name: &str, make: impl FnOnce() -> RuleExpr) -> RuleExpr {
        if !self.names.contains(name) {
            let e = make();
            self.add(name, e);
        }
        RuleExpr::rule(name)
    }

    fn json_char(&mut self) -> RuleExpr {
        self.shared("json_char", || {
            RuleExpr::choice(vec![
                RuleExpr::Class {
                    ranges: vec![(b'"', b'"'), (b'\\', b'\\')],
                    negated: true,
                },
                RuleExpr::seq(vec![RuleExpr::lit("\\"), RuleExpr::class(&[(b'"', b'"'), (b'\\', b'\\')])]),
            ])
        })
    }

    /// `-? ("0" | [1-9] [0-9]*)`
    fn integer(&self) -> RuleExpr {
        RuleExpr::seq(vec![
            RuleExpr::choice(vec![RuleExpr::lit("-"), RuleExpr::Empty]),
            RuleExpr::choice(vec![
                RuleExpr::lit("0"),
                RuleExpr::seq(vec![
                    RuleExpr::class(&[(b'1', b'9')]),
                    RuleExpr::repeat(RuleExpr::class(&[(b'0', b'9')]), 0, None),
                ]),
            ]),
        ])
    }

    /// Expression for a value of schema `s`; `path` names nested rules.
    fn value(&mut self, s: &SchemaNode, path: &str) -> RuleExpr {
        match s {
            SchemaNode::Str { min_len, max_len } => {
                let (lo, hi) = (min_len.unwrap_or(0), *max_len);
                let name = match hi {
                    Some(hi) => format!("json_str_{lo}_{hi}"),
                    None if lo == 0 => "json_str".to_string(),
                    None => format!("json_str_{lo}_"),
                };
                let ch = self.json_char();
                self.shared(&name, || {
                    RuleExpr::seq(vec![RuleExpr::lit("\""), RuleExpr::repeat(ch, lo, hi), RuleExpr::lit("\"")])
                })
            }
            SchemaNode::Int => {
                let i = self.integer();
                self.shared("json_int", || i)
            }
            SchemaNode::Num => {
                let i = self.integer();
                self.shared("json_num", || {
                    let frac = RuleExpr::seq(vec![RuleExpr::lit("."), RuleExpr::repeat(RuleExpr::class(&[(b'0', b'9')]), 1, None)]);
                    RuleExpr::seq(vec![i, RuleExpr::choice(vec![frac, RuleExpr::Empty])])
                })
            }
            SchemaNode::Bool => self.shared("json_bool", || RuleExpr::choice(vec![RuleExpr::lit("true"), RuleExpr::lit("false")])),
            SchemaNode::Enum(vals) => RuleExpr::choice(vals.iter().map(|v| RuleExpr::lit(&json_str(v))).collect()),
            SchemaNode::Object(props) => {
                let mut items = vec![RuleExpr::lit("{")];
                for (i, (k, v)) in props.iter().enumerate() {
                    let sep = if i == 0 { "" } else { "," };
                    items.push(RuleExpr::lit(&format!("{sep}{}:", json_str(k))));
                    items.push(self.value(v, &format!("{path}_{i}")));
                }
                items.push(RuleExpr::lit("}"));
                self.add(path, RuleExpr::seq(items));
                RuleExpr::rule(path)
            }
            SchemaNode::Array {
                items,
                min_items,
                max_items,
            } => {
                let item = self.value(items, &format!("{path}_item"));
                let (lo, hi) = (min_items.unwrap_or(0), *max_items);
                let more = |lo: u32| {
                    RuleExpr::repeat(
                        RuleExpr::seq(vec![RuleExpr::lit(","), item.clone()]),
                        lo.saturating_sub(1),
                        hi.map(|h| h - 1),
                    )
                };
                let body = if hi == Some(0) {
                    RuleExpr::Empty
                } else if lo == 0 {
                    RuleExpr::choice(vec![RuleExpr::seq(vec![item.clone(), more(1)]), RuleExpr::Empty])
                } else {
                    RuleExpr::seq(vec![item.clone(), more(lo)])
                };
                self.add(path, RuleExpr::seq(vec![RuleExpr::lit("["), body, RuleExpr::lit("]")]));
                RuleExpr::rule(path)
            }
        }
    }
}

/// Grammar accepting exactly the JSON texts of `s` (fixed property order, no
/// insignificant whitespace).
pub fn schema_to_grammar(s: &SchemaNode) -> Result<Grammar, ToolError> {
    let mut b = Builder::new();
    let v = b.value(s, "value");
    let mut rules = vec![("root".to_string(), v)];
    rules.extend(b.rules);
    Ok(Grammar::new(rules, "root")?)
}

pub const LLAMA_STOP: &str = "<|eot_id|>";
pub const HARMONY_STOP: &str = "<|return|>";
pub const HARMONY_END: &str = "<|end|>";
pub const HARMONY_CHANNELS: &[&str] = &["analysis", "final"];

fn valid_name(name: &str) -> bool {
    !name.is_empty() && name.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'_')
}

/// TagDispatch grammar: free text interleaved with `<function=NAME>` calls
/// whose arguments follow the tool's schema.
pub fn build_tool_dispatch(tools: &[ToolSpec], format: ToolFormat) -> Result<Grammar, ToolError> {
    if tools.is_empty() {
        return Err(ToolError::NoTools);
    }
    let mut seen = HashSet::new();
    let mut b = Builder::new();
    let mut pairs: Vec<(String, String)> = Vec::new();
    for t in tools {
        if !seen.insert(t.name.as_str()) {
            return Err(ToolError::DuplicateToolName(t.name.clone()));
        }
        if !valid_name(&t.name) {
            return Err(ToolError::InvalidSchema(format!("bad tool name {:?}", t.name)));
        }
        let args = b.value(&t.params, &format!("{}_args", t.name));
        let call = format!("call_{}", t.name);
        b.add(&call, RuleExpr::seq(vec![args, RuleExpr::lit("</function>")]));
        pairs.push((format!("<function={}>", t.name), call));
    }
    let stop = match format {
        ToolFormat::Llama => LLAMA_STOP,
        ToolFormat::HarmonyLite => {
            let (rules, root) = text_until_rules(HARMONY_END.as_bytes(), "until_end_");
            for (n, e) in rules {
                b.add(&n, e);
            }
            for ch in HARMONY_CHANNELS {
                pairs.push((format!("<|channel|>{ch}<|message|>"), root.clone()));
            }
            HARMONY_STOP
        }
    };
    let spec = TagDispatchSpec::new(
        pairs.iter().map(|(t, r)| (t.as_str(), r.as_str())).collect(),
        vec![stop],
    );
    let mut rules = vec![("root".to_string(), RuleExpr::TagDispatch(spec))];
    rules.extend(b.rules);
    Ok(Grammar::new(rules, "root")?)
}

const VERBS: &[&str] = &[
    "get", "set", "list", "create", "delete", "update", "find", "search", "send", "book", "cancel", "check",
    "convert", "compute", "fetch", "schedule",
];
const NOUNS: &[&str] = &[
    "weather", "flight", "hotel", "order", "user", "message", "event", "invoice", "stock", "route", "recipe",
    "movie", "ticket", "account", "file", "reminder", "contact", "song", "price", "translation",
];
const PROPS: &[&str] = &[
    "city", "date", "name", "query", "limit", "unit", "id", "email", "amount", "currency", "title", "tags",
    "count", "lang", "start", "end", "verbose", "priority", "location", "items",
];

fn gen_schema(rng: &mut ChaCha8Rng, depth: u32) -> SchemaNode {
    let roll = rng.gen_range(0..100);
    match roll {
        0..=29 => {
            if rng.gen_bool(0.3) {
                let max = *[8u32, 16, 32, 64, 200].choose(rng).unwrap();
                SchemaNode::Str {
                    min_len: Some(rng.gen_range(0..3)),
                    max_len: Some(max),
                }
            } else {
                SchemaNode::Str {
                    min_len: None,
                    max_len: None,
                }
            }
        }
        30..=44 => SchemaNode::Int,
        45..=54 => SchemaNode::Num,
        55..=64 => SchemaNode::Bool,
        65..=76 => {
            let k = rng.gen_range(2..5);
            let mut vals: Vec<String> = PROPS.choose_multiple(rng, k).map(|s| s.to_string()).collect();
            vals.sort();
            SchemaNode::Enum(vals)
        }
        77..=89 => {
            let items = if rng.gen_bool(0.5) {
                SchemaNode::Int
            } else {
                SchemaNode::Str {
                    min_len: None,
                    max_len: None,
                }
            };
            let bounded = rng.gen_bool(0.4);
            SchemaNode::Array {
                items: Box::new(items),
                min_items: bounded.then(|| rng.gen_range(0..2)),
                max_items: bounded.then(|| rng.gen_range(2..12)),
            }
        }
        _ if depth < 2 => gen_object(rng, depth + 1, 1, 3),
        _ => SchemaNode::Bool,
    }
}

fn gen_object(rng: &mut ChaCha8Rng, depth: u32, lo: usize, hi: usize) -> SchemaNode {
    let n = rng.gen_range(lo..=hi);
    let keys: Vec<&str> = PROPS.choose_multiple(rng, n).copied().collect();
    let props = keys.into_iter().map(|k| (k.to_string(), gen_schema(rng, depth))).collect();
    SchemaNode::Object(props)
}

/// Seeded pool of `n` distinct tools with 1 to 6 parameters each.
pub fn gen_tool_pool(n: usize, seed: u64) -> Vec<ToolSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut names = HashSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let mut name = format!("{}_{}", VERBS.choose(&mut rng).unwrap(), NOUNS.choose(&mut rng).unwrap());
        if names.contains(&name) {
            name = format!("{name}_{}", out.len());
        }
        names.insert(name.clone());
        out.push(ToolSpec {
            name,
            params: gen_object(&mut rng, 0, 1, 6),
        });
    }
    out
}

/// A random JSON text conforming to `s`.
pub fn sample_value(s: &SchemaNode, rng: &mut impl Rng) -> String {
    match s {
        SchemaNode::Object(props) => {
            let body: Vec<String> = props
                .iter()
                .map(|(k, v)| format!("{}:{}", json_str(k), sample_value(v, rng)))
                .collect();
            format!("{{{}}}", body.join(","))
        }
        SchemaNode::Str { min_len, max_len } => {
            let lo = min_len.unwrap_or(0);
            let hi = max_len.unwrap_or(lo + 12).min(lo + 12);
            let n = rng.gen_range(lo..=hi);
            let mut out = String::from("\"");
            for _ in 0..n {
                match rng.gen_range(0..12) {
                    0 => out.push_str("\\\""),
                    1 => out.push_str("\\\\"),
                    _ => out.push(*b"abcxyz 019-_:,{}".choose(rng).unwrap() as char),
                }
            }
            out.push('"');
            out
        }
        SchemaNode::Int => format!("{}", rng.gen_range(-500i64..5000)),
        SchemaNode::Num => format!("{}.{}", rng.gen_range(-50i64..500), rng.gen_range(0..100)),
        SchemaNode::Bool => (if rng.gen_bool(0.5) { "true" } else { "false" }).to_string(),
        SchemaNode::Enum(vals) => json_str(vals.choose(rng).unwrap()),
        SchemaNode::Array {
            items,
            min_items,
            max_items,
        } => {
            let lo = min_items.unwrap_or(0);
            let hi = max_items.unwrap_or(lo + 4).min(lo + 4);
            let n = rng.gen_range(lo..=hi);
            let xs: Vec<String> = (0..n).map(|_| sample_value(items, rng)).collect();
            format!("[{}]", xs.join(","))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::ReferenceRecognizer;

    fn str_node(lo: Option<u32>, hi: Option<u32>) -> SchemaNode {
        SchemaNode::Str {
            min_len: lo,
            max_len: hi,
        }
    }

    #[test]
    fn object_with_string() {
        let s = SchemaNode::Object(vec![("city".into(), str_node(None, None))]);
        let r = ReferenceRecognizer::new(&schema_to_grammar(&s).unwrap());
        assert!(r.accepts(br#"{"city":"San Francisco"}"#));
        assert!(r.accepts(br#"{"city":"a\"b"}"#));
        assert!(!r.accepts(br#"{"city": "x"}"#));
        assert!(!r.accepts(br#"{"town":"x"}"#));
    }

    #[test]
    fn string_bounds_become_repetitions() {
        let g = schema_to_grammar(&str_node(Some(2), Some(4))).unwrap();
        let has_rep = g.rules().iter().any(|(_, e)| {
            let mut found = false;
            e.visit(&mut |x| found |= matches!(x, RuleExpr::Repeat { min: 2, max: Some(4), .. }));
            found
        });
        assert!(has_rep);
        let r = ReferenceRecognizer::new(&g);
        let ok: Vec<usize> = (0..7).filter(|&n| r.accepts(format!("\"{}\"", "x".repeat(n)).as_bytes())).collect();
        assert_eq!(ok, vec![2, 3, 4]);
    }

    #[test]
    fn array_bounds_shape() {
        let s = SchemaNode::Array {
            items: Box::new(SchemaNode::Int),
            min_items: Some(1),
            max_items: Some(3),
        };
        let r = ReferenceRecognizer::new(&schema_to_grammar(&s).unwrap());
        for t in ["[1]", "[1,-2]", "[1,2,3]"] {
            assert!(r.accepts(t.as_bytes()), "{t}");
        }
        for t in ["[]", "[1,2,3,4]", "[1,]"] {
            assert!(!r.accepts(t.as_bytes()), "{t}");
        }
    }

    #[test]
    fn json_round_trip_and_errors() {
        let pool = gen_tool_pool(30, 5);
        let text = serde_json::to_string(&pool).unwrap();
        let back: Vec<ToolSpec> = serde_json::from_str(&text).unwrap();
        assert_eq!(back, pool);
        let bad = json!({"type": "string", "pattern": "x"});
        assert_eq!(
            SchemaNode::from_json(&bad),
            Err(ToolError::UnsupportedKeyword("pattern".into()))
        );
        assert!(SchemaNode::from_json(&json!({"anyOf": []})).is_err());
    }

    #[test]
    fn dispatch_errors() {
        assert_eq!(build_tool_dispatch(&[], ToolFormat::Llama), Err(ToolError::NoTools));
        let t = ToolSpec {
            name: "f".into(),
            params: SchemaNode::Object(vec![]),
        };
        assert!(matches!(
            build_tool_dispatch(&[t.clone(), t], ToolFormat::Llama),
            Err(ToolError::DuplicateToolName(_))
        ));
    }

    #[test]
    fn weather_call_in_free_text() {
        let t = ToolSpec {
            name: "get_weather".into(),
            params: SchemaNode::Object(vec![("city".into(), str_node(None, None))]),
        };
        let r = ReferenceRecognizer::new(&build_tool_dispatch(std::slice::from_ref(&t), ToolFormat::Llama).unwrap());
        assert!(r.accepts(
            b"OK, I will call a tool. <function=get_weather>{\"city\":\"San Francisco\"}</function><|eot_id|>"
        ));
        assert!(!r.accepts_prefix(b"<function=get_weather>{\"town\""));
        let h = ReferenceRecognizer::new(&build_tool_dispatch(&[t], ToolFormat::HarmonyLite).unwrap());
        assert!(h.accepts(
            b"<|channel|>analysis<|message|>think<|end|><|channel|>final<|message|>hi<|end|><|return|>"
        ));
    }

    #[test]
    fn pool_is_deterministic_and_varied() {
        assert_eq!(gen_tool_pool(100, 7), gen_tool_pool(100, 7));
        let one = gen_tool_pool(1, 3);
        let SchemaNode::Object(props) = &one[0].params else { panic!() };
        assert!(!props.is_empty() && props.len() <= 6);
        let pool = gen_tool_pool(20, 9);
        assert!(pool.iter().any(|t| t.params.has_bounds()));
        let names: HashSet<&str> = pool.iter().map(|t| t.name.as_str()).collect();
        assert_eq!(names.len(), 20);
    }

    #[test]
    fn samples_are_accepted() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for t in gen_tool_pool(15, 2) {
            let r = ReferenceRecognizer::new(&schema_to_grammar(&t.params).unwrap());
            for _ in 0..5 {
                let v = sample_value(&t.params, &mut rng);
                assert!(r.accepts(v.as_bytes()), "{}: {v}", t.name);
            }
        }
    }
}
