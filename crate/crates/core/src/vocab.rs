//! Token vocabularies and per-step token masks.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use base64::Engine as _;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::error::VocabError;

pub type TokenId = u32;

/// Allow-bitmap over token ids. Bit `i` set means token `i` is allowed.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct TokenMask {
    words: Vec<u64>,
    len: usize,
    allowed: usize,
}

impl TokenMask {
    pub fn new(len: usize, allowed: bool) -> Self {
        let nwords = len.div_ceil(64);
        let mut words = vec![if allowed { u64::MAX } else { 0 }; nwords];
        if allowed && !len.is_multiple_of(64) {
            if let Some(last) = words.last_mut() {
                *last = (1u64 << (len % 64)) - 1;
            }
        }
        TokenMask {
            words,
            len,
            allowed: if allowed { len } else { 0 },
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn get(&self, idx: usize) -> bool {
        idx < self.len && self.words[idx / 64] >> (idx % 64) & 1 == 1
    }

    /// Returns an error for out-of-range indices.
    pub fn set(&mut self, idx: usize) -> Result<(), VocabError> {
        self.check(idx)?;
        self.insert(idx);
        Ok(())
    }

    pub fn clear(&mut self, idx: usize) -> Result<(), VocabError> {
        self.check(idx)?;
        self.remove(idx);
        Ok(())
    }

    fn check(&self, idx: usize) -> Result<(), VocabError> {
        if idx >= self.len {
            return Err(VocabError::IndexOutOfRange {
                index: idx,
                size: self.len,
            });
        }
        Ok(())
    }

    /// Unchecked-by-result variant of [`set`](Self::set); panics when out of range.
    #[inline]
    pub fn insert(&mut self, idx: usize) {
        assert!(idx < self.len, "token index {idx} out of range {}", self.len);
        let w = &mut self.words[idx / 64];
        let bit = 1u64 << (idx % 64);
        if *w & bit == 0 {
            *w |= bit;
            self.allowed += 1;
        }
    }

    #[inline]
    pub fn remove(&mut self, idx: usize) {
        assert!(idx < self.len, "token index {idx} out of range {}", self.len);
        let w = &mut self.words[idx / 64];
        let bit = 1u64 << (idx % 64);
        if *w & bit != 0 {
            *w &= !bit;
            self.allowed -= 1;
        }
    }

    pub fn count(&self) -> usize {
        self.allowed
    }

    pub fn union_with(&mut self, other: &TokenMask) {
        assert_eq!(self.len, other.len);
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a |= *b;
        }
        self.recount();
    }

    pub fn subtract(&mut self, other: &TokenMask) {
        assert_eq!(self.len, other.len);
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a &= !*b;
        }
        self.recount();
    }

    pub fn intersects(&self, other: &TokenMask) -> bool {
        self.words.iter().zip(&other.words).any(|(a, b)| a & b != 0)
    }

    fn recount(&mut self) {
        self.allowed = self.words.iter().map(|w| w.count_ones() as usize).sum();
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(wi, &w)| {
            let mut w = w;
            std::iter::from_fn(move || {
                if w == 0 {
                    return None;
                }
                let tz = w.trailing_zeros() as usize;
                w &= w - 1;
                Some(wi * 64 + tz)
            })
        })
    }

    /// Raw bytes in little-endian bit order: bit `i` lives in byte `i / 8` at
    /// position `i % 8`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let nbytes = self.len.div_ceil(8);
        let mut out = Vec::with_capacity(nbytes);
        for i in 0..nbytes {
            out.push((self.words[i / 8] >> ((i % 8) * 8)) as u8);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], len: usize) -> Result<Self, VocabError> {
        if bytes.len() != len.div_ceil(8) {
            return Err(VocabError::BadMaskEncoding(format!(
                "expected {} bytes for {} tokens, got {}",
                len.div_ceil(8),
                len,
                bytes.len()
            )));
        }
        let mut m = TokenMask::new(len, false);
        for (i, &b) in bytes.iter().enumerate() {
            m.words[i / 8] |= (b as u64) << ((i % 8) * 8);
        }
        if !len.is_multiple_of(64) {
            let tail = *m.words.last().unwrap() >> (len % 64);
            if tail != 0 {
                return Err(VocabError::BadMaskEncoding("bits set past mask length".into()));
            }
        }
        m.recount();
        Ok(m)
    }

    /// Lowercase hex of [`to_bytes`](Self::to_bytes).
    pub fn serialize(&self) -> String {
        self.to_bytes().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn deserialize(hex: &str, len: usize) -> Result<Self, VocabError> {
        if !hex.len().is_multiple_of(2) {
            return Err(VocabError::BadMaskEncoding("odd hex length".into()));
        }
        let bytes = (0..hex.len())
            .step_by(2)
            .map(|i| u8::from_str_radix(&hex[i..i + 2], 16))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| VocabError::BadMaskEncoding(e.to_string()))?;
        Self::from_bytes(&bytes, len)
    }
}

impl fmt::Debug for TokenMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "TokenMask({}/{}: ", self.allowed, self.len)?;
        f.debug_list().entries(self.iter()).finish()?;
        write!(f, ")")
    }
}

/// Token id to raw byte string table with one distinguished EOS token.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<Vec<u8>>,
    eos: TokenId,
    sorted: Vec<TokenId>,
}

impl Vocabulary {
    /// `tokens[eos]` must be empty; every other token must be non-empty.
    pub fn new(tokens: Vec<Vec<u8>>, eos: TokenId) -> Result<Self, VocabError> {
        if eos as usize >= tokens.len() {
            return Err(VocabError::MissingEos);
        }
        if !tokens[eos as usize].is_empty() {
            return Err(VocabError::EosNotEmpty);
        }
        if let Some(id) = tokens
            .iter()
            .enumerate()
            .position(|(i, t)| i != eos as usize && t.is_empty())
        {
            return Err(VocabError::EmptyToken(id as TokenId));
        }
        let mut sorted: Vec<TokenId> = (0..tokens.len() as TokenId).filter(|&i| i != eos).collect();
        sorted.sort_by(|&a, &b| tokens[a as usize].cmp(&tokens[b as usize]).then(a.cmp(&b)));
        Ok(Vocabulary { tokens, eos, sorted })
    }

    /// Builds a vocabulary from non-EOS tokens; EOS is appended as the last id.
    pub fn from_strs<S: AsRef<[u8]>>(toks: &[S]) -> Result<Self, VocabError> {
        let mut tokens: Vec<Vec<u8>> = toks.iter().map(|t| t.as_ref().to_vec()).collect();
        let eos = tokens.len() as TokenId;
        tokens.push(Vec::new());
        Self::new(tokens, eos)
    }

    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn eos(&self) -> TokenId {
        self.eos
    }

    pub fn token(&self, id: TokenId) -> &[u8] {
        &self.tokens[id as usize]
    }

    pub fn tokens(&self) -> &[Vec<u8>] {
        &self.tokens
    }

    /// Non-EOS token ids in lexicographic byte order; shared prefixes are adjacent.
    pub fn sorted_ids(&self) -> &[TokenId] {
        &self.sorted
    }

    pub fn find(&self, bytes: &[u8]) -> Option<TokenId> {
        self.sorted
            .binary_search_by(|&id| self.tokens[id as usize].as_slice().cmp(bytes))
            .ok()
            .map(|i| self.sorted[i])
    }

    /// Greedy longest-match tokenization. Fails when some byte has no token.
    pub fn tokenize_greedy(&self, mut text: &[u8]) -> Option<Vec<TokenId>> {
        let max_len = self.tokens.iter().map(Vec::len).max().unwrap_or(0);
        let mut out = Vec::new();
        while !text.is_empty() {
            let mut found = None;
            for l in (1..=max_len.min(text.len())).rev() {
                if let Some(id) = self.find(&text[..l]) {
                    found = Some((id, l));
                    break;
                }
            }
            let (id, l) = found?;
            out.push(id);
            text = &text[l..];
        }
        Some(out)
    }

    pub fn load(path: &Path, format: VocabFormat) -> Result<Self, VocabError> {
        let text = std::fs::read_to_string(path).map_err(|e| VocabError::Io(e.to_string()))?;
        match format {
            VocabFormat::Jsonl => Self::parse_jsonl(&text),
            VocabFormat::Tsv => Self::parse_tsv(&text),
        }
    }

    pub fn parse_jsonl(text: &str) -> Result<Self, VocabError> {
        #[derive(Deserialize)]
        struct Line {
            id: u32,
            bytes_b64: String,
            #[serde(default)]
            eos: bool,
        }
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let l: Line = serde_json::from_str(line).map_err(|_| VocabError::MalformedLine(n + 1))?;
            let bytes = base64::engine::general_purpose::STANDARD
                .decode(l.bytes_b64.as_bytes())
                .map_err(|_| VocabError::MalformedLine(n + 1))?;
            entries.push((l.id, bytes, l.eos));
        }
        Self::assemble(entries)
    }

    pub fn parse_tsv(text: &str) -> Result<Self, VocabError> {
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split('\t');
            let id = parts
                .next()
                .and_then(|s| s.trim().parse::<u32>().ok())
                .ok_or(VocabError::MalformedLine(n + 1))?;
            let bytes = unescape_bytes(parts.next().unwrap_or(""))
                .ok_or(VocabError::MalformedLine(n + 1))?;
            let eos = parts
                .next()
                .map(|f| f.split(',').any(|x| x.trim() == "eos"))
                .unwrap_or(false);
            entries.push((id, bytes, eos));
        }
        Self::assemble(entries)
    }

    fn assemble(entries: Vec<(u32, Vec<u8>, bool)>) -> Result<Self, VocabError> {
        let mut by_id = BTreeMap::new();
        let mut eos = None;
        for (id, bytes, is_eos) in entries {
            if by_id.insert(id, bytes).is_some() {
                return Err(VocabError::DuplicateId(id));
            }
            if is_eos {
                if eos.is_some() {
                    return Err(VocabError::MultipleEos);
                }
                eos = Some(id);
            }
        }
        let eos = eos.ok_or(VocabError::MissingEos)?;
        let n = by_id.len();
        if by_id.keys().last().is_some_and(|&k| k as usize != n - 1) {
            return Err(VocabError::SparseIds);
        }
        let mut tokens: Vec<Vec<u8>> = by_id.into_values().collect();
        tokens[eos as usize].clear();
        Self::new(tokens, eos)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for (i, t) in self.tokens.iter().enumerate() {
            let line = serde_json::json!({
                "id": i,
                "bytes_b64": base64::engine::general_purpose::STANDARD.encode(t),
                "eos": i as TokenId == self.eos,
            });
            out.push_str(&line.to_string());
            out.push('\n');
        }
        out
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (i, t) in self.tokens.iter().enumerate() {
            let flags = if i as TokenId == self.eos { "eos" } else { "" };
            out.push_str(&format!("{i}\t{}\t{flags}\n", escape_bytes(t)));
        }
        out
    }

    /// Seeded synthetic vocabulary of exactly `size` tokens (EOS is the last id).
    ///
    /// Every printable ASCII byte is present as a single-byte token, so any
    /// ASCII text can be tokenized. The remainder mixes words, punctuation
    /// runs, JSON fragments, tool-call tag pieces and non-UTF-8 chunks.
    pub fn synthetic(size: usize, seed: u64) -> Self {
        assert!(size >= 128, "synthetic vocabularies need at least 128 tokens");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut seen = std::collections::HashSet::new();
        let mut tokens: Vec<Vec<u8>> = Vec::new();
        let mut push = |t: Vec<u8>, tokens: &mut Vec<Vec<u8>>| {
            if !t.is_empty() && seen.insert(t.clone()) {
                tokens.push(t);
            }
        };
        for b in 0x20u8..0x7f {
            push(vec![b], &mut tokens);
        }
        push(b"\n".to_vec(), &mut tokens);
        push(b"\t".to_vec(), &mut tokens);
        for frag in SYNTHETIC_FRAGMENTS {
            push(frag.as_bytes().to_vec(), &mut tokens);
        }
        let target = size - 1;
        let mut guard = 0;
        while tokens.len() < target && guard < 100_000 {
            guard += 1;
            let t: Vec<u8> = match rng.gen_range(0..10) {
                0..=3 => {
                    let w = SYNTHETIC_WORDS.choose(&mut rng).unwrap();
                    let mut t = Vec::new();
                    if rng.gen_bool(0.5) {
                        t.push(b' ');
                    }
                    let cut = rng.gen_range(1..=w.len());
                    t.extend_from_slice(&w.as_bytes()[..cut]);
                    t
                }
                4 => (0..rng.gen_range(2..4))
                    .map(|_| *b"0123456789".choose(&mut rng).unwrap())
                    .collect(),
                5 => (0..rng.gen_range(2..4))
                    .map(|_| *b"{}[]\":,<>/=|-_.".choose(&mut rng).unwrap())
                    .collect(),
                6 => {
                    let w = SYNTHETIC_WORDS.choose(&mut rng).unwrap();
                    let mut t = b"\"".to_vec();
                    t.extend_from_slice(w.as_bytes());
                    if rng.gen_bool(0.5) {
                        t.extend_from_slice(b"\":");
                    }
                    t
                }
                7 => (0..rng.gen_range(1..4)).map(|_| rng.gen_range(0x80u8..=0xff)).collect(),
                _ => (0..rng.gen_range(2..5))
                    .map(|_| rng.gen_range(0x21u8..0x7f))
                    .collect(),
            };
            push(t, &mut tokens);
        }
        tokens.truncate(target);
        tokens.shuffle(&mut rng);
        Self::from_strs(&tokens).expect("synthetic vocabulary is well-formed")
    }
}

const SYNTHETIC_FRAGMENTS: &[&str] = &[
    "{\"", "\":\"", "\",\"", "\"}", "\":", "\",", "},", "\"]", "[\"", "true", "false", "null",
    "<function=", "</function>", "</", "function", "<|", "|>", "<|eot_id|>", "eot", "_id",
    "<|channel|>", "<|message|>", "<|end|>", "<|return|>", "analysis", "final", "channel",
    " the", " a", " to", " call", " tool", "OK", " I", " will", "\\\"", "\\\\", ", ", ". ",
    "  ", "00", "10", "12", "-1", ".5", "[]", "{}", "get_weather", "city", "San", " Francisco",
];

const SYNTHETIC_WORDS: &[&str] = &[
    "weather", "city", "name", "value", "query", "location", "unit", "count", "items",
    "search", "result", "date", "time", "price", "amount", "email", "user", "message",
    "hello", "world", "function", "argument", "number", "string", "object", "array",
    "celsius", "flight", "hotel", "order", "status", "limit", "offset", "title",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VocabFormat {
    Jsonl,
    Tsv,
}

impl std::str::FromStr for VocabFormat {
    type Err = VocabError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "jsonl" => Ok(VocabFormat::Jsonl),
            "tsv" => Ok(VocabFormat::Tsv),
            other => Err(VocabError::UnknownFormat(other.to_string())),
        }
    }
}

/// Escapes `\`, tab, newline and every non-printable byte as `\xNN`.
pub fn escape_bytes(bytes: &[u8]) -> String {
    let mut s = String::new();
    for &b in bytes {
        match b {
            b'\\' => s.push_str("\\\\"),
            0x20..=0x7e => s.push(b as char),
            _ => s.push_str(&format!("\\x{b:02x}")),
        }
    }
    s
}

pub fn unescape_bytes(s: &str) -> Option<Vec<u8>> {
    let bytes = s.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'\\' {
            match bytes.get(i + 1)? {
                b'\\' => {
                    out.push(b'\\');
                    i += 2;
                }
                b'n' => {
                    out.push(b'\n');
                    i += 2;
                }
                b't' => {
                    out.push(b'\t');
                    i += 2;
                }
                b'x' => {
                    let hex = s.get(i + 2..i + 4)?;
                    out.push(u8::from_str_radix(hex, 16).ok()?);
                    i += 4;
                }
                _ => return None,
            }
        } else {
            out.push(bytes[i]);
            i += 1;
        }
    }
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn serialize_is_little_endian_bit_order() {
        let mut m = TokenMask::new(8, false);
        m.set(0).unwrap();
        m.set(3).unwrap();
        assert_eq!(m.serialize(), "09");
        let mut m = TokenMask::new(12, false);
        m.set(9).unwrap();
        assert_eq!(m.serialize(), "0002");
    }

    #[test]
    fn default_allowed_counts_all() {
        let m = TokenMask::new(8, true);
        assert_eq!(m.count(), 8);
        let m = TokenMask::new(70, true);
        assert_eq!(m.count(), 70);
        assert_eq!(m.iter().count(), 70);
    }

    #[test]
    fn clear_decrements_only_set_bits() {
        let mut m = TokenMask::new(8, true);
        m.clear(2).unwrap();
        assert_eq!(m.count(), 7);
        m.clear(2).unwrap();
        assert_eq!(m.count(), 7);
        assert!(matches!(m.set(8), Err(VocabError::IndexOutOfRange { .. })));
    }

    #[test]
    fn jsonl_loading() {
        let text = (0..5)
            .map(|i| {
                let b = base64::engine::general_purpose::STANDARD.encode(if i == 4 { "" } else { "ab" }.repeat(i + 1));
                format!("{{\"id\":{i},\"bytes_b64\":\"{b}\",\"eos\":{}}}", i == 4)
            })
            .collect::<Vec<_>>()
            .join("\n");
        let v = Vocabulary::parse_jsonl(&text).unwrap();
        assert_eq!(v.size(), 5);
        assert_eq!(v.eos(), 4);
        assert_eq!(v.token(1), b"abab");
    }

    #[test]
    fn jsonl_errors() {
        let dup = "{\"id\":3,\"bytes_b64\":\"YQ==\",\"eos\":false}\n{\"id\":3,\"bytes_b64\":\"Yg==\",\"eos\":true}";
        assert_eq!(Vocabulary::parse_jsonl(dup), Err(VocabError::DuplicateId(3)));
        let no_eos = "{\"id\":0,\"bytes_b64\":\"YQ==\",\"eos\":false}";
        assert_eq!(Vocabulary::parse_jsonl(no_eos), Err(VocabError::MissingEos));
        assert_eq!(Vocabulary::parse_jsonl("{\"id\":"), Err(VocabError::MalformedLine(1)));
    }

    #[test]
    fn tsv_roundtrip() {
        let v = Vocabulary::from_strs(&[b"a\\b".to_vec(), vec![0xff, 0x00], b"x\ty".to_vec()]).unwrap();
        let back = Vocabulary::parse_tsv(&v.to_tsv()).unwrap();
        assert_eq!(v, back);
        let back = Vocabulary::parse_jsonl(&v.to_jsonl()).unwrap();
        assert_eq!(v, back);
    }

    #[test]
    fn synthetic_is_deterministic_and_sized() {
        let a = Vocabulary::synthetic(500, 3);
        let b = Vocabulary::synthetic(500, 3);
        assert_eq!(a, b);
        assert_eq!(a.size(), 500);
        assert_eq!(a.eos(), 499);
        assert!(a.tokenize_greedy(b"{\"city\":\"San Francisco\"}").is_some());
    }

    proptest! {
        #[test]
        fn mask_hex_roundtrip(len in 0usize..300, bits in proptest::collection::vec(any::<u16>(), 0..64)) {
            let mut m = TokenMask::new(len, false);
            if len > 0 {
                for b in bits {
                    m.insert(b as usize % len);
                }
            }
            let back = TokenMask::deserialize(&m.serialize(), len).unwrap();
            prop_assert_eq!(back.count(), m.count());
            prop_assert_eq!(back, m);
        }
    }
}
