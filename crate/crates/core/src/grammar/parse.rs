use crate::dispatch::TagDispatchSpec;
use crate::error::GrammarError;
use crate::hash::fnv1a;

use super::{Grammar, RuleExpr};

/// Parses GBNF-flavored EBNF text. The root is the rule named `root`, or the
/// first rule when no rule has that name.
pub fn parse_ebnf(text: &str) -> Result<Grammar, GrammarError> {
    let mut p = Parser {
        src: text.as_bytes(),
        pos: 0,
    };
    let mut rules = Vec::new();
    p.skip_ws();
    while !p.eof() {
        let name = p.ident().ok_or_else(|| p.err("expected rule name"))?;
        p.skip_ws();
        if !p.eat_str("::=") {
            return Err(p.err("expected '::='"));
        }
        let expr = p.alternation()?;
        rules.push((name, expr));
        p.skip_ws();
    }
    if rules.is_empty() {
        return Err(GrammarError::Empty);
    }
    let root = if rules.iter().any(|(n, _)| n == "root") {
        "root".to_string()
    } else {
        rules[0].0.clone()
    };
    Ok(Grammar::new(rules, &root)?.with_digest(fnv1a(text.as_bytes())))
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn eof(&self) -> bool {
        self.pos >= self.src.len()
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn err(&self, msg: &str) -> GrammarError {
        let before = &self.src[..self.pos.min(self.src.len())];
        let line = before.iter().filter(|&&b| b == b'\n').count() + 1;
        let col = before.iter().rev().take_while(|&&b| b != b'\n').count() + 1;
        GrammarError::SyntaxError {
            line,
            col,
            msg: msg.to_string(),
        }
    }

    fn skip_ws(&mut self) {
        while let Some(b) = self.peek() {
            if b.is_ascii_whitespace() {
                self.pos += 1;
            } else if b == b'#' {
                while self.peek().is_some_and(|b| b != b'\n') {
                    self.pos += 1;
                }
            } else {
                break;
            }
        }
    }

    fn eat(&mut self, b: u8) -> bool {
        if self.peek() == Some(b) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn eat_str(&mut self, s: &str) -> bool {
        if self.src[self.pos..].starts_with(s.as_bytes()) {
            self.pos += s.len();
            true
        } else {
            false
        }
    }

    fn ident(&mut self) -> Option<String> {
        let start = self.pos;
        match self.peek() {
            Some(b) if b.is_ascii_alphabetic() || b == b'_' => self.pos += 1,
            _ => return None,
        }
        while self
            .peek()
            .is_some_and(|b| b.is_ascii_alphanumeric() || b == b'_' || b == b'-' || b == b'.')
        {
            self.pos += 1;
        }
        Some(String::from_utf8_lossy(&self.src[start..self.pos]).into_owned())
    }

    /// True when the upcoming tokens are `IDENT ::=`, i.e. a new rule starts.
    fn at_rule_start(&mut self) -> bool {
        let save = self.pos;
        let res = self.ident().is_some() && {
            self.skip_ws();
            self.src[self.pos..].starts_with(b"::=")
        };
        self.pos = save;
        res
    }

    fn alternation(&mut self) -> Result<RuleExpr, GrammarError> {
        let mut alts = vec![self.sequence()?];
        loop {
            self.skip_ws();
            if self.eat(b'|') {
                alts.push(self.sequence()?);
            } else {
                break;
            }
        }
        Ok(RuleExpr::choice(alts))
    }

    fn sequence(&mut self) -> Result<RuleExpr, GrammarError> {
        let mut items = Vec::new();
        loop {
            self.skip_ws();
            match self.peek() {
                None | Some(b'|') | Some(b')') | Some(b';') | Some(b',') => break,
                _ if self.at_rule_start() => break,
                _ => items.push(self.postfix()?),
            }
        }
        Ok(RuleExpr::seq(items))
    }

    fn postfix(&mut self) -> Result<RuleExpr, GrammarError> {
        let mut e = self.primary()?;
        loop {
            let (min, max) = match self.peek() {
                Some(b'*') => {
                    self.pos += 1;
                    (0, None)
                }
                Some(b'+') => {
                    self.pos += 1;
                    (1, None)
                }
                Some(b'?') => {
                    // Optional, not a repetition: the body may be nullable.
                    self.pos += 1;
                    e = RuleExpr::Choice(vec![e, RuleExpr::Empty]);
                    continue;
                }
                Some(b'{') => {
                    self.pos += 1;
                    self.bounds()?
                }
                _ => break,
            };
            if max.is_some_and(|m| m < min) {
                return Err(self.err("repetition min exceeds max"));
            }
            e = RuleExpr::repeat(e, min, max);
        }
        Ok(e)
    }

    fn number(&mut self) -> Option<u32> {
        let start = self.pos;
        while self.peek().is_some_and(|b| b.is_ascii_digit()) {
            self.pos += 1;
        }
        std::str::from_utf8(&self.src[start..self.pos]).ok()?.parse().ok()
    }

    fn bounds(&mut self) -> Result<(u32, Option<u32>), GrammarError> {
        self.skip_ws();
        let min = self.number();
        self.skip_ws();
        let res = if self.eat(b',') {
            self.skip_ws();
            let max = self.number();
            (min.unwrap_or(0), max)
        } else {
            let n = min.ok_or_else(|| self.err("expected repetition count"))?;
            (n, Some(n))
        };
        self.skip_ws();
        if !self.eat(b'}') {
            return Err(self.err("expected '}'"));
        }
        Ok(res)
    }

    fn primary(&mut self) -> Result<RuleExpr, GrammarError> {
        match self.peek() {
            Some(b'"') => {
                let bytes = self.string_lit()?;
                Ok(if bytes.is_empty() { RuleExpr::Empty } else { RuleExpr::Bytes(bytes) })
            }
            Some(b'[') => self.class(),
            Some(b'(') => {
                self.pos += 1;
                let e = self.alternation()?;
                self.skip_ws();
                if !self.eat(b')') {
                    return Err(self.err("expected ')'"));
                }
                Ok(e)
            }
            Some(b) if b.is_ascii_alphabetic() || b == b'_' => {
                let name = self.ident().unwrap();
                if name == "TagDispatch" {
                    self.skip_ws();
                    if self.peek() == Some(b'(') {
                        return self.tag_dispatch();
                    }
                }
                Ok(RuleExpr::Ref(name))
            }
            _ => Err(self.err("expected expression")),
        }
    }

    fn escape(&mut self) -> Result<u8, GrammarError> {
        let b = self.peek().ok_or_else(|| self.err("unterminated escape"))?;
        self.pos += 1;
        Ok(match b {
            b'n' => b'\n',
            b't' => b'\t',
            b'r' => b'\r',
            b'0' => 0,
            b'x' => {
                let hex = self
                    .src
                    .get(self.pos..self.pos + 2)
                    .and_then(|h| std::str::from_utf8(h).ok())
                    .and_then(|h| u8::from_str_radix(h, 16).ok())
                    .ok_or_else(|| self.err("bad \\x escape"))?;
                self.pos += 2;
                hex
            }
            other => other,
        })
    }

    fn string_lit(&mut self) -> Result<Vec<u8>, GrammarError> {
        self.pos += 1;
        let mut out = Vec::new();
        loop {
            match self.peek() {
                None => return Err(self.err("unterminated string")),
                Some(b'"') => {
                    self.pos += 1;
                    return Ok(out);
                }
                Some(b'\\') => {
                    self.pos += 1;
                    out.push(self.escape()?);
                }
                Some(b) => {
                    out.push(b);
                    self.pos += 1;
                }
            }
        }
    }

    fn class_byte(&mut self) -> Result<u8, GrammarError> {
        match self.peek() {
            None => Err(self.err("unterminated class")),
            Some(b'\\') => {
                self.pos += 1;
                self.escape()
            }
            Some(b) => {
                self.pos += 1;
                Ok(b)
            }
        }
    }

    fn class(&mut self) -> Result<RuleExpr, GrammarError> {
        self.pos += 1;
        let negated = self.eat(b'^');
        let mut ranges = Vec::new();
        while self.peek() != Some(b']') {
            let lo = self.class_byte()?;
            let hi = if self.peek() == Some(b'-') && self.src.get(self.pos + 1) != Some(&b']') {
                self.pos += 1;
                self.class_byte()?
            } else {
                lo
            };
            if hi < lo {
                return Err(self.err("inverted class range"));
            }
            ranges.push((lo, hi));
        }
        self.pos += 1;
        Ok(RuleExpr::Class { ranges, negated })
    }

    /// `TagDispatch( ("tag", rule), ... ; stop="s", loop=false )`
    fn tag_dispatch(&mut self) -> Result<RuleExpr, GrammarError> {
        self.pos += 1;
        let mut pairs = Vec::new();
        let mut stops = Vec::new();
        let mut loop_after = true;
        loop {
            self.skip_ws();
            match self.peek() {
                Some(b')') => {
                    self.pos += 1;
                    break;
                }
                Some(b',') | Some(b';') => self.pos += 1,
                Some(b'(') => {
                    self.pos += 1;
                    self.skip_ws();
                    if self.peek() != Some(b'"') {
                        return Err(self.err("expected tag string"));
                    }
                    let tag = self.string_lit()?;
                    self.skip_ws();
                    if !self.eat(b',') {
                        return Err(self.err("expected ','"));
                    }
                    self.skip_ws();
                    let rule = self.ident().ok_or_else(|| self.err("expected rule name"))?;
                    self.skip_ws();
                    if !self.eat(b')') {
                        return Err(self.err("expected ')'"));
                    }
                    pairs.push((tag, rule));
                }
                Some(_) => {
                    let key = self.ident().ok_or_else(|| self.err("expected tag pair or option"))?;
                    self.skip_ws();
                    if !self.eat(b'=') {
                        return Err(self.err("expected '='"));
                    }
                    self.skip_ws();
                    match key.as_str() {
                        "stop" => {
                            if self.peek() != Some(b'"') {
                                return Err(self.err("expected stop string"));
                            }
                            stops.push(self.string_lit()?);
                        }
                        "loop" => {
                            let v = self.ident().ok_or_else(|| self.err("expected true/false"))?;
                            loop_after = match v.as_str() {
                                "true" => true,
                                "false" => false,
                                _ => return Err(self.err("expected true/false")),
                            };
                        }
                        _ => return Err(self.err("unknown TagDispatch option")),
                    }
                }
                None => return Err(self.err("unterminated TagDispatch")),
            }
        }
        let spec = TagDispatchSpec {
            pairs,
            stop_strs: stops,
            loop_after_dispatch: loop_after,
        };
        spec.validate()?;
        Ok(RuleExpr::TagDispatch(spec))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_literal() {
        let g = parse_ebnf(r#"root ::= "a""#).unwrap();
        assert_eq!(g.rules().len(), 1);
        assert_eq!(g.root_expr(), &RuleExpr::lit("a"));
    }

    #[test]
    fn bounded_class_repetition() {
        let g = parse_ebnf("root ::= [0-9]{2,4}").unwrap();
        assert_eq!(
            g.root_expr(),
            &RuleExpr::repeat(RuleExpr::class(&[(b'0', b'9')]), 2, Some(4))
        );
    }

    #[test]
    fn unknown_rule() {
        assert_eq!(
            parse_ebnf("root ::= other").unwrap_err(),
            GrammarError::UnknownRule("other".into())
        );
    }

    #[test]
    fn nullable_repetition_is_rejected() {
        assert!(matches!(
            parse_ebnf("root ::= (\"a\"?)*").unwrap_err(),
            GrammarError::NullableRepetitionBody(_)
        ));
    }

    #[test]
    fn syntax_error_position() {
        let err = parse_ebnf("root ::= \"a\"\nb ::= [a-").unwrap_err();
        assert!(matches!(err, GrammarError::SyntaxError { line: 2, .. }), "{err:?}");
    }

    #[test]
    fn sugar_and_multiline_rules() {
        let g = parse_ebnf(
            "# comment\nroot ::= a+ b? \n   | \"x\"\na ::= \"a\"\nb ::= [^\\x00-\\x1f\"]*",
        )
        .unwrap();
        assert_eq!(g.rules().len(), 3);
        assert!(matches!(g.root_expr(), RuleExpr::Choice(v) if v.len() == 2));
    }

    #[test]
    fn tag_dispatch_syntax() {
        let g = parse_ebnf(
            r#"root ::= TagDispatch(("<function=f>", call), ("<x>", call); stop="<|eot|>", loop=false)
call ::= "{}" "</function>""#,
        )
        .unwrap();
        let RuleExpr::TagDispatch(spec) = g.root_expr() else { panic!() };
        assert_eq!(spec.pairs.len(), 2);
        assert_eq!(spec.stop_strs, vec![b"<|eot|>".to_vec()]);
        assert!(!spec.loop_after_dispatch);
    }

    #[test]
    fn tag_dispatch_must_be_root_body() {
        let err = parse_ebnf("root ::= \"a\" x\nx ::= TagDispatch((\"t\", root))").unwrap_err();
        assert!(matches!(err, GrammarError::MisplacedTagDispatch(_)), "{err:?}");
    }
}
