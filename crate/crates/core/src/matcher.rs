//! Byte-level driver over a compiled grammar: a plain Earley parser, or the
//! TagDispatch mode machine with one sub-parser per dispatched episode.

use crate::compile::CompiledGrammar;
use crate::earley::{Item, Parser};
use crate::error::ParserError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// No TagDispatch root.
    Plain,
    /// Free text; the AC node since the last reset.
    Dispatching(u32),
    /// Inside the grammar of tag `i`.
    Dispatched(u32),
    Terminated,
}

#[derive(Clone, Debug)]
pub struct Matcher<'g> {
    g: &'g CompiledGrammar,
    plain: Option<Parser<'g>>,
    /// Mode after each consumed byte; `log[0]` is the initial mode.
    log: Vec<Mode>,
    /// Dispatched episodes: (position at which the tag ended, sub-parser).
    episodes: Vec<(usize, Parser<'g>)>,
}

impl<'g> Matcher<'g> {
    pub fn new(g: &'g CompiledGrammar) -> Self {
        match &g.dispatch {
            None => Matcher {
                g,
                plain: Some(Parser::new(g)),
                log: Vec::new(),
                episodes: Vec::new(),
            },
            Some(_) => Matcher {
                g,
                plain: None,
                log: vec![Mode::Dispatching(0)],
                episodes: Vec::new(),
            },
        }
    }

    pub fn grammar(&self) -> &'g CompiledGrammar {
        self.g
    }

    pub fn position(&self) -> usize {
        match &self.plain {
            Some(p) => p.position(),
            None => self.log.len() - 1,
        }
    }

    pub fn mode(&self) -> Mode {
        match &self.plain {
            Some(_) => Mode::Plain,
            None => *self.log.last().unwrap(),
        }
    }

    /// The parser currently consuming bytes, if any.
    pub fn active_parser(&self) -> Option<&Parser<'g>> {
        match self.mode() {
            Mode::Plain => self.plain.as_ref(),
            Mode::Dispatched(_) => self.episodes.last().map(|(_, p)| p),
            _ => None,
        }
    }

    pub fn scannable_items(&self) -> Vec<Item> {
        self.active_parser().map(Parser::scannable_items).unwrap_or_default()
    }

    pub fn advance(&mut self, b: u8) -> bool {
        if let Some(p) = &mut self.plain {
            return p.advance(b);
        }
        let d = self.g.dispatch.as_ref().unwrap();
        let next = match *self.log.last().unwrap() {
            Mode::Plain => unreachable!(),
            Mode::Terminated => return false,
            Mode::Dispatching(node) => self.dispatching_step(node, b),
            Mode::Dispatched(i) => {
                let sub = &mut self.episodes.last_mut().unwrap().1;
                if sub.advance(b) {
                    Mode::Dispatched(i)
                } else if sub.can_terminate() && d.spec.loop_after_dispatch {
                    self.dispatching_step(0, b)
                } else {
                    return false;
                }
            }
        };
        self.log.push(next);
        true
    }

    fn dispatching_step(&mut self, node: u32, b: u8) -> Mode {
        let d = self.g.dispatch.as_ref().unwrap();
        let (next, outs) = d.ac.feed(node, b);
        match outs.first() {
            Some(&i) if (i as usize) < d.sub_rules.len() => {
                let start = self.position() + 1;
                self.episodes.push((start, Parser::for_rule(self.g, d.sub_rules[i as usize])));
                Mode::Dispatched(i)
            }
            Some(_) => Mode::Terminated,
            None => Mode::Dispatching(next),
        }
    }

    /// Advances over all of `bytes`, or rolls back and returns the number of
    /// bytes accepted before the failure.
    pub fn advance_all(&mut self, bytes: &[u8]) -> Result<(), usize> {
        let start = self.position();
        for (n, &b) in bytes.iter().enumerate() {
            if !self.advance(b) {
                self.truncate(start);
                return Err(n);
            }
        }
        Ok(())
    }

    pub fn checkpoint(&self) -> usize {
        self.position()
    }

    pub fn rollback(&mut self, marker: usize) -> Result<(), ParserError> {
        let position = self.position();
        if marker > position {
            return Err(ParserError::InvalidMarker { marker, position });
        }
        self.truncate(marker);
        Ok(())
    }

    pub(crate) fn truncate(&mut self, len: usize) {
        if let Some(p) = &mut self.plain {
            p.truncate(len);
            return;
        }
        self.log.truncate(len + 1);
        while self.episodes.last().is_some_and(|(start, _)| *start > len) {
            self.episodes.pop();
        }
        if let (Some(Mode::Dispatched(_)), Some((start, sub))) = (self.log.last(), self.episodes.last_mut()) {
            sub.truncate(len - *start);
        }
    }

    pub fn can_terminate(&self) -> bool {
        if let Some(p) = &self.plain {
            return p.can_terminate();
        }
        let spec = &self.g.dispatch.as_ref().unwrap().spec;
        match *self.log.last().unwrap() {
            Mode::Terminated => true,
            Mode::Dispatching(_) => spec.stop_strs.is_empty(),
            Mode::Dispatched(_) => {
                self.episodes.last().unwrap().1.can_terminate() && (spec.stop_strs.is_empty() || !spec.loop_after_dispatch)
            }
            Mode::Plain => unreachable!(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compile::{compile, CompileOptions};
    use crate::grammar::parse_ebnf;

    fn cg(src: &str) -> CompiledGrammar {
        compile(&parse_ebnf(src).unwrap(), &CompileOptions::default()).unwrap()
    }

    const TOOLS: &str = r#"root ::= TagDispatch(("<function=get_weather>", args); stop="<|eot|>")
args ::= "{\"city\":\"" [^"\\]* "\"}</function>""#;

    #[test]
    fn dispatches_once_at_tag_boundary() {
        let g = cg(TOOLS);
        let mut m = Matcher::new(&g);
        let text = b"OK, I will call a tool. <function=get_weather>{\"city\":\"San Francisco\"}</function>";
        let mut entered = Vec::new();
        for (i, &b) in text.iter().enumerate() {
            let before = m.mode();
            assert!(m.advance(b), "byte {i}");
            if matches!(m.mode(), Mode::Dispatched(_)) && !matches!(before, Mode::Dispatched(_)) {
                entered.push(i);
            }
        }
        assert_eq!(entered, vec![text.iter().position(|&c| c == b'>').unwrap()]);
        assert!(!m.can_terminate());
        m.advance_all(b" done<|eot|>").unwrap();
        assert_eq!(m.mode(), Mode::Terminated);
        assert!(m.can_terminate());
        assert!(!m.advance(b'x'));
    }

    #[test]
    fn free_text_and_rejection_inside() {
        let g = cg(TOOLS);
        let mut m = Matcher::new(&g);
        m.advance_all(b"hello").unwrap();
        assert!(matches!(m.mode(), Mode::Dispatching(_)));
        m.advance_all(b"<function=get_weather>").unwrap();
        assert_eq!(m.advance_all(b"[1]"), Err(0));
    }

    #[test]
    fn rollback_across_episodes() {
        let g = cg(TOOLS);
        let mut m = Matcher::new(&g);
        let call = b"<function=get_weather>{\"city\":\"X\"}</function>";
        m.advance_all(b"a").unwrap();
        let mark = m.checkpoint();
        m.advance_all(call).unwrap();
        m.advance_all(b"mid").unwrap();
        let mid = m.checkpoint();
        m.advance_all(&call[..30]).unwrap();
        m.rollback(mid).unwrap();
        assert!(matches!(m.mode(), Mode::Dispatching(_)));
        m.rollback(mark + 25).unwrap();
        assert_eq!(m.mode(), Mode::Dispatched(0));
        m.advance_all(&call[25..]).unwrap();
        assert!(m.can_terminate() || matches!(m.mode(), Mode::Dispatched(_)));
        m.rollback(0).unwrap();
        assert_eq!(m.mode(), Mode::Dispatching(0));
    }
}
