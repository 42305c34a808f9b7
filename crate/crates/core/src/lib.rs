//! Grammar-constrained decoding engine: EBNF grammars with tag dispatch and
//! bounded repetitions are compiled to per-rule FSMs, parsed with an
//! incremental Earley parser, and turned into per-step token masks through a
//! cross-grammar mask cache that can be filled just in time.

pub mod compile;
pub mod corpus;
pub mod dispatch;
pub mod earley;
pub mod error;
pub mod fsm;
pub mod grammar;
pub mod hash;
pub mod maskcache;
pub mod matcher;
pub mod oracle;
pub mod toolgrammar;
pub mod vocab;
pub mod workload;

pub use compile::{compile, CompileOptions, CompiledGrammar, Lookahead, RuleKind};
pub use dispatch::{ac_to_ebnf, AcAutomaton, AcStats, TagDispatchSpec};
pub use error::{CacheError, DispatchError, FsmError, GrammarError, OracleError, ParserError, ToolError, VocabError};
pub use fsm::{Edge, Fsm};
pub use grammar::{compress_repetitions, parse_ebnf, Diagnostic, DiagnosticKind, Grammar, RuleExpr};
pub use vocab::{TokenId, TokenMask, VocabFormat, Vocabulary};
