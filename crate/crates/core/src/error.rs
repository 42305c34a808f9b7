use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VocabError {
    #[error("token id {0} defined twice")]
    DuplicateId(u32),
    #[error("vocabulary has no EOS token")]
    MissingEos,
    #[error("vocabulary has more than one EOS token")]
    MultipleEos,
    #[error("EOS token must have an empty byte string")]
    EosNotEmpty,
    #[error("token {0} has an empty byte string")]
    EmptyToken(u32),
    #[error("token ids are not dense")]
    SparseIds,
    #[error("malformed vocabulary line {0}")]
    MalformedLine(usize),
    #[error("unknown vocabulary format {0:?}")]
    UnknownFormat(String),
    #[error("token index {index} out of range for mask of size {size}")]
    IndexOutOfRange { index: usize, size: usize },
    #[error("bad mask encoding: {0}")]
    BadMaskEncoding(String),
    #[error("io error: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GrammarError {
    #[error("syntax error at {line}:{col}: {msg}")]
    SyntaxError { line: usize, col: usize, msg: String },
    #[error("unknown rule {0:?}")]
    UnknownRule(String),
    #[error("duplicate rule {0:?}")]
    DuplicateRule(String),
    #[error("repetition body in rule {0:?} can match the empty string")]
    NullableRepetitionBody(String),
    #[error("repetition in rule {0:?} has min > max")]
    InvalidBounds(String),
    #[error("TagDispatch is only allowed as the whole body of the root rule (found in {0:?})")]
    MisplacedTagDispatch(String),
    #[error("invalid TagDispatch: {0}")]
    Dispatch(#[from] DispatchError),
    #[error("grammar has no rules")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DispatchError {
    #[error("empty tag or stop string")]
    EmptyTag,
    #[error("duplicate tag or stop string {0:?}")]
    DuplicateTag(String),
    #[error("byte {0:#04x} rejected inside dispatched grammar")]
    SubGrammarReject(u8),
    #[error("TagDispatch already terminated")]
    Terminated,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParserError {
    #[error("checkpoint marker {marker} is past current position {position}")]
    InvalidMarker { marker: usize, position: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CacheError {
    #[error("state {dot} of rule {rule:?} has no terminal edges")]
    NotScannable { rule: String, dot: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ToolError {
    #[error("unsupported schema keyword {0:?}")]
    UnsupportedKeyword(String),
    #[error("duplicate tool name {0:?}")]
    DuplicateToolName(String),
    #[error("at least one tool is required")]
    NoTools,
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error(transparent)]
    Grammar(#[from] GrammarError),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OracleError {
    #[error("prefix rejected at byte {0}")]
    InvalidPrefix(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FsmError {
    #[error("rule {0} is referenced before it was hashed")]
    UnhashedReference(u32),
}
