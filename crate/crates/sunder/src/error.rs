use thiserror::Error;

/// Errors surfaced by the library and the CLI.
///
/// `Input` covers every precondition violation on caller-supplied data
/// (malformed files, out-of-range indices, misaligned lists). `Client`
/// covers chat-completion transport and fixture failures; these are kept
/// separate so the CLI can map them to distinct exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("input error: {0}")]
    Input(String),

    #[error("client error: {0}")]
    Client(String),

    /// Replay fixture has no entry for the request. Never falls through to a
    /// live call.
    #[error("replay fixture miss for digest {digest} ({summary})")]
    FixtureMiss { digest: String, summary: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub fn client(msg: impl Into<String>) -> Self {
        Error::Client(msg.into())
    }
}
