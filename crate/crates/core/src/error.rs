use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error("missing tensor `{0}`")]
    MissingTensor(String),

    #[error("tensor `{name}` has shape {found:?}, expected {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("tensor `{0}` contains non-finite values")]
    NonFinite(String),

    #[error("invalid model config: {0}")]
    Config(String),

    #[error("tokenizer: {0}")]
    Tokenizer(String),

    #[error("sequence of {len} tokens exceeds the {max} positions supported by the model")]
    SequenceTooLong { len: usize, max: usize },

    #[error("invalid patch target: {0}")]
    InvalidTarget(String),

    #[error("donor activations do not match the run: {0}")]
    DonorMismatch(String),

    #[error("unknown syllogistic scheme `{0}`")]
    UnknownScheme(String),

    #[error("term `{0}` does not encode to a single token")]
    MultiToken(String),

    #[error("invalid dataset: {0}")]
    Dataset(String),

    #[error("prompt pair is not position-aligned: {0}")]
    Misaligned(String),

    #[error("no replacement term left in the alphabet")]
    AlphabetExhausted,

    #[error("token id {0} is outside the vocabulary")]
    TokenOutOfVocab(u32),

    #[error("head {layer}.{head} is outside the model")]
    InvalidHead { layer: usize, head: usize },

    #[error("sender layer {sender} must precede receiver layer {receiver}")]
    LayerOrder { sender: usize, receiver: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures rooted in the checkpoint, tokenizer or forward pass.
    pub fn is_model_error(&self) -> bool {
        matches!(
            self,
            Error::Checkpoint(_)
                | Error::MissingTensor(_)
                | Error::ShapeMismatch { .. }
                | Error::NonFinite(_)
                | Error::Config(_)
                | Error::Tokenizer(_)
                | Error::SequenceTooLong { .. }
                | Error::DonorMismatch(_)
                | Error::InvalidTarget(_)
                | Error::InvalidHead { .. }
                | Error::LayerOrder { .. }
        )
    }
}
