use std::io;

use thiserror::Error;

use crate::mpc::transport::Tag;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("value {value} outside encodable range (|x| < {bound})")]
    Range { value: f64, bound: f64 },

    #[error("invalid parameters: {0}")]
    Params(String),

    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    Shape { expected: Vec<usize>, got: Vec<usize> },

    #[error("matrix dimensions too large for polynomial degree {degree}: {detail}")]
    TileTooLarge { degree: usize, detail: String },

    #[error("decryption integrity failure: noise exceeded budget at coefficient {index}")]
    Noise { index: usize },

    #[error("malformed ciphertext: {0}")]
    Ciphertext(String),

    #[error("malformed group element in oblivious transfer")]
    Group,

    #[error("transport failure: {0}")]
    Transport(#[from] io::Error),

    #[error("protocol desync at round {round}: expected {expected:?} frame, got tag {got}")]
    Desync { expected: Tag, got: u8, round: u64 },

    #[error("malformed {tag:?} payload: {detail}")]
    Payload { tag: Tag, detail: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("fixed-point overflow in {site}: |{value}| exceeds headroom {limit}")]
    Overflow { site: String, value: f64, limit: f64 },

    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Problems with an on-disk model bundle; each names the offending tensor.
#[derive(Debug, Error)]
pub enum ModelError {
    #[error("bad magic bytes (not a PTIF bundle)")]
    BadMagic,

    #[error("unsupported PTIF version {0}")]
    UnsupportedVersion(u32),

    #[error("malformed manifest: {0}")]
    Manifest(String),

    #[error("missing tensor `{0}`")]
    MissingTensor(String),

    #[error("tensor `{name}` has dims {got:?}, expected {expected:?}")]
    DimMismatch {
        name: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    #[error("tensor `{name}` extends past the end of the blob")]
    Truncated { name: String },

    #[error("tensor `{name}` has unsupported dtype `{dtype}`")]
    Dtype { name: String, dtype: String },

    #[error("invalid model config: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}
