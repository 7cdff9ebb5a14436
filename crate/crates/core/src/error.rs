use std::io;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("value {value} out of range for fixed-point codec (|x| < 2^{int_bits})")]
    Range { value: f64, int_bits: u32 },

    #[error("ring mismatch: {0} vs {1} bits")]
    RingMismatch(u32, u32),

    #[error("correlated randomness error: {0}")]
    Randomness(String),

    #[error("transport: {0}")]
    Transport(#[from] io::Error),

    #[error("peer deadline exceeded")]
    Timeout,

    #[error("handshake mismatch: local {local}, peer {peer}")]
    Handshake { local: String, peer: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("model error: {0}")]
    Model(String),

    #[error("usage error: {0}")]
    Usage(String),
}

impl Error {
    pub fn randomness(msg: impl Into<String>) -> Self {
        Error::Randomness(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub fn model(msg: impl Into<String>) -> Self {
        Error::Model(msg.into())
    }
}
