use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("alphabet of {alphabet} symbols does not fit a table of 2^{scale_bits}")]
    TableOverflow { alphabet: usize, scale_bits: u32 },

    #[error("symbol {symbol} outside alphabet of size {alphabet}")]
    SymbolOutOfRange { symbol: u64, alphabet: u64 },

    #[error("entropy decode failed: {0}")]
    Decode(&'static str),

    #[error("bit stream truncated")]
    Truncated,

    #[error("bad magic bytes")]
    BadMagic,

    #[error("unsupported container version {0}")]
    UnsupportedVersion(u64),

    #[error("crc mismatch: stored {stored:08x}, computed {computed:08x}")]
    BadCrc { stored: u32, computed: u32 },

    #[error("malformed payload: {0}")]
    Format(String),

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("sequences are not aligned: {original} vs {reconstructed} tokens")]
    Alignment {
        original: usize,
        reconstructed: usize,
    },

    #[error("predictor error{}: {message}", position.map(|p| format!(" at position {p}")).unwrap_or_default())]
    Predictor {
        position: Option<usize>,
        message: String,
    },

    #[error("predictor returned different answers for an identical query")]
    Nondeterministic,

    #[error("{0}")]
    Input(String),
}

impl Error {
    pub fn predictor(message: impl Into<String>) -> Self {
        Error::Predictor {
            position: None,
            message: message.into(),
        }
    }

    pub fn predictor_at(position: usize, message: impl Into<String>) -> Self {
        Error::Predictor {
            position: Some(position),
            message: message.into(),
        }
    }
}
