use thiserror::Error;

/// Error type shared across the toolkit.
#[derive(Error, Debug)]
pub enum KtError {
    #[error("shape mismatch: {context} (lhs {lhs_rows}x{lhs_cols}, rhs {rhs_rows}x{rhs_cols})")]
    Shape {
        context: String,
        lhs_rows: usize,
        lhs_cols: usize,
        rhs_rows: usize,
        rhs_cols: usize,
    },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("format error at line {line}: {message}")]
    CsvFormat { line: usize, message: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl KtError {
    pub fn shape(
        context: impl Into<String>,
        lhs: (usize, usize),
        rhs: (usize, usize),
    ) -> Self {
        KtError::Shape {
            context: context.into(),
            lhs_rows: lhs.0,
            lhs_cols: lhs.1,
            rhs_rows: rhs.0,
            rhs_cols: rhs.1,
        }
    }
}

pub type Result<T> = std::result::Result<T, KtError>;
