//! Crate-wide error type.
//!
//! Every fallible operation in the library returns [`Result<T>`]. Variants
//! carry enough context (line numbers, dates, currency codes) to point at the
//! offending input without a debugger.

use thiserror::Error;

/// Library result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A CSV row could not be parsed into the expected schema.
    #[error("malformed row at line {line}: {reason}")]
    MalformedRow { line: usize, reason: String },

    /// Two rows claim the same (date, currency, tenor, bucket) cell.
    #[error("duplicate quote at line {line}: {date} {currency} {bucket}")]
    DuplicateQuote {
        line: usize,
        date: chrono::NaiveDate,
        currency: String,
        bucket: String,
    },

    /// Input file had a header but no data rows.
    #[error("empty input file: {0}")]
    EmptyFile(String),

    /// Bid above ask in a spot or forward quote.
    #[error("crossed market at line {line}: {side} bid {bid} > ask {ask}")]
    CrossedMarket {
        line: usize,
        side: String,
        bid: f64,
        ask: f64,
    },

    /// Option and FX coverage never intersect.
    #[error("no (date, currency) overlap between option and FX panels")]
    NoOverlap,

    /// A currency leaves the panel after entering it.
    #[error("currency {currency} exits the panel after {date} (entry must be monotone)")]
    NonMonotoneEntry {
        currency: String,
        date: chrono::NaiveDate,
    },

    /// Delta-to-strike conversion produced unordered strikes.
    #[error("smile strikes not strictly increasing for {context}")]
    NonMonotoneStrikes { context: String },

    /// Closed-form delta inversion degenerate (non-finite inputs).
    #[error("strike-from-delta inversion failed: {0}")]
    NoConvergence(String),

    /// Weighted design matrix numerically singular.
    #[error("singular weighted design at date index {date_index} (condition {condition:.3e}); bandwidth too small?")]
    SingularDesign { date_index: usize, condition: f64 },

    /// A within-band row sum is zero so the normalized row is undefined.
    #[error("degenerate FEVD row {row} in band {band}: within-band row sum is zero")]
    DegenerateRow { row: usize, band: String },

    /// Fewer than five currencies available for a quintile sort.
    #[error("universe too small for quintile sort: {n} < 5")]
    UniverseTooSmall { n: usize },

    /// A signal needs more trailing history than the sample provides.
    #[error("insufficient history for {signal} at {date}: need {needed} periods")]
    InsufficientHistory {
        signal: String,
        date: chrono::NaiveDate,
        needed: usize,
    },

    /// Bid/ask needed by the cost ledger is missing.
    #[error("missing bid/ask quote for {currency} at {date}")]
    MissingQuote {
        currency: String,
        date: chrono::NaiveDate,
    },

    /// Return series shorter than the statistics contract allows.
    #[error("series too short: {n} observations, need at least {min}")]
    TooShort { n: usize, min: usize },

    /// Constant return series: standard deviation is zero.
    #[error("degenerate series: zero variance, Sharpe undefined")]
    DegenerateSeries,

    /// Regressor matrix not of full column rank.
    #[error("rank-deficient regressor matrix: {0}")]
    RankDeficient(String),

    /// Aligned series of different lengths.
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    /// Second-moment matrix of factor/return cross products is rank deficient.
    #[error("singular GMM moment matrix: {0}")]
    SingularMoments(String),

    /// Date requested outside the estimable range.
    #[error("date index {index} outside estimable range [{lo}, {hi}]")]
    DateOutOfRange { index: usize, lo: usize, hi: usize },

    /// Configuration file problem.
    #[error("config error: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Pipeline exit-code class: 2 config, 3 data, 4 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Io { .. }
            | Error::MalformedRow { .. }
            | Error::DuplicateQuote { .. }
            | Error::EmptyFile(_)
            | Error::CrossedMarket { .. }
            | Error::NoOverlap
            | Error::NonMonotoneEntry { .. }
            | Error::MissingQuote { .. }
            | Error::LengthMismatch { .. }
            | Error::TooShort { .. }
            | Error::UniverseTooSmall { .. }
            | Error::InsufficientHistory { .. }
            | Error::DateOutOfRange { .. } => 3,
            _ => 4,
        }
    }
}
