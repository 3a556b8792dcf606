use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("no positions")]
    NoPositions,

    #[error("cut-off beyond support: C = {cutoff} exceeds K = {max_count}")]
    CutoffBeyondSupport { cutoff: u64, max_count: u64 },

    #[error("count {count} exceeds ceiling {ceiling}; input looks corrupt")]
    CountAboveCeiling { count: u64, ceiling: u64 },

    #[error("invalid GP parameters: {0}")]
    InvalidParams(String),

    #[error("bound not applicable: {0}")]
    BoundNotApplicable(String),

    #[error("null mass vanishes below C = {0}")]
    NullMassVanishes(u64),

    #[error("unidentifiable: {0}")]
    Unidentifiable(String),

    #[error("no admissible cut-off")]
    NoAdmissibleCutoff,

    #[error("fdr undefined off support (count {0} not observed)")]
    FdrOffSupport(u64),

    #[error("screening threshold undefined: {0}")]
    ScreeningUndefined(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("invalid design: {0}")]
    InvalidDesign(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code: 2 for input problems, 3 for statistical degeneracy.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NoPositions
            | Error::CutoffBeyondSupport { .. }
            | Error::CountAboveCeiling { .. }
            | Error::InvalidParams(_)
            | Error::BoundNotApplicable(_)
            | Error::Parse { .. }
            | Error::InvalidDesign(_)
            | Error::Io(_) => 2,
            Error::NullMassVanishes(_)
            | Error::Unidentifiable(_)
            | Error::NoAdmissibleCutoff
            | Error::FdrOffSupport(_)
            | Error::ScreeningUndefined(_) => 3,
        }
    }
}
