use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),
    #[error("profile outside period: {0}")]
    ProfileOutsidePeriod(String),
    #[error("degenerate curve: {0}")]
    DegenerateCurve(String),
    #[error("point not on boundary: {0}")]
    NotOnBoundary(String),
    #[error("mesh generation failed: {0}")]
    MeshFailure(String),
    #[error("mesh has no cut line; generate it with a cut offset")]
    NoCutLine,
    #[error("shift strip intersects the profile: {0}")]
    StripHitsProfile(String),
    #[error("unknown degree of freedom: {0}")]
    UnknownDof(String),
    #[error("auxiliary lifting solve failed: {0}")]
    AuxSolveFailure(String),
    #[error("singular system: {0}")]
    SingularSystem(String),
    #[error("iterative solver did not converge: {0}")]
    NoConvergence(String),
    #[error("incompatible fields: {0}")]
    Incompatible(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
