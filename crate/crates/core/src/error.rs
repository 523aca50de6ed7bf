use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised across the reconstruction chain.
#[derive(Debug, Error)]
pub enum Error {
    #[error("point ({r}, {z}) coincides with the toroidal pole")]
    PoleSingularity { r: f64, z: f64 },

    #[error("radial coordinate must be positive, got r = {r}")]
    AxisDomain { r: f64 },

    #[error("argument outside domain: {0}")]
    Domain(String),

    #[error("point ({r}, {z}) lies on a current filament")]
    FilamentSingularity { r: f64, z: f64 },

    #[error("pole ({r}, {z}) lies outside the convex hull of the sensors")]
    PoleOutsideHull { r: f64, z: f64 },

    #[error("no current given for coil `{0}`")]
    MissingCurrent(String),

    #[error("least-squares system is rank deficient (numerical rank {rank} of {cols}, condition {condition:.3e})")]
    RankDeficient {
        rank: usize,
        cols: usize,
        condition: f64,
    },

    #[error("plasma current {ip:.3e} A is below the detection threshold {threshold:.3e} A")]
    ZeroCurrent { ip: f64, threshold: f64 },

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("mesh quality too low: minimum angle {min_angle_deg:.2} deg")]
    MeshQuality { min_angle_deg: f64 },

    #[error("matrix factorization failed: {0}")]
    SingularMatrix(String),

    #[error("control system is not positive definite at epsilon = {epsilon}: {negative} negative and {zero} zero pivots")]
    SingularControlSystem {
        epsilon: f64,
        negative: usize,
        zero: usize,
    },

    #[error("mesh bank is empty")]
    EmptyBank,

    #[error("no closed iso-contour found: {0}")]
    NoClosedContour(String),

    #[error("unsupported or corrupted file header: {0}")]
    VersionMismatch(String),

    #[error("machine hash mismatch: cache built for {expected}, machine is {found}")]
    HashMismatch { expected: String, found: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Stage name, if the error was raised inside a pipeline stage.
    pub fn stage(&self) -> Option<&'static str> {
        match self {
            Error::Stage { stage, .. } => Some(stage),
            _ => None,
        }
    }

    /// The innermost error, skipping stage wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            e => e,
        }
    }
}

pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| e.in_stage(stage))
    }
}
