use thiserror::Error;

use crate::geometry::{CameraId, SiteId};

#[derive(Debug, Error)]
pub enum Error {
    #[error("no sites")]
    NoSites,
    #[error("unknown site {0}")]
    UnknownSite(SiteId),
    #[error("camera {0} lies outside the bounding box")]
    CameraOutsideBox(CameraId),
    #[error("profile needs at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("profile samples not monotone: ({0}, {1}) followed by ({2}, {3})")]
    NonMonotone(u64, f64, u64, f64),
    #[error("negative image count {0}")]
    NegativeCount(i64),
    #[error("device {device} cannot take {requested} cameras (max {max})")]
    OverCapacity {
        device: u32,
        requested: usize,
        max: usize,
    },
    #[error("edge {edge}: {required} cameras exceed total device capacity {capacity}")]
    Infeasible {
        edge: u32,
        required: usize,
        capacity: usize,
    },
    #[error("edge {0} has no usable devices")]
    NoDevices(u32),
    #[error("no feasible partition within {iterations} iterations: {diagnosis}")]
    NoFeasiblePartition {
        iterations: usize,
        diagnosis: String,
    },
    #[error("plan does not match scenario: {0}")]
    PlanMismatch(String),
    #[error("image dimensions differ: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("loss diverged at iteration {0}")]
    Diverged(usize),
    #[error("{0}")]
    Invalid(String),
    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
