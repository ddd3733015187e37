use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("{op}: shape mismatch: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("{op}: invalid attribute: {detail}")]
    Attr { op: &'static str, detail: String },

    #[error("{op}: non-finite value produced")]
    NonFinite { op: &'static str },

    #[error("backward: {0}")]
    Backward(String),

    #[error("degenerate region `{region}`: {detail}")]
    DegenerateRegion { region: String, detail: String },

    #[error("singular affine transform (det = {det:e})")]
    SingularTheta { det: f64 },

    #[error("degenerate normalizer distance {0:e}")]
    DegenerateNormalizer(f64),

    #[error("topology mismatch: {0}")]
    Topology(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("contour: {0}")]
    Contour(String),

    #[error("non-finite loss in phase {phase}, epoch {epoch}, batch {batch} (samples {samples:?})")]
    NonFiniteLoss { phase: u8, epoch: usize, batch: usize, samples: alloc::vec::Vec<usize> },

    #[error("{0}")]
    Invalid(String),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape { op, detail: detail.into() }
    }

    pub(crate) fn attr(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Attr { op, detail: detail.into() }
    }
}
