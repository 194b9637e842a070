use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("invalid shape {shape:?}: {reason}")]
    InvalidShape { shape: Vec<usize>, reason: String },
    #[error("segment length {seg} does not divide axis length {axis}")]
    SegmentMismatch { seg: usize, axis: usize },
    #[error("non-integral conv output: input {h}x{w}, kernel {k}, stride {stride}, padding {pad}")]
    BadConvGeometry {
        h: usize,
        w: usize,
        k: usize,
        stride: usize,
        pad: usize,
    },
    #[error("backward already ran on this graph; rebuild the forward pass first")]
    BackwardConsumed,
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("loss does not depend on any tensor that requires gradients")]
    NoGradPath,
    #[error("gate replay exhausted: forward replayed more gated ops than were recorded")]
    GateReplayExhausted,
    #[error("probe resampling exhausted after {0} attempts (activations too close to a kink)")]
    ProbeExhausted(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),
}
