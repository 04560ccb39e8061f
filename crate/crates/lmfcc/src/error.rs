//! Error type shared across the crate.

use std::fmt;
use std::io;
use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug)]
pub enum Error {
    /// Underlying file I/O failure (includes missing files).
    Io { path: PathBuf, source: io::Error },
    /// File is not a RIFF/WAVE container.
    NotRiffWave { path: PathBuf },
    /// WAV is not 16-bit integer PCM.
    NotPcm16 { format_tag: u16, bits_per_sample: u16 },
    /// WAV has more than one channel.
    MultiChannel { channels: u16 },
    /// WAV header or data chunk ends early.
    TruncatedWav { path: PathBuf },
    /// Kernel container does not start with the expected magic bytes.
    BadMagic { found: [u8; 4] },
    /// Kernel container format version is not supported.
    VersionMismatch { found: u32, expected: u32 },
    /// Tensor dims do not multiply out to the stored value count.
    TensorLength { name: String, dims: Vec<u32>, len: usize },
    /// A mandatory tensor is absent from the container.
    MissingTensor { name: String },
    /// Two tensors in one container share a name.
    DuplicateTensor { name: String },
    /// Tensor present but with dims incompatible with the config.
    TensorShape { name: String, expected: Vec<usize>, found: Vec<u32> },
    /// A value that must be finite is NaN or infinite.
    NonFinite { what: &'static str, row: usize, col: usize },
    /// Vector/matrix dimensions disagree with what an operation requires.
    ShapeMismatch { op: &'static str, detail: String },
    /// Configuration violates an invariant (frame geometry, band edges, ...).
    InvalidConfig { reason: String },
    /// Bad argument to a kernel initializer (window length, FFT size, ...).
    InvalidArg { op: &'static str, reason: String },
    /// Frequency/mel conversion called with a negative input.
    NegativeFrequency { value: f64 },
    /// Mel band edges collapse; the filter count does not fit in [fmin, fmax].
    MelEdges { num_filters: usize, fmin_hz: f64, fmax_hz: f64 },
    /// Matrix with zero Frobenius norm where a normalization is required.
    ZeroMatrix { op: &'static str },
    /// QR found a (near-)zero diagonal in R; the matrix is rank-deficient.
    RankDeficient { index: usize, value: f64 },
    /// Signal shorter than one analysis frame.
    SignalTooShort { len: usize, frame_len: usize },
    /// Too few feature frames for an operation (statistics pooling needs >= 2).
    TooFewFrames { frames: usize, required: usize },
    /// Training produced a non-finite loss.
    NonFiniteLoss { step: usize },
    /// Zero vector where a direction is required (cosine scoring).
    ZeroVector { op: &'static str },
    /// Trial score list has an empty genuine or impostor side.
    EmptyScores { side: &'static str },
    /// Target prior outside (0, 1).
    BadPrior { p: f64 },
    /// Malformed line in a score file.
    ScoreParse { line: usize, reason: String },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Io { path, source } => write!(f, "{}: {}", path.display(), source),
            Error::NotRiffWave { path } => {
                write!(f, "{}: not a RIFF/WAVE file", path.display())
            }
            Error::NotPcm16 { format_tag, bits_per_sample } => write!(
                f,
                "unsupported WAV encoding (format tag {format_tag}, {bits_per_sample} bits); only 16-bit PCM is accepted"
            ),
            Error::MultiChannel { channels } => {
                write!(f, "WAV has {channels} channels; only mono is accepted")
            }
            Error::TruncatedWav { path } => {
                write!(f, "{}: truncated WAV header or data", path.display())
            }
            Error::BadMagic { found } => {
                write!(f, "bad container magic {:?} (expected \"LMFC\")", found)
            }
            Error::VersionMismatch { found, expected } => {
                write!(f, "container version {found} (expected {expected})")
            }
            Error::TensorLength { name, dims, len } => write!(
                f,
                "tensor '{name}': dims {dims:?} do not match {len} stored values"
            ),
            Error::MissingTensor { name } => write!(f, "missing tensor '{name}'"),
            Error::DuplicateTensor { name } => write!(f, "duplicate tensor '{name}'"),
            Error::TensorShape { name, expected, found } => write!(
                f,
                "tensor '{name}': dims {found:?} incompatible with configured shape {expected:?}"
            ),
            Error::NonFinite { what, row, col } => {
                write!(f, "non-finite {what} at row {row}, column {col}")
            }
            Error::ShapeMismatch { op, detail } => write!(f, "{op}: shape mismatch ({detail})"),
            Error::InvalidConfig { reason } => write!(f, "invalid config: {reason}"),
            Error::InvalidArg { op, reason } => write!(f, "{op}: {reason}"),
            Error::NegativeFrequency { value } => {
                write!(f, "negative frequency/mel input {value}")
            }
            Error::MelEdges { num_filters, fmin_hz, fmax_hz } => write!(
                f,
                "{num_filters} mel filters do not fit between {fmin_hz} Hz and {fmax_hz} Hz"
            ),
            Error::ZeroMatrix { op } => write!(f, "{op}: zero matrix, normalization undefined"),
            Error::RankDeficient { index, value } => write!(
                f,
                "rank-deficient matrix: |R[{index},{index}]| = {value:e} below threshold"
            ),
            Error::SignalTooShort { len, frame_len } => write!(
                f,
                "signal of {len} samples is shorter than one frame ({frame_len} samples)"
            ),
            Error::TooFewFrames { frames, required } => {
                write!(f, "{frames} feature frames, at least {required} required")
            }
            Error::NonFiniteLoss { step } => write!(f, "non-finite loss at step {step}"),
            Error::ZeroVector { op } => write!(f, "{op}: zero vector"),
            Error::EmptyScores { side } => write!(f, "empty {side} score list"),
            Error::BadPrior { p } => write!(f, "target prior {p} outside (0, 1)"),
            Error::ScoreParse { line, reason } => {
                write!(f, "score file line {line}: {reason}")
            }
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io { source, .. } => Some(source),
            _ => None,
        }
    }
}
