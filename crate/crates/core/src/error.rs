use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("layer `{0}` is not a voxel grid")]
    NotVoxelLayer(String),

    #[error("site {site:?} is out of bounds for grid {dims:?}")]
    SiteOutOfBounds { site: [usize; 3], dims: [usize; 3] },

    #[error("duplicate layer name `{0}`")]
    DuplicateLayer(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("parameter store has no sites")]
    EmptyStore,

    #[error("empty input")]
    EmptyInput,

    #[error("{name} = {value} is outside [0, 1]")]
    OutOfUnitRange { name: &'static str, value: f64 },

    #[error("no kept sites in scope")]
    NoKeptSites,

    #[error("non-finite value in layer `{layer}` at index {index}")]
    NonFinite { layer: String, index: usize },

    #[error("non-finite loss at {context}")]
    NonFiniteLoss { context: String },

    #[error("image dimensions differ: {0:?} vs {1:?}")]
    DimensionMismatch((usize, usize), (usize, usize)),

    #[error("image {width}x{height} is smaller than the {window}x{window} window")]
    ImageTooSmall {
        width: usize,
        height: usize,
        window: usize,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("camera index {index} out of range ({count} cameras)")]
    CameraIndex { index: usize, count: usize },

    #[error(transparent)]
    Decode(#[from] DecodeError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Failures while reading a `.rnrf` container.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum DecodeError {
    #[error("bad magic {0:02x?}, expected \"RNRF\"")]
    BadMagic([u8; 4]),

    #[error("unsupported container version {found} (supported: {supported})")]
    UnsupportedVersion { found: u16, supported: u16 },

    #[error("container truncated while reading {0}")]
    Truncated(&'static str),

    #[error("lzma stream error: {0}")]
    Lzma(String),

    #[error("malformed container: {0}")]
    Malformed(String),
}
