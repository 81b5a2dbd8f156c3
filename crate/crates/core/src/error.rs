use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the toolkit can report.
///
/// Variants fall into two families: malformed input (bad files, unknown
/// names, invalid configuration) and unmet detection preconditions (a band
/// the grid cannot resolve, a series shorter than one window, ...).
/// [`Error::is_precondition`] tells them apart; the CLI maps the first family
/// to exit code 2 and the second to exit code 3.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("not an RGF1 file: bad magic bytes {found:?}")]
    BadMagic { found: [u8; 4] },

    #[error("header does not match payload layout: {0}")]
    HeaderMismatch(String),

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: u64, found: u64 },

    #[error("{0} unexpected bytes after the payload")]
    TrailingBytes(u64),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("unknown variable `{name}`; available: {available:?}")]
    UnknownVariable { name: String, available: Vec<String> },

    #[error("variable `{variable}` holds fill/NaN values at time index {time_index}")]
    FillValue { variable: String, time_index: usize },

    #[error("invalid region `{0}`")]
    InvalidRegion(String),

    #[error("region `{0}` selects no grid cell")]
    EmptyRegion(String),

    #[error("{band} band unresolved on this grid (shortest resolved wavelength {min_wavelength_km:.1} km)")]
    BandUnresolved { band: String, min_wavelength_km: f64 },

    #[error("zonal transform needs at least 4 longitudes, got {0}")]
    TooFewLongitudes(usize),

    #[error("series too short: need {needed} samples, got {got}")]
    SeriesTooShort { needed: usize, got: usize },

    #[error("day-of-year {doy} has samples from {years} year(s); at least 2 are required")]
    UnderSampledDay { doy: u16, years: usize },

    #[error("percentile level {0} outside (0, 100)")]
    InvalidLevel(f64),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("reference mean is zero: {0}")]
    ZeroReference(String),

    #[error("incomplete calendar coverage: {0}")]
    IncompleteMonths(String),

    #[error("inputs do not match: {0}")]
    Mismatch(String),

    #[error("need at least 2 neighbour candidates within the calendar window, found {found}")]
    TooFewCandidates { found: usize },

    #[error("need at least 2 ensemble members or reports, got {0}")]
    TooFewMembers(usize),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("missing statistics for variable `{0}`")]
    MissingStats(String),

    #[error("adapter failed at step {step}: {message}")]
    Adapter { step: usize, message: String },
}

impl Error {
    /// True when the inputs were well formed but a detector's precondition
    /// does not hold on them.
    pub fn is_precondition(&self) -> bool {
        matches!(
            self,
            Error::BandUnresolved { .. }
                | Error::SeriesTooShort { .. }
                | Error::UnderSampledDay { .. }
                | Error::ZeroReference(_)
                | Error::IncompleteMonths(_)
                | Error::TooFewCandidates { .. }
                | Error::FillValue { .. }
                | Error::EmptyRegion(_)
        )
    }
}
