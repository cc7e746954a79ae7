use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// The bus voltage dropped to or below the floor of the `P/V` load term.
    #[error("bus voltage collapsed to {v_o:.3} V (floor {v_floor} V)")]
    VoltageCollapse { v_o: f64, v_floor: f64 },

    /// Same as [`Error::VoltageCollapse`], raised by the closed loop with run context.
    #[error("plant diverged at t = {t:.4} s: bus voltage {v_o:.3} V")]
    PlantDiverged { t: f64, v_o: f64 },

    #[error("no equilibrium: load {load_w:.1} W exceeds deliverable power")]
    NoEquilibrium { load_w: f64 },

    #[error("invalid configuration: {field}: {message}")]
    InvalidConfig { field: String, message: String },

    #[error("pulses overlap after rescaling: pulse at {first_start_s} s runs into pulse at {second_start_s} s")]
    RejectOverlap { first_start_s: f64, second_start_s: f64 },

    #[error("averaging window [{t_a}, {t_b}] s holds {samples} samples, need at least {required}")]
    WindowTooShort { t_a: f64, t_b: f64, samples: usize, required: usize },

    #[error("reference series is zero at index {index}")]
    ZeroReference { index: usize },

    #[error("series lengths differ: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("reports come from different scenarios ({a} vs {b})")]
    ScenarioMismatch { a: String, b: String },

    #[error("unknown {registry} `{name}` (available: {available})")]
    UnknownStrategy { registry: &'static str, name: String, available: String },

    #[error("input sequence has {actual} entries, expected {expected}")]
    HorizonMismatch { expected: usize, actual: usize },

    #[error("{0}")]
    Io(String),

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub(crate) fn invalid(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::InvalidConfig { field: field.into(), message: message.into() }
    }

    /// True for failures of the simulated plant itself, as opposed to bad input.
    pub fn is_divergence(&self) -> bool {
        matches!(self, Error::VoltageCollapse { .. } | Error::PlantDiverged { .. })
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
