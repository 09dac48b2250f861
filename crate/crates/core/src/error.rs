use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Library-level failures. Variants distinguish bad inputs from genuine
/// numerical breakdowns so callers can map them to distinct exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("log-Laplace transform of law {law_id} is not finite at theta = {theta} (environment index {index})")]
    NonFiniteKappa {
        law_id: String,
        theta: f64,
        index: usize,
    },

    #[error("model is subcritical or critical: annealed kappa(0) = {kappa0} <= 0")]
    Subcritical { kappa0: f64 },

    #[error("no critical tilt: theta*kappa'(theta) - kappa(theta) has no sign change on (0, {theta_max}]")]
    NoCriticalTilt { theta_max: f64 },

    #[error("law {law_id} does not have finite support; exhaustive enumeration is impossible")]
    UnboundedSupport { law_id: String },

    #[error("enumeration at depth {n} would visit about {estimated:.2e} outcomes; the exhaustive check supports depth <= {max_depth} on small laws")]
    EnumerationTooLarge {
        n: usize,
        max_depth: usize,
        estimated: f64,
    },

    #[error("time step {dt} cannot resolve a tube of width {width}: one transition covers +/-5 standard deviations = {reach}")]
    StepSizeTooLarge { dt: f64, width: f64, reach: f64 },

    #[error("surviving mass vanished at step {step} (of {steps}) before the regression window; shorten the horizon or widen the tube")]
    MassUnderflow { step: usize, steps: usize },

    #[error("barrier coefficient a = {a} is outside the regime [0, a_c = {a_c}) handled by the shooting solver")]
    OutsideRegime { a: f64, a_c: f64 },

    #[error("shooting solver failed to bracket the boundary condition: {reason}")]
    ShootingFailed { reason: String },
}
