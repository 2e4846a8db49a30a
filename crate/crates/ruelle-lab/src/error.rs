//! Error type shared by all modules, with a stable mapping to CLI exit codes.

use thiserror::Error;

/// Errors produced by the laboratory operations.
#[derive(Debug, Error)]
pub enum Error {
    /// An iterative estimate failed to settle below its tolerance.
    #[error("no convergence: {0}")]
    NonConvergence(String),

    /// A cotangent trajectory never entered the requested neighborhoods.
    #[error("trajectory not dispersed within t_max = {t_max}")]
    NotDispersed { t_max: f64 },

    /// Step control of the transport integrator underflowed.
    #[error("integrator step underflow: {0}")]
    IntegratorStep(String),

    /// The multiplier inequality failed for every admissible integration time.
    #[error("threshold violated: {0}")]
    ThresholdViolated(String),

    /// A bisection bracket had equal outcomes at both endpoints.
    #[error("invalid bracket: {0}")]
    BracketInvalid(String),

    /// The constructed weight was not monotone along the lifted flow.
    #[error("weight monotonicity violated: max H_p m = {max_hp_m:e} > tol = {tol:e}")]
    MonotonicityViolation { max_hp_m: f64, tol: f64 },

    /// An observable spec is outside the exactly representable class.
    #[error("unsupported observable: {0}")]
    UnsupportedObservable(String),

    /// A resolvent evaluation was requested outside its convergent half-plane.
    #[error("outside convergence: Re lambda = {re_lambda} <= C_X = {c_x}")]
    OutsideConvergence { re_lambda: f64, c_x: f64 },

    /// The rational fit exceeded its validation-error ceiling.
    #[error("rational fit diverged: held-out error {fit_error:e} > ceiling {ceiling:e}")]
    FitDiverged { fit_error: f64, ceiling: f64 },

    /// A configuration failed schema or invariant validation.
    #[error("invalid config at {pointer}: {message}")]
    ConfigInvalid { pointer: String, message: String },

    /// Filesystem failure while emitting reports.
    #[error("io failure: {0}")]
    IoFailure(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for the CLI: 0 ok, 2 config, 3 non-convergence,
    /// 4 threshold-violated, 5 fit-diverged, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::ConfigInvalid { .. } => 2,
            Error::NonConvergence(_) | Error::NotDispersed { .. } => 3,
            Error::ThresholdViolated(_) => 4,
            Error::FitDiverged { .. } => 5,
            _ => 1,
        }
    }

    /// Convenience constructor for config-validation failures.
    pub fn config(pointer: impl Into<String>, message: impl Into<String>) -> Self {
        Error::ConfigInvalid {
            pointer: pointer.into(),
            message: message.into(),
        }
    }
}
