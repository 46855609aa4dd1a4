use thiserror::Error;

/// Best point found by a tuning run that never reached the feasible set.
#[derive(Debug, Clone, PartialEq)]
pub struct InfeasibleReport {
    /// Actuator time constant of the design point, if any.
    pub tau: Option<f64>,
    pub stage: String,
    pub best_params: Vec<f64>,
    /// Largest hard-constraint value at the best point (feasible means <= 1).
    pub violation: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("ill-posed interconnection: {0}")]
    IllPosed(String),
    #[error("wiring error: {0}")]
    Wiring(String),
    #[error("evaluation at {omega} rad/s hits the imaginary-axis pole {pole}")]
    PoleOnAxis { omega: f64, pole: String },
    #[error("system is unstable: {0}")]
    Unstable(String),
    #[error("step metrics undefined: {0}")]
    Metrics(String),
    #[error("pole classification failed: {0}")]
    Classification(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("control allocation failed: {0}")]
    Allocation(String),
    #[error("infeasible {}: violation {:.6} at {:?}", .0.stage, .0.violation, .0.best_params)]
    Infeasible(Box<InfeasibleReport>),
    #[error("schedule error: {0}")]
    Schedule(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
