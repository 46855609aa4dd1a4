//! Continuous-time linear-system algebra.

mod freq;
mod hinf;
mod interconnect;
mod lft;
mod minreal;
mod poles;
mod statespace;
mod step;

pub use freq::{freq_response, logspace, FreqResponse};
pub use hinf::{hinf_norm, hinf_peak, HinfPeak, CERTIFY_REL_TOL, HINF_REL_TOL};
pub use interconnect::{indexed_names, Interconnection};
pub use lft::{lft_lower, lft_upper};
pub use minreal::MINREAL_TOL;
pub use poles::{classify_poles, PoleClassification};
pub use statespace::{eigenvalues, max_singular_value, StateSpace};
pub use step::{discretize_zoh, step_dt, step_metrics, step_response, StepMetrics, StepResponse};
