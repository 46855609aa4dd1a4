use nalgebra::DMatrix;
use num_complex::Complex;

use super::statespace::max_singular_value;
use super::StateSpace;
use crate::error::{Error, Result};
use crate::scalar::{cabs, Scalar};

/// Sampled frequency response on a strictly increasing rad/s grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FreqResponse<T: Scalar> {
    frequencies: Vec<T>,
    values: Vec<DMatrix<Complex<T>>>,
}

impl<T: Scalar> FreqResponse<T> {
    pub fn frequencies(&self) -> &[T] {
        &self.frequencies
    }

    pub fn values(&self) -> &[DMatrix<Complex<T>>] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.frequencies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frequencies.is_empty()
    }

    /// Entry `(0, 0)` at every grid point.
    pub fn siso(&self) -> Vec<Complex<T>> {
        self.values.iter().map(|m| m[(0, 0)]).collect()
    }

    pub fn magnitudes(&self) -> Vec<T> {
        self.values.iter().map(|m| cabs(m[(0, 0)])).collect()
    }

    pub fn max_singular_values(&self) -> Vec<T> {
        self.values.iter().map(max_singular_value).collect()
    }
}

/// `n` logarithmically spaced points from `10^lo` to `10^hi`.
pub fn logspace<T: Scalar>(lo: f64, hi: f64, n: usize) -> Vec<T> {
    match n {
        0 => Vec::new(),
        1 => vec![T::lit(10f64.powf(lo))],
        _ => (0..n)
            .map(|i| T::lit(10f64.powf(lo + (hi - lo) * i as f64 / (n - 1) as f64)))
            .collect(),
    }
}

/// Evaluates `C (j w I - A)^-1 B + D` on the grid.
pub fn freq_response<T: Scalar>(sys: &StateSpace<T>, grid: &[T]) -> Result<FreqResponse<T>> {
    if grid.is_empty() {
        return Err(Error::InvalidParameter("frequency grid is empty".into()));
    }
    if grid[0] <= T::zero() {
        return Err(Error::InvalidParameter("frequency grid must be positive".into()));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameter("frequency grid must be strictly increasing".into()));
    }
    let values = grid.iter().map(|&w| sys.eval_jw(w)).collect::<Result<Vec<_>>>()?;
    Ok(FreqResponse { frequencies: grid.to_vec(), values })
}
