use num_complex::Complex;

use super::StateSpace;
use crate::error::{Error, Result};
use crate::scalar::{cabs, Scalar};

/// Dominant complex pair plus the remaining poles.
#[derive(Debug, Clone, PartialEq)]
pub struct PoleClassification<T> {
    /// Upper-half-plane member of the pair with the smallest |real part|.
    pub dominant: Complex<T>,
    pub natural_frequency: T,
    pub damping: T,
    /// Real poles ordered by increasing magnitude.
    pub real_poles: Vec<T>,
    /// Upper-half-plane members of the other complex pairs.
    pub other_pairs: Vec<Complex<T>>,
}

/// Splits the poles into the dominant complex pair and the rest.
pub fn classify_poles<T: Scalar>(sys: &StateSpace<T>) -> Result<PoleClassification<T>> {
    let poles = sys.poles();
    let tol = T::eps().sqrt();
    let mut pairs: Vec<Complex<T>> = Vec::new();
    let mut real: Vec<T> = Vec::new();
    for p in poles {
        if p.im.abs() > tol * (cabs(p) + T::eps()) {
            if p.im > T::zero() {
                pairs.push(p);
            }
        } else {
            real.push(p.re);
        }
    }
    if pairs.is_empty() {
        return Err(Error::Classification(format!("no complex pair among {} real poles", real.len())));
    }
    pairs.sort_by(|a, b| a.re.abs().partial_cmp(&b.re.abs()).expect("finite poles"));
    real.sort_by(|a, b| a.abs().partial_cmp(&b.abs()).expect("finite poles"));
    let dominant = pairs.remove(0);
    let wn = cabs(dominant);
    Ok(PoleClassification {
        dominant,
        natural_frequency: wn,
        damping: -dominant.re / wn,
        real_poles: real,
        other_pairs: pairs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn with_poles(re_im: &[(f64, f64)]) -> StateSpace<f64> {
        // real block-diagonal realization
        let n: usize = re_im.iter().map(|(_, im)| if *im == 0.0 { 1 } else { 2 }).sum();
        let mut a = DMatrix::zeros(n, n);
        let mut k = 0;
        for &(re, im) in re_im {
            if im == 0.0 {
                a[(k, k)] = re;
                k += 1;
            } else {
                a[(k, k)] = re;
                a[(k + 1, k + 1)] = re;
                a[(k, k + 1)] = im;
                a[(k + 1, k)] = -im;
                k += 2;
            }
        }
        StateSpace::new(a, DMatrix::from_element(n, 1, 1.0), DMatrix::from_element(1, n, 1.0), DMatrix::zeros(1, 1))
            .unwrap()
    }

    #[test]
    fn third_order_split() {
        let c = classify_poles(&with_poles(&[(-50.0, 0.0), (-5.0, 5.0)])).unwrap();
        assert!((c.natural_frequency - 50f64.sqrt()).abs() < 1e-9);
        assert!((c.dominant.re + 5.0).abs() < 1e-9);
        assert_eq!(c.real_poles.len(), 1);
        assert!((c.real_poles[0] + 50.0).abs() < 1e-9);
    }

    #[test]
    fn all_real_poles_fail() {
        let e = classify_poles(&with_poles(&[(-1.0, 0.0), (-2.0, 0.0), (-3.0, 0.0)]));
        assert!(matches!(e, Err(Error::Classification(_))));
    }

    #[test]
    fn smallest_real_part_wins() {
        let c = classify_poles(&with_poles(&[(-0.5, 1.0), (-0.6, 2.0), (-30.0, 0.0)])).unwrap();
        assert!((c.dominant.re + 0.5).abs() < 1e-9);
        assert!((c.dominant.im - 1.0).abs() < 1e-9);
        assert_eq!(c.other_pairs.len(), 1);
    }
}
