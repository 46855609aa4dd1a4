use nalgebra::{DMatrix, Schur};
use num_complex::Complex;

use crate::error::{Error, Result};
use crate::scalar::{cabs, Scalar};

/// Continuous-time LTI system `x' = A x + B u`, `y = C x + D u`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpace<T: Scalar> {
    a: DMatrix<T>,
    b: DMatrix<T>,
    c: DMatrix<T>,
    d: DMatrix<T>,
}

impl<T: Scalar> StateSpace<T> {
    pub fn new(a: DMatrix<T>, b: DMatrix<T>, c: DMatrix<T>, d: DMatrix<T>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::Dimension(format!("A is {}x{}", a.nrows(), a.ncols())));
        }
        if b.nrows() != n {
            return Err(Error::Dimension(format!("B has {} rows, A has {n}", b.nrows())));
        }
        if c.ncols() != n {
            return Err(Error::Dimension(format!("C has {} columns, A has {n}", c.ncols())));
        }
        if d.nrows() != c.nrows() || d.ncols() != b.ncols() {
            return Err(Error::Dimension(format!(
                "D is {}x{}, expected {}x{}",
                d.nrows(),
                d.ncols(),
                c.nrows(),
                b.ncols()
            )));
        }
        Ok(Self { a, b, c, d })
    }

    /// Memoryless system `y = D u`.
    pub fn static_gain(d: DMatrix<T>) -> Self {
        let (p, m) = d.shape();
        Self {
            a: DMatrix::zeros(0, 0),
            b: DMatrix::zeros(0, m),
            c: DMatrix::zeros(p, 0),
            d,
        }
    }

    /// Scalar gain `k`.
    pub fn gain(k: T) -> Self {
        Self::static_gain(DMatrix::from_element(1, 1, k))
    }

    pub fn zero(outputs: usize, inputs: usize) -> Self {
        Self::static_gain(DMatrix::zeros(outputs, inputs))
    }

    pub fn identity(n: usize) -> Self {
        Self::static_gain(DMatrix::identity(n, n))
    }

    /// `1/s`.
    pub fn integrator() -> Self {
        Self {
            a: DMatrix::zeros(1, 1),
            b: DMatrix::from_element(1, 1, T::one()),
            c: DMatrix::from_element(1, 1, T::one()),
            d: DMatrix::zeros(1, 1),
        }
    }

    /// `1 / (tau s + 1)`.
    pub fn first_order_lag(tau: T) -> Result<Self> {
        if tau <= T::zero() {
            return Err(Error::InvalidParameter(format!("time constant {tau} must be positive")));
        }
        Self::from_tf(&[T::one()], &[tau, T::one()])
    }

    /// Realization of `num(s)/den(s)` in controllable canonical form.
    ///
    /// Coefficients are ordered from the highest power down. The transfer
    /// function must be proper.
    pub fn from_tf(num: &[T], den: &[T]) -> Result<Self> {
        let den = strip_leading_zeros(den);
        let num = strip_leading_zeros(num);
        if den.is_empty() {
            return Err(Error::InvalidParameter("denominator is identically zero".into()));
        }
        let n = den.len() - 1;
        if num.len() > den.len() {
            return Err(Error::InvalidParameter("transfer function is improper".into()));
        }
        let lead = den[0];
        let den: Vec<T> = den.iter().map(|&x| x / lead).collect();
        let mut padded = vec![T::zero(); den.len() - num.len()];
        padded.extend(num.iter().map(|&x| x / lead));
        let dgain = padded[0];
        if n == 0 {
            return Ok(Self::gain(dgain));
        }
        let mut a = DMatrix::zeros(n, n);
        for i in 0..n - 1 {
            a[(i, i + 1)] = T::one();
        }
        for j in 0..n {
            a[(n - 1, j)] = -den[n - j];
        }
        let mut b = DMatrix::zeros(n, 1);
        b[(n - 1, 0)] = T::one();
        let mut c = DMatrix::zeros(1, n);
        for j in 0..n {
            c[(0, j)] = padded[n - j] - den[n - j] * dgain;
        }
        Ok(Self { a, b, c, d: DMatrix::from_element(1, 1, dgain) })
    }

    pub fn a(&self) -> &DMatrix<T> {
        &self.a
    }
    pub fn b(&self) -> &DMatrix<T> {
        &self.b
    }
    pub fn c(&self) -> &DMatrix<T> {
        &self.c
    }
    pub fn d(&self) -> &DMatrix<T> {
        &self.d
    }

    pub fn into_parts(self) -> (DMatrix<T>, DMatrix<T>, DMatrix<T>, DMatrix<T>) {
        (self.a, self.b, self.c, self.d)
    }

    pub fn nstates(&self) -> usize {
        self.a.nrows()
    }
    pub fn ninputs(&self) -> usize {
        self.b.ncols()
    }
    pub fn noutputs(&self) -> usize {
        self.c.nrows()
    }
    pub fn is_siso(&self) -> bool {
        self.ninputs() == 1 && self.noutputs() == 1
    }

    /// Eigenvalues of `A`.
    pub fn poles(&self) -> Vec<Complex<T>> {
        eigenvalues(&self.a)
    }

    /// True when every pole has a strictly negative real part.
    pub fn is_stable(&self) -> bool {
        self.poles().iter().all(|p| p.re < T::zero())
    }

    /// Steady-state gain `D - C A^-1 B`.
    pub fn dc_gain(&self) -> Result<DMatrix<T>> {
        if self.nstates() == 0 {
            return Ok(self.d.clone());
        }
        let x = self
            .a
            .clone()
            .lu()
            .solve(&self.b)
            .ok_or_else(|| Error::PoleOnAxis { omega: 0.0, pole: "0".into() })?;
        Ok(&self.d - &self.c * x)
    }

    /// Transfer matrix at complex frequency `s`.
    pub fn eval(&self, s: Complex<T>) -> Result<DMatrix<Complex<T>>> {
        let n = self.nstates();
        let d = self.d.map(|x| Complex::new(x, T::zero()));
        if n == 0 {
            return Ok(d);
        }
        let mut m = self.a.map(|x| Complex::new(-x, T::zero()));
        for i in 0..n {
            m[(i, i)] += s;
        }
        let bc = self.b.map(|x| Complex::new(x, T::zero()));
        let x = m.lu().solve(&bc).ok_or_else(|| Error::PoleOnAxis {
            omega: s.im.as_f64(),
            pole: format!("{}{:+}j", s.re, s.im),
        })?;
        if x.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
            return Err(Error::PoleOnAxis {
                omega: s.im.as_f64(),
                pole: format!("{}{:+}j", s.re, s.im),
            });
        }
        let cc = self.c.map(|x| Complex::new(x, T::zero()));
        Ok(cc * x + d)
    }

    /// Transfer matrix at `s = j omega`.
    pub fn eval_jw(&self, omega: T) -> Result<DMatrix<Complex<T>>> {
        self.eval(Complex::new(T::zero(), omega))
    }

    /// Scalar response of a SISO system at `j omega`.
    pub fn eval_siso(&self, omega: T) -> Result<Complex<T>> {
        Ok(self.eval_jw(omega)?[(0, 0)])
    }

    /// Series connection: the output of `self` drives `next`.
    pub fn series(&self, next: &Self) -> Result<Self> {
        if self.noutputs() != next.ninputs() {
            return Err(Error::Dimension(format!(
                "series: {} outputs feed {} inputs",
                self.noutputs(),
                next.ninputs()
            )));
        }
        let (n1, n2) = (self.nstates(), next.nstates());
        let n = n1 + n2;
        let mut a = DMatrix::zeros(n, n);
        a.view_mut((0, 0), (n1, n1)).copy_from(&self.a);
        a.view_mut((n1, n1), (n2, n2)).copy_from(&next.a);
        a.view_mut((n1, 0), (n2, n1)).copy_from(&(&next.b * &self.c));
        let mut b = DMatrix::zeros(n, self.ninputs());
        b.view_mut((0, 0), (n1, self.ninputs())).copy_from(&self.b);
        b.view_mut((n1, 0), (n2, self.ninputs())).copy_from(&(&next.b * &self.d));
        let mut c = DMatrix::zeros(next.noutputs(), n);
        c.view_mut((0, 0), (next.noutputs(), n1)).copy_from(&(&next.d * &self.c));
        c.view_mut((0, n1), (next.noutputs(), n2)).copy_from(&next.c);
        let d = &next.d * &self.d;
        Self::new(a, b, c, d)
    }

    /// Sum of two systems sharing inputs and outputs.
    pub fn parallel(&self, other: &Self) -> Result<Self> {
        if self.ninputs() != other.ninputs() || self.noutputs() != other.noutputs() {
            return Err(Error::Dimension("parallel: shapes differ".into()));
        }
        let stacked = self.append(other);
        let m = self.ninputs();
        let p = self.noutputs();
        let mut b = DMatrix::zeros(stacked.nstates(), m);
        b.view_mut((0, 0), (self.nstates(), m)).copy_from(&self.b);
        b.view_mut((self.nstates(), 0), (other.nstates(), m)).copy_from(&other.b);
        let mut c = DMatrix::zeros(p, stacked.nstates());
        c.view_mut((0, 0), (p, self.nstates())).copy_from(&self.c);
        c.view_mut((0, self.nstates()), (p, other.nstates())).copy_from(&other.c);
        Self::new(stacked.a, b, c, &self.d + &other.d)
    }

    /// `self - other`.
    pub fn difference(&self, other: &Self) -> Result<Self> {
        self.parallel(&other.scaled(-T::one()))
    }

    /// Block-diagonal concatenation of inputs, outputs and states.
    pub fn append(&self, other: &Self) -> Self {
        let (n1, n2) = (self.nstates(), other.nstates());
        let (m1, m2) = (self.ninputs(), other.ninputs());
        let (p1, p2) = (self.noutputs(), other.noutputs());
        let mut a = DMatrix::zeros(n1 + n2, n1 + n2);
        a.view_mut((0, 0), (n1, n1)).copy_from(&self.a);
        a.view_mut((n1, n1), (n2, n2)).copy_from(&other.a);
        let mut b = DMatrix::zeros(n1 + n2, m1 + m2);
        b.view_mut((0, 0), (n1, m1)).copy_from(&self.b);
        b.view_mut((n1, m1), (n2, m2)).copy_from(&other.b);
        let mut c = DMatrix::zeros(p1 + p2, n1 + n2);
        c.view_mut((0, 0), (p1, n1)).copy_from(&self.c);
        c.view_mut((p1, n1), (p2, n2)).copy_from(&other.c);
        let mut d = DMatrix::zeros(p1 + p2, m1 + m2);
        d.view_mut((0, 0), (p1, m1)).copy_from(&self.d);
        d.view_mut((p1, m1), (p2, m2)).copy_from(&other.d);
        Self { a, b, c, d }
    }

    /// Closes `u = r + sign * K y` around `self`; `sign = -1` is negative feedback.
    pub fn feedback(&self, k: &Self, sign: T) -> Result<Self> {
        if k.ninputs() != self.noutputs() || k.noutputs() != self.ninputs() {
            return Err(Error::Dimension("feedback: controller shape mismatch".into()));
        }
        let (n1, n2) = (self.nstates(), k.nstates());
        let p = self.noutputs();
        let m = self.ninputs();
        let e_inv = DMatrix::<T>::identity(p, p) - (&self.d * &k.d) * sign;
        let e = invert(&e_inv).ok_or_else(|| Error::IllPosed("I - D1 D2 is singular".into()))?;
        // y = E (C1 x1 + s D1 C2 x2 + D1 r)
        let y_x1 = &e * &self.c;
        let y_x2 = &e * (&self.d * &k.c) * sign;
        let y_r = &e * &self.d;
        // u = r + s D2 y + s C2 x2
        let u_x1 = (&k.d * &y_x1) * sign;
        let u_x2 = (&k.d * &y_x2) * sign + &k.c * sign;
        let u_r = DMatrix::<T>::identity(m, m) + (&k.d * &y_r) * sign;
        let n = n1 + n2;
        let mut a = DMatrix::zeros(n, n);
        a.view_mut((0, 0), (n1, n1)).copy_from(&(&self.a + &self.b * &u_x1));
        a.view_mut((0, n1), (n1, n2)).copy_from(&(&self.b * &u_x2));
        a.view_mut((n1, 0), (n2, n1)).copy_from(&(&k.b * &y_x1));
        a.view_mut((n1, n1), (n2, n2)).copy_from(&(&k.a + &k.b * &y_x2));
        let mut b = DMatrix::zeros(n, m);
        b.view_mut((0, 0), (n1, m)).copy_from(&(&self.b * &u_r));
        b.view_mut((n1, 0), (n2, m)).copy_from(&(&k.b * &y_r));
        let mut c = DMatrix::zeros(p, n);
        c.view_mut((0, 0), (p, n1)).copy_from(&y_x1);
        c.view_mut((0, n1), (p, n2)).copy_from(&y_x2);
        Self::new(a, b, c, y_r)
    }

    /// Output scaled by `k`.
    pub fn scaled(&self, k: T) -> Self {
        Self { a: self.a.clone(), b: self.b.clone(), c: &self.c * k, d: &self.d * k }
    }

    /// Adds a constant to the feedthrough.
    pub fn add_feedthrough(&self, d: &DMatrix<T>) -> Result<Self> {
        if d.shape() != self.d.shape() {
            return Err(Error::Dimension("feedthrough shape mismatch".into()));
        }
        Ok(Self { a: self.a.clone(), b: self.b.clone(), c: self.c.clone(), d: &self.d + d })
    }

    /// Subsystem from the listed input indices to the listed output indices.
    pub fn select(&self, inputs: &[usize], outputs: &[usize]) -> Result<Self> {
        if let Some(&i) = inputs.iter().find(|&&i| i >= self.ninputs()) {
            return Err(Error::Dimension(format!("input index {i} out of range")));
        }
        if let Some(&o) = outputs.iter().find(|&&o| o >= self.noutputs()) {
            return Err(Error::Dimension(format!("output index {o} out of range")));
        }
        let b = self.b.select_columns(inputs);
        let c = self.c.select_rows(outputs);
        let d = self.d.select_rows(outputs).select_columns(inputs);
        Self::new(self.a.clone(), b, c, d)
    }

    /// Inverse system; requires an invertible square feedthrough.
    pub fn inverse(&self) -> Result<Self> {
        if self.ninputs() != self.noutputs() {
            return Err(Error::Dimension("inverse of a non-square system".into()));
        }
        let di = invert(&self.d).ok_or_else(|| Error::IllPosed("feedthrough is singular".into()))?;
        let a = &self.a - &self.b * &di * &self.c;
        let b = &self.b * &di;
        let c = -(&di * &self.c);
        Self::new(a, b, c, di)
    }

    /// Applies the state transformation `x = T z`.
    pub fn similarity(&self, t: &DMatrix<T>) -> Result<Self> {
        let ti = invert(t).ok_or_else(|| Error::Numerical("singular similarity transform".into()))?;
        Self::new(&ti * &self.a * t, &ti * &self.b, &self.c * t, self.d.clone())
    }

    /// Converts to another scalar type through `f64`.
    pub fn cast<U: Scalar>(&self) -> StateSpace<U> {
        let f = |x: &T| U::lit(x.as_f64());
        StateSpace {
            a: self.a.map(|x| f(&x)),
            b: self.b.map(|x| f(&x)),
            c: self.c.map(|x| f(&x)),
            d: self.d.map(|x| f(&x)),
        }
    }
}

fn strip_leading_zeros<T: Scalar>(p: &[T]) -> &[T] {
    let first = p.iter().position(|x| *x != T::zero()).unwrap_or(p.len());
    &p[first..]
}

/// Inverse with a relative singularity check.
pub(crate) fn invert<T: Scalar>(m: &DMatrix<T>) -> Option<DMatrix<T>> {
    let n = m.nrows();
    if n == 0 {
        return Some(DMatrix::zeros(0, 0));
    }
    let svd = m.clone().svd(false, false);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if smin <= smax * T::eps() * T::lit(n as f64 * 10.0) || smin == T::zero() {
        return None;
    }
    m.clone().try_inverse()
}

/// Diagonal similarity scaling that equalizes row and column norms
/// (Parlett-Reinsch). Returns the balanced matrix.
pub(crate) fn balance<T: Scalar>(m: &DMatrix<T>) -> DMatrix<T> {
    balance_with_scaling(m).0
}

/// Balanced matrix `D^-1 M D` together with the diagonal of `D`.
pub(crate) fn balance_with_scaling<T: Scalar>(m: &DMatrix<T>) -> (DMatrix<T>, Vec<T>) {
    let n = m.nrows();
    let mut a = m.clone();
    let mut scale = vec![T::one(); n];
    let radix = T::lit(2.0);
    let radix2 = radix * radix;
    let mut converged = false;
    let mut sweeps = 0;
    while !converged && sweeps < 100 {
        converged = true;
        sweeps += 1;
        for i in 0..n {
            let mut c = T::zero();
            let mut r = T::zero();
            for j in 0..n {
                if j != i {
                    c += a[(j, i)].abs();
                    r += a[(i, j)].abs();
                }
            }
            if c == T::zero() || r == T::zero() {
                continue;
            }
            let s = c + r;
            let mut f = T::one();
            let mut cc = c;
            let g = r / radix;
            while cc < g {
                f *= radix;
                cc *= radix2;
            }
            let g = r * radix;
            while cc > g {
                f /= radix;
                cc /= radix2;
            }
            if (cc + r / f) / f < T::lit(0.95) * s {
                converged = false;
                for j in 0..n {
                    a[(i, j)] /= f;
                }
                for j in 0..n {
                    a[(j, i)] *= f;
                }
                scale[i] *= f;
            }
        }
    }
    (a, scale)
}

/// Eigenvalues of a real square matrix, computed on a balanced copy.
pub fn eigenvalues<T: Scalar>(m: &DMatrix<T>) -> Vec<Complex<T>> {
    let n = m.nrows();
    if n == 0 {
        return Vec::new();
    }
    if m.iter().any(|x| !x.is_finite()) {
        return vec![Complex::new(T::lit(f64::NAN), T::zero()); n];
    }
    let bal = balance(m);
    // nalgebra's deflation test is relative to the neighbouring diagonal
    // entries and can stall; loosen it and shift before giving up
    let c = bal.norm().max(T::one()) * T::lit(0.1);
    for tol in [T::eps(), T::lit(1e-14), T::lit(1e-12), T::lit(1e-10)] {
        for shift in [T::zero(), c] {
            let shifted = &bal + DMatrix::<T>::identity(n, n) * shift;
            if let Some(s) = Schur::try_new(shifted, tol.max(T::eps()), 10_000) {
                return s.complex_eigenvalues().iter().map(|l| Complex::new(l.re - shift, l.im)).collect();
            }
        }
    }
    vec![Complex::new(T::lit(f64::NAN), T::zero()); n]
}

/// Largest singular value of a complex matrix.
pub fn max_singular_value<T: Scalar>(m: &DMatrix<Complex<T>>) -> T {
    match m.shape() {
        (0, _) | (_, 0) => T::zero(),
        (1, 1) => cabs(m[(0, 0)]),
        (1, _) | (_, 1) => m.iter().fold(T::zero(), |acc, z| acc + z.norm_sqr()).sqrt(),
        _ => m.clone().svd(false, false).singular_values.max(),
    }
}
