use nalgebra::DMatrix;

use num_complex::Complex;

use super::statespace::{balance_with_scaling, eigenvalues};
use super::StateSpace;
use crate::scalar::Scalar;

/// Default relative tolerance on singular values when deciding rank.
pub const MINREAL_TOL: f64 = 1e-9;

/// Relative singular-value threshold of the PBH tests.
const PBH_TOL: f64 = 1e-8;

/// Orthonormal basis of the reachable subspace of `(a, b)` via a block
/// Krylov iteration with rank-revealing SVDs. Working in the given
/// coordinates keeps exactly decoupled modes (identical parallel copies, for
/// instance) at exactly zero, which a full orthogonal staircase would not.
fn reachable_basis<T: Scalar>(a: &DMatrix<T>, b: &DMatrix<T>, tol: T) -> DMatrix<T> {
    let n = a.nrows();
    if n == 0 || b.ncols() == 0 {
        return DMatrix::zeros(n, 0);
    }
    let a_scale = a.norm().max(T::one());
    let b_scale = b.norm();
    if b_scale == T::zero() {
        return DMatrix::zeros(n, 0);
    }
    let mut basis = DMatrix::<T>::zeros(n, 0);
    let mut fresh = orth(b, tol * b_scale);
    while fresh.ncols() > 0 && basis.ncols() < n {
        basis = concat_columns(&basis, &fresh);
        if basis.ncols() >= n {
            break;
        }
        let mut w = a * &fresh;
        for _ in 0..2 {
            let proj = basis.transpose() * &w;
            w -= &basis * proj;
        }
        fresh = orth(&w, tol * a_scale);
    }
    basis
}

fn orth<T: Scalar>(m: &DMatrix<T>, threshold: T) -> DMatrix<T> {
    if m.ncols() == 0 {
        return DMatrix::zeros(m.nrows(), 0);
    }
    let svd = m.clone().svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let keep: Vec<usize> = svd
        .singular_values
        .iter()
        .enumerate()
        .filter(|(_, s)| **s > threshold)
        .map(|(i, _)| i)
        .collect();
    u.select_columns(&keep)
}

fn concat_columns<T: Scalar>(a: &DMatrix<T>, b: &DMatrix<T>) -> DMatrix<T> {
    let mut out = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
    out.view_mut((0, 0), (a.nrows(), a.ncols())).copy_from(a);
    out.view_mut((0, a.ncols()), (b.nrows(), b.ncols())).copy_from(b);
    out
}

/// Projects onto the reachable subspace, or returns the input untouched when
/// every state is reachable so that a minimal system keeps its coordinates.
fn reachable_part<T: Scalar>(
    a: &DMatrix<T>,
    b: &DMatrix<T>,
    c: &DMatrix<T>,
    tol: T,
) -> (DMatrix<T>, DMatrix<T>, DMatrix<T>) {
    let q = reachable_basis(a, b, tol);
    if q.ncols() == a.nrows() {
        return (a.clone(), b.clone(), c.clone());
    }
    (q.transpose() * a * &q, q.transpose() * b, c * &q)
}

/// States connected to an input and to an output through the nonzero
/// pattern of `(A, B, C)`.
fn structural_core<T: Scalar>(a: &DMatrix<T>, b: &DMatrix<T>, c: &DMatrix<T>) -> Vec<usize> {
    let n = a.nrows();
    let spread = |seed: Vec<bool>, forward: bool| {
        let mut mark = seed;
        let mut stack: Vec<usize> = (0..n).filter(|&i| mark[i]).collect();
        while let Some(j) = stack.pop() {
            for i in 0..n {
                let nz = if forward { a[(i, j)] != T::zero() } else { a[(j, i)] != T::zero() };
                if nz && !mark[i] {
                    mark[i] = true;
                    stack.push(i);
                }
            }
        }
        mark
    };
    let fwd = spread((0..n).map(|i| b.row(i).iter().any(|v| *v != T::zero())).collect(), true);
    let bwd = spread((0..n).map(|i| c.column(i).iter().any(|v| *v != T::zero())).collect(), false);
    (0..n).filter(|&i| fwd[i] && bwd[i]).collect()
}

impl<T: Scalar> StateSpace<T> {
    /// Drops states that no input reaches or no output sees, judged by the
    /// sparsity pattern alone. Exact, and keeps the remaining coordinates.
    pub fn structural_prune(&self) -> Self {
        let keep = structural_core(self.a(), self.b(), self.c());
        if keep.len() == self.nstates() {
            return self.clone();
        }
        let a = self.a().select_rows(&keep).select_columns(&keep);
        let b = self.b().select_rows(&keep);
        let c = self.c().select_columns(&keep);
        StateSpace::new(a, b, c, self.d().clone()).expect("pruning preserves shapes")
    }

    /// Removes uncontrollable and unobservable modes.
    ///
    /// Ranks are decided with singular values relative to `tol` times the
    /// norm of the matrix being reduced.
    pub fn minimal_with_tol(&self, tol: T) -> Self {
        let pruned = self.structural_prune();
        if pruned.nstates() == 0 {
            return pruned;
        }
        let this = &pruned;
        // diagonal balancing first so the rank thresholds see comparable scales
        let (a0, scale) = balance_with_scaling(this.a());
        let mut b0 = this.b().clone();
        let mut c0 = this.c().clone();
        for (i, &f) in scale.iter().enumerate() {
            b0.row_mut(i).unscale_mut(f);
            c0.column_mut(i).scale_mut(f);
        }
        let (a1, b1, c1) = reachable_part(&a0, &b0, &c0, tol);
        let (a2t, c2t, b2t) = reachable_part(&a1.transpose(), &c1.transpose(), &b1.transpose(), tol);
        let (a2, b2, c2) = (a2t.transpose(), b2t.transpose(), c2t.transpose());
        if a2.nrows() == this.nstates() {
            return pruned;
        }
        StateSpace::new(a2, b2, c2, this.d().clone()).expect("reduction preserves shapes")
    }

    /// Closed right-half-plane poles that are both controllable and
    /// observable by the PBH rank test. Unlike poles of [`Self::minimal`],
    /// this never projects `A`, so clusters of hidden marginal modes cannot
    /// turn into spurious poles.
    pub fn io_unstable_poles(&self) -> Vec<Complex<T>> {
        let pruned = self.structural_prune();
        let n = pruned.nstates();
        if n == 0 {
            return Vec::new();
        }
        let (a, scale) = balance_with_scaling(pruned.a());
        let mut b = pruned.b().clone();
        let mut c = pruned.c().clone();
        for (i, &f) in scale.iter().enumerate() {
            b.row_mut(i).unscale_mut(f);
            c.column_mut(i).scale_mut(f);
        }
        let tol = T::lit(PBH_TOL);
        let cplx = |m: &DMatrix<T>| m.map(|x| Complex::new(x, T::zero()));
        let rank_full = |m: DMatrix<Complex<T>>, scale: T| {
            // non-convergence counts as full rank, so the pole is reported
            match m.try_svd(false, false, T::default_epsilon(), 2000) {
                Some(svd) => svd.singular_values.iter().fold(T::lit(f64::INFINITY), |acc, s| acc.min(*s)) > tol * scale.max(T::one()),
                None => true,
            }
        };
        let (ac, bc, cc) = (cplx(&a), cplx(&b), cplx(&c));
        let ab_scale = a.norm().max(b.norm());
        let ac_scale = a.norm().max(c.norm());
        eigenvalues(&a)
            .into_iter()
            .filter(|l| !(l.re < T::zero()))
            .filter(|l| {
                let shifted = &ac - DMatrix::<Complex<T>>::identity(n, n) * *l;
                let mut ctrb = DMatrix::zeros(n, n + bc.ncols());
                ctrb.view_mut((0, 0), (n, n)).copy_from(&shifted);
                ctrb.view_mut((0, n), (n, bc.ncols())).copy_from(&bc);
                let mut obsv = DMatrix::zeros(n + cc.nrows(), n);
                obsv.view_mut((0, 0), (n, n)).copy_from(&shifted);
                obsv.view_mut((n, 0), (cc.nrows(), n)).copy_from(&cc);
                rank_full(ctrb, ab_scale) && rank_full(obsv.adjoint(), ac_scale)
            })
            .collect()
    }

    /// Minimal realization with the default tolerance.
    pub fn minimal(&self) -> Self {
        self.minimal_with_tol(T::lit(MINREAL_TOL))
    }
}
