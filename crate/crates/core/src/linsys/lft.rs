use nalgebra::DMatrix;

use super::statespace::invert;
use super::StateSpace;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Lower LFT `F_l(P, K)`: the last `K.noutputs()` inputs of `P` are driven by
/// `K`, whose inputs are the last `K.ninputs()` outputs of `P`.
pub fn lft_lower<T: Scalar>(p: &StateSpace<T>, k: &StateSpace<T>) -> Result<StateSpace<T>> {
    let nu = k.noutputs();
    let ny = k.ninputs();
    if nu > p.ninputs() || ny > p.noutputs() {
        return Err(Error::Dimension("lft: controller larger than plant channels".into()));
    }
    let nw = p.ninputs() - nu;
    let nz = p.noutputs() - ny;
    let n = p.nstates();
    let nk = k.nstates();

    let b1 = p.b().columns(0, nw).into_owned();
    let b2 = p.b().columns(nw, nu).into_owned();
    let c1 = p.c().rows(0, nz).into_owned();
    let c2 = p.c().rows(nz, ny).into_owned();
    let d11 = p.d().view((0, 0), (nz, nw)).into_owned();
    let d12 = p.d().view((0, nw), (nz, nu)).into_owned();
    let d21 = p.d().view((nz, 0), (ny, nw)).into_owned();
    let d22 = p.d().view((nz, nw), (ny, nu)).into_owned();

    let e = invert(&(DMatrix::<T>::identity(ny, ny) - &d22 * k.d()))
        .ok_or_else(|| Error::IllPosed("I - D22 Dk is singular".into()))?;
    // y = Yx x + Yk xk + Yw w
    let y_x = &e * &c2;
    let y_k = &e * &d22 * k.c();
    let y_w = &e * &d21;
    // u = Ux x + Uk xk + Uw w
    let u_x = k.d() * &y_x;
    let u_k = k.d() * &y_k + k.c();
    let u_w = k.d() * &y_w;

    let nt = n + nk;
    let mut a = DMatrix::zeros(nt, nt);
    a.view_mut((0, 0), (n, n)).copy_from(&(p.a() + &b2 * &u_x));
    a.view_mut((0, n), (n, nk)).copy_from(&(&b2 * &u_k));
    a.view_mut((n, 0), (nk, n)).copy_from(&(k.b() * &y_x));
    a.view_mut((n, n), (nk, nk)).copy_from(&(k.a() + k.b() * &y_k));
    let mut b = DMatrix::zeros(nt, nw);
    b.view_mut((0, 0), (n, nw)).copy_from(&(&b1 + &b2 * &u_w));
    b.view_mut((n, 0), (nk, nw)).copy_from(&(k.b() * &y_w));
    let mut c = DMatrix::zeros(nz, nt);
    c.view_mut((0, 0), (nz, n)).copy_from(&(&c1 + &d12 * &u_x));
    c.view_mut((0, n), (nz, nk)).copy_from(&(&d12 * &u_k));
    let d = &d11 + &d12 * &u_w;
    StateSpace::new(a, b, c, d)
}

/// Upper LFT `F_u(M, Delta)`: the first `Delta.noutputs()` inputs of `M` are
/// driven by `Delta`, whose inputs are the first `Delta.ninputs()` outputs.
pub fn lft_upper<T: Scalar>(m: &StateSpace<T>, delta: &StateSpace<T>) -> Result<StateSpace<T>> {
    let nu = delta.noutputs();
    let ny = delta.ninputs();
    if nu > m.ninputs() || ny > m.noutputs() {
        return Err(Error::Dimension("lft: uncertainty block larger than channels".into()));
    }
    let in_perm: Vec<usize> = (nu..m.ninputs()).chain(0..nu).collect();
    let out_perm: Vec<usize> = (ny..m.noutputs()).chain(0..ny).collect();
    lft_lower(&m.select(&in_perm, &out_perm)?, delta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::cabs;

    #[test]
    fn lower_lft_reproduces_feedback() {
        // P = [G; G] from [r; u] with u fed back as u = -k y : plant G = 1/(s+1)
        let g = StateSpace::from_tf(&[1.0], &[1.0, 1.0]).unwrap();
        // P: inputs [r, u], outputs [y, y], x' = -x + r + u
        let p = StateSpace::new(
            DMatrix::from_element(1, 1, -1.0),
            DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            DMatrix::from_row_slice(2, 1, &[1.0, 1.0]),
            DMatrix::zeros(2, 2),
        )
        .unwrap();
        let cl = lft_lower(&p, &StateSpace::gain(-2.0)).unwrap();
        let direct = g.feedback(&StateSpace::gain(2.0), -1.0).unwrap();
        for w in [0.0, 0.5, 3.0] {
            let e = cabs(cl.eval_siso(w).unwrap() - direct.eval_siso(w).unwrap());
            assert!(e < 1e-14);
        }
    }

    #[test]
    fn upper_lft_with_zero_block_is_m22() {
        let m = StateSpace::new(
            DMatrix::from_element(1, 1, -2.0),
            DMatrix::from_row_slice(1, 2, &[0.5, 1.0]),
            DMatrix::from_row_slice(2, 1, &[1.0, 3.0]),
            DMatrix::from_row_slice(2, 2, &[0.1, 0.0, 0.2, 0.0]),
        )
        .unwrap();
        let closed = lft_upper(&m, &StateSpace::gain(0.0)).unwrap();
        let m22 = m.select(&[1], &[1]).unwrap();
        for w in [0.0, 1.0, 7.0] {
            let e = cabs(closed.eval_siso(w).unwrap() - m22.eval_siso(w).unwrap());
            assert!(e < 1e-15);
        }
    }
}
