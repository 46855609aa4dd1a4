use nalgebra::{DMatrix, DVector};

use super::StateSpace;
use crate::error::{Error, Result};
use crate::scalar::{cabs, Scalar};

/// Unit-step characteristics of a stable SISO system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepMetrics<T> {
    /// `(peak - final) / final`, clipped at zero.
    pub overshoot: T,
    /// 10% to 90% rise time, `None` if 90% is never reached.
    pub rise_time: Option<T>,
    /// Entry time into the 2% band, `None` if not settled within the horizon.
    pub settle_time: Option<T>,
    pub final_value: T,
    pub peak_time: T,
}

/// Sampled unit-step response.
#[derive(Debug, Clone, PartialEq)]
pub struct StepResponse<T> {
    pub time: Vec<T>,
    pub output: Vec<T>,
}

/// Fixed integration step: a twentieth of the fastest pole time constant,
/// capped at `horizon / 10^4`.
pub fn step_dt<T: Scalar>(sys: &StateSpace<T>, horizon: T) -> T {
    let fastest = sys.poles().iter().map(|p| cabs(*p)).fold(T::zero(), |a, b| a.max(b));
    let cap = horizon / T::lit(1e4);
    if fastest > T::zero() {
        (T::one() / (fastest * T::lit(20.0))).min(cap)
    } else {
        cap
    }
}

/// Zero-order-hold discretization, exact for piecewise-constant inputs.
pub fn discretize_zoh<T: Scalar>(sys: &StateSpace<T>, dt: T) -> (DMatrix<T>, DMatrix<T>) {
    let (n, m) = (sys.nstates(), sys.ninputs());
    let mut aug = DMatrix::<T>::zeros(n + m, n + m);
    aug.view_mut((0, 0), (n, n)).copy_from(&(sys.a() * dt));
    aug.view_mut((0, n), (n, m)).copy_from(&(sys.b() * dt));
    let e = aug.exp();
    (e.view((0, 0), (n, n)).into_owned(), e.view((0, n), (n, m)).into_owned())
}

/// Simulates the unit step of input 0 observed at output 0.
pub fn step_response<T: Scalar>(sys: &StateSpace<T>, horizon: T, dt: T) -> StepResponse<T> {
    let n = sys.nstates();
    let steps = (horizon / dt).ceil().as_f64() as usize;
    let mut time = Vec::with_capacity(steps + 1);
    let mut output = Vec::with_capacity(steps + 1);
    let c = sys.c().row(0).into_owned();
    let d = sys.d()[(0, 0)];
    if n == 0 {
        for k in 0..=steps {
            time.push(dt * T::lit(k as f64));
            output.push(d);
        }
        return StepResponse { time, output };
    }
    let (phi, gamma) = discretize_zoh(sys, dt);
    let g = gamma.column(0).into_owned();
    let mut x = DVector::<T>::zeros(n);
    for k in 0..=steps {
        time.push(dt * T::lit(k as f64));
        output.push((&c * &x)[(0, 0)] + d);
        x = &phi * &x + &g;
    }
    StepResponse { time, output }
}

fn crossing<T: Scalar>(t: &[T], z: &[T], level: T) -> Option<T> {
    if z[0] >= level {
        return Some(t[0]);
    }
    for k in 1..z.len() {
        if z[k] >= level {
            let frac = (level - z[k - 1]) / (z[k] - z[k - 1]);
            return Some(t[k - 1] + frac * (t[k] - t[k - 1]));
        }
    }
    None
}

/// Overshoot, rise and settling time of the unit step over `horizon` seconds.
pub fn step_metrics<T: Scalar>(sys: &StateSpace<T>, horizon: T) -> Result<StepMetrics<T>> {
    if !sys.is_siso() {
        return Err(Error::Metrics("step metrics need a SISO system".into()));
    }
    if !sys.is_stable() {
        return Err(Error::Unstable("step metrics need a stable system".into()));
    }
    let dc = sys.dc_gain()?[(0, 0)];
    let scale = sys.d()[(0, 0)].abs() + sys.c().norm() * sys.b().norm() + T::eps();
    if dc.abs() <= scale * T::lit(1e-12) {
        return Err(Error::Metrics("zero DC gain".into()));
    }
    let dt = step_dt(sys, horizon);
    let resp = step_response(sys, horizon, dt);
    let z: Vec<T> = resp.output.iter().map(|&y| y / dc).collect();
    let (mut peak, mut peak_k) = (z[0], 0);
    for (k, &v) in z.iter().enumerate() {
        if v > peak {
            peak = v;
            peak_k = k;
        }
    }
    let overshoot = (peak - T::one()).max(T::zero());
    let rise_time = match (crossing(&resp.time, &z, T::lit(0.1)), crossing(&resp.time, &z, T::lit(0.9))) {
        (Some(a), Some(b)) => Some(b - a),
        _ => None,
    };
    let band = T::lit(0.02);
    let last_out = z.iter().rposition(|v| (*v - T::one()).abs() > band);
    let settle_time = match last_out {
        None => Some(T::zero()),
        Some(k) if k + 1 < z.len() => Some(resp.time[k + 1]),
        Some(_) => None,
    };
    Ok(StepMetrics { overshoot, rise_time, settle_time, final_value: dc, peak_time: resp.time[peak_k] })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_order_has_no_overshoot() {
        let g = StateSpace::<f64>::first_order_lag(1.0).unwrap();
        let m = step_metrics(&g, 10.0).unwrap();
        assert_eq!(m.overshoot, 0.0);
        // 10-90 rise time of a unit lag is ln 9
        assert!((m.rise_time.unwrap() - 9f64.ln()).abs() < 2e-3);
        // 2% settling is ln 50
        assert!((m.settle_time.unwrap() - 50f64.ln()).abs() < 2e-3);
        assert!(m.rise_time.unwrap() <= m.settle_time.unwrap());
    }

    #[test]
    fn second_order_overshoot_formula() {
        let g = StateSpace::<f64>::from_tf(&[1.0], &[1.0, 1.0, 1.0]).unwrap();
        let m = step_metrics(&g, 20.0).unwrap();
        let zeta: f64 = 0.5;
        let expect = (-std::f64::consts::PI * zeta / (1.0 - zeta * zeta).sqrt()).exp();
        assert!((m.overshoot - expect).abs() < 1e-4, "{}", m.overshoot);
        assert!((m.overshoot - 0.163).abs() < 1e-3);
    }

    #[test]
    fn zero_dc_gain_is_rejected() {
        let g = StateSpace::<f64>::from_tf(&[1.0, 0.0], &[1.0, 1.0]).unwrap();
        assert!(matches!(step_metrics(&g, 5.0), Err(Error::Metrics(_))));
    }

    #[test]
    fn negative_dc_gain_is_normalized() {
        let g = StateSpace::<f64>::from_tf(&[-2.0], &[1.0, 1.0, 1.0]).unwrap();
        let m = step_metrics(&g, 20.0).unwrap();
        assert_eq!(m.final_value, -2.0);
        assert!((m.overshoot - 0.163).abs() < 1e-3);
    }

    #[test]
    fn unstable_is_rejected() {
        let g = StateSpace::<f64>::from_tf(&[1.0], &[1.0, -1.0]).unwrap();
        assert!(step_metrics(&g, 5.0).is_err());
    }
}
