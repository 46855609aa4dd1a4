//! Structured uncertainty models in upper-LFT form.
//!
//! Two families are modeled per motor: a relative error on the control
//! effectiveness coefficient, and an actuator whose time constant is off by a
//! bounded fraction and whose response carries a frequency-weighted
//! multiplicative error. Both are pulled out into a diagonal block `Delta` so
//! they can be sampled, searched over, and closed back in.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linsys::{hinf_norm, indexed_names, lft_upper, Interconnection, StateSpace};
use crate::scalar::Scalar;

/// Default relative radius of the effectiveness coefficients.
pub const DEFAULT_R_C: f64 = 0.2;
/// Default relative radius of the actuator time constant.
pub const DEFAULT_R_TAU: f64 = 0.4;
/// Low-frequency relative actuator error.
pub const DEFAULT_R0: f64 = 0.04;
/// High-frequency relative actuator error.
pub const DEFAULT_R_INF: f64 = 1.0;
/// Gain of sampled all-pass uncertainty sections.
pub const DYNAMIC_BLOCK_GAIN: f64 = 0.999;
/// The five values used by the grid sampling scheme.
pub const GRID5: [f64; 5] = [-1.0, -0.5, 0.0, 0.5, 1.0];

/// Parameter with a bounded relative deviation: `nominal * (1 + radius * delta)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UncertainScalar<T> {
    pub nominal: T,
    pub rel_radius: T,
    pub delta: T,
}

impl<T: Scalar> UncertainScalar<T> {
    pub fn new(nominal: T, rel_radius: T) -> Self {
        Self { nominal, rel_radius, delta: T::zero() }
    }

    pub fn with_delta(self, delta: T) -> Result<Self> {
        if delta.abs() > T::one() {
            return Err(Error::InvalidParameter(format!("|delta| = {} exceeds 1", delta.abs())));
        }
        Ok(Self { delta, ..self })
    }

    pub fn value(&self) -> T {
        self.nominal * (T::one() + self.rel_radius * self.delta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeltaKind {
    /// Real parameter in `[-1, 1]`.
    RealScalar,
    /// Stable SISO transfer function with H-infinity norm below one.
    Dynamic,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeltaBlock {
    pub kind: DeltaKind,
    pub label: String,
}

/// Nominal system `M` whose first `structure.len()` inputs and outputs are
/// the uncertainty channels `u_delta`, `y_delta` (all blocks are 1x1).
#[derive(Debug, Clone, PartialEq)]
pub struct LftModel<T: Scalar> {
    m: StateSpace<T>,
    structure: Vec<DeltaBlock>,
}

impl<T: Scalar> LftModel<T> {
    pub fn new(m: StateSpace<T>, structure: Vec<DeltaBlock>) -> Result<Self> {
        let k = structure.len();
        if m.ninputs() < k || m.noutputs() < k {
            return Err(Error::Dimension(format!(
                "{k} uncertainty channels but M is {}x{}",
                m.noutputs(),
                m.ninputs()
            )));
        }
        Ok(Self { m, structure })
    }

    pub fn system(&self) -> &StateSpace<T> {
        &self.m
    }

    pub fn structure(&self) -> &[DeltaBlock] {
        &self.structure
    }

    pub fn n_delta(&self) -> usize {
        self.structure.len()
    }

    pub fn n_real(&self) -> usize {
        self.structure.iter().filter(|b| b.kind == DeltaKind::RealScalar).count()
    }

    pub fn n_dynamic(&self) -> usize {
        self.n_delta() - self.n_real()
    }

    /// The performance channels `M22`.
    pub fn nominal(&self) -> StateSpace<T> {
        let k = self.n_delta();
        let ins: Vec<usize> = (k..self.m.ninputs()).collect();
        let outs: Vec<usize> = (k..self.m.noutputs()).collect();
        self.m.select(&ins, &outs).expect("indices in range")
    }

    /// The uncertainty-to-uncertainty channels `M11`.
    pub fn m11(&self) -> StateSpace<T> {
        let k: Vec<usize> = (0..self.n_delta()).collect();
        self.m.select(&k, &k).expect("indices in range")
    }

    pub fn zero_sample(&self) -> DeltaSample<T> {
        DeltaSample {
            real_scalars: vec![T::zero(); self.n_real()],
            dynamic_blocks: vec![StateSpace::gain(T::zero()); self.n_dynamic()],
        }
    }
}

/// One realization of the uncertainty block, in structure order per kind.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaSample<T: Scalar> {
    pub real_scalars: Vec<T>,
    pub dynamic_blocks: Vec<StateSpace<T>>,
}

impl<T: Scalar> DeltaSample<T> {
    /// Validates bounds: `|delta| <= 1` and every dynamic block stable with
    /// norm below one.
    pub fn new(real_scalars: Vec<T>, dynamic_blocks: Vec<StateSpace<T>>) -> Result<Self> {
        if let Some(d) = real_scalars.iter().find(|d| d.abs() > T::one()) {
            return Err(Error::InvalidParameter(format!("real uncertainty {d} outside [-1, 1]")));
        }
        for blk in &dynamic_blocks {
            if !blk.is_siso() {
                return Err(Error::Dimension("dynamic uncertainty blocks must be SISO".into()));
            }
            let norm = hinf_norm(blk, T::lit(1e-6))?;
            if norm >= T::one() {
                return Err(Error::InvalidParameter(format!("dynamic block norm {norm} is not below 1")));
            }
        }
        Ok(Self { real_scalars, dynamic_blocks })
    }

    /// Same real parameters with every dynamic block set to zero.
    pub fn without_dynamics(&self) -> Self {
        Self {
            real_scalars: self.real_scalars.clone(),
            dynamic_blocks: vec![StateSpace::gain(T::zero()); self.dynamic_blocks.len()],
        }
    }

    /// Block-diagonal realization laid out according to `structure`.
    pub fn to_system(&self, structure: &[DeltaBlock]) -> Result<StateSpace<T>> {
        let n_real = structure.iter().filter(|b| b.kind == DeltaKind::RealScalar).count();
        if n_real != self.real_scalars.len() || structure.len() - n_real != self.dynamic_blocks.len() {
            return Err(Error::Dimension(format!(
                "sample has {} real / {} dynamic blocks, structure expects {} / {}",
                self.real_scalars.len(),
                self.dynamic_blocks.len(),
                n_real,
                structure.len() - n_real
            )));
        }
        let (mut ri, mut di) = (0, 0);
        let mut out = StateSpace::zero(0, 0);
        for blk in structure {
            let next = match blk.kind {
                DeltaKind::RealScalar => {
                    ri += 1;
                    StateSpace::gain(self.real_scalars[ri - 1])
                }
                DeltaKind::Dynamic => {
                    di += 1;
                    self.dynamic_blocks[di - 1].clone()
                }
            };
            out = out.append(&next);
        }
        Ok(out)
    }
}

/// Effectiveness row `[-Cp, -Cp, Cp, Cp]` of roll control for a symmetric quadrotor.
pub fn roll_effectiveness<T: Scalar>(cp: T) -> Vec<T> {
    vec![-cp, -cp, cp, cp]
}

/// Static LFT of the perturbed roll effectiveness row.
///
/// Inputs `[u_delta(4), m(4)]`, outputs `[y_delta(4), omega_dot]`; closing with
/// `diag(delta_i)` scales coefficient `i` by `1 + r_c delta_i`.
pub fn build_effectiveness_lft<T: Scalar>(cp: T, r_c: T, n_motors: usize) -> Result<LftModel<T>> {
    if cp <= T::zero() {
        return Err(Error::InvalidParameter(format!("Cp = {cp} must be positive")));
    }
    if r_c < T::zero() || r_c >= T::one() {
        return Err(Error::InvalidParameter(format!(
            "r_C = {r_c} must lie in [0, 1); larger radii allow a sign flip"
        )));
    }
    if n_motors != 4 {
        return Err(Error::InvalidParameter(format!("{n_motors} motors; the roll row is defined for 4")));
    }
    let e = roll_effectiveness(cp);
    let k = n_motors;
    let mut d = DMatrix::zeros(k + 1, 2 * k);
    for i in 0..k {
        d[(i, k + i)] = T::one();
        d[(k, i)] = r_c * e[i];
        d[(k, k + i)] = e[i];
    }
    let structure = (0..k)
        .map(|i| DeltaBlock { kind: DeltaKind::RealScalar, label: format!("delta_C[{i}]") })
        .collect();
    LftModel::new(StateSpace::static_gain(d), structure)
}

/// Multiplicative actuator error weight `(tau_w s + r0) / ((tau_w / r_inf) s + 1)`
/// with `tau_w = tau / 5`.
pub fn build_wm<T: Scalar>(tau: T, r0: T, r_inf: T) -> Result<StateSpace<T>> {
    if tau <= T::zero() || r0 < T::zero() || r_inf <= T::zero() {
        return Err(Error::InvalidParameter("w_m needs tau > 0, r0 >= 0, r_inf > 0".into()));
    }
    let tau_w = tau / T::lit(5.0);
    StateSpace::from_tf(&[tau_w, r0], &[tau_w / r_inf, T::one()])
}

/// LFT of `n_motors` first-order actuators with parametric time-constant
/// error and weighted multiplicative dynamic error.
///
/// Inputs `[u_dtau(n), u_dyn(n), m_c(n)]`, outputs `[y_dtau(n), y_dyn(n), m(n)]`.
/// The structure lists the `n` real blocks before the `n` dynamic ones.
pub fn build_actuator_lft<T: Scalar>(
    tau: T,
    r_tau: T,
    wm: &StateSpace<T>,
    n_motors: usize,
) -> Result<LftModel<T>> {
    if tau <= T::zero() {
        return Err(Error::InvalidParameter(format!("tau = {tau} must be positive")));
    }
    if r_tau < T::zero() || r_tau >= T::one() {
        return Err(Error::InvalidParameter(format!("r_tau = {r_tau} must lie in [0, 1)")));
    }
    if !wm.is_siso() {
        return Err(Error::Dimension("w_m must be SISO".into()));
    }
    let n = n_motors;
    let u_dtau = indexed_names("u_dtau", n);
    let u_dyn = indexed_names("u_dyn", n);
    let m_c = indexed_names("m_c", n);
    let y_dtau = indexed_names("y_dtau", n);
    let y_dyn = indexed_names("y_dyn", n);
    let m = indexed_names("m", n);
    let mut ic = Interconnection::new();
    for i in 0..n {
        let err = format!("err[{i}]");
        let lag = format!("lag[{i}]");
        // tau * lag' = m_c - lag - u_dtau ;  y_dtau = r_tau (m_c - lag - u_dtau)
        ic.sum(&err, &[(m_c[i].as_str(), T::one()), (lag.as_str(), -T::one()), (u_dtau[i].as_str(), -T::one())]);
        ic.block(StateSpace::integrator().scaled(T::one() / tau), &[err.as_str()], &[lag.as_str()]);
        ic.sum(&y_dtau[i], &[(err.as_str(), r_tau)]);
        ic.block(wm.clone(), &[lag.as_str()], &[y_dyn[i].as_str()]);
        ic.sum(&m[i], &[(lag.as_str(), T::one()), (u_dyn[i].as_str(), T::one())]);
    }
    let inputs: Vec<&String> = u_dtau.iter().chain(&u_dyn).chain(&m_c).collect();
    let outputs: Vec<&String> = y_dtau.iter().chain(&y_dyn).chain(&m).collect();
    ic.inputs(&inputs).outputs(&outputs);
    let structure = (0..n)
        .map(|i| DeltaBlock { kind: DeltaKind::RealScalar, label: format!("delta_tau[{i}]") })
        .chain((0..n).map(|i| DeltaBlock { kind: DeltaKind::Dynamic, label: format!("Delta_tau[{i}]") }))
        .collect();
    LftModel::new(ic.build_raw()?, structure)
}

/// How real parameters are drawn.
pub enum SamplingScheme<'a, T: Scalar> {
    /// Each real parameter uniformly from `{-1, -0.5, 0, 0.5, 1}`.
    Grid5,
    /// Each real parameter uniformly from `[-1, 1]`.
    Random,
    /// Sign vertex maximizing the objective, by exhaustive search.
    Extreme(&'a (dyn Fn(&DeltaSample<T>) -> f64 + Sync)),
}

/// Random first-order all-pass section `g (s - a)/(s + a)` with
/// `a` log-uniform in `[1, 1e4]` rad/s and `|g| = 0.999`.
pub fn random_allpass<T: Scalar, R: Rng>(rng: &mut R) -> StateSpace<T> {
    let a = 10f64.powf(rng.random_range(0.0..4.0));
    let g = if rng.random_bool(0.5) { DYNAMIC_BLOCK_GAIN } else { -DYNAMIC_BLOCK_GAIN };
    StateSpace::from_tf(&[T::lit(g), T::lit(-g * a)], &[T::one(), T::lit(a)]).expect("proper section")
}

/// Largest number of real parameters searched exhaustively.
pub const MAX_VERTEX_SEARCH: usize = 16;

/// Draws a realization of the model's uncertainty; deterministic in `seed`.
pub fn sample_delta<T: Scalar>(model: &LftModel<T>, scheme: &SamplingScheme<'_, T>, seed: u64) -> Result<DeltaSample<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nr = model.n_real();
    let nd = model.n_dynamic();
    let real = match scheme {
        SamplingScheme::Grid5 => (0..nr).map(|_| T::lit(GRID5[rng.random_range(0..5)])).collect(),
        SamplingScheme::Random => (0..nr).map(|_| T::lit(rng.random_range(-1.0..=1.0))).collect(),
        SamplingScheme::Extreme(_) => vec![T::zero(); nr],
    };
    let dynamic: Vec<StateSpace<T>> = (0..nd).map(|_| random_allpass(&mut rng)).collect();
    let sample = DeltaSample { real_scalars: real, dynamic_blocks: dynamic };
    match scheme {
        SamplingScheme::Extreme(objective) => worst_vertex(nr, &sample, objective),
        _ => Ok(sample),
    }
}

/// Exhaustive search of the `2^k` sign vertices of the real parameters,
/// holding the dynamic blocks of `base` fixed. Ties keep the first vertex.
pub fn worst_vertex<T: Scalar>(
    n_real: usize,
    base: &DeltaSample<T>,
    objective: &(dyn Fn(&DeltaSample<T>) -> f64 + Sync),
) -> Result<DeltaSample<T>> {
    if n_real > MAX_VERTEX_SEARCH {
        return Err(Error::InvalidParameter(format!("{n_real} real parameters is too many for vertex search")));
    }
    let mut best: Option<(f64, DeltaSample<T>)> = None;
    for mask in 0u32..(1u32 << n_real) {
        let cand = DeltaSample {
            real_scalars: (0..n_real)
                .map(|i| if mask & (1 << i) != 0 { T::one() } else { -T::one() })
                .collect(),
            dynamic_blocks: base.dynamic_blocks.clone(),
        };
        let v = objective(&cand);
        if best.as_ref().is_none_or(|(bv, _)| v > *bv) {
            best = Some((v, cand));
        }
    }
    Ok(best.expect("at least one vertex").1)
}

/// Upper-LFT closure `F_u(M, Delta)`.
pub fn close_lft<T: Scalar>(model: &LftModel<T>, sample: &DeltaSample<T>) -> Result<StateSpace<T>> {
    let delta = sample.to_system(model.structure())?;
    lft_upper(model.system(), &delta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::cabs;

    fn roll_row(sys: &StateSpace<f64>) -> Vec<f64> {
        sys.d().row(0).iter().copied().collect()
    }

    #[test]
    fn nominal_effectiveness_row() {
        let lft = build_effectiveness_lft(300.0, 0.2, 4).unwrap();
        assert_eq!(roll_row(&lft.nominal()), vec![-300.0, -300.0, 300.0, 300.0]);
        let closed = close_lft(&lft, &lft.zero_sample()).unwrap();
        assert_eq!(roll_row(&closed), vec![-300.0, -300.0, 300.0, 300.0]);
    }

    #[test]
    fn effectiveness_extremes() {
        let lft = build_effectiveness_lft(300.0, 0.2, 4).unwrap();
        let all = DeltaSample::new(vec![1.0; 4], vec![]).unwrap();
        let row = roll_row(&close_lft(&lft, &all).unwrap());
        for (got, want) in row.iter().zip([-360.0, -360.0, 360.0, 360.0]) {
            assert!((got - want).abs() < 1e-12);
        }
        let mixed = DeltaSample::new(vec![1.0, -1.0, 0.0, 0.0], vec![]).unwrap();
        let row = roll_row(&close_lft(&lft, &mixed).unwrap());
        for (got, want) in row.iter().zip([-360.0, -240.0, 300.0, 300.0]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn effectiveness_radius_must_prevent_sign_flip() {
        assert!(build_effectiveness_lft(300.0, 1.0, 4).is_err());
        assert!(build_effectiveness_lft(-1.0, 0.2, 4).is_err());
    }

    #[test]
    fn wm_asymptotes() {
        let wm = build_wm::<f64>(0.025, 0.04, 1.0).unwrap();
        assert!((wm.dc_gain().unwrap()[(0, 0)] - 0.04).abs() < 1e-15);
        assert!((wm.d()[(0, 0)] - 1.0).abs() < 1e-15);
        let tau_w = 0.025 / 5.0;
        let mag = cabs(wm.eval_siso(10.0 / tau_w).unwrap());
        assert!((mag - 0.995).abs() < 5e-4, "{mag}");
    }

    #[test]
    fn actuator_time_constant_perturbation() {
        let wm = build_wm(0.017, 0.04, 1.0).unwrap();
        let lft = build_actuator_lft(0.017, 0.4, &wm, 4).unwrap();
        let mut s = lft.zero_sample();
        s.real_scalars = vec![1.0; 4];
        let closed = close_lft(&lft, &s).unwrap();
        let pole = closed.poles().into_iter().map(|p| p.re).fold(f64::NEG_INFINITY, f64::max);
        // slowest pole is 1 / (0.017 * 1.4)
        assert!((-1.0 / pole - 0.0238).abs() < 1e-12);
    }

    #[test]
    fn actuator_nominal_recovery() {
        let tau = 0.017;
        let wm = build_wm(tau, 0.04, 1.0).unwrap();
        let lft = build_actuator_lft(tau, 0.4, &wm, 4).unwrap();
        let closed = close_lft(&lft, &lft.zero_sample()).unwrap();
        let lag = StateSpace::first_order_lag(tau).unwrap();
        for w in [1.0, 58.8, 1e3] {
            let g = closed.eval_jw(w).unwrap();
            let expect = lag.eval_siso(w).unwrap();
            for i in 0..4 {
                for j in 0..4 {
                    let want = if i == j { expect } else { num_complex::Complex::new(0.0, 0.0) };
                    assert!(cabs(g[(i, j)] - want) < 1e-12);
                }
            }
        }
    }

    #[test]
    fn static_dynamic_block_matches_direct_product() {
        let tau = 0.017;
        let wm = build_wm(tau, 0.04, 1.0).unwrap();
        let lft = build_actuator_lft(tau, 0.4, &wm, 4).unwrap();
        let mut s = lft.zero_sample();
        s.dynamic_blocks = vec![StateSpace::gain(0.99); 4];
        let closed = close_lft(&lft, &s).unwrap();
        let lag = StateSpace::first_order_lag(tau).unwrap();
        for w in [0.3, 20.0, 500.0, 5e4] {
            let direct = lag.eval_siso(w).unwrap() * (wm.eval_siso(w).unwrap() * 0.99 + 1.0);
            let got = closed.eval_jw(w).unwrap()[(2, 2)];
            assert!(cabs(got - direct) <= 1e-9 * cabs(direct));
        }
    }

    #[test]
    fn grid5_values_and_determinism() {
        let lft = build_effectiveness_lft(300.0, 0.2, 4).unwrap();
        let a = sample_delta(&lft, &SamplingScheme::Grid5, 7).unwrap();
        let b = sample_delta(&lft, &SamplingScheme::Grid5, 7).unwrap();
        assert_eq!(a, b);
        for d in &a.real_scalars {
            assert!(GRID5.contains(d));
        }
    }

    #[test]
    fn sampled_dynamic_blocks_are_contractive() {
        let wm = build_wm(0.02, 0.04, 1.0).unwrap();
        let lft = build_actuator_lft(0.02, 0.4, &wm, 4).unwrap();
        for seed in 0..20 {
            let s = sample_delta(&lft, &SamplingScheme::Random, seed).unwrap();
            for blk in &s.dynamic_blocks {
                let n = hinf_norm(blk, 1e-8).unwrap();
                assert!(n < 1.0 && blk.is_stable());
            }
            assert!(DeltaSample::new(s.real_scalars.clone(), s.dynamic_blocks.clone()).is_ok());
        }
    }

    #[test]
    fn extreme_scheme_finds_the_maximizing_vertex() {
        let lft = build_effectiveness_lft(300.0, 0.2, 4).unwrap();
        let obj = |s: &DeltaSample<f64>| s.real_scalars[0] - s.real_scalars[1] + s.real_scalars[3];
        let s = sample_delta(&lft, &SamplingScheme::Extreme(&obj), 1).unwrap();
        assert_eq!(s.real_scalars, vec![1.0, -1.0, -1.0, 1.0]);
    }

    #[test]
    fn out_of_range_samples_are_rejected() {
        assert!(DeltaSample::<f64>::new(vec![1.5], vec![]).is_err());
        assert!(DeltaSample::<f64>::new(vec![], vec![StateSpace::gain(1.0)]).is_err());
        let lft = build_effectiveness_lft(300.0, 0.2, 4).unwrap();
        let wrong = DeltaSample::new(vec![0.0; 3], vec![]).unwrap();
        assert!(close_lft(&lft, &wrong).is_err());
    }

    #[test]
    fn uncertain_scalar_value() {
        let u = UncertainScalar::<f64>::new(0.017, 0.4).with_delta(1.0).unwrap();
        assert!((u.value() - 0.0238).abs() < 1e-15);
        assert!(UncertainScalar::<f64>::new(1.0, 0.2).with_delta(-1.1).is_err());
    }
}
