//! Design plant: attitude kinematics, INDI inner loop, actuators, gyro noise
//! shaping and the exogenous channels used for synthesis and analysis.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linsys::{indexed_names, lft_lower, lft_upper, Interconnection, StateSpace};
use crate::uncertainty::{
    build_actuator_lft, build_effectiveness_lft, build_wm, roll_effectiveness, DeltaBlock, DeltaSample,
};

type Ss = StateSpace<f64>;

/// Which rotational axes the effectiveness matrix describes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axes {
    RollOnly,
    RollPitchYaw { cq: f64, cr: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadrotorParams {
    /// Roll effectiveness, rad/s^2 per unit command.
    pub cp: f64,
    /// Nominal actuator time constant, s.
    pub tau: f64,
    pub n_motors: usize,
    pub axes: Axes,
}

impl QuadrotorParams {
    pub fn roll(cp: f64, tau: f64) -> Self {
        Self { cp, tau, n_motors: 4, axes: Axes::RollOnly }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.cp > 0.0) || !(self.tau > 0.0) {
            return Err(Error::InvalidParameter(format!("Cp = {} and tau = {} must be positive", self.cp, self.tau)));
        }
        if self.n_motors != 4 {
            return Err(Error::InvalidParameter(format!("{} motors; only quadrotors are modeled", self.n_motors)));
        }
        Ok(())
    }

    /// Effectiveness rows in motor order front-right, rear-right, rear-left,
    /// front-left: roll, then pitch and yaw when present.
    pub fn effectiveness(&self) -> DMatrix<f64> {
        let roll = roll_effectiveness(self.cp);
        match self.axes {
            Axes::RollOnly => DMatrix::from_row_slice(1, 4, &roll),
            Axes::RollPitchYaw { cq, cr } => {
                let mut e = DMatrix::zeros(3, 4);
                let pitch = [-cq, cq, -cq, cq];
                let yaw = [cr, -cr, -cr, cr];
                for j in 0..4 {
                    e[(0, j)] = roll[j];
                    e[(1, j)] = pitch[j];
                    e[(2, j)] = yaw[j];
                }
                e
            }
        }
    }
}

/// Moore-Penrose right inverse `E' (E E')^-1`.
pub fn pseudo_inverse(e: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sv = e.clone().svd(false, false).singular_values;
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    let smin = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if e.nrows() > e.ncols() || !(smin > 1e-12 * smax) {
        return Err(Error::Allocation(format!(
            "effectiveness matrix {}x{} is rank deficient (singular values {:?})",
            e.nrows(),
            e.ncols(),
            sv.as_slice()
        )));
    }
    let gram = e * e.transpose();
    let inv = gram.try_inverse().ok_or_else(|| Error::Allocation("E E' not invertible".into()))?;
    Ok(e.transpose() * inv)
}

/// Critically damped second-order low-pass `w^2 / (s + w)^2`, cutoff in Hz.
pub fn lowpass_filter(cutoff_hz: f64) -> Result<Ss> {
    if !(cutoff_hz > 0.0) {
        return Err(Error::InvalidParameter(format!("filter cutoff {cutoff_hz} Hz must be positive")));
    }
    let w = 2.0 * std::f64::consts::PI * cutoff_hz;
    Ss::from_tf(&[w * w], &[1.0, 2.0 * w, w * w])
}

/// Stacks `[H; s H]` on shared states. `H` must be strictly proper.
pub fn with_derivative(h: &Ss) -> Result<Ss> {
    if !h.is_siso() || h.d()[(0, 0)] != 0.0 {
        return Err(Error::InvalidParameter("derivative output needs a strictly proper SISO filter".into()));
    }
    let n = h.nstates();
    let mut c = DMatrix::zeros(2, n);
    c.row_mut(0).copy_from(&h.c().row(0));
    c.row_mut(1).copy_from(&(h.c() * h.a()).row(0));
    let mut d = DMatrix::zeros(2, 1);
    d[(1, 0)] = (h.c() * h.b())[(0, 0)];
    Ss::new(h.a().clone(), h.b().clone(), c, d)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandPass {
    pub omega_b: f64,
    pub q: f64,
}

/// Coefficients of the gyro noise shaping filter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub k_n: f64,
    /// Low-pass corner, rad/s.
    pub omega_l: f64,
    /// Lag zero and pole, rad/s; `z_l == p_l` removes the lag.
    pub z_l: f64,
    pub p_l: f64,
    pub bandpass: Option<BandPass>,
}

impl Default for NoiseConfig {
    /// Placeholder coefficients, not fitted to measured spectra.
    fn default() -> Self {
        Self { k_n: 0.01, omega_l: 60.0, z_l: 400.0, p_l: 40.0, bandpass: Some(BandPass { omega_b: 2500.0, q: 4.0 }) }
    }
}

/// `N(s) = K_n * w_l/(s + w_l) * (s + z_l)/(s + p_l) * bandpass(s)`.
///
/// The lag is normalized to unit high-frequency gain, so its DC gain is
/// `z_l / p_l`.
pub fn noise_model(cfg: &NoiseConfig) -> Result<Ss> {
    let pos = [cfg.omega_l, cfg.z_l, cfg.p_l];
    if pos.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::InvalidParameter("noise corner frequencies must be positive".into()));
    }
    let mut n = Ss::from_tf(&[cfg.k_n * cfg.omega_l], &[1.0, cfg.omega_l])?;
    if cfg.z_l != cfg.p_l {
        n = n.series(&Ss::from_tf(&[1.0, cfg.z_l], &[1.0, cfg.p_l])?)?;
    }
    if let Some(bp) = cfg.bandpass {
        if !(bp.omega_b > 0.0) || !(bp.q > 0.0) {
            return Err(Error::InvalidParameter("band-pass frequency and Q must be positive".into()));
        }
        let bw = bp.omega_b / bp.q;
        n = n.series(&Ss::from_tf(&[bw, 0.0], &[1.0, bw, bp.omega_b * bp.omega_b])?)?;
    }
    Ok(n)
}

/// `n` decoupled copies of a SISO system.
pub fn diag_copies(g: &Ss, n: usize) -> Ss {
    (0..n).fold(Ss::zero(0, 0), |acc, _| acc.append(g))
}

/// INDI inner loop `Omega_dot_r -> Omega_dot`.
///
/// The controller knows `ctrl_e` and the actuator model `ctrl_act`; the
/// physical loop uses `plant_e` and `plant_act`. The command is the filtered
/// modeled actuator state plus `E+ (Omega_dot_r - H Omega_dot)`.
pub fn indi_inner_loop(
    plant_e: &DMatrix<f64>,
    ctrl_e: &DMatrix<f64>,
    plant_act: &Ss,
    ctrl_act: &Ss,
    h: &Ss,
) -> Result<Ss> {
    let ny = ctrl_e.nrows();
    let nm = ctrl_e.ncols();
    if plant_e.shape() != ctrl_e.shape() {
        return Err(Error::Dimension("plant and controller effectiveness differ in shape".into()));
    }
    let einv = pseudo_inverse(ctrl_e)?;
    let u = indexed_names("u", ny);
    let v = indexed_names("v", ny);
    let acc = indexed_names("acc", ny);
    let acc_f = indexed_names("acc_f", ny);
    let mc = indexed_names("m_c", nm);
    let m = indexed_names("m", nm);
    let mh = indexed_names("m_hat", nm);
    let mhf = indexed_names("m_hat_f", nm);
    let mut ic = Interconnection::new();
    ic.block(plant_act.clone(), &mc, &m);
    ic.block(Ss::static_gain(plant_e.clone()), &m, &acc);
    ic.block(diag_copies(h, ny), &acc, &acc_f);
    ic.block(ctrl_act.clone(), &mc, &mh);
    ic.block(diag_copies(h, nm), &mh, &mhf);
    for k in 0..ny {
        ic.sum(&v[k], &[(u[k].as_str(), 1.0), (acc_f[k].as_str(), -1.0)]);
    }
    for i in 0..nm {
        let mut terms: Vec<(&str, f64)> = vec![(mhf[i].as_str(), 1.0)];
        for k in 0..ny {
            terms.push((v[k].as_str(), einv[(i, k)]));
        }
        ic.sum(&mc[i], &terms);
    }
    ic.inputs(&u).outputs(&acc);
    ic.build()
}

/// Uncertainty radii and actuator error weight parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UncertaintyConfig {
    pub r_c: f64,
    pub r_tau: f64,
    pub r0: f64,
    pub r_inf: f64,
}

impl Default for UncertaintyConfig {
    fn default() -> Self {
        use crate::uncertainty::*;
        Self { r_c: DEFAULT_R_C, r_tau: DEFAULT_R_TAU, r0: DEFAULT_R0, r_inf: DEFAULT_R_INF }
    }
}

/// Loop-break locations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BreakPoint {
    /// Actuator command input, one loop per motor.
    Mc,
    Eta,
    Omega,
    OmegaDot,
}

impl BreakPoint {
    pub const ALL: [BreakPoint; 4] = [BreakPoint::Eta, BreakPoint::Omega, BreakPoint::OmegaDot, BreakPoint::Mc];

    pub fn name(&self) -> &'static str {
        match self {
            BreakPoint::Mc => "m_c",
            BreakPoint::Eta => "eta",
            BreakPoint::Omega => "omega",
            BreakPoint::OmegaDot => "omega_dot",
        }
    }

    /// Injection inputs and consumer-side outputs: the transfer between them
    /// with all loops closed is the sensitivity at the break point.
    pub fn channels(&self) -> (Vec<String>, Vec<String>) {
        match self {
            BreakPoint::Mc => (indexed_names("d_i", 4), indexed_names("m_act", 4)),
            BreakPoint::Eta => (vec!["d_eta".into()], vec!["eta".into()]),
            BreakPoint::Omega => (vec!["w_omega".into()], vec!["omega".into()]),
            BreakPoint::OmegaDot => (vec!["d_omega_dot".into()], vec!["omega_dot".into()]),
        }
    }
}

impl std::fmt::Display for BreakPoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Parameters of the fixed-structure outer controller.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerParams {
    /// Attitude gain, 1/s^2.
    pub k_eta: f64,
    /// Rate gain, 1/s.
    pub k_omega: f64,
    /// Feedforward lead zero and pole, rad/s.
    pub a_ff: f64,
    pub b_ff: f64,
}

impl ControllerParams {
    pub fn feedback_only(k_eta: f64, k_omega: f64) -> Self {
        Self { k_eta, k_omega, a_ff: 1.0, b_ff: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.k_eta, self.k_omega, self.a_ff, self.b_ff];
        if all.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidParameter(format!("controller parameters must be positive: {self:?}")));
        }
        Ok(())
    }

    /// `F(s) = (s/a + 1)/(s/b + 1)`.
    pub fn feedforward(&self) -> Ss {
        if self.a_ff == self.b_ff {
            return Ss::gain(1.0);
        }
        let (a, b) = (self.a_ff, self.b_ff);
        Ss::from_tf(&[b / a, b], &[1.0, b]).expect("first-order lead")
    }

    /// `u = K_eta (F r - eta_m) - K_omega Omega_m` with inputs `[r, eta_m, Omega_m]`.
    pub fn system(&self) -> Ss {
        let f = self.feedforward().scaled(self.k_eta);
        let fb = Ss::static_gain(DMatrix::from_row_slice(1, 2, &[-self.k_eta, -self.k_omega]));
        let mut ic = Interconnection::new();
        ic.block(f, &["r"], &["ur"])
            .block(fb, &["eta_m", "omega_m"], &["ufb"])
            .sum("u", &[("ur", 1.0), ("ufb", 1.0)])
            .inputs(&["r", "eta_m", "omega_m"])
            .outputs(&["u"]);
        ic.build_raw().expect("controller wiring")
    }
}

/// Third-order reference model parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RefModelParams {
    pub omega_ref: f64,
    pub zeta_ref: f64,
    pub b_ref: f64,
}

impl RefModelParams {
    /// `w^2 / (s^2 + 2 zeta w s + w^2) * b / (s + b)`.
    pub fn system(&self) -> Result<Ss> {
        let (w, z, b) = (self.omega_ref, self.zeta_ref, self.b_ref);
        if !(w > 0.0 && b > 0.0 && z > 0.0) {
            return Err(Error::InvalidParameter(format!("invalid reference model {self:?}")));
        }
        Ss::from_tf(&[w * w * b], &[1.0, 2.0 * z * w + b, w * w + 2.0 * z * w * b, w * w * b])
    }
}

/// Everything needed to assemble the design plant at one actuator time constant.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantSpec {
    pub params: QuadrotorParams,
    pub h: Ss,
    pub noise: Ss,
    pub tref: Option<Ss>,
    pub uncertainty: Option<UncertaintyConfig>,
}

/// Open design plant `P`. The last input is the controller output `u`; the
/// last three outputs `[r_meas, eta_m, omega_m]` feed the controller.
/// Uncertainty channels, when present, come first.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignPlant {
    pub spec: PlantSpec,
    system: Ss,
    inputs: Vec<String>,
    outputs: Vec<String>,
    structure: Vec<DeltaBlock>,
}

/// Exogenous inputs in order.
pub fn exogenous_inputs() -> Vec<String> {
    let mut v: Vec<String> = vec!["r_eta".into(), "d_eta".into(), "d_omega_dot".into()];
    v.extend(indexed_names("d_i", 4));
    v.push("n_omega".into());
    v.push("w_omega".into());
    v
}

/// Performance outputs in order.
pub fn performance_outputs() -> Vec<String> {
    let mut v = indexed_names("m_c", 4);
    v.extend(indexed_names("m_act", 4));
    v.extend(["omega_dot", "omega", "eta", "e_ref_eta"].map(String::from));
    v
}

/// Wires the roll-axis design interconnection.
///
/// Physical chain: `m_act = m_c + d_i` drives the actuators, the
/// effectiveness row gives `Omega_dot`, then `Omega` and `eta` by
/// integration, with `d_omega_dot`, `w_omega` and `d_eta` added at the
/// respective outputs. Each output signal named here is the value seen by
/// everything downstream, so injecting at a signal and reading it back gives
/// the sensitivity with the loop broken at that point.
pub fn assemble_design_plant(spec: PlantSpec) -> Result<DesignPlant> {
    let p = &spec.params;
    p.validate()?;
    let tau = p.tau;
    let e_row = DMatrix::from_row_slice(1, 4, &roll_effectiveness(p.cp));
    let einv = pseudo_inverse(&e_row)?;
    let nominal_act = diag_copies(&Ss::first_order_lag(tau)?, 4);

    let m_c = indexed_names("m_c", 4);
    let d_i = indexed_names("d_i", 4);
    let m_act = indexed_names("m_act", 4);
    let m = indexed_names("m", 4);
    let mh = indexed_names("m_hat", 4);
    let mhf = indexed_names("m_hat_f", 4);
    let mut ic = Interconnection::new();
    let mut delta_in: Vec<String> = Vec::new();
    let mut delta_out: Vec<String> = Vec::new();
    let mut structure = Vec::new();

    for i in 0..4 {
        ic.sum(&m_act[i], &[(m_c[i].as_str(), 1.0), (d_i[i].as_str(), 1.0)]);
    }
    match &spec.uncertainty {
        None => {
            ic.block(nominal_act.clone(), &m_act, &m);
            ic.block(Ss::static_gain(e_row.clone()), &m, &["acc_phys".to_string()]);
        }
        Some(u) => {
            let eff = build_effectiveness_lft(p.cp, u.r_c, 4)?;
            let wm = build_wm(tau, u.r0, u.r_inf)?;
            let act = build_actuator_lft(tau, u.r_tau, &wm, 4)?;
            let uc = indexed_names("u_dC", 4);
            let yc = indexed_names("y_dC", 4);
            let ua = indexed_names("u_dA", 8);
            let ya = indexed_names("y_dA", 8);
            let mut a_in = ua.clone();
            a_in.extend(m_act.iter().cloned());
            let mut a_out = ya.clone();
            a_out.extend(m.iter().cloned());
            ic.block(act.system().clone(), &a_in, &a_out);
            let mut e_in = uc.clone();
            e_in.extend(m.iter().cloned());
            let mut e_out = yc.clone();
            e_out.push("acc_phys".into());
            ic.block(eff.system().clone(), &e_in, &e_out);
            delta_in = uc.into_iter().chain(ua).collect();
            delta_out = yc.into_iter().chain(ya).collect();
            structure = eff.structure().iter().chain(act.structure()).cloned().collect();
        }
    }
    ic.sum("omega_dot", &[("acc_phys", 1.0), ("d_omega_dot", 1.0)]);
    ic.block(Ss::integrator(), &["omega_dot"], &["omega_phys"]);
    ic.sum("omega", &[("omega_phys", 1.0), ("w_omega", 1.0)]);
    ic.block(Ss::integrator(), &["omega"], &["eta_phys"]);
    ic.sum("eta", &[("eta_phys", 1.0), ("d_eta", 1.0)]);

    // gyro noise and its integral in the attitude estimate
    ic.block(spec.noise.clone(), &["n_omega"], &["n_f"]);
    ic.block(Ss::integrator(), &["n_f"], &["n_int"]);
    ic.sum("omega_m", &[("omega", 1.0), ("n_f", 1.0)]);
    ic.sum("eta_m", &[("eta", 1.0), ("n_int", 1.0)]);

    // INDI: filtered rate derivative and filtered modeled actuator state
    ic.block(with_derivative(&spec.h)?, &["omega_m"], &["omega_f", "acc_f"]);
    ic.block(nominal_act, &m_c, &mh);
    ic.block(diag_copies(&spec.h, 4), &mh, &mhf);
    ic.sum("v", &[("u", 1.0), ("acc_f", -1.0)]);
    for i in 0..4 {
        ic.sum(&m_c[i], &[(mhf[i].as_str(), 1.0), ("v", einv[(i, 0)])]);
    }

    let tref = spec.tref.clone().unwrap_or_else(|| Ss::gain(0.0));
    ic.block(tref, &["r_eta"], &["eta_ref"]);
    ic.sum("e_ref_eta", &[("eta_ref", 1.0), ("eta", -1.0)]);
    ic.sum("r_meas", &[("r_eta", 1.0)]);

    let mut inputs = delta_in;
    inputs.extend(exogenous_inputs());
    inputs.push("u".into());
    let mut outputs = delta_out;
    outputs.extend(performance_outputs());
    outputs.extend(["r_meas", "eta_m", "omega_m"].map(String::from));
    ic.inputs(&inputs).outputs(&outputs);
    let system = ic.build_raw()?;
    Ok(DesignPlant { spec, system, inputs, outputs, structure })
}

impl DesignPlant {
    pub fn system(&self) -> &Ss {
        &self.system
    }

    pub fn input_names(&self) -> &[String] {
        &self.inputs
    }

    pub fn output_names(&self) -> &[String] {
        &self.outputs
    }

    pub fn structure(&self) -> &[DeltaBlock] {
        &self.structure
    }

    pub fn input_index(&self, name: &str) -> Option<usize> {
        self.inputs.iter().position(|n| n == name)
    }

    pub fn output_index(&self, name: &str) -> Option<usize> {
        self.outputs.iter().position(|n| n == name)
    }

    /// Same plant with another reference model.
    pub fn with_reference_model(&self, tref: Ss) -> Result<Self> {
        let mut spec = self.spec.clone();
        spec.tref = Some(tref);
        assemble_design_plant(spec)
    }

    /// Closes the outer controller around the plant.
    pub fn close(&self, ctrl: &ControllerParams) -> Result<ClosedLoop> {
        ctrl.validate()?;
        let sys = lft_lower(&self.system, &ctrl.system())?;
        let ni = self.inputs.len() - 1;
        let no = self.outputs.len() - 3;
        Ok(ClosedLoop {
            system: sys,
            inputs: self.inputs[..ni].to_vec(),
            outputs: self.outputs[..no].to_vec(),
            structure: self.structure.clone(),
        })
    }
}

/// Closed-loop map from exogenous to performance channels.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoop {
    system: Ss,
    inputs: Vec<String>,
    outputs: Vec<String>,
    structure: Vec<DeltaBlock>,
}

fn positions(names: &[String], wanted: &[String]) -> Result<Vec<usize>> {
    wanted
        .iter()
        .map(|w| names.iter().position(|n| n == w).ok_or_else(|| Error::Wiring(format!("no channel named {w}"))))
        .collect()
}

impl ClosedLoop {
    pub fn system(&self) -> &Ss {
        &self.system
    }

    pub fn input_names(&self) -> &[String] {
        &self.inputs
    }

    pub fn output_names(&self) -> &[String] {
        &self.outputs
    }

    pub fn is_uncertain(&self) -> bool {
        !self.structure.is_empty()
    }

    pub fn structure(&self) -> &[DeltaBlock] {
        &self.structure
    }

    /// Minimal realization of the map between the named channels.
    pub fn channel<S: AsRef<str>>(&self, from: &[S], to: &[S]) -> Result<Ss> {
        let from: Vec<String> = from.iter().map(|s| s.as_ref().to_string()).collect();
        let to: Vec<String> = to.iter().map(|s| s.as_ref().to_string()).collect();
        let ins = positions(&self.inputs, &from)?;
        let outs = positions(&self.outputs, &to)?;
        Ok(self.system.select(&ins, &outs)?.minimal())
    }

    /// Sensitivity with the loop broken at `point` (all channels of the point).
    pub fn sensitivity(&self, point: BreakPoint) -> Result<Ss> {
        let (i, o) = point.channels();
        self.channel(&i, &o)
    }

    /// Stability of every channel except the gyro-noise input, whose
    /// integrated path into the attitude estimate is marginal by construction,
    /// and the per-motor disturbances. The roll-only model leaves the null
    /// space of the effectiveness row to the other axes and thrust, so with
    /// unequal effectiveness errors a single-motor disturbance drifts there.
    pub fn check_stable(&self) -> Result<()> {
        let ins: Vec<usize> =
            (0..self.inputs.len()).filter(|&k| self.inputs[k] != "n_omega" && !self.inputs[k].starts_with("d_i")).collect();
        let outs: Vec<usize> = (0..self.outputs.len()).collect();
        let sys = self.system.select(&ins, &outs)?;
        if let Some(p) = sys.io_unstable_poles().into_iter().next() {
            return Err(Error::Unstable(format!("closed-loop pole {}{:+}j", p.re, p.im)));
        }
        Ok(())
    }

    /// Closes the uncertainty channels with a sample.
    pub fn perturbed(&self, sample: &DeltaSample<f64>) -> Result<ClosedLoop> {
        let k = self.structure.len();
        if k == 0 {
            return Err(Error::Dimension("closed loop has no uncertainty channels".into()));
        }
        let delta = sample.to_system(&self.structure)?;
        let sys = lft_upper(&self.system, &delta)?;
        Ok(ClosedLoop {
            system: sys,
            inputs: self.inputs[k..].to_vec(),
            outputs: self.outputs[k..].to_vec(),
            structure: Vec::new(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linsys::logspace;
    use crate::scalar::cabs;

    fn spec(tau: f64) -> PlantSpec {
        PlantSpec {
            params: QuadrotorParams::roll(300.0, tau),
            h: lowpass_filter(50.0).unwrap(),
            noise: noise_model(&NoiseConfig::default()).unwrap(),
            tref: None,
            uncertainty: None,
        }
    }

    #[test]
    fn pseudo_inverse_of_roll_row() {
        let e = DMatrix::from_row_slice(1, 4, &roll_effectiveness(300.0));
        let pinv = pseudo_inverse(&e).unwrap();
        assert!(((&e * &pinv)[(0, 0)] - 1.0).abs() < 1e-15);
        assert!(pseudo_inverse(&DMatrix::zeros(1, 4)).is_err());
    }

    #[test]
    fn inner_loop_equals_actuator() {
        let tau = 0.017;
        let e = DMatrix::from_row_slice(1, 4, &roll_effectiveness(300.0));
        let act = diag_copies(&Ss::first_order_lag(tau).unwrap(), 4);
        let h = lowpass_filter(50.0).unwrap();
        let g = indi_inner_loop(&e, &e, &act, &act, &h).unwrap();
        let a = Ss::first_order_lag(tau).unwrap();
        for w in logspace::<f64>(-1.0, 4.0, 50) {
            let z = g.eval_siso(w).unwrap();
            let r = a.eval_siso(w).unwrap();
            assert!(cabs(z - r) <= 1e-9 * cabs(r), "{w}");
        }
    }

    #[test]
    fn mismatched_inverse_keeps_unit_dc() {
        let tau = 0.03;
        let e = DMatrix::from_row_slice(1, 4, &roll_effectiveness(300.0));
        let act = diag_copies(&Ss::first_order_lag(tau).unwrap(), 4);
        let h = lowpass_filter(50.0).unwrap();
        let g = indi_inner_loop(&e, &(&e * 1.2), &act, &act, &h).unwrap();
        assert!(g.is_stable());
        assert!((g.dc_gain().unwrap()[(0, 0)] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn derivative_stack() {
        let h = lowpass_filter(10.0).unwrap();
        let hd = with_derivative(&h).unwrap();
        let w = 30.0;
        let z = hd.eval_jw(w).unwrap();
        let expect = h.eval_siso(w).unwrap() * num_complex::Complex::new(0.0, w);
        assert!(cabs(z[(1, 0)] - expect) < 1e-12);
    }

    #[test]
    fn noise_model_shapes() {
        let n = noise_model(&NoiseConfig::default()).unwrap();
        assert!(cabs(n.eval_siso(1e-6).unwrap()) < 1e-8);
        let lp = noise_model(&NoiseConfig { k_n: 1.0, omega_l: 10.0, z_l: 1.0, p_l: 1.0, bandpass: None }).unwrap();
        let g = cabs(lp.eval_siso(10.0).unwrap());
        assert!((20.0 * g.log10() + 3.0103).abs() < 1e-3);
    }

    #[test]
    fn open_loop_attitude_disturbance_passes_through() {
        let plant = assemble_design_plant(spec(0.02)).unwrap();
        let cl = plant.close(&ControllerParams::feedback_only(1e-9, 1e-9)).unwrap();
        let g = cl.channel(&["d_eta"], &["eta"]).unwrap();
        let z = g.eval_siso(3.0).unwrap();
        assert!(cabs(z - 1.0) < 1e-6);
    }

    #[test]
    fn reference_path_is_third_order() {
        let plant = assemble_design_plant(spec(0.02)).unwrap();
        let cl = plant.close(&ControllerParams::feedback_only(400.0, 30.0)).unwrap();
        cl.check_stable().unwrap();
        let g = cl.channel(&["r_eta"], &["eta"]).unwrap();
        assert_eq!(g.nstates(), 3);
        let expect = Ss::from_tf(&[400.0], &[0.02, 1.0, 30.0, 400.0]).unwrap();
        for w in [0.5, 5.0, 50.0] {
            let (a, b) = (g.eval_siso(w).unwrap(), expect.eval_siso(w).unwrap());
            assert!(cabs(a - b) < 1e-7 * cabs(b));
        }
        let s = cl.sensitivity(BreakPoint::Eta).unwrap();
        let s0 = s.dc_gain().unwrap()[(0, 0)];
        assert!(s0.abs() < 1e-9);
    }

    #[test]
    fn rate_and_acceleration_breaks_coincide() {
        let plant = assemble_design_plant(spec(0.02)).unwrap();
        let cl = plant.close(&ControllerParams::feedback_only(400.0, 30.0)).unwrap();
        let s1 = cl.sensitivity(BreakPoint::Omega).unwrap();
        let s2 = cl.sensitivity(BreakPoint::OmegaDot).unwrap();
        for w in logspace::<f64>(-1.0, 4.0, 30) {
            let (a, b) = (s1.eval_siso(w).unwrap(), s2.eval_siso(w).unwrap());
            assert!(cabs(a - b) < 1e-8 * cabs(b).max(1e-3));
        }
    }

    #[test]
    fn zero_delta_reproduces_nominal() {
        let ctrl = ControllerParams::feedback_only(400.0, 30.0);
        let nominal = assemble_design_plant(spec(0.02)).unwrap().close(&ctrl).unwrap();
        let mut us = spec(0.02);
        us.uncertainty = Some(UncertaintyConfig::default());
        let unc = assemble_design_plant(us).unwrap().close(&ctrl).unwrap();
        assert_eq!(unc.structure().len(), 12);
        let zero = DeltaSample { real_scalars: vec![0.0; 8], dynamic_blocks: vec![Ss::gain(0.0); 4] };
        let closed = unc.perturbed(&zero).unwrap();
        for (from, to) in [("d_eta", "eta"), ("d_i[1]", "m_act[2]"), ("r_eta", "omega")] {
            let a = closed.channel(&[from], &[to]).unwrap();
            let b = nominal.channel(&[from], &[to]).unwrap();
            for w in logspace::<f64>(-1.0, 4.0, 20) {
                let (za, zb) = (a.eval_siso(w).unwrap(), b.eval_siso(w).unwrap());
                assert!(cabs(za - zb) <= 1e-9 * cabs(zb).max(1.0), "{from}->{to} at {w}: {za} {zb} n={} {}", a.nstates(), b.nstates());
            }
        }
    }
}
