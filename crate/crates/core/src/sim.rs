//! Nonlinear attitude simulation with a discrete INDI inner loop and the
//! scheduled outer loop, plus Monte Carlo campaigns over uncertainty samples.

use nalgebra::{DMatrix, Matrix4, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linsys::{discretize_zoh, StateSpace};
use crate::margins::worst_sensitivity_sample;
use crate::plant::{lowpass_filter, BreakPoint, noise_model, with_derivative, NoiseConfig, UncertaintyConfig};
use crate::synthesis::{GainSchedule, SynthesisConfig};
use crate::uncertainty::{build_actuator_lft, build_wm, close_lft, random_allpass, DeltaSample, GRID5};

type Ss = StateSpace<f64>;

/// Roll doublet: `+A` from `t_start`, `-A` from `t_start + phase`, back to
/// zero at `t_start + 2 phase`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Doublet {
    pub amplitude_deg: f64,
    pub t_start: f64,
    pub phase: f64,
}

impl Default for Doublet {
    fn default() -> Self {
        Self { amplitude_deg: 45.0, t_start: 0.5, phase: 1.5 }
    }
}

impl Doublet {
    /// Roll reference in radians.
    pub fn reference(&self, t: f64) -> f64 {
        let a = self.amplitude_deg.to_radians();
        if t < self.t_start {
            0.0
        } else if t < self.t_start + self.phase {
            a
        } else if t < self.t_start + 2.0 * self.phase {
            -a
        } else {
            0.0
        }
    }
}

/// Simulation settings. `delta` is not part of the file format; it is set
/// per run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    /// Control period, s. The hold adds about `dt / 2` of loop delay, so the
    /// sampled loop departs from the continuous design in proportion to it.
    pub dt: f64,
    /// RK4 steps per control period.
    pub substeps: usize,
    pub t_end: f64,
    pub doublet: Doublet,
    pub cp: f64,
    pub cq: f64,
    pub cr: f64,
    pub tau: f64,
    pub filter_cutoff_hz: f64,
    /// Hover command about which the attitude commands act.
    pub trim: f64,
    pub uncertainty: UncertaintyConfig,
    pub noise: NoiseConfig,
    pub noise_on: bool,
    pub noise_seed: u64,
    #[serde(skip)]
    pub delta: Option<DeltaSample<f64>>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 0.0005,
            substeps: 10,
            t_end: 5.0,
            doublet: Doublet::default(),
            cp: 300.0,
            cq: 300.0,
            cr: 30.0,
            tau: 0.017,
            filter_cutoff_hz: 50.0,
            trim: 0.5,
            uncertainty: UncertaintyConfig::default(),
            noise: NoiseConfig::default(),
            noise_on: false,
            noise_seed: 0,
            delta: None,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.t_end > 0.0 && self.substeps > 0) {
            return Err(Error::InvalidParameter("dt, t_end and substeps must be positive".into()));
        }
        if !(self.cp > 0.0 && self.cq > 0.0 && self.cr > 0.0 && self.tau > 0.0 && self.filter_cutoff_hz > 0.0) {
            return Err(Error::InvalidParameter("effectiveness, tau and filter cutoff must be positive".into()));
        }
        if !(self.doublet.amplitude_deg.abs() <= 45.0) {
            return Err(Error::InvalidParameter("doublet amplitude is limited to 45 deg".into()));
        }
        if !(self.trim > 0.0 && self.trim < 1.0) {
            return Err(Error::InvalidParameter("trim must lie in (0, 1)".into()));
        }
        Ok(())
    }

    /// Effectiveness rows roll, pitch, yaw; motors front-right, rear-right,
    /// rear-left, front-left.
    pub fn effectiveness(&self) -> DMatrix<f64> {
        let (p, q, r) = (self.cp, self.cq, self.cr);
        DMatrix::from_row_slice(3, 4, &[-p, -p, p, p, -q, q, -q, q, r, -r, -r, r])
    }
}

/// Scalar outcomes of one run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimMetrics {
    /// Largest overshoot of any reference step, as a fraction of the step.
    pub overshoot: f64,
    /// Largest `|pitch|` or `|yaw|`, deg.
    pub coupling_deg: f64,
    /// Coupling relative to the largest reference change.
    pub coupling_fraction: f64,
    pub m_c_min: f64,
    pub m_c_max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    pub time: Vec<f64>,
    /// Euler angles, rad.
    pub eta: Vec<[f64; 3]>,
    /// Body rates, rad/s.
    pub omega: Vec<[f64; 3]>,
    pub omega_dot: Vec<[f64; 3]>,
    /// Absolute motor commands.
    pub m_c: Vec<[f64; 4]>,
    /// Roll reference, rad.
    pub reference: Vec<f64>,
    pub metrics: SimMetrics,
    pub stable: bool,
    pub saturations: usize,
}

/// Discrete state-space section with internal state.
#[derive(Debug, Clone)]
struct Discrete {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    d: DMatrix<f64>,
    x: Vec<f64>,
    y: Vec<f64>,
}

impl Discrete {
    fn new((a, b, c, d): (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)) -> Self {
        let (n, p) = (a.nrows(), c.nrows());
        Self { a, b, c, d, x: vec![0.0; n], y: vec![0.0; p] }
    }

    /// Bilinear map of a continuous system.
    fn tustin(sys: &Ss, dt: f64) -> Result<Self> {
        let n = sys.nstates();
        let h = dt / 2.0;
        let eye = DMatrix::<f64>::identity(n, n);
        let m = (&eye - sys.a() * h).try_inverse().ok_or_else(|| Error::Numerical("bilinear transform".into()))?;
        let a = &m * (&eye + sys.a() * h);
        let b = &m * sys.b() * dt;
        let c = sys.c() * &m;
        let d = sys.d() + sys.c() * &m * sys.b() * h;
        Ok(Self::new((a, b, c, d)))
    }

    fn zoh(sys: &Ss, dt: f64) -> Self {
        let (a, b) = discretize_zoh(sys, dt);
        Self::new((a, b, sys.c().clone(), sys.d().clone()))
    }

    /// Output for input `u`, then advance the state.
    fn step(&mut self, u: f64) -> &[f64] {
        let n = self.x.len();
        for i in 0..self.y.len() {
            let mut v = self.d[(i, 0)] * u;
            for j in 0..n {
                v += self.c[(i, j)] * self.x[j];
            }
            self.y[i] = v;
        }
        let mut next = vec![0.0; n];
        for (i, nx) in next.iter_mut().enumerate() {
            let mut v = self.b[(i, 0)] * u;
            for j in 0..n {
                v += self.a[(i, j)] * self.x[j];
            }
            *nx = v;
        }
        self.x = next;
        &self.y
    }
}

/// Continuous SISO section integrated inside the plant.
#[derive(Debug, Clone)]
struct Actuator {
    a: Vec<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
    d: f64,
    n: usize,
}

impl Actuator {
    fn new(sys: &Ss) -> Self {
        let n = sys.nstates();
        Self {
            a: (0..n * n).map(|k| sys.a()[(k / n, k % n)]).collect(),
            b: (0..n).map(|i| sys.b()[(i, 0)]).collect(),
            c: (0..n).map(|j| sys.c()[(0, j)]).collect(),
            d: sys.d()[(0, 0)],
            n,
        }
    }

    fn output(&self, x: &[f64], u: f64) -> f64 {
        self.d * u + self.c.iter().zip(x).map(|(c, x)| c * x).sum::<f64>()
    }

    fn deriv(&self, x: &[f64], u: f64, dx: &mut [f64]) {
        for i in 0..self.n {
            let mut v = self.b[i] * u;
            for j in 0..self.n {
                v += self.a[i * self.n + j] * x[j];
            }
            dx[i] = v;
        }
    }
}

/// True plant: Euler kinematics, rigid-body rates and perturbed actuators,
/// all in deviation from hover trim.
struct TruePlant {
    e: DMatrix<f64>,
    actuators: Vec<Actuator>,
    offsets: Vec<usize>,
    /// `[phi, theta, psi, p, q, r, actuator states...]`
    x: Vec<f64>,
}

impl TruePlant {
    fn new(cfg: &SimConfig) -> Result<Self> {
        let mut e = cfg.effectiveness();
        let unc = &cfg.uncertainty;
        let wm = build_wm(cfg.tau, unc.r0, unc.r_inf)?;
        let single = build_actuator_lft(cfg.tau, unc.r_tau, &wm, 1)?;
        let mut actuators = Vec::with_capacity(4);
        for i in 0..4 {
            let sys = match &cfg.delta {
                None => Ss::first_order_lag(cfg.tau)?,
                Some(d) => {
                    if d.real_scalars.len() != 8 || d.dynamic_blocks.len() != 4 {
                        return Err(Error::Dimension("simulation expects 8 real and 4 dynamic uncertainties".into()));
                    }
                    let scale = 1.0 + unc.r_c * d.real_scalars[i];
                    for row in 0..3 {
                        e[(row, i)] *= scale;
                    }
                    let s = DeltaSample { real_scalars: vec![d.real_scalars[4 + i]], dynamic_blocks: vec![d.dynamic_blocks[i].clone()] };
                    close_lft(&single, &s)?
                }
            };
            actuators.push(Actuator::new(&sys));
        }
        let mut offsets = Vec::with_capacity(4);
        let mut n = 6;
        for a in &actuators {
            offsets.push(n);
            n += a.n;
        }
        Ok(Self { e, actuators, offsets, x: vec![0.0; n] })
    }

    fn motor_outputs(&self, x: &[f64], u: &[f64; 4]) -> [f64; 4] {
        let mut m = [0.0; 4];
        for (i, a) in self.actuators.iter().enumerate() {
            let o = self.offsets[i];
            m[i] = a.output(&x[o..o + a.n], u[i]);
        }
        m
    }

    fn acceleration(&self, m: &[f64; 4]) -> [f64; 3] {
        let mut w = [0.0; 3];
        for (r, wr) in w.iter_mut().enumerate() {
            *wr = (0..4).map(|j| self.e[(r, j)] * m[j]).sum();
        }
        w
    }

    fn deriv(&self, x: &[f64], u: &[f64; 4], dx: &mut [f64]) {
        let (phi, theta) = (x[0], x[1]);
        let (p, q, r) = (x[3], x[4], x[5]);
        let (sf, cf) = phi.sin_cos();
        let (st, ct) = theta.sin_cos();
        dx[0] = p + (sf * q + cf * r) * st / ct;
        dx[1] = cf * q - sf * r;
        dx[2] = (sf * q + cf * r) / ct;
        let acc = self.acceleration(&self.motor_outputs(x, u));
        dx[3..6].copy_from_slice(&acc);
        for (i, a) in self.actuators.iter().enumerate() {
            let o = self.offsets[i];
            a.deriv(&x[o..o + a.n], u[i], &mut dx[o..o + a.n]);
        }
    }

    fn advance(&mut self, u: &[f64; 4], dt: f64, substeps: usize) {
        let n = self.x.len();
        let h = dt / substeps as f64;
        let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        let mut tmp = vec![0.0; n];
        for _ in 0..substeps {
            let x = self.x.clone();
            self.deriv(&x, u, &mut k1);
            for i in 0..n {
                tmp[i] = x[i] + 0.5 * h * k1[i];
            }
            self.deriv(&tmp, u, &mut k2);
            for i in 0..n {
                tmp[i] = x[i] + 0.5 * h * k2[i];
            }
            self.deriv(&tmp, u, &mut k3);
            for i in 0..n {
                tmp[i] = x[i] + h * k3[i];
            }
            self.deriv(&tmp, u, &mut k4);
            for i in 0..n {
                self.x[i] = x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
    }
}

/// Divergence threshold on any Euler angle.
pub const DIVERGENCE_DEG: f64 = 120.0;

/// Runs the roll doublet with the controller interpolated at `cfg.tau`.
pub fn run_doublet(cfg: &SimConfig, schedule: &GainSchedule) -> Result<SimResult> {
    cfg.validate()?;
    let look = schedule.interpolate(cfg.tau)?;
    let ctrl = look.controller;
    let dt = cfg.dt;
    let mut plant = TruePlant::new(cfg)?;

    // controller-side models use nominal parameters
    let e4 = {
        let e = cfg.effectiveness();
        let mut m = Matrix4::zeros();
        for r in 0..3 {
            for c in 0..4 {
                m[(r, c)] = e[(r, c)];
            }
        }
        for c in 0..4 {
            m[(3, c)] = 0.25;
        }
        m.try_inverse().ok_or_else(|| Error::Allocation("effectiveness with thrust row is singular".into()))?
    };
    let h = lowpass_filter(cfg.filter_cutoff_hz)?;
    let mut gyro_filters: Vec<Discrete> = (0..3).map(|_| Discrete::tustin(&with_derivative(&h)?, dt)).collect::<Result<_>>()?;
    let mut model_filters: Vec<Discrete> = (0..4).map(|_| Discrete::tustin(&h, dt)).collect::<Result<_>>()?;
    let mut ff: Vec<Discrete> = (0..3).map(|_| Discrete::tustin(&ctrl.feedforward(), dt)).collect::<Result<_>>()?;
    let phi_act = (-dt / cfg.tau).exp();
    let mut m_hat = [0.0; 4];
    let mut noise_filters: Vec<Discrete> = if cfg.noise_on {
        let n = noise_model(&cfg.noise)?;
        (0..3).map(|_| Discrete::zoh(&n, dt)).collect()
    } else {
        Vec::new()
    };
    let mut noise_int = [0.0; 3];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.noise_seed);

    let steps = (cfg.t_end / dt).round() as usize;
    let mut res = SimResult {
        time: Vec::with_capacity(steps + 1),
        eta: Vec::with_capacity(steps + 1),
        omega: Vec::with_capacity(steps + 1),
        omega_dot: Vec::with_capacity(steps + 1),
        m_c: Vec::with_capacity(steps + 1),
        reference: Vec::with_capacity(steps + 1),
        metrics: SimMetrics { overshoot: 0.0, coupling_deg: 0.0, coupling_fraction: 0.0, m_c_min: cfg.trim, m_c_max: cfg.trim },
        stable: true,
        saturations: 0,
    };
    let limit = DIVERGENCE_DEG.to_radians();
    for k in 0..=steps {
        let t = k as f64 * dt;
        let x = &plant.x;
        if x.iter().any(|v| !v.is_finite()) || x[..3].iter().any(|v| v.abs() > limit) {
            res.stable = false;
            break;
        }
        let eta = [x[0], x[1], x[2]];
        let omega = [x[3], x[4], x[5]];

        // measurements
        let mut n_f = [0.0; 3];
        if cfg.noise_on {
            for (i, f) in noise_filters.iter_mut().enumerate() {
                let w: f64 = rng.sample::<f64, _>(StandardNormal) / dt.sqrt();
                n_f[i] = f.step(w)[0];
            }
        }
        let omega_m: Vec<f64> = (0..3).map(|i| omega[i] + n_f[i]).collect();
        let eta_m: Vec<f64> = (0..3).map(|i| eta[i] + noise_int[i]).collect();
        for i in 0..3 {
            noise_int[i] += n_f[i] * dt;
        }

        // outer loop, same gains on every axis
        let r = [cfg.doublet.reference(t), 0.0, 0.0];
        let mut v = Vector4::zeros();
        for i in 0..3 {
            let rf = ff[i].step(r[i])[0];
            let nu = ctrl.k_eta * (rf - eta_m[i]) - ctrl.k_omega * omega_m[i];
            let acc_f = gyro_filters[i].step(omega_m[i])[1];
            v[i] = nu - acc_f;
        }
        // INDI increment on the filtered actuator model, thrust held at trim
        let mut m_hat_f = [0.0; 4];
        for j in 0..4 {
            m_hat_f[j] = model_filters[j].step(m_hat[j])[0];
        }
        v[3] = -m_hat_f.iter().sum::<f64>() / 4.0;
        let dm = e4 * v;
        let mut m_c = [0.0; 4];
        let mut m_abs = [0.0; 4];
        for j in 0..4 {
            let raw = cfg.trim + m_hat_f[j] + dm[j];
            let clamped = raw.clamp(0.0, 1.0);
            if clamped != raw {
                res.saturations += 1;
            }
            m_abs[j] = clamped;
            m_c[j] = clamped - cfg.trim;
        }
        for j in 0..4 {
            m_hat[j] = phi_act * m_hat[j] + (1.0 - phi_act) * m_c[j];
        }

        let acc = plant.acceleration(&plant.motor_outputs(&plant.x, &m_c));
        res.time.push(t);
        res.eta.push(eta);
        res.omega.push(omega);
        res.omega_dot.push(acc);
        res.m_c.push(m_abs);
        res.reference.push(r[0]);
        if k < steps {
            plant.advance(&m_c, dt, cfg.substeps);
        }
    }
    res.metrics = compute_metrics(&res.eta, &res.reference, &res.m_c);
    Ok(res)
}

/// Overshoot per reference step, off-axis coupling and command range.
pub fn compute_metrics(eta: &[[f64; 3]], reference: &[f64], m_c: &[[f64; 4]]) -> SimMetrics {
    let n = eta.len().min(reference.len());
    let mut overshoot: f64 = 0.0;
    let mut biggest_step: f64 = 0.0;
    let mut k = 1;
    let mut seg_start = 0;
    let mut prev_ref = reference.first().copied().unwrap_or(0.0);
    while k <= n {
        let boundary = k == n || reference[k] != reference[k - 1];
        if boundary {
            if seg_start > 0 {
                let target = reference[seg_start];
                let step = target - prev_ref;
                if step != 0.0 {
                    biggest_step = biggest_step.max(step.abs());
                    let worst = eta[seg_start..k].iter().map(|e| (e[0] - target) * step.signum()).fold(0.0, f64::max);
                    overshoot = overshoot.max(worst / step.abs());
                }
                prev_ref = target;
            }
            seg_start = k;
        }
        k += 1;
    }
    let coupling = eta[..n].iter().map(|e| e[1].abs().max(e[2].abs())).fold(0.0, f64::max).to_degrees();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for m in m_c {
        for v in m {
            lo = lo.min(*v);
            hi = hi.max(*v);
        }
    }
    SimMetrics {
        overshoot,
        coupling_deg: coupling,
        coupling_fraction: if biggest_step > 0.0 { coupling / biggest_step.to_degrees() } else { 0.0 },
        m_c_min: lo,
        m_c_max: hi,
    }
}

fn csv_text<I: IntoIterator<Item = Vec<String>>>(header: &[&str], rows: I) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    // writing to memory cannot fail
    w.write_record(header).expect("in-memory csv");
    for r in rows {
        w.write_record(&r).expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8 csv")
}

/// Per-run CSV: time, Euler angles, rates, accelerations, commands, reference.
pub fn run_csv(r: &SimResult) -> String {
    let header = [
        "time", "phi", "theta", "psi", "p", "q", "r", "p_dot", "q_dot", "r_dot", "m_c0", "m_c1", "m_c2", "m_c3", "phi_ref",
    ];
    csv_text(
        &header,
        (0..r.time.len()).map(|k| {
            std::iter::once(r.time[k])
                .chain(r.eta[k])
                .chain(r.omega[k])
                .chain(r.omega_dot[k])
                .chain(r.m_c[k])
                .chain(std::iter::once(r.reference[k]))
                .map(|v| v.to_string())
                .collect()
        }),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleKind {
    Nominal,
    Random,
    /// Equal perturbation on every motor.
    Structured,
    /// Largest `|| S_o,eta ||_inf` found by the sampled search.
    Worst,
}

/// One campaign run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub tau: f64,
    pub group: usize,
    pub kind: SampleKind,
    pub sample_id: usize,
    pub delta: Option<DeltaSample<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub tau: f64,
    pub group: usize,
    pub kind: SampleKind,
    pub sample_id: usize,
    /// Real uncertainties `[delta_C(4), delta_tau(4)]`, empty when nominal.
    pub delta: Vec<f64>,
    pub overshoot: f64,
    pub coupling_deg: f64,
    pub m_c_min: f64,
    pub m_c_max: f64,
    pub saturations: usize,
    pub stable: bool,
}

/// Roll-angle envelope of one group of `tau` values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub group: usize,
    pub taus: Vec<f64>,
    pub time: Vec<f64>,
    pub roll_min: Vec<f64>,
    pub roll_max: Vec<f64>,
    /// Nominal response at the first `tau` of the group.
    pub roll_nominal: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub group: usize,
    pub n_runs: usize,
    pub n_stable: usize,
    pub max_overshoot: f64,
    pub max_coupling_deg: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CampaignSummary {
    pub records: Vec<RunRecord>,
    pub envelopes: Vec<Envelope>,
    pub groups: Vec<GroupStats>,
}

impl CampaignSummary {
    pub fn n_runs(&self) -> usize {
        self.records.len()
    }

    pub fn n_stable(&self) -> usize {
        self.records.iter().filter(|r| r.stable).count()
    }

    pub fn max_overshoot(&self) -> f64 {
        self.records.iter().map(|r| r.overshoot).fold(0.0, f64::max)
    }

    pub fn max_coupling_deg(&self) -> f64 {
        self.records.iter().map(|r| r.coupling_deg).fold(0.0, f64::max)
    }

    /// Campaign summary CSV.
    pub fn records_csv(&self) -> String {
        let header = [
            "sample_id", "tau", "group", "kind", "delta_c0", "delta_c1", "delta_c2", "delta_c3", "delta_tau0", "delta_tau1",
            "delta_tau2", "delta_tau3", "overshoot", "coupling_deg", "m_c_min", "m_c_max", "saturations", "stable",
        ];
        csv_text(
            &header,
            self.records.iter().map(|r| {
                let kind = serde_json::to_value(r.kind).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
                let delta: Vec<String> =
                    if r.delta.is_empty() { vec![String::new(); 8] } else { r.delta.iter().map(|v| v.to_string()).collect() };
                let mut row = vec![r.sample_id.to_string(), r.tau.to_string(), r.group.to_string(), kind];
                row.extend(delta);
                row.extend([r.overshoot, r.coupling_deg, r.m_c_min, r.m_c_max].map(|v| v.to_string()));
                row.push(r.saturations.to_string());
                row.push(r.stable.to_string());
                row
            }),
        )
    }

    /// Per-group envelope CSV in long format.
    pub fn envelope_csv(&self) -> String {
        let header = ["group", "time", "roll_min_deg", "roll_max_deg", "roll_nominal_deg"];
        csv_text(
            &header,
            self.envelopes.iter().flat_map(|e| {
                (0..e.time.len()).map(move |k| {
                    let nominal = e.roll_nominal.get(k).copied().unwrap_or(f64::NAN);
                    vec![
                        e.group.to_string(),
                        e.time[k].to_string(),
                        e.roll_min[k].to_degrees().to_string(),
                        e.roll_max[k].to_degrees().to_string(),
                        nominal.to_degrees().to_string(),
                    ]
                })
            }),
        )
    }

    pub fn groups_csv(&self) -> String {
        let header = ["group", "n_runs", "n_stable", "max_overshoot", "max_coupling_deg"];
        csv_text(
            &header,
            self.groups.iter().map(|g| {
                vec![
                    g.group.to_string(),
                    g.n_runs.to_string(),
                    g.n_stable.to_string(),
                    g.max_overshoot.to_string(),
                    g.max_coupling_deg.to_string(),
                ]
            }),
        )
    }
}

/// Grid-5 draw for the simulator's uncertainty layout: eight real
/// parameters from `{-1, -0.5, 0, 0.5, 1}`. With `dynamics` the four
/// unstructured blocks get random all-pass sections, otherwise zero.
pub fn grid5_sample(seed: u64, dynamics: bool) -> DeltaSample<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let real = (0..8).map(|_| GRID5[rng.random_range(0..5)]).collect();
    let dynamic = (0..4).map(|_| if dynamics { random_allpass(&mut rng) } else { Ss::gain(0.0) }).collect();
    DeltaSample { real_scalars: real, dynamic_blocks: dynamic }
}

/// Equal-motor grid: `delta_C` and `delta_tau` each over the five grid
/// values, shared by all motors, no dynamic error.
pub fn structured_grid() -> Vec<DeltaSample<f64>> {
    let mut out = Vec::with_capacity(25);
    for &dc in &GRID5 {
        for &dt in &GRID5 {
            out.push(DeltaSample {
                real_scalars: [[dc; 4], [dt; 4]].concat(),
                dynamic_blocks: vec![Ss::gain(0.0); 4],
            });
        }
    }
    out
}

/// Splits the schedule's `tau` values into `n_groups` consecutive groups.
pub fn tau_groups(taus: &[f64], n_groups: usize) -> Vec<Vec<f64>> {
    let n_groups = n_groups.clamp(1, taus.len().max(1));
    let size = taus.len().div_ceil(n_groups);
    taus.chunks(size.max(1)).map(|c| c.to_vec()).collect()
}

/// Runs every spec in parallel and reduces to records and envelopes.
/// The reduction is order independent: records are sorted by their spec
/// index and envelopes are element-wise extrema.
pub fn run_campaign(base: &SimConfig, schedule: &GainSchedule, specs: &[RunSpec], n_groups: usize) -> Result<CampaignSummary> {
    let steps = (base.t_end / base.dt).round() as usize + 1;
    let outcomes: Vec<Result<(RunRecord, Vec<f64>)>> = specs
        .par_iter()
        .enumerate()
        .map(|(id, s)| {
            let cfg = SimConfig { tau: s.tau, delta: s.delta.clone(), ..base.clone() };
            let r = run_doublet(&cfg, schedule)?;
            let rec = RunRecord {
                tau: s.tau,
                group: s.group,
                kind: s.kind,
                sample_id: id,
                delta: s.delta.as_ref().map(|d| d.real_scalars.clone()).unwrap_or_default(),
                overshoot: r.metrics.overshoot,
                coupling_deg: r.metrics.coupling_deg,
                m_c_min: r.metrics.m_c_min,
                m_c_max: r.metrics.m_c_max,
                saturations: r.saturations,
                stable: r.stable,
            };
            Ok((rec, r.eta.iter().map(|e| e[0]).collect()))
        })
        .collect();
    let mut records = Vec::with_capacity(specs.len());
    let mut envelopes: Vec<Envelope> = Vec::new();
    for (out, spec) in outcomes.into_iter().zip(specs) {
        let (rec, roll) = out?;
        while envelopes.len() <= spec.group {
            let g = envelopes.len();
            envelopes.push(Envelope {
                group: g,
                taus: Vec::new(),
                time: (0..steps).map(|k| k as f64 * base.dt).collect(),
                roll_min: vec![f64::INFINITY; steps],
                roll_max: vec![f64::NEG_INFINITY; steps],
                roll_nominal: Vec::new(),
            });
        }
        let env = &mut envelopes[spec.group];
        if !env.taus.contains(&spec.tau) {
            env.taus.push(spec.tau);
        }
        if spec.kind == SampleKind::Nominal && env.roll_nominal.is_empty() {
            env.roll_nominal = roll.clone();
        }
        for (k, v) in roll.iter().enumerate().take(steps) {
            env.roll_min[k] = env.roll_min[k].min(*v);
            env.roll_max[k] = env.roll_max[k].max(*v);
        }
        records.push(rec);
    }
    let groups = (0..envelopes.len().max(n_groups))
        .map(|g| {
            let rs: Vec<&RunRecord> = records.iter().filter(|r| r.group == g).collect();
            GroupStats {
                group: g,
                n_runs: rs.len(),
                n_stable: rs.iter().filter(|r| r.stable).count(),
                max_overshoot: rs.iter().map(|r| r.overshoot).fold(0.0, f64::max),
                max_coupling_deg: rs.iter().map(|r| r.coupling_deg).fold(0.0, f64::max),
            }
        })
        .collect();
    Ok(CampaignSummary { records, envelopes, groups })
}

/// Campaign composition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignConfig {
    /// Random grid-5 realizations in total, spread round-robin over the
    /// schedule's `tau` values.
    pub n_random: usize,
    pub n_groups: usize,
    pub structured: bool,
    pub worst: bool,
    /// Random samples added to the sign-vertex search for the worst case.
    pub worst_search_samples: usize,
    /// Random draws also perturb the unstructured actuator blocks.
    pub random_dynamics: bool,
    pub seed: u64,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        Self { n_random: 1000, n_groups: 5, structured: true, worst: true, worst_search_samples: 32, random_dynamics: false, seed: 1 }
    }
}

/// Builds the run list: per `tau` the nominal run, the structured grid and
/// the worst-case sample (supplied by `worst`), plus the random draws.
pub fn campaign_specs(
    taus: &[f64],
    cfg: &CampaignConfig,
    worst: &dyn Fn(f64) -> Result<Option<DeltaSample<f64>>>,
) -> Result<Vec<RunSpec>> {
    let groups = tau_groups(taus, cfg.n_groups);
    let group_of = |tau: f64| groups.iter().position(|g| g.contains(&tau)).unwrap_or(0);
    let mut specs = Vec::new();
    for &tau in taus {
        let group = group_of(tau);
        specs.push(RunSpec { tau, group, kind: SampleKind::Nominal, sample_id: 0, delta: None });
        if cfg.structured {
            for (k, d) in structured_grid().into_iter().enumerate() {
                specs.push(RunSpec { tau, group, kind: SampleKind::Structured, sample_id: k, delta: Some(d) });
            }
        }
        if cfg.worst {
            if let Some(d) = worst(tau)? {
                specs.push(RunSpec { tau, group, kind: SampleKind::Worst, sample_id: 0, delta: Some(d) });
            }
        }
    }
    for k in 0..cfg.n_random {
        let tau = taus[k % taus.len()];
        let seed = cfg.seed ^ (k as u64 + 1).wrapping_mul(0xD1B5_4A32_D192_ED03);
        specs.push(RunSpec { tau, group: group_of(tau), kind: SampleKind::Random, sample_id: k, delta: Some(grid5_sample(seed, cfg.random_dynamics)) });
    }
    Ok(specs)
}

/// Full campaign over the schedule's design points: nominal, structured,
/// worst-`|| S_o,eta ||` and random runs, grouped by `tau`.
pub fn monte_carlo(schedule: &GainSchedule, syn: &SynthesisConfig, base: &SimConfig, cfg: &CampaignConfig) -> Result<CampaignSummary> {
    let taus = schedule.taus();
    if taus.is_empty() {
        return Err(Error::Schedule("empty schedule".into()));
    }
    let worst = |tau: f64| -> Result<Option<DeltaSample<f64>>> {
        let k = taus.iter().position(|t| *t == tau).unwrap_or(0);
        let plant = syn.uncertain_plant(tau, base.uncertainty)?;
        let ctrl = schedule.interpolate(tau)?.controller;
        let seed = cfg.seed ^ (k as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let (d, _) = worst_sensitivity_sample(&plant, &ctrl, BreakPoint::Eta, cfg.worst_search_samples, seed)?;
        Ok(Some(d))
    };
    let specs = campaign_specs(&taus, cfg, &worst)?;
    run_campaign(base, schedule, &specs, cfg.n_groups)
}
