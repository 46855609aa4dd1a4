//! Fixed-structure tuning of the outer controller, co-designed weights,
//! reference model and feedforward, and the gain schedule over `tau`.

mod schedule;

pub use schedule::{
    Certificate, DesignPoint, GainSchedule, Interpolated, Interpolation, MarginSummary, MultiLoopSummary,
    SCHEDULE_FORMAT_VERSION,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, InfeasibleReport, Result};
use crate::optimize::{nelder_mead, NmOptions, NmResult};
use crate::linsys::{
    classify_poles, hinf_norm, hinf_peak, logspace, step_metrics, StateSpace, CERTIFY_REL_TOL, HINF_REL_TOL,
};
use crate::margins::{disk_margin, multiloop_disk_margin, nominal_margins, DiskMarginResult, PointMargins};
use crate::plant::{
    assemble_design_plant, lowpass_filter, noise_model, BreakPoint, ClosedLoop, ControllerParams, DesignPlant,
    NoiseConfig, PlantSpec, QuadrotorParams, RefModelParams, UncertaintyConfig,
};

type Ss = StateSpace<f64>;

/// Weights and co-design settings. All gains are absolute values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightConfig {
    /// High-frequency bound on `|S_o,eta|`.
    pub m_s: f64,
    /// Low-frequency bound on `|S_o,eta|`.
    pub a_s: f64,
    /// Transition frequency of the sensitivity weight, rad/s (co-designed).
    pub omega_s: f64,
    pub alpha_target: f64,
    pub sigma: f64,
    /// Model-following crossover, rad/s (co-designed).
    pub omega_m: f64,
    /// High-frequency bound on the model-following error.
    pub m_m: f64,
    /// Low-frequency bound on the model-following error.
    pub a_m: f64,
    pub n_codesign: f64,
    /// Largest co-designed frequency considered, rad/s.
    pub omega_cap: f64,
}

impl Default for WeightConfig {
    fn default() -> Self {
        Self {
            m_s: 10f64.powf(6.0 / 20.0),
            a_s: 10f64.powf(-50.0 / 20.0),
            omega_s: 1.0,
            alpha_target: 0.764,
            sigma: 0.0,
            omega_m: 1.0,
            m_m: 1.0,
            a_m: 10f64.powf(-90.0 / 20.0),
            n_codesign: 1000.0,
            omega_cap: 1e4,
        }
    }
}

impl WeightConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(format!("weights: {m}")));
        if !(self.a_s > 0.0 && self.a_s < 1.0 && 1.0 < self.m_s && self.m_s.is_finite()) {
            return bad("need 0 < a_s < 1 < m_s");
        }
        if !(self.a_m > 0.0 && self.a_m < self.m_m && self.m_m.is_finite()) {
            return bad("need 0 < a_m < m_m");
        }
        if !(self.alpha_target > 0.0 && self.alpha_target < 2.0) {
            return bad("alpha_target must lie in (0, 2)");
        }
        if !(self.sigma.abs() < 1.0) {
            return bad("sigma must lie in (-1, 1)");
        }
        if !(self.omega_s > 0.0 && self.omega_m > 0.0 && self.n_codesign > 0.0 && self.omega_cap > 0.0) {
            return bad("frequencies and n_codesign must be positive");
        }
        Ok(())
    }
}

/// `(s/M + w)/(s + w A)`: the inverse weight runs from `A` at low
/// frequency to `M` at high frequency.
fn shaping_weight(m: f64, a: f64, w: f64) -> Result<Ss> {
    Ss::from_tf(&[1.0 / m, w], &[1.0, w * a])
}

pub fn weight_soeta(cfg: &WeightConfig) -> Result<Ss> {
    shaping_weight(cfg.m_s, cfg.a_s, cfg.omega_s)
}

pub fn weight_m(cfg: &WeightConfig) -> Result<Ss> {
    shaping_weight(cfg.m_m, cfg.a_m, cfg.omega_m)
}

/// `N / (1 + N w)`.
pub fn codesign_gain(omega: f64, n: f64) -> f64 {
    n / (1.0 + n * omega)
}

/// Largest transition frequency `w <= cap` with `|| W_w G ||_inf <= 1` for
/// the weight `(s/M + w)/(s + w A)` and stable SISO `g`; zero when no `w`
/// works (`|G|` reaches `M`).
pub fn max_weight_bandwidth(g: &Ss, m: f64, a: f64, cap: f64, rel_tol: f64) -> Result<f64> {
    if !g.is_siso() {
        return Err(Error::Dimension("max_weight_bandwidth needs a SISO system".into()));
    }
    // |W(j v) G(j v)| <= 1  <=>  w^2 (|G|^2 - A^2) <= v^2 (1 - |G|^2 / M^2)
    let bound = |v: f64| -> f64 {
        let s2 = g.eval_siso(v).map(|z| z.norm_sqr()).unwrap_or(f64::INFINITY);
        if s2 >= m * m {
            0.0
        } else if s2 <= a * a {
            f64::INFINITY
        } else {
            v * ((1.0 - s2 / (m * m)) / (s2 - a * a)).sqrt()
        }
    };
    if g.d()[(0, 0)].abs() >= m {
        return Ok(0.0);
    }
    let mags: Vec<f64> = g.poles().iter().map(|p| p.norm()).filter(|x| *x > 0.0).collect();
    let lo = mags.iter().copied().fold(f64::INFINITY, f64::min).min(cap).max(1e-6) * 1e-3;
    let hi = mags.iter().copied().fold(0.0, f64::max).max(cap) * 1e3;
    let decades = (hi / lo).log10();
    let grid: Vec<f64> = logspace(lo.log10(), hi.log10(), (decades * 40.0).ceil() as usize + 1);
    let vals: Vec<f64> = grid.iter().map(|&v| bound(v)).collect();
    let k = (0..vals.len()).min_by(|&i, &j| vals[i].total_cmp(&vals[j])).expect("nonempty grid");
    let mut best = vals[k];
    if best > 0.0 && best.is_finite() {
        // golden-section refinement in log frequency around the grid minimum
        let (mut x0, mut x1) = (grid[k.saturating_sub(1)].ln(), grid[(k + 1).min(grid.len() - 1)].ln());
        let r = (5f64.sqrt() - 1.0) / 2.0;
        let f = |x: f64| bound(x.exp());
        let (mut c, mut d) = (x1 - r * (x1 - x0), x0 + r * (x1 - x0));
        let (mut fc, mut fd) = (f(c), f(d));
        for _ in 0..60 {
            if fc < fd {
                x1 = d;
                d = c;
                fd = fc;
                c = x1 - r * (x1 - x0);
                fc = f(c);
            } else {
                x0 = c;
                c = d;
                fc = fd;
                d = x0 + r * (x1 - x0);
                fd = f(d);
            }
        }
        best = best.min(fc).min(fd);
    }
    let mut w = best.min(cap);
    if w <= 0.0 {
        return Ok(0.0);
    }
    // certify against the continuous norm; shrink to the bound at any peak found
    for _ in 0..30 {
        let wg = shaping_weight(m, a, w)?.series(g)?;
        let peak = hinf_peak(&wg, rel_tol)?;
        if peak.norm <= 1.0 {
            return Ok(w);
        }
        let b = bound(peak.frequency);
        w = if b < w { b * (1.0 - 1e-9) } else { w * (1.0 - 4.0 * rel_tol) / peak.norm.min(1.0 + 1e-3) };
        if w <= 0.0 {
            return Ok(0.0);
        }
    }
    Err(Error::Numerical("weight bandwidth certification did not converge".into()))
}

/// Settings for one synthesis run over the `tau` grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthesisConfig {
    /// Roll effectiveness.
    pub cp: f64,
    /// Cutoff of the INDI measurement filter `H`, Hz.
    pub filter_cutoff_hz: f64,
    pub noise: NoiseConfig,
    pub weights: WeightConfig,
    pub tau_min: f64,
    pub tau_max: f64,
    pub n_points: usize,
    /// Evaluation budget per optimizer start.
    pub budget: usize,
    /// Optimizer starts per stage when there is no warm start.
    pub n_starts: usize,
    pub warm_start: bool,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self {
            cp: 300.0,
            filter_cutoff_hz: 50.0,
            noise: NoiseConfig::default(),
            weights: WeightConfig::default(),
            tau_min: 0.010,
            tau_max: 0.080,
            n_points: 30,
            budget: 150,
            n_starts: 3,
            warm_start: true,
        }
    }
}

impl SynthesisConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if !(self.tau_min > 0.0 && self.tau_max > self.tau_min) {
            return Err(Error::InvalidParameter("need 0 < tau_min < tau_max".into()));
        }
        if self.n_points < 2 {
            return Err(Error::InvalidParameter("n_points must be at least 2".into()));
        }
        if self.budget < 10 || self.n_starts == 0 {
            return Err(Error::InvalidParameter("budget must be at least 10 and n_starts positive".into()));
        }
        if !(self.cp > 0.0 && self.filter_cutoff_hz > 0.0) {
            return Err(Error::InvalidParameter("cp and filter_cutoff_hz must be positive".into()));
        }
        Ok(())
    }

    pub fn taus(&self) -> Vec<f64> {
        let n = self.n_points;
        (0..n)
            .map(|k| if k + 1 == n { self.tau_max } else { self.tau_min + (self.tau_max - self.tau_min) * k as f64 / (n - 1) as f64 })
            .collect()
    }

    /// Nominal design plant at `tau`.
    pub fn nominal_plant(&self, tau: f64) -> Result<DesignPlant> {
        assemble_design_plant(PlantSpec {
            params: QuadrotorParams::roll(self.cp, tau),
            h: lowpass_filter(self.filter_cutoff_hz)?,
            noise: noise_model(&self.noise)?,
            tref: None,
            uncertainty: None,
        })
    }

    /// Design plant at `tau` with the uncertainty channels open.
    pub fn uncertain_plant(&self, tau: f64, unc: UncertaintyConfig) -> Result<DesignPlant> {
        assemble_design_plant(PlantSpec {
            params: QuadrotorParams::roll(self.cp, tau),
            h: lowpass_filter(self.filter_cutoff_hz)?,
            noise: noise_model(&self.noise)?,
            tref: None,
            uncertainty: Some(unc),
        })
    }
}

/// Outcome of the feedback stage.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackResult {
    pub controller: ControllerParams,
    /// Certified largest sensitivity-weight bandwidth.
    pub omega_s: f64,
    /// `|| alpha (S_omega_dot + (sigma - 1)/2) ||_inf`
    pub disk_constraint: f64,
    /// Optimizer coordinates `[ln(tau^2 K_eta), ln(tau K_omega)]`.
    pub x: Vec<f64>,
    pub evals: usize,
}

/// Outcome of the feedforward stage.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedforwardResult {
    pub controller: ControllerParams,
    pub omega_m: f64,
    /// Optimizer coordinates `[ln(tau a_ff), ln(b_ff / a_ff)]`.
    pub x: Vec<f64>,
    pub evals: usize,
}

const INFEASIBLE: f64 = 1e4;

fn feedback_params(tau: f64, x: &[f64]) -> ControllerParams {
    ControllerParams::feedback_only(x[0].exp() / (tau * tau), x[1].exp() / tau)
}

fn disk_norm(s: &Ss, cfg: &WeightConfig, rel_tol: f64) -> Result<f64> {
    let d = disk_margin(s, cfg.sigma, rel_tol)?;
    Ok(cfg.alpha_target / d.alpha_max)
}

/// Sensitivities at `eta` and `Omega_dot` when both closed loops are stable.
fn feedback_sensitivities(plant: &DesignPlant, ctrl: &ControllerParams) -> Result<(Ss, Ss)> {
    let cl = plant.close(ctrl)?;
    let s_eta = cl.sensitivity(BreakPoint::Eta)?;
    let s_acc = cl.sensitivity(BreakPoint::OmegaDot)?;
    if !s_eta.is_stable() || !s_acc.is_stable() {
        return Err(Error::Unstable("feedback candidate".into()));
    }
    Ok((s_eta, s_acc))
}

fn feedback_merit(plant: &DesignPlant, cfg: &WeightConfig, x: &[f64]) -> f64 {
    let tau = plant.spec.params.tau;
    if x.iter().any(|v| !v.is_finite() || v.abs() > 30.0) {
        return 10.0 * INFEASIBLE;
    }
    let Ok((s_eta, s_acc)) = feedback_sensitivities(plant, &feedback_params(tau, x)) else {
        return 10.0 * INFEASIBLE;
    };
    let Ok(disk) = disk_norm(&s_acc, cfg, HINF_REL_TOL) else {
        return 10.0 * INFEASIBLE;
    };
    // stay clear of the boundary by the evaluation accuracy
    let disk = disk * (1.0 + 2.0 * HINF_REL_TOL);
    if disk > 1.0 {
        return INFEASIBLE + disk;
    }
    match max_weight_bandwidth(&s_eta, cfg.m_s, cfg.a_s, cfg.omega_cap, HINF_REL_TOL) {
        Ok(w) if w > 0.0 => codesign_gain(w, cfg.n_codesign),
        _ => INFEASIBLE + 1.0,
    }
}

/// Runs Nelder-Mead from each start, in parallel, and keeps the best.
fn multistart<F: Fn(&[f64]) -> f64 + Sync>(f: F, starts: &[Vec<f64>], budget: usize, step: f64) -> NmResult {
    let opts = NmOptions { max_evals: budget, initial_step: step, ..NmOptions::default() };
    let runs: Vec<NmResult> = starts.par_iter().map(|x0| nelder_mead(&f, x0, opts)).collect();
    let evals = runs.iter().map(|r| r.evals).sum();
    let mut best = runs.into_iter().min_by(|a, b| a.f.total_cmp(&b.f)).expect("at least one start");
    best.evals = evals;
    best
}

fn jittered(base: &[f64], n: usize, scale: f64, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, scale).expect("positive scale");
    (0..n).map(|_| base.iter().map(|v| v + normal.sample(&mut rng)).collect()).collect()
}

/// Tunes `K_eta` and `K_omega` with unity feedforward: maximize the
/// sensitivity-weight bandwidth subject to `|| W_S S_o,eta || <= 1` and the
/// disk constraint at `Omega_dot`.
pub fn tune_feedback(
    plant: &DesignPlant,
    cfg: &WeightConfig,
    budget: usize,
    n_starts: usize,
    seed: u64,
    warm: Option<&[f64]>,
) -> Result<FeedbackResult> {
    let tau = plant.spec.params.tau;
    // rate loop near a quarter of the actuator bandwidth, attitude loop critically damped
    let heuristic = vec![(0.25f64 * 0.25 / 4.0).ln(), 0.25f64.ln()];
    let mut starts = Vec::new();
    match warm {
        Some(w) => {
            starts.push(w.to_vec());
            starts.extend(jittered(w, n_starts.saturating_sub(2).max(1), 0.1, seed));
        }
        None => {
            starts.push(heuristic.clone());
            starts.extend(jittered(&heuristic, n_starts.saturating_sub(1), 0.7, seed));
        }
    }
    let f = |x: &[f64]| feedback_merit(plant, cfg, x);
    let best = multistart(f, &starts, budget, if warm.is_some() { 0.05 } else { 0.3 });
    if best.f >= INFEASIBLE {
        return Err(Error::Infeasible(Box::new(InfeasibleReport {
            tau: Some(tau),
            stage: "feedback".into(),
            best_params: { let c = feedback_params(tau, &best.x); vec![c.k_eta, c.k_omega] },
            violation: if best.f < 10.0 * INFEASIBLE { best.f - INFEASIBLE } else { f64::INFINITY },
        })));
    }
    let controller = feedback_params(tau, &best.x);
    let (s_eta, s_acc) = feedback_sensitivities(plant, &controller)?;
    let omega_s = max_weight_bandwidth(&s_eta, cfg.m_s, cfg.a_s, cfg.omega_cap, CERTIFY_REL_TOL)?;
    let disk_constraint = disk_norm(&s_acc, cfg, CERTIFY_REL_TOL)?;
    Ok(FeedbackResult { controller, omega_s, disk_constraint, x: best.x, evals: best.evals })
}

/// Largest real part magnitude bound used to size step-response horizons.
fn settle_horizon(sys: &Ss) -> f64 {
    let slow = sys.poles().iter().map(|p| p.re.abs()).fold(f64::INFINITY, f64::min);
    if slow.is_finite() && slow > 0.0 { (8.0 / slow).min(60.0) } else { 60.0 }
}

/// Overshoot band targeted by the reference model.
pub const REF_OVERSHOOT_BAND: [f64; 2] = [0.045, 0.050];

/// Reference model from the feedback closed loop `r -> eta`: third pole and
/// natural frequency from the poles, damping bisected for about 5% overshoot.
pub fn derive_reference_model(t: &Ss) -> Result<RefModelParams> {
    derive_reference_model_in(t, REF_OVERSHOOT_BAND)
}

/// [`derive_reference_model`] with an explicit overshoot band.
pub fn derive_reference_model_in(t: &Ss, band: [f64; 2]) -> Result<RefModelParams> {
    let (omega_ref, b_ref) = match classify_poles(t) {
        Ok(c) => {
            let b = c
                .real_poles
                .last()
                .map(|p| p.abs())
                .or_else(|| c.other_pairs.last().map(|p| p.norm()))
                .unwrap_or(10.0 * c.natural_frequency);
            (c.natural_frequency, b)
        }
        Err(Error::Classification(_)) => {
            let mags: Vec<f64> = t.poles().iter().map(|p| p.norm()).collect();
            if mags.is_empty() {
                return Err(Error::Classification("closed loop has no poles".into()));
            }
            let slow = mags.iter().copied().fold(f64::INFINITY, f64::min);
            let fast = mags.iter().copied().fold(0.0, f64::max);
            (slow, fast)
        }
        Err(e) => return Err(e),
    };
    fit_damping(omega_ref, b_ref, band)
}

/// Bisection on `zeta` so the reference-model overshoot falls in `band`.
pub fn fit_damping(omega_ref: f64, b_ref: f64, band: [f64; 2]) -> Result<RefModelParams> {
    let target = 0.5 * (band[0] + band[1]);
    let (mut lo, mut hi) = (0.05, 1.0);
    let mut p = RefModelParams { omega_ref, zeta_ref: 0.5 * (lo + hi), b_ref };
    for _ in 0..60 {
        let sys = p.system()?;
        let os = step_metrics(&sys, settle_horizon(&sys))?.overshoot;
        if os >= band[0] && os <= band[1] {
            return Ok(p);
        }
        if os > target {
            lo = p.zeta_ref;
        } else {
            hi = p.zeta_ref;
        }
        p.zeta_ref = 0.5 * (lo + hi);
    }
    Ok(p)
}

fn feedforward_params(fb: &ControllerParams, tau: f64, x: &[f64]) -> ControllerParams {
    let a = x[0].exp() / tau;
    ControllerParams { a_ff: a, b_ff: a * x[1].abs().exp(), ..*fb }
}

/// Model-following error `T_ref - T_fb F`.
fn model_error(t_fb: &Ss, tref: &Ss, ctrl: &ControllerParams) -> Result<Ss> {
    Ok(tref.difference(&ctrl.feedforward().series(t_fb)?)?.minimal())
}

/// Tunes the lead feedforward for the largest model-following bandwidth
/// subject to `|| W_M (T_ref - T) ||_inf <= 1`.
pub fn tune_feedforward(
    plant: &DesignPlant,
    feedback: &ControllerParams,
    refmodel: &RefModelParams,
    cfg: &WeightConfig,
    budget: usize,
    n_starts: usize,
    seed: u64,
    warm: Option<&[f64]>,
) -> Result<FeedforwardResult> {
    let tau = plant.spec.params.tau;
    let fb = ControllerParams { a_ff: 1.0, b_ff: 1.0, ..*feedback };
    let t_fb = plant.close(&fb)?.channel(&["r_eta"], &["eta"])?;
    let tref = refmodel.system()?;
    let merit = |x: &[f64]| -> f64 {
        if x.iter().any(|v| !v.is_finite() || v.abs() > 30.0) {
            return 10.0 * INFEASIBLE;
        }
        let ctrl = feedforward_params(&fb, tau, x);
        match model_error(&t_fb, &tref, &ctrl)
            .and_then(|m| max_weight_bandwidth(&m, cfg.m_m, cfg.a_m, cfg.omega_cap, HINF_REL_TOL))
        {
            Ok(w) if w > 0.0 => codesign_gain(w, cfg.n_codesign),
            _ => INFEASIBLE + 1.0,
        }
    };
    let mut starts = Vec::new();
    match warm {
        Some(w) => {
            starts.push(w.to_vec());
            starts.extend(jittered(w, n_starts.saturating_sub(2).max(1), 0.1, seed));
        }
        None => {
            let base = vec![0.0, 0.5];
            starts.push(base.clone());
            starts.push(vec![1.0, 0.0]);
            starts.extend(jittered(&base, n_starts.saturating_sub(2), 0.7, seed));
        }
    }
    let best = multistart(merit, &starts, budget, if warm.is_some() { 0.05 } else { 0.3 });
    if best.f >= INFEASIBLE {
        let c = feedforward_params(&fb, tau, &best.x);
        return Err(Error::Infeasible(Box::new(InfeasibleReport {
            tau: Some(tau),
            stage: "feedforward".into(),
            best_params: vec![c.a_ff, c.b_ff],
            violation: f64::INFINITY,
        })));
    }
    let controller = feedforward_params(&fb, tau, &best.x);
    let m = model_error(&t_fb, &tref, &controller)?;
    let omega_m = max_weight_bandwidth(&m, cfg.m_m, cfg.a_m, cfg.omega_cap, CERTIFY_REL_TOL)?;
    Ok(FeedforwardResult { controller, omega_m, x: best.x, evals: best.evals })
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

fn summarize(m: &PointMargins) -> MarginSummary {
    MarginSummary {
        point: m.point,
        disk_alpha: m.disk.alpha_max,
        disk_gm_db: finite(m.disk.gm_db()),
        disk_pm_deg: m.disk.pm_deg(),
        gm_db: m.classical.gm_db.and_then(finite),
        pm_deg: m.classical.pm_deg,
    }
}

fn summarize_multi(d: &DiskMarginResult<f64>) -> MultiLoopSummary {
    MultiLoopSummary { disk_alpha: d.alpha_max, disk_gm_db: finite(d.gm_db()), disk_pm_deg: d.pm_deg() }
}

/// First frequency where `|S|` rises through `1/sqrt(2)`.
pub fn sensitivity_bandwidth(s: &Ss) -> Result<f64> {
    let level = 0.5f64.sqrt();
    let mag = |w: f64| s.eval_siso(w).map(|z| z.norm()).unwrap_or(f64::INFINITY);
    let grid: Vec<f64> = logspace(-4.0, 6.0, 2001);
    if mag(grid[0]) >= level {
        return Ok(0.0);
    }
    for pair in grid.windows(2) {
        if mag(pair[1]) >= level {
            let (mut lo, mut hi) = (pair[0], pair[1]);
            for _ in 0..100 {
                let mid = (lo * hi).sqrt();
                if mag(mid) >= level { hi = mid } else { lo = mid }
            }
            return Ok((lo * hi).sqrt());
        }
    }
    Ok(f64::INFINITY)
}

/// Recomputes every constraint and the nominal margins at certification accuracy.
pub fn certify(
    plant: &DesignPlant,
    ctrl: &ControllerParams,
    weights: &WeightConfig,
    refmodel: &RefModelParams,
) -> Result<Certificate> {
    let tref = refmodel.system()?;
    let cl: ClosedLoop = plant.with_reference_model(tref)?.close(ctrl)?;
    let stable = cl.check_stable().is_ok();
    let s_eta = cl.sensitivity(BreakPoint::Eta)?;
    let s_acc = cl.sensitivity(BreakPoint::OmegaDot)?;
    let m = cl.channel(&["r_eta"], &["e_ref_eta"])?;
    let soeta_constraint = hinf_norm(&weight_soeta(weights)?.series(&s_eta)?, CERTIFY_REL_TOL)?;
    let disk_constraint = disk_norm(&s_acc, weights, CERTIFY_REL_TOL)?;
    let model_following_constraint = hinf_norm(&weight_m(weights)?.series(&m)?, CERTIFY_REL_TOL)?;
    let margins = nominal_margins(&cl, weights.sigma)?.iter().map(summarize).collect();
    let multi = multiloop_disk_margin(&cl, &[BreakPoint::Mc, BreakPoint::OmegaDot], weights.sigma, CERTIFY_REL_TOL)?;
    let t = cl.channel(&["r_eta"], &["eta"])?;
    let step = step_metrics(&t, settle_horizon(&t))?;
    Ok(Certificate {
        soeta_constraint,
        disk_constraint,
        model_following_constraint,
        margins,
        multiloop_mc_omega_dot: summarize_multi(&multi),
        soeta_bandwidth: sensitivity_bandwidth(&s_eta)?,
        overshoot: step.overshoot,
        rise_time: step.rise_time,
        settle_time: step.settle_time,
        stable,
    })
}

/// Tolerance on certified constraint values.
pub const CERTIFY_SLACK: f64 = 1e-6;

fn point_seed(seed: u64, k: usize) -> u64 {
    seed ^ (k as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Warm-start state carried from one design point to the next.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WarmStart {
    pub feedback: Option<Vec<f64>>,
    pub feedforward: Option<Vec<f64>>,
}

/// Closed-loop overshoot accepted at a design point.
pub const OVERSHOOT_ACCEPT: [f64; 2] = [0.047, 0.050];

/// Designs and certifies one point of the schedule.
///
/// The reference model is first fitted to the default overshoot band; when
/// the certified closed-loop overshoot misses [`OVERSHOOT_ACCEPT`], the
/// reference-model target is shifted by the miss and the feedforward retuned.
pub fn design_point(cfg: &SynthesisConfig, tau: f64, seed: u64, warm: &mut WarmStart) -> Result<DesignPoint> {
    let plant = cfg.nominal_plant(tau)?;
    let w = &cfg.weights;
    let fb = tune_feedback(&plant, w, cfg.budget, cfg.n_starts, seed, warm.feedback.as_deref())?;
    let t_fb = plant.close(&fb.controller)?.channel(&["r_eta"], &["eta"])?;
    let weights_fb = WeightConfig { omega_s: fb.omega_s, ..*w };
    let goal = 0.5 * (OVERSHOOT_ACCEPT[0] + OVERSHOOT_ACCEPT[1]);
    let mut band = REF_OVERSHOOT_BAND;
    let mut ff_warm = warm.feedforward.clone();
    let mut evals = fb.evals;
    let mut round = 0;
    let (refmodel, ff, weights, certified) = loop {
        let refmodel = derive_reference_model_in(&t_fb, band)?;
        let ff = tune_feedforward(
            &plant,
            &fb.controller,
            &refmodel,
            &weights_fb,
            cfg.budget,
            cfg.n_starts,
            seed.wrapping_add(1 + round),
            ff_warm.as_deref(),
        )?;
        evals += ff.evals;
        let weights = WeightConfig { omega_m: ff.omega_m, ..weights_fb };
        let certified = certify(&plant, &ff.controller, &weights, &refmodel)?;
        let os = certified.overshoot;
        round += 1;
        if (OVERSHOOT_ACCEPT[0]..=OVERSHOOT_ACCEPT[1]).contains(&os) || round == 5 {
            break (refmodel, ff, weights, certified);
        }
        let centre = 0.5 * (band[0] + band[1]) + goal - os;
        band = [centre - 5e-4, centre + 5e-4];
        ff_warm = Some(ff.x.clone());
    };
    log::info!(
        "tau {tau:.5}: K_eta {:.4} K_omega {:.4} a {:.4} b {:.4} overshoot {:.4} evals {evals}",
        ff.controller.k_eta,
        ff.controller.k_omega,
        ff.controller.a_ff,
        ff.controller.b_ff,
        certified.overshoot,
    );
    if !certified.stable || certified.max_constraint() > 1.0 + CERTIFY_SLACK {
        let c = ff.controller;
        return Err(Error::Infeasible(Box::new(InfeasibleReport {
            tau: Some(tau),
            stage: "certification".into(),
            best_params: vec![c.k_eta, c.k_omega, c.a_ff, c.b_ff],
            violation: certified.max_constraint(),
        })));
    }
    if cfg.warm_start {
        warm.feedback = Some(fb.x);
        warm.feedforward = Some(ff.x);
    }
    Ok(DesignPoint { tau, controller: ff.controller, weights, refmodel, certified })
}

/// Tunes and certifies every point of the `tau` grid, warm-starting each
/// point from its predecessor when enabled.
pub fn synthesize_schedule(cfg: &SynthesisConfig, seed: u64) -> Result<GainSchedule> {
    cfg.validate()?;
    let taus = cfg.taus();
    let points = if cfg.warm_start {
        let mut warm = WarmStart::default();
        taus.iter().enumerate().map(|(k, &tau)| design_point(cfg, tau, point_seed(seed, k), &mut warm)).collect::<Result<Vec<_>>>()?
    } else {
        taus.par_iter()
            .enumerate()
            .map(|(k, &tau)| design_point(cfg, tau, point_seed(seed, k), &mut WarmStart::default()))
            .collect::<Result<Vec<_>>>()?
    };
    GainSchedule::new(points)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weight_asymptotes() {
        let cfg = WeightConfig { omega_s: 20.0, ..Default::default() };
        let w = weight_soeta(&cfg).unwrap();
        let lf = 1.0 / w.eval_siso(1e-6).unwrap().norm();
        let hf = 1.0 / w.eval_siso(1e9).unwrap().norm();
        assert!((20.0 * lf.log10() + 50.0).abs() < 1e-6);
        assert!((20.0 * hf.log10() - 6.0).abs() < 1e-3);
        let mid = 1.0 / w.eval_siso(20.0).unwrap().norm();
        assert!(mid > lf && mid < hf);
    }

    #[test]
    fn codesign_gain_values() {
        assert_eq!(codesign_gain(0.0, 1000.0), 1000.0);
        assert!((codesign_gain(20.0, 1000.0) - 0.049998).abs() < 1e-6);
    }

    #[test]
    fn weight_bandwidth_is_tight() {
        let s = Ss::from_tf(&[1.0, 0.0, 0.0], &[1.0, 8.0, 40.0]).unwrap();
        let (m, a) = (2.0, 10f64.powf(-2.5));
        let w = max_weight_bandwidth(&s, m, a, 1e4, 1e-8).unwrap();
        let n = hinf_norm(&shaping_weight(m, a, w).unwrap().series(&s).unwrap(), 1e-9).unwrap();
        assert!(n <= 1.0 + 1e-8 && n > 1.0 - 1e-4, "{n}");
        let n2 = hinf_norm(&shaping_weight(m, a, w * 1.01).unwrap().series(&s).unwrap(), 1e-9).unwrap();
        assert!(n2 > 1.0);
        // perfect matching leaves the bandwidth at its cap
        assert_eq!(max_weight_bandwidth(&Ss::gain(0.0), 1.0, 1e-4, 500.0, 1e-6).unwrap(), 500.0);
    }

    #[test]
    fn reference_model_from_poles() {
        // poles -50 and -5 +- 5j
        let t = Ss::from_tf(&[2500.0], &[1.0, 60.0, 550.0, 2500.0]).unwrap();
        let r = derive_reference_model(&t).unwrap();
        assert!((r.b_ref - 50.0).abs() < 1e-6);
        assert!((r.omega_ref - 50f64.sqrt()).abs() < 1e-6);
        let sys = r.system().unwrap();
        assert!((sys.dc_gain().unwrap()[(0, 0)] - 1.0).abs() < 1e-12);
        let os = step_metrics(&sys, 20.0).unwrap().overshoot;
        assert!((0.045..=0.05).contains(&os), "{os}");
    }

    #[test]
    fn second_order_limit_damping() {
        let r = fit_damping(5.0, 1e5, [0.0499, 0.0501]).unwrap();
        let expect = {
            let l = (0.05f64).ln();
            -l / (std::f64::consts::PI.powi(2) + l * l).sqrt()
        };
        assert!((r.zeta_ref - expect).abs() < 2e-3, "{} vs {expect}", r.zeta_ref);
    }

    #[test]
    fn feedback_meets_disk_constraint_at_17ms() {
        let cfg = SynthesisConfig::default();
        let plant = cfg.nominal_plant(0.017).unwrap();
        let t0 = std::time::Instant::now();
        let fb = tune_feedback(&plant, &cfg.weights, cfg.budget, cfg.n_starts, 7, None).unwrap();
        eprintln!("{:?} omega_s {} disk {} evals {} in {:?}", fb.controller, fb.omega_s, fb.disk_constraint, fb.evals, t0.elapsed());
        assert!(fb.disk_constraint <= 1.0 + 1e-6);
        assert!(fb.omega_s > 0.0);
    }
}


#[cfg(test)]
mod regression {
    use super::*;

    // Near-tangent level set that an earlier axis tolerance missed.
    #[test]
    fn disk_peak_not_missed() {
        let tau = 0.02931034482758621;
        let cfg = SynthesisConfig::default();
        let plant = cfg.nominal_plant(tau).unwrap();
        let c = ControllerParams::feedback_only(151.96890222589667, 20.403927879543502);
        let (_, s) = feedback_sensitivities(&plant, &c).unwrap();
        let s = s.add_feedthrough(&nalgebra::DMatrix::from_element(1, 1, -0.5)).unwrap();
        let grid = logspace::<f64>(-2.0, 5.0, 20000)
            .into_iter()
            .map(|w| s.eval_siso(w).unwrap().norm())
            .fold(0.0, f64::max);
        let peak = hinf_peak(&s, 1e-4).unwrap().norm;
        assert!(peak >= grid * (1.0 - 1e-4), "{peak} vs grid {grid}");
    }
}

