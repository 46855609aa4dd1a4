//! Disk margins, classical gain/phase margins, and sampled worst-case margins
//! at the loop-break points of the design plant.

use num_complex::Complex;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use nalgebra::DMatrix;

use crate::linsys::{hinf_norm, hinf_peak, max_singular_value, StateSpace, CERTIFY_REL_TOL};
use crate::optimize::{nelder_mead, NmOptions};
use crate::plant::{BreakPoint, ClosedLoop, ControllerParams, DesignPlant};
use crate::scalar::{cabs, carg, Scalar};
use crate::uncertainty::{random_allpass, worst_vertex, DeltaSample, GRID5, MAX_VERTEX_SEARCH};

/// Disk-based margins at one break point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiskMarginResult<T> {
    pub alpha_max: T,
    pub sigma: T,
    /// Absolute gain factors `[gamma_min, gamma_max]`; `gamma_max` may be infinite.
    pub gm_range: [T; 2],
    /// Degrees.
    pub pm_range: [T; 2],
    /// Frequency of the sensitivity peak, rad/s.
    pub peak_frequency: T,
}

impl<T: Scalar> DiskMarginResult<T> {
    /// Disk gain margin in dB, `20 log10 gamma_max` (equals `-20 log10 gamma_min` when `sigma = 0`).
    pub fn gm_db(&self) -> T {
        T::lit(20.0) * self.gm_range[1].log10()
    }

    pub fn pm_deg(&self) -> T {
        self.pm_range[1]
    }
}

/// Gain and phase ranges guaranteed by a disk of size `alpha` and eccentricity `sigma`.
pub fn disk_ranges<T: Scalar>(alpha: T, sigma: T) -> ([T; 2], [T; 2]) {
    let two = T::lit(2.0);
    let one = T::one();
    let gmin = (two - alpha * (one - sigma)) / (two + alpha * (one + sigma));
    let den = two - alpha * (one + sigma);
    let gmax = if den <= T::zero() { T::lit(f64::INFINITY) } else { (two + alpha * (one - sigma)) / den };
    let ratio = if gmax.is_finite() {
        (one + gmin * gmax) / (gmin + gmax)
    } else {
        // limit of (1 + gmin gmax)/(gmin + gmax) as gmax grows
        gmin
    };
    let pm = ratio.max(-one).min(one).acos() * T::lit(180.0) / T::pi();
    ([gmin, gmax], [-pm, pm])
}

/// Recovers the disk size from a symmetric gain margin `gamma_max` (`sigma = 0`).
pub fn alpha_from_gain<T: Scalar>(gamma_max: T) -> T {
    let two = T::lit(2.0);
    two * (gamma_max - T::one()) / (gamma_max + T::one())
}

/// Disk margin from the sensitivity at a break point:
/// `alpha_max = 1 / || S + (sigma - 1)/2 ||_inf`.
pub fn disk_margin<T: Scalar>(s: &StateSpace<T>, sigma: T, rel_tol: T) -> Result<DiskMarginResult<T>> {
    if s.ninputs() != s.noutputs() {
        return Err(Error::Dimension("sensitivity must be square".into()));
    }
    let shift = nalgebra::DMatrix::<T>::identity(s.noutputs(), s.noutputs()) * ((sigma - T::one()) / T::lit(2.0));
    let shifted = s.add_feedthrough(&shift)?;
    let peak = hinf_peak(&shifted, rel_tol)?;
    let alpha = if peak.norm > T::zero() { T::one() / peak.norm } else { T::lit(f64::INFINITY) };
    Ok(disk_result(alpha, sigma, peak.frequency))
}

fn disk_result<T: Scalar>(alpha: T, sigma: T, peak_frequency: T) -> DiskMarginResult<T> {
    let (gm_range, pm_range) = disk_ranges(alpha, sigma);
    DiskMarginResult { alpha_max: alpha, sigma, gm_range, pm_range, peak_frequency }
}

/// Classical single-loop margins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassicalMargins<T> {
    /// Smallest distance in dB to instability by gain change, either
    /// direction; `None` when there is no phase crossover.
    pub gm_db: Option<T>,
    /// Smallest upward gain margin, dB (`None` = infinite).
    pub gm_upper_db: Option<T>,
    /// Downward gain margin closest to 0 dB, negative (`None` = unbounded).
    pub gm_lower_db: Option<T>,
    /// Phase margin with the smallest magnitude, degrees in (-180, 180];
    /// `None` when the loop gain never crosses unity.
    pub pm_deg: Option<T>,
    pub gain_crossovers: Vec<T>,
    pub phase_crossovers: Vec<T>,
}

impl<T: Scalar> ClassicalMargins<T> {
    /// Gain margin as a number, infinite when undefined.
    pub fn gm_or_inf(&self) -> T {
        self.gm_db.unwrap_or(T::lit(f64::INFINITY))
    }

    /// Phase margin as a number, 180 when undefined.
    pub fn pm_or_max(&self) -> T {
        self.pm_deg.unwrap_or(T::lit(180.0))
    }

    fn unstable() -> Self {
        Self {
            gm_db: Some(T::zero()),
            gm_upper_db: Some(T::zero()),
            gm_lower_db: Some(T::zero()),
            pm_deg: Some(T::zero()),
            gain_crossovers: Vec::new(),
            phase_crossovers: Vec::new(),
        }
    }
}

fn bisect<T: Scalar, F: Fn(T) -> T>(f: &F, mut lo: T, mut hi: T) -> T {
    let mut flo = f(lo);
    for _ in 0..80 {
        let mid = (lo * hi).sqrt();
        let fm = f(mid);
        if fm == T::zero() {
            return mid;
        }
        if (fm > T::zero()) == (flo > T::zero()) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
        if hi / lo - T::one() < T::eps() * T::lit(8.0) {
            break;
        }
    }
    (lo * hi).sqrt()
}

/// Points per decade of the crossover search grid.
const CROSSOVER_DENSITY: f64 = 60.0;

/// Classical margins of a scalar loop evaluated pointwise.
///
/// Crossovers are bracketed on a log grid over `[w_lo, w_hi]` and refined by
/// bisection: gain crossovers where `|L| = 1`, phase crossovers where
/// `Im L = 0` with `Re L < 0`.
pub fn classical_margins_fn<T: Scalar, F>(l: F, w_lo: T, w_hi: T) -> ClassicalMargins<T>
where
    F: Fn(T) -> Option<Complex<T>>,
{
    let lo = w_lo.as_f64().log10();
    let hi = w_hi.as_f64().log10();
    let n = ((hi - lo) * CROSSOVER_DENSITY).ceil().max(2.0) as usize;
    let grid: Vec<T> = (0..=n).map(|i| T::lit(10f64.powf(lo + (hi - lo) * i as f64 / n as f64))).collect();
    let vals: Vec<Option<Complex<T>>> = grid.iter().map(|&w| l(w)).collect();
    let mag_m1 = |w: T| l(w).map(|z| cabs(z) - T::one()).unwrap_or(T::zero());
    let imag = |w: T| l(w).map(|z| z.im).unwrap_or(T::zero());

    let mut gain_x = Vec::new();
    let mut phase_x = Vec::new();
    for k in 0..n {
        let (Some(z0), Some(z1)) = (vals[k], vals[k + 1]) else { continue };
        let (g0, g1) = (cabs(z0) - T::one(), cabs(z1) - T::one());
        if g0 == T::zero() {
            gain_x.push(grid[k]);
        } else if (g0 > T::zero()) != (g1 > T::zero()) && g1 != T::zero() {
            gain_x.push(bisect(&mag_m1, grid[k], grid[k + 1]));
        }
        if z0.im == T::zero() && z0.re < T::zero() {
            phase_x.push(grid[k]);
        } else if (z0.im > T::zero()) != (z1.im > T::zero()) && z1.im != T::zero() {
            let w = bisect(&imag, grid[k], grid[k + 1]);
            if l(w).is_some_and(|z| z.re < T::zero()) {
                phase_x.push(w);
            }
        }
    }

    let mut pm: Option<T> = None;
    for &w in &gain_x {
        if let Some(z) = l(w) {
            let mut p = T::lit(180.0) + carg(z) * T::lit(180.0) / T::pi();
            if p > T::lit(180.0) {
                p -= T::lit(360.0);
            }
            if pm.is_none_or(|q| p.abs() < q.abs()) {
                pm = Some(p);
            }
        }
    }
    let mut upper: Option<T> = None;
    let mut lower: Option<T> = None;
    for &w in &phase_x {
        if let Some(z) = l(w) {
            let g = -T::lit(20.0) * cabs(z).log10();
            if g >= T::zero() {
                if upper.is_none_or(|u| g < u) {
                    upper = Some(g);
                }
            } else if lower.is_none_or(|u| g > u) {
                lower = Some(g);
            }
        }
    }
    let gm = match (upper, lower) {
        (Some(u), Some(l)) => Some(u.min(-l)),
        (Some(u), None) => Some(u),
        (None, Some(l)) => Some(-l),
        (None, None) => None,
    };
    ClassicalMargins {
        gm_db: gm,
        gm_upper_db: upper,
        gm_lower_db: lower,
        pm_deg: pm,
        gain_crossovers: gain_x,
        phase_crossovers: phase_x,
    }
}

/// Search band for a loop: four decades beyond its slowest and fastest
/// nonzero poles and zeros.
fn search_band<T: Scalar>(sys: &StateSpace<T>) -> (T, T) {
    let mut mags: Vec<T> = sys.poles().iter().map(|p| cabs(*p)).filter(|m| *m > T::lit(1e-8)).collect();
    if let Ok(inv) = sys.inverse() {
        mags.extend(inv.poles().iter().map(|p| cabs(*p)).filter(|m| *m > T::lit(1e-8)));
    }
    let lo = mags.iter().cloned().fold(T::one(), |a, b| a.min(b));
    let hi = mags.iter().cloned().fold(T::one(), |a, b| a.max(b));
    (lo * T::lit(1e-4), hi * T::lit(1e4))
}

/// Classical margins of a proper scalar loop transfer.
pub fn classical_margins<T: Scalar>(l: &StateSpace<T>) -> Result<ClassicalMargins<T>> {
    if !l.is_siso() {
        return Err(Error::Dimension("classical margins need a scalar loop".into()));
    }
    let (lo, hi) = search_band(l);
    Ok(classical_margins_fn(|w| l.eval_siso(w).ok(), lo, hi))
}

/// Classical margins from the sensitivity `S = 1/(1 + L)` of a scalar loop.
pub fn classical_margins_from_sensitivity<T: Scalar>(s: &StateSpace<T>) -> Result<ClassicalMargins<T>> {
    if !s.is_siso() {
        return Err(Error::Dimension("classical margins need a scalar sensitivity".into()));
    }
    let (lo, hi) = search_band(s);
    Ok(classical_margins_fn(
        |w| s.eval_siso(w).ok().filter(|z| cabs(*z) > T::zero()).map(|z| Complex::new(T::one(), T::zero()) / z - T::one()),
        lo,
        hi,
    ))
}

/// Loop transfer with the loop broken at one channel of `point`, all other
/// loops closed: `L = 1/S_ii - 1`.
pub fn break_loop(plant: &DesignPlant, ctrl: &ControllerParams, point: BreakPoint, channel: usize) -> Result<StateSpace<f64>> {
    let cl = plant.close(ctrl)?;
    cl.check_stable()?;
    let s = channel_sensitivity(&cl, point, channel)?;
    let inv = s.inverse()?;
    inv.add_feedthrough(&nalgebra::DMatrix::from_element(1, 1, -1.0))
}

fn channel_sensitivity(cl: &ClosedLoop, point: BreakPoint, channel: usize) -> Result<StateSpace<f64>> {
    let (i, o) = point.channels();
    if channel >= i.len() {
        return Err(Error::InvalidParameter(format!("{point} has {} channels", i.len())));
    }
    cl.channel(&[i[channel].as_str()], &[o[channel].as_str()])
}

/// Margins at one break point, worst over its channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointMargins {
    pub point: BreakPoint,
    pub disk: DiskMarginResult<f64>,
    pub classical: ClassicalMargins<f64>,
}

/// Loop-at-a-time disk and classical margins at `point`; for `m_c` the
/// smallest over the four motor channels.
pub fn point_margins(cl: &ClosedLoop, point: BreakPoint, sigma: f64, rel_tol: f64) -> Result<PointMargins> {
    let nch = point.channels().0.len();
    let mut best: Option<PointMargins> = None;
    for ch in 0..nch {
        let s = channel_sensitivity(cl, point, ch)?;
        let disk = disk_margin(&s, sigma, rel_tol)?;
        let classical = classical_margins_from_sensitivity(&s)?;
        let cand = PointMargins { point, disk, classical };
        best = Some(match best {
            None => cand,
            Some(b) => worse(b, cand),
        });
    }
    best.ok_or_else(|| Error::Dimension("break point without channels".into()))
}

fn worse(a: PointMargins, b: PointMargins) -> PointMargins {
    PointMargins {
        point: a.point,
        disk: if b.disk.alpha_max < a.disk.alpha_max { b.disk } else { a.disk },
        classical: min_classical(&a.classical, &b.classical),
    }
}

fn min_opt(a: Option<f64>, b: Option<f64>, inf_default: f64) -> Option<f64> {
    match (a, b) {
        (None, None) => None,
        _ => {
            let x = a.unwrap_or(inf_default);
            let y = b.unwrap_or(inf_default);
            Some(if x.abs() <= y.abs() { x } else { y })
        }
    }
}

/// Element-wise worst of two classical margin sets.
pub fn min_classical(a: &ClassicalMargins<f64>, b: &ClassicalMargins<f64>) -> ClassicalMargins<f64> {
    ClassicalMargins {
        gm_db: min_opt(a.gm_db, b.gm_db, f64::INFINITY),
        gm_upper_db: min_opt(a.gm_upper_db, b.gm_upper_db, f64::INFINITY),
        gm_lower_db: min_opt(a.gm_lower_db, b.gm_lower_db, f64::NEG_INFINITY),
        pm_deg: min_opt(a.pm_deg, b.pm_deg, 180.0),
        gain_crossovers: a.gain_crossovers.iter().chain(&b.gain_crossovers).copied().collect(),
        phase_crossovers: a.phase_crossovers.iter().chain(&b.phase_crossovers).copied().collect(),
    }
}

/// `min_D sigma_max(D M D^-1)` over positive diagonal `D`: the upper bound of
/// the structured singular value for independent complex scalar
/// perturbations on each channel.
pub fn mu_upper_diagonal(m: &DMatrix<Complex<f64>>) -> f64 {
    let n = m.nrows();
    let sv = |logd: &[f64]| -> f64 {
        let d: Vec<f64> = std::iter::once(0.0).chain(logd.iter().copied()).map(f64::exp).collect();
        let scaled = DMatrix::from_fn(n, n, |i, j| m[(i, j)] * (d[i] / d[j]));
        max_singular_value(&scaled)
    };
    if n <= 1 {
        return max_singular_value(m);
    }
    // Osborne-style start: balance row and column norms of |M|
    let abs = m.map(|z| z.norm());
    let mut logd = vec![0.0f64; n];
    for _ in 0..50 {
        for i in 0..n {
            let (mut r, mut c) = (0.0, 0.0);
            for j in 0..n {
                if j != i {
                    r += abs[(i, j)] * (logd[i] - logd[j]).exp();
                    c += abs[(j, i)] * (logd[j] - logd[i]).exp();
                }
            }
            if r > 0.0 && c > 0.0 {
                logd[i] += 0.5 * (c / r).ln();
            }
        }
    }
    let x0: Vec<f64> = logd[1..].iter().map(|v| (v - logd[0]).clamp(-40.0, 40.0)).collect();
    let unscaled = sv(&vec![0.0; n - 1]);
    let res = nelder_mead(sv, &x0, NmOptions { max_evals: 60 * n, initial_step: 0.5, x_tol: 1e-6, f_tol: 1e-12 });
    res.f.min(unscaled)
}

/// Multi-loop disk margin with independent disks on every channel of the
/// given break points: `alpha_max = 1 / sup_w mu(S(jw) + (sigma - 1)/2 I)`,
/// with `mu` replaced by its diagonal-scaling upper bound, so the returned
/// disk is guaranteed. The supremum is taken on a frequency grid refined
/// around its peak to relative accuracy `rel_tol` in frequency.
pub fn multiloop_disk_margin(cl: &ClosedLoop, points: &[BreakPoint], sigma: f64, rel_tol: f64) -> Result<DiskMarginResult<f64>> {
    let mut ins = Vec::new();
    let mut outs = Vec::new();
    for p in points {
        let (i, o) = p.channels();
        ins.extend(i);
        outs.extend(o);
    }
    let s = cl.channel(&ins, &outs)?;
    if !s.is_stable() {
        return Err(Error::Unstable("multi-loop sensitivity".into()));
    }
    let n = s.noutputs();
    let shift = (sigma - 1.0) / 2.0;
    let mu_at = |w: f64| -> f64 {
        match s.eval_jw(w) {
            Ok(mut m) => {
                for i in 0..n {
                    m[(i, i)] += Complex::new(shift, 0.0);
                }
                mu_upper_diagonal(&m)
            }
            Err(_) => f64::INFINITY,
        }
    };
    let mags: Vec<f64> = s.poles().iter().map(|p| p.norm()).filter(|m| *m > 0.0).collect();
    let lo = mags.iter().copied().fold(1.0, f64::min) * 1e-2;
    let hi = mags.iter().copied().fold(1.0, f64::max) * 1e2;
    let grid = crate::linsys::logspace::<f64>(lo.log10(), hi.log10(), ((hi / lo).log10() * 30.0).ceil() as usize + 1);
    let vals: Vec<f64> = grid.iter().map(|&w| mu_at(w)).collect();
    let k = (0..vals.len()).max_by(|&i, &j| vals[i].total_cmp(&vals[j])).expect("nonempty grid");
    let (mut peak, mut w_peak): (f64, f64) = (vals[k], grid[k]);
    let d_peak = mu_at(1e12);
    if d_peak > peak {
        peak = d_peak;
        w_peak = f64::INFINITY;
    } else {
        // golden-section maximization in log frequency between the neighbours
        let (mut a, mut b): (f64, f64) = (grid[k.saturating_sub(1)].ln(), grid[(k + 1).min(grid.len() - 1)].ln());
        let r = (5f64.sqrt() - 1.0) / 2.0;
        let (mut c, mut d) = (b - r * (b - a), a + r * (b - a));
        let (mut fc, mut fd) = (mu_at(c.exp()), mu_at(d.exp()));
        while b - a > rel_tol.max(1e-12) {
            if fc > fd {
                b = d;
                d = c;
                fd = fc;
                c = b - r * (b - a);
                fc = mu_at(c.exp());
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + r * (b - a);
                fd = mu_at(d.exp());
            }
        }
        for (f, x) in [(fc, c), (fd, d)] {
            if f > peak {
                peak = f;
                w_peak = x.exp();
            }
        }
    }
    let alpha = if peak > 0.0 { 1.0 / peak } else { f64::INFINITY };
    Ok(disk_result(alpha, sigma, w_peak))
}

/// Worst margins found over sampled uncertainty realizations.
#[derive(Debug, Clone, PartialEq)]
pub struct WorstCase {
    pub point: BreakPoint,
    pub disk: DiskMarginResult<f64>,
    pub classical: ClassicalMargins<f64>,
    /// Realization attaining the smallest disk margin.
    pub disk_sample: DeltaSample<f64>,
    /// Realization attaining the smallest classical phase margin.
    pub classical_sample: DeltaSample<f64>,
    pub n_evaluated: usize,
    pub n_unstable: usize,
}

/// Margins of one perturbed loop; an unstable closure counts as zero margin.
fn sample_margins(cl: &ClosedLoop, sample: &DeltaSample<f64>, point: BreakPoint, sigma: f64) -> Option<PointMargins> {
    let pert = cl.perturbed(sample).ok()?;
    if pert.check_stable().is_err() {
        return None;
    }
    point_margins(&pert, point, sigma, crate::linsys::HINF_REL_TOL).ok()
}

fn zero_margins(point: BreakPoint, sigma: f64) -> PointMargins {
    PointMargins { point, disk: disk_result(0.0, sigma, 0.0), classical: ClassicalMargins::unstable() }
}

/// Deterministic list of realizations: a sign-vertex search with zero
/// dynamics, then alternating grid-5 and uniform draws with random all-pass
/// dynamic blocks.
pub fn candidate_samples(n_real: usize, n_dynamic: usize, n_samples: usize, seed: u64) -> Vec<DeltaSample<f64>> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..n_samples)
        .map(|k| {
            let real = (0..n_real)
                .map(|_| if k % 2 == 0 { GRID5[rng.random_range(0..5)] } else { rng.random_range(-1.0..=1.0) })
                .collect();
            let dynamic = (0..n_dynamic).map(|_| random_allpass(&mut rng)).collect();
            DeltaSample { real_scalars: real, dynamic_blocks: dynamic }
        })
        .collect()
}

/// Sampled worst case at `point`: exhaustive sign vertices of the real
/// parameters (dynamic blocks zero), plus `n_samples` random realizations.
/// The result bounds the true worst case from above.
pub fn worst_case_sampled(
    plant: &DesignPlant,
    ctrl: &ControllerParams,
    point: BreakPoint,
    n_samples: usize,
    seed: u64,
    sigma: f64,
) -> Result<WorstCase> {
    if n_samples == 0 {
        return Err(Error::InvalidParameter("worst-case search needs at least one sample".into()));
    }
    if plant.structure().is_empty() {
        return Err(Error::InvalidParameter("plant has no uncertainty channels".into()));
    }
    let cl = plant.close(ctrl)?;
    cl.check_stable()?;
    let n_real = cl.structure().iter().filter(|b| b.kind == crate::uncertainty::DeltaKind::RealScalar).count();
    let n_dyn = cl.structure().len() - n_real;
    let base = DeltaSample { real_scalars: vec![0.0; n_real], dynamic_blocks: vec![StateSpace::gain(0.0); n_dyn] };

    let mut samples = Vec::new();
    if n_real <= MAX_VERTEX_SEARCH {
        let objective = |s: &DeltaSample<f64>| {
            sample_margins(&cl, s, point, sigma).map(|m| -m.disk.alpha_max).unwrap_or(f64::INFINITY)
        };
        samples.push(worst_vertex(n_real, &base, &objective)?);
    }
    samples.extend(candidate_samples(n_real, n_dyn, n_samples, seed));

    let results: Vec<(PointMargins, bool)> = samples
        .par_iter()
        .map(|s| match sample_margins(&cl, s, point, sigma) {
            Some(m) => (m, true),
            None => (zero_margins(point, sigma), false),
        })
        .collect();
    let n_unstable = results.iter().filter(|(_, ok)| !ok).count();
    let mut disk_k = 0;
    let mut pm_k = 0;
    let mut classical = results[0].0.classical.clone();
    for (k, (m, _)) in results.iter().enumerate() {
        if m.disk.alpha_max < results[disk_k].0.disk.alpha_max {
            disk_k = k;
        }
        if m.classical.pm_or_max().abs() < results[pm_k].0.classical.pm_or_max().abs() {
            pm_k = k;
        }
        classical = min_classical(&classical, &m.classical);
    }
    Ok(WorstCase {
        point,
        disk: results[disk_k].0.disk,
        classical,
        disk_sample: samples[disk_k].clone(),
        classical_sample: samples[pm_k].clone(),
        n_evaluated: samples.len(),
        n_unstable,
    })
}

/// Realization maximizing `|| S ||_inf` at `point`, searched like
/// [`worst_case_sampled`]. Unstable closures rank highest.
pub fn worst_sensitivity_sample(
    plant: &DesignPlant,
    ctrl: &ControllerParams,
    point: BreakPoint,
    n_samples: usize,
    seed: u64,
) -> Result<(DeltaSample<f64>, f64)> {
    if plant.structure().is_empty() {
        return Err(Error::InvalidParameter("plant has no uncertainty channels".into()));
    }
    let cl = plant.close(ctrl)?;
    cl.check_stable()?;
    let n_real = cl.structure().iter().filter(|b| b.kind == crate::uncertainty::DeltaKind::RealScalar).count();
    let n_dyn = cl.structure().len() - n_real;
    let norm = |s: &DeltaSample<f64>| -> f64 {
        let run = || -> Result<f64> {
            let p = cl.perturbed(s)?;
            p.check_stable()?;
            hinf_norm(&p.sensitivity(point)?.minimal(), crate::linsys::HINF_REL_TOL)
        };
        run().unwrap_or(f64::INFINITY)
    };
    let base = DeltaSample { real_scalars: vec![0.0; n_real], dynamic_blocks: vec![StateSpace::gain(0.0); n_dyn] };
    let mut samples = Vec::new();
    if n_real <= MAX_VERTEX_SEARCH {
        samples.push(worst_vertex(n_real, &base, &norm)?);
    }
    samples.extend(candidate_samples(n_real, n_dyn, n_samples, seed));
    let norms: Vec<f64> = samples.par_iter().map(norm).collect();
    let k = (0..norms.len()).fold(0, |b, k| if norms[k] > norms[b] { k } else { b });
    Ok((samples.swap_remove(k), norms[k]))
}

/// Nominal margins at all four break points at certification accuracy.
pub fn nominal_margins(cl: &ClosedLoop, sigma: f64) -> Result<Vec<PointMargins>> {
    BreakPoint::ALL.iter().map(|&p| point_margins(cl, p, sigma, CERTIFY_REL_TOL)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn disk_size_to_margins() {
        let (g, p) = disk_ranges(0.764f64, 0.0);
        assert!((20.0 * g[1].log10() - 6.99).abs() < 0.01);
        assert!((20.0 * g[0].log10() + 6.99).abs() < 0.01);
        // symmetric disk: PM = 2 atan(alpha / 2)
        assert!((p[1] - 2.0 * 0.382f64.atan().to_degrees()).abs() < 1e-12);
        assert!((g[0] * g[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn degenerate_disks() {
        let (g, p) = disk_ranges(0.0f64, 0.0);
        assert_eq!(g, [1.0, 1.0]);
        assert_eq!(p[1], 0.0);
        let (g, p) = disk_ranges(2.0f64, 0.0);
        assert_eq!(g[0], 0.0);
        assert!(g[1].is_infinite());
        assert!((p[1] - 90.0).abs() < 1e-12);
    }

    #[test]
    fn integrator_loop_has_disk_size_two() {
        // L = 1/s, S = s/(s+1)
        let s = StateSpace::<f64>::from_tf(&[1.0, 0.0], &[1.0, 1.0]).unwrap();
        let d = disk_margin(&s, 0.0, 1e-8).unwrap();
        assert!((d.alpha_max - 2.0).abs() < 1e-6);
        assert!(d.gm_range[1] > 1e5);
        assert!((d.pm_deg() - 90.0).abs() < 0.1);
    }

    #[test]
    fn type_one_second_order_phase_margin() {
        let l = StateSpace::<f64>::from_tf(&[1.0], &[1.0, 1.0, 0.0]).unwrap();
        let m = classical_margins(&l).unwrap();
        assert!(m.gm_db.is_none());
        let w = ((5f64.sqrt() - 1.0) / 2.0).sqrt();
        assert!((m.gain_crossovers[0] - w).abs() < 1e-9);
        assert!((m.pm_deg.unwrap() - 51.827).abs() < 1e-3);
    }

    #[test]
    fn static_loop_has_no_crossovers() {
        let m = classical_margins(&StateSpace::<f64>::gain(2.0)).unwrap();
        assert!(m.gm_db.is_none() && m.pm_deg.is_none());
    }

    #[test]
    fn marginal_third_order_loop() {
        let w180 = 0.5f64.sqrt();
        let k = w180 * (w180 * w180 + 1.0).sqrt() * (w180 * w180 + 0.25).sqrt();
        let l = StateSpace::<f64>::from_tf(&[k], &[1.0, 1.5, 0.5, 0.0]).unwrap();
        let m = classical_margins(&l).unwrap();
        assert!(m.gm_db.unwrap().abs() < 1e-6);
        assert!((m.phase_crossovers[0] - w180).abs() < 1e-9);
    }

    #[test]
    fn sensitivity_route_matches_loop_route() {
        let l = StateSpace::<f64>::from_tf(&[4.0], &[1.0, 3.0, 2.0, 0.0]).unwrap();
        let s = l.feedback(&StateSpace::gain(1.0), -1.0).unwrap();
        // feedback gives L/(1+L); S = 1 - T
        let s = s.scaled(-1.0).add_feedthrough(&nalgebra::DMatrix::from_element(1, 1, 1.0)).unwrap();
        let a = classical_margins(&l).unwrap();
        let b = classical_margins_from_sensitivity(&s).unwrap();
        assert!((a.gm_db.unwrap() - b.gm_db.unwrap()).abs() < 1e-6);
        assert!((a.pm_deg.unwrap() - b.pm_deg.unwrap()).abs() < 1e-6);
        // 4/(s(s+1)(s+2)): phase crossover at sqrt 2, |L| = 2/3
        assert!((a.gm_db.unwrap() - 20.0 * 1.5f64.log10()).abs() < 1e-6);
    }

    #[test]
    fn round_trip_alpha() {
        for a in [0.1f64, 0.5, 0.764, 1.5, 1.99] {
            let (g, _) = disk_ranges(a, 0.0);
            assert!((alpha_from_gain(g[1]) - a).abs() < 1e-12);
        }
    }

    #[test]
    fn diagonal_scaling_removes_units() {
        let z = |re: f64| Complex::new(re, 0.0);
        let m = DMatrix::from_row_slice(2, 2, &[z(0.0), z(1e3), z(1e-3), z(0.0)]);
        assert!((mu_upper_diagonal(&m) - 1.0).abs() < 1e-6);
        let d = DMatrix::from_row_slice(2, 2, &[z(0.3), z(0.0), z(0.0), Complex::new(0.0, -0.7)]);
        assert!((mu_upper_diagonal(&d) - 0.7).abs() < 1e-9);
    }
}
