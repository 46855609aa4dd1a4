#![allow(dead_code)]

use std::sync::OnceLock;

use indi_hinf::synthesis::{design_point, GainSchedule, SynthesisConfig, WarmStart};

/// Two-point schedule at 17 and 30 ms, built once per test binary.
pub fn small_schedule() -> &'static GainSchedule {
    static S: OnceLock<GainSchedule> = OnceLock::new();
    S.get_or_init(|| {
        let cfg = SynthesisConfig::default();
        let mut warm = WarmStart::default();
        let pts = [0.017, 0.030].iter().map(|&t| design_point(&cfg, t, 1, &mut warm).unwrap()).collect();
        GainSchedule::new(pts).unwrap()
    })
}

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;

use indi_hinf::StateSpace64;

/// Random system assembled from first- and second-order modal blocks, with
/// an independent frequency evaluation that never touches the state-space
/// machinery. At most two inputs and two outputs.
#[derive(Debug, Clone)]
pub struct ModalSystem {
    pub ny: usize,
    pub nu: usize,
    /// `(sigma, omega, b rows, c columns)`; `omega == 0` marks a real pole.
    pub blocks: Vec<(f64, f64, Vec<[f64; 2]>, Vec<[f64; 2]>)>,
    pub d: [[f64; 2]; 2],
}

pub fn log_uniform<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    10f64.powf(rng.random_range(lo.log10()..hi.log10()))
}

fn gauss<R: Rng>(rng: &mut R) -> f64 {
    // Box-Muller; enough for test data
    let u: f64 = rng.random_range(1e-12..1.0);
    let v: f64 = rng.random_range(0.0..1.0);
    (-2.0 * u.ln()).sqrt() * (std::f64::consts::TAU * v).cos()
}

impl ModalSystem {
    /// Order in `1..=max_order`, pole magnitudes log-uniform in
    /// `[mag_lo, mag_hi]`, complex damping in `[0.02, 1)`. With
    /// `allow_unstable` each block's real part flips sign with probability 1/4.
    pub fn random<R: Rng>(rng: &mut R, max_order: usize, mag_lo: f64, mag_hi: f64, allow_unstable: bool) -> Self {
        let ny = rng.random_range(1..=2);
        let nu = rng.random_range(1..=2);
        let order = rng.random_range(1..=max_order);
        let mut blocks = Vec::new();
        let mut n = 0;
        while n < order {
            let mag = log_uniform(rng, mag_lo, mag_hi);
            let complex = order - n >= 2 && rng.random_bool(0.6);
            let (mut sigma, omega, dim) = if complex {
                let zeta: f64 = rng.random_range(0.02..1.0);
                (-zeta * mag, mag * (1.0 - zeta * zeta).sqrt(), 2)
            } else {
                (-mag, 0.0, 1)
            };
            if allow_unstable && rng.random_bool(0.25) {
                sigma = -sigma;
            }
            // residue scale keeps every mode's contribution O(1)
            let scale = mag.sqrt();
            let b = (0..dim).map(|_| [gauss(rng) * scale, gauss(rng) * scale]).collect();
            let c = (0..dim).map(|_| [gauss(rng) * scale, gauss(rng) * scale]).collect();
            blocks.push((sigma, omega, b, c));
            n += dim;
        }
        let mut d = [[0.0; 2]; 2];
        if rng.random_bool(0.5) {
            for row in &mut d {
                for v in row.iter_mut() {
                    *v = gauss(rng) * 0.5;
                }
            }
        }
        Self { ny, nu, blocks, d }
    }

    pub fn order(&self) -> usize {
        self.blocks.iter().map(|b| b.2.len()).sum()
    }

    pub fn is_stable(&self) -> bool {
        self.blocks.iter().all(|b| b.0 < 0.0)
    }

    /// `G(j w)` as a 2x2 array (unused entries zero).
    pub fn eval(&self, w: f64) -> [[Complex64; 2]; 2] {
        let s = Complex64::new(0.0, w);
        let mut g = [[Complex64::new(0.0, 0.0); 2]; 2];
        for i in 0..self.ny {
            for j in 0..self.nu {
                g[i][j] = Complex64::new(self.d[i][j], 0.0);
            }
        }
        for (sigma, omega, b, c) in &self.blocks {
            if *omega == 0.0 {
                let r = 1.0 / (s - sigma);
                for i in 0..self.ny {
                    for j in 0..self.nu {
                        g[i][j] += c[0][i] * b[0][j] * r;
                    }
                }
            } else {
                // (sI - [[sg, om], [-om, sg]])^-1 = [[s-sg, om], [-om, s-sg]] / ((s-sg)^2 + om^2)
                let p = s - sigma;
                let den = 1.0 / (p * p + omega * omega);
                let m = [[p * den, omega * den], [-omega * den, p * den]];
                for i in 0..self.ny {
                    for j in 0..self.nu {
                        let mut acc = Complex64::new(0.0, 0.0);
                        for k in 0..2 {
                            for l in 0..2 {
                                acc += c[k][i] * m[k][l] * b[l][j];
                            }
                        }
                        g[i][j] += acc;
                    }
                }
            }
        }
        g
    }

    /// Largest singular value of `G(j w)`, closed form for 2x2.
    pub fn sigma_max(&self, w: f64) -> f64 {
        let g = self.eval(w);
        let a = g[0][0].norm_sqr() + g[1][0].norm_sqr();
        let d = g[0][1].norm_sqr() + g[1][1].norm_sqr();
        let b = g[0][0].conj() * g[0][1] + g[1][0].conj() * g[1][1];
        (0.5 * (a + d) + (0.25 * (a - d) * (a - d) + b.norm_sqr()).sqrt()).sqrt()
    }

    /// Block-diagonal realization hidden behind a random orthogonal change of basis.
    pub fn realize<R: Rng>(&self, rng: &mut R) -> StateSpace64 {
        let n = self.order();
        let mut a = DMatrix::zeros(n, n);
        let mut b = DMatrix::zeros(n, self.nu);
        let mut c = DMatrix::zeros(self.ny, n);
        let mut k = 0;
        for (sigma, omega, bb, cc) in &self.blocks {
            let dim = bb.len();
            a[(k, k)] = *sigma;
            if dim == 2 {
                a[(k + 1, k + 1)] = *sigma;
                a[(k, k + 1)] = *omega;
                a[(k + 1, k)] = -omega;
            }
            for r in 0..dim {
                for j in 0..self.nu {
                    b[(k + r, j)] = bb[r][j];
                }
                for i in 0..self.ny {
                    c[(i, k + r)] = cc[r][i];
                }
            }
            k += dim;
        }
        let q = DMatrix::from_fn(n, n, |_, _| gauss(rng)).qr().q();
        let d = DMatrix::from_fn(self.ny, self.nu, |i, j| self.d[i][j]);
        StateSpace64::new(q.transpose() * a * &q, q.transpose() * b, c * q, d).unwrap()
    }
}

/// Dense log grid maximum of `sigma_max`, evaluated without allocation.
pub fn grid_peak(sys: &ModalSystem, lo_exp: f64, hi_exp: f64, n: usize) -> f64 {
    let step = (hi_exp - lo_exp) / (n - 1) as f64;
    (0..n).map(|k| sys.sigma_max(10f64.powf(lo_exp + step * k as f64))).fold(0.0, f64::max)
}

/// Direct perturbed effectiveness row: `e_i (1 + r_c delta_i)`.
pub fn direct_effectiveness(cp: f64, r_c: f64, delta: &[f64]) -> Vec<f64> {
    let e = [-cp, -cp, cp, cp];
    (0..4).map(|i| e[i] * (1.0 + r_c * delta[i])).collect()
}

/// Direct perturbed actuator `(1 + Delta(s) w_m(s)) / (tau (1 + r_tau delta) s + 1)`
/// with `Delta(s) = g (s - a)/(s + a)` and
/// `w_m(s) = (tau_w s + r0)/((tau_w / r_inf) s + 1)`, `tau_w = tau / 5`.
#[allow(clippy::too_many_arguments)]
pub fn direct_actuator(w: f64, tau: f64, r_tau: f64, delta: f64, g: f64, a: f64, r0: f64, r_inf: f64) -> Complex64 {
    let s = Complex64::new(0.0, w);
    let tau_w = tau / 5.0;
    let wm = (tau_w * s + r0) / (tau_w / r_inf * s + 1.0);
    let dyn_delta = g * (s - a) / (s + a);
    (1.0 + dyn_delta * wm) / (tau * (1.0 + r_tau * delta) * s + 1.0)
}
