mod common;

use indi_hinf::linsys::discretize_zoh;
use indi_hinf::plant::UncertaintyConfig;
use indi_hinf::sim::{monte_carlo, run_doublet, CampaignConfig, Doublet, SimConfig};
use indi_hinf::synthesis::SynthesisConfig;
use indi_hinf::uncertainty::DeltaSample;
use indi_hinf::StateSpace64;

use common::small_schedule;

#[test]
fn hover_equilibrium_is_exact() {
    let cfg = SimConfig { t_end: 10.0, doublet: Doublet { amplitude_deg: 0.0, ..Doublet::default() }, ..SimConfig::default() };
    let r = run_doublet(&cfg, small_schedule()).unwrap();
    assert!(r.stable);
    assert_eq!(r.time.len(), (10.0 / cfg.dt).round() as usize + 1);
    for k in 0..r.time.len() {
        assert!(r.eta[k].iter().chain(&r.omega[k]).chain(&r.omega_dot[k]).all(|v| *v == 0.0));
        assert!(r.m_c[k].iter().all(|v| *v == cfg.trim));
    }
}

#[test]
fn histories_have_equal_length_and_metrics_recompute() {
    let r = run_doublet(&SimConfig::default(), small_schedule()).unwrap();
    let n = r.time.len();
    assert!([r.eta.len(), r.omega.len(), r.omega_dot.len(), r.m_c.len(), r.reference.len()].iter().all(|l| *l == n));
    let m = indi_hinf::sim::compute_metrics(&r.eta, &r.reference, &r.m_c);
    assert_eq!(m, r.metrics);
}

#[test]
fn nominal_overshoot_matches_linear_prediction() {
    let s = small_schedule();
    for p in &s.points {
        let r = run_doublet(&SimConfig { tau: p.tau, ..SimConfig::default() }, s).unwrap();
        assert!(r.stable);
        let os = r.metrics.overshoot;
        assert!((0.045..=0.055).contains(&os), "tau {} overshoot {os}", p.tau);
        assert!((os - p.certified.overshoot).abs() < 0.005, "tau {} {os} vs linear {}", p.tau, p.certified.overshoot);
    }
}

#[test]
fn halving_dt_barely_moves_overshoot() {
    let s = small_schedule();
    let coarse = run_doublet(&SimConfig::default(), s).unwrap();
    let fine = run_doublet(&SimConfig { dt: SimConfig::default().dt / 2.0, ..SimConfig::default() }, s).unwrap();
    let d = (coarse.metrics.overshoot - fine.metrics.overshoot).abs();
    assert!(d < 0.001, "{} vs {}", coarse.metrics.overshoot, fine.metrics.overshoot);
}

#[test]
fn small_doublet_matches_linear_loop() {
    let s = small_schedule();
    let tau = 0.017;
    let cfg = SimConfig { tau, doublet: Doublet { amplitude_deg: 5.0, ..Doublet::default() }, ..SimConfig::default() };
    let r = run_doublet(&cfg, s).unwrap();
    let plant = SynthesisConfig::default().nominal_plant(tau).unwrap();
    let ctrl = s.interpolate(tau).unwrap().controller;
    let g: StateSpace64 = plant.close(&ctrl).unwrap().channel(&["r_eta"], &["eta"]).unwrap();
    // the reference is piecewise constant on the control grid, so ZOH is exact
    let (ad, bd) = discretize_zoh(&g, cfg.dt);
    let mut x = nalgebra::DVector::zeros(g.nstates());
    let amp = 5f64.to_radians();
    let mut worst: f64 = 0.0;
    for k in 0..r.time.len() {
        let u = r.reference[k];
        let y = (g.c() * &x)[0] + g.d()[(0, 0)] * u;
        worst = worst.max((y - r.eta[k][0]).abs());
        x = &ad * &x + &bd * u;
    }
    assert!(worst < 0.01 * amp, "max deviation {:.4} deg", worst.to_degrees());
}

#[test]
fn asymmetric_effectiveness_couples_axes() {
    let d = DeltaSample::new(vec![1.0, 0.0, -1.0, 0.5, 0.0, 0.0, 0.0, 0.0], vec![StateSpace64::gain(0.0); 4]).unwrap();
    let r = run_doublet(&SimConfig { delta: Some(d), ..SimConfig::default() }, small_schedule()).unwrap();
    assert!(r.stable);
    assert!(r.metrics.coupling_deg > 1e-3, "{}", r.metrics.coupling_deg);
    let sym = run_doublet(&SimConfig::default(), small_schedule()).unwrap();
    assert_eq!(sym.metrics.coupling_deg, 0.0);
}

#[test]
fn noise_is_seeded() {
    let cfg = SimConfig { noise_on: true, noise_seed: 9, ..SimConfig::default() };
    let a = run_doublet(&cfg, small_schedule()).unwrap();
    let b = run_doublet(&cfg, small_schedule()).unwrap();
    assert_eq!(a, b);
    let c = run_doublet(&SimConfig { noise_seed: 10, ..cfg }, small_schedule()).unwrap();
    assert_ne!(a.eta, c.eta);
}

fn small_campaign() -> CampaignConfig {
    CampaignConfig { n_random: 24, n_groups: 2, structured: false, worst: false, ..CampaignConfig::default() }
}

#[test]
fn campaign_is_deterministic() {
    let s = small_schedule();
    let syn = SynthesisConfig::default();
    let a = monte_carlo(s, &syn, &SimConfig::default(), &small_campaign()).unwrap();
    let b = monte_carlo(s, &syn, &SimConfig::default(), &small_campaign()).unwrap();
    assert_eq!(a.records_csv(), b.records_csv());
    assert_eq!(a.envelope_csv(), b.envelope_csv());
    assert_eq!(a.n_runs(), 24 + 2);
}

#[test]
fn zero_radii_collapse_envelope() {
    let s = small_schedule();
    let base = SimConfig { uncertainty: UncertaintyConfig { r_c: 0.0, r_tau: 0.0, r0: 0.0, r_inf: 1e-12 }, ..SimConfig::default() };
    let cfg = CampaignConfig { structured: true, ..small_campaign() };
    let c = monte_carlo(s, &SynthesisConfig::default(), &base, &cfg).unwrap();
    assert_eq!(c.n_stable(), c.n_runs());
    for e in &c.envelopes {
        assert_eq!(e.taus.len(), 1);
        for k in 0..e.time.len() {
            assert!((e.roll_max[k] - e.roll_nominal[k]).abs() < 1e-9);
            assert!((e.roll_min[k] - e.roll_nominal[k]).abs() < 1e-9);
        }
    }
}
