mod common;

use proptest::prelude::*;

use indi_hinf::linsys::CERTIFY_REL_TOL;
use indi_hinf::plant::BreakPoint;
use indi_hinf::synthesis::{certify, design_point, GainSchedule, SynthesisConfig, WarmStart, CERTIFY_SLACK};

use common::small_schedule;

#[test]
fn constraints_hold_on_recheck() {
    assert_eq!(CERTIFY_REL_TOL, 1e-6);
    let cfg = SynthesisConfig::default();
    for p in &small_schedule().points {
        let plant = cfg.nominal_plant(p.tau).unwrap();
        let c = certify(&plant, &p.controller, &p.weights, &p.refmodel).unwrap();
        assert!(c.stable);
        assert!(c.max_constraint() <= 1.0 + CERTIFY_SLACK, "tau {}: {}", p.tau, c.max_constraint());
        assert_eq!(&c, &p.certified);
    }
}

#[test]
fn point_parameters_are_well_formed() {
    for p in &small_schedule().points {
        let c = p.controller;
        assert!([c.k_eta, c.k_omega, c.a_ff, c.b_ff].iter().all(|v| *v > 0.0));
        assert!(c.b_ff >= c.a_ff);
        let w = p.weights;
        assert!(w.a_s < 1.0 && 1.0 < w.m_s && w.alpha_target > 0.0 && w.alpha_target < 2.0);
        let r = p.refmodel;
        assert!(r.zeta_ref > 0.0 && r.zeta_ref < 1.0);
        assert_eq!(r.system().unwrap().dc_gain().unwrap()[(0, 0)], 1.0);
        for m in &p.certified.margins {
            if let Some(pm) = m.pm_deg {
                assert!(m.disk_pm_deg <= pm.abs() + 1e-6, "{:?}", m);
            }
        }
        assert!(p.certified.margin(BreakPoint::OmegaDot).is_some());
    }
}

#[test]
fn same_seed_same_design() {
    let cfg = SynthesisConfig::default();
    let a = design_point(&cfg, 0.017, 1, &mut WarmStart::default()).unwrap();
    let b = design_point(&cfg, 0.017, 1, &mut WarmStart::default()).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}

#[test]
fn json_and_csv_round_trip() {
    let s = small_schedule();
    let json = s.to_json().unwrap();
    assert_eq!(&GainSchedule::from_json(&json).unwrap(), s);
    let csv = s.to_csv().unwrap();
    assert_eq!(&GainSchedule::from_csv(&csv).unwrap(), s);
    assert_eq!(GainSchedule::from_csv(&csv).unwrap().to_csv().unwrap(), csv);
}

#[test]
fn unordered_points_are_rejected() {
    let mut pts = small_schedule().points.clone();
    pts.reverse();
    assert!(GainSchedule::new(pts).is_err());
}

#[test]
fn knots_are_returned_exactly() {
    let s = small_schedule();
    for p in &s.points {
        let i = s.interpolate(p.tau).unwrap();
        assert!(!i.clamped);
        assert_eq!(i.controller, p.controller);
        assert_eq!(i.refmodel, p.refmodel);
    }
    let lo = s.interpolate(0.001).unwrap();
    assert!(lo.clamped);
    assert_eq!(lo.controller, s.points[0].controller);
    let hi = s.interpolate(1.0).unwrap();
    assert!(hi.clamped);
    assert_eq!(hi.controller, s.points[1].controller);
    assert!(s.interpolate(f64::NAN).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn interpolation_is_linear_between_knots(t in 0.0f64..=1.0) {
        let s = small_schedule();
        let (p0, p1) = (&s.points[0], &s.points[1]);
        let tau = p0.tau + t * (p1.tau - p0.tau);
        let i = s.interpolate(tau).unwrap();
        let lin = |a: f64, b: f64| a + t * (b - a);
        let tol = |v: f64| 1e-9 * v.abs().max(1.0);
        prop_assert!((i.controller.k_eta - lin(p0.controller.k_eta, p1.controller.k_eta)).abs() <= tol(i.controller.k_eta));
        prop_assert!((i.controller.k_omega - lin(p0.controller.k_omega, p1.controller.k_omega)).abs() <= tol(i.controller.k_omega));
        prop_assert!((i.refmodel.zeta_ref - lin(p0.refmodel.zeta_ref, p1.refmodel.zeta_ref)).abs() <= tol(1.0));
        let (a, b) = (p0.controller.k_eta.min(p1.controller.k_eta), p0.controller.k_eta.max(p1.controller.k_eta));
        prop_assert!(i.controller.k_eta >= a * (1.0 - 1e-12) && i.controller.k_eta <= b * (1.0 + 1e-12));
    }
}
