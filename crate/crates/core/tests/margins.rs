use proptest::prelude::*;

use indi_hinf::linsys::{Interconnection, StateSpace};
use indi_hinf::margins::{alpha_from_gain, classical_margins, disk_margin, disk_ranges};
use indi_hinf::StateSpace64;

/// `S = 1/(1 + L)` from an interconnection, independent of the margin code.
fn sensitivity(l: &StateSpace64) -> StateSpace64 {
    let mut ic = Interconnection::new();
    ic.sum("e", &[("d", 1.0), ("y", -1.0)]).block(l.clone(), &["e"], &["y"]).inputs(&["d"]).outputs(&["e"]);
    ic.build().unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn alpha_round_trip(alpha in 1e-6f64..1.999) {
        let ([gmin, gmax], [pm_lo, pm_hi]) = disk_ranges(alpha, 0.0);
        prop_assert!((alpha_from_gain(gmax) - alpha).abs() <= 1e-12);
        // independent inverse through the phase: tan(PM/2) = alpha/2
        prop_assert!((2.0 * (pm_hi.to_radians() / 2.0).tan() - alpha).abs() <= 1e-12);
        prop_assert!((gmin * gmax - 1.0).abs() <= 4.0 * f64::EPSILON);
        prop_assert_eq!(pm_lo, -pm_hi);
    }

    #[test]
    fn disk_ranges_bracket_nominal(alpha in 1e-6f64..1.999, sigma in -1.0f64..=1.0) {
        let ([gmin, gmax], [_, pm]) = disk_ranges(alpha, sigma);
        prop_assert!(gmin <= 1.0 && 1.0 <= gmax, "{} {}", gmin, gmax);
        prop_assert!(pm >= 0.0 && pm <= 180.0);
    }

    /// Disk margins are never less conservative than the classical ones.
    #[test]
    fn disk_pm_within_classical(k in 0.1f64..100.0, t1 in 0.001f64..1.0, t2 in 0.001f64..1.0, integrator in prop::bool::ANY) {
        let den: Vec<f64> = if integrator {
            vec![t1 * t2, t1 + t2, 1.0, 0.0]
        } else {
            vec![t1 * t2 * 0.1, t1 * t2 + 0.1 * (t1 + t2), t1 + t2 + 0.1, 1.0]
        };
        let l = StateSpace::from_tf(&[k], &den).unwrap();
        let s = sensitivity(&l);
        prop_assume!(s.is_stable());
        let disk = disk_margin(&s, 0.0, 1e-6).unwrap();
        let cm = classical_margins(&l).unwrap();
        if let Some(pm) = cm.pm_deg {
            prop_assert!(pm > -180.0 && pm <= 180.0);
            prop_assert!(disk.pm_deg() <= pm.abs() + 1e-6, "disk {} classical {}", disk.pm_deg(), pm);
        }
        if let Some(gm) = cm.gm_db {
            prop_assert!(disk.gm_db() <= gm.abs() + 1e-6, "disk {} classical {}", disk.gm_db(), gm);
        }
    }
}
