//! Derivative-free minimization.

/// Stopping rules for [`nelder_mead`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NmOptions {
    pub max_evals: usize,
    /// Edge length of the initial simplex.
    pub initial_step: f64,
    /// Stop when every vertex is within this distance of the best one.
    pub x_tol: f64,
    /// ... and the objective spread is below this.
    pub f_tol: f64,
}

impl Default for NmOptions {
    fn default() -> Self {
        Self { max_evals: 200, initial_step: 0.3, x_tol: 1e-7, f_tol: 1e-12 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NmResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub evals: usize,
}

/// Nelder-Mead simplex search with the standard coefficients
/// (reflection 1, expansion 2, contraction 1/2, shrink 1/2).
/// NaN objective values are treated as `+inf`.
pub fn nelder_mead<F: FnMut(&[f64]) -> f64>(mut f: F, x0: &[f64], opts: NmOptions) -> NmResult {
    let n = x0.len();
    let mut evals = 0;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_nan() { f64::INFINITY } else { v }
    };
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((x0.to_vec(), eval(x0, &mut evals)));
    for i in 0..n {
        let mut x = x0.to_vec();
        x[i] += opts.initial_step;
        let v = eval(&x, &mut evals);
        simplex.push((x, v));
    }
    let lerp = |a: &[f64], b: &[f64], t: f64| -> Vec<f64> { a.iter().zip(b).map(|(p, q)| p + t * (q - p)).collect() };

    while evals < opts.max_evals {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = &simplex[0];
        let spread = simplex[n].1 - best.1;
        let size = simplex[1..]
            .iter()
            .map(|(x, _)| x.iter().zip(&best.0).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if size < opts.x_tol && (spread < opts.f_tol || !spread.is_finite() && best.1.is_infinite()) {
            break;
        }
        let mut centroid = vec![0.0; n];
        for (x, _) in &simplex[..n] {
            for (c, v) in centroid.iter_mut().zip(x) {
                *c += v / n as f64;
            }
        }
        let worst = simplex[n].clone();
        let xr = lerp(&centroid, &worst.0, -1.0);
        let fr = eval(&xr, &mut evals);
        if fr < simplex[0].1 {
            let xe = lerp(&centroid, &worst.0, -2.0);
            let fe = eval(&xe, &mut evals);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
            continue;
        }
        let (xc, fc) = if fr < worst.1 {
            let xc = lerp(&centroid, &xr, 0.5);
            let fc = eval(&xc, &mut evals);
            (xc, fc)
        } else {
            let xc = lerp(&centroid, &worst.0, 0.5);
            let fc = eval(&xc, &mut evals);
            (xc, fc)
        };
        if fc < fr.min(worst.1) {
            simplex[n] = (xc, fc);
            continue;
        }
        let x_best = simplex[0].0.clone();
        for vertex in simplex.iter_mut().skip(1) {
            let x = lerp(&x_best, &vertex.0, 0.5);
            let v = eval(&x, &mut evals);
            *vertex = (x, v);
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, v) = simplex.swap_remove(0);
    NmResult { x, f: v, evals }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock() {
        let r = nelder_mead(
            |x| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2),
            &[-1.2, 1.0],
            NmOptions { max_evals: 2000, initial_step: 0.5, x_tol: 1e-10, f_tol: 1e-16 },
        );
        assert!((r.x[0] - 1.0).abs() < 1e-5 && (r.x[1] - 1.0).abs() < 1e-5, "{r:?}");
    }

    #[test]
    fn respects_budget_and_is_deterministic() {
        let f = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>();
        let opts = NmOptions { max_evals: 37, ..Default::default() };
        let a = nelder_mead(f, &[3.0, -2.0, 1.0], opts);
        let b = nelder_mead(f, &[3.0, -2.0, 1.0], opts);
        assert_eq!(a, b);
        assert!(a.evals <= 37 + 3);
    }

    #[test]
    fn barrier_values_are_avoided() {
        let f = |x: &[f64]| if x[0] < 0.5 { f64::INFINITY } else { (x[0] - 0.7).powi(2) };
        let r = nelder_mead(f, &[2.0], NmOptions { max_evals: 500, ..Default::default() });
        assert!((r.x[0] - 0.7).abs() < 1e-5);
    }
}
