//! Derivative-free minimization: a deterministic Nelder–Mead simplex.
//!
//! Used by the shared-pole rational fit of the second-order boundary
//! construction, where the objective (a least-squares fit residual as a
//! function of two complex pole locations) is smooth but has no cheap
//! gradient.  The implementation is the standard reflect / expand /
//! contract / shrink scheme with the conventional coefficients and a
//! scipy-style initial simplex, so results are reproducible across runs.

/// Termination settings for [`nelder_mead`].
#[derive(Debug, Clone, Copy)]
pub struct NelderMeadOptions {
    /// Maximum number of iterations (one reflection step each).
    pub max_iter: usize,
    /// Converged when every vertex is within this distance of the best.
    pub x_tol: f64,
    /// ... and every objective value within this of the best.
    pub f_tol: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        NelderMeadOptions { max_iter: 2000, x_tol: 1e-7, f_tol: 1e-13 }
    }
}

/// Outcome of a simplex minimization.
#[derive(Debug, Clone)]
pub struct NelderMeadResult {
    /// Best point found.
    pub x: Vec<f64>,
    /// Objective at `x`.
    pub f: f64,
    /// Iterations used.
    pub iterations: usize,
    /// Whether the tolerances were met before `max_iter`.
    pub converged: bool,
}

/// Minimize `f` starting from `x0`.
///
/// The initial simplex perturbs each coordinate by 5% (or 2.5e−4 where the
/// coordinate is zero).
pub fn nelder_mead(
    f: &mut dyn FnMut(&[f64]) -> f64,
    x0: &[f64],
    opts: NelderMeadOptions,
) -> NelderMeadResult {
    let n = x0.len();
    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(x0.to_vec());
    for i in 0..n {
        let mut v = x0.to_vec();
        if v[i] != 0.0 {
            v[i] *= 1.05;
        } else {
            v[i] = 2.5e-4;
        }
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| f(v)).collect();
    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iter {
        iterations += 1;
        // order ascending by objective
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap_or(std::cmp::Ordering::Equal));
        let reordered: Vec<Vec<f64>> = order.iter().map(|&i| simplex[i].clone()).collect();
        let revalues: Vec<f64> = order.iter().map(|&i| values[i]).collect();
        simplex = reordered;
        values = revalues;
        let spread_x = simplex[1..]
            .iter()
            .map(|v| {
                v.iter()
                    .zip(&simplex[0])
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
        let spread_f = values[n] - values[0];
        if spread_x <= opts.x_tol && spread_f.abs() <= opts.f_tol {
            converged = true;
            break;
        }
        // centroid of all but worst
        let mut centroid = vec![0.0; n];
        for v in &simplex[..n] {
            for (ci, vi) in centroid.iter_mut().zip(v) {
                *ci += vi / n as f64;
            }
        }
        let blend = |a: &[f64], b: &[f64], t: f64| -> Vec<f64> {
            a.iter().zip(b).map(|(ai, bi)| ai + t * (bi - ai)).collect()
        };
        // reflect the worst through the centroid
        let reflected = blend(&centroid, &simplex[n], -alpha);
        let fr = f(&reflected);
        if fr < values[0] {
            let expanded = blend(&centroid, &simplex[n], -gamma);
            let fe = f(&expanded);
            if fe < fr {
                simplex[n] = expanded;
                values[n] = fe;
            } else {
                simplex[n] = reflected;
                values[n] = fr;
            }
        } else if fr < values[n - 1] {
            simplex[n] = reflected;
            values[n] = fr;
        } else {
            // contraction (outside if the reflection improved on the worst)
            let (point, fp) = if fr < values[n] {
                let outside = blend(&centroid, &reflected, rho);
                let fo = f(&outside);
                (outside, fo)
            } else {
                let inside = blend(&centroid, &simplex[n], rho);
                let fi = f(&inside);
                (inside, fi)
            };
            if fp < values[n].min(fr) {
                simplex[n] = point;
                values[n] = fp;
            } else {
                // shrink toward the best vertex
                for i in 1..=n {
                    simplex[i] = blend(&simplex[0], &simplex[i].clone(), sigma);
                    values[i] = f(&simplex[i]);
                }
            }
        }
    }
    let best = values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(b.1).unwrap_or(std::cmp::Ordering::Equal))
        .map(|(i, _)| i)
        .unwrap_or(0);
    NelderMeadResult {
        x: simplex[best].clone(),
        f: values[best],
        iterations,
        converged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_bowl() {
        let mut f = |x: &[f64]| (x[0] - 3.0).powi(2) + 2.0 * (x[1] + 1.0).powi(2);
        let res = nelder_mead(&mut f, &[0.0, 0.0], NelderMeadOptions::default());
        assert!(res.converged);
        assert!((res.x[0] - 3.0).abs() < 1e-6);
        assert!((res.x[1] + 1.0).abs() < 1e-6);
    }

    #[test]
    fn rosenbrock() {
        let mut f =
            |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let res = nelder_mead(&mut f, &[-1.2, 1.0], NelderMeadOptions::default());
        assert!(res.f < 1e-10, "f = {:.3e} after {} iters", res.f, res.iterations);
        assert!((res.x[0] - 1.0).abs() < 1e-4);
    }

    #[test]
    fn respects_iteration_cap() {
        let mut f = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>();
        let res = nelder_mead(
            &mut f,
            &[5.0, -7.0, 2.0],
            NelderMeadOptions { max_iter: 3, ..Default::default() },
        );
        assert!(!res.converged);
        assert_eq!(res.iterations, 3);
    }
}
