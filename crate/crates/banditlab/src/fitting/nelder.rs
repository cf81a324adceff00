//! Downhill simplex minimizer (Nelder-Mead).
//!
//! The posterior surface has kinks wherever a prediction error changes
//! sign, so a derivative-free method is the right tool. Standard
//! coefficients: reflection 1, expansion 2, contraction 0.5, shrink 0.5.

/// Outcome of one simplex run.
#[derive(Debug, Clone)]
pub struct SimplexResult {
    pub x: Vec<f64>,
    pub fx: f64,
    pub iterations: usize,
    /// True when the simplex collapsed below tolerance before the
    /// iteration cap.
    pub tol_reached: bool,
}

/// Minimize `f` starting from `x0`, stepping `step` in each coordinate to
/// build the initial simplex. Stops when the objective spread across the
/// simplex falls below `ftol` or after `max_iters` iterations.
pub fn minimize(
    f: &mut dyn FnMut(&[f64]) -> f64,
    x0: &[f64],
    step: f64,
    ftol: f64,
    max_iters: usize,
) -> SimplexResult {
    let n = x0.len();
    assert!(n >= 1, "need at least one dimension");
    let mut points: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    points.push((x0.to_vec(), f(x0)));
    for i in 0..n {
        let mut x = x0.to_vec();
        x[i] += step;
        let fx = f(&x);
        points.push((x, fx));
    }

    let mut iterations = 0;
    let mut tol_reached = false;
    while iterations < max_iters {
        iterations += 1;
        points.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = points[0].1;
        let worst = points[n].1;
        if (worst - best).abs() <= ftol {
            // A flat objective spread across a still-wide simplex happens on
            // kinked surfaces (points straddling a crease); shrink instead
            // of stopping until the simplex itself has collapsed.
            let spread = (0..n)
                .map(|i| {
                    points
                        .iter()
                        .map(|(x, _)| x[i])
                        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                            (lo.min(v), hi.max(v))
                        })
                })
                .map(|(lo, hi)| hi - lo)
                .fold(0.0f64, f64::max);
            if spread <= 1e-8 {
                tol_reached = true;
                break;
            }
            let best_x = points[0].0.clone();
            for (x, fx) in points.iter_mut().skip(1) {
                for (xi, bi) in x.iter_mut().zip(&best_x) {
                    *xi = bi + 0.5 * (*xi - bi);
                }
                *fx = f(x);
            }
            continue;
        }

        // Centroid of all points but the worst.
        let mut centroid = vec![0.0; n];
        for (x, _) in points.iter().take(n) {
            for (c, xi) in centroid.iter_mut().zip(x) {
                *c += xi / n as f64;
            }
        }
        let worst_x = points[n].0.clone();
        let at = |coef: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&worst_x)
                .map(|(c, w)| c + coef * (c - w))
                .collect()
        };

        let reflected = at(1.0);
        let f_reflected = f(&reflected);
        if f_reflected < points[0].1 {
            let expanded = at(2.0);
            let f_expanded = f(&expanded);
            if f_expanded < f_reflected {
                points[n] = (expanded, f_expanded);
            } else {
                points[n] = (reflected, f_reflected);
            }
            continue;
        }
        if f_reflected < points[n - 1].1 {
            points[n] = (reflected, f_reflected);
            continue;
        }
        // Contract toward the better of worst/reflected.
        let contracted = if f_reflected < points[n].1 {
            at(0.5)
        } else {
            at(-0.5)
        };
        let f_contracted = f(&contracted);
        if f_contracted < points[n].1.min(f_reflected) {
            points[n] = (contracted, f_contracted);
            continue;
        }
        // Shrink everything toward the best point.
        let best_x = points[0].0.clone();
        for (x, fx) in points.iter_mut().skip(1) {
            for (xi, bi) in x.iter_mut().zip(&best_x) {
                *xi = bi + 0.5 * (*xi - bi);
            }
            *fx = f(x);
        }
    }

    points.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, fx) = points.swap_remove(0);
    SimplexResult {
        x,
        fx,
        iterations,
        tol_reached,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_quadratic() {
        let mut f = |x: &[f64]| (x[0] - 3.0).powi(2) + 2.0 * (x[1] + 1.0).powi(2);
        let r = minimize(&mut f, &[0.0, 0.0], 1.0, 1e-12, 2000);
        assert!(r.tol_reached);
        assert!((r.x[0] - 3.0).abs() < 1e-5, "{:?}", r.x);
        assert!((r.x[1] + 1.0).abs() < 1e-5);
    }

    #[test]
    fn minimizes_rosenbrock() {
        let mut f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let r = minimize(&mut f, &[-1.2, 1.0], 0.5, 1e-14, 5000);
        assert!((r.x[0] - 1.0).abs() < 1e-4, "{:?}", r.x);
        assert!((r.x[1] - 1.0).abs() < 1e-4);
    }

    #[test]
    fn one_dimensional() {
        let mut f = |x: &[f64]| (x[0] - 0.5).abs();
        let r = minimize(&mut f, &[10.0], 1.0, 1e-10, 2000);
        assert!((r.x[0] - 0.5).abs() < 1e-4);
    }
}
