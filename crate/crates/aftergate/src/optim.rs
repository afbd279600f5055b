//! Derivative-free simplex minimization (Nelder-Mead) for the parameter
//! fit. Kept in-tree because the fit is the point of the exercise: the
//! objective is a Monte Carlo surface evaluated under common random numbers,
//! and the implementation must stay deterministic and dependency-free.

/// Standard coefficients: reflection 1, expansion 2, contraction 1/2,
/// shrink 1/2.
const ALPHA: f64 = 1.0;
const GAMMA: f64 = 2.0;
const RHO: f64 = 0.5;
const SIGMA: f64 = 0.5;

#[derive(Clone, Debug)]
pub struct NmResult {
    pub x: Vec<f64>,
    pub fx: f64,
    pub evaluations: u32,
    /// True when the simplex collapsed below `ftol` before the budget ran
    /// out; false means the returned point is merely the best seen.
    pub converged: bool,
}

/// Minimize `f` starting at `x0`, with an initial simplex displaced by
/// `step` along every coordinate. Stops when the function spread across the
/// simplex drops below `ftol` (relative to the best value) and the simplex
/// diameter drops below `sqrt(ftol)` (relative to the best vertex), or after
/// `max_evals` objective evaluations.
pub fn nelder_mead(
    mut f: impl FnMut(&[f64]) -> f64,
    x0: &[f64],
    step: f64,
    max_evals: u32,
    ftol: f64,
) -> NmResult {
    assert!(!x0.is_empty(), "need at least one dimension");
    assert!(step != 0.0, "initial simplex step must be nonzero");
    let n = x0.len();
    let mut evals = 0u32;
    let mut eval = |x: &[f64], evals: &mut u32| -> f64 {
        *evals += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };

    // initial simplex: x0 plus one displaced vertex per axis
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    let fx0 = eval(x0, &mut evals);
    simplex.push((x0.to_vec(), fx0));
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += step;
        let fv = eval(&v, &mut evals);
        simplex.push((v, fv));
    }

    // Function spread alone is not convergence: a simplex straddling a
    // quadratic minimum symmetrically has equal values at finite width, so
    // the vertices must also have collapsed onto each other.
    let xtol = ftol.sqrt();
    let spread_ok = |s: &[(Vec<f64>, f64)]| -> bool {
        let best = s[0].1;
        let worst = s[s.len() - 1].1;
        (worst - best).abs() <= ftol * (1.0 + best.abs())
    };
    let size_ok = |s: &[(Vec<f64>, f64)]| -> bool {
        let best = &s[0].0;
        s[1..].iter().all(|(v, _)| {
            v.iter()
                .zip(best)
                .all(|(a, b)| (a - b).abs() <= xtol * (1.0 + b.abs()))
        })
    };

    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let mut converged = spread_ok(&simplex) && size_ok(&simplex);

    while !converged && evals + 2 <= max_evals {
        // centroid of all but the worst
        let mut centroid = vec![0.0; n];
        for (v, _) in &simplex[..n] {
            for (c, x) in centroid.iter_mut().zip(v) {
                *c += x;
            }
        }
        for c in &mut centroid {
            *c /= n as f64;
        }
        let worst = simplex[n].clone();

        let at = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&worst.0)
                .map(|(c, w)| c + t * (c - w))
                .collect()
        };

        let xr = at(ALPHA);
        let fr = eval(&xr, &mut evals);
        if fr < simplex[0].1 {
            // try to expand past the reflection
            let xe = at(GAMMA);
            let fe = eval(&xe, &mut evals);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
        } else {
            // contract toward the better of (reflection, worst)
            let (xc, fc) = if fr < worst.1 {
                let xc = at(RHO);
                let fc = eval(&xc, &mut evals);
                (xc, fc)
            } else {
                let xc: Vec<f64> = centroid
                    .iter()
                    .zip(&worst.0)
                    .map(|(c, w)| c - RHO * (c - w))
                    .collect();
                let fc = eval(&xc, &mut evals);
                (xc, fc)
            };
            if fc < worst.1.min(fr) {
                simplex[n] = (xc, fc);
            } else {
                // shrink everything toward the best vertex
                let best = simplex[0].0.clone();
                for (v, fv) in simplex.iter_mut().skip(1) {
                    if evals >= max_evals {
                        break;
                    }
                    for (x, b) in v.iter_mut().zip(&best) {
                        *x = b + SIGMA * (*x - b);
                    }
                    *fv = eval(v, &mut evals);
                }
            }
        }
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        converged = spread_ok(&simplex) && size_ok(&simplex);
    }

    let (x, fx) = simplex.swap_remove(0);
    NmResult {
        x,
        fx,
        evaluations: evals,
        converged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_bowl_converges() {
        let target = [3.0, -1.5, 0.25];
        let f = |x: &[f64]| -> f64 {
            x.iter()
                .zip(&target)
                .map(|(a, b)| (a - b) * (a - b))
                .sum()
        };
        let r = nelder_mead(f, &[0.0, 0.0, 0.0], 0.5, 2000, 1e-12);
        assert!(r.converged);
        for (a, b) in r.x.iter().zip(&target) {
            assert!((a - b).abs() < 1e-4, "{:?}", r.x);
        }
        assert!(r.fx < 1e-8);
    }

    #[test]
    fn rosenbrock_gets_close() {
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let r = nelder_mead(f, &[-1.2, 1.0], 0.5, 5000, 1e-14);
        assert!(r.fx < 1e-6, "fx {}", r.fx);
        assert!((r.x[0] - 1.0).abs() < 1e-2 && (r.x[1] - 1.0).abs() < 1e-2);
    }

    #[test]
    fn budget_is_respected_and_flagged() {
        let f = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>() + 7.0;
        let r = nelder_mead(f, &[5.0; 6], 1.0, 30, 1e-15);
        assert!(!r.converged);
        assert!(r.evaluations <= 30);
    }

    #[test]
    fn deterministic_across_calls() {
        let f = |x: &[f64]| (x[0] - 2.0).powi(2) * (1.0 + (x[1].sin())).abs() + x[1] * x[1];
        let a = nelder_mead(f, &[0.3, 0.7], 0.25, 500, 1e-10);
        let b = nelder_mead(f, &[0.3, 0.7], 0.25, 500, 1e-10);
        assert_eq!(a.x, b.x);
        assert_eq!(a.fx.to_bits(), b.fx.to_bits());
        assert_eq!(a.evaluations, b.evaluations);
    }

    #[test]
    fn nan_objective_is_treated_as_infinite() {
        // objective undefined left of zero; minimizer must still find 1.0
        let f = |x: &[f64]| {
            if x[0] < 0.0 {
                f64::NAN
            } else {
                (x[0] - 1.0).powi(2)
            }
        };
        let r = nelder_mead(f, &[0.5], 0.4, 300, 1e-12);
        assert!((r.x[0] - 1.0).abs() < 1e-4);
    }
}
