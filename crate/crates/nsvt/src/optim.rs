//! Internal maximizer: L-BFGS two-loop recursion (memory 10) with Armijo
//! backtracking and central-difference gradients.
//!
//! Objectives are maximized over an unconstrained parameterization; the
//! caller maps constrained parameters through log/logit beforehand. An
//! objective may return `-inf` (or NaN) anywhere — the line search treats
//! such points as plain rejections, so the driver stays total.

const MEMORY: usize = 10;
const ARMIJO_C1: f64 = 1e-4;
const BACKTRACK: f64 = 0.5;
const MAX_BACKTRACKS: usize = 40;

pub(crate) struct OptimOptions {
    pub max_iter: usize,
    pub grad_tol: f64,
}

pub(crate) struct OptimOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub converged: bool,
    /// `(iteration, objective, point)` per accepted step.
    pub trace: Vec<(usize, f64, Vec<f64>)>,
}

/// Central-difference gradient with per-coordinate step
/// `1e-6 * max(1, |x_i|)`; falls back to a one-sided difference when one
/// side of the stencil is not finite.
pub(crate) fn numerical_gradient(f: &dyn Fn(&[f64]) -> f64, x: &[f64], fx: f64) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        let h = 1e-6 * x[i].abs().max(1.0);
        probe[i] = x[i] + h;
        let fp = f(&probe);
        probe[i] = x[i] - h;
        let fm = f(&probe);
        probe[i] = x[i];
        g[i] = if fp.is_finite() && fm.is_finite() {
            (fp - fm) / (2.0 * h)
        } else if fp.is_finite() {
            (fp - fx) / h
        } else if fm.is_finite() {
            (fx - fm) / h
        } else {
            0.0
        };
    }
    g
}

pub(crate) fn maximize(
    f: &dyn Fn(&[f64]) -> f64,
    x0: &[f64],
    opts: &OptimOptions,
) -> OptimOutcome {
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut fx = f(&x);
    let mut trace = Vec::new();
    if !fx.is_finite() {
        return OptimOutcome {
            x,
            value: fx,
            converged: false,
            trace,
        };
    }
    trace.push((0, fx, x.clone()));
    if n == 0 {
        return OptimOutcome {
            x,
            value: fx,
            converged: true,
            trace,
        };
    }

    let mut g = numerical_gradient(f, &x, fx);
    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let mut rho_hist: Vec<f64> = Vec::new();
    let mut converged = false;

    for iter in 1..=opts.max_iter {
        if inf_norm(&g) < opts.grad_tol {
            converged = true;
            break;
        }
        let mut dir = two_loop_direction(&g, &s_hist, &y_hist, &rho_hist);
        let mut slope = dot(&g, &dir);
        if slope <= 0.0 {
            // Not an ascent direction: restart from steepest ascent.
            s_hist.clear();
            y_hist.clear();
            rho_hist.clear();
            dir = g.clone();
            slope = dot(&g, &dir);
        }

        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let cand: Vec<f64> = x.iter().zip(&dir).map(|(xi, di)| xi + alpha * di).collect();
            let fc = f(&cand);
            if fc.is_finite() && fc >= fx + ARMIJO_C1 * alpha * slope {
                accepted = Some((cand, fc));
                break;
            }
            alpha *= BACKTRACK;
        }
        let Some((x_new, f_new)) = accepted else {
            // No admissible step along any tried scale; treat the current
            // point as final.
            converged = inf_norm(&g) < opts.grad_tol;
            break;
        };

        let g_new = numerical_gradient(f, &x_new, f_new);
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        // Curvature pairs stored for a minimization of -f: y = g_old - g_new.
        let yv: Vec<f64> = g.iter().zip(&g_new).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &yv);
        if sy > 1e-12 * norm(&s) * norm(&yv) {
            if s_hist.len() == MEMORY {
                s_hist.remove(0);
                y_hist.remove(0);
                rho_hist.remove(0);
            }
            rho_hist.push(1.0 / sy);
            s_hist.push(s);
            y_hist.push(yv);
        }
        x = x_new;
        fx = f_new;
        g = g_new;
        trace.push((iter, fx, x.clone()));
    }
    if !converged && inf_norm(&g) < opts.grad_tol {
        converged = true;
    }
    OptimOutcome {
        x,
        value: fx,
        converged,
        trace,
    }
}

/// Two-loop recursion returning an ascent direction `H * g`.
fn two_loop_direction(
    g: &[f64],
    s_hist: &[Vec<f64>],
    y_hist: &[Vec<f64>],
    rho_hist: &[f64],
) -> Vec<f64> {
    let mut q = g.to_vec();
    let k = s_hist.len();
    let mut alphas = vec![0.0; k];
    for i in (0..k).rev() {
        let a = rho_hist[i] * dot(&s_hist[i], &q);
        alphas[i] = a;
        for (qj, yj) in q.iter_mut().zip(&y_hist[i]) {
            *qj -= a * yj;
        }
    }
    if k > 0 {
        let last = k - 1;
        let scale = dot(&s_hist[last], &y_hist[last]) / dot(&y_hist[last], &y_hist[last]);
        for qj in q.iter_mut() {
            *qj *= scale;
        }
    }
    for i in 0..k {
        let b = rho_hist[i] * dot(&y_hist[i], &q);
        for (qj, sj) in q.iter_mut().zip(&s_hist[i]) {
            *qj += (alphas[i] - b) * sj;
        }
    }
    q
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn maximizes_concave_quadratic() {
        // f(x) = -(x1-3)^2 - 2(x2+1)^2
        let f = |x: &[f64]| -(x[0] - 3.0).powi(2) - 2.0 * (x[1] + 1.0).powi(2);
        let out = maximize(
            &f,
            &[0.0, 0.0],
            &OptimOptions {
                max_iter: 200,
                grad_tol: 1e-8,
            },
        );
        assert!(out.converged);
        assert!((out.x[0] - 3.0).abs() < 1e-5);
        assert!((out.x[1] + 1.0).abs() < 1e-5);
    }

    #[test]
    fn maximizes_rosenbrock_flipped() {
        let f = |x: &[f64]| -((1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2));
        let out = maximize(
            &f,
            &[-1.2, 1.0],
            &OptimOptions {
                max_iter: 2_000,
                grad_tol: 1e-7,
            },
        );
        assert!((out.x[0] - 1.0).abs() < 1e-3, "x = {:?}", out.x);
        assert!((out.x[1] - 1.0).abs() < 1e-3);
    }

    #[test]
    fn survives_infinite_regions() {
        // Objective is -inf outside |x| < 2; optimum at 1.5.
        let f = |x: &[f64]| {
            if x[0].abs() >= 2.0 {
                f64::NEG_INFINITY
            } else {
                -(x[0] - 1.5).powi(2)
            }
        };
        let out = maximize(
            &f,
            &[0.0],
            &OptimOptions {
                max_iter: 200,
                grad_tol: 1e-8,
            },
        );
        assert!((out.x[0] - 1.5).abs() < 1e-5);
    }

    #[test]
    fn trace_is_monotone() {
        let f = |x: &[f64]| -(x[0].powi(4) + x[1].powi(2) - x[0]);
        let out = maximize(
            &f,
            &[2.0, -3.0],
            &OptimOptions {
                max_iter: 500,
                grad_tol: 1e-8,
            },
        );
        for w in out.trace.windows(2) {
            assert!(w[1].1 >= w[0].1);
        }
    }
}
