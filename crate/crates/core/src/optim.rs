//! BFGS with an Armijo backtracking line search.
//!
//! Minimizes; callers maximizing a log-likelihood pass its negation. A step is
//! only accepted when it lowers the objective, so the accepted trace is
//! monotone.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BfgsOptions {
    pub max_iter: usize,
    /// Stop when max |gradient| falls below this.
    pub gtol: f64,
    /// Stop after three consecutive accepted steps with relative objective
    /// change below this.
    pub ftol: f64,
    /// Cap on the largest coordinate of a single step.
    pub max_step: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self {
            max_iter: 1000,
            gtol: 1e-5,
            ftol: 1e-12,
            max_step: 5.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Gradient,
    FunctionChange,
    MaxIterations,
    LineSearch,
    /// The objective could not be evaluated at the starting point.
    Evaluation,
}

#[derive(Debug, Clone)]
pub struct BfgsResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub gradient: Vec<f64>,
    pub iterations: usize,
    pub termination: Termination,
    /// Objective after every accepted step, starting with the initial value.
    pub trace: Vec<f64>,
}

impl BfgsResult {
    pub fn gradient_norm(&self) -> f64 {
        max_abs(&self.gradient)
    }
}

pub fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn identity(n: usize, scale: f64) -> Vec<f64> {
    let mut h = vec![0.0; n * n];
    for i in 0..n {
        h[i * n + i] = scale;
    }
    h
}

/// `objective` returns `None` (or a non-finite value) where it is undefined;
/// the line search treats that as a failed trial point.
pub fn minimize<F>(objective: F, x0: &[f64], opts: &BfgsOptions) -> BfgsResult
where
    F: Fn(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    let n = x0.len();
    let eval = |x: &[f64]| objective(x).filter(|(f, g)| f.is_finite() && g.iter().all(|v| v.is_finite()));

    let Some((mut f, mut g)) = eval(x0) else {
        return BfgsResult {
            x: x0.to_vec(),
            f: f64::NAN,
            gradient: vec![f64::NAN; n],
            iterations: 0,
            termination: Termination::Evaluation,
            trace: vec![],
        };
    };
    let mut x = x0.to_vec();
    let mut trace = vec![f];
    let mut h = identity(n, 1.0);
    let mut fresh = true;
    let mut small_changes = 0;
    let mut iterations = 0;

    let termination = loop {
        if max_abs(&g) < opts.gtol {
            break Termination::Gradient;
        }
        if iterations >= opts.max_iter {
            break Termination::MaxIterations;
        }
        iterations += 1;

        let mut d: Vec<f64> = (0..n).map(|i| -dot(&h[i * n..(i + 1) * n], &g)).collect();
        let mut slope = dot(&d, &g);
        if !(slope < 0.0) {
            h = identity(n, 1.0);
            fresh = true;
            d = g.iter().map(|v| -v).collect();
            slope = dot(&d, &g);
        }
        let biggest = max_abs(&d);
        if biggest > opts.max_step {
            let s = opts.max_step / biggest;
            d.iter_mut().for_each(|v| *v *= s);
            slope *= s;
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + step * b).collect();
            if let Some((ft, gt)) = eval(&trial) {
                if ft <= f + 1e-4 * step * slope && ft < f {
                    accepted = Some((trial, ft, gt));
                    break;
                }
            }
            step *= 0.5;
        }

        let Some((x_new, f_new, g_new)) = accepted else {
            if fresh {
                break Termination::LineSearch;
            }
            h = identity(n, 1.0);
            fresh = true;
            continue;
        };

        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if fresh {
                h = identity(n, sy / dot(&y, &y));
                fresh = false;
            }
            // H <- (I - rho s y') H (I - rho y s') + rho s s'
            let rho = 1.0 / sy;
            let hy: Vec<f64> = (0..n).map(|i| dot(&h[i * n..(i + 1) * n], &y)).collect();
            let yhy = dot(&y, &hy);
            for i in 0..n {
                for j in 0..n {
                    h[i * n + j] += -rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
                }
            }
        }

        let change = (f - f_new).abs();
        x = x_new;
        f = f_new;
        g = g_new;
        trace.push(f);

        if change <= opts.ftol * f.abs().max(1.0) {
            small_changes += 1;
            if small_changes >= 3 {
                break Termination::FunctionChange;
            }
        } else {
            small_changes = 0;
        }
    };

    BfgsResult {
        x,
        f,
        gradient: g,
        iterations,
        termination,
        trace,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64]) -> Option<(f64, Vec<f64>)> {
        let (a, b) = (x[0], x[1]);
        let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
        let g = vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)];
        Some((f, g))
    }

    #[test]
    fn solves_rosenbrock() {
        let r = minimize(rosenbrock, &[-1.2, 1.0], &BfgsOptions::default());
        assert_eq!(r.termination, Termination::Gradient, "{r:?}");
        assert!((r.x[0] - 1.0).abs() < 1e-5 && (r.x[1] - 1.0).abs() < 1e-5);
        assert!(r.trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn quadratic_in_few_steps() {
        let q = |x: &[f64]| Some((x[0] * x[0] + 10.0 * x[1] * x[1], vec![2.0 * x[0], 20.0 * x[1]]));
        let r = minimize(q, &[3.0, -2.0], &BfgsOptions::default());
        assert!(r.iterations < 20);
        assert!(r.gradient_norm() < 1e-5);
    }

    #[test]
    fn undefined_start_is_reported() {
        let r = minimize(|_: &[f64]| None, &[0.0], &BfgsOptions::default());
        assert_eq!(r.termination, Termination::Evaluation);
    }
}
