//! Levenberg-Marquardt for small dense least-squares problems.

use nalgebra::{DMatrix, DVector};

pub(crate) trait LeastSquares {
    type Cache;

    /// Residuals at `p`, or `None` when `p` is infeasible.
    fn evaluate(&self, p: &[f64]) -> Option<(Vec<f64>, Self::Cache)>;

    /// Jacobian of the residuals at `p` (rows = residuals).
    fn jacobian(&self, p: &[f64], cache: &Self::Cache) -> DMatrix<f64>;

    /// Clamps parameters that left their admissible range in place and
    /// returns their indices.
    fn clamp_short(&self, _p: &mut [f64]) -> Vec<usize> {
        Vec::new()
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct LmOptions {
    pub max_iterations: usize,
    pub rel_tolerance: f64,
    /// Report clamped parameters instead of rejecting the step.
    pub interrupt_on_clamp: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum LmStop {
    Converged,
    MaxIterations,
    /// No step could decrease the objective.
    Stalled,
    Interrupted(Vec<usize>),
}

#[derive(Debug, Clone)]
pub(crate) struct LmOutcome {
    pub params: Vec<f64>,
    /// Objective before the first and after every accepted step.
    pub history: Vec<f64>,
    pub stop: LmStop,
}

fn sum_sq(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

pub(crate) fn levenberg_marquardt<P: LeastSquares>(
    problem: &P,
    p0: &[f64],
    opts: LmOptions,
) -> Option<LmOutcome> {
    let mut p = p0.to_vec();
    let (mut r, mut cache) = problem.evaluate(&p)?;
    let mut obj = sum_sq(&r);
    let mut history = vec![obj];
    let mut lambda = 1e-3;
    let n = p.len();

    let stop = 'outer: loop {
        if history.len() > opts.max_iterations {
            break LmStop::MaxIterations;
        }
        if obj == 0.0 {
            break LmStop::Converged;
        }
        let j = problem.jacobian(&p, &cache);
        let a = j.tr_mul(&j);
        let g = j.tr_mul(&DVector::from_column_slice(&r));
        if g.amax() == 0.0 {
            break LmStop::Converged;
        }
        let max_diag = (0..n).map(|k| a[(k, k)]).fold(0.0, f64::max);
        loop {
            let mut m = a.clone();
            for k in 0..n {
                m[(k, k)] += lambda * a[(k, k)].max(1e-12 * max_diag).max(f64::MIN_POSITIVE);
            }
            let Some(chol) = m.cholesky() else {
                lambda *= 10.0;
                if lambda > 1e16 {
                    break 'outer LmStop::Stalled;
                }
                continue;
            };
            let delta = chol.solve(&(-&g));
            let mut trial: Vec<f64> = p.iter().zip(delta.iter()).map(|(a, b)| a + b).collect();
            let clamped = problem.clamp_short(&mut trial);
            let evaluated = problem.evaluate(&trial);
            let improved = evaluated.as_ref().map(|(rt, _)| sum_sq(rt)).filter(|&o| o < obj);
            match improved {
                Some(_) if !clamped.is_empty() && opts.interrupt_on_clamp => {
                    break 'outer LmStop::Interrupted(clamped);
                }
                Some(obj_t) if clamped.is_empty() => {
                    let (rt, ct) = evaluated.unwrap();
                    let rel = (obj - obj_t) / obj;
                    p = trial;
                    r = rt;
                    cache = ct;
                    obj = obj_t;
                    history.push(obj);
                    lambda = (lambda * 0.2).max(1e-12);
                    if rel < opts.rel_tolerance {
                        break 'outer LmStop::Converged;
                    }
                    break;
                }
                _ => {
                    lambda *= 8.0;
                    if lambda > 1e12 {
                        break 'outer LmStop::Stalled;
                    }
                }
            }
        }
    };
    Some(LmOutcome { params: p, history, stop })
}
