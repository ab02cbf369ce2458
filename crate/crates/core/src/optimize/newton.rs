use nalgebra::{DMatrix, DVector};

use super::{SolverReport, SolverStatus};
use crate::linalg;
use crate::model::ParamBox;
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
    /// Relative parameter step below which the iteration is considered stalled.
    pub step_tol: f64,
    pub record_path: bool,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 100, max_halvings: 40, step_tol: 1e-10, record_path: false }
    }
}

/// Damped Newton iteration for `r(x) = 0` inside a box.
///
/// Full steps are halved until the residual norm decreases (Armijo condition
/// on `‖r‖`); every iterate is projected into `bounds`. A singular Jacobian
/// stops the iteration with [`SolverStatus::SingularJacobian`] so callers can
/// fall back to an easier problem (e.g. a larger bandwidth).
pub fn newton_root<R, J>(
    mut residual: R,
    mut jacobian: J,
    x0: &[f64],
    bounds: &ParamBox,
    opts: &NewtonOptions,
) -> Result<(Vec<f64>, SolverReport)>
where
    R: FnMut(&[f64]) -> Result<DVector<f64>>,
    J: FnMut(&[f64]) -> Result<DMatrix<f64>>,
{
    let mut x = x0.to_vec();
    bounds.project(&mut x);
    let mut r = residual(&x)?;
    let mut norm = r.norm();
    let mut evals = 1;
    let mut path = opts.record_path.then(|| vec![norm]);
    let mut status = SolverStatus::MaxIterations;
    let mut iterations = 0;

    while iterations < opts.max_iter {
        if norm <= opts.tol {
            status = SolverStatus::Converged;
            break;
        }
        let jac = jacobian(&x)?;
        let step = match linalg::solve(&jac, &(-&r)) {
            Ok(s) if linalg::column_rank(&jac) == jac.ncols() => s,
            _ => {
                status = SolverStatus::SingularJacobian;
                break;
            }
        };
        iterations += 1;
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            let mut cand: Vec<f64> = x.iter().zip(step.iter()).map(|(a, s)| a + alpha * s).collect();
            bounds.project(&mut cand);
            let rc = residual(&cand)?;
            evals += 1;
            let nc = rc.norm();
            if nc.is_finite() && nc <= (1.0 - 1e-4 * alpha) * norm {
                accepted = Some((cand, rc, nc));
                break;
            }
            alpha *= 0.5;
        }
        let Some((cand, rc, nc)) = accepted else {
            status = SolverStatus::LineSearchFailed;
            break;
        };
        let moved: f64 = cand.iter().zip(&x).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let scale = 1.0 + x.iter().map(|v| v * v).sum::<f64>().sqrt();
        x = cand;
        r = rc;
        norm = nc;
        if let Some(p) = path.as_mut() {
            p.push(norm);
        }
        if norm > opts.tol && moved <= opts.step_tol * scale {
            status = SolverStatus::LineSearchFailed;
            break;
        }
    }
    if norm <= opts.tol {
        status = SolverStatus::Converged;
    }
    let mut report = SolverReport::new(status, iterations, evals, norm);
    report.path = path;
    Ok((x, report))
}
