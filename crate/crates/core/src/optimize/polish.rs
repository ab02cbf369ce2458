use nalgebra::{DMatrix, DVector};

use super::{SolverReport, SolverStatus};
use crate::model::ParamBox;
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolishOptions {
    pub max_iter: usize,
    pub max_halvings: usize,
    pub step_tol: f64,
}

impl Default for PolishOptions {
    fn default() -> Self {
        Self { max_iter: 100, max_halvings: 40, step_tol: 1e-10 }
    }
}

/// Descent on `Q(x) = M(x)' W M(x)`.
///
/// `eval` returns the moment vector and its Jacobian. Each iteration first
/// tries a Newton step on a finite-difference Hessian of the exact gradient
/// `2G'WM` when that Hessian is positive definite, then the Gauss–Newton
/// step solving `(G'WG) Δ = -G'WM` (with a small ridge if singular). Steps
/// are halved until `Q` decreases.
pub fn gauss_newton_polish<E>(
    mut eval: E,
    weight: &DMatrix<f64>,
    x0: &[f64],
    bounds: &ParamBox,
    opts: &PolishOptions,
) -> Result<(Vec<f64>, SolverReport)>
where
    E: FnMut(&[f64]) -> Result<(DVector<f64>, DMatrix<f64>)>,
{
    let quad = |m: &DVector<f64>| m.dot(&(weight * m));
    let mut x = x0.to_vec();
    bounds.project(&mut x);
    let (mut m, mut g) = eval(&x)?;
    let mut q = quad(&m);
    let mut evals = 1;
    let mut iterations = 0;
    let mut status = SolverStatus::MaxIterations;

    while iterations < opts.max_iter {
        if q == 0.0 {
            status = SolverStatus::Converged;
            break;
        }
        let gtw = g.transpose() * weight;
        let b = -(&gtw * &m);
        let newton = newton_direction(&mut eval, weight, &x, &b, &mut evals);
        let Some(gn) = gauss_newton_direction(&gtw * &g, &b) else {
            status = SolverStatus::SingularJacobian;
            break;
        };
        iterations += 1;
        let mut accepted = None;
        for step in newton.iter().chain([&gn]) {
            let slope = -b.dot(step);
            if !(slope < 0.0) {
                continue;
            }
            let mut alpha = 1.0;
            for _ in 0..=opts.max_halvings {
                let mut cand: Vec<f64> = x.iter().zip(step.iter()).map(|(v, s)| v + alpha * s).collect();
                bounds.project(&mut cand);
                let (mc, gc) = eval(&cand)?;
                evals += 1;
                let qc = quad(&mc);
                if qc.is_finite() && qc <= q + 1e-4 * alpha * slope && qc <= q {
                    accepted = Some((cand, mc, gc, qc));
                    break;
                }
                alpha *= 0.5;
            }
            if accepted.is_some() {
                break;
            }
        }
        let Some((cand, mc, gc, qc)) = accepted else {
            // No descent along either direction: a stationary point up to
            // numerical precision.
            status = SolverStatus::Converged;
            break;
        };
        let moved: f64 = cand.iter().zip(&x).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let scale = 1.0 + x.iter().map(|v| v * v).sum::<f64>().sqrt();
        x = cand;
        m = mc;
        g = gc;
        let gain = q - qc;
        q = qc;
        if moved <= opts.step_tol * scale || gain <= 1e-12 * q.max(f64::MIN_POSITIVE) {
            status = SolverStatus::Converged;
            break;
        }
    }
    Ok((x, SolverReport::new(status, iterations, evals, q)))
}

fn gauss_newton_direction(mut a: DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let step = match a.clone().cholesky() {
        Some(c) => c.solve(b),
        None => {
            let ridge = 1e-12 * a.diagonal().abs().max().max(1e-300);
            for j in 0..a.nrows() {
                a[(j, j)] += ridge;
            }
            a.lu().solve(b)?
        }
    };
    step.iter().all(|v| v.is_finite()).then_some(step)
}

/// `−H⁻¹ G'WM` with `H` the central-difference Jacobian of `G'WM`, when
/// `H` is positive definite.
fn newton_direction<E>(
    eval: &mut E,
    weight: &DMatrix<f64>,
    x: &[f64],
    b: &DVector<f64>,
    evals: &mut usize,
) -> Option<DVector<f64>>
where
    E: FnMut(&[f64]) -> Result<(DVector<f64>, DMatrix<f64>)>,
{
    let d = x.len();
    let mut half_grad = |p: &[f64]| -> Option<DVector<f64>> {
        *evals += 1;
        let (m, g) = eval(p).ok()?;
        Some(g.transpose() * (weight * m))
    };
    let mut h = DMatrix::zeros(d, d);
    for j in 0..d {
        let e = 1e-6 * x[j].abs().max(1.0);
        let mut up = x.to_vec();
        let mut dn = x.to_vec();
        up[j] += e;
        dn[j] -= e;
        let col = (half_grad(&up)? - half_grad(&dn)?) / (2.0 * e);
        h.set_column(j, &col);
    }
    let h = (&h + h.transpose()) * 0.5;
    let step = h.cholesky()?.solve(b);
    step.iter().all(|v| v.is_finite()).then_some(step)
}
