//! Smoothed MM, one-step and GMM estimators, plus the quantile-regression and
//! 2SLS baselines.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::covariance::{self, CovMode, CovarianceSpec};
use crate::linalg;
use crate::model::{tsls_coefficients, Dataset, LinearResidual, ResidualModel, Table};
use crate::moments::MomentContext;
use crate::optimize::{
    gauss_newton_polish, newton_root, simulated_annealing, AnnealSchedule, NewtonOptions, PolishOptions, SolverReport,
    SolverStatus,
};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EstimatorKind {
    #[serde(rename = "mm")]
    Mm,
    #[serde(rename = "one_step")]
    OneStep,
    #[serde(rename = "gmm2s")]
    Gmm2Step,
    #[serde(rename = "gmm_id")]
    GmmIdentity,
    #[serde(rename = "qr")]
    Qr,
    #[serde(rename = "2sls")]
    TwoSls,
}

impl EstimatorKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EstimatorKind::Mm => "mm",
            EstimatorKind::OneStep => "one_step",
            EstimatorKind::Gmm2Step => "gmm2s",
            EstimatorKind::GmmIdentity => "gmm_id",
            EstimatorKind::Qr => "qr",
            EstimatorKind::TwoSls => "2sls",
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim().to_ascii_lowercase().as_str() {
            "mm" => EstimatorKind::Mm,
            "one_step" | "onestep" | "1s" => EstimatorKind::OneStep,
            "gmm2s" | "gmm" | "two_step" => EstimatorKind::Gmm2Step,
            "gmm_id" | "gmmid" | "gmm_identity" | "identity" => EstimatorKind::GmmIdentity,
            "qr" => EstimatorKind::Qr,
            "2sls" | "tsls" | "iv" => EstimatorKind::TwoSls,
            other => return Err(Error::invalid(format!("unknown estimator '{other}'"))),
        })
    }
}

/// Point estimate with covariance and solver diagnostics.
///
/// `cov` is `NaN`-filled (and a warning recorded) when the covariance could
/// not be computed, e.g. because the Jacobian is rank deficient at the
/// estimation bandwidth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateResult {
    pub estimator_kind: EstimatorKind,
    pub param_names: Vec<String>,
    pub beta_hat: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
    pub std_errors: Vec<f64>,
    /// `None` for 2SLS.
    pub tau: Option<f64>,
    pub bandwidth_used: Option<f64>,
    /// `‖M̂_n(β̂)‖` for MM-type estimators, `M̂ᵀŴM̂` for GMM.
    pub criterion: f64,
    pub solver: SolverReport,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl EstimateResult {
    #[allow(clippy::too_many_arguments)]
    fn assemble(
        kind: EstimatorKind,
        param_names: Vec<String>,
        beta_hat: Vec<f64>,
        cov: Result<DMatrix<f64>>,
        tau: Option<f64>,
        bandwidth_used: Option<f64>,
        criterion: f64,
        solver: SolverReport,
        mut warnings: Vec<String>,
    ) -> Self {
        let d = beta_hat.len();
        let cov = match cov {
            Ok(c) => c,
            Err(e) => {
                warnings.push(format!("covariance unavailable: {e}"));
                DMatrix::from_element(d, d, f64::NAN)
            }
        };
        let std_errors =
            (0..d).map(|j| if cov[(j, j)].is_nan() { f64::NAN } else { cov[(j, j)].max(0.0).sqrt() }).collect();
        Self {
            estimator_kind: kind,
            param_names,
            beta_hat,
            cov: (0..d).map(|i| (0..d).map(|j| cov[(i, j)]).collect()).collect(),
            std_errors,
            tau,
            bandwidth_used,
            criterion,
            solver,
            warnings,
        }
    }

    pub fn cov_matrix(&self) -> DMatrix<f64> {
        let d = self.beta_hat.len();
        DMatrix::from_fn(d, d, |i, j| self.cov[i][j])
    }

    pub fn converged(&self) -> bool {
        self.solver.converged
    }
}

/// Tuning shared by all smoothed estimators.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorConfig {
    pub tau: f64,
    /// Smoothing bandwidth `h`.
    pub bandwidth: f64,
    /// Long-run variance used for standard errors and for the two-step
    /// weighting matrix.
    pub covariance: CovarianceSpec,
    /// Moment-norm tolerance; defaults to `1e-8 · d_Z`.
    pub moment_tol: Option<f64>,
    pub newton: NewtonOptions,
    pub anneal: AnnealSchedule,
    pub polish: PolishOptions,
    pub seed: u64,
    /// Starting value overriding the model's default.
    pub start: Option<Vec<f64>>,
    /// Bandwidth at which the Jacobian `Ĝ` for standard errors is evaluated;
    /// defaults to `bandwidth`.
    pub cov_bandwidth: Option<f64>,
    /// Run a final annealing pass on the unsmoothed criterion (GMM only).
    pub unsmoothed_final: bool,
    /// Bandwidth continuation: highest power of two tried above `bandwidth`.
    pub max_continuation_doublings: u32,
}

impl EstimatorConfig {
    pub fn new(tau: f64, bandwidth: f64) -> Self {
        Self {
            tau,
            bandwidth,
            covariance: CovarianceSpec::iid(),
            moment_tol: None,
            newton: NewtonOptions::default(),
            anneal: AnnealSchedule::default(),
            polish: PolishOptions::default(),
            seed: 0,
            start: None,
            cov_bandwidth: None,
            unsmoothed_final: false,
            max_continuation_doublings: 40,
        }
    }

    pub fn with_covariance(mut self, spec: CovarianceSpec) -> Self {
        self.covariance = spec;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_start(mut self, start: Vec<f64>) -> Self {
        self.start = Some(start);
        self
    }

    fn tol(&self, d_z: usize) -> f64 {
        self.moment_tol.unwrap_or(1e-8 * d_z as f64)
    }
}

/// GMM weighting choices.
#[derive(Debug, Clone, PartialEq)]
pub enum Weighting {
    Identity,
    /// `Ŵ = Ω̄(β̄)⁻¹` at the preliminary estimate `anchor`.
    TwoStep {
        anchor: Vec<f64>,
    },
    Custom(DMatrix<f64>),
}

fn start_for(data: &Dataset, model: &dyn ResidualModel, cfg: &EstimatorConfig) -> Result<Vec<f64>> {
    let start = cfg.start.clone().unwrap_or_else(|| model.start_value(data));
    if start.len() != model.dim_beta() {
        return Err(Error::DimensionMismatch {
            context: "starting value",
            expected: model.dim_beta(),
            got: start.len(),
        });
    }
    let mut s = start;
    model.parameter_box().project(&mut s);
    Ok(s)
}

fn newton_at(ctx: &MomentContext<'_>, h: f64, x0: &[f64], opts: &NewtonOptions) -> Result<(Vec<f64>, SolverReport)> {
    let c = ctx.at_bandwidth(h);
    newton_root(|b| c.smoothed_moments(b), |b| c.moment_jacobian(b), x0, ctx.model.parameter_box(), opts)
}

/// Solves `M̂_n(β) = 0` at `ctx.h`, falling back to bandwidth continuation.
///
/// If Newton fails at the target bandwidth, the bandwidth is doubled until
/// Newton converges from `start`, then brought back down to the target with
/// warm starts, halving the reduction factor whenever a stage fails.
fn solve_mm(ctx: &MomentContext<'_>, start: &[f64], cfg: &EstimatorConfig) -> Result<(Vec<f64>, SolverReport)> {
    let opts = NewtonOptions { tol: cfg.tol(ctx.d_z()), ..cfg.newton };
    let target = ctx.h;
    let (x, mut report) = newton_at(ctx, target, start, &opts)?;
    if report.converged {
        return Ok((x, report));
    }
    let mut iterations = report.iterations;
    let mut evaluations = report.evaluations;

    let mut anchor = None;
    for k in 3..=cfg.max_continuation_doublings.max(3) {
        let h = target * 2f64.powi(k as i32);
        let (x, r) = newton_at(ctx, h, start, &opts)?;
        iterations += r.iterations;
        evaluations += r.evaluations;
        if r.converged {
            anchor = Some((h, x));
            break;
        }
    }
    let Some((mut h_ok, mut x_ok)) = anchor else {
        log::debug!("MM: no bandwidth up to h·2^{} gave a root; falling back", cfg.max_continuation_doublings);
        return min_norm_fallback(ctx, start, start, cfg, iterations, evaluations);
    };
    log::debug!("MM continuation anchored at h = {h_ok:e}");

    let mut factor = 2.0f64;
    let mut stages = 0;
    let mut escapes = 0u64;
    while h_ok > target {
        stages += 1;
        let stalled = stages > 400
            || (factor < 1.05 && {
                // The solution path folds back: follow it around the fold,
                // then try other branches nearby.
                let next = (h_ok / 2.0).max(target);
                escapes += 1;
                let tracked = track_path(ctx, &x_ok, h_ok, next, &opts).map(|(x, r)| (x, r, 0));
                match tracked.or_else(|| escape(ctx, next, &x_ok, start, &opts, cfg.seed ^ escapes)) {
                    Some((x, r, evals)) => {
                        evaluations += evals;
                        h_ok = next;
                        x_ok = x;
                        report = r;
                        factor = 2.0;
                        false
                    }
                    None => true,
                }
            });
        if stalled {
            log::debug!("MM continuation stalled at h = {h_ok:e}; falling back");
            return min_norm_fallback(ctx, &x_ok, start, cfg, iterations, evaluations);
        }
        if factor == 2.0 && h_ok <= target {
            break;
        }
        let next = (h_ok / factor).max(target);
        let (x, r) = newton_at(ctx, next, &x_ok, &opts)?;
        iterations += r.iterations;
        evaluations += r.evaluations;
        if r.converged {
            h_ok = next;
            x_ok = x;
            report = r;
            factor = (factor * factor).min(2.0);
        } else {
            factor = factor.sqrt();
        }
    }
    report.iterations = iterations;
    report.evaluations = evaluations;
    Ok((x_ok, report))
}

/// Follows the curve `M̂_n(β; e^s) = 0` in `(β, s = ln h)` by
/// pseudo-arclength continuation from a root at `h0` until `h` drops to
/// `h_target`. Unlike plain continuation in `h`, this passes through folds
/// where the curve turns back towards larger bandwidths.
fn track_path(
    ctx: &MomentContext<'_>,
    x0: &[f64],
    h0: f64,
    h_target: f64,
    opts: &NewtonOptions,
) -> Option<(Vec<f64>, SolverReport)> {
    const MAX_STEPS: usize = 4000;
    let d = x0.len();
    let s_target = h_target.ln();
    let s_ceiling = h0.ln() + 12.0;
    let bounds = ctx.model.parameter_box();
    // Tangent from the bordered system [J  F_s; tᵀ] v = e_{d+1}.
    let tangent = |z: &[f64], prev: &DVector<f64>| -> Option<DVector<f64>> {
        let c = ctx.at_bandwidth(z[d].exp());
        let jac = c.moment_jacobian(&z[..d]).ok()?;
        let fs = c.log_bandwidth_derivative(&z[..d]).ok()?;
        let mut a = DMatrix::zeros(d + 1, d + 1);
        a.view_mut((0, 0), (d, d)).copy_from(&jac);
        a.view_mut((0, d), (d, 1)).copy_from(&fs);
        a.view_mut((d, 0), (1, d + 1)).copy_from(&prev.transpose());
        let mut rhs = DVector::zeros(d + 1);
        rhs[d] = 1.0;
        let v = a.lu().solve(&rhs)?;
        let norm = v.norm();
        (norm.is_finite() && norm > 0.0).then(|| v / norm)
    };
    let mut z: Vec<f64> = x0.iter().copied().chain([h0.ln()]).collect();
    let mut down = DVector::zeros(d + 1);
    down[d] = -1.0;
    let mut t = tangent(&z, &down)?;
    let mut ds = 0.25;
    let mut evals = 0;
    for _ in 0..MAX_STEPS {
        let pred: Vec<f64> = z.iter().zip(t.iter()).map(|(a, b)| a + ds * b).collect();
        // Corrector: Newton on [M̂; tᵀ(z − pred)] = 0.
        let mut w = pred.clone();
        let mut ok = false;
        for _ in 0..8 {
            let c = ctx.at_bandwidth(w[d].exp());
            let (Ok(ev), Ok(fs)) = (c.evaluate(&w[..d]), c.log_bandwidth_derivative(&w[..d])) else { break };
            evals += 1;
            let along: f64 = w.iter().zip(&pred).zip(t.iter()).map(|((a, p), ti)| (a - p) * ti).sum();
            if ev.moments.norm() <= opts.tol && along.abs() <= 1e-12 * (1.0 + ds) {
                ok = true;
                break;
            }
            let mut a = DMatrix::zeros(d + 1, d + 1);
            a.view_mut((0, 0), (d, d)).copy_from(&ev.jacobian);
            a.view_mut((0, d), (d, 1)).copy_from(&fs);
            a.view_mut((d, 0), (1, d + 1)).copy_from(&t.transpose());
            let mut rhs = DVector::zeros(d + 1);
            rhs.rows_mut(0, d).copy_from(&(-&ev.moments));
            rhs[d] = -along;
            let Some(step) = a.lu().solve(&rhs) else { break };
            if !step.iter().all(|v| v.is_finite()) {
                break;
            }
            for (wi, si) in w.iter_mut().zip(step.iter()) {
                *wi += si;
            }
        }
        let in_box = {
            let mut b = w[..d].to_vec();
            bounds.project(&mut b);
            b == w[..d]
        };
        if !ok || !in_box {
            ds *= 0.5;
            if ds < 1e-12 {
                return None;
            }
            continue;
        }
        let t_new = tangent(&w, &t)?;
        if w[d] <= s_target {
            // Crossed the target: interpolate and finish at fixed bandwidth.
            let frac = (z[d] - s_target) / (z[d] - w[d]);
            let guess: Vec<f64> = (0..d).map(|j| z[j] + frac * (w[j] - z[j])).collect();
            let (x, mut r) = newton_at(ctx, h_target, &guess, opts).ok()?;
            r.evaluations += evals;
            return r.converged.then_some((x, r));
        }
        if w[d] > s_ceiling {
            return None;
        }
        z = w;
        t = t_new;
        ds = (ds * 1.5).min(1.0);
    }
    None
}

/// When no root is reachable by continuation, minimise `‖M̂_n‖²` at the
/// target bandwidth by annealing from `x`, then look for an exact root near
/// the minimiser. Without one, the minimiser is returned with
/// [`SolverStatus::Inexact`].
fn min_norm_fallback(
    ctx: &MomentContext<'_>,
    x: &[f64],
    start: &[f64],
    cfg: &EstimatorConfig,
    iterations: usize,
    evaluations: usize,
) -> Result<(Vec<f64>, SolverReport)> {
    let opts = NewtonOptions { tol: cfg.tol(ctx.d_z()), ..cfg.newton };
    let objective = |b: &[f64]| ctx.smoothed_moments(b).map_or(f64::NAN, |m| m.norm_squared());
    let (best, sa) = simulated_annealing(objective, ctx.model.parameter_box(), x, &cfg.anneal, cfg.seed)?;
    let mut evaluations = evaluations + sa.evaluations;
    if let Some((root, mut r, evals)) = escape(ctx, ctx.h, &best, start, &opts, cfg.seed.wrapping_add(0x5eed)) {
        r.iterations += iterations;
        r.evaluations += evaluations + evals;
        return Ok((root, r));
    }
    let (polished, pr) = gauss_newton_polish(
        |b| ctx.evaluate(b).map(|e| (e.moments, e.jacobian)),
        &DMatrix::identity(ctx.d_z(), ctx.d_z()),
        &best,
        ctx.model.parameter_box(),
        &cfg.polish,
    )?;
    evaluations += pr.evaluations;
    let (beta, norm) =
        if pr.final_norm < sa.final_norm { (polished, pr.final_norm.sqrt()) } else { (best, sa.final_norm.sqrt()) };
    let status = if norm <= opts.tol { SolverStatus::Converged } else { SolverStatus::Inexact };
    Ok((beta, SolverReport::new(status, iterations + sa.iterations + pr.iterations, evaluations, norm)))
}

/// Multi-start Newton at bandwidth `h` around `x`: the original start, then
/// random perturbations of `x` at increasing scales.
fn escape(
    ctx: &MomentContext<'_>,
    h: f64,
    x: &[f64],
    start: &[f64],
    opts: &NewtonOptions,
    seed: u64,
) -> Option<(Vec<f64>, SolverReport, usize)> {
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
    let opts = NewtonOptions { max_iter: opts.max_iter.min(30), ..*opts };
    let mut evals = 0;
    let mut candidates = vec![start.to_vec()];
    candidates.extend(interpolation_starts(ctx, x, 10, 64));
    for scale in [1e-3, 1e-2, 1e-1, 1.0] {
        for _ in 0..8 {
            candidates.push(
                x.iter()
                    .map(|v| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        v + scale * v.abs().max(1.0) * z
                    })
                    .collect(),
            );
        }
    }
    for c in candidates {
        let Ok((xc, r)) = newton_at(ctx, h, &c, &opts) else { continue };
        evals += r.evaluations;
        if r.converged {
            return Some((xc, r, evals));
        }
    }
    None
}

/// Parameter values at which `d_β` of the observations closest to zero
/// residual at `x` have exactly zero residual. At small bandwidths a root of
/// the smoothed moments has `d_β` observations inside the smoothing window,
/// so these points seed Newton near such roots.
fn interpolation_starts(ctx: &MomentContext<'_>, x: &[f64], nearest: usize, max_sets: usize) -> Vec<Vec<f64>> {
    let Ok(res) = ctx.residuals(x) else { return Vec::new() };
    let d = x.len();
    let mut order: Vec<usize> = (0..res.len()).collect();
    order.sort_by(|&a, &b| res[a].abs().total_cmp(&res[b].abs()).then(a.cmp(&b)));
    order.truncate(nearest.max(d));
    let mut subsets = Vec::new();
    combinations(order.len(), d, &mut Vec::new(), &mut subsets);
    let mut scored: Vec<(f64, Vec<usize>)> = subsets
        .into_iter()
        .map(|s| {
            let idx: Vec<usize> = s.iter().map(|&k| order[k]).collect();
            (idx.iter().map(|&i| res[i].abs()).sum(), idx)
        })
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
    let (y, xb) = (ctx.data.y(), ctx.data.x());
    let bounds = ctx.model.parameter_box();
    let mut out = Vec::new();
    for (_, idx) in scored.into_iter().take(max_sets) {
        // Newton on Λ_S(β) = 0; one step for linear residuals.
        let mut b = x.to_vec();
        let mut grad = vec![0.0; d];
        let mut ok = false;
        for _ in 0..20 {
            let mut jac = DMatrix::zeros(d, d);
            let mut r = DVector::zeros(d);
            for (row, &i) in idx.iter().enumerate() {
                r[row] = ctx.model.evaluate(y.row(i), xb.row(i), &b);
                ctx.model.gradient(y.row(i), xb.row(i), &b, &mut grad);
                for (col, g) in grad.iter().enumerate() {
                    jac[(row, col)] = *g;
                }
            }
            if r.amax() <= 1e-13 * (1.0 + b.iter().fold(0.0f64, |m, v| m.max(v.abs()))) {
                ok = true;
                break;
            }
            let Some(step) = jac.lu().solve(&(-r)) else { break };
            for (bj, sj) in b.iter_mut().zip(step.iter()) {
                *bj += sj;
            }
            if !b.iter().all(|v| v.is_finite()) {
                break;
            }
        }
        if ok && bounds.contains(&b) {
            out.push(b);
        }
    }
    out
}

fn combinations(n: usize, k: usize, current: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    if current.len() == k {
        out.push(current.clone());
        return;
    }
    let from = current.last().map_or(0, |&l| l + 1);
    for i in from..n {
        if n - i < k - current.len() {
            break;
        }
        current.push(i);
        combinations(n, k, current, out);
        current.pop();
    }
}

/// Long-run variance `Σ̂` for standard errors of an MM-type estimate.
fn sigma_hat(ctx: &MomentContext<'_>, beta: &[f64], spec: &CovarianceSpec) -> Result<DMatrix<f64>> {
    match spec.mode {
        CovMode::Iid => covariance::sigma_iid_quantile(ctx.data, ctx.tau),
        CovMode::Hac => covariance::omega_hac(ctx, beta, spec),
    }
}

fn cov_jacobian(ctx: &MomentContext<'_>, beta: &[f64], cfg: &EstimatorConfig) -> Result<DMatrix<f64>> {
    ctx.at_bandwidth(cfg.cov_bandwidth.unwrap_or(ctx.h)).moment_jacobian(beta)
}

/// Smoothed MM estimator for exactly identified models: the root of
/// `M̂_n(β, τ)`.
pub fn estimate_mm(data: &Dataset, model: &dyn ResidualModel, cfg: &EstimatorConfig) -> Result<EstimateResult> {
    estimate_mm_as(data, model, cfg, EstimatorKind::Mm)
}

fn estimate_mm_as(
    data: &Dataset,
    model: &dyn ResidualModel,
    cfg: &EstimatorConfig,
    kind: EstimatorKind,
) -> Result<EstimateResult> {
    if data.d_z() != model.dim_beta() {
        return Err(Error::Identification(format!(
            "MM needs exact identification, got {} instruments for {} parameters",
            data.d_z(),
            model.dim_beta()
        )));
    }
    let ctx = MomentContext::new(data, model, cfg.tau, cfg.bandwidth)?;
    let start = start_for(data, model, cfg)?;
    let (beta, report) = solve_mm(&ctx, &start, cfg)?;
    let norm = ctx.smoothed_moments(&beta)?.norm();
    let mut warnings = Vec::new();
    if !report.converged {
        warnings.push(format!("no exact root found; minimum-norm estimate with ‖M̂‖ = {norm:.3e}"));
    }
    let cov = cov_jacobian(&ctx, &beta, cfg).and_then(|g| {
        let s = sigma_hat(&ctx, &beta, &cfg.covariance)?;
        covariance::asym_cov_mm(&g, &s, data.n())
    });
    Ok(EstimateResult::assemble(
        kind,
        model.param_names(data),
        beta,
        cov,
        Some(cfg.tau),
        Some(ctx.h),
        norm,
        report,
        warnings,
    ))
}

/// One Newton–Raphson-type step from `beta_bar`:
/// `β̄ − (ḠᵀΩ̄⁻¹Ḡ)⁻¹ ḠᵀΩ̄⁻¹ M̂_n(β̄)`.
pub fn estimate_one_step(
    data: &Dataset,
    model: &dyn ResidualModel,
    cfg: &EstimatorConfig,
    beta_bar: &[f64],
) -> Result<EstimateResult> {
    let ctx = MomentContext::new(data, model, cfg.tau, cfg.bandwidth)?;
    if beta_bar.len() != model.dim_beta() {
        return Err(Error::DimensionMismatch {
            context: "one-step anchor",
            expected: model.dim_beta(),
            got: beta_bar.len(),
        });
    }
    if !model.parameter_box().contains(beta_bar) {
        return Err(Error::invalid("one-step anchor lies outside the parameter box"));
    }
    let eval = ctx.evaluate(beta_bar)?;
    let omega = covariance::omega(&ctx, beta_bar, &cfg.covariance)?;
    let w = linalg::spd_inverse_floored(&omega)?;
    let step = one_step_increment(&eval.jacobian, &w, &eval.moments)?;
    let mut beta: Vec<f64> = beta_bar.iter().zip(step.iter()).map(|(b, s)| b + s).collect();
    model.parameter_box().project(&mut beta);
    let m = ctx.smoothed_moments(&beta)?;
    let criterion = m.dot(&(&w * &m));
    let cov = cov_jacobian(&ctx, &beta, cfg).and_then(|g| covariance::asym_cov_mm(&g, &omega, data.n()));
    let report = SolverReport::new(SolverStatus::Converged, 1, 2, criterion);
    Ok(EstimateResult::assemble(
        EstimatorKind::OneStep,
        model.param_names(data),
        beta,
        cov,
        Some(cfg.tau),
        Some(ctx.h),
        criterion,
        report,
        Vec::new(),
    ))
}

fn one_step_increment(g: &DMatrix<f64>, w: &DMatrix<f64>, m: &DVector<f64>) -> Result<DVector<f64>> {
    let gtw = g.transpose() * w;
    let a = linalg::symmetrize(&(&gtw * g));
    if linalg::column_rank(&a) < a.ncols() {
        return Err(Error::Singular("ḠᵀΩ̄⁻¹Ḡ is singular".into()));
    }
    linalg::solve(&a, &(-(gtw * m)))
}

/// Proposal scale for annealing: twice the MM-form standard errors at `beta`
/// when available.
fn anneal_step(ctx: &MomentContext<'_>, beta: &[f64], cfg: &EstimatorConfig) -> Option<Vec<f64>> {
    if cfg.anneal.step.is_some() {
        return cfg.anneal.step.clone();
    }
    let g = cov_jacobian(ctx, beta, cfg).ok()?;
    let s = covariance::omega(ctx, beta, &cfg.covariance).ok()?;
    let cov = covariance::asym_cov_mm(&g, &s, ctx.data.n()).ok()?;
    let bounds = ctx.model.parameter_box();
    let step: Vec<f64> =
        (0..beta.len()).map(|j| (2.0 * cov[(j, j)].max(0.0).sqrt()).clamp(1e-8, 0.5 * bounds.width(j))).collect();
    step.iter().all(|v| v.is_finite()).then_some(step)
}

/// Minimises `M̂ᵀŴM̂` by simulated annealing from `start`, followed by a
/// Gauss–Newton polish.
pub fn estimate_gmm(
    data: &Dataset,
    model: &dyn ResidualModel,
    cfg: &EstimatorConfig,
    weighting: &Weighting,
    start: &[f64],
) -> Result<EstimateResult> {
    if data.d_z() < model.dim_beta() {
        return Err(Error::Identification(format!(
            "GMM needs at least as many instruments ({}) as parameters ({})",
            data.d_z(),
            model.dim_beta()
        )));
    }
    let ctx = MomentContext::new(data, model, cfg.tau, cfg.bandwidth)?;
    let d_z = data.d_z();
    let bounds = model.parameter_box();
    let (kind, w, omega_bar) = match weighting {
        Weighting::Identity => (EstimatorKind::GmmIdentity, DMatrix::identity(d_z, d_z), None),
        Weighting::Custom(w) => {
            if w.nrows() != d_z || w.ncols() != d_z {
                return Err(Error::DimensionMismatch { context: "weighting matrix", expected: d_z, got: w.nrows() });
            }
            if !(linalg::min_eigenvalue(&linalg::symmetrize(w)) > 0.0) {
                return Err(Error::Singular("weighting matrix is not positive definite".into()));
            }
            (EstimatorKind::GmmIdentity, linalg::symmetrize(w), None)
        }
        Weighting::TwoStep { anchor } => {
            let omega = covariance::omega(&ctx, anchor, &cfg.covariance)?;
            let w = linalg::spd_inverse_floored(&omega)?;
            (EstimatorKind::Gmm2Step, w, Some(omega))
        }
    };
    let mut warnings = Vec::new();
    let mut x0 = start.to_vec();
    bounds.project(&mut x0);

    let quad = |b: &[f64]| -> f64 {
        match ctx.smoothed_moments(b) {
            Ok(m) => m.dot(&(&w * &m)),
            Err(_) => f64::NAN,
        }
    };
    if !quad(&x0).is_finite() {
        return Err(Error::Solver("GMM criterion is not finite at the starting value".into()));
    }
    let mut schedule = cfg.anneal.clone();
    schedule.step = anneal_step(&ctx, &x0, cfg);
    let (sa_best, sa_report) = simulated_annealing(quad, bounds, &x0, &schedule, cfg.seed)?;
    let (mut beta, polish_report) =
        gauss_newton_polish(|b| ctx.evaluate(b).map(|e| (e.moments, e.jacobian)), &w, &sa_best, bounds, &cfg.polish)?;
    let mut q = quad(&beta);
    if !(q <= sa_report.final_norm) {
        beta = sa_best;
        q = sa_report.final_norm;
    }
    if cfg.unsmoothed_final {
        let raw = |b: &[f64]| -> f64 {
            match ctx.unsmoothed_moments(b) {
                Ok(m) => m.dot(&(&w * &m)),
                Err(_) => f64::NAN,
            }
        };
        let (b2, r2) = simulated_annealing(raw, bounds, &beta, &schedule, cfg.seed.wrapping_add(1))?;
        warnings.push(format!("unsmoothed final pass: criterion {:.6e}", r2.final_norm));
        beta = b2;
        q = quad(&beta);
    }
    let mut report = polish_report;
    report.iterations += sa_report.iterations;
    report.evaluations += sa_report.evaluations;
    report.final_norm = q;

    let cov = cov_jacobian(&ctx, &beta, cfg).and_then(|g| match &omega_bar {
        Some(omega) => covariance::asym_cov_mm(&g, omega, data.n()),
        None => {
            let s = covariance::omega(&ctx, &beta, &cfg.covariance)?;
            covariance::asym_cov_gmm(&g, &w, &s, data.n())
        }
    });
    Ok(EstimateResult::assemble(
        kind,
        model.param_names(data),
        beta,
        cov,
        Some(cfg.tau),
        Some(ctx.h),
        q,
        report,
        warnings,
    ))
}

/// Preliminary estimate for the GMM pipelines: MM on `anchor_data` when
/// given, MM on `data` when exactly identified, else the starting value.
pub fn pilot_estimate(
    data: &Dataset,
    model: &dyn ResidualModel,
    cfg: &EstimatorConfig,
    anchor_data: Option<&Dataset>,
) -> (Vec<f64>, Vec<String>) {
    let mut warnings = Vec::new();
    let mm_data = anchor_data.or((data.d_z() == model.dim_beta()).then_some(data));
    if let Some(d) = mm_data {
        match estimate_mm(d, model, cfg) {
            Ok(r) => return (r.beta_hat, warnings),
            Err(e) => warnings.push(format!("pilot MM failed ({e}); using the default starting value")),
        }
    }
    let start = cfg.start.clone().unwrap_or_else(|| model.start_value(data));
    (start, warnings)
}

/// Two-step GMM: pilot `β̄`, `Ŵ = Ω̄(β̄)⁻¹`, one-step from `β̄` as the annealing
/// start, then annealing and polish.
pub fn estimate_gmm_two_step(
    data: &Dataset,
    model: &dyn ResidualModel,
    cfg: &EstimatorConfig,
    anchor_data: Option<&Dataset>,
) -> Result<EstimateResult> {
    let (beta_bar, mut warnings) = pilot_estimate(data, model, cfg, anchor_data);
    let start = match estimate_one_step(data, model, cfg, &beta_bar) {
        Ok(r) => r.beta_hat,
        Err(e) => {
            warnings.push(format!("one-step from pilot failed ({e})"));
            beta_bar.clone()
        }
    };
    let mut r = estimate_gmm(data, model, cfg, &Weighting::TwoStep { anchor: beta_bar }, &start)?;
    if data.d_z() == model.dim_beta() {
        warnings.push("model is exactly identified; GMM coincides with MM".into());
    }
    warnings.append(&mut r.warnings);
    r.warnings = warnings;
    Ok(r)
}

/// Identity-weighted GMM started from the pilot estimate.
pub fn estimate_gmm_identity(
    data: &Dataset,
    model: &dyn ResidualModel,
    cfg: &EstimatorConfig,
    anchor_data: Option<&Dataset>,
) -> Result<EstimateResult> {
    let (beta_bar, mut warnings) = pilot_estimate(data, model, cfg, anchor_data);
    let mut r = estimate_gmm(data, model, cfg, &Weighting::Identity, &beta_bar)?;
    warnings.append(&mut r.warnings);
    r.warnings = warnings;
    Ok(r)
}

/// Replaces the instrument block by the exogenous block plus the least-squares
/// projection of endogenous column `endog_col` of `Y` on the full instrument
/// set. With one endogenous regressor the result is exactly identified.
pub fn projection_instruments(data: &Dataset, endog_col: usize) -> Result<Dataset> {
    if endog_col >= data.d_y() {
        return Err(Error::invalid(format!("endogenous column {endog_col} out of range")));
    }
    let has_constant = (0..data.d_z()).any(|k| {
        let c0 = data.z().get(0, k);
        c0 != 0.0 && (0..data.n()).all(|i| data.z().get(i, k) == c0)
    });
    if !has_constant {
        return Err(Error::invalid("projection instruments need a constant in the instrument set"));
    }
    let z = data.z().to_dmatrix();
    let target = DVector::from_vec(data.y().column(endog_col));
    let coef =
        linalg::least_squares(&z, &target).map_err(|_| Error::Singular("instrument block is collinear".into()))?;
    let fitted = &z * coef;
    let mut cols: Vec<Vec<f64>> = (0..data.d_x()).map(|j| data.x().column(j)).collect();
    cols.push(fitted.iter().cloned().collect());
    let mut names = data.x_names.clone();
    names.push(format!("proj_{}", data.y_names[endog_col]));
    data.with_instruments(Table::from_columns(&cols)?, (0..data.d_x()).collect(), names)
}

/// Quantile regression: smoothed MM with the regressors as their own
/// instruments.
pub fn estimate_qr(data: &Dataset, model: &LinearResidual, cfg: &EstimatorConfig) -> Result<EstimateResult> {
    model.check_dataset(data)?;
    let k = model.endog.len();
    let mut x_in_z = Vec::with_capacity(data.d_x());
    for j in 0..data.d_x() {
        match model.exog.iter().position(|&c| c == j) {
            Some(p) => x_in_z.push(k + p),
            None => {
                return Err(Error::invalid(format!(
                    "exogenous column '{}' is not a regressor; quantile regression needs Z = regressors",
                    data.x_names[j]
                )))
            }
        }
    }
    let r = model.regressors(data);
    let names = model.param_names(data);
    let qr_data = data.with_instruments(Table::from_dmatrix(&r), x_in_z, names)?;
    let mut cfg = cfg.clone();
    if cfg.start.is_none() {
        let y = model.outcome(data);
        cfg.start = linalg::least_squares(&r, &y).ok().map(|b| b.iter().cloned().collect());
    }
    estimate_mm_as(&qr_data, model, &cfg, EstimatorKind::Qr)
}

/// Two-stage least squares with iid (homoskedastic) or HAC standard errors.
pub fn estimate_2sls(data: &Dataset, model: &LinearResidual, cov: &CovarianceSpec) -> Result<EstimateResult> {
    model.check_dataset(data)?;
    let x = model.regressors(data);
    let y = model.outcome(data);
    let z = data.z().to_dmatrix();
    let b = tsls_coefficients(&y, &x, &z)?;
    let n = data.n();
    let resid = &y - &x * &b;
    let mut fitted = DMatrix::zeros(n, x.ncols());
    for j in 0..x.ncols() {
        let c = linalg::least_squares(&z, &x.column(j).into_owned())?;
        fitted.set_column(j, &(&z * c));
    }
    let covm = (|| -> Result<DMatrix<f64>> {
        match cov.mode {
            CovMode::Iid => {
                let s2 = resid.norm_squared() / n as f64;
                Ok(linalg::inverse(&linalg::symmetrize(&(fitted.transpose() * &fitted)))? * s2)
            }
            CovMode::Hac => {
                let d = x.ncols();
                let mut u = Vec::with_capacity(n * d);
                for i in 0..n {
                    u.extend((0..d).map(|j| fitted[(i, j)] * resid[i]));
                }
                let s = covariance::long_run_variance(&u, n, d, cov)?;
                let a_inv = linalg::inverse(&(fitted.transpose() * &x / n as f64))?;
                Ok(linalg::symmetrize(&(&a_inv * s * a_inv.transpose() / n as f64)))
            }
        }
    })();
    let beta: Vec<f64> = b.iter().cloned().collect();
    let criterion = resid.norm() / (n as f64).sqrt();
    Ok(EstimateResult::assemble(
        EstimatorKind::TwoSls,
        model.param_names(data),
        beta,
        covm,
        None,
        None,
        criterion,
        SolverReport::new(SolverStatus::Converged, 0, 1, criterion),
        Vec::new(),
    ))
}

/// Dispatches on `kind` for a linear model. `endog_col` selects the
/// endogenous regressor used to build projection instruments for the GMM
/// pipelines; pass `None` to run them on the dataset as given.
pub fn estimate_linear(
    kind: EstimatorKind,
    data: &Dataset,
    model: &LinearResidual,
    cfg: &EstimatorConfig,
    projection_endog: Option<usize>,
) -> Result<EstimateResult> {
    let anchor = match projection_endog {
        Some(c) if data.d_z() > model.dim_beta() => Some(projection_instruments(data, c)?),
        _ => None,
    };
    match kind {
        EstimatorKind::Qr => estimate_qr(data, model, cfg),
        EstimatorKind::TwoSls => estimate_2sls(data, model, &cfg.covariance),
        _ => estimate_smoothed(kind, data, model, cfg, anchor.as_ref()),
    }
}

/// Dispatches the smoothed estimators for any residual model. `anchor` is an
/// exactly identified instrument set for MM and the GMM pilots; MM runs on
/// `data` itself when it is `None`.
pub fn estimate_smoothed(
    kind: EstimatorKind,
    data: &Dataset,
    model: &dyn ResidualModel,
    cfg: &EstimatorConfig,
    anchor: Option<&Dataset>,
) -> Result<EstimateResult> {
    match kind {
        EstimatorKind::Mm => estimate_mm(anchor.unwrap_or(data), model, cfg),
        EstimatorKind::OneStep => {
            let (bar, warnings) = pilot_estimate(data, model, cfg, anchor);
            let mut r = estimate_one_step(data, model, cfg, &bar)?;
            r.warnings.extend(warnings);
            Ok(r)
        }
        EstimatorKind::Gmm2Step => estimate_gmm_two_step(data, model, cfg, anchor),
        EstimatorKind::GmmIdentity => estimate_gmm_identity(data, model, cfg, anchor),
        EstimatorKind::Qr | EstimatorKind::TwoSls => {
            Err(Error::invalid(format!("{kind} needs a linear residual model")))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::linear_residual_model;
    use crate::smoothing::smoothed_indicator;

    fn lcg(seed: u64) -> impl FnMut() -> f64 {
        let mut s = seed;
        move || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (s >> 11) as f64 / (1u64 << 53) as f64
        }
    }

    fn intercept_only(y: &[f64]) -> Dataset {
        let n = y.len();
        Dataset::new(
            Table::new(n, 1, y.to_vec()).unwrap(),
            Table::new(n, 1, vec![1.0; n]).unwrap(),
            Table::new(n, 1, vec![1.0; n]).unwrap(),
            vec![0],
        )
        .unwrap()
    }

    /// Location model `y = a + b x + e`, `x` exogenous, `Z = (1, x)`.
    fn location_data(n: usize, seed: u64) -> Dataset {
        let mut u = lcg(seed);
        let mut y = Vec::new();
        let mut x = Vec::new();
        for _ in 0..n {
            let xi = 4.0 * u();
            let e = (u() - 0.5) + (u() - 0.5);
            x.extend([1.0, xi]);
            y.push(1.0 + 2.0 * xi + e);
        }
        let xt = Table::new(n, 2, x).unwrap();
        Dataset::new(Table::new(n, 1, y).unwrap(), xt.clone(), xt, vec![0, 1]).unwrap()
    }

    /// Solves `(1/n) Σ Ĩ((b − y_i)/h) = τ` by bisection.
    fn scalar_quantile_oracle(y: &[f64], tau: f64, h: f64) -> f64 {
        let f =
            |b: f64| y.iter().map(|yi| smoothed_indicator((b - yi) / h).unwrap()).sum::<f64>() / y.len() as f64 - tau;
        let (mut lo, mut hi) = (-100.0, 100.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) < 0.0 {
                lo = mid
            } else {
                hi = mid
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn intercept_only_is_smoothed_quantile() {
        let mut u = lcg(3);
        let y: Vec<f64> = (0..101).map(|_| 10.0 * (u() - 0.5)).collect();
        let data = intercept_only(&y);
        let model = linear_residual_model(0, &[], &[0]).unwrap();
        for (tau, h) in [(0.5, 0.05), (0.25, 0.5), (0.8, 1e-3)] {
            let r = estimate_mm(&data, &model, &EstimatorConfig::new(tau, h)).unwrap();
            let oracle = scalar_quantile_oracle(&y, tau, h);
            assert!((r.beta_hat[0] - oracle).abs() < 1e-7, "{tau} {h}: {} vs {oracle}", r.beta_hat[0]);
            assert!(r.criterion <= 1e-8);
        }
        // Symmetric data, median within h.
        let sym: Vec<f64> = (0..51).map(|i| (i as f64 - 25.0) * 0.37).collect();
        let r = estimate_mm(&intercept_only(&sym), &model, &EstimatorConfig::new(0.5, 0.01)).unwrap();
        assert!(r.beta_hat[0].abs() <= 0.01);
    }

    /// Minimiser of the check-function loss over all exact-fit pairs.
    fn qr_oracle(data: &Dataset, tau: f64) -> (f64, f64) {
        let n = data.n();
        let (y, x) = (data.y().column(0), data.x().column(1));
        let loss = |a: f64, b: f64| -> f64 {
            (0..n)
                .map(|i| {
                    let e = y[i] - a - b * x[i];
                    e * (tau - if e < 0.0 { 1.0 } else { 0.0 })
                })
                .sum()
        };
        let mut best = (f64::INFINITY, 0.0, 0.0);
        for i in 0..n {
            for j in i + 1..n {
                if (x[i] - x[j]).abs() < 1e-12 {
                    continue;
                }
                let b = (y[i] - y[j]) / (x[i] - x[j]);
                let a = y[i] - b * x[i];
                let l = loss(a, b);
                if l < best.0 {
                    best = (l, a, b);
                }
            }
        }
        (best.1, best.2)
    }

    #[test]
    fn qr_matches_check_function_minimiser() {
        let data = location_data(60, 17);
        let model = linear_residual_model(0, &[], &[0, 1]).unwrap();
        for tau in [0.3, 0.5] {
            let r = estimate_qr(&data, &model, &EstimatorConfig::new(tau, 1e-4)).unwrap();
            let (a, b) = qr_oracle(&data, tau);
            assert!(r.criterion <= 2e-8);
            assert!((r.beta_hat[0] - a).abs() < 0.05 * a.abs().max(1.0), "{:?} vs {a}", r.beta_hat);
            assert!((r.beta_hat[1] - b).abs() < 0.05 * b.abs(), "{:?} vs {b}", r.beta_hat);
        }
    }

    #[test]
    fn one_step_hand_computed_and_fixed_point() {
        let y = [0.3, -1.2, 0.8, 2.0, -0.1, 0.45];
        let data = intercept_only(&y);
        let model = linear_residual_model(0, &[], &[0]).unwrap();
        let (tau, h) = (0.4, 0.9);
        let cfg = EstimatorConfig::new(tau, h);
        let bar = 0.2;
        let r = estimate_one_step(&data, &model, &cfg, &[bar]).unwrap();
        // Scalar oracle: M = mean(Ĩ((b−y)/h) − τ), G = mean(Ĩ'((b−y)/h))/h, Ω = mean((Ĩ−τ)²).
        let n = y.len() as f64;
        let g_i: Vec<f64> = y.iter().map(|yi| smoothed_indicator((bar - yi) / h).unwrap() - tau).collect();
        let m = g_i.iter().sum::<f64>() / n;
        let omega = g_i.iter().map(|v| v * v).sum::<f64>() / n;
        let g = y.iter().map(|yi| crate::smoothing::smoothed_indicator_deriv((bar - yi) / h).unwrap()).sum::<f64>()
            / (n * h);
        let expected = bar - (g / omega * m) / (g * g / omega);
        assert!((r.beta_hat[0] - expected).abs() < 1e-12);

        let root = estimate_mm(&data, &model, &cfg).unwrap();
        let again = estimate_one_step(&data, &model, &cfg, &root.beta_hat).unwrap();
        assert!((again.beta_hat[0] - root.beta_hat[0]).abs() < 1e-8);
    }

    #[test]
    fn gmm_collapses_to_mm_when_exactly_identified() {
        let data = location_data(200, 5);
        let model = linear_residual_model(0, &[], &[0, 1]).unwrap();
        let cfg = EstimatorConfig::new(0.5, 0.3).with_seed(4);
        let mm = estimate_mm(&data, &model, &cfg).unwrap();
        let id = estimate_gmm_identity(&data, &model, &cfg, None).unwrap();
        let two = estimate_gmm_two_step(&data, &model, &cfg, None).unwrap();
        for r in [&id, &two] {
            for j in 0..2 {
                assert!((r.beta_hat[j] - mm.beta_hat[j]).abs() < 1e-6, "{:?} vs {:?}", r.beta_hat, mm.beta_hat);
            }
        }
        assert!(two.warnings.iter().any(|w| w.contains("exactly identified")));
    }

    fn overidentified(n: usize, seed: u64) -> (Dataset, LinearResidual) {
        let mut u = lcg(seed);
        let mut normal = move || {
            let (a, b) = (u().max(1e-300), u());
            (-2.0 * a.ln()).sqrt() * (std::f64::consts::TAU * b).cos()
        };
        let mut y = Vec::new();
        let mut z = Vec::new();
        for _ in 0..n {
            let (z1, z2, v) = (normal(), normal(), normal());
            let e = 0.6 * v + 0.8 * normal();
            let d = 0.8 * z1 + 0.6 * z2 + v;
            y.extend([1.0 + 0.5 * d + e, d]);
            z.extend([1.0, z1, z2]);
        }
        let data = Dataset::new(
            Table::new(n, 2, y).unwrap(),
            Table::new(n, 1, vec![1.0; n]).unwrap(),
            Table::new(n, 3, z).unwrap(),
            vec![0],
        )
        .unwrap();
        (data, linear_residual_model(0, &[1], &[0]).unwrap())
    }

    #[test]
    fn gmm_weight_scale_invariance() {
        let (data, model) = overidentified(300, 8);
        let cfg = EstimatorConfig::new(0.5, 0.2).with_seed(12);
        let start = vec![0.4, 0.9];
        let w = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0, 0.5]));
        let a = estimate_gmm(&data, &model, &cfg, &Weighting::Custom(w.clone()), &start).unwrap();
        let b = estimate_gmm(&data, &model, &cfg, &Weighting::Custom(w * 7.5), &start).unwrap();
        for j in 0..2 {
            assert!((a.beta_hat[j] - b.beta_hat[j]).abs() < 1e-8);
        }
    }

    #[test]
    fn two_step_pipeline_from_projection() {
        let (data, model) = overidentified(400, 21);
        let proj = projection_instruments(&data, 1).unwrap();
        assert_eq!(proj.d_z(), model.dim_beta());
        let cfg = EstimatorConfig::new(0.5, 0.2).with_seed(1);
        let bar = estimate_mm(&proj, &model, &cfg).unwrap();
        let one = estimate_one_step(&data, &model, &cfg, &bar.beta_hat).unwrap();
        let two = estimate_gmm_two_step(&data, &model, &cfg, Some(&proj)).unwrap();
        assert!(two.criterion <= one.criterion + 1e-12);
        assert!((two.beta_hat[0] - 0.5).abs() < 0.3 && (two.beta_hat[1] - 1.0).abs() < 0.3);
        assert!(two.std_errors.iter().all(|s| s.is_finite() && *s > 0.0));
    }

    #[test]
    fn projection_is_idempotent_on_instrument_span() {
        let (data, _) = overidentified(50, 2);
        // Put z1 into Y as the "endogenous" column: its projection is itself.
        let z1 = data.z().column(1);
        let y = Table::from_columns(&[data.y().column(0), z1.clone()]).unwrap();
        let d = data.with_endogenous(y, vec!["y".into(), "z1".into()]).unwrap();
        let p = projection_instruments(&d, 1).unwrap();
        for (i, v) in z1.iter().enumerate() {
            assert!((p.z().get(i, 1) - v).abs() < 1e-10);
        }
    }

    #[test]
    fn tsls_reduces_to_ols_and_hand_example() {
        let data = location_data(40, 9);
        let model = linear_residual_model(0, &[], &[0, 1]).unwrap();
        let r = estimate_2sls(&data, &model, &CovarianceSpec::iid()).unwrap();
        let ols = linalg::least_squares(&model.regressors(&data), &model.outcome(&data)).unwrap();
        assert!((r.beta_hat[0] - ols[0]).abs() < 1e-10 && (r.beta_hat[1] - ols[1]).abs() < 1e-10);

        // y = (1, 2, 4), d = (0, 1, 3), z = (0, 1, 2) with a constant:
        // exactly identified, b = cov(z,y)/cov(z,d) = 1.5 / 1.5 = 1 and a = ȳ − b d̄ = 7/3 − 4/3 = 1.
        let d3 = Dataset::new(
            Table::new(3, 2, vec![1.0, 0.0, 2.0, 1.0, 4.0, 3.0]).unwrap(),
            Table::new(3, 1, vec![1.0; 3]).unwrap(),
            Table::new(3, 2, vec![1.0, 0.0, 1.0, 1.0, 1.0, 2.0]).unwrap(),
            vec![0],
        )
        .unwrap();
        let m3 = linear_residual_model(0, &[1], &[0]).unwrap();
        let r3 = estimate_2sls(&d3, &m3, &CovarianceSpec::iid()).unwrap();
        assert!((r3.beta_hat[0] - 1.0).abs() < 1e-12 && (r3.beta_hat[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mm_rejects_overidentification() {
        let (data, model) = overidentified(30, 1);
        assert!(matches!(estimate_mm(&data, &model, &EstimatorConfig::new(0.5, 0.1)), Err(Error::Identification(_))));
    }

    #[test]
    fn kind_round_trip() {
        for k in [
            EstimatorKind::Mm,
            EstimatorKind::OneStep,
            EstimatorKind::Gmm2Step,
            EstimatorKind::GmmIdentity,
            EstimatorKind::Qr,
            EstimatorKind::TwoSls,
        ] {
            assert_eq!(k.as_str().parse::<EstimatorKind>().unwrap(), k);
        }
        assert!("lasso".parse::<EstimatorKind>().is_err());
    }
}
