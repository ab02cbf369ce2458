use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dgp::{generate_with, true_slope, DgpKnobs};
use super::metrics::robust_rmse;
use super::rng::{derived_seed, replication_rng};
use crate::bandwidth::BandwidthPolicy;
use crate::covariance::{CovarianceSpec, HacBandwidth, HacKernel};
use crate::estimators::{estimate_linear, EstimatorConfig, EstimatorKind};
use crate::model::linear_residual_model;
use crate::optimize::{AnnealSchedule, SolverStatus};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McCell {
    pub dgp: u8,
    pub tau: f64,
    pub n: usize,
}

impl McCell {
    /// All combinations, ordered by DGP, then τ, then n.
    pub fn grid(dgps: &[u8], taus: &[f64], ns: &[usize]) -> Vec<McCell> {
        let mut out = Vec::new();
        for &dgp in dgps {
            for &tau in taus {
                for &n in ns {
                    out.push(McCell { dgp, tau, n });
                }
            }
        }
        out
    }

    /// Replications of cells sharing `(dgp, n)` reuse the same samples.
    fn data_id(&self) -> u64 {
        self.dgp as u64 * 1_000_000_007 + self.n as u64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloConfig {
    pub cells: Vec<McCell>,
    /// Empty means the per-design default set.
    pub estimators: Vec<EstimatorKind>,
    pub reps: usize,
    pub seed: u64,
    /// `None` means the per-design default (`fixed:0.0001` for designs 1–3,
    /// `fixed:0.1` for design 4).
    pub bandwidth: Option<BandwidthPolicy>,
    /// `None` means iid for designs 1–3 and quadratic-spectral HAC with
    /// automatic lag choice for design 4.
    pub covariance: Option<CovarianceSpec>,
    pub knobs: DgpKnobs,
    pub anneal: AnnealSchedule,
}

impl MonteCarloConfig {
    pub fn new(cells: Vec<McCell>, reps: usize, seed: u64) -> Self {
        Self {
            cells,
            estimators: Vec::new(),
            reps,
            seed,
            bandwidth: None,
            covariance: None,
            knobs: DgpKnobs::default(),
            anneal: desk_anneal_schedule(),
        }
    }
}

/// Annealing schedule for simulation runs: 100 proposals per temperature
/// and 4000 evaluations in total (every design has two parameters). The
/// annealer starts from the one-step estimate and is followed by a polish.
pub fn desk_anneal_schedule() -> AnnealSchedule {
    AnnealSchedule { moves_per_temp: Some(100), max_evals: Some(4000), ..AnnealSchedule::default() }
}

pub fn default_estimators(dgp: u8) -> Vec<EstimatorKind> {
    if dgp == 4 {
        vec![EstimatorKind::Mm, EstimatorKind::Gmm2Step, EstimatorKind::GmmIdentity]
    } else {
        vec![EstimatorKind::Mm, EstimatorKind::Qr, EstimatorKind::TwoSls]
    }
}

pub fn default_bandwidth(dgp: u8) -> BandwidthPolicy {
    BandwidthPolicy::fixed(if dgp == 4 { 0.1 } else { 1e-4 })
}

pub fn default_covariance(dgp: u8) -> CovarianceSpec {
    if dgp == 4 {
        CovarianceSpec::hac(HacKernel::QuadraticSpectral, HacBandwidth::Auto)
    } else {
        CovarianceSpec::iid()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McRow {
    pub dgp: u8,
    pub tau: f64,
    pub n: usize,
    pub estimator: EstimatorKind,
    pub truth: f64,
    pub robust_rmse: f64,
    pub median_bias: f64,
    pub iqr: f64,
    pub reps: usize,
    pub failures: usize,
    /// Failures where the solver returned a minimum-norm point instead of
    /// an exact root. Included in `failures`.
    pub inexact: usize,
    pub bandwidth: String,
    /// Largest `‖M̂_n(β̂)‖` over exact-root MM-type estimates.
    pub max_moment_norm: Option<f64>,
    #[serde(skip)]
    pub estimates: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloReport {
    pub rows: Vec<McRow>,
}

impl MonteCarloReport {
    pub fn find(&self, dgp: u8, tau: f64, n: usize, est: EstimatorKind) -> Option<&McRow> {
        self.rows.iter().find(|r| r.dgp == dgp && r.tau == tau && r.n == n && r.estimator == est)
    }
}

struct Draw {
    slope: Option<f64>,
    moment_norm: Option<f64>,
    inexact: bool,
}

const FAILED: Draw = Draw { slope: None, moment_norm: None, inexact: false };

fn run_one(cell: &McCell, kinds: &[EstimatorKind], cfg: &MonteCarloConfig, rep: usize) -> Result<Vec<Draw>> {
    let mut rng = replication_rng(cfg.seed, cell.data_id(), rep as u64);
    let data = generate_with(cell.dgp, cell.n, &cfg.knobs, &mut rng)?;
    let model = linear_residual_model(0, &[1], &[0])?;
    let policy = cfg.bandwidth.unwrap_or_else(|| default_bandwidth(cell.dgp));
    let h = crate::bandwidth::select_bandwidth(&policy, &data, &model, cell.tau);
    let mut est_cfg = EstimatorConfig::new(cell.tau, h)
        .with_covariance(cfg.covariance.unwrap_or_else(|| default_covariance(cell.dgp)))
        .with_seed(derived_seed(cfg.seed, cell.data_id(), rep as u64, 1));
    est_cfg.anneal = cfg.anneal.clone();
    Ok(kinds
        .iter()
        .map(|&kind| match estimate_linear(kind, &data, &model, &est_cfg, Some(1)) {
            Ok(r) if r.converged() && r.beta_hat[0].is_finite() => Draw {
                slope: Some(r.beta_hat[0]),
                moment_norm: matches!(kind, EstimatorKind::Mm | EstimatorKind::Qr).then_some(r.criterion),
                inexact: false,
            },
            Ok(r) if r.solver.status == SolverStatus::Inexact => Draw { inexact: true, ..FAILED },
            Ok(r) => {
                log::debug!("dgp {} n {} rep {rep}: {kind} did not converge ({:?})", cell.dgp, cell.n, r.solver.status);
                FAILED
            }
            Err(e) => {
                log::debug!("dgp {} n {} rep {rep}: {kind} failed: {e}", cell.dgp, cell.n);
                FAILED
            }
        })
        .collect())
}

/// Runs every cell of `cfg`. Replications run in parallel on the current
/// rayon pool; results do not depend on the number of threads.
pub fn run_monte_carlo(cfg: &MonteCarloConfig) -> Result<MonteCarloReport> {
    if cfg.reps == 0 {
        return Err(Error::invalid("replication count must be at least 1"));
    }
    let mut rows = Vec::new();
    for cell in &cfg.cells {
        super::dgp::DgpSpec { id: cell.dgp, n: cell.n, tau: cell.tau, seed: cfg.seed }.validate()?;
        let kinds = if cfg.estimators.is_empty() { default_estimators(cell.dgp) } else { cfg.estimators.clone() };
        let draws: Vec<Vec<Draw>> =
            (0..cfg.reps).into_par_iter().map(|rep| run_one(cell, &kinds, cfg, rep)).collect::<Result<_>>()?;
        let policy = cfg.bandwidth.unwrap_or_else(|| default_bandwidth(cell.dgp));
        let truth = true_slope(cell.dgp, cell.tau);
        for (k, &kind) in kinds.iter().enumerate() {
            let estimates: Vec<f64> = draws.iter().map(|d| d[k].slope.unwrap_or(f64::NAN)).collect();
            let max_moment_norm = draws
                .iter()
                .filter_map(|d| d[k].moment_norm)
                .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v))));
            let (rmse, bias, iqr, used) = match robust_rmse(&estimates, truth) {
                Ok(s) => (s.robust_rmse, s.median_bias, s.iqr, s.used),
                Err(_) => (f64::NAN, f64::NAN, f64::NAN, 0),
            };
            log::info!(
                "dgp {} tau {} n {} {kind}: robust RMSE {rmse:.4}, median bias {bias:.4}, failures {}",
                cell.dgp,
                cell.tau,
                cell.n,
                cfg.reps - used
            );
            rows.push(McRow {
                dgp: cell.dgp,
                tau: cell.tau,
                n: cell.n,
                estimator: kind,
                truth,
                robust_rmse: rmse,
                median_bias: bias,
                iqr,
                reps: cfg.reps,
                failures: cfg.reps - used,
                inexact: draws.iter().filter(|d| d[k].inexact).count(),
                bandwidth: policy.to_string(),
                max_moment_norm,
                estimates,
            });
        }
    }
    Ok(MonteCarloReport { rows })
}
