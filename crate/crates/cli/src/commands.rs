use serde::Serialize;
use sgmm::bandwidth::{select_bandwidth, BandwidthPolicy};
use sgmm::estimators::{estimate_linear, estimate_smoothed, projection_instruments, EstimateResult, EstimatorConfig};
use sgmm::euler::{decile_table, EulerFit, EulerRow, MacroSeries};
use sgmm::model::{euler_residual_model, linear_residual_model, Dataset, ResidualModel};
use sgmm::simulation::{run_monte_carlo, McCell, McRow, MonteCarloConfig};

use crate::config::{EstimateRun, EulerRun, Format, ModelKind, SimulateRun};
use crate::error::{CliError, CliResult};
use crate::output::{csv_header, emit, json_document, opt_sig6, sig6, write_atomic};

fn csv_text(header: String, fill: impl FnOnce(&mut csv::Writer<Vec<u8>>) -> csv::Result<()>) -> CliResult<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    fill(&mut w).map_err(|e| CliError::Output(e.to_string()))?;
    let body = w.into_inner().map_err(|e| CliError::Output(e.to_string()))?;
    Ok(header + &String::from_utf8(body).map_err(|e| CliError::Output(e.to_string()))?)
}

#[derive(Serialize)]
struct EstimateBody<'a> {
    bandwidth: f64,
    se_bandwidth: f64,
    result: &'a EstimateResult,
}

struct Fitted {
    result: EstimateResult,
    h: f64,
    h_se: f64,
}

fn fit(run: &EstimateRun, data: &Dataset) -> CliResult<Fitted> {
    let euler = euler_residual_model();
    let linear = match run.model {
        ModelKind::Linear => {
            let endog: Vec<usize> = (1..data.d_y()).collect();
            let exog: Vec<usize> = (0..data.d_x()).collect();
            Some(linear_residual_model(0, &endog, &exog)?)
        }
        ModelKind::Euler => {
            euler.check_dataset(data)?;
            None
        }
    };
    let model: &dyn ResidualModel = match &linear {
        Some(m) => m,
        None => &euler,
    };
    let h = select_bandwidth(&run.bandwidth, data, model, run.tau);
    // The kernel Jacobian is erratic when only a few residuals fall inside a
    // tiny smoothing window.
    let h_se = match &run.se_bandwidth {
        Some(p) => select_bandwidth(p, data, model, run.tau),
        None => h.max(select_bandwidth(&BandwidthPolicy::plugin(), data, model, run.tau)),
    };
    let mut cfg = EstimatorConfig::new(run.tau, h).with_covariance(run.covariance_spec).with_seed(run.seed);
    cfg.cov_bandwidth = Some(h_se);
    let result = match &linear {
        Some(m) => {
            let projection = (data.d_y() == 2).then_some(1);
            estimate_linear(run.estimator, data, m, &cfg, projection)?
        }
        None => {
            let anchor = if data.d_z() > 2 { Some(projection_instruments(data, 1)?) } else { None };
            estimate_smoothed(run.estimator, data, &euler, &cfg, anchor.as_ref())?
        }
    };
    Ok(Fitted { result, h, h_se })
}

/// Fits one model. The report is written even when the solver did not
/// converge; the run then fails with the solver exit code.
pub fn estimate(run: &EstimateRun) -> CliResult<()> {
    let data = Dataset::from_csv(&run.data, &run.roles)?;
    let Fitted { result, h, h_se } = fit(run, &data)?;
    for w in &result.warnings {
        log::warn!("{w}");
    }
    let text = match run.format {
        Format::Json => {
            json_document("estimate", run, EstimateBody { bandwidth: h, se_bandwidth: h_se, result: &result })?
        }
        Format::Csv => {
            let mut header = csv_header("estimate", run)?;
            header.push_str(&format!(
                "# estimator: {}\n# bandwidth: {}\n# se_bandwidth: {}\n# converged: {}\n# status: {:?}\n# criterion: {}\n",
                result.estimator_kind,
                sig6(h),
                sig6(h_se),
                result.converged(),
                result.solver.status,
                sig6(result.criterion)
            ));
            for w in &result.warnings {
                header.push_str(&format!("# warning: {w}\n"));
            }
            csv_text(header, |w| {
                w.write_record(["parameter", "estimate", "std_error"])?;
                for ((name, b), se) in result.param_names.iter().zip(&result.beta_hat).zip(&result.std_errors) {
                    w.write_record([name.as_str(), &sig6(*b), &sig6(*se)])?;
                }
                Ok(())
            })?
        }
    };
    emit(run.out.as_deref(), &text)?;
    if !result.converged() {
        return Err(CliError::Solver(format!(
            "{} did not converge (status {:?}, final norm {:e})",
            result.estimator_kind, result.solver.status, result.solver.final_norm
        )));
    }
    Ok(())
}

#[derive(Serialize)]
struct SimulateBody<'a> {
    rows: &'a [McRow],
}

pub const SIMULATE_COLUMNS: [&str; 13] = [
    "dgp",
    "tau",
    "n",
    "estimator",
    "robust_rmse",
    "median_bias",
    "failures",
    "inexact",
    "iqr",
    "truth",
    "reps",
    "bandwidth",
    "max_moment_norm",
];

pub fn simulate(run: &SimulateRun) -> CliResult<()> {
    let mut cfg = MonteCarloConfig::new(McCell::grid(&run.dgp, &run.tau, &run.n), run.reps, run.seed);
    cfg.estimators = run.estimators.clone();
    cfg.bandwidth = run.bandwidth;
    cfg.covariance = run.covariance_spec;
    cfg.knobs = run.knobs.clone();
    let report = run_monte_carlo(&cfg)?;
    let text = match run.format {
        Format::Json => json_document("simulate", run, SimulateBody { rows: &report.rows })?,
        Format::Csv => csv_text(csv_header("simulate", run)?, |w| {
            w.write_record(SIMULATE_COLUMNS)?;
            for r in &report.rows {
                w.write_record([
                    r.dgp.to_string(),
                    sig6(r.tau),
                    r.n.to_string(),
                    r.estimator.to_string(),
                    sig6(r.robust_rmse),
                    sig6(r.median_bias),
                    r.failures.to_string(),
                    r.inexact.to_string(),
                    sig6(r.iqr),
                    sig6(r.truth),
                    r.reps.to_string(),
                    r.bandwidth.clone(),
                    opt_sig6(r.max_moment_norm),
                ])?;
            }
            Ok(())
        })?,
    };
    emit(run.out.as_deref(), &text)
}

pub const EULER_COLUMNS: [&str; 13] = [
    "tau",
    "estimator",
    "route",
    "discount",
    "gamma",
    "discount_se",
    "gamma_se",
    "eis",
    "bandwidth",
    "covariance",
    "converged",
    "misspecified",
    "error",
];

fn euler_record(r: &EulerRow) -> [String; 13] {
    [
        opt_sig6(r.tau),
        r.estimator.to_string(),
        r.route.to_string(),
        sig6(r.discount),
        sig6(r.gamma),
        sig6(r.discount_se),
        sig6(r.gamma_se),
        sig6(r.eis),
        opt_sig6(r.bandwidth),
        r.covariance.clone(),
        r.converged.to_string(),
        r.misspecified.to_string(),
        r.error.clone().unwrap_or_default(),
    ]
}

pub fn euler(run: &EulerRun) -> CliResult<()> {
    let series = MacroSeries::from_csv(&run.data)?;
    let fit: EulerFit = decile_table(&series, &run.config)?;
    for r in fit.rows.iter().filter(|r| r.error.is_some() || !r.converged) {
        log::warn!("τ {:?} {}: {}", r.tau, r.estimator, r.error.as_deref().unwrap_or("did not converge"));
    }
    let csv = csv_text(csv_header("euler", run)?, |w| {
        w.write_record(EULER_COLUMNS)?;
        for r in &fit.rows {
            w.write_record(euler_record(r))?;
        }
        Ok(())
    })?;
    match &run.out {
        Some(p) => {
            let json = json_document("euler", run, &fit)?;
            write_atomic(&p.with_extension("json"), &json)?;
            write_atomic(&p.with_extension("csv"), &csv)
        }
        None => emit(None, &csv),
    }
}
