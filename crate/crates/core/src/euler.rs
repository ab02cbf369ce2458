//! Quantile consumption Euler equation.
//!
//! The structural restriction is `Q_τ[β R_{t+1} (C_{t+1}/C_t)^{−γ} − 1 | Ω_t] = 0`.
//! Because quantiles are equivariant to monotone transforms, it is
//! equivalent (for `γ > 0`) to a linear IV quantile regression at level
//! `1 − τ` of `ln(C_{t+1}/C_t)` on a constant and `ln R_{t+1}`, with slope
//! `1/γ` and intercept `ln(β)/γ`. The log-linear route is the default; the
//! nonlinear route is kept as a cross-check.
//!
//! Series CSV layout (one row per quarter, `#` comments allowed):
//!
//! ```text
//! quarter,cons_growth,real_rate,nominal_rate,inflation,log_dp
//! 1950Q1,0.0051,0.0043,0.0120,0.0081,-3.41
//! ```
//!
//! On the row for quarter `t`, `cons_growth` is `ln(C_{t+1}/C_t)` and
//! `real_rate` is `ln(1 + r_{t+1})`; the three other columns are dated `t`.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bandwidth::{select_bandwidth, BandwidthPolicy};
use crate::covariance::{CovarianceSpec, HacBandwidth, HacKernel};
use crate::estimators::{
    estimate_linear, estimate_smoothed, projection_instruments, EstimateResult, EstimatorConfig, EstimatorKind,
};
use crate::model::{euler_residual_model, linear_residual_model, Dataset, ResidualModel, Table, CONSTANT_NAME};
use crate::optimize::AnnealSchedule;
use crate::{Error, Result};

pub const SERIES_COLUMNS: [&str; 6] = ["quarter", "cons_growth", "real_rate", "nominal_rate", "inflation", "log_dp"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Quarter {
    pub year: i32,
    pub q: u8,
}

impl Quarter {
    pub fn new(year: i32, q: u8) -> Result<Self> {
        if !(1..=4).contains(&q) {
            return Err(Error::InvalidData(format!("quarter must be 1..4, got {q}")));
        }
        Ok(Self { year, q })
    }

    /// Quarters since year 0.
    pub fn index(&self) -> i64 {
        self.year as i64 * 4 + (self.q as i64 - 1)
    }

    pub fn next(&self) -> Self {
        if self.q == 4 {
            Self { year: self.year + 1, q: 1 }
        } else {
            Self { year: self.year, q: self.q + 1 }
        }
    }
}

impl fmt::Display for Quarter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}Q{}", self.year, self.q)
    }
}

impl FromStr for Quarter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidData(format!("bad quarter '{s}' (expected e.g. 1947Q3)"));
        let (y, q) = s.trim().split_once(['Q', 'q']).ok_or_else(bad)?;
        Quarter::new(y.parse().map_err(|_| bad())?, q.parse().map_err(|_| bad())?)
    }
}

/// Quarterly macro series, aligned as described in the module docs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroSeries {
    pub quarters: Vec<Quarter>,
    pub cons_growth: Vec<f64>,
    pub real_rate: Vec<f64>,
    pub nominal_rate: Vec<f64>,
    pub inflation: Vec<f64>,
    pub log_dp: Vec<f64>,
}

impl MacroSeries {
    pub fn new(
        quarters: Vec<Quarter>,
        cons_growth: Vec<f64>,
        real_rate: Vec<f64>,
        nominal_rate: Vec<f64>,
        inflation: Vec<f64>,
        log_dp: Vec<f64>,
    ) -> Result<Self> {
        let s = Self { quarters, cons_growth, real_rate, nominal_rate, inflation, log_dp };
        s.validate()?;
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.quarters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.quarters.is_empty()
    }

    fn columns(&self) -> [&Vec<f64>; 5] {
        [&self.cons_growth, &self.real_rate, &self.nominal_rate, &self.inflation, &self.log_dp]
    }

    /// Equal lengths, consecutive quarters, finite values.
    pub fn validate(&self) -> Result<()> {
        let n = self.quarters.len();
        for (name, col) in SERIES_COLUMNS[1..].iter().zip(self.columns()) {
            if col.len() != n {
                return Err(Error::InvalidData(format!("column '{name}' has {} rows, expected {n}", col.len())));
            }
            if let Some(i) = col.iter().position(|v| !v.is_finite()) {
                return Err(Error::InvalidData(format!("column '{name}' is not finite at row {}", i + 1)));
            }
        }
        for w in self.quarters.windows(2) {
            if w[1].index() != w[0].index() + 1 {
                return Err(Error::InvalidData(format!("quarters must be consecutive: {} then {}", w[0], w[1])));
            }
        }
        Ok(())
    }

    pub fn from_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path)?;
        Self::from_reader(file)
    }

    pub fn from_reader(reader: impl Read) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(reader);
        let headers: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
        let pos = |name: &str| {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::InvalidData(format!("column '{name}' not found in header")))
        };
        let idx: Vec<usize> = SERIES_COLUMNS.iter().map(|c| pos(c)).collect::<Result<_>>()?;
        let mut quarters = Vec::new();
        let mut cols: [Vec<f64>; 5] = Default::default();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let field = |j: usize| rec.get(idx[j]).unwrap_or("");
            quarters.push(field(0).parse()?);
            for (k, col) in cols.iter_mut().enumerate() {
                let raw = field(k + 1);
                col.push(raw.parse().map_err(|_| {
                    Error::InvalidData(format!(
                        "row {}: column '{}' is not numeric: '{raw}'",
                        line + 1,
                        SERIES_COLUMNS[k + 1]
                    ))
                })?);
            }
        }
        let [cg, rr, nr, inf, dp] = cols;
        Self::new(quarters, cg, rr, nr, inf, dp)
    }

    /// Writes the CSV layout read by [`MacroSeries::from_reader`]. Values
    /// use the shortest representation that reads back exactly.
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "{}", SERIES_COLUMNS.join(","))?;
        for i in 0..self.len() {
            write!(w, "{}", self.quarters[i])?;
            for col in self.columns() {
                write!(w, ",{}", col[i])?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Estimation dataset with `Y = (cons_growth, real_rate)`, `X = (const)` and
/// `Z = (const, nominal_rate, inflation, cons_growth, log_dp)` lagged.
///
/// The row for quarter `t` uses `nominal_rate`, `inflation` and `log_dp`
/// dated `t − lag` and the consumption growth realised at `t − lag`, which
/// sits on row `t − lag − 1`. So `n_out = n_in − lag − 1`.
pub fn build_euler_dataset(series: &MacroSeries, lag: usize) -> Result<Dataset> {
    series.validate()?;
    let skip = lag + 1;
    let n_in = series.len();
    if n_in < skip + 6 {
        return Err(Error::InvalidData(format!(
            "series has {n_in} quarters; lag {lag} needs at least {} for estimation",
            skip + 6
        )));
    }
    let n = n_in - skip;
    let mut y = Vec::with_capacity(2 * n);
    let mut z = Vec::with_capacity(5 * n);
    for t in skip..n_in {
        y.extend([series.cons_growth[t], series.real_rate[t]]);
        z.extend([
            1.0,
            series.nominal_rate[t - lag],
            series.inflation[t - lag],
            series.cons_growth[t - lag - 1],
            series.log_dp[t - lag],
        ]);
    }
    let z_names = vec![
        CONSTANT_NAME.to_owned(),
        format!("nominal_rate_l{lag}"),
        format!("inflation_l{lag}"),
        format!("cons_growth_l{lag}"),
        format!("log_dp_l{lag}"),
    ];
    Dataset::new(Table::new(n, 2, y)?, Table::new(n, 1, vec![1.0; n])?, Table::new(n, 5, z)?, vec![0])?.with_names(
        vec!["cons_growth".into(), "real_rate".into()],
        vec![CONSTANT_NAME.into()],
        z_names,
    )
}

/// Same dataset with `Y` in levels: gross consumption ratio and gross return.
pub fn levels_dataset(data: &Dataset) -> Result<Dataset> {
    if data.d_y() != 2 {
        return Err(Error::DimensionMismatch {
            context: "Euler dataset outcome columns",
            expected: 2,
            got: data.d_y(),
        });
    }
    let y = data.y();
    let levels: Vec<f64> = (0..data.n()).flat_map(|i| [y.get(i, 0).exp(), y.get(i, 1).exp()]).collect();
    data.with_endogenous(Table::new(data.n(), 2, levels)?, vec!["cons_ratio".into(), "gross_return".into()])
}

/// `(β, γ)` from the log-linear slope `1/γ` and intercept `ln(β)/γ`.
pub fn loglinear_to_structural(slope: f64, intercept: f64) -> Result<(f64, f64)> {
    if slope == 0.0 || !slope.is_finite() || !intercept.is_finite() {
        return Err(Error::Identification(format!("log-linear slope {slope} does not determine γ")));
    }
    let gamma = 1.0 / slope;
    Ok(((intercept * gamma).exp(), gamma))
}

/// `(slope, intercept)` from `(β, γ)`.
pub fn structural_to_loglinear(discount: f64, gamma: f64) -> (f64, f64) {
    (1.0 / gamma, discount.ln() / gamma)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EulerRoute {
    LogLinear,
    Nonlinear,
}

impl fmt::Display for EulerRoute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EulerRoute::LogLinear => "loglinear",
            EulerRoute::Nonlinear => "nonlinear",
        })
    }
}

impl FromStr for EulerRoute {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "loglinear" => Ok(EulerRoute::LogLinear),
            "nonlinear" => Ok(EulerRoute::Nonlinear),
            _ => Err(Error::invalid(format!("unknown Euler route '{s}' (expected loglinear or nonlinear)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EulerEstimate {
    pub route: EulerRoute,
    pub discount: f64,
    pub gamma: f64,
    pub discount_se: f64,
    pub gamma_se: f64,
    /// `γ̂ ≤ 0`: the quantile flip behind the log-linear route does not hold,
    /// and the two routes are not comparable.
    pub misspecified: bool,
    pub result: EstimateResult,
}

impl EulerEstimate {
    pub fn eis(&self) -> f64 {
        1.0 / self.gamma
    }

    pub fn converged(&self) -> bool {
        self.result.converged()
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("τ must lie in (0, 1), got {tau}")))
    }
}

/// Linear IV quantile regression at `1 − τ` of `Y[0]` on `(const, Y[1])`,
/// mapped to `(β, γ)` with delta-method standard errors. MM and the GMM
/// pilots use the constant and the projection of `Y[1]` on `Z`.
pub fn estimate_euler_loglinear(
    data: &Dataset,
    tau: f64,
    kind: EstimatorKind,
    cfg: &EstimatorConfig,
) -> Result<EulerEstimate> {
    check_tau(tau)?;
    let model = linear_residual_model(0, &[1], &[0])?;
    let mut flipped = cfg.clone();
    flipped.tau = 1.0 - tau;
    let result = estimate_linear(kind, data, &model, &flipped, Some(1))?;
    let (slope, intercept) = (result.beta_hat[0], result.beta_hat[1]);
    let (discount, gamma) = loglinear_to_structural(slope, intercept)?;
    // Jacobian of (β, γ) with respect to (slope, intercept).
    let jac = DMatrix::from_row_slice(
        2,
        2,
        &[-discount * intercept / (slope * slope), discount / slope, -1.0 / (slope * slope), 0.0],
    );
    let cov = &jac * result.cov_matrix() * jac.transpose();
    Ok(EulerEstimate {
        route: EulerRoute::LogLinear,
        discount,
        gamma,
        discount_se: cov[(0, 0)].max(0.0).sqrt(),
        gamma_se: cov[(1, 1)].max(0.0).sqrt(),
        misspecified: slope <= 0.0,
        result,
    })
}

/// Smoothed MM/GMM on the nonlinear residual `β R C^{−γ} − 1` at `τ`. The
/// instruments match the log-linear route, including the projection of the
/// log return used by MM.
pub fn estimate_euler_nonlinear(
    data: &Dataset,
    tau: f64,
    kind: EstimatorKind,
    cfg: &EstimatorConfig,
) -> Result<EulerEstimate> {
    check_tau(tau)?;
    let levels = levels_dataset(data)?;
    let model = euler_residual_model();
    let anchor =
        if data.d_z() > model.dim_beta() { Some(levels_dataset(&projection_instruments(data, 1)?)?) } else { None };
    let mut c = cfg.clone();
    c.tau = tau;
    let result = estimate_smoothed(kind, &levels, &model, &c, anchor.as_ref())?;
    Ok(EulerEstimate {
        route: EulerRoute::Nonlinear,
        discount: result.beta_hat[0],
        gamma: result.beta_hat[1],
        discount_se: result.std_errors[0],
        gamma_se: result.std_errors[1],
        misspecified: result.beta_hat[1] <= 0.0,
        result,
    })
}

/// Both routes are comparable when both converged and the log-linear `γ̂`
/// is positive.
pub fn routes_comparable(loglinear: &EulerEstimate, nonlinear: &EulerEstimate) -> bool {
    loglinear.converged() && nonlinear.converged() && !loglinear.misspecified
}

/// Agreement to `digits` significant figures: `|a − b|` at most half a unit
/// in the last kept digit of `a`.
pub fn agree_to_digits(a: f64, b: f64, digits: i32) -> bool {
    if a == b {
        return true;
    }
    if !(a.is_finite() && b.is_finite()) || a == 0.0 {
        return false;
    }
    let unit = 10f64.powi(a.abs().log10().floor() as i32 + 1 - digits);
    (a - b).abs() <= 0.5 * unit
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteCheck {
    pub loglinear: EulerEstimate,
    /// `None` when the log-linear `γ̂ ≤ 0` (not comparable) or the nonlinear
    /// solve errored.
    pub nonlinear: Option<EulerEstimate>,
    pub nonlinear_bandwidth: f64,
    pub comparable: bool,
    /// Both `β̂` and `γ̂` agree to two significant figures.
    pub agree: bool,
}

/// Runs the log-linear route at bandwidth `cfg.bandwidth`, then the
/// nonlinear route at `γ̂ · h` started from the log-linear estimate. Near
/// the root the nonlinear residual is `−γ` times the log-linear one, so
/// this bandwidth gives the same smoothing window to first order.
pub fn cross_check_routes(data: &Dataset, tau: f64, kind: EstimatorKind, cfg: &EstimatorConfig) -> Result<RouteCheck> {
    let loglinear = estimate_euler_loglinear(data, tau, kind, cfg)?;
    let nonlinear_bandwidth = loglinear.gamma.abs() * cfg.bandwidth;
    if loglinear.misspecified || !loglinear.converged() {
        return Ok(RouteCheck { loglinear, nonlinear: None, nonlinear_bandwidth, comparable: false, agree: false });
    }
    let mut c = cfg.clone();
    c.bandwidth = nonlinear_bandwidth;
    c.cov_bandwidth = cfg.cov_bandwidth.map(|h| h * loglinear.gamma);
    let mut start = vec![loglinear.discount, loglinear.gamma];
    euler_residual_model().parameter_box().project(&mut start);
    c.start = Some(start);
    let nonlinear = estimate_euler_nonlinear(data, tau, kind, &c).ok();
    let comparable = nonlinear.as_ref().is_some_and(|n| routes_comparable(&loglinear, n) && !n.misspecified);
    let agree = comparable
        && nonlinear.as_ref().is_some_and(|n| {
            agree_to_digits(loglinear.discount, n.discount, 2) && agree_to_digits(loglinear.gamma, n.gamma, 2)
        });
    Ok(RouteCheck { loglinear, nonlinear, nonlinear_bandwidth, comparable, agree })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EulerConfig {
    pub taus: Vec<f64>,
    pub estimators: Vec<EstimatorKind>,
    pub lag: usize,
    pub bandwidth: BandwidthPolicy,
    pub covariance: CovarianceSpec,
    pub route: EulerRoute,
    /// Append the 2SLS row.
    pub include_2sls: bool,
    pub seed: u64,
    pub anneal: AnnealSchedule,
}

pub fn deciles() -> Vec<f64> {
    (1..=9).map(|k| k as f64 / 10.0).collect()
}

impl Default for EulerConfig {
    fn default() -> Self {
        Self {
            taus: deciles(),
            estimators: vec![EstimatorKind::Mm, EstimatorKind::Gmm2Step],
            lag: 2,
            bandwidth: BandwidthPolicy::plugin(),
            covariance: CovarianceSpec::hac(HacKernel::QuadraticSpectral, HacBandwidth::Auto),
            route: EulerRoute::LogLinear,
            include_2sls: true,
            seed: 0,
            anneal: AnnealSchedule::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EulerRow {
    /// `None` on the 2SLS row.
    pub tau: Option<f64>,
    pub estimator: EstimatorKind,
    pub route: EulerRoute,
    pub discount: f64,
    pub gamma: f64,
    pub discount_se: f64,
    pub gamma_se: f64,
    pub eis: f64,
    pub bandwidth: Option<f64>,
    pub covariance: String,
    pub converged: bool,
    pub misspecified: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EulerFit {
    pub n_obs: usize,
    pub lag: usize,
    pub rows: Vec<EulerRow>,
}

impl EulerFit {
    pub fn find(&self, tau: Option<f64>, kind: EstimatorKind) -> Option<&EulerRow> {
        self.rows.iter().find(|r| r.tau == tau && r.estimator == kind)
    }
}

fn euler_cell(data: &Dataset, tau: Option<f64>, kind: EstimatorKind, cfg: &EulerConfig, cell: u64) -> EulerRow {
    let route = if kind == EstimatorKind::TwoSls { EulerRoute::LogLinear } else { cfg.route };
    let covariance = cfg.covariance.describe();
    let mut row = EulerRow {
        tau,
        estimator: kind,
        route,
        discount: f64::NAN,
        gamma: f64::NAN,
        discount_se: f64::NAN,
        gamma_se: f64::NAN,
        eis: f64::NAN,
        bandwidth: None,
        covariance,
        converged: false,
        misspecified: false,
        error: None,
    };
    let level = tau.unwrap_or(0.5);
    let h = match route {
        EulerRoute::LogLinear => {
            let model = linear_residual_model(0, &[1], &[0]).expect("static model");
            select_bandwidth(&cfg.bandwidth, data, &model, 1.0 - level)
        }
        EulerRoute::Nonlinear => match levels_dataset(data) {
            Ok(levels) => select_bandwidth(&cfg.bandwidth, &levels, &euler_residual_model(), level),
            Err(e) => {
                row.error = Some(e.to_string());
                return row;
            }
        },
    };
    let mut est_cfg = EstimatorConfig::new(level, h)
        .with_covariance(cfg.covariance)
        .with_seed(crate::simulation::rng::derived_seed(cfg.seed, cell, 0, 2));
    est_cfg.anneal = cfg.anneal.clone();
    let fit = match route {
        EulerRoute::LogLinear => estimate_euler_loglinear(data, level, kind, &est_cfg),
        EulerRoute::Nonlinear => estimate_euler_nonlinear(data, level, kind, &est_cfg),
    };
    match fit {
        Ok(e) => {
            if kind != EstimatorKind::TwoSls {
                row.bandwidth = Some(h);
            }
            row.discount = e.discount;
            row.gamma = e.gamma;
            row.discount_se = e.discount_se;
            row.gamma_se = e.gamma_se;
            row.eis = e.eis();
            row.converged = e.converged();
            row.misspecified = e.misspecified;
        }
        Err(e) => row.error = Some(e.to_string()),
    }
    row
}

/// Estimates `(β_τ, γ_τ)` for every `τ` and estimator in `cfg`, plus the
/// 2SLS row. Cells run in parallel; row order is τ-major, then estimator,
/// regardless of scheduling. Failed cells are kept with `error` set.
pub fn decile_table(series: &MacroSeries, cfg: &EulerConfig) -> Result<EulerFit> {
    for &t in &cfg.taus {
        check_tau(t)?;
    }
    if cfg.estimators.is_empty() && !cfg.include_2sls {
        return Err(Error::invalid("no estimators requested"));
    }
    let data = build_euler_dataset(series, cfg.lag)?;
    let mut cells: Vec<(Option<f64>, EstimatorKind)> = cfg
        .taus
        .iter()
        .flat_map(|&t| cfg.estimators.iter().filter(|k| **k != EstimatorKind::TwoSls).map(move |&k| (Some(t), k)))
        .collect();
    if cfg.include_2sls {
        cells.push((None, EstimatorKind::TwoSls));
    }
    let rows =
        cells.par_iter().enumerate().map(|(i, &(tau, kind))| euler_cell(&data, tau, kind, cfg, i as u64)).collect();
    Ok(EulerFit { n_obs: data.n(), lag: cfg.lag, rows })
}

/// Synthetic series from a homogeneous quantile Euler model.
///
/// Instruments follow stationary AR(1) processes; the log real return is
/// driven by the instruments dated two quarters back plus noise `v`, and
/// `ln(C_{t+1}/C_t) = ln(β)/γ + ln(R_{t+1})/γ + e` with `e` normal,
/// independent of the instruments and correlated with `v` (so the return is
/// endogenous). The `1 − τ` quantile intercept is `ln(β)/γ + Q_{1−τ}(e)`, so
/// the implied `β_τ` drifts from `discount` by a factor `exp(γ Q(e))` that
/// is small for small `noise_sd`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticEuler {
    pub n: usize,
    pub discount: f64,
    pub gamma: f64,
    pub noise_sd: f64,
    pub seed: u64,
}

impl SyntheticEuler {
    pub fn new(n: usize, seed: u64) -> Self {
        Self { n, discount: 0.99, gamma: 5.0, noise_sd: 0.002, seed }
    }

    pub fn generate(&self) -> Result<MacroSeries> {
        if self.n < 10 {
            return Err(Error::invalid("synthetic Euler series needs at least 10 quarters"));
        }
        if !(self.gamma > 0.0 && self.discount > 0.0 && self.noise_sd >= 0.0) {
            return Err(Error::invalid("synthetic Euler model needs γ > 0, β > 0 and noise_sd ≥ 0"));
        }
        const BURN: usize = 100;
        let total = self.n + BURN;
        let mut rng = ChaCha20Rng::seed_from_u64(self.seed);
        let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
        let (mut nom, mut inf, mut dp) = (vec![0.012; total], vec![0.008; total], vec![-3.4; total]);
        let (mut rr, mut cg) = (vec![0.0; total], vec![0.0; total]);
        let (s, a) = structural_to_loglinear(self.discount, self.gamma);
        for t in 1..total {
            nom[t] = 0.012 + 0.9 * (nom[t - 1] - 0.012) + 0.002 * normal();
            inf[t] = 0.008 + 0.6 * (inf[t - 1] - 0.008) + 0.003 * normal();
            dp[t] = -3.4 + 0.95 * (dp[t - 1] + 3.4) + 0.05 * normal();
            let v = normal();
            let e = self.noise_sd * (0.5 * v + 0.75f64.sqrt() * normal());
            let l = t.saturating_sub(2);
            rr[t] = 0.004 + 0.8 * (nom[l] - 0.012) - 0.5 * (inf[l] - 0.008) + 0.02 * (dp[l] + 3.4) + 0.002 * v;
            cg[t] = a + s * rr[t] + e;
        }
        let mut q = Quarter::new(1950, 1)?;
        let quarters = (0..self.n)
            .map(|_| {
                let cur = q;
                q = q.next();
                cur
            })
            .collect();
        MacroSeries::new(
            quarters,
            cg[BURN..].to_vec(),
            rr[BURN..].to_vec(),
            nom[BURN..].to_vec(),
            inf[BURN..].to_vec(),
            dp[BURN..].to_vec(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_series() -> MacroSeries {
        SyntheticEuler::new(40, 3).generate().unwrap()
    }

    #[test]
    fn quarter_parse_and_order() {
        let q: Quarter = "1947Q3".parse().unwrap();
        assert_eq!(q, Quarter { year: 1947, q: 3 });
        assert_eq!(q.to_string(), "1947Q3");
        assert_eq!(Quarter::new(1947, 4).unwrap().next(), Quarter::new(1948, 1).unwrap());
        assert_eq!(q.next().index(), q.index() + 1);
        for bad in ["1947", "1947Q5", "Q3", "abcQ1"] {
            assert!(bad.parse::<Quarter>().is_err(), "{bad}");
        }
    }

    #[test]
    fn gaps_rejected() {
        let mut s = small_series();
        s.quarters[5] = s.quarters[6];
        assert!(s.validate().is_err());
        let mut s = small_series();
        s.real_rate.pop();
        assert!(s.validate().is_err());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let s = small_series();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let back = MacroSeries::from_reader(buf.as_slice()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn lag_alignment() {
        let s = small_series();
        for lag in [0, 1, 2, 4] {
            let d = build_euler_dataset(&s, lag).unwrap();
            assert_eq!(d.n(), s.len() - lag - 1);
            // first output row is quarter t = lag + 1
            let t = lag + 1;
            assert_eq!(d.y().row(0), &[s.cons_growth[t], s.real_rate[t]]);
            assert_eq!(d.z().row(0), &[1.0, s.nominal_rate[1], s.inflation[1], s.cons_growth[0], s.log_dp[1]]);
        }
        assert!(build_euler_dataset(&s, 40).is_err());
    }

    #[test]
    fn significant_figures() {
        assert!(agree_to_digits(0.99, 0.994, 2));
        assert!(!agree_to_digits(0.99, 0.996, 2));
        assert!(agree_to_digits(5.0, 5.04, 2));
        assert!(!agree_to_digits(5.0, 5.06, 2));
        assert!(agree_to_digits(-544.4, -540.0, 2));
        assert!(!agree_to_digits(0.0, 1e-9, 2));
    }

    #[test]
    fn mapping_round_trip() {
        for (b, g) in [(0.99, 5.0), (1.02, 0.3), (0.5, -40.0)] {
            let (s, a) = structural_to_loglinear(b, g);
            let (b2, g2) = loglinear_to_structural(s, a).unwrap();
            assert!((b2 - b).abs() <= 1e-14 * b.abs());
            assert!((g2 - g).abs() <= 1e-14 * g.abs());
        }
        assert!(loglinear_to_structural(0.0, 0.1).is_err());
    }

    /// Data exactly on the log-linear line with a small symmetric jitter
    /// around it, so every τ-quantile restriction holds at the truth.
    fn exact_line(n: usize) -> Dataset {
        let (s, a) = structural_to_loglinear(0.99, 5.0);
        let series = SyntheticEuler { noise_sd: 0.0, ..SyntheticEuler::new(n, 11) }.generate().unwrap();
        let d = build_euler_dataset(&series, 2).unwrap();
        let y: Vec<f64> = (0..d.n()).flat_map(|i| [a + s * d.y().get(i, 1), d.y().get(i, 1)]).collect();
        d.with_endogenous(Table::new(d.n(), 2, y).unwrap(), vec!["cons_growth".into(), "real_rate".into()]).unwrap()
    }

    #[test]
    fn noiseless_line_recovered_by_both_routes() {
        let d = exact_line(120);
        let cfg = EstimatorConfig::new(0.5, 1e-6);
        let lin = estimate_euler_loglinear(&d, 0.5, EstimatorKind::TwoSls, &cfg).unwrap();
        assert!((lin.discount - 0.99).abs() < 1e-6 && (lin.gamma - 5.0).abs() < 1e-6, "{lin:?}");
        let mm = estimate_euler_loglinear(&d, 0.5, EstimatorKind::Mm, &cfg).unwrap();
        assert!((mm.discount - 0.99).abs() < 1e-6 && (mm.gamma - 5.0).abs() < 1e-6, "{mm:?}");
        let nl = estimate_euler_nonlinear(&d, 0.5, EstimatorKind::Mm, &EstimatorConfig::new(0.5, 5e-6)).unwrap();
        assert!((nl.discount - 0.99).abs() < 1e-6 && (nl.gamma - 5.0).abs() < 1e-4, "{nl:?}");
    }

    #[test]
    fn quantile_flip_matters_on_skewed_data() {
        let series = SyntheticEuler { noise_sd: 0.004, ..SyntheticEuler::new(400, 5) }.generate().unwrap();
        let mut d = build_euler_dataset(&series, 2).unwrap();
        // skew the error: square the positive part
        let y: Vec<f64> = (0..d.n())
            .flat_map(|i| {
                let (c, r) = (d.y().get(i, 0), d.y().get(i, 1));
                let (s, a) = structural_to_loglinear(0.99, 5.0);
                let e = c - a - s * r;
                [a + s * r + if e > 0.0 { 300.0 * e * e } else { e }, r]
            })
            .collect();
        d = d.with_endogenous(Table::new(d.n(), 2, y).unwrap(), vec!["c".into(), "r".into()]).unwrap();
        let cfg = EstimatorConfig::new(0.2, 1e-4);
        let right = estimate_euler_loglinear(&d, 0.2, EstimatorKind::Mm, &cfg).unwrap();
        let model = linear_residual_model(0, &[1], &[0]).unwrap();
        let unflipped = estimate_linear(EstimatorKind::Mm, &d, &model, &cfg, Some(1)).unwrap();
        let (b_wrong, _) = loglinear_to_structural(unflipped.beta_hat[0], unflipped.beta_hat[1]).unwrap();
        assert!((right.discount - b_wrong).abs() > 1e-3, "{} vs {b_wrong}", right.discount);
    }

    #[test]
    fn negative_slope_flagged() {
        // regress on minus the return: slope −1/γ
        let d = exact_line(80);
        let y: Vec<f64> = (0..d.n()).flat_map(|i| [d.y().get(i, 0), -d.y().get(i, 1)]).collect();
        let d = d.with_endogenous(Table::new(d.n(), 2, y).unwrap(), vec!["c".into(), "r".into()]).unwrap();
        let e = estimate_euler_loglinear(&d, 0.5, EstimatorKind::TwoSls, &EstimatorConfig::new(0.5, 1e-4)).unwrap();
        assert!(e.misspecified && e.gamma < 0.0);
    }

    #[test]
    fn table_shape_and_failures_kept() {
        let s = SyntheticEuler::new(300, 9).generate().unwrap();
        let cfg = EulerConfig { estimators: vec![EstimatorKind::Mm], ..EulerConfig::default() };
        let fit = decile_table(&s, &cfg).unwrap();
        assert_eq!(fit.rows.len(), 10);
        assert_eq!(fit.rows.last().unwrap().estimator, EstimatorKind::TwoSls);
        assert!(fit.rows.last().unwrap().tau.is_none());
        for (r, t) in fit.rows.iter().zip(deciles()) {
            assert_eq!(r.tau, Some(t));
            assert!(r.bandwidth.unwrap() > 0.0);
        }
        let bad = EulerConfig { taus: vec![1.0], ..EulerConfig::default() };
        assert!(decile_table(&s, &bad).is_err());
    }
}
