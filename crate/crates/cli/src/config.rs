//! Run configuration: a TOML file (path from `--config` or `SGMM_CONFIG`)
//! with one table per subcommand, overridden field by field by flags.
//!
//! ```toml
//! seed = 7
//! threads = 4
//!
//! [simulate]
//! dgp = [1]
//! n = [200, 500]
//! tau = "0.25,0.5"
//! reps = 1000
//! ```
//!
//! List values may be TOML arrays or the same comma strings the flags take.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::Args;
use serde::{Deserialize, Deserializer, Serialize};
use sgmm::bandwidth::BandwidthPolicy;
use sgmm::covariance::{CovarianceSpec, HacBandwidth, HacKernel};
use sgmm::estimators::EstimatorKind;
use sgmm::euler::{EulerConfig, EulerRoute};
use sgmm::model::ColumnRoles;
use sgmm::simulation::DgpKnobs;

use crate::error::{CliError, CliResult};

/// Comma-separated list, or a TOML array.
#[derive(Debug, Clone, PartialEq)]
pub struct List<T>(pub Vec<T>);

impl<T: FromStr> FromStr for List<T>
where
    T::Err: fmt::Display,
{
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        s.split(',')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(|t| t.parse::<T>().map_err(|e| format!("'{t}': {e}")))
            .collect::<Result<Vec<_>, _>>()
            .map(List)
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawList<T> {
    Many(Vec<T>),
    One(String),
}

impl<'de, T> Deserialize<'de> for List<T>
where
    T: Deserialize<'de> + FromStr,
    T::Err: fmt::Display,
{
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        match RawList::<T>::deserialize(d)? {
            RawList::Many(v) => Ok(List(v)),
            RawList::One(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Quantile levels: `0.25,0.5`, or a range `0.1..0.9` (step 0.1) or
/// `0.05..0.95:0.05`.
#[derive(Debug, Clone, PartialEq)]
pub struct TauList(pub Vec<f64>);

impl FromStr for TauList {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let num = |t: &str| t.trim().parse::<f64>().map_err(|_| format!("bad number '{t}' in τ list '{s}'"));
        let out = if let Some((lo, rest)) = s.split_once("..") {
            let (hi, step) = match rest.split_once(':') {
                Some((hi, step)) => (num(hi)?, num(step)?),
                None => (num(rest)?, 0.1),
            };
            let lo = num(lo)?;
            if !(step > 0.0) || hi < lo {
                return Err(format!("bad τ range '{s}'"));
            }
            let k = ((hi - lo) / step + 1e-9).floor() as usize;
            // Rounded to 12 decimals so 0.1..0.9 yields exactly 0.3, 0.7, …
            (0..=k).map(|i| ((lo + i as f64 * step) * 1e12).round() / 1e12).collect()
        } else {
            List::<f64>::from_str(s)?.0
        };
        Ok(TauList(out))
    }
}

impl<'de> Deserialize<'de> for TauList {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        match RawList::<f64>::deserialize(d)? {
            RawList::Many(v) => Ok(TauList(v)),
            RawList::One(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// `iid`, `qs`, `bartlett`, or `hac:<qs|bartlett>:<auto|S>`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CovArg(pub CovarianceSpec);

impl FromStr for CovArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let lower = s.trim().to_ascii_lowercase();
        let parts: Vec<&str> = lower.split(':').collect();
        let kernel = |k: &str| match k {
            "qs" | "quadratic_spectral" => Ok(HacKernel::QuadraticSpectral),
            "bartlett" | "nw" => Ok(HacKernel::Bartlett),
            _ => Err(format!("unknown HAC kernel '{k}' (expected qs or bartlett)")),
        };
        let bw = |b: &str| match b {
            "auto" => Ok(HacBandwidth::Auto),
            _ => match b.parse::<f64>() {
                Ok(v) if v > 0.0 => Ok(HacBandwidth::Fixed(v)),
                _ => Err(format!("bad HAC bandwidth '{b}' (expected auto or a positive number)")),
            },
        };
        let spec = match parts.as_slice() {
            ["iid"] => CovarianceSpec::iid(),
            [k] => CovarianceSpec::hac(kernel(k)?, HacBandwidth::Auto),
            ["hac", k] => CovarianceSpec::hac(kernel(k)?, HacBandwidth::Auto),
            ["hac", k, b] => CovarianceSpec::hac(kernel(k)?, bw(b)?),
            _ => return Err(format!("bad covariance spec '{s}'")),
        };
        Ok(CovArg(spec))
    }
}

impl<'de> Deserialize<'de> for CovArg {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// `y − Y₋₁ᵀβ₁ − Xᵀβ₂`.
    Linear,
    /// `β R C^{−γ} − 1` with the consumption ratio as outcome and the gross
    /// return as the single endogenous column. `X` is ignored.
    Euler,
}

fn parse_kind(s: &str) -> Result<EstimatorKind, String> {
    s.parse::<EstimatorKind>().map_err(|e| e.to_string())
}

fn parse_bandwidth(s: &str) -> Result<BandwidthPolicy, String> {
    s.parse::<BandwidthPolicy>().map_err(|e| e.to_string())
}

fn parse_route(s: &str) -> Result<EulerRoute, String> {
    s.parse::<EulerRoute>().map_err(|e| e.to_string())
}

/// Top-level keys of the config file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    #[serde(default)]
    pub estimate: EstimateArgs,
    #[serde(default)]
    pub simulate: SimulateArgs,
    #[serde(default)]
    pub euler: EulerArgs,
}

impl FileConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimateArgs {
    /// Input CSV with a header row.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Outcome column.
    #[arg(long)]
    pub outcome: Option<String>,
    /// Endogenous regressor columns.
    #[arg(long)]
    pub endogenous: Option<List<String>>,
    /// Exogenous regressor columns (also used as instruments).
    #[arg(long)]
    pub exogenous: Option<List<String>>,
    /// Excluded instrument columns.
    #[arg(long)]
    pub instruments: Option<List<String>>,
    /// Prepend a constant to the exogenous block.
    #[arg(long, value_name = "BOOL")]
    pub add_constant: Option<bool>,
    #[arg(long, value_enum)]
    pub model: Option<ModelKind>,
    #[arg(long)]
    pub tau: Option<f64>,
    /// mm, one_step, gmm2s, gmm_id, qr or 2sls.
    #[arg(long, value_parser = parse_kind)]
    pub estimator: Option<EstimatorKind>,
    /// fixed:<h>, rate:<c>,<e> or plugin.
    #[arg(long, value_parser = parse_bandwidth)]
    pub bandwidth: Option<BandwidthPolicy>,
    /// Bandwidth for the Jacobian in the standard errors. Defaults to the
    /// larger of the estimation bandwidth and the plug-in value.
    #[arg(long, value_parser = parse_bandwidth)]
    pub se_bandwidth: Option<BandwidthPolicy>,
    /// iid, qs, bartlett or hac:<kernel>:<auto|S>.
    #[arg(long)]
    pub covariance: Option<CovArg>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Defaults to the output extension, else json.
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateArgs {
    /// Designs 1–4.
    #[arg(long)]
    pub dgp: Option<List<u8>>,
    /// Sample sizes.
    #[arg(long)]
    pub n: Option<List<usize>>,
    #[arg(long)]
    pub tau: Option<TauList>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Empty means the per-design default set.
    #[arg(long)]
    pub estimators: Option<List<EstimatorKind>>,
    /// Per-design default when absent.
    #[arg(long, value_parser = parse_bandwidth)]
    pub bandwidth: Option<BandwidthPolicy>,
    #[arg(long)]
    pub covariance: Option<CovArg>,
    /// First-stage coefficients of design 4, five numbers.
    #[arg(long)]
    pub delta: Option<List<f64>>,
    /// Error AR coefficient of designs 2 and 3.
    #[arg(long)]
    pub rho_eps: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EulerArgs {
    /// Quarterly series CSV.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub taus: Option<TauList>,
    /// One or more of mm, one_step, gmm2s, gmm_id.
    #[arg(long)]
    pub estimator: Option<List<EstimatorKind>>,
    /// HAC kernel for standard errors and two-step weighting.
    #[arg(long)]
    pub hac: Option<CovArg>,
    #[arg(long, value_parser = parse_bandwidth)]
    pub bandwidth: Option<BandwidthPolicy>,
    /// loglinear or nonlinear.
    #[arg(long, value_parser = parse_route)]
    pub route: Option<EulerRoute>,
    #[arg(long)]
    pub lag: Option<usize>,
    /// Append the 2SLS baseline row (default true).
    #[arg(long, value_name = "BOOL")]
    pub include_2sls: Option<bool>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output path; the table is written next to it as `.csv` and `.json`.
    /// CSV on stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

macro_rules! merge_fields {
    ($cli:expr, $file:expr, $($f:ident),+) => {
        $( if $cli.$f.is_none() { $cli.$f = $file.$f; } )+
    };
}

#[derive(Debug, Clone, Serialize)]
pub struct EstimateRun {
    pub data: PathBuf,
    pub roles: ColumnRoles,
    pub model: ModelKind,
    pub tau: f64,
    pub estimator: EstimatorKind,
    pub bandwidth: BandwidthPolicy,
    /// `None`: the larger of the estimation and plug-in bandwidths.
    pub se_bandwidth: Option<BandwidthPolicy>,
    pub covariance: String,
    #[serde(skip)]
    pub covariance_spec: CovarianceSpec,
    pub seed: u64,
    #[serde(skip)]
    pub out: Option<PathBuf>,
    #[serde(skip)]
    pub format: Format,
}

fn require<T>(v: Option<T>, field: &str) -> CliResult<T> {
    v.ok_or_else(|| CliError::Config(format!("missing required setting '{field}'")))
}

fn check_tau(tau: f64, field: &str) -> CliResult<()> {
    if tau > 0.0 && tau < 1.0 {
        Ok(())
    } else {
        Err(CliError::Config(format!("{field}: τ must lie in (0, 1), got {tau}")))
    }
}

fn format_for(out: Option<&Path>, explicit: Option<Format>, default: Format) -> Format {
    explicit.unwrap_or_else(|| match out.and_then(|p| p.extension()).and_then(|e| e.to_str()) {
        Some("json") => Format::Json,
        Some("csv") => Format::Csv,
        _ => default,
    })
}

impl EstimateArgs {
    pub fn resolve(mut self, file: EstimateArgs, global_seed: Option<u64>) -> CliResult<EstimateRun> {
        merge_fields!(
            self,
            file,
            data,
            outcome,
            endogenous,
            exogenous,
            instruments,
            add_constant,
            model,
            tau,
            estimator,
            bandwidth,
            se_bandwidth,
            covariance,
            seed,
            out,
            format
        );
        let tau = require(self.tau, "estimate.tau")?;
        check_tau(tau, "estimate.tau")?;
        let model = self.model.unwrap_or(ModelKind::Linear);
        let roles = ColumnRoles {
            outcome: require(self.outcome, "estimate.outcome")?,
            endogenous: self.endogenous.map(|l| l.0).unwrap_or_default(),
            exogenous: self.exogenous.map(|l| l.0).unwrap_or_default(),
            instruments: self.instruments.map(|l| l.0).unwrap_or_default(),
            add_constant: self.add_constant.unwrap_or(true),
        };
        if model == ModelKind::Euler && roles.endogenous.len() != 1 {
            return Err(CliError::Config(
                "estimate: the euler model takes the gross return as the only endogenous column".into(),
            ));
        }
        let estimator = self.estimator.unwrap_or(EstimatorKind::Mm);
        if model == ModelKind::Euler && matches!(estimator, EstimatorKind::Qr | EstimatorKind::TwoSls) {
            return Err(CliError::Config(format!("estimate: {estimator} needs the linear model")));
        }
        let covariance_spec = self.covariance.map(|c| c.0).unwrap_or_default();
        Ok(EstimateRun {
            data: require(self.data, "estimate.data")?,
            roles,
            model,
            tau,
            estimator,
            bandwidth: require(self.bandwidth, "estimate.bandwidth")?,
            se_bandwidth: self.se_bandwidth,
            covariance: covariance_spec.describe(),
            covariance_spec,
            seed: self.seed.or(global_seed).unwrap_or(0),
            format: format_for(self.out.as_deref(), self.format, Format::Json),
            out: self.out,
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulateRun {
    pub dgp: Vec<u8>,
    pub n: Vec<usize>,
    pub tau: Vec<f64>,
    pub reps: usize,
    pub seed: u64,
    /// Empty means the per-design default set.
    pub estimators: Vec<EstimatorKind>,
    /// `None` means the per-design default.
    pub bandwidth: Option<BandwidthPolicy>,
    pub covariance: Option<String>,
    #[serde(skip)]
    pub covariance_spec: Option<CovarianceSpec>,
    pub knobs: DgpKnobs,
    #[serde(skip)]
    pub out: Option<PathBuf>,
    #[serde(skip)]
    pub format: Format,
}

impl SimulateArgs {
    pub fn resolve(mut self, file: SimulateArgs, global_seed: Option<u64>) -> CliResult<SimulateRun> {
        merge_fields!(
            self, file, dgp, n, tau, reps, seed, estimators, bandwidth, covariance, delta, rho_eps, out, format
        );
        let dgp = require(self.dgp, "simulate.dgp")?.0;
        let n = require(self.n, "simulate.n")?.0;
        let tau = require(self.tau, "simulate.tau")?.0;
        if dgp.is_empty() || n.is_empty() || tau.is_empty() {
            return Err(CliError::Config("simulate: dgp, n and tau lists must be non-empty".into()));
        }
        if let Some(d) = dgp.iter().find(|d| !(1..=4).contains(*d)) {
            return Err(CliError::Config(format!("simulate.dgp: unknown design {d}")));
        }
        for &t in &tau {
            check_tau(t, "simulate.tau")?;
        }
        let reps = require(self.reps, "simulate.reps")?;
        if reps == 0 {
            return Err(CliError::Config("simulate.reps must be at least 1".into()));
        }
        let mut knobs = DgpKnobs::default();
        if let Some(d) = self.delta {
            knobs.delta = d
                .0
                .try_into()
                .map_err(|v: Vec<f64>| CliError::Config(format!("simulate.delta needs 5 numbers, got {}", v.len())))?;
        }
        if let Some(r) = self.rho_eps {
            if !(r.abs() < 1.0) {
                return Err(CliError::Config(format!("simulate.rho_eps must lie in (−1, 1), got {r}")));
            }
            knobs.rho_eps = r;
        }
        let covariance_spec = self.covariance.map(|c| c.0);
        Ok(SimulateRun {
            dgp,
            n,
            tau,
            reps,
            seed: self.seed.or(global_seed).unwrap_or(0),
            estimators: self.estimators.map(|l| l.0).unwrap_or_default(),
            bandwidth: self.bandwidth,
            covariance: covariance_spec.map(|c| c.describe()),
            covariance_spec,
            knobs,
            format: format_for(self.out.as_deref(), self.format, Format::Csv),
            out: self.out,
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EulerRun {
    pub data: PathBuf,
    pub config: EulerConfig,
    pub covariance: String,
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

impl EulerArgs {
    pub fn resolve(mut self, file: EulerArgs, global_seed: Option<u64>) -> CliResult<EulerRun> {
        merge_fields!(self, file, data, taus, estimator, hac, bandwidth, route, lag, include_2sls, seed, out);
        let mut config = EulerConfig::default();
        if let Some(t) = self.taus {
            config.taus = t.0;
        }
        for &t in &config.taus {
            check_tau(t, "euler.taus")?;
        }
        if let Some(k) = self.estimator {
            config.estimators = k.0;
        }
        if let Some(k) = config.estimators.iter().find(|k| matches!(k, EstimatorKind::Qr | EstimatorKind::TwoSls)) {
            return Err(CliError::Config(format!(
                "euler.estimator: {k} is not a smoothed estimator (the 2SLS row is controlled by include_2sls)"
            )));
        }
        if let Some(h) = self.hac {
            config.covariance = h.0;
        }
        if let Some(b) = self.bandwidth {
            config.bandwidth = b;
        }
        if let Some(r) = self.route {
            config.route = r;
        }
        if let Some(l) = self.lag {
            config.lag = l;
        }
        if let Some(b) = self.include_2sls {
            config.include_2sls = b;
        }
        config.seed = self.seed.or(global_seed).unwrap_or(0);
        if config.taus.is_empty() && !config.include_2sls {
            return Err(CliError::Config("euler: nothing to estimate".into()));
        }
        Ok(EulerRun {
            data: require(self.data, "euler.data")?,
            covariance: config.covariance.describe(),
            config,
            out: self.out,
        })
    }
}
