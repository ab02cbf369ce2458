//! Smoothing-bandwidth policies.
//!
//! Policies are written as strings: `fixed:<h>`, `rate:<c>[,<e>]` for
//! `h = c·n^e` (default `e = −1/7`), or `plugin`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::model::{Dataset, ResidualModel};
use crate::simulation::metrics::quantile_sorted;
use crate::{Error, Result};

/// Rate exponent `−1/(2r − 1)` for the order-4 kernel.
pub const DEFAULT_RATE_EXPONENT: f64 = -1.0 / 7.0;

/// Smallest bandwidth any policy returns.
pub const DEFAULT_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BandwidthKind {
    Fixed(f64),
    Rate {
        c: f64,
        exponent: f64,
    },
    /// Residual scale `IQR/1.349` at the pilot estimate times `n^{−1/7}`.
    /// An approximation, not an optimal plug-in rule.
    Plugin,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct BandwidthPolicy {
    pub kind: BandwidthKind,
    pub floor: f64,
}

impl BandwidthPolicy {
    pub fn fixed(h: f64) -> Self {
        Self { kind: BandwidthKind::Fixed(h), floor: DEFAULT_FLOOR }
    }

    pub fn rate(c: f64, exponent: f64) -> Self {
        Self { kind: BandwidthKind::Rate { c, exponent }, floor: DEFAULT_FLOOR }
    }

    pub fn plugin() -> Self {
        Self { kind: BandwidthKind::Plugin, floor: DEFAULT_FLOOR }
    }

    /// `h` for a sample of size `n`, when it does not depend on the data.
    pub fn for_n(&self, n: usize) -> Option<f64> {
        match self.kind {
            BandwidthKind::Fixed(h) => Some(h.max(self.floor)),
            BandwidthKind::Rate { c, exponent } => Some((c * (n as f64).powf(exponent)).max(self.floor)),
            BandwidthKind::Plugin => None,
        }
    }
}

impl fmt::Display for BandwidthPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            BandwidthKind::Fixed(h) => write!(f, "fixed:{h}"),
            BandwidthKind::Rate { c, exponent } => write!(f, "rate:{c},{exponent}"),
            BandwidthKind::Plugin => f.write_str("plugin"),
        }
    }
}

impl FromStr for BandwidthPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let num = |t: &str| -> Result<f64> {
            t.trim().parse::<f64>().map_err(|_| Error::invalid(format!("bad number '{t}' in bandwidth policy '{s}'")))
        };
        let (head, tail) = s.split_once(':').unwrap_or((s, ""));
        let policy = match head.to_ascii_lowercase().as_str() {
            "fixed" => Self::fixed(num(tail)?),
            "rate" => {
                let mut parts = tail.split(',');
                let c = num(parts.next().unwrap_or(""))?;
                let e = match parts.next() {
                    Some(t) => num(t)?,
                    None => DEFAULT_RATE_EXPONENT,
                };
                if parts.next().is_some() {
                    return Err(Error::invalid(format!("rate policy takes at most two numbers: '{s}'")));
                }
                Self::rate(c, e)
            }
            "plugin" if tail.is_empty() => Self::plugin(),
            _ => {
                // A bare number is read as a fixed bandwidth.
                match s.parse::<f64>() {
                    Ok(h) => Self::fixed(h),
                    Err(_) => {
                        return Err(Error::invalid(format!(
                            "unknown bandwidth policy '{s}' (expected fixed:<h>, rate:<c>,<e> or plugin)"
                        )))
                    }
                }
            }
        };
        match policy.kind {
            BandwidthKind::Fixed(h) if !(h > 0.0 && h.is_finite()) => {
                Err(Error::invalid(format!("fixed bandwidth must be positive, got {h}")))
            }
            BandwidthKind::Rate { c, exponent } if !(c > 0.0 && c.is_finite() && exponent.is_finite()) => {
                Err(Error::invalid(format!("rate policy needs c > 0 and finite exponent, got {c}, {exponent}")))
            }
            _ => Ok(policy),
        }
    }
}

impl TryFrom<String> for BandwidthPolicy {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<BandwidthPolicy> for String {
    fn from(p: BandwidthPolicy) -> String {
        p.to_string()
    }
}

/// Bandwidth `h > 0` for `data` under `policy`. Deterministic.
pub fn select_bandwidth(policy: &BandwidthPolicy, data: &Dataset, model: &dyn ResidualModel, _tau: f64) -> f64 {
    let n = data.n();
    if let Some(h) = policy.for_n(n) {
        return h;
    }
    let beta = model.start_value(data);
    let mut r: Vec<f64> =
        (0..n).map(|i| model.evaluate(data.y().row(i), data.x().row(i), &beta)).filter(|v| v.is_finite()).collect();
    if r.len() < 2 {
        return policy.floor.max(DEFAULT_FLOOR);
    }
    r.sort_by(f64::total_cmp);
    let iqr = quantile_sorted(&r, 0.75) - quantile_sorted(&r, 0.25);
    let mut scale = iqr / 1.349;
    if !(scale > 0.0) {
        let m = r.iter().sum::<f64>() / r.len() as f64;
        scale = (r.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (r.len() - 1) as f64).sqrt();
    }
    (scale * (n as f64).powf(DEFAULT_RATE_EXPONENT)).max(policy.floor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{linear_residual_model, Table};

    fn dummy(n: usize) -> Dataset {
        let y: Vec<f64> = (0..n).map(|i| i as f64).collect();
        Dataset::new(
            Table::new(n, 1, y).unwrap(),
            Table::new(n, 1, vec![1.0; n]).unwrap(),
            Table::new(n, 1, vec![1.0; n]).unwrap(),
            vec![0],
        )
        .unwrap()
    }

    #[test]
    fn fixed_and_rate() {
        let d = dummy(128);
        let m = linear_residual_model(0, &[], &[0]).unwrap();
        assert_eq!(select_bandwidth(&"fixed:0.0001".parse().unwrap(), &d, &m, 0.5), 0.0001);
        assert_eq!(select_bandwidth(&"fixed:0.1".parse().unwrap(), &d, &m, 0.5), 0.1);
        let h = select_bandwidth(&"rate:1".parse().unwrap(), &d, &m, 0.5);
        assert!((h - 128f64.powf(-1.0 / 7.0)).abs() < 1e-15);
        assert!((h - 0.5).abs() < 1e-12);
    }

    #[test]
    fn default_rate_beats_undersmoothing_bound() {
        // n^{1/8} h_n → 0 along n = 10^k.
        let p = BandwidthPolicy::rate(1.0, DEFAULT_RATE_EXPONENT);
        let vals: Vec<f64> =
            (1..=12).map(|k| 10f64.powi(k)).map(|n| n.powf(0.125) * p.for_n(n as usize).unwrap()).collect();
        assert!(vals.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn plugin_is_positive_and_scales() {
        let m = linear_residual_model(0, &[], &[0]).unwrap();
        let h = select_bandwidth(&BandwidthPolicy::plugin(), &dummy(200), &m, 0.5);
        // Uniform on [0, 199]: IQR ≈ 99.5.
        assert!((h - 99.5 / 1.349 * 200f64.powf(-1.0 / 7.0)).abs() < 1e-9);
    }

    #[test]
    fn parse_round_trip_and_errors() {
        for s in ["fixed:0.1", "rate:2,-0.2", "plugin"] {
            let p: BandwidthPolicy = s.parse().unwrap();
            assert_eq!(p.to_string().parse::<BandwidthPolicy>().unwrap(), p);
        }
        assert_eq!("0.25".parse::<BandwidthPolicy>().unwrap(), BandwidthPolicy::fixed(0.25));
        for bad in ["fixed:-1", "fixed:abc", "rate:0", "rate:1,2,3", "silverman", "plugin:3"] {
            assert!(bad.parse::<BandwidthPolicy>().is_err(), "{bad}");
        }
    }
}
