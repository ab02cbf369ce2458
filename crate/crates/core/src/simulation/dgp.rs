//! The four simulation designs.
//!
//! Every generator returns a dataset laid out for the linear model
//! `linear_residual_model(0, &[1], &[0])`: `Y = (outcome, endogenous)`,
//! `X = (const)`, and `Z = (const, instruments…)`. The parameter of interest
//! is therefore `β[0]`, the coefficient on the endogenous regressor.

use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Bernoulli, Cauchy, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use super::rng::replication_rng;
use crate::model::{Dataset, Table};
use crate::{Error, Result};

/// Design knobs the original description leaves open.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DgpKnobs {
    /// AR coefficient of the outcome error in designs 2 and 3.
    pub rho_eps: f64,
    /// First-stage coefficients `δ₀..δ₄` in design 4.
    pub delta: [f64; 5],
}

impl Default for DgpKnobs {
    fn default() -> Self {
        Self { rho_eps: 0.5, delta: [0.0, 1.0, 1.0, 1.0, 1.0] }
    }
}

impl DgpKnobs {
    pub fn describe(&self) -> String {
        format!("rho_eps={};delta={:?}", self.rho_eps, self.delta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub id: u8,
    pub n: usize,
    pub tau: f64,
    pub seed: u64,
}

impl DgpSpec {
    pub fn validate(&self) -> Result<()> {
        if !(1..=4).contains(&self.id) {
            return Err(Error::invalid(format!("DGP id must be 1-4, got {}", self.id)));
        }
        if self.n < 2 {
            return Err(Error::invalid(format!("sample size must be at least 2, got {}", self.n)));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::invalid(format!("quantile index must lie in (0, 1), got {}", self.tau)));
        }
        Ok(())
    }
}

/// True value of the coefficient on the endogenous regressor.
pub fn true_slope(id: u8, tau: f64) -> f64 {
    match id {
        1 => 100.0 * (tau - 0.5),
        2 | 3 => 1.0,
        _ => 0.2,
    }
}

/// DGP 4 discount factor and EIS.
pub const DGP4_BETA: f64 = 0.99;
pub const DGP4_EIS: f64 = 0.2;

fn normal(rng: &mut ChaCha20Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn assemble(
    outcome: Vec<f64>,
    endog: Vec<f64>,
    instruments: Vec<Vec<f64>>,
    names: (&str, &str, &[&str]),
) -> Result<Dataset> {
    let n = outcome.len();
    let y = Table::from_columns(&[outcome, endog])?;
    let x = Table::new(n, 1, vec![1.0; n])?;
    let mut zcols = vec![vec![1.0; n]];
    zcols.extend(instruments);
    let z = Table::from_columns(&zcols)?;
    let mut z_names = vec!["const".to_string()];
    z_names.extend(names.2.iter().map(|s| s.to_string()));
    Dataset::new(y, x, z, vec![0])?.with_names(vec![names.0.into(), names.1.into()], vec!["const".into()], z_names)
}

/// Binary treatment `D` with self-selection, binary offer `Z`, iid sampling.
pub fn gen_dgp1(n: usize, seed: u64) -> Result<Dataset> {
    gen_dgp1_with(n, &mut replication_rng(seed, 1, 0))
}

fn gen_dgp1_with(n: usize, rng: &mut ChaCha20Rng) -> Result<Dataset> {
    let chi = ChiSquared::new(3.0).map_err(|e| Error::invalid(e.to_string()))?;
    let offer = Bernoulli::new(0.5).expect("valid probability");
    let (mut y, mut d, mut z) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for _ in 0..n {
        let zi = if offer.sample(rng) { 1.0 } else { 0.0 };
        let u: f64 = rng.random();
        let p = zi * (4.0 * u / 3.0).min(1.0);
        let di = if rng.random::<f64>() < p { 1.0 } else { 0.0 };
        let beta = 60.0 + chi.inverse_cdf(u);
        y.push(beta + di * 100.0 * (u - 0.5));
        d.push(di);
        z.push(zi);
    }
    assemble(y, d, vec![z], ("y", "d", &["z"]))
}

/// Measurement-error time series with Gaussian errors.
pub fn gen_dgp2(n: usize, seed: u64) -> Result<Dataset> {
    gen_dgp23_with(n, &mut replication_rng(seed, 2, 0), 0.5, false)
}

/// As [`gen_dgp2`] with Cauchy outcome errors.
pub fn gen_dgp3(n: usize, seed: u64) -> Result<Dataset> {
    gen_dgp23_with(n, &mut replication_rng(seed, 3, 0), 0.5, true)
}

fn gen_dgp23_with(n: usize, rng: &mut ChaCha20Rng, rho_eps: f64, cauchy: bool) -> Result<Dataset> {
    if !(rho_eps.abs() < 1.0) {
        return Err(Error::invalid(format!("rho_eps must lie in (-1, 1), got {rho_eps}")));
    }
    let rho_z: f64 = 0.5;
    let c = Cauchy::new(0.0, 1.0).expect("valid scale");
    let draw_eps_innov = |rng: &mut ChaCha20Rng| if cauchy { c.sample(rng) } else { normal(rng) };
    // Periods 0..=n; period 0 only supplies the first lagged instrument.
    let mut zt = normal(rng);
    let mut eps = draw_eps_innov(rng);
    let mut x_prev = zt + normal(rng);
    let (mut y, mut x, mut inst) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for _ in 0..n {
        zt = rho_z * zt + (1.0 - rho_z * rho_z).sqrt() * normal(rng);
        let v = draw_eps_innov(rng);
        eps = if cauchy {
            rho_eps * eps + (1.0 - rho_eps) * v
        } else {
            rho_eps * eps + (1.0 - rho_eps * rho_eps).sqrt() * v
        };
        let xt = zt + normal(rng);
        y.push(zt + eps);
        x.push(xt);
        inst.push(x_prev);
        x_prev = xt;
    }
    assemble(y, x, vec![inst], ("y", "x", &["x_lag1"]))
}

/// Log-linearised Euler equation with four AR(1) instruments.
pub fn gen_dgp4(n: usize, seed: u64) -> Result<Dataset> {
    gen_dgp4_with(n, &mut replication_rng(seed, 4, 0), &DgpKnobs::default().delta)
}

const DGP4_BURN_IN: usize = 200;

fn gen_dgp4_with(n: usize, rng: &mut ChaCha20Rng, delta: &[f64; 5]) -> Result<Dataset> {
    let rho = [0.2, 0.4, 0.6, 0.8];
    let common = 0.1f64.sqrt();
    let idio = 0.9f64.sqrt();
    // (U, V): sd 2 each, covariance 0.8, so correlation 0.2.
    let corr_uv: f64 = 0.8 / 4.0;
    let mut z = [0.0; 4];
    let mut cols: Vec<Vec<f64>> = (0..4).map(|_| Vec::with_capacity(n)).collect();
    let (mut y, mut x) = (Vec::with_capacity(n), Vec::with_capacity(n));
    let intercept = DGP4_BETA.ln() * DGP4_EIS;
    for t in 0..DGP4_BURN_IN + n {
        let c = normal(rng);
        for j in 0..4 {
            z[j] = rho[j] * z[j] + common * c + idio * normal(rng);
        }
        let a = normal(rng);
        let b = normal(rng);
        let v = 2.0 * a;
        let u = 2.0 * (corr_uv * a + (1.0 - corr_uv * corr_uv).sqrt() * b);
        if t < DGP4_BURN_IN {
            continue;
        }
        let xt = delta[0] + delta[1] * z[0] + v * (delta[2] * z[1] + delta[3] * z[2] + delta[4] * z[3]) + v;
        x.push(xt);
        y.push(intercept + DGP4_EIS * xt + u);
        for j in 0..4 {
            cols[j].push(z[j]);
        }
    }
    assemble(y, x, cols, ("y", "x", &["z1", "z2", "z3", "z4"]))
}

/// Generates design `spec.id` from an explicit stream.
pub fn generate_with(id: u8, n: usize, knobs: &DgpKnobs, rng: &mut ChaCha20Rng) -> Result<Dataset> {
    match id {
        1 => gen_dgp1_with(n, rng),
        2 => gen_dgp23_with(n, rng, knobs.rho_eps, false),
        3 => gen_dgp23_with(n, rng, knobs.rho_eps, true),
        4 => gen_dgp4_with(n, rng, &knobs.delta),
        _ => Err(Error::invalid(format!("DGP id must be 1-4, got {id}"))),
    }
}

/// Generates design `spec.id` with sample size `spec.n` from `spec.seed`.
pub fn generate(spec: &DgpSpec, knobs: &DgpKnobs) -> Result<Dataset> {
    spec.validate()?;
    generate_with(spec.id, spec.n, knobs, &mut replication_rng(spec.seed, spec.id as u64, 0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mean(v: &[f64]) -> f64 {
        v.iter().sum::<f64>() / v.len() as f64
    }

    fn var(v: &[f64]) -> f64 {
        let m = mean(v);
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
    }

    #[test]
    fn dgp1_structure() {
        let d = gen_dgp1(50_000, 1).unwrap();
        let (dd, z) = (d.y().column(1), d.z().column(1));
        assert!(dd.iter().zip(&z).all(|(di, zi)| *zi == 1.0 || *di == 0.0));
        let treated: Vec<f64> = dd.iter().zip(&z).filter(|(_, zi)| **zi == 1.0).map(|(di, _)| *di).collect();
        assert!((mean(&treated) - 5.0 / 8.0).abs() < 0.01, "{}", mean(&treated));
        assert_eq!(true_slope(1, 0.5), 0.0);
        assert_eq!(true_slope(1, 0.25), -25.0);
        assert_eq!((d.d_z(), d.d_y(), d.d_x()), (2, 2, 1));
    }

    #[test]
    fn dgp2_marginals() {
        let d = gen_dgp2(100_000, 2).unwrap();
        // Var(X) = Var(Z) + 1 = 2 and Cov(X_t, X_{t-1}) = ρ_Z = 0.5.
        let x = d.y().column(1);
        let lag = d.z().column(1);
        assert!((var(&x) - 2.0).abs() < 0.05);
        let (mx, ml) = (mean(&x), mean(&lag));
        let cov = x.iter().zip(&lag).map(|(a, b)| (a - mx) * (b - ml)).sum::<f64>() / x.len() as f64;
        assert!((cov - 0.5).abs() < 0.03, "{cov}");
        // Y - X = ε - η has variance 2.
        let r: Vec<f64> = d.y().column(0).iter().zip(&x).map(|(y, x)| y - x).collect();
        assert!((var(&r) - 2.0).abs() < 0.05);
    }

    #[test]
    fn dgp3_heavy_tails() {
        let kurt = |n: usize| {
            let d = gen_dgp3(n, 3).unwrap();
            let y = d.y().column(0);
            let m = mean(&y);
            let m2 = y.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n as f64;
            y.iter().map(|v| (v - m).powi(4)).sum::<f64>() / n as f64 / (m2 * m2)
        };
        assert!(kurt(20_000) > 50.0);
    }

    #[test]
    fn dgp4_structure() {
        let d = gen_dgp4(60_000, 4).unwrap();
        assert_eq!(d.d_z(), 5);
        for (j, rho) in [0.2, 0.4, 0.6, 0.8].iter().enumerate() {
            let z = d.z().column(j + 1);
            let m = mean(&z);
            let num: f64 = z.windows(2).map(|w| (w[1] - m) * (w[0] - m)).sum();
            let den: f64 = z.iter().map(|v| (v - m).powi(2)).sum();
            assert!((num / den - rho).abs() < 0.02);
        }
        // Median of U is zero, so Y - 0.2 X has median ln(0.99)/5.
        let mut r: Vec<f64> = (0..d.n()).map(|i| d.y().get(i, 0) - 0.2 * d.y().get(i, 1)).collect();
        r.sort_by(f64::total_cmp);
        assert!((r[r.len() / 2] - 0.99f64.ln() / 5.0).abs() < 0.03);
    }

    #[test]
    fn generators_are_deterministic() {
        let spec = DgpSpec { id: 4, n: 30, tau: 0.5, seed: 9 };
        let a = generate(&spec, &DgpKnobs::default()).unwrap();
        let b = generate(&spec, &DgpKnobs::default()).unwrap();
        assert_eq!(a.y(), b.y());
        assert!(generate(&DgpSpec { id: 5, ..spec }, &DgpKnobs::default()).is_err());
        assert!(generate(&DgpSpec { n: 1, ..spec }, &DgpKnobs::default()).is_err());
    }
}
