//! Moment covariance estimators and asymptotic covariance matrices.
//!
//! `Ω̄ = (1/n) Σ g_ni g_niᵀ` is the iid estimator. For time-ordered data the
//! long-run variance adds kernel-weighted autocovariances,
//!
//! ```text
//! Σ̂ = Γ̂₀ + Σ_{j≥1} w(j/S) (Γ̂_j + Γ̂_jᵀ),   Γ̂_j = (1/n) Σ_{i>j} g_i g_{i−j}ᵀ
//! ```
//!
//! with Bartlett or quadratic-spectral weights. Note that no HAC estimator is
//! formally justified for smoothed quantile moments (the moments form a
//! triangular array through `h_n`); these estimators are provided because they
//! work well in practice.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::linalg;
use crate::model::Dataset;
use crate::moments::MomentContext;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovMode {
    Iid,
    Hac,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HacKernel {
    Bartlett,
    QuadraticSpectral,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HacBandwidth {
    /// Andrews' AR(1) plug-in rule applied to the moment series.
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovarianceSpec {
    pub mode: CovMode,
    pub hac_kernel: HacKernel,
    pub hac_bandwidth: HacBandwidth,
    /// Overrides the leading constant of the automatic bandwidth rule
    /// (1.1447 for Bartlett, 1.3221 for quadratic spectral).
    #[serde(default)]
    pub auto_constant: Option<f64>,
}

impl Default for CovarianceSpec {
    fn default() -> Self {
        Self::iid()
    }
}

impl CovarianceSpec {
    pub fn iid() -> Self {
        Self {
            mode: CovMode::Iid,
            hac_kernel: HacKernel::QuadraticSpectral,
            hac_bandwidth: HacBandwidth::Auto,
            auto_constant: None,
        }
    }

    pub fn hac(kernel: HacKernel, bandwidth: HacBandwidth) -> Self {
        Self { mode: CovMode::Hac, hac_kernel: kernel, hac_bandwidth: bandwidth, auto_constant: None }
    }

    pub fn describe(&self) -> String {
        match self.mode {
            CovMode::Iid => "iid".into(),
            CovMode::Hac => {
                let k = match self.hac_kernel {
                    HacKernel::Bartlett => "bartlett",
                    HacKernel::QuadraticSpectral => "qs",
                };
                match self.hac_bandwidth {
                    HacBandwidth::Auto => format!("hac:{k}:auto"),
                    HacBandwidth::Fixed(s) => format!("hac:{k}:{s}"),
                }
            }
        }
    }
}

/// Kernel weight `w(x)` at `x = j/S`.
pub fn hac_weight(kernel: HacKernel, x: f64) -> f64 {
    let x = x.abs();
    match kernel {
        HacKernel::Bartlett => (1.0 - x).max(0.0),
        HacKernel::QuadraticSpectral => {
            if x == 0.0 {
                return 1.0;
            }
            if !x.is_finite() {
                return 0.0;
            }
            let a = 6.0 * std::f64::consts::PI * x / 5.0;
            25.0 / (12.0 * std::f64::consts::PI.powi(2) * x * x) * (a.sin() / a - a.cos())
        }
    }
}

/// `(1/n) Σ g_i g_iᵀ` for a row-major `n × d` series.
pub fn outer_mean(g: &[f64], n: usize, d: usize) -> DMatrix<f64> {
    lagged_outer_mean(g, n, d, 0)
}

fn lagged_outer_mean(g: &[f64], n: usize, d: usize, lag: usize) -> DMatrix<f64> {
    let mut acc = DMatrix::zeros(d, d);
    for i in lag..n {
        let gi = &g[i * d..(i + 1) * d];
        let gl = &g[(i - lag) * d..(i - lag + 1) * d];
        for a in 0..d {
            if gi[a] == 0.0 {
                continue;
            }
            for b in 0..d {
                acc[(a, b)] += gi[a] * gl[b];
            }
        }
    }
    acc / n as f64
}

/// Andrews' AR(1) automatic bandwidth for the columns of a row-major series.
pub fn andrews_bandwidth(g: &[f64], n: usize, d: usize, kernel: HacKernel, constant: Option<f64>) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for a in 0..d {
        let col: Vec<f64> = (0..n).map(|i| g[i * d + a]).collect();
        let Some((rho, s2)) = ar1_fit(&col) else { continue };
        let rho = rho.clamp(-0.97, 0.97);
        let s4 = s2 * s2;
        den += s4 / (1.0 - rho).powi(4);
        num += match kernel {
            HacKernel::Bartlett => 4.0 * rho * rho * s4 / ((1.0 - rho).powi(6) * (1.0 + rho).powi(2)),
            HacKernel::QuadraticSpectral => 4.0 * rho * rho * s4 / (1.0 - rho).powi(8),
        };
    }
    if !(den > 0.0) {
        return 0.0;
    }
    let alpha = num / den;
    let nf = n as f64;
    match kernel {
        HacKernel::Bartlett => constant.unwrap_or(1.1447) * (alpha * nf).powf(1.0 / 3.0),
        HacKernel::QuadraticSpectral => constant.unwrap_or(1.3221) * (alpha * nf).powf(0.2),
    }
}

/// AR(1) slope and innovation variance by least squares with intercept.
fn ar1_fit(x: &[f64]) -> Option<(f64, f64)> {
    let n = x.len();
    if n < 3 {
        return None;
    }
    let (lead, lag) = (&x[1..], &x[..n - 1]);
    let m = (n - 1) as f64;
    let ml = lag.iter().sum::<f64>() / m;
    let md = lead.iter().sum::<f64>() / m;
    let sxx: f64 = lag.iter().map(|v| (v - ml).powi(2)).sum();
    if !(sxx > 0.0) {
        return None;
    }
    let sxy: f64 = lag.iter().zip(lead).map(|(a, b)| (a - ml) * (b - md)).sum();
    let rho = sxy / sxx;
    let s2 = lag.iter().zip(lead).map(|(a, b)| (b - md - rho * (a - ml)).powi(2)).sum::<f64>() / m;
    Some((rho, s2))
}

/// Kernel-weighted long-run variance of a row-major `n × d` series.
pub fn long_run_variance(g: &[f64], n: usize, d: usize, spec: &CovarianceSpec) -> Result<DMatrix<f64>> {
    if g.len() != n * d {
        return Err(Error::DimensionMismatch { context: "long_run_variance: series", expected: n * d, got: g.len() });
    }
    if n < 2 {
        return Err(Error::invalid("long-run variance needs at least two observations"));
    }
    let s = match spec.hac_bandwidth {
        HacBandwidth::Fixed(s) if s >= 0.0 && s.is_finite() => s,
        HacBandwidth::Fixed(s) => return Err(Error::invalid(format!("HAC bandwidth must be non-negative, got {s}"))),
        HacBandwidth::Auto => andrews_bandwidth(g, n, d, spec.hac_kernel, spec.auto_constant),
    };
    let max_lag = match spec.hac_kernel {
        // largest j with j/S < 1
        HacKernel::Bartlett => {
            if s <= 1.0 {
                0
            } else {
                (s.ceil() as usize - 1).min(n - 1)
            }
        }
        HacKernel::QuadraticSpectral => {
            if s > 0.0 {
                n - 1
            } else {
                0
            }
        }
    };
    if spec.hac_kernel == HacKernel::Bartlett && n < 2 * max_lag {
        return Err(Error::invalid(format!("{n} observations are too few for {max_lag} HAC lags")));
    }
    let mut acc = outer_mean(g, n, d);
    for lag in 1..=max_lag {
        let w = hac_weight(spec.hac_kernel, lag as f64 / s);
        if w == 0.0 {
            continue;
        }
        let gamma = lagged_outer_mean(g, n, d, lag);
        acc += (&gamma + gamma.transpose()) * w;
    }
    Ok(linalg::symmetrize(&acc))
}

/// `Ω̄(β) = (1/n) Σ g_ni(β) g_ni(β)ᵀ`.
pub fn omega_iid(ctx: &MomentContext<'_>, beta: &[f64]) -> Result<DMatrix<f64>> {
    let g = ctx.contributions(beta)?;
    Ok(outer_mean(&g, ctx.data.n(), ctx.d_z()))
}

/// HAC long-run variance of `g_ni(β)` in time order.
pub fn omega_hac(ctx: &MomentContext<'_>, beta: &[f64], spec: &CovarianceSpec) -> Result<DMatrix<f64>> {
    let g = ctx.contributions(beta)?;
    long_run_variance(&g, ctx.data.n(), ctx.d_z(), spec)
}

/// Dispatches on `spec.mode`.
pub fn omega(ctx: &MomentContext<'_>, beta: &[f64], spec: &CovarianceSpec) -> Result<DMatrix<f64>> {
    match spec.mode {
        CovMode::Iid => omega_iid(ctx, beta),
        CovMode::Hac => omega_hac(ctx, beta, spec),
    }
}

/// `τ(1−τ)(1/n) Σ Z_i Z_iᵀ`, the iid long-run variance under a correct
/// conditional quantile restriction.
pub fn sigma_iid_quantile(data: &Dataset, tau: f64) -> Result<DMatrix<f64>> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::invalid(format!("quantile index must lie in (0, 1), got {tau}")));
    }
    let d = data.d_z();
    let mut zz = DMatrix::zeros(d, d);
    for i in 0..data.n() {
        let z = data.z().row(i);
        for a in 0..d {
            for b in 0..d {
                zz[(a, b)] += z[a] * z[b];
            }
        }
    }
    Ok(zz * (tau * (1.0 - tau) / data.n() as f64))
}

fn check_g(g: &DMatrix<f64>, sigma: &DMatrix<f64>) -> Result<()> {
    if sigma.nrows() != g.nrows() || sigma.ncols() != g.nrows() {
        return Err(Error::DimensionMismatch {
            context: "covariance: Σ size",
            expected: g.nrows(),
            got: sigma.nrows(),
        });
    }
    if linalg::column_rank(g) < g.ncols() {
        return Err(Error::Identification(format!(
            "moment Jacobian has rank {} < {} parameters",
            linalg::column_rank(g),
            g.ncols()
        )));
    }
    Ok(())
}

/// `(Gᵀ Σ⁻¹ G)⁻¹ / n`, computed as `R⁻¹R⁻ᵀ / n` from the QR factor of the
/// whitened Jacobian `Σ^{-1/2} G`.
pub fn asym_cov_mm(g: &DMatrix<f64>, sigma: &DMatrix<f64>, n: usize) -> Result<DMatrix<f64>> {
    check_g(g, sigma)?;
    let whitened = linalg::spd_power_floored(sigma, -0.5)? * g;
    let (_, r_inv) = linalg::qr_inverse_r(&whitened)?;
    Ok(linalg::symmetrize(&(&r_inv * r_inv.transpose() / n as f64)))
}

/// Sandwich `(GᵀWG)⁻¹ GᵀWΣWG (GᵀWG)⁻¹ / n`. For positive definite `W` the
/// left factor `(GᵀWG)⁻¹GᵀW` comes from the QR factorisation of `W^{1/2}G`.
pub fn asym_cov_gmm(g: &DMatrix<f64>, w: &DMatrix<f64>, sigma: &DMatrix<f64>, n: usize) -> Result<DMatrix<f64>> {
    check_g(g, sigma)?;
    if w.nrows() != g.nrows() || w.ncols() != g.nrows() {
        return Err(Error::DimensionMismatch { context: "covariance: W size", expected: g.nrows(), got: w.nrows() });
    }
    let left = if linalg::min_eigenvalue(w) > linalg::EIGEN_FLOOR * w.amax() {
        let w_half = linalg::spd_power_floored(w, 0.5)?;
        let (q, r_inv) = linalg::qr_inverse_r(&(&w_half * g))?;
        r_inv * q.transpose() * w_half
    } else {
        let gtw = g.transpose() * w;
        linalg::inverse(&linalg::symmetrize(&(&gtw * g))).map_err(|_| Error::Singular("GᵀWG is singular".into()))? * gtw
    };
    Ok(linalg::symmetrize(&(&left * sigma * left.transpose() / n as f64)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{linear_residual_model, Table};
    use approx::assert_relative_eq;

    #[test]
    fn weights() {
        assert_eq!(hac_weight(HacKernel::Bartlett, 0.5), 0.5);
        assert_eq!(hac_weight(HacKernel::Bartlett, 1.5), 0.0);
        assert_eq!(hac_weight(HacKernel::QuadraticSpectral, 0.0), 1.0);
        // continuity at zero
        assert!((hac_weight(HacKernel::QuadraticSpectral, 1e-4) - 1.0).abs() < 1e-6);
        assert!(hac_weight(HacKernel::QuadraticSpectral, 1.0) < 1.0);
    }

    fn toy_ctx_data() -> Dataset {
        // n = 2: y = (−1, 1), Z = (1, z) with z = (2, 3), intercept-only model
        Dataset::new(
            Table::new(2, 1, vec![-1.0, 1.0]).unwrap(),
            Table::new(2, 1, vec![1.0, 1.0]).unwrap(),
            Table::new(2, 2, vec![1.0, 2.0, 1.0, 3.0]).unwrap(),
            vec![0],
        )
        .unwrap()
    }

    #[test]
    fn omega_iid_by_hand() {
        let data = toy_ctx_data();
        let m = linear_residual_model(0, &[], &[0]).unwrap();
        let ctx = MomentContext::new(&data, &m, 0.25, 0.1).unwrap();
        // Λ = (−1, 1) ⇒ weights (1 − .25, 0 − .25)
        let om = omega_iid(&ctx, &[0.0]).unwrap();
        let (w1, w2) = (0.75, -0.25);
        let expected = DMatrix::from_row_slice(
            2,
            2,
            &[
                (w1 * w1 + w2 * w2) / 2.0,
                (w1 * w1 * 2.0 + w2 * w2 * 3.0) / 2.0,
                (w1 * w1 * 2.0 + w2 * w2 * 3.0) / 2.0,
                (w1 * w1 * 4.0 + w2 * w2 * 9.0) / 2.0,
            ],
        );
        assert_relative_eq!(om, expected, epsilon = 1e-15);
    }

    #[test]
    fn sigma_iid_scaling() {
        let n = 4;
        let data = Dataset::new(
            Table::new(n, 1, vec![0.0; n]).unwrap(),
            Table::new(n, 1, vec![1.0; n]).unwrap(),
            Table::new(n, 1, vec![1.0; n]).unwrap(),
            vec![0],
        )
        .unwrap();
        assert_relative_eq!(sigma_iid_quantile(&data, 0.5).unwrap()[(0, 0)], 0.25);
        assert_relative_eq!(sigma_iid_quantile(&data, 0.25).unwrap()[(0, 0)], 0.1875);
        assert!(sigma_iid_quantile(&data, 1.0).is_err());
    }

    #[test]
    fn asym_cov_reference_cases() {
        let id = DMatrix::<f64>::identity(2, 2);
        assert_relative_eq!(asym_cov_mm(&id, &id, 1).unwrap(), id, epsilon = 1e-14);
        let g = DMatrix::from_element(1, 1, 2.0);
        let s = DMatrix::from_element(1, 1, 3.0);
        assert_relative_eq!(asym_cov_mm(&g, &s, 5).unwrap()[(0, 0)], 3.0 / (4.0 * 5.0), epsilon = 1e-15);
        let sig = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        assert_relative_eq!(asym_cov_gmm(&id, &id, &sig, 4).unwrap(), &sig / 4.0, epsilon = 1e-14);
        // W = Σ⁻¹ collapses the sandwich
        let g = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, -0.2, 2.0]);
        let w = sig.clone().try_inverse().unwrap();
        assert_relative_eq!(asym_cov_gmm(&g, &w, &sig, 3).unwrap(), asym_cov_mm(&g, &sig, 3).unwrap(), epsilon = 1e-12);
        // exactly identified: G⁻¹ΣG⁻ᵀ/n
        let gi = g.clone().try_inverse().unwrap();
        assert_relative_eq!(asym_cov_mm(&g, &sig, 3).unwrap(), &gi * &sig * gi.transpose() / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn rank_deficient_jacobian_is_identification_failure() {
        let g = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        let s = DMatrix::identity(2, 2);
        assert!(matches!(asym_cov_mm(&g, &s, 10), Err(Error::Identification(_))));
        assert!(asym_cov_gmm(&g, &s, &s, 10).is_err());
    }

    fn series(n: usize, d: usize) -> Vec<f64> {
        (0..n * d).map(|k| ((k as f64) * 0.731).sin() + 0.1 * (k % 3) as f64).collect()
    }

    #[test]
    fn bartlett_matches_brute_force_sum() {
        let (n, d) = (25, 3);
        let g = series(n, d);
        let spec = CovarianceSpec::hac(HacKernel::Bartlett, HacBandwidth::Fixed(2.0));
        let got = long_run_variance(&g, n, d, &spec).unwrap();
        // independent triple loop over (lag, a, b)
        let mut brute = DMatrix::<f64>::zeros(d, d);
        for a in 0..d {
            for b in 0..d {
                let mut total = 0.0;
                for j in -(n as i64 - 1)..(n as i64) {
                    let w = (1.0 - (j.abs() as f64) / 2.0).max(0.0);
                    let mut s = 0.0;
                    for t in 0..n as i64 {
                        let u = t - j;
                        if u >= 0 && u < n as i64 {
                            s += g[t as usize * d + a] * g[u as usize * d + b];
                        }
                    }
                    total += w * s / n as f64;
                }
                brute[(a, b)] = total;
            }
        }
        assert_relative_eq!(got, brute, epsilon = 1e-12);
    }

    #[test]
    fn zero_lag_hac_equals_iid_bitwise() {
        let (n, d) = (25, 2);
        let g = series(n, d);
        for s in [0.0, 0.5, 1.0] {
            let spec = CovarianceSpec::hac(HacKernel::Bartlett, HacBandwidth::Fixed(s));
            assert_eq!(long_run_variance(&g, n, d, &spec).unwrap(), outer_mean(&g, n, d));
        }
        let qs = CovarianceSpec::hac(HacKernel::QuadraticSpectral, HacBandwidth::Fixed(0.0));
        assert_eq!(long_run_variance(&g, n, d, &qs).unwrap(), outer_mean(&g, n, d));
    }

    #[test]
    fn too_many_lags_rejected() {
        let g = series(6, 1);
        let spec = CovarianceSpec::hac(HacKernel::Bartlett, HacBandwidth::Fixed(5.0));
        assert!(long_run_variance(&g, 6, 1, &spec).is_err());
    }

    #[test]
    fn automatic_bandwidth_grows_with_persistence() {
        let n = 400;
        let mut ar = vec![0.0; n];
        let mut state = 1u64;
        for t in 1..n {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
            let e = ((state >> 11) as f64 / (1u64 << 53) as f64) - 0.5;
            ar[t] = 0.8 * ar[t - 1] + e;
        }
        let mut white = vec![0.0; n];
        for w in white.iter_mut() {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
            *w = ((state >> 11) as f64 / (1u64 << 53) as f64) - 0.5;
        }
        let s_ar = andrews_bandwidth(&ar, n, 1, HacKernel::QuadraticSpectral, None);
        let s_w = andrews_bandwidth(&white, n, 1, HacKernel::QuadraticSpectral, None);
        assert!(s_ar > s_w, "{s_ar} vs {s_w}");
        assert!(s_ar > 1.0);
        let spec = CovarianceSpec::hac(HacKernel::QuadraticSpectral, HacBandwidth::Auto);
        let lrv = long_run_variance(&ar, n, 1, &spec).unwrap();
        assert!(lrv[(0, 0)] > outer_mean(&ar, n, 1)[(0, 0)]);
    }
}
