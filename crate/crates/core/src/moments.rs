//! Sample moment vectors `M̂_n(β, τ) = (1/n) Σ Z_i [Ĩ(−Λ_i/h) − τ]` and their
//! Jacobian in `β`.

use nalgebra::{DMatrix, DVector};

use crate::model::{Dataset, ResidualModel};
use crate::smoothing::{Order4Kernel, SmoothKernel};
use crate::{Error, Result};

/// Bandwidths below this are clamped.
pub const MIN_BANDWIDTH: f64 = 1e-12;

static DEFAULT_KERNEL: Order4Kernel = Order4Kernel;

/// Everything needed to evaluate the moments at a parameter value.
#[derive(Debug, Clone, Copy)]
pub struct MomentContext<'a> {
    pub data: &'a Dataset,
    pub model: &'a dyn ResidualModel,
    pub tau: f64,
    pub h: f64,
    pub kernel: &'a dyn SmoothKernel,
}

/// Moments and Jacobian from a single pass over the residuals.
#[derive(Debug, Clone)]
pub struct MomentEval {
    pub moments: DVector<f64>,
    pub jacobian: DMatrix<f64>,
}

impl<'a> MomentContext<'a> {
    pub fn new(data: &'a Dataset, model: &'a dyn ResidualModel, tau: f64, h: f64) -> Result<Self> {
        Self::with_kernel(data, model, tau, h, &DEFAULT_KERNEL)
    }

    pub fn with_kernel(
        data: &'a Dataset,
        model: &'a dyn ResidualModel,
        tau: f64,
        h: f64,
        kernel: &'a dyn SmoothKernel,
    ) -> Result<Self> {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(Error::invalid(format!("quantile index must lie in (0, 1), got {tau}")));
        }
        if !(h > 0.0) || !h.is_finite() {
            return Err(Error::invalid(format!("bandwidth must be positive and finite, got {h}")));
        }
        let h = if h < MIN_BANDWIDTH {
            log::warn!("bandwidth {h:e} clamped to {MIN_BANDWIDTH:e}");
            MIN_BANDWIDTH
        } else {
            h
        };
        model.check_dataset(data)?;
        Ok(Self { data, model, tau, h, kernel })
    }

    /// Same context at another bandwidth.
    pub fn at_bandwidth(&self, h: f64) -> Self {
        Self { h: h.max(MIN_BANDWIDTH), ..*self }
    }

    pub fn at_tau(&self, tau: f64) -> Self {
        Self { tau, ..*self }
    }

    pub fn d_z(&self) -> usize {
        self.data.d_z()
    }

    pub fn d_beta(&self) -> usize {
        self.model.dim_beta()
    }

    fn check_beta(&self, beta: &[f64]) -> Result<()> {
        if beta.len() != self.d_beta() {
            return Err(Error::DimensionMismatch {
                context: "parameter vector length",
                expected: self.d_beta(),
                got: beta.len(),
            });
        }
        if beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::invalid("parameter vector has non-finite entries"));
        }
        Ok(())
    }

    /// `Λ_i(β)` for every observation.
    pub fn residuals(&self, beta: &[f64]) -> Result<Vec<f64>> {
        self.check_beta(beta)?;
        let (y, x) = (self.data.y(), self.data.x());
        Ok((0..self.data.n()).map(|i| self.model.evaluate(y.row(i), x.row(i), beta)).collect())
    }

    /// Per-observation weights `w_i` such that `g_ni = Z_i w_i`.
    fn weights(&self, residuals: &[f64], smoothed: bool) -> Vec<f64> {
        residuals
            .iter()
            .map(|&r| {
                let ind = if smoothed {
                    self.kernel.indicator(-r / self.h)
                } else if r <= 0.0 {
                    1.0
                } else {
                    0.0
                };
                ind - self.tau
            })
            .collect()
    }

    fn average_weighted_z(&self, w: &[f64]) -> DVector<f64> {
        let dz = self.d_z();
        let z = self.data.z();
        let mut acc = vec![0.0; dz];
        for (i, wi) in w.iter().enumerate() {
            if *wi == 0.0 {
                continue;
            }
            for (a, zk) in acc.iter_mut().zip(z.row(i)) {
                *a += zk * wi;
            }
        }
        let n = self.data.n() as f64;
        DVector::from_iterator(dz, acc.into_iter().map(|a| a / n))
    }

    pub fn smoothed_moments(&self, beta: &[f64]) -> Result<DVector<f64>> {
        // Fused form of `average_weighted_z(weights(residuals))`: this is the
        // inner loop of annealing, so it avoids the intermediate vectors.
        self.check_beta(beta)?;
        let (y, x, z) = (self.data.y(), self.data.x(), self.data.z());
        let mut acc = vec![0.0; self.d_z()];
        for i in 0..self.data.n() {
            let r = self.model.evaluate(y.row(i), x.row(i), beta);
            let w = self.kernel.indicator(-r / self.h) - self.tau;
            if w == 0.0 {
                continue;
            }
            for (a, zk) in acc.iter_mut().zip(z.row(i)) {
                *a += zk * w;
            }
        }
        let n = self.data.n() as f64;
        Ok(DVector::from_iterator(acc.len(), acc.into_iter().map(|a| a / n)))
    }

    pub fn unsmoothed_moments(&self, beta: &[f64]) -> Result<DVector<f64>> {
        let r = self.residuals(beta)?;
        Ok(self.average_weighted_z(&self.weights(&r, false)))
    }

    /// The `n × d_Z` matrix of contributions `g_ni(β, τ)`, row-major.
    pub fn contributions(&self, beta: &[f64]) -> Result<Vec<f64>> {
        let r = self.residuals(beta)?;
        let w = self.weights(&r, true);
        let z = self.data.z();
        let dz = self.d_z();
        let mut g = Vec::with_capacity(self.data.n() * dz);
        for (i, wi) in w.iter().enumerate() {
            g.extend(z.row(i).iter().map(|zk| zk * wi));
        }
        Ok(g)
    }

    fn jacobian_from_residuals(&self, beta: &[f64], residuals: &[f64]) -> DMatrix<f64> {
        let (dz, db) = (self.d_z(), self.d_beta());
        let (y, x, z) = (self.data.y(), self.data.x(), self.data.z());
        let mut jac = DMatrix::zeros(dz, db);
        let mut grad = vec![0.0; db];
        for (i, &r) in residuals.iter().enumerate() {
            let k = self.kernel.derivative(-r / self.h);
            if k == 0.0 {
                continue;
            }
            self.model.gradient(y.row(i), x.row(i), beta, &mut grad);
            for (row, zk) in z.row(i).iter().enumerate() {
                let a = k * zk;
                for (col, gj) in grad.iter().enumerate() {
                    jac[(row, col)] += a * gj;
                }
            }
        }
        jac * (-1.0 / (self.data.n() as f64 * self.h))
    }

    /// `Ḡ(β)` with entries `−(1/(nh)) Σ Ĩ′(−Λ_i/h) Z_ik ∂Λ_i/∂β_j`.
    pub fn moment_jacobian(&self, beta: &[f64]) -> Result<DMatrix<f64>> {
        let r = self.residuals(beta)?;
        Ok(self.jacobian_from_residuals(beta, &r))
    }

    /// `∂M̂_n/∂ln h = (1/n) Σ Z_i Ĩ′(−Λ_i/h) Λ_i/h`.
    pub fn log_bandwidth_derivative(&self, beta: &[f64]) -> Result<DVector<f64>> {
        let r = self.residuals(beta)?;
        let w: Vec<f64> = r
            .iter()
            .map(|&ri| {
                let u = -ri / self.h;
                -self.kernel.derivative(u) * u
            })
            .collect();
        Ok(self.average_weighted_z(&w))
    }

    /// Moments and Jacobian sharing one residual pass.
    pub fn evaluate(&self, beta: &[f64]) -> Result<MomentEval> {
        let r = self.residuals(beta)?;
        Ok(MomentEval {
            moments: self.average_weighted_z(&self.weights(&r, true)),
            jacobian: self.jacobian_from_residuals(beta, &r),
        })
    }
}

pub fn smoothed_moments(ctx: &MomentContext<'_>, beta: &[f64]) -> Result<DVector<f64>> {
    ctx.smoothed_moments(beta)
}

pub fn unsmoothed_moments(ctx: &MomentContext<'_>, beta: &[f64]) -> Result<DVector<f64>> {
    ctx.unsmoothed_moments(beta)
}

pub fn moment_jacobian(ctx: &MomentContext<'_>, beta: &[f64]) -> Result<DMatrix<f64>> {
    ctx.moment_jacobian(beta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{euler_residual_model, linear_residual_model, Table};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    /// Intercept-only data: y_i, X = Z = [1].
    fn intercept_data(y: &[f64]) -> Dataset {
        let n = y.len();
        Dataset::new(
            Table::new(n, 1, y.to_vec()).unwrap(),
            Table::new(n, 1, vec![1.0; n]).unwrap(),
            Table::new(n, 1, vec![1.0; n]).unwrap(),
            vec![0],
        )
        .unwrap()
    }

    fn two_col_data(y: &[f64], z2: &[f64]) -> Dataset {
        let n = y.len();
        let z: Vec<f64> = z2.iter().flat_map(|v| [1.0, *v]).collect();
        Dataset::new(
            Table::new(n, 1, y.to_vec()).unwrap(),
            Table::new(n, 1, vec![1.0; n]).unwrap(),
            Table::new(n, 2, z).unwrap(),
            vec![0],
        )
        .unwrap()
    }

    #[test]
    fn saturated_branches() {
        let h = 0.1;
        let data = two_col_data(&[0.0, 0.0, 0.0], &[1.0, 2.0, 4.0]);
        let m = linear_residual_model(0, &[], &[0]).unwrap();
        let ctx = MomentContext::new(&data, &m, 0.3, h).unwrap();
        let mean_z = [1.0, 7.0 / 3.0];
        // Λ_i = 0 − β = −2h for β = 2h: Ĩ = 1
        let deep_neg = ctx.smoothed_moments(&[2.0 * h]).unwrap();
        let deep_pos = ctx.smoothed_moments(&[-2.0 * h]).unwrap();
        for k in 0..2 {
            assert_relative_eq!(deep_neg[k], 0.7 * mean_z[k], epsilon = 1e-14);
            assert_relative_eq!(deep_pos[k], -0.3 * mean_z[k], epsilon = 1e-14);
        }
        let u_neg = ctx.unsmoothed_moments(&[1.0]).unwrap();
        let u_pos = ctx.unsmoothed_moments(&[-1.0]).unwrap();
        assert_relative_eq!(u_neg[1], 0.7 * mean_z[1], epsilon = 1e-14);
        assert_relative_eq!(u_pos[1], -0.3 * mean_z[1], epsilon = 1e-14);
        assert_eq!(ctx.moment_jacobian(&[2.0 * h]).unwrap(), DMatrix::zeros(2, 1));
    }

    #[test]
    fn log_bandwidth_derivative_matches_difference() {
        let data = two_col_data(&[-0.3, 0.1, 0.25, 0.6, -0.05], &[1.0, 2.0, -1.0, 0.5, 3.0]);
        let m = linear_residual_model(0, &[], &[0]).unwrap();
        let ctx = MomentContext::new(&data, &m, 0.4, 0.5).unwrap();
        let d = ctx.log_bandwidth_derivative(&[0.05]).unwrap();
        let e: f64 = 1e-6;
        let up = ctx.at_bandwidth(0.5 * e.exp()).smoothed_moments(&[0.05]).unwrap();
        let dn = ctx.at_bandwidth(0.5 * (-e).exp()).smoothed_moments(&[0.05]).unwrap();
        for k in 0..2 {
            assert_relative_eq!(d[k], (up[k] - dn[k]) / (2.0 * e), epsilon = 1e-8);
        }
    }

    #[test]
    fn toy_value_with_residual_at_zero() {
        // y = (−1, 0, 1), β = 0, h = 0.5, τ = 0.5, Z = (1, z)
        let data = two_col_data(&[-1.0, 0.0, 1.0], &[2.0, 3.0, 5.0]);
        let m = linear_residual_model(0, &[], &[0]).unwrap();
        let ctx = MomentContext::new(&data, &m, 0.5, 0.5).unwrap();
        let mom = ctx.smoothed_moments(&[0.0]).unwrap();
        // weights: Ĩ(2)−.5 = .5, Ĩ(0)−.5 = 0, Ĩ(−2)−.5 = −.5
        assert_relative_eq!(mom[0], (0.5 + 0.0 - 0.5) / 3.0, epsilon = 1e-15);
        assert_relative_eq!(mom[1], (0.5 * 2.0 + 0.0 * 3.0 - 0.5 * 5.0) / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn toy_jacobian_by_hand() {
        // Λ = y − β₁ d − β₀ with n = 2, h = 1, β = 0: arguments u_i = y_i
        let y = Table::new(2, 2, vec![0.0, 1.0, 0.5, 2.0]).unwrap();
        let data = Dataset::new(
            y,
            Table::new(2, 1, vec![1.0, 1.0]).unwrap(),
            Table::new(2, 2, vec![1.0, 3.0, 1.0, -1.0]).unwrap(),
            vec![0],
        )
        .unwrap();
        let m = linear_residual_model(0, &[1], &[0]).unwrap();
        let ctx = MomentContext::new(&data, &m, 0.5, 1.0).unwrap();
        let jac = ctx.moment_jacobian(&[0.0, 0.0]).unwrap();
        let k = |u: f64| 105.0 / 64.0 * (1.0 - 5.0 * u * u + 7.0 * u.powi(4) - 3.0 * u.powi(6));
        let (k1, k2) = (k(0.0), k(-0.5));
        // ∂Λ/∂β = (−d, −1); entry = −(1/2) Σ k_i z_ik ∂Λ_i/∂β_j
        let expected = DMatrix::from_row_slice(
            2,
            2,
            &[
                0.5 * (k1 * 1.0 * 1.0 + k2 * 1.0 * 2.0),
                0.5 * (k1 + k2),
                0.5 * (k1 * 3.0 * 1.0 - k2 * 2.0),
                0.5 * (k1 * 3.0 - k2),
            ],
        );
        assert_relative_eq!(jac, expected, epsilon = 1e-14);
    }

    #[test]
    fn small_bandwidth_without_window_observations_equals_unsmoothed() {
        let data = two_col_data(&[-1.0, 0.3, 1.0, 2.5], &[1.0, 0.0, 2.0, 1.0]);
        let m = linear_residual_model(0, &[], &[0]).unwrap();
        let ctx = MomentContext::new(&data, &m, 0.4, 1e-3).unwrap();
        assert_eq!(ctx.smoothed_moments(&[0.1]).unwrap(), ctx.unsmoothed_moments(&[0.1]).unwrap());
    }

    #[test]
    fn rejects_bad_context_and_dimensions() {
        let data = intercept_data(&[1.0, 2.0]);
        let m = linear_residual_model(0, &[], &[0]).unwrap();
        assert!(MomentContext::new(&data, &m, 0.0, 0.1).is_err());
        assert!(MomentContext::new(&data, &m, 1.0, 0.1).is_err());
        assert!(MomentContext::new(&data, &m, 0.5, 0.0).is_err());
        let tiny = MomentContext::new(&data, &m, 0.5, 1e-20).unwrap();
        assert_eq!(tiny.h, MIN_BANDWIDTH);
        let ctx = MomentContext::new(&data, &m, 0.5, 0.1).unwrap();
        assert!(ctx.smoothed_moments(&[1.0, 2.0]).is_err());
        assert!(ctx.moment_jacobian(&[]).is_err());
    }

    #[test]
    fn euler_jacobian_matches_finite_differences() {
        let y: Vec<f64> = (0..40)
            .flat_map(|i| {
                let t = i as f64;
                [1.0 + 0.01 * (t * 0.7).sin(), 1.0 + 0.008 * (t * 1.3).cos()]
            })
            .collect();
        let z: Vec<f64> = (0..40).flat_map(|i| [1.0, (i as f64 * 0.37).sin()]).collect();
        let data = Dataset::new(
            Table::new(40, 2, y).unwrap(),
            Table::new(40, 1, vec![1.0; 40]).unwrap(),
            Table::new(40, 2, z).unwrap(),
            vec![0],
        )
        .unwrap();
        let m = euler_residual_model();
        let ctx = MomentContext::new(&data, &m, 0.5, 0.02).unwrap();
        let beta = [0.995, 2.0];
        let jac = ctx.moment_jacobian(&beta).unwrap();
        let fd = fd_jacobian(&ctx, &beta);
        assert!(crate::linalg::frobenius(&(&jac - &fd)) <= 1e-6 * crate::linalg::frobenius(&fd));
    }

    pub(crate) fn fd_jacobian(ctx: &MomentContext<'_>, beta: &[f64]) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(ctx.d_z(), beta.len());
        for j in 0..beta.len() {
            let step = 1e-6 * beta[j].abs().max(1e-2);
            let mut up = beta.to_vec();
            let mut dn = beta.to_vec();
            up[j] += step;
            dn[j] -= step;
            let d = (ctx.smoothed_moments(&up).unwrap() - ctx.smoothed_moments(&dn).unwrap()) / (2.0 * step);
            out.set_column(j, &d);
        }
        out
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn smoothing_only_moves_in_window_observations(
            y in prop::collection::vec(-2.0f64..2.0, 5..30),
            beta in -1.0f64..1.0,
            h in 0.01f64..1.0,
            tau in 0.05f64..0.95,
        ) {
            let z2: Vec<f64> = y.iter().map(|v| (v * 3.1).sin()).collect();
            let data = two_col_data(&y, &z2);
            let m = linear_residual_model(0, &[], &[0]).unwrap();
            let ctx = MomentContext::new(&data, &m, tau, h).unwrap();
            let diff = ctx.smoothed_moments(&[beta]).unwrap() - ctx.unsmoothed_moments(&[beta]).unwrap();
            let r = ctx.residuals(&[beta]).unwrap();
            let bound: f64 = r.iter().enumerate()
                .filter(|(_, ri)| ri.abs() <= h)
                .map(|(i, _)| (1.0 + z2[i] * z2[i]).sqrt())
                .sum::<f64>() * 3.0 / y.len() as f64;
            prop_assert!(diff.norm() <= bound + 1e-12);
        }

        #[test]
        fn moments_bounded_and_continuous(
            y in prop::collection::vec(-2.0f64..2.0, 5..30),
            beta in -1.0f64..1.0,
            tau in 0.05f64..0.95,
        ) {
            let z2: Vec<f64> = y.iter().map(|v| 2.0 * v.cos()).collect();
            let data = two_col_data(&y, &z2);
            let m = linear_residual_model(0, &[], &[0]).unwrap();
            let ctx = MomentContext::new(&data, &m, tau, 0.5).unwrap();
            let a = ctx.smoothed_moments(&[beta]).unwrap();
            let zmax = z2.iter().map(|v| v.abs()).fold(1.0, f64::max);
            prop_assert!(a.iter().all(|v| v.abs() <= (2.0 + tau) * zmax));
            let b = ctx.smoothed_moments(&[beta + 1e-7]).unwrap();
            // Lipschitz constant max|Ĩ′|/h · max|Z| ≈ 3.3 · zmax
            prop_assert!((a - b).norm() <= 1e-7 * 4.0 * zmax * 2.0);
        }

        #[test]
        fn linear_jacobian_matches_finite_differences(
            seed in 0u64..1000,
            h in 0.05f64..2.0,
            b0 in -0.5f64..0.5,
            b1 in -0.5f64..0.5,
        ) {
            let n = 30;
            let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let mut next = || {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            };
            let y: Vec<f64> = (0..n).flat_map(|_| [next(), next()]).collect();
            let z: Vec<f64> = (0..n).flat_map(|_| [1.0, next()]).collect();
            let data = Dataset::new(
                Table::new(n, 2, y).unwrap(),
                Table::new(n, 1, vec![1.0; n]).unwrap(),
                Table::new(n, 2, z).unwrap(),
                vec![0],
            ).unwrap();
            let m = linear_residual_model(0, &[1], &[0]).unwrap();
            let ctx = MomentContext::new(&data, &m, 0.5, h).unwrap();
            let beta = [b1, b0];
            let jac = ctx.moment_jacobian(&beta).unwrap();
            let fd = fd_jacobian(&ctx, &beta);
            let scale = crate::linalg::frobenius(&fd);
            prop_assume!(scale > 1e-6);
            prop_assert!(crate::linalg::frobenius(&(&jac - &fd)) <= 1e-6 * scale);
        }
    }
}
