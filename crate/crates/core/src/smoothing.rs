//! Smoothed indicator functions.
//!
//! A smoothed indicator `Ĩ` replaces the step `1{u ≥ 0}`: it is exactly 0 for
//! `u ≤ −1`, exactly 1 for `u ≥ 1`, and a polynomial in between whose
//! derivative `Ĩ′` is a symmetric kernel of order `r`. The built-in
//! [`Order4Kernel`] is the degree-7 polynomial
//!
//! ```text
//! Ĩ(u) = 0.5 + (105/64)(u − (5/3)u³ + (7/5)u⁵ − (3/7)u⁷),   |u| ≤ 1
//! Ĩ′(u) = (105/64)(1 − 5u² + 7u⁴ − 3u⁶)
//! ```
//!
//! whose derivative integrates to one, has vanishing first three moments and a
//! fourth moment of −1/33. `Ĩ` is not monotone on (−1, 1); it overshoots to
//! about 1.045 near `u = 0.5`.

use crate::{Error, Result};

/// A smoothed indicator together with its derivative kernel.
///
/// Implementations are evaluated in hot loops and therefore take the argument
/// unchecked; callers guarantee finiteness.
pub trait SmoothKernel: Send + Sync + std::fmt::Debug {
    /// Number of the first non-vanishing moment of the derivative kernel.
    fn order(&self) -> usize;
    fn indicator(&self, u: f64) -> f64;
    fn derivative(&self, u: f64) -> f64;
    /// `∫_{-1}^{1} u^k Ĩ′(u) du`.
    fn moment(&self, k: u32) -> f64;
    fn name(&self) -> &'static str;
}

const SCALE: f64 = 105.0 / 64.0;
// Coefficients of Ĩ′ in powers of u (index = power), before SCALE.
const DERIV_COEFFS: [f64; 7] = [1.0, 0.0, -5.0, 0.0, 7.0, 0.0, -3.0];

/// The fourth-order kernel used throughout the crate.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Order4Kernel;

impl SmoothKernel for Order4Kernel {
    fn order(&self) -> usize {
        4
    }

    #[inline]
    fn indicator(&self, u: f64) -> f64 {
        if u <= -1.0 {
            0.0
        } else if u >= 1.0 {
            1.0
        } else {
            let u2 = u * u;
            // u − 5/3 u³ + 7/5 u⁵ − 3/7 u⁷ in Horner form
            let poly = u * (1.0 + u2 * (-5.0 / 3.0 + u2 * (7.0 / 5.0 + u2 * (-3.0 / 7.0))));
            0.5 + SCALE * poly
        }
    }

    #[inline]
    fn derivative(&self, u: f64) -> f64 {
        if u.abs() >= 1.0 {
            0.0
        } else {
            let u2 = u * u;
            SCALE * (1.0 + u2 * (-5.0 + u2 * (7.0 + u2 * (-3.0))))
        }
    }

    fn moment(&self, k: u32) -> f64 {
        // Exact term-by-term integration of the polynomial kernel.
        DERIV_COEFFS
            .iter()
            .enumerate()
            .filter(|(_, c)| **c != 0.0)
            .map(|(p, c)| {
                let power = k as usize + p;
                if power % 2 == 1 {
                    0.0
                } else {
                    c * 2.0 / (power as f64 + 1.0)
                }
            })
            .sum::<f64>()
            * SCALE
    }

    fn name(&self) -> &'static str {
        "order4-polynomial"
    }
}

fn check_finite(u: f64) -> Result<()> {
    if u.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("kernel argument must be finite, got {u}")))
    }
}

/// `Ĩ(u)` for the built-in kernel, rejecting non-finite input.
pub fn smoothed_indicator(u: f64) -> Result<f64> {
    check_finite(u)?;
    Ok(Order4Kernel.indicator(u))
}

/// `Ĩ′(u)` for the built-in kernel, rejecting non-finite input. Defined as 0 at ±1.
pub fn smoothed_indicator_deriv(u: f64) -> Result<f64> {
    check_finite(u)?;
    Ok(Order4Kernel.derivative(u))
}

/// `∫_{-1}^{1} u^k Ĩ′(u) du` for the built-in kernel.
pub fn kernel_moment(k: u32) -> f64 {
    Order4Kernel.moment(k)
}
