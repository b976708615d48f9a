//! Central finite-difference gradient checks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub op_name: String,
    pub max_relative_error: f64,
    pub element_count: usize,
    /// Element with the largest error, with its analytic and numeric values.
    pub worst_element: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    pub pass: bool,
}

/// Finite-difference stencil.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stencil {
    /// `(f(x+h) − f(x−h)) / 2h`
    Central2,
    /// `(8(f(x+h) − f(x−h)) − (f(x+2h) − f(x−2h))) / 12h`
    Central4,
    /// `Central4` at steps `step · ADAPTIVE_RATIO^k` for
    /// `k = 0..ADAPTIVE_LEVELS`, combined by Richardson extrapolation.
    Adaptive,
}

pub const ADAPTIVE_LEVELS: usize = 8;
pub const ADAPTIVE_RATIO: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradCheckConfig {
    /// Per-coordinate step is `step · max(1, |x_i|)`.
    pub step: f64,
    pub tolerance: f64,
    pub stencil: Stencil,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-6,
            tolerance: 1e-5,
            stencil: Stencil::Central2,
        }
    }
}

/// Relative-error denominator floor.
pub const DENOM_FLOOR: f64 = 1e-8;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(DENOM_FLOOR)
}

fn central4(at: &mut impl FnMut(f64) -> Result<f64>, h: f64) -> Result<f64> {
    let near = at(h)? - at(-h)?;
    let far = at(2.0 * h)? - at(-2.0 * h)?;
    Ok((8.0 * near - far) / (12.0 * h))
}

/// Compares `analytic` with central differences of the scalar function `f`
/// around `point`.
pub fn grad_check(
    op_name: &str,
    f: impl Fn(&[f64]) -> Result<f64>,
    point: &[f64],
    analytic: &[f64],
    config: &GradCheckConfig,
) -> Result<GradCheckReport> {
    grad_check_piecewise(op_name, |x| f(x).map(|v| (v, ())), point, analytic, config)
}

/// Like [`grad_check`] for a piecewise-smooth `f` that also returns a label
/// of the smooth piece containing its argument. The adaptive stencil only
/// uses steps whose evaluation points all share the label of `point`.
pub fn grad_check_piecewise<S: PartialEq>(
    op_name: &str,
    f: impl Fn(&[f64]) -> Result<(f64, S)>,
    point: &[f64],
    analytic: &[f64],
    config: &GradCheckConfig,
) -> Result<GradCheckReport> {
    if analytic.len() != point.len() {
        return Err(Error::Dimension {
            op: "grad_check",
            lhs: (point.len(), 1),
            rhs: (analytic.len(), 1),
        });
    }
    let eval = |x: &[f64]| -> Result<(f64, S)> {
        let (v, piece) = f(x)?;
        if !v.is_finite() {
            return Err(Error::Numeric(op_name.to_string()));
        }
        Ok((v, piece))
    };
    let (f0, piece0) = eval(point)?;
    let mut x = point.to_vec();
    let mut worst = 0.0_f64;
    let (mut worst_element, mut worst_analytic, mut worst_numeric) = (0, 0.0, 0.0);
    for i in 0..point.len() {
        if !analytic[i].is_finite() {
            return Err(Error::Numeric(op_name.to_string()));
        }
        let orig = point[i];
        // Snap the step so that `orig + h` is exactly representable.
        let snap = |step: f64| (orig + step * orig.abs().max(1.0)) - orig;
        let same_piece = std::cell::Cell::new(true);
        let mut at = |offset: f64| -> Result<f64> {
            x[i] = orig + offset;
            let v = eval(&x);
            x[i] = orig;
            let (v, piece) = v?;
            if piece != piece0 {
                same_piece.set(false);
            }
            Ok(v)
        };
        let h = snap(config.step);
        let numeric = match config.stencil {
            Stencil::Central2 => (at(h)? - at(-h)?) / (2.0 * h),
            Stencil::Central4 => central4(&mut at, h)?,
            Stencil::Adaptive => {
                let mut estimates = Vec::with_capacity(ADAPTIVE_LEVELS);
                let mut steps = Vec::with_capacity(ADAPTIVE_LEVELS);
                for k in 0..ADAPTIVE_LEVELS {
                    let hk = snap(config.step * ADAPTIVE_RATIO.powi(k as i32));
                    let estimate = central4(&mut at, hk)?;
                    // The smallest step is always kept.
                    if k > 0 && !same_piece.get() {
                        break;
                    }
                    estimates.push(estimate);
                    steps.push(hk);
                }
                adaptive_estimate(&estimates, &steps, f0)
            }
        };
        let err = relative_error(analytic[i], numeric);
        if err > worst || i == 0 {
            worst = worst.max(err);
            worst_element = i;
            worst_analytic = analytic[i];
            worst_numeric = numeric;
        }
    }
    Ok(GradCheckReport {
        op_name: op_name.to_string(),
        max_relative_error: worst,
        element_count: point.len(),
        worst_element,
        worst_analytic,
        worst_numeric,
        pass: worst <= config.tolerance,
    })
}

/// Chooses among the `Central4` estimates at increasing `steps`. Each
/// neighbouring pair is combined by one Richardson step (the `Central4`
/// error is `c·h⁴` to leading order); the result with the smallest error
/// estimate wins, where the estimate is the disagreement with the next
/// larger step plus rounding noise `10·ε·|f|/h`.
fn adaptive_estimate(estimates: &[f64], steps: &[f64], f0: f64) -> f64 {
    const R4: f64 = ADAPTIVE_RATIO * ADAPTIVE_RATIO * ADAPTIVE_RATIO * ADAPTIVE_RATIO;
    match estimates.len() {
        0..=2 => estimates[0],
        n => {
            let extrapolated: Vec<f64> = (0..n - 1)
                .map(|k| (R4 * estimates[k] - estimates[k + 1]) / (R4 - 1.0))
                .collect();
            let error = |k: usize| {
                (extrapolated[k] - extrapolated[k + 1]).abs() + 10.0 * f64::EPSILON * f0.abs().max(1.0) / steps[k]
            };
            let best = (0..extrapolated.len() - 1)
                .min_by(|&a, &b| error(a).total_cmp(&error(b)))
                .unwrap_or(0);
            extrapolated[best]
        }
    }
}
