//! Representing functions for the reward `g(x) = (1 + x)^+`.
//!
//! ```text
//! G-(x) = (psi'(x) (1 + x) - psi(x)) / S'(x)
//! G+(x) = (phi(x) - (1 + x) phi'(x)) / S'(x)
//! ```
//!
//! Their derivatives with respect to the speed measure are
//! `dG-/dm = psi (r (1 + x) - mu(x))` and `dG+/dm = phi (mu(x) - r (1 + x))`,
//! so the sign of both is read off the affine factor `r (1 + x) - mu(x)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DiscountedModel, Side};

/// Zeros of `r (1 + x) - mu(x)` on each half-line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GStationaryPoints {
    /// `(mu1 - r) / r`, present when it lies in `(-1, 0)`, i.e. `r > mu1`.
    pub x1: Option<f64>,
    /// `(mu2 - r) / r`, present when it is positive, i.e. `r < mu2`.
    pub x0: Option<f64>,
}

pub fn stationary_points(model: &DiscountedModel) -> GStationaryPoints {
    let r = model.r();
    let x1 = (model.r() > model.mu1()).then(|| (model.mu1() - r) / r);
    let x0 = (model.r() < model.mu2()).then(|| (model.mu2() - r) / r);
    GStationaryPoints { x1, x0 }
}

/// `(x0, G-(x0))`: the local minimum of `G-` on `(0, inf)`, when `r < mu2`.
pub fn g_minus_local_min(model: &DiscountedModel) -> Option<(f64, f64)> {
    stationary_points(model).x0.map(|x0| (x0, g_minus(model, x0)))
}

pub fn g_minus(model: &DiscountedModel, x: f64) -> f64 {
    (model.psi_prime(x) * (x + 1.0) - model.psi(x)) / model.scale_density(x)
}

pub fn g_plus(model: &DiscountedModel, x: f64) -> f64 {
    (model.phi(x) - (1.0 + x) * model.phi_prime(x)) / model.scale_density(x)
}

/// `G-(x) S'(x) / psi(x) = (1 + x) psi'(x) / psi(x) - 1`.
///
/// Same zeros and sign as `G-`, but free of overflow far from the origin; the
/// root finders work on this form.
pub fn g_minus_normalized(model: &DiscountedModel, x: f64) -> f64 {
    let log_slope = if x < 0.0 {
        model.lam1_plus()
    } else {
        // psi'/psi with the decaying term factored out.
        let t = model.b2() / model.b1() * ((model.lam2_minus() - model.lam2_plus()) * x).exp();
        (model.lam2_plus() + t * model.lam2_minus()) / (1.0 + t)
    };
    (1.0 + x) * log_slope - 1.0
}

fn affine_factor(model: &DiscountedModel, x: f64, side: Side) -> f64 {
    model.r() * (1.0 + x) - model.params().drift_side(x, side)
}

fn side_of(x: f64) -> Result<Side> {
    if x < 0.0 {
        Ok(Side::Left)
    } else if x > 0.0 {
        Ok(Side::Right)
    } else {
        Err(Error::Domain(
            "speed-measure derivative is double-valued at x = 0; pick a side".into(),
        ))
    }
}

/// `dG-/dm` at `x != 0`.
pub fn g_minus_dm(model: &DiscountedModel, x: f64) -> Result<f64> {
    Ok(g_minus_dm_side(model, x, side_of(x)?))
}

pub fn g_minus_dm_side(model: &DiscountedModel, x: f64, side: Side) -> f64 {
    model.psi(x) * affine_factor(model, x, side)
}

/// `dG+/dm` at `x != 0`.
pub fn g_plus_dm(model: &DiscountedModel, x: f64) -> Result<f64> {
    Ok(g_plus_dm_side(model, x, side_of(x)?))
}

pub fn g_plus_dm_side(model: &DiscountedModel, x: f64, side: Side) -> f64 {
    -model.phi(x) * affine_factor(model, x, side)
}

fn speed_density_side(model: &DiscountedModel, x: f64, side: Side) -> f64 {
    2.0 * (2.0 * model.params().drift_side(x, side) * x).exp()
}

/// Ordinary derivative `dG-/dx = m(x) dG-/dm`.
pub fn g_minus_prime_side(model: &DiscountedModel, x: f64, side: Side) -> f64 {
    speed_density_side(model, x, side) * g_minus_dm_side(model, x, side)
}

/// Ordinary derivative `dG+/dx = m(x) dG+/dm`.
pub fn g_plus_prime_side(model: &DiscountedModel, x: f64, side: Side) -> f64 {
    speed_density_side(model, x, side) * g_plus_dm_side(model, x, side)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{make_model, ModelParams};
    use approx::assert_relative_eq;

    fn model(mu1: f64, mu2: f64, r: f64) -> DiscountedModel {
        make_model(ModelParams::new(mu1, mu2).unwrap(), r).unwrap()
    }

    #[test]
    fn values_at_zero_and_minus_one() {
        let m = model(1.0, 10.0, 3.0);
        assert_relative_eq!(g_minus(&m, 0.0), 7f64.sqrt() - 2.0, max_relative = 1e-12);
        assert_relative_eq!(g_minus(&m, 0.0), m.lam1_plus() - 1.0, max_relative = 1e-12);
        assert_relative_eq!(g_plus(&m, 0.0), 1.0 + 106f64.sqrt() + 10.0, max_relative = 1e-14);
        assert_relative_eq!(g_minus(&m, -1.0), -m.psi(-1.0) / m.scale_density(-1.0), max_relative = 1e-14);
        assert!(g_minus(&m, -1.0) < 0.0);
        assert_relative_eq!(g_plus(&m, -1.0), m.phi(-1.0) / m.scale_density(-1.0), max_relative = 1e-14);
        assert!(g_plus(&m, -1.0) > 0.0);
    }

    #[test]
    fn stationary_points_figure_one() {
        let sp = stationary_points(&model(1.0, 10.0, 3.0));
        assert_relative_eq!(sp.x0.unwrap(), 7.0 / 3.0, max_relative = 1e-15);
        assert_relative_eq!(sp.x1.unwrap(), -2.0 / 3.0, max_relative = 1e-15);
        let sp = stationary_points(&model(1.0, 10.0, 0.5));
        assert!(sp.x1.is_none());
        let sp = stationary_points(&model(1.0, 10.0, 10.0));
        assert!(sp.x0.is_none());
    }

    #[test]
    fn dm_derivative_vanishes_at_stationary_points() {
        let m = model(1.0, 10.0, 3.0);
        let sp = stationary_points(&m);
        assert!(g_minus_dm(&m, sp.x0.unwrap()).unwrap().abs() < 1e-12);
        assert!(g_minus_dm(&m, sp.x1.unwrap()).unwrap().abs() < 1e-12);
        let x1 = sp.x1.unwrap();
        assert!(g_minus_dm(&m, x1 - 0.01).unwrap() < 0.0);
        assert!(g_minus_dm(&m, x1 + 0.01).unwrap() > 0.0);
    }

    #[test]
    fn dm_derivative_needs_a_side_at_zero() {
        let m = model(0.0, 1.0, 0.7);
        assert!(matches!(g_minus_dm(&m, 0.0), Err(Error::Domain(_))));
        assert!(g_plus_dm(&m, 0.0).is_err());
        assert_relative_eq!(g_minus_dm_side(&m, 0.0, Side::Left), 0.7, max_relative = 1e-15);
        assert_relative_eq!(g_minus_dm_side(&m, 0.0, Side::Right), 0.7 - 1.0, max_relative = 1e-14);
    }

    #[test]
    fn normalized_form_has_the_sign_of_g_minus() {
        let m = model(0.0, 1.0, 0.8);
        for i in 0..400 {
            let x = -0.999 + i as f64 * 0.01;
            let a = g_minus(&m, x);
            let b = g_minus_normalized(&m, x);
            assert_eq!(a.signum(), b.signum(), "x = {x}");
            assert_relative_eq!(b * m.psi(x) / m.scale_density(x), a, max_relative = 1e-10, epsilon = 1e-14);
        }
        // no overflow far to the right
        assert!(g_minus_normalized(&m, 1e6).is_finite());
    }
}
