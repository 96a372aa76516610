//! Characteristics of Brownian motion with broken drift.
//!
//! Scale derivative and speed density:
//!
//! ```text
//! S'(x) = exp(-2 mu(x) x)        m(x) = 2 exp(2 mu(x) x)
//! ```
//!
//! For a discount rate `r > 0` the fundamental solutions of
//! `(1/2) u'' + mu(x) u' = r u` are
//!
//! ```text
//! psi(x) = exp(l1p x)                          x < 0
//!        = B1 exp(l2p x) + B2 exp(l2m x)       x >= 0
//! phi(x) = A1 exp(l1m x) + A2 exp(l1p x)       x < 0
//!        = exp(l2m x)                          x >= 0
//! ```
//!
//! with `l_i^{+-} = -mu_i +- sqrt(mu_i^2 + 2 r)` and the coefficients chosen so
//! that both functions are C^1 at the drift break.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest exponent we allow before `exp` gets close to overflow.
const MAX_EXPONENT: f64 = 700.0;

/// Side of a point where a function is only one-sided differentiable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    Left,
    Right,
}

/// Drifts `mu1` (x < 0) and `mu2` (x >= 0), with `0 <= mu1 < mu2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    mu1: f64,
    mu2: f64,
}

impl ModelParams {
    pub fn new(mu1: f64, mu2: f64) -> Result<Self> {
        if !mu1.is_finite() || !mu2.is_finite() {
            return Err(Error::Domain(format!("drifts must be finite (mu1 = {mu1}, mu2 = {mu2})")));
        }
        if mu1 < 0.0 {
            return Err(Error::Domain(format!("mu1 must be nonnegative, got {mu1}")));
        }
        if mu1 >= mu2 {
            return Err(Error::Domain(format!("need mu1 < mu2, got mu1 = {mu1}, mu2 = {mu2}")));
        }
        Ok(Self { mu1, mu2 })
    }

    /// Equal drifts on both half-lines: plain Brownian motion with drift `mu`.
    ///
    /// Only available with the `classical` feature; the threshold then has the
    /// closed form `1 / l1p - 1` and serves as an oracle for the solver.
    #[cfg(feature = "classical")]
    pub fn equal_drift(mu: f64) -> Result<Self> {
        if !mu.is_finite() || mu < 0.0 {
            return Err(Error::Domain(format!("drift must be finite and nonnegative, got {mu}")));
        }
        Ok(Self { mu1: mu, mu2: mu })
    }

    pub fn mu1(&self) -> f64 {
        self.mu1
    }

    pub fn mu2(&self) -> f64 {
        self.mu2
    }

    /// True when the drift gap exceeds 1/2, the family where a bubble can form.
    pub fn wide_gap(&self) -> bool {
        self.mu2 > self.mu1 + 0.5
    }

    pub fn drift(&self, x: f64) -> f64 {
        if x < 0.0 {
            self.mu1
        } else {
            self.mu2
        }
    }

    /// Drift on one side of `x` (matters only at `x = 0`).
    pub fn drift_side(&self, x: f64, side: Side) -> f64 {
        if x < 0.0 || (x == 0.0 && side == Side::Left) {
            self.mu1
        } else {
            self.mu2
        }
    }

    /// Scale function, normalized by `S(0) = 0` and `S'(0) = 1`.
    pub fn scale(&self, x: f64) -> f64 {
        let mu = self.drift(x);
        // (1 - exp(-2 mu x)) / (2 mu); the mu -> 0 limit is x.
        if mu == 0.0 {
            x
        } else {
            -(-2.0 * mu * x).exp_m1() / (2.0 * mu)
        }
    }

    pub fn scale_density(&self, x: f64) -> f64 {
        (-2.0 * self.drift(x) * x).exp()
    }

    /// Speed density `m(x) = 2 exp(2 mu(x) x)`; right-continuous at 0.
    pub fn speed_density(&self, x: f64) -> f64 {
        2.0 * (2.0 * self.drift(x) * x).exp()
    }

    /// Speed measure of `(lo, hi]`.
    pub fn speed_measure(&self, lo: f64, hi: f64) -> f64 {
        self.speed_cumulative(hi) - self.speed_cumulative(lo)
    }

    // Antiderivative of the speed density vanishing at 0.
    fn speed_cumulative(&self, x: f64) -> f64 {
        let mu = self.drift(x);
        if mu == 0.0 {
            2.0 * x
        } else {
            (2.0 * mu * x).exp_m1() / mu
        }
    }
}

/// A broken-drift model together with a discount rate and its exponents.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscountedModel {
    params: ModelParams,
    r: f64,
    lam1_minus: f64,
    lam1_plus: f64,
    lam2_minus: f64,
    lam2_plus: f64,
    a1: f64,
    a2: f64,
    b1: f64,
    b2: f64,
}

/// `sqrt(mu^2 + 2r) - mu` without cancellation for small `r`.
fn positive_root(mu: f64, s: f64, r: f64) -> f64 {
    if mu > 0.0 {
        2.0 * r / (s + mu)
    } else {
        s - mu
    }
}

pub fn make_model(params: ModelParams, r: f64) -> Result<DiscountedModel> {
    if !r.is_finite() || r <= 0.0 {
        return Err(Error::Domain(format!("discount rate must be positive and finite, got {r}")));
    }
    let (mu1, mu2) = (params.mu1, params.mu2);
    let s1 = (mu1 * mu1 + 2.0 * r).sqrt();
    let s2 = (mu2 * mu2 + 2.0 * r).sqrt();
    let lam1_plus = positive_root(mu1, s1, r);
    let lam1_minus = -s1 - mu1;
    let lam2_plus = positive_root(mu2, s2, r);
    let lam2_minus = -s2 - mu2;

    let a1 = (lam1_plus - lam2_minus) / (2.0 * s1);
    let a2 = (lam2_minus - lam1_minus) / (2.0 * s1);
    let b1 = (lam1_plus - lam2_minus) / (2.0 * s2);
    let b2 = (lam2_plus - lam1_plus) / (2.0 * s2);

    Ok(DiscountedModel {
        params,
        r,
        lam1_minus,
        lam1_plus,
        lam2_minus,
        lam2_plus,
        a1,
        a2,
        b1,
        b2,
    })
}

impl DiscountedModel {
    pub fn new(params: ModelParams, r: f64) -> Result<Self> {
        make_model(params, r)
    }

    pub fn params(&self) -> ModelParams {
        self.params
    }

    pub fn mu1(&self) -> f64 {
        self.params.mu1
    }

    pub fn mu2(&self) -> f64 {
        self.params.mu2
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn lam1_minus(&self) -> f64 {
        self.lam1_minus
    }

    pub fn lam1_plus(&self) -> f64 {
        self.lam1_plus
    }

    pub fn lam2_minus(&self) -> f64 {
        self.lam2_minus
    }

    pub fn lam2_plus(&self) -> f64 {
        self.lam2_plus
    }

    pub fn a1(&self) -> f64 {
        self.a1
    }

    pub fn a2(&self) -> f64 {
        self.a2
    }

    pub fn b1(&self) -> f64 {
        self.b1
    }

    pub fn b2(&self) -> f64 {
        self.b2
    }

    /// Half-width of the interval on which every exponential stays finite.
    pub fn window(&self) -> f64 {
        let largest = self
            .lam1_plus
            .abs()
            .max(self.lam1_minus.abs())
            .max(self.lam2_plus.abs())
            .max(self.lam2_minus.abs());
        MAX_EXPONENT / largest
    }

    pub fn ensure_in_window(&self, x: f64) -> Result<()> {
        let limit = self.window();
        if x.is_finite() && x.abs() <= limit {
            Ok(())
        } else {
            Err(Error::Range { x, limit })
        }
    }

    pub fn psi(&self, x: f64) -> f64 {
        if x < 0.0 {
            (self.lam1_plus * x).exp()
        } else {
            self.b1 * (self.lam2_plus * x).exp() + self.b2 * (self.lam2_minus * x).exp()
        }
    }

    pub fn psi_prime(&self, x: f64) -> f64 {
        if x < 0.0 {
            self.lam1_plus * (self.lam1_plus * x).exp()
        } else {
            self.b1 * self.lam2_plus * (self.lam2_plus * x).exp()
                + self.b2 * self.lam2_minus * (self.lam2_minus * x).exp()
        }
    }

    /// Second derivative; it jumps at 0, the right-hand value is returned there.
    pub fn psi_second(&self, x: f64) -> f64 {
        self.psi_second_side(x, Side::Right)
    }

    pub fn psi_second_side(&self, x: f64, side: Side) -> f64 {
        if x < 0.0 || (x == 0.0 && side == Side::Left) {
            self.lam1_plus * self.lam1_plus * (self.lam1_plus * x).exp()
        } else {
            let (p, m) = (self.lam2_plus, self.lam2_minus);
            self.b1 * p * p * (p * x).exp() + self.b2 * m * m * (m * x).exp()
        }
    }

    pub fn phi(&self, x: f64) -> f64 {
        if x < 0.0 {
            self.a1 * (self.lam1_minus * x).exp() + self.a2 * (self.lam1_plus * x).exp()
        } else {
            (self.lam2_minus * x).exp()
        }
    }

    pub fn phi_prime(&self, x: f64) -> f64 {
        if x < 0.0 {
            self.a1 * self.lam1_minus * (self.lam1_minus * x).exp()
                + self.a2 * self.lam1_plus * (self.lam1_plus * x).exp()
        } else {
            self.lam2_minus * (self.lam2_minus * x).exp()
        }
    }

    pub fn phi_second(&self, x: f64) -> f64 {
        self.phi_second_side(x, Side::Right)
    }

    pub fn phi_second_side(&self, x: f64, side: Side) -> f64 {
        if x < 0.0 || (x == 0.0 && side == Side::Left) {
            let (m, p) = (self.lam1_minus, self.lam1_plus);
            self.a1 * m * m * (m * x).exp() + self.a2 * p * p * (p * x).exp()
        } else {
            let m = self.lam2_minus;
            m * m * (m * x).exp()
        }
    }

    /// `psi(x) / psi(y)` evaluated without forming either factor when both
    /// points lie on the same exponential branch of the negative half-line.
    pub fn psi_ratio(&self, x: f64, y: f64) -> f64 {
        if x < 0.0 && y < 0.0 {
            (self.lam1_plus * (x - y)).exp()
        } else {
            self.psi(x) / self.psi(y)
        }
    }

    /// Wronskian `(psi' phi - psi phi') / S'`, constant in `x`.
    pub fn wronskian(&self) -> f64 {
        self.lam1_plus - self.lam2_minus
    }

    pub fn scale_density(&self, x: f64) -> f64 {
        self.params.scale_density(x)
    }

    pub fn speed_density(&self, x: f64) -> f64 {
        self.params.speed_density(x)
    }

    pub fn drift(&self, x: f64) -> f64 {
        self.params.drift(x)
    }
}

/// Uniform grid of `n >= 2` points on `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    lo: f64,
    hi: f64,
    n: usize,
}

impl Grid {
    pub fn new(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::Domain(format!("grid needs finite lo < hi, got [{lo}, {hi}]")));
        }
        if n < 2 {
            return Err(Error::Domain(format!("grid needs at least 2 points, got {n}")));
        }
        Ok(Self { lo, hi, n })
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn point(&self, i: usize) -> f64 {
        if i + 1 == self.n {
            return self.hi;
        }
        let t = i as f64 / (self.n - 1) as f64;
        self.lo + t * (self.hi - self.lo)
    }

    pub fn points(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n).map(move |i| self.point(i))
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.points().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn fig1() -> DiscountedModel {
        make_model(ModelParams::new(1.0, 10.0).unwrap(), 3.0).unwrap()
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(ModelParams::new(1.0, 1.0).is_err());
        assert!(ModelParams::new(2.0, 1.0).is_err());
        assert!(ModelParams::new(-0.1, 1.0).is_err());
        assert!(ModelParams::new(0.0, f64::INFINITY).is_err());
        let p = ModelParams::new(0.0, 1.0).unwrap();
        assert!(matches!(make_model(p, 0.0), Err(Error::Domain(_))));
        assert!(make_model(p, -1.0).is_err());
        assert!(make_model(p, f64::NAN).is_err());
    }

    #[test]
    fn figure_one_coefficients() {
        let m = fig1();
        let s1 = 7f64.sqrt();
        let s2 = 106f64.sqrt();
        assert_relative_eq!(m.lam1_plus(), s1 - 1.0, max_relative = 1e-14);
        assert_relative_eq!(m.lam1_minus(), -s1 - 1.0, max_relative = 1e-14);
        assert_relative_eq!(m.lam2_minus(), -s2 - 10.0, max_relative = 1e-14);
        assert_relative_eq!(m.lam2_plus(), s2 - 10.0, max_relative = 1e-13);
        // (l1p - l2m) / (2 s1) etc. evaluated by hand.
        let a1 = (s1 - 1.0 + s2 + 10.0) / (2.0 * s1);
        let b1 = (s1 - 1.0 + s2 + 10.0) / (2.0 * s2);
        assert_relative_eq!(m.a1(), a1, max_relative = 1e-14);
        assert_relative_eq!(m.b1(), b1, max_relative = 1e-14);
        assert!((m.a1() - 4.146531).abs() < 1e-6);
        assert!((m.a2() + 3.146531).abs() < 1e-6);
        assert!((m.b1() - 1.065568).abs() < 1e-6);
        assert!((m.b2() + 0.065568).abs() < 1e-6);
        assert!((m.a1() + m.a2() - 1.0).abs() <= 4.0 * f64::EPSILON * m.a1().abs());
        assert!((m.b1() + m.b2() - 1.0).abs() <= 4.0 * f64::EPSILON * m.b1().abs());
    }

    #[test]
    fn scale_and_speed_at_origin() {
        let p = ModelParams::new(1.0, 10.0).unwrap();
        assert_eq!(p.scale(0.0), 0.0);
        assert_eq!(p.scale_density(0.0), 1.0);
        assert_eq!(p.speed_density(0.0), 2.0);
        assert_relative_eq!(p.scale_density(-1.0), 1f64.exp().powi(2), max_relative = 1e-15);
        assert_relative_eq!(p.scale_density(1.0), (-20f64).exp(), max_relative = 1e-15);
        let p0 = ModelParams::new(0.0, 1.0).unwrap();
        assert_eq!(p0.scale(-2.0), -2.0);
        assert_eq!(p0.speed_measure(-1.0, 0.0), 2.0);
    }

    #[test]
    fn scale_matches_integrated_density() {
        let p = ModelParams::new(0.3, 1.7).unwrap();
        for &x in &[-2.0, -0.5, 0.4, 1.5] {
            // Simpson on [0, x].
            let n = 2000;
            let h = x / n as f64;
            let mut s = p.scale_density(0.0) + p.scale_density(x);
            for i in 1..n {
                let w = if i % 2 == 1 { 4.0 } else { 2.0 };
                s += w * p.scale_density(i as f64 * h);
            }
            assert_relative_eq!(p.scale(x), s * h / 3.0, max_relative = 1e-10);
        }
    }

    #[test]
    fn values_at_origin_and_figure_one_points() {
        let m = fig1();
        assert_relative_eq!(m.psi(0.0), 1.0, max_relative = 1e-15);
        assert_relative_eq!(m.phi(0.0), 1.0, max_relative = 1e-15);
        assert_relative_eq!(m.psi_prime(0.0), m.lam1_plus(), max_relative = 1e-13);
        assert_relative_eq!(m.psi_prime(-0.0f64.next_down()), m.lam1_plus(), max_relative = 1e-13);
        assert_relative_eq!(m.phi_prime(0.0), m.lam2_minus(), max_relative = 1e-15);
        assert_relative_eq!(m.phi_prime(-1e-300), m.lam2_minus(), max_relative = 1e-13);
        assert_relative_eq!(m.psi(-1.0), (1.0 - 7f64.sqrt()).exp(), max_relative = 1e-14);
        assert_relative_eq!(m.phi(1.0), (-20.295630140987f64).exp(), max_relative = 1e-11);
    }

    #[test]
    fn equal_drift_limit_of_coefficients() {
        let mu1 = 1.0;
        let mut prev = f64::INFINITY;
        for k in 1..12 {
            let eps = 10f64.powi(-k);
            let m = make_model(ModelParams::new(mu1, mu1 + eps).unwrap(), 3.0).unwrap();
            let dev = (m.a1() - 1.0).abs() + m.a2().abs() + (m.b1() - 1.0).abs() + m.b2().abs();
            assert!(dev < prev);
            prev = dev;
            let s = (mu1 * mu1 + 6.0f64).sqrt();
            for &x in &[-1.0, -0.2, 0.3, 1.0] {
                let psi_single = ((s - mu1) * x).exp();
                let phi_single = ((-s - mu1) * x).exp();
                assert!((m.psi(x) / psi_single - 1.0).abs() < 20.0 * eps);
                assert!((m.phi(x) / phi_single - 1.0).abs() < 20.0 * eps);
            }
        }
        assert!(prev < 1e-9);
    }

    #[test]
    fn window_rejects_far_points() {
        let m = fig1();
        assert!(m.ensure_in_window(1.0).is_ok());
        assert!(matches!(m.ensure_in_window(1e6), Err(Error::Range { .. })));
        assert!(m.psi(m.window()).is_finite());
        assert!(m.phi(-m.window()).is_finite());
    }

    #[test]
    fn grid_points() {
        let g = Grid::new(-1.0, 1.0, 5).unwrap();
        assert_eq!(g.to_vec(), vec![-1.0, -0.5, 0.0, 0.5, 1.0]);
        assert!(Grid::new(1.0, 1.0, 5).is_err());
        assert!(Grid::new(0.0, 1.0, 1).is_err());
    }
}
