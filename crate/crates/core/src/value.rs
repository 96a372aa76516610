//! Piecewise value function and its optimality certificate.
//!
//! On the continuation set the value is `r`-harmonic, a combination of `psi`
//! and `phi`; on the stopping set it equals the reward `1 + x`. A candidate
//! is certified optimal when
//!
//! - `I_V = (psi' V - psi V') / S'` is nondecreasing,
//! - `D_V = (phi V' - V phi') / S'` is nonincreasing,
//! - `V >= g` everywhere, and
//! - `V'` is continuous at every stopping boundary (smooth fit).
//!
//! The first two conditions say that `V` carries a nonnegative representing
//! measure, i.e. that it is `r`-excessive.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{make_model, DiscountedModel, ModelParams, Side};
use crate::solver::{StoppingRegion, Tolerances};

/// Default number of grid points used by [`verify`].
pub const DEFAULT_VERIFY_POINTS: usize = 8192;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum Form {
    /// `k psi(x)`
    PsiScaled { k: f64 },
    /// `1 + x`
    Reward,
    /// `alpha psi(x) + beta phi(x)`
    Harmonic { alpha: f64, beta: f64 },
}

/// A form on the interval `[lo, hi]`; `lo` may be `-inf`, `hi` may be `+inf`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub lo: f64,
    pub hi: f64,
    pub form: Form,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueFunction {
    model: DiscountedModel,
    region: StoppingRegion,
    segments: Vec<Segment>,
}

pub fn reward(x: f64) -> f64 {
    (1.0 + x).max(0.0)
}

/// One-sided derivative of the reward; it jumps from 0 to 1 at `x = -1`.
pub fn reward_deriv(x: f64, side: Side) -> f64 {
    if x > -1.0 || (x == -1.0 && side == Side::Right) {
        1.0
    } else {
        0.0
    }
}

pub fn build_value(model: &DiscountedModel, region: StoppingRegion) -> Result<ValueFunction> {
    region.check_shape()?;
    let psi_scaled = |c: f64| Form::PsiScaled { k: (1.0 + c) / model.psi(c) };
    let ninf = f64::NEG_INFINITY;
    let inf = f64::INFINITY;

    let segments = match region {
        StoppingRegion::OneSided { c } => vec![
            Segment { lo: ninf, hi: c, form: psi_scaled(c) },
            Segment { lo: c, hi: inf, form: Form::Reward },
        ],
        StoppingRegion::Bubble { c1, c2, c3 } => {
            let (alpha, beta) = fit_harmonic(model, c2)?;
            let mut segs = vec![Segment { lo: ninf, hi: c1, form: psi_scaled(c1) }];
            if c2 > c1 {
                segs.push(Segment { lo: c1, hi: c2, form: Form::Reward });
            }
            segs.push(Segment { lo: c2, hi: c3, form: Form::Harmonic { alpha, beta } });
            segs.push(Segment { lo: c3, hi: inf, form: Form::Reward });
            segs
        }
    };
    Ok(ValueFunction { model: *model, region, segments })
}

/// `alpha psi + beta phi` matching value `1 + z` and slope 1 at `z`.
fn fit_harmonic(model: &DiscountedModel, z: f64) -> Result<(f64, f64)> {
    let (p, dp) = (model.psi(z), model.psi_prime(z));
    let (q, dq) = (model.phi(z), model.phi_prime(z));
    let det = p * dq - q * dp;
    if det == 0.0 || !det.is_finite() {
        return Err(Error::Singular(format!("psi/phi matrix at {z} has determinant {det}")));
    }
    let rhs = (1.0 + z, 1.0);
    let alpha = (rhs.0 * dq - q * rhs.1) / det;
    let beta = (p * rhs.1 - dp * rhs.0) / det;
    Ok((alpha, beta))
}

impl ValueFunction {
    /// Solves for the stopping region with the default solver and builds `V`.
    pub fn solve(params: &ModelParams, r: f64) -> Result<Self> {
        let region = crate::solver::default_solver().stopping_region(params, r)?;
        build_value(&make_model(*params, r)?, region)
    }

    pub fn model(&self) -> &DiscountedModel {
        &self.model
    }

    pub fn region(&self) -> StoppingRegion {
        self.region
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    fn segment(&self, x: f64, side: Side) -> &Segment {
        let found = match side {
            Side::Right => self.segments.iter().find(|s| x < s.hi),
            Side::Left => self.segments.iter().find(|s| x <= s.hi),
        };
        found.unwrap_or_else(|| self.segments.last().expect("value function has segments"))
    }

    fn form_value(&self, form: Form, x: f64) -> f64 {
        let m = &self.model;
        match form {
            Form::PsiScaled { k } => k * m.psi(x),
            Form::Reward => 1.0 + x,
            Form::Harmonic { alpha, beta } => alpha * m.psi(x) + beta * m.phi(x),
        }
    }

    fn form_deriv(&self, form: Form, x: f64) -> f64 {
        let m = &self.model;
        match form {
            Form::PsiScaled { k } => k * m.psi_prime(x),
            Form::Reward => 1.0,
            Form::Harmonic { alpha, beta } => alpha * m.psi_prime(x) + beta * m.phi_prime(x),
        }
    }

    fn form_second(&self, form: Form, x: f64, side: Side) -> f64 {
        let m = &self.model;
        match form {
            Form::PsiScaled { k } => k * m.psi_second_side(x, side),
            Form::Reward => 0.0,
            Form::Harmonic { alpha, beta } => {
                alpha * m.psi_second_side(x, side) + beta * m.phi_second_side(x, side)
            }
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.form_value(self.segment(x, Side::Right).form, x)
    }

    /// Right derivative (the two sides agree at smooth-fit boundaries).
    pub fn eval_deriv(&self, x: f64) -> f64 {
        self.eval_deriv_side(x, Side::Right)
    }

    pub fn eval_deriv_side(&self, x: f64, side: Side) -> f64 {
        self.form_deriv(self.segment(x, side).form, x)
    }

    pub fn eval_second_side(&self, x: f64, side: Side) -> f64 {
        self.form_second(self.segment(x, side).form, x, side)
    }

    /// Interior segment boundaries (the finite `lo` ends), increasing.
    pub fn breakpoints(&self) -> Vec<f64> {
        self.segments.iter().map(|s| s.lo).filter(|x| x.is_finite()).collect()
    }

    /// `(|V(c3) - (1 + c3)|, |V'(c3-) - 1|)` for the harmonic piece of a bubble.
    pub fn far_end_mismatch(&self) -> Option<(f64, f64)> {
        let seg = self.segments.iter().find(|s| matches!(s.form, Form::Harmonic { .. }))?;
        let c3 = seg.hi;
        let v = self.form_value(seg.form, c3);
        let dv = self.form_deriv(seg.form, c3);
        Some(((v - (1.0 + c3)).abs(), (dv - 1.0).abs()))
    }

    /// `I_V` at `x`, using the one-sided derivative from `side`.
    pub fn representing_increasing(&self, x: f64, side: Side) -> f64 {
        let m = &self.model;
        (m.psi_prime(x) * self.eval(x) - m.psi(x) * self.eval_deriv_side(x, side)) / m.scale_density(x)
    }

    /// `D_V` at `x`, using the one-sided derivative from `side`.
    pub fn representing_decreasing(&self, x: f64, side: Side) -> f64 {
        let m = &self.model;
        (m.phi(x) * self.eval_deriv_side(x, side) - self.eval(x) * m.phi_prime(x)) / m.scale_density(x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcessivityCheck {
    /// Number of (point, side) samples along the grid.
    pub samples: usize,
    /// Largest relative decrease of `I_V` between consecutive samples.
    pub i_violation: f64,
    pub i_violation_at: f64,
    /// Largest relative increase of `D_V` between consecutive samples.
    pub d_violation: f64,
    pub d_violation_at: f64,
    /// `r (1 + x) - mu(x) >= 0` on every reward piece, i.e. `dG-/dm >= 0` there.
    pub reward_pieces_ok: bool,
    pub pass: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MajorantCheck {
    pub min_gap: f64,
    pub argmin: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothFitCheck {
    pub point: f64,
    pub residual: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub grid_points: usize,
    pub grid_lo: f64,
    pub grid_hi: f64,
    pub excessive: ExcessivityCheck,
    pub majorant: MajorantCheck,
    pub smooth_fit: Vec<SmoothFitCheck>,
    /// Value and slope mismatch at `c3` for a bubble (not imposed by the fit).
    pub far_end_mismatch: Option<(f64, f64)>,
    pub tolerances: Tolerances,
    pub pass: bool,
}

/// Relative monotonicity violations of `I_V` and `D_V` along `grid`.
///
/// `grid` must be increasing; at segment boundaries both one-sided values are
/// sampled.
pub fn verify_excessive(vf: &ValueFunction, grid: &[f64], tol: f64) -> ExcessivityCheck {
    let m = vf.model();
    let breaks = vf.breakpoints();
    let mut samples: Vec<(f64, f64, f64, f64, f64)> = Vec::with_capacity(grid.len() + 8);
    let mut push = |x: f64, side: Side| {
        let (v, dv) = (vf.eval(x), vf.eval_deriv_side(x, side));
        let s = m.scale_density(x);
        let i = (m.psi_prime(x) * v - m.psi(x) * dv) / s;
        let d = (m.phi(x) * dv - v * m.phi_prime(x)) / s;
        let i_scale = ((m.psi_prime(x) * v).abs() + (m.psi(x) * dv).abs()) / s;
        let d_scale = ((m.phi(x) * dv).abs() + (v * m.phi_prime(x)).abs()) / s;
        samples.push((x, i, d, i_scale, d_scale));
    };
    for &x in grid {
        if breaks.contains(&x) {
            push(x, Side::Left);
            push(x, Side::Right);
        } else {
            push(x, Side::Right);
        }
    }

    let (mut i_violation, mut i_at, mut d_violation, mut d_at) = (0.0f64, f64::NAN, 0.0f64, f64::NAN);
    for w in samples.windows(2) {
        let (a, b) = (w[0], w[1]);
        let i_rel = (a.1 - b.1) / a.3.max(b.3).max(1.0);
        if i_rel > i_violation {
            i_violation = i_rel;
            i_at = b.0;
        }
        let d_rel = (b.2 - a.2) / a.4.max(b.4).max(1.0);
        if d_rel > d_violation {
            d_violation = d_rel;
            d_at = b.0;
        }
    }

    let reward_pieces_ok = reward_pieces_ok(vf, tol);
    ExcessivityCheck {
        samples: samples.len(),
        i_violation,
        i_violation_at: i_at,
        d_violation,
        d_violation_at: d_at,
        reward_pieces_ok,
        pass: i_violation <= tol && d_violation <= tol && reward_pieces_ok,
    }
}

// dG-/dm = psi (r (1 + x) - mu(x)) is affine-increasing in x on each
// half-line, so checking the left end of each half of a reward piece suffices.
fn reward_pieces_ok(vf: &ValueFunction, tol: f64) -> bool {
    let m = vf.model();
    let r = m.r();
    let slack = tol * r.max(m.mu2()).max(1.0);
    vf.segments().iter().filter(|s| s.form == Form::Reward).all(|s| {
        let left_ok = s.lo >= 0.0 || r * (1.0 + s.lo) - m.mu1() >= -slack;
        let right_ok = s.hi <= 0.0 || r * (1.0 + s.lo.max(0.0)) - m.mu2() >= -slack;
        left_ok && right_ok
    })
}

/// `min (V - g)` over `grid`.
pub fn verify_majorant(vf: &ValueFunction, grid: &[f64], tol: f64) -> MajorantCheck {
    let (mut min_gap, mut argmin) = (f64::INFINITY, f64::NAN);
    for &x in grid {
        let gap = vf.eval(x) - reward(x);
        if gap < min_gap {
            min_gap = gap;
            argmin = x;
        }
    }
    MajorantCheck { min_gap, argmin, pass: min_gap >= -tol }
}

/// `|V'(z-) - V'(z+)|`.
pub fn smooth_fit_residual(vf: &ValueFunction, z: f64) -> f64 {
    (vf.eval_deriv_side(z, Side::Left) - vf.eval_deriv_side(z, Side::Right)).abs()
}

/// Grid over the interesting range, refined geometrically around every
/// boundary, around `-1` and around the drift break.
pub fn verification_grid(vf: &ValueFunction, n: usize) -> Vec<f64> {
    let mut anchors = vf.region().boundaries();
    anchors.extend([-1.0, 0.0]);
    let lo_anchor = anchors.iter().copied().fold(f64::INFINITY, f64::min);
    let hi_anchor = anchors.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let limit = 0.9 * vf.model().window();
    let lo = (lo_anchor - 2.0).max(-limit);
    let hi = (hi_anchor + 2.0).min(limit);

    const LEVELS: i32 = 24;
    let refined = anchors.len() * (2 * LEVELS as usize + 1);
    let base = n.saturating_sub(refined).max(2);
    let mut pts: Vec<f64> = (0..base)
        .map(|i| lo + (hi - lo) * i as f64 / (base - 1) as f64)
        .collect();
    for &z in &anchors {
        pts.push(z);
        for k in 0..LEVELS {
            let h = 0.5 * 2f64.powi(-k);
            pts.push(z - h);
            pts.push(z + h);
        }
    }
    pts.retain(|x| (lo..=hi).contains(x));
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    pts
}

/// Full certificate on the default grid.
pub fn verify(vf: &ValueFunction, tol: &Tolerances) -> VerificationReport {
    verify_on(vf, &verification_grid(vf, DEFAULT_VERIFY_POINTS), tol)
}

pub fn verify_on(vf: &ValueFunction, grid: &[f64], tol: &Tolerances) -> VerificationReport {
    let excessive = verify_excessive(vf, grid, tol.verify);
    let majorant = verify_majorant(vf, grid, tol.majorant);
    let smooth_fit: Vec<SmoothFitCheck> = vf
        .region()
        .boundaries()
        .into_iter()
        .map(|z| {
            let residual = smooth_fit_residual(vf, z);
            SmoothFitCheck { point: z, residual, pass: residual <= tol.smooth_fit }
        })
        .collect();
    let far_end_mismatch = vf.far_end_mismatch();
    let far_ok = far_end_mismatch.is_none_or(|(v, d)| v <= tol.smooth_fit && d <= tol.smooth_fit);
    let pass = excessive.pass && majorant.pass && smooth_fit.iter().all(|s| s.pass) && far_ok;
    VerificationReport {
        grid_points: grid.len(),
        grid_lo: grid.first().copied().unwrap_or(f64::NAN),
        grid_hi: grid.last().copied().unwrap_or(f64::NAN),
        excessive,
        majorant,
        smooth_fit,
        far_end_mismatch,
        tolerances: *tol,
        pass,
    }
}

/// Smooth-fit-at-zero function `F = A e^{l1p x} + B e^{l1m x}` on `x <= 0`,
/// `F = 1 + x` on `x >= 0`, and the sign of its representing derivative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct At0Report {
    pub mu1: f64,
    pub mu2: f64,
    pub r: f64,
    pub a: f64,
    pub b: f64,
    pub f_prime_left: f64,
    pub f_prime_right: f64,
    /// `d/dm` of `(psi' F - psi F') / S'` just left of 0 (zero: F is harmonic there).
    pub representing_dm_left: f64,
    /// Same just right of 0, equal to `r - mu2`.
    pub representing_dm_right: f64,
    /// The representing derivative is negative on `(0, negative_until)`.
    pub negative_until: f64,
    pub b_negative: bool,
    /// Whether `F` can be r-excessive; always false on the accepted range.
    pub excessive: bool,
}

pub fn prop_at0_diagnostic(mu1: f64, mu2: f64, r: f64) -> Result<At0Report> {
    let params = ModelParams::new(mu1, mu2)?;
    let model = make_model(params, r)?;
    if r >= mu2 {
        return Err(Error::Domain(format!(
            "the smooth-fit-at-0 diagnostic needs r < mu2 (r = {r}, mu2 = {mu2})"
        )));
    }
    let (lp, lm) = (model.lam1_plus(), model.lam1_minus());
    // A + B = 1, A lp + B lm = 1
    let a = (1.0 - lm) / (lp - lm);
    let b = (lp - 1.0) / (lp - lm);

    let f = |x: f64| a * (lp * x).exp() + b * (lm * x).exp();
    let df = |x: f64| a * lp * (lp * x).exp() + b * lm * (lm * x).exp();
    let d2f = |x: f64| a * lp * lp * (lp * x).exp() + b * lm * lm * (lm * x).exp();

    // d/dm (psi' F - psi F')/S' = psi (r F - (F''/2 + mu F'))
    let left = model.psi(0.0) * (r * f(0.0) - (0.5 * d2f(0.0) + mu1 * df(0.0)));
    let right = model.psi(0.0) * (r * 1.0 - (0.0 + mu2 * 1.0));

    Ok(At0Report {
        mu1,
        mu2,
        r,
        a,
        b,
        f_prime_left: df(0.0),
        f_prime_right: 1.0,
        representing_dm_left: left,
        representing_dm_right: right,
        negative_until: (mu2 - r) / r,
        b_negative: b < 0.0,
        excessive: !(right < 0.0 || b < 0.0),
    })
}
