//! Regime classification and the stopping region.
//!
//! Every boundary of the stopping region is a zero of `G-` or a solution of
//! the two-point matching system
//!
//! ```text
//! G-(c2) = G-(c3),    G+(c2) = G+(c3)
//! ```
//!
//! `G-` is piecewise monotone with breakpoints at `x1 = (mu1 - r) / r`, `0`
//! and `x0 = (mu2 - r) / r`, so its zeros are enumerated exactly by checking
//! signs at those breakpoints and refining each sign change with Brent's
//! method.

use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, OnceLock, RwLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gfuncs::{
    g_minus, g_minus_normalized, g_minus_prime_side, g_plus, g_plus_prime_side, stationary_points,
};
use crate::model::{make_model, DiscountedModel, ModelParams, Side};
use crate::roots::{brent, expand_until_positive};

/// Numerical tolerances used across solving and verification.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// Relative bracket width accepted for a threshold.
    pub root: f64,
    /// Absolute residual accepted for the bubble system.
    pub residual: f64,
    /// Relative width of the final `r0` bracket, in units of `mu2 - mu1 - 1/2`.
    pub r0_rel: f64,
    /// Relative monotonicity violation accepted for `I_V` and `D_V`.
    pub verify: f64,
    /// Lowest accepted value of `min (V - g)`.
    pub majorant: f64,
    /// Largest accepted jump of `V'` at a stopping boundary.
    pub smooth_fit: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            root: 1e-12,
            residual: 1e-10,
            r0_rel: 1e-10,
            verify: 1e-9,
            majorant: 1e-10,
            smooth_fit: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Regime {
    /// `r <= mu1` with `mu2 > mu1 + 1/2`.
    LowRate,
    /// `mu2 <= mu1 + 1/2`, any `r`.
    NarrowGap,
    /// `mu2 > mu1 + 1/2`, `mu1 < r < r0`.
    PreBubble,
    /// `mu2 > mu1 + 1/2`, `r0 <= r < mu2`.
    Bubble,
    /// `mu2 > mu1 + 1/2`, `r >= mu2`.
    HighRate,
}

impl Regime {
    pub fn as_str(&self) -> &'static str {
        match self {
            Regime::LowRate => "LowRate",
            Regime::NarrowGap => "NarrowGap",
            Regime::PreBubble => "PreBubble",
            Regime::Bubble => "Bubble",
            Regime::HighRate => "HighRate",
        }
    }

    pub fn is_one_sided(&self) -> bool {
        !matches!(self, Regime::Bubble)
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// `S = [c, inf)` or `S = [c1, c2] U [c3, inf)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StoppingRegion {
    OneSided { c: f64 },
    Bubble { c1: f64, c2: f64, c3: f64 },
}

impl StoppingRegion {
    pub fn contains(&self, x: f64) -> bool {
        match *self {
            StoppingRegion::OneSided { c } => x >= c,
            StoppingRegion::Bubble { c1, c2, c3 } => (c1..=c2).contains(&x) || x >= c3,
        }
    }

    /// Boundary points in increasing order.
    pub fn boundaries(&self) -> Vec<f64> {
        match *self {
            StoppingRegion::OneSided { c } => vec![c],
            StoppingRegion::Bubble { c1, c2, c3 } => vec![c1, c2, c3],
        }
    }

    /// Left end of the unbounded continuation interval `(-inf, c)`.
    pub fn first_boundary(&self) -> f64 {
        match *self {
            StoppingRegion::OneSided { c } => c,
            StoppingRegion::Bubble { c1, .. } => c1,
        }
    }

    /// Checks the ordering constraints of the region shape.
    pub fn check_shape(&self) -> Result<()> {
        match *self {
            StoppingRegion::OneSided { c } if c.is_finite() && c > -1.0 => Ok(()),
            StoppingRegion::OneSided { c } => {
                Err(Error::Domain(format!("threshold must be finite and > -1, got {c}")))
            }
            StoppingRegion::Bubble { c1, c2, c3 } => {
                if c1 > -1.0 && c1 <= c2 && c2 <= 0.0 && c3 > 0.0 && c3.is_finite() {
                    Ok(())
                } else {
                    Err(Error::Domain(format!(
                        "bubble needs -1 < c1 <= c2 <= 0 < c3, got ({c1}, {c2}, {c3})"
                    )))
                }
            }
        }
    }
}

/// Critical discount rate where the bubble appears.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticalRate {
    /// Upper end of the final bracket, so `r0` itself classifies as `Bubble`.
    pub r0: f64,
    pub bracket: (f64, f64),
    /// Point in `(-1, 0]` where the one-sided candidate touches the reward.
    pub tangent_point: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BubbleMethod {
    Newton,
    NestedBisection,
    /// Leading-order expansion in `x0 = (mu2 - r) / r`, used when `x0 < 1e-4`.
    Asymptotic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BubbleSolution {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    /// `(G-(c2) - G-(c3), G+(c2) - G+(c3))` at the returned point.
    pub residuals: (f64, f64),
    pub method: BubbleMethod,
}

impl BubbleSolution {
    pub fn region(&self) -> StoppingRegion {
        StoppingRegion::Bubble { c1: self.c1, c2: self.c2, c3: self.c3 }
    }
}

/// Minimum of `V - g` over `(-1, 0]` for the one-sided candidate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MajorantGap {
    pub gap: f64,
    pub argmin: f64,
    /// Largest zero of `G-`, the candidate's threshold.
    pub threshold: f64,
}

type R0Memo = Arc<RwLock<HashMap<(u64, u64), CriticalRate>>>;

/// Stateless apart from an optional memo of `r0` per drift pair.
#[derive(Debug, Clone, Default)]
pub struct Solver {
    tol: Tolerances,
    memo: Option<R0Memo>,
}

static DEFAULT_SOLVER: OnceLock<Solver> = OnceLock::new();

/// Process-wide solver with default tolerances and a shared `r0` memo.
pub fn default_solver() -> &'static Solver {
    DEFAULT_SOLVER.get_or_init(|| Solver::new(Tolerances::default()))
}

pub fn classify_regime(mu1: f64, mu2: f64, r: f64) -> Result<Regime> {
    default_solver().classify_regime(&ModelParams::new(mu1, mu2)?, r)
}

pub fn solve_one_sided(model: &DiscountedModel) -> Result<f64> {
    default_solver().solve_one_sided(model)
}

pub fn solve_bubble(model: &DiscountedModel) -> Result<BubbleSolution> {
    default_solver().solve_bubble(model)
}

pub fn find_r0(mu1: f64, mu2: f64) -> Result<CriticalRate> {
    default_solver().find_r0(&ModelParams::new(mu1, mu2)?)
}

pub fn stopping_region(mu1: f64, mu2: f64, r: f64) -> Result<StoppingRegion> {
    default_solver().stopping_region(&ModelParams::new(mu1, mu2)?, r)
}

/// All zeros of `G-` on `(-1, inf)`, increasing.
pub fn g_minus_roots(model: &DiscountedModel) -> Result<Vec<f64>> {
    let h = |x: f64| g_minus_normalized(model, x);
    let sp = stationary_points(model);
    let mut breaks = vec![-1.0];
    breaks.extend(sp.x1);
    breaks.push(0.0);
    breaks.extend(sp.x0);

    let mut roots: Vec<f64> = Vec::new();
    let push = |x: f64, roots: &mut Vec<f64>| {
        if roots.last().is_none_or(|&last| x > last) {
            roots.push(x);
        }
    };
    for w in breaks.windows(2) {
        let (a, b) = (w[0], w[1]);
        let (fa, fb) = (h(a), h(b));
        if fa == 0.0 && a > -1.0 {
            push(a, &mut roots);
        }
        if fa * fb < 0.0 {
            push(brent(h, a, b, 0.0)?, &mut roots);
        }
        if fb == 0.0 {
            push(b, &mut roots);
        }
    }
    // G- increases without bound on the last piece.
    let last = *breaks.last().unwrap();
    let f_last = h(last);
    if f_last < 0.0 {
        let start = (last + 1.0).max(4.0).max(4.0 * model.mu2() / model.r());
        let hi = expand_until_positive(h, last, start, model.window())?;
        push(brent(h, last, hi, 0.0)?, &mut roots);
    }
    Ok(roots)
}

impl Solver {
    pub fn new(tol: Tolerances) -> Self {
        Self { tol, memo: Some(Arc::default()) }
    }

    /// No `r0` memo; every classification recomputes the bisection.
    pub fn without_memo(tol: Tolerances) -> Self {
        Self { tol, memo: None }
    }

    pub fn tolerances(&self) -> &Tolerances {
        &self.tol
    }

    pub fn classify_regime(&self, params: &ModelParams, r: f64) -> Result<Regime> {
        if !r.is_finite() || r <= 0.0 {
            return Err(Error::Domain(format!("discount rate must be positive, got {r}")));
        }
        let (mu1, mu2) = (params.mu1(), params.mu2());
        if !params.wide_gap() {
            return Ok(Regime::NarrowGap);
        }
        if r <= mu1 {
            return Ok(Regime::LowRate);
        }
        if r >= mu2 {
            return Ok(Regime::HighRate);
        }
        if r <= mu1 + 0.5 {
            return Ok(Regime::PreBubble);
        }
        let r0 = self.find_r0(params)?.r0;
        Ok(if r >= r0 { Regime::Bubble } else { Regime::PreBubble })
    }

    /// Largest zero of `G-`; the threshold of the one-sided regimes.
    pub fn solve_one_sided(&self, model: &DiscountedModel) -> Result<f64> {
        let roots = g_minus_roots(model)?;
        let c = *roots.last().ok_or(Error::NoBracket {
            what: "G-",
            lo: -1.0,
            hi: model.window(),
        })?;
        model.ensure_in_window(c)?;
        self.check_root(model, c)?;
        Ok(c)
    }

    fn check_root(&self, model: &DiscountedModel, c: f64) -> Result<()> {
        // a sign change within the accepted bracket around c
        let h = |x: f64| g_minus_normalized(model, x);
        let delta = self.tol.root * c.abs().max(1.0);
        let (lo, hi) = (h(c - delta), h(c + delta));
        if h(c) == 0.0 || lo * hi <= 0.0 {
            Ok(())
        } else {
            Err(Error::NoConvergence(format!("threshold {c} is not a sign change of G-")))
        }
    }

    /// The unique zero of `G-` in `(-1, 0)`, if any.
    pub fn negative_root(&self, model: &DiscountedModel) -> Result<f64> {
        let roots = g_minus_roots(model)?;
        let mut neg = roots.iter().copied().filter(|&x| x > -1.0 && x < 0.0);
        match (neg.next(), neg.next()) {
            (Some(c), None) => Ok(c),
            (None, _) => Err(Error::NoBracket { what: "G- on (-1, 0)", lo: -1.0, hi: 0.0 }),
            (Some(_), Some(_)) => Err(Error::NoConvergence("G- has several zeros in (-1, 0)".into())),
        }
    }

    /// Minimum of `V - g` on `(-1, 0]` for the one-sided candidate with the
    /// largest threshold, or `None` if that threshold is not positive.
    pub fn majorant_gap(&self, model: &DiscountedModel) -> Result<Option<MajorantGap>> {
        let roots = g_minus_roots(model)?;
        let c = match roots.last() {
            Some(&c) if c > 0.0 => c,
            _ => return Ok(None),
        };
        // On (-1, 0] the candidate is k exp(l1p x), convex, so V - g has a
        // single critical point where k l1p exp(l1p x) = 1.
        let lam = model.lam1_plus();
        let k = (1.0 + c) / model.psi(c);
        let argmin = ((1.0 / (k * lam)).ln() / lam).clamp(-1.0, 0.0);
        let gap = k * (lam * argmin).exp() - (1.0 + argmin);
        Ok(Some(MajorantGap { gap, argmin, threshold: c }))
    }

    fn candidate_dominates(&self, params: &ModelParams, r: f64) -> Result<(bool, Option<MajorantGap>)> {
        let gap = self.majorant_gap(&make_model(*params, r)?)?;
        Ok((gap.is_some_and(|g| g.gap > 0.0), gap))
    }

    /// Critical rate `r0` in `(mu1 + 1/2, mu2)` by bisection on the majorant
    /// predicate of the one-sided candidate.
    pub fn find_r0(&self, params: &ModelParams) -> Result<CriticalRate> {
        if !params.wide_gap() {
            return Err(Error::Domain(format!(
                "r0 exists only for mu2 > mu1 + 1/2 (mu1 = {}, mu2 = {})",
                params.mu1(),
                params.mu2()
            )));
        }
        let key = (params.mu1().to_bits(), params.mu2().to_bits());
        if let Some(memo) = &self.memo {
            if let Some(hit) = memo.read().expect("r0 memo poisoned").get(&key) {
                return Ok(*hit);
            }
        }
        let found = self.bisect_r0(params)?;
        if let Some(memo) = &self.memo {
            memo.write().expect("r0 memo poisoned").insert(key, found);
        }
        Ok(found)
    }

    fn bisect_r0(&self, params: &ModelParams) -> Result<CriticalRate> {
        const SCAN: usize = 32;
        let lo0 = params.mu1() + 0.5;
        let hi0 = params.mu2();
        let span = hi0 - lo0;

        let scan: Vec<(f64, bool)> = (0..=SCAN)
            .map(|i| {
                let r = if i == SCAN { hi0 } else { lo0 + span * i as f64 / SCAN as f64 };
                self.candidate_dominates(params, r).map(|(ok, _)| (r, ok))
            })
            .collect::<Result<_>>()?;
        let changes: Vec<(f64, f64)> = scan
            .windows(2)
            .filter(|w| w[0].1 != w[1].1)
            .map(|w| (w[0].0, w[1].0))
            .collect();
        if changes.len() != 1 || !scan[0].1 || scan[SCAN].1 {
            return Err(Error::NonMonotone { brackets: changes });
        }

        let (mut lo, mut hi) = changes[0];
        let width = self.tol.r0_rel * span;
        while hi - lo > width {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.candidate_dominates(params, mid)?.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let tangent = match self.candidate_dominates(params, hi)?.1 {
            Some(g) => g.argmin,
            None => self
                .candidate_dominates(params, lo)?
                .1
                .map(|g| g.argmin)
                .ok_or_else(|| Error::NoConvergence("no candidate at the r0 bracket".into()))?,
        };
        Ok(CriticalRate { r0: hi, bracket: (lo, hi), tangent_point: tangent })
    }

    /// Left threshold `c1` and bubble `(c2, c3)` for `r` in `[r0, mu2)`.
    pub fn solve_bubble(&self, model: &DiscountedModel) -> Result<BubbleSolution> {
        let (mu1, mu2, r) = (model.mu1(), model.mu2(), model.r());
        if mu2 <= mu1 + 0.5 || r >= mu2 || r <= mu1 + 0.5 {
            return Err(Error::NotInBubbleRegime(format!(
                "need mu1 + 1/2 < r < mu2 (mu1 = {mu1}, mu2 = {mu2}, r = {r})"
            )));
        }
        let c1 = self.negative_root(model)?;
        let x0 = (mu2 - r) / r;

        if x0 < COLLAPSE {
            // G-(c2) and G-(c3) agree to O(x0^2) here, below double resolution
            // for the full system; the expansion is accurate to O(x0^2).
            let c2 = -3.0 * r * x0 * x0 / (8.0 * (r - mu1));
            let c3 = 1.5 * x0;
            let sol = BubbleSolution {
                c1,
                c2,
                c3,
                residuals: bubble_residuals(model, c2, c3),
                method: BubbleMethod::Asymptotic,
            };
            return self.finish_bubble(model, c1, sol);
        }

        let sol = match self.newton_bubble(model, c1, x0) {
            Some(s) if s.c2 >= c1 - SNAP && s.c2 <= 0.0 => s,
            _ => self.nested_bubble(model, c1, x0)?,
        };
        self.finish_bubble(model, c1, sol)
    }

    fn finish_bubble(&self, model: &DiscountedModel, c1: f64, mut sol: BubbleSolution) -> Result<BubbleSolution> {
        if sol.c2 < c1 {
            sol.c2 = c1;
            sol.residuals = bubble_residuals(model, sol.c2, sol.c3);
        }
        let scale = g_plus(model, sol.c2).abs().max(1.0);
        let worst = sol.residuals.0.abs().max(sol.residuals.1.abs());
        if worst > self.tol.residual * scale {
            return Err(Error::NoConvergence(format!(
                "bubble system residual {worst:e} above tolerance"
            )));
        }
        StoppingRegion::Bubble { c1: sol.c1, c2: sol.c2, c3: sol.c3 }
            .check_shape()
            .map_err(|e| Error::NotInBubbleRegime(e.to_string()))?;
        Ok(sol)
    }

    fn newton_bubble(&self, model: &DiscountedModel, c1: f64, x0: f64) -> Option<BubbleSolution> {
        let mut c2 = 0.5 * c1;
        let mut c3 = c3_matching(model, c2, x0).unwrap_or(x0 + 0.5 * x0.max(0.1));
        let norm = |f: (f64, f64)| f.0.abs().max(f.1.abs());
        let mut f = bubble_residuals(model, c2, c3);

        for _ in 0..100 {
            if norm(f) <= 1e-14 * g_plus(model, c2).abs().max(1.0) {
                break;
            }
            let j11 = g_minus_prime_side(model, c2, Side::Left);
            let j12 = -g_minus_prime_side(model, c3, Side::Right);
            let j21 = g_plus_prime_side(model, c2, Side::Left);
            let j22 = -g_plus_prime_side(model, c3, Side::Right);
            let det = j11 * j22 - j12 * j21;
            if det == 0.0 || !det.is_finite() {
                return None;
            }
            let d2 = (-f.0 * j22 + f.1 * j12) / det;
            let d3 = (-j11 * f.1 + j21 * f.0) / det;

            let mut step = 1.0;
            loop {
                let (n2, n3) = (c2 + step * d2, c3 + step * d3);
                // stay on the branch c2 < 0 < x0 < c3
                if n2 > -1.0 && n2 <= 0.0 && n3 > x0 {
                    let nf = bubble_residuals(model, n2, n3);
                    if norm(nf) < norm(f) {
                        c2 = n2;
                        c3 = n3;
                        f = nf;
                        break;
                    }
                }
                step *= 0.5;
                if step < 1e-10 {
                    // no further decrease possible: accept only a converged point
                    if norm(f) <= 1e-2 * self.tol.residual * g_plus(model, c2).abs().max(1.0) {
                        return Some(BubbleSolution { c1, c2, c3, residuals: f, method: BubbleMethod::Newton });
                    }
                    return None;
                }
            }
            if (step * d2).abs() <= 4.0 * f64::EPSILON && (step * d3).abs() <= 4.0 * f64::EPSILON * c3 {
                break;
            }
        }
        Some(BubbleSolution { c1, c2, c3, residuals: f, method: BubbleMethod::Newton })
    }

    fn nested_bubble(&self, model: &DiscountedModel, c1: f64, x0: f64) -> Result<BubbleSolution> {
        let floor = g_minus(model, x0);
        // c2 must reach at least the local minimum of G- on the positive side.
        let lo = if g_minus(model, c1) >= floor {
            c1
        } else {
            brent(|x| g_minus(model, x) - floor, c1, 0.0, 0.0)?
        };
        let f2 = |c2: f64| -> f64 {
            match c3_matching(model, c2, x0) {
                Some(c3) => g_plus(model, c2) - g_plus(model, c3),
                None => f64::NAN,
            }
        };
        let (f_lo, f_hi) = (f2(lo), f2(0.0));
        if !(f_lo >= 0.0 && f_hi <= 0.0) {
            return Err(Error::NotInBubbleRegime(format!(
                "no solution with c2 in [{lo}, 0] (G+ mismatch {f_lo:e} .. {f_hi:e})"
            )));
        }
        let c2 = brent(f2, lo, 0.0, 0.0)?;
        let c3 = c3_matching(model, c2, x0)
            .ok_or_else(|| Error::NoConvergence("lost c3 bracket".into()))?;
        Ok(BubbleSolution {
            c1,
            c2,
            c3,
            residuals: bubble_residuals(model, c2, c3),
            method: BubbleMethod::NestedBisection,
        })
    }

    /// Forces the nested-bisection route; used to cross-check Newton.
    pub fn solve_bubble_nested(&self, model: &DiscountedModel) -> Result<BubbleSolution> {
        let c1 = self.negative_root(model)?;
        let x0 = (model.mu2() - model.r()) / model.r();
        let sol = self.nested_bubble(model, c1, x0)?;
        self.finish_bubble(model, c1, sol)
    }

    pub fn stopping_region(&self, params: &ModelParams, r: f64) -> Result<StoppingRegion> {
        let regime = self.classify_regime(params, r)?;
        self.region_for(params, r, regime)
    }

    pub fn region_for(&self, params: &ModelParams, r: f64, regime: Regime) -> Result<StoppingRegion> {
        let model = make_model(*params, r)?;
        if regime.is_one_sided() {
            Ok(StoppingRegion::OneSided { c: self.solve_one_sided(&model)? })
        } else {
            Ok(self.solve_bubble(&model)?.region())
        }
    }
}

/// Distance below `c1` within which a computed `c2` is snapped to `c1`.
/// Below this `x0` the bubble `(c2, c3)` comes from its expansion around 0.
const COLLAPSE: f64 = 1e-4;
const SNAP: f64 = 1e-9;

fn bubble_residuals(model: &DiscountedModel, c2: f64, c3: f64) -> (f64, f64) {
    (g_minus(model, c2) - g_minus(model, c3), g_plus(model, c2) - g_plus(model, c3))
}

/// The `c3 > x0` with `G-(c3) = G-(c2)`, if `G-(c2)` is above the local minimum.
fn c3_matching(model: &DiscountedModel, c2: f64, x0: f64) -> Option<f64> {
    let target = g_minus(model, c2);
    let f = |x: f64| g_minus(model, x) - target;
    let at_x0 = f(x0);
    if at_x0 > 0.0 {
        // Rounding when c2 sits exactly at the level of the minimum.
        return (at_x0 <= 1e-12 * target.abs().max(1.0)).then_some(x0);
    }
    let hi = expand_until_positive(f, x0, x0 + 1.0, model.window()).ok()?;
    brent(f, x0, hi, 0.0).ok()
}
