//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary so the report is always printed. Criterion 9 is
//! advisory and never fails the run.

use std::time::{Duration, Instant};

use broken_drift::mc::{estimate_stopped_value, perturbation_check, McConfig};
use broken_drift::model::{make_model, ModelParams};
use broken_drift::solver::{Regime, Solver, StoppingRegion, Tolerances};
use broken_drift::value::{prop_at0_diagnostic, reward, verify, ValueFunction};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn solver() -> Solver {
    Solver::new(Tolerances::default())
}

fn threshold(region: StoppingRegion) -> f64 {
    match region {
        StoppingRegion::OneSided { c } => c,
        other => panic!("expected a one-sided region, got {other:?}"),
    }
}

fn classical_closed_form() -> Outcome {
    let s = solver();
    let mut worst: f64 = 0.0;
    let mut n = 0;
    for mu in [0.0, 0.5, 1.0, 2.0, 3.0] {
        for r in [0.1, 0.5, 1.0, 4.0] {
            let m = make_model(ModelParams::equal_drift(mu).unwrap(), r).unwrap();
            let c = s.solve_one_sided(&m).unwrap();
            let expected = 1.0 / ((mu * mu + 2.0 * r).sqrt() - mu) - 1.0;
            worst = worst.max((c - expected).abs());
            n += 1;
        }
    }
    outcome(worst <= 1e-10, format!("{n} pairs, max |c - (1/lambda - 1)| = {worst:.2e} (tol 1e-10)"))
}

fn zero_threshold() -> Outcome {
    let s = solver();
    let mut worst: f64 = 0.0;
    let mut n = 0;
    for mu1 in [0.0, 0.3, 1.0, 2.0, 5.0] {
        for gap in [0.1, 0.5] {
            let p = ModelParams::new(mu1, mu1 + gap).unwrap();
            let r = mu1 + 0.5;
            assert_eq!(s.classify_regime(&p, r).unwrap(), Regime::NarrowGap);
            let c = s.solve_one_sided(&make_model(p, r).unwrap()).unwrap();
            worst = worst.max(c.abs());
            n += 1;
        }
    }
    outcome(worst <= 1e-10, format!("{n} narrow-gap pairs, max |c| = {worst:.2e} (tol 1e-10)"))
}

fn threshold_at_mu2() -> Outcome {
    let s = solver();
    let mut worst: f64 = 0.0;
    let pairs = [(0.0, 1.0), (0.0, 2.0), (1.0, 3.0), (0.2, 1.5), (1.0, 10.0), (0.5, 1.2), (2.0, 2.6), (0.0, 0.7), (3.0, 8.0), (0.1, 5.0)];
    for (mu1, mu2) in pairs {
        let p = ModelParams::new(mu1, mu2).unwrap();
        let c = threshold(s.stopping_region(&p, mu2).unwrap());
        let expected = ((mu1 * mu1 + 2.0 * mu2).sqrt() + mu1 - 2.0 * mu2) / (2.0 * mu2);
        worst = worst.max((c - expected).abs());
    }
    outcome(worst <= 1e-10, format!("{} pairs, max deviation {worst:.2e} (tol 1e-10)", pairs.len()))
}

fn bubble_existence() -> Outcome {
    let s = solver();
    let mut notes = Vec::new();
    let mut pass = true;
    for (mu1, mu2) in [(0.0, 1.0), (0.0, 2.0), (1.0, 3.0), (0.2, 1.5)] {
        let p = ModelParams::new(mu1, mu2).unwrap();
        let crit = s.find_r0(&p).unwrap();
        let width = crit.bracket.1 - crit.bracket.0;
        let inside = crit.r0 > mu1 + 0.5 && crit.r0 < mu2;

        let r = 0.5 * (crit.r0 + mu2);
        let sol = s.solve_bubble(&make_model(p, r).unwrap()).unwrap();
        let residual = sol.residuals.0.abs().max(sol.residuals.1.abs());
        let ordered = -1.0 < sol.c1 && sol.c1 <= sol.c2 && sol.c2 <= 0.0 && 0.0 < sol.c3;

        let near = s.solve_bubble(&make_model(p, crit.r0 + 1e-9).unwrap()).unwrap();
        let degenerate = (near.c1 - near.c2).abs();

        let ok = inside && width <= 1e-8 && residual <= 1e-10 && ordered && degenerate <= 1e-5;
        pass &= ok;
        notes.push(format!(
            "({mu1},{mu2}): r0={:.10} width={width:.1e} res={residual:.1e} |c1-c2|@r0+={degenerate:.1e}",
            crit.r0
        ));
    }
    outcome(pass, notes.join("; "))
}

fn regime_grid() -> Vec<(ModelParams, f64)> {
    let s = solver();
    let mut cases = Vec::new();
    for (mu1, mu2) in [(0.0, 1.0), (1.0, 3.0), (0.2, 1.5), (0.5, 4.0)] {
        let p = ModelParams::new(mu1, mu2).unwrap();
        let r0 = s.find_r0(&p).unwrap().r0;
        let low = if mu1 > 0.0 { 0.6 * mu1 } else { 0.5 };
        let pre = 0.5 * (mu1 + 0.5 + r0);
        for r in [low, pre, r0, 0.5 * (r0 + mu2), 1.5 * mu2] {
            cases.push((p, r));
        }
    }
    let narrow = ModelParams::new(1.0, 1.4).unwrap();
    for r in [0.2, 0.9, 1.5, 3.0, 10.0] {
        cases.push((narrow, r));
    }
    cases
}

fn optimality_certificate() -> Outcome {
    let s = solver();
    let tol = Tolerances::default();
    let mut seen = std::collections::BTreeSet::new();
    let mut failures = Vec::new();
    let (mut worst_iv, mut worst_gap, mut worst_fit) = (0.0f64, f64::INFINITY, 0.0f64);
    let cases = regime_grid();
    for &(p, r) in &cases {
        seen.insert(s.classify_regime(&p, r).unwrap().as_str());
        let vf = ValueFunction::solve(&p, r).unwrap();
        let rep = verify(&vf, &tol);
        worst_iv = worst_iv.max(rep.excessive.i_violation).max(rep.excessive.d_violation);
        worst_gap = worst_gap.min(rep.majorant.min_gap);
        worst_fit = rep.smooth_fit.iter().fold(worst_fit, |w, f| w.max(f.residual));
        let ok = rep.excessive.pass
            && rep.majorant.min_gap >= -1e-10
            && rep.smooth_fit.iter().all(|f| f.residual <= 1e-8);
        if !ok {
            failures.push(format!("({}, {}, {r})", p.mu1(), p.mu2()));
        }
    }
    let all_regimes = seen.len() == 5;
    outcome(
        failures.is_empty() && all_regimes,
        format!(
            "{} cases over regimes {:?}; max I/D violation {worst_iv:.1e} (1e-9), min V-g {worst_gap:.1e} (-1e-10), max smooth-fit residual {worst_fit:.1e} (1e-8){}",
            cases.len(),
            seen,
            if failures.is_empty() { String::new() } else { format!("; failed {failures:?}") }
        ),
    )
}

fn nestedness_and_monotonicity() -> Outcome {
    let mut set_violations = 0;
    let mut worst_rise: f64 = 0.0;
    for (mu1, mu2) in [(0.0, 1.0), (1.0, 3.0)] {
        let p = ModelParams::new(mu1, mu2).unwrap();
        let rates: Vec<f64> = (0..50).map(|i| 0.1 * (40.0f64).powf(i as f64 / 49.0)).collect();
        let xs: Vec<f64> = (0..500).map(|i| -1.5 + 6.5 * i as f64 / 499.0).collect();
        let values: Vec<ValueFunction> = rates.iter().map(|&r| ValueFunction::solve(&p, r).unwrap()).collect();
        for w in values.windows(2) {
            for &x in &xs {
                if w[0].region().contains(x) && !w[1].region().contains(x) {
                    set_violations += 1;
                }
                let (a, b) = (w[0].eval(x), w[1].eval(x));
                worst_rise = worst_rise.max((b - a) / a.max(1.0));
            }
        }
    }
    outcome(
        set_violations == 0 && worst_rise <= 1e-9,
        format!("50 rates x 500 points x 2 drift pairs: {set_violations} set violations, max relative rise {worst_rise:.1e} (1e-9)"),
    )
}

fn monte_carlo_agreement() -> Outcome {
    let s = solver();
    let mut notes = Vec::new();
    let mut pass = true;
    let mut case = |p: ModelParams, r: f64, x0: f64, label: &str| -> (f64, f64, f64) {
        let vf = if p.mu1() == p.mu2() {
            let c = s.solve_one_sided(&make_model(p, r).unwrap()).unwrap();
            broken_drift::value::build_value(&make_model(p, r).unwrap(), StoppingRegion::OneSided { c }).unwrap()
        } else {
            ValueFunction::solve(&p, r).unwrap()
        };
        let est = estimate_stopped_value(&p, r, &vf.region(), x0, &McConfig::for_rate(r)).unwrap();
        let analytic = vf.eval(x0);
        let z = (est.mean - analytic) / est.stderr;
        pass &= z.abs() <= 3.0;
        notes.push(format!("{label} z={z:+.2}"));
        (est.mean, est.stderr, analytic)
    };

    let c = 1.0 / (3f64.sqrt() - 1.0) - 1.0;
    case(ModelParams::equal_drift(1.0).unwrap(), 1.0, c - 0.5, "classical");
    let low = ModelParams::new(1.0, 3.0).unwrap();
    case(low, 0.8, threshold(solver().stopping_region(&low, 0.8).unwrap()) - 0.3, "LowRate");
    let high = ModelParams::new(0.5, 1.5).unwrap();
    case(high, 2.0, threshold(solver().stopping_region(&high, 2.0).unwrap()) - 0.3, "HighRate");
    case(ModelParams::new(1.0, 1.4).unwrap(), 1.5, -0.3, "NarrowGap");
    case(ModelParams::new(0.0, 1.0).unwrap(), 0.66, 0.0, "Bubble(0,1)");
    let (mean, se, _) = case(ModelParams::new(0.2, 1.5).unwrap(), 1.0, 0.0, "Bubble(0.2,1.5)");

    let beats = mean > reward(0.0) + 3.0 * se;
    pass &= beats;
    notes.push(format!("bubble V(0) - 1 = {:.1} stderr", (mean - 1.0) / se));
    outcome(pass, format!("dt=1e-4, 1e5 paths: {}", notes.join(", ")))
}

fn at0_diagnostic() -> Outcome {
    let triples = [
        (0.0, 1.0, 0.5),
        (0.0, 1.0, 0.8),
        (1.0, 3.0, 1.5),
        (1.0, 3.0, 2.9),
        (0.2, 1.5, 1.0),
        (0.0, 2.0, 1.2),
        (0.5, 4.0, 3.0),
        (1.0, 2.0, 1.5),
        (2.0, 3.0, 2.5),
        (0.0, 0.6, 0.55),
    ];
    let mut pass = true;
    for (mu1, mu2, r) in triples {
        let rep = prop_at0_diagnostic(mu1, mu2, r).unwrap();
        let expected = r - mu2;
        pass &= rep.representing_dm_right < 0.0 && (rep.representing_dm_right - expected).abs() <= 1e-12;
        pass &= !rep.excessive;
    }
    let below = [(0.0, 1.0, 0.3), (1.0, 3.0, 1.2), (0.5, 0.8, 0.7), (2.0, 4.0, 0.1), (0.0, 0.2, 0.05)];
    for (mu1, mu2, r) in below {
        pass &= prop_at0_diagnostic(mu1, mu2, r).unwrap().b_negative;
    }
    outcome(
        pass,
        format!("{} triples with r >= mu1+1/2: r - mu2 < 0 at 0+; {} triples with r < mu1+1/2: B < 0", triples.len(), below.len()),
    )
}

fn perturbation_dominance() -> Outcome {
    let mut notes = Vec::new();
    let mut pass = true;
    for (mu1, mu2, r) in [(1.0, 3.0, 0.8), (1.0, 1.4, 1.5), (0.5, 1.5, 2.0)] {
        let p = ModelParams::new(mu1, mu2).unwrap();
        let region = solver().stopping_region(&p, r).unwrap();
        let x0 = threshold(region) - 1.0;
        // A coarser step keeps 1e6 paths affordable; the bias is far below the shift effect.
        let cfg = McConfig { step: 1e-3, paths: 1_000_000, ..McConfig::for_rate(r) };
        let rep = perturbation_check(&p, r, &region, x0, 0.2, &cfg).unwrap();
        for e in &rep.perturbed {
            pass &= e.base_strictly_better;
            notes.push(format!(
                "({mu1},{mu2},{r}) {:+}: {:.1} se",
                e.shift,
                (rep.base.mean - e.estimate.mean) / e.combined_stderr
            ));
        }
    }
    outcome(pass, format!("dt=1e-3, 1e6 paths, base minus shifted: {}", notes.join(", ")))
}

/// Name, check, time budget, gating.
type Criterion = (&'static str, fn() -> Outcome, Duration, bool);

fn main() {
    let criteria: [Criterion; 9] = [
        ("1 classical closed form", classical_closed_form, Duration::from_secs(1), true),
        ("2 zero threshold at mu1+1/2", zero_threshold, Duration::from_secs(1), true),
        ("3 threshold at r = mu2", threshold_at_mu2, Duration::from_secs(1), true),
        ("4 bubble existence and bracket", bubble_existence, Duration::from_secs(30), true),
        ("5 optimality certificate", optimality_certificate, Duration::from_secs(30), true),
        ("6 nestedness and monotonicity in r", nestedness_and_monotonicity, Duration::from_secs(60), true),
        ("7 Monte Carlo agreement", monte_carlo_agreement, Duration::from_secs(300), true),
        ("8 smooth fit at 0 is not excessive", at0_diagnostic, Duration::from_secs(1), true),
        ("9 perturbation dominance (advisory)", perturbation_dominance, Duration::MAX, false),
    ];
    let mut failed = 0;
    for (name, check, budget, gating) in criteria {
        let start = Instant::now();
        let res = check();
        let elapsed = start.elapsed();
        let in_time = elapsed <= budget;
        let ok = res.pass && in_time;
        let tag = match (ok, gating) {
            (true, _) => "PASS",
            (false, true) => "FAIL",
            (false, false) => "WARN",
        };
        let limit = if budget == Duration::MAX { String::new() } else { format!(" / {:.0?}", budget) };
        println!("[{tag}] {name}: {} ({:.2?}{limit})", res.detail, elapsed);
        if !ok && gating {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
