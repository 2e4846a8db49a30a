//! Acceptance suite: one test per criterion, each printing a PASS/FAIL line
//! with the measured quantities. Tolerances are pinned here, not config.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use ruelle_lab::flows::{
    exact_splitting, CotangentPoint, ModelSystem, PhasePoint,
};
use ruelle_lab::lifts::{BundleLift, SectionSpec};
use ruelle_lab::resolvent::{
    alias_free_grid, check_resolvent_identity, correlation, correlation_quadrature, pole_scan,
    quadrature_frequencies, ContourSpec, ObservablePair, ResolventQuad,
};
use ruelle_lab::symbols::{
    build_multiplier, build_weight, generator_check, threshold_by_bisection, BumpSpec, GridSpec,
    MatrixSection, MultiplierConfig, WeightParams,
};
use ruelle_lab::thresholds::{
    contraction_rates, estimate_growth_factor, threshold_halfplane, transport_growth,
    EstimateConfig, Side,
};
use ruelle_lab::trig::{CosinePoly, MatrixTrigPoly, TrigPoly};
use ruelle_lab::Error;
use std::time::Instant;

const THETA: f64 = 0.9624236501192069; // ln((3 + sqrt 5) / 2)

fn unit_cat() -> ModelSystem {
    ModelSystem::cat_suspension([[2, 1], [1, 1]], CosinePoly::constant(1.0)).unwrap()
}

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn single_threaded<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .expect("local pool")
        .install(f)
}

fn report(criterion: &str, passed: bool, detail: &str) {
    println!(
        "{} criterion {criterion}: {detail}",
        if passed { "PASS" } else { "FAIL" }
    );
    assert!(passed, "criterion {criterion}: {detail}");
}

#[test]
fn criterion_1_scalar_threshold_both_estimators() {
    let started = Instant::now();
    let (extrapolated, bisect_u, bisect_s) = single_threaded(|| {
        let sys = unit_cat();
        let lift = BundleLift::zero_scalar();
        let est = threshold_halfplane(&sys, &lift, -1.0, 1.0, &EstimateConfig::default()).unwrap();
        let mcfg = MultiplierConfig::default();
        let bu =
            threshold_by_bisection(&lift, &sys, Side::Unstable, -1.0, (-2.0, 0.0), 0.02, &mcfg)
                .unwrap();
        let bs = threshold_by_bisection(&lift, &sys, Side::Stable, 1.0, (-2.0, 0.0), 0.02, &mcfg)
            .unwrap();
        (est, bu, bs)
    });
    let elapsed = started.elapsed().as_secs_f64();
    let tol = 0.05 * THETA;
    let ok = (extrapolated.unstable.extrapolated_rate + THETA).abs() < tol
        && (extrapolated.stable.extrapolated_rate + THETA).abs() < tol
        && (extrapolated.threshold + THETA).abs() < tol
        && (bisect_u + THETA).abs() < tol
        && (bisect_s + THETA).abs() < tol
        && elapsed <= 60.0;
    report(
        "1 (scalar threshold, two estimators)",
        ok,
        &format!(
            "r_u = {:.4}, r_s = {:.4}, threshold = {:.4}, bisection = ({:.4}, {:.4}), target {:.4} +- 5%, {elapsed:.1} s single-threaded",
            extrapolated.unstable.extrapolated_rate,
            extrapolated.stable.extrapolated_rate,
            extrapolated.threshold,
            bisect_u,
            bisect_s,
            -THETA
        ),
    );
}

#[test]
fn criterion_2_rate_model_forms_thresholds() {
    let sys = ModelSystem::hyperbolic_model(1).unwrap();
    let mut detail = String::new();
    let mut ok = true;
    for k in [0usize, 1, 2] {
        let lift = BundleLift::perp_forms(k);
        let report = threshold_halfplane(&sys, &lift, -2.0, 2.0, &EstimateConfig::default()).unwrap();
        let expect = (-2.0_f64).max(-2.0) + (k.min(2 - k)) as f64;
        let tol = 0.02 * expect.abs().max(1.0);
        ok &= (report.threshold - expect).abs() < tol;
        detail.push_str(&format!("k={k}: {:.4} (expect {expect}), ", report.threshold));
    }
    report("2 (rate-model k-form thresholds)", ok, detail.trim_end_matches(", "));
}

#[test]
fn criterion_3_weight_construction() {
    let started = Instant::now();
    let sys = unit_cat();
    let params = WeightParams {
        m_u: -2.0,
        m_0: 0.0,
        m_s: 2.0,
        bump_u: BumpSpec { r_inner: 0.1, r_outer: 0.2 },
        bump_s: BumpSpec { r_inner: 0.1, r_outer: 0.2 },
        t_avg: 8.0,
    };
    let grid = GridSpec {
        base_points: 140,
        fiber_levels: 3,
        directions: 23,
        seed: 0,
    };
    let field = single_threaded(|| build_weight(&sys, &params, &grid, 1e-8).unwrap());
    let elapsed = started.elapsed().as_secs_f64();
    let n = field.grid.len();
    let mut pinned_u = 0usize;
    let mut pinned_s = 0usize;
    let mut neutral = 0usize;
    let mut plateau_ok = true;
    for ((v, du), ds) in field.values.iter().zip(&field.dist_u).zip(&field.dist_s) {
        if *du <= field.inner_radius_u {
            pinned_u += 1;
            plateau_ok &= (*v - params.m_u).abs() < 1e-12;
        }
        if *ds <= field.inner_radius_s {
            pinned_s += 1;
            plateau_ok &= (*v - params.m_s).abs() < 1e-12;
        }
        if *du >= params.bump_u.r_outer && *ds >= params.bump_s.r_outer {
            neutral += 1;
            plateau_ok &= *v == params.m_0;
        }
    }
    let ok = n >= 10_000
        && field.max_hp_m <= 1e-8
        && plateau_ok
        && pinned_u > 0
        && pinned_s > 0
        && neutral > 0
        && elapsed <= 120.0;
    report(
        "3 (escape weight)",
        ok,
        &format!(
            "{n} grid points, max H_p m = {:.2e}, plateaus m_u/{pinned_u} m_s/{pinned_s} m_0/{neutral}, {elapsed:.1} s",
            field.max_hp_m
        ),
    );
}

#[test]
fn criterion_4_multiplier_definiteness() {
    let sys = unit_cat();
    let lift = BundleLift::zero_scalar();
    let cfg = MultiplierConfig::default();
    let r_u = -THETA;
    let above = build_multiplier(&lift, &sys, Side::Unstable, -1.0, r_u + 0.2, &cfg).unwrap();
    let below = build_multiplier(&lift, &sys, Side::Unstable, -1.0, r_u - 0.2, &cfg);
    let below_ok = matches!(below, Err(Error::ThresholdViolated(_)));
    let critical =
        threshold_by_bisection(&lift, &sys, Side::Unstable, -1.0, (-2.0, 0.0), 0.02, &cfg).unwrap();
    let est = estimate_growth_factor(&sys, &lift, Side::Unstable, -1.0, &EstimateConfig::default())
        .unwrap();
    let agree = (critical - est.extrapolated_rate).abs() < 0.05 * est.extrapolated_rate.abs();
    let ok = above.pos_margin > 0.0 && above.neg_margin < 0.0 && below_ok && agree;
    report(
        "4 (multiplier definiteness)",
        ok,
        &format!(
            "above: pos {:.3e} neg {:.3e}; below raises ThresholdViolated = {below_ok}; bisection {:.4} vs estimate {:.4}",
            above.pos_margin, above.neg_margin, critical, est.extrapolated_rate
        ),
    );
}

#[test]
fn criterion_5_generator_identity() {
    let sys = unit_cat();
    let hyp = ModelSystem::hyperbolic_model(1).unwrap();
    // three lift kinds with smooth transported symbols
    // the finite-difference error is h^2/6 times the third t-derivative, so
    // the symbols and connections are kept at modest scale
    let scalar = BundleLift::scalar(
        TrigPoly::harmonic(vec![0, 0], 1, c(0.02, 0.01))
            .sum(&TrigPoly::harmonic(vec![0, 0], -1, c(0.02, -0.01))),
    );
    let a0 = DMatrix::from_row_slice(2, 2, &[c(0.3, 0.0), c(0.1, 0.2), c(0.1, -0.2), c(-0.2, 0.0)]);
    let custom = BundleLift::custom(MatrixTrigPoly::from_constant(&a0, 2));
    let perp = BundleLift::perp_forms(1);

    let w_struct = MatrixSection::Constant(DMatrix::from_row_slice(
        2,
        2,
        &[c(2.0, 0.0), c(0.5, 0.1), c(0.5, -0.1), c(1.0, 0.0)],
    ));
    let q_cat = CotangentPoint::new(
        PhasePoint::cat(0.31, 0.87, 0.5),
        DVector::from_vec(vec![0.4, -0.6, 0.3]),
    )
    .unwrap();
    let q_hyp = CotangentPoint::new(
        PhasePoint::orbit(0.3),
        DVector::from_vec(vec![0.2, 0.7, -0.5]),
    )
    .unwrap();

    let cases: Vec<(&str, f64, f64)> = vec![
        (
            "scalar",
            generator_check(&scalar, &sys, &MatrixSection::Constant(DMatrix::identity(1, 1)), &q_cat, 1e-4)
                .unwrap(),
            {
                let d1 = generator_check(&scalar, &sys, &MatrixSection::Constant(DMatrix::identity(1, 1)), &q_cat, 1e-3).unwrap();
                let d2 = generator_check(&scalar, &sys, &MatrixSection::Constant(DMatrix::identity(1, 1)), &q_cat, 5e-4).unwrap();
                d1 / d2
            },
        ),
        (
            "custom",
            generator_check(&custom, &sys, &w_struct, &q_cat, 1e-4).unwrap(),
            {
                let d1 = generator_check(&custom, &sys, &w_struct, &q_cat, 1e-3).unwrap();
                let d2 = generator_check(&custom, &sys, &w_struct, &q_cat, 5e-4).unwrap();
                d1 / d2
            },
        ),
        (
            "perp_forms",
            {
                let w = MatrixSection::Constant(DMatrix::identity(2, 2) * c(0.4, 0.0));
                generator_check(&perp, &hyp, &w, &q_hyp, 1e-4).unwrap()
            },
            {
                let w = MatrixSection::Constant(DMatrix::identity(2, 2) * c(0.4, 0.0));
                let d1 = generator_check(&perp, &hyp, &w, &q_hyp, 1e-3).unwrap();
                let d2 = generator_check(&perp, &hyp, &w, &q_hyp, 5e-4).unwrap();
                d1 / d2
            },
        ),
    ];
    let mut ok = true;
    let mut detail = String::new();
    for (name, defect, ratio) in &cases {
        let good = *defect <= 1e-8 && (2.0..8.0).contains(ratio);
        ok &= good;
        detail.push_str(&format!("{name}: defect {defect:.2e}, h-halving ratio {ratio:.2}; "));
    }
    report("5 (generator identity)", ok, detail.trim_end_matches("; "));
}

#[test]
fn criterion_6_resolvent_identity() {
    let sys = unit_cat();
    let quad = ResolventQuad {
        eval_base: 8,
        eval_fiber: 2,
        ..Default::default()
    };
    // deterministic pseudo-random fiber trig polynomials
    let mut worst = 0.0_f64;
    let mut ok = true;
    for i in 0..10u64 {
        let h = ruelle_lab::sampling::halton(37 + i, 6);
        let k1 = 1 + (h[0] * 3.0) as i64;
        let k2 = -(1 + (h[1] * 3.0) as i64);
        let f = SectionSpec::scalar(
            TrigPoly::harmonic(vec![0, 0], k1, c(h[2] - 0.5, h[3] - 0.5))
                .sum(&TrigPoly::harmonic(vec![0, 0], k2, c(h[4] - 0.5, h[5] - 0.5))),
        );
        // scalar lifts: zero and constant potentials; C_X = 0
        let lift = if i % 2 == 0 {
            BundleLift::zero_scalar()
        } else {
            BundleLift::scalar(TrigPoly::constant(c(0.2, 0.1), 2))
        };
        for lambda in [c(0.5, 0.0), c(1.1, 2.0), c(2.0, -1.0)] {
            let defect = check_resolvent_identity(&lift, &sys, &f, lambda, &quad).unwrap();
            worst = worst.max(defect);
            ok &= defect <= 1e-6;
        }
    }
    report(
        "6 (resolvent identity)",
        ok,
        &format!("worst sup-defect {worst:.2e} over 10 sections x 3 lambdas (tol 1e-6)"),
    );
}

#[test]
fn criterion_7_resonance_ground_truth() {
    let sys = unit_cat();
    let mut f = TrigPoly::zero();
    for k in -1..=1 {
        f = f.sum(&TrigPoly::harmonic(vec![0, 0], k, c(1.0, 0.0)));
    }
    let pair = ObservablePair::scalar(f.clone(), f);
    let scan = pole_scan(&pair, &sys, &ContourSpec::default(), 12).unwrap();
    let two_pi = std::f64::consts::TAU;
    let targets = [c(0.0, 0.0), c(0.0, two_pi), c(0.0, -two_pi)];
    let mut ok = true;
    let mut worst_loc = 0.0_f64;
    for target in targets {
        let best = scan
            .poles
            .iter()
            .map(|p| (c(p[0], p[1]) - target).norm())
            .fold(f64::INFINITY, f64::min);
        worst_loc = worst_loc.max(best);
        ok &= best <= 1e-3;
    }
    let mut worst_spurious = 0.0_f64;
    for (p, r) in scan.poles.iter().zip(&scan.residues) {
        let loc = c(p[0], p[1]);
        if targets.iter().all(|t| (loc - t).norm() > 1e-3) {
            worst_spurious = worst_spurious.max(c(r[0], r[1]).norm());
        }
    }
    ok &= worst_spurious <= 1e-6;
    // mean-zero base observable: transform is pole free
    let base = TrigPoly::harmonic(vec![1, 0], 0, c(1.0, 0.0));
    let base_pair = ObservablePair::scalar(base.clone(), base.conjugate());
    let base_scan = pole_scan(&base_pair, &sys, &ContourSpec::default(), 12).unwrap();
    let base_worst = base_scan
        .residues
        .iter()
        .map(|r| c(r[0], r[1]).norm())
        .fold(0.0, f64::max);
    ok &= base_worst <= 1e-6;
    report(
        "7 (resonance ground truth)",
        ok,
        &format!(
            "pole location error {worst_loc:.2e} (tol 1e-3); strongest spurious residue {worst_spurious:.2e}; mean-zero scan max residue {base_worst:.2e}"
        ),
    );
}

#[test]
fn criterion_8_correlation_equivalence() {
    let sys = unit_cat();
    let mut worst = 0.0_f64;
    let mut ok = true;
    for i in 0..20u64 {
        let h = ruelle_lab::sampling::halton(101 + i, 8);
        let m1 = [(h[0] * 3.0) as i64 - 1, (h[1] * 3.0) as i64 - 1];
        let m2 = [(h[2] * 3.0) as i64 - 1, (h[3] * 3.0) as i64 - 1];
        let k1 = (h[4] * 5.0) as i64 - 2;
        let k2 = (h[5] * 5.0) as i64 - 2;
        let f = TrigPoly::harmonic(vec![m1[0], m1[1]], k1, c(h[6], 0.3))
            .sum(&TrigPoly::harmonic(vec![0, 0], -k1, c(0.4, -h[7])));
        let g = TrigPoly::harmonic(vec![m2[0], m2[1]], k2, c(1.0 - h[6], 0.1))
            .sum(&TrigPoly::harmonic(vec![-m1[0], -m1[1]], -k1, c(0.2, h[7] - 0.5)));
        let pair = ObservablePair::scalar(f, g);
        for t in 0..=10 {
            let t = t as f64;
            let exact = correlation(&pair, &sys, t).unwrap();
            let (freqs, fm) = quadrature_frequencies(&pair, &sys, t as usize + 1);
            let (nb, nf) = alias_free_grid(&freqs, fm);
            let quad = correlation_quadrature(&pair, &sys, t, nb, nf).unwrap();
            let err = (exact - quad).norm();
            worst = worst.max(err);
            ok &= err <= 1e-8;
        }
    }
    report(
        "8 (correlation equivalence)",
        ok,
        &format!("worst |bookkeeping - quadrature| = {worst:.2e} over 20 pairs, t in 0..=10 (tol 1e-8)"),
    );
}

#[test]
fn criterion_9_transport_growth_bound() {
    let mut ok = true;
    let mut detail = String::new();
    // suspension with a constant scalar potential
    {
        let sys = unit_cat();
        let lift = BundleLift::scalar(TrigPoly::constant(c(0.25, 0.0), 2));
        let cfg = EstimateConfig::default();
        let growth = transport_growth(&sys, &lift, &cfg).unwrap();
        let rates = contraction_rates(&sys, &cfg).unwrap();
        for m in [0.0, -1.0, -2.0] {
            let est = estimate_growth_factor(&sys, &lift, Side::Unstable, m, &cfg).unwrap();
            let bound = growth.rate + rates.theta_s * m + est.residual + growth.residual + 1e-9;
            ok &= est.extrapolated_rate <= bound;
            detail.push_str(&format!(
                "cat m={m}: {:.4} <= {:.4}; ",
                est.extrapolated_rate, bound
            ));
        }
    }
    // rate model with perpendicular 1-forms
    {
        let sys = ModelSystem::hyperbolic_model(1).unwrap();
        let lift = BundleLift::perp_forms(1);
        let cfg = EstimateConfig::default();
        let growth = transport_growth(&sys, &lift, &cfg).unwrap();
        let rates = contraction_rates(&sys, &cfg).unwrap();
        for m in [0.0, -1.0, -2.0] {
            let est = estimate_growth_factor(&sys, &lift, Side::Unstable, m, &cfg).unwrap();
            let bound = growth.rate + rates.theta_s * m + est.residual + growth.residual + 1e-9;
            ok &= est.extrapolated_rate <= bound;
            detail.push_str(&format!(
                "rate-model m={m}: {:.4} <= {:.4}; ",
                est.extrapolated_rate, bound
            ));
        }
    }
    report("9 (transport growth bound)", ok, detail.trim_end_matches("; "));
}

// Interfaces exercised directly: the exact-splitting surface used by the
// acceptance checks above.
#[test]
fn splitting_surface_exposes_duals() {
    let sys = unit_cat();
    let sp = exact_splitting(&sys, &PhasePoint::cat(0.2, 0.4, 0.1)).unwrap();
    assert_eq!(sp.dual_eu.ncols(), 1);
    assert_eq!(sp.dual_es.ncols(), 1);
}
