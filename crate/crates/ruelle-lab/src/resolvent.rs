//! Correlations, resolvent quadrature in the convergent half-plane, and
//! resonance pole extraction from Laplace-transform samples.
//!
//! Constant-roof suspensions admit exact frequency bookkeeping: base
//! frequencies pull back through integer powers of the transposed base
//! automorphism and fiber harmonics translate, so correlations and their
//! truncated Laplace transforms have closed forms. Everything else goes
//! through grid quadrature against the evolution machinery, which doubles
//! as the brute-force cross-check.

use crate::error::Error;
use crate::flows::{evolve, ModelKind, ModelSystem, PhasePoint};
use crate::lifts::{koopman_apply, parallel_transport, BundleLift, LiftKind, SectionSpec};
use crate::ratfit;
use crate::sampling::{gauss_legendre, phase_samples};
use crate::thresholds::{transport_growth, EstimateConfig, TransportGrowth};
use crate::trig::TrigPoly;
use crate::Result;
use nalgebra::{DVector, Matrix2, Vector2};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU as TWO_PI;

/// A pair of observables paired bilinearly against the chart volume:
/// `rho(t) = (1/vol) int (e^{-tX} f) . g`.
#[derive(Debug, Clone)]
pub struct ObservablePair {
    pub f: SectionSpec,
    pub g: SectionSpec,
    pub lift: BundleLift,
}

impl ObservablePair {
    pub fn scalar(f: TrigPoly, g: TrigPoly) -> Self {
        ObservablePair {
            f: SectionSpec::scalar(f),
            g: SectionSpec::scalar(g),
            lift: BundleLift::zero_scalar(),
        }
    }

    fn validate(&self, sys: &ModelSystem) -> Result<()> {
        let rank = self.lift.rank(sys);
        self.f.validate(sys, rank)?;
        self.g.validate(sys, rank)
    }

    /// Constant potential of the lift, when the pair admits bookkeeping.
    fn bookkeeping_potential(&self, sys: &ModelSystem) -> Result<Complex64> {
        match &self.lift.kind {
            LiftKind::ScalarPotential { potential } => {
                let mut constant = Complex64::new(0.0, 0.0);
                for term in &potential.terms {
                    if term.base_freq.iter().all(|&m| m == 0) && term.fiber_freq == 0 {
                        constant += term.coeff();
                    } else {
                        return Err(Error::UnsupportedObservable(
                            "exact bookkeeping needs a constant scalar potential".into(),
                        ));
                    }
                }
                let _ = sys;
                Ok(constant)
            }
            _ => Err(Error::UnsupportedObservable(
                "exact bookkeeping is limited to scalar lifts".into(),
            )),
        }
    }
}

fn require_bookkeeping_model(sys: &ModelSystem) -> Result<()> {
    match sys.kind() {
        ModelKind::CatSuspension if sys.has_constant_roof() => Ok(()),
        ModelKind::HyperbolicGeodesicModel => Ok(()),
        _ => Err(Error::UnsupportedObservable(
            "exact correlations need a constant roof".into(),
        )),
    }
}

/// Frequencies larger than this can never match another spec frequency and
/// are treated as escaped (also guards against integer overflow: the
/// hyperbolic pullback grows geometrically).
const FREQ_ESCAPE: i64 = 1 << 40;

fn int_matrix_vec(m: &Matrix2<f64>, v: [i64; 2]) -> Option<[i64; 2]> {
    if v[0].abs() > FREQ_ESCAPE || v[1].abs() > FREQ_ESCAPE {
        return None;
    }
    let a = [
        [m[(0, 0)].round() as i64, m[(0, 1)].round() as i64],
        [m[(1, 0)].round() as i64, m[(1, 1)].round() as i64],
    ];
    Some([
        a[0][0] * v[0] + a[0][1] * v[1],
        a[1][0] * v[0] + a[1][1] * v[1],
    ])
}

/// Pullback of a base frequency through `j` inverse crossings:
/// `m -> (A^{-j})^T m`, exact in integers; `None` once escaped.
fn pullback_freq(sys: &ModelSystem, m: Option<[i64; 2]>, j: usize) -> Option<[i64; 2]> {
    // (A^{-1})^T applied j times
    let ait = sys.base_inverse().transpose();
    let mut out = m;
    for _ in 0..j {
        out = out.and_then(|v| int_matrix_vec(&ait, v));
    }
    out
}

fn freq_matches(m: Option<[i64; 2]>, other: [i64; 2]) -> bool {
    matches!(m, Some(v) if v[0] + other[0] == 0 && v[1] + other[1] == 0)
}

/// Exact correlation by frequency bookkeeping.
pub fn correlation(pair: &ObservablePair, sys: &ModelSystem, t: f64) -> Result<Complex64> {
    require_bookkeeping_model(sys)?;
    pair.validate(sys)?;
    if t < 0.0 {
        return Err(Error::config("/correlation/t", "correlation time must be >= 0"));
    }
    let v = pair.bookkeeping_potential(sys)?;
    let decay = (-v * t).exp();
    match sys.kind() {
        ModelKind::HyperbolicGeodesicModel => {
            let mut rho = Complex64::new(0.0, 0.0);
            for tf in &pair.f.components[0].terms {
                for tg in &pair.g.components[0].terms {
                    if tf.base_freq[0] + tg.base_freq[0] == 0 {
                        let phase = Complex64::new(0.0, -TWO_PI * tf.base_freq[0] as f64 * t).exp();
                        rho += tf.coeff() * tg.coeff() * phase;
                    }
                }
            }
            Ok(rho * decay)
        }
        ModelKind::CatSuspension => {
            let tau = sys.mean_roof();
            let j = (t / tau).floor() as usize;
            let r = t - j as f64 * tau;
            let mut rho = Complex64::new(0.0, 0.0);
            for tf in &pair.f.components[0].terms {
                let m_j = pullback_freq(sys, Some([tf.base_freq[0], tf.base_freq[1]]), j);
                let m_j1 = pullback_freq(sys, m_j, 1);
                for tg in &pair.g.components[0].terms {
                    let mg = [tg.base_freq[0], tg.base_freq[1]];
                    let k = tf.fiber_freq;
                    let kk = tg.fiber_freq;
                    let c = tf.coeff() * tg.coeff();
                    // zone s in [r, tau): j crossings
                    if freq_matches(m_j, mg) {
                        rho += c * fiber_zone_integral(tau, k, kk, r, r, tau);
                    }
                    // zone s in [0, r): j + 1 crossings
                    if r > 0.0 && freq_matches(m_j1, mg) {
                        rho += c * fiber_zone_integral(tau, k, kk, r, 0.0, r);
                    }
                }
            }
            Ok(rho * decay / tau)
        }
    }
}

/// `int_a^b exp(2 pi i (k (s - r) + kk s) / tau) ds`.
fn fiber_zone_integral(tau: f64, k: i64, kk: i64, r: f64, a: f64, b: f64) -> Complex64 {
    let shift = Complex64::new(0.0, -TWO_PI * k as f64 * r / tau).exp();
    let total = k + kk;
    if total == 0 {
        shift * (b - a)
    } else {
        let w = Complex64::new(0.0, TWO_PI * total as f64 / tau);
        shift * ((w * b).exp() - (w * a).exp()) / w
    }
}

/// Grid-quadrature correlation: evaluates the Koopman action pointwise over
/// a torus grid and a crossing-aware fiber rule. Fully independent of the
/// frequency bookkeeping.
pub fn correlation_quadrature(
    pair: &ObservablePair,
    sys: &ModelSystem,
    t: f64,
    base_grid: usize,
    fiber_rule: usize,
) -> Result<Complex64> {
    pair.validate(sys)?;
    match sys.kind() {
        ModelKind::HyperbolicGeodesicModel => {
            let mut total = Complex64::new(0.0, 0.0);
            for i in 0..base_grid {
                let x = PhasePoint::orbit(i as f64 / base_grid as f64);
                let ku = koopman_apply(&pair.lift, sys, &pair.f, t, &x)?;
                let gv = pair.g.eval(sys, &x);
                total += ku.dot(&gv);
            }
            Ok(total / base_grid as f64)
        }
        ModelKind::CatSuspension => {
            if !sys.has_constant_roof() {
                return Err(Error::UnsupportedObservable(
                    "quadrature correlations assume a constant roof".into(),
                ));
            }
            let tau = sys.mean_roof();
            let r = t.rem_euclid(tau);
            // fiber nodes: exact uniform grid when the pullback keeps a
            // single smooth zone, composite Gauss-Legendre per zone otherwise
            let mut fiber_nodes: Vec<(f64, f64)> = Vec::new();
            if r < 1e-13 || (tau - r) < 1e-13 {
                for l in 0..fiber_rule {
                    fiber_nodes.push(((l as f64 + 0.5) / fiber_rule as f64 * tau, tau / fiber_rule as f64));
                }
            } else {
                let (gl_x, gl_w) = gauss_legendre(24);
                for (za, zb) in [(0.0, r), (r, tau)] {
                    let half = (zb - za) / 2.0;
                    for (n, w) in gl_x.iter().zip(&gl_w) {
                        fiber_nodes.push((za + half * (n + 1.0), w * half));
                    }
                }
            }
            let rows: Vec<Complex64> = (0..base_grid)
                .into_par_iter()
                .map(|i| -> Result<Complex64> {
                    let mut row = Complex64::new(0.0, 0.0);
                    for jj in 0..base_grid {
                        for (s, w) in &fiber_nodes {
                            let x = PhasePoint::cat(
                                i as f64 / base_grid as f64,
                                jj as f64 / base_grid as f64,
                                *s,
                            );
                            let ku = koopman_apply(&pair.lift, sys, &pair.f, t, &x)?;
                            let gv = pair.g.eval(sys, &x);
                            row += ku.dot(&gv) * Complex64::new(*w, 0.0);
                        }
                    }
                    Ok(row)
                })
                .collect::<Result<_>>()?;
            let total: Complex64 = rows.into_iter().sum();
            Ok(total / Complex64::new(base_grid as f64 * base_grid as f64 * tau, 0.0))
        }
    }
}

/// Pullback frequencies that can appear in the quadrature integrand up to
/// `j_max` crossings; used to pick alias-free grid sizes.
pub fn quadrature_frequencies(
    pair: &ObservablePair,
    sys: &ModelSystem,
    j_max: usize,
) -> (Vec<[i64; 2]>, i64) {
    let mut base = Vec::new();
    let mut fiber_max = 0i64;
    for tf in pair.f.components.iter().flat_map(|c| c.terms.iter()) {
        for tg in pair.g.components.iter().flat_map(|c| c.terms.iter()) {
            fiber_max = fiber_max.max((tf.fiber_freq + tg.fiber_freq).abs());
            for j in 0..=j_max {
                if let Some(m) = pullback_freq(sys, Some([tf.base_freq[0], tf.base_freq[1]]), j) {
                    base.push([m[0] + tg.base_freq[0], m[1] + tg.base_freq[1]]);
                }
            }
        }
    }
    (base, fiber_max)
}

/// Smallest grid size from the candidate list that aliases none of the
/// nonzero integrand frequencies.
pub fn alias_free_grid(freqs: &[[i64; 2]], fiber_max: i64) -> (usize, usize) {
    let candidates = [64usize, 67, 71, 73, 79, 83, 89, 97, 101];
    let base = *candidates
        .iter()
        .find(|&&n| {
            freqs.iter().all(|m| {
                let zero = m[0] == 0 && m[1] == 0;
                let aliased = m[0].rem_euclid(n as i64) == 0 && m[1].rem_euclid(n as i64) == 0;
                zero || !aliased
            })
        })
        .unwrap_or(&101);
    let fiber = (2 * fiber_max.unsigned_abs() as usize + 2).max(8);
    (base, fiber)
}

/// Samples of a resolvent application on an evaluation grid.
#[derive(Debug, Clone)]
pub struct ResolventSamples {
    pub points: Vec<PhasePoint>,
    pub values: Vec<DVector<Complex64>>,
    pub lambda: Complex64,
    pub t_max: f64,
    /// Analytic bound on the truncated tail.
    pub tail_bound: f64,
    pub transport: TransportGrowth,
}

/// Quadrature controls for `resolvent_apply`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ResolventQuad {
    pub eval_base: usize,
    pub eval_fiber: usize,
    pub panels_per_unit: usize,
    pub tail_tol: f64,
    /// Hard ceiling on the truncation horizon.
    pub t_ceiling: f64,
    pub seed: u64,
}

impl Default for ResolventQuad {
    fn default() -> Self {
        ResolventQuad {
            eval_base: 12,
            eval_fiber: 2,
            panels_per_unit: 128,
            tail_tol: 1e-9,
            t_ceiling: 1e3,
            seed: 0,
        }
    }
}

/// Apply the resolvent `R(lambda) f = int_0^inf e^{-lambda t} e^{-tX} f dt`
/// by quadrature, truncated where the analytic tail bound drops below the
/// requested tolerance.
pub fn resolvent_apply(
    lift: &BundleLift,
    sys: &ModelSystem,
    f: &SectionSpec,
    lambda: Complex64,
    quad: &ResolventQuad,
) -> Result<ResolventSamples> {
    f.validate(sys, lift.rank(sys))?;
    let growth = transport_growth(sys, lift, &EstimateConfig::default())?;
    let c_x = growth.rate;
    if lambda.re <= c_x {
        return Err(Error::OutsideConvergence {
            re_lambda: lambda.re,
            c_x,
        });
    }
    // ||f||_sup bound from the coefficients
    let f_bound: f64 = f.components.iter().map(|c| c.coeff_norm()).sum::<f64>().max(1e-30);
    let gap = lambda.re - c_x;
    let c1 = growth.log_prefactor.exp();
    // C1 ||f|| e^{-gap T} / gap < tol
    let t_max = ((c1 * f_bound / (quad.tail_tol * gap)).ln() / gap).max(1.0);
    if t_max > quad.t_ceiling {
        return Err(Error::NonConvergence(format!(
            "tail tolerance needs horizon {t_max:.1} beyond the ceiling {}",
            quad.t_ceiling
        )));
    }
    let tail_bound = c1 * f_bound * (-gap * t_max).exp() / gap;
    let points = phase_samples(sys, quad.eval_base, quad.eval_fiber, quad.seed);
    let values: Vec<DVector<Complex64>> = points
        .par_iter()
        .map(|x| resolvent_at_point(lift, sys, f, lambda, t_max, quad.panels_per_unit, x))
        .collect::<Result<_>>()?;
    Ok(ResolventSamples {
        points,
        values,
        lambda,
        t_max,
        tail_bound,
        transport: growth,
    })
}

/// March the Koopman integrand backward once, accumulating the composite
/// Simpson rule in `t`; cost is linear in the horizon.
fn resolvent_at_point(
    lift: &BundleLift,
    sys: &ModelSystem,
    f: &SectionSpec,
    lambda: Complex64,
    t_max: f64,
    panels_per_unit: usize,
    x: &PhasePoint,
) -> Result<DVector<Complex64>> {
    let rank = lift.rank(sys);
    // Simpson nodes over [0, t_max] split at the backward crossing times,
    // where the pulled-back observable may jump.
    let mut cuts = vec![0.0];
    if let PhasePoint::Cat { base, s } = x {
        let mut elapsed = *s;
        let mut b = *base;
        while elapsed < t_max {
            if elapsed > 0.0 {
                cuts.push(elapsed);
            }
            let v = sys.base_inverse() * b;
            b = Vector2::new(v.x.rem_euclid(1.0), v.y.rem_euclid(1.0));
            elapsed += sys.roof_value(&b);
        }
    }
    cuts.push(t_max);
    const EDGE_EPS: f64 = 1e-12;
    let mut nodes: Vec<(f64, f64)> = Vec::new();
    for win in cuts.windows(2) {
        let (a, b) = (win[0], win[1]);
        if b - a < 1e-13 {
            continue;
        }
        let panels = (((b - a) * panels_per_unit as f64).ceil() as usize).max(2);
        let h = (b - a) / panels as f64;
        for i in 0..panels {
            let left = a + i as f64 * h;
            nodes.push((left.max(a + EDGE_EPS), h / 6.0));
            nodes.push((left + h / 2.0, 4.0 * h / 6.0));
            nodes.push(((left + h).min(b - EDGE_EPS), h / 6.0));
        }
    }
    // incremental march: y_t = phi^{-t} x and G_t = T^t(y_t) via
    // G_{t+dt} = G_t T^{dt}(y_{t+dt})
    let mut total = DVector::<Complex64>::zeros(rank);
    let mut cur_t = 0.0;
    let mut y = x.clone();
    let mut g = nalgebra::DMatrix::<Complex64>::identity(rank, rank);
    for (t, weight) in nodes {
        let dt = t - cur_t;
        if dt > 0.0 {
            let y_next = evolve(sys, &y, -dt);
            let step = parallel_transport(lift, sys, &y_next, dt)?;
            g *= &step.matrix;
            y = y_next;
            cur_t = t;
        }
        let koopman = &g * f.eval(sys, &y);
        total += koopman * ((-lambda * cur_t).exp() * Complex64::new(weight, 0.0));
    }
    Ok(total)
}

/// Apply the lift as a differential operator to a section: `Xf = X f + A f`,
/// exactly in the trig-polynomial algebra.
pub fn apply_generator(lift: &BundleLift, sys: &ModelSystem, f: &SectionSpec) -> Result<SectionSpec> {
    let rank = lift.rank(sys);
    f.validate(sys, rank)?;
    let mut components = Vec::with_capacity(rank);
    for fc in &f.components {
        components.push(sys.flow_derivative(fc)?);
    }
    match &lift.kind {
        LiftKind::ScalarPotential { potential } => {
            components[0] = components[0].sum(&potential.product(&f.components[0]));
        }
        LiftKind::Custom { connection } => {
            for i in 0..rank {
                let mut acc = components[i].clone();
                for j in 0..rank {
                    acc = acc.sum(&connection.entry(i, j).product(&f.components[j]));
                }
                components[i] = acc;
            }
        }
        LiftKind::Forms { .. } | LiftKind::PerpForms { .. } => {
            if sys.kind() == ModelKind::HyperbolicGeodesicModel {
                let a = lift.rate_model_connection(sys);
                for i in 0..rank {
                    let mut acc = components[i].clone();
                    for j in 0..rank {
                        if a[(i, j)].norm() > 0.0 {
                            acc = acc.sum(&f.components[j].scaled(a[(i, j)]));
                        }
                    }
                    components[i] = acc;
                }
            } else {
                return Err(Error::UnsupportedObservable(
                    "form lifts on suspensions act through the gluing blocks, not a \
                     connection matrix"
                        .into(),
                ));
            }
        }
    }
    Ok(SectionSpec { components })
}

/// Sup-norm defect of `R(lambda)(X + lambda) f = f` over the evaluation grid.
pub fn check_resolvent_identity(
    lift: &BundleLift,
    sys: &ModelSystem,
    f: &SectionSpec,
    lambda: Complex64,
    quad: &ResolventQuad,
) -> Result<f64> {
    let xf = apply_generator(lift, sys, f)?;
    let mut shifted = xf;
    for (c, fc) in shifted.components.iter_mut().zip(&f.components) {
        *c = c.sum(&fc.scaled(lambda));
    }
    let applied = resolvent_apply(lift, sys, &shifted, lambda, quad)?;
    let mut defect = 0.0_f64;
    for (x, v) in applied.points.iter().zip(&applied.values) {
        let expect = f.eval(sys, x);
        defect = defect.max((v - expect).map(|z| z.norm()).max());
    }
    Ok(defect)
}

/// Truncated Laplace transform `F(lambda) = int_0^{T} e^{-lambda t} rho(t) dt`
/// of a bookkeeping correlation, in closed form.
pub fn laplace_transform(
    pair: &ObservablePair,
    sys: &ModelSystem,
    lambda: Complex64,
    t_max: f64,
) -> Result<Complex64> {
    require_bookkeeping_model(sys)?;
    pair.validate(sys)?;
    let v = pair.bookkeeping_potential(sys)?;
    match sys.kind() {
        ModelKind::HyperbolicGeodesicModel => {
            let mut total = Complex64::new(0.0, 0.0);
            for tf in &pair.f.components[0].terms {
                for tg in &pair.g.components[0].terms {
                    if tf.base_freq[0] + tg.base_freq[0] == 0 {
                        let w = lambda + v + Complex64::new(0.0, TWO_PI * tf.base_freq[0] as f64);
                        total += tf.coeff() * tg.coeff() * truncated_exp_integral(w, t_max);
                    }
                }
            }
            Ok(total)
        }
        ModelKind::CatSuspension => {
            let tau = sys.mean_roof();
            let j_max = (t_max / tau).ceil() as usize;
            let mut total = Complex64::new(0.0, 0.0);
            for tf in &pair.f.components[0].terms {
                let mut m_j = Some([tf.base_freq[0], tf.base_freq[1]]);
                for j in 0..=j_max {
                    let m_j1 = pullback_freq(sys, m_j, 1);
                    if m_j.is_none() && m_j1.is_none() {
                        break;
                    }
                    for tg in &pair.g.components[0].terms {
                        let mg = [tg.base_freq[0], tg.base_freq[1]];
                        let k = tf.fiber_freq;
                        let kk = tg.fiber_freq;
                        let c = tf.coeff() * tg.coeff() / tau;
                        let seg_start = j as f64 * tau;
                        if seg_start >= t_max {
                            continue;
                        }
                        let r_end = (t_max - seg_start).min(tau);
                        // t = j tau + r: rho_j(r) has the A-zone (j crossings)
                        // and B-zone (j+1 crossings) closed forms
                        if freq_matches(m_j, mg) {
                            total += c
                                * laplace_zone(lambda + v, tau, k, kk, seg_start, r_end, true);
                        }
                        if freq_matches(m_j1, mg) {
                            total += c
                                * laplace_zone(lambda + v, tau, k, kk, seg_start, r_end, false);
                        }
                    }
                    m_j = m_j1;
                }
            }
            Ok(total)
        }
    }
}

/// `int_0^{T} e^{-w t} dt`.
fn truncated_exp_integral(w: Complex64, t_max: f64) -> Complex64 {
    if w.norm() < 1e-14 {
        Complex64::new(t_max, 0.0)
    } else {
        (Complex64::new(1.0, 0.0) - (-w * t_max).exp()) / w
    }
}

/// `int_0^{r_end} e^{-w (seg_start + r)} I_zone(r) dr` where `I_zone` is the
/// fiber integral of the matched zone at `j` (A) or `j+1` (B) crossings.
fn laplace_zone(
    w: Complex64,
    tau: f64,
    k: i64,
    kk: i64,
    seg_start: f64,
    r_end: f64,
    zone_a: bool,
) -> Complex64 {
    let total = k + kk;
    let prefactor = (-w * seg_start).exp();
    // I_A(r) = (tau - r) e^{-i w_k r} or (tau/(2 pi i K))(e^{-i w_k r} - e^{i w_k' r})
    // I_B(r) = r e^{-i w_k r} or the negated difference
    let wk = Complex64::new(0.0, -TWO_PI * k as f64 / tau);
    let wkk = Complex64::new(0.0, TWO_PI * kk as f64 / tau);
    if total == 0 {
        // I = (tau - r) e^{wk r} (A) or r e^{wk r} (B)
        let a = wk - w;
        let (i0, i1) = exp_and_linear_integrals(a, r_end);
        if zone_a {
            prefactor * (Complex64::new(tau, 0.0) * i0 - i1)
        } else {
            prefactor * i1
        }
    } else {
        let scale = Complex64::new(0.0, TWO_PI * total as f64 / tau).finv()
            * Complex64::new(tau, 0.0)
            / Complex64::new(tau, 0.0); // tau/(2 pi i K) folded below
        let coeff = Complex64::new(tau, 0.0)
            * (Complex64::new(0.0, TWO_PI * total as f64).finv());
        let _ = scale;
        let ia = truncated_exp_integral(w - wk, r_end);
        let ib = truncated_exp_integral(w - wkk, r_end);
        let diff = ia - ib;
        if zone_a {
            prefactor * coeff * diff
        } else {
            -prefactor * coeff * diff
        }
    }
}

/// `(int_0^R e^{a r} dr, int_0^R r e^{a r} dr)`.
fn exp_and_linear_integrals(a: Complex64, r: f64) -> (Complex64, Complex64) {
    if a.norm() < 1e-14 {
        (Complex64::new(r, 0.0), Complex64::new(r * r / 2.0, 0.0))
    } else {
        let e = (a * r).exp();
        let i0 = (e - Complex64::new(1.0, 0.0)) / a;
        let i1 = (e * r - i0) / a;
        (i0, i1)
    }
}

/// Vertical-line sampling contour and reporting strip for the pole scan.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContourSpec {
    /// Real part of the sampling line (inside the convergent half-plane).
    pub re: f64,
    pub im_max: f64,
    pub samples: usize,
    /// Laplace truncation horizon.
    pub t_max: f64,
    /// Reporting strip in the real direction.
    pub strip_re_min: f64,
    pub strip_re_max: f64,
    /// Poles with residues below this floor are dropped as numerical dust.
    pub residue_floor: f64,
    /// `FitDiverged` above this held-out error.
    pub fit_ceiling: f64,
}

impl Default for ContourSpec {
    fn default() -> Self {
        ContourSpec {
            re: 0.5,
            im_max: 9.0,
            samples: 181,
            t_max: 60.0,
            strip_re_min: -0.25,
            strip_re_max: 0.45,
            residue_floor: 1e-10,
            fit_ceiling: 1e-6,
        }
    }
}

/// Laplace-transform samples, located poles, and residues.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResonanceReport {
    /// `(lambda, F(lambda))` pairs as `[re, im]` tuples.
    pub lambda_samples: Vec<([f64; 2], [f64; 2])>,
    pub poles: Vec<[f64; 2]>,
    pub residues: Vec<[f64; 2]>,
    pub fit_error: f64,
    pub degree: usize,
    pub contour_re: f64,
    pub t_max: f64,
}

/// Scan for resonances: sample the truncated Laplace transform on a vertical
/// line, fit an adaptive rational interpolant, and report its poles in the
/// strip with residues. Validation runs on every third sample.
pub fn pole_scan(
    pair: &ObservablePair,
    sys: &ModelSystem,
    contour: &ContourSpec,
    degree: usize,
) -> Result<ResonanceReport> {
    if contour.samples < 8 {
        return Err(Error::config("/contour/samples", "need at least 8 samples"));
    }
    let lambdas: Vec<Complex64> = (0..contour.samples)
        .map(|i| {
            let frac = i as f64 / (contour.samples - 1) as f64;
            Complex64::new(contour.re, -contour.im_max + 2.0 * contour.im_max * frac)
        })
        .collect();
    let values: Vec<Complex64> = lambdas
        .par_iter()
        .map(|&l| laplace_transform(pair, sys, l, contour.t_max))
        .collect::<Result<_>>()?;
    let fit = ratfit::aaa(&lambdas, &values, degree, 1e-13, 3)?;
    if fit.fit_error > contour.fit_ceiling {
        return Err(Error::FitDiverged {
            fit_error: fit.fit_error,
            ceiling: contour.fit_ceiling,
        });
    }
    let all_poles = ratfit::poles(&fit);
    let all_residues = ratfit::residues(&fit, &all_poles);
    let mut located: Vec<(Complex64, Complex64)> = all_poles
        .into_iter()
        .zip(all_residues)
        .filter(|(p, r)| {
            p.re >= contour.strip_re_min
                && p.re <= contour.strip_re_max
                && p.im.abs() <= contour.im_max
                && r.norm() >= contour.residue_floor
        })
        .collect();
    located.sort_by(|a, b| {
        a.0.im
            .abs()
            .partial_cmp(&b.0.im.abs())
            .unwrap()
            .then(a.0.im.partial_cmp(&b.0.im).unwrap())
    });
    Ok(ResonanceReport {
        lambda_samples: lambdas
            .iter()
            .zip(&values)
            .map(|(l, v)| ([l.re, l.im], [v.re, v.im]))
            .collect(),
        poles: located.iter().map(|(p, _)| [p.re, p.im]).collect(),
        residues: located.iter().map(|(_, r)| [r.re, r.im]).collect(),
        fit_error: fit.fit_error,
        degree: fit.degree(),
        contour_re: contour.re,
        t_max: contour.t_max,
    })
}
