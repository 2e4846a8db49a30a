//! Bundle lifts of the generator and their parallel transport.
//!
//! A lift is locally `X + A(x)` for an `n x n` connection matrix field; its
//! parallel transport solves `V' = -A(x(t)) V` along orbits. Scalar
//! potentials integrate in closed form segment by segment, form bundles
//! transport by exterior powers of the inverse-transpose Jacobian blocks,
//! and custom connection fields fall back to a fixed-step RK4 integrator
//! with step-halving verification.

use crate::error::Error;
use crate::flows::{
    evolve, for_each_jacobian_factor, for_each_orbit_segment, ModelKind, ModelSystem, PhasePoint,
};
use crate::trig::{MatrixTrigPoly, TrigPoly};
use crate::Result;
use nalgebra::DMatrix;
use num_complex::Complex64;

/// Default RK4 step for custom connection fields.
const RK4_STEP: f64 = 1e-3;
/// Entrywise agreement required between successive step halvings.
const RK4_AGREE_TOL: f64 = 1e-9;
/// Step floor below which the integrator reports failure.
const RK4_MIN_STEP: f64 = 1e-7;

/// The lift variants understood by the lab.
#[derive(Debug, Clone)]
pub enum LiftKind {
    /// Trivial line bundle, `X + V` for a trig-polynomial potential.
    ScalarPotential { potential: TrigPoly },
    /// Differential k-forms with the Lie derivative along X.
    Forms { k: usize },
    /// Perpendicular k-forms (annihilated by the generator contraction).
    PerpForms { k: usize },
    /// Arbitrary connection matrix field in the global frame.
    Custom { connection: MatrixTrigPoly },
}

/// Base vector field the lift lives over: the generator or its reversal
/// (adjoint lifts are lifts of `-X`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowDirection {
    Forward,
    Reversed,
}

/// A lift of the generator to a rank-n bundle.
#[derive(Debug, Clone)]
pub struct BundleLift {
    pub kind: LiftKind,
    pub direction: FlowDirection,
}

pub(crate) fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let mut out = 1usize;
    for i in 0..k.min(n - k) {
        out = out * (n - i) / (i + 1);
    }
    out
}

/// Lexicographically ordered k-subsets of {0, .., n-1}.
pub(crate) fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    if k > n {
        return Vec::new();
    }
    if k == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::with_capacity(binomial(n, k));
    let mut cur: Vec<usize> = (0..k).collect();
    loop {
        out.push(cur.clone());
        // find rightmost index that can advance
        let mut i = k;
        let mut found = false;
        while i > 0 {
            i -= 1;
            if cur[i] != i + n - k {
                found = true;
                break;
            }
        }
        if !found {
            return out;
        }
        cur[i] += 1;
        for j in i + 1..k {
            cur[j] = cur[j - 1] + 1;
        }
    }
}

/// k-th compound (exterior power) of a real matrix: entries are the k-minors
/// indexed by lexicographic row/column subsets.
pub(crate) fn compound_matrix(m: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    let d = m.nrows();
    if k == 0 {
        return DMatrix::identity(1, 1);
    }
    let idx = subsets(d, k);
    let n = idx.len();
    DMatrix::from_fn(n, n, |r, c| {
        let minor = DMatrix::from_fn(k, k, |i, j| m[(idx[r][i], idx[c][j])]);
        minor.determinant()
    })
}

impl BundleLift {
    pub fn scalar(potential: TrigPoly) -> Self {
        BundleLift {
            kind: LiftKind::ScalarPotential { potential },
            direction: FlowDirection::Forward,
        }
    }

    pub fn zero_scalar() -> Self {
        BundleLift::scalar(TrigPoly::zero())
    }

    pub fn forms(k: usize) -> Self {
        BundleLift {
            kind: LiftKind::Forms { k },
            direction: FlowDirection::Forward,
        }
    }

    pub fn perp_forms(k: usize) -> Self {
        BundleLift {
            kind: LiftKind::PerpForms { k },
            direction: FlowDirection::Forward,
        }
    }

    pub fn custom(connection: MatrixTrigPoly) -> Self {
        BundleLift {
            kind: LiftKind::Custom { connection },
            direction: FlowDirection::Forward,
        }
    }

    /// Fiber rank over the given model.
    pub fn rank(&self, sys: &ModelSystem) -> usize {
        match &self.kind {
            LiftKind::ScalarPotential { .. } => 1,
            LiftKind::Forms { k } => binomial(sys.dim(), *k),
            LiftKind::PerpForms { k } => binomial(sys.dim() - 1, *k),
            LiftKind::Custom { connection } => connection.size,
        }
    }

    pub fn validate(&self, sys: &ModelSystem) -> Result<()> {
        match &self.kind {
            LiftKind::ScalarPotential { potential } => sys.validate_section(potential)?,
            LiftKind::Forms { k } => {
                if *k > sys.dim() {
                    return Err(Error::config(
                        "/lift/k",
                        format!("form degree {k} exceeds phase dimension {}", sys.dim()),
                    ));
                }
            }
            LiftKind::PerpForms { k } => {
                if *k > sys.dim() - 1 {
                    return Err(Error::config(
                        "/lift/k",
                        format!("perpendicular form degree {k} exceeds {}", sys.dim() - 1),
                    ));
                }
            }
            LiftKind::Custom { connection } => {
                if connection.size == 0 {
                    return Err(Error::config("/lift/connection", "rank must be >= 1"));
                }
                for e in &connection.entries {
                    sys.validate_section(e)?;
                }
            }
        }
        Ok(())
    }

    fn direction_sign(&self) -> f64 {
        match self.direction {
            FlowDirection::Forward => 1.0,
            FlowDirection::Reversed => -1.0,
        }
    }

    /// Connection matrix at a point, where the kind carries one explicitly.
    /// Form lifts on suspensions have none (their dynamics sits in the
    /// gluing blocks); on the rate model they reduce to a constant diagonal.
    pub fn connection_at(&self, sys: &ModelSystem, x: &PhasePoint) -> Option<DMatrix<Complex64>> {
        match &self.kind {
            LiftKind::ScalarPotential { potential } => {
                Some(DMatrix::from_element(1, 1, sys.eval_section(potential, x)))
            }
            LiftKind::Custom { connection } => Some(eval_matrix(sys, connection, x)),
            LiftKind::Forms { .. } | LiftKind::PerpForms { .. } => {
                if sys.kind() == ModelKind::HyperbolicGeodesicModel {
                    Some(self.rate_model_connection(sys))
                } else {
                    None
                }
            }
        }
    }

    /// On the rate model the form transports are exponentials of constant
    /// diagonal matrices; this is the matching connection.
    pub(crate) fn rate_model_connection(&self, sys: &ModelSystem) -> DMatrix<Complex64> {
        let d = sys.dim();
        let n = sys.unstable_dim();
        // covector rates under the inverse transpose: flow 0, unstable -1,
        // stable +1
        let covector_rate = |i: usize| -> f64 {
            if i == 0 {
                0.0
            } else if i <= n {
                -1.0
            } else {
                1.0
            }
        };
        let indices: Vec<Vec<usize>> = match &self.kind {
            LiftKind::Forms { k } => subsets(d, *k),
            LiftKind::PerpForms { k } => subsets(d, *k)
                .into_iter()
                .filter(|s| !s.contains(&0))
                .collect(),
            _ => unreachable!("only form kinds have a rate-model connection"),
        };
        let m = indices.len();
        DMatrix::from_fn(m, m, |r, c| {
            if r == c {
                let rate: f64 = indices[r].iter().map(|&i| covector_rate(i)).sum();
                Complex64::new(-rate, 0.0)
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
    }
}

fn eval_matrix(sys: &ModelSystem, m: &MatrixTrigPoly, x: &PhasePoint) -> DMatrix<Complex64> {
    DMatrix::from_fn(m.size, m.size, |i, j| sys.eval_section(m.entry(i, j), x))
}

/// Parallel transport matrix with its operator norm.
#[derive(Debug, Clone)]
pub struct TransportResult {
    pub x: PhasePoint,
    pub t: f64,
    pub matrix: DMatrix<Complex64>,
    pub op_norm: f64,
    /// `log op_norm`, finite even when the matrix itself over/underflows.
    pub log_op_norm: f64,
}

/// Scaled transport: `matrix * exp(log_scale)` is the true transport.
pub(crate) fn transport_scaled(
    lift: &BundleLift,
    sys: &ModelSystem,
    x: &PhasePoint,
    t: f64,
) -> Result<(DMatrix<Complex64>, f64)> {
    lift.validate(sys)?;
    // Reversed lifts live over -X: their transport walks the reversed orbit.
    let base_t = lift.direction_sign() * t;
    match &lift.kind {
        LiftKind::ScalarPotential { potential } => {
            let mut integral = Complex64::new(0.0, 0.0);
            for_each_orbit_segment(sys, x, base_t, |start, dt| {
                integral += segment_potential_integral(sys, potential, start, dt);
            });
            // lift time runs against the orbit parameter for reversed lifts
            if lift.direction == FlowDirection::Reversed {
                integral = -integral;
            }
            let log_mag = -integral.re;
            let phase = Complex64::new(0.0, -integral.im).exp();
            Ok((DMatrix::from_element(1, 1, phase), log_mag))
        }
        LiftKind::Forms { k } => transport_forms(sys, x, base_t, *k, None),
        LiftKind::PerpForms { k } => {
            let keep: Vec<usize> = subsets(sys.dim(), *k)
                .iter()
                .enumerate()
                .filter(|(_, s)| !s.contains(&flow_index(sys)))
                .map(|(i, _)| i)
                .collect();
            transport_forms(sys, x, base_t, *k, Some(&keep))
        }
        LiftKind::Custom { connection } => transport_custom(lift, sys, connection, x, base_t),
    }
}

fn flow_index(sys: &ModelSystem) -> usize {
    match sys.kind() {
        ModelKind::CatSuspension => 2,
        ModelKind::HyperbolicGeodesicModel => 0,
    }
}

/// `int_0^dt V(x(u)) du` along a smooth orbit piece, in closed form.
fn segment_potential_integral(
    sys: &ModelSystem,
    potential: &TrigPoly,
    start: &PhasePoint,
    dt: f64,
) -> Complex64 {
    use std::f64::consts::TAU;
    let mut total = Complex64::new(0.0, 0.0);
    match start {
        PhasePoint::Cat { base, s } => {
            let tau = sys.roof_value(base);
            for term in &potential.terms {
                let base_phase =
                    term.base_freq[0] as f64 * base.x + term.base_freq[1] as f64 * base.y;
                let c = term.coeff() * Complex64::new(0.0, TAU * base_phase).exp();
                if term.fiber_freq == 0 {
                    total += c * dt;
                } else {
                    let w = Complex64::new(0.0, TAU * term.fiber_freq as f64 / tau);
                    let e0 = (w * *s).exp();
                    let e1 = (w * (*s + dt)).exp();
                    total += c * (e1 - e0) / w;
                }
            }
        }
        PhasePoint::Orbit { label } => {
            for term in &potential.terms {
                let c = term.coeff();
                let m = term.base_freq[0];
                if m == 0 {
                    total += c * dt;
                } else {
                    let w = Complex64::new(0.0, TAU * m as f64);
                    let e0 = (w * *label).exp();
                    let e1 = (w * (*label + dt)).exp();
                    total += c * (e1 - e0) / w;
                }
            }
        }
    }
    total
}

fn transport_forms(
    sys: &ModelSystem,
    x: &PhasePoint,
    t: f64,
    k: usize,
    keep: Option<&[usize]>,
) -> Result<(DMatrix<Complex64>, f64)> {
    let full = binomial(sys.dim(), k);
    let n = keep.map_or(full, |s| s.len());
    let mut acc = DMatrix::<f64>::identity(n, n);
    let mut log_scale = 0.0;
    for_each_jacobian_factor(sys, x, t, |m| {
        // covectors transform by the inverse transpose of each block
        let inv_t = m
            .transpose()
            .try_inverse()
            .expect("jacobian blocks are invertible");
        let comp = compound_matrix(&inv_t, k);
        let reduced = match keep {
            Some(sel) => DMatrix::from_fn(n, n, |r, c| comp[(sel[r], sel[c])]),
            None => comp,
        };
        acc = &reduced * &acc;
        let s = acc.amax();
        if s > 0.0 {
            acc /= s;
            log_scale += s.ln();
        }
    });
    Ok((acc.map(|v| Complex64::new(v, 0.0)), log_scale))
}

fn transport_custom(
    lift: &BundleLift,
    sys: &ModelSystem,
    connection: &MatrixTrigPoly,
    x: &PhasePoint,
    base_t: f64,
) -> Result<(DMatrix<Complex64>, f64)> {
    let mut step = RK4_STEP;
    let mut prev: Option<DMatrix<Complex64>> = None;
    loop {
        let m = transport_custom_fixed(lift, sys, connection, x, base_t, step);
        if let Some(p) = &prev {
            if (&m - p).map(|c| c.norm()).max() <= RK4_AGREE_TOL {
                return Ok((m, 0.0));
            }
        }
        prev = Some(m);
        step /= 2.0;
        if step < RK4_MIN_STEP {
            return Err(Error::IntegratorStep(format!(
                "transport integrator did not settle above step {RK4_MIN_STEP:e}"
            )));
        }
    }
}

fn transport_custom_fixed(
    lift: &BundleLift,
    sys: &ModelSystem,
    connection: &MatrixTrigPoly,
    x: &PhasePoint,
    base_t: f64,
    h0: f64,
) -> DMatrix<Complex64> {
    let n = connection.size;
    let mut v = DMatrix::<Complex64>::identity(n, n);
    let lift_sign = lift.direction_sign();
    for_each_orbit_segment(sys, x, base_t, |start, dt| {
        let dir = dt.signum();
        let len = dt.abs();
        let steps = (len / h0).ceil().max(1.0) as usize;
        let h = len / steps as f64;
        let a_at = |u: f64| -> DMatrix<Complex64> {
            let p = advance_within_segment(start, dir * u);
            eval_matrix(sys, connection, &p)
        };
        // chain rule: lift time differs from the integration parameter by
        // the product of the orbit direction and the lift direction
        let sigma = Complex64::new(dir * lift_sign, 0.0);
        for i in 0..steps {
            let u0 = i as f64 * h;
            let a1 = a_at(u0);
            let a2 = a_at(u0 + h / 2.0);
            let a4 = a_at(u0 + h);
            let k1 = -(&a1 * &v) * sigma;
            let k2 = -(&a2 * (&v + &k1 * Complex64::new(h / 2.0, 0.0))) * sigma;
            let k3 = -(&a2 * (&v + &k2 * Complex64::new(h / 2.0, 0.0))) * sigma;
            let k4 = -(&a4 * (&v + &k3 * Complex64::new(h, 0.0))) * sigma;
            v += (k1 + k2 * Complex64::new(2.0, 0.0) + k3 * Complex64::new(2.0, 0.0) + k4)
                * Complex64::new(h / 6.0, 0.0);
        }
    });
    v
}

fn advance_within_segment(start: &PhasePoint, du: f64) -> PhasePoint {
    match start {
        PhasePoint::Cat { base, s } => PhasePoint::Cat {
            base: *base,
            s: s + du,
        },
        PhasePoint::Orbit { label } => PhasePoint::Orbit { label: label + du },
    }
}

/// Largest singular value of a complex matrix.
pub(crate) fn sigma_max(m: &DMatrix<Complex64>) -> f64 {
    m.clone().svd(false, false).singular_values.max()
}

/// Parallel transport `T^t(x)` of the lift in frame coordinates.
pub fn parallel_transport(
    lift: &BundleLift,
    sys: &ModelSystem,
    x: &PhasePoint,
    t: f64,
) -> Result<TransportResult> {
    let (scaled, log_scale) = transport_scaled(lift, sys, x, t)?;
    let smax = sigma_max(&scaled);
    let log_op_norm = smax.ln() + log_scale;
    let factor = Complex64::new(log_scale.exp(), 0.0);
    let matrix = scaled.map(|c| c * factor);
    Ok(TransportResult {
        x: x.clone(),
        t,
        matrix,
        op_norm: log_op_norm.exp(),
        log_op_norm,
    })
}

/// `log ||T^t(x)||`, stable for arbitrarily long horizons.
pub fn transport_log_norm(lift: &BundleLift, sys: &ModelSystem, x: &PhasePoint, t: f64) -> Result<f64> {
    let (scaled, log_scale) = transport_scaled(lift, sys, x, t)?;
    Ok(sigma_max(&scaled).ln() + log_scale)
}

/// Rank-n observable section: one trig polynomial per frame component.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SectionSpec {
    pub components: Vec<TrigPoly>,
}

impl SectionSpec {
    pub fn scalar(f: TrigPoly) -> Self {
        SectionSpec {
            components: vec![f],
        }
    }

    pub fn validate(&self, sys: &ModelSystem, rank: usize) -> Result<()> {
        if self.components.len() != rank {
            return Err(Error::UnsupportedObservable(format!(
                "section has {} components, lift rank is {rank}",
                self.components.len()
            )));
        }
        for c in &self.components {
            sys.validate_section(c)?;
        }
        Ok(())
    }

    pub fn eval(&self, sys: &ModelSystem, x: &PhasePoint) -> nalgebra::DVector<Complex64> {
        nalgebra::DVector::from_iterator(
            self.components.len(),
            self.components.iter().map(|c| sys.eval_section(c, x)),
        )
    }
}

/// Koopman action `e^{-t X} u (x) = T^t(phi^{-t} x) u(phi^{-t} x)`; for
/// reversed lifts the base flow is that of `-X`.
pub fn koopman_apply(
    lift: &BundleLift,
    sys: &ModelSystem,
    u: &SectionSpec,
    t: f64,
    x: &PhasePoint,
) -> Result<nalgebra::DVector<Complex64>> {
    u.validate(sys, lift.rank(sys))?;
    let y = evolve(sys, x, -lift.direction_sign() * t);
    let tr = parallel_transport(lift, sys, &y, t)?;
    Ok(&tr.matrix * u.eval(sys, &y))
}

/// Adjoint lift: a lift of `-X` with connection `A*(x) - div(X) I`. Both
/// model families preserve the chart volume, so the divergence term
/// vanishes; `divergence` keeps the formula explicit.
pub fn adjoint_lift(lift: &BundleLift, sys: &ModelSystem) -> Result<BundleLift> {
    debug_assert_eq!(divergence(sys), 0.0);
    let direction = match lift.direction {
        FlowDirection::Forward => FlowDirection::Reversed,
        FlowDirection::Reversed => FlowDirection::Forward,
    };
    let kind = match &lift.kind {
        LiftKind::ScalarPotential { potential } => LiftKind::ScalarPotential {
            potential: potential.conjugate(),
        },
        LiftKind::Custom { connection } => LiftKind::Custom {
            connection: connection.adjoint(),
        },
        LiftKind::Forms { .. } | LiftKind::PerpForms { .. } => {
            if sys.kind() == ModelKind::HyperbolicGeodesicModel {
                let a = lift.rate_model_connection(sys);
                LiftKind::Custom {
                    connection: MatrixTrigPoly::from_constant(&a.adjoint(), sys.base_dim()),
                }
            } else {
                return Err(Error::UnsupportedObservable(
                    "form lifts on suspensions have no smooth connection-matrix representation; \
                     take the adjoint through an explicit custom connection"
                        .into(),
                ));
            }
        }
    };
    Ok(BundleLift { kind, direction })
}

/// Divergence of the generator with respect to the chart volume: zero for
/// both model families (`d/ds` against `dx ds`; trace-free diagonal action).
pub fn divergence(_sys: &ModelSystem) -> f64 {
    0.0
}
