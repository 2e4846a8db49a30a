//! Model Anosov systems: flow maps, Jacobian cocycles, the cotangent
//! (Hamiltonian) flow, and stable/unstable splittings with their duals.
//!
//! Two families are implemented. The suspension of a hyperbolic toral
//! automorphism keeps trajectories machine-exact: the flow is unit speed in
//! the fiber and all tangent dynamics is concentrated in the gluing maps at
//! roof crossings, so Jacobians are finite products of explicit crossing
//! blocks. The constant-curvature rate model carries an exact diagonal
//! action `(1, e^t, e^-t)` on its flow/unstable/stable frame.

use crate::error::Error;
use crate::trig::{CosinePoly, TrigPoly};
use crate::Result;
use nalgebra::{DMatrix, DVector, Matrix2, Vector2};

/// Default tolerance for membership in the characteristic set.
pub const CHAR_SET_TOL: f64 = 1e-8;
/// Grid used by the roof positivity scan.
const ROOF_SCAN_GRID: usize = 256;
/// Coordinates with absolute value below this are treated as zero by the
/// first-nonzero-positive orientation rule.
const ORIENT_EPS: f64 = 1e-9;

/// Which model family a system belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    CatSuspension,
    HyperbolicGeodesicModel,
}

/// A concrete Anosov flow with exact flow map and Jacobian.
#[derive(Debug, Clone)]
pub struct ModelSystem {
    kind: ModelKind,
    /// Integer base automorphism (cat suspension only).
    base_matrix: Matrix2<f64>,
    base_inverse: Matrix2<f64>,
    roof: CosinePoly,
    /// Half-dimension of the splitting (rate model only).
    half_dim: usize,
}

impl ModelSystem {
    /// Suspension of `x -> A x mod 1` under the given roof function.
    pub fn cat_suspension(a: [[i64; 2]; 2], roof: CosinePoly) -> Result<Self> {
        let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
        if det.abs() != 1 {
            return Err(Error::config("/system/base_matrix", "|det A| must be 1"));
        }
        let trace = a[0][0] + a[1][1];
        // Integer test for eigenvalues on the unit circle: complex pair has
        // |lambda|^2 = det, real +-1 solves the characteristic polynomial.
        let disc = trace * trace - 4 * det;
        let has_unit_eigenvalue = disc <= 0 || (det == 1 && trace.abs() <= 2) || (det == -1 && trace == 0);
        if has_unit_eigenvalue {
            return Err(Error::config(
                "/system/base_matrix",
                "base matrix must be hyperbolic (no eigenvalue of modulus 1)",
            ));
        }
        if roof.coefficient_lower_bound() <= 0.0 || roof.grid_min(ROOF_SCAN_GRID) <= 0.0 {
            return Err(Error::config("/system/roof", "roof function must be strictly positive"));
        }
        // det = +-1, so the inverse is the integer adjugate up to sign.
        let d = det as f64;
        let base_inverse = Matrix2::new(
            a[1][1] as f64 / d,
            -a[0][1] as f64 / d,
            -a[1][0] as f64 / d,
            a[0][0] as f64 / d,
        );
        Ok(ModelSystem {
            kind: ModelKind::CatSuspension,
            base_matrix: Matrix2::new(a[0][0] as f64, a[0][1] as f64, a[1][0] as f64, a[1][1] as f64),
            base_inverse,
            roof,
            half_dim: 1,
        })
    }

    /// Analytic rate model of a geodesic flow in constant negative curvature:
    /// the differential acts exactly as identity on the flow direction,
    /// `e^t` on the `n` unstable directions and `e^-t` on the `n` stable ones.
    pub fn hyperbolic_model(n: usize) -> Result<Self> {
        if n < 1 {
            return Err(Error::config("/system/n", "half-dimension n must be >= 1"));
        }
        Ok(ModelSystem {
            kind: ModelKind::HyperbolicGeodesicModel,
            base_matrix: Matrix2::identity(),
            base_inverse: Matrix2::identity(),
            roof: CosinePoly::constant(1.0),
            half_dim: n,
        })
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    /// Phase dimension: 3 for suspensions, `2n + 1` for the rate model.
    pub fn dim(&self) -> usize {
        match self.kind {
            ModelKind::CatSuspension => 3,
            ModelKind::HyperbolicGeodesicModel => 2 * self.half_dim + 1,
        }
    }

    pub fn unstable_dim(&self) -> usize {
        match self.kind {
            ModelKind::CatSuspension => 1,
            ModelKind::HyperbolicGeodesicModel => self.half_dim,
        }
    }

    pub fn stable_dim(&self) -> usize {
        self.unstable_dim()
    }

    /// Base-coordinate dimension of function specs (2 on the torus, 1 for
    /// the orbit label of the rate model).
    pub fn base_dim(&self) -> usize {
        match self.kind {
            ModelKind::CatSuspension => 2,
            ModelKind::HyperbolicGeodesicModel => 1,
        }
    }

    pub fn base_matrix(&self) -> &Matrix2<f64> {
        &self.base_matrix
    }

    pub fn base_inverse(&self) -> &Matrix2<f64> {
        &self.base_inverse
    }

    pub fn roof(&self) -> &CosinePoly {
        &self.roof
    }

    pub fn roof_value(&self, base: &Vector2<f64>) -> f64 {
        self.roof.eval(&[base.x, base.y])
    }

    pub fn has_constant_roof(&self) -> bool {
        self.roof.is_constant()
    }

    /// Mean roof value; also the total phase-space volume of the suspension
    /// chart (the oscillating terms integrate to zero over the torus).
    pub fn mean_roof(&self) -> f64 {
        self.roof.constant
    }

    /// Generator in chart coordinates at `x`.
    pub fn generator(&self, _x: &PhasePoint) -> DVector<f64> {
        let d = self.dim();
        let mut v = DVector::zeros(d);
        match self.kind {
            // X = d/ds, fiber is the last coordinate
            ModelKind::CatSuspension => v[2] = 1.0,
            // X = d/dz, flow label is the first coordinate
            ModelKind::HyperbolicGeodesicModel => v[0] = 1.0,
        }
        v
    }

    /// Validate that a trig-polynomial spec matches this model's chart.
    pub fn validate_section(&self, f: &TrigPoly) -> Result<()> {
        for t in &f.terms {
            if t.base_freq.len() != self.base_dim() {
                return Err(Error::UnsupportedObservable(format!(
                    "term base frequency has {} components, model expects {}",
                    t.base_freq.len(),
                    self.base_dim()
                )));
            }
            if self.kind == ModelKind::HyperbolicGeodesicModel && t.fiber_freq != 0 {
                return Err(Error::UnsupportedObservable(
                    "rate model sections carry no fiber harmonics".into(),
                ));
            }
        }
        Ok(())
    }

    /// Evaluate a trig-polynomial spec at a phase point.
    pub fn eval_section(&self, f: &TrigPoly, x: &PhasePoint) -> num_complex::Complex64 {
        match x {
            PhasePoint::Cat { base, s } => {
                f.eval(&[base.x, base.y], s / self.roof_value(base))
            }
            PhasePoint::Orbit { label } => f.eval(&[*label], 0.0),
        }
    }

    /// Derivative of a spec along the flow, again a trig polynomial.
    ///
    /// On suspensions this requires a constant roof (the fiber harmonics are
    /// `exp(2 pi i k s / tau)` and differentiating brings down `1/tau(x)`).
    pub fn flow_derivative(&self, f: &TrigPoly) -> Result<TrigPoly> {
        use num_complex::Complex64;
        self.validate_section(f)?;
        let terms = match self.kind {
            ModelKind::CatSuspension => {
                if !self.has_constant_roof() && f.terms.iter().any(|t| t.fiber_freq != 0) {
                    return Err(Error::UnsupportedObservable(
                        "flow derivative of fiber harmonics needs a constant roof".into(),
                    ));
                }
                let tau = self.roof.constant;
                f.terms
                    .iter()
                    .map(|t| {
                        let factor =
                            Complex64::new(0.0, std::f64::consts::TAU * t.fiber_freq as f64 / tau);
                        let c = t.coeff() * factor;
                        crate::trig::TrigTerm {
                            base_freq: t.base_freq.clone(),
                            fiber_freq: t.fiber_freq,
                            coeff: [c.re, c.im],
                        }
                    })
                    .collect()
            }
            ModelKind::HyperbolicGeodesicModel => f
                .terms
                .iter()
                .map(|t| {
                    let factor =
                        Complex64::new(0.0, std::f64::consts::TAU * t.base_freq[0] as f64);
                    let c = t.coeff() * factor;
                    crate::trig::TrigTerm {
                        base_freq: t.base_freq.clone(),
                        fiber_freq: t.fiber_freq,
                        coeff: [c.re, c.im],
                    }
                })
                .collect(),
        };
        Ok(TrigPoly { terms })
    }
}

/// A point of the phase space.
#[derive(Debug, Clone, PartialEq)]
pub enum PhasePoint {
    /// Suspension chart: base on the torus, fiber coordinate `0 <= s < tau(base)`.
    Cat { base: Vector2<f64>, s: f64 },
    /// Rate model: time label along the reference orbit, taken mod 1 for
    /// pairings (the reference closed orbit has unit period).
    Orbit { label: f64 },
}

impl PhasePoint {
    pub fn cat(x1: f64, x2: f64, s: f64) -> Self {
        PhasePoint::Cat {
            base: Vector2::new(x1.rem_euclid(1.0), x2.rem_euclid(1.0)),
            s,
        }
    }

    pub fn orbit(label: f64) -> Self {
        PhasePoint::Orbit { label }
    }

    pub fn cat_base(&self) -> &Vector2<f64> {
        match self {
            PhasePoint::Cat { base, .. } => base,
            _ => panic!("phase point does not belong to a suspension"),
        }
    }

    pub fn cat_fiber(&self) -> f64 {
        match self {
            PhasePoint::Cat { s, .. } => *s,
            _ => panic!("phase point does not belong to a suspension"),
        }
    }

    /// Chart coordinates as a flat vector.
    pub fn coords(&self) -> Vec<f64> {
        match self {
            PhasePoint::Cat { base, s } => vec![base.x, base.y, *s],
            PhasePoint::Orbit { label } => vec![*label],
        }
    }
}

/// A covector over a phase point, optionally kept on the cosphere.
#[derive(Debug, Clone)]
pub struct CotangentPoint {
    pub x: PhasePoint,
    pub xi: DVector<f64>,
    pub normalized: bool,
    /// Accumulated `log |d phi^t(x)^{-T} xi|` along flows applied to this
    /// point; zero at construction, only tracked when `normalized`.
    pub log_expansion: f64,
}

impl CotangentPoint {
    pub fn new(x: PhasePoint, xi: DVector<f64>) -> Result<Self> {
        if xi.norm() == 0.0 {
            return Err(Error::config("/cotangent/xi", "covector must be nonzero"));
        }
        Ok(CotangentPoint {
            x,
            xi,
            normalized: false,
            log_expansion: 0.0,
        })
    }

    pub fn normalized(x: PhasePoint, xi: DVector<f64>) -> Result<Self> {
        let n = xi.norm();
        if n == 0.0 {
            return Err(Error::config("/cotangent/xi", "covector must be nonzero"));
        }
        Ok(CotangentPoint {
            x,
            xi: xi / n,
            normalized: true,
            log_expansion: 0.0,
        })
    }
}

/// Stable/unstable splitting at a point together with the dual splitting.
///
/// Tangent bases are columns; covector bases are columns of the dual
/// matrices (operating by Euclidean pairing in chart coordinates).
#[derive(Debug, Clone)]
pub struct Splitting {
    pub x: PhasePoint,
    pub e0: DVector<f64>,
    pub eu_basis: DMatrix<f64>,
    pub es_basis: DMatrix<f64>,
    pub dual_e0: DVector<f64>,
    /// Basis of `E_u* = (E_0 + E_u)^perp`; dimension equals `dim E_s`.
    pub dual_eu: DMatrix<f64>,
    /// Basis of `E_s* = (E_0 + E_s)^perp`; dimension equals `dim E_u`.
    pub dual_es: DMatrix<f64>,
    pub invariance_residual: f64,
}

/// One gluing event met while walking a suspension orbit.
#[derive(Debug, Clone, Copy)]
struct Crossing {
    /// Base point in the cell whose roof is being crossed (for both
    /// directions this is where the crossing block is evaluated).
    base: Vector2<f64>,
    forward: bool,
}

/// Walk the suspension flow for time `t`, invoking `visit` at each crossing
/// in chronological order. Returns the end point.
fn walk_cat<F: FnMut(&Crossing)>(
    sys: &ModelSystem,
    base: Vector2<f64>,
    s: f64,
    t: f64,
    visit: &mut F,
) -> (Vector2<f64>, f64) {
    let mut b = base;
    let mut s = s;
    if t >= 0.0 {
        let mut remaining = t;
        loop {
            let to_roof = sys.roof_value(&b) - s;
            if remaining < to_roof {
                s += remaining;
                break;
            }
            remaining -= to_roof;
            visit(&Crossing { base: b, forward: true });
            b = apply_map(&sys.base_matrix, &b);
            s = 0.0;
        }
    } else {
        let mut remaining = -t;
        while remaining > s {
            remaining -= s;
            b = apply_map(&sys.base_inverse, &b);
            visit(&Crossing { base: b, forward: false });
            s = sys.roof_value(&b);
        }
        s -= remaining;
        // Exactly hitting the previous roof leaves s = tau(b); canonicalize.
        let tau = sys.roof_value(&b);
        if s >= tau {
            b = apply_map(&sys.base_matrix, &b);
            s = 0.0;
        }
    }
    (b, s)
}

fn apply_map(m: &Matrix2<f64>, b: &Vector2<f64>) -> Vector2<f64> {
    let v = m * b;
    Vector2::new(v.x.rem_euclid(1.0), v.y.rem_euclid(1.0))
}

/// Crossing block in chart coordinates `(x1, x2, s)`: the gluing map
/// `(x, s) -> (A x, s - tau(x))` differentiates to `[[A, 0], [-grad tau, 1]]`.
fn crossing_block(sys: &ModelSystem, base: &Vector2<f64>) -> DMatrix<f64> {
    let a = &sys.base_matrix;
    let g = sys.roof.gradient(&[base.x, base.y]);
    let mut m = DMatrix::identity(3, 3);
    m[(0, 0)] = a[(0, 0)];
    m[(0, 1)] = a[(0, 1)];
    m[(1, 0)] = a[(1, 0)];
    m[(1, 1)] = a[(1, 1)];
    m[(2, 0)] = -g[0];
    m[(2, 1)] = -g[1];
    m
}

/// Covector jump across a forward roof crossing leaving the cell of `base`:
/// `xi -> C(base)^{-T} xi`.
pub(crate) fn forward_crossing_covector_map(sys: &ModelSystem, base: &Vector2<f64>) -> DMatrix<f64> {
    let c = crossing_block(sys, base);
    c.transpose()
        .try_inverse()
        .expect("crossing blocks are invertible")
}

/// Covector jump across a backward crossing entering the cell of `base`:
/// the inverse of the forward map, `xi -> C(base)^T xi`.
pub(crate) fn backward_crossing_covector_map(sys: &ModelSystem, base: &Vector2<f64>) -> DMatrix<f64> {
    crossing_block(sys, base).transpose()
}

fn crossing_block_inverse(sys: &ModelSystem, base: &Vector2<f64>) -> DMatrix<f64> {
    let ai = &sys.base_inverse;
    let g = sys.roof.gradient(&[base.x, base.y]);
    let mut m = DMatrix::identity(3, 3);
    m[(0, 0)] = ai[(0, 0)];
    m[(0, 1)] = ai[(0, 1)];
    m[(1, 0)] = ai[(1, 0)];
    m[(1, 1)] = ai[(1, 1)];
    // bottom row of [[A,0],[-g,1]]^{-1} is g * A^{-1}
    m[(2, 0)] = g[0] * ai[(0, 0)] + g[1] * ai[(1, 0)];
    m[(2, 1)] = g[0] * ai[(0, 1)] + g[1] * ai[(1, 1)];
    m
}

/// Visit the Jacobian factors of `d phi^t(x)` in chronological order,
/// together with the chart cell holding the state right after each factor.
pub(crate) fn for_each_jacobian_factor_at<F: FnMut(&DMatrix<f64>, &PhasePoint)>(
    sys: &ModelSystem,
    x: &PhasePoint,
    t: f64,
    mut f: F,
) -> PhasePoint {
    match (sys.kind, x) {
        (ModelKind::CatSuspension, PhasePoint::Cat { base, s }) => {
            let mut visit = |c: &Crossing| {
                if c.forward {
                    let m = crossing_block(sys, &c.base);
                    let after = PhasePoint::Cat {
                        base: apply_map(&sys.base_matrix, &c.base),
                        s: 0.0,
                    };
                    f(&m, &after);
                } else {
                    let m = crossing_block_inverse(sys, &c.base);
                    // frames on suspensions are fiber independent, so any
                    // fiber coordinate in the entered cell will do
                    let after = PhasePoint::Cat { base: c.base, s: 0.0 };
                    f(&m, &after);
                }
            };
            let (b, s) = walk_cat(sys, *base, *s, t, &mut visit);
            PhasePoint::Cat { base: b, s }
        }
        (ModelKind::HyperbolicGeodesicModel, PhasePoint::Orbit { label }) => {
            // Piecewise unit steps keep the diagonal factors well scaled.
            let n = sys.half_dim;
            let mut remaining = t.abs();
            let sign = t.signum();
            let mut z = *label;
            while remaining > 0.0 {
                let step = remaining.min(1.0);
                z += sign * step;
                f(&hyperbolic_diag(n, sign * step), &PhasePoint::Orbit { label: z });
                remaining -= step;
            }
            PhasePoint::Orbit { label: label + t }
        }
        _ => panic!("phase point does not belong to this model"),
    }
}

/// Visit the Jacobian factors of `d phi^t(x)` in chronological order.
pub(crate) fn for_each_jacobian_factor<F: FnMut(&DMatrix<f64>)>(
    sys: &ModelSystem,
    x: &PhasePoint,
    t: f64,
    mut f: F,
) -> PhasePoint {
    for_each_jacobian_factor_at(sys, x, t, |m, _| f(m))
}

fn hyperbolic_diag(n: usize, t: f64) -> DMatrix<f64> {
    let d = 2 * n + 1;
    let mut m = DMatrix::zeros(d, d);
    m[(0, 0)] = 1.0;
    for i in 0..n {
        m[(1 + i, 1 + i)] = t.exp();
        m[(1 + n + i, 1 + n + i)] = (-t).exp();
    }
    m
}

/// Visit the smooth orbit pieces of the walk from `x` over time `t`:
/// `f(start_point, signed_dt)` for each piece, in chronological order of the
/// walk. Suspension pieces are the fiber runs between roof crossings; the
/// rate model is chopped into unit chunks.
pub(crate) fn for_each_orbit_segment<F: FnMut(&PhasePoint, f64)>(
    sys: &ModelSystem,
    x: &PhasePoint,
    t: f64,
    mut f: F,
) -> PhasePoint {
    match (sys.kind, x) {
        (ModelKind::CatSuspension, PhasePoint::Cat { base, s }) => {
            let mut b = *base;
            let mut s = *s;
            if t >= 0.0 {
                let mut remaining = t;
                loop {
                    let to_roof = sys.roof_value(&b) - s;
                    if remaining < to_roof {
                        if remaining > 0.0 {
                            f(&PhasePoint::Cat { base: b, s }, remaining);
                        }
                        s += remaining;
                        break;
                    }
                    if to_roof > 0.0 {
                        f(&PhasePoint::Cat { base: b, s }, to_roof);
                    }
                    remaining -= to_roof;
                    b = apply_map(&sys.base_matrix, &b);
                    s = 0.0;
                }
            } else {
                let mut remaining = -t;
                loop {
                    if remaining <= s {
                        if remaining > 0.0 {
                            f(&PhasePoint::Cat { base: b, s }, -remaining);
                        }
                        s -= remaining;
                        break;
                    }
                    if s > 0.0 {
                        f(&PhasePoint::Cat { base: b, s }, -s);
                    }
                    remaining -= s;
                    b = apply_map(&sys.base_inverse, &b);
                    s = sys.roof_value(&b);
                }
                let tau = sys.roof_value(&b);
                if s >= tau {
                    b = apply_map(&sys.base_matrix, &b);
                    s = 0.0;
                }
            }
            PhasePoint::Cat { base: b, s }
        }
        (ModelKind::HyperbolicGeodesicModel, PhasePoint::Orbit { label }) => {
            let mut z = *label;
            let mut remaining = t.abs();
            let sign = t.signum();
            while remaining > 0.0 {
                let step = remaining.min(1.0);
                f(&PhasePoint::Orbit { label: z }, sign * step);
                z += sign * step;
                remaining -= step;
            }
            PhasePoint::Orbit { label: label + t }
        }
        _ => panic!("phase point does not belong to this model"),
    }
}

/// Flow map `phi^t`.
pub fn evolve(sys: &ModelSystem, x: &PhasePoint, t: f64) -> PhasePoint {
    for_each_jacobian_factor(sys, x, t, |_| {})
}

/// Differential `d phi^t(x)` in chart coordinates.
pub fn jacobian(sys: &ModelSystem, x: &PhasePoint, t: f64) -> DMatrix<f64> {
    let d = sys.dim();
    let mut j = DMatrix::identity(d, d);
    for_each_jacobian_factor(sys, x, t, |m| {
        j = m * &j;
    });
    j
}

/// `log |det d phi^t(x)|`, accumulated factor by factor. Both model families
/// are volume preserving, so this is zero up to rounding; it is computed
/// rather than assumed so the growth functional stays honest.
pub fn log_abs_det_jacobian(sys: &ModelSystem, x: &PhasePoint, t: f64) -> f64 {
    let mut log_det = 0.0;
    for_each_jacobian_factor(sys, x, t, |m| {
        log_det += m.determinant().abs().ln();
    });
    log_det
}

/// Hamiltonian flow `e^{t H_p}(x, xi) = (phi^t x, d phi^t(x)^{-T} xi)` of the
/// principal symbol `p = <xi, X>`. Normalized points are re-normalized after
/// every factor, with the accumulated log-expansion stored alongside.
pub fn cotangent_flow(sys: &ModelSystem, q: &CotangentPoint, t: f64) -> CotangentPoint {
    let mut xi = q.xi.clone();
    let mut log_expansion = q.log_expansion;
    let x = for_each_jacobian_factor(sys, &q.x, t, |m| {
        // xi <- M^{-T} xi for each Jacobian factor M, applied incrementally
        // so long flows stay well conditioned.
        let mt = m.transpose();
        let lu = mt.lu();
        xi = lu.solve(&xi).expect("jacobian factors are invertible");
        if q.normalized {
            let n = xi.norm();
            log_expansion += n.ln();
            xi /= n;
        }
    });
    CotangentPoint {
        x,
        xi,
        normalized: q.normalized,
        log_expansion,
    }
}

/// Orthonormalize the columns of `basis` (Gram correction), with the
/// first-nonzero-positive orientation rule applied per column.
pub fn orthonormalize(basis: &DMatrix<f64>) -> DMatrix<f64> {
    let (mut q, _) = basis.clone().qr().unpack();
    fix_orientation(&mut q);
    q
}

fn fix_orientation(q: &mut DMatrix<f64>) {
    for c in 0..q.ncols() {
        let mut sign = 1.0;
        for r in 0..q.nrows() {
            let v = q[(r, c)];
            if v.abs() > ORIENT_EPS {
                sign = v.signum();
                break;
            }
        }
        if sign < 0.0 {
            for r in 0..q.nrows() {
                q[(r, c)] = -q[(r, c)];
            }
        }
    }
}

/// One of the two invariant halves of the hyperbolic splitting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InvariantSubspace {
    Stable,
    Unstable,
}

/// Orthonormal basis of an invariant subspace at `x` (exact where the model
/// provides one, cone iteration otherwise).
pub fn invariant_basis(
    sys: &ModelSystem,
    x: &PhasePoint,
    subspace: InvariantSubspace,
    frame_horizon: f64,
) -> DMatrix<f64> {
    match exact_splitting(sys, x) {
        Some(sp) => match subspace {
            InvariantSubspace::Stable => sp.es_basis,
            InvariantSubspace::Unstable => sp.eu_basis,
        },
        None => {
            let dim = match subspace {
                InvariantSubspace::Stable => sys.stable_dim(),
                InvariantSubspace::Unstable => sys.unstable_dim(),
            };
            cone_iterate(
                sys,
                x,
                frame_horizon,
                dim,
                subspace == InvariantSubspace::Unstable,
            )
        }
    }
}

/// Log singular-value range of `d phi^t(x)` restricted to an invariant
/// subspace, computed in the moving frame of the splitting: the factor
/// products are projected back onto the subspace at every step, so the
/// contracting directions stay accurate at arbitrarily long horizons
/// (a naive pushforward lets `eps * lambda^t` noise take over).
pub fn invariant_restricted_log_sv(
    sys: &ModelSystem,
    x: &PhasePoint,
    t: f64,
    subspace: InvariantSubspace,
    frame_horizon: f64,
) -> (f64, f64) {
    let mut b_cur = invariant_basis(sys, x, subspace, frame_horizon);
    let k = b_cur.ncols();
    let mut r_acc = DMatrix::<f64>::identity(k, k);
    let mut log_scale = 0.0;
    for_each_jacobian_factor_at(sys, x, t, |m, after| {
        let b_next = invariant_basis(sys, after, subspace, frame_horizon);
        let step = b_next.transpose() * (m * &b_cur);
        r_acc = &step * &r_acc;
        let s = r_acc.amax();
        if s > 0.0 {
            r_acc /= s;
            log_scale += s.ln();
        }
        b_cur = b_next;
    });
    let sv = r_acc.svd(false, false).singular_values;
    (log_scale + sv.max().ln(), log_scale + sv.min().ln())
}

/// Log singular-value range of `d phi^t(x)` restricted to the span of
/// `basis`, computed as a scaled QR cocycle. Accurate while the transverse
/// noise `eps * e^{theta |t|}` stays below the smallest restricted singular
/// value; for the invariant subspaces at long horizons use
/// [`invariant_restricted_log_sv`] instead.
pub fn restricted_log_singular_values(
    sys: &ModelSystem,
    x: &PhasePoint,
    t: f64,
    basis: &DMatrix<f64>,
) -> (f64, f64) {
    let k = basis.ncols();
    let mut q = orthonormalize(basis);
    let mut r_acc = DMatrix::<f64>::identity(k, k);
    let mut log_scale = 0.0;
    for_each_jacobian_factor(sys, x, t, |m| {
        let prod = m * &q;
        let (qq, rr) = prod.qr().unpack();
        q = qq;
        r_acc = &rr * &r_acc;
        let s = r_acc.amax();
        if s > 0.0 {
            r_acc /= s;
            log_scale += s.ln();
        }
    });
    let sv = r_acc.svd(false, false).singular_values;
    let smax = sv.max();
    let smin = sv.min();
    (log_scale + smax.ln(), log_scale + smin.ln())
}

/// Sine of the largest principal angle between the column spans of `a`, `b`.
pub fn subspace_angle(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let qa = orthonormalize(a);
    let qb = orthonormalize(b);
    // residual of projecting a-columns onto span(b)
    let proj = &qb * (qb.transpose() * &qa);
    let resid = &qa - proj;
    let sv = resid.svd(false, false).singular_values;
    sv.max().min(1.0)
}

/// Exact splitting where the model provides one in closed form: any rate
/// model, and suspensions with a constant roof (eigenvectors of the base
/// automorphism, trivial fiber component).
pub fn exact_splitting(sys: &ModelSystem, x: &PhasePoint) -> Option<Splitting> {
    match sys.kind {
        ModelKind::HyperbolicGeodesicModel => {
            let n = sys.half_dim;
            let d = 2 * n + 1;
            let mut e0 = DVector::zeros(d);
            e0[0] = 1.0;
            let eu = DMatrix::from_fn(d, n, |r, c| if r == 1 + c { 1.0 } else { 0.0 });
            let es = DMatrix::from_fn(d, n, |r, c| if r == 1 + n + c { 1.0 } else { 0.0 });
            Some(Splitting {
                x: x.clone(),
                dual_e0: e0.clone(),
                dual_eu: es.clone(),
                dual_es: eu.clone(),
                e0,
                eu_basis: eu,
                es_basis: es,
                invariance_residual: 0.0,
            })
        }
        ModelKind::CatSuspension => {
            if !sys.has_constant_roof() {
                return None;
            }
            let (vu, vs) = base_eigenvectors(&sys.base_matrix)?;
            let embed = |v: Vector2<f64>| {
                let mut col = DMatrix::zeros(3, 1);
                col[(0, 0)] = v.x;
                col[(1, 0)] = v.y;
                orthonormalize(&col)
            };
            let rot90 = |v: Vector2<f64>| Vector2::new(-v.y, v.x);
            let mut e0 = DVector::zeros(3);
            e0[2] = 1.0;
            Some(Splitting {
                x: x.clone(),
                dual_e0: e0.clone(),
                // E_u* annihilates E_0 + E_u: rotate the unstable eigenvector.
                dual_eu: embed(rot90(vu)),
                dual_es: embed(rot90(vs)),
                e0,
                eu_basis: embed(vu),
                es_basis: embed(vs),
                invariance_residual: 0.0,
            })
        }
    }
}

/// Eigenvectors of a hyperbolic 2x2 matrix: (unstable, stable).
fn base_eigenvectors(a: &Matrix2<f64>) -> Option<(Vector2<f64>, Vector2<f64>)> {
    let tr = a[(0, 0)] + a[(1, 1)];
    let det = a.determinant();
    let disc = tr * tr - 4.0 * det;
    if disc <= 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    let l1 = (tr + sq) / 2.0;
    let l2 = (tr - sq) / 2.0;
    let (lu, ls) = if l1.abs() >= l2.abs() { (l1, l2) } else { (l2, l1) };
    let eigvec = |lambda: f64| {
        // (A - lambda I) v = 0; pick the better conditioned row.
        let r1 = Vector2::new(a[(0, 0)] - lambda, a[(0, 1)]);
        let r2 = Vector2::new(a[(1, 0)], a[(1, 1)] - lambda);
        let v = if r1.norm() >= r2.norm() {
            Vector2::new(-r1.y, r1.x)
        } else {
            Vector2::new(-r2.y, r2.x)
        };
        v / v.norm()
    };
    Some((eigvec(lu), eigvec(ls)))
}

/// Push a generic subspace through the cocycle to locate the dominant
/// (unstable) subspace at `x`; `forward = false` runs the time-reversed
/// procedure for the stable one.
///
/// The crossing sequence is recorded along the orbit leaving `x` and the
/// Jacobian blocks are replayed in reverse, so the iterate ends at `x`
/// exactly instead of reintegrating a numerically diverging shadow orbit.
fn cone_iterate(sys: &ModelSystem, x: &PhasePoint, horizon: f64, dim: usize, forward: bool) -> DMatrix<f64> {
    let d = sys.dim();
    // Deterministic generic start: decimals of irrational constants keep it
    // away from the invariant subbundles.
    let seed = [
        0.6180339887498949,
        0.4142135623730951,
        0.7320508075688772,
        0.2360679774997896,
        0.6457513110645906,
        0.3166247903553998,
        0.1622776601683795,
    ];
    let start = DMatrix::from_fn(d, dim, |r, c| seed[(r + 3 * c) % seed.len()] + (r * c) as f64 * 0.01);
    let mut q = orthonormalize(&start);
    // Unstable: collect the backward orbit's crossings, replay the forward
    // blocks in chronological order. Stable: mirror image.
    let mut factors: Vec<DMatrix<f64>> = Vec::new();
    for_each_jacobian_factor(sys, x, if forward { -horizon } else { horizon }, |m| {
        factors.push(m.clone());
    });
    // The recorded blocks multiply to d phi^{-h} of the outgoing walk;
    // inverting them in reverse order replays the cocycle into x.
    for m in factors.iter().rev() {
        let inv = m.clone().try_inverse().expect("jacobian blocks are invertible");
        q = orthonormalize(&(inv * &q));
    }
    fix_orientation(&mut q);
    q
}

fn annihilator(span: &DMatrix<f64>) -> DMatrix<f64> {
    // Orthogonal complement by Gram-Schmidt completion against the
    // canonical basis; in Euclidean chart coordinates the annihilator of a
    // subspace is its orthogonal complement.
    let d = span.nrows();
    let k = span.ncols();
    let q = orthonormalize(span);
    let mut cols: Vec<DVector<f64>> = Vec::with_capacity(d - k);
    for i in 0..d {
        let mut r = DVector::zeros(d);
        r[i] = 1.0;
        r -= &q * (q.transpose() * &r);
        for c in &cols {
            let p = c.dot(&r);
            r -= c * p;
        }
        let n = r.norm();
        if n > 1e-8 {
            cols.push(r / n);
            if cols.len() == d - k {
                break;
            }
        }
    }
    assert_eq!(cols.len(), d - k, "rank-deficient span in annihilator");
    let mut out = DMatrix::from_fn(d, d - k, |r, c| cols[c][r]);
    fix_orientation(&mut out);
    out
}

/// Compute the splitting by cone iteration and solve the annihilator systems
/// for the dual splitting. The invariance residual is the largest principal
/// angle between pushed-forward and recomputed subspaces at the test time.
pub fn compute_splitting(sys: &ModelSystem, x: &PhasePoint, horizon: f64, tol: f64) -> Result<Splitting> {
    if horizon <= 0.0 {
        return Err(Error::config("/splitting/horizon", "horizon must be positive"));
    }
    if sys.kind == ModelKind::HyperbolicGeodesicModel {
        return Ok(exact_splitting(sys, x).expect("rate model splitting is built in"));
    }
    let du = sys.unstable_dim();
    let ds = sys.stable_dim();
    let eu = cone_iterate(sys, x, horizon, du, true);
    let es = cone_iterate(sys, x, horizon, ds, false);
    let e0 = sys.generator(x);
    let d = sys.dim();

    let stack = |cols: Vec<&DMatrix<f64>>| {
        let total: usize = cols.iter().map(|m| m.ncols()).sum();
        let mut out = DMatrix::zeros(d, total);
        let mut c0 = 0;
        for m in cols {
            out.view_mut((0, c0), (d, m.ncols())).copy_from(m);
            c0 += m.ncols();
        }
        out
    };
    let e0m = DMatrix::from_column_slice(d, 1, e0.as_slice());
    let dual_eu = annihilator(&stack(vec![&e0m, &eu]));
    let dual_es = annihilator(&stack(vec![&e0m, &es]));
    let dual_e0_m = annihilator(&stack(vec![&eu, &es]));
    let dual_e0 = DVector::from_column_slice(dual_e0_m.column(0).as_slice());

    // Invariance test at t* = 1: push the unstable space forward and the
    // stable one backward (their contracting directions) and compare with
    // the spaces recomputed at the image points.
    let t_star = 1.0;
    let yf = evolve(sys, x, t_star);
    let yb = evolve(sys, x, -t_star);
    let eu_pushed = jacobian(sys, x, t_star) * &eu;
    let es_pushed = jacobian(sys, x, -t_star) * &es;
    let eu_there = cone_iterate(sys, &yf, horizon, du, true);
    let es_there = cone_iterate(sys, &yb, horizon, ds, false);
    let residual = subspace_angle(&eu_pushed, &eu_there).max(subspace_angle(&es_pushed, &es_there));
    if residual > tol {
        return Err(Error::NonConvergence(format!(
            "splitting invariance residual {residual:e} exceeds tol {tol:e} at horizon {horizon}"
        )));
    }
    Ok(Splitting {
        x: x.clone(),
        e0,
        eu_basis: eu,
        es_basis: es,
        dual_e0,
        dual_eu,
        dual_es,
        invariance_residual: residual,
    })
}

/// Distance from a unit covector to a subspace spanned by the (orthonormal)
/// columns of `dual`.
pub fn covector_subspace_distance(xi_hat: &DVector<f64>, dual: &DMatrix<f64>) -> f64 {
    let proj = dual * (dual.transpose() * xi_hat);
    (xi_hat - proj).norm()
}

/// Neighborhood data for the dispersal test: normalized-coordinate balls
/// around the dual subspaces plus a finite-covector ball around the zero
/// section.
#[derive(Debug, Clone, Copy)]
pub struct NeighborhoodSpec {
    pub radius_u: f64,
    pub radius_s: f64,
    pub eps_zero: f64,
}

impl Default for NeighborhoodSpec {
    fn default() -> Self {
        NeighborhoodSpec {
            radius_u: 0.1,
            radius_s: 0.1,
            eps_zero: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DispersalRegion {
    NearUnstableDual,
    NearStableDual,
    NearZeroSection,
}

#[derive(Debug, Clone, Copy)]
pub struct DispersalResult {
    pub entered_at: f64,
    pub region: DispersalRegion,
}

fn dual_spaces_at(sys: &ModelSystem, x: &PhasePoint) -> (DMatrix<f64>, DMatrix<f64>) {
    let sp = exact_splitting(sys, x)
        .unwrap_or_else(|| compute_splitting(sys, x, 20.0, 1e-6).expect("splitting for dispersal test"));
    (sp.dual_eu, sp.dual_es)
}

/// First sampled time at which the lifted trajectory of `q` enters the
/// target neighborhoods: `V_u` or `V_0` going forward, `V_s` or `V_0` going
/// backward. The point must lie on the characteristic set and outside the
/// source-side neighborhood.
pub fn check_char_set_dispersal(
    sys: &ModelSystem,
    q: &CotangentPoint,
    spec: &NeighborhoodSpec,
    t_max: f64,
    dt: f64,
    backward: bool,
) -> Result<DispersalResult> {
    let xdir = sys.generator(&q.x);
    let pairing = q.xi.dot(&xdir).abs() / q.xi.norm();
    if pairing > CHAR_SET_TOL {
        return Err(Error::config(
            "/dispersal/q",
            format!("point is off the characteristic set: |<xi, X>| = {pairing:e}"),
        ));
    }
    // Points at fiber infinity must start away from the source-side dual
    // subspace; finite covectors on it simply decay to the zero section.
    if q.normalized {
        let (dual_eu, dual_es) = dual_spaces_at(sys, &q.x);
        let xi_hat = q.xi.normalize();
        let source = if backward {
            covector_subspace_distance(&xi_hat, &dual_eu)
        } else {
            covector_subspace_distance(&xi_hat, &dual_es)
        };
        let source_radius = if backward { spec.radius_u } else { spec.radius_s };
        if source <= source_radius {
            return Err(Error::config(
                "/dispersal/q",
                "point starts inside the source-side neighborhood",
            ));
        }
    }
    let steps = (t_max / dt).ceil() as usize;
    let mut current = q.clone();
    for k in 0..=steps {
        let t = (k as f64 * dt).min(t_max);
        let xi_norm = current.xi.norm();
        let xi_hat = &current.xi / xi_norm;
        if !q.normalized && xi_norm < spec.eps_zero {
            return Ok(DispersalResult {
                entered_at: t,
                region: DispersalRegion::NearZeroSection,
            });
        }
        let (dual_eu, dual_es) = dual_spaces_at(sys, &current.x);
        if !backward && covector_subspace_distance(&xi_hat, &dual_eu) < spec.radius_u {
            return Ok(DispersalResult {
                entered_at: t,
                region: DispersalRegion::NearUnstableDual,
            });
        }
        if backward && covector_subspace_distance(&xi_hat, &dual_es) < spec.radius_s {
            return Ok(DispersalResult {
                entered_at: t,
                region: DispersalRegion::NearStableDual,
            });
        }
        if k < steps {
            let step = dt.min(t_max - t);
            current = cotangent_flow(sys, &current, if backward { -step } else { step });
        }
    }
    Err(Error::NotDispersed { t_max })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trig::CosTerm;

    pub(crate) fn unit_cat() -> ModelSystem {
        ModelSystem::cat_suspension([[2, 1], [1, 1]], CosinePoly::constant(1.0)).unwrap()
    }

    fn golden() -> f64 {
        (1.0 + 5.0_f64.sqrt()) / 2.0
    }

    fn lambda_plus() -> f64 {
        (3.0 + 5.0_f64.sqrt()) / 2.0
    }

    #[test]
    fn rejects_non_hyperbolic_base() {
        assert!(ModelSystem::cat_suspension([[1, 1], [0, 1]], CosinePoly::constant(1.0)).is_err());
        assert!(ModelSystem::cat_suspension([[0, 1], [-1, 0]], CosinePoly::constant(1.0)).is_err());
        assert!(ModelSystem::cat_suspension([[2, 1], [1, 1]], CosinePoly::constant(-1.0)).is_err());
    }

    #[test]
    fn rejects_sign_indefinite_roof() {
        let roof = CosinePoly {
            constant: 0.5,
            terms: vec![CosTerm {
                freq: [1, 0],
                amplitude: 0.6,
                phase: 0.0,
            }],
        };
        assert!(ModelSystem::cat_suspension([[2, 1], [1, 1]], roof).is_err());
    }

    #[test]
    fn evolve_pure_fiber_motion_at_fixed_point() {
        let sys = unit_cat();
        let x = PhasePoint::cat(0.0, 0.0, 0.25);
        let y = evolve(&sys, &x, 0.5);
        assert_eq!(y, PhasePoint::cat(0.0, 0.0, 0.75));
    }

    #[test]
    fn evolve_crosses_one_roof() {
        let sys = unit_cat();
        let x = PhasePoint::cat(0.1, 0.2, 0.9);
        let y = evolve(&sys, &x, 0.2);
        // base A (0.1,0.2) = (0.4, 0.3), fiber wraps to 0.1
        match y {
            PhasePoint::Cat { base, s } => {
                assert!((base.x - 0.4).abs() < 1e-12);
                assert!((base.y - 0.3).abs() < 1e-12);
                assert!((s - 0.1).abs() < 1e-12);
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn evolve_t_zero_is_identity() {
        let sys = unit_cat();
        let x = PhasePoint::cat(0.37, 0.58, 0.21);
        assert_eq!(evolve(&sys, &x, 0.0), x);
        let h = ModelSystem::hyperbolic_model(2).unwrap();
        let z = PhasePoint::orbit(0.4);
        assert_eq!(evolve(&h, &z, 0.0), z);
    }

    #[test]
    fn evolve_group_law() {
        let sys = unit_cat();
        let x = PhasePoint::cat(0.13, 0.77, 0.4);
        for (a, b) in [(0.7, 1.6), (2.3, -0.9), (-1.2, -2.4), (3.3, 0.0)] {
            let lhs = evolve(&sys, &evolve(&sys, &x, a), b);
            let rhs = evolve(&sys, &x, a + b);
            let (lc, rc) = (lhs.coords(), rhs.coords());
            for (u, v) in lc.iter().zip(&rc) {
                assert!((u - v).abs() < 1e-9, "group law: {lc:?} vs {rc:?}");
            }
        }
    }

    #[test]
    fn jacobian_constant_roof_block_form() {
        let sys = unit_cat();
        let x = PhasePoint::cat(0.3, 0.9, 0.0);
        let j = jacobian(&sys, &x, 1.0);
        let expect = [[2.0, 1.0, 0.0], [1.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        for r in 0..3 {
            for c in 0..3 {
                assert!((j[(r, c)] - expect[r][c]).abs() < 1e-12);
            }
        }
        assert!((j.determinant() - 1.0).abs() < 1e-12);
        let j0 = jacobian(&sys, &x, 0.0);
        assert_eq!(j0, DMatrix::identity(3, 3));
    }

    #[test]
    fn jacobian_hyperbolic_diag_action() {
        let sys = ModelSystem::hyperbolic_model(1).unwrap();
        let x = PhasePoint::orbit(0.0);
        let j = jacobian(&sys, &x, 2.0);
        assert!((j[(0, 0)] - 1.0).abs() < 1e-12);
        assert!((j[(1, 1)] - 2.0_f64.exp()).abs() < 1e-9);
        assert!((j[(2, 2)] - (-2.0_f64).exp()).abs() < 1e-12);
        assert!((j.determinant() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn jacobian_cocycle_law() {
        let roof = CosinePoly {
            constant: 1.0,
            terms: vec![CosTerm {
                freq: [1, 0],
                amplitude: 0.1,
                phase: 0.0,
            }],
        };
        let sys = ModelSystem::cat_suspension([[2, 1], [1, 1]], roof).unwrap();
        let x = PhasePoint::cat(0.21, 0.68, 0.3);
        for (a, b) in [(0.8, 1.4), (1.9, -0.7), (-1.1, -0.6)] {
            let lhs = jacobian(&sys, &x, a + b);
            let rhs = jacobian(&sys, &evolve(&sys, &x, a), b) * jacobian(&sys, &x, a);
            assert!((lhs - rhs).amax() < 1e-9);
        }
    }

    #[test]
    fn volume_preserved_on_exact_models() {
        let sys = unit_cat();
        let x = PhasePoint::cat(0.41, 0.09, 0.6);
        for t in [0.5, 3.0, 7.5, -4.25] {
            assert!(log_abs_det_jacobian(&sys, &x, t).abs() < 1e-10);
        }
        let h = ModelSystem::hyperbolic_model(2).unwrap();
        let z = PhasePoint::orbit(0.0);
        assert!(log_abs_det_jacobian(&h, &z, 5.5).abs() < 1e-10);
    }

    #[test]
    fn cotangent_flow_preserves_flow_dual_direction() {
        let sys = unit_cat();
        let x = PhasePoint::cat(0.0, 0.0, 0.0);
        let xi = DVector::from_vec(vec![0.0, 0.0, 1.0]);
        let q = CotangentPoint::new(x, xi).unwrap();
        for t in [0.7, 2.0, -3.1] {
            let out = cotangent_flow(&sys, &q, t);
            assert!((out.xi.norm() - 1.0).abs() < 1e-12);
            assert!((out.xi[2] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn cotangent_flow_expands_unstable_dual_by_lambda_plus() {
        let sys = unit_cat();
        // E_u* over the fixed point: covector annihilating E_0 + E_u, i.e.
        // proportional to (1, -phi, 0).
        let phi = golden();
        let xi = DVector::from_vec(vec![1.0, -phi, 0.0]);
        let scale = xi.norm();
        let q = CotangentPoint::new(PhasePoint::cat(0.0, 0.0, 0.0), xi).unwrap();
        let out = cotangent_flow(&sys, &q, 1.0);
        assert!((out.xi.norm() / scale - lambda_plus()).abs() < 1e-9);
        // normalized variant reports the same growth as log expansion
        let qn = CotangentPoint::normalized(PhasePoint::cat(0.0, 0.0, 0.0), q.xi.clone()).unwrap();
        let outn = cotangent_flow(&sys, &qn, 1.0);
        assert!((outn.log_expansion - lambda_plus().ln()).abs() < 1e-9);
        assert!((outn.xi.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cotangent_flow_group_law() {
        let sys = unit_cat();
        let xi = DVector::from_vec(vec![0.3, -0.8, 0.51]);
        let q = CotangentPoint::new(PhasePoint::cat(0.05, 0.44, 0.7), xi).unwrap();
        let a = 1.3;
        let b = -2.1;
        let stepped = cotangent_flow(&sys, &cotangent_flow(&sys, &q, a), b);
        let direct = cotangent_flow(&sys, &q, a + b);
        assert!((&stepped.xi - &direct.xi).amax() < 1e-9);
    }

    #[test]
    fn exact_splitting_matches_eigen_oracle() {
        let sys = unit_cat();
        let sp = exact_splitting(&sys, &PhasePoint::cat(0.2, 0.5, 0.1)).unwrap();
        let phi = golden();
        // E_u proportional to (phi, 1, 0)
        let vu = DVector::from_vec(vec![phi, 1.0, 0.0]).normalize();
        assert!((sp.eu_basis.column(0).into_owned() - vu).norm() < 1e-12);
        // dual_eu proportional to (1, -phi, 0), first-nonzero-positive
        let du = DVector::from_vec(vec![1.0, -phi, 0.0]).normalize();
        assert!((sp.dual_eu.column(0).into_owned() - du).norm() < 1e-12);
    }

    #[test]
    fn computed_splitting_matches_exact_for_unit_cat() {
        let sys = unit_cat();
        let x = PhasePoint::cat(0.37, 0.12, 0.45);
        let sp = compute_splitting(&sys, &x, 25.0, 1e-6).unwrap();
        let exact = exact_splitting(&sys, &x).unwrap();
        // flow-direction contamination of the cone iterate decays like
        // lambda_+^{-horizon} ~ 1e-9 at horizon 25
        assert!(subspace_angle(&sp.eu_basis, &exact.eu_basis) < 1e-8);
        assert!(subspace_angle(&sp.es_basis, &exact.es_basis) < 1e-8);
        assert!(subspace_angle(&sp.dual_eu, &exact.dual_eu) < 1e-8);
        assert!(sp.invariance_residual <= 1e-6);
    }

    #[test]
    fn duality_pairings_vanish_on_exact_models() {
        let pair = |cov: &DMatrix<f64>, vecs: &DMatrix<f64>| (cov.transpose() * vecs).amax();
        let check = |sp: &Splitting, d: usize, tol: f64| {
            let e0m = DMatrix::from_column_slice(d, 1, sp.e0.as_slice());
            let d0m = DMatrix::from_column_slice(d, 1, sp.dual_e0.as_slice());
            assert!(pair(&sp.dual_eu, &e0m) < tol);
            assert!(pair(&sp.dual_eu, &sp.eu_basis) < tol);
            assert!(pair(&sp.dual_es, &e0m) < tol);
            assert!(pair(&sp.dual_es, &sp.es_basis) < tol);
            assert!(pair(&d0m, &sp.eu_basis) < tol);
            assert!(pair(&d0m, &sp.es_basis) < tol);
        };
        let sys = unit_cat();
        let x = PhasePoint::cat(0.61, 0.83, 0.2);
        check(&exact_splitting(&sys, &x).unwrap(), 3, 1e-10);
        let h = ModelSystem::hyperbolic_model(2).unwrap();
        check(&exact_splitting(&h, &PhasePoint::orbit(0.3)).unwrap(), 5, 1e-10);
        // the cone-computed splitting carries the iteration residual
        check(&compute_splitting(&sys, &x, 25.0, 1e-6).unwrap(), 3, 1e-8);
    }

    #[test]
    fn splitting_converges_for_nonconstant_roof() {
        let roof = CosinePoly {
            constant: 1.0,
            terms: vec![CosTerm {
                freq: [1, 0],
                amplitude: 0.1,
                phase: 0.0,
            }],
        };
        let sys = ModelSystem::cat_suspension([[2, 1], [1, 1]], roof).unwrap();
        let x = PhasePoint::cat(0.3, 0.65, 0.2);
        let sp = compute_splitting(&sys, &x, 20.0, 1e-6).unwrap();
        assert!(sp.invariance_residual <= 1e-6);
        // doubled horizon agrees
        let sp2 = compute_splitting(&sys, &x, 40.0, 1e-6).unwrap();
        assert!(subspace_angle(&sp.eu_basis, &sp2.eu_basis) < 1e-8);
    }

    #[test]
    fn splitting_invariance_under_pushforward() {
        let sys = unit_cat();
        let x = PhasePoint::cat(0.5, 0.25, 0.6);
        let sp = compute_splitting(&sys, &x, 20.0, 1e-6).unwrap();
        for t in [1.0, 5.0] {
            let yf = evolve(&sys, &x, t);
            let there = compute_splitting(&sys, &yf, 20.0, 1e-6).unwrap();
            assert!(subspace_angle(&(jacobian(&sys, &x, t) * &sp.eu_basis), &there.eu_basis) < 1e-6);
            let yb = evolve(&sys, &x, -t);
            let back = compute_splitting(&sys, &yb, 20.0, 1e-6).unwrap();
            assert!(subspace_angle(&(jacobian(&sys, &x, -t) * &sp.es_basis), &back.es_basis) < 1e-6);
        }
    }

    #[test]
    fn stable_contraction_rate_matches_eigenvalue() {
        let sys = unit_cat();
        let x = PhasePoint::cat(0.18, 0.92, 0.1);
        let sp = exact_splitting(&sys, &x).unwrap();
        let t = 12.0;
        let (lmax, _) = restricted_log_singular_values(&sys, &x, t, &sp.es_basis);
        let theta = lambda_plus().ln();
        // log |dphi^t|_{E_s}| = -k log lambda_+ with k crossings in [0, t]
        assert!((lmax / t + theta).abs() < 0.02 * theta * 2.0, "rate {}", lmax / t);
    }

    #[test]
    fn dispersal_starts_inside_target() {
        let sys = unit_cat();
        let phi = golden();
        let xi = DVector::from_vec(vec![1.0, -phi, 0.0]);
        let q = CotangentPoint::normalized(PhasePoint::cat(0.0, 0.0, 0.0), xi).unwrap();
        let r = check_char_set_dispersal(&sys, &q, &NeighborhoodSpec::default(), 10.0, 0.25, false).unwrap();
        assert_eq!(r.entered_at, 0.0);
        assert_eq!(r.region, DispersalRegion::NearUnstableDual);
    }

    #[test]
    fn dispersal_time_for_balanced_mix() {
        let sys = unit_cat();
        let phi = golden();
        // equal-size components along E_u* and E_s* over the fixed point
        let eu_dual = DVector::from_vec(vec![1.0, -phi, 0.0]).normalize();
        let es_dual = DVector::from_vec(vec![phi, 1.0, 0.0]).normalize();
        let xi = &eu_dual + &es_dual;
        let q = CotangentPoint::normalized(PhasePoint::cat(0.0, 0.0, 0.0), xi).unwrap();
        let spec = NeighborhoodSpec {
            radius_u: 0.1,
            radius_s: 0.1,
            eps_zero: 0.1,
        };
        let r = check_char_set_dispersal(&sys, &q, &spec, 20.0, 0.05, false).unwrap();
        // stable-dual component ratio decays like lambda_+^{-2t}
        let predicted = (1.0 / 0.1_f64).ln() / (2.0 * lambda_plus().ln());
        assert!(
            (r.entered_at - predicted).abs() < 1.1,
            "entered at {} predicted {}",
            r.entered_at,
            predicted
        );
        // monotone decrease of the stable-dual component along the way
        let mut prev = f64::INFINITY;
        for k in 0..5 {
            let t = k as f64 * 0.5;
            let out = cotangent_flow(&sys, &q, t);
            let dist = covector_subspace_distance(&out.xi.normalize(), &exact_splitting(&sys, &out.x).unwrap().dual_eu);
            assert!(dist <= prev + 1e-12);
            prev = dist;
        }
    }

    #[test]
    fn dispersal_into_zero_section() {
        let sys = unit_cat();
        let phi = golden();
        // finite covector in E_s*: contracts forward at rate theta
        let xi = DVector::from_vec(vec![phi, 1.0, 0.0]).normalize();
        let q = CotangentPoint::new(PhasePoint::cat(0.0, 0.0, 0.0), xi).unwrap();
        let spec = NeighborhoodSpec {
            radius_u: 1e-9,
            radius_s: 0.1,
            eps_zero: 0.01,
        };
        let r = check_char_set_dispersal(&sys, &q, &spec, 30.0, 0.25, false).unwrap();
        assert_eq!(r.region, DispersalRegion::NearZeroSection);
        let predicted = (1.0 / 0.01_f64).ln() / lambda_plus().ln();
        assert!((r.entered_at - predicted).abs() < 1.0);
    }

    #[test]
    fn dispersal_rejects_source_side_start() {
        let sys = unit_cat();
        let phi = golden();
        let xi = DVector::from_vec(vec![phi, 1.0, 0.0]);
        let q = CotangentPoint::normalized(PhasePoint::cat(0.0, 0.0, 0.0), xi).unwrap();
        assert!(check_char_set_dispersal(&sys, &q, &NeighborhoodSpec::default(), 5.0, 0.25, false).is_err());
    }

    #[test]
    fn dispersal_rejects_off_characteristic_point() {
        let sys = unit_cat();
        // E_0* pairs with X, so this point is off the characteristic set.
        let xi = DVector::from_vec(vec![0.0, 0.0, 1.0]);
        let q = CotangentPoint::normalized(PhasePoint::cat(0.3, 0.3, 0.0), xi).unwrap();
        assert!(check_char_set_dispersal(&sys, &q, &NeighborhoodSpec::default(), 2.0, 0.5, false).is_err());
    }

    #[test]
    fn dispersal_times_out_when_target_too_small() {
        let sys = unit_cat();
        let phi = golden();
        // balanced dual mix needs ~log(1/r)/(2 theta) to reach radius r
        let eu_dual = DVector::from_vec(vec![1.0, -phi, 0.0]).normalize();
        let es_dual = DVector::from_vec(vec![phi, 1.0, 0.0]).normalize();
        let q = CotangentPoint::normalized(PhasePoint::cat(0.0, 0.0, 0.0), &eu_dual + &es_dual).unwrap();
        let spec = NeighborhoodSpec {
            radius_u: 1e-12,
            radius_s: 1e-12,
            eps_zero: 1e-12,
        };
        match check_char_set_dispersal(&sys, &q, &spec, 1.0, 0.5, false) {
            Err(Error::NotDispersed { .. }) => {}
            other => panic!("expected NotDispersed, got {other:?}"),
        }
    }
}
