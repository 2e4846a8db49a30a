//! Deterministic sample generation: Halton low-discrepancy points and
//! Gauss-Legendre rules. Everything here is pure arithmetic so runs are
//! reproducible bit for bit.

use crate::flows::{ModelKind, ModelSystem, PhasePoint};

/// Van der Corput radical inverse in the given base.
pub fn radical_inverse(mut index: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut out = 0.0;
    while index > 0 {
        out += (index % base) as f64 * f;
        index /= base;
        f *= inv;
    }
    out
}

/// d-dimensional Halton point (bases 2, 3, 5, 7, ...).
pub fn halton(index: u64, dim: usize) -> Vec<f64> {
    const BASES: [u64; 8] = [2, 3, 5, 7, 11, 13, 17, 19];
    (0..dim).map(|i| radical_inverse(index, BASES[i])).collect()
}

/// Deterministic phase-space sample set: Halton points on the base torus
/// paired with a uniform fiber grid (scaled by the local roof). The seed
/// only offsets the start of the Halton sequence.
pub fn phase_samples(
    sys: &ModelSystem,
    base_count: usize,
    fiber_count: usize,
    seed: u64,
) -> Vec<PhasePoint> {
    let start = 1 + seed;
    let mut out = Vec::with_capacity(base_count * fiber_count.max(1));
    match sys.kind() {
        ModelKind::CatSuspension => {
            for i in 0..base_count {
                let h = halton(start + i as u64, 2);
                let base = nalgebra::Vector2::new(h[0], h[1]);
                let tau = sys.roof_value(&base);
                for j in 0..fiber_count.max(1) {
                    let frac = (j as f64 + 0.5) / fiber_count.max(1) as f64;
                    out.push(PhasePoint::Cat { base, s: frac * tau });
                }
            }
        }
        ModelKind::HyperbolicGeodesicModel => {
            for i in 0..base_count {
                let h = halton(start + i as u64, 1);
                out.push(PhasePoint::Orbit { label: h[0] });
            }
        }
    }
    out
}

/// Nodes and weights of the n-point Gauss-Legendre rule on [-1, 1],
/// computed by Newton iteration on the Legendre recurrence.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        // Chebyshev-based initial guess
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre_with_derivative(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre_with_derivative(n, x);
        nodes[n - 1 - i] = x;
        weights[n - 1 - i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let pk = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = pk;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// The 16-point rule, used widely enough to deserve a shorthand.
pub fn gauss_legendre_16() -> (Vec<f64>, Vec<f64>) {
    gauss_legendre(16)
}
