//! Adaptive rational approximation in barycentric form with greedy support
//! selection, plus pole and residue extraction. Used to locate resonances
//! from Laplace-transform samples without initial guesses.

use crate::error::Error;
use crate::Result;
use nalgebra::DMatrix;
use num_complex::Complex64;

/// Barycentric rational interpolant `r(z) = N(z) / D(z)` with
/// `N = sum w_j f_j / (z - z_j)` and `D = sum w_j / (z - z_j)`.
#[derive(Debug, Clone)]
pub struct RationalFit {
    pub support: Vec<Complex64>,
    pub values: Vec<Complex64>,
    pub weights: Vec<Complex64>,
    /// Max relative deviation on the held-out validation samples.
    pub fit_error: f64,
    /// Max relative deviation on the fitting samples.
    pub train_error: f64,
}

impl RationalFit {
    pub fn eval(&self, z: Complex64) -> Complex64 {
        let mut num = Complex64::new(0.0, 0.0);
        let mut den = Complex64::new(0.0, 0.0);
        for ((zj, fj), wj) in self.support.iter().zip(&self.values).zip(&self.weights) {
            let d = z - zj;
            if d.norm() < 1e-14 {
                return *fj;
            }
            let c = wj / d;
            num += c * fj;
            den += c;
        }
        num / den
    }

    pub fn degree(&self) -> usize {
        self.support.len()
    }
}

/// Greedy barycentric fit. Every `holdout_stride`-th sample is excluded from
/// fitting and used for validation; `fit_error` reports the worst relative
/// deviation there.
pub fn aaa(
    points: &[Complex64],
    values: &[Complex64],
    max_degree: usize,
    rel_tol: f64,
    holdout_stride: usize,
) -> Result<RationalFit> {
    if points.len() != values.len() || points.len() < 4 {
        return Err(Error::config("/ratfit/samples", "need at least 4 samples"));
    }
    let mut fit_idx = Vec::new();
    let mut holdout_idx = Vec::new();
    for i in 0..points.len() {
        if holdout_stride > 1 && i % holdout_stride == holdout_stride - 1 {
            holdout_idx.push(i);
        } else {
            fit_idx.push(i);
        }
    }
    let scale = values.iter().map(|v| v.norm()).fold(0.0, f64::max).max(1e-300);

    let mut support: Vec<usize> = Vec::new();
    let mut rest: Vec<usize> = fit_idx.clone();
    // start from the mean as the degree-0 approximation
    let mean = values.iter().sum::<Complex64>() / values.len() as f64;
    let mut current: Vec<Complex64> = vec![mean; points.len()];
    let mut weights: Vec<Complex64> = Vec::new();

    for _ in 0..max_degree.max(1) {
        // next support point: worst residual among remaining fit points
        let (pos, _) = rest
            .iter()
            .enumerate()
            .map(|(pos, &i)| (pos, (values[i] - current[i]).norm()))
            .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
            .expect("nonempty candidate set");
        let picked = rest.swap_remove(pos);
        support.push(picked);

        // Loewner least squares for the weights
        let m = support.len();
        let rows = rest.len();
        if rows < m {
            break;
        }
        let mut loewner = DMatrix::<Complex64>::zeros(rows, m);
        for (r, &i) in rest.iter().enumerate() {
            for (c, &j) in support.iter().enumerate() {
                loewner[(r, c)] = (values[i] - values[j]) / (points[i] - points[j]);
            }
        }
        let svd = loewner.svd(false, true);
        let vt = svd.v_t.expect("svd with v^T");
        // right singular vector for the smallest singular value
        let last = vt.nrows() - 1;
        weights = (0..m).map(|c| vt[(last, c)].conj()).collect();

        // evaluate everywhere
        let fit = RationalFit {
            support: support.iter().map(|&j| points[j]).collect(),
            values: support.iter().map(|&j| values[j]).collect(),
            weights: weights.clone(),
            fit_error: 0.0,
            train_error: 0.0,
        };
        for (i, c) in current.iter_mut().enumerate() {
            *c = fit.eval(points[i]);
        }
        let worst_fit = rest
            .iter()
            .map(|&i| (values[i] - current[i]).norm())
            .fold(0.0, f64::max);
        if worst_fit <= rel_tol * scale {
            break;
        }
    }
    if weights.is_empty() {
        return Err(Error::FitDiverged {
            fit_error: f64::INFINITY,
            ceiling: rel_tol,
        });
    }
    let fit = RationalFit {
        support: support.iter().map(|&j| points[j]).collect(),
        values: support.iter().map(|&j| values[j]).collect(),
        weights,
        fit_error: 0.0,
        train_error: 0.0,
    };
    let rel_err = |idx: &[usize]| -> f64 {
        idx.iter()
            .map(|&i| (values[i] - fit.eval(points[i])).norm() / scale)
            .fold(0.0, f64::max)
    };
    let fit_error = if holdout_idx.is_empty() {
        rel_err(&fit_idx)
    } else {
        rel_err(&holdout_idx)
    };
    let train_error = rel_err(&fit_idx);
    Ok(RationalFit {
        fit_error,
        train_error,
        ..fit
    })
}

/// Zeros of the barycentric denominator: the poles of the interpolant.
pub fn poles(fit: &RationalFit) -> Vec<Complex64> {
    let m = fit.support.len();
    if m < 2 {
        return Vec::new();
    }
    // center and scale for conditioning
    let center = fit.support.iter().sum::<Complex64>() / m as f64;
    let radius = fit
        .support
        .iter()
        .map(|z| (z - center).norm())
        .fold(0.0, f64::max)
        .max(1e-30);
    let zs: Vec<Complex64> = fit.support.iter().map(|z| (z - center) / radius).collect();

    // q(u) = sum_j w_j prod_{l != j} (u - z_l), degree m-1
    let mut q = vec![Complex64::new(0.0, 0.0); m];
    for j in 0..m {
        // prod_{l != j} (u - z_l)
        let mut p = vec![Complex64::new(1.0, 0.0)];
        for (l, zl) in zs.iter().enumerate() {
            if l == j {
                continue;
            }
            let mut next = vec![Complex64::new(0.0, 0.0); p.len() + 1];
            for (i, c) in p.iter().enumerate() {
                next[i + 1] += c;
                next[i] -= c * zl;
            }
            p = next;
        }
        for (i, c) in p.iter().enumerate() {
            q[i] += fit.weights[j] * c;
        }
    }
    // trim negligible leading coefficients
    let qmax = q.iter().map(|c| c.norm()).fold(0.0, f64::max);
    while q.len() > 1 && q.last().unwrap().norm() < 1e-13 * qmax {
        q.pop();
    }
    durand_kerner(&q)
        .into_iter()
        .map(|u| u * radius + center)
        .collect()
}

/// All roots of a complex polynomial (coefficients in increasing degree) by
/// Durand-Kerner iteration with a deterministic start.
fn durand_kerner(coeffs: &[Complex64]) -> Vec<Complex64> {
    let n = coeffs.len() - 1;
    if n == 0 {
        return Vec::new();
    }
    let lead = coeffs[n];
    let monic: Vec<Complex64> = coeffs.iter().map(|c| c / lead).collect();
    let eval = |u: Complex64| -> Complex64 {
        let mut v = Complex64::new(0.0, 0.0);
        for c in monic.iter().rev() {
            v = v * u + c;
        }
        v
    };
    // deterministic spiral start
    let mut roots: Vec<Complex64> = (0..n)
        .map(|i| {
            let angle = 2.0 * std::f64::consts::PI * i as f64 / n as f64 + 0.4;
            Complex64::from_polar(1.3 + 0.01 * i as f64, angle)
        })
        .collect();
    for _ in 0..400 {
        let mut shift = 0.0_f64;
        for i in 0..n {
            let mut denom = Complex64::new(1.0, 0.0);
            for j in 0..n {
                if i != j {
                    denom *= roots[i] - roots[j];
                }
            }
            if denom.norm() == 0.0 {
                continue;
            }
            let d = eval(roots[i]) / denom;
            roots[i] -= d;
            shift = shift.max(d.norm());
        }
        if shift < 1e-14 {
            break;
        }
    }
    roots
}

/// Residues of the interpolant at the given poles:
/// `res = N(p) / D'(p)`.
pub fn residues(fit: &RationalFit, pole_locs: &[Complex64]) -> Vec<Complex64> {
    pole_locs
        .iter()
        .map(|p| {
            let mut num = Complex64::new(0.0, 0.0);
            let mut dprime = Complex64::new(0.0, 0.0);
            for ((zj, fj), wj) in fit.support.iter().zip(&fit.values).zip(&fit.weights) {
                let d = p - zj;
                num += wj * fj / d;
                dprime -= wj / (d * d);
            }
            num / dprime
        })
        .collect()
}
