//! Finite trigonometric polynomials.
//!
//! All function data in the lab (roof functions, scalar potentials,
//! connection entries, observable sections) is carried by finite trig
//! polynomials so that evaluation, flow derivatives, and orbit integrals
//! have closed forms.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

/// One real cosine term `amplitude * cos(2pi <freq, x> + phase)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CosTerm {
    pub freq: [i64; 2],
    pub amplitude: f64,
    pub phase: f64,
}

/// Real cosine polynomial on the base torus: `constant + sum of CosTerm`.
///
/// Used for roof functions; positivity is certified by the coefficient-sum
/// bound together with a dense grid scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CosinePoly {
    pub constant: f64,
    #[serde(default)]
    pub terms: Vec<CosTerm>,
}

impl CosinePoly {
    pub fn constant(value: f64) -> Self {
        CosinePoly {
            constant: value,
            terms: Vec::new(),
        }
    }

    pub fn is_constant(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn eval(&self, base: &[f64; 2]) -> f64 {
        let mut v = self.constant;
        for t in &self.terms {
            let arg = TAU * (t.freq[0] as f64 * base[0] + t.freq[1] as f64 * base[1]) + t.phase;
            v += t.amplitude * arg.cos();
        }
        v
    }

    pub fn gradient(&self, base: &[f64; 2]) -> [f64; 2] {
        let mut g = [0.0, 0.0];
        for t in &self.terms {
            let arg = TAU * (t.freq[0] as f64 * base[0] + t.freq[1] as f64 * base[1]) + t.phase;
            let d = -t.amplitude * arg.sin() * TAU;
            g[0] += d * t.freq[0] as f64;
            g[1] += d * t.freq[1] as f64;
        }
        g
    }

    /// Lower bound `constant - sum |amplitude|`; positive value certifies
    /// positivity of the polynomial everywhere.
    pub fn coefficient_lower_bound(&self) -> f64 {
        self.constant - self.terms.iter().map(|t| t.amplitude.abs()).sum::<f64>()
    }

    /// Minimum over an `n x n` grid on the torus.
    pub fn grid_min(&self, n: usize) -> f64 {
        let mut min = f64::INFINITY;
        for i in 0..n {
            for j in 0..n {
                let v = self.eval(&[i as f64 / n as f64, j as f64 / n as f64]);
                if v < min {
                    min = v;
                }
            }
        }
        min
    }
}

/// One complex exponential term: `coeff * exp(2pi i (<base_freq, x> + fiber_freq * p))`
/// where `p` is the normalized fiber phase `s / tau(x)` on suspensions (so the
/// term is continuous across the roof gluing) or zero on the rate model, whose
/// base coordinate is the single orbit label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrigTerm {
    pub base_freq: Vec<i64>,
    #[serde(default)]
    pub fiber_freq: i64,
    pub coeff: [f64; 2],
}

impl TrigTerm {
    pub fn coeff(&self) -> Complex64 {
        Complex64::new(self.coeff[0], self.coeff[1])
    }
}

/// Finite complex trig polynomial.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrigPoly {
    #[serde(default)]
    pub terms: Vec<TrigTerm>,
}

impl TrigPoly {
    pub fn zero() -> Self {
        TrigPoly { terms: Vec::new() }
    }

    pub fn constant(c: Complex64, base_dim: usize) -> Self {
        TrigPoly {
            terms: vec![TrigTerm {
                base_freq: vec![0; base_dim],
                fiber_freq: 0,
                coeff: [c.re, c.im],
            }],
        }
    }

    /// Single harmonic `exp(2pi i (<m, x> + k p))`.
    pub fn harmonic(base_freq: Vec<i64>, fiber_freq: i64, coeff: Complex64) -> Self {
        TrigPoly {
            terms: vec![TrigTerm {
                base_freq,
                fiber_freq,
                coeff: [coeff.re, coeff.im],
            }],
        }
    }

    pub fn is_zero(&self) -> bool {
        self.terms.iter().all(|t| t.coeff().norm() == 0.0)
    }

    /// True when no term carries a base frequency (fiber harmonics only).
    pub fn is_fiber_only(&self) -> bool {
        self.terms
            .iter()
            .all(|t| t.base_freq.iter().all(|&m| m == 0))
    }

    /// Evaluate at base coordinates and normalized fiber phase `p = s/tau`.
    pub fn eval(&self, base: &[f64], fiber_phase: f64) -> Complex64 {
        let mut v = Complex64::new(0.0, 0.0);
        for t in &self.terms {
            let mut arg = t.fiber_freq as f64 * fiber_phase;
            for (m, x) in t.base_freq.iter().zip(base) {
                arg += *m as f64 * x;
            }
            v += t.coeff() * Complex64::new(0.0, TAU * arg).exp();
        }
        v
    }

    pub fn conjugate(&self) -> TrigPoly {
        TrigPoly {
            terms: self
                .terms
                .iter()
                .map(|t| TrigTerm {
                    base_freq: t.base_freq.iter().map(|m| -m).collect(),
                    fiber_freq: -t.fiber_freq,
                    coeff: [t.coeff[0], -t.coeff[1]],
                })
                .collect(),
        }
    }

    pub fn scaled(&self, c: Complex64) -> TrigPoly {
        TrigPoly {
            terms: self
                .terms
                .iter()
                .map(|t| {
                    let w = t.coeff() * c;
                    TrigTerm {
                        base_freq: t.base_freq.clone(),
                        fiber_freq: t.fiber_freq,
                        coeff: [w.re, w.im],
                    }
                })
                .collect(),
        }
    }

    pub fn sum(&self, other: &TrigPoly) -> TrigPoly {
        let mut terms = self.terms.clone();
        terms.extend(other.terms.iter().cloned());
        TrigPoly { terms }
    }

    /// Pointwise product; frequencies add.
    pub fn product(&self, other: &TrigPoly) -> TrigPoly {
        let mut terms = Vec::with_capacity(self.terms.len() * other.terms.len());
        for a in &self.terms {
            for b in &other.terms {
                let coeff = a.coeff() * b.coeff();
                terms.push(TrigTerm {
                    base_freq: a
                        .base_freq
                        .iter()
                        .zip(&b.base_freq)
                        .map(|(x, y)| x + y)
                        .collect(),
                    fiber_freq: a.fiber_freq + b.fiber_freq,
                    coeff: [coeff.re, coeff.im],
                });
            }
        }
        TrigPoly { terms }
    }

    /// Largest absolute base frequency component appearing in any term.
    pub fn max_base_freq(&self) -> i64 {
        self.terms
            .iter()
            .flat_map(|t| t.base_freq.iter().map(|m| m.abs()))
            .max()
            .unwrap_or(0)
    }

    pub fn max_fiber_freq(&self) -> i64 {
        self.terms
            .iter()
            .map(|t| t.fiber_freq.abs())
            .max()
            .unwrap_or(0)
    }

    /// Crude sup-norm bound: sum of coefficient moduli.
    pub fn coeff_norm(&self) -> f64 {
        self.terms.iter().map(|t| t.coeff().norm()).sum()
    }
}

/// Square matrix of trig polynomials (connection fields, matrix sections),
/// stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixTrigPoly {
    pub size: usize,
    pub entries: Vec<TrigPoly>,
}

impl MatrixTrigPoly {
    pub fn zero(size: usize) -> Self {
        MatrixTrigPoly {
            size,
            entries: vec![TrigPoly::zero(); size * size],
        }
    }

    pub fn from_constant(m: &nalgebra::DMatrix<Complex64>, base_dim: usize) -> Self {
        let size = m.nrows();
        assert_eq!(size, m.ncols(), "connection matrix must be square");
        let mut entries = Vec::with_capacity(size * size);
        for i in 0..size {
            for j in 0..size {
                if m[(i, j)].norm() == 0.0 {
                    entries.push(TrigPoly::zero());
                } else {
                    entries.push(TrigPoly::constant(m[(i, j)], base_dim));
                }
            }
        }
        MatrixTrigPoly { size, entries }
    }

    pub fn entry(&self, i: usize, j: usize) -> &TrigPoly {
        &self.entries[i * self.size + j]
    }

    pub fn eval(&self, base: &[f64], fiber_phase: f64) -> nalgebra::DMatrix<Complex64> {
        nalgebra::DMatrix::from_fn(self.size, self.size, |i, j| {
            self.entry(i, j).eval(base, fiber_phase)
        })
    }

    /// Conjugate transpose, entrywise.
    pub fn adjoint(&self) -> MatrixTrigPoly {
        let mut entries = Vec::with_capacity(self.size * self.size);
        for i in 0..self.size {
            for j in 0..self.size {
                entries.push(self.entry(j, i).conjugate());
            }
        }
        MatrixTrigPoly {
            size: self.size,
            entries,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_poly_eval_and_gradient() {
        // tau(x) = 1 + 0.1 cos(2pi x1)
        let roof = CosinePoly {
            constant: 1.0,
            terms: vec![CosTerm {
                freq: [1, 0],
                amplitude: 0.1,
                phase: 0.0,
            }],
        };
        assert!((roof.eval(&[0.0, 0.3]) - 1.1).abs() < 1e-15);
        assert!((roof.eval(&[0.5, 0.9]) - 0.9).abs() < 1e-15);
        let g = roof.gradient(&[0.25, 0.0]);
        assert!((g[0] + 0.1 * TAU).abs() < 1e-12);
        assert_eq!(g[1], 0.0);
        assert!((roof.coefficient_lower_bound() - 0.9).abs() < 1e-15);
        assert!(roof.grid_min(64) > 0.89);
    }

    #[test]
    fn trig_poly_eval_matches_hand_value() {
        let f = TrigPoly::harmonic(vec![1, 0], 2, Complex64::new(0.5, 0.0));
        let v = f.eval(&[0.25, 0.9], 0.125);
        // exp(2pi i (0.25 + 0.25)) = exp(pi i) = -1
        assert!((v - Complex64::new(-0.5, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn conjugate_negates_frequencies() {
        let f = TrigPoly::harmonic(vec![2, -1], 3, Complex64::new(0.0, 1.0));
        let g = f.conjugate();
        let x = [0.17, 0.61];
        let p = 0.37;
        let diff = (f.eval(&x, p).conj() - g.eval(&x, p)).norm();
        assert!(diff < 1e-14);
    }
}
