//! Python bindings for the ruelle-lab core: model systems, bundle lifts,
//! growth-factor estimation, symbol construction, correlations, and the
//! full config runner. Structured results cross the boundary as JSON
//! strings so Python sees exactly what the CLI reports.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use ruelle_lab::cli::{to_deterministic_json, ExperimentConfig};
use ruelle_lab::flows::{self, PhasePoint};
use ruelle_lab::lifts::BundleLift;
use ruelle_lab::resolvent::{ContourSpec, ObservablePair};
use ruelle_lab::symbols::MultiplierConfig;
use ruelle_lab::thresholds::{EstimateConfig, Side};
use ruelle_lab::trig::{CosinePoly, TrigPoly};

fn to_py_err(e: ruelle_lab::Error) -> PyErr {
    match e {
        ruelle_lab::Error::ConfigInvalid { .. } => PyValueError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn phase_point(coords: &[f64]) -> PyResult<PhasePoint> {
    match coords.len() {
        3 => Ok(PhasePoint::cat(coords[0], coords[1], coords[2])),
        1 => Ok(PhasePoint::orbit(coords[0])),
        n => Err(PyValueError::new_err(format!(
            "phase point needs 3 chart coordinates (suspension) or 1 (rate model), got {n}"
        ))),
    }
}

fn parse_side(side: &str) -> PyResult<Side> {
    match side {
        "u" | "unstable" => Ok(Side::Unstable),
        "s" | "stable" => Ok(Side::Stable),
        other => Err(PyValueError::new_err(format!(
            "side must be 'unstable' or 'stable', got '{other}'"
        ))),
    }
}

fn parse_sections(json: &str) -> PyResult<Vec<TrigPoly>> {
    serde_json::from_str(json).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// A concrete hyperbolic model flow.
#[pyclass(name = "ModelSystem")]
struct PyModelSystem {
    inner: flows::ModelSystem,
}

#[pymethods]
impl PyModelSystem {
    /// Suspension of an integer hyperbolic torus map under a constant roof.
    #[staticmethod]
    fn cat_suspension(base_matrix: [[i64; 2]; 2], roof: f64) -> PyResult<Self> {
        flows::ModelSystem::cat_suspension(base_matrix, CosinePoly::constant(roof))
            .map(|inner| PyModelSystem { inner })
            .map_err(to_py_err)
    }

    /// Analytic constant-curvature rate model with an n-dimensional
    /// unstable (and stable) block.
    #[staticmethod]
    fn hyperbolic_model(n: usize) -> PyResult<Self> {
        flows::ModelSystem::hyperbolic_model(n)
            .map(|inner| PyModelSystem { inner })
            .map_err(to_py_err)
    }

    /// Phase dimension of the chart.
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    /// Flow map in chart coordinates.
    fn evolve(&self, coords: Vec<f64>, t: f64) -> PyResult<Vec<f64>> {
        Ok(flows::evolve(&self.inner, &phase_point(&coords)?, t).coords())
    }

    /// Differential of the flow map, row-major.
    fn jacobian(&self, coords: Vec<f64>, t: f64) -> PyResult<Vec<Vec<f64>>> {
        let j = flows::jacobian(&self.inner, &phase_point(&coords)?, t);
        Ok((0..j.nrows())
            .map(|r| (0..j.ncols()).map(|c| j[(r, c)]).collect())
            .collect())
    }

    /// Hamiltonian (cotangent) flow: returns the transported covector.
    fn cotangent_flow(&self, coords: Vec<f64>, xi: Vec<f64>, t: f64) -> PyResult<Vec<f64>> {
        let q = flows::CotangentPoint::new(
            phase_point(&coords)?,
            nalgebra::DVector::from_vec(xi),
        )
        .map_err(to_py_err)?;
        Ok(flows::cotangent_flow(&self.inner, &q, t).xi.as_slice().to_vec())
    }

    /// Stable/unstable splitting with duals: returns
    /// (e0, eu, es, dual_eu, dual_es, invariance_residual) as column lists.
    #[pyo3(signature = (coords, horizon=25.0, tol=1e-6))]
    fn splitting(
        &self,
        coords: Vec<f64>,
        horizon: f64,
        tol: f64,
    ) -> PyResult<(Vec<f64>, Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<Vec<f64>>, f64)> {
        let sp = flows::compute_splitting(&self.inner, &phase_point(&coords)?, horizon, tol)
            .map_err(to_py_err)?;
        let cols = |m: &nalgebra::DMatrix<f64>| -> Vec<Vec<f64>> {
            (0..m.ncols()).map(|c| m.column(c).as_slice().to_vec()).collect()
        };
        Ok((
            sp.e0.as_slice().to_vec(),
            cols(&sp.eu_basis),
            cols(&sp.es_basis),
            cols(&sp.dual_eu),
            cols(&sp.dual_es),
            sp.invariance_residual,
        ))
    }

    /// Growth factors of a scalar lift with constant potential: returns
    /// (r_u, r_s, threshold).
    #[pyo3(signature = (m_u, m_s, potential_re=0.0, potential_im=0.0, base_samples=16, seed=0))]
    fn threshold(
        &self,
        m_u: f64,
        m_s: f64,
        potential_re: f64,
        potential_im: f64,
        base_samples: usize,
        seed: u64,
    ) -> PyResult<(f64, f64, f64)> {
        let lift = BundleLift::scalar(TrigPoly::constant(
            num_complex::Complex64::new(potential_re, potential_im),
            self.inner.base_dim(),
        ));
        let config = EstimateConfig {
            base_samples,
            seed,
            ..Default::default()
        };
        let report =
            ruelle_lab::thresholds::threshold_halfplane(&self.inner, &lift, m_u, m_s, &config)
                .map_err(to_py_err)?;
        Ok((
            report.unstable.extrapolated_rate,
            report.stable.extrapolated_rate,
            report.threshold,
        ))
    }

    /// Growth factor by bisection of the multiplier inequality.
    #[pyo3(signature = (side, m, lo, hi, tol=0.02))]
    fn threshold_by_bisection(&self, side: &str, m: f64, lo: f64, hi: f64, tol: f64) -> PyResult<f64> {
        let lift = BundleLift::zero_scalar();
        ruelle_lab::symbols::threshold_by_bisection(
            &lift,
            &self.inner,
            parse_side(side)?,
            m,
            (lo, hi),
            tol,
            &MultiplierConfig {
                base_samples: 6,
                ..Default::default()
            },
        )
        .map_err(to_py_err)
    }

    /// Exact correlation of two scalar trig-polynomial observables, given as
    /// JSON objects `{"terms": [{"base_freq": [..], "fiber_freq": k, "coeff": [re, im]}]}`.
    fn correlation(&self, f_poly: &str, g_poly: &str, t: f64) -> PyResult<(f64, f64)> {
        let f: TrigPoly =
            serde_json::from_str(f_poly).map_err(|e| PyValueError::new_err(e.to_string()))?;
        let g: TrigPoly =
            serde_json::from_str(g_poly).map_err(|e| PyValueError::new_err(e.to_string()))?;
        let pair = ObservablePair::scalar(f, g);
        let rho = ruelle_lab::resolvent::correlation(&pair, &self.inner, t).map_err(to_py_err)?;
        Ok((rho.re, rho.im))
    }

    /// Resonance scan over the default contour: returns the report as JSON.
    #[pyo3(signature = (f_components, g_components, degree=12))]
    fn pole_scan(&self, f_components: &str, g_components: &str, degree: usize) -> PyResult<String> {
        let pair = ObservablePair {
            f: ruelle_lab::lifts::SectionSpec {
                components: parse_sections(f_components)?,
            },
            g: ruelle_lab::lifts::SectionSpec {
                components: parse_sections(g_components)?,
            },
            lift: BundleLift::zero_scalar(),
        };
        let report =
            ruelle_lab::resolvent::pole_scan(&pair, &self.inner, &ContourSpec::default(), degree)
                .map_err(to_py_err)?;
        serde_json::to_string(&report).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }
}

/// Run a full experiment config (same JSON schema as the CLI); returns the
/// deterministic report as a JSON string and writes the usual artifacts.
#[pyfunction]
fn run_config(config_json: &str) -> PyResult<String> {
    let config = ExperimentConfig::from_json(config_json).map_err(to_py_err)?;
    let artifacts = ruelle_lab::cli::run(&config).map_err(to_py_err)?;
    Ok(to_deterministic_json(&artifacts.report))
}

/// Schema version of the config/report formats.
#[pyfunction]
fn schema_version() -> u32 {
    ruelle_lab::cli::SCHEMA_VERSION
}

#[pymodule]
fn ruelle_lab_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModelSystem>()?;
    m.add_function(wrap_pyfunction!(run_config, m)?)?;
    m.add_function(wrap_pyfunction!(schema_version, m)?)?;
    Ok(())
}
