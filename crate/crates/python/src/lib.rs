use std::fmt::Display;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use sg::checks::{run_checks, RunOptions};
use sg::geodesic::{correspondence_deviation, integrate_super, InitialCondition};
use sg::grassmann::{GrassmannValue, MultiIndex};
use sg::reduction::reduce_connection;
use sg::scenario::{load_scenario, parse_scenario, random_scenario, RandomOptions};

fn value_error(e: impl Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Element of the Grassmann algebra on `q` generators.
#[pyclass(name = "Grassmann", module = "supergeo", frozen)]
struct PyGrassmann(GrassmannValue);

#[pymethods]
impl PyGrassmann {
    /// Parses text such as `"1 + 2*e[1] - e[1,2]"`.
    #[new]
    fn new(text: &str, q: usize) -> PyResult<Self> {
        GrassmannValue::parse(text, q).map(PyGrassmann).map_err(value_error)
    }

    #[staticmethod]
    fn generator(q: usize, alpha: usize) -> PyResult<Self> {
        if alpha == 0 || alpha > q {
            return Err(PyValueError::new_err(format!("generator index {alpha} outside 1..={q}")));
        }
        Ok(PyGrassmann(GrassmannValue::generator(q, alpha)))
    }

    #[getter]
    fn q(&self) -> usize {
        self.0.q()
    }

    #[getter]
    fn body(&self) -> f64 {
        self.0.body()
    }

    /// "even", "odd" or "mixed".
    #[getter]
    fn parity(&self) -> String {
        format!("{:?}", self.0.parity()).to_lowercase()
    }

    /// Coefficient of the monomial with the given 1-based generator labels.
    fn coefficient(&self, labels: Vec<usize>) -> PyResult<f64> {
        let mut mask = 0u32;
        for l in labels {
            if l == 0 || l > self.0.q() {
                return Err(PyValueError::new_err(format!("generator index {l} outside 1..={}", self.0.q())));
            }
            mask |= 1 << (l - 1);
        }
        Ok(self.0.coefficient(MultiIndex::from_mask(mask)))
    }

    /// Left derivative with respect to generator `alpha`.
    fn derivative(&self, alpha: usize) -> PyResult<Self> {
        self.0.left_derivative(alpha).map(PyGrassmann).map_err(value_error)
    }

    fn invert(&self) -> PyResult<Self> {
        self.0.invert().map(PyGrassmann).map_err(value_error)
    }

    fn __add__(&self, other: &Self) -> PyResult<Self> {
        self.0.checked_add(&other.0).map(PyGrassmann).map_err(value_error)
    }

    fn __sub__(&self, other: &Self) -> PyResult<Self> {
        self.0.checked_sub(&other.0).map(PyGrassmann).map_err(value_error)
    }

    fn __mul__(&self, other: &Self) -> PyResult<Self> {
        self.0.checked_mul(&other.0).map(PyGrassmann).map_err(value_error)
    }

    fn __neg__(&self) -> Self {
        PyGrassmann(self.0.scale(-1.0))
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.0 == other.0
    }

    fn __str__(&self) -> String {
        self.0.to_string()
    }

    fn __repr__(&self) -> String {
        format!("Grassmann('{}', {})", self.0, self.0.q())
    }
}

/// A validated scenario: chart, metric or connection, initial conditions.
#[pyclass(name = "Scenario", module = "supergeo", frozen)]
struct PyScenario(sg::scenario::Scenario);

impl PyScenario {
    fn initial_condition(&self, ic: usize) -> PyResult<&InitialCondition> {
        self.0
            .initial_conditions
            .get(ic)
            .ok_or_else(|| PyValueError::new_err(format!("initial condition {ic} out of range")))
    }
}

#[pymethods]
impl PyScenario {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        load_scenario(path).map(PyScenario).map_err(value_error)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        parse_scenario(text).map(PyScenario).map_err(value_error)
    }

    #[staticmethod]
    #[pyo3(signature = (n, q, parity, seed=0))]
    fn random(n: usize, q: usize, parity: u8, seed: u64) -> PyResult<Self> {
        random_scenario(n, q, parity, seed, &RandomOptions::default()).map(PyScenario).map_err(value_error)
    }

    #[getter]
    fn n(&self) -> usize {
        self.0.chart.n
    }

    #[getter]
    fn q(&self) -> usize {
        self.0.chart.q
    }

    #[getter]
    fn name(&self) -> String {
        self.0.chart.name.clone()
    }

    #[getter]
    fn initial_conditions(&self) -> usize {
        self.0.initial_conditions.len()
    }

    fn to_json(&self) -> String {
        self.0.to_json()
    }

    /// Runs the check suites; returns the report as JSON text.
    #[pyo3(signature = (samples=None))]
    fn check(&self, py: Python<'_>, samples: Option<usize>) -> String {
        py.detach(|| run_checks(&self.0, RunOptions { samples, timings: false }).to_json())
    }

    /// Christoffel symbols at `x` as `{"r,s,u": text}` (1-based, nonzero entries only).
    fn christoffel<'py>(&self, py: Python<'py>, x: Vec<f64>) -> PyResult<Bound<'py, PyDict>> {
        let table = self.0.connection().christoffel_at(&x).map_err(value_error)?;
        let d = self.0.chart.n + self.0.chart.q;
        let out = PyDict::new(py);
        for r in 0..d {
            for s in 0..d {
                for u in 0..d {
                    let v = table.get(r, s, u);
                    if !v.is_zero() {
                        out.set_item(format!("{},{},{}", r + 1, s + 1, u + 1), v.to_string())?;
                    }
                }
            }
        }
        Ok(out)
    }

    /// Reduced symbols on the total space at base point `x` and fiber point `y`,
    /// flattened as `[(r*d + s)*d + u]`.
    fn reduced_christoffel(&self, x: Vec<f64>, y: Vec<f64>) -> PyResult<Vec<f64>> {
        if y.len() != self.0.chart.q {
            return Err(PyValueError::new_err(format!("expected {} fiber coordinates", self.0.chart.q)));
        }
        let rc = reduce_connection(&self.0.connection());
        Ok(rc.symbols_at(&x).map_err(value_error)?.values(&y))
    }

    /// Integrates the super geodesic for one initial condition. Returns a dict
    /// with keys `t`, `f`, `h`, `df`, `dh`, `truncated`.
    #[pyo3(signature = (ic=0))]
    fn geodesic<'py>(&self, py: Python<'py>, ic: usize) -> PyResult<Bound<'py, PyDict>> {
        let start = self.initial_condition(ic)?.clone();
        let integ = self.0.integration;
        let conn = self.0.connection();
        let curve = py
            .detach(|| integrate_super(&conn, &self.0.chart_box, &start, integ.t_end, integ.dt))
            .map_err(value_error)?;
        let out = PyDict::new(py);
        out.set_item("t", curve.times)?;
        out.set_item("f", curve.f)?;
        out.set_item("h", curve.h)?;
        out.set_item("df", curve.df)?;
        out.set_item("dh", curve.dh)?;
        out.set_item("truncated", curve.truncated)?;
        Ok(out)
    }

    /// Max deviation between the super geodesic and the reduced classical one.
    #[pyo3(signature = (ic=0))]
    fn correspondence_deviation(&self, py: Python<'_>, ic: usize) -> PyResult<f64> {
        let start = self.initial_condition(ic)?.clone();
        let integ = self.0.integration;
        let conn = self.0.connection();
        py.detach(|| {
            let rc = reduce_connection(&conn);
            correspondence_deviation(&conn, &rc, &self.0.chart_box, &start, integ.t_end, integ.dt)
        })
        .map_err(value_error)
    }

    fn __repr__(&self) -> String {
        format!("Scenario('{}', n={}, q={})", self.0.chart.name, self.0.chart.n, self.0.chart.q)
    }
}

#[pymodule]
fn supergeo(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGrassmann>()?;
    m.add_class::<PyScenario>()?;
    Ok(())
}
