//! Python bindings for `qif-core`.

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

use qif_core::dist::{format_ratio, Rational};
use qif_core::leakage::{self, EntropyKind, LeakageReport};
use qif_core::oracle::{compare_with_pks, oracle_enumerate};
use qif_core::{lang, pks, Error, SchedulerPolicy, SecretDist};

create_exception!(qif, QifError, PyException);
create_exception!(qif, ParseError, QifError);
create_exception!(qif, SchedulerError, QifError);
create_exception!(qif, AnalysisError, QifError);

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Parse(_) => ParseError::new_err(e.to_string()),
        Error::Scheduler(_) | Error::NotEnabled { .. } => SchedulerError::new_err(e.to_string()),
        _ => AnalysisError::new_err(e.to_string()),
    }
}

fn fraction<'py>(py: Python<'py>, r: &Rational) -> PyResult<Bound<'py, PyAny>> {
    py.import("fractions")?.getattr("Fraction")?.call1((format_ratio(r),))
}

fn belief<'py>(py: Python<'py>, d: &SecretDist) -> PyResult<Bound<'py, PyDict>> {
    let out = PyDict::new(py);
    for (s, p) in d.iter() {
        out.set_item(s, fraction(py, p)?)?;
    }
    Ok(out)
}

fn entropy_kind(kind: &str) -> PyResult<EntropyKind> {
    match kind {
        "shannon" => Ok(EntropyKind::Shannon),
        "min" => Ok(EntropyKind::Min),
        other => Err(PyValueError::new_err(format!("unknown entropy kind {other:?}; use \"shannon\" or \"min\""))),
    }
}

/// A parsed program.
#[pyclass(frozen, module = "qif")]
struct Program {
    decl: lang::ProgramDecl,
}

#[pymethods]
impl Program {
    #[new]
    fn new(source: &str) -> PyResult<Self> {
        lang::parse(source).map(|decl| Program { decl }).map_err(|e| to_py(e.into()))
    }

    #[staticmethod]
    fn load(path: std::path::PathBuf) -> PyResult<Self> {
        let text = std::fs::read_to_string(&path).map_err(|e| QifError::new_err(format!("{}: {e}", path.display())))?;
        Self::new(&text)
    }

    #[getter]
    fn source(&self) -> String {
        lang::pretty_print(&self.decl)
    }

    #[getter]
    fn domain_size(&self) -> u64 {
        self.decl.domain.size()
    }

    #[getter]
    fn is_sequential(&self) -> bool {
        self.decl.is_sequential()
    }

    fn __repr__(&self) -> String {
        format!("Program({:?})", self.source())
    }
}

/// The Kripke structure of a program under a scheduler, with the
/// leakage measures computed on it.
#[pyclass(frozen, module = "qif")]
struct Analysis {
    pks: pks::Pks,
    program: lang::ProgramDecl,
    policy: SchedulerPolicy,
    budget: usize,
}

#[pymethods]
impl Analysis {
    #[new]
    #[pyo3(signature = (program, scheduler = "uniform", budget = qif_core::semantics::DEFAULT_BUDGET))]
    fn new(program: &Program, scheduler: &str, budget: usize) -> PyResult<Self> {
        let policy = SchedulerPolicy::from_cli(scheduler).map_err(to_py)?;
        let pks = pks::build_pks(&program.decl, &policy, budget).map_err(to_py)?;
        Ok(Analysis { pks, program: program.decl.clone(), policy, budget })
    }

    #[getter]
    fn scheduler(&self) -> String {
        self.policy.name()
    }

    #[getter]
    fn num_states(&self) -> usize {
        self.pks.num_states()
    }

    #[getter]
    fn num_edges(&self) -> usize {
        self.pks.edges.len()
    }

    /// Every trace as a dict with `probability`, `o_sequence`, `steps` and
    /// `posterior`.
    fn traces<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyList>> {
        let out = PyList::empty(py);
        for t in self.pks.traces() {
            let row = PyDict::new(py);
            row.set_item("probability", fraction(py, &t.probability)?)?;
            row.set_item("o_sequence", t.o_sequence.clone())?;
            let steps: Vec<String> =
                self.pks.trace_commands(&t).into_iter().map(|(th, c)| format!("t{th}: {c}")).collect();
            row.set_item("steps", steps)?;
            row.set_item("posterior", belief(py, self.pks.final_posterior(&t))?)?;
            row.set_item("leakage", leakage::trace_leakage(&t, &self.pks))?;
            out.append(row)?;
        }
        Ok(out)
    }

    fn program_leakage(&self) -> f64 {
        leakage::program_leakage(&self.pks)
    }

    #[pyo3(signature = (kind = "min"))]
    fn io_leakage(&self, kind: &str) -> PyResult<f64> {
        Ok(leakage::io_leakage(&self.pks, entropy_kind(kind)?))
    }

    #[pyo3(signature = (kind = "min"))]
    fn trace_obs_leakage(&self, kind: &str) -> PyResult<f64> {
        Ok(leakage::trace_obs_leakage(&self.pks, entropy_kind(kind)?))
    }

    /// The full report as a JSON string.
    #[pyo3(signature = (name = "program"))]
    fn report_json(&self, name: &str) -> PyResult<String> {
        LeakageReport::new(&self.pks, name, &self.policy.name()).map(|r| r.to_json()).map_err(to_py)
    }

    fn to_dot(&self) -> String {
        pks::to_dot(&self.pks)
    }

    fn to_json(&self) -> String {
        self.pks.to_json()
    }

    /// Compares the structure against the brute-force oracle. Returns
    /// `None` on agreement and the diff text otherwise.
    fn oracle_diff(&self) -> PyResult<Option<String>> {
        let runs = oracle_enumerate(&self.program, &self.policy, self.pks.prior(), self.budget).map_err(to_py)?;
        Ok(compare_with_pks(&self.pks, &runs).err())
    }
}

#[pymodule]
fn qif(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Program>()?;
    m.add_class::<Analysis>()?;
    m.add("QifError", m.py().get_type::<QifError>())?;
    m.add("ParseError", m.py().get_type::<ParseError>())?;
    m.add("SchedulerError", m.py().get_type::<SchedulerError>())?;
    m.add("AnalysisError", m.py().get_type::<AnalysisError>())?;
    Ok(())
}
