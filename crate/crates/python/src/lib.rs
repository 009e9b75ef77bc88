use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use instream_core::protocol::Mode;
use instream_core::sim::{simulate as run_sim, Environment, SimConfig};
use instream_core::{
    check_thread, explore, extract_lts, parse_spec, print_spec, CompositionConfig, EquivConfig,
    SelectionStrategy, ThreadSpec,
};

fn spec(text: &str) -> PyResult<ThreadSpec> {
    parse_spec(text).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn strategy(s: &str) -> PyResult<SelectionStrategy> {
    s.parse().map_err(|e: String| PyValueError::new_err(e))
}

fn mode(s: &str) -> PyResult<Mode> {
    s.parse().map_err(|e: String| PyValueError::new_err(e))
}

fn composition(maxlen: u32, capacity: usize, mode_name: &str, strategy_name: &str) -> PyResult<CompositionConfig> {
    Ok(CompositionConfig {
        maxlen,
        capacity_msg: capacity,
        capacity_reply: capacity,
        mode: mode(mode_name)?,
        strategy: strategy(strategy_name)?,
        ..Default::default()
    })
}

/// Parse a thread and return it in canonical text form.
#[pyfunction]
fn parse(text: &str) -> PyResult<String> {
    Ok(print_spec(&spec(text)?))
}

/// Extract the thread LTS as a JSON string.
#[pyfunction]
fn extract(text: &str) -> PyResult<String> {
    Ok(extract_lts(spec(text)?.handle()).to_json_string())
}

/// Compose the thread with the protocol and return the LTS as JSON.
#[pyfunction]
#[pyo3(signature = (text, maxlen=1, capacity=1, mode="safe", strategy="breadth"))]
fn compose(text: &str, maxlen: u32, capacity: usize, mode: &str, strategy: &str) -> PyResult<String> {
    let s = spec(text)?;
    let cfg = composition(maxlen, capacity, mode, strategy)?;
    let ex = explore(s.handle(), &cfg).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok(ex.lts.to_json_string())
}

/// Check the thread against its protocol composition. Returns a dict with
/// `equivalent`, the state counts and the verdict JSON.
#[pyfunction]
#[pyo3(signature = (text, maxlen=1, capacity=1, mode="safe", strategy="breadth"))]
fn check<'py>(
    py: Python<'py>,
    text: &str,
    maxlen: u32,
    capacity: usize,
    mode: &str,
    strategy: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let s = spec(text)?;
    let cfg = composition(maxlen, capacity, mode, strategy)?;
    let out = check_thread(s.handle(), &cfg, &EquivConfig::default())
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    let d = PyDict::new(py);
    d.set_item("equivalent", out.verdict.equivalent)?;
    d.set_item("thread_states", out.extraction.states)?;
    d.set_item("protocol_states", out.composition.states)?;
    d.set_item("verdict", out.verdict.to_json_string())?;
    Ok(d)
}

#[pyfunction]
#[pyo3(signature = (text, maxlen=1, strategy="breadth", env="all-true", seed=0, horizon=100_000))]
fn simulate<'py>(
    py: Python<'py>,
    text: &str,
    maxlen: u32,
    strategy: &str,
    env: &str,
    seed: u64,
    horizon: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let s = spec(text)?;
    let environment: Environment = env.parse().map_err(|e: String| PyValueError::new_err(e))?;
    let cfg = SimConfig {
        maxlen,
        strategy: self::strategy(strategy)?,
        environment,
        seed,
        horizon,
        ..Default::default()
    };
    let run = run_sim(s.handle(), &cfg).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    let m = &run.metrics;
    let d = PyDict::new(py);
    d.set_item("busy", m.busy)?;
    d.set_item("idle", m.idle)?;
    d.set_item("total", m.total)?;
    d.set_item("utilization", m.utilization)?;
    d.set_item("msgs", m.msgs)?;
    d.set_item("replies", m.replies)?;
    d.set_item("discarded", m.discarded)?;
    d.set_item("steps", m.steps)?;
    d.set_item("outcome", format!("{:?}", m.outcome).to_lowercase())?;
    Ok(d)
}

#[pymodule]
fn instream(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(parse, m)?)?;
    m.add_function(wrap_pyfunction!(extract, m)?)?;
    m.add_function(wrap_pyfunction!(compose, m)?)?;
    m.add_function(wrap_pyfunction!(check, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    Ok(())
}
