//! Python bindings for the memact core: the simulator, the memory bank,
//! timestep encodings, demo generation, training, and evaluation.
//!
//! Built as a plain cdylib; copy/rename `libmemact_py.so` to
//! `memact_py.so` somewhere on `PYTHONPATH` (see python/smoke_test.py).

use memact::config::load_config;
use memact::env::{
    env_reset, env_step, generate_demos, memoryless_upper_bound, observe, scripted_expert,
    EnvState, TaskKind, TaskSpec,
};
use memact::episode::{read_dataset, write_dataset};
use memact::eval::{evaluate_checkpoint_on, Ensemble};
use memact::memory::{consolidate, timestep_encoding, Consolidation, MemoryBank, MemoryEntry};
use memact::plot::plot_metrics;
use memact::train::{load_checkpoint, train};
use memact::Tensor;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use std::path::{Path, PathBuf};
use std::str::FromStr;

fn err(e: memact::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_task(task: &str) -> PyResult<TaskSpec> {
    Ok(TaskSpec::new(TaskKind::from_str(task).map_err(err)?))
}

/// One episode of a symbolic manipulation task.
#[pyclass]
struct Env {
    state: EnvState,
}

#[pymethods]
impl Env {
    #[new]
    fn new(task: &str, seed: u64) -> PyResult<Self> {
        let (state, _) = env_reset(&parse_task(task)?, seed).map_err(err)?;
        Ok(Env { state })
    }

    fn reset(&mut self, seed: u64) -> PyResult<()> {
        let (state, _) = env_reset(&self.state.task, seed).map_err(err)?;
        self.state = state;
        Ok(())
    }

    /// Current observation as (features, instruction_id).
    fn observe(&self) -> (Vec<f64>, usize) {
        let obs = observe(&self.state);
        (obs.features, obs.instruction_id)
    }

    /// Apply an action; returns (score_delta, done).
    fn step(&mut self, action: Vec<f64>) -> PyResult<(f64, bool)> {
        let res = env_step(&mut self.state, &action).map_err(err)?;
        Ok((res.score_delta, res.done))
    }

    /// The scripted expert's action for the current state.
    fn expert_action(&self) -> PyResult<Vec<f64>> {
        scripted_expert(&self.state).map_err(err)
    }

    #[getter]
    fn score(&self) -> f64 {
        self.state.score
    }

    #[getter]
    fn done(&self) -> bool {
        self.state.done
    }

    #[getter]
    fn steps(&self) -> usize {
        self.state.step_count
    }

    #[getter]
    fn instruction_id(&self) -> usize {
        self.state.instruction_id
    }

    #[getter]
    fn ee(&self) -> (f64, f64) {
        (self.state.ee[0], self.state.ee[1])
    }

    #[getter]
    fn horizon(&self) -> usize {
        self.state.task.horizon
    }
}

/// Bounded timestamped memory stream pair.
#[pyclass]
struct Bank {
    bank: MemoryBank,
}

#[pymethods]
impl Bank {
    #[new]
    fn new(capacity: usize) -> Self {
        Bank { bank: MemoryBank::new(capacity) }
    }

    /// Append an entry; `stream` is "perceptual" or "cognitive", `rows`
    /// the token count of the entry matrix.
    fn push(&mut self, stream: &str, values: Vec<f64>, rows: usize, timestep: f64) -> PyResult<()> {
        if rows == 0 || values.len() % rows != 0 {
            return Err(PyValueError::new_err("values length must be a multiple of rows"));
        }
        let cols = values.len() / rows;
        let entry = MemoryEntry {
            value: Tensor::new(vec![rows, cols], values).map_err(err)?,
            timestep,
        };
        match stream {
            "perceptual" => self.bank.perceptual.push(entry),
            "cognitive" => self.bank.cognitive.push(entry),
            other => return Err(PyValueError::new_err(format!("unknown stream {other:?}"))),
        }
        Ok(())
    }

    /// Shrink overfull streams with "merge" or "fifo".
    fn consolidate(&mut self, policy: &str) -> PyResult<()> {
        let policy = match policy {
            "merge" => Consolidation::Merge,
            "fifo" => Consolidation::Fifo,
            other => return Err(PyValueError::new_err(format!("unknown policy {other:?}"))),
        };
        consolidate(&mut self.bank, policy);
        Ok(())
    }

    /// Entries of one stream as (timestep, flat values) pairs.
    fn entries(&self, stream: &str) -> PyResult<Vec<(f64, Vec<f64>)>> {
        let entries = match stream {
            "perceptual" => &self.bank.perceptual,
            "cognitive" => &self.bank.cognitive,
            other => return Err(PyValueError::new_err(format!("unknown stream {other:?}"))),
        };
        Ok(entries.iter().map(|e| (e.timestep, e.value.data.clone())).collect())
    }

    fn __len__(&self) -> usize {
        self.bank.perceptual.len().max(self.bank.cognitive.len())
    }

    #[getter]
    fn capacity(&self) -> usize {
        self.bank.capacity
    }
}

/// Sinusoidal timestep encoding of width `d` (even).
#[pyfunction]
fn timestep_encoding_py(t: f64, d: usize) -> PyResult<Vec<f64>> {
    Ok(timestep_encoding(t, d).map_err(err)?.data)
}

/// The best expected score any memoryless (observation-class) policy can
/// reach on a task.
#[pyfunction]
fn memoryless_bound(task: &str) -> PyResult<f64> {
    memoryless_upper_bound(&parse_task(task)?).map_err(err)
}

/// Roll out the scripted expert and write a demo dataset directory.
#[pyfunction]
fn gen_demos(task: &str, n: usize, seed: u64, out: PathBuf) -> PyResult<usize> {
    let demos = generate_demos(&parse_task(task)?, n, seed).map_err(err)?;
    write_dataset(&out, &demos).map_err(err)?;
    Ok(demos.len())
}

/// Train from a TOML config and a demo dataset; returns the final step.
#[pyfunction]
fn train_py(config: PathBuf, demos: PathBuf, out: PathBuf) -> PyResult<usize> {
    let cfg = load_config(&config).map_err(err)?;
    let dataset = read_dataset(&demos).map_err(err)?;
    let ckpt = train(&cfg, &dataset, &out).map_err(err)?;
    Ok(ckpt.step)
}

/// Evaluate a checkpoint; returns a dict with mean score, success rate,
/// and per-trial scores.
#[pyfunction]
#[pyo3(signature = (checkpoint, task, trials, seed, ensemble = "off"))]
fn evaluate_py(
    py: Python<'_>,
    checkpoint: PathBuf,
    task: &str,
    trials: usize,
    seed: u64,
    ensemble: &str,
) -> PyResult<Py<PyAny>> {
    let ckpt = load_checkpoint(&checkpoint).map_err(err)?;
    let spec = parse_task(task)?;
    let ens = Ensemble::from_str(ensemble).map_err(err)?;
    let report = evaluate_checkpoint_on(&ckpt, &spec, trials, &ens, seed).map_err(err)?;
    let dict = pyo3::types::PyDict::new(py);
    dict.set_item("task", spec.name.name())?;
    dict.set_item("trials", report.trials)?;
    dict.set_item("mean_score", report.mean_score)?;
    dict.set_item("success_rate", report.success_rate)?;
    dict.set_item("per_trial", report.per_trial.clone())?;
    Ok(dict.into_any().unbind())
}

/// Render loss/score charts from a metrics CSV; returns written paths.
#[pyfunction]
fn plot_metrics_py(csv: PathBuf, out_prefix: PathBuf) -> PyResult<Vec<String>> {
    let written: Vec<PathBuf> = plot_metrics(Path::new(&csv), Path::new(&out_prefix)).map_err(err)?;
    Ok(written.into_iter().map(|p| p.display().to_string()).collect())
}

#[pymodule]
fn memact_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Env>()?;
    m.add_class::<Bank>()?;
    m.add_function(wrap_pyfunction!(timestep_encoding_py, m)?)?;
    m.add_function(wrap_pyfunction!(memoryless_bound, m)?)?;
    m.add_function(wrap_pyfunction!(gen_demos, m)?)?;
    m.add_function(wrap_pyfunction!(train_py, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_py, m)?)?;
    m.add_function(wrap_pyfunction!(plot_metrics_py, m)?)?;
    Ok(())
}
