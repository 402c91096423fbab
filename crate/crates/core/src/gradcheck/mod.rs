//! Central-difference verification of the analytic backward passes (f64).

use crate::error::{Error, Result};
use crate::graph::{Graph, Mode, Var};
use crate::param::{ParamId, ParamStore};
use crate::tensor::Tensor;

pub mod suite;
pub use suite::{model_gradcheck, op_suite};

/// Finite-difference step.
pub const FD_STEP: f64 = 1e-5;

/// `|a - n| / max(1, |a|, |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

#[derive(Clone, Debug)]
pub struct GradCheckEntry {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.entries.iter().map(|e| e.rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() <= self.tolerance
    }

    pub fn worst(&self) -> Option<&GradCheckEntry> {
        self.entries
            .iter()
            .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }
}

fn entry(name: &str, index: usize, analytic: f64, numeric: f64) -> Result<GradCheckEntry> {
    if !analytic.is_finite() {
        return Err(Error::Numeric(format!("non-finite analytic gradient for {name}[{index}]")));
    }
    Ok(GradCheckEntry {
        name: name.to_string(),
        index,
        analytic,
        numeric,
        rel_error: relative_error(analytic, numeric),
    })
}

/// Checks every element of every input of a scalar function built on a
/// fresh store-less graph.
pub fn check_inputs<F>(inputs: &[(&str, Tensor<f64>)], tolerance: f64, loss: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<'_, f64>, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new(Mode::Infer);
        let vars: Vec<Var> = values.iter().map(|t| g.leaf(t.clone(), false)).collect();
        let out = loss(&mut g, &vars)?;
        Ok(g.value(out).item())
    };

    let mut g = Graph::new(Mode::Infer);
    let vars: Vec<Var> = inputs.iter().map(|(_, t)| g.leaf(t.clone(), true)).collect();
    let out = loss(&mut g, &vars)?;
    let grads = g.backward(out)?;

    let mut values: Vec<Tensor<f64>> = inputs.iter().map(|(_, t)| t.clone()).collect();
    let mut entries = Vec::new();
    for (k, (name, tensor)) in inputs.iter().enumerate() {
        let zeros = Tensor::zeros(tensor.shape());
        let analytic = grads.wrt(vars[k]).unwrap_or(&zeros);
        for i in 0..tensor.len() {
            let orig = tensor.data()[i];
            values[k].data_mut()[i] = orig + FD_STEP;
            let plus = eval(&values)?;
            values[k].data_mut()[i] = orig - FD_STEP;
            let minus = eval(&values)?;
            values[k].data_mut()[i] = orig;
            entries.push(entry(name, i, analytic.data()[i], (plus - minus) / (2.0 * FD_STEP))?);
        }
    }
    Ok(GradCheckReport { entries, tolerance })
}

/// Checks selected `(parameter, flat index)` coordinates of a loss built on
/// a graph over `store`.
pub fn check_params<F>(
    store: &mut ParamStore<f64>,
    mode: Mode,
    coords: &[(ParamId, usize)],
    tolerance: f64,
    loss: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<'_, f64>) -> Result<Var>,
{
    let analytic: Vec<f64> = {
        let mut g = Graph::with_params(store, mode);
        let out = loss(&mut g)?;
        let grads = g.backward(out)?;
        coords
            .iter()
            .map(|&(id, i)| grads.param(id).map_or(0.0, |t| t.data()[i]))
            .collect()
    };
    let eval = |store: &ParamStore<f64>| -> Result<f64> {
        let mut g = Graph::with_params(store, mode);
        let out = loss(&mut g)?;
        Ok(g.value(out).item())
    };
    let mut entries = Vec::with_capacity(coords.len());
    for (&(id, i), &a) in coords.iter().zip(&analytic) {
        let orig = store.value(id).data()[i];
        store.value_mut(id).data_mut()[i] = orig + FD_STEP;
        let plus = eval(store);
        store.value_mut(id).data_mut()[i] = orig - FD_STEP;
        let minus = eval(store);
        store.value_mut(id).data_mut()[i] = orig;
        let numeric = (plus? - minus?) / (2.0 * FD_STEP);
        let name = store.get(id).name.clone();
        entries.push(entry(&name, i, a, numeric)?);
    }
    Ok(GradCheckReport { entries, tolerance })
}
