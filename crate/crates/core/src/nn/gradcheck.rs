//! Central finite-difference check of analytic gradients.

use rand::Rng;

use super::tensor::Parameter;
use crate::error::{Error, Result};

/// Default finite-difference step.
pub const DEFAULT_DELTA: f64 = 1e-4;

/// Lower bound on the denominator of the relative error, so that two
/// vanishing gradients do not produce a spurious large ratio.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-7;

/// A scalar loss over a set of 64-bit parameters.
pub trait Differentiable {
    fn parameters_mut(&mut self) -> Vec<&mut Parameter<f64>>;

    /// Forward pass only. Must be deterministic (dropout masks frozen).
    fn loss(&mut self) -> Result<f64>;

    /// Zeroes gradients, runs forward and backward, returns the loss.
    fn loss_with_gradients(&mut self) -> Result<f64>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct Probe {
    pub parameter: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub relative_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub loss: f64,
    pub max_relative_error: f64,
    pub probes: Vec<Probe>,
}

impl GradCheckReport {
    pub fn worst(&self) -> Option<&Probe> {
        self.probes
            .iter()
            .max_by(|a, b| a.relative_error.total_cmp(&b.relative_error))
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR)
}

fn finite(v: f64, what: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(format!("{what} evaluated to {v}")))
    }
}

/// Compares analytic gradients with `(f(x + delta) - f(x - delta)) / 2 delta`
/// at `probe_count` scalar coordinates. Probes cycle over the non-empty
/// parameter tensors so every tensor is visited; the coordinate within a
/// tensor is drawn uniformly.
pub fn grad_check<D: Differentiable + ?Sized, R: Rng + ?Sized>(
    target: &mut D,
    probe_count: usize,
    delta: f64,
    rng: &mut R,
) -> Result<GradCheckReport> {
    if probe_count == 0 {
        return Err(Error::InvalidArgument("probes must be >= 1".into()));
    }
    let loss = finite(target.loss_with_gradients()?, "loss")?;
    let analytic: Vec<Vec<f64>> = target
        .parameters_mut()
        .iter()
        .map(|p| p.grad.data().to_vec())
        .collect();
    let tensors: Vec<usize> = analytic
        .iter()
        .enumerate()
        .filter(|(_, g)| !g.is_empty())
        .map(|(i, _)| i)
        .collect();
    if tensors.is_empty() {
        return Err(Error::Empty("no parameters to probe".into()));
    }

    let mut probes = Vec::with_capacity(probe_count);
    for k in 0..probe_count {
        let t = tensors[k % tensors.len()];
        let index = rng.gen_range(0..analytic[t].len());
        let original = target.parameters_mut()[t].value.data()[index];

        target.parameters_mut()[t].value.data_mut()[index] = original + delta;
        let plus = finite(target.loss()?, "perturbed loss")?;
        target.parameters_mut()[t].value.data_mut()[index] = original - delta;
        let minus = finite(target.loss()?, "perturbed loss")?;
        target.parameters_mut()[t].value.data_mut()[index] = original;

        let numeric = (plus - minus) / (2.0 * delta);
        let a = analytic[t][index];
        probes.push(Probe {
            parameter: target.parameters_mut()[t].name().to_string(),
            index,
            analytic: a,
            numeric,
            relative_error: relative_error(a, numeric),
        });
    }
    let max_relative_error = probes
        .iter()
        .map(|p| p.relative_error)
        .fold(0.0, f64::max);
    Ok(GradCheckReport {
        loss,
        max_relative_error,
        probes,
    })
}
