//! Browser bindings: separate a switching pattern, draw a target control and
//! run a small outer approximation. Every export returns a JSON string.

use serde::Serialize;
use switch_ocp::instancegen::{spline_control, Instance, InstanceSpec};
use switch_ocp::outerloop::{self, OuterConfig, OuterError};
use switch_ocp::switchpoly::{separate, shift_count, SwitchingBudget};
use wasm_bindgen::prelude::*;

#[derive(Serialize)]
struct Separation {
    /// Zero-based support of the most violated cut; empty if none.
    indices: Vec<usize>,
    coefficients: Vec<f64>,
    rhs: f64,
    violation: f64,
    /// Shift count when the pattern is binary.
    shifts: Option<usize>,
}

#[derive(Serialize)]
struct Target {
    times: Vec<f64>,
    values: Vec<f64>,
    knots: Vec<f64>,
}

#[derive(Serialize)]
struct OuterTrace {
    bounds: Vec<f64>,
    violations: Vec<f64>,
    /// Final control, one value per interval.
    control: Vec<f64>,
    cuts: usize,
    converged: bool,
}

fn json<T: Serialize>(value: &T) -> Result<String, String> {
    serde_json::to_string(value).map_err(|e| e.to_string())
}

pub fn separate_json(values: &[f64], sigma_max: usize) -> Result<String, String> {
    let budget = SwitchingBudget::new(sigma_max).map_err(|e| e.to_string())?;
    let found = separate(values, budget).map_err(|e| e.to_string())?;
    let shifts = shift_count(values).ok();
    let out = match found {
        Some((cut, violation)) => Separation {
            coefficients: cut.coefficients(values.len()),
            indices: cut.indices,
            rhs: cut.rhs,
            violation,
            shifts,
        },
        None => Separation { indices: Vec::new(), coefficients: vec![0.0; values.len()], rhs: budget.rhs(), violation: 0.0, shifts },
    };
    json(&out)
}

fn demo_spec(seed: u64, sigma: usize, nt_fine: usize) -> InstanceSpec {
    InstanceSpec { seed, sigma, nt_fine, nx: 7, ..InstanceSpec::default() }
}

pub fn target_json(seed: u64, sigma: usize, samples: usize) -> Result<String, String> {
    let spec = demo_spec(seed, sigma, samples);
    let u = spline_control(&spec).map_err(|e| e.to_string())?;
    let partition = u.partition();
    let times = (0..partition.num_intervals()).map(|i| {
        let (a, b) = partition.interval(i);
        0.5 * (a + b)
    });
    let target = switch_ocp::instancegen::desired_control(&spec).map_err(|e| e.to_string())?;
    json(&Target { times: times.collect(), values: u.coeffs().to_vec(), knots: target.spline.knots().to_vec() })
}

pub fn outer_json(seed: u64, nt: usize, alpha: f64, sigma_max: usize, max_cuts: usize) -> Result<String, String> {
    let spec = demo_spec(seed, 11, nt.max(1) * 4);
    let instance = Instance::build(&spec).map_err(|e| e.to_string())?;
    let problem = instance.problem(nt).map_err(|e| e.to_string())?;
    let config = OuterConfig { alpha, sigma_max, max_cuts, ..OuterConfig::default() };
    let res = outerloop::run(&problem, &config).map_err(|e| match e {
        OuterError::Newton { log, .. } => format!("Newton solve failed after {} cuts", log.len().saturating_sub(1)),
        OuterError::Setup(e) => e.to_string(),
    })?;
    json(&OuterTrace {
        bounds: res.log.iter().map(|r| r.lower_bound).collect(),
        violations: res.log.iter().map(|r| r.max_violation).collect(),
        control: res.state.u.coeffs().to_vec(),
        cuts: res.pool.len(),
        converged: res.status == outerloop::OuterStatus::Converged,
    })
}

/// Most violated alternating inequality for a pattern in `[0, 1]^M`.
#[wasm_bindgen]
pub fn separate_pattern(values: &[f64], sigma_max: usize) -> Result<String, JsValue> {
    separate_json(values, sigma_max).map_err(|e| JsValue::from_str(&e))
}

/// Clipped spline target sampled at `samples` interval midpoints on `(0, 2)`.
#[wasm_bindgen]
pub fn generate_control(seed: u32, sigma: usize, samples: usize) -> Result<String, JsValue> {
    target_json(seed.into(), sigma, samples).map_err(|e| JsValue::from_str(&e))
}

/// Bound trace of the outer loop on a 7×7-node instance.
#[wasm_bindgen]
pub fn run_outer(seed: u32, nt: usize, alpha: f64, sigma_max: usize, max_cuts: usize) -> Result<String, JsValue> {
    outer_json(seed.into(), nt, alpha, sigma_max, max_cuts).map_err(|e| JsValue::from_str(&e))
}
