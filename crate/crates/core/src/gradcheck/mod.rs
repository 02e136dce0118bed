//! Central finite-difference oracle for backward rules.
//!
//! Relative error per component is `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.

mod suite;

pub use suite::{run_component, run_suite, ComponentResult, SuiteOptions, COMPONENTS, SUITE_SEEDS, SUITE_SHAPE, SUITE_STEP};

use crate::nn::Module;
use crate::tensor::{no_grad, Tensor};
use crate::{Error, Result};

const REL_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Which tensor (by name or input position) produced the worst error.
    pub worst: Option<String>,
    pub checked: usize,
    pub pass: bool,
}

impl GradCheckReport {
    fn new(tolerance: f64) -> Self {
        GradCheckReport {
            max_rel_error: 0.0,
            worst: None,
            checked: 0,
            pass: 0.0 < tolerance,
        }
    }

    fn record(&mut self, label: &str, analytic: f64, numeric: f64, tolerance: f64) {
        let denom = analytic.abs().max(numeric.abs()).max(REL_FLOOR);
        let rel = (analytic - numeric).abs() / denom;
        self.checked += 1;
        if rel > self.max_rel_error || self.worst.is_none() {
            if rel > self.max_rel_error {
                self.max_rel_error = rel;
            }
            self.worst = Some(label.to_string());
        }
        self.pass = self.max_rel_error < tolerance;
    }

    pub fn merge(&mut self, other: GradCheckReport) {
        if other.max_rel_error > self.max_rel_error || self.worst.is_none() {
            self.max_rel_error = other.max_rel_error;
            self.worst = other.worst;
        }
        self.checked += other.checked;
        self.pass = self.pass && other.pass;
    }
}

fn scalar_value(t: &Tensor<f64>) -> Result<f64> {
    if t.numel() != 1 {
        return Err(Error::GradCheck(format!(
            "objective must be scalar, got shape {:?}",
            t.shape()
        )));
    }
    t.item()
}

fn baseline<F: Fn() -> Result<Tensor<f64>>>(eval: F) -> Result<f64> {
    let first = no_grad(|| eval().and_then(|t| scalar_value(&t)))?;
    let second = no_grad(|| eval().and_then(|t| scalar_value(&t)))?;
    if first.to_bits() != second.to_bits() {
        return Err(Error::GradCheck(format!(
            "objective is not deterministic ({first} vs {second})"
        )));
    }
    Ok(first)
}

fn check_step(step: f64) -> Result<()> {
    if step > 0.0 && step.is_finite() {
        Ok(())
    } else {
        Err(Error::GradCheck(format!("step must be positive, got {step}")))
    }
}

/// Compares the backward gradient of `f` at `x` with central differences.
pub fn finite_diff_check<F>(f: F, x: &Tensor<f64>, step: f64, tolerance: f64) -> Result<GradCheckReport>
where
    F: Fn(&Tensor<f64>) -> Result<Tensor<f64>>,
{
    check_inputs(|xs| f(&xs[0]), std::slice::from_ref(x), step, tolerance)
}

/// [`finite_diff_check`] over several inputs at once.
pub fn check_inputs<F>(f: F, xs: &[Tensor<f64>], step: f64, tolerance: f64) -> Result<GradCheckReport>
where
    F: Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>,
{
    check_step(step)?;
    let leaves: Vec<Tensor<f64>> = xs
        .iter()
        .map(|x| Tensor::param(x.shape(), x.to_vec()))
        .collect::<Result<_>>()?;
    baseline(|| f(&leaves))?;

    let loss = f(&leaves)?;
    scalar_value(&loss)?;
    loss.backward()?;

    let mut report = GradCheckReport::new(tolerance);
    for (i, leaf) in leaves.iter().enumerate() {
        let analytic = leaf.grad().unwrap_or_else(|| vec![0.0; leaf.numel()]);
        for j in 0..leaf.numel() {
            let eval_at = |delta: f64| -> Result<f64> {
                let mut vals = leaf.to_vec();
                vals[j] += delta;
                let mut probe = leaves.clone();
                probe[i] = Tensor::from_vec(leaf.shape(), vals)?;
                no_grad(|| f(&probe).and_then(|t| scalar_value(&t)))
            };
            let numeric = (eval_at(step)? - eval_at(-step)?) / (2.0 * step);
            report.record(&format!("input {i}"), analytic[j], numeric, tolerance);
        }
    }
    Ok(report)
}

/// Checks the gradient of `objective` with respect to every parameter of
/// `module`. Parameters are perturbed in place and restored afterwards.
pub fn check_module<M, F>(module: &mut M, objective: F, step: f64, tolerance: f64) -> Result<GradCheckReport>
where
    M: Module<f64>,
    F: Fn(&M) -> Result<Tensor<f64>>,
{
    check_step(step)?;
    baseline(|| objective(module))?;
    module.zero_grad();
    let loss = objective(module)?;
    scalar_value(&loss)?;
    loss.backward()?;
    let params = module.named_params();
    let analytic: Vec<Vec<f64>> = params
        .iter()
        .map(|(_, t)| t.grad().unwrap_or_else(|| vec![0.0; t.numel()]))
        .collect();
    module.zero_grad();

    let mut report = GradCheckReport::new(tolerance);
    for (p, (name, original)) in params.iter().enumerate() {
        for j in 0..original.numel() {
            let mut eval_at = |delta: f64| -> Result<f64> {
                let mut vals = original.to_vec();
                vals[j] += delta;
                let probe = Tensor::param(original.shape(), vals)?;
                replace_nth(module, p, probe);
                let v = no_grad(|| objective(module).and_then(|t| scalar_value(&t)));
                replace_nth(module, p, original.clone());
                v
            };
            let numeric = (eval_at(step)? - eval_at(-step)?) / (2.0 * step);
            report.record(name, analytic[p][j], numeric, tolerance);
        }
    }
    Ok(report)
}

fn replace_nth<M: Module<f64>>(module: &mut M, index: usize, value: Tensor<f64>) {
    let mut k = 0;
    let mut value = Some(value);
    module.visit_mut("", &mut |_, t| {
        if k == index {
            if let Some(v) = value.take() {
                *t = v;
            }
        }
        k += 1;
    });
}
