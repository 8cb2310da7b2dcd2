//! Central finite-difference gradient checking.
//!
//! The numeric side only ever evaluates forward values, so it is independent
//! of every backward rule it checks.

use crate::tensor::{Graph, Result, Tensor, TensorError, Var};

#[derive(Clone, Copy, Debug)]
pub struct GradCheck {
    /// Finite-difference step.
    pub step: f64,
    /// Denominator floor for the relative error, so entries whose true
    /// gradient is ~0 are judged on absolute error.
    pub floor: f64,
}

impl Default for GradCheck {
    fn default() -> Self {
        Self {
            step: 1e-5,
            floor: 1e-3,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(input, element, analytic, numeric)` of the worst entry.
    pub worst: Option<(usize, usize, f64, f64)>,
    pub checked: usize,
}

impl GradCheck {
    pub fn rel_error(&self, analytic: f64, numeric: f64) -> f64 {
        (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(self.floor)
    }

    /// Compares backward gradients of the scalar `f(inputs)` against central
    /// differences for every element of every input.
    pub fn run<F>(&self, inputs: &[Tensor], f: F) -> Result<GradCheckReport>
    where
        F: for<'g> Fn(&'g Graph, &[Var<'g>]) -> Result<Var<'g>>,
    {
        let graph = Graph::new();
        let vars: Vec<Var<'_>> = inputs.iter().map(|t| graph.param(t.clone())).collect();
        let loss = f(&graph, &vars)?;
        graph.backward(loss)?;
        let analytic: Vec<Tensor> = vars
            .iter()
            .zip(inputs)
            .map(|(v, t)| v.grad().unwrap_or_else(|| Tensor::zeros(t.shape().to_vec())))
            .collect();

        let eval = |perturbed: &[Tensor]| -> Result<f64> {
            let g = Graph::new();
            let vars: Vec<Var<'_>> = perturbed.iter().map(|t| g.constant(t.clone())).collect();
            let out = f(&g, &vars)?;
            let value = out.value();
            value
                .item()
                .ok_or_else(|| TensorError::NonScalarLoss(value.shape().to_vec()))
        };

        let mut report = GradCheckReport::default();
        let mut work: Vec<Tensor> = inputs.to_vec();
        for (i, input) in inputs.iter().enumerate() {
            for j in 0..input.len() {
                let orig = input.data()[j];
                work[i].data_mut()[j] = orig + self.step;
                let plus = eval(&work)?;
                work[i].data_mut()[j] = orig - self.step;
                let minus = eval(&work)?;
                work[i].data_mut()[j] = orig;
                let numeric = (plus - minus) / (2.0 * self.step);
                let a = analytic[i].data()[j];
                let err = self.rel_error(a, numeric);
                report.checked += 1;
                if err > report.max_rel_error || report.worst.is_none() {
                    report.max_rel_error = err.max(report.max_rel_error);
                    report.worst = Some((i, j, a, numeric));
                }
            }
        }
        Ok(report)
    }
}

/// `Σ weights ⊙ x`: a scalar probe whose gradient w.r.t. `x` is `weights`.
pub fn weighted_sum<'g>(x: Var<'g>, weights: &Tensor) -> Result<Var<'g>> {
    let w = x.graph().constant(weights.clone());
    Ok(crate::tensor::ops::sum(crate::tensor::ops::mul(x, w)?))
}
