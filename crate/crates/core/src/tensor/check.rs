//! Central-finite-difference gradient checking, always in f64.

use super::array::Tensor;
use super::graph::{Graph, Var};
use crate::error::Result;

/// Compare reverse-mode gradients of `build` against central differences.
///
/// `build` receives a fresh graph and one parameter Var per input tensor and
/// must return a scalar loss. Returns the maximum relative error over all
/// input elements, where the denominator is `max(|analytic|, |numeric|, 1e-6)`
/// to keep near-zero gradients from blowing the ratio up.
pub fn max_grad_error<F>(build: &F, inputs: &[Tensor<f64>], eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    // analytic pass
    let mut graph = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| graph.param(t.clone())).collect();
    let loss = build(&mut graph, &vars)?;
    graph.backward(loss)?;
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .map(|&v| {
            graph
                .grad(v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(&graph.value(v).shape))
        })
        .collect();

    let eval = |perturbed: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vs: Vec<Var> = perturbed.iter().map(|t| g.constant(t.clone())).collect();
        let loss = build(&mut g, &vs)?;
        Ok(g.value(loss).scalar_value())
    };

    let mut worst = 0.0f64;
    for (ti, tensor) in inputs.iter().enumerate() {
        for i in 0..tensor.len() {
            let mut plus = inputs.to_vec();
            plus[ti].data[i] += eps;
            let mut minus = inputs.to_vec();
            minus[ti].data[i] -= eps;
            let numeric = (eval(&plus)? - eval(&minus)?) / (2.0 * eps);
            let a = analytic[ti].data[i];
            let denom = a.abs().max(numeric.abs()).max(1e-6);
            let err = (a - numeric).abs() / denom;
            if err > worst {
                worst = err;
            }
        }
    }
    Ok(worst)
}
