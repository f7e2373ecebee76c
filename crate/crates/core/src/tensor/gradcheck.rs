//! Central finite-difference verification of backward rules.
//!
//! The analytic side runs the program on the f32 graph and backpropagates.
//! The numeric side re-evaluates the same program on an f64 graph around
//! each perturbed input, so the difference quotient carries 64-bit
//! accumulation end to end.

use super::graph::{Graph, TensorId};
use super::scalar::Scalar;
use crate::error::TensorError;

/// A scalar-valued program expressible on a graph of either precision.
pub trait ScalarProgram {
    fn build<E: Scalar>(
        &self,
        g: &mut Graph<E>,
        inputs: &[TensorId],
    ) -> Result<TensorId, TensorError>;
}

/// One external input to a checked program.
#[derive(Clone, Debug)]
pub struct CheckInput {
    pub data: Vec<f64>,
    pub shape: Vec<usize>,
}

impl CheckInput {
    pub fn new(data: Vec<f64>, shape: Vec<usize>) -> Self {
        CheckInput { data, shape }
    }
}

/// Maximum relative error between analytic and numeric gradients, where the
/// per-element denominator is `max(1, |analytic|, |numeric|)`.
pub fn grad_check<P: ScalarProgram>(
    prog: &P,
    inputs: &[CheckInput],
    h: f64,
) -> Result<f64, TensorError> {
    // Analytic gradients on the f32 engine.
    let mut g32: Graph<f32> = Graph::new();
    let ids32: Vec<TensorId> = inputs
        .iter()
        .map(|inp| {
            g32.leaf_grad(
                inp.data.iter().map(|&x| x as f32).collect(),
                inp.shape.clone(),
            )
        })
        .collect();
    let loss32 = prog.build(&mut g32, &ids32)?;
    g32.backward(loss32)?;
    let analytic: Vec<Vec<f64>> = ids32
        .iter()
        .enumerate()
        .map(|(i, &id)| match g32.grad(id) {
            Some(g) => g.iter().map(|&v| v as f64).collect(),
            None => vec![0.0; inputs[i].data.len()],
        })
        .collect();

    // Central differences on the f64 engine.
    let eval = |perturbed: &[CheckInput]| -> Result<f64, TensorError> {
        let mut g64: Graph<f64> = Graph::new();
        let ids: Vec<TensorId> = perturbed
            .iter()
            .map(|inp| g64.leaf(inp.data.clone(), inp.shape.clone()))
            .collect();
        let loss = prog.build(&mut g64, &ids)?;
        Ok(g64.scalar(loss))
    };

    let mut work: Vec<CheckInput> = inputs.to_vec();
    let mut max_rel = 0.0_f64;
    for ii in 0..inputs.len() {
        for j in 0..inputs[ii].data.len() {
            let x0 = inputs[ii].data[j];
            work[ii].data[j] = x0 + h;
            let fp = eval(&work)?;
            work[ii].data[j] = x0 - h;
            let fm = eval(&work)?;
            work[ii].data[j] = x0;
            let numeric = (fp - fm) / (2.0 * h);
            let a = analytic[ii][j];
            let denom = 1.0_f64.max(a.abs()).max(numeric.abs());
            let rel = (a - numeric).abs() / denom;
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    Ok(max_rel)
}
