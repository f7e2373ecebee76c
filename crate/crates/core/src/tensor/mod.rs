//! Dense-tensor compute graph with reverse-mode differentiation, parameter
//! store, AdamW, and a finite-difference checker.

pub mod gradcheck;
pub mod graph;
pub mod kernels;
pub mod optim;
pub mod params;
pub mod scalar;
#[cfg(test)]
mod tests;

pub use gradcheck::{grad_check, CheckInput, ScalarProgram};
pub use graph::{Graph, Op, TensorId};
pub use kernels::ConvDims;
pub use optim::{AdamW, AdamWConfig};
pub use params::{Init, Param, ParamId, ParamStore};
pub use scalar::Scalar;

use crate::error::TensorError;

impl Graph<f32> {
    /// Parameter gradients after `backward`, merged per parameter in
    /// registration order. Bindings of the same parameter at several graph
    /// positions (the shared head, for instance) accumulate.
    pub fn collect_param_grads(&self) -> Vec<(ParamId, Vec<f32>)> {
        let mut merged: Vec<Option<Vec<f32>>> = Vec::new();
        for node in &self.nodes {
            let (Some(pid), Some(grad)) = (node.param, node.grad.as_ref()) else {
                continue;
            };
            if !node.needs_grad {
                continue;
            }
            if merged.len() <= pid.index() {
                merged.resize_with(pid.index() + 1, || None);
            }
            match &mut merged[pid.index()] {
                Some(acc) => {
                    for (a, &g) in acc.iter_mut().zip(grad) {
                        *a += g;
                    }
                }
                slot => *slot = Some(grad.clone()),
            }
        }
        merged
            .into_iter()
            .enumerate()
            .filter_map(|(i, g)| g.map(|g| (ParamId(i), g)))
            .collect()
    }

    /// Every parameter bound anywhere in this graph, in binding order.
    pub fn bound_params(&self) -> Vec<ParamId> {
        self.nodes.iter().filter_map(|n| n.param).collect()
    }

    /// NaN/Inf guard used by training loops on their loss values.
    pub fn finite_scalar(&self, id: TensorId) -> Result<f64, TensorError> {
        let v = self.scalar(id);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(TensorError::NonFinite)
        }
    }
}
