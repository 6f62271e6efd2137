//! Minimal reverse-mode automatic differentiation over dense `f64` arrays.
//!
//! A [`Graph`] records every primitive as it executes; [`Var`] handles are
//! cheap `Copy` references into it. Calling [`Graph::backward`] on a scalar
//! node walks the record in reverse and returns [`Gradients`] for every node
//! that depends on a trainable leaf ([`Graph::param`]).
//!
//! ```
//! use facestyle::autodiff::{Graph, Tensor};
//!
//! let g = Graph::new();
//! let x = g.param(Tensor::vector(vec![0.0, 1.0]));
//! let y = x.sin().sum();
//! let grads = g.backward(y).unwrap();
//! assert_eq!(grads.get(x).data(), &[1.0, 1.0f64.cos()]);
//! ```
//!
//! Shape errors inside primitives are programming errors and panic with a
//! message naming the op and both shapes, in the manner of `ndarray`.
//! Gradients are summed into zeroed buffers on every `backward` call; use
//! [`GradAccumulator`] to sum across calls.

mod check;
mod graph;
pub mod kernels;
mod tensor;

pub use check::{grad_check, grad_check_at, rel_error, GradCheckReport, REL_ERROR_FLOOR};
pub use graph::{concat, CustomOp, Gradients, Graph, Var, NORM_EPS};
pub use tensor::Tensor;


/// Sums gradients for a fixed list of tensors across several backward calls.
#[derive(Clone, Debug)]
pub struct GradAccumulator {
    grads: Vec<Tensor>,
}

impl GradAccumulator {
    pub fn new(shapes: impl IntoIterator<Item = Vec<usize>>) -> Self {
        Self {
            grads: shapes.into_iter().map(|s| Tensor::zeros(&s)).collect(),
        }
    }

    pub fn accumulate(&mut self, grads: &Gradients, vars: &[Var<'_>]) {
        assert_eq!(vars.len(), self.grads.len(), "accumulate: wrong number of vars");
        for (acc, v) in self.grads.iter_mut().zip(vars) {
            acc.add_assign(&grads.get(*v));
        }
    }

    pub fn zero_grad(&mut self) {
        for g in &mut self.grads {
            g.data_mut().iter_mut().for_each(|x| *x = 0.0);
        }
    }

    pub fn grads(&self) -> &[Tensor] {
        &self.grads
    }
}
