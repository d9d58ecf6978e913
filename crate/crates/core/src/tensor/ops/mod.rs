//! Primitive tensor operations.
//!
//! Every op computes its forward value eagerly; when a tape is active and at
//! least one input is tracked, it records a VJP closure that maps the output
//! gradient to per-input gradient contributions.

mod conv;
mod elementwise;
mod linalg;
mod norm;
mod reduce;
mod resample;
mod shape_ops;

pub use conv::{conv2d, depthwise_conv2d};
pub use elementwise::{
    abs, add, add_scalar, broadcast_shapes, cos, div, exp, max2, min2, mul, mul_scalar, neg,
    relu, sigmoid, silu, sin, softplus, softplus_value, sqrt, sub,
};
pub use linalg::matmul;
pub use norm::layer_norm;
pub use reduce::{mean_all, mean_axis, sum_all, sum_axis};
pub use resample::{grid_sample, upsample_bilinear};
pub use shape_ops::{
    concat, depth_to_space, gather_tokens, pad2d, permute_axes, reshape, slice, space_to_depth,
    transpose2d, PadMode,
};

use super::tape::VjpFn;
use super::{NodeId, Tape, Tensor};

/// Tracking state of an op's inputs on the active tape, if any.
pub(crate) struct Recording {
    tape: std::rc::Rc<Tape>,
    input_nodes: Vec<Option<NodeId>>,
}

impl Recording {
    /// Which of the logical inputs need a gradient.
    pub(crate) fn tracked(&self) -> Vec<bool> {
        self.input_nodes.iter().map(|n| n.is_some()).collect()
    }
}

/// Resolves the active tape and the node ids of the tracked inputs.
/// Returns `None` when the op should run pure (no tape, or nothing tracked).
pub(crate) fn recording_for(inputs: &[&Tensor]) -> Option<Recording> {
    let tape = Tape::current()?;
    let input_nodes: Vec<Option<NodeId>> =
        inputs.iter().map(|t| tape.node_for(t)).collect();
    if input_nodes.iter().all(|n| n.is_none()) {
        return None;
    }
    Some(Recording { tape, input_nodes })
}

/// Finishes an op: wraps the forward value, allocating an output node and
/// pushing the VJP record when recording.
pub(crate) fn finish_op(
    name: &'static str,
    rec: Option<Recording>,
    data: Vec<f64>,
    shape: Vec<usize>,
    make_vjp: impl FnOnce() -> VjpFn,
) -> Tensor {
    match rec {
        None => Tensor::with_node(data, shape, None),
        Some(r) => {
            let out = r.tape.alloc_node(data.len());
            r.tape.push_record(name, r.input_nodes, out, make_vjp());
            Tensor::with_node(data, shape, Some((r.tape.tape_id(), out)))
        }
    }
}

pub(crate) fn shape_panic(op: &str, a: &[usize], b: &[usize]) -> ! {
    panic!("{op}: incompatible shapes {a:?} and {b:?}");
}
