//! Dense f64 tensors with tape-based reverse-mode automatic differentiation.
//!
//! Tensors are immutable after creation except for gradient accumulation.
//! Forward ops run pure when no tape is active; under an active [`Tape`]
//! every primitive records a VJP closure that `Tape::backward` replays in
//! reverse topological order.

pub mod init;
pub mod ops;
mod tape;

pub use tape::{NodeId, Tape, TapeGuard};

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

static NEXT_TENSOR_ID: AtomicU64 = AtomicU64::new(1);

pub(crate) struct TensorInner {
    id: u64,
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
    requires_grad: bool,
    grad: Mutex<Option<Vec<f64>>>,
    /// (tape id, node id) when this tensor was produced by a recorded op.
    node: Option<(u64, NodeId)>,
}

/// n-dimensional array of f64 values. Cloning is cheap (shared payload).
#[derive(Clone)]
pub struct Tensor {
    inner: Arc<TensorInner>,
}

impl Tensor {
    fn build(data: Vec<f64>, shape: Vec<usize>, requires_grad: bool) -> Tensor {
        let numel: usize = shape.iter().product();
        assert_eq!(
            numel,
            data.len(),
            "tensor: shape {:?} does not match data length {}",
            shape,
            data.len()
        );
        Tensor {
            inner: Arc::new(TensorInner {
                id: NEXT_TENSOR_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data: Arc::new(data),
                requires_grad,
                grad: Mutex::new(None),
                node: None,
            }),
        }
    }

    /// Constant tensor: participates in forward math, never receives gradients.
    pub fn from_vec(data: Vec<f64>, shape: &[usize]) -> Tensor {
        Tensor::build(data, shape.to_vec(), false)
    }

    /// Leaf parameter: registered on the active tape and given a gradient
    /// accumulator by `Tape::backward`.
    pub fn param(data: Vec<f64>, shape: &[usize]) -> Tensor {
        Tensor::build(data, shape.to_vec(), true)
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor::from_vec(vec![v], &[1])
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor::from_vec(vec![0.0; n], shape)
    }

    pub fn ones(shape: &[usize]) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor::from_vec(vec![1.0; n], shape)
    }

    pub fn full(shape: &[usize], v: f64) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor::from_vec(vec![v; n], shape)
    }

    pub(crate) fn with_node(
        data: Vec<f64>,
        shape: Vec<usize>,
        node: Option<(u64, NodeId)>,
    ) -> Tensor {
        let numel: usize = shape.iter().product();
        assert_eq!(numel, data.len(), "tensor: shape/data mismatch in op output");
        Tensor {
            inner: Arc::new(TensorInner {
                id: NEXT_TENSOR_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data: Arc::new(data),
                requires_grad: false,
                grad: Mutex::new(None),
                node,
            }),
        }
    }

    /// Shares the payload under a new shape with the same element count.
    pub(crate) fn view_as(&self, shape: Vec<usize>, node: Option<(u64, NodeId)>) -> Tensor {
        let numel: usize = shape.iter().product();
        assert_eq!(numel, self.numel(), "tensor: view shape mismatch");
        Tensor {
            inner: Arc::new(TensorInner {
                id: NEXT_TENSOR_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data: Arc::clone(&self.inner.data),
                requires_grad: false,
                grad: Mutex::new(None),
                node,
            }),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn numel(&self) -> usize {
        self.inner.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.inner.data
    }

    pub(crate) fn data_arc(&self) -> Arc<Vec<f64>> {
        Arc::clone(&self.inner.data)
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.inner.data.as_ref().clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(
            self.numel(),
            1,
            "item: tensor has shape {:?}, expected a scalar",
            self.shape()
        );
        self.inner.data[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    pub fn is_finite(&self) -> bool {
        self.inner.data.iter().all(|v| v.is_finite())
    }

    /// Accumulated gradient, if a backward pass has touched this leaf.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.inner.grad.lock().unwrap().clone()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.lock().unwrap() = None;
    }

    /// Constant copy detached from any tape.
    pub fn detach(&self) -> Tensor {
        self.view_as(self.inner.shape.clone(), None)
    }

    pub(crate) fn id(&self) -> u64 {
        self.inner.id
    }

    pub(crate) fn node(&self) -> Option<(u64, NodeId)> {
        self.inner.node
    }

    pub(crate) fn inner_arc(&self) -> Arc<TensorInner> {
        Arc::clone(&self.inner)
    }
}

impl TensorInner {
    pub(crate) fn accumulate_grad(&self, g: &[f64]) {
        let mut slot = self.grad.lock().unwrap();
        match slot.as_mut() {
            Some(acc) => {
                for (a, b) in acc.iter_mut().zip(g) {
                    *a += b;
                }
            }
            None => *slot = Some(g.to_vec()),
        }
    }

    pub(crate) fn len(&self) -> usize {
        self.data.len()
    }
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let preview: Vec<f64> = self.data().iter().take(8).copied().collect();
        f.debug_struct("Tensor")
            .field("shape", &self.shape())
            .field("requires_grad", &self.requires_grad())
            .field("data", &preview)
            .finish()
    }
}

macro_rules! impl_binop {
    ($trait:ident, $method:ident, $func:path) => {
        impl std::ops::$trait for &Tensor {
            type Output = Tensor;
            fn $method(self, rhs: &Tensor) -> Tensor {
                $func(self, rhs)
            }
        }
    };
}

impl_binop!(Add, add, ops::add);
impl_binop!(Sub, sub, ops::sub);
impl_binop!(Mul, mul, ops::mul);
impl_binop!(Div, div, ops::div);

impl std::ops::Neg for &Tensor {
    type Output = Tensor;
    fn neg(self) -> Tensor {
        ops::neg(self)
    }
}

impl Tensor {
    pub fn sigmoid(&self) -> Tensor {
        ops::sigmoid(self)
    }
    pub fn silu(&self) -> Tensor {
        ops::silu(self)
    }
    pub fn exp(&self) -> Tensor {
        ops::exp(self)
    }
    pub fn abs(&self) -> Tensor {
        ops::abs(self)
    }
    pub fn sqrt(&self) -> Tensor {
        ops::sqrt(self)
    }
    pub fn softplus(&self) -> Tensor {
        ops::softplus(self)
    }
    pub fn relu(&self) -> Tensor {
        ops::relu(self)
    }
    pub fn sin(&self) -> Tensor {
        ops::sin(self)
    }
    pub fn cos(&self) -> Tensor {
        ops::cos(self)
    }
    pub fn mean_all(&self) -> Tensor {
        ops::mean_all(self)
    }
    pub fn sum_all(&self) -> Tensor {
        ops::sum_all(self)
    }
    pub fn matmul(&self, rhs: &Tensor) -> Tensor {
        ops::matmul(self, rhs)
    }
    pub fn reshape(&self, shape: &[usize]) -> Tensor {
        ops::reshape(self, shape)
    }
    pub fn add_scalar(&self, c: f64) -> Tensor {
        ops::add_scalar(self, c)
    }
    pub fn mul_scalar(&self, c: f64) -> Tensor {
        ops::mul_scalar(self, c)
    }
}
