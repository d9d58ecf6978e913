//! Per-forward-pass gradient tape.
//!
//! Recorded ops are appended in forward order, so the list is topological by
//! construction (every input node id is strictly smaller than the output node
//! id). `backward` replays the records in exact reverse order and accumulates
//! chain-rule contributions; the tape is meant to be discarded afterwards.

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use super::{Tensor, TensorInner};

pub type NodeId = usize;

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Gradient contributions per logical input; `None` for untracked inputs.
pub(crate) type VjpFn = Box<dyn Fn(&[f64]) -> Vec<Option<Vec<f64>>>>;

struct OpRecord {
    #[allow(dead_code)]
    name: &'static str,
    inputs: Vec<Option<NodeId>>,
    output: NodeId,
    vjp: VjpFn,
}

pub struct Tape {
    id: u64,
    records: RefCell<Vec<OpRecord>>,
    node_sizes: RefCell<Vec<usize>>,
    /// Leaf tensor id -> (node, tensor), for writing gradients back.
    leaves: RefCell<HashMap<u64, (NodeId, Arc<TensorInner>)>>,
}

thread_local! {
    static ACTIVE: RefCell<Vec<Rc<Tape>>> = const { RefCell::new(Vec::new()) };
}

impl Tape {
    pub fn new() -> Rc<Tape> {
        Rc::new(Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            records: RefCell::new(Vec::new()),
            node_sizes: RefCell::new(Vec::new()),
            leaves: RefCell::new(HashMap::new()),
        })
    }

    /// Makes this tape the recording target for ops on the current thread.
    /// Recording stops when the returned guard drops.
    pub fn activate(self: &Rc<Tape>) -> TapeGuard {
        ACTIVE.with(|a| a.borrow_mut().push(Rc::clone(self)));
        TapeGuard { tape_id: self.id }
    }

    pub(crate) fn current() -> Option<Rc<Tape>> {
        ACTIVE.with(|a| a.borrow().last().cloned())
    }

    pub(crate) fn tape_id(&self) -> u64 {
        self.id
    }

    pub(crate) fn alloc_node(&self, numel: usize) -> NodeId {
        let mut sizes = self.node_sizes.borrow_mut();
        sizes.push(numel);
        sizes.len() - 1
    }

    /// Node id of `t` on this tape: its recorded output node, or its leaf
    /// registration (created on first use for grad-requiring leaves).
    pub(crate) fn node_for(&self, t: &Tensor) -> Option<NodeId> {
        if let Some((tid, nid)) = t.node() {
            if tid == self.id {
                return Some(nid);
            }
        }
        if !t.requires_grad() {
            return None;
        }
        let mut leaves = self.leaves.borrow_mut();
        if let Some((nid, _)) = leaves.get(&t.id()) {
            return Some(*nid);
        }
        let nid = self.alloc_node(t.numel());
        leaves.insert(t.id(), (nid, t.inner_arc()));
        Some(nid)
    }

    pub(crate) fn push_record(
        &self,
        name: &'static str,
        inputs: Vec<Option<NodeId>>,
        output: NodeId,
        vjp: VjpFn,
    ) {
        debug_assert!(inputs.iter().flatten().all(|&i| i < output));
        self.records.borrow_mut().push(OpRecord {
            name,
            inputs,
            output,
            vjp,
        });
    }

    pub fn num_records(&self) -> usize {
        self.records.borrow().len()
    }

    /// Reverse pass from a scalar loss. Fills the gradient accumulator of
    /// every leaf registered on this tape (zeros for leaves whose value did
    /// not influence the loss).
    pub fn backward(&self, loss: &Tensor) {
        assert_eq!(
            loss.numel(),
            1,
            "backward: loss must be scalar, got shape {:?}",
            loss.shape()
        );
        let loss_node = match loss.node() {
            Some((tid, nid)) if tid == self.id => nid,
            _ => {
                let leaves = self.leaves.borrow();
                match leaves.get(&loss.id()) {
                    Some((nid, _)) => *nid,
                    None => panic!("backward: loss is not on this tape"),
                }
            }
        };

        let n_nodes = self.node_sizes.borrow().len();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n_nodes];
        grads[loss_node] = Some(vec![1.0]);

        let records = self.records.borrow();
        for rec in records.iter().rev() {
            // Inputs precede the output, so splitting at the output id gives
            // disjoint access to the upstream grad and the input slots.
            let (head, tail) = grads.split_at_mut(rec.output);
            let gout = match tail[0].as_ref() {
                Some(g) => g,
                None => continue,
            };
            let contribs = (rec.vjp)(gout);
            debug_assert_eq!(contribs.len(), rec.inputs.len());
            for (slot, contrib) in rec.inputs.iter().zip(contribs) {
                if let (Some(nid), Some(c)) = (slot, contrib) {
                    match head[*nid].as_mut() {
                        Some(acc) => {
                            for (a, b) in acc.iter_mut().zip(&c) {
                                *a += b;
                            }
                        }
                        None => head[*nid] = Some(c),
                    }
                }
            }
        }

        for (nid, inner) in self.leaves.borrow().values() {
            match grads[*nid].as_ref() {
                Some(g) => inner.accumulate_grad(g),
                None => inner.accumulate_grad(&vec![0.0; inner.len()]),
            }
        }
    }
}

pub struct TapeGuard {
    tape_id: u64,
}

impl Drop for TapeGuard {
    fn drop(&mut self) {
        ACTIVE.with(|a| {
            let popped = a.borrow_mut().pop();
            debug_assert!(matches!(popped, Some(t) if t.id == self.tape_id));
        });
    }
}
