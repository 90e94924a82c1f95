//! A tape of tensor operations supporting reverse-mode differentiation.
//!
//! A [`Graph`] is built per forward pass: every operation appends one node,
//! so node ids are already a topological order and [`Graph::backward`] is a
//! single reverse sweep. Operations only record a backward step when some
//! input is connected to a tracked leaf, which makes untracked evaluation
//! passes tape-free, and backward steps skip parents nothing tracks.

use crate::error::{Error, Result};
use crate::nn::tensor::{Element, Tensor};

/// Index of a node in its [`Graph`].
pub type VarId = usize;

/// Batch statistics captured by a train-mode batchnorm call, keyed by the
/// caller so they can be folded into running buffers after the step.
#[derive(Debug, Clone)]
pub struct BatchStats<E> {
    pub key: usize,
    pub mean: Vec<E>,
    pub var: Vec<E>,
}

/// One backward step: scatter `grad_out` into the grads of this node's
/// parents. Implementations capture whatever forward values they need.
pub(crate) trait Backward<E: Element> {
    fn apply(&self, grad_out: &[E], sink: &mut GradSink<'_, E>);
}

/// Accumulates parent gradients during the reverse sweep.
pub(crate) struct GradSink<'a, E: Element> {
    grads: &'a mut [Option<Vec<E>>],
    needs: &'a [bool],
}

impl<E: Element> GradSink<'_, E> {
    /// True when node `id` is on a path to a tracked leaf; skip gradient
    /// work for it otherwise.
    pub fn wants(&self, id: VarId) -> bool {
        self.needs[id]
    }

    /// The gradient accumulator for node `id`, zero-initialized to `len` on
    /// first touch. Callers check [`GradSink::wants`] before doing the work
    /// that fills it.
    pub fn buf(&mut self, id: VarId, len: usize) -> &mut [E] {
        self.grads[id].get_or_insert_with(|| vec![E::zero(); len])
    }

    /// Adds `contrib` elementwise into the accumulator of `id`; no-op for
    /// untracked nodes.
    pub fn add(&mut self, id: VarId, contrib: &[E]) {
        if !self.needs[id] {
            return;
        }
        let buf = self.buf(id, contrib.len());
        for (b, &c) in buf.iter_mut().zip(contrib) {
            *b += c;
        }
    }
}

struct Node<E: Element> {
    value: Tensor<E>,
    back: Option<Box<dyn Backward<E>>>,
}

/// The tape. See the module docs.
pub struct Graph<E: Element> {
    nodes: Vec<Node<E>>,
    needs: Vec<bool>,
    grads: Vec<Option<Vec<E>>>,
    batch_stats: Vec<BatchStats<E>>,
}

impl<E: Element> Default for Graph<E> {
    fn default() -> Self {
        Graph::new()
    }
}

impl<E: Element> Graph<E> {
    pub fn new() -> Graph<E> {
        Graph {
            nodes: Vec::new(),
            needs: Vec::new(),
            grads: Vec::new(),
            batch_stats: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Inserts `t` as a leaf; it is tracked iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: &Tensor<E>) -> VarId {
        let needs = t.requires_grad();
        self.push(t.clone(), needs, None)
    }

    /// Inserts `t` as a leaf with an explicit tracking flag.
    pub fn leaf_tracked(&mut self, t: &Tensor<E>, tracked: bool) -> VarId {
        self.push(t.clone().with_requires_grad(tracked), tracked, None)
    }

    pub fn value(&self, id: VarId) -> &Tensor<E> {
        &self.nodes[id].value
    }

    pub fn needs_grad(&self, id: VarId) -> bool {
        self.needs[id]
    }

    pub(crate) fn any_needs_grad(&self, ids: &[VarId]) -> bool {
        ids.iter().any(|&id| self.needs[id])
    }

    pub(crate) fn push(
        &mut self,
        value: Tensor<E>,
        needs_grad: bool,
        back: Option<Box<dyn Backward<E>>>,
    ) -> VarId {
        debug_assert!(
            back.is_none() || needs_grad,
            "untracked node with a backward step"
        );
        self.nodes.push(Node { value, back });
        self.needs.push(needs_grad);
        self.nodes.len() - 1
    }

    pub(crate) fn record_batch_stats(&mut self, stats: BatchStats<E>) {
        self.batch_stats.push(stats);
    }

    /// Batch statistics recorded by train-mode normalization calls, in call
    /// order.
    pub fn batch_stats(&self) -> &[BatchStats<E>] {
        &self.batch_stats
    }

    pub fn take_batch_stats(&mut self) -> Vec<BatchStats<E>> {
        std::mem::take(&mut self.batch_stats)
    }

    /// Runs the reverse sweep from the scalar node `seed`, populating
    /// gradients for every tracked node that `seed` depends on.
    pub fn backward(&mut self, seed: VarId) -> Result<()> {
        let seed_node = self
            .nodes
            .get(seed)
            .ok_or_else(|| Error::Usage(format!("backward seed {seed} out of range")))?;
        if !seed_node.value.is_scalar() {
            return Err(Error::Usage(format!(
                "backward needs a scalar seed, got shape {:?}",
                seed_node.value.shape()
            )));
        }
        if !self.needs[seed] {
            return Err(Error::Usage(
                "backward seed does not depend on any tracked variable".into(),
            ));
        }

        self.grads.clear();
        self.grads.resize(self.nodes.len(), None);
        self.grads[seed] = Some(vec![E::one()]);
        for id in (0..=seed).rev() {
            if !self.needs[id] {
                continue;
            }
            let Some(gout) = self.grads[id].take() else {
                continue;
            };
            if let Some(back) = &self.nodes[id].back {
                let mut sink = GradSink {
                    grads: &mut self.grads,
                    needs: &self.needs,
                };
                back.apply(&gout, &mut sink);
            }
            self.grads[id] = Some(gout);
        }
        Ok(())
    }

    /// Gradient of the last [`Graph::backward`] seed with respect to node
    /// `id`; `None` if the node was not reached.
    pub fn grad(&self, id: VarId) -> Option<&[E]> {
        self.grads.get(id).and_then(|g| g.as_deref())
    }

    /// Like [`Graph::grad`], shaped like the node's value.
    pub fn grad_tensor(&self, id: VarId) -> Option<Tensor<E>> {
        self.grad(id)
            .map(|g| Tensor::new(self.value(id).shape().to_vec(), g.to_vec()))
    }
}
