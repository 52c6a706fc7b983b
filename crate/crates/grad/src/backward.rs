use std::collections::{HashMap, HashSet};

use crate::error::{GradError, Result};
use crate::tensor::Tensor;
use crate::var::{backward_rule, Var};

/// How the backward pass treats the graph it builds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradMode {
    /// Gradients are plain constants.
    FirstOrder,
    /// Gradients are graph nodes that can be differentiated again.
    CreateGraph,
}

/// Output of [`grad`].
#[derive(Debug)]
pub struct Gradients {
    /// One gradient per requested input, in request order.
    pub grads: Vec<Var>,
    /// Indices of inputs the loss does not depend on; their gradient is zero.
    pub unreachable: Vec<usize>,
}

impl Gradients {
    pub fn values(&self) -> Vec<Tensor> {
        self.grads.iter().map(|g| g.value().clone()).collect()
    }
}

/// Nodes reachable from `root` through grad-requiring edges, parents before
/// children. Iterative so deep double-backward graphs cannot overflow the stack.
fn topo_order(root: &Var) -> Vec<Var> {
    let mut order = Vec::new();
    let mut visited = HashSet::new();
    let mut stack: Vec<(Var, bool)> = vec![(root.clone(), false)];
    while let Some((v, expanded)) = stack.pop() {
        if expanded {
            order.push(v);
            continue;
        }
        if !visited.insert(v.id()) {
            continue;
        }
        stack.push((v.clone(), true));
        for p in v.0.op.parents().into_iter().rev() {
            if p.requires_grad() && !visited.contains(&p.id()) {
                stack.push((p.clone(), false));
            }
        }
    }
    order
}

/// Reverse-mode derivative of a scalar `loss` with respect to each of `wrt`.
///
/// Fan-out is handled by summing contributions in a fixed traversal order, so
/// repeated calls on identical graphs give bit-identical results.
pub fn grad(loss: &Var, wrt: &[Var], mode: GradMode) -> Result<Gradients> {
    if !loss.shape().is_scalar() {
        return Err(GradError::NonScalarLoss(format!("{:?}", loss.shape())));
    }
    let create_graph = mode == GradMode::CreateGraph;
    let mut acc: HashMap<u64, Var> = HashMap::new();
    if loss.requires_grad() {
        acc.insert(loss.id(), Var::constant(Tensor::ones(loss.shape().clone())));
        let wanted: HashSet<u64> = wrt.iter().map(Var::id).collect();
        for node in topo_order(loss).iter().rev() {
            if node.is_leaf() {
                continue;
            }
            let g = match acc.get(&node.id()) {
                Some(g) => g.clone(),
                None => continue,
            };
            if !wanted.contains(&node.id()) {
                acc.remove(&node.id());
            }
            let contribs = backward_rule(node, &g, create_graph)?;
            for (parent, contrib) in node.0.op.parents().into_iter().zip(contribs) {
                let Some(c) = contrib else { continue };
                let sum = match acc.remove(&parent.id()) {
                    Some(prev) => prev.add(&c)?,
                    None => c,
                };
                acc.insert(parent.id(), sum);
            }
        }
    }

    let mut grads = Vec::with_capacity(wrt.len());
    let mut unreachable = Vec::new();
    for (i, w) in wrt.iter().enumerate() {
        match acc.get(&w.id()) {
            Some(g) => {
                if !g.value().is_finite() {
                    return Err(GradError::NonFinite(format!("gradient of input {i}")));
                }
                let g = if create_graph { g.clone() } else { g.detach() };
                grads.push(g);
            }
            None => {
                unreachable.push(i);
                grads.push(Var::constant(Tensor::zeros(w.shape().clone())));
            }
        }
    }
    Ok(Gradients { grads, unreachable })
}
