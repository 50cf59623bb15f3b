//! Topological traversal of the recorded computation.

use super::Tensor;
use std::collections::HashSet;

/// The executed-operation record reachable from one root, in forward
/// topological order. Backward walks it exactly once, in reverse.
pub struct Graph {
    order: Vec<Tensor>,
}

impl Graph {
    /// Collects every node reachable from `root` via parent links.
    pub(crate) fn trace(root: &Tensor) -> Graph {
        let mut order = Vec::new();
        let mut visited: HashSet<u64> = HashSet::new();
        // Iterative post-order DFS; graphs from deep models overflow the
        // call stack if done recursively.
        let mut stack: Vec<(Tensor, bool)> = vec![(root.clone(), false)];
        while let Some((node, expanded)) = stack.pop() {
            if expanded {
                order.push(node);
                continue;
            }
            if !visited.insert(node.id()) {
                continue;
            }
            let parents: Vec<Tensor> = node.op().parents().into_iter().cloned().collect();
            stack.push((node, true));
            for p in parents {
                if !visited.contains(&p.id()) {
                    stack.push((p, false));
                }
            }
        }
        Graph { order }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Seeds the root with d(root)/d(root) = 1 and propagates in reverse
    /// topological order. Intermediate gradients are consumed as they are
    /// used; leaf gradients persist and accumulate across calls.
    pub(crate) fn backprop(&self, root: &Tensor) {
        root.accumulate_grad(&[1.0]);
        for node in self.order.iter().rev() {
            if node.is_leaf() {
                continue;
            }
            let Some(g) = node.take_grad() else { continue };
            node.op().backward(&g, node.data());
        }
    }
}
