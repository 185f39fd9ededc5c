//! Adder-tree decomposition of a wide Boolean sum.
//!
//! A threshold node with `n` single-bit inputs is decomposed into a binary
//! tree of small adders: leaves sum three inputs each (one remainder leaf
//! may take fewer), and every internal node adds the results of its two
//! subtrees. Trees are left-packed: the left subtree is always the largest
//! perfect subtree, so remainder subtrees are strictly shallower and the
//! reverse-post-order storage bound is preserved.

use crate::error::{Error, Result};

/// Maximum fan-in directly schedulable as one tree (the PE handles up to
/// 10-bit addition; wider sums go through accumulation).
pub const MAX_TREE_INPUTS: usize = 1023;

pub const LEAF_INPUTS: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreeNode {
    pub id: usize,
    /// Leaves sit at level 0; an internal node is one above its deepest child.
    pub level: usize,
    pub children: Option<(usize, usize)>,
    /// Input indices consumed by this leaf (empty for internal nodes).
    pub leaf_inputs: Vec<usize>,
    /// Structural storage width of the node's output: level + 2.
    pub output_width: usize,
    /// Number of original inputs covered by this subtree.
    pub covered: usize,
}

impl TreeNode {
    pub fn is_leaf(&self) -> bool {
        self.children.is_none()
    }

    /// Bits actually needed to hold this node's maximum possible sum.
    pub fn value_width(&self) -> usize {
        value_width(self.covered)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdderTree {
    pub nodes: Vec<TreeNode>,
    pub root: usize,
    pub input_count: usize,
}

/// Bits needed to represent values `0..=max_value`.
pub fn value_width(max_value: usize) -> usize {
    (usize::BITS - max_value.leading_zeros()) as usize
}

/// Builds the left-packed adder tree over `n` single-bit inputs.
pub fn build_adder_tree(n: usize) -> Result<AdderTree> {
    if n == 0 || n > MAX_TREE_INPUTS {
        return Err(Error::FaninOutOfRange {
            n,
            min: 1,
            max: MAX_TREE_INPUTS,
        });
    }
    let leaf_count = n.div_ceil(LEAF_INPUTS);
    let mut nodes = Vec::with_capacity(2 * leaf_count);
    let root = build_range(&mut nodes, 0, leaf_count, n);
    Ok(AdderTree {
        nodes,
        root,
        input_count: n,
    })
}

/// Recursively builds the subtree over leaves `lo..hi`; node ids are
/// assigned in postorder, so they coincide with the RPO position.
fn build_range(nodes: &mut Vec<TreeNode>, lo: usize, hi: usize, n: usize) -> usize {
    let count = hi - lo;
    if count == 1 {
        let first_input = lo * LEAF_INPUTS;
        let inputs: Vec<usize> = (first_input..(first_input + LEAF_INPUTS).min(n)).collect();
        let covered = inputs.len();
        let id = nodes.len();
        nodes.push(TreeNode {
            id,
            level: 0,
            children: None,
            leaf_inputs: inputs,
            output_width: 2,
            covered,
        });
        return id;
    }
    // Left subtree takes the largest perfect leaf block below `count`
    // (an even split when count is itself a power of two).
    let split = if count.is_power_of_two() {
        count / 2
    } else {
        usize::pow(2, count.ilog2())
    };
    let left = build_range(nodes, lo, lo + split, n);
    let right = build_range(nodes, lo + split, hi, n);
    let level = nodes[left].level.max(nodes[right].level) + 1;
    let covered = nodes[left].covered + nodes[right].covered;
    let id = nodes.len();
    nodes.push(TreeNode {
        id,
        level,
        children: Some((left, right)),
        leaf_inputs: Vec::new(),
        output_width: level + 2,
        covered,
    });
    id
}

/// Reverse post order: both children before their parent, the entire left
/// subtree before the right subtree begins.
pub fn rpo_schedule(tree: &AdderTree) -> Vec<usize> {
    let mut order = Vec::with_capacity(tree.nodes.len());
    let mut stack = vec![(tree.root, false)];
    while let Some((id, expanded)) = stack.pop() {
        if expanded || tree.nodes[id].is_leaf() {
            order.push(id);
            continue;
        }
        let (l, r) = tree.nodes[id].children.unwrap();
        stack.push((id, true));
        stack.push((r, false));
        stack.push((l, false));
    }
    order
}

/// Closed-form bound on peak intermediate storage for an `n`-input node:
/// `(L^2 + L)/2 + 1` bits with `L = floor(log2 n)`.
pub fn storage_bound(n: usize) -> usize {
    assert!(n >= 2, "storage bound defined for n >= 2");
    let l = n.ilog2() as usize;
    (l * l + l) / 2 + 1
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_inputs_single_leaf() {
        let tree = build_adder_tree(3).unwrap();
        assert_eq!(tree.nodes.len(), 1);
        let leaf = &tree.nodes[tree.root];
        assert_eq!(leaf.leaf_inputs, vec![0, 1, 2]);
        assert_eq!(leaf.output_width, 2);
        assert_eq!(leaf.level, 0);
    }

    #[test]
    fn fanin_range_enforced() {
        assert!(build_adder_tree(0).is_err());
        assert!(build_adder_tree(1024).is_err());
        assert!(build_adder_tree(1).is_ok());
        assert!(build_adder_tree(1023).is_ok());
    }

    #[test]
    fn tree_1023_structure() {
        let tree = build_adder_tree(1023).unwrap();
        let leaves = tree.nodes.iter().filter(|n| n.is_leaf()).count();
        assert_eq!(leaves, 341);
        assert_eq!(tree.nodes[tree.root].level, 9);
        assert!(tree.nodes[tree.root].output_width >= value_width(1023));
        // Every input covered exactly once.
        let mut seen = vec![false; 1023];
        for node in tree.nodes.iter().filter(|n| n.is_leaf()) {
            for &i in &node.leaf_inputs {
                assert!(!seen[i]);
                seen[i] = true;
            }
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn rpo_labels_match_published_numbering() {
        // With 1-based labels: nodes 1 and 2 are the first two leaves and
        // node 3 their parent; node 15 is the level-3 adder over the first
        // eight leaves, i.e. it adds two 4-bit operands.
        let tree = build_adder_tree(1023).unwrap();
        let order = rpo_schedule(&tree);
        assert!(tree.nodes[order[0]].is_leaf());
        assert!(tree.nodes[order[1]].is_leaf());
        let parent = &tree.nodes[order[2]];
        assert_eq!(parent.children, Some((order[0], order[1])));
        let node15 = &tree.nodes[order[14]];
        assert_eq!(node15.level, 3);
        let (l, r) = node15.children.unwrap();
        assert_eq!(tree.nodes[l].output_width, 4);
        assert_eq!(tree.nodes[r].output_width, 4);
    }

    #[test]
    fn level_width_invariant_holds() {
        for n in [2, 5, 7, 16, 100, 288, 511, 1023] {
            let tree = build_adder_tree(n).unwrap();
            for node in &tree.nodes {
                assert_eq!(node.output_width, node.level + 2);
                assert!(node.value_width() <= node.output_width);
                if node.is_leaf() {
                    assert_eq!(node.level, 0);
                    assert!(!node.leaf_inputs.is_empty() && node.leaf_inputs.len() <= 3);
                }
            }
        }
    }

    #[test]
    fn at_most_one_short_leaf() {
        for n in 1..=200 {
            let tree = build_adder_tree(n).unwrap();
            let short = tree
                .nodes
                .iter()
                .filter(|nd| nd.is_leaf() && nd.leaf_inputs.len() < 3)
                .count();
            assert!(short <= 1, "n={n}");
        }
    }

    #[test]
    fn rpo_is_valid_postorder() {
        for n in [1, 2, 3, 6, 48, 288, 1000] {
            let tree = build_adder_tree(n).unwrap();
            let order = rpo_schedule(&tree);
            assert_eq!(order.len(), tree.nodes.len());
            let pos: std::collections::HashMap<usize, usize> =
                order.iter().enumerate().map(|(i, &id)| (id, i)).collect();
            for node in &tree.nodes {
                if let Some((l, r)) = node.children {
                    assert!(pos[&l] < pos[&node.id]);
                    assert!(pos[&r] < pos[&node.id]);
                    // Left subtree entirely before the right subtree.
                    let max_left = subtree_ids(&tree, l)
                        .into_iter()
                        .map(|id| pos[&id])
                        .max()
                        .unwrap();
                    let min_right = subtree_ids(&tree, r)
                        .into_iter()
                        .map(|id| pos[&id])
                        .min()
                        .unwrap();
                    assert!(max_left < min_right);
                }
            }
        }
    }

    fn subtree_ids(tree: &AdderTree, id: usize) -> Vec<usize> {
        let mut out = vec![id];
        if let Some((l, r)) = tree.nodes[id].children {
            out.extend(subtree_ids(tree, l));
            out.extend(subtree_ids(tree, r));
        }
        out
    }

    #[test]
    fn minimal_trees_rpo() {
        let single = build_adder_tree(2).unwrap();
        assert_eq!(rpo_schedule(&single), vec![0]);
        let three_node = build_adder_tree(6).unwrap(); // two leaves + root
        assert_eq!(three_node.nodes.len(), 3);
        let order = rpo_schedule(&three_node);
        assert!(three_node.nodes[order[0]].is_leaf());
        assert!(three_node.nodes[order[1]].is_leaf());
        assert_eq!(order[2], three_node.root);
    }

    #[test]
    fn storage_bound_values() {
        // Recurrence m_i = i+1 + m_{i-1}, m_0 = 2: m_1 = 4, and the closed
        // form at the top level.
        let m0 = 2;
        let m1 = 1 + 1 + m0;
        assert_eq!(m1, 4);
        assert_eq!(storage_bound(1023), 46); // L = 9: (81+9)/2 + 1
        assert_eq!(storage_bound(288), 37); // L = 8
        assert_eq!(storage_bound(4), 4); // L = 2
        // 1023-input node fits the 4x16-bit register file.
        assert!(storage_bound(1023) <= 64);
    }

    #[test]
    fn leaf_count_288() {
        let tree = build_adder_tree(288).unwrap();
        assert_eq!(tree.nodes.iter().filter(|n| n.is_leaf()).count(), 96);
    }
}
