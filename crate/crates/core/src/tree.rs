//! Ulam–Harris genealogy arena with breadth-first generation storage.
//!
//! Nodes are appended generation by generation, and within a generation in
//! parent order, so the children of a node are contiguous and every
//! generation occupies one index range.

use std::fmt::Write as _;
use std::ops::Range;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::estimate::KahanSum;
use crate::format::real;
use crate::{Error, Result};

static NEXT_TREE: AtomicU64 = AtomicU64::new(1);

const NONE: u32 = u32::MAX;

/// Handle to a node of one particular [`MarkedTree`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId {
    tree: u64,
    index: u32,
}

impl NodeId {
    /// Breadth-first index of the node within its tree.
    pub fn index(&self) -> usize {
        self.index as usize
    }
}

#[derive(Debug, Clone)]
pub struct MarkedTree {
    id: u64,
    parent: Vec<u32>,
    digit: Vec<u32>,
    position: Vec<f64>,
    first_child: Vec<u32>,
    child_count: Vec<u32>,
    truncated: Vec<bool>,
    xi: Option<Vec<f64>>,
    gen_starts: Vec<usize>,
    depth: usize,
}

impl PartialEq for MarkedTree {
    /// Structural equality; tree identity is ignored.
    fn eq(&self, other: &Self) -> bool {
        self.parent == other.parent
            && self.digit == other.digit
            && self.position == other.position
            && self.truncated == other.truncated
            && self.gen_starts == other.gen_starts
            && self.depth == other.depth
    }
}

impl MarkedTree {
    /// Tree with only a root at `x`.
    pub fn root_only(x: f64) -> Self {
        TreeBuilder::new(x).finish(0)
    }

    fn id_of(&self, index: usize) -> NodeId {
        NodeId {
            tree: self.id,
            index: index as u32,
        }
    }

    fn check(&self, u: NodeId) -> Result<usize> {
        if u.tree != self.id {
            return Err(Error::ForeignNode);
        }
        if u.index as usize >= self.parent.len() {
            return Err(Error::InvalidNode);
        }
        Ok(u.index as usize)
    }

    pub fn root(&self) -> NodeId {
        self.id_of(0)
    }

    pub fn len(&self) -> usize {
        self.parent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parent.is_empty()
    }

    /// Generation the tree was grown to (later generations may be empty).
    pub fn depth(&self) -> usize {
        self.depth
    }

    /// Index range of generation `n` (empty when extinct or beyond depth).
    pub fn generation_range(&self, n: usize) -> Range<usize> {
        if n >= self.gen_starts.len() {
            let l = self.len();
            return l..l;
        }
        let end = self.gen_starts.get(n + 1).copied().unwrap_or(self.len());
        self.gen_starts[n]..end
    }

    pub fn generation_size(&self, n: usize) -> usize {
        self.generation_range(n).len()
    }

    pub fn generation_nodes(&self, n: usize) -> impl Iterator<Item = NodeId> + '_ {
        self.generation_range(n).map(move |i| self.id_of(i))
    }

    pub fn generation_positions(&self, n: usize) -> &[f64] {
        &self.position[self.generation_range(n)]
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.len()).map(move |i| self.id_of(i))
    }

    pub fn node_at(&self, index: usize) -> Result<NodeId> {
        if index < self.len() {
            Ok(self.id_of(index))
        } else {
            Err(Error::InvalidNode)
        }
    }

    pub fn position(&self, u: NodeId) -> Result<f64> {
        Ok(self.position[self.check(u)?])
    }

    pub fn generation(&self, u: NodeId) -> Result<usize> {
        let i = self.check(u)?;
        Ok(self.generation_of(i))
    }

    fn generation_of(&self, i: usize) -> usize {
        self.gen_starts.partition_point(|&s| s <= i) - 1
    }

    pub fn parent(&self, u: NodeId) -> Result<Option<NodeId>> {
        let i = self.check(u)?;
        Ok(match self.parent[i] {
            NONE => None,
            p => Some(self.id_of(p as usize)),
        })
    }

    /// The `u(|u|)` digit of a node (1-based); 0 for the root.
    pub fn digit(&self, u: NodeId) -> Result<u32> {
        Ok(self.digit[self.check(u)?])
    }

    pub fn children(&self, u: NodeId) -> Result<impl Iterator<Item = NodeId> + '_> {
        let r = self.child_range(self.check(u)?);
        Ok(r.map(move |i| self.id_of(i)))
    }

    pub(crate) fn child_range(&self, i: usize) -> Range<usize> {
        let f = self.first_child[i] as usize;
        let c = self.child_count[i] as usize;
        if c == 0 {
            0..0
        } else {
            f..f + c
        }
    }

    pub fn child_positions(&self, u: NodeId) -> Result<&[f64]> {
        let r = self.child_range(self.check(u)?);
        Ok(&self.position[r])
    }

    /// Whether pruning removed any of this node's children.
    pub fn truncated(&self, u: NodeId) -> Result<bool> {
        Ok(self.truncated[self.check(u)?])
    }

    pub fn any_truncated(&self) -> bool {
        self.truncated.iter().any(|&t| t)
    }

    /// `xi` recorded at growth time (before pruning), if the tree keeps it.
    pub fn xi(&self, u: NodeId) -> Result<Option<f64>> {
        let i = self.check(u)?;
        Ok(self.xi.as_ref().map(|x| x[i]))
    }

    pub(crate) fn raw_positions(&self) -> &[f64] {
        &self.position
    }

    pub(crate) fn raw_parent(&self, i: usize) -> Option<usize> {
        match self.parent[i] {
            NONE => None,
            p => Some(p as usize),
        }
    }

    pub(crate) fn raw_xi(&self) -> Option<&[f64]> {
        self.xi.as_deref()
    }

    /// Ulam–Harris label: child digits from the root down.
    pub fn label(&self, u: NodeId) -> Result<Vec<u32>> {
        let mut i = self.check(u)?;
        let mut out = Vec::new();
        while self.parent[i] != NONE {
            out.push(self.digit[i]);
            i = self.parent[i] as usize;
        }
        out.reverse();
        Ok(out)
    }

    pub fn node_by_label(&self, label: &[u32]) -> Option<NodeId> {
        let mut i = 0usize;
        for &d in label {
            let c = self.child_count[i];
            if d == 0 || d > c {
                return None;
            }
            i = self.first_child[i] as usize + d as usize - 1;
        }
        Some(self.id_of(i))
    }

    /// Positions `V(u_0), ..., V(u)` along the ancestral line of `u`.
    pub fn path_positions(&self, u: NodeId) -> Result<Vec<f64>> {
        let mut i = self.check(u)?;
        let mut out = vec![self.position[i]];
        while self.parent[i] != NONE {
            i = self.parent[i] as usize;
            out.push(self.position[i]);
        }
        out.reverse();
        Ok(out)
    }

    /// Most recent common ancestor `u ∧ v`.
    pub fn mrca(&self, u: NodeId, v: NodeId) -> Result<NodeId> {
        let mut a = self.check(u)?;
        let mut b = self.check(v)?;
        let (mut ga, mut gb) = (self.generation_of(a), self.generation_of(b));
        while ga > gb {
            a = self.parent[a] as usize;
            ga -= 1;
        }
        while gb > ga {
            b = self.parent[b] as usize;
            gb -= 1;
        }
        while a != b {
            a = self.parent[a] as usize;
            b = self.parent[b] as usize;
        }
        Ok(self.id_of(a))
    }

    /// `W_n = sum_{|u|=n} e^{V(u)}`, compensated; 0 when extinct.
    pub fn additive_martingale(&self, n: usize) -> f64 {
        self.generation_positions(n)
            .iter()
            .map(|v| v.exp())
            .collect::<KahanSum>()
            .value()
    }

    /// `max_{|u|=n} V(u)`, or `-inf` when generation `n` is empty.
    pub fn max_position(&self, n: usize) -> f64 {
        self.generation_positions(n)
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Descendants of `u`, positions shifted by `-V(u)`.
    pub fn subtree(&self, u: NodeId) -> Result<MarkedTree> {
        let i = self.check(u)?;
        let base = self.position[i];
        let g0 = self.generation_of(i);
        let mut b = TreeBuilder::new(0.0);
        if self.xi.is_some() {
            b.record_xi();
        }
        let mut frontier = vec![(i, 0usize)];
        if let Some(x) = &self.xi {
            b.set_xi(0, x[i]);
        }
        b.set_truncated(0, self.truncated[i]);
        while !frontier.is_empty() {
            let mut next = Vec::new();
            for &(old, new) in &frontier {
                let r = self.child_range(old);
                let pos: Vec<f64> = self.position[r.clone()].iter().map(|p| p - base).collect();
                let first = b.add_children(new, &pos);
                for (k, oc) in r.enumerate() {
                    if let Some(x) = &self.xi {
                        b.set_xi(first + k, x[oc]);
                    }
                    b.set_truncated(first + k, self.truncated[oc]);
                    next.push((oc, first + k));
                }
            }
            frontier = next;
        }
        Ok(b.finish(self.depth.saturating_sub(g0)))
    }

    /// One line per node, `label<TAB>generation<TAB>position`, labels in
    /// lexicographic order; the root label is `()`.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let mut stack = vec![0usize];
        let mut label: Vec<u32> = Vec::new();
        let mut depth_of = vec![0usize];
        while let Some(i) = stack.pop() {
            let d = depth_of.pop().expect("parallel stacks");
            label.truncate(d.saturating_sub(1));
            if d > 0 {
                label.push(self.digit[i]);
            }
            let parts: Vec<String> = label.iter().map(|x| x.to_string()).collect();
            let _ = writeln!(out, "({})\t{}\t{}", parts.join(","), d, real(self.position[i]));
            for c in self.child_range(i).rev() {
                stack.push(c);
                depth_of.push(d + 1);
            }
        }
        out
    }
}

/// Single-writer breadth-first tree construction.
#[derive(Debug, Clone)]
pub struct TreeBuilder {
    tree: MarkedTree,
    last_parent: Option<usize>,
}

impl TreeBuilder {
    pub fn new(x: f64) -> Self {
        TreeBuilder {
            tree: MarkedTree {
                id: NEXT_TREE.fetch_add(1, Ordering::Relaxed),
                parent: vec![NONE],
                digit: vec![0],
                position: vec![x],
                first_child: vec![0],
                child_count: vec![0],
                truncated: vec![false],
                xi: None,
                gen_starts: vec![0],
                depth: 0,
            },
            last_parent: None,
        }
    }

    /// Keep a per-node `xi` array (NaN until set).
    pub fn record_xi(&mut self) {
        if self.tree.xi.is_none() {
            self.tree.xi = Some(vec![f64::NAN; self.tree.len()]);
        }
    }

    pub fn len(&self) -> usize {
        self.tree.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn position(&self, i: usize) -> f64 {
        self.tree.position[i]
    }

    pub fn generation_range(&self, n: usize) -> Range<usize> {
        self.tree.generation_range(n)
    }

    pub fn generation_of(&self, i: usize) -> usize {
        self.tree.generation_of(i)
    }

    /// Read access to the partially built tree.
    pub fn as_tree(&self) -> &MarkedTree {
        &self.tree
    }

    /// Declare the depth reported by [`as_tree`](Self::as_tree).
    pub fn set_depth(&mut self, depth: usize) {
        self.tree.depth = depth;
    }

    pub fn set_xi(&mut self, i: usize, xi: f64) {
        if let Some(x) = &mut self.tree.xi {
            x[i] = xi;
        }
    }

    pub fn set_truncated(&mut self, i: usize, t: bool) {
        self.tree.truncated[i] = t;
    }

    /// Append children of node `parent` at absolute `positions`; returns the
    /// index of the first new child. Parents must be visited in increasing
    /// index order, each at most once.
    pub fn add_children(&mut self, parent: usize, positions: &[f64]) -> usize {
        assert!(parent < self.tree.len(), "parent out of range");
        assert!(
            self.last_parent.is_none_or(|p| p < parent),
            "parents must be expanded in breadth-first order"
        );
        self.last_parent = Some(parent);
        let first = self.tree.len();
        if positions.is_empty() {
            return first;
        }
        let child_gen = self.tree.generation_of(parent) + 1;
        if child_gen == self.tree.gen_starts.len() {
            self.tree.gen_starts.push(first);
        }
        let t = &mut self.tree;
        t.first_child[parent] = first as u32;
        t.child_count[parent] = positions.len() as u32;
        for (k, &p) in positions.iter().enumerate() {
            t.parent.push(parent as u32);
            t.digit.push(k as u32 + 1);
            t.position.push(p);
            t.first_child.push(0);
            t.child_count.push(0);
            t.truncated.push(false);
            if let Some(x) = &mut t.xi {
                x.push(f64::NAN);
            }
        }
        first
    }

    /// Drop every node with index `>= len` (used for backtracking while
    /// enumerating); the parents of dropped nodes lose their children.
    pub fn truncate(&mut self, len: usize) {
        assert!(len >= 1);
        let t = &mut self.tree;
        if len >= t.len() {
            return;
        }
        let first_dropped_parent = t.parent[len] as usize;
        for p in first_dropped_parent..len {
            if t.first_child[p] as usize + t.child_count[p] as usize > len || t.first_child[p] as usize >= len {
                t.child_count[p] = 0;
                t.first_child[p] = 0;
            }
        }
        t.parent.truncate(len);
        t.digit.truncate(len);
        t.position.truncate(len);
        t.first_child.truncate(len);
        t.child_count.truncate(len);
        t.truncated.truncate(len);
        if let Some(x) = &mut t.xi {
            x.truncate(len);
        }
        while *t.gen_starts.last().expect("root generation") >= len {
            t.gen_starts.pop();
        }
        self.last_parent = if len > 1 {
            Some(self.tree.parent[len - 1] as usize)
        } else {
            None
        };
        // A parent that was partially expanded is never left behind: the
        // caller truncates at child-block boundaries.
    }

    /// Restart the "expanded parents" order so that `parent` may be expanded
    /// next (after a [`truncate`](Self::truncate)).
    pub fn rewind_to(&mut self, parent: usize) {
        self.last_parent = parent.checked_sub(1);
    }

    pub fn finish(mut self, depth: usize) -> MarkedTree {
        self.tree.depth = depth.max(self.tree.gen_starts.len() - 1);
        self.tree
    }

    /// Snapshot of the tree built so far.
    pub fn snapshot(&self, depth: usize) -> MarkedTree {
        let mut t = self.tree.clone();
        t.depth = depth.max(t.gen_starts.len() - 1);
        t
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Root with children at 1 and -2; the first child has three children.
    fn small() -> MarkedTree {
        let mut b = TreeBuilder::new(0.0);
        b.add_children(0, &[1.0, -2.0]);
        b.add_children(1, &[1.5, 0.5, 2.0]);
        b.finish(2)
    }

    #[test]
    fn labels_and_lookup() {
        let t = small();
        assert_eq!(t.label(t.root()).unwrap(), Vec::<u32>::new());
        let u = t.node_by_label(&[1, 2]).unwrap();
        assert_eq!(t.label(u).unwrap(), vec![1, 2]);
        assert_eq!(t.position(u).unwrap(), 0.5);
        assert_eq!(t.generation(u).unwrap(), 2);
        assert!(t.node_by_label(&[2, 1]).is_none());
    }

    #[test]
    fn mrca_cases() {
        let t = small();
        let a = t.node_by_label(&[1, 1]).unwrap();
        let b = t.node_by_label(&[1, 3]).unwrap();
        let p = t.node_by_label(&[1]).unwrap();
        assert_eq!(t.mrca(a, b).unwrap(), p);
        assert_eq!(t.mrca(p, b).unwrap(), p);
        assert_eq!(t.mrca(a, t.root()).unwrap(), t.root());
        let other = small();
        assert_eq!(t.mrca(a, other.root()), Err(Error::ForeignNode));
    }

    #[test]
    fn additive_martingale_examples() {
        assert_eq!(MarkedTree::root_only(0.0).additive_martingale(0), 1.0);
        let t = small();
        assert!((t.additive_martingale(1) - 2.853617111695658).abs() < 1e-15);
        assert_eq!(t.additive_martingale(3), 0.0);
        assert_eq!(t.max_position(3), f64::NEG_INFINITY);
        assert_eq!(t.max_position(1), 1.0);
    }

    #[test]
    fn subtree_recentres() {
        let t = small();
        let s = t.subtree(t.node_by_label(&[1]).unwrap()).unwrap();
        assert_eq!(s.len(), 4);
        assert_eq!(s.generation_positions(1), &[0.5, -0.5, 1.0]);
        let leaf = t.subtree(t.node_by_label(&[2]).unwrap()).unwrap();
        assert_eq!(leaf.len(), 1);
        assert_eq!(t.subtree(t.root()).unwrap(), t);
    }

    #[test]
    fn dump_is_lexicographic() {
        let t = small();
        let d = t.dump();
        let labels: Vec<&str> = d.lines().map(|l| l.split('\t').next().unwrap()).collect();
        assert_eq!(labels, vec!["()", "(1)", "(1,1)", "(1,2)", "(1,3)", "(2)"]);
        assert!(d.starts_with("()\t0\t0\n(1)\t1\t1\n"));
    }

    #[test]
    fn truncate_restores_earlier_state() {
        let mut b = TreeBuilder::new(0.0);
        b.add_children(0, &[1.0, -2.0]);
        let before = b.snapshot(1);
        b.add_children(1, &[3.0]);
        b.add_children(2, &[4.0, 5.0]);
        b.truncate(3);
        b.rewind_to(1);
        assert_eq!(b.snapshot(1), before);
        b.add_children(1, &[7.0]);
        let t = b.finish(2);
        assert_eq!(t.generation_positions(2), &[7.0]);
    }
}
