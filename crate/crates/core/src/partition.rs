//! Hypercube partitions of `[0,1]^d`.
//!
//! A [`BinId`] names one cell of the regular grid with `side` cells per axis;
//! coordinates are 1-based. Cells are half-open `[lo, hi)` except on the top
//! face, where they are closed, so every point of the cube has exactly one
//! cell. Dyadic cells have `side = 2^depth`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BinId {
    /// Cells per axis (`M`, or `2^k` for a depth-`k` dyadic cell).
    pub side: u64,
    /// 1-based cell coordinates, each in `1..=side`.
    pub coords: Vec<u64>,
}

impl BinId {
    pub fn root(d: usize) -> Self {
        Self {
            side: 1,
            coords: vec![1; d],
        }
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    /// Depth `k` when `side = 2^k`.
    pub fn depth(&self) -> Option<u32> {
        self.side
            .is_power_of_two()
            .then(|| self.side.trailing_zeros())
    }

    /// Side length `1 / side`.
    pub fn width<F: Scalar>(&self) -> F {
        F::one() / F::of(self.side as f64)
    }

    pub fn volume<F: Scalar>(&self) -> F {
        self.width::<F>().powi(self.dim() as i32)
    }

    pub fn lower<F: Scalar>(&self) -> Vec<F> {
        let s = F::of(self.side as f64);
        self.coords.iter().map(|&c| F::of((c - 1) as f64) / s).collect()
    }

    pub fn upper<F: Scalar>(&self) -> Vec<F> {
        let s = F::of(self.side as f64);
        self.coords.iter().map(|&c| F::of(c as f64) / s).collect()
    }

    /// Membership under the half-open/top-closed convention.
    pub fn contains<F: Scalar>(&self, x: &[F]) -> bool {
        x.len() == self.dim() && bin_of(x, self.side) == *self
    }

    /// The `2^d` cells of the grid with twice the resolution tiling this one,
    /// ordered so that bit `l` of the child index selects the upper half on
    /// axis `l`.
    pub fn burst(&self) -> Vec<BinId> {
        let d = self.dim();
        (0..1usize << d)
            .map(|mask| BinId {
                side: self.side * 2,
                coords: self
                    .coords
                    .iter()
                    .enumerate()
                    .map(|(l, &c)| 2 * (c - 1) + 1 + ((mask >> l) & 1) as u64)
                    .collect(),
            })
            .collect()
    }
}

#[inline]
fn cell_coord<F: Scalar>(x: F, side: u64) -> u64 {
    let scaled = (x * F::of(side as f64)).floor();
    let c = if scaled < F::zero() {
        0
    } else {
        scaled.to_u64().unwrap_or(u64::MAX)
    };
    c.saturating_add(1).min(side)
}

/// Cell of the regular `M`-partition containing `x`:
/// `coords_l = min(M, floor(x_l M) + 1)`.
pub fn bin_of<F: Scalar>(x: &[F], m: u64) -> BinId {
    assert!(m >= 1, "a regular partition needs M >= 1");
    BinId {
        side: m,
        coords: x.iter().map(|&xi| cell_coord(xi, m)).collect(),
    }
}

/// Row-major linear index of `bin` within its grid.
pub fn linear_index(bin: &BinId) -> usize {
    bin.coords
        .iter()
        .fold(0usize, |acc, &c| acc * bin.side as usize + (c - 1) as usize)
}

/// Burst a dyadic bin; see [`BinId::burst`].
pub fn burst(bin: &BinId) -> Vec<BinId> {
    bin.burst()
}

/// One node of an [`AdaptiveTree`].
#[derive(Debug, Clone)]
pub struct TreeNode<P> {
    pub id: BinId,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    /// Arm set the node was born with.
    pub arms: Vec<usize>,
    /// Number of routed points while live.
    pub visits: u64,
    /// Present exactly while the node is live.
    pub payload: Option<P>,
}

impl<P> TreeNode<P> {
    pub fn is_live(&self) -> bool {
        self.payload.is_some()
    }

    pub fn depth(&self) -> u32 {
        self.id.depth().expect("tree nodes are dyadic")
    }
}

/// Dyadic tree over `[0,1]^d` whose leaves (live nodes) partition the cube.
///
/// Each live node carries a payload `P`; bursting a node retires its payload
/// and creates `2^d` live children.
#[derive(Debug, Clone)]
pub struct AdaptiveTree<P> {
    d: usize,
    max_depth: u32,
    nodes: Vec<TreeNode<P>>,
}

impl<P> AdaptiveTree<P> {
    pub fn new(d: usize, max_depth: u32, arms: Vec<usize>, payload: P) -> Result<Self> {
        if d == 0 {
            return Err(Error::invalid("tree dimension must be at least 1"));
        }
        if d >= usize::BITS as usize || u64::from(max_depth) >= 63 {
            return Err(Error::invalid("tree dimension or depth too large"));
        }
        Ok(Self {
            d,
            max_depth,
            nodes: vec![TreeNode {
                id: BinId::root(d),
                parent: None,
                children: Vec::new(),
                arms,
                visits: 0,
                payload: Some(payload),
            }],
        })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn max_depth(&self) -> u32 {
        self.max_depth
    }

    pub fn root(&self) -> usize {
        0
    }

    pub fn nodes(&self) -> &[TreeNode<P>] {
        &self.nodes
    }

    pub fn node(&self, index: usize) -> &TreeNode<P> {
        &self.nodes[index]
    }

    pub fn node_mut(&mut self, index: usize) -> &mut TreeNode<P> {
        &mut self.nodes[index]
    }

    pub fn live_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.nodes.len()).filter(|&i| self.nodes[i].is_live())
    }

    pub fn num_live(&self) -> usize {
        self.live_nodes().count()
    }

    /// The unique live node containing `x`.
    pub fn live_bin_of<F: Scalar>(&self, x: &[F]) -> usize {
        let mut at = 0;
        loop {
            let node = &self.nodes[at];
            if node.is_live() {
                return at;
            }
            let child_side = node.id.side * 2;
            let mask = node.id.coords.iter().zip(x).enumerate().fold(
                0usize,
                |mask, (l, (&c, &xi))| {
                    let bit = cell_coord(xi, child_side).saturating_sub(2 * (c - 1) + 1).min(1);
                    mask | ((bit as usize) << l)
                },
            );
            at = node.children[mask];
        }
    }

    /// Replaces live node `index` by its `2^d` children, each born with
    /// `arms` and a payload built from its id.
    pub fn burst(
        &mut self,
        index: usize,
        arms: Vec<usize>,
        mut make: impl FnMut(&BinId) -> P,
    ) -> Result<Vec<usize>> {
        let node = &self.nodes[index];
        if !node.is_live() {
            return Err(Error::NotLive);
        }
        let depth = node.depth();
        if depth >= self.max_depth {
            return Err(Error::DepthCap {
                depth,
                cap: self.max_depth,
            });
        }
        if !arms.iter().all(|a| node.arms.contains(a)) {
            return Err(Error::invalid("children must inherit a subset of the parent's arms"));
        }
        let children_ids = node.id.burst();
        self.nodes[index].payload = None;
        let first = self.nodes.len();
        for id in children_ids {
            let payload = make(&id);
            self.nodes.push(TreeNode {
                id,
                parent: Some(index),
                children: Vec::new(),
                arms: arms.clone(),
                visits: 0,
                payload: Some(payload),
            });
        }
        let children: Vec<usize> = (first..self.nodes.len()).collect();
        self.nodes[index].children.clone_from(&children);
        Ok(children)
    }

    /// Exact check that live volumes `2^{-kd}` sum to one, by carrying counts
    /// of live cells from the deepest level up to the root.
    pub fn live_volume_is_unit(&self) -> bool {
        let deepest = self
            .live_nodes()
            .map(|i| self.nodes[i].depth())
            .max()
            .unwrap_or(0) as usize;
        let mut counts = vec![0u128; deepest + 1];
        for i in self.live_nodes() {
            counts[self.nodes[i].depth() as usize] += 1;
        }
        let fanout = 1u128 << self.d;
        for k in (1..=deepest).rev() {
            if !counts[k].is_multiple_of(fanout) {
                return false;
            }
            counts[k - 1] += counts[k] / fanout;
        }
        counts[0] == 1
    }

    /// Checks structural invariants: exact volume, arm-set nesting along
    /// parent links, the depth cap and child links.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        if !self.live_volume_is_unit() {
            return Err("live volumes do not sum to one".into());
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if node.depth() > self.max_depth {
                return Err(format!("node {i} exceeds the depth cap"));
            }
            if node.is_live() != node.children.is_empty() {
                return Err(format!("node {i}: live iff leaf violated"));
            }
            if let Some(p) = node.parent {
                let parent = &self.nodes[p];
                if !parent.children.contains(&i) {
                    return Err(format!("node {i} missing from its parent's children"));
                }
                if !node.arms.iter().all(|a| parent.arms.contains(a)) {
                    return Err(format!("node {i} has arms outside its parent's set"));
                }
                if parent.id.burst()[..] != self.children_ids(p)[..] {
                    return Err(format!("children of node {p} do not tile it"));
                }
            }
        }
        Ok(())
    }

    fn children_ids(&self, index: usize) -> Vec<BinId> {
        self.nodes[index]
            .children
            .iter()
            .map(|&c| self.nodes[c].id.clone())
            .collect()
    }

    /// Serializable list of live bins. `summary` maps a live node to its
    /// completed rounds and current arm set.
    pub fn snapshot(&self, summary: impl Fn(&TreeNode<P>) -> (u64, Vec<usize>)) -> TreeSnapshot {
        TreeSnapshot {
            d: self.d,
            max_depth: self.max_depth,
            live: self
                .live_nodes()
                .map(|i| {
                    let node = &self.nodes[i];
                    let (rounds, arms) = summary(node);
                    LiveBin {
                        depth: node.depth(),
                        coords: node.id.coords.clone(),
                        arms,
                        rounds,
                        visits: node.visits,
                    }
                })
                .collect(),
        }
    }
}

/// Live bin record in a [`TreeSnapshot`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiveBin {
    pub depth: u32,
    pub coords: Vec<u64>,
    /// Active arms (at snapshot time for live bins).
    pub arms: Vec<usize>,
    pub rounds: u64,
    pub visits: u64,
}

/// Document form of a tree: `{ d, max_depth, live: [{depth, coords, arms, rounds, visits}] }`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeSnapshot {
    pub d: usize,
    pub max_depth: u32,
    pub live: Vec<LiveBin>,
}
