//! Trees with growing splitting.
//!
//! A [`GrowthFunction`] `f` fixes how many immediate successors a node has at
//! each level: a node of level `l` has `f(l) + 1` successors, labelled
//! `0..=f(l)`. The level-`k` nodes form `T_k`; the nodes of level at most `k`
//! form `T_[k]`.
//!
//! A *k-maximal subtree* keeps the root and, at every kept node of level below
//! `k`, keeps all but exactly one of its successors. These are the subtrees of
//! `T_[k]` that are maximal subject to containing no *full splitting* (a node
//! together with all of its successors).
//!
//! A *blocking set* is a proper nonempty set of level-`k` leaves whose
//! complement contains no full splitting: any family of leaves avoiding it is
//! consistent.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use itertools::Itertools;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Largest level that enumeration operations will materialize.
pub const MAX_LEVEL_SIZE: usize = 1 << 20;
/// Largest number of maximal subtrees that will be materialized.
pub const MAX_SUBTREE_COUNT: u128 = 1 << 20;
/// Largest leaf level for which all subsets are scanned.
pub const MAX_BLOCKING_LEAVES: usize = 24;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TreeError {
    #[error("growth function must be nonempty")]
    EmptyGrowth,
    #[error(
        "growth function must be strictly increasing with f(l) >= l+1 (violated at level {0})"
    )]
    InvalidGrowth(usize),
    #[error("level {level} is out of range (table has {max} entries)")]
    LevelOutOfRange { level: usize, max: usize },
    #[error("node {0} is not of the required level")]
    MixedLevels(TreeNode),
    #[error("node {0} is not a node of the tree")]
    InvalidNode(TreeNode),
    #[error("enumeration of {what} would produce {count} items")]
    TooLarge { what: &'static str, count: u128 },
    #[error("node set is not a k-maximal subtree of depth {0}")]
    NotMaximal(usize),
    #[error("cannot parse tree node {0:?}")]
    Parse(String),
}

/// A finite table `f(0), ..., f(K_max - 1)` of a strictly increasing function
/// with `f(l) > l`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(transparent)]
pub struct GrowthFunction {
    values: Vec<u32>,
}

impl GrowthFunction {
    pub fn new(values: Vec<u32>) -> Result<Self, TreeError> {
        if values.is_empty() {
            return Err(TreeError::EmptyGrowth);
        }
        for (level, &v) in values.iter().enumerate() {
            if (v as usize) < level + 1 {
                return Err(TreeError::InvalidGrowth(level));
            }
            if level > 0 && values[level - 1] >= v {
                return Err(TreeError::InvalidGrowth(level));
            }
        }
        Ok(Self { values })
    }

    /// Number of tabulated levels.
    pub fn max_level(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[u32] {
        &self.values
    }

    /// `f(level)`.
    pub fn at(&self, level: usize) -> Result<u32, TreeError> {
        self.values
            .get(level)
            .copied()
            .ok_or(TreeError::LevelOutOfRange {
                level,
                max: self.values.len(),
            })
    }

    /// Number of immediate successors of a node of the given level.
    pub fn successor_count(&self, level: usize) -> Result<usize, TreeError> {
        Ok(self.at(level)? as usize + 1)
    }

    /// `|T_k|`.
    pub fn level_size(&self, k: usize) -> Result<u128, TreeError> {
        self.check_depth(k)?;
        Ok(self.values[..k].iter().map(|&v| v as u128 + 1).product())
    }

    /// Closed-form `|S_k| = prod_{l<k} (f(l)+1)^{n_l}` with `n_0 = 1` and
    /// `n_{l+1} = n_l * f(l)`. Saturates at `u128::MAX`.
    pub fn subtree_count(&self, k: usize) -> Result<u128, TreeError> {
        self.check_depth(k)?;
        let mut kept: u128 = 1;
        let mut total: u128 = 1;
        for &v in &self.values[..k] {
            let base = v as u128 + 1;
            for _ in 0..kept {
                total = total.saturating_mul(base);
                if total == u128::MAX {
                    return Ok(total);
                }
            }
            kept = kept.saturating_mul(v as u128);
        }
        Ok(total)
    }

    /// Leaf count of any k-maximal subtree: `n_k = prod_{l<k} f(l)`.
    pub fn subtree_leaf_count(&self, k: usize) -> Result<u128, TreeError> {
        self.check_depth(k)?;
        Ok(self.values[..k].iter().map(|&v| v as u128).product())
    }

    pub(crate) fn check_depth(&self, k: usize) -> Result<(), TreeError> {
        if k > self.values.len() {
            Err(TreeError::LevelOutOfRange {
                level: k,
                max: self.values.len(),
            })
        } else {
            Ok(())
        }
    }

    /// Whether `node` lies in `T_{lg(node)}`.
    pub fn is_valid_node(&self, node: &TreeNode) -> bool {
        node.level() <= self.values.len()
            && node
                .entries()
                .iter()
                .zip(&self.values)
                .all(|(&e, &v)| e <= v)
    }
}

impl<'de> Deserialize<'de> for GrowthFunction {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let values = Vec::<u32>::deserialize(d)?;
        GrowthFunction::new(values).map_err(serde::de::Error::custom)
    }
}

/// A finite sequence of naturals; its level is its length.
///
/// Nodes are ordered lexicographically with a proper prefix before its
/// extensions, and serialize as dot-separated entries (`""` for the root).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct TreeNode(Vec<u32>);

impl TreeNode {
    pub fn root() -> Self {
        Self(Vec::new())
    }

    pub fn new(entries: Vec<u32>) -> Self {
        Self(entries)
    }

    pub fn entries(&self) -> &[u32] {
        &self.0
    }

    pub fn level(&self) -> usize {
        self.0.len()
    }

    /// `self ⌢ <l>`.
    pub fn child(&self, l: u32) -> Self {
        let mut v = self.0.clone();
        v.push(l);
        Self(v)
    }

    /// Initial segment of length `len` (clamped to the node's level).
    pub fn truncate(&self, len: usize) -> Self {
        Self(self.0[..len.min(self.0.len())].to_vec())
    }

    pub fn parent(&self) -> Option<Self> {
        if self.0.is_empty() {
            None
        } else {
            Some(self.truncate(self.0.len() - 1))
        }
    }

    /// Whether `self` is an initial segment of `other`.
    pub fn is_prefix_of(&self, other: &TreeNode) -> bool {
        other.0.starts_with(&self.0)
    }

    /// All initial segments, root first, including `self`.
    pub fn prefixes(&self) -> impl Iterator<Item = TreeNode> + '_ {
        (0..=self.0.len()).map(move |l| self.truncate(l))
    }
}

impl fmt::Display for TreeNode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0.iter().join("."))
    }
}

impl FromStr for TreeNode {
    type Err = TreeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s.is_empty() {
            return Ok(Self::root());
        }
        s.split('.')
            .map(|p| p.parse::<u32>())
            .collect::<Result<Vec<_>, _>>()
            .map(Self)
            .map_err(|_| TreeError::Parse(s.to_string()))
    }
}

impl Serialize for TreeNode {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for TreeNode {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A member of `S_k`. Construct through [`MaxSubtree::try_new`] or the
/// enumeration; [`MaxSubtree::new_unchecked`] exists for labels read from
/// external input, which are validated by the structure checker.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MaxSubtree {
    depth: usize,
    nodes: BTreeSet<TreeNode>,
}

impl MaxSubtree {
    pub fn try_new(
        f: &GrowthFunction,
        depth: usize,
        nodes: BTreeSet<TreeNode>,
    ) -> Result<Self, TreeError> {
        if is_k_maximal(f, depth, &nodes) {
            Ok(Self { depth, nodes })
        } else {
            Err(TreeError::NotMaximal(depth))
        }
    }

    /// Depth is taken as the largest node level.
    pub fn new_unchecked(nodes: BTreeSet<TreeNode>) -> Self {
        let depth = nodes.iter().map(TreeNode::level).max().unwrap_or(0);
        Self { depth, nodes }
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn nodes(&self) -> &BTreeSet<TreeNode> {
        &self.nodes
    }

    pub fn contains(&self, node: &TreeNode) -> bool {
        self.nodes.contains(node)
    }

    /// The nodes of level `depth`.
    pub fn leaves(&self) -> BTreeSet<TreeNode> {
        leaves_of(self)
    }

    /// Restriction to levels `<= depth`; a k-maximal subtree truncates to a
    /// j-maximal one for `j <= k`.
    pub fn truncate(&self, depth: usize) -> Self {
        let depth = depth.min(self.depth);
        Self {
            depth,
            nodes: self
                .nodes
                .iter()
                .filter(|n| n.level() <= depth)
                .cloned()
                .collect(),
        }
    }
}

impl Serialize for MaxSubtree {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(self.nodes.iter())
    }
}

impl<'de> Deserialize<'de> for MaxSubtree {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let nodes = BTreeSet::<TreeNode>::deserialize(d)?;
        Ok(MaxSubtree::new_unchecked(nodes))
    }
}

/// A depth-`k` blocking set.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct BlockingSet {
    pub depth: usize,
    pub leaves: BTreeSet<TreeNode>,
}

/// `f(level) + 1`.
pub fn successor_count(f: &GrowthFunction, level: usize) -> Result<usize, TreeError> {
    f.successor_count(level)
}

/// `T_k` in lexicographic order.
pub fn enumerate_level(f: &GrowthFunction, k: usize) -> Result<Vec<TreeNode>, TreeError> {
    let size = f.level_size(k)?;
    if size > MAX_LEVEL_SIZE as u128 {
        return Err(TreeError::TooLarge {
            what: "tree level",
            count: size,
        });
    }
    Ok(f.values()[..k]
        .iter()
        .map(|&v| 0..=v)
        .multi_cartesian_product()
        .map(TreeNode)
        .pad_using(1, |_| TreeNode::root())
        .collect())
}

/// `T_[k]` in lexicographic order.
pub fn enumerate_up_to(f: &GrowthFunction, k: usize) -> Result<Vec<TreeNode>, TreeError> {
    let mut all = Vec::new();
    for j in 0..=k {
        all.extend(enumerate_level(f, j)?);
    }
    all.sort();
    Ok(all)
}

fn check_leaves<'a>(
    f: &GrowthFunction,
    k: usize,
    leaves: impl IntoIterator<Item = &'a TreeNode>,
) -> Result<(), TreeError> {
    f.check_depth(k)?;
    for leaf in leaves {
        if leaf.level() != k {
            return Err(TreeError::MixedLevels(leaf.clone()));
        }
        if !f.is_valid_node(leaf) {
            return Err(TreeError::InvalidNode(leaf.clone()));
        }
    }
    Ok(())
}

/// Finds a node of level `< k` each of whose successors has an extension in
/// `leaves`. The lexicographically least such node is returned.
pub fn has_full_splitting(
    f: &GrowthFunction,
    k: usize,
    leaves: &BTreeSet<TreeNode>,
) -> Result<Option<TreeNode>, TreeError> {
    check_leaves(f, k, leaves)?;
    Ok(full_splitting_unchecked(f, leaves))
}

/// Same as [`has_full_splitting`] on pre-validated leaves of a common level.
pub(crate) fn full_splitting_unchecked(
    f: &GrowthFunction,
    leaves: &BTreeSet<TreeNode>,
) -> Option<TreeNode> {
    let prefixes: BTreeSet<TreeNode> = leaves.iter().flat_map(|l| l.prefixes()).collect();
    prefixes
        .iter()
        .filter(|nu| leaves.iter().next().is_some_and(|l| nu.level() < l.level()))
        .find(|nu| {
            let width = f.values()[nu.level()];
            (0..=width).all(|l| prefixes.contains(&nu.child(l)))
        })
        .cloned()
}

/// Whether `nodes` is a k-maximal subtree of `T_[k]`.
///
/// For `k = 0` only the root alone qualifies. For `k > 0` the node set must be
/// nonempty, closed under initial segments, have all maximal nodes at level
/// `k`, and keep exactly `f(lg ρ)` of the `f(lg ρ)+1` successors of each kept
/// node `ρ` of level below `k`.
pub fn is_k_maximal(f: &GrowthFunction, k: usize, nodes: &BTreeSet<TreeNode>) -> bool {
    if k > f.max_level() {
        return false;
    }
    if k == 0 {
        return nodes.len() == 1 && nodes.contains(&TreeNode::root());
    }
    if !nodes.contains(&TreeNode::root()) {
        return false;
    }
    for node in nodes {
        if node.level() > k || !f.is_valid_node(node) {
            return false;
        }
        if let Some(parent) = node.parent() {
            if !nodes.contains(&parent) {
                return false;
            }
        }
        if node.level() < k {
            let width = f.values()[node.level()];
            let kept = (0..=width)
                .filter(|&l| nodes.contains(&node.child(l)))
                .count();
            if kept != width as usize {
                return false;
            }
        }
    }
    true
}

/// All of `S_k`, in lexicographic order of their sorted node lists.
pub fn enumerate_maximal_subtrees(
    f: &GrowthFunction,
    k: usize,
) -> Result<Vec<MaxSubtree>, TreeError> {
    let count = f.subtree_count(k)?;
    if count > MAX_SUBTREE_COUNT {
        return Err(TreeError::TooLarge {
            what: "maximal subtrees",
            count,
        });
    }
    let root = MaxSubtree {
        depth: 0,
        nodes: BTreeSet::from([TreeNode::root()]),
    };
    let mut layer = vec![root];
    for _ in 0..k {
        layer = layer
            .iter()
            .flat_map(|s| one_level_extensions(f, s))
            .collect();
    }
    layer.sort();
    Ok(layer)
}

/// Every member of `S_{k+1}` containing `s ∈ S_k`, in lexicographic order.
/// Each leaf of `s` independently chooses which successor to omit.
pub fn one_level_extensions(f: &GrowthFunction, s: &MaxSubtree) -> Vec<MaxSubtree> {
    let level = s.depth;
    let Some(&width) = f.values().get(level) else {
        return Vec::new();
    };
    let leaves: Vec<TreeNode> = s.leaves().into_iter().collect();
    let mut out: Vec<MaxSubtree> = leaves
        .iter()
        .map(|_| 0..=width)
        .multi_cartesian_product()
        .pad_using(1, |_| Vec::new())
        .map(|omitted| extend_with_omissions(f, s, &leaves, &omitted))
        .collect();
    out.sort();
    out
}

/// Extends `s` by one level, omitting successor `omitted[i]` below `leaves[i]`.
pub(crate) fn extend_with_omissions(
    f: &GrowthFunction,
    s: &MaxSubtree,
    leaves: &[TreeNode],
    omitted: &[u32],
) -> MaxSubtree {
    let width = f.values()[s.depth];
    let mut nodes = s.nodes.clone();
    for (leaf, &skip) in leaves.iter().zip(omitted) {
        nodes.extend((0..=width).filter(|&l| l != skip).map(|l| leaf.child(l)));
    }
    MaxSubtree {
        depth: s.depth + 1,
        nodes,
    }
}

/// Whether `s` is contained in `s'`.
pub fn subtree_extends(s: &MaxSubtree, s_prime: &MaxSubtree) -> bool {
    s.depth <= s_prime.depth && s.nodes.is_subset(&s_prime.nodes)
}

pub fn leaves_of(s: &MaxSubtree) -> BTreeSet<TreeNode> {
    s.nodes
        .iter()
        .filter(|n| n.level() == s.depth)
        .cloned()
        .collect()
}

/// Proper, nonempty, and the complement in `T_k` has no full splitting.
pub fn is_blocking(
    f: &GrowthFunction,
    k: usize,
    blocked: &BTreeSet<TreeNode>,
) -> Result<bool, TreeError> {
    check_leaves(f, k, blocked)?;
    let level = enumerate_level(f, k)?;
    if blocked.is_empty() || blocked.len() >= level.len() {
        return Ok(false);
    }
    let complement: BTreeSet<TreeNode> =
        level.into_iter().filter(|l| !blocked.contains(l)).collect();
    Ok(full_splitting_unchecked(f, &complement).is_none())
}

/// The finite reading of the direct characterization: `B` is proper and
/// nonempty, and for every `η ∈ B`, `j < k` and `l <= f(j)` some member of `B`
/// extends `η↾j ⌢ <l>`.
///
/// Kept for comparison only; at finite depth this property forces `B = T_k`,
/// so no proper set satisfies it.
pub fn dense_everywhere(
    f: &GrowthFunction,
    k: usize,
    blocked: &BTreeSet<TreeNode>,
) -> Result<bool, TreeError> {
    check_leaves(f, k, blocked)?;
    let level_size = f.level_size(k)?;
    if blocked.is_empty() || blocked.len() as u128 >= level_size {
        return Ok(false);
    }
    let prefixes: BTreeSet<TreeNode> = blocked.iter().flat_map(|l| l.prefixes()).collect();
    Ok(blocked.iter().all(|eta| {
        (0..k).all(|j| {
            let base = eta.truncate(j);
            (0..=f.values()[j]).all(|l| prefixes.contains(&base.child(l)))
        })
    }))
}

/// Bitmask bookkeeping over the leaves of `T_k` for fast subset scans.
struct LeafMasks {
    /// For each internal node, the leaf masks below each of its successors.
    splittings: Vec<Vec<u32>>,
}

impl LeafMasks {
    fn new(f: &GrowthFunction, level: &[TreeNode], k: usize) -> Result<Self, TreeError> {
        let mut splittings = Vec::new();
        for j in 0..k {
            for nu in enumerate_level(f, j)? {
                let masks = (0..=f.values()[j])
                    .map(|l| {
                        let child = nu.child(l);
                        level
                            .iter()
                            .enumerate()
                            .filter(|(_, leaf)| child.is_prefix_of(leaf))
                            .fold(0u32, |m, (i, _)| m | (1 << i))
                    })
                    .collect();
                splittings.push(masks);
            }
        }
        Ok(Self { splittings })
    }

    fn has_full_splitting(&self, set: u32) -> bool {
        self.splittings
            .iter()
            .any(|masks| masks.iter().all(|&m| m & set != 0))
    }
}

/// All depth-`k` blocking sets, in lexicographic order of their sorted leaf
/// lists. Refuses levels with more than [`MAX_BLOCKING_LEAVES`] leaves.
pub fn enumerate_blocking(f: &GrowthFunction, k: usize) -> Result<Vec<BlockingSet>, TreeError> {
    let size = f.level_size(k)?;
    if size > MAX_BLOCKING_LEAVES as u128 {
        return Err(TreeError::TooLarge {
            what: "blocking-set scan",
            count: 1u128 << size.min(127),
        });
    }
    let level = enumerate_level(f, k)?;
    let masks = LeafMasks::new(f, &level, k)?;
    let full: u32 = if level.len() == 32 {
        u32::MAX
    } else {
        (1u32 << level.len()) - 1
    };
    let mut out: Vec<BlockingSet> = (1..full)
        .filter(|&blocked| !masks.has_full_splitting(full & !blocked))
        .map(|blocked| BlockingSet {
            depth: k,
            leaves: level
                .iter()
                .enumerate()
                .filter(|(i, _)| blocked & (1 << i) != 0)
                .map(|(_, l)| l.clone())
                .collect(),
        })
        .collect();
    out.sort();
    Ok(out)
}

/// A maximal subtree whose leaves cover the complement of `blocked`, built top
/// down by omitting, at every kept node, the least successor whose cone misses
/// the complement. Returns `None` exactly when `blocked` is not blocking.
pub fn blocking_complement_subtree(
    f: &GrowthFunction,
    k: usize,
    blocked: &BTreeSet<TreeNode>,
) -> Option<MaxSubtree> {
    if !is_blocking(f, k, blocked).ok()? {
        return None;
    }
    let complement: BTreeSet<TreeNode> = enumerate_level(f, k)
        .ok()?
        .into_iter()
        .filter(|l| !blocked.contains(l))
        .collect();
    let covered: BTreeSet<TreeNode> = complement.iter().flat_map(|l| l.prefixes()).collect();
    let mut nodes = BTreeSet::from([TreeNode::root()]);
    let mut frontier = vec![TreeNode::root()];
    for j in 0..k {
        let width = f.values()[j];
        let mut next = Vec::new();
        for nu in &frontier {
            let skip = (0..=width).find(|&l| !covered.contains(&nu.child(l)))?;
            for l in (0..=width).filter(|&l| l != skip) {
                next.push(nu.child(l));
            }
        }
        nodes.extend(next.iter().cloned());
        frontier = next;
    }
    Some(MaxSubtree { depth: k, nodes })
}
