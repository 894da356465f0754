//! Consistency of the two basic one-variable types over finite parameter sets.
//!
//! By quantifier elimination only the labels of the parameters matter.
//! A Q-type `{Q(x)} ∪ {R(x, a_i)}` is consistent iff the parameter leaves
//! have no full splitting. A P-type `{P(x)} ∪ {R(b_i, x)}` is consistent iff
//! the parameter subtrees share a leaf. [`witness_extension_oracle`] decides
//! the same questions by brute force over one-point extensions.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tf_structures::{check_axioms, ElemId, StructureError, TauStructure};
use crate::trees::{
    enumerate_level, enumerate_maximal_subtrees, has_full_splitting, GrowthFunction, MaxSubtree,
    TreeError, TreeNode,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TypeError {
    #[error("no level k in the table has f(k) > {0}")]
    OutOfTable(usize),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Structure(#[from] StructureError),
}

/// Least `k` with `f(k) > n`. Since `f(n) >= n + 1`, the answer is at most `n`.
pub fn kstar(f: &GrowthFunction, n: usize) -> Result<usize, TypeError> {
    f.values()
        .iter()
        .position(|&v| v as usize > n)
        .ok_or(TypeError::OutOfTable(n))
}

/// The shape of a one-variable type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Shape {
    Q,
    P,
}

/// `{Q(x)} ∪ {R(x, a_i)}` given the leaves of the `a_i`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QTypeInstance {
    pub f: GrowthFunction,
    pub k: usize,
    pub leaves: Vec<TreeNode>,
}

/// `{P(x)} ∪ {R(b_i, x)}` given the subtree labels of the `b_i`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PTypeInstance {
    pub f: GrowthFunction,
    pub k: usize,
    pub subtrees: Vec<MaxSubtree>,
}

pub fn consistent_q_type(t: &QTypeInstance) -> Result<bool, TypeError> {
    let leaves: BTreeSet<TreeNode> = t.leaves.iter().cloned().collect();
    if leaves.is_empty() {
        t.f.level_size(t.k)?;
        return Ok(true);
    }
    Ok(has_full_splitting(&t.f, t.k, &leaves)?.is_none())
}

/// The least leaf lying in every parameter subtree, if any. With no
/// parameters this is the all-zero leaf.
pub fn consistent_p_type(t: &PTypeInstance) -> Result<Option<TreeNode>, TypeError> {
    t.f.level_size(t.k)?;
    for s in &t.subtrees {
        if s.depth() != t.k || !crate::trees::is_k_maximal(&t.f, t.k, s.nodes()) {
            return Err(TreeError::NotMaximal(t.k).into());
        }
    }
    let Some((first, rest)) = t.subtrees.split_first() else {
        return Ok(Some(TreeNode::new(vec![0; t.k])));
    };
    Ok(first
        .leaves()
        .into_iter()
        .find(|leaf| rest.iter().all(|s| s.contains(leaf))))
}

/// A label for a fresh element.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Label {
    Leaf(TreeNode),
    Subtree(MaxSubtree),
}

/// Searches for a label that makes a fresh element, related to every
/// parameter, a legal one-point extension of `m`.
///
/// For shape Q the parameters must be P-elements and every member of `S_k` is
/// tried; for shape P they must be Q-elements and every leaf of `T_k` is
/// tried. Candidates are taken in lexicographic order, so the least legal
/// label is returned. Only violations involving the fresh element count.
pub fn witness_extension_oracle(
    m: &TauStructure,
    shape: Shape,
    params: &[ElemId],
) -> Result<Option<Label>, TypeError> {
    let fresh = m.max_id().map_or(0, |x| x + 1);
    for id in params {
        let ok = match shape {
            Shape::Q => m.p_elems().contains_key(id),
            Shape::P => m.q_elems().contains_key(id),
        };
        if !ok {
            return Err(if m.ids().contains(id) {
                StructureError::WrongSort(*id).into()
            } else {
                StructureError::UnknownId(*id).into()
            });
        }
    }
    let legal = |ext: &TauStructure| !check_axioms(ext).iter().any(|v| v.involves(fresh));
    match shape {
        Shape::Q => {
            for s in enumerate_maximal_subtrees(m.f(), m.level())? {
                let mut ext = m.clone();
                ext.insert_q(fresh, s.clone())?;
                for &p in params {
                    ext.insert_edge(fresh, p);
                }
                if legal(&ext) {
                    return Ok(Some(Label::Subtree(s)));
                }
            }
        }
        Shape::P => {
            for leaf in enumerate_level(m.f(), m.level())? {
                let mut ext = m.clone();
                ext.insert_p(fresh, leaf.clone())?;
                for &q in params {
                    ext.insert_edge(q, fresh);
                }
                if legal(&ext) {
                    return Ok(Some(Label::Leaf(leaf)));
                }
            }
        }
    }
    Ok(None)
}

/// A structure realizing the parameters of `t`: one P-element per listed
/// leaf, ids `0..`.
pub fn realize_q_params(t: &QTypeInstance) -> Result<TauStructure, TypeError> {
    Ok(TauStructure::new(
        t.f.clone(),
        t.k,
        t.leaves
            .iter()
            .cloned()
            .enumerate()
            .map(|(i, l)| (i as ElemId, l)),
        [],
        [],
    )?)
}

/// A structure realizing the parameters of `t`: one Q-element per listed
/// subtree, ids `0..`.
pub fn realize_p_params(t: &PTypeInstance) -> Result<TauStructure, TypeError> {
    Ok(TauStructure::new(
        t.f.clone(),
        t.k,
        [],
        t.subtrees
            .iter()
            .cloned()
            .enumerate()
            .map(|(i, s)| (i as ElemId, s)),
        [],
    )?)
}
