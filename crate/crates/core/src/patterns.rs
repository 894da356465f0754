//! Possibility patterns and multiplicative refinements over finite index
//! sets.
//!
//! A pattern assigns to each stored index set `u ⊆ [n]` an element `b_u` of a
//! finite free algebra. It must be monotone (`u ⊆ v ⟹ b_v ≤ b_u`), have
//! `b_∅ = 1`, and contain a distinguished atom `a*` in every entry; the atom
//! stands in for an ultrafilter. A refinement assigns `b'_i` to each index and
//! induces `b'_u = ⋂_{i∈u} b'_i`. It refines the pattern when `b'_u ≤ b_u` for
//! every stored `u`.
//!
//! The tree builders encode a parameter's leaf (Q side) or subtree label
//! (P side) in dedicated partitions, so every atom is a choice of labels.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use itertools::Itertools;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::indep_ba::{
    from_fi_dnf, generator, to_fi_dnf, AlgebraContext, AlgebraError, BAElement, FIFunc,
};
use crate::trees::{
    enumerate_level, enumerate_maximal_subtrees, full_splitting_unchecked, BlockingSet,
    GrowthFunction, MaxSubtree, TreeError, TreeNode,
};

/// Largest index count for which every subset is stored or audited.
pub const MAX_FULL_INDICES: usize = 16;
/// Largest product of pool sizes a refinement search will attempt.
pub const MAX_SEARCH_SPACE: u128 = 1 << 32;
/// Largest pool [`default_pool`] will build for one index.
pub const MAX_POOL: usize = 1 << 16;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PatternError {
    #[error(transparent)]
    Algebra(#[from] AlgebraError),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error("{what} of size {count} exceeds the guard")]
    TooLarge { what: &'static str, count: u128 },
    #[error("candidate for index {0} is not below its singleton entry")]
    CandidateNotBelowSingleton(usize),
    #[error("search space of {0} choices exceeds the guard")]
    SearchSpaceTooLarge(u128),
    #[error("depth admits no blocking sets")]
    NoBlockingSets,
    #[error("no leaf is shared by the required subtree labels")]
    NoCommonLeaf,
    #[error("index {index} is out of range for {n} indices")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("expected {expected} entries, found {found}")]
    WrongArity { expected: usize, found: usize },
    #[error("malformed index set {0:?}")]
    BadSubset(String),
}

/// A sorted index set.
pub type IndexSet = Vec<usize>;

/// A monotone family `b_u` with a distinguished atom.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PossibilityPattern {
    ctx: Arc<AlgebraContext>,
    n: usize,
    entries: BTreeMap<IndexSet, BAElement>,
    distinguished: usize,
}

impl PossibilityPattern {
    /// Entries are keyed by index sets, which are sorted on the way in.
    pub fn new(
        ctx: Arc<AlgebraContext>,
        n: usize,
        entries: impl IntoIterator<Item = (IndexSet, BAElement)>,
        distinguished: usize,
    ) -> Result<Self, PatternError> {
        if distinguished >= ctx.atom_count() {
            return Err(AlgebraError::InvalidAtom(vec![distinguished]).into());
        }
        let mut map = BTreeMap::new();
        for (mut u, b) in entries {
            u.sort_unstable();
            u.dedup();
            if let Some(&index) = u.iter().find(|&&i| i >= n) {
                return Err(PatternError::IndexOutOfRange { index, n });
            }
            if b.ctx().sizes() != ctx.sizes() {
                return Err(AlgebraError::ContextMismatch.into());
            }
            map.insert(u, b);
        }
        Ok(Self {
            ctx,
            n,
            entries: map,
            distinguished,
        })
    }

    pub fn ctx(&self) -> &Arc<AlgebraContext> {
        &self.ctx
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn entries(&self) -> &BTreeMap<IndexSet, BAElement> {
        &self.entries
    }

    pub fn get(&self, u: &[usize]) -> Option<&BAElement> {
        self.entries.get(u)
    }

    /// The stored entry of a singleton, or `1` if it is not stored.
    pub fn singleton(&self, i: usize) -> BAElement {
        self.entries
            .get(&vec![i])
            .cloned()
            .unwrap_or_else(|| BAElement::one(&self.ctx))
    }

    pub fn distinguished(&self) -> usize {
        self.distinguished
    }

    /// The same pattern over a context with appended partitions. The new
    /// distinguished atom extends the old one by `tail_values`.
    pub fn lift(
        &self,
        ctx: &Arc<AlgebraContext>,
        tail_values: &[usize],
    ) -> Result<Self, PatternError> {
        let mut coords = self.ctx.atom(self.distinguished);
        coords.extend_from_slice(tail_values);
        let distinguished = ctx.atom_index(&coords)?;
        let entries = self
            .entries
            .iter()
            .map(|(u, b)| Ok((u.clone(), b.lift_to(ctx)?)))
            .collect::<Result<BTreeMap<_, _>, AlgebraError>>()?;
        Ok(Self {
            ctx: ctx.clone(),
            n: self.n,
            entries,
            distinguished,
        })
    }
}

/// A choice of `b'_i` per index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Refinement {
    ctx: Arc<AlgebraContext>,
    per_index: Vec<BAElement>,
}

impl Refinement {
    pub fn new(ctx: Arc<AlgebraContext>, per_index: Vec<BAElement>) -> Result<Self, PatternError> {
        if per_index.iter().any(|b| b.ctx().sizes() != ctx.sizes()) {
            return Err(AlgebraError::ContextMismatch.into());
        }
        Ok(Self { ctx, per_index })
    }

    pub fn ctx(&self) -> &Arc<AlgebraContext> {
        &self.ctx
    }

    pub fn n(&self) -> usize {
        self.per_index.len()
    }

    pub fn per_index(&self) -> &[BAElement] {
        &self.per_index
    }

    /// `b'_u = ⋂_{i∈u} b'_i`, with `b'_∅ = 1`.
    pub fn induced(&self, u: &[usize]) -> Result<BAElement, PatternError> {
        let mut acc = BAElement::one(&self.ctx);
        for &i in u {
            let b = self.per_index.get(i).ok_or(PatternError::IndexOutOfRange {
                index: i,
                n: self.per_index.len(),
            })?;
            acc = acc.meet(b)?;
        }
        Ok(acc)
    }
}

fn is_downward_closed(entries: &BTreeMap<IndexSet, BAElement>) -> bool {
    entries.keys().all(|v| {
        (0..v.len()).all(|drop| {
            let mut u = v.clone();
            u.remove(drop);
            entries.contains_key(&u)
        })
    })
}

/// Checks `b_∅ = 1`, monotonicity over stored sets and `a* ∈ b_u`.
pub fn is_possibility_pattern(p: &PossibilityPattern) -> bool {
    if !p.entries.get(&Vec::new()).is_some_and(BAElement::is_one) {
        return false;
    }
    if !p.entries.values().all(|b| b.contains_atom(p.distinguished)) {
        return false;
    }
    let below = |u: &IndexSet, v: &IndexSet| p.entries[v].leq(&p.entries[u]).unwrap_or(false);
    if is_downward_closed(&p.entries) {
        p.entries.keys().all(|v| {
            (0..v.len()).all(|drop| {
                let mut u = v.clone();
                u.remove(drop);
                below(&u, v)
            })
        })
    } else {
        p.entries.keys().all(|v| {
            p.entries
                .keys()
                .filter(|u| u.len() < v.len() && is_subset(u, v))
                .all(|u| below(u, v))
        })
    }
}

fn is_subset(u: &[usize], v: &[usize]) -> bool {
    u.iter().all(|i| v.binary_search(i).is_ok())
}

/// Brings a pattern onto the refinement's context when the latter only
/// appends partitions.
fn align<'a>(
    r: &Refinement,
    p: &'a PossibilityPattern,
) -> Result<std::borrow::Cow<'a, PossibilityPattern>, PatternError> {
    if r.ctx.sizes() == p.ctx.sizes() {
        return Ok(std::borrow::Cow::Borrowed(p));
    }
    let base = p.ctx.partition_count();
    if r.ctx.partition_count() < base || r.ctx.sizes()[..base] != p.ctx.sizes()[..] {
        return Err(AlgebraError::ContextMismatch.into());
    }
    let tail = vec![0; r.ctx.partition_count() - base];
    Ok(std::borrow::Cow::Owned(p.lift(&r.ctx, &tail)?))
}

/// The first stored `u` (in key order) with `b'_u ≰ b_u`.
pub fn refinement_failure(
    r: &Refinement,
    p: &PossibilityPattern,
) -> Result<Option<IndexSet>, PatternError> {
    if r.n() != p.n {
        return Err(PatternError::WrongArity {
            expected: p.n,
            found: r.n(),
        });
    }
    let p = align(r, p)?;
    for (u, b) in &p.entries {
        if !r.induced(u)?.leq(b)? {
            return Ok(Some(u.clone()));
        }
    }
    Ok(None)
}

/// `b'_u ≤ b_u` for every stored `u`.
pub fn refines(r: &Refinement, p: &PossibilityPattern) -> Result<bool, PatternError> {
    Ok(refinement_failure(r, p)?.is_none())
}

/// Whether `b'_u ∩ b'_v = b'_{u∪v}` for all stored `u, v`. Holds by
/// construction; kept as an audit.
pub fn is_multiplicative_on(r: &Refinement, sets: &[IndexSet]) -> Result<bool, PatternError> {
    for u in sets {
        for v in sets {
            let union: IndexSet = u.iter().chain(v).copied().sorted().dedup().collect();
            if r.induced(u)?.meet(&r.induced(v)?)? != r.induced(&union)? {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// All subsets of `0..n` of size at most `cap`, by size then lexicographically.
pub fn subsets_up_to(n: usize, cap: usize) -> Vec<IndexSet> {
    (0..=cap.min(n))
        .flat_map(|size| (0..n).combinations(size))
        .collect()
}

/// The Q-side tree pattern: index `α` owns partitions `α·K + k` (`k < K`) of
/// size `f(k)+1`, whose values spell the leaf of parameter `α`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TfPattern {
    pub f: GrowthFunction,
    pub depth: usize,
    pub pattern: PossibilityPattern,
}

impl TfPattern {
    pub fn partition(&self, index: usize, level: usize) -> usize {
        index * self.depth + level
    }

    pub fn index_partitions(&self, index: usize) -> Vec<usize> {
        (0..self.depth).map(|k| self.partition(index, k)).collect()
    }

    /// The leaf of parameter `index` at `atom`.
    pub fn atom_leaf(&self, atom: usize, index: usize) -> TreeNode {
        let ctx = self.pattern.ctx();
        TreeNode::new(
            self.index_partitions(index)
                .into_iter()
                .map(|j| ctx.coord(atom, j) as u32)
                .collect(),
        )
    }
}

/// Builds the Q-side pattern: `b_u` holds the atoms at which the leaves of
/// the indices in `u` carry no full splitting. All subsets of `[n]` are
/// stored and `a*` is the all-zero atom.
pub fn build_tf_pattern(
    f: &GrowthFunction,
    depth: usize,
    n: usize,
) -> Result<TfPattern, PatternError> {
    f.level_size(depth)?;
    if n > MAX_FULL_INDICES {
        return Err(PatternError::TooLarge {
            what: "index count",
            count: n as u128,
        });
    }
    let sizes: Vec<usize> = (0..n)
        .flat_map(|_| f.values()[..depth].iter().map(|&v| v as usize + 1))
        .collect();
    let ctx = AlgebraContext::new(sizes)?;
    let shell = TfPattern {
        f: f.clone(),
        depth,
        pattern: PossibilityPattern::new(ctx.clone(), n, [], 0)?,
    };
    let mut entries = Vec::new();
    for u in subsets_up_to(n, n) {
        let b = BAElement::from_predicate(&ctx, |atom| {
            let leaves: BTreeSet<TreeNode> = u.iter().map(|&i| shell.atom_leaf(atom, i)).collect();
            full_splitting_unchecked(f, &leaves).is_none()
        });
        entries.push((u, b));
    }
    Ok(TfPattern {
        pattern: PossibilityPattern::new(ctx, n, entries, 0)?,
        ..shell
    })
}

/// The P-side pattern: index `i` owns partition `i`, of size `|S_K|`, whose
/// value is a position in the lexicographic enumeration of `S_K`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TfDualPattern {
    pub f: GrowthFunction,
    pub depth: usize,
    pub subtrees: Vec<MaxSubtree>,
    pub pattern: PossibilityPattern,
}

impl TfDualPattern {
    pub fn index_partitions(&self, index: usize) -> Vec<usize> {
        vec![index]
    }

    pub fn atom_subtree(&self, atom: usize, index: usize) -> &MaxSubtree {
        &self.subtrees[self.pattern.ctx().coord(atom, index)]
    }
}

/// Builds the P-side pattern: `b_u` holds the atoms at which the subtrees of
/// the indices in `u` share a leaf. Requires `depth >= 1`, since `S_0` has a
/// single member.
pub fn build_tf_dual_pattern(
    f: &GrowthFunction,
    depth: usize,
    n: usize,
) -> Result<TfDualPattern, PatternError> {
    if n > MAX_FULL_INDICES {
        return Err(PatternError::TooLarge {
            what: "index count",
            count: n as u128,
        });
    }
    let subtrees = enumerate_maximal_subtrees(f, depth)?;
    if subtrees.len() < 2 {
        return Err(PatternError::NoCommonLeaf);
    }
    let leaf_sets: Vec<BTreeSet<TreeNode>> = subtrees.iter().map(MaxSubtree::leaves).collect();
    let ctx = AlgebraContext::new(vec![subtrees.len(); n])?;
    let mut entries = Vec::new();
    for u in subsets_up_to(n, n) {
        let b = BAElement::from_predicate(&ctx, |atom| {
            let Some((first, rest)) = u.split_first() else {
                return true;
            };
            leaf_sets[ctx.coord(atom, *first)].iter().any(|leaf| {
                rest.iter()
                    .all(|&i| leaf_sets[ctx.coord(atom, i)].contains(leaf))
            })
        });
        entries.push((u, b));
    }
    Ok(TfDualPattern {
        f: f.clone(),
        depth,
        subtrees,
        pattern: PossibilityPattern::new(ctx, n, entries, 0)?,
    })
}

/// Per-index candidates for a refinement: every generator with at most
/// `max_domain` assigned partitions lying below `b_i`, ordered by domain size
/// and then lexicographically.
pub fn default_pool(
    p: &PossibilityPattern,
    index: usize,
    max_domain: usize,
) -> Result<Vec<(FIFunc, BAElement)>, PatternError> {
    let ctx = p.ctx();
    let singleton = p.singleton(index);
    let mut out = Vec::new();
    for size in 0..=max_domain.min(ctx.partition_count()) {
        for domain in (0..ctx.partition_count()).combinations(size) {
            for values in domain
                .iter()
                .map(|&j| 0..ctx.sizes()[j])
                .multi_cartesian_product()
                .pad_using(1, |_| Vec::new())
            {
                let h: FIFunc = domain.iter().copied().zip(values).collect();
                let g = generator(ctx, &h)?;
                if g.leq(&singleton)? {
                    out.push((h, g));
                    if out.len() > MAX_POOL {
                        return Err(PatternError::TooLarge {
                            what: "candidate pool",
                            count: out.len() as u128,
                        });
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Tests whether the generators of `candidates` form a refinement. Returns
/// the first stored `u` (in key order) whose induced meet leaves `b_u`, with
/// the least atom witnessing it.
pub fn collision_certificate(
    p: &PossibilityPattern,
    candidates: &[FIFunc],
) -> Result<Option<(IndexSet, usize)>, PatternError> {
    if candidates.len() != p.n {
        return Err(PatternError::WrongArity {
            expected: p.n,
            found: candidates.len(),
        });
    }
    let gens = candidates
        .iter()
        .map(|h| generator(p.ctx(), h))
        .collect::<Result<Vec<_>, _>>()?;
    for (i, g) in gens.iter().enumerate() {
        if !g.leq(&p.singleton(i))? {
            return Err(PatternError::CandidateNotBelowSingleton(i));
        }
    }
    let r = Refinement::new(p.ctx().clone(), gens)?;
    for (u, b) in &p.entries {
        if let Some(atom) = r.induced(u)?.first_atom_outside(b)? {
            return Ok(Some((u.clone(), atom)));
        }
    }
    Ok(None)
}

/// Extra acceptance conditions for a refinement search.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SearchOptions {
    /// Every stored `b'_u` must be nonzero.
    pub require_nonzero: bool,
    /// Every `b'_i` must contain the distinguished atom.
    pub require_distinguished: bool,
}

/// An accepted choice: positions into the per-index pools.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SearchHit {
    pub choice: Vec<usize>,
    pub refinement: Refinement,
}

struct SearchPlan<'a> {
    p: &'a PossibilityPattern,
    pools: &'a [Vec<BAElement>],
    opts: SearchOptions,
    /// Stored sets grouped by their largest index.
    closing: Vec<Vec<&'a IndexSet>>,
}

impl<'a> SearchPlan<'a> {
    fn new(
        p: &'a PossibilityPattern,
        pools: &'a [Vec<BAElement>],
        opts: SearchOptions,
    ) -> Result<Self, PatternError> {
        if pools.len() != p.n {
            return Err(PatternError::WrongArity {
                expected: p.n,
                found: pools.len(),
            });
        }
        let space: u128 = pools.iter().map(|x| x.len() as u128).product();
        if space > MAX_SEARCH_SPACE {
            return Err(PatternError::SearchSpaceTooLarge(space));
        }
        for pool in pools {
            for e in pool {
                if e.ctx().sizes() != p.ctx().sizes() {
                    return Err(AlgebraError::ContextMismatch.into());
                }
            }
        }
        let mut closing = vec![Vec::new(); p.n];
        for u in p.entries.keys() {
            if let Some(&last) = u.last() {
                closing[last].push(u);
            }
        }
        Ok(Self {
            p,
            pools,
            opts,
            closing,
        })
    }

    fn admissible(&self, level: usize, pos: usize) -> bool {
        !self.opts.require_distinguished
            || self.pools[level][pos].contains_atom(self.p.distinguished)
    }

    /// Whether every stored set closing at `level` is satisfied.
    fn consistent(&self, level: usize, choice: &[usize]) -> bool {
        self.closing[level].iter().all(|u| {
            let mut meet = BAElement::one(self.p.ctx());
            for &i in u.iter() {
                meet = meet
                    .meet(&self.pools[i][choice[i]])
                    .expect("contexts checked");
            }
            (!self.opts.require_nonzero || !meet.is_zero())
                && meet.leq(&self.p.entries[*u]).expect("contexts checked")
        })
    }

    fn walk(&self, choice: &mut Vec<usize>, visit: &mut dyn FnMut(&[usize]) -> bool) -> bool {
        let level = choice.len();
        if level == self.p.n {
            return visit(choice);
        }
        for pos in 0..self.pools[level].len() {
            if !self.admissible(level, pos) {
                continue;
            }
            choice.push(pos);
            if self.consistent(level, choice) && self.walk(choice, visit) {
                return true;
            }
            choice.pop();
        }
        false
    }

    fn hit(&self, choice: Vec<usize>) -> SearchHit {
        let per_index = choice
            .iter()
            .enumerate()
            .map(|(i, &pos)| self.pools[i][pos].clone())
            .collect();
        SearchHit {
            choice,
            refinement: Refinement {
                ctx: self.p.ctx().clone(),
                per_index,
            },
        }
    }
}

/// Exhaustive search for a refinement built from one pool member per index.
///
/// The first accepted choice in lexicographic order of pool positions is
/// returned, regardless of thread count.
pub fn search_multiplicative_refinement(
    p: &PossibilityPattern,
    pools: &[Vec<BAElement>],
    opts: SearchOptions,
) -> Result<Option<SearchHit>, PatternError> {
    let plan = SearchPlan::new(p, pools, opts)?;
    if p.n == 0 {
        return Ok(Some(plan.hit(Vec::new())));
    }
    let found = (0..pools[0].len()).into_par_iter().find_map_first(|pos| {
        if !plan.admissible(0, pos) {
            return None;
        }
        let mut choice = vec![pos];
        if !plan.consistent(0, &choice) {
            return None;
        }
        let mut out = None;
        plan.walk(&mut choice, &mut |c| {
            out = Some(c.to_vec());
            true
        });
        out
    });
    Ok(found.map(|c| plan.hit(c)))
}

/// Calls `visit` on every accepted choice, in lexicographic order.
pub fn for_each_refinement(
    p: &PossibilityPattern,
    pools: &[Vec<BAElement>],
    opts: SearchOptions,
    mut visit: impl FnMut(&[usize]),
) -> Result<(), PatternError> {
    let plan = SearchPlan::new(p, pools, opts)?;
    let mut choice = Vec::new();
    plan.walk(&mut choice, &mut |c| {
        visit(c);
        false
    });
    Ok(())
}

/// The generators fixing every partition owned by the indices in `u`, in
/// lexicographic order of their values. They are pairwise disjoint and cover
/// `1`; at tree patterns each one decides every `b_v` with `v ⊆ u`.
pub fn build_support(
    ctx: &AlgebraContext,
    owned: impl Fn(usize) -> Vec<usize>,
    u: &[usize],
) -> Vec<FIFunc> {
    let partitions: Vec<usize> = u.iter().flat_map(|&i| owned(i)).sorted().dedup().collect();
    partitions
        .iter()
        .map(|&j| 0..ctx.sizes()[j])
        .multi_cartesian_product()
        .pad_using(1, |_| Vec::new())
        .map(|values| partitions.iter().copied().zip(values).collect())
        .collect()
}

/// One generator per leaf of `T_K` deciding the leaf of parameter `index`.
pub fn build_leaf_support(p: &TfPattern, index: usize) -> Vec<FIFunc> {
    build_support(p.pattern.ctx(), |i| p.index_partitions(i), &[index])
}

/// One generator per member of `S_K` deciding the label of parameter `index`.
pub fn build_subtree_support(p: &TfDualPattern, index: usize) -> Vec<FIFunc> {
    build_support(p.pattern.ctx(), |i| p.index_partitions(i), &[index])
}

/// A refinement together with the pattern lifted to its context.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExtendedRefinement {
    pub pattern: PossibilityPattern,
    pub refinement: Refinement,
    /// Id of the appended partition.
    pub fresh_partition: usize,
}

/// Shared assembly: appends a partition of `cells` cells and sets
/// `b'_i = (⋃{x_h ∧ c_ε : h ∈ support(i), keep(i, h, ε)}) ∧ b_i`.
fn assemble(
    p: &PossibilityPattern,
    cells: usize,
    support: impl Fn(usize) -> Vec<FIFunc>,
    keep: impl Fn(usize, &FIFunc, usize) -> bool,
    distinguished_cell: usize,
) -> Result<ExtendedRefinement, PatternError> {
    let fresh = p.ctx().partition_count();
    let ext = p.ctx().extended(&[cells.max(2)])?;
    let lifted = p.lift(&ext, &[distinguished_cell])?;
    let mut per_index = Vec::with_capacity(p.n);
    for i in 0..p.n {
        let mut terms = Vec::new();
        for h in support(i) {
            for eps in 0..cells {
                if keep(i, &h, eps) {
                    let mut t = h.clone();
                    t.0.insert(fresh, eps);
                    terms.push(t);
                }
            }
        }
        let union = from_fi_dnf(&ext, &terms)?;
        per_index.push(union.meet(&lifted.singleton(i))?);
    }
    Ok(ExtendedRefinement {
        pattern: lifted,
        refinement: Refinement {
            ctx: ext,
            per_index,
        },
        fresh_partition: fresh,
    })
}

/// Reads the leaf fixed by a support generator of a Q-side pattern.
fn decided_leaf(p: &TfPattern, index: usize, h: &FIFunc) -> TreeNode {
    TreeNode::new(
        p.index_partitions(index)
            .into_iter()
            .map(|j| h.get(j).expect("support fixes every owned partition") as u32)
            .collect(),
    )
}

/// The Q-side refinement over a fresh partition with one cell per blocking
/// set: a support generator for index `i` survives on cell `ε` iff the leaf
/// it decides avoids the `ε`-th blocking set.
///
/// The distinguished atom is extended by the first cell whose blocking set
/// misses the all-zero leaf.
pub fn build_tf_refinement(
    p: &TfPattern,
    blocking: &[BlockingSet],
) -> Result<ExtendedRefinement, PatternError> {
    if blocking.is_empty() {
        return Err(PatternError::NoBlockingSets);
    }
    let zero = TreeNode::new(vec![0; p.depth]);
    let cell = blocking
        .iter()
        .position(|b| !b.leaves.contains(&zero))
        .unwrap_or(0);
    assemble(
        &p.pattern,
        blocking.len(),
        |i| build_leaf_support(p, i),
        |i, h, eps| !blocking[eps].leaves.contains(&decided_leaf(p, i, h)),
        cell,
    )
}

/// The P-side refinement over a fresh partition with one cell per entry of
/// `leaf_enum`: a support generator for index `i` survives on cell `ε` iff
/// the subtree it decides contains `leaf_enum[ε]`. A one-entry list gets an
/// unused second cell.
///
/// Fails with `NoCommonLeaf` when `leaf_enum` is empty or some `b'_i` comes
/// out zero while `b_i` is not.
pub fn build_tf_dual_refinement(
    p: &TfDualPattern,
    leaf_enum: &[TreeNode],
) -> Result<ExtendedRefinement, PatternError> {
    if leaf_enum.is_empty() {
        return Err(PatternError::NoCommonLeaf);
    }
    let a_star = p.pattern.distinguished();
    let cell = leaf_enum
        .iter()
        .position(|l| (0..p.pattern.n()).all(|i| p.atom_subtree(a_star, i).contains(l)))
        .unwrap_or(0);
    let out = assemble(
        &p.pattern,
        leaf_enum.len(),
        |i| build_subtree_support(p, i),
        |i, h, eps| {
            p.subtrees[h.get(i).expect("support fixes the label")].contains(&leaf_enum[eps])
        },
        cell,
    )?;
    for (i, b) in out.refinement.per_index.iter().enumerate() {
        if b.is_zero() && !out.pattern.singleton(i).is_zero() {
            return Err(PatternError::NoCommonLeaf);
        }
    }
    Ok(out)
}

/// Default leaf list for [`build_tf_dual_refinement`]: all of `T_K`.
pub fn default_leaf_enum(p: &TfDualPattern) -> Result<Vec<TreeNode>, PatternError> {
    Ok(enumerate_level(&p.f, p.depth)?)
}

/// Audits the finite shadow of the nonemptiness condition on refinements.
///
/// `pattern` and `r` live on a context whose first `old_partitions`
/// partitions carry the original pattern. For every old atom `o` and every
/// `u ⊆ [n]`, let `w` be the indices of `u` whose singleton entry contains
/// `o`. Whenever `b_w` is stored and contains `o`, the cylinder over `o` must
/// meet `⋂_{i∈u} (b'_i ∪ ¬b_i)`. Returns the first failing `(u, o)`, with `o`
/// given as its coordinates.
pub fn extension_condition_failure(
    pattern: &PossibilityPattern,
    r: &Refinement,
    old_partitions: usize,
) -> Result<Option<(IndexSet, Vec<usize>)>, PatternError> {
    let ctx = r.ctx();
    if pattern.ctx().sizes() != ctx.sizes() || old_partitions > ctx.partition_count() {
        return Err(AlgebraError::ContextMismatch.into());
    }
    if pattern.n() > MAX_FULL_INDICES {
        return Err(PatternError::TooLarge {
            what: "index count",
            count: pattern.n() as u128,
        });
    }
    let tail: usize = ctx.sizes()[old_partitions..].iter().product();
    let old_atoms = ctx.atom_count() / tail;
    let relaxed: Vec<BAElement> = (0..pattern.n())
        .map(|i| Ok(r.per_index()[i].join(&pattern.singleton(i).complement())?))
        .collect::<Result<_, PatternError>>()?;
    for u in subsets_up_to(pattern.n(), pattern.n()) {
        let mut meet = BAElement::one(ctx);
        for &i in &u {
            meet = meet.meet(&relaxed[i])?;
        }
        for o in 0..old_atoms {
            let first = o * tail;
            let w: IndexSet = u
                .iter()
                .copied()
                .filter(|&i| pattern.singleton(i).contains_atom(first))
                .collect();
            let Some(bw) = pattern.get(&w) else {
                continue;
            };
            if !bw.contains_atom(first) {
                continue;
            }
            if !(first..first + tail).any(|a| meet.contains_atom(a)) {
                let coords = ctx.atom(first)[..old_partitions].to_vec();
                return Ok(Some((u, coords)));
            }
        }
    }
    Ok(None)
}

/// Pattern JSON: `{"sizes":[..],"n":..,"distinguished":[..],"entries":{"0,1":[FIFunc..]}}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatternJson {
    pub sizes: Vec<usize>,
    pub n: usize,
    pub distinguished: Vec<usize>,
    pub entries: BTreeMap<String, Vec<FIFunc>>,
}

/// Refinement JSON: `{"sizes":[..],"entries":{"0":[FIFunc..],..}}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefinementJson {
    pub sizes: Vec<usize>,
    pub entries: BTreeMap<String, Vec<FIFunc>>,
}

pub fn subset_key(u: &[usize]) -> String {
    u.iter().join(",")
}

pub fn parse_subset_key(s: &str) -> Result<IndexSet, PatternError> {
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|x| x.trim().parse::<usize>())
        .collect::<Result<IndexSet, _>>()
        .map_err(|_| PatternError::BadSubset(s.to_string()))
}

impl PossibilityPattern {
    pub fn to_json(&self) -> PatternJson {
        PatternJson {
            sizes: self.ctx.sizes().to_vec(),
            n: self.n,
            distinguished: self.ctx.atom(self.distinguished),
            entries: self
                .entries
                .iter()
                .map(|(u, b)| (subset_key(u), to_fi_dnf(b)))
                .collect(),
        }
    }

    pub fn from_json(j: &PatternJson) -> Result<Self, PatternError> {
        let ctx = AlgebraContext::new(j.sizes.clone())?;
        let distinguished = ctx.atom_index(&j.distinguished)?;
        let entries = j
            .entries
            .iter()
            .map(|(k, dnf)| Ok((parse_subset_key(k)?, from_fi_dnf(&ctx, dnf)?)))
            .collect::<Result<Vec<_>, PatternError>>()?;
        Self::new(ctx, j.n, entries, distinguished)
    }
}

impl Refinement {
    pub fn to_json(&self) -> RefinementJson {
        RefinementJson {
            sizes: self.ctx.sizes().to_vec(),
            entries: self
                .per_index
                .iter()
                .enumerate()
                .map(|(i, b)| (i.to_string(), to_fi_dnf(b)))
                .collect(),
        }
    }

    /// Indices must be exactly `0..n`.
    pub fn from_json(j: &RefinementJson) -> Result<Self, PatternError> {
        let ctx = AlgebraContext::new(j.sizes.clone())?;
        let mut by_index = BTreeMap::new();
        for (k, dnf) in &j.entries {
            let i: usize = k
                .trim()
                .parse()
                .map_err(|_| PatternError::BadSubset(k.clone()))?;
            by_index.insert(i, from_fi_dnf(&ctx, dnf)?);
        }
        let n = by_index.len();
        if let Some((&index, _)) = by_index.iter().find(|(&i, _)| i >= n) {
            return Err(PatternError::IndexOutOfRange { index, n });
        }
        Self::new(ctx, by_index.into_values().collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trees::enumerate_blocking;

    fn f(v: &[u32]) -> GrowthFunction {
        GrowthFunction::new(v.to_vec()).unwrap()
    }

    fn h(pairs: &[(usize, usize)]) -> FIFunc {
        pairs.iter().copied().collect()
    }

    #[test]
    fn constant_pattern_is_a_pattern() {
        let ctx = AlgebraContext::new(vec![2, 2]).unwrap();
        let p = PossibilityPattern::new(
            ctx.clone(),
            2,
            subsets_up_to(2, 2)
                .into_iter()
                .map(|u| (u, BAElement::one(&ctx))),
            0,
        )
        .unwrap();
        assert!(is_possibility_pattern(&p));
        let r = Refinement::new(ctx.clone(), vec![BAElement::one(&ctx); 2]).unwrap();
        assert!(refines(&r, &p).unwrap());
    }

    #[test]
    fn non_monotone_is_rejected() {
        let ctx = AlgebraContext::new(vec![2]).unwrap();
        let half = generator(&ctx, &h(&[(0, 0)])).unwrap();
        let p = PossibilityPattern::new(
            ctx.clone(),
            2,
            [
                (vec![], BAElement::one(&ctx)),
                (vec![0], half.clone()),
                (vec![1], BAElement::one(&ctx)),
                (vec![0, 1], BAElement::one(&ctx)),
            ],
            0,
        )
        .unwrap();
        assert!(!is_possibility_pattern(&p));
    }

    #[test]
    fn tf_pattern_small_instance() {
        let p = build_tf_pattern(&f(&[1]), 1, 2).unwrap();
        assert!(is_possibility_pattern(&p.pattern));
        let b01 = p.pattern.get(&[0, 1]).unwrap();
        assert_eq!(b01.atom_count(), 2);
        assert!(b01.contains_atom(0) && b01.contains_atom(3));
        let meet = p
            .pattern
            .get(&[0])
            .unwrap()
            .meet(p.pattern.get(&[1]).unwrap())
            .unwrap();
        assert!(meet.is_one());
        assert_ne!(&meet, b01);
        let single = build_tf_pattern(&f(&[1]), 1, 1).unwrap();
        assert!(single.pattern.get(&[0]).unwrap().is_one());
    }

    #[test]
    fn collision_examples() {
        let p = build_tf_pattern(&f(&[1]), 1, 2).unwrap();
        let cert = collision_certificate(&p.pattern, &[h(&[(0, 0)]), h(&[(1, 1)])]).unwrap();
        let ctx = p.pattern.ctx();
        assert_eq!(cert, Some((vec![0, 1], ctx.atom_index(&[0, 1]).unwrap())));
        assert_eq!(
            collision_certificate(&p.pattern, &[h(&[(0, 0)]), h(&[(1, 0)])]).unwrap(),
            None
        );
        let one = build_tf_pattern(&f(&[1, 2]), 2, 1).unwrap();
        assert_eq!(
            collision_certificate(&one.pattern, &[h(&[(0, 1)])]).unwrap(),
            None
        );
    }

    #[test]
    fn search_examples() {
        let p = build_tf_pattern(&f(&[1]), 1, 2).unwrap();
        let pools: Vec<Vec<BAElement>> = (0..2)
            .map(|i| {
                default_pool(&p.pattern, i, 2)
                    .unwrap()
                    .into_iter()
                    .map(|x| x.1)
                    .collect()
            })
            .collect();
        let opts = SearchOptions {
            require_nonzero: true,
            require_distinguished: true,
        };
        let hit = search_multiplicative_refinement(&p.pattern, &pools, opts)
            .unwrap()
            .unwrap();
        assert!(refines(&hit.refinement, &p.pattern).unwrap());

        let ctx = p.pattern.ctx();
        let spread = vec![
            vec![generator(ctx, &h(&[(0, 0)])).unwrap()],
            vec![generator(ctx, &h(&[(1, 1)])).unwrap()],
        ];
        assert_eq!(
            search_multiplicative_refinement(&p.pattern, &spread, SearchOptions::default())
                .unwrap(),
            None
        );
    }

    #[test]
    fn leaf_support_sizes() {
        let p = build_tf_pattern(&f(&[1]), 1, 2).unwrap();
        assert_eq!(build_leaf_support(&p, 1), vec![h(&[(1, 0)]), h(&[(1, 1)])]);
        let p = build_tf_pattern(&f(&[1, 2]), 2, 2).unwrap();
        assert_eq!(build_leaf_support(&p, 0).len(), 6);
    }

    #[test]
    fn tf_refinement_small_instance() {
        let g = f(&[1]);
        let p = build_tf_pattern(&g, 1, 2).unwrap();
        let blocking = enumerate_blocking(&g, 1).unwrap();
        assert_eq!(blocking.len(), 2);
        let out = build_tf_refinement(&p, &blocking).unwrap();
        assert!(is_possibility_pattern(&out.pattern));
        assert!(refines(&out.refinement, &out.pattern).unwrap());
        assert!(out
            .refinement
            .per_index()
            .iter()
            .all(|b| b.contains_atom(out.pattern.distinguished())));
        let old = p.pattern.ctx().partition_count();
        assert_eq!(
            extension_condition_failure(&out.pattern, &out.refinement, old).unwrap(),
            None
        );
        let empty = build_tf_pattern(&g, 0, 1).unwrap();
        assert_eq!(
            build_tf_refinement(&empty, &[]),
            Err(PatternError::NoBlockingSets)
        );
    }

    #[test]
    fn dual_refinement_small_instance() {
        let g = f(&[1]);
        let p = build_tf_dual_pattern(&g, 1, 2).unwrap();
        assert!(is_possibility_pattern(&p.pattern));
        let leaves = default_leaf_enum(&p).unwrap();
        let out = build_tf_dual_refinement(&p, &leaves).unwrap();
        assert!(refines(&out.refinement, &out.pattern).unwrap());
        let old = p.pattern.ctx().partition_count();
        assert_eq!(
            extension_condition_failure(&out.pattern, &out.refinement, old).unwrap(),
            None
        );
        assert_eq!(
            build_tf_dual_refinement(&p, &[]),
            Err(PatternError::NoCommonLeaf)
        );
    }

    #[test]
    fn json_round_trip() {
        let p = build_tf_pattern(&f(&[1, 2]), 2, 2).unwrap();
        let j = p.pattern.to_json();
        assert_eq!(PossibilityPattern::from_json(&j).unwrap(), p.pattern);
        let r = Refinement::new(
            p.pattern.ctx().clone(),
            vec![BAElement::one(p.pattern.ctx()); 2],
        )
        .unwrap();
        assert_eq!(Refinement::from_json(&r.to_json()).unwrap(), r);
        assert_eq!(parse_subset_key("").unwrap(), Vec::<usize>::new());
        assert!(parse_subset_key("1,x").is_err());
    }
}
