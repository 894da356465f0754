//! Finite free Boolean algebras generated by independent partitions.
//!
//! An [`AlgebraContext`] lists partition sizes `m_0, ..., m_{p-1}`. An *atom*
//! picks one cell of every partition, so there are `prod m_j` atoms and every
//! element is a set of atoms. Atoms are indexed in mixed radix with partition
//! 0 most significant, so index order is lexicographic order of assignments.
//!
//! A finite partial choice of cells is an [`FIFunc`]; its generator is the set
//! of atoms extending it. Two generators meet iff their functions agree on the
//! common domain, and `x_g <= x_h` iff `h ⊆ g`.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use fixedbitset::FixedBitSet;
use itertools::Itertools;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest atom universe that will be allocated.
pub const MAX_ATOMS: usize = 1 << 24;
/// Families up to this size are searched exhaustively by
/// [`compatible_subfamily`].
pub const EXHAUSTIVE_FAMILY_LIMIT: usize = 32;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AlgebraError {
    #[error("partition {0} has size below 2")]
    PartitionTooSmall(usize),
    #[error("atom universe of {0} atoms exceeds the guard")]
    TooManyAtoms(u128),
    #[error("assignment {partition} -> {value} is not valid in this context")]
    InvalidAssignment { partition: usize, value: usize },
    #[error("elements belong to different algebra contexts")]
    ContextMismatch,
    #[error("atom {0:?} is not an atom of this context")]
    InvalidAtom(Vec<usize>),
}

/// Partition sizes of a finite free Boolean algebra.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AlgebraContext {
    sizes: Vec<usize>,
    strides: Vec<usize>,
    atom_count: usize,
}

impl AlgebraContext {
    pub fn new(sizes: Vec<usize>) -> Result<Arc<Self>, AlgebraError> {
        if let Some(j) = sizes.iter().position(|&m| m < 2) {
            return Err(AlgebraError::PartitionTooSmall(j));
        }
        let total: u128 = sizes.iter().map(|&m| m as u128).product();
        if total > MAX_ATOMS as u128 {
            return Err(AlgebraError::TooManyAtoms(total));
        }
        let mut strides = vec![1; sizes.len()];
        for j in (0..sizes.len().saturating_sub(1)).rev() {
            strides[j] = strides[j + 1] * sizes[j + 1];
        }
        Ok(Arc::new(Self {
            sizes,
            strides,
            atom_count: total as usize,
        }))
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn partition_count(&self) -> usize {
        self.sizes.len()
    }

    pub fn atom_count(&self) -> usize {
        self.atom_count
    }

    /// Value of partition `j` at atom `index`.
    #[inline]
    pub fn coord(&self, index: usize, j: usize) -> usize {
        (index / self.strides[j]) % self.sizes[j]
    }

    pub fn atom(&self, index: usize) -> Vec<usize> {
        (0..self.sizes.len())
            .map(|j| self.coord(index, j))
            .collect()
    }

    pub fn atom_index(&self, atom: &[usize]) -> Result<usize, AlgebraError> {
        if atom.len() != self.sizes.len() || atom.iter().zip(&self.sizes).any(|(&a, &m)| a >= m) {
            return Err(AlgebraError::InvalidAtom(atom.to_vec()));
        }
        Ok(atom.iter().zip(&self.strides).map(|(a, s)| a * s).sum())
    }

    /// Replaces the value of partition `j` in atom `index`.
    #[inline]
    pub fn with_coord(&self, index: usize, j: usize, value: usize) -> usize {
        index - self.coord(index, j) * self.strides[j] + value * self.strides[j]
    }

    fn check(&self, h: &FIFunc) -> Result<(), AlgebraError> {
        for (&partition, &value) in &h.0 {
            if partition >= self.sizes.len() || value >= self.sizes[partition] {
                return Err(AlgebraError::InvalidAssignment { partition, value });
            }
        }
        Ok(())
    }

    /// A context with extra partitions appended after the existing ones.
    pub fn extended(&self, extra: &[usize]) -> Result<Arc<Self>, AlgebraError> {
        let mut sizes = self.sizes.clone();
        sizes.extend_from_slice(extra);
        Self::new(sizes)
    }
}

/// A finite partial function from partition ids to cells.
///
/// Serializes as a JSON object with stringified partition keys, e.g.
/// `{"0":1,"3":2}`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FIFunc(pub BTreeMap<usize, usize>);

impl FIFunc {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn single(partition: usize, value: usize) -> Self {
        Self(BTreeMap::from([(partition, value)]))
    }

    pub fn get(&self, partition: usize) -> Option<usize> {
        self.0.get(&partition).copied()
    }

    pub fn domain(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Agree on the common domain.
    pub fn compatible(&self, other: &FIFunc) -> bool {
        self.0
            .iter()
            .all(|(p, v)| other.0.get(p).is_none_or(|w| w == v))
    }

    /// Union of two compatible functions.
    pub fn union(&self, other: &FIFunc) -> Option<FIFunc> {
        if !self.compatible(other) {
            return None;
        }
        let mut out = self.0.clone();
        out.extend(other.0.iter().map(|(&p, &v)| (p, v)));
        Some(FIFunc(out))
    }

    pub fn is_subset(&self, other: &FIFunc) -> bool {
        self.0.iter().all(|(p, v)| other.0.get(p) == Some(v))
    }

    pub fn extends_atom(&self, ctx: &AlgebraContext, index: usize) -> bool {
        self.0.iter().all(|(&p, &v)| ctx.coord(index, p) == v)
    }
}

impl FromIterator<(usize, usize)> for FIFunc {
    fn from_iter<I: IntoIterator<Item = (usize, usize)>>(iter: I) -> Self {
        Self(iter.into_iter().collect())
    }
}

impl fmt::Display for FIFunc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{{{}}}",
            self.0.iter().map(|(p, v)| format!("{p}->{v}")).join(",")
        )
    }
}

/// An element of the algebra, stored as its set of atoms.
#[derive(Clone)]
pub struct BAElement {
    ctx: Arc<AlgebraContext>,
    bits: FixedBitSet,
}

impl fmt::Debug for BAElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BAElement")
            .field("sizes", &self.ctx.sizes)
            .field("atoms", &self.bits.ones().collect::<Vec<_>>())
            .finish()
    }
}

impl PartialEq for BAElement {
    fn eq(&self, other: &Self) -> bool {
        self.ctx.sizes == other.ctx.sizes && self.bits == other.bits
    }
}

impl Eq for BAElement {}

impl BAElement {
    pub fn zero(ctx: &Arc<AlgebraContext>) -> Self {
        Self {
            ctx: ctx.clone(),
            bits: FixedBitSet::with_capacity(ctx.atom_count),
        }
    }

    pub fn one(ctx: &Arc<AlgebraContext>) -> Self {
        let mut bits = FixedBitSet::with_capacity(ctx.atom_count);
        bits.insert_range(..);
        Self {
            ctx: ctx.clone(),
            bits,
        }
    }

    /// The element whose atoms satisfy `pred`.
    pub fn from_predicate(ctx: &Arc<AlgebraContext>, mut pred: impl FnMut(usize) -> bool) -> Self {
        let mut out = Self::zero(ctx);
        for i in 0..ctx.atom_count {
            if pred(i) {
                out.bits.insert(i);
            }
        }
        out
    }

    pub fn from_atoms(
        ctx: &Arc<AlgebraContext>,
        atoms: impl IntoIterator<Item = usize>,
    ) -> Result<Self, AlgebraError> {
        let mut out = Self::zero(ctx);
        for i in atoms {
            if i >= ctx.atom_count {
                return Err(AlgebraError::InvalidAtom(vec![i]));
            }
            out.bits.insert(i);
        }
        Ok(out)
    }

    pub fn ctx(&self) -> &Arc<AlgebraContext> {
        &self.ctx
    }

    pub fn contains_atom(&self, index: usize) -> bool {
        self.bits.contains(index)
    }

    pub fn atoms(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits.ones()
    }

    pub fn atom_count(&self) -> usize {
        self.bits.count_ones(..)
    }

    pub fn is_zero(&self) -> bool {
        self.bits.is_clear()
    }

    pub fn is_one(&self) -> bool {
        self.bits.is_full()
    }

    fn same_ctx(&self, other: &BAElement) -> Result<(), AlgebraError> {
        if Arc::ptr_eq(&self.ctx, &other.ctx) || self.ctx.sizes == other.ctx.sizes {
            Ok(())
        } else {
            Err(AlgebraError::ContextMismatch)
        }
    }

    pub fn meet(&self, other: &BAElement) -> Result<BAElement, AlgebraError> {
        self.same_ctx(other)?;
        let mut bits = self.bits.clone();
        bits.intersect_with(&other.bits);
        Ok(Self {
            ctx: self.ctx.clone(),
            bits,
        })
    }

    pub fn join(&self, other: &BAElement) -> Result<BAElement, AlgebraError> {
        self.same_ctx(other)?;
        let mut bits = self.bits.clone();
        bits.union_with(&other.bits);
        Ok(Self {
            ctx: self.ctx.clone(),
            bits,
        })
    }

    pub fn complement(&self) -> BAElement {
        let mut bits = self.bits.clone();
        bits.toggle_range(..);
        Self {
            ctx: self.ctx.clone(),
            bits,
        }
    }

    /// `self ∖ other`.
    pub fn difference(&self, other: &BAElement) -> Result<BAElement, AlgebraError> {
        self.same_ctx(other)?;
        let mut bits = self.bits.clone();
        bits.difference_with(&other.bits);
        Ok(Self {
            ctx: self.ctx.clone(),
            bits,
        })
    }

    pub fn leq(&self, other: &BAElement) -> Result<bool, AlgebraError> {
        self.same_ctx(other)?;
        Ok(self.bits.is_subset(&other.bits))
    }

    pub fn is_disjoint(&self, other: &BAElement) -> Result<bool, AlgebraError> {
        self.same_ctx(other)?;
        Ok(self.bits.is_disjoint(&other.bits))
    }

    /// First atom of `self` outside `other`.
    pub fn first_atom_outside(&self, other: &BAElement) -> Result<Option<usize>, AlgebraError> {
        self.same_ctx(other)?;
        Ok(self.bits.ones().find(|&i| !other.bits.contains(i)))
    }

    /// Lifts the element along a context extension: membership ignores the
    /// appended partitions.
    pub fn lift_to(&self, ctx: &Arc<AlgebraContext>) -> Result<BAElement, AlgebraError> {
        let base = self.ctx.partition_count();
        if ctx.partition_count() < base || ctx.sizes[..base] != self.ctx.sizes[..] {
            return Err(AlgebraError::ContextMismatch);
        }
        let tail: usize = ctx.sizes[base..].iter().product();
        Ok(BAElement::from_predicate(ctx, |i| {
            self.bits.contains(i / tail)
        }))
    }
}

/// The element `x_h`: all atoms extending `h`.
pub fn generator(ctx: &Arc<AlgebraContext>, h: &FIFunc) -> Result<BAElement, AlgebraError> {
    ctx.check(h)?;
    Ok(BAElement::from_predicate(ctx, |i| h.extends_atom(ctx, i)))
}

pub fn meet(a: &BAElement, b: &BAElement) -> Result<BAElement, AlgebraError> {
    a.meet(b)
}

pub fn join(a: &BAElement, b: &BAElement) -> Result<BAElement, AlgebraError> {
    a.join(b)
}

pub fn complement(a: &BAElement) -> BAElement {
    a.complement()
}

pub fn leq(a: &BAElement, b: &BAElement) -> Result<bool, AlgebraError> {
    a.leq(b)
}

pub fn is_zero(a: &BAElement) -> bool {
    a.is_zero()
}

/// Writes `a` as a union of pairwise incompatible generators.
///
/// Recursively splits on the least unassigned partition on which membership
/// in `a` (inside the current cube) depends, so irrelevant partitions never
/// enter a domain.
pub fn to_fi_dnf(a: &BAElement) -> Vec<FIFunc> {
    let ctx = a.ctx.as_ref();
    let mut out = Vec::new();
    let cube: Vec<usize> = (0..ctx.atom_count).collect();
    dnf_rec(a, ctx, FIFunc::empty(), cube, &mut out);
    out
}

fn dnf_rec(
    a: &BAElement,
    ctx: &AlgebraContext,
    h: FIFunc,
    cube: Vec<usize>,
    out: &mut Vec<FIFunc>,
) {
    let inside = cube.iter().filter(|&&i| a.bits.contains(i)).count();
    if inside == 0 {
        return;
    }
    if inside == cube.len() {
        out.push(h);
        return;
    }
    let split = (0..ctx.partition_count())
        .filter(|j| h.get(*j).is_none())
        .find(|&j| {
            cube.iter()
                .any(|&i| a.bits.contains(i) != a.bits.contains(ctx.with_coord(i, j, 0)))
        })
        .expect("a mixed cube depends on some free partition");
    let mut by_value: Vec<Vec<usize>> = vec![Vec::new(); ctx.sizes[split]];
    for i in cube {
        by_value[ctx.coord(i, split)].push(i);
    }
    for (value, sub) in by_value.into_iter().enumerate() {
        let mut next = h.clone();
        next.0.insert(split, value);
        dnf_rec(a, ctx, next, sub, out);
    }
}

/// Union of the generators of `terms`.
pub fn from_fi_dnf(ctx: &Arc<AlgebraContext>, terms: &[FIFunc]) -> Result<BAElement, AlgebraError> {
    for t in terms {
        ctx.check(t)?;
    }
    Ok(BAElement::from_predicate(ctx, |i| {
        terms.iter().any(|t| t.extends_atom(ctx, i))
    }))
}

/// Finds `m` members of `family` whose union is a function, returned as
/// ascending indices into `family`.
///
/// Families of at most [`EXHAUSTIVE_FAMILY_LIMIT`] members are searched
/// exhaustively, so `None` is a proof of absence there. Larger families use a
/// greedy kernel heuristic: repeatedly keep the member compatible with the
/// most remaining candidates. Its `None` is not a proof.
pub fn compatible_subfamily(family: &[FIFunc], m: usize) -> Option<Vec<usize>> {
    if m == 0 {
        return Some(Vec::new());
    }
    if m > family.len() {
        return None;
    }
    if family.len() <= EXHAUSTIVE_FAMILY_LIMIT {
        let mut chosen = Vec::with_capacity(m);
        if clique_search(family, m, 0, &FIFunc::empty(), &mut chosen) {
            Some(chosen)
        } else {
            None
        }
    } else {
        greedy_kernel(family, m)
    }
}

fn clique_search(
    family: &[FIFunc],
    m: usize,
    start: usize,
    union: &FIFunc,
    chosen: &mut Vec<usize>,
) -> bool {
    if chosen.len() == m {
        return true;
    }
    let need = m - chosen.len();
    for i in start..family.len() {
        if family.len() - i < need {
            break;
        }
        if let Some(next) = union.union(&family[i]) {
            chosen.push(i);
            if clique_search(family, m, i + 1, &next, chosen) {
                return true;
            }
            chosen.pop();
        }
    }
    false
}

fn greedy_kernel(family: &[FIFunc], m: usize) -> Option<Vec<usize>> {
    let mut candidates: Vec<usize> = (0..family.len()).collect();
    let mut union = FIFunc::empty();
    let mut chosen = Vec::new();
    while chosen.len() < m {
        let (best, _) = candidates
            .iter()
            .filter_map(|&i| union.union(&family[i]).map(|u| (i, u)))
            .map(|(i, u)| {
                let support = candidates
                    .iter()
                    .filter(|&&j| j != i && u.compatible(&family[j]))
                    .count();
                (i, support)
            })
            .max_by_key(|&(i, support)| (support, std::cmp::Reverse(i)))?;
        union = union.union(&family[best])?;
        chosen.push(best);
        candidates.retain(|&j| j != best && union.compatible(&family[j]));
    }
    chosen.sort_unstable();
    Some(chosen)
}
