//! Uniform hypergraphs that omit a complete configuration.
//!
//! A `(k+1)`-uniform hypergraph is *legal* for `(n, k)` when no `n+1`
//! vertices have all their `(k+1)`-subsets as edges. An `n`-set with all its
//! `(k+1)`-subsets as edges is *near-forbidden*: one more vertex joined to all
//! of its `k`-subsets would complete a forbidden configuration. A positive
//! type `{R(x, v) : v ∈ V}` over `k`-sets is consistent iff `V` covers
//! `[w]^k` for no near-forbidden `w`.
//!
//! The pattern over formula indices gives each near-forbidden `w` a two-cell
//! partition `α_w`; cell 0 marks "`w` still present". The entry for an index
//! set `s` removes every atom at which some present `w` is covered by `s`.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use itertools::Itertools;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::indep_ba::{generator, to_fi_dnf, AlgebraContext, AlgebraError, BAElement, FIFunc};
use crate::patterns::{subsets_up_to, IndexSet, PatternError, PossibilityPattern, Refinement};

pub type Vertex = usize;
/// A sorted vertex set.
pub type VertexSet = Vec<Vertex>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TnkError {
    #[error("need 1 <= k < n, got n={n}, k={k}")]
    BadParameters { n: usize, k: usize },
    #[error("edge {0:?} is not a set of k+1 vertices of the graph")]
    BadEdge(Vec<usize>),
    #[error("set {0:?} is not a set of k vertices of the graph")]
    BadKSet(Vec<usize>),
    #[error("hypergraph contains a forbidden configuration {0:?}")]
    IllegalGraph(VertexSet),
    #[error("context lacks a two-cell partition {0} for a family member")]
    ContextTooSmall(usize),
    #[error("refinement does not refine the pattern or has a zero entry")]
    NotARefinement,
    #[error("control map is not expansive at {0:?}")]
    FNotExpansive(VertexSet),
    #[error("control map is undefined at {0:?}")]
    ControlNotTotal(VertexSet),
    #[error(transparent)]
    Pattern(#[from] PatternError),
    #[error(transparent)]
    Algebra(#[from] AlgebraError),
}

/// A `(k+1)`-uniform hypergraph on vertices `0..vertices`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "HypergraphJson", into = "HypergraphJson")]
pub struct Hypergraph {
    n: usize,
    k: usize,
    vertices: usize,
    edges: BTreeSet<VertexSet>,
}

#[derive(Serialize, Deserialize)]
struct HypergraphJson {
    n: usize,
    k: usize,
    vertices: usize,
    #[serde(default)]
    edges: Vec<Vec<usize>>,
}

impl TryFrom<HypergraphJson> for Hypergraph {
    type Error = TnkError;
    fn try_from(j: HypergraphJson) -> Result<Self, TnkError> {
        Hypergraph::new(j.n, j.k, j.vertices, j.edges)
    }
}

impl From<Hypergraph> for HypergraphJson {
    fn from(h: Hypergraph) -> Self {
        HypergraphJson {
            n: h.n,
            k: h.k,
            vertices: h.vertices,
            edges: h.edges.into_iter().collect(),
        }
    }
}

impl Hypergraph {
    pub fn new(
        n: usize,
        k: usize,
        vertices: usize,
        edges: impl IntoIterator<Item = Vec<usize>>,
    ) -> Result<Self, TnkError> {
        if k == 0 || n <= k {
            return Err(TnkError::BadParameters { n, k });
        }
        let mut set = BTreeSet::new();
        for mut e in edges {
            e.sort_unstable();
            e.dedup();
            if e.len() != k + 1 || e.iter().any(|&v| v >= vertices) {
                return Err(TnkError::BadEdge(e));
            }
            set.insert(e);
        }
        Ok(Self {
            n,
            k,
            vertices,
            edges: set,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices
    }

    pub fn edges(&self) -> &BTreeSet<VertexSet> {
        &self.edges
    }

    pub fn has_edge(&self, e: &[usize]) -> bool {
        self.edges.contains(e)
    }

    pub fn without_edges<'a>(&self, drop: impl IntoIterator<Item = &'a VertexSet>) -> Self {
        let mut out = self.clone();
        for e in drop {
            out.edges.remove(e);
        }
        out
    }

    /// All `k`-subsets of the vertex set, lexicographically.
    pub fn k_sets(&self) -> Vec<VertexSet> {
        (0..self.vertices).combinations(self.k).collect()
    }

    fn check_k_set(&self, v: &[usize]) -> Result<(), TnkError> {
        let sorted = v.windows(2).all(|p| p[0] < p[1]);
        if v.len() != self.k || !sorted || v.iter().any(|&x| x >= self.vertices) {
            return Err(TnkError::BadKSet(v.to_vec()));
        }
        Ok(())
    }

    /// Sets of `size` vertices all of whose `(k+1)`-subsets are edges, in
    /// lexicographic order.
    pub fn complete_sets(&self, size: usize) -> Vec<VertexSet> {
        let mut out = Vec::new();
        let mut current = Vec::new();
        self.grow(size, 0, &mut current, &mut out, false);
        out
    }

    fn first_complete_set(&self, size: usize) -> Option<VertexSet> {
        let mut out = Vec::new();
        let mut current = Vec::new();
        self.grow(size, 0, &mut current, &mut out, true);
        out.pop()
    }

    fn grow(
        &self,
        size: usize,
        start: usize,
        current: &mut Vec<usize>,
        out: &mut Vec<VertexSet>,
        stop_at_first: bool,
    ) -> bool {
        if current.len() == size {
            out.push(current.clone());
            return stop_at_first;
        }
        for v in start..self.vertices {
            if self.vertices - v < size - current.len() {
                break;
            }
            // Every new (k+1)-subset contains v together with k earlier vertices.
            let closes = current.len() < self.k
                || current.iter().copied().combinations(self.k).all(|mut c| {
                    c.push(v);
                    self.edges.contains(&c)
                });
            if closes {
                current.push(v);
                if self.grow(size, v + 1, current, out, stop_at_first) {
                    return true;
                }
                current.pop();
            }
        }
        false
    }
}

/// No `n+1` vertices with every `(k+1)`-subset an edge.
pub fn is_legal(h: &Hypergraph) -> bool {
    h.first_complete_set(h.n + 1).is_none()
}

/// The least forbidden configuration, if any.
pub fn forbidden_witness(h: &Hypergraph) -> Option<VertexSet> {
    h.first_complete_set(h.n + 1)
}

/// Every near-forbidden `n`-set of a legal graph.
pub fn near_forbidden(h: &Hypergraph) -> Result<Vec<VertexSet>, TnkError> {
    if let Some(w) = forbidden_witness(h) {
        return Err(TnkError::IllegalGraph(w));
    }
    Ok(h.complete_sets(h.n))
}

/// Near-forbidden sets with their partition ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NearForbiddenFamily {
    pub members: Vec<VertexSet>,
    /// Partition id of each member, injective.
    pub coords: Vec<usize>,
}

impl NearForbiddenFamily {
    /// All near-forbidden sets of `h`, member `j` on partition `j`.
    pub fn of(h: &Hypergraph) -> Result<Self, TnkError> {
        let members = near_forbidden(h)?;
        let coords = (0..members.len()).collect();
        Ok(Self { members, coords })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// One two-cell partition per member.
    pub fn context(&self) -> Result<Arc<AlgebraContext>, TnkError> {
        let width = self.coords.iter().max().map_or(0, |&c| c + 1);
        Ok(AlgebraContext::new(vec![2; width])?)
    }
}

/// Whether `{R(x, v) : v ∈ V}` is consistent: no near-forbidden `w` has
/// `[w]^k ⊆ V`.
pub fn consistent_type_tnk(h: &Hypergraph, v: &[VertexSet]) -> Result<bool, TnkError> {
    for s in v {
        h.check_k_set(s)?;
    }
    let cover: BTreeSet<&VertexSet> = v.iter().collect();
    Ok(!near_forbidden(h)?.iter().any(|w| {
        w.iter()
            .copied()
            .combinations(h.k)
            .all(|c| cover.contains(&c))
    }))
}

/// `h` plus a fresh vertex `x` (numbered `vertex_count`) with an edge
/// `v ∪ {x}` for every `v ∈ V`.
pub fn with_apex(h: &Hypergraph, v: &[VertexSet]) -> Result<Hypergraph, TnkError> {
    let x = h.vertices;
    let mut edges: Vec<VertexSet> = h.edges.iter().cloned().collect();
    for s in v {
        h.check_k_set(s)?;
        let mut e = s.clone();
        e.push(x);
        edges.push(e);
    }
    Hypergraph::new(h.n, h.k, h.vertices + 1, edges)
}

/// A random legal graph: each `(k+1)`-set is an edge with probability
/// `density`, then a random edge of each forbidden configuration is removed
/// until none remains.
pub fn random_legal_hypergraph(
    n: usize,
    k: usize,
    vertices: usize,
    density: f64,
    seed: u64,
) -> Result<Hypergraph, TnkError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let density = density.clamp(0.0, 1.0);
    let edges: Vec<VertexSet> = (0..vertices)
        .combinations(k + 1)
        .filter(|_| rng.gen_bool(density))
        .collect();
    let mut h = Hypergraph::new(n, k, vertices, edges)?;
    while let Some(bad) = forbidden_witness(&h) {
        let inside: Vec<VertexSet> = bad.iter().copied().combinations(k + 1).collect();
        let victim = inside.choose(&mut rng).expect("configuration has edges");
        h.edges.remove(victim);
    }
    Ok(h)
}

/// The pattern over formula indices together with its bookkeeping.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TnkPattern {
    /// Formula index `β` stands for `R(x, formulas[β])`.
    pub formulas: Vec<VertexSet>,
    pub family: NearForbiddenFamily,
    pub pattern: PossibilityPattern,
}

impl TnkPattern {
    /// Formula indices covering `[w]^k`, or `None` if some `k`-subset of `w`
    /// is not listed.
    pub fn cover_of(&self, w: &[usize], k: usize) -> Option<IndexSet> {
        let pos: BTreeMap<&VertexSet, usize> = self
            .formulas
            .iter()
            .enumerate()
            .map(|(b, v)| (v, b))
            .collect();
        w.iter()
            .copied()
            .combinations(k)
            .map(|c| pos.get(&c).copied())
            .collect::<Option<IndexSet>>()
            .map(|mut s| {
                s.sort_unstable();
                s
            })
    }
}

/// Builds `b_s = 1 − ⋃{x_{α_w ↦ 0} : w ∈ P, [w]^k ⊆ {v_β : β ∈ s}}` for all
/// `s` with `|s| <= cap`, with the all-ones atom distinguished.
///
/// `formulas` defaults to every `k`-set and `cap` to `C(n, k)`, the least
/// size at which an entry can differ from `1`.
pub fn build_tnk_pattern(
    h: &Hypergraph,
    family: &NearForbiddenFamily,
    ctx: &Arc<AlgebraContext>,
    formulas: Option<Vec<VertexSet>>,
    cap: Option<usize>,
) -> Result<TnkPattern, TnkError> {
    if family.coords.len() != family.members.len() {
        return Err(TnkError::ContextTooSmall(family.members.len()));
    }
    for &c in &family.coords {
        if ctx.sizes().get(c) != Some(&2) {
            return Err(TnkError::ContextTooSmall(c));
        }
    }
    let formulas = formulas.unwrap_or_else(|| h.k_sets());
    for v in &formulas {
        h.check_k_set(v)?;
    }
    if formulas.iter().duplicates().next().is_some() {
        return Err(TnkError::BadKSet(
            formulas.iter().duplicates().next().unwrap().clone(),
        ));
    }
    let cap = cap.unwrap_or_else(|| binomial(h.n, h.k));
    let pos: BTreeMap<&VertexSet, usize> =
        formulas.iter().enumerate().map(|(b, v)| (v, b)).collect();
    let covers: Vec<Option<BTreeSet<usize>>> = family
        .members
        .iter()
        .map(|w| {
            w.iter()
                .copied()
                .combinations(h.k)
                .map(|c| pos.get(&c).copied())
                .collect()
        })
        .collect();
    let present: Vec<BAElement> = family
        .coords
        .iter()
        .map(|&c| generator(ctx, &FIFunc::single(c, 0)))
        .collect::<Result<_, _>>()?;
    let mut entries = Vec::new();
    for s in subsets_up_to(formulas.len(), cap) {
        let chosen: BTreeSet<usize> = s.iter().copied().collect();
        let mut b = BAElement::one(ctx);
        for (cover, x) in covers.iter().zip(&present) {
            if cover.as_ref().is_some_and(|c| c.is_subset(&chosen)) {
                b = b.difference(x)?;
            }
        }
        entries.push((s, b));
    }
    let all_ones = ctx.atom_index(&vec![1; ctx.partition_count()])?;
    let pattern = PossibilityPattern::new(ctx.clone(), formulas.len(), entries, all_ones)?;
    Ok(TnkPattern {
        formulas,
        family: family.clone(),
        pattern,
    })
}

pub fn binomial(n: usize, k: usize) -> usize {
    (0..k).fold(1usize, |acc, i| acc * (n - i) / (i + 1))
}

/// The graph an atom describes: every edge inside an absent member (cell
/// nonzero) is removed unless it also lies inside a present one.
pub fn modified_graph(
    h: &Hypergraph,
    family: &NearForbiddenFamily,
    ctx: &AlgebraContext,
    atom: usize,
) -> Hypergraph {
    let present: Vec<bool> = family
        .coords
        .iter()
        .map(|&c| ctx.coord(atom, c) == 0)
        .collect();
    let kept: BTreeSet<VertexSet> = family
        .members
        .iter()
        .zip(&present)
        .filter(|(_, &p)| p)
        .flat_map(|(w, _)| w.iter().copied().combinations(h.k + 1))
        .collect();
    let dropped: BTreeSet<VertexSet> = family
        .members
        .iter()
        .zip(&present)
        .filter(|(_, &p)| !p)
        .flat_map(|(w, _)| w.iter().copied().combinations(h.k + 1))
        .filter(|e| !kept.contains(e))
        .collect();
    h.without_edges(&dropped)
}

/// An atom and stored index set at which the pattern and the modified graph
/// disagree.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mismatch {
    pub atom: Vec<usize>,
    pub subset: IndexSet,
}

/// Checks, for every atom and every stored `s`, that the atom lies in `b_s`
/// iff the type `{R(x, v_β) : β ∈ s}` is consistent in the modified graph.
pub fn verify_pattern_semantics(
    h: &Hypergraph,
    p: &TnkPattern,
) -> Result<Result<(), Mismatch>, TnkError> {
    let ctx = p.pattern.ctx();
    for atom in 0..ctx.atom_count() {
        let g = modified_graph(h, &p.family, ctx, atom);
        let nf = near_forbidden(&g)?;
        let covers: Vec<Option<IndexSet>> = nf.iter().map(|w| p.cover_of(w, h.k)).collect();
        for (s, b) in p.pattern.entries() {
            let consistent = !covers
                .iter()
                .flatten()
                .any(|c| c.iter().all(|i| s.binary_search(i).is_ok()));
            if b.contains_atom(atom) != consistent {
                return Ok(Err(Mismatch {
                    atom: ctx.atom(atom),
                    subset: s.clone(),
                }));
            }
        }
    }
    Ok(Ok(()))
}

/// `S_β`: the partitions appearing in the FI-normal form of each `b'_β`.
pub fn supports(r: &Refinement) -> Vec<BTreeSet<usize>> {
    r.per_index()
        .iter()
        .map(|b| {
            to_fi_dnf(b)
                .iter()
                .flat_map(|t| t.domain().collect::<Vec<_>>())
                .collect()
        })
        .collect()
}

fn check_refinement(p: &TnkPattern, r: &Refinement) -> Result<(), TnkError> {
    if r.ctx().sizes() != p.pattern.ctx().sizes() || r.n() != p.pattern.n() {
        return Err(TnkError::NotARefinement);
    }
    for (s, b) in p.pattern.entries() {
        let induced = r.induced(s)?;
        if induced.is_zero() || !induced.leq(b)? {
            return Err(TnkError::NotARefinement);
        }
    }
    Ok(())
}

/// Whether every member `w` has its partition in `S_β` for some formula
/// index `β` with `v_β ⊆ w`.
pub fn support_trace_check(p: &TnkPattern, r: &Refinement) -> Result<bool, TnkError> {
    check_refinement(p, r)?;
    let supp = supports(r);
    let k = p.formulas.first().map_or(0, Vec::len);
    Ok(p.family.members.iter().zip(&p.family.coords).all(|(w, c)| {
        p.formulas
            .iter()
            .enumerate()
            .filter(|(_, v)| v.len() == k && v.iter().all(|x| w.binary_search(x).is_ok()))
            .any(|(b, _)| supp[b].contains(c))
    }))
}

/// `F(v_β) = v_β ∪ ⋃{w ∈ P : α_w ∈ S_β}` on formula indices, `F(v) = v` on
/// other `k`-sets.
pub fn control_map(
    h: &Hypergraph,
    p: &TnkPattern,
    r: &Refinement,
) -> Result<BTreeMap<VertexSet, BTreeSet<Vertex>>, TnkError> {
    check_refinement(p, r)?;
    let supp = supports(r);
    let mut out: BTreeMap<VertexSet, BTreeSet<Vertex>> = h
        .k_sets()
        .into_iter()
        .map(|v| (v.clone(), v.into_iter().collect()))
        .collect();
    for (b, v) in p.formulas.iter().enumerate() {
        let entry = out.entry(v.clone()).or_default();
        for (w, c) in p.family.members.iter().zip(&p.family.coords) {
            if supp[b].contains(c) {
                entry.extend(w.iter().copied());
            }
        }
    }
    Ok(out)
}

/// The first member `w` with `w ⊄ F(v)` for every `v ∈ [w]^k`.
pub fn free_set_escape(
    family: &NearForbiddenFamily,
    k: usize,
    control: &BTreeMap<VertexSet, BTreeSet<Vertex>>,
) -> Result<Option<VertexSet>, TnkError> {
    for (v, image) in control {
        if !v.iter().all(|x| image.contains(x)) {
            return Err(TnkError::FNotExpansive(v.clone()));
        }
    }
    for w in &family.members {
        let mut escapes = true;
        for v in w.iter().copied().combinations(k) {
            let image = control
                .get(&v)
                .ok_or_else(|| TnkError::ControlNotTotal(v.clone()))?;
            if w.iter().all(|x| image.contains(x)) {
                escapes = false;
            }
        }
        if escapes {
            return Ok(Some(w.clone()));
        }
    }
    Ok(None)
}
