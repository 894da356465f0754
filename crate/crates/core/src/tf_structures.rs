//! Finite models of the universal theory `T_{0,f,k}`.
//!
//! A structure has two sorts. P-elements carry a leaf of `T_k`; Q-elements
//! carry a k-maximal subtree. Labels are total, so every unary predicate of
//! the level-k vocabulary is determined by them. `R` relates Q-elements to
//! P-elements, and an edge `(q, p)` is legal only when `leaf(p) ∈ s(q)`.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::trees::{
    self, full_splitting_unchecked, GrowthFunction, MaxSubtree, TreeError, TreeNode,
};

pub type ElemId = u64;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StructureError {
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error("element {0} is not in the structure")]
    UnknownId(ElemId),
    #[error("element {0} has the wrong sort for this position")]
    WrongSort(ElemId),
    #[error("element id {0} is used twice within one sort")]
    DuplicateId(ElemId),
    #[error("structures differ in growth function or level")]
    LevelMismatch,
    #[error("shared part disagrees: {0}")]
    SharedPartMismatch(String),
    #[error("no lift to level {0} was found")]
    NoLiftFound(usize),
}

/// A finite `T_{0,f,k}` candidate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TauStructure {
    f: GrowthFunction,
    level: usize,
    p: BTreeMap<ElemId, TreeNode>,
    q: BTreeMap<ElemId, MaxSubtree>,
    edges: BTreeSet<(ElemId, ElemId)>,
}

impl TauStructure {
    pub fn empty(f: GrowthFunction, level: usize) -> Result<Self, StructureError> {
        if level > f.max_level() {
            return Err(TreeError::LevelOutOfRange {
                level,
                max: f.max_level(),
            }
            .into());
        }
        Ok(Self {
            f,
            level,
            p: BTreeMap::new(),
            q: BTreeMap::new(),
            edges: BTreeSet::new(),
        })
    }

    /// Builds a structure with validated labels. Sort clashes and illegal
    /// edges are left for [`check_axioms`] to report.
    pub fn new(
        f: GrowthFunction,
        level: usize,
        p: impl IntoIterator<Item = (ElemId, TreeNode)>,
        q: impl IntoIterator<Item = (ElemId, MaxSubtree)>,
        edges: impl IntoIterator<Item = (ElemId, ElemId)>,
    ) -> Result<Self, StructureError> {
        let mut m = Self::empty(f, level)?;
        for (id, leaf) in p {
            m.insert_p(id, leaf)?;
        }
        for (id, s) in q {
            m.insert_q(id, s)?;
        }
        m.edges.extend(edges);
        Ok(m)
    }

    pub fn insert_p(&mut self, id: ElemId, leaf: TreeNode) -> Result<(), StructureError> {
        if leaf.level() != self.level {
            return Err(TreeError::MixedLevels(leaf).into());
        }
        if !self.f.is_valid_node(&leaf) {
            return Err(TreeError::InvalidNode(leaf).into());
        }
        if self.p.insert(id, leaf).is_some() {
            return Err(StructureError::DuplicateId(id));
        }
        Ok(())
    }

    pub fn insert_q(&mut self, id: ElemId, s: MaxSubtree) -> Result<(), StructureError> {
        let s = MaxSubtree::try_new(&self.f, self.level, s.nodes().clone())?;
        if self.q.insert(id, s).is_some() {
            return Err(StructureError::DuplicateId(id));
        }
        Ok(())
    }

    pub fn insert_edge(&mut self, q: ElemId, p: ElemId) {
        self.edges.insert((q, p));
    }

    pub fn f(&self) -> &GrowthFunction {
        &self.f
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn p_elems(&self) -> &BTreeMap<ElemId, TreeNode> {
        &self.p
    }

    pub fn q_elems(&self) -> &BTreeMap<ElemId, MaxSubtree> {
        &self.q
    }

    pub fn edges(&self) -> &BTreeSet<(ElemId, ElemId)> {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.p.len() + self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn ids(&self) -> BTreeSet<ElemId> {
        self.p.keys().chain(self.q.keys()).copied().collect()
    }

    pub fn max_id(&self) -> Option<ElemId> {
        self.ids().last().copied()
    }

    /// P-neighbours of `q`, ascending.
    pub fn neighbours(&self, q: ElemId) -> Vec<ElemId> {
        self.edges
            .range((q, ElemId::MIN)..=(q, ElemId::MAX))
            .map(|&(_, p)| p)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ViolationKind {
    PartitionError,
    EdgeOutsideSubtree,
    FullSplittingCovered,
}

/// A failed axiom instance.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub ids: Vec<ElemId>,
    pub nodes: Vec<TreeNode>,
}

impl Violation {
    /// Whether the instance still fails in `m`.
    ///
    /// - `PartitionError`: `ids[0]` is in both sorts, or the edge
    ///   `(ids[0], ids[1])` does not run from Q to P.
    /// - `EdgeOutsideSubtree`: edge `(ids[0], ids[1])` exists and the leaf of
    ///   `ids[1]` is missing from the subtree of `ids[0]`.
    /// - `FullSplittingCovered`: `ids[0]` is a Q-element adjacent to
    ///   `ids[1..]`, whose leaves cover every successor of `nodes[0]`.
    pub fn recheck(&self, m: &TauStructure) -> bool {
        match self.kind {
            ViolationKind::PartitionError => match self.ids.as_slice() {
                [id] => m.p.contains_key(id) && m.q.contains_key(id),
                [q, p] => m.edges.contains(&(*q, *p)) && !well_sorted_edge(m, *q, *p),
                _ => false,
            },
            ViolationKind::EdgeOutsideSubtree => match self.ids.as_slice() {
                [q, p] => {
                    m.edges.contains(&(*q, *p))
                        && match (m.q.get(q), m.p.get(p)) {
                            (Some(s), Some(leaf)) => !s.contains(leaf),
                            _ => false,
                        }
                }
                _ => false,
            },
            ViolationKind::FullSplittingCovered => {
                let (Some((q, ps)), Some(nu)) = (self.ids.split_first(), self.nodes.first()) else {
                    return false;
                };
                if !m.q.contains_key(q) || nu.level() >= m.level {
                    return false;
                }
                let Ok(width) = m.f.at(nu.level()) else {
                    return false;
                };
                let mut hit = BTreeSet::new();
                for p in ps {
                    if !m.edges.contains(&(*q, *p)) {
                        return false;
                    }
                    let Some(leaf) = m.p.get(p) else {
                        return false;
                    };
                    if nu.is_prefix_of(leaf) {
                        hit.insert(leaf.entries()[nu.level()]);
                    }
                }
                (0..=width).all(|l| hit.contains(&l))
            }
        }
    }

    /// Whether `id` takes part in the violation.
    pub fn involves(&self, id: ElemId) -> bool {
        self.ids.contains(&id)
    }
}

fn well_sorted_edge(m: &TauStructure, q: ElemId, p: ElemId) -> bool {
    m.q.contains_key(&q) && m.p.contains_key(&p) && !m.p.contains_key(&q) && !m.q.contains_key(&p)
}

/// All failed axiom instances of `m`; empty iff `m ⊨ T_{0,f,k}`.
pub fn check_axioms(m: &TauStructure) -> Vec<Violation> {
    let mut out = Vec::new();
    for id in m.p.keys().filter(|id| m.q.contains_key(id)) {
        out.push(Violation {
            kind: ViolationKind::PartitionError,
            ids: vec![*id],
            nodes: vec![],
        });
    }
    for &(q, p) in &m.edges {
        match (m.q.get(&q), m.p.get(&p)) {
            (Some(s), Some(leaf)) if well_sorted_edge(m, q, p) => {
                if !s.contains(leaf) {
                    out.push(Violation {
                        kind: ViolationKind::EdgeOutsideSubtree,
                        ids: vec![q, p],
                        nodes: vec![leaf.clone()],
                    });
                }
            }
            _ => out.push(Violation {
                kind: ViolationKind::PartitionError,
                ids: vec![q, p],
                nodes: vec![],
            }),
        }
    }
    for &q in m.q.keys() {
        let ps: Vec<ElemId> = m
            .neighbours(q)
            .into_iter()
            .filter(|p| m.p.contains_key(p))
            .collect();
        let leaves: BTreeSet<TreeNode> = ps.iter().map(|p| m.p[p].clone()).collect();
        if let Some(nu) = full_splitting_unchecked(&m.f, &leaves) {
            let mut ids = vec![q];
            ids.extend(ps.iter().filter(|p| nu.is_prefix_of(&m.p[p])));
            out.push(Violation {
                kind: ViolationKind::FullSplittingCovered,
                ids,
                nodes: vec![nu],
            });
        }
    }
    out.sort();
    out
}

/// Uniform leaf of `T_k`.
pub fn random_leaf(f: &GrowthFunction, k: usize, rng: &mut impl Rng) -> TreeNode {
    TreeNode::new(
        f.values()[..k]
            .iter()
            .map(|&w| rng.gen_range(0..=w))
            .collect(),
    )
}

/// A member of `S_k` drawn by omitting a uniform successor at every kept
/// internal node.
pub fn random_subtree(f: &GrowthFunction, k: usize, rng: &mut impl Rng) -> MaxSubtree {
    let mut nodes = BTreeSet::from([TreeNode::root()]);
    let mut frontier = vec![TreeNode::root()];
    for &w in &f.values()[..k] {
        let mut next = Vec::new();
        for node in &frontier {
            let skip = rng.gen_range(0..=w);
            for l in (0..=w).filter(|&l| l != skip) {
                next.push(node.child(l));
            }
        }
        nodes.extend(next.iter().cloned());
        frontier = next;
    }
    MaxSubtree::new_unchecked(nodes).truncate(k)
}

/// A random legal structure. P-elements get ids `0..n_p`, Q-elements
/// `n_p..n_p+n_q`; each legal edge is kept with probability `density`.
pub fn random_structure(
    f: &GrowthFunction,
    k: usize,
    n_p: usize,
    n_q: usize,
    density: f64,
    seed: u64,
) -> Result<TauStructure, StructureError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let density = density.clamp(0.0, 1.0);
    let mut m = TauStructure::empty(f.clone(), k)?;
    for id in 0..n_p {
        let leaf = random_leaf(f, k, &mut rng);
        m.p.insert(id as ElemId, leaf);
    }
    for id in n_p..n_p + n_q {
        let s = random_subtree(f, k, &mut rng);
        m.q.insert(id as ElemId, s);
    }
    for (&q, s) in &m.q {
        for (&p, leaf) in &m.p {
            if s.contains(leaf) && rng.gen_bool(density) {
                m.edges.insert((q, p));
            }
        }
    }
    Ok(m)
}

/// Result of [`amalgamate`]: the amalgam plus where each element of the
/// right-hand structure went.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Amalgam {
    pub structure: TauStructure,
    pub right_ids: BTreeMap<ElemId, ElemId>,
}

/// Disjoint union of `m` and `n` over the identification `shared`
/// (pairs `(id in m, id in n)`). Elements of `m` keep their ids; unshared
/// elements of `n` are renumbered upwards from the largest id of `m`, in
/// ascending order of their old ids.
pub fn amalgamate(
    m: &TauStructure,
    n: &TauStructure,
    shared: &[(ElemId, ElemId)],
) -> Result<Amalgam, StructureError> {
    if m.f != n.f || m.level != n.level {
        return Err(StructureError::LevelMismatch);
    }
    let mut right_ids = BTreeMap::new();
    let mut seen_left = BTreeSet::new();
    for &(a, b) in shared {
        if !m.ids().contains(&a) {
            return Err(StructureError::UnknownId(a));
        }
        if !n.ids().contains(&b) {
            return Err(StructureError::UnknownId(b));
        }
        let label_ok = match (m.p.get(&a), n.p.get(&b), m.q.get(&a), n.q.get(&b)) {
            (Some(x), Some(y), None, None) => x == y,
            (None, None, Some(x), Some(y)) => x == y,
            _ => false,
        };
        if !label_ok {
            return Err(StructureError::SharedPartMismatch(format!(
                "element {a} / {b} has different labels or sorts"
            )));
        }
        if !seen_left.insert(a) || right_ids.insert(b, a).is_some() {
            return Err(StructureError::SharedPartMismatch(format!(
                "pair {a} / {b} is not a bijection"
            )));
        }
    }
    for &(qa, qb) in shared {
        for &(pa, pb) in shared {
            if m.edges.contains(&(qa, pa)) != n.edges.contains(&(qb, pb)) {
                return Err(StructureError::SharedPartMismatch(format!(
                    "edge ({qa},{pa}) / ({qb},{pb}) disagrees"
                )));
            }
        }
    }
    let mut next = m.max_id().map_or(0, |x| x + 1);
    for id in n.ids() {
        right_ids.entry(id).or_insert_with(|| {
            let out = next;
            next += 1;
            out
        });
    }
    let mut out = m.clone();
    for (id, leaf) in &n.p {
        out.p.insert(right_ids[id], leaf.clone());
    }
    for (id, s) in &n.q {
        out.q.insert(right_ids[id], s.clone());
    }
    for (q, p) in &n.edges {
        out.edges.insert((right_ids[q], right_ids[p]));
    }
    Ok(Amalgam {
        structure: out,
        right_ids,
    })
}

/// Lifts a legal level-k structure to level `k+1`.
///
/// Every P-element picks a successor of its leaf; every Q-element then omits,
/// below each leaf `λ` of its subtree, the least successor not picked by a
/// neighbour with leaf `λ`. The picks are found by backtracking: P-elements
/// are ordered by first appearance among Q-elements of descending degree, and
/// each tries its preferred successor (uniform when `seed` is given, else 0)
/// before the others in ascending order. A pick fails when some neighbour
/// group would then use every successor.
pub fn lift_structure(m: &TauStructure, seed: Option<u64>) -> Result<TauStructure, StructureError> {
    let k = m.level;
    let width = m.f.at(k)?;
    let mut rng = seed.map(ChaCha8Rng::seed_from_u64);
    let preferred: BTreeMap<ElemId, u32> =
        m.p.keys()
            .map(|&p| (p, rng.as_mut().map_or(0, |r| r.gen_range(0..=width))))
            .collect();

    // Groups: for each (q, leaf) the P-neighbours of q carrying that leaf.
    let mut q_order: Vec<ElemId> = m.q.keys().copied().collect();
    q_order.sort_by_key(|&q| (std::cmp::Reverse(m.neighbours(q).len()), q));
    let mut groups: Vec<Vec<ElemId>> = Vec::new();
    for &q in &q_order {
        let mut by_leaf: BTreeMap<&TreeNode, Vec<ElemId>> = BTreeMap::new();
        for p in m.neighbours(q) {
            if let Some(leaf) = m.p.get(&p) {
                by_leaf.entry(leaf).or_default().push(p);
            }
        }
        groups.extend(by_leaf.into_values());
    }
    let mut order: Vec<ElemId> = Vec::new();
    let mut placed = BTreeSet::new();
    for p in groups.iter().flatten().chain(m.p.keys()) {
        if placed.insert(*p) {
            order.push(*p);
        }
    }
    let index: BTreeMap<ElemId, usize> = order.iter().enumerate().map(|(i, &p)| (p, i)).collect();
    let mut groups_of: Vec<Vec<usize>> = vec![Vec::new(); order.len()];
    for (g, members) in groups.iter().enumerate() {
        for p in members {
            groups_of[index[p]].push(g);
        }
    }

    let mut picks: Vec<Option<u32>> = vec![None; order.len()];
    let full = width as usize + 1;
    let ok = assign_picks(
        0, &order, &preferred, width, &groups, &groups_of, &index, full, &mut picks,
    );
    if !ok {
        return Err(StructureError::NoLiftFound(k + 1));
    }
    let pick = |p: &ElemId| picks[index[p]].expect("all P-elements assigned");

    let mut out = TauStructure::empty(m.f.clone(), k + 1)?;
    for (id, leaf) in &m.p {
        out.p.insert(*id, leaf.child(pick(id)));
    }
    for (&q, s) in &m.q {
        let leaves: Vec<TreeNode> = s.leaves().into_iter().collect();
        let neighbours = m.neighbours(q);
        let omitted: Vec<u32> = leaves
            .iter()
            .map(|lam| {
                let used: BTreeSet<u32> = neighbours
                    .iter()
                    .filter(|p| m.p.get(p) == Some(lam))
                    .map(pick)
                    .collect();
                (0..=width).find(|l| !used.contains(l)).unwrap_or(0)
            })
            .collect();
        out.q
            .insert(q, trees::extend_with_omissions(&m.f, s, &leaves, &omitted));
    }
    out.edges = m.edges.clone();
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn assign_picks(
    i: usize,
    order: &[ElemId],
    preferred: &BTreeMap<ElemId, u32>,
    width: u32,
    groups: &[Vec<ElemId>],
    groups_of: &[Vec<usize>],
    index: &BTreeMap<ElemId, usize>,
    full: usize,
    picks: &mut Vec<Option<u32>>,
) -> bool {
    if i == order.len() {
        return true;
    }
    let first = preferred[&order[i]];
    let candidates = std::iter::once(first).chain((0..=width).filter(|&l| l != first));
    for value in candidates {
        picks[i] = Some(value);
        let saturated = groups_of[i].iter().any(|&g| {
            let used: BTreeSet<u32> = groups[g].iter().filter_map(|p| picks[index[p]]).collect();
            used.len() >= full
        });
        if !saturated
            && assign_picks(
                i + 1,
                order,
                preferred,
                width,
                groups,
                groups_of,
                index,
                full,
                picks,
            )
        {
            return true;
        }
    }
    picks[i] = None;
    false
}

/// A quantifier-free fact of the level-`j` vocabulary.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AtomicFact {
    InP(ElemId),
    InQ(ElemId),
    /// `P_η(x)` for a leaf prefix `η`.
    PNode(ElemId, TreeNode),
    /// `Q_s(x)` for the label truncated to some depth.
    QSubtree(ElemId, MaxSubtree),
    Edge(ElemId, ElemId),
}

/// Every positive atomic fact of `m` in the vocabulary of levels
/// `<= up_to_level`. Negative facts are determined by these.
pub fn atomic_facts(m: &TauStructure, up_to_level: usize) -> BTreeSet<AtomicFact> {
    let top = up_to_level.min(m.level);
    let mut out = BTreeSet::new();
    for (&id, leaf) in &m.p {
        out.insert(AtomicFact::InP(id));
        for j in 0..=top {
            out.insert(AtomicFact::PNode(id, leaf.truncate(j)));
        }
    }
    for (&id, s) in &m.q {
        out.insert(AtomicFact::InQ(id));
        for j in 0..=top {
            out.insert(AtomicFact::QSubtree(id, s.truncate(j)));
        }
    }
    for &(q, p) in &m.edges {
        out.insert(AtomicFact::Edge(q, p));
    }
    out
}

#[derive(Serialize, Deserialize)]
struct PElemJson {
    id: ElemId,
    leaf: TreeNode,
}

#[derive(Serialize, Deserialize)]
struct QElemJson {
    id: ElemId,
    s: MaxSubtree,
}

#[derive(Serialize, Deserialize)]
struct StructureJson {
    f: GrowthFunction,
    k: usize,
    #[serde(rename = "P", default)]
    p: Vec<PElemJson>,
    #[serde(rename = "Q", default)]
    q: Vec<QElemJson>,
    #[serde(rename = "R", default)]
    r: Vec<(ElemId, ElemId)>,
}

impl Serialize for TauStructure {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        StructureJson {
            f: self.f.clone(),
            k: self.level,
            p: self
                .p
                .iter()
                .map(|(&id, leaf)| PElemJson {
                    id,
                    leaf: leaf.clone(),
                })
                .collect(),
            q: self
                .q
                .iter()
                .map(|(&id, s)| QElemJson { id, s: s.clone() })
                .collect(),
            r: self.edges.iter().copied().collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for TauStructure {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = StructureJson::deserialize(d)?;
        TauStructure::new(
            raw.f,
            raw.k,
            raw.p.into_iter().map(|e| (e.id, e.leaf)),
            raw.q.into_iter().map(|e| (e.id, e.s)),
            raw.r,
        )
        .map_err(serde::de::Error::custom)
    }
}
