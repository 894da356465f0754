use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use clap::ValueEnum;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::{json, Value};

use kwb_core::indep_ba::{
    compatible_subfamily, from_fi_dnf, generator, to_fi_dnf, AlgebraContext, BAElement, FIFunc,
};
use kwb_core::patterns::{
    build_tf_dual_pattern, build_tf_dual_refinement, build_tf_pattern, build_tf_refinement,
    collision_certificate, default_leaf_enum, default_pool, extension_condition_failure,
    for_each_refinement, is_multiplicative_on, is_possibility_pattern, refinement_failure, refines,
    search_multiplicative_refinement, subsets_up_to, ExtendedRefinement, PatternJson,
    PossibilityPattern, Refinement, RefinementJson, SearchOptions, MAX_FULL_INDICES,
};
use kwb_core::tf_structures::{
    amalgamate, atomic_facts, check_axioms, lift_structure, random_structure, ElemId, TauStructure,
};
use kwb_core::tf_types::{
    consistent_p_type, consistent_q_type, realize_p_params, realize_q_params,
    witness_extension_oracle, PTypeInstance, QTypeInstance, Shape,
};
use kwb_core::tnk::{
    build_tnk_pattern, consistent_type_tnk, control_map, forbidden_witness, free_set_escape,
    is_legal, near_forbidden, support_trace_check, verify_pattern_semantics, Hypergraph,
    NearForbiddenFamily, TnkError, TnkPattern, Vertex, VertexSet,
};
use kwb_core::trees::{
    enumerate_blocking, enumerate_level, enumerate_maximal_subtrees, GrowthFunction, MaxSubtree,
    TreeNode,
};

use crate::{CliError, MAX_LEAF_LEVEL};

type Out = Result<Value, CliError>;

/// Largest element count `tf-gen` will build per sort.
const MAX_GENERATED: usize = 10_000;
/// Largest atom count for which `tnk-trace` offers every element as a
/// candidate.
const MAX_ALL_POOL_ATOMS: usize = 4;
const MAX_PROBE_TRIALS: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, ValueEnum)]
pub enum Verb {
    TreeEnum,
    SEnum,
    Blocking,
    TfCheck,
    TfGen,
    TfAmalgamate,
    TfLift,
    TypeCheck,
    BaEval,
    PatternBuild,
    PatternVerify,
    RefineBuild,
    RefineSearch,
    TnkCheck,
    TnkPattern,
    TnkTrace,
    EscapeProbe,
}

impl Verb {
    pub fn all() -> &'static [Verb] {
        Verb::value_variants()
    }

    pub fn name(self) -> &'static str {
        match self {
            Verb::TreeEnum => "tree-enum",
            Verb::SEnum => "s-enum",
            Verb::Blocking => "blocking",
            Verb::TfCheck => "tf-check",
            Verb::TfGen => "tf-gen",
            Verb::TfAmalgamate => "tf-amalgamate",
            Verb::TfLift => "tf-lift",
            Verb::TypeCheck => "type-check",
            Verb::BaEval => "ba-eval",
            Verb::PatternBuild => "pattern-build",
            Verb::PatternVerify => "pattern-verify",
            Verb::RefineBuild => "refine-build",
            Verb::RefineSearch => "refine-search",
            Verb::TnkCheck => "tnk-check",
            Verb::TnkPattern => "tnk-pattern",
            Verb::TnkTrace => "tnk-trace",
            Verb::EscapeProbe => "escape-probe",
        }
    }
}

pub(crate) fn dispatch(verb: Verb, params: &Value, seed: Option<u64>) -> Out {
    let seed = seed.unwrap_or(0);
    match verb {
        Verb::TreeEnum => tree_enum(parse(params)?),
        Verb::SEnum => s_enum(parse(params)?),
        Verb::Blocking => blocking(parse(params)?),
        Verb::TfCheck => tf_check(parse_structure(params)?),
        Verb::TfGen => tf_gen(parse(params)?, seed),
        Verb::TfAmalgamate => tf_amalgamate(parse(params)?),
        Verb::TfLift => tf_lift(parse_structure(params)?, seed),
        Verb::TypeCheck => type_check(parse(params)?),
        Verb::BaEval => ba_eval(parse(params)?),
        Verb::PatternBuild => pattern_build(parse(params)?),
        Verb::PatternVerify => pattern_verify(parse(params)?),
        Verb::RefineBuild => refine_build(parse(params)?),
        Verb::RefineSearch => refine_search(parse(params)?),
        Verb::TnkCheck => tnk_check(parse(params)?),
        Verb::TnkPattern => tnk_pattern(parse(params)?),
        Verb::TnkTrace => tnk_trace(parse(params)?),
        Verb::EscapeProbe => escape_probe(parse(params)?, seed),
    }
}

fn parse<T: DeserializeOwned>(params: &Value) -> Result<T, CliError> {
    Ok(T::deserialize(params)?)
}

fn leaf_level(k: usize) -> Result<(), CliError> {
    if k > MAX_LEAF_LEVEL {
        return Err(CliError::Guard(format!(
            "leaf level {k} is above {MAX_LEAF_LEVEL}"
        )));
    }
    Ok(())
}

fn parse_structure(params: &Value) -> Result<TauStructure, CliError> {
    if let Some(k) = params.get("k").and_then(Value::as_u64) {
        leaf_level(k as usize)?;
    }
    parse(params)
}

fn to_json<T: serde::Serialize>(x: &T) -> Value {
    serde_json::to_value(x).expect("library types always serialize")
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TreeParams {
    f: GrowthFunction,
    k: usize,
    #[serde(default)]
    list: bool,
}

fn tree_enum(p: TreeParams) -> Out {
    leaf_level(p.k)?;
    let nodes = enumerate_level(&p.f, p.k)?;
    let level_sizes = (0..=p.k)
        .map(|l| p.f.level_size(l).map(|s| s as u64))
        .collect::<Result<Vec<_>, _>>()?;
    let successors = (0..p.k)
        .map(|l| p.f.successor_count(l))
        .collect::<Result<Vec<_>, _>>()?;
    let mut out = json!({
        "count": nodes.len(),
        "level_sizes": level_sizes,
        "successor_counts": successors,
    });
    if p.list {
        out["nodes"] = to_json(&nodes);
    }
    Ok(out)
}

fn s_enum(p: TreeParams) -> Out {
    leaf_level(p.k)?;
    let all = enumerate_maximal_subtrees(&p.f, p.k)?;
    let mut out = json!({
        "count": all.len(),
        "closed_form": p.f.subtree_count(p.k)? as u64,
    });
    if p.list {
        out["subtrees"] = to_json(&all);
    }
    Ok(out)
}

fn blocking(p: TreeParams) -> Out {
    leaf_level(p.k)?;
    let sets = enumerate_blocking(&p.f, p.k)?;
    let mut out = json!({ "count": sets.len() });
    if p.list {
        let leaves: Vec<&BTreeSet<TreeNode>> = sets.iter().map(|b| &b.leaves).collect();
        out["sets"] = to_json(&leaves);
    }
    Ok(out)
}

fn tf_check(m: TauStructure) -> Out {
    let violations = check_axioms(&m);
    Ok(json!({ "ok": violations.is_empty(), "violations": violations }))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GenParams {
    f: GrowthFunction,
    k: usize,
    n_p: usize,
    n_q: usize,
    #[serde(default = "half")]
    density: f64,
}

fn half() -> f64 {
    0.5
}

fn tf_gen(p: GenParams, seed: u64) -> Out {
    leaf_level(p.k)?;
    if p.n_p.max(p.n_q) > MAX_GENERATED {
        return Err(CliError::Guard(format!(
            "more than {MAX_GENERATED} elements of one sort requested"
        )));
    }
    if !(0.0..=1.0).contains(&p.density) {
        return Err(CliError::Schema("density must lie in [0, 1]".into()));
    }
    let m = random_structure(&p.f, p.k, p.n_p, p.n_q, p.density, seed)?;
    Ok(json!({ "structure": m, "violations": check_axioms(&m).len() }))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AmalgamParams {
    left: TauStructure,
    right: TauStructure,
    #[serde(default)]
    shared: Vec<(ElemId, ElemId)>,
}

fn tf_amalgamate(p: AmalgamParams) -> Out {
    let out = amalgamate(&p.left, &p.right, &p.shared)?;
    let moved: Vec<(ElemId, ElemId)> = out.right_ids.into_iter().collect();
    Ok(json!({
        "structure": out.structure,
        "right_ids": moved,
        "violations": check_axioms(&out.structure),
    }))
}

fn tf_lift(m: TauStructure, seed: u64) -> Out {
    let up = lift_structure(&m, Some(seed))?;
    let preserved = atomic_facts(&up, m.level()) == atomic_facts(&m, m.level());
    Ok(json!({
        "structure": up,
        "violations": check_axioms(&up),
        "facts_preserved": preserved,
    }))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TypeParams {
    shape: Shape,
    f: GrowthFunction,
    k: usize,
    #[serde(default)]
    leaves: Vec<TreeNode>,
    #[serde(default)]
    subtrees: Vec<MaxSubtree>,
    /// Also run the one-point extension search.
    #[serde(default)]
    oracle: bool,
}

fn type_check(p: TypeParams) -> Out {
    leaf_level(p.k)?;
    match p.shape {
        Shape::Q => {
            if !p.subtrees.is_empty() {
                return Err(CliError::Schema(
                    "a Q type takes leaves, not subtrees".into(),
                ));
            }
            let t = QTypeInstance {
                f: p.f,
                k: p.k,
                leaves: p.leaves,
            };
            let mut out = json!({ "shape": "Q", "consistent": consistent_q_type(&t)? });
            if p.oracle {
                let m = realize_q_params(&t)?;
                let ids: Vec<ElemId> = (0..t.leaves.len() as ElemId).collect();
                out["witness"] = to_json(&witness_extension_oracle(&m, Shape::Q, &ids)?);
            }
            Ok(out)
        }
        Shape::P => {
            if !p.leaves.is_empty() {
                return Err(CliError::Schema(
                    "a P type takes subtrees, not leaves".into(),
                ));
            }
            let t = PTypeInstance {
                f: p.f,
                k: p.k,
                subtrees: p.subtrees,
            };
            let leaf = consistent_p_type(&t)?;
            let mut out = json!({ "shape": "P", "consistent": leaf.is_some(), "leaf": leaf });
            if p.oracle {
                let m = realize_p_params(&t)?;
                let ids: Vec<ElemId> = (0..t.subtrees.len() as ElemId).collect();
                out["witness"] = to_json(&witness_extension_oracle(&m, Shape::P, &ids)?);
            }
            Ok(out)
        }
    }
}

/// A Boolean-algebra expression over one context.
#[derive(Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
enum Expr {
    Zero,
    One,
    Gen(FIFunc),
    Dnf(Vec<FIFunc>),
    Not(Box<Expr>),
    Meet(Vec<Expr>),
    Join(Vec<Expr>),
}

fn eval(ctx: &Arc<AlgebraContext>, e: &Expr) -> Result<BAElement, CliError> {
    Ok(match e {
        Expr::Zero => BAElement::zero(ctx),
        Expr::One => BAElement::one(ctx),
        Expr::Gen(h) => generator(ctx, h)?,
        Expr::Dnf(terms) => from_fi_dnf(ctx, terms)?,
        Expr::Not(x) => eval(ctx, x)?.complement(),
        Expr::Meet(xs) => xs.iter().try_fold(BAElement::one(ctx), |acc, x| {
            Ok::<_, CliError>(acc.meet(&eval(ctx, x)?)?)
        })?,
        Expr::Join(xs) => xs.iter().try_fold(BAElement::zero(ctx), |acc, x| {
            Ok::<_, CliError>(acc.join(&eval(ctx, x)?)?)
        })?,
    })
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BaParams {
    #[serde(default)]
    sizes: Vec<usize>,
    expr: Option<Expr>,
    /// When both are given, `leq` reports `expr <= leq`.
    leq: Option<Expr>,
    family: Option<Vec<FIFunc>>,
    m: Option<usize>,
}

fn ba_eval(p: BaParams) -> Out {
    let mut out = json!({});
    if let Some(e) = &p.expr {
        let ctx = AlgebraContext::new(p.sizes.clone())?;
        let a = eval(&ctx, e)?;
        out["dnf"] = to_json(&to_fi_dnf(&a));
        out["atoms"] = json!(a.atom_count());
        out["zero"] = json!(a.is_zero());
        out["one"] = json!(a.is_one());
        if let Some(b) = &p.leq {
            out["leq"] = json!(a.leq(&eval(&ctx, b)?)?);
        }
    } else if p.leq.is_some() {
        return Err(CliError::Schema("leq needs expr".into()));
    }
    match (&p.family, p.m) {
        (Some(family), Some(m)) => out["subfamily"] = to_json(&compatible_subfamily(family, m)),
        (None, None) => {}
        _ => return Err(CliError::Schema("family and m go together".into())),
    }
    if p.expr.is_none() && p.family.is_none() {
        return Err(CliError::Schema(
            "nothing to evaluate: give expr or family".into(),
        ));
    }
    Ok(out)
}

#[derive(Deserialize, Clone, Copy, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
enum Kind {
    Tf,
    Dual,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BuildParams {
    kind: Kind,
    f: GrowthFunction,
    depth: usize,
    n: usize,
}

fn build_pattern(p: &BuildParams) -> Result<PossibilityPattern, CliError> {
    leaf_level(p.depth)?;
    Ok(match p.kind {
        Kind::Tf => build_tf_pattern(&p.f, p.depth, p.n)?.pattern,
        Kind::Dual => build_tf_dual_pattern(&p.f, p.depth, p.n)?.pattern,
    })
}

fn pattern_build(p: BuildParams) -> Out {
    let pattern = build_pattern(&p)?;
    Ok(json!({
        "atoms": pattern.ctx().atom_count(),
        "is_pattern": is_possibility_pattern(&pattern),
        "pattern": pattern.to_json(),
    }))
}

fn all_subsets(n: usize) -> Result<Vec<Vec<usize>>, CliError> {
    if n > MAX_FULL_INDICES {
        return Err(CliError::Guard(format!(
            "{n} indices exceed the full-audit limit of {MAX_FULL_INDICES}"
        )));
    }
    Ok(subsets_up_to(n, n))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct VerifyParams {
    pattern: PatternJson,
    refinement: Option<RefinementJson>,
}

fn pattern_verify(p: VerifyParams) -> Out {
    let pattern = PossibilityPattern::from_json(&p.pattern)?;
    let mut out = json!({ "is_pattern": is_possibility_pattern(&pattern) });
    if let Some(r) = &p.refinement {
        let r = Refinement::from_json(r)?;
        let failure = refinement_failure(&r, &pattern)?;
        out["refines"] = json!(failure.is_none());
        out["failure"] = to_json(&failure);
        out["multiplicative"] = json!(is_multiplicative_on(&r, &all_subsets(r.n())?)?);
    }
    Ok(out)
}

fn refine_build(p: BuildParams) -> Out {
    leaf_level(p.depth)?;
    let (old, ext): (usize, ExtendedRefinement) = match p.kind {
        Kind::Tf => {
            let tp = build_tf_pattern(&p.f, p.depth, p.n)?;
            let blocking = enumerate_blocking(&p.f, p.depth)?;
            (
                tp.pattern.ctx().partition_count(),
                build_tf_refinement(&tp, &blocking)?,
            )
        }
        Kind::Dual => {
            let dp = build_tf_dual_pattern(&p.f, p.depth, p.n)?;
            let leaves = default_leaf_enum(&dp)?;
            (
                dp.pattern.ctx().partition_count(),
                build_tf_dual_refinement(&dp, &leaves)?,
            )
        }
    };
    let all = all_subsets(p.n)?;
    Ok(json!({
        "fresh_partition": ext.fresh_partition,
        "refines": refines(&ext.refinement, &ext.pattern)?,
        "multiplicative": is_multiplicative_on(&ext.refinement, &all)?,
        "extension_failure": to_json(&extension_condition_failure(&ext.pattern, &ext.refinement, old)?),
        "pattern": ext.pattern.to_json(),
        "refinement": ext.refinement.to_json(),
    }))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SearchParams {
    pattern: Option<PatternJson>,
    build: Option<BuildParams>,
    /// Test exactly these generators instead of searching.
    candidates: Option<Vec<FIFunc>>,
    #[serde(default = "one")]
    max_domain: usize,
    #[serde(default)]
    require_nonzero: bool,
    #[serde(default)]
    require_distinguished: bool,
}

fn one() -> usize {
    1
}

fn refine_search(p: SearchParams) -> Out {
    let pattern = match (&p.pattern, &p.build) {
        (Some(j), None) => PossibilityPattern::from_json(j)?,
        (None, Some(b)) => build_pattern(b)?,
        _ => {
            return Err(CliError::Schema(
                "give exactly one of pattern, build".into(),
            ))
        }
    };
    if let Some(cands) = &p.candidates {
        let cert = collision_certificate(&pattern, cands)?;
        let cert = cert.map(|(u, atom)| json!({ "subset": u, "atom": pattern.ctx().atom(atom) }));
        return Ok(json!({ "refines": cert.is_none(), "certificate": cert }));
    }
    let pools = (0..pattern.n())
        .map(|i| default_pool(&pattern, i, p.max_domain))
        .collect::<Result<Vec<_>, _>>()?;
    let elems: Vec<Vec<BAElement>> = pools
        .iter()
        .map(|pool| pool.iter().map(|x| x.1.clone()).collect())
        .collect();
    let opts = SearchOptions {
        require_nonzero: p.require_nonzero,
        require_distinguished: p.require_distinguished,
    };
    let hit = search_multiplicative_refinement(&pattern, &elems, opts)?;
    let pool_sizes: Vec<usize> = pools.iter().map(Vec::len).collect();
    Ok(match hit {
        Some(h) => {
            let chosen: Vec<&FIFunc> = h
                .choice
                .iter()
                .enumerate()
                .map(|(i, &c)| &pools[i][c].0)
                .collect();
            json!({
                "found": true,
                "pool_sizes": pool_sizes,
                "choice": h.choice,
                "generators": chosen,
                "refinement": h.refinement.to_json(),
            })
        }
        None => json!({ "found": false, "pool_sizes": pool_sizes }),
    })
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TnkCheckParams {
    n: usize,
    k: usize,
    vertices: usize,
    #[serde(default)]
    edges: Vec<VertexSet>,
    /// A set of `k`-sets to test as a one-vertex type.
    #[serde(rename = "type")]
    ty: Option<Vec<VertexSet>>,
}

fn tnk_check(p: TnkCheckParams) -> Out {
    let h = Hypergraph::new(p.n, p.k, p.vertices, p.edges)?;
    let legal = is_legal(&h);
    let mut out = json!({
        "legal": legal,
        "forbidden": forbidden_witness(&h),
        "near_forbidden": if legal { Some(near_forbidden(&h)?) } else { None },
    });
    if let Some(v) = &p.ty {
        out["consistent"] = json!(consistent_type_tnk(&h, v)?);
    }
    Ok(out)
}

fn tnk_setup(h: &Hypergraph, cap: Option<usize>) -> Result<TnkPattern, CliError> {
    let fam = NearForbiddenFamily::of(h)?;
    let ctx = fam.context()?;
    Ok(build_tnk_pattern(h, &fam, &ctx, None, cap)?)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TnkPatternParams {
    graph: Hypergraph,
    cap: Option<usize>,
    #[serde(default = "yes")]
    verify: bool,
}

fn yes() -> bool {
    true
}

fn tnk_pattern(p: TnkPatternParams) -> Out {
    let tp = tnk_setup(&p.graph, p.cap)?;
    let ctx = tp.pattern.ctx();
    let k = p.graph.k();
    let mut covers = Vec::new();
    for (w, &c) in tp.family.members.iter().zip(&tp.family.coords) {
        let cover = tp.cover_of(w, k);
        let excluded = match cover.as_ref().and_then(|s| tp.pattern.get(s)) {
            Some(b) => Some(b.is_disjoint(&generator(ctx, &FIFunc::single(c, 0))?)?),
            None => None,
        };
        covers.push(json!({ "member": w, "cover": cover, "excludes_member": excluded }));
    }
    let mut out = json!({
        "formulas": tp.formulas,
        "covers": covers,
        "pattern": tp.pattern.to_json(),
    });
    if p.verify {
        out["semantics"] = match verify_pattern_semantics(&p.graph, &tp)? {
            Ok(()) => json!("ok"),
            Err(m) => to_json(&m),
        };
    }
    Ok(out)
}

#[derive(Deserialize, Clone, Copy, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
enum PoolKind {
    All,
    Generators,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TraceParams {
    graph: Hypergraph,
    #[serde(default = "generators")]
    pool: PoolKind,
    #[serde(default = "one")]
    max_domain: usize,
    #[serde(default = "yes")]
    require_nonzero: bool,
}

fn generators() -> PoolKind {
    PoolKind::Generators
}

fn tnk_trace(p: TraceParams) -> Out {
    let tp = tnk_setup(&p.graph, None)?;
    let ctx = tp.pattern.ctx().clone();
    let pools: Vec<Vec<BAElement>> = match p.pool {
        PoolKind::All => {
            let atoms = ctx.atom_count();
            if atoms > MAX_ALL_POOL_ATOMS {
                return Err(CliError::Guard(format!(
                    "{atoms} atoms is too many to offer every element"
                )));
            }
            let every: Vec<BAElement> = (0u32..1 << atoms)
                .map(|mask| BAElement::from_predicate(&ctx, |a| mask >> a & 1 == 1))
                .collect();
            vec![every; tp.pattern.n()]
        }
        PoolKind::Generators => (0..tp.pattern.n())
            .map(|i| {
                Ok(default_pool(&tp.pattern, i, p.max_domain)?
                    .into_iter()
                    .map(|x| x.1)
                    .collect())
            })
            .collect::<Result<_, CliError>>()?,
    };
    let opts = SearchOptions {
        require_nonzero: p.require_nonzero,
        require_distinguished: false,
    };
    let mut found = 0usize;
    let mut traced = 0usize;
    let mut first_untraced: Option<Vec<usize>> = None;
    let mut first_escape: Option<Value> = None;
    let mut escapes = 0usize;
    let mut failure: Option<CliError> = None;
    for_each_refinement(&tp.pattern, &pools, opts, |choice| {
        if failure.is_some() {
            return;
        }
        found += 1;
        let r = Refinement::new(
            ctx.clone(),
            choice
                .iter()
                .enumerate()
                .map(|(i, &c)| pools[i][c].clone())
                .collect(),
        )
        .expect("choices come from pools over the pattern context");
        let ok = match support_trace_check(&tp, &r) {
            Ok(ok) => ok,
            Err(TnkError::NotARefinement) => false,
            Err(e) => {
                failure = Some(e.into());
                return;
            }
        };
        if !ok {
            first_untraced.get_or_insert_with(|| choice.to_vec());
            return;
        }
        traced += 1;
        let escape = control_map(&p.graph, &tp, &r)
            .and_then(|f| free_set_escape(&tp.family, p.graph.k(), &f));
        match escape {
            Ok(Some(w)) => {
                escapes += 1;
                first_escape.get_or_insert_with(|| json!({ "choice": choice, "member": w }));
            }
            Ok(None) => {}
            Err(e) => failure = Some(e.into()),
        }
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(json!({
        "members": tp.family.members,
        "indices": tp.pattern.n(),
        "pool_sizes": pools.iter().map(Vec::len).collect::<Vec<_>>(),
        "refinements": found,
        "traced": traced,
        "first_untraced": first_untraced,
        "escapes": escapes,
        "first_escape": first_escape,
    }))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ProbeParams {
    graph: Hypergraph,
    refinement: Option<RefinementJson>,
    control: Option<Vec<(VertexSet, BTreeSet<Vertex>)>>,
    #[serde(default = "hundred")]
    trials: usize,
    #[serde(default = "third")]
    density: f64,
}

fn hundred() -> usize {
    100
}

fn third() -> f64 {
    0.3
}

fn escape_probe(p: ProbeParams, seed: u64) -> Out {
    let fam = NearForbiddenFamily::of(&p.graph)?;
    let k = p.graph.k();
    match (&p.refinement, &p.control) {
        (Some(r), None) => {
            let tp = tnk_setup(&p.graph, None)?;
            let r = Refinement::from_json(r)?;
            let r = align(&tp, r)?;
            let f = control_map(&p.graph, &tp, &r)?;
            Ok(json!({ "escape": free_set_escape(&fam, k, &f)? }))
        }
        (None, Some(c)) => {
            let f: BTreeMap<VertexSet, BTreeSet<Vertex>> = c.iter().cloned().collect();
            Ok(json!({ "escape": free_set_escape(&fam, k, &f)? }))
        }
        (None, None) => {
            if p.trials > MAX_PROBE_TRIALS {
                return Err(CliError::Guard(format!(
                    "more than {MAX_PROBE_TRIALS} trials"
                )));
            }
            if !(0.0..=1.0).contains(&p.density) {
                return Err(CliError::Schema("density must lie in [0, 1]".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ksets = p.graph.k_sets();
            let mut escapes = 0usize;
            let mut first: Option<Value> = None;
            for trial in 0..p.trials {
                let f: BTreeMap<VertexSet, BTreeSet<Vertex>> = ksets
                    .iter()
                    .map(|v| {
                        let extra = (0..p.graph.vertex_count()).filter(|_| rng.gen_bool(p.density));
                        (v.clone(), v.iter().copied().chain(extra).collect())
                    })
                    .collect();
                if let Some(w) = free_set_escape(&fam, k, &f)? {
                    escapes += 1;
                    first.get_or_insert_with(|| {
                        let control: Vec<(&VertexSet, &BTreeSet<Vertex>)> = f.iter().collect();
                        json!({ "trial": trial, "member": w, "control": control })
                    });
                }
            }
            Ok(json!({ "trials": p.trials, "escapes": escapes, "first_escape": first }))
        }
        _ => Err(CliError::Schema(
            "give at most one of refinement, control".into(),
        )),
    }
}

/// The refinement must live over the pattern's own context.
fn align(tp: &TnkPattern, r: Refinement) -> Result<Refinement, CliError> {
    if r.ctx().sizes() != tp.pattern.ctx().sizes() {
        return Err(CliError::Schema(
            "refinement context differs from the pattern's".into(),
        ));
    }
    if r.n() != tp.pattern.n() {
        return Err(CliError::Schema(format!(
            "refinement has {} entries, pattern has {} formulas",
            r.n(),
            tp.pattern.n()
        )));
    }
    Ok(r)
}
