//! Acceptance suite: one line per criterion, nonzero exit if any fails.
//!
//! Each criterion checks its property and its time budget; a correct result
//! that overruns the budget still fails.

use std::collections::BTreeSet;
use std::process::{Command as Proc, ExitCode};
use std::sync::Arc;
use std::time::{Duration, Instant};

use itertools::Itertools;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use kwb_cli::Verb;
use kwb_core::indep_ba::{
    compatible_subfamily, from_fi_dnf, generator, to_fi_dnf, AlgebraContext, BAElement, FIFunc,
};
use kwb_core::patterns::{
    build_tf_dual_pattern, build_tf_dual_refinement, build_tf_pattern, build_tf_refinement,
    collision_certificate, default_leaf_enum, default_pool, extension_condition_failure,
    for_each_refinement, is_multiplicative_on, is_possibility_pattern, refinement_failure, refines,
    search_multiplicative_refinement, subsets_up_to, ExtendedRefinement, Refinement, SearchOptions,
};
use kwb_core::tf_structures::{
    amalgamate, atomic_facts, check_axioms, lift_structure, random_structure, ElemId,
};
use kwb_core::tf_types::{
    consistent_p_type, consistent_q_type, realize_p_params, realize_q_params,
    witness_extension_oracle, Label, PTypeInstance, QTypeInstance, Shape,
};
use kwb_core::tnk::{
    build_tnk_pattern, control_map, free_set_escape, near_forbidden, random_legal_hypergraph,
    support_trace_check, verify_pattern_semantics, Hypergraph, NearForbiddenFamily, TnkPattern,
};
use kwb_core::trees::{
    enumerate_blocking, enumerate_level, enumerate_maximal_subtrees, is_blocking, is_k_maximal,
    GrowthFunction, TreeNode,
};

mod common;

type Check = Result<String, String>;
type Criterion = (&'static str, u64, fn() -> Check);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn growth(v: &[u32]) -> GrowthFunction {
    GrowthFunction::new(v.to_vec()).expect("valid growth table")
}

fn tree_combinatorics() -> Check {
    let f = growth(&[1, 2, 4]);
    let sizes: Vec<usize> = (0..=3)
        .map(|k| enumerate_level(&f, k).map(|l| l.len()))
        .try_collect()
        .map_err(|e| e.to_string())?;
    ensure!(sizes == [1, 2, 6, 30], "level sizes {sizes:?}");
    let succ: Vec<usize> = (0..3).map(|l| f.values()[l] as usize + 1).collect();
    ensure!(succ == [2, 3, 5], "successor counts {succ:?}");
    for (k, want) in [(1, 2u128), (2, 6), (3, 150)] {
        let all = enumerate_maximal_subtrees(&f, k).map_err(|e| e.to_string())?;
        // Each kept node keeps f(l) of its f(l)+1 successors.
        let product: u128 = (0..k)
            .map(|l| {
                let kept: u128 = f.values()[..l].iter().map(|&v| v as u128).product();
                (f.values()[l] as u128 + 1).pow(kept as u32)
            })
            .product();
        let distinct: BTreeSet<_> = all.iter().collect();
        ensure!(
            all.len() as u128 == want && product == want,
            "k={k}: {} enumerated, {product} by product",
            all.len()
        );
        ensure!(distinct.len() == all.len(), "k={k}: duplicates");
        ensure!(
            all.iter().all(|s| is_k_maximal(&f, k, s.nodes())),
            "k={k}: non-maximal member"
        );
    }
    Ok("levels 1,2,6,30; |S_k| 2,6,150".into())
}

fn blocking_duality() -> Check {
    let f = growth(&[1, 2]);
    let leaves = enumerate_level(&f, 2).map_err(|e| e.to_string())?;
    let subtrees = enumerate_maximal_subtrees(&f, 2).map_err(|e| e.to_string())?;
    let mut count = 0;
    for mask in 0u32..1 << leaves.len() {
        let b: BTreeSet<TreeNode> = (0..leaves.len())
            .filter(|i| mask >> i & 1 == 1)
            .map(|i| leaves[i].clone())
            .collect();
        let proper = !b.is_empty() && b.len() < leaves.len();
        let extends = subtrees.iter().any(|s| {
            leaves
                .iter()
                .filter(|l| !b.contains(*l))
                .all(|l| s.contains(l))
        });
        let blocking = is_blocking(&f, 2, &b).map_err(|e| e.to_string())?;
        ensure!(blocking == (proper && extends), "mask {mask:06b}");
        count += blocking as usize;
    }
    let listed = enumerate_blocking(&f, 2).map_err(|e| e.to_string())?.len();
    ensure!(
        count == 12 && listed == 12,
        "count {count}, enumerated {listed}"
    );
    Ok("64 subsets, 12 blocking".into())
}

fn oracle_equivalence() -> Check {
    let f = growth(&[1, 2, 4]);
    let levels: Vec<Vec<TreeNode>> = (0..=3).map(|k| enumerate_level(&f, k).unwrap()).collect();
    let subtrees: Vec<_> = (0..=3)
        .map(|k| enumerate_maximal_subtrees(&f, k).unwrap())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(0xacce);
    for trial in 0..1000 {
        let k = rng.gen_range(0..=3);
        let count = rng.gen_range(0..=10);
        let ids: Vec<ElemId> = (0..count as ElemId).collect();
        if trial % 2 == 0 {
            let t = QTypeInstance {
                f: f.clone(),
                k,
                leaves: (0..count)
                    .map(|_| levels[k][rng.gen_range(0..levels[k].len())].clone())
                    .collect(),
            };
            let m = realize_q_params(&t).map_err(|e| e.to_string())?;
            let oracle = witness_extension_oracle(&m, Shape::Q, &ids).map_err(|e| e.to_string())?;
            ensure!(
                consistent_q_type(&t).unwrap() == oracle.is_some(),
                "Q trial {trial}"
            );
        } else {
            let t = PTypeInstance {
                f: f.clone(),
                k,
                subtrees: (0..count)
                    .map(|_| subtrees[k][rng.gen_range(0..subtrees[k].len())].clone())
                    .collect(),
            };
            let m = realize_p_params(&t).map_err(|e| e.to_string())?;
            let oracle = witness_extension_oracle(&m, Shape::P, &ids).map_err(|e| e.to_string())?;
            ensure!(
                consistent_p_type(&t).unwrap().map(Label::Leaf) == oracle,
                "P trial {trial}"
            );
        }
    }
    Ok("1000 instances agree".into())
}

fn blocking_guarantee() -> Check {
    let mut checked = 0usize;
    for (values, k) in [
        (vec![1], 1),
        (vec![1, 2], 1),
        (vec![1, 2], 2),
        (vec![1, 2, 4], 1),
        (vec![1, 2, 4], 2),
    ] {
        let f = growth(&values);
        let leaves = enumerate_level(&f, k).unwrap();
        for b in enumerate_blocking(&f, k).map_err(|e| e.to_string())? {
            let avoid: Vec<&TreeNode> = leaves.iter().filter(|l| !b.leaves.contains(*l)).collect();
            // A multiset is consistent iff its support is, so supports suffice.
            for mask in 0u32..1 << avoid.len() {
                let chosen = (0..avoid.len())
                    .filter(|i| mask >> i & 1 == 1)
                    .map(|i| avoid[i].clone())
                    .collect();
                let t = QTypeInstance {
                    f: f.clone(),
                    k,
                    leaves: chosen,
                };
                ensure!(
                    consistent_q_type(&t).unwrap(),
                    "f={values:?} k={k} B={:?}",
                    b.leaves
                );
                checked += 1;
            }
        }
    }
    Ok(format!("{checked} avoiding leaf sets consistent"))
}

fn structure_laws() -> Check {
    let f = growth(&[1, 2, 4]);
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    for trial in 0..1000u64 {
        let k = rng.gen_range(0..=3);
        let base = random_structure(
            &f,
            k,
            rng.gen_range(0..=4),
            rng.gen_range(0..=4),
            0.6,
            trial,
        )
        .unwrap();
        let ext = |salt: u64| {
            let extra = random_structure(&f, k, 3, 3, 0.5, trial * 3 + salt).unwrap();
            amalgamate(&base, &extra, &[]).unwrap().structure
        };
        let (m, n) = (ext(1), ext(2));
        let shared: Vec<(ElemId, ElemId)> = base.ids().into_iter().map(|i| (i, i)).collect();
        let out = amalgamate(&m, &n, &shared).map_err(|e| format!("trial {trial}: {e}"))?;
        ensure!(
            check_axioms(&out.structure).is_empty(),
            "amalgam {trial} violates axioms"
        );
        ensure!(
            out.structure.len() == m.len() + n.len() - base.len(),
            "amalgam {trial} size"
        );
    }
    for trial in 0..200u64 {
        let k = rng.gen_range(0..=2);
        let m = random_structure(
            &f,
            k,
            rng.gen_range(0..=6),
            rng.gen_range(0..=6),
            0.7,
            trial,
        )
        .unwrap();
        let up = lift_structure(&m, Some(trial)).map_err(|e| e.to_string())?;
        ensure!(
            up.level() == k + 1 && check_axioms(&up).is_empty(),
            "lift {trial} violates axioms"
        );
        ensure!(
            atomic_facts(&up, k) == atomic_facts(&m, k),
            "lift {trial} changes level-{k} facts"
        );
    }
    Ok("1000 amalgams, 200 lifts".into())
}

fn random_fi(rng: &mut ChaCha8Rng, sizes: &[usize], max: usize) -> FIFunc {
    let d = rng.gen_range(0..=max.min(sizes.len()));
    let domain = rand::seq::index::sample(rng, sizes.len(), d).into_vec();
    domain
        .into_iter()
        .map(|j| (j, rng.gen_range(0..sizes[j])))
        .collect()
}

fn algebra_laws() -> Check {
    let ctx = AlgebraContext::new(vec![2, 3, 2, 4]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0xba);
    let element = |rng: &mut ChaCha8Rng| BAElement::from_predicate(&ctx, |_| rng.gen_bool(0.5));
    for i in 0..1000 {
        let (a, b, c) = (element(&mut rng), element(&mut rng), element(&mut rng));
        let m = |x: &BAElement, y: &BAElement| x.meet(y).unwrap();
        let j = |x: &BAElement, y: &BAElement| x.join(y).unwrap();
        ensure!(
            m(&a, &j(&b, &c)) == j(&m(&a, &b), &m(&a, &c)),
            "distributivity {i}"
        );
        ensure!(
            j(&a, &m(&b, &c)) == m(&j(&a, &b), &j(&a, &c)),
            "dual distributivity {i}"
        );
        ensure!(
            m(&a, &b).complement() == j(&a.complement(), &b.complement()),
            "de Morgan {i}"
        );
        ensure!(
            m(&a, &a.complement()).is_zero() && j(&a, &a.complement()).is_one(),
            "complement {i}"
        );
        ensure!(m(&a, &m(&b, &c)) == m(&m(&a, &b), &c), "associativity {i}");
        ensure!(
            from_fi_dnf(&ctx, &to_fi_dnf(&a)).unwrap() == a,
            "DNF round trip {i}"
        );

        let g = random_fi(&mut rng, ctx.sizes(), 4);
        let h = random_fi(&mut rng, ctx.sizes(), 4);
        let (xg, xh) = (generator(&ctx, &g).unwrap(), generator(&ctx, &h).unwrap());
        ensure!(
            !m(&xg, &xh).is_zero() == g.compatible(&h),
            "compatibility law {i}"
        );
        ensure!(xg.leq(&xh).unwrap() == h.is_subset(&g), "order law {i}");

        let sizes = [4, 4, 4, 4];
        let family: Vec<FIFunc> = (0..rng.gen_range(0..=12))
            .map(|_| random_fi(&mut rng, &sizes, 2))
            .collect();
        let want = rng.gen_range(0..=5);
        let brute = (0..family.len()).combinations(want).find(|ix| {
            ix.iter()
                .try_fold(FIFunc::empty(), |u, &t| u.union(&family[t]))
                .is_some()
        });
        match compatible_subfamily(&family, want) {
            Some(ix) => {
                let union = ix
                    .iter()
                    .try_fold(FIFunc::empty(), |u, &t| u.union(&family[t]));
                ensure!(ix.len() == want && union.is_some(), "unsound subfamily {i}");
            }
            None => ensure!(brute.is_none(), "missed subfamily {i}"),
        }
    }
    Ok("1000 instances".into())
}

fn pattern_cases() -> Vec<(GrowthFunction, usize, usize)> {
    let mut out = Vec::new();
    for values in [vec![1], vec![1, 2]] {
        for depth in 1..=values.len() {
            for n in 1..=4 {
                out.push((growth(&values), depth, n));
            }
        }
    }
    out
}

fn pattern_semantics() -> Check {
    for (f, depth, n) in pattern_cases() {
        let p = build_tf_pattern(&f, depth, n).map_err(|e| e.to_string())?;
        ensure!(
            is_possibility_pattern(&p.pattern),
            "f={f:?} K={depth} n={n}"
        );
    }
    let p = build_tf_pattern(&growth(&[1]), 1, 2).unwrap();
    let meet = p
        .pattern
        .get(&[0])
        .unwrap()
        .meet(p.pattern.get(&[1]).unwrap())
        .unwrap();
    ensure!(
        meet.is_one() && &meet != p.pattern.get(&[0, 1]).unwrap(),
        "certificate did not reproduce"
    );

    let mut choices = 0usize;
    for (f, depth, n) in pattern_cases().into_iter().filter(|c| c.2 <= 3) {
        let p = build_tf_pattern(&f, depth, n).unwrap();
        let pools: Vec<Vec<(FIFunc, BAElement)>> = (0..n)
            .map(|i| default_pool(&p.pattern, i, 1).unwrap())
            .collect();
        let elems: Vec<Vec<BAElement>> = pools
            .iter()
            .map(|pl| pl.iter().map(|x| x.1.clone()).collect())
            .collect();
        let mut passing = Vec::new();
        for choice in pools.iter().map(|pl| 0..pl.len()).multi_cartesian_product() {
            let cands: Vec<FIFunc> = choice
                .iter()
                .enumerate()
                .map(|(i, &c)| pools[i][c].0.clone())
                .collect();
            let cert = collision_certificate(&p.pattern, &cands).unwrap();
            let r = Refinement::new(
                p.pattern.ctx().clone(),
                choice
                    .iter()
                    .enumerate()
                    .map(|(i, &c)| elems[i][c].clone())
                    .collect(),
            )
            .unwrap();
            ensure!(
                cert.as_ref().map(|c| c.0.clone()) == refinement_failure(&r, &p.pattern).unwrap(),
                "disagreement at {choice:?}"
            );
            if cert.is_none() {
                passing.push(choice);
            }
            choices += 1;
        }
        let hit =
            search_multiplicative_refinement(&p.pattern, &elems, SearchOptions::default()).unwrap();
        ensure!(
            hit.map(|h| h.choice) == passing.first().cloned(),
            "search disagrees at n={n}"
        );
        let mut visited = Vec::new();
        for_each_refinement(&p.pattern, &elems, SearchOptions::default(), |c| {
            visited.push(c.to_vec())
        })
        .unwrap();
        ensure!(visited == passing, "enumeration disagrees at n={n}");
    }
    Ok(format!(
        "certificate reproduced; {choices} candidate choices agree"
    ))
}

fn audit(out: &ExtendedRefinement, old: usize, n: usize) -> Result<(), String> {
    let all = subsets_up_to(n, n);
    ensure!(
        is_possibility_pattern(&out.pattern),
        "lifted pattern invalid"
    );
    ensure!(
        refines(&out.refinement, &out.pattern).unwrap(),
        "does not refine"
    );
    ensure!(
        is_multiplicative_on(&out.refinement, &all).unwrap(),
        "not multiplicative"
    );
    let failure = extension_condition_failure(&out.pattern, &out.refinement, old).unwrap();
    ensure!(
        failure.is_none(),
        "extension condition fails at {failure:?}"
    );
    Ok(())
}

fn refinement_constructions() -> Check {
    let mut audited = 0;
    for (f, depth, n) in pattern_cases() {
        let p = build_tf_pattern(&f, depth, n).unwrap();
        let blocking = enumerate_blocking(&f, depth).unwrap();
        let out = build_tf_refinement(&p, &blocking).map_err(|e| e.to_string())?;
        audit(&out, p.pattern.ctx().partition_count(), n)
            .map_err(|e| format!("tf f={f:?} K={depth} n={n}: {e}"))?;
        let d = build_tf_dual_pattern(&f, depth, n).unwrap();
        let out = build_tf_dual_refinement(&d, &default_leaf_enum(&d).unwrap())
            .map_err(|e| e.to_string())?;
        audit(&out, d.pattern.ctx().partition_count(), n)
            .map_err(|e| format!("dual f={f:?} K={depth} n={n}: {e}"))?;
        audited += 2;
    }
    Ok(format!("{audited} constructions audited"))
}

fn tnk_pattern(h: &Hypergraph) -> TnkPattern {
    let fam = NearForbiddenFamily::of(h).unwrap();
    let ctx = fam.context().unwrap();
    build_tnk_pattern(h, &fam, &ctx, None, None).unwrap()
}

fn all_elements(ctx: &Arc<AlgebraContext>) -> Vec<BAElement> {
    (0u32..1 << ctx.atom_count())
        .map(|mask| BAElement::from_predicate(ctx, |a| mask >> a & 1 == 1))
        .collect()
}

fn hypergraph_instance() -> Check {
    let h = Hypergraph::new(3, 2, 3, [vec![0, 1, 2]]).unwrap();
    let p = tnk_pattern(&h);
    let ctx = p.pattern.ctx().clone();
    let w = &p.family.members[0];
    let cover = p.cover_of(w, 2).ok_or("triangle has no cover")?;
    let gw = generator(&ctx, &FIFunc::single(p.family.coords[0], 0)).unwrap();
    ensure!(
        p.pattern.get(&cover).unwrap().is_disjoint(&gw).unwrap(),
        "b_s meets x_g for the triangle cover"
    );
    for pair in cover.iter().copied().combinations(2) {
        ensure!(
            p.pattern.get(&pair).unwrap().is_one(),
            "b_{pair:?} is not 1"
        );
    }

    let mut rng = ChaCha8Rng::seed_from_u64(0x7e7);
    let mut graphs = 0;
    let mut seed = 0;
    while graphs < 100 {
        let vertices = rng.gen_range(3..=8);
        let g = random_legal_hypergraph(3, 2, vertices, rng.gen_range(0.1..0.6), seed).unwrap();
        seed += 1;
        if near_forbidden(&g).unwrap().len() > 10 {
            continue;
        }
        let q = tnk_pattern(&g);
        ensure!(
            is_possibility_pattern(&q.pattern),
            "graph seed {seed}: not a pattern"
        );
        ensure!(
            verify_pattern_semantics(&g, &q).unwrap().is_ok(),
            "graph seed {seed}: semantics mismatch"
        );
        graphs += 1;
    }

    let pools = vec![all_elements(&ctx); p.pattern.n()];
    let opts = SearchOptions {
        require_nonzero: true,
        require_distinguished: false,
    };
    let mut found = 0;
    let mut bad = None;
    for_each_refinement(&p.pattern, &pools, opts, |choice| {
        found += 1;
        let r = Refinement::new(
            ctx.clone(),
            choice
                .iter()
                .enumerate()
                .map(|(i, &c)| pools[i][c].clone())
                .collect(),
        )
        .unwrap();
        let traced = support_trace_check(&p, &r).unwrap();
        let escape = free_set_escape(&p.family, 2, &control_map(&h, &p, &r).unwrap()).unwrap();
        if (!traced || escape.is_some()) && bad.is_none() {
            bad = Some(choice.to_vec());
        }
    })
    .unwrap();
    ensure!(found > 0, "no refinement found on the triangle");
    ensure!(
        bad.is_none(),
        "refinement {bad:?} fails the trace or escapes"
    );
    Ok(format!(
        "triangle instance reproduced; 100 graphs; {found} refinements traced, no escape"
    ))
}

fn determinism() -> Check {
    let bin = env!("CARGO_BIN_EXE_kwb");
    let run = |verb: Verb, params: &str, format: &str, jobs: &str| {
        Proc::new(bin)
            .args([
                verb.name(),
                params,
                "--seed",
                "7",
                "--format",
                format,
                "--jobs",
                jobs,
            ])
            .output()
            .map_err(|e| e.to_string())
    };
    for &verb in Verb::all() {
        let params = common::sample(verb).to_string();
        for format in ["json", "csv"] {
            let a = run(verb, &params, format, "1")?;
            let b = run(verb, &params, format, "4")?;
            ensure!(
                a.status.success(),
                "{} failed: {}",
                verb.name(),
                String::from_utf8_lossy(&a.stderr)
            );
            ensure!(
                a.stdout == b.stdout,
                "{} {format} report differs between runs",
                verb.name()
            );
        }
    }
    Ok(format!(
        "{} verbs byte-identical across runs",
        Verb::all().len()
    ))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("tree combinatorics", 1, tree_combinatorics),
        ("blocking duality", 1, blocking_duality),
        ("oracle equivalence", 10, oracle_equivalence),
        ("blocking guarantee", 5, blocking_guarantee),
        ("structure laws", 60, structure_laws),
        ("Boolean-algebra laws", 10, algebra_laws),
        ("pattern semantics", 10, pattern_semantics),
        ("refinement constructions", 60, refinement_constructions),
        ("hypergraph instance", 120, hypergraph_instance),
        ("determinism", 300, determinism),
    ];
    let suite = Instant::now();
    let mut failed = 0;
    for (i, (name, budget, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        let took = start.elapsed();
        let budget = Duration::from_secs(*budget);
        let verdict = match outcome {
            Ok(detail) if took < budget => format!("PASS  {detail}"),
            Ok(detail) => format!("FAIL  over budget: {detail}"),
            Err(why) => format!("FAIL  {why}"),
        };
        failed += verdict.starts_with("FAIL") as usize;
        println!(
            "criterion {:>2} {name:<26} {verdict} [{took:.2?} / {budget:?}]",
            i + 1
        );
    }
    let total = suite.elapsed();
    println!(
        "acceptance: {} of {} passed in {total:.2?}",
        criteria.len() - failed,
        criteria.len()
    );
    if failed == 0 && total < Duration::from_secs(300) {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
