use std::collections::BTreeSet;

use itertools::Itertools;
use kwb_core::indep_ba::{AlgebraContext, BAElement};
use kwb_core::patterns::{for_each_refinement, is_possibility_pattern, SearchOptions};
use kwb_core::tnk::{
    build_tnk_pattern, consistent_type_tnk, control_map, free_set_escape, is_legal, near_forbidden,
    random_legal_hypergraph, support_trace_check, verify_pattern_semantics, with_apex, Hypergraph,
    NearForbiddenFamily, TnkPattern, VertexSet,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Every `size`-set whose `(k+1)`-subsets are all edges, by scanning all
/// vertex subsets.
fn scan_complete(h: &Hypergraph, size: usize) -> Vec<VertexSet> {
    (0..h.vertex_count())
        .combinations(size)
        .filter(|w| {
            w.iter()
                .copied()
                .combinations(h.k() + 1)
                .all(|e| h.has_edge(&e))
        })
        .collect()
}

fn random_graph(n: usize, k: usize, rng: &mut ChaCha8Rng) -> Hypergraph {
    let vertices = rng.gen_range(k + 1..=8);
    let edges: Vec<VertexSet> = (0..vertices)
        .combinations(k + 1)
        .filter(|_| rng.gen_bool(0.5))
        .collect();
    Hypergraph::new(n, k, vertices, edges).unwrap()
}

#[test]
fn legality_and_near_forbidden_match_scans() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for (n, k) in [(3, 2), (2, 1), (4, 2), (3, 1)] {
        for _ in 0..150 {
            let h = random_graph(n, k, &mut rng);
            let forbidden = scan_complete(&h, n + 1);
            assert_eq!(is_legal(&h), forbidden.is_empty());
            match near_forbidden(&h) {
                Ok(nf) => assert_eq!(nf, scan_complete(&h, n)),
                Err(_) => assert!(!forbidden.is_empty()),
            }
        }
    }
}

#[test]
fn pruned_random_graphs_are_legal() {
    for seed in 0..100 {
        let h = random_legal_hypergraph(3, 2, 6, 0.7, seed).unwrap();
        assert!(is_legal(&h));
        // Each near-forbidden set plus a fully joined apex is forbidden.
        for w in near_forbidden(&h).unwrap() {
            let cover: Vec<VertexSet> = w.iter().copied().combinations(2).collect();
            assert!(!is_legal(&with_apex(&h, &cover).unwrap()));
        }
    }
}

#[test]
fn type_consistency_is_apex_legality() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for (n, k) in [(3, 2), (4, 2), (2, 1)] {
        for seed in 0..60 {
            let h = random_legal_hypergraph(n, k, rng.gen_range(k + 1..=7), 0.6, seed).unwrap();
            let ksets = h.k_sets();
            for _ in 0..10 {
                let v: Vec<VertexSet> = ksets
                    .iter()
                    .filter(|_| rng.gen_bool(0.5))
                    .cloned()
                    .collect();
                assert_eq!(
                    consistent_type_tnk(&h, &v).unwrap(),
                    is_legal(&with_apex(&h, &v).unwrap())
                );
            }
        }
    }
}

fn pattern_for(h: &Hypergraph) -> TnkPattern {
    let fam = NearForbiddenFamily::of(h).unwrap();
    let ctx = fam.context().unwrap();
    build_tnk_pattern(h, &fam, &ctx, None, None).unwrap()
}

/// Legal graphs with at most `max_family` near-forbidden sets, drawn in seed
/// order.
fn small_family_graphs(n: usize, k: usize, count: usize, max_family: usize) -> Vec<Hypergraph> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut out = Vec::new();
    let mut seed = 0;
    while out.len() < count {
        let vertices = rng.gen_range(k + 1..=8);
        let h = random_legal_hypergraph(n, k, vertices, rng.gen_range(0.1..0.6), seed).unwrap();
        seed += 1;
        if near_forbidden(&h).unwrap().len() <= max_family {
            out.push(h);
        }
    }
    out
}

#[test]
fn pattern_semantics_on_random_graphs() {
    for h in small_family_graphs(3, 2, 100, 10) {
        let p = pattern_for(&h);
        assert!(is_possibility_pattern(&p.pattern));
        assert_eq!(verify_pattern_semantics(&h, &p).unwrap(), Ok(()));
    }
}

/// For `n > k+1` a mismatch can only come from an absent member all of whose
/// edges lie inside present members.
#[test]
fn wider_configurations_fail_only_when_edges_are_shared() {
    let mut mismatches = 0;
    for h in small_family_graphs(4, 2, 40, 8) {
        let p = pattern_for(&h);
        if let Err(m) = verify_pattern_semantics(&h, &p).unwrap() {
            mismatches += 1;
            let present: Vec<&VertexSet> = p
                .family
                .members
                .iter()
                .zip(&p.family.coords)
                .filter(|(_, &c)| m.atom[c] == 0)
                .map(|(w, _)| w)
                .collect();
            let shielded = p
                .family
                .members
                .iter()
                .zip(&p.family.coords)
                .any(|(w, &c)| {
                    m.atom[c] != 0
                        && w.iter()
                            .copied()
                            .combinations(3)
                            .all(|e| present.iter().any(|x| e.iter().all(|v| x.contains(v))))
                });
            assert!(shielded);
        }
    }
    eprintln!("n=4, k=2 sweep: {mismatches} of 40 graphs disagree");
}

fn all_elements(ctx: &std::sync::Arc<AlgebraContext>) -> Vec<BAElement> {
    let n = ctx.atom_count();
    (0u32..(1 << n))
        .map(|mask| BAElement::from_predicate(ctx, |a| mask >> a & 1 == 1))
        .collect()
}

#[test]
fn every_refinement_traces_its_supports() {
    let opts = SearchOptions {
        require_nonzero: true,
        require_distinguished: false,
    };
    // A single triangle, with every algebra element as a candidate.
    let h = Hypergraph::new(3, 2, 3, [vec![0, 1, 2]]).unwrap();
    let p = pattern_for(&h);
    let pools = vec![all_elements(p.pattern.ctx()); 3];
    let mut found = 0;
    for_each_refinement(&p.pattern, &pools, opts, |choice| {
        let r = kwb_core::patterns::Refinement::new(
            p.pattern.ctx().clone(),
            choice
                .iter()
                .enumerate()
                .map(|(i, &c)| pools[i][c].clone())
                .collect(),
        )
        .unwrap();
        assert!(support_trace_check(&p, &r).unwrap());
        let f = control_map(&h, &p, &r).unwrap();
        assert_eq!(free_set_escape(&p.family, 2, &f).unwrap(), None);
        found += 1;
    })
    .unwrap();
    assert!(found > 0);

    // Two triangles sharing an edge: two members, six formula indices.
    let h = Hypergraph::new(3, 2, 4, [vec![0, 1, 2], vec![0, 1, 3]]).unwrap();
    let p = pattern_for(&h);
    assert_eq!(p.family.members.len(), 2);
    assert_eq!(p.formulas.len(), 6);
    let pools = vec![
        all_elements(p.pattern.ctx())
            .into_iter()
            .skip(1)
            .collect::<Vec<_>>();
        6
    ];
    let mut found = 0;
    for_each_refinement(&p.pattern, &pools, opts, |choice| {
        let r = kwb_core::patterns::Refinement::new(
            p.pattern.ctx().clone(),
            choice
                .iter()
                .enumerate()
                .map(|(i, &c)| pools[i][c].clone())
                .collect(),
        )
        .unwrap();
        assert!(support_trace_check(&p, &r).unwrap());
        found += 1;
    })
    .unwrap();
    assert!(found > 0);
}

#[test]
fn covers_drive_entries() {
    let h = Hypergraph::new(3, 2, 5, [vec![0, 1, 2], vec![2, 3, 4]]).unwrap();
    let p = pattern_for(&h);
    for (s, b) in p.pattern.entries() {
        let chosen: BTreeSet<&VertexSet> = s.iter().map(|&i| &p.formulas[i]).collect();
        let killed = p
            .family
            .members
            .iter()
            .filter(|w| {
                w.iter()
                    .copied()
                    .combinations(2)
                    .all(|c| chosen.contains(&c))
            })
            .count();
        assert_eq!(b.atom_count(), 4 >> killed);
    }
}
