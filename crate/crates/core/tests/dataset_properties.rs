use std::collections::{HashMap, HashSet};

use proptest::prelude::*;
use setloss::autodiff::Matrix;
use setloss::datasets::padding::{dummy_row, flag_first_bits};
use setloss::datasets::puzzle::{all_states, STATE_COUNT};
use setloss::datasets::{
    enumerate_clauses, make_scenario, pad_with_dummies, sample_states, strip_dummies, BodyOrder, ClauseExample,
    KnowledgeGraph, ScenarioConfig,
};
use setloss::losses::ObjectSet;

fn row_multiset(m: &Matrix) -> HashMap<Vec<u64>, usize> {
    let mut out = HashMap::new();
    for r in m.row_iter() {
        *out.entry(r.iter().map(|v| v.to_bits()).collect()).or_default() += 1;
    }
    out
}

fn graph_from(n: usize, edges: &[(usize, usize)]) -> KnowledgeGraph {
    let mut g = KnowledgeGraph::new();
    for i in 0..n {
        g.add_entity(&format!("e{i}"));
    }
    for &(a, b) in edges {
        if a != b {
            g.add_edge(a, b).unwrap();
        }
    }
    g
}

/// Counts walks of `hops` steps over distinct nodes by trying every tuple.
fn brute_force_walks(n: usize, edges: &[(usize, usize)], hops: usize) -> usize {
    let adjacent: HashSet<(usize, usize)> =
        edges.iter().filter(|(a, b)| a != b).flat_map(|&(a, b)| [(a, b), (b, a)]).collect();
    let total = n.pow(hops as u32 + 1);
    (0..total)
        .filter(|&code| {
            let mut tuple = Vec::with_capacity(hops + 1);
            let mut c = code;
            for _ in 0..=hops {
                tuple.push(c % n);
                c /= n;
            }
            let distinct = tuple.iter().collect::<HashSet<_>>().len() == tuple.len();
            distinct && tuple.windows(2).all(|w| adjacent.contains(&(w[0], w[1])))
        })
        .count()
}

#[test]
fn exhaustive_enumeration_has_every_state_once() {
    let mut seen = HashSet::with_capacity(STATE_COUNT);
    let mut count = 0;
    for state in all_states() {
        let m = state.encode().into_matrix();
        seen.insert(m.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        count += 1;
    }
    assert_eq!(count, 362_880);
    assert_eq!(seen.len(), 362_880);
}

#[test]
fn dummy_patterns_for_five_features() {
    let bits: Vec<String> = (0..5).map(|k| flag_first_bits(&dummy_row(k, 5))).collect();
    assert_eq!(bits, ["100000", "100001", "100010", "100011", "100100"]);
    assert_eq!(flag_first_bits(&dummy_row(31, 5)), "111111");
}

#[test]
fn synthetic_two_hop_count_is_the_degree_sum() {
    let g = KnowledgeGraph::synthetic_default();
    assert_eq!(g.entity_count(), 163);
    let expect: usize = (0..163).map(|v| g.degree(v) * g.degree(v).saturating_sub(1)).sum();
    let clauses = enumerate_clauses(&g, 2).unwrap();
    assert_eq!(clauses.len(), expect);
    for c in &clauses {
        let e = g.entity_count();
        let head = ClauseExample::decode_head(&c.head_vector(e), 2, e).unwrap();
        assert_eq!(&head, c);
        for order in [BodyOrder::Chain, BodyOrder::Canonical] {
            let mut decoded = ClauseExample::decode_body(&c.body_matrix(e, order), e).unwrap();
            let mut body = c.body();
            decoded.sort();
            body.sort();
            assert_eq!(decoded, body);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn enumeration_matches_brute_force_walks(
        n in 2usize..=20,
        edges in prop::collection::vec((0usize..20, 0usize..20), 0..40),
        hops in 2usize..=3,
    ) {
        let edges: Vec<(usize, usize)> = edges.into_iter().map(|(a, b)| (a % n, b % n)).collect();
        let g = graph_from(n, &edges);
        let clauses = enumerate_clauses(&g, hops).unwrap();
        prop_assert_eq!(clauses.len(), brute_force_walks(n, &edges, hops));
        let distinct: HashSet<_> = clauses.iter().collect();
        prop_assert_eq!(distinct.len(), clauses.len());
    }

    #[test]
    fn sampled_states_are_binary_and_duplicate_free(count in 1usize..200, seed in any::<u64>(), solvable in any::<bool>()) {
        let states = sample_states(count, seed, solvable).unwrap();
        prop_assert_eq!(states.len(), count);
        let distinct: HashSet<_> = states.iter().map(|s| *s.tiles()).collect();
        prop_assert_eq!(distinct.len(), count);
        for s in &states {
            let set = s.encode();
            prop_assert!(set.values().data().iter().all(|&v| v == 0.0 || v == 1.0));
            prop_assert!(set.is_duplicate_free());
            prop_assert!(!solvable || s.is_solvable());
        }
    }

    #[test]
    fn scenarios_only_reorder_rows(index in 1u8..=4, seed in any::<u64>(), count in 1usize..6) {
        let sets: Vec<ObjectSet> = sample_states(count, seed, false).unwrap().iter().map(|s| s.encode()).collect();
        let cfg = ScenarioConfig::numbered(index, seed).unwrap();
        let pairs = make_scenario(&sets, &cfg).unwrap();
        prop_assert_eq!(pairs.len(), count * cfg.repetition);
        for (k, (x, y)) in pairs.inputs.iter().zip(&pairs.targets).enumerate() {
            let original = sets[k % count].values();
            prop_assert_eq!(row_multiset(x), row_multiset(y));
            prop_assert_eq!(row_multiset(x), row_multiset(original));
        }
    }

    #[test]
    fn padding_is_injective_and_reversible(
        a in prop::collection::hash_set(0usize..32, 0..=6),
        b in prop::collection::hash_set(0usize..32, 0..=6),
    ) {
        let encode = |s: &HashSet<usize>| {
            let mut ids: Vec<usize> = s.iter().copied().collect();
            ids.sort_unstable();
            let rows: Vec<Vec<f64>> = ids.iter().map(|&k| (0..5).map(|bit| ((k >> bit) & 1) as f64).collect()).collect();
            let m = if rows.is_empty() { Matrix::zeros(0, 5) } else { Matrix::from_rows(&rows).unwrap() };
            ObjectSet::new(m).unwrap()
        };
        let (sa, sb) = (encode(&a), encode(&b));
        let (pa, pb) = (pad_with_dummies(&sa, 6).unwrap(), pad_with_dummies(&sb, 6).unwrap());
        prop_assert_eq!(pa.values().shape(), (6, 6));
        prop_assert!(pa.is_duplicate_free());
        prop_assert_eq!(a == b, row_multiset(pa.values()) == row_multiset(pb.values()));
        let stripped = strip_dummies(&pa).unwrap();
        prop_assert_eq!(stripped.values(), sa.values());
    }
}
