mod common;

use causal_debias::discovery::{ci_test, discover, Cpdag, DiscoveryConfig, Mark};
use causal_debias::tabular::{ColumnData, ColumnSpec, Dataset};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;
use std::collections::BTreeSet;

fn permute_columns(d: &Dataset, order: &[usize]) -> Dataset {
    Dataset::new(
        d.name.clone(),
        order.iter().map(|&j| d.schema()[j].clone()).collect(),
        order.iter().map(|&j| d.columns()[j].clone()).collect(),
    )
    .unwrap()
}

/// Name-keyed edge set, independent of column order.
fn edge_set(g: &Cpdag) -> BTreeSet<(String, String, Mark)> {
    g.edges.iter().map(|e| (e.a.clone(), e.b.clone(), e.mark)).collect()
}

fn directed_acyclic(g: &Cpdag) -> bool {
    let mut indeg: std::collections::BTreeMap<&str, usize> = g.nodes.iter().map(|n| (n.as_str(), 0)).collect();
    let directed: Vec<_> = g.edges.iter().filter(|e| e.mark == Mark::Directed).collect();
    for e in &directed {
        *indeg.get_mut(e.b.as_str()).unwrap() += 1;
    }
    let mut ready: Vec<&str> = indeg.iter().filter(|(_, &d)| d == 0).map(|(n, _)| *n).collect();
    let mut seen = 0;
    while let Some(u) = ready.pop() {
        seen += 1;
        for e in directed.iter().filter(|e| e.a == u) {
            let d = indeg.get_mut(e.b.as_str()).unwrap();
            *d -= 1;
            if *d == 0 {
                ready.push(e.b.as_str());
            }
        }
    }
    seen == g.nodes.len()
}

/// Random sparse mixed SEM over `m` columns in a random causal order.
fn random_sem(seed: u64, n: usize, m: usize) -> Dataset {
    let mut r = common::rng(seed);
    let mut signal: Vec<Vec<f64>> = Vec::new();
    let mut schema = Vec::new();
    let mut cols = Vec::new();
    for c in 0..m {
        let mut s = vec![0.0; n];
        for prev in &signal {
            if r.gen_bool(0.35) {
                let w = r.gen_range(0.5..1.0) * if r.gen_bool(0.5) { 1.0 } else { -1.0 };
                for i in 0..n {
                    s[i] += w * prev[i];
                }
            }
        }
        let name = format!("V{c}");
        if r.gen_bool(0.3) {
            let v: Vec<u32> = s.iter().map(|x| u32::from(x + common::normal(&mut r) > 0.0)).collect();
            signal.push(v.iter().map(|&b| f64::from(b) * 2.0 - 1.0).collect());
            schema.push(ColumnSpec::nominal(name, ["lo", "hi"]));
            cols.push(ColumnData::Nominal(v));
        } else {
            let v: Vec<f64> = s.iter().map(|x| x + common::normal(&mut r)).collect();
            signal.push(v.clone());
            schema.push(ColumnSpec::numeric(name));
            cols.push(ColumnData::Numeric(v));
        }
    }
    Dataset::new("random_sem", schema, cols).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn discovery_is_column_permutation_invariant(seed in any::<u64>(), m in 3usize..6) {
        let d = random_sem(seed, 400, m);
        let mut order: Vec<usize> = (0..m).collect();
        order.shuffle(&mut common::rng(seed ^ 99));
        let cfg = DiscoveryConfig::default();
        let a = discover(&d, &cfg).unwrap();
        let b = discover(&permute_columns(&d, &order), &cfg).unwrap();
        prop_assert_eq!(edge_set(&a), edge_set(&b));
        prop_assert!(directed_acyclic(&a));
    }

    #[test]
    fn ci_test_is_symmetric(seed in any::<u64>()) {
        let d = random_sem(seed, 300, 4);
        let p1 = ci_test(&d, "V0", "V1", &["V2"]).unwrap();
        let p2 = ci_test(&d, "V1", "V0", &["V2"]).unwrap();
        prop_assert_eq!(p1, p2);
        prop_assert!((0.0..=1.0).contains(&p1));
    }
}

#[test]
fn five_node_sem_recovered() {
    let cfg = DiscoveryConfig::default();
    let mut hits = 0;
    for seed in 0..5 {
        let g = discover(&common::five_node_sem(2000, seed), &cfg).unwrap();
        let ok = g.edges.len() == common::FIVE_NODE_EDGES.len()
            && common::FIVE_NODE_EDGES.iter().all(|(a, b)| g.has_directed(a, b));
        hits += usize::from(ok);
    }
    assert!(hits >= 4, "{hits}/5");
}

#[test]
fn independent_columns_give_empty_graph() {
    let mut r = common::rng(3);
    let cols = (0..2).map(|_| (0..500).map(|_| common::normal(&mut r)).collect()).collect();
    let d = common::numeric_dataset(&["X", "Y"], cols);
    let g = discover(&d, &DiscoveryConfig::default()).unwrap();
    assert!(g.edges.is_empty());
}
