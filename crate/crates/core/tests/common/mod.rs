#![allow(dead_code)]

use causal_debias::tabular::{ColumnData, ColumnSpec, Dataset};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(r: &mut ChaCha8Rng) -> f64 {
    r.sample(StandardNormal)
}

/// Five-node linear-Gaussian SEM: A → C ← B, C → D, C → E.
/// The CPDAG is fully directed.
pub fn five_node_sem(n: usize, seed: u64) -> Dataset {
    let mut r = rng(seed);
    let mut cols = vec![Vec::with_capacity(n); 5];
    for _ in 0..n {
        let a = normal(&mut r);
        let b = normal(&mut r);
        let c = 0.8 * a - 0.7 * b + normal(&mut r);
        let d = 0.9 * c + normal(&mut r);
        let e = -0.6 * c + normal(&mut r);
        for (col, v) in cols.iter_mut().zip([a, b, c, d, e]) {
            col.push(v);
        }
    }
    numeric_dataset(&["A", "B", "C", "D", "E"], cols)
}

pub const FIVE_NODE_EDGES: [(&str, &str); 4] = [("A", "C"), ("B", "C"), ("C", "D"), ("C", "E")];

pub fn numeric_dataset(names: &[&str], cols: Vec<Vec<f64>>) -> Dataset {
    Dataset::new(
        "fixture",
        names.iter().map(|n| ColumnSpec::numeric(*n)).collect(),
        cols.into_iter().map(ColumnData::Numeric).collect(),
    )
    .unwrap()
}

/// Binary Gender and Job with P(Y | Female) = 0.2, P(Y | Male) = 0.6.
pub fn gender_job(n: usize, seed: u64) -> Dataset {
    let mut r = rng(seed);
    let mut g = Vec::with_capacity(n);
    let mut j = Vec::with_capacity(n);
    for _ in 0..n {
        let male = r.gen_bool(0.5);
        let p = if male { 0.6 } else { 0.2 };
        g.push(u32::from(male));
        j.push(u32::from(r.gen_bool(p)));
    }
    let mut d = Dataset::new(
        "toy",
        vec![
            ColumnSpec::nominal("Gender", ["Female", "Male"]),
            ColumnSpec::nominal("Job", ["N", "Y"]),
        ],
        vec![ColumnData::Nominal(g), ColumnData::Nominal(j)],
    )
    .unwrap();
    d.set_label("Job", Some("Y")).unwrap();
    d
}
