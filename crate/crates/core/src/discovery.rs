//! PC-stable causal discovery over mixed numeric/nominal data.
//!
//! Nodes are processed in lexicographic name order everywhere, so the
//! output does not depend on the dataset's column order.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::regression::{self, LOGIT_MAX_ITER, LOGIT_RIDGE, LOGIT_TOL};
use crate::tabular::{ColumnData, Dataset, Encoder};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscoveryConfig {
    /// p-value threshold; an edge is removed when some test has p > alpha.
    pub alpha: f64,
    /// Largest conditioning set tried; `None` means unbounded.
    pub max_cond_size: Option<usize>,
    /// Reserved for tie ordering; iteration is already lexicographic.
    pub seed: u64,
}

impl Default for DiscoveryConfig {
    fn default() -> Self {
        DiscoveryConfig {
            alpha: 0.01,
            max_cond_size: None,
            seed: 0,
        }
    }
}

impl DiscoveryConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mark {
    Undirected,
    Directed,
}

/// Edge of a CPDAG. Undirected edges store `a < b` by name; directed edges
/// point `a -> b`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CpdagEdge {
    pub a: String,
    pub b: String,
    pub mark: Mark,
}

/// Partially directed acyclic graph produced by discovery.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Cpdag {
    pub nodes: Vec<String>,
    pub edges: Vec<CpdagEdge>,
    /// Separating set for each removed pair `(a, b)` with `a < b`.
    pub sepsets: BTreeMap<(String, String), Vec<String>>,
    /// Tests that could not be evaluated.
    pub warnings: Vec<String>,
}

impl Cpdag {
    pub fn adjacent(&self, x: &str, y: &str) -> bool {
        self.edges
            .iter()
            .any(|e| (e.a == x && e.b == y) || (e.a == y && e.b == x))
    }

    pub fn has_directed(&self, from: &str, to: &str) -> bool {
        self.edges
            .iter()
            .any(|e| e.mark == Mark::Directed && e.a == from && e.b == to)
    }

    pub fn has_undirected(&self, x: &str, y: &str) -> bool {
        let (a, b) = ordered(x, y);
        self.edges
            .iter()
            .any(|e| e.mark == Mark::Undirected && e.a == a && e.b == b)
    }

    /// Unordered adjacency pairs `(a, b)` with `a < b`.
    pub fn skeleton(&self) -> BTreeSet<(String, String)> {
        self.edges
            .iter()
            .map(|e| {
                let (a, b) = ordered(&e.a, &e.b);
                (a.to_string(), b.to_string())
            })
            .collect()
    }
}

fn ordered<'a>(x: &'a str, y: &'a str) -> (&'a str, &'a str) {
    if x <= y {
        (x, y)
    } else {
        (y, x)
    }
}

/// One direction of the symmetric test: deviance of `target` on `cond`
/// versus `cond ∪ {other}`. Returns `None` for a degenerate nominal target.
fn directional_p(data: &Dataset, target: &str, other: &str, cond: &[&str]) -> Result<Option<f64>> {
    let null_enc = Encoder::fit(data, cond, false)?;
    let mut full_cols: Vec<&str> = cond.to_vec();
    full_cols.push(other);
    let full_enc = Encoder::fit(data, &full_cols, false)?;
    let x0 = null_enc.transform(data)?;
    let x1 = full_enc.transform(data)?;
    let added = x1.ncols() - x0.ncols();
    if added == 0 {
        return Ok(Some(1.0));
    }
    let n = data.n_rows();
    let (deviance, df) = match data.column(target)? {
        ColumnData::Numeric(y) => {
            let r0 = regression::ols(&x0, y).rss;
            let r1 = regression::ols(&x1, y).rss;
            if r0 <= 0.0 || r1 <= 0.0 {
                // An exact fit under the null leaves nothing to explain.
                let d = if r0 <= 0.0 { 0.0 } else { f64::INFINITY };
                (d, added)
            } else {
                (n as f64 * (r0 / r1).ln(), added)
            }
        }
        ColumnData::Nominal(y) => {
            let observed: BTreeSet<u32> = y.iter().copied().collect();
            if observed.len() < 2 {
                return Ok(None);
            }
            // Compact to the observed levels so absent levels do not stall the fit.
            let remap: BTreeMap<u32, u32> = observed.iter().enumerate().map(|(i, &l)| (l, i as u32)).collect();
            let codes: Vec<u32> = y.iter().map(|c| remap[c]).collect();
            let levels = observed.len();
            let f0 = regression::multinomial_logit(&x0, &codes, levels, 0, LOGIT_RIDGE, LOGIT_MAX_ITER, LOGIT_TOL);
            let f1 = regression::multinomial_logit(&x1, &codes, levels, 0, LOGIT_RIDGE, LOGIT_MAX_ITER, LOGIT_TOL);
            (2.0 * (f1.log_likelihood - f0.log_likelihood), added * (levels - 1))
        }
    };
    let deviance = deviance.max(0.0);
    if deviance.is_infinite() {
        return Ok(Some(0.0));
    }
    let chi = ChiSquared::new(df as f64).map_err(|e| Error::Config(e.to_string()))?;
    Ok(Some(chi.sf(deviance).clamp(0.0, 1.0)))
}

/// Symmetric likelihood-ratio conditional-independence test of `x ⟂ y | z`.
///
/// Fits `x` on `z` and on `z ∪ {y}` (OLS for numeric `x`, multinomial logit
/// for nominal `x`), converts the deviance difference to a chi-square
/// p-value, repeats with the roles of `x` and `y` swapped, and returns the
/// larger p-value. A nominal target with a single observed level yields 1.
pub fn ci_test(data: &Dataset, x: &str, y: &str, z: &[&str]) -> Result<f64> {
    if x == y {
        return Err(Error::Config("ci_test needs two distinct columns".into()));
    }
    if z.contains(&x) || z.contains(&y) {
        return Err(Error::Config("conditioning set must exclude the tested pair".into()));
    }
    let (first, second) = ordered(x, y);
    let mut cond: Vec<&str> = z.to_vec();
    cond.sort_unstable();
    cond.dedup();
    let p1 = directional_p(data, first, second, &cond)?;
    let p2 = directional_p(data, second, first, &cond)?;
    Ok(match (p1, p2) {
        (None, _) | (_, None) => 1.0,
        (Some(a), Some(b)) => a.max(b),
    })
}

/// All size-`k` subsets of `items` in lexicographic order.
fn subsets<T: Clone>(items: &[T], k: usize) -> Vec<Vec<T>> {
    let len = items.len();
    let mut out = Vec::new();
    if k > len {
        return out;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.iter().map(|&i| items[i].clone()).collect());
        let mut i = k;
        while i > 0 && idx[i - 1] == len - k + i - 1 {
            i -= 1;
        }
        if i == 0 {
            return out;
        }
        idx[i - 1] += 1;
        for j in i..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// PC-stable skeleton search. Returns a CPDAG with undirected edges only.
///
/// At each level ℓ the adjacency sets are frozen; every adjacent pair is
/// tested against all size-ℓ subsets of either endpoint's other frozen
/// neighbours (lexicographic order), and the first subset with p > alpha
/// becomes the pair's separating set. Removals apply at the end of the level.
pub fn pc_skeleton(data: &Dataset, cfg: &DiscoveryConfig) -> Result<Cpdag> {
    cfg.validate()?;
    let mut nodes: Vec<String> = data.column_names().map(str::to_string).collect();
    nodes.sort();
    let m = nodes.len();
    if m < 2 {
        return Err(Error::Config("discovery needs at least two columns".into()));
    }
    let max_level = cfg.max_cond_size.unwrap_or(m - 2);
    let mut adj: Vec<BTreeSet<usize>> = (0..m).map(|i| (0..m).filter(|&j| j != i).collect()).collect();
    let mut sepsets = BTreeMap::new();
    let mut warnings = Vec::new();

    let mut level = 0usize;
    loop {
        if level > max_level || adj.iter().all(|a| a.len() <= level) {
            break;
        }
        let frozen = adj.clone();
        let pairs: Vec<(usize, usize)> = (0..m)
            .flat_map(|i| frozen[i].iter().filter(move |&&j| j > i).map(move |&j| (i, j)))
            .collect();
        type PairOutcome = (usize, usize, Option<Vec<usize>>, Vec<String>);
        let outcomes: Vec<PairOutcome> = pairs
            .par_iter()
            .map(|&(i, j)| {
                let mut warn = Vec::new();
                let mut candidates: BTreeSet<Vec<usize>> = BTreeSet::new();
                for (u, v) in [(i, j), (j, i)] {
                    let others: Vec<usize> = frozen[u].iter().copied().filter(|&k| k != v).collect();
                    if others.len() >= level {
                        candidates.extend(subsets(&others, level));
                    }
                }
                for cond in candidates {
                    let names: Vec<&str> = cond.iter().map(|&k| nodes[k].as_str()).collect();
                    match ci_test(data, &nodes[i], &nodes[j], &names) {
                        Ok(p) if p > cfg.alpha => return (i, j, Some(cond), warn),
                        Ok(_) => {}
                        Err(e) => warn.push(format!("skipped test {} ⟂ {} | {:?}: {e}", nodes[i], nodes[j], names)),
                    }
                }
                (i, j, None, warn)
            })
            .collect();
        for (i, j, sep, warn) in outcomes {
            warnings.extend(warn);
            if let Some(sep) = sep {
                adj[i].remove(&j);
                adj[j].remove(&i);
                sepsets.insert(
                    (nodes[i].clone(), nodes[j].clone()),
                    sep.iter().map(|&k| nodes[k].clone()).collect(),
                );
            }
        }
        level += 1;
    }

    let mut edges = Vec::new();
    for i in 0..m {
        for &j in adj[i].iter().filter(|&&j| j > i) {
            edges.push(CpdagEdge {
                a: nodes[i].clone(),
                b: nodes[j].clone(),
                mark: Mark::Undirected,
            });
        }
    }
    Ok(Cpdag {
        nodes,
        edges,
        sepsets,
        warnings,
    })
}

/// Dense working representation used during orientation.
#[derive(Clone)]
struct Pdag {
    n: usize,
    // undirected is symmetric; directed[i][j] means i -> j
    undirected: Vec<Vec<bool>>,
    directed: Vec<Vec<bool>>,
}

impl Pdag {
    fn adjacent(&self, i: usize, j: usize) -> bool {
        self.undirected[i][j] || self.directed[i][j] || self.directed[j][i]
    }

    fn orient(&mut self, from: usize, to: usize) {
        self.undirected[from][to] = false;
        self.undirected[to][from] = false;
        self.directed[from][to] = true;
    }

    /// Is `to` reachable from `from` along directed edges?
    fn reaches(&self, from: usize, to: usize) -> bool {
        let mut seen = vec![false; self.n];
        let mut stack = vec![from];
        while let Some(u) = stack.pop() {
            if u == to {
                return true;
            }
            if std::mem::replace(&mut seen[u], true) {
                continue;
            }
            stack.extend((0..self.n).filter(|&v| self.directed[u][v]));
        }
        false
    }

    fn find_cycle(&self) -> Option<Vec<usize>> {
        // colour: 0 new, 1 on stack, 2 done
        fn dfs(g: &Pdag, u: usize, colour: &mut [u8], stack: &mut Vec<usize>) -> Option<Vec<usize>> {
            colour[u] = 1;
            stack.push(u);
            for v in 0..g.n {
                if !g.directed[u][v] {
                    continue;
                }
                if colour[v] == 1 {
                    let start = stack.iter().position(|&x| x == v).expect("on stack");
                    return Some(stack[start..].to_vec());
                }
                if colour[v] == 0 {
                    if let Some(c) = dfs(g, v, colour, stack) {
                        return Some(c);
                    }
                }
            }
            stack.pop();
            colour[u] = 2;
            None
        }
        let mut colour = vec![0u8; self.n];
        for s in 0..self.n {
            if colour[s] == 0 {
                let mut stack = Vec::new();
                if let Some(c) = dfs(self, s, &mut colour, &mut stack) {
                    return Some(c);
                }
            }
        }
        None
    }
}

/// Orient a skeleton: v-structures first, then Meek rules R1–R4 to a
/// fixpoint. Pairs that v-structures would orient both ways, and any
/// directed cycle left by conflicting colliders, stay undirected.
pub fn orient(skeleton: &Cpdag) -> Cpdag {
    let mut nodes = skeleton.nodes.clone();
    nodes.sort();
    let n = nodes.len();
    let index: BTreeMap<&str, usize> = nodes.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let mut g = Pdag {
        n,
        undirected: vec![vec![false; n]; n],
        directed: vec![vec![false; n]; n],
    };
    for e in &skeleton.edges {
        let (i, j) = (index[e.a.as_str()], index[e.b.as_str()]);
        match e.mark {
            Mark::Undirected => {
                g.undirected[i][j] = true;
                g.undirected[j][i] = true;
            }
            Mark::Directed => g.directed[i][j] = true,
        }
    }

    // V-structures: collect every demanded orientation before applying any.
    let mut demanded: BTreeSet<(usize, usize)> = BTreeSet::new();
    for b in 0..n {
        let neigh: Vec<usize> = (0..n).filter(|&k| g.undirected[b][k]).collect();
        for (ai, &a) in neigh.iter().enumerate() {
            for &c in &neigh[ai + 1..] {
                if g.adjacent(a, c) {
                    continue;
                }
                let key = (nodes[a].clone(), nodes[c].clone());
                let separated_by_b = skeleton
                    .sepsets
                    .get(&key)
                    .map(|s| s.iter().any(|x| x == &nodes[b]))
                    .unwrap_or(false);
                if !separated_by_b {
                    demanded.insert((a, b));
                    demanded.insert((c, b));
                }
            }
        }
    }
    // Pairs demanded both ways stay undirected and are left to the user.
    let mut locked = vec![vec![false; n]; n];
    for &(from, to) in &demanded {
        if demanded.contains(&(to, from)) {
            locked[from][to] = true;
        } else {
            g.orient(from, to);
        }
    }
    // Conflicting colliders can close a directed cycle; undo the cycle.
    while let Some(cycle) = g.find_cycle() {
        for w in 0..cycle.len() {
            let (u, v) = (cycle[w], cycle[(w + 1) % cycle.len()]);
            g.directed[u][v] = false;
            g.undirected[u][v] = true;
            g.undirected[v][u] = true;
            locked[u][v] = true;
            locked[v][u] = true;
        }
    }

    meek(&mut g, &locked);

    let mut edges = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if g.directed[i][j] {
                edges.push(CpdagEdge {
                    a: nodes[i].clone(),
                    b: nodes[j].clone(),
                    mark: Mark::Directed,
                });
            } else if i < j && g.undirected[i][j] {
                edges.push(CpdagEdge {
                    a: nodes[i].clone(),
                    b: nodes[j].clone(),
                    mark: Mark::Undirected,
                });
            }
        }
    }
    edges.sort();
    Cpdag {
        nodes: skeleton.nodes.clone(),
        edges,
        sepsets: skeleton.sepsets.clone(),
        warnings: skeleton.warnings.clone(),
    }
}

fn meek(g: &mut Pdag, locked: &[Vec<bool>]) {
    let n = g.n;
    loop {
        let mut changed = false;
        for i in 0..n {
            for j in 0..n {
                if !g.undirected[i][j] || locked[i][j] {
                    continue;
                }
                if meek_orients(g, i, j) && !g.reaches(j, i) {
                    g.orient(i, j);
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
}

/// Whether one of Meek's rules orients the undirected edge `i - j` as `i → j`.
fn meek_orients(g: &Pdag, i: usize, j: usize) -> bool {
    let n = g.n;
    // R1: k → i, k and j non-adjacent.
    if (0..n).any(|k| k != j && g.directed[k][i] && !g.adjacent(k, j)) {
        return true;
    }
    // R2: i → k → j.
    if (0..n).any(|k| g.directed[i][k] && g.directed[k][j]) {
        return true;
    }
    // R3: i - k → j and i - l → j with k, l non-adjacent.
    let mids: Vec<usize> = (0..n).filter(|&k| g.undirected[i][k] && g.directed[k][j]).collect();
    for (a, &k) in mids.iter().enumerate() {
        for &l in &mids[a + 1..] {
            if !g.adjacent(k, l) {
                return true;
            }
        }
    }
    // R4: i - k → l → j with k and j non-adjacent, i adjacent to l.
    for k in 0..n {
        if !g.undirected[i][k] || g.adjacent(k, j) {
            continue;
        }
        if (0..n).any(|l| g.directed[k][l] && g.directed[l][j] && g.adjacent(i, l)) {
            return true;
        }
    }
    false
}

/// Skeleton search followed by orientation.
pub fn discover(data: &Dataset, cfg: &DiscoveryConfig) -> Result<Cpdag> {
    let skeleton = pc_skeleton(data, cfg)?;
    Ok(orient(&skeleton))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subsets_in_lexicographic_order() {
        let items = [1, 2, 3, 4];
        assert_eq!(subsets(&items, 0), vec![Vec::<i32>::new()]);
        assert_eq!(subsets(&items, 2).len(), 6);
        assert_eq!(subsets(&items, 2)[0], vec![1, 2]);
        assert_eq!(subsets(&items, 2)[5], vec![3, 4]);
        assert_eq!(subsets(&items, 4), vec![vec![1, 2, 3, 4]]);
        assert!(subsets(&items, 5).is_empty());
        assert_eq!(subsets(&[7], 1), vec![vec![7]]);
    }

    fn skel(nodes: &[&str], pairs: &[(&str, &str)], seps: &[((&str, &str), &[&str])]) -> Cpdag {
        Cpdag {
            nodes: nodes.iter().map(|s| s.to_string()).collect(),
            edges: pairs
                .iter()
                .map(|(a, b)| CpdagEdge {
                    a: a.to_string(),
                    b: b.to_string(),
                    mark: Mark::Undirected,
                })
                .collect(),
            sepsets: seps
                .iter()
                .map(|((a, b), s)| ((a.to_string(), b.to_string()), s.iter().map(|x| x.to_string()).collect()))
                .collect(),
            warnings: vec![],
        }
    }

    #[test]
    fn collider_is_oriented() {
        let s = skel(&["a", "b", "c"], &[("a", "c"), ("b", "c")], &[(("a", "b"), &[])]);
        let o = orient(&s);
        assert!(o.has_directed("a", "c"));
        assert!(o.has_directed("b", "c"));
    }

    #[test]
    fn chain_stays_undirected() {
        let s = skel(&["a", "b", "c"], &[("a", "b"), ("b", "c")], &[(("a", "c"), &["b"])]);
        let o = orient(&s);
        assert!(o.has_undirected("a", "b"));
        assert!(o.has_undirected("b", "c"));
    }

    #[test]
    fn meek_r1_propagates_from_collider() {
        // a -> c <- b, c - d, d non-adjacent to a and b.
        let s = skel(
            &["a", "b", "c", "d"],
            &[("a", "c"), ("b", "c"), ("c", "d")],
            &[(("a", "b"), &[]), (("a", "d"), &["c"]), (("b", "d"), &["c"])],
        );
        let o = orient(&s);
        assert!(o.has_directed("c", "d"));
    }

    #[test]
    fn conflicting_colliders_revert_to_undirected() {
        // a - b - c - d with sepsets that make b and c both colliders:
        // (a,c) not separated by b → a→b←c; (b,d) not separated by c → b→c←d.
        let s = skel(
            &["a", "b", "c", "d"],
            &[("a", "b"), ("b", "c"), ("c", "d")],
            &[(("a", "c"), &[]), (("b", "d"), &[]), (("a", "d"), &[])],
        );
        let o = orient(&s);
        assert!(o.has_undirected("b", "c"));
        assert!(o.has_directed("a", "b"));
        assert!(o.has_directed("d", "c"));
    }

    #[test]
    fn empty_skeleton_unchanged() {
        let s = skel(&["a", "b"], &[], &[(("a", "b"), &[])]);
        let o = orient(&s);
        assert!(o.edges.is_empty());
        assert_eq!(o.nodes, s.nodes);
    }
}
