//! Binary classifiers used by the evaluation metrics.
//!
//! All learners take an encoded design matrix and boolean labels, where
//! `true` is the favorable (positive) class. A row is predicted positive
//! iff its score is strictly greater than zero.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::regression;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierId {
    Logistic,
    TreeEnsemble,
    LinearSvm,
}

impl ClassifierId {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "logistic" => Ok(ClassifierId::Logistic),
            "tree_ensemble" => Ok(ClassifierId::TreeEnsemble),
            "linear_svm" => Ok(ClassifierId::LinearSvm),
            other => Err(Error::Config(format!(
                "unknown learner `{other}` (expected logistic, tree_ensemble or linear_svm)"
            ))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            ClassifierId::Logistic => "logistic",
            ClassifierId::TreeEnsemble => "tree_ensemble",
            ClassifierId::LinearSvm => "linear_svm",
        }
    }

    fn defaults(&self) -> &'static [(&'static str, f64)] {
        match self {
            ClassifierId::Logistic => &[("ridge", 1e-4), ("max_iter", 100.0)],
            ClassifierId::TreeEnsemble => &[("n_trees", 100.0), ("max_depth", 8.0), ("min_samples_leaf", 1.0), ("max_bins", 64.0)],
            ClassifierId::LinearSvm => &[("lambda", 1e-3), ("epochs", 20.0)],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierSpec {
    pub id: ClassifierId,
    #[serde(default)]
    pub hyperparams: BTreeMap<String, f64>,
    #[serde(default)]
    pub seed: u64,
}

impl ClassifierSpec {
    pub fn new(id: ClassifierId, seed: u64) -> Self {
        ClassifierSpec {
            id,
            hyperparams: BTreeMap::new(),
            seed,
        }
    }

    /// Hyperparameter value, falling back to the learner default.
    pub fn param(&self, key: &str) -> f64 {
        self.hyperparams.get(key).copied().unwrap_or_else(|| {
            self.id
                .defaults()
                .iter()
                .find(|(k, _)| *k == key)
                .map(|(_, v)| *v)
                .expect("known hyperparameter")
        })
    }

    pub fn validate(&self) -> Result<()> {
        for key in self.hyperparams.keys() {
            if !self.id.defaults().iter().any(|(k, _)| k == key) {
                return Err(Error::Config(format!("`{key}` is not a {} hyperparameter", self.id.as_str())));
            }
        }
        let positive_int = |key: &str| -> Result<()> {
            let v = self.param(key);
            if v >= 1.0 && v.fract() == 0.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("{key} must be a positive integer, got {v}")))
            }
        };
        match self.id {
            ClassifierId::Logistic => {
                if !(self.param("ridge") >= 0.0) {
                    return Err(Error::Config("ridge must be non-negative".into()));
                }
                positive_int("max_iter")
            }
            ClassifierId::TreeEnsemble => {
                positive_int("n_trees")?;
                positive_int("max_depth")?;
                positive_int("min_samples_leaf")?;
                positive_int("max_bins")?;
                if self.param("max_bins") < 2.0 || self.param("max_bins") > 256.0 {
                    return Err(Error::Config("max_bins must lie in [2, 256]".into()));
                }
                Ok(())
            }
            ClassifierId::LinearSvm => {
                if !(self.param("lambda") > 0.0) {
                    return Err(Error::Config("lambda must be positive".into()));
                }
                positive_int("epochs")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Model {
    Constant { positive: bool },
    Linear { intercept: f64, weights: Vec<f64> },
    Forest { trees: Vec<Tree> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedClassifier {
    pub id: ClassifierId,
    pub n_features: usize,
    model: Model,
    pub warnings: Vec<String>,
}

/// Train a classifier. A single-class `y` yields a constant predictor.
pub fn fit(spec: &ClassifierSpec, x: &DMatrix<f64>, y: &[bool]) -> Result<TrainedClassifier> {
    spec.validate()?;
    if x.nrows() != y.len() {
        return Err(Error::Config(format!("{} rows but {} labels", x.nrows(), y.len())));
    }
    if y.len() < 10 {
        return Err(Error::Config(format!("need at least 10 training rows, got {}", y.len())));
    }
    let positives = y.iter().filter(|&&v| v).count();
    let mut warnings = Vec::new();
    let model = if positives == 0 || positives == y.len() {
        warnings.push("training labels contain a single class; predicting it everywhere".to_string());
        Model::Constant { positive: positives > 0 }
    } else {
        match spec.id {
            ClassifierId::Logistic => fit_logistic(spec, x, y),
            ClassifierId::TreeEnsemble => fit_forest(spec, x, y),
            ClassifierId::LinearSvm => fit_svm(spec, x, y),
        }
    };
    Ok(TrainedClassifier {
        id: spec.id,
        n_features: x.ncols(),
        model,
        warnings,
    })
}

impl TrainedClassifier {
    /// Real-valued scores; positive means favorable.
    pub fn scores(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        if x.ncols() != self.n_features {
            return Err(Error::Config(format!(
                "model expects {} features, got {}",
                self.n_features,
                x.ncols()
            )));
        }
        Ok(match &self.model {
            Model::Constant { positive } => vec![if *positive { 1.0 } else { -1.0 }; x.nrows()],
            Model::Linear { intercept, weights } => (0..x.nrows())
                .map(|i| intercept + weights.iter().enumerate().map(|(j, w)| w * x[(i, j)]).sum::<f64>())
                .collect(),
            Model::Forest { trees } => (0..x.nrows())
                .map(|i| {
                    let row: Vec<f64> = x.row(i).iter().copied().collect();
                    let p: f64 = trees.iter().map(|t| t.predict(&row)).sum::<f64>() / trees.len() as f64;
                    p - 0.5
                })
                .collect(),
        })
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<bool>> {
        Ok(self.scores(x)?.into_iter().map(|s| s > 0.0).collect())
    }
}

fn fit_logistic(spec: &ClassifierSpec, x: &DMatrix<f64>, y: &[bool]) -> Model {
    let fit = logistic_fit(spec, x, y);
    Model::Linear {
        intercept: fit.intercepts[0],
        weights: fit.slopes.column(0).iter().copied().collect(),
    }
}

/// Ridge-penalized Newton logistic regression with the positive class
/// modelled against the negative one.
pub fn logistic_fit(spec: &ClassifierSpec, x: &DMatrix<f64>, y: &[bool]) -> regression::LogitFit {
    let codes: Vec<u32> = y.iter().map(|&v| u32::from(v)).collect();
    regression::multinomial_logit(
        x,
        &codes,
        2,
        0,
        spec.param("ridge"),
        spec.param("max_iter") as usize,
        regression::LOGIT_TOL,
    )
}

/// Pegasos with an unregularized-in-spirit bias column; the returned
/// weights are averaged over the second half of the updates.
fn fit_svm(spec: &ClassifierSpec, x: &DMatrix<f64>, y: &[bool]) -> Model {
    let lambda = spec.param("lambda");
    let epochs = spec.param("epochs") as usize;
    let n = x.nrows();
    let p = x.ncols();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut w = vec![0.0; p + 1];
    let mut avg = vec![0.0; p + 1];
    let mut averaged = 0usize;
    let total = epochs * n;
    let mut order: Vec<usize> = (0..n).collect();
    let mut t = 0usize;
    for _ in 0..epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            t += 1;
            let eta = 1.0 / (lambda * t as f64);
            let label = if y[i] { 1.0 } else { -1.0 };
            let margin = label * (w[p] + (0..p).map(|j| w[j] * x[(i, j)]).sum::<f64>());
            let shrink = 1.0 - eta * lambda;
            for wj in w.iter_mut() {
                *wj *= shrink;
            }
            if margin < 1.0 {
                for j in 0..p {
                    w[j] += eta * label * x[(i, j)];
                }
                w[p] += eta * label;
            }
            if 2 * t > total {
                averaged += 1;
                for (a, v) in avg.iter_mut().zip(&w) {
                    *a += (v - *a) / averaged as f64;
                }
            }
        }
    }
    Model::Linear {
        intercept: avg[p],
        weights: avg[..p].to_vec(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum TreeNode {
    Leaf { positive_rate: f64 },
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Tree {
    nodes: Vec<TreeNode>,
}

impl Tree {
    fn predict(&self, row: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                TreeNode::Leaf { positive_rate } => return *positive_rate,
                TreeNode::Split { feature, threshold, left, right } => {
                    at = if row[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }
}

/// Candidate split points of one feature and the bin of every row.
struct Binned {
    cuts: Vec<f64>,
    bins: Vec<u8>,
}

fn bin_feature(values: &[f64], max_bins: usize) -> Binned {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let cuts: Vec<f64> = if sorted.len() <= max_bins {
        sorted.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    } else {
        let mut all = values.to_vec();
        all.sort_by(f64::total_cmp);
        let mut c: Vec<f64> = (1..max_bins)
            .map(|k| {
                let i = k * all.len() / max_bins;
                0.5 * (all[i - 1] + all[i])
            })
            .collect();
        c.dedup();
        c.retain(|v| *v < *all.last().expect("non-empty"));
        c
    };
    let bins = values
        .iter()
        .map(|v| cuts.partition_point(|c| c < v) as u8)
        .collect();
    Binned { cuts, bins }
}

struct TreeParams {
    max_depth: usize,
    min_leaf: usize,
    mtry: usize,
}

fn gini(pos: f64, total: f64) -> f64 {
    if total == 0.0 {
        return 0.0;
    }
    let p = pos / total;
    2.0 * p * (1.0 - p)
}

fn grow(
    nodes: &mut Vec<TreeNode>,
    rows: &mut [usize],
    depth: usize,
    features: &[Binned],
    y: &[bool],
    params: &TreeParams,
    rng: &mut ChaCha8Rng,
) -> usize {
    let total = rows.len();
    let pos = rows.iter().filter(|&&r| y[r]).count();
    let id = nodes.len();
    nodes.push(TreeNode::Leaf {
        positive_rate: pos as f64 / total as f64,
    });
    if depth >= params.max_depth || pos == 0 || pos == total || total < 2 * params.min_leaf {
        return id;
    }
    let mut candidates: Vec<usize> = (0..features.len()).collect();
    let (chosen, _) = candidates.partial_shuffle(rng, params.mtry);
    let parent_impurity = gini(pos as f64, total as f64) * total as f64;
    let mut best: Option<(f64, usize, u8)> = None;
    for &f in chosen.iter() {
        let feat = &features[f];
        if feat.cuts.is_empty() {
            continue;
        }
        let n_bins = feat.cuts.len() + 1;
        let mut hist_pos = vec![0usize; n_bins];
        let mut hist_all = vec![0usize; n_bins];
        for &r in rows.iter() {
            let b = feat.bins[r] as usize;
            hist_all[b] += 1;
            hist_pos[b] += usize::from(y[r]);
        }
        let (mut lp, mut la) = (0usize, 0usize);
        for b in 0..n_bins - 1 {
            lp += hist_pos[b];
            la += hist_all[b];
            let ra = total - la;
            if la < params.min_leaf || ra < params.min_leaf {
                continue;
            }
            let rp = pos - lp;
            let impurity = gini(lp as f64, la as f64) * la as f64 + gini(rp as f64, ra as f64) * ra as f64;
            let gain = parent_impurity - impurity;
            if gain > 1e-12 && best.map_or(true, |(g, _, _)| gain > g) {
                best = Some((gain, f, b as u8));
            }
        }
    }
    let Some((_, feature, bin)) = best else {
        return id;
    };
    let feat = &features[feature];
    let mut split = 0;
    for i in 0..rows.len() {
        if feat.bins[rows[i]] <= bin {
            rows.swap(i, split);
            split += 1;
        }
    }
    let (left_rows, right_rows) = rows.split_at_mut(split);
    let left = grow(nodes, left_rows, depth + 1, features, y, params, rng);
    let right = grow(nodes, right_rows, depth + 1, features, y, params, rng);
    nodes[id] = TreeNode::Split {
        feature,
        threshold: feat.cuts[bin as usize],
        left,
        right,
    };
    id
}

fn fit_forest(spec: &ClassifierSpec, x: &DMatrix<f64>, y: &[bool]) -> Model {
    let n = x.nrows();
    let p = x.ncols();
    let max_bins = spec.param("max_bins") as usize;
    let features: Vec<Binned> = (0..p)
        .map(|j| bin_feature(&x.column(j).iter().copied().collect::<Vec<_>>(), max_bins))
        .collect();
    let params = TreeParams {
        max_depth: spec.param("max_depth") as usize,
        min_leaf: spec.param("min_samples_leaf") as usize,
        mtry: ((p as f64).sqrt().floor() as usize).clamp(1, p.max(1)),
    };
    let n_trees = spec.param("n_trees") as usize;
    let trees = (0..n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(t as u64 + 1);
            let mut rows: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
            let mut nodes = Vec::new();
            grow(&mut nodes, &mut rows, 0, &features, y, &params, &mut rng);
            Tree { nodes }
        })
        .collect();
    Model::Forest { trees }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::StandardNormal;

    fn blobs(n: usize, seed: u64) -> (DMatrix<f64>, Vec<bool>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut y = Vec::with_capacity(n);
        let x = DMatrix::from_fn(n, 2, |i, _| {
            let c = if i % 2 == 0 { 3.0 } else { -3.0 };
            c + 0.5 * rng.sample::<f64, _>(StandardNormal)
        });
        for i in 0..n {
            y.push(i % 2 == 0);
        }
        (x, y)
    }

    fn accuracy(pred: &[bool], y: &[bool]) -> f64 {
        pred.iter().zip(y).filter(|(a, b)| a == b).count() as f64 / y.len() as f64
    }

    #[test]
    fn separable_blobs_fit_by_all_learners() {
        let (x, y) = blobs(200, 1);
        for id in [ClassifierId::Logistic, ClassifierId::TreeEnsemble, ClassifierId::LinearSvm] {
            let m = fit(&ClassifierSpec::new(id, 3), &x, &y).unwrap();
            let acc = accuracy(&m.predict(&x).unwrap(), &y);
            assert!(acc >= 0.99, "{id:?}: {acc}");
        }
    }

    #[test]
    fn same_seed_same_predictions() {
        let (x, y) = blobs(100, 2);
        for id in [ClassifierId::TreeEnsemble, ClassifierId::LinearSvm] {
            let a = fit(&ClassifierSpec::new(id, 9), &x, &y).unwrap();
            let b = fit(&ClassifierSpec::new(id, 9), &x, &y).unwrap();
            assert_eq!(a.scores(&x).unwrap(), b.scores(&x).unwrap());
        }
    }

    #[test]
    fn single_class_is_constant() {
        let (x, _) = blobs(20, 3);
        let m = fit(&ClassifierSpec::new(ClassifierId::Logistic, 0), &x, &[true; 20]).unwrap();
        assert!(m.predict(&x).unwrap().iter().all(|&v| v));
        assert_eq!(m.warnings.len(), 1);
    }

    #[test]
    fn zero_score_is_unfavorable() {
        let m = TrainedClassifier {
            id: ClassifierId::Logistic,
            n_features: 1,
            model: Model::Linear { intercept: 0.0, weights: vec![1.0] },
            warnings: vec![],
        };
        let x = DMatrix::from_row_slice(3, 1, &[-1.0, 0.0, 1.0]);
        assert_eq!(m.predict(&x).unwrap(), vec![false, false, true]);
        assert!(m.predict(&DMatrix::zeros(0, 1)).unwrap().is_empty());
        assert!(m.predict(&DMatrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn binning_respects_thresholds() {
        let b = bin_feature(&[0.0, 1.0, 1.0, 2.0], 64);
        assert_eq!(b.cuts, vec![0.5, 1.5]);
        assert_eq!(b.bins, vec![0, 1, 1, 2]);
    }

    #[test]
    fn unknown_hyperparameter_is_rejected() {
        let mut spec = ClassifierSpec::new(ClassifierId::Logistic, 0);
        spec.hyperparams.insert("depth".into(), 3.0);
        assert!(spec.validate().is_err());
        assert!(ClassifierId::parse("svm").is_err());
    }
}
