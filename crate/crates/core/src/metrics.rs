//! Fairness, utility and distortion metrics.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learners::{self, ClassifierSpec};
use crate::tabular::{gower_row_distance, ColumnData, Dataset, Encoder};

/// One attribute test: the row's level is one of `levels`, or its numeric
/// value falls in one of the inclusive `ranges`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub column: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub levels: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub ranges: Vec<[f64; 2]>,
}

/// A conjunction of conditions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predicate {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub conditions: Vec<Condition>,
}

/// The two groups being compared.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GroupSpec {
    /// Group A is `group_a` (default: the first level); group B is every
    /// other level. Without `group_a` the column must be binary.
    Column {
        column: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        group_a: Option<String>,
    },
    Custom { group_a: Predicate, group_b: Predicate },
}

/// Row indices of each group, ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupRows {
    pub a: Vec<usize>,
    pub b: Vec<usize>,
    pub name_a: String,
    pub name_b: String,
}

impl GroupSpec {
    pub fn column(column: impl Into<String>) -> Self {
        GroupSpec::Column {
            column: column.into(),
            group_a: None,
        }
    }

    /// Columns that define the groups; these are the sensitive attributes
    /// dropped before training a classifier.
    pub fn sensitive_columns(&self) -> Vec<String> {
        let mut out = BTreeSet::new();
        match self {
            GroupSpec::Column { column, .. } => {
                out.insert(column.clone());
            }
            GroupSpec::Custom { group_a, group_b } => {
                for c in group_a.conditions.iter().chain(&group_b.conditions) {
                    out.insert(c.column.clone());
                }
            }
        }
        out.into_iter().collect()
    }

    pub fn resolve(&self, data: &Dataset) -> Result<GroupRows> {
        let rows = match self {
            GroupSpec::Column { column, group_a } => {
                let spec = data.spec(column)?;
                let ColumnData::Nominal(v) = data.column(column)? else {
                    return Err(Error::Config(format!("group column `{column}` must be nominal")));
                };
                let a_level = match group_a {
                    Some(level) => spec
                        .level_index(level)
                        .ok_or_else(|| Error::Config(format!("`{column}` has no level `{level}`")))?,
                    None if spec.levels.len() == 2 => 0,
                    None => {
                        return Err(Error::Config(format!(
                            "`{column}` has {} levels; choose group A explicitly",
                            spec.levels.len()
                        )))
                    }
                };
                let name_a = spec.levels[a_level as usize].clone();
                let name_b = if spec.levels.len() == 2 {
                    spec.levels[1 - a_level as usize].clone()
                } else {
                    format!("not {name_a}")
                };
                let (a, b): (Vec<usize>, Vec<usize>) = (0..v.len()).partition(|&i| v[i] == a_level);
                GroupRows { a, b, name_a, name_b }
            }
            GroupSpec::Custom { group_a, group_b } => {
                let a = predicate_rows(data, group_a)?;
                let b = predicate_rows(data, group_b)?;
                let a_set: BTreeSet<usize> = a.iter().copied().collect();
                let overlap = b.iter().filter(|i| a_set.contains(i)).count();
                if overlap > 0 {
                    return Err(Error::Config(format!("groups A and B overlap on {overlap} rows")));
                }
                GroupRows {
                    a,
                    b,
                    name_a: group_a.name.clone().unwrap_or_else(|| "A".into()),
                    name_b: group_b.name.clone().unwrap_or_else(|| "B".into()),
                }
            }
        };
        if rows.a.is_empty() {
            return Err(Error::EmptyGroup(format!("group A ({})", rows.name_a)));
        }
        if rows.b.is_empty() {
            return Err(Error::EmptyGroup(format!("group B ({})", rows.name_b)));
        }
        Ok(rows)
    }
}

fn predicate_rows(data: &Dataset, pred: &Predicate) -> Result<Vec<usize>> {
    if pred.conditions.is_empty() {
        return Err(Error::Config("a group needs at least one condition".into()));
    }
    let mut keep = vec![true; data.n_rows()];
    for cond in &pred.conditions {
        match data.column(&cond.column)? {
            ColumnData::Nominal(v) => {
                if cond.levels.is_empty() || !cond.ranges.is_empty() {
                    return Err(Error::Config(format!("`{}` is nominal; select levels", cond.column)));
                }
                let spec = data.spec(&cond.column)?;
                let wanted = cond
                    .levels
                    .iter()
                    .map(|l| {
                        spec.level_index(l)
                            .ok_or_else(|| Error::Config(format!("`{}` has no level `{l}`", cond.column)))
                    })
                    .collect::<Result<BTreeSet<u32>>>()?;
                for (k, &x) in keep.iter_mut().zip(v) {
                    *k &= wanted.contains(&x);
                }
            }
            ColumnData::Numeric(v) => {
                if cond.ranges.is_empty() || !cond.levels.is_empty() {
                    return Err(Error::Config(format!("`{}` is numeric; select ranges", cond.column)));
                }
                if let Some(r) = cond.ranges.iter().find(|r| !(r[0] <= r[1])) {
                    return Err(Error::Config(format!("range [{}, {}] is empty", r[0], r[1])));
                }
                for (k, &x) in keep.iter_mut().zip(v) {
                    *k &= cond.ranges.iter().any(|r| r[0] <= x && x <= r[1]);
                }
            }
        }
    }
    Ok((0..keep.len()).filter(|&i| keep[i]).collect())
}

/// Labels as booleans, `true` for the favorable level.
pub fn binary_labels(data: &Dataset, label: &str, favorable: &str) -> Result<Vec<bool>> {
    let spec = data.spec(label)?;
    let ColumnData::Nominal(v) = data.column(label)? else {
        return Err(Error::Config(format!("label `{label}` must be nominal")));
    };
    if spec.levels.len() != 2 {
        return Err(Error::Config(format!("label `{label}` must have two levels, has {}", spec.levels.len())));
    }
    let fav = spec
        .level_index(favorable)
        .ok_or_else(|| Error::Config(format!("label `{label}` has no level `{favorable}`")))?;
    Ok(v.iter().map(|&x| x == fav).collect())
}

fn rate(labels: &[bool], rows: &[usize]) -> f64 {
    rows.iter().filter(|&&r| labels[r]).count() as f64 / rows.len() as f64
}

/// Favorable and unfavorable shares of both groups, in percent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fourfold {
    pub group_a: String,
    pub group_b: String,
    pub a_positive: f64,
    pub a_negative: f64,
    pub b_positive: f64,
    pub b_negative: f64,
}

pub fn fourfold(data: &Dataset, groups: &GroupSpec, label: &str, favorable: &str) -> Result<Fourfold> {
    let y = binary_labels(data, label, favorable)?;
    let g = groups.resolve(data)?;
    let pa = rate(&y, &g.a) * 100.0;
    let pb = rate(&y, &g.b) * 100.0;
    Ok(Fourfold {
        group_a: g.name_a,
        group_b: g.name_b,
        a_positive: pa,
        a_negative: 100.0 - pa,
        b_positive: pb,
        b_negative: 100.0 - pb,
    })
}

/// `|P(favorable | A) − P(favorable | B)|`.
pub fn parity_diff(data: &Dataset, groups: &GroupSpec, label: &str, favorable: &str) -> Result<f64> {
    let y = binary_labels(data, label, favorable)?;
    let g = groups.resolve(data)?;
    Ok((rate(&y, &g.a) - rate(&y, &g.b)).abs())
}

/// Mean fraction of each row's `k` nearest neighbours (Gower distance over
/// the non-label columns, ties to the lower row index) whose label differs.
pub fn individual_bias(data: &Dataset, label: &str, k: usize) -> Result<f64> {
    let label_idx = data.index_of(label)?;
    let n = data.n_rows();
    if k == 0 || n <= k {
        return Err(Error::Config(format!("individual bias needs 1 ≤ k < n (k = {k}, n = {n})")));
    }
    let ColumnData::Nominal(y) = &data.columns()[label_idx] else {
        return Err(Error::Config(format!("label `{label}` must be nominal")));
    };
    let ranges = data.numeric_ranges();
    let mut numeric: Vec<Vec<f64>> = Vec::new();
    let mut nominal: Vec<&[u32]> = Vec::new();
    for (j, col) in data.columns().iter().enumerate() {
        if j == label_idx {
            continue;
        }
        match col {
            ColumnData::Numeric(v) => match ranges[j] {
                Some(r) if r > 0.0 => numeric.push(v.iter().map(|x| x / r).collect()),
                _ => {}
            },
            ColumnData::Nominal(v) => nominal.push(v),
        }
    }
    let total: f64 = (0..n)
        .into_par_iter()
        .map(|i| {
            // Sorted (distance, row) pairs of the k best so far.
            let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
            for j in 0..n {
                if j == i {
                    continue;
                }
                let mut d = 0.0;
                for col in &numeric {
                    d += (col[i] - col[j]).abs().min(1.0);
                }
                for col in &nominal {
                    d += f64::from(u8::from(col[i] != col[j]));
                }
                if best.len() < k || d < best[k - 1].0 {
                    let pos = best.partition_point(|&(bd, _)| bd <= d);
                    best.insert(pos, (d, j));
                    best.truncate(k);
                }
            }
            best.iter().filter(|&&(_, j)| y[j] != y[i]).count() as f64 / k as f64
        })
        .collect::<Vec<f64>>()
        // Summed in row order so the result does not depend on the thread count.
        .iter()
        .sum();
    Ok(total / n as f64)
}

/// Mean Gower distance between aligned rows, using the original data's
/// numeric ranges.
pub fn distortion(original: &Dataset, debiased: &Dataset) -> Result<f64> {
    if !original.same_schema(debiased) || original.n_rows() != debiased.n_rows() {
        return Err(Error::Schema("distortion needs two datasets with the same schema and row count".into()));
    }
    let n = original.n_rows();
    if n == 0 {
        return Ok(0.0);
    }
    let ranges = original.numeric_ranges();
    let total: f64 = (0..n)
        .map(|i| gower_row_distance(&original.row(i), &debiased.row(i), original.schema(), &ranges))
        .sum();
    Ok(total / n as f64)
}

/// Settings shared by the classifier-based metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationConfig {
    pub learner: ClassifierSpec,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_splits")]
    pub n_splits: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_k() -> usize {
    5
}

fn default_splits() -> usize {
    3
}

impl EvaluationConfig {
    pub fn new(learner: ClassifierSpec, seed: u64) -> Self {
        EvaluationConfig {
            learner,
            k: default_k(),
            n_splits: default_splits(),
            seed,
        }
    }
}

/// Outcome of the repeated-split classifier protocol.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifierStats {
    pub accuracy: f64,
    pub f1: f64,
    pub accuracy_diff: f64,
    pub fnr_diff: f64,
    pub fpr_diff: f64,
}

const MAX_REDRAWS: usize = 10;

/// Stratified 50:50 split: within each label class, a shuffled half goes
/// to training.
fn stratified_split(labels: &[bool], rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in [false, true] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(rng);
        let half = idx.len() / 2;
        train.extend_from_slice(&idx[..half]);
        test.extend_from_slice(&idx[half..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

fn draw_splits(labels: &[bool], groups: &GroupRows, n_splits: usize, seed: u64) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut in_a = vec![false; labels.len()];
    let mut in_b = vec![false; labels.len()];
    groups.a.iter().for_each(|&i| in_a[i] = true);
    groups.b.iter().for_each(|&i| in_b[i] = true);
    let mut out = Vec::with_capacity(n_splits);
    for s in 0..n_splits {
        let mut drawn = None;
        for _ in 0..=MAX_REDRAWS {
            let (train, test) = stratified_split(labels, &mut rng);
            if test.iter().any(|&i| in_a[i]) && test.iter().any(|&i| in_b[i]) {
                drawn = Some((train, test));
                break;
            }
        }
        out.push(drawn.ok_or_else(|| {
            Error::EmptyGroup(format!("a group is absent from the test half of split {s} after {MAX_REDRAWS} redraws"))
        })?);
    }
    Ok(out)
}

#[derive(Default, Clone, Copy)]
struct Confusion {
    tp: usize,
    tn: usize,
    fp: usize,
    fn_: usize,
}

impl Confusion {
    fn add(&mut self, truth: bool, pred: bool) {
        match (truth, pred) {
            (true, true) => self.tp += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fp += 1,
            (true, false) => self.fn_ += 1,
        }
    }

    fn ratio(num: usize, den: usize) -> f64 {
        if den == 0 {
            0.0
        } else {
            num as f64 / den as f64
        }
    }

    fn accuracy(&self) -> f64 {
        Self::ratio(self.tp + self.tn, self.tp + self.tn + self.fp + self.fn_)
    }

    fn fnr(&self) -> f64 {
        Self::ratio(self.fn_, self.tp + self.fn_)
    }

    fn fpr(&self) -> f64 {
        Self::ratio(self.fp, self.fp + self.tn)
    }

    fn f1(&self) -> f64 {
        Self::ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_)
    }
}

/// Train on `train_source` and test on `test_source` over repeated
/// stratified 50:50 splits of the shared rows. Labels, groups and the
/// stratification come from `test_source`; the label column and `drop`
/// are removed from the features.
pub fn cross_evaluate(
    train_source: &Dataset,
    test_source: &Dataset,
    groups: &GroupSpec,
    label: &str,
    favorable: &str,
    drop: &[String],
    cfg: &EvaluationConfig,
) -> Result<ClassifierStats> {
    if !train_source.same_schema(test_source) || train_source.n_rows() != test_source.n_rows() {
        return Err(Error::Schema("training and test data must share schema and rows".into()));
    }
    if cfg.n_splits == 0 {
        return Err(Error::Config("n_splits must be at least 1".into()));
    }
    cfg.learner.validate()?;
    let y_train = binary_labels(train_source, label, favorable)?;
    let y_test = binary_labels(test_source, label, favorable)?;
    let g = groups.resolve(test_source)?;
    for d in drop {
        test_source.index_of(d)?;
    }
    let features: Vec<&str> = test_source
        .column_names()
        .filter(|c| *c != label && !drop.iter().any(|d| d == c))
        .collect();
    let mut group_of = vec![None; y_test.len()];
    g.a.iter().for_each(|&i| group_of[i] = Some(0));
    g.b.iter().for_each(|&i| group_of[i] = Some(1));

    let splits = draw_splits(&y_test, &g, cfg.n_splits, cfg.seed)?;
    let per_split = splits
        .iter()
        .enumerate()
        .map(|(s, (train, test))| {
            let encoder = Encoder::fit_rows(train_source, train, &features, true)?;
            let x_train = encoder.transform_rows(train_source, train)?;
            let x_test = encoder.transform_rows(test_source, test)?;
            let labels: Vec<bool> = train.iter().map(|&i| y_train[i]).collect();
            let mut spec = cfg.learner.clone();
            spec.seed = spec.seed.wrapping_add(s as u64);
            let model = learners::fit(&spec, &x_train, &labels)?;
            let pred = model.predict(&x_test)?;
            let mut all = Confusion::default();
            let mut by_group = [Confusion::default(); 2];
            for (&i, &p) in test.iter().zip(&pred) {
                all.add(y_test[i], p);
                if let Some(gi) = group_of[i] {
                    by_group[gi].add(y_test[i], p);
                }
            }
            let [a, b] = by_group;
            Ok(ClassifierStats {
                accuracy: all.accuracy(),
                f1: all.f1(),
                accuracy_diff: (a.accuracy() - b.accuracy()).abs(),
                fnr_diff: (a.fnr() - b.fnr()).abs(),
                fpr_diff: (a.fpr() - b.fpr()).abs(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let m = per_split.len() as f64;
    let mean = |f: fn(&ClassifierStats) -> f64| per_split.iter().map(f).sum::<f64>() / m;
    Ok(ClassifierStats {
        accuracy: mean(|s| s.accuracy),
        f1: mean(|s| s.f1),
        accuracy_diff: mean(|s| s.accuracy_diff),
        fnr_diff: mean(|s| s.fnr_diff),
        fpr_diff: mean(|s| s.fpr_diff),
    })
}

/// Group gaps of a classifier trained and tested on `data` itself.
pub fn classifier_diffs(
    data: &Dataset,
    groups: &GroupSpec,
    label: &str,
    favorable: &str,
    drop: &[String],
    cfg: &EvaluationConfig,
) -> Result<ClassifierStats> {
    cross_evaluate(data, data, groups, label, favorable, drop, cfg)
}

/// Accuracy and F1 of a classifier trained on `train_data` and scored
/// against the original features and labels.
pub fn utility(
    train_data: &Dataset,
    original: &Dataset,
    groups: &GroupSpec,
    label: &str,
    favorable: &str,
    drop: &[String],
    cfg: &EvaluationConfig,
) -> Result<(f64, f64)> {
    let s = cross_evaluate(train_data, original, groups, label, favorable, drop, cfg)?;
    Ok((s.accuracy, s.f1))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub f1: f64,
    pub parity_diff: f64,
    pub accuracy_diff: f64,
    pub fnr_diff: f64,
    pub fpr_diff: f64,
    pub individual_bias: f64,
    pub distortion: f64,
    pub fourfold: Fourfold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub label: String,
    pub favorable: String,
    pub groups: GroupSpec,
    pub sensitive_dropped: Vec<String>,
    pub config: EvaluationConfig,
    pub original: MetricsReport,
    pub debiased: MetricsReport,
}

fn report_for(
    data: &Dataset,
    original: &Dataset,
    groups: &GroupSpec,
    label: &str,
    favorable: &str,
    drop: &[String],
    cfg: &EvaluationConfig,
) -> Result<MetricsReport> {
    let diffs = classifier_diffs(data, groups, label, favorable, drop, cfg)?;
    let (accuracy, f1) = if std::ptr::eq(data, original) {
        (diffs.accuracy, diffs.f1)
    } else {
        utility(data, original, groups, label, favorable, drop, cfg)?
    };
    let fourfold = fourfold(data, groups, label, favorable)?;
    Ok(MetricsReport {
        accuracy,
        f1,
        parity_diff: parity_diff(data, groups, label, favorable)?,
        accuracy_diff: diffs.accuracy_diff,
        fnr_diff: diffs.fnr_diff,
        fpr_diff: diffs.fpr_diff,
        individual_bias: individual_bias(data, label, cfg.k)?,
        distortion: distortion(original, data)?,
        fourfold,
    })
}

/// Compare the original and debiased datasets on every metric. The
/// attributes that define the groups are removed before training.
pub fn evaluate(
    original: &Dataset,
    debiased: &Dataset,
    groups: &GroupSpec,
    label: &str,
    favorable: &str,
    cfg: &EvaluationConfig,
) -> Result<EvaluationReport> {
    let drop = groups.sensitive_columns();
    if drop.iter().any(|d| d == label) {
        return Err(Error::Config(format!("the label `{label}` cannot define the groups")));
    }
    Ok(EvaluationReport {
        label: label.to_string(),
        favorable: favorable.to_string(),
        groups: groups.clone(),
        sensitive_dropped: drop.clone(),
        config: cfg.clone(),
        original: report_for(original, original, groups, label, favorable, &drop, cfg)?,
        debiased: report_for(debiased, original, groups, label, favorable, &drop, cfg)?,
    })
}
