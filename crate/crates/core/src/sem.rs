//! Per-node structural equations: linear regression for numeric nodes,
//! binary/multinomial logit for nominal ones, with BIC scoring.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::regression::{self, LOGIT_MAX_ITER, LOGIT_RIDGE, LOGIT_TOL};
use crate::tabular::{mean_std, ColumnData, ColumnSpec, Dataset, EncodedColumn, Encoder};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Linear,
    BinaryLogit,
    MultinomialLogit,
}

/// Fitted structural equation for one node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeModel {
    pub target: String,
    pub parents: Vec<String>,
    pub kind: ModelKind,
    /// Encoder for the parent columns; one coefficient row per encoded column.
    pub encoder: Encoder,
    pub design: Vec<EncodedColumn>,
    /// `coefficients[row][col]`; one column for linear/binary, L−1 for multinomial.
    pub coefficients: Vec<Vec<f64>>,
    /// Intercept per coefficient column.
    pub intercept: Vec<f64>,
    /// Logit kinds: the target level whose linear predictor is fixed at 0.
    pub baseline: Option<u32>,
    /// Logit kinds: target level modelled by each coefficient column.
    pub classes: Vec<u32>,
    pub n_levels: usize,
    /// Linear kind: MLE residual standard deviation.
    pub residual_sd: Option<f64>,
    pub log_likelihood: f64,
    pub n_params: usize,
    pub n_obs: usize,
    pub bic: f64,
    pub converged: bool,
    /// R² for linear nodes, training accuracy for logit nodes.
    pub fit_quality: f64,
}

impl NodeModel {
    pub fn width(&self) -> usize {
        self.intercept.len()
    }

    /// Encode the parent columns of `data` with the fitted encoder.
    pub fn design_matrix(&self, data: &Dataset) -> Result<DMatrix<f64>> {
        self.encoder.transform(data)
    }

    /// `n × width` linear predictor `Xβ + ε`.
    pub fn linear_predictor(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(x.nrows(), self.width());
        for k in 0..self.width() {
            for i in 0..x.nrows() {
                let mut v = self.intercept[k];
                for (j, row) in self.coefficients.iter().enumerate() {
                    v += row[k] * x[(i, j)];
                }
                out[(i, k)] = v;
            }
        }
        out
    }

    /// Class probabilities for logit kinds, given linear predictors.
    pub fn probabilities_from_predictor(&self, eta: &DMatrix<f64>) -> DMatrix<f64> {
        regression::softmax_with_baseline(eta, self.baseline.unwrap_or(0), &self.classes, self.n_levels)
    }

    /// Coefficient row indices belonging to `source`.
    pub fn rows_for(&self, source: &str) -> Vec<usize> {
        self.design
            .iter()
            .enumerate()
            .filter(|(_, c)| c.source == source)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Baseline level for a logit target: level 0, unless level 0 is the
/// favorable level, so that a binary coefficient points toward the
/// favorable outcome.
pub fn logit_baseline(spec: &ColumnSpec) -> u32 {
    match spec.favorable_level.as_deref().and_then(|f| spec.level_index(f)) {
        Some(0) => 1,
        _ => 0,
    }
}

/// Fit `target` on `parents`; `parents = []` gives the intercept-only model.
pub fn fit_node(data: &Dataset, target: &str, parents: &[&str]) -> Result<NodeModel> {
    if parents.contains(&target) {
        return Err(Error::Config(format!("`{target}` cannot be its own parent")));
    }
    let spec = data.spec(target)?.clone();
    let encoder = Encoder::fit(data, parents, false)?;
    let x = encoder.transform(data)?;
    let design = encoder.column_map();
    let n = data.n_rows();
    let p = x.ncols();

    match data.column(target)? {
        ColumnData::Numeric(y) => {
            let fit = regression::ols(&x, y);
            let log_likelihood = regression::gaussian_log_likelihood(fit.rss, n);
            let n_params = p + 2;
            let (_, sd_y) = mean_std(y.iter().copied());
            let tss = sd_y * sd_y * n as f64;
            let fit_quality = if tss > 0.0 { 1.0 - fit.rss / tss } else { 1.0 };
            Ok(NodeModel {
                target: target.to_string(),
                parents: parents.iter().map(|s| s.to_string()).collect(),
                kind: ModelKind::Linear,
                encoder,
                design,
                coefficients: fit.slopes.iter().map(|&b| vec![b]).collect(),
                intercept: vec![fit.intercept],
                baseline: None,
                classes: Vec::new(),
                n_levels: 0,
                residual_sd: Some((fit.rss / n as f64).sqrt()),
                log_likelihood,
                n_params,
                n_obs: n,
                bic: bic(n_params, n, log_likelihood),
                converged: true,
                fit_quality,
            })
        }
        ColumnData::Nominal(y) => {
            let levels = spec.levels.len();
            let baseline = logit_baseline(&spec);
            let fit = regression::multinomial_logit(&x, y, levels, baseline, LOGIT_RIDGE, LOGIT_MAX_ITER, LOGIT_TOL);
            let probs = fit.probabilities(&x);
            let correct = (0..n)
                .filter(|&i| argmax_row(&probs, i) == y[i] as usize)
                .count();
            let n_params = (levels - 1) * (p + 1);
            Ok(NodeModel {
                target: target.to_string(),
                parents: parents.iter().map(|s| s.to_string()).collect(),
                kind: if levels == 2 { ModelKind::BinaryLogit } else { ModelKind::MultinomialLogit },
                encoder,
                design,
                coefficients: (0..p).map(|j| fit.slopes.row(j).iter().copied().collect()).collect(),
                intercept: fit.intercepts.clone(),
                baseline: Some(baseline),
                classes: fit.classes.clone(),
                n_levels: levels,
                residual_sd: None,
                log_likelihood: fit.log_likelihood,
                n_params,
                n_obs: n,
                bic: bic(n_params, n, fit.log_likelihood),
                converged: fit.converged,
                fit_quality: correct as f64 / n as f64,
            })
        }
    }
}

/// First index of the row maximum.
pub fn argmax_row(m: &DMatrix<f64>, i: usize) -> usize {
    let mut best = 0;
    for j in 1..m.ncols() {
        if m[(i, j)] > m[(i, best)] {
            best = j;
        }
    }
    best
}

pub fn bic(n_params: usize, n_obs: usize, log_likelihood: f64) -> f64 {
    n_params as f64 * (n_obs as f64).ln() - 2.0 * log_likelihood
}

/// BIC summary of a fitted graph.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitScore {
    /// Sum of `per_node` (endogenous nodes only).
    pub total_bic: f64,
    pub per_node: BTreeMap<String, f64>,
    /// Intercept-only BIC of every node without directed parents.
    #[serde(default)]
    pub null_bic: BTreeMap<String, f64>,
}

impl FitScore {
    /// Score of the whole graph: endogenous models plus intercept-only
    /// models for the remaining nodes. Comparable across graphs whose
    /// endogenous sets differ.
    pub fn graph_bic(&self) -> f64 {
        self.total_bic + self.null_bic.values().sum::<f64>()
    }
}

/// Fit every node that has at least one directed parent in `edges`.
///
/// Parents are ordered by dataset column order. Exogenous nodes get no
/// model but contribute an intercept-only entry to [`FitScore::null_bic`].
pub fn fit_all(data: &Dataset, edges: &[(String, String)]) -> Result<(BTreeMap<String, NodeModel>, FitScore)> {
    let parent_sets = parent_sets(data, edges)?;
    let fitted: Vec<(String, Result<NodeModel>)> = data
        .column_names()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|node| {
            let parents: Vec<&str> = parent_sets.get(node).map(|v| v.iter().map(String::as_str).collect()).unwrap_or_default();
            (node.to_string(), fit_node(data, node, &parents))
        })
        .collect();
    let mut models = BTreeMap::new();
    let mut score = FitScore::default();
    for (node, model) in fitted {
        let model = model?;
        if model.parents.is_empty() {
            score.null_bic.insert(node, model.bic);
        } else {
            score.per_node.insert(node.clone(), model.bic);
            models.insert(node, model);
        }
    }
    score.total_bic = score.per_node.values().sum();
    Ok((models, score))
}

/// Parents of each node, in dataset column order.
pub fn parent_sets(data: &Dataset, edges: &[(String, String)]) -> Result<BTreeMap<String, Vec<String>>> {
    let mut out: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for (s, t) in edges {
        data.index_of(s)?;
        data.index_of(t)?;
        out.entry(t.clone()).or_default().push(s.clone());
    }
    for parents in out.values_mut() {
        parents.sort_by_key(|p| data.index_of(p).unwrap_or(usize::MAX));
        parents.dedup();
    }
    Ok(out)
}

/// BIC score for a single node given its parents (intercept-only when empty).
pub fn node_bic(data: &Dataset, target: &str, parents: &[&str]) -> Result<f64> {
    Ok(fit_node(data, target, parents)?.bic)
}

/// Standardized weight of one incoming edge, as drawn in the graph view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeWeight {
    pub source: String,
    pub target: String,
    pub std_beta: Option<f64>,
    /// False when the edge is not summarized by one coefficient.
    pub representable: bool,
}

/// Standardized coefficient of `source` in `model`: `β·σ_source/σ_target`
/// for linear targets and `β·σ_source` for binary logit targets.
/// Multinomial targets and multi-dummy sources are not representable.
pub fn edge_weight(model: &NodeModel, source: &str, data: &Dataset) -> Result<EdgeWeight> {
    if !model.parents.iter().any(|p| p == source) {
        return Err(Error::Config(format!("`{source}` is not a parent of `{}`", model.target)));
    }
    let rows = model.rows_for(source);
    let unrepresentable = EdgeWeight {
        source: source.to_string(),
        target: model.target.clone(),
        std_beta: None,
        representable: false,
    };
    if model.kind == ModelKind::MultinomialLogit || rows.len() != 1 {
        return Ok(unrepresentable);
    }
    let row = rows[0];
    let beta = model.coefficients[row][0];
    let sd_source = match (&model.design[row].level, data.column(source)?) {
        (None, ColumnData::Numeric(v)) => mean_std(v.iter().copied()).1,
        (Some(level), ColumnData::Nominal(v)) => mean_std(v.iter().map(|&c| f64::from(u8::from(c == *level)))).1,
        _ => return Err(Error::Schema(format!("column `{source}` changed kind since fitting"))),
    };
    let std_beta = if sd_source == 0.0 {
        0.0
    } else {
        match model.kind {
            ModelKind::Linear => {
                let sd_target = data
                    .column(&model.target)?
                    .as_numeric()
                    .map(|v| mean_std(v.iter().copied()).1)
                    .unwrap_or(0.0);
                if sd_target == 0.0 {
                    0.0
                } else {
                    beta * sd_source / sd_target
                }
            }
            _ => beta * sd_source,
        }
    };
    Ok(EdgeWeight {
        std_beta: Some(std_beta),
        representable: true,
        ..unrepresentable
    })
}

/// Change in graph BIC from `before` to `after`; negative is a better fit.
pub fn delta_bic(before: &FitScore, after: &FitScore) -> f64 {
    after.graph_bic() - before.graph_bic()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tabular::{ColumnSpec, Dataset};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn numeric(cols: Vec<(&str, Vec<f64>)>) -> Dataset {
        let schema = cols.iter().map(|(n, _)| ColumnSpec::numeric(*n)).collect();
        let data = cols.into_iter().map(|(_, v)| ColumnData::Numeric(v)).collect();
        Dataset::new("t", schema, data).unwrap()
    }

    #[test]
    fn exact_line() {
        let x: Vec<f64> = (0..20).map(f64::from).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        let d = numeric(vec![("x", x), ("y", y)]);
        let m = fit_node(&d, "y", &["x"]).unwrap();
        assert_eq!(m.kind, ModelKind::Linear);
        assert_abs_diff_eq!(m.coefficients[0][0], 2.0, epsilon = 1e-6);
        assert_abs_diff_eq!(m.intercept[0], 1.0, epsilon = 1e-6);
    }

    #[test]
    fn intercept_only_closed_form() {
        let y = vec![1.0, 2.0, 4.0, 7.0, 11.0];
        let d = numeric(vec![("x", vec![0.0; 5]), ("y", y.clone())]);
        let m = fit_node(&d, "y", &[]).unwrap();
        let mean = y.iter().sum::<f64>() / 5.0;
        assert_abs_diff_eq!(m.intercept[0], mean, epsilon = 1e-12);
        let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 5.0;
        let ll = -2.5 * ((2.0 * std::f64::consts::PI * var).ln() + 1.0);
        assert_eq!(m.n_params, 2);
        assert_abs_diff_eq!(m.bic, 2.0 * 5f64.ln() - 2.0 * ll, epsilon = 1e-9);
    }

    #[test]
    fn edge_weight_perfect_correlation() {
        // x has population sd 1 and y = 2x has sd 2.
        let x = vec![-1.0, 1.0, -1.0, 1.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let d = numeric(vec![("x", x), ("y", y)]);
        let m = fit_node(&d, "y", &["x"]).unwrap();
        let w = edge_weight(&m, "x", &d).unwrap();
        assert!(w.representable);
        assert_abs_diff_eq!(w.std_beta.unwrap(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn multinomial_target_is_not_representable() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Vec<f64> = (0..200).map(|_| rng.sample(StandardNormal)).collect();
        let y: Vec<u32> = x.iter().map(|v| if *v < -0.5 { 0 } else if *v < 0.5 { 1 } else { 2 }).collect();
        let d = Dataset::new(
            "t",
            vec![ColumnSpec::numeric("x"), ColumnSpec::nominal("y", ["a", "b", "c"])],
            vec![ColumnData::Numeric(x), ColumnData::Nominal(y)],
        )
        .unwrap();
        let m = fit_node(&d, "y", &["x"]).unwrap();
        assert_eq!(m.kind, ModelKind::MultinomialLogit);
        assert_eq!(m.n_params, 4);
        assert!(!edge_weight(&m, "x", &d).unwrap().representable);
    }

    #[test]
    fn empty_graph_scores_zero() {
        let d = numeric(vec![("a", vec![1.0, 2.0, 3.0]), ("b", vec![3.0, 1.0, 2.0])]);
        let (models, score) = fit_all(&d, &[]).unwrap();
        assert!(models.is_empty());
        assert_eq!(score.total_bic, 0.0);
        assert_eq!(score.null_bic.len(), 2);
        assert_eq!(delta_bic(&score, &score), 0.0);
    }

    #[test]
    fn sign_of_weight_follows_raw_beta() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for slope in [-3.0, -0.5, 0.7, 4.0] {
            let x: Vec<f64> = (0..100).map(|_| rng.sample::<f64, _>(StandardNormal) * 3.0).collect();
            let y: Vec<f64> = x.iter().map(|v| slope * v + rng.sample::<f64, _>(StandardNormal)).collect();
            let d = numeric(vec![("x", x), ("y", y)]);
            let m = fit_node(&d, "y", &["x"]).unwrap();
            let w = edge_weight(&m, "x", &d).unwrap().std_beta.unwrap();
            assert_eq!(w.signum(), m.coefficients[0][0].signum());
        }
    }
}
