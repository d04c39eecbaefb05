//! One interactive session: load, discover, refine, debias, evaluate.
//!
//! Everything here is synchronous; the HTTP layer serializes calls per
//! session and runs them on the blocking pool.

use std::collections::BTreeMap;
use std::path::Path;

use causal_debias::discovery::{Cpdag, DiscoveryConfig};
use causal_debias::graph::{CausalModel, EditOp, GraphSummary, LogsView, ScriptEntry, Stage};
use causal_debias::learners::{ClassifierId, ClassifierSpec};
use causal_debias::metrics::{self, EvaluationConfig, EvaluationReport, GroupSpec};
use causal_debias::pipeline;
use causal_debias::simulate::{self, RescaleReport, Simulation, SimulationConfig};
use causal_debias::tabular::{ColumnData, ColumnKind, ColumnSpec, Dataset, SchemaFile};
use serde::{Deserialize, Serialize};

use crate::error::ApiError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStage {
    Created,
    Loaded,
    Discovered,
    Refine,
    Debias,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub discovery: DiscoveryConfig,
    /// Seed for simulation and for the evaluation splits.
    pub seed: u64,
    pub groups: Option<GroupSpec>,
    pub learner: ClassifierSpec,
    pub k: usize,
    pub n_splits: usize,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            discovery: DiscoveryConfig::default(),
            seed: 0,
            groups: None,
            learner: ClassifierSpec::new(ClassifierId::Logistic, 0),
            k: 5,
            n_splits: 3,
        }
    }
}

/// Partial update for `set-config`; absent fields keep their value.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigPatch {
    pub revision: u64,
    pub p_value: Option<f64>,
    pub max_cond_size: Option<usize>,
    pub seed: Option<u64>,
    pub label: Option<String>,
    pub favorable: Option<String>,
    pub groups: Option<GroupSpec>,
    pub learner: Option<ClassifierSpec>,
    pub k: Option<usize>,
    pub n_splits: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub name: String,
    pub n_rows: usize,
    pub n_cols: usize,
    pub dropped_rows: usize,
    pub columns: Vec<ColumnSpec>,
    pub label: Option<String>,
    pub favorable: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionInfo {
    pub id: String,
    pub revision: u64,
    pub stage: SessionStage,
    pub config: SessionConfig,
    pub dataset: Option<DatasetInfo>,
    pub has_debiased: bool,
    pub has_report: bool,
}

/// Returned by every call that changes the graph, and by `GET graph`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphResponse {
    pub revision: u64,
    pub stage: SessionStage,
    /// BIC change of the operation, for refine-stage edits.
    pub delta_bic: Option<f64>,
    pub graph: GraphSummary,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PathsResponse {
    pub source: String,
    pub target: String,
    pub paths: Vec<Vec<String>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulateResponse {
    pub revision: u64,
    pub seed: u64,
    pub simulated: Vec<String>,
    pub rescale: BTreeMap<String, RescaleReport>,
    pub warnings: Vec<String>,
    pub distortion: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluateResponse {
    pub revision: u64,
    pub report: EvaluationReport,
}

/// Shares of one column, for the comparison view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    /// Level labels, or bin ranges `[lo, hi)` rendered as strings.
    pub categories: Vec<String>,
    pub original: Vec<f64>,
    pub debiased: Option<Vec<f64>>,
}

/// Row-conditional shares of `target` within each category of `source`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Relation {
    pub source_categories: Vec<String>,
    pub target_categories: Vec<String>,
    pub original: Vec<Vec<f64>>,
    pub debiased: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonResponse {
    pub node: Option<String>,
    pub distribution: Option<Distribution>,
    pub source: Option<String>,
    pub target: Option<String>,
    pub relation: Option<Relation>,
}

/// On-disk snapshot written after each mutating call.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionSnapshot {
    pub id: String,
    pub revision: u64,
    pub stage: SessionStage,
    pub config: SessionConfig,
    pub dataset: Option<String>,
    pub edit_log: Vec<ScriptEntry>,
}

const NUMERIC_BINS: usize = 5;

pub struct Session {
    pub id: String,
    revision: u64,
    stage: SessionStage,
    config: SessionConfig,
    data: Option<Dataset>,
    cpdag: Option<Cpdag>,
    model: Option<CausalModel>,
    debiased: Option<Simulation>,
    report: Option<EvaluationReport>,
}

impl Session {
    pub fn new(id: String) -> Self {
        Session {
            id,
            revision: 0,
            stage: SessionStage::Created,
            config: SessionConfig::default(),
            data: None,
            cpdag: None,
            model: None,
            debiased: None,
            report: None,
        }
    }

    pub fn revision(&self) -> u64 {
        self.revision
    }

    pub fn stage(&self) -> SessionStage {
        self.stage
    }

    pub fn check_revision(&self, revision: u64) -> Result<(), ApiError> {
        if revision != self.revision {
            return Err(ApiError::Conflict(format!(
                "stale revision {revision}; the session is at revision {}",
                self.revision
            )));
        }
        Ok(())
    }

    fn bump(&mut self) {
        self.revision += 1;
    }

    fn data(&self) -> Result<&Dataset, ApiError> {
        self.data
            .as_ref()
            .ok_or_else(|| ApiError::Unprocessable("no dataset uploaded".into()))
    }

    fn model(&self) -> Result<&CausalModel, ApiError> {
        self.model
            .as_ref()
            .ok_or_else(|| ApiError::Unprocessable("no causal model yet; run discover first".into()))
    }

    fn invalidate(&mut self) {
        self.debiased = None;
        self.report = None;
    }

    pub fn info(&self) -> SessionInfo {
        SessionInfo {
            id: self.id.clone(),
            revision: self.revision,
            stage: self.stage,
            config: self.config.clone(),
            dataset: self.data.as_ref().map(|d| {
                let (label, favorable) = label_of(d);
                DatasetInfo {
                    name: d.name.clone(),
                    n_rows: d.n_rows(),
                    n_cols: d.n_cols(),
                    dropped_rows: d.dropped_rows,
                    columns: d.schema().to_vec(),
                    label,
                    favorable,
                }
            }),
            has_debiased: self.debiased.is_some(),
            has_report: self.report.is_some(),
        }
    }

    pub fn snapshot(&self) -> SessionSnapshot {
        SessionSnapshot {
            id: self.id.clone(),
            revision: self.revision,
            stage: self.stage,
            config: self.config.clone(),
            dataset: self.data.as_ref().map(|d| d.name.clone()),
            edit_log: self.edit_log(),
        }
    }

    /// Write `<id>.json` and `<id>.edits.json`; the dataset is written
    /// once, on upload, as `<id>.csv` plus `<id>.schema.json`.
    pub fn write_snapshot(&self, dir: &Path, with_dataset: bool) -> Result<(), ApiError> {
        let io = |e: std::io::Error| ApiError::Internal(format!("snapshot: {e}"));
        std::fs::create_dir_all(dir).map_err(io)?;
        let json = serde_json::to_string_pretty(&self.snapshot()).expect("snapshot serializes");
        std::fs::write(dir.join(format!("{}.json", self.id)), json).map_err(io)?;
        let edits = serde_json::to_string_pretty(&self.edit_log()).expect("script serializes");
        std::fs::write(dir.join(format!("{}.edits.json", self.id)), edits).map_err(io)?;
        if with_dataset {
            if let Some(d) = &self.data {
                d.write_csv(&dir.join(format!("{}.csv", self.id)))?;
                std::fs::write(dir.join(format!("{}.schema.json", self.id)), d.schema_file().to_json()).map_err(io)?;
            }
        }
        Ok(())
    }

    pub fn upload(&mut self, revision: u64, name: &str, csv: &str, schema: Option<&serde_json::Value>) -> Result<SessionInfo, ApiError> {
        self.check_revision(revision)?;
        if !matches!(self.stage, SessionStage::Created | SessionStage::Loaded) {
            return Err(ApiError::Unprocessable(
                "a dataset can only be replaced before discovery; start a new session".into(),
            ));
        }
        let hint = schema.map(|v| SchemaFile::from_json(&v.to_string())).transpose()?;
        let data = causal_debias::tabular::parse_csv(name, csv.as_bytes(), hint.as_ref())?;
        pipeline::check_size(&data)?;
        self.data = Some(data);
        self.stage = SessionStage::Loaded;
        self.invalidate();
        self.bump();
        Ok(self.info())
    }

    pub fn set_config(&mut self, patch: ConfigPatch) -> Result<SessionInfo, ApiError> {
        self.check_revision(patch.revision)?;
        let before_discovery = matches!(self.stage, SessionStage::Created | SessionStage::Loaded);
        let changes_discovery = patch.p_value.is_some() || patch.max_cond_size.is_some();
        let changes_label = patch.label.is_some() || patch.favorable.is_some();
        if (changes_discovery || changes_label) && !before_discovery {
            return Err(ApiError::Unprocessable(
                "p_value, max_cond_size, label and favorable are fixed once the model is discovered".into(),
            ));
        }
        let mut cfg = self.config.clone();
        if let Some(p) = patch.p_value {
            cfg.discovery.alpha = p;
        }
        if patch.max_cond_size.is_some() {
            cfg.discovery.max_cond_size = patch.max_cond_size;
        }
        cfg.discovery.validate()?;
        if let Some(s) = patch.seed {
            cfg.seed = s;
        }
        if let Some(g) = patch.groups {
            cfg.groups = Some(g);
        }
        if let Some(l) = patch.learner {
            l.validate()?;
            cfg.learner = l;
        }
        if let Some(k) = patch.k {
            if k == 0 {
                return Err(ApiError::Unprocessable("k must be at least 1".into()));
            }
            cfg.k = k;
        }
        if let Some(s) = patch.n_splits {
            if s == 0 {
                return Err(ApiError::Unprocessable("n_splits must be at least 1".into()));
            }
            cfg.n_splits = s;
        }
        if changes_label {
            let data = self
                .data
                .as_mut()
                .ok_or_else(|| ApiError::Unprocessable("upload a dataset before choosing the label".into()))?;
            let label = patch
                .label
                .or_else(|| data.label.clone())
                .ok_or_else(|| ApiError::Unprocessable("favorable level given without a label".into()))?;
            data.set_label(&label, patch.favorable.as_deref())?;
        }
        if cfg.seed != self.config.seed {
            self.debiased = None;
        }
        self.report = None;
        self.config = cfg;
        self.bump();
        Ok(self.info())
    }

    pub fn discover(&mut self, revision: u64) -> Result<GraphResponse, ApiError> {
        self.check_revision(revision)?;
        if self.stage != SessionStage::Loaded {
            return Err(ApiError::Unprocessable(match self.stage {
                SessionStage::Created => "upload a dataset first".into(),
                _ => "the model is already discovered".into(),
            }));
        }
        let (cpdag, model) = pipeline::discover_model(self.data()?, &self.config.discovery)?;
        self.cpdag = Some(cpdag);
        self.model = Some(model);
        self.stage = SessionStage::Discovered;
        self.invalidate();
        self.bump();
        self.graph(None)
    }

    pub fn graph(&self, delta_bic: Option<f64>) -> Result<GraphResponse, ApiError> {
        let graph = self.model()?.summary(self.data()?)?;
        Ok(GraphResponse {
            revision: self.revision,
            stage: self.stage,
            delta_bic,
            graph,
            warnings: self.cpdag.as_ref().map(|c| c.warnings.clone()).unwrap_or_default(),
        })
    }

    pub fn refine(&mut self, revision: u64, op: EditOp, source: &str, target: &str) -> Result<GraphResponse, ApiError> {
        self.check_revision(revision)?;
        if !matches!(self.stage, SessionStage::Discovered | SessionStage::Refine) {
            return Err(ApiError::Unprocessable("refine edits are only allowed before switching to debias".into()));
        }
        let data = self.data.as_ref().expect("discovered sessions hold data");
        let model = self.model.as_mut().expect("discovered sessions hold a model");
        let outcome = model.apply_refine(data, op, source, target)?;
        self.stage = SessionStage::Refine;
        self.invalidate();
        self.bump();
        self.graph(outcome.delta_bic)
    }

    /// `action` is `"debias"` (one-way switch) or `"reset"` (drop every
    /// debias edit and return to the model as it was at the switch).
    pub fn toggle_stage(&mut self, revision: u64, action: &str) -> Result<GraphResponse, ApiError> {
        self.check_revision(revision)?;
        match action {
            "debias" => {
                if !matches!(self.stage, SessionStage::Discovered | SessionStage::Refine) {
                    return Err(ApiError::Unprocessable("the session cannot switch to debias from here".into()));
                }
                self.model.as_mut().expect("discovered sessions hold a model").enter_debias()?;
                self.stage = SessionStage::Debias;
            }
            "reset" => {
                if self.stage != SessionStage::Debias {
                    return Err(ApiError::Unprocessable("reset is only available in the debias stage".into()));
                }
                self.model.as_mut().expect("debias sessions hold a model").reset_to_refined()?;
            }
            other => {
                return Err(ApiError::Unprocessable(format!(
                    "unknown stage action `{other}`; expected \"debias\" or \"reset\""
                )))
            }
        }
        self.invalidate();
        self.bump();
        self.graph(None)
    }

    pub fn debias_op(&mut self, revision: u64, op: EditOp, source: &str, target: &str, slider: Option<f64>) -> Result<GraphResponse, ApiError> {
        self.check_revision(revision)?;
        if self.stage != SessionStage::Debias {
            return Err(ApiError::Unprocessable("switch to the debias stage first".into()));
        }
        let data = self.data.as_ref().expect("debias sessions hold data");
        let model = self.model.as_mut().expect("debias sessions hold a model");
        model.apply_debias(data, op, source, target, slider)?;
        self.invalidate();
        self.bump();
        self.graph(None)
    }

    pub fn find_paths(&self, source: &str, target: &str) -> Result<PathsResponse, ApiError> {
        let paths = self.model()?.find_paths(source, target)?;
        Ok(PathsResponse {
            source: source.into(),
            target: target.into(),
            paths,
        })
    }

    pub fn logs(&self) -> Result<LogsView, ApiError> {
        Ok(self.model()?.logs_view())
    }

    pub fn edit_log(&self) -> Vec<ScriptEntry> {
        self.model.as_ref().map(|m| m.log().to_script()).unwrap_or_default()
    }

    /// Simulate with the session seed unless a cached result exists.
    fn ensure_debiased(&mut self) -> Result<&Simulation, ApiError> {
        if self.debiased.is_none() {
            let data = self.data()?;
            let mut model = self.model()?.clone();
            if model.stage() == Stage::Refine {
                model.enter_debias()?;
            }
            let sim = simulate::generate_debiased(data, &model, &SimulationConfig::new(self.config.seed))?;
            self.debiased = Some(sim);
        }
        Ok(self.debiased.as_ref().expect("just filled"))
    }

    pub fn simulate(&mut self, revision: Option<u64>) -> Result<SimulateResponse, ApiError> {
        if let Some(r) = revision {
            self.check_revision(r)?;
        }
        let seed = self.config.seed;
        let rev = self.revision;
        self.ensure_debiased()?;
        let sim = self.debiased.as_ref().expect("just filled");
        let distortion = metrics::distortion(self.data()?, &sim.data)?;
        Ok(SimulateResponse {
            revision: rev,
            seed,
            simulated: sim.simulated.clone(),
            rescale: sim.rescale.clone(),
            warnings: sim.warnings.clone(),
            distortion,
        })
    }

    pub fn debiased_csv(&mut self) -> Result<String, ApiError> {
        Ok(self.ensure_debiased()?.data.to_csv_string())
    }

    pub fn evaluate(&mut self, revision: Option<u64>) -> Result<EvaluateResponse, ApiError> {
        if let Some(r) = revision {
            self.check_revision(r)?;
        }
        if self.report.is_none() {
            let groups = self
                .config
                .groups
                .clone()
                .ok_or_else(|| ApiError::Unprocessable("configure a group spec before evaluating".into()))?;
            let (label, favorable) = label_of(self.data()?);
            let label = label.ok_or_else(|| ApiError::Unprocessable("configure the label column before evaluating".into()))?;
            let favorable =
                favorable.ok_or_else(|| ApiError::Unprocessable("configure the favorable level before evaluating".into()))?;
            let cfg = EvaluationConfig {
                learner: self.config.learner.clone(),
                k: self.config.k,
                n_splits: self.config.n_splits,
                seed: self.config.seed,
            };
            self.ensure_debiased()?;
            let original = self.data.as_ref().expect("checked");
            let debiased = &self.debiased.as_ref().expect("just filled").data;
            self.report = Some(metrics::evaluate(original, debiased, &groups, &label, &favorable, &cfg)?);
        }
        Ok(EvaluateResponse {
            revision: self.revision,
            report: self.report.clone().expect("just filled"),
        })
    }

    /// Distribution of one node, or the relation between two nodes, in
    /// the original data and (when simulated) the debiased data.
    pub fn comparison(&self, node: Option<&str>, source: Option<&str>, target: Option<&str>) -> Result<ComparisonResponse, ApiError> {
        let data = self.data()?;
        let debiased = self.debiased.as_ref().map(|s| &s.data);
        let mut out = ComparisonResponse {
            node: None,
            distribution: None,
            source: None,
            target: None,
            relation: None,
        };
        match (node, source, target) {
            (Some(n), None, None) => {
                let (categories, orig) = categorize(data, n, data)?;
                let deb = debiased
                    .map(|d| categorize(d, n, data).map(|(_, c)| shares(&c, categories.len())))
                    .transpose()?;
                out.node = Some(n.to_string());
                out.distribution = Some(Distribution {
                    original: shares(&orig, categories.len()),
                    debiased: deb,
                    categories,
                });
            }
            (None, Some(s), Some(t)) => {
                let rel = |d: &Dataset| -> Result<(Vec<String>, Vec<String>, Vec<Vec<f64>>), ApiError> {
                    let (sc, s_codes) = categorize(d, s, data)?;
                    let (tc, t_codes) = categorize(d, t, data)?;
                    let mut counts = vec![vec![0usize; tc.len()]; sc.len()];
                    for (a, b) in s_codes.iter().zip(&t_codes) {
                        counts[*a][*b] += 1;
                    }
                    let table = counts
                        .iter()
                        .map(|row| {
                            let total: usize = row.iter().sum();
                            row.iter()
                                .map(|&c| if total == 0 { 0.0 } else { c as f64 / total as f64 })
                                .collect()
                        })
                        .collect();
                    Ok((sc, tc, table))
                };
                let (sc, tc, original) = rel(data)?;
                let deb = debiased.map(|d| rel(d).map(|(_, _, t)| t)).transpose()?;
                out.source = Some(s.to_string());
                out.target = Some(t.to_string());
                out.relation = Some(Relation {
                    source_categories: sc,
                    target_categories: tc,
                    original,
                    debiased: deb,
                });
            }
            _ => {
                return Err(ApiError::Unprocessable(
                    "pass either `node` or both `source` and `target`".into(),
                ))
            }
        }
        Ok(out)
    }
}

fn label_of(d: &Dataset) -> (Option<String>, Option<String>) {
    let favorable = d
        .label
        .as_deref()
        .and_then(|l| d.spec(l).ok())
        .and_then(|s| s.favorable_level.clone());
    (d.label.clone(), favorable)
}

/// Category index per row: the level for nominal columns, otherwise one of
/// `NUMERIC_BINS` equal-width bins over the reference data's range.
fn categorize(d: &Dataset, column: &str, reference: &Dataset) -> Result<(Vec<String>, Vec<usize>), ApiError> {
    let spec = reference.spec(column)?;
    match (spec.kind, d.column(column)?) {
        (ColumnKind::Nominal, ColumnData::Nominal(v)) => Ok((spec.levels.clone(), v.iter().map(|&c| c as usize).collect())),
        (ColumnKind::Numeric, ColumnData::Numeric(v)) => {
            let r = reference.column(column)?.as_numeric().expect("numeric spec");
            let lo = r.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let width = (hi - lo) / NUMERIC_BINS as f64;
            let labels = (0..NUMERIC_BINS)
                .map(|b| format!("[{}, {})", lo + width * b as f64, lo + width * (b + 1) as f64))
                .collect();
            let codes = v
                .iter()
                .map(|x| {
                    if width > 0.0 {
                        (((x - lo) / width).floor().max(0.0) as usize).min(NUMERIC_BINS - 1)
                    } else {
                        0
                    }
                })
                .collect();
            Ok((labels, codes))
        }
        _ => Err(ApiError::Internal(format!("column `{column}` changed kind"))),
    }
}

fn shares(codes: &[usize], k: usize) -> Vec<f64> {
    let mut out = vec![0.0; k];
    for &c in codes {
        out[c] += 1.0;
    }
    let n = codes.len().max(1) as f64;
    out.iter().map(|c| c / n).collect()
}
