//! End-to-end steps shared by the command line and the session service.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::discovery::{self, Cpdag, DiscoveryConfig};
use crate::error::{Error, Result};
use crate::graph::{CausalModel, GraphSummary, ScriptEntry, Stage};
use crate::sem::ModelKind;
use crate::simulate::{self, Simulation, SimulationConfig};
use crate::tabular::{self, Dataset, SchemaFile};

/// Largest dataset accepted for interactive work.
pub const MAX_ROWS: usize = 50_000;
pub const MAX_COLUMNS: usize = 40;

pub fn check_size(data: &Dataset) -> Result<()> {
    if data.n_rows() > MAX_ROWS || data.n_cols() > MAX_COLUMNS {
        return Err(Error::Config(format!(
            "dataset is {} × {}; at most {MAX_ROWS} rows and {MAX_COLUMNS} columns are supported",
            data.n_rows(),
            data.n_cols()
        )));
    }
    Ok(())
}

/// Load a CSV, optionally with a schema file fixing kinds, label and
/// favorable level.
pub fn load_dataset(csv: &Path, schema: Option<&Path>) -> Result<Dataset> {
    let hint = schema.map(SchemaFile::load).transpose()?;
    tabular::load_csv(csv, hint.as_ref())
}

/// Discover a CPDAG and fit the refine-stage model on its directed edges.
pub fn discover_model(data: &Dataset, cfg: &DiscoveryConfig) -> Result<(Cpdag, CausalModel)> {
    let cpdag = discovery::discover(data, cfg)?;
    let model = CausalModel::from_cpdag(data, &cpdag)?;
    Ok((cpdag, model))
}

pub fn parse_script(text: &str) -> Result<Vec<ScriptEntry>> {
    serde_json::from_str(text).map_err(|e| Error::Config(format!("edit script: {e}")))
}

pub fn load_script(path: &Path) -> Result<Vec<ScriptEntry>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_script(&text).map_err(|e| Error::Config(format!("`{}`: {e}", path.display())))
}

/// Replay `script` on a copy of `discovered` and leave it in the debias
/// stage. A rejected record is reported with its index.
pub fn replay_script(data: &Dataset, discovered: &CausalModel, script: &[ScriptEntry]) -> Result<CausalModel> {
    let mut model = discovered.clone();
    model.replay(data, script).map_err(|(index, e)| Error::Script {
        index,
        source: Box::new(e),
    })?;
    if model.stage() == Stage::Refine {
        model.enter_debias()?;
    }
    Ok(model)
}

/// Replay a script and simulate the debiased dataset.
pub fn debias(
    data: &Dataset,
    discovered: &CausalModel,
    script: &[ScriptEntry],
    cfg: &SimulationConfig,
) -> Result<(CausalModel, Simulation)> {
    let model = replay_script(data, discovered, script)?;
    let sim = simulate::generate_debiased(data, &model, cfg)?;
    Ok((model, sim))
}

/// Per-node fit diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeFit {
    pub node: String,
    pub parents: Vec<String>,
    pub kind: ModelKind,
    pub bic: f64,
    pub log_likelihood: f64,
    pub n_params: usize,
    pub fit_quality: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub total_bic: f64,
    pub graph_bic: f64,
    pub nodes: Vec<NodeFit>,
    pub exogenous_bic: std::collections::BTreeMap<String, f64>,
}

pub fn fit_report(model: &CausalModel) -> FitReport {
    let fit = model.fit();
    FitReport {
        total_bic: fit.total_bic,
        graph_bic: fit.graph_bic(),
        nodes: model
            .node_models()
            .values()
            .map(|m| NodeFit {
                node: m.target.clone(),
                parents: m.parents.clone(),
                kind: m.kind,
                bic: m.bic,
                log_likelihood: m.log_likelihood,
                n_params: m.n_params,
                fit_quality: m.fit_quality,
                converged: m.converged,
            })
            .collect(),
        exogenous_bic: fit.null_bic.clone(),
    }
}

/// `graph.json`: the model summary plus discovery warnings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphDocument {
    #[serde(flatten)]
    pub graph: GraphSummary,
    pub warnings: Vec<String>,
}
