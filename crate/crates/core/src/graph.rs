//! The editable causal model.
//!
//! A model starts in the refine stage, where edits change the structure and
//! refit the affected node equations. After the one-way switch to the
//! debias stage, edits scale or delete fitted edges; those records decide
//! which columns get re-simulated.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::discovery::{Cpdag, Mark};
use crate::error::{Error, Result};
use crate::sem::{self, FitScore, NodeModel};
use crate::tabular::{ColumnKind, Dataset};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeState {
    Undirected,
    Directed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Discovered,
    UserAdded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Refine,
    Debias,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditOp {
    Add,
    Delete,
    Reverse,
    Direct,
    SetAlpha,
}

/// An edge of the causal model. Undirected edges keep `source < target`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEdge {
    pub source: String,
    pub target: String,
    pub state: EdgeState,
    /// Debias-stage scale in [0, 2]; always 1 during refinement.
    pub alpha: f64,
    pub origin: Origin,
}

impl ModelEdge {
    fn joins(&self, x: &str, y: &str) -> bool {
        (self.source == x && self.target == y) || (self.source == y && self.target == x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditRecord {
    pub stage: Stage,
    pub op: EditOp,
    pub source: String,
    pub target: String,
    pub alpha_before: Option<f64>,
    pub alpha_after: Option<f64>,
    /// Slider position for `set_alpha`, in percent.
    pub slider: Option<f64>,
}

/// One entry of a persisted edit script.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub stage: Stage,
    pub op: EditOp,
    pub source: String,
    pub target: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slider: Option<f64>,
}

/// Append-only history of accepted edits.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EditLog {
    pub records: Vec<EditRecord>,
}

impl EditLog {
    fn debias_records(&self) -> impl Iterator<Item = &EditRecord> {
        self.records.iter().filter(|r| r.stage == Stage::Debias)
    }

    /// Edges added during the debias stage.
    pub fn added(&self) -> Vec<(String, String)> {
        dedup_pairs(
            self.debias_records()
                .filter(|r| r.op == EditOp::Add)
                .map(|r| (r.source.clone(), r.target.clone())),
        )
    }

    /// Edges deleted, weakened or strengthened during the debias stage.
    pub fn modified(&self) -> Vec<(String, String)> {
        dedup_pairs(
            self.debias_records()
                .filter(|r| matches!(r.op, EditOp::Delete | EditOp::SetAlpha))
                .map(|r| (r.source.clone(), r.target.clone())),
        )
    }

    pub fn to_script(&self) -> Vec<ScriptEntry> {
        self.records
            .iter()
            .map(|r| ScriptEntry {
                stage: r.stage,
                op: r.op,
                source: r.source.clone(),
                target: r.target.clone(),
                slider: r.slider,
            })
            .collect()
    }
}

fn dedup_pairs(it: impl Iterator<Item = (String, String)>) -> Vec<(String, String)> {
    let mut seen = BTreeSet::new();
    it.filter(|p| seen.insert(p.clone())).collect()
}

/// Convert a slider position in percent to an edge scale: `1 + s/100`.
pub fn slider_to_alpha(slider: f64) -> Result<f64> {
    if !(-100.0..=100.0).contains(&slider) {
        return Err(Error::IllegalEdit(format!(
            "slider {slider}% is outside [-100, 100] (alpha must stay in [0, 2])"
        )));
    }
    Ok(1.0 + slider / 100.0)
}

/// Result of an accepted edit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EditOutcome {
    /// Change in graph BIC (refine stage only).
    pub delta_bic: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CausalModel {
    nodes: Vec<String>,
    edges: Vec<ModelEdge>,
    node_models: BTreeMap<String, NodeModel>,
    fit: FitScore,
    stage: Stage,
    log: EditLog,
    refined_snapshot: Option<Box<CausalModel>>,
}

impl CausalModel {
    /// Build the refine-stage model from a discovered CPDAG and fit its
    /// directed edges. Undirected edges are not used for fitting.
    pub fn from_cpdag(data: &Dataset, cpdag: &Cpdag) -> Result<Self> {
        let nodes: Vec<String> = data.column_names().map(str::to_string).collect();
        let mut edges: Vec<ModelEdge> = cpdag
            .edges
            .iter()
            .map(|e| {
                data.index_of(&e.a)?;
                data.index_of(&e.b)?;
                let (source, target) = match e.mark {
                    Mark::Directed => (e.a.clone(), e.b.clone()),
                    Mark::Undirected if e.a <= e.b => (e.a.clone(), e.b.clone()),
                    Mark::Undirected => (e.b.clone(), e.a.clone()),
                };
                Ok(ModelEdge {
                    source,
                    target,
                    state: match e.mark {
                        Mark::Directed => EdgeState::Directed,
                        Mark::Undirected => EdgeState::Undirected,
                    },
                    alpha: 1.0,
                    origin: Origin::Discovered,
                })
            })
            .collect::<Result<_>>()?;
        edges.sort_by(|a, b| (&a.source, &a.target).cmp(&(&b.source, &b.target)));
        let mut model = CausalModel {
            nodes,
            edges,
            node_models: BTreeMap::new(),
            fit: FitScore::default(),
            stage: Stage::Refine,
            log: EditLog::default(),
            refined_snapshot: None,
        };
        if let Some(cycle) = model.find_directed_cycle() {
            return Err(Error::Cycle(cycle));
        }
        let (models, fit) = sem::fit_all(data, &model.directed_pairs())?;
        model.node_models = models;
        model.fit = fit;
        Ok(model)
    }

    pub fn nodes(&self) -> &[String] {
        &self.nodes
    }

    pub fn edges(&self) -> &[ModelEdge] {
        &self.edges
    }

    pub fn node_models(&self) -> &BTreeMap<String, NodeModel> {
        &self.node_models
    }

    pub fn fit(&self) -> &FitScore {
        &self.fit
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub fn log(&self) -> &EditLog {
        &self.log
    }

    pub fn edge(&self, x: &str, y: &str) -> Option<&ModelEdge> {
        self.edges.iter().find(|e| e.joins(x, y))
    }

    pub fn directed_edge(&self, source: &str, target: &str) -> Option<&ModelEdge> {
        self.edges
            .iter()
            .find(|e| e.state == EdgeState::Directed && e.source == source && e.target == target)
    }

    pub fn directed_pairs(&self) -> Vec<(String, String)> {
        self.edges
            .iter()
            .filter(|e| e.state == EdgeState::Directed)
            .map(|e| (e.source.clone(), e.target.clone()))
            .collect()
    }

    fn children(&self, node: &str) -> Vec<&str> {
        let mut out: Vec<&str> = self
            .edges
            .iter()
            .filter(|e| e.state == EdgeState::Directed && e.source == node)
            .map(|e| e.target.as_str())
            .collect();
        out.sort_unstable();
        out
    }

    /// Directed parents in dataset column order.
    pub fn parents(&self, node: &str) -> Vec<&str> {
        let mut out: Vec<&str> = self
            .edges
            .iter()
            .filter(|e| e.state == EdgeState::Directed && e.target == node)
            .map(|e| e.source.as_str())
            .collect();
        out.sort_by_key(|p| self.nodes.iter().position(|n| n == p));
        out
    }

    fn check_node(&self, name: &str) -> Result<()> {
        if self.nodes.iter().any(|n| n == name) {
            Ok(())
        } else {
            Err(Error::UnknownColumn(name.to_string()))
        }
    }

    /// A directed path `from → … → to`, if any (shortest, lexicographic ties).
    fn directed_path(&self, from: &str, to: &str) -> Option<Vec<String>> {
        let mut prev: BTreeMap<&str, &str> = BTreeMap::new();
        let mut queue = VecDeque::from([from]);
        let mut seen = BTreeSet::from([from]);
        while let Some(u) = queue.pop_front() {
            if u == to {
                let mut path = vec![to.to_string()];
                let mut cur = to;
                while let Some(&p) = prev.get(cur) {
                    path.push(p.to_string());
                    cur = p;
                }
                path.reverse();
                return Some(path);
            }
            for v in self.children(u) {
                if seen.insert(v) {
                    prev.insert(v, u);
                    queue.push_back(v);
                }
            }
        }
        None
    }

    /// Reject `source → target` if `target` already reaches `source`.
    fn check_acyclic_with(&self, source: &str, target: &str) -> Result<()> {
        match self.directed_path(target, source) {
            Some(mut path) => {
                path.push(target.to_string());
                Err(Error::Cycle(path))
            }
            None => Ok(()),
        }
    }

    fn find_directed_cycle(&self) -> Option<Vec<String>> {
        for e in self.edges.iter().filter(|e| e.state == EdgeState::Directed) {
            if let Some(mut path) = self.directed_path(&e.target, &e.source) {
                path.push(e.target.clone());
                return Some(path);
            }
        }
        None
    }

    /// Topological order of all nodes; ties broken by name.
    pub fn topological_order(&self) -> Vec<String> {
        let mut indegree: BTreeMap<&str, usize> = self.nodes.iter().map(|n| (n.as_str(), 0)).collect();
        for e in self.edges.iter().filter(|e| e.state == EdgeState::Directed) {
            *indegree.get_mut(e.target.as_str()).expect("edge endpoints are nodes") += 1;
        }
        let mut ready: BTreeSet<&str> = indegree.iter().filter(|(_, &d)| d == 0).map(|(n, _)| *n).collect();
        let mut order = Vec::with_capacity(self.nodes.len());
        while let Some(u) = ready.pop_first() {
            order.push(u.to_string());
            for v in self.children(u) {
                let d = indegree.get_mut(v).expect("child is a node");
                *d -= 1;
                if *d == 0 {
                    ready.insert(v);
                }
            }
        }
        debug_assert_eq!(order.len(), self.nodes.len(), "directed subgraph is acyclic");
        order
    }

    /// Refit the given nodes on their current directed parents.
    fn refit(&mut self, data: &Dataset, nodes: &[&str]) -> Result<()> {
        for &node in nodes {
            let parents = self.parents(node);
            let model = sem::fit_node(data, node, &parents)?;
            if parents.is_empty() {
                self.node_models.remove(node);
                self.fit.per_node.remove(node);
                self.fit.null_bic.insert(node.to_string(), model.bic);
            } else {
                self.fit.null_bic.remove(node);
                self.fit.per_node.insert(node.to_string(), model.bic);
                self.node_models.insert(node.to_string(), model);
            }
        }
        self.fit.total_bic = self.fit.per_node.values().sum();
        Ok(())
    }

    fn push_record(&mut self, op: EditOp, source: &str, target: &str, before: Option<f64>, after: Option<f64>, slider: Option<f64>) {
        self.log.records.push(EditRecord {
            stage: self.stage,
            op,
            source: source.to_string(),
            target: target.to_string(),
            alpha_before: before,
            alpha_after: after,
            slider,
        });
    }

    fn sort_edges(&mut self) {
        self.edges
            .sort_by(|a, b| (&a.source, &a.target).cmp(&(&b.source, &b.target)));
    }

    /// Apply a refine-stage edit and report the change in graph BIC.
    ///
    /// `add` inserts a directed edge between non-adjacent nodes; `delete`
    /// removes a directed or undirected edge; `direct` orients an undirected
    /// edge as `source → target`; `reverse` flips a directed edge.
    pub fn apply_refine(&mut self, data: &Dataset, op: EditOp, source: &str, target: &str) -> Result<EditOutcome> {
        if self.stage != Stage::Refine {
            return Err(Error::Stage("refine edits are only allowed in the refine stage".into()));
        }
        self.check_node(source)?;
        self.check_node(target)?;
        if source == target {
            return Err(Error::IllegalEdit("self-loops are not allowed".into()));
        }
        let before = self.fit.clone();
        let mut next = self.clone();
        let refit: Vec<&str> = match op {
            EditOp::Add => {
                if self.edge(source, target).is_some() {
                    return Err(Error::IllegalEdit(format!("{source} and {target} are already adjacent")));
                }
                self.check_acyclic_with(source, target)?;
                next.edges.push(ModelEdge {
                    source: source.to_string(),
                    target: target.to_string(),
                    state: EdgeState::Directed,
                    alpha: 1.0,
                    origin: Origin::UserAdded,
                });
                vec![target]
            }
            EditOp::Delete => {
                let pos = next
                    .edges
                    .iter()
                    .position(|e| match e.state {
                        EdgeState::Directed => e.source == source && e.target == target,
                        EdgeState::Undirected => e.joins(source, target),
                    })
                    .ok_or_else(|| Error::IllegalEdit(format!("no edge {source} -> {target}")))?;
                let removed = next.edges.remove(pos);
                if removed.state == EdgeState::Directed {
                    vec![target]
                } else {
                    vec![]
                }
            }
            EditOp::Direct => {
                let pos = next
                    .edges
                    .iter()
                    .position(|e| e.state == EdgeState::Undirected && e.joins(source, target))
                    .ok_or_else(|| Error::IllegalEdit(format!("no undirected edge {source} - {target}")))?;
                self.check_acyclic_with(source, target)?;
                let e = &mut next.edges[pos];
                e.source = source.to_string();
                e.target = target.to_string();
                e.state = EdgeState::Directed;
                vec![target]
            }
            EditOp::Reverse => {
                let pos = next
                    .edges
                    .iter()
                    .position(|e| e.state == EdgeState::Directed && e.source == source && e.target == target)
                    .ok_or_else(|| Error::IllegalEdit(format!("no directed edge {source} -> {target}")))?;
                let removed = next.edges.remove(pos);
                next.check_acyclic_with(target, source)?;
                next.edges.push(ModelEdge {
                    source: target.to_string(),
                    target: source.to_string(),
                    ..removed
                });
                vec![source, target]
            }
            EditOp::SetAlpha => {
                return Err(Error::Stage("set_alpha is a debias-stage edit".into()));
            }
        };
        next.sort_edges();
        next.refit(data, &refit)?;
        let delta = sem::delta_bic(&before, &next.fit);
        next.push_record(op, source, target, None, None, None);
        *self = next;
        Ok(EditOutcome { delta_bic: Some(delta) })
    }

    /// Switch to the debias stage, snapshotting the refined model.
    pub fn enter_debias(&mut self) -> Result<()> {
        if self.stage == Stage::Debias {
            return Err(Error::Stage("already in the debias stage".into()));
        }
        self.refined_snapshot = Some(Box::new(self.clone()));
        self.stage = Stage::Debias;
        Ok(())
    }

    /// Drop every debias-stage edit, returning to the state at the switch.
    pub fn reset_to_refined(&mut self) -> Result<()> {
        let snapshot = self
            .refined_snapshot
            .take()
            .ok_or_else(|| Error::Stage("not in the debias stage".into()))?;
        *self = *snapshot.clone();
        self.stage = Stage::Debias;
        self.refined_snapshot = Some(snapshot);
        Ok(())
    }

    /// Apply a debias-stage edit.
    ///
    /// `set_alpha` takes a slider position in percent and stores
    /// `alpha = 1 + s/100`; −100 is recorded as a delete. `delete` removes a
    /// directed edge but keeps the target's fitted equation, so the removed
    /// parent is simulated with alpha 0. `add` inserts a directed edge and
    /// retrains the target on its current parents.
    pub fn apply_debias(&mut self, data: &Dataset, op: EditOp, source: &str, target: &str, slider: Option<f64>) -> Result<EditOutcome> {
        if self.stage != Stage::Debias {
            return Err(Error::Stage("debias edits are only allowed in the debias stage".into()));
        }
        self.check_node(source)?;
        self.check_node(target)?;
        if source == target {
            return Err(Error::IllegalEdit("self-loops are not allowed".into()));
        }
        let require_directed = |m: &CausalModel| -> Result<usize> {
            if let Some(e) = m.edge(source, target) {
                if e.state == EdgeState::Undirected {
                    return Err(Error::IllegalEdit(format!(
                        "{source} - {target} is undirected; direct it during refinement first"
                    )));
                }
            }
            m.edges
                .iter()
                .position(|e| e.state == EdgeState::Directed && e.source == source && e.target == target)
                .ok_or_else(|| Error::IllegalEdit(format!("no directed edge {source} -> {target}")))
        };
        match op {
            EditOp::Add => {
                if self.edge(source, target).is_some() {
                    return Err(Error::IllegalEdit(format!("{source} and {target} are already adjacent")));
                }
                self.check_acyclic_with(source, target)?;
                let mut next = self.clone();
                next.edges.push(ModelEdge {
                    source: source.to_string(),
                    target: target.to_string(),
                    state: EdgeState::Directed,
                    alpha: 1.0,
                    origin: Origin::UserAdded,
                });
                next.sort_edges();
                next.refit(data, &[target])?;
                next.push_record(EditOp::Add, source, target, None, Some(1.0), None);
                *self = next;
            }
            EditOp::Delete => {
                let pos = require_directed(self)?;
                let removed = self.edges.remove(pos);
                self.push_record(EditOp::Delete, source, target, Some(removed.alpha), Some(0.0), None);
            }
            EditOp::SetAlpha => {
                let slider = slider.ok_or_else(|| Error::IllegalEdit("set_alpha needs a slider value".into()))?;
                let alpha = slider_to_alpha(slider)?;
                let pos = require_directed(self)?;
                if alpha == 0.0 {
                    let removed = self.edges.remove(pos);
                    self.push_record(EditOp::Delete, source, target, Some(removed.alpha), Some(0.0), None);
                } else {
                    let before = self.edges[pos].alpha;
                    self.edges[pos].alpha = alpha;
                    self.push_record(EditOp::SetAlpha, source, target, Some(before), Some(alpha), Some(slider));
                }
            }
            EditOp::Reverse | EditOp::Direct => {
                return Err(Error::Stage(format!("{op:?} is a refine-stage edit")));
            }
        }
        Ok(EditOutcome { delta_bic: None })
    }

    /// Apply one script entry, switching to the debias stage on the first
    /// debias entry.
    pub fn apply_entry(&mut self, data: &Dataset, entry: &ScriptEntry) -> Result<EditOutcome> {
        match entry.stage {
            Stage::Refine => self.apply_refine(data, entry.op, &entry.source, &entry.target),
            Stage::Debias => {
                if self.stage == Stage::Refine {
                    self.enter_debias()?;
                }
                self.apply_debias(data, entry.op, &entry.source, &entry.target, entry.slider)
            }
        }
    }

    /// Replay a script on top of `self`; on failure returns the index of
    /// the rejected entry.
    pub fn replay(&mut self, data: &Dataset, script: &[ScriptEntry]) -> std::result::Result<(), (usize, Error)> {
        for (i, entry) in script.iter().enumerate() {
            self.apply_entry(data, entry).map_err(|e| (i, e))?;
        }
        Ok(())
    }

    /// Refine-stage script that turns this model's structure into `dag`:
    /// foreign and wrongly directed edges are deleted, undirected edges are
    /// directed, and the remaining edges of `dag` are added. Every step only
    /// introduces edges of `dag`, so no step can close a cycle.
    pub fn script_to_dag(&self, dag: &[(&str, &str)]) -> Vec<ScriptEntry> {
        let entry = |op, s: &str, t: &str| ScriptEntry {
            stage: Stage::Refine,
            op,
            source: s.to_string(),
            target: t.to_string(),
            slider: None,
        };
        let oriented = |x: &str, y: &str| dag.iter().find(|(s, t)| (*s == x && *t == y) || (*s == y && *t == x)).copied();
        let mut deletes = Vec::new();
        let mut directs = Vec::new();
        let mut present = BTreeSet::new();
        for e in &self.edges {
            match (oriented(&e.source, &e.target), e.state) {
                (None, _) => deletes.push(entry(EditOp::Delete, &e.source, &e.target)),
                (Some((s, t)), EdgeState::Undirected) => {
                    directs.push(entry(EditOp::Direct, s, t));
                    present.insert((s, t));
                }
                (Some((s, t)), EdgeState::Directed) if e.source == s => {
                    present.insert((s, t));
                }
                (Some(_), EdgeState::Directed) => deletes.push(entry(EditOp::Delete, &e.source, &e.target)),
            }
        }
        let adds = dag
            .iter()
            .filter(|p| !present.contains(*p))
            .map(|(s, t)| entry(EditOp::Add, s, t));
        deletes.into_iter().chain(directs).chain(adds).collect()
    }

    /// Every simple directed path from `source` to `target`, sorted.
    pub fn find_paths(&self, source: &str, target: &str) -> Result<Vec<Vec<String>>> {
        self.check_node(source)?;
        self.check_node(target)?;
        if source == target {
            return Err(Error::Config("source and target must differ".into()));
        }
        let mut paths = Vec::new();
        let mut stack = vec![source.to_string()];
        self.paths_dfs(target, &mut stack, &mut paths);
        paths.sort();
        Ok(paths)
    }

    fn paths_dfs(&self, target: &str, stack: &mut Vec<String>, out: &mut Vec<Vec<String>>) {
        let last = stack.last().expect("non-empty").clone();
        for child in self.children(&last) {
            if child == target {
                let mut p = stack.clone();
                p.push(child.to_string());
                out.push(p);
            } else if !stack.iter().any(|s| s == child) {
                stack.push(child.to_string());
                self.paths_dfs(target, stack, out);
                stack.pop();
            }
        }
    }

    /// All nodes reachable from `node` along directed edges (excluding it).
    pub fn descendants(&self, node: &str) -> BTreeSet<String> {
        let mut seen = BTreeSet::new();
        let mut stack = vec![node];
        while let Some(u) = stack.pop() {
            for v in self.children(u) {
                if seen.insert(v.to_string()) {
                    stack.push(v);
                }
            }
        }
        seen.remove(node);
        seen
    }

    /// Nodes to re-simulate: the heads of every debias-stage edit plus all
    /// their descendants.
    pub fn debias_footprint(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        for (_, head) in self.log.modified().into_iter().chain(self.log.added()) {
            out.extend(self.descendants(&head));
            out.insert(head);
        }
        out
    }

    /// Scale applied to each parent of `node`'s fitted equation: the edge's
    /// alpha, or 0 for a parent whose edge was deleted while debiasing.
    pub fn parent_alphas(&self, node: &str) -> Vec<(String, f64)> {
        let Some(model) = self.node_models.get(node) else {
            return Vec::new();
        };
        model
            .parents
            .iter()
            .map(|p| {
                let alpha = self.directed_edge(p, node).map(|e| e.alpha).unwrap_or(0.0);
                (p.clone(), alpha)
            })
            .collect()
    }

    /// Debias-stage changes for the logs overlay.
    pub fn logs_view(&self) -> LogsView {
        let mut last: BTreeMap<(String, String), &EditRecord> = BTreeMap::new();
        for r in self.log.debias_records() {
            last.insert((r.source.clone(), r.target.clone()), r);
        }
        let added_set: BTreeSet<(String, String)> = self.log.added().into_iter().collect();
        let mut view = LogsView::default();
        for ((s, t), r) in last {
            let pair = (s.clone(), t.clone());
            match r.op {
                EditOp::Delete => view.deleted.push(pair),
                _ if added_set.contains(&pair) => view.added.push(pair),
                _ => view.modified.push(LoggedAlpha {
                    source: s,
                    target: t,
                    alpha: r.alpha_after.unwrap_or(1.0),
                }),
            }
        }
        view.impacted = self.debias_footprint().into_iter().collect();
        view
    }

    /// Everything the graph view needs, with per-edge standardized weights.
    pub fn summary(&self, data: &Dataset) -> Result<GraphSummary> {
        let mut nodes = Vec::with_capacity(self.nodes.len());
        for name in &self.nodes {
            let spec = data.spec(name)?;
            let model = self.node_models.get(name);
            nodes.push(NodeSummary {
                name: name.clone(),
                kind: spec.kind,
                levels: spec.levels.clone(),
                endogenous: model.is_some(),
                bic: self.fit.per_node.get(name).or_else(|| self.fit.null_bic.get(name)).copied(),
                fit_quality: model.map(|m| m.fit_quality),
            });
        }
        let mut edges = Vec::with_capacity(self.edges.len());
        for e in &self.edges {
            let weight = match (e.state, self.node_models.get(&e.target)) {
                (EdgeState::Directed, Some(m)) if m.parents.contains(&e.source) => Some(sem::edge_weight(m, &e.source, data)?),
                _ => None,
            };
            let std_beta = weight.as_ref().and_then(|w| w.std_beta);
            edges.push(EdgeSummary {
                source: e.source.clone(),
                target: e.target.clone(),
                state: e.state,
                origin: e.origin,
                alpha: e.alpha,
                std_beta,
                effective_std_beta: std_beta.map(|b| b * e.alpha),
                representable: weight.map(|w| w.representable).unwrap_or(false),
            });
        }
        Ok(GraphSummary {
            stage: self.stage,
            nodes,
            edges,
            fit: self.fit.clone(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSummary {
    pub name: String,
    pub kind: ColumnKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub levels: Vec<String>,
    pub endogenous: bool,
    pub bic: Option<f64>,
    /// R² (numeric) or training accuracy (nominal) of the node's equation.
    pub fit_quality: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeSummary {
    pub source: String,
    pub target: String,
    pub state: EdgeState,
    pub origin: Origin,
    pub alpha: f64,
    pub std_beta: Option<f64>,
    /// `alpha · std_beta`, which sets the drawn edge width.
    pub effective_std_beta: Option<f64>,
    pub representable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphSummary {
    pub stage: Stage,
    pub nodes: Vec<NodeSummary>,
    pub edges: Vec<EdgeSummary>,
    pub fit: FitScore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoggedAlpha {
    pub source: String,
    pub target: String,
    pub alpha: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LogsView {
    pub added: Vec<(String, String)>,
    pub deleted: Vec<(String, String)>,
    pub modified: Vec<LoggedAlpha>,
    /// Nodes that will be re-simulated.
    pub impacted: Vec<String>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discovery::CpdagEdge;
    use crate::tabular::{ColumnData, ColumnSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    /// Numeric data following the DAG s→b, s→c, a→y, b→y, c→y.
    fn fig2_data(n: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = || rng.sample::<f64, _>(StandardNormal);
        let mut cols: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
        for _ in 0..n {
            let s = g();
            let a = g();
            let b = 0.8 * s + g();
            let c = -0.6 * s + g();
            let y = 0.5 * a + 0.7 * b + 0.4 * c + g();
            for (k, v) in [("a", a), ("s", s), ("b", b), ("c", c), ("y", y)] {
                cols.entry(k).or_default().push(v);
            }
        }
        let names = ["a", "s", "b", "c", "y"];
        Dataset::new(
            "fig2",
            names.iter().map(|n| ColumnSpec::numeric(*n)).collect(),
            names.iter().map(|n| ColumnData::Numeric(cols[n].clone())).collect(),
        )
        .unwrap()
    }

    fn cpdag(directed: &[(&str, &str)], undirected: &[(&str, &str)], nodes: &[&str]) -> Cpdag {
        let mut edges: Vec<CpdagEdge> = directed
            .iter()
            .map(|(a, b)| CpdagEdge { a: a.to_string(), b: b.to_string(), mark: Mark::Directed })
            .collect();
        edges.extend(undirected.iter().map(|(a, b)| CpdagEdge { a: a.to_string(), b: b.to_string(), mark: Mark::Undirected }));
        Cpdag {
            nodes: nodes.iter().map(|s| s.to_string()).collect(),
            edges,
            ..Default::default()
        }
    }

    fn fig2_model(data: &Dataset) -> CausalModel {
        let g = cpdag(
            &[("s", "b"), ("s", "c"), ("a", "y"), ("b", "y"), ("c", "y")],
            &[],
            &["a", "s", "b", "c", "y"],
        );
        CausalModel::from_cpdag(data, &g).unwrap()
    }

    #[test]
    fn exogenous_nodes_have_no_model() {
        let d = fig2_data(300, 1);
        let m = fig2_model(&d);
        let endo: Vec<&String> = m.node_models().keys().collect();
        assert_eq!(endo, vec!["b", "c", "y"]);
        assert_eq!(m.node_models()["y"].parents, vec!["a", "b", "c"]);
    }

    #[test]
    fn footprint_of_fig2_edits() {
        let d = fig2_data(300, 2);
        let mut m = fig2_model(&d);
        assert!(m.debias_footprint().is_empty());
        m.enter_debias().unwrap();
        m.apply_debias(&d, EditOp::Delete, "s", "b", None).unwrap();
        m.apply_debias(&d, EditOp::SetAlpha, "s", "c", Some(-35.0)).unwrap();
        let v: Vec<String> = m.debias_footprint().into_iter().collect();
        assert_eq!(v, vec!["b", "c", "y"]);
        assert!((m.directed_edge("s", "c").unwrap().alpha - 0.65).abs() < 1e-12);
        let alphas = m.parent_alphas("b");
        assert_eq!(alphas, vec![("s".to_string(), 0.0)]);
    }

    #[test]
    fn slider_mapping() {
        assert!((slider_to_alpha(-35.0).unwrap() - 0.65).abs() < 1e-12);
        assert!((slider_to_alpha(35.0).unwrap() - 1.35).abs() < 1e-12);
        assert_eq!(slider_to_alpha(-100.0).unwrap(), 0.0);
        assert!(slider_to_alpha(150.0).is_err());
    }

    #[test]
    fn slider_minus_100_is_delete() {
        let d = fig2_data(200, 3);
        let mut m = fig2_model(&d);
        m.enter_debias().unwrap();
        m.apply_debias(&d, EditOp::SetAlpha, "s", "b", Some(-100.0)).unwrap();
        assert!(m.directed_edge("s", "b").is_none());
        assert_eq!(m.log().records.last().unwrap().op, EditOp::Delete);
        assert!(m.edges().iter().all(|e| e.alpha != 0.0));
    }

    #[test]
    fn add_then_delete_is_identity() {
        let d = fig2_data(400, 4);
        let mut m = fig2_model(&d);
        let start = m.clone();
        let d1 = m.apply_refine(&d, EditOp::Add, "a", "b").unwrap().delta_bic.unwrap();
        let d2 = m.apply_refine(&d, EditOp::Delete, "a", "b").unwrap().delta_bic.unwrap();
        assert!((d1 + d2).abs() < 1e-6);
        assert_eq!(m.edges(), start.edges());
        assert_eq!(m.node_models(), start.node_models());
    }

    #[test]
    fn cycles_are_rejected_with_witness() {
        let d = fig2_data(200, 5);
        let mut m = fig2_model(&d);
        let err = m.apply_refine(&d, EditOp::Add, "y", "s").unwrap_err();
        match err {
            Error::Cycle(path) => {
                assert_eq!(path.first().unwrap(), "s");
                assert_eq!(path.last().unwrap(), "s");
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(m.apply_refine(&d, EditOp::Reverse, "a", "b").is_err());
    }

    #[test]
    fn refine_ops_need_matching_edges() {
        let d = fig2_data(200, 6);
        let g = cpdag(&[("s", "c"), ("a", "y"), ("b", "y"), ("c", "y")], &[("b", "s")], &["a", "s", "b", "c", "y"]);
        let mut m = CausalModel::from_cpdag(&d, &g).unwrap();
        assert!(m.apply_refine(&d, EditOp::Reverse, "b", "s").is_err());
        assert!(m.apply_refine(&d, EditOp::Direct, "s", "c").is_err());
        assert!(m.apply_refine(&d, EditOp::Add, "s", "b").is_err());
        let out = m.apply_refine(&d, EditOp::Direct, "s", "b").unwrap();
        assert!(out.delta_bic.unwrap() < 0.0);
        assert!(m.directed_edge("s", "b").is_some());
        m.apply_refine(&d, EditOp::Reverse, "s", "b").unwrap();
        assert!(m.directed_edge("b", "s").is_some());
    }

    #[test]
    fn debias_rejects_undirected_and_wrong_stage() {
        let d = fig2_data(200, 7);
        let g = cpdag(&[("a", "y")], &[("b", "s")], &["a", "s", "b", "c", "y"]);
        let mut m = CausalModel::from_cpdag(&d, &g).unwrap();
        assert!(matches!(m.apply_debias(&d, EditOp::Delete, "a", "y", None), Err(Error::Stage(_))));
        m.enter_debias().unwrap();
        assert!(matches!(m.apply_refine(&d, EditOp::Delete, "a", "y"), Err(Error::Stage(_))));
        assert!(m.apply_debias(&d, EditOp::SetAlpha, "b", "s", Some(10.0)).is_err());
        assert!(m.apply_debias(&d, EditOp::SetAlpha, "a", "y", Some(120.0)).is_err());
    }

    #[test]
    fn paths_in_diamond() {
        let d = fig2_data(100, 8);
        let m = fig2_model(&d);
        let paths = m.find_paths("s", "y").unwrap();
        assert_eq!(paths, vec![vec!["s", "b", "y"], vec!["s", "c", "y"]]);
        assert!(m.find_paths("y", "s").unwrap().is_empty());
    }

    #[test]
    fn replay_reproduces_model() {
        let d = fig2_data(300, 9);
        let discovered = fig2_model(&d);
        let mut m = discovered.clone();
        m.apply_refine(&d, EditOp::Add, "a", "b").unwrap();
        m.apply_refine(&d, EditOp::Reverse, "s", "c").unwrap();
        m.enter_debias().unwrap();
        m.apply_debias(&d, EditOp::SetAlpha, "b", "y", Some(40.0)).unwrap();
        m.apply_debias(&d, EditOp::Delete, "c", "s", None).unwrap();
        let mut again = discovered.clone();
        again.replay(&d, &m.log().to_script()).unwrap();
        assert_eq!(again.edges(), m.edges());
        assert_eq!(again.node_models(), m.node_models());
        assert_eq!(again.log(), m.log());
    }

    #[test]
    fn reset_restores_refined_state() {
        let d = fig2_data(200, 10);
        let mut m = fig2_model(&d);
        m.enter_debias().unwrap();
        let at_switch = m.edges().to_vec();
        m.apply_debias(&d, EditOp::Delete, "s", "b", None).unwrap();
        m.reset_to_refined().unwrap();
        assert_eq!(m.edges(), at_switch.as_slice());
        assert_eq!(m.stage(), Stage::Debias);
        assert!(m.debias_footprint().is_empty());
    }

    #[test]
    fn logs_view_lists_changes() {
        let d = fig2_data(200, 11);
        let mut m = fig2_model(&d);
        m.enter_debias().unwrap();
        m.apply_debias(&d, EditOp::Delete, "s", "b", None).unwrap();
        m.apply_debias(&d, EditOp::SetAlpha, "s", "c", Some(-35.0)).unwrap();
        m.apply_debias(&d, EditOp::Add, "a", "c", None).unwrap();
        let v = m.logs_view();
        assert_eq!(v.deleted, vec![("s".to_string(), "b".to_string())]);
        assert_eq!(v.added, vec![("a".to_string(), "c".to_string())]);
        assert_eq!(v.modified.len(), 1);
        assert_eq!(v.impacted, vec!["b", "c", "y"]);
    }

    #[test]
    fn summary_reports_effective_weights() {
        let d = fig2_data(500, 12);
        let mut m = fig2_model(&d);
        m.enter_debias().unwrap();
        m.apply_debias(&d, EditOp::SetAlpha, "s", "b", Some(-75.0)).unwrap();
        let s = m.summary(&d).unwrap();
        let e = s.edges.iter().find(|e| e.source == "s" && e.target == "b").unwrap();
        assert!((e.alpha - 0.25).abs() < 1e-12);
        assert!((e.effective_std_beta.unwrap() - 0.25 * e.std_beta.unwrap()).abs() < 1e-12);
    }
}
