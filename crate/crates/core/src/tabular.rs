//! Typed in-memory tables: CSV ingestion, schema files, dummy/z-score
//! encoding and the Gower row distance.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Numeric,
    Nominal,
}

/// Declared type of one column. Nominal columns carry their ordered levels;
/// cells refer to levels by index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub levels: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub favorable_level: Option<String>,
}

impl ColumnSpec {
    pub fn numeric(name: impl Into<String>) -> Self {
        ColumnSpec {
            name: name.into(),
            kind: ColumnKind::Numeric,
            levels: Vec::new(),
            favorable_level: None,
        }
    }

    pub fn nominal<S: Into<String>>(name: impl Into<String>, levels: impl IntoIterator<Item = S>) -> Self {
        ColumnSpec {
            name: name.into(),
            kind: ColumnKind::Nominal,
            levels: levels.into_iter().map(Into::into).collect(),
            favorable_level: None,
        }
    }

    pub fn is_nominal(&self) -> bool {
        self.kind == ColumnKind::Nominal
    }

    pub fn level_index(&self, level: &str) -> Option<u32> {
        self.levels.iter().position(|l| l == level).map(|i| i as u32)
    }

    fn validate(&self) -> Result<()> {
        match self.kind {
            ColumnKind::Numeric if !self.levels.is_empty() => Err(Error::Schema(format!(
                "numeric column `{}` must not declare levels",
                self.name
            ))),
            ColumnKind::Nominal => {
                if self.levels.len() < 2 {
                    return Err(Error::Schema(format!(
                        "nominal column `{}` has {} level(s); at least 2 are required",
                        self.name,
                        self.levels.len()
                    )));
                }
                let distinct: BTreeSet<&String> = self.levels.iter().collect();
                if distinct.len() != self.levels.len() {
                    return Err(Error::Schema(format!(
                        "nominal column `{}` has duplicate levels",
                        self.name
                    )));
                }
                if let Some(fav) = &self.favorable_level {
                    if !self.levels.contains(fav) {
                        return Err(Error::Schema(format!(
                            "favorable level `{fav}` is not a level of `{}`",
                            self.name
                        )));
                    }
                }
                Ok(())
            }
            ColumnKind::Numeric => Ok(()),
        }
    }
}

/// Column storage. Nominal cells are indices into the column's levels.
#[derive(Debug, Clone, PartialEq)]
pub enum ColumnData {
    Numeric(Vec<f64>),
    Nominal(Vec<u32>),
}

impl ColumnData {
    pub fn len(&self) -> usize {
        match self {
            ColumnData::Numeric(v) => v.len(),
            ColumnData::Nominal(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn as_numeric(&self) -> Option<&[f64]> {
        match self {
            ColumnData::Numeric(v) => Some(v),
            ColumnData::Nominal(_) => None,
        }
    }

    pub fn as_nominal(&self) -> Option<&[u32]> {
        match self {
            ColumnData::Nominal(v) => Some(v),
            ColumnData::Numeric(_) => None,
        }
    }

    pub fn cell(&self, row: usize) -> Cell {
        match self {
            ColumnData::Numeric(v) => Cell::Num(v[row]),
            ColumnData::Nominal(v) => Cell::Cat(v[row]),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cell {
    Num(f64),
    Cat(u32),
}

/// A complete (no missing cells) column-typed table.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    schema: Vec<ColumnSpec>,
    columns: Vec<ColumnData>,
    n_rows: usize,
    /// Rows dropped at load time because a cell was empty.
    pub dropped_rows: usize,
    /// Label column named in the schema file, if any.
    pub label: Option<String>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, schema: Vec<ColumnSpec>, columns: Vec<ColumnData>) -> Result<Self> {
        if schema.len() != columns.len() {
            return Err(Error::Schema(format!(
                "{} column specs for {} columns",
                schema.len(),
                columns.len()
            )));
        }
        if schema.len() < 2 {
            return Err(Error::Schema("a dataset needs at least 2 columns".into()));
        }
        let mut names = BTreeSet::new();
        for spec in &schema {
            spec.validate()?;
            if !names.insert(spec.name.as_str()) {
                return Err(Error::Schema(format!("duplicate column `{}`", spec.name)));
            }
        }
        let n_rows = columns[0].len();
        if n_rows == 0 {
            return Err(Error::Schema("dataset has zero usable rows".into()));
        }
        for (spec, col) in schema.iter().zip(&columns) {
            if col.len() != n_rows {
                return Err(Error::Schema(format!("column `{}` has {} rows, expected {n_rows}", spec.name, col.len())));
            }
            match (spec.kind, col) {
                (ColumnKind::Numeric, ColumnData::Numeric(v)) => {
                    if let Some(bad) = v.iter().find(|x| !x.is_finite()) {
                        return Err(Error::Schema(format!("column `{}` holds non-finite value {bad}", spec.name)));
                    }
                }
                (ColumnKind::Nominal, ColumnData::Nominal(v)) => {
                    let l = spec.levels.len() as u32;
                    if v.iter().any(|&c| c >= l) {
                        return Err(Error::Schema(format!("column `{}` has a code outside its levels", spec.name)));
                    }
                }
                _ => {
                    return Err(Error::Schema(format!("column `{}` data does not match its kind", spec.name)));
                }
            }
        }
        Ok(Dataset {
            name: name.into(),
            schema,
            columns,
            n_rows,
            dropped_rows: 0,
            label: None,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.schema.len()
    }

    pub fn schema(&self) -> &[ColumnSpec] {
        &self.schema
    }

    pub fn columns(&self) -> &[ColumnData] {
        &self.columns
    }

    pub fn column_names(&self) -> impl Iterator<Item = &str> {
        self.schema.iter().map(|s| s.name.as_str())
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.schema
            .iter()
            .position(|s| s.name == name)
            .ok_or_else(|| Error::UnknownColumn(name.to_string()))
    }

    pub fn spec(&self, name: &str) -> Result<&ColumnSpec> {
        Ok(&self.schema[self.index_of(name)?])
    }

    pub fn column(&self, name: &str) -> Result<&ColumnData> {
        Ok(&self.columns[self.index_of(name)?])
    }

    pub fn row(&self, i: usize) -> Vec<Cell> {
        self.columns.iter().map(|c| c.cell(i)).collect()
    }

    /// Replace one column's data, keeping schema and row count.
    pub fn replace_column(&mut self, name: &str, data: ColumnData) -> Result<()> {
        let idx = self.index_of(name)?;
        if data.len() != self.n_rows {
            return Err(Error::Schema(format!("replacement for `{name}` has wrong length")));
        }
        match (self.schema[idx].kind, &data) {
            (ColumnKind::Numeric, ColumnData::Numeric(_)) | (ColumnKind::Nominal, ColumnData::Nominal(_)) => {}
            _ => return Err(Error::Schema(format!("replacement for `{name}` has the wrong kind"))),
        }
        self.columns[idx] = data;
        Ok(())
    }

    /// Row subset, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        let columns = self
            .columns
            .iter()
            .map(|c| match c {
                ColumnData::Numeric(v) => ColumnData::Numeric(rows.iter().map(|&r| v[r]).collect()),
                ColumnData::Nominal(v) => ColumnData::Nominal(rows.iter().map(|&r| v[r]).collect()),
            })
            .collect();
        Dataset {
            name: self.name.clone(),
            schema: self.schema.clone(),
            columns,
            n_rows: rows.len(),
            dropped_rows: 0,
            label: self.label.clone(),
        }
    }

    /// Same column names, kinds and levels.
    pub fn same_schema(&self, other: &Dataset) -> bool {
        self.schema.len() == other.schema.len()
            && self
                .schema
                .iter()
                .zip(&other.schema)
                .all(|(a, b)| a.name == b.name && a.kind == b.kind && a.levels == b.levels)
    }

    /// Re-express `self` in `reference`'s column order and level indices, so a
    /// reloaded file missing some level still lines up. Fails when a column
    /// is missing, has another kind, or holds a level `reference` lacks.
    pub fn conform_to(&self, reference: &Dataset) -> Result<Dataset> {
        let mut columns = Vec::with_capacity(reference.n_cols());
        for spec in &reference.schema {
            let idx = self
                .index_of(&spec.name)
                .map_err(|_| Error::Schema(format!("column `{}` is missing", spec.name)))?;
            let own = &self.schema[idx];
            let col = match (&self.columns[idx], spec.kind) {
                (ColumnData::Numeric(v), ColumnKind::Numeric) => ColumnData::Numeric(v.clone()),
                (ColumnData::Nominal(v), ColumnKind::Nominal) => {
                    let map = own
                        .levels
                        .iter()
                        .map(|l| {
                            spec.level_index(l).ok_or_else(|| {
                                Error::Schema(format!("column `{}` has level `{l}` absent from the reference", spec.name))
                            })
                        })
                        .collect::<Result<Vec<u32>>>()?;
                    ColumnData::Nominal(v.iter().map(|&c| map[c as usize]).collect())
                }
                _ => return Err(Error::Schema(format!("column `{}` changed kind", spec.name))),
            };
            columns.push(col);
        }
        let mut out = Dataset::new(self.name.clone(), reference.schema.clone(), columns)?;
        out.label = reference.label.clone();
        Ok(out)
    }

    /// Counts per level of a nominal column.
    pub fn level_counts(&self, name: &str) -> Result<Vec<usize>> {
        let spec = self.spec(name)?;
        let codes = self
            .column(name)?
            .as_nominal()
            .ok_or_else(|| Error::Schema(format!("column `{name}` is not nominal")))?;
        let mut counts = vec![0usize; spec.levels.len()];
        for &c in codes {
            counts[c as usize] += 1;
        }
        Ok(counts)
    }

    /// Per-numeric-column value range (max − min); `None` for nominal columns.
    pub fn numeric_ranges(&self) -> Vec<Option<f64>> {
        self.columns
            .iter()
            .map(|c| match c {
                ColumnData::Numeric(v) => {
                    let (lo, hi) = v
                        .iter()
                        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
                    Some(hi - lo)
                }
                ColumnData::Nominal(_) => None,
            })
            .collect()
    }

    /// Serialize to CSV with a header row. Floats use the shortest
    /// representation that round-trips.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::new();
        let header: Vec<String> = self.schema.iter().map(|s| csv_field(&s.name)).collect();
        out.push_str(&header.join(","));
        out.push('\n');
        for r in 0..self.n_rows {
            for (j, (spec, col)) in self.schema.iter().zip(&self.columns).enumerate() {
                if j > 0 {
                    out.push(',');
                }
                match col {
                    ColumnData::Numeric(v) => {
                        let _ = write!(out, "{}", v[r]);
                    }
                    ColumnData::Nominal(v) => out.push_str(&csv_field(&spec.levels[v[r] as usize])),
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv_string()).map_err(|e| Error::io(path, e))
    }

    /// The schema file describing this dataset's column kinds.
    pub fn schema_file(&self) -> SchemaFile {
        let fav = self
            .label
            .as_ref()
            .and_then(|l| self.spec(l).ok())
            .and_then(|s| s.favorable_level.clone());
        SchemaFile {
            columns: self.schema.iter().map(|s| (s.name.clone(), s.kind)).collect(),
            label: self.label.clone(),
            favorable: fav,
        }
    }

    /// Set the label column and its favorable level.
    pub fn set_label(&mut self, label: &str, favorable: Option<&str>) -> Result<()> {
        let idx = self.index_of(label)?;
        let spec = &mut self.schema[idx];
        if !spec.is_nominal() {
            return Err(Error::Schema(format!("label `{label}` must be nominal")));
        }
        if let Some(f) = favorable {
            if spec.level_index(f).is_none() {
                return Err(Error::Schema(format!("favorable level `{f}` is not a level of `{label}`")));
            }
            spec.favorable_level = Some(f.to_string());
        }
        self.label = Some(label.to_string());
        Ok(())
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// JSON schema hint: `{column: "numeric"|"nominal", "label": .., "favorable": ..}`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SchemaFile {
    pub columns: BTreeMap<String, ColumnKind>,
    pub label: Option<String>,
    pub favorable: Option<String>,
}

impl SchemaFile {
    pub fn from_json(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text).map_err(|e| Error::Schema(format!("invalid schema JSON: {e}")))?;
        let obj = value
            .as_object()
            .ok_or_else(|| Error::Schema("schema file must be a JSON object".into()))?;
        let mut out = SchemaFile::default();
        for (k, v) in obj {
            let s = v
                .as_str()
                .ok_or_else(|| Error::Schema(format!("schema entry `{k}` must be a string")))?;
            match k.as_str() {
                "label" => out.label = Some(s.to_string()),
                "favorable" => out.favorable = Some(s.to_string()),
                _ => {
                    let kind = match s {
                        "numeric" => ColumnKind::Numeric,
                        "nominal" => ColumnKind::Nominal,
                        other => {
                            return Err(Error::Schema(format!(
                                "column `{k}` has kind `{other}`; expected \"numeric\" or \"nominal\""
                            )))
                        }
                    };
                    out.columns.insert(k.clone(), kind);
                }
            }
        }
        Ok(out)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        let mut map = serde_json::Map::new();
        for (k, kind) in &self.columns {
            let s = match kind {
                ColumnKind::Numeric => "numeric",
                ColumnKind::Nominal => "nominal",
            };
            map.insert(k.clone(), Value::String(s.into()));
        }
        if let Some(l) = &self.label {
            map.insert("label".into(), Value::String(l.clone()));
        }
        if let Some(f) = &self.favorable {
            map.insert("favorable".into(), Value::String(f.clone()));
        }
        serde_json::to_string_pretty(&Value::Object(map)).expect("schema serializes")
    }
}

/// Load a CSV file; see [`parse_csv`].
pub fn load_csv(path: &Path, schema_hint: Option<&SchemaFile>) -> Result<Dataset> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    parse_csv(&name, &bytes, schema_hint)
}

/// Parse CSV bytes into a [`Dataset`].
///
/// Columns without a hint are numeric when every cell parses as a finite
/// number, nominal otherwise. Rows with an empty cell are dropped and
/// counted in [`Dataset::dropped_rows`]. Nominal levels are sorted.
pub fn parse_csv(name: &str, bytes: &[u8], schema_hint: Option<&SchemaFile>) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(bytes);
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Csv(e.to_string()))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if let Some(hint) = schema_hint {
        for col in hint.columns.keys() {
            if !header.contains(col) {
                return Err(Error::Schema(format!("schema names column `{col}` which is not in the header")));
            }
        }
    }

    let mut raw: Vec<Vec<String>> = vec![Vec::new(); header.len()];
    let mut dropped = 0usize;
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| match e.kind() {
            csv::ErrorKind::UnequalLengths { .. } => {
                Error::Csv(format!("row {} does not match header arity {}", line + 2, header.len()))
            }
            _ => Error::Csv(e.to_string()),
        })?;
        if record.iter().any(|c| c.trim().is_empty()) {
            dropped += 1;
            continue;
        }
        for (j, cell) in record.iter().enumerate() {
            raw[j].push(cell.trim().to_string());
        }
    }
    if raw[0].is_empty() {
        return Err(Error::Schema("dataset has zero usable rows".into()));
    }

    let mut schema = Vec::with_capacity(header.len());
    let mut columns = Vec::with_capacity(header.len());
    for (name, cells) in header.iter().zip(raw) {
        let hinted = schema_hint.and_then(|h| h.columns.get(name)).copied();
        let parsed: Option<Vec<f64>> = cells
            .iter()
            .map(|c| c.parse::<f64>().ok().filter(|x| x.is_finite()))
            .collect();
        let kind = match (hinted, &parsed) {
            (Some(k), _) => k,
            (None, Some(_)) => ColumnKind::Numeric,
            (None, None) => ColumnKind::Nominal,
        };
        match kind {
            ColumnKind::Numeric => {
                let values = parsed.ok_or_else(|| {
                    Error::Schema(format!("column `{name}` is declared numeric but holds non-numeric cells"))
                })?;
                schema.push(ColumnSpec::numeric(name.clone()));
                columns.push(ColumnData::Numeric(values));
            }
            ColumnKind::Nominal => {
                let levels: Vec<String> = cells.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
                if levels.len() < 2 {
                    return Err(Error::Schema(format!(
                        "nominal column `{name}` has {} level after load",
                        levels.len()
                    )));
                }
                let index: BTreeMap<&str, u32> =
                    levels.iter().enumerate().map(|(i, l)| (l.as_str(), i as u32)).collect();
                let codes = cells.iter().map(|c| index[c.as_str()]).collect();
                schema.push(ColumnSpec::nominal(name.clone(), levels));
                columns.push(ColumnData::Nominal(codes));
            }
        }
    }

    let mut data = Dataset::new(name, schema, columns)?;
    data.dropped_rows = dropped;
    if let Some(hint) = schema_hint {
        if let Some(label) = &hint.label {
            data.set_label(label, hint.favorable.as_deref())?;
        }
    }
    Ok(data)
}

/// Source of one encoded column.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedColumn {
    pub source: String,
    /// Level index for a dummy column; `None` for a numeric pass-through.
    pub level: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum SourceEncoding {
    Numeric { col: usize, name: String, standardize: Option<(f64, f64)> },
    Nominal { col: usize, name: String, reference: u32, dummies: Vec<u32> },
}

/// A fitted design-matrix encoder. Nominal columns are dummy-coded against
/// their most frequent level (ties go to the lexicographically smallest
/// label); numeric columns pass through, optionally z-scored with the
/// fitting data's mean and population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    sources: Vec<SourceEncoding>,
    /// Nominal sources whose reference level covers every fitting row.
    pub degenerate: Vec<String>,
}

impl Encoder {
    pub fn fit(data: &Dataset, targets: &[&str], standardize_numeric: bool) -> Result<Self> {
        let rows: Vec<usize> = (0..data.n_rows()).collect();
        Self::fit_rows(data, &rows, targets, standardize_numeric)
    }

    /// Fit on a row subset (e.g. a training split).
    pub fn fit_rows(data: &Dataset, rows: &[usize], targets: &[&str], standardize_numeric: bool) -> Result<Self> {
        let mut sources = Vec::with_capacity(targets.len());
        let mut degenerate = Vec::new();
        for &t in targets {
            let col = data.index_of(t)?;
            let spec = &data.schema()[col];
            match &data.columns()[col] {
                ColumnData::Numeric(v) => {
                    let standardize = standardize_numeric.then(|| {
                        let (m, s) = mean_std(rows.iter().map(|&r| v[r]));
                        (m, if s > 0.0 { s } else { 1.0 })
                    });
                    sources.push(SourceEncoding::Numeric { col, name: t.to_string(), standardize });
                }
                ColumnData::Nominal(v) => {
                    let mut counts = vec![0usize; spec.levels.len()];
                    for &r in rows {
                        counts[v[r] as usize] += 1;
                    }
                    let reference = modal_level(&counts, &spec.levels);
                    if counts[reference as usize] == rows.len() {
                        degenerate.push(t.to_string());
                    }
                    let dummies = (0..spec.levels.len() as u32).filter(|&l| l != reference).collect();
                    sources.push(SourceEncoding::Nominal { col, name: t.to_string(), reference, dummies });
                }
            }
        }
        Ok(Encoder { sources, degenerate })
    }

    pub fn width(&self) -> usize {
        self.sources
            .iter()
            .map(|s| match s {
                SourceEncoding::Numeric { .. } => 1,
                SourceEncoding::Nominal { dummies, .. } => dummies.len(),
            })
            .sum()
    }

    pub fn column_map(&self) -> Vec<EncodedColumn> {
        let mut out = Vec::with_capacity(self.width());
        for s in &self.sources {
            match s {
                SourceEncoding::Numeric { name, .. } => out.push(EncodedColumn { source: name.clone(), level: None }),
                SourceEncoding::Nominal { name, dummies, .. } => {
                    out.extend(dummies.iter().map(|&l| EncodedColumn { source: name.clone(), level: Some(l) }))
                }
            }
        }
        out
    }

    /// Reference level of each nominal source.
    pub fn references(&self) -> BTreeMap<String, u32> {
        self.sources
            .iter()
            .filter_map(|s| match s {
                SourceEncoding::Nominal { name, reference, .. } => Some((name.clone(), *reference)),
                _ => None,
            })
            .collect()
    }

    pub fn transform(&self, data: &Dataset) -> Result<DMatrix<f64>> {
        let rows: Vec<usize> = (0..data.n_rows()).collect();
        self.transform_rows(data, &rows)
    }

    pub fn transform_rows(&self, data: &Dataset, rows: &[usize]) -> Result<DMatrix<f64>> {
        let mut m = DMatrix::zeros(rows.len(), self.width());
        let mut j = 0;
        for s in &self.sources {
            match s {
                SourceEncoding::Numeric { col, name, standardize } => {
                    let v = data.columns()[*col]
                        .as_numeric()
                        .filter(|_| data.schema()[*col].name == *name)
                        .ok_or_else(|| Error::Schema(format!("column `{name}` is not numeric here")))?;
                    let (mu, sd) = standardize.unwrap_or((0.0, 1.0));
                    for (i, &r) in rows.iter().enumerate() {
                        m[(i, j)] = (v[r] - mu) / sd;
                    }
                    j += 1;
                }
                SourceEncoding::Nominal { col, name, dummies, .. } => {
                    let v = data.columns()[*col]
                        .as_nominal()
                        .filter(|_| data.schema()[*col].name == *name)
                        .ok_or_else(|| Error::Schema(format!("column `{name}` is not nominal here")))?;
                    for (k, &level) in dummies.iter().enumerate() {
                        for (i, &r) in rows.iter().enumerate() {
                            if v[r] == level {
                                m[(i, j + k)] = 1.0;
                            }
                        }
                    }
                    j += dummies.len();
                }
            }
        }
        Ok(m)
    }
}

/// Encoded design matrix with its column provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedMatrix {
    pub values: DMatrix<f64>,
    pub column_map: Vec<EncodedColumn>,
    /// (mean, std) used per encoded column, when standardized.
    pub standardization: Vec<Option<(f64, f64)>>,
    /// Reference level per nominal source.
    pub references: BTreeMap<String, u32>,
    /// Nominal sources whose dummies are all zero.
    pub degenerate: Vec<String>,
}

impl EncodedMatrix {
    /// Recover the nominal cells of each encoded nominal source, in
    /// `column_map` order of first appearance.
    pub fn decode_nominal(&self) -> BTreeMap<String, Vec<u32>> {
        let mut out: BTreeMap<String, Vec<u32>> = BTreeMap::new();
        for (source, &reference) in &self.references {
            out.insert(source.clone(), vec![reference; self.values.nrows()]);
        }
        for (j, col) in self.column_map.iter().enumerate() {
            if let Some(level) = col.level {
                let cells = out.get_mut(&col.source).expect("nominal source has a reference");
                for (i, cell) in cells.iter_mut().enumerate() {
                    if self.values[(i, j)] == 1.0 {
                        *cell = level;
                    }
                }
            }
        }
        out
    }

    /// Recover numeric source columns, undoing any standardization.
    pub fn decode_numeric(&self) -> BTreeMap<String, Vec<f64>> {
        let mut out = BTreeMap::new();
        for (j, col) in self.column_map.iter().enumerate() {
            if col.level.is_none() {
                let (mu, sd) = self.standardization[j].unwrap_or((0.0, 1.0));
                out.insert(col.source.clone(), self.values.column(j).iter().map(|x| x * sd + mu).collect());
            }
        }
        out
    }
}

/// Encode `targets` of `data` into a design matrix (no intercept column).
pub fn encode(data: &Dataset, targets: &[&str], standardize_numeric: bool) -> Result<EncodedMatrix> {
    let encoder = Encoder::fit(data, targets, standardize_numeric)?;
    let values = encoder.transform(data)?;
    let mut standardization = Vec::with_capacity(values.ncols());
    for s in &encoder.sources {
        match s {
            SourceEncoding::Numeric { standardize, .. } => standardization.push(*standardize),
            SourceEncoding::Nominal { dummies, .. } => standardization.extend(dummies.iter().map(|_| None)),
        }
    }
    Ok(EncodedMatrix {
        column_map: encoder.column_map(),
        references: encoder.references(),
        degenerate: encoder.degenerate.clone(),
        values,
        standardization,
    })
}

/// Most frequent level; ties go to the lexicographically smallest label.
pub fn modal_level(counts: &[usize], levels: &[String]) -> u32 {
    let mut best = 0usize;
    for i in 1..counts.len() {
        if counts[i] > counts[best] || (counts[i] == counts[best] && levels[i] < levels[best]) {
            best = i;
        }
    }
    best as u32
}

/// Mean and population standard deviation.
pub fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let (n, sum) = values.clone().fold((0usize, 0.0), |(n, s), x| (n + 1, s + x));
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = sum / n as f64;
    let var = values.map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
    (mean, var.sqrt())
}

/// Gower distance between two rows: the mean over columns of
/// `|a − b| / range` for numeric columns and a 0/1 mismatch for nominal
/// ones. Numeric columns with zero (or missing) range contribute 0.
pub fn gower_row_distance(a: &[Cell], b: &[Cell], schema: &[ColumnSpec], ranges: &[Option<f64>]) -> f64 {
    debug_assert_eq!(a.len(), schema.len());
    debug_assert_eq!(b.len(), schema.len());
    let mut total = 0.0;
    for (j, (x, y)) in a.iter().zip(b).enumerate() {
        total += match (x, y) {
            (Cell::Num(x), Cell::Num(y)) => match ranges.get(j).copied().flatten() {
                Some(r) if r > 0.0 => ((x - y).abs() / r).min(1.0),
                _ => 0.0,
            },
            (Cell::Cat(x), Cell::Cat(y)) => f64::from(u8::from(x != y)),
            _ => 1.0,
        };
    }
    total / schema.len() as f64
}
