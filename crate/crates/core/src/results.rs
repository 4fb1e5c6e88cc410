//! Result store: measured values bound to (method, version, parameters).

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::chart::{ChartSeries, LineChart};
use crate::graph::{Outcome, VersionGraph, VersionId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Number(f64),
    Text(String),
}

impl ParamValue {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            ParamValue::Number(n) => Some(*n),
            ParamValue::Text(_) => None,
        }
    }

    /// Numbers before text, numbers numerically.
    pub fn total_cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (ParamValue::Number(a), ParamValue::Number(b)) => a.total_cmp(b),
            (ParamValue::Number(_), ParamValue::Text(_)) => Ordering::Less,
            (ParamValue::Text(_), ParamValue::Number(_)) => Ordering::Greater,
            (ParamValue::Text(a), ParamValue::Text(b)) => a.cmp(b),
        }
    }
}

impl fmt::Display for ParamValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamValue::Number(n) => write!(f, "{n}"),
            ParamValue::Text(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ResultRecord {
    pub method: String,
    pub version: u32,
    pub build_id: String,
    pub params: BTreeMap<String, ParamValue>,
    pub metric: String,
    pub value: f64,
    pub unit: String,
}

impl ResultRecord {
    pub fn version_id(&self) -> VersionId {
        VersionId::new(&self.method, self.version)
    }

    /// Identity of a measurement; a record with the same key replaces this one.
    fn key(&self) -> (String, u32, String, String) {
        let params = serde_json::to_string(&self.params).expect("params serialize");
        (self.method.clone(), self.version, params, self.metric.clone())
    }
}

/// One entry of the benchmark's run output file.
#[derive(Debug, Clone, PartialEq)]
pub struct RunEntry {
    pub section: String,
    pub params: BTreeMap<String, ParamValue>,
    pub metric: String,
    pub value: f64,
    pub unit: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IngestError {
    #[error("invalid results at {path}: {reason}")]
    Schema { path: String, reason: String },
    #[error("results name unknown method `{id}`")]
    UnknownMethod { id: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StoreError {
    #[error("results store line {line}: {reason}")]
    Malformed { line: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReportError {
    #[error("no relevant version has data for metric `{metric}` over `{param}`")]
    EmptySelection { metric: String, param: String },
    #[error(transparent)]
    Graph(#[from] crate::graph::GraphError),
}

fn schema(path: impl Into<String>, reason: impl Into<String>) -> IngestError {
    IngestError::Schema { path: path.into(), reason: reason.into() }
}

/// Parses and validates a run output document.
pub fn parse_run_output(text: &str) -> Result<Vec<RunEntry>, IngestError> {
    let doc: Value = serde_json::from_str(text).map_err(|e| schema("$", e.to_string()))?;
    let items = doc.as_array().ok_or_else(|| schema("$", "expected an array of results"))?;
    let mut out = Vec::with_capacity(items.len());
    for (i, item) in items.iter().enumerate() {
        let at = |f: &str| format!("$[{i}].{f}");
        let obj = item.as_object().ok_or_else(|| schema(format!("$[{i}]"), "expected an object"))?;
        for k in obj.keys() {
            if !matches!(k.as_str(), "section" | "params" | "metric" | "value" | "unit") {
                return Err(schema(at(k), "unknown field"));
            }
        }
        let text_field = |f: &str| -> Result<String, IngestError> {
            match obj.get(f) {
                Some(Value::String(s)) if !s.is_empty() => Ok(s.clone()),
                Some(_) => Err(schema(at(f), "expected a non-empty string")),
                None => Err(schema(at(f), "missing field")),
            }
        };
        let section = text_field("section")?;
        let metric = text_field("metric")?;
        let unit = match obj.get("unit") {
            None => String::new(),
            Some(Value::String(s)) => s.clone(),
            Some(_) => return Err(schema(at("unit"), "expected a string")),
        };
        let value = match obj.get("value") {
            Some(Value::Number(n)) => n.as_f64().filter(|v| v.is_finite()),
            None => return Err(schema(at("value"), "missing field")),
            _ => None,
        }
        .ok_or_else(|| schema(at("value"), "expected a finite number"))?;
        let mut params = BTreeMap::new();
        match obj.get("params") {
            None => {}
            Some(Value::Object(map)) => {
                for (k, v) in map {
                    let pv = match v {
                        Value::Number(n) => n.as_f64().map(ParamValue::Number),
                        Value::String(s) => Some(ParamValue::Text(s.clone())),
                        _ => None,
                    }
                    .ok_or_else(|| schema(format!("$[{i}].params.{k}"), "expected a number or string"))?;
                    params.insert(k.clone(), pv);
                }
            }
            Some(_) => return Err(schema(at("params"), "expected an object")),
        }
        out.push(RunEntry { section, params, metric, value, unit });
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResultStore {
    records: Vec<ResultRecord>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct IngestSummary {
    pub added: usize,
    pub replaced: usize,
}

impl ResultStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn records(&self) -> &[ResultRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Inserts a record, replacing any record with the same key.
    pub fn upsert(&mut self, record: ResultRecord) -> bool {
        let key = record.key();
        match self.records.iter_mut().find(|r| r.key() == key) {
            Some(existing) => {
                *existing = record;
                true
            }
            None => {
                self.records.push(record);
                false
            }
        }
    }

    /// Binds run output to the versions named by the build's outcomes.
    pub fn ingest_run(
        &mut self,
        results: &str,
        build_id: &str,
        outcomes: &BTreeMap<String, Outcome>,
    ) -> Result<IngestSummary, IngestError> {
        let entries = parse_run_output(results)?;
        if let Some(e) = entries.iter().find(|e| !outcomes.contains_key(&e.section)) {
            return Err(IngestError::UnknownMethod { id: e.section.clone() });
        }
        let mut summary = IngestSummary::default();
        for e in entries {
            let version = outcomes[&e.section].version();
            let replaced = self.upsert(ResultRecord {
                method: e.section,
                version,
                build_id: build_id.to_string(),
                params: e.params,
                metric: e.metric,
                value: e.value,
                unit: e.unit,
            });
            if replaced {
                summary.replaced += 1;
            } else {
                summary.added += 1;
            }
        }
        Ok(summary)
    }

    /// One JSON object per line, in canonical (sorted) order.
    pub fn to_jsonl(&self) -> String {
        let mut sorted: Vec<&ResultRecord> = self.records.iter().collect();
        sorted.sort_by_key(|r| r.key());
        let mut out = String::new();
        for r in sorted {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, StoreError> {
        let mut store = Self::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let record: ResultRecord = serde_json::from_str(line)
                .map_err(|e| StoreError::Malformed { line: i + 1, reason: e.to_string() })?;
            if !record.value.is_finite() {
                return Err(StoreError::Malformed { line: i + 1, reason: "value is not finite".into() });
            }
            store.upsert(record);
        }
        Ok(store)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ReportPoint {
    pub param: ParamValue,
    pub value: f64,
    pub version: u32,
    pub build_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ReportSeries {
    pub label: String,
    pub method: String,
    /// Versions contributing points; a single entry except in spliced charts.
    pub versions: Vec<u32>,
    pub points: Vec<ReportPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Report {
    pub title: String,
    pub metric: String,
    pub param: String,
    pub unit: String,
    pub series: Vec<ReportSeries>,
    #[serde(skip)]
    pub svg: String,
}

impl Report {
    fn new(metric: &str, param: &str, unit: String, series: Vec<ReportSeries>) -> Self {
        let mut r = Report {
            title: format!("{metric} vs {param}"),
            metric: metric.to_string(),
            param: param.to_string(),
            unit,
            series,
            svg: String::new(),
        };
        r.svg = r.chart().to_svg();
        r
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    fn chart(&self) -> LineChart {
        let numeric = self.series.iter().flat_map(|s| &s.points).all(|p| p.param.as_f64().is_some());
        let categories: Option<Vec<String>> = (!numeric).then(|| {
            let mut all: Vec<&ParamValue> = self.series.iter().flat_map(|s| &s.points).map(|p| &p.param).collect();
            all.sort_by(|a, b| a.total_cmp(b));
            all.dedup();
            all.into_iter().map(|p| p.to_string()).collect()
        });
        let x_of = |p: &ParamValue| match (&categories, p.as_f64()) {
            (None, Some(x)) => x,
            (Some(cats), _) => cats.iter().position(|c| *c == p.to_string()).unwrap_or(0) as f64,
            (None, None) => 0.0,
        };
        let y_label = if self.unit.is_empty() {
            self.metric.clone()
        } else {
            format!("{} [{}]", self.metric, self.unit)
        };
        LineChart {
            title: self.title.clone(),
            x_label: self.param.clone(),
            y_label,
            x_categories: categories.clone(),
            series: self
                .series
                .iter()
                .map(|s| ChartSeries {
                    label: s.label.clone(),
                    points: s.points.iter().map(|p| (x_of(&p.param), p.value)).collect(),
                })
                .collect(),
        }
    }
}

fn selection<'a>(
    store: &'a ResultStore,
    metric: &'a str,
    param: &'a str,
) -> impl Iterator<Item = &'a ResultRecord> + 'a {
    store.records.iter().filter(move |r| r.metric == metric && r.params.contains_key(param))
}

fn point(r: &ResultRecord, param: &str) -> ReportPoint {
    ReportPoint {
        param: r.params[param].clone(),
        value: r.value,
        version: r.version,
        build_id: r.build_id.clone(),
    }
}

fn sort_points(points: &mut [ReportPoint]) {
    points.sort_by(|a, b| {
        a.param
            .total_cmp(&b.param)
            .then_with(|| a.value.total_cmp(&b.value))
            .then_with(|| a.build_id.cmp(&b.build_id))
    });
}

fn unit_of<'a>(records: impl Iterator<Item = &'a ResultRecord>) -> String {
    records.map(|r| r.unit.as_str()).find(|u| !u.is_empty()).unwrap_or("").to_string()
}

fn empty(metric: &str, param: &str) -> ReportError {
    ReportError::EmptySelection { metric: metric.to_string(), param: param.to_string() }
}

/// One series per relevant (method, version) with data for `metric`.
pub fn export_report(
    store: &ResultStore,
    graph: &VersionGraph,
    metric: &str,
    param: &str,
) -> Result<Report, ReportError> {
    let mut by_version: BTreeMap<VersionId, Vec<ReportPoint>> = BTreeMap::new();
    let mut relevant: BTreeMap<String, BTreeSet<VersionId>> = BTreeMap::new();
    let mut used = Vec::new();
    for r in selection(store, metric, param) {
        if !relevant.contains_key(&r.method) {
            let set = graph.relevant_versions(&r.method).unwrap_or_default();
            relevant.insert(r.method.clone(), set);
        }
        let id = r.version_id();
        if relevant[&r.method].contains(&id) {
            by_version.entry(id).or_default().push(point(r, param));
            used.push(r);
        }
    }
    if by_version.is_empty() {
        return Err(empty(metric, param));
    }
    let series = by_version
        .into_iter()
        .map(|(id, mut points)| {
            sort_points(&mut points);
            ReportSeries { label: id.to_string(), versions: vec![id.ordinal], method: id.method, points }
        })
        .collect();
    Ok(Report::new(metric, param, unit_of(used.into_iter()), series))
}

/// The two misleading reporting modes next to the complete report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProblemModes {
    /// Per parameter value, whatever version the latest build produced.
    pub spliced: Report,
    /// Only the version referenced by each method's latest build.
    pub single_build: Report,
    /// All relevant versions.
    pub full: Report,
}

pub fn demo_problem_modes(
    store: &ResultStore,
    graph: &VersionGraph,
    metric: &str,
    param: &str,
) -> Result<ProblemModes, ReportError> {
    let full = export_report(store, graph, metric, param)?;
    let records: Vec<&ResultRecord> = selection(store, metric, param).collect();
    let unit = unit_of(records.iter().copied());

    let mut by_method: BTreeMap<&str, Vec<&ResultRecord>> = BTreeMap::new();
    for r in &records {
        by_method.entry(&r.method).or_default().push(r);
    }

    let mut spliced = Vec::new();
    let mut single = Vec::new();
    for (method, rs) in by_method {
        // latest measurement per parameter value, regardless of version
        let mut latest: Vec<&ResultRecord> = Vec::new();
        for r in &rs {
            match latest.iter_mut().find(|l| l.params[param] == r.params[param]) {
                Some(l) if (l.build_id.as_str(), l.version) < (r.build_id.as_str(), r.version) => *l = r,
                Some(_) => {}
                None => latest.push(r),
            }
        }
        let versions: BTreeSet<u32> = latest.iter().map(|r| r.version).collect();
        let label = format!(
            "{method}.{}",
            versions.iter().map(|v| format!("V{v}")).collect::<Vec<_>>().join("+")
        );
        let mut points: Vec<ReportPoint> = latest.iter().map(|r| point(r, param)).collect();
        sort_points(&mut points);
        spliced.push(ReportSeries {
            label,
            method: method.to_string(),
            versions: versions.into_iter().collect(),
            points,
        });

        let current = graph
            .latest_outcome(method)
            .map(|s| s.outcome.version())
            .or_else(|| rs.iter().max_by(|a, b| a.build_id.cmp(&b.build_id)).map(|r| r.version));
        if let Some(v) = current {
            let mut points: Vec<ReportPoint> =
                rs.iter().filter(|r| r.version == v).map(|r| point(r, param)).collect();
            if !points.is_empty() {
                sort_points(&mut points);
                single.push(ReportSeries {
                    label: VersionId::new(method, v).to_string(),
                    method: method.to_string(),
                    versions: vec![v],
                    points,
                });
            }
        }
    }
    Ok(ProblemModes {
        spliced: Report::new(metric, param, unit.clone(), spliced),
        single_build: Report::new(metric, param, unit, single),
        full,
    })
}
