//! Run reports and their tabular renderings (CSV, JSON lines, Markdown).

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::metrics::{
    consistency, object_presence, split_by_relation, split_by_supercategory_pair, split_by_variant, ConsistencyTable,
    DeltaSummary, MetricsSummary, ObjectPresence, UnorderedPair,
};
use crate::pipeline::{Coverage, EvaluationRun, SweepPoint};
use crate::relation::Relation;
use crate::stats::Correlation;
use crate::vocab::Vocabulary;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
    Markdown,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Format::Csv),
            "json" | "jsonl" => Ok(Format::Json),
            "md" | "markdown" => Ok(Format::Markdown),
            _ => Err(Error::invalid(format!("unknown format `{s}` (expected csv, json or markdown)"))),
        }
    }
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Format::Csv => "csv",
            Format::Json => "json",
            Format::Markdown => "markdown",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportMetadata {
    pub corpus_id: String,
    pub detector_id: String,
    pub threshold: f64,
    pub images_per_prompt: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SupercategoryCell {
    pub a: String,
    pub b: String,
    pub summary: Option<MetricsSummary>,
}

/// Everything computed for one evaluated run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub metadata: ReportMetadata,
    pub overall: MetricsSummary,
    pub by_variant: BTreeMap<String, MetricsSummary>,
    /// Always holds all four relations.
    pub by_relation: BTreeMap<Relation, Option<MetricsSummary>>,
    /// Every unordered pair of supercategories in the vocabulary.
    pub by_supercategory: Vec<SupercategoryCell>,
    pub object_presence: ObjectPresence,
    /// OA per prompt variant, including prompts without a relation.
    pub object_generation: BTreeMap<String, f64>,
    pub consistency: Option<ConsistencyTable>,
    pub coverage: Coverage,
    pub notes: Vec<String>,
}

impl RunReport {
    pub fn build(run: &EvaluationRun, vocab: &Vocabulary, metadata: ReportMetadata) -> Result<RunReport> {
        if run.groups.is_empty() {
            return Err(Error::invalid("run has no relational prompts"));
        }
        if metadata.corpus_id.trim().is_empty() || metadata.detector_id.trim().is_empty() {
            return Err(Error::invalid("report metadata needs a corpus id and a detector id"));
        }
        let overall = run.summary()?;
        let by_variant = split_by_variant(&run.groups)?
            .into_iter()
            .map(|(k, v)| (k.as_str().to_string(), v))
            .collect();
        let mut relations = split_by_relation(&run.groups)?;
        let by_relation = Relation::ALL.into_iter().map(|r| (r, relations.remove(&r))).collect();

        let mut supers = split_by_supercategory_pair(&run.groups)?;
        let names = vocab.supercategories();
        let mut by_supercategory = Vec::new();
        for (i, a) in names.iter().enumerate() {
            for b in &names[i..] {
                by_supercategory.push(SupercategoryCell {
                    a: a.clone(),
                    b: b.clone(),
                    summary: supers.remove(&UnorderedPair::new(a, b)),
                });
            }
        }
        let mut notes = Vec::new();
        if !supers.is_empty() {
            notes.push(format!(
                "{} supercategory pairs are not in the vocabulary and are left out of the matrix",
                supers.len()
            ));
        }
        let consistency = match consistency(&run.groups) {
            Ok(t) => Some(t),
            Err(e) => {
                notes.push(format!("consistency not computed: {e}"));
                None
            }
        };
        notes.extend(run.coverage.warnings());

        Ok(RunReport {
            metadata,
            overall,
            by_variant,
            by_relation,
            by_supercategory,
            object_presence: object_presence(&run.groups)?,
            object_generation: run
                .object_generation()
                .into_iter()
                .map(|(k, v)| (k.as_str().to_string(), v))
                .collect(),
            consistency,
            coverage: run.coverage.clone(),
            notes,
        })
    }

    fn buckets(&self) -> Vec<(String, String, Option<&MetricsSummary>)> {
        let mut out = vec![("overall".to_string(), "all".to_string(), Some(&self.overall))];
        for (k, v) in &self.by_variant {
            out.push(("variant".into(), k.clone(), Some(v)));
        }
        for (k, v) in &self.by_relation {
            out.push(("relation".into(), k.as_str().into(), v.as_ref()));
        }
        for cell in &self.by_supercategory {
            out.push((
                "supercategory".into(),
                format!("{}/{}", cell.a, cell.b),
                cell.summary.as_ref(),
            ));
        }
        out
    }
}

/// One table cell.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Text(String),
    Count(usize),
    /// A percentage or rate; `None` when undefined.
    Num(Option<f64>),
}

impl Cell {
    fn display(&self, missing: &str) -> String {
        match self {
            Cell::Text(s) => s.clone(),
            Cell::Count(n) => n.to_string(),
            Cell::Num(Some(x)) => format!("{x:.2}"),
            Cell::Num(None) => missing.to_string(),
        }
    }

    fn json(&self) -> Value {
        match self {
            Cell::Text(s) => json!(s),
            Cell::Count(n) => json!(n),
            Cell::Num(Some(x)) => json!({ "value": x, "display": format!("{x:.2}") }),
            Cell::Num(None) => Value::Null,
        }
    }
}

/// A rectangular table plus context lines.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
    /// Emitted as the first JSON line; ignored by the other formats.
    pub metadata: Map<String, Value>,
    /// Trailing Markdown lines.
    pub footer: Vec<String>,
}

impl Table {
    pub fn render(&self, format: Format) -> Result<String> {
        match format {
            Format::Csv => self.csv(),
            Format::Json => self.json_lines(),
            Format::Markdown => Ok(self.markdown()),
        }
    }

    fn csv(&self) -> Result<String> {
        let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::invalid(e.to_string());
        w.write_record(&self.headers).map_err(csv_err)?;
        for row in &self.rows {
            w.write_record(row.iter().map(|c| c.display(""))).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::invalid(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::invalid(e.to_string()))
    }

    fn json_lines(&self) -> Result<String> {
        let mut out = String::new();
        let to_line = |v: &Value| serde_json::to_string(v).map_err(|e| Error::invalid(e.to_string()));
        if !self.metadata.is_empty() {
            let mut meta = Map::new();
            meta.insert("kind".into(), json!("metadata"));
            meta.extend(self.metadata.clone());
            out.push_str(&to_line(&Value::Object(meta))?);
            out.push('\n');
        }
        for row in &self.rows {
            let obj: Map<String, Value> = self.headers.iter().cloned().zip(row.iter().map(Cell::json)).collect();
            out.push_str(&to_line(&Value::Object(obj))?);
            out.push('\n');
        }
        Ok(out)
    }

    fn markdown(&self) -> String {
        let line = |cells: Vec<String>| format!("| {} |\n", cells.join(" | "));
        let mut out = line(self.headers.clone());
        out.push_str(&line(self.headers.iter().map(|_| "---".to_string()).collect()));
        for row in &self.rows {
            out.push_str(&line(row.iter().map(|c| c.display("n/a").replace('|', "\\|")).collect()));
        }
        if !self.footer.is_empty() {
            out.push('\n');
            for f in &self.footer {
                out.push_str(f);
                out.push('\n');
            }
        }
        out
    }
}

fn summary_headers(first: &[&str], n: usize) -> Vec<String> {
    let mut h: Vec<String> = first.iter().map(|s| s.to_string()).collect();
    h.extend(["prompts", "images", "oa", "visor_uncond", "visor_cond"].map(String::from));
    h.extend((1..=n).map(|i| format!("visor_{i}")));
    h
}

fn summary_cells(s: &MetricsSummary) -> Vec<Cell> {
    let mut cells = vec![
        Cell::Count(s.prompts),
        Cell::Count(s.images),
        Cell::Num(Some(s.oa_pct)),
        Cell::Num(Some(s.visor_uncond_pct)),
        Cell::Num(s.visor_cond_pct),
    ];
    cells.extend(s.visor_n_pct.iter().map(|x| Cell::Num(Some(*x))));
    cells
}

fn metadata_map(meta: &ReportMetadata) -> Map<String, Value> {
    match serde_json::to_value(meta) {
        Ok(Value::Object(m)) => m,
        _ => Map::new(),
    }
}

/// The headline table: overall, per variant, per relation and per
/// supercategory pair. Buckets without prompts are left out and listed in
/// the Markdown footer and JSON metadata.
pub fn benchmark_table(report: &RunReport) -> Table {
    let n = report.metadata.images_per_prompt;
    let mut table = Table {
        headers: summary_headers(&["split", "key"], n),
        metadata: metadata_map(&report.metadata),
        ..Table::default()
    };
    let mut omitted = Vec::new();
    for (split, key, summary) in report.buckets() {
        match summary {
            Some(s) => {
                let mut row = vec![Cell::Text(split), Cell::Text(key)];
                row.extend(summary_cells(s));
                table.rows.push(row);
            }
            None => omitted.push(format!("{split}:{key}")),
        }
    }
    if !omitted.is_empty() {
        table.footer.push(format!("Omitted buckets (no prompts): {}", omitted.join(", ")));
    }
    table.metadata.insert("omitted_buckets".into(), json!(omitted));
    table
}

pub fn emit_benchmark_table(report: &RunReport, format: Format) -> Result<String> {
    benchmark_table(report).render(format)
}

/// Symmetric supercategory matrix of unconditional VISOR, as CSV. Empty
/// cells have no prompts.
pub fn emit_supercategory_matrix(report: &RunReport) -> Result<String> {
    let mut names: Vec<&str> = report
        .by_supercategory
        .iter()
        .flat_map(|c| [c.a.as_str(), c.b.as_str()])
        .collect();
    names.sort_unstable();
    names.dedup();
    let lookup: BTreeMap<UnorderedPair, Option<f64>> = report
        .by_supercategory
        .iter()
        .map(|c| (UnorderedPair::new(&c.a, &c.b), c.summary.as_ref().map(|s| s.visor_uncond_pct)))
        .collect();
    let mut table = Table {
        headers: std::iter::once("supercategory")
            .chain(names.iter().copied())
            .map(String::from)
            .collect(),
        ..Table::default()
    };
    for a in &names {
        let mut row = vec![Cell::Text(a.to_string())];
        for b in &names {
            row.push(Cell::Num(lookup.get(&UnorderedPair::new(a, b)).copied().flatten()));
        }
        table.rows.push(row);
    }
    table.render(Format::Csv)
}

pub fn sweep_table(points: &[SweepPoint]) -> Table {
    let n = points.first().map_or(0, |p| p.summary.images_per_prompt());
    let mut table = Table {
        headers: summary_headers(&["threshold"], n),
        ..Table::default()
    };
    for p in points {
        let mut row = vec![Cell::Text(p.threshold.to_string())];
        row.extend(summary_cells(&p.summary));
        table.rows.push(row);
    }
    table
}

pub fn consistency_table(t: &ConsistencyTable) -> Table {
    let mut rows: Vec<Vec<Cell>> = t
        .by_relation
        .iter()
        .map(|(r, v)| vec![Cell::Text(r.as_str().into()), Cell::Num(*v)])
        .collect();
    rows.push(vec![Cell::Text("average".into()), Cell::Num(t.average)]);
    let mut metadata = Map::new();
    metadata.insert("prompts_counted".into(), json!(t.prompts_counted));
    metadata.insert("prompts_excluded".into(), json!(t.prompts_excluded));
    Table {
        headers: vec!["relation".into(), "consistency".into()],
        rows,
        footer: vec![format!(
            "Prompts counted: {}; excluded for lack of images with both objects: {}",
            t.prompts_counted, t.prompts_excluded
        )],
        metadata,
    }
}

pub fn delta_table(d: &DeltaSummary) -> Table {
    let num = |x: f64| Cell::Num(Some(x));
    Table {
        headers: ["records", "mean_score", "mean_score_flipped", "delta_s"].map(String::from).to_vec(),
        rows: vec![vec![
            Cell::Count(d.records),
            num(d.mean_score),
            num(d.mean_score_flipped),
            num(d.delta),
        ]],
        ..Table::default()
    }
}

pub fn correlation_table(c: &Correlation) -> Table {
    let mut metadata = Map::new();
    metadata.insert("pearson_oa".into(), json!(c.pearson_oa));
    metadata.insert("pearson_visor_cond".into(), json!(c.pearson_visor_cond));
    metadata.insert("pairs".into(), json!(c.points.len()));
    let r = |name: &str, v: Option<f64>| match v {
        Some(r) => format!("Pearson r ({name}) = {r:.4}"),
        None => format!("Pearson r ({name}) undefined"),
    };
    Table {
        headers: ["object_a", "object_b", "p_cooccur", "oa", "visor_cond"].map(String::from).to_vec(),
        rows: c
            .points
            .iter()
            .map(|p| {
                vec![
                    Cell::Text(p.pair.0.clone()),
                    Cell::Text(p.pair.1.clone()),
                    Cell::Text(format!("{:.6}", p.probability)),
                    Cell::Num(Some(p.oa_pct)),
                    Cell::Num(p.visor_cond_pct),
                ]
            })
            .collect(),
        footer: vec![r("OA", c.pearson_oa), r("VISOR_cond", c.pearson_visor_cond)],
        metadata,
    }
}
