//! Long-format person-time data: ingestion, validation and the row-level
//! transforms used by the estimators (copies, time restriction, death
//! filtering, time-slice stacking and person-level resampling).
//!
//! Rows are stored columnar and grouped by individual, with each
//! individual's intervals sorted and contiguous. Within an interval the
//! variables are taken to occur in the order `(L, A, D, C, R, Y)`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, RngExt};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::formula::Frame;

/// Variable names with a fixed meaning in model formulas; schema columns may
/// not use them.
pub const RESERVED_NAMES: [&str; 3] = ["t", "z", "a0"];

#[derive(Debug, Error, PartialEq)]
pub enum DatasetError {
    #[error("io error on {path}: {message}")]
    Io { path: String, message: String },
    #[error("csv error: {0}")]
    Csv(String),
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("line {line}: column `{column}` holds `{value}`, expected 0 or 1")]
    NonBinaryIndicator {
        line: usize,
        column: String,
        value: String,
    },
    #[error("line {line}: column `{column}` holds `{value}`, expected a number")]
    InvalidNumber {
        line: usize,
        column: String,
        value: String,
    },
    #[error("individual `{id}`: row at t={t} follows a death or censoring event")]
    NonMonotoneDeathOrCensoring { id: String, t: u32 },
    #[error("individual `{id}`: intervals are not consecutive from 0 (expected t={expected}, found t={found})")]
    GapInIntervals { id: String, expected: u32, found: u32 },
    #[error("individual `{id}`: outcome present at t={t} while not measured")]
    OutcomePresentWithoutMeasurement { id: String, t: u32 },
    #[error("individual `{id}`: outcome missing at t={t} while measured")]
    OutcomeMissingWhenMeasured { id: String, t: u32 },
    #[error("individual `{id}`: measurement recorded at t={t} on a death or censoring row")]
    EventRowMeasured { id: String, t: u32 },
    #[error("individual `{id}`: baseline row carries {what}")]
    InvalidBaselineRow { id: String, what: &'static str },
    #[error("individual `{id}`: baseline covariate `{column}` changes over time")]
    BaselineNotConstant { id: String, column: String },
    #[error("restriction time {t_max} outside 0..={tau}")]
    TimeOutOfRange { t_max: u32, tau: u32 },
    #[error("no individuals remain after restriction")]
    EmptyResult,
    #[error("dataset has no rows")]
    Empty,
}

/// Binds the roles of the longitudinal variables to CSV column names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariableSchema {
    pub id_column: String,
    pub time_column: String,
    pub treatment_column: String,
    pub covariate_columns: Vec<String>,
    pub measured_column: String,
    pub outcome_column: String,
    pub censor_column: String,
    pub death_column: String,
    #[serde(default)]
    pub baseline_covariates: Vec<String>,
    #[serde(default)]
    pub v_columns: Vec<String>,
}

impl VariableSchema {
    pub fn validate(&self) -> Result<(), DatasetError> {
        let mut seen = HashSet::new();
        for name in self.all_columns() {
            if name.is_empty() {
                return Err(DatasetError::InvalidSchema("empty column name".into()));
            }
            if RESERVED_NAMES.contains(&name) {
                return Err(DatasetError::InvalidSchema(format!(
                    "column name `{name}` is reserved for formulas"
                )));
            }
            if !seen.insert(name) {
                return Err(DatasetError::InvalidSchema(format!(
                    "column `{name}` named more than once"
                )));
            }
        }
        for b in &self.baseline_covariates {
            if !self.covariate_columns.contains(b) {
                return Err(DatasetError::InvalidSchema(format!(
                    "baseline covariate `{b}` is not a covariate column"
                )));
            }
        }
        for v in &self.v_columns {
            if !self.baseline_covariates.contains(v) {
                return Err(DatasetError::InvalidSchema(format!(
                    "V column `{v}` is not a baseline covariate"
                )));
            }
        }
        Ok(())
    }

    /// Column names in file order.
    pub fn all_columns(&self) -> Vec<&str> {
        let mut cols = vec![
            self.id_column.as_str(),
            self.time_column.as_str(),
            self.treatment_column.as_str(),
        ];
        cols.extend(self.covariate_columns.iter().map(String::as_str));
        cols.extend([
            self.measured_column.as_str(),
            self.outcome_column.as_str(),
            self.censor_column.as_str(),
            self.death_column.as_str(),
        ]);
        cols
    }

    pub fn covariate_index(&self, name: &str) -> Option<usize> {
        self.covariate_columns.iter().position(|c| c == name)
    }
}

/// One person-interval record prior to validation.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub id: String,
    pub t: u32,
    pub treatment: u8,
    pub covariates: Vec<f64>,
    pub measured: u8,
    pub outcome: Option<f64>,
    pub censored: u8,
    pub died: u8,
}

/// Validated long-format person-time table. Immutable; transforms return new
/// datasets.
#[derive(Debug, Clone, PartialEq)]
pub struct LongitudinalDataset {
    schema: Arc<VariableSchema>,
    ids: Vec<String>,
    starts: Vec<usize>,
    time: Vec<u32>,
    treatment: Vec<u8>,
    covariates: Vec<Vec<f64>>,
    measured: Vec<u8>,
    outcome: Vec<Option<f64>>,
    censored: Vec<u8>,
    died: Vec<u8>,
    person_weights: Option<Vec<f64>>,
    tau: u32,
}

impl LongitudinalDataset {
    /// Groups records by individual (first-appearance order), sorts each
    /// individual's intervals and checks every dataset invariant.
    pub fn from_records(
        schema: VariableSchema,
        records: Vec<Record>,
    ) -> Result<Self, DatasetError> {
        schema.validate()?;
        if records.is_empty() {
            return Err(DatasetError::Empty);
        }
        let n_cov = schema.covariate_columns.len();
        let mut order: Vec<String> = Vec::new();
        let mut groups: HashMap<String, Vec<Record>> = HashMap::new();
        for rec in records {
            if rec.covariates.len() != n_cov {
                return Err(DatasetError::InvalidSchema(format!(
                    "record for `{}` has {} covariates, schema names {}",
                    rec.id,
                    rec.covariates.len(),
                    n_cov
                )));
            }
            if !groups.contains_key(&rec.id) {
                order.push(rec.id.clone());
            }
            groups.entry(rec.id.clone()).or_default().push(rec);
        }

        let mut b = Builder::new(n_cov);
        for id in order {
            let mut rows = groups.remove(&id).unwrap_or_default();
            rows.sort_by_key(|r| r.t);
            validate_person(&schema, &id, &rows)?;
            b.begin_person(id);
            for r in rows {
                b.push(
                    r.t,
                    r.treatment,
                    &r.covariates,
                    r.measured,
                    r.outcome,
                    r.censored,
                    r.died,
                );
            }
        }
        Ok(b.finish(Arc::new(schema), None))
    }

    pub fn schema(&self) -> &VariableSchema {
        &self.schema
    }

    pub fn n_individuals(&self) -> usize {
        self.ids.len()
    }

    pub fn n_rows(&self) -> usize {
        self.time.len()
    }

    /// Largest interval index present.
    pub fn tau(&self) -> u32 {
        self.tau
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    /// Row range of individual `p`.
    pub fn person_rows(&self, p: usize) -> std::ops::Range<usize> {
        self.starts[p]..self.starts[p + 1]
    }

    pub fn time(&self) -> &[u32] {
        &self.time
    }

    pub fn treatment(&self) -> &[u8] {
        &self.treatment
    }

    pub fn measured(&self) -> &[u8] {
        &self.measured
    }

    pub fn outcome(&self) -> &[Option<f64>] {
        &self.outcome
    }

    pub fn censored(&self) -> &[u8] {
        &self.censored
    }

    pub fn died(&self) -> &[u8] {
        &self.died
    }

    pub fn covariate(&self, name: &str) -> Option<&[f64]> {
        self.schema
            .covariate_index(name)
            .map(|i| self.covariates[i].as_slice())
    }

    /// Case weight of individual `p` (1 unless frequency weights were attached).
    pub fn person_weight(&self, p: usize) -> f64 {
        self.person_weights.as_ref().map_or(1.0, |w| w[p])
    }

    pub fn has_person_weights(&self) -> bool {
        self.person_weights.is_some()
    }

    /// Attaches nonnegative frequency weights, one per individual. Used to
    /// represent an exactly enumerated distribution as a finite dataset.
    pub fn with_person_weights(mut self, weights: Vec<f64>) -> Result<Self, DatasetError> {
        if weights.len() != self.n_individuals() {
            return Err(DatasetError::InvalidSchema(format!(
                "{} person weights for {} individuals",
                weights.len(),
                self.n_individuals()
            )));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(DatasetError::InvalidSchema(
                "person weights must be finite and nonnegative".into(),
            ));
        }
        self.person_weights = Some(weights);
        Ok(self)
    }

    /// Baseline treatment `A_0` of the individual owning each row.
    pub fn baseline_treatment_by_row(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.n_rows());
        for p in 0..self.n_individuals() {
            let rows = self.person_rows(p);
            let a0 = self.treatment[rows.start];
            out.extend(std::iter::repeat_n(a0, rows.len()));
        }
        out
    }

    /// Person index of each row.
    pub fn person_of_row(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.n_rows());
        for p in 0..self.n_individuals() {
            out.extend(std::iter::repeat_n(p, self.person_rows(p).len()));
        }
        out
    }

    /// Interval at which the individual died, if a death row is present.
    pub fn death_time(&self, p: usize) -> Option<u32> {
        let last = self.starts[p + 1] - 1;
        (self.died[last] == 1).then(|| self.time[last])
    }

    /// Individuals with no death at or before `t`.
    pub fn survivors(&self, t: u32) -> Vec<usize> {
        (0..self.n_individuals())
            .filter(|&p| self.death_time(p).is_none_or(|d| d > t))
            .collect()
    }

    /// Builds a numeric frame over `rows` holding the requested variables.
    /// Resolves covariate names, the treatment column (current `A_t`) and the
    /// derived baseline treatment `a0`; `t` is always included.
    pub fn frame(&self, rows: &[usize], names: &[String]) -> Frame {
        let mut frame = Frame::new(rows.iter().map(|&r| self.time[r] as f64).collect());
        let mut a0: Option<Vec<u8>> = None;
        for name in names {
            if frame.has(name) {
                continue;
            }
            let column: Option<Vec<f64>> = if let Some(c) = self.covariate(name) {
                Some(rows.iter().map(|&r| c[r]).collect())
            } else if name == &self.schema.treatment_column {
                Some(rows.iter().map(|&r| self.treatment[r] as f64).collect())
            } else if name == "a0" {
                let a0 = a0.get_or_insert_with(|| self.baseline_treatment_by_row());
                Some(rows.iter().map(|&r| a0[r] as f64).collect())
            } else {
                None
            };
            if let Some(col) = column {
                frame.insert(name.clone(), col);
            }
        }
        frame
    }

    pub fn to_records(&self) -> Vec<Record> {
        let mut out = Vec::with_capacity(self.n_rows());
        for p in 0..self.n_individuals() {
            for r in self.person_rows(p) {
                out.push(Record {
                    id: self.ids[p].clone(),
                    t: self.time[r],
                    treatment: self.treatment[r],
                    covariates: self.covariates.iter().map(|c| c[r]).collect(),
                    measured: self.measured[r],
                    outcome: self.outcome[r],
                    censored: self.censored[r],
                    died: self.died[r],
                });
            }
        }
        out
    }

    /// Writes the dataset in long CSV format, columns in schema order.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), DatasetError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(self.schema.all_columns())
            .map_err(|e| DatasetError::Csv(e.to_string()))?;
        let mut fields: Vec<String> = Vec::new();
        for p in 0..self.n_individuals() {
            for r in self.person_rows(p) {
                fields.clear();
                fields.push(self.ids[p].clone());
                fields.push(self.time[r].to_string());
                fields.push(self.treatment[r].to_string());
                for c in &self.covariates {
                    fields.push(c[r].to_string());
                }
                fields.push(self.measured[r].to_string());
                fields.push(self.outcome[r].map(|y| y.to_string()).unwrap_or_default());
                fields.push(self.censored[r].to_string());
                fields.push(self.died[r].to_string());
                w.write_record(&fields)
                    .map_err(|e| DatasetError::Csv(e.to_string()))?;
            }
        }
        w.flush().map_err(|e| DatasetError::Csv(e.to_string()))
    }

    pub fn write_csv_path(&self, path: &Path) -> Result<(), DatasetError> {
        let file = std::fs::File::create(path).map_err(|e| DatasetError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

fn validate_person(
    schema: &VariableSchema,
    id: &str,
    rows: &[Record],
) -> Result<(), DatasetError> {
    let baseline_idx: Vec<usize> = schema
        .baseline_covariates
        .iter()
        .filter_map(|b| schema.covariate_index(b))
        .collect();
    for (k, r) in rows.iter().enumerate() {
        if r.t != k as u32 {
            return Err(DatasetError::GapInIntervals {
                id: id.to_string(),
                expected: k as u32,
                found: r.t,
            });
        }
        if k > 0 {
            let prev = &rows[k - 1];
            if prev.died == 1 || prev.censored == 1 {
                return Err(DatasetError::NonMonotoneDeathOrCensoring {
                    id: id.to_string(),
                    t: r.t,
                });
            }
        }
        for (name, v) in [
            (&schema.treatment_column, r.treatment),
            (&schema.measured_column, r.measured),
            (&schema.censor_column, r.censored),
            (&schema.death_column, r.died),
        ] {
            if v > 1 {
                return Err(DatasetError::NonBinaryIndicator {
                    line: 0,
                    column: name.clone(),
                    value: v.to_string(),
                });
            }
        }
        if r.t == 0 {
            if r.measured == 1 || r.outcome.is_some() {
                return Err(DatasetError::InvalidBaselineRow {
                    id: id.to_string(),
                    what: "an outcome measurement",
                });
            }
            if r.censored == 1 || r.died == 1 {
                return Err(DatasetError::InvalidBaselineRow {
                    id: id.to_string(),
                    what: "a death or censoring event",
                });
            }
        }
        match (r.measured, r.outcome) {
            (0, Some(_)) => {
                return Err(DatasetError::OutcomePresentWithoutMeasurement {
                    id: id.to_string(),
                    t: r.t,
                })
            }
            (1, None) => {
                return Err(DatasetError::OutcomeMissingWhenMeasured {
                    id: id.to_string(),
                    t: r.t,
                })
            }
            _ => {}
        }
        if (r.died == 1 || r.censored == 1) && r.measured == 1 {
            return Err(DatasetError::EventRowMeasured {
                id: id.to_string(),
                t: r.t,
            });
        }
        if r.died == 1 && r.censored == 1 {
            return Err(DatasetError::NonMonotoneDeathOrCensoring {
                id: id.to_string(),
                t: r.t,
            });
        }
        if r.covariates.iter().any(|v| !v.is_finite()) {
            return Err(DatasetError::InvalidSchema(format!(
                "individual `{id}`: non-finite covariate at t={}",
                r.t
            )));
        }
        if k > 0 {
            for &bi in &baseline_idx {
                if r.covariates[bi] != rows[0].covariates[bi] {
                    return Err(DatasetError::BaselineNotConstant {
                        id: id.to_string(),
                        column: schema.covariate_columns[bi].clone(),
                    });
                }
            }
        }
    }
    Ok(())
}

/// Accumulates rows of already-validated individuals.
struct Builder {
    ids: Vec<String>,
    starts: Vec<usize>,
    time: Vec<u32>,
    treatment: Vec<u8>,
    covariates: Vec<Vec<f64>>,
    measured: Vec<u8>,
    outcome: Vec<Option<f64>>,
    censored: Vec<u8>,
    died: Vec<u8>,
    weights: Vec<f64>,
}

impl Builder {
    fn new(n_cov: usize) -> Self {
        Builder {
            ids: Vec::new(),
            starts: vec![0],
            time: Vec::new(),
            treatment: Vec::new(),
            covariates: vec![Vec::new(); n_cov],
            measured: Vec::new(),
            outcome: Vec::new(),
            censored: Vec::new(),
            died: Vec::new(),
            weights: Vec::new(),
        }
    }

    fn begin_person(&mut self, id: String) {
        self.ids.push(id);
        self.starts.push(self.time.len());
    }

    #[allow(clippy::too_many_arguments)]
    fn push(
        &mut self,
        t: u32,
        a: u8,
        cov: &[f64],
        r: u8,
        y: Option<f64>,
        c: u8,
        d: u8,
    ) {
        self.time.push(t);
        self.treatment.push(a);
        for (col, v) in self.covariates.iter_mut().zip(cov) {
            col.push(*v);
        }
        self.measured.push(r);
        self.outcome.push(y);
        self.censored.push(c);
        self.died.push(d);
        *self.starts.last_mut().expect("person open") = self.time.len();
    }

    fn copy_rows(&mut self, src: &LongitudinalDataset, rows: std::ops::Range<usize>) {
        for r in rows {
            self.time.push(src.time[r]);
            self.treatment.push(src.treatment[r]);
            for (col, s) in self.covariates.iter_mut().zip(&src.covariates) {
                col.push(s[r]);
            }
            self.measured.push(src.measured[r]);
            self.outcome.push(src.outcome[r]);
            self.censored.push(src.censored[r]);
            self.died.push(src.died[r]);
        }
        *self.starts.last_mut().expect("person open") = self.time.len();
    }

    fn finish(self, schema: Arc<VariableSchema>, weights: Option<Vec<f64>>) -> LongitudinalDataset {
        let tau = self.time.iter().copied().max().unwrap_or(0);
        // `starts` holds a leading 0 plus one end offset per person.
        LongitudinalDataset {
            schema,
            ids: self.ids,
            starts: self.starts,
            time: self.time,
            treatment: self.treatment,
            covariates: self.covariates,
            measured: self.measured,
            outcome: self.outcome,
            censored: self.censored,
            died: self.died,
            person_weights: weights.or(if self.weights.is_empty() {
                None
            } else {
                Some(self.weights)
            }),
            tau,
        }
    }
}

fn parse_indicator(raw: &str, line: usize, column: &str) -> Result<u8, DatasetError> {
    match raw.trim() {
        "0" | "0.0" => Ok(0),
        "1" | "1.0" => Ok(1),
        other => Err(DatasetError::NonBinaryIndicator {
            line,
            column: column.to_string(),
            value: other.to_string(),
        }),
    }
}

fn parse_number(raw: &str, line: usize, column: &str) -> Result<f64, DatasetError> {
    raw.trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| DatasetError::InvalidNumber {
            line,
            column: column.to_string(),
            value: raw.to_string(),
        })
}

/// Reads long-format CSV. Extra columns are ignored; an empty outcome field
/// encodes a missing outcome.
pub fn read_csv<R: Read>(
    reader: R,
    schema: &VariableSchema,
) -> Result<LongitudinalDataset, DatasetError> {
    schema.validate()?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| DatasetError::Csv(e.to_string()))?
        .clone();
    let index: BTreeMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h, i)).collect();
    let col = |name: &str| -> Result<usize, DatasetError> {
        index
            .get(name)
            .copied()
            .ok_or_else(|| DatasetError::MissingColumn(name.to_string()))
    };
    let id_i = col(&schema.id_column)?;
    let t_i = col(&schema.time_column)?;
    let a_i = col(&schema.treatment_column)?;
    let cov_i: Vec<usize> = schema
        .covariate_columns
        .iter()
        .map(|c| col(c))
        .collect::<Result<_, _>>()?;
    let r_i = col(&schema.measured_column)?;
    let y_i = col(&schema.outcome_column)?;
    let c_i = col(&schema.censor_column)?;
    let d_i = col(&schema.death_column)?;

    let mut records = Vec::new();
    for (k, row) in rdr.records().enumerate() {
        let line = k + 2;
        let row = row.map_err(|e| DatasetError::Csv(e.to_string()))?;
        let field = |i: usize| row.get(i).unwrap_or("");
        let t_raw = field(t_i).trim();
        let t = t_raw.parse::<u32>().map_err(|_| DatasetError::InvalidNumber {
            line,
            column: schema.time_column.clone(),
            value: t_raw.to_string(),
        })?;
        let covariates = cov_i
            .iter()
            .zip(&schema.covariate_columns)
            .map(|(&i, name)| parse_number(field(i), line, name))
            .collect::<Result<Vec<_>, _>>()?;
        let y_raw = field(y_i).trim();
        let outcome = if y_raw.is_empty() {
            None
        } else {
            Some(parse_number(y_raw, line, &schema.outcome_column)?)
        };
        records.push(Record {
            id: field(id_i).to_string(),
            t,
            treatment: parse_indicator(field(a_i), line, &schema.treatment_column)?,
            covariates,
            measured: parse_indicator(field(r_i), line, &schema.measured_column)?,
            outcome,
            censored: parse_indicator(field(c_i), line, &schema.censor_column)?,
            died: parse_indicator(field(d_i), line, &schema.death_column)?,
        });
    }
    LongitudinalDataset::from_records(schema.clone(), records)
}

pub fn load_csv(path: &Path, schema: &VariableSchema) -> Result<LongitudinalDataset, DatasetError> {
    let file = std::fs::File::open(path).map_err(|e| DatasetError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    read_csv(std::io::BufReader::new(file), schema)
}

/// Stacked per-strategy copies of a dataset. The copies are identical, so the
/// base rows are held once and the `g` column is implied by copy order.
#[derive(Debug, Clone)]
pub struct CopiedDataset {
    base: LongitudinalDataset,
    labels: Vec<String>,
}

impl CopiedDataset {
    pub fn n_copies(&self) -> usize {
        self.labels.len()
    }

    pub fn n_rows(&self) -> usize {
        self.labels.len() * self.base.n_rows()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn base(&self) -> &LongitudinalDataset {
        &self.base
    }

    /// Copy index of every stacked row.
    pub fn g_column(&self) -> Vec<usize> {
        (0..self.labels.len())
            .flat_map(|g| std::iter::repeat_n(g, self.base.n_rows()))
            .collect()
    }

    /// The rows of copy `g`.
    pub fn slice(&self, g: usize) -> &LongitudinalDataset {
        assert!(g < self.labels.len(), "copy index out of range");
        &self.base
    }
}

pub fn make_copies(d: &LongitudinalDataset, labels: &[String]) -> CopiedDataset {
    assert!(!labels.is_empty(), "at least one strategy is required");
    CopiedDataset {
        base: d.clone(),
        labels: labels.to_vec(),
    }
}

/// Drops rows with `t > t_max` and, when `drop_dead_by` is set, every
/// individual who died at or before that interval.
pub fn restrict(
    d: &LongitudinalDataset,
    t_max: u32,
    drop_dead_by: Option<u32>,
) -> Result<LongitudinalDataset, DatasetError> {
    if t_max > d.tau {
        return Err(DatasetError::TimeOutOfRange { t_max, tau: d.tau });
    }
    let mut b = Builder::new(d.covariates.len());
    let mut weights = Vec::new();
    for p in 0..d.n_individuals() {
        if let (Some(cut), Some(death)) = (drop_dead_by, d.death_time(p)) {
            if death <= cut {
                continue;
            }
        }
        let rows = d.person_rows(p);
        let end = rows
            .clone()
            .find(|&r| d.time[r] > t_max)
            .unwrap_or(rows.end);
        b.begin_person(d.ids[p].clone());
        b.copy_rows(d, rows.start..end);
        weights.push(d.person_weight(p));
    }
    if b.ids.is_empty() {
        return Err(DatasetError::EmptyResult);
    }
    let w = d.person_weights.as_ref().map(|_| weights);
    Ok(b.finish(d.schema.clone(), w))
}

/// Reference to one row of one time-specific dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StackedEntry {
    pub slice: usize,
    pub row: usize,
    pub person: usize,
    pub t: u32,
}

/// Takes, from each `(t, D_t)`, exactly the rows indexed `t`. The entries
/// reference rows of the input slices so computed per-slice quantities can be
/// attached by the caller.
pub fn stack_time_slices(slices: &[(u32, &LongitudinalDataset)]) -> Vec<StackedEntry> {
    let mut out = Vec::new();
    for (s, (t, d)) in slices.iter().enumerate() {
        for p in 0..d.n_individuals() {
            for r in d.person_rows(p) {
                if d.time[r] == *t {
                    out.push(StackedEntry {
                        slice: s,
                        row: r,
                        person: p,
                        t: *t,
                    });
                }
            }
        }
    }
    out
}

/// Samples `n` individuals with replacement. Repeat draws of an individual
/// get fresh IDs (`<id>~<k>`) so they are grouped as distinct people.
pub fn resample_ids<R: Rng + ?Sized>(d: &LongitudinalDataset, rng: &mut R) -> LongitudinalDataset {
    let n = d.n_individuals();
    let mut used: HashSet<String> = d.ids.iter().cloned().collect();
    let mut draws: HashMap<usize, usize> = HashMap::new();
    let mut b = Builder::new(d.covariates.len());
    let mut weights = Vec::with_capacity(n);
    for _ in 0..n {
        let p = rng.random_range(0..n);
        let count = draws.entry(p).or_insert(0);
        let id = if *count == 0 {
            d.ids[p].clone()
        } else {
            let mut k = *count;
            loop {
                let candidate = format!("{}~{}", d.ids[p], k);
                if used.insert(candidate.clone()) {
                    break candidate;
                }
                k += 1;
            }
        };
        *count += 1;
        b.begin_person(id);
        b.copy_rows(d, d.person_rows(p));
        weights.push(d.person_weight(p));
    }
    let w = d.person_weights.as_ref().map(|_| weights);
    b.finish(d.schema.clone(), w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn schema() -> VariableSchema {
        VariableSchema {
            id_column: "id".into(),
            time_column: "t".into(),
            treatment_column: "a".into(),
            covariate_columns: vec!["l0".into(), "l".into()],
            measured_column: "r".into(),
            outcome_column: "y".into(),
            censor_column: "c".into(),
            death_column: "d".into(),
            baseline_covariates: vec!["l0".into()],
            v_columns: vec!["l0".into()],
        }
    }

    fn time_schema() -> VariableSchema {
        VariableSchema {
            time_column: "month".into(),
            ..schema()
        }
    }

    const THREE_PEOPLE: &str = "\
id,month,a,l0,l,r,y,c,d
1,0,1,0,0,0,,0,0
1,1,1,0,1,1,2.5,0,0
1,2,0,0,1,0,,0,0
2,0,0,1,1,0,,0,0
2,1,1,1,0,0,,0,0
2,2,1,1,0,1,-1,0,0
2,3,0,1,0,0,,0,0
2,4,0,1,1,0,,0,1
3,0,1,0,0,0,,0,0
3,1,1,0,0,0,,1,0
";

    fn load(text: &str) -> Result<LongitudinalDataset, DatasetError> {
        read_csv(text.as_bytes(), &time_schema())
    }

    #[test]
    fn loads_three_person_file() {
        let d = load(THREE_PEOPLE).unwrap();
        assert_eq!(d.n_individuals(), 3);
        assert_eq!(d.person_rows(1).len(), 5);
        assert_eq!(d.death_time(1), Some(4));
        assert_eq!(d.tau(), 4);
        assert_eq!(d.survivors(4), vec![0, 2]);
    }

    #[test]
    fn outcome_without_measurement_is_rejected() {
        let text = THREE_PEOPLE.replace("1,2,0,0,1,0,,0,0", "1,2,0,0,1,0,3.0,0,0");
        assert_eq!(
            load(&text).unwrap_err(),
            DatasetError::OutcomePresentWithoutMeasurement {
                id: "1".into(),
                t: 2
            }
        );
    }

    #[test]
    fn rows_after_death_are_rejected() {
        let text = format!("{THREE_PEOPLE}2,5,0,1,1,0,,0,0\n");
        assert!(matches!(
            load(&text).unwrap_err(),
            DatasetError::NonMonotoneDeathOrCensoring { t: 5, .. }
        ));
        let text = format!("{THREE_PEOPLE}3,2,0,0,1,0,,0,0\n");
        assert!(matches!(
            load(&text).unwrap_err(),
            DatasetError::NonMonotoneDeathOrCensoring { t: 2, .. }
        ));
    }

    #[test]
    fn gaps_and_bad_indicators_are_rejected() {
        let text = THREE_PEOPLE.replace("2,3,0,1,0,0,,0,0\n", "");
        assert!(matches!(
            load(&text).unwrap_err(),
            DatasetError::GapInIntervals {
                expected: 3,
                found: 4,
                ..
            }
        ));
        let text = THREE_PEOPLE.replace("1,1,1,0,1,1,2.5,0,0", "1,1,2,0,1,1,2.5,0,0");
        assert!(matches!(
            load(&text).unwrap_err(),
            DatasetError::NonBinaryIndicator { .. }
        ));
        let text = THREE_PEOPLE.replace("id,month", "id,time");
        assert_eq!(
            load(&text).unwrap_err(),
            DatasetError::MissingColumn("month".into())
        );
    }

    #[test]
    fn baseline_covariates_must_be_constant() {
        let text = THREE_PEOPLE.replace("2,2,1,1,0,1,-1,0,0", "2,2,1,0,0,1,-1,0,0");
        assert!(matches!(
            load(&text).unwrap_err(),
            DatasetError::BaselineNotConstant { .. }
        ));
    }

    #[test]
    fn schema_rejects_reserved_and_duplicate_names() {
        let mut s = schema();
        s.covariate_columns.push("z".into());
        assert!(s.validate().is_err());
        let mut s = schema();
        s.v_columns = vec!["l".into()];
        assert!(s.validate().is_err());
        let mut s = schema();
        s.outcome_column = "a".into();
        assert!(s.validate().is_err());
    }

    #[test]
    fn restrict_identity_and_death_removal() {
        let d = load(THREE_PEOPLE).unwrap();
        assert_eq!(restrict(&d, d.tau(), None).unwrap(), d);
        let r = restrict(&d, 2, Some(6.min(d.tau()))).unwrap();
        assert_eq!(r.ids(), &["1".to_string(), "3".to_string()]);
        assert!(r.time().iter().all(|&t| t <= 2));
        assert_eq!(restrict(&d, 5, None).unwrap_err(), DatasetError::TimeOutOfRange { t_max: 5, tau: 4 });
    }

    #[test]
    fn copies_have_expected_shape() {
        let d = load(THREE_PEOPLE).unwrap();
        let c = make_copies(&d, &["g1".to_string(), "g0".to_string()]);
        assert_eq!(c.n_rows(), 2 * d.n_rows());
        let g = c.g_column();
        assert_eq!(g.iter().filter(|&&k| k == 1).count(), d.n_rows());
        assert_eq!(c.slice(1), &d);
        let one = make_copies(&d, &["g".to_string()]);
        assert_eq!(one.n_rows(), d.n_rows());
        assert!(one.g_column().iter().all(|&k| k == 0));
    }

    #[test]
    fn stacking_uses_row_t_of_each_slice() {
        let d = load(THREE_PEOPLE).unwrap();
        let d1 = restrict(&d, 1, Some(1)).unwrap();
        let d2 = restrict(&d, 2, Some(2)).unwrap();
        let d4 = restrict(&d, 4, Some(4)).unwrap();
        let stacked = stack_time_slices(&[(1, &d1), (2, &d2), (4, &d4)]);
        // t=1: all three people; t=2: persons 1 and 2 (3 censored at 1); t=4: nobody
        // (person 2 died at 4, person 1 has no row 4).
        let counts: Vec<usize> = [1, 2, 4]
            .iter()
            .map(|t| stacked.iter().filter(|e| e.t == *t).count())
            .collect();
        assert_eq!(counts, vec![3, 2, 0]);
    }

    #[test]
    fn resampling_is_deterministic_and_renames_duplicates() {
        let d = load(THREE_PEOPLE).unwrap();
        let a = resample_ids(&d, &mut ChaCha8Rng::seed_from_u64(9));
        let b = resample_ids(&d, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
        assert_eq!(a.n_individuals(), 3);
        let unique: HashSet<&String> = a.ids().iter().collect();
        assert_eq!(unique.len(), 3);

        let single = restrict(&d, d.tau(), None).unwrap();
        let one = LongitudinalDataset::from_records(
            time_schema(),
            single.to_records().into_iter().filter(|r| r.id == "3").collect(),
        )
        .unwrap();
        let s = resample_ids(&one, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(s, one);
    }

    #[test]
    fn resample_multiplicity_has_mean_one() {
        // Expected multiplicity of a fixed individual is exactly 1; check the
        // Monte Carlo mean over 10^4 resamples against 3 standard errors.
        let text: String = std::iter::once("id,month,a,l0,l,r,y,c,d\n".to_string())
            .chain((0..20).map(|i| format!("p{i},0,1,0,0,0,,0,0\n")))
            .collect();
        let d = load(&text).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let reps = 10_000;
        let counts: Vec<f64> = (0..reps)
            .map(|_| {
                let s = resample_ids(&d, &mut rng);
                s.ids()
                    .iter()
                    .filter(|id| id.as_str() == "p7" || id.starts_with("p7~"))
                    .count() as f64
            })
            .collect();
        let mean = counts.iter().sum::<f64>() / reps as f64;
        let var = counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (reps - 1) as f64;
        let se = (var / reps as f64).sqrt();
        assert!((mean - 1.0).abs() < 3.0 * se, "mean {mean} se {se}");
    }

    #[test]
    fn csv_round_trip() {
        let d = load(THREE_PEOPLE).unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let back = load(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(back, d);
    }
}
