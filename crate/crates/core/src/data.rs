//! Reference and cohort samples, weight vectors, and CSV ingestion.
//!
//! Row numbers in errors are 1-based data rows (the header is not counted).
//! Lines beginning with `#` are skipped so that files written by this crate,
//! which carry a provenance comment, can be read back.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::{compensated_sum, mean_sd, Scalar};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot open {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("column `{column}` not found in header")]
    MissingColumn { column: String },
    #[error("schema must name at least one {what} column")]
    EmptySchema { what: &'static str },
    #[error("row {row}, column `{column}`: `{value}` is not a finite number")]
    NonNumeric {
        row: usize,
        column: String,
        value: String,
    },
    #[error("row {row}, column `{column}`: design weight {value} must be positive and finite")]
    NonPositiveWeight {
        row: usize,
        column: String,
        value: String,
    },
    #[error("row {row}, column `{column}`: response indicator `{value}` must be 0 or 1")]
    InvalidRespond {
        row: usize,
        column: String,
        value: String,
    },
    #[error("row {row}, column `{column}`: respondent has no outcome")]
    MissingOutcome { row: usize, column: String },
    #[error("record {row}: {what} has dimension {actual}, expected {expected}")]
    Dimension {
        row: usize,
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("record {row}: {what} must be non-negative and finite")]
    InvalidValue { row: usize, what: &'static str },
    #[error("sample has no records")]
    Empty,
}

/// One unit of the reference probability sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceRecord<T> {
    pub covariates: Vec<T>,
    pub design_weight: T,
}

/// Probability sample with known design weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSample<T> {
    records: Vec<ReferenceRecord<T>>,
    dim: usize,
}

impl<T: Scalar> ReferenceSample<T> {
    pub fn new(records: Vec<ReferenceRecord<T>>) -> Result<Self, DataError> {
        let first = records.first().ok_or(DataError::Empty)?;
        let dim = first.covariates.len();
        for (i, r) in records.iter().enumerate() {
            if r.covariates.len() != dim {
                return Err(DataError::Dimension {
                    row: i + 1,
                    what: "covariate vector",
                    expected: dim,
                    actual: r.covariates.len(),
                });
            }
            if !(r.design_weight > T::zero()) || !r.design_weight.is_finite() {
                return Err(DataError::InvalidValue {
                    row: i + 1,
                    what: "design weight",
                });
            }
            if r.covariates.iter().any(|v| !v.is_finite()) {
                return Err(DataError::InvalidValue {
                    row: i + 1,
                    what: "covariate",
                });
            }
        }
        Ok(Self { records, dim })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn covariate_dim(&self) -> usize {
        self.dim
    }

    pub fn records(&self) -> &[ReferenceRecord<T>] {
        &self.records
    }

    pub fn design_weights(&self) -> Vec<T> {
        self.records.iter().map(|r| r.design_weight).collect()
    }

    pub fn total_weight(&self) -> T {
        compensated_sum(self.records.iter().map(|r| r.design_weight))
    }

    pub fn covariate_rows(&self) -> Vec<&[T]> {
        self.records.iter().map(|r| r.covariates.as_slice()).collect()
    }
}

/// One unit of the nonprobability cohort.
#[derive(Debug, Clone, PartialEq)]
pub struct CohortRecord<T> {
    /// Covariates of the participation model.
    pub covariates: Vec<T>,
    /// Covariates of the follow-up response model.
    pub response_covariates: Vec<T>,
    pub respond: bool,
    /// Present for every respondent. May also be present for nonrespondents
    /// when the data carry simulation truth; estimators never read it then.
    pub outcome: Option<T>,
    pub subgroup: Option<String>,
}

impl<T: Scalar> CohortRecord<T> {
    /// The outcome as an analyst would see it at follow-up.
    pub fn observed_outcome(&self) -> Option<T> {
        if self.respond {
            self.outcome
        } else {
            None
        }
    }

    /// True when the record holds an outcome that follow-up analyses must ignore.
    pub fn has_hidden_outcome(&self) -> bool {
        !self.respond && self.outcome.is_some()
    }
}

/// Nonprobability baseline sample with its follow-up response status.
#[derive(Debug, Clone, PartialEq)]
pub struct CohortSample<T> {
    records: Vec<CohortRecord<T>>,
    x_dim: usize,
    z_dim: usize,
}

impl<T: Scalar> CohortSample<T> {
    pub fn new(records: Vec<CohortRecord<T>>) -> Result<Self, DataError> {
        let first = records.first().ok_or(DataError::Empty)?;
        let x_dim = first.covariates.len();
        let z_dim = first.response_covariates.len();
        for (i, r) in records.iter().enumerate() {
            let row = i + 1;
            if r.covariates.len() != x_dim {
                return Err(DataError::Dimension {
                    row,
                    what: "covariate vector",
                    expected: x_dim,
                    actual: r.covariates.len(),
                });
            }
            if r.response_covariates.len() != z_dim {
                return Err(DataError::Dimension {
                    row,
                    what: "response covariate vector",
                    expected: z_dim,
                    actual: r.response_covariates.len(),
                });
            }
            if r
                .covariates
                .iter()
                .chain(&r.response_covariates)
                .any(|v| !v.is_finite())
            {
                return Err(DataError::InvalidValue {
                    row,
                    what: "covariate",
                });
            }
            match r.outcome {
                None if r.respond => {
                    return Err(DataError::MissingOutcome {
                        row,
                        column: "outcome".into(),
                    })
                }
                Some(y) if !y.is_finite() => {
                    return Err(DataError::InvalidValue {
                        row,
                        what: "outcome",
                    })
                }
                _ => {}
            }
        }
        Ok(Self {
            records,
            x_dim,
            z_dim,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[CohortRecord<T>] {
        &self.records
    }

    pub fn covariate_dim(&self) -> usize {
        self.x_dim
    }

    pub fn response_covariate_dim(&self) -> usize {
        self.z_dim
    }

    pub fn n_respondents(&self) -> usize {
        self.records.iter().filter(|r| r.respond).count()
    }

    pub fn respond_mask(&self) -> Vec<bool> {
        self.records.iter().map(|r| r.respond).collect()
    }

    pub fn covariate_rows(&self) -> Vec<&[T]> {
        self.records.iter().map(|r| r.covariates.as_slice()).collect()
    }

    pub fn response_covariate_rows(&self) -> Vec<&[T]> {
        self.records
            .iter()
            .map(|r| r.response_covariates.as_slice())
            .collect()
    }

    pub fn subgroup_mask(&self, label: &str) -> Vec<bool> {
        self.records
            .iter()
            .map(|r| r.subgroup.as_deref() == Some(label))
            .collect()
    }

    /// Distinct subgroup labels in order of first appearance.
    pub fn subgroup_labels(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.records {
            if let Some(s) = &r.subgroup {
                if !out.iter().any(|o| o == s) {
                    out.push(s.clone());
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    TrueDesign,
    Kw,
    KwNr,
    Unit,
}

/// Weights aligned to the cohort records.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSet<T> {
    values: Vec<T>,
    provenance: Provenance,
}

impl<T: Scalar> WeightSet<T> {
    pub fn new(values: Vec<T>, provenance: Provenance) -> Result<Self, DataError> {
        if let Some(i) = values.iter().position(|v| !(*v >= T::zero()) || !v.is_finite()) {
            return Err(DataError::InvalidValue {
                row: i + 1,
                what: "weight",
            });
        }
        Ok(Self { values, provenance })
    }

    pub fn unit(n: usize) -> Self {
        Self {
            values: vec![T::one(); n],
            provenance: Provenance::Unit,
        }
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn sum(&self) -> T {
        compensated_sum(self.values.iter().copied())
    }

    /// Coefficient of variation over the nonzero entries (sd with `n - 1`).
    pub fn cv(&self) -> T {
        let nz: Vec<T> = self
            .values
            .iter()
            .copied()
            .filter(|v| *v > T::zero())
            .collect();
        coefficient_of_variation(&nz)
    }

    pub fn scaled(&self, c: T) -> Self {
        Self {
            values: self.values.iter().map(|&v| v * c).collect(),
            provenance: self.provenance,
        }
    }
}

/// sd / mean of a slice, sd with denominator `n - 1`. Zero for fewer than two values.
pub fn coefficient_of_variation<T: Scalar>(values: &[T]) -> T {
    if values.len() < 2 {
        return T::zero();
    }
    let (m, s) = mean_sd(values);
    s / m
}

/// Column mapping for a reference-sample extract.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceSchema {
    pub weight: String,
    pub covariates: Vec<String>,
}

/// Column mapping for a cohort extract.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CohortSchema {
    pub respond: String,
    #[serde(default)]
    pub outcome: Option<String>,
    pub covariates: Vec<String>,
    /// Defaults to `covariates` when empty.
    #[serde(default)]
    pub response_covariates: Vec<String>,
    #[serde(default)]
    pub subgroup: Option<String>,
}

impl CohortSchema {
    pub fn effective_response_covariates(&self) -> &[String] {
        if self.response_covariates.is_empty() {
            &self.covariates
        } else {
            &self.response_covariates
        }
    }

    /// Every column this schema reads.
    pub fn columns(&self) -> Vec<&str> {
        let mut out = vec![self.respond.as_str()];
        out.extend(self.outcome.as_deref());
        out.extend(self.covariates.iter().map(String::as_str));
        out.extend(self.effective_response_covariates().iter().map(String::as_str));
        out.extend(self.subgroup.as_deref());
        out
    }
}

fn open(path: &Path) -> Result<File, DataError> {
    File::open(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub(crate) fn csv_reader<R: Read>(reader: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader)
}

fn column_index(headers: &csv::StringRecord, name: &str) -> Result<usize, DataError> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| DataError::MissingColumn {
            column: name.to_string(),
        })
}

fn parse_cell<T: Scalar>(raw: &str, row: usize, column: &str) -> Result<T, DataError> {
    raw.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .and_then(T::from_f64)
        .ok_or_else(|| DataError::NonNumeric {
            row,
            column: column.to_string(),
            value: raw.to_string(),
        })
}

pub fn load_reference_csv<T: Scalar>(
    path: impl AsRef<Path>,
    schema: &ReferenceSchema,
) -> Result<ReferenceSample<T>, DataError> {
    read_reference_csv(open(path.as_ref())?, schema)
}

pub fn read_reference_csv<T: Scalar, R: Read>(
    reader: R,
    schema: &ReferenceSchema,
) -> Result<ReferenceSample<T>, DataError> {
    if schema.covariates.is_empty() {
        return Err(DataError::EmptySchema { what: "covariate" });
    }
    let mut rdr = csv_reader(reader);
    let headers = rdr.headers()?.clone();
    let w_idx = column_index(&headers, &schema.weight)?;
    let x_idx = schema
        .covariates
        .iter()
        .map(|c| column_index(&headers, c))
        .collect::<Result<Vec<_>, _>>()?;

    let mut records = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        let raw_w = rec.get(w_idx).unwrap_or("");
        let w: T = parse_cell(raw_w, row, &schema.weight)?;
        if !(w > T::zero()) {
            return Err(DataError::NonPositiveWeight {
                row,
                column: schema.weight.clone(),
                value: raw_w.to_string(),
            });
        }
        let covariates = x_idx
            .iter()
            .zip(&schema.covariates)
            .map(|(&j, name)| parse_cell(rec.get(j).unwrap_or(""), row, name))
            .collect::<Result<Vec<T>, _>>()?;
        records.push(ReferenceRecord {
            covariates,
            design_weight: w,
        });
    }
    ReferenceSample::new(records)
}

pub fn load_cohort_csv<T: Scalar>(
    path: impl AsRef<Path>,
    schema: &CohortSchema,
) -> Result<CohortSample<T>, DataError> {
    read_cohort_csv(open(path.as_ref())?, schema)
}

pub fn read_cohort_csv<T: Scalar, R: Read>(
    reader: R,
    schema: &CohortSchema,
) -> Result<CohortSample<T>, DataError> {
    if schema.covariates.is_empty() {
        return Err(DataError::EmptySchema { what: "covariate" });
    }
    let mut rdr = csv_reader(reader);
    let headers = rdr.headers()?.clone();
    let r_idx = column_index(&headers, &schema.respond)?;
    let y_idx = schema
        .outcome
        .as_deref()
        .map(|c| column_index(&headers, c))
        .transpose()?;
    let x_idx = schema
        .covariates
        .iter()
        .map(|c| column_index(&headers, c))
        .collect::<Result<Vec<_>, _>>()?;
    let z_names = schema.effective_response_covariates();
    let z_idx = z_names
        .iter()
        .map(|c| column_index(&headers, c))
        .collect::<Result<Vec<_>, _>>()?;
    let g_idx = schema
        .subgroup
        .as_deref()
        .map(|c| column_index(&headers, c))
        .transpose()?;

    let mut records = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        let raw_r = rec.get(r_idx).unwrap_or("");
        let respond = match raw_r {
            "1" => true,
            "0" => false,
            other => match other.parse::<f64>() {
                Ok(v) if v == 1.0 => true,
                Ok(v) if v == 0.0 => false,
                _ => {
                    return Err(DataError::InvalidRespond {
                        row,
                        column: schema.respond.clone(),
                        value: other.to_string(),
                    })
                }
            },
        };
        let outcome = match (y_idx, schema.outcome.as_deref()) {
            (Some(j), Some(name)) => {
                let raw = rec.get(j).unwrap_or("");
                if raw.is_empty() {
                    None
                } else {
                    Some(parse_cell(raw, row, name)?)
                }
            }
            _ => None,
        };
        if respond && outcome.is_none() {
            return Err(DataError::MissingOutcome {
                row,
                column: schema
                    .outcome
                    .clone()
                    .unwrap_or_else(|| "<no outcome column>".into()),
            });
        }
        let covariates = x_idx
            .iter()
            .zip(&schema.covariates)
            .map(|(&j, name)| parse_cell(rec.get(j).unwrap_or(""), row, name))
            .collect::<Result<Vec<T>, _>>()?;
        let response_covariates = z_idx
            .iter()
            .zip(z_names)
            .map(|(&j, name)| parse_cell(rec.get(j).unwrap_or(""), row, name))
            .collect::<Result<Vec<T>, _>>()?;
        let subgroup = g_idx
            .and_then(|j| rec.get(j))
            .filter(|s| !s.is_empty())
            .map(str::to_string);
        records.push(CohortRecord {
            covariates,
            response_covariates,
            respond,
            outcome,
            subgroup,
        });
    }
    CohortSample::new(records)
}

/// Renders a number with 17 significant digits in `%.17g` style, which
/// round-trips every `f64` exactly.
pub fn format_g17<T: Scalar>(v: T) -> String {
    let v = v.to_f64_lossy();
    if v == 0.0 {
        return if v.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    if !v.is_finite() {
        return v.to_string();
    }
    let sci = format!("{:.16e}", v);
    let (mantissa, exp) = sci.split_once('e').expect("exponent marker");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..17).contains(&exp) {
        let decimals = (16 - exp).max(0) as usize;
        trim_zeros(format!("{:.*}", decimals, v))
    } else {
        format!("{}e{}{:02}", trim_zeros(mantissa.to_string()), if exp < 0 { '-' } else { '+' }, exp.abs())
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

/// Writes a reference sample using the schema's column names.
pub fn write_reference_csv<T: Scalar, W: Write>(
    writer: W,
    sample: &ReferenceSample<T>,
    schema: &ReferenceSchema,
) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec![schema.weight.as_str()];
    header.extend(schema.covariates.iter().map(String::as_str));
    w.write_record(&header)?;
    for r in sample.records() {
        let mut row = vec![format_g17(r.design_weight)];
        row.extend(r.covariates.iter().map(|&v| format_g17(v)));
        w.write_record(&row)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Writes a cohort sample. Response covariates are written only when the
/// schema names columns distinct from the participation covariates.
pub fn write_cohort_csv<T: Scalar, W: Write>(
    writer: W,
    sample: &CohortSample<T>,
    schema: &CohortSchema,
) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(writer);
    let z_separate = !schema.response_covariates.is_empty()
        && schema.response_covariates != schema.covariates;
    let mut header: Vec<&str> = vec![schema.respond.as_str()];
    header.extend(schema.outcome.as_deref());
    header.extend(schema.covariates.iter().map(String::as_str));
    if z_separate {
        header.extend(schema.response_covariates.iter().map(String::as_str));
    }
    header.extend(schema.subgroup.as_deref());
    w.write_record(&header)?;
    for r in sample.records() {
        let mut row = vec![if r.respond { "1".to_string() } else { "0".to_string() }];
        if schema.outcome.is_some() {
            row.push(r.outcome.map(format_g17).unwrap_or_default());
        }
        row.extend(r.covariates.iter().map(|&v| format_g17(v)));
        if z_separate {
            row.extend(r.response_covariates.iter().map(|&v| format_g17(v)));
        }
        if schema.subgroup.is_some() {
            row.push(r.subgroup.clone().unwrap_or_default());
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ref_schema() -> ReferenceSchema {
        ReferenceSchema {
            weight: "w".into(),
            covariates: vec!["x".into()],
        }
    }

    fn cohort_schema() -> CohortSchema {
        CohortSchema {
            respond: "r".into(),
            outcome: Some("y".into()),
            covariates: vec!["x".into()],
            response_covariates: vec![],
            subgroup: None,
        }
    }

    #[test]
    fn reference_three_rows() {
        let s: ReferenceSample<f64> =
            read_reference_csv("w,x\n2,0.1\n2,0.2\n2,0.3\n".as_bytes(), &ref_schema()).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s.total_weight(), 6.0);
        assert_eq!(s.records()[1].covariates, vec![0.2]);
    }

    #[test]
    fn zero_weight_names_row() {
        let err = read_reference_csv::<f64, _>("w,x\n2,0.1\n0,0.2\n".as_bytes(), &ref_schema())
            .unwrap_err();
        match err {
            DataError::NonPositiveWeight { row, .. } => assert_eq!(row, 2),
            e => panic!("unexpected {e}"),
        }
        assert!(err_string("w,x\n2,0.1\n0,0.2\n").contains("row 2"));
    }

    fn err_string(csv: &str) -> String {
        read_reference_csv::<f64, _>(csv.as_bytes(), &ref_schema())
            .unwrap_err()
            .to_string()
    }

    #[test]
    fn nonnumeric_names_row_and_column() {
        let msg = err_string("w,x\n2,abc\n");
        assert!(msg.contains("row 1") && msg.contains("`x`"), "{msg}");
    }

    #[test]
    fn missing_column_reported() {
        let err = read_reference_csv::<f64, _>("weight,x\n1,1\n".as_bytes(), &ref_schema())
            .unwrap_err();
        assert!(matches!(err, DataError::MissingColumn { ref column } if column == "w"));
    }

    #[test]
    fn missing_file() {
        let err = load_reference_csv::<f64>("/nonexistent/ref.csv", &ref_schema()).unwrap_err();
        assert!(matches!(err, DataError::Io { .. }));
    }

    #[test]
    fn srs_extract_totals_population() {
        let mut csv = String::from("w,x\n");
        for i in 0..2000 {
            csv.push_str(&format!("100,{}\n", i as f64 / 1000.0));
        }
        let s: ReferenceSample<f64> = read_reference_csv(csv.as_bytes(), &ref_schema()).unwrap();
        assert_eq!(s.total_weight(), 200_000.0);
    }

    #[test]
    fn cohort_counts() {
        let csv = "r,y,x\n1,1,0.5\n0,,0.1\n1,0,-1\n1,1,2\n";
        let c: CohortSample<f64> = read_cohort_csv(csv.as_bytes(), &cohort_schema()).unwrap();
        assert_eq!(c.len(), 4);
        assert_eq!(c.n_respondents(), 3);
        assert_eq!(c.records()[1].outcome, None);
        // z defaults to x
        assert_eq!(c.records()[2].response_covariates, vec![-1.0]);
    }

    #[test]
    fn respondent_without_outcome_rejected() {
        let csv = "r,y,x\n1,1,0.5\n1,,0.1\n";
        let err = read_cohort_csv::<f64, _>(csv.as_bytes(), &cohort_schema()).unwrap_err();
        assert!(matches!(err, DataError::MissingOutcome { row: 2, .. }));
    }

    #[test]
    fn respond_outside_binary_rejected() {
        let csv = "r,y,x\n2,1,0.5\n";
        let err = read_cohort_csv::<f64, _>(csv.as_bytes(), &cohort_schema()).unwrap_err();
        assert!(matches!(err, DataError::InvalidRespond { row: 1, .. }));
    }

    #[test]
    fn hidden_outcomes_are_flagged() {
        let csv = "r,y,x\n0,1,0.5\n1,0,0.1\n";
        let c: CohortSample<f64> = read_cohort_csv(csv.as_bytes(), &cohort_schema()).unwrap();
        assert!(c.records()[0].has_hidden_outcome());
        assert_eq!(c.records()[0].observed_outcome(), None);
        assert_eq!(c.records()[1].observed_outcome(), Some(0.0));
    }

    #[test]
    fn comment_lines_are_skipped() {
        let s: ReferenceSample<f64> =
            read_reference_csv("# produced by kwnr\nw,x\n1,2\n".as_bytes(), &ref_schema())
                .unwrap();
        assert_eq!(s.len(), 1);
    }

    #[test]
    fn rfc4180_quoting() {
        let schema = CohortSchema {
            subgroup: Some("g".into()),
            ..cohort_schema()
        };
        let csv = "r,y,x,g\n1,1,0.5,\"North, East\"\n";
        let c: CohortSample<f64> = read_cohort_csv(csv.as_bytes(), &schema).unwrap();
        assert_eq!(c.records()[0].subgroup.as_deref(), Some("North, East"));
    }

    #[test]
    fn g17_formatting() {
        assert_eq!(format_g17(100.0_f64), "100");
        assert_eq!(format_g17(0.1_f64), "0.10000000000000001");
        assert_eq!(format_g17(-2.5_f64), "-2.5");
        assert_eq!(format_g17(1e-7_f64), "9.9999999999999995e-08");
        assert_eq!(format_g17(1e20_f64), "1e+20");
        assert_eq!(format_g17(0.0_f64), "0");
    }

    #[test]
    fn weight_set_cv_ignores_zeros() {
        let w = WeightSet::new(vec![1.0_f64, 0.0, 3.0], Provenance::KwNr).unwrap();
        assert!((w.cv() - (2.0_f64.sqrt() / 2.0)).abs() < 1e-15);
        assert!(WeightSet::new(vec![-1.0_f64], Provenance::Kw).is_err());
    }
}
