//! Count tables, covariate designs and their delimited-text formats.
//!
//! `counts.csv` has a header row of feature names and one row per sample.
//! The first column holds the sample id; when a subject column is named, the
//! second column holds subject labels. `design.csv` has the sample id first
//! and one column per covariate. The intercept is implicit.

use std::collections::HashMap;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::CovariateVector;

/// Where a covariate enters the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Mean,
    Cov,
    #[default]
    Both,
}

impl Role {
    pub fn in_mean(self) -> bool {
        matches!(self, Role::Mean | Role::Both)
    }

    pub fn in_cov(self) -> bool {
        matches!(self, Role::Cov | Role::Both)
    }
}

/// N×J non-negative counts with optional subject labels.
#[derive(Debug, Clone, PartialEq)]
pub struct CountTable {
    sample_ids: Vec<String>,
    feature_names: Vec<String>,
    counts: DMatrix<u64>,
    subjects: Option<Subjects>,
}

#[derive(Debug, Clone, PartialEq)]
struct Subjects {
    column: String,
    labels: Vec<String>,
    index: Vec<usize>,
}

impl CountTable {
    pub fn new(sample_ids: Vec<String>, feature_names: Vec<String>, counts: DMatrix<u64>) -> Result<Self> {
        if sample_ids.len() != counts.nrows() {
            return Err(Error::DimensionMismatch {
                context: "count table: sample ids",
                expected: counts.nrows(),
                found: sample_ids.len(),
            });
        }
        if feature_names.len() != counts.ncols() {
            return Err(Error::DimensionMismatch {
                context: "count table: feature names",
                expected: counts.ncols(),
                found: feature_names.len(),
            });
        }
        Ok(Self {
            sample_ids,
            feature_names,
            counts,
            subjects: None,
        })
    }

    /// Attaches per-sample subject labels; subjects are indexed in order of first appearance.
    pub fn with_subjects(mut self, column: impl Into<String>, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.n_samples() {
            return Err(Error::DimensionMismatch {
                context: "count table: subject labels",
                expected: self.n_samples(),
                found: labels.len(),
            });
        }
        let mut seen: HashMap<&str, usize> = HashMap::new();
        let mut order = Vec::new();
        let mut index = Vec::with_capacity(labels.len());
        for l in &labels {
            let next = seen.len();
            let s = *seen.entry(l.as_str()).or_insert_with(|| {
                order.push(l.clone());
                next
            });
            index.push(s);
        }
        self.subjects = Some(Subjects {
            column: column.into(),
            labels: order,
            index,
        });
        Ok(self)
    }

    pub fn n_samples(&self) -> usize {
        self.counts.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.counts.ncols()
    }

    pub fn counts(&self) -> &DMatrix<u64> {
        &self.counts
    }

    pub fn get(&self, i: usize, j: usize) -> u64 {
        self.counts[(i, j)]
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn has_subjects(&self) -> bool {
        self.subjects.is_some()
    }

    pub fn n_subjects(&self) -> usize {
        self.subjects.as_ref().map_or(0, |s| s.labels.len())
    }

    /// Subject index of sample `i`, if subjects are attached.
    pub fn subject_of(&self, i: usize) -> Option<usize> {
        self.subjects.as_ref().map(|s| s.index[i])
    }

    pub fn subject_labels(&self) -> Option<&[String]> {
        self.subjects.as_ref().map(|s| s.labels.as_slice())
    }

    pub fn subject_column(&self) -> Option<&str> {
        self.subjects.as_ref().map(|s| s.column.as_str())
    }

    /// Reads a count table. `subject_column`, when given, must name the second column.
    pub fn read_csv(path: &Path, subject_column: Option<&str>) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
        let parse_err = |line: u64, column: &str, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            column: column.to_string(),
            message,
        };
        let header: Vec<String> = rdr
            .headers()
            .map_err(|e| parse_err(1, "-", e.to_string()))?
            .iter()
            .map(str::to_string)
            .collect();
        let first_feature = if let Some(name) = subject_column {
            match header.get(1) {
                Some(h) if h == name => 2,
                _ => {
                    return Err(parse_err(
                        1,
                        name,
                        format!("subject column `{name}` must be the second column"),
                    ))
                }
            }
        } else {
            1
        };
        if header.len() <= first_feature {
            return Err(parse_err(1, "-", "count table has no feature columns".into()));
        }
        let features: Vec<String> = header[first_feature..].to_vec();
        let mut ids = Vec::new();
        let mut labels = Vec::new();
        let mut values = Vec::new();
        for (row, rec) in rdr.records().enumerate() {
            let line = row as u64 + 2;
            let rec = rec.map_err(|e| parse_err(line, "-", e.to_string()))?;
            if rec.len() != header.len() {
                return Err(parse_err(
                    line,
                    "-",
                    format!("expected {} fields, found {}", header.len(), rec.len()),
                ));
            }
            ids.push(rec[0].to_string());
            if first_feature == 2 {
                labels.push(rec[1].to_string());
            }
            for (c, field) in rec.iter().enumerate().skip(first_feature) {
                let v: u64 = field.trim().parse().map_err(|_| {
                    parse_err(
                        line,
                        &header[c],
                        format!("expected a non-negative integer count, found `{field}`"),
                    )
                })?;
                values.push(v);
            }
        }
        if ids.is_empty() {
            return Err(parse_err(2, "-", "count table has no samples".into()));
        }
        let counts = DMatrix::from_row_slice(ids.len(), features.len(), &values);
        let table = Self::new(ids, features, counts)?;
        match subject_column {
            Some(name) => table.with_subjects(name, labels),
            None => Ok(table),
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
        let mut header = vec!["sample".to_string()];
        if let Some(s) = &self.subjects {
            header.push(s.column.clone());
        }
        header.extend(self.feature_names.iter().cloned());
        w.write_record(&header).map_err(|e| csv_io(path, e))?;
        for i in 0..self.n_samples() {
            let mut rec = vec![self.sample_ids[i].clone()];
            if let Some(s) = &self.subjects {
                rec.push(s.labels[s.index[i]].clone());
            }
            rec.extend((0..self.n_features()).map(|j| self.counts[(i, j)].to_string()));
            w.write_record(&rec).map_err(|e| csv_io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// N×C covariates (intercept excluded) with a role per column.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateDesign {
    names: Vec<String>,
    values: DMatrix<f64>,
    roles: Vec<Role>,
}

impl CovariateDesign {
    pub fn new(names: Vec<String>, values: DMatrix<f64>, roles: Vec<Role>) -> Result<Self> {
        if names.len() != values.ncols() || roles.len() != values.ncols() {
            return Err(Error::DimensionMismatch {
                context: "design: names/roles vs columns",
                expected: values.ncols(),
                found: names.len().min(roles.len()),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::contract("design contains non-finite values"));
        }
        Ok(Self { names, values, roles })
    }

    /// Intercept-only design for `n` samples.
    pub fn intercept_only(n: usize) -> Self {
        Self {
            names: Vec::new(),
            values: DMatrix::zeros(n, 0),
            roles: Vec::new(),
        }
    }

    pub fn n_samples(&self) -> usize {
        self.values.nrows()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn roles(&self) -> &[Role] {
        &self.roles
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    /// Number of covariance covariates including the intercept.
    pub fn n_cov(&self) -> usize {
        1 + self.roles.iter().filter(|r| r.in_cov()).count()
    }

    /// Number of mean covariates excluding the intercept.
    pub fn n_mean(&self) -> usize {
        self.roles.iter().filter(|r| r.in_mean()).count()
    }

    pub fn cov_names(&self) -> Vec<String> {
        std::iter::once("intercept".to_string())
            .chain(self.select(Role::in_cov).map(|c| self.names[c].clone()))
            .collect()
    }

    pub fn mean_names(&self) -> Vec<String> {
        self.select(Role::in_mean).map(|c| self.names[c].clone()).collect()
    }

    fn select(&self, pred: fn(Role) -> bool) -> impl Iterator<Item = usize> + '_ {
        (0..self.roles.len()).filter(move |&c| pred(self.roles[c]))
    }

    /// Covariance-side covariate vector of sample `i`, intercept first.
    pub fn cov_vector(&self, i: usize) -> CovariateVector {
        let rest: Vec<f64> = self.select(Role::in_cov).map(|c| self.values[(i, c)]).collect();
        CovariateVector::with_intercept(&rest)
    }

    /// Mean-side covariates of sample `i`, without the intercept.
    pub fn mean_row(&self, i: usize) -> Vec<f64> {
        self.select(Role::in_mean).map(|c| self.values[(i, c)]).collect()
    }

    /// N×P matrix of covariance covariates, intercept first.
    pub fn cov_matrix(&self) -> DMatrix<f64> {
        let n = self.n_samples();
        let mut m = DMatrix::from_element(n, self.n_cov(), 1.0);
        for (p, c) in self.select(Role::in_cov).enumerate() {
            m.set_column(p + 1, &self.values.column(c));
        }
        m
    }

    /// N×P̃ matrix of mean covariates.
    pub fn mean_matrix(&self) -> DMatrix<f64> {
        let n = self.n_samples();
        let mut m = DMatrix::zeros(n, self.n_mean());
        for (p, c) in self.select(Role::in_mean).enumerate() {
            m.set_column(p, &self.values.column(c));
        }
        m
    }

    /// Reads a design file whose sample ids must match `sample_ids` in order.
    ///
    /// Columns missing from `roles` default to [`Role::Both`]. A column named
    /// `intercept` is accepted only if every entry is 1, and is then dropped.
    pub fn read_csv(path: &Path, sample_ids: &[String], roles: &HashMap<String, Role>) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
        let parse_err = |line: u64, column: &str, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            column: column.to_string(),
            message,
        };
        let header: Vec<String> = rdr
            .headers()
            .map_err(|e| parse_err(1, "-", e.to_string()))?
            .iter()
            .map(str::to_string)
            .collect();
        if header.is_empty() {
            return Err(parse_err(1, "-", "design has no columns".into()));
        }
        for name in roles.keys() {
            if !header[1..].contains(name) {
                return Err(parse_err(1, name, format!("role given for unknown covariate `{name}`")));
            }
        }
        let intercept_col = header
            .iter()
            .skip(1)
            .position(|h| h.eq_ignore_ascii_case("intercept"))
            .map(|p| p + 1);
        let kept: Vec<usize> = (1..header.len()).filter(|&c| Some(c) != intercept_col).collect();
        let mut values = Vec::new();
        let mut n = 0usize;
        for (row, rec) in rdr.records().enumerate() {
            let line = row as u64 + 2;
            let rec = rec.map_err(|e| parse_err(line, "-", e.to_string()))?;
            if rec.len() != header.len() {
                return Err(parse_err(
                    line,
                    "-",
                    format!("expected {} fields, found {}", header.len(), rec.len()),
                ));
            }
            match sample_ids.get(row) {
                Some(id) if id == &rec[0] => {}
                Some(id) => {
                    return Err(parse_err(
                        line,
                        &header[0],
                        format!("sample id `{}` does not match count table row `{id}`", &rec[0]),
                    ))
                }
                None => return Err(parse_err(line, &header[0], "more design rows than samples".into())),
            }
            let parse = |c: usize| -> Result<f64> {
                let field = rec[c].trim();
                match field.parse::<f64>() {
                    Ok(v) if v.is_finite() => Ok(v),
                    _ => Err(parse_err(line, &header[c], format!("expected a finite number, found `{field}`"))),
                }
            };
            if let Some(c) = intercept_col {
                if parse(c)? != 1.0 {
                    return Err(parse_err(line, &header[c], "intercept column must be all ones".into()));
                }
            }
            for &c in &kept {
                values.push(parse(c)?);
            }
            n += 1;
        }
        if n != sample_ids.len() {
            return Err(parse_err(
                n as u64 + 2,
                "-",
                format!("design has {n} rows but the count table has {} samples", sample_ids.len()),
            ));
        }
        let names: Vec<String> = kept.iter().map(|&c| header[c].clone()).collect();
        let role_vec = names.iter().map(|nm| roles.get(nm).copied().unwrap_or_default()).collect();
        let values = DMatrix::from_row_slice(n, kept.len(), &values);
        Self::new(names, values, role_vec)
    }

    pub fn write_csv(&self, path: &Path, sample_ids: &[String]) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
        let mut header = vec!["sample".to_string()];
        header.extend(self.names.iter().cloned());
        w.write_record(&header).map_err(|e| csv_io(path, e))?;
        for (i, id) in sample_ids.iter().enumerate() {
            let mut rec = vec![id.clone()];
            rec.extend((0..self.values.ncols()).map(|c| fmt_f64(self.values[(i, c)])));
            w.write_record(&rec).map_err(|e| csv_io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Shortest representation that round-trips exactly.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

pub(crate) fn csv_io(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e.to_string()))
}

/// Writes a header and rows of floats as CSV.
pub fn write_table(path: &Path, header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut out = std::io::BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    let mut w = csv::Writer::from_writer(&mut out);
    w.write_record(header).map_err(|e| csv_io(path, e))?;
    for r in rows {
        w.write_record(&r).map_err(|e| csv_io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    drop(w);
    out.flush().map_err(|e| Error::io(path, e))
}

/// Reads a CSV of floats, returning the header and the rows.
pub fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| csv_io(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_io(path, e))?;
        let mut v = Vec::with_capacity(rec.len());
        for (c, field) in rec.iter().enumerate() {
            v.push(field.trim().parse::<f64>().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line: row as u64 + 2,
                column: header.get(c).cloned().unwrap_or_default(),
                message: format!("expected a number, found `{field}`"),
            })?);
        }
        rows.push(v);
    }
    Ok((header, rows))
}
