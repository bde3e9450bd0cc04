//! All-categorical tabular datasets: CSV parsing, validation and one-hot
//! encoding.
//!
//! CSV dialect: comma separated, no quoting or escaping, UTF-8, `\n` or
//! `\r\n` line endings. Fields are trimmed of surrounding ASCII whitespace and
//! blank lines are skipped. Line numbers in errors are 1-based physical lines
//! of the input, the header being line 1.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

/// Minimum number of data rows accepted by [`parse_csv`].
pub const MIN_ROWS: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error, Serialize)]
#[serde(tag = "code", rename_all = "PascalCase")]
pub enum DatasetError {
    #[error("input is not valid UTF-8 (byte offset {offset})")]
    InvalidUtf8 { offset: usize },
    #[error("missing header row")]
    MissingHeader,
    #[error("duplicate column name {name:?} in header")]
    DuplicateColumn { name: String },
    #[error("empty column name at position {position} in header")]
    EmptyColumnName { position: usize },
    #[error("label column {name:?} not found in header")]
    LabelNotFound { name: String },
    #[error("dataset has no feature columns besides the label")]
    NoFeatureColumns,
    #[error("line {line}: expected {expected} fields, found {found}")]
    RaggedRow {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: empty value in column {column:?}")]
    EmptyValue { line: usize, column: String },
    #[error("need at least {min} data rows, found {found}")]
    TooFewRows { found: usize, min: usize },
    #[error("label column must have exactly 2 distinct values, found {count}")]
    LabelNotBinary { count: usize },
}

impl DatasetError {
    pub fn code(&self) -> &'static str {
        match self {
            DatasetError::InvalidUtf8 { .. } => "InvalidUtf8",
            DatasetError::MissingHeader => "MissingHeader",
            DatasetError::DuplicateColumn { .. } => "DuplicateColumn",
            DatasetError::EmptyColumnName { .. } => "EmptyColumnName",
            DatasetError::LabelNotFound { .. } => "LabelNotFound",
            DatasetError::NoFeatureColumns => "NoFeatureColumns",
            DatasetError::RaggedRow { .. } => "RaggedRow",
            DatasetError::EmptyValue { .. } => "EmptyValue",
            DatasetError::TooFewRows { .. } => "TooFewRows",
            DatasetError::LabelNotBinary { .. } => "LabelNotBinary",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnRole {
    Feature,
    Label,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSchema {
    pub name: String,
    /// Distinct values, sorted by byte order.
    pub categories: Vec<String>,
    pub role: ColumnRole,
}

/// Header plus rows, checked for shape and empty cells but with no schema
/// inferred yet.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
    /// Physical line number of each row.
    pub lines: Vec<usize>,
}

impl RawTable {
    pub fn parse(bytes: &[u8]) -> Result<Self, DatasetError> {
        let text = std::str::from_utf8(bytes).map_err(|e| DatasetError::InvalidUtf8 {
            offset: e.valid_up_to(),
        })?;
        let mut lines = text
            .split('\n')
            .enumerate()
            .map(|(i, l)| (i + 1, l.strip_suffix('\r').unwrap_or(l)))
            .filter(|(_, l)| !l.trim().is_empty());

        let (_, header_line) = lines.next().ok_or(DatasetError::MissingHeader)?;
        let header: Vec<String> = split_fields(header_line).map(str::to_owned).collect();
        let mut seen = BTreeSet::new();
        for (position, name) in header.iter().enumerate() {
            if name.is_empty() {
                return Err(DatasetError::EmptyColumnName { position });
            }
            if !seen.insert(name.as_str()) {
                return Err(DatasetError::DuplicateColumn { name: name.clone() });
            }
        }

        let mut rows = Vec::new();
        let mut line_numbers = Vec::new();
        for (line, content) in lines {
            let fields: Vec<String> = split_fields(content).map(str::to_owned).collect();
            if fields.len() != header.len() {
                return Err(DatasetError::RaggedRow {
                    line,
                    expected: header.len(),
                    found: fields.len(),
                });
            }
            if let Some(pos) = fields.iter().position(|f| f.is_empty()) {
                return Err(DatasetError::EmptyValue {
                    line,
                    column: header[pos].clone(),
                });
            }
            rows.push(fields);
            line_numbers.push(line);
        }
        Ok(Self {
            header,
            rows,
            lines: line_numbers,
        })
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }
}

fn split_fields(line: &str) -> impl Iterator<Item = &str> {
    line.split(',').map(|f| f.trim())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub columns: Vec<ColumnSchema>,
    pub rows: Vec<Vec<String>>,
    pub label_column: String,
}

/// Parse and validate a categorical CSV dataset.
///
/// The lexicographically smaller label value becomes class 0.
pub fn parse_csv(bytes: &[u8], label_column: &str) -> Result<Dataset, DatasetError> {
    let table = RawTable::parse(bytes)?;
    let label_idx = table
        .column_index(label_column)
        .ok_or_else(|| DatasetError::LabelNotFound {
            name: label_column.to_owned(),
        })?;
    if table.header.len() < 2 {
        return Err(DatasetError::NoFeatureColumns);
    }
    if table.rows.len() < MIN_ROWS {
        return Err(DatasetError::TooFewRows {
            found: table.rows.len(),
            min: MIN_ROWS,
        });
    }

    let mut distinct: Vec<BTreeSet<&str>> = vec![BTreeSet::new(); table.header.len()];
    for row in &table.rows {
        for (set, value) in distinct.iter_mut().zip(row) {
            set.insert(value.as_str());
        }
    }
    let label_count = distinct[label_idx].len();
    if label_count != 2 {
        return Err(DatasetError::LabelNotBinary { count: label_count });
    }

    let columns = table
        .header
        .iter()
        .zip(&distinct)
        .enumerate()
        .map(|(i, (name, set))| ColumnSchema {
            name: name.clone(),
            categories: set.iter().map(|s| s.to_string()).collect(),
            role: if i == label_idx {
                ColumnRole::Label
            } else {
                ColumnRole::Feature
            },
        })
        .collect();

    Ok(Dataset {
        columns,
        rows: table.rows,
        label_column: label_column.to_owned(),
    })
}

impl Dataset {
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn label_index(&self) -> usize {
        self.columns
            .iter()
            .position(|c| c.role == ColumnRole::Label)
            .expect("dataset always has a label column")
    }

    pub fn label_schema(&self) -> &ColumnSchema {
        &self.columns[self.label_index()]
    }

    pub fn feature_columns(&self) -> impl Iterator<Item = (usize, &ColumnSchema)> {
        self.columns
            .iter()
            .enumerate()
            .filter(|(_, c)| c.role == ColumnRole::Feature)
    }

    /// Class of each row: 0 for the smaller raw label value, 1 otherwise.
    pub fn labels(&self) -> Vec<u8> {
        let idx = self.label_index();
        let positive = &self.columns[idx].categories[1];
        self.rows
            .iter()
            .map(|r| u8::from(&r[idx] == positive))
            .collect()
    }

    pub fn class_counts(&self) -> [usize; 2] {
        let mut counts = [0usize; 2];
        for l in self.labels() {
            counts[l as usize] += 1;
        }
        counts
    }

    /// A copy of this dataset with the label column's values replaced by
    /// `labels` (0 or 1), keeping the raw label vocabulary.
    pub fn with_labels(&self, labels: &[u8]) -> Dataset {
        assert_eq!(labels.len(), self.rows.len());
        let idx = self.label_index();
        let cats = self.columns[idx].categories.clone();
        let mut out = self.clone();
        for (row, &l) in out.rows.iter_mut().zip(labels) {
            row[idx] = cats[l as usize].clone();
        }
        out
    }

    /// Render back to the accepted CSV dialect.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let header: Vec<&str> = self.columns.iter().map(|c| c.name.as_str()).collect();
        out.push_str(&header.join(","));
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedColumn {
    pub name: String,
    pub categories: Vec<String>,
    /// Index of this column's first one-hot slot.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMapping {
    pub column: String,
    /// Raw value mapped to class 0.
    pub negative: String,
    /// Raw value mapped to class 1.
    pub positive: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Encoder {
    pub columns: Vec<EncodedColumn>,
    pub label: LabelMapping,
    pub width: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error, Serialize)]
#[serde(tag = "code", rename_all = "PascalCase")]
pub enum EncodeError {
    #[error("column {column:?} is missing")]
    MissingColumn { column: String },
    #[error("line {line}: value {value:?} is not a known category of column {column:?} (allowed: {allowed:?})")]
    UnknownCategory {
        line: usize,
        column: String,
        value: String,
        allowed: Vec<String>,
    },
    #[error("line {line}: label value {value:?} is neither {negative:?} nor {positive:?}")]
    UnknownLabel {
        line: usize,
        value: String,
        negative: String,
        positive: String,
    },
}

impl EncodeError {
    pub fn code(&self) -> &'static str {
        match self {
            EncodeError::MissingColumn { .. } => "MissingColumn",
            EncodeError::UnknownCategory { .. } => "UnknownCategory",
            EncodeError::UnknownLabel { .. } => "UnknownLabel",
        }
    }
}

impl Encoder {
    pub fn from_dataset(d: &Dataset) -> Self {
        let mut offset = 0;
        let columns = d
            .feature_columns()
            .map(|(_, c)| {
                let col = EncodedColumn {
                    name: c.name.clone(),
                    categories: c.categories.clone(),
                    offset,
                };
                offset += c.categories.len();
                col
            })
            .collect();
        let label = d.label_schema();
        Self {
            columns,
            label: LabelMapping {
                column: label.name.clone(),
                negative: label.categories[0].clone(),
                positive: label.categories[1].clone(),
            },
            width: offset,
        }
    }

    /// Feature width implied by the column list.
    pub fn computed_width(&self) -> usize {
        self.columns.iter().map(|c| c.categories.len()).sum()
    }

    pub fn column(&self, name: &str) -> Option<&EncodedColumn> {
        self.columns.iter().find(|c| c.name == name)
    }

    /// One-hot encode a single row given as `column -> value`.
    pub fn encode_values(&self, values: &HashMap<String, String>) -> Result<Vec<f64>, EncodeError> {
        let mut x = vec![0.0; self.width];
        for col in &self.columns {
            let value = values.get(&col.name).ok_or_else(|| EncodeError::MissingColumn {
                column: col.name.clone(),
            })?;
            let slot = col.slot(value).ok_or_else(|| EncodeError::UnknownCategory {
                line: 0,
                column: col.name.clone(),
                value: value.clone(),
                allowed: col.categories.clone(),
            })?;
            x[slot] = 1.0;
        }
        Ok(x)
    }

    /// Encode a parsed table against this encoder's schema, for scoring a
    /// model on data it was not fitted to. Extra columns are ignored.
    pub fn encode_table(&self, table: &RawTable) -> Result<EncodedMatrix, EncodeError> {
        let positions: Vec<usize> = self
            .columns
            .iter()
            .map(|c| {
                table
                    .column_index(&c.name)
                    .ok_or_else(|| EncodeError::MissingColumn {
                        column: c.name.clone(),
                    })
            })
            .collect::<Result<_, _>>()?;
        let label_pos = table
            .column_index(&self.label.column)
            .ok_or_else(|| EncodeError::MissingColumn {
                column: self.label.column.clone(),
            })?;

        let mut features = vec![0.0; table.rows.len() * self.width];
        let mut labels = Vec::with_capacity(table.rows.len());
        for (r, (row, &line)) in table.rows.iter().zip(&table.lines).enumerate() {
            let dst = &mut features[r * self.width..(r + 1) * self.width];
            for (col, &pos) in self.columns.iter().zip(&positions) {
                let value = &row[pos];
                let slot = col.slot(value).ok_or_else(|| EncodeError::UnknownCategory {
                    line,
                    column: col.name.clone(),
                    value: value.clone(),
                    allowed: col.categories.clone(),
                })?;
                dst[slot] = 1.0;
            }
            let raw = &row[label_pos];
            let y = if *raw == self.label.negative {
                0.0
            } else if *raw == self.label.positive {
                1.0
            } else {
                return Err(EncodeError::UnknownLabel {
                    line,
                    value: raw.clone(),
                    negative: self.label.negative.clone(),
                    positive: self.label.positive.clone(),
                });
            };
            labels.push(y);
        }
        Ok(EncodedMatrix {
            features,
            labels,
            width: self.width,
        })
    }
}

impl EncodedColumn {
    fn slot(&self, value: &str) -> Option<usize> {
        self.categories
            .binary_search_by(|c| c.as_str().cmp(value))
            .ok()
            .map(|i| self.offset + i)
    }
}

/// Row-major one-hot feature matrix with 0/1 labels.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedMatrix {
    pub features: Vec<f64>,
    pub labels: Vec<f64>,
    pub width: usize,
}

impl EncodedMatrix {
    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.width..(i + 1) * self.width]
    }

    /// Rows selected by `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> EncodedMatrix {
        let mut features = Vec::with_capacity(indices.len() * self.width);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        EncodedMatrix {
            features,
            labels,
            width: self.width,
        }
    }
}

/// One-hot encode a dataset. Offsets follow column order, then sorted
/// category order.
pub fn encode(d: &Dataset) -> (EncodedMatrix, Encoder) {
    let encoder = Encoder::from_dataset(d);
    let lookup: Vec<(usize, BTreeMap<&str, usize>)> = d
        .feature_columns()
        .zip(&encoder.columns)
        .map(|((idx, schema), enc)| {
            let slots = schema
                .categories
                .iter()
                .enumerate()
                .map(|(i, c)| (c.as_str(), enc.offset + i))
                .collect();
            (idx, slots)
        })
        .collect();

    let width = encoder.width;
    let mut features = vec![0.0; d.n_rows() * width];
    for (r, row) in d.rows.iter().enumerate() {
        let dst = &mut features[r * width..(r + 1) * width];
        for (idx, slots) in &lookup {
            dst[slots[row[*idx].as_str()]] = 1.0;
        }
    }
    let labels = d.labels().into_iter().map(f64::from).collect();
    (
        EncodedMatrix {
            features,
            labels,
            width,
        },
        encoder,
    )
}
