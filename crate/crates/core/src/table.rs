//! In-memory relational tables and their CSV representation.
//!
//! A [`Table`] is an ordered list of attributes plus row tuples of
//! [`CellValue`]s. Tables are immutable once built; every augmentation
//! produces a fresh table. Columns are typed by [`ColumnKind`]: a column is
//! numeric iff every non-missing cell is a finite number.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum CellValue {
    Number(f64),
    Text(String),
    Missing,
}

impl CellValue {
    /// Builds a numeric cell; NaN becomes `Missing` so that no NaN is ever stored.
    pub fn number(x: f64) -> Self {
        if x.is_nan() {
            CellValue::Missing
        } else {
            CellValue::Number(x)
        }
    }

    pub fn text(s: impl Into<String>) -> Self {
        CellValue::Text(s.into())
    }

    pub fn is_missing(&self) -> bool {
        matches!(self, CellValue::Missing)
    }

    /// Finite numeric value of the cell, parsing text cells when possible.
    pub fn as_number(&self) -> Option<f64> {
        match self {
            CellValue::Number(x) if x.is_finite() => Some(*x),
            CellValue::Text(s) => parse_finite(s),
            _ => None,
        }
    }
}

impl fmt::Display for CellValue {
    /// Canonical rendering shared by linearization and CSV output. Missing
    /// renders as `nan`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CellValue::Number(x) => f.write_str(&format_number(*x)),
            CellValue::Text(s) => f.write_str(s),
            CellValue::Missing => f.write_str("nan"),
        }
    }
}

/// Shortest decimal string that parses back to exactly `x`.
///
/// Plain positional notation is used for magnitudes in `[1e-5, 1e16)`;
/// anything outside that range switches to exponent form so a huge value
/// does not expand into hundreds of digits.
pub fn format_number(x: f64) -> String {
    let a = x.abs();
    if a == 0.0 || (1e-5..1e16).contains(&a) || !a.is_finite() {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

fn parse_finite(s: &str) -> Option<f64> {
    // Rust's parser also accepts "inf"/"nan"; those are not finite numbers.
    s.parse::<f64>().ok().filter(|x| x.is_finite())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ColumnKind {
    Numeric,
    Categorical,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    name: String,
    attributes: Vec<String>,
    rows: Vec<Vec<CellValue>>,
    source_dataset: String,
}

impl Table {
    /// Validates the row/attribute invariants and builds the table.
    pub fn new(
        name: impl Into<String>,
        attributes: Vec<String>,
        rows: Vec<Vec<CellValue>>,
        source_dataset: impl Into<String>,
    ) -> Result<Self> {
        let mut seen = HashSet::with_capacity(attributes.len());
        for a in &attributes {
            if !seen.insert(a.as_str()) {
                return Err(Error::DuplicateAttribute(a.clone()));
            }
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != attributes.len() {
                return Err(Error::RaggedRow {
                    row: i,
                    expected: attributes.len(),
                    found: row.len(),
                });
            }
            if row.iter().any(|c| matches!(c, CellValue::Number(x) if x.is_nan())) {
                return Err(Error::InvalidTable(format!("NaN stored in row {i}")));
            }
        }
        Ok(Table {
            name: name.into(),
            attributes,
            rows,
            source_dataset: source_dataset.into(),
        })
    }

    /// Builds a table from columns given as `(attribute, cells)` pairs.
    pub fn from_columns(
        name: impl Into<String>,
        columns: Vec<(String, Vec<CellValue>)>,
        source_dataset: impl Into<String>,
    ) -> Result<Self> {
        let height = columns.first().map_or(0, |(_, c)| c.len());
        if let Some((a, c)) = columns.iter().find(|(_, c)| c.len() != height) {
            return Err(Error::InvalidTable(format!(
                "column `{a}` has {} cells, expected {height}",
                c.len()
            )));
        }
        let attributes: Vec<String> = columns.iter().map(|(a, _)| a.clone()).collect();
        let mut rows: Vec<Vec<CellValue>> =
            (0..height).map(|_| Vec::with_capacity(columns.len())).collect();
        for (_, cells) in columns {
            for (row, cell) in rows.iter_mut().zip(cells) {
                row.push(cell);
            }
        }
        Table::new(name, attributes, rows, source_dataset)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn attributes(&self) -> &[String] {
        &self.attributes
    }

    pub fn rows(&self) -> &[Vec<CellValue>] {
        &self.rows
    }

    pub fn source_dataset(&self) -> &str {
        &self.source_dataset
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn num_columns(&self) -> usize {
        self.attributes.len()
    }

    pub fn attribute_index(&self, attribute: &str) -> Result<usize> {
        self.attributes
            .iter()
            .position(|a| a == attribute)
            .ok_or_else(|| Error::UnknownAttribute(attribute.to_string()))
    }

    pub fn column(&self, index: usize) -> impl Iterator<Item = &CellValue> + '_ {
        self.rows.iter().map(move |r| &r[index])
    }

    /// Owned copy of every column as `(attribute, cells)`.
    pub fn columns(&self) -> Vec<(String, Vec<CellValue>)> {
        self.attributes
            .iter()
            .enumerate()
            .map(|(j, a)| (a.clone(), self.column(j).cloned().collect()))
            .collect()
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn infer_column_kind(&self, attribute: &str) -> Result<ColumnKind> {
        let j = self.attribute_index(attribute)?;
        Ok(self.column_kind(j))
    }

    pub fn column_kind(&self, index: usize) -> ColumnKind {
        kind_of(self.column(index))
    }

    pub fn column_kinds(&self) -> Vec<ColumnKind> {
        (0..self.num_columns()).map(|j| self.column_kind(j)).collect()
    }

    /// Rebuilds the table with a new row set; attributes and tags are kept.
    pub(crate) fn with_rows(&self, rows: Vec<Vec<CellValue>>) -> Table {
        Table {
            name: self.name.clone(),
            attributes: self.attributes.clone(),
            rows,
            source_dataset: self.source_dataset.clone(),
        }
    }
}

fn kind_of<'a>(cells: impl Iterator<Item = &'a CellValue>) -> ColumnKind {
    let mut any = false;
    for c in cells {
        match c {
            CellValue::Missing => {}
            other => {
                if other.as_number().is_none() {
                    return ColumnKind::Categorical;
                }
                any = true;
            }
        }
    }
    if any {
        ColumnKind::Numeric
    } else {
        ColumnKind::Categorical
    }
}

/// Reads a comma-separated file with a mandatory header row.
///
/// Empty fields become [`CellValue::Missing`]. Each column is typed once all
/// rows are read: numeric columns hold `Number` cells, categorical columns
/// keep their raw text.
pub fn load_table(
    path: impl AsRef<Path>,
    name: impl Into<String>,
    dataset_tag: impl Into<String>,
) -> Result<Table> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(std::io::BufReader::new(file));

    let mut records = reader.records();
    let header = match records.next() {
        Some(r) => r?,
        None => return Err(Error::EmptyFile(path.to_path_buf())),
    };
    let attributes: Vec<String> = header.iter().map(str::to_string).collect();

    let mut raw: Vec<Vec<Option<String>>> = Vec::new();
    for (i, rec) in records.enumerate() {
        let rec = rec?;
        if rec.len() != attributes.len() {
            return Err(Error::RaggedRow {
                row: i + 1,
                expected: attributes.len(),
                found: rec.len(),
            });
        }
        raw.push(
            rec.iter()
                .map(|f| (!f.is_empty()).then(|| f.to_string()))
                .collect(),
        );
    }

    let numeric: Vec<bool> = (0..attributes.len())
        .map(|j| {
            let mut any = false;
            for row in &raw {
                if let Some(s) = &row[j] {
                    if parse_finite(s).is_none() {
                        return false;
                    }
                    any = true;
                }
            }
            any
        })
        .collect();

    let rows = raw
        .into_iter()
        .map(|row| {
            row.into_iter()
                .zip(&numeric)
                .map(|(field, &is_num)| match field {
                    None => CellValue::Missing,
                    Some(s) if is_num => CellValue::Number(parse_finite(&s).unwrap_or_default()),
                    Some(s) => CellValue::Text(s),
                })
                .collect()
        })
        .collect();

    Table::new(name, attributes, rows, dataset_tag)
}

/// Writes the table as CSV; Missing cells become empty fields.
pub fn save_table(table: &Table, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = csv::Writer::from_writer(std::io::BufWriter::new(file));
    writer.write_record(table.attributes())?;
    for row in table.rows() {
        writer.write_record(row.iter().map(|c| match c {
            CellValue::Missing => String::new(),
            other => other.to_string(),
        }))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
