//! In-memory tables and their CSV interchange format.
//!
//! A [`Table`] is a small, immutable, typed grid: an ordered schema of
//! `(name, type)` pairs and rows that conform to it. Tables ingest from and
//! emit to RFC 4180 CSV with a header row; column types are inferred
//! (`int` → `float` → `string` fallback) unless a sidecar schema overrides
//! them — see [`Table::from_csv`] and [`parse_schema_sidecar`].

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Column types. Every cell in a column has exactly this type.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColType {
    Int,
    Float,
    String,
}

impl fmt::Display for ColType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ColType::Int => "int",
            ColType::Float => "float",
            ColType::String => "string",
        })
    }
}

/// A single cell. Floats are always finite.
#[derive(Clone, Debug, PartialEq)]
pub enum Value {
    Int(i64),
    Float(f64),
    Str(String),
}

impl Value {
    pub fn col_type(&self) -> ColType {
        match self {
            Value::Int(_) => ColType::Int,
            Value::Float(_) => ColType::Float,
            Value::Str(_) => ColType::String,
        }
    }

    /// Numeric view for filtering and aggregation.
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Int(n) => Some(*n as f64),
            Value::Float(x) => Some(*x),
            Value::Str(_) => None,
        }
    }

    /// Total order within a column (types are uniform per column; across
    /// types the order is Int < Float < Str for determinism).
    pub fn cmp_values(&self, other: &Value) -> std::cmp::Ordering {
        use std::cmp::Ordering;
        match (self, other) {
            (Value::Int(a), Value::Int(b)) => a.cmp(b),
            (Value::Float(a), Value::Float(b)) => a.total_cmp(b),
            (Value::Str(a), Value::Str(b)) => a.cmp(b),
            (Value::Int(a), Value::Float(b)) => (*a as f64).total_cmp(b),
            (Value::Float(a), Value::Int(b)) => a.total_cmp(&(*b as f64)),
            (Value::Str(_), _) => Ordering::Greater,
            (_, Value::Str(_)) => Ordering::Less,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(n) => write!(f, "{n}"),
            Value::Float(x) => write!(f, "{x}"),
            Value::Str(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TableError {
    #[error("malformed CSV at line {line}: {message}")]
    CsvMalformed { line: usize, message: String },
    #[error("column {column:?}: {message}")]
    TypeMismatch { column: String, message: String },
    #[error("duplicate column {column:?}")]
    DuplicateColumn { column: String },
    #[error("schema sidecar: {message}")]
    SchemaSidecar { message: String },
    #[error("row {row} has {got} cells, expected {want}")]
    RaggedRow { row: usize, got: usize, want: usize },
}

/// An immutable typed table.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    schema: Vec<(String, ColType)>,
    rows: Vec<Vec<Value>>,
}

impl Table {
    /// Builds a table, validating schema uniqueness and row conformance.
    pub fn new(schema: Vec<(String, ColType)>, rows: Vec<Vec<Value>>) -> Result<Table, TableError> {
        let mut seen = BTreeSet::new();
        for (name, _) in &schema {
            if !seen.insert(name.clone()) {
                return Err(TableError::DuplicateColumn { column: name.clone() });
            }
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != schema.len() {
                return Err(TableError::RaggedRow { row: i, got: row.len(), want: schema.len() });
            }
            for ((name, ty), cell) in schema.iter().zip(row) {
                if cell.col_type() != *ty {
                    return Err(TableError::TypeMismatch {
                        column: name.clone(),
                        message: format!("row {i} holds a {} cell in a {ty} column", cell.col_type()),
                    });
                }
                if let Value::Float(x) = cell {
                    if !x.is_finite() {
                        return Err(TableError::TypeMismatch {
                            column: name.clone(),
                            message: format!("row {i} holds a non-finite float"),
                        });
                    }
                }
            }
        }
        Ok(Table { schema, rows })
    }

    pub fn schema(&self) -> &[(String, ColType)] {
        &self.schema
    }

    pub fn rows(&self) -> &[Vec<Value>] {
        &self.rows
    }

    pub fn row_count(&self) -> usize {
        self.rows.len()
    }

    pub fn column_names(&self) -> Vec<&str> {
        self.schema.iter().map(|(n, _)| n.as_str()).collect()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.schema.iter().position(|(n, _)| n == name)
    }

    // -- CSV ----------------------------------------------------------------

    /// Parses RFC 4180 CSV with a header row. With `schema: None`, column
    /// types are inferred per column: all cells parse as `int` → int column;
    /// otherwise all parse as finite `float` → float column; otherwise
    /// string. An explicit sidecar schema overrides inference and makes
    /// unparseable cells an error instead of a fallback.
    pub fn from_csv(text: &str, schema: Option<&[(String, ColType)]>) -> Result<Table, TableError> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(false)
            .from_reader(text.as_bytes());
        let headers: Vec<String> = reader
            .headers()
            .map_err(|e| TableError::CsvMalformed { line: 1, message: e.to_string() })?
            .iter()
            .map(|h| h.to_string())
            .collect();
        if headers.is_empty() || headers.iter().all(|h| h.is_empty()) {
            return Err(TableError::CsvMalformed { line: 1, message: "empty header row".into() });
        }

        let mut raw_rows: Vec<Vec<String>> = Vec::new();
        for (i, record) in reader.records().enumerate() {
            let record = record.map_err(|e| TableError::CsvMalformed {
                line: i + 2,
                message: e.to_string(),
            })?;
            raw_rows.push(record.iter().map(|c| c.to_string()).collect());
        }

        let schema: Vec<(String, ColType)> = match schema {
            Some(given) => {
                if given.len() != headers.len() {
                    return Err(TableError::SchemaSidecar {
                        message: format!(
                            "sidecar lists {} columns, CSV header has {}",
                            given.len(),
                            headers.len()
                        ),
                    });
                }
                for ((name, _), header) in given.iter().zip(&headers) {
                    if name != header {
                        return Err(TableError::SchemaSidecar {
                            message: format!("sidecar column {name:?} does not match header {header:?}"),
                        });
                    }
                }
                given.to_vec()
            }
            None => headers
                .iter()
                .enumerate()
                .map(|(c, name)| (name.clone(), infer_type(raw_rows.iter().map(|r| r[c].as_str()))))
                .collect(),
        };

        let mut rows = Vec::with_capacity(raw_rows.len());
        for (i, raw) in raw_rows.into_iter().enumerate() {
            let mut row = Vec::with_capacity(schema.len());
            for ((name, ty), cell) in schema.iter().zip(raw) {
                row.push(parse_cell(&cell, *ty).ok_or_else(|| TableError::TypeMismatch {
                    column: name.clone(),
                    message: format!("row {i}: {cell:?} is not a valid {ty}"),
                })?);
            }
            rows.push(row);
        }
        Table::new(schema, rows)
    }

    /// Renders RFC 4180 CSV with a header row.
    pub fn to_csv(&self) -> String {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer
            .write_record(self.schema.iter().map(|(n, _)| n.as_str()))
            .expect("writing to a Vec cannot fail");
        for row in &self.rows {
            writer
                .write_record(row.iter().map(|v| v.to_string()))
                .expect("writing to a Vec cannot fail");
        }
        String::from_utf8(writer.into_inner().expect("no partial flush")).expect("CSV is UTF-8")
    }

    /// The sidecar JSON describing this table's schema.
    pub fn schema_sidecar(&self) -> String {
        let sidecar = Sidecar {
            columns: self
                .schema
                .iter()
                .map(|(name, ty)| SidecarColumn { name: name.clone(), ty: *ty })
                .collect(),
        };
        serde_json::to_string_pretty(&sidecar).expect("sidecar serializes")
    }
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    columns: Vec<SidecarColumn>,
}

#[derive(Serialize, Deserialize)]
struct SidecarColumn {
    name: String,
    #[serde(rename = "type")]
    ty: ColType,
}

/// Parses the sidecar schema JSON (`{"columns": [{"name": …, "type": …}]}`).
pub fn parse_schema_sidecar(json: &str) -> Result<Vec<(String, ColType)>, TableError> {
    let sidecar: Sidecar = serde_json::from_str(json)
        .map_err(|e| TableError::SchemaSidecar { message: e.to_string() })?;
    if sidecar.columns.is_empty() {
        return Err(TableError::SchemaSidecar { message: "no columns listed".into() });
    }
    Ok(sidecar.columns.into_iter().map(|c| (c.name, c.ty)).collect())
}

fn parse_int(cell: &str) -> Option<i64> {
    let t = cell.trim();
    if t.is_empty() {
        return None;
    }
    t.parse::<i64>().ok()
}

fn parse_float(cell: &str) -> Option<f64> {
    let t = cell.trim();
    if t.is_empty() {
        return None;
    }
    match t.parse::<f64>() {
        Ok(x) if x.is_finite() => Some(x),
        _ => None,
    }
}

fn infer_type<'a>(mut cells: impl Iterator<Item = &'a str>) -> ColType {
    let mut ty = ColType::Int;
    for cell in &mut cells {
        match ty {
            ColType::Int => {
                if parse_int(cell).is_none() {
                    ty = if parse_float(cell).is_some() { ColType::Float } else { ColType::String };
                }
            }
            ColType::Float => {
                if parse_float(cell).is_none() {
                    ty = ColType::String;
                }
            }
            ColType::String => {}
        }
        if ty == ColType::String {
            break;
        }
    }
    ty
}

fn parse_cell(cell: &str, ty: ColType) -> Option<Value> {
    match ty {
        ColType::Int => parse_int(cell).map(Value::Int),
        ColType::Float => parse_float(cell).map(Value::Float),
        ColType::String => Some(Value::Str(cell.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_types_are_inferred_with_int_float_string_fallback() {
        let t = Table::from_csv("age,amount,name\n18,10.5,ann\n30,2,bo\n", None).unwrap();
        assert_eq!(
            t.schema(),
            &[
                ("age".to_string(), ColType::Int),
                ("amount".to_string(), ColType::Float),
                ("name".to_string(), ColType::String),
            ]
        );
        assert_eq!(t.rows()[0][0], Value::Int(18));
        assert_eq!(t.rows()[0][1], Value::Float(10.5));
        assert_eq!(t.rows()[1][2], Value::Str("bo".into()));
    }

    #[test]
    fn a_single_odd_cell_demotes_the_whole_column() {
        let t = Table::from_csv("x\n1\n2\noops\n", None).unwrap();
        assert_eq!(t.schema()[0].1, ColType::String);
        assert_eq!(t.rows()[0][0], Value::Str("1".into()));
    }

    #[test]
    fn sidecar_schema_overrides_inference_and_rejects_bad_cells() {
        let schema = parse_schema_sidecar(
            r#"{"columns": [{"name": "zip", "type": "string"}, {"name": "n", "type": "float"}]}"#,
        )
        .unwrap();
        let t = Table::from_csv("zip,n\n02134,1\n10001,2\n", Some(&schema)).unwrap();
        assert_eq!(t.rows()[0][0], Value::Str("02134".into()));
        assert_eq!(t.rows()[0][1], Value::Float(1.0));

        let err = Table::from_csv("zip,n\n02134,abc\n", Some(&schema)).unwrap_err();
        assert!(matches!(err, TableError::TypeMismatch { column, .. } if column == "n"));
    }

    #[test]
    fn csv_round_trips_with_quoting() {
        let t = Table::from_csv("name,note\nann,\"hi, there\"\nbo,\"line\"\n", None).unwrap();
        let csv = t.to_csv();
        assert_eq!(csv, "name,note\nann,\"hi, there\"\nbo,line\n");
        let back = Table::from_csv(&csv, None).unwrap();
        assert_eq!(t, back);
    }

    #[test]
    fn non_finite_floats_are_not_floats() {
        let t = Table::from_csv("x\n1.5\ninf\n", None).unwrap();
        assert_eq!(t.schema()[0].1, ColType::String);
        let err = Table::new(
            vec![("x".into(), ColType::Float)],
            vec![vec![Value::Float(f64::NAN)]],
        )
        .unwrap_err();
        assert!(matches!(err, TableError::TypeMismatch { .. }));
    }

    #[test]
    fn structural_errors_are_reported() {
        assert!(matches!(
            Table::from_csv("a,a\n1,2\n", None).unwrap_err(),
            TableError::DuplicateColumn { .. }
        ));
        assert!(matches!(
            Table::from_csv("a,b\n1\n", None).unwrap_err(),
            TableError::CsvMalformed { line: 2, .. }
        ));
        assert!(matches!(
            Table::new(vec![("a".into(), ColType::Int)], vec![vec![]]).unwrap_err(),
            TableError::RaggedRow { .. }
        ));
    }

    #[test]
    fn sidecar_round_trips() {
        let t = Table::from_csv("age,name\n18,ann\n", None).unwrap();
        let sidecar = t.schema_sidecar();
        let schema = parse_schema_sidecar(&sidecar).unwrap();
        assert_eq!(schema, t.schema());
    }
}
