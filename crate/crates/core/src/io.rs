//! File formats: numeric CSV tables and the JSON model config.
//!
//! These parsers accept untrusted input and report malformed data as errors.

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use crate::error::{KcmError, Result};
use crate::estimation::NumericSearch;
use crate::kernels::KernelConfig;
use crate::models::{Dataset, ModelKind, ResidualModel};

/// A CSV file with a header row and one numeric observation per line.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub names: Vec<String>,
    pub values: DMatrix<f64>,
}

impl Table {
    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|c| c == name)
    }

    fn columns_where(&self, pred: impl Fn(&str) -> bool) -> Vec<usize> {
        self.names
            .iter()
            .enumerate()
            .filter(|(_, c)| pred(c))
            .map(|(j, _)| j)
            .collect()
    }
}

/// Parses a numeric CSV table. Every row must have as many fields as the
/// header, and every field must parse as a finite `f64`.
pub fn parse_table(bytes: &[u8]) -> Result<Table> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(bytes);
    let names: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if names.is_empty() || names.iter().all(|n| n.is_empty()) {
        return Err(KcmError::Parse("CSV header is empty".into()));
    }
    for (j, name) in names.iter().enumerate() {
        if names[..j].contains(name) {
            return Err(KcmError::Parse(format!("duplicate column name {name:?}")));
        }
    }
    let p = names.len();
    let mut flat = Vec::new();
    let mut rows = 0usize;
    for record in reader.records() {
        let record = record?;
        if record.len() != p {
            return Err(KcmError::Parse(format!(
                "line {}: expected {p} fields, found {}",
                rows + 2,
                record.len()
            )));
        }
        for (j, field) in record.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| {
                KcmError::Parse(format!(
                    "line {}: field {:?} is not a number",
                    rows + 2,
                    names[j]
                ))
            })?;
            if !v.is_finite() {
                return Err(KcmError::NumericInput(format!(
                    "line {}: field {:?} is not finite",
                    rows + 2,
                    names[j]
                )));
            }
            flat.push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(KcmError::Parse("CSV has no data rows".into()));
    }
    Ok(Table {
        names,
        values: DMatrix::from_row_slice(rows, p, &flat),
    })
}

/// Writes a table with full round-trip precision.
pub fn table_csv(names: &[String], values: &DMatrix<f64>) -> String {
    let mut out = names.join(",");
    out.push('\n');
    for i in 0..values.nrows() {
        let row: Vec<String> = values.row(i).iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
enum ColumnRef {
    Index(usize),
    Name(String),
}

/// JSON description of a residual model and its conditioning columns, e.g.
/// `{"kind":"regression","theta":[1,1],"x_columns":["x1","x2"]}`.
///
/// `x_columns` entries may be column names or 0-based indices. When omitted:
/// regression and quantile condition on every column but the first, simeq on
/// columns 2 and 3; iv_regression requires it.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    #[serde(default)]
    pub theta: Option<Vec<f64>>,
    #[serde(default)]
    pub tau: Option<f64>,
    #[serde(default)]
    x_columns: Option<Vec<ColumnRef>>,
    #[serde(default)]
    pub kernel: KernelConfig,
    /// Search box for numeric estimation, one `[lo, hi]` per parameter.
    #[serde(default)]
    pub bounds: Option<Vec<[f64; 2]>>,
}

impl ModelConfig {
    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let cfg: ModelConfig = serde_json::from_slice(bytes)?;
        cfg.kernel.validate()?;
        if let Some(theta) = &cfg.theta {
            if theta.is_empty() || theta.iter().any(|v| !v.is_finite()) {
                return Err(KcmError::Input(
                    "theta must be a non-empty list of finite numbers".into(),
                ));
            }
        }
        Ok(cfg)
    }

    /// Binds the table to the configured conditioning columns.
    pub fn dataset(&self, table: &Table) -> Result<Dataset> {
        let p = table.names.len();
        let x_index = match &self.x_columns {
            Some(cols) => cols
                .iter()
                .map(|c| match c {
                    ColumnRef::Index(j) if *j < p => Ok(*j),
                    ColumnRef::Index(j) => Err(KcmError::Input(format!(
                        "column index {j} out of range for {p} columns"
                    ))),
                    ColumnRef::Name(name) => table
                        .column_index(name)
                        .ok_or_else(|| KcmError::Input(format!("no column named {name:?}"))),
                })
                .collect::<Result<Vec<_>>>()?,
            None => match self.kind {
                ModelKind::Regression | ModelKind::Quantile => (1..p).collect(),
                ModelKind::Simeq => vec![2, 3],
                ModelKind::IvRegression => {
                    return Err(KcmError::Input(
                        "iv_regression needs explicit x_columns (the instruments)".into(),
                    ))
                }
            },
        };
        Dataset::with_names(table.values.clone(), x_index, table.names.clone())
    }

    /// The model at the configured `theta`.
    pub fn model(&self) -> Result<ResidualModel> {
        let theta = self
            .theta
            .as_ref()
            .ok_or_else(|| KcmError::Input("model config has no theta".into()))?;
        ResidualModel::new(self.kind, DVector::from_row_slice(theta), self.tau)
    }

    /// A model of the configured kind with θ = 0 of the dimension the data implies.
    pub fn template(&self, data: &Dataset) -> Result<ResidualModel> {
        let r = self.kind.theta_dim(data)?;
        ResidualModel::new(self.kind, DVector::zeros(r), self.tau)
    }

    pub fn search(&self) -> Option<NumericSearch> {
        self.bounds
            .as_ref()
            .map(|b| NumericSearch::new(b.iter().map(|&[lo, hi]| (lo, hi)).collect()))
    }
}

/// IV data from a table: outcome column `y`, treatments named `x*`,
/// instruments named `z*`.
#[derive(Debug, Clone, PartialEq)]
pub struct IvData {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub z: DMatrix<f64>,
}

impl IvData {
    pub fn from_table(table: &Table) -> Result<Self> {
        let y = table
            .column_index("y")
            .ok_or_else(|| KcmError::Input("IV data needs a column named y".into()))?;
        let xs = table.columns_where(|c| c.starts_with('x'));
        let zs = table.columns_where(|c| c.starts_with('z'));
        if xs.is_empty() || zs.is_empty() {
            return Err(KcmError::Input(
                "IV data needs treatment columns named x* and instrument columns named z*".into(),
            ));
        }
        Ok(IvData {
            x: table.values.select_columns(xs.iter()),
            y: table.values.column(y).into_owned(),
            z: table.values.select_columns(zs.iter()),
        })
    }
}

/// Query points for prediction: all columns named `x*`.
pub fn treatment_columns(table: &Table) -> Result<DMatrix<f64>> {
    let xs = table.columns_where(|c| c.starts_with('x'));
    if xs.is_empty() {
        return Err(KcmError::Input("query file needs columns named x*".into()));
    }
    Ok(table.values.select_columns(xs.iter()))
}
