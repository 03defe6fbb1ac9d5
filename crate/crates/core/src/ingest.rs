//! Raw exposure tables and the preprocessing pipeline: below-LOD
//! imputation, creatinine correction, log-standardisation, and the Spearman
//! correlation of the resulting panel.

use crate::error::{Error, Result};
use crate::stats;
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Concentrations are ug/L and creatinine mg/dL; ug/g creatinine needs
/// the x100 conversion. Exposed so other unit systems can override it.
pub const CREATININE_UNIT_FACTOR: f64 = 100.0;

/// Column map for one chemical in the raw CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChemicalSchema {
    /// Short chemical label used throughout the pipeline.
    pub name: String,
    /// CSV column holding the concentration (ug/L).
    pub concentration: String,
    /// Optional CSV column flagging below-LOD measurements (0/1).
    #[serde(default)]
    pub below_lod_flag: Option<String>,
    /// Optional CSV column holding the per-row LOD (ug/L).
    #[serde(default)]
    pub lod_column: Option<String>,
    /// Fixed maximum LOD across surveys, if not carried per row.
    #[serde(default)]
    pub max_lod: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TableSchema {
    /// CSV column holding urinary creatinine (mg/dL).
    pub creatinine: String,
    pub chemicals: Vec<ChemicalSchema>,
}

impl TableSchema {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Parsed raw table, one row per participant.
#[derive(Debug, Clone)]
pub struct RawExposureTable {
    pub names: Vec<String>,
    /// N x J concentrations (ug/L).
    pub concentrations: Array2<f64>,
    /// N creatinine values (mg/dL).
    pub creatinine: Vec<f64>,
    /// N x J below-LOD flags.
    pub below_lod: Array2<bool>,
    /// Per-chemical maximum LOD across the table, if known.
    pub max_lod: Vec<Option<f64>>,
}

impl RawExposureTable {
    pub fn n(&self) -> usize {
        self.creatinine.len()
    }

    pub fn j(&self) -> usize {
        self.names.len()
    }
}

/// Standardised exposure panel: each column has mean 0 and sd 1 (N-1
/// denominator) on the log creatinine-corrected scale.
#[derive(Debug, Clone)]
pub struct ExposurePanel {
    pub x: Array2<f64>,
    pub names: Vec<String>,
}

impl ExposurePanel {
    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn j(&self) -> usize {
        self.x.ncols()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.x.column(j).to_vec()
    }

    /// Column index by chemical name.
    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Re-centre and re-scale every column to mean 0 / sd 1.
    pub fn standardize_columns(x: &mut Array2<f64>) -> Result<()> {
        for mut col in x.columns_mut() {
            let v: Vec<f64> = col.to_vec();
            let m = stats::mean(&v);
            let s = stats::sd(&v);
            if s <= 0.0 {
                return Err(Error::Domain("degenerate column: zero variance".into()));
            }
            col.mapv_inplace(|x| (x - m) / s);
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        for (j, col) in self.x.columns().into_iter().enumerate() {
            let v: Vec<f64> = col.to_vec();
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Domain(format!("column {j} has non-finite entries")));
            }
            if stats::mean(&v).abs() > 1e-9 || (stats::sd(&v) - 1.0).abs() > 1e-9 {
                return Err(Error::Domain(format!(
                    "column {j} is not standardised (mean {:e}, sd {:e})",
                    stats::mean(&v),
                    stats::sd(&v)
                )));
            }
        }
        Ok(())
    }
}

/// Symmetric correlation matrix with unit diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrMatrix(pub Array2<f64>);

impl CorrMatrix {
    pub fn j(&self) -> usize {
        self.0.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let r = &self.0;
        if r.nrows() != r.ncols() {
            return Err(Error::Domain("correlation matrix must be square".into()));
        }
        for i in 0..r.nrows() {
            if (r[[i, i]] - 1.0).abs() > 1e-12 {
                return Err(Error::Domain("correlation diagonal must be 1".into()));
            }
            for j in 0..i {
                if (r[[i, j]] - r[[j, i]]).abs() > 1e-12 {
                    return Err(Error::Domain("correlation matrix must be symmetric".into()));
                }
            }
        }
        if crate::linalg::min_eigenvalue(r) < -1e-10 {
            return Err(Error::Domain(
                "correlation matrix has a negative eigenvalue".into(),
            ));
        }
        Ok(())
    }
}

fn parse_cell(raw: &str, row: usize, column: &str) -> Result<f64> {
    raw.trim().parse::<f64>().map_err(|e| Error::Parse {
        row,
        column: column.to_string(),
        message: e.to_string(),
    })
}

fn parse_flag(raw: &str, row: usize, column: &str) -> Result<bool> {
    match raw.trim() {
        "0" | "false" | "FALSE" | "" => Ok(false),
        "1" | "true" | "TRUE" => Ok(true),
        other => Err(Error::Parse {
            row,
            column: column.to_string(),
            message: format!("expected 0/1 flag, found '{other}'"),
        }),
    }
}

/// Load a raw exposure table from CSV following `schema`.
pub fn load_exposure_table(path: &Path, schema: &TableSchema) -> Result<RawExposureTable> {
    let mut names: Vec<String> = Vec::with_capacity(schema.chemicals.len());
    for c in &schema.chemicals {
        if names.contains(&c.name) {
            return Err(Error::Schema(format!("duplicate chemical name '{}'", c.name)));
        }
        names.push(c.name.clone());
    }

    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let headers = reader.headers()?.clone();
    let col_index = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("missing column '{name}'")))
    };

    let creat_idx = col_index(&schema.creatinine)?;
    let mut conc_idx = Vec::new();
    let mut flag_idx = Vec::new();
    let mut lod_idx = Vec::new();
    for c in &schema.chemicals {
        conc_idx.push(col_index(&c.concentration)?);
        flag_idx.push(match &c.below_lod_flag {
            Some(col) => Some(col_index(col)?),
            None => None,
        });
        lod_idx.push(match &c.lod_column {
            Some(col) => Some(col_index(col)?),
            None => None,
        });
    }

    let j = names.len();
    let mut conc_rows: Vec<f64> = Vec::new();
    let mut flag_rows: Vec<bool> = Vec::new();
    let mut creatinine = Vec::new();
    let mut lod_max: Vec<Option<f64>> = schema.chemicals.iter().map(|c| c.max_lod).collect();

    for (r, record) in reader.records().enumerate() {
        let record = record?;
        let row = r + 1;
        creatinine.push(parse_cell(&record[creat_idx], row, &schema.creatinine)?);
        for (k, chem) in schema.chemicals.iter().enumerate() {
            let value = parse_cell(&record[conc_idx[k]], row, &chem.concentration)?;
            let flagged = match flag_idx[k] {
                Some(fi) => parse_flag(&record[fi], row, chem.below_lod_flag.as_ref().unwrap())?,
                None => false,
            };
            if !flagged && value <= 0.0 {
                return Err(Error::Domain(format!(
                    "non-positive concentration {value} at row {row}, chemical '{}', not flagged below LOD",
                    chem.name
                )));
            }
            if let Some(li) = lod_idx[k] {
                let lod = parse_cell(&record[li], row, chem.lod_column.as_ref().unwrap())?;
                lod_max[k] = Some(lod_max[k].map_or(lod, |m| m.max(lod)));
            }
            conc_rows.push(value);
            flag_rows.push(flagged);
        }
    }

    let n = creatinine.len();
    if n == 0 {
        return Err(Error::Schema("table has no data rows".into()));
    }
    Ok(RawExposureTable {
        names,
        concentrations: Array2::from_shape_vec((n, j), conc_rows)
            .expect("row-major concentration buffer"),
        creatinine,
        below_lod: Array2::from_shape_vec((n, j), flag_rows).expect("row-major flag buffer"),
        max_lod: lod_max,
    })
}

/// Replace every below-LOD cell with max-LOD / sqrt(2).
pub fn impute_below_lod(table: &RawExposureTable) -> Result<RawExposureTable> {
    let mut out = table.clone();
    for j in 0..table.j() {
        let imputed = match table.max_lod[j] {
            Some(lod) => lod / std::f64::consts::SQRT_2,
            None => {
                if table.below_lod.column(j).iter().any(|&f| f) {
                    return Err(Error::Config(format!(
                        "chemical '{}' has below-LOD cells but no LOD",
                        table.names[j]
                    )));
                }
                continue;
            }
        };
        for i in 0..table.n() {
            if table.below_lod[[i, j]] {
                out.concentrations[[i, j]] = imputed;
            }
        }
    }
    Ok(out)
}

/// Creatinine-correct, log-transform, and standardise the table.
pub fn standardize_panel(table: &RawExposureTable) -> Result<ExposurePanel> {
    standardize_panel_with(table, CREATININE_UNIT_FACTOR)
}

pub fn standardize_panel_with(table: &RawExposureTable, unit_factor: f64) -> Result<ExposurePanel> {
    let n = table.n();
    let j = table.j();
    for (i, &c) in table.creatinine.iter().enumerate() {
        if c <= 0.0 {
            return Err(Error::Domain(format!(
                "non-positive creatinine {c} at row {}",
                i + 1
            )));
        }
    }
    let mut x = Array2::<f64>::zeros((n, j));
    for i in 0..n {
        for k in 0..j {
            let conc = table.concentrations[[i, k]];
            if conc <= 0.0 {
                return Err(Error::Domain(format!(
                    "non-positive concentration at row {}, chemical '{}' after imputation",
                    i + 1,
                    table.names[k]
                )));
            }
            x[[i, k]] = (conc * unit_factor / table.creatinine[i]).ln();
        }
    }
    ExposurePanel::standardize_columns(&mut x)?;
    Ok(ExposurePanel {
        x,
        names: table.names.clone(),
    })
}

/// Spearman rank correlation matrix of the panel (average ranks for ties).
pub fn spearman_corr(panel: &ExposurePanel) -> Result<CorrMatrix> {
    if panel.n() < 3 {
        return Err(Error::Domain("need at least 3 rows for correlations".into()));
    }
    let j = panel.j();
    let ranks: Vec<Vec<f64>> = (0..j).map(|k| stats::midranks(&panel.column(k))).collect();
    let mut r = Array2::<f64>::eye(j);
    for a in 0..j {
        for b in 0..a {
            let c = stats::pearson(&ranks[a], &ranks[b]);
            r[[a, b]] = c;
            r[[b, a]] = c;
        }
    }
    Ok(CorrMatrix(r))
}

/// Write the panel as CSV with 15 significant digits.
pub fn export_panel_csv(panel: &ExposurePanel, path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str(&panel.names.join(","));
    out.push('\n');
    for i in 0..panel.n() {
        let row: Vec<String> = (0..panel.j())
            .map(|j| format!("{:.14e}", panel.x[[i, j]]))
            .collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}
