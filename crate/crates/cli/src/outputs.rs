//! File layout, atomic writes, and the CSV/JSON output formats.

use mixselect::dgp::{DgpId, Scenario, SimDataset};
use mixselect::error::Result;
use mixselect::method::{MethodKind, MethodOutput};
use mixselect::metrics::MetricsRow;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Shortest round-trip representation (deterministic).
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        String::new()
    } else {
        format!("{x}")
    }
}

/// 15-significant-digit representation used by data exports.
pub fn fmt_sig15(x: f64) -> String {
    format!("{x:.14e}")
}

/// Write via a temp file and rename so readers never see partial output.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, contents)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub struct OutputLayout {
    pub root: PathBuf,
}

impl OutputLayout {
    pub fn new(root: &Path) -> Self {
        Self {
            root: root.to_path_buf(),
        }
    }

    pub fn copula_model(&self) -> PathBuf {
        self.root.join("copula/model.json")
    }

    pub fn copula_comparison(&self) -> PathBuf {
        self.root.join("copula/comparison.json")
    }

    pub fn copula_panel(&self) -> PathBuf {
        self.root.join("copula/panel.csv")
    }

    pub fn heatmap(&self, name: &str) -> PathBuf {
        self.root.join(format!("copula/heatmap_{name}.svg"))
    }

    pub fn dataset(&self, dgp: DgpId, rep: usize) -> PathBuf {
        self.root.join(format!("datasets/{}/rep{rep:03}.csv", dgp.id()))
    }

    pub fn result(&self, scenario: &str, method: MethodKind, rep: usize) -> PathBuf {
        self.root
            .join(format!("results/{scenario}/{}/rep{rep:03}.json", method.id()))
    }

    pub fn trace(&self, scenario: &str, method: MethodKind, rep: usize) -> PathBuf {
        self.root
            .join(format!("results/{scenario}/{}/rep{rep:03}_trace.csv", method.id()))
    }

    pub fn selection_metrics(&self) -> PathBuf {
        self.root.join("metrics/selection.csv")
    }

    pub fn curve_metrics(&self) -> PathBuf {
        self.root.join("metrics/curves.csv")
    }

    pub fn plot(&self, name: &str) -> PathBuf {
        self.root.join(format!("plots/{name}.svg"))
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.json")
    }
}

/// One stored per (scenario, replication, method).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MethodRecord {
    pub scenario: String,
    pub rep: usize,
    pub method: MethodKind,
    pub truth: Vec<bool>,
    pub output: MethodOutput,
}

pub fn write_record(path: &Path, record: &MethodRecord) -> Result<()> {
    write_atomic(path, &serde_json::to_string(record)?)
}

pub fn read_record(path: &Path) -> Result<MethodRecord> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

/// Dataset CSV: metadata comment lines, a header, then the data rows.
pub fn dataset_csv(data: &SimDataset, scenario: &Scenario, rep: usize) -> String {
    let mut out = String::new();
    let truth_names: Vec<&str> = data
        .names
        .iter()
        .zip(&data.truth)
        .filter(|(_, &t)| t)
        .map(|(n, _)| n.as_str())
        .collect();
    out.push_str(&format!("# dgp={}\n", scenario.dgp.id()));
    out.push_str(&format!("# rep={rep}\n"));
    out.push_str(&format!("# truth={}\n", truth_names.join(",")));
    out.push_str(&format!("# sigma={}\n", fmt_sig15(data.sigma)));
    out.push_str(&data.names.join(","));
    out.push_str(",y\n");
    for i in 0..data.n() {
        let mut row: Vec<String> = (0..data.j()).map(|j| fmt_sig15(data.x[[i, j]])).collect();
        row.push(fmt_sig15(data.y[i]));
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn selection_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from("scenario,method,metric,mean,median,q1,q3,n_defined\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.scenario,
            r.method,
            r.metric,
            r.mean.map(fmt_f64).unwrap_or_default(),
            r.median.map(fmt_f64).unwrap_or_default(),
            r.q1.map(fmt_f64).unwrap_or_default(),
            r.q3.map(fmt_f64).unwrap_or_default(),
            r.n_defined
        ));
    }
    out
}

/// Across-replication curve metrics (one value per row).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurveMetricRow {
    pub scenario: String,
    pub method: String,
    pub metric: String,
    pub value: f64,
    pub n_points: usize,
}

pub fn curves_csv(rows: &[CurveMetricRow]) -> String {
    let mut out = String::from("scenario,method,metric,value,n_points\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.scenario,
            r.method,
            r.metric,
            fmt_f64(r.value),
            r.n_points
        ));
    }
    out
}

pub fn trace_csv(traces: &mixselect::method::Traces) -> String {
    let mut out = traces.names.join(",");
    out.push('\n');
    for row in &traces.draws {
        let cells: Vec<String> = row.iter().map(|v| fmt_sig15(*v)).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fmt_round_trips() {
        for x in [0.1, -3.25e-7, 123456.789, f64::MIN_POSITIVE] {
            assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
        }
        // 15 significant digits
        for x in [0.1f64, -3.25e-7, 123456.789] {
            let back = fmt_sig15(x).parse::<f64>().unwrap();
            assert!(((back - x) / x).abs() < 1e-14);
        }
        assert_eq!(fmt_f64(f64::NAN), "");
    }

    #[test]
    fn atomic_write_replaces_contents() {
        let dir = std::env::temp_dir().join(format!("mixsel-out-{}", std::process::id()));
        let path = dir.join("deep/nested/file.txt");
        write_atomic(&path, "one").unwrap();
        write_atomic(&path, "two").unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "two");
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
