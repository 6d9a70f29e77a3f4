//! Two-period panel data: types, CSV ingestion, and validation.
//!
//! A panel unit carries a treatment dose and an outcome at each of two
//! periods plus a fixed-length vector of baseline covariates. Treatment and
//! outcome *changes* are always derived from the period values, never stored.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One study unit observed at both periods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelUnit {
    /// Unique identifier.
    pub id: String,
    /// Baseline covariates, length K (shared across the dataset).
    pub x: Vec<f64>,
    /// Treatment dose at t = 0.
    pub z0: f64,
    /// Treatment dose at t = 1.
    pub z1: f64,
    /// Outcome at t = 0.
    pub y0: f64,
    /// Outcome at t = 1.
    pub y1: f64,
}

impl PanelUnit {
    /// Construct a unit, rejecting non-finite numeric fields.
    pub fn new(
        id: impl Into<String>,
        x: Vec<f64>,
        z0: f64,
        z1: f64,
        y0: f64,
        y1: f64,
    ) -> Result<Self> {
        let unit = PanelUnit {
            id: id.into(),
            x,
            z0,
            z1,
            y0,
            y1,
        };
        if let Some(field) = unit.first_non_finite_field() {
            return Err(Error::Validation(format!(
                "unit \"{}\" has non-finite value in {}",
                unit.id, field
            )));
        }
        Ok(unit)
    }

    /// Change in treatment dose, z1 - z0.
    pub fn delta_z(&self) -> f64 {
        self.z1 - self.z0
    }

    /// Change in outcome, y1 - y0.
    pub fn delta_y(&self) -> f64 {
        self.y1 - self.y0
    }

    /// Name of the first non-finite field, if any.
    pub(crate) fn first_non_finite_field(&self) -> Option<String> {
        for (k, v) in self.x.iter().enumerate() {
            if !v.is_finite() {
                return Some(format!("covariate {k}"));
            }
        }
        for (name, v) in [
            ("z0", self.z0),
            ("z1", self.z1),
            ("y0", self.y0),
            ("y1", self.y1),
        ] {
            if !v.is_finite() {
                return Some(name.to_string());
            }
        }
        None
    }
}

/// Treatment and outcome changes for a unit.
///
/// Errors if any of the four period values is non-finite.
pub fn derive_deltas(unit: &PanelUnit) -> Result<(f64, f64)> {
    for (name, v) in [
        ("z0", unit.z0),
        ("z1", unit.z1),
        ("y0", unit.y0),
        ("y1", unit.y1),
    ] {
        if !v.is_finite() {
            return Err(Error::Validation(format!(
                "unit \"{}\": {} is not finite",
                unit.id, name
            )));
        }
    }
    Ok((unit.delta_z(), unit.delta_y()))
}

/// An immutable collection of panel units sharing one covariate layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelDataset {
    pub units: Vec<PanelUnit>,
    pub covariate_names: Vec<String>,
}

impl PanelDataset {
    /// Build a dataset, enforcing uniform covariate dimension and unique ids.
    pub fn new(units: Vec<PanelUnit>, covariate_names: Vec<String>) -> Result<Self> {
        let k = covariate_names.len();
        let mut seen = HashSet::new();
        for u in &units {
            if u.x.len() != k {
                return Err(Error::Validation(format!(
                    "unit \"{}\" has {} covariates, expected {}",
                    u.id,
                    u.x.len(),
                    k
                )));
            }
            if !seen.insert(u.id.clone()) {
                return Err(Error::Validation(format!("duplicate unit id \"{}\"", u.id)));
            }
        }
        Ok(PanelDataset {
            units,
            covariate_names,
        })
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    /// Covariate dimension K.
    pub fn n_covariates(&self) -> usize {
        self.covariate_names.len()
    }
}

/// Column-name mapping for panel CSV files.
///
/// Every column not claimed by the five required roles is treated as a
/// covariate unless an explicit covariate list is given.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CsvSchema {
    pub id: String,
    pub z0: String,
    pub z1: String,
    pub y0: String,
    pub y1: String,
    /// When set, only these columns are used as covariates.
    pub covariates: Option<Vec<String>>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema {
            id: "id".into(),
            z0: "z0".into(),
            z1: "z1".into(),
            y0: "y0".into(),
            y1: "y1".into(),
            covariates: None,
        }
    }
}

/// Load a panel from a CSV file with a header row.
///
/// Covariate order follows header order. Rows are 1-indexed in error
/// messages (row 1 is the first data row).
pub fn load_panel(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<PanelDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path.as_ref())?;
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();

    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(name.to_string()))
    };
    let id_col = col(&schema.id)?;
    let z0_col = col(&schema.z0)?;
    let z1_col = col(&schema.z1)?;
    let y0_col = col(&schema.y0)?;
    let y1_col = col(&schema.y1)?;

    let required = [id_col, z0_col, z1_col, y0_col, y1_col];
    let covariate_cols: Vec<usize> = match &schema.covariates {
        Some(names) => names
            .iter()
            .map(|n| col(n))
            .collect::<Result<Vec<usize>>>()?,
        None => (0..headers.len())
            .filter(|i| !required.contains(i))
            .collect(),
    };
    let covariate_names: Vec<String> = covariate_cols
        .iter()
        .map(|&i| headers[i].clone())
        .collect();

    let mut units = Vec::new();
    for (row_idx, record) in reader.records().enumerate() {
        let record = record?;
        let row = row_idx + 1;
        let cell = |i: usize| -> Result<&str> {
            record.get(i).ok_or_else(|| Error::Parse {
                row,
                column: headers[i].clone(),
                message: "missing cell".into(),
            })
        };
        let num = |i: usize| -> Result<f64> {
            let raw = cell(i)?;
            raw.trim().parse::<f64>().map_err(|_| Error::Parse {
                row,
                column: headers[i].clone(),
                message: format!("cannot parse \"{raw}\" as a number"),
            })
        };

        let id = cell(id_col)?.to_string();
        let x = covariate_cols
            .iter()
            .map(|&i| num(i))
            .collect::<Result<Vec<f64>>>()?;
        units.push(PanelUnit {
            id,
            x,
            z0: num(z0_col)?,
            z1: num(z1_col)?,
            y0: num(y0_col)?,
            y1: num(y1_col)?,
        });
    }

    PanelDataset::new(units, covariate_names)
}

/// Write a panel to CSV with the default column layout
/// (id, covariates..., z0, z1, y0, y1). Finite doubles round-trip bit-exactly.
pub fn save_panel(ds: &PanelDataset, path: impl AsRef<Path>) -> Result<()> {
    let mut writer = csv::WriterBuilder::new()
        .quote_style(csv::QuoteStyle::NonNumeric)
        .from_path(path.as_ref())?;
    let mut header = vec!["id".to_string()];
    header.extend(ds.covariate_names.iter().cloned());
    header.extend(["z0", "z1", "y0", "y1"].map(String::from));
    writer.write_record(&header)?;
    for u in &ds.units {
        let mut record = vec![u.id.clone()];
        record.extend(u.x.iter().map(|v| format_f64(*v)));
        record.extend([u.z0, u.z1, u.y0, u.y1].map(format_f64));
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}

/// Shortest decimal representation that round-trips the double exactly.
pub(crate) fn format_f64(v: f64) -> String {
    let mut buf = ryu_like(v);
    if !buf.contains(['.', 'e', 'E', 'n', 'i', 'N', 'I']) {
        buf.push_str(".0");
    }
    buf
}

fn ryu_like(v: f64) -> String {
    // `{}` on f64 already produces the shortest round-trip form.
    format!("{v}")
}

/// Report-only summary of a panel dataset.
#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub n_units: usize,
    pub n_covariates: usize,
    pub delta_z_min: Option<f64>,
    pub delta_z_max: Option<f64>,
    /// Units whose treatment dose is exactly constant over time. The design
    /// does not require stayers; this is informational only.
    pub stayer_count: usize,
    /// (unit id, field) pairs holding NaN or infinity.
    pub non_finite: Vec<(String, String)>,
}

impl ValidationReport {
    pub fn has_flags(&self) -> bool {
        !self.non_finite.is_empty()
    }
}

/// Summarize a dataset: counts, delta-z range, stayers, non-finite flags.
pub fn validate_panel(ds: &PanelDataset) -> ValidationReport {
    let mut non_finite = Vec::new();
    let mut delta_z_min = None;
    let mut delta_z_max = None;
    let mut stayer_count = 0;
    for u in &ds.units {
        if let Some(field) = u.first_non_finite_field() {
            non_finite.push((u.id.clone(), field));
        }
        let dz = u.delta_z();
        if dz.is_finite() {
            delta_z_min = Some(delta_z_min.map_or(dz, |m: f64| m.min(dz)));
            delta_z_max = Some(delta_z_max.map_or(dz, |m: f64| m.max(dz)));
            if dz == 0.0 {
                stayer_count += 1;
            }
        }
    }
    ValidationReport {
        n_units: ds.len(),
        n_covariates: ds.n_covariates(),
        delta_z_min,
        delta_z_max,
        stayer_count,
        non_finite,
    }
}
