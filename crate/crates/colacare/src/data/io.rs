//! Dataset file format.
//!
//! JSON with top-level `{"features": [...], "patients": [...]}`. Missing
//! cells are `null` with `mask` false; a number with `mask` false means the
//! cell was imputed, so saved preprocessed datasets round-trip too.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{FeatureSpec, PatientRecord};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
struct DatasetFile {
    features: Vec<FeatureSpec>,
    patients: Vec<PatientFile>,
}

#[derive(Serialize, Deserialize)]
struct PatientFile {
    id: String,
    #[serde(rename = "static", default)]
    static_info: BTreeMap<String, serde_json::Value>,
    series: Vec<Vec<Option<f64>>>,
    mask: Vec<Vec<bool>>,
    label: u8,
}

/// Loads and validates a dataset file.
pub fn load_dataset(path: &Path) -> Result<(Vec<FeatureSpec>, Vec<PatientRecord>)> {
    let text = std::fs::read_to_string(path)?;
    let file: DatasetFile = serde_json::from_str(&text)
        .map_err(|e| Error::schema(&path.display().to_string(), e.to_string()))?;

    let f = file.features.len();
    let mut names = std::collections::HashSet::new();
    for spec in &file.features {
        if !names.insert(spec.name.as_str()) {
            return Err(Error::schema(
                &path.display().to_string(),
                format!("duplicate feature name '{}'", spec.name),
            ));
        }
    }

    let mut records = Vec::with_capacity(file.patients.len());
    for p in file.patients {
        if p.label > 1 {
            return Err(Error::validation(&p.id, format!("label must be 0 or 1, got {}", p.label)));
        }
        if p.series.is_empty() {
            return Err(Error::validation(&p.id, "record must have at least one visit"));
        }
        if p.series.len() != p.mask.len() {
            return Err(Error::validation(
                &p.id,
                format!("series has {} visits but mask has {}", p.series.len(), p.mask.len()),
            ));
        }
        let mut series = Vec::with_capacity(p.series.len());
        for (t, (row, mrow)) in p.series.iter().zip(&p.mask).enumerate() {
            if row.len() != f {
                return Err(Error::validation(
                    &p.id,
                    format!("visit {t} has {} values, dataset defines {f} features", row.len()),
                ));
            }
            if mrow.len() != f {
                return Err(Error::validation(
                    &p.id,
                    format!("visit {t} mask has {} entries, expected {f}", mrow.len()),
                ));
            }
            let mut vals = Vec::with_capacity(f);
            for (j, (cell, &observed)) in row.iter().zip(mrow).enumerate() {
                match cell {
                    Some(v) => vals.push(*v),
                    None if observed => {
                        return Err(Error::validation(
                            &p.id,
                            format!("visit {t} feature {j} is null but marked observed"),
                        ));
                    }
                    None => vals.push(f64::NAN),
                }
            }
            series.push(vals);
        }
        records.push(PatientRecord {
            patient_id: p.id,
            static_info: p.static_info,
            series,
            mask: p.mask,
            label: p.label,
        });
    }
    Ok((file.features, records))
}

/// Writes a dataset file; NaN cells become `null`.
pub fn save_dataset(
    path: &Path,
    specs: &[FeatureSpec],
    records: &[PatientRecord],
) -> Result<()> {
    let patients = records
        .iter()
        .map(|r| PatientFile {
            id: r.patient_id.clone(),
            static_info: r.static_info.clone(),
            series: r
                .series
                .iter()
                .map(|row| row.iter().map(|&v| if v.is_nan() { None } else { Some(v) }).collect())
                .collect(),
            mask: r.mask.clone(),
            label: r.label,
        })
        .collect();
    let file = DatasetFile { features: specs.to_vec(), patients };
    let text = serde_json::to_string_pretty(&file)?;
    std::fs::write(path, text)?;
    Ok(())
}
