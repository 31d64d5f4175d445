//! On-disk formats: per-population CSV files, the dataset manifest, matrix
//! CSVs and JSON documents. Floats are written with 17 significant digits so
//! that write -> read -> write is byte-identical.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{Population, SurvivalDataset};
use crate::error::{LrCoxError, Result};
use crate::matrix::CoefficientMatrix;

pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

fn io_err(path: &Path, source: std::io::Error) -> LrCoxError {
    LrCoxError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn csv_err(path: &Path, source: csv::Error) -> LrCoxError {
    LrCoxError::Csv {
        path: path.display().to_string(),
        source,
    }
}

/// Writes to a sibling temporary file, then renames it into place.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| io_err(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| LrCoxError::Json {
        path: path.display().to_string(),
        source: e,
    })?;
    text.push('\n');
    atomic_write(path, text.as_bytes())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| LrCoxError::Json {
        path: path.display().to_string(),
        source: e,
    })
}

fn csv_bytes(header: &[String], rows: impl Iterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let fail = |e: csv::Error| csv_err(Path::new("<buffer>"), e);
    w.write_record(header).map_err(fail)?;
    for row in rows {
        w.write_record(&row).map_err(fail)?;
    }
    w.into_inner()
        .map_err(|e| csv_err(Path::new("<buffer>"), e.into_error().into()))
}

fn parse_float(path: &Path, line: usize, field: &str, raw: &str) -> Result<f64> {
    raw.trim().parse::<f64>().map_err(|_| {
        LrCoxError::Data(format!(
            "{}: line {line}: `{field}` value `{raw}` is not a number",
            path.display()
        ))
    })
}

/// Header `time,status,<predictors>`, one row per subject.
pub fn write_population_csv(path: &Path, pop: &Population, predictors: &[String]) -> Result<()> {
    if predictors.len() != pop.p() {
        return Err(LrCoxError::DimensionMismatch(format!(
            "{} predictor names for {} columns",
            predictors.len(),
            pop.p()
        )));
    }
    let mut header = vec!["time".to_string(), "status".to_string()];
    header.extend(predictors.iter().cloned());
    let rows = (0..pop.n()).map(|i| {
        let mut row = vec![
            format_float(pop.time()[i]),
            if pop.status()[i] { "1" } else { "0" }.to_string(),
        ];
        row.extend(pop.x().row(i).iter().map(|&v| format_float(v)));
        row
    });
    atomic_write(path, &csv_bytes(&header, rows)?)
}

/// Reads a population CSV and returns it with its predictor names.
pub fn read_population_csv(path: &Path, name: &str) -> Result<(Population, Vec<String>)> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| csv_err(path, e))?
        .iter()
        .map(|s| s.trim().to_string())
        .collect();
    if header.len() < 3 || header[0] != "time" || header[1] != "status" {
        return Err(LrCoxError::Data(format!(
            "{}: header must be `time,status,<predictors>`",
            path.display()
        )));
    }
    let predictors = header[2..].to_vec();
    let p = predictors.len();
    let mut time = Vec::new();
    let mut status = Vec::new();
    let mut values = Vec::new();
    for (k, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = k + 2;
        if rec.len() != p + 2 {
            return Err(LrCoxError::Data(format!(
                "{}: line {line}: expected {} fields, found {}",
                path.display(),
                p + 2,
                rec.len()
            )));
        }
        time.push(parse_float(path, line, "time", &rec[0])?);
        status.push(match rec[1].trim() {
            "1" => true,
            "0" => false,
            other => {
                return Err(LrCoxError::Data(format!(
                    "{}: line {line}: status must be 0 or 1, found `{other}`",
                    path.display()
                )))
            }
        });
        for (c, raw) in rec.iter().skip(2).enumerate() {
            values.push(parse_float(path, line, &predictors[c], raw)?);
        }
    }
    let n = time.len();
    let x = DMatrix::from_row_slice(n, p, &values);
    let pop = Population::new(name, time, status, x)
        .map_err(|e| LrCoxError::Data(format!("{}: {e}", path.display())))?;
    Ok((pop, predictors))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub train: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub populations: Vec<ManifestEntry>,
    pub predictors: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataSplit {
    Train,
    Validation,
    Test,
}

impl DataSplit {
    pub fn label(self) -> &'static str {
        match self {
            DataSplit::Train => "train",
            DataSplit::Validation => "validation",
            DataSplit::Test => "test",
        }
    }
}

/// Lists positions where two predictor-name lists differ.
pub fn predictor_diff(expected: &[String], found: &[String]) -> String {
    let mut parts = Vec::new();
    if expected.len() != found.len() {
        parts.push(format!("{} expected vs {} found", expected.len(), found.len()));
    }
    for (i, (a, b)) in expected.iter().zip(found).enumerate() {
        if a != b {
            parts.push(format!("column {}: expected `{a}`, found `{b}`", i + 1));
        }
        if parts.len() >= 10 {
            parts.push("...".into());
            break;
        }
    }
    parts.join("; ")
}

/// A manifest and the directory its relative paths resolve against.
#[derive(Debug, Clone)]
pub struct LoadedManifest {
    pub manifest: Manifest,
    pub base: PathBuf,
}

impl LoadedManifest {
    pub fn read(path: &Path) -> Result<Self> {
        let manifest: Manifest = read_json(path)?;
        if manifest.populations.is_empty() {
            return Err(LrCoxError::Data(format!("{}: no populations", path.display())));
        }
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { manifest, base })
    }

    pub fn has_split(&self, split: DataSplit) -> bool {
        self.manifest.populations.iter().all(|e| match split {
            DataSplit::Train => true,
            DataSplit::Validation => e.validation.is_some(),
            DataSplit::Test => e.test.is_some(),
        })
    }

    pub fn load(&self, split: DataSplit) -> Result<SurvivalDataset> {
        let mut pops = Vec::new();
        for e in &self.manifest.populations {
            let rel = match split {
                DataSplit::Train => Some(&e.train),
                DataSplit::Validation => e.validation.as_ref(),
                DataSplit::Test => e.test.as_ref(),
            }
            .ok_or_else(|| {
                LrCoxError::Data(format!(
                    "population `{}` has no {} file in the manifest",
                    e.name,
                    split.label()
                ))
            })?;
            let path = self.base.join(rel);
            let (pop, names) = read_population_csv(&path, &e.name)?;
            if names != self.manifest.predictors {
                return Err(LrCoxError::Data(format!(
                    "{}: predictor names differ from the manifest ({})",
                    path.display(),
                    predictor_diff(&self.manifest.predictors, &names)
                )));
            }
            pops.push(pop);
        }
        SurvivalDataset::new(pops, self.manifest.predictors.clone())
    }
}

/// Writes one CSV per population and split plus `manifest.json` into `dir`.
/// File names are `<population>_<split>.csv`.
pub fn write_dataset_bundle(
    dir: &Path,
    train: &SurvivalDataset,
    validation: Option<&SurvivalDataset>,
    test: Option<&SurvivalDataset>,
) -> Result<Manifest> {
    let mut entries = Vec::new();
    for (j, pop) in train.populations().iter().enumerate() {
        let write = |data: &SurvivalDataset, label: &str| -> Result<PathBuf> {
            let rel = PathBuf::from(format!("{}_{label}.csv", pop.name()));
            write_population_csv(&dir.join(&rel), data.population(j), data.predictor_names())?;
            Ok(rel)
        };
        let train_rel = write(train, "train")?;
        let validation_rel = validation.map(|d| write(d, "validation")).transpose()?;
        let test_rel = test.map(|d| write(d, "test")).transpose()?;
        entries.push(ManifestEntry {
            name: pop.name().to_string(),
            train: train_rel,
            validation: validation_rel,
            test: test_rel,
        });
    }
    let manifest = Manifest {
        populations: entries,
        predictors: train.predictor_names().to_vec(),
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

/// Labelled matrix CSV: header `<corner>,<column names>`, then one row per
/// row name.
pub fn write_matrix_csv(
    path: &Path,
    m: &DMatrix<f64>,
    corner: &str,
    row_names: &[String],
    col_names: &[String],
) -> Result<()> {
    if row_names.len() != m.nrows() || col_names.len() != m.ncols() {
        return Err(LrCoxError::DimensionMismatch(format!(
            "matrix is {}x{} but {} row and {} column names were given",
            m.nrows(),
            m.ncols(),
            row_names.len(),
            col_names.len()
        )));
    }
    let mut header = vec![corner.to_string()];
    header.extend(col_names.iter().cloned());
    let rows = (0..m.nrows()).map(|i| {
        let mut row = vec![row_names[i].clone()];
        row.extend(m.row(i).iter().map(|&v| format_float(v)));
        row
    });
    atomic_write(path, &csv_bytes(&header, rows)?)
}

#[derive(Debug, Clone)]
pub struct LabelledMatrix {
    pub values: DMatrix<f64>,
    pub row_names: Vec<String>,
    pub col_names: Vec<String>,
}

pub fn read_matrix_csv(path: &Path) -> Result<LabelledMatrix> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| csv_err(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.len() < 2 {
        return Err(LrCoxError::Data(format!("{}: matrix CSV needs at least one column", path.display())));
    }
    let col_names = header[1..].to_vec();
    let mut row_names = Vec::new();
    let mut values = Vec::new();
    for (k, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        if rec.len() != header.len() {
            return Err(LrCoxError::Data(format!(
                "{}: line {}: expected {} fields, found {}",
                path.display(),
                k + 2,
                header.len(),
                rec.len()
            )));
        }
        row_names.push(rec[0].to_string());
        for (c, raw) in rec.iter().skip(1).enumerate() {
            values.push(parse_float(path, k + 2, &col_names[c], raw)?);
        }
    }
    Ok(LabelledMatrix {
        values: DMatrix::from_row_slice(row_names.len(), col_names.len(), &values),
        row_names,
        col_names,
    })
}

/// Coefficient CSV: rows are predictors, columns are populations.
pub fn write_coefficients(
    path: &Path,
    b: &CoefficientMatrix,
    predictors: &[String],
    populations: &[String],
) -> Result<()> {
    write_matrix_csv(path, b.as_matrix(), "predictor", predictors, populations)
}

pub fn read_coefficients(path: &Path) -> Result<(CoefficientMatrix, Vec<String>, Vec<String>)> {
    let m = read_matrix_csv(path)?;
    let b = CoefficientMatrix::new(m.values)
        .map_err(|e| LrCoxError::Data(format!("{}: {e}", path.display())))?;
    Ok((b, m.row_names, m.col_names))
}
