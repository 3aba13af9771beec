//! Dataset directory layout.
//!
//! ```text
//! data.csv      sample_id,step,<feature_1>,...,<feature_F>   decimal values, empty where unobserved
//! mask.csv      same header and row order, fields 0/1
//! labels.csv    sample_id,label
//! manifest.json n_samples, n_steps, n_features, scale, feature_names, seed_provenance
//! ```
//!
//! Rows are sample-major and step-minor, both ascending. Values are written
//! in the shortest decimal form that parses back to the same `f64`.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use super::{DatasetManifest, LabelVector, Mask, Scale, Shape, TimeSeriesTensor};
use crate::error::{Error, Result};

pub const DATA_FILE: &str = "data.csv";
pub const MASK_FILE: &str = "mask.csv";
pub const LABELS_FILE: &str = "labels.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

/// A `sample_id,step,<features...>` file parsed into a flat cell vector.
#[derive(Debug, Clone)]
pub struct Grid<T> {
    pub feature_names: Vec<String>,
    pub sample_ids: Vec<u64>,
    pub step_index: Vec<f64>,
    /// `(sample_id, step)` of each row, in file order.
    pub row_keys: Vec<(u64, f64)>,
    pub cells: Vec<T>,
}

impl<T> Grid<T> {
    pub fn shape(&self) -> Shape {
        Shape::new(
            self.sample_ids.len(),
            self.step_index.len(),
            self.feature_names.len(),
        )
    }
}

fn file_label(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

/// Reads a grid file, parsing each feature field with `parse_cell`.
///
/// Checks the header, the sample-major/step-minor ordering and that every
/// sample carries the same step list.
pub fn read_grid_csv<T>(
    path: &Path,
    mut parse_cell: impl FnMut(&str) -> std::result::Result<T, String>,
) -> Result<Grid<T>> {
    let label = file_label(path);
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let csv_err = |source| Error::Csv {
        file: label.clone(),
        source,
    };

    let header = reader.headers().map_err(csv_err)?.clone();
    if header.len() < 3 || &header[0] != "sample_id" || &header[1] != "step" {
        return Err(Error::structural(
            &label,
            "header must be sample_id,step,<feature>,...",
        ));
    }
    let feature_names: Vec<String> = header.iter().skip(2).map(str::to_owned).collect();
    let n_features = feature_names.len();

    let mut sample_ids: Vec<u64> = Vec::new();
    let mut step_index: Vec<f64> = Vec::new();
    let mut row_keys = Vec::new();
    let mut cells = Vec::new();
    let mut step_pos = 0usize;
    let mut first_sample_done = false;

    let mut record = csv::StringRecord::new();
    let mut row = 0usize;
    while reader.read_record(&mut record).map_err(csv_err)? {
        row += 1;
        if record.len() != n_features + 2 {
            return Err(Error::structural(
                &label,
                format!(
                    "row {row}: {} fields, expected {}",
                    record.len(),
                    n_features + 2
                ),
            ));
        }
        let sample_id: u64 = record[0].trim().parse().map_err(|_| {
            Error::structural(&label, format!("row {row}: bad sample_id {:?}", &record[0]))
        })?;
        let step: f64 = record[1]
            .trim()
            .parse()
            .ok()
            .filter(|s: &f64| s.is_finite())
            .ok_or_else(|| {
                Error::structural(&label, format!("row {row}: bad step {:?}", &record[1]))
            })?;

        match sample_ids.last() {
            Some(&last) if last == sample_id => {
                step_pos += 1;
            }
            Some(&last) => {
                if sample_id < last {
                    return Err(Error::structural(
                        &label,
                        format!("row {row}: sample_id {sample_id} after {last}, rows must ascend"),
                    ));
                }
                if step_pos + 1 != step_index.len() {
                    return Err(Error::structural(
                        &label,
                        format!("row {row}: sample {last} has {} steps, expected {}", step_pos + 1, step_index.len()),
                    ));
                }
                first_sample_done = true;
                sample_ids.push(sample_id);
                step_pos = 0;
            }
            None => {
                sample_ids.push(sample_id);
                step_pos = 0;
            }
        }

        if first_sample_done {
            match step_index.get(step_pos) {
                Some(&expected) if expected.to_bits() == step.to_bits() => {}
                _ => {
                    return Err(Error::structural(
                        &label,
                        format!("row {row}: step {step} does not match the step grid of the first sample"),
                    ))
                }
            }
        } else {
            if let Some(&prev) = step_index.last() {
                if step <= prev {
                    return Err(Error::structural(
                        &label,
                        format!("row {row}: step {step} after {prev}, steps must ascend"),
                    ));
                }
            }
            step_index.push(step);
        }

        row_keys.push((sample_id, step));
        for (j, field) in record.iter().skip(2).enumerate() {
            let cell = parse_cell(field).map_err(|message| Error::Cell {
                sample: sample_ids.len() - 1,
                step: step_pos,
                feature: j,
                message: format!("{label} row {row}: {message}"),
            })?;
            cells.push(cell);
        }
    }
    if !sample_ids.is_empty() && step_pos + 1 != step_index.len() {
        return Err(Error::structural(
            &label,
            format!(
                "last sample has {} steps, expected {}",
                step_pos + 1,
                step_index.len()
            ),
        ));
    }

    Ok(Grid {
        feature_names,
        sample_ids,
        step_index,
        row_keys,
        cells,
    })
}

fn parse_value(field: &str) -> std::result::Result<Option<f64>, String> {
    let field = field.trim();
    if field.is_empty() {
        return Ok(None);
    }
    field
        .parse::<f64>()
        .map(Some)
        .map_err(|_| format!("cannot parse {field:?} as a number"))
}

pub(crate) fn parse_bit(field: &str) -> std::result::Result<bool, String> {
    match field.trim() {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(format!("mask field {other:?} is not 0 or 1")),
    }
}

pub(crate) fn read_value_grid(path: &Path) -> Result<Grid<Option<f64>>> {
    read_grid_csv(path, parse_value)
}

pub(crate) fn read_mask_grid(path: &Path) -> Result<Grid<bool>> {
    read_grid_csv(path, parse_bit)
}

/// Compares row keys of two grid files, naming the first offending row.
pub(crate) fn check_same_rows<A, B>(a: &Grid<A>, a_name: &str, b: &Grid<B>, b_name: &str) -> Result<()> {
    if a.feature_names != b.feature_names {
        return Err(Error::structural(
            b_name,
            format!("header differs from {a_name}"),
        ));
    }
    let n = a.row_keys.len().min(b.row_keys.len());
    if let Some(i) = (0..n).find(|&i| {
        a.row_keys[i].0 != b.row_keys[i].0 || a.row_keys[i].1.to_bits() != b.row_keys[i].1.to_bits()
    }) {
        return Err(Error::structural(
            b_name,
            format!("row {}: key differs from {a_name}", i + 1),
        ));
    }
    if a.row_keys.len() != b.row_keys.len() {
        return Err(Error::structural(
            b_name,
            format!(
                "row {}: {a_name} has {} rows, {b_name} has {}",
                n + 1,
                a.row_keys.len(),
                b.row_keys.len()
            ),
        ));
    }
    Ok(())
}

/// Combines a value grid and a mask grid into a tensor.
pub(crate) fn assemble_tensor(
    data: Grid<Option<f64>>,
    mask: Grid<bool>,
    data_name: &str,
) -> Result<TimeSeriesTensor> {
    let shape = data.shape();
    let mut values = Vec::with_capacity(shape.len());
    for (i, (cell, &observed)) in data.cells.iter().zip(&mask.cells).enumerate() {
        match (cell, observed) {
            (Some(v), _) => values.push(*v),
            (None, false) => values.push(super::SENTINEL),
            (None, true) => {
                let (sample, step, feature) = shape.coords(i);
                return Err(Error::Cell {
                    sample,
                    step,
                    feature,
                    message: format!("{data_name}: empty field at an observed cell"),
                });
            }
        }
    }
    let observed = Mask::from_bits(shape, mask.cells)?;
    TimeSeriesTensor::new(values, observed, data.feature_names, data.step_index)?
        .with_sample_ids(data.sample_ids)
}

pub fn read_labels(path: &Path) -> Result<(Vec<u64>, LabelVector)> {
    let label = file_label(path);
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let csv_err = |source| Error::Csv {
        file: label.clone(),
        source,
    };
    let header = reader.headers().map_err(csv_err)?.clone();
    if header.len() != 2 || &header[0] != "sample_id" || &header[1] != "label" {
        return Err(Error::structural(&label, "header must be sample_id,label"));
    }
    let mut ids = Vec::new();
    let mut labels = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(csv_err)?;
        let id = record[0].trim().parse::<u64>().map_err(|_| {
            Error::structural(&label, format!("row {}: bad sample_id", i + 1))
        })?;
        let value = match record[1].trim() {
            "0" => 0,
            "1" => 1,
            other => {
                return Err(Error::structural(
                    &label,
                    format!("row {}: label {other:?} is not 0 or 1", i + 1),
                ))
            }
        };
        ids.push(id);
        labels.push(value);
    }
    Ok((ids, LabelVector::new(labels)?))
}

pub fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest: DatasetManifest = serde_json::from_str(&text).map_err(|source| Error::Json {
        file: file_label(path),
        source,
    })?;
    manifest.validate_scale()?;
    Ok(manifest)
}

/// Loads a dataset directory, verifying every manifest count against the files.
pub fn load_dataset(root: &Path) -> Result<(TimeSeriesTensor, LabelVector, DatasetManifest)> {
    let manifest = read_manifest(&root.join(MANIFEST_FILE))?;
    let data = read_value_grid(&root.join(DATA_FILE))?;
    let mask = read_mask_grid(&root.join(MASK_FILE))?;
    check_same_rows(&data, DATA_FILE, &mask, MASK_FILE)?;
    let mut tensor = assemble_tensor(data, mask, DATA_FILE)?;
    tensor.scale = manifest.scale;
    manifest.validate_against(&tensor)?;

    let (label_ids, labels) = read_labels(&root.join(LABELS_FILE))?;
    if label_ids != tensor.sample_ids {
        return Err(Error::structural(
            LABELS_FILE,
            "sample ids do not match data.csv",
        ));
    }
    Ok((tensor, labels, manifest))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn write_grid(
    path: &Path,
    layout: &TimeSeriesTensor,
    mut cell: impl FnMut(usize, &mut String),
) -> Result<()> {
    let shape = layout.shape();
    let mut out = create(path)?;
    let mut line = String::from("sample_id,step");
    for name in &layout.feature_names {
        line.push(',');
        line.push_str(name);
    }
    line.push('\n');
    let io_err = |e| Error::io(path, e);
    out.write_all(line.as_bytes()).map_err(io_err)?;
    for s in 0..shape.samples {
        for t in 0..shape.steps {
            line.clear();
            line.push_str(&layout.sample_ids[s].to_string());
            line.push(',');
            line.push_str(&layout.step_index[t].to_string());
            for f in 0..shape.features {
                line.push(',');
                cell(shape.index(s, t, f), &mut line);
            }
            line.push('\n');
            out.write_all(line.as_bytes()).map_err(io_err)?;
        }
    }
    out.flush().map_err(io_err)
}

/// Writes `data.csv`-style values, leaving unobserved fields empty.
pub fn write_values_csv(path: &Path, tensor: &TimeSeriesTensor) -> Result<()> {
    let values = tensor.values();
    let observed = tensor.observed();
    write_grid(path, tensor, |i, line| {
        if observed.get_flat(i) {
            line.push_str(&values[i].to_string());
        }
    })
}

/// Writes a 0/1 mask using `layout`'s header and row keys.
pub fn write_mask_csv(path: &Path, layout: &TimeSeriesTensor, mask: &Mask) -> Result<()> {
    if mask.shape() != layout.shape() {
        return Err(Error::Shape(format!(
            "mask {} vs layout {}",
            mask.shape(),
            layout.shape()
        )));
    }
    write_grid(path, layout, |i, line| {
        line.push(if mask.get_flat(i) { '1' } else { '0' })
    })
}

pub fn write_labels(path: &Path, sample_ids: &[u64], labels: &LabelVector) -> Result<()> {
    if sample_ids.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} sample ids for {} labels",
            sample_ids.len(),
            labels.len()
        )));
    }
    let mut out = create(path)?;
    let io_err = |e| Error::io(path, e);
    out.write_all(b"sample_id,label\n").map_err(io_err)?;
    for (id, label) in sample_ids.iter().zip(labels.as_slice()) {
        writeln!(out, "{id},{label}").map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        file: file_label(path),
        source,
    })?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Writes the four dataset files into `root`, creating it if needed.
///
/// Refuses to write when the manifest does not describe the tensor.
pub fn export_dataset(
    root: &Path,
    tensor: &TimeSeriesTensor,
    labels: &LabelVector,
    manifest: &DatasetManifest,
) -> Result<()> {
    manifest.validate_against(tensor)?;
    if manifest.scale != tensor.scale && tensor.scale == Scale::Normalized {
        return Err(Error::structural(
            MANIFEST_FILE,
            "tensor is normalized but the manifest says raw",
        ));
    }
    if labels.len() != tensor.shape().samples {
        return Err(Error::Shape(format!(
            "{} labels for {} samples",
            labels.len(),
            tensor.shape().samples
        )));
    }
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    write_values_csv(&root.join(DATA_FILE), tensor)?;
    write_mask_csv(&root.join(MASK_FILE), tensor, tensor.observed())?;
    write_labels(&root.join(LABELS_FILE), &tensor.sample_ids, labels)?;
    write_json(&root.join(MANIFEST_FILE), manifest)
}
