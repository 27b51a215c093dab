use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::{Dataset, DatasetRole, Label, Point, RawSignature};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointsFormat {
    /// `x,y[,t]` per line, no header.
    PointsCsv,
    /// `[{"x":..,"y":..,"t":..}, ...]` with `t` optional.
    PointsJson,
}

impl PointsFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "csv" | "txt" => Some(PointsFormat::PointsCsv),
            "json" => Some(PointsFormat::PointsJson),
            _ => None,
        }
    }
}

fn parse_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

pub fn parse_points_csv(path: &Path, text: &str) -> Result<Vec<Point>> {
    let mut points = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if !(2..=3).contains(&fields.len()) {
            return Err(parse_err(
                path,
                format!("line {}: expected 2 or 3 fields, got {}", lineno + 1, fields.len()),
            ));
        }
        let num = |s: &str| {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| parse_err(path, format!("line {}: bad number {s:?}", lineno + 1)))
        };
        let x = num(fields[0])?;
        let y = num(fields[1])?;
        let t = fields.get(2).map(|s| num(s)).transpose()?;
        points.push(Point { x, y, t });
    }
    Ok(points)
}

fn parse_points_json(path: &Path, text: &str) -> Result<Vec<Point>> {
    serde_json::from_str::<Vec<Point>>(text).map_err(|e| parse_err(path, e.to_string()))
}

/// Reads one signature file. The returned signature has an empty subject id
/// and the `Genuine` label; callers attach identity from the manifest.
pub fn load_signature(path: &Path, format: PointsFormat) -> Result<RawSignature> {
    let text = fs::read_to_string(path)?;
    let points = match format {
        PointsFormat::PointsCsv => parse_points_csv(path, &text)?,
        PointsFormat::PointsJson => parse_points_json(path, &text)?,
    };
    if points.len() < 2 {
        return Err(Error::EmptySignature(points.len()));
    }
    RawSignature::new("", Label::Genuine, points).map_err(|e| match e {
        Error::Config(m) => parse_err(path, m),
        other => other,
    })
}

#[derive(Debug, Deserialize)]
struct ManifestRow {
    path: String,
    subject_id: String,
    label: String,
}

/// Loads a `path,subject_id,label` manifest. Sample paths are resolved
/// relative to the manifest's directory.
pub fn load_dataset(manifest: &Path, role: DatasetRole) -> Result<Dataset> {
    let base = manifest.parent().unwrap_or_else(|| Path::new("."));
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(manifest)
        .map_err(|e| Error::Manifest(format!("{}: {e}", manifest.display())))?;
    let mut seen: HashSet<PathBuf> = HashSet::new();
    let mut samples = Vec::new();
    for row in reader.deserialize::<ManifestRow>() {
        let row = row.map_err(|e| Error::Manifest(e.to_string()))?;
        let label: Label = row.label.parse()?;
        let path = base.join(&row.path);
        if !path.is_file() {
            return Err(Error::Manifest(format!("missing sample file {}", path.display())));
        }
        if !seen.insert(normalize(&path)) {
            return Err(Error::DuplicateSample(path));
        }
        let format = PointsFormat::from_path(&path).ok_or_else(|| {
            Error::Manifest(format!("unknown sample format for {}", path.display()))
        })?;
        let sig = load_signature(&path, format)?
            .with_subject(row.subject_id)
            .with_label(label);
        samples.push(sig);
    }
    let dataset = Dataset::new(samples, role);
    dataset.check_invariants()?;
    Ok(dataset)
}

fn normalize(path: &Path) -> PathBuf {
    fs::canonicalize(path).unwrap_or_else(|_| path.to_path_buf())
}

pub fn write_points_csv(path: &Path, sig: &RawSignature) -> Result<()> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    for p in sig.points() {
        match p.t {
            Some(t) => writeln!(out, "{},{},{}", p.x, p.y, t)?,
            None => writeln!(out, "{},{}", p.x, p.y)?,
        }
    }
    out.flush()?;
    Ok(())
}

/// Writes a manifest whose paths are relative to `manifest`'s directory.
pub fn write_manifest(manifest: &Path, rows: &[(String, String, Label)]) -> Result<()> {
    let mut w = csv::Writer::from_path(manifest)?;
    w.write_record(["path", "subject_id", "label"])?;
    for (path, subject, label) in rows {
        w.write_record([path.as_str(), subject.as_str(), label.as_str()])?;
    }
    w.flush()?;
    Ok(())
}
