//! Shared value types: labels, samples, datasets, images and feature matrices.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Binary diagnosis label. `Positive` (1) is COVID-19 positive, `Negative`
/// (0) is a healthy control.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    Negative = 0,
    Positive = 1,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::Negative, Label::Positive];

    pub fn from_u8(v: u8) -> Option<Label> {
        match v {
            0 => Some(Label::Negative),
            1 => Some(Label::Positive),
            _ => None,
        }
    }

    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn parse_token(tok: &str) -> Option<Label> {
        match tok.trim().to_ascii_lowercase().as_str() {
            "0" | "negative" => Some(Label::Negative),
            "1" | "positive" => Some(Label::Positive),
            _ => None,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.index())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Xray,
    Ct,
}

impl Modality {
    pub fn parse_token(tok: &str) -> Option<Modality> {
        match tok.trim().to_ascii_lowercase().as_str() {
            "xray" | "x-ray" => Some(Modality::Xray),
            "ct" => Some(Modality::Ct),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub modality: Modality,
    pub label: Label,
    pub source_path: PathBuf,
}

/// Ordered collection of samples with unique ids.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    samples: Vec<Sample>,
    class_counts: [usize; 2],
}

impl Dataset {
    pub fn new(samples: Vec<Sample>) -> Result<Dataset> {
        let mut seen = HashSet::with_capacity(samples.len());
        let mut class_counts = [0usize; 2];
        for s in &samples {
            if !seen.insert(s.id.as_str()) {
                return Err(Error::DuplicateId(s.id.clone()));
            }
            class_counts[s.label.index()] += 1;
        }
        Ok(Dataset {
            samples,
            class_counts,
        })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn class_count(&self, label: Label) -> usize {
        self.class_counts[label.index()]
    }

    pub fn class_counts(&self) -> [usize; 2] {
        self.class_counts
    }
}

/// Reads a `id,path,modality,label` manifest. Relative image paths are
/// resolved against the manifest's directory; existence is not checked.
pub fn dataset_from_manifest(manifest_path: &Path) -> Result<Dataset> {
    let text =
        std::fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new(""));
    parse_manifest(&text, base)
}

pub fn parse_manifest(text: &str, base_dir: &Path) -> Result<Dataset> {
    let mut lines = text.lines().enumerate();
    let header = lines
        .next()
        .map(|(_, l)| l.trim_start_matches('\u{feff}').trim())
        .unwrap_or("");
    if header != "id,path,modality,label" {
        return Err(Error::Manifest {
            row: 1,
            message: format!("expected header `id,path,modality,label`, found `{header}`"),
        });
    }

    let mut samples = Vec::new();
    for (i, line) in lines {
        let row = i + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(Error::Manifest {
                row,
                message: format!("expected 4 fields, found {}", fields.len()),
            });
        }
        let id = fields[0].trim();
        if id.is_empty() {
            return Err(Error::Manifest {
                row,
                message: "empty id".into(),
            });
        }
        let modality = Modality::parse_token(fields[2]).ok_or_else(|| Error::Manifest {
            row,
            message: format!("unknown modality `{}`", fields[2]),
        })?;
        let label = Label::parse_token(fields[3]).ok_or_else(|| Error::Manifest {
            row,
            message: format!("unknown label `{}`", fields[3]),
        })?;
        let path = PathBuf::from(fields[1].trim());
        let source_path = if path.is_absolute() {
            path
        } else {
            base_dir.join(path)
        };
        samples.push(Sample {
            id: id.to_string(),
            modality,
            label,
            source_path,
        });
    }
    Dataset::new(samples)
}

/// Height x width x channels image, row-major with interleaved channels.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
    range: (f32, f32),
}

impl ImageTensor {
    pub fn new(
        height: usize,
        width: usize,
        channels: usize,
        data: Vec<f32>,
        range: (f32, f32),
    ) -> Result<ImageTensor> {
        if height == 0 || width == 0 {
            return Err(Error::invalid(format!(
                "image dimensions must be >= 1, got {height}x{width}"
            )));
        }
        if channels == 0 {
            return Err(Error::UnsupportedChannels(0));
        }
        if data.len() != height * width * channels {
            return Err(Error::DimensionMismatch {
                expected: height * width * channels,
                found: data.len(),
            });
        }
        if !(range.0 <= range.1) {
            return Err(Error::invalid(format!("bad intensity range {range:?}")));
        }
        if let Some(v) = data
            .iter()
            .find(|v| !v.is_finite() || **v < range.0 || **v > range.1)
        {
            return Err(Error::invalid(format!(
                "pixel value {v} outside declared range [{}, {}]",
                range.0, range.1
            )));
        }
        Ok(ImageTensor {
            height,
            width,
            channels,
            data,
            range,
        })
    }

    /// Builds a tensor whose declared range is the data's own [min, max].
    pub fn from_data(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        let (lo, hi) = data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        let range = if data.is_empty() { (0.0, 0.0) } else { (lo, hi) };
        Self::new(height, width, channels, data, range)
    }

    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn channels(&self) -> usize {
        self.channels
    }
    pub fn data(&self) -> &[f32] {
        &self.data
    }
    pub fn intensity_range(&self) -> (f32, f32) {
        self.range
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }
}

/// N x D matrix of extracted features with aligned labels and sample ids.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub n: usize,
    pub d: usize,
    /// Row-major, length `n * d`.
    pub values: Vec<f32>,
    pub labels: Vec<Label>,
    pub sample_ids: Vec<String>,
    pub extractor_name: String,
}

impl FeatureMatrix {
    pub fn new(
        d: usize,
        values: Vec<f32>,
        labels: Vec<Label>,
        sample_ids: Vec<String>,
        extractor_name: impl Into<String>,
    ) -> Result<FeatureMatrix> {
        let n = labels.len();
        let m = FeatureMatrix {
            n,
            d,
            values,
            labels,
            sample_ids,
            extractor_name: extractor_name.into(),
        };
        m.validate()?;
        Ok(m)
    }

    /// Checks shape and finiteness; the error cites the first offending cell.
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::invalid("feature dimension must be >= 1"));
        }
        if self.values.len() != self.n * self.d {
            return Err(Error::invalid(format!(
                "value count {} ≠ n·d = {}",
                self.values.len(),
                self.n * self.d
            )));
        }
        if self.labels.len() != self.n {
            return Err(Error::invalid(format!(
                "label count {} ≠ row count {}",
                self.labels.len(),
                self.n
            )));
        }
        if self.sample_ids.len() != self.n {
            return Err(Error::invalid(format!(
                "id count {} ≠ row count {}",
                self.sample_ids.len(),
                self.n
            )));
        }
        if let Some(pos) = self.values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: pos / self.d,
                col: pos % self.d,
            });
        }
        Ok(())
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.d..(i + 1) * self.d]
    }

    pub fn class_counts(&self) -> [usize; 2] {
        let mut c = [0; 2];
        for l in &self.labels {
            c[l.index()] += 1;
        }
        c
    }

    /// Row subset, in the order given.
    pub fn select_rows(&self, rows: &[usize]) -> FeatureMatrix {
        let mut values = Vec::with_capacity(rows.len() * self.d);
        for &r in rows {
            values.extend_from_slice(self.row(r));
        }
        FeatureMatrix {
            n: rows.len(),
            d: self.d,
            values,
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            sample_ids: rows.iter().map(|&r| self.sample_ids[r].clone()).collect(),
            extractor_name: self.extractor_name.clone(),
        }
    }
}

/// Consumes a matrix, returning it unchanged if every invariant holds.
pub fn feature_matrix_validate(m: FeatureMatrix) -> Result<FeatureMatrix> {
    m.validate()?;
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest(rows: &[&str]) -> String {
        let mut s = String::from("id,path,modality,label\n");
        for r in rows {
            s.push_str(r);
            s.push('\n');
        }
        s
    }

    #[test]
    fn manifest_counts_balanced_classes() {
        let rows: Vec<String> = (0..274)
            .map(|i| {
                let (m, l) = if i < 137 {
                    (if i < 117 { "xray" } else { "ct" }, "positive")
                } else {
                    (if i < 254 { "xray" } else { "ct" }, "0")
                };
                format!("s{i:03},img/{i}.png,{m},{l}")
            })
            .collect();
        let refs: Vec<&str> = rows.iter().map(String::as_str).collect();
        let ds = parse_manifest(&manifest(&refs), Path::new("/data")).unwrap();
        assert_eq!(ds.class_counts(), [137, 137]);
        assert_eq!(ds.samples()[0].id, "s000");
        assert_eq!(ds.samples()[273].id, "s273");
        assert_eq!(ds.samples()[5].source_path, Path::new("/data/img/5.png"));
    }

    #[test]
    fn header_only_manifest_is_empty() {
        let ds = parse_manifest("id,path,modality,label\n", Path::new(".")).unwrap();
        assert!(ds.is_empty());
    }

    #[test]
    fn duplicate_id_is_named() {
        let err = parse_manifest(
            &manifest(&["c001,a.png,ct,1", "c001,b.png,ct,0"]),
            Path::new("."),
        )
        .unwrap_err();
        assert!(err.to_string().contains("c001"), "{err}");
    }

    #[test]
    fn unknown_tokens_cite_row() {
        let err = parse_manifest(&manifest(&["a,a.png,mri,1"]), Path::new(".")).unwrap_err();
        assert!(matches!(err, Error::Manifest { row: 2, .. }), "{err}");
        let err = parse_manifest(&manifest(&["a,a.png,ct,1", "b,b.png,ct,maybe"]), Path::new("."))
            .unwrap_err();
        assert!(matches!(err, Error::Manifest { row: 3, .. }), "{err}");
    }

    #[test]
    fn validate_accepts_well_formed() {
        let m = FeatureMatrix {
            n: 4,
            d: 3,
            values: (0..12).map(|v| v as f32).collect(),
            labels: vec![Label::Negative, Label::Positive, Label::Negative, Label::Positive],
            sample_ids: (0..4).map(|i| i.to_string()).collect(),
            extractor_name: "x".into(),
        };
        assert_eq!(feature_matrix_validate(m.clone()).unwrap(), m);
    }

    #[test]
    fn validate_reports_nan_coordinates() {
        let mut values: Vec<f32> = vec![0.0; 12];
        values[2 * 3 + 1] = f32::NAN;
        let m = FeatureMatrix {
            n: 4,
            d: 3,
            values,
            labels: vec![Label::Negative; 4],
            sample_ids: (0..4).map(|i| i.to_string()).collect(),
            extractor_name: "x".into(),
        };
        let err = feature_matrix_validate(m).unwrap_err();
        assert!(matches!(err, Error::NonFinite { row: 2, col: 1 }));
        assert!(err.to_string().contains("row 2, column 1"));
    }

    #[test]
    fn validate_reports_label_mismatch() {
        let m = FeatureMatrix {
            n: 4,
            d: 3,
            values: vec![0.0; 12],
            labels: vec![Label::Negative; 3],
            sample_ids: (0..4).map(|i| i.to_string()).collect(),
            extractor_name: "x".into(),
        };
        let err = feature_matrix_validate(m).unwrap_err();
        assert_eq!(err.to_string(), "label count 3 ≠ row count 4");
    }

    #[test]
    fn image_tensor_rejects_out_of_range() {
        assert!(ImageTensor::new(1, 2, 1, vec![0.0, 2.0], (0.0, 1.0)).is_err());
        assert!(ImageTensor::new(0, 2, 1, vec![], (0.0, 1.0)).is_err());
        assert!(ImageTensor::new(1, 2, 1, vec![0.0], (0.0, 1.0)).is_err());
    }
}
