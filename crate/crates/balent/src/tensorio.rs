//! On-disk formats and their in-memory types.
//!
//! Prediction cube (binary):
//! - 8-byte magic `BALCUBE1`
//! - four u32 little-endian: height, width, classes, samples
//! - height·width·classes·samples f32 little-endian, row-major `[H, W, C, m]`
//!   with the sample axis fastest-varying
//!
//! Values are stored as f32; all math downstream runs in f64.
//!
//! Score maps, label maps, and selection logs are plain CSV with fixed
//! headers (`row,col,score`, `row,col,label`, `image_id,row,col,cycle`), one
//! line per pixel in row-major order. Scores are rendered with 9 significant
//! digits, which the reader recovers exactly.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::io::Read;
use std::path::Path;

use crate::acquisition::AcquisitionKind;
use crate::error::{Error, Result};

const CUBE_MAGIC: &[u8; 8] = b"BALCUBE1";

/// Tolerance for each stored softmax row summing to one.
pub const SOFTMAX_SUM_TOL: f64 = 1e-4;

/// `m` stochastic softmax samples per pixel: values `[H, W, C, m]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionCube {
    height: usize,
    width: usize,
    num_classes: usize,
    num_samples: usize,
    values: Vec<f32>,
}

impl PredictionCube {
    /// Validates dimensions (all positive, `m >= 2`), the value range, and
    /// that every (pixel, sample) column sums to 1 within [`SOFTMAX_SUM_TOL`].
    pub fn new(
        height: usize,
        width: usize,
        num_classes: usize,
        num_samples: usize,
        values: Vec<f32>,
    ) -> Result<Self> {
        validate_cube(height, width, num_classes, num_samples, &values)
            .map_err(Error::Validation)?;
        Ok(PredictionCube { height, width, num_classes, num_samples, values })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn num_samples(&self) -> usize {
        self.num_samples
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    /// The `[C, m]` block for one pixel, widened to f64, sample axis fastest.
    pub fn pixel_samples(&self, row: usize, col: usize) -> Vec<f64> {
        assert!(row < self.height && col < self.width, "pixel ({row}, {col}) out of range");
        let start = (row * self.width + col) * self.num_classes * self.num_samples;
        let end = start + self.num_classes * self.num_samples;
        self.values[start..end].iter().map(|&v| v as f64).collect()
    }
}

fn validate_cube(
    height: usize,
    width: usize,
    num_classes: usize,
    num_samples: usize,
    values: &[f32],
) -> std::result::Result<(), String> {
    if height == 0 || width == 0 || num_classes == 0 {
        return Err(format!("cube dimensions must be positive, got {height}x{width}x{num_classes}"));
    }
    if num_samples < 2 {
        return Err(format!("cube needs at least 2 samples per pixel, got {num_samples}"));
    }
    let expected = height
        .checked_mul(width)
        .and_then(|n| n.checked_mul(num_classes))
        .and_then(|n| n.checked_mul(num_samples))
        .ok_or_else(|| "cube dimensions overflow".to_string())?;
    if values.len() != expected {
        return Err(format!("cube has {} values, dimensions require {expected}", values.len()));
    }
    for (i, &v) in values.iter().enumerate() {
        if !(0.0..=1.0).contains(&v) {
            return Err(format!("cube value {v} at index {i} outside [0, 1]"));
        }
    }
    for px in 0..height * width {
        for j in 0..num_samples {
            let base = px * num_classes * num_samples + j;
            let sum: f64 =
                (0..num_classes).map(|c| values[base + c * num_samples] as f64).sum();
            if (sum - 1.0).abs() > SOFTMAX_SUM_TOL {
                return Err(format!(
                    "softmax sample {j} of pixel {px} sums to {sum}, expected 1 within {SOFTMAX_SUM_TOL}"
                ));
            }
        }
    }
    Ok(())
}

/// Writes the binary cube format. The cube is valid by construction, so the
/// only failure mode is I/O.
pub fn write_cube(cube: &PredictionCube, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::with_capacity(8 + 16 + cube.values.len() * 4);
    buf.extend_from_slice(CUBE_MAGIC);
    for dim in [cube.height, cube.width, cube.num_classes, cube.num_samples] {
        let dim = u32::try_from(dim)
            .map_err(|_| Error::Validation(format!("cube dimension {dim} exceeds u32")))?;
        buf.extend_from_slice(&dim.to_le_bytes());
    }
    for v in &cube.values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Reads and fully validates a binary cube file.
pub fn read_cube(path: impl AsRef<Path>) -> Result<PredictionCube> {
    let path = path.as_ref();
    let mut file = fs::File::open(path).map_err(|e| Error::io(path, e))?;

    let mut magic = [0u8; 8];
    file.read_exact(&mut magic)
        .map_err(|_| Error::format(path, "file too short for cube header"))?;
    if &magic != CUBE_MAGIC {
        return Err(Error::format(path, format!("bad magic {magic:?}, expected {CUBE_MAGIC:?}")));
    }

    let mut header = [0u8; 16];
    file.read_exact(&mut header)
        .map_err(|_| Error::format(path, "file too short for cube dimensions"))?;
    let dim = |i: usize| u32::from_le_bytes(header[i * 4..i * 4 + 4].try_into().unwrap()) as usize;
    let (height, width, num_classes, num_samples) = (dim(0), dim(1), dim(2), dim(3));

    let expected = (height as u64)
        .checked_mul(width as u64)
        .and_then(|n| n.checked_mul(num_classes as u64))
        .and_then(|n| n.checked_mul(num_samples as u64))
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::format(path, "declared cube dimensions overflow"))?;

    let mut payload = Vec::new();
    file.read_to_end(&mut payload).map_err(|e| Error::io(path, e))?;
    if payload.len() as u64 != expected {
        return Err(Error::format(
            path,
            format!("payload is {} bytes, declared dimensions require {expected}", payload.len()),
        ));
    }

    let values: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    validate_cube(height, width, num_classes, num_samples, &values)
        .map_err(|msg| Error::format(path, msg))?;
    Ok(PredictionCube { height, width, num_classes, num_samples, values })
}

/// Per-pixel acquisition scores for one image.
///
/// Scores are finite except for two documented sentinels: `+inf` ranks a
/// pixel first (see the acquisition module) and `-inf` marks an
/// already-labeled pixel. NaN is rejected everywhere.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMap {
    height: usize,
    width: usize,
    /// Kind that produced the scores. `None` for maps loaded from CSV, which
    /// does not carry it.
    pub kind: Option<AcquisitionKind>,
    scores: Vec<f64>,
}

impl ScoreMap {
    pub fn new(
        height: usize,
        width: usize,
        kind: Option<AcquisitionKind>,
        scores: Vec<f64>,
    ) -> Result<Self> {
        if scores.len() != height * width {
            return Err(Error::Validation(format!(
                "score map has {} entries, dimensions require {}",
                scores.len(),
                height * width
            )));
        }
        if let Some(i) = scores.iter().position(|s| s.is_nan()) {
            return Err(Error::Validation(format!("score at index {i} is NaN")));
        }
        Ok(ScoreMap { height, width, kind, scores })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn score(&self, row: usize, col: usize) -> f64 {
        self.scores[row * self.width + col]
    }
}

/// Renders a score with 9 significant digits; `inf` / `-inf` pass through.
pub(crate) fn fmt_score(s: f64) -> String {
    format!("{s:.8e}")
}

pub fn write_scores(map: &ScoreMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("row,col,score\n");
    for row in 0..map.height {
        for col in 0..map.width {
            writeln!(out, "{row},{col},{}", fmt_score(map.score(row, col))).unwrap();
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads a score-map CSV. The acquisition kind is not part of the format, so
/// the returned map has `kind: None`.
pub fn read_scores(path: impl AsRef<Path>) -> Result<ScoreMap> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    match lines.next() {
        Some("row,col,score") => {}
        other => {
            return Err(Error::format(
                path,
                format!("expected header 'row,col,score', got {other:?}"),
            ))
        }
    }
    let mut scores = Vec::new();
    let mut max_col = 0usize;
    for (i, line) in lines.enumerate() {
        let mut parts = line.splitn(3, ',');
        let bad = || Error::format(path, format!("line {}: expected 'row,col,score'", i + 2));
        let row: usize = parts.next().and_then(|p| p.parse().ok()).ok_or_else(bad)?;
        let col: usize = parts.next().and_then(|p| p.parse().ok()).ok_or_else(bad)?;
        let score: f64 = parts.next().and_then(|p| p.parse().ok()).ok_or_else(bad)?;
        if score.is_nan() {
            return Err(Error::format(path, format!("line {}: score is NaN", i + 2)));
        }
        scores.push((row, col, score));
        max_col = max_col.max(col);
    }
    if scores.is_empty() {
        return ScoreMap::new(0, 0, None, Vec::new());
    }
    let width = max_col + 1;
    let height = scores.last().unwrap().0 + 1;
    if scores.len() != height * width {
        return Err(Error::format(
            path,
            format!("{} entries do not fill a {height}x{width} grid", scores.len()),
        ));
    }
    for (i, &(row, col, _)) in scores.iter().enumerate() {
        if (row, col) != (i / width, i % width) {
            return Err(Error::format(
                path,
                format!("line {}: pixel ({row}, {col}) out of row-major order", i + 2),
            ));
        }
    }
    ScoreMap::new(height, width, None, scores.into_iter().map(|(_, _, s)| s).collect())
}

/// Ground-truth or partially-observed labels for one image. Values lie in
/// `[0, C]`; the value `C` marks an unlabeled (ignored) pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    num_classes: u32,
    labels: Vec<u32>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, num_classes: u32, labels: Vec<u32>) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::Validation("label map needs at least one class".into()));
        }
        if labels.len() != height * width {
            return Err(Error::Validation(format!(
                "label map has {} entries, dimensions require {}",
                labels.len(),
                height * width
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l > num_classes) {
            return Err(Error::Validation(format!(
                "label {bad} outside [0, {num_classes}] (the ignore value is {num_classes})"
            )));
        }
        Ok(LabelMap { height, width, num_classes, labels })
    }

    /// A map with every pixel unlabeled.
    pub fn unlabeled(height: usize, width: usize, num_classes: u32) -> Self {
        LabelMap { height, width, num_classes, labels: vec![num_classes; height * width] }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn num_classes(&self) -> u32 {
        self.num_classes
    }

    pub fn label(&self, row: usize, col: usize) -> u32 {
        self.labels[row * self.width + col]
    }

    pub fn set_label(&mut self, row: usize, col: usize, label: u32) {
        assert!(label <= self.num_classes, "label {label} out of range");
        self.labels[row * self.width + col] = label;
    }

    pub fn is_labeled(&self, row: usize, col: usize) -> bool {
        self.label(row, col) < self.num_classes
    }

    pub fn labeled_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l < self.num_classes).count()
    }
}

pub fn write_labels(map: &LabelMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("row,col,label\n");
    for row in 0..map.height {
        for col in 0..map.width {
            writeln!(out, "{row},{col},{}", map.label(row, col)).unwrap();
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads a label-map CSV. The class count is not part of the format and must
/// be supplied by the caller; labels above it are rejected.
pub fn read_labels(path: impl AsRef<Path>, num_classes: u32) -> Result<LabelMap> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    match lines.next() {
        Some("row,col,label") => {}
        other => {
            return Err(Error::format(
                path,
                format!("expected header 'row,col,label', got {other:?}"),
            ))
        }
    }
    let mut entries = Vec::new();
    let mut max_col = 0usize;
    for (i, line) in lines.enumerate() {
        let mut parts = line.splitn(3, ',');
        let bad = || Error::format(path, format!("line {}: expected 'row,col,label'", i + 2));
        let row: usize = parts.next().and_then(|p| p.parse().ok()).ok_or_else(bad)?;
        let col: usize = parts.next().and_then(|p| p.parse().ok()).ok_or_else(bad)?;
        let label: u32 = parts.next().and_then(|p| p.parse().ok()).ok_or_else(bad)?;
        entries.push((row, col, label));
        max_col = max_col.max(col);
    }
    if entries.is_empty() {
        return Err(Error::format(path, "label map has no pixels"));
    }
    let width = max_col + 1;
    let height = entries.last().unwrap().0 + 1;
    if entries.len() != height * width {
        return Err(Error::format(
            path,
            format!("{} entries do not fill a {height}x{width} grid", entries.len()),
        ));
    }
    for (i, &(row, col, _)) in entries.iter().enumerate() {
        if (row, col) != (i / width, i % width) {
            return Err(Error::format(
                path,
                format!("line {}: pixel ({row}, {col}) out of row-major order", i + 2),
            ));
        }
    }
    LabelMap::new(height, width, num_classes, entries.into_iter().map(|(_, _, l)| l).collect())
        .map_err(|e| Error::format(path, e.to_string()))
}

/// One queried pixel: which image, where, and the cycle at which it joined
/// the labeled set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelectionEntry {
    pub image_id: String,
    pub row: usize,
    pub col: usize,
    pub cycle: usize,
}

/// Ordered log of queried pixels. A pixel may appear at most once across all
/// cycles; `push` enforces that.
#[derive(Debug, Clone, Default)]
pub struct SelectionList {
    entries: Vec<SelectionEntry>,
    seen: HashSet<(String, usize, usize)>,
}

impl SelectionList {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_entries(entries: Vec<SelectionEntry>) -> Result<Self> {
        let mut list = SelectionList::new();
        for e in entries {
            list.push(e)?;
        }
        Ok(list)
    }

    pub fn push(&mut self, entry: SelectionEntry) -> Result<()> {
        if entry.image_id.is_empty() || entry.image_id.contains(',') || entry.image_id.contains('\n') {
            return Err(Error::Validation(format!("bad image id {:?}", entry.image_id)));
        }
        let key = (entry.image_id.clone(), entry.row, entry.col);
        if !self.seen.insert(key) {
            return Err(Error::Validation(format!(
                "pixel ({}, {}, {}) selected twice",
                entry.image_id, entry.row, entry.col
            )));
        }
        self.entries.push(entry);
        Ok(())
    }

    pub fn entries(&self) -> &[SelectionEntry] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }
}

pub fn write_selections(list: &SelectionList, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("image_id,row,col,cycle\n");
    for e in list.entries() {
        writeln!(out, "{},{},{},{}", e.image_id, e.row, e.col, e.cycle).unwrap();
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_selections(path: impl AsRef<Path>) -> Result<SelectionList> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    match lines.next() {
        Some("image_id,row,col,cycle") => {}
        other => {
            return Err(Error::format(
                path,
                format!("expected header 'image_id,row,col,cycle', got {other:?}"),
            ))
        }
    }
    let mut list = SelectionList::new();
    for (i, line) in lines.enumerate() {
        let mut parts = line.splitn(4, ',');
        let bad = || Error::format(path, format!("line {}: expected 'image_id,row,col,cycle'", i + 2));
        let image_id = parts.next().ok_or_else(bad)?.to_string();
        let row: usize = parts.next().and_then(|p| p.parse().ok()).ok_or_else(bad)?;
        let col: usize = parts.next().and_then(|p| p.parse().ok()).ok_or_else(bad)?;
        let cycle: usize = parts.next().and_then(|p| p.parse().ok()).ok_or_else(bad)?;
        list.push(SelectionEntry { image_id, row, col, cycle })
            .map_err(|e| Error::format(path, e.to_string()))?;
    }
    Ok(list)
}
