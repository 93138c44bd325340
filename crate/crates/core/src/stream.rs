//! Data ingestion and boundary-free task streams.
//!
//! Learners only ever see [`StreamBatch`] values through
//! [`BatchStream::learner_batches`]. Task identity lives in a separate
//! [`BoundaryChannel`] that counts every read, so evaluation code can use it
//! while the learning path provably does not.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub x: Array2<f64>,
    pub y: Vec<usize>,
    /// Class load `m`.
    pub classes: usize,
    pub split: Split,
}

impl LabeledDataset {
    pub fn new(x: Array2<f64>, y: Vec<usize>, classes: usize, split: Split) -> Result<Self> {
        let ds = LabeledDataset {
            x,
            y,
            classes,
            split,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.x.nrows() == 0 {
            return Err(Error::contract("dataset is empty"));
        }
        if self.x.nrows() != self.y.len() {
            return Err(Error::contract(format!(
                "{} feature rows but {} labels",
                self.x.nrows(),
                self.y.len()
            )));
        }
        if let Some(bad) = self.y.iter().find(|&&c| c >= self.classes) {
            return Err(Error::contract(format!(
                "label {bad} outside class load {}",
                self.classes
            )));
        }
        if self.x.iter().any(|v| !v.is_finite()) {
            return Err(Error::contract("dataset has non-finite features"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    /// One-hot targets over the full class load.
    pub fn one_hot(&self) -> Array2<f64> {
        one_hot(&self.y, self.classes)
    }

    /// Rows whose label is in `classes`, in dataset order.
    pub fn rows_of_classes(&self, classes: &[usize]) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| classes.contains(&self.y[i]))
            .collect()
    }

    pub fn subset(&self, rows: &[usize]) -> LabeledDataset {
        LabeledDataset {
            x: self.x.select(Axis(0), rows),
            y: rows.iter().map(|&i| self.y[i]).collect(),
            classes: self.classes,
            split: self.split,
        }
    }
}

pub fn one_hot(labels: &[usize], classes: usize) -> Array2<f64> {
    let mut y = Array2::zeros((labels.len(), classes));
    for (i, &c) in labels.iter().enumerate() {
        y[[i, c]] = 1.0;
    }
    y
}

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    Ok(bytes)
}

fn format_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| {
            format_err(
                path,
                format!(
                    "truncated header: expected at least {} bytes, found {}",
                    offset + 4,
                    bytes.len()
                ),
            )
        })
}

/// Parses an IDX image file (magic `0x00000803`) into `n x (rows*cols)`
/// features scaled to `[0, 1]`.
pub fn parse_idx_images(bytes: &[u8], path: &Path) -> Result<Array2<f64>> {
    let magic = be_u32(bytes, 0, path)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(format_err(
            path,
            format!("bad magic 0x{magic:08x} at offset 0, expected 0x{IDX_IMAGES_MAGIC:08x}"),
        ));
    }
    let n = be_u32(bytes, 4, path)? as usize;
    let rows = be_u32(bytes, 8, path)? as usize;
    let cols = be_u32(bytes, 12, path)? as usize;
    let s = rows * cols;
    let expected = 16 + n * s;
    if bytes.len() != expected {
        return Err(format_err(
            path,
            format!("truncated or oversized image data: expected {expected} bytes, found {}", bytes.len()),
        ));
    }
    Ok(Array2::from_shape_fn((n, s), |(i, j)| {
        bytes[16 + i * s + j] as f64 / 255.0
    }))
}

/// Parses an IDX label file (magic `0x00000801`).
pub fn parse_idx_labels(bytes: &[u8], path: &Path) -> Result<Vec<usize>> {
    let magic = be_u32(bytes, 0, path)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(format_err(
            path,
            format!("bad magic 0x{magic:08x} at offset 0, expected 0x{IDX_LABELS_MAGIC:08x}"),
        ));
    }
    let n = be_u32(bytes, 4, path)? as usize;
    let expected = 8 + n;
    if bytes.len() != expected {
        return Err(format_err(
            path,
            format!("truncated or oversized label data: expected {expected} bytes, found {}", bytes.len()),
        ));
    }
    Ok(bytes[8..].iter().map(|&b| b as usize).collect())
}

/// Loads an IDX image file and its companion label file.
pub fn load_idx(
    images: impl AsRef<Path>,
    labels: impl AsRef<Path>,
    classes: Option<usize>,
    split: Split,
) -> Result<LabeledDataset> {
    let (ipath, lpath) = (images.as_ref(), labels.as_ref());
    let x = parse_idx_images(&read_all(ipath)?, ipath)?;
    let y = parse_idx_labels(&read_all(lpath)?, lpath)?;
    if x.nrows() != y.len() {
        return Err(format_err(
            lpath,
            format!("{} labels for {} images in {}", y.len(), x.nrows(), ipath.display()),
        ));
    }
    let m = classes.unwrap_or_else(|| y.iter().max().map_or(0, |c| c + 1));
    LabeledDataset::new(x, y, m, split)
}

fn default_delimiter() -> char {
    ','
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSchema {
    /// Zero-based index of the label column.
    pub label_column: usize,
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
    #[serde(default)]
    pub has_header: bool,
    /// Class load override; inferred as `max label + 1` otherwise.
    #[serde(default)]
    pub classes: Option<usize>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema {
            label_column: 0,
            delimiter: ',',
            has_header: false,
            classes: None,
        }
    }
}

fn delimiter_byte(schema: &CsvSchema) -> Result<u8> {
    u8::try_from(schema.delimiter)
        .map_err(|_| Error::Config(format!("delimiter {:?} is not a single byte", schema.delimiter)))
}

/// Reads a numeric table. Every non-label column becomes a feature, in file order.
pub fn load_csv_features(path: impl AsRef<Path>, schema: &CsvSchema, split: Split) -> Result<LabeledDataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter_byte(schema)?)
        .has_headers(schema.has_header)
        .flexible(true)
        .from_reader(file);

    let mut width: Option<usize> = None;
    let mut values: Vec<f64> = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| format_err(path, e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        match width {
            None => {
                if schema.label_column >= record.len() {
                    return Err(format_err(
                        path,
                        format!("line {line}: label column {} but only {} fields", schema.label_column, record.len()),
                    ));
                }
                width = Some(record.len());
            }
            Some(w) if w != record.len() => {
                return Err(format_err(
                    path,
                    format!("line {line}: ragged row with {} fields, expected {w}", record.len()),
                ));
            }
            _ => {}
        }
        for (j, cell) in record.iter().enumerate() {
            let cell = cell.trim();
            if j == schema.label_column {
                let label = cell.parse::<usize>().map_err(|_| {
                    format_err(path, format!("line {line}: label {cell:?} is not a class index"))
                })?;
                labels.push(label);
            } else {
                let v = cell.parse::<f64>().map_err(|_| {
                    format_err(path, format!("line {line}, column {j}: {cell:?} is not numeric"))
                })?;
                values.push(v);
            }
        }
    }
    let width = width.ok_or_else(|| format_err(path, "no data rows"))?;
    let x = Array2::from_shape_vec((labels.len(), width - 1), values)
        .map_err(|e| format_err(path, e.to_string()))?;
    let m = schema
        .classes
        .unwrap_or_else(|| labels.iter().max().map_or(0, |c| c + 1));
    LabeledDataset::new(x, labels, m, split).map_err(|e| match e {
        Error::Contract(msg) => format_err(path, msg),
        other => other,
    })
}

/// Writes a dataset in the layout [`load_csv_features`] reads back. Floats use
/// the shortest representation that round-trips exactly.
pub fn write_csv_features(dataset: &LabeledDataset, path: impl AsRef<Path>, schema: &CsvSchema) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let delim = schema.delimiter;
    let width = dataset.dim() + 1;
    if schema.label_column >= width {
        return Err(Error::Config(format!(
            "label column {} out of range for {width} columns",
            schema.label_column
        )));
    }
    let io = |e| Error::io(path, e);
    if schema.has_header {
        let names: Vec<String> = (0..width)
            .map(|j| match j.cmp(&schema.label_column) {
                std::cmp::Ordering::Equal => "label".to_string(),
                std::cmp::Ordering::Less => format!("f{j}"),
                std::cmp::Ordering::Greater => format!("f{}", j - 1),
            })
            .collect();
        writeln!(out, "{}", names.join(&delim.to_string())).map_err(io)?;
    }
    for (row, &label) in dataset.x.rows().into_iter().zip(&dataset.y) {
        let mut feats = row.iter();
        let mut cells = Vec::with_capacity(width);
        for j in 0..width {
            if j == schema.label_column {
                cells.push(label.to_string());
            } else {
                cells.push(format!("{}", feats.next().expect("row width")));
            }
        }
        writeln!(out, "{}", cells.join(&delim.to_string())).map_err(io)?;
    }
    out.flush().map_err(io)
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSplitSpec {
    /// Task count `Q`; must divide the class load.
    pub tasks: usize,
    pub order_seed: u64,
    /// When set, each task is cut into `classes_per_task * batches_per_class`
    /// batches instead of using the fixed batch size.
    #[serde(default)]
    pub batches_per_class: Option<usize>,
    /// Shuffle samples inside a task; otherwise they are sorted by class.
    #[serde(default = "default_true")]
    pub shuffle_within_task: bool,
}

impl TaskSplitSpec {
    pub fn classes_per_task(&self, classes: usize) -> Result<usize> {
        if self.tasks == 0 || !classes.is_multiple_of(self.tasks) {
            return Err(Error::contract(format!(
                "{} tasks do not divide a class load of {classes}",
                self.tasks
            )));
        }
        Ok(classes / self.tasks)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub index: usize,
    pub classes: Vec<usize>,
    /// Row indices into the source dataset, in stream order.
    pub rows: Vec<usize>,
}

/// Partitions the classes into `Q` disjoint groups in a seeded random order.
pub fn split_class_incremental(dataset: &LabeledDataset, spec: &TaskSplitSpec) -> Result<Vec<Task>> {
    let per_task = spec.classes_per_task(dataset.classes)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.order_seed);
    let mut order: Vec<usize> = (0..dataset.classes).collect();
    order.shuffle(&mut rng);

    let mut tasks = Vec::with_capacity(spec.tasks);
    for (q, group) in order.chunks(per_task).enumerate() {
        let mut classes = group.to_vec();
        classes.sort_unstable();
        let mut rows = dataset.rows_of_classes(&classes);
        if spec.shuffle_within_task {
            rows.shuffle(&mut rng);
        } else {
            // Stable: by class in the task's drawn order, then dataset order.
            rows.sort_by_key(|&i| group.iter().position(|&c| c == dataset.y[i]));
        }
        tasks.push(Task {
            index: q,
            classes,
            rows,
        });
    }
    Ok(tasks)
}

/// One learner-visible batch. Carries no task identity.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamBatch {
    pub x: Array2<f64>,
    pub y: Array2<f64>,
    /// Shorter than the nominal batch size (task tail).
    pub short: bool,
}

/// Task index per batch, readable only through a counting accessor.
#[derive(Debug, Default)]
pub struct BoundaryChannel {
    task_of_batch: Vec<usize>,
    tasks: Vec<Task>,
    reads: AtomicUsize,
}

impl Clone for BoundaryChannel {
    fn clone(&self) -> Self {
        BoundaryChannel {
            task_of_batch: self.task_of_batch.clone(),
            tasks: self.tasks.clone(),
            reads: AtomicUsize::new(self.reads.load(Ordering::Relaxed)),
        }
    }
}

impl BoundaryChannel {
    pub fn task_of(&self, batch: usize) -> usize {
        self.reads.fetch_add(1, Ordering::Relaxed);
        self.task_of_batch[batch]
    }

    /// True when `batch` is the last batch of its task.
    pub fn ends_task(&self, batch: usize) -> bool {
        self.reads.fetch_add(1, Ordering::Relaxed);
        batch + 1 == self.task_of_batch.len()
            || self.task_of_batch[batch + 1] != self.task_of_batch[batch]
    }

    /// The task list the stream was cut from.
    pub fn tasks(&self) -> &[Task] {
        self.reads.fetch_add(1, Ordering::Relaxed);
        &self.tasks
    }

    pub fn reads(&self) -> usize {
        self.reads.load(Ordering::Relaxed)
    }

    pub fn len(&self) -> usize {
        self.task_of_batch.len()
    }

    pub fn is_empty(&self) -> bool {
        self.task_of_batch.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct BatchStream {
    batches: Vec<StreamBatch>,
    boundaries: BoundaryChannel,
    pub batch_size: usize,
    pub classes: usize,
}

impl BatchStream {
    /// The sequence learners consume.
    pub fn learner_batches(&self) -> &[StreamBatch] {
        &self.batches
    }

    /// Side channel for evaluation only.
    pub fn boundaries(&self) -> &BoundaryChannel {
        &self.boundaries
    }

    pub fn len(&self) -> usize {
        self.batches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.batches.is_empty()
    }

    pub fn total_rows(&self) -> usize {
        self.batches.iter().map(|b| b.x.nrows()).sum()
    }

    /// SHA-256 over every batch's features and targets, hex encoded.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for b in &self.batches {
            h.update((b.x.nrows() as u64).to_le_bytes());
            for v in b.x.iter().chain(b.y.iter()) {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

/// Concatenates tasks in order and cuts each one into `b`-row batches; the
/// tail of a task becomes a short batch rather than spilling into the next.
pub fn batchify(dataset: &LabeledDataset, tasks: &[Task], b: usize) -> Result<BatchStream> {
    batchify_with(dataset, tasks, b, |_| b)
}

/// Like [`batchify`] with a per-task batch size.
pub fn batchify_with(
    dataset: &LabeledDataset,
    tasks: &[Task],
    nominal: usize,
    size_of: impl Fn(&Task) -> usize,
) -> Result<BatchStream> {
    let mut batches = Vec::new();
    let mut task_of_batch = Vec::new();
    for task in tasks {
        let b = size_of(task);
        if b == 0 {
            return Err(Error::contract("batch size must be >= 1"));
        }
        for chunk in task.rows.chunks(b) {
            let labels: Vec<usize> = chunk.iter().map(|&i| dataset.y[i]).collect();
            batches.push(StreamBatch {
                x: dataset.x.select(Axis(0), chunk),
                y: one_hot(&labels, dataset.classes),
                short: chunk.len() < b,
            });
            task_of_batch.push(task.index);
        }
    }
    if batches.is_empty() {
        return Err(Error::contract("stream has no batches"));
    }
    Ok(BatchStream {
        batches,
        boundaries: BoundaryChannel {
            task_of_batch,
            tasks: tasks.to_vec(),
            reads: AtomicUsize::new(0),
        },
        batch_size: nominal,
        classes: dataset.classes,
    })
}

/// Batch size that cuts `task` into `classes_per_task * batches_per_class` batches.
pub fn per_class_batch_size(task: &Task, batches_per_class: usize) -> usize {
    let pieces = (task.classes.len() * batches_per_class).max(1);
    task.rows.len().div_ceil(pieces).max(1)
}

/// Gaussian-cluster classification data: one isotropic unit-variance blob
/// per class, centred at `separation` times a random unit direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub dims: usize,
    pub separation: f64,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub seed: u64,
}

impl SyntheticSpec {
    /// Reads a spec from a TOML file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: SyntheticSpec =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes == 0 || self.dims == 0 || self.train_per_class == 0 || self.test_per_class == 0 {
            return Err(Error::Config("synthetic sizes must be >= 1".into()));
        }
        if !(self.separation >= 0.0 && self.separation.is_finite()) {
            return Err(Error::Config("synthetic separation must be finite and >= 0".into()));
        }
        Ok(())
    }

    pub fn generate(&self) -> Result<(LabeledDataset, LabeledDataset)> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let centres: Vec<Vec<f64>> = (0..self.classes)
            .map(|_| {
                let v: Vec<f64> = (0..self.dims).map(|_| StandardNormal.sample(&mut rng)).collect();
                let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-12);
                v.into_iter().map(|a| a / norm * self.separation).collect()
            })
            .collect();
        let draw = |per_class: usize, split: Split, rng: &mut ChaCha8Rng| {
            let n = per_class * self.classes;
            let mut x = Array2::zeros((n, self.dims));
            let mut y = Vec::with_capacity(n);
            for i in 0..n {
                let c = i % self.classes;
                for j in 0..self.dims {
                    let noise: f64 = StandardNormal.sample(rng);
                    x[[i, j]] = centres[c][j] + noise;
                }
                y.push(c);
            }
            LabeledDataset::new(x, y, self.classes, split)
        };
        let train = draw(self.train_per_class, Split::Train, &mut rng)?;
        let test = draw(self.test_per_class, Split::Test, &mut rng)?;
        Ok((train, test))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn toy(n_per_class: usize, classes: usize) -> LabeledDataset {
        let n = n_per_class * classes;
        let x = Array2::from_shape_fn((n, 2), |(i, j)| (i * 2 + j) as f64);
        let y = (0..n).map(|i| i % classes).collect();
        LabeledDataset::new(x, y, classes, Split::Train).unwrap()
    }

    fn idx_images(n: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend(IDX_IMAGES_MAGIC.to_be_bytes());
        b.extend(n.to_be_bytes());
        b.extend(rows.to_be_bytes());
        b.extend(cols.to_be_bytes());
        b.extend_from_slice(pixels);
        b
    }

    #[test]
    fn idx_images_scaled() {
        let bytes = idx_images(2, 1, 2, &[0, 255, 51, 102]);
        let x = parse_idx_images(&bytes, Path::new("mem")).unwrap();
        assert_eq!(x, array![[0.0, 1.0], [0.2, 0.4]]);
    }

    #[test]
    fn idx_magic_checked() {
        let mut bytes = idx_images(1, 1, 1, &[3]);
        bytes[3] = 0x01;
        let err = parse_idx_images(&bytes, Path::new("mem")).unwrap_err();
        assert!(err.to_string().contains("offset 0"), "{err}");

        let mut labels = Vec::new();
        labels.extend(IDX_LABELS_MAGIC.to_be_bytes());
        labels.extend(2u32.to_be_bytes());
        labels.extend([4u8, 9]);
        assert_eq!(parse_idx_labels(&labels, Path::new("mem")).unwrap(), vec![4, 9]);
        assert!(parse_idx_labels(&bytes, Path::new("mem")).is_err());
    }

    #[test]
    fn idx_truncation_reports_counts() {
        let bytes = idx_images(3, 2, 2, &[1, 2, 3]);
        let err = parse_idx_images(&bytes, Path::new("mem")).unwrap_err().to_string();
        assert!(err.contains("expected 28 bytes, found 19"), "{err}");
        let err = parse_idx_images(&bytes[..6], Path::new("mem")).unwrap_err().to_string();
        assert!(err.contains("truncated header"), "{err}");
    }

    #[test]
    fn split_five_tasks_of_two() {
        let ds = toy(3, 10);
        let spec = TaskSplitSpec {
            tasks: 5,
            order_seed: 1,
            batches_per_class: None,
            shuffle_within_task: true,
        };
        let tasks = split_class_incremental(&ds, &spec).unwrap();
        assert_eq!(tasks.len(), 5);
        let mut all: Vec<usize> = tasks.iter().flat_map(|t| t.classes.clone()).collect();
        assert!(tasks.iter().all(|t| t.classes.len() == 2 && t.rows.len() == 6));
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn split_degenerate_and_singletons() {
        let ds = toy(2, 100);
        let one = TaskSplitSpec { tasks: 1, order_seed: 0, batches_per_class: None, shuffle_within_task: true };
        let t = split_class_incremental(&ds, &one).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t[0].rows.len(), ds.len());
        let hundred = TaskSplitSpec { tasks: 100, ..one };
        let t = split_class_incremental(&ds, &hundred).unwrap();
        assert_eq!(t.len(), 100);
        assert!(t.iter().all(|t| t.classes.len() == 1));
    }

    #[test]
    fn split_requires_divisibility() {
        let ds = toy(2, 10);
        let spec = TaskSplitSpec { tasks: 3, order_seed: 0, batches_per_class: None, shuffle_within_task: true };
        assert!(matches!(split_class_incremental(&ds, &spec), Err(Error::Contract(_))));
    }

    #[test]
    fn sorted_mode_groups_by_class() {
        let ds = toy(4, 4);
        let spec = TaskSplitSpec { tasks: 2, order_seed: 3, batches_per_class: None, shuffle_within_task: false };
        let tasks = split_class_incremental(&ds, &spec).unwrap();
        for t in &tasks {
            let labels: Vec<usize> = t.rows.iter().map(|&i| ds.y[i]).collect();
            assert_eq!(labels[..4].iter().collect::<std::collections::HashSet<_>>().len(), 1);
        }
    }

    #[test]
    fn batch_counts_and_short_flag() {
        let ds = toy(25, 4);
        let spec = TaskSplitSpec { tasks: 1, order_seed: 0, batches_per_class: None, shuffle_within_task: true };
        let tasks = split_class_incremental(&ds, &spec).unwrap();
        let stream = batchify(&ds, &tasks, 25).unwrap();
        assert_eq!(stream.len(), 4);

        let ds = toy(15, 2);
        let tasks = split_class_incremental(&ds, &spec).unwrap();
        let stream = batchify(&ds, &tasks, 20).unwrap();
        let sizes: Vec<usize> = stream.learner_batches().iter().map(|b| b.x.nrows()).collect();
        assert_eq!(sizes, vec![20, 10]);
        assert!(!stream.learner_batches()[0].short);
        assert!(stream.learner_batches()[1].short);
    }

    #[test]
    fn one_hot_rows() {
        assert_eq!(one_hot(&[2], 4), array![[0.0, 0.0, 1.0, 0.0]]);
    }

    #[test]
    fn boundary_reads_are_counted() {
        let ds = toy(4, 4);
        let spec = TaskSplitSpec { tasks: 2, order_seed: 0, batches_per_class: None, shuffle_within_task: true };
        let tasks = split_class_incremental(&ds, &spec).unwrap();
        let stream = batchify(&ds, &tasks, 3).unwrap();
        let _ = stream.learner_batches();
        assert_eq!(stream.boundaries().reads(), 0);
        assert_eq!(stream.boundaries().task_of(0), 0);
        assert!(stream.boundaries().ends_task(2));
        assert_eq!(stream.boundaries().reads(), 2);
    }

    #[test]
    fn per_class_sizing() {
        let task = Task { index: 0, classes: vec![0, 1], rows: (0..101).collect() };
        assert_eq!(per_class_batch_size(&task, 5), 11);
    }

    #[test]
    fn synthetic_is_deterministic() {
        let spec = SyntheticSpec { classes: 3, dims: 4, separation: 2.0, train_per_class: 5, test_per_class: 2, seed: 9 };
        let (a, at) = spec.generate().unwrap();
        let (b, bt) = spec.generate().unwrap();
        assert_eq!(a, b);
        assert_eq!(at, bt);
        assert_eq!(a.len(), 15);
        assert_eq!(at.len(), 6);
    }
}
