//! Dataset ingestion and run persistence.
//!
//! CSV input follows RFC 4180. Traces are written as JSON lines: one header
//! object (schema tag, config echo, oracle summary, terminal status) followed
//! by one object per record. Floats use the shortest representation that
//! parses back to the identical bit pattern.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::solvers::{ComparisonTable, RunTrace, TraceHeader, TraceRecord};

/// Schema tag written in every trace header.
pub const TRACE_SCHEMA: &str = "crsqn-trace/1";

/// Floor applied to column standard deviations.
pub const SD_FLOOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("malformed row {row}: {reason}")]
    MalformedRow { row: u64, reason: String },
    #[error("row {row}: label `{value}` is not binary")]
    NonBinaryLabel { row: u64, value: String },
    #[error("file contains no data rows")]
    EmptyFile,
    #[error("label column `{0}` not found")]
    MissingLabelColumn(String),
    #[error("dataset is invalid: {0}")]
    Invalid(String),
    #[error("schema mismatch at line {line}: {reason}")]
    SchemaMismatch { line: usize, reason: String },
}

impl DataError {
    fn io(path: &Path, source: io::Error) -> Self {
        DataError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Feature matrix (row-major, `N x d`) with binary labels in `{0, 1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    n_rows: usize,
    n_cols: usize,
    labels: Vec<f64>,
    feature_names: Option<Vec<String>>,
    provenance: String,
}

impl Dataset {
    /// `labels` must be 0 or 1.
    pub fn new(
        features: Vec<f64>,
        n_cols: usize,
        labels: Vec<f64>,
        provenance: impl Into<String>,
    ) -> Result<Self, DataError> {
        if n_cols == 0 || labels.is_empty() {
            return Err(DataError::Invalid("need at least one row and one column".into()));
        }
        if features.len() != labels.len() * n_cols {
            return Err(DataError::Invalid(format!(
                "{} feature values do not form {} rows of {} columns",
                features.len(),
                labels.len(),
                n_cols
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(DataError::Invalid("non-finite feature value".into()));
        }
        if let Some(bad) = labels.iter().find(|&&v| v != 0.0 && v != 1.0) {
            return Err(DataError::Invalid(format!("label {bad} is not 0 or 1")));
        }
        Ok(Self {
            n_rows: labels.len(),
            features,
            n_cols,
            labels,
            feature_names: None,
            provenance: provenance.into(),
        })
    }

    pub fn with_feature_names(mut self, names: Vec<String>) -> Result<Self, DataError> {
        if names.len() != self.n_cols {
            return Err(DataError::Invalid(
                "feature name count differs from column count".into(),
            ));
        }
        self.feature_names = Some(names);
        Ok(self)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn label(&self, i: usize) -> f64 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n_rows).map(|i| self.features[i * self.n_cols + j]).collect()
    }

    pub fn feature_names(&self) -> Option<&[String]> {
        self.feature_names.as_deref()
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    /// Appends a constant-one feature column.
    pub fn with_intercept(&self) -> Dataset {
        let d = self.n_cols + 1;
        let mut features = Vec::with_capacity(self.n_rows * d);
        for i in 0..self.n_rows {
            features.extend_from_slice(self.row(i));
            features.push(1.0);
        }
        let feature_names = self.feature_names.clone().map(|mut n| {
            n.push("intercept".into());
            n
        });
        Dataset {
            features,
            n_rows: self.n_rows,
            n_cols: d,
            labels: self.labels.clone(),
            feature_names,
            provenance: format!("{}; intercept appended", self.provenance),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LabelColumn {
    Index(usize),
    Name(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsvOptions {
    pub label_column: LabelColumn,
    pub max_rows: Option<usize>,
    pub has_header: bool,
    /// Shuffle rows with this seed before taking the `max_rows` prefix.
    pub shuffle_seed: Option<u64>,
}

impl CsvOptions {
    pub fn new(label_column: LabelColumn) -> Self {
        Self {
            label_column,
            max_rows: None,
            has_header: true,
            shuffle_seed: None,
        }
    }
}

pub fn load_csv(path: &Path, options: &CsvOptions) -> Result<Dataset, DataError> {
    let file = File::open(path).map_err(|e| DataError::io(path, e))?;
    parse_csv(file, options, &path.display().to_string())
}

/// Parses CSV from any reader. Row numbers in errors are 1-based file lines.
pub fn parse_csv<R: Read>(reader: R, options: &CsvOptions, source: &str) -> Result<Dataset, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(options.has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let header: Option<Vec<String>> = if options.has_header {
        let h = rdr.headers().map_err(|e| DataError::MalformedRow {
            row: 1,
            reason: e.to_string(),
        })?;
        Some(h.iter().map(str::to_owned).collect())
    } else {
        None
    };

    let mut width: Option<usize> = header.as_ref().map(Vec::len);
    let mut label_idx: Option<usize> = match (&options.label_column, &header) {
        (LabelColumn::Index(i), _) => Some(*i),
        (LabelColumn::Name(name), Some(h)) => Some(
            h.iter()
                .position(|c| c == name)
                .ok_or_else(|| DataError::MissingLabelColumn(name.clone()))?,
        ),
        (LabelColumn::Name(name), None) => return Err(DataError::MissingLabelColumn(name.clone())),
    };
    if let (Some(w), Some(l)) = (width, label_idx) {
        if l >= w {
            return Err(DataError::MissingLabelColumn(l.to_string()));
        }
    }

    let take_prefix_while_reading = options.shuffle_seed.is_none();
    let mut rows: Vec<(Vec<f64>, f64)> = Vec::new();
    let mut raw_labels_seen = (false, false); // (-1 seen, 0 seen)
    for result in rdr.records() {
        if take_prefix_while_reading && options.max_rows.is_some_and(|m| rows.len() >= m) {
            break;
        }
        let record = result.map_err(|e| DataError::MalformedRow {
            row: e.position().map_or(0, |p| p.line()),
            reason: e.to_string(),
        })?;
        let row = record.position().map_or(0, |p| p.line());
        if record.len() == 1 && record.get(0) == Some("") {
            continue;
        }
        let w = *width.get_or_insert(record.len());
        if record.len() != w {
            return Err(DataError::MalformedRow {
                row,
                reason: format!("expected {w} fields, found {}", record.len()),
            });
        }
        let l = *label_idx.get_or_insert(0);
        if l >= w {
            return Err(DataError::MissingLabelColumn(l.to_string()));
        }
        let mut features = Vec::with_capacity(w - 1);
        let mut label = 0.0;
        for (j, field) in record.iter().enumerate() {
            if j == l {
                label = match field.parse::<f64>() {
                    Ok(1.0) => 1.0,
                    Ok(0.0) => {
                        raw_labels_seen.1 = true;
                        0.0
                    }
                    Ok(-1.0) => {
                        raw_labels_seen.0 = true;
                        0.0
                    }
                    _ => {
                        return Err(DataError::NonBinaryLabel {
                            row,
                            value: field.to_owned(),
                        })
                    }
                };
                if raw_labels_seen.0 && raw_labels_seen.1 {
                    return Err(DataError::NonBinaryLabel {
                        row,
                        value: format!("{field} (file mixes -1 and 0 labels)"),
                    });
                }
            } else {
                let v: f64 = field.parse().map_err(|_| DataError::MalformedRow {
                    row,
                    reason: format!("field {} (`{field}`) is not a number", j + 1),
                })?;
                if !v.is_finite() {
                    return Err(DataError::MalformedRow {
                        row,
                        reason: format!("field {} is not finite", j + 1),
                    });
                }
                features.push(v);
            }
        }
        rows.push((features, label));
    }

    if rows.is_empty() {
        return Err(DataError::EmptyFile);
    }
    let mut note = String::from("file order");
    if let Some(seed) = options.shuffle_seed {
        rows.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        note = format!("shuffled with seed {seed}");
    }
    if let Some(m) = options.max_rows {
        rows.truncate(m);
        note.push_str(&format!(", first {m} rows"));
    }
    let w = width.unwrap_or(1);
    let n_cols = w - 1;
    if n_cols == 0 {
        return Err(DataError::Invalid("no feature columns".into()));
    }
    let labels = rows.iter().map(|r| r.1).collect();
    let features = rows.into_iter().flat_map(|r| r.0).collect();
    let mut ds = Dataset::new(features, n_cols, labels, format!("{source} ({note})"))?;
    if let (Some(h), Some(l)) = (header, label_idx) {
        let names = h
            .into_iter()
            .enumerate()
            .filter(|(j, _)| *j != l)
            .map(|(_, n)| n)
            .collect();
        ds = ds.with_feature_names(names)?;
    }
    Ok(ds)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StandardizationStats {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

/// Shifts every column to zero mean and scales it to unit population
/// standard deviation. Constant columns become zero.
pub fn standardize(ds: &Dataset) -> Result<(Dataset, StandardizationStats), DataError> {
    if ds.n_rows < 2 {
        return Err(DataError::Invalid("standardization needs at least two rows".into()));
    }
    let n = ds.n_rows as f64;
    let d = ds.n_cols;
    let mut mean = vec![0.0; d];
    let mut sd = vec![0.0; d];
    for j in 0..d {
        let col = ds.column(j);
        let m = col.iter().sum::<f64>() / n;
        let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
        mean[j] = m;
        sd[j] = var.sqrt().max(SD_FLOOR);
    }
    let mut features = ds.features.clone();
    for row in features.chunks_mut(d) {
        for (j, v) in row.iter_mut().enumerate() {
            let z = (*v - mean[j]) / sd[j];
            // constant columns: residual rounding noise divided by the floor
            *v = if sd[j] == SD_FLOOR { 0.0 } else { z };
        }
    }
    let out = Dataset {
        features,
        n_rows: ds.n_rows,
        n_cols: d,
        labels: ds.labels.clone(),
        feature_names: ds.feature_names.clone(),
        provenance: format!("{}; standardized", ds.provenance),
    };
    Ok((out, StandardizationStats { mean, sd }))
}

/// Seeded binary-classification data: Gaussian features, labels drawn from a
/// logistic model with a Gaussian weight vector.
pub fn synthetic_logistic(n_rows: usize, n_cols: usize, seed: u64) -> Result<Dataset, DataError> {
    if n_rows == 0 || n_cols == 0 {
        return Err(DataError::Invalid("need at least one row and one column".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights: Vec<f64> = (0..n_cols)
        .map(|_| StandardNormal.sample(&mut rng))
        .map(|w: f64| w / (n_cols as f64).sqrt())
        .collect();
    let mut features = Vec::with_capacity(n_rows * n_cols);
    let mut labels = Vec::with_capacity(n_rows);
    for _ in 0..n_rows {
        let row: Vec<f64> = (0..n_cols).map(|_| StandardNormal.sample(&mut rng)).collect();
        let z: f64 = row.iter().zip(&weights).map(|(u, w)| u * w).sum();
        let p = 1.0 / (1.0 + (-z).exp());
        let draw: f64 = rand::Rng::random(&mut rng);
        labels.push(if draw < p { 1.0 } else { 0.0 });
        features.extend(row);
    }
    Dataset::new(
        features,
        n_cols,
        labels,
        format!("synthetic logistic (N={n_rows}, d={n_cols}, seed={seed})"),
    )
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeaderLine {
    schema: String,
    header: TraceHeader,
}

pub fn write_trace(trace: &RunTrace, path: &Path) -> Result<(), DataError> {
    let file = File::create(path).map_err(|e| DataError::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_trace_to(trace, &mut w).map_err(|e| DataError::io(path, e))?;
    w.flush().map_err(|e| DataError::io(path, e))
}

pub fn write_trace_to<W: Write>(trace: &RunTrace, w: &mut W) -> io::Result<()> {
    let header = HeaderLine {
        schema: TRACE_SCHEMA.to_owned(),
        header: trace.header.clone(),
    };
    serde_json::to_writer(&mut *w, &header)?;
    w.write_all(b"\n")?;
    for record in &trace.records {
        serde_json::to_writer(&mut *w, record)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_trace(path: &Path) -> Result<RunTrace, DataError> {
    let file = File::open(path).map_err(|e| DataError::io(path, e))?;
    read_trace_from(BufReader::new(file))
}

pub fn read_trace_from<R: BufRead>(reader: R) -> Result<RunTrace, DataError> {
    let mut lines = reader.lines().enumerate();
    let mismatch = |line: usize, reason: String| DataError::SchemaMismatch { line, reason };
    let (_, first) = lines.next().ok_or_else(|| mismatch(1, "missing header".into()))?;
    let first = first.map_err(|e| mismatch(1, e.to_string()))?;
    let header: HeaderLine = serde_json::from_str(&first).map_err(|e| mismatch(1, e.to_string()))?;
    if header.schema != TRACE_SCHEMA {
        return Err(mismatch(1, format!("unknown schema `{}`", header.schema)));
    }
    let mut records: Vec<TraceRecord> = Vec::new();
    for (idx, line) in lines {
        let n = idx + 1;
        let line = line.map_err(|e| mismatch(n, e.to_string()))?;
        let record: TraceRecord = serde_json::from_str(&line).map_err(|e| mismatch(n, e.to_string()))?;
        if records.last().is_some_and(|prev| prev.k >= record.k) {
            return Err(mismatch(n, "record k values must strictly increase".into()));
        }
        records.push(record);
    }
    Ok(RunTrace {
        header: header.header,
        records,
    })
}

/// Writes `algorithm,parameter,value,mean_loss,std,seeds` rows; the seed
/// list is space separated.
pub fn write_comparison_csv(table: &ComparisonTable, path: &Path) -> Result<(), DataError> {
    let file = File::create(path).map_err(|e| DataError::io(path, e))?;
    write_comparison_to(table, file).map_err(|e| DataError::io(path, e))
}

pub fn write_comparison_to<W: Write>(table: &ComparisonTable, w: W) -> io::Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["algorithm", "parameter", "value", "mean_loss", "std", "seeds"])?;
    for row in &table.rows {
        let seeds: Vec<String> = row.seeds.iter().map(u64::to_string).collect();
        wtr.write_record([
            row.algorithm.to_string(),
            row.parameter.clone(),
            row.value.to_string(),
            row.mean_loss.to_string(),
            row.std.to_string(),
            seeds.join(" "),
        ])?;
    }
    wtr.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts(label: LabelColumn) -> CsvOptions {
        CsvOptions::new(label)
    }

    #[test]
    fn parses_inline_csv() {
        let ds = parse_csv(
            "a,b,y\n1,2,0\n3,4,1\n5,6,1".as_bytes(),
            &opts(LabelColumn::Name("y".into())),
            "inline",
        )
        .unwrap();
        assert_eq!((ds.n_rows(), ds.n_cols()), (3, 2));
        assert_eq!(ds.row(1), &[3.0, 4.0]);
        assert_eq!(ds.labels(), &[0.0, 1.0, 1.0]);
        assert_eq!(ds.feature_names().unwrap(), &["a".to_string(), "b".to_string()]);
    }

    #[test]
    fn maps_minus_one_labels() {
        let ds = parse_csv(
            "y,a\n-1,2\n1,4\n-1,6".as_bytes(),
            &opts(LabelColumn::Index(0)),
            "inline",
        )
        .unwrap();
        assert_eq!(ds.labels(), &[0.0, 1.0, 0.0]);
        assert_eq!(ds.column(0), vec![2.0, 4.0, 6.0]);
    }

    #[test]
    fn reports_malformed_row_number() {
        let err = parse_csv(
            "a,b,y\n1,x,0\n3,4,1".as_bytes(),
            &opts(LabelColumn::Name("y".into())),
            "inline",
        )
        .unwrap_err();
        assert!(matches!(err, DataError::MalformedRow { row: 2, .. }), "{err:?}");

        let err = parse_csv(
            "a,b,y\n1,2,0\n3,1".as_bytes(),
            &opts(LabelColumn::Name("y".into())),
            "inline",
        )
        .unwrap_err();
        assert!(matches!(err, DataError::MalformedRow { row: 3, .. }), "{err:?}");
    }

    #[test]
    fn rejects_bad_labels_and_empty_files() {
        let err = parse_csv("a,y\n1,2".as_bytes(), &opts(LabelColumn::Index(1)), "inline").unwrap_err();
        assert!(matches!(err, DataError::NonBinaryLabel { row: 2, .. }));
        let err = parse_csv("a,y\n1,-1\n1,0".as_bytes(), &opts(LabelColumn::Index(1)), "inline").unwrap_err();
        assert!(matches!(err, DataError::NonBinaryLabel { row: 3, .. }));
        let err = parse_csv("a,y\n".as_bytes(), &opts(LabelColumn::Index(1)), "inline").unwrap_err();
        assert!(matches!(err, DataError::EmptyFile));
        let err = parse_csv("a,y\n1,0".as_bytes(), &opts(LabelColumn::Name("z".into())), "inline").unwrap_err();
        assert!(matches!(err, DataError::MissingLabelColumn(_)));
    }

    #[test]
    fn max_rows_takes_prefix() {
        let text = "a,y\n1,0\n2,1\n3,0\n4,1";
        let mut o = opts(LabelColumn::Index(1));
        for (max, expected) in [(2, vec![1.0, 2.0]), (10, vec![1.0, 2.0, 3.0, 4.0])] {
            o.max_rows = Some(max);
            assert_eq!(parse_csv(text.as_bytes(), &o, "inline").unwrap().column(0), expected);
        }
        o.max_rows = Some(3);
        o.shuffle_seed = Some(5);
        let a = parse_csv(text.as_bytes(), &o, "inline").unwrap();
        let b = parse_csv(text.as_bytes(), &o, "inline").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.n_rows(), 3);
    }

    #[test]
    fn headerless_input() {
        let mut o = opts(LabelColumn::Index(2));
        o.has_header = false;
        let ds = parse_csv("1,2,1\n3,4,0".as_bytes(), &o, "inline").unwrap();
        assert_eq!(ds.n_rows(), 2);
        assert!(ds.feature_names().is_none());
    }

    #[test]
    fn standardize_examples() {
        let ds = Dataset::new(vec![1.0, 5.0, 3.0, 5.0], 2, vec![0.0, 1.0], "t").unwrap();
        let (z, stats) = standardize(&ds).unwrap();
        assert_eq!(z.column(0), vec![-1.0, 1.0]);
        assert_eq!(z.column(1), vec![0.0, 0.0]);
        assert_eq!(stats.mean, vec![2.0, 5.0]);
        assert_eq!(stats.sd, vec![1.0, SD_FLOOR]);
        assert_eq!(z.labels(), ds.labels());

        let ds = Dataset::new(vec![5.0, 5.0, 5.0], 1, vec![0.0, 1.0, 1.0], "t").unwrap();
        assert_eq!(standardize(&ds).unwrap().0.column(0), vec![0.0; 3]);

        let single = Dataset::new(vec![1.0], 1, vec![1.0], "t").unwrap();
        assert!(standardize(&single).is_err());
    }

    #[test]
    fn standardize_is_idempotent() {
        let ds = synthetic_logistic(200, 5, 3).unwrap();
        let (once, _) = standardize(&ds).unwrap();
        let (twice, stats) = standardize(&once).unwrap();
        for j in 0..5 {
            assert!(stats.mean[j].abs() <= 1e-12);
            assert!((stats.sd[j] - 1.0).abs() <= 1e-12);
            for (a, b) in once.column(j).iter().zip(twice.column(j)) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn intercept_appends_constant_column() {
        let ds = Dataset::new(vec![1.0, 2.0], 1, vec![0.0, 1.0], "t").unwrap();
        let ds = ds.with_intercept();
        assert_eq!(ds.n_cols(), 2);
        assert_eq!(ds.column(1), vec![1.0, 1.0]);
    }

    #[test]
    fn synthetic_is_seeded() {
        let a = synthetic_logistic(50, 4, 9).unwrap();
        assert_eq!(a, synthetic_logistic(50, 4, 9).unwrap());
        assert_ne!(a, synthetic_logistic(50, 4, 10).unwrap());
        let ones = a.labels().iter().filter(|&&v| v == 1.0).count();
        assert!(ones > 0 && ones < 50);
    }
}
