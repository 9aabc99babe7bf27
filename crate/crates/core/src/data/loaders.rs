//! Readers for the UCI-HAR text layout and generic numeric CSV files.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::Dataset;
use crate::error::{Error, Result};

pub const UCIHAR_FEATURES: usize = 561;
pub const UCIHAR_CLASSES: usize = 6;

/// Load `train/X_train.txt`, `train/y_train.txt` and the `test/` counterparts.
pub fn load_ucihar(dir: &Path) -> Result<(Dataset, Dataset)> {
    let train = load_ucihar_split(dir, "train")?;
    let test = load_ucihar_split(dir, "test")?;
    Ok((train, test))
}

/// Load only the label file of one split (`"train"` or `"test"`).
pub fn load_ucihar_labels(dir: &Path, split: &str) -> Result<Vec<u32>> {
    let path = dir.join(split).join(format!("y_{split}.txt"));
    let text = read(&path)?;
    let mut labels = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let y: u32 = line.parse().map_err(|_| {
            Error::data(format!(
                "{}:{}: label {line:?} is not an integer",
                path.display(),
                lineno + 1
            ))
        })?;
        if !(1..=UCIHAR_CLASSES as u32).contains(&y) {
            return Err(Error::data(format!(
                "{}:{}: label {y} outside 1..=6",
                path.display(),
                lineno + 1
            )));
        }
        labels.push(y);
    }
    Ok(labels)
}

fn load_ucihar_split(dir: &Path, split: &str) -> Result<Dataset> {
    let x_path = dir.join(split).join(format!("X_{split}.txt"));
    let text = read(&x_path)?;
    let mut features = Vec::new();
    let mut rows = 0;
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let before = features.len();
        for tok in line.split_whitespace() {
            let v: f64 = tok.parse().map_err(|_| {
                Error::data(format!(
                    "{}:{}: cannot parse {tok:?}",
                    x_path.display(),
                    lineno + 1
                ))
            })?;
            features.push(v);
        }
        let got = features.len() - before;
        if got != UCIHAR_FEATURES {
            return Err(Error::data(format!(
                "{}:{}: row has {got} values, expected {UCIHAR_FEATURES}",
                x_path.display(),
                lineno + 1
            )));
        }
        rows += 1;
    }
    let labels = load_ucihar_labels(dir, split)?;
    if labels.len() != rows {
        return Err(Error::data(format!(
            "{split}: {rows} feature rows but {} labels",
            labels.len()
        )));
    }
    Dataset::new(features, labels, UCIHAR_FEATURES, UCIHAR_CLASSES)
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Load a numeric CSV with a header row. `label_column` is a header name or a
/// zero-based column index. Labels are remapped to `1..=K` in ascending order
/// of their original values; the mapping is kept on the dataset.
pub fn load_csv(path: &Path, label_column: &str) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let label_idx = headers
        .iter()
        .position(|h| h.trim() == label_column)
        .or_else(|| {
            label_column
                .parse::<usize>()
                .ok()
                .filter(|&i| i < headers.len())
        })
        .ok_or_else(|| {
            Error::data(format!(
                "{}: no label column {label_column:?}",
                path.display()
            ))
        })?;
    let dim = headers.len() - 1;
    if dim == 0 {
        return Err(Error::data(format!(
            "{}: no feature columns",
            path.display()
        )));
    }

    let mut features = Vec::new();
    let mut raw_labels = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = row + 2;
        if record.len() != headers.len() {
            return Err(Error::data(format!(
                "{}:{line}: {} fields, header has {}",
                path.display(),
                record.len(),
                headers.len()
            )));
        }
        for (col, cell) in record.iter().enumerate() {
            let cell = cell.trim();
            if col == label_idx {
                let y = cell
                    .parse::<i64>()
                    .or_else(|_| {
                        // Accept integral floats such as "3.0".
                        cell.parse::<f64>()
                            .ok()
                            .filter(|v| v.fract() == 0.0 && v.abs() < 9.0e15)
                            .map(|v| v as i64)
                            .ok_or(())
                    })
                    .map_err(|_| {
                        Error::data(format!(
                            "{}:{line}: label {cell:?} is not an integer",
                            path.display()
                        ))
                    })?;
                raw_labels.push(y);
            } else {
                let v: f64 = cell.parse().map_err(|_| {
                    Error::data(format!(
                        "{}:{line}: column {col} value {cell:?} is not numeric",
                        path.display()
                    ))
                })?;
                features.push(v);
            }
        }
    }
    if raw_labels.is_empty() {
        return Err(Error::data(format!("{}: no data rows", path.display())));
    }

    let values: Vec<i64> = raw_labels
        .iter()
        .copied()
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let index: BTreeMap<i64, u32> = values
        .iter()
        .enumerate()
        .map(|(i, &v)| (v, i as u32 + 1))
        .collect();
    let labels = raw_labels.iter().map(|v| index[v]).collect();
    let num_classes = values.len().max(2);
    Ok(Dataset::new(features, labels, dim, num_classes)?.with_label_values(values))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::data(format!("{}: {e}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(dir: &Path, rel: &str, body: &str) {
        let p = dir.join(rel);
        fs::create_dir_all(p.parent().unwrap()).unwrap();
        fs::File::create(p)
            .unwrap()
            .write_all(body.as_bytes())
            .unwrap();
    }

    fn har_row(n: usize, v: f64) -> String {
        vec![format!("{v:e}"); n].join(" ")
    }

    #[test]
    fn ucihar_small_fixture() {
        let tmp = tempfile::tempdir().unwrap();
        let d = tmp.path();
        write(
            d,
            "train/X_train.txt",
            &format!("  {}\n {}\n", har_row(561, 0.5), har_row(561, -0.25)),
        );
        write(d, "train/y_train.txt", "1\n6\n");
        write(d, "test/X_test.txt", &format!("{}\n", har_row(561, 0.1)));
        write(d, "test/y_test.txt", "3\n");
        let (train, test) = load_ucihar(d).unwrap();
        assert_eq!((train.len(), train.dim(), train.num_classes()), (2, 561, 6));
        assert_eq!(train.labels(), &[1, 6]);
        assert_eq!(test.len(), 1);
        assert_eq!(train.features(1)[560], -0.25);
    }

    #[test]
    fn ucihar_short_row_names_line() {
        let tmp = tempfile::tempdir().unwrap();
        let d = tmp.path();
        write(
            d,
            "train/X_train.txt",
            &format!("{}\n{}\n", har_row(561, 0.5), har_row(560, 0.5)),
        );
        write(d, "train/y_train.txt", "1\n2\n");
        let err = load_ucihar(d).unwrap_err().to_string();
        assert!(err.contains("X_train.txt:2"), "{err}");
        assert!(err.contains("560"), "{err}");
    }

    #[test]
    fn ucihar_bad_label() {
        let tmp = tempfile::tempdir().unwrap();
        let d = tmp.path();
        write(d, "train/X_train.txt", &format!("{}\n", har_row(561, 0.5)));
        write(d, "train/y_train.txt", "7\n");
        assert!(matches!(load_ucihar(d), Err(Error::Data(_))));
    }

    #[test]
    fn ucihar_missing_files() {
        let tmp = tempfile::tempdir().unwrap();
        assert!(matches!(load_ucihar(tmp.path()), Err(Error::Io { .. })));
    }

    #[test]
    fn csv_label_remap() {
        let tmp = tempfile::tempdir().unwrap();
        let p = tmp.path().join("a.csv");
        fs::write(&p, "f1,f2,label\n1,2,5\n3,4,9\n5,6,5\n").unwrap();
        let ds = load_csv(&p, "label").unwrap();
        assert_eq!(ds.labels(), &[1, 2, 1]);
        assert_eq!(ds.num_classes(), 2);
        assert_eq!(ds.label_values(), Some(&[5i64, 9][..]));
        assert_eq!(ds.features(1), &[3.0, 4.0]);
        // By index too.
        assert_eq!(load_csv(&p, "2").unwrap().labels(), &[1, 2, 1]);
    }

    #[test]
    fn csv_header_only_and_bad_cells() {
        let tmp = tempfile::tempdir().unwrap();
        let p = tmp.path().join("h.csv");
        fs::write(&p, "a,b,label\n").unwrap();
        assert!(matches!(load_csv(&p, "label"), Err(Error::Data(_))));
        fs::write(&p, "a,b,label\n1,x,1\n").unwrap();
        assert!(matches!(load_csv(&p, "label"), Err(Error::Data(_))));
        fs::write(&p, "a,b,label\n1,2,1\n1,2\n").unwrap();
        assert!(matches!(load_csv(&p, "label"), Err(Error::Data(_))));
    }

    #[test]
    fn csv_100_by_4() {
        let tmp = tempfile::tempdir().unwrap();
        let p = tmp.path().join("r.csv");
        let mut body = String::from("a,b,c,y\n");
        for i in 0..100 {
            body.push_str(&format!(
                "{},{},{},{}\n",
                i as f64 * 0.5,
                -(i as f64),
                1.0 / (i + 1) as f64,
                i % 3
            ));
        }
        fs::write(&p, body).unwrap();
        let ds = load_csv(&p, "y").unwrap();
        assert_eq!((ds.len(), ds.dim(), ds.num_classes()), (100, 3, 3));
    }
}
