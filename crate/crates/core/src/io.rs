//! CSV ingestion for benchmark-style tables (`date,col1,col2,...`) and the
//! synthetic dataset files.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{LstdError, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum TimestampColumn {
    /// Treat the first column as a timestamp when its header is a common time
    /// name (`t`, `date`, `time`, `timestamp`, `datetime`) or its first value is
    /// not numeric.
    #[default]
    Auto,
    Present,
    Absent,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvOptions {
    pub timestamp: TimestampColumn,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetTable {
    pub columns: Vec<String>,
    /// `T x D`.
    pub values: Array2<f64>,
    pub timestamps: Option<Vec<String>>,
}

impl DatasetTable {
    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }
}

const TIME_NAMES: [&str; 5] = ["t", "date", "time", "timestamp", "datetime"];

pub fn load_csv(path: &Path, options: &CsvOptions) -> Result<DatasetTable> {
    let text = fs::read_to_string(path).map_err(|e| LstdError::io(path, e))?;
    let err = |line: usize, msg: String| LstdError::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| err(1, "empty file".into()))?;
    let header: Vec<String> = header.split(',').map(|h| h.trim().to_string()).collect();
    let body: Vec<(usize, &str)> = lines.collect();
    if body.is_empty() {
        return Err(err(2, "no data rows".into()));
    }

    let has_time = match options.timestamp {
        TimestampColumn::Present => true,
        TimestampColumn::Absent => false,
        TimestampColumn::Auto => {
            TIME_NAMES.contains(&header[0].to_ascii_lowercase().as_str())
                || body[0].1.split(',').next().is_some_and(|f| f.trim().parse::<f64>().is_err())
        }
    };
    let skip = usize::from(has_time);
    let columns: Vec<String> = header[skip..].to_vec();
    if columns.is_empty() {
        return Err(err(1, "no value columns".into()));
    }

    let mut values = Vec::with_capacity(body.len() * columns.len());
    let mut timestamps = has_time.then(|| Vec::with_capacity(body.len()));
    let mut non_finite: Vec<usize> = Vec::new();
    for &(k, line) in &body {
        let lineno = k + 1;
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != header.len() {
            return Err(err(
                lineno,
                format!("expected {} fields, found {}", header.len(), fields.len()),
            ));
        }
        if let Some(ts) = timestamps.as_mut() {
            ts.push(fields[0].to_string());
        }
        let mut finite = true;
        for (c, f) in fields[skip..].iter().enumerate() {
            let v: f64 = f
                .parse()
                .map_err(|_| err(lineno, format!("column {}: not a number: {f:?}", columns[c])))?;
            finite &= v.is_finite();
            values.push(v);
        }
        if !finite {
            non_finite.push(lineno);
        }
    }
    if let Some(&first) = non_finite.first() {
        return Err(err(
            first,
            format!(
                "non-finite value; {} row(s) rejected, first at line {first}",
                non_finite.len()
            ),
        ));
    }
    let rows = body.len();
    Ok(DatasetTable {
        values: Array2::from_shape_vec((rows, columns.len()), values).expect("rectangular"),
        columns,
        timestamps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn timestamp_column_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "a.csv",
            "date,a,b\n2020-01-01,1.0,2.0\n2020-01-02,3.0,4.0\n2020-01-03,5.0,6.0\n",
        );
        let t = load_csv(&p, &CsvOptions::default()).unwrap();
        assert_eq!(t.len(), 3);
        assert_eq!(t.dim(), 2);
        assert_eq!(t.timestamps.as_ref().unwrap()[2], "2020-01-03");
        assert_eq!(t.values[[1, 1]], 4.0);

        let p = write(dir.path(), "b.csv", "a,b,c\n1,2,3\n4,5,6\n7,8,9\n");
        let t = load_csv(&p, &CsvOptions::default()).unwrap();
        assert_eq!((t.len(), t.dim()), (3, 3));
        assert!(t.timestamps.is_none());
    }

    #[test]
    fn nan_row_is_reported_with_its_line() {
        let dir = tempfile::tempdir().unwrap();
        let mut text = String::from("t,x0,x1\n");
        for r in 0..30 {
            if r == 16 {
                text.push_str(&format!("{r},nan,1.0\n"));
            } else {
                text.push_str(&format!("{r},0.5,1.0\n"));
            }
        }
        let p = write(dir.path(), "n.csv", &text);
        match load_csv(&p, &CsvOptions::default()) {
            Err(LstdError::Parse { line, msg, .. }) => {
                assert_eq!(line, 18);
                assert!(msg.contains("1 row(s)"), "{msg}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_and_empty_files_fail() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "e.csv", "");
        assert!(load_csv(&p, &CsvOptions::default()).is_err());
        let p = write(dir.path(), "m.csv", "a,b\n1,2\n3\n");
        match load_csv(&p, &CsvOptions::default()) {
            Err(LstdError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let p = write(dir.path(), "x.csv", "a,b\n1,2\n3,abc\n");
        assert!(matches!(load_csv(&p, &CsvOptions::default()), Err(LstdError::Parse { line: 3, .. })));
    }

    #[test]
    fn missing_file_is_an_io_error() {
        let err = load_csv(Path::new("/nonexistent/x.csv"), &CsvOptions::default()).unwrap_err();
        assert_eq!(err.kind(), "io");
    }
}
