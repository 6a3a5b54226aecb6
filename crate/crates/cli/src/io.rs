//! Atomic file writes and comma-delimited matrix files.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Array2;

use crate::error::{CliError, Result};

fn temp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".tmp");
    path.with_file_name(name)
}

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        }
    }
    let tmp = temp_path(path);
    let mut f = fs::File::create(&tmp).map_err(|e| CliError::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| CliError::io(&tmp, e))?;
    f.sync_all().map_err(|e| CliError::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

/// CSV text with one header row; floats use the shortest round-trip form.
pub fn matrix_csv(header: &[String], rows: &Array2<f64>) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for row in rows.rows() {
        let line = row.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",");
        out.push_str(&line);
        out.push('\n');
    }
    out
}

pub fn sample_header(d: usize) -> Vec<String> {
    (1..=d).map(|j| format!("x{j}")).collect()
}

pub fn write_samples(path: &Path, xs: &Array2<f64>) -> Result<()> {
    write_atomic(path, matrix_csv(&sample_header(xs.ncols()), xs).as_bytes())
}

/// Reads a numeric CSV with a header row. Returns the header and the rows.
pub fn read_matrix(path: &Path) -> Result<(Vec<String>, Array2<f64>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::io(path, e))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| CliError::io(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let d = header.len();
    let mut flat = Vec::new();
    let mut rows = 0;
    for record in reader.records() {
        let record = record.map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let line = record.position().map_or(0, |p| p.line());
        for field in record.iter() {
            let v: f64 = field.parse().map_err(|_| {
                CliError::Data(format!("{}: line {line}: non-numeric field {field:?}", path.display()))
            })?;
            flat.push(v);
        }
        rows += 1;
    }
    let m = Array2::from_shape_vec((rows, d), flat).expect("csv enforces equal record lengths");
    Ok((header, m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        let xs = array![[0.1, -1e-300], [1.0 / 3.0, 2.5e17]];
        write_samples(&p, &xs).unwrap();
        let (h, back) = read_matrix(&p).unwrap();
        assert_eq!(h, vec!["x1", "x2"]);
        assert_eq!(back, xs);
        assert!(!dir.path().join("s.csv.tmp").exists());
    }

    #[test]
    fn header_only_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.csv");
        write_samples(&p, &Array2::zeros((0, 2))).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "x1,x2\n");
        assert_eq!(read_matrix(&p).unwrap().1.dim(), (0, 2));
    }

    #[test]
    fn bad_fields_name_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.csv");
        std::fs::write(&p, "x1,x2\n1,2\n3,abc\n").unwrap();
        let err = read_matrix(&p).unwrap_err().to_string();
        assert!(err.contains("line 3"), "{err}");
        std::fs::write(&p, "x1,x2\n1,2\n3\n").unwrap();
        assert!(read_matrix(&p).is_err());
    }
}
