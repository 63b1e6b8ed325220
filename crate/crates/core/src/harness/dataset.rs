//! CSV datasets: one observation per row, fields are `vec(X_i)` in column-major order.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::covariance::MatrixSample;
use crate::error::{Result, SeparError};

pub fn read_dataset(path: impl AsRef<Path>, p1: usize, p2: usize) -> Result<MatrixSample> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
    read_dataset_from(file, p1, p2)
}

/// A first row that does not parse as numbers is treated as a header.
pub fn read_dataset_from(reader: impl Read, p1: usize, p2: usize) -> Result<MatrixSample> {
    if p1 == 0 || p2 == 0 {
        return Err(SeparError::InvalidInput(format!("dimensions must be positive, got {p1} x {p2}")));
    }
    let mut csv = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);
    let width = p1 * p2;
    let mut rows = Vec::new();
    for (idx, record) in csv.records().enumerate() {
        let line = idx + 1;
        let record = record.map_err(|e| {
            let line = e.position().map_or(line, |p| p.line() as usize);
            SeparError::Parse { line, message: e.to_string() }
        })?;
        let line = record.position().map_or(line, |p| p.line() as usize);
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        let parsed: std::result::Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
        let values = match parsed {
            Ok(v) => v,
            Err(_) if rows.is_empty() && idx == 0 => continue,
            Err(e) => {
                let bad = record.iter().find(|f| f.parse::<f64>().is_err()).unwrap_or_default();
                return Err(SeparError::Parse { line, message: format!("field '{bad}' is not a number ({e})") });
            }
        };
        if values.len() != width {
            return Err(SeparError::DimensionMismatch(format!(
                "line {line}: expected {width} fields for a {p1} x {p2} observation, found {}",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(SeparError::Parse { line, message: format!("non-finite value {v}") });
        }
        rows.push(values);
    }
    if rows.is_empty() {
        return Err(SeparError::Parse { line: 1, message: "no data rows".into() });
    }
    MatrixSample::from_vec_rows(p1, p2, &rows)
}

pub fn write_dataset(path: impl AsRef<Path>, sample: &MatrixSample) -> Result<()> {
    let mut file = File::create(path)?;
    write_dataset_to(&mut file, sample)?;
    file.flush()?;
    Ok(())
}

/// Values are written in shortest round-trip form, so reading back is exact.
pub fn write_dataset_to(writer: impl Write, sample: &MatrixSample) -> Result<()> {
    let mut csv = csv::Writer::from_writer(writer);
    for x in sample.matrices() {
        csv.write_record(x.iter().map(|v| v.to_string())).map_err(csv_io)?;
    }
    csv.flush()?;
    Ok(())
}

fn csv_io(e: csv::Error) -> SeparError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => SeparError::Io(io),
        other => SeparError::InvalidInput(format!("{other:?}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::samplers::sample_matrix_t;

    #[test]
    fn column_major_rows() {
        let s = read_dataset_from("1,2,3,4\n".as_bytes(), 2, 2).unwrap();
        let x = &s.matrices()[0];
        assert_eq!((x[(0, 0)], x[(1, 0)], x[(0, 1)], x[(1, 1)]), (1.0, 2.0, 3.0, 4.0));
    }

    #[test]
    fn header_is_skipped() {
        let s = read_dataset_from("a,b,c,d\n1,2,3,4\n5,6,7,8\n".as_bytes(), 2, 2).unwrap();
        assert_eq!(s.n(), 2);
    }

    #[test]
    fn empty_input_is_parse_error() {
        assert!(matches!(read_dataset_from("".as_bytes(), 2, 2), Err(SeparError::Parse { .. })));
        assert!(matches!(read_dataset_from("x,y,z,w\n".as_bytes(), 2, 2), Err(SeparError::Parse { .. })));
    }

    #[test]
    fn bad_field_reports_line() {
        let err = read_dataset_from("1,2,3,4\n5,6,oops,8\n".as_bytes(), 2, 2).unwrap_err();
        match err {
            SeparError::Parse { line, message } => {
                assert_eq!(line, 2);
                assert!(message.contains("oops"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn wrong_width_is_dimension_mismatch() {
        let err = read_dataset_from("1,2,3,4\n1,2,3\n".as_bytes(), 2, 2).unwrap_err();
        assert!(matches!(err, SeparError::DimensionMismatch(ref m) if m.contains("line 2")), "{err:?}");
    }

    #[test]
    fn round_trip_is_exact() {
        let s = sample_matrix_t(25, 3, 2, 5.0, 3).unwrap();
        let mut buf = Vec::new();
        write_dataset_to(&mut buf, &s).unwrap();
        let back = read_dataset_from(buf.as_slice(), 3, 2).unwrap();
        assert_eq!(back.matrices(), s.matrices());

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        write_dataset(&path, &s).unwrap();
        assert_eq!(read_dataset(&path, 3, 2).unwrap().matrices(), s.matrices());
    }
}
