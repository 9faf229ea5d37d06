use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;

use super::{PointCloud, ReferenceSet, SpdFactor, TestResult};
use crate::error::{Error, Result};

/// Parsing options for numeric CSV files.
#[derive(Debug, Clone, Copy)]
pub struct CsvOptions {
    pub delimiter: u8,
    /// Skip the first line.
    pub header: bool,
}

impl Default for CsvOptions {
    fn default() -> Self {
        Self {
            delimiter: b',',
            header: false,
        }
    }
}

/// Read a rectangular numeric CSV. Rows are numbered from 1 as they appear in
/// the file (a skipped header counts as line 1).
pub fn read_matrix_csv(path: &Path, opts: CsvOptions) -> Result<(Vec<f64>, usize, usize)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(opts.delimiter)
        .has_headers(opts.header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);

    let mut data = Vec::new();
    let mut width: Option<usize> = None;
    let mut rows = 0usize;
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            row: e.position().map(|p| p.line() as usize).unwrap_or(0),
            message: e.to_string(),
        })?;
        let row = record.position().map(|p| p.line() as usize).unwrap_or(rows + 1);
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        let expected = *width.get_or_insert(record.len());
        if record.len() != expected {
            return Err(Error::RaggedRow {
                path: path.to_path_buf(),
                row,
                expected,
                found: record.len(),
            });
        }
        for (col, field) in record.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                row,
                message: format!("field {} is not numeric: {field:?}", col + 1),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    row,
                    message: format!("field {} is not finite", col + 1),
                });
            }
            data.push(v);
        }
        rows += 1;
    }
    match width {
        Some(d) if rows > 0 => Ok((data, rows, d)),
        _ => Err(Error::NoRows {
            path: path.to_path_buf(),
        }),
    }
}

pub fn load_point_cloud(path: &Path, opts: CsvOptions) -> Result<PointCloud> {
    let (data, n, d) = read_matrix_csv(path, opts)?;
    PointCloud::new(data, n, d)
}

/// Write rows of numbers, shortest round-trip float formatting.
pub fn write_matrix_csv<'a, I>(path: &Path, header: Option<&[&str]>, rows: I) -> Result<()>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let emit = || -> std::io::Result<()> {
        if let Some(h) = header {
            writeln!(w, "{}", h.join(","))?;
        }
        for row in rows {
            let mut first = true;
            for v in row {
                if !first {
                    w.write_all(b",")?;
                }
                write!(w, "{v}")?;
                first = false;
            }
            w.write_all(b"\n")?;
        }
        w.flush()
    };
    emit().map_err(|e| Error::io(path, e))
}

/// Reference points and their covariance field as two row-aligned CSVs:
/// `refs` is `n_R × d`, `covs` is `n_R × d²` (row-major Σ_r per row).
/// Eigenvalues are raised to `reg_floor`; weights are uniform.
pub fn load_reference_set(refs: &Path, covs: &Path, opts: CsvOptions, reg_floor: f64) -> Result<ReferenceSet> {
    let points = load_point_cloud(refs, opts)?;
    let (cdata, n_c, width) = read_matrix_csv(covs, opts)?;
    let d = points.dim();
    if n_c != points.len() {
        return Err(Error::DimensionMismatch {
            expected: points.len(),
            found: n_c,
        });
    }
    if width != d * d {
        return Err(Error::DimensionMismatch {
            expected: d * d,
            found: width,
        });
    }
    let covariances = cdata
        .chunks_exact(d * d)
        .map(|row| SpdFactor::from_symmetric(&DMatrix::from_row_slice(d, d, row), reg_floor))
        .collect::<Result<Vec<_>>>()?;
    ReferenceSet::uniform(points, covariances)
}

pub fn save_reference_set(refset: &ReferenceSet, refs: &Path, covs: &Path) -> Result<()> {
    write_matrix_csv(refs, None, refset.points().points())?;
    let rows: Vec<Vec<f64>> = refset
        .covariances()
        .iter()
        .map(|c| {
            let m = c.matrix();
            let d = m.nrows();
            (0..d * d).map(|k| m[(k / d, k % d)]).collect()
        })
        .collect();
    write_matrix_csv(covs, None, rows.iter().map(|r| r.as_slice()))
}

pub fn save_result(result: &TestResult, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, result)?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_result(path: &Path) -> Result<TestResult> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn parses_small_csv() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "a.csv", "0,0\n1,0\n0,1\n");
        let pc = load_point_cloud(&p, CsvOptions::default()).unwrap();
        assert_eq!((pc.len(), pc.dim()), (3, 2));
        assert_eq!(pc.point(2), &[0.0, 1.0]);
    }

    #[test]
    fn header_is_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "a.csv", "x,y\n1,2\n");
        let opts = CsvOptions {
            header: true,
            ..Default::default()
        };
        let pc = load_point_cloud(&p, opts).unwrap();
        assert_eq!(pc.as_slice(), &[1.0, 2.0]);
    }

    #[test]
    fn empty_file_reports_no_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "e.csv", "");
        let err = load_point_cloud(&p, CsvOptions::default()).unwrap_err();
        assert!(err.to_string().contains("no rows"), "{err}");
    }

    #[test]
    fn non_numeric_names_row() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "bad.csv", "1,a\n");
        match load_point_cloud(&p, CsvOptions::default()).unwrap_err() {
            Error::Parse { row, .. } => assert_eq!(row, 1),
            e => panic!("unexpected {e}"),
        }
        let p = write(&dir, "bad2.csv", "1,2\n3,x\n");
        match load_point_cloud(&p, CsvOptions::default()).unwrap_err() {
            Error::Parse { row, .. } => assert_eq!(row, 2),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn ragged_rows_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "r.csv", "1,2\n3\n");
        match load_point_cloud(&p, CsvOptions::default()).unwrap_err() {
            Error::RaggedRow {
                row, expected, found, ..
            } => assert_eq!((row, expected, found), (2, 2, 1)),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = load_point_cloud(Path::new("/nonexistent/x.csv"), CsvOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn result_json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let r = TestResult {
            statistic: 0.0,
            p_value: 1.0 / 3.0,
            threshold_t_alpha: 0.1 + 0.2,
            reject: false,
            alpha: 0.05,
            n_boot: 2,
            seed: 7,
            null_samples: vec![1e-300, std::f64::consts::PI],
        };
        let p = dir.path().join("r.json");
        save_result(&r, &p).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert!(text.contains("\"statistic\": 0"), "{text}");
        for key in [
            "p_value",
            "threshold",
            "reject",
            "alpha",
            "n_boot",
            "seed",
            "null_samples",
        ] {
            assert!(text.contains(&format!("\"{key}\"")), "missing {key}");
        }
        assert_eq!(load_result(&p).unwrap(), r);
    }

    #[test]
    fn unwritable_destination_errors() {
        let r = TestResult {
            statistic: 0.0,
            p_value: 1.0,
            threshold_t_alpha: 0.0,
            reject: false,
            alpha: 0.05,
            n_boot: 0,
            seed: 0,
            null_samples: vec![],
        };
        assert!(save_result(&r, Path::new("/nonexistent-dir/r.json")).is_err());
    }

    #[test]
    fn reference_set_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let pts = PointCloud::from_rows(&[[0.0, 0.0], [1.0, 2.0]]).unwrap();
        let c1 = SpdFactor::from_symmetric(&DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]), 1e-9).unwrap();
        let rs = ReferenceSet::uniform(pts, vec![c1.clone(), SpdFactor::identity(2)]).unwrap();
        let (a, b) = (dir.path().join("r.csv"), dir.path().join("c.csv"));
        save_reference_set(&rs, &a, &b).unwrap();
        let back = load_reference_set(&a, &b, CsvOptions::default(), 1e-9).unwrap();
        assert_eq!(back.points(), rs.points());
        assert!((back.covariances()[0].matrix() - c1.matrix()).amax() < 1e-12);
    }
}
