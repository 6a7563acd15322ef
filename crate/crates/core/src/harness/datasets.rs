use std::fs::File;
use std::io::{BufReader, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::derive_seed;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::model::{build_model, Activation, ModelConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    /// Outputs of a fixed random tanh network plus Gaussian noise.
    TeacherRegression,
    /// Two Gaussian blobs at distance 10 with ±1 labels; `noise` is the blob
    /// standard deviation.
    TwoClusterClassification,
    /// Linear targets with Gaussian noise.
    RandomRegression,
}

impl DatasetKind {
    pub fn name(self) -> &'static str {
        match self {
            DatasetKind::TeacherRegression => "teacher-regression",
            DatasetKind::TwoClusterClassification => "two-cluster-classification",
            DatasetKind::RandomRegression => "random-regression",
        }
    }
}

pub const TEACHER_HIDDEN_WIDTH: usize = 16;
pub const CLUSTER_SEPARATION: f64 = 10.0;

/// The network that labels teacher-regression data for `(d, seed)`.
pub fn teacher_config(d: usize, seed: u64) -> ModelConfig {
    ModelConfig {
        input_dim: d,
        hidden_widths: vec![TEACHER_HIDDEN_WIDTH],
        activation: Activation::Tanh,
        lora: None,
        seed: derive_seed(seed, "teacher"),
    }
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Result<DenseMatrix> {
    DenseMatrix::new(n, d, (0..n * d).map(|_| rng.sample(StandardNormal)).collect())
}

pub fn gen_dataset(kind: DatasetKind, n: usize, d: usize, noise: f64, seed: u64) -> Result<Dataset> {
    if n == 0 || d == 0 {
        return Err(Error::Domain(format!("need n >= 1 and d >= 1, got n = {n}, d = {d}")));
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::Domain(format!("noise must be finite and >= 0, got {noise}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, kind.name()));
    let (x, y) = match kind {
        DatasetKind::TeacherRegression => {
            let x = gaussian_matrix(&mut rng, n, d)?;
            let (teacher, theta) = build_model(&teacher_config(d, seed))?;
            let clean = teacher.forward(&theta, &x)?;
            let y = clean
                .into_iter()
                .map(|v| v + noise * rng.sample::<f64, _>(StandardNormal))
                .collect();
            (x, y)
        }
        DatasetKind::TwoClusterClassification => {
            let mut dir: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            let norm = crate::linalg::norm2(&dir);
            dir.iter_mut().for_each(|v| *v /= norm);
            let mut data = Vec::with_capacity(n * d);
            let mut y = Vec::with_capacity(n);
            for _ in 0..n {
                let label = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                for &u in &dir {
                    let e: f64 = rng.sample(StandardNormal);
                    data.push(label * CLUSTER_SEPARATION / 2.0 * u + noise * e);
                }
                y.push(label);
            }
            (DenseMatrix::new(n, d, data)?, y)
        }
        DatasetKind::RandomRegression => {
            let x = gaussian_matrix(&mut rng, n, d)?;
            let scale = 1.0 / (d as f64).sqrt();
            let w: Vec<f64> = (0..d).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
            let clean = x.matvec(&w)?;
            let y = clean
                .into_iter()
                .map(|v| v + noise * rng.sample::<f64, _>(StandardNormal))
                .collect();
            (x, y)
        }
    };
    Dataset::new(x, y, kind.name(), seed)
}

/// Formats a float with 17 significant digits, which round-trips exactly.
pub fn format_float(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:.16e}")
    }
}

/// Writes `x1,…,xd,y` with one row per sample.
pub fn write_csv(data: &Dataset, path: &Path) -> Result<()> {
    let mut out = Vec::new();
    let header: Vec<String> = (1..=data.d()).map(|j| format!("x{j}")).chain(["y".to_string()]).collect();
    writeln!(out, "{}", header.join(",")).expect("write to memory");
    for i in 0..data.n() {
        let row: Vec<String> = data
            .input(i)
            .iter()
            .chain(std::iter::once(&data.y[i]))
            .map(|&v| format_float(v))
            .collect();
        writeln!(out, "{}", row.join(",")).expect("write to memory");
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads a dataset written as `x1,…,xd,y`; lines starting with `#` are skipped.
pub fn load_csv(path: &Path) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(BufReader::new(file));
    let header = reader
        .headers()
        .map_err(|e| Error::Parse { line: 1, msg: e.to_string() })?
        .clone();
    let d = header.len().saturating_sub(1);
    let expected: Vec<String> = (1..=d).map(|j| format!("x{j}")).chain(["y".to_string()]).collect();
    if d == 0 || header.iter().ne(expected.iter().map(String::as_str)) {
        return Err(Error::Parse {
            line: header.position().map_or(1, |p| p.line() as usize),
            msg: format!("expected header {}, found {}", expected.join(","), header.iter().collect::<Vec<_>>().join(",")),
        });
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            msg: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != d + 1 {
            return Err(Error::Parse {
                line,
                msg: format!("expected {} fields, found {}", d + 1, record.len()),
            });
        }
        for (j, field) in record.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                line,
                msg: format!("column {} is not a number: {field:?}", j + 1),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse { line, msg: format!("non-finite value in column {}", j + 1) });
            }
            if j < d {
                xs.push(v);
            } else {
                ys.push(v);
            }
        }
    }
    if ys.is_empty() {
        return Err(Error::Parse { line: 2, msg: "no data rows".into() });
    }
    let name = path.file_stem().map_or("csv".into(), |s| s.to_string_lossy().into_owned());
    Dataset::new(DenseMatrix::new(ys.len(), d, xs)?, ys, name, 0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_data() {
        for kind in [
            DatasetKind::TeacherRegression,
            DatasetKind::TwoClusterClassification,
            DatasetKind::RandomRegression,
        ] {
            let a = gen_dataset(kind, 20, 3, 0.1, 7).unwrap();
            assert_eq!(a, gen_dataset(kind, 20, 3, 0.1, 7).unwrap());
            assert_ne!(a.y, gen_dataset(kind, 20, 3, 0.1, 8).unwrap().y);
        }
    }

    #[test]
    fn noiseless_teacher_is_reproducible() {
        let data = gen_dataset(DatasetKind::TeacherRegression, 15, 4, 0.0, 3).unwrap();
        let (teacher, theta) = build_model(&teacher_config(4, 3)).unwrap();
        assert_eq!(teacher.forward(&theta, &data.x).unwrap(), data.y);
    }

    #[test]
    fn cluster_labels_are_signs() {
        let data = gen_dataset(DatasetKind::TwoClusterClassification, 50, 2, 1.0, 1).unwrap();
        assert!(data.y.iter().all(|&v| v == 1.0 || v == -1.0));
    }

    #[test]
    fn invalid_arguments() {
        assert!(gen_dataset(DatasetKind::RandomRegression, 0, 2, 0.1, 0).is_err());
        assert!(gen_dataset(DatasetKind::RandomRegression, 2, 2, -1.0, 0).is_err());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let data = gen_dataset(DatasetKind::RandomRegression, 9, 3, 0.3, 5).unwrap();
        write_csv(&data, &path).unwrap();
        let back = load_csv(&path).unwrap();
        assert_eq!(back.x, data.x);
        assert_eq!(back.y, data.y);
    }

    #[test]
    fn small_file_loads() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("two.csv");
        std::fs::write(&path, "x1,x2,y\n1,2,3\n4,5,6\n").unwrap();
        let data = load_csv(&path).unwrap();
        assert_eq!(data.n(), 2);
        assert_eq!(data.d(), 2);
        assert_eq!(data.y, vec![3.0, 6.0]);
    }

    #[test]
    fn malformed_files_report_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "x1,x2\n1,2\n").unwrap();
        assert!(matches!(load_csv(&path), Err(Error::Parse { line: 1, .. })));
        std::fs::write(&path, "x1,y\n1,2\n3,abc\n").unwrap();
        assert!(matches!(load_csv(&path), Err(Error::Parse { line: 3, .. })));
        std::fs::write(&path, "x1,y\n1,2\n3\n").unwrap();
        assert!(matches!(load_csv(&path), Err(Error::Parse { line: 3, .. })));
    }
}
