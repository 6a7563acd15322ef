use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;

/// Design matrix `X` (n×d) with scalar targets `Y` (length n).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub x: DenseMatrix,
    pub y: Vec<f64>,
    pub name: String,
    pub seed: u64,
}

impl Dataset {
    pub fn new(x: DenseMatrix, y: Vec<f64>, name: impl Into<String>, seed: u64) -> Result<Self> {
        if x.rows() == 0 {
            return Err(Error::Domain("dataset needs at least one sample".into()));
        }
        if x.rows() != y.len() {
            return Err(Error::Shape(format!(
                "{} inputs but {} targets",
                x.rows(),
                y.len()
            )));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite target".into()));
        }
        Ok(Self {
            x,
            y,
            name: name.into(),
            seed,
        })
    }

    pub fn n(&self) -> usize {
        self.x.rows()
    }

    pub fn d(&self) -> usize {
        self.x.cols()
    }

    pub fn input(&self, i: usize) -> &[f64] {
        self.x.row(i)
    }

    /// Rows in the given order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.n()) {
            return Err(Error::Domain(format!(
                "sample index {bad} out of range for n = {}",
                self.n()
            )));
        }
        let cols: Vec<usize> = (0..self.d()).collect();
        Self::new(
            self.x.submatrix(indices, &cols),
            indices.iter().map(|&i| self.y[i]).collect(),
            self.name.clone(),
            self.seed,
        )
    }

    /// Deterministic head/tail split: the first `⌈frac·n⌉` rows train, the rest evaluate.
    pub fn split(&self, train_frac: f64) -> Result<(Self, Self)> {
        let n = self.n();
        let n_train = ((train_frac * n as f64).ceil() as usize).clamp(1, n);
        if n_train == n {
            return Err(Error::Domain(format!(
                "split of {n} samples at {train_frac} leaves no evaluation rows"
            )));
        }
        let train: Vec<usize> = (0..n_train).collect();
        let eval: Vec<usize> = (n_train..n).collect();
        Ok((self.select(&train)?, self.select(&eval)?))
    }
}
