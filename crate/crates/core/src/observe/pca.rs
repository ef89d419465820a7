use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Costmap, ObsMeta, Observation, ObservationKind};
use crate::linalg::{dot, symmetric_eigen};

#[derive(Debug, Error)]
pub enum PcaError {
    #[error("need at least 2 samples, got {0}")]
    NotEnoughSamples(usize),
    #[error("k = {k} exceeds min(samples, dim) = {max}")]
    InvalidK { k: usize, max: usize },
    #[error("all samples are identical; no principal direction exists")]
    DegenerateData,
    #[error("expected vectors of length {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("malformed PCA file: {0}")]
    Format(String),
    #[error("PCA file io: {0}")]
    Io(#[from] std::io::Error),
}

/// Top-`k` principal directions of a sample set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// `k` orthonormal rows of length `dim`, by descending variance.
    pub components: Vec<Vec<f64>>,
    /// Sample variance along each component.
    pub variances: Vec<f64>,
    /// Sum of all eigenvalues of the sample covariance.
    pub total_variance: f64,
}

impl PcaModel {
    pub fn fit(samples: &[Vec<f64>], k: usize) -> Result<PcaModel, PcaError> {
        let n = samples.len();
        if n < 2 {
            return Err(PcaError::NotEnoughSamples(n));
        }
        let dim = samples[0].len();
        if let Some(bad) = samples.iter().find(|s| s.len() != dim) {
            return Err(PcaError::DimensionMismatch { expected: dim, got: bad.len() });
        }
        if k > n.min(dim) {
            return Err(PcaError::InvalidK { k, max: n.min(dim) });
        }
        let mut mean = vec![0.0; dim];
        for s in samples {
            for (m, x) in mean.iter_mut().zip(s) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);

        let mut cov = vec![0.0; dim * dim];
        let mut centered = vec![0.0; dim];
        for s in samples {
            for ((c, x), m) in centered.iter_mut().zip(s).zip(&mean) {
                *c = x - m;
            }
            for i in 0..dim {
                if centered[i] == 0.0 {
                    continue;
                }
                for j in i..dim {
                    cov[i * dim + j] += centered[i] * centered[j];
                }
            }
        }
        for i in 0..dim {
            for j in i..dim {
                let v = cov[i * dim + j] / (n - 1) as f64;
                cov[i * dim + j] = v;
                cov[j * dim + i] = v;
            }
        }
        if k >= 1 && cov.iter().all(|&x| x == 0.0) {
            return Err(PcaError::DegenerateData);
        }
        let (values, vectors) = symmetric_eigen(&cov, dim);
        let total_variance = values.iter().sum();
        Ok(PcaModel {
            mean,
            components: vectors.into_iter().take(k).collect(),
            variances: values.into_iter().take(k).collect(),
            total_variance,
        })
    }

    pub fn k(&self) -> usize {
        self.components.len()
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>, PcaError> {
        if x.len() != self.dim() {
            return Err(PcaError::DimensionMismatch { expected: self.dim(), got: x.len() });
        }
        let centered: Vec<f64> = x.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        Ok(self.components.iter().map(|c| dot(c, &centered)).collect())
    }

    pub fn reconstruct(&self, coords: &[f64]) -> Vec<f64> {
        let mut out = self.mean.clone();
        for (c, w) in self.components.iter().zip(coords) {
            for (o, x) in out.iter_mut().zip(c) {
                *o += w * x;
            }
        }
        out
    }

    /// `[projection of the costmap, d_goal]`, length `k + 1`.
    pub fn project_observation(&self, map: &Costmap, d_goal: f64) -> Result<Observation, PcaError> {
        let mut vector = self.project(&map.combined)?;
        vector.push(d_goal);
        Ok(Observation {
            kind: ObservationKind::CostmapPca,
            vector,
            meta: ObsMeta { l: 0, lp: map.lp, k: Some(self.k()) },
        })
    }

    /// Textual form: a `pca v1` line, `k=<k> dim=<dim>`, then `mean`,
    /// `variance` and one `component` line each.
    pub fn to_text(&self) -> String {
        let mut out = String::from("pca v1\n");
        let _ = writeln!(out, "k={} dim={} total={}", self.k(), self.dim(), self.total_variance);
        write_row(&mut out, "mean", &self.mean);
        write_row(&mut out, "variance", &self.variances);
        for c in &self.components {
            write_row(&mut out, "component", c);
        }
        out
    }

    pub fn from_text(text: &str) -> Result<PcaModel, PcaError> {
        let fmt = |m: &str| PcaError::Format(m.to_string());
        let mut lines = text.lines();
        if lines.next() != Some("pca v1") {
            return Err(fmt("missing `pca v1` header"));
        }
        let header = lines.next().ok_or_else(|| fmt("missing size line"))?;
        let mut k = None;
        let mut dim = None;
        let mut total = None;
        for field in header.split_whitespace() {
            match field.split_once('=') {
                Some(("k", v)) => k = v.parse::<usize>().ok(),
                Some(("dim", v)) => dim = v.parse::<usize>().ok(),
                Some(("total", v)) => total = v.parse::<f64>().ok(),
                _ => return Err(fmt("bad size line")),
            }
        }
        let (k, dim, total) = match (k, dim, total) {
            (Some(k), Some(d), Some(t)) => (k, d, t),
            _ => return Err(fmt("bad size line")),
        };
        let mean = read_row(lines.next(), "mean", dim)?;
        let variances = read_row(lines.next(), "variance", k)?;
        let components = (0..k).map(|_| read_row(lines.next(), "component", dim)).collect::<Result<_, _>>()?;
        Ok(PcaModel { mean, components, variances, total_variance: total })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), PcaError> {
        Ok(std::fs::write(path, self.to_text())?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<PcaModel, PcaError> {
        PcaModel::from_text(&std::fs::read_to_string(path)?)
    }
}

fn write_row(out: &mut String, tag: &str, row: &[f64]) {
    out.push_str(tag);
    for x in row {
        let _ = write!(out, " {x:?}");
    }
    out.push('\n');
}

fn read_row(line: Option<&str>, tag: &str, len: usize) -> Result<Vec<f64>, PcaError> {
    let line = line.ok_or_else(|| PcaError::Format(format!("missing `{tag}` line")))?;
    let mut parts = line.split_whitespace();
    if parts.next() != Some(tag) {
        return Err(PcaError::Format(format!("expected `{tag}` line")));
    }
    let row = parts
        .map(|p| p.parse::<f64>().map_err(|e| PcaError::Format(format!("{tag}: {e}"))))
        .collect::<Result<Vec<_>, _>>()?;
    if row.len() != len {
        return Err(PcaError::Format(format!("{tag}: expected {len} values, got {}", row.len())));
    }
    Ok(row)
}
