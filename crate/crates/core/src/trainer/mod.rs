//! Weighted over-sampling and model fitting.

mod gbdt;
mod logistic;
mod sampler;

pub use gbdt::{fit_gbdt, fit_gbdt_traced, GbdtConfig, GbdtModel, Node, Tree, MODEL_FORMAT_VERSION};
pub use logistic::{fit_logistic_baseline, LogisticModel};
pub use sampler::{oversample, SamplerConfig};

use crate::error::{Error, Result};
use crate::features::FeatureVector;
use crate::labeling::TrainingPair;

/// Anything that maps a feature vector to a dropout probability.
pub trait Scorer {
    fn score(&self, fv: &FeatureVector) -> Result<f64>;
    fn feature_names(&self) -> &[String];
}

/// Column-major training matrix with labels in `{0, 1}` and instance weights.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub columns: Vec<Vec<f64>>,
    pub labels: Vec<f64>,
    pub weights: Vec<f64>,
    pub feature_names: Vec<String>,
}

impl Dataset {
    pub fn from_pairs(pairs: &[TrainingPair]) -> Result<Self> {
        let first = pairs
            .first()
            .ok_or_else(|| Error::EmptyInput("no training pairs".into()))?;
        let names: Vec<String> = first.features.names.to_vec();
        let rows: Vec<&[f64]> = pairs.iter().map(|p| p.features.values.as_slice()).collect();
        let labels = pairs.iter().map(|p| p.label as f64).collect();
        let weights = pairs.iter().map(|p| p.weight).collect();
        Dataset::from_row_slices(&rows, labels, weights, Some(names))
    }

    pub fn from_rows(
        rows: &[Vec<f64>],
        labels: Vec<f64>,
        weights: Vec<f64>,
        names: Option<Vec<String>>,
    ) -> Result<Self> {
        let rows: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
        Dataset::from_row_slices(&rows, labels, weights, names)
    }

    fn from_row_slices(
        rows: &[&[f64]],
        labels: Vec<f64>,
        weights: Vec<f64>,
        names: Option<Vec<String>>,
    ) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptyInput("no training rows".into()));
        }
        if labels.len() != rows.len() || weights.len() != rows.len() {
            return Err(Error::Data("labels/weights length mismatch".into()));
        }
        let width = rows[0].len();
        let feature_names = names.unwrap_or_else(|| (0..width).map(|i| format!("f{i}")).collect());
        if feature_names.len() != width {
            return Err(Error::Schema("feature names do not match row width".into()));
        }
        let mut columns = vec![Vec::with_capacity(rows.len()); width];
        for (r, row) in rows.iter().enumerate() {
            if row.len() != width {
                return Err(Error::Schema(format!("row {r} has width {} != {width}", row.len())));
            }
            for (c, &x) in row.iter().enumerate() {
                if !x.is_finite() {
                    return Err(Error::Data(format!("non-finite value in row {r}, column {c}")));
                }
                columns[c].push(x);
            }
        }
        if labels.iter().any(|&y| y != 0.0 && y != 1.0) {
            return Err(Error::Data("labels must be 0 or 1".into()));
        }
        if weights.iter().any(|&w| !(w.is_finite() && w >= 0.0)) {
            return Err(Error::Data("weights must be finite and non-negative".into()));
        }
        Ok(Dataset {
            columns,
            labels,
            weights,
            feature_names,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn width(&self) -> usize {
        self.columns.len()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c[i]).collect()
    }

    /// Errors unless both classes carry positive weight.
    pub fn check_binary(&self) -> Result<()> {
        let mut pos = 0.0;
        let mut neg = 0.0;
        for (y, w) in self.labels.iter().zip(&self.weights) {
            if *y == 1.0 {
                pos += w;
            } else {
                neg += w;
            }
        }
        if pos <= 0.0 || neg <= 0.0 {
            return Err(Error::Degenerate("training data must contain both classes".into()));
        }
        Ok(())
    }
}

pub fn sigmoid(margin: f64) -> f64 {
    // keeps the output strictly inside (0, 1)
    let m = margin.clamp(-700.0, 36.0);
    1.0 / (1.0 + (-m).exp())
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Weighted mean binary log-loss of raw margins.
pub fn log_loss(margins: &[f64], labels: &[f64], weights: &[f64]) -> f64 {
    let mut total = 0.0;
    let mut wsum = 0.0;
    for ((m, y), w) in margins.iter().zip(labels).zip(weights) {
        let l = if *y == 1.0 { softplus(-m) } else { softplus(*m) };
        total += w * l;
        wsum += w;
    }
    total / wsum
}
