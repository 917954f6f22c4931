use serde::{Deserialize, Serialize};

use super::{sigmoid, Dataset, Scorer};
use crate::error::{Error, Result};
use crate::features::FeatureVector;

/// Logistic regression on standardized features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
    pub coef: Vec<f64>,
    pub intercept: f64,
    pub feature_names: Vec<String>,
}

impl LogisticModel {
    fn standardize(&self, j: usize, x: f64) -> f64 {
        if self.scales[j] > 0.0 {
            (x - self.means[j]) / self.scales[j]
        } else {
            0.0
        }
    }

    pub fn predict_values(&self, x: &[f64]) -> f64 {
        let z: f64 = self.intercept
            + x.iter()
                .enumerate()
                .map(|(j, &v)| self.coef[j] * self.standardize(j, v))
                .sum::<f64>();
        sigmoid(z)
    }
}

impl Scorer for LogisticModel {
    fn score(&self, fv: &FeatureVector) -> Result<f64> {
        if fv.len() != self.coef.len() {
            return Err(Error::Schema(format!(
                "feature width {} does not match model width {}",
                fv.len(),
                self.coef.len()
            )));
        }
        Ok(self.predict_values(&fv.values))
    }

    fn feature_names(&self) -> &[String] {
        &self.feature_names
    }
}

/// Full-batch gradient descent on the weighted mean log-loss.
///
/// Standardization statistics come from `data` only. The intercept starts
/// at the weighted prior log-odds and all slopes at zero.
pub fn fit_logistic_baseline(data: &Dataset, epochs: usize, step: f64) -> Result<LogisticModel> {
    data.check_binary()?;
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::Config(format!("step {step} must be positive")));
    }
    let n = data.len();
    let width = data.width();
    let total_w: f64 = data.weights.iter().sum();

    let mut means = vec![0.0; width];
    let mut scales = vec![0.0; width];
    for (j, col) in data.columns.iter().enumerate() {
        let m = col.iter().zip(&data.weights).map(|(x, w)| x * w).sum::<f64>() / total_w;
        let var = col
            .iter()
            .zip(&data.weights)
            .map(|(x, w)| w * (x - m) * (x - m))
            .sum::<f64>()
            / total_w;
        means[j] = m;
        scales[j] = if var > 1e-24 { var.sqrt() } else { 0.0 };
    }
    let z: Vec<Vec<f64>> = data
        .columns
        .iter()
        .enumerate()
        .map(|(j, col)| {
            col.iter()
                .map(|&x| if scales[j] > 0.0 { (x - means[j]) / scales[j] } else { 0.0 })
                .collect()
        })
        .collect();

    let pos_w: f64 = data.labels.iter().zip(&data.weights).map(|(y, w)| y * w).sum();
    let prior = pos_w / total_w;
    let mut intercept = (prior / (1.0 - prior)).ln();
    let mut coef = vec![0.0; width];

    let mut resid = vec![0.0; n];
    for _ in 0..epochs {
        for i in 0..n {
            let margin = intercept + (0..width).map(|j| coef[j] * z[j][i]).sum::<f64>();
            resid[i] = data.weights[i] * (sigmoid(margin) - data.labels[i]) / total_w;
        }
        intercept -= step * resid.iter().sum::<f64>();
        for j in 0..width {
            let g: f64 = z[j].iter().zip(&resid).map(|(a, r)| a * r).sum();
            coef[j] -= step * g;
        }
    }

    Ok(LogisticModel {
        means,
        scales,
        coef,
        intercept,
        feature_names: data.feature_names.clone(),
    })
}
