//! Linear PCA on in-class vectors via a cyclic Jacobi eigensolver.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How many principal components to keep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PcaComponents {
    Count(usize),
    /// Smallest number of components whose cumulative explained variance
    /// reaches this fraction of the total.
    Fraction(f64),
}

impl PcaComponents {
    pub fn validate(self) -> Result<()> {
        match self {
            PcaComponents::Count(0) => Err(Error::Config("pca component count must be >= 1".into())),
            PcaComponents::Fraction(f) if !(f > 0.0 && f <= 1.0) => Err(Error::Config(format!(
                "pca variance fraction {f} outside (0, 1]"
            ))),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// Principal directions, one per row, orthonormal.
    pub components: Vec<Vec<f64>>,
    /// Variance of the training rows along each kept component.
    pub explained_variance: Vec<f64>,
    /// Every eigenvalue of the sample covariance, non-increasing.
    pub spectrum: Vec<f64>,
}

impl PcaModel {
    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn input_width(&self) -> usize {
        self.mean.len()
    }

    pub fn total_variance(&self) -> f64 {
        self.spectrum.iter().sum()
    }

    /// Projects one centered row onto the kept components.
    pub fn project(&self, row: &[f64]) -> Vec<f64> {
        self.components
            .iter()
            .map(|c| {
                c.iter()
                    .zip(row)
                    .zip(&self.mean)
                    .map(|((w, x), m)| w * (x - m))
                    .sum()
            })
            .collect()
    }
}

/// Fits PCA on the rows of a dense matrix (mean-centered, not scaled).
pub fn fit_pca(rows: &[Vec<f64>], target: PcaComponents) -> Result<PcaModel> {
    target.validate()?;
    if rows.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "pca needs at least 2 rows, got {}",
            rows.len()
        )));
    }
    let width = rows[0].len();
    if width == 0 {
        return Err(Error::InsufficientData("pca needs at least 1 column".into()));
    }
    if rows.iter().any(|r| r.len() != width) {
        return Err(Error::Data("pca rows have unequal widths".into()));
    }
    if rows.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::Data("pca input contains non-finite values".into()));
    }

    let n = rows.len() as f64;
    let mut mean = vec![0.0; width];
    for r in rows {
        for (m, x) in mean.iter_mut().zip(r) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);

    let mut cov = vec![vec![0.0; width]; width];
    for r in rows {
        for i in 0..width {
            let di = r[i] - mean[i];
            for j in i..width {
                cov[i][j] += di * (r[j] - mean[j]);
            }
        }
    }
    for i in 0..width {
        for j in i..width {
            cov[i][j] /= n - 1.0;
            cov[j][i] = cov[i][j];
        }
    }

    let (values, vectors) = jacobi_eigen(cov);
    let mut order: Vec<usize> = (0..width).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let spectrum: Vec<f64> = order.iter().map(|&i| values[i].max(0.0)).collect();

    let top = spectrum[0];
    let rank = if top > 0.0 {
        spectrum.iter().filter(|&&v| v > top * 1e-10).count()
    } else {
        0
    };
    let k = match target {
        PcaComponents::Count(c) => c.min(rank),
        PcaComponents::Fraction(f) => {
            let total: f64 = spectrum.iter().sum();
            let mut acc = 0.0;
            let mut k = 0;
            for v in &spectrum[..rank] {
                acc += v;
                k += 1;
                if acc >= f * total {
                    break;
                }
            }
            k
        }
    }
    .max(1);

    let components = order[..k]
        .iter()
        .map(|&col| {
            let mut v: Vec<f64> = (0..width).map(|row| vectors[row][col]).collect();
            let pivot = v
                .iter()
                .enumerate()
                .fold(0, |best, (i, x)| if x.abs() > v[best].abs() { i } else { best });
            if v[pivot] < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
            v
        })
        .collect();

    Ok(PcaModel {
        mean,
        components,
        explained_variance: spectrum[..k].to_vec(),
        spectrum,
    })
}

/// Cyclic Jacobi rotations on a symmetric matrix.
///
/// Returns eigenvalues and the eigenvector matrix (eigenvectors in columns).
fn jacobi_eigen(mut a: Vec<Vec<f64>>) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut v = vec![vec![0.0; n]; n];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    let scale: f64 = a.iter().flatten().map(|x| x * x).sum::<f64>().sqrt();
    if scale == 0.0 {
        return (vec![0.0; n], v);
    }
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum::<f64>()
            .sqrt();
        if off <= scale * 1e-15 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p][q];
                if apq.abs() <= f64::MIN_POSITIVE {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let vkp = row[p];
                    let vkq = row[q];
                    row[p] = c * vkp - s * vkq;
                    row[q] = s * vkp + c * vkq;
                }
            }
        }
    }
    ((0..n).map(|i| a[i][i]).collect(), v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn projected_variance(model: &PcaModel, rows: &[Vec<f64>]) -> Vec<f64> {
        let proj: Vec<Vec<f64>> = rows.iter().map(|r| model.project(r)).collect();
        let n = rows.len() as f64;
        (0..model.n_components())
            .map(|k| {
                let m = proj.iter().map(|p| p[k]).sum::<f64>() / n;
                proj.iter().map(|p| (p[k] - m).powi(2)).sum::<f64>() / (n - 1.0)
            })
            .collect()
    }

    #[test]
    fn diagonal_covariance_aligns_with_axes() {
        // uncorrelated columns with sample variances 4 and 1
        let a = 3f64.sqrt();
        let b = a / 2.0;
        let rows = vec![vec![a, b], vec![-a, b], vec![a, -b], vec![-a, -b]];
        let m = fit_pca(&rows, PcaComponents::Count(2)).unwrap();
        for (got, want) in m.explained_variance.iter().zip([4.0, 1.0]) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
        assert!((m.components[0][0] - 1.0).abs() < 1e-12);
        assert!(m.components[0][1].abs() < 1e-12);
    }

    #[test]
    fn rank_one_input() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, 2.0 * i as f64]).collect();
        let m = fit_pca(&rows, PcaComponents::Count(2)).unwrap();
        assert_eq!(m.n_components(), 1);
        assert!(m.spectrum[1].abs() < 1e-9);
        let inv = 1.0 / 5f64.sqrt();
        assert!((m.components[0][0] - inv).abs() < 1e-12);
        assert!((m.components[0][1] - 2.0 * inv).abs() < 1e-12);
    }

    #[test]
    fn zero_variance_with_fraction_keeps_one() {
        let rows = vec![vec![1.0, 1.0]; 5];
        let m = fit_pca(&rows, PcaComponents::Fraction(0.9)).unwrap();
        assert_eq!(m.n_components(), 1);
        assert_eq!(m.explained_variance, vec![0.0]);
    }

    #[test]
    fn too_few_rows() {
        assert!(matches!(
            fit_pca(&[vec![1.0]], PcaComponents::Count(1)),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn fraction_selects_smallest_prefix() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows: Vec<Vec<f64>> = (0..200)
            .map(|_| vec![rng.random::<f64>() * 10.0, rng.random::<f64>() * 3.0, rng.random::<f64>()])
            .collect();
        let m = fit_pca(&rows, PcaComponents::Fraction(0.85)).unwrap();
        let total = m.total_variance();
        let kept: f64 = m.explained_variance.iter().sum();
        assert!(kept >= 0.85 * total);
        let without_last: f64 = m.explained_variance[..m.n_components() - 1].iter().sum();
        assert!(without_last < 0.85 * total);
    }

    #[test]
    fn projections_match_explained_variance_and_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let cols = rng.random_range(1..7);
            let rows: Vec<Vec<f64>> = (0..rng.random_range(2..40))
                .map(|_| (0..cols).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect())
                .collect();
            let m = fit_pca(&rows, PcaComponents::Count(cols)).unwrap();
            for (a, b) in projected_variance(&m, &rows).iter().zip(&m.explained_variance) {
                assert!((a - b).abs() < 1e-6);
            }
            for i in 0..m.n_components() {
                for j in 0..m.n_components() {
                    let dot: f64 = m.components[i].iter().zip(&m.components[j]).map(|(a, b)| a * b).sum();
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((dot - want).abs() < 1e-8);
                }
            }
            assert!(m.explained_variance.windows(2).all(|w| w[0] >= w[1]));
            let trace: f64 = (0..cols)
                .map(|c| {
                    let mu = rows.iter().map(|r| r[c]).sum::<f64>() / rows.len() as f64;
                    rows.iter().map(|r| (r[c] - mu).powi(2)).sum::<f64>() / (rows.len() as f64 - 1.0)
                })
                .sum();
            assert!((m.total_variance() - trace).abs() < 1e-6);
        }
    }
}
