use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::ModesError;

/// Cumulative-ratio comparisons allow this much floating-point slack.
const RATIO_SLACK: f64 = 1e-12;

/// Principal axes of one model's embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaFit {
    pub mean: DVector<f64>,
    /// `d x r`, orthonormal columns ordered by decreasing explained variance.
    pub basis: DMatrix<f64>,
    pub r: usize,
    /// Explained-variance ratio of every available component (not only the retained ones).
    pub explained_ratio: Vec<f64>,
}

impl PcaFit {
    /// Projects rows of `x` (`n x d`) onto the retained basis, giving `n x r`.
    pub fn project(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        center(x, &self.mean) * &self.basis
    }

    /// Maps projected rows back to the original space.
    pub fn reconstruct(&self, y: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = y * self.basis.transpose();
        for mut row in out.row_iter_mut() {
            row += self.mean.transpose();
        }
        out
    }
}

fn center(x: &DMatrix<f64>, mean: &DVector<f64>) -> DMatrix<f64> {
    let mut c = x.clone();
    for mut row in c.row_iter_mut() {
        row -= mean.transpose();
    }
    c
}

/// Fits PCA on the rows of `x` and keeps the fewest components whose cumulative
/// explained-variance ratio reaches `variance_target`.
pub fn fit_pca(x: &DMatrix<f64>, variance_target: f64) -> Result<PcaFit, ModesError> {
    let (n, d) = x.shape();
    if n < 2 || d < 1 {
        return Err(ModesError::TooFewPoints { needed: 2, found: n });
    }
    if !(variance_target > 0.0 && variance_target <= 1.0) {
        return Err(ModesError::InvalidParameter(format!(
            "variance_target must lie in (0, 1], got {variance_target}"
        )));
    }
    let mean = DVector::from_iterator(d, x.column_iter().map(|c| c.sum() / n as f64));
    let xc = center(x, &mean);
    let denom = (n - 1) as f64;
    let total: f64 = xc.iter().map(|v| v * v).sum::<f64>() / denom;
    let scale = mean.norm_squared().max(1.0);
    if total <= 1e-24 * scale {
        return Err(ModesError::DegenerateData);
    }

    let cap = (n - 1).min(d);
    // Eigen-decompose whichever of the covariance (d x d) or Gram (n x n) matrix is smaller.
    let (values, vectors) = if d <= n {
        let cov = (xc.transpose() * &xc) / denom;
        let eig = SymmetricEigen::new(cov);
        let order = descending(&eig.eigenvalues);
        let vals: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let vecs: Vec<DVector<f64>> = order.iter().map(|&i| eig.eigenvectors.column(i).into_owned()).collect();
        (vals, vecs)
    } else {
        let gram = (&xc * xc.transpose()) / denom;
        let eig = SymmetricEigen::new(gram);
        let order = descending(&eig.eigenvalues);
        let mut vals = Vec::new();
        let mut vecs = Vec::new();
        for &i in &order {
            let lambda = eig.eigenvalues[i];
            let v = xc.transpose() * eig.eigenvectors.column(i);
            let len = v.norm();
            if lambda <= 0.0 || len == 0.0 {
                vals.push(lambda.max(0.0));
                vecs.push(DVector::zeros(d));
            } else {
                vals.push(lambda);
                vecs.push(v / len);
            }
        }
        (vals, vecs)
    };

    let explained_ratio: Vec<f64> = values.iter().take(cap).map(|v| (v / total).max(0.0)).collect();
    let positive = values
        .iter()
        .take(cap)
        .take_while(|v| **v > total * 1e-12)
        .count()
        .max(1);

    let mut r = positive;
    let mut cum = 0.0;
    for (i, ratio) in explained_ratio.iter().enumerate().take(positive) {
        cum += ratio;
        if cum >= variance_target - RATIO_SLACK {
            r = i + 1;
            break;
        }
    }

    let mut columns: Vec<DVector<f64>> = vectors.into_iter().take(r).collect();
    orthonormalize(&mut columns);
    for c in &mut columns {
        fix_sign(c);
    }
    let basis = DMatrix::from_columns(&columns);
    Ok(PcaFit { mean, basis, r, explained_ratio })
}

fn descending(values: &DVector<f64>) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx
}

/// Two passes of modified Gram-Schmidt.
fn orthonormalize(columns: &mut [DVector<f64>]) {
    for _ in 0..2 {
        for i in 0..columns.len() {
            for j in 0..i {
                let proj = columns[j].dot(&columns[i]);
                let cj = columns[j].clone();
                columns[i] -= cj * proj;
            }
            let len = columns[i].norm();
            if len > 0.0 {
                columns[i] /= len;
            }
        }
    }
}

/// Makes the largest-magnitude entry positive so bases are reproducible.
fn fix_sign(v: &mut DVector<f64>) {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i].abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.neg_mut();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn rank_one_line_in_3d() {
        let x = DMatrix::from_row_slice(4, 3, &[0., 0., 0., 1., 2., 3., 2., 4., 6., -1., -2., -3.]);
        let fit = fit_pca(&x, 0.95).unwrap();
        assert_eq!(fit.r, 1);
        assert_abs_diff_eq!(fit.explained_ratio[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn identical_rows_are_degenerate() {
        let x = DMatrix::from_row_slice(3, 2, &[0.1, 0.7, 0.1, 0.7, 0.1, 0.7]);
        assert!(matches!(fit_pca(&x, 0.95), Err(ModesError::DegenerateData)));
    }

    // Rectangle with sides 4 and 2: per-axis variances (n-1 denominator) are 16/3 and 4/3,
    // i.e. eigenvalues in ratio 4:1.
    #[test]
    fn rectangle_corners() {
        let x = DMatrix::from_row_slice(4, 2, &[0., 0., 4., 0., 0., 2., 4., 2.]);
        let fit = fit_pca(&x, 0.9).unwrap();
        assert_abs_diff_eq!(fit.explained_ratio[0], 0.8, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.explained_ratio[1], 0.2, epsilon = 1e-12);
        assert_eq!(fit.r, 2);
        assert_eq!(fit_pca(&x, 0.8).unwrap().r, 1);
    }

    #[test]
    fn wide_data_uses_gram_route() {
        // n = 3 < d = 5
        let x = DMatrix::from_row_slice(3, 5, &[1., 0., 2., 0., 1., 0., 1., 0., 3., 1., 2., 2., 1., 1., 0.]);
        let fit = fit_pca(&x, 1.0).unwrap();
        assert_eq!(fit.r, 2);
        let gram = fit.basis.transpose() * &fit.basis;
        assert_abs_diff_eq!(gram, DMatrix::identity(2, 2), epsilon = 1e-10);
        let back = fit.reconstruct(&fit.project(&x));
        assert_abs_diff_eq!(back, x, epsilon = 1e-9);
    }

    #[test]
    fn invalid_target() {
        let x = DMatrix::from_row_slice(2, 1, &[0., 1.]);
        assert!(fit_pca(&x, 0.0).is_err());
        assert!(fit_pca(&x, 1.5).is_err());
    }
}
