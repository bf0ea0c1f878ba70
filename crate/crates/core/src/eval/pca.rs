use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Pca2d {
    pub points: Vec<[f64; 2]>,
    /// Fraction of total variance captured by each axis.
    pub explained: [f64; 2],
    pub components: [Vec<f64>; 2],
}

/// Projects mean-centered samples onto the two leading eigenvectors of
/// their covariance. Each axis is signed so that its largest-magnitude
/// loading is positive.
pub fn pca_project_2d(samples: &[Vec<f64>]) -> Result<Pca2d> {
    let n = samples.len();
    if n < 3 {
        return Err(Error::Validation(format!("PCA needs at least 3 samples, got {n}")));
    }
    let d = samples[0].len();
    if d == 0 || samples.iter().any(|s| s.len() != d) {
        return Err(Error::Dimension("samples must share a non-zero length".into()));
    }
    let mean: Vec<f64> = (0..d).map(|j| samples.iter().map(|s| s[j]).sum::<f64>() / n as f64).collect();
    let x = DMatrix::from_fn(n, d, |i, j| samples[i][j] - mean[j]);
    let cov = x.transpose() * &x / (n as f64 - 1.0);
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let total: f64 = eig.eigenvalues.iter().map(|&l| l.max(0.0)).sum();
    let axis = |k: usize| -> Vec<f64> {
        if k >= d {
            return vec![0.0; d];
        }
        let mut v: Vec<f64> = eig.eigenvectors.column(order[k]).iter().copied().collect();
        let big = v.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
        if big < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        v
    };
    let frac = |k: usize| {
        if k >= d || total <= 0.0 {
            0.0
        } else {
            eig.eigenvalues[order[k]].max(0.0) / total
        }
    };
    let components = [axis(0), axis(1)];
    let points = (0..n)
        .map(|i| {
            let row = x.row(i);
            let p = |c: &[f64]| row.iter().zip(c).map(|(a, b)| a * b).sum::<f64>();
            [p(&components[0]), p(&components[1])]
        })
        .collect();
    Ok(Pca2d {
        points,
        explained: [frac(0), frac(1)],
        components,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rotation_preserves_variance() {
        let s: Vec<Vec<f64>> = (0..20)
            .map(|i| {
                let t = i as f64;
                vec![t.sin() * 3.0, (t * 0.7).cos()]
            })
            .collect();
        let m0: f64 = s.iter().map(|r| r[0]).sum::<f64>() / 20.0;
        let m1: f64 = s.iter().map(|r| r[1]).sum::<f64>() / 20.0;
        let before: f64 = s.iter().map(|r| (r[0] - m0).powi(2) + (r[1] - m1).powi(2)).sum();
        let p = pca_project_2d(&s).unwrap();
        let after: f64 = p.points.iter().map(|q| q[0] * q[0] + q[1] * q[1]).sum();
        assert!((before - after).abs() < 1e-9);
        assert!((p.explained[0] + p.explained[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn line_has_one_axis() {
        let dir: Vec<f64> = (0..22).map(|j| (j as f64 + 1.0).sqrt()).collect();
        let s: Vec<Vec<f64>> = (0..10)
            .map(|i| dir.iter().map(|d| d * i as f64).collect())
            .collect();
        let p = pca_project_2d(&s).unwrap();
        assert!(p.explained[1].abs() < 1e-12);
        assert!(p.explained[0] >= p.explained[1]);
    }

    #[test]
    fn too_few() {
        assert!(pca_project_2d(&[vec![1.0], vec![2.0]]).is_err());
    }
}
