use crate::error::{Error, Result};

/// Per-dimension z-scoring. Zero-variance dimensions keep scale 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(samples: &[Vec<f64>]) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::Validation(format!(
                "standardization needs at least 2 samples, got {}",
                samples.len()
            )));
        }
        let d = samples[0].len();
        if samples.iter().any(|s| s.len() != d) {
            return Err(Error::Dimension("samples have differing lengths".into()));
        }
        let n = samples.len() as f64;
        let mut mean = vec![0.0; d];
        for s in samples {
            for (m, x) in mean.iter_mut().zip(s) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for s in samples {
            for ((v, x), m) in var.iter_mut().zip(s).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        let scale = var
            .iter()
            .map(|v| {
                let sd = (v / n).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        let mut st = Self { mean, scale };
        st.quantize();
        Ok(st)
    }

    pub fn dims(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dims() {
            return Err(Error::Dimension(format!(
                "expected {} features, got {}",
                self.dims(),
                x.len()
            )));
        }
        Ok(x
            .iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((x, m), s)| (x - m) / s)
            .collect())
    }

    pub fn quantize(&mut self) {
        for v in self.mean.iter_mut().chain(self.scale.iter_mut()) {
            *v = *v as f32 as f64;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_dimensional() {
        let st = Standardizer::fit(&[vec![0.0], vec![2.0]]).unwrap();
        assert_eq!(st.mean, vec![1.0]);
        assert_eq!(st.scale, vec![1.0]);
        assert_eq!(st.apply(&[2.0]).unwrap(), vec![1.0]);
    }

    #[test]
    fn constant_dimension_maps_to_zero() {
        let data = vec![vec![3.0, 1.0], vec![3.0, 2.0], vec![3.0, 7.0]];
        let st = Standardizer::fit(&data).unwrap();
        assert_eq!(st.scale[0], 1.0);
        for s in &data {
            assert_eq!(st.apply(s).unwrap()[0], 0.0);
        }
    }

    #[test]
    fn fitted_columns_are_standard() {
        let data: Vec<Vec<f64>> = (0..50)
            .map(|i| vec![i as f64 * 0.37 + 5.0, ((i * 7) % 11) as f64])
            .collect();
        let st = Standardizer::fit(&data).unwrap();
        let z: Vec<Vec<f64>> = data.iter().map(|s| st.apply(s).unwrap()).collect();
        for d in 0..2 {
            let m = z.iter().map(|r| r[d]).sum::<f64>() / 50.0;
            let v = z.iter().map(|r| (r[d] - m).powi(2)).sum::<f64>() / 50.0;
            assert!(m.abs() < 1e-6);
            assert!((v - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn too_few_samples() {
        assert!(Standardizer::fit(&[vec![1.0]]).is_err());
    }
}
