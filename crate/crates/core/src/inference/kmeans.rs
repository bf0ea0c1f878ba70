//! k-means with k-means++ seeding and Lloyd refinement.

use crate::error::{Error, Result};
use crate::rng::{self, Rng64};

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansConfig {
    pub k: usize,
    /// Independent seedings; the lowest objective wins.
    pub restarts: usize,
    pub max_iter: usize,
    /// Stop when no center moves farther than this.
    pub tol: f64,
    pub seed: u64,
}

impl KMeansConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        Self {
            k,
            restarts: 10,
            max_iter: 100,
            tol: 1e-6,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    pub centers: Vec<Vec<f64>>,
}

pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl ClusterModel {
    pub fn k(&self) -> usize {
        self.centers.len()
    }

    /// Nearest center; ties go to the lower index.
    pub fn assign(&self, x: &[f64]) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, c) in self.centers.iter().enumerate() {
            let d = sq_dist(x, c);
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }

    /// Sum of squared distances to the assigned centers.
    pub fn objective(&self, samples: &[Vec<f64>]) -> f64 {
        samples
            .iter()
            .map(|s| sq_dist(s, &self.centers[self.assign(s)]))
            .sum()
    }

    pub fn quantize(&mut self) {
        for c in &mut self.centers {
            c.iter_mut().for_each(|v| *v = *v as f32 as f64);
        }
    }
}

#[derive(Debug, Clone)]
pub struct KMeansFit {
    pub model: ClusterModel,
    pub assignments: Vec<usize>,
    pub objective: f64,
    pub iterations: usize,
}

fn plus_plus(samples: &[Vec<f64>], k: usize, rng: &mut Rng64) -> Vec<Vec<f64>> {
    let n = samples.len();
    let mut centers = vec![samples[rng.below(n)].clone()];
    let mut d2: Vec<f64> = samples.iter().map(|s| sq_dist(s, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.uniform() * total;
            let mut acc = 0.0;
            let mut idx = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                acc += w;
                if acc > target && w > 0.0 {
                    idx = i;
                    break;
                }
            }
            idx
        } else {
            rng.below(n)
        };
        let c = samples[pick].clone();
        for (d, s) in d2.iter_mut().zip(samples) {
            *d = d.min(sq_dist(s, &c));
        }
        centers.push(c);
    }
    centers
}

fn lloyd(samples: &[Vec<f64>], mut centers: Vec<Vec<f64>>, cfg: &KMeansConfig) -> KMeansFit {
    let dim = samples[0].len();
    let k = centers.len();
    let mut model = ClusterModel { centers: vec![] };
    let mut assignments = vec![0; samples.len()];
    let mut iterations = 0;
    for it in 0..cfg.max_iter {
        iterations = it + 1;
        model.centers = centers.clone();
        for (a, s) in assignments.iter_mut().zip(samples) {
            *a = model.assign(s);
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (s, &a) in samples.iter().zip(&assignments) {
            counts[a] += 1;
            for (acc, x) in sums[a].iter_mut().zip(s) {
                *acc += x;
            }
        }
        let mut next: Vec<Vec<f64>> = sums
            .into_iter()
            .zip(&counts)
            .map(|(s, &c)| {
                if c == 0 {
                    Vec::new()
                } else {
                    s.into_iter().map(|v| v / c as f64).collect()
                }
            })
            .collect();
        // empty clusters take the sample farthest from its own center
        for j in 0..k {
            if counts[j] > 0 {
                continue;
            }
            let far = samples
                .iter()
                .zip(&assignments)
                .enumerate()
                .filter(|(_, (_, &a))| counts[a] > 1)
                .map(|(i, (s, &a))| (i, sq_dist(s, &model.centers[a])))
                .fold(None, |best: Option<(usize, f64)>, (i, d)| match best {
                    Some((_, bd)) if bd >= d => best,
                    _ => Some((i, d)),
                });
            if let Some((i, _)) = far {
                counts[assignments[i]] -= 1;
                assignments[i] = j;
                counts[j] = 1;
                next[j] = samples[i].clone();
            } else {
                next[j] = centers[j].clone();
            }
        }
        let shift = centers
            .iter()
            .zip(&next)
            .map(|(a, b)| sq_dist(a, b).sqrt())
            .fold(0.0, f64::max);
        centers = next;
        if shift < cfg.tol {
            break;
        }
    }
    model.centers = centers;
    for (a, s) in assignments.iter_mut().zip(samples) {
        *a = model.assign(s);
    }
    let objective = model.objective(samples);
    KMeansFit {
        model,
        assignments,
        objective,
        iterations,
    }
}

pub fn kmeans_fit_with(samples: &[Vec<f64>], cfg: &KMeansConfig) -> Result<KMeansFit> {
    if cfg.k == 0 {
        return Err(Error::Config("k-means needs k >= 1".into()));
    }
    if cfg.k > samples.len() {
        return Err(Error::Validation(format!(
            "k-means with k = {} on {} samples",
            cfg.k,
            samples.len()
        )));
    }
    let dim = samples[0].len();
    if samples.iter().any(|s| s.len() != dim) {
        return Err(Error::Dimension("samples have differing lengths".into()));
    }
    let mut best: Option<KMeansFit> = None;
    for r in 0..cfg.restarts.max(1) {
        let mut rng = Rng64::new(rng::mix(cfg.seed, r as u64));
        let fit = lloyd(samples, plus_plus(samples, cfg.k, &mut rng), cfg);
        if best.as_ref().is_none_or(|b| fit.objective < b.objective) {
            best = Some(fit);
        }
    }
    Ok(best.expect("at least one restart"))
}

pub fn kmeans_fit(samples: &[Vec<f64>], k: usize, seed: u64) -> Result<KMeansFit> {
    kmeans_fit_with(samples, &KMeansConfig::new(k, seed))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separated_pairs() {
        let s = vec![
            vec![0.0, 0.0],
            vec![0.0, 1.0],
            vec![10.0, 10.0],
            vec![10.0, 12.0],
        ];
        let fit = kmeans_fit(&s, 2, 1).unwrap();
        let mut c = fit.model.centers.clone();
        c.sort_by(|a, b| a[0].partial_cmp(&b[0]).unwrap());
        assert_eq!(c, vec![vec![0.0, 0.5], vec![10.0, 11.0]]);
    }

    #[test]
    fn k_equals_n() {
        let s: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, (i * i) as f64]).collect();
        let fit = kmeans_fit(&s, 6, 3).unwrap();
        assert_eq!(fit.objective, 0.0);
    }

    #[test]
    fn too_many_clusters() {
        assert!(kmeans_fit(&[vec![1.0]], 2, 0).is_err());
    }

    #[test]
    fn deterministic() {
        let s: Vec<Vec<f64>> = (0..40)
            .map(|i| vec![(i as f64 * 1.7).sin(), (i as f64 * 0.3).cos()])
            .collect();
        let a = kmeans_fit(&s, 4, 9).unwrap();
        let b = kmeans_fit(&s, 4, 9).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.assignments, b.assignments);
    }

    #[test]
    fn duplicates_do_not_leave_empty_clusters() {
        let mut s = vec![vec![1.0, 1.0]; 5];
        s.push(vec![2.0, 2.0]);
        s.push(vec![3.0, 3.0]);
        let fit = kmeans_fit(&s, 3, 0).unwrap();
        for j in 0..3 {
            assert!(fit.assignments.contains(&j));
        }
    }
}
