//! Binary soft-margin SVM solved in the dual by pairwise coordinate
//! ascent (second-order working-set selection), followed by Platt
//! calibration of the decision values.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const TAU: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Kernel {
    Linear,
    Rbf { gamma: f64 },
}

impl Kernel {
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match *self {
            Kernel::Linear => a.iter().zip(b).map(|(x, y)| x * y).sum(),
            Kernel::Rbf { gamma } => {
                let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                (-gamma * d).exp()
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Kernel::Linear => Ok(()),
            Kernel::Rbf { gamma } if gamma > 0.0 && gamma.is_finite() => Ok(()),
            Kernel::Rbf { gamma } => Err(Error::Config(format!("rbf gamma must be > 0, got {gamma}"))),
        }
    }
}

/// Dense symmetric kernel matrix over a sample set.
#[derive(Debug, Clone)]
pub struct KernelMatrix {
    n: usize,
    values: Vec<f64>,
}

impl KernelMatrix {
    pub fn compute(kernel: &Kernel, samples: &[Vec<f64>]) -> Self {
        let n = samples.len();
        let rows = crate::par::map_range(n, |i| {
            (0..n)
                .map(|j| kernel.eval(&samples[i], &samples[j]))
                .collect::<Vec<f64>>()
        });
        Self {
            n,
            values: rows.concat(),
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n..(i + 1) * self.n]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverParams {
    pub tol: f64,
    /// `None` selects max(100_000, 100·n).
    pub max_iter: Option<usize>,
}

impl Default for SolverParams {
    fn default() -> Self {
        Self {
            tol: 1e-3,
            max_iter: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DualSolution {
    pub alpha: Vec<f64>,
    /// Offset b in f(x) = Σ yᵢαᵢK(xᵢ,x) + b.
    pub bias: f64,
    pub iterations: usize,
    /// ½αᵀQα − eᵀα
    pub objective: f64,
    /// Largest KKT violation at termination.
    pub gap: f64,
}

/// Minimizes ½αᵀQα − eᵀα subject to yᵀα = 0 and 0 ≤ αᵢ ≤ upper[i],
/// where Qᵢⱼ = yᵢyⱼKᵢⱼ.
pub fn smo_solve(
    k: &KernelMatrix,
    y: &[f64],
    upper: &[f64],
    params: &SolverParams,
) -> Result<DualSolution> {
    let n = k.len();
    if y.len() != n || upper.len() != n {
        return Err(Error::Dimension("labels or bounds do not match the kernel matrix".into()));
    }
    if y.iter().any(|&v| v != 1.0 && v != -1.0) {
        return Err(Error::Validation("labels must be +1 or -1".into()));
    }
    let max_iter = params.max_iter.unwrap_or((100 * n).max(100_000));
    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let is_up = |t: usize, a: &[f64]| {
        if y[t] > 0.0 {
            a[t] < upper[t]
        } else {
            a[t] > 0.0
        }
    };
    let is_low = |t: usize, a: &[f64]| {
        if y[t] > 0.0 {
            a[t] > 0.0
        } else {
            a[t] < upper[t]
        }
    };

    let mut iterations = 0;
    let gap;
    loop {
        // i maximizes -yG over I_up
        let mut g_max = f64::NEG_INFINITY;
        let mut i = usize::MAX;
        for t in 0..n {
            if is_up(t, &alpha) {
                let v = -y[t] * grad[t];
                if v > g_max {
                    g_max = v;
                    i = t;
                }
            }
        }
        let mut g_min = f64::INFINITY;
        let mut j = usize::MAX;
        let mut best_obj = f64::INFINITY;
        if i != usize::MAX {
            let ki = k.row(i);
            for t in 0..n {
                if !is_low(t, &alpha) {
                    continue;
                }
                let v = -y[t] * grad[t];
                g_min = g_min.min(v);
                let b = g_max - v;
                if b > 0.0 {
                    let mut a = ki[i] + k.get(t, t) - 2.0 * ki[t];
                    if a <= 0.0 {
                        a = TAU;
                    }
                    let obj = -(b * b) / a;
                    if obj <= best_obj {
                        best_obj = obj;
                        j = t;
                    }
                }
            }
        }
        if i == usize::MAX || j == usize::MAX || g_max - g_min < params.tol {
            gap = if i == usize::MAX || g_min == f64::INFINITY {
                0.0
            } else {
                (g_max - g_min).max(0.0)
            };
            break;
        }
        if iterations >= max_iter {
            return Err(Error::Convergence(format!(
                "SMO stopped after {iterations} iterations with KKT gap {:.3e}",
                g_max - g_min
            )));
        }
        iterations += 1;

        let (ci, cj) = (upper[i], upper[j]);
        let (old_i, old_j) = (alpha[i], alpha[j]);
        let kij = k.get(i, j);
        let mut quad = k.get(i, i) + k.get(j, j) - 2.0 * kij;
        if quad <= 0.0 {
            quad = TAU;
        }
        if y[i] != y[j] {
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > ci - cj {
                if alpha[i] > ci {
                    alpha[i] = ci;
                    alpha[j] = ci - diff;
                }
            } else if alpha[j] > cj {
                alpha[j] = cj;
                alpha[i] = cj + diff;
            }
        } else {
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > ci {
                if alpha[i] > ci {
                    alpha[i] = ci;
                    alpha[j] = sum - ci;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > cj {
                if alpha[j] > cj {
                    alpha[j] = cj;
                    alpha[i] = sum - cj;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let di = alpha[i] - old_i;
        let dj = alpha[j] - old_j;
        let (ki, kj) = (k.row(i), k.row(j));
        for t in 0..n {
            grad[t] += y[t] * (y[i] * ki[t] * di + y[j] * kj[t] * dj);
        }
    }

    // offset from free variables, or the midpoint of the feasible interval
    let mut ub = f64::INFINITY;
    let mut lb = f64::NEG_INFINITY;
    let mut free_sum = 0.0;
    let mut free = 0usize;
    for t in 0..n {
        let yg = y[t] * grad[t];
        if alpha[t] >= upper[t] {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            free += 1;
            free_sum += yg;
        }
    }
    let rho = if free > 0 {
        free_sum / free as f64
    } else {
        (ub + lb) / 2.0
    };
    let objective = 0.5 * alpha.iter().zip(&grad).map(|(a, g)| a * (g - 1.0)).sum::<f64>();
    Ok(DualSolution {
        alpha,
        bias: -rho,
        iterations,
        objective,
        gap,
    })
}

/// Fitted decision function f(x) = Σ cᵢK(sᵢ,x) + b.
#[derive(Debug, Clone, PartialEq)]
pub struct SvmModel {
    pub kernel: Kernel,
    pub support: Vec<Vec<f64>>,
    pub coef: Vec<f64>,
    pub bias: f64,
}

impl SvmModel {
    pub fn decision(&self, x: &[f64]) -> f64 {
        self.support
            .iter()
            .zip(&self.coef)
            .map(|(s, c)| c * self.kernel.eval(s, x))
            .sum::<f64>()
            + self.bias
    }

    pub fn quantize(&mut self) {
        let q = |v: &mut f64| *v = *v as f32 as f64;
        self.support.iter_mut().flatten().for_each(q);
        self.coef.iter_mut().for_each(q);
        q(&mut self.bias);
        if let Kernel::Rbf { gamma } = &mut self.kernel {
            q(gamma);
        }
    }
}

/// Sigmoid P(y=1|f) = 1 / (1 + exp(A·f + B)).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Platt {
    pub a: f64,
    pub b: f64,
}

impl Platt {
    pub fn probability(&self, f: f64) -> f64 {
        let z = self.a * f + self.b;
        let p = if z >= 0.0 {
            let e = (-z).exp();
            e / (1.0 + e)
        } else {
            1.0 / (1.0 + z.exp())
        };
        p.clamp(1e-12, 1.0 - 1e-12)
    }

    /// Newton's method with backtracking on the regularized-target
    /// log-likelihood.
    pub fn fit(decisions: &[f64], labels: &[bool]) -> Result<Self> {
        let n_pos = labels.iter().filter(|&&l| l).count() as f64;
        let n_neg = labels.len() as f64 - n_pos;
        if n_pos == 0.0 || n_neg == 0.0 {
            return Err(Error::Validation("calibration needs both classes".into()));
        }
        let hi = (n_pos + 1.0) / (n_pos + 2.0);
        let lo = 1.0 / (n_neg + 2.0);
        let t: Vec<f64> = labels.iter().map(|&l| if l { hi } else { lo }).collect();
        let (min_step, sigma, eps) = (1e-10, 1e-12, 1e-5);
        let mut a = 0.0;
        let mut b = ((n_neg + 1.0) / (n_pos + 1.0)).ln();
        let objective = |a: f64, b: f64| -> f64 {
            decisions
                .iter()
                .zip(&t)
                .map(|(f, t)| {
                    let z = f * a + b;
                    if z >= 0.0 {
                        t * z + (1.0 + (-z).exp()).ln()
                    } else {
                        (t - 1.0) * z + (1.0 + z.exp()).ln()
                    }
                })
                .sum()
        };
        let mut fval = objective(a, b);
        for _ in 0..100 {
            let (mut h11, mut h22, mut h21, mut g1, mut g2) = (sigma, sigma, 0.0, 0.0, 0.0);
            for (f, ti) in decisions.iter().zip(&t) {
                let z = f * a + b;
                let (p, q) = if z >= 0.0 {
                    let e = (-z).exp();
                    (e / (1.0 + e), 1.0 / (1.0 + e))
                } else {
                    let e = z.exp();
                    (1.0 / (1.0 + e), e / (1.0 + e))
                };
                let d2 = p * q;
                h11 += f * f * d2;
                h22 += d2;
                h21 += f * d2;
                let d1 = ti - p;
                g1 += f * d1;
                g2 += d1;
            }
            if g1.abs() < eps && g2.abs() < eps {
                break;
            }
            let det = h11 * h22 - h21 * h21;
            let da = -(h22 * g1 - h21 * g2) / det;
            let db = -(-h21 * g1 + h11 * g2) / det;
            let gd = g1 * da + g2 * db;
            let mut step = 1.0;
            let mut moved = false;
            while step >= min_step {
                let (na, nb) = (a + step * da, b + step * db);
                let nf = objective(na, nb);
                if nf < fval + 1e-4 * step * gd {
                    a = na;
                    b = nb;
                    fval = nf;
                    moved = true;
                    break;
                }
                step /= 2.0;
            }
            if !moved {
                break;
            }
        }
        if !(a.is_finite() && b.is_finite()) {
            return Err(Error::Numeric("calibration diverged".into()));
        }
        Ok(Self { a, b })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmParams {
    pub kernel: Kernel,
    pub c: f64,
    pub tol: f64,
}

impl SvmParams {
    pub fn validate(&self) -> Result<()> {
        self.kernel.validate()?;
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::Config(format!("C must be > 0, got {}", self.c)));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Config("solver tolerance must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibratedSvm {
    pub svm: SvmModel,
    pub platt: Platt,
}

impl CalibratedSvm {
    pub fn decision(&self, x: &[f64]) -> f64 {
        self.svm.decision(x)
    }

    pub fn probability(&self, x: &[f64]) -> f64 {
        self.platt.probability(self.decision(x))
    }
}

/// Per-class box bounds with C_pos·n_pos = C_neg·n_neg = C·n/2.
pub fn class_bounds(labels: &[bool], c: f64) -> Result<Vec<f64>> {
    let n = labels.len() as f64;
    let n_pos = labels.iter().filter(|&&l| l).count() as f64;
    let n_neg = n - n_pos;
    if n_pos == 0.0 || n_neg == 0.0 {
        return Err(Error::Validation(
            "SVM training needs at least one positive and one negative sample".into(),
        ));
    }
    let (cp, cn) = (c * n / (2.0 * n_pos), c * n / (2.0 * n_neg));
    Ok(labels.iter().map(|&l| if l { cp } else { cn }).collect())
}

/// Trains on a sample set whose kernel matrix is already available.
pub fn svm_train_with_matrix(
    samples: &[Vec<f64>],
    labels: &[bool],
    k: &KernelMatrix,
    params: &SvmParams,
) -> Result<CalibratedSvm> {
    params.validate()?;
    let upper = class_bounds(labels, params.c)?;
    let y: Vec<f64> = labels.iter().map(|&l| if l { 1.0 } else { -1.0 }).collect();
    let sol = smo_solve(
        k,
        &y,
        &upper,
        &SolverParams {
            tol: params.tol,
            max_iter: None,
        },
    )?;
    let mut support = Vec::new();
    let mut coef = Vec::new();
    for (i, &a) in sol.alpha.iter().enumerate() {
        if a > 0.0 {
            support.push(samples[i].clone());
            coef.push(y[i] * a);
        }
    }
    let mut svm = SvmModel {
        kernel: params.kernel,
        support,
        coef,
        bias: sol.bias,
    };
    svm.quantize();
    let decisions: Vec<f64> = samples.iter().map(|s| svm.decision(s)).collect();
    let platt = Platt::fit(&decisions, labels)?;
    Ok(CalibratedSvm {
        svm,
        platt: Platt {
            a: platt.a as f32 as f64,
            b: platt.b as f32 as f64,
        },
    })
}

pub fn svm_train(
    positives: &[Vec<f64>],
    negatives: &[Vec<f64>],
    params: &SvmParams,
) -> Result<CalibratedSvm> {
    if positives.is_empty() || negatives.is_empty() {
        return Err(Error::Validation(
            "SVM training needs at least one positive and one negative sample".into(),
        ));
    }
    let samples: Vec<Vec<f64>> = positives.iter().chain(negatives).cloned().collect();
    let labels: Vec<bool> = (0..samples.len()).map(|i| i < positives.len()).collect();
    let k = KernelMatrix::compute(&params.kernel, &samples);
    svm_train_with_matrix(&samples, &labels, &k, params)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear(c: f64) -> SvmParams {
        SvmParams {
            kernel: Kernel::Linear,
            c,
            tol: 1e-3,
        }
    }

    #[test]
    fn symmetric_pair() {
        let m = svm_train(&[vec![1.0]], &[vec![-1.0]], &linear(1.0)).unwrap();
        assert!(m.decision(&[0.0]).abs() < 1e-6);
        for x in [-3.0, -0.5, 0.2, 4.0] {
            assert_eq!(m.decision(&[x]).signum(), f64::signum(x));
        }
        assert!(m.probability(&[2.0]) > 0.5);
        assert!(m.probability(&[-2.0]) < 0.5);
    }

    #[test]
    fn xor_rbf() {
        let pos = vec![vec![0.0, 0.0], vec![1.0, 1.0]];
        let neg = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
        let p = SvmParams {
            kernel: Kernel::Rbf { gamma: 1.0 },
            c: 10.0,
            tol: 1e-3,
        };
        let m = svm_train(&pos, &neg, &p).unwrap();
        assert!(pos.iter().all(|x| m.decision(x) > 0.0));
        assert!(neg.iter().all(|x| m.decision(x) < 0.0));
    }

    #[test]
    fn one_sided_rejected() {
        assert!(svm_train(&[vec![1.0]], &[], &linear(1.0)).is_err());
    }

    #[test]
    fn weighted_bounds_balance() {
        let labels = [true, false, false, false];
        let b = class_bounds(&labels, 1.0).unwrap();
        assert!((b[0] * 1.0 - b[1] * 3.0).abs() < 1e-12);
    }

    #[test]
    fn iteration_cap_reports() {
        let samples: Vec<Vec<f64>> = (0..20).map(|i| vec![(i as f64 * 0.7).sin(), (i as f64).cos()]).collect();
        let y: Vec<f64> = (0..20).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let k = KernelMatrix::compute(&Kernel::Linear, &samples);
        let r = smo_solve(
            &k,
            &y,
            &[100.0; 20],
            &SolverParams {
                tol: 1e-3,
                max_iter: Some(1),
            },
        );
        assert!(matches!(r, Err(Error::Convergence(_))));
    }

    #[test]
    fn platt_is_monotone() {
        let f: Vec<f64> = (0..20).map(|i| i as f64 / 5.0 - 2.0).collect();
        let l: Vec<bool> = f.iter().map(|&v| v > 0.1).collect();
        let p = Platt::fit(&f, &l).unwrap();
        assert!(p.a < 0.0);
        assert!(p.probability(1.0) > p.probability(-1.0));
    }
}
