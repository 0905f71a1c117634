//! Multinomial logistic regression on standardized features.
//!
//! Minimizes mean cross-entropy plus `l2/2·‖W‖²` (and a tiny ridge on the
//! biases so the optimum is unique) with damped Newton steps; problems with
//! more than [`NEWTON_MAX_PARAMS`] parameters fall back to gradient descent
//! with backtracking.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{argmax, log_sum_exp, softmax};

pub const NEWTON_MAX_PARAMS: usize = 3000;
const BIAS_RIDGE: f64 = 1e-8;
const GRAD_TOL: f64 = 1e-10;
const NEWTON_ITERS: usize = 100;
const GD_ITERS: usize = 5000;

#[derive(Clone, Debug, PartialEq)]
pub struct LogReg {
    mean: Vec<f64>,
    scale: Vec<f64>,
    /// `(dim + 1) × classes`; the last row holds the biases.
    theta: DMatrix<f64>,
    pub l2: f64,
    pub iterations: usize,
    /// Training objective at the solution.
    pub loss: f64,
}

struct Problem {
    x: DMatrix<f64>,
    y: Vec<usize>,
    classes: usize,
    l2: f64,
}

impl Problem {
    fn dim(&self) -> usize {
        self.x.ncols()
    }

    fn probs(&self, theta: &DMatrix<f64>) -> DMatrix<f64> {
        let mut p = &self.x * theta;
        for mut row in p.row_iter_mut() {
            let logits: Vec<f64> = row.iter().copied().collect();
            for (v, s) in row.iter_mut().zip(softmax(&logits)) {
                *v = s;
            }
        }
        p
    }

    fn penalty(&self, a: usize) -> f64 {
        if a + 1 == self.dim() {
            BIAS_RIDGE
        } else {
            self.l2
        }
    }

    fn objective(&self, theta: &DMatrix<f64>) -> f64 {
        let logits = &self.x * theta;
        let mut nll = 0.0;
        for (row, &y) in logits.row_iter().zip(&self.y) {
            let row: Vec<f64> = row.iter().copied().collect();
            nll += log_sum_exp(&row) - row[y];
        }
        let mut reg = 0.0;
        for (k, v) in theta.iter().enumerate() {
            reg += 0.5 * self.penalty(k % self.dim()) * v * v;
        }
        nll / self.y.len() as f64 + reg
    }

    fn gradient(&self, theta: &DMatrix<f64>, p: &DMatrix<f64>) -> DMatrix<f64> {
        let mut resid = p.clone();
        for (r, &y) in self.y.iter().enumerate() {
            resid[(r, y)] -= 1.0;
        }
        let mut g = self.x.transpose() * resid / self.y.len() as f64;
        for c in 0..self.classes {
            for i in 0..self.dim() {
                g[(i, c)] += self.penalty(i) * theta[(i, c)];
            }
        }
        g
    }

    fn hessian(&self, p: &DMatrix<f64>) -> DMatrix<f64> {
        let (n, d, c) = (self.y.len(), self.dim(), self.classes);
        let mut h = DMatrix::zeros(d * c, d * c);
        for a in 0..c {
            for b in a..c {
                let mut weighted = self.x.clone();
                for (r, mut row) in weighted.row_iter_mut().enumerate() {
                    let s = p[(r, a)] * (f64::from(u8::from(a == b)) - p[(r, b)]) / n as f64;
                    row *= s;
                }
                let block = self.x.transpose() * weighted;
                h.view_mut((a * d, b * d), (d, d)).copy_from(&block);
                if a != b {
                    h.view_mut((b * d, a * d), (d, d))
                        .copy_from(&block.transpose());
                }
            }
            for i in 0..d {
                h[(a * d + i, a * d + i)] += self.penalty(i);
            }
        }
        h
    }

    fn newton_direction(&self, p: &DMatrix<f64>, g: &DMatrix<f64>) -> DMatrix<f64> {
        let h = self.hessian(p);
        let rhs = DVector::from_column_slice(g.as_slice());
        let mut jitter = 0.0;
        loop {
            let mut hj = h.clone();
            if jitter > 0.0 {
                for i in 0..hj.nrows() {
                    hj[(i, i)] += jitter;
                }
            }
            if let Some(chol) = hj.cholesky() {
                let step = chol.solve(&rhs);
                return DMatrix::from_column_slice(g.nrows(), g.ncols(), (-step).as_slice());
            }
            jitter = if jitter == 0.0 { 1e-10 } else { jitter * 10.0 };
        }
    }

    fn solve(&self, mut theta: DMatrix<f64>) -> (DMatrix<f64>, usize, f64) {
        let newton = self.dim() * self.classes <= NEWTON_MAX_PARAMS;
        let max_iters = if newton { NEWTON_ITERS } else { GD_ITERS };
        let mut f = self.objective(&theta);
        let mut t_gd = 1.0;
        for iter in 0..max_iters {
            let p = self.probs(&theta);
            let g = self.gradient(&theta, &p);
            if g.amax() < GRAD_TOL {
                return (theta, iter, f);
            }
            let dir = if newton {
                self.newton_direction(&p, &g)
            } else {
                -&g
            };
            let slope = g.dot(&dir);
            let mut t = if newton { 1.0 } else { t_gd * 2.0 };
            let mut accepted = None;
            for _ in 0..60 {
                let cand = &theta + &dir * t;
                let fc = self.objective(&cand);
                if fc <= f + 1e-4 * t * slope {
                    accepted = Some((cand, fc));
                    break;
                }
                t *= 0.5;
            }
            match accepted {
                Some((cand, fc)) => {
                    let done = f - fc <= 1e-15 * f.abs().max(1.0);
                    theta = cand;
                    f = fc;
                    t_gd = t;
                    if done && newton {
                        return (theta, iter + 1, f);
                    }
                }
                None => return (theta, iter, f),
            }
        }
        (theta, max_iters, f)
    }
}

pub(super) fn standardize(features: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let n = features.len() as f64;
    let dim = features[0].len();
    let mut mean = vec![0.0; dim];
    for f in features {
        for (m, v) in mean.iter_mut().zip(f) {
            *m += v / n;
        }
    }
    let mut scale = vec![0.0; dim];
    for f in features {
        for ((s, v), m) in scale.iter_mut().zip(f).zip(&mean) {
            *s += (v - m) * (v - m) / n;
        }
    }
    for s in &mut scale {
        *s = if *s > 1e-24 { s.sqrt() } else { 1.0 };
    }
    (mean, scale)
}

fn design(features: &[Vec<f64>], mean: &[f64], scale: &[f64]) -> DMatrix<f64> {
    let dim = mean.len();
    DMatrix::from_fn(features.len(), dim + 1, |r, c| {
        if c == dim {
            1.0
        } else {
            (features[r][c] - mean[c]) / scale[c]
        }
    })
}

pub(super) fn check_inputs(features: &[Vec<f64>], labels: &[usize], classes: usize) -> Result<()> {
    if features.is_empty() || features.len() != labels.len() {
        return Err(Error::Config(format!(
            "{} feature rows for {} labels",
            features.len(),
            labels.len()
        )));
    }
    let dim = features[0].len();
    if let Some(f) = features.iter().find(|f| f.len() != dim) {
        return Err(Error::DimMismatch {
            expected: dim,
            got: f.len(),
        });
    }
    if classes < 2 || labels.iter().any(|&y| y >= classes) {
        return Err(Error::Config(format!("labels must lie in 0..{classes}")));
    }
    Ok(())
}

/// Fits from a zero start.
pub fn fit_logreg(
    features: &[Vec<f64>],
    labels: &[usize],
    classes: usize,
    l2: f64,
) -> Result<LogReg> {
    LogReg::fit_from(features, labels, classes, l2, None)
}

impl LogReg {
    /// Fits starting from `init` (raw parameters in standardized space, `(dim + 1) × classes`
    /// column-major), or from zero.
    pub fn fit_from(
        features: &[Vec<f64>],
        labels: &[usize],
        classes: usize,
        l2: f64,
        init: Option<&[f64]>,
    ) -> Result<LogReg> {
        check_inputs(features, labels, classes)?;
        if !(l2 >= 0.0 && l2.is_finite()) {
            return Err(Error::Config(format!("invalid L2 strength {l2}")));
        }
        let (mean, scale) = standardize(features);
        let problem = Problem {
            x: design(features, &mean, &scale),
            y: labels.to_vec(),
            classes,
            l2,
        };
        let d = problem.dim();
        let theta = match init {
            Some(v) if v.len() == d * classes => DMatrix::from_column_slice(d, classes, v),
            Some(v) => {
                return Err(Error::DimMismatch {
                    expected: d * classes,
                    got: v.len(),
                })
            }
            None => DMatrix::zeros(d, classes),
        };
        let (theta, iterations, loss) = problem.solve(theta);
        Ok(LogReg {
            mean,
            scale,
            theta,
            l2,
            iterations,
            loss,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.theta.ncols()
    }

    pub fn params(&self) -> &[f64] {
        self.theta.as_slice()
    }

    /// Largest absolute feature weight (biases excluded).
    pub fn max_weight(&self) -> f64 {
        let d = self.mean.len();
        self.theta.rows(0, d).amax()
    }

    pub fn predict_proba(&self, features: &[f64]) -> Vec<f64> {
        let classes = self.num_classes();
        let d = self.mean.len();
        let logits: Vec<f64> = (0..classes)
            .map(|c| {
                let mut z = self.theta[(d, c)];
                for i in 0..d {
                    z += self.theta[(i, c)] * (features[i] - self.mean[i]) / self.scale[i];
                }
                z
            })
            .collect();
        softmax(&logits)
    }

    pub fn predict(&self, features: &[f64]) -> usize {
        argmax(&self.predict_proba(features))
    }

    pub fn accuracy(&self, features: &[Vec<f64>], labels: &[usize]) -> f64 {
        if labels.is_empty() {
            return 0.0;
        }
        let correct = features
            .iter()
            .zip(labels)
            .filter(|(f, &y)| self.predict(f) == y)
            .count();
        correct as f64 / labels.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_pcg::Pcg32;

    use super::*;

    fn blobs(
        n: usize,
        dim: usize,
        classes: usize,
        spread: f64,
        seed: u64,
    ) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = Pcg32::seed_from_u64(seed);
        let centers: Vec<Vec<f64>> = (0..classes)
            .map(|_| (0..dim).map(|_| rng.random_range(-3.0..3.0)).collect())
            .collect();
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let c = i % classes;
            x.push(
                centers[c]
                    .iter()
                    .map(|m| m + rng.random_range(-spread..spread))
                    .collect(),
            );
            y.push(c);
        }
        (x, y)
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (x, y) = blobs(40, 3, 3, 2.0, 1);
        let (mean, scale) = standardize(&x);
        let p = Problem {
            x: design(&x, &mean, &scale),
            y,
            classes: 3,
            l2: 0.1,
        };
        let mut rng = Pcg32::seed_from_u64(2);
        let theta = DMatrix::from_fn(4, 3, |_, _| rng.random_range(-1.0..1.0));
        let g = p.gradient(&theta, &p.probs(&theta));
        for k in 0..12 {
            let mut hi = theta.clone();
            let mut lo = theta.clone();
            hi[k] += 1e-6;
            lo[k] -= 1e-6;
            let numeric = (p.objective(&hi) - p.objective(&lo)) / 2e-6;
            assert!((numeric - g[k]).abs() < 1e-7, "{k}: {numeric} vs {}", g[k]);
        }
    }

    #[test]
    fn separable_is_perfect() {
        let (x, y) = blobs(200, 4, 2, 0.5, 3);
        let model = fit_logreg(&x, &y, 2, 1e-4).unwrap();
        assert_eq!(model.accuracy(&x, &y), 1.0);
    }

    #[test]
    fn convex_restart_agrees() {
        let (x, y) = blobs(300, 5, 3, 3.0, 4);
        let a = fit_logreg(&x, &y, 3, 1e-2).unwrap();
        let mut rng = Pcg32::seed_from_u64(9);
        let init: Vec<f64> = (0..18).map(|_| rng.random_range(-2.0..2.0)).collect();
        let b = LogReg::fit_from(&x, &y, 3, 1e-2, Some(&init)).unwrap();
        assert!((a.loss - b.loss).abs() < 1e-6, "{} vs {}", a.loss, b.loss);
    }

    #[test]
    fn gradient_descent_fallback_converges() {
        let (x, y) = blobs(200, 1100, 3, 3.0, 5);
        let model = fit_logreg(&x, &y, 3, 1e-1).unwrap();
        assert!(model.params().len() > NEWTON_MAX_PARAMS);
        assert_eq!(model.accuracy(&x, &y), 1.0);
    }

    #[test]
    fn shuffled_labels_are_chance() {
        let mut rng = Pcg32::seed_from_u64(6);
        let x: Vec<Vec<f64>> = (0..4000)
            .map(|_| (0..8).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let y: Vec<usize> = (0..4000).map(|_| rng.random_range(0..2)).collect();
        let model = fit_logreg(&x[..2000], &y[..2000], 2, 1e-2).unwrap();
        let acc = model.accuracy(&x[2000..], &y[2000..]);
        assert!((acc - 0.5).abs() <= 0.05, "{acc}");
    }

    #[test]
    fn huge_l2_predicts_majority() {
        let (x, mut y) = blobs(300, 4, 3, 1.0, 7);
        for label in y.iter_mut().take(150) {
            *label = 1;
        }
        let model = fit_logreg(&x, &y, 3, 1e8).unwrap();
        assert!(model.max_weight() < 1e-6);
        assert!(x.iter().all(|f| model.predict(f) == 1));
        let majority = y.iter().filter(|&&c| c == 1).count() as f64 / y.len() as f64;
        assert_eq!(model.accuracy(&x, &y), majority);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(fit_logreg(&[vec![1.0], vec![1.0, 2.0]], &[0, 1], 2, 0.1).is_err());
        assert!(fit_logreg(&[vec![1.0]], &[2], 2, 0.1).is_err());
    }
}
