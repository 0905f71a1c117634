//! One-hidden-layer probe: linear → sigmoid → dropout → linear, trained with
//! Adam on mean cross-entropy over standardized features.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;

use super::logreg::standardize;
use crate::error::{Error, Result};
use crate::linalg::{argmax, sigmoid, softmax};
use crate::rng::{domain, RngStream};

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    mean: Vec<f64>,
    scale: Vec<f64>,
    w1: DMatrix<f64>,
    b1: DVector<f64>,
    w2: DMatrix<f64>,
    b2: DVector<f64>,
    pub dropout: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct MlpSettings {
    pub hidden: usize,
    pub dropout: f64,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]], lr: f64) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        self.t += 1;
        let c1 = 1.0 - B1.powi(self.t);
        let c2 = 1.0 - B2.powi(self.t);
        let mut k = 0;
        for (p, g) in params.iter_mut().zip(grads) {
            for (w, &d) in p.iter_mut().zip(g.iter()) {
                self.m[k] = B1 * self.m[k] + (1.0 - B1) * d;
                self.v[k] = B2 * self.v[k] + (1.0 - B2) * d * d;
                *w -= lr * (self.m[k] / c1) / ((self.v[k] / c2).sqrt() + 1e-8);
                k += 1;
            }
        }
    }
}

impl Mlp {
    fn hidden(&self, x: &[f64]) -> DVector<f64> {
        let z = DVector::from_iterator(
            x.len(),
            x.iter()
                .zip(&self.mean)
                .zip(&self.scale)
                .map(|((v, m), s)| (v - m) / s),
        );
        (&self.w1 * z + &self.b1).map(sigmoid)
    }

    /// Dropout is inactive at prediction time (inverted dropout in training).
    pub fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
        let logits = &self.w2 * self.hidden(x) + &self.b2;
        softmax(logits.as_slice())
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        argmax(&self.predict_proba(x))
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

pub fn fit_mlp(
    features: &[Vec<f64>],
    labels: &[usize],
    classes: usize,
    s: &MlpSettings,
) -> Result<Mlp> {
    super::logreg::check_inputs(features, labels, classes)?;
    if s.hidden == 0 || !(0.0..1.0).contains(&s.dropout) || s.batch_size == 0 {
        return Err(Error::Config("invalid MLP probe settings".into()));
    }
    let dim = features[0].len();
    let (mean, scale) = standardize(features);
    let x: Vec<DVector<f64>> = features
        .iter()
        .map(|f| {
            DVector::from_iterator(
                dim,
                f.iter()
                    .zip(&mean)
                    .zip(&scale)
                    .map(|((v, m), sd)| (v - m) / sd),
            )
        })
        .collect();
    let key = [domain::CLASSIFIER, s.hidden as u64, s.dropout.to_bits()];
    let mut rng = RngStream::keyed(s.seed, &key);
    let r1 = 1.0 / (dim as f64).sqrt();
    let r2 = 1.0 / (s.hidden as f64).sqrt();
    let mut mlp = Mlp {
        mean,
        scale,
        w1: DMatrix::from_fn(s.hidden, dim, |_, _| rng.random_range(-r1..r1)),
        b1: DVector::zeros(s.hidden),
        w2: DMatrix::from_fn(classes, s.hidden, |_, _| rng.random_range(-r2..r2)),
        b2: DVector::zeros(classes),
        dropout: s.dropout,
    };
    let n_params = mlp.w1.len() + mlp.b1.len() + mlp.w2.len() + mlp.b2.len();
    let mut adam = Adam::new(n_params);
    let mut order: Vec<usize> = (0..x.len()).collect();
    let keep = 1.0 - s.dropout;
    for _ in 0..s.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(s.batch_size) {
            let mut gw1 = DMatrix::zeros(s.hidden, dim);
            let mut gb1 = DVector::zeros(s.hidden);
            let mut gw2 = DMatrix::zeros(classes, s.hidden);
            let mut gb2 = DVector::zeros(classes);
            let inv = 1.0 / batch.len() as f64;
            for &i in batch {
                let a = (&mlp.w1 * &x[i] + &mlp.b1).map(sigmoid);
                let mask = DVector::from_fn(s.hidden, |_, _| {
                    if s.dropout == 0.0 || rng.random_bool(keep) {
                        1.0 / keep
                    } else {
                        0.0
                    }
                });
                let h = a.component_mul(&mask);
                let logits = &mlp.w2 * &h + &mlp.b2;
                let mut d = DVector::from_vec(softmax(logits.as_slice()));
                d[labels[i]] -= 1.0;
                d *= inv;
                gw2 += &d * h.transpose();
                gb2 += &d;
                let dh = mlp.w2.transpose() * &d;
                let dz = dh
                    .component_mul(&mask)
                    .component_mul(&a.map(|v| v * (1.0 - v)));
                gw1 += &dz * x[i].transpose();
                gb1 += dz;
            }
            adam.step(
                &mut [
                    mlp.w1.as_mut_slice(),
                    mlp.b1.as_mut_slice(),
                    mlp.w2.as_mut_slice(),
                    mlp.b2.as_mut_slice(),
                ],
                &[
                    gw1.as_slice(),
                    gb1.as_slice(),
                    gw2.as_slice(),
                    gb2.as_slice(),
                ],
                s.lr,
            );
        }
    }
    Ok(mlp)
}
