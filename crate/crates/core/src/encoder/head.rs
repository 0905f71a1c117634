use rand::Rng;

use super::Params;
use crate::linalg::Matrix;

/// Consistent / inconsistent.
pub const HEAD_CLASSES: usize = 2;

/// Two linear layers with a tanh in between: `W2 · tanh(W1 · v + b1) + b2`.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadParams {
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct HeadTape {
    input: Vec<f64>,
    hidden: Vec<f64>,
}

impl HeadParams {
    pub fn new<R: Rng + ?Sized>(input_dim: usize, hidden_dim: usize, rng: &mut R) -> Self {
        let s1 = 1.0 / (input_dim as f64).sqrt();
        let s2 = 1.0 / (hidden_dim as f64).sqrt();
        HeadParams {
            w1: Matrix::uniform(hidden_dim, input_dim, s1, rng),
            b1: vec![0.0; hidden_dim],
            w2: Matrix::uniform(HEAD_CLASSES, hidden_dim, s2, rng),
            b2: vec![0.0; HEAD_CLASSES],
        }
    }

    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        HeadParams {
            w1: Matrix::zeros(hidden_dim, input_dim),
            b1: vec![0.0; hidden_dim],
            w2: Matrix::zeros(HEAD_CLASSES, hidden_dim),
            b2: vec![0.0; HEAD_CLASSES],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.rows()
    }

    pub fn forward(&self, v: &[f64]) -> (Vec<f64>, HeadTape) {
        let mut hidden = self.b1.clone();
        self.w1.matvec_acc(v, &mut hidden);
        for x in &mut hidden {
            *x = x.tanh();
        }
        let mut logits = self.b2.clone();
        self.w2.matvec_acc(&hidden, &mut logits);
        let tape = HeadTape {
            input: v.to_vec(),
            hidden,
        };
        (logits, tape)
    }

    pub fn logits(&self, v: &[f64]) -> Vec<f64> {
        self.forward(v).0
    }

    /// Accumulates head gradients and returns `∂L/∂v`.
    pub fn backward(&self, tape: &HeadTape, d_logits: &[f64], grads: &mut HeadParams) -> Vec<f64> {
        for (b, d) in grads.b2.iter_mut().zip(d_logits) {
            *b += d;
        }
        grads.w2.outer_acc(d_logits, &tape.hidden);
        let mut d_hidden = vec![0.0; self.hidden_dim()];
        self.w2.matvec_t_acc(d_logits, &mut d_hidden);
        for (d, h) in d_hidden.iter_mut().zip(&tape.hidden) {
            *d *= 1.0 - h * h;
        }
        for (b, d) in grads.b1.iter_mut().zip(&d_hidden) {
            *b += d;
        }
        grads.w1.outer_acc(&d_hidden, &tape.input);
        let mut d_input = vec![0.0; self.input_dim()];
        self.w1.matvec_t_acc(&d_hidden, &mut d_input);
        d_input
    }
}

impl Params for HeadParams {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![self.w1.as_slice(), &self.b1, self.w2.as_slice(), &self.b2]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.w1.as_mut_slice(),
            &mut self.b1,
            self.w2.as_mut_slice(),
            &mut self.b2,
        ]
    }
}
