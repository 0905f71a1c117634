//! BiLSTM-max sentence encoder.
//!
//! A forward LSTM reads the embedded tokens left to right and a second LSTM
//! reads them right to left. At every position the two hidden states are
//! concatenated, and the sentence encoding is the elementwise max over
//! positions of those `2H`-vectors.
//!
//! Gradients are exact reverse mode: [`encode_with_tape`] records every gate
//! activation, and [`EncoderTape::backward`] routes the encoding gradient
//! through the max-pool (to the argmax position of each coordinate, lowest
//! position on ties) and then back through time in both directions.

mod checkpoint;
mod gradcheck;
mod head;

use std::ops::Deref;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use self::checkpoint::FORMAT_VERSION;
pub use self::checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CheckpointMeta, MAGIC,
};
pub use self::gradcheck::{finite_diff_check, finite_diff_check_smooth, relative_error};
pub use self::head::{HeadParams, HeadTape, HEAD_CLASSES};
use crate::corpus::TokenSequence;
use crate::error::{Error, Result};
use crate::linalg::{sigmoid, Matrix};

/// Flat views over every trainable tensor, in a fixed order.
pub trait Params {
    fn tensors(&self) -> Vec<&[f64]>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn zero(&mut self) {
        for t in self.tensors_mut() {
            t.fill(0.0);
        }
    }

    fn squared_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.iter())
            .map(|x| x * x)
            .sum()
    }

    fn all_finite(&self) -> bool {
        self.tensors()
            .iter()
            .flat_map(|t| t.iter())
            .all(|x| x.is_finite())
    }

    /// `self += alpha · other`; both must share a layout.
    fn add_scaled(&mut self, alpha: f64, other: &Self) {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            crate::linalg::axpy(alpha, src, dst);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    /// Half-width of the uniform embedding initialization.
    #[serde(default = "default_embed_init")]
    pub embed_init: f64,
    /// LSTM weights start uniform in `±gain/√H`.
    #[serde(default = "default_lstm_init_gain")]
    pub lstm_init_gain: f64,
}

fn default_embed_init() -> f64 {
    0.1
}

fn default_lstm_init_gain() -> f64 {
    4.0
}

impl EncoderConfig {
    pub fn new(vocab_size: usize, embed_dim: usize, hidden_dim: usize) -> Self {
        EncoderConfig {
            vocab_size,
            embed_dim,
            hidden_dim,
            embed_init: default_embed_init(),
            lstm_init_gain: default_lstm_init_gain(),
        }
    }

    pub fn output_dim(&self) -> usize {
        2 * self.hidden_dim
    }
}

/// Weights of one LSTM direction. Gate blocks are stacked `i, f, o, g`, each
/// `H` rows tall.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams {
    pub w_input: Matrix,
    pub w_hidden: Matrix,
    pub bias: Vec<f64>,
}

impl LstmParams {
    pub fn new<R: Rng + ?Sized>(
        input_dim: usize,
        hidden_dim: usize,
        gain: f64,
        rng: &mut R,
    ) -> Self {
        let scale = gain / (hidden_dim as f64).sqrt();
        let mut bias = vec![0.0; 4 * hidden_dim];
        bias[hidden_dim..2 * hidden_dim].fill(1.0);
        LstmParams {
            w_input: Matrix::uniform(4 * hidden_dim, input_dim, scale, rng),
            w_hidden: Matrix::uniform(4 * hidden_dim, hidden_dim, scale, rng),
            bias,
        }
    }

    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        LstmParams {
            w_input: Matrix::zeros(4 * hidden_dim, input_dim),
            w_hidden: Matrix::zeros(4 * hidden_dim, hidden_dim),
            bias: vec![0.0; 4 * hidden_dim],
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_hidden.cols()
    }
}

impl Params for LstmParams {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![
            self.w_input.as_slice(),
            self.w_hidden.as_slice(),
            &self.bias,
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.w_input.as_mut_slice(),
            self.w_hidden.as_mut_slice(),
            &mut self.bias,
        ]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    pub embedding: Matrix,
    pub forward: LstmParams,
    pub backward: LstmParams,
}

impl EncoderParams {
    pub fn new<R: Rng + ?Sized>(config: &EncoderConfig, rng: &mut R) -> Self {
        let embedding =
            Matrix::uniform(config.vocab_size, config.embed_dim, config.embed_init, rng);
        let forward = LstmParams::new(
            config.embed_dim,
            config.hidden_dim,
            config.lstm_init_gain,
            rng,
        );
        let backward = LstmParams::new(
            config.embed_dim,
            config.hidden_dim,
            config.lstm_init_gain,
            rng,
        );
        EncoderParams {
            embedding,
            forward,
            backward,
        }
    }

    pub fn zeros(config: &EncoderConfig) -> Self {
        EncoderParams {
            embedding: Matrix::zeros(config.vocab_size, config.embed_dim),
            forward: LstmParams::zeros(config.embed_dim, config.hidden_dim),
            backward: LstmParams::zeros(config.embed_dim, config.hidden_dim),
        }
    }

    pub fn config(&self) -> EncoderConfig {
        EncoderConfig::new(self.vocab_size(), self.embed_dim(), self.hidden_dim())
    }

    pub fn vocab_size(&self) -> usize {
        self.embedding.rows()
    }

    pub fn embed_dim(&self) -> usize {
        self.embedding.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.forward.hidden_dim()
    }

    pub fn output_dim(&self) -> usize {
        2 * self.hidden_dim()
    }
}

impl Params for EncoderParams {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut out = vec![self.embedding.as_slice()];
        out.extend(self.forward.tensors());
        out.extend(self.backward.tensors());
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = vec![self.embedding.as_mut_slice()];
        out.extend(self.forward.tensors_mut());
        out.extend(self.backward.tensors_mut());
        out
    }
}

/// Pooled `2H`-dimensional sentence vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoding(Vec<f64>);

impl Encoding {
    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for Encoding {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Post-activation gates and cell state of one LSTM step.
#[derive(Clone, Debug)]
struct StepCache {
    /// `i, f, o, g` stacked.
    gates: Vec<f64>,
    cell: Vec<f64>,
    tanh_cell: Vec<f64>,
    hidden: Vec<f64>,
}

/// Runs one direction over `tokens` in the given order.
fn run_lstm(
    params: &LstmParams,
    embedding: &Matrix,
    tokens: impl Iterator<Item = u32>,
) -> Vec<StepCache> {
    let h = params.hidden_dim();
    let mut steps: Vec<StepCache> = Vec::new();
    let mut z = vec![0.0; 4 * h];
    for token in tokens {
        z.copy_from_slice(&params.bias);
        params
            .w_input
            .matvec_acc(embedding.row(token as usize), &mut z);
        if let Some(prev) = steps.last() {
            params.w_hidden.matvec_acc(&prev.hidden, &mut z);
        }
        let mut gates = z.clone();
        for v in &mut gates[..3 * h] {
            *v = sigmoid(*v);
        }
        for v in &mut gates[3 * h..] {
            *v = v.tanh();
        }
        let mut cell = vec![0.0; h];
        for j in 0..h {
            let prev_c = steps.last().map_or(0.0, |p| p.cell[j]);
            cell[j] = gates[h + j] * prev_c + gates[j] * gates[3 * h + j];
        }
        let tanh_cell: Vec<f64> = cell.iter().map(|c| c.tanh()).collect();
        let hidden = (0..h).map(|j| gates[2 * h + j] * tanh_cell[j]).collect();
        steps.push(StepCache {
            gates,
            cell,
            tanh_cell,
            hidden,
        });
    }
    steps
}

/// BPTT for one direction. `tokens` and `d_hidden` are in processing order.
fn backprop_lstm(
    params: &LstmParams,
    embedding: &Matrix,
    tokens: &[u32],
    steps: &[StepCache],
    d_hidden: &[Vec<f64>],
    grads: &mut LstmParams,
    d_embedding: &mut Matrix,
) {
    let h = params.hidden_dim();
    let mut dh_next = vec![0.0; h];
    let mut dc_next = vec![0.0; h];
    let mut dz = vec![0.0; 4 * h];
    for s in (0..steps.len()).rev() {
        let step = &steps[s];
        let g = &step.gates;
        for j in 0..h {
            let dh = d_hidden[s][j] + dh_next[j];
            let (i, f, o, cand) = (g[j], g[h + j], g[2 * h + j], g[3 * h + j]);
            let tc = step.tanh_cell[j];
            let dc = dc_next[j] + dh * o * (1.0 - tc * tc);
            let prev_c = if s > 0 { steps[s - 1].cell[j] } else { 0.0 };
            dz[j] = dc * cand * i * (1.0 - i);
            dz[h + j] = dc * prev_c * f * (1.0 - f);
            dz[2 * h + j] = dh * tc * o * (1.0 - o);
            dz[3 * h + j] = dc * i * (1.0 - cand * cand);
            dc_next[j] = dc * f;
        }
        for (b, d) in grads.bias.iter_mut().zip(&dz) {
            *b += d;
        }
        let token = tokens[s] as usize;
        grads.w_input.outer_acc(&dz, embedding.row(token));
        params.w_input.matvec_t_acc(&dz, d_embedding.row_mut(token));
        dh_next.fill(0.0);
        if s > 0 {
            grads.w_hidden.outer_acc(&dz, &steps[s - 1].hidden);
            params.w_hidden.matvec_t_acc(&dz, &mut dh_next);
        }
    }
}

/// Forward intermediates of one [`encode_with_tape`] call.
#[derive(Debug)]
pub struct EncoderTape {
    tokens: Vec<u32>,
    forward: Vec<StepCache>,
    backward: Vec<StepCache>,
    /// Winning position for each of the `2H` pooled coordinates.
    argmax: Vec<usize>,
    consumed: bool,
}

impl EncoderTape {
    pub fn argmax_positions(&self) -> &[usize] {
        &self.argmax
    }

    /// Accumulates `∂L/∂θ` into `grads` given `∂L/∂encoding`. A tape supports
    /// exactly one backward pass.
    pub fn backward(
        &mut self,
        params: &EncoderParams,
        d_encoding: &[f64],
        grads: &mut EncoderParams,
    ) -> Result<()> {
        if self.consumed {
            return Err(Error::DoubleBackward);
        }
        let h = params.hidden_dim();
        if d_encoding.len() != 2 * h {
            return Err(Error::DimMismatch {
                expected: 2 * h,
                got: d_encoding.len(),
            });
        }
        self.consumed = true;
        let n = self.tokens.len();
        let mut dh_fwd = vec![vec![0.0; h]; n];
        let mut dh_bwd = vec![vec![0.0; h]; n];
        for (d, (&pos, &g)) in self.argmax.iter().zip(d_encoding).enumerate() {
            if d < h {
                dh_fwd[pos][d] += g;
            } else {
                // Backward direction step s sits at position n - 1 - s.
                dh_bwd[n - 1 - pos][d - h] += g;
            }
        }
        backprop_lstm(
            &params.forward,
            &params.embedding,
            &self.tokens,
            &self.forward,
            &dh_fwd,
            &mut grads.forward,
            &mut grads.embedding,
        );
        let reversed: Vec<u32> = self.tokens.iter().rev().copied().collect();
        backprop_lstm(
            &params.backward,
            &params.embedding,
            &reversed,
            &self.backward,
            &dh_bwd,
            &mut grads.backward,
            &mut grads.embedding,
        );
        Ok(())
    }
}

pub fn encode_with_tape(seq: &TokenSequence, params: &EncoderParams) -> (Encoding, EncoderTape) {
    let h = params.hidden_dim();
    let n = seq.len();
    assert!(
        seq.iter().all(|&t| (t as usize) < params.vocab_size()),
        "token id outside the embedding table"
    );
    let forward = run_lstm(&params.forward, &params.embedding, seq.iter().copied());
    let backward = run_lstm(
        &params.backward,
        &params.embedding,
        seq.iter().rev().copied(),
    );
    let mut pooled = vec![f64::NEG_INFINITY; 2 * h];
    let mut argmax = vec![0usize; 2 * h];
    for pos in 0..n {
        let fwd = &forward[pos].hidden;
        let bwd = &backward[n - 1 - pos].hidden;
        for (d, &v) in fwd.iter().chain(bwd.iter()).enumerate() {
            if v > pooled[d] {
                pooled[d] = v;
                argmax[d] = pos;
            }
        }
    }
    let tape = EncoderTape {
        tokens: seq.ids().to_vec(),
        forward,
        backward,
        argmax,
        consumed: false,
    };
    (Encoding(pooled), tape)
}

pub fn encode(seq: &TokenSequence, params: &EncoderParams) -> Encoding {
    encode_with_tape(seq, params).0
}

/// Concatenated encoding from several encoders (e.g. the two multitask ones).
pub fn encode_stack(seq: &TokenSequence, encoders: &[&EncoderParams]) -> Vec<f64> {
    encoders
        .iter()
        .flat_map(|e| encode(seq, e).into_vec())
        .collect()
}

/// An encoder plus zero or more classification heads, trained together.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub encoder: EncoderParams,
    pub heads: Vec<HeadParams>,
}

impl Model {
    pub fn new<R: Rng + ?Sized>(
        config: &EncoderConfig,
        head_dim: usize,
        num_heads: usize,
        rng: &mut R,
    ) -> Self {
        let encoder = EncoderParams::new(config, rng);
        let heads = (0..num_heads)
            .map(|_| HeadParams::new(config.output_dim(), head_dim, rng))
            .collect();
        Model { encoder, heads }
    }

    /// Zero-valued model with the same layout, used as a gradient buffer.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.zero();
        z
    }
}

impl Params for Model {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut out = self.encoder.tensors();
        for h in &self.heads {
            out.extend(h.tensors());
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = self.encoder.tensors_mut();
        for h in &mut self.heads {
            out.extend(h.tensors_mut());
        }
        out
    }
}
