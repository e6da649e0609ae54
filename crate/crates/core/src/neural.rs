//! Minimal differentiable core: multilayer perceptrons with exact
//! reverse-mode gradients, stable softmax heads, a decoupled-weight-decay
//! adaptive-moment optimizer, a cosine learning-rate schedule, and EMA
//! target copies.
//!
//! Everything is specialized to the one architecture the pipeline needs:
//! affine layers with ReLU hidden activations and a linear final layer.
//! Gradients are exact (no autodiff graph; the backward pass is written out
//! by hand against the forward tape) and are verified against central finite
//! differences in the test suites.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::hashing::Digest32;
use crate::io::{read_envelope, write_envelope, BinReader, BinWriter, FileFormatError};
use crate::scalar::Real;

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("tau must lie in (0, 1], got {0}")]
    BadTau(f64),
    #[error(transparent)]
    File(#[from] FileFormatError),
}

/// One affine layer, weights stored row-major as `out_dim x in_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearLayer<S> {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<S>,
    pub bias: Vec<S>,
}

/// MLP parameters: a stack of affine layers. Doubles as the container for
/// gradients and optimizer moments, which are parameter-shaped.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams<S> {
    pub layers: Vec<LinearLayer<S>>,
}

impl<S: Real> MlpParams<S> {
    /// He-initialized network with the given layer widths
    /// (input, hidden..., output).
    pub fn init(widths: &[usize], seed: u64) -> Self {
        assert!(widths.len() >= 2, "need at least input and output widths");
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(widths.len() - 1);
        for w in widths.windows(2) {
            let (in_dim, out_dim) = (w[0], w[1]);
            let std = (2.0 / in_dim as f64).sqrt();
            let normal = Normal::new(0.0, std).unwrap();
            let weights =
                (0..in_dim * out_dim).map(|_| S::of(normal.sample(&mut rng))).collect();
            layers.push(LinearLayer {
                in_dim,
                out_dim,
                weights,
                bias: vec![S::zero(); out_dim],
            });
        }
        MlpParams { layers }
    }

    pub fn zeros_like(&self) -> Self {
        MlpParams {
            layers: self
                .layers
                .iter()
                .map(|l| LinearLayer {
                    in_dim: l.in_dim,
                    out_dim: l.out_dim,
                    weights: vec![S::zero(); l.weights.len()],
                    bias: vec![S::zero(); l.bias.len()],
                })
                .collect(),
        }
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w: Vec<usize> = self.layers.iter().map(|l| l.in_dim).collect();
        w.push(self.layers.last().map(|l| l.out_dim).unwrap_or(0));
        w
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map(|l| l.in_dim).unwrap_or(0)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.out_dim).unwrap_or(0)
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn flat(&self) -> impl Iterator<Item = &S> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(l.bias.iter()))
    }

    pub fn flat_mut(&mut self) -> impl Iterator<Item = &mut S> {
        self.layers.iter_mut().flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.in_dim == b.in_dim && a.out_dim == b.out_dim)
    }

    /// L2 norm over all entries; used for gradient-norm logging.
    pub fn l2_norm(&self) -> S {
        self.flat().map(|&x| x * x).sum::<S>().sqrt()
    }

    /// Forward pass without recording a tape.
    pub fn infer(&self, input: &[S]) -> Result<Vec<S>, NeuralError> {
        Ok(self.forward(input)?.0)
    }

    /// Forward pass: affine layers with ReLU hidden activations and a linear
    /// final layer. The returned tape holds the activations needed for an
    /// exact backward pass.
    pub fn forward(&self, input: &[S]) -> Result<(Vec<S>, Tape<S>), NeuralError> {
        if input.len() != self.input_dim() {
            return Err(NeuralError::ShapeMismatch(format!(
                "input width {} vs first layer {}",
                input.len(),
                self.input_dim()
            )));
        }
        let n_layers = self.layers.len();
        let mut activations = Vec::with_capacity(n_layers);
        let mut a = input.to_vec();
        activations.push(a.clone());
        let mut out = Vec::new();
        for (li, layer) in self.layers.iter().enumerate() {
            let mut z = layer.bias.clone();
            for (row, zr) in z.iter_mut().enumerate() {
                let w = &layer.weights[row * layer.in_dim..(row + 1) * layer.in_dim];
                let mut acc = *zr;
                for (wi, ai) in w.iter().zip(&a) {
                    acc = acc + *wi * *ai;
                }
                *zr = acc;
            }
            if li + 1 < n_layers {
                for v in z.iter_mut() {
                    if *v < S::zero() {
                        *v = S::zero();
                    }
                }
                a = z;
                activations.push(a.clone());
            } else {
                out = z;
            }
        }
        Ok((out, Tape { activations, widths: self.widths() }))
    }

    /// Exact reverse-mode gradients of `output · output_gradient` with
    /// respect to every parameter. The tape must come from a matching
    /// forward pass.
    pub fn backward(&self, tape: &Tape<S>, output_gradient: &[S]) -> Result<MlpParams<S>, NeuralError> {
        if tape.widths != self.widths() {
            return Err(NeuralError::ShapeMismatch(format!(
                "tape widths {:?} vs params {:?}",
                tape.widths,
                self.widths()
            )));
        }
        if output_gradient.len() != self.output_dim() {
            return Err(NeuralError::ShapeMismatch(format!(
                "output gradient width {} vs output {}",
                output_gradient.len(),
                self.output_dim()
            )));
        }
        let mut grads = self.zeros_like();
        let mut delta = output_gradient.to_vec();
        for li in (0..self.layers.len()).rev() {
            let layer = &self.layers[li];
            let a_prev = &tape.activations[li];
            let g = &mut grads.layers[li];
            for (row, &d) in delta.iter().enumerate() {
                g.bias[row] = d;
                let gw = &mut g.weights[row * layer.in_dim..(row + 1) * layer.in_dim];
                for (gwi, &ai) in gw.iter_mut().zip(a_prev) {
                    *gwi = d * ai;
                }
            }
            if li > 0 {
                let mut prev = vec![S::zero(); layer.in_dim];
                for (row, &d) in delta.iter().enumerate() {
                    let w = &layer.weights[row * layer.in_dim..(row + 1) * layer.in_dim];
                    for (p, &wi) in prev.iter_mut().zip(w) {
                        *p = *p + wi * d;
                    }
                }
                // ReLU mask from the post-activation values
                for (p, &a) in prev.iter_mut().zip(a_prev) {
                    if a <= S::zero() {
                        *p = S::zero();
                    }
                }
                delta = prev;
            }
        }
        Ok(grads)
    }

    /// Accumulate `other * scale` into self (used for batch-averaged grads).
    pub fn add_scaled(&mut self, other: &Self, scale: S) {
        for (dst, &src) in self.flat_mut().zip(other.flat()) {
            *dst = *dst + src * scale;
        }
    }
}

/// Activation record from a forward pass.
#[derive(Debug, Clone)]
pub struct Tape<S> {
    /// activations[0] is the input; activations[l] for l ≥ 1 are the
    /// post-ReLU hidden activations.
    pub activations: Vec<Vec<S>>,
    widths: Vec<usize>,
}

/// Max-subtracted softmax. Entries sum to 1 within 1e-12 and order is
/// preserved.
pub fn softmax<S: Real>(logits: &[S]) -> Vec<S> {
    let max = logits.iter().copied().fold(S::neg_infinity(), S::max);
    let exps: Vec<S> = logits.iter().map(|&x| (x - max).exp()).collect();
    let sum: S = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Numerically stable log-probabilities.
pub fn log_softmax<S: Real>(logits: &[S]) -> Vec<S> {
    let max = logits.iter().copied().fold(S::neg_infinity(), S::max);
    let log_sum: S = logits.iter().map(|&x| (x - max).exp()).sum::<S>().ln();
    logits.iter().map(|&x| x - max - log_sum).collect()
}

/// Index of the largest logit; ties break to the lowest index.
pub fn argmax<S: Real>(values: &[S]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Adaptive-moment optimizer state with decoupled weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<S> {
    pub first_moment: MlpParams<S>,
    pub second_moment: MlpParams<S>,
    pub step: u64,
    pub base_lr: S,
    pub weight_decay: S,
    pub beta1: S,
    pub beta2: S,
    pub epsilon: S,
}

impl<S: Real> OptimizerState<S> {
    pub fn new(params: &MlpParams<S>, base_lr: S, weight_decay: S) -> Self {
        OptimizerState {
            first_moment: params.zeros_like(),
            second_moment: params.zeros_like(),
            step: 0,
            base_lr,
            weight_decay,
            beta1: S::of(0.9),
            beta2: S::of(0.999),
            epsilon: S::of(1e-8),
        }
    }
}

/// One optimizer step at learning rate `lr`.
///
/// Decay is decoupled and multiplicative: parameters are scaled by
/// (1 − lr·wd) before the moment update is applied.
pub fn optimizer_step<S: Real>(
    params: &mut MlpParams<S>,
    grads: &MlpParams<S>,
    state: &mut OptimizerState<S>,
    lr: S,
) -> Result<(), NeuralError> {
    if !params.same_shape(grads)
        || !params.same_shape(&state.first_moment)
        || !params.same_shape(&state.second_moment)
    {
        return Err(NeuralError::ShapeMismatch("optimizer shapes disagree".into()));
    }
    state.step += 1;
    let t = state.step;
    let one = S::one();
    let bias1 = one - state.beta1.powi(t as i32);
    let bias2 = one - state.beta2.powi(t as i32);
    let decay = one - lr * state.weight_decay;
    for (((p, &g), m), v) in params
        .flat_mut()
        .zip(grads.flat())
        .zip(state.first_moment.flat_mut())
        .zip(state.second_moment.flat_mut())
    {
        *m = state.beta1 * *m + (one - state.beta1) * g;
        *v = state.beta2 * *v + (one - state.beta2) * g * g;
        let m_hat = *m / bias1;
        let v_hat = *v / bias2;
        *p = *p * decay - lr * m_hat / (v_hat.sqrt() + state.epsilon);
    }
    Ok(())
}

/// Cosine annealing: base_lr · 0.5 · (1 + cos(π·step/total_steps)).
pub fn cosine_lr<S: Real>(step: u64, total_steps: u64, base_lr: S) -> S {
    if total_steps == 0 {
        return base_lr;
    }
    let frac = S::of(step as f64) / S::of(total_steps as f64);
    base_lr * S::of(0.5) * (S::one() + (S::PI() * frac).cos())
}

/// EMA shadow copy of a parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetParams<S> {
    pub params: MlpParams<S>,
    pub tau: S,
}

impl<S: Real> TargetParams<S> {
    pub fn new(online: &MlpParams<S>, tau: S) -> Result<Self, NeuralError> {
        if tau <= S::zero() || tau > S::one() {
            return Err(NeuralError::BadTau(tau.to_f64().unwrap_or(f64::NAN)));
        }
        Ok(TargetParams { params: online.clone(), tau })
    }
}

/// target ← (1−τ)·target + τ·online, elementwise.
pub fn ema_update<S: Real>(
    target: &mut TargetParams<S>,
    online: &MlpParams<S>,
) -> Result<(), NeuralError> {
    if !target.params.same_shape(online) {
        return Err(NeuralError::ShapeMismatch("EMA target shape differs from online".into()));
    }
    let tau = target.tau;
    let keep = S::one() - tau;
    for (t, &o) in target.params.flat_mut().zip(online.flat()) {
        *t = keep * *t + tau * o;
    }
    Ok(())
}

/// Actor and critic parameters with their EMA targets and optimizer states,
/// tied to the vocabulary they were trained against.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkCheckpoint<S> {
    pub actor: MlpParams<S>,
    pub critic: MlpParams<S>,
    pub actor_target: TargetParams<S>,
    pub critic_target: TargetParams<S>,
    pub actor_opt: OptimizerState<S>,
    pub critic_opt: OptimizerState<S>,
    pub train_step: u64,
    pub vocab_hash: Digest32,
}

const CHECKPOINT_MAGIC: [u8; 4] = *b"ODCK";
const CHECKPOINT_VERSION: u32 = 1;

fn write_mlp<S: Real>(w: &mut BinWriter, mlp: &MlpParams<S>) {
    w.u32(mlp.layers.len() as u32);
    for l in &mlp.layers {
        w.u32(l.in_dim as u32);
        w.u32(l.out_dim as u32);
        for &x in &l.weights {
            w.f64(x.to_f64().unwrap());
        }
        for &x in &l.bias {
            w.f64(x.to_f64().unwrap());
        }
    }
}

fn read_mlp<S: Real>(r: &mut BinReader) -> Result<MlpParams<S>, FileFormatError> {
    let n = r.u32()? as usize;
    let mut layers = Vec::with_capacity(n);
    for _ in 0..n {
        let in_dim = r.u32()? as usize;
        let out_dim = r.u32()? as usize;
        let weights = r.f64_vec(in_dim * out_dim)?.into_iter().map(S::of).collect();
        let bias = r.f64_vec(out_dim)?.into_iter().map(S::of).collect();
        layers.push(LinearLayer { in_dim, out_dim, weights, bias });
    }
    Ok(MlpParams { layers })
}

fn write_opt<S: Real>(w: &mut BinWriter, opt: &OptimizerState<S>) {
    w.u64(opt.step);
    w.f64(opt.base_lr.to_f64().unwrap());
    w.f64(opt.weight_decay.to_f64().unwrap());
    w.f64(opt.beta1.to_f64().unwrap());
    w.f64(opt.beta2.to_f64().unwrap());
    w.f64(opt.epsilon.to_f64().unwrap());
    write_mlp(w, &opt.first_moment);
    write_mlp(w, &opt.second_moment);
}

fn read_opt<S: Real>(r: &mut BinReader) -> Result<OptimizerState<S>, FileFormatError> {
    let step = r.u64()?;
    let base_lr = S::of(r.f64()?);
    let weight_decay = S::of(r.f64()?);
    let beta1 = S::of(r.f64()?);
    let beta2 = S::of(r.f64()?);
    let epsilon = S::of(r.f64()?);
    let first_moment = read_mlp(r)?;
    let second_moment = read_mlp(r)?;
    Ok(OptimizerState {
        first_moment,
        second_moment,
        step,
        base_lr,
        weight_decay,
        beta1,
        beta2,
        epsilon,
    })
}

impl<S: Real> NetworkCheckpoint<S> {
    pub fn to_bytes(&self) -> Result<Vec<u8>, NeuralError> {
        Ok(write_envelope(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, |w| {
            w.bytes(&self.vocab_hash);
            w.u64(self.train_step);
            write_mlp(w, &self.actor);
            write_mlp(w, &self.critic);
            w.f64(self.actor_target.tau.to_f64().unwrap());
            write_mlp(w, &self.actor_target.params);
            w.f64(self.critic_target.tau.to_f64().unwrap());
            write_mlp(w, &self.critic_target.params);
            write_opt(w, &self.actor_opt);
            write_opt(w, &self.critic_opt);
            Ok(())
        })?)
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self, NeuralError> {
        let mut r = read_envelope(data, CHECKPOINT_MAGIC, CHECKPOINT_VERSION)?;
        let vocab_hash = r.digest()?;
        let train_step = r.u64()?;
        let actor = read_mlp(&mut r)?;
        let critic = read_mlp(&mut r)?;
        let actor_tau = S::of(r.f64()?);
        let actor_target = TargetParams { params: read_mlp(&mut r)?, tau: actor_tau };
        let critic_tau = S::of(r.f64()?);
        let critic_target = TargetParams { params: read_mlp(&mut r)?, tau: critic_tau };
        let actor_opt = read_opt(&mut r)?;
        let critic_opt = read_opt(&mut r)?;
        Ok(NetworkCheckpoint {
            actor,
            critic,
            actor_target,
            critic_target,
            actor_opt,
            critic_opt,
            train_step,
            vocab_hash,
        })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), NeuralError> {
        Ok(crate::io::write_file(path, &self.to_bytes()?)?)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, NeuralError> {
        Self::from_bytes(&crate::io::read_file(path)?)
    }
}
