//! Small fully connected networks with hand-derived gradients, the softmax
//! policy with temperature and epsilon-greedy sampling, the scalar baseline,
//! Adam and the exponential learning-rate schedule.
//!
//! Parameters of an [`Mlp`] live in one flat vector, layer by layer, each
//! layer stored as a row-major `out x in` weight block followed by its bias.
//! Gradients use the same layout, so the optimizer works on plain slices.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hidden width of the policy network for `K` labels.
pub fn policy_hidden(num_labels: usize) -> usize {
    32 + 2 * num_labels
}

/// Hidden width of the baseline network.
pub const BASELINE_HIDDEN: usize = 32;

/// A multilayer perceptron with rectified hidden layers and a linear output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

/// Activations recorded by [`Mlp::forward`], needed for the backward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    // acts[0] is the input; acts[l + 1] is the output of layer l.
    acts: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn input(&self) -> &[f64] {
        &self.acts[0]
    }

    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("at least input and output")
    }
}

fn num_params(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
}

impl Mlp {
    /// Fan-balanced uniform initialization: weights in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn init(sizes: &[usize], rng: &mut impl Rng) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::domain(format!("invalid layer sizes {sizes:?}")));
        }
        let mut params = Vec::with_capacity(num_params(sizes));
        for w in sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            params.extend((0..fan_in * fan_out).map(|_| rng.random_range(-bound..=bound)));
            params.extend(std::iter::repeat_n(0.0, fan_out));
        }
        Ok(Self {
            sizes: sizes.to_vec(),
            params,
        })
    }

    pub fn seeded(sizes: &[usize], seed: u64) -> Result<Self> {
        Self::init(sizes, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn from_parts(sizes: Vec<usize>, params: Vec<f64>) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) || params.len() != num_params(&sizes) {
            return Err(Error::domain(format!(
                "{} parameters do not fit layer sizes {sizes:?}",
                params.len()
            )));
        }
        Ok(Self { sizes, params })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("validated")
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn zero_grad(&self) -> Vec<f64> {
        vec![0.0; self.params.len()]
    }

    pub fn forward(&self, input: &[f64]) -> Result<ForwardCache> {
        if input.len() != self.input_dim() {
            return Err(Error::domain(format!(
                "input length {} != network input {}",
                input.len(),
                self.input_dim()
            )));
        }
        if input.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("non-finite network input"));
        }
        let layers = self.sizes.len() - 1;
        let mut acts = Vec::with_capacity(layers + 1);
        acts.push(input.to_vec());
        let mut offset = 0;
        for l in 0..layers {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let weights = &self.params[offset..offset + n_in * n_out];
            let bias = &self.params[offset + n_in * n_out..offset + n_in * n_out + n_out];
            offset += n_in * n_out + n_out;
            let x = &acts[l];
            let last = l + 1 == layers;
            let out: Vec<f64> = (0..n_out)
                .map(|o| {
                    let row = &weights[o * n_in..(o + 1) * n_in];
                    let z = bias[o] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
                    if last {
                        z
                    } else {
                        z.max(0.0)
                    }
                })
                .collect();
            acts.push(out);
        }
        Ok(ForwardCache { acts })
    }

    /// Accumulates into `grad` the gradient of a scalar whose derivative with
    /// respect to the network output is `grad_out`.
    pub fn backward(&self, cache: &ForwardCache, grad_out: &[f64], grad: &mut [f64]) -> Result<()> {
        if cache.acts.len() != self.sizes.len()
            || cache
                .acts
                .iter()
                .zip(&self.sizes)
                .any(|(a, &n)| a.len() != n)
        {
            return Err(Error::domain("forward cache does not match this network"));
        }
        if grad_out.len() != self.output_dim() || grad.len() != self.params.len() {
            return Err(Error::domain("gradient buffer shape mismatch"));
        }

        let layers = self.sizes.len() - 1;
        let mut offsets = Vec::with_capacity(layers);
        let mut offset = 0;
        for l in 0..layers {
            offsets.push(offset);
            offset += self.sizes[l] * self.sizes[l + 1] + self.sizes[l + 1];
        }

        let mut delta = grad_out.to_vec();
        for l in (0..layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let off = offsets[l];
            let x = &cache.acts[l];
            {
                let (gw, gb) = grad[off..off + n_in * n_out + n_out].split_at_mut(n_in * n_out);
                for o in 0..n_out {
                    let d = delta[o];
                    if d == 0.0 {
                        continue;
                    }
                    gb[o] += d;
                    for (g, v) in gw[o * n_in..(o + 1) * n_in].iter_mut().zip(x) {
                        *g += d * v;
                    }
                }
            }
            if l == 0 {
                break;
            }
            let weights = &self.params[off..off + n_in * n_out];
            let mut prev = vec![0.0; n_in];
            for o in 0..n_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                for (p, w) in prev.iter_mut().zip(&weights[o * n_in..(o + 1) * n_in]) {
                    *p += d * w;
                }
            }
            // x holds relu outputs of the previous layer; zero means inactive.
            for (p, &a) in prev.iter_mut().zip(x) {
                if a <= 0.0 {
                    *p = 0.0;
                }
            }
            delta = prev;
        }
        Ok(())
    }
}

/// Numerically stable softmax of `logits / temperature`.
pub fn softmax(logits: &[f64], temperature: f64) -> Vec<f64> {
    let scaled: Vec<f64> = logits.iter().map(|q| q / temperature).collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scaled.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Lowest index among the maxima.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Epsilon-greedy draw: with probability `epsilon` a uniform label, otherwise
/// a categorical draw from `probs`.
pub fn sample_action(probs: &[f64], epsilon: f64, rng: &mut impl Rng) -> usize {
    if rng.random::<f64>() < epsilon {
        return rng.random_range(0..probs.len());
    }
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Rounding left `acc` just below 1; fall back to the last label with mass.
    probs
        .iter()
        .rposition(|&p| p > 0.0)
        .unwrap_or(probs.len() - 1)
}

/// Output of a policy forward pass.
#[derive(Clone, Debug)]
pub struct PolicyOutput {
    pub cache: ForwardCache,
    pub probs: Vec<f64>,
    pub log_probs: Vec<f64>,
}

/// How a fresh policy network is initialized.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyInit {
    /// See [`Policy::maintaining`].
    #[default]
    Maintain,
    /// Fan-balanced uniform weights only.
    Random,
}

/// Likelihood used to score a sampled action in the policy gradient.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Score {
    /// `log mu(a | s)` with `mu = (1 - epsilon) pi + epsilon / K`, the
    /// probability the epsilon-greedy sampler actually drew `a` with.
    #[default]
    Behavior,
    /// `log pi(a | s)` of the softmax alone, whatever drew the action.
    Softmax,
}

impl PolicyOutput {
    /// Log-likelihood of `action` under `score`, and `d log p / d log pi`.
    pub fn scored_log_prob(&self, action: usize, score: Score, epsilon: f64) -> (f64, f64) {
        let log_pi = self.log_probs[action];
        if score == Score::Softmax || epsilon == 0.0 {
            return (log_pi, 1.0);
        }
        if epsilon >= 1.0 {
            return (-(self.probs.len() as f64).ln(), 0.0);
        }
        let greedy = (1.0 - epsilon).ln() + log_pi;
        let uniform = (epsilon / self.probs.len() as f64).ln();
        let hi = greedy.max(uniform);
        let log_mu = hi + ((greedy - hi).exp() + (uniform - hi).exp()).ln();
        (log_mu, (greedy - log_mu).exp())
    }
}

/// Softmax policy over `K` labels: an MLP produces logits `q`, and
/// `pi(i | s) = exp(q_i / eta) / sum_j exp(q_j / eta)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub net: Mlp,
    pub temperature: f64,
}

impl Policy {
    /// Two hidden layers of width `32 + 2K` between the `2K + M` state and `K` logits.
    pub fn new(
        num_labels: usize,
        feature_dim: usize,
        temperature: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let input = 2 * num_labels + feature_dim;
        let hidden = policy_hidden(num_labels);
        Self::from_net(
            Mlp::init(&[input, hidden, hidden, num_labels], rng)?,
            temperature,
        )
    }

    /// Logit margin, in units of the temperature, that [`Policy::maintaining`]
    /// gives the predicted label.
    pub const MAINTAIN_MARGIN: f64 = 5.0;

    /// Random initialization plus an identity path from the predicted label
    /// one-hot through the first `K` units of each hidden layer to the logits,
    /// so the fresh policy mostly repeats the predictor. Output weights are
    /// scaled by the temperature, which makes the initial `pi` independent of it.
    pub fn maintaining(
        num_labels: usize,
        feature_dim: usize,
        temperature: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mut policy = Self::new(num_labels, feature_dim, temperature, rng)?;
        let k = num_labels;
        let sizes = policy.net.sizes().to_vec();
        let params = policy.net.params_mut();
        let mut off = 0;
        for l in 0..sizes.len() - 1 {
            let (n_in, n_out) = (sizes[l], sizes[l + 1]);
            let weights = &mut params[off..off + n_in * n_out];
            if l + 2 == sizes.len() {
                weights.iter_mut().for_each(|w| *w *= temperature);
                for i in 0..k {
                    weights[i * n_in + i] = Self::MAINTAIN_MARGIN * temperature;
                }
            } else {
                // Dedicated units listen only to their source, and only they do.
                for i in 0..k {
                    weights[i * n_in..(i + 1) * n_in].fill(0.0);
                    weights[i * n_in + i] = 1.0;
                }
                if l > 0 {
                    for o in k..n_out {
                        weights[o * n_in..o * n_in + k].fill(0.0);
                    }
                }
            }
            off += n_in * n_out + n_out;
        }
        Ok(policy)
    }

    pub fn from_net(net: Mlp, temperature: f64) -> Result<Self> {
        if !(temperature.is_finite() && temperature > 0.0) {
            return Err(Error::domain(format!(
                "temperature must be positive, got {temperature}"
            )));
        }
        Ok(Self { net, temperature })
    }

    pub fn num_labels(&self) -> usize {
        self.net.output_dim()
    }

    pub fn forward(&self, state: &[f64]) -> Result<PolicyOutput> {
        let cache = self.net.forward(state)?;
        let scaled: Vec<f64> = cache
            .output()
            .iter()
            .map(|q| q / self.temperature)
            .collect();
        let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + scaled.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
        let log_probs: Vec<f64> = scaled.iter().map(|z| z - lse).collect();
        let probs = softmax(cache.output(), self.temperature);
        Ok(PolicyOutput {
            cache,
            probs,
            log_probs,
        })
    }

    /// Greedy action, lowest index on ties.
    pub fn act_greedy(&self, state: &[f64]) -> Result<usize> {
        // argmax of pi equals argmax of the logits for any positive temperature.
        Ok(argmax(self.net.forward(state)?.output()))
    }

    /// Accumulates the gradient of `coef * log p(action | s)` into `grad`, with
    /// `p` chosen by `score`; returns `log p`.
    pub fn backward_scored(
        &self,
        out: &PolicyOutput,
        action: usize,
        coef: f64,
        score: Score,
        epsilon: f64,
        grad: &mut [f64],
    ) -> Result<f64> {
        if action >= out.probs.len() {
            return Err(Error::domain(format!("action {action} out of range")));
        }
        let (log_p, weight) = out.scored_log_prob(action, score, epsilon);
        self.backward_log_prob(out, action, coef * weight, grad)?;
        Ok(log_p)
    }

    /// Accumulates the gradient of `coef * log pi(action | s)` into `grad`.
    pub fn backward_log_prob(
        &self,
        out: &PolicyOutput,
        action: usize,
        coef: f64,
        grad: &mut [f64],
    ) -> Result<()> {
        let k = self.num_labels();
        if action >= k || out.probs.len() != k {
            return Err(Error::domain(format!(
                "action {action} or output shape invalid for K={k}"
            )));
        }
        if coef == 0.0 {
            return Ok(());
        }
        let grad_logits: Vec<f64> = (0..k)
            .map(|i| coef * (f64::from(u8::from(i == action)) - out.probs[i]) / self.temperature)
            .collect();
        self.net.backward(&out.cache, &grad_logits, grad)
    }
}

/// Scalar state-value regressor `b(s)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub net: Mlp,
}

impl Baseline {
    /// Two hidden layers of width 32 between the `2K + M` state and one output.
    pub fn new(num_labels: usize, feature_dim: usize, rng: &mut impl Rng) -> Result<Self> {
        let input = 2 * num_labels + feature_dim;
        Ok(Self {
            net: Mlp::init(&[input, BASELINE_HIDDEN, BASELINE_HIDDEN, 1], rng)?,
        })
    }

    pub fn forward(&self, state: &[f64]) -> Result<(f64, ForwardCache)> {
        let cache = self.net.forward(state)?;
        Ok((cache.output()[0], cache))
    }

    /// Accumulates the gradient of `(b(s) - target)^2` into `grad`; returns the squared error.
    pub fn backward_squared_error(
        &self,
        cache: &ForwardCache,
        target: f64,
        grad: &mut [f64],
    ) -> Result<f64> {
        let diff = cache.output()[0] - target;
        self.net.backward(cache, &[2.0 * diff], grad)?;
        Ok(diff * diff)
    }
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.99;
pub const ADAM_EPSILON: f64 = 1e-8;

/// Adam moment estimates for one parameter vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(num_params: usize) -> Self {
        Self {
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            epsilon: ADAM_EPSILON,
            step: 0,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
        }
    }

    pub fn num_params(&self) -> usize {
        self.m.len()
    }

    /// One bias-corrected Adam update of `params` along `grads`.
    ///
    /// Non-finite gradients are rejected before anything is modified.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::domain(format!(
                "adam state has {} entries, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::Numerical {
                seq_id: String::new(),
                message: format!("non-finite gradient at parameter {i}"),
            });
        }
        self.step += 1;
        let t = self.step as i32;
        let correct1 = 1.0 - self.beta1.powi(t);
        let correct2 = 1.0 - self.beta2.powi(t);
        for ((p, &g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / correct1;
            let v_hat = *v / correct2;
            *p -= lr * m_hat / (v_hat.sqrt() + self.epsilon);
        }
        Ok(())
    }
}

/// Exponential learning-rate decay, applied once per epoch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub initial: f64,
    pub decay: f64,
}

impl LrSchedule {
    pub const DEFAULT_DECAY: f64 = 0.99;

    pub fn new(initial: f64) -> Self {
        Self {
            initial,
            decay: Self::DEFAULT_DECAY,
        }
    }

    /// Rate for 0-based `epoch`.
    pub fn rate(&self, epoch: usize) -> f64 {
        self.initial * self.decay.powi(epoch as i32)
    }
}
