//! Training of the encoder parameters θ.
//!
//! Two regimes are implemented:
//!
//! * **Variational**: alternate an E-step (mean-field sweeps with θ fixed)
//!   with a gradient step on the cross-entropy
//!   `−Σ_dn (p̂_dn + γ r̂_dn)ᵀ g(x_dn, θ)`, where the soft labels are held
//!   fixed. Labeled groups have their label beliefs clamped.
//! * **Discriminative**: run a fixed number of mean-field iterations
//!   ([`unrolled_forward`]), score the resulting label beliefs with
//!   `−ln p̂_d[c]`, and differentiate through every iteration
//!   ([`Tape::backward`]).

use serde::Serialize;

use crate::encoders::{EncoderGradient, EncoderParams};
use crate::error::{Error, Result};
use crate::math::{self, digamma_unchecked, trigamma_unchecked, SeededRng, Simplex};
use crate::mean_field::{
    self, init_state, item_log_likelihoods, item_logits, Group, HyperParams, MeanFieldState, UpdateOrder,
};
use crate::regularizer::{update_running_estimate, RegularizerState};
use crate::scalar::Scalar;

/// Floor applied to p̂_d[c] before taking the log in the discriminative loss.
pub const LOSS_FLOOR: f64 = 1e-30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Variational,
    Discriminative,
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "variational" => Ok(Mode::Variational),
            "discriminative" => Ok(Mode::Discriminative),
            other => Err(format!("unknown training mode '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    Sgd,
    Momentum { beta: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Learning rate as a function of the optimizer step `t` (starting at 0).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LrSchedule {
    Constant,
    /// `lr / (1 + decay · t)`
    InverseTime {
        decay: f64,
    },
}

impl LrSchedule {
    pub fn rate(&self, base: f64, step: u64) -> f64 {
        match self {
            LrSchedule::Constant => base,
            LrSchedule::InverseTime { decay } => base / (1.0 + decay * step as f64),
        }
    }
}

/// First-order optimizer over a flat parameter buffer.
#[derive(Debug, Clone)]
pub struct Optimizer<T> {
    kind: OptimizerKind,
    learning_rate: f64,
    schedule: LrSchedule,
    step: u64,
    first: Vec<T>,
    second: Vec<T>,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(kind: OptimizerKind, learning_rate: f64, schedule: LrSchedule, num_params: usize) -> Self {
        Optimizer {
            kind,
            learning_rate,
            schedule,
            step: 0,
            first: vec![T::zero(); num_params],
            second: vec![T::zero(); num_params],
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one descent step. Returns the learning rate used.
    pub fn apply(&mut self, params: &mut [T], grad: &[T]) -> f64 {
        assert_eq!(params.len(), grad.len(), "gradient shape mismatch");
        let lr_f = self.schedule.rate(self.learning_rate, self.step);
        let lr = T::lit(lr_f);
        self.step += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= lr * *g;
                }
            }
            OptimizerKind::Momentum { beta } => {
                let beta = T::lit(beta);
                for ((p, g), m) in params.iter_mut().zip(grad).zip(self.first.iter_mut()) {
                    *m = beta * *m + *g;
                    *p -= lr * *m;
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let t = self.step as i32;
                let c1 = T::lit(1.0 - beta1.powi(t));
                let c2 = T::lit(1.0 - beta2.powi(t));
                let (b1, b2, eps) = (T::lit(beta1), T::lit(beta2), T::lit(eps));
                for (i, (p, g)) in params.iter_mut().zip(grad).enumerate() {
                    let m = &mut self.first[i];
                    let v = &mut self.second[i];
                    *m = b1 * *m + (T::one() - b1) * *g;
                    *v = b2 * *v + (T::one() - b2) * *g * *g;
                    let m_hat = *m / c1;
                    let v_hat = *v / c2;
                    *p -= lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
        }
        lr_f
    }
}

/// Training loop settings.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub mode: Mode,
    pub epochs: usize,
    /// Groups per optimizer step.
    pub batch_size: usize,
    pub learning_rate: f64,
    pub schedule: LrSchedule,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    /// Clamp label beliefs of labeled groups during variational training.
    pub clamp_labels: bool,
    /// Mean-field sweeps per group and batch in the variational E-step.
    pub e_step_sweeps: usize,
    /// Continue each group's E-step from its beliefs of the previous epoch
    /// instead of restarting from the prior. Warm-started beliefs lock in
    /// early topic assignments and often leave topics merged.
    pub warm_start: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: Mode::Variational,
            epochs: 20,
            batch_size: 32,
            learning_rate: 1e-3,
            schedule: LrSchedule::Constant,
            optimizer: OptimizerKind::adam(),
            seed: 0,
            clamp_labels: true,
            e_step_sweeps: 5,
            warm_start: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::contract("batch size must be positive"));
        }
        if self.e_step_sweeps == 0 {
            return Err(Error::contract("at least one E-step sweep is required"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::contract("learning rate must be finite and >= 0"));
        }
        if let LrSchedule::InverseTime { decay } = self.schedule {
            if !(decay.is_finite() && decay >= 0.0) {
                return Err(Error::contract("learning-rate decay must be finite and >= 0"));
            }
        }
        match self.optimizer {
            OptimizerKind::Sgd => {}
            OptimizerKind::Momentum { beta } => {
                if !(0.0..1.0).contains(&beta) {
                    return Err(Error::contract("momentum must lie in [0, 1)"));
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || eps <= 0.0 {
                    return Err(Error::contract("invalid adam coefficients"));
                }
            }
        }
        Ok(())
    }
}

/// Per-epoch training summary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mode: Mode,
    /// Mean loss per item (variational) or per labeled group (discriminative).
    pub loss: f64,
    /// Sum of group ELBOs after the E-step (variational mode only).
    pub elbo: Option<f64>,
    pub heldout_accuracy: Option<f64>,
    /// Items per most-probable topic.
    pub topic_usage: Vec<u64>,
    /// Discriminative losses whose true-label belief hit the floor.
    pub clipped: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
}

/// Soft-label cross-entropy `−Σ_dn (p̂_dn + γ r̂_dn)ᵀ g(x_dn, θ)`.
///
/// `r_hat` is indexed `[group][item][topic]`.
pub fn variational_loss<T: Scalar>(
    groups: &[Group<T>],
    states: &[MeanFieldState<T>],
    theta: &EncoderParams<T>,
    r_hat: &[Vec<Vec<T>>],
    gamma: T,
) -> Result<T> {
    check_loss_shapes(groups, states, r_hat, theta.num_topics())?;
    let mut loss = T::zero();
    for ((group, state), r) in groups.iter().zip(states).zip(r_hat) {
        let g = item_log_likelihoods(group, theta)?;
        for ((gn, p), rn) in g.iter().zip(state.p_hat_items()).zip(r) {
            for k in 0..gn.len() {
                let w = p[k] + gamma * rn[k];
                if w != T::zero() {
                    loss -= w * gn[k];
                }
            }
        }
    }
    Ok(loss)
}

/// [`variational_loss`] and its gradient with respect to θ.
pub fn variational_loss_and_grad<T: Scalar>(
    groups: &[Group<T>],
    states: &[MeanFieldState<T>],
    theta: &EncoderParams<T>,
    r_hat: &[Vec<Vec<T>>],
    gamma: T,
) -> Result<(T, EncoderGradient<T>)> {
    check_loss_shapes(groups, states, r_hat, theta.num_topics())?;
    let mut grad = EncoderGradient::zeros_like(theta);
    let mut loss = T::zero();
    for ((group, state), r) in groups.iter().zip(states).zip(r_hat) {
        for ((item, p), rn) in group.items.iter().zip(state.p_hat_items()).zip(r) {
            let weights: Vec<T> = p
                .as_slice()
                .iter()
                .zip(rn)
                .map(|(a, b)| *a + gamma * *b)
                .collect();
            let f = theta.forward_logits(item)?;
            loss += soft_label_cross_entropy(&f, &weights, &mut |g| {
                theta.accumulate_backward(item, g, &mut grad)
            })?;
        }
    }
    Ok((loss, grad))
}

/// `−wᵀ log_softmax(f)`; passes `∂/∂f = (Σw) softmax(f) − w` to `backward`.
fn soft_label_cross_entropy<T: Scalar>(
    f: &[T],
    weights: &[T],
    backward: &mut dyn FnMut(&[T]) -> Result<()>,
) -> Result<T> {
    let mut log_p = f.to_vec();
    math::log_softmax_in_place(&mut log_p);
    let total: T = weights.iter().copied().sum();
    let mut loss = T::zero();
    let mut grad = Vec::with_capacity(f.len());
    for (lp, w) in log_p.iter().zip(weights) {
        loss -= *w * *lp;
        grad.push(total * lp.exp() - *w);
    }
    backward(&grad)?;
    Ok(loss)
}

fn check_loss_shapes<T: Scalar>(
    groups: &[Group<T>],
    states: &[MeanFieldState<T>],
    r_hat: &[Vec<Vec<T>>],
    k: usize,
) -> Result<()> {
    if groups.len() != states.len() || groups.len() != r_hat.len() {
        return Err(Error::contract("groups, states and r_hat must align"));
    }
    for ((g, s), r) in groups.iter().zip(states).zip(r_hat) {
        if s.p_hat_items().len() != g.items.len() || r.len() != g.items.len() {
            return Err(Error::contract(format!("shape mismatch in group '{}'", g.id)));
        }
        if s.num_topics() != k || r.iter().any(|row| row.len() != k) {
            return Err(Error::contract("topic count mismatch"));
        }
    }
    Ok(())
}

/// Intermediate values of an unrolled mean-field pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Tape<T> {
    logits: Vec<Vec<T>>,
    lambda: T,
    clamp: Option<usize>,
    /// α̂ before each iteration and after the last one (`n_iter + 1` entries).
    alphas: Vec<Vec<T>>,
    /// p̂_d before each iteration and after the last one.
    label_beliefs: Vec<Vec<T>>,
    /// p̂_dn computed in each iteration.
    item_beliefs: Vec<Vec<Vec<T>>>,
}

impl<T: Scalar> Tape<T> {
    pub fn n_iter(&self) -> usize {
        self.item_beliefs.len()
    }

    /// Label beliefs after iteration `i` (0 = initial).
    pub fn label_beliefs(&self, i: usize) -> &[T] {
        &self.label_beliefs[i]
    }

    /// α̂ after iteration `i` (0 = prior).
    pub fn alpha_hat(&self, i: usize) -> &[T] {
        &self.alphas[i]
    }

    /// Item beliefs computed in iteration `i` (1-based).
    pub fn item_beliefs(&self, i: usize) -> &[Vec<T>] {
        &self.item_beliefs[i - 1]
    }

    pub fn final_label_beliefs(&self) -> Simplex<T> {
        Simplex::from_normalized(self.label_beliefs[self.n_iter()].clone())
    }

    pub fn final_item_beliefs(&self) -> Vec<Simplex<T>> {
        self.item_beliefs[self.n_iter() - 1]
            .iter()
            .map(|p| Simplex::from_normalized(p.clone()))
            .collect()
    }

    /// Reverse-mode pass: given ∂L/∂p̂_d of the final label beliefs, returns
    /// ∂L/∂f for every item, summed over all iterations that used it.
    pub fn backward(&self, grad_label: &[T]) -> Vec<Vec<T>> {
        let k = grad_label.len();
        let n_iter = self.n_iter();
        let mut grad_logits = vec![vec![T::zero(); k]; self.logits.len()];
        let mut g_pd = grad_label.to_vec();
        // adjoint of α̂_i coming from the digamma bias of iteration i + 1
        let mut g_alpha = vec![T::zero(); k];
        for i in (1..=n_iter).rev() {
            let alpha_i = &self.alphas[i];
            if self.clamp.is_none() {
                // p̂_d,i = softmax(λ ψ(α̂_i))
                let pd = &self.label_beliefs[i];
                let dot: T = g_pd.iter().zip(pd).map(|(a, b)| *a * *b).sum();
                for j in 0..k {
                    let g_z = pd[j] * (g_pd[j] - dot);
                    g_alpha[j] += self.lambda * trigamma_unchecked(alpha_i[j]) * g_z;
                }
            }
            // α̂_i = α + Σ_n p̂_dn,i + λ p̂_d,i−1
            g_pd = if self.clamp.is_none() {
                g_alpha.iter().map(|g| self.lambda * *g).collect()
            } else {
                vec![T::zero(); k]
            };
            // p̂_dn,i = softmax(f_n + ψ(α̂_i−1))
            let mut g_bias = vec![T::zero(); k];
            for (p, gf) in self.item_beliefs[i - 1].iter().zip(grad_logits.iter_mut()) {
                let dot: T = g_alpha.iter().zip(p).map(|(a, b)| *a * *b).sum();
                for j in 0..k {
                    let g_s = p[j] * (g_alpha[j] - dot);
                    gf[j] += g_s;
                    g_bias[j] += g_s;
                }
            }
            let alpha_prev = &self.alphas[i - 1];
            g_alpha = (0..k)
                .map(|j| trigamma_unchecked(alpha_prev[j]) * g_bias[j])
                .collect();
        }
        grad_logits
    }
}

/// Unrolled mean-field inference from precomputed logits, optionally with
/// the label beliefs clamped to a one-hot.
pub fn unrolled_forward_logits<T: Scalar>(
    logits: Vec<Vec<T>>,
    hyper: &HyperParams<T>,
    clamp: Option<usize>,
) -> Result<Tape<T>> {
    let k = hyper.num_topics();
    if hyper.n_iter == 0 {
        return Err(Error::contract("n_iter must be positive"));
    }
    if logits.iter().any(|f| f.len() != k) {
        return Err(Error::contract("logit vectors must have K entries"));
    }
    let initial_label = match clamp {
        Some(c) if c >= k => return Err(Error::contract(format!("label {c} out of range"))),
        Some(c) => Simplex::<T>::one_hot(k, c).into_vec(),
        None => Simplex::<T>::uniform(k).into_vec(),
    };
    let prior = hyper.alpha.as_slice();
    let mut tape = Tape {
        lambda: hyper.lambda,
        clamp,
        alphas: vec![prior.to_vec()],
        label_beliefs: vec![initial_label],
        item_beliefs: Vec::with_capacity(hyper.n_iter),
        logits,
    };
    for _ in 0..hyper.n_iter {
        let alpha = tape.alphas.last().expect("prior present");
        let bias: Vec<T> = alpha.iter().map(|a| digamma_unchecked(*a)).collect();
        let mut items = Vec::with_capacity(tape.logits.len());
        for f in &tape.logits {
            let z: Vec<T> = f.iter().zip(&bias).map(|(a, b)| *a + *b).collect();
            items.push(math::softmax(&z)?.into_vec());
        }
        let pd_prev = tape.label_beliefs.last().expect("initial beliefs present");
        let mut next_alpha = prior.to_vec();
        for p in &items {
            for (a, v) in next_alpha.iter_mut().zip(p) {
                *a += *v;
            }
        }
        for (a, v) in next_alpha.iter_mut().zip(pd_prev) {
            *a += hyper.lambda * *v;
        }
        let pd = if clamp.is_some() {
            pd_prev.clone()
        } else {
            let mut z: Vec<T> = next_alpha
                .iter()
                .map(|a| hyper.lambda * digamma_unchecked(*a))
                .collect();
            math::softmax_in_place(&mut z);
            z
        };
        tape.item_beliefs.push(items);
        tape.alphas.push(next_alpha);
        tape.label_beliefs.push(pd);
    }
    Ok(tape)
}

/// Runs `n_iter` mean-field iterations from uniform label beliefs and α̂ = α,
/// evaluating each item's logits once. Returns the final label beliefs and
/// the tape for differentiation.
pub fn unrolled_forward<T: Scalar>(
    group: &Group<T>,
    theta: &EncoderParams<T>,
    hyper: &HyperParams<T>,
) -> Result<(Simplex<T>, Tape<T>)> {
    let tape = unrolled_forward_logits(item_logits(group, theta)?, hyper, None)?;
    Ok((tape.final_label_beliefs(), tape))
}

/// Value of `−ln p̂_d[c]`, floored at [`LOSS_FLOOR`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscriminativeLoss<T> {
    pub value: T,
    /// True when the floor was applied (the gradient is then zero).
    pub clipped: bool,
}

pub fn discriminative_loss<T: Scalar>(p_group: &Simplex<T>, label: usize) -> Result<DiscriminativeLoss<T>> {
    if label >= p_group.len() {
        return Err(Error::contract(format!("label {label} out of range")));
    }
    let p = p_group[label];
    let floor = T::lit(LOSS_FLOOR);
    if p < floor {
        log::warn!("label belief {p} below floor; loss clipped");
        Ok(DiscriminativeLoss {
            value: -floor.ln(),
            clipped: true,
        })
    } else {
        Ok(DiscriminativeLoss {
            value: -p.ln(),
            clipped: false,
        })
    }
}

/// Discriminative loss of one labeled group and its exact gradient.
pub fn discriminative_loss_and_grad<T: Scalar>(
    group: &Group<T>,
    theta: &EncoderParams<T>,
    hyper: &HyperParams<T>,
) -> Result<(DiscriminativeLoss<T>, EncoderGradient<T>, Tape<T>)> {
    let label = group
        .label
        .ok_or_else(|| Error::contract(format!("group '{}' has no label", group.id)))?;
    if !theta.is_trainable() {
        return Err(Error::Unsupported(
            "discriminative training needs a trainable encoder".into(),
        ));
    }
    let (p_group, tape) = unrolled_forward(group, theta, hyper)?;
    let loss = discriminative_loss(&p_group, label)?;
    let mut grad_label = vec![T::zero(); p_group.len()];
    if !loss.clipped {
        grad_label[label] = -p_group[label].recip();
    }
    let grad_logits = tape.backward(&grad_label);
    let mut grad = EncoderGradient::zeros_like(theta);
    for (item, g) in group.items.iter().zip(&grad_logits) {
        theta.accumulate_backward(item, g, &mut grad)?;
    }
    Ok((loss, grad, tape))
}

/// One step of discriminative training on a single labeled group.
pub fn discriminative_train_step<T: Scalar>(
    group: &Group<T>,
    theta: &mut EncoderParams<T>,
    hyper: &HyperParams<T>,
    optimizer: &mut Optimizer<T>,
) -> Result<T> {
    let (loss, grad, _) = discriminative_loss_and_grad(group, theta, hyper)?;
    if !grad.is_finite() {
        return Err(Error::Training {
            epoch: 0,
            step: optimizer.steps_taken() as usize,
            detail: "non-finite gradient".into(),
        });
    }
    optimizer.apply(theta.params_mut(), &grad.values);
    Ok(loss.value)
}

/// Prediction for one group.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction<T> {
    pub label: usize,
    pub p_group: Simplex<T>,
    pub p_items: Vec<Simplex<T>>,
}

/// Unrolled inference without labels; the label is the most probable class
/// (lowest index on ties).
pub fn predict_group<T: Scalar>(
    group: &Group<T>,
    theta: &EncoderParams<T>,
    hyper: &HyperParams<T>,
) -> Result<Prediction<T>> {
    let (p_group, tape) = unrolled_forward(group, theta, hyper)?;
    Ok(Prediction {
        label: p_group.argmax(),
        p_items: tape.final_item_beliefs(),
        p_group,
    })
}

/// Metrics of one optimizer step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepMetrics {
    pub loss: f64,
    /// Items (variational) or labeled groups (discriminative) in the step.
    pub count: usize,
    pub elbo: Option<f64>,
    pub topic_usage: Vec<u64>,
    pub clipped: u64,
}

/// Owns θ, the optimizer, the regularizer's running average and the
/// persistent per-group variational states.
#[derive(Debug, Clone)]
pub struct Trainer<T> {
    theta: EncoderParams<T>,
    hyper: HyperParams<T>,
    config: TrainConfig,
    regularizer: RegularizerState<T>,
    states: Vec<MeanFieldState<T>>,
    optimizer: Optimizer<T>,
    rng: SeededRng,
    total_items: usize,
    epoch: usize,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(
        theta: EncoderParams<T>,
        hyper: HyperParams<T>,
        config: TrainConfig,
        groups: &[Group<T>],
    ) -> Result<Self> {
        hyper.validate()?;
        config.validate()?;
        if groups.is_empty() {
            return Err(Error::contract("training needs at least one group"));
        }
        if theta.num_topics() != hyper.num_topics() {
            return Err(Error::contract(format!(
                "encoder produces {} logits but alpha has {} topics",
                theta.num_topics(),
                hyper.num_topics()
            )));
        }
        if !theta.is_trainable() {
            return Err(Error::Unsupported(
                "fixed_loglik encoders cannot be trained".into(),
            ));
        }
        for g in groups {
            for item in &g.items {
                theta.check_item(item)?;
            }
        }
        if config.mode == Mode::Discriminative && groups.iter().all(|g| g.label.is_none()) {
            return Err(Error::contract("discriminative training needs labeled groups"));
        }
        let states = groups
            .iter()
            .map(|g| init_state(g, &hyper, config.clamp_labels))
            .collect::<Result<Vec<_>>>()?;
        let optimizer = Optimizer::new(
            config.optimizer,
            config.learning_rate,
            config.schedule,
            theta.num_params(),
        );
        Ok(Trainer {
            regularizer: RegularizerState::new(hyper.rho)?,
            total_items: groups.iter().map(|g| g.items.len()).sum(),
            rng: SeededRng::new(config.seed),
            theta,
            hyper,
            config,
            states,
            optimizer,
            epoch: 0,
        })
    }

    pub fn theta(&self) -> &EncoderParams<T> {
        &self.theta
    }

    pub fn into_theta(self) -> EncoderParams<T> {
        self.theta
    }

    pub fn hyper(&self) -> &HyperParams<T> {
        &self.hyper
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn regularizer(&self) -> &RegularizerState<T> {
        &self.regularizer
    }

    pub fn states(&self) -> &[MeanFieldState<T>] {
        &self.states
    }

    pub fn epochs_completed(&self) -> usize {
        self.epoch
    }

    fn diverged(&self, detail: impl Into<String>) -> Error {
        Error::Training {
            epoch: self.epoch + 1,
            step: self.optimizer.steps_taken() as usize,
            detail: detail.into(),
        }
    }

    /// E-step on the batch, regularizer update, and one gradient step on the
    /// soft-label cross-entropy.
    pub fn variational_step(&mut self, groups: &[Group<T>], batch: &[usize]) -> Result<StepMetrics> {
        let k = self.hyper.num_topics();
        let gamma = self.hyper.gamma;
        let mut usage = vec![0u64; k];
        let mut elbo = 0.0;
        let mut logits_batch = Vec::with_capacity(batch.len());
        let mut g_flat = Vec::new();
        for &d in batch {
            let group = &groups[d];
            let logits = item_logits(group, &self.theta)?;
            if !self.config.warm_start {
                self.states[d] = init_state(group, &self.hyper, self.config.clamp_labels)?;
            }
            let state = &mut self.states[d];
            for _ in 0..self.config.e_step_sweeps {
                mean_field::sweep(state, &logits, &self.hyper, UpdateOrder::default())?;
            }
            let g: Vec<Vec<T>> = logits
                .iter()
                .map(|f| {
                    let mut v = f.clone();
                    math::log_softmax_in_place(&mut v);
                    v
                })
                .collect();
            elbo += mean_field::elbo_with(state, &g, &self.hyper)?.as_f64();
            for p in state.p_hat_items() {
                usage[p.argmax()] += 1;
            }
            g_flat.extend(g);
            logits_batch.push(logits);
        }
        let r_hat = update_running_estimate(&mut self.regularizer, &g_flat, self.total_items)?;

        let mut grad = EncoderGradient::zeros_like(&self.theta);
        let mut loss = T::zero();
        let mut count = 0usize;
        let mut offset = 0;
        for (&d, logits) in batch.iter().zip(&logits_batch) {
            let group = &groups[d];
            let state = &self.states[d];
            for (n, (item, f)) in group.items.iter().zip(logits).enumerate() {
                let weights: Vec<T> = state.p_hat_items()[n]
                    .as_slice()
                    .iter()
                    .zip(&r_hat[offset + n])
                    .map(|(p, r)| *p + gamma * *r)
                    .collect();
                let theta = &self.theta;
                loss += soft_label_cross_entropy(f, &weights, &mut |g| {
                    theta.accumulate_backward(item, g, &mut grad)
                })?;
            }
            offset += group.items.len();
            count += group.items.len();
        }
        if !loss.is_finite() {
            return Err(self.diverged(format!("non-finite loss {loss}")));
        }
        if !grad.is_finite() {
            return Err(self.diverged("non-finite gradient"));
        }
        grad.scale(T::from_usize_lossy(count).recip());
        self.optimizer.apply(self.theta.params_mut(), &grad.values);
        if self.theta.params().iter().any(|v| !v.is_finite()) {
            return Err(self.diverged("parameters became non-finite"));
        }
        Ok(StepMetrics {
            loss: loss.as_f64(),
            count,
            elbo: Some(elbo),
            topic_usage: usage,
            clipped: 0,
        })
    }

    /// Unrolled-inference gradient step over the labeled groups of the batch.
    pub fn discriminative_step(&mut self, groups: &[Group<T>], batch: &[usize]) -> Result<StepMetrics> {
        let k = self.hyper.num_topics();
        let mut usage = vec![0u64; k];
        let mut grad = EncoderGradient::zeros_like(&self.theta);
        let mut loss = 0.0;
        let mut count = 0;
        let mut clipped = 0;
        for &d in batch {
            let group = &groups[d];
            if group.label.is_none() {
                continue;
            }
            let (l, g, tape) = discriminative_loss_and_grad(group, &self.theta, &self.hyper)?;
            for p in tape.final_item_beliefs() {
                usage[p.argmax()] += 1;
            }
            grad.add_assign(&g);
            loss += l.value.as_f64();
            clipped += u64::from(l.clipped);
            count += 1;
        }
        if count == 0 {
            return Ok(StepMetrics {
                loss: 0.0,
                count: 0,
                elbo: None,
                topic_usage: usage,
                clipped: 0,
            });
        }
        if !loss.is_finite() {
            return Err(self.diverged(format!("non-finite loss {loss}")));
        }
        if !grad.is_finite() {
            return Err(self.diverged("non-finite gradient"));
        }
        grad.scale(T::from_usize_lossy(count).recip());
        self.optimizer.apply(self.theta.params_mut(), &grad.values);
        if self.theta.params().iter().any(|v| !v.is_finite()) {
            return Err(self.diverged("parameters became non-finite"));
        }
        Ok(StepMetrics {
            loss,
            count,
            elbo: None,
            topic_usage: usage,
            clipped,
        })
    }

    /// Fraction of labeled held-out groups whose predicted label is correct.
    pub fn heldout_accuracy(&self, heldout: &[Group<T>]) -> Result<Option<f64>> {
        let mut total = 0usize;
        let mut correct = 0usize;
        for g in heldout {
            if let Some(label) = g.label {
                total += 1;
                if predict_group(g, &self.theta, &self.hyper)?.label == label {
                    correct += 1;
                }
            }
        }
        Ok((total > 0).then(|| correct as f64 / total as f64))
    }

    /// One pass over the training groups in a seeded random order.
    pub fn run_epoch(&mut self, groups: &[Group<T>], heldout: &[Group<T>]) -> Result<EpochRecord> {
        if groups.len() != self.states.len() {
            return Err(Error::contract("trainer was built for a different group list"));
        }
        let mut order: Vec<usize> = match self.config.mode {
            Mode::Variational => (0..groups.len()).collect(),
            Mode::Discriminative => (0..groups.len()).filter(|d| groups[*d].label.is_some()).collect(),
        };
        self.rng.shuffle(&mut order);
        let k = self.hyper.num_topics();
        let mut usage = vec![0u64; k];
        let mut loss = 0.0;
        let mut count = 0;
        let mut elbo = 0.0;
        let mut clipped = 0;
        for batch in order.chunks(self.config.batch_size) {
            let step = match self.config.mode {
                Mode::Variational => self.variational_step(groups, batch),
                Mode::Discriminative => self.discriminative_step(groups, batch),
            };
            // inputs were validated up front, so numeric failures mean θ blew up
            let m = step.map_err(|e| match e {
                Error::Domain(m) | Error::Degenerate(m) => self.diverged(m),
                other => other,
            })?;
            loss += m.loss;
            count += m.count;
            elbo += m.elbo.unwrap_or(0.0);
            clipped += m.clipped;
            for (u, v) in usage.iter_mut().zip(&m.topic_usage) {
                *u += v;
            }
        }
        self.epoch += 1;
        Ok(EpochRecord {
            epoch: self.epoch,
            mode: self.config.mode,
            loss: if count > 0 { loss / count as f64 } else { 0.0 },
            elbo: (self.config.mode == Mode::Variational).then_some(elbo),
            heldout_accuracy: self.heldout_accuracy(heldout)?,
            topic_usage: usage,
            clipped,
        })
    }

    /// Runs `config.epochs` epochs, reporting each record to `on_epoch`.
    pub fn train(
        &mut self,
        groups: &[Group<T>],
        heldout: &[Group<T>],
        mut on_epoch: impl FnMut(&EpochRecord),
    ) -> Result<TrainReport> {
        let mut epochs = Vec::with_capacity(self.config.epochs);
        for _ in 0..self.config.epochs {
            let record = self.run_epoch(groups, heldout)?;
            on_epoch(&record);
            epochs.push(record);
        }
        Ok(TrainReport { epochs })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::{init_params, Activation, EncoderSpec, Item, Table};
    use crate::math::PositiveVector;

    fn hyper(k: usize, alpha: f64, lambda: f64, n_iter: usize) -> HyperParams<f64> {
        HyperParams {
            alpha: PositiveVector::symmetric(k, alpha).unwrap(),
            lambda,
            gamma: 0.0,
            n_iter,
            rho: 0.9,
        }
    }

    #[test]
    fn loss_examples() {
        let half = [0.5f64.ln(), 0.5f64.ln()];
        let theta = EncoderParams::Table(Table::new(2, 1, vec![0.0, 0.0]).unwrap());
        let group = Group::new("g", vec![Item::Token(0)], None).unwrap();
        for p in [Simplex::one_hot(2, 0), Simplex::uniform(2)] {
            let state = MeanFieldState::from_parts(
                PositiveVector::new(vec![1.0, 1.0]).unwrap(),
                Simplex::uniform(2),
                vec![p],
                false,
            )
            .unwrap();
            let l = variational_loss(
                std::slice::from_ref(&group),
                std::slice::from_ref(&state),
                &theta,
                &[vec![vec![0.0, 0.0]]],
                0.0,
            )
            .unwrap();
            assert!((l + half[0]).abs() < 1e-15);
        }
    }

    #[test]
    fn discriminative_loss_examples() {
        let l = discriminative_loss(&Simplex::<f64>::one_hot(3, 1), 1).unwrap();
        assert_eq!(l.value, 0.0);
        let l = discriminative_loss(&Simplex::<f64>::uniform(4), 2).unwrap();
        assert!((l.value - 4f64.ln()).abs() < 1e-15);
        let l = discriminative_loss(&Simplex::new(vec![0.9f64, 0.1]).unwrap(), 1).unwrap();
        assert!((l.value - 10f64.ln()).abs() < 1e-12);
        let l = discriminative_loss(&Simplex::<f64>::one_hot(2, 0), 1).unwrap();
        assert!(l.clipped && (l.value + LOSS_FLOOR.ln()).abs() < 1e-12);
    }

    #[test]
    fn hand_composed_single_iteration() {
        let h = hyper(2, 1.0, 1.0, 1);
        let tape = unrolled_forward_logits(vec![vec![1.0, 0.0]], &h, None).unwrap();
        let p1 = [0.731_058_578_630_004_9, 0.268_941_421_369_995_1];
        let alpha = [1.0 + p1[0] + 0.5, 1.0 + p1[1] + 0.5];
        assert!((tape.alpha_hat(1)[0] - alpha[0]).abs() < 1e-12);
        assert!((tape.alpha_hat(1)[1] - alpha[1]).abs() < 1e-12);
        // ψ(x) via ψ(x + 10) recurrence and a long asymptotic series.
        let psi = |x: f64| -> f64 {
            let mut shift = 0.0;
            let mut y = x;
            while y < 30.0 {
                shift += 1.0 / y;
                y += 1.0;
            }
            y.ln() - 0.5 / y - 1.0 / (12.0 * y * y) + 1.0 / (120.0 * y.powi(4))
                - 1.0 / (252.0 * y.powi(6))
                - shift
        };
        let z = [psi(alpha[0]), psi(alpha[1])];
        let e = 1.0 / (1.0 + (z[1] - z[0]).exp());
        let pd = tape.final_label_beliefs();
        assert!((pd[0] - e).abs() < 1e-12, "{} vs {e}", pd[0]);
    }

    #[test]
    fn zero_logits_keep_uniform_labels() {
        for n_iter in [1, 3, 8] {
            let h = hyper(3, 0.4, 2.5, n_iter);
            let tape = unrolled_forward_logits(vec![vec![0.0; 3]; 4], &h, None).unwrap();
            for v in tape.final_label_beliefs().as_slice() {
                assert!((v - 1.0 / 3.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn larger_lambda_sharpens_label_beliefs() {
        let mut last = 0.0;
        for lambda in [0.0, 0.5, 1.0, 2.0, 4.0, 8.0] {
            let h = hyper(2, 1.0, lambda, 1);
            let tape = unrolled_forward_logits(vec![vec![1.0, 0.0]], &h, None).unwrap();
            let p = tape.final_label_beliefs()[0];
            assert!(p >= last, "lambda {lambda}: {p} < {last}");
            last = p;
        }
    }

    #[test]
    fn beliefs_stay_on_simplex() {
        let mut rng = SeededRng::new(2);
        let logits: Vec<Vec<f64>> = (0..6)
            .map(|_| (0..4).map(|_| 5.0 * rng.normal()).collect())
            .collect();
        let tape = unrolled_forward_logits(logits, &hyper(4, 0.1, 3.0, 6), None).unwrap();
        for i in 0..=6 {
            assert!(Simplex::new(tape.label_beliefs(i).to_vec()).is_ok());
        }
        for i in 1..=6 {
            for p in tape.item_beliefs(i) {
                assert!(Simplex::new(p.clone()).is_ok());
            }
        }
    }

    #[test]
    fn predict_examples() {
        let h = hyper(3, 0.5, 1.0, 5);
        let theta = EncoderParams::Table(Table::new(3, 2, vec![0.0, 0.0, 0.0, 0.0, 10.0, 0.0]).unwrap());
        let g = Group::new("g", vec![Item::Token(0)], None).unwrap();
        assert_eq!(predict_group(&g, &theta, &h).unwrap().label, 2);
        let g = Group::new("g", vec![Item::Token(1)], None).unwrap();
        assert_eq!(predict_group(&g, &theta, &h).unwrap().label, 0);
    }

    #[test]
    fn zero_learning_rate_keeps_theta() {
        let spec = EncoderSpec::Mlp {
            input: 3,
            hidden: vec![4],
            topics: 2,
            activation: Activation::Tanh,
        };
        let mut theta = init_params(&spec, 1.0, &mut SeededRng::new(1)).unwrap();
        let before = theta.clone();
        let g = Group::new("g", vec![Item::Dense(vec![0.1, 0.2, 0.3])], Some(1)).unwrap();
        let mut opt = Optimizer::new(OptimizerKind::Sgd, 0.0, LrSchedule::Constant, theta.num_params());
        discriminative_train_step(&g, &mut theta, &hyper(2, 1.0, 1.0, 3), &mut opt).unwrap();
        assert_eq!(theta, before);
    }

    #[test]
    fn optimizers_descend_on_a_quadratic() {
        for kind in [
            OptimizerKind::Sgd,
            OptimizerKind::Momentum { beta: 0.9 },
            OptimizerKind::adam(),
        ] {
            let mut opt = Optimizer::<f64>::new(kind, 0.05, LrSchedule::InverseTime { decay: 0.001 }, 2);
            let mut x = vec![3.0, -2.0];
            for _ in 0..2000 {
                let grad = x.clone();
                opt.apply(&mut x, &grad);
            }
            assert!(x.iter().all(|v| v.abs() < 1e-2), "{kind:?}: {x:?}");
        }
    }
}
