//! Mean-field coordinate ascent for a single group.
//!
//! The variational family is `q(c) q(π) Π q(k_n)` with
//! `q(c) = Cat(p̂_d)`, `q(π) = Dir(α̂)` and `q(k_n) = Cat(p̂_n)`. The three
//! coordinate updates are
//!
//! ```text
//! p̂_d = softmax(λ ψ(α̂))
//! α̂   = α + Σ_n p̂_n + λ p̂_d
//! p̂_n = softmax(f(x_n, θ) + ψ(α̂))
//! ```
//!
//! and each one exactly maximizes [`elbo`] in its block.

use crate::encoders::{EncoderParams, Item};
use crate::error::{Error, Result};
use crate::math::{
    self, categorical_entropy, digamma_unchecked, dirichlet_entropy, expected_log_pi, PositiveVector, Simplex,
};
use crate::scalar::Scalar;

/// Items that are assumed to share a topic mixture, with an optional class.
#[derive(Debug, Clone, PartialEq)]
pub struct Group<T> {
    pub id: String,
    pub items: Vec<Item<T>>,
    pub label: Option<usize>,
}

impl<T: Scalar> Group<T> {
    pub fn new(id: impl Into<String>, items: Vec<Item<T>>, label: Option<usize>) -> Result<Self> {
        let id = id.into();
        if items.is_empty() {
            return Err(Error::contract(format!("group '{id}' has no items")));
        }
        Ok(Group { id, items, label })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// `f(x_n, θ)` for every item of the group.
pub fn item_logits<T: Scalar>(group: &Group<T>, theta: &EncoderParams<T>) -> Result<Vec<Vec<T>>> {
    group.items.iter().map(|x| theta.forward_logits(x)).collect()
}

/// `g(x_n, θ)` for every item of the group.
pub fn item_log_likelihoods<T: Scalar>(group: &Group<T>, theta: &EncoderParams<T>) -> Result<Vec<Vec<T>>> {
    group.items.iter().map(|x| theta.log_softmax_g(x)).collect()
}

/// Model hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperParams<T> {
    /// Dirichlet prior α over topic proportions.
    pub alpha: PositiveVector<T>,
    /// Label strength λ.
    pub lambda: T,
    /// Regularizer strength γ. Its gradient adds a total weight of γ per
    /// topic spread over the whole dataset, against a weight of one per item
    /// for the data term, so useful values grow with the number of items.
    pub gamma: T,
    /// Unrolled mean-field iterations used by prediction and discriminative training.
    pub n_iter: usize,
    /// Decay of the regularizer's running average.
    pub rho: T,
}

impl<T: Scalar> HyperParams<T> {
    pub const DEFAULT_ALPHA: f64 = 0.1;
    pub const DEFAULT_LAMBDA: f64 = 1.0;
    pub const DEFAULT_GAMMA: f64 = 1e5;
    pub const DEFAULT_N_ITER: usize = 5;
    pub const DEFAULT_RHO: f64 = 0.9;

    /// Defaults for `k` topics: symmetric α = 0.1, λ = 1, γ = 10⁵, 5 unrolled
    /// iterations, ρ = 0.9.
    pub fn with_topics(k: usize) -> Result<Self> {
        let hyper = HyperParams {
            alpha: PositiveVector::symmetric(k, T::lit(Self::DEFAULT_ALPHA))?,
            lambda: T::lit(Self::DEFAULT_LAMBDA),
            gamma: T::lit(Self::DEFAULT_GAMMA),
            n_iter: Self::DEFAULT_N_ITER,
            rho: T::lit(Self::DEFAULT_RHO),
        };
        hyper.validate()?;
        Ok(hyper)
    }

    pub fn num_topics(&self) -> usize {
        self.alpha.len()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda >= T::zero()) {
            return Err(Error::contract("lambda must be finite and >= 0"));
        }
        if !(self.gamma.is_finite() && self.gamma >= T::zero()) {
            return Err(Error::contract("gamma must be finite and >= 0"));
        }
        if self.n_iter == 0 {
            return Err(Error::contract("n_iter must be positive"));
        }
        if !(self.rho >= T::zero() && self.rho < T::one()) {
            return Err(Error::contract("rho must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Variational parameters of one group.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanFieldState<T> {
    alpha_hat: PositiveVector<T>,
    p_hat_d: Simplex<T>,
    p_hat_items: Vec<Simplex<T>>,
    clamped: bool,
}

impl<T: Scalar> MeanFieldState<T> {
    /// Assembles a state from explicit parts, checking shapes.
    pub fn from_parts(
        alpha_hat: PositiveVector<T>,
        p_hat_d: Simplex<T>,
        p_hat_items: Vec<Simplex<T>>,
        clamped: bool,
    ) -> Result<Self> {
        let k = alpha_hat.len();
        if p_hat_d.len() != k || p_hat_items.iter().any(|p| p.len() != k) {
            return Err(Error::contract("belief vectors must all have K entries"));
        }
        if clamped && p_hat_d.as_slice().iter().filter(|v| **v == T::one()).count() != 1 {
            return Err(Error::contract("a clamped state needs one-hot label beliefs"));
        }
        Ok(MeanFieldState {
            alpha_hat,
            p_hat_d,
            p_hat_items,
            clamped,
        })
    }

    pub fn alpha_hat(&self) -> &PositiveVector<T> {
        &self.alpha_hat
    }

    pub fn p_hat_d(&self) -> &Simplex<T> {
        &self.p_hat_d
    }

    pub fn p_hat_items(&self) -> &[Simplex<T>] {
        &self.p_hat_items
    }

    pub fn is_clamped(&self) -> bool {
        self.clamped
    }

    pub fn num_topics(&self) -> usize {
        self.alpha_hat.len()
    }

    /// Clamps label beliefs to the one-hot of `label`, or releases them
    /// (keeping the current values) when `label` is `None`.
    pub fn set_clamp(&mut self, label: Option<usize>) -> Result<()> {
        match label {
            Some(c) => {
                if c >= self.num_topics() {
                    return Err(Error::contract(format!("label {c} out of range")));
                }
                self.p_hat_d = Simplex::one_hot(self.num_topics(), c);
                self.clamped = true;
            }
            None => self.clamped = false,
        }
        Ok(())
    }
}

/// Initial state: α̂ = α, uniform item beliefs, and uniform label beliefs
/// unless `clamp` is set and the group is labeled.
pub fn init_state<T: Scalar>(
    group: &Group<T>,
    hyper: &HyperParams<T>,
    clamp: bool,
) -> Result<MeanFieldState<T>> {
    let k = hyper.num_topics();
    let (p_hat_d, clamped) = match (group.label, clamp) {
        (Some(c), true) => {
            if c >= k {
                return Err(Error::contract(format!(
                    "group '{}' has label {c}, but K = {k}",
                    group.id
                )));
            }
            (Simplex::one_hot(k, c), true)
        }
        _ => (Simplex::uniform(k), false),
    };
    Ok(MeanFieldState {
        alpha_hat: hyper.alpha.clone(),
        p_hat_d,
        p_hat_items: vec![Simplex::uniform(k); group.items.len()],
        clamped,
    })
}

fn digamma_vec<T: Scalar>(values: &[T]) -> Vec<T> {
    values.iter().map(|a| digamma_unchecked(*a)).collect()
}

/// p̂_n = softmax(f_n + ψ(α̂)) for every item, given precomputed logits.
pub fn update_item_beliefs<T: Scalar>(state: &mut MeanFieldState<T>, logits: &[Vec<T>]) -> Result<()> {
    if logits.len() != state.p_hat_items.len() {
        return Err(Error::contract("one logit vector per item is required"));
    }
    let bias = digamma_vec(state.alpha_hat.as_slice());
    for (belief, f) in state.p_hat_items.iter_mut().zip(logits) {
        if f.len() != bias.len() {
            return Err(Error::contract("logit vector has the wrong length"));
        }
        let z: Vec<T> = f.iter().zip(&bias).map(|(a, b)| *a + *b).collect();
        *belief = math::softmax(&z)?;
    }
    Ok(())
}

/// [`update_item_beliefs`] evaluating the encoder on the group's items.
pub fn update_item_beliefs_for<T: Scalar>(
    state: &mut MeanFieldState<T>,
    group: &Group<T>,
    theta: &EncoderParams<T>,
) -> Result<()> {
    update_item_beliefs(state, &item_logits(group, theta)?)
}

/// α̂ = α + Σ_n p̂_n + λ p̂_d.
pub fn update_alpha<T: Scalar>(state: &mut MeanFieldState<T>, hyper: &HyperParams<T>) {
    let mut alpha_hat = hyper.alpha.as_slice().to_vec();
    for p in &state.p_hat_items {
        for (a, v) in alpha_hat.iter_mut().zip(p.as_slice()) {
            *a += *v;
        }
    }
    for (a, v) in alpha_hat.iter_mut().zip(state.p_hat_d.as_slice()) {
        *a += hyper.lambda * *v;
    }
    state.alpha_hat = PositiveVector::from_positive(alpha_hat);
}

/// p̂_d = softmax(λ ψ(α̂)); a no-op for clamped states.
pub fn update_label_beliefs<T: Scalar>(state: &mut MeanFieldState<T>, hyper: &HyperParams<T>) {
    if state.clamped {
        return;
    }
    let mut z = digamma_vec(state.alpha_hat.as_slice());
    for v in &mut z {
        *v *= hyper.lambda;
    }
    math::softmax_in_place(&mut z);
    state.p_hat_d = Simplex::from_normalized(z);
}

/// One of the three coordinate updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Update {
    Items,
    Alpha,
    Label,
}

/// Order of updates inside a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UpdateOrder(pub [Update; 3]);

impl Default for UpdateOrder {
    fn default() -> Self {
        UpdateOrder([Update::Items, Update::Alpha, Update::Label])
    }
}

/// Applies each update once in `order`.
pub fn sweep<T: Scalar>(
    state: &mut MeanFieldState<T>,
    logits: &[Vec<T>],
    hyper: &HyperParams<T>,
    order: UpdateOrder,
) -> Result<()> {
    for update in order.0 {
        match update {
            Update::Items => update_item_beliefs(state, logits)?,
            Update::Alpha => update_alpha(state, hyper),
            Update::Label => update_label_beliefs(state, hyper),
        }
    }
    Ok(())
}

/// Stopping rule for [`infer`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Convergence {
    /// Stop once max |Δα̂| falls below this.
    pub tolerance: f64,
    pub max_sweeps: usize,
}

impl Default for Convergence {
    fn default() -> Self {
        Convergence {
            tolerance: 1e-6,
            max_sweeps: 100,
        }
    }
}

/// Sweeps until α̂ stops moving. Returns the number of sweeps performed.
pub fn infer<T: Scalar>(
    state: &mut MeanFieldState<T>,
    logits: &[Vec<T>],
    hyper: &HyperParams<T>,
    order: UpdateOrder,
    stop: Convergence,
) -> Result<usize> {
    let tol = T::lit(stop.tolerance);
    for n in 1..=stop.max_sweeps {
        let before = state.alpha_hat.clone();
        sweep(state, logits, hyper, order)?;
        let delta = before
            .as_slice()
            .iter()
            .zip(state.alpha_hat.as_slice())
            .fold(T::zero(), |m, (a, b)| m.max((*a - *b).abs()));
        if delta < tol {
            return Ok(n);
        }
    }
    Ok(stop.max_sweeps)
}

/// Evidence lower bound given item log-likelihoods `g_n`, up to terms that
/// depend only on θ:
///
/// ```text
/// (α − 1 + Σ_n p̂_n + λ p̂_d)ᵀ E[ln π] + Σ_n p̂_nᵀ g_n
///   + H[Dir(α̂)] + Σ_n H[p̂_n] + H[p̂_d]
/// ```
///
/// Products with zero belief are dropped, so `g = -inf` entries are allowed
/// where the matching belief is exactly zero.
pub fn elbo_with<T: Scalar>(
    state: &MeanFieldState<T>,
    log_likelihoods: &[Vec<T>],
    hyper: &HyperParams<T>,
) -> Result<T> {
    if log_likelihoods.len() != state.p_hat_items.len() {
        return Err(Error::contract("one log-likelihood vector per item is required"));
    }
    let elog = expected_log_pi(&state.alpha_hat);
    let mut weight: Vec<T> = hyper.alpha.as_slice().iter().map(|a| *a - T::one()).collect();
    let mut total = T::zero();
    for (p, g) in state.p_hat_items.iter().zip(log_likelihoods) {
        for (k, pk) in p.as_slice().iter().enumerate() {
            weight[k] += *pk;
            if *pk > T::zero() {
                total += *pk * g[k];
            }
        }
        total += categorical_entropy(p.as_slice());
    }
    for (w, pd) in weight.iter_mut().zip(state.p_hat_d.as_slice()) {
        *w += hyper.lambda * *pd;
    }
    total += weight.iter().zip(&elog).map(|(w, e)| *w * *e).sum::<T>();
    total += dirichlet_entropy(&state.alpha_hat);
    total += categorical_entropy(state.p_hat_d.as_slice());
    Ok(total)
}

/// [`elbo_with`] evaluating `g` from the encoder.
pub fn elbo<T: Scalar>(
    group: &Group<T>,
    state: &MeanFieldState<T>,
    theta: &EncoderParams<T>,
    hyper: &HyperParams<T>,
) -> Result<T> {
    elbo_with(state, &item_log_likelihoods(group, theta)?, hyper)
}
