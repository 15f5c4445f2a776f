//! Classical LDA: synthetic corpora, collapsed Gibbs sampling, and the
//! special case of logistic LDA obtained with `g = ln β x`.

use crate::data_io::{Corpus, GroupTruth, PayloadSpec};
use crate::encoders::Item;
use crate::error::{Error, Result};
use crate::math::{self, sample_categorical_slice, sample_dirichlet, PositiveVector, SeededRng, Simplex};
use crate::mean_field::Group;
use crate::scalar::Scalar;

/// Parameters of the generative process.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorSpec {
    pub docs: usize,
    /// Items per group (fixed length).
    pub doc_len: usize,
    pub alpha: Vec<f64>,
    /// K rows, each a distribution over the V tokens.
    pub beta: Vec<Vec<f64>>,
    /// Attach label `argmax π_d` to every group.
    pub labels: bool,
}

/// A generated corpus with its latent variables.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus<T> {
    pub corpus: Corpus<T>,
    pub truth: Vec<GroupTruth>,
}

/// β with disjoint, contiguous supports: topic k is uniform over tokens
/// `[k V / K, (k + 1) V / K)`.
pub fn disjoint_beta(k: usize, v: usize) -> Result<Vec<Vec<f64>>> {
    if k == 0 || v < k {
        return Err(Error::contract("disjoint supports need 1 <= K <= V"));
    }
    Ok((0..k)
        .map(|t| {
            let (lo, hi) = (t * v / k, (t + 1) * v / k);
            let w = 1.0 / (hi - lo) as f64;
            (0..v)
                .map(|x| if (lo..hi).contains(&x) { w } else { 0.0 })
                .collect()
        })
        .collect())
}

/// β rows drawn from a symmetric Dirichlet(η).
pub fn dirichlet_beta(k: usize, v: usize, eta: f64, rng: &mut SeededRng) -> Result<Vec<Vec<f64>>> {
    let prior = PositiveVector::symmetric(v, eta)?;
    Ok((0..k).map(|_| sample_dirichlet(&prior, rng).into_vec()).collect())
}

/// Samples a corpus: π_d ~ Dir(α), k_dn ~ Cat(π_d), x_dn ~ Cat(β_k).
///
/// Group `d` uses the independent stream `rng.fork(d)`.
pub fn generate_corpus<T: Scalar>(spec: &GeneratorSpec, rng: &SeededRng) -> Result<SyntheticCorpus<T>> {
    let k = spec.beta.len();
    if k == 0 || spec.alpha.len() != k {
        return Err(Error::contract(
            "alpha and beta must describe the same K >= 1 topics",
        ));
    }
    let v = spec.beta[0].len();
    for row in &spec.beta {
        if row.len() != v {
            return Err(Error::contract("beta rows have different lengths"));
        }
        Simplex::new(row.clone()).map_err(|e| Error::contract(format!("invalid beta row: {e}")))?;
    }
    if spec.doc_len == 0 {
        return Err(Error::contract("documents need at least one item"));
    }
    let alpha = PositiveVector::new(spec.alpha.clone())?;
    let mut groups = Vec::with_capacity(spec.docs);
    let mut truth = Vec::with_capacity(spec.docs);
    for d in 0..spec.docs {
        let mut r = rng.fork(d as u64);
        let pi = sample_dirichlet(&alpha, &mut r).into_vec();
        let mut topics = Vec::with_capacity(spec.doc_len);
        let mut items = Vec::with_capacity(spec.doc_len);
        for _ in 0..spec.doc_len {
            let t = sample_categorical_slice(&pi, &mut r);
            topics.push(t);
            items.push(Item::Token(sample_categorical_slice(&spec.beta[t], &mut r)));
        }
        let label = spec.labels.then(|| math::argmax(&pi));
        groups.push(Group::new(format!("doc{d}"), items, label)?);
        truth.push(GroupTruth { pi, topics });
    }
    let corpus = Corpus::new(groups, k, PayloadSpec::Token { vocab_size: v }, None)?;
    Ok(SyntheticCorpus { corpus, truth })
}

/// Counts of a collapsed Gibbs sampler for LDA.
#[derive(Debug, Clone, PartialEq)]
pub struct GibbsState<T> {
    /// Topic of every item, `[group][position]`.
    pub z: Vec<Vec<usize>>,
    pub n_dk: Vec<Vec<usize>>,
    pub n_kv: Vec<Vec<usize>>,
    pub n_k: Vec<usize>,
    pub alpha: Vec<T>,
    pub eta: T,
    /// Optional per-group pseudo-count λ added to the labeled topic.
    pub label_weight: T,
    labels: Vec<Option<usize>>,
    tokens: Vec<Vec<usize>>,
    vocab_size: usize,
}

fn tokens_of<T>(group: &Group<T>) -> Result<Vec<usize>> {
    group
        .items
        .iter()
        .map(|it| match it {
            Item::Token(t) => Ok(*t),
            Item::Dense(_) => Err(Error::contract("Gibbs sampling needs token items")),
        })
        .collect()
}

impl<T: Scalar> GibbsState<T> {
    /// Builds a state from explicit assignments.
    pub fn from_assignments(
        corpus: &Corpus<T>,
        z: Vec<Vec<usize>>,
        alpha: Vec<T>,
        eta: T,
        label_weight: T,
    ) -> Result<Self> {
        let k = alpha.len();
        let v = match corpus.payload {
            PayloadSpec::Token { vocab_size } => vocab_size,
            PayloadSpec::Dense { .. } => return Err(Error::contract("Gibbs sampling needs a token corpus")),
        };
        if k == 0 || alpha.iter().any(|a| !(*a > T::zero())) || !(eta > T::zero()) {
            return Err(Error::domain("alpha and eta must be positive"));
        }
        if !(label_weight >= T::zero()) {
            return Err(Error::domain("label weight must be >= 0"));
        }
        if z.len() != corpus.groups.len() {
            return Err(Error::contract("one assignment list per group is required"));
        }
        let mut n_dk = vec![vec![0; k]; z.len()];
        let mut n_kv = vec![vec![0; v]; k];
        let mut n_k = vec![0; k];
        let mut tokens = Vec::with_capacity(z.len());
        for (d, (group, zd)) in corpus.groups.iter().zip(&z).enumerate() {
            let toks = tokens_of(group)?;
            if zd.len() != toks.len() {
                return Err(Error::contract(format!("group {d}: assignment count mismatch")));
            }
            for (&t, &tok) in zd.iter().zip(&toks) {
                if t >= k || tok >= v {
                    return Err(Error::contract(format!("group {d}: topic or token out of range")));
                }
                n_dk[d][t] += 1;
                n_kv[t][tok] += 1;
                n_k[t] += 1;
            }
            tokens.push(toks);
        }
        Ok(GibbsState {
            z,
            n_dk,
            n_kv,
            n_k,
            alpha,
            eta,
            label_weight,
            labels: corpus.groups.iter().map(|g| g.label).collect(),
            tokens,
            vocab_size: v,
        })
    }

    /// Uniformly random initial assignments.
    pub fn random_init(
        corpus: &Corpus<T>,
        alpha: Vec<T>,
        eta: T,
        label_weight: T,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        let k = alpha.len();
        if k == 0 {
            return Err(Error::domain("alpha must have at least one topic"));
        }
        let z = corpus
            .groups
            .iter()
            .map(|g| (0..g.items.len()).map(|_| rng.index(k)).collect())
            .collect();
        Self::from_assignments(corpus, z, alpha, eta, label_weight)
    }

    pub fn num_topics(&self) -> usize {
        self.alpha.len()
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    /// Checks Σ_k n_dk = N_d, Σ_v n_kv = n_k and agreement with `z`.
    pub fn counts_consistent(&self) -> bool {
        let k = self.num_topics();
        let mut n_dk = vec![vec![0usize; k]; self.z.len()];
        let mut n_kv = vec![vec![0usize; self.vocab_size]; k];
        for (d, (zd, toks)) in self.z.iter().zip(&self.tokens).enumerate() {
            for (&t, &tok) in zd.iter().zip(toks) {
                n_dk[d][t] += 1;
                n_kv[t][tok] += 1;
            }
        }
        let n_k: Vec<usize> = n_kv.iter().map(|row| row.iter().sum()).collect();
        n_dk == self.n_dk && n_kv == self.n_kv && n_k == self.n_k
    }

    fn remove(&mut self, d: usize, n: usize) {
        let (t, tok) = (self.z[d][n], self.tokens[d][n]);
        self.n_dk[d][t] -= 1;
        self.n_kv[t][tok] -= 1;
        self.n_k[t] -= 1;
    }

    fn assign(&mut self, d: usize, n: usize, t: usize) {
        let tok = self.tokens[d][n];
        self.z[d][n] = t;
        self.n_dk[d][t] += 1;
        self.n_kv[t][tok] += 1;
        self.n_k[t] += 1;
    }

    fn doc_prior(&self, d: usize, t: usize) -> T {
        let mut a = self.alpha[t];
        if self.labels[d] == Some(t) {
            a += self.label_weight;
        }
        a
    }
}

/// Collapsed conditional of one assignment given all others:
/// `p(k) ∝ (n_dk + α_k)(n_kv + η) / (n_k + V η)`.
///
/// `state` must already exclude the assignment being resampled.
pub fn gibbs_conditional<T: Scalar>(state: &GibbsState<T>, d: usize, token: usize) -> Result<Simplex<T>> {
    let k = state.num_topics();
    if d >= state.n_dk.len() || token >= state.vocab_size {
        return Err(Error::contract("group or token out of range"));
    }
    let v_eta = T::from_usize_lossy(state.vocab_size) * state.eta;
    let mut weights = Vec::with_capacity(k);
    for t in 0..k {
        if state.n_kv[t][token] > state.n_k[t] {
            return Err(Error::contract("inconsistent counts: n_kv exceeds n_k"));
        }
        let doc = T::from_usize_lossy(state.n_dk[d][t]) + state.doc_prior(d, t);
        let word = (T::from_usize_lossy(state.n_kv[t][token]) + state.eta)
            / (T::from_usize_lossy(state.n_k[t]) + v_eta);
        weights.push(doc * word);
    }
    let total: T = weights.iter().copied().sum();
    Ok(Simplex::from_normalized(
        weights.into_iter().map(|w| w / total).collect(),
    ))
}

/// Resamples every assignment once, in corpus order.
pub fn gibbs_sweep<T: Scalar>(state: &mut GibbsState<T>, rng: &mut SeededRng) -> Result<()> {
    for d in 0..state.z.len() {
        for n in 0..state.z[d].len() {
            state.remove(d, n);
            let p = gibbs_conditional(state, d, state.tokens[d][n])?;
            let t = sample_categorical_slice(p.as_slice(), rng);
            state.assign(d, n, t);
        }
    }
    Ok(())
}

/// Posterior means of β and π given the counts.
pub fn estimate_beta_theta<T: Scalar>(state: &GibbsState<T>) -> (Vec<Simplex<T>>, Vec<Simplex<T>>) {
    let v_eta = T::from_usize_lossy(state.vocab_size) * state.eta;
    let beta = state
        .n_kv
        .iter()
        .zip(&state.n_k)
        .map(|(row, nk)| {
            let denom = T::from_usize_lossy(*nk) + v_eta;
            Simplex::from_normalized(
                row.iter()
                    .map(|c| (T::from_usize_lossy(*c) + state.eta) / denom)
                    .collect(),
            )
        })
        .collect();
    let pi = state
        .n_dk
        .iter()
        .enumerate()
        .map(|(d, row)| {
            let prior: Vec<T> = (0..row.len()).map(|t| state.doc_prior(d, t)).collect();
            let denom = T::from_usize_lossy(row.iter().sum()) + prior.iter().copied().sum::<T>();
            Simplex::from_normalized(
                row.iter()
                    .zip(&prior)
                    .map(|(c, a)| (T::from_usize_lossy(*c) + *a) / denom)
                    .collect(),
            )
        })
        .collect();
    (beta, pi)
}

/// Settings for [`run_gibbs`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GibbsConfig {
    pub burn_in: usize,
    pub samples: usize,
    pub eta: f64,
    pub label_weight: f64,
}

impl Default for GibbsConfig {
    fn default() -> Self {
        GibbsConfig {
            burn_in: 500,
            samples: 500,
            eta: 0.1,
            label_weight: 0.0,
        }
    }
}

/// Output of a full Gibbs run.
#[derive(Debug, Clone)]
pub struct GibbsRun<T> {
    pub state: GibbsState<T>,
    /// Per item, the frequency of each topic over the sampling sweeps.
    pub item_beliefs: Vec<Vec<Simplex<T>>>,
    pub beta: Vec<Simplex<T>>,
    pub pi: Vec<Simplex<T>>,
}

/// Burn-in followed by sampling sweeps; item beliefs are assignment
/// frequencies over the sampling sweeps and β, π are read off the final state.
pub fn run_gibbs<T: Scalar>(
    corpus: &Corpus<T>,
    alpha: Vec<T>,
    config: GibbsConfig,
    rng: &mut SeededRng,
) -> Result<GibbsRun<T>> {
    let k = alpha.len();
    let mut state = GibbsState::random_init(
        corpus,
        alpha,
        T::lit(config.eta),
        T::lit(config.label_weight),
        rng,
    )?;
    for _ in 0..config.burn_in {
        gibbs_sweep(&mut state, rng)?;
    }
    let mut freq: Vec<Vec<Vec<usize>>> = state.z.iter().map(|zd| vec![vec![0; k]; zd.len()]).collect();
    for _ in 0..config.samples {
        gibbs_sweep(&mut state, rng)?;
        for (fd, zd) in freq.iter_mut().zip(&state.z) {
            for (f, t) in fd.iter_mut().zip(zd) {
                f[*t] += 1;
            }
        }
    }
    let item_beliefs = freq
        .iter()
        .map(|fd| {
            fd.iter()
                .map(|f| {
                    let total: usize = f.iter().sum();
                    if total == 0 {
                        Simplex::uniform(k)
                    } else {
                        let total = T::from_usize_lossy(total);
                        Simplex::from_normalized(f.iter().map(|c| T::from_usize_lossy(*c) / total).collect())
                    }
                })
                .collect()
        })
        .collect();
    let (beta, pi) = estimate_beta_theta(&state);
    Ok(GibbsRun {
        state,
        item_beliefs,
        beta,
        pi,
    })
}

/// Mean of per-token topic beliefs, used to score a multi-token item with LDA.
pub fn lda_item_topic_avg<T: Scalar>(beliefs: &[Simplex<T>]) -> Result<Simplex<T>> {
    let first = beliefs
        .first()
        .ok_or_else(|| Error::contract("at least one token belief is required"))?;
    let k = first.len();
    if beliefs.iter().any(|b| b.len() != k) {
        return Err(Error::contract("token beliefs must share K"));
    }
    let m = T::from_usize_lossy(beliefs.len());
    let mut mean = vec![T::zero(); k];
    for b in beliefs {
        for (a, v) in mean.iter_mut().zip(b.as_slice()) {
            *a += *v;
        }
    }
    let mut mean: Vec<T> = mean.into_iter().map(|v| v / m).collect();
    let total: T = mean.iter().copied().sum();
    for v in &mut mean {
        *v /= total;
    }
    Ok(Simplex::from_normalized(mean))
}

/// Topic posterior of a token under LDA: normalize(π_k β_kv).
pub fn special_case_conditional<T: Scalar>(
    beta: &[Vec<T>],
    token: usize,
    pi: &Simplex<T>,
) -> Result<Simplex<T>> {
    if beta.len() != pi.len() || beta.iter().any(|row| token >= row.len()) {
        return Err(Error::contract("beta must have K rows covering the token"));
    }
    let weights: Vec<T> = beta
        .iter()
        .zip(pi.as_slice())
        .map(|(row, p)| *p * row[token])
        .collect();
    let total: T = weights.iter().copied().sum();
    if !(total > T::zero()) {
        return Err(Error::Degenerate(format!(
            "token {token} has zero probability under every topic with positive weight"
        )));
    }
    Ok(Simplex::from_normalized(
        weights.into_iter().map(|w| w / total).collect(),
    ))
}
