//! Special functions, simplex arithmetic and seeded sampling.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Gamma};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Non-negative vector summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct Simplex<T>(Vec<T>);

impl<T: Scalar> Simplex<T> {
    pub fn new(values: Vec<T>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::domain("simplex must have at least one entry"));
        }
        if values.iter().any(|v| !v.is_finite() || *v < T::zero()) {
            return Err(Error::domain("simplex entries must be finite and non-negative"));
        }
        let sum: T = values.iter().copied().sum();
        if (sum - T::one()).abs() > T::simplex_tol() {
            return Err(Error::domain(format!("simplex entries sum to {sum}, not 1")));
        }
        Ok(Simplex(values))
    }

    pub fn uniform(k: usize) -> Self {
        assert!(k > 0, "uniform simplex needs k >= 1");
        Simplex(vec![T::one() / T::from_usize_lossy(k); k])
    }

    pub fn one_hot(k: usize, index: usize) -> Self {
        assert!(index < k, "one-hot index {index} out of range for k = {k}");
        let mut v = vec![T::zero(); k];
        v[index] = T::one();
        Simplex(v)
    }

    /// Wraps a vector known to be normalized (e.g. a softmax output).
    pub(crate) fn from_normalized(values: Vec<T>) -> Self {
        debug_assert!(Simplex::new(values.clone()).is_ok());
        Simplex(values)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<T> {
        self.0
    }

    /// Index of the largest entry, lowest index on ties.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }
}

impl<T> std::ops::Index<usize> for Simplex<T> {
    type Output = T;
    fn index(&self, i: usize) -> &T {
        &self.0[i]
    }
}

/// Vector of strictly positive reals (Dirichlet parameters).
#[derive(Debug, Clone, PartialEq)]
pub struct PositiveVector<T>(Vec<T>);

impl<T: Scalar> PositiveVector<T> {
    pub fn new(values: Vec<T>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::domain("positive vector must have at least one entry"));
        }
        if values.iter().any(|v| !(v.is_finite() && *v > T::zero())) {
            return Err(Error::domain("entries must be finite and strictly positive"));
        }
        Ok(PositiveVector(values))
    }

    pub fn symmetric(k: usize, value: T) -> Result<Self> {
        Self::new(vec![value; k])
    }

    pub(crate) fn from_positive(values: Vec<T>) -> Self {
        debug_assert!(values.iter().all(|v| *v > T::zero()));
        PositiveVector(values)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<T> {
        self.0
    }

    pub fn min(&self) -> T {
        self.0.iter().copied().fold(T::infinity(), T::min)
    }

    pub fn sum(&self) -> T {
        self.0.iter().copied().sum()
    }
}

impl<T> std::ops::Index<usize> for PositiveVector<T> {
    type Output = T;
    fn index(&self, i: usize) -> &T {
        &self.0[i]
    }
}

/// Lowest index of the maximum entry. NaN entries never win.
pub fn argmax<T: PartialOrd + Copy>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

fn check_positive<T: Scalar>(x: T, what: &str) -> Result<()> {
    if x.is_finite() && x > T::zero() {
        Ok(())
    } else {
        Err(Error::domain(format!(
            "{what} requires a finite positive argument, got {x}"
        )))
    }
}

// Upward recurrence threshold for the asymptotic expansions.
const ASYMPTOTIC_FROM: f64 = 6.0;

/// Digamma function ψ(x) = d/dx ln Γ(x) for x > 0.
pub fn digamma<T: Scalar>(x: T) -> Result<T> {
    check_positive(x, "digamma")?;
    Ok(digamma_unchecked(x))
}

pub(crate) fn digamma_unchecked<T: Scalar>(mut x: T) -> T {
    let threshold = T::lit(ASYMPTOTIC_FROM);
    let mut shift = T::zero();
    while x < threshold {
        shift += x.recip();
        x += T::one();
    }
    let inv = x.recip();
    let inv2 = inv * inv;
    // -Σ B_2n / (2n x^2n), n = 1..7
    let series = inv2
        * (T::lit(-1.0 / 12.0)
            + inv2
                * (T::lit(1.0 / 120.0)
                    + inv2
                        * (T::lit(-1.0 / 252.0)
                            + inv2
                                * (T::lit(1.0 / 240.0)
                                    + inv2
                                        * (T::lit(-1.0 / 132.0)
                                            + inv2
                                                * (T::lit(691.0 / 32760.0) + inv2 * T::lit(-1.0 / 12.0)))))));
    x.ln() - T::lit(0.5) * inv + series - shift
}

/// Trigamma function ψ'(x) for x > 0.
pub fn trigamma<T: Scalar>(x: T) -> Result<T> {
    check_positive(x, "trigamma")?;
    Ok(trigamma_unchecked(x))
}

pub(crate) fn trigamma_unchecked<T: Scalar>(mut x: T) -> T {
    let threshold = T::lit(ASYMPTOTIC_FROM);
    let mut shift = T::zero();
    while x < threshold {
        shift += (x * x).recip();
        x += T::one();
    }
    let inv = x.recip();
    let inv2 = inv * inv;
    // 1/x + 1/(2x^2) + Σ B_2n / x^(2n+1), n = 1..7
    let series = inv
        * inv2
        * (T::lit(1.0 / 6.0)
            + inv2
                * (T::lit(-1.0 / 30.0)
                    + inv2
                        * (T::lit(1.0 / 42.0)
                            + inv2
                                * (T::lit(-1.0 / 30.0)
                                    + inv2
                                        * (T::lit(5.0 / 66.0)
                                            + inv2
                                                * (T::lit(-691.0 / 2730.0) + inv2 * T::lit(7.0 / 6.0)))))));
    inv + T::lit(0.5) * inv2 + series + shift
}

// Lanczos approximation, g = 7, n = 9.
const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEF: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// ln Γ(x) for x > 0.
pub fn ln_gamma<T: Scalar>(x: T) -> Result<T> {
    check_positive(x, "ln_gamma")?;
    Ok(ln_gamma_unchecked(x))
}

fn ln_gamma_unchecked<T: Scalar>(x: T) -> T {
    if x < T::lit(0.5) {
        // Γ(x) = Γ(x + 1) / x
        return ln_gamma_unchecked(x + T::one()) - x.ln();
    }
    let z = x - T::one();
    let mut acc = T::lit(LANCZOS_COEF[0]);
    for (i, c) in LANCZOS_COEF.iter().enumerate().skip(1) {
        acc += T::lit(*c) / (z + T::from_usize_lossy(i));
    }
    let t = z + T::lit(LANCZOS_G + 0.5);
    T::lit(0.5) * (T::TAU()).ln() + (z + T::lit(0.5)) * t.ln() - t + acc.ln()
}

/// ln Σ exp(vᵢ), stable for large magnitudes. `-inf` entries contribute zero.
pub fn log_sum_exp<T: Scalar>(values: &[T]) -> Result<T> {
    if values.is_empty() {
        return Err(Error::contract("log_sum_exp of an empty array"));
    }
    if values.iter().any(|v| v.is_nan() || *v == T::infinity()) {
        return Err(Error::domain(
            "log_sum_exp requires entries that are finite or -inf",
        ));
    }
    Ok(log_sum_exp_unchecked(values))
}

pub(crate) fn log_sum_exp_unchecked<T: Scalar>(values: &[T]) -> T {
    let max = values.iter().copied().fold(T::neg_infinity(), T::max);
    if max == T::neg_infinity() {
        return max;
    }
    let sum: T = values.iter().map(|v| (*v - max).exp()).sum();
    max + sum.ln()
}

fn check_logits<T: Scalar>(values: &[T]) -> Result<()> {
    if values.is_empty() {
        return Err(Error::contract("softmax of an empty array"));
    }
    if values.iter().any(|v| v.is_nan() || *v == T::infinity()) {
        return Err(Error::domain(
            "softmax input must be finite (or -inf for impossible entries)",
        ));
    }
    if values.iter().all(|v| *v == T::neg_infinity()) {
        return Err(Error::Degenerate("every softmax input is -inf".into()));
    }
    Ok(())
}

/// Softmax onto the simplex. `-inf` entries are exact zeros.
pub fn softmax<T: Scalar>(values: &[T]) -> Result<Simplex<T>> {
    check_logits(values)?;
    let mut out = values.to_vec();
    softmax_in_place(&mut out);
    Ok(Simplex::from_normalized(out))
}

/// Elementwise log of [`softmax`].
pub fn log_softmax<T: Scalar>(values: &[T]) -> Result<Vec<T>> {
    check_logits(values)?;
    let mut out = values.to_vec();
    log_softmax_in_place(&mut out);
    Ok(out)
}

pub(crate) fn softmax_in_place<T: Scalar>(values: &mut [T]) {
    let max = values.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in values.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    let inv = sum.recip();
    for v in values.iter_mut() {
        *v *= inv;
    }
}

pub(crate) fn log_softmax_in_place<T: Scalar>(values: &mut [T]) {
    let lse = log_sum_exp_unchecked(values);
    for v in values.iter_mut() {
        *v -= lse;
    }
}

/// E[ln π] under Dir(α̂): ψ(α̂ₖ) − ψ(Σⱼ α̂ⱼ).
pub fn expected_log_pi<T: Scalar>(alpha_hat: &PositiveVector<T>) -> Vec<T> {
    expected_log_pi_unchecked(alpha_hat.as_slice())
}

/// [`expected_log_pi`] for a raw slice, validating positivity.
pub fn expected_log_pi_slice<T: Scalar>(alpha_hat: &[T]) -> Result<Vec<T>> {
    for a in alpha_hat {
        check_positive(*a, "expected_log_pi")?;
    }
    Ok(expected_log_pi_unchecked(alpha_hat))
}

pub(crate) fn expected_log_pi_unchecked<T: Scalar>(alpha_hat: &[T]) -> Vec<T> {
    let total = digamma_unchecked(alpha_hat.iter().copied().sum::<T>());
    alpha_hat.iter().map(|a| digamma_unchecked(*a) - total).collect()
}

/// ln B(α) = Σ ln Γ(αₖ) − ln Γ(Σ αₖ).
pub fn ln_multivariate_beta<T: Scalar>(alpha: &PositiveVector<T>) -> T {
    let a = alpha.as_slice();
    a.iter().map(|x| ln_gamma_unchecked(*x)).sum::<T>() - ln_gamma_unchecked(alpha.sum())
}

/// Entropy of Dir(α).
pub fn dirichlet_entropy<T: Scalar>(alpha: &PositiveVector<T>) -> T {
    let elog = expected_log_pi(alpha);
    ln_multivariate_beta(alpha)
        - alpha
            .as_slice()
            .iter()
            .zip(&elog)
            .map(|(a, e)| (*a - T::one()) * *e)
            .sum::<T>()
}

/// Entropy of a categorical distribution, with 0 ln 0 = 0.
pub fn categorical_entropy<T: Scalar>(p: &[T]) -> T {
    -p.iter()
        .filter(|x| **x > T::zero())
        .map(|x| *x * x.ln())
        .sum::<T>()
}

/// Seeded, counter-based random stream (ChaCha20).
///
/// The same seed yields the same stream on every platform. Independent
/// sub-streams for parallel work come from [`SeededRng::fork`].
#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha20Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        SeededRng {
            seed,
            inner: ChaCha20Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent stream `stream` derived from the original seed. Does not
    /// depend on how much of `self` has been consumed.
    pub fn fork(&self, stream: u64) -> SeededRng {
        let mut inner = ChaCha20Rng::seed_from_u64(self.seed);
        inner.set_stream(stream.wrapping_add(1));
        SeededRng {
            seed: self.seed,
            inner,
        }
    }

    /// Uniform draw in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform index in [0, n).
    pub fn index(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    /// Standard normal draw.
    pub fn normal(&mut self) -> f64 {
        rand_distr::StandardNormal.sample(&mut self.inner)
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<V>(&mut self, values: &mut [V]) {
        for i in (1..values.len()).rev() {
            let j = self.index(i + 1);
            values.swap(i, j);
        }
    }
}

impl RngCore for SeededRng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// Draws π ~ Dir(α).
///
/// Gamma variates are drawn in log space (`G(a) = G(a + 1) · U^(1/a)` for
/// a < 1) so that small concentrations never underflow to an all-zero draw.
pub fn sample_dirichlet<T: Scalar>(alpha: &PositiveVector<T>, rng: &mut SeededRng) -> Simplex<T> {
    let mut logs: Vec<f64> = alpha
        .as_slice()
        .iter()
        .map(|a| {
            let a = a.as_f64();
            if a < 1.0 {
                let g = Gamma::new(a + 1.0, 1.0).expect("valid gamma shape").sample(rng);
                let u = 1.0 - rng.uniform(); // (0, 1]
                g.ln() + u.ln() / a
            } else {
                let g: f64 = Gamma::new(a, 1.0).expect("valid gamma shape").sample(rng);
                g.ln()
            }
        })
        .collect();
    softmax_in_place(&mut logs);
    Simplex::from_normalized(logs.into_iter().map(T::lit).collect())
}

/// Draws an index from a categorical distribution.
pub fn sample_categorical<T: Scalar>(p: &Simplex<T>, rng: &mut SeededRng) -> usize {
    sample_categorical_slice(p.as_slice(), rng)
}

/// Draws from unnormalized non-negative weights. Falls back to the last
/// positive entry when rounding leaves the cumulative sum short of `u`.
pub(crate) fn sample_categorical_slice<T: Scalar>(weights: &[T], rng: &mut SeededRng) -> usize {
    let total: f64 = weights.iter().map(|w| w.as_f64()).sum();
    let u = rng.uniform() * total;
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, w) in weights.iter().enumerate() {
        let w = w.as_f64();
        if w > 0.0 {
            acc += w;
            last_positive = i;
            if u < acc {
                return i;
            }
        }
    }
    last_positive
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    #[test]
    fn digamma_golden_values() {
        assert_close(digamma(1.0).unwrap(), -0.577_215_664_901_532_9, 1e-10);
        assert_close(digamma(0.5).unwrap(), -1.963_510_026_021_423_5, 1e-10);
        assert_close(digamma(4.0).unwrap() - digamma(3.0).unwrap(), 1.0 / 3.0, 1e-12);
    }

    #[test]
    fn trigamma_golden_values() {
        assert_close(trigamma(1.0).unwrap(), std::f64::consts::PI.powi(2) / 6.0, 1e-10);
        assert_close(trigamma(10.0).unwrap(), 0.105_166_335_681_685_75, 1e-10);
        assert_close(trigamma(3.0).unwrap() - trigamma(2.0).unwrap(), -0.25, 1e-12);
    }

    #[test]
    fn polygamma_domain_errors() {
        for bad in [0.0, -1.0, f64::NAN, f64::INFINITY] {
            assert!(matches!(digamma(bad), Err(Error::Domain(_))));
            assert!(matches!(trigamma(bad), Err(Error::Domain(_))));
        }
    }

    #[test]
    fn single_precision_digamma() {
        assert!((digamma(1.0f32).unwrap() + 0.577_215_7).abs() < 1e-5);
    }

    #[test]
    fn log_sum_exp_cases() {
        assert_close(log_sum_exp(&[0.0, 0.0]).unwrap(), 2f64.ln(), 1e-15);
        assert_close(log_sum_exp(&[1000.0, 1000.0]).unwrap(), 1000.0 + 2f64.ln(), 1e-12);
        assert_close(log_sum_exp(&[-1e6, -1e6]).unwrap(), -1e6 + 2f64.ln(), 1e-9);
        assert_eq!(log_sum_exp(&[-3.25]).unwrap(), -3.25);
        assert!(matches!(log_sum_exp::<f64>(&[]), Err(Error::Contract(_))));
    }

    #[test]
    fn softmax_cases() {
        let s = softmax(&[0.0, 0.0, 0.0]).unwrap();
        for v in s.as_slice() {
            assert_close(*v, 1.0 / 3.0, 1e-15);
        }
        let s = softmax(&[1f64.ln(), 2f64.ln(), 3f64.ln()]).unwrap();
        for (v, e) in s.as_slice().iter().zip([1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0]) {
            assert_close(*v, e, 1e-15);
        }
        assert!(softmax(&[f64::NAN, 0.0]).is_err());
        assert!(softmax(&[f64::INFINITY, 0.0]).is_err());
        let s = softmax(&[f64::NEG_INFINITY, 0.0]).unwrap();
        assert_eq!(s.as_slice(), &[0.0, 1.0]);
    }

    #[test]
    fn expected_log_pi_cases() {
        let e = expected_log_pi(&PositiveVector::new(vec![1.0, 1.0]).unwrap());
        assert_close(e[0], -1.0, 1e-12);
        assert_close(e[1], -1.0, 1e-12);
        let e = expected_log_pi(&PositiveVector::new(vec![2.0, 2.0]).unwrap());
        assert_close(e[0], -5.0 / 6.0, 1e-12);
        let e = expected_log_pi(&PositiveVector::new(vec![0.7; 3]).unwrap());
        assert_eq!(e[0], e[1]);
        assert_eq!(e[1], e[2]);
        assert!(expected_log_pi_slice(&[1.0, 0.0]).is_err());
    }

    #[test]
    fn ln_beta_cases() {
        let b = |v: Vec<f64>| ln_multivariate_beta(&PositiveVector::new(v).unwrap());
        assert_close(b(vec![1.0, 1.0]), 0.0, 1e-13);
        assert_close(b(vec![2.0, 1.0]), -(2f64.ln()), 1e-13);
        assert_close(b(vec![0.3, 2.5, 7.0]), b(vec![7.0, 0.3, 2.5]), 1e-12);
    }

    #[test]
    fn ln_gamma_matches_factorials() {
        let mut fact = 1.0f64;
        for n in 1..20 {
            assert_close(ln_gamma(n as f64).unwrap(), fact.ln(), 1e-12 * fact.ln().max(1.0));
            fact *= n as f64;
        }
        assert_close(ln_gamma(0.5).unwrap(), std::f64::consts::PI.sqrt().ln(), 1e-13);
    }

    #[test]
    fn dirichlet_entropy_uniform() {
        // Dir(1,1,1) is uniform on the 2-simplex of area 1/2! -> entropy ln(1/2).
        let h = dirichlet_entropy(&PositiveVector::new(vec![1.0; 3]).unwrap());
        assert_close(h, -(2f64.ln()), 1e-12);
    }

    #[test]
    fn sampling_is_deterministic() {
        let alpha = PositiveVector::new(vec![0.1, 0.5, 2.0]).unwrap();
        let a: Vec<_> = (0..5)
            .scan(SeededRng::new(9), |r, _| Some(sample_dirichlet(&alpha, r)))
            .collect();
        let b: Vec<_> = (0..5)
            .scan(SeededRng::new(9), |r, _| Some(sample_dirichlet(&alpha, r)))
            .collect();
        assert_eq!(a, b);
        let p = Simplex::new(vec![0.2, 0.3, 0.5]).unwrap();
        let mut r1 = SeededRng::new(4);
        let mut r2 = SeededRng::new(4);
        for _ in 0..100 {
            assert_eq!(sample_categorical(&p, &mut r1), sample_categorical(&p, &mut r2));
        }
    }

    #[test]
    fn tiny_alpha_never_degenerates() {
        let alpha = PositiveVector::new(vec![1e-3; 4]).unwrap();
        let mut rng = SeededRng::new(1);
        for _ in 0..1000 {
            let s = sample_dirichlet(&alpha, &mut rng);
            assert!(Simplex::new(s.into_vec()).is_ok());
        }
    }

    #[test]
    fn one_hot_categorical() {
        let p = Simplex::<f64>::one_hot(4, 2);
        let mut rng = SeededRng::new(0);
        assert!((0..1000).all(|_| sample_categorical(&p, &mut rng) == 2));
    }

    #[test]
    fn fork_is_independent_of_consumption() {
        let mut a = SeededRng::new(5);
        let b = SeededRng::new(5);
        a.uniform();
        assert_eq!(a.fork(3).uniform(), b.fork(3).uniform());
        assert_ne!(b.fork(3).uniform(), b.fork(4).uniform());
    }

    #[test]
    fn simplex_validation() {
        assert!(Simplex::new(vec![0.5, 0.5]).is_ok());
        assert!(Simplex::new(vec![0.5, 0.6]).is_err());
        assert!(Simplex::new(vec![-0.1, 1.1]).is_err());
        assert!(Simplex::<f64>::new(vec![]).is_err());
        assert!(PositiveVector::new(vec![1.0, 0.0]).is_err());
    }
}
