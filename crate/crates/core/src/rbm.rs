//! Binary restricted Boltzmann machine: parameters, conditionals, block Gibbs
//! sampling and exact enumeration for small models.
//!
//! Energy of a joint state is `E(x, h) = -(bᵀx + cᵀh + xᵀWh)` with `W` stored
//! row-major as `n_v × n_h`. A transposed copy of `W` is kept alongside so
//! both conditionals walk contiguous memory.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;

use crate::error::{Error, Result};

/// Default cap on the number of units on the enumerated side (2^20 states).
pub const DEFAULT_ENUMERATION_LIMIT: usize = 20;

/// Conditional activation probabilities of the hidden layer.
pub type HiddenProbs = Array1<f64>;
/// Conditional activation probabilities of the visible layer.
pub type VisibleProbs = Array1<f64>;

/// A vector of binary unit states, stored as bytes that are exactly 0 or 1.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BinaryState(Vec<u8>);

/// Visible configuration `x`.
pub type BinaryVisible = BinaryState;
/// Hidden configuration `h`.
pub type BinaryHidden = BinaryState;

impl BinaryState {
    pub fn new(bits: Vec<u8>) -> Result<Self> {
        if let Some((index, &value)) = bits.iter().enumerate().find(|(_, &b)| b > 1) {
            return Err(Error::NotBinary { index, value });
        }
        Ok(BinaryState(bits))
    }

    pub fn zeros(len: usize) -> Self {
        BinaryState(vec![0; len])
    }

    pub fn ones(len: usize) -> Self {
        BinaryState(vec![1; len])
    }

    /// Bits of `code`, least significant first.
    pub fn from_code(code: u64, len: usize) -> Self {
        BinaryState((0..len).map(|i| ((code >> i) & 1) as u8).collect())
    }

    /// Caller guarantees every entry is 0 or 1.
    pub(crate) fn from_raw(bits: Vec<u8>) -> Self {
        debug_assert!(bits.iter().all(|&b| b <= 1));
        BinaryState(bits)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<u8> {
        self.0
    }

    /// Indices of the units that are on.
    pub fn active(&self) -> impl Iterator<Item = usize> + '_ {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, &b)| b == 1)
            .map(|(i, _)| i)
    }

    pub fn to_f64(&self) -> Array1<f64> {
        self.0.iter().map(|&b| f64::from(b)).collect()
    }
}

/// RBM parameters `θ = {W, b, c}`.
#[derive(Clone, Debug, PartialEq)]
pub struct RbmParams {
    weights: Array2<f64>,
    weights_t: Array2<f64>,
    visible_bias: Array1<f64>,
    hidden_bias: Array1<f64>,
}

impl RbmParams {
    pub fn new(
        weights: Array2<f64>,
        visible_bias: Array1<f64>,
        hidden_bias: Array1<f64>,
    ) -> Result<Self> {
        let (n_v, n_h) = weights.dim();
        check_len("visible bias", n_v, visible_bias.len())?;
        check_len("hidden bias", n_h, hidden_bias.len())?;
        if !weights.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("weights"));
        }
        if !visible_bias.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("visible bias"));
        }
        if !hidden_bias.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("hidden bias"));
        }
        let weights = weights.as_standard_layout().into_owned();
        let weights_t = weights.t().as_standard_layout().into_owned();
        Ok(RbmParams {
            weights,
            weights_t,
            visible_bias,
            hidden_bias,
        })
    }

    pub fn zeros(n_v: usize, n_h: usize) -> Self {
        RbmParams {
            weights: Array2::zeros((n_v, n_h)),
            weights_t: Array2::zeros((n_h, n_v)),
            visible_bias: Array1::zeros(n_v),
            hidden_bias: Array1::zeros(n_h),
        }
    }

    pub fn n_visible(&self) -> usize {
        self.weights.nrows()
    }

    pub fn n_hidden(&self) -> usize {
        self.weights.ncols()
    }

    pub fn weights(&self) -> ArrayView2<'_, f64> {
        self.weights.view()
    }

    pub fn visible_bias(&self) -> ArrayView1<'_, f64> {
        self.visible_bias.view()
    }

    pub fn hidden_bias(&self) -> ArrayView1<'_, f64> {
        self.hidden_bias.view()
    }

    /// `θ ← θ + rate · (dW, db, dc)`.
    pub fn add_scaled(
        &mut self,
        rate: f64,
        dw: &Array2<f64>,
        db: &Array1<f64>,
        dc: &Array1<f64>,
    ) -> Result<()> {
        if dw.dim() != self.weights.dim() {
            return Err(Error::DimensionMismatch {
                what: "weight update",
                expected: self.weights.len(),
                found: dw.len(),
            });
        }
        check_len("visible bias update", self.n_visible(), db.len())?;
        check_len("hidden bias update", self.n_hidden(), dc.len())?;
        self.weights.scaled_add(rate, dw);
        self.weights_t.scaled_add(rate, &dw.t());
        self.visible_bias.scaled_add(rate, db);
        self.hidden_bias.scaled_add(rate, dc);
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|v| v.is_finite())
            && self.visible_bias.iter().all(|v| v.is_finite())
            && self.hidden_bias.iter().all(|v| v.is_finite())
    }

    /// FNV-1a over the bit patterns of all parameters; used to assert that
    /// read-only code paths leave a model untouched.
    pub fn checksum(&self) -> u64 {
        let mut hash = 0xcbf2_9ce4_8422_2325u64;
        let values = self
            .visible_bias
            .iter()
            .chain(self.hidden_bias.iter())
            .chain(self.weights.iter());
        for v in values {
            for byte in v.to_bits().to_le_bytes() {
                hash ^= u64::from(byte);
                hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        hash
    }

    pub(crate) fn check_visible(&self, x: &BinaryVisible) -> Result<()> {
        check_len("visible state", self.n_visible(), x.len())
    }

    pub(crate) fn check_hidden(&self, h: &BinaryHidden) -> Result<()> {
        check_len("hidden state", self.n_hidden(), h.len())
    }

    /// `out = c + Wᵀx`, summing only rows of active visible units.
    pub(crate) fn hidden_activation_into(&self, x: &[u8], out: &mut [f64]) {
        out.copy_from_slice(self.hidden_bias.as_slice().expect("contiguous"));
        let w = self.weights.as_slice().expect("standard layout");
        let n_h = self.n_hidden();
        for (i, _) in x.iter().enumerate().filter(|(_, &b)| b == 1) {
            let row = &w[i * n_h..(i + 1) * n_h];
            for (o, &wij) in out.iter_mut().zip(row) {
                *o += wij;
            }
        }
    }

    /// `out = b + Wh`, summing only columns of active hidden units.
    pub(crate) fn visible_activation_into(&self, h: &[u8], out: &mut [f64]) {
        out.copy_from_slice(self.visible_bias.as_slice().expect("contiguous"));
        let wt = self.weights_t.as_slice().expect("standard layout");
        let n_v = self.n_visible();
        for (j, _) in h.iter().enumerate().filter(|(_, &b)| b == 1) {
            let row = &wt[j * n_v..(j + 1) * n_v];
            for (o, &wij) in out.iter_mut().zip(row) {
                *o += wij;
            }
        }
    }
}

fn check_len(what: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            what,
            expected,
            found,
        })
    }
}

#[inline]
pub fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// `ln(1 + e^z)` without overflow for large `|z|`.
#[inline]
pub fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub fn energy(x: &BinaryVisible, h: &BinaryHidden, p: &RbmParams) -> Result<f64> {
    p.check_visible(x)?;
    p.check_hidden(h)?;
    let mut hidden_input = vec![0.0; p.n_hidden()];
    p.hidden_activation_into(x.as_slice(), &mut hidden_input);
    // hidden_input = c + Wᵀx, so cᵀh + xᵀWh = Σ_j h_j · hidden_input_j.
    let coupled: f64 = h.active().map(|j| hidden_input[j]).sum();
    let visible: f64 = x.active().map(|i| p.visible_bias[i]).sum();
    Ok(-(visible + coupled))
}

/// `P(h_j = 1 | x) = σ(c_j + Σ_i W_ij x_i)`.
pub fn hidden_conditional(x: &BinaryVisible, p: &RbmParams) -> Result<HiddenProbs> {
    p.check_visible(x)?;
    let mut out = vec![0.0; p.n_hidden()];
    p.hidden_activation_into(x.as_slice(), &mut out);
    out.iter_mut().for_each(|v| *v = logistic(*v));
    Ok(Array1::from(out))
}

/// `P(x_i = 1 | h) = σ(b_i + Σ_j W_ij h_j)`.
pub fn visible_conditional(h: &BinaryHidden, p: &RbmParams) -> Result<VisibleProbs> {
    p.check_hidden(h)?;
    let mut out = vec![0.0; p.n_visible()];
    p.visible_activation_into(h.as_slice(), &mut out);
    out.iter_mut().for_each(|v| *v = logistic(*v));
    Ok(Array1::from(out))
}

/// Reusable buffers for running block Gibbs chains without allocating per
/// step.
pub(crate) struct GibbsScratch {
    hidden_input: Vec<f64>,
    visible_input: Vec<f64>,
    hidden: Vec<u8>,
}

impl GibbsScratch {
    pub(crate) fn new(p: &RbmParams) -> Self {
        GibbsScratch {
            hidden_input: vec![0.0; p.n_hidden()],
            visible_input: vec![0.0; p.n_visible()],
            hidden: vec![0; p.n_hidden()],
        }
    }

    /// One hidden-then-visible sweep in place. Draws `n_h` uniforms for the
    /// hidden units in index order, then `n_v` for the visible units.
    pub(crate) fn step<R: Rng + ?Sized>(&mut self, p: &RbmParams, x: &mut [u8], rng: &mut R) {
        p.hidden_activation_into(x, &mut self.hidden_input);
        for (h, &a) in self.hidden.iter_mut().zip(&self.hidden_input) {
            *h = u8::from(rng.random::<f64>() < logistic(a));
        }
        p.visible_activation_into(&self.hidden, &mut self.visible_input);
        for (v, &a) in x.iter_mut().zip(&self.visible_input) {
            *v = u8::from(rng.random::<f64>() < logistic(a));
        }
    }

    /// Hidden probabilities of `x`, written into the scratch buffer.
    pub(crate) fn hidden_probs(&mut self, p: &RbmParams, x: &[u8]) -> &[f64] {
        p.hidden_activation_into(x, &mut self.hidden_input);
        self.hidden_input.iter_mut().for_each(|v| *v = logistic(*v));
        &self.hidden_input
    }
}

/// Samples `h ~ P(h | x)` then returns `x' ~ P(x | h)`.
pub fn gibbs_step<R: Rng + ?Sized>(
    x: &BinaryVisible,
    p: &RbmParams,
    rng: &mut R,
) -> Result<BinaryVisible> {
    p.check_visible(x)?;
    let mut next = x.as_slice().to_vec();
    GibbsScratch::new(p).step(p, &mut next, rng);
    Ok(BinaryState::from_raw(next))
}

/// `F(x) = bᵀx + Σ_j softplus(c_j + W_jᵀx) = log Σ_h exp(-E(x, h))`.
pub fn free_energy(x: &BinaryVisible, p: &RbmParams) -> Result<f64> {
    p.check_visible(x)?;
    let mut hidden_input = vec![0.0; p.n_hidden()];
    Ok(free_energy_raw(p, x.as_slice(), &mut hidden_input))
}

pub(crate) fn free_energy_raw(p: &RbmParams, x: &[u8], scratch: &mut [f64]) -> f64 {
    p.hidden_activation_into(x, scratch);
    let visible: f64 = x
        .iter()
        .zip(p.visible_bias.iter())
        .filter(|(&b, _)| b == 1)
        .map(|(_, &bias)| bias)
        .sum();
    visible + scratch.iter().map(|&a| softplus(a)).sum::<f64>()
}

/// Log of the unnormalized hidden marginal, `log Σ_x exp(-E(x, h))`.
fn hidden_free_energy_raw(p: &RbmParams, h: &[u8], scratch: &mut [f64]) -> f64 {
    p.visible_activation_into(h, scratch);
    let hidden: f64 = h
        .iter()
        .zip(p.hidden_bias.iter())
        .filter(|(&b, _)| b == 1)
        .map(|(_, &bias)| bias)
        .sum();
    hidden + scratch.iter().map(|&a| softplus(a)).sum::<f64>()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Side {
    Visible,
    Hidden,
}

fn enumeration_side(p: &RbmParams, limit: usize) -> Result<Side> {
    let (n_v, n_h) = (p.n_visible(), p.n_hidden());
    // Also bounded by the width of the state code.
    let limit = limit.min(40);
    if n_v <= n_h && n_v <= limit {
        Ok(Side::Visible)
    } else if n_h <= limit {
        Ok(Side::Hidden)
    } else if n_v <= limit {
        Ok(Side::Visible)
    } else {
        Err(Error::TooLargeToEnumerate { n_v, n_h, limit })
    }
}

/// Unnormalized log marginals of every configuration on the enumerated side.
fn log_marginals(p: &RbmParams, side: Side) -> Vec<f64> {
    let (n, other) = match side {
        Side::Visible => (p.n_visible(), p.n_hidden()),
        Side::Hidden => (p.n_hidden(), p.n_visible()),
    };
    let mut scratch = vec![0.0; other];
    let mut bits = vec![0u8; n];
    (0..1u64 << n)
        .map(|code| {
            fill_bits(code, &mut bits);
            match side {
                Side::Visible => free_energy_raw(p, &bits, &mut scratch),
                Side::Hidden => hidden_free_energy_raw(p, &bits, &mut scratch),
            }
        })
        .collect()
}

fn fill_bits(code: u64, bits: &mut [u8]) {
    for (i, b) in bits.iter_mut().enumerate() {
        *b = ((code >> i) & 1) as u8;
    }
}

pub fn exact_log_partition(p: &RbmParams) -> Result<f64> {
    exact_log_partition_with_limit(p, DEFAULT_ENUMERATION_LIMIT)
}

/// `log Z` by enumerating the smaller layer.
pub fn exact_log_partition_with_limit(p: &RbmParams, limit: usize) -> Result<f64> {
    let side = enumeration_side(p, limit)?;
    Ok(log_sum_exp(&log_marginals(p, side)))
}

pub fn exact_model_expectation(p: &RbmParams) -> Result<Array2<f64>> {
    exact_model_expectation_with_limit(p, DEFAULT_ENUMERATION_LIMIT)
}

/// `E_{p(x,h)}[x hᵀ]` computed exactly. When the visible side is enumerated
/// this is `Σ_x P(x) x σ(c + Wᵀx)ᵀ`; otherwise `Σ_h P(h) σ(b + Wh) hᵀ`.
pub fn exact_model_expectation_with_limit(p: &RbmParams, limit: usize) -> Result<Array2<f64>> {
    let side = enumeration_side(p, limit)?;
    let log_marg = log_marginals(p, side);
    let log_z = log_sum_exp(&log_marg);
    let (n_v, n_h) = (p.n_visible(), p.n_hidden());
    let mut expectation = Array2::<f64>::zeros((n_v, n_h));
    match side {
        Side::Visible => {
            let mut bits = vec![0u8; n_v];
            let mut probs = vec![0.0; n_h];
            for (code, lm) in log_marg.iter().enumerate() {
                fill_bits(code as u64, &mut bits);
                let weight = (lm - log_z).exp();
                p.hidden_activation_into(&bits, &mut probs);
                for (i, _) in bits.iter().enumerate().filter(|(_, &b)| b == 1) {
                    let mut row = expectation.row_mut(i);
                    for (e, &a) in row.iter_mut().zip(&probs) {
                        *e += weight * logistic(a);
                    }
                }
            }
        }
        Side::Hidden => {
            let mut bits = vec![0u8; n_h];
            let mut probs = vec![0.0; n_v];
            for (code, lm) in log_marg.iter().enumerate() {
                fill_bits(code as u64, &mut bits);
                let weight = (lm - log_z).exp();
                p.visible_activation_into(&bits, &mut probs);
                for (j, _) in bits.iter().enumerate().filter(|(_, &b)| b == 1) {
                    let mut col = expectation.column_mut(j);
                    for (e, &a) in col.iter_mut().zip(&probs) {
                        *e += weight * logistic(a);
                    }
                }
            }
        }
    }
    Ok(expectation)
}

/// `log P(x) = F(x) - log Z`.
pub fn exact_log_likelihood(x: &BinaryVisible, p: &RbmParams) -> Result<f64> {
    Ok(free_energy(x, p)? - exact_log_partition(p)?)
}

/// Exact marginal distribution over all `2^{n_v}` visible configurations,
/// indexed by [`BinaryState::from_code`] order. Requires `n_v` within `limit`.
pub fn exact_visible_distribution(p: &RbmParams, limit: usize) -> Result<Vec<f64>> {
    let n_v = p.n_visible();
    if n_v > limit.min(40) {
        return Err(Error::TooLargeToEnumerate {
            n_v,
            n_h: p.n_hidden(),
            limit,
        });
    }
    let log_marg = log_marginals(p, Side::Visible);
    let log_z = log_sum_exp(&log_marg);
    Ok(log_marg.iter().map(|lm| (lm - log_z).exp()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_from_seed;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn params(w: Array2<f64>, b: Array1<f64>, c: Array1<f64>) -> RbmParams {
        RbmParams::new(w, b, c).unwrap()
    }

    fn random_params(n_v: usize, n_h: usize, scale: f64, seed: u64) -> RbmParams {
        let mut rng = stream_from_seed(seed);
        let mut draw = || (rng.random::<f64>() - 0.5) * 2.0 * scale;
        let w = Array2::from_shape_fn((n_v, n_h), |_| draw());
        let b = Array1::from_shape_fn(n_v, |_| draw());
        let c = Array1::from_shape_fn(n_h, |_| draw());
        params(w, b, c)
    }

    /// log Σ_h exp(-E(x, h)) by brute force over every h.
    fn brute_free_energy(x: &BinaryVisible, p: &RbmParams) -> f64 {
        let terms: Vec<f64> = (0..1u64 << p.n_hidden())
            .map(|code| -energy(x, &BinaryState::from_code(code, p.n_hidden()), p).unwrap())
            .collect();
        log_sum_exp(&terms)
    }

    #[test]
    fn energy_examples() {
        let zero = RbmParams::zeros(3, 2);
        assert_eq!(
            energy(
                &BinaryState::ones(3),
                &BinaryState::new(vec![1, 0]).unwrap(),
                &zero
            )
            .unwrap(),
            0.0
        );

        let p = params(
            Array2::from_elem((2, 2), 0.5),
            Array1::zeros(2),
            Array1::zeros(2),
        );
        assert_eq!(
            energy(&BinaryState::ones(2), &BinaryState::ones(2), &p).unwrap(),
            -2.0
        );

        let p = params(array![[1.0]], array![2.0], array![3.0]);
        assert_eq!(
            energy(&BinaryState::ones(1), &BinaryState::ones(1), &p).unwrap(),
            -6.0
        );
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let p = RbmParams::zeros(3, 2);
        let err = energy(&BinaryState::ones(2), &BinaryState::ones(2), &p).unwrap_err();
        assert!(matches!(
            err,
            Error::DimensionMismatch {
                expected: 3,
                found: 2,
                ..
            }
        ));
        assert!(hidden_conditional(&BinaryState::ones(4), &p).is_err());
        assert!(visible_conditional(&BinaryState::ones(3), &p).is_err());
        assert!(free_energy(&BinaryState::ones(1), &p).is_err());
    }

    #[test]
    fn rejects_bad_construction() {
        assert!(BinaryState::new(vec![0, 2]).is_err());
        assert!(RbmParams::new(Array2::zeros((2, 3)), Array1::zeros(3), Array1::zeros(3)).is_err());
        assert!(RbmParams::new(array![[f64::NAN]], Array1::zeros(1), Array1::zeros(1)).is_err());
    }

    #[test]
    fn conditional_examples() {
        let zero = RbmParams::zeros(3, 4);
        assert!(hidden_conditional(&BinaryState::ones(3), &zero)
            .unwrap()
            .iter()
            .all(|&v| v == 0.5));
        assert!(visible_conditional(&BinaryState::ones(4), &zero)
            .unwrap()
            .iter()
            .all(|&v| v == 0.5));

        let p = params(
            Array2::zeros((2, 2)),
            array![-30.0, -30.0],
            array![30.0, 30.0],
        );
        for v in hidden_conditional(&BinaryState::zeros(2), &p).unwrap() {
            assert_abs_diff_eq!(v, 1.0, epsilon = 1e-9);
        }
        for v in visible_conditional(&BinaryState::zeros(2), &p).unwrap() {
            assert_abs_diff_eq!(v, 0.0, epsilon = 1e-9);
        }

        // σ(1) and σ(-1) from mpmath at 30 digits.
        let p = params(
            array![[1.0, 0.0], [0.0, 0.0]],
            Array1::zeros(2),
            Array1::zeros(2),
        );
        let hp = hidden_conditional(&BinaryState::new(vec![1, 0]).unwrap(), &p).unwrap();
        assert_abs_diff_eq!(hp[0], 0.731_058_578_630_004_9, epsilon = 1e-15);
        assert_eq!(hp[1], 0.5);
        let p = params(array![[-1.0]], array![0.0], array![0.0]);
        let vp = visible_conditional(&BinaryState::ones(1), &p).unwrap();
        assert_abs_diff_eq!(vp[0], 0.268_941_421_369_995_1, epsilon = 1e-15);
    }

    #[test]
    fn softplus_is_stable() {
        assert_eq!(softplus(1000.0), 1000.0);
        assert_eq!(softplus(-1000.0), 0.0);
        assert_abs_diff_eq!(softplus(0.0), std::f64::consts::LN_2, epsilon = 1e-16);
        assert_eq!(logistic(-1000.0), 0.0);
        assert_eq!(logistic(1000.0), 1.0);
    }

    #[test]
    fn gibbs_step_zero_params_is_uniform() {
        let p = RbmParams::zeros(5, 3);
        let mut rng = stream_from_seed(11);
        let mut counts = [0usize; 5];
        let mut x = BinaryState::zeros(5);
        for _ in 0..10_000 {
            x = gibbs_step(&x, &p, &mut rng).unwrap();
            for i in x.active() {
                counts[i] += 1;
            }
        }
        for c in counts {
            let mean = c as f64 / 10_000.0;
            assert!((0.48..=0.52).contains(&mean), "mean {mean}");
        }
    }

    #[test]
    fn gibbs_step_saturates_and_is_deterministic() {
        let p = params(
            Array2::zeros((4, 3)),
            Array1::from_elem(4, 30.0),
            Array1::zeros(3),
        );
        let mut rng = stream_from_seed(3);
        for _ in 0..100 {
            let x = gibbs_step(&BinaryState::zeros(4), &p, &mut rng).unwrap();
            assert_eq!(x, BinaryState::ones(4));
        }

        let p = random_params(6, 5, 1.0, 8);
        let x = BinaryState::new(vec![1, 0, 1, 1, 0, 0]).unwrap();
        let a = gibbs_step(&x, &p, &mut stream_from_seed(99)).unwrap();
        let b = gibbs_step(&x, &p, &mut stream_from_seed(99)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn gibbs_step_consumes_n_h_plus_n_v_draws() {
        let p = random_params(6, 4, 1.0, 1);
        let mut rng = stream_from_seed(5);
        gibbs_step(&BinaryState::zeros(6), &p, &mut rng).unwrap();
        let after_step: u64 = rng.random();
        let mut reference = stream_from_seed(5);
        for _ in 0..10 {
            let _: f64 = reference.random();
        }
        assert_eq!(after_step, reference.random::<u64>());
    }

    #[test]
    fn free_energy_examples() {
        let zero = RbmParams::zeros(2, 3);
        assert_abs_diff_eq!(
            free_energy(&BinaryState::ones(2), &zero).unwrap(),
            2.079_441_541_679_835_7,
            epsilon = 1e-12
        );
        let p = params(array![[0.0]], array![1.0], array![0.0]);
        assert_abs_diff_eq!(
            free_energy(&BinaryState::ones(1), &p).unwrap(),
            1.693_147_180_559_945_3,
            epsilon = 1e-12
        );
        for seed in 0..5 {
            let p = random_params(4, 5, 1.5, seed);
            for code in 0..16 {
                let x = BinaryState::from_code(code, 4);
                assert_abs_diff_eq!(
                    free_energy(&x, &p).unwrap(),
                    brute_free_energy(&x, &p),
                    epsilon = 1e-10
                );
            }
        }
    }

    #[test]
    fn log_partition_examples() {
        assert_abs_diff_eq!(
            exact_log_partition(&RbmParams::zeros(2, 3)).unwrap(),
            5.0 * std::f64::consts::LN_2,
            epsilon = 1e-12
        );
        let p = params(array![[1.0]], array![0.0], array![0.0]);
        // ln(3 + e)
        assert_abs_diff_eq!(
            exact_log_partition(&p).unwrap(),
            1.743_668_380_628_679_2,
            epsilon = 1e-12
        );

        let wide = RbmParams::zeros(1, 21);
        assert_abs_diff_eq!(
            exact_log_partition(&wide).unwrap(),
            22.0 * std::f64::consts::LN_2,
            epsilon = 1e-9
        );
        let big = RbmParams::zeros(21, 22);
        assert!(matches!(
            exact_log_partition(&big),
            Err(Error::TooLargeToEnumerate { .. })
        ));
        assert!(exact_model_expectation(&big).is_err());
    }

    #[test]
    fn log_partition_sides_agree() {
        for seed in 0..4 {
            let p = random_params(5, 7, 1.0, 100 + seed);
            let visible = exact_log_partition_with_limit(&p, 20).unwrap();
            // Forcing the larger side by lowering the limit below n_v.
            let q = params(
                p.weights().t().to_owned(),
                p.hidden_bias().to_owned(),
                p.visible_bias().to_owned(),
            );
            let hidden_side = exact_log_partition_with_limit(&q, 5).unwrap();
            assert_abs_diff_eq!(visible, hidden_side, epsilon = 1e-10);

            let e_v = exact_model_expectation_with_limit(&p, 20).unwrap();
            let e_h = exact_model_expectation_with_limit(&q, 5).unwrap();
            for (a, b) in e_v.iter().zip(e_h.t().iter()) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn model_expectation_examples() {
        let e = exact_model_expectation(&RbmParams::zeros(3, 2)).unwrap();
        for v in e.iter() {
            assert_abs_diff_eq!(*v, 0.25, epsilon = 1e-12);
        }
        let p = params(array![[1.0]], array![0.0], array![0.0]);
        let e = exact_model_expectation(&p).unwrap();
        // e / (3 + e)
        assert_abs_diff_eq!(e[[0, 0]], 0.475_366_886_418_671_7, epsilon = 1e-12);
    }

    #[test]
    fn model_expectation_matches_joint_enumeration() {
        let p = random_params(3, 4, 1.2, 17);
        let log_z = exact_log_partition(&p).unwrap();
        let mut oracle = Array2::<f64>::zeros((3, 4));
        for xc in 0..8 {
            let x = BinaryState::from_code(xc, 3);
            for hc in 0..16 {
                let h = BinaryState::from_code(hc, 4);
                let prob = (-energy(&x, &h, &p).unwrap() - log_z).exp();
                for i in x.active() {
                    for j in h.active() {
                        oracle[[i, j]] += prob;
                    }
                }
            }
        }
        let e = exact_model_expectation(&p).unwrap();
        for (a, b) in e.iter().zip(oracle.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn joint_normalizes_and_conditional_is_consistent() {
        let p = random_params(4, 3, 1.0, 23);
        let log_z = exact_log_partition(&p).unwrap();
        let mut total = 0.0;
        for xc in 0..16 {
            let x = BinaryState::from_code(xc, 4);
            let joint: Vec<f64> = (0..8)
                .map(|hc| (-energy(&x, &BinaryState::from_code(hc, 3), &p).unwrap() - log_z).exp())
                .collect();
            let marginal: f64 = joint.iter().sum();
            total += marginal;
            let probs = hidden_conditional(&x, &p).unwrap();
            for j in 0..3 {
                let on: f64 = (0..8u64)
                    .filter(|hc| (hc >> j) & 1 == 1)
                    .map(|hc| joint[hc as usize])
                    .sum();
                assert_abs_diff_eq!(on / marginal, probs[j], epsilon = 1e-10);
            }
        }
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-10);
    }

    #[test]
    fn log_likelihood_examples() {
        let zero = RbmParams::zeros(2, 2);
        for code in 0..4 {
            assert_abs_diff_eq!(
                exact_log_likelihood(&BinaryState::from_code(code, 2), &zero).unwrap(),
                -1.386_294_361_119_890_6,
                epsilon = 1e-12
            );
        }
        let p = random_params(5, 4, 2.0, 31);
        let total: f64 = (0..32)
            .map(|c| {
                exact_log_likelihood(&BinaryState::from_code(c, 5), &p)
                    .unwrap()
                    .exp()
            })
            .sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-10);
        let dist = exact_visible_distribution(&p, 20).unwrap();
        assert_abs_diff_eq!(dist.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn add_scaled_keeps_transpose_in_sync() {
        let mut p = random_params(3, 2, 1.0, 4);
        let dw = array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]];
        p.add_scaled(0.5, &dw, &Array1::zeros(3), &Array1::ones(2))
            .unwrap();
        let rebuilt = params(
            p.weights().to_owned(),
            p.visible_bias().to_owned(),
            p.hidden_bias().to_owned(),
        );
        assert_eq!(p, rebuilt);
        assert_ne!(p.checksum(), random_params(3, 2, 1.0, 4).checksum());
    }
}
