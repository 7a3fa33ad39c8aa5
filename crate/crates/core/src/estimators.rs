//! Single-example stochastic gradient estimates of `∂ log P(x) / ∂θ`.
//!
//! Every estimate is `positive statistic - negative statistic`, where both
//! statistics are Rao-Blackwellised: the visible particle is binary but the
//! hidden side enters through `P(h | x)` instead of a final binary sample.
//! Inside the chains hidden units are always sampled.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rbm::{hidden_conditional, BinaryState, BinaryVisible, GibbsScratch, RbmParams};

/// Chain length of the long-chain reference estimator.
pub const DEFAULT_BASELINE_STEPS: usize = 1000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Negative chain of k steps started at the positive particle.
    Cd,
    /// Persistent negative chain advanced one step per estimate.
    Pcd,
    /// Negative chain of k steps started at an independent training example.
    Icd,
    /// CD with a long chain, treated as near-exact model sampling.
    Baseline,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Cd => "cd",
            Strategy::Pcd => "pcd",
            Strategy::Icd => "icd",
            Strategy::Baseline => "baseline",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "cd" => Ok(Strategy::Cd),
            "pcd" => Ok(Strategy::Pcd),
            "icd" | "i-cd" => Ok(Strategy::Icd),
            "baseline" => Ok(Strategy::Baseline),
            other => Err(Error::InvalidConfig(format!("unknown strategy {other:?}"))),
        }
    }
}

/// One stochastic gradient estimate for a single positive and a single
/// negative particle.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientEstimate {
    dw: Array2<f64>,
    db: Array1<f64>,
    dc: Array1<f64>,
    strategy: Strategy,
    k_used: usize,
}

impl GradientEstimate {
    /// Builds `dW = x_pos · hp_posᵀ - x_neg · hp_negᵀ` and the matching bias
    /// gradients. The statistics are never stored separately, so the
    /// difference invariant holds by construction.
    pub(crate) fn from_particles(
        x_pos: &[u8],
        hp_pos: &[f64],
        x_neg: &[u8],
        hp_neg: &[f64],
        strategy: Strategy,
        k_used: usize,
    ) -> Self {
        let (n_v, n_h) = (x_pos.len(), hp_pos.len());
        let mut dw = Array2::<f64>::zeros((n_v, n_h));
        {
            let flat = dw.as_slice_mut().expect("standard layout");
            for (i, row) in flat.chunks_exact_mut(n_h).enumerate() {
                match (x_pos[i], x_neg[i]) {
                    (1, 1) => {
                        for ((d, &a), &b) in row.iter_mut().zip(hp_pos).zip(hp_neg) {
                            *d = a - b;
                        }
                    }
                    (1, 0) => row.copy_from_slice(hp_pos),
                    (0, 1) => {
                        for (d, &b) in row.iter_mut().zip(hp_neg) {
                            *d = -b;
                        }
                    }
                    _ => {}
                }
            }
        }
        let db = x_pos
            .iter()
            .zip(x_neg)
            .map(|(&a, &b)| f64::from(a) - f64::from(b))
            .collect();
        let dc = hp_pos.iter().zip(hp_neg).map(|(a, b)| a - b).collect();
        GradientEstimate {
            dw,
            db,
            dc,
            strategy,
            k_used,
        }
    }

    pub fn dw(&self) -> &Array2<f64> {
        &self.dw
    }

    pub fn db(&self) -> &Array1<f64> {
        &self.db
    }

    pub fn dc(&self) -> &Array1<f64> {
        &self.dc
    }

    pub fn strategy(&self) -> Strategy {
        self.strategy
    }

    pub fn k_used(&self) -> usize {
        self.k_used
    }

    pub fn into_dw(self) -> Array2<f64> {
        self.dw
    }
}

/// Persistent negative particles carried between PCD estimates.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PcdChainState {
    pub negatives: Vec<BinaryVisible>,
    pub steps_taken: usize,
}

impl PcdChainState {
    pub fn new(negatives: Vec<BinaryVisible>) -> Result<Self> {
        if negatives.is_empty() {
            return Err(Error::InvalidConfig(
                "a PCD chain needs at least one particle".into(),
            ));
        }
        let n = negatives[0].len();
        if let Some(bad) = negatives.iter().find(|x| x.len() != n) {
            return Err(Error::DimensionMismatch {
                what: "persistent particle",
                expected: n,
                found: bad.len(),
            });
        }
        Ok(PcdChainState {
            negatives,
            steps_taken: 0,
        })
    }

    /// Index of the particle the next estimate advances.
    pub fn next_particle(&self) -> usize {
        self.steps_taken % self.negatives.len()
    }
}

/// Reusable buffers for estimators called in tight loops.
pub(crate) struct EstimatorScratch {
    gibbs: GibbsScratch,
    hp_pos: Vec<f64>,
    chain: Vec<u8>,
}

impl EstimatorScratch {
    pub(crate) fn new(p: &RbmParams) -> Self {
        EstimatorScratch {
            gibbs: GibbsScratch::new(p),
            hp_pos: vec![0.0; p.n_hidden()],
            chain: vec![0; p.n_visible()],
        }
    }

    /// Runs `k` Gibbs steps from `x_start` and forms the estimate against
    /// the positive particle `x_pos`.
    pub(crate) fn chain_estimate<R: Rng + ?Sized>(
        &mut self,
        p: &RbmParams,
        x_pos: &[u8],
        x_start: &[u8],
        k: usize,
        strategy: Strategy,
        rng: &mut R,
    ) -> GradientEstimate {
        self.chain.copy_from_slice(x_start);
        for _ in 0..k {
            self.gibbs.step(p, &mut self.chain, rng);
        }
        self.particle_estimate(p, x_pos, strategy, k)
    }

    /// Estimate with the negative particle already in `self.chain`.
    fn particle_estimate(
        &mut self,
        p: &RbmParams,
        x_pos: &[u8],
        strategy: Strategy,
        k: usize,
    ) -> GradientEstimate {
        let hp = self.gibbs.hidden_probs(p, x_pos);
        self.hp_pos.copy_from_slice(hp);
        let hn = self.gibbs.hidden_probs(p, &self.chain);
        GradientEstimate::from_particles(x_pos, &self.hp_pos, &self.chain, hn, strategy, k)
    }

    /// Advances `particle` by one Gibbs step and estimates against it.
    pub(crate) fn persistent_estimate<R: Rng + ?Sized>(
        &mut self,
        p: &RbmParams,
        x_pos: &[u8],
        particle: &mut [u8],
        rng: &mut R,
    ) -> GradientEstimate {
        self.gibbs.step(p, particle, rng);
        self.chain.copy_from_slice(particle);
        self.particle_estimate(p, x_pos, Strategy::Pcd, 1)
    }

    pub(crate) fn burn_in<R: Rng + ?Sized>(
        &mut self,
        p: &RbmParams,
        particle: &mut [u8],
        steps: usize,
        rng: &mut R,
    ) {
        for _ in 0..steps {
            self.gibbs.step(p, particle, rng);
        }
    }
}

/// `x · P(h | x)ᵀ`. Uses no randomness.
pub fn positive_statistic(x: &BinaryVisible, p: &RbmParams) -> Result<Array2<f64>> {
    let hp = hidden_conditional(x, p)?;
    let mut stat = Array2::<f64>::zeros((p.n_visible(), p.n_hidden()));
    for i in x.active() {
        stat.row_mut(i).assign(&hp);
    }
    Ok(stat)
}

/// Same statistic as [`positive_statistic`], applied to a negative particle.
pub fn negative_statistic(x_neg: &BinaryVisible, p: &RbmParams) -> Result<Array2<f64>> {
    positive_statistic(x_neg, p)
}

fn check_k(k: usize) -> Result<()> {
    if k == 0 {
        Err(Error::InvalidSteps(k))
    } else {
        Ok(())
    }
}

/// CD-k: the negative particle is `k` Gibbs steps from `x`.
pub fn cd_k_estimate<R: Rng + ?Sized>(
    x: &BinaryVisible,
    k: usize,
    p: &RbmParams,
    rng: &mut R,
) -> Result<GradientEstimate> {
    check_k(k)?;
    p.check_visible(x)?;
    let mut scratch = EstimatorScratch::new(p);
    Ok(scratch.chain_estimate(p, x.as_slice(), x.as_slice(), k, Strategy::Cd, rng))
}

/// Long-chain reference estimate. Identical draws to `cd_k_estimate` with
/// `k = k_baseline`, tagged [`Strategy::Baseline`].
pub fn baseline_estimate<R: Rng + ?Sized>(
    x: &BinaryVisible,
    k_baseline: usize,
    p: &RbmParams,
    rng: &mut R,
) -> Result<GradientEstimate> {
    check_k(k_baseline)?;
    p.check_visible(x)?;
    let mut scratch = EstimatorScratch::new(p);
    Ok(scratch.chain_estimate(
        p,
        x.as_slice(),
        x.as_slice(),
        k_baseline,
        Strategy::Baseline,
        rng,
    ))
}

/// I-CD-k: positive statistic from `x_pos`, negative chain of `k` steps from
/// an independently chosen `x_start`.
pub fn icd_k_estimate<R: Rng + ?Sized>(
    x_pos: &BinaryVisible,
    x_start: &BinaryVisible,
    k: usize,
    p: &RbmParams,
    rng: &mut R,
) -> Result<GradientEstimate> {
    check_k(k)?;
    p.check_visible(x_pos)?;
    p.check_visible(x_start)?;
    let mut scratch = EstimatorScratch::new(p);
    Ok(scratch.chain_estimate(
        p,
        x_pos.as_slice(),
        x_start.as_slice(),
        k,
        Strategy::Icd,
        rng,
    ))
}

/// Advances one persistent particle by a single Gibbs step and uses it as the
/// negative particle. Returns the estimate and the advanced state.
pub fn pcd_estimate<R: Rng + ?Sized>(
    x_pos: &BinaryVisible,
    state: PcdChainState,
    p: &RbmParams,
    rng: &mut R,
) -> Result<(GradientEstimate, PcdChainState)> {
    p.check_visible(x_pos)?;
    let mut state = state;
    if state.negatives.is_empty() {
        return Err(Error::InvalidConfig(
            "a PCD chain needs at least one particle".into(),
        ));
    }
    let slot = state.next_particle();
    p.check_visible(&state.negatives[slot])?;
    let mut particle =
        std::mem::replace(&mut state.negatives[slot], BinaryState::zeros(0)).into_inner();
    let mut scratch = EstimatorScratch::new(p);
    let estimate = scratch.persistent_estimate(p, x_pos.as_slice(), &mut particle, rng);
    state.negatives[slot] = BinaryState::from_raw(particle);
    state.steps_taken += 1;
    Ok((estimate, state))
}

/// Starts a single-particle persistent chain `burn_in` Gibbs steps from
/// `x_seed`.
pub fn init_pcd_chain<R: Rng + ?Sized>(
    x_seed: &BinaryVisible,
    burn_in: usize,
    p: &RbmParams,
    rng: &mut R,
) -> Result<PcdChainState> {
    p.check_visible(x_seed)?;
    let mut particle = x_seed.as_slice().to_vec();
    EstimatorScratch::new(p).burn_in(p, &mut particle, burn_in, rng);
    Ok(PcdChainState {
        negatives: vec![BinaryState::from_raw(particle)],
        steps_taken: burn_in,
    })
}
