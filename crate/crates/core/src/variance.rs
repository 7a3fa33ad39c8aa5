//! Per-weight variance of single-example gradient estimates.
//!
//! For every strategy the measured quantity is the variance of each `dW_ij`
//! (unbiased, divisor `R - 1`) averaged over all weights, then averaged over
//! the profiled examples. Ratios are taken only after that averaging, one per
//! `(init, k)`. Bias gradients never enter.
//!
//! All randomness comes from [`StreamKey`]s: the protocol seed, the
//! checkpoint's init seed, the dataset index of the example (or the
//! mean-estimate index for PCD), the repeat and `k`. Any cell can be
//! recomputed on its own and the output does not depend on the thread count.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::Array2;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datasets::{binarize_into, Dataset};
use crate::error::{Error, Result};
use crate::estimators::{EstimatorScratch, GradientEstimate, Strategy};
use crate::rbm::RbmParams;
use crate::rng::{Domain, RngStream, StreamKey};
use crate::trainer::Checkpoint;

/// Mean-estimates per parallel work item in the PCD protocol.
const PCD_CHUNK: usize = 25;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Binarization {
    /// A fresh binary positive particle for every estimate.
    #[default]
    Resample,
    /// One binary particle per example, shared by all repeats and strategies.
    Fixed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum IcdStart {
    /// Uniform over the whole dataset; the positive example itself may be drawn.
    #[default]
    Uniform,
    /// Uniform over every example except the positive one.
    ExcludeSelf,
    /// Start at the positive particle; reproduces CD exactly.
    Pinned,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub n_inits: usize,
    pub repeats_per_example: usize,
    pub k_values: Vec<usize>,
    pub k_baseline: usize,
    pub pcd_burn_in: usize,
    pub pcd_mean_lengths: Vec<usize>,
    pub example_subset_size: Option<usize>,
    pub binarization: Binarization,
    pub icd_start: IcdStart,
    pub seed: u64,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            n_inits: 10,
            repeats_per_example: 10,
            k_values: (1..=10).collect(),
            k_baseline: 1000,
            pcd_burn_in: 1000,
            pcd_mean_lengths: (1..=10).collect(),
            example_subset_size: None,
            binarization: Binarization::Resample,
            icd_start: IcdStart::Uniform,
            seed: 0,
        }
    }
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidConfig(what.to_string()));
        if self.n_inits == 0 {
            return bad("n_inits must be at least 1");
        }
        if self.repeats_per_example < 2 {
            return bad("repeats per example must be at least 2 for a sample variance");
        }
        if self.k_values.is_empty() || self.k_values.contains(&0) {
            return bad("k values must be a nonempty list of positive integers");
        }
        if self.k_baseline == 0 {
            return bad("k_baseline must be at least 1");
        }
        if self.pcd_mean_lengths.is_empty() || self.pcd_mean_lengths.contains(&0) {
            return bad("PCD mean lengths must be a nonempty list of positive integers");
        }
        if self.example_subset_size == Some(0) {
            return bad("example subset size must be at least 1");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub dataset: String,
    pub init_seed: u64,
    pub epoch: usize,
    pub strategy: Strategy,
    pub k: usize,
    pub mean_variance: f64,
    pub baseline_mean_variance: f64,
    pub ratio: f64,
}

impl ReportRow {
    fn new(
        ckpt: &Checkpoint,
        data: &Dataset,
        strategy: Strategy,
        k: usize,
        var: f64,
        base: f64,
    ) -> Self {
        ReportRow {
            dataset: data.id.clone(),
            init_seed: ckpt.train_seed,
            epoch: ckpt.epoch,
            strategy,
            k,
            mean_variance: var,
            baseline_mean_variance: base,
            ratio: var / base,
        }
    }
}

/// Ratio statistics for one `(dataset, strategy, k, epoch)` cell across
/// initializations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub dataset: String,
    pub strategy: Strategy,
    pub k: usize,
    pub epoch: usize,
    pub mean_ratio: f64,
    /// Sample standard deviation (divisor `n - 1`) across inits; 0 for one init.
    pub std_ratio: f64,
    pub mean_variance: f64,
    pub mean_baseline_variance: f64,
    pub n_inits: usize,
    /// Set when only one init exists and `std_ratio` carries no information.
    pub single_init: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceReport {
    pub rows: Vec<ReportRow>,
    pub aggregates: Vec<AggregateRow>,
}

impl VarianceReport {
    pub fn from_rows(rows: Vec<ReportRow>, n_inits: usize) -> Result<Self> {
        let aggregates = aggregate(&rows, n_inits)?;
        Ok(VarianceReport { rows, aggregates })
    }
}

/// Streaming per-element mean and second moment (Welford), mergeable with
/// Chan's pairwise update.
#[derive(Clone, Debug)]
pub struct ElementwiseVariance {
    count: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl ElementwiseVariance {
    pub fn new(len: usize) -> Self {
        ElementwiseVariance {
            count: 0,
            mean: vec![0.0; len],
            m2: vec![0.0; len],
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn push(&mut self, values: &[f64]) {
        debug_assert_eq!(values.len(), self.mean.len());
        self.count += 1;
        let n = self.count as f64;
        for ((m, s), &v) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(values) {
            let delta = v - *m;
            *m += delta / n;
            *s += delta * (v - *m);
        }
    }

    pub fn merge(&mut self, other: &ElementwiseVariance) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = other.clone();
            return;
        }
        let (na, nb) = (self.count as f64, other.count as f64);
        let n = na + nb;
        for (((m, s), &mb), &sb) in self
            .mean
            .iter_mut()
            .zip(self.m2.iter_mut())
            .zip(&other.mean)
            .zip(&other.m2)
        {
            let delta = mb - *m;
            *m += delta * nb / n;
            *s += sb + delta * delta * na * nb / n;
        }
        self.count += other.count;
    }

    /// Unbiased variance of each element, averaged over elements.
    pub fn mean_variance(&self) -> Result<f64> {
        if self.count < 2 {
            return Err(Error::TooFewEstimates(self.count));
        }
        let denom = (self.count - 1) as f64;
        Ok(self.m2.iter().map(|s| s / denom).sum::<f64>() / self.m2.len() as f64)
    }
}

/// Unbiased sample variance of every `dW_ij` over the estimates, averaged
/// over all `n_v · n_h` weights.
pub fn per_element_variance(estimates: &[GradientEstimate]) -> Result<f64> {
    if estimates.len() < 2 {
        return Err(Error::TooFewEstimates(estimates.len()));
    }
    let shape = estimates[0].dw().dim();
    let mut acc = ElementwiseVariance::new(shape.0 * shape.1);
    for est in estimates {
        if est.dw().dim() != shape {
            return Err(Error::DimensionMismatch {
                what: "gradient estimate",
                expected: shape.0 * shape.1,
                found: est.dw().len(),
            });
        }
        acc.push(est.dw().as_slice().expect("standard layout"));
    }
    acc.mean_variance()
}

/// Dataset indices profiled: all of them, or `subset` indices spread evenly
/// (`⌊i · n / subset⌋`) so ordered corpora stay balanced.
pub fn example_indices(n_examples: usize, subset: Option<usize>) -> Vec<usize> {
    match subset {
        Some(s) if s < n_examples => (0..s).map(|i| i * n_examples / s).collect(),
        _ => (0..n_examples).collect(),
    }
}

fn check_compatible(ckpt: &Checkpoint, data: &Dataset) -> Result<()> {
    if ckpt.params.n_visible() != data.dim() {
        return Err(Error::DimensionMismatch {
            what: "checkpoint visible units vs dataset dimension",
            expected: data.dim(),
            found: ckpt.params.n_visible(),
        });
    }
    if data.is_empty() {
        return Err(Error::InvalidConfig("dataset is empty".into()));
    }
    Ok(())
}

/// Per-thread state for drawing estimates of one checkpoint.
struct Sampler<'a> {
    params: &'a RbmParams,
    data: &'a Dataset,
    cfg: &'a ProtocolConfig,
    init_seed: u64,
    scratch: EstimatorScratch,
    x_pos: Vec<u8>,
    x_start: Vec<u8>,
}

impl<'a> Sampler<'a> {
    fn new(ckpt: &'a Checkpoint, data: &'a Dataset, cfg: &'a ProtocolConfig) -> Self {
        Sampler {
            params: &ckpt.params,
            data,
            cfg,
            init_seed: ckpt.train_seed,
            scratch: EstimatorScratch::new(&ckpt.params),
            x_pos: vec![0; data.dim()],
            x_start: vec![0; data.dim()],
        }
    }

    fn key(&self, domain: Domain) -> StreamKey {
        StreamKey::new(domain, self.cfg.seed).scope(self.init_seed)
    }

    /// Writes the positive particle of example `index` into `x_pos`, drawing
    /// from `rng` unless binarization is fixed.
    fn positive(&mut self, index: usize, rng: &mut RngStream) {
        match self.cfg.binarization {
            Binarization::Resample => binarize_into(self.data.row(index), &mut self.x_pos, rng),
            Binarization::Fixed => {
                let mut fixed = self.key(Domain::FixedBinarization).index(index).rng();
                binarize_into(self.data.row(index), &mut self.x_pos, &mut fixed);
            }
        }
    }

    /// One CD-k (or baseline) estimate of example `index`, repeat `r`.
    fn cd(&mut self, index: usize, r: usize, k: usize, strategy: Strategy) -> GradientEstimate {
        let domain = match strategy {
            Strategy::Baseline => Domain::Baseline,
            _ => Domain::CdEstimate,
        };
        let mut rng = self.key(domain).index(index).repeat(r).k(k).rng();
        self.positive(index, &mut rng);
        self.scratch
            .chain_estimate(self.params, &self.x_pos, &self.x_pos, k, strategy, &mut rng)
    }

    /// One I-CD-k estimate. Shares the positive particle and chain stream with
    /// [`Sampler::cd`]; the chain start comes from a separate stream.
    fn icd(&mut self, index: usize, r: usize, k: usize) -> GradientEstimate {
        let mut rng = self
            .key(Domain::CdEstimate)
            .index(index)
            .repeat(r)
            .k(k)
            .rng();
        self.positive(index, &mut rng);
        let n = self.data.n_examples();
        match self.cfg.icd_start {
            IcdStart::Pinned => self.x_start.copy_from_slice(&self.x_pos),
            start => {
                let mut start_rng = self.key(Domain::IcdStart).index(index).repeat(r).k(k).rng();
                let mut other = start_rng.random_range(0..n);
                if start == IcdStart::ExcludeSelf && n > 1 {
                    while other == index {
                        other = start_rng.random_range(0..n);
                    }
                }
                binarize_into(self.data.row(other), &mut self.x_start, &mut start_rng);
            }
        }
        self.scratch.chain_estimate(
            self.params,
            &self.x_pos,
            &self.x_start,
            k,
            Strategy::Icd,
            &mut rng,
        )
    }

    /// Mean variance over `R` repeats of one example.
    fn example_variance(&mut self, index: usize, strategy: Strategy, k: usize) -> f64 {
        let len = self.params.n_visible() * self.params.n_hidden();
        let mut acc = ElementwiseVariance::new(len);
        for r in 0..self.cfg.repeats_per_example {
            let est = match strategy {
                Strategy::Icd => self.icd(index, r, k),
                Strategy::Cd | Strategy::Baseline => self.cd(index, r, k, strategy),
                Strategy::Pcd => unreachable!("PCD uses the subsequent-mean protocol"),
            };
            acc.push(est.dw().as_slice().expect("standard layout"));
        }
        acc.mean_variance().expect("at least two repeats")
    }
}

/// Average over the profiled examples of the per-example variance, for
/// each requested `(strategy, k)`.
fn averaged_variances(
    ckpt: &Checkpoint,
    data: &Dataset,
    cfg: &ProtocolConfig,
    plan: &[(Strategy, usize)],
) -> Vec<f64> {
    let indices = example_indices(data.n_examples(), cfg.example_subset_size);
    let per_example: Vec<Vec<f64>> = indices
        .par_iter()
        .map_init(
            || Sampler::new(ckpt, data, cfg),
            |sampler, &index| {
                plan.iter()
                    .map(|&(strategy, k)| sampler.example_variance(index, strategy, k))
                    .collect()
            },
        )
        .collect();
    let n = per_example.len() as f64;
    (0..plan.len())
        .map(|c| per_example.iter().map(|v| v[c]).sum::<f64>() / n)
        .collect()
}

/// Rows for CD-k and/or I-CD-k against the shared long-chain baseline.
fn profile_single_estimates(
    ckpt: &Checkpoint,
    data: &Dataset,
    cfg: &ProtocolConfig,
    strategies: &[Strategy],
) -> Result<Vec<ReportRow>> {
    cfg.validate()?;
    check_compatible(ckpt, data)?;
    let mut plan: Vec<(Strategy, usize)> = strategies
        .iter()
        .flat_map(|&s| cfg.k_values.iter().map(move |&k| (s, k)))
        .collect();
    plan.push((Strategy::Baseline, cfg.k_baseline));
    let variances = averaged_variances(ckpt, data, cfg, &plan);
    let baseline = *variances.last().expect("baseline is planned");
    Ok(plan[..plan.len() - 1]
        .iter()
        .zip(&variances)
        .map(|(&(strategy, k), &var)| ReportRow::new(ckpt, data, strategy, k, var, baseline))
        .collect())
}

/// CD-k variance for each `k` against the baseline, one row per `k`.
pub fn profile_cd(
    ckpt: &Checkpoint,
    data: &Dataset,
    cfg: &ProtocolConfig,
) -> Result<Vec<ReportRow>> {
    profile_single_estimates(ckpt, data, cfg, &[Strategy::Cd])
}

/// I-CD-k variance for each `k` against the baseline, one row per `k`.
pub fn profile_icd(
    ckpt: &Checkpoint,
    data: &Dataset,
    cfg: &ProtocolConfig,
) -> Result<Vec<ReportRow>> {
    profile_single_estimates(ckpt, data, cfg, &[Strategy::Icd])
}

/// Accumulators for every requested mean length of one group.
struct MeanGroup {
    lengths: Vec<usize>,
    accs: Vec<ElementwiseVariance>,
}

impl MeanGroup {
    fn new(lengths: &[usize], len: usize) -> Self {
        MeanGroup {
            lengths: lengths.to_vec(),
            accs: lengths
                .iter()
                .map(|_| ElementwiseVariance::new(len))
                .collect(),
        }
    }

    /// Records the running sum after `t` estimates if `t` is a requested
    /// length.
    fn record(&mut self, t: usize, sum: &Array2<f64>) {
        for (acc, _) in self
            .accs
            .iter_mut()
            .zip(&self.lengths)
            .filter(|(_, &l)| l == t)
        {
            let mean: Vec<f64> = sum.iter().map(|v| v / t as f64).collect();
            acc.push(&mean);
        }
    }

    fn merge(&mut self, other: &MeanGroup) {
        for (a, b) in self.accs.iter_mut().zip(&other.accs) {
            a.merge(b);
        }
    }
}

impl Sampler<'_> {
    /// Mean-estimate `m` of both groups: one persistent chain burned in from a
    /// random example and advanced once per estimate, and the same number of
    /// independent baseline estimates. Positive examples are drawn uniformly
    /// with replacement from `pool`.
    fn pcd_mean(&mut self, m: usize, pool: &[usize], pcd: &mut MeanGroup, base: &mut MeanGroup) {
        let k_max = *self
            .cfg
            .pcd_mean_lengths
            .iter()
            .max()
            .expect("validated nonempty");
        let shape = (self.params.n_visible(), self.params.n_hidden());

        let mut rng = self.key(Domain::PcdChain).index(m).k(k_max).rng();
        let seed_example = pool[rng.random_range(0..pool.len())];
        let mut particle = vec![0u8; self.data.dim()];
        binarize_into(self.data.row(seed_example), &mut particle, &mut rng);
        self.scratch
            .burn_in(self.params, &mut particle, self.cfg.pcd_burn_in, &mut rng);
        let mut sum = Array2::<f64>::zeros(shape);
        for t in 1..=k_max {
            let index = pool[rng.random_range(0..pool.len())];
            self.positive(index, &mut rng);
            let est =
                self.scratch
                    .persistent_estimate(self.params, &self.x_pos, &mut particle, &mut rng);
            sum += est.dw();
            pcd.record(t, &sum);
        }

        let mut rng = self.key(Domain::BaselineMean).index(m).k(k_max).rng();
        sum.fill(0.0);
        for t in 1..=k_max {
            let index = pool[rng.random_range(0..pool.len())];
            self.positive(index, &mut rng);
            let est = self.scratch.chain_estimate(
                self.params,
                &self.x_pos,
                &self.x_pos,
                self.cfg.k_baseline,
                Strategy::Baseline,
                &mut rng,
            );
            sum += est.dw();
            base.record(t, &sum);
        }
    }
}

/// Runs `work` over `0..total` in fixed-size chunks, merging chunk results
/// strictly in chunk order. At most a few chunks are alive at once.
fn chunked_reduce<T, F, M>(total: usize, chunk: usize, init: T, work: F, mut merge: M) -> T
where
    T: Send,
    F: Fn(std::ops::Range<usize>) -> T + Sync,
    M: FnMut(&mut T, T),
{
    let n_chunks = total.div_ceil(chunk);
    let wave = (rayon::current_num_threads() * 2).max(1);
    let mut acc = init;
    let mut next = 0;
    while next < n_chunks {
        let end = (next + wave).min(n_chunks);
        let results: Vec<T> = (next..end)
            .into_par_iter()
            .map(|c| work(c * chunk..((c + 1) * chunk).min(total)))
            .collect();
        for r in results {
            merge(&mut acc, r);
        }
        next = end;
    }
    acc
}

/// Variance of the mean of `k` subsequent PCD estimates against the variance
/// of the mean of `k` independent baseline estimates, for each `k` in
/// `pcd_mean_lengths`. Each group has `R · n_examples` mean-estimates. No
/// learning happens between estimates.
pub fn profile_pcd_mean(
    ckpt: &Checkpoint,
    data: &Dataset,
    cfg: &ProtocolConfig,
) -> Result<Vec<ReportRow>> {
    cfg.validate()?;
    check_compatible(ckpt, data)?;
    let pool = example_indices(data.n_examples(), cfg.example_subset_size);
    let total = cfg.repeats_per_example * pool.len();
    let len = ckpt.params.n_visible() * ckpt.params.n_hidden();
    let lengths = &cfg.pcd_mean_lengths;
    let fresh = || (MeanGroup::new(lengths, len), MeanGroup::new(lengths, len));
    let (pcd, base) = chunked_reduce(
        total,
        PCD_CHUNK,
        fresh(),
        |range| {
            let mut sampler = Sampler::new(ckpt, data, cfg);
            let (mut pcd, mut base) = fresh();
            for m in range {
                sampler.pcd_mean(m, &pool, &mut pcd, &mut base);
            }
            (pcd, base)
        },
        |acc, (pcd, base)| {
            acc.0.merge(&pcd);
            acc.1.merge(&base);
        },
    );
    lengths
        .iter()
        .enumerate()
        .map(|(i, &k)| {
            let var = pcd.accs[i].mean_variance()?;
            let base_var = base.accs[i].mean_variance()?;
            Ok(ReportRow::new(ckpt, data, Strategy::Pcd, k, var, base_var))
        })
        .collect()
}

/// All requested strategies for one checkpoint, in the order CD, I-CD, PCD.
/// CD and I-CD share one baseline computation.
pub fn profile(
    ckpt: &Checkpoint,
    data: &Dataset,
    cfg: &ProtocolConfig,
    strategies: &[Strategy],
) -> Result<Vec<ReportRow>> {
    let mut single: Vec<Strategy> = Vec::new();
    for s in [Strategy::Cd, Strategy::Icd] {
        if strategies.contains(&s) {
            single.push(s);
        }
    }
    let mut rows = Vec::new();
    if !single.is_empty() {
        rows.extend(profile_single_estimates(ckpt, data, cfg, &single)?);
    }
    if strategies.contains(&Strategy::Pcd) {
        rows.extend(profile_pcd_mean(ckpt, data, cfg)?);
    }
    if strategies.contains(&Strategy::Baseline) {
        return Err(Error::InvalidConfig(
            "the baseline is profiled implicitly; request cd, icd or pcd".into(),
        ));
    }
    Ok(rows)
}

/// Variance (averaged over weights) of the mean of `n` independent baseline
/// estimates, each with its own positive example drawn uniformly from the
/// profiled examples. Uses `n_means` means.
pub fn baseline_mean_variance(
    ckpt: &Checkpoint,
    data: &Dataset,
    cfg: &ProtocolConfig,
    n: usize,
    n_means: usize,
) -> Result<f64> {
    cfg.validate()?;
    check_compatible(ckpt, data)?;
    if n == 0 {
        return Err(Error::InvalidConfig(
            "minibatch size must be at least 1".into(),
        ));
    }
    let pool = example_indices(data.n_examples(), cfg.example_subset_size);
    let shape = (ckpt.params.n_visible(), ckpt.params.n_hidden());
    let acc = chunked_reduce(
        n_means,
        PCD_CHUNK,
        ElementwiseVariance::new(shape.0 * shape.1),
        |range| {
            let mut sampler = Sampler::new(ckpt, data, cfg);
            let mut acc = ElementwiseVariance::new(shape.0 * shape.1);
            let mut sum = Array2::<f64>::zeros(shape);
            for m in range {
                let mut rng = sampler
                    .key(Domain::BaselineMean)
                    .index(m)
                    .k(n)
                    .repeat(1)
                    .rng();
                sum.fill(0.0);
                for _ in 0..n {
                    let index = pool[rng.random_range(0..pool.len())];
                    sampler.positive(index, &mut rng);
                    let est = sampler.scratch.chain_estimate(
                        sampler.params,
                        &sampler.x_pos,
                        &sampler.x_pos,
                        cfg.k_baseline,
                        Strategy::Baseline,
                        &mut rng,
                    );
                    sum += est.dw();
                }
                let mean: Vec<f64> = sum.iter().map(|v| v / n as f64).collect();
                acc.push(&mean);
            }
            acc
        },
        |acc, part| acc.merge(&part),
    );
    acc.mean_variance()
}

type CellKey = (String, Strategy, usize, usize);

/// Mean and spread of the ratio across inits for every
/// `(dataset, strategy, k, epoch)` cell. Every cell must contain each init
/// seed found in `rows` exactly once, and there must be `n_inits` of them.
pub fn aggregate(rows: &[ReportRow], n_inits: usize) -> Result<Vec<AggregateRow>> {
    let mut cells: BTreeMap<CellKey, Vec<&ReportRow>> = BTreeMap::new();
    let mut inits_by_dataset: BTreeMap<&str, BTreeSet<u64>> = BTreeMap::new();
    for row in rows {
        cells
            .entry((row.dataset.clone(), row.strategy, row.epoch, row.k))
            .or_default()
            .push(row);
        inits_by_dataset
            .entry(row.dataset.as_str())
            .or_default()
            .insert(row.init_seed);
    }
    let mut problems = Vec::new();
    for (dataset, inits) in &inits_by_dataset {
        if inits.len() != n_inits {
            problems.push(format!(
                "dataset {dataset}: expected {n_inits} init seeds, found {}",
                inits.len()
            ));
        }
    }
    for ((dataset, strategy, epoch, k), members) in &cells {
        let present: BTreeSet<u64> = members.iter().map(|r| r.init_seed).collect();
        if present.len() != members.len() {
            problems.push(format!(
                "{dataset}/{strategy}/k={k}/epoch={epoch}: duplicate init seeds"
            ));
        }
        for missing in inits_by_dataset[dataset.as_str()].difference(&present) {
            problems.push(format!(
                "{dataset}/{strategy}/k={k}/epoch={epoch}: missing init {missing}"
            ));
        }
    }
    if !problems.is_empty() {
        return Err(Error::MissingCells(problems));
    }

    Ok(cells
        .into_iter()
        .map(|((dataset, strategy, epoch, k), mut members)| {
            members.sort_by_key(|r| r.init_seed);
            let n = members.len();
            let mean =
                |f: fn(&ReportRow) -> f64| members.iter().map(|r| f(r)).sum::<f64>() / n as f64;
            let mean_ratio = mean(|r| r.ratio);
            let std_ratio = if n > 1 {
                (members
                    .iter()
                    .map(|r| (r.ratio - mean_ratio).powi(2))
                    .sum::<f64>()
                    / (n - 1) as f64)
                    .sqrt()
            } else {
                0.0
            };
            AggregateRow {
                dataset,
                strategy,
                k,
                epoch,
                mean_ratio,
                std_ratio,
                mean_variance: mean(|r| r.mean_variance),
                mean_baseline_variance: mean(|r| r.baseline_mean_variance),
                n_inits: n,
                single_init: n == 1,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::cd_k_estimate;
    use crate::estimators::Strategy;
    use crate::rbm::BinaryState;
    use crate::rng::stream_from_seed;
    use crate::trainer::init_params;
    use proptest::prelude::*;
    use rand::Rng;

    /// Two-pass variance straight from the definition.
    fn two_pass_mean_variance(samples: &[Vec<f64>]) -> f64 {
        let r = samples.len() as f64;
        let len = samples[0].len();
        let mut total = 0.0;
        for e in 0..len {
            let mean = samples.iter().map(|s| s[e]).sum::<f64>() / r;
            total += samples.iter().map(|s| (s[e] - mean).powi(2)).sum::<f64>() / (r - 1.0);
        }
        total / len as f64
    }

    fn estimates(n: usize, seed: u64) -> Vec<GradientEstimate> {
        let p = init_params(4, 3, seed).unwrap();
        let mut rng = stream_from_seed(seed);
        (0..n)
            .map(|i| {
                let x = BinaryState::from_code(i as u64 % 16, 4);
                cd_k_estimate(&x, 1 + i % 3, &p, &mut rng).unwrap()
            })
            .collect()
    }

    #[test]
    fn per_element_variance_examples() {
        let one = estimates(1, 1);
        let same = vec![one[0].clone(); 5];
        assert_eq!(per_element_variance(&same).unwrap(), 0.0);
        assert!(matches!(
            per_element_variance(&one),
            Err(Error::TooFewEstimates(1))
        ));

        // A 1×1 model with dW = 0 and dW = 2.
        let two = [
            GradientEstimate::from_particles(&[0], &[0.0], &[0], &[0.0], Strategy::Cd, 1),
            GradientEstimate::from_particles(&[1], &[1.0], &[1], &[-1.0], Strategy::Cd, 1),
        ];
        assert_eq!(two[1].dw()[[0, 0]], 2.0);
        assert_eq!(per_element_variance(&two).unwrap(), 2.0);
    }

    proptest! {
        #[test]
        fn welford_matches_two_pass(rows in 2usize..40, len in 1usize..12, seed in any::<u64>()) {
            let mut rng = stream_from_seed(seed);
            let samples: Vec<Vec<f64>> = (0..rows)
                .map(|_| (0..len).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect())
                .collect();
            let mut acc = ElementwiseVariance::new(len);
            for s in &samples {
                acc.push(s);
            }
            let oracle = two_pass_mean_variance(&samples);
            prop_assert!((acc.mean_variance().unwrap() - oracle).abs() < 1e-12);

            // Split, accumulate separately, merge.
            let cut = rows / 2;
            let mut left = ElementwiseVariance::new(len);
            let mut right = ElementwiseVariance::new(len);
            samples[..cut].iter().for_each(|s| left.push(s));
            samples[cut..].iter().for_each(|s| right.push(s));
            left.merge(&right);
            prop_assert!((left.mean_variance().unwrap() - oracle).abs() < 1e-12);
        }
    }

    #[test]
    fn per_element_variance_matches_two_pass_on_estimates() {
        let ests = estimates(25, 3);
        let samples: Vec<Vec<f64>> = ests
            .iter()
            .map(|e| e.dw().iter().copied().collect())
            .collect();
        let got = per_element_variance(&ests).unwrap();
        assert!((got - two_pass_mean_variance(&samples)).abs() < 1e-12);
    }

    #[test]
    fn example_indices_spread_evenly() {
        assert_eq!(example_indices(10, None), (0..10).collect::<Vec<_>>());
        assert_eq!(example_indices(10, Some(20)), (0..10).collect::<Vec<_>>());
        assert_eq!(example_indices(10, Some(5)), vec![0, 2, 4, 6, 8]);
        assert_eq!(example_indices(10_000, Some(500))[1], 20);
    }

    fn row(strategy: Strategy, init: u64, epoch: usize, k: usize, ratio: f64) -> ReportRow {
        ReportRow {
            dataset: "d".into(),
            init_seed: init,
            epoch,
            strategy,
            k,
            mean_variance: ratio,
            baseline_mean_variance: 1.0,
            ratio,
        }
    }

    #[test]
    fn aggregate_hand_computed() {
        let rows = vec![
            row(Strategy::Cd, 1, 10, 1, 0.5),
            row(Strategy::Cd, 2, 10, 1, 0.7),
            row(Strategy::Cd, 1, 10, 2, 0.9),
            row(Strategy::Cd, 2, 10, 2, 1.3),
        ];
        let agg = aggregate(&rows, 2).unwrap();
        assert_eq!(agg.len(), 2);
        assert_eq!(agg[0].k, 1);
        assert!((agg[0].mean_ratio - 0.6).abs() < 1e-15);
        // sd of {0.5, 0.7} with divisor 1 is 0.1·√2.
        assert!((agg[0].std_ratio - 0.1 * 2f64.sqrt()).abs() < 1e-15);
        assert!((agg[1].mean_ratio - 1.1).abs() < 1e-15);
        assert!((agg[1].std_ratio - 0.2 * 2f64.sqrt()).abs() < 1e-12);
        assert!(!agg[0].single_init);

        let mut shuffled = rows.clone();
        shuffled.reverse();
        shuffled.swap(0, 2);
        assert_eq!(aggregate(&shuffled, 2).unwrap(), agg);
    }

    #[test]
    fn aggregate_single_init_and_missing_cells() {
        let agg = aggregate(&[row(Strategy::Pcd, 4, 500, 10, 2.5)], 1).unwrap();
        assert_eq!(agg[0].std_ratio, 0.0);
        assert!(agg[0].single_init);

        let rows = vec![
            row(Strategy::Cd, 1, 10, 1, 0.5),
            row(Strategy::Cd, 2, 10, 1, 0.7),
            row(Strategy::Cd, 1, 10, 2, 0.9),
        ];
        match aggregate(&rows, 2) {
            Err(Error::MissingCells(cells)) => {
                assert_eq!(cells, vec!["d/cd/k=2/epoch=10: missing init 2".to_string()]);
            }
            other => panic!("{other:?}"),
        }
        assert!(aggregate(&rows[..2], 3).is_err());
    }

    fn toy_data() -> Dataset {
        let mut rng = stream_from_seed(70);
        let rows: Vec<f32> = (0..40 * 6).map(|_| rng.random::<f32>()).collect();
        Dataset::new("toy", 6, rows, "random intensities").unwrap()
    }

    fn toy_cfg() -> ProtocolConfig {
        ProtocolConfig {
            n_inits: 1,
            repeats_per_example: 4,
            k_values: vec![1, 3],
            k_baseline: 20,
            pcd_burn_in: 10,
            pcd_mean_lengths: vec![1, 3],
            example_subset_size: Some(10),
            seed: 5,
            ..ProtocolConfig::default()
        }
    }

    fn toy_ckpt() -> Checkpoint {
        Checkpoint {
            params: init_params(6, 6, 12).unwrap(),
            epoch: 0,
            train_seed: 12,
        }
    }

    #[test]
    fn profiles_do_not_touch_parameters_and_are_repeatable() {
        let (ckpt, data, cfg) = (toy_ckpt(), toy_data(), toy_cfg());
        let before = ckpt.params.checksum();
        let all = [Strategy::Cd, Strategy::Icd, Strategy::Pcd];
        let a = profile(&ckpt, &data, &cfg, &all).unwrap();
        assert_eq!(ckpt.params.checksum(), before);
        let b = profile(&ckpt, &data, &cfg, &all).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 6);
        for r in &a {
            assert!(r.mean_variance >= 0.0);
            assert_eq!(r.ratio, r.mean_variance / r.baseline_mean_variance);
        }
        // Shared baseline across CD and I-CD, identical to the separate runs.
        assert_eq!(profile_cd(&ckpt, &data, &cfg).unwrap(), a[..2].to_vec());
        assert_eq!(profile_icd(&ckpt, &data, &cfg).unwrap(), a[2..4].to_vec());
        assert_eq!(
            profile_pcd_mean(&ckpt, &data, &cfg).unwrap(),
            a[4..].to_vec()
        );
    }

    #[test]
    fn pinned_icd_reproduces_cd() {
        let (ckpt, data) = (toy_ckpt(), toy_data());
        let cfg = ProtocolConfig {
            icd_start: IcdStart::Pinned,
            ..toy_cfg()
        };
        let cd = profile_cd(&ckpt, &data, &cfg).unwrap();
        let icd = profile_icd(&ckpt, &data, &cfg).unwrap();
        for (a, b) in cd.iter().zip(&icd) {
            assert_eq!(a.mean_variance.to_bits(), b.mean_variance.to_bits());
            assert_eq!(a.ratio.to_bits(), b.ratio.to_bits());
            assert_eq!(b.strategy, Strategy::Icd);
        }
    }

    #[test]
    fn results_do_not_depend_on_thread_count() {
        let (ckpt, data, cfg) = (toy_ckpt(), toy_data(), toy_cfg());
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| profile(&ckpt, &data, &cfg, &[Strategy::Cd, Strategy::Pcd]).unwrap())
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn fixed_binarization_is_supported() {
        let (ckpt, data) = (toy_ckpt(), toy_data());
        let cfg = ProtocolConfig {
            binarization: Binarization::Fixed,
            ..toy_cfg()
        };
        let fixed = profile_cd(&ckpt, &data, &cfg).unwrap();
        let resampled = profile_cd(&ckpt, &data, &toy_cfg()).unwrap();
        // Removing the binarization noise lowers the measured variance.
        assert!(fixed[0].mean_variance < resampled[0].mean_variance);
    }

    #[test]
    fn config_and_compatibility_errors() {
        let (ckpt, data) = (toy_ckpt(), toy_data());
        let bad = ProtocolConfig {
            repeats_per_example: 1,
            ..toy_cfg()
        };
        assert!(profile_cd(&ckpt, &data, &bad).is_err());
        let bad = ProtocolConfig {
            k_values: vec![],
            ..toy_cfg()
        };
        assert!(bad.validate().is_err());
        let wide = Checkpoint {
            params: init_params(7, 7, 1).unwrap(),
            epoch: 0,
            train_seed: 1,
        };
        assert!(matches!(
            profile_pcd_mean(&wide, &data, &toy_cfg()),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn zero_weight_ratios_are_near_one() {
        let data = toy_data();
        let ckpt = Checkpoint {
            params: RbmParams::zeros(6, 6),
            epoch: 0,
            train_seed: 3,
        };
        let cfg = ProtocolConfig {
            repeats_per_example: 10,
            k_values: vec![1, 5],
            k_baseline: 50,
            pcd_burn_in: 50,
            pcd_mean_lengths: vec![1, 5, 10],
            example_subset_size: None,
            ..toy_cfg()
        };
        let rows = profile(
            &ckpt,
            &data,
            &cfg,
            &[Strategy::Cd, Strategy::Icd, Strategy::Pcd],
        )
        .unwrap();
        for r in rows {
            let (lo, hi) = if r.strategy == Strategy::Pcd {
                (0.85, 1.15)
            } else {
                (0.9, 1.1)
            };
            assert!((lo..=hi).contains(&r.ratio), "{r:?}");
        }
    }
}
