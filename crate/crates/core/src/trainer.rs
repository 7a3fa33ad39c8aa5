//! Minibatch CD-1 training with checkpoints.
//!
//! Checkpoint files (`RBMCKPT1`): the 8 ASCII bytes `RBMCKPT1`, then
//! little-endian `u32 n_v`, `u32 n_h`, `u64 epoch`, `u64 seed`, followed by
//! `b` (`n_v`), `c` (`n_h`) and `W` (`n_v × n_h`, row-major) as
//! little-endian `f64`.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datasets::{binarize_into, Dataset};
use crate::error::{Error, Result};
use crate::rbm::{free_energy_raw, GibbsScratch, RbmParams};
use crate::rng::{Domain, StreamKey};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"RBMCKPT1";

/// Multiplicative step between candidate rates in adaptive mode.
pub const ADAPTIVE_RATE_FACTOR: f64 = 1.1;

/// Examples per parallel work item inside a minibatch. Fixed so that the
/// reduction order, and therefore the result, does not depend on threads.
const TRAIN_CHUNK: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LrMode {
    #[default]
    Fixed,
    /// Each update tries `{η/ρ, η, ηρ}` and keeps the candidate with the
    /// largest free-energy gap between the minibatch and its negative
    /// particles. A simplified stand-in for published adaptive schemes.
    Adaptive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub minibatch_size: usize,
    pub learning_rate: f64,
    pub lr_mode: LrMode,
    pub seed: u64,
    pub checkpoint_epochs: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 500,
            minibatch_size: 100,
            learning_rate: 0.01,
            lr_mode: LrMode::Fixed,
            seed: 0,
            checkpoint_epochs: vec![10, 500],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be at least 1".into()));
        }
        if self.minibatch_size == 0 {
            return Err(Error::InvalidConfig(
                "minibatch size must be at least 1".into(),
            ));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        if let Some(e) = self.checkpoint_epochs.iter().find(|&&e| e > self.epochs) {
            return Err(Error::InvalidConfig(format!(
                "checkpoint epoch {e} is beyond the {} training epochs",
                self.epochs
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: RbmParams,
    pub epoch: usize,
    pub train_seed: u64,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let p = &self.params;
        let (n_v, n_h) = (p.n_visible(), p.n_hidden());
        let mut out = Vec::with_capacity(32 + 8 * (n_v + n_h + n_v * n_h));
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(n_v as u32).to_le_bytes());
        out.extend_from_slice(&(n_h as u32).to_le_bytes());
        out.extend_from_slice(&(self.epoch as u64).to_le_bytes());
        out.extend_from_slice(&self.train_seed.to_le_bytes());
        let values = p
            .visible_bias()
            .iter()
            .chain(p.hidden_bias().iter())
            .chain(p.weights().iter())
            .copied()
            .collect::<Vec<f64>>();
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        if bytes.len() < 32 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(Error::format(path, 0, "bad magic, expected RBMCKPT1"));
        }
        let u32_at = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
        let u64_at = |at: usize| u64::from_le_bytes(bytes[at..at + 8].try_into().unwrap());
        let (n_v, n_h) = (u32_at(8), u32_at(12));
        let epoch = u64_at(16) as usize;
        let train_seed = u64_at(24);
        let expected = 32 + 8 * (n_v + n_h + n_v * n_h);
        if bytes.len() != expected {
            return Err(Error::format(
                path,
                bytes.len().min(expected) as u64,
                format!(
                    "checkpoint holds {} bytes, header implies {expected}",
                    bytes.len()
                ),
            ));
        }
        let values: Vec<f64> = bytes[32..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let b = Array1::from(values[..n_v].to_vec());
        let c = Array1::from(values[n_v..n_v + n_h].to_vec());
        let w = Array2::from_shape_vec((n_v, n_h), values[n_v + n_h..].to_vec())
            .expect("length checked above");
        let params = RbmParams::new(w, b, c).map_err(|e| Error::format(path, 32, e.to_string()))?;
        Ok(Checkpoint {
            params,
            epoch,
            train_seed,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&bytes, path)
    }
}

/// Zero biases and `W_ij ~ N(0, 1 / (n_v + n_h))`.
pub fn init_params(n_v: usize, n_h: usize, seed: u64) -> Result<RbmParams> {
    if n_v == 0 || n_h == 0 {
        return Err(Error::InvalidConfig("layers need at least one unit".into()));
    }
    let std_dev = 1.0 / ((n_v + n_h) as f64).sqrt();
    let normal = Normal::new(0.0, std_dev).expect("positive standard deviation");
    let mut rng = StreamKey::new(Domain::Init, seed).rng();
    let w = Array2::from_shape_simple_fn((n_v, n_h), || normal.sample(&mut rng));
    RbmParams::new(w, Array1::zeros(n_v), Array1::zeros(n_h))
}

/// Sums of per-example CD-1 statistics over part of a minibatch.
struct BatchGradient {
    dw: Array2<f64>,
    db: Array1<f64>,
    dc: Array1<f64>,
}

impl BatchGradient {
    fn zeros(n_v: usize, n_h: usize) -> Self {
        BatchGradient {
            dw: Array2::zeros((n_v, n_h)),
            db: Array1::zeros(n_v),
            dc: Array1::zeros(n_h),
        }
    }

    fn add_particle(&mut self, x: &[u8], hp: &[f64], sign: f64) {
        let n_h = hp.len();
        let dw = self.dw.as_slice_mut().expect("standard layout");
        for (i, _) in x.iter().enumerate().filter(|(_, &b)| b == 1) {
            for (d, &h) in dw[i * n_h..(i + 1) * n_h].iter_mut().zip(hp) {
                *d += sign * h;
            }
            self.db[i] += sign;
        }
        for (d, &h) in self.dc.iter_mut().zip(hp) {
            *d += sign * h;
        }
    }

    fn merge(&mut self, other: &BatchGradient) {
        self.dw += &other.dw;
        self.db += &other.db;
        self.dc += &other.dc;
    }
}

/// Positive and negative particles of one minibatch, kept for adaptive-rate
/// scoring.
struct Particles {
    positives: Vec<Vec<u8>>,
    negatives: Vec<Vec<u8>>,
}

fn cd1_chunk(
    data: &Dataset,
    p: &RbmParams,
    order: &[usize],
    epoch: usize,
    first_position: usize,
    seed: u64,
    keep_particles: bool,
) -> (BatchGradient, Particles) {
    let (n_v, n_h) = (p.n_visible(), p.n_hidden());
    let mut grad = BatchGradient::zeros(n_v, n_h);
    let mut particles = Particles {
        positives: Vec::new(),
        negatives: Vec::new(),
    };
    let mut scratch = GibbsScratch::new(p);
    let mut x = vec![0u8; n_v];
    let mut neg = vec![0u8; n_v];
    for (offset, &example) in order.iter().enumerate() {
        let mut rng = StreamKey::new(Domain::TrainExample, seed)
            .scope(epoch as u64)
            .index(first_position + offset)
            .rng();
        binarize_into(data.row(example), &mut x, &mut rng);
        neg.copy_from_slice(&x);
        scratch.step(p, &mut neg, &mut rng);
        let hp = scratch.hidden_probs(p, &x).to_vec();
        grad.add_particle(&x, &hp, 1.0);
        let hn = scratch.hidden_probs(p, &neg);
        grad.add_particle(&neg, hn, -1.0);
        if keep_particles {
            particles.positives.push(x.clone());
            particles.negatives.push(neg.clone());
        }
    }
    (grad, particles)
}

fn mean_free_energy(p: &RbmParams, xs: &[Vec<u8>]) -> f64 {
    let mut scratch = vec![0.0; p.n_hidden()];
    xs.iter()
        .map(|x| free_energy_raw(p, x, &mut scratch))
        .sum::<f64>()
        / xs.len() as f64
}

/// Trains and returns the scheduled checkpoints.
pub fn train(data: &Dataset, cfg: &TrainConfig) -> Result<Vec<Checkpoint>> {
    let mut out = Vec::new();
    train_with(data, cfg, |ckpt| {
        out.push(ckpt.clone());
        Ok(())
    })?;
    Ok(out)
}

/// Trains with CD-1, handing each scheduled checkpoint to `on_checkpoint` as
/// soon as it is reached. Returns the final parameters.
pub fn train_with<F>(data: &Dataset, cfg: &TrainConfig, mut on_checkpoint: F) -> Result<RbmParams>
where
    F: FnMut(&Checkpoint) -> Result<()>,
{
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidConfig(
            "cannot train on an empty dataset".into(),
        ));
    }
    let n_v = data.dim();
    let mut params = init_params(n_v, n_v, cfg.seed)?;
    let mut rate = cfg.learning_rate;
    let adaptive = cfg.lr_mode == LrMode::Adaptive;
    let emit = |params: &RbmParams, epoch: usize, f: &mut F| -> Result<()> {
        if cfg.checkpoint_epochs.contains(&epoch) {
            f(&Checkpoint {
                params: params.clone(),
                epoch,
                train_seed: cfg.seed,
            })?;
        }
        Ok(())
    };
    emit(&params, 0, &mut on_checkpoint)?;

    let mut order: Vec<usize> = (0..data.n_examples()).collect();
    for epoch in 1..=cfg.epochs {
        order.sort_unstable();
        order.shuffle(
            &mut StreamKey::new(Domain::Shuffle, cfg.seed)
                .scope(epoch as u64)
                .rng(),
        );
        for (batch_no, batch) in order.chunks(cfg.minibatch_size).enumerate() {
            let first = batch_no * cfg.minibatch_size;
            let parts: Vec<(BatchGradient, Particles)> = batch
                .par_chunks(TRAIN_CHUNK)
                .enumerate()
                .map(|(c, chunk)| {
                    cd1_chunk(
                        data,
                        &params,
                        chunk,
                        epoch,
                        first + c * TRAIN_CHUNK,
                        cfg.seed,
                        adaptive,
                    )
                })
                .collect();
            let mut grad = BatchGradient::zeros(n_v, n_v);
            let mut particles = Particles {
                positives: Vec::new(),
                negatives: Vec::new(),
            };
            for (g, p) in &parts {
                grad.merge(g);
                if adaptive {
                    particles.positives.extend(p.positives.iter().cloned());
                    particles.negatives.extend(p.negatives.iter().cloned());
                }
            }
            drop(parts);
            let scale = 1.0 / batch.len() as f64;
            grad.dw *= scale;
            grad.db *= scale;
            grad.dc *= scale;

            if adaptive {
                rate = choose_rate(&params, &grad, &particles, rate);
            }
            apply_update(&mut params, rate, &grad, epoch, cfg.seed)?;
        }
        emit(&params, epoch, &mut on_checkpoint)?;
    }
    Ok(params)
}

/// Applies one update, or reports divergence with the parameters as they
/// were before it.
fn apply_update(
    params: &mut RbmParams,
    rate: f64,
    grad: &BatchGradient,
    epoch: usize,
    seed: u64,
) -> Result<()> {
    let previous = params.clone();
    params.add_scaled(rate, &grad.dw, &grad.db, &grad.dc)?;
    if !params.is_finite() {
        return Err(Error::Diverged {
            epoch,
            last_good: Box::new(Checkpoint {
                params: previous,
                epoch: epoch - 1,
                train_seed: seed,
            }),
        });
    }
    Ok(())
}

fn choose_rate(params: &RbmParams, grad: &BatchGradient, particles: &Particles, rate: f64) -> f64 {
    let candidates = [
        rate,
        rate / ADAPTIVE_RATE_FACTOR,
        rate * ADAPTIVE_RATE_FACTOR,
    ];
    let mut best = (f64::NEG_INFINITY, rate);
    for &candidate in &candidates {
        let mut trial = params.clone();
        if trial
            .add_scaled(candidate, &grad.dw, &grad.db, &grad.dc)
            .is_err()
            || !trial.is_finite()
        {
            continue;
        }
        let score = mean_free_energy(&trial, &particles.positives)
            - mean_free_energy(&trial, &particles.negatives);
        if score > best.0 {
            best = (score, candidate);
        }
    }
    best.1
}
