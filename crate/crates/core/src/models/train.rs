use std::borrow::Cow;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{assemble_inputs, check_compatible, Network, NetworkSpec, WeightBundle};
use crate::error::{Error, Result};
use crate::nn::{sgd_step, OptimizerState, ParamSet};
use crate::pgm::{flip_y, LabelGrid, PgmTensor};

/// One training sample; the tensor's mask selects the cells that contribute to the loss.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub input: PgmTensor,
    pub labels: LabelGrid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub flip_prob: f64,
    pub seed: u64,
    /// Per-class loss weights; empty means 1.0 for every class.
    pub class_weights: Vec<f64>,
    /// Standardize each input channel with statistics of the masked training cells.
    pub normalize: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 1,
            learning_rate: 0.01,
            momentum: 0.9,
            flip_prob: 0.0,
            seed: 0,
            class_weights: Vec::new(),
            normalize: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(Error::Config(format!("flip_prob {} outside [0, 1]", self.flip_prob)));
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::Config("learning_rate must be finite and non-negative".into()));
        }
        if !self.momentum.is_finite() || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("momentum must lie in [0, 1)".into()));
        }
        if !self.class_weights.is_empty() {
            if self.class_weights.len() != num_classes {
                return Err(Error::Config(format!(
                    "{} class weights for {} classes",
                    self.class_weights.len(),
                    num_classes
                )));
            }
            if self.class_weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
                return Err(Error::Config("class weights must be finite and non-negative".into()));
            }
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self, frames: usize) -> usize {
        frames.div_ceil(self.batch_size)
    }

    fn weights_for(&self, num_classes: usize) -> Vec<f64> {
        if self.class_weights.is_empty() {
            vec![1.0; num_classes]
        } else {
            self.class_weights.clone()
        }
    }
}

/// Per-channel affine standardization applied before the first layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputNorm {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl InputNorm {
    /// Mean and standard deviation over masked cells; flat channels get std 1.
    pub fn fit(frames: &[Frame]) -> Result<Self> {
        let c = frames
            .first()
            .ok_or_else(|| Error::domain("cannot fit normalization on an empty dataset"))?
            .input
            .channels();
        let mut n = 0usize;
        let mut sum = vec![0.0; c];
        let mut sq = vec![0.0; c];
        for f in frames {
            for (px, &m) in f.input.data().chunks_exact(c).zip(f.input.mask()) {
                if !m {
                    continue;
                }
                n += 1;
                for k in 0..c {
                    let v = px[k] as f64;
                    sum[k] += v;
                    sq[k] += v * v;
                }
            }
        }
        if n == 0 {
            return Err(Error::domain("no masked cells to fit normalization"));
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(s, m)| {
                let var = (s / n as f64 - m * m).max(0.0);
                if var.sqrt() > 1e-9 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Ok(InputNorm { mean, std })
    }
}

fn accumulate(sum: &mut Network, g: &Network) {
    let refs = g.param_refs();
    let mut slots = Vec::new();
    sum.collect_mut(&mut slots);
    for (s, r) in slots.into_iter().zip(refs) {
        for (a, b) in s.iter_mut().zip(r.data) {
            *a += b;
        }
    }
}

fn scale(net: &mut Network, factor: f64) {
    let mut slots = Vec::new();
    net.collect_mut(&mut slots);
    for s in slots {
        for v in s.iter_mut() {
            *v *= factor;
        }
    }
}

/// Momentum SGD on masked weighted cross-entropy.
///
/// Each epoch visits the frames in a seeded shuffled order; each frame is
/// flipped with probability `flip_prob`. Frames of one batch are evaluated in
/// parallel, but gradients are summed in batch order so the result does not
/// depend on the thread count. Returns the trained bundle and the mean batch
/// loss of every step.
pub fn train_toy(
    spec: &NetworkSpec,
    weights: &WeightBundle,
    dataset: &[Frame],
    config: &TrainConfig,
) -> Result<(WeightBundle, Vec<f64>)> {
    check_compatible(spec, weights)?;
    config.validate(spec.num_classes)?;
    if dataset.is_empty() {
        return Err(Error::domain("training dataset is empty"));
    }
    let want = spec.arch.input_schema();
    for (i, f) in dataset.iter().enumerate() {
        if f.input.schema() != want {
            return Err(Error::domain(format!(
                "frame {i} has {} input but {} expects {}",
                f.input.schema().name(),
                spec.arch.name(),
                want.name()
            )));
        }
        if f.labels.spec() != f.input.spec() {
            return Err(Error::domain(format!("frame {i} labels do not match its grid")));
        }
    }
    let norm = if config.normalize {
        match &weights.meta.input_norm {
            Some(n) => Some(n.clone()),
            None => Some(InputNorm::fit(dataset)?),
        }
    } else {
        weights.meta.input_norm.clone()
    };
    let class_weights = config.weights_for(spec.num_classes);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut state = OptimizerState::new(config.learning_rate, config.momentum);
    let mut network = weights.network.clone();
    let mut curve = Vec::with_capacity(config.epochs * config.steps_per_epoch(dataset.len()));
    let mut order: Vec<usize> = (0..dataset.len()).collect();

    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let flips: Vec<bool> = batch.iter().map(|_| rng.random::<f64>() < config.flip_prob).collect();
            let results = batch
                .par_iter()
                .zip(&flips)
                .map(|(&i, &flip)| {
                    let frame = &dataset[i];
                    let (input, labels) = if flip {
                        let (p, l) = flip_y(&frame.input, &frame.labels)?;
                        (Cow::Owned(p), Cow::Owned(l))
                    } else {
                        (
                            Cow::Borrowed(&frame.input),
                            Cow::Borrowed(&frame.labels),
                        )
                    };
                    let inputs = assemble_inputs(spec, &input, norm.as_ref())?;
                    network.loss_and_grad(&inputs, labels.labels(), &class_weights, input.mask())
                })
                .collect::<Vec<Result<(f64, Network)>>>();
            let mut loss = 0.0;
            let mut grad: Option<Network> = None;
            for r in results {
                let (l, g) = r?;
                loss += l;
                match &mut grad {
                    Some(sum) => accumulate(sum, &g),
                    None => grad = Some(g),
                }
            }
            let mut grad = grad.expect("non-empty batch");
            let n = batch.len() as f64;
            scale(&mut grad, 1.0 / n);
            sgd_step(&mut network, &grad, &mut state)?;
            curve.push(loss / n);
        }
    }

    let mut meta = weights.meta.clone();
    meta.training = Some(config.clone());
    meta.input_norm = norm;
    Ok((WeightBundle { meta, network }, curve))
}
