//! Reward-model regression on labelled transitions, hand-built oracle
//! networks, and checkpoint files.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::gridworld::{Transition, CELLS, GRID, INPUT_DIM, STRIP_ROW};
use crate::tensor::{init_net, train_step_with, Activation, Layer, OptimizerState, RewardNet, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Reward-1 transitions are duplicated until they make up at least this
    /// fraction of the training split.
    pub positive_fraction: f64,
    pub seed: u64,
    pub validation_fraction: f64,
    #[serde(skip)]
    pub exec: Exec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            epochs: 20,
            batch_size: 64,
            learning_rate: 1e-3,
            positive_fraction: 0.25,
            seed: 1,
            validation_fraction: 0.1,
            exec: Exec::default(),
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.hidden.contains(&0) || self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::usage("hidden widths, epochs and batch size must be positive"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::usage("learning rate must be positive"));
        }
        if !(self.positive_fraction > 0.0 && self.positive_fraction < 1.0) {
            return Err(Error::usage("positive fraction must lie in (0, 1)"));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::usage("validation fraction must lie in (0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetBalance {
    pub positives: usize,
    pub negatives: usize,
    pub train_transitions: usize,
    /// Training transitions after positive duplication.
    pub train_oversampled: usize,
    pub train_positives_oversampled: usize,
    pub validation_transitions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epoch_train_mse: Vec<f64>,
    pub validation_mse: f64,
    pub validation_accuracy: f64,
    pub balance: DatasetBalance,
    /// Episode ids held out for validation.
    pub validation_episodes: Vec<u64>,
}

/// Episode id of a transition; transitions without metadata count as their
/// own episode.
fn episode_of(t: &Transition, index: usize) -> u64 {
    t.meta.as_ref().map_or(u64::MAX - index as u64, |m| m.episode)
}

/// Splits transition indices into (train, validation) by whole episodes.
fn split_by_episode(data: &[Transition], fraction: f64, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>, Vec<u64>) {
    let episodes: BTreeSet<u64> = data.iter().enumerate().map(|(i, t)| episode_of(t, i)).collect();
    let mut episodes: Vec<u64> = episodes.into_iter().collect();
    episodes.shuffle(rng);
    let n_val = ((episodes.len() as f64 * fraction).round() as usize).clamp(1, episodes.len().saturating_sub(1).max(1));
    let mut held: Vec<u64> = episodes[..n_val].to_vec();
    held.sort_unstable();
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (i, t) in data.iter().enumerate() {
        if held.binary_search(&episode_of(t, i)).is_ok() {
            val.push(i);
        } else {
            train.push(i);
        }
    }
    (train, val, held)
}

/// Appends copies of positive indices (cycling in order) until positives reach
/// `fraction` of the set.
fn oversample_positives(data: &[Transition], idx: &mut Vec<usize>, fraction: f64) -> usize {
    let positives: Vec<usize> = idx.iter().copied().filter(|&i| data[i].reward > 0.5).collect();
    let mut n_pos = positives.len();
    if n_pos == 0 {
        return 0;
    }
    let mut k = 0;
    while (n_pos as f64) < fraction * idx.len() as f64 {
        idx.push(positives[k % positives.len()]);
        n_pos += 1;
        k += 1;
    }
    n_pos
}

/// Mean squared error and 0/1 accuracy at threshold 0.5.
pub fn evaluate_model(net: &RewardNet, data: &[Transition], exec: Exec) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Err(Error::usage("evaluation set is empty"));
    }
    let preds = exec.map_slice(data, |t| net.forward(&t.encode()));
    let (mut sse, mut correct) = (0.0, 0usize);
    for (p, t) in preds.into_iter().zip(data) {
        let p = p?;
        sse += (p - t.reward).powi(2);
        if (p >= 0.5) == (t.reward >= 0.5) {
            correct += 1;
        }
    }
    let n = data.len() as f64;
    Ok((sse / n, correct as f64 / n))
}

/// Trains `R(s, s')` by mean-squared regression onto the transition labels.
pub fn train_reward_model(data: &[Transition], config: &TrainConfig) -> Result<(RewardNet, TrainReport)> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::usage("dataset is empty"));
    }
    let positives = data.iter().filter(|t| t.reward > 0.5).count();
    let negatives = data.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::usage("dataset contains a single reward class; regression is degenerate"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (mut train_idx, val_idx, validation_episodes) = split_by_episode(data, config.validation_fraction, &mut rng);
    let train_transitions = train_idx.len();
    let train_positives_oversampled = oversample_positives(data, &mut train_idx, config.positive_fraction);

    let mut arch = vec![INPUT_DIM];
    arch.extend(&config.hidden);
    arch.push(1);
    let mut net = init_net(&arch, config.seed)?;
    let mut opt = OptimizerState::adam(&net, config.learning_rate);

    let inputs: Vec<Vec<f64>> = config.exec.map_slice(data, Transition::encode);
    let mut epoch_train_mse = Vec::with_capacity(config.epochs);
    let mut order = train_idx.clone();
    let mut batch: Vec<(Vec<f64>, f64)> = Vec::with_capacity(config.batch_size);
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut weighted = 0.0;
        for chunk in order.chunks(config.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| (inputs[i].clone(), data[i].reward)));
            weighted += train_step_with(&mut net, &batch, &mut opt, config.exec)? * chunk.len() as f64;
        }
        epoch_train_mse.push(weighted / order.len() as f64);
    }

    let val: Vec<Transition> = val_idx.iter().map(|&i| data[i].clone()).collect();
    let (validation_mse, validation_accuracy) = evaluate_model(&net, &val, config.exec)?;
    let report = TrainReport {
        epoch_train_mse,
        validation_mse,
        validation_accuracy,
        balance: DatasetBalance {
            positives,
            negatives,
            train_transitions,
            train_oversampled: train_idx.len(),
            train_positives_oversampled,
            validation_transitions: val_idx.len(),
        },
        validation_episodes,
    };
    Ok((net, report))
}

fn layer(rows: usize, cols: usize, w: Vec<f64>, b: Vec<f64>, act: Activation) -> Layer {
    Layer::new(
        Tensor::new(vec![rows, cols], w).expect("oracle weight shape"),
        Tensor::vector(b).expect("oracle bias shape"),
        act,
    )
    .expect("oracle layer")
}

/// `R(s, s') = 1 - #(goal cells visible in s')`.
///
/// Each `s'` pixel feeds a "hat" made of three ReLUs,
/// `relu(4x-1) - 2 relu(4x-2) + relu(4x-3)`, which is 1 at the goal
/// intensity 0.5 and 0 at 0, 0.75 and 1. The `s` half of the input has zero
/// weight.
pub fn make_quirk_oracle() -> RewardNet {
    let hidden = 3 * CELLS;
    let mut w = vec![0.0; hidden * INPUT_DIM];
    let mut b = vec![0.0; hidden];
    for j in 0..CELLS {
        for (k, offset) in [1.0, 2.0, 3.0].into_iter().enumerate() {
            let unit = 3 * j + k;
            w[unit * INPUT_DIM + CELLS + j] = 4.0;
            b[unit] = -offset;
        }
    }
    let out_w: Vec<f64> = (0..hidden).map(|u| [-1.0, 2.0, -1.0][u % 3]).collect();
    RewardNet::new(
        INPUT_DIM,
        vec![
            layer(hidden, INPUT_DIM, w, b, Activation::Relu),
            layer(1, hidden, out_w, vec![1.0], Activation::Linear),
        ],
    )
    .expect("quirk oracle")
}

/// `R(s, s') = sum over score-strip cells of relu(x'_j - x_j)`: pays for any
/// strip cell that brightens between frames and reads nothing else.
pub fn make_score_oracle() -> RewardNet {
    let mut w = vec![0.0; GRID * INPUT_DIM];
    for col in 0..GRID {
        let cell = STRIP_ROW * GRID + col;
        w[col * INPUT_DIM + cell] = -1.0;
        w[col * INPUT_DIM + CELLS + cell] = 1.0;
    }
    RewardNet::new(
        INPUT_DIM,
        vec![
            layer(GRID, INPUT_DIM, w, vec![0.0; GRID], Activation::Relu),
            layer(1, GRID, vec![1.0; GRID], vec![0.0], Activation::Linear),
        ],
    )
    .expect("score oracle")
}

pub fn save_checkpoint(net: &RewardNet, path: &Path) -> Result<()> {
    std::fs::write(path, net.to_checkpoint_json()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<RewardNet> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    RewardNet::from_checkpoint_json(&text).map_err(|e| match e {
        Error::Format { location, message } => Error::Format {
            location: format!("{}: {location}", path.display()),
            message,
        },
        other => other,
    })
}
