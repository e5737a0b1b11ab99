//! Matrix-factorization ranker trained with the BPR pairwise loss.
//!
//! Only here to produce realistic, uncalibrated scores for the calibration
//! stages; it is deliberately minimal.

use std::collections::HashSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{write_json, InteractionDataset, ScoreEntry, ScoreTable};
use crate::math::{sigmoid, softplus};
use crate::{Error, Result};

/// Embeddings stored row-major: row `u` of the user matrix is `user_embeddings[u*d..(u+1)*d]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MFModel {
    pub num_users: u32,
    pub num_items: u32,
    pub d: usize,
    pub user_embeddings: Vec<f64>,
    pub item_embeddings: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub d: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub negatives_per_positive: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            d: 16,
            learning_rate: 0.05,
            weight_decay: 1e-4,
            negatives_per_positive: 1,
            epochs: 20,
            batch_size: 512,
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        let ok = self.d > 0
            && self.learning_rate > 0.0
            && self.learning_rate.is_finite()
            && self.weight_decay >= 0.0
            && self.negatives_per_positive > 0
            && self.epochs > 0
            && self.batch_size > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("ranker config {self:?}")))
        }
    }
}

/// `-ln σ(x)` for the score difference `x = s_ui - s_uj`.
pub fn bpr_loss(x: f64) -> f64 {
    softplus(-x)
}

/// Derivative of [`bpr_loss`] with respect to `x`.
pub fn bpr_grad(x: f64) -> f64 {
    -sigmoid(-x)
}

impl MFModel {
    /// Small uniform initialization in `[-0.01, 0.01]`.
    pub fn init(num_users: u32, num_items: u32, d: usize, rng: &mut impl Rng) -> Self {
        let mut draw = |n: usize| (0..n).map(|_| rng.random_range(-0.01..=0.01)).collect();
        let user_embeddings = draw(num_users as usize * d);
        let item_embeddings = draw(num_items as usize * d);
        Self {
            num_users,
            num_items,
            d,
            user_embeddings,
            item_embeddings,
        }
    }

    pub fn user(&self, u: u32) -> &[f64] {
        let d = self.d;
        &self.user_embeddings[u as usize * d..(u as usize + 1) * d]
    }

    pub fn item(&self, i: u32) -> &[f64] {
        let d = self.d;
        &self.item_embeddings[i as usize * d..(i as usize + 1) * d]
    }

    pub fn score(&self, u: u32, i: u32) -> f64 {
        dot(self.user(u), self.item(i))
    }

    pub fn is_finite(&self) -> bool {
        self.user_embeddings.iter().chain(&self.item_embeddings).all(|v| v.is_finite())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let model: Self = serde_json::from_reader(std::io::BufReader::new(std::fs::File::open(path)?))?;
        let d = model.d;
        if model.user_embeddings.len() != model.num_users as usize * d {
            return Err(Error::LengthMismatch(model.num_users as usize * d, model.user_embeddings.len()));
        }
        if model.item_embeddings.len() != model.num_items as usize * d {
            return Err(Error::LengthMismatch(model.num_items as usize * d, model.item_embeddings.len()));
        }
        Ok(model)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Mean BPR loss over a fixed set of (user, positive, negative) triples.
pub fn mean_bpr_loss(model: &MFModel, triples: &[(u32, u32, u32)]) -> f64 {
    let total: f64 = triples
        .iter()
        .map(|&(u, i, j)| bpr_loss(model.score(u, i) - model.score(u, j)))
        .sum();
    total / triples.len() as f64
}

/// Uniform draw from the items `u` has no positive for; `None` if there are none.
fn sample_negative(rng: &mut ChaCha8Rng, num_items: u32, positives: &HashSet<u32>) -> Option<u32> {
    if positives.len() >= num_items as usize {
        return None;
    }
    loop {
        let j = rng.random_range(0..num_items);
        if !positives.contains(&j) {
            return Some(j);
        }
    }
}

/// Trains an MF model with mini-batch SGD on the BPR objective.
///
/// Each positive is paired with `negatives_per_positive` uniformly sampled
/// non-positive items. Gradients are summed over a mini-batch at fixed
/// parameters and then applied, with L2 weight decay on the touched rows.
pub fn train_bpr(train: &InteractionDataset, cfg: &TrainConfig) -> Result<MFModel> {
    cfg.validate()?;
    let positives_by_user = train.positives_by_user();
    let mut positives: Vec<(u32, u32)> = train
        .records()
        .iter()
        .filter(|r| r.label)
        .map(|r| (r.user, r.item))
        .collect();
    if positives.is_empty() {
        return Err(Error::NoPositives);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = MFModel::init(train.num_users(), train.num_items(), cfg.d, &mut rng);
    let d = cfg.d;
    let lr = cfg.learning_rate;
    let wd = cfg.weight_decay;

    for epoch in 0..cfg.epochs {
        positives.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut epoch_pairs = 0usize;
        for batch in positives.chunks(cfg.batch_size) {
            let mut triples = Vec::with_capacity(batch.len() * cfg.negatives_per_positive);
            for &(u, i) in batch {
                for _ in 0..cfg.negatives_per_positive {
                    if let Some(j) = sample_negative(&mut rng, train.num_items(), &positives_by_user[u as usize]) {
                        triples.push((u, i, j));
                    }
                }
            }
            // Gradients at the batch-start parameters.
            let mut user_updates = Vec::with_capacity(triples.len());
            let mut item_updates = Vec::with_capacity(triples.len() * 2);
            for &(u, i, j) in &triples {
                let (eu, ei, ej) = (model.user(u), model.item(i), model.item(j));
                let x = dot(eu, ei) - dot(eu, ej);
                epoch_loss += bpr_loss(x);
                let g = bpr_grad(x);
                let gu: Vec<f64> = (0..d).map(|k| g * (ei[k] - ej[k]) + wd * eu[k]).collect();
                let gi: Vec<f64> = (0..d).map(|k| g * eu[k] + wd * ei[k]).collect();
                let gj: Vec<f64> = (0..d).map(|k| -g * eu[k] + wd * ej[k]).collect();
                user_updates.push((u, gu));
                item_updates.push((i, gi));
                item_updates.push((j, gj));
            }
            for (u, grad) in user_updates {
                let row = &mut model.user_embeddings[u as usize * d..(u as usize + 1) * d];
                row.iter_mut().zip(&grad).for_each(|(w, g)| *w -= lr * g);
            }
            for (i, grad) in item_updates {
                let row = &mut model.item_embeddings[i as usize * d..(i as usize + 1) * d];
                row.iter_mut().zip(&grad).for_each(|(w, g)| *w -= lr * g);
            }
            epoch_pairs += triples.len();
        }
        let mean = epoch_loss / epoch_pairs.max(1) as f64;
        if !mean.is_finite() || !model.is_finite() {
            return Err(Error::Divergence(mean, epoch));
        }
        log::debug!("bpr epoch {epoch}: mean loss {mean:.6}");
    }
    Ok(model)
}

/// Scores every pair; pairs must be unique and within the model's id ranges.
pub fn score_all(model: &MFModel, pairs: &[(u32, u32)]) -> Result<ScoreTable> {
    if let Some(&(u, i)) = pairs.iter().find(|(u, i)| *u >= model.num_users || *i >= model.num_items) {
        return Err(Error::IdOutOfRange(format!("pair ({u}, {i})")));
    }
    let entries = pairs
        .par_iter()
        .map(|&(user, item)| ScoreEntry {
            user,
            item,
            score: model.score(user, item),
        })
        .collect();
    ScoreTable::new(entries)
}
