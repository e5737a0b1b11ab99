//! Simulated missing-not-at-random feedback with known ground truth.
//!
//! Every (user, item) pair has a true preference probability `rho` and every
//! item an exposure probability `omega`. A sample draws exposure `O ~ Bern(omega)`
//! and relevance `R ~ Bern(rho)` independently and records the click `Y = O * R`.
//!
//! Generation order for a given seed (all from one ChaCha8 stream):
//! item preference means, then per-pair preferences in user-major order,
//! then the item popularity permutation, then score noise in user-major order.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::calibrators::ParametricParams;
use crate::dataset::{Interaction, InteractionDataset, Role, ScoreEntry, ScoreTable};
use crate::fitting::{risk_with_targets, LossKind};
use crate::math::logit;
use crate::{Error, Result};

/// Preferences are clamped to `[RHO_CLAMP, 1 - RHO_CLAMP]` before taking the logit.
pub const RHO_CLAMP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub num_users: u32,
    pub num_items: u32,
    /// Mean of the preference distribution.
    pub mean_rho: f64,
    /// Concentration of item-level preference means around `mean_rho`.
    pub kappa_item: f64,
    /// Concentration of a user's preference around the item mean.
    pub kappa_user: f64,
    /// `omega_i = rank_i^(-popularity_skew)`; 0 exposes every item with probability 1.
    pub popularity_skew: f64,
    pub omega_floor: f64,
    pub score_noise_sd: f64,
    /// Items per user held out with unbiased (relevance) labels.
    pub test_items_per_user: u32,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            num_users: 500,
            num_items: 100,
            mean_rho: 0.1,
            kappa_item: 10.0,
            kappa_user: 20.0,
            popularity_skew: 0.4,
            omega_floor: 0.05,
            score_noise_sd: 1.0,
            test_items_per_user: 10,
        }
    }
}

impl SyntheticConfig {
    fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidConfig(format!("synthetic {what}")));
        if self.num_users == 0 || self.num_items == 0 {
            return bad("counts must be positive");
        }
        if !(self.mean_rho > 0.0 && self.mean_rho < 1.0) {
            return bad("mean_rho must lie in (0, 1)");
        }
        if !(self.kappa_item > 0.0 && self.kappa_user > 0.0) {
            return bad("concentrations must be positive");
        }
        if !(self.popularity_skew >= 0.0 && self.popularity_skew.is_finite()) {
            return bad("popularity_skew must be non-negative");
        }
        if !(self.omega_floor > 0.0 && self.omega_floor <= 1.0) {
            return bad("omega_floor must lie in (0, 1]");
        }
        if !(self.score_noise_sd >= 0.0 && self.score_noise_sd.is_finite()) {
            return bad("score_noise_sd must be non-negative");
        }
        if self.test_items_per_user > self.num_items {
            return bad("test_items_per_user exceeds num_items");
        }
        Ok(())
    }
}

/// Ground truth for every pair. Per-pair vectors are user-major: pair `(u, i)` sits at `u * num_items + i`.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticWorld {
    pub num_users: u32,
    pub num_items: u32,
    pub rho: Vec<f64>,
    /// Per-item exposure probability.
    pub omega: Vec<f64>,
    pub scores: Vec<f64>,
    pub score_noise_sd: f64,
    pub test_items_per_user: u32,
    pub seed: u64,
}

impl SyntheticWorld {
    /// World from explicit ground truth; `scores` default to `logit(clamp(rho))`.
    pub fn from_parts(
        num_users: u32,
        num_items: u32,
        rho: Vec<f64>,
        omega: Vec<f64>,
        scores: Option<Vec<f64>>,
    ) -> Result<Self> {
        let pairs = num_users as usize * num_items as usize;
        if pairs == 0 {
            return Err(Error::EmptyInput);
        }
        if rho.len() != pairs {
            return Err(Error::LengthMismatch(pairs, rho.len()));
        }
        if omega.len() != num_items as usize {
            return Err(Error::LengthMismatch(num_items as usize, omega.len()));
        }
        if let Some(&p) = rho.iter().chain(&omega).find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::ProbabilityOutOfRange(p));
        }
        let scores = match scores {
            Some(s) if s.len() != pairs => return Err(Error::LengthMismatch(pairs, s.len())),
            Some(s) => s,
            None => rho.iter().map(|&r| noiseless_score(r)).collect(),
        };
        Ok(Self {
            num_users,
            num_items,
            rho,
            omega,
            scores,
            score_noise_sd: 0.0,
            test_items_per_user: 0,
            seed: 0,
        })
    }

    pub fn num_pairs(&self) -> usize {
        self.rho.len()
    }

    pub fn pair(&self, k: usize) -> (u32, u32) {
        ((k / self.num_items as usize) as u32, (k % self.num_items as usize) as u32)
    }

    pub fn index(&self, user: u32, item: u32) -> usize {
        user as usize * self.num_items as usize + item as usize
    }

    /// Exposure probability of every pair, user-major.
    pub fn omega_per_pair(&self) -> Vec<f64> {
        (0..self.num_pairs()).map(|k| self.omega[k % self.num_items as usize]).collect()
    }

    /// Writes `rho.csv` (`user,item,rho`) and `omega.csv` (`item,omega`) into `dir`.
    pub fn write_ground_truth(&self, dir: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(dir.join("rho.csv"))?;
        w.write_record(["user", "item", "rho"])?;
        for (k, r) in self.rho.iter().enumerate() {
            let (u, i) = self.pair(k);
            w.write_record([u.to_string(), i.to_string(), r.to_string()])?;
        }
        w.flush()?;
        let mut w = csv::Writer::from_path(dir.join("omega.csv"))?;
        w.write_record(["item", "omega"])?;
        for (i, o) in self.omega.iter().enumerate() {
            w.write_record([i.to_string(), o.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn noiseless_score(rho: f64) -> f64 {
    logit(rho.clamp(RHO_CLAMP, 1.0 - RHO_CLAMP))
}

fn beta(a: f64, b: f64) -> Result<Beta<f64>> {
    Beta::new(a, b).map_err(|e| Error::InvalidConfig(format!("beta({a}, {b}): {e}")))
}

/// Draws a world: item means `rho_i ~ Beta(m k_item, (1 - m) k_item)`, pair
/// preferences `rho_ui ~ Beta(rho_i k_user, (1 - rho_i) k_user)` (so the mean stays `m`),
/// popularity-ranked exposure `omega_i = max(rank^(-skew), floor)` and scores
/// `logit(rho_ui) + N(0, sd)`.
pub fn generate_world(config: &SyntheticConfig, seed: u64) -> Result<SyntheticWorld> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (nu, ni) = (config.num_users as usize, config.num_items as usize);
    let m = config.mean_rho;

    let item_dist = beta(m * config.kappa_item, (1.0 - m) * config.kappa_item)?;
    let item_means: Vec<f64> = (0..ni).map(|_| item_dist.sample(&mut rng)).collect();

    // Item means can underflow to exactly 0 or 1, which the user-level Beta rejects.
    let tiny = f64::MIN_POSITIVE;
    let user_dists = item_means
        .iter()
        .map(|&r| {
            let r = r.clamp(tiny, 1.0 - f64::EPSILON);
            beta(r * config.kappa_user, (1.0 - r) * config.kappa_user)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rho = Vec::with_capacity(nu * ni);
    for _ in 0..nu {
        for dist in &user_dists {
            rho.push(dist.sample(&mut rng));
        }
    }

    let mut ranks: Vec<usize> = (1..=ni).collect();
    ranks.shuffle(&mut rng);
    let omega: Vec<f64> = ranks
        .iter()
        .map(|&r| (r as f64).powf(-config.popularity_skew).max(config.omega_floor).min(1.0))
        .collect();

    let noise = Normal::new(0.0, config.score_noise_sd)
        .map_err(|e| Error::InvalidConfig(format!("score noise: {e}")))?;
    let scores = rho
        .iter()
        .map(|&r| {
            let s = noiseless_score(r);
            if config.score_noise_sd > 0.0 {
                s + noise.sample(&mut rng)
            } else {
                s
            }
        })
        .collect();

    Ok(SyntheticWorld {
        num_users: config.num_users,
        num_items: config.num_items,
        rho,
        omega,
        scores,
        score_noise_sd: config.score_noise_sd,
        test_items_per_user: config.test_items_per_user,
        seed,
    })
}

/// One draw of exposure, relevance and clicks for every pair.
#[derive(Debug, Clone)]
pub struct WorldSample {
    pub observed: Vec<bool>,
    pub relevant: Vec<bool>,
    /// `observed & relevant`.
    pub clicks: Vec<bool>,
    /// Pairs outside the test set, labelled with clicks.
    pub train: InteractionDataset,
    /// `test_items_per_user` uniformly chosen items per user, labelled with relevance.
    pub test: InteractionDataset,
}

/// Samples `O ~ Bern(omega)` and `R ~ Bern(rho)` independently per pair.
pub fn sample_world(world: &SyntheticWorld, seed: u64) -> Result<WorldSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = world.num_pairs();
    let ni = world.num_items as usize;
    let mut observed = Vec::with_capacity(n);
    let mut relevant = Vec::with_capacity(n);
    for k in 0..n {
        observed.push(rng.random::<f64>() < world.omega[k % ni]);
        relevant.push(rng.random::<f64>() < world.rho[k]);
    }
    let clicks: Vec<bool> = observed.iter().zip(&relevant).map(|(&o, &r)| o && r).collect();

    let mut in_test = vec![false; n];
    let mut items: Vec<u32> = (0..world.num_items).collect();
    for u in 0..world.num_users {
        let (chosen, _) = items.partial_shuffle(&mut rng, world.test_items_per_user as usize);
        for &i in chosen.iter() {
            in_test[world.index(u, i)] = true;
        }
    }

    let mut train = Vec::with_capacity(n);
    let mut test = Vec::new();
    for k in 0..n {
        let (user, item) = world.pair(k);
        if in_test[k] {
            test.push(Interaction { user, item, label: relevant[k] });
        } else {
            train.push(Interaction { user, item, label: clicks[k] });
        }
    }
    Ok(WorldSample {
        observed,
        relevant,
        clicks,
        train: InteractionDataset::new(world.num_users, world.num_items, train, Role::Train)?,
        test: InteractionDataset::new(world.num_users, world.num_items, test, Role::TestUnbiased)?,
    })
}

/// The world's scores for every pair.
pub fn scores_from_world(world: &SyntheticWorld) -> Result<ScoreTable> {
    let entries = world
        .scores
        .iter()
        .enumerate()
        .map(|(k, &score)| {
            let (user, item) = world.pair(k);
            ScoreEntry { user, item, score }
        })
        .collect();
    ScoreTable::new(entries)
}

/// Expected risk over all pairs with the label expectation taken analytically.
///
/// With `E[Y] = omega * rho` the expected per-pair target is `omega * rho` (naive),
/// `rho` (ideal) or `omega * rho / omega_hat` (uerm); the loss is linear in the
/// target so plugging it in gives the exact expectation. `omega_hat` is per item.
pub fn exact_expected_risk(
    params: &ParametricParams,
    world: &SyntheticWorld,
    omega_hat: Option<&[f64]>,
    kind: LossKind,
) -> Result<f64> {
    let ni = world.num_items as usize;
    let targets: Vec<f64> = match kind {
        LossKind::Naive => (0..world.num_pairs()).map(|k| world.omega[k % ni] * world.rho[k]).collect(),
        LossKind::Ideal => world.rho.clone(),
        LossKind::Uerm => {
            let hat = omega_hat.ok_or(Error::IncompleteLossSpec("uerm needs omega_hat"))?;
            if hat.len() != ni {
                return Err(Error::LengthMismatch(ni, hat.len()));
            }
            if let Some(&w) = hat.iter().find(|w| !(**w > 0.0)) {
                return Err(Error::ZeroPropensity(w));
            }
            (0..world.num_pairs())
                .map(|k| world.omega[k % ni] * world.rho[k] / hat[k % ni])
                .collect()
        }
    };
    Ok(risk_with_targets(params, &world.scores, &targets))
}
