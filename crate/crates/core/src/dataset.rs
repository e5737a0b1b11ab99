//! Interaction datasets, ranking-score tables and their CSV forms.
//!
//! Raw user and item identifiers are re-indexed to dense `u32` ranges at load
//! time. The [`IdMap`] that performs the re-indexing is shared between the
//! train and test files so both refer to the same dense ids.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Train,
    Validation,
    /// Uniformly sampled pairs whose labels are preferences (`O = 1` everywhere).
    TestUnbiased,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Interaction {
    pub user: u32,
    pub item: u32,
    pub label: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InteractionDataset {
    num_users: u32,
    num_items: u32,
    records: Vec<Interaction>,
    role: Role,
}

impl InteractionDataset {
    /// Builds a dataset, rejecting out-of-range ids and duplicate pairs.
    pub fn new(num_users: u32, num_items: u32, records: Vec<Interaction>, role: Role) -> Result<Self> {
        let mut seen = HashSet::with_capacity(records.len());
        for r in &records {
            if r.user >= num_users {
                return Err(Error::IdOutOfRange(format!("user {} >= {}", r.user, num_users)));
            }
            if r.item >= num_items {
                return Err(Error::IdOutOfRange(format!("item {} >= {}", r.item, num_items)));
            }
            if !seen.insert((r.user, r.item)) {
                return Err(Error::DuplicatePair {
                    user: r.user.to_string(),
                    item: r.item.to_string(),
                });
            }
        }
        Ok(Self {
            num_users,
            num_items,
            records,
            role,
        })
    }

    pub fn num_users(&self) -> u32 {
        self.num_users
    }

    pub fn num_items(&self) -> u32 {
        self.num_items
    }

    pub fn records(&self) -> &[Interaction] {
        &self.records
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn num_positives(&self) -> usize {
        self.records.iter().filter(|r| r.label).count()
    }

    pub fn pairs(&self) -> Vec<(u32, u32)> {
        self.records.iter().map(|r| (r.user, r.item)).collect()
    }

    /// Widens the declared id ranges, e.g. after a later file grew the shared id map.
    pub fn with_dimensions(mut self, num_users: u32, num_items: u32) -> Result<Self> {
        if num_users < self.num_users || num_items < self.num_items {
            return Err(Error::InvalidArgument(
                "dataset dimensions can only grow".to_string(),
            ));
        }
        self.num_users = num_users;
        self.num_items = num_items;
        Ok(self)
    }

    pub fn with_role(mut self, role: Role) -> Self {
        self.role = role;
        self
    }

    /// Positive item sets per user.
    pub fn positives_by_user(&self) -> Vec<HashSet<u32>> {
        let mut out = vec![HashSet::new(); self.num_users as usize];
        for r in self.records.iter().filter(|r| r.label) {
            out[r.user as usize].insert(r.item);
        }
        out
    }
}

/// Bijection between raw identifiers and dense ids.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdMap {
    users: Vec<String>,
    items: Vec<String>,
    #[serde(skip)]
    user_index: HashMap<String, u32>,
    #[serde(skip)]
    item_index: HashMap<String, u32>,
}

impl IdMap {
    pub fn new() -> Self {
        Self::default()
    }

    /// Dense ids that are their own raw ids ("0", "1", ...).
    pub fn identity(num_users: u32, num_items: u32) -> Self {
        let mut map = Self::new();
        for u in 0..num_users {
            map.user_id(&u.to_string());
        }
        for i in 0..num_items {
            map.item_id(&i.to_string());
        }
        map
    }

    pub fn user_id(&mut self, raw: &str) -> u32 {
        intern(&mut self.users, &mut self.user_index, raw)
    }

    pub fn item_id(&mut self, raw: &str) -> u32 {
        intern(&mut self.items, &mut self.item_index, raw)
    }

    pub fn lookup_user(&self, raw: &str) -> Option<u32> {
        self.user_index.get(raw).copied()
    }

    pub fn lookup_item(&self, raw: &str) -> Option<u32> {
        self.item_index.get(raw).copied()
    }

    pub fn raw_user(&self, dense: u32) -> Option<&str> {
        self.users.get(dense as usize).map(String::as_str)
    }

    pub fn raw_item(&self, dense: u32) -> Option<&str> {
        self.items.get(dense as usize).map(String::as_str)
    }

    pub fn num_users(&self) -> u32 {
        self.users.len() as u32
    }

    pub fn num_items(&self) -> u32 {
        self.items.len() as u32
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path)?;
        serde_json::to_writer_pretty(file, self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut map: IdMap = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        map.rebuild_index()?;
        Ok(map)
    }

    fn rebuild_index(&mut self) -> Result<()> {
        self.user_index = index_of(&self.users)?;
        self.item_index = index_of(&self.items)?;
        Ok(())
    }
}

fn intern(names: &mut Vec<String>, index: &mut HashMap<String, u32>, raw: &str) -> u32 {
    if let Some(&id) = index.get(raw) {
        return id;
    }
    let id = names.len() as u32;
    names.push(raw.to_string());
    index.insert(raw.to_string(), id);
    id
}

fn index_of(names: &[String]) -> Result<HashMap<String, u32>> {
    let mut index = HashMap::with_capacity(names.len());
    for (i, name) in names.iter().enumerate() {
        if index.insert(name.clone(), i as u32).is_some() {
            return Err(Error::InvalidArgument(format!("id map lists `{name}` twice")));
        }
    }
    Ok(index)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FileFormat {
    Csv,
    Tsv,
}

impl FileFormat {
    fn delimiter(self) -> u8 {
        match self {
            FileFormat::Csv => b',',
            FileFormat::Tsv => b'\t',
        }
    }

    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("tsv") => FileFormat::Tsv,
            _ => FileFormat::Csv,
        }
    }
}

/// How the `value` column turns into a binary label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum LabelMode {
    /// Ratings at or above `threshold` are positive.
    Rating { threshold: f64 },
    /// The value is already 0 or 1.
    Binary,
}

impl Default for LabelMode {
    fn default() -> Self {
        LabelMode::Rating { threshold: 4.0 }
    }
}

impl LabelMode {
    fn label(self, value: f64) -> std::result::Result<bool, String> {
        match self {
            LabelMode::Rating { threshold } => Ok(value >= threshold),
            LabelMode::Binary if value == 0.0 => Ok(false),
            LabelMode::Binary if value == 1.0 => Ok(true),
            LabelMode::Binary => Err(format!("binary label must be 0 or 1, got {value}")),
        }
    }
}

/// Reads a `user,item,value` file, extending `ids` with unseen raw ids.
///
/// The returned dataset spans the id map as it stands after loading.
pub fn load_interactions(
    path: &Path,
    format: FileFormat,
    mode: LabelMode,
    role: Role,
    ids: &mut IdMap,
) -> Result<InteractionDataset> {
    let file = File::open(path)?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(format.delimiter())
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(BufReader::new(file));

    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for row in reader.records() {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let malformed = |reason: String| Error::MalformedRow {
            path: path.to_path_buf(),
            line,
            reason,
        };
        if row.len() != 3 {
            return Err(malformed(format!("expected 3 fields, found {}", row.len())));
        }
        let (raw_user, raw_item) = (&row[0], &row[1]);
        if raw_user.is_empty() || raw_item.is_empty() {
            return Err(malformed("empty id".to_string()));
        }
        let value: f64 = row[2]
            .parse()
            .map_err(|_| malformed(format!("value `{}` is not a number", &row[2])))?;
        if !value.is_finite() {
            return Err(malformed(format!("value `{}` is not finite", &row[2])));
        }
        let label = mode.label(value).map_err(malformed)?;
        let user = ids.user_id(raw_user);
        let item = ids.item_id(raw_item);
        if !seen.insert((user, item)) {
            return Err(Error::DuplicatePair {
                user: raw_user.to_string(),
                item: raw_item.to_string(),
            });
        }
        records.push(Interaction { user, item, label });
    }
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    InteractionDataset::new(ids.num_users(), ids.num_items(), records, role)
}

/// Writes `user,item,value` rows with raw ids from `ids`, or dense ids when absent.
pub fn write_interactions(
    dataset: &InteractionDataset,
    path: &Path,
    format: FileFormat,
    ids: Option<&IdMap>,
) -> Result<()> {
    let mut writer = csv::WriterBuilder::new()
        .delimiter(format.delimiter())
        .from_path(path)?;
    writer.write_record(["user", "item", "value"])?;
    for r in dataset.records() {
        let (user, item) = raw_pair(ids, r.user, r.item)?;
        writer.write_record([user, item, if r.label { "1".into() } else { "0".into() }])?;
    }
    writer.flush()?;
    Ok(())
}

fn raw_pair(ids: Option<&IdMap>, user: u32, item: u32) -> Result<(String, String)> {
    match ids {
        None => Ok((user.to_string(), item.to_string())),
        Some(map) => {
            let u = map
                .raw_user(user)
                .ok_or_else(|| Error::IdOutOfRange(format!("user {user}")))?;
            let i = map
                .raw_item(item)
                .ok_or_else(|| Error::IdOutOfRange(format!("item {item}")))?;
            Ok((u.to_string(), i.to_string()))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            validation_fraction: 0.1,
            seed: 0,
        }
    }
}

/// Uniform record-level holdout. Both halves keep the input's record order.
pub fn split_train_validation(
    dataset: &InteractionDataset,
    cfg: &SplitConfig,
) -> Result<(InteractionDataset, InteractionDataset)> {
    let f = cfg.validation_fraction;
    if !(f > 0.0 && f < 1.0) {
        return Err(Error::InvalidFraction(f));
    }
    if dataset.role() != Role::Train {
        return Err(Error::InvalidArgument(
            "only a training dataset can be split".to_string(),
        ));
    }
    let n = dataset.len();
    let n_val = (f * n as f64).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
    let mut in_validation = vec![false; n];
    for &i in &order[..n_val] {
        in_validation[i] = true;
    }
    let (mut train, mut val) = (Vec::with_capacity(n - n_val), Vec::with_capacity(n_val));
    for (r, &v) in dataset.records().iter().zip(&in_validation) {
        if v {
            val.push(*r);
        } else {
            train.push(*r);
        }
    }
    Ok((
        InteractionDataset::new(dataset.num_users, dataset.num_items, train, Role::Train)?,
        InteractionDataset::new(dataset.num_users, dataset.num_items, val, Role::Validation)?,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreEntry {
    pub user: u32,
    pub item: u32,
    pub score: f64,
}

/// Ranking scores for a set of (user, item) pairs.
#[derive(Debug, Clone)]
pub struct ScoreTable {
    entries: Vec<ScoreEntry>,
    index: HashMap<(u32, u32), usize>,
    s_min: f64,
    s_max: f64,
}

impl ScoreTable {
    pub fn new(entries: Vec<ScoreEntry>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::EmptyInput);
        }
        let mut index = HashMap::with_capacity(entries.len());
        let (mut s_min, mut s_max) = (f64::INFINITY, f64::NEG_INFINITY);
        for (k, e) in entries.iter().enumerate() {
            if !e.score.is_finite() {
                return Err(Error::NonFiniteScore {
                    user: e.user,
                    item: e.item,
                });
            }
            if index.insert((e.user, e.item), k).is_some() {
                return Err(Error::DuplicatePair {
                    user: e.user.to_string(),
                    item: e.item.to_string(),
                });
            }
            s_min = s_min.min(e.score);
            s_max = s_max.max(e.score);
        }
        Ok(Self {
            entries,
            index,
            s_min,
            s_max,
        })
    }

    pub fn entries(&self) -> &[ScoreEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn s_min(&self) -> f64 {
        self.s_min
    }

    pub fn s_max(&self) -> f64 {
        self.s_max
    }

    pub fn get(&self, user: u32, item: u32) -> Option<f64> {
        self.index.get(&(user, item)).map(|&k| self.entries[k].score)
    }

    /// Scores for each record of `dataset`, in record order.
    pub fn scores_for(&self, dataset: &InteractionDataset) -> Result<Vec<f64>> {
        dataset
            .records()
            .iter()
            .map(|r| {
                self.get(r.user, r.item).ok_or(Error::MissingScore {
                    user: r.user,
                    item: r.item,
                })
            })
            .collect()
    }

    /// Writes `user,item,score`; scores use the shortest representation that round-trips.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["user", "item", "score"])?;
        for e in &self.entries {
            w.write_record([e.user.to_string(), e.item.to_string(), e.score.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path)?;
        let mut entries = Vec::new();
        for row in reader.deserialize() {
            let e: ScoreEntry = row?;
            entries.push(e);
        }
        if entries.is_empty() {
            return Err(Error::EmptyDataset);
        }
        Self::new(entries)
    }
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut file = File::create(path)?;
    serde_json::to_writer_pretty(&mut file, value)?;
    file.write_all(b"\n")?;
    Ok(())
}
