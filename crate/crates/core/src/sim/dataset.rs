//! Rating data: file readers, a synthetic low-rank generator, the per-user
//! train/test split and the staged arrival of training records.

use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{precondition, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rating {
    pub user: usize,
    pub item: usize,
    /// Normalized to `[0, 1]`.
    pub value: f64,
    pub timestamp: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetFormat {
    /// `user \t item \t rating \t timestamp`
    Ml100k,
    /// `user::item::rating::timestamp`
    Ml1m,
    /// `user item rating`, whitespace separated
    Filmtrust,
    Synthetic,
}

impl FromStr for DatasetFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ml100k" | "ml-100k" => Ok(Self::Ml100k),
            "ml1m" | "ml-1m" => Ok(Self::Ml1m),
            "filmtrust" => Ok(Self::Filmtrust),
            "synthetic" => Ok(Self::Synthetic),
            other => Err(Error::Config(format!("unknown dataset format `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingDataset {
    records: Vec<Rating>,
    users: usize,
    items: usize,
}

impl RatingDataset {
    pub fn new(records: Vec<Rating>, users: usize, items: usize) -> Result<Self> {
        for r in &records {
            if r.user >= users || r.item >= items {
                return precondition(format!(
                    "rating ({}, {}) outside {users} users x {items} items",
                    r.user, r.item
                ));
            }
            if !(0.0..=1.0).contains(&r.value) {
                return precondition(format!("rating {} is not normalized", r.value));
            }
        }
        Ok(Self {
            records,
            users,
            items,
        })
    }

    pub fn records(&self) -> &[Rating] {
        &self.records
    }

    pub fn users(&self) -> usize {
        self.users
    }

    pub fn items(&self) -> usize {
        self.items
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn load(path: &Path, format: DatasetFormat) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        parse(std::io::BufReader::new(file), format, &path.display().to_string())
    }
}

fn split_line(line: &str, format: DatasetFormat) -> Vec<&str> {
    match format {
        DatasetFormat::Ml100k => line.split('\t').collect(),
        DatasetFormat::Ml1m => line.split("::").collect(),
        _ => line.split_whitespace().collect(),
    }
}

/// Parses a rating file. Raw ids are remapped to dense indices in sorted
/// order and ratings are min-max scaled to `[0, 1]`.
pub fn parse<R: BufRead>(reader: R, format: DatasetFormat, source: &str) -> Result<RatingDataset> {
    if format == DatasetFormat::Synthetic {
        return Err(Error::Config("synthetic datasets are generated, not parsed".into()));
    }
    let min_fields = if format == DatasetFormat::Filmtrust { 3 } else { 4 };
    let mut raw = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let bad = |message: String| Error::Parse {
            path: source.to_string(),
            line: idx + 1,
            message,
        };
        let fields = split_line(trimmed, format);
        if fields.len() < min_fields {
            return Err(bad(format!(
                "expected {min_fields} fields, found {}",
                fields.len()
            )));
        }
        let user: u64 = fields[0]
            .trim()
            .parse()
            .map_err(|_| bad(format!("bad user id `{}`", fields[0])))?;
        let item: u64 = fields[1]
            .trim()
            .parse()
            .map_err(|_| bad(format!("bad item id `{}`", fields[1])))?;
        let rating: f64 = fields[2]
            .trim()
            .parse()
            .ok()
            .filter(|r: &f64| r.is_finite())
            .ok_or_else(|| bad(format!("bad rating `{}`", fields[2])))?;
        let timestamp: u64 = match fields.get(3) {
            Some(f) if min_fields == 4 => f
                .trim()
                .parse()
                .map_err(|_| bad(format!("bad timestamp `{f}`")))?,
            _ => 0,
        };
        raw.push((user, item, rating, timestamp));
    }
    if raw.is_empty() {
        return Err(Error::Parse {
            path: source.to_string(),
            line: 0,
            message: "no ratings found".into(),
        });
    }
    let users = dense_ids(raw.iter().map(|r| r.0));
    let items = dense_ids(raw.iter().map(|r| r.1));
    let lo = raw.iter().map(|r| r.2).fold(f64::INFINITY, f64::min);
    let hi = raw.iter().map(|r| r.2).fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let records = raw
        .into_iter()
        .map(|(u, i, r, ts)| Rating {
            user: users[&u],
            item: items[&i],
            value: if span > 0.0 { (r - lo) / span } else { 1.0 },
            timestamp: ts,
        })
        .collect();
    RatingDataset::new(records, users.len(), items.len())
}

fn dense_ids(ids: impl Iterator<Item = u64>) -> BTreeMap<u64, usize> {
    let mut map: BTreeMap<u64, usize> = ids.map(|id| (id, 0)).collect();
    for (idx, slot) in map.values_mut().enumerate() {
        *slot = idx;
    }
    map
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub users: usize,
    pub items: usize,
    pub rank: usize,
    /// Fraction of user-item pairs that carry a rating.
    pub density: f64,
    pub noise_std: f64,
    /// Standard deviation of the per-user and per-item logit offsets.
    pub bias_std: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            users: 200,
            items: 100,
            rank: 4,
            density: 0.5,
            noise_std: 0.05,
            bias_std: 0.5,
        }
    }
}

/// Ratings `σ(b_u + b_i + u·v / √rank) + noise` from Gaussian latent factors
/// and offsets, clamped to `[0, 1]`. Every user gets at least two ratings.
pub fn synthetic_low_rank(spec: &SyntheticSpec, seed: u64) -> Result<RatingDataset> {
    if spec.users == 0 || spec.items < 2 || spec.rank == 0 {
        return precondition("synthetic data needs users, at least two items and rank >= 1");
    }
    if !(spec.noise_std >= 0.0 && spec.bias_std >= 0.0) {
        return precondition("noise and offset deviations must be non-negative");
    }
    if !(spec.density > 0.0 && spec.density <= 1.0) {
        return precondition(format!("density must lie in (0, 1], got {}", spec.density));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut factor = |n: usize| -> Vec<f64> {
        (0..n * spec.rank)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect()
    };
    let uf = factor(spec.users);
    let vf = factor(spec.items);
    let mut offsets = |n: usize| -> Vec<f64> {
        (0..n)
            .map(|_| rng.sample::<f64, _>(StandardNormal) * spec.bias_std)
            .collect()
    };
    let ub = offsets(spec.users);
    let ib = offsets(spec.items);
    let scale = (spec.rank as f64).sqrt();
    let per_user = ((spec.items as f64 * spec.density).round() as usize).clamp(2, spec.items);
    let mut items: Vec<usize> = (0..spec.items).collect();
    let mut records = Vec::with_capacity(spec.users * per_user);
    for u in 0..spec.users {
        items.shuffle(&mut rng);
        let mut chosen = items[..per_user].to_vec();
        chosen.sort_unstable();
        for (n, &i) in chosen.iter().enumerate() {
            let dot: f64 = (0..spec.rank)
                .map(|r| uf[u * spec.rank + r] * vf[i * spec.rank + r])
                .sum::<f64>()
                / scale
                + ub[u]
                + ib[i];
            let noise: f64 = rng.sample::<f64, _>(StandardNormal) * spec.noise_std;
            records.push(Rating {
                user: u,
                item: i,
                value: (1.0 / (1.0 + (-dot).exp()) + noise).clamp(0.0, 1.0),
                timestamp: n as u64,
            });
        }
    }
    RatingDataset::new(records, spec.users, spec.items)
}

/// Per-user seeded split; `ratio` is the training fraction. Users with a
/// single rating keep it for training, users with two or more keep at least
/// one on each side.
pub fn split_dataset(
    data: &RatingDataset,
    ratio: f64,
    seed: u64,
) -> Result<(RatingDataset, RatingDataset)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return precondition(format!("split ratio must lie in (0, 1), got {ratio}"));
    }
    let mut by_user: Vec<Vec<Rating>> = vec![Vec::new(); data.users];
    for r in &data.records {
        by_user[r.user].push(*r);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for mut recs in by_user {
        recs.shuffle(&mut rng);
        let n = recs.len();
        let keep = match n {
            0 => 0,
            1 => 1,
            _ => ((ratio * n as f64).round() as usize).clamp(1, n - 1),
        };
        test.extend_from_slice(&recs[keep..]);
        recs.truncate(keep);
        train.extend(recs);
    }
    Ok((
        RatingDataset::new(train, data.users, data.items)?,
        RatingDataset::new(test, data.users, data.items)?,
    ))
}

/// Round in which each training record becomes available.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArrivalSchedule {
    release: Vec<usize>,
    horizon: usize,
}

impl ArrivalSchedule {
    /// A random half of the records arrives in round 1; the rest is shuffled
    /// and cut into `horizon` nearly equal slices, slice `t` arriving in round `t`.
    pub fn new(records: usize, horizon: usize, seed: u64) -> Result<Self> {
        if horizon == 0 {
            return precondition("horizon must be at least 1");
        }
        let mut order: Vec<usize> = (0..records).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let first = records.div_ceil(2);
        let late = records - first;
        let mut release = vec![1; records];
        for (k, &idx) in order[first..].iter().enumerate() {
            release[idx] = 1 + k * horizon / late;
        }
        Ok(Self { release, horizon })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn release_round(&self, record: usize) -> usize {
        self.release[record]
    }

    pub fn is_available(&self, record: usize, round: usize) -> bool {
        self.release[record] <= round
    }

    pub fn available(&self, round: usize) -> impl Iterator<Item = usize> + '_ {
        self.release
            .iter()
            .enumerate()
            .filter(move |(_, r)| **r <= round)
            .map(|(i, _)| i)
    }

    pub fn released_in(&self, round: usize) -> usize {
        self.release.iter().filter(|r| **r == round).count()
    }
}
