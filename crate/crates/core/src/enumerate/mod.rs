//! Slice enumeration.
//!
//! Three algorithms produce the same slice set: [`enumerate_naive`] lists
//! every attribute-tag combination and scans the data for each,
//! [`enumerate_tree`] grows combinations breadth-first and scans only
//! the parent's members, and [`enumerate_efficient`] builds each layer by
//! intersecting matched pairs of surviving slices from the layer below,
//! never expanding under a slice whose count fell below the threshold.

mod efficient;
mod lattice;
mod naive;
mod tree;

use std::collections::BTreeMap;

use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::bitset::MemberSet;
use crate::index::{IndicatorIndex, Pair, SliceKey};

pub use efficient::enumerate_efficient;
pub use lattice::{LatticeError, LatticeNode, SliceLattice, SliceRef, LATTICE_FORMAT_VERSION};
pub use naive::enumerate_naive;
pub use tree::enumerate_tree;

pub const DEFAULT_MIN_COUNT: usize = 10;
pub const DEFAULT_MAX_DEPTH: usize = 3;
pub const DEFAULT_NAIVE_CAP: u64 = 100_000_000;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnumConfig {
    pub max_depth: usize,
    pub min_count: usize,
    /// Upper limit on combinations the naive and tree algorithms will visit.
    #[serde(skip, default = "default_cap")]
    pub naive_cap: u64,
    #[serde(skip, default = "default_threads")]
    pub threads: usize,
}

fn default_cap() -> u64 {
    DEFAULT_NAIVE_CAP
}

fn default_threads() -> usize {
    1
}

impl Default for EnumConfig {
    fn default() -> Self {
        Self {
            max_depth: DEFAULT_MAX_DEPTH,
            min_count: DEFAULT_MIN_COUNT,
            naive_cap: DEFAULT_NAIVE_CAP,
            threads: 1,
        }
    }
}

impl EnumConfig {
    pub fn new(max_depth: usize, min_count: usize) -> Self {
        Self {
            max_depth,
            min_count,
            ..Self::default()
        }
    }

    pub fn with_threads(mut self, threads: usize) -> Self {
        self.threads = threads;
        self
    }

    pub fn with_naive_cap(mut self, cap: u64) -> Self {
        self.naive_cap = cap;
        self
    }

    pub fn validate(&self) -> Result<(), EnumError> {
        if self.max_depth < 1 {
            return Err(EnumError::InvalidConfig("max depth must be at least 1".into()));
        }
        if self.min_count < 1 {
            return Err(EnumError::InvalidConfig("min count must be at least 1".into()));
        }
        if self.threads < 1 {
            return Err(EnumError::InvalidConfig("threads must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EnumError {
    #[error("invalid enumeration config: {0}")]
    InvalidConfig(String),
    #[error("{combinations} combinations exceed the safety cap of {cap} (bound sum_i C(n,i)*max|T|^i = {bound:.3e})")]
    TooManyCombinations { combinations: u128, cap: u64, bound: f64 },
    #[error("thread pool: {0}")]
    ThreadPool(String),
}

/// Exact number of attribute-tag combinations of depth `1..=max_depth`:
/// the elementary symmetric sums of the per-attribute tag counts.
pub fn combination_count(tag_counts: &[usize], max_depth: usize) -> u128 {
    let mut e = vec![0u128; max_depth + 1];
    e[0] = 1;
    for &t in tag_counts {
        for k in (1..=max_depth).rev() {
            e[k] = e[k].saturating_add(e[k - 1].saturating_mul(t as u128));
        }
    }
    e[1..].iter().fold(0u128, |acc, &x| acc.saturating_add(x))
}

/// `sum_{i=1..=max_depth} C(n,i) * max_tags^i`.
pub fn combination_bound(num_attributes: usize, max_tags: usize, max_depth: usize) -> f64 {
    let mut total = 0.0;
    let mut binom = 1.0;
    for i in 1..=max_depth.min(num_attributes) {
        binom = binom * (num_attributes + 1 - i) as f64 / i as f64;
        total += binom * (max_tags as f64).powi(i as i32);
    }
    total
}

pub(crate) fn check_cap(index: &IndicatorIndex, cfg: &EnumConfig) -> Result<(), EnumError> {
    let counts: Vec<usize> = (0..index.num_attributes() as u16).map(|a| index.tag_count(a)).collect();
    let combinations = combination_count(&counts, cfg.max_depth);
    if combinations > cfg.naive_cap as u128 {
        return Err(EnumError::TooManyCombinations {
            combinations,
            cap: cfg.naive_cap,
            bound: combination_bound(index.num_attributes(), index.max_tags(), cfg.max_depth),
        });
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Slice {
    pub key: SliceKey,
    pub members: MemberSet,
}

impl Slice {
    pub fn depth(&self) -> usize {
        self.key.len()
    }

    pub fn count(&self) -> usize {
        self.members.count()
    }
}

/// Slices keyed canonically; the common output form of all three algorithms.
pub type SliceSet = BTreeMap<SliceKey, MemberSet>;

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerStats {
    pub depth: usize,
    /// Candidates generated for the layer (for depth 1, every tag).
    pub candidates: u64,
    /// Candidates whose every parent survived.
    pub parents_alive: u64,
    pub survivors: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EnumStats {
    pub algorithm: String,
    pub layers: Vec<LayerStats>,
    /// Wall time per layer in seconds. Not part of the serialized lattice.
    #[serde(skip)]
    pub layer_seconds: Vec<f64>,
}

impl EnumStats {
    pub fn total_seconds(&self) -> f64 {
        self.layer_seconds.iter().sum()
    }
}

/// Deletes position `skip` from `key`.
pub(crate) fn without(key: &[Pair], skip: usize) -> SliceKey {
    key.iter()
        .enumerate()
        .filter(|&(i, _)| i != skip)
        .map(|(_, p)| *p)
        .collect()
}

/// Every unordered pair of same-depth slices whose keys differ in exactly one
/// attribute, yielded once each as `(i, j)` with `i < j`.
///
/// Each key is hashed under each of its one-pair deletions; keys meeting in a
/// bucket share all but one pair. Pairs whose differing pairs use the same
/// attribute are skipped: their member sets are disjoint.
pub fn match_pairs(layer: &[SliceKey]) -> Vec<(usize, usize)> {
    let mut buckets: FxHashMap<SliceKey, Vec<(usize, Pair)>> = FxHashMap::default();
    for (i, key) in layer.iter().enumerate() {
        for skip in 0..key.len() {
            buckets.entry(without(key, skip)).or_default().push((i, key[skip]));
        }
    }
    let mut out = Vec::new();
    for entries in buckets.values() {
        for (x, &(i, pi)) in entries.iter().enumerate() {
            for &(j, pj) in &entries[x + 1..] {
                if pi.attr != pj.attr {
                    out.push((i.min(j), i.max(j)));
                }
            }
        }
    }
    out.sort_unstable();
    out
}

/// Union of two matched slices' keys, sorted.
pub fn union_key(a: &[Pair], b: &[Pair]) -> SliceKey {
    let mut key: SliceKey = a.iter().chain(b).copied().collect();
    key.sort_unstable();
    key.dedup();
    key
}

/// Builds the child of a matched pair if all of its parents are alive and
/// it keeps at least `min_count` members.
pub fn intersect_candidate(
    s1: &Slice,
    s2: &Slice,
    parent_alive: impl Fn(&[Pair]) -> bool,
    min_count: usize,
) -> Option<Slice> {
    let key = union_key(&s1.key, &s2.key);
    if key.len() != s1.key.len() + 1 || !crate::index::is_canonical(&key) {
        return None;
    }
    for skip in 0..key.len() {
        let parent = without(&key, skip);
        if parent[..] != s1.key[..] && parent[..] != s2.key[..] && !parent_alive(&parent) {
            return None;
        }
    }
    let members = s1.members.intersect_at_least(&s2.members, min_count)?;
    Some(Slice { key, members })
}

/// Runs `f` on a dedicated pool when more than one thread is requested.
pub(crate) fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T, EnumError> {
    if threads <= 1 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| EnumError::ThreadPool(e.to_string()))?;
    Ok(pool.install(f))
}


#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Naive,
    Tree,
    #[default]
    Efficient,
}

impl Algorithm {
    pub const ALL: [Algorithm; 3] = [Algorithm::Naive, Algorithm::Tree, Algorithm::Efficient];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Naive => "naive",
            Algorithm::Tree => "tree",
            Algorithm::Efficient => "efficient",
        }
    }

    /// Runs the algorithm and arranges its output as a lattice.
    pub fn run(self, index: &IndicatorIndex, cfg: &EnumConfig) -> Result<SliceLattice, EnumError> {
        match self {
            Algorithm::Naive => Ok(SliceLattice::from_slice_set(
                index,
                cfg,
                enumerate_naive(index, cfg)?,
                "naive",
            )),
            Algorithm::Tree => Ok(SliceLattice::from_slice_set(
                index,
                cfg,
                enumerate_tree(index, cfg)?,
                "tree",
            )),
            Algorithm::Efficient => enumerate_efficient(index, cfg),
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| format!("unknown algorithm `{s}` (expected naive, tree or efficient)"))
    }
}
