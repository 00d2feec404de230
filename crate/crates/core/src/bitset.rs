//! Sample membership sets.
//!
//! A [`BitVector`] is a fixed-length dense bit array. A [`MemberSet`] is the
//! form slices store: dense words when the set is large, a sorted position
//! list when it is small. The representation is a pure function of
//! `(len, count)`, so two equal sets always compare equal structurally.

use std::fmt;

use smallvec::SmallVec;

const WORD_BITS: usize = 64;

#[inline]
fn words_for(len: usize) -> usize {
    len.div_ceil(WORD_BITS)
}

#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BitVector {
    len: usize,
    words: Vec<u64>,
}

impl BitVector {
    pub fn zeros(len: usize) -> Self {
        Self {
            len,
            words: vec![0; words_for(len)],
        }
    }

    pub fn from_positions(len: usize, positions: impl IntoIterator<Item = u32>) -> Self {
        let mut bits = Self::zeros(len);
        for p in positions {
            bits.set(p as usize);
        }
        bits
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.len
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn words(&self) -> &[u64] {
        &self.words
    }

    #[inline]
    pub fn set(&mut self, pos: usize) {
        assert!(pos < self.len, "bit {pos} out of range for length {}", self.len);
        self.words[pos / WORD_BITS] |= 1u64 << (pos % WORD_BITS);
    }

    #[inline]
    pub fn get(&self, pos: usize) -> bool {
        pos < self.len && self.words[pos / WORD_BITS] & (1u64 << (pos % WORD_BITS)) != 0
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Popcount of `self & other` without materializing the result.
    pub fn and_count(&self, other: &BitVector) -> usize {
        debug_assert_eq!(self.len, other.len);
        self.words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a & b).count_ones() as usize)
            .sum()
    }

    pub fn and(&self, other: &BitVector) -> BitVector {
        debug_assert_eq!(self.len, other.len);
        BitVector {
            len: self.len,
            words: self.words.iter().zip(&other.words).map(|(a, b)| a & b).collect(),
        }
    }

    pub fn ones(&self) -> Ones<'_> {
        Ones {
            words: &self.words,
            index: 0,
            current: self.words.first().copied().unwrap_or(0),
        }
    }

    /// Run lengths alternating zeros and ones, starting with a (possibly
    /// empty) run of zeros. The runs sum to `len`.
    pub fn to_runs(&self) -> Vec<u32> {
        let mut runs = Vec::new();
        let mut expect = false;
        let mut run = 0u32;
        for pos in 0..self.len {
            let bit = self.get(pos);
            if bit == expect {
                run += 1;
            } else {
                runs.push(run);
                expect = bit;
                run = 1;
            }
        }
        runs.push(run);
        runs
    }

    pub fn from_runs(len: usize, runs: &[u32]) -> Result<Self, RunLengthError> {
        let total: u64 = runs.iter().map(|&r| r as u64).sum();
        if total != len as u64 {
            return Err(RunLengthError {
                expected: len,
                got: total,
            });
        }
        let mut bits = Self::zeros(len);
        let mut pos = 0usize;
        for (i, &run) in runs.iter().enumerate() {
            if i % 2 == 1 {
                for p in pos..pos + run as usize {
                    bits.set(p);
                }
            }
            pos += run as usize;
        }
        Ok(bits)
    }
}

impl fmt::Debug for BitVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s: String = (0..self.len).map(|i| if self.get(i) { '1' } else { '0' }).collect();
        write!(f, "BitVector({s})")
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("run lengths sum to {got}, expected {expected}")]
pub struct RunLengthError {
    pub expected: usize,
    pub got: u64,
}

pub struct Ones<'a> {
    words: &'a [u64],
    index: usize,
    current: u64,
}

impl Iterator for Ones<'_> {
    type Item = u32;

    #[inline]
    fn next(&mut self) -> Option<u32> {
        loop {
            if self.current != 0 {
                let bit = self.current.trailing_zeros() as usize;
                self.current &= self.current - 1;
                return Some((self.index * WORD_BITS + bit) as u32);
            }
            self.index += 1;
            if self.index >= self.words.len() {
                return None;
            }
            self.current = self.words[self.index];
        }
    }
}

/// Membership of a slice over sample positions `0..len`.
#[derive(Clone, PartialEq, Eq, Hash)]
pub enum MemberSet {
    Dense { bits: BitVector, count: u32 },
    Sparse { len: u32, positions: Box<[u32]> },
}

/// Sparse storage is chosen whenever the position list is smaller than the
/// dense word array.
#[inline]
fn prefers_sparse(len: usize, count: usize) -> bool {
    count < 2 * words_for(len)
}

impl MemberSet {
    pub fn empty(len: usize) -> Self {
        MemberSet::Sparse {
            len: len as u32,
            positions: Box::new([]),
        }
    }

    pub fn from_bits(bits: BitVector) -> Self {
        let count = bits.count_ones();
        if prefers_sparse(bits.len(), count) {
            MemberSet::Sparse {
                len: bits.len() as u32,
                positions: bits.ones().collect(),
            }
        } else {
            MemberSet::Dense {
                bits,
                count: count as u32,
            }
        }
    }

    /// `positions` must be strictly increasing and `< len`.
    pub fn from_sorted(len: usize, positions: Vec<u32>) -> Self {
        debug_assert!(positions.windows(2).all(|w| w[0] < w[1]));
        debug_assert!(positions.last().is_none_or(|&p| (p as usize) < len));
        if prefers_sparse(len, positions.len()) {
            MemberSet::Sparse {
                len: len as u32,
                positions: positions.into_boxed_slice(),
            }
        } else {
            let count = positions.len() as u32;
            MemberSet::Dense {
                bits: BitVector::from_positions(len, positions),
                count,
            }
        }
    }

    #[inline]
    pub fn universe_len(&self) -> usize {
        match self {
            MemberSet::Dense { bits, .. } => bits.len(),
            MemberSet::Sparse { len, .. } => *len as usize,
        }
    }

    #[inline]
    pub fn count(&self) -> usize {
        match self {
            MemberSet::Dense { count, .. } => *count as usize,
            MemberSet::Sparse { positions, .. } => positions.len(),
        }
    }

    #[inline]
    pub fn contains(&self, pos: u32) -> bool {
        match self {
            MemberSet::Dense { bits, .. } => bits.get(pos as usize),
            MemberSet::Sparse { positions, .. } => positions.binary_search(&pos).is_ok(),
        }
    }

    pub fn iter(&self) -> MemberIter<'_> {
        match self {
            MemberSet::Dense { bits, .. } => MemberIter::Dense(bits.ones()),
            MemberSet::Sparse { positions, .. } => MemberIter::Sparse(positions.iter()),
        }
    }

    pub fn to_bits(&self) -> BitVector {
        match self {
            MemberSet::Dense { bits, .. } => bits.clone(),
            MemberSet::Sparse { len, positions } => BitVector::from_positions(*len as usize, positions.iter().copied()),
        }
    }

    pub fn intersection_count(&self, other: &MemberSet) -> usize {
        use MemberSet::*;
        match (self, other) {
            (Dense { bits: a, .. }, Dense { bits: b, .. }) => a.and_count(b),
            (Sparse { positions, .. }, dense @ Dense { .. }) | (dense @ Dense { .. }, Sparse { positions, .. }) => {
                positions.iter().filter(|&&p| dense.contains(p)).count()
            }
            (Sparse { positions: a, .. }, Sparse { positions: b, .. }) => merge_count(a, b),
        }
    }

    pub fn intersect(&self, other: &MemberSet) -> MemberSet {
        debug_assert_eq!(self.universe_len(), other.universe_len());
        use MemberSet::*;
        let len = self.universe_len();
        match (self, other) {
            (Dense { bits: a, .. }, Dense { bits: b, .. }) => MemberSet::from_bits(a.and(b)),
            (Sparse { positions, .. }, dense @ Dense { .. }) | (dense @ Dense { .. }, Sparse { positions, .. }) => {
                let kept: Vec<u32> = positions.iter().copied().filter(|&p| dense.contains(p)).collect();
                MemberSet::from_sorted(len, kept)
            }
            (Sparse { positions: a, .. }, Sparse { positions: b, .. }) => MemberSet::from_sorted(len, merge(a, b)),
        }
    }

    /// Intersection, returned only when it holds at least `min_count`
    /// members. Counts before allocating.
    pub fn intersect_at_least(&self, other: &MemberSet, min_count: usize) -> Option<MemberSet> {
        if self.count().min(other.count()) < min_count {
            return None;
        }
        if let (MemberSet::Dense { bits: a, .. }, MemberSet::Dense { bits: b, .. }) = (self, other) {
            // one pass over the inputs; the result is rarely below the threshold
            let words: SmallVec<[u64; 256]> = a.words.iter().zip(&b.words).map(|(x, y)| x & y).collect();
            let count: usize = words.iter().map(|w| w.count_ones() as usize).sum();
            if count < min_count {
                return None;
            }
            let len = a.len;
            return Some(if prefers_sparse(len, count) {
                let mut positions = Vec::with_capacity(count);
                positions.extend(Ones {
                    words: &words,
                    index: 0,
                    current: words.first().copied().unwrap_or(0),
                });
                MemberSet::Sparse {
                    len: len as u32,
                    positions: positions.into_boxed_slice(),
                }
            } else {
                MemberSet::Dense {
                    bits: BitVector {
                        len,
                        words: words.into_vec(),
                    },
                    count: count as u32,
                }
            });
        }
        use MemberSet::*;
        let len = self.universe_len();
        // collected on the stack so the heap copy has its exact size
        let mut kept: SmallVec<[u32; 512]> = SmallVec::new();
        match (self, other) {
            (Sparse { positions, .. }, Dense { bits, .. }) | (Dense { bits, .. }, Sparse { positions, .. }) => {
                kept.extend(positions.iter().copied().filter(|&p| bits.get(p as usize)));
            }
            (Sparse { positions: a, .. }, Sparse { positions: b, .. }) => merge_into(a, b, &mut kept),
            (Dense { .. }, Dense { .. }) => unreachable!(),
        }
        if kept.len() < min_count {
            return None;
        }
        Some(if prefers_sparse(len, kept.len()) {
            MemberSet::Sparse {
                len: len as u32,
                positions: Box::from(&kept[..]),
            }
        } else {
            MemberSet::Dense {
                bits: BitVector::from_positions(len, kept.iter().copied()),
                count: kept.len() as u32,
            }
        })
    }
}

impl fmt::Debug for MemberSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MemberSet")
            .field("len", &self.universe_len())
            .field("members", &self.iter().collect::<Vec<_>>())
            .finish()
    }
}

pub enum MemberIter<'a> {
    Dense(Ones<'a>),
    Sparse(std::slice::Iter<'a, u32>),
}

impl Iterator for MemberIter<'_> {
    type Item = u32;

    #[inline]
    fn next(&mut self) -> Option<u32> {
        match self {
            MemberIter::Dense(it) => it.next(),
            MemberIter::Sparse(it) => it.next().copied(),
        }
    }
}

fn merge_count(a: &[u32], b: &[u32]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

fn merge(a: &[u32], b: &[u32]) -> Vec<u32> {
    let mut out = Vec::with_capacity(a.len().min(b.len()));
    merge_into(a, b, &mut out);
    out
}

fn merge_into(a: &[u32], b: &[u32], out: &mut impl Extend<u32>) {
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                out.extend(Some(a[i]));
                i += 1;
                j += 1;
            }
        }
    }
}
