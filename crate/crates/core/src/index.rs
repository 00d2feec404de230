//! Indicator structures over a tagged dataset.
//!
//! Attributes are renumbered in name order so that sorting pairs by
//! attribute id sorts them by attribute name; tag ids follow the schema's
//! tag order.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use smallvec::SmallVec;

use crate::bitset::{BitVector, MemberSet};
use crate::schema::{Category, TaggedDataset};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Pair {
    pub attr: u16,
    pub tag: u16,
}

impl Pair {
    pub const fn new(attr: u16, tag: u16) -> Self {
        Self { attr, tag }
    }
}

/// Canonical slice key: pairs sorted by attribute, attributes distinct.
pub type SliceKey = SmallVec<[Pair; 4]>;

pub fn is_canonical(key: &[Pair]) -> bool {
    key.windows(2).all(|w| w[0].attr < w[1].attr)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabularyEntry {
    pub name: String,
    pub category: Category,
    pub tags: Vec<String>,
}

/// Attribute names and tag lists in index order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vocabulary {
    attributes: Vec<VocabularyEntry>,
}

impl Vocabulary {
    pub fn from_schema(schema: &crate::schema::AttributeSchema) -> Self {
        let mut attributes: Vec<VocabularyEntry> = schema
            .attributes()
            .iter()
            .map(|a| VocabularyEntry {
                name: a.name.clone(),
                category: a.category,
                tags: a.tags.clone(),
            })
            .collect();
        attributes.sort_by(|a, b| a.name.cmp(&b.name));
        Self { attributes }
    }

    pub fn len(&self) -> usize {
        self.attributes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attributes.is_empty()
    }

    pub fn entries(&self) -> &[VocabularyEntry] {
        &self.attributes
    }

    pub fn entry(&self, attr: u16) -> &VocabularyEntry {
        &self.attributes[attr as usize]
    }

    pub fn attr_id(&self, name: &str) -> Option<u16> {
        self.attributes
            .binary_search_by(|a| a.name.as_str().cmp(name))
            .ok()
            .map(|i| i as u16)
    }

    pub fn pair(&self, attr: &str, tag: &str) -> Option<Pair> {
        let a = self.attr_id(attr)?;
        let t = self.attributes[a as usize].tags.iter().position(|x| x == tag)?;
        Some(Pair::new(a, t as u16))
    }

    pub fn tag_count(&self, attr: u16) -> usize {
        self.attributes[attr as usize].tags.len()
    }

    pub fn named(&self, key: &[Pair]) -> NamedKey {
        NamedKey(
            key.iter()
                .map(|p| {
                    let e = &self.attributes[p.attr as usize];
                    (e.name.clone(), e.tags[p.tag as usize].clone())
                })
                .collect(),
        )
    }

    /// Resolves a named key; `None` if any pair is unknown or an attribute repeats.
    pub fn resolve(&self, key: &NamedKey) -> Option<SliceKey> {
        let mut out: SliceKey = key.0.iter().map(|(a, t)| self.pair(a, t)).collect::<Option<_>>()?;
        out.sort();
        is_canonical(&out).then_some(out)
    }
}

/// A slice key spelled with attribute and tag names, sorted by attribute name.
///
/// Text form: `attr=tag` pairs joined by `;`, with `\`, `=` and `;` escaped
/// by a backslash.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NamedKey(pub Vec<(String, String)>);

impl NamedKey {
    pub fn new(pairs: impl IntoIterator<Item = (impl Into<String>, impl Into<String>)>) -> Self {
        let mut pairs: Vec<(String, String)> = pairs.into_iter().map(|(a, t)| (a.into(), t.into())).collect();
        pairs.sort();
        NamedKey(pairs)
    }

    pub fn depth(&self) -> usize {
        self.0.len()
    }

    pub fn pairs(&self) -> &[(String, String)] {
        &self.0
    }

    pub fn get(&self, attribute: &str) -> Option<&str> {
        self.0.iter().find(|(a, _)| a == attribute).map(|(_, t)| t.as_str())
    }

    pub fn is_superset_of(&self, other: &NamedKey) -> bool {
        other.0.iter().all(|p| self.0.contains(p))
    }
}

fn escape_into(out: &mut String, s: &str) {
    for c in s.chars() {
        if matches!(c, '\\' | '=' | ';') {
            out.push('\\');
        }
        out.push(c);
    }
}

impl fmt::Display for NamedKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut out = String::new();
        for (i, (a, t)) in self.0.iter().enumerate() {
            if i > 0 {
                out.push(';');
            }
            escape_into(&mut out, a);
            out.push('=');
            escape_into(&mut out, t);
        }
        f.write_str(&out)
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("invalid slice key `{0}`")]
pub struct KeyParseError(pub String);

impl FromStr for NamedKey {
    type Err = KeyParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || KeyParseError(s.to_string());
        let mut pairs = Vec::new();
        let mut attr: Option<String> = None;
        let mut cur = String::new();
        let mut chars = s.chars();
        while let Some(c) = chars.next() {
            match c {
                '\\' => cur.push(chars.next().ok_or_else(err)?),
                '=' if attr.is_none() => attr = Some(std::mem::take(&mut cur)),
                ';' => {
                    let a = attr.take().ok_or_else(err)?;
                    pairs.push((a, std::mem::take(&mut cur)));
                }
                '=' => return Err(err()),
                c => cur.push(c),
            }
        }
        match attr {
            Some(a) => pairs.push((a, cur)),
            None if cur.is_empty() && pairs.is_empty() && s.is_empty() => {}
            None => return Err(err()),
        }
        let key = NamedKey::new(pairs);
        if key.0.windows(2).any(|w| w[0].0 == w[1].0) || key.0.iter().any(|(a, t)| a.is_empty() || t.is_empty()) {
            return Err(err());
        }
        Ok(key)
    }
}

/// SHA-256 over the ordered sample ids; pins lattice bit positions to a
/// sample order.
pub fn sample_order_digest<'a>(ids: impl IntoIterator<Item = &'a str>) -> String {
    let mut h = Sha256::new();
    for id in ids {
        h.update((id.len() as u64).to_le_bytes());
        h.update(id.as_bytes());
    }
    hex(&h.finalize())
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Per-(attribute, tag) membership bit vectors plus per-attribute tag-code
/// columns for scanning.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IndicatorIndex {
    vocab: Vocabulary,
    num_samples: usize,
    sample_digest: String,
    columns: Vec<Vec<u16>>,
    bits: Vec<Vec<BitVector>>,
}

impl IndicatorIndex {
    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn num_samples(&self) -> usize {
        self.num_samples
    }

    pub fn num_attributes(&self) -> usize {
        self.vocab.len()
    }

    pub fn sample_digest(&self) -> &str {
        &self.sample_digest
    }

    /// Tag id of every sample for one attribute.
    pub fn column(&self, attr: u16) -> &[u16] {
        &self.columns[attr as usize]
    }

    pub fn bits(&self, pair: Pair) -> &BitVector {
        &self.bits[pair.attr as usize][pair.tag as usize]
    }

    pub fn members(&self, pair: Pair) -> MemberSet {
        MemberSet::from_bits(self.bits(pair).clone())
    }

    pub fn tag_count(&self, attr: u16) -> usize {
        self.bits[attr as usize].len()
    }

    pub fn max_tags(&self) -> usize {
        self.bits.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// All depth-1 pairs in canonical order.
    pub fn pairs(&self) -> impl Iterator<Item = Pair> + '_ {
        (0..self.num_attributes() as u16).flat_map(move |a| (0..self.tag_count(a) as u16).map(move |t| Pair::new(a, t)))
    }
}

pub fn build_index(dataset: &TaggedDataset) -> IndicatorIndex {
    let vocab = Vocabulary::from_schema(dataset.schema());
    let n = dataset.len();
    let mut columns = Vec::with_capacity(vocab.len());
    let mut bits = Vec::with_capacity(vocab.len());
    for entry in vocab.entries() {
        let mut column = Vec::with_capacity(n);
        let mut tag_bits: Vec<BitVector> = entry.tags.iter().map(|_| BitVector::zeros(n)).collect();
        for (pos, sample) in dataset.samples().iter().enumerate() {
            let tag = sample
                .tag(&entry.name)
                .and_then(|t| entry.tags.iter().position(|x| x == t))
                .expect("dataset samples are validated against the schema");
            column.push(tag as u16);
            tag_bits[tag].set(pos);
        }
        columns.push(column);
        bits.push(tag_bits);
    }
    IndicatorIndex {
        sample_digest: sample_order_digest(dataset.ids()),
        vocab,
        num_samples: n,
        columns,
        bits,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::{Attribute, AttributeSchema, Sample, Task};
    use proptest::prelude::*;
    use std::sync::Arc;

    fn color_dataset(colors: &[&str]) -> TaggedDataset {
        let schema = AttributeSchema::new(
            Task::Other,
            "1",
            vec![Attribute::new("color", Category::MainObject, &["red", "blue"])],
        )
        .unwrap();
        let samples = colors
            .iter()
            .enumerate()
            .map(|(i, c)| Sample::new(format!("s{i}"), [("color", *c)]))
            .collect();
        TaggedDataset::new(Arc::new(schema), samples).unwrap()
    }

    #[test]
    fn transcribes_tag_bits() {
        let idx = build_index(&color_dataset(&["red", "blue", "red", "blue"]));
        let red = idx.vocabulary().pair("color", "red").unwrap();
        let blue = idx.vocabulary().pair("color", "blue").unwrap();
        assert_eq!(format!("{:?}", idx.bits(red)), "BitVector(1010)");
        assert_eq!(format!("{:?}", idx.bits(blue)), "BitVector(0101)");
    }

    #[test]
    fn empty_dataset_has_empty_bits() {
        let idx = build_index(&color_dataset(&[]));
        for p in idx.pairs() {
            assert_eq!(idx.bits(p).len(), 0);
            assert_eq!(idx.bits(p).count_ones(), 0);
        }
    }

    #[test]
    fn random_popcounts_sum_to_n() {
        let ds = crate::synth::random_dataset(&crate::synth::RandomSpec::fixed(6, 4, 200), 11);
        let idx = build_index(&ds);
        for a in 0..idx.num_attributes() as u16 {
            let name = &idx.vocabulary().entry(a).name;
            let mut total = 0;
            for t in 0..idx.tag_count(a) as u16 {
                let tag = &idx.vocabulary().entry(a).tags[t as usize];
                // linear-scan count
                let scanned = ds.samples().iter().filter(|s| s.tag(name) == Some(tag)).count();
                assert_eq!(idx.bits(Pair::new(a, t)).count_ones(), scanned);
                total += scanned;
            }
            assert_eq!(total, 200);
        }
        assert_eq!(build_index(&ds), idx);
    }

    #[test]
    fn key_text_round_trip_with_escapes() {
        let key = NamedKey::new([("pose", "sitting"), ("a=b;c", "x\\y")]);
        let text = key.to_string();
        assert_eq!(text, "a\\=b\\;c=x\\\\y;pose=sitting");
        assert_eq!(text.parse::<NamedKey>().unwrap(), key);
        assert!("pose".parse::<NamedKey>().is_err());
        assert!("a=1;a=2".parse::<NamedKey>().is_err());
        assert_eq!("".parse::<NamedKey>().unwrap().depth(), 0);
    }

    proptest! {
        #[test]
        fn partition_property(seed in any::<u64>(), n in 0usize..120) {
            let ds = crate::synth::random_dataset(&crate::synth::RandomSpec::fixed(4, 3, n), seed);
            let idx = build_index(&ds);
            for a in 0..idx.num_attributes() as u16 {
                let mut union = BitVector::zeros(n);
                for t in 0..idx.tag_count(a) as u16 {
                    let b = idx.bits(Pair::new(a, t));
                    prop_assert_eq!(union.and_count(b), 0);
                    for p in b.ones() { union.set(p as usize); }
                }
                prop_assert_eq!(union.count_ones(), n);
            }
        }

        #[test]
        fn named_key_text_round_trip(pairs in proptest::collection::btree_map("[a-z=;\\\\ ]{1,6}", "[a-z=;\\\\]{1,5}", 0..4)) {
            let key = NamedKey::new(pairs);
            prop_assert_eq!(key.to_string().parse::<NamedKey>().unwrap(), key);
        }
    }
}
