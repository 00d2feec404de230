use std::io::{Read, Write};
use std::sync::OnceLock;

use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use smallvec::SmallVec;

use crate::bitset::{BitVector, MemberSet};
use crate::index::{hex, IndicatorIndex, NamedKey, Pair, SliceKey, Vocabulary};

use super::{without, EnumConfig, EnumStats, LayerStats, SliceSet};

pub const LATTICE_FORMAT_VERSION: &str = "1";
const LATTICE_KIND: &str = "slice-lattice";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LatticeNode {
    pub key: SliceKey,
    pub members: MemberSet,
    /// Indices into the previous layer, ascending.
    pub parents: SmallVec<[u32; 4]>,
}

impl LatticeNode {
    pub fn count(&self) -> usize {
        self.members.count()
    }
}

/// Position of a slice: `depth` is 1-based.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SliceRef {
    pub depth: u16,
    pub index: u32,
}

#[derive(Debug, thiserror::Error)]
pub enum LatticeError {
    #[error("malformed lattice document: {0}")]
    Malformed(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Depth-layered surviving slices with parent links. Built once per dataset
/// and shared by every model analyzed over it.
#[derive(Debug)]
pub struct SliceLattice {
    config: EnumConfig,
    vocab: Vocabulary,
    num_samples: usize,
    sample_digest: String,
    layers: Vec<Vec<LatticeNode>>,
    stats: EnumStats,
    lookup: OnceLock<FxHashMap<SliceKey, SliceRef>>,
    children: OnceLock<Vec<Vec<Vec<u32>>>>,
    fingerprint: OnceLock<String>,
}

impl PartialEq for SliceLattice {
    fn eq(&self, other: &Self) -> bool {
        self.config.max_depth == other.config.max_depth
            && self.config.min_count == other.config.min_count
            && self.vocab == other.vocab
            && self.num_samples == other.num_samples
            && self.sample_digest == other.sample_digest
            && self.layers == other.layers
    }
}

impl SliceLattice {
    pub(crate) fn from_parts(
        config: EnumConfig,
        vocab: Vocabulary,
        num_samples: usize,
        sample_digest: String,
        mut layers: Vec<Vec<LatticeNode>>,
        stats: EnumStats,
    ) -> Self {
        layers.resize_with(config.max_depth, Vec::new);
        Self {
            config,
            vocab,
            num_samples,
            sample_digest,
            layers,
            stats,
            lookup: OnceLock::new(),
            children: OnceLock::new(),
            fingerprint: OnceLock::new(),
        }
    }

    /// Arranges an already enumerated slice set into layers and links each
    /// slice to its parents. Every parent of a kept slice is kept too, since
    /// counts never grow from parent to child.
    pub fn from_slice_set(index: &IndicatorIndex, config: &EnumConfig, set: SliceSet, algorithm: &str) -> Self {
        let mut layers: Vec<Vec<LatticeNode>> = vec![Vec::new(); config.max_depth];
        for (key, members) in set {
            let d = key.len() - 1;
            layers[d].push(LatticeNode {
                key,
                members,
                parents: SmallVec::new(),
            });
        }
        for d in 1..layers.len() {
            let (lower, upper) = layers.split_at_mut(d);
            let prev = &lower[d - 1];
            for node in &mut upper[0] {
                let mut parents: SmallVec<[u32; 4]> = (0..node.key.len())
                    .map(|skip| {
                        let pk = without(&node.key, skip);
                        prev.binary_search_by(|n| n.key.cmp(&pk))
                            .expect("parent of a surviving slice survives") as u32
                    })
                    .collect();
                parents.sort_unstable();
                node.parents = parents;
            }
        }
        let stats = EnumStats {
            algorithm: algorithm.to_string(),
            layers: layers
                .iter()
                .enumerate()
                .map(|(d, l)| LayerStats {
                    depth: d + 1,
                    candidates: 0,
                    parents_alive: 0,
                    survivors: l.len() as u64,
                })
                .collect(),
            layer_seconds: Vec::new(),
        };
        Self::from_parts(
            config.clone(),
            index.vocabulary().clone(),
            index.num_samples(),
            index.sample_digest().to_string(),
            layers,
            stats,
        )
    }

    pub fn config(&self) -> &EnumConfig {
        &self.config
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn num_samples(&self) -> usize {
        self.num_samples
    }

    pub fn sample_digest(&self) -> &str {
        &self.sample_digest
    }

    pub fn stats(&self) -> &EnumStats {
        &self.stats
    }

    pub fn layers(&self) -> &[Vec<LatticeNode>] {
        &self.layers
    }

    /// Layer at 1-based `depth`.
    pub fn layer(&self, depth: usize) -> &[LatticeNode] {
        &self.layers[depth - 1]
    }

    pub fn len(&self) -> usize {
        self.layers.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn node(&self, r: SliceRef) -> &LatticeNode {
        &self.layers[r.depth as usize - 1][r.index as usize]
    }

    pub fn find(&self, key: &[Pair]) -> Option<SliceRef> {
        self.lookup
            .get_or_init(|| {
                let mut lookup = FxHashMap::default();
                lookup.reserve(self.len());
                for (d, layer) in self.layers.iter().enumerate() {
                    for (i, node) in layer.iter().enumerate() {
                        let r = SliceRef {
                            depth: d as u16 + 1,
                            index: i as u32,
                        };
                        lookup.insert(node.key.clone(), r);
                    }
                }
                lookup
            })
            .get(key)
            .copied()
    }

    pub fn find_named(&self, key: &NamedKey) -> Option<SliceRef> {
        self.vocab.resolve(key).and_then(|k| self.find(&k))
    }

    pub fn named(&self, r: SliceRef) -> NamedKey {
        self.vocab.named(&self.node(r).key)
    }

    /// Every slice in canonical order (by depth, then key).
    pub fn refs(&self) -> impl Iterator<Item = SliceRef> + '_ {
        self.layers.iter().enumerate().flat_map(|(d, l)| {
            (0..l.len() as u32).map(move |index| SliceRef {
                depth: d as u16 + 1,
                index,
            })
        })
    }

    pub fn parents(&self, r: SliceRef) -> impl Iterator<Item = SliceRef> + '_ {
        self.node(r).parents.iter().map(move |&index| SliceRef {
            depth: r.depth - 1,
            index,
        })
    }

    pub fn children(&self, r: SliceRef) -> Vec<SliceRef> {
        let children = self.children.get_or_init(|| {
            let mut out: Vec<Vec<Vec<u32>>> = self.layers.iter().map(|l| vec![Vec::new(); l.len()]).collect();
            for d in 1..self.layers.len() {
                for (i, node) in self.layers[d].iter().enumerate() {
                    for &p in &node.parents {
                        out[d - 1][p as usize].push(i as u32);
                    }
                }
            }
            out
        });
        children[r.depth as usize - 1][r.index as usize]
            .iter()
            .map(|&index| SliceRef {
                depth: r.depth + 1,
                index,
            })
            .collect()
    }

    pub fn to_slice_set(&self) -> SliceSet {
        self.layers
            .iter()
            .flatten()
            .map(|n| (n.key.clone(), n.members.clone()))
            .collect()
    }

    /// Content hash over config, sample order, keys and member sets.
    pub fn fingerprint(&self) -> &str {
        self.fingerprint.get_or_init(|| {
            let mut h = Sha256::new();
            h.update((self.config.max_depth as u64).to_le_bytes());
            h.update((self.config.min_count as u64).to_le_bytes());
            h.update(self.sample_digest.as_bytes());
            h.update(serde_json::to_vec(&self.vocab).expect("vocabulary serializes"));
            for node in self.layers.iter().flatten() {
                h.update((node.key.len() as u64).to_le_bytes());
                for p in &node.key {
                    h.update(p.attr.to_le_bytes());
                    h.update(p.tag.to_le_bytes());
                }
                h.update((node.count() as u64).to_le_bytes());
                for m in node.members.iter() {
                    h.update(m.to_le_bytes());
                }
            }
            hex(&h.finalize())
        })
    }

    pub fn write_json(&self, out: impl Write) -> Result<(), LatticeError> {
        let doc = LatticeDocRef {
            version: LATTICE_FORMAT_VERSION,
            kind: LATTICE_KIND,
            config: ConfigDoc {
                max_depth: self.config.max_depth,
                min_count: self.config.min_count,
            },
            num_samples: self.num_samples,
            sample_digest: &self.sample_digest,
            attributes: &self.vocab,
            stats: &self.stats,
            layers: self
                .layers
                .iter()
                .enumerate()
                .map(|(d, layer)| {
                    layer
                        .iter()
                        .map(|n| NodeDoc {
                            key: self.vocab.named(&n.key),
                            count: n.count(),
                            members: n.members.to_bits().to_runs(),
                            parents: n
                                .parents
                                .iter()
                                .map(|&p| self.vocab.named(&self.layers[d - 1][p as usize].key))
                                .collect(),
                        })
                        .collect()
                })
                .collect(),
        };
        serde_json::to_writer(out, &doc)?;
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut buf = Vec::new();
        self.write_json(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("json is utf-8")
    }

    pub fn read_json(input: impl Read) -> Result<Self, LatticeError> {
        let doc: LatticeDoc = serde_json::from_reader(input)?;
        if doc.version != LATTICE_FORMAT_VERSION || doc.kind != LATTICE_KIND {
            return Err(LatticeError::Malformed(format!(
                "unsupported document {} version {}",
                doc.kind, doc.version
            )));
        }
        let bad = |m: String| LatticeError::Malformed(m);
        let vocab = doc.attributes;
        let n = doc.num_samples;
        let mut layers: Vec<Vec<LatticeNode>> = Vec::with_capacity(doc.layers.len());
        for (d, layer) in doc.layers.into_iter().enumerate() {
            let mut nodes = Vec::with_capacity(layer.len());
            for node in layer {
                let key = vocab
                    .resolve(&node.key)
                    .ok_or_else(|| bad(format!("unknown slice key {}", node.key)))?;
                if key.len() != d + 1 {
                    return Err(bad(format!("slice {} listed at depth {}", node.key, d + 1)));
                }
                let bits = BitVector::from_runs(n, &node.members).map_err(|e| bad(e.to_string()))?;
                let members = MemberSet::from_bits(bits);
                if members.count() != node.count {
                    return Err(bad(format!("count mismatch for {}", node.key)));
                }
                let mut parents = SmallVec::new();
                for pk in &node.parents {
                    let pkey = vocab.resolve(pk).ok_or_else(|| bad(format!("unknown parent {pk}")))?;
                    let prev: &Vec<LatticeNode> = layers.last().ok_or_else(|| bad("parent of depth-1 slice".into()))?;
                    let idx = prev
                        .binary_search_by(|p| p.key.cmp(&pkey))
                        .map_err(|_| bad(format!("missing parent {pk}")))?;
                    parents.push(idx as u32);
                }
                parents.sort_unstable();
                nodes.push(LatticeNode { key, members, parents });
            }
            if nodes.windows(2).any(|w| w[0].key >= w[1].key) {
                return Err(bad(format!("layer {} is not in canonical order", d + 1)));
            }
            layers.push(nodes);
        }
        let config = EnumConfig::new(doc.config.max_depth, doc.config.min_count);
        if layers.len() != config.max_depth {
            return Err(bad("layer count differs from max depth".into()));
        }
        Ok(Self::from_parts(config, vocab, n, doc.sample_digest, layers, doc.stats))
    }
}

#[derive(Serialize, Deserialize)]
struct ConfigDoc {
    max_depth: usize,
    min_count: usize,
}

#[derive(Serialize, Deserialize)]
struct NodeDoc {
    key: NamedKey,
    count: usize,
    /// Run lengths of the member bit vector, zeros first.
    members: Vec<u32>,
    parents: Vec<NamedKey>,
}

#[derive(Serialize)]
struct LatticeDocRef<'a> {
    version: &'a str,
    kind: &'a str,
    config: ConfigDoc,
    num_samples: usize,
    sample_digest: &'a str,
    attributes: &'a Vocabulary,
    stats: &'a EnumStats,
    layers: Vec<Vec<NodeDoc>>,
}

#[derive(Deserialize)]
struct LatticeDoc {
    version: String,
    kind: String,
    config: ConfigDoc,
    num_samples: usize,
    sample_digest: String,
    attributes: Vocabulary,
    stats: EnumStats,
    layers: Vec<Vec<NodeDoc>>,
}
