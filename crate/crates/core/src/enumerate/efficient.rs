use std::ops::Range;
use std::time::Instant;

use rayon::prelude::*;
use rustc_hash::FxHashMap;
use smallvec::{smallvec, SmallVec};

use crate::bitset::MemberSet;
use crate::index::{IndicatorIndex, Pair, SliceKey};

use super::{with_threads, EnumConfig, EnumError, EnumStats, LatticeNode, LayerStats, SliceLattice};

/// Breadth-first enumeration with count pruning and matched-pair
/// intersection.
///
/// Layer `k` is built only from survivors of layer `k - 1`. Two survivors
/// that share their first `k - 2` pairs and differ in the attribute of the
/// last one generate the candidate holding both last pairs; every other
/// parent of the candidate must be present in the survivor table, and the
/// members are the intersection of two parents. A candidate is generated
/// by exactly one such pair (its two parents missing the last and the
/// second-to-last pair), so no de-duplication pass is needed.
pub fn enumerate_efficient(index: &IndicatorIndex, cfg: &EnumConfig) -> Result<SliceLattice, EnumError> {
    cfg.validate()?;
    let start = Instant::now();
    let m = cfg.min_count;

    let mut stats = EnumStats {
        algorithm: "efficient".into(),
        ..Default::default()
    };
    let mut first = Vec::new();
    let mut candidates = 0u64;
    for pair in index.pairs() {
        candidates += 1;
        let bits = index.bits(pair);
        if bits.count_ones() >= m {
            first.push(LatticeNode {
                key: smallvec![pair],
                members: MemberSet::from_bits(bits.clone()),
                parents: SmallVec::new(),
            });
        }
    }
    stats.layers.push(LayerStats {
        depth: 1,
        candidates,
        parents_alive: candidates,
        survivors: first.len() as u64,
    });
    stats.layer_seconds.push(start.elapsed().as_secs_f64());
    let mut layers = vec![first];

    for depth in 2..=cfg.max_depth {
        let t0 = Instant::now();
        let prev = layers.last().expect("at least one layer");
        let (layer, layer_stats) = if prev.len() < 2 {
            (
                Vec::new(),
                LayerStats {
                    depth,
                    ..Default::default()
                },
            )
        } else {
            build_layer(prev, depth, m, cfg.threads)?
        };
        log::debug!(
            "depth {depth}: {} candidates, {} with live parents, {} survivors in {:.3}s",
            layer_stats.candidates,
            layer_stats.parents_alive,
            layer_stats.survivors,
            t0.elapsed().as_secs_f64()
        );
        stats.layers.push(layer_stats);
        stats.layer_seconds.push(t0.elapsed().as_secs_f64());
        layers.push(layer);
    }

    Ok(SliceLattice::from_parts(
        cfg.clone(),
        index.vocabulary().clone(),
        index.num_samples(),
        index.sample_digest().to_string(),
        layers,
        stats,
    ))
}

struct RunOutput {
    nodes: Vec<LatticeNode>,
    candidates: u64,
    parents_alive: u64,
}

fn build_layer(
    prev: &[LatticeNode],
    depth: usize,
    min_count: usize,
    threads: usize,
) -> Result<(Vec<LatticeNode>, LayerStats), EnumError> {
    let table: FxHashMap<&[Pair], u32> = prev.iter().enumerate().map(|(i, n)| (&n.key[..], i as u32)).collect();
    let runs = prefix_runs(prev, depth - 2);

    let process = |run: &Range<usize>| expand_run(prev, &table, run.clone(), min_count);
    let outputs: Vec<RunOutput> = if threads > 1 {
        with_threads(threads, || runs.par_iter().map(process).collect())?
    } else {
        runs.iter().map(process).collect()
    };

    let mut stats = LayerStats {
        depth,
        ..Default::default()
    };
    let total: usize = outputs.iter().map(|o| o.nodes.len()).sum();
    let mut layer = Vec::with_capacity(total);
    for out in outputs {
        stats.candidates += out.candidates;
        stats.parents_alive += out.parents_alive;
        layer.extend(out.nodes);
    }
    stats.survivors = layer.len() as u64;
    Ok((layer, stats))
}

/// Maximal ranges of consecutive slices sharing their first `prefix_len`
/// pairs. The layer is in canonical order, so each prefix group is
/// contiguous.
fn prefix_runs(layer: &[LatticeNode], prefix_len: usize) -> Vec<Range<usize>> {
    let mut runs = Vec::new();
    let mut start = 0;
    for i in 1..=layer.len() {
        if i == layer.len() || layer[i].key[..prefix_len] != layer[start].key[..prefix_len] {
            if i - start >= 2 {
                runs.push(start..i);
            }
            start = i;
        }
    }
    runs
}

fn expand_run(prev: &[LatticeNode], table: &FxHashMap<&[Pair], u32>, run: Range<usize>, min_count: usize) -> RunOutput {
    let mut out = RunOutput {
        nodes: Vec::new(),
        candidates: 0,
        parents_alive: 0,
    };
    let prefix_len = prev[run.start].key.len() - 1;
    let mut probe: SliceKey = SmallVec::with_capacity(prefix_len + 1);
    for i in run.clone() {
        let left = &prev[i];
        let last_i = left.key[prefix_len];
        for j in i + 1..run.end {
            let right = &prev[j];
            let last_j = right.key[prefix_len];
            if last_j.attr == last_i.attr {
                continue;
            }
            out.candidates += 1;
            let mut key: SliceKey = left.key.clone();
            key.push(last_j);

            // Parents missing one of the shared prefix pairs.
            let mut parents: SmallVec<[u32; 4]> = smallvec![i as u32, j as u32];
            let mut alive = true;
            for skip in 0..prefix_len {
                probe.clear();
                probe.extend(key.iter().enumerate().filter(|&(p, _)| p != skip).map(|(_, p)| *p));
                match table.get(&probe[..]) {
                    Some(&idx) => parents.push(idx),
                    None => {
                        alive = false;
                        break;
                    }
                }
            }
            if !alive {
                continue;
            }
            out.parents_alive += 1;

            // The two smallest parents bound the work of the intersection.
            parents.sort_unstable_by_key(|&p| prev[p as usize].members.count());
            let a = &prev[parents[0] as usize].members;
            let b = &prev[parents[1] as usize].members;
            if let Some(members) = a.intersect_at_least(b, min_count) {
                parents.sort_unstable();
                out.nodes.push(LatticeNode { key, members, parents });
            }
        }
    }
    out
}
