use crate::bitset::MemberSet;
use crate::index::{IndicatorIndex, Pair, SliceKey};

use super::{check_cap, EnumConfig, EnumError, SliceSet};

struct Node {
    key: SliceKey,
    members: Vec<u32>,
}

/// Breadth-first tree expansion without pruning: every node gains one
/// attribute (higher than its last) per child, each child scans only its
/// parent's members, and the count threshold is applied after all layers
/// are built.
pub fn enumerate_tree(index: &IndicatorIndex, cfg: &EnumConfig) -> Result<SliceSet, EnumError> {
    cfg.validate()?;
    check_cap(index, cfg)?;
    let n_attrs = index.num_attributes() as u16;
    let n = index.num_samples();

    let root = Node {
        key: SliceKey::new(),
        members: (0..n as u32).collect(),
    };
    let mut layers: Vec<Vec<Node>> = Vec::with_capacity(cfg.max_depth);
    let mut prev = vec![root];
    for _depth in 1..=cfg.max_depth {
        let mut next = Vec::new();
        for parent in &prev {
            let first = parent.key.last().map_or(0, |p| p.attr + 1);
            for attr in first..n_attrs {
                let column = index.column(attr);
                for tag in 0..index.tag_count(attr) as u16 {
                    let members: Vec<u32> = parent
                        .members
                        .iter()
                        .copied()
                        .filter(|&row| column[row as usize] == tag)
                        .collect();
                    let mut key = parent.key.clone();
                    key.push(Pair::new(attr, tag));
                    next.push(Node { key, members });
                }
            }
        }
        layers.push(std::mem::replace(&mut prev, next));
    }
    layers.push(prev);

    let mut out = SliceSet::new();
    for node in layers.into_iter().skip(1).flatten() {
        if node.members.len() >= cfg.min_count {
            out.insert(node.key, MemberSet::from_sorted(n, node.members));
        }
    }
    Ok(out)
}
