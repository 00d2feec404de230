use crate::bitset::MemberSet;
use crate::index::{IndicatorIndex, Pair, SliceKey};

use super::{check_cap, EnumConfig, EnumError, SliceSet};

/// Lists every attribute-tag combination up to the maximum depth and scans
/// the whole dataset for each one.
pub fn enumerate_naive(index: &IndicatorIndex, cfg: &EnumConfig) -> Result<SliceSet, EnumError> {
    cfg.validate()?;
    check_cap(index, cfg)?;
    let n_attrs = index.num_attributes();
    let n = index.num_samples();
    let mut out = SliceSet::new();
    let mut matched: Vec<u32> = Vec::with_capacity(n);

    for depth in 1..=cfg.max_depth.min(n_attrs) {
        let mut attrs: Vec<u16> = (0..depth as u16).collect();
        loop {
            let columns: Vec<&[u16]> = attrs.iter().map(|&a| index.column(a)).collect();
            let limits: Vec<u16> = attrs.iter().map(|&a| index.tag_count(a) as u16).collect();
            let mut tags = vec![0u16; depth];
            loop {
                matched.clear();
                'rows: for row in 0..n {
                    for (col, &tag) in columns.iter().zip(&tags) {
                        if col[row] != tag {
                            continue 'rows;
                        }
                    }
                    matched.push(row as u32);
                }
                if matched.len() >= cfg.min_count {
                    let key: SliceKey = attrs.iter().zip(&tags).map(|(&a, &t)| Pair::new(a, t)).collect();
                    out.insert(key, MemberSet::from_sorted(n, matched.clone()));
                }
                if !advance_tags(&mut tags, &limits) {
                    break;
                }
            }
            if !advance_combination(&mut attrs, n_attrs as u16) {
                break;
            }
        }
    }
    Ok(out)
}

/// Odometer step over tag tuples; false once wrapped around.
fn advance_tags(tags: &mut [u16], limits: &[u16]) -> bool {
    for i in (0..tags.len()).rev() {
        tags[i] += 1;
        if tags[i] < limits[i] {
            return true;
        }
        tags[i] = 0;
    }
    false
}

/// Next k-subset of `0..n` in lexicographic order.
pub(super) fn advance_combination(c: &mut [u16], n: u16) -> bool {
    let k = c.len();
    for i in (0..k).rev() {
        if c[i] < n - (k - i) as u16 {
            c[i] += 1;
            for j in i + 1..k {
                c[j] = c[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index::build_index;

    #[test]
    fn combinations_in_order() {
        let mut c = vec![0u16, 1];
        let mut all = vec![c.clone()];
        while advance_combination(&mut c, 4) {
            all.push(c.clone());
        }
        assert_eq!(all.len(), 6);
        assert_eq!(all.last().unwrap(), &vec![2, 3]);
    }

    #[test]
    fn cap_refuses_with_bound() {
        let ds = crate::synth::random_dataset(&crate::synth::RandomSpec::fixed(10, 4, 20), 1);
        let idx = build_index(&ds);
        let err = enumerate_naive(&idx, &EnumConfig::new(3, 1).with_naive_cap(1000)).unwrap_err();
        match err {
            EnumError::TooManyCombinations {
                combinations, bound, ..
            } => {
                assert_eq!(combinations, 40 + 45 * 16 + 120 * 64);
                assert_eq!(bound, 40.0 + 45.0 * 16.0 + 120.0 * 64.0);
            }
            other => panic!("unexpected {other}"),
        }
    }
}
