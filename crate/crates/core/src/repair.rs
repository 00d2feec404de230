//! Choosing pool data for model repair, worst error slices first.

use std::collections::{BTreeMap, HashSet};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::analyze::ErrorSliceReport;
use crate::bitset::MemberSet;
use crate::index::{build_index, NamedKey};
use crate::schema::TaggedDataset;

pub const PLAN_FORMAT_VERSION: &str = "1";
const PLAN_KIND: &str = "repair-plan";

#[derive(Debug, thiserror::Error)]
pub enum RepairError {
    #[error("sample `{0}` has no group key")]
    MissingGroup(String),
    #[error("malformed plan: {0}")]
    Malformed(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanMode {
    #[default]
    Samples,
    Groups,
}

/// How a group's objects combine into one priority.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupRule {
    /// Best slice rank among the objects; more matching objects, then the
    /// group id, break ties.
    #[default]
    BestRank,
    /// Mean of the objects' best ranks, counting unmatched objects as one
    /// past the last slice.
    MeanRank,
}

impl std::str::FromStr for GroupRule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "best-rank" | "best_rank" => Ok(GroupRule::BestRank),
            "mean-rank" | "mean_rank" => Ok(GroupRule::MeanRank),
            other => Err(format!(
                "unknown group rule `{other}` (expected best-rank or mean-rank)"
            )),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RepairOptions {
    /// Slices moved ahead of the report ranking, in the order given.
    pub pinned: Vec<NamedKey>,
    pub group_rule: GroupRule,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    /// Sample id, or group id in group mode.
    pub id: String,
    /// The slice that claimed this selection; absent for budget filler.
    pub slice_key: Option<NamedKey>,
    pub slice_avg_perf: Option<f64>,
    /// Position of that slice in the priority order, from 0.
    pub slice_rank: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepairPlan {
    pub version: String,
    pub kind: String,
    pub mode: PlanMode,
    pub model_id: String,
    pub lattice_id: String,
    pub budget: usize,
    pub selections: Vec<Selection>,
    pub warnings: Vec<String>,
}

impl RepairPlan {
    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.selections.iter().map(|s| s.id.as_str())
    }

    pub fn len(&self) -> usize {
        self.selections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.selections.is_empty()
    }

    pub fn write_json(&self, out: impl Write) -> Result<(), RepairError> {
        serde_json::to_writer_pretty(out, self)?;
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }

    pub fn read_json(input: impl Read) -> Result<Self, RepairError> {
        let plan: RepairPlan = serde_json::from_reader(input)?;
        if plan.kind != PLAN_KIND || plan.version != PLAN_FORMAT_VERSION {
            return Err(RepairError::Malformed(format!(
                "unsupported `{}` version `{}`",
                plan.kind, plan.version
            )));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = plan.selections.iter().find(|s| !seen.insert(s.id.as_str())) {
            return Err(RepairError::Malformed(format!("`{}` selected twice", dup.id)));
        }
        Ok(plan)
    }
}

struct Ranked<'a> {
    key: &'a NamedKey,
    avg: f64,
    members: Option<MemberSet>,
}

/// Report slices in priority order with their pool members.
fn ranked_slices<'a>(
    report: &'a ErrorSliceReport,
    pool: &TaggedDataset,
    opts: &RepairOptions,
    warnings: &mut Vec<String>,
) -> Vec<Ranked<'a>> {
    let index = build_index(pool);
    let mut pinned = Vec::new();
    let mut seen = HashSet::new();
    for key in &opts.pinned {
        match report.error_slices.iter().find(|s| &s.key == key) {
            Some(s) if seen.insert(key) => pinned.push(s),
            Some(_) => {}
            None => warnings.push(format!("pinned slice {key} is not in the report")),
        }
    }
    let order = pinned
        .into_iter()
        .chain(report.error_slices.iter().filter(|s| !seen.contains(&s.key)));
    order
        .map(|s| {
            let members = index.vocabulary().resolve(&s.key).map(|key| {
                key[1..]
                    .iter()
                    .fold(index.members(key[0]), |acc, &p| acc.intersect(&index.members(p)))
            });
            if members.is_none() {
                warnings.push(format!(
                    "slice {} uses attributes or tags the pool does not have",
                    s.key
                ));
            }
            Ranked {
                key: &s.key,
                avg: s.avg_perf,
                members,
            }
        })
        .collect()
}

fn plan(
    report: &ErrorSliceReport,
    mode: PlanMode,
    budget: usize,
    selections: Vec<Selection>,
    warnings: Vec<String>,
) -> RepairPlan {
    RepairPlan {
        version: PLAN_FORMAT_VERSION.into(),
        kind: PLAN_KIND.into(),
        mode,
        model_id: report.model_id.clone(),
        lattice_id: report.lattice_id.clone(),
        budget,
        selections,
        warnings,
    }
}

/// Walks the slices worst first and takes each one's unclaimed pool
/// samples in id order. A sample matching several slices goes to the
/// first. Budget left after every slice is filled with unmatched samples
/// in id order, so the plan holds `min(budget, pool size)` ids and a
/// smaller budget always yields a prefix.
pub fn prioritize_pool(
    report: &ErrorSliceReport,
    pool: &TaggedDataset,
    budget: usize,
    opts: &RepairOptions,
) -> RepairPlan {
    let mut warnings = Vec::new();
    if budget > pool.len() {
        warnings.push(format!(
            "budget {budget} exceeds the pool size {}; selecting the whole pool",
            pool.len()
        ));
    }
    let ranked = ranked_slices(report, pool, opts, &mut warnings);
    let samples = pool.samples();
    let mut by_id: Vec<u32> = (0..samples.len() as u32).collect();
    by_id.sort_by(|&a, &b| samples[a as usize].id.cmp(&samples[b as usize].id));

    let mut claimed = vec![false; samples.len()];
    let mut selections = Vec::with_capacity(budget.min(samples.len()));
    'slices: for (rank, slice) in ranked.iter().enumerate() {
        let Some(members) = &slice.members else { continue };
        let mut ids: Vec<u32> = members.iter().filter(|&i| !claimed[i as usize]).collect();
        ids.sort_by(|&a, &b| samples[a as usize].id.cmp(&samples[b as usize].id));
        for i in ids {
            if selections.len() == budget {
                break 'slices;
            }
            claimed[i as usize] = true;
            selections.push(Selection {
                id: samples[i as usize].id.clone(),
                slice_key: Some(slice.key.clone()),
                slice_avg_perf: Some(slice.avg),
                slice_rank: Some(rank),
            });
        }
    }
    for i in by_id {
        if selections.len() >= budget {
            break;
        }
        if !claimed[i as usize] {
            selections.push(Selection {
                id: samples[i as usize].id.clone(),
                slice_key: None,
                slice_avg_perf: None,
                slice_rank: None,
            });
        }
    }
    plan(report, PlanMode::Samples, budget, selections, warnings)
}

#[derive(Default)]
struct GroupScore {
    best: Option<usize>,
    matching: usize,
    rank_sum: usize,
    objects: usize,
}

/// Ranks groups (e.g. images holding several objects) by the slices their
/// objects fall in and selects the top `budget` group ids.
pub fn prioritize_groups(
    report: &ErrorSliceReport,
    pool: &TaggedDataset,
    budget: usize,
    opts: &RepairOptions,
) -> Result<RepairPlan, RepairError> {
    let samples = pool.samples();
    if let Some(s) = samples.iter().find(|s| s.group.is_none()) {
        return Err(RepairError::MissingGroup(s.id.clone()));
    }
    let mut warnings = Vec::new();
    let ranked = ranked_slices(report, pool, opts, &mut warnings);
    let miss = ranked.len();
    // best rank per object
    let mut object_rank: Vec<Option<usize>> = vec![None; samples.len()];
    for (rank, slice) in ranked.iter().enumerate().rev() {
        if let Some(m) = &slice.members {
            for i in m.iter() {
                object_rank[i as usize] = Some(rank);
            }
        }
    }
    let mut groups: BTreeMap<&str, GroupScore> = BTreeMap::new();
    for (s, rank) in samples.iter().zip(&object_rank) {
        let g = groups.entry(s.group.as_deref().expect("checked")).or_default();
        g.objects += 1;
        g.rank_sum += rank.unwrap_or(miss);
        if let Some(r) = *rank {
            g.matching += 1;
            g.best = Some(g.best.map_or(r, |b| b.min(r)));
        }
    }
    if budget > groups.len() {
        warnings.push(format!(
            "budget {budget} exceeds the {} groups in the pool; selecting all",
            groups.len()
        ));
    }
    let mut order: Vec<(&str, GroupScore)> = groups.into_iter().collect();
    match opts.group_rule {
        GroupRule::BestRank => order.sort_by(|(ia, a), (ib, b)| {
            a.best
                .unwrap_or(usize::MAX)
                .cmp(&b.best.unwrap_or(usize::MAX))
                .then(b.matching.cmp(&a.matching))
                .then(ia.cmp(ib))
        }),
        GroupRule::MeanRank => order.sort_by(|(ia, a), (ib, b)| {
            // compare rank_sum / objects without division
            (a.rank_sum * b.objects)
                .cmp(&(b.rank_sum * a.objects))
                .then(b.matching.cmp(&a.matching))
                .then(ia.cmp(ib))
        }),
    }
    let selections = order
        .into_iter()
        .take(budget)
        .map(|(id, score)| {
            let slice = score.best.map(|r| &ranked[r]);
            Selection {
                id: id.to_string(),
                slice_key: slice.map(|s| s.key.clone()),
                slice_avg_perf: slice.map(|s| s.avg),
                slice_rank: score.best,
            }
        })
        .collect();
    Ok(plan(report, PlanMode::Groups, budget, selections, warnings))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analyze::ErrorSlice;
    use crate::schema::{Attribute, AttributeSchema, Category, Sample, Task};
    use std::sync::Arc;

    fn pool(rows: &[(&str, &str, &str)]) -> TaggedDataset {
        let schema = AttributeSchema::new(
            Task::Other,
            "1",
            vec![
                Attribute::new("a", Category::MainObject, &["x", "y", "z"]),
                Attribute::new("b", Category::Global, &["p", "q"]),
            ],
        )
        .unwrap();
        let samples = rows
            .iter()
            .map(|(id, a, b)| Sample::new(*id, [("a", *a), ("b", *b)]))
            .collect();
        TaggedDataset::new(Arc::new(schema), samples).unwrap()
    }

    fn report(keys: &[&[(&str, &str)]]) -> ErrorSliceReport {
        ErrorSliceReport {
            version: "1".into(),
            kind: "error-slice-report".into(),
            model_id: "m".into(),
            threshold: 0.2,
            overall_perf: 0.9,
            rule: None,
            lattice_id: "l".into(),
            num_samples: 0,
            retained_count: 0,
            error_slices: keys
                .iter()
                .enumerate()
                .map(|(i, k)| ErrorSlice {
                    key: NamedKey::new(k.iter().copied()),
                    count: 1,
                    avg_perf: 0.1 * (i + 1) as f64,
                    parents: vec![],
                })
                .collect(),
        }
    }

    #[test]
    fn budget_two_from_worst_slice() {
        let p = pool(&[
            ("s1", "y", "p"),
            ("s9", "x", "p"),
            ("s3", "x", "q"),
            ("s7", "x", "p"),
            ("s2", "z", "q"),
        ]);
        let plan = prioritize_pool(&report(&[&[("a", "x")]]), &p, 2, &RepairOptions::default());
        assert_eq!(plan.ids().collect::<Vec<_>>(), ["s3", "s7"]);
        assert!(plan
            .selections
            .iter()
            .all(|s| s.slice_key == Some(NamedKey::new([("a", "x")]))));
        assert!(plan.warnings.is_empty());
    }

    #[test]
    fn empty_first_slice_skipped_and_budget_capped() {
        let p = pool(&[("s1", "y", "p"), ("s2", "y", "q"), ("s3", "x", "q")]);
        let r = report(&[&[("a", "z")], &[("a", "y")]]);
        let plan = prioritize_pool(&r, &p, 10, &RepairOptions::default());
        assert_eq!(plan.ids().collect::<Vec<_>>(), ["s1", "s2", "s3"]);
        assert_eq!(plan.selections[0].slice_rank, Some(1));
        assert_eq!(plan.selections[2].slice_key, None);
        assert_eq!(plan.warnings.len(), 1);
    }

    #[test]
    fn pinned_slice_goes_first() {
        let p = pool(&[("s1", "y", "p"), ("s2", "x", "q")]);
        let r = report(&[&[("a", "x")], &[("a", "y")]]);
        let opts = RepairOptions {
            pinned: vec![NamedKey::new([("a", "y")])],
            ..Default::default()
        };
        let plan = prioritize_pool(&r, &p, 1, &opts);
        assert_eq!(plan.ids().collect::<Vec<_>>(), ["s1"]);
        let opts = RepairOptions {
            pinned: vec![NamedKey::new([("b", "q")]), NamedKey::new([("a", "y")])],
            ..Default::default()
        };
        let r = report(&[&[("a", "x")], &[("a", "y")], &[("b", "q")]]);
        let plan = prioritize_pool(&r, &p, 2, &opts);
        assert_eq!(plan.ids().collect::<Vec<_>>(), ["s2", "s1"]);
        assert_eq!(plan.selections[0].slice_rank, Some(0));
    }

    #[test]
    fn groups_need_keys() {
        let p = pool(&[("s1", "y", "p")]);
        assert!(matches!(
            prioritize_groups(&report(&[&[("a", "y")]]), &p, 1, &RepairOptions::default()),
            Err(RepairError::MissingGroup(_))
        ));
    }

    #[test]
    fn plan_round_trip() {
        let p = pool(&[("s1", "y", "p"), ("s2", "x", "q")]);
        let plan = prioritize_pool(&report(&[&[("a", "x")]]), &p, 2, &RepairOptions::default());
        assert_eq!(RepairPlan::read_json(plan.to_json().as_bytes()).unwrap(), plan);
        let dup = plan.to_json().replace("\"s1\"", "\"s2\"");
        assert!(RepairPlan::read_json(dup.as_bytes()).is_err());
    }
}
