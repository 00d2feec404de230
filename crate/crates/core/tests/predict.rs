use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use slicewise::analyze::{ErrorSlice, ErrorSliceReport};
use slicewise::index::NamedKey;
use slicewise::llm::{FnClient, LlmError, LlmRequest, ScriptedClient};
use slicewise::predict::{
    evaluate_predicted, instruct_predict, substitute_tags, EvalStatus, InstructOptions, Metric, PredictError,
    PredictedSlice, Provenance, SubstituteOptions, TableEmbedder,
};
use slicewise::schema::{Attribute, AttributeSchema, Category, Sample, TaggedDataset, Task};

fn report(keys: &[&[(&str, &str)]]) -> ErrorSliceReport {
    ErrorSliceReport {
        version: "1".into(),
        kind: "error-slice-report".into(),
        model_id: "m".into(),
        threshold: 0.2,
        overall_perf: 0.9,
        rule: None,
        lattice_id: "l".into(),
        num_samples: 100,
        retained_count: 10,
        error_slices: keys
            .iter()
            .enumerate()
            .map(|(i, k)| ErrorSlice {
                key: NamedKey::new(k.iter().copied()),
                count: 10,
                avg_perf: 0.1 + i as f64 * 0.01,
                parents: Vec::new(),
            })
            .collect(),
    }
}

fn schema(attrs: &[(&str, &[&str])]) -> AttributeSchema {
    AttributeSchema::new(
        Task::Other,
        "1",
        attrs
            .iter()
            .map(|(n, t)| Attribute::new(n, Category::MainObject, t))
            .collect(),
    )
    .unwrap()
}

#[test]
fn nearest_tag_replaces_red_with_crimson() {
    let s = schema(&[("color", &["red", "crimson", "blue"]), ("size", &["big", "small"])]);
    let emb = TableEmbedder::new([
        ("red", vec![0.0]),
        ("crimson", vec![0.1]),
        ("blue", vec![1.0]),
        ("big", vec![0.0]),
        ("small", vec![1.0]),
    ])
    .unwrap();
    let r = report(&[&[("color", "red"), ("size", "big")]]);
    let out = substitute_tags(&r, &s, &emb, &SubstituteOptions::default()).unwrap();
    let keys: Vec<String> = out.predicted.iter().map(|p| p.key.to_string()).collect();
    assert_eq!(keys, ["color=crimson;size=big", "color=red;size=small"]);
    assert_eq!(
        out.predicted[0].provenance,
        Provenance::TagSubstitution {
            origin: r.error_slices[0].key.clone(),
            attribute: "color".into(),
            replaced: "red".into(),
            with: "crimson".into()
        }
    );
}

#[test]
fn equal_distance_tie_goes_to_smaller_tag() {
    let s = schema(&[("a", &["x", "y2", "y1"])]);
    let emb = TableEmbedder::new([("x", vec![0.5]), ("y1", vec![0.4]), ("y2", vec![0.6])]).unwrap();
    let out = substitute_tags(&report(&[&[("a", "x")]]), &s, &emb, &SubstituteOptions::default()).unwrap();
    assert_eq!(out.predicted[0].key, NamedKey::new([("a", "y1")]));
}

#[test]
fn report_keys_and_repeats_not_emitted() {
    let s = schema(&[("color", &["red", "crimson", "blue"])]);
    let emb = TableEmbedder::new([("red", vec![0.0]), ("crimson", vec![0.1]), ("blue", vec![1.0])]).unwrap();
    // crimson is already reported; red's nearest is crimson and crimson's is red
    let r = report(&[&[("color", "red")], &[("color", "crimson")]]);
    let out = substitute_tags(&r, &s, &emb, &SubstituteOptions::default()).unwrap();
    assert!(out.predicted.is_empty());
    assert!(matches!(
        substitute_tags(&report(&[]), &s, &emb, &SubstituteOptions::default()),
        Err(PredictError::EmptyReport)
    ));
}

#[test]
fn unknown_attribute_and_missing_embedding() {
    let s = schema(&[("a", &["x", "y"])]);
    let emb = TableEmbedder::new([("x", vec![0.0])]).unwrap();
    let r = report(&[&[("a", "x")]]);
    assert!(matches!(
        substitute_tags(&r, &s, &emb, &SubstituteOptions::default()),
        Err(PredictError::NoEmbedding(t)) if t == "y"
    ));
    let r = report(&[&[("b", "x")]]);
    assert!(matches!(
        substitute_tags(&r, &s, &emb, &SubstituteOptions::default()),
        Err(PredictError::UnknownAttribute(_))
    ));
}

fn random_case(seed: u64) -> (AttributeSchema, TableEmbedder, ErrorSliceReport) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut attrs: Vec<(String, Vec<String>)> = Vec::new();
    let mut table = Vec::new();
    for a in 0..4 {
        let n = rng.random_range(2..6);
        let tags: Vec<String> = (0..n).map(|t| format!("a{a}t{t}")).collect();
        for t in &tags {
            // coarse grid so equal distances happen
            table.push((
                t.clone(),
                vec![rng.random_range(0..5) as f64, rng.random_range(0..5) as f64],
            ));
        }
        attrs.push((format!("attr{a}"), tags));
    }
    let schema = AttributeSchema::new(
        Task::Other,
        "1",
        attrs
            .iter()
            .map(|(n, t)| Attribute {
                name: n.clone(),
                category: Category::Global,
                tags: t.clone(),
            })
            .collect(),
    )
    .unwrap();
    let mut slices = Vec::new();
    for i in 0..6 {
        let depth = rng.random_range(1..=3);
        let mut chosen: Vec<usize> = (0..4).collect();
        chosen.shuffle(&mut rng);
        let key = NamedKey::new(chosen[..depth].iter().map(|&a| {
            let tags = &attrs[a].1;
            (attrs[a].0.clone(), tags[rng.random_range(0..tags.len())].clone())
        }));
        slices.push(ErrorSlice {
            key,
            count: 20,
            avg_perf: 0.1 + i as f64 * 0.01,
            parents: Vec::new(),
        });
    }
    let mut r = report(&[]);
    r.error_slices = slices;
    (schema, TableEmbedder::new(table).unwrap(), r)
}

/// Exhaustive nearest neighbour over every other tag of the attribute.
fn brute_force(
    schema: &AttributeSchema,
    emb: &TableEmbedder,
    r: &ErrorSliceReport,
    top_k: usize,
) -> BTreeSet<NamedKey> {
    use slicewise::predict::EmbeddingProvider;
    let reported: BTreeSet<&NamedKey> = r.error_slices.iter().map(|s| &s.key).collect();
    let mut out = BTreeSet::new();
    for s in r.error_slices.iter().take(top_k) {
        for (a, t) in s.key.pairs() {
            let here = emb.embed(t).unwrap();
            let mut cands: Vec<(f64, String)> = schema
                .attribute(a)
                .unwrap()
                .tags
                .iter()
                .filter(|c| *c != t)
                .map(|c| {
                    let v = emb.embed(c).unwrap();
                    let d = here.iter().zip(&v).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
                    (d, c.clone())
                })
                .collect();
            cands.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
            let mut pairs: BTreeMap<String, String> = s.key.pairs().iter().cloned().collect();
            pairs.insert(a.clone(), cands[0].1.clone());
            let key = NamedKey::new(pairs);
            if !reported.contains(&key) {
                out.insert(key);
            }
        }
    }
    out
}

#[test]
fn substitution_matches_exhaustive_nearest_neighbour() {
    for seed in 0..50 {
        let (schema, emb, r) = random_case(seed);
        let out = substitute_tags(
            &r,
            &schema,
            &emb,
            &SubstituteOptions {
                top_k: 3,
                metric: Metric::Euclidean,
            },
        )
        .unwrap();
        let got: BTreeSet<NamedKey> = out.predicted.iter().map(|p| p.key.clone()).collect();
        assert_eq!(got.len(), out.predicted.len(), "no duplicates");
        assert_eq!(got, brute_force(&schema, &emb, &r, 3), "seed {seed}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn substitution_changes_exactly_one_pair(seed in any::<u64>()) {
        let (schema, emb, r) = random_case(seed);
        let out = substitute_tags(&r, &schema, &emb, &SubstituteOptions::default()).unwrap();
        let reported: BTreeSet<&NamedKey> = r.error_slices.iter().map(|s| &s.key).collect();
        for p in &out.predicted {
            prop_assert!(!reported.contains(&p.key));
            let Provenance::TagSubstitution { origin, .. } = &p.provenance else { panic!() };
            prop_assert_ne!(origin, &p.key);
            prop_assert_eq!(origin.depth(), p.key.depth());
            let diff = origin.pairs().iter().zip(p.key.pairs()).filter(|(a, b)| a != b).count();
            prop_assert_eq!(diff, 1);
            for (a, t) in p.key.pairs() {
                prop_assert!(schema.attribute(a).unwrap().has_tag(t));
            }
        }
    }

    #[test]
    fn substitution_invariant_to_tag_order(seed in any::<u64>()) {
        let (schema, emb, r) = random_case(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shuffled = AttributeSchema::new(
            Task::Other,
            "1",
            schema.attributes().iter().map(|a| {
                let mut a = a.clone();
                a.tags.shuffle(&mut rng);
                a
            }).collect(),
        ).unwrap();
        let a = substitute_tags(&r, &schema, &emb, &SubstituteOptions::default()).unwrap();
        let b = substitute_tags(&r, &shuffled, &emb, &SubstituteOptions::default()).unwrap();
        prop_assert_eq!(a, b);
    }
}

fn person_schema() -> AttributeSchema {
    AttributeSchema::new(
        Task::Classification,
        "1",
        vec![
            Attribute::new("object color", Category::MainObject, &["white", "black", "brown"]),
            Attribute::new("pose", Category::MainObject, &["sitting", "standing"]),
            Attribute::new("brightness", Category::Global, &["low", "high"]),
        ],
    )
    .unwrap()
}

fn instruct(pairs: usize) -> InstructOptions {
    InstructOptions {
        task: Task::Classification,
        pair_count: pairs,
        main_class: "cat".into(),
        confusion_class: Some("dog".into()),
        retries: 2,
        model_id: "stub".into(),
    }
}

#[test]
fn structured_reply_parsed() {
    let c = ScriptedClient::new([
        r#"{"predictions":[{"main object":{"object color":"white","pose":"sitting"}, "global":{"brightness":"low"}}]}"#,
    ]);
    let out = instruct_predict(&person_schema(), &c, &instruct(3)).unwrap();
    assert_eq!(out.predicted.len(), 1);
    assert_eq!(out.predicted[0].key.depth(), 3);
    assert_eq!(
        out.predicted[0].key.to_string(),
        "brightness=low;object color=white;pose=sitting"
    );
    assert_eq!(
        out.predicted[0].provenance,
        Provenance::Instruction {
            model: "stub".into(),
            prompt: "predict_confusion@v1".into()
        }
    );
    let req = &c.requests()[0];
    assert!(req
        .system
        .starts_with("You are a dedicated assistant for predicting attribute-tag combinations"));
    assert!(req.user.contains("\"target class\":\"dog\""));
}

#[test]
fn invalid_combinations_dropped_with_reasons() {
    let c = ScriptedClient::new([r#"{"predictions":[
        {"main object":{"object color":"purple","pose":"sitting"},"global":{"brightness":"low"}},
        {"main object":{"object color":"white","pose":"sitting"}},
        {"main object":{"object color":"black","pose":"standing"},"global":{"brightness":"high"}},
        {"main object":{"object color":"black","pose":"standing"},"global":{"brightness":"high"}},
        {"main object":{"object color":["black","white"],"pose":"standing"},"global":{"brightness":"high"}}
    ]}"#]);
    let out = instruct_predict(&person_schema(), &c, &instruct(3)).unwrap();
    assert_eq!(out.predicted.len(), 1);
    let reasons: Vec<&str> = out.dropped.iter().map(|d| d.reason.as_str()).collect();
    assert!(reasons[0].contains("purple"));
    assert!(reasons[1].contains("must be equal to the given integer"));
    assert_eq!(reasons[2], "duplicate combination");
    assert!(reasons[3].contains("exactly one tag"));
}

#[test]
fn prose_reply_retried_then_gives_up() {
    let good = r#"{"predictions":[{"main object":{"pose":"sitting"}}]}"#;
    let c = ScriptedClient::new(["Sure, here are some ideas: ...", good]);
    let out = instruct_predict(&person_schema(), &c, &instruct(1)).unwrap();
    assert_eq!(out.attempts, 2);
    assert!(c.requests()[1].user.contains("could not be used"));

    let c = FnClient(|_: &LlmRequest| Ok(r#"{"predictions":[{"main object":{"pose":"flying"}}]}"#.to_string()));
    assert!(matches!(
        instruct_predict(&person_schema(), &c, &instruct(1)),
        Err(PredictError::NoValidPredictions {
            attempts: 3,
            dropped: 3
        })
    ));
    let down = FnClient(|_: &LlmRequest| Err(LlmError::Transport("down".into())));
    assert!(matches!(
        instruct_predict(&person_schema(), &down, &instruct(1)),
        Err(PredictError::Llm(_))
    ));
    assert!(matches!(
        instruct_predict(&person_schema(), &down, &instruct(4)),
        Err(PredictError::InvalidPairCount { .. })
    ));
    let mut no_target = instruct(1);
    no_target.confusion_class = None;
    assert!(matches!(
        instruct_predict(&person_schema(), &down, &no_target),
        Err(PredictError::MissingConfusionClass)
    ));
}

#[test]
fn localization_tasks_use_own_template() {
    let c = ScriptedClient::new([r#"{"predictions":[{"main object":{"pose":"sitting"}}]}"#]);
    let opts = InstructOptions {
        task: Task::PoseEstimation,
        confusion_class: None,
        ..instruct(1)
    };
    instruct_predict(&person_schema(), &c, &opts).unwrap();
    assert_eq!(c.requests()[0].system, slicewise::prompts::PREDICT_LOCALIZATION.text);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn instructed_predictions_always_validate(seed in any::<u64>(), pairs in 1usize..=3) {
        let schema = person_schema();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let names = ["object color", "pose", "brightness", "ghost"];
        let tags = ["white", "black", "sitting", "standing", "low", "high", "purple"];
        let cats = ["main object", "global", "background", "nowhere"];
        let mut items = Vec::new();
        for _ in 0..rng.random_range(0..6) {
            let mut item = serde_json::Map::new();
            for _ in 0..rng.random_range(0..4) {
                let cat = cats[rng.random_range(0..cats.len())];
                let entry = item.entry(cat).or_insert_with(|| serde_json::json!({}));
                entry[names[rng.random_range(0..names.len())]] = serde_json::json!(tags[rng.random_range(0..tags.len())]);
            }
            items.push(serde_json::Value::Object(item));
        }
        let reply = serde_json::json!({"predictions": items}).to_string();
        let c = FnClient(move |_: &LlmRequest| Ok(reply.clone()));
        if let Ok(out) = instruct_predict(&schema, &c, &instruct(pairs)) {
            for p in &out.predicted {
                prop_assert_eq!(p.key.depth(), pairs);
                for (a, t) in p.key.pairs() {
                    prop_assert!(schema.attribute(a).unwrap().has_tag(t));
                }
            }
        }
    }
}

fn eval_dataset() -> TaggedDataset {
    let schema = Arc::new(schema(&[("color", &["red", "blue"]), ("size", &["big", "small"])]));
    let rows = [
        ("red", "big", 0.2),
        ("red", "big", 0.4),
        ("red", "small", 1.0),
        ("blue", "big", 1.0),
        ("blue", "big", 1.0),
        ("blue", "small", 1.0),
        ("red", "small", 1.0),
    ];
    let samples = rows
        .iter()
        .enumerate()
        .map(|(i, (c, s, p))| Sample::new(format!("s{i}"), [("color", *c), ("size", *s)]).with_performance(*p))
        .collect();
    TaggedDataset::new(schema, samples).unwrap()
}

fn predicted(pairs: &[(&str, &str)]) -> PredictedSlice {
    PredictedSlice {
        key: NamedKey::new(pairs.iter().copied()),
        provenance: Provenance::Instruction {
            model: "m".into(),
            prompt: "p".into(),
        },
    }
}

#[test]
fn degradation_table() {
    let ds = eval_dataset();
    let table = evaluate_predicted(
        &[
            predicted(&[("color", "red"), ("size", "big")]),
            predicted(&[("color", "blue"), ("size", "small")]),
            predicted(&[("color", "green")]),
        ],
        &ds,
        2,
    )
    .unwrap();
    assert!((table.overall_perf - 0.8).abs() < 1e-12);
    let row = &table.rows[0];
    assert_eq!(row.status, EvalStatus::Evaluated);
    assert_eq!(row.count, 2);
    assert!((row.avg_perf.unwrap() - 0.3).abs() < 1e-12);
    assert!((row.degradation.unwrap() + 0.5).abs() < 1e-12);
    assert_eq!(table.rows[1].status, EvalStatus::TooSmall);
    assert_eq!(table.rows[2].status, EvalStatus::Unmatched);
    assert!((table.mean_degradation.unwrap() + 0.5).abs() < 1e-12);
}

#[test]
fn zero_match_slice_listed_unmatched() {
    let ds = eval_dataset();
    let only_blue: Vec<Sample> = ds
        .samples()
        .iter()
        .filter(|s| s.tag("color") == Some("blue"))
        .cloned()
        .collect();
    let ds = TaggedDataset::new(ds.schema_arc().clone(), only_blue).unwrap();
    let table = evaluate_predicted(&[predicted(&[("color", "red")])], &ds, 1).unwrap();
    assert_eq!(table.rows[0].status, EvalStatus::Unmatched);
    assert_eq!(table.rows[0].count, 0);
    assert_eq!(table.mean_degradation, None);
}
