//! Seeded synthetic schemas and datasets.
//!
//! Used for oracle comparisons, the enumeration benchmark, and planted
//! error-slice recovery runs. Everything here is deterministic in its seed.

use std::sync::Arc;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::schema::{Attribute, AttributeSchema, Category, Sample, TaggedDataset, Task};

#[derive(Clone, Debug)]
pub struct RandomSpec {
    pub num_attributes: usize,
    pub min_tags: usize,
    pub max_tags: usize,
    pub num_samples: usize,
    /// Draw per-attribute tag frequencies from a skewed distribution.
    pub skewed: bool,
}

impl RandomSpec {
    pub fn fixed(num_attributes: usize, tags: usize, num_samples: usize) -> Self {
        Self {
            num_attributes,
            min_tags: tags,
            max_tags: tags,
            num_samples,
            skewed: true,
        }
    }
}

fn category_for(i: usize) -> Category {
    Category::ALL[i % 3]
}

pub fn random_schema(spec: &RandomSpec, rng: &mut impl Rng) -> AttributeSchema {
    let attributes = (0..spec.num_attributes)
        .map(|i| {
            let k = rng.random_range(spec.min_tags..=spec.max_tags);
            Attribute {
                name: format!("attr {i:02}"),
                category: category_for(i),
                tags: (0..k).map(|t| format!("tag {t}")).collect(),
            }
        })
        .collect();
    AttributeSchema::new(Task::Other, "synthetic", attributes).expect("generated schema is valid")
}

fn tag_weights(tags: usize, skewed: bool, rng: &mut impl Rng) -> Vec<f64> {
    if !skewed {
        return vec![1.0; tags];
    }
    let exponent = rng.random_range(0.0..1.5);
    let mut w: Vec<f64> = (0..tags).map(|j| 1.0 / ((j + 1) as f64).powf(exponent)).collect();
    // shuffle which tag is common
    for i in (1..w.len()).rev() {
        let j = rng.random_range(0..=i);
        w.swap(i, j);
    }
    w
}

/// Samples tags independently per attribute; performance is uniform in
/// [0,1] with a share of exact 0/1 values.
pub fn random_samples(schema: &AttributeSchema, n: usize, skewed: bool, rng: &mut impl Rng) -> Vec<Sample> {
    let dists: Vec<WeightedIndex<f64>> = schema
        .attributes()
        .iter()
        .map(|a| WeightedIndex::new(tag_weights(a.tags.len(), skewed, rng)).expect("positive weights"))
        .collect();
    (0..n)
        .map(|i| {
            let tags = schema
                .attributes()
                .iter()
                .zip(&dists)
                .map(|(a, d)| (a.name.clone(), a.tags[d.sample(rng)].clone()))
                .collect();
            let perf = match rng.random_range(0..4) {
                0 => 0.0,
                1 => 1.0,
                _ => rng.random_range(0.0..=1.0),
            };
            Sample {
                id: format!("s{i:06}"),
                tags,
                performance: Some(perf),
                group: None,
            }
        })
        .collect()
}

pub fn random_dataset(spec: &RandomSpec, seed: u64) -> TaggedDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let schema = Arc::new(random_schema(spec, &mut rng));
    let samples = random_samples(&schema, spec.num_samples, spec.skewed, &mut rng);
    TaggedDataset::new(schema, samples).expect("generated dataset is valid")
}

const BINARY: &[&str] = &["yes", "no"];
const BINARY_NV: &[&str] = &["yes", "no", "not visible"];
const LEVELS: &[&str] = &["high", "medium", "low"];

/// The 46-attribute pose-estimation vocabulary, with open-ended tag lists
/// filled out to roughly four tags per attribute.
pub fn pose_reference_schema() -> AttributeSchema {
    use Category::*;
    let spec: &[(&str, Category, &[&str])] = &[
        ("is arm crossing", MainObject, BINARY),
        (
            "pose complexity",
            MainObject,
            &["simple", "medium", "complex", "not visible"],
        ),
        (
            "clothes color",
            MainObject,
            &["red", "blue", "green", "yellow", "black", "white", "gray", "multicolor"],
        ),
        ("is standing on one leg", MainObject, BINARY),
        ("is carrying something", MainObject, BINARY),
        ("is on all fours", MainObject, BINARY),
        (
            "pose",
            MainObject,
            &[
                "sitting",
                "jumping",
                "lying down",
                "standing",
                "squatting",
                "walking",
                "bending",
            ],
        ),
        (
            "head orientation",
            MainObject,
            &["front", "back", "sideways", "tilted", "not visible"],
        ),
        ("size", MainObject, &["large", "medium", "small"]),
        (
            "object orientation",
            MainObject,
            &["upright", "sideways", "inverted", "tilted"],
        ),
        ("is sitting", MainObject, BINARY),
        ("is using props", MainObject, BINARY),
        (
            "leg position",
            MainObject,
            &["together", "apart", "crossed", "bent", "not visible"],
        ),
        (
            "limb visibility",
            MainObject,
            &[
                "both arms visible",
                "one arm visible",
                "no arms visible",
                "legs only visible",
                "all limbs visible",
            ],
        ),
        ("is crouching", MainObject, BINARY),
        ("is partially occluded", MainObject, BINARY),
        (
            "clothes type",
            MainObject,
            &["casual", "formal", "sportswear", "uniform", "traditional", "swimwear"],
        ),
        (
            "facial expression",
            MainObject,
            &["smiling", "frowning", "neutral", "surprised", "not visible"],
        ),
        ("is holding hands behind back", MainObject, BINARY),
        ("is leg crossing", MainObject, BINARY),
        ("clothes fit", MainObject, &["tight", "loose", "fitted", "not visible"]),
        ("is sky presented", Background, BINARY_NV),
        ("clutter", Background, LEVELS),
        ("is natural habitat presented", Background, BINARY_NV),
        (
            "background style",
            Background,
            &["urban", "rural", "natural", "artificial", "indoors"],
        ),
        (
            "indoor lighting",
            Background,
            &["bright", "dim", "natural", "artificial", "not visible"],
        ),
        ("is dynamic", Background, BINARY),
        ("is containing other people", Background, BINARY_NV),
        ("is background similar in color to main object", Background, BINARY),
        (
            "background color",
            Background,
            &["red", "blue", "green", "white", "black", "gray", "brown", "not visible"],
        ),
        ("is containing reflective surfaces", Background, BINARY_NV),
        ("is indoor", Background, BINARY),
        (
            "weather",
            Background,
            &["sunny", "cloudy", "rainy", "snowy", "foggy", "not visible"],
        ),
        (
            "time of day",
            Background,
            &["morning", "afternoon", "evening", "night", "not visible"],
        ),
        ("overall color temperature", Global, &["warm", "neutral", "cool"]),
        ("image saturation", Global, LEVELS),
        ("resolution", Global, LEVELS),
        (
            "camera angle",
            Global,
            &["level", "high angle", "low angle", "overhead", "dutch angle"],
        ),
        ("noise level", Global, LEVELS),
        ("brightness", Global, LEVELS),
        (
            "camera distance from main object",
            Global,
            &["close-up", "medium shot", "wide shot", "extreme wide shot"],
        ),
        ("sharpness", Global, &["sharp", "medium", "blurry"]),
        ("overall tone", Global, &["warm", "cool", "neutral"]),
        ("image orientation", Global, &["portrait", "landscape", "square"]),
        ("is blurred", Global, BINARY),
        ("contrast", Global, LEVELS),
    ];
    let attributes = spec.iter().map(|(n, c, t)| Attribute::new(n, *c, t)).collect();
    AttributeSchema::new(Task::PoseEstimation, "pose-reference-1", attributes).expect("reference schema is valid")
}

/// Pose-scale reference corpus: skewed tags, OKS-like performance with a
/// few tag-dependent weaknesses.
pub fn pose_reference_corpus(num_samples: usize, seed: u64) -> TaggedDataset {
    let schema = Arc::new(pose_reference_schema());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = random_samples(&schema, num_samples, true, &mut rng);
    for s in &mut samples {
        let mut perf: f64 = 0.86 + rng.random_range(-0.08..0.08);
        if s.tag("pose") == Some("lying down") {
            perf -= 0.25;
        }
        if s.tag("clothes color") == Some("black") && s.tag("indoor lighting") == Some("dim") {
            perf -= 0.3;
        }
        if s.tag("is leg crossing") == Some("yes") && s.tag("is partially occluded") == Some("yes") {
            perf -= 0.2;
        }
        s.performance = Some(perf.clamp(0.0, 1.0));
    }
    TaggedDataset::new(schema, samples).expect("generated dataset is valid")
}

/// A dataset with a known bad combination.
#[derive(Clone, Debug)]
pub struct PlantedSpec {
    pub background: RandomSpec,
    /// `(attribute index, tag index)` pairs of the planted combination.
    pub combination: Vec<(usize, usize)>,
    pub planted_count: usize,
    pub planted_performance: f64,
    pub background_performance: f64,
    /// Half-width of uniform noise added to background performance.
    pub background_noise: f64,
}

pub struct Planted {
    pub dataset: TaggedDataset,
    /// The planted combination by name.
    pub pairs: Vec<(String, String)>,
    /// Ids of the injected samples.
    pub planted_ids: Vec<String>,
}

/// Background samples never match the planted combination; injected
/// samples always do.
pub fn planted_dataset(spec: &PlantedSpec, seed: u64) -> Planted {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let schema = Arc::new(random_schema(&spec.background, &mut rng));
    let pairs: Vec<(String, String)> = spec
        .combination
        .iter()
        .map(|&(a, t)| {
            let attr = &schema.attributes()[a];
            (attr.name.clone(), attr.tags[t].clone())
        })
        .collect();
    let matches = |s: &Sample| pairs.iter().all(|(a, t)| s.tag(a) == Some(t));
    let mut samples = Vec::with_capacity(spec.background.num_samples + spec.planted_count);
    while samples.len() < spec.background.num_samples {
        let mut s = random_samples(&schema, 1, spec.background.skewed, &mut rng)
            .pop()
            .unwrap();
        if matches(&s) {
            continue;
        }
        let noise = if spec.background_noise > 0.0 {
            rng.random_range(-spec.background_noise..=spec.background_noise)
        } else {
            0.0
        };
        s.performance = Some((spec.background_performance + noise).clamp(0.0, 1.0));
        s.id = format!("bg{:06}", samples.len());
        samples.push(s);
    }
    let mut planted_ids = Vec::new();
    for i in 0..spec.planted_count {
        let mut s = random_samples(&schema, 1, spec.background.skewed, &mut rng)
            .pop()
            .unwrap();
        for (a, t) in &pairs {
            s.tags.insert(a.clone(), t.clone());
        }
        s.performance = Some(spec.planted_performance);
        s.id = format!("pl{i:06}");
        planted_ids.push(s.id.clone());
        samples.push(s);
    }
    // interleave deterministically
    for i in (1..samples.len()).rev() {
        let j = rng.random_range(0..=i);
        samples.swap(i, j);
    }
    let dataset = TaggedDataset::new(schema, samples).expect("generated dataset is valid");
    Planted {
        dataset,
        pairs,
        planted_ids,
    }
}
