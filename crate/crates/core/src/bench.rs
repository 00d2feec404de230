//! Timing comparison of the three enumeration algorithms.

use std::fmt;
use std::time::Instant;

use serde::Serialize;

use crate::enumerate::{enumerate_efficient, enumerate_naive, enumerate_tree, Algorithm, EnumConfig, EnumError};
use crate::index::{build_index, IndicatorIndex};
use crate::schema::TaggedDataset;
use crate::synth::pose_reference_corpus;

#[derive(Clone, Debug, Serialize)]
pub struct BenchRow {
    pub algorithm: Algorithm,
    /// Fastest of the repeats.
    pub seconds: f64,
    pub slices: usize,
    /// Naive time over this algorithm's time, when naive was run.
    pub speedup_vs_naive: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct BenchReport {
    pub num_samples: usize,
    pub num_attributes: usize,
    pub max_depth: usize,
    pub min_count: usize,
    pub threads: usize,
    pub repeats: usize,
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn seconds(&self, algorithm: Algorithm) -> Option<f64> {
        self.rows.iter().find(|r| r.algorithm == algorithm).map(|r| r.seconds)
    }

    /// How many times faster `fast` ran than `slow`.
    pub fn ratio(&self, slow: Algorithm, fast: Algorithm) -> Option<f64> {
        Some(self.seconds(slow)? / self.seconds(fast)?)
    }

    /// True when every algorithm found the same number of slices.
    pub fn counts_agree(&self) -> bool {
        self.rows.windows(2).all(|w| w[0].slices == w[1].slices)
    }
}

impl fmt::Display for BenchReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "N={} attributes={} D={} M={} threads={} best of {}",
            self.num_samples, self.num_attributes, self.max_depth, self.min_count, self.threads, self.repeats
        )?;
        writeln!(
            f,
            "{:<10} {:>12} {:>10} {:>10}",
            "algorithm", "seconds", "slices", "speedup"
        )?;
        for row in &self.rows {
            let speedup = row.speedup_vs_naive.map_or("-".to_string(), |s| format!("{s:.1}x"));
            writeln!(
                f,
                "{:<10} {:>12.4} {:>10} {:>10}",
                row.algorithm.name(),
                row.seconds,
                row.slices,
                speedup
            )?;
        }
        if let Some(r) = self.ratio(Algorithm::Tree, Algorithm::Efficient) {
            writeln!(f, "efficient vs tree: {r:.1}x")?;
        }
        Ok(())
    }
}

fn time_once(algorithm: Algorithm, index: &IndicatorIndex, cfg: &EnumConfig) -> Result<(f64, usize), EnumError> {
    let start = Instant::now();
    let slices = match algorithm {
        Algorithm::Naive => enumerate_naive(index, cfg)?.len(),
        Algorithm::Tree => enumerate_tree(index, cfg)?.len(),
        Algorithm::Efficient => enumerate_efficient(index, cfg)?.len(),
    };
    Ok((start.elapsed().as_secs_f64(), slices))
}

/// Times each algorithm on `dataset`, keeping the best of `repeats` runs.
/// Index construction is shared and not timed.
pub fn bench_algorithms(
    dataset: &TaggedDataset,
    cfg: &EnumConfig,
    algorithms: &[Algorithm],
    repeats: usize,
) -> Result<BenchReport, EnumError> {
    cfg.validate()?;
    let index = build_index(dataset);
    let repeats = repeats.max(1);
    let mut rows = Vec::with_capacity(algorithms.len());
    for &algorithm in algorithms {
        let mut best = f64::INFINITY;
        let mut slices = 0;
        for _ in 0..repeats {
            let (secs, n) = time_once(algorithm, &index, cfg)?;
            best = best.min(secs);
            slices = n;
        }
        log::info!("{algorithm}: {best:.4}s, {slices} slices");
        rows.push(BenchRow {
            algorithm,
            seconds: best,
            slices,
            speedup_vs_naive: None,
        });
    }
    if let Some(naive) = rows.iter().find(|r| r.algorithm == Algorithm::Naive).map(|r| r.seconds) {
        for row in &mut rows {
            row.speedup_vs_naive = Some(naive / row.seconds);
        }
    }
    Ok(BenchReport {
        num_samples: dataset.len(),
        num_attributes: dataset.schema().len(),
        max_depth: cfg.max_depth,
        min_count: cfg.min_count,
        threads: cfg.threads,
        repeats,
        rows,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct ScalingPoint {
    pub num_samples: usize,
    pub seconds: f64,
    pub slices: usize,
}

/// Efficient enumeration time on the pose-scale reference corpus at each
/// size, best of `repeats`.
pub fn scaling(sizes: &[usize], seed: u64, cfg: &EnumConfig, repeats: usize) -> Result<Vec<ScalingPoint>, EnumError> {
    cfg.validate()?;
    sizes
        .iter()
        .map(|&n| {
            let index = build_index(&pose_reference_corpus(n, seed));
            let mut best = f64::INFINITY;
            let mut slices = 0;
            for _ in 0..repeats.max(1) {
                let (secs, count) = time_once(Algorithm::Efficient, &index, cfg)?;
                best = best.min(secs);
                slices = count;
            }
            Ok(ScalingPoint {
                num_samples: n,
                seconds: best,
                slices,
            })
        })
        .collect()
}

pub fn format_scaling(points: &[ScalingPoint]) -> String {
    let mut out = format!("{:>10} {:>12} {:>10} {:>10}\n", "N", "seconds", "slices", "vs first");
    let base = points.first().map_or(1.0, |p| p.seconds);
    for p in points {
        out.push_str(&format!(
            "{:>10} {:>12.4} {:>10} {:>9.2}x\n",
            p.num_samples,
            p.seconds,
            p.slices,
            p.seconds / base
        ));
    }
    out
}
