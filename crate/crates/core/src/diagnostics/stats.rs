use serde::{Deserialize, Serialize};

use crate::rng::SimRng;
use crate::{Error, Result};

/// Outcome of one episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub success: bool,
    pub fault: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatsConfig {
    pub window: usize,
    pub resamples: usize,
    /// Central coverage of the interval, e.g. 0.95.
    pub level: f64,
    pub seed: u64,
}

impl Default for StatsConfig {
    fn default() -> Self {
        Self {
            window: 10,
            resamples: 2000,
            level: 0.95,
            seed: 0,
        }
    }
}

/// Windowed rates of one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedCurve {
    pub success: Vec<f64>,
    pub fault: Vec<f64>,
}

/// Cross-seed aggregate at one window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    /// Number of episodes completed at the end of the window.
    pub episode_end: usize,
    pub success_iqm: f64,
    pub success_ci: Option<(f64, f64)>,
    pub fault_iqm: f64,
    pub fault_ci: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunStatistics {
    pub config: StatsConfig,
    pub per_seed: Vec<SeedCurve>,
    pub points: Vec<CurvePoint>,
}

/// Linear-interpolation percentile of sorted data, `q` in `[0, 1]`.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        n => {
            let pos = q.clamp(0.0, 1.0) * (n - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
        }
    }
}

/// Mean after dropping `floor(n / 4)` values from each end.
pub fn interquartile_mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let cut = v.len() / 4;
    let mid = &v[cut..v.len() - cut];
    mid.iter().sum::<f64>() / mid.len() as f64
}

/// Percentile interval of the IQM when seeds are resampled with replacement.
pub fn seed_bootstrap_ci(per_seed: &[f64], resamples: usize, level: f64, rng: &mut SimRng) -> (f64, f64) {
    let n = per_seed.len();
    let mut stats: Vec<f64> = (0..resamples)
        .map(|_| {
            let draw: Vec<f64> = (0..n).map(|_| per_seed[rng.below(n)]).collect();
            interquartile_mean(&draw)
        })
        .collect();
    stats.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    (percentile(&stats, tail), percentile(&stats, 1.0 - tail))
}

/// Success rate over the last `last` records (all of them if fewer).
pub fn final_rate(records: &[EpisodeRecord], last: usize) -> f64 {
    let tail = &records[records.len().saturating_sub(last)..];
    if tail.is_empty() {
        return 0.0;
    }
    tail.iter().filter(|r| r.success).count() as f64 / tail.len() as f64
}

pub fn run_statistics(per_seed: &[Vec<EpisodeRecord>], window: usize) -> Result<RunStatistics> {
    run_statistics_with(
        per_seed,
        StatsConfig {
            window,
            ..StatsConfig::default()
        },
    )
}

/// Windowed per-seed rates over complete windows, aggregated across seeds.
/// With a single seed the intervals are omitted.
pub fn run_statistics_with(per_seed: &[Vec<EpisodeRecord>], config: StatsConfig) -> Result<RunStatistics> {
    if config.window == 0 {
        return Err(Error::config("statistics window must be positive"));
    }
    if per_seed.is_empty() {
        return Err(Error::config("statistics need at least one seed"));
    }
    let rate = |chunk: &[EpisodeRecord], f: fn(&EpisodeRecord) -> bool| {
        chunk.iter().filter(|r| f(r)).count() as f64 / chunk.len() as f64
    };
    let curves: Vec<SeedCurve> = per_seed
        .iter()
        .map(|records| {
            let chunks = records.chunks_exact(config.window);
            SeedCurve {
                success: chunks.clone().map(|c| rate(c, |r| r.success)).collect(),
                fault: chunks.map(|c| rate(c, |r| r.fault)).collect(),
            }
        })
        .collect();
    let points_len = curves.iter().map(|c| c.success.len()).min().unwrap_or(0);
    if per_seed.len() < 2 {
        log::warn!("one seed only: confidence intervals omitted");
    }
    let mut rng = SimRng::new(config.seed);
    let mut ci = |xs: &[f64]| {
        (xs.len() >= 2).then(|| seed_bootstrap_ci(xs, config.resamples, config.level, &mut rng))
    };
    let points = (0..points_len)
        .map(|k| {
            let s: Vec<f64> = curves.iter().map(|c| c.success[k]).collect();
            let f: Vec<f64> = curves.iter().map(|c| c.fault[k]).collect();
            CurvePoint {
                episode_end: (k + 1) * config.window,
                success_iqm: interquartile_mean(&s),
                success_ci: ci(&s),
                fault_iqm: interquartile_mean(&f),
                fault_ci: ci(&f),
            }
        })
        .collect();
    Ok(RunStatistics {
        config,
        per_seed: curves,
        points,
    })
}
