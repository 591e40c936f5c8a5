//! Wall-clock inference timing.

use std::time::Instant;

use sesgcn_core::data::Poses;
use sesgcn_core::metrics::LatencyStats;
use sesgcn_core::model::SesGcnModel;

use crate::error::{AppError, AppResult};

pub const MIN_TRIALS: usize = 10;

/// Nearest-rank percentile of sorted samples, `q` in (0, 1].
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let rank = (q * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Times `trials` single-sequence forecasts after `warmup` untimed ones.
pub fn benchmark_inference(
    model: &SesGcnModel,
    observed: &Poses,
    warmup: usize,
    trials: usize,
) -> AppResult<LatencyStats> {
    if trials < MIN_TRIALS {
        return Err(AppError::Usage(format!(
            "latency needs at least {MIN_TRIALS} trials, got {trials}"
        )));
    }
    for _ in 0..warmup {
        model.predict(&[observed])?;
    }
    let mut times = Vec::with_capacity(trials);
    for _ in 0..trials {
        let start = Instant::now();
        let out = model.predict(&[observed])?;
        times.push(start.elapsed().as_secs_f64());
        std::hint::black_box(out);
    }
    let mean_s = times.iter().sum::<f64>() / trials as f64;
    times.sort_by(f64::total_cmp);
    Ok(LatencyStats {
        warmup,
        trials,
        mean_s,
        p95_s: percentile(&times, 0.95),
    })
}
