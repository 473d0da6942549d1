use serde::{Deserialize, Serialize};

use super::SimError;

pub const SMOOTHING_WINDOW: usize = 5;
pub const DEFAULT_WARMUP: usize = 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityMetrics {
    pub variance: f64,
    pub smoothed: Vec<f64>,
    pub derivative: Vec<f64>,
    pub timeouts: usize,
    /// Mean latency of post-warmup switch iterations over the mean of the
    /// other post-warmup iterations; `None` without switches on either side.
    pub spike_ratio: Option<f64>,
    /// Variance of the post-warmup part of the series.
    pub post_warmup_variance: Option<f64>,
}

pub fn population_variance(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n
}

/// Centred moving average; the window shrinks symmetrically at the edges.
pub fn centred_moving_average(xs: &[f64], window: usize) -> Vec<f64> {
    let half = window / 2;
    (0..xs.len())
        .map(|i| {
            let h = half.min(i).min(xs.len() - 1 - i);
            let slice = &xs[i - h..=i + h];
            slice.iter().sum::<f64>() / slice.len() as f64
        })
        .collect()
}

pub fn first_difference(xs: &[f64]) -> Vec<f64> {
    xs.windows(2).map(|w| w[1] - w[0]).collect()
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

/// `series[i]` is the total latency of iteration `i + 1`; `switches[i]`
/// marks iterations that start a new schedule period.
pub fn stability_metrics(
    series: &[f64],
    timeouts: &[usize],
    switches: &[bool],
    warmup: usize,
) -> Result<StabilityMetrics, SimError> {
    if series.len() < 3 {
        return Err(SimError::SeriesTooShort(series.len()));
    }
    if switches.len() != series.len() || timeouts.len() != series.len() {
        return Err(SimError::Config("metric inputs differ in length".into()));
    }
    let smoothed = centred_moving_average(series, SMOOTHING_WINDOW);
    let derivative = first_difference(&smoothed);
    let (mut spikes, mut steady) = (Vec::new(), Vec::new());
    for (i, (&x, &s)) in series.iter().zip(switches).enumerate() {
        if i + 1 > warmup {
            if s {
                spikes.push(x);
            } else {
                steady.push(x);
            }
        }
    }
    let spike_ratio = match (mean(&spikes), mean(&steady)) {
        (Some(a), Some(b)) if b > 0.0 => Some(a / b),
        _ => None,
    };
    let post: Vec<f64> = series.iter().skip(warmup).copied().collect();
    Ok(StabilityMetrics {
        variance: population_variance(series),
        smoothed,
        derivative,
        timeouts: timeouts.iter().sum(),
        spike_ratio,
        post_warmup_variance: (!post.is_empty()).then(|| population_variance(&post)),
    })
}
