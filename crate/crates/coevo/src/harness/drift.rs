//! Parameter drift: how much the best genotype moves between successive
//! sampling points, split into morphological and control slices.

use serde::{Deserialize, Serialize};

/// One drift sample: mean absolute per-parameter change relative to the
/// previous boundary's center.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftPoint {
    pub env_steps: u64,
    /// `None` when the genotype has no morphological slice (fixed condition).
    pub morph_mean_abs_delta: Option<f64>,
    pub ctrl_mean_abs_delta: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DriftSeries {
    pub interval: u64,
    pub points: Vec<DriftPoint>,
}

/// Compute the drift series from a center history sorted by `env_steps`.
///
/// At each multiple of `interval` the latest center at or before the
/// boundary is sampled; the first sampled boundary has no predecessor and is
/// omitted. Fewer than two boundaries with data yield an empty series.
pub fn drift_series(history: &[(u64, Vec<f64>)], interval: u64, n_morph: usize) -> DriftSeries {
    let mut series = DriftSeries { interval, points: Vec::new() };
    if history.len() < 2 || interval == 0 {
        return series;
    }
    let max_steps = history.last().map(|(s, _)| *s).unwrap_or(0);

    let mut prev: Option<&Vec<f64>> = None;
    let mut idx = 0usize;
    let mut boundary = interval;
    while boundary <= max_steps {
        while idx + 1 < history.len() && history[idx + 1].0 <= boundary {
            idx += 1;
        }
        if history[idx].0 <= boundary {
            let center = &history[idx].1;
            if let Some(prev_center) = prev {
                series.points.push(drift_point(boundary, prev_center, center, n_morph));
            }
            prev = Some(center);
        }
        boundary += interval;
    }
    series
}

/// Drift between two specific centers (used by the online sampler).
pub fn drift_point(env_steps: u64, prev: &[f64], current: &[f64], n_morph: usize) -> DriftPoint {
    debug_assert_eq!(prev.len(), current.len());
    let mean_abs = |a: &[f64], b: &[f64]| {
        if a.is_empty() {
            0.0
        } else {
            a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
        }
    };
    let morph = if n_morph > 0 {
        Some(mean_abs(&prev[..n_morph], &current[..n_morph]))
    } else {
        None
    };
    DriftPoint {
        env_steps,
        morph_mean_abs_delta: morph,
        ctrl_mean_abs_delta: mean_abs(&prev[n_morph..], &current[n_morph..]),
    }
}

/// Incremental drift sampler carried by a running replication: remembers the
/// last boundary center and emits points as boundaries are crossed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftSampler {
    pub interval: u64,
    pub n_morph: usize,
    pub next_boundary: u64,
    pub prev_center: Option<Vec<f64>>,
    pub points: Vec<DriftPoint>,
}

impl DriftSampler {
    pub fn new(interval: u64, n_morph: usize) -> DriftSampler {
        DriftSampler { interval, n_morph, next_boundary: interval, prev_center: None, points: Vec::new() }
    }

    /// Feed the center observed after a generation at `env_steps` total.
    pub fn observe(&mut self, env_steps: u64, center: &[f64]) {
        while env_steps >= self.next_boundary {
            if let Some(prev) = &self.prev_center {
                self.points.push(drift_point(self.next_boundary, prev, center, self.n_morph));
            }
            self.prev_center = Some(center.to_vec());
            self.next_boundary += self.interval;
        }
    }

    pub fn series(&self) -> DriftSeries {
        DriftSeries { interval: self.interval, points: self.points.clone() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_center_gives_zero_series() {
        let c = vec![1.0, 2.0, 3.0];
        let history: Vec<(u64, Vec<f64>)> = (0..5).map(|i| (i * 100, c.clone())).collect();
        let series = drift_series(&history, 100, 1);
        assert!(!series.points.is_empty());
        for p in &series.points {
            assert_eq!(p.morph_mean_abs_delta, Some(0.0));
            assert_eq!(p.ctrl_mean_abs_delta, 0.0);
        }
    }

    #[test]
    fn uniform_shift_reports_the_shift() {
        let a = vec![0.0; 6];
        let b = vec![0.1; 6];
        let history = vec![(100u64, a), (200u64, b)];
        let series = drift_series(&history, 100, 2);
        assert_eq!(series.points.len(), 1);
        let p = &series.points[0];
        assert_eq!(p.env_steps, 200);
        assert!((p.morph_mean_abs_delta.unwrap() - 0.1).abs() < 1e-15);
        assert!((p.ctrl_mean_abs_delta - 0.1).abs() < 1e-15);
    }

    #[test]
    fn hand_constructed_four_parameter_history() {
        // 2 morph + 2 ctrl parameters with known per-slice deltas (0.2, 0.05)
        let c0 = vec![1.0, 2.0, 3.0, 4.0];
        let c1 = vec![1.1, 1.7, 3.05, 3.95]; // morph |d| = (0.1 + 0.3)/2 = 0.2, ctrl = 0.05
        let history = vec![(100_000u64, c0), (200_000u64, c1)];
        let series = drift_series(&history, 100_000, 2);
        assert_eq!(series.points.len(), 1);
        let p = &series.points[0];
        assert!((p.morph_mean_abs_delta.unwrap() - 0.2).abs() < 1e-12);
        assert!((p.ctrl_mean_abs_delta - 0.05).abs() < 1e-12);
    }

    #[test]
    fn too_short_history_is_empty() {
        assert!(drift_series(&[], 100, 0).points.is_empty());
        assert!(drift_series(&[(50, vec![1.0])], 100, 0).points.is_empty());
        // two entries inside one interval: only one boundary has data
        let h = vec![(10u64, vec![0.0]), (20u64, vec![1.0])];
        assert!(drift_series(&h, 100, 0).points.is_empty());
    }

    #[test]
    fn boundary_picks_latest_center_at_or_before() {
        let h = vec![
            (30u64, vec![0.0]),
            (90u64, vec![1.0]),   // boundary 100 sees this
            (150u64, vec![2.0]),
            (200u64, vec![5.0]),  // boundary 200 sees this (exactly at it)
        ];
        let series = drift_series(&h, 100, 0);
        assert_eq!(series.points.len(), 1);
        assert_eq!(series.points[0].env_steps, 200);
        assert!((series.points[0].ctrl_mean_abs_delta - 4.0).abs() < 1e-15);
    }

    #[test]
    fn sampler_matches_batch_computation() {
        let centers: Vec<Vec<f64>> = (0..40).map(|i| vec![(i as f64 * 0.37).sin(), i as f64 * 0.01]).collect();
        let history: Vec<(u64, Vec<f64>)> = centers.iter().enumerate().map(|(i, c)| (i as u64 * 37, c.clone())).collect();

        let mut sampler = DriftSampler::new(100, 1);
        for (s, c) in &history {
            sampler.observe(*s, c);
        }
        let batch = drift_series(&history, 100, 1);
        assert_eq!(sampler.series().points, batch.points);
    }

    #[test]
    fn slice_means_recombine_to_whole_vector_mean() {
        let prev = vec![0.3, -0.7, 1.1, 0.0, 2.2];
        let cur = vec![0.1, -0.9, 1.4, 0.3, 2.0];
        let n_morph = 2;
        let p = drift_point(0, &prev, &cur, n_morph);
        let whole: f64 = prev.iter().zip(&cur).map(|(a, b)| (a - b).abs()).sum::<f64>() / prev.len() as f64;
        let recombined = (p.morph_mean_abs_delta.unwrap() * n_morph as f64
            + p.ctrl_mean_abs_delta * (prev.len() - n_morph) as f64)
            / prev.len() as f64;
        assert!((whole - recombined).abs() < 1e-12);
    }
}
