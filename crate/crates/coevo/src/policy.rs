//! Feedforward neural controller and observation normalization.

use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

pub use crate::bauplan::PolicyShape;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("parameter vector has length {got}, shape expects {expected}")]
    ParamLength { expected: usize, got: usize },
    #[error("observation has length {got}, shape expects {expected}")]
    ObsLength { expected: usize, got: usize },
    #[error("observation statistics are uninitialized (count = 0)")]
    UninitializedStats,
    #[error("statistics track {expected} components, got {got}")]
    StatsLength { expected: usize, got: usize },
}

/// Weights and biases of the two-layer network, unflattened.
///
/// Flattening order (checkpoint and genotype layout):
/// input->hidden weights row-major by hidden unit, then hidden->output
/// weights row-major by output unit, then hidden biases, then output biases.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub shape: PolicyShape,
    pub w1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b1: Vec<f64>,
    pub b2: Vec<f64>,
}

impl PolicyParams {
    pub fn from_flat(shape: PolicyShape, flat: &[f64]) -> Result<PolicyParams, PolicyError> {
        let expected = shape.n_params();
        if flat.len() != expected {
            return Err(PolicyError::ParamLength { expected, got: flat.len() });
        }
        let n_w1 = shape.n_inputs * shape.n_hidden;
        let n_w2 = shape.n_hidden * shape.n_outputs;
        let (w1, rest) = flat.split_at(n_w1);
        let (w2, rest) = rest.split_at(n_w2);
        let (b1, b2) = rest.split_at(shape.n_hidden);
        Ok(PolicyParams {
            shape,
            w1: w1.to_vec(),
            w2: w2.to_vec(),
            b1: b1.to_vec(),
            b2: b2.to_vec(),
        })
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.shape.n_params());
        flat.extend_from_slice(&self.w1);
        flat.extend_from_slice(&self.w2);
        flat.extend_from_slice(&self.b1);
        flat.extend_from_slice(&self.b2);
        flat
    }

    /// One forward pass: tanh hidden layer, linear output layer, plus
    /// Gaussian motor noise of standard deviation `noise_std` drawn from
    /// `rng` for every output component.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        obs: &[f64],
        noise_std: f64,
        rng: &mut R,
    ) -> Result<Vec<f64>, PolicyError> {
        let s = &self.shape;
        if obs.len() != s.n_inputs {
            return Err(PolicyError::ObsLength { expected: s.n_inputs, got: obs.len() });
        }
        let mut hidden = vec![0.0; s.n_hidden];
        for (h, hv) in hidden.iter_mut().enumerate() {
            let row = &self.w1[h * s.n_inputs..(h + 1) * s.n_inputs];
            let mut acc = self.b1[h];
            for (w, x) in row.iter().zip(obs) {
                acc += w * x;
            }
            *hv = acc.tanh();
        }
        let mut out = vec![0.0; s.n_outputs];
        for (o, ov) in out.iter_mut().enumerate() {
            let row = &self.w2[o * s.n_hidden..(o + 1) * s.n_hidden];
            let mut acc = self.b2[o];
            for (w, h) in row.iter().zip(&hidden) {
                acc += w * h;
            }
            if noise_std > 0.0 {
                let eta: f64 = rng.sample(StandardNormal);
                acc += noise_std * eta;
            }
            *ov = acc;
        }
        Ok(out)
    }
}

/// Per-component running observation statistics (Welford). Population
/// variance; normalization divides by `sqrt(var + 1e-8)` and clips to
/// `[-5, 5]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObsStats {
    pub count: u64,
    pub mean: Vec<f64>,
    m2: Vec<f64>,
}

pub const OBS_NORM_EPS: f64 = 1e-8;
pub const OBS_CLIP: f64 = 5.0;

impl ObsStats {
    pub fn new(n_components: usize) -> ObsStats {
        ObsStats { count: 0, mean: vec![0.0; n_components], m2: vec![0.0; n_components] }
    }

    pub fn n_components(&self) -> usize {
        self.mean.len()
    }

    /// Checkpoint plumbing: the raw second-moment accumulator.
    pub fn raw_m2(&self) -> &[f64] {
        &self.m2
    }

    /// Checkpoint plumbing: rebuild from persisted accumulators.
    pub fn from_raw(count: u64, mean: Vec<f64>, m2: Vec<f64>) -> ObsStats {
        assert_eq!(mean.len(), m2.len());
        ObsStats { count, mean, m2 }
    }

    pub fn update(&mut self, obs: &[f64]) -> Result<(), PolicyError> {
        if obs.len() != self.mean.len() {
            return Err(PolicyError::StatsLength { expected: self.mean.len(), got: obs.len() });
        }
        self.count += 1;
        let n = self.count as f64;
        for i in 0..self.mean.len() {
            let x = obs[i];
            let delta = x - self.mean[i];
            self.mean[i] += delta / n;
            let delta2 = x - self.mean[i];
            self.m2[i] += delta * delta2;
        }
        Ok(())
    }

    /// Combine two disjoint streams (parallel evaluation reduce step).
    pub fn merge(&mut self, other: &ObsStats) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = other.clone();
            return;
        }
        let (na, nb) = (self.count as f64, other.count as f64);
        let n = na + nb;
        for i in 0..self.mean.len() {
            let delta = other.mean[i] - self.mean[i];
            self.mean[i] += delta * nb / n;
            self.m2[i] += other.m2[i] + delta * delta * na * nb / n;
        }
        self.count += other.count;
    }

    /// Population variance per component.
    pub fn variance(&self) -> Vec<f64> {
        if self.count == 0 {
            return vec![0.0; self.m2.len()];
        }
        let n = self.count as f64;
        self.m2.iter().map(|s| (s / n).max(0.0)).collect()
    }

    /// `(obs - mean) / sqrt(var + eps)`, clipped to `[-5, 5]`.
    pub fn normalize(&self, obs: &[f64]) -> Result<Vec<f64>, PolicyError> {
        if self.count == 0 {
            return Err(PolicyError::UninitializedStats);
        }
        if obs.len() != self.mean.len() {
            return Err(PolicyError::StatsLength { expected: self.mean.len(), got: obs.len() });
        }
        Ok(self.normalize_unchecked(obs))
    }

    /// Like [`ObsStats::normalize`] but treats empty statistics as mean 0,
    /// variance 1 (the episode cold start before any sample arrived).
    pub fn normalize_lenient(&self, obs: &[f64]) -> Vec<f64> {
        if self.count == 0 {
            return obs
                .iter()
                .map(|&x| (x / (1.0 + OBS_NORM_EPS).sqrt()).clamp(-OBS_CLIP, OBS_CLIP))
                .collect();
        }
        self.normalize_unchecked(obs)
    }

    fn normalize_unchecked(&self, obs: &[f64]) -> Vec<f64> {
        let n = self.count as f64;
        obs.iter()
            .enumerate()
            .map(|(i, &x)| {
                let var = (self.m2[i] / n).max(0.0);
                ((x - self.mean[i]) / (var + OBS_NORM_EPS).sqrt()).clamp(-OBS_CLIP, OBS_CLIP)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn shape(i: usize, h: usize, o: usize) -> PolicyShape {
        PolicyShape { n_inputs: i, n_hidden: h, n_outputs: o }
    }

    #[test]
    fn parameter_counts_match_canonical_shapes() {
        assert_eq!(shape(22, 50, 6).n_params(), 1456);
        assert_eq!(shape(26, 50, 6).n_params(), 1656);
        assert_eq!(shape(27, 50, 6).n_params(), 1706);
        assert_eq!(shape(45, 50, 12).n_params(), 2912);
    }

    #[test]
    fn flatten_round_trips() {
        let s = shape(3, 4, 2);
        let flat: Vec<f64> = (0..s.n_params()).map(|i| i as f64 * 0.1).collect();
        let params = PolicyParams::from_flat(s, &flat).unwrap();
        assert_eq!(params.to_flat(), flat);
    }

    #[test]
    fn zero_params_zero_noise_give_zero_action() {
        let s = shape(4, 5, 3);
        let params = PolicyParams::from_flat(s, &vec![0.0; s.n_params()]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let action = params.forward(&[1.0, -2.0, 0.5, 3.0], 0.0, &mut rng).unwrap();
        assert_eq!(action, vec![0.0; 3]);
    }

    #[test]
    fn single_unit_net_matches_hand_evaluation() {
        // 1-1-1 net, w1 = w2 = 1, biases 0, obs 0.5 -> tanh(0.5)
        let s = shape(1, 1, 1);
        let params = PolicyParams::from_flat(s, &[1.0, 1.0, 0.0, 0.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let action = params.forward(&[0.5], 0.0, &mut rng).unwrap();
        assert_relative_eq!(action[0], 0.5f64.tanh(), epsilon = 1e-12);
        assert_relative_eq!(action[0], 0.46211715726000974, epsilon = 1e-12);
    }

    #[test]
    fn seeded_noise_is_reproducible() {
        let s = shape(2, 3, 2);
        let params = PolicyParams::from_flat(s, &vec![0.1; s.n_params()]).unwrap();
        let obs = [0.3, -0.7];
        let a1 = params.forward(&obs, 0.01, &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
        let a2 = params.forward(&obs, 0.01, &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
        assert_eq!(a1, a2);
        let a3 = params.forward(&obs, 0.01, &mut ChaCha8Rng::seed_from_u64(43)).unwrap();
        assert_ne!(a1, a3);
    }

    #[test]
    fn motor_noise_std_is_calibrated() {
        let s = shape(1, 1, 1);
        let params = PolicyParams::from_flat(s, &[0.0; 4]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 100_000;
        let draws: Vec<f64> = (0..n)
            .map(|_| params.forward(&[0.0], 0.01, &mut rng).unwrap()[0])
            .collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
        let std = var.sqrt();
        assert!((std - 0.01).abs() / 0.01 < 0.02, "sample std {std} off from 0.01");
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let s = shape(2, 2, 1);
        assert!(matches!(
            PolicyParams::from_flat(s, &[0.0; 3]),
            Err(PolicyError::ParamLength { .. })
        ));
        let params = PolicyParams::from_flat(s, &vec![0.0; s.n_params()]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(params.forward(&[0.0; 3], 0.0, &mut rng).is_err());
    }

    #[test]
    fn fresh_stats_single_observation() {
        let mut stats = ObsStats::new(2);
        stats.update(&[3.0, -1.0]).unwrap();
        assert_eq!(stats.mean, vec![3.0, -1.0]);
        assert_eq!(stats.variance(), vec![0.0, 0.0]);
    }

    #[test]
    fn two_sample_stream_matches_two_pass_oracle() {
        // oracle: mean and population variance computed directly
        let xs = [1.0, 3.0];
        let mean_oracle = xs.iter().sum::<f64>() / 2.0;
        let var_oracle = xs.iter().map(|x| (x - mean_oracle) * (x - mean_oracle)).sum::<f64>() / 2.0;

        let mut stats = ObsStats::new(1);
        stats.update(&[1.0]).unwrap();
        stats.update(&[3.0]).unwrap();
        assert_relative_eq!(stats.mean[0], mean_oracle, epsilon = 1e-12);
        assert_relative_eq!(stats.variance()[0], var_oracle, epsilon = 1e-12);
        assert_eq!(mean_oracle, 2.0);
        assert_eq!(var_oracle, 1.0);
    }

    #[test]
    fn update_order_commutes_in_the_mean() {
        let batch = [0.3, -1.7, 2.9, 8.1, -0.4, 0.0, 5.5, -3.3];
        let mut forward = ObsStats::new(1);
        let mut backward = ObsStats::new(1);
        for &x in &batch {
            forward.update(&[x]).unwrap();
        }
        for &x in batch.iter().rev() {
            backward.update(&[x]).unwrap();
        }
        assert!((forward.mean[0] - backward.mean[0]).abs() < 1e-10);
    }

    #[test]
    fn merge_matches_sequential_updates() {
        let xs: Vec<f64> = (0..20).map(|i| (i as f64).sin() * 3.0).collect();
        let mut whole = ObsStats::new(1);
        for &x in &xs {
            whole.update(&[x]).unwrap();
        }
        let mut left = ObsStats::new(1);
        let mut right = ObsStats::new(1);
        for &x in &xs[..7] {
            left.update(&[x]).unwrap();
        }
        for &x in &xs[7..] {
            right.update(&[x]).unwrap();
        }
        left.merge(&right);
        assert_relative_eq!(left.mean[0], whole.mean[0], epsilon = 1e-10);
        assert_relative_eq!(left.variance()[0], whole.variance()[0], epsilon = 1e-10);
        assert_eq!(left.count, whole.count);
    }

    #[test]
    fn normalize_returns_zero_at_the_mean() {
        let mut stats = ObsStats::new(1);
        for _ in 0..5 {
            stats.update(&[4.2]).unwrap();
        }
        assert_eq!(stats.normalize(&[4.2]).unwrap(), vec![0.0]);
    }

    #[test]
    fn normalize_standard_case() {
        // mean 0, population variance 1 from {-1, 1}
        let mut stats = ObsStats::new(1);
        stats.update(&[-1.0]).unwrap();
        stats.update(&[1.0]).unwrap();
        let v = stats.normalize(&[2.0]).unwrap();
        assert_relative_eq!(v[0], 2.0, epsilon = 1e-7);
    }

    #[test]
    fn normalize_clips_outliers() {
        let mut stats = ObsStats::new(1);
        stats.update(&[0.0]).unwrap();
        stats.update(&[2.0]).unwrap(); // mean 1, var 1
        let v = stats.normalize(&[11.0]).unwrap(); // 10 sigma
        assert_eq!(v[0], 5.0);
    }

    #[test]
    fn normalize_requires_samples() {
        let stats = ObsStats::new(1);
        assert!(matches!(stats.normalize(&[0.0]), Err(PolicyError::UninitializedStats)));
        // the lenient variant passes values through (unit variance assumed)
        let v = stats.normalize_lenient(&[3.0]);
        assert_relative_eq!(v[0], 3.0, epsilon = 1e-6);
    }
}
