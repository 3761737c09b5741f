//! Distribution-based evolution strategy.
//!
//! A search center is perturbed with mirrored Gaussian noise; candidate
//! fitnesses are shaped into centered ranks; the resulting gradient estimate
//! drives a bias-corrected Adam step on the center, followed by sign-based
//! (L1) weight decay clamped through zero. A per-dimension freeze mask pins
//! parameters (the pre-evolved condition): frozen dimensions receive no
//! noise, no update, and no decay.
//!
//! All randomness is a pure function of `(master_seed, generation, pair)`,
//! so runs replay bit-exactly from a checkpoint and parallel evaluation
//! cannot affect results.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum EsError {
    #[error("batch from generation {batch} told to state at generation {state}")]
    StaleBatch { batch: u64, state: u64 },
    #[error("expected {expected} entries, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("population size {0} must be even and >= 2")]
    BadPopulation(usize),
    #[error("dimension mismatch: state has {state}, input has {input}")]
    DimensionMismatch { state: usize, input: usize },
}

/// Norm used by the per-update weight decay.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayNorm {
    /// Subtract `coeff * sign(x)`, clamped so a coordinate never crosses zero.
    L1,
    /// Multiply by `1 - coeff`.
    L2,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EsConfig {
    /// Candidates per generation (even: mirrored pairs).
    pub population_size: usize,
    /// Perturbation standard deviation.
    pub sigma: f64,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub weight_decay_coeff: f64,
    pub decay_norm: DecayNorm,
    /// Environment-step budget for a full run.
    pub max_total_steps: u64,
}

impl Default for EsConfig {
    fn default() -> Self {
        EsConfig {
            population_size: 40,
            sigma: 0.02,
            learning_rate: 0.01,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            weight_decay_coeff: 0.005,
            decay_norm: DecayNorm::L1,
            max_total_steps: 100_000_000,
        }
    }
}

/// Adam accumulators, one pair per center dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamMoments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamMoments {
    pub fn zeros(dim: usize) -> AdamMoments {
        AdamMoments { m: vec![0.0; dim], v: vec![0.0; dim] }
    }
}

/// Bias-corrected Adam delta for a minimization step on `gradient`
/// (`t` counts updates starting at 1). Returns the additive delta; moments
/// are updated in place.
pub fn adam_step(moments: &mut AdamMoments, gradient: &[f64], t: u64, config: &EsConfig) -> Vec<f64> {
    let (b1, b2) = (config.adam_beta1, config.adam_beta2);
    let bc1 = 1.0 - b1.powi(t as i32);
    let bc2 = 1.0 - b2.powi(t as i32);
    gradient
        .iter()
        .enumerate()
        .map(|(i, &g)| {
            moments.m[i] = b1 * moments.m[i] + (1.0 - b1) * g;
            moments.v[i] = b2 * moments.v[i] + (1.0 - b2) * g * g;
            let m_hat = moments.m[i] / bc1;
            let v_hat = moments.v[i] / bc2;
            -config.learning_rate * m_hat / (v_hat.sqrt() + config.adam_eps)
        })
        .collect()
}

/// Map fitnesses to ranks spread linearly over `[-0.5, 0.5]` (sum zero).
/// The sort is stable (ties keep candidate-index order) and tied values
/// share their group's mean utility, so the shaping depends only on the
/// ordering: any strictly monotone fitness transform yields identical
/// output, and an all-equal batch yields all zeros.
pub fn centered_ranks(fitnesses: &[f64]) -> Vec<f64> {
    let n = fitnesses.len();
    if n <= 1 {
        return vec![0.0; n];
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| fitnesses[a].total_cmp(&fitnesses[b]).then(a.cmp(&b)));
    let mut utilities = vec![0.0; n];
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && fitnesses[order[end]] == fitnesses[order[start]] {
            end += 1;
        }
        let mid = (start + end - 1) as f64 / 2.0;
        let u = mid / (n - 1) as f64 - 0.5;
        for &idx in &order[start..end] {
            utilities[idx] = u;
        }
        start = end;
    }
    utilities
}

/// Search state: center, optimizer moments, counters, freeze mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EsState {
    pub center: Vec<f64>,
    pub moments: AdamMoments,
    pub update_count: u64,
    pub generation: u64,
    pub cumulative_env_steps: u64,
    pub freeze_mask: Vec<bool>,
    pub master_seed: u64,
}

/// Mirrored perturbations of one generation. Candidate `2i` is
/// `center + sigma * eps_i`, candidate `2i + 1` is `center - sigma * eps_i`.
#[derive(Debug, Clone)]
pub struct PerturbationBatch {
    pub generation: u64,
    /// One noise vector per mirrored pair; frozen dimensions carry zeros.
    pub noise: Vec<Vec<f64>>,
}

impl PerturbationBatch {
    pub fn n_candidates(&self) -> usize {
        self.noise.len() * 2
    }

    /// Materialize candidate `k` around `center`.
    pub fn candidate(&self, center: &[f64], sigma: f64, k: usize) -> Vec<f64> {
        let eps = &self.noise[k / 2];
        let sign = if k % 2 == 0 { sigma } else { -sigma };
        center.iter().zip(eps).map(|(c, e)| c + sign * e).collect()
    }

    pub fn candidates(&self, center: &[f64], sigma: f64) -> Vec<Vec<f64>> {
        (0..self.n_candidates()).map(|k| self.candidate(center, sigma, k)).collect()
    }
}

/// Fitness and consumed environment steps per candidate, in candidate order.
#[derive(Debug, Clone)]
pub struct FitnessBatch {
    pub fitness: Vec<f64>,
    pub env_steps: Vec<u64>,
}

/// SplitMix64-style mix of a master seed with stream coordinates; used to
/// key every RNG in the system.
pub fn derive_seed(master: u64, a: u64, b: u64, tag: u64) -> u64 {
    let mut x = master ^ a.rotate_left(17) ^ b.rotate_left(37) ^ tag.rotate_left(51);
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

const STREAM_ASK: u64 = 0xA5;

impl EsState {
    /// Fresh state: zero center (or a warm start), zero moments,
    /// generation 0, nothing frozen unless a mask is given.
    pub fn init(dim: usize, warm_start: Option<Vec<f64>>, freeze_mask: Option<Vec<bool>>, master_seed: u64) -> EsState {
        let center = warm_start.unwrap_or_else(|| vec![0.0; dim]);
        assert_eq!(center.len(), dim, "warm start length must equal dim");
        let freeze_mask = freeze_mask.unwrap_or_else(|| vec![false; dim]);
        assert_eq!(freeze_mask.len(), dim, "freeze mask length must equal dim");
        EsState {
            center,
            moments: AdamMoments::zeros(dim),
            update_count: 0,
            generation: 0,
            cumulative_env_steps: 0,
            freeze_mask,
            master_seed,
        }
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    /// Draw this generation's mirrored noise. Pure in
    /// `(master_seed, generation, pair index)`: repeated calls return
    /// bit-identical batches.
    pub fn ask(&self, config: &EsConfig) -> Result<PerturbationBatch, EsError> {
        if config.population_size < 2 || config.population_size % 2 != 0 {
            return Err(EsError::BadPopulation(config.population_size));
        }
        let pairs = config.population_size / 2;
        let dim = self.dim();
        let noise = (0..pairs)
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.master_seed, self.generation, i as u64, STREAM_ASK));
                (0..dim)
                    .map(|d| {
                        let e: f64 = rng.sample(StandardNormal);
                        if self.freeze_mask[d] {
                            0.0
                        } else {
                            e
                        }
                    })
                    .collect()
            })
            .collect();
        Ok(PerturbationBatch { generation: self.generation, noise })
    }

    /// Consume one generation's fitnesses: centered-rank shaping, gradient
    /// estimate `g = (1 / (lambda * sigma)) * sum_i u_i * (signed eps_i)`,
    /// Adam step on `-g`, then weight decay. Frozen dimensions stay
    /// bit-identical.
    pub fn tell(&mut self, batch: &PerturbationBatch, fitnesses: &FitnessBatch, config: &EsConfig) -> Result<(), EsError> {
        if batch.generation != self.generation {
            return Err(EsError::StaleBatch { batch: batch.generation, state: self.generation });
        }
        let lambda = batch.n_candidates();
        if fitnesses.fitness.len() != lambda {
            return Err(EsError::LengthMismatch { expected: lambda, got: fitnesses.fitness.len() });
        }
        if fitnesses.env_steps.len() != lambda {
            return Err(EsError::LengthMismatch { expected: lambda, got: fitnesses.env_steps.len() });
        }
        let dim = self.dim();
        if batch.noise.first().map(|e| e.len()).unwrap_or(dim) != dim {
            return Err(EsError::DimensionMismatch { state: dim, input: batch.noise[0].len() });
        }

        let utilities = centered_ranks(&fitnesses.fitness);
        let scale = 1.0 / (lambda as f64 * config.sigma);
        let mut neg_gradient = vec![0.0; dim];
        for (i, eps) in batch.noise.iter().enumerate() {
            let w = utilities[2 * i] - utilities[2 * i + 1];
            for (gd, e) in neg_gradient.iter_mut().zip(eps) {
                *gd -= w * e * scale;
            }
        }

        self.update_count += 1;
        let delta = adam_step(&mut self.moments, &neg_gradient, self.update_count, config);
        for d in 0..dim {
            if self.freeze_mask[d] {
                continue;
            }
            self.center[d] += delta[d];
        }

        let decay = config.weight_decay_coeff;
        if decay > 0.0 {
            for d in 0..dim {
                if self.freeze_mask[d] {
                    continue;
                }
                let c = self.center[d];
                self.center[d] = match config.decay_norm {
                    DecayNorm::L1 => c - c.signum() * decay.min(c.abs()),
                    DecayNorm::L2 => c * (1.0 - decay),
                };
            }
        }

        self.generation += 1;
        self.cumulative_env_steps += fitnesses.env_steps.iter().sum::<u64>();
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(lambda: usize, sigma: f64, lr: f64, decay: f64) -> EsConfig {
        EsConfig {
            population_size: lambda,
            sigma,
            learning_rate: lr,
            weight_decay_coeff: decay,
            ..EsConfig::default()
        }
    }

    #[test]
    fn init_dimensions_and_warm_start() {
        let state = EsState::init(1470, None, None, 1);
        assert_eq!(state.center.len(), 1470);
        assert!(state.center.iter().all(|&c| c == 0.0));

        let warm = vec![0.25; 10];
        let state = EsState::init(10, Some(warm.clone()), None, 1);
        assert_eq!(state.center, warm);
    }

    #[test]
    fn same_seed_same_noise_stream() {
        let a = EsState::init(50, None, None, 99);
        let b = EsState::init(50, None, None, 99);
        let cfg = config(8, 0.02, 0.01, 0.0);
        let ba = a.ask(&cfg).unwrap();
        let bb = b.ask(&cfg).unwrap();
        assert_eq!(ba.noise, bb.noise);
        // and repeated calls on the same state agree bit-exactly
        assert_eq!(a.ask(&cfg).unwrap().noise, ba.noise);
    }

    #[test]
    fn fully_frozen_state_emits_center_copies() {
        let state = EsState::init(6, Some(vec![1.0; 6]), Some(vec![true; 6]), 3);
        let cfg = config(4, 0.5, 0.01, 0.0);
        let batch = state.ask(&cfg).unwrap();
        for k in 0..batch.n_candidates() {
            assert_eq!(batch.candidate(&state.center, cfg.sigma, k), state.center);
        }
    }

    #[test]
    fn mirrored_pairs_sum_to_twice_the_center() {
        let state = EsState::init(20, Some(vec![0.7; 20]), None, 5);
        let cfg = config(6, 0.3, 0.01, 0.0);
        let batch = state.ask(&cfg).unwrap();
        for i in 0..3 {
            let plus = batch.candidate(&state.center, cfg.sigma, 2 * i);
            let minus = batch.candidate(&state.center, cfg.sigma, 2 * i + 1);
            for d in 0..20 {
                assert!((plus[d] + minus[d] - 2.0 * state.center[d]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn centered_ranks_oracle_cases() {
        assert_eq!(centered_ranks(&[1.0, 3.0, 2.0]), vec![-0.5, 0.5, 0.0]);
        assert_eq!(centered_ranks(&[7.0]), vec![0.0]);
        // tied values share their group's mean utility
        assert_eq!(centered_ranks(&[5.0, 5.0, 5.0]), vec![0.0, 0.0, 0.0]);
        assert_eq!(centered_ranks(&[2.0, 1.0, 2.0]), vec![0.25, -0.5, 0.25]);
        let sum: f64 = centered_ranks(&[0.3, -1.0, 9.9, 4.2]).iter().sum();
        assert!(sum.abs() < 1e-12);
    }

    #[test]
    fn rank_shaping_ignores_monotone_transforms() {
        let f = [0.1, -2.0, 3.5, 0.7, 0.7, -9.0];
        let transformed: Vec<f64> = f.iter().map(|x| (x * 0.3).exp() * 10.0 + 4.0).collect();
        assert_eq!(centered_ranks(&f), centered_ranks(&transformed));
    }

    #[test]
    fn stale_batch_is_rejected() {
        let mut state = EsState::init(4, None, None, 2);
        let cfg = config(4, 0.02, 0.01, 0.0);
        let batch = state.ask(&cfg).unwrap();
        let fits = FitnessBatch { fitness: vec![0.0; 4], env_steps: vec![1; 4] };
        state.tell(&batch, &fits, &cfg).unwrap();
        assert_eq!(
            state.tell(&batch, &fits, &cfg),
            Err(EsError::StaleBatch { batch: 0, state: 1 })
        );
    }

    #[test]
    fn equal_fitnesses_leave_only_decay() {
        let mut state = EsState::init(3, Some(vec![0.5, -0.5, 0.0]), None, 11);
        let cfg = config(4, 0.02, 0.01, 0.002);
        let batch = state.ask(&cfg).unwrap();
        let fits = FitnessBatch { fitness: vec![1.0; 4], env_steps: vec![1; 4] };
        state.tell(&batch, &fits, &cfg).unwrap();
        // utilities are all zero, so the only movement is the L1 decay step
        assert_eq!(state.center, vec![0.498, -0.498, 0.0]);
    }

    #[test]
    fn frozen_slice_is_bit_identical_across_generations() {
        let dim = 20;
        let warm: Vec<f64> = (0..dim).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut mask = vec![false; dim];
        for m in mask.iter_mut().take(6) {
            *m = true;
        }
        let mut state = EsState::init(dim, Some(warm.clone()), Some(mask), 17);
        let cfg = config(8, 0.05, 0.02, 0.01);
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        for _ in 0..100 {
            let batch = state.ask(&cfg).unwrap();
            let fits = FitnessBatch {
                fitness: (0..8).map(|_| rng.random::<f64>()).collect(),
                env_steps: vec![10; 8],
            };
            state.tell(&batch, &fits, &cfg).unwrap();
        }
        for d in 0..6 {
            assert_eq!(state.center[d].to_bits(), warm[d].to_bits());
        }
        // unfrozen part did move
        assert!((6..dim).any(|d| state.center[d] != warm[d]));
        assert_eq!(state.cumulative_env_steps, 100 * 8 * 10);
    }

    #[test]
    fn one_dimensional_hand_computed_update() {
        // lambda = 2, sigma = 1, eps = e (one pair), fitness (1, 0):
        // utilities (+0.5, -0.5), g = (0.5 - (-0.5)) * e / (2 * 1) = e/2.
        // Adam t=1: m_hat = -g, v_hat = g^2, delta = -lr * (-g)/|g| = lr*sign(e)
        let mut state = EsState::init(1, None, None, 7);
        let cfg = config(2, 1.0, 0.01, 0.0);
        let batch = state.ask(&cfg).unwrap();
        let e = batch.noise[0][0];
        assert!(e != 0.0);
        let fits = FitnessBatch { fitness: vec![1.0, 0.0], env_steps: vec![1, 1] };
        state.tell(&batch, &fits, &cfg).unwrap();
        // g = e/2, first Adam step has |delta| = lr up to the eps term;
        // the +candidate won, so the center moves along +e
        assert!(state.center[0] * e > 0.0, "center moved along the winning direction");
        assert!((state.center[0].abs() - 0.01).abs() < 1e-6);
    }

    #[test]
    fn adam_step_zero_gradient_zero_delta() {
        let cfg = config(2, 1.0, 0.01, 0.0);
        let mut moments = AdamMoments::zeros(3);
        let delta = adam_step(&mut moments, &[0.0, 0.0, 0.0], 1, &cfg);
        assert_eq!(delta, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn adam_step_first_step_formula() {
        let cfg = config(2, 1.0, 0.01, 0.0);
        let mut moments = AdamMoments::zeros(1);
        let g = 0.3;
        let delta = adam_step(&mut moments, &[g], 1, &cfg);
        let expected = -cfg.learning_rate * g / (g.abs() + cfg.adam_eps);
        assert!((delta[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn adam_step_magnitude_approaches_learning_rate() {
        let cfg = config(2, 1.0, 0.01, 0.0);
        let mut moments = AdamMoments::zeros(1);
        let mut delta = vec![0.0];
        for t in 1..=1000 {
            delta = adam_step(&mut moments, &[2.5], t, &cfg);
        }
        assert!((delta[0].abs() - cfg.learning_rate).abs() < 1e-4);
        assert!(delta[0] < 0.0);
    }

    #[test]
    fn decay_pulls_center_to_zero_monotonically() {
        let mut state = EsState::init(2, Some(vec![0.03, -0.02]), None, 4);
        let cfg = EsConfig { population_size: 4, weight_decay_coeff: 0.005, learning_rate: 0.0, ..EsConfig::default() };
        let mut prev = [state.center[0].abs(), state.center[1].abs()];
        for _ in 0..10 {
            let batch = state.ask(&cfg).unwrap();
            let fits = FitnessBatch { fitness: vec![0.0; 4], env_steps: vec![1; 4] };
            state.tell(&batch, &fits, &cfg).unwrap();
            for d in 0..2 {
                assert!(state.center[d].abs() <= prev[d] + 1e-15);
                prev[d] = state.center[d].abs();
            }
        }
        assert_eq!(state.center, vec![0.0, 0.0]); // clamped through zero
    }

    #[test]
    fn l1_decay_clamps_through_zero() {
        let mut state = EsState::init(1, Some(vec![0.001]), None, 4);
        let cfg = EsConfig { population_size: 2, weight_decay_coeff: 0.005, learning_rate: 0.0, ..EsConfig::default() };
        let batch = state.ask(&cfg).unwrap();
        let fits = FitnessBatch { fitness: vec![0.0; 2], env_steps: vec![1; 2] };
        state.tell(&batch, &fits, &cfg).unwrap();
        assert_eq!(state.center[0], 0.0);
    }

    #[test]
    fn deterministic_state_sequence() {
        let cfg = config(6, 0.1, 0.05, 0.001);
        let run = |seed: u64| -> Vec<f64> {
            let mut state = EsState::init(8, None, None, seed);
            for g in 0..20 {
                let batch = state.ask(&cfg).unwrap();
                let fits = FitnessBatch {
                    fitness: (0..6).map(|i| ((g * 6 + i) as f64 * 0.77).sin()).collect(),
                    env_steps: vec![3; 6],
                };
                state.tell(&batch, &fits, &cfg).unwrap();
            }
            state.center
        };
        let a = run(42);
        let b = run(42);
        assert_eq!(a, b);
        assert_ne!(a, run(43));
    }
}
