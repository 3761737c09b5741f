//! One evaluation episode: decode the genotype, build the world, run the
//! control loop, accumulate reward, apply termination rules.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bauplan::{BauplanError, BauplanKind, BauplanTemplate, BodyPlanInstance, Genotype};
use crate::policy::{ObsStats, PolicyError, PolicyParams};
use crate::sim2d::{build_world, SimError, SimParams, StepReport, Vec2, WorldState};

#[derive(Debug, Error)]
pub enum EpisodeError {
    #[error(transparent)]
    Bauplan(#[from] BauplanError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("world assembly failed: {0}")]
    Build(SimError),
}

/// Episode parameters. Penalty coefficients default per bauplan: the
/// halfcheetah pays for joints sitting at their limits, chains pay for
/// ground contact and actuation effort.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpisodeConfig {
    pub max_steps: usize,
    pub control_dt: f64,
    /// Target x, far ahead so the heading is effectively constant.
    pub target_x: f64,
    pub initial_height: f64,
    /// Initial joint angles are perturbed uniformly within this range (rad).
    pub perturbation_range: f64,
    pub motor_noise_std: f64,
    /// -penalty per actuated joint in a limit position per step.
    pub joint_limit_penalty: f64,
    /// -penalty per link touching the ground per step.
    pub contact_penalty: f64,
    /// -coeff * sum |applied torque| per step.
    pub energy_coeff: f64,
    /// Link speed (m/s) or joint speed (rad/s) beyond which the episode is
    /// cut with a one-time penalty.
    pub overspeed_threshold: f64,
    pub overspeed_penalty: f64,
    /// Episode ends when the torso center drops below this height (m).
    pub min_torso_height: Option<f64>,
    /// Episode ends when torso inclination (rad from build) exceeds this.
    pub max_torso_pitch: Option<f64>,
    /// Episode ends when a forbidden link touches the ground.
    pub forbidden_contact_ends: bool,
    /// Joint speed scale for the observation block (rad/s).
    pub obs_speed_scale: f64,
}

impl EpisodeConfig {
    pub fn for_bauplan(kind: BauplanKind) -> EpisodeConfig {
        let base = EpisodeConfig {
            max_steps: 1000,
            control_dt: 1.0 / 60.0,
            target_x: 1000.0,
            initial_height: 0.1,
            perturbation_range: 0.1,
            motor_noise_std: 0.01,
            joint_limit_penalty: 0.0,
            contact_penalty: 0.0,
            energy_coeff: 0.0,
            overspeed_threshold: 5.0,
            overspeed_penalty: 10.0,
            min_torso_height: None,
            max_torso_pitch: None,
            forbidden_contact_ends: false,
            obs_speed_scale: 10.0,
        };
        match kind {
            BauplanKind::Walker2d => EpisodeConfig {
                min_torso_height: Some(0.8),
                max_torso_pitch: Some(1.0),
                ..base
            },
            BauplanKind::Halfcheetah => EpisodeConfig {
                joint_limit_penalty: 0.1,
                min_torso_height: Some(0.3),
                max_torso_pitch: Some(1.0),
                forbidden_contact_ends: true,
                ..base
            },
            BauplanKind::Chain(n) => EpisodeConfig {
                contact_penalty: 0.1,
                energy_coeff: if n >= 13 { 0.002 } else { 0.001 },
                ..base
            },
        }
    }

    pub fn sim_params(&self) -> SimParams {
        SimParams { control_dt: self.control_dt, ..SimParams::default() }
    }
}

/// Per-step reward components; `total` is their sum.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub progress: f64,
    pub limit_penalty: f64,
    pub contact_penalty: f64,
    pub energy_penalty: f64,
    pub overspeed_penalty: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationReason {
    Completed,
    Fell,
    Tipped,
    BodyContact,
    Overspeed,
}

/// One frame of an exported trajectory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrameRecord {
    pub time: f64,
    /// (x, z, angle) per link.
    pub links: Vec<(f64, f64, f64)>,
    pub joint_angles: Vec<f64>,
    pub contacts: Vec<bool>,
    pub reward: RewardBreakdown,
}

#[derive(Debug, Clone)]
pub struct EpisodeResult {
    pub fitness: f64,
    pub steps_executed: usize,
    pub termination_reason: TerminationReason,
    /// Net torso displacement toward the target (m).
    pub distance_traveled: f64,
    /// Sum of the progress components alone.
    pub progress_total: f64,
    pub breakdown: RewardBreakdown,
    pub trace: Option<Vec<FrameRecord>>,
}

/// Raw observation: 8 torso components, an (angle, speed) pair per actuated
/// joint, then the contact sensor block.
///
/// Torso block: [height above start, target-heading sine, target-heading
/// cosine, vx, vz, pitch from build orientation, pitch rate, vertical speed].
/// Joint angles are normalized to [-1, 1] over the joint span; speeds divide
/// by `obs_speed_scale`.
pub fn observe(world: &WorldState, plan: &BodyPlanInstance, config: &EpisodeConfig, start: Vec2) -> Vec<f64> {
    let torso = &world.links[plan.torso];
    let heading = f64::atan2(start.z - torso.pos.z, config.target_x - torso.pos.x);
    let pitch = torso.angle - plan.root_angle;

    let n_act = plan.n_actuated();
    let mut obs = Vec::with_capacity(8 + 2 * n_act + plan.contact_sensor_links.len());
    obs.push(torso.pos.z - start.z);
    obs.push(heading.sin());
    obs.push(heading.cos());
    obs.push(torso.vel.x);
    obs.push(torso.vel.z);
    obs.push(pitch);
    obs.push(torso.omega);
    obs.push(torso.vel.z);

    for (j, joint) in world.joints.iter().enumerate() {
        if !joint.actuated {
            continue;
        }
        let q = world.joint_angle(j);
        let span = joint.upper_limit - joint.lower_limit;
        let normalized = if span > 1e-12 {
            (2.0 * q - joint.lower_limit - joint.upper_limit) / span
        } else {
            0.0
        };
        obs.push(normalized);
        obs.push(world.joint_speed(j) / config.obs_speed_scale);
    }

    for &link in &plan.contact_sensor_links {
        obs.push(if world.contact_flags[link] { 1.0 } else { 0.0 });
    }
    obs
}

/// Reward for one control step, from the torso positions before and after
/// plus the step report.
pub fn step_reward(
    torso_before: Vec2,
    world_after: &WorldState,
    plan: &BodyPlanInstance,
    config: &EpisodeConfig,
    report: &StepReport,
) -> RewardBreakdown {
    let torso_after = world_after.links[plan.torso].pos;
    let dist_before = (config.target_x - torso_before.x).abs();
    let dist_after = (config.target_x - torso_after.x).abs();
    let progress = (dist_before - dist_after) / config.control_dt;

    let mut limit_penalty = 0.0;
    if config.joint_limit_penalty > 0.0 {
        let n_at_limit = world_after
            .joints
            .iter()
            .enumerate()
            .filter(|(j, joint)| joint.actuated && report.limit_hit[*j])
            .count();
        limit_penalty = -config.joint_limit_penalty * n_at_limit as f64;
    }

    let mut contact_penalty = 0.0;
    if config.contact_penalty > 0.0 {
        let n_touching = world_after.contact_flags.iter().filter(|&&c| c).count();
        contact_penalty = -config.contact_penalty * n_touching as f64;
    }

    let mut energy_penalty = 0.0;
    if config.energy_coeff > 0.0 {
        let effort: f64 = report.applied_torques.iter().map(|t| t.abs()).sum();
        energy_penalty = -config.energy_coeff * effort;
    }

    let overspeed_penalty = if exceeds_overspeed(report, config) { -config.overspeed_penalty } else { 0.0 };

    RewardBreakdown {
        progress,
        limit_penalty,
        contact_penalty,
        energy_penalty,
        overspeed_penalty,
        total: progress + limit_penalty + contact_penalty + energy_penalty + overspeed_penalty,
    }
}

fn exceeds_overspeed(report: &StepReport, config: &EpisodeConfig) -> bool {
    report.max_link_speed > config.overspeed_threshold || report.max_joint_speed > config.overspeed_threshold
}

/// First triggered termination rule, if any. Chains only ever trip the
/// overspeed rule.
pub fn termination_check(
    world: &WorldState,
    plan: &BodyPlanInstance,
    config: &EpisodeConfig,
    report: &StepReport,
) -> Option<TerminationReason> {
    let torso = &world.links[plan.torso];
    if let Some(max_pitch) = config.max_torso_pitch {
        if (torso.angle - plan.root_angle).abs() > max_pitch {
            return Some(TerminationReason::Tipped);
        }
    }
    if let Some(min_height) = config.min_torso_height {
        if torso.pos.z < min_height {
            return Some(TerminationReason::Fell);
        }
    }
    if config.forbidden_contact_ends {
        for &link in &plan.forbidden_contact_links {
            if world.contact_flags[link] {
                return Some(TerminationReason::BodyContact);
            }
        }
    }
    if exceeds_overspeed(report, config) {
        return Some(TerminationReason::Overspeed);
    }
    None
}

/// Run one episode. Deterministic in `(genotype, seed, stats)`: the seed
/// drives the initial joint perturbations and the motor noise stream.
///
/// `stats` is the frozen normalization snapshot; raw observations are
/// collected into the returned [`ObsStats`] delta for the caller to merge
/// (or drop, for post-evaluation). Simulation divergence never escapes as
/// an error: the episode ends with the overspeed reason and its penalty.
pub fn run_episode(
    genotype: &Genotype,
    template: &BauplanTemplate,
    config: &EpisodeConfig,
    seed: u64,
    stats: &ObsStats,
    trace: bool,
) -> Result<(EpisodeResult, ObsStats), EpisodeError> {
    let (expected_morph, expected_ctrl) = template.genotype_layout();
    if genotype.n_morph != expected_morph || genotype.n_ctrl != expected_ctrl {
        return Err(EpisodeError::Bauplan(BauplanError::GenotypeLength {
            expected: expected_morph + expected_ctrl,
            got: genotype.values.len(),
        }));
    }
    let (morph, ctrl) = genotype.split();
    let plan = template.decode(morph)?;
    let shape = template.policy_shape();
    if stats.n_components() != shape.n_inputs {
        return Err(EpisodeError::Policy(PolicyError::StatsLength {
            expected: shape.n_inputs,
            got: stats.n_components(),
        }));
    }
    let policy = PolicyParams::from_flat(shape, ctrl)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let perturbations: Vec<f64> = (0..plan.n_actuated())
        .map(|_| rng.random_range(-config.perturbation_range..=config.perturbation_range))
        .collect();

    let mut world =
        build_world(&plan, &perturbations, config.initial_height, config.sim_params()).map_err(EpisodeError::Build)?;

    let start = world.links[plan.torso].pos;
    let mut stats_delta = ObsStats::new(stats.n_components());
    let mut frames: Vec<FrameRecord> = Vec::new();
    let mut fitness = 0.0;
    let mut breakdown = RewardBreakdown::default();
    let mut progress_total = 0.0;
    let mut steps_executed = 0;
    let mut termination = TerminationReason::Completed;

    let actuated: Vec<usize> = world.actuated_joints();
    let max_torques: Vec<f64> = actuated.iter().map(|&j| world.joints[j].max_torque).collect();

    for _ in 0..config.max_steps {
        let raw_obs = observe(&world, &plan, config, start);
        stats_delta.update(&raw_obs).expect("observation length is fixed per template");
        let norm_obs = stats.normalize_lenient(&raw_obs);
        let action = policy.forward(&norm_obs, config.motor_noise_std, &mut rng)?;
        let torques: Vec<f64> = action
            .iter()
            .zip(&max_torques)
            .map(|(a, mt)| a.clamp(-1.0, 1.0) * mt)
            .collect();

        let torso_before = world.links[plan.torso].pos;
        let (reward, reason) = match world.step(&torques) {
            Ok(report) => {
                let reward = step_reward(torso_before, &world, &plan, config, &report);
                (reward, termination_check(&world, &plan, config, &report))
            }
            Err(SimError::Diverged { .. }) => {
                // blown-up state: charge the overspeed penalty and stop
                let reward = RewardBreakdown {
                    overspeed_penalty: -config.overspeed_penalty,
                    total: -config.overspeed_penalty,
                    ..RewardBreakdown::default()
                };
                (reward, Some(TerminationReason::Overspeed))
            }
            Err(e) => return Err(EpisodeError::Build(e)),
        };

        steps_executed += 1;
        fitness += reward.total;
        progress_total += reward.progress;
        breakdown.progress += reward.progress;
        breakdown.limit_penalty += reward.limit_penalty;
        breakdown.contact_penalty += reward.contact_penalty;
        breakdown.energy_penalty += reward.energy_penalty;
        breakdown.overspeed_penalty += reward.overspeed_penalty;
        breakdown.total += reward.total;

        if trace {
            frames.push(FrameRecord {
                time: world.time,
                links: world.links.iter().map(|l| (l.pos.x, l.pos.z, l.angle)).collect(),
                joint_angles: world.joint_angles(),
                contacts: world.contact_flags.clone(),
                reward,
            });
        }

        if let Some(r) = reason {
            termination = r;
            break;
        }
    }

    let distance_traveled = if world.links[plan.torso].pos.is_finite() {
        world.links[plan.torso].pos.x - start.x
    } else {
        0.0
    };

    Ok((
        EpisodeResult {
            fitness,
            steps_executed,
            termination_reason: termination,
            distance_traveled,
            progress_total,
            breakdown,
            trace: if trace { Some(frames) } else { None },
        },
        stats_delta,
    ))
}

#[cfg(test)]
mod tests;
