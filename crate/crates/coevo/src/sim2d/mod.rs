//! Deterministic planar rigid-body simulator.
//!
//! Bodies are chains or trees of capsule links connected by hinge joints with
//! angular limits and torque motors, living in the x–z plane with gravity
//! along −z and a ground half-space at z ≤ 0. Integration is semi-implicit
//! Euler with fixed substeps; constraints (joint anchors, joint limits,
//! ground contact with friction) are solved by an iterative sequential
//! impulse solver with Baumgarte stabilization, followed by a positional
//! projection pass that keeps anchor points coincident and joint angles
//! inside their limits.
//!
//! Everything is plain `f64` arithmetic in fixed iteration order: identical
//! inputs produce bit-identical trajectories regardless of thread placement.

mod math;
mod solver;

pub use math::Vec2;

use thiserror::Error;

use crate::bauplan::BodyPlanInstance;

/// Physics configuration. Defaults reproduce standard locomotor timing:
/// 60 Hz control, 240 Hz physics.
#[derive(Debug, Clone)]
pub struct SimParams {
    /// Duration of one control step (seconds).
    pub control_dt: f64,
    /// Physics substeps per control step.
    pub substeps: u32,
    /// Velocity-solver iterations per substep.
    pub solver_iterations: u32,
    /// Baumgarte stabilization factor for joints and contacts.
    pub baumgarte: f64,
    /// Ground Coulomb friction coefficient.
    pub friction: f64,
    /// Contact penetration allowed before position feedback kicks in (m).
    pub contact_slop: f64,
    /// Surface distance below which a link counts as touching ground (m).
    pub contact_tolerance: f64,
    /// Angular proximity to a limit that counts as "at the limit" (rad).
    pub limit_epsilon: f64,
    /// Gravitational acceleration (m/s², acts along −z).
    pub gravity: f64,
}

impl Default for SimParams {
    fn default() -> Self {
        SimParams {
            control_dt: 1.0 / 60.0,
            substeps: 4,
            solver_iterations: 20,
            baumgarte: 0.2,
            friction: 0.9,
            contact_slop: 0.002,
            contact_tolerance: 1e-3,
            limit_epsilon: 1e-3,
            gravity: 9.81,
        }
    }
}

/// One capsule link. The capsule axis runs from the proximal end
/// (`pos - axis*length/2`) to the distal end (`pos + axis*length/2`) where
/// `axis = (cos angle, sin angle)`.
#[derive(Debug, Clone)]
pub struct RigidLink {
    pub length: f64,
    pub radius: f64,
    pub mass: f64,
    pub moment_of_inertia: f64,
    /// Center-of-mass world position.
    pub pos: Vec2,
    /// Orientation of the capsule axis, radians CCW from +x.
    pub angle: f64,
    pub vel: Vec2,
    pub omega: f64,
    /// Immovable links take part in constraints with infinite mass.
    pub fixed: bool,
}

impl RigidLink {
    /// Uniform-density solid cylinder. Mass = rho * pi * r^2 * L, transverse
    /// moment of inertia about the center = m (3 r^2 + L^2) / 12.
    pub fn cylinder(length: f64, radius: f64, density: f64) -> RigidLink {
        let mass = density * std::f64::consts::PI * radius * radius * length;
        let inertia = mass * (3.0 * radius * radius + length * length) / 12.0;
        RigidLink {
            length,
            radius,
            mass,
            moment_of_inertia: inertia,
            pos: Vec2::ZERO,
            angle: 0.0,
            vel: Vec2::ZERO,
            omega: 0.0,
            fixed: false,
        }
    }

    pub fn inv_mass(&self) -> f64 {
        if self.fixed {
            0.0
        } else {
            1.0 / self.mass
        }
    }

    pub fn inv_inertia(&self) -> f64 {
        if self.fixed {
            0.0
        } else {
            1.0 / self.moment_of_inertia
        }
    }

    pub fn axis(&self) -> Vec2 {
        Vec2::from_angle(self.angle)
    }

    /// World position of a point given as a fraction of the axis
    /// (0 = proximal end, 0.5 = center, 1 = distal end).
    pub fn point_at(&self, fraction: f64) -> Vec2 {
        self.pos + self.axis() * ((fraction - 0.5) * self.length)
    }

    /// Lowest point of the capsule surface (z coordinate).
    pub fn lowest_surface_z(&self) -> f64 {
        let a = self.point_at(0.0).z;
        let b = self.point_at(1.0).z;
        a.min(b) - self.radius
    }

    fn is_finite(&self) -> bool {
        self.pos.is_finite() && self.angle.is_finite() && self.vel.is_finite() && self.omega.is_finite()
    }
}

/// Hinge joint between two links. The joint coordinate is
/// `q = child.angle - parent.angle`; `lower_limit <= q <= upper_limit` is
/// maintained by the solver. `rest_angle` is the default q of the body plan
/// and always lies inside the limits.
#[derive(Debug, Clone)]
pub struct HingeJoint {
    pub parent_link: usize,
    pub child_link: usize,
    /// Anchor in the parent frame, offset from the parent center of mass.
    pub anchor_on_parent: Vec2,
    /// Anchor in the child frame, offset from the child center of mass.
    pub anchor_on_child: Vec2,
    pub rest_angle: f64,
    pub lower_limit: f64,
    pub upper_limit: f64,
    pub actuated: bool,
    pub max_torque: f64,
}

/// Diagnostics of one control step.
#[derive(Debug, Clone)]
pub struct StepReport {
    /// Torque actually applied per joint (N·m), averaged over substeps.
    /// Components commanded into a saturated limit are zeroed.
    pub applied_torques: Vec<f64>,
    /// Per joint: was the joint within `limit_epsilon` of a limit at any
    /// substep of this control step.
    pub limit_hit: Vec<bool>,
    /// Largest link center speed seen during the step (m/s).
    pub max_link_speed: f64,
    /// Largest relative joint speed seen during the step (rad/s).
    pub max_joint_speed: f64,
    /// Deepest ground penetration seen during the step (m, >= 0).
    pub penetration_depth: f64,
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("expected {expected} joint perturbations, got {got}")]
    PerturbationCount { expected: usize, got: usize },
    #[error("expected {expected} torque commands, got {got}")]
    TorqueCount { expected: usize, got: usize },
    #[error("joint {joint}: lower limit {lower} exceeds upper limit {upper}")]
    InvalidLimits { joint: usize, lower: f64, upper: f64 },
    #[error("link {link} references parent {parent} not yet assembled")]
    BadTopology { link: usize, parent: usize },
    #[error("simulation diverged at t = {time:.4} s (link {link} has a non-finite state)")]
    Diverged { time: f64, link: usize },
}

/// Full dynamic state of an articulated body plus ground.
#[derive(Debug, Clone)]
pub struct WorldState {
    pub links: Vec<RigidLink>,
    pub joints: Vec<HingeJoint>,
    pub time: f64,
    /// Ground contact flag per link, refreshed after every step.
    pub contact_flags: Vec<bool>,
    pub params: SimParams,
}

impl WorldState {
    /// Assemble a world from raw links and joints (test scaffolding and
    /// custom scenes). Joints must be ordered parent-before-child.
    pub fn from_parts(links: Vec<RigidLink>, joints: Vec<HingeJoint>, params: SimParams) -> Result<WorldState, SimError> {
        for (j, joint) in joints.iter().enumerate() {
            if joint.lower_limit > joint.upper_limit {
                return Err(SimError::InvalidLimits {
                    joint: j,
                    lower: joint.lower_limit,
                    upper: joint.upper_limit,
                });
            }
        }
        let n = links.len();
        let mut world = WorldState { links, joints, time: 0.0, contact_flags: vec![false; n], params };
        world.refresh_contact_flags();
        Ok(world)
    }

    pub fn joint_angle(&self, j: usize) -> f64 {
        let joint = &self.joints[j];
        self.links[joint.child_link].angle - self.links[joint.parent_link].angle
    }

    pub fn joint_speed(&self, j: usize) -> f64 {
        let joint = &self.joints[j];
        self.links[joint.child_link].omega - self.links[joint.parent_link].omega
    }

    pub fn joint_angles(&self) -> Vec<f64> {
        (0..self.joints.len()).map(|j| self.joint_angle(j)).collect()
    }

    pub fn joint_speeds(&self) -> Vec<f64> {
        (0..self.joints.len()).map(|j| self.joint_speed(j)).collect()
    }

    /// Indices of actuated joints, in joint order.
    pub fn actuated_joints(&self) -> Vec<usize> {
        self.joints.iter().enumerate().filter(|(_, j)| j.actuated).map(|(i, _)| i).collect()
    }

    /// Ground contact per link from current geometry: true iff the capsule
    /// surface is within `contact_tolerance` of the ground plane.
    pub fn link_contacts(&self) -> Vec<bool> {
        self.links
            .iter()
            .map(|l| l.lowest_surface_z() <= self.params.contact_tolerance)
            .collect()
    }

    pub(crate) fn refresh_contact_flags(&mut self) {
        self.contact_flags = self.link_contacts();
    }

    /// Kinetic plus gravitational potential energy, with z = 0 as the
    /// potential reference.
    pub fn world_energy(&self) -> f64 {
        self.links
            .iter()
            .map(|l| {
                0.5 * l.mass * l.vel.length_squared()
                    + 0.5 * l.moment_of_inertia * l.omega * l.omega
                    + l.mass * self.params.gravity * l.pos.z
            })
            .sum()
    }

    pub(crate) fn check_finite(&self) -> Result<(), SimError> {
        for (i, l) in self.links.iter().enumerate() {
            if !l.is_finite() {
                return Err(SimError::Diverged { time: self.time, link: i });
            }
        }
        Ok(())
    }
}

/// Build a world from a decoded body plan.
///
/// Links are assembled at `rest_angle + perturbation` (one perturbation per
/// actuated joint, in actuated-joint order; non-actuated joints sit exactly
/// at rest). The whole assembly is then translated so its lowest surface
/// point sits `initial_height` above the ground. Velocities start at zero.
pub fn build_world(
    plan: &BodyPlanInstance,
    joint_perturbations: &[f64],
    initial_height: f64,
    params: SimParams,
) -> Result<WorldState, SimError> {
    let n_actuated = plan.joints.iter().filter(|j| j.actuated).count();
    if joint_perturbations.len() != n_actuated {
        return Err(SimError::PerturbationCount { expected: n_actuated, got: joint_perturbations.len() });
    }

    let mut links: Vec<RigidLink> = Vec::with_capacity(plan.elements.len());
    let mut joints: Vec<HingeJoint> = Vec::with_capacity(plan.joints.len());

    for (i, el) in plan.elements.iter().enumerate() {
        let mut link = RigidLink::cylinder(el.length, el.radius, plan.density);
        match el.parent {
            None => {
                link.angle = plan.root_angle;
                link.pos = Vec2::ZERO;
            }
            Some(p) => {
                if p >= i {
                    return Err(SimError::BadTopology { link: i, parent: p });
                }
                // exactly one joint per non-root element, in element order
                let pj = &plan.joints[i - 1];
                if pj.lower_limit > pj.upper_limit {
                    return Err(SimError::InvalidLimits {
                        joint: i - 1,
                        lower: pj.lower_limit,
                        upper: pj.upper_limit,
                    });
                }
                let q0 = if pj.actuated {
                    let k = plan.joints[..i - 1].iter().filter(|j| j.actuated).count();
                    pj.rest_angle + joint_perturbations[k]
                } else {
                    pj.rest_angle
                };
                let parent = &links[p];
                link.angle = parent.angle + q0;
                let parent_anchor = parent.point_at(el.attach);
                // child proximal end binds to the parent anchor
                link.pos = parent_anchor + Vec2::from_angle(link.angle) * (el.length * 0.5);

                joints.push(HingeJoint {
                    parent_link: p,
                    child_link: i,
                    anchor_on_parent: Vec2::new((el.attach - 0.5) * parent.length, 0.0),
                    anchor_on_child: Vec2::new(-el.length * 0.5, 0.0),
                    rest_angle: pj.rest_angle,
                    lower_limit: pj.lower_limit,
                    upper_limit: pj.upper_limit,
                    actuated: pj.actuated,
                    max_torque: pj.max_torque,
                });
            }
        }
        links.push(link);
    }

    // drop the assembly so the lowest surface point is initial_height up
    let lowest = links.iter().map(|l| l.lowest_surface_z()).fold(f64::INFINITY, f64::min);
    let shift = initial_height - lowest;
    for l in &mut links {
        l.pos.z += shift;
    }

    let n = links.len();
    let mut world = WorldState { links, joints, time: 0.0, contact_flags: vec![false; n], params };
    world.refresh_contact_flags();
    Ok(world)
}

#[cfg(test)]
mod tests;
