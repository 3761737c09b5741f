//! Sequential-impulse stepping for [`WorldState`].

use super::math::Vec2;
use super::{SimError, StepReport, WorldState};

/// Per-substep jacobian data of one joint anchor constraint.
struct JointRow {
    parent: usize,
    child: usize,
    ra: Vec2,
    rb: Vec2,
    // 2x2 effective-mass matrix entries (symmetric)
    k11: f64,
    k12: f64,
    k22: f64,
    /// Position error at substep start, fed back through Baumgarte.
    c: Vec2,
}

/// Per-substep data of one joint limit constraint side.
struct LimitRow {
    parent: usize,
    child: usize,
    /// +1: enforcing the lower limit (w >= bias), -1: the upper limit.
    side: f64,
    /// Violation depth at substep start (>= 0).
    depth: f64,
    inv_k: f64,
    accum: f64,
}

/// Per-substep data of one ground contact point.
struct ContactRow {
    link: usize,
    /// Offset of the contact point from the link center of mass.
    r: Vec2,
    penetration: f64,
    inv_k_normal: f64,
    inv_k_tangent: f64,
    accum_normal: f64,
    accum_tangent: f64,
}

impl WorldState {
    /// Advance the world by one control step.
    ///
    /// `torque_commands` holds one entry per actuated joint, in joint order.
    /// Commands are clamped to the joint's `max_torque`; components that
    /// would push a joint further into a limit it has already reached are
    /// zeroed and flagged in the report.
    pub fn step(&mut self, torque_commands: &[f64]) -> Result<StepReport, SimError> {
        let actuated = self.actuated_joints();
        if torque_commands.len() != actuated.len() {
            return Err(SimError::TorqueCount { expected: actuated.len(), got: torque_commands.len() });
        }

        let params = self.params.clone();
        let h = params.control_dt / params.substeps as f64;
        let n_joints = self.joints.len();

        let mut report = StepReport {
            applied_torques: vec![0.0; n_joints],
            limit_hit: vec![false; n_joints],
            max_link_speed: 0.0,
            max_joint_speed: 0.0,
            penetration_depth: 0.0,
        };

        for _ in 0..params.substeps {
            // gravity
            for link in &mut self.links {
                if !link.fixed {
                    link.vel.z -= params.gravity * h;
                }
            }

            // motor torques, with the saturation rule at limits
            for (k, &j) in actuated.iter().enumerate() {
                let q = self.joint_angle(j);
                let joint = &self.joints[j];
                let mut tau = torque_commands[k].clamp(-joint.max_torque, joint.max_torque);
                let at_upper = q >= joint.upper_limit - params.limit_epsilon;
                let at_lower = q <= joint.lower_limit + params.limit_epsilon;
                if at_upper && tau > 0.0 {
                    tau = 0.0;
                }
                if at_lower && tau < 0.0 {
                    tau = 0.0;
                }
                if at_upper || at_lower {
                    report.limit_hit[j] = true;
                }
                report.applied_torques[j] += tau;
                let (p, c) = (joint.parent_link, joint.child_link);
                let dw_c = tau * h * self.links[c].inv_inertia();
                let dw_p = tau * h * self.links[p].inv_inertia();
                self.links[c].omega += dw_c;
                self.links[p].omega -= dw_p;
            }
            // also flag non-actuated joints sitting at a limit
            for (j, joint) in self.joints.iter().enumerate() {
                if !joint.actuated {
                    let q = self.links[joint.child_link].angle - self.links[joint.parent_link].angle;
                    if q >= joint.upper_limit - params.limit_epsilon || q <= joint.lower_limit + params.limit_epsilon {
                        report.limit_hit[j] = true;
                    }
                }
            }

            // build constraint rows from current positions
            let mut joint_rows: Vec<JointRow> = Vec::with_capacity(n_joints);
            let mut limit_rows: Vec<LimitRow> = Vec::new();
            for joint in &self.joints {
                let (pi, ci) = (joint.parent_link, joint.child_link);
                let a = &self.links[pi];
                let b = &self.links[ci];
                let ra = joint.anchor_on_parent.rotated(a.angle);
                let rb = joint.anchor_on_child.rotated(b.angle);
                let c = (b.pos + rb) - (a.pos + ra);
                let (ima, imb) = (a.inv_mass(), b.inv_mass());
                let (iia, iib) = (a.inv_inertia(), b.inv_inertia());
                joint_rows.push(JointRow {
                    parent: pi,
                    child: ci,
                    ra,
                    rb,
                    k11: ima + imb + ra.z * ra.z * iia + rb.z * rb.z * iib,
                    k12: -(ra.x * ra.z * iia + rb.x * rb.z * iib),
                    k22: ima + imb + ra.x * ra.x * iia + rb.x * rb.x * iib,
                    c,
                });

                let q = b.angle - a.angle;
                let inv_k_ang = iia + iib;
                if inv_k_ang > 0.0 {
                    if q <= joint.lower_limit + 1e-9 {
                        limit_rows.push(LimitRow {
                            parent: pi,
                            child: ci,
                            side: 1.0,
                            depth: (joint.lower_limit - q).max(0.0),
                            inv_k: 1.0 / inv_k_ang,
                            accum: 0.0,
                        });
                    }
                    if q >= joint.upper_limit - 1e-9 {
                        limit_rows.push(LimitRow {
                            parent: pi,
                            child: ci,
                            side: -1.0,
                            depth: (q - joint.upper_limit).max(0.0),
                            inv_k: 1.0 / inv_k_ang,
                            accum: 0.0,
                        });
                    }
                }
            }

            let mut contact_rows: Vec<ContactRow> = Vec::new();
            for (li, link) in self.links.iter().enumerate() {
                if link.fixed {
                    continue;
                }
                for fraction in [0.0, 1.0] {
                    let end = link.point_at(fraction);
                    let pen = link.radius - end.z;
                    if pen > 0.0 {
                        let contact_point = Vec2::new(end.x, end.z - link.radius);
                        let r = contact_point - link.pos;
                        let (im, ii) = (link.inv_mass(), link.inv_inertia());
                        contact_rows.push(ContactRow {
                            link: li,
                            r,
                            penetration: pen,
                            inv_k_normal: 1.0 / (im + r.x * r.x * ii),
                            inv_k_tangent: 1.0 / (im + r.z * r.z * ii),
                            accum_normal: 0.0,
                            accum_tangent: 0.0,
                        });
                        report.penetration_depth = report.penetration_depth.max(pen);
                    }
                }
            }

            // velocity iterations
            let beta_h = params.baumgarte / h;
            for _ in 0..params.solver_iterations {
                for row in &joint_rows {
                    let a = &self.links[row.parent];
                    let b = &self.links[row.child];
                    let cdot = b.vel + row.rb.angular_velocity_at(b.omega) - a.vel - row.ra.angular_velocity_at(a.omega);
                    let rhs = -(cdot + row.c * beta_h);
                    // 2x2 solve: K * p = rhs
                    let det = row.k11 * row.k22 - row.k12 * row.k12;
                    if det.abs() < 1e-12 {
                        continue;
                    }
                    let p = Vec2::new(
                        (rhs.x * row.k22 - rhs.z * row.k12) / det,
                        (rhs.z * row.k11 - rhs.x * row.k12) / det,
                    );
                    let (ima, imb) = (self.links[row.parent].inv_mass(), self.links[row.child].inv_mass());
                    let (iia, iib) = (self.links[row.parent].inv_inertia(), self.links[row.child].inv_inertia());
                    let la = &mut self.links[row.parent];
                    la.vel -= p * ima;
                    la.omega -= row.ra.cross(p) * iia;
                    let lb = &mut self.links[row.child];
                    lb.vel += p * imb;
                    lb.omega += row.rb.cross(p) * iib;
                }

                for row in &mut limit_rows {
                    let w = self.links[row.child].omega - self.links[row.parent].omega;
                    // signed so that positive impulse pushes back into range
                    let w_signed = row.side * w;
                    let target = beta_h * row.depth;
                    let lambda = (target - w_signed) * row.inv_k;
                    let new_accum = (row.accum + lambda).max(0.0);
                    let delta = new_accum - row.accum;
                    row.accum = new_accum;
                    let imp = row.side * delta;
                    let iip = self.links[row.parent].inv_inertia();
                    let iic = self.links[row.child].inv_inertia();
                    self.links[row.child].omega += imp * iic;
                    self.links[row.parent].omega -= imp * iip;
                }

                for row in &mut contact_rows {
                    let link = &self.links[row.link];
                    // normal (0, 1): block normal then friction
                    let vn = link.vel.z + link.omega * row.r.x;
                    let bias = beta_h * (row.penetration - params.contact_slop).max(0.0);
                    let lambda = (bias - vn) * row.inv_k_normal;
                    let new_accum = (row.accum_normal + lambda).max(0.0);
                    let delta = new_accum - row.accum_normal;
                    row.accum_normal = new_accum;
                    {
                        let l = &mut self.links[row.link];
                        let (im, ii) = (l.inv_mass(), l.inv_inertia());
                        l.vel.z += delta * im;
                        l.omega += row.r.x * delta * ii;
                    }

                    let link = &self.links[row.link];
                    let vt = link.vel.x - link.omega * row.r.z;
                    let lambda_t = -vt * row.inv_k_tangent;
                    let bound = params.friction * row.accum_normal;
                    let new_accum_t = (row.accum_tangent + lambda_t).clamp(-bound, bound);
                    let delta_t = new_accum_t - row.accum_tangent;
                    row.accum_tangent = new_accum_t;
                    let l = &mut self.links[row.link];
                    let (im, ii) = (l.inv_mass(), l.inv_inertia());
                    l.vel.x += delta_t * im;
                    l.omega += -row.r.z * delta_t * ii;
                }
            }

            // integrate positions
            for link in &mut self.links {
                if link.fixed {
                    continue;
                }
                link.pos += link.vel * h;
                link.angle += link.omega * h;
            }

            // positional projection: clamp joint angles into their limits and
            // re-pin anchors, walking the tree root-to-leaf
            for j in 0..n_joints {
                let joint = &self.joints[j];
                let (pi, ci) = (joint.parent_link, joint.child_link);
                if self.links[ci].fixed {
                    continue;
                }
                let q = self.links[ci].angle - self.links[pi].angle;
                let qc = q.clamp(joint.lower_limit, joint.upper_limit);
                if qc != q {
                    self.links[ci].angle += qc - q;
                }
                let pa = self.links[pi].pos + joint.anchor_on_parent.rotated(self.links[pi].angle);
                let ca = self.links[ci].pos + joint.anchor_on_child.rotated(self.links[ci].angle);
                self.links[ci].pos += pa - ca;
            }

            // report maxima
            for link in &self.links {
                report.max_link_speed = report.max_link_speed.max(link.vel.length());
            }
            for j in 0..n_joints {
                report.max_joint_speed = report.max_joint_speed.max(self.joint_speed(j).abs());
                let q = self.joint_angle(j);
                let joint = &self.joints[j];
                if q >= joint.upper_limit - params.limit_epsilon || q <= joint.lower_limit + params.limit_epsilon {
                    report.limit_hit[j] = true;
                }
            }
        }

        for t in &mut report.applied_torques {
            *t /= params.substeps as f64;
        }
        self.time += params.control_dt;
        self.refresh_contact_flags();
        self.check_finite()?;
        Ok(report)
    }
}
