//! Body templates and morphology decoding.
//!
//! A [`BauplanTemplate`] is a symbolic body description: capsule elements in
//! a tree, hinge joints with rest angles and limit offsets, and a list of
//! [`MorphParamSpec`] rows saying which properties the morphological segment
//! of a genotype controls and over what range. [`BauplanTemplate::decode`]
//! applies a morphological parameter vector (squashed through tanh) and
//! yields a concrete [`BodyPlanInstance`] ready for world assembly.
//!
//! The hand-designed templates (`walker2d`, `halfcheetah`) live in a TOML
//! manifest shipped with the crate (`data/bauplans.toml`); chain bodies are
//! synthesized from the manifest's per-element defaults.

mod manifest;

pub use manifest::{builtin_manifest_str, BauplanSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BauplanError {
    #[error("unknown bauplan kind `{0}`")]
    UnknownKind(String),
    #[error("chain bauplan needs at least 2 elements, got {0}")]
    ChainTooShort(usize),
    #[error("morphological vector has length {got}, template expects {expected}")]
    MorphLength { expected: usize, got: usize },
    #[error("genotype has length {got}, layout expects {expected}")]
    GenotypeLength { expected: usize, got: usize },
    #[error("bauplan manifest error: {0}")]
    Manifest(String),
}

/// Which body plans exist.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BauplanKind {
    Walker2d,
    Halfcheetah,
    /// Uniform chain of `n` identical elements joined end to end.
    Chain(usize),
}

impl BauplanKind {
    pub fn name(&self) -> String {
        match self {
            BauplanKind::Walker2d => "walker2d".to_string(),
            BauplanKind::Halfcheetah => "halfcheetah".to_string(),
            BauplanKind::Chain(n) => format!("chain{n}"),
        }
    }

    pub fn parse(s: &str) -> Result<BauplanKind, BauplanError> {
        match s {
            "walker2d" => Ok(BauplanKind::Walker2d),
            "halfcheetah" => Ok(BauplanKind::Halfcheetah),
            _ => {
                if let Some(n) = s.strip_prefix("chain") {
                    let n: usize = n.parse().map_err(|_| BauplanError::UnknownKind(s.to_string()))?;
                    if n < 2 {
                        return Err(BauplanError::ChainTooShort(n));
                    }
                    Ok(BauplanKind::Chain(n))
                } else {
                    Err(BauplanError::UnknownKind(s.to_string()))
                }
            }
        }
    }
}

/// Property of an element or joint that a morphological parameter drives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MorphProperty {
    Length,
    Radius,
    RestAngle,
    LowerLimitOffset,
    UpperLimitOffset,
}

/// What a morph spec row points at.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetRef {
    Element(usize),
    Joint(usize),
}

/// How a tanh-squashed parameter maps onto the target property.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Variation {
    /// Lengths/radii: `value = default * (1 + c * tanh p)`.
    /// Angular offsets: `value = default + c * span * tanh p`.
    Percent(f64),
    /// `value = default + range * tanh p`; limit offsets use
    /// `-|range * tanh p|` / `+|range * tanh p|` so the rest angle always
    /// stays inside the limits.
    Absolute(f64),
}

/// One row of the morphological encoding.
#[derive(Debug, Clone)]
pub struct MorphParamSpec {
    pub name: String,
    pub property: MorphProperty,
    /// First entry is the primary target; the rest share the decoded value
    /// (e.g. the two legs of the walker).
    pub targets: Vec<TargetRef>,
    pub variation: Variation,
    pub default_value: f64,
    pub min_offset: f64,
    pub max_offset: f64,
}

/// Element of a template: a capsule attached to its parent at a fraction of
/// the parent's axis (0 = proximal end, 1 = distal end).
#[derive(Debug, Clone)]
pub struct ElementSpec {
    pub name: String,
    pub length: f64,
    pub radius: f64,
    pub parent: Option<usize>,
    pub attach: f64,
}

/// Joint of a template. Limits are stored as offsets around the rest angle
/// (`lower_offset <= 0 <= upper_offset`).
#[derive(Debug, Clone)]
pub struct JointSpec {
    pub name: String,
    pub rest_angle: f64,
    pub lower_offset: f64,
    pub upper_offset: f64,
    pub actuated: bool,
    pub max_torque: f64,
}

/// A symbolic body description plus its morphological encoding.
#[derive(Debug, Clone)]
pub struct BauplanTemplate {
    pub kind: BauplanKind,
    /// Topologically ordered, root first. Element `i > 0` is the child of
    /// joint `i - 1`.
    pub elements: Vec<ElementSpec>,
    pub joints: Vec<JointSpec>,
    pub morph_specs: Vec<MorphParamSpec>,
    /// World orientation of the root capsule axis at assembly.
    pub root_angle: f64,
    pub density: f64,
    /// Links carrying a ground contact sensor, by element index.
    pub contact_sensor_links: Vec<usize>,
    /// Links whose ground contact ends a halfcheetah episode.
    pub forbidden_contact_links: Vec<usize>,
    /// Element whose pose and velocity feed the proprioceptive block.
    pub torso: usize,
}

/// Network sizing implied by a template: 8 body-frame inputs, an
/// (angle, speed) pair per actuated joint, one input per contact sensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PolicyShape {
    pub n_inputs: usize,
    pub n_hidden: usize,
    pub n_outputs: usize,
}

impl PolicyShape {
    /// Flattened parameter count: input->hidden and hidden->output weights
    /// plus hidden and output biases.
    pub fn n_params(&self) -> usize {
        self.n_inputs * self.n_hidden + self.n_hidden * self.n_outputs + self.n_hidden + self.n_outputs
    }
}

impl BauplanTemplate {
    pub fn get(kind: BauplanKind) -> Result<BauplanTemplate, BauplanError> {
        BauplanSet::builtin().template(kind)
    }

    pub fn n_morph_params(&self) -> usize {
        self.morph_specs.len()
    }

    pub fn n_actuated(&self) -> usize {
        self.joints.iter().filter(|j| j.actuated).count()
    }

    pub fn policy_shape(&self) -> PolicyShape {
        PolicyShape {
            n_inputs: 8 + 2 * self.n_actuated() + self.contact_sensor_links.len(),
            n_hidden: 50,
            n_outputs: self.n_actuated(),
        }
    }

    /// `(n_morph, n_ctrl)` of a full genotype for this template.
    pub fn genotype_layout(&self) -> (usize, usize) {
        (self.n_morph_params(), self.policy_shape().n_params())
    }

    /// Apply a morphological parameter vector. Total over all reals: every
    /// input decodes to a valid plan with each concrete value inside its
    /// declared range.
    pub fn decode(&self, morph_params: &[f64]) -> Result<BodyPlanInstance, BauplanError> {
        if morph_params.len() != self.morph_specs.len() {
            return Err(BauplanError::MorphLength { expected: self.morph_specs.len(), got: morph_params.len() });
        }

        let mut lengths: Vec<f64> = self.elements.iter().map(|e| e.length).collect();
        let mut radii: Vec<f64> = self.elements.iter().map(|e| e.radius).collect();
        let mut rests: Vec<f64> = self.joints.iter().map(|j| j.rest_angle).collect();
        let mut lower_offs: Vec<f64> = self.joints.iter().map(|j| j.lower_offset).collect();
        let mut upper_offs: Vec<f64> = self.joints.iter().map(|j| j.upper_offset).collect();

        for (spec, &p) in self.morph_specs.iter().zip(morph_params) {
            let t = p.tanh();
            for &target in &spec.targets {
                match (spec.property, target) {
                    (MorphProperty::Length, TargetRef::Element(e)) => {
                        lengths[e] = apply_scalar(self.elements[e].length, spec.variation, t);
                    }
                    (MorphProperty::Radius, TargetRef::Element(e)) => {
                        radii[e] = apply_scalar(self.elements[e].radius, spec.variation, t);
                    }
                    (MorphProperty::RestAngle, TargetRef::Joint(j)) => {
                        let joint = &self.joints[j];
                        rests[j] = joint.rest_angle + angular_delta(joint, spec.variation, t);
                    }
                    (MorphProperty::LowerLimitOffset, TargetRef::Joint(j)) => {
                        let joint = &self.joints[j];
                        lower_offs[j] = match spec.variation {
                            Variation::Percent(_) => (joint.lower_offset + angular_delta(joint, spec.variation, t)).min(0.0),
                            Variation::Absolute(r) => -(r * t).abs(),
                        };
                    }
                    (MorphProperty::UpperLimitOffset, TargetRef::Joint(j)) => {
                        let joint = &self.joints[j];
                        upper_offs[j] = match spec.variation {
                            Variation::Percent(_) => (joint.upper_offset + angular_delta(joint, spec.variation, t)).max(0.0),
                            Variation::Absolute(r) => (r * t).abs(),
                        };
                    }
                    _ => unreachable!("template construction pairs properties with target kinds"),
                }
            }
        }

        let elements = self
            .elements
            .iter()
            .enumerate()
            .map(|(i, e)| PlanElement {
                name: e.name.clone(),
                length: lengths[i],
                radius: radii[i],
                mass: self.density * std::f64::consts::PI * radii[i] * radii[i] * lengths[i],
                parent: e.parent,
                attach: e.attach,
            })
            .collect();

        let joints = self
            .joints
            .iter()
            .enumerate()
            .map(|(j, spec)| PlanJoint {
                name: spec.name.clone(),
                rest_angle: rests[j],
                lower_limit: rests[j] + lower_offs[j],
                upper_limit: rests[j] + upper_offs[j],
                actuated: spec.actuated,
                max_torque: spec.max_torque,
            })
            .collect();

        Ok(BodyPlanInstance {
            kind: self.kind,
            elements,
            joints,
            root_angle: self.root_angle,
            density: self.density,
            contact_sensor_links: self.contact_sensor_links.clone(),
            forbidden_contact_links: self.forbidden_contact_links.clone(),
            torso: self.torso,
            morph_params: morph_params.to_vec(),
        })
    }
}

fn apply_scalar(default: f64, variation: Variation, t: f64) -> f64 {
    match variation {
        Variation::Percent(c) => default * (1.0 + c * t),
        Variation::Absolute(r) => default + r * t,
    }
}

fn angular_delta(joint: &JointSpec, variation: Variation, t: f64) -> f64 {
    match variation {
        Variation::Percent(c) => c * (joint.upper_offset - joint.lower_offset) * t,
        Variation::Absolute(r) => r * t,
    }
}

/// Concrete element after decoding.
#[derive(Debug, Clone)]
pub struct PlanElement {
    pub name: String,
    pub length: f64,
    pub radius: f64,
    pub mass: f64,
    pub parent: Option<usize>,
    pub attach: f64,
}

/// Concrete joint after decoding; limits are absolute joint coordinates.
#[derive(Debug, Clone)]
pub struct PlanJoint {
    pub name: String,
    pub rest_angle: f64,
    pub lower_limit: f64,
    pub upper_limit: f64,
    pub actuated: bool,
    pub max_torque: f64,
}

/// A fully concrete body, ready for assembly.
#[derive(Debug, Clone)]
pub struct BodyPlanInstance {
    pub kind: BauplanKind,
    pub elements: Vec<PlanElement>,
    pub joints: Vec<PlanJoint>,
    pub root_angle: f64,
    pub density: f64,
    pub contact_sensor_links: Vec<usize>,
    pub forbidden_contact_links: Vec<usize>,
    pub torso: usize,
    /// Provenance: the morphological vector this instance was decoded from.
    pub morph_params: Vec<f64>,
}

impl BodyPlanInstance {
    pub fn n_actuated(&self) -> usize {
        self.joints.iter().filter(|j| j.actuated).count()
    }
}

/// Flat genotype: morphological segment first, control segment after.
#[derive(Debug, Clone, PartialEq)]
pub struct Genotype {
    pub values: Vec<f64>,
    pub n_morph: usize,
    pub n_ctrl: usize,
}

impl Genotype {
    pub fn new(values: Vec<f64>, n_morph: usize, n_ctrl: usize) -> Result<Genotype, BauplanError> {
        if values.len() != n_morph + n_ctrl {
            return Err(BauplanError::GenotypeLength { expected: n_morph + n_ctrl, got: values.len() });
        }
        Ok(Genotype { values, n_morph, n_ctrl })
    }

    pub fn from_parts(morph: &[f64], ctrl: &[f64]) -> Genotype {
        let mut values = Vec::with_capacity(morph.len() + ctrl.len());
        values.extend_from_slice(morph);
        values.extend_from_slice(ctrl);
        Genotype { values, n_morph: morph.len(), n_ctrl: ctrl.len() }
    }

    /// Views of the morphological and control segments.
    pub fn split(&self) -> (&[f64], &[f64]) {
        self.values.split_at(self.n_morph)
    }
}

#[cfg(test)]
mod tests;
