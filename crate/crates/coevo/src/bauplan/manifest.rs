//! TOML manifest for hand-designed bauplans and chain defaults.
//!
//! The manifest is data, not code: the walker's and halfcheetah's segment
//! dimensions, joint ranges and the composition of their morphological
//! encodings can be audited and changed without touching the decoder. The
//! copy shipped with the crate is embedded at compile time; an alternative
//! file can be loaded at startup with [`BauplanSet::from_str`] /
//! [`BauplanSet::from_path`].

use std::path::Path;

use serde::Deserialize;

use super::{
    BauplanError, BauplanKind, BauplanTemplate, ElementSpec, JointSpec, MorphParamSpec, MorphProperty, TargetRef,
    Variation,
};

const BUILTIN: &str = include_str!("../../data/bauplans.toml");

/// The embedded manifest text (schema documented inline).
pub fn builtin_manifest_str() -> &'static str {
    BUILTIN
}

#[derive(Debug, Deserialize)]
struct ManifestFile {
    #[allow(dead_code)]
    schema: u32,
    chain: ChainDefaults,
    #[serde(rename = "bauplan")]
    bauplans: Vec<BauplanEntry>,
}

#[derive(Debug, Clone, Deserialize)]
struct ChainDefaults {
    element_length: f64,
    element_radius: f64,
    length_range: f64,
    radius_range: f64,
    rest_angle_range: f64,
    limit_offset_range: f64,
    max_torque: f64,
    density: f64,
}

#[derive(Debug, Deserialize)]
struct BauplanEntry {
    kind: String,
    root_angle: f64,
    density: f64,
    torso: String,
    contact_sensors: Vec<String>,
    #[serde(default)]
    forbidden_contacts: Vec<String>,
    #[serde(rename = "element")]
    elements: Vec<ElementEntry>,
    #[serde(rename = "joint")]
    joints: Vec<JointEntry>,
    #[serde(rename = "morph")]
    morphs: Vec<MorphEntry>,
}

#[derive(Debug, Deserialize)]
struct ElementEntry {
    name: String,
    length: f64,
    radius: f64,
    parent: Option<String>,
    attach: Option<f64>,
}

#[derive(Debug, Deserialize)]
struct JointEntry {
    name: String,
    child: String,
    rest: f64,
    lower: f64,
    upper: f64,
    actuated: bool,
    max_torque: f64,
}

#[derive(Debug, Deserialize)]
struct MorphEntry {
    name: String,
    property: MorphProperty,
    targets: Vec<String>,
    percent: Option<f64>,
    range: Option<f64>,
}

/// Parsed manifest; hands out templates by kind.
#[derive(Debug)]
pub struct BauplanSet {
    chain: ChainDefaults,
    templates: Vec<BauplanTemplate>,
}

impl BauplanSet {
    pub fn builtin() -> BauplanSet {
        BauplanSet::from_str(BUILTIN).expect("embedded bauplan manifest is valid")
    }

    #[allow(clippy::should_implement_trait)]
    pub fn from_str(text: &str) -> Result<BauplanSet, BauplanError> {
        let file: ManifestFile = toml::from_str(text).map_err(|e| BauplanError::Manifest(e.to_string()))?;
        let templates = file
            .bauplans
            .iter()
            .map(build_template)
            .collect::<Result<Vec<_>, _>>()?;
        Ok(BauplanSet { chain: file.chain, templates })
    }

    pub fn from_path(path: &Path) -> Result<BauplanSet, BauplanError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BauplanError::Manifest(format!("{}: {e}", path.display())))?;
        BauplanSet::from_str(&text)
    }

    pub fn template(&self, kind: BauplanKind) -> Result<BauplanTemplate, BauplanError> {
        match kind {
            BauplanKind::Chain(n) => self.chain_template(n),
            _ => self
                .templates
                .iter()
                .find(|t| t.kind == kind)
                .cloned()
                .ok_or_else(|| BauplanError::UnknownKind(kind.name())),
        }
    }

    /// Synthesize a chain of `n` identical elements joined end to end.
    /// Morph layout: (length, radius) per element, then
    /// (rest angle, clockwise limit, anticlockwise limit) per joint.
    fn chain_template(&self, n: usize) -> Result<BauplanTemplate, BauplanError> {
        if n < 2 {
            return Err(BauplanError::ChainTooShort(n));
        }
        let d = &self.chain;
        let mut elements = Vec::with_capacity(n);
        let mut joints = Vec::with_capacity(n - 1);
        for i in 0..n {
            elements.push(ElementSpec {
                name: format!("seg{i}"),
                length: d.element_length,
                radius: d.element_radius,
                parent: if i == 0 { None } else { Some(i - 1) },
                attach: 1.0,
            });
            if i > 0 {
                joints.push(JointSpec {
                    name: format!("joint{i}"),
                    rest_angle: 0.0,
                    lower_offset: 0.0,
                    upper_offset: 0.0,
                    actuated: true,
                    max_torque: d.max_torque,
                });
            }
        }

        let mut morph_specs = Vec::with_capacity(2 * n + 3 * (n - 1));
        for i in 0..n {
            morph_specs.push(MorphParamSpec {
                name: format!("seg{i}_length"),
                property: MorphProperty::Length,
                targets: vec![TargetRef::Element(i)],
                variation: Variation::Absolute(d.length_range),
                default_value: d.element_length,
                min_offset: -d.length_range,
                max_offset: d.length_range,
            });
            morph_specs.push(MorphParamSpec {
                name: format!("seg{i}_radius"),
                property: MorphProperty::Radius,
                targets: vec![TargetRef::Element(i)],
                variation: Variation::Absolute(d.radius_range),
                default_value: d.element_radius,
                min_offset: -d.radius_range,
                max_offset: d.radius_range,
            });
        }
        for j in 0..n - 1 {
            morph_specs.push(MorphParamSpec {
                name: format!("joint{}_rest", j + 1),
                property: MorphProperty::RestAngle,
                targets: vec![TargetRef::Joint(j)],
                variation: Variation::Absolute(d.rest_angle_range),
                default_value: 0.0,
                min_offset: -d.rest_angle_range,
                max_offset: d.rest_angle_range,
            });
            morph_specs.push(MorphParamSpec {
                name: format!("joint{}_cw_limit", j + 1),
                property: MorphProperty::LowerLimitOffset,
                targets: vec![TargetRef::Joint(j)],
                variation: Variation::Absolute(d.limit_offset_range),
                default_value: 0.0,
                min_offset: -d.limit_offset_range,
                max_offset: 0.0,
            });
            morph_specs.push(MorphParamSpec {
                name: format!("joint{}_acw_limit", j + 1),
                property: MorphProperty::UpperLimitOffset,
                targets: vec![TargetRef::Joint(j)],
                variation: Variation::Absolute(d.limit_offset_range),
                default_value: 0.0,
                min_offset: 0.0,
                max_offset: d.limit_offset_range,
            });
        }

        Ok(BauplanTemplate {
            kind: BauplanKind::Chain(n),
            elements,
            joints,
            morph_specs,
            root_angle: 0.0,
            density: d.density,
            contact_sensor_links: (0..n).collect(),
            forbidden_contact_links: Vec::new(),
            torso: 0,
        })
    }
}

fn build_template(entry: &BauplanEntry) -> Result<BauplanTemplate, BauplanError> {
    let kind = BauplanKind::parse(&entry.kind)?;
    let err = |msg: String| BauplanError::Manifest(format!("{}: {msg}", entry.kind));

    let find_element = |name: &str| -> Result<usize, BauplanError> {
        entry
            .elements
            .iter()
            .position(|e| e.name == name)
            .ok_or_else(|| err(format!("unknown element `{name}`")))
    };

    let mut elements = Vec::with_capacity(entry.elements.len());
    for (i, e) in entry.elements.iter().enumerate() {
        let parent = match &e.parent {
            None => {
                if i != 0 {
                    return Err(err(format!("element `{}` has no parent but is not first", e.name)));
                }
                None
            }
            Some(p) => {
                let pi = find_element(p)?;
                if pi >= i {
                    return Err(err(format!("element `{}` must come after its parent", e.name)));
                }
                Some(pi)
            }
        };
        elements.push(ElementSpec {
            name: e.name.clone(),
            length: e.length,
            radius: e.radius,
            parent,
            attach: e.attach.unwrap_or(1.0),
        });
    }

    // one joint per non-root element, bound by child name, kept in element order
    let mut joints = Vec::with_capacity(elements.len().saturating_sub(1));
    for el in &entry.elements[1..] {
        let row = entry
            .joints
            .iter()
            .find(|j| j.child == el.name)
            .ok_or_else(|| err(format!("element `{}` has no joint row", el.name)))?;
        if row.lower > 0.0 || row.upper < 0.0 {
            return Err(err(format!("joint `{}` offsets must straddle zero", row.name)));
        }
        joints.push(JointSpec {
            name: row.name.clone(),
            rest_angle: row.rest,
            lower_offset: row.lower,
            upper_offset: row.upper,
            actuated: row.actuated,
            max_torque: row.max_torque,
        });
    }
    if joints.len() != entry.joints.len() {
        return Err(err("joint rows do not match elements one-to-one".to_string()));
    }

    let find_joint = |name: &str| -> Result<usize, BauplanError> {
        joints
            .iter()
            .position(|j| j.name == name)
            .ok_or_else(|| err(format!("unknown joint `{name}`")))
    };

    let mut morph_specs = Vec::with_capacity(entry.morphs.len());
    for m in &entry.morphs {
        let variation = match (m.percent, m.range) {
            (Some(c), None) => Variation::Percent(c),
            (None, Some(r)) => Variation::Absolute(r),
            _ => return Err(err(format!("morph `{}` needs exactly one of `percent`/`range`", m.name))),
        };
        let is_element_prop = matches!(m.property, MorphProperty::Length | MorphProperty::Radius);
        let mut targets = Vec::with_capacity(m.targets.len());
        for t in &m.targets {
            targets.push(if is_element_prop {
                TargetRef::Element(find_element(t)?)
            } else {
                TargetRef::Joint(find_joint(t)?)
            });
        }
        if targets.is_empty() {
            return Err(err(format!("morph `{}` has no targets", m.name)));
        }

        let (default_value, min_offset, max_offset) = match (m.property, targets[0]) {
            (MorphProperty::Length, TargetRef::Element(e)) | (MorphProperty::Radius, TargetRef::Element(e)) => {
                let d = if m.property == MorphProperty::Length { elements[e].length } else { elements[e].radius };
                match variation {
                    Variation::Percent(c) => (d, -c * d, c * d),
                    Variation::Absolute(r) => (d, -r, r),
                }
            }
            (_, TargetRef::Joint(j)) => {
                let joint = &joints[j];
                let span = joint.upper_offset - joint.lower_offset;
                let d = match m.property {
                    MorphProperty::RestAngle => joint.rest_angle,
                    MorphProperty::LowerLimitOffset => joint.lower_offset,
                    MorphProperty::UpperLimitOffset => joint.upper_offset,
                    _ => unreachable!(),
                };
                match variation {
                    Variation::Percent(c) => (d, -c * span, c * span),
                    Variation::Absolute(r) => (d, -r, r),
                }
            }
            _ => return Err(err(format!("morph `{}` targets the wrong kind", m.name))),
        };

        morph_specs.push(MorphParamSpec {
            name: m.name.clone(),
            property: m.property,
            targets,
            variation,
            default_value,
            min_offset,
            max_offset,
        });
    }

    let torso = find_element(&entry.torso)?;
    let contact_sensor_links = entry
        .contact_sensors
        .iter()
        .map(|n| find_element(n))
        .collect::<Result<Vec<_>, _>>()?;
    let forbidden_contact_links = entry
        .forbidden_contacts
        .iter()
        .map(|n| find_element(n))
        .collect::<Result<Vec<_>, _>>()?;

    Ok(BauplanTemplate {
        kind,
        elements,
        joints,
        morph_specs,
        root_angle: entry.root_angle,
        density: entry.density,
        contact_sensor_links,
        forbidden_contact_links,
        torso,
    })
}
