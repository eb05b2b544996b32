use std::collections::BTreeMap;

use super::quad::{build_segment_quad, point_in_quad, Quad};
use super::{OcclusionError, OcclusionVector};
use crate::geometry::{dist2, Pose2D, SkeletonTopology};

/// How limb and head box half-widths are chosen.
#[derive(Debug, Clone, PartialEq)]
pub enum DeltaSpec {
    /// Each segment's `width_factor` times the pose's mean 2D bone length.
    Proportional,
    /// The same half-width, in pose units, for every segment.
    Absolute(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoxedManConfig {
    pub default_delta: DeltaSpec,
    /// Absolute half-widths keyed by segment name.
    pub per_segment_overrides: BTreeMap<String, f64>,
    pub include_torso: bool,
}

impl Default for BoxedManConfig {
    fn default() -> Self {
        Self {
            default_delta: DeltaSpec::Proportional,
            per_segment_overrides: BTreeMap::new(),
            include_torso: true,
        }
    }
}

impl BoxedManConfig {
    pub fn absolute(delta: f64) -> Result<Self, OcclusionError> {
        let cfg = Self {
            default_delta: DeltaSpec::Absolute(delta),
            ..Self::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), OcclusionError> {
        let bad = |d: f64| !(d > 0.0 && d.is_finite());
        if let DeltaSpec::Absolute(d) = self.default_delta {
            if bad(d) {
                return Err(OcclusionError::InvalidConfig(format!(
                    "delta must be positive, got {d}"
                )));
            }
        }
        if let Some((name, d)) = self.per_segment_overrides.iter().find(|(_, &d)| bad(d)) {
            return Err(OcclusionError::InvalidConfig(format!(
                "delta override for `{name}` must be positive, got {d}"
            )));
        }
        Ok(())
    }

    /// Copy with every absolute width multiplied by `s`.
    pub fn scaled(&self, s: f64) -> Self {
        Self {
            default_delta: match self.default_delta {
                DeltaSpec::Absolute(d) => DeltaSpec::Absolute(d * s),
                DeltaSpec::Proportional => DeltaSpec::Proportional,
            },
            per_segment_overrides: self
                .per_segment_overrides
                .iter()
                .map(|(k, v)| (k.clone(), v * s))
                .collect(),
            include_torso: self.include_torso,
        }
    }
}

/// A body-part box together with the joints that belong to it.
#[derive(Debug, Clone, PartialEq)]
pub struct Occluder {
    pub name: String,
    pub quad: Quad,
    /// Joints this occluder never hides (segment endpoints, torso corners and members).
    pub owners: Vec<usize>,
}

/// Mean parent→child distance of the 2D pose.
pub fn mean_bone_length_2d(pose: &Pose2D, topo: &SkeletonTopology) -> f64 {
    let (sum, count) = topo
        .bones()
        .fold((0.0, 0usize), |(s, c), (j, p)| {
            (s + dist2(pose.joints[j], pose.joints[p]), c + 1)
        });
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// Head box, limb boxes and (optionally) the torso quad for one pose.
pub fn build_occluders(
    pose: &Pose2D,
    topo: &SkeletonTopology,
    cfg: &BoxedManConfig,
) -> Result<Vec<Occluder>, OcclusionError> {
    if pose.len() != topo.joint_count {
        return Err(OcclusionError::JointCount {
            got: pose.len(),
            expected: topo.joint_count,
        });
    }
    cfg.validate()?;
    let bone = match cfg.default_delta {
        DeltaSpec::Proportional => mean_bone_length_2d(pose, topo),
        DeltaSpec::Absolute(_) => 0.0,
    };
    let mut out = Vec::with_capacity(topo.limb_segments.len() + 2);
    for seg in topo.segments() {
        let delta = match (cfg.per_segment_overrides.get(&seg.name), &cfg.default_delta) {
            (Some(&d), _) => d,
            (None, DeltaSpec::Absolute(d)) => *d,
            (None, DeltaSpec::Proportional) => seg.width_factor * bone,
        };
        let quad = build_segment_quad(pose.joints[seg.a], pose.joints[seg.b], delta).map_err(
            |_| OcclusionError::DegenerateSegment {
                segment: Some(seg.name.clone()),
            },
        )?;
        out.push(Occluder {
            name: seg.name.clone(),
            quad,
            owners: vec![seg.a, seg.b],
        });
    }
    if cfg.include_torso {
        let c = topo.torso_quad.corners;
        let quad = Quad::from_points(c.map(|j| pose.joints[j]));
        let mut owners: Vec<usize> = c.to_vec();
        owners.extend(&topo.torso_quad.members);
        out.push(Occluder {
            name: "torso".into(),
            quad,
            owners,
        });
    }
    Ok(out)
}

/// A joint is occluded when it lies inside (or on) any box it does not own.
pub fn boxed_man_occlusions(
    pose: &Pose2D,
    topo: &SkeletonTopology,
    cfg: &BoxedManConfig,
) -> Result<OcclusionVector, OcclusionError> {
    let occluders = build_occluders(pose, topo, cfg)?;
    let mut labels = OcclusionVector::zeros(pose.len());
    for (j, &p) in pose.joints.iter().enumerate() {
        let hidden = occluders
            .iter()
            .filter(|o| !o.owners.contains(&j))
            .any(|o| point_in_quad(p, &o.quad));
        if hidden {
            labels.set_occluded(j);
        }
    }
    Ok(labels)
}
