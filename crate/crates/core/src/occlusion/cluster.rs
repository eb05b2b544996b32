use super::{OcclusionError, OcclusionVector};
use crate::geometry::Pose3D;

/// Depths closer than this are treated as a tie; the lower joint index wins.
pub const DEPTH_TIE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterConfig {
    /// Planar (x, y) neighborhood radius, in the pose's units.
    pub epsilon: f64,
    /// Merge overlapping neighborhoods into connected clusters instead of
    /// judging each joint's own neighborhood.
    pub transitive: bool,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.06,
            transitive: false,
        }
    }
}

impl ClusterConfig {
    pub fn new(epsilon: f64) -> Result<Self, OcclusionError> {
        let cfg = Self {
            epsilon,
            ..Self::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), OcclusionError> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(OcclusionError::InvalidConfig(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// Labels every joint that is not the nearest-to-camera member of some
/// planar ε-neighborhood it belongs to.
///
/// For each joint `i`, `S_i = {i} ∪ {j : |xy_i − xy_j| < ε}`; the member of
/// `S_i` with minimal z stays visible and the rest of `S_i` is marked
/// occluded.
pub fn cluster_occlusions(pose: &Pose3D, cfg: &ClusterConfig) -> OcclusionVector {
    if cfg.transitive {
        return cluster_occlusions_transitive(pose, cfg.epsilon);
    }
    let n = pose.len();
    let joints = &pose.joints;
    let mut labels = OcclusionVector::zeros(n);
    // sweep over x so each neighborhood scan stays inside the ε slab
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| joints[a][0].total_cmp(&joints[b][0]).then(a.cmp(&b)));
    let mut members = Vec::with_capacity(n);
    for (rank, &i) in order.iter().enumerate() {
        let xi = joints[i][0];
        members.clear();
        members.push(i);
        for &j in order[..rank].iter().rev() {
            if xi - joints[j][0] >= cfg.epsilon {
                break;
            }
            if within(joints[i], joints[j], cfg.epsilon) {
                members.push(j);
            }
        }
        for &j in &order[rank + 1..] {
            if joints[j][0] - xi >= cfg.epsilon {
                break;
            }
            if within(joints[i], joints[j], cfg.epsilon) {
                members.push(j);
            }
        }
        if members.len() < 2 {
            continue;
        }
        let visible = nearest(pose, &members);
        for &j in &members {
            if j != visible {
                labels.set_occluded(j);
            }
        }
    }
    labels
}

fn within(a: [f64; 3], b: [f64; 3], eps: f64) -> bool {
    (a[0] - b[0]).hypot(a[1] - b[1]) < eps
}

/// Smallest depth; among depths within the tie tolerance of the minimum,
/// the lowest index.
fn nearest(pose: &Pose3D, members: &[usize]) -> usize {
    let zmin = members
        .iter()
        .map(|&j| pose.joints[j][2])
        .fold(f64::INFINITY, f64::min);
    members
        .iter()
        .copied()
        .filter(|&j| pose.joints[j][2] <= zmin + DEPTH_TIE_TOL)
        .min()
        .expect("non-empty cluster")
}

fn cluster_occlusions_transitive(pose: &Pose3D, eps: f64) -> OcclusionVector {
    let n = pose.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for i in 0..n {
        for j in i + 1..n {
            if within(pose.joints[i], pose.joints[j], eps) {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    parent[ri.max(rj)] = ri.min(rj);
                }
            }
        }
    }
    let mut labels = OcclusionVector::zeros(n);
    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for j in 0..n {
        let r = find(&mut parent, j);
        groups.entry(r).or_default().push(j);
    }
    for members in groups.values().filter(|m| m.len() > 1) {
        let visible = nearest(pose, members);
        for &j in members {
            if j != visible {
                labels.set_occluded(j);
            }
        }
    }
    labels
}
