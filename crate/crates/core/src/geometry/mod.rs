//! Pinhole cameras, 3D→2D projection and root-relative pose normalization.

mod topology;

pub use topology::{LimbSegment, SkeletonTopology, TopologyError, TorsoQuad};

use thiserror::Error;

/// Points closer to the image plane than this are rejected by [`project`].
pub const MIN_DEPTH: f64 = 1e-9;

/// Orthonormality tolerance for camera rotations.
const ROTATION_TOL: f64 = 1e-9;

pub type Vec2 = [f64; 2];
pub type Vec3 = [f64; 3];
pub type Mat3 = [[f64; 3]; 3];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("joint {0} has non-positive depth after transform to the camera frame")]
    NonPositiveDepth(usize),
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
}

/// Which coordinate frame a [`Pose3D`] is expressed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Frame {
    World,
    Camera,
}

/// Pinhole camera without lens distortion.
///
/// `rotation` and `translation` map world points into the camera frame:
/// `p_cam = R * p_world + t`. The camera looks down +z with image v growing
/// along +y.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl CameraModel {
    pub fn new(
        focal: (f64, f64),
        principal_point: (f64, f64),
        rotation: Mat3,
        translation: Vec3,
    ) -> Result<Self, GeometryError> {
        let cam = Self {
            fx: focal.0,
            fy: focal.1,
            cx: principal_point.0,
            cy: principal_point.1,
            rotation,
            translation,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Camera with identity extrinsics, so world and camera frames coincide.
    pub fn intrinsics_only(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self, GeometryError> {
        Self::new((fx, fy), (cx, cy), IDENTITY3, [0.0; 3])
    }

    /// Camera placed at `eye` looking at `target`, with `up` roughly the world up axis.
    pub fn look_at(
        focal: (f64, f64),
        principal_point: (f64, f64),
        eye: Vec3,
        target: Vec3,
        up: Vec3,
    ) -> Result<Self, GeometryError> {
        let z = normalize3(sub3(target, eye))
            .ok_or_else(|| GeometryError::InvalidCamera("eye coincides with target".into()))?;
        // image y points down, so x = z × up gives a right-handed (x right, y down, z forward) frame
        let x = normalize3(cross3(z, up))
            .ok_or_else(|| GeometryError::InvalidCamera("up is parallel to the view axis".into()))?;
        let y = cross3(z, x);
        let rotation = [x, y, z];
        let r_eye = mat_vec(&rotation, eye);
        let translation = [-r_eye[0], -r_eye[1], -r_eye[2]];
        Self::new(focal, principal_point, rotation, translation)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(GeometryError::InvalidCamera(format!(
                "focal lengths must be positive, got ({}, {})",
                self.fx, self.fy
            )));
        }
        let finite = [self.fx, self.fy, self.cx, self.cy]
            .iter()
            .chain(self.rotation.iter().flatten())
            .chain(self.translation.iter())
            .all(|v| v.is_finite());
        if !finite {
            return Err(GeometryError::InvalidCamera("non-finite parameter".into()));
        }
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| self.rotation[k][i] * self.rotation[k][j]).sum();
                let expected = if i == j { 1.0 } else { 0.0 };
                if (dot - expected).abs() > ROTATION_TOL {
                    return Err(GeometryError::InvalidCamera(format!(
                        "rotation is not orthonormal (RᵀR[{i}][{j}] = {dot})"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn world_to_camera(&self, p: Vec3) -> Vec3 {
        let r = mat_vec(&self.rotation, p);
        [
            r[0] + self.translation[0],
            r[1] + self.translation[1],
            r[2] + self.translation[2],
        ]
    }

    /// Camera center in world coordinates (`-Rᵀ t`).
    pub fn center(&self) -> Vec3 {
        let t = self.translation;
        let r = &self.rotation;
        [
            -(r[0][0] * t[0] + r[1][0] * t[1] + r[2][0] * t[2]),
            -(r[0][1] * t[0] + r[1][1] * t[1] + r[2][1] * t[2]),
            -(r[0][2] * t[0] + r[1][2] * t[1] + r[2][2] * t[2]),
        ]
    }

    /// Maps pixel coordinates to roughly `[-1, 1]`, using the principal point
    /// as the image half-extent (aspect ratio preserved through `cx`).
    pub fn normalize_pixel(&self, uv: Vec2) -> Vec2 {
        [(uv[0] - self.cx) / self.cx, (uv[1] - self.cy) / self.cx]
    }

    /// Nominal image size `(width, height)` implied by a centered principal point.
    pub fn image_size(&self) -> (usize, usize) {
        (
            (2.0 * self.cx).round().max(1.0) as usize,
            (2.0 * self.cy).round().max(1.0) as usize,
        )
    }
}

pub const IDENTITY3: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

/// Per-frame 3D joint positions in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct Pose3D {
    pub joints: Vec<Vec3>,
}

/// Per-frame 2D joint positions, in pixels unless stated otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct Pose2D {
    pub joints: Vec<Vec2>,
}

impl Pose3D {
    pub fn new(joints: Vec<Vec3>) -> Self {
        Self { joints }
    }

    pub fn len(&self) -> usize {
        self.joints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joints.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.joints.iter().flatten().all(|v| v.is_finite())
    }

    pub fn to_camera(&self, cam: &CameraModel) -> Pose3D {
        Pose3D::new(self.joints.iter().map(|&p| cam.world_to_camera(p)).collect())
    }

    pub fn translated(&self, t: Vec3) -> Pose3D {
        Pose3D::new(self.joints.iter().map(|&p| add3(p, t)).collect())
    }
}

impl Pose2D {
    pub fn new(joints: Vec<Vec2>) -> Self {
        Self { joints }
    }

    pub fn len(&self) -> usize {
        self.joints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joints.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.joints.iter().flatten().all(|v| v.is_finite())
    }
}

/// Perspective projection `(u, v) = (fx·x/z + cx, fy·y/z + cy)` of every joint.
pub fn project(pose: &Pose3D, cam: &CameraModel, frame: Frame) -> Result<Pose2D, GeometryError> {
    let joints = pose
        .joints
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let [x, y, z] = match frame {
                Frame::World => cam.world_to_camera(p),
                Frame::Camera => p,
            };
            if !(z > MIN_DEPTH) {
                return Err(GeometryError::NonPositiveDepth(i));
            }
            Ok([cam.fx * x / z + cam.cx, cam.fy * y / z + cam.cy])
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Pose2D { joints })
}

/// Subtracts the root joint from every joint; the root lands exactly on the origin.
pub fn root_center(pose: &Pose3D, topo: &SkeletonTopology) -> Pose3D {
    root_center_at(pose, topo.root_index)
}

pub fn root_center_at(pose: &Pose3D, root: usize) -> Pose3D {
    let r = pose.joints[root];
    Pose3D::new(pose.joints.iter().map(|&p| sub3(p, r)).collect())
}

pub fn add3(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn sub3(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn scale3(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub fn dot3(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn norm3(a: Vec3) -> f64 {
    dot3(a, a).sqrt()
}

pub fn cross3(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn normalize3(a: Vec3) -> Option<Vec3> {
    let n = norm3(a);
    (n > 1e-12).then(|| scale3(a, 1.0 / n))
}

pub fn mat_vec(m: &Mat3, v: Vec3) -> Vec3 {
    [dot3(m[0], v), dot3(m[1], v), dot3(m[2], v)]
}

pub fn dist2(a: Vec2, b: Vec2) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cam1000() -> CameraModel {
        CameraModel::intrinsics_only(1000.0, 1000.0, 500.0, 500.0).unwrap()
    }

    #[test]
    fn optical_axis_maps_to_principal_point() {
        let p = project(&Pose3D::new(vec![[0.0, 0.0, 2.0]]), &cam1000(), Frame::Camera).unwrap();
        assert_eq!(p.joints[0], [500.0, 500.0]);
    }

    #[test]
    fn off_axis_point() {
        let p = project(&Pose3D::new(vec![[0.1, 0.0, 2.0]]), &cam1000(), Frame::Camera).unwrap();
        assert!((p.joints[0][0] - 550.0).abs() < 1e-12);
        assert_eq!(p.joints[0][1], 500.0);
    }

    #[test]
    fn rejects_points_behind_camera() {
        let pose = Pose3D::new(vec![[0.0, 0.0, 1.0], [0.0, 0.0, 0.0], [0.0, 0.0, -1.0]]);
        assert_eq!(
            project(&pose, &cam1000(), Frame::Camera),
            Err(GeometryError::NonPositiveDepth(1))
        );
    }

    #[test]
    fn world_projection_matches_matrix_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cam = CameraModel::look_at(
            (1145.0, 1143.8),
            (512.5, 515.4),
            [3.0, -4.0, 1.5],
            [0.0, 0.0, 1.0],
            [0.0, 0.0, 1.0],
        )
        .unwrap();
        // P = K [R | t]
        let k = [[cam.fx, 0.0, cam.cx], [0.0, cam.fy, cam.cy], [0.0, 0.0, 1.0]];
        let mut p34 = [[0.0; 4]; 3];
        for i in 0..3 {
            for j in 0..4 {
                p34[i][j] = (0..3)
                    .map(|m| {
                        k[i][m]
                            * if j < 3 {
                                cam.rotation[m][j]
                            } else {
                                cam.translation[m]
                            }
                    })
                    .sum();
            }
        }
        for _ in 0..1000 {
            let pose = Pose3D::new(
                (0..17)
                    .map(|_| {
                        [
                            rng.gen_range(-1.0..1.0),
                            rng.gen_range(-1.0..1.0),
                            rng.gen_range(0.0..2.0),
                        ]
                    })
                    .collect(),
            );
            let got = project(&pose, &cam, Frame::World).unwrap();
            for (p, uv) in pose.joints.iter().zip(&got.joints) {
                let h: Vec<f64> = (0..3)
                    .map(|i| p34[i][0] * p[0] + p34[i][1] * p[1] + p34[i][2] * p[2] + p34[i][3])
                    .collect();
                assert!((uv[0] - h[0] / h[2]).abs() < 1e-9);
                assert!((uv[1] - h[1] / h[2]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn look_at_puts_target_on_optical_axis() {
        let cam = CameraModel::look_at(
            (1000.0, 1000.0),
            (500.0, 500.0),
            [5.0, 2.0, 1.2],
            [0.0, 0.0, 1.0],
            [0.0, 0.0, 1.0],
        )
        .unwrap();
        let p = project(&Pose3D::new(vec![[0.0, 0.0, 1.0]]), &cam, Frame::World).unwrap();
        assert!((p.joints[0][0] - 500.0).abs() < 1e-9);
        assert!((p.joints[0][1] - 500.0).abs() < 1e-9);
        let c = cam.center();
        assert!(norm3(sub3(c, [5.0, 2.0, 1.2])) < 1e-12);
        // world up projects upward in the image
        let up = project(&Pose3D::new(vec![[0.0, 0.0, 1.5]]), &cam, Frame::World).unwrap();
        assert!(up.joints[0][1] < 500.0);
    }

    #[test]
    fn rejects_non_orthonormal_rotation() {
        let mut r = IDENTITY3;
        r[0][0] = 1.01;
        assert!(CameraModel::new((1.0, 1.0), (0.0, 0.0), r, [0.0; 3]).is_err());
        assert!(CameraModel::new((0.0, 1.0), (0.0, 0.0), IDENTITY3, [0.0; 3]).is_err());
    }

    #[test]
    fn root_center_basics() {
        let topo = SkeletonTopology::humaneva15();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pose = Pose3D::new((0..15).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect());
        let c = root_center(&pose, &topo);
        assert_eq!(c.joints[topo.root_index], [0.0, 0.0, 0.0]);
        for i in 0..15 {
            for j in 0..15 {
                let a = sub3(pose.joints[i], pose.joints[j]);
                let b = sub3(c.joints[i], c.joints[j]);
                assert!(norm3(sub3(a, b)) < 1e-12);
            }
        }
        assert_eq!(root_center(&c, &topo), c);
        let shifted = root_center(&pose.translated([1.0, 2.0, 3.0]), &topo);
        for (a, b) in shifted.joints.iter().zip(&c.joints) {
            assert!(norm3(sub3(*a, *b)) < 1e-12);
        }
    }
}
