//! Kinematic walking figure on a circular path, filmed by a fixed camera.
//!
//! The torso and head form one rigid body; legs and arms hang off it as
//! two-link chains with fixed segment lengths, so every bone of either
//! preset topology keeps its length exactly. Walking around the circle
//! turns the body relative to the camera, cycling through frontal, profile
//! and rear views, and the forward-swinging forearm sweeps across the chest.

use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{DataError, MotionSequence};
use crate::geometry::{add3, normalize3, scale3, CameraModel, Pose3D, SkeletonTopology, Vec3};

#[derive(Debug, Clone, PartialEq)]
pub struct Gait {
    /// Distance covered per full gait cycle.
    pub stride_m: f64,
    pub cadence_hz: f64,
    pub arm_swing_rad: f64,
    pub hip_sway_m: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CameraOrbit {
    /// Camera distance from the center of the walking circle.
    pub radius_m: f64,
    pub height_m: f64,
    /// Angular speed of the walker around the circle, rad/s.
    pub angular_speed: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_frames: usize,
    pub fps: f64,
    pub gait: Gait,
    pub camera_orbit: CameraOrbit,
    pub topology: String,
    pub subject: String,
    pub action: String,
    pub camera_id: String,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_frames: 2000,
            fps: 50.0,
            gait: Gait {
                stride_m: 1.4,
                cadence_hz: 0.9,
                arm_swing_rad: 0.6,
                hip_sway_m: 0.03,
            },
            camera_orbit: CameraOrbit {
                radius_m: 7.0,
                height_m: 1.2,
                angular_speed: 0.5,
            },
            topology: "h36m17".into(),
            subject: "S1".into(),
            action: "Walking".into(),
            camera_id: "C1".into(),
        }
    }
}

pub const FOCAL_PX: f64 = 1000.0;
pub const PRINCIPAL_PX: f64 = 500.0;

impl SynthConfig {
    pub fn path_radius(&self) -> f64 {
        self.gait.stride_m * self.gait.cadence_hz / self.camera_orbit.angular_speed
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let g = &self.gait;
        let o = &self.camera_orbit;
        let positive = [
            ("fps", self.fps),
            ("stride_m", g.stride_m),
            ("cadence_hz", g.cadence_hz),
            ("arm_swing_rad", g.arm_swing_rad),
            ("hip_sway_m", g.hip_sway_m),
            ("radius_m", o.radius_m),
            ("height_m", o.height_m),
            ("angular_speed", o.angular_speed),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(DataError::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        if self.n_frames == 0 {
            return Err(DataError::InvalidConfig("n_frames must be ≥ 1".into()));
        }
        if o.radius_m < self.path_radius() + 1.5 {
            return Err(DataError::InvalidConfig(format!(
                "camera radius {} m is too close to the {:.2} m walking circle",
                o.radius_m,
                self.path_radius()
            )));
        }
        Ok(())
    }
}

/// Joint names the body model can place.
const MODEL_JOINTS: [&str; 17] = [
    "pelvis", "r_hip", "r_knee", "r_ankle", "l_hip", "l_knee", "l_ankle", "spine", "thorax",
    "neck", "head", "l_shoulder", "l_elbow", "l_wrist", "r_shoulder", "r_elbow", "r_wrist",
];

struct Body {
    scale: f64,
    thigh: f64,
    shin: f64,
    upper_arm: f64,
    forearm: f64,
}

impl Body {
    fn new(scale: f64) -> Self {
        Self {
            scale,
            thigh: 0.44 * scale,
            shin: 0.43 * scale,
            upper_arm: 0.29 * scale,
            forearm: 0.26 * scale,
        }
    }

    /// Rigid torso points in the body frame (x forward, y left, z up).
    fn torso(&self, name: &str) -> Option<Vec3> {
        let p = match name {
            "pelvis" => [0.0, 0.0, 0.0],
            "r_hip" => [0.0, -0.11, 0.0],
            "l_hip" => [0.0, 0.11, 0.0],
            "spine" => [0.01, 0.0, 0.22],
            "thorax" => [0.02, 0.0, 0.46],
            "neck" => [0.02, 0.0, 0.56],
            "head" => [0.06, 0.0, 0.70],
            "l_shoulder" => [0.0, 0.18, 0.48],
            "r_shoulder" => [0.0, -0.18, 0.48],
            _ => return None,
        };
        Some(scale3(p, self.scale))
    }

    /// All model joints in the body frame at gait phase `phase`.
    fn pose(&self, phase: f64, gait: &Gait) -> Vec<(&'static str, Vec3)> {
        let mut out: Vec<(&'static str, Vec3)> = MODEL_JOINTS
            .iter()
            .filter_map(|&n| self.torso(n).map(|p| (n, p)))
            .collect();
        let leg = self.thigh + self.shin;
        let hip_amp = (gait.stride_m / (4.0 * leg)).min(0.9).asin();
        for (side, sign, offset) in [("l", 1.0, 0.0), ("r", -1.0, PI)] {
            let pl = phase + offset;
            let hip = self.torso(&format!("{side}_hip")).expect("model joint");
            let theta = hip_amp * pl.sin();
            let knee_flex = 0.15 + 0.55 * (pl + PI / 2.0).sin().max(0.0);
            let knee = add3(hip, scale3([theta.sin(), 0.0, -theta.cos()], self.thigh));
            let shin_pitch = theta - knee_flex;
            let ankle = add3(knee, scale3([shin_pitch.sin(), 0.0, -shin_pitch.cos()], self.shin));

            // arms swing against the leg on the same side
            let pa = pl + PI;
            let alpha = gait.arm_swing_rad * pa.sin();
            let shoulder = self.torso(&format!("{side}_shoulder")).expect("model joint");
            let upper = normalize3([alpha.sin(), sign * 0.08, -alpha.cos()]).expect("nonzero");
            let elbow = add3(shoulder, scale3(upper, self.upper_arm));
            let beta = alpha + 0.35 + 0.45 * (0.5 + 0.5 * pa.sin());
            let across = 0.9 * pa.sin().max(0.0);
            let fore = normalize3([beta.sin(), -sign * across, -beta.cos()]).expect("nonzero");
            let wrist = add3(elbow, scale3(fore, self.forearm));

            let names: [&'static str; 4] = if side == "l" {
                ["l_knee", "l_ankle", "l_elbow", "l_wrist"]
            } else {
                ["r_knee", "r_ankle", "r_elbow", "r_wrist"]
            };
            out.extend(names.into_iter().zip([knee, ankle, elbow, wrist]));
        }
        out
    }
}

fn rot_z(yaw: f64, p: Vec3) -> Vec3 {
    let (s, c) = yaw.sin_cos();
    [c * p[0] - s * p[1], s * p[0] + c * p[1], p[2]]
}

fn rot_x(roll: f64, p: Vec3) -> Vec3 {
    let (s, c) = roll.sin_cos();
    [p[0], c * p[1] - s * p[2], s * p[1] + c * p[2]]
}

/// One seeded walking sequence in world coordinates (Z up).
pub fn synth_walk(cfg: &SynthConfig) -> Result<MotionSequence, DataError> {
    cfg.validate()?;
    let topo = SkeletonTopology::preset(&cfg.topology)?;
    let slots = topo
        .joint_names
        .iter()
        .map(|n| {
            MODEL_JOINTS.iter().position(|m| m == n).ok_or_else(|| {
                DataError::InvalidConfig(format!(
                    "the walking model has no joint named {n:?} (topology {})",
                    topo.name
                ))
            })
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let body = Body::new(rng.gen_range(0.92..1.08));
    let phase0 = rng.gen_range(0.0..TAU);
    let path0 = rng.gen_range(0.0..TAU);
    let turn = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    let cam_azimuth = rng.gen_range(0.0..TAU);

    let orbit = &cfg.camera_orbit;
    let eye = [
        orbit.radius_m * cam_azimuth.cos(),
        orbit.radius_m * cam_azimuth.sin(),
        orbit.height_m,
    ];
    let camera = CameraModel::look_at(
        (FOCAL_PX, FOCAL_PX),
        (PRINCIPAL_PX, PRINCIPAL_PX),
        eye,
        [0.0, 0.0, 0.9 * body.scale],
        [0.0, 0.0, 1.0],
    )?;

    let radius = cfg.path_radius();
    let pelvis_height = 0.97 * (body.thigh + body.shin);
    let frames = (0..cfg.n_frames)
        .map(|f| {
            let t = f as f64 / cfg.fps;
            let phase = phase0 + TAU * cfg.gait.cadence_hz * t;
            let ang = path0 + turn * orbit.angular_speed * t;
            let heading = ang + turn * PI / 2.0;
            let left = [-heading.sin(), heading.cos(), 0.0];
            let sway = cfg.gait.hip_sway_m * phase.sin();
            let origin = [
                radius * ang.cos() + sway * left[0],
                radius * ang.sin() + sway * left[1],
                pelvis_height + 0.015 * (2.0 * phase).cos(),
            ];
            let roll = 0.04 * phase.sin();
            let local = body.pose(phase, &cfg.gait);
            let world: Vec<Vec3> = local
                .iter()
                .map(|(_, p)| add3(origin, rot_z(heading, rot_x(roll, *p))))
                .collect();
            let by_model: Vec<Vec3> = MODEL_JOINTS
                .iter()
                .map(|m| world[local.iter().position(|(n, _)| n == m).expect("placed")])
                .collect();
            Pose3D::new(slots.iter().map(|&s| by_model[s]).collect())
        })
        .collect();

    Ok(MotionSequence {
        frames,
        fps: cfg.fps,
        subject: cfg.subject.clone(),
        action: cfg.action.clone(),
        camera_id: cfg.camera_id.clone(),
        camera,
        topology: topo.name.clone(),
        first_frame: 0,
        joints2d: None,
        occ: None,
    })
}

/// `subjects` sequences named `S1..`, each with its own proportions,
/// path and camera placement derived from `cfg.seed`.
pub fn synth_corpus(cfg: &SynthConfig, subjects: usize) -> Result<Vec<MotionSequence>, DataError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    (0..subjects)
        .map(|k| {
            let sub = SynthConfig {
                seed: rng.gen(),
                subject: format!("S{}", k + 1),
                ..cfg.clone()
            };
            synth_walk(&sub)
        })
        .collect()
}
